"""Shared test fixtures and independent oracles.

Every oracle here deliberately avoids the implementation path it checks:
dense matrices are assembled entry by entry, QPs are enumerated or solved
by a different algorithm, and reductions run in plain loops.
"""

from __future__ import annotations

import itertools

import numpy as np

from hsiclass import HyperCube, LabelMap


# ---------------------------------------------------------------------------
# synthetic data

def synthetic_scene(
    height: int = 32,
    width: int = 32,
    bands: int = 8,
    num_classes: int = 4,
    separation: float = 1.0,
    noise: float = 0.45,
    seed: int = 0,
) -> tuple[HyperCube, LabelMap]:
    """Blocky label map with Gaussian class spectra around overlapping means."""
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, bands))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    means *= separation

    labels = np.zeros((height, width), dtype=np.int64)
    blocks_per_side = int(np.ceil(np.sqrt(num_classes)))
    bh = max(1, height // blocks_per_side)
    bw = max(1, width // blocks_per_side)
    k = 0
    for bi in range(blocks_per_side):
        for bj in range(blocks_per_side):
            labels[bi * bh : (bi + 1) * bh if bi < blocks_per_side - 1 else height,
                   bj * bw : (bj + 1) * bw if bj < blocks_per_side - 1 else width] = (k % num_classes) + 1
            k += 1

    data = means[labels - 1].transpose(2, 0, 1) + noise * rng.normal(size=(bands, height, width))
    return HyperCube(height, width, bands, data), LabelMap(height, width, labels)


# ---------------------------------------------------------------------------
# dense periodic difference operators

def dense_gradient_matrices(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Explicit forward-difference matrices with periodic wrap, one entry at a time."""
    n = height * width
    Dx = np.zeros((n, n))
    Dy = np.zeros((n, n))
    for i in range(height):
        for j in range(width):
            r = i * width + j
            Dx[r, i * width + (j + 1) % width] += 1.0
            Dx[r, r] -= 1.0
            Dy[r, ((i + 1) % height) * width + j] += 1.0
            Dy[r, r] -= 1.0
    return Dx, Dy


def dense_solve_oracle(v, s, w, lam1, lam2, beta2, mu) -> np.ndarray:
    """Assemble (I + beta2 D^T D + mu E^T E) u = v + mu E^T(g + lambda) and solve densely."""
    h, w_ = v.shape
    n = h * w_
    Dx, Dy = dense_gradient_matrices(h, w_)
    D = np.vstack([Dx, Dy])
    E = np.vstack([D, np.eye(n)])
    A = np.eye(n) + beta2 * (D.T @ D) + mu * (E.T @ E)
    g = np.concatenate([s[0].ravel(), s[1].ravel(), w.ravel()])
    lam = np.concatenate([lam1[0].ravel(), lam1[1].ravel(), lam2.ravel()])
    b = v.ravel() + mu * (E.T @ (g + lam))
    return np.linalg.solve(A, b).reshape(h, w_)


def restoration_objective_loops(u, v, beta1, beta2) -> float:
    """Objective evaluated with explicit scalar loops (wrap-around differences)."""
    h, w = u.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            total += 0.5 * (u[i, j] - v[i, j]) ** 2
            dx = u[i, (j + 1) % w] - u[i, j]
            dy = u[(i + 1) % h, j] - u[i, j]
            total += beta1 * (abs(dx) + abs(dy))
            total += 0.5 * beta2 * (dx * dx + dy * dy)
    return total


# ---------------------------------------------------------------------------
# projected proximal-gradient oracle for the restoration problem

def proximal_gradient_restore(
    v: np.ndarray,
    mask: np.ndarray,
    beta1: float,
    beta2: float,
    iterations: int = 100_000,
) -> np.ndarray:
    """Independent minimizer of the constrained restoration objective.

    Works on the dual: with F(u) = 1/2||u - v||^2 + (pinned pixels) and
    G(q) = beta1|q| + beta2 q^2/2 applied to Du, the dual objective
    F*(-D^T q) + G*(q) is smooth plus a closed-form prox, so accelerated
    proximal-gradient steps apply directly; the primal iterate is
    u = v - P_free D^T q.  Uses a dense D assembled independently.
    """
    h, w = v.shape
    n = h * w
    Dx, Dy = dense_gradient_matrices(h, w)
    D = np.vstack([Dx, Dy])
    DT = np.ascontiguousarray(D.T)
    free = ~mask.ravel()
    vflat = v.ravel()
    L = 8.0  # ||D||^2 for the periodic forward-difference stencil
    step = 1.0 / L

    def prox_conjugate(z, t):
        # componentwise argmin_y (y - z)^2/2 + t * g*(y), g = beta1|.| + beta2 .^2/2
        if beta2 > 0:
            inside = np.abs(z) <= beta1
            moved = np.sign(z) * (beta2 * np.abs(z) + t * beta1) / (beta2 + t)
            return np.where(inside, z, moved)
        return np.clip(z, -beta1, beta1)

    q = np.zeros(2 * n)
    y = q.copy()
    tk = 1.0
    still = 0
    for it in range(1, iterations + 1):
        u = vflat - free * (DT @ y)
        grad = -(D @ u)
        q_new = prox_conjugate(y - step * grad, step)
        tk_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        y = q_new + ((tk - 1.0) / tk_new) * (q_new - q)
        # numerically stationary for a sustained stretch = converged
        still = still + 1 if np.max(np.abs(q_new - q)) < 1e-14 else 0
        q, tk = q_new, tk_new
        if still >= 20:
            break
        if it % 200 == 0:  # momentum restart: linear late-stage convergence
            tk = 1.0
            y = q.copy()
    u = vflat - free * (DT @ q)
    return u.reshape(h, w)


# ---------------------------------------------------------------------------
# coupling oracles

def coupling_objective(R: np.ndarray, P: np.ndarray) -> np.ndarray:
    """1/2 sum_i sum_{j != i} (r_ji p_i - r_ij p_j)^2 for each row of P."""
    c = R.shape[0]
    P = np.atleast_2d(P)
    total = np.zeros(P.shape[0])
    for i in range(c):
        for j in range(c):
            if i == j:
                continue
            total += 0.5 * (R[j, i] * P[:, i] - R[i, j] * P[:, j]) ** 2
    return total


def simplex_grid(c: int, steps: int) -> np.ndarray:
    """All probability vectors with entries k/steps summing to 1."""
    if c == 2:
        a = np.arange(steps + 1)
        return np.column_stack([a, steps - a]) / steps
    if c == 3:
        pts = []
        for i in range(steps + 1):
            j = np.arange(steps - i + 1)
            pts.append(np.column_stack([np.full(len(j), i), j, steps - i - j]))
        return np.concatenate(pts) / steps
    raise NotImplementedError("full grids are only tractable for c <= 3")


def coupling_grid_oracle(R: np.ndarray, resolution: float = 1e-3) -> np.ndarray:
    """Exhaustive simplex-grid minimizer of the coupling objective."""
    c = R.shape[0]
    grid = simplex_grid(c, int(round(1.0 / resolution)))
    vals = coupling_objective(R, grid)
    return grid[int(vals.argmin())]


def coupling_lattice_oracle(R: np.ndarray, h0: float = 1 / 16, h_min: float = 2.5e-4) -> np.ndarray:
    """Refining lattice descent on the simplex (moves along e_i - e_j).

    The objective is convex, so once no step of size h improves it the point
    is within O(h) of the optimum; halving h walks the grid down to h_min.
    """
    c = R.shape[0]
    p = np.full(c, 1.0 / c)
    best = float(coupling_objective(R, p)[0])
    h = h0
    moves = [(i, j) for i in range(c) for j in range(c) if i != j]
    while h >= h_min:
        improved = True
        while improved:
            improved = False
            for i, j in moves:
                if p[j] < h:
                    continue
                q = p.copy()
                q[i] += h
                q[j] -= h
                val = float(coupling_objective(R, q)[0])
                if val < best - 1e-15:
                    p, best = q, val
                    improved = True
        h /= 2.0
    return p


def random_pairwise_matrix(c: int, rng: np.random.Generator) -> np.ndarray:
    R = np.full((c, c), 0.5)
    for i in range(c):
        for j in range(i + 1, c):
            r = rng.uniform(0.05, 0.95)
            R[i, j] = r
            R[j, i] = 1.0 - r
    return R


# ---------------------------------------------------------------------------
# dual QP oracle for the binary trainer

def nu_svc_dual_oracle(K: np.ndarray, y: np.ndarray, nu: float) -> tuple[np.ndarray, float]:
    """Global minimizer of 1/2 a^T Q a over the nu-SVC dual feasible set.

    Enumerates every active-set pattern (each coefficient at 0, at 1/m, or
    free) and solves the equality-constrained KKT system on the free part.
    The alpha-sum constraint is imposed as an equality at nu: scaling any
    feasible point with a larger sum down to nu stays feasible and cannot
    increase the objective, so the inequality is tight at some optimum.
    """
    m = len(y)
    C = 1.0 / m
    Q = (y[:, None] * y[None, :]) * K
    pos = y > 0
    A = np.vstack([pos.astype(float), (~pos).astype(float)])
    b = np.array([nu / 2.0, nu / 2.0])

    best_alpha, best_val = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=m):
        pattern = np.array(pattern)
        fixed_val = np.where(pattern == 1, C, 0.0)
        free = pattern == 2
        alpha = fixed_val.copy()
        if free.any():
            nf = int(free.sum())
            KKT = np.zeros((nf + 2, nf + 2))
            KKT[:nf, :nf] = Q[np.ix_(free, free)]
            KKT[:nf, nf:] = -A[:, free].T
            KKT[nf:, :nf] = A[:, free]
            rhs = np.concatenate([
                -Q[np.ix_(free, ~free)] @ fixed_val[~free],
                b - A[:, ~free] @ fixed_val[~free],
            ])
            sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
            alpha[free] = sol[:nf]
        if np.any(alpha < -1e-9) or np.any(alpha > C + 1e-9):
            continue
        if np.max(np.abs(A @ alpha - b)) > 1e-9:
            continue
        val = 0.5 * float(alpha @ Q @ alpha)
        if val < best_val:
            best_alpha, best_val = alpha, val
    if best_alpha is None:
        raise AssertionError("oracle found no feasible pattern")
    return best_alpha, best_val


def dual_objective(K: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
    Q = (y[:, None] * y[None, :]) * K
    return 0.5 * float(alpha @ Q @ alpha)
