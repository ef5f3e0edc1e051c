"""Kernel nu-SVC training and prediction.

The binary trainer solves the dual

    max  -1/2 sum_ij alpha_i alpha_j y_i y_j K(x_i, x_j)
    s.t. 0 <= alpha_i <= 1/m,  sum_i alpha_i y_i = 0,  sum_i alpha_i >= nu

by a two-variable working-set method.  Replacing the last constraint by
equality loses nothing: scaling a feasible point with a larger alpha-sum
down to sum nu stays feasible and does not increase the objective, so both
sums inside each label group are pinned to nu/2 and every update moves a
pair of coefficients within one label group.

Multiclass is one-against-one: one binary machine per unordered class
pair, a sigmoid per pair mapping decision values to pairwise
probabilities, and a coupling step assembling the per-pixel class vector.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ConvergenceError, DataError, HyperCube, ProbabilityTensor, SplitSpec
from .coupling import couple_batch

KKT_TOL = 1e-6
MAX_SMO_ITERS = 10_000_000
FULL_GRAM_LIMIT = 4000
CACHE_BYTES = 256 << 20
SIGMOID_EXP_CLAMP = 40.0
SIGMOID_PROB_CLAMP = 1e-12
SIGMOID_MIN_PER_CLASS = 5


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind != "rbf":
            raise DataError(f"unsupported kernel kind {self.kind!r}")
        if not self.sigma > 0:
            raise DataError(f"kernel sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class BinaryModel:
    """One trained binary machine.

    ``alphas`` stores the dual coefficients pre-multiplied by the labels,
    so the decision value is sum_i alphas[i] * K(sv[i], x) + bias.  ``rho``
    and ``tau`` are the sigmoid parameters of the pairwise probability
    1 / (1 + exp(rho * f + tau)); ``margin`` is the trained margin offset
    (a training-time diagnostic, NaN after deserialization).
    """

    support_vectors: np.ndarray
    alphas: np.ndarray
    bias: float
    kernel: KernelSpec
    rho: float = -1.0
    tau: float = 0.0
    nu: float = 0.5
    margin: float = float("nan")
    sigmoid_fallback: bool = False

    def __post_init__(self):
        sv = np.asarray(self.support_vectors, dtype=np.float64)
        object.__setattr__(self, "support_vectors", sv.reshape(-1, sv.shape[-1] if sv.ndim else 0))
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=np.float64).ravel())


@dataclass(frozen=True)
class MulticlassModel:
    num_classes: int
    bands: int
    kernel: KernelSpec
    pairwise: dict = field(default_factory=dict)


def class_pairs(num_classes: int) -> list[tuple[int, int]]:
    """Unordered class pairs (i, j), i < j, 1-based, lexicographic."""
    return [(i, j) for i in range(1, num_classes + 1) for j in range(i + 1, num_classes + 1)]


def _sqdist(X: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Pairwise squared distances, accumulated band by band.

    The accumulation order is fixed by the band count alone, so results are
    bit-identical no matter how callers chunk the pixel axis.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if X.shape[1] != S.shape[1]:
        raise DataError(f"spectrum lengths differ: {X.shape[1]} vs {S.shape[1]}")
    out = np.zeros((X.shape[0], S.shape[0]))
    for b in range(X.shape[1]):
        d = X[:, b, None] - S[None, :, b]
        out += d * d
    return out


def rbf(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """exp(-||x - y||^2 / (2 sigma^2)), always in (0, 1]."""
    if not sigma > 0:
        raise DataError(f"sigma must be positive, got {sigma}")
    return float(np.exp(-_sqdist(x, y)[0, 0] / (2.0 * sigma * sigma)))


def gram(X: np.ndarray, S: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-_sqdist(X, S) / (2.0 * sigma * sigma))


class _KernelCache:
    """Row cache for the training Gram matrix.

    Small problems precompute the full matrix; larger ones keep an LRU of
    rows bounded by a byte budget.
    """

    def __init__(self, X: np.ndarray, sigma: float, budget: int = CACHE_BYTES):
        self.X = X
        self.sigma = sigma
        m = X.shape[0]
        self.full = None
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        if m <= FULL_GRAM_LIMIT:
            self.full = gram(X, X, sigma)
        else:
            self.max_rows = max(2, budget // (8 * m))

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        hit = self._rows.get(i)
        if hit is not None:
            self._rows.move_to_end(i)
            return hit
        r = gram(self.X[i : i + 1], self.X, self.sigma)[0]
        self._rows[i] = r
        if len(self._rows) > self.max_rows:
            self._rows.popitem(last=False)
        return r


def nu_upper_bound(y: np.ndarray) -> float:
    m_pos = int(np.sum(y > 0))
    m_neg = len(y) - m_pos
    return 2.0 * min(m_pos, m_neg) / len(y)


def train_binary(X: np.ndarray, y: np.ndarray, nu: float, kernel: KernelSpec) -> BinaryModel:
    """Solve the binary dual and return the trained machine (sigmoid unfitted)."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    y = np.asarray(y, dtype=np.float64).ravel()
    m = len(y)
    if m < 2 or X.shape[0] != m:
        raise DataError(f"need >= 2 training points with matching labels, got {X.shape[0]}/{m}")
    if not np.all(np.abs(y) == 1.0):
        raise DataError("labels must be +1/-1")
    if np.all(y > 0) or np.all(y < 0):
        raise DataError("both labels must be present")
    nu_max = nu_upper_bound(y)
    if not 0.0 < nu <= nu_max + 1e-12:
        raise DataError(f"nu={nu} infeasible: requires 0 < nu <= 2*min(m+, m-)/m = {nu_max:.6g}")

    C = 1.0 / m
    cache = _KernelCache(X, kernel.sigma)
    pos_idx = np.nonzero(y > 0)[0]
    neg_idx = np.nonzero(y < 0)[0]

    # Fill each label group to sum nu/2, front to back.
    alpha = np.zeros(m)
    for idx in (pos_idx, neg_idx):
        remaining = nu / 2.0
        for i in idx:
            take = min(C, remaining)
            alpha[i] = take
            remaining -= take
            if remaining <= 0:
                break

    # Gradient of 1/2 alpha^T Q alpha with Q_ij = y_i y_j K_ij.
    g = np.zeros(m)
    for j in np.nonzero(alpha > 0)[0]:
        g += alpha[j] * y[j] * cache.row(j)
    g *= y

    for _ in range(MAX_SMO_ITERS):
        best = None
        for idx in (pos_idx, neg_idx):
            a, gg = alpha[idx], g[idx]
            up = a < C - 1e-14
            dn = a > 1e-14
            if not up.any() or not dn.any():
                continue
            i_loc = np.where(up, gg, np.inf).argmin()
            j_loc = np.where(dn, gg, -np.inf).argmax()
            viol = gg[j_loc] - gg[i_loc]
            if best is None or viol > best[0]:
                best = (viol, int(idx[i_loc]), int(idx[j_loc]))
        if best is None or best[0] < KKT_TOL:
            break
        _, i, j = best
        ki = cache.row(i)
        kj = cache.row(j)
        denom = max(ki[i] + kj[j] - 2.0 * ki[j], 1e-12)
        t = min((g[j] - g[i]) / denom, C - alpha[i], alpha[j])
        alpha[i] = min(alpha[i] + t, C)
        alpha[j] = max(alpha[j] - t, 0.0)
        g += (t * y) * (ki * y[i] - kj * y[j])

    bias, margin = _bias_and_margin(alpha, g, y, C)
    keep = alpha > 0
    return BinaryModel(
        support_vectors=X[keep],
        alphas=alpha[keep] * y[keep],
        bias=bias,
        kernel=kernel,
        nu=nu,
        margin=margin,
    )


def _group_level(a: np.ndarray, gg: np.ndarray, C: float) -> float:
    """KKT multiplier level for one label group (mean over free points)."""
    free = (a > 1e-14) & (a < C - 1e-14)
    if free.any():
        return float(gg[free].mean())
    lo = float(gg[a >= C - 1e-14].max()) if (a >= C - 1e-14).any() else -np.inf
    hi = float(gg[a <= 1e-14].min()) if (a <= 1e-14).any() else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    return lo if np.isfinite(lo) else (hi if np.isfinite(hi) else 0.0)


def _bias_and_margin(alpha, g, y, C) -> tuple[float, float]:
    r_pos = _group_level(alpha[y > 0], g[y > 0], C)
    r_neg = _group_level(alpha[y < 0], g[y < 0], C)
    return 0.5 * (r_neg - r_pos), 0.5 * (r_pos + r_neg)


def decision_batch(model: BinaryModel, X: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Decision values for a batch of spectra, chunked over rows.

    Per-spectrum reductions run along fixed axes only, so the result is
    bit-identical for any chunk size, including single-row calls.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    sv = model.support_vectors
    if sv.shape[0] == 0:
        return np.full(n, model.bias)
    out = np.empty(n)
    s2 = 2.0 * model.kernel.sigma * model.kernel.sigma
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        G = np.exp(-_sqdist(X[start:stop], sv) / s2)
        out[start:stop] = (G * model.alphas[None, :]).sum(axis=1) + model.bias
    return out


def decision(model: BinaryModel, x: np.ndarray) -> float:
    """f(x) = sum_i alpha_i y_i K(x_i, x) + b."""
    return float(decision_batch(model, np.asarray(x, dtype=np.float64)[None, :])[0])


def fit_sigmoid(
    f_values: np.ndarray,
    y: np.ndarray,
    max_iter: int = 100,
    min_step: float = 1e-10,
    grad_tol: float = 1e-5,
    trace: list | None = None,
) -> tuple[float, float]:
    """Fit (rho, tau) of r = 1/(1 + exp(rho*f + tau)) by regularized ML.

    Targets are the smoothed (N+ + 1)/(N+ + 2) and 1/(N- + 2) frequencies;
    the Newton iteration uses step halving on the likelihood, which
    decreases monotonically across accepted steps.
    """
    f = np.asarray(f_values, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    n_pos = int(np.sum(y > 0))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("sigmoid fitting needs both labels present")
    t = np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    def nll(a: float, b: float) -> float:
        z = a * f + b
        pos = z >= 0
        val = np.where(pos, t * z + np.log1p(np.exp(-np.abs(z))),
                       (t - 1.0) * z + np.log1p(np.exp(-np.abs(z))))
        return float(val.sum())

    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    fval = nll(a, b)
    if trace is not None:
        trace.append(fval)
    sigma_reg = 1e-12
    g1 = g2 = np.inf
    for _ in range(max_iter):
        z = a * f + b
        ez = np.exp(-np.abs(z))
        p = np.where(z >= 0, ez / (1.0 + ez), 1.0 / (1.0 + ez))
        d2 = p * (1.0 - p)
        h11 = sigma_reg + float((f * f * d2).sum())
        h22 = sigma_reg + float(d2.sum())
        h21 = float((f * d2).sum())
        d1 = t - p
        g1 = float((f * d1).sum())
        g2 = float(d1.sum())
        if abs(g1) < grad_tol and abs(g2) < grad_tol:
            return a, b
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            na, nb = a + step * da, b + step * db
            nf = nll(na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                if trace is not None:
                    trace.append(fval)
                break
            step *= 0.5
        else:
            raise ConvergenceError(
                f"sigmoid line search failed; gradient norm {math.hypot(g1, g2):.3e}"
            )
    raise ConvergenceError(
        f"sigmoid fit did not converge in {max_iter} iterations; "
        f"gradient norm {math.hypot(g1, g2):.3e}"
    )


def _sigmoid_prob(rho: float, tau: float, f: np.ndarray) -> np.ndarray:
    z = np.clip(rho * f + tau, -SIGMOID_EXP_CLAMP, SIGMOID_EXP_CLAMP)
    r = 1.0 / (1.0 + np.exp(z))
    return np.clip(r, SIGMOID_PROB_CLAMP, 1.0 - SIGMOID_PROB_CLAMP)


def pairwise_probability(model: BinaryModel, x: np.ndarray) -> float:
    """Pairwise class probability r = 1/(1 + exp(rho*f(x) + tau))."""
    return float(_sigmoid_prob(model.rho, model.tau, np.array([decision(model, x)]))[0])


def _pair_training_data(cube: HyperCube, split: SplitSpec, i: int, j: int):
    spectra = cube.spectra()
    tr = split.training
    sel = (tr[:, 2] == i) | (tr[:, 2] == j)
    rows = tr[sel]
    flat = rows[:, 0] * cube.width + rows[:, 1]
    X = spectra[flat]
    y = np.where(rows[:, 2] == i, 1.0, -1.0)
    return X, y


def train_multiclass(
    cube: HyperCube,
    split: SplitSpec,
    nu: float,
    kernel: KernelSpec,
    threads: int = 1,
) -> MulticlassModel:
    """One-against-one training: a binary machine plus sigmoid per class pair."""
    classes = sorted({int(k) for k in split.training[:, 2]})
    if not classes:
        raise DataError("split has no training pixels")
    num_classes = max(classes)

    def build(pair):
        i, j = pair
        X, y = _pair_training_data(cube, split, i, j)
        if not (y > 0).any() or not (y < 0).any():
            raise DataError(f"class pair ({i}, {j}) lacks training pixels for one side")
        bm = train_binary(X, y, nu, kernel)
        n_pos = int(np.sum(y > 0))
        n_neg = len(y) - n_pos
        if min(n_pos, n_neg) < SIGMOID_MIN_PER_CLASS:
            return pair, replace(bm, rho=-1.0, tau=0.0, sigmoid_fallback=True)
        f = decision_batch(bm, X)
        rho, tau = fit_sigmoid(f, y)
        return pair, replace(bm, rho=rho, tau=tau)

    pairs = class_pairs(num_classes)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(build, pairs))
    else:
        results = [build(p) for p in pairs]
    return MulticlassModel(
        num_classes=num_classes,
        bands=cube.bands,
        kernel=kernel,
        pairwise=dict(results),
    )


def predict_probabilities(model: MulticlassModel, X: np.ndarray, threads: int = 1) -> np.ndarray:
    """Coupled class probabilities, one row per input spectrum."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    c = model.num_classes
    n = X.shape[0]
    if c < 2:
        return np.ones((n, 1))
    R = np.full((n, c, c), 0.5)

    def fill(pair):
        i, j = pair
        bm = model.pairwise[pair]
        f = decision_batch(bm, X)
        return pair, _sigmoid_prob(bm.rho, bm.tau, f)

    pairs = class_pairs(c)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fill, pairs))
    else:
        results = [fill(p) for p in pairs]
    for (i, j), r in results:
        R[:, i - 1, j - 1] = r
        R[:, j - 1, i - 1] = 1.0 - r
    P, _ = couple_batch(R)
    return P


def predict_tensor(
    model: MulticlassModel,
    cube: HyperCube,
    split: SplitSpec | None = None,
    threads: int = 1,
) -> ProbabilityTensor:
    """Per-pixel coupled class probabilities; training pixels become one-hot."""
    if cube.bands != model.bands:
        raise DataError(f"cube has {cube.bands} bands, model expects {model.bands}")
    c = model.num_classes
    P = predict_probabilities(model, cube.spectra(), threads=threads)
    values = np.ascontiguousarray(P.T.reshape(c, cube.height, cube.width))

    if split is not None:
        tr = split.training
        values[:, tr[:, 0], tr[:, 1]] = 0.0
        values[tr[:, 2] - 1, tr[:, 0], tr[:, 1]] = 1.0
    return ProbabilityTensor(cube.height, cube.width, c, values)
