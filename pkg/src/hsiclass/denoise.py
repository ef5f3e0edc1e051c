"""Constrained TV + Tikhonov restoration of probability maps via ADMM.

Each class map u minimizes

    1/2 ||u - v||^2 + beta1 ||D u||_1 + beta2/2 ||D u||^2
    s.t. u = v on the training pixels,

where D is the periodic forward-difference gradient.  Splitting s = D u
and w = u gives three exact substeps per sweep: a linear solve that is
diagonal in the 2-D DFT domain, a soft threshold for s, and a copy-with-
override for w; the multiplier update is lambda <- lambda - E u + g with
E = (D; I) and g = (s; w).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import DataError, ProbabilityTensor

REL_CHANGE_FLOOR = 1e-12
RESIDUAL_FACTOR = 100.0


@dataclass(frozen=True)
class DenoiseParams:
    beta1: float = 0.3
    beta2: float = 3.0
    mu: float = 1.0
    tol: float = 1e-6
    max_iters: int = 1000

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise DataError("beta1 and beta2 must be non-negative")
        if not self.mu > 0:
            raise DataError("mu must be positive")
        if not self.tol > 0:
            raise DataError("tol must be positive")
        if self.max_iters < 1:
            raise DataError("max_iters must be >= 1")


@dataclass
class AdmmDiagnostics:
    iterations: int = 0
    converged: bool = False
    relative_change: float = float("inf")
    objective: float = float("nan")
    max_train_deviation: float = 0.0
    trace: list = field(default_factory=list)  # (iteration, relative change, objective)


def _gradient_into(u: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> None:
    dx[:, :-1] = u[:, 1:] - u[:, :-1]
    dx[:, -1] = u[:, 0] - u[:, -1]
    dy[:-1] = u[1:] - u[:-1]
    dy[-1] = u[0] - u[-1]


def gradient(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences with periodic wrap; dx along columns, dy along rows."""
    dx = np.empty_like(u)
    dy = np.empty_like(u)
    _gradient_into(u, dx, dy)
    return dx, dy


def _adjoint_into(px: np.ndarray, py: np.ndarray, out: np.ndarray) -> None:
    out[:, 1:] = px[:, :-1] - px[:, 1:]
    out[:, 0] = px[:, -1] - px[:, 0]
    out[1:] += py[:-1] - py[1:]
    out[0] += py[-1] - py[0]


def gradient_adjoint(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Adjoint of ``gradient``: <D u, p> = <u, D^T p> exactly."""
    out = np.empty_like(px)
    _adjoint_into(px, py, out)
    return out


def transfer_denominator(height: int, width: int, beta2: float, mu: float) -> np.ndarray:
    """DFT symbol of I + beta2 D^T D + mu E^T E at each frequency (l, k)."""
    lx = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(width) / width)
    ly = 2.0 - 2.0 * np.cos(2.0 * np.pi * np.arange(height) / height)
    return (1.0 + mu) + (beta2 + mu) * (ly[:, None] + lx[None, :])


def solve_u(
    v: np.ndarray,
    s: np.ndarray,
    w: np.ndarray,
    lam1: np.ndarray,
    lam2: np.ndarray,
    params: DenoiseParams,
    denom: np.ndarray | None = None,
) -> np.ndarray:
    """Exact minimizer of the quadratic u-subproblem by pointwise DFT division.

    Solves (I + beta2 D^T D + mu E^T E) u = v + mu E^T (g + lambda) with
    g = (s; w); the imaginary residue of the inverse transform is discarded.
    """
    if denom is None:
        denom = transfer_denominator(v.shape[0], v.shape[1], params.beta2, params.mu)
    rhs = np.empty_like(np.asarray(v, dtype=np.float64))
    _rhs_into(v, s[0], s[1], w, lam1[0], lam1[1], lam2, params.mu, rhs,
              np.empty_like(rhs), np.empty_like(rhs), np.empty_like(rhs))
    return _spectral_solve(rhs, denom)


def _rhs_into(v, sx, sy, w, l1x, l1y, lam2, mu, rhs, tx, ty, scratch) -> None:
    # rhs = v + mu * (D^T(s + lambda1) + (w + lambda2)), association preserved
    np.add(sx, l1x, out=tx)
    np.add(sy, l1y, out=ty)
    _adjoint_into(tx, ty, rhs)
    np.add(w, lam2, out=scratch)
    rhs += scratch
    rhs *= mu
    rhs += v


def _spectral_solve(rhs: np.ndarray, denom: np.ndarray) -> np.ndarray:
    spectrum = np.fft.rfft2(rhs)
    np.divide(spectrum, denom[:, : rhs.shape[1] // 2 + 1], out=spectrum)
    return np.fft.irfft2(spectrum, s=rhs.shape)


def _shrink_into(buf: np.ndarray, kappa: float, scratch: np.ndarray) -> None:
    np.abs(buf, out=scratch)
    scratch -= kappa
    np.maximum(scratch, 0.0, out=scratch)
    np.sign(buf, out=buf)
    buf *= scratch


def shrink(r: np.ndarray, kappa: float) -> np.ndarray:
    """Soft threshold: sgn(r) * max(|r| - kappa, 0)."""
    if kappa < 0:
        raise DataError("shrink threshold must be non-negative")
    return np.sign(r) * np.maximum(np.abs(r) - kappa, 0.0)


def project_w(u_minus_lam2: np.ndarray, v: np.ndarray, training_mask: np.ndarray) -> np.ndarray:
    """Keep training pixels at their input values, copy the rest through."""
    return np.where(training_mask, v, u_minus_lam2)


def objective(
    u: np.ndarray,
    v: np.ndarray,
    beta1: float,
    beta2: float,
    grad: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    dx, dy = gradient(u) if grad is None else grad
    data = 0.5 * float(((u - v) ** 2).sum())
    tv = float(np.abs(dx).sum() + np.abs(dy).sum())
    tik = 0.5 * float((dx * dx + dy * dy).sum())
    return data + beta1 * tv + beta2 * tik


def admm_denoise(
    v: np.ndarray,
    training_mask: np.ndarray,
    params: DenoiseParams,
    denom: np.ndarray | None = None,
    collect_trace: bool = False,
) -> tuple[np.ndarray, AdmmDiagnostics]:
    """Restore one class map; returns the map and diagnostics.

    ``collect_trace`` additionally records (iteration, relative change,
    objective) per sweep for CSV emission; the objective evaluation costs a
    few extra passes over the map, so it is off unless asked for.

    Stops once the relative change of u drops below ``params.tol`` and
    the relative split residual ||E u - g|| / ||u|| drops below 100x that,
    or after ``params.max_iters`` sweeps; a non-converged result is still
    returned, flagged in the diagnostics.  The residual term guards against
    transient plateaus where u stalls while the multipliers are still
    moving, which would otherwise leave pinned pixels visibly off target.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DataError("input map contains non-finite values")
    training_mask = np.asarray(training_mask, dtype=bool)
    if training_mask.shape != v.shape:
        raise DataError(f"mask shape {training_mask.shape} != map shape {v.shape}")
    if denom is None:
        denom = transfer_denominator(v.shape[0], v.shape[1], params.beta2, params.mu)

    # per-iteration state and scratch buffers are allocated once; sweeps on
    # large maps are memory-bound, so the loop runs entirely on out= ops
    # (each step matches its standalone counterpart bit for bit)
    u = v.copy()
    w = u.copy()
    sx, sy = gradient(u)
    l1x = np.zeros_like(u)
    l1y = np.zeros_like(u)
    lam2 = np.zeros_like(u)
    dx = np.empty_like(u)
    dy = np.empty_like(u)
    rhs = np.empty_like(u)
    tx = np.empty_like(u)
    ty = np.empty_like(u)
    scratch = np.empty_like(u)
    pinned = v[training_mask]

    def sumsq(a):
        return float(np.einsum("ij,ij->", a, a))

    diag = AdmmDiagnostics()
    kappa = params.beta1 / params.mu
    norm_u = np.sqrt(sumsq(u))

    for it in range(1, params.max_iters + 1):
        _rhs_into(v, sx, sy, w, l1x, l1y, lam2, params.mu, rhs, tx, ty, scratch)
        u_new = _spectral_solve(rhs, denom)

        _gradient_into(u_new, dx, dy)
        np.subtract(dx, l1x, out=sx)
        np.subtract(dy, l1y, out=sy)
        _shrink_into(sx, kappa, scratch)
        _shrink_into(sy, kappa, scratch)

        np.subtract(u_new, lam2, out=w)
        w[training_mask] = pinned

        if collect_trace:
            obj = objective(u_new, v, params.beta1, params.beta2, grad=(dx, dy))

        # multiplier updates; the deltas overwrite the gradient buffers
        np.subtract(sx, dx, out=dx)
        np.subtract(sy, dy, out=dy)
        l1x += dx
        l1y += dy
        np.subtract(w, u_new, out=rhs)
        lam2 += rhs
        resid_sq = sumsq(dx) + sumsq(dy) + sumsq(rhs)

        np.subtract(u_new, u, out=scratch)
        rel = float(np.sqrt(sumsq(scratch)) / max(norm_u, REL_CHANGE_FLOOR))
        norm_u = np.sqrt(sumsq(u_new))
        resid_ok = np.sqrt(resid_sq) < RESIDUAL_FACTOR * params.tol * max(norm_u, REL_CHANGE_FLOOR)
        if collect_trace:
            diag.trace.append((it, rel, obj))
        diag.iterations = it
        diag.relative_change = rel
        u = u_new
        if rel < params.tol and resid_ok:
            diag.converged = True
            break

    diag.objective = objective(u, v, params.beta1, params.beta2)
    if training_mask.any():
        diag.max_train_deviation = float(np.abs(u[training_mask] - v[training_mask]).max())
    return u, diag


def denoise_tensor(
    tensor: ProbabilityTensor,
    training_mask: np.ndarray,
    params: DenoiseParams,
    threads: int = 1,
    collect_trace: bool = False,
) -> tuple[ProbabilityTensor, list[AdmmDiagnostics]]:
    """Restore every class slice independently with shared parameters."""
    tensor.validate(simplex=False)
    denom = transfer_denominator(tensor.height, tensor.width, params.beta2, params.mu)

    def run(k):
        return admm_denoise(tensor.values[k], training_mask, params, denom, collect_trace)

    ks = range(tensor.num_classes)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, ks))
    else:
        results = [run(k) for k in ks]
    out = np.stack([u for u, _ in results])
    diags = [d for _, d in results]
    restored = ProbabilityTensor(tensor.height, tensor.width, tensor.num_classes, out)
    return restored, diags
