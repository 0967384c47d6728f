"""Geometry of symmetric positive definite matrices.

Every function accepts a single ``(n, n)`` array or a stack ``(..., n, n)``
where that makes sense. Matrix functions are evaluated through a symmetric
eigendecomposition, so inputs are symmetrized before use.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConvergenceError, DimensionError, NumericalError, SpdDomainError

SYM_RTOL = 1e-12
PD_RTOL = 1e-12

LEM = "lem"
AIRM = "airm"


class EigDecomp(NamedTuple):
    """Eigenvalues in descending order and matching orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def _check_square(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {A.shape}")
    return A


def check_sym(A, rtol: float = SYM_RTOL) -> np.ndarray:
    """Validate symmetry to ``rtol * max(1, ||A||_F)`` and return the symmetrized matrix."""
    A = _check_square(A)
    scale = np.maximum(1.0, np.linalg.norm(A, axis=(-2, -1)))
    asym = np.max(np.abs(A - np.swapaxes(A, -1, -2)), axis=(-2, -1))
    if np.any(asym > rtol * scale):
        raise SpdDomainError(f"matrix is not symmetric (max asymmetry {np.max(asym):.3e})")
    return sym(A)


def check_spd(A, rtol: float = PD_RTOL) -> np.ndarray:
    """Symmetrize ``A`` and reject it unless every eigenvalue exceeds ``rtol * lambda_max``."""
    S = sym(_check_square(A))
    if not np.all(np.isfinite(S)):
        raise SpdDomainError("matrix has non-finite entries")
    lam = np.linalg.eigvalsh(S)
    lo, hi = lam[..., 0], lam[..., -1]
    bad = (lo <= rtol * np.abs(hi)) | (hi <= 0)
    if np.any(bad):
        raise SpdDomainError(
            f"matrix is not positive definite (min eigenvalue {np.min(lo):.6e})"
        )
    return S


def sym_eig(A) -> EigDecomp:
    """Symmetric eigendecomposition with a deterministic convention.

    Eigenvalues come back in descending order. Each eigenvector is signed so that
    its largest-magnitude component is positive (the first one on exact ties).
    """
    A = sym(_check_square(A))
    try:
        lam, U = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        norm = float(np.max(np.linalg.norm(A, axis=(-2, -1))))
        raise NumericalError(f"eigensolver did not converge (||A||_F = {norm:.6e})") from exc
    lam = lam[..., ::-1]
    U = U[..., ::-1]
    lead = np.argmax(np.abs(U), axis=-2)
    signs = np.sign(np.take_along_axis(U, lead[..., None, :], axis=-2))
    signs[signs == 0] = 1.0
    return EigDecomp(lam.copy(), U * signs)


def eig_function(A, fn) -> np.ndarray:
    """``U diag(fn(lambda)) U^T`` for symmetric ``A``."""
    lam, U = np.linalg.eigh(sym(_check_square(A)))
    return sym((U * fn(lam)[..., None, :]) @ np.swapaxes(U, -1, -2))


def spd_log(S) -> np.ndarray:
    """Principal matrix logarithm of an SPD matrix (or stack)."""
    S = sym(_check_square(S))
    lam, U = np.linalg.eigh(S)
    if np.any(lam <= 0):
        raise SpdDomainError(
            f"logarithm needs positive eigenvalues, found {np.min(lam):.6e}"
        )
    return sym((U * np.log(lam)[..., None, :]) @ np.swapaxes(U, -1, -2))


def spd_exp(X) -> np.ndarray:
    """Matrix exponential of a symmetric matrix (or stack); always SPD."""
    return eig_function(X, np.exp)


def spd_pow(S, p: float) -> np.ndarray:
    lam, U = np.linalg.eigh(sym(_check_square(S)))
    if np.any(lam <= 0):
        raise SpdDomainError(f"power needs positive eigenvalues, found {np.min(lam):.6e}")
    return sym((U * lam[..., None, :] ** p) @ np.swapaxes(U, -1, -2))


def spd_sqrt(S) -> np.ndarray:
    return spd_pow(S, 0.5)


def spd_invsqrt(S) -> np.ndarray:
    return spd_pow(S, -0.5)


def spd_inv(S) -> np.ndarray:
    return spd_pow(S, -1.0)


def log_mult(S1, S2) -> np.ndarray:
    """Logarithmic product ``exp(log S1 + log S2)``."""
    return spd_exp(spd_log(S1) + spd_log(S2))


def log_scale(lam: float, S) -> np.ndarray:
    """Logarithmic scalar multiplication, i.e. ``S**lam``."""
    return spd_exp(lam * spd_log(S))


def _same_dims(S1: np.ndarray, S2: np.ndarray) -> None:
    if S1.shape[-1] != S2.shape[-1]:
        raise DimensionError(f"dimension mismatch: {S1.shape[-1]} vs {S2.shape[-1]}")


def lem_distance(S1, S2) -> float | np.ndarray:
    """Log-Euclidean distance ``||log S1 - log S2||_F``."""
    S1, S2 = _check_square(S1), _check_square(S2)
    _same_dims(S1, S2)
    d = np.linalg.norm(spd_log(S1) - spd_log(S2), axis=(-2, -1))
    return float(d) if np.ndim(d) == 0 else d


def lem_frechet_mean(batch: Sequence[np.ndarray] | np.ndarray, weights=None) -> np.ndarray:
    """Closed-form Log-Euclidean mean, optionally weighted (weights are normalized)."""
    logs = _stack_logs(batch)
    if weights is None:
        return spd_exp(logs.mean(axis=0))
    w = np.asarray(weights, dtype=float)
    if w.shape != (logs.shape[0],) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with positive sum, one per matrix")
    return spd_exp(np.tensordot(w / w.sum(), logs, axes=1))


def _stack(batch) -> np.ndarray:
    if len(batch) == 0:
        raise ValueError("empty batch")
    arr = np.asarray(batch, dtype=float) if not isinstance(batch, np.ndarray) else batch
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise DimensionError(f"expected a batch of square matrices of equal size, got {arr.shape}")
    return arr


def _stack_logs(batch) -> np.ndarray:
    return spd_log(_stack(batch))


def airm_distance(S1, S2) -> float:
    """Affine-invariant distance ``||log(S1^-1/2 S2 S1^-1/2)||_F``."""
    S1, S2 = _check_square(S1), _check_square(S2)
    _same_dims(S1, S2)
    Pi = spd_invsqrt(S1)
    d = np.linalg.norm(spd_log(Pi @ S2 @ Pi), axis=(-2, -1))
    return float(d) if np.ndim(d) == 0 else d


def airm_exp(P, v) -> np.ndarray:
    P = check_spd(P)
    v = sym(np.asarray(v, dtype=float))
    Ph, Pi = spd_sqrt(P), spd_invsqrt(P)
    return sym(Ph @ spd_exp(Pi @ v @ Pi) @ Ph)


def airm_log(P, S) -> np.ndarray:
    P = check_spd(P)
    Ph, Pi = spd_sqrt(P), spd_invsqrt(P)
    return sym(Ph @ spd_log(Pi @ np.asarray(S, dtype=float) @ Pi) @ Ph)


def airm_inner(P, v, w) -> float:
    """Affine-invariant inner product ``tr(P^-1 v P^-1 w)`` on the tangent space at ``P``."""
    Pinv = spd_inv(P)
    return float(np.trace(Pinv @ v @ Pinv @ w))


def geodesic(S1, S2, t: float, metric: str = LEM) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    if metric == LEM:
        return spd_exp((1.0 - t) * spd_log(S1) + t * spd_log(S2))
    if metric == AIRM:
        S1 = check_spd(S1)
        Sh, Si = spd_sqrt(S1), spd_invsqrt(S1)
        return sym(Sh @ spd_exp(t * spd_log(Si @ S2 @ Si)) @ Sh)
    raise ValueError(f"unknown metric {metric!r}")


def airm_frechet_mean(batch, max_iter: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Karcher mean under the affine-invariant metric by fixed-point iteration.

    Starts from the Log-Euclidean mean and iterates
    ``mu <- mu^1/2 exp(mean_i log(mu^-1/2 S_i mu^-1/2)) mu^1/2``
    until the Frobenius norm of the averaged whitened logarithm falls below ``tol``.
    """
    stack = _stack(batch)
    check_spd(stack)
    mu = lem_frechet_mean(stack)
    residual = np.inf
    for _ in range(max_iter):
        mh, mi = spd_sqrt(mu), spd_invsqrt(mu)
        step = spd_log(mi @ stack @ mi).mean(axis=0)
        residual = float(np.linalg.norm(step))
        if residual < tol:
            return mu
        mu = sym(mh @ spd_exp(step) @ mh)
    raise ConvergenceError(
        f"AIRM mean did not converge in {max_iter} iterations (residual {residual:.3e})",
        last=mu,
        residual=residual,
    )


def frechet_mean(batch, metric: str = LEM) -> np.ndarray:
    if metric == LEM:
        return lem_frechet_mean(batch)
    if metric == AIRM:
        return airm_frechet_mean(batch)
    raise ValueError(f"unknown metric {metric!r}")


def distance(S1, S2, metric: str = LEM) -> float:
    if metric == LEM:
        return lem_distance(S1, S2)
    if metric == AIRM:
        return airm_distance(S1, S2)
    raise ValueError(f"unknown metric {metric!r}")


def parallel_transport(S1, S2, s, metric: str = LEM) -> np.ndarray:
    """Transport a tangent vector ``s`` at ``S1`` to the tangent space at ``S2``.

    Under LEM this is the identity. Under AIRM it is the congruence ``E s E^T``
    with ``E = (S2 S1^-1)^1/2``, computed as
    ``S1^1/2 (S1^-1/2 S2 S1^-1/2)^1/2 S1^-1/2``.
    """
    S1, S2 = check_spd(S1), check_spd(S2)
    s = check_sym(s, rtol=1e-10)
    if metric == LEM:
        return s.copy()
    if metric == AIRM:
        Sh, Si = spd_sqrt(S1), spd_invsqrt(S1)
        E = Sh @ spd_sqrt(Si @ S2 @ Si) @ Si
        return sym(E @ s @ E.T)
    raise ValueError(f"unknown metric {metric!r}")


def lem_halfsq_chart_grad(P, Q) -> np.ndarray:
    """Gradient of ``X -> 0.5 * d_LEM(exp X, Q)**2`` at ``X = log P``, namely ``log P - log Q``."""
    return spd_log(P) - spd_log(Q)


def vec(A) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(A).reshape(-1, order="F")


def unvec(v, n: int) -> np.ndarray:
    return np.asarray(v).reshape(n, n, order="F")


def bimap_as_kron(W) -> np.ndarray:
    """Matrix ``W kron W`` so that ``vec(W S W^T) == (W kron W) vec(S)``."""
    W = np.asarray(W, dtype=float)
    return np.kron(W, W)


def random_spd(rng: np.random.Generator, n: int, cond: float | None = None) -> np.ndarray:
    """Random SPD matrix; with ``cond`` its eigenvalues are log-spaced in ``[1, cond]``."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    if cond is None:
        lam = np.exp(rng.uniform(-1.0, 1.0, size=n))
    else:
        lam = np.exp(rng.uniform(0.0, np.log(cond), size=n))
        lam[0], lam[-1] = 1.0, cond
    return sym((Q * lam) @ Q.T)
