"""Discrete optimal transport on SPD matrices under the Log-Euclidean metric."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .emd import solve_emd, transport_cost, uniform
from .errors import DimensionError, SpdDomainError
from .spd import bimap_as_kron, check_spd, spd_exp, spd_log, vec

PLAN_ATOL = 1e-9


def _logs(mats) -> np.ndarray:
    arr = np.asarray(mats, dtype=float)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[0] == 0:
        raise DimensionError(f"expected a non-empty stack of square matrices, got {arr.shape}")
    return spd_log(arr)


def pairwise_sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between the rows of flattened ``X`` and ``Y``."""
    X = X.reshape(X.shape[0], -1)
    Y = Y.reshape(Y.shape[0], -1)
    D = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    # direct differences are exact where the expansion cancels badly
    small = D < 1e-8 * (1.0 + (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :])
    if np.any(small):
        ii, jj = np.nonzero(small)
        D[ii, jj] = ((X[ii] - Y[jj]) ** 2).sum(1)
    return np.maximum(D, 0.0)


def cost_matrix_lem(sources, targets, squared: bool = True) -> np.ndarray:
    """LEM ground cost between two sets of SPD matrices (squared by default)."""
    Ls, Lt = _logs(sources), _logs(targets)
    if Ls.shape[1:] != Lt.shape[1:]:
        raise DimensionError(f"dimension mismatch: {Ls.shape[1]} vs {Lt.shape[1]}")
    D2 = pairwise_sq_dists(Ls, Lt)
    return D2 if squared else np.sqrt(D2)


def barycentric_map_lem(plan, sources, normalize: bool = True) -> np.ndarray:
    """New coordinates for each plan column as a plan-weighted log-mean of ``sources``.

    Column ``j`` maps to ``exp(sum_i w_ij log S_i)`` with ``w_ij = plan[i, j] / sum_i plan[i, j]``.
    With ``normalize=False`` the raw plan entries are used as weights, which
    shrinks every output towards the identity.
    """
    P = np.asarray(plan, dtype=float)
    L = _logs(sources)
    if P.ndim != 2 or P.shape[0] != L.shape[0]:
        raise DimensionError(f"plan has {P.shape[0] if P.ndim == 2 else '?'} rows for {L.shape[0]} sources")
    if normalize:
        mass = P.sum(axis=0)
        empty = np.flatnonzero(mass <= 0)
        if empty.size:
            raise ValueError(f"plan column {int(empty[0])} carries no mass")
        P = P / mass
    return spd_exp(np.einsum("ij,ikl->jkl", P, L))


def c_concave_transport(S, mapped_targets) -> tuple[int, np.ndarray]:
    """Evaluate the transport map induced by the mapped targets at ``S``.

    Returns the index minimizing ``0.5 * d_LEM(S, T_j)**2`` together with that
    target; ties within rounding go to the smallest index.
    """
    T = np.asarray(mapped_targets, dtype=float)
    if T.ndim != 3 or T.shape[0] == 0:
        raise ValueError("empty target list")
    costs = 0.5 * cost_matrix_lem(np.asarray(S, dtype=float)[None], T)[0]
    best = costs.min()
    j = int(np.flatnonzero(costs <= best + 1e-12 * max(1.0, best))[0])
    return j, T[j]


def is_identity_plan(plan, atol: float = PLAN_ATOL) -> bool:
    P = np.asarray(plan)
    if P.shape[0] != P.shape[1]:
        return False
    return bool(np.max(np.abs(P - np.eye(P.shape[0]) / P.shape[0])) <= atol)


@dataclass
class RecoveryReport:
    identity: bool
    plan_deviation: float
    map_error: float
    objective: float

    @property
    def passed(self) -> bool:
        return self.identity and self.map_error <= 1e-8


def verify_affine_recovery(samples, A, b) -> RecoveryReport:
    """Check that OT with squared Euclidean cost recovers the affine push ``x -> A x + b``.

    Targets are built as ``A x_i + b``; the EMD plan should be the identity
    coupling and its barycentric map should reproduce the targets.
    """
    X = np.asarray(samples, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    if X.ndim != 2:
        raise DimensionError("samples must be an (N, d) array")
    if A.shape != (X.shape[1], X.shape[1]) or b.size != X.shape[1]:
        raise DimensionError("A must be (d, d) and b of length d")
    try:
        check_spd(A)
    except SpdDomainError as exc:
        raise SpdDomainError("A must be strictly positive definite") from exc
    N = X.shape[0]
    D = pairwise_sq_dists(X, X)
    np.fill_diagonal(D, np.inf)
    if N > 1 and np.min(D) <= 0.0:
        raise ValueError("samples contain duplicates")
    Y = X @ A.T + b
    C = pairwise_sq_dists(X, Y)
    plan = solve_emd(uniform(N), uniform(N), C)
    mapped = (plan / plan.sum(axis=1, keepdims=True)) @ Y
    return RecoveryReport(
        identity=is_identity_plan(plan),
        plan_deviation=float(np.max(np.abs(plan - np.eye(N) / N))),
        map_error=float(np.max(np.abs(mapped - Y))),
        objective=transport_cost(plan, C),
    )


def verify_bimap_recovery(spd_samples, W) -> RecoveryReport:
    """Bi-Map version of :func:`verify_affine_recovery` on ``vec(S)`` with ``A = W kron W``."""
    S = np.asarray(spd_samples, dtype=float)
    X = np.stack([vec(s) for s in S])
    return verify_affine_recovery(X, bimap_as_kron(W), np.zeros(X.shape[1]))


def band_plan_is_identity(source_bands: Sequence, target_bands: Sequence) -> bool:
    """True iff the uniform-weight EMD between per-band means is the scaled identity."""
    if len(source_bands) != len(target_bands):
        raise DimensionError(f"band count mismatch: {len(source_bands)} vs {len(target_bands)}")
    K = len(source_bands)
    plan = solve_emd(uniform(K), uniform(K), cost_matrix_lem(source_bands, target_bands))
    return is_identity_plan(plan)


@dataclass
class TransportResult:
    plan: np.ndarray
    cost: np.ndarray
    objective: float
    mapped_targets: np.ndarray
    mapped_sources: np.ndarray


def transport_lem(sources, targets, squared: bool = True) -> TransportResult:
    """Run the full discrete Monge-Kantorovich pipeline between two SPD samples.

    ``mapped_targets`` are the new target coordinates (weighted source log-means);
    ``mapped_sources`` push each source onto the targets along the same plan.
    """
    C = cost_matrix_lem(sources, targets, squared=squared)
    N, M = C.shape
    plan = solve_emd(uniform(N), uniform(M), C)
    return TransportResult(
        plan=plan,
        cost=C,
        objective=transport_cost(plan, C),
        mapped_targets=barycentric_map_lem(plan, sources),
        mapped_sources=barycentric_map_lem(plan.T, targets),
    )


def coupled_mean_distance(plan, A, B) -> float:
    """Plan-weighted mean LEM distance ``sum_ij plan_ij d(A_i, B_j) / sum_ij plan_ij``."""
    P = np.asarray(plan, dtype=float)
    D = cost_matrix_lem(A, B, squared=False)
    if P.shape != D.shape:
        raise DimensionError(f"plan has shape {P.shape}, samples give {D.shape}")
    return float(np.sum(P * D) / P.sum())
