"""Synthetic SPD datasets, dataset files and band distance tables."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, DimensionError, SpdDomainError
from .spd import check_spd, check_sym, lem_distance, lem_frechet_mean, spd_exp, spd_log, sym

FORMAT_VERSION = 1
DOMAINS = ("source", "target")
DEFAULT_SHIFT_W = np.array([[1.0, 0.5], [0.5, 1.0]])


@dataclass
class SpdDataset:
    """Labeled SPD samples with a domain tag and a segment (band) index per sample."""

    matrices: np.ndarray
    labels: np.ndarray
    segments: np.ndarray
    domain: str = "source"
    num_classes: int = 1
    num_segments: int = 1

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        n = self.matrices.shape[0]
        self.labels = np.asarray(self.labels, dtype=int).reshape(n)
        self.segments = np.asarray(self.segments, dtype=int).reshape(n)
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise DimensionError(f"matrices must be (N, n, n), got {self.matrices.shape}")
        if self.domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {self.domain!r}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if n and (self.segments.min() < 0 or self.segments.max() >= self.num_segments):
            raise ValueError(f"segments must lie in [0, {self.num_segments})")

    def __len__(self) -> int:
        return self.matrices.shape[0]

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def segment(self, k: int) -> np.ndarray:
        return self.matrices[self.segments == k]

    def with_matrices(self, matrices, domain: str | None = None) -> "SpdDataset":
        return SpdDataset(matrices, self.labels.copy(), self.segments.copy(),
                          domain or self.domain, self.num_classes, self.num_segments)

    def equals(self, other: "SpdDataset") -> bool:
        return (
            self.domain == other.domain
            and self.num_classes == other.num_classes
            and self.num_segments == other.num_segments
            and np.array_equal(self.matrices, other.matrices)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.segments, other.segments)
        )


@dataclass
class GaussianSpec:
    center: np.ndarray
    sigma: float
    count: int
    seed: int = 42

    def __post_init__(self):
        self.center = check_spd(self.center)
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.count < 1:
            raise ValueError("count must be positive")


def sym_basis(n: int, traceless: bool = False) -> np.ndarray:
    """Orthonormal basis of symmetric ``n x n`` matrices (Frobenius inner product).

    Ordered as diagonal units, then ``(E_ij + E_ji)/sqrt(2)`` for ``i < j``. With
    ``traceless=True`` the diagonal part is replaced by an orthonormal basis of
    trace-zero diagonals (``n - 1`` of them, Helmert construction).
    """
    basis = []
    if traceless:
        for k in range(1, n):
            d = np.zeros(n)
            d[:k] = 1.0
            d[k] = -k
            basis.append(np.diag(d / np.linalg.norm(d)))
    else:
        for i in range(n):
            E = np.zeros((n, n))
            E[i, i] = 1.0
            basis.append(E)
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
            basis.append(E)
    return np.stack(basis)


def sample_sym_noise(rng: np.random.Generator, n: int, count: int, sigma: float) -> np.ndarray:
    """Symmetric matrices with i.i.d. N(0, sigma^2) coordinates in an orthonormal basis."""
    coeffs = rng.standard_normal((count, n * (n + 1) // 2)) * sigma
    return np.einsum("ck,kij->cij", coeffs, sym_basis(n))


def sample_spd_gaussian(spec: GaussianSpec) -> np.ndarray:
    """Log-domain Gaussian around ``spec.center``: ``exp(log(center) + X)``."""
    rng = np.random.default_rng(spec.seed)
    X = sample_sym_noise(rng, spec.center.shape[0], spec.count, spec.sigma)
    return spd_exp(spd_log(spec.center) + X)


def apply_bimap_shift(W, data) -> np.ndarray:
    """Push every matrix through ``S -> W S W^T`` for a square nonsingular ``W``."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionError(f"shift matrix must be square, got {W.shape}")
    sv = np.linalg.svd(W, compute_uv=False)
    if sv.min() <= 1e-12 * sv.max():
        raise SpdDomainError("shift matrix is singular")
    data = np.asarray(data, dtype=float)
    if data.shape[-1] != W.shape[0]:
        raise DimensionError(f"shift is {W.shape[0]}x{W.shape[0]}, data is {data.shape[-1]}x{data.shape[-1]}")
    return sym(W @ data @ W.T)


def make_synthetic_pair(dim: int = 2, count: int = 50, sigma: float = 0.4,
                        shift_w=DEFAULT_SHIFT_W, seed: int = 42, num_classes: int = 1):
    """Source cloud around the identity and its Bi-Map-shifted copy as target."""
    src = sample_spd_gaussian(GaussianSpec(np.eye(dim), sigma, count, seed))
    rng = np.random.default_rng(seed + 1)
    labels = rng.integers(0, num_classes, size=count) if num_classes > 1 else np.zeros(count, int)
    source = SpdDataset(src, labels, np.zeros(count, int), "source", num_classes, 1)
    target = source.with_matrices(apply_bimap_shift(shift_w, src), "target")
    return source, target


def make_banded_dataset(num_bands: int, per_band: GaussianSpec, band_separation: float,
                        within_band_shift: float, seed: int = 42, num_classes: int = 2,
                        adversarial: bool = False):
    """Multi-band source/target pair where each band has its own center.

    Band ``k`` of the source is centered at ``exp(k * band_separation * B_k)`` with
    ``B_k`` the k-th element of an orthonormal basis of trace-free symmetric
    matrices; the band noise is recentered so the band's Log-Euclidean mean is
    exactly that center. Target band ``k`` is the same band pushed by the scalar
    Bi-Map ``exp(within_band_shift / (2 sqrt(n))) I``, which translates every log
    by ``within_band_shift * I / sqrt(n)``. Because that translation is
    orthogonal to all band directions, each source band is strictly closest to
    its own target band.

    With ``adversarial=True`` target band ``k`` is instead translated in the log
    domain onto the center of band ``k + 1`` (cyclically), a shift larger than
    the band separation that breaks the same-band property.
    """
    n = per_band.center.shape[0]
    dirs = sym_basis(n, traceless=True)
    if num_bands < 1 or num_bands > dirs.shape[0] + 1:
        raise ValueError(f"{n}x{n} matrices support at most {dirs.shape[0] + 1} bands")
    if within_band_shift < 0 or band_separation <= 0:
        raise ValueError("need band_separation > 0 and within_band_shift >= 0")
    if not adversarial and within_band_shift >= band_separation:
        raise ValueError("guaranteed mode needs band_separation > within_band_shift")
    rng = np.random.default_rng(seed)
    count = per_band.count
    centers = np.zeros((num_bands, n, n))
    for k in range(1, num_bands):
        centers[k] = k * band_separation * dirs[k - 1]

    src_logs, tgt_logs = [], []
    for k in range(num_bands):
        X = sample_sym_noise(rng, n, count, per_band.sigma)
        X = X - X.mean(axis=0)
        logs = centers[k] + X
        src_logs.append(logs)
        if adversarial:
            tgt_logs.append(logs + centers[(k + 1) % num_bands] - centers[k])
        else:
            tgt_logs.append(None)
    src = spd_exp(np.concatenate(src_logs))
    if adversarial:
        tgt = spd_exp(np.concatenate(tgt_logs))
    else:
        W = np.exp(within_band_shift / (2.0 * np.sqrt(n))) * np.eye(n)
        tgt = apply_bimap_shift(W, src)
    try:
        check_spd(src)
        check_spd(tgt)
    except SpdDomainError:
        raise ValueError(
            f"band_separation {band_separation} with {num_bands} bands gives matrices too "
            "ill-conditioned to store; lower the separation or the band count"
        ) from None
    segments = np.repeat(np.arange(num_bands), count)
    labels = np.tile(np.arange(count) % num_classes, num_bands)
    source = SpdDataset(src, labels, segments, "source", num_classes, num_bands)
    return source, source.with_matrices(tgt, "target")


def band_means(data: SpdDataset) -> np.ndarray:
    means = []
    for k in range(data.num_segments):
        members = data.segment(k)
        if members.shape[0] == 0:
            raise ValueError(f"segment {k} is empty")
        means.append(lem_frechet_mean(members))
    return np.stack(means)


def distance_table(source: SpdDataset, target: SpdDataset) -> np.ndarray:
    """LEM distances between per-segment Log-Euclidean means (rows: source, columns: target)."""
    if source.num_segments != target.num_segments:
        raise DimensionError(
            f"segment count mismatch: {source.num_segments} vs {target.num_segments}"
        )
    ms, mt = band_means(source), band_means(target)
    K = ms.shape[0]
    return np.array([[lem_distance(ms[a], mt[b]) for b in range(K)] for a in range(K)])


def diagonal_minimal(table) -> np.ndarray:
    """Per row, whether the diagonal entry is no larger than any other entry of the row."""
    T = np.asarray(table)
    return np.array([T[a, a] <= T[a].min() for a in range(T.shape[0])])


def save_dataset(path, data: SpdDataset) -> None:
    """Write a dataset as JSON lines: one header record, then one record per sample."""
    header = {
        "version": FORMAT_VERSION,
        "dim": data.dim,
        "num_classes": data.num_classes,
        "num_segments": data.num_segments,
        "count": len(data),
    }
    lines = [json.dumps(header, sort_keys=True)]
    for m, y, s in zip(data.matrices, data.labels, data.segments):
        rec = {"m": [float(x) for x in m.ravel()], "y": int(y), "dom": data.domain, "seg": int(s)}
        lines.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n")


def _field(rec, key, kind, lineno):
    if key not in rec:
        raise DatasetFormatError(f"line {lineno}: missing field {key!r}")
    val = rec[key]
    if kind is int and not (isinstance(val, int) and not isinstance(val, bool)):
        raise DatasetFormatError(f"line {lineno}: field {key!r} must be an integer")
    return val


def load_dataset(path) -> SpdDataset:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"line 1: malformed header ({exc.msg})") from exc
    if not isinstance(header, dict):
        raise DatasetFormatError("line 1: header must be an object")
    version = _field(header, "version", int, 1)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"line 1: unsupported version {version}")
    dim = _field(header, "dim", int, 1)
    L = _field(header, "num_classes", int, 1)
    K = _field(header, "num_segments", int, 1)
    count = header.get("count")

    mats, ys, segs, doms = [], [], [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: malformed record ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise DatasetFormatError(f"line {lineno}: record must be an object")
        m = _field(rec, "m", list, lineno)
        if len(m) != dim * dim or not all(isinstance(x, (int, float)) for x in m):
            raise DatasetFormatError(f"line {lineno}: field 'm' must hold {dim * dim} numbers")
        y = _field(rec, "y", int, lineno)
        s = _field(rec, "seg", int, lineno)
        dom = _field(rec, "dom", str, lineno)
        if dom not in DOMAINS:
            raise DatasetFormatError(f"line {lineno}: unknown domain {dom!r}")
        if not 0 <= y < L:
            raise DatasetFormatError(f"line {lineno}: label {y} outside [0, {L})")
        if not 0 <= s < K:
            raise DatasetFormatError(f"line {lineno}: segment {s} outside [0, {K})")
        mats.append(np.array(m, dtype=float).reshape(dim, dim))
        ys.append(y)
        segs.append(s)
        doms.add(dom)
    if count is not None and count != len(mats):
        raise DatasetFormatError(f"{path}: header announces {count} samples, found {len(mats)}")
    if len(doms) > 1:
        raise DatasetFormatError(f"{path}: mixed domains {sorted(doms)}")
    for idx, m in enumerate(mats):
        try:
            check_sym(m)
            check_spd(m)
        except SpdDomainError as exc:
            raise SpdDomainError(f"sample {idx}: {exc}") from exc
    matrices = np.array(mats).reshape(len(mats), dim, dim)
    return SpdDataset(matrices, ys, segs, doms.pop() if doms else "source", L, K)
