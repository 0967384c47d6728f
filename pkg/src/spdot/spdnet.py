"""A one-block SPD network (Bi-Map, ReEig, LogEig, linear head) with exact gradients.

All layers work on stacks of matrices ``(B, n, n)``. Gradients with respect to a
symmetric argument are returned as the symmetric matrix ``G`` satisfying
``dL = <G, dS>_F`` for symmetric perturbations ``dS``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DatasetFormatError, DimensionError, NumericalError, SpdDomainError
from .spd import LEM, distance, frechet_mean, sym

GAP_TOL = 1e-9
DEFAULT_EPS = 1e-4
SQRT2 = np.sqrt(2.0)


def _as_stack(S) -> tuple[np.ndarray, bool]:
    S = np.asarray(S, dtype=float)
    if S.ndim == 2:
        return S[None], True
    if S.ndim != 3 or S.shape[1] != S.shape[2]:
        raise DimensionError(f"expected (n, n) or (B, n, n) input, got {S.shape}")
    return S, False


def _t(A):
    return np.swapaxes(A, -1, -2)


def loewner_backward(lam, U, f_lam, df_lam, grad):
    """Backpropagate through ``S -> U diag(f(lam)) U^T``.

    Uses the Daleckii-Krein formula ``U (K o (U^T sym(G) U)) U^T`` with
    ``K_ij = (f_i - f_j) / (lam_i - lam_j)``, replaced by ``f'(lam_i)`` when the
    eigenvalue gap is below ``GAP_TOL``.
    """
    diff = lam[..., :, None] - lam[..., None, :]
    fdiff = f_lam[..., :, None] - f_lam[..., None, :]
    close = np.abs(diff) < GAP_TOL
    K = np.where(close, df_lam[..., :, None], fdiff / np.where(close, 1.0, diff))
    inner = _t(U) @ sym(grad) @ U
    return sym(U @ (K * inner) @ _t(U))


class BiMapCache(NamedTuple):
    S: np.ndarray


class EigCache(NamedTuple):
    lam: np.ndarray
    U: np.ndarray
    f_lam: np.ndarray
    df_lam: np.ndarray


@dataclass
class BiMap:
    weight: np.ndarray

    def forward(self, S):
        W = self.weight
        if S.shape[-1] != W.shape[1]:
            raise DimensionError(f"Bi-Map expects inputs of size {W.shape[1]}, got {S.shape[-1]}")
        if np.linalg.svd(W, compute_uv=False).min() < 1e-10:
            raise SpdDomainError("Bi-Map weight is rank deficient")
        return sym(W @ S @ W.T), BiMapCache(S)

    def backward(self, cache, grad):
        if cache is None:
            raise ValueError("Bi-Map backward called without a forward cache")
        W = self.weight
        G = sym(grad)
        dW = 2.0 * (G @ W @ cache.S)
        if dW.ndim == 3:
            dW = dW.sum(axis=0)
        return dW, sym(W.T @ G @ W)


@dataclass
class ReEig:
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"ReEig threshold must be positive, got {self.eps}")

    def forward(self, S):
        lam, U = np.linalg.eigh(sym(S))
        f = np.maximum(lam, self.eps)
        df = (lam > self.eps).astype(float)
        return sym((U * f[..., None, :]) @ _t(U)), EigCache(lam, U, f, df)

    def backward(self, cache, grad):
        if cache is None:
            raise ValueError("ReEig backward called without a forward cache")
        return None, loewner_backward(*cache, grad)


@dataclass
class LogEig:
    def forward(self, S):
        lam, U = np.linalg.eigh(sym(S))
        if np.any(lam <= 0):
            raise SpdDomainError(f"LogEig input is not positive definite (eigenvalue {lam.min():.3e})")
        f = np.log(lam)
        return sym((U * f[..., None, :]) @ _t(U)), EigCache(lam, U, f, 1.0 / lam)

    def backward(self, cache, grad):
        if cache is None:
            raise ValueError("LogEig backward called without a forward cache")
        return None, loewner_backward(*cache, grad)


def layer_backward(layer, cache, upstream_grad):
    """``(param_grad, input_grad)`` of ``<upstream_grad, layer(S)>``; ``param_grad`` is None for parameter-free layers."""
    return layer.backward(cache, upstream_grad)


def bimap_forward(W, S):
    return BiMap(np.asarray(W, dtype=float)).forward(np.asarray(S, dtype=float))[0]


def reeig_forward(eps, S):
    return ReEig(eps).forward(np.asarray(S, dtype=float))[0]


def logeig_forward(S):
    return LogEig().forward(np.asarray(S, dtype=float))[0]


def triu_vec(X: np.ndarray) -> np.ndarray:
    """Upper-triangular vectorization with off-diagonals scaled by sqrt(2) (Frobenius-isometric)."""
    n = X.shape[-1]
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, SQRT2)
    return X[..., iu[0], iu[1]] * scale


def triu_unvec(v: np.ndarray, n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, 1.0 / SQRT2)
    X = np.zeros(v.shape[:-1] + (n, n))
    X[..., iu[0], iu[1]] = v * scale
    X[..., iu[1], iu[0]] = v * scale
    return X


def triu_vec_backward(g: np.ndarray, n: int) -> np.ndarray:
    """Symmetric gradient with respect to ``X`` given the gradient with respect to ``triu_vec(X)``."""
    return triu_unvec(g, n)


def feature_dim(n: int) -> int:
    return n * (n + 1) // 2


@dataclass
class DotModel:
    """Bi-Map weight, ReEig threshold and linear classifier head."""

    weight: np.ndarray
    eps: float
    head_weight: np.ndarray
    head_bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.head_weight = np.asarray(self.head_weight, dtype=float)
        self.head_bias = np.asarray(self.head_bias, dtype=float)
        d_out = self.weight.shape[0]
        L = self.head_bias.shape[0]
        if self.head_weight.shape != (L, feature_dim(d_out)):
            raise DimensionError(
                f"head weight has shape {self.head_weight.shape}, expected ({L}, {feature_dim(d_out)})"
            )
        if not self.eps > 0:
            raise ValueError("ReEig threshold must be positive")

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.head_bias.shape[0]

    def copy(self) -> "DotModel":
        return DotModel(self.weight.copy(), self.eps, self.head_weight.copy(), self.head_bias.copy())

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "head_weight": self.head_weight, "head_bias": self.head_bias}


def init_model(d_in: int, num_classes: int, d_out: int | None = None, eps: float = DEFAULT_EPS,
               rng: np.random.Generator | None = None) -> DotModel:
    """Random semi-orthogonal Bi-Map weight and a zero head."""
    d_out = d_in if d_out is None else d_out
    if not 0 < d_out <= d_in:
        raise DimensionError(f"need 0 < d_out <= d_in, got d_out={d_out}, d_in={d_in}")
    rng = np.random.default_rng(0) if rng is None else rng
    Q, R = np.linalg.qr(rng.standard_normal((d_in, d_out)))
    Q = Q * np.sign(np.diag(R))
    F = feature_dim(d_out)
    return DotModel(Q.T.copy(), eps, np.zeros((num_classes, F)), np.zeros(num_classes))


@dataclass
class ForwardCache:
    bimap: BiMapCache
    reeig: EigCache
    logeig: EigCache
    embedding: np.ndarray  # post-ReEig SPD features
    tangent: np.ndarray  # LogEig output
    features: np.ndarray
    single: bool = field(default=False)


def embed(model: DotModel, S) -> np.ndarray:
    """Post-ReEig SPD embedding of the inputs."""
    S, single = _as_stack(S)
    Y, _ = BiMap(model.weight).forward(S)
    Z, _ = ReEig(model.eps).forward(Y)
    return Z[0] if single else Z


def forward(model: DotModel, S) -> tuple[np.ndarray, ForwardCache]:
    """Logits and the activations needed by :func:`backward`."""
    S, single = _as_stack(S)
    if S.shape[-1] != model.d_in:
        raise DimensionError(f"model expects {model.d_in}x{model.d_in} inputs, got {S.shape[-1]}")
    Y, c1 = BiMap(model.weight).forward(S)
    Z, c2 = ReEig(model.eps).forward(Y)
    X, c3 = LogEig().forward(Z)
    v = triu_vec(X)
    logits = v @ model.head_weight.T + model.head_bias
    cache = ForwardCache(c1, c2, c3, Z, X, v, single)
    return (logits[0] if single else logits), cache


@dataclass
class Grads:
    weight: np.ndarray
    head_weight: np.ndarray
    head_bias: np.ndarray


def backward(model: DotModel, cache: ForwardCache, grad_logits=None, grad_tangent=None) -> Grads:
    """Parameter gradients given upstream gradients on the logits and/or the LogEig output."""
    if cache is None:
        raise ValueError("backward called without a forward cache")
    B = cache.features.shape[0]
    gl = np.zeros((B, model.num_classes)) if grad_logits is None else np.asarray(grad_logits).reshape(B, -1)
    dA = gl.T @ cache.features
    db = gl.sum(axis=0)
    gX = triu_vec_backward(gl @ model.head_weight, model.d_out)
    if grad_tangent is not None:
        gX = gX + sym(np.asarray(grad_tangent).reshape(gX.shape))
    _, gZ = LogEig().backward(cache.logeig, gX)
    _, gY = ReEig(model.eps).backward(cache.reeig, gZ)
    dW, _ = BiMap(model.weight).backward(cache.bimap, gY)
    return Grads(dW, dA, db)


def predict(model: DotModel, S) -> np.ndarray | int:
    logits, cache = forward(model, S)
    out = np.argmax(np.atleast_2d(logits), axis=1)
    return int(out[0]) if cache.single else out


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.asarray(labels, dtype=int).ravel()
    B, L = logits.shape
    if labels.size != B:
        raise DimensionError("one label per row of logits required")
    if np.any(labels < 0) or np.any(labels >= L):
        raise ValueError(f"labels must lie in [0, {L})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(B), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(B), labels] -= 1.0
    return float(loss), grad / B


def stiefel_update(W, euclidean_grad, lr: float) -> np.ndarray:
    """One Riemannian gradient step for a row-orthonormal ``W`` (``W W^T = I``).

    The gradient is projected to ``G - sym(G W^T) W`` and the step is retracted
    with a sign-fixed QR factorization.
    """
    W = np.asarray(W, dtype=float)
    G = np.asarray(euclidean_grad, dtype=float)
    if not np.all(np.isfinite(G)):
        raise NumericalError("non-finite gradient in Stiefel update")
    xi = G - sym(G @ W.T) @ W
    Q, R = np.linalg.qr((W - lr * xi).T)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return (Q * d).T.copy()


def mdm_fit(mats, labels, num_classes: int | None = None, metric: str = LEM) -> np.ndarray:
    """Per-class Fréchet means (minimum distance to mean classifier)."""
    mats = np.asarray(mats, dtype=float)
    labels = np.asarray(labels, dtype=int)
    L = int(labels.max()) + 1 if num_classes is None else num_classes
    cents = []
    for c in range(L):
        members = mats[labels == c]
        if members.shape[0] == 0:
            raise ValueError(f"class {c} has no training samples")
        cents.append(frechet_mean(members, metric))
    return np.stack(cents)


def mdm_predict(centroids, S, metric: str = LEM):
    """Nearest-centroid class; ties go to the smallest class index."""
    S, single = _as_stack(S)
    d = np.array([[distance(s, c, metric) for c in centroids] for s in S])
    out = np.argmin(d, axis=1)
    return int(out[0]) if single else out


# Checkpoint layout (all little-endian):
#   8 bytes magic b"SPDOTNET", uint32 version, uint32 d_in, uint32 d_out,
#   uint32 num_classes, float64 eps, then float64 blocks in row-major order:
#   weight (d_out x d_in), head_weight (num_classes x d_out(d_out+1)/2), head_bias (num_classes).
CKPT_MAGIC = b"SPDOTNET"
CKPT_VERSION = 1
_HEADER = struct.Struct("<8sIIIId")


def save_model(path, model: DotModel) -> None:
    header = _HEADER.pack(CKPT_MAGIC, CKPT_VERSION, model.d_in, model.d_out, model.num_classes, model.eps)
    blocks = [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.params().values()]
    with open(path, "wb") as fh:
        fh.write(header + b"".join(blocks))


def load_model(path) -> DotModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: checkpoint truncated")
    magic, version, d_in, d_out, L, eps = _HEADER.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise DatasetFormatError(f"{path}: not a model checkpoint")
    if version != CKPT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported checkpoint version {version}")
    F = feature_dim(d_out)
    sizes = [d_out * d_in, L * F, L]
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != sum(sizes):
        raise DatasetFormatError(f"{path}: expected {sum(sizes)} parameters, found {body.size}")
    w, a, b = np.split(body.astype(float), np.cumsum(sizes)[:-1])
    return DotModel(w.reshape(d_out, d_in), eps, a.reshape(L, F), b)
