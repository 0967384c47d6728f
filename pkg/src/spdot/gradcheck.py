"""Central finite-difference checks for every layer and both training objectives."""

from __future__ import annotations

import numpy as np

from .losses import LossWeights, TrainBatch, deepjdot_objective, dot_objective
from .spd import sym
from .spdnet import BiMap, DotModel, LogEig, ReEig, feature_dim, init_model

FD_STEP = 1e-5


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / den)


def fd_sym_grad(f, S, h: float = FD_STEP) -> np.ndarray:
    """Symmetric gradient of a scalar function of a symmetric matrix, by central differences."""
    n = S.shape[0]
    G = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            d = (f(S + h * E) - f(S - h * E)) / (2 * h)
            G[i, j] = G[j, i] = d if i == j else d / 2
    return G


def fd_grad(f, x, h: float = FD_STEP) -> np.ndarray:
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def spd_with_spectrum(rng, lam) -> np.ndarray:
    n = len(lam)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return sym((Q * np.asarray(lam)) @ Q.T)


def draw_spectrum(rng, n: int, degenerate: bool, lo: float = 0.5, hi: float = 3.0) -> np.ndarray:
    """Eigenvalues in ``[lo, hi]``; with ``degenerate`` they come in pairs 1e-7 apart."""
    lam = rng.uniform(lo, hi, size=n)
    if degenerate:
        lam[1::2] = lam[0::2][: n // 2] + 1e-7
    return lam


def check_layers(rng, n: int, degenerate: bool) -> dict[str, float]:
    errs = {}
    S = spd_with_spectrum(rng, draw_spectrum(rng, n, degenerate))
    G = sym(rng.standard_normal((n, n)))

    W = np.linalg.qr(rng.standard_normal((n, n)))[0][: max(2, n - 1)]
    Go = sym(rng.standard_normal((W.shape[0],) * 2))
    layer = BiMap(W)
    _, cache = layer.forward(S)
    dW, dS = layer.backward(cache, Go)
    errs["bimap_input"] = rel_err(dS, fd_sym_grad(lambda X: np.sum(Go * BiMap(W).forward(X)[0]), S))
    errs["bimap_weight"] = rel_err(dW, fd_grad(lambda V: np.sum(Go * BiMap(V).forward(S)[0]), W))

    eps = 0.3
    lam = rng.uniform(0.5, 2.0, size=n)
    lam[: n // 2] = rng.uniform(0.05, 0.2, size=n // 2)
    if degenerate:
        lam[n // 2 + 1:] = lam[n // 2] + 1e-7 * np.arange(1, n - n // 2)
    S2 = spd_with_spectrum(rng, lam)
    _, cache = ReEig(eps).forward(S2)
    _, dS = ReEig(eps).backward(cache, G)
    errs["reeig_input"] = rel_err(dS, fd_sym_grad(lambda X: np.sum(G * ReEig(eps).forward(X)[0]), S2))

    _, cache = LogEig().forward(S)
    _, dS = LogEig().backward(cache, G)
    errs["logeig_input"] = rel_err(dS, fd_sym_grad(lambda X: np.sum(G * LogEig().forward(X)[0]), S))
    return errs


def random_model(rng, n: int, num_classes: int = 3, d_out: int | None = None) -> DotModel:
    m = init_model(n, num_classes, d_out=d_out, rng=rng)
    F = feature_dim(m.d_out)
    return DotModel(m.weight, 1e-4, 0.5 * rng.standard_normal((num_classes, F)),
                    0.1 * rng.standard_normal(num_classes))


def random_batch(rng, n: int, num_classes: int, size: int, degenerate: bool) -> TrainBatch:
    src = np.stack([spd_with_spectrum(rng, draw_spectrum(rng, n, degenerate)) for _ in range(size)])
    tgt = np.stack([spd_with_spectrum(rng, draw_spectrum(rng, n, degenerate)) for _ in range(size)])
    labels = np.arange(size) % num_classes
    pseudo = rng.permutation(labels)
    return TrainBatch(src, labels, tgt, pseudo)


def _param_errs(objective, model: DotModel, grads, prefix: str) -> dict[str, float]:
    out = {}
    for name in ("weight", "head_weight", "head_bias"):
        base = getattr(model, name)

        def f(x, name=name):
            m = model.copy()
            setattr(m, name, x)
            return objective(m)

        out[f"{prefix}_{name}"] = rel_err(getattr(grads, name), fd_grad(f, base.copy()))
    return out


def check_objectives(rng, n: int, degenerate: bool) -> dict[str, float]:
    L = 3
    model = random_model(rng, n, L, d_out=n if n % 2 else n - 1)
    batch = random_batch(rng, n, L, 6, degenerate)
    w = LossWeights(alpha1=1.0, alpha2=0.7, alpha3=0.5, jd_alpha1=0.3, jd_alpha2=0.8)
    _, _, grads = dot_objective(model, batch, w)
    errs = _param_errs(lambda m: dot_objective(m, batch, w)[0], model, grads, "dot")

    plan = rng.random((6, 6))
    plan /= plan.sum()
    _, _, grads = deepjdot_objective(model, batch, plan, w)
    errs.update(_param_errs(lambda m: deepjdot_objective(m, batch, plan, w)[0], model, grads, "deepjdot"))
    return errs


def run_gradcheck(seeds: int = 50, base_seed: int = 0) -> dict[str, float]:
    """Max relative error per check over ``seeds`` random draws (dims 3 to 8, every other one near-degenerate)."""
    worst: dict[str, float] = {}
    for s in range(seeds):
        rng = np.random.default_rng(base_seed + s)
        n = 3 + s % 6
        degenerate = s % 2 == 1
        for k, v in {**check_layers(rng, n, degenerate), **check_objectives(rng, n, degenerate)}.items():
            worst[k] = max(worst.get(k, 0.0), v)
    return worst
