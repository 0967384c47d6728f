"""Domain adaptation losses on Log-Euclidean features.

MDA compares the Log-Euclidean means of a source and a target batch; CDA does
the same per (pseudo-)class; DeepJDOT couples samples through a transport plan.
Each loss has a ``*_grad`` companion working directly on log-domain features
``X = log(S)`` so it can be chained into :func:`spdot.spdnet.backward`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError
from .spd import spd_log
from .spdnet import DotModel, Grads, backward, cross_entropy, forward
from .transport import pairwise_sq_dists


@dataclass
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 0.0
    alpha3: float = 0.0
    jd_alpha1: float = 1.0
    jd_alpha2: float = 1.0

    def __post_init__(self):
        for name, val in vars(self).items():
            if not val >= 0:
                raise ValueError(f"loss weight {name} must be nonnegative, got {val}")


def _logs(batch) -> np.ndarray:
    arr = np.asarray(batch, dtype=float)
    if arr.ndim != 3 or arr.shape[0] == 0:
        raise ValueError("empty batch")
    return spd_log(arr)


def mda_from_logs(XS: np.ndarray, XT: np.ndarray) -> float:
    return float(np.linalg.norm(XS.mean(axis=0) - XT.mean(axis=0)))


def mda_loss(embedS, embedT) -> float:
    """Frobenius distance between the mean logarithms of two batches."""
    return mda_from_logs(_logs(embedS), _logs(embedT))


def mda_sq_grad(XS: np.ndarray, XT: np.ndarray):
    """``MDA**2`` and its gradients with respect to each log-feature."""
    D = XS.mean(axis=0) - XT.mean(axis=0)
    gS = np.broadcast_to(2.0 * D / XS.shape[0], XS.shape)
    gT = np.broadcast_to(-2.0 * D / XT.shape[0], XT.shape)
    return float(np.sum(D * D)), gS, gT


def _check_labels(labels, num_classes, n):
    labels = np.asarray(labels, dtype=int).ravel()
    if labels.size != n:
        raise DimensionError(f"expected {n} labels, got {labels.size}")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels


def _class_diffs(XS, yS, XT, yT, num_classes):
    out = []
    for c in range(num_classes):
        ms, mt = yS == c, yT == c
        if ms.any() and mt.any():
            out.append((c, ms, mt, XS[ms].mean(axis=0) - XT[mt].mean(axis=0)))
    return out


def cda_from_logs(XS, yS, XT, yT, num_classes: int) -> float:
    yS = _check_labels(yS, num_classes, XS.shape[0])
    yT = _check_labels(yT, num_classes, XT.shape[0])
    return float(sum(np.linalg.norm(D) for *_, D in _class_diffs(XS, yS, XT, yT, num_classes)))


def cda_loss(embedS, labelsS, embedT, pseudoT, num_classes: int) -> float:
    """Sum over classes present in both batches of the per-class MDA.

    Classes missing from either batch contribute nothing.
    """
    return cda_from_logs(_logs(embedS), labelsS, _logs(embedT), pseudoT, num_classes)


def cda_sq_grad(XS, yS, XT, yT, num_classes: int):
    """``CDA**2`` and its gradients; classes with identical means get a zero subgradient."""
    yS = _check_labels(yS, num_classes, XS.shape[0])
    yT = _check_labels(yT, num_classes, XT.shape[0])
    diffs = _class_diffs(XS, yS, XT, yT, num_classes)
    cda = sum(np.linalg.norm(D) for *_, D in diffs)
    gS = np.zeros_like(XS)
    gT = np.zeros_like(XT)
    for _, ms, mt, D in diffs:
        nrm = np.linalg.norm(D)
        if nrm == 0.0:
            continue
        U = 2.0 * cda * D / nrm
        gS[ms] += U / ms.sum()
        gT[mt] -= U / mt.sum()
    return float(cda * cda), gS, gT


def dot_total_loss(logitsS, labelsS, embedS, embedT, pseudoT, weights: LossWeights,
                   num_classes: int | None = None) -> float:
    """``alpha1 * CE + alpha2 * MDA**2 + alpha3 * CDA**2``."""
    logitsS = np.atleast_2d(logitsS)
    L = logitsS.shape[1] if num_classes is None else num_classes
    total = 0.0
    if weights.alpha1:
        total += weights.alpha1 * cross_entropy(logitsS, labelsS)[0]
    if weights.alpha2:
        total += weights.alpha2 * mda_loss(embedS, embedT) ** 2
    if weights.alpha3:
        total += weights.alpha3 * cda_loss(embedS, labelsS, embedT, pseudoT, L) ** 2
    return total


@dataclass
class TrainBatch:
    source: np.ndarray
    labels: np.ndarray
    target: np.ndarray
    pseudo: np.ndarray | None = None

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.source.shape[0] == 0:
            raise ValueError("source batch is empty")
        if self.labels.shape != (self.source.shape[0],):
            raise DimensionError("one label per source sample required")
        if self.pseudo is not None:
            self.pseudo = np.asarray(self.pseudo, dtype=int)


def dot_objective(model: DotModel, batch: TrainBatch, weights: LossWeights):
    """Value, components and parameter gradients of the combined CE/MDA/CDA objective."""
    logitsS, cS = forward(model, batch.source)
    comps = {"ce": 0.0, "mda": 0.0, "cda": 0.0}
    gl = np.zeros_like(logitsS)
    gXS = np.zeros_like(cS.tangent)
    gXT = None
    total = 0.0
    ce, g = cross_entropy(logitsS, batch.labels)
    comps["ce"] = ce
    if weights.alpha1:
        total += weights.alpha1 * ce
        gl = weights.alpha1 * g

    need_target = weights.alpha2 or weights.alpha3
    if need_target:
        _, cT = forward(model, batch.target)
        XS, XT = cS.tangent, cT.tangent
        gXT = np.zeros_like(XT)
        comps["mda"] = mda_from_logs(XS, XT)
        if weights.alpha2:
            v, a, b = mda_sq_grad(XS, XT)
            total += weights.alpha2 * v
            gXS = gXS + weights.alpha2 * a
            gXT = gXT + weights.alpha2 * b
        if weights.alpha3:
            if batch.pseudo is None:
                raise ValueError("CDA needs target pseudo-labels")
            v, a, b = cda_sq_grad(XS, batch.labels, XT, batch.pseudo, model.num_classes)
            comps["cda"] = float(np.sqrt(v))
            total += weights.alpha3 * v
            gXS = gXS + weights.alpha3 * a
            gXT = gXT + weights.alpha3 * b

    grads = backward(model, cS, gl, gXS)
    if gXT is not None:
        gt = backward(model, cT, None, gXT)
        grads = Grads(grads.weight + gt.weight, grads.head_weight + gt.head_weight,
                      grads.head_bias + gt.head_bias)
    comps["total"] = total
    return total, comps, grads


def _pair_ce(logitsT, labels):
    """``CE[i, j] = -log softmax(logitsT[j])[labels[i]]`` and the softmax of ``logitsT``."""
    shifted = logitsT - logitsT.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return -logp[:, labels].T, np.exp(logp)


def deepjdot_objective(model: DotModel, batch: TrainBatch, plan, weights: LossWeights):
    """DeepJDOT objective with a fixed plan, its components and parameter gradients.

    ``CE(y, f(g(S))) + sum_ij plan_ij (jd_alpha1 d_LEM(g(S_i), g(T_j))**2
    + jd_alpha2 CE(y_i, f(g(T_j))))``.
    """
    P = np.asarray(plan, dtype=float)
    nS, nT = batch.source.shape[0], batch.target.shape[0]
    if P.shape != (nS, nT):
        raise DimensionError(f"plan has shape {P.shape}, batch is {nS}x{nT}")
    logitsS, cS = forward(model, batch.source)
    logitsT, cT = forward(model, batch.target)
    XS, XT = cS.tangent, cT.tangent

    ce, glS = cross_entropy(logitsS, batch.labels)
    D2 = pairwise_sq_dists(XS, XT)
    pce, probT = _pair_ce(logitsT, batch.labels)
    dist_term = float(np.sum(P * D2))
    label_term = float(np.sum(P * pce))
    total = ce + weights.jd_alpha1 * dist_term + weights.jd_alpha2 * label_term

    a1 = weights.jd_alpha1
    rs, cs = P.sum(axis=1), P.sum(axis=0)
    gXS = 2.0 * a1 * (rs[:, None, None] * XS - np.einsum("ij,jkl->ikl", P, XT))
    gXT = 2.0 * a1 * (cs[:, None, None] * XT - np.einsum("ij,ikl->jkl", P, XS))
    onehot = np.eye(model.num_classes)[batch.labels]
    glT = weights.jd_alpha2 * (cs[:, None] * probT - P.T @ onehot)

    gs = backward(model, cS, glS, gXS)
    gt = backward(model, cT, glT, gXT)
    grads = Grads(gs.weight + gt.weight, gs.head_weight + gt.head_weight, gs.head_bias + gt.head_bias)
    comps = {"ce": ce, "distance": dist_term, "label": label_term, "total": total}
    return total, comps, grads


def deepjdot_loss(model: DotModel, batch: TrainBatch, plan, weights: LossWeights) -> float:
    return deepjdot_objective(model, batch, plan, weights)[0]


def multi_source_loss(per_source_terms: Sequence, per_source_weights: Sequence,
                      squared: bool = True) -> float:
    """Weighted sum of per-source ``(CE, MDA, CDA)`` terms.

    With ``squared=True`` the MDA and CDA terms enter squared, as in the single
    source objective; ``squared=False`` keeps them as plain distances.
    """
    if len(per_source_terms) == 0:
        raise ValueError("need at least one source")
    if len(per_source_terms) != len(per_source_weights):
        raise DimensionError("one weight triple per source required")
    p = 2 if squared else 1
    total = 0.0
    for (ce, mda, cda), w in zip(per_source_terms, per_source_weights):
        a1, a2, a3 = (w.alpha1, w.alpha2, w.alpha3) if isinstance(w, LossWeights) else w
        total += a1 * ce + a2 * mda**p + a3 * cda**p
    return total
