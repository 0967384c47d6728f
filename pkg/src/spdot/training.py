"""Training loop for the SPD network with the DOT losses."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import SpdDataset
from .emd import solve_emd, uniform
from .errors import NumericalError
from .losses import LossWeights, TrainBatch, deepjdot_objective, dot_objective, mda_from_logs
from .spd import LEM
from .spdnet import DotModel, embed, forward, mdm_fit, mdm_predict, predict, stiefel_update
from .transport import pairwise_sq_dists

log = logging.getLogger(__name__)

MODES = ("source", "mda", "cda", "mda+cda", "deepjdot")
HISTORY_FIELDS = ("epoch", "ce", "mda", "cda", "total", "source_acc", "target_acc")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-2
    refresh: int = 1
    seed: int = 42
    pseudo: str = "mdm"
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.lr >= 0 or self.refresh < 1:
            raise ValueError("epochs >= 0, batch_size >= 1, lr >= 0 and refresh >= 1 required")
        if self.pseudo not in ("mdm", "network"):
            raise ValueError(f"pseudo must be 'mdm' or 'network', got {self.pseudo!r}")


def config_to_text(cfg: TrainConfig) -> str:
    flat = {k: v for k, v in asdict(cfg).items() if k != "weights"}
    flat.update(asdict(cfg.weights))
    return "".join(f"{k}={v}\n" for k, v in flat.items())


def config_from_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse a flat ``key=value`` file; blank lines and ``#`` comments are ignored."""
    base = base or TrainConfig()
    top = {f.name: f.type for f in fields(TrainConfig) if f.name != "weights"}
    wkeys = {f.name for f in fields(LossWeights)}
    vals = {k: v for k, v in asdict(base).items() if k != "weights"}
    wvals = asdict(base.weights)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        try:
            if key in wkeys:
                wvals[key] = float(val)
            elif key in top:
                kind = type(vals[key])
                vals[key] = kind(val) if kind is not int else int(val)
            else:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if "unknown key" in str(exc):
                raise
            raise ValueError(f"config line {lineno}: bad value for {key!r}: {val!r}") from exc
    return TrainConfig(weights=LossWeights(**wvals), **vals)


def refresh_pseudo_labels(source: SpdDataset, target_mats, model: DotModel | None = None,
                          method: str = "mdm") -> np.ndarray:
    """Pseudo-labels for target samples from MDM fitted on the source, or from the network."""
    if method == "mdm":
        cents = mdm_fit(source.matrices, source.labels, source.num_classes, LEM)
        return np.atleast_1d(mdm_predict(cents, target_mats, LEM))
    if method == "network":
        if model is None:
            raise ValueError("network pseudo-labels need a model")
        return np.atleast_1d(predict(model, target_mats))
    raise ValueError(f"unknown pseudo-label method {method!r}")


def apply_grads(model: DotModel, grads, lr: float) -> DotModel:
    if lr == 0:
        return model.copy()
    for g in (grads.head_weight, grads.head_bias):
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite head gradient")
    return DotModel(
        stiefel_update(model.weight, grads.weight, lr),
        model.eps,
        model.head_weight - lr * grads.head_weight,
        model.head_bias - lr * grads.head_bias,
    )


def batch_plan(model: DotModel, batch: TrainBatch) -> np.ndarray:
    """EMD plan between the embedded source and target batches under squared LEM cost."""
    XS = forward(model, batch.source)[1].tangent
    XT = forward(model, batch.target)[1].tangent
    return solve_emd(uniform(len(XS)), uniform(len(XT)), pairwise_sq_dists(XS, XT))


def deepjdot_step(model: DotModel, batch: TrainBatch, weights: LossWeights, lr: float):
    """Solve the batch plan on the current embeddings, then take one gradient step with it fixed.

    Returns ``(new_model, plan, loss_before_step)``.
    """
    plan = batch_plan(model, batch)
    loss, _, grads = deepjdot_objective(model, batch, plan, weights)
    return apply_grads(model, grads, lr), plan, loss


def mode_weights(mode: str, weights: LossWeights) -> LossWeights:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    w = LossWeights(**asdict(weights))
    if mode in ("source", "cda"):
        w.alpha2 = 0.0
    if mode in ("source", "mda"):
        w.alpha3 = 0.0
    return w


def _accuracy(model, data: SpdDataset) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(np.atleast_1d(predict(model, data.matrices)) == data.labels))


def domain_gap(model: DotModel, source: SpdDataset, target: SpdDataset) -> float:
    """LEM distance between the Log-Euclidean means of the embedded domains."""
    _, cs = forward(model, source.matrices)
    _, ct = forward(model, target.matrices)
    return mda_from_logs(cs.tangent, ct.tangent)


def train(model: DotModel, source: SpdDataset, target: SpdDataset, config: TrainConfig,
          mode: str = "mda"):
    """Mini-batch training; returns the trained model and a per-epoch history.

    Each epoch shuffles both domains with the configured seed and pairs
    equally sized source and target batches (the longer domain is truncated).
    Target labels are only read to report ``target_acc``.
    """
    weights = mode_weights(mode, config.weights)
    needs_pseudo = mode in ("cda", "mda+cda") and weights.alpha3 > 0
    rng = np.random.default_rng(config.seed)
    model = model.copy()
    history = []
    nS, nT = len(source), len(target)
    bs = min(config.batch_size, nS, nT)
    steps = max(1, min(nS, nT) // bs)
    pseudo = None

    for epoch in range(1, config.epochs + 1):
        if needs_pseudo and (pseudo is None or (epoch - 1) % config.refresh == 0):
            pseudo = refresh_pseudo_labels(source, target.matrices, model, config.pseudo)
        ps = rng.permutation(nS)
        pt = rng.permutation(nT)
        acc = {"ce": 0.0, "mda": 0.0, "cda": 0.0, "total": 0.0}
        for step in range(steps):
            si = ps[step * bs:(step + 1) * bs]
            ti = pt[step * bs:(step + 1) * bs]
            batch = TrainBatch(
                source.matrices[si], source.labels[si], target.matrices[ti],
                None if pseudo is None else pseudo[ti],
            )
            if mode == "deepjdot":
                loss, _, grads = deepjdot_objective(model, batch, batch_plan(model, batch), weights)
                _, comps, _ = dot_objective(model, batch, LossWeights(1.0, 1.0, 0.0))
                comps["total"] = loss
            else:
                loss, comps, grads = dot_objective(model, batch, weights)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}: {comps}")
            model = apply_grads(model, grads, config.lr)
            for k in acc:
                acc[k] += comps[k] / steps
        row = {"epoch": epoch, **acc,
               "source_acc": _accuracy(model, source), "target_acc": _accuracy(model, target)}
        history.append(row)
        log.debug("epoch %d: %s", epoch, row)
    return model, history


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def lift_embedding(model: DotModel, S) -> np.ndarray:
    """Embedding pulled back to the input size: ``W^T Z W + eps (I - W^T W)``.

    For ``d_out < d_in`` this places the learned low-dimensional SPD features
    inside the input cone, with the discarded directions clamped at the ReEig
    floor, so both domains can be plotted and compared in the original space.
    """
    Z = embed(model, S)
    W = model.weight
    return np.swapaxes(W, -1, -2) @ Z @ W + model.eps * (np.eye(model.d_in) - W.T @ W)


def affine_residual(points: np.ndarray, rank: int) -> float:
    """Frobenius residual of ``points`` (rows) from their best ``rank``-dimensional affine fit."""
    P = points.reshape(points.shape[0], -1)
    s = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    return float(np.sqrt(np.sum(s[rank:] ** 2)))


def read_config(path) -> TrainConfig:
    return config_from_text(Path(path).read_text())
