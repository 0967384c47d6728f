import numpy as np
import pytest

from spdot.data import SpdDataset, make_synthetic_pair
from spdot.emd import uniform
from spdot.errors import NumericalError
from spdot.gradcheck import random_batch, random_model
from spdot.losses import LossWeights, TrainBatch
from spdot.spd import random_spd, spd_exp, sym
from spdot.spdnet import DotModel, init_model
from spdot.training import (
    HISTORY_FIELDS,
    TrainConfig,
    affine_residual,
    config_from_text,
    config_to_text,
    deepjdot_step,
    domain_gap,
    lift_embedding,
    mode_weights,
    read_config,
    read_history,
    refresh_pseudo_labels,
    train,
    write_history,
)


def two_class_pair(seed=0, n=3, count=30, shift=0.3):
    r = np.random.default_rng(seed)
    centers = [np.zeros((n, n)), np.diag([2.0] + [0.0] * (n - 1))]
    y = np.arange(count) % 2
    logs = np.stack([centers[c] + 0.1 * sym(r.standard_normal((n, n))) for c in y])
    src = SpdDataset(spd_exp(logs), y, np.zeros(count, int), "source", 2, 1)
    tgt = src.with_matrices(spd_exp(logs + shift * np.eye(n)), "target")
    return src, tgt


# config

def test_config_text_round_trip(tmp_path):
    cfg = TrainConfig(epochs=7, batch_size=5, lr=0.25, refresh=3, seed=9, pseudo="network",
                      weights=LossWeights(0.5, 1.5, 2.5, 0.1, 0.2))
    p = tmp_path / "c.cfg"
    p.write_text("# comment\n\n" + config_to_text(cfg))
    assert read_config(p) == cfg


@pytest.mark.parametrize("text", ["epochs", "bogus=1", "epochs=abc", "lr=-1", "alpha2=-3"])
def test_config_errors(text):
    with pytest.raises(ValueError):
        config_from_text(text)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(pseudo="oracle")


def test_mode_weights():
    w = LossWeights(1.0, 2.0, 3.0)
    assert mode_weights("source", w) == LossWeights(1.0, 0.0, 0.0)
    assert mode_weights("mda", w) == LossWeights(1.0, 2.0, 0.0)
    assert mode_weights("cda", w) == LossWeights(1.0, 0.0, 3.0)
    assert mode_weights("mda+cda", w) == w
    with pytest.raises(ValueError):
        mode_weights("coral", w)


# pseudo labels

def test_pseudo_labels_mdm():
    src, _ = two_class_pair()
    assert np.array_equal(refresh_pseudo_labels(src, src.matrices), src.labels)
    one = SpdDataset(src.matrices, np.zeros(len(src), int), src.segments, "source", 1, 1)
    assert np.all(refresh_pseudo_labels(one, src.matrices) == 0)
    a = refresh_pseudo_labels(src, src.matrices[::2])
    assert np.array_equal(a, refresh_pseudo_labels(src, src.matrices[::2]))


def test_pseudo_labels_network(rng):
    src, tgt = two_class_pair()
    m = init_model(3, 2, rng=rng)
    assert np.all(refresh_pseudo_labels(src, tgt.matrices, m, "network") == 0)
    with pytest.raises(ValueError):
        refresh_pseudo_labels(src, tgt.matrices, None, "network")
    with pytest.raises(ValueError):
        refresh_pseudo_labels(src, tgt.matrices, m, "oracle")


# DeepJDOT step

def test_deepjdot_step_zero_lr(rng):
    m = random_model(rng, 3, 2)
    b = random_batch(rng, 3, 2, 5, False)
    m2, plan, _ = deepjdot_step(m, b, LossWeights(), 0.0)
    for k, v in m.params().items():
        assert np.array_equal(v, m2.params()[k])
    assert np.allclose(plan.sum(0), uniform(5)) and np.allclose(plan.sum(1), uniform(5))


def test_deepjdot_step_identical_domains_identity_plan(rng):
    m = random_model(rng, 3, 2)
    b = random_batch(rng, 3, 2, 6, False)
    _, plan, _ = deepjdot_step(m, TrainBatch(b.source, b.labels, b.source), LossWeights(), 0.1)
    assert np.allclose(plan, np.eye(6) / 6)


def test_deepjdot_steps_descend(rng):
    m = random_model(rng, 3, 2)
    b = random_batch(rng, 3, 2, 6, False)
    w = LossWeights()
    losses = []
    for _ in range(10):
        m, plan, loss = deepjdot_step(m, b, w, 1e-3)
        losses.append(loss)
    ups = sum(b2 > a for a, b2 in zip(losses, losses[1:]))
    assert ups <= 2 and losses[-1] < losses[0]


# training loop

def test_zero_epochs_leaves_model(rng):
    src, tgt = two_class_pair()
    m = init_model(3, 2, rng=rng)
    m2, hist = train(m, src, tgt, TrainConfig(epochs=0))
    assert hist == [] and all(np.array_equal(v, m2.params()[k]) for k, v in m.params().items())


def test_alpha_zero_matches_source_only_bitwise(rng):
    src, tgt = two_class_pair()
    m = init_model(3, 2, rng=rng)
    cfg = TrainConfig(epochs=5, batch_size=10, lr=0.1, weights=LossWeights(1.0, 0.0, 0.0))
    a, ha = train(m, src, tgt, cfg, mode="mda")
    b, hb = train(m, src, tgt, cfg, mode="source")
    assert all(np.array_equal(v, b.params()[k]) for k, v in a.params().items())
    assert ha == hb


def test_training_is_reproducible(rng):
    src, tgt = two_class_pair()
    m = init_model(3, 2, rng=rng)
    cfg = TrainConfig(epochs=4, batch_size=8, lr=0.05, weights=LossWeights(1.0, 1.0, 1.0))
    for mode in ("mda+cda", "deepjdot"):
        a, ha = train(m, src, tgt, cfg, mode=mode)
        b, hb = train(m, src, tgt, cfg, mode=mode)
        assert ha == hb
        assert all(np.array_equal(v, b.params()[k]) for k, v in a.params().items())


@pytest.mark.parametrize("mode", ["source", "mda", "cda", "mda+cda", "deepjdot"])
def test_modes_learn_source_labels(mode):
    src, tgt = two_class_pair()
    m = init_model(3, 2, rng=np.random.default_rng(0))
    cfg = TrainConfig(epochs=40, batch_size=10, lr=0.1, weights=LossWeights(1.0, 0.5, 0.5, 0.1, 0.5))
    m2, hist = train(m, src, tgt, cfg, mode=mode)
    assert len(hist) == 40 and set(hist[0]) == set(HISTORY_FIELDS)
    assert hist[-1]["source_acc"] == 1.0
    assert np.linalg.norm(m2.weight @ m2.weight.T - np.eye(3)) <= 1e-8


def test_mda_mode_shrinks_gap_on_synthetic_pair():
    src, tgt = make_synthetic_pair()
    m = init_model(2, 1, d_out=1, rng=np.random.default_rng(42))
    cfg = TrainConfig(epochs=200, batch_size=50, lr=0.05, weights=LossWeights(1.0, 1.0, 0.0))
    gap0 = domain_gap(m, src, tgt)
    m2, hist = train(m, src, tgt, cfg, mode="mda")
    assert domain_gap(m2, src, tgt) <= gap0 / 10
    mda = [h["mda"] for h in hist]
    assert mda[-1] < mda[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts(rng):
    src, tgt = two_class_pair()
    m = init_model(3, 2, rng=rng)
    bad = DotModel(m.weight, m.eps, np.full_like(m.head_weight, np.inf), m.head_bias)
    with pytest.raises(NumericalError, match="epoch 1"):
        train(bad, src, tgt, TrainConfig(epochs=1, batch_size=10))


def test_history_csv_round_trip(tmp_path):
    src, tgt = two_class_pair()
    _, hist = train(init_model(3, 2), src, tgt, TrainConfig(epochs=3, batch_size=10), "mda")
    p = tmp_path / "h.csv"
    write_history(p, hist)
    assert p.read_text().splitlines()[0] == ",".join(HISTORY_FIELDS)
    assert read_history(p) == hist


# subspace analysis

def test_affine_residual():
    r = np.random.default_rng(0)
    line = np.outer(r.standard_normal(20), [1.0, 2.0, -1.0]) + [3.0, 0.0, 1.0]
    assert affine_residual(line, 1) <= 1e-12
    assert affine_residual(r.standard_normal((20, 3)), 1) > 0.5


def test_lift_embedding_is_spd_and_rank_structured(rng):
    m = init_model(4, 2, d_out=2, rng=rng)
    S = np.stack([random_spd(rng, 4) for _ in range(3)])
    L = lift_embedding(m, S)
    assert np.linalg.eigvalsh(L).min() >= m.eps * (1 - 1e-9)
    P = m.weight.T @ m.weight
    # lifted matrices act as eps on the discarded subspace
    Q = np.eye(4) - P
    assert np.allclose(Q @ L @ Q, m.eps * Q, atol=1e-12)
