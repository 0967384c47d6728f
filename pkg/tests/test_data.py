import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spdot.data import (
    DEFAULT_SHIFT_W,
    GaussianSpec,
    SpdDataset,
    apply_bimap_shift,
    band_means,
    diagonal_minimal,
    distance_table,
    load_dataset,
    make_banded_dataset,
    make_synthetic_pair,
    sample_spd_gaussian,
    save_dataset,
    sym_basis,
)
from spdot.errors import DatasetFormatError, DimensionError, SpdDomainError
from spdot.spd import lem_distance, lem_frechet_mean, random_spd, spd_log

FIXTURES = Path(__file__).parent / "fixtures"


# sampling

def test_sym_basis_is_orthonormal():
    for n in (2, 3, 4):
        B = sym_basis(n).reshape(-1, n * n)
        assert B.shape[0] == n * (n + 1) // 2
        assert np.allclose(B @ B.T, np.eye(B.shape[0]), atol=1e-14)
        T = sym_basis(n, traceless=True)
        assert T.shape[0] == n * (n + 1) // 2 - 1
        assert np.allclose(np.trace(T, axis1=1, axis2=2), 0, atol=1e-14)


def test_gaussian_tiny_sigma_collapses_to_center(rng):
    C = random_spd(rng, 3)
    X = sample_spd_gaussian(GaussianSpec(C, 1e-12, 5))
    assert np.allclose(X, C, atol=1e-10)


def test_gaussian_law_of_large_numbers():
    sigma, N = 0.4, 10_000
    X = spd_log(sample_spd_gaussian(GaussianSpec(np.eye(3), sigma, N, seed=3)))
    assert np.all(np.abs(X.mean(axis=0)) <= 3 * sigma / np.sqrt(N))


def test_gaussian_chart_is_frobenius_isometric():
    # per-direction variance sigma^2 in the orthonormal basis: E||X||_F^2 = d sigma^2
    sigma, N, n = 0.5, 20_000, 3
    X = spd_log(sample_spd_gaussian(GaussianSpec(np.eye(n), sigma, N, seed=5)))
    d = n * (n + 1) // 2
    assert np.mean(np.sum(X**2, axis=(1, 2))) == pytest.approx(d * sigma**2, rel=0.02)


def test_gaussian_deterministic_and_valid():
    spec = GaussianSpec(np.eye(2), 0.4, 50)
    a, b = sample_spd_gaussian(spec), sample_spd_gaussian(spec)
    assert np.array_equal(a, b) and a.shape == (50, 2, 2)
    assert np.linalg.eigvalsh(a).min() > 0
    with pytest.raises(ValueError):
        GaussianSpec(np.eye(2), 0.0, 5)


def test_bimap_shift_examples(rng):
    S = np.stack([random_spd(rng, 2) for _ in range(3)])
    assert np.array_equal(apply_bimap_shift(np.eye(2), S), S)
    out = apply_bimap_shift(DEFAULT_SHIFT_W, np.eye(2)[None])[0]
    assert np.allclose(out, [[1.25, 1.0], [1.0, 1.25]], atol=1e-15)
    with pytest.raises((ValueError, SpdDomainError)):
        apply_bimap_shift(np.array([[1.0, 1.0], [1.0, 1.0]]), S)


@given(st.integers(0, 2**32 - 1))
def test_bimap_shift_preserves_pd(seed):
    r = np.random.default_rng(seed)
    W = r.standard_normal((3, 3)) + 3 * np.eye(3)
    S = np.stack([random_spd(r, 3) for _ in range(5)])
    assert np.linalg.eigvalsh(apply_bimap_shift(W, S)).min() > 0


def test_synthetic_pair_default_config():
    src, tgt = make_synthetic_pair()
    assert len(src) == len(tgt) == 50 and src.dim == 2
    assert src.domain == "source" and tgt.domain == "target"
    assert np.allclose(tgt.matrices, DEFAULT_SHIFT_W @ src.matrices @ DEFAULT_SHIFT_W.T, atol=1e-14)


# bands and distance tables

def test_banded_zero_shift_is_identical():
    spec = GaussianSpec(np.eye(3), 0.3, 10)
    src, tgt = make_banded_dataset(3, spec, 3.0, 0.0)
    assert np.array_equal(src.matrices, tgt.matrices)
    assert np.allclose(np.diag(distance_table(src, tgt)), 0, atol=1e-12)


def test_banded_three_bands_diagonal_minimal():
    spec = GaussianSpec(np.eye(3), 0.3, 20)
    src, tgt = make_banded_dataset(3, spec, 3.0, 0.3)
    T = distance_table(src, tgt)
    assert diagonal_minimal(T).all()
    assert np.allclose(np.diag(T), 0.3, atol=1e-10)


@given(st.integers(2, 10), st.floats(0.5, 2.0), st.floats(0.01, 0.45), st.integers(0, 1000))
def test_banded_guaranteed_mode_always_diagonal_minimal(bands, sep, frac, seed):
    spec = GaussianSpec(np.eye(4), 0.3, 5)
    src, tgt = make_banded_dataset(bands, spec, sep, frac * sep, seed=seed)
    assert diagonal_minimal(distance_table(src, tgt)).all()


def test_band_means_are_exact_centers():
    spec = GaussianSpec(np.eye(4), 0.4, 12)
    src, _ = make_banded_dataset(5, spec, 1.0, 0.2)
    dirs = sym_basis(4, traceless=True)
    M = spd_log(band_means(src))
    assert np.allclose(M[0], 0, atol=1e-12)
    for k in range(1, 5):
        assert np.allclose(M[k], k * dirs[k - 1], atol=1e-12)


def test_adversarial_mode_fails_check():
    spec = GaussianSpec(np.eye(4), 0.3, 10)
    src, tgt = make_banded_dataset(9, spec, 1.0, 2.0, adversarial=True)
    assert not diagonal_minimal(distance_table(src, tgt)).any()


def test_distance_table_oracle_and_symmetry():
    spec = GaussianSpec(np.eye(3), 0.3, 8)
    src, tgt = make_banded_dataset(4, spec, 1.5, 0.3, seed=2)
    T = distance_table(src, tgt)
    oracle = [[lem_distance(lem_frechet_mean(src.segment(a)), lem_frechet_mean(tgt.segment(b)))
               for b in range(4)] for a in range(4)]
    assert np.allclose(T, oracle, atol=1e-12)
    assert np.allclose(distance_table(tgt, src), T.T, atol=1e-12)


def test_banded_parameter_errors():
    spec = GaussianSpec(np.eye(2), 0.3, 5)
    with pytest.raises(ValueError):
        make_banded_dataset(4, spec, 1.0, 0.1)  # 2x2 supports 3 bands
    with pytest.raises(ValueError):
        make_banded_dataset(2, spec, 1.0, 1.5)
    with pytest.raises(ValueError):
        make_banded_dataset(3, spec, 40.0, 0.1)


def test_distance_table_errors(rng):
    spec = GaussianSpec(np.eye(3), 0.3, 4)
    src, _ = make_banded_dataset(3, spec, 1.0, 0.1)
    other, _ = make_banded_dataset(2, spec, 1.0, 0.1)
    with pytest.raises(DimensionError):
        distance_table(src, other)
    empty = SpdDataset(src.matrices[:4], src.labels[:4], src.segments[:4], "source", 2, 3)
    with pytest.raises(ValueError, match="segment 1"):
        distance_table(empty, empty)


# files

def test_round_trip_is_bit_exact(tmp_path):
    src, tgt = make_synthetic_pair(num_classes=3)
    for d in (src, tgt):
        p = tmp_path / f"{d.domain}.jsonl"
        save_dataset(p, d)
        assert load_dataset(p).equals(d)


def test_round_trip_banded(tmp_path):
    src, _ = make_banded_dataset(5, GaussianSpec(np.eye(3), 0.3, 6), 1.0, 0.2)
    save_dataset(tmp_path / "b.jsonl", src)
    assert load_dataset(tmp_path / "b.jsonl").equals(src)


def test_fixture_parses_to_expected_record():
    d = load_dataset(FIXTURES / "one_sample.jsonl")
    assert d.domain == "target" and len(d) == 1
    assert d.num_classes == 3 and d.num_segments == 2
    assert np.array_equal(d.matrices[0], [[2.0, 0.5], [0.5, 1.25]])
    assert d.labels[0] == 2 and d.segments[0] == 1


def test_saved_schema(tmp_path):
    src, _ = make_synthetic_pair(count=3)
    save_dataset(tmp_path / "s.jsonl", src)
    lines = (tmp_path / "s.jsonl").read_text().splitlines()
    header = json.loads(lines[0])
    assert header == {"version": 1, "dim": 2, "num_classes": 1, "num_segments": 1, "count": 3}
    rec = json.loads(lines[1])
    assert set(rec) == {"m", "y", "dom", "seg"} and len(rec["m"]) == 4
    assert list(rec) == sorted(rec)


def _write(tmp_path, text):
    p = tmp_path / "bad.jsonl"
    p.write_text(text)
    return p


HEADER = '{"count": 1, "dim": 2, "num_classes": 1, "num_segments": 1, "version": 1}\n'


@pytest.mark.parametrize("body, match", [
    ("", "empty"),
    ("not json\n", "line 1"),
    ('{"dim": 2}\n', "line 1: missing field 'version'"),
    (HEADER.replace('"version": 1', '"version": 9'), "version 9"),
    (HEADER + '{"m": [1, 0, 0, 1], "y": 0, "dom": "source"', "line 2: malformed"),
    (HEADER + '{"m": [1, 0, 0], "y": 0, "dom": "source", "seg": 0}\n', "line 2: field 'm'"),
    (HEADER + '{"m": [1, 0, 0, 1], "y": 4, "dom": "source", "seg": 0}\n', "line 2: label"),
    (HEADER + '{"m": [1, 0, 0, 1], "y": 0, "dom": "other", "seg": 0}\n', "line 2: unknown domain"),
    (HEADER + '{"m": [1, 0, 0, 1], "dom": "source", "seg": 0}\n', "line 2: missing field 'y'"),
    (HEADER + '{"m": [1, 0, 0, 1], "y": 1.5, "dom": "source", "seg": 0}\n', "line 2: field 'y'"),
])
def test_malformed_files(tmp_path, body, match):
    with pytest.raises(DatasetFormatError, match=match):
        load_dataset(_write(tmp_path, body))


def test_truncated_file_is_rejected(tmp_path):
    src, _ = make_synthetic_pair(count=4)
    p = tmp_path / "s.jsonl"
    save_dataset(p, src)
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(DatasetFormatError):
        load_dataset(p)


def test_non_spd_sample_names_index(tmp_path):
    rec = '{"m": %s, "y": 0, "dom": "source", "seg": 0}\n'
    body = HEADER.replace('"count": 1', '"count": 2') + rec % "[1, 0, 0, 1]" + rec % "[1, 0, 0, -1]"
    with pytest.raises(SpdDomainError, match="sample 1"):
        load_dataset(_write(tmp_path, body))


def test_dataset_invariants(rng):
    M = np.stack([random_spd(rng, 2) for _ in range(3)])
    with pytest.raises(ValueError):
        SpdDataset(M, [0, 1, 2], [0, 0, 0], "source", 2, 1)
    with pytest.raises(ValueError):
        SpdDataset(M, [0, 0, 0], [0, 0, 1], "source", 1, 1)
    with pytest.raises(ValueError):
        SpdDataset(M, [0, 0, 0], [0, 0, 0], "middle", 1, 1)
    with pytest.raises(DimensionError):
        SpdDataset(np.zeros((3, 2, 3)), [0, 0, 0], [0, 0, 0])
