import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from botdasvr import engine, svr
from botdasvr.engine import PAIRWISE, SEQUENTIAL, BatchRequest, TileSpec

from conftest import random_model

U32 = 2.0 ** -24


def gamma(n, u=U32):
    return n * u / (1 - n * u)


def exact(m, X):
    """Double-precision dense oracle ``X @ w + b`` with ``w = SV^T beta``."""
    return X @ (m.support_vectors.T @ m.betas) + m.bias


def error_bound(m, X):
    """Worst-case single-precision error for any summation order, including
    the rounding of inputs, SVs and betas to single precision."""
    n = m.n_feat + m.n_sv + 5
    mag = np.abs(X) @ np.abs(m.support_vectors.T) @ np.abs(m.betas) + abs(m.bias)
    return gamma(n) * mag


@st.composite
def cases(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    n_sv = draw(st.integers(1, 256))
    n_feat = draw(st.integers(1, 64))
    B = draw(st.integers(1, 64))
    divs = [d for d in range(1, n_sv + 1) if n_sv % d == 0]
    f = draw(st.one_of(st.sampled_from(divs), st.integers(1, n_sv)))
    reduction = draw(st.sampled_from([SEQUENTIAL, PAIRWISE]))
    return seed, n_sv, n_feat, B, f, reduction


def build(seed, n_sv, n_feat, B):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n_sv, n_feat)
    X = rng.uniform(-1.0, 1.0, (B, n_feat))
    return m, X


# -- worked examples ---------------------------------------------------------------


def test_zero_input_gives_bias():
    m = random_model(np.random.default_rng(0), 5, 4)
    X = np.zeros((3, 4))
    assert engine.decide_naive(m, X[0], dtype=np.float64) == m.bias
    np.testing.assert_array_equal(engine.decide_batched(BatchRequest(X, m), TileSpec(2), np.float64), m.bias)


def test_unit_basis_vector():
    e0 = np.eye(4)[0]
    m = svr.SvrModel(e0[None, :], [1.0], 0.0)
    assert engine.decide_naive(m, e0) == 1.0
    assert engine.decide_batched(BatchRequest(e0, m), TileSpec(1))[0] == 1.0


def test_naive_matches_dense_matvec():
    rng = np.random.default_rng(3)
    m = random_model(rng, 8, 5)
    x = rng.uniform(-1, 1, 5)
    want = float(exact(m, x[None, :])[0])
    assert engine.decide_naive(m, x) == pytest.approx(want, rel=1e-5)


def test_distributed_matches_naive_bitwise():
    rng = np.random.default_rng(4)
    m = random_model(rng, 37, 11)
    X = rng.uniform(-1, 1, (6, 11))
    assert engine.decide_distributed(m, X).tobytes() == engine.decide_naive(m, X).tobytes()


@pytest.mark.parametrize("n_sv", [1, 7, 64, 1136])
def test_f1_sequential_is_bit_identical_to_naive(n_sv):
    rng = np.random.default_rng(n_sv)
    m = random_model(rng, n_sv, 30)
    X = rng.uniform(-1, 1, (1, 30))
    a = engine.decide_batched(BatchRequest(X, m), TileSpec(1, SEQUENTIAL))
    assert a.tobytes() == engine.decide_naive(m, X).tobytes()


def test_f1_b1_pairwise_matches_naive():
    rng = np.random.default_rng(8)
    m = random_model(rng, 200, 30)
    x = rng.uniform(-1, 1, (1, 30))
    a = engine.decide_batched(BatchRequest(x, m), TileSpec(1, PAIRWISE), dtype=np.float64)
    assert abs(a[0] - engine.decide_naive(m, x[0], dtype=np.float64)) <= 1e-6


def test_mac_count_examples():
    assert engine.mac_count(1136, 220, 96100) == (24_126_481_600, 24_126_481_600)
    assert engine.mac_count(1, 1, 1) == (2, 2)
    assert engine.mac_count(2, 3, 5) == (40, 40)
    with pytest.raises(ValueError):
        engine.mac_count(0, 1, 1)


def test_flops_per_decision():
    assert engine.flops_per_decision(1136, 220) == 2 * 1136 * 221


# -- tile validation -----------------------------------------------------------------


def test_tile_errors():
    m = random_model(np.random.default_rng(0), 4, 3)
    with pytest.raises(engine.TileError):
        TileSpec(0)
    with pytest.raises(engine.TileError):
        TileSpec(2, "random")
    with pytest.raises(engine.TileError):
        engine.decide_batched(BatchRequest(np.zeros((1, 3)), m), TileSpec(5))


def test_capacity_error():
    m = random_model(np.random.default_rng(0), 100, 3)
    with pytest.raises(engine.CapacityError):
        engine.decide_batched(BatchRequest(np.zeros((50, 3)), m), TileSpec(10), max_bytes=1000)


def test_dimension_error():
    m = random_model(np.random.default_rng(0), 4, 3)
    with pytest.raises(svr.DimensionError):
        BatchRequest(np.zeros((2, 4)), m)
    with pytest.raises(svr.DimensionError):
        engine.decide_naive(m, np.zeros(5))


# -- schedule equivalence ---------------------------------------------------------------


@settings(max_examples=1000)
@given(cases())
def test_batched_equals_naive(case):
    seed, n_sv, n_feat, B, f, reduction = case
    m, X = build(seed, n_sv, n_feat, B)
    want = engine.decide_naive(m, X, dtype=np.float64)
    got = engine.decide_batched(BatchRequest(X, m), TileSpec(f, reduction), dtype=np.float64)
    assert np.max(np.abs(got - want)) <= 1e-4


@settings(max_examples=300)
@given(cases())
def test_single_precision_within_rounding_bound(case):
    seed, n_sv, n_feat, B, f, reduction = case
    m, X = build(seed, n_sv, n_feat, B)
    ref = exact(m, X)
    bound = error_bound(m, X)
    got = engine.decide_batched(BatchRequest(X, m), TileSpec(f, reduction))
    naive = engine.decide_naive(m, X)
    assert np.all(np.abs(got - ref) <= bound)
    assert np.all(np.abs(naive - ref) <= bound)


@settings(max_examples=200)
@given(cases())
def test_batch_partition_invariance(case):
    seed, n_sv, n_feat, B, f, reduction = case
    m, X = build(seed, n_sv, n_feat, 2 * B)
    tile = TileSpec(f, reduction)
    whole = engine.decide_batched(BatchRequest(X, m), tile)
    halves = np.concatenate([
        engine.decide_batched(BatchRequest(X[:B], m), tile),
        engine.decide_batched(BatchRequest(X[B:], m), tile),
    ])
    assert np.max(np.abs(whole - halves)) <= 1e-6
    assert whole.tobytes() == halves.tobytes()


@settings(max_examples=200)
@given(cases())
def test_ragged_tile_padding_contributes_nothing(case):
    seed, n_sv, n_feat, B, f, reduction = case
    m, X = build(seed, n_sv, n_feat, B)
    # implicit zero padding of the last tile == explicit zero SV rows with beta 0
    pad = -(-n_sv // f) * f - n_sv
    padded = svr.SvrModel(
        np.vstack([m.support_vectors, np.zeros((pad, n_feat))]),
        np.concatenate([m.betas, np.zeros(pad)]),
        m.bias,
    )
    a = engine.decide_batched(BatchRequest(X, m), TileSpec(f, reduction))
    b = engine.decide_batched(BatchRequest(X, padded), TileSpec(f, reduction))
    assert a.tobytes() == b.tobytes()


@settings(max_examples=200)
@given(cases())
def test_every_pair_accumulated_once_per_feature(case):
    seed, n_sv, n_feat, B, f, _ = case
    m, X = build(seed, n_sv, n_feat, B)
    ps = engine.partial_sums(BatchRequest(X, m), TileSpec(f), shadow=True)
    assert ps.counts.shape == (B, n_sv)
    assert np.all(ps.counts == n_feat)


@settings(max_examples=200)
@given(cases())
def test_partial_sums_match_dense_product(case):
    seed, n_sv, n_feat, B, f, _ = case
    m, X = build(seed, n_sv, n_feat, B)
    ps = engine.partial_sums(BatchRequest(X, m), TileSpec(f)).values
    dense = X @ m.support_vectors.T
    assert np.linalg.norm(ps - dense) <= 1e-5 * max(np.linalg.norm(dense), 1e-30) + 1e-6


@settings(max_examples=100)
@given(cases())
def test_partial_sums_independent_of_tiling(case):
    seed, n_sv, n_feat, B, f, _ = case
    m, X = build(seed, n_sv, n_feat, B)
    a = engine.partial_sums(BatchRequest(X, m), TileSpec(f)).values
    b = engine.partial_sums(BatchRequest(X, m), TileSpec(1)).values
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("workers", [2, 3, 7])
@pytest.mark.parametrize("reduction", [PAIRWISE, SEQUENTIAL])
def test_worker_count_does_not_change_results(workers, reduction):
    rng = np.random.default_rng(11)
    m = random_model(rng, 120, 40)
    X = rng.uniform(-1, 1, (50, 40))
    one = engine.decide_batched(BatchRequest(X, m), TileSpec(12, reduction), workers=1)
    many = engine.decide_batched(BatchRequest(X, m), TileSpec(12, reduction), workers=workers)
    assert one.tobytes() == many.tobytes()


def test_stream_matches_single_batch():
    rng = np.random.default_rng(12)
    m = random_model(rng, 60, 20)
    X = rng.uniform(-1, 1, (103, 20))
    a = engine.decide_stream(m, X, TileSpec(6), batch=40)
    b = engine.decide_batched(BatchRequest(X, m), TileSpec(6))
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ValueError):
        engine.decide_stream(m, X, batch=0)


def test_pairwise_sum_matches_exact_on_integers():
    a = np.arange(1, 1001, dtype=np.float64).reshape(1, -1)
    assert engine.pairwise_sum(a)[0] == 500500.0
    assert engine.sequential_sum(a, start=1.0)[0] == 500501.0


# -- flagship configuration -------------------------------------------------------------


@pytest.fixture(scope="module")
def flagship(training_set, svr_model):
    """Ns = 1136 support vectors drawn from the training spectra with betas
    resampled from the trained model, and 40 noisy normalized inputs."""
    rng = np.random.default_rng(2024)
    rows = rng.choice(len(training_set), 1136, replace=False)
    beta = rng.choice(svr_model.betas, 1136)
    beta -= beta.mean()
    m = svr.SvrModel(training_set.samples[rows], beta, svr_model.bias, training_set.grid)
    X = training_set.samples[rng.choice(len(training_set), 40)] + rng.normal(0, 0.06, (40, 220))
    X /= X.max(axis=1, keepdims=True)
    return m, np.clip(X, -1, 1)


def test_flagship_batched_equals_naive(flagship):
    m, X = flagship
    want = engine.decide_naive(m, X, dtype=np.float64)
    got = engine.decide_batched(BatchRequest(X, m), TileSpec(284), dtype=np.float64)
    assert np.max(np.abs(got - want)) <= 1e-4


def test_flagship_single_precision(flagship):
    m, X = flagship
    got = engine.decide_batched(BatchRequest(X, m), TileSpec(284))
    naive = engine.decide_naive(m, X)
    ref = exact(m, X)
    assert np.all(np.abs(got - ref) <= error_bound(m, X))
    assert np.max(np.abs(got - naive)) <= 1e-4


def test_trained_model_single_precision(svr_model, flagship):
    # in single precision the naive single running sum over ~1400 terms drifts
    # by several 1e-4 degC; the tiled pairwise reduction is the more accurate one
    _, X = flagship
    m = svr_model
    ref = exact(m, X)
    got = engine.decide_batched(BatchRequest(X, m), TileSpec(min(284, m.n_sv)))
    naive = engine.decide_naive(m, X)
    bound = error_bound(m, X)
    assert np.all(np.abs(got - ref) <= bound)
    assert np.all(np.abs(naive - ref) <= bound)
    assert np.max(np.abs(got - ref)) <= np.max(np.abs(naive - ref))
    wide = engine.decide_batched(BatchRequest(X, m), TileSpec(min(284, m.n_sv)), dtype=np.float64)
    assert np.max(np.abs(wide - engine.decide_naive(m, X, dtype=np.float64))) <= 1e-4


def test_worker_scaling_report(flagship, capsys):
    """Soft property: reported, never failed."""
    m, X = flagship
    X = np.tile(X, (10, 1))
    times = {}
    for P in (1, 4):
        t = time.perf_counter()
        engine.decide_batched(BatchRequest(X, m), TileSpec(284), workers=P)
        times[P] = time.perf_counter() - t
    with capsys.disabled():
        print(f"\n[engine] 400 x flagship: 1 worker {times[1]:.3f} s, 4 workers {times[4]:.3f} s, ratio {times[4] / times[1]:.2f}")
