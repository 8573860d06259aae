import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from helpers import brute_windows

from dfcgcn.cohort import RoiTimeSeries
from dfcgcn.dfc import (
    FcMatrix, WindowConfig, accumulate, binarize, compute_dfc, devectorize_upper, fisher_z,
    null_calibrated_tau, pearson_matrix, roi_alff, sliding_windows, threshold_abs,
    upper_pair_names, vectorize_upper, window_count, window_fc,
)
from dfcgcn.errors import ValidationError


def fc(values):
    return FcMatrix(np.asarray(values, dtype=float))


@pytest.mark.parametrize("T,L,s,expected", [
    (39, 39, 5, [(0, 39)]),
    (44, 39, 5, [(0, 39), (5, 44)]),
])
def test_windows_small(T, L, s, expected):
    assert sliding_windows(T, L, s) == expected


def test_windows_default_length():
    w = sliding_windows(200, 39, 5)
    assert len(w) == 34
    assert [a for a, _ in w] == list(range(0, 165, 5)) + [161]
    assert all(b - a == 39 for a, b in w)


def test_window_errors():
    with pytest.raises(ValidationError):
        sliding_windows(30, 39, 5)
    with pytest.raises(ValidationError):
        sliding_windows(50, 39, 0)


@settings(max_examples=300, deadline=None)
@given(T=st.integers(2, 400), data=st.data())
def test_window_count_property(T, data):
    L = data.draw(st.integers(2, T))
    s = data.draw(st.integers(1, 50))
    w = sliding_windows(T, L, s)
    assert len(w) == window_count(T, L, s) == math.ceil((T - L) / s) + 1
    assert w == brute_windows(T, L, s)


def test_pcc_examples():
    x = np.arange(10.0)
    assert pearson_matrix(np.c_[x, x]).values[0, 1] == pytest.approx(1.0, abs=1e-12)
    assert pearson_matrix(np.c_[x, -x]).values[0, 1] == pytest.approx(-1.0, abs=1e-12)
    c = pearson_matrix(np.array([[1, 1], [2, 2], [3, 4]], dtype=float)).values
    assert c[0, 1] == pytest.approx(0.98198, abs=1e-5)
    assert np.all(np.diag(c) == 0)


def test_pcc_matches_numpy():
    x = np.random.default_rng(1).standard_normal((39, 12))
    ref = np.corrcoef(x.T)
    np.fill_diagonal(ref, 0.0)
    assert np.allclose(pearson_matrix(x).values, ref, atol=1e-12)


def test_zero_variance_column():
    x = np.c_[np.arange(5.0), np.ones(5), np.arange(5.0) ** 2]
    C = pearson_matrix(x)
    assert np.all(C.values[1] == 0) and np.all(C.values[:, 1] == 0)
    assert C.zero_variance == 2
    assert np.all(np.isfinite(C.values))


def test_window_fc_range():
    ts = RoiTimeSeries("a", np.random.default_rng(0).standard_normal((50, 3)))
    with pytest.raises(ValidationError):
        window_fc(ts, (45, 60))
    assert window_fc(ts, (0, 10)).values.shape == (3, 3)


def test_fisher_z_examples():
    z = fisher_z(fc([[0, 0.5, -0.5], [0.5, 0, 0], [-0.5, 0, 0]])).values
    assert z[0, 1] == pytest.approx(0.549306, abs=1e-6)
    assert z[0, 2] == -z[0, 1]
    assert z[1, 2] == 0.0
    assert z[0, 1] == pytest.approx(0.5 * math.log(3), abs=1e-15)


def test_fisher_z_saturated_is_finite():
    z = fisher_z(fc([[0, 1.0], [1.0, 0]])).values
    assert np.all(np.isfinite(z)) and z[0, 1] > 8


def test_threshold_examples():
    Z = fc([[0, 0.6, -0.5], [0.6, 0, 0.2], [-0.5, 0.2, 0]])
    m = threshold_abs(Z, 0.5).values
    assert m[0, 1] == 0.6
    assert m[0, 2] == 0.0
    assert m[1, 2] == 0.0
    assert np.array_equal(threshold_abs(Z, 0.0).values, np.abs(Z.values))


def test_binarize_examples():
    assert not binarize(np.zeros((6, 6))).any()
    M = np.zeros((6, 6))
    M[2, 5] = M[5, 2] = 0.7
    A = binarize(M)
    assert set(zip(*np.nonzero(A))) == {(2, 5), (5, 2)}
    R = np.abs(np.random.default_rng(0).standard_normal((7, 7))) * (np.random.default_rng(1).random((7, 7)) < 0.5)
    R = R + R.T
    np.fill_diagonal(R, 0)
    assert np.array_equal(binarize(R), (R > 0).astype(np.int8))


def test_accumulate_examples():
    one = np.random.default_rng(0).random((4, 4))
    assert np.array_equal(accumulate([one]), one)
    ws = [np.full((2, 2), v) for v in (0.6, 0.0, 0.7)]
    assert accumulate(ws)[0, 1] == pytest.approx(1.3, abs=1e-15)


def test_accumulate_order_independent():
    rng = np.random.default_rng(3)
    ws = [rng.random((5, 5)) * 10.0 ** rng.integers(-8, 8) for _ in range(40)]
    base = accumulate(ws)
    exact = np.vectorize(lambda i, j: math.fsum(w[i, j] for w in ws))(*np.indices((5, 5)))
    assert np.allclose(base, exact, rtol=1e-15, atol=0)
    for k in range(5):
        perm = rng.permutation(len(ws))
        assert np.array_equal(accumulate([ws[p] for p in perm]), base)


def test_accumulate_permutation_exact_on_dfc_windows():
    rng = np.random.default_rng(0)
    res = compute_dfc(RoiTimeSeries("a", rng.standard_normal((200, 12))), WindowConfig(tau=0.1))
    for _ in range(10):
        perm = rng.permutation(len(res.windows))
        assert np.array_equal(accumulate([res.windows[p] for p in perm]), res.accumulated)


def test_vectorize_examples():
    assert vectorize_upper(np.zeros((116, 116))).size == 6670
    assert vectorize_upper(np.zeros((4, 4))).size == 6
    assert vectorize_upper(np.array([[0, 2.5], [2.5, 0]])).tolist() == [2.5]
    assert len(upper_pair_names(116)) == 6670
    assert upper_pair_names(3) == ["fc_0_1", "fc_0_2", "fc_1_2"]


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(2, 6)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_chain_symmetry_property(x):
    C = pearson_matrix(x)
    assert np.array_equal(C.values, C.values.T)
    assert np.all(np.abs(C.values) <= 1) and np.all(np.diag(C.values) == 0)
    Z = fisher_z(C)
    M = threshold_abs(Z, 0.3)
    for mat in (Z.values, M.values):
        assert np.array_equal(mat, mat.T)
        assert np.all(np.diag(mat) == 0)
    assert np.all((M.values == 0) | (M.values > 0.3))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.floats(0, 2), st.floats(0, 2), st.integers(0, 1000))
def test_threshold_monotone(N, t1, t2, seed):
    lo, hi = sorted((t1, t2))
    z = np.random.default_rng(seed).standard_normal((N, N))
    Z = fc(z + z.T)
    high = binarize(threshold_abs(Z, hi))
    low = binarize(threshold_abs(Z, lo))
    assert np.all(high <= low)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 15), st.integers(0, 10_000))
def test_vectorize_roundtrip(N, seed):
    M = np.random.default_rng(seed).standard_normal((N, N))
    M = M + M.T
    np.fill_diagonal(M, 0)
    v = vectorize_upper(M)
    assert np.array_equal(devectorize_upper(v), M)
    assert np.array_equal(devectorize_upper(v, N), M)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5))
def test_pcc_affine_invariance(seed, a, b):
    x = np.random.default_rng(seed).standard_normal((20, 4))
    base = pearson_matrix(x).values
    y = x.copy()
    y[:, 1] = a * y[:, 1] + b
    assert np.allclose(pearson_matrix(y).values, base, atol=1e-12)
    y[:, 1] = -y[:, 1]
    flipped = base.copy()
    flipped[1, :] *= -1
    flipped[:, 1] *= -1
    assert np.allclose(pearson_matrix(y).values, flipped, atol=1e-12)


def test_compute_dfc_chain():
    x = np.random.default_rng(0).standard_normal((200, 6))
    x[:, 1] += x[:, 0]
    res = compute_dfc(RoiTimeSeries("a", x), WindowConfig(tau=0.3))
    assert len(res.windows) == 34
    assert np.array_equal(res.accumulated, accumulate(res.windows))
    assert np.array_equal(res.support, (res.accumulated > 0).astype(np.int8))
    assert res.fc_vector.size == 15
    assert res.support[0, 1] == 1
    assert res.tau == 0.3


def test_null_calibrated_tau():
    K = window_count(200, 39, 5)
    tau = WindowConfig().resolve_tau(200)
    assert tau == pytest.approx(null_calibrated_tau(39, K))
    assert 0.5 < tau < 0.56
    # pure noise pairs cross it rarely
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(20):
        res = compute_dfc(RoiTimeSeries("n", rng.standard_normal((200, 10))), keep_windows=False)
        hits += int(res.support.sum() // 2)
    assert hits / (20 * 45) < 0.1
    assert null_calibrated_tau(39, K, on="pearson") == pytest.approx(math.tanh(tau))


def test_window_config_validation():
    with pytest.raises(ValidationError):
        WindowConfig(tau=-0.1).validate()
    with pytest.raises(ValidationError):
        WindowConfig(tau="sometimes").validate()
    with pytest.raises(ValidationError):
        WindowConfig(L=300).validate(T=200)


def test_alff_constant_and_linear():
    assert roi_alff(np.full(256, 3.0), 2.0) == 0.0
    t = np.arange(256) * 2.0
    s = np.sin(2 * np.pi * 0.04 * t)
    a1 = roi_alff(1.5 * s, 2.0)
    assert a1 > 0
    assert roi_alff(3.0 * s, 2.0) == pytest.approx(2 * a1, rel=1e-9)


def test_alff_noise_scaling():
    # Monte-Carlo oracle: mean ratio 2.03 over these seeds when first run
    ratios = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        ratios.append(roi_alff(2 * rng.standard_normal(256), 2.0) /
                      roi_alff(rng.standard_normal(256), 2.0))
    assert abs(np.mean(ratios) - 2.0) <= 0.2


def test_alff_band_errors():
    with pytest.raises(ValidationError):
        roi_alff(np.zeros(256), 2.0, band=(0.01, 0.5))
    with pytest.raises(ValidationError):
        roi_alff(np.zeros(4), 2.0)
