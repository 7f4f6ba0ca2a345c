import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from freqscan.spectral import (
    band_thresholds,
    dct2,
    decompose,
    frequency_index,
    idct2,
    low_pass_keep,
    low_pass_mask,
)


def direct_dct2(x):
    """Quadruple-sum evaluation of the orthonormal 2D DCT-II."""
    h, w = x.shape
    out = np.zeros((h, w))
    for u in range(h):
        au = np.sqrt(1 / h) if u == 0 else np.sqrt(2 / h)
        for v in range(w):
            av = np.sqrt(1 / w) if v == 0 else np.sqrt(2 / w)
            s = 0.0
            for i in range(h):
                ci = np.cos((2 * i + 1) * u * np.pi / (2 * h))
                for j in range(w):
                    s += x[i, j] * ci * np.cos((2 * j + 1) * v * np.pi / (2 * w))
            out[u, v] = au * av * s
    return out


def test_constant_image_is_dc_only():
    s = dct2(np.full((8, 8), 3.5))
    assert s[0, 0] == pytest.approx(8 * 3.5, abs=1e-9)
    s[0, 0] = 0
    assert np.abs(s).max() < 1e-9


def test_matches_direct_formula():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, 5))
    np.testing.assert_allclose(dct2(x), direct_dct2(x), atol=1e-12)


def test_parseval_against_direct_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((16, 16))
    oracle = direct_dct2(x)
    assert np.sum(oracle ** 2) == pytest.approx(np.sum(x ** 2), rel=1e-10)
    assert np.sum(dct2(x) ** 2) == pytest.approx(np.sum(x ** 2), rel=1e-10)


def test_round_trips():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((32, 32))
    assert np.abs(idct2(dct2(x)) - x).max() < 1e-10
    s = rng.standard_normal((32, 32))
    assert np.abs(dct2(idct2(s)) - s).max() < 1e-10


def test_idct_of_dc():
    s = np.zeros((8, 8))
    s[0, 0] = 8
    np.testing.assert_allclose(idct2(s), np.ones((8, 8)), atol=1e-12)
    assert not idct2(np.zeros((8, 8))).any()


def test_non_square_round_trip():
    x = np.random.default_rng(4).standard_normal((7, 12))
    assert np.abs(idct2(dct2(x)) - x).max() < 1e-10


@pytest.mark.parametrize("bad", [np.zeros((0, 4)), np.array([[1.0, np.nan]]), np.array([[np.inf]])])
def test_dct_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        dct2(bad)


def test_idct_shape_mismatch():
    with pytest.raises(ValueError):
        idct2(np.zeros((4, 4)), shape=(4, 5))


@pytest.mark.parametrize(
    "u, v, expected",
    [(0, 0, 0.0), (223, 223, 1.0), (223, 0, 0.5), (0, 223, 0.5)],
)
def test_frequency_index(u, v, expected):
    assert frequency_index(u, v, 224, 224) == expected


def test_frequency_index_single_axis_and_errors():
    assert frequency_index(0, 3, 1, 7) == 0.5
    assert frequency_index(2, 0, 5, 1) == 0.5
    assert frequency_index(0, 0, 1, 1) == 0.0
    with pytest.raises(ValueError):
        frequency_index(5, 0, 5, 5)
    with pytest.raises(ValueError):
        frequency_index(-1, 0, 5, 5)


@pytest.mark.parametrize(
    "K, expected",
    [(4, [0.125, 0.25, 0.5, 1.0]), (1, [1.0]), (2, [0.5, 1.0])],
)
def test_band_thresholds(K, expected):
    plan = band_thresholds(K)
    assert plan.K == K
    assert list(plan.thresholds) == expected


@pytest.mark.parametrize("K", [0, 9, 2.5])
def test_band_thresholds_range(K):
    with pytest.raises(ValueError):
        band_thresholds(K)


def test_mask_full_band_and_dc_only():
    s = np.random.default_rng(5).standard_normal((16, 16))
    np.testing.assert_array_equal(low_pass_mask(s, 1.0), s)
    m = low_pass_mask(s, 0.0)
    assert m[0, 0] == s[0, 0]
    m[0, 0] = 0
    assert not m.any()


def test_mask_keeps_boundary():
    # 17x17: f = (u + v) / 32, so cutoff 0.25 keeps exactly u + v <= 8.
    keep = low_pass_keep(17, 17, 0.25)
    u, v = np.indices((17, 17))
    np.testing.assert_array_equal(keep, u + v <= 8)


def test_mask_nesting_brute_force():
    rng = np.random.default_rng(6)
    s = rng.standard_normal((16, 16))
    nested = low_pass_mask(low_pass_mask(s, 0.5), 0.25)
    expected = np.zeros_like(s)
    for u in range(16):
        for v in range(16):
            if frequency_index(u, v, 16, 16) <= 0.25:
                expected[u, v] = s[u, v]
    np.testing.assert_array_equal(nested, expected)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 20), st.integers(1, 20))
def test_mask_composition_is_min(a, b, h, w):
    s = np.arange(1, h * w + 1, dtype=float).reshape(h, w)
    np.testing.assert_array_equal(low_pass_mask(low_pass_mask(s, a), b), low_pass_mask(s, min(a, b)))


def test_decompose_k1_identity_single_precision():
    x = np.random.default_rng(7).random((32, 32)).astype(np.float32)
    (out,) = decompose(x, 1)
    assert out.dtype == np.float32
    assert np.abs(out - x).max() < 1e-6


@pytest.mark.parametrize("K", [1, 2, 4, 6])
def test_decompose_constant(K):
    x = np.full((16, 16, 3), 0.7)
    for band in decompose(x, K):
        np.testing.assert_allclose(band, x, atol=1e-12)


def test_decompose_energy_monotone():
    x = np.random.default_rng(8).standard_normal((32, 32))
    bands = decompose(x, 4)
    energies = [np.sum(dct2(b) ** 2) for b in bands]
    assert all(e1 <= e2 + 1e-9 for e1, e2 in zip(energies, energies[1:]))
    assert np.abs(bands[-1] - x).max() < 1e-10


def test_decompose_support_nested():
    x = np.random.default_rng(9).standard_normal((24, 24))
    supports = [np.abs(dct2(b)) > 1e-9 for b in decompose(x, 5)]
    for lo, hi in zip(supports, supports[1:]):
        assert not (lo & ~hi).any()


def test_decompose_channels_independent():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((16, 16, 3))
    multi = decompose(x, 3)
    for c in range(3):
        single = decompose(x[:, :, c], 3)
        for m, s in zip(multi, single):
            np.testing.assert_allclose(m[:, :, c], s, atol=1e-12)


planes = arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                elements=st.floats(-1e3, 1e3))


@settings(max_examples=50)
@given(planes)
def test_round_trip_property(x):
    assert np.abs(idct2(dct2(x)) - x).max() <= 1e-10 * max(1.0, np.abs(x).max())


@settings(max_examples=50)
@given(planes, st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_property(x, a, b):
    y = np.flip(x).copy()
    lhs = dct2(a * x + b * y)
    rhs = a * dct2(x) + b * dct2(y)
    scale = max(1.0, np.abs(lhs).max(), np.abs(rhs).max())
    assert np.abs(lhs - rhs).max() <= 1e-9 * scale


@settings(max_examples=50)
@given(planes)
def test_parseval_property(x):
    e = np.sum(x ** 2)
    assert np.sum(dct2(x) ** 2) == pytest.approx(e, rel=1e-10, abs=1e-12)
