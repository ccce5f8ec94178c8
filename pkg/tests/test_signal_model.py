import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone

from lstmcs.exceptions import ConfigurationError, DomainError, ShapeError, UndefinedMetricError
from lstmcs.signal_model import (BlockTransformer, NoiseSpec, block_transform, blockize,
                                 deblockize, gen_measurement_ensemble, gen_sparse_ensemble,
                                 measure, nmse, snr_of, truncate_to_k)


def dct_matrix(n):
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    C = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    C[0] /= np.sqrt(2.0)
    return C


def haar_rows(x):
    """One analysis level on each row, approximations first (loop form)."""
    out = np.empty_like(x)
    h = x.shape[1] // 2
    for r in range(x.shape[0]):
        for i in range(h):
            out[r, i] = (x[r, 2 * i] + x[r, 2 * i + 1]) / np.sqrt(2)
            out[r, h + i] = (x[r, 2 * i] - x[r, 2 * i + 1]) / np.sqrt(2)
    return out


def haar3_oracle(block):
    out = block.copy()
    n = block.shape[0]
    for _ in range(3):
        sub = out[:n, :n]
        sub = haar_rows(sub)
        sub = haar_rows(sub.T).T
        out[:n, :n] = sub
        n //= 2
    return out


# -- ensembles ----------------------------------------------------------------

def test_one_by_one_ensemble_is_unit():
    assert abs(gen_measurement_ensemble(1, 1, 99).A[0, 0]) == 1.0


def test_columns_have_unit_norm():
    A = gen_measurement_ensemble(36, 144, 7).A
    assert np.max(np.abs(np.linalg.norm(A, axis=0) - 1.0)) <= 1e-12


def test_measurement_ensemble_deterministic():
    a = gen_measurement_ensemble(8, 12, 3).A
    assert a.tobytes() == gen_measurement_ensemble(8, 12, 3).A.tobytes()
    assert not np.array_equal(a, gen_measurement_ensemble(8, 12, 4).A)


def test_measurement_ensemble_rejects_wide():
    with pytest.raises(ConfigurationError):
        gen_measurement_ensemble(5, 4, 0)


def test_k_zero_gives_zero_matrix():
    assert not np.any(gen_sparse_ensemble(10, 3, 0, seed=1).S)


@given(st.integers(1, 40), st.integers(1, 5), st.data())
def test_sparse_ensemble_counts(N, L, data):
    ks = data.draw(st.lists(st.integers(0, N), min_size=L, max_size=L))
    ens = gen_sparse_ensemble(N, L, ks, "independent", seed=data.draw(st.integers(0, 1000)))
    assert list(np.count_nonzero(ens.S, axis=0)) == ks
    mags = np.abs(ens.S[ens.S != 0])
    assert np.all((mags >= 0.5) & (mags < 1.5))


def test_joint_pattern_shares_support():
    S = gen_sparse_ensemble(20, 4, 5, "joint", seed=3).S
    supports = [tuple(np.flatnonzero(S[:, j])) for j in range(4)]
    assert len(set(supports)) == 1 and len(supports[0]) == 5


def test_joint_pattern_needs_equal_k():
    with pytest.raises(ConfigurationError):
        gen_sparse_ensemble(20, 2, (2, 3), "joint")


def test_independent_support_overlap_matches_hypergeometric_mean():
    N, k, draws = 100, 5, 10_000
    overlaps = np.empty(draws)
    for i in range(draws):
        S = gen_sparse_ensemble(N, 2, k, "independent", seed=i).S
        overlaps[i] = np.count_nonzero((S[:, 0] != 0) & (S[:, 1] != 0))
    mean = k * k / N
    var = k * (k / N) * ((N - k) / N) * ((N - k) / (N - 1))
    assert abs(overlaps.mean() - mean) <= 3 * np.sqrt(var / draws)


def test_gaussian_amplitudes():
    S = gen_sparse_ensemble(50, 2, 10, amplitude_law="gaussian", seed=2).S
    assert np.count_nonzero(S) == 20


# -- measurement ----------------------------------------------------------------

def test_noiseless_measure_is_matmul():
    A = gen_measurement_ensemble(6, 10, 1).A
    S = gen_sparse_ensemble(10, 3, 2, seed=1).S
    assert np.array_equal(measure(A, S), A @ S)
    assert np.array_equal(measure(A, S, NoiseSpec(0.0, 5)), A @ S)
    assert not np.any(measure(A, np.zeros((10, 3))))


def test_noise_standard_deviation():
    A = gen_measurement_ensemble(100, 200, 1).A
    S = gen_sparse_ensemble(200, 1000, 5, seed=2).S
    E = measure(A, S, NoiseSpec(0.005, 9)) - A @ S
    assert E.size == 100_000
    assert 0.0049 <= E.std() <= 0.0051


def test_noise_spec_rejects_negative():
    with pytest.raises(ConfigurationError):
        NoiseSpec(-1.0)


def test_measure_shape_mismatch():
    with pytest.raises(ShapeError):
        measure(np.ones((3, 4)), np.ones((5, 2)))


def test_truncate_to_k_keeps_largest_with_low_index_ties():
    S = np.array([[1.0, 0.0], [-3.0, 2.0], [2.0, 2.0], [0.5, 2.0]])
    T = truncate_to_k(S, 2)
    assert np.array_equal(T[:, 0], [0.0, -3.0, 2.0, 0.0])
    assert np.array_equal(T[:, 1], [0.0, 2.0, 2.0, 0.0])


# -- transforms -----------------------------------------------------------------

def test_constant_block_dct_is_dc_only():
    out = block_transform(np.full((8, 8), 0.3), 8, "dct")
    assert abs(out[0, 0] - 8 * 0.3) < 1e-12
    out[0, 0] = 0
    assert np.max(np.abs(out)) < 1e-12


def test_dct_matches_explicit_matrix(rng):
    img = rng.random((16, 24))
    C = dct_matrix(8)
    out = block_transform(img, 8, "dct")
    for a in range(2):
        for b in range(3):
            tile = img[8 * a:8 * a + 8, 8 * b:8 * b + 8]
            assert np.allclose(out[8 * a:8 * a + 8, 8 * b:8 * b + 8], C @ tile @ C.T, atol=1e-12)


def test_haar3_matches_loop_oracle(rng):
    img = rng.random((16, 16))
    out = block_transform(img, 16, "haar3")
    assert np.allclose(out, haar3_oracle(img), atol=1e-12)


def test_haar3_constant_block_single_coefficient():
    out = block_transform(np.full((8, 8), 0.5), 8, "haar3")
    assert np.count_nonzero(np.abs(out) > 1e-12) == 1
    assert abs(out[0, 0] - 4.0) < 1e-12


@pytest.mark.parametrize("kind", ["dct", "haar3", "none"])
def test_transform_round_trip(kind, rng):
    img = rng.random((64, 64))
    fwd = block_transform(img, 8, kind)
    assert np.max(np.abs(block_transform(fwd, 8, kind, "inverse") - img)) <= 1e-10
    assert abs(np.linalg.norm(fwd) - np.linalg.norm(img)) <= 1e-10


def test_transform_errors():
    with pytest.raises(ConfigurationError):
        block_transform(np.ones((10, 10)), 8)
    with pytest.raises(ConfigurationError):
        block_transform(np.ones((12, 12)), 4, "haar3")
    with pytest.raises(ConfigurationError):
        block_transform(np.ones((8, 8)), 8, "wavelet")


def test_blockize_layout():
    img = np.arange(16.0).reshape(4, 4)
    cols = blockize(img, 2)
    assert np.array_equal(cols[:, 0], [0, 4, 1, 5])     # column-major inside the block
    assert np.array_equal(cols[:, 1], [2, 6, 3, 7])     # blocks in row-major order
    assert np.array_equal(cols[:, 2], [8, 12, 9, 13])


@pytest.mark.parametrize("side,block,shape", [(24, 12, (144, 4)), (64, 8, (64, 64))])
def test_blockize_shapes(side, block, shape, rng):
    img = rng.random((side, side))
    cols = blockize(img, block)
    assert cols.shape == shape
    assert np.array_equal(deblockize(cols, block, img.shape), img)


def test_block_transformer_estimator_api(rng):
    bt = BlockTransformer(block=8, kind="haar3")
    assert bt.get_params() == {"block": 8, "kind": "haar3"}
    assert clone(bt).get_params() == bt.get_params()
    img = rng.random((32, 16))
    cols = bt.fit_transform(img)
    assert cols.shape == (64, 8)
    assert np.allclose(bt.inverse_transform(cols), img, atol=1e-12)
    with pytest.raises(ConfigurationError):
        BlockTransformer().inverse_transform(cols)


# -- metrics --------------------------------------------------------------------

def test_nmse_examples(rng):
    S = rng.standard_normal((5, 3))
    assert nmse(S, S) == 0.0
    assert nmse(S, np.zeros_like(S)) == 1.0
    assert abs(nmse(S, 2 * S) - 1.0) < 1e-15
    with pytest.raises(UndefinedMetricError):
        nmse(np.zeros((2, 2)), S[:2, :2])
    with pytest.raises(ShapeError):
        nmse(S, S[:2])


def test_snr_examples():
    assert abs(snr_of(0.1, 0.1 ** 2)) < 1e-12
    assert abs(snr_of(0.1, 1.0) - 20.0) < 1e-12
    with pytest.raises(DomainError):
        snr_of(0.0, 1.0)


def test_sigma_0_005_gives_about_46_db_at_unit_measurement_power():
    # columns of A have unit norm, so a column of S with ||s||^2 = M yields
    # measurements of mean power ~1; 10 log10(1 / 0.005^2) = 46.02 dB
    M, N = 72, 144
    A = gen_measurement_ensemble(M, N, 1).A
    S = gen_sparse_ensemble(N, 400, 20, amplitude_law="gaussian", seed=4).S
    S *= np.sqrt(M) / np.linalg.norm(S, axis=0)
    power = np.mean((A @ S) ** 2)
    assert abs(snr_of(0.005, power) - 46.0) < 0.5
