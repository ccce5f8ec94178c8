import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lstmcs.exceptions import CombinatorialLimitError, ConfigurationError, ShapeError
from lstmcs.lstm import LstmParams, init_params
from lstmcs.signal_model import gen_measurement_ensemble, gen_sparse_ensemble, nmse
from lstmcs.solvers import (SolverConfig, exhaustive_oracle, lstm_cs_solve, omp_solve,
                            oracle_solve, solve, somp_solve)


def pointing_model(M, N, target, n_cells=3):
    """A model whose softmax puts nearly all mass on ``target`` for any input."""
    params = LstmParams(M, N, n_cells, "reduced")
    for g in ("b1", "b3", "b4"):
        params[g][...] = 30.0
    params["U"][target, :] = 100.0
    return params


def test_identity_dictionary_picks_the_spike():
    y = np.zeros(6)
    y[5] = 3.0
    res = omp_solve(np.eye(6), y, SolverConfig(k_max=3))
    assert res.supports == [[5]] and res.iterations == 1
    assert res.Shat[5, 0] == pytest.approx(3.0)


def test_omp_tie_goes_to_lowest_index():
    A = np.eye(4)
    y = np.array([0.0, 2.0, 0.0, -2.0])
    res = omp_solve(A, y, SolverConfig(k_max=1))
    assert res.supports == [[1]]


def test_somp_tie_goes_to_lowest_index():
    Y = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [0.0, 0.0]])
    res = somp_solve(np.eye(4), Y, SolverConfig(k_max=1))
    assert res.supports == [[1], [1]]


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_somp_with_one_channel_is_omp(seed):
    A = gen_measurement_ensemble(10, 16, seed).A
    S = gen_sparse_ensemble(16, 1, 3, seed=seed + 1).S
    y = A @ S + 0.01 * np.sin(np.arange(10))[:, None]
    cfg = SolverConfig(k_max=4)
    a, b = omp_solve(A, y, cfg), somp_solve(A, y, cfg)
    assert a.supports == b.supports
    assert np.allclose(a.Shat, b.Shat, atol=1e-12)


def test_joint_two_sparse_recovery():
    A = gen_measurement_ensemble(20, 24, 4).A
    for seed in range(10):
        S = gen_sparse_ensemble(24, 3, 2, "joint", seed=seed).S
        res = somp_solve(A, A @ S, SolverConfig(k_max=2))
        assert nmse(S, res.Shat) <= 1e-10
        assert sorted(res.supports[0]) == sorted(np.flatnonzero(S[:, 0]))


def test_greedy_can_miss_where_oracle_succeeds():
    # an off-support atom has the largest summed correlation here
    A = gen_measurement_ensemble(8, 12, 4).A
    S = gen_sparse_ensemble(12, 3, 2, "joint", seed=7).S
    assert somp_solve(A, A @ S, SolverConfig(k_max=2)).supports[0][0] == 11
    assert nmse(S, oracle_solve(A, A @ S, SolverConfig(kind="oracle", k_max=2)).Shat) <= 1e-10


def test_somp_suffers_on_disjoint_supports():
    A = gen_measurement_ensemble(20, 40, 2).A
    S = gen_sparse_ensemble(40, 4, 3, "independent", seed=3).S
    assert len({tuple(np.flatnonzero(S[:, j])) for j in range(4)}) == 4
    cfg = SolverConfig(k_max=3)
    assert nmse(S, omp_solve(A, A @ S, cfg).Shat) < 1e-10
    assert nmse(S, somp_solve(A, A @ S, cfg).Shat) > 0.1


def test_never_selects_twice():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((6, 8))
    Y = rng.standard_normal((6, 3))
    for res in (omp_solve(A, Y, SolverConfig(k_max=6)), somp_solve(A, Y, SolverConfig(k_max=6))):
        for sup in res.supports:
            assert len(sup) == len(set(sup)) == 6


def test_zero_measurements_give_zero_estimate():
    A = gen_measurement_ensemble(5, 9, 0).A
    Y = np.zeros((5, 2))
    model = init_params(5, 9, 4, seed=1)
    cfg = SolverConfig(k_max=3)
    for res in (omp_solve(A, Y, cfg), somp_solve(A, Y, cfg), lstm_cs_solve(A, Y, model, SolverConfig(k_max=3))):
        assert res.iterations == 0 and not np.any(res.Shat)


def test_residual_norms_non_increasing():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((12, 20))
    Y = rng.standard_normal((12, 4))
    for res in (omp_solve(A, Y, SolverConfig(k_max=8)), somp_solve(A, Y, SolverConfig(k_max=8))):
        assert np.all(np.diff(res.residual_norms) <= 1e-12)


def test_k_max_above_M_rejected():
    with pytest.raises(ConfigurationError, match="exceeds M"):
        omp_solve(np.eye(3), np.ones(3), SolverConfig(k_max=4))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        somp_solve(np.eye(3), np.ones((4, 2)))
    with pytest.raises(ShapeError):
        lstm_cs_solve(np.eye(3), np.ones((3, 1)), init_params(4, 3, 2), SolverConfig(k_max=1))


def test_nan_measurements_rejected():
    with pytest.raises(ValueError):
        omp_solve(np.eye(3), np.array([1.0, np.nan, 0.0]))


# -- oracle -----------------------------------------------------------------------

def test_oracle_is_no_worse_than_omp():
    rng = np.random.default_rng(11)
    A = gen_measurement_ensemble(6, 10, 5).A
    for seed in range(15):
        s = gen_sparse_ensemble(10, 1, 2, seed=seed).S[:, 0]
        y = A @ s + 0.05 * rng.standard_normal(6)
        best = exhaustive_oracle(A, y, 2)
        r_omp = y - A @ omp_solve(A, y, SolverConfig(k_max=2)).Shat[:, 0]
        assert best.residual_norm <= np.linalg.norm(r_omp) + 1e-12


def test_oracle_zero_sparsity():
    res = exhaustive_oracle(np.eye(3), [3.0, 4.0, 0.0], 0)
    assert res.support == () and res.residual_norm == pytest.approx(5.0)


def test_oracle_limit():
    assert math.comb(40, 10) > 10**6
    with pytest.raises(CombinatorialLimitError):
        exhaustive_oracle(np.ones((12, 40)), np.ones(12), 10)


def test_oracle_solve_matches_truth():
    A = gen_measurement_ensemble(8, 12, 1).A
    S = gen_sparse_ensemble(12, 3, 2, seed=4).S
    res = oracle_solve(A, A @ S, SolverConfig(kind="oracle", k_max=2))
    assert nmse(S, res.Shat) <= 1e-10


# -- LSTM-guided ------------------------------------------------------------------

def test_uniform_model_selects_in_index_order():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((6, 8))
    Y = rng.standard_normal((6, 2))
    model = init_params(6, 8, 4, seed=0)
    model["U"][...] = 0.0
    res = lstm_cs_solve(A, Y, model, SolverConfig(k_max=3))
    assert res.supports == [[0, 1, 2], [0, 1, 2]]


def test_pointing_model_recovers_one_sparse():
    A = gen_measurement_ensemble(5, 9, 3).A
    S = np.zeros((9, 2))
    S[6] = [1.3, -0.7]
    res = lstm_cs_solve(A, A @ S, pointing_model(5, 9, 6), SolverConfig(k_max=3))
    assert nmse(S, res.Shat) <= 1e-8
    assert res.supports == [[6], [6]] and res.iterations == 1


def test_shared_mode_uses_one_support():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((6, 10))
    Y = rng.standard_normal((6, 3))
    model = init_params(6, 10, 5, seed=2, scale=0.5)
    res = lstm_cs_solve(A, Y, model, SolverConfig(k_max=4, support_mode="shared"))
    assert res.supports[0] == res.supports[1] == res.supports[2]
    assert len(res.supports[0]) == len(set(res.supports[0]))
    # every column uses only atoms from the shared support
    off = np.setdiff1d(np.arange(10), res.supports[0])
    assert not np.any(res.Shat[off])


def test_exhausted_channel_stops_growing():
    A = np.eye(4)
    Y = np.array([[1.0, 1.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    model = init_params(4, 4, 3, seed=0)
    model["U"][...] = 0.0
    res = lstm_cs_solve(A, Y, model, SolverConfig(k_max=4))
    assert res.supports[0] == [0]
    assert res.supports[1] == [0, 1, 2, 3]


def test_dispatch():
    A = np.eye(3)
    y = np.array([0.0, 1.0, 0.0])
    assert solve("omp", A, y, SolverConfig(k_max=1)).supports == [[1]]
    assert solve("somp", A, y, SolverConfig(k_max=1)).supports == [[1]]
    with pytest.raises(ConfigurationError):
        solve("lstm-cs", A, y, SolverConfig(k_max=1))
    with pytest.raises(ConfigurationError):
        SolverConfig(kind="lasso")
