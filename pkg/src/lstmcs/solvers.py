"""Greedy MMV decoders sharing one result type.

All solvers select one atom per iteration, refit the selected coefficients by
least squares against the original measurements and recompute residuals.
Stopping: ``iterations >= k_max`` or ``||R||_F <= res_min``. Ties in every
argmax resolve to the lowest index and an index is never selected twice for
the same channel.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_matrix
from .exceptions import CombinatorialLimitError, ConfigurationError, ShapeError
from .linalg import least_squares_solve
from .lstm import LstmParams, LstmState, channel_probabilities, forward_step

SOLVER_KINDS = ("lstm-cs", "omp", "somp", "oracle")
ORACLE_SUBSET_LIMIT = 10**6


@dataclass
class SolverConfig:
    res_min: float = 1e-6
    k_max: int = 10
    kind: str = "lstm-cs"
    support_mode: str = "per-channel"

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ConfigurationError(f"unknown solver {self.kind!r}")
        if self.support_mode not in ("per-channel", "shared"):
            raise ConfigurationError(f"support_mode must be per-channel or shared, got {self.support_mode!r}")
        if self.k_max < 0:
            raise ConfigurationError(f"k_max must be >= 0, got {self.k_max}")


@dataclass
class SolverResult:
    Shat: np.ndarray
    supports: list
    residual_norms: list = field(default_factory=list)
    iterations: int = 0
    wall_time: float = 0.0


def _check_problem(A, Y, cfg):
    A = check_matrix(A, "A")
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2 or Y.shape[0] != A.shape[0]:
        raise ShapeError(f"A is {A.shape[0]}x{A.shape[1]} but Y has shape {Y.shape}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("Y contains NaN or Inf")
    if cfg.k_max > A.shape[0]:
        raise ConfigurationError(f"k_max={cfg.k_max} exceeds M={A.shape[0]}; least squares would be underdetermined")
    return A, Y


def _refit(A, y, support):
    coef = least_squares_solve(A[:, support], y, check=False)
    return coef, y - A[:, support] @ coef


def lstm_cs_solve(A, Y, model: LstmParams, cfg: SolverConfig | None = None) -> SolverResult:
    """Recover ``S`` from ``Y = A S`` with the trained LSTM selecting atoms.

    Each outer iteration resets the cell state and walks the channels in
    order: the channel residual, scaled by its largest magnitude, drives one
    cell step; the most probable unselected index joins that channel's
    support, followed by a least-squares refit. A channel whose residual norm
    has fallen to ``res_min`` stops growing its support and feeds a zero
    vector to the cell.
    """
    cfg = cfg or SolverConfig()
    A, Y = _check_problem(A, Y, cfg)
    M, N = A.shape
    if (model.M, model.N) != (M, N):
        raise ShapeError(f"model expects M={model.M}, N={model.N}; problem has M={M}, N={N}")
    start = time.perf_counter()
    L = Y.shape[1]
    Shat = np.zeros((N, L))
    R = Y.copy()
    supports = [[] for _ in range(L)]
    shared = []
    norms = [float(np.linalg.norm(R))]
    iterations = 0
    while iterations < cfg.k_max and norms[-1] > cfg.res_min:
        iterations += 1
        state = LstmState.zeros(model.n_cells)
        for j in range(L):
            r = R[:, j]
            active = np.linalg.norm(r) > cfg.res_min
            peak = np.max(np.abs(r)) if active else 0.0
            state, cache = forward_step(model, r / peak if active else np.zeros(M), state)
            if not active:
                continue
            p = channel_probabilities(model, cache.v)
            support = shared if cfg.support_mode == "shared" else supports[j]
            if len(support) >= min(M, N):
                continue
            p[support] = -np.inf
            support.append(int(np.argmax(p)))
            if cfg.support_mode == "shared":
                supports[j] = list(support)
            coef, R[:, j] = _refit(A, Y[:, j], supports[j])
            Shat[:, j] = 0.0
            Shat[supports[j], j] = coef
        norms.append(float(np.linalg.norm(R)))
    if cfg.support_mode == "shared":
        supports = [list(shared) if supports[j] else [] for j in range(L)]
        for j in range(L):
            if supports[j]:
                coef, R[:, j] = _refit(A, Y[:, j], supports[j])
                Shat[:, j] = 0.0
                Shat[supports[j], j] = coef
    return SolverResult(Shat, supports, norms, iterations, time.perf_counter() - start)


def omp_solve(A, y, cfg: SolverConfig | None = None) -> SolverResult:
    """Orthogonal matching pursuit on each column of ``y`` independently."""
    cfg = cfg or SolverConfig(kind="omp")
    A, Y = _check_problem(A, y, cfg)
    start = time.perf_counter()
    N, L = A.shape[1], Y.shape[1]
    Shat = np.zeros((N, L))
    supports, iterations = [], 0
    R = Y.copy()
    history = [[float(np.linalg.norm(Y[:, j]))] for j in range(L)]
    for j in range(L):
        support = []
        r = Y[:, j]
        while len(support) < cfg.k_max and history[j][-1] > cfg.res_min:
            corr = np.abs(A.T @ r)
            corr[support] = -np.inf
            support.append(int(np.argmax(corr)))
            coef, r = _refit(A, Y[:, j], support)
            history[j].append(float(np.linalg.norm(r)))
        if support:
            Shat[support, j] = coef
        R[:, j] = r
        supports.append(support)
        iterations = max(iterations, len(support))
    norms = [float(np.sqrt(sum(h[min(i, len(h) - 1)] ** 2 for h in history))) for i in range(iterations + 1)]
    return SolverResult(Shat, supports, norms, iterations, time.perf_counter() - start)


def somp_solve(A, Y, cfg: SolverConfig | None = None) -> SolverResult:
    """Simultaneous OMP: one support shared by all channels, chosen by
    summed absolute correlation."""
    cfg = cfg or SolverConfig(kind="somp")
    A, Y = _check_problem(A, Y, cfg)
    start = time.perf_counter()
    N, L = A.shape[1], Y.shape[1]
    Shat = np.zeros((N, L))
    support = []
    R = Y.copy()
    norms = [float(np.linalg.norm(R))]
    while len(support) < cfg.k_max and norms[-1] > cfg.res_min:
        score = np.abs(A.T @ R).sum(axis=1)
        score[support] = -np.inf
        support.append(int(np.argmax(score)))
        coef, R = _refit(A, Y, support)
        norms.append(float(np.linalg.norm(R)))
    if support:
        Shat[support, :] = coef
    return SolverResult(Shat, [list(support) for _ in range(L)], norms, len(support),
                        time.perf_counter() - start)


@dataclass
class OracleResult:
    support: tuple
    coef: np.ndarray
    residual_norm: float


def exhaustive_oracle(A, y, k: int, limit: int = ORACLE_SUBSET_LIMIT) -> OracleResult:
    """Best ``k``-term least-squares fit over all supports of size ``k``.

    Ties on the residual go to the lexicographically smallest support.
    """
    A = check_matrix(A, "A")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    N = A.shape[1]
    count = math.comb(N, k)
    if count > limit:
        raise CombinatorialLimitError(f"C({N}, {k}) = {count} subsets exceeds the limit of {limit}")
    if k == 0:
        return OracleResult((), np.zeros(0), float(np.linalg.norm(y)))
    best = None
    for subset in itertools.combinations(range(N), k):
        coef, r = _refit(A, y, list(subset))
        res = float(np.linalg.norm(r))
        if best is None or res < best.residual_norm:
            best = OracleResult(subset, coef, res)
    return best


def oracle_solve(A, Y, cfg: SolverConfig | None = None) -> SolverResult:
    """Per-channel exhaustive search at sparsity ``cfg.k_max``."""
    cfg = cfg or SolverConfig(kind="oracle")
    A, Y = _check_problem(A, Y, cfg)
    start = time.perf_counter()
    Shat = np.zeros((A.shape[1], Y.shape[1]))
    supports = []
    for j in range(Y.shape[1]):
        res = exhaustive_oracle(A, Y[:, j], cfg.k_max)
        Shat[list(res.support), j] = res.coef
        supports.append(list(res.support))
    R = Y - A @ Shat
    return SolverResult(Shat, supports, [float(np.linalg.norm(Y)), float(np.linalg.norm(R))],
                        cfg.k_max, time.perf_counter() - start)


def solve(kind: str, A, Y, cfg: SolverConfig, model: LstmParams | None = None) -> SolverResult:
    """Dispatch by solver name (``lstm-cs``, ``omp``, ``somp``, ``oracle``)."""
    if kind == "lstm-cs":
        if model is None:
            raise ConfigurationError("lstm-cs needs a trained model")
        return lstm_cs_solve(A, Y, model, cfg)
    if kind == "omp":
        return omp_solve(A, Y, cfg)
    if kind == "somp":
        return somp_solve(A, Y, cfg)
    if kind == "oracle":
        return oracle_solve(A, Y, cfg)
    raise ConfigurationError(f"unknown solver {kind!r}")
