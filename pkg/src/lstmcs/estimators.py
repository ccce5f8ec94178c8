"""scikit-learn style wrappers around the decoders.

Measurements ``Y`` (``M x L``, or a stack ``n x M x L``) go to ``predict``,
which returns the recovered sparse matrices. ``fit`` takes a stack of sparse
training matrices ``n x N x L``; it trains the LSTM for :class:`LSTMCSDecoder`
and only validates shapes for the classical solvers.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .exceptions import ShapeError
from .lstm import LstmParams
from .signal_model import nmse
from .solvers import SolverConfig, lstm_cs_solve, omp_solve, somp_solve
from .training import train


def _stack(X, rows, name):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != rows:
        raise ShapeError(f"{name} must be ({rows}, L) or (n, {rows}, L), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or Inf")
    return X


class _GreedyDecoder(BaseEstimator):
    def _config(self):
        return SolverConfig(res_min=self.res_min, k_max=self.k_max)

    def _decode(self, Y):
        raise NotImplementedError

    def fit(self, X=None, y=None):
        A = check_matrix(self.A, "A")
        if X is not None:
            _stack(X, A.shape[1], "X")
        self.A_ = A
        self.n_features_in_ = A.shape[0]
        return self

    def predict(self, Y):
        check_is_fitted(self, "A_")
        single = np.ndim(Y) == 2
        stack = _stack(Y, self.A_.shape[0], "Y")
        out = np.stack([self._decode(Yi).Shat for Yi in stack])
        return out[0] if single else out

    def score(self, Y, S):
        """Negative mean NMSE of the reconstructions (higher is better)."""
        S = _stack(S, self.A_.shape[1], "S") if hasattr(self, "A_") else S
        Shat = self.predict(Y)
        Shat = Shat[None] if Shat.ndim == 2 else Shat
        return -float(np.mean([nmse(s, sh) for s, sh in zip(S, Shat)]))


class OMPDecoder(_GreedyDecoder):
    """Per-channel orthogonal matching pursuit."""

    def __init__(self, A=None, k_max=10, res_min=1e-6):
        self.A = A
        self.k_max = k_max
        self.res_min = res_min

    def _decode(self, Y):
        return omp_solve(self.A_, Y, self._config())


class SOMPDecoder(_GreedyDecoder):
    """Simultaneous OMP with one support shared by all channels."""

    def __init__(self, A=None, k_max=10, res_min=1e-6):
        self.A = A
        self.k_max = k_max
        self.res_min = res_min

    def _decode(self, Y):
        return somp_solve(self.A_, Y, self._config())


class LSTMCSDecoder(_GreedyDecoder):
    """Greedy decoder whose atom choices come from a trained LSTM.

    Pass ``model`` to use pre-trained parameters; ``fit`` then only checks
    dimensions unless training data is supplied.
    """

    def __init__(self, A=None, k_max=10, res_min=1e-6, n_cells=64, variant="reduced", epochs=25,
                 batch_size=20, step_size=0.05, clip=1.0, include_initial_pair=True,
                 residual_mode="true", support_mode="per-channel", random_state=0, model=None):
        self.A = A
        self.k_max = k_max
        self.res_min = res_min
        self.n_cells = n_cells
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.step_size = step_size
        self.clip = clip
        self.include_initial_pair = include_initial_pair
        self.residual_mode = residual_mode
        self.support_mode = support_mode
        self.random_state = random_state
        self.model = model

    def _config(self):
        return SolverConfig(res_min=self.res_min, k_max=self.k_max, support_mode=self.support_mode)

    def fit(self, X=None, y=None, X_val=None):
        super().fit(X)
        if X is None:
            if not isinstance(self.model, LstmParams):
                raise NotFittedError("LSTMCSDecoder needs training matrices or a pre-trained model")
            if (self.model.M, self.model.N) != self.A_.shape:
                raise ShapeError(f"model is for {self.model.M}x{self.model.N}, A is {self.A_.shape}")
            self.params_, self.history_ = self.model, []
            return self
        X = _stack(X, self.A_.shape[1], "X")
        val = None if X_val is None else list(_stack(X_val, self.A_.shape[1], "X_val"))
        result = train(list(X), self.A_, n_cells=self.n_cells, variant=self.variant, epochs=self.epochs,
                       batch_size=self.batch_size, step_size=self.step_size,
                       clip=self.clip, k_max=self.k_max, include_initial_pair=self.include_initial_pair,
                       seed=self.random_state, validation_matrices=val, res_min=self.res_min,
                       residual=self.residual_mode)
        self.params_, self.history_ = result.params, result.history
        return self

    def _decode(self, Y):
        check_is_fitted(self, "params_")
        return lstm_cs_solve(self.A_, Y, self.params_, self._config())
