"""LSTM-guided greedy recovery of multiple sparse vectors (MMV) plus classical
OMP / SOMP baselines, training code and experiment drivers."""
from .estimators import LSTMCSDecoder, OMPDecoder, SOMPDecoder
from .lstm import LstmParams, init_params, load_model, save_model
from .signal_model import (BlockTransformer, NoiseSpec, gen_measurement_ensemble,
                           gen_sparse_ensemble, measure, nmse)
from .solvers import (SolverConfig, SolverResult, exhaustive_oracle, lstm_cs_solve, omp_solve,
                      somp_solve)
from .training import generate_training_pairs, train

__version__ = "0.1.0"

__all__ = [
    "BlockTransformer", "LSTMCSDecoder", "LstmParams", "NoiseSpec", "OMPDecoder", "SOMPDecoder",
    "SolverConfig", "SolverResult", "exhaustive_oracle", "gen_measurement_ensemble",
    "gen_sparse_ensemble", "generate_training_pairs", "init_params", "load_model",
    "lstm_cs_solve", "measure", "nmse", "omp_solve", "save_model", "somp_solve", "train",
]
