"""Training data, cross-entropy loss, BPTT gradients and the Nesterov trainer."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, ShapeError, TrainingDivergedError
from .linalg import least_squares_solve
from .lstm import LstmParams, forward_sequence, init_params
from .rng import SplitMix64, derive_seed
from .signal_model import MeasurementEnsemble, SparseEnsemble, nmse

log = logging.getLogger(__name__)

NO_TARGET = -1


@dataclass(frozen=True)
class TrainingPair:
    r: np.ndarray
    target: int
    t: int

    def s0(self, N: int) -> np.ndarray:
        onehot = np.zeros(N)
        onehot[self.target] = 1.0
        return onehot


@dataclass
class TrainingSequence:
    """Residual inputs for channels ``0..L-1`` at one removal depth.

    ``targets[t]`` is the support index channel ``t`` should predict, or
    ``NO_TARGET`` when that channel has no entry left at this depth; such
    channels still feed their residual so the recurrence sees every channel.
    """

    residuals: np.ndarray
    targets: np.ndarray
    depth: int = 0

    @property
    def L(self):
        return self.residuals.shape[0]

    def pairs(self):
        return [TrainingPair(self.residuals[t], int(k), t)
                for t, k in enumerate(self.targets) if k != NO_TARGET]


def normalize_residual(r: np.ndarray) -> np.ndarray:
    """Scale by the largest magnitude; an all-zero residual is returned unchanged."""
    peak = np.max(np.abs(r), axis=0)
    return r / np.where(peak > 0, peak, 1.0)


def magnitude_order(s: np.ndarray, k_max: int | None = None) -> np.ndarray:
    """Non-zero indices of ``s`` by decreasing magnitude (lower index first on ties)."""
    nz = np.flatnonzero(s)
    order = nz[np.argsort(-np.abs(s[nz]), kind="stable")]
    return order if k_max is None else order[:k_max]


def generate_training_pairs(S, A, k_max: int, include_initial_pair: bool = True,
                            normalize: bool = True, residual: str = "true") -> list[TrainingSequence]:
    """Residual/target sequences for one sparse matrix.

    Each channel's non-zeros are ranked by magnitude (``k0, k1, ...``; columns
    with more than ``k_max`` entries keep the ``k_max`` largest). At depth
    ``j`` the channel input is ``y - A_O s_O`` with ``O = {k0..k(j-1)}`` and the
    target is ``kj``. Depth 0 (input ``y``) is emitted only when
    ``include_initial_pair`` is set.

    ``residual="projected"`` replaces the true coefficients ``s_O`` by the
    least-squares fit of ``y`` on ``A_O``, i.e. the residual the decoder
    itself computes once it has found ``O``.
    """
    if residual not in ("true", "projected"):
        raise ConfigurationError(f"residual must be 'true' or 'projected', got {residual!r}")
    A = A.A if isinstance(A, MeasurementEnsemble) else np.asarray(A, dtype=np.float64)
    S = S.S if isinstance(S, SparseEnsemble) else np.asarray(S, dtype=np.float64)
    if A.shape[1] != S.shape[0]:
        raise ShapeError(f"A is {A.shape[0]}x{A.shape[1]} but S has {S.shape[0]} rows")
    if k_max < 1:
        raise ConfigurationError(f"k_max must be >= 1, got {k_max}")
    N, L = S.shape
    orders = [magnitude_order(S[:, t], k_max) for t in range(L)]
    Y = A @ np.column_stack([_restrict(S[:, t], orders[t]) for t in range(L)]) if L else A @ S
    depth_count = max((len(o) for o in orders), default=0)
    sequences = []
    for j in range(0 if include_initial_pair else 1, depth_count):
        residuals = np.empty((L, A.shape[0]))
        targets = np.full(L, NO_TARGET, dtype=np.int64)
        for t, order in enumerate(orders):
            removed = order[:j]
            if j >= len(order):
                # exhausted channel: the decoder feeds zeros once a residual vanishes
                r = np.zeros(A.shape[0])
            elif residual == "true" or not len(removed):
                r = Y[:, t] - A[:, removed] @ S[removed, t]
            else:
                r = Y[:, t] - A[:, removed] @ least_squares_solve(A[:, removed], Y[:, t], check=False)
            residuals[t] = normalize_residual(r) if normalize else r
            if j < len(order):
                targets[t] = order[j]
        sequences.append(TrainingSequence(residuals, targets, depth=j))
    return sequences


def _restrict(s, idx):
    out = np.zeros_like(s)
    out[idx] = s[idx]
    return out


def cross_entropy_loss(p, s0) -> float:
    """``-sum s0 * log p`` for a probability vector and a one-hot target."""
    p = np.asarray(p, dtype=np.float64)
    s0 = np.asarray(s0, dtype=np.float64)
    if p.shape != s0.shape:
        raise ShapeError(f"p has shape {p.shape}, target has {s0.shape}")
    hot = s0 != 0
    return float(-np.sum(s0[hot] * np.log(p[hot])))


# -- gradients ----------------------------------------------------------------

def _stack(sequences):
    if isinstance(sequences, TrainingSequence):
        sequences = [sequences]
    residuals = np.stack([s.residuals for s in sequences], axis=-1)   # (L, M, B)
    targets = np.stack([s.targets for s in sequences], axis=-1)       # (L, B)
    return residuals, targets


def batch_loss(params: LstmParams, residuals, targets, caches=None) -> float:
    caches = caches if caches is not None else forward_sequence(params, residuals)
    total = 0.0
    for t, cache in enumerate(caches):
        cols = np.flatnonzero(targets[t] != NO_TARGET)
        total -= np.sum(np.log(cache.p[targets[t, cols], cols]))
    return float(total)


def sequence_loss(params: LstmParams, sequences) -> float:
    """Summed cross-entropy over channels (and over sequences if a list is given)."""
    residuals, targets = _stack(sequences)
    return batch_loss(params, residuals, targets)


def backprop(params: LstmParams, residuals, targets, caches) -> LstmParams:
    """Exact gradient of the summed cross-entropy by backpropagation through channels.

    ``residuals`` is ``(L, M, B)``, ``targets`` ``(L, B)`` and ``caches`` the
    batched forward caches. Per-channel and per-sequence contributions are
    summed into a single gradient set.
    """
    L = residuals.shape[0]
    if len(caches) != L or targets.shape[0] != L:
        raise ShapeError(f"{len(caches)} caches and {targets.shape[0]} target rows for {L} channels")
    P = params
    full = P.variant == "full"
    grad = P.like()
    G = grad._views
    dv_next = np.zeros_like(caches[0].v)
    dc_next = np.zeros_like(caches[0].c)
    for t in range(L - 1, -1, -1):
        k = caches[t]
        dz = k.p.copy()
        cols = np.flatnonzero(targets[t] != NO_TARGET)
        dz[targets[t, cols], cols] -= 1.0
        if cols.size < dz.shape[1]:
            mask = np.zeros(dz.shape[1])
            mask[cols] = 1.0
            dz *= mask
        G["U"] += dz @ k.v.T
        dv = P["U"].T @ dz + dv_next
        da1 = dv * k.h * k.o * (1.0 - k.o)
        dc = dc_next + dv * k.o * (1.0 - k.h**2)
        if full:
            dc += P["Wp1"].T @ da1
        da3 = dc * k.y_g * k.i * (1.0 - k.i)
        da4 = dc * k.i * (1.0 - k.y_g**2)
        gates = [(1, da1), (3, da3), (4, da4)]
        if full:
            da2 = dc * k.c_prev * k.f * (1.0 - k.f)
            gates.append((2, da2))
            G["Wp1"] += da1 @ k.c.T
            G["Wp2"] += da2 @ k.c_prev.T
            G["Wp3"] += da3 @ k.c_prev.T
        dv_next = np.zeros_like(dv)
        for g, da in gates:
            G[f"W{g}"] += da @ k.r.T
            G[f"Wrec{g}"] += da @ k.v_prev.T
            G[f"b{g}"] += da.sum(axis=1)
            dv_next += P[f"Wrec{g}"].T @ da
        dc_next = dc * k.f
        if full:
            dc_next += P["Wp2"].T @ da2 + P["Wp3"].T @ da3
    return grad


def loss_and_gradient(params: LstmParams, sequences):
    residuals, targets = _stack(sequences)
    caches = forward_sequence(params, residuals)
    return batch_loss(params, residuals, targets, caches), backprop(params, residuals, targets, caches)


def backprop_sequence(params: LstmParams, seq: TrainingSequence, caches=None) -> LstmParams:
    """Gradient set for a single sequence (forward pass run if no caches given)."""
    residuals, targets = _stack(seq)
    if caches is None:
        caches = forward_sequence(params, residuals)
    else:
        caches = [_as_batch(c) for c in caches]
    return backprop(params, residuals, targets, caches)


def _as_batch(cache):
    if cache.v.ndim == 2:
        return cache
    from dataclasses import replace
    return replace(cache, **{name: None if val is None else val[:, None]
                             for name, val in vars(cache).items()})


def central_difference(fn, theta, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``theta`` (copied, not mutated)."""
    theta = np.array(theta, dtype=np.float64, ndmin=1)
    grad = np.empty_like(theta)
    for idx in range(theta.size):
        orig = theta[idx]
        theta[idx] = orig + h
        up = fn(theta)
        theta[idx] = orig - h
        down = fn(theta)
        theta[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def fd_gradient_oracle(params: LstmParams, sequences, h: float = 1e-5) -> LstmParams:
    """Finite-difference gradient of :func:`sequence_loss`, one parameter at a time."""
    residuals, targets = _stack(sequences)
    work = params.copy()

    def loss(flat):
        work.flat[:] = flat
        return batch_loss(work, residuals, targets)

    return params.like(central_difference(loss, params.flat, h))


# -- optimiser ----------------------------------------------------------------

def momentum_at(update: int, total_updates: int, low: float = 0.9, high: float = 0.995) -> float:
    """Momentum for 1-based ``update``: ``low`` in the first and last 10% of
    ``total_updates``, ``high`` in between."""
    edge = max(1, math.ceil(0.1 * total_updates))
    if update <= edge or update > total_updates - edge:
        return low
    return high


def clip_gradient(grad: np.ndarray, threshold: float) -> np.ndarray:
    return np.clip(grad, -threshold, threshold)


@dataclass
class OptimizerState:
    """Momentum buffer and counters for Nesterov updates.

    ``momentum`` overrides the two-level schedule with a constant when set.
    """

    size: int
    total_updates: int
    step_size: float = 0.05
    clip: float = 1.0
    momentum: float | None = None
    velocity: np.ndarray = None
    updates: int = 0

    def __post_init__(self):
        if self.velocity is None:
            self.velocity = np.zeros(self.size)

    def current_momentum(self) -> float:
        if self.momentum is not None:
            return self.momentum
        return momentum_at(self.updates + 1, self.total_updates)

    def lookahead(self, params: LstmParams) -> LstmParams:
        """Point at which the next gradient must be evaluated."""
        return params.like(params.flat + self.current_momentum() * self.velocity)


def nesterov_step(opt: OptimizerState, params: LstmParams, grad_at_lookahead) -> LstmParams:
    """One update ``dL = mu dL - eps clip(g)``, ``params += dL``; returns new params."""
    g = grad_at_lookahead.flat if isinstance(grad_at_lookahead, LstmParams) else np.asarray(grad_at_lookahead)
    mu = opt.current_momentum()
    step = clip_gradient(g, opt.clip) * params.trainable_mask()
    opt.velocity = mu * opt.velocity - opt.step_size * step
    opt.updates += 1
    return params.like(params.flat + opt.velocity)


# -- training loop ------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    mean_batch_loss: float
    validation_nmse: float
    wall_time: float


@dataclass
class TrainingResult:
    params: LstmParams
    history: list = field(default_factory=list)
    best_epoch: int = 0


def build_sequences(matrices, A, k_max, include_initial_pair=True, residual="true"):
    sequences = []
    for S in matrices:
        sequences.extend(generate_training_pairs(S, A, k_max, include_initial_pair, residual=residual))
    return sequences


def train(train_matrices, A, *, n_cells=64, variant="reduced", epochs=25, batch_size=20,
          step_size=0.05, clip=1.0, k_max=None, include_initial_pair=True, seed=0,
          validation_matrices=None, early_stopping=True, patience=None, res_min=1e-6,
          init_scale=0.05, momentum=None, residual="true", callback=None) -> TrainingResult:
    """Fit the decoder to sparse training matrices measured by ``A``.

    Every epoch shuffles the depth sequences with a seeded permutation, then
    for each minibatch evaluates the summed gradient at the Nesterov lookahead
    point, clips it entry-wise and updates. With validation matrices, the mean
    LSTM-CS NMSE is logged each epoch and (``early_stopping``) the best
    epoch's parameters are returned.
    """
    from .solvers import SolverConfig, lstm_cs_solve

    A = A.A if isinstance(A, MeasurementEnsemble) else np.asarray(A, dtype=np.float64)
    matrices = [m.S if isinstance(m, SparseEnsemble) else np.asarray(m, dtype=np.float64)
                for m in train_matrices]
    if not matrices:
        raise ConfigurationError("training set is empty")
    M, N = A.shape
    if k_max is None:
        k_max = max(int(np.max(np.count_nonzero(S, axis=0))) for S in matrices)
    sequences = build_sequences(matrices, A, k_max, include_initial_pair, residual)
    if not sequences:
        raise ConfigurationError("training matrices produced no training pairs")
    if batch_size > len(sequences):
        raise ConfigurationError(f"batch size {batch_size} exceeds {len(sequences)} training sequences")
    val = [m.S if isinstance(m, SparseEnsemble) else np.asarray(m, dtype=np.float64)
           for m in (validation_matrices or [])]
    val = [S for S in val if np.any(S)]

    params = init_params(M, N, n_cells, variant, derive_seed(seed, 1), scale=init_scale)
    batches_per_epoch = math.ceil(len(sequences) / batch_size)
    opt = OptimizerState(params.flat.size, epochs * batches_per_epoch, step_size, clip, momentum)
    order_stream = SplitMix64(derive_seed(seed, 2))
    # each validation matrix is decoded at its own sparsity, capped by k_max
    val_cfgs = [SolverConfig(res_min=res_min, k_max=min(k_max, M, int(np.max(np.count_nonzero(S, axis=0)))))
                for S in val]

    result = TrainingResult(params=params.copy())
    best = math.inf
    since_best = 0
    start = time.perf_counter()
    for epoch in range(1, epochs + 1):
        perm = order_stream.permutation(len(sequences))
        losses = []
        for b in range(batches_per_epoch):
            batch = [sequences[i] for i in perm[b * batch_size:(b + 1) * batch_size]]
            ahead = opt.lookahead(params)
            loss, grad = loss_and_gradient(ahead, batch)
            n_pairs = sum(int(np.sum(s.targets != NO_TARGET)) for s in batch)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad.flat))):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, batch {b + 1}")
            losses.append(loss / max(n_pairs, 1))
            params = nesterov_step(opt, params, grad)
        val_nmse = math.nan
        if val:
            errs = [nmse(S, lstm_cs_solve(A, A @ S, params, cfg).Shat) for S, cfg in zip(val, val_cfgs)]
            val_nmse = float(np.mean(errs))
        record = EpochRecord(epoch, float(np.mean(losses)), val_nmse, time.perf_counter() - start)
        result.history.append(record)
        log.debug("epoch %d loss %.5f val %.5f", epoch, record.mean_batch_loss, val_nmse)
        if callback is not None:
            callback(record)
        if not val or not early_stopping:
            result.params, result.best_epoch = params.copy(), epoch
        elif val_nmse < best:
            best, since_best = val_nmse, 0
            result.params, result.best_epoch = params.copy(), epoch
        else:
            since_best += 1
            if patience is not None and since_best >= patience:
                break
    return result
