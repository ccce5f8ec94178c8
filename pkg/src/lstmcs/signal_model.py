"""Measurement ensembles, sparse ensembles, block transforms and metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn, idctn
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_matrix
from .exceptions import ConfigurationError, DomainError, ShapeError, UndefinedMetricError
from .rng import SplitMix64

PATTERNS = ("joint", "independent", "image-derived")
AMPLITUDE_LAWS = ("uniform", "gaussian")


@dataclass(frozen=True)
class MeasurementEnsemble:
    """Column-normalised Gaussian sensing matrix ``A`` (M x N)."""

    A: np.ndarray
    seed: int
    M: int
    N: int


@dataclass
class SparseEnsemble:
    S: np.ndarray
    k_per_channel: tuple
    pattern: str = "independent"
    supports: list = field(default_factory=list)

    @property
    def N(self):
        return self.S.shape[0]

    @property
    def L(self):
        return self.S.shape[1]


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ConfigurationError(f"noise sigma must be >= 0, got {self.sigma}")


def gen_measurement_ensemble(M: int, N: int, seed: int) -> MeasurementEnsemble:
    """Draw an M x N standard Gaussian matrix and scale each column to unit norm.

    Entries are generated row-major from a single seeded stream.
    """
    if M <= 0 or N <= 0:
        raise ConfigurationError(f"dimensions must be positive, got M={M}, N={N}")
    if M > N:
        raise ConfigurationError(f"need M <= N for compressive sensing, got M={M} > N={N}")
    stream = SplitMix64(seed)
    A = stream.normal(M * N).reshape(M, N)
    A /= np.linalg.norm(A, axis=0, keepdims=True)
    return MeasurementEnsemble(A=np.ascontiguousarray(A), seed=int(seed), M=M, N=N)


def gen_sparse_ensemble(N: int, L: int, k, pattern: str = "independent",
                        amplitude_law: str = "uniform", seed: int = 0) -> SparseEnsemble:
    """Random N x L sparse matrix.

    ``k`` is either one count for all channels or a sequence of L counts.
    Supports are uniform without replacement, drawn once for ``joint`` and per
    channel for ``independent``. Amplitudes are ``uniform`` (magnitude in
    [0.5, 1.5] with a random sign) or ``gaussian`` (standard normal).
    """
    ks = (int(k),) * L if np.isscalar(k) else tuple(int(v) for v in k)
    if len(ks) != L:
        raise ConfigurationError(f"got {len(ks)} sparsity levels for {L} channels")
    if pattern not in ("joint", "independent"):
        raise ConfigurationError(f"synthetic pattern must be joint or independent, got {pattern!r}")
    if amplitude_law not in AMPLITUDE_LAWS:
        raise ConfigurationError(f"unknown amplitude law {amplitude_law!r}")
    for kj in ks:
        if kj < 0 or kj > N:
            raise ConfigurationError(f"sparsity k={kj} outside [0, N={N}]")
    if pattern == "joint" and len(set(ks)) > 1:
        raise ConfigurationError("joint pattern needs the same k on every channel")

    stream = SplitMix64(seed)
    S = np.zeros((N, L))
    supports = []
    shared = stream.choice_without_replacement(N, ks[0]) if pattern == "joint" and L else None
    for j, kj in enumerate(ks):
        support = shared if shared is not None else stream.choice_without_replacement(N, kj)
        if amplitude_law == "uniform":
            mag = stream.uniform_range(0.5, 1.5, kj)
            sign = np.where(stream.uniform(kj) < 0.5, -1.0, 1.0)
            values = mag * sign
        else:
            values = stream.normal(kj)
        S[support, j] = values
        supports.append(np.sort(support))
    return SparseEnsemble(S=S, k_per_channel=ks, pattern=pattern, supports=supports)


def measure(A, S, noise: NoiseSpec | None = None) -> np.ndarray:
    """``Y = A S + E`` with i.i.d. ``N(0, sigma^2)`` entries in ``E`` (row-major draw)."""
    A = A.A if isinstance(A, MeasurementEnsemble) else check_matrix(A, "A")
    S = S.S if isinstance(S, SparseEnsemble) else check_matrix(S, "S", allow_empty=True)
    if A.shape[1] != S.shape[0]:
        raise ShapeError(f"A is {A.shape[0]}x{A.shape[1]} but S has {S.shape[0]} rows")
    Y = A @ S
    if noise is not None and noise.sigma > 0:
        E = SplitMix64(noise.seed).normal(Y.size).reshape(Y.shape)
        Y = Y + noise.sigma * E
    return np.ascontiguousarray(Y)


def truncate_to_k(S, k: int) -> np.ndarray:
    """Keep the ``k`` largest-magnitude entries of every column (lowest index wins ties)."""
    S = np.asarray(S, dtype=np.float64)
    out = np.zeros_like(S)
    if k <= 0:
        return out
    for j in range(S.shape[1]):
        order = np.argsort(-np.abs(S[:, j]), kind="stable")[:k]
        keep = order[S[order, j] != 0]
        out[keep, j] = S[keep, j]
    return out


# -- block transforms ---------------------------------------------------------

def _haar_step(n: int) -> np.ndarray:
    """One level of the orthonormal 1-D Haar analysis on ``n`` samples."""
    H = np.zeros((n, n))
    h = n // 2
    s = 1.0 / np.sqrt(2.0)
    for i in range(h):
        H[i, 2 * i] = H[i, 2 * i + 1] = s
        H[h + i, 2 * i] = s
        H[h + i, 2 * i + 1] = -s
    return H


def _haar3_forward(block):
    out = block.copy()
    n = block.shape[0]
    for _ in range(3):
        H = _haar_step(n)
        out[:n, :n] = H @ out[:n, :n] @ H.T
        n //= 2
    return out


def _haar3_inverse(coef):
    out = coef.copy()
    sizes = [coef.shape[0] // 4, coef.shape[0] // 2, coef.shape[0]]
    for n in sizes:
        H = _haar_step(n)
        out[:n, :n] = H.T @ out[:n, :n] @ H
    return out


def _check_blocks(image, block):
    image = check_matrix(image, "image")
    if block <= 0 or image.shape[0] % block or image.shape[1] % block:
        raise ConfigurationError(f"image of shape {image.shape} is not divisible into {block}x{block} blocks")
    return image


def block_transform(image, block: int, kind: str = "dct", direction: str = "forward") -> np.ndarray:
    """Apply an orthonormal 2-D transform independently to every block.

    ``kind`` is ``dct`` (DCT-II, orthonormal scaling), ``haar3`` (three-level
    Haar, block size a multiple of 8) or ``none``.
    """
    image = _check_blocks(image, block)
    if direction not in ("forward", "inverse"):
        raise ConfigurationError(f"direction must be forward or inverse, got {direction!r}")
    if kind == "none":
        return image.copy()
    if kind == "haar3" and block % 8:
        raise ConfigurationError(f"haar3 needs a block size divisible by 8, got {block}")
    if kind not in ("dct", "haar3"):
        raise ConfigurationError(f"unknown transform {kind!r}")

    rows, cols = image.shape
    tiles = image.reshape(rows // block, block, cols // block, block).transpose(0, 2, 1, 3)
    if kind == "dct":
        fn = dctn if direction == "forward" else idctn
        out = fn(tiles, type=2, axes=(2, 3), norm="ortho")
    else:
        fn = _haar3_forward if direction == "forward" else _haar3_inverse
        out = np.empty_like(tiles)
        for a in range(tiles.shape[0]):
            for b in range(tiles.shape[1]):
                out[a, b] = fn(tiles[a, b])
    return np.ascontiguousarray(out.transpose(0, 2, 1, 3).reshape(rows, cols))


def blockize(image, block: int) -> np.ndarray:
    """Vectorise blocks into columns.

    Each block is flattened column-major; blocks are ordered row-major across
    the image. Returns a ``block**2 x n_blocks`` matrix.
    """
    image = _check_blocks(image, block)
    rows, cols = image.shape
    tiles = image.reshape(rows // block, block, cols // block, block).transpose(0, 2, 3, 1)
    # tiles[a, b, col, row] -> column-major flatten of each block
    return np.ascontiguousarray(tiles.reshape(-1, block * block).T)


def deblockize(columns, block: int, shape) -> np.ndarray:
    columns = check_matrix(columns, "columns")
    rows, cols = shape
    if columns.shape != (block * block, (rows // block) * (cols // block)) or rows % block or cols % block:
        raise ConfigurationError(f"cannot rebuild a {rows}x{cols} image from {columns.shape} with block {block}")
    tiles = columns.T.reshape(rows // block, cols // block, block, block).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(tiles.reshape(rows, cols))


class BlockTransformer(BaseEstimator, TransformerMixin):
    """Image -> block-coefficient matrix, composable in sklearn pipelines.

    ``transform`` maps a 2-D image to the ``block**2 x n_blocks`` matrix of
    per-block transform coefficients; ``inverse_transform`` undoes it.
    """

    def __init__(self, block=8, kind="dct"):
        self.block = block
        self.kind = kind

    def fit(self, X, y=None):
        X = _check_blocks(X, self.block)
        self.image_shape_ = X.shape
        return self

    def transform(self, X):
        X = _check_blocks(X, self.block)
        return blockize(block_transform(X, self.block, self.kind, "forward"), self.block)

    def inverse_transform(self, X, shape=None):
        shape = shape or getattr(self, "image_shape_", None)
        if shape is None:
            raise ConfigurationError("image shape unknown; call fit or pass shape")
        image = deblockize(X, self.block, shape)
        return block_transform(image, self.block, self.kind, "inverse")


# -- metrics ------------------------------------------------------------------

def nmse(S, Shat) -> float:
    """Normalised reconstruction error ``||Shat - S||_F / ||S||_F``."""
    S = np.asarray(S, dtype=np.float64)
    Shat = np.asarray(Shat, dtype=np.float64)
    if S.shape != Shat.shape:
        raise ShapeError(f"S is {S.shape} but Shat is {Shat.shape}")
    ref = np.linalg.norm(S)
    if ref == 0:
        raise UndefinedMetricError("NMSE undefined for an all-zero reference")
    return float(np.linalg.norm(Shat - S) / ref)


def snr_of(sigma: float, signal_power: float) -> float:
    """SNR in dB of a signal with mean power ``signal_power`` under noise ``sigma``."""
    if not (sigma > 0 and signal_power > 0):
        raise DomainError(f"sigma and signal power must be positive, got {sigma}, {signal_power}")
    return float(10.0 * np.log10(signal_power / sigma**2))
