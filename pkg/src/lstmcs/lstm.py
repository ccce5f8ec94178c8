"""LSTM cell over channels, softmax head, and the LSTMCS01 model file.

Forward recurrence for channel ``t`` with input residual ``r``::

    y_g = tanh(W4 r + Wrec4 v_prev + b4)
    i   = sigmoid(W3 r + Wrec3 v_prev + Wp3 c_prev + b3)
    f   = sigmoid(W2 r + Wrec2 v_prev + Wp2 c_prev + b2)
    c   = f * c_prev + i * y_g
    o   = sigmoid(W1 r + Wrec1 v_prev + Wp1 c + b1)
    v   = o * tanh(c)
    p   = softmax(U v)

The ``reduced`` variant drops the peephole terms and pins ``f`` to one.
All parameters live in one flat float64 buffer; named tensors are views into
it, in the order W1..W4, Wrec1..Wrec4, Wp1..Wp3, b1..b4, U.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .exceptions import (BadMagicError, CrcMismatchError, ModelFormatError, ShapeError,
                         TruncatedStreamError)
from .linalg import sigmoid, softmax
from .rng import SplitMix64

VARIANTS = ("full", "reduced")
_VARIANT_CODE = {"full": 0, "reduced": 1}
MAGIC = b"LSTMCS01"
_HEADER = struct.Struct("<5I")

# Tensors held at zero (and never updated) in the reduced variant.
FROZEN_IN_REDUCED = ("W2", "Wrec2", "b2", "Wp1", "Wp2", "Wp3")


def tensor_layout(M: int, N: int, n_cells: int):
    """``[(name, shape), ...]`` in storage order."""
    layout = [(f"W{g}", (n_cells, M)) for g in range(1, 5)]
    layout += [(f"Wrec{g}", (n_cells, n_cells)) for g in range(1, 5)]
    layout += [(f"Wp{g}", (n_cells, n_cells)) for g in range(1, 4)]
    layout += [(f"b{g}", (n_cells,)) for g in range(1, 5)]
    layout.append(("U", (N, n_cells)))
    return layout


class LstmParams:
    """Parameter collection of the LSTM decoder (also used for gradients)."""

    def __init__(self, M: int, N: int, n_cells: int, variant: str = "reduced", flat=None):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        if min(M, N, n_cells) <= 0:
            raise ValueError(f"dimensions must be positive, got M={M}, N={N}, n_cells={n_cells}")
        self.M, self.N, self.n_cells, self.variant = int(M), int(N), int(n_cells), variant
        self.layout = tensor_layout(self.M, self.N, self.n_cells)
        size = sum(int(np.prod(shape)) for _, shape in self.layout)
        if flat is None:
            flat = np.zeros(size)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ShapeError(f"flat buffer has {flat.size} entries, layout needs {size}")
        self.flat = flat
        self._views = {}
        offset = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            self._views[name] = self.flat[offset:offset + n].reshape(shape)
            offset += n

    @property
    def dims(self):
        return self.M, self.N, self.n_cells

    def __getitem__(self, name) -> np.ndarray:
        return self._views[name]

    def names(self):
        return [name for name, _ in self.layout]

    def like(self, flat=None) -> "LstmParams":
        return LstmParams(self.M, self.N, self.n_cells, self.variant, flat)

    def copy(self) -> "LstmParams":
        return self.like(self.flat.copy())

    def trainable_mask(self) -> np.ndarray:
        mask = np.ones_like(self.flat)
        if self.variant == "reduced":
            offset = 0
            for name, shape in self.layout:
                n = int(np.prod(shape))
                if name in FROZEN_IN_REDUCED:
                    mask[offset:offset + n] = 0.0
                offset += n
        return mask

    def __eq__(self, other):
        return (isinstance(other, LstmParams) and self.dims == other.dims
                and self.variant == other.variant
                and self.flat.tobytes() == other.flat.tobytes())

    def __repr__(self):
        return f"LstmParams(M={self.M}, N={self.N}, n_cells={self.n_cells}, variant={self.variant!r})"


def init_params(M: int, N: int, n_cells: int, variant: str = "reduced", seed: int = 0,
                scale: float = 0.05) -> LstmParams:
    """Weights uniform in (-scale, scale), biases zero, frozen tensors zero."""
    params = LstmParams(M, N, n_cells, variant)
    stream = SplitMix64(seed)
    for name, shape in params.layout:
        if name.startswith("b"):
            continue
        params[name][...] = stream.uniform_range(-scale, scale, int(np.prod(shape))).reshape(shape)
    params.flat[params.trainable_mask() == 0] = 0.0  # plain zeros, not -0.0
    return params


@dataclass
class LstmState:
    c: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n_cells: int, batch: int | None = None):
        shape = (n_cells,) if batch is None else (n_cells, batch)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class StepCache:
    """Intermediates of one channel step (vectors, or ``(n, B)`` batches)."""

    r: np.ndarray
    c_prev: np.ndarray
    v_prev: np.ndarray
    y_g: np.ndarray
    i: np.ndarray
    f: np.ndarray
    c: np.ndarray
    o: np.ndarray
    h: np.ndarray
    v: np.ndarray
    z: np.ndarray = None
    p: np.ndarray = None


def forward_step(params: LstmParams, r_t, state: LstmState):
    """Advance the cell by one channel. ``r_t`` is ``(M,)`` or ``(M, B)``."""
    r_t = np.asarray(r_t, dtype=np.float64)
    if r_t.shape[0] != params.M:
        raise ShapeError(f"residual has length {r_t.shape[0]}, model expects M={params.M}")
    P = params
    c_prev, v_prev = state.c, state.v
    y_g = np.tanh(P["W4"] @ r_t + P["Wrec4"] @ v_prev + _col(P["b4"], r_t))
    if P.variant == "full":
        i = sigmoid(P["W3"] @ r_t + P["Wrec3"] @ v_prev + P["Wp3"] @ c_prev + _col(P["b3"], r_t))
        f = sigmoid(P["W2"] @ r_t + P["Wrec2"] @ v_prev + P["Wp2"] @ c_prev + _col(P["b2"], r_t))
        c = f * c_prev + i * y_g
        o = sigmoid(P["W1"] @ r_t + P["Wrec1"] @ v_prev + P["Wp1"] @ c + _col(P["b1"], r_t))
    else:
        i = sigmoid(P["W3"] @ r_t + P["Wrec3"] @ v_prev + _col(P["b3"], r_t))
        f = np.ones_like(c_prev)
        c = c_prev + i * y_g
        o = sigmoid(P["W1"] @ r_t + P["Wrec1"] @ v_prev + _col(P["b1"], r_t))
    h = np.tanh(c)
    v = o * h
    cache = StepCache(r=r_t, c_prev=c_prev, v_prev=v_prev, y_g=y_g, i=i, f=f, c=c, o=o, h=h, v=v)
    return LstmState(c=c, v=v), cache


def _col(b, like):
    return b if like.ndim == 1 else b[:, None]


def channel_probabilities(params: LstmParams, v) -> np.ndarray:
    """``softmax(U v)``; ``v`` is ``(n_cells,)`` or ``(n_cells, B)``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != params.n_cells:
        raise ShapeError(f"cell output has length {v.shape[0]}, model has {params.n_cells} cells")
    return softmax(params["U"] @ v)


def forward_sequence(params: LstmParams, residuals):
    """Run the cell from a zero state over ``residuals`` of shape ``(L, M[, B])``.

    Returns the list of per-channel caches with ``z`` and ``p`` filled in.
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    batch = residuals.shape[2] if residuals.ndim == 3 else None
    state = LstmState.zeros(params.n_cells, batch)
    caches = []
    for r_t in residuals:
        state, cache = forward_step(params, r_t, state)
        cache.z = params["U"] @ cache.v
        cache.p = softmax(cache.z)
        caches.append(cache)
    return caches


# -- serialisation ------------------------------------------------------------

def serialize(params: LstmParams) -> bytes:
    """Encode as ``LSTMCS01``: magic, 5 little-endian u32 header fields
    (M, N, n_cells, variant code, reserved 0), the flat parameter buffer as
    little-endian float64, then the CRC-32 of everything after the magic."""
    payload = _HEADER.pack(params.M, params.N, params.n_cells, _VARIANT_CODE[params.variant], 0)
    payload += params.flat.astype("<f8").tobytes()
    return MAGIC + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def deserialize(blob: bytes) -> LstmParams:
    if len(blob) < len(MAGIC):
        raise TruncatedStreamError(f"stream of {len(blob)} bytes is shorter than the magic")
    if blob[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    if len(blob) < len(MAGIC) + _HEADER.size + 4:
        raise TruncatedStreamError("stream ends inside the header")
    M, N, n_cells, code, _reserved = _HEADER.unpack_from(blob, len(MAGIC))
    variants = {v: k for k, v in _VARIANT_CODE.items()}
    if code not in variants or min(M, N, n_cells) == 0:
        raise BadMagicError(f"invalid header fields M={M} N={N} n_cells={n_cells} variant={code}")
    size = sum(int(np.prod(shape)) for _, shape in tensor_layout(M, N, n_cells))
    expected = len(MAGIC) + _HEADER.size + 8 * size + 4
    if len(blob) < expected:
        raise TruncatedStreamError(f"stream has {len(blob)} bytes, header implies {expected}")
    if len(blob) > expected:
        raise ModelFormatError(f"{len(blob) - expected} trailing bytes after the checksum")
    payload = blob[len(MAGIC):expected - 4]
    (crc,) = struct.unpack_from("<I", blob, expected - 4)
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CrcMismatchError("CRC-32 mismatch: model file is corrupted")
    flat = np.frombuffer(payload, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    return LstmParams(M, N, n_cells, variants[code], flat)


def save_model(params: LstmParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(params))


def load_model(path) -> LstmParams:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
