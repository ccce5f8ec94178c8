"""File formats: IDX (read), binary PGM (read/write), CSV rows and config files."""
from __future__ import annotations

import csv
import os
import re
import struct
from dataclasses import dataclass, fields

import numpy as np

from .exceptions import (ConfigurationError, IdxMagicError, IdxRankError, IdxTruncatedError,
                         IdxTypeError, PgmFormatError, PgmMaxvalError)

# -- IDX ----------------------------------------------------------------------

IDX_UBYTE = 0x08


def read_idx(path, scale: bool = True) -> np.ndarray:
    """Parse a big-endian IDX file of unsigned bytes.

    Header: two zero bytes, the element type (only ``0x08`` is accepted), the
    rank, then one big-endian u32 per dimension. With ``scale`` the bytes are
    mapped to ``[0, 1]`` by dividing by 255; otherwise the raw ``uint8`` array
    is returned (label files).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise IdxTruncatedError(f"{path}: {len(blob)} bytes is shorter than the IDX magic")
    if blob[0] != 0 or blob[1] != 0:
        raise IdxMagicError(f"{path}: IDX magic must start with two zero bytes, got {blob[:2].hex()}")
    if blob[2] != IDX_UBYTE:
        raise IdxTypeError(f"{path}: element type 0x{blob[2]:02x} is not unsigned byte (0x08)")
    rank = blob[3]
    if not 1 <= rank <= 4:
        raise IdxRankError(f"{path}: rank {rank} outside 1..4")
    head = 4 + 4 * rank
    if len(blob) < head:
        raise IdxTruncatedError(f"{path}: file ends inside the dimension list")
    dims = struct.unpack(f">{rank}I", blob[4:head])
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) - head < count:
        raise IdxTruncatedError(f"{path}: dimensions {dims} need {count} bytes, found {len(blob) - head}")
    if len(blob) - head > count:
        raise IdxTruncatedError(f"{path}: {len(blob) - head - count} bytes beyond the declared dimensions {dims}")
    data = np.frombuffer(blob, dtype=np.uint8, count=count, offset=head).reshape(dims)
    return data / 255.0 if scale else data.copy()


def ingest_idx(path) -> np.ndarray:
    return read_idx(path, scale=True)


# -- PGM ----------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pgm_header(blob, path):
    pos, tokens = 0, []
    while len(tokens) < 4:
        m = _TOKEN.match(blob, pos)
        if m is None:
            raise PgmFormatError(f"{path}: incomplete PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise PgmFormatError(f"{path}: header must end with one whitespace byte")
    return tokens, pos + 1


def read_pgm_raw(path):
    """Return ``(pixels uint8 [rows, cols], maxval)`` of a binary P5 file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P5":
        raise PgmFormatError(f"{path}: not a binary PGM (magic {blob[:2]!r}, expected b'P5')")
    tokens, start = _pgm_header(blob, path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PgmFormatError(f"{path}: non-numeric header field in {tokens[1:]!r}") from None
    if width <= 0 or height <= 0:
        raise PgmFormatError(f"{path}: bad size {width}x{height}")
    if not 0 < maxval <= 255:
        raise PgmMaxvalError(f"{path}: maxval {maxval} outside 1..255")
    payload = blob[start:]
    if len(payload) != width * height:
        raise PgmFormatError(f"{path}: expected {width * height} pixel bytes, found {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
    if pixels.max(initial=0) > maxval:
        raise PgmFormatError(f"{path}: pixel value above maxval {maxval}")
    return pixels, maxval


def ingest_pgm(path) -> np.ndarray:
    """Grayscale image in ``[0, 1]`` (pixel / maxval)."""
    pixels, maxval = read_pgm_raw(path)
    return pixels / float(maxval)


def quantize(image, maxval: int = 255) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return np.clip(np.rint(image * maxval), 0, maxval).astype(np.uint8)


def emit_pgm(image, path, maxval: int = 255) -> None:
    """Write ``image`` (values in ``[0, 1]``) as P5, rounding to the nearest level."""
    if not 0 < maxval <= 255:
        raise PgmMaxvalError(f"maxval {maxval} outside 1..255")
    pixels = quantize(image, maxval)
    if pixels.ndim != 2:
        raise PgmFormatError(f"PGM images are 2-D, got shape {pixels.shape}")
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        fh.write(pixels.tobytes())


# -- CSV ----------------------------------------------------------------------

def _cell(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    """Comma-separated, one header row, ``repr`` floats (locale independent)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


# -- configuration ------------------------------------------------------------

EXPERIMENTS = ("synthetic", "mnist", "image")
SWEEP_AXES = ("k", "sigma", "m_over_n")

# default sweep grids
SIGMA_GRID = (0.5, 0.2, 0.1, 0.05, 0.01, 0.005)
M_OVER_N_GRID = (0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50)


def _str_list(value):
    return tuple(v.strip() for v in value.split(",") if v.strip())


def _int_list(value):
    return tuple(int(v) for v in _str_list(value))


def _float_list(value):
    return tuple(float(v) for v in _str_list(value))


def _bool(value):
    low = value.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _opt_float(value):
    return None if value.strip().lower() in ("", "none") else float(value)


@dataclass
class ExperimentConfig:
    """Every canonical configuration key with its default.

    List-valued keys are comma separated in files and on the command line.
    """

    experiment: str = "synthetic"
    seed: int = 0
    N: int = 64
    M: int = 32
    L: int = 4
    block: int = 8
    transform: str = "dct"
    pattern: str = "independent"
    amplitude_law: str = "uniform"
    k: int = 4
    k_grid: tuple = (4, 6, 8, 10, 12, 14, 16)
    k_max: int = 16
    sigma: float = 0.0
    sigma_grid: tuple = SIGMA_GRID
    m_over_n_grid: tuple = M_OVER_N_GRID
    axis: str = "k"
    trials: int = 16
    n_train: int = 200
    n_validation: int = 16
    n_test: int = 16
    solvers: tuple = ("lstm-cs", "omp", "somp")
    support_mode: str = "per-channel"
    res_min: float = 1e-6
    recovery_threshold: float = 0.6
    recovery_fraction: float = 0.9
    n_cells: int = 128
    variant: str = "reduced"
    epochs: int = 25
    batch_size: int = 20
    step_size: float = 0.05
    clip: float = 1.0
    momentum: float | None = None
    init_scale: float = 0.05
    include_initial_pair: bool = True
    residual_mode: str = "true"
    early_stopping: bool = True
    patience: int = 0
    model_path: str = "model.lstmcs"
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    image_paths: tuple = ()
    test_image_paths: tuple = ()
    output_dir: str = "out"
    workers: int = 1
    timing_repeats: int = 3

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigurationError(msg)

        need(self.experiment in EXPERIMENTS, f"experiment: must be one of {EXPERIMENTS}, got {self.experiment!r}")
        need(self.axis in SWEEP_AXES, f"axis: must be one of {SWEEP_AXES}, got {self.axis!r}")
        need(0 < self.M <= self.N, f"M, N: need 0 < M <= N, got M={self.M}, N={self.N}")
        need(self.L > 0, f"L: must be positive, got {self.L}")
        need(self.k_grid, "k_grid: grid is empty")
        need(self.sigma_grid, "sigma_grid: grid is empty")
        need(self.m_over_n_grid, "m_over_n_grid: grid is empty")
        need(all(0 < v <= 1 for v in self.m_over_n_grid), "m_over_n_grid: values must lie in (0, 1]")
        need(all(v >= 0 for v in self.sigma_grid) and self.sigma >= 0, "sigma: noise levels must be >= 0")
        need(all(v >= 0 for v in self.k_grid) and self.k >= 0, "k: sparsity levels must be >= 0")
        need(self.solvers, "solvers: solver list is empty")
        from .solvers import SOLVER_KINDS
        for s in self.solvers:
            need(s in SOLVER_KINDS, f"solvers: unknown solver {s!r}")
        need(self.transform in ("dct", "haar3", "none"), f"transform: unknown transform {self.transform!r}")
        need(self.pattern in ("joint", "independent"), f"pattern: must be joint or independent, got {self.pattern!r}")
        need(self.residual_mode in ("true", "projected"), f"residual_mode: must be true or projected, got {self.residual_mode!r}")
        need(self.trials > 0 and self.n_test > 0, "trials, n_test: must be positive")
        need(self.n_train >= 0 and self.n_validation >= 0, "n_train, n_validation: must be >= 0")
        need(self.epochs >= 0 and self.batch_size > 0, "epochs, batch_size: epochs >= 0 and batch_size > 0")
        need(self.step_size >= 0 and self.clip > 0, "step_size, clip: step_size >= 0 and clip > 0")
        need(self.workers > 0 and self.timing_repeats > 0, "workers, timing_repeats: must be positive")
        return self


_PARSERS = {int: int, float: float, str: str, bool: _bool}
_LIST_PARSERS = {"k_grid": _int_list, "sigma_grid": _float_list, "m_over_n_grid": _float_list,
                 "solvers": _str_list, "image_paths": _str_list, "test_image_paths": _str_list}
CANONICAL_KEYS = tuple(f.name for f in fields(ExperimentConfig))


def _field_types():
    defaults = ExperimentConfig()
    types = {}
    for f in fields(ExperimentConfig):
        if f.name in _LIST_PARSERS:
            types[f.name] = _LIST_PARSERS[f.name]
        elif f.name == "momentum":
            types[f.name] = _opt_float
        else:
            types[f.name] = _PARSERS[type(getattr(defaults, f.name))]
    return types


_FIELD_TYPES = _field_types()


def parse_value(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigurationError(f"unknown configuration key {key!r}")
    try:
        return _FIELD_TYPES[key](raw.strip())
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {raw.strip()!r} ({exc})") from None


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into ``{key: typed value}``.

    ``#`` starts a comment; blank lines are ignored; unknown and repeated keys
    are errors.
    """
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigurationError(f"{source}:{lineno}: unknown configuration key {key!r}")
        if key in values:
            raise ConfigurationError(f"{source}:{lineno}: key {key!r} given twice")
        try:
            values[key] = parse_value(key, raw)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path=None, overrides=None) -> ExperimentConfig:
    values = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigurationError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            values = parse_config_text(fh.read(), str(path))
    for key, value in (overrides or {}).items():
        values[key] = parse_value(key, value) if isinstance(value, str) else value
    unknown = set(values) - set(CANONICAL_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown configuration keys {sorted(unknown)}")
    return ExperimentConfig(**values).validate()


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def emit_config(config: ExperimentConfig) -> str:
    """All canonical keys in declaration order, one ``key = value`` per line."""
    return "".join(f"{key} = {format_value(getattr(config, key))}\n" for key in CANONICAL_KEYS)
