import struct
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lstmcs.exceptions import (ConfigurationError, IdxMagicError, IdxRankError, IdxTruncatedError,
                               IdxTypeError, PgmFormatError, PgmMaxvalError)
from lstmcs.io import (CANONICAL_KEYS, M_OVER_N_GRID, SIGMA_GRID, ExperimentConfig, emit_config,
                       emit_pgm, ingest_idx, ingest_pgm, load_config, parse_config_text,
                       quantize, read_csv, read_idx, read_pgm_raw, write_csv)


def idx_bytes(array, type_code=0x08):
    array = np.asarray(array, dtype=np.uint8)
    head = bytes([0, 0, type_code, array.ndim]) + b"".join(struct.pack(">I", d) for d in array.shape)
    return head + array.tobytes()


def write(tmp_path, name, blob):
    path = tmp_path / name
    path.write_bytes(blob)
    return path


# -- IDX --------------------------------------------------------------------------

def test_idx_header_layout():
    blob = idx_bytes(np.zeros((2, 3, 4)))
    assert blob[:4] == bytes([0x00, 0x00, 0x08, 0x03])
    assert blob[4:16] == bytes([0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 4])


def test_idx_round_trip(tmp_path):
    data = np.arange(24, dtype=np.uint8).reshape(2, 3, 4) * 10
    path = write(tmp_path, "x.idx", idx_bytes(data))
    assert np.array_equal(read_idx(path, scale=False), data)
    assert np.allclose(ingest_idx(path), data / 255.0)
    labels = write(tmp_path, "y.idx", idx_bytes(np.array([3, 1, 4])))
    assert read_idx(labels, scale=False).tolist() == [3, 1, 4]


@pytest.mark.parametrize("mutate,error", [
    (lambda b: b"\x01" + b[1:], IdxMagicError),
    (lambda b: b[:2] + b"\x0d" + b[3:], IdxTypeError),
    (lambda b: b[:3] + b"\x05" + b[4:], IdxRankError),
    (lambda b: b[:3] + b"\x00" + b[4:], IdxRankError),
    (lambda b: b[:-1], IdxTruncatedError),
    (lambda b: b + b"\x00", IdxTruncatedError),
    (lambda b: b[:6], IdxTruncatedError),
    (lambda b: b[:2], IdxTruncatedError),
])
def test_idx_errors(tmp_path, mutate, error):
    path = write(tmp_path, "bad.idx", mutate(idx_bytes(np.ones((2, 2)))))
    with pytest.raises(error):
        read_idx(path)


# -- PGM --------------------------------------------------------------------------

def test_pgm_reference_bytes(tmp_path):
    path = tmp_path / "a.pgm"
    emit_pgm(np.array([[0, 255], [128, 64]]) / 255.0, path)
    assert path.read_bytes() == b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64])
    pixels, maxval = read_pgm_raw(path)
    assert maxval == 255 and pixels.tolist() == [[0, 255], [128, 64]]


def test_pgm_header_comments_and_low_maxval(tmp_path):
    path = write(tmp_path, "c.pgm", b"P5 # made by hand\n3 # width\n1\n15\n" + bytes([0, 15, 5]))
    assert np.allclose(ingest_pgm(path), [[0.0, 1.0, 1 / 3]])


@given(st.lists(st.integers(0, 255), min_size=6, max_size=6))
def test_pgm_round_trip_is_bit_exact(tmp_path_factory, values):
    img = np.array(values, dtype=float).reshape(2, 3) / 255.0
    path = tmp_path_factory.mktemp("pgm") / "r.pgm"
    emit_pgm(img, path)
    first = path.read_bytes()
    emit_pgm(ingest_pgm(path), path)
    assert path.read_bytes() == first


def test_quantize_rounds_and_clips():
    assert quantize([[-0.2, 0.5 / 255, 1.7 / 255, 2.0]]).tolist() == [[0, 0, 2, 255]]


@pytest.mark.parametrize("blob,error", [
    (b"P2\n1 1\n255\n0", PgmFormatError),
    (b"P5\n1 1\n0\n\x00", PgmMaxvalError),
    (b"P5\n1 1\n65535\n\x00\x00", PgmMaxvalError),
    (b"P5\n2 2\n255\n\x00", PgmFormatError),
    (b"P5\n1 1\n", PgmFormatError),
    (b"P5\nx 1\n255\n\x00", PgmFormatError),
    (b"P5\n1 1\n10\n\x20", PgmFormatError),
])
def test_pgm_errors(tmp_path, blob, error):
    path = write(tmp_path, "bad.pgm", blob)
    with pytest.raises(error):
        read_pgm_raw(path)


def test_emit_pgm_rejects_bad_maxval(tmp_path):
    with pytest.raises(PgmMaxvalError):
        emit_pgm(np.zeros((2, 2)), tmp_path / "x.pgm", maxval=300)


# -- CSV --------------------------------------------------------------------------

def test_csv_format(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["a", "b", "c"], [[1, 0.1, True], ["x", np.float64(2.5e-7), False]])
    assert path.read_text() == "a,b,c\n1,0.1,1\nx,2.5e-07,0\n"
    header, rows = read_csv(path)
    assert header == ["a", "b", "c"] and float(rows[1][1]) == 2.5e-7


# -- configuration ----------------------------------------------------------------

def test_grids():
    assert SIGMA_GRID == (0.5, 0.2, 0.1, 0.05, 0.01, 0.005)
    assert M_OVER_N_GRID == pytest.approx([0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50])


def test_parse_config_text():
    text = """
    # comment line
    experiment = image   # trailing comment
    k_grid = 2, 4,6
    momentum = none
    early_stopping = false
    solvers = omp,somp
    """
    values = parse_config_text(text)
    assert values == {"experiment": "image", "k_grid": (2, 4, 6), "momentum": None,
                      "early_stopping": False, "solvers": ("omp", "somp")}


@pytest.mark.parametrize("text,match", [
    ("colour = red", r"cfg:1: unknown configuration key 'colour'"),
    ("seed = 1\nseed = 2", r"cfg:2: key 'seed' given twice"),
    ("N = many", r"cfg:1: N: cannot parse"),
    ("just words", r"cfg:1: expected 'key = value'"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigurationError, match=match):
        parse_config_text(text, "cfg")


def test_validation_names_the_field(tmp_path):
    with pytest.raises(ConfigurationError, match="^M, N"):
        load_config(overrides={"M": 80, "N": 64})
    with pytest.raises(ConfigurationError, match="^solvers"):
        load_config(overrides={"solvers": ""})
    with pytest.raises(ConfigurationError, match="not found"):
        load_config(tmp_path / "missing.cfg")


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("seed = 3\nN = 32\nM = 16\n")
    cfg = load_config(path, {"seed": "9"})
    assert (cfg.seed, cfg.N, cfg.M) == (9, 32, 16)


configs = st.builds(
    lambda seed, n, ks, sig, mom, flag, solvers: replace(
        ExperimentConfig(), seed=seed, N=n, M=max(1, n // 2), k_grid=tuple(ks), sigma=sig,
        momentum=mom, early_stopping=flag, solvers=tuple(solvers)),
    st.integers(0, 2**63), st.integers(2, 512), st.lists(st.integers(0, 64), min_size=1, max_size=5),
    st.floats(0, 10, allow_nan=False), st.one_of(st.none(), st.floats(0, 0.999)), st.booleans(),
    st.lists(st.sampled_from(["lstm-cs", "omp", "somp", "oracle"]), min_size=1, max_size=4))


@given(configs)
def test_config_round_trip(cfg):
    text = emit_config(cfg)
    assert [line.split(" = ")[0] for line in text.splitlines()] == list(CANONICAL_KEYS)
    assert ExperimentConfig(**parse_config_text(text)) == cfg
