"""Dense kernels: products, least squares, softmax and gate nonlinearities.

Matrices are plain C-contiguous ``float64`` numpy arrays.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit

from ._validation import check_matrix, check_same_length, check_vector
from .exceptions import ShapeError, SingularSystemError

RANK_TOL = 1e-12


def matmul(A, B) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    A = check_matrix(A, "A", allow_empty=True)
    B = check_matrix(B, "B", allow_empty=True)
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"cannot multiply {A.shape[0]}x{A.shape[1]} by {B.shape[0]}x{B.shape[1]}")
    return np.ascontiguousarray(A @ B)


def least_squares_solve(Asub, y, check=True) -> np.ndarray:
    """Solve ``min ||y - Asub s||_2`` by Householder QR.

    Parameters
    ----------
    Asub : ndarray, shape (M, q)
        Full-column-rank system matrix, ``q <= M``.
    y : ndarray, shape (M,) or (M, L)
        Right-hand side(s).

    Raises
    ------
    SingularSystemError
        If a diagonal entry of R satisfies ``|R_kk| < 1e-12 * ||Asub||_F``;
        the offending column index is stored on the exception.
    """
    if check:
        Asub = check_matrix(Asub, "Asub", allow_empty=True)
        y = np.asarray(y, dtype=np.float64)
    M, q = Asub.shape
    if y.shape[0] != M:
        raise ShapeError(f"Asub is {M}x{q} but y has {y.shape[0]} rows")
    if q == 0:
        return np.zeros((0,) + y.shape[1:])
    if q > M:
        raise ShapeError(f"underdetermined system: {q} columns > {M} rows")
    Q, R = np.linalg.qr(Asub, mode="reduced")
    diag = np.abs(np.diag(R))
    scale = np.linalg.norm(Asub)
    bad = np.flatnonzero(diag < RANK_TOL * scale)
    if bad.size:
        col = int(bad[0])
        raise SingularSystemError(f"rank-deficient system at column {col}", column=col)
    return solve_triangular(R, Q.T @ y, lower=False, check_finite=False)


def softmax(z) -> np.ndarray:
    """Column-wise softmax after subtracting the maximum."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def hadamard(a, b):
    a = check_vector(a, "a") if np.ndim(a) == 1 else np.asarray(a, dtype=np.float64)
    b = check_vector(b, "b") if np.ndim(b) == 1 else np.asarray(b, dtype=np.float64)
    check_same_length(a, b, "hadamard operands")
    return a * b


def elementwise(kind: str, x, y=None):
    """Dispatch to ``sigmoid``, ``tanh`` or ``hadamard`` by name."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "hadamard":
        if y is None:
            raise ShapeError("hadamard needs two operands")
        return hadamard(x, y)
    raise ValueError(f"unknown elementwise kind {kind!r}")
