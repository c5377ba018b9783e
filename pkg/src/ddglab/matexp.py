"""Dense matrix exponentials and the closed forms for structured generators.

``matrix_exp`` is the general oracle (scaling-and-squaring with a Pade
core, via scipy).  The structured variants are independent closed forms:
``matrix_exp_single_column`` for a matrix whose only nonzero column is a
generator column, and ``matrix_exp_block4`` for the 4x4 block that governs
a pair of tokens of which one or two are masked.
"""

import math

import numpy as np
import scipy.linalg

from .errors import DegenerateInputError

MAX_DENSE_SIDE = 10**4
_PIVOT_TOL = 1e-14


def matrix_exp(a: np.ndarray) -> np.ndarray:
    """e^A for a dense square matrix."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if a.shape[0] > MAX_DENSE_SIDE:
        raise ValueError(f"side {a.shape[0]} exceeds dense cap {MAX_DENSE_SIDE}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return scipy.linalg.expm(a)


def matrix_exp_single_column(v: np.ndarray, col: int = -1) -> np.ndarray:
    """e^A for A whose only nonzero column is ``col``, equal to ``v``.

    Since A^k = v[col]^(k-1) A for k >= 1, the series collapses to
    e^A = I + A * (e^(v[col]) - 1) / v[col].  Requires |v[col]| > 1e-14;
    use matrix_exp for the degenerate pivot.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError("v must be a vector")
    n = v.shape[0]
    col = col % n
    pivot = v[col]
    if abs(pivot) <= _PIVOT_TOL:
        raise DegenerateInputError(
            f"pivot v[{col}]={pivot} too close to zero for the closed form"
        )
    out = np.eye(n)
    out[:, col] += v * (math.expm1(pivot) / pivot)
    return out


def matrix_exp_rank_one(v: np.ndarray) -> np.ndarray:
    """Closed form for the last-column case; see matrix_exp_single_column."""
    return matrix_exp_single_column(v, col=-1)


def matrix_exp_block4(a: float, b: float, c: float, d: float, alpha: float) -> np.ndarray:
    """exp(alpha * A) for A = [[0,a,b,0],[0,-1,0,c],[0,0,-1,d],[0,0,0,-2]].

    A diagonalizes with eigenvalues (0, -1, -1, -2), giving the closed form
    below; the (0,3) entry carries the two-jump coupling (a*c + b*d).
    """
    ea = math.exp(-alpha)
    e2a = ea * ea
    ramp = -math.expm1(-alpha)  # 1 - e^{-alpha}
    two_jump = math.expm1(alpha) ** 2 * e2a / 2.0  # (e^alpha - 1)^2 e^{-2 alpha} / 2
    one_jump = math.expm1(alpha) * e2a  # (e^alpha - 1) e^{-2 alpha}
    return np.array(
        [
            [1.0, a * ramp, b * ramp, (a * c + b * d) * two_jump],
            [0.0, ea, 0.0, c * one_jump],
            [0.0, 0.0, ea, d * one_jump],
            [0.0, 0.0, 0.0, e2a],
        ]
    )
