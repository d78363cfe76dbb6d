"""Scalar observability measures of a gramian.

Four measures, all oriented so that larger means more observable: the
log-determinant and trace summarize overall observability, the smallest
eigenvalue the worst direction, and the reciprocal condition number the
numerical conditioning (a monotone transform of the negated condition
number, so argmax over placements is unchanged).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import NotSymmetric

LAMBDA_FLOOR_REL = 1e-14


class MeasureKind(enum.Enum):
    LOG_DET = "logdet"
    TRACE = "trace"
    MIN_EIG = "mineig"
    NEG_COND = "negcond"


@dataclass(frozen=True)
class MeasureValue:
    """One measure evaluation; ``singular`` flags a -inf log-determinant."""

    kind: MeasureKind
    value: float
    singular: bool = False
    raw_det: float | None = None


def _as_matrix(w, check_symmetry: bool = True) -> np.ndarray:
    mat = w.matrix if hasattr(w, "matrix") else np.asarray(w, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {mat.shape}")
    if check_symmetry:
        scale = max(1.0, float(np.max(np.abs(mat))) if mat.size else 0.0)
        if float(np.max(np.abs(mat - mat.T))) > 1e-10 * scale:
            raise NotSymmetric("matrix is not symmetric within 1e-10")
    return 0.5 * (mat + mat.T)


def _eigenvalues(w) -> np.ndarray:
    return np.linalg.eigvalsh(_as_matrix(w))


def log_det(w) -> MeasureValue:
    """Sum of log eigenvalues; singular sentinel below a relative floor.

    The raw determinant exp(logdet) is attached for threshold checks but may
    underflow to 0; the log value is authoritative.
    """
    eig = _eigenvalues(w)
    floor = LAMBDA_FLOOR_REL * max(1.0, float(eig[-1]))
    if eig[0] <= floor:
        return MeasureValue(MeasureKind.LOG_DET, -math.inf,
                            singular=True, raw_det=0.0)
    value = float(np.sum(np.log(eig)))
    with np.errstate(over="ignore"):
        raw = float(np.exp(value))
    return MeasureValue(MeasureKind.LOG_DET, value, raw_det=raw)


def trace(w) -> MeasureValue:
    """Diagonal sum; finite even for singular matrices (no decomposition)."""
    mat = w.matrix if hasattr(w, "matrix") else np.asarray(w, dtype=float)
    return MeasureValue(MeasureKind.TRACE, float(np.trace(mat)))


def min_eigenvalue(w) -> MeasureValue:
    """Smallest eigenvalue, clamped to 0 when within -1e-10 of zero."""
    eig = _eigenvalues(w)
    smallest = float(eig[0])
    if -1e-10 * max(1.0, float(eig[-1])) <= smallest < 0.0:
        smallest = 0.0
    return MeasureValue(MeasureKind.MIN_EIG, smallest)


def recip_condition(w) -> MeasureValue:
    """Reciprocal spectral condition number sigma_min/sigma_max in [0, 1]."""
    eig = np.clip(_eigenvalues(w), 0.0, None)
    largest = float(eig[-1])
    smallest = float(eig[0])
    if largest <= 0.0 or smallest <= LAMBDA_FLOOR_REL * max(1.0, largest):
        return MeasureValue(MeasureKind.NEG_COND, 0.0, singular=True)
    return MeasureValue(MeasureKind.NEG_COND, smallest / largest)


_DISPATCH = {
    MeasureKind.LOG_DET: log_det,
    MeasureKind.TRACE: trace,
    MeasureKind.MIN_EIG: min_eigenvalue,
    MeasureKind.NEG_COND: recip_condition,
}


def evaluate(kind: MeasureKind, w) -> MeasureValue:
    return _DISPATCH[kind](w)


def all_measures(w) -> dict[MeasureKind, MeasureValue]:
    """Evaluate the four measures from one eigendecomposition-equivalent pass."""
    return {kind: fn(w) for kind, fn in _DISPATCH.items()}


def condition_number(w) -> float:
    """Spectral condition number; inf when the matrix is singular."""
    recip = recip_condition(w).value
    return math.inf if recip == 0.0 else 1.0 / recip
