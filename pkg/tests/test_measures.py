import math

import numpy as np
import pytest

from pmuplace.errors import NotSymmetric
from pmuplace.measures import (
    MeasureKind,
    all_measures,
    condition_number,
    evaluate,
    log_det,
    min_eigenvalue,
    recip_condition,
    trace,
)


def test_log_det_identity():
    mv = log_det(np.eye(3))
    assert mv.value == pytest.approx(0.0, abs=1e-12)
    assert mv.raw_det == pytest.approx(1.0, abs=1e-12)
    assert not mv.singular


def test_log_det_diag():
    mv = log_det(np.diag([4.0, 1.0]))
    assert mv.value == pytest.approx(math.log(4.0), abs=1e-12)


def test_log_det_singular_sentinel():
    mv = log_det(np.diag([1.0, 0.0]))
    assert mv.singular
    assert mv.value == -math.inf
    assert mv.raw_det == 0.0


def test_trace_values():
    assert trace(np.eye(3)).value == pytest.approx(3.0, abs=1e-12)
    assert trace(np.diag([4.0, 1.0])).value == pytest.approx(5.0, abs=1e-12)
    # finite despite singularity: the stated weakness of the trace
    assert trace(np.diag([1.0, 0.0])).value == pytest.approx(1.0, abs=1e-12)


def test_trace_equals_eigenvalue_sum(rng):
    a = rng.standard_normal((5, 5))
    w = a @ a.T
    assert trace(w).value == pytest.approx(np.linalg.eigvalsh(w).sum(),
                                           abs=1e-10)


def test_min_eigenvalue_values():
    assert min_eigenvalue(np.eye(3)).value == pytest.approx(1.0, abs=1e-12)
    assert min_eigenvalue(np.diag([4.0, 1.0])).value == pytest.approx(1.0, abs=1e-12)
    assert min_eigenvalue(np.diag([1.0, 0.0])).value == pytest.approx(0.0, abs=1e-12)


def test_min_eigenvalue_clamps_tiny_negative():
    w = np.diag([1.0, -1e-12])
    assert min_eigenvalue(w).value == 0.0


def test_recip_condition_values():
    assert recip_condition(np.eye(3)).value == pytest.approx(1.0, abs=1e-12)
    assert recip_condition(np.diag([4.0, 1.0])).value == pytest.approx(0.25, abs=1e-12)
    assert recip_condition(np.diag([1.0, 0.0])).value == 0.0
    assert recip_condition(np.zeros((2, 2))).value == 0.0


def test_evaluate_dispatch():
    w = np.diag([4.0, 1.0])
    assert evaluate(MeasureKind.LOG_DET, w).value == log_det(w).value
    assert evaluate(MeasureKind.TRACE, w).value == trace(w).value
    assert evaluate(MeasureKind.MIN_EIG, w).value == min_eigenvalue(w).value
    assert evaluate(MeasureKind.NEG_COND, w).value == recip_condition(w).value


def test_not_symmetric_rejected():
    w = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(NotSymmetric):
        log_det(w)


def test_scale_covariance(rng):
    a = rng.standard_normal((4, 4))
    w = a @ a.T
    alpha = 3.7
    n = 4
    assert log_det(alpha * w).value == pytest.approx(
        log_det(w).value + n * math.log(alpha), abs=1e-10)
    assert trace(alpha * w).value == pytest.approx(
        alpha * trace(w).value, abs=1e-10)
    assert min_eigenvalue(alpha * w).value == pytest.approx(
        alpha * min_eigenvalue(w).value, abs=1e-10)
    assert recip_condition(alpha * w).value == pytest.approx(
        recip_condition(w).value, abs=1e-10)


def test_argmax_equivalence_with_neg_kappa(rng):
    # over random PSD batches, argmax of the reciprocal condition number
    # matches argmax of -kappa computed directly
    for _ in range(20):
        mats = []
        for _ in range(6):
            a = rng.standard_normal((4, 4))
            mats.append(a @ a.T)
        by_recip = max(range(6), key=lambda i: recip_condition(mats[i]).value)
        by_neg_kappa = max(range(6),
                           key=lambda i: -np.linalg.cond(mats[i], 2))
        assert by_recip == by_neg_kappa


def test_all_measures_finite_or_sentinel(rng):
    a = rng.standard_normal((5, 3))
    w = a @ a.T  # rank 3 of 5: singular PSD
    for kind, mv in all_measures(w).items():
        if kind is MeasureKind.LOG_DET:
            assert mv.singular and mv.value == -math.inf
        else:
            assert math.isfinite(mv.value)


def test_condition_number_sentinel():
    assert condition_number(np.diag([1.0, 0.0])) == math.inf
    assert condition_number(np.diag([4.0, 1.0])) == pytest.approx(4.0)
