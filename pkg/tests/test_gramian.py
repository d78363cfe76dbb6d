"""Gramian tests: exactness on the bundled linear system, additivity of the
per-generator decomposition, PSD structure, and scheme validation."""

import json

import numpy as np
import pytest
import scipy.linalg

from pmuplace.errors import (
    LengthMismatch,
    SchemeDimensionMismatch,
    SimulationDiverged,
)
from pmuplace.gramian import (
    Gramian,
    PerturbationScheme,
    assemble_gramian,
    bundled_linear_system,
    empirical_gramian,
    gramian_from_outputs,
    per_generator_gramians,
    save_gramian_csv,
)
from pmuplace.model import PlacementMask


def analytic_discrete_gramian(a, c, t_f, dt):
    """Closed-form discrete-sum observability gramian via fresh matrix
    exponentials: sum_k (C e^{A t_k})^T (C e^{A t_k}) dt."""
    steps = int(round(t_f / dt))
    w = np.zeros((a.shape[0], a.shape[0]))
    for k in range(steps + 1):
        ck = c @ scipy.linalg.expm(a * (k * dt))
        w += ck.T @ ck * dt
    return w


def test_linear_system_matches_analytic_gramian():
    lin = bundled_linear_system()
    scheme = PerturbationScheme.default(2, magnitude=1e-3, t_f=5.0, dt=1 / 60)
    w_emp = lin.empirical_gramian(scheme)
    w_true = analytic_discrete_gramian(lin.a, lin.c, 5.0, 1 / 60)
    rel = np.max(np.abs(w_emp - w_true)) / np.max(np.abs(w_true))
    assert rel <= 1e-6


def test_linear_system_magnitude_independent():
    # first-order exactness: different c agree closely on a linear system
    lin = bundled_linear_system()
    w1 = lin.empirical_gramian(
        PerturbationScheme.default(2, magnitude=1e-3))
    w2 = lin.empirical_gramian(
        PerturbationScheme.default(2, magnitude=1e-2))
    rel = np.max(np.abs(w1 - w2)) / np.max(np.abs(w1))
    assert rel <= 1e-4


def test_identity_scheme_perturbs_each_coordinate():
    # with r=1 and T=I the i-th run must start at exactly x0 + c e_i
    seen = []

    def run_outputs(batch):
        seen.append(batch.copy())
        return np.zeros((batch.shape[0], 3, 1))

    scheme = PerturbationScheme.default(4, magnitude=1e-3, t_f=2 / 60)
    x0 = np.arange(4.0)
    gramian_from_outputs(run_outputs, x0, scheme)
    perturbed = seen[1]
    np.testing.assert_array_equal(perturbed, x0 + 1e-3 * np.eye(4))


def test_empty_placement_zero_matrix(demo2, demo2_eq, demo2_scheme):
    x0, u0 = demo2_eq
    w = empirical_gramian(demo2, PlacementMask.empty(2), demo2_scheme, x0, u0)
    assert np.all(w.matrix == 0.0)


def test_full_gramian_symmetric_psd(demo2, demo2_eq, demo2_scheme):
    x0, u0 = demo2_eq
    w = empirical_gramian(demo2, PlacementMask.full(2), demo2_scheme, x0, u0)
    assert w.matrix.shape == (6, 6)  # one fourth-order + one classical
    assert w.is_psd()


def test_per_generator_parts_are_psd(demo2_parts):
    assert len(demo2_parts) == 2
    for part in demo2_parts:
        assert part.matrix.shape == (6, 6)
        eig = part.eigenvalues()
        assert eig[0] >= -1e-10 * max(1.0, eig[-1])


def test_parts_sum_to_full(demo2, demo2_eq, demo2_scheme, demo2_parts):
    x0, u0 = demo2_eq
    w_full = empirical_gramian(demo2, PlacementMask.full(2), demo2_scheme,
                               x0, u0)
    w_sum = demo2_parts[0].matrix + demo2_parts[1].matrix
    rel = np.max(np.abs(w_full.matrix - w_sum)) / np.max(np.abs(w_full.matrix))
    assert rel <= 1e-10


def test_single_part_equals_direct(demo2, demo2_eq, demo2_scheme, demo2_parts):
    x0, u0 = demo2_eq
    direct = empirical_gramian(demo2, PlacementMask.from_indices(2, [0]),
                               demo2_scheme, x0, u0)
    scale = np.max(np.abs(direct.matrix))
    assert np.max(np.abs(direct.matrix - demo2_parts[0].matrix)) <= 1e-12 * scale


def test_additivity_random_placements(demo10, demo10_eq, demo10_scheme,
                                      demo10_parts, rng):
    x0, u0 = demo10_eq
    for _ in range(5):
        k = int(rng.integers(1, 10))
        idx = sorted(rng.choice(10, size=k, replace=False).tolist())
        mask = PlacementMask.from_indices(10, idx)
        direct = empirical_gramian(demo10, mask, demo10_scheme, x0, u0)
        assembled = assemble_gramian(mask, demo10_parts)
        scale = np.max(np.abs(direct.matrix))
        assert np.max(np.abs(direct.matrix - assembled.matrix)) <= 1e-10 * scale


def test_assemble_zero_and_full(demo10_parts):
    z0 = assemble_gramian(PlacementMask.empty(10), demo10_parts)
    assert np.all(z0.matrix == 0.0)
    full = assemble_gramian(PlacementMask.full(10), demo10_parts)
    manual = sum(p.matrix for p in demo10_parts)
    np.testing.assert_allclose(full.matrix, manual, rtol=1e-12)


def test_assemble_length_mismatch(demo10_parts):
    with pytest.raises(LengthMismatch):
        assemble_gramian(PlacementMask.empty(9), demo10_parts)


def test_loewner_monotonicity(demo10_parts, rng):
    # adding a PMU never decreases any sorted eigenvalue
    for _ in range(20):
        k = int(rng.integers(1, 9))
        idx = sorted(rng.choice(10, size=k, replace=False).tolist())
        candidates = [i for i in range(10) if i not in idx]
        add = int(rng.choice(candidates))
        w_small = assemble_gramian(
            PlacementMask.from_indices(10, idx), demo10_parts)
        w_big = assemble_gramian(
            PlacementMask.from_indices(10, idx + [add]), demo10_parts)
        eig_small = w_small.eigenvalues()
        eig_big = w_big.eigenvalues()
        assert np.all(eig_big >= eig_small - 1e-10 * max(1.0, eig_small[-1]))


def test_scheme_rejects_bad_direction():
    with pytest.raises(SchemeDimensionMismatch):
        PerturbationScheme(directions=(np.ones((3, 3)),), magnitudes=(1e-3,))


def test_scheme_rejects_bad_magnitude():
    with pytest.raises(SchemeDimensionMismatch):
        PerturbationScheme(directions=(np.eye(3),), magnitudes=(0.0,))


def test_scheme_dimension_mismatch(demo2, demo2_eq):
    x0, u0 = demo2_eq
    scheme = PerturbationScheme.default(5)  # demo2 has n = 6
    with pytest.raises(SchemeDimensionMismatch):
        empirical_gramian(demo2, PlacementMask.full(2), scheme, x0, u0)


def test_random_directions_are_orthogonal():
    scheme = PerturbationScheme.with_random_directions(6, 3, seed=1)
    assert len(scheme.directions) == 3
    for t_mat in scheme.directions:
        assert np.max(np.abs(t_mat.T @ t_mat - np.eye(6))) <= 1e-10


def test_multi_direction_scheme_agrees_with_default(demo2, demo2_eq):
    # the gramian estimate is direction-set independent to first order
    x0, u0 = demo2_eq
    w1 = empirical_gramian(demo2, PlacementMask.full(2),
                           PerturbationScheme.default(6), x0, u0)
    scheme_r2 = PerturbationScheme.with_random_directions(6, 2, seed=3)
    w2 = empirical_gramian(demo2, PlacementMask.full(2), scheme_r2, x0, u0)
    rel = np.max(np.abs(w1.matrix - w2.matrix)) / np.max(np.abs(w1.matrix))
    assert rel <= 1e-3


def test_diverged_perturbation_identified(demo2, demo2_eq):
    x0, u0 = demo2_eq
    scheme = PerturbationScheme(directions=(np.eye(6),), magnitudes=(1e6,),
                                t_f=5.0, dt=1 / 60)
    with pytest.raises(SimulationDiverged) as exc_info:
        empirical_gramian(demo2, PlacementMask.full(2), scheme, x0, u0)
    exc = exc_info.value
    assert exc.state_index is not None
    assert exc.step is not None


def test_gramian_constructor_rejects_asymmetric():
    with pytest.raises(LengthMismatch):
        Gramian(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_csv_export_round_trip(tmp_path, demo2, demo2_eq, demo2_scheme,
                               demo2_parts):
    path = tmp_path / "w.csv"
    save_gramian_csv(path, demo2_parts[0], scheme=demo2_scheme, case=demo2)
    loaded = np.loadtxt(path, delimiter=",")
    np.testing.assert_allclose(loaded, demo2_parts[0].matrix, rtol=1e-15)
    with open(path.with_suffix(".csv.meta.json")) as fh:
        meta = json.load(fh)
    assert meta["scheme"]["scheme_id"] == demo2_scheme.scheme_id
    assert meta["placement"] == [1, 0]
    assert isinstance(meta["case_hash"], str) and meta["case_hash"]
