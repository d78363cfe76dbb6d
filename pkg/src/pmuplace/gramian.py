"""Empirical observability gramians from perturbed-trajectory simulation.

The discrete gramian is a weighted sum over perturbation directions l,
magnitudes m and time steps k of the outer products of output deviations:
each dynamic coordinate is perturbed at t = 0, the output response is
simulated over a horizon, and deviations from the unperturbed run are
accumulated.  Because the output blocks of different machines occupy
disjoint coordinates, the gramian of any PMU set is the sum of the
per-machine gramians, which is what makes placement search cheap.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import (
    LengthMismatch,
    SchemeDimensionMismatch,
    SimulationDiverged,
)
from .model import (
    InputVector,
    PlacementMask,
    SystemCase,
    case_hash,
    dynamics_rhs,
    full_outputs,
    output_columns,
)

DEFAULT_MAGNITUDE = 1e-3
DEFAULT_T_F = 5.0
DEFAULT_DT = 1.0 / 60.0


@dataclass(frozen=True)
class PerturbationScheme:
    """Perturbation directions, magnitudes and horizon for one gramian.

    ``directions`` holds r orthogonal n-by-n matrices whose columns define
    the perturbation directions; ``magnitudes`` holds s positive sizes.
    ``scale_omega`` rescales rotor-speed coordinates by omega_0 so their
    perturbations are speed deviations of comparable per-unit size.
    """

    directions: tuple[np.ndarray, ...]
    magnitudes: tuple[float, ...]
    t_f: float = DEFAULT_T_F
    dt: float = DEFAULT_DT
    scale_omega: bool = False

    def __post_init__(self):
        if len(self.directions) < 1 or len(self.magnitudes) < 1:
            raise SchemeDimensionMismatch("need at least one T_l and one c_m")
        n = self.directions[0].shape[0]
        eye = np.eye(n)
        for l, t_mat in enumerate(self.directions):
            if t_mat.shape != (n, n):
                raise SchemeDimensionMismatch(
                    f"direction {l} has shape {t_mat.shape}, expected ({n},{n})")
            if np.max(np.abs(t_mat.T @ t_mat - eye)) > 1e-10:
                raise SchemeDimensionMismatch(
                    f"direction {l} is not orthogonal within 1e-10")
        if any(c <= 0 for c in self.magnitudes):
            raise SchemeDimensionMismatch("all magnitudes must be > 0")
        if self.t_f <= 0 or self.dt <= 0:
            raise SchemeDimensionMismatch("t_f and dt must be > 0")

    @classmethod
    def default(cls, n: int, *, magnitude: float = DEFAULT_MAGNITUDE,
                t_f: float = DEFAULT_T_F, dt: float = DEFAULT_DT,
                scale_omega: bool = False) -> "PerturbationScheme":
        """Single identity direction, single magnitude."""
        return cls(directions=(np.eye(n),), magnitudes=(magnitude,),
                   t_f=t_f, dt=dt, scale_omega=scale_omega)

    @classmethod
    def with_random_directions(cls, n: int, r: int, seed: int = 0,
                               **kwargs) -> "PerturbationScheme":
        """Identity plus r-1 seeded random orthogonal direction matrices."""
        rng = np.random.default_rng(seed)
        dirs = [np.eye(n)]
        for _ in range(r - 1):
            q, _ = np.linalg.qr(rng.standard_normal((n, n)))
            dirs.append(q)
        mags = kwargs.pop("magnitudes", (DEFAULT_MAGNITUDE,))
        return cls(directions=tuple(dirs), magnitudes=tuple(mags), **kwargs)

    @property
    def n(self) -> int:
        return self.directions[0].shape[0]

    @property
    def num_steps(self) -> int:
        return int(round(self.t_f / self.dt))

    @cached_property
    def scheme_id(self) -> str:
        h = hashlib.sha256()
        h.update(f"{len(self.directions)},{self.magnitudes},{self.t_f},"
                 f"{self.dt},{self.scale_omega}".encode())
        for t_mat in self.directions:
            h.update(np.ascontiguousarray(t_mat).tobytes())
        return h.hexdigest()[:12]

    def to_dict(self) -> dict:
        return {
            "r": len(self.directions),
            "magnitudes": list(self.magnitudes),
            "t_f": self.t_f,
            "dt": self.dt,
            "scale_omega": self.scale_omega,
            "scheme_id": self.scheme_id,
        }


@dataclass(frozen=True)
class Gramian:
    """Symmetric PSD observability gramian with provenance."""

    matrix: np.ndarray
    pmu_set: PlacementMask | None = None
    scheme_id: str = ""

    def __post_init__(self):
        w = self.matrix
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise LengthMismatch(f"gramian must be square, got {w.shape}")
        scale = max(1.0, float(np.max(np.abs(w))) if w.size else 0.0)
        if float(np.max(np.abs(w - w.T))) > 1e-10 * scale:
            raise LengthMismatch("gramian matrix is not symmetric")
        w.setflags(write=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def is_psd(self, tol: float = 1e-10) -> bool:
        eig = self.eigenvalues()
        return bool(eig[0] >= -tol * max(1.0, eig[-1]))


def _omega_scale(case: SystemCase, scheme: PerturbationScheme) -> np.ndarray:
    """Per-dynamic-coordinate perturbation scale vector."""
    scale = np.ones(case.n_dynamic)
    if scheme.scale_omega:
        scale[case.g:2 * case.g] = case.omega0
    return scale


def _batch_output_series(case: SystemCase, x0_batch: np.ndarray,
                         u: InputVector, num_steps: int, dt: float,
                         labels=None) -> np.ndarray:
    """Heun-integrate a batch of initial states, returning all outputs.

    ``labels``, when given, maps batch rows to (state_index, l, m) for
    divergence reporting.
    """
    batch = x0_batch.shape[0]
    states = np.empty((batch, num_steps + 1, x0_batch.shape[1]))
    states[:, 0] = x0_batch
    x = x0_batch.copy()
    for k in range(1, num_steps + 1):
        f0 = dynamics_rhs(case, x, u)
        x_pred = x + f0 * dt
        f1 = dynamics_rhs(case, x_pred, u)
        x = x + 0.5 * (f0 + f1) * dt
        bad = ~np.all(np.isfinite(x), axis=-1)
        if np.any(bad):
            row = int(np.flatnonzero(bad)[0])
            if labels is not None:
                i, l, m = labels[row]
                raise SimulationDiverged(
                    f"perturbed run diverged at step {k} "
                    f"(state {i}, direction {l}, magnitude index {m})",
                    state_index=i, direction=l, magnitude=m, step=k)
            raise SimulationDiverged(
                f"unperturbed run diverged at step {k}", step=k)
        states[:, k] = x
    return full_outputs(case, states)


def _difference_blocks(case: SystemCase, scheme: PerturbationScheme,
                       x0: np.ndarray, u: InputVector):
    """Output deviations of every perturbed run from the unperturbed run.

    Yields ``(l, m, deviations)`` with deviations shaped (n, K+1, 4g);
    the unperturbed trajectory is simulated once and shared.
    """
    n = case.n_dynamic
    if scheme.n != n:
        raise SchemeDimensionMismatch(
            f"scheme dimension {scheme.n} != dynamic state size {n}")
    num_steps = scheme.num_steps
    scale = _omega_scale(case, scheme)
    y_base = _batch_output_series(case, x0[None, :], u, num_steps, scheme.dt)

    for l, t_mat in enumerate(scheme.directions):
        for m, c in enumerate(scheme.magnitudes):
            # row i starts at x0 + c * scale * T_l e_i (embedded in storage)
            pert_dyn = c * (scale[:, None] * t_mat).T
            x_start = np.repeat(x0[None, :], n, axis=0)
            x_start[:, case.dynamic_indices] += pert_dyn
            labels = [(i, l, m) for i in range(n)]
            y_pert = _batch_output_series(case, x_start, u, num_steps,
                                          scheme.dt, labels=labels)
            yield l, m, y_pert - y_base


def _accumulate(blocks, scheme: PerturbationScheme, scale: np.ndarray,
                cols: np.ndarray) -> np.ndarray:
    """Contract deviation blocks over time and the selected output columns."""
    n = scheme.n
    r = len(scheme.directions)
    s = len(scheme.magnitudes)
    inv_scale = 1.0 / scale
    w = np.zeros((n, n))
    for l, m, dev in blocks:
        d = dev[:, :, cols]
        psi = np.einsum("akc,bkc->ab", d, d)
        c = scheme.magnitudes[m]
        t_mat = scheme.directions[l]
        part = t_mat @ psi @ t_mat.T
        part = inv_scale[:, None] * part * inv_scale[None, :]
        w += part * (scheme.dt / (r * s * c * c))
    return 0.5 * (w + w.T)


def empirical_gramian(case: SystemCase, placement: PlacementMask,
                      scheme: PerturbationScheme, x0: np.ndarray,
                      u: InputVector) -> Gramian:
    """Discrete empirical observability gramian for one PMU placement.

    Runs r*s*n perturbed simulations plus one shared unperturbed run from
    the steady state ``x0`` and accumulates output deviations over the
    horizon.  An empty placement yields the zero matrix without simulating.
    """
    if len(placement) != case.g:
        raise LengthMismatch("placement length does not match case")
    n = case.n_dynamic
    if placement.count == 0:
        return Gramian(np.zeros((n, n)), pmu_set=placement,
                       scheme_id=scheme.scheme_id)
    cols = output_columns(case.g, placement)
    scale = _omega_scale(case, scheme)
    w = _accumulate(_difference_blocks(case, scheme, x0, u),
                    scheme, scale, cols)
    return Gramian(w, pmu_set=placement, scheme_id=scheme.scheme_id)


def per_generator_gramians(case: SystemCase, scheme: PerturbationScheme,
                           x0: np.ndarray, u: InputVector) -> list[Gramian]:
    """Gramian of each single-PMU placement, from one shared simulation set.

    Outputs of all machines are recorded once per perturbed run and sliced
    per machine, so the cost is the same as a single full gramian.
    """
    g = case.g
    blocks = list(_difference_blocks(case, scheme, x0, u))
    scale = _omega_scale(case, scheme)
    parts = []
    for q in range(g):
        cols = output_columns(g, PlacementMask.from_indices(g, [q]))
        w = _accumulate(blocks, scheme, scale, cols)
        parts.append(Gramian(w, pmu_set=PlacementMask.from_indices(g, [q]),
                             scheme_id=scheme.scheme_id))
    return parts


def assemble_gramian(z: PlacementMask, parts: list[Gramian]) -> Gramian:
    """Sum the per-generator gramians selected by ``z`` (the search hot path)."""
    if len(parts) != len(z):
        raise LengthMismatch(
            f"{len(parts)} parts for a length-{len(z)} placement")
    n = parts[0].n
    w = np.zeros((n, n))
    for i in z.indices:
        w += parts[i].matrix
    return Gramian(w, pmu_set=z, scheme_id=parts[0].scheme_id)


# -- generic core and the bundled linear test system ---------------------------

def gramian_from_outputs(run_outputs, x0: np.ndarray,
                         scheme: PerturbationScheme,
                         scale: np.ndarray | None = None) -> np.ndarray:
    """Empirical gramian of an arbitrary simulator.

    ``run_outputs`` maps a batch of initial states (B, n) to output series
    (B, K+1, p).  Used for cross-checking against systems with closed-form
    gramians; the power-system entry points above share the same
    accumulation arithmetic.
    """
    n = scheme.n
    if x0.shape != (n,):
        raise SchemeDimensionMismatch(
            f"x0 has shape {x0.shape}, expected ({n},)")
    if scale is None:
        scale = np.ones(n)
    y_base = run_outputs(x0[None, :])

    def blocks():
        for l, t_mat in enumerate(scheme.directions):
            for m, c in enumerate(scheme.magnitudes):
                starts = x0[None, :] + c * (scale[:, None] * t_mat).T
                yield l, m, run_outputs(starts) - y_base

    cols = np.arange(y_base.shape[2])
    return _accumulate(blocks(), scheme, scale, cols)


@dataclass(frozen=True)
class LinearSystem:
    """Autonomous linear system x' = A x, y = C x with exact stepping.

    Trajectories use the exact matrix exponential per step, so the empirical
    gramian of this system equals the discrete-sum observability gramian to
    machine precision for any perturbation size.
    """

    a: np.ndarray
    c: np.ndarray

    def output_series(self, x0_batch: np.ndarray, t_f: float,
                      dt: float) -> np.ndarray:
        num_steps = int(round(t_f / dt))
        phi = scipy.linalg.expm(self.a * dt)
        n = self.a.shape[0]
        states = np.empty((x0_batch.shape[0], num_steps + 1, n))
        states[:, 0] = x0_batch
        x = x0_batch
        for k in range(1, num_steps + 1):
            x = x @ phi.T
            states[:, k] = x
        return states @ self.c.T

    def empirical_gramian(self, scheme: PerturbationScheme) -> np.ndarray:
        run = lambda batch: self.output_series(batch, scheme.t_f, scheme.dt)
        return gramian_from_outputs(run, np.zeros(self.a.shape[0]), scheme)


def bundled_linear_system() -> LinearSystem:
    """Two-state Hurwitz system (eigenvalues -1, -2) with one output."""
    a = np.array([[0.0, 1.0], [-2.0, -3.0]])
    c = np.array([[1.0, 0.0]])
    return LinearSystem(a=a, c=c)


# -- export --------------------------------------------------------------------

def save_gramian_csv(path, gramian: Gramian,
                     scheme: PerturbationScheme | None = None,
                     case: SystemCase | None = None) -> None:
    """Write the matrix as CSV (17 significant digits) plus a metadata sidecar."""
    import json
    from pathlib import Path

    path = Path(path)
    with open(path, "w") as fh:
        for row in gramian.matrix:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    meta = {
        "scheme": scheme.to_dict() if scheme is not None
        else {"scheme_id": gramian.scheme_id},
        "placement": list(gramian.pmu_set.z) if gramian.pmu_set else None,
        "case_hash": case_hash(case) if case is not None else None,
    }
    with open(path.with_suffix(path.suffix + ".meta.json"), "w") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
