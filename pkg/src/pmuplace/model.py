"""Multi-machine generator dynamics behind a reduced admittance network.

State storage is ``x = [delta, omega, e'_q, e'_d]`` with one block of g
entries per coordinate (length 4g in storage).  Fourth-order machines evolve
all four coordinates; classical machines evolve only (delta, omega) and keep
their transient voltages frozen, so the dynamic (perturbable) state has
``n = 4*n_transient + 2*n_classical`` entries.

All evaluation functions broadcast over leading axes: ``x`` may be a single
state ``(4g,)`` or a batch ``(..., 4g)``.  Everything here is pure; a
:class:`SystemCase` is immutable after loading.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingField,
    NonFiniteState,
    NonPositiveConstant,
    NotAnEquilibrium,
    SingularInitialization,
)

EQUILIBRIUM_TOL = 1e-8


class ModelOrder(enum.Enum):
    TRANSIENT4 = "transient4"
    CLASSICAL2 = "classical2"


@dataclass(frozen=True)
class MachineParams:
    """Constants of one synchronous machine.

    Reactances and time constants are on the machine's own MVA base ``s_n``;
    the network quantities are on the system base.  For classical machines
    the open-circuit time constants are unused and may be zero, and the
    synchronous reactances default to the transient ones.
    """

    index: int
    model_order: ModelOrder
    h: float            # inertia constant, s
    k_d: float          # damping factor
    x_dp: float         # d-axis transient reactance, pu
    x_qp: float         # q-axis transient reactance, pu
    s_n: float          # machine base MVA
    t_d0p: float = 0.0  # d-axis open-circuit time constant, s
    t_q0p: float = 0.0  # q-axis open-circuit time constant, s
    x_d: float = 0.0    # d-axis synchronous reactance, pu
    x_q: float = 0.0    # q-axis synchronous reactance, pu

    def __post_init__(self):
        if self.h <= 0:
            raise NonPositiveConstant(f"machine {self.index}: H must be > 0")
        if self.s_n <= 0:
            raise NonPositiveConstant(f"machine {self.index}: S_N must be > 0")
        if self.x_dp <= 0 or self.x_qp <= 0:
            raise NonPositiveConstant(
                f"machine {self.index}: transient reactances must be > 0")
        if self.model_order is ModelOrder.CLASSICAL2:
            # Synchronous reactances are irrelevant for frozen e' dynamics;
            # normalize omitted values so the algebraic chain stays total.
            if self.x_d == 0.0:
                object.__setattr__(self, "x_d", self.x_dp)
            if self.x_q == 0.0:
                object.__setattr__(self, "x_q", self.x_qp)
            return
        if self.t_d0p <= 0 or self.t_q0p <= 0:
            raise NonPositiveConstant(
                f"machine {self.index}: open-circuit time constants must be "
                "> 0 for the fourth-order model")
        if self.x_d < self.x_dp:
            raise NonPositiveConstant(
                f"machine {self.index}: x_d must be >= x_dp")
        if self.x_q < self.x_qp:
            raise NonPositiveConstant(
                f"machine {self.index}: x_q must be >= x_qp")

    @property
    def is_transient(self) -> bool:
        return self.model_order is ModelOrder.TRANSIENT4


@dataclass(frozen=True)
class InputVector:
    """Constant mechanical torque and field voltage per machine (pu)."""

    t_m: np.ndarray
    e_fd: np.ndarray


@dataclass(frozen=True)
class TerminalConditions:
    """Per-machine terminal voltage and current phasors, system base pu."""

    e_t: np.ndarray  # complex, length g
    i_t: np.ndarray  # complex, length g


@dataclass(frozen=True)
class PlacementMask:
    """Binary PMU placement vector over the g machines."""

    z: tuple[int, ...]

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.z):
            raise ValueError("placement entries must be 0 or 1")

    @classmethod
    def from_indices(cls, g: int, indices) -> "PlacementMask":
        z = [0] * g
        for i in indices:
            if not 0 <= i < g:
                raise DimensionMismatch(f"placement index {i} out of range")
            z[i] = 1
        return cls(tuple(z))

    @classmethod
    def full(cls, g: int) -> "PlacementMask":
        return cls((1,) * g)

    @classmethod
    def empty(cls, g: int) -> "PlacementMask":
        return cls((0,) * g)

    @property
    def count(self) -> int:
        return sum(self.z)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(i for i, v in enumerate(self.z) if v)

    def __len__(self) -> int:
        return len(self.z)


@dataclass(frozen=True, eq=False)
class SystemCase:
    """A multi-machine case: machine constants plus the reduced network.

    ``y_reduced`` is the g-by-g complex admittance matrix relating internal
    voltage sources to terminal currents (row i is used for machine i's
    current injection).  ``terminal`` optionally carries the steady-state
    terminal phasors used for equilibrium initialization.
    """

    machines: tuple[MachineParams, ...]
    y_reduced: np.ndarray
    s_b: float
    omega0: float
    terminal: TerminalConditions | None = None

    def __post_init__(self):
        g = len(self.machines)
        if g < 1:
            raise MissingField("case must contain at least one machine")
        if self.y_reduced.shape != (g, g):
            raise DimensionMismatch(
                f"y_reduced is {self.y_reduced.shape}, expected ({g}, {g})")
        if self.s_b <= 0:
            raise NonPositiveConstant("s_b must be > 0")
        if self.omega0 <= 0:
            raise NonPositiveConstant("omega_0 must be > 0")
        self.y_reduced.setflags(write=False)

    # -- layout ------------------------------------------------------------

    @property
    def g(self) -> int:
        return len(self.machines)

    @cached_property
    def transient_mask(self) -> np.ndarray:
        return np.array([m.is_transient for m in self.machines])

    @cached_property
    def n_dynamic(self) -> int:
        n_t4 = int(self.transient_mask.sum())
        return 4 * n_t4 + 2 * (self.g - n_t4)

    @cached_property
    def dynamic_indices(self) -> np.ndarray:
        """Storage indices of the perturbable coordinates.

        Order: all delta, all omega, e'_q of fourth-order machines, e'_d of
        fourth-order machines.
        """
        g = self.g
        t4 = np.flatnonzero(self.transient_mask)
        return np.concatenate([
            np.arange(g), g + np.arange(g), 2 * g + t4, 3 * g + t4,
        ])

    def split(self, x: np.ndarray):
        g = self.g
        return (x[..., :g], x[..., g:2 * g],
                x[..., 2 * g:3 * g], x[..., 3 * g:4 * g])

    def extract_dynamic(self, x: np.ndarray) -> np.ndarray:
        return x[..., self.dynamic_indices]

    def expand_dynamic(self, x_dyn: np.ndarray,
                       template: np.ndarray) -> np.ndarray:
        """Embed dynamic coordinates into full storage.

        Frozen coordinates (classical e') are taken from ``template``.
        """
        shape = x_dyn.shape[:-1] + (4 * self.g,)
        x = np.broadcast_to(template, shape).copy()
        x[..., self.dynamic_indices] = x_dyn
        return x

    # -- per-machine parameter arrays ---------------------------------------

    @cached_property
    def h(self) -> np.ndarray:
        return np.array([m.h for m in self.machines])

    @cached_property
    def k_d(self) -> np.ndarray:
        return np.array([m.k_d for m in self.machines])

    @cached_property
    def x_d(self) -> np.ndarray:
        return np.array([m.x_d for m in self.machines])

    @cached_property
    def x_q(self) -> np.ndarray:
        return np.array([m.x_q for m in self.machines])

    @cached_property
    def x_dp(self) -> np.ndarray:
        return np.array([m.x_dp for m in self.machines])

    @cached_property
    def x_qp(self) -> np.ndarray:
        return np.array([m.x_qp for m in self.machines])

    @cached_property
    def sb_over_sn(self) -> np.ndarray:
        return np.array([self.s_b / m.s_n for m in self.machines])

    @cached_property
    def inv_t_d0p(self) -> np.ndarray:
        return np.array([1.0 / m.t_d0p if m.is_transient else 0.0
                         for m in self.machines])

    @cached_property
    def inv_t_q0p(self) -> np.ndarray:
        return np.array([1.0 / m.t_q0p if m.is_transient else 0.0
                         for m in self.machines])

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        machines = []
        for m in self.machines:
            machines.append({
                "index": m.index,
                "model_order": m.model_order.value,
                "H": m.h, "K_D": m.k_d,
                "T_d0p": m.t_d0p, "T_q0p": m.t_q0p,
                "x_d": m.x_d, "x_q": m.x_q,
                "x_dp": m.x_dp, "x_qp": m.x_qp,
                "S_N": m.s_n,
            })
        doc = {
            "machines": machines,
            "y_reduced": [[float(v.real), float(v.imag)]
                          for v in self.y_reduced.ravel()],
            "s_b": self.s_b,
            "omega_0_rad_s": self.omega0,
        }
        if self.terminal is not None:
            doc["terminal"] = [
                [float(e.real), float(e.imag), float(i.real), float(i.imag)]
                for e, i in zip(self.terminal.e_t, self.terminal.i_t)
            ]
        return doc


def case_hash(case: SystemCase) -> str:
    """Stable content hash of a case document (for provenance sidecars)."""
    blob = json.dumps(case.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_case(source) -> SystemCase:
    """Build a validated :class:`SystemCase` from a document or file path.

    ``source`` may be a dict already parsed from JSON, or a path to a JSON
    file with fields ``machines[]``, ``y_reduced`` (row-major list of
    [re, im] pairs), ``s_b``, ``omega_0_rad_s`` and optionally ``terminal``
    (per-machine ``[e_re, e_im, i_re, i_im]``).
    """
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            doc = json.load(fh)
    elif isinstance(source, dict):
        doc = source
    else:
        raise TypeError("source must be a dict or a path")

    for key in ("machines", "y_reduced", "s_b", "omega_0_rad_s"):
        if key not in doc:
            raise MissingField(f"case document lacks '{key}'")

    machines = []
    for k, entry in enumerate(doc["machines"]):
        for key in ("model_order", "H", "K_D", "x_dp", "x_qp", "S_N"):
            if key not in entry:
                raise MissingField(f"machine {k} lacks '{key}'")
        try:
            order = ModelOrder(str(entry["model_order"]).lower())
        except ValueError:
            raise MissingField(
                f"machine {k}: unknown model_order {entry['model_order']!r}")
        if order is ModelOrder.TRANSIENT4:
            for key in ("T_d0p", "T_q0p", "x_d", "x_q"):
                if key not in entry:
                    raise MissingField(f"machine {k} lacks '{key}'")
        machines.append(MachineParams(
            index=int(entry.get("index", k)),
            model_order=order,
            h=float(entry["H"]), k_d=float(entry["K_D"]),
            t_d0p=float(entry.get("T_d0p", 0.0)),
            t_q0p=float(entry.get("T_q0p", 0.0)),
            x_d=float(entry.get("x_d", 0.0)),
            x_q=float(entry.get("x_q", 0.0)),
            x_dp=float(entry["x_dp"]), x_qp=float(entry["x_qp"]),
            s_n=float(entry["S_N"]),
        ))

    g = len(machines)
    y_pairs = doc["y_reduced"]
    if len(y_pairs) != g * g:
        raise DimensionMismatch(
            f"y_reduced has {len(y_pairs)} entries, expected {g * g}")
    y = np.array([complex(p[0], p[1]) for p in y_pairs]).reshape(g, g)

    terminal = None
    if doc.get("terminal") is not None:
        rows = doc["terminal"]
        if len(rows) != g:
            raise DimensionMismatch(
                f"terminal has {len(rows)} rows, expected {g}")
        e_t = np.array([complex(r[0], r[1]) for r in rows])
        i_t = np.array([complex(r[2], r[3]) for r in rows])
        terminal = TerminalConditions(e_t=e_t, i_t=i_t)

    return SystemCase(
        machines=tuple(machines), y_reduced=y,
        s_b=float(doc["s_b"]), omega0=float(doc["omega_0_rad_s"]),
        terminal=terminal,
    )


def bundled_case_path(name: str) -> Path:
    """Filesystem path of a bundled case ('demo2', 'demo10')."""
    from importlib import resources

    return Path(str(resources.files(__package__) / "cases" / f"{name}.json"))


def bundled_case(name: str) -> SystemCase:
    """Load one of the cases shipped with the package ('demo2', 'demo10')."""
    with open(bundled_case_path(name)) as fh:
        return load_case(json.load(fh))


# -- algebraic chain ---------------------------------------------------------

def _network_chain(case: SystemCase, delta, eqp, edp):
    """Internal-voltage to current algebra shared by dynamics and outputs.

    Returns ``(i_term, i_q, i_d, sin_d, cos_d)`` where ``i_term`` is the
    complex terminal current (system base) and ``i_q, i_d`` are machine-base
    stator currents.
    """
    s = np.sin(delta)
    c = np.cos(delta)
    psi_r = edp * s + eqp * c
    psi_i = eqp * s - edp * c
    i_term = (psi_r + 1j * psi_i) @ case.y_reduced.T
    i_r = i_term.real
    i_i = i_term.imag
    i_q = case.sb_over_sn * (i_i * s + i_r * c)
    i_d = case.sb_over_sn * (i_r * s - i_i * c)
    return i_term, i_q, i_d, s, c


def rhs_parts(case: SystemCase, delta, slip, eqp, edp, u: InputVector):
    """Derivative blocks in slip form: (d_delta, d_slip, d_eqp, d_edp).

    ``slip`` is omega - omega_0; keeping the filter-facing arithmetic at
    slip scale avoids roundoff at the rated-speed magnitude.  Classical
    machines get exactly zero e' derivatives via the zeroed inverse time
    constants.
    """
    _, i_q, i_d, _, _ = _network_chain(case, delta, eqp, edp)
    e_q = eqp - case.x_dp * i_d
    e_d = edp + case.x_qp * i_q
    t_e = case.sb_over_sn * (e_q * i_q + e_d * i_d)

    d_delta = slip
    d_slip = case.omega0 / (2.0 * case.h) * (
        u.t_m - t_e - case.k_d / case.omega0 * slip)
    d_eqp = (u.e_fd - eqp - (case.x_d - case.x_dp) * i_d) * case.inv_t_d0p
    d_edp = (-edp + (case.x_q - case.x_qp) * i_q) * case.inv_t_q0p
    return d_delta, d_slip, d_eqp, d_edp


def dynamics_rhs(case: SystemCase, x: np.ndarray, u: InputVector) -> np.ndarray:
    """Time derivative of the state; classical e' derivatives are exactly 0."""
    if x.shape[-1] != 4 * case.g:
        raise DimensionMismatch(
            f"state has {x.shape[-1]} entries, expected {4 * case.g}")
    delta, omega, eqp, edp = case.split(x)
    parts = rhs_parts(case, delta, omega - case.omega0, eqp, edp, u)
    return np.concatenate(parts, axis=-1)


def terminal_outputs(case: SystemCase, delta, eqp, edp) -> np.ndarray:
    """Output blocks [e_R, e_I, i_R, i_I]; rotor speed does not enter."""
    i_term, i_q, i_d, s, c = _network_chain(case, delta, eqp, edp)
    e_q = eqp - case.x_dp * i_d
    e_d = edp + case.x_qp * i_q
    e_r = e_d * s + e_q * c
    e_i = e_q * s - e_d * c
    return np.concatenate([e_r, e_i, i_term.real, i_term.imag], axis=-1)


def full_outputs(case: SystemCase, x: np.ndarray) -> np.ndarray:
    """Terminal phasor components for every machine: [e_R, e_I, i_R, i_I]."""
    delta, _, eqp, edp = case.split(x)
    return terminal_outputs(case, delta, eqp, edp)


def output_columns(g: int, placement: PlacementMask) -> np.ndarray:
    """Column indices into the full output array for one placement.

    Blocks keep the [e_R, e_I, i_R, i_I] order restricted to the PMU set.
    """
    idx = np.asarray(placement.indices, dtype=int)
    return np.concatenate([idx, g + idx, 2 * g + idx, 3 * g + idx]) \
        if idx.size else np.zeros(0, dtype=int)


def output_map(case: SystemCase, x: np.ndarray,
               placement: PlacementMask) -> np.ndarray:
    """Measured outputs for the PMU-equipped machines (length 4*count)."""
    if len(placement) != case.g:
        raise DimensionMismatch("placement length does not match case")
    cols = output_columns(case.g, placement)
    return full_outputs(case, x)[..., cols]


# -- equilibrium initialization ----------------------------------------------

def initialize_equilibrium(case: SystemCase,
                           terminal: TerminalConditions | None = None,
                           tol: float = EQUILIBRIUM_TOL):
    """Steady state and constant inputs from terminal phasor conditions.

    For fourth-order machines the rotor angle comes from the q-axis locator
    ``E_t + j x_q I`` (machine-base current), which zeroes the e'_d equation
    exactly; for classical machines the internal voltage behind x_dp is used
    and e'_d is zero by construction.  Inputs are chosen so mechanical torque
    balances electrical torque and the field voltage holds e'_q.

    Raises ``NotAnEquilibrium`` when the supplied phasors are inconsistent
    with the reduced network (residual above ``tol``).
    """
    if terminal is None:
        terminal = case.terminal
    if terminal is None:
        raise MissingField("case has no terminal conditions")
    e_t = np.asarray(terminal.e_t, dtype=complex)
    i_t = np.asarray(terminal.i_t, dtype=complex)
    if e_t.shape != (case.g,) or i_t.shape != (case.g,):
        raise DimensionMismatch("terminal arrays must have length g")

    i_mach = case.sb_over_sn * i_t
    axis_x = np.where(case.transient_mask, case.x_q, case.x_dp)
    locator = e_t + 1j * axis_x * i_mach
    if np.any(np.abs(locator) < 1e-9):
        bad = int(np.argmin(np.abs(locator)))
        raise SingularInitialization(
            f"machine {bad}: q-axis locator magnitude is ~0")
    delta = np.angle(locator)

    rot = np.exp(-1j * delta)
    v_dq = e_t * rot
    c_dq = i_mach * rot
    e_q = v_dq.real
    e_d = -v_dq.imag
    i_q = c_dq.real
    i_d = -c_dq.imag

    eqp = e_q + case.x_dp * i_d
    edp = e_d - case.x_qp * i_q

    omega = np.full(case.g, case.omega0)
    x0 = np.concatenate([delta, omega, eqp, edp])

    # Inputs from the model's own chain so the torque/field equations vanish
    # identically; any terminal/network inconsistency then shows up in e'_d.
    _, i_q0, i_d0, _, _ = _network_chain(case, delta, eqp, edp)
    e_q0 = eqp - case.x_dp * i_d0
    e_d0 = edp + case.x_qp * i_q0
    t_m = case.sb_over_sn * (e_q0 * i_q0 + e_d0 * i_d0)
    e_fd = eqp + (case.x_d - case.x_dp) * i_d0
    u0 = InputVector(t_m=t_m, e_fd=e_fd)

    residual = dynamics_rhs(case, x0, u0)
    worst = float(np.max(np.abs(residual)))
    if worst > tol:
        raise NotAnEquilibrium(
            f"terminal conditions inconsistent with the reduced network: "
            f"max |f(x0,u0)| = {worst:.3e} > {tol:.1e}")
    return x0, u0


# -- time stepping -------------------------------------------------------------

def euler_step(case: SystemCase, x: np.ndarray, u_prev: InputVector,
               u_next: InputVector, dt: float) -> np.ndarray:
    """One modified-Euler (Heun) step.

    Predictor x~ = x + f(x, u_prev) dt, then corrector with the averaged
    slope.  Classical e' coordinates are unchanged bit-for-bit because their
    derivatives are exactly zero.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    f0 = dynamics_rhs(case, x, u_prev)
    x_pred = x + f0 * dt
    f1 = dynamics_rhs(case, x_pred, u_next)
    x_next = x + 0.5 * (f0 + f1) * dt
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState("state became non-finite during euler_step")
    return x_next


@dataclass(frozen=True)
class Trajectory:
    """Fixed-step simulation record: states and full outputs at k = 0..K."""

    times: np.ndarray    # (K+1,)
    states: np.ndarray   # (K+1, 4g)
    outputs: np.ndarray  # (K+1, 4g)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self) -> int:
        return self.states.shape[0]


def simulate(case: SystemCase, x0: np.ndarray, u: InputVector,
             t_f: float, dt: float) -> Trajectory:
    """Integrate for K = round(t_f/dt) steps and record states and outputs."""
    if t_f <= 0:
        raise ValueError("t_f must be > 0")
    num_steps = int(round(t_f / dt))
    states = np.empty((num_steps + 1, 4 * case.g))
    states[0] = x0
    x = np.asarray(x0, dtype=float)
    for k in range(1, num_steps + 1):
        try:
            x = euler_step(case, x, u, u, dt)
        except NonFiniteState:
            raise NonFiniteState(
                f"state became non-finite at step {k}", step=k)
        states[k] = x
    times = np.arange(num_steps + 1) * dt
    return Trajectory(times=times, states=states,
                      outputs=full_outputs(case, states))
