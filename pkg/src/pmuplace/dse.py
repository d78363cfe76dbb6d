"""Validation layer: fault scenarios, synthetic PMU data, SRUKF estimation
runs, and the two study metrics (RMS rotor-angle error and the count of
convergent angles).

With only the reduced admittance matrix available, a three-phase fault is
approximated by scaling one off-diagonal coupling of the reduced network
(diagonals compensated to keep row sums) for the fault window; severity 0
removes the coupling entirely.  This is a disturbance generator, not a
protection-grade fault model.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    FilterDiverged,
    LengthMismatch,
    NonFiniteState,
)
from .model import (
    InputVector,
    PlacementMask,
    SystemCase,
    Trajectory,
    euler_step,
    full_outputs,
    initialize_equilibrium,
    output_columns,
    rhs_parts,
    simulate,
    terminal_outputs,
)
from .srukf import SigmaPointParams, SquareRootUKF

CONVERGENCE_WINDOW = 1.0      # s
CONVERGENCE_THRESHOLD = 0.02  # fraction of |true angle|
ZERO_ANGLE_GUARD = 1e-9       # rad; below this the relative test is ill-posed
ZERO_ANGLE_FALLBACK = 1e-3    # rad; absolute criterion for near-zero angles
MEASUREMENT_STD_FLOOR = 1e-8  # pu; keeps R positive definite at zero noise
PROCESS_STD_FLOOR = 1e-9


@dataclass(frozen=True)
class Scenario:
    """A temporary disturbance of one coupling of the reduced network."""

    fault_target: tuple[int, int]
    fault_start: float
    fault_clear: float
    severity: float = 0.0
    description: str = ""

    def __post_init__(self):
        i, j = self.fault_target
        if i == j:
            raise DimensionMismatch("fault target must be an off-diagonal pair")
        if self.fault_start < 0 or self.fault_clear < self.fault_start:
            raise DimensionMismatch(
                "need 0 <= fault_start <= fault_clear")

    def to_dict(self) -> dict:
        return {
            "target": list(self.fault_target),
            "start": self.fault_start,
            "clear": self.fault_clear,
            "severity": self.severity,
            "description": self.description,
        }


@dataclass(frozen=True)
class NoiseModel:
    """Filter noise settings: per-group process stds and measurement std."""

    process_std: tuple[float, float, float] = (1e-6, 1e-3, 1e-6)  # delta, omega, e'
    measurement_std: float = 0.01  # pu
    seed: int | None = None

    def __post_init__(self):
        if any(s < 0 for s in self.process_std) or self.measurement_std < 0:
            raise DimensionMismatch("noise standard deviations must be >= 0")


def faulted_admittance(y: np.ndarray, target: tuple[int, int],
                       severity: float) -> np.ndarray:
    """Scale one coupling by ``severity`` and compensate the diagonals."""
    i, j = target
    y_f = np.array(y)
    y_f[i, i] += (1.0 - severity) * y[i, j]
    y_f[j, j] += (1.0 - severity) * y[j, i]
    y_f[i, j] *= severity
    y_f[j, i] *= severity
    return y_f


def simulate_scenario(case: SystemCase, scenario: Scenario, t_f: float,
                      dt: float) -> tuple[Trajectory, InputVector]:
    """Deterministic truth trajectory: equilibrium, fault window, recovery."""
    if scenario.fault_clear > t_f:
        raise DimensionMismatch("fault_clear exceeds the horizon")
    x0, u0 = initialize_equilibrium(case)
    num_steps = int(round(t_f / dt))
    k_start = int(round(scenario.fault_start / dt))
    k_clear = int(round(scenario.fault_clear / dt))

    fault_case = dataclasses.replace(
        case, y_reduced=faulted_admittance(case.y_reduced,
                                           scenario.fault_target,
                                           scenario.severity))
    states = np.empty((num_steps + 1, 4 * case.g))
    states[0] = x0
    x = x0
    for k in range(1, num_steps + 1):
        active = fault_case if k_start <= k - 1 < k_clear else case
        try:
            x = euler_step(active, x, u0, u0, dt)
        except NonFiniteState:
            raise NonFiniteState(
                f"scenario trajectory became non-finite at step {k} "
                "(fault too severe for this step size)", step=k)
        states[k] = x
    times = np.arange(num_steps + 1) * dt
    truth = Trajectory(times=times, states=states,
                       outputs=full_outputs(case, states))
    return truth, u0


def measurements_from_truth(case: SystemCase, truth: Trajectory,
                            placement: PlacementMask, measurement_std: float,
                            rng: np.random.Generator) -> np.ndarray:
    """Noisy PMU series for the placed machines, one row per sample."""
    cols = output_columns(case.g, placement)
    clean = truth.outputs[:, cols]
    if measurement_std == 0.0:
        return clean.copy()
    return clean + rng.normal(0.0, measurement_std, size=clean.shape)


def generate_scenario(case: SystemCase, scenario: Scenario, t_f: float,
                      dt: float, noise: NoiseModel,
                      placement: PlacementMask,
                      rng: np.random.Generator | None = None):
    """Truth trajectory plus noisy measurements for one placement."""
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    truth, _ = simulate_scenario(case, scenario, t_f, dt)
    meas = measurements_from_truth(case, truth, placement,
                                   noise.measurement_std, rng)
    return truth, meas


# -- metrics -------------------------------------------------------------------

def avg_rotor_angle_error(est_delta: np.ndarray,
                          true_delta: np.ndarray) -> float:
    """RMS rotor-angle error over all machines and samples."""
    est = np.asarray(est_delta, dtype=float)
    true = np.asarray(true_delta, dtype=float)
    if est.shape != true.shape:
        raise LengthMismatch(
            f"trajectory shapes differ: {est.shape} vs {true.shape}")
    return float(np.sqrt(np.mean((est - true) ** 2)))


def convergent_angle_flags(est_delta: np.ndarray, true_delta: np.ndarray,
                           dt: float, window: float = CONVERGENCE_WINDOW,
                           threshold: float = CONVERGENCE_THRESHOLD) -> np.ndarray:
    """Per-machine flag: estimate within threshold*|true| over the last window.

    Samples where |true| < 1e-9 rad make the relative test ill-posed; those
    samples use an absolute 1e-3 rad criterion instead.
    """
    est = np.asarray(est_delta, dtype=float)
    true = np.asarray(true_delta, dtype=float)
    if est.shape != true.shape:
        raise LengthMismatch(
            f"trajectory shapes differ: {est.shape} vs {true.shape}")
    steps = int(round(window / dt))
    if steps + 1 > est.shape[0]:
        raise LengthMismatch("window longer than the trajectory")
    err = np.abs(est[-steps:] - true[-steps:])
    mag = np.abs(true[-steps:])
    limit = np.where(mag < ZERO_ANGLE_GUARD, ZERO_ANGLE_FALLBACK,
                     threshold * mag)
    return np.all(err < limit, axis=0)


def convergent_angle_count(est_delta: np.ndarray, true_delta: np.ndarray,
                           dt: float, window: float = CONVERGENCE_WINDOW,
                           threshold: float = CONVERGENCE_THRESHOLD) -> int:
    return int(convergent_angle_flags(est_delta, true_delta, dt,
                                      window, threshold).sum())


# -- estimation ----------------------------------------------------------------

@dataclass
class EstimationResult:
    """One SRUKF run: trajectories, convergence flags and study metrics."""

    times: np.ndarray
    est_states: np.ndarray            # (K+1, 4g) full storage layout
    placement: PlacementMask
    innovations: np.ndarray           # (K,) infinity norms; 0 with no PMUs
    cov_condition_log: np.ndarray     # (K,) log10 condition proxy per step
    true_states: np.ndarray | None = None
    convergence_flags: np.ndarray | None = None
    e_delta: float | None = None
    n_convergent: int | None = None

    def attach_truth(self, true_states: np.ndarray, g: int, dt: float):
        """Fill metrics; step 0 carries the initial guess and is excluded."""
        self.true_states = true_states
        est_d = self.est_states[1:, :g]
        true_d = true_states[1:, :g]
        self.e_delta = avg_rotor_angle_error(est_d, true_d)
        self.convergence_flags = convergent_angle_flags(est_d, true_d, dt)
        self.n_convergent = int(self.convergence_flags.sum())
        return self


def _process_chol(case: SystemCase, noise: NoiseModel) -> np.ndarray:
    g = case.g
    n = case.n_dynamic
    std = np.empty(n)
    std[:g] = max(noise.process_std[0], PROCESS_STD_FLOOR)
    std[g:2 * g] = max(noise.process_std[1], PROCESS_STD_FLOOR)
    std[2 * g:] = max(noise.process_std[2], PROCESS_STD_FLOOR)
    return np.diag(std)


DEFAULT_INIT_STD = (0.1, 0.5, 0.05)  # delta (rad), omega (rad/s), e' (pu)


def _initial_chol(case: SystemCase,
                  init_std: tuple[float, float, float]) -> np.ndarray:
    g = case.g
    n = case.n_dynamic
    std = np.empty(n)
    std[:g] = init_std[0]
    std[g:2 * g] = init_std[1]
    std[2 * g:] = init_std[2]
    return np.diag(std)


def srukf_run(case: SystemCase, placement: PlacementMask,
              measurements: np.ndarray, x_init_guess: np.ndarray,
              noise: NoiseModel, dt: float,
              params: SigmaPointParams | None = None,
              init_std: tuple[float, float, float] = DEFAULT_INIT_STD,
              true_states: np.ndarray | None = None,
              u: InputVector | None = None) -> EstimationResult:
    """Square-root UKF pass over one measurement series.

    The filter state is the dynamic coordinates with rotor speed
    parameterized as slip (omega - omega_0): at rated-speed magnitude the
    scaled-transform mean weights (~1/alpha^2) would amplify per-sigma-point
    representation roundoff above the collapsed covariance scale.
    Classical-machine transient voltages are held at the values in
    ``x_init_guess``.  ``measurements`` has one row per sample including
    k = 0 (row 0 is not used for updates).  With an empty placement there is
    nothing to correct and the result is the open-loop simulation from the
    initial guess.
    """
    g = case.g
    if len(placement) != g:
        raise DimensionMismatch("placement length does not match case")
    p = 4 * placement.count
    if measurements.ndim != 2 or measurements.shape[1] != p:
        raise DimensionMismatch(
            f"measurements have shape {measurements.shape}, expected (*, {p})")
    if x_init_guess.shape != (4 * g,):
        raise DimensionMismatch("x_init_guess must be a full storage state")
    if u is None:
        _, u = initialize_equilibrium(case)
    num_steps = measurements.shape[0] - 1

    if placement.count == 0:
        traj = simulate(case, x_init_guess, u, num_steps * dt, dt)
        result = EstimationResult(
            times=traj.times, est_states=traj.states, placement=placement,
            innovations=np.zeros(num_steps),
            cov_condition_log=np.zeros(num_steps))
        if true_states is not None:
            result.attach_truth(true_states, g, dt)
        return result

    t4 = np.flatnonzero(case.transient_mask)
    nt4 = t4.size
    template_eqp = x_init_guess[2 * g:3 * g].copy()
    template_edp = x_init_guess[3 * g:4 * g].copy()
    out_cols = output_columns(g, placement)

    def unpack(x_dyn):
        delta = x_dyn[..., :g]
        slip = x_dyn[..., g:2 * g]
        eqp = np.broadcast_to(template_eqp, delta.shape).copy()
        edp = np.broadcast_to(template_edp, delta.shape).copy()
        eqp[..., t4] = x_dyn[..., 2 * g:2 * g + nt4]
        edp[..., t4] = x_dyn[..., 2 * g + nt4:]
        return delta, slip, eqp, edp

    def pack(d_delta, d_slip, d_eqp, d_edp):
        return np.concatenate(
            [d_delta, d_slip, d_eqp[..., t4], d_edp[..., t4]], axis=-1)

    def f_batch(x_dyn):
        f0 = pack(*rhs_parts(case, *unpack(x_dyn), u))
        x_pred = x_dyn + f0 * dt
        f1 = pack(*rhs_parts(case, *unpack(x_pred), u))
        return x_dyn + 0.5 * (f0 + f1) * dt

    def h_batch(x_dyn):
        delta, _, eqp, edp = unpack(x_dyn)
        return terminal_outputs(case, delta, eqp, edp)[..., out_cols]

    x0_dyn = case.extract_dynamic(x_init_guess)
    x0_dyn[g:2 * g] -= case.omega0  # omega to slip

    meas_std = max(noise.measurement_std, MEASUREMENT_STD_FLOOR)
    ukf = SquareRootUKF(
        f=f_batch, h=h_batch,
        x0=x0_dyn,
        p0_chol=_initial_chol(case, init_std),
        q_chol=_process_chol(case, noise),
        r_chol=meas_std * np.eye(p),
        params=params)

    def to_storage(x_dyn):
        x_dyn = x_dyn.copy()
        x_dyn[g:2 * g] += case.omega0
        return case.expand_dynamic(x_dyn, x_init_guess)

    est = np.empty((num_steps + 1, 4 * g))
    est[0] = x_init_guess
    innovations = np.empty(num_steps)
    cond_log = np.empty(num_steps)
    for k in range(1, num_steps + 1):
        try:
            ukf.predict()
            innovations[k - 1] = ukf.update(measurements[k])
        except (FilterDiverged, NonFiniteState) as exc:
            raise FilterDiverged(f"filter diverged at step {k}: {exc}",
                                 step=k)
        cond_log[k - 1] = ukf.condition_proxy()
        est[k] = to_storage(ukf.x)

    result = EstimationResult(
        times=np.arange(num_steps + 1) * dt, est_states=est,
        placement=placement, innovations=innovations,
        cov_condition_log=cond_log)
    if true_states is not None:
        result.attach_truth(true_states, g, dt)
    return result


# -- study orchestration ---------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    placement_id: str
    placement: PlacementMask
    measure_used: str
    scenario_id: str
    repeat: int
    e_delta: float
    n_convergent: int
    diverged: bool


@dataclass(frozen=True)
class AggregateRecord:
    placement_id: str
    placement: PlacementMask
    measure_used: str
    runs: int
    diverged: int
    mean_e_delta: float
    mean_n_convergent: float


@dataclass
class StudyReport:
    rows: list[RunRecord]
    aggregates: list[AggregateRecord]

    def write_runs_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("placement_id,z,measure_used,scenario_id,repeat,"
                     "e_delta,n_convergent,diverged_flag\n")
            for r in self.rows:
                z = " ".join(str(i) for i in r.placement.indices)
                e = "nan" if r.diverged else f"{r.e_delta:.17g}"
                n = "nan" if r.diverged else str(r.n_convergent)
                fh.write(f"{r.placement_id},{z},{r.measure_used},"
                         f"{r.scenario_id},{r.repeat},{e},{n},"
                         f"{int(r.diverged)}\n")

    def write_aggregate_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("placement_id,z,measure_used,runs,diverged,"
                     "mean_e_delta,mean_n_convergent\n")
            for a in self.aggregates:
                z = " ".join(str(i) for i in a.placement.indices)
                fh.write(f"{a.placement_id},{z},{a.measure_used},{a.runs},"
                         f"{a.diverged},{a.mean_e_delta:.17g},"
                         f"{a.mean_n_convergent:.17g}\n")

    @property
    def any_diverged(self) -> bool:
        return any(r.diverged for r in self.rows)


def run_validation_study(case: SystemCase, placements, scenarios,
                         repeats: int, seed: int,
                         noise: NoiseModel | None = None,
                         t_f: float = 5.0, dt: float = 1.0 / 60.0,
                         init_delta_error: float = 0.1,
                         measure_labels: dict | None = None,
                         jobs: int = 1) -> StudyReport:
    """SRUKF runs over placements x scenarios x repeats.

    ``placements`` is a list of (placement_id, PlacementMask).  Each run's
    noise stream is derived from (seed, run_index), so results do not depend
    on execution order; truth trajectories are deterministic per scenario
    and shared.  Per-run failures become diverged rows instead of aborting.
    """
    noise = noise or NoiseModel()
    measure_labels = measure_labels or {}
    truths = {}
    for s_idx, scenario in enumerate(scenarios):
        truths[s_idx] = simulate_scenario(case, scenario, t_f, dt)

    tasks = []
    run_index = 0
    for placement_id, mask in placements:
        for s_idx in range(len(scenarios)):
            for rep in range(repeats):
                tasks.append((run_index, placement_id, mask, s_idx, rep))
                run_index += 1

    def one_run(task):
        run_idx, placement_id, mask, s_idx, rep = task
        truth, u0 = truths[s_idx]
        rng = np.random.default_rng([seed, run_idx])
        meas = measurements_from_truth(case, truth, mask,
                                       noise.measurement_std, rng)
        guess = truth.states[0].copy()
        guess[:case.g] *= 1.0 + init_delta_error
        label = measure_labels.get(placement_id, "")
        try:
            res = srukf_run(case, mask, meas, guess, noise, dt,
                            true_states=truth.states, u=u0)
            return RunRecord(placement_id, mask, label, f"s{s_idx}", rep,
                             res.e_delta, res.n_convergent, False)
        except FilterDiverged:
            return RunRecord(placement_id, mask, label, f"s{s_idx}", rep,
                             float("nan"), -1, True)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(one_run, tasks))
    else:
        rows = [one_run(t) for t in tasks]

    aggregates = []
    for placement_id, mask in placements:
        mine = [r for r in rows if r.placement_id == placement_id]
        good = [r for r in mine if not r.diverged]
        aggregates.append(AggregateRecord(
            placement_id=placement_id, placement=mask,
            measure_used=measure_labels.get(placement_id, ""),
            runs=len(mine), diverged=len(mine) - len(good),
            mean_e_delta=float(np.mean([r.e_delta for r in good]))
            if good else float("nan"),
            mean_n_convergent=float(np.mean([r.n_convergent for r in good]))
            if good else float("nan")))
    return StudyReport(rows=rows, aggregates=aggregates)
