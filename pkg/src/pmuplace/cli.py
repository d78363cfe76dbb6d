"""Command-line front end: gramian computation, placement optimization and
validation studies driven by one JSON config.

Subcommands:
  pmuplace gramian  --config cfg.json [--out DIR]
  pmuplace place    --config cfg.json [--gbar N] [--measure M] [--epsilon E]
  pmuplace validate --config cfg.json [--jobs N]

Exit codes: 0 success, 1 partial (some study runs diverged, report written),
2 invalid input.  Every output directory receives the fully resolved config.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dse import NoiseModel, Scenario, run_validation_study
from .errors import InvalidConfig, MissingField, PmuPlaceError
from .gramian import (
    PerturbationScheme,
    assemble_gramian,
    per_generator_gramians,
    save_gramian_csv,
)
from .measures import MeasureKind, all_measures
from .model import PlacementMask, case_hash, initialize_equilibrium, load_case
from .placement import (
    DEFAULT_EPSILON,
    EXHAUSTIVE_CAP,
    adaptive_placement,
    optimize,
    random_placement,
)

_MEASURE_NAMES = {k.value: k for k in MeasureKind}


@dataclass
class SchemeConfig:
    r: int = 1
    direction_seed: int = 0
    magnitudes: list = field(default_factory=lambda: [1e-3])
    t_f: float = 5.0
    dt: float = 1.0 / 60.0
    scale_omega: bool = False

    def build(self, n: int) -> PerturbationScheme:
        if self.r == 1:
            return PerturbationScheme.default(
                n, magnitude=self.magnitudes[0], t_f=self.t_f, dt=self.dt,
                scale_omega=self.scale_omega)
        return PerturbationScheme.with_random_directions(
            n, self.r, seed=self.direction_seed,
            magnitudes=tuple(self.magnitudes), t_f=self.t_f, dt=self.dt,
            scale_omega=self.scale_omega)


@dataclass
class SolverConfig:
    name: str = "auto"
    exhaustive_cap: int = EXHAUSTIVE_CAP
    max_rounds: int = 100


@dataclass
class StudyConfig:
    scenarios: list = field(default_factory=list)
    placements: list = field(default_factory=lambda: ["adaptive", "random:20"])
    repeats: int = 20
    seed: int = 0
    placement_seed: int = 1234
    init_delta_error: float = 0.1
    process_std: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    measurement_std: float = 0.01


@dataclass
class RunConfig:
    """Resolved configuration for any subcommand; round-trips losslessly."""

    case_path: str
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    gbar: object = 3          # int or [lo, hi] inclusive range
    epsilon: float = DEFAULT_EPSILON
    measure: str = "adaptive"
    study: StudyConfig = field(default_factory=StudyConfig)
    out_dir: str = "out"
    jobs: int = 1

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if "case_path" not in doc:
            raise MissingField("config lacks 'case_path'")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")

        def sub(cls_, key):
            payload = doc.get(key, {})
            names = {f.name for f in dataclasses.fields(cls_)}
            bad = set(payload) - names
            if bad:
                raise InvalidConfig(f"unknown '{key}' keys: {sorted(bad)}")
            return cls_(**payload)

        return cls(
            case_path=doc["case_path"],
            scheme=sub(SchemeConfig, "scheme"),
            solver=sub(SolverConfig, "solver"),
            gbar=doc.get("gbar", 3),
            epsilon=float(doc.get("epsilon", DEFAULT_EPSILON)),
            measure=str(doc.get("measure", "adaptive")),
            study=sub(StudyConfig, "study"),
            out_dir=str(doc.get("out_dir", "out")),
            jobs=int(doc.get("jobs", 1)),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def gbar_values(self, g: int) -> list[int]:
        if isinstance(self.gbar, int):
            return [self.gbar]
        lo, hi = self.gbar
        if not 0 <= lo <= hi <= g:
            raise InvalidConfig(f"gbar range {self.gbar} invalid for g={g}")
        return list(range(lo, hi + 1))


def _load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise MissingField(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config is not valid JSON: {exc}")
    return RunConfig.from_dict(doc)


def _prepare(config: RunConfig):
    case = load_case(config.case_path)
    x0, u0 = initialize_equilibrium(case)
    scheme = config.scheme.build(case.n_dynamic)
    return case, x0, u0, scheme


def _echo_config(config: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config_resolved.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_gramian(config: RunConfig) -> int:
    case, x0, u0, scheme = _prepare(config)
    out = Path(config.out_dir)
    _echo_config(config, out)

    parts = per_generator_gramians(case, scheme, x0, u0)
    for i, part in enumerate(parts):
        save_gramian_csv(out / f"gramian_gen{i:02d}.csv", part,
                         scheme=scheme, case=case)
    full = assemble_gramian(PlacementMask.full(case.g), parts)
    save_gramian_csv(out / "gramian_full.csv", full, scheme=scheme, case=case)

    for kind, mv in all_measures(full).items():
        print(f"{kind.value}: {mv.value:.10g}"
              + (" (singular)" if mv.singular else ""))
    return 0


def _placement_document(result, decision, config, case, scheme,
                        wall_time) -> dict:
    doc = result.to_dict()
    doc.update({
        "wall_time_s": wall_time,
        "case_hash": case_hash(case),
        "scheme_id": scheme.scheme_id,
        "epsilon": config.epsilon,
    })
    if decision is not None:
        doc.update(decision.to_dict())
    return doc


def cmd_place(config: RunConfig) -> int:
    case, x0, u0, scheme = _prepare(config)
    out = Path(config.out_dir)
    _echo_config(config, out)

    parts = per_generator_gramians(case, scheme, x0, u0)
    for gbar in config.gbar_values(case.g):
        start = time.perf_counter()
        if config.measure == "adaptive":
            result, decision = adaptive_placement(
                parts, gbar, epsilon=config.epsilon,
                solver=config.solver.name, cap=config.solver.exhaustive_cap)
        else:
            if config.measure not in _MEASURE_NAMES:
                raise InvalidConfig(f"unknown measure {config.measure!r}")
            result = optimize(parts, _MEASURE_NAMES[config.measure], gbar,
                              solver=config.solver.name,
                              cap=config.solver.exhaustive_cap,
                              max_rounds=config.solver.max_rounds)
            decision = None
        wall = time.perf_counter() - start
        doc = _placement_document(result, decision, config, case, scheme, wall)
        name = f"placement_{config.measure}_g{gbar:02d}.json"
        with open(out / name, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        print(f"gbar={gbar}: z={doc['z']} objective={doc['objective']:.6g}"
              + (f" branch={doc.get('branch')}" if decision else ""))
    return 0


def _resolve_placements(config: RunConfig, case, parts):
    """Expand placement specs into (id, mask) pairs plus measure labels.

    Specs: explicit index list, 'optimal:<measure>', 'adaptive',
    'random:<count>'.  Random masks derive from the dedicated placement
    seed, so changing the study (noise) seed never changes the placements.
    """
    gbar_list = config.gbar_values(case.g)
    if len(gbar_list) != 1:
        raise InvalidConfig("validate needs a single gbar, not a range")
    gbar = gbar_list[0]
    placements = []
    labels = {}
    counter = 0
    for spec in config.study.placements:
        if isinstance(spec, list):
            mask = PlacementMask.from_indices(case.g, spec)
            pid = f"explicit{counter:02d}"
            counter += 1
            placements.append((pid, mask))
            labels[pid] = "explicit"
        elif spec == "adaptive":
            result, decision = adaptive_placement(
                parts, gbar, epsilon=config.epsilon,
                solver=config.solver.name, cap=config.solver.exhaustive_cap)
            placements.append(("adaptive", result.mask))
            labels["adaptive"] = f"adaptive:{decision.branch}"
        elif isinstance(spec, str) and spec.startswith("optimal:"):
            name = spec.split(":", 1)[1]
            if name not in _MEASURE_NAMES:
                raise InvalidConfig(f"unknown measure in spec {spec!r}")
            result = optimize(parts, _MEASURE_NAMES[name], gbar,
                              solver=config.solver.name,
                              cap=config.solver.exhaustive_cap)
            pid = f"optimal_{name}"
            placements.append((pid, result.mask))
            labels[pid] = name
        elif isinstance(spec, str) and spec.startswith("random:"):
            count = int(spec.split(":", 1)[1])
            for j in range(count):
                mask = random_placement(case.g, gbar,
                                        [config.study.placement_seed, j])
                pid = f"random{j:02d}"
                placements.append((pid, mask))
                labels[pid] = "random"
        else:
            raise InvalidConfig(f"unknown placement spec {spec!r}")
    return placements, labels


def cmd_validate(config: RunConfig) -> int:
    case, x0, u0, scheme = _prepare(config)
    out = Path(config.out_dir)
    _echo_config(config, out)

    needs_parts = any(
        isinstance(s, str) and (s == "adaptive" or s.startswith("optimal:"))
        for s in config.study.placements)
    parts = (per_generator_gramians(case, scheme, x0, u0)
             if needs_parts else None)
    placements, labels = _resolve_placements(config, case, parts)

    scenarios = [Scenario(fault_target=tuple(s["target"]),
                          fault_start=float(s["start"]),
                          fault_clear=float(s["clear"]),
                          severity=float(s.get("severity", 0.0)),
                          description=str(s.get("description", "")))
                 for s in config.study.scenarios]
    if not scenarios:
        print("no scenarios configured; writing empty report")
    noise = NoiseModel(process_std=tuple(config.study.process_std),
                       measurement_std=config.study.measurement_std)
    report = run_validation_study(
        case, placements, scenarios, repeats=config.study.repeats,
        seed=config.study.seed, noise=noise, t_f=config.scheme.t_f,
        dt=config.scheme.dt, init_delta_error=config.study.init_delta_error,
        measure_labels=labels, jobs=config.jobs)
    report.write_runs_csv(out / "runs.csv")
    report.write_aggregate_csv(out / "aggregate.csv")
    for agg in report.aggregates:
        print(f"{agg.placement_id}: mean e_delta={agg.mean_e_delta:.6g} "
              f"mean N={agg.mean_n_convergent:.3g} diverged={agg.diverged}")
    return 1 if report.any_diverged else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmuplace",
        description="Observability-gramian PMU placement and DSE validation")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("gramian", cmd_gramian), ("place", cmd_place),
                     ("validate", cmd_validate)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--jobs", type=int, help="concurrent runs cap")
        p.set_defaults(handler=fn)
        if name == "place":
            p.add_argument("--gbar", type=int, help="PMU count override")
            p.add_argument("--measure", help="measure override")
            p.add_argument("--epsilon", type=float,
                           help="adaptive threshold override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        if args.out:
            config.out_dir = args.out
        if args.jobs:
            config.jobs = args.jobs
        if getattr(args, "gbar", None) is not None:
            config.gbar = args.gbar
        if getattr(args, "measure", None):
            config.measure = args.measure
        if getattr(args, "epsilon", None) is not None:
            config.epsilon = args.epsilon
        return args.handler(config)
    except PmuPlaceError as exc:
        error_doc = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(error_doc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
