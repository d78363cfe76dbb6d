"""Cardinality-constrained PMU placement search over per-generator gramians.

The search assembles candidate gramians as sums of the g per-generator
parts, so one case needs a single simulation campaign no matter how many
placements are scored.  Three self-contained solvers are provided:
exhaustive enumeration (exact, capped), greedy forward selection, and
best-improving 1-swap local search.  The adaptive rule picks among the
determinant, condition-number and smallest-eigenvalue optima based on how
weak the best achievable determinant is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import CombinatoricsTooLarge, LengthMismatch
from .gramian import Gramian, assemble_gramian
from .measures import (
    MeasureKind,
    MeasureValue,
    all_measures,
    condition_number,
    evaluate,
    min_eigenvalue,
)
from .model import PlacementMask

EXHAUSTIVE_CAP = 2_000_000
DEFAULT_EPSILON = 1.0


@dataclass(frozen=True)
class PlacementResult:
    mask: PlacementMask
    measure_used: MeasureKind
    objective: MeasureValue
    all_measures: dict
    solver: str
    evaluations: int

    def to_dict(self) -> dict:
        return {
            "z": list(self.mask.indices),
            "gbar": self.mask.count,
            "measure_used": self.measure_used.value,
            "objective": self.objective.value,
            "measures": {k.value: v.value for k, v in self.all_measures.items()},
            "singular": self.all_measures[MeasureKind.LOG_DET].singular,
            "solver": self.solver,
            "evaluations": self.evaluations,
        }


@dataclass(frozen=True)
class AdaptiveDecision:
    branch: str                 # "det" | "neg_cond" | "min_eig"
    logdet_at_det_opt: float
    r_neg_kappa: float
    r_sigma_min: float
    epsilon: float

    def to_dict(self) -> dict:
        return {
            "branch": self.branch,
            "logdet_at_det_opt": self.logdet_at_det_opt,
            "r_neg_kappa": self.r_neg_kappa,
            "r_sigma_min": self.r_sigma_min,
            "epsilon": self.epsilon,
        }


def _parts_array(parts: list[Gramian]) -> np.ndarray:
    return np.stack([p.matrix for p in parts])


def _score(stack: np.ndarray, indices, kind: MeasureKind) -> float:
    """Comparable objective of one candidate; -inf encodes singular logdet."""
    w = stack[list(indices)].sum(axis=0)
    return evaluate(kind, 0.5 * (w + w.T)).value


def _finish(parts, indices, kind, solver, evaluations) -> PlacementResult:
    mask = PlacementMask.from_indices(len(parts), indices)
    w = assemble_gramian(mask, parts)
    measures = all_measures(w)
    return PlacementResult(mask=mask, measure_used=kind,
                           objective=measures[kind], all_measures=measures,
                           solver=solver, evaluations=evaluations)


def exhaustive_search(parts: list[Gramian], kind: MeasureKind, gbar: int,
                      cap: int = EXHAUSTIVE_CAP) -> PlacementResult:
    """Global optimum over all g-choose-gbar placements.

    Candidates are visited in lexicographic order of their sorted index
    tuples and ties keep the earlier candidate, so the result is the
    lexicographically smallest optimal placement.
    """
    g = len(parts)
    if not 0 <= gbar <= g:
        raise LengthMismatch(f"gbar={gbar} outside 0..{g}")
    total = math.comb(g, gbar)
    if total > cap:
        raise CombinatoricsTooLarge(
            f"{total} candidates exceed the cap of {cap}")
    stack = _parts_array(parts)
    best_idx = None
    best_val = -math.inf
    evaluations = 0
    for idx in combinations(range(g), gbar):
        val = _score(stack, idx, kind)
        evaluations += 1
        if best_idx is None or val > best_val:
            best_idx, best_val = idx, val
    return _finish(parts, best_idx, kind, "exhaustive", evaluations)


def greedy_search(parts: list[Gramian], kind: MeasureKind,
                  gbar: int) -> PlacementResult:
    """Forward selection: gbar rounds of the best marginal addition.

    Exact for the trace (it is modular over the parts); a heuristic for the
    spectral measures.  Ties go to the lowest machine index.
    """
    g = len(parts)
    if not 0 <= gbar <= g:
        raise LengthMismatch(f"gbar={gbar} outside 0..{g}")
    stack = _parts_array(parts)
    chosen: list[int] = []
    evaluations = 0
    for _ in range(gbar):
        best_j = None
        best_val = -math.inf
        for j in range(g):
            if j in chosen:
                continue
            val = _score(stack, chosen + [j], kind)
            evaluations += 1
            if best_j is None or val > best_val:
                best_j, best_val = j, val
        chosen.append(best_j)
    return _finish(parts, sorted(chosen), kind, "greedy", evaluations)


def local_swap_search(parts: list[Gramian], kind: MeasureKind, gbar: int,
                      start: PlacementMask,
                      max_rounds: int = 100) -> PlacementResult:
    """Best-improving 1-swap descent from a feasible start.

    Each round scores every (drop selected, add unselected) pair and applies
    the best strictly improving swap; stops at a 1-swap local optimum or
    after ``max_rounds``.  Deterministic given the start.
    """
    g = len(parts)
    if start.count != gbar or len(start) != g:
        raise LengthMismatch("start placement is not feasible for gbar")
    stack = _parts_array(parts)
    current = sorted(start.indices)
    current_val = _score(stack, current, kind)
    evaluations = 1
    for _ in range(max_rounds):
        best_pair = None
        best_val = current_val
        selected = set(current)
        for drop in current:
            for add in range(g):
                if add in selected:
                    continue
                idx = sorted(set(current) - {drop} | {add})
                val = _score(stack, idx, kind)
                evaluations += 1
                if val > best_val:
                    best_pair, best_val = (drop, add), val
        if best_pair is None:
            break
        drop, add = best_pair
        current = sorted(set(current) - {drop} | {add})
        current_val = best_val
    return _finish(parts, current, kind, "local_swap", evaluations)


def optimize(parts: list[Gramian], kind: MeasureKind, gbar: int,
             solver: str = "auto", cap: int = EXHAUSTIVE_CAP,
             max_rounds: int = 100) -> PlacementResult:
    """Dispatch to a solver; 'auto' is exhaustive when the count fits the
    cap and greedy polished by local swaps otherwise."""
    if solver == "exhaustive":
        return exhaustive_search(parts, kind, gbar, cap=cap)
    if solver == "greedy":
        return greedy_search(parts, kind, gbar)
    if solver in ("local_swap", "auto+polish", "auto"):
        if solver == "auto" and math.comb(len(parts), gbar) <= cap:
            return exhaustive_search(parts, kind, gbar, cap=cap)
        seed_result = greedy_search(parts, kind, gbar)
        polished = local_swap_search(parts, kind, gbar, seed_result.mask,
                                     max_rounds=max_rounds)
        label = "greedy+local_swap"
        return PlacementResult(
            mask=polished.mask, measure_used=kind,
            objective=polished.objective, all_measures=polished.all_measures,
            solver=label,
            evaluations=seed_result.evaluations + polished.evaluations)
    raise ValueError(f"unknown solver {solver!r}")


def adaptive_placement(parts: list[Gramian], gbar: int,
                       epsilon: float = DEFAULT_EPSILON,
                       solver: str = "auto",
                       cap: int = EXHAUSTIVE_CAP):
    """Measure-adaptive placement.

    Optimizes the determinant, condition-number and smallest-eigenvalue
    objectives independently.  If the best determinant reaches epsilon
    (checked in log space, inclusive) it wins; otherwise the improvement
    ratios decide between the condition-number and smallest-eigenvalue
    optima.  Singular gramians use sentinel semantics: kappa = inf and
    sigma_min = 0, with inf/inf ratios collapsing to 1 (no improvement).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    z_det = optimize(parts, MeasureKind.LOG_DET, gbar, solver=solver, cap=cap)
    z_cond = optimize(parts, MeasureKind.NEG_COND, gbar, solver=solver, cap=cap)
    z_mineig = optimize(parts, MeasureKind.MIN_EIG, gbar, solver=solver, cap=cap)

    logdet_det = z_det.all_measures[MeasureKind.LOG_DET].value
    w_det = assemble_gramian(z_det.mask, parts)
    w_cond = assemble_gramian(z_cond.mask, parts)

    kappa_det = condition_number(w_det)
    kappa_cond = condition_number(w_cond)
    if math.isinf(kappa_det) and math.isinf(kappa_cond):
        r_neg_kappa = 1.0
    elif math.isinf(kappa_cond):
        r_neg_kappa = 0.0
    elif math.isinf(kappa_det):
        r_neg_kappa = math.inf
    else:
        r_neg_kappa = kappa_det / kappa_cond

    sigma_det = min_eigenvalue(w_det).value
    sigma_best = z_mineig.all_measures[MeasureKind.MIN_EIG].value
    if sigma_det <= 0.0:
        r_sigma_min = 1.0 if sigma_best <= 0.0 else math.inf
    else:
        r_sigma_min = sigma_best / sigma_det

    if logdet_det >= math.log(epsilon):
        branch, winner = "det", z_det
    elif r_neg_kappa >= r_sigma_min:
        branch, winner = "neg_cond", z_cond
    else:
        branch, winner = "min_eig", z_mineig

    decision = AdaptiveDecision(
        branch=branch, logdet_at_det_opt=logdet_det,
        r_neg_kappa=r_neg_kappa, r_sigma_min=r_sigma_min, epsilon=epsilon)
    return winner, decision


def random_placement(g: int, gbar: int, seed) -> PlacementMask:
    """Uniform random placement of gbar PMUs; reproducible from the seed."""
    if not 0 <= gbar <= g:
        raise LengthMismatch(f"gbar={gbar} outside 0..{g}")
    rng = np.random.default_rng(seed)
    indices = rng.choice(g, size=gbar, replace=False)
    return PlacementMask.from_indices(g, sorted(int(i) for i in indices))
