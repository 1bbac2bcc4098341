from collections import Counter
from dataclasses import dataclass, field
from itertools import product
from typing import Literal, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, RootModel

from src.bvp import (
    NewtonSettings,
    OrbitSegment,
    dynamics_residual,
    extend_interval,
    newton_solve,
    shift_points,
)
from src.continuation import (
    Branch,
    ContinuationSettings,
    FoldEvent,
    HomoclinicProblem,
    start_point,
    trace_branch,
)
from src.errors import AmbiguousMatch, GapTooSmall, HomoclinicError, OpenBranch
from src.functions import future_thread_executor
from src.maps import ParameterizedMap

PseudoMode = Literal["concat", "additive"]
EdgeLabel = Literal["L", "R"]

MIN_GAP = 10
ALIGNMENT_SHIFTS = 2
MATCH_MARGIN = 0.5


@dataclass(frozen=True)
class SymbolSequence:
    symbols: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.symbols:
            raise ValueError("symbol sequence must not be empty")
        if any(s not in (0, 1, 2, 3) for s in self.symbols):
            raise ValueError(f"symbols must lie in 0..3, got {self.symbols}")

    @classmethod
    def parse(cls, text: str) -> "SymbolSequence":
        return cls(tuple(int(c) for c in text))

    @property
    def n(self) -> int:
        return len(self.symbols)

    def rotate(self, steps: int = 1) -> "SymbolSequence":
        steps %= self.n
        return SymbolSequence(self.symbols[steps:] + self.symbols[:steps])

    def __str__(self) -> str:
        return "".join(str(s) for s in self.symbols)


def gap_study_sequence(n: int) -> SymbolSequence:
    """Word 0, 1, 2, 3, 0, ... of length n, so neighbouring humps always differ."""
    return SymbolSequence(tuple(i % 4 for i in range(n)))


def all_sequences(n: int) -> list[SymbolSequence]:
    return [SymbolSequence(s) for s in product(range(4), repeat=n)]


@dataclass(frozen=True, eq=False)
class PseudoOrbit:
    sequence: SymbolSequence
    segment: OrbitSegment
    mode: PseudoMode
    gap: int
    offsets: tuple[int, ...]


def build_pseudo_orbit(
    fmap: ParameterizedMap,
    primaries: dict[int, OrbitSegment],
    sequence: SymbolSequence,
    mode: PseudoMode = "concat",
    gap: int | None = None,
    offset: int = 0,
) -> PseudoOrbit:
    """n-humped pseudo-orbit from primary orbits sharing one interval J.

    concat splices the primary segments end to end, so consecutive humps sit
    |J| indices apart. additive superposes displacements from ξ, hump i at
    index offset + i·gap, on the same index range.
    """
    reference = primaries[sequence.symbols[0]]
    n_minus, m = reference.n_minus, reference.length
    gap = m if gap is None else gap
    if gap < MIN_GAP:
        raise GapTooSmall(f"hump gap {gap} below {MIN_GAP}", gap=gap, minimum=MIN_GAP)
    lam = reference.lam
    xi = fmap.primary_fixed_point(lam).location
    total = n_minus + (sequence.n - 1) * gap + m
    offsets = tuple(offset + i * gap for i in range(sequence.n))

    if mode == "concat":
        if gap != m or offset != 0:
            raise ValueError("concat pseudo-orbits use gap |J| and no offset")
        points = np.concatenate([primaries[s].points for s in sequence.symbols])
    else:
        indices = np.arange(n_minus, total)
        points = np.tile(xi, (indices.size, 1)).astype(float)
        for symbol, ell in zip(sequence.symbols, offsets):
            primary = primaries[symbol]
            local = indices - ell
            inside = (local >= primary.n_minus) & (local <= primary.n_plus)
            points[inside] += primary.points[local[inside] - primary.n_minus] - xi

    segment = OrbitSegment(
        n_minus=n_minus, n_plus=total - 1, points=points, lam=lam, bc=reference.bc
    )
    return PseudoOrbit(sequence=sequence, segment=segment, mode=mode, gap=gap, offsets=offsets)


@dataclass(frozen=True, eq=False)
class ShadowResult:
    sequence: SymbolSequence
    orbit: OrbitSegment
    pseudo_residual: float
    distance: float


def shadow_orbit(
    fmap: ParameterizedMap, pseudo: PseudoOrbit, settings: NewtonSettings | None = None
) -> ShadowResult:
    residual = float(np.max(dynamics_residual(fmap, pseudo.segment)))
    try:
        orbit = newton_solve(fmap, pseudo.segment, settings=settings)
    except HomoclinicError as e:
        e.diagnostics.update(symbol=str(pseudo.sequence), pseudo_residual=residual)
        raise
    distance = float(np.max(np.abs(orbit.points - pseudo.segment.points)))
    logger.debug(
        f"[Catalog] {pseudo.sequence}: pseudo residual {residual:.2e}, shadow distance {distance:.2e}"
    )
    return ShadowResult(
        sequence=pseudo.sequence, orbit=orbit, pseudo_residual=residual, distance=distance
    )


@dataclass(eq=False)
class OrbitCatalog:
    n: int
    lam: float
    entries: dict[str, OrbitSegment] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return len(self.entries) == 4**self.n

    def min_separation(self) -> float:
        keys = sorted(self.entries)
        best = float("inf")
        for i, a in enumerate(keys):
            for b in keys[i + 1 :]:
                gap = np.max(np.abs(self.entries[a].points - self.entries[b].points))
                best = min(best, float(gap))
        return best


def _shadow_symbol(
    fmap: ParameterizedMap,
    primaries: dict[int, OrbitSegment],
    sequence: SymbolSequence,
    mode: PseudoMode,
    settings: NewtonSettings | None,
) -> tuple[str, OrbitSegment | None, str]:
    try:
        pseudo = build_pseudo_orbit(fmap, primaries, sequence, mode=mode)
        return str(sequence), shadow_orbit(fmap, pseudo, settings).orbit, ""
    except HomoclinicError as e:
        return str(sequence), None, f"{type(e).__name__}: {e.message}"


def enumerate_catalog(
    fmap: ParameterizedMap,
    primaries: dict[int, OrbitSegment],
    n: int,
    mode: PseudoMode = "concat",
    settings: NewtonSettings | None = None,
    threads: int | None = None,
) -> OrbitCatalog:
    """Shadow all 4^n symbol sequences; failures are collected, not raised."""
    lam = primaries[0].lam
    args = [
        (_shadow_symbol, fmap, primaries, sequence, mode, settings)
        for sequence in all_sequences(n)
    ]
    catalog = OrbitCatalog(n=n, lam=lam)
    for key, orbit, failure in future_thread_executor(args, threads):
        if orbit is None:
            logger.warning(f"[Catalog] {key} failed to shadow: {failure}")
            catalog.failures[key] = failure
        else:
            catalog.entries[key] = orbit
    logger.info(
        f"[Catalog] n={n}: {len(catalog.entries)} of {4**n} orbits shadowed at λ̃={lam}"
    )
    return catalog


def _aligned(points: np.ndarray, n_minus: int, target: OrbitSegment, xi: np.ndarray) -> np.ndarray:
    if points.shape[0] == target.length and n_minus == target.n_minus:
        return points
    out = np.tile(xi, (target.length, 1)).astype(float)
    for i, n in enumerate(range(n_minus, n_minus + points.shape[0])):
        if target.n_minus <= n <= target.n_plus:
            out[n - target.n_minus] = points[i]
    return out


def identify_symbol(
    fmap: ParameterizedMap, orbit: OrbitSegment, catalog: OrbitCatalog
) -> tuple[str, float]:
    """Nearest catalog entry in sup norm over index shifts −2..2."""
    xi = fmap.primary_fixed_point(orbit.lam).location
    distances: list[tuple[float, str]] = []
    for key, entry in catalog.entries.items():
        base = _aligned(orbit.points, orbit.n_minus, entry, xi)
        best = min(
            float(np.max(np.abs(shift_points(base, shift, xi) - entry.points)))
            for shift in range(-ALIGNMENT_SHIFTS, ALIGNMENT_SHIFTS + 1)
        )
        distances.append((best, key))
    distances.sort()
    best_distance, key = distances[0]
    runner_up = distances[1][0] if len(distances) > 1 else float("inf")
    if best_distance > MATCH_MARGIN * runner_up:
        raise AmbiguousMatch(
            f"[Catalog] no clear match: {key} at {best_distance:.3e}, runner-up {runner_up:.3e}",
            best=key,
            distance=best_distance,
            runner_up=runner_up,
        )
    return key, best_distance


def _events(branch: Branch) -> list[tuple[float, str, int]]:
    """Crossings ('C') and folds ('F') merged by arclength, start crossing first."""
    events = [(c.s, "C", i) for i, c in enumerate(branch.crossings)]
    events += [(f.s, "F", i) for i, f in enumerate(branch.folds)]
    return sorted(events)


def label_primary_orbits(branch: Branch) -> list[int]:
    """Symbol of each λ̃-crossing of the closed one-hump branch, by crossing index.

    Crossings are numbered in continuation order so that the folds between
    them read r_{0,1}, ℓ_{1,2}, r_{2,3}, ℓ_{3,0} with λ(r_{2,3}) > λ(r_{0,1})
    and λ(ℓ_{1,2}) > λ(ℓ_{3,0}); exactly one numbering satisfies all of it.
    """
    events = _events(branch)
    pattern = [kind for _, kind, _ in events]
    if len(branch.crossings) != 4 or len(branch.folds) != 4 or pattern != ["C", "F"] * 4:
        raise AmbiguousMatch(
            "[Catalog] one-hump branch must alternate 4 crossings with 4 folds",
            crossings=len(branch.crossings),
            folds=len(branch.folds),
            pattern="".join(pattern),
        )
    ring = [index for _, _, index in events]
    for direction in (1, -1):
        for start in range(0, 8, 2):
            walk = [ring[(start + direction * j) % 8] for j in range(8)]
            crossings, folds = walk[0::2], walk[1::2]
            f: list[FoldEvent] = [branch.folds[i] for i in folds]
            if [x.side for x in f] != ["R", "L", "R", "L"]:
                continue
            if f[2].lam > f[0].lam and f[1].lam > f[3].lam:
                labels = [0] * 4
                for symbol, crossing in enumerate(crossings):
                    labels[crossing] = symbol
                logger.info(f"[Catalog] primary labels by crossing index: {labels}")
                return labels
    raise AmbiguousMatch(
        "[Catalog] fold sides and orderings admit no labeling",
        sides=[x.side for x in branch.folds],
        lambdas=[x.lam for x in branch.folds],
    )


class EmpiricalCycle(BaseModel):
    vertices: list[str]
    labels: list[EdgeLabel]
    branch_id: int
    arclength: float

    @property
    def length(self) -> int:
        return len(self.vertices)


class CycleTable(RootModel[list[EmpiricalCycle]]):
    """Empirical cycles of one multi-hump run, in tracing order."""


def _edge_label(branch: Branch, s_from: float, s_to: float, lambda_tilde: float) -> EdgeLabel:
    """Side of the fold passed between two λ̃-crossings.

    λ − λ̃ keeps its sign on the arc, so the fold farthest from λ̃ is a
    maximum (R) above λ̃ or a minimum (L) below it.
    """
    folds = [f for f in branch.folds if s_from < f.s < s_to]
    if folds:
        return max(folds, key=lambda f: abs(f.lam - lambda_tilde)).side
    # no fold located on this arc: fall back to the extreme traced point
    inside = [p.lam for p in branch.points if s_from < p.s < s_to]
    if not inside:
        raise OpenBranch(
            "no fold or branch point between consecutive crossings",
            s_from=s_from,
            s_to=s_to,
        )
    extreme = max(inside, key=lambda lam: abs(lam - lambda_tilde))
    logger.warning(f"[Catalog] no fold located on arc ({s_from:.4f}, {s_to:.4f})")
    return "R" if extreme > lambda_tilde else "L"


def branch_cycle(
    fmap: ParameterizedMap,
    problem: HomoclinicProblem,
    branch: Branch,
    catalog: OrbitCatalog,
    branch_id: int,
) -> EmpiricalCycle:
    crossings = sorted(branch.crossings, key=lambda c: c.s)
    vertices = [identify_symbol(fmap, problem.to_orbit(c.z), catalog)[0] for c in crossings]
    ends = [c.s for c in crossings] + [branch.arclength]
    labels = [
        _edge_label(branch, ends[i], ends[i + 1], catalog.lam) for i in range(len(crossings))
    ]
    return EmpiricalCycle(
        vertices=vertices, labels=labels, branch_id=branch_id, arclength=branch.arclength
    )


@dataclass(eq=False)
class ComponentTrace:
    cycles: list[EmpiricalCycle] = field(default_factory=list)
    open_branches: list[str] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)

    def table(self, n: int) -> list[tuple[int, int, int]]:
        counts = Counter(cycle.length for cycle in self.cycles)
        return [(n, length, counts[length]) for length in sorted(counts)]


def trace_all_components(
    fmap: ParameterizedMap,
    catalog: OrbitCatalog,
    settings: ContinuationSettings | None = None,
) -> ComponentTrace:
    """Continue from each unvisited catalog orbit and collect closed components as cycles.

    Seeds are taken in lexicographic order and the visited set is shared, so
    every symbol ends up on exactly one component.
    """
    settings = settings or ContinuationSettings()
    result = ComponentTrace()
    visited: set[str] = set()
    for branch_id, key in enumerate(sorted(catalog.entries)):
        if key in visited:
            continue
        orbit = catalog.entries[key]
        problem = HomoclinicProblem(fmap, orbit.n_minus, orbit.n_plus, orbit.bc)
        logger.info(f"[Catalog] Tracing component through {key}")
        try:
            start = start_point(problem, HomoclinicProblem.state(orbit))
            branch = trace_branch(problem, start, settings, lambda_tilde=catalog.lam)
            if not branch.closed:
                raise OpenBranch(
                    f"[Catalog] branch through {key} did not close ({branch.stop_reason})",
                    symbol=key,
                    arclength=branch.arclength,
                )
            cycle = branch_cycle(fmap, problem, branch, catalog, branch_id)
        except HomoclinicError as e:
            logger.warning(f"[Catalog] component through {key} excluded: {e.message}")
            result.failures[key] = f"{type(e).__name__}: {e.message}"
            if isinstance(e, OpenBranch):
                result.open_branches.append(key)
            visited.add(key)
            continue
        seen = visited.intersection(cycle.vertices)
        if seen:
            logger.warning(f"[Catalog] component through {key} revisits {sorted(seen)}, skipped")
            visited.add(key)
            continue
        visited.update(cycle.vertices)
        logger.info(
            f"[Catalog] cycle {'-'.join(cycle.vertices)} length {cycle.length} "
            f"labels {''.join(cycle.labels)}"
        )
        result.cycles.append(cycle)
    return result


class GapRow(BaseModel):
    gap: int
    n_minus: int
    n_plus: int
    pseudo_residual: float
    shadow_distance: float


def gap_study(
    fmap: ParameterizedMap,
    primaries: dict[int, OrbitSegment],
    sequence: SymbolSequence,
    intervals: Sequence[tuple[int, int]],
    settings: NewtonSettings | None = None,
) -> list[GapRow]:
    """Pseudo-orbit residual and shadowing distance for one sequence at several hump gaps."""
    rows: list[GapRow] = []
    for n_minus, n_plus in intervals:
        extended = {
            symbol: extend_interval(fmap, orbit, n_minus, n_plus, settings)
            for symbol, orbit in primaries.items()
        }
        pseudo = build_pseudo_orbit(fmap, extended, sequence)
        shadow = shadow_orbit(fmap, pseudo, settings)
        rows.append(
            GapRow(
                gap=pseudo.gap,
                n_minus=n_minus,
                n_plus=n_plus,
                pseudo_residual=shadow.pseudo_residual,
                shadow_distance=shadow.distance,
            )
        )
        logger.info(
            f"[Catalog] gap {pseudo.gap}: residual {shadow.pseudo_residual:.3e}, "
            f"distance {shadow.distance:.3e}"
        )
    return rows
