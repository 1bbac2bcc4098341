from dataclasses import dataclass
from typing import Literal

import numpy as np
from loguru import logger

from src.bvp import (
    NewtonSettings,
    OrbitSegment,
    center_orbit,
    is_homoclinic,
    newton_solve,
)
from src.errors import HomoclinicError, NoIntersectionFound
from src.maps import FixedPointData, ParameterizedMap

ManifoldKind = Literal["stable", "unstable"]

SEED_SETTINGS = NewtonSettings(tolerance=1e-12, max_iterations=60, damping=0.5)
# points farther out than this are treated as escaped and stored as NaN
ESCAPE_RADIUS = 1e3
MAX_REFINEMENTS = 12
CROSSING_CHUNK = 1024


@dataclass(frozen=True, eq=False)
class ManifoldBranch:
    """levels[i] = f^{±i}(origin + params[i] · direction), params along the eigenvector."""

    kind: ManifoldKind
    sign: int
    origin: np.ndarray
    direction: np.ndarray
    params: list[np.ndarray]
    levels: list[np.ndarray]

    def domain(self, params: np.ndarray) -> np.ndarray:
        return self.origin + np.asarray(params, dtype=float)[:, None] * self.direction

    def arclength(self) -> float:
        return float(sum(_polyline_length(level) for level in self.levels))


def _polyline_length(points: np.ndarray) -> float:
    gaps = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return float(np.sum(gaps[np.isfinite(gaps)]))


def _advance(
    fmap: ParameterizedMap, points: np.ndarray, lam: float, kind: ManifoldKind
) -> np.ndarray:
    """One step forward (unstable) or backward (stable); escaped points become NaN."""
    out = np.full_like(points, np.nan, dtype=float)
    alive = np.all(np.isfinite(points), axis=1)
    if not alive.any():
        return out
    with np.errstate(all="ignore"):
        if kind == "unstable":
            out[alive] = fmap.evaluate(points[alive], lam)
        else:
            out[alive] = fmap.evaluate_inverse(points[alive], lam)
        escaped = ~np.all(np.isfinite(out), axis=1) | (
            np.max(np.abs(out), axis=1) > ESCAPE_RADIUS
        )
    out[escaped] = np.nan
    return out


def _iterate(
    fmap: ParameterizedMap, points: np.ndarray, lam: float, kind: ManifoldKind, steps: int
) -> np.ndarray:
    for _ in range(steps):
        points = _advance(fmap, points, lam, kind)
    return points


@dataclass(frozen=True, eq=False)
class ManifoldTrace:
    fmap: ParameterizedMap
    fixed_point: FixedPointData
    unstable: list[ManifoldBranch]
    stable: list[ManifoldBranch]

    def image(self, branch: ManifoldBranch, params: np.ndarray, level: int) -> np.ndarray:
        return _iterate(
            self.fmap, branch.domain(params), self.fixed_point.lam, branch.kind, level
        )

    def rows(self) -> list[tuple[str, int, int, int, float, float]]:
        """(kind, sign, level, index, x1, x2) rows for CSV export of planar maps."""
        out = []
        for branch in self.unstable + self.stable:
            for level, points in enumerate(branch.levels):
                for index, point in enumerate(points):
                    if not np.all(np.isfinite(point)):
                        continue
                    out.append(
                        (branch.kind, branch.sign, level, index, float(point[0]), float(point[1]))
                    )
        return out


def _grow_branch(
    fmap: ParameterizedMap,
    fp: FixedPointData,
    kind: ManifoldKind,
    sign: int,
    samples: int,
    delta: float,
    arclength_budget: float,
    max_levels: int,
    max_gap: float,
    max_points: int,
) -> ManifoldBranch:
    if kind == "unstable":
        index = int(np.flatnonzero(fp.unstable_mask)[0])
    else:
        index = int(np.flatnonzero(fp.stable_mask)[0])
    mu = fp.eigenvalues[index].real
    vector = fp.eigenvectors[:, index].real
    direction = sign * vector / np.linalg.norm(vector)
    # expansion factor of one step along this direction
    factor = abs(mu) if kind == "unstable" else 1.0 / abs(mu)
    # a negative multiplier flips sides, so a two-step domain covers the branch
    span = factor**2 if mu < 0 else factor
    s = delta * span ** np.linspace(0.0, 1.0, samples)
    branch = ManifoldBranch(
        kind=kind, sign=sign, origin=fp.location, direction=direction, params=[s], levels=[]
    )
    branch.levels.append(branch.domain(s))

    total = 0.0
    while len(branch.levels) <= max_levels:
        level = len(branch.levels)
        params = branch.params[-1]
        points = _advance(fmap, branch.levels[-1], fp.lam, kind)
        # refine in the domain parameter until consecutive images are max_gap apart
        for _ in range(MAX_REFINEMENTS):
            gaps = np.linalg.norm(np.diff(points, axis=0), axis=1)
            coarse = np.flatnonzero(np.nan_to_num(gaps, nan=0.0) > max_gap)
            if coarse.size == 0 or params.size + coarse.size > max_points:
                break
            middle = 0.5 * (params[coarse] + params[coarse + 1])
            images = _iterate(fmap, branch.domain(middle), fp.lam, kind, level)
            order = np.argsort(np.concatenate((params, middle)), kind="stable")
            params = np.concatenate((params, middle))[order]
            points = np.concatenate((points, images))[order]
        if not np.any(np.all(np.isfinite(points), axis=1)):
            break
        branch.params.append(params)
        branch.levels.append(points)
        total += _polyline_length(points)
        if total > arclength_budget:
            break
    logger.debug(
        f"[Manifold] {kind} branch sign {sign}: {len(branch.levels)} levels, "
        f"arclength {total:.2f}, {sum(p.size for p in branch.params)} points"
    )
    return branch


def trace_manifolds(
    fmap: ParameterizedMap,
    lam: float,
    samples: int = 400,
    delta: float = 1e-4,
    arclength_budget: float = 80.0,
    max_levels: int = 40,
    max_gap: float = 0.02,
    max_points: int = 20000,
) -> ManifoldTrace:
    """Grow one-dimensional stable and unstable manifolds of ξ(λ)."""
    fp = fmap.primary_fixed_point(lam)
    if len(fp.stable_eigenvalues) != 1 or len(fp.unstable_eigenvalues) != 1:
        raise NoIntersectionFound(
            "manifold shooting needs one-dimensional stable and unstable manifolds",
            eigenvalues=fp.eigenvalues,
        )
    branches: dict[ManifoldKind, list[ManifoldBranch]] = {"stable": [], "unstable": []}
    for kind in ("unstable", "stable"):
        mask = fp.unstable_mask if kind == "unstable" else fp.stable_mask
        mu = fp.eigenvalues[mask][0].real
        signs = (1,) if mu < 0 else (1, -1)
        for sign in signs:
            branches[kind].append(
                _grow_branch(
                    fmap,
                    fp,
                    kind,
                    sign,
                    samples,
                    delta,
                    arclength_budget,
                    max_levels,
                    max_gap,
                    max_points,
                )
            )
    return ManifoldTrace(
        fmap=fmap, fixed_point=fp, unstable=branches["unstable"], stable=branches["stable"]
    )


@dataclass(frozen=True)
class Crossing:
    unstable_branch: int
    unstable_level: int
    # domain parameters of the crossing on each manifold
    unstable_param: float
    stable_branch: int
    stable_level: int
    stable_param: float
    point: tuple[float, ...]

    @property
    def transit(self) -> int:
        return self.unstable_level + self.stable_level


def _finite_segments(points: np.ndarray) -> np.ndarray:
    finite = np.all(np.isfinite(points), axis=1)
    return np.flatnonzero(finite[:-1] & finite[1:])


def _segment_crossings(a: np.ndarray, b: np.ndarray) -> list[tuple[int, float, int, float]]:
    """All crossings of polyline a with polyline b as (i, t, j, s); NaN points break a polyline."""
    ia, jb = _finite_segments(a), _finite_segments(b)
    if ia.size == 0 or jb.size == 0:
        return []
    q, d = b[jb], b[jb + 1] - b[jb]
    lo_b, hi_b = np.minimum(b[jb], b[jb + 1]), np.maximum(b[jb], b[jb + 1])
    box_lo, box_hi = lo_b.min(axis=0), hi_b.max(axis=0)
    lo_a_all = np.minimum(a[ia], a[ia + 1])
    hi_a_all = np.maximum(a[ia], a[ia + 1])
    ia = ia[np.all((lo_a_all <= box_hi) & (box_lo <= hi_a_all), axis=1)]

    hits: list[tuple[int, float, int, float]] = []
    for start in range(0, ia.size, CROSSING_CHUNK):
        rows = ia[start : start + CROSSING_CHUNK]
        p, r = a[rows], a[rows + 1] - a[rows]
        lo_a, hi_a = np.minimum(a[rows], a[rows + 1]), np.maximum(a[rows], a[rows + 1])
        overlap = np.all(
            (lo_a[:, None, :] <= hi_b[None, :, :]) & (lo_b[None, :, :] <= hi_a[:, None, :]),
            axis=2,
        )
        ii, jj = np.nonzero(overlap)
        if ii.size == 0:
            continue
        r_, d_ = r[ii], d[jj]
        diff = q[jj] - p[ii]
        denom = r_[:, 0] * d_[:, 1] - r_[:, 1] * d_[:, 0]
        valid = np.abs(denom) > 1e-300
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (diff[:, 0] * d_[:, 1] - diff[:, 1] * d_[:, 0]) / denom
            s = (diff[:, 0] * r_[:, 1] - diff[:, 1] * r_[:, 0]) / denom
        hit = valid & (t >= 0) & (t < 1) & (s >= 0) & (s < 1)
        hits.extend(
            (int(rows[i]), float(tt), int(jb[j]), float(ss))
            for i, tt, j, ss in zip(ii[hit], t[hit], jj[hit], s[hit])
        )
    return sorted(hits)


def find_crossings(trace: ManifoldTrace, max_transit: int | None = None) -> list[Crossing]:
    """Intersections of stable and unstable polylines, shortest transit first."""
    crossings: list[Crossing] = []
    for ub, u_branch in enumerate(trace.unstable):
        for sb, s_branch in enumerate(trace.stable):
            # level 0 pieces only meet at ξ itself
            for ul in range(1, len(u_branch.levels)):
                for sl in range(1, len(s_branch.levels)):
                    if max_transit is not None and ul + sl > max_transit:
                        continue
                    u_level, s_level = u_branch.levels[ul], s_branch.levels[sl]
                    u_params, s_params = u_branch.params[ul], s_branch.params[sl]
                    for i, t, j, s in _segment_crossings(u_level, s_level):
                        point = u_level[i] + t * (u_level[i + 1] - u_level[i])
                        crossings.append(
                            Crossing(
                                ub,
                                ul,
                                float(u_params[i] + t * (u_params[i + 1] - u_params[i])),
                                sb,
                                sl,
                                float(s_params[j] + s * (s_params[j + 1] - s_params[j])),
                                tuple(point.tolist()),
                            )
                        )
    xi = trace.fixed_point.location
    crossings.sort(key=lambda c: (c.transit, -float(np.linalg.norm(np.array(c.point) - xi))))
    return crossings


def crossing_seed(
    trace: ManifoldTrace, crossing: Crossing, n_minus: int, n_plus: int
) -> OrbitSegment | None:
    """Pseudo-orbit through a crossing, padded with ξ; None if it does not fit J."""
    if crossing.transit > n_plus - n_minus:
        return None
    xi = trace.fixed_point.location
    lam = trace.fixed_point.lam
    points = np.tile(xi, (n_plus - n_minus + 1, 1)).astype(float)
    start = (n_plus - n_minus - crossing.transit) // 2
    center = start + crossing.unstable_level

    u_branch = trace.unstable[crossing.unstable_branch]
    p = u_branch.domain(np.array([crossing.unstable_param]))
    for m in range(crossing.unstable_level + 1):
        points[start + m] = p[0]
        p = _advance(trace.fmap, p, lam, "unstable")
    s_branch = trace.stable[crossing.stable_branch]
    q = s_branch.domain(np.array([crossing.stable_param]))
    for m in range(crossing.stable_level):
        points[center + crossing.stable_level - m] = q[0]
        q = _advance(trace.fmap, q, lam, "stable")
    if not np.all(np.isfinite(points)):
        return None
    return OrbitSegment(n_minus=n_minus, n_plus=n_plus, points=points, lam=lam)


def seed_homoclinics(
    fmap: ParameterizedMap,
    lam: float,
    n_minus: int,
    n_plus: int,
    count: int = 1,
    settings: NewtonSettings | None = None,
    arclength_budget: float = 80.0,
    max_attempts: int = 80,
) -> list[OrbitSegment]:
    """Distinct homoclinic orbits from manifold crossings, Newton refined and centered."""
    settings = settings or SEED_SETTINGS
    trace = trace_manifolds(fmap, lam, arclength_budget=arclength_budget)
    crossings = find_crossings(trace, max_transit=n_plus - n_minus)
    logger.info(f"[Manifold] {len(crossings)} manifold crossings at lambda={lam}")

    found: list[OrbitSegment] = []
    attempts = 0
    for crossing in crossings:
        if len(found) >= count or attempts >= max_attempts:
            break
        seed = crossing_seed(trace, crossing, n_minus, n_plus)
        if seed is None:
            continue
        attempts += 1
        try:
            orbit = center_orbit(fmap, newton_solve(fmap, seed, settings=settings), settings)
        except HomoclinicError as e:
            logger.trace(f"[Manifold] Crossing seed rejected: {e}")
            continue
        if not is_homoclinic(fmap, orbit):
            logger.trace("[Manifold] Converged to a non-homoclinic segment, skipping")
            continue
        if any(np.max(np.abs(orbit.points - other.points)) <= 1e-6 for other in found):
            continue
        logger.debug(
            f"[Manifold] Orbit {len(found)} from crossing with transit {crossing.transit}"
        )
        found.append(orbit)

    if not found:
        raise NoIntersectionFound(
            f"no homoclinic orbit found from manifold crossings at lambda={lam}",
            lam=lam,
            crossings=len(crossings),
            attempts=attempts,
        )
    return found


def seed_homoclinic(
    fmap: ParameterizedMap,
    lam: float,
    n_minus: int,
    n_plus: int,
    settings: NewtonSettings | None = None,
    arclength_budget: float = 80.0,
) -> OrbitSegment:
    return seed_homoclinics(
        fmap, lam, n_minus, n_plus, count=1, settings=settings, arclength_budget=arclength_budget
    )[0]
