import sys
import os

# getting the name of the directory
# where the this file is present.
current = os.path.dirname(os.path.realpath(__file__))

# Getting the parent directory name
# where the current directory is present.
parent = os.path.dirname(current)

# adding the parent directory to
# the sys.path.
sys.path.append(parent)

import numpy as np
import pytest

from src.bvp import is_homoclinic
from src.errors import HomoclinicError, NoIntersectionFound
from src.manifolds import (
    _segment_crossings,
    crossing_seed,
    find_crossings,
    seed_homoclinics,
    trace_manifolds,
)
from src.maps import HenonMap

henon = HenonMap(1.4)
LAM = 0.35


def test_segment_crossings_of_two_lines():
    a = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    b = np.array([[0.0, 2.0], [2.0, 0.0]])
    hits = _segment_crossings(a, b)
    assert len(hits) == 1
    i, t, j, s = hits[0]
    point = a[i] + t * (a[i + 1] - a[i])
    assert np.allclose(point, [1.0, 1.0])
    assert j == 0 and s == pytest.approx(0.5)


def test_parallel_segments_do_not_cross():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 1.0], [1.0, 1.0]])
    assert _segment_crossings(a, b) == []


def _nan_close(a, b):
    return np.allclose(a, b, equal_nan=True)


def test_manifold_levels_are_images():
    trace = trace_manifolds(henon, LAM, samples=200, max_levels=6)
    # μ_u < 0 and μ_s > 0: one unstable branch, two stable branches
    assert len(trace.unstable) == 1
    assert len(trace.stable) == 2
    for branch in trace.unstable + trace.stable:
        assert len(branch.levels) == len(branch.params)
        for level, (params, points) in enumerate(zip(branch.params, branch.levels)):
            assert np.all(np.diff(params) > 0)
            assert _nan_close(trace.image(branch, params, level), points)
        for level in range(1, len(branch.levels)):
            # refined points of a level map onto the next level's points
            step = trace.image(branch, branch.params[level], level - 1)
            points = branch.levels[level]
            kept = np.all(np.isfinite(points), axis=1)
            if branch.kind == "unstable":
                assert np.allclose(henon.evaluate(step[kept], LAM), points[kept])
            else:
                assert np.allclose(henon.evaluate(points[kept], LAM), step[kept])
    finite = sum(
        int(np.all(np.isfinite(level), axis=1).sum())
        for branch in trace.unstable + trace.stable
        for level in branch.levels
    )
    assert len(trace.rows()) == finite


def test_levels_refined_to_max_gap():
    trace = trace_manifolds(henon, LAM, samples=50, max_levels=8, max_gap=0.05)
    for branch in trace.unstable + trace.stable:
        for params, points in zip(branch.params[1:], branch.levels[1:]):
            if params.size >= 20000:
                continue
            gaps = np.linalg.norm(np.diff(points, axis=0), axis=1)
            assert np.all(gaps[np.isfinite(gaps)] <= 0.05 + 1e-12)


def test_escaped_points_are_dropped_not_fatal():
    a = np.array([[0.0, 0.0], [1.0, 1.0], [np.nan, np.nan], [2.0, 2.0], [3.0, 3.0]])
    b = np.array([[0.0, 1.0], [1.0, 0.0], [2.0, 3.0], [3.0, 2.0]])
    hits = _segment_crossings(a, b)
    # the segments touching the NaN point are skipped, the others still cross
    assert [(i, j) for i, _, j, _ in hits] == [(0, 0), (3, 2)]


def test_crossings_sorted_by_transit():
    trace = trace_manifolds(henon, LAM)
    crossings = find_crossings(trace)
    assert crossings
    transits = [c.transit for c in crossings]
    assert transits == sorted(transits)
    seed = crossing_seed(trace, crossings[0], -20, 21)
    assert seed is not None and seed.length == 42
    center = (41 - crossings[0].transit) // 2 + crossings[0].unstable_level
    # the seed passes through the crossing within the polyline resolution
    assert np.linalg.norm(seed.points[center] - np.array(crossings[0].point)) < 0.1
    assert np.allclose(seed.points[0], trace.fixed_point.location, atol=1e-2)
    assert np.allclose(seed.points[-1], trace.fixed_point.location, atol=1e-2)


def test_transit_cap_filters_long_crossings():
    trace = trace_manifolds(henon, LAM)
    capped = find_crossings(trace, max_transit=12)
    assert all(c.transit <= 12 for c in capped)
    assert len(capped) <= len(find_crossings(trace))


@pytest.mark.slow
def test_four_distinct_primary_orbits():
    orbits = seed_homoclinics(henon, LAM, -20, 21, count=4)
    assert len(orbits) == 4
    for orbit in orbits:
        assert is_homoclinic(henon, orbit)
    for i, a in enumerate(orbits):
        for b in orbits[i + 1 :]:
            assert np.max(np.abs(a.points - b.points)) >= 1e-3


def test_attracting_fixed_point_has_no_manifold_crossing():
    # for small a the primary fixed point is a sink: no unstable manifold to shoot along
    with pytest.raises(NoIntersectionFound):
        trace_manifolds(HenonMap(0.2), LAM)
    with pytest.raises(HomoclinicError):
        seed_homoclinics(HenonMap(0.2), LAM, -20, 21)
