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

from dataclasses import replace

import numpy as np
import pytest

from src.bvp import OrbitSegment, shift_points
from src.config import RunConfig
from src.continuation import Branch, BranchCrossing, BranchPoint, FoldEvent
from src.errors import AmbiguousMatch, GapTooSmall, OpenBranch
from src.graph import CyclePartition, LRCycle, build_graph, enumerate_partitions, is_partition_of
from src.main import PrimaryRun, check_fold_order, trace_primary
from src.maps import HenonMap
from src.multihump import (
    ComponentTrace,
    EmpiricalCycle,
    OrbitCatalog,
    SymbolSequence,
    _edge_label,
    all_sequences,
    build_pseudo_orbit,
    enumerate_catalog,
    gap_study,
    gap_study_sequence,
    identify_symbol,
    label_primary_orbits,
    shadow_orbit,
    trace_all_components,
)

henon = HenonMap(1.4)
LAM = 0.35
XI = henon.primary_fixed_point(LAM).location


def bump(height: float, n_minus: int = -10, n_plus: int = 11) -> OrbitSegment:
    indices = np.arange(n_minus, n_plus + 1)
    profile = height * np.exp(-0.5 * indices.astype(float) ** 2)
    points = XI + np.column_stack((profile, -0.5 * profile))
    return OrbitSegment(n_minus=n_minus, n_plus=n_plus, points=points, lam=LAM)


synthetic = {0: bump(1.0), 1: bump(-1.0), 2: bump(2.0), 3: bump(-2.0)}


def test_symbol_sequence():
    s = SymbolSequence.parse("0312")
    assert s.n == 4
    assert str(s) == "0312"
    assert str(s.rotate()) == "3120"
    assert str(s.rotate(4)) == "0312"
    with pytest.raises(ValueError):
        SymbolSequence.parse("0412")
    with pytest.raises(ValueError):
        SymbolSequence(())


def test_all_sequences():
    sequences = all_sequences(2)
    assert len(sequences) == 16
    assert str(sequences[0]) == "00" and str(sequences[-1]) == "33"


def test_concat_pseudo_orbit():
    pseudo = build_pseudo_orbit(henon, synthetic, SymbolSequence.parse("21"))
    m = synthetic[0].length
    assert pseudo.gap == m
    assert pseudo.segment.length == 2 * m
    assert pseudo.segment.n_minus == -10
    assert np.array_equal(pseudo.segment.points[:m], synthetic[2].points)
    assert np.array_equal(pseudo.segment.points[m:], synthetic[1].points)
    with pytest.raises(ValueError):
        build_pseudo_orbit(henon, synthetic, SymbolSequence.parse("21"), gap=m + 1)


def test_gap_too_small():
    with pytest.raises(GapTooSmall):
        build_pseudo_orbit(henon, synthetic, SymbolSequence.parse("01"), mode="additive", gap=5)


def test_additive_pseudo_orbit_shift_equivariance():
    sequence = SymbolSequence.parse("302")
    base = build_pseudo_orbit(henon, synthetic, sequence, mode="additive", gap=15)
    shifted = build_pseudo_orbit(henon, synthetic, sequence, mode="additive", gap=15, offset=1)
    assert shifted.offsets == (1, 16, 31)
    # p'_n = p_{n-1} wherever both are defined
    assert np.array_equal(shifted.segment.points[1:], base.segment.points[:-1])


def test_identify_symbol_with_index_shift():
    catalog = OrbitCatalog(n=1, lam=LAM, entries={str(k): v for k, v in synthetic.items()})
    moved = synthetic[2].with_points(shift_points(synthetic[2].points, 1, XI))
    key, distance = identify_symbol(henon, moved, catalog)
    assert key == "2"
    assert distance <= 1e-12


def test_identify_symbol_ambiguous():
    catalog = OrbitCatalog(n=1, lam=LAM, entries={"0": bump(1.0), "1": bump(1.2)})
    with pytest.raises(AmbiguousMatch):
        identify_symbol(henon, bump(1.1), catalog)


def synthetic_branch(fold_lambdas: list[float], sides: list[str]) -> Branch:
    z = np.zeros(3)
    folds = [
        FoldEvent(lam=lam, z=z, side=side, s=2.0 * i + 1.0, kernel=z[:2])
        for i, (lam, side) in enumerate(zip(fold_lambdas, sides))
    ]
    crossings = [BranchCrossing(s=2.0 * i, z=z, index=i) for i in range(4)]
    return Branch(folds=folds, crossings=crossings, closed=True)


def test_label_primary_orbits_in_order():
    branch = synthetic_branch([0.5, 0.2, 0.6, 0.1], ["R", "L", "R", "L"])
    assert label_primary_orbits(branch) == [0, 1, 2, 3]


def test_label_primary_orbits_rotated():
    branch = synthetic_branch([0.6, 0.1, 0.5, 0.2], ["R", "L", "R", "L"])
    assert label_primary_orbits(branch) == [2, 3, 0, 1]


def test_label_primary_orbits_needs_four_folds():
    branch = synthetic_branch([0.5, 0.2, 0.6], ["R", "L", "R"])
    with pytest.raises(AmbiguousMatch):
        label_primary_orbits(branch)


def test_fold_order_names_folds_by_neighbouring_orbits():
    branch = synthetic_branch([0.5, 0.2, 0.6, 0.1], ["R", "L", "R", "L"])
    run = PrimaryRun(problem=None, branch=branch, labels=[0, 1, 2, 3], primaries={})
    assert check_fold_order(run) == []
    swapped = synthetic_branch([0.6, 0.2, 0.5, 0.1], ["R", "L", "R", "L"])
    problems = check_fold_order(replace(run, branch=swapped))
    assert len(problems) == 1 and "[2, 3] > [0, 1]" in problems[0]
    assert check_fold_order(replace(run, labels=None)) == ["primary orbits are unlabeled"]


def test_edge_label_from_fold_passed():
    z = np.zeros(3)
    folds = [
        FoldEvent(lam=0.45, z=z, side="R", s=0.3, kernel=z[:2]),
        # a local minimum that stays above λ̃ does not decide the arc
        FoldEvent(lam=0.38, z=z, side="L", s=0.5, kernel=z[:2]),
        FoldEvent(lam=0.42, z=z, side="R", s=0.7, kernel=z[:2]),
        FoldEvent(lam=0.2, z=z, side="L", s=1.5, kernel=z[:2]),
    ]
    branch = Branch(folds=folds)
    assert _edge_label(branch, 0.0, 1.0, 0.35) == "R"
    assert _edge_label(branch, 1.0, 2.0, 0.35) == "L"


def test_edge_label_without_fold_uses_extreme_point():
    tangent = np.array([0.0, 1.0])
    points = [
        BranchPoint(z=np.array([0.0, lam]), s=s, tangent=tangent, amplitude=0.0)
        for s, lam in [(0.0, 0.35), (0.5, 0.4), (1.0, 0.35), (1.5, 0.3), (2.0, 0.35)]
    ]
    branch = Branch(points=points)
    assert _edge_label(branch, 0.0, 1.0, 0.35) == "R"
    assert _edge_label(branch, 1.0, 2.0, 0.35) == "L"
    with pytest.raises(OpenBranch):
        _edge_label(branch, 2.0, 3.0, 0.35)


def test_component_table():
    trace = ComponentTrace(
        cycles=[
            EmpiricalCycle(vertices=v, labels=["R", "L"] * (len(v) // 2), branch_id=i, arclength=1.0)
            for i, v in enumerate(
                [["00", "10", "20", "30"], ["01", "11", "21", "31"], [f"x{j}" for j in range(8)]]
            )
        ]
    )
    assert trace.table(2) == [(2, 4, 2), (2, 8, 1)]


@pytest.fixture(scope="module")
def primary_run():
    run = trace_primary(henon, RunConfig())
    assert run.labels is not None
    return run


@pytest.fixture(scope="module")
def primaries(primary_run):
    return primary_run.primaries


@pytest.fixture(scope="module")
def two_hump(primaries):
    catalog = enumerate_catalog(henon, primaries, 2)
    return catalog, trace_all_components(henon, catalog)


@pytest.mark.slow
def test_primary_fold_order(primary_run):
    assert check_fold_order(primary_run) == []


@pytest.mark.slow
def test_one_hump_catalog_is_one_cycle(primaries):
    catalog = enumerate_catalog(henon, primaries, 1)
    assert catalog.complete
    components = trace_all_components(henon, catalog)
    assert components.table(1) == [(1, 4, 1)]
    assert sorted(components.cycles[0].vertices) == ["0", "1", "2", "3"]


@pytest.mark.slow
def test_two_hump_table(two_hump):
    catalog, components = two_hump
    assert catalog.complete
    assert catalog.min_separation() >= 1e-3
    assert components.table(2) == [(2, 4, 2), (2, 8, 1)]
    assert sum(cycle.length for cycle in components.cycles) == 16


@pytest.mark.slow
def test_traced_cycles_partition_the_graph(two_hump):
    _, components = two_hump
    g = build_graph(2)
    cycles = [LRCycle(tuple(c.vertices), tuple(c.labels)) for c in components.cycles]
    ok, reason = is_partition_of(g, cycles)
    assert ok, reason
    assert CyclePartition.of(cycles) in set(enumerate_partitions(g).partitions)


@pytest.mark.slow
def test_identify_symbol_under_noise(two_hump):
    catalog, _ = two_hump
    rng = np.random.default_rng(5)
    for key, orbit in catalog.entries.items():
        noisy = orbit.points + 1e-5 * rng.standard_normal(orbit.points.shape)
        assert identify_symbol(henon, orbit.with_points(noisy), catalog)[0] == key
        moved = shift_points(noisy, -1, XI)
        assert identify_symbol(henon, orbit.with_points(moved), catalog)[0] == key


@pytest.mark.slow
def test_additive_and_concat_shadow_alike(primaries):
    sequence = SymbolSequence.parse("21")
    concat = build_pseudo_orbit(henon, primaries, sequence)
    additive = build_pseudo_orbit(henon, primaries, sequence, mode="additive", gap=concat.gap)
    # humps one |J| apart do not overlap, so both constructions coincide
    assert np.max(np.abs(additive.segment.points - concat.segment.points)) <= 1e-12
    orbit = shadow_orbit(henon, concat).orbit
    shifted = build_pseudo_orbit(
        henon, primaries, sequence, mode="additive", gap=concat.gap, offset=1
    )
    moved = shadow_orbit(henon, shifted).orbit
    assert np.max(np.abs(moved.points[11:-10] - orbit.points[10:-11])) <= 1e-5


@pytest.mark.slow
def test_three_hump_table(primaries):
    catalog = enumerate_catalog(henon, primaries, 3)
    assert catalog.complete
    components = trace_all_components(henon, catalog)
    assert components.table(3) == [(3, 4, 9), (3, 8, 2), (3, 12, 1)]
    assert sum(cycle.length for cycle in components.cycles) == 64


@pytest.mark.slow
def test_shadowing_improves_with_gap(primaries):
    rows = gap_study(henon, primaries, SymbolSequence.parse("01"), [(-20, 19), (-40, 39)])
    assert rows[0].gap == 40 and rows[1].gap == 80
    assert rows[1].pseudo_residual < rows[0].pseudo_residual
    assert rows[1].shadow_distance < rows[0].shadow_distance
    assert np.log10(rows[0].pseudo_residual) - np.log10(rows[1].pseudo_residual) >= 2


@pytest.mark.slow
def test_three_hump_gap_study(primaries):
    sequence = gap_study_sequence(3)
    assert str(sequence) == "012"
    rows = gap_study(henon, primaries, sequence, [(-20, 19), (-40, 39)])
    assert [row.gap for row in rows] == [40, 80]
    assert rows[1].pseudo_residual < rows[0].pseudo_residual
    assert rows[1].shadow_distance < rows[0].shadow_distance
