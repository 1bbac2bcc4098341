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
from pydantic import ValidationError

from src.continuation import (
    ContinuationSettings,
    FunctionProblem,
    HomoclinicProblem,
    branch_tangent,
    locate_fold,
    predictor_corrector_step,
    refine_fold,
    start_point,
    trace_branch,
)
from src.errors import MinStepReached, NoSignChange, RankDeficient
from src.manifolds import seed_homoclinic
from src.maps import HenonMap


def circle() -> FunctionProblem:
    return FunctionProblem(
        lambda x, lam: np.array([x[0] ** 2 + lam**2 - 1.0]),
        size=1,
        jacobian=lambda x, lam: np.array([[2.0 * x[0], 2.0 * lam]]),
    )


def test_settings_validation():
    with pytest.raises(ValidationError):
        ContinuationSettings(h_min=1e-1, h_initial=1e-2, h_max=5e-2)
    with pytest.raises(ValidationError):
        ContinuationSettings(lambda_window=(0.5, 0.1))


def test_tangent_is_unit_and_oriented():
    problem = circle()
    tangent = branch_tangent(problem, np.array([1.0, 0.0]))
    assert np.allclose(tangent, [0.0, 1.0])
    flipped = branch_tangent(problem, np.array([1.0, 0.0]), direction=-1)
    assert np.allclose(flipped, [0.0, -1.0])


def test_rank_deficient_tangent():
    problem = FunctionProblem(
        lambda x, lam: np.array([x[0] ** 2 + lam**2]),
        size=1,
        jacobian=lambda x, lam: np.array([[2.0 * x[0], 2.0 * lam]]),
    )
    with pytest.raises(RankDeficient):
        branch_tangent(problem, np.array([0.0, 0.0]))


def test_ill_conditioned_bordered_tangent():
    problem = FunctionProblem(
        lambda x, lam: np.array([x[0] ** 2 + lam**2]),
        size=1,
        jacobian=lambda x, lam: np.array([[2.0 * x[0], 2.0 * lam]]),
    )
    # the bordered solve succeeds numerically but the kernel is not 1-dim
    with pytest.raises(RankDeficient):
        branch_tangent(problem, np.array([1e-14, 0.0]), previous=np.array([0.6, 0.8]))
    tangent = branch_tangent(circle(), np.array([1.0, 0.0]), previous=np.array([0.0, 1.0]))
    assert np.allclose(tangent, [0.0, 1.0])


def test_zero_step_returns_the_point():
    start = start_point(circle(), np.array([1.0, 0.0]))
    assert predictor_corrector_step(circle(), start, 0.0) is start


def test_step_below_minimum():
    start = start_point(circle(), np.array([1.0, 0.0]))
    with pytest.raises(MinStepReached):
        predictor_corrector_step(circle(), start, 1e-6)


def test_step_stays_on_the_circle():
    problem = circle()
    start = start_point(problem, np.array([1.0, 0.0]))
    point = predictor_corrector_step(problem, start, 0.05)
    assert abs(point.z[0] ** 2 + point.z[1] ** 2 - 1.0) <= 1e-10
    assert point.lam > 0
    assert point.s == pytest.approx(np.linalg.norm(point.z - start.z))


def test_circle_closes_with_two_folds():
    problem = circle()
    start = start_point(problem, np.array([1.0, 0.0]))
    branch = trace_branch(problem, start, ContinuationSettings(), lambda_tilde=0.0)
    assert branch.closed
    assert branch.stop_reason == "closed"
    assert branch.arclength == pytest.approx(2 * np.pi, rel=1e-3)
    assert branch.sides() == ["R", "L"]
    assert branch.folds[0].lam == pytest.approx(1.0, abs=1e-8)
    assert branch.folds[1].lam == pytest.approx(-1.0, abs=1e-8)
    assert all(fold.quadratic for fold in branch.folds)
    assert len(branch.crossings) == 2
    assert sorted(round(float(c.z[0]), 8) for c in branch.crossings) == [-1.0, 1.0]


def test_window_stops_the_branch():
    problem = circle()
    start = start_point(problem, np.array([1.0, 0.0]))
    branch = trace_branch(problem, start, ContinuationSettings(lambda_window=(-0.5, 0.5)))
    assert not branch.closed
    assert branch.stop_reason == "window"
    assert branch.points[-1].lam > 0.5


def test_budget_stops_the_branch():
    problem = circle()
    start = start_point(problem, np.array([1.0, 0.0]))
    branch = trace_branch(problem, start, ContinuationSettings(step_budget=5))
    assert branch.stop_reason == "budget"
    assert len(branch.points) == 6


def test_refine_fold_on_the_circle():
    problem = circle()
    z, u = refine_fold(problem, np.array([0.05, 0.99]), np.array([1.0]), ContinuationSettings())
    assert np.allclose(z, [0.0, 1.0], atol=1e-10)
    assert abs(abs(u[0]) - 1.0) <= 1e-10


def test_locate_fold_needs_a_sign_change():
    problem = circle()
    start = start_point(problem, np.array([1.0, 0.0]))
    step = predictor_corrector_step(problem, start, 0.05)
    with pytest.raises(NoSignChange):
        locate_fold(problem, start, step)


@pytest.mark.slow
def test_henon_one_hump_branch_closes():
    henon = HenonMap(1.4)
    seed = seed_homoclinic(henon, 0.35, -20, 21)
    problem = HomoclinicProblem(henon, seed.n_minus, seed.n_plus, seed.bc)
    start = start_point(problem, HomoclinicProblem.state(seed))
    branch = trace_branch(problem, start, ContinuationSettings(), lambda_tilde=0.35)
    assert branch.closed
    assert len(branch.folds) == 4
    assert len(branch.crossings) == 4
    sides = branch.sides()
    assert all(a != b for a, b in zip(sides, sides[1:] + sides[:1]))
    assert all(fold.quadratic for fold in branch.folds)
