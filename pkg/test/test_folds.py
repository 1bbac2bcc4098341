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

from src.bvp import OrbitSegment, extend_interval
from src.continuation import (
    ContinuationSettings,
    FoldEvent,
    HomoclinicProblem,
    refine_fold,
    start_point,
    trace_branch,
)
from src.errors import InsufficientPoints
from src.folds import (
    TangencyData,
    analyze_fold,
    kernel_and_adjoint,
    fit_quadratic,
    range_orthogonality,
    tangency_constants,
    tangency_data,
)
from src.manifolds import seed_homoclinic
from src.maps import HenonMap

henon = HenonMap(1.4)


def random_data(seed: int = 0) -> TangencyData:
    rng = np.random.default_rng(seed)
    points = henon.primary_fixed_point(0.35).location + rng.standard_normal((10, 2))
    orbit = OrbitSegment(n_minus=-4, n_plus=5, points=points, lam=0.35)
    return TangencyData(
        lam_bar=0.35, orbit=orbit, u=rng.standard_normal((10, 2)), w=rng.standard_normal((9, 2))
    )


def test_fit_recovers_quadratic_coefficient():
    tau = np.linspace(-0.05, 0.05, 21)
    dlam = -3.0 * tau**2 + 0.7 * tau**3
    report = fit_quadratic(tau, dlam, prediction=-3.0, tau_max=0.05)
    assert report.slope == pytest.approx(-3.0, rel=1e-9)
    assert report.deviation <= 1e-9
    assert report.r2 == pytest.approx(1.0)
    assert report.points == 21


def test_fit_detects_wrong_prediction():
    tau = np.linspace(-0.05, 0.05, 21)
    report = fit_quadratic(tau, 2.0 * tau**2, prediction=1.0, tau_max=0.05)
    assert report.deviation == pytest.approx(1.0)


def test_fit_needs_enough_points():
    tau = np.linspace(-0.05, 0.05, 5)
    with pytest.raises(InsufficientPoints):
        fit_quadratic(tau, tau**2, prediction=1.0, tau_max=0.05)


def test_ratio_invariant_under_sign_normalization():
    data = random_data()
    c_lambda, c_x = tangency_constants(henon, data)
    flipped_w = replace(data, w=-data.w)
    c_lambda_w, c_x_w = tangency_constants(henon, flipped_w)
    assert (c_lambda_w, c_x_w) == (-c_lambda, -c_x)
    flipped_u = replace(data, u=-data.u)
    assert tangency_constants(henon, flipped_u) == (c_lambda, c_x)
    ratio = replace(data, c_lambda=c_lambda, c_x=c_x).ratio
    assert replace(data, c_lambda=c_lambda_w, c_x=c_x_w).ratio == ratio


def test_tangency_constants_for_henon():
    data = random_data(1)
    points = data.orbit.points[:-1]
    expected_lambda = float(np.sum(data.w[:, 1] * points[:, 0]))
    expected_x = 0.5 * float(np.sum(data.w[:, 0] * -2 * 1.4 * data.u[:-1, 0] ** 2))
    c_lambda, c_x = tangency_constants(henon, data)
    assert c_lambda == pytest.approx(expected_lambda)
    assert c_x == pytest.approx(expected_x)


@pytest.fixture(scope="module")
def primary_branch():
    seed = seed_homoclinic(henon, 0.35, -20, 21)
    problem = HomoclinicProblem(henon, seed.n_minus, seed.n_plus, seed.bc)
    start = start_point(problem, HomoclinicProblem.state(seed))
    return problem, trace_branch(problem, start, ContinuationSettings(), lambda_tilde=0.35)


@pytest.mark.slow
def test_quadratic_law_at_primary_folds(primary_branch):
    problem, branch = primary_branch
    assert len(branch.folds) == 4
    for fold in branch.folds:
        summary = analyze_fold(henon, problem, fold)
        assert summary.error is None
        assert summary.tangency is not None
        assert summary.tangency.c_lambda > 0
        assert summary.tangency.fit_deviation <= 0.1
        assert summary.tangency.fit_r2 >= 0.999
        assert summary.accepted


def resolve_fold(problem, fold, n_minus, n_plus):
    """The same fold located again on a wider interval."""
    orbit = problem.to_orbit(fold.z)
    wide = HomoclinicProblem(henon, n_minus, n_plus, orbit.bc)
    padded = extend_interval(henon, orbit, n_minus, n_plus, solve=False)
    kernel = np.zeros_like(padded.points)
    offset = orbit.n_minus - n_minus
    kernel[offset : offset + orbit.length] = fold.kernel.reshape(orbit.points.shape)
    z, u = refine_fold(
        wide, HomoclinicProblem.state(padded), kernel.reshape(-1), ContinuationSettings()
    )
    return wide, FoldEvent(lam=float(z[-1]), z=z, side=fold.side, s=0.0, kernel=u)


@pytest.mark.slow
def test_adjoint_orthogonal_to_range_on_long_interval(primary_branch):
    problem, branch = primary_branch
    fold = branch.folds[0]
    wide, event = resolve_fold(problem, fold, -40, 41)
    data = tangency_data(henon, event, wide)
    assert abs(data.lam_bar - fold.lam) <= 1e-6
    assert range_orthogonality(henon, data, np.random.default_rng(0)) <= 1e-8


@pytest.mark.slow
def test_tangency_constants_stable_under_doubling(primary_branch):
    problem, branch = primary_branch
    for fold in branch.folds:
        data = tangency_data(henon, fold, problem)
        wide, event = resolve_fold(problem, fold, -40, 42)
        doubled = tangency_data(henon, event, wide)
        assert doubled.c_lambda == pytest.approx(data.c_lambda, rel=1e-4)
        assert doubled.c_x == pytest.approx(data.c_x, rel=1e-4)


@pytest.mark.slow
def test_svd_kernel_matches_augmented_kernel(primary_branch):
    problem, branch = primary_branch
    for fold in branch.folds:
        assert fold.quadratic
        u, _, gap = kernel_and_adjoint(henon, problem.to_orbit(fold.z))
        augmented = fold.kernel.reshape(u.shape)
        cosine = abs(float(np.sum(u * augmented))) / float(np.linalg.norm(augmented))
        assert cosine == pytest.approx(1.0, abs=1e-8)
        assert gap > 1e3


def decay_ratio(vectors: np.ndarray, start: int, stop: int, step: int) -> float:
    norms = np.linalg.norm(vectors[start:stop:step], axis=1)
    return float(np.exp(np.mean(np.diff(np.log(norms)))))


@pytest.mark.slow
def test_kernel_and_adjoint_tails_decay(primary_branch):
    problem, branch = primary_branch
    fp = henon.primary_fixed_point(0.35)
    mu_s, mu_u = abs(fp.mu_s), abs(fp.mu_u)
    fold = branch.folds[0]
    data = tangency_data(henon, fold, problem)
    peak = int(np.argmax(np.linalg.norm(data.u, axis=1)))
    # u follows the orbit, w the adjoint recursion with the reciprocal rates
    assert decay_ratio(data.u, peak + 3, peak + 9, 1) == pytest.approx(mu_s, rel=0.2)
    assert decay_ratio(data.u, peak - 4, peak - 12, -1) == pytest.approx(1.0 / mu_u, rel=0.2)
    assert decay_ratio(data.w, peak + 4, peak + 12, 1) == pytest.approx(1.0 / mu_u, rel=0.2)
    assert decay_ratio(data.w, peak - 3, peak - 9, -1) == pytest.approx(mu_s, rel=0.2)
