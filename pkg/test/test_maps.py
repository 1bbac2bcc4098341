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

from src.errors import Degenerate, DomainEscape
from src.maps import (
    FiniteDifferenceMap,
    HenonMap,
    apply_bilinear,
    finite_difference_error,
    hyperbolic_splitting,
    make_map,
)

henon = HenonMap(1.4)


def test_henon_evaluate():
    x = np.array([1.0, 2.0])
    assert np.allclose(henon.evaluate(x, 0.35), [1.0 + 2.0 - 1.4, 0.35])


def test_henon_determinant_is_minus_lambda():
    rng = np.random.default_rng(1)
    points = rng.uniform(-5, 5, size=(200, 2))
    for lam in (0.05, 0.35, 1.2):
        dets = np.linalg.det(henon.jacobian(points, lam))
        assert np.max(np.abs(dets + lam)) <= 1e-12


def test_henon_derivatives_match_finite_differences():
    rng = np.random.default_rng(0)
    assert finite_difference_error(henon, rng) <= 1e-6


def test_henon_second_derivative():
    x = np.array([0.3, -1.0])
    u = np.array([2.0, 5.0])
    f_xx = henon.second_derivative(x, 0.35)
    assert np.allclose(apply_bilinear(f_xx, u, u), [-2 * 1.4 * 4.0, 0.0])
    assert np.allclose(henon.mixed_derivative(x, 0.35), [[0.0, 0.0], [1.0, 0.0]])
    assert np.allclose(henon.parameter_derivative(x, 0.35), [0.0, 0.3])


def test_henon_inverse():
    rng = np.random.default_rng(2)
    points = rng.uniform(-3, 3, size=(50, 2))
    images = henon.evaluate(points, 0.35)
    assert np.allclose(henon.evaluate_inverse(images, 0.35), points, atol=1e-12)


def test_fixed_point_at_reference_parameter():
    fp = henon.primary_fixed_point(0.35)
    assert np.allclose(fp.location, [0.6443136, 0.2255098], atol=1e-6)
    assert fp.residual <= 1e-12
    assert fp.hyperbolic
    assert abs(fp.mu_u.real + 1.9808) < 1e-3
    assert abs(fp.mu_s.real - 0.1767) < 1e-3


def test_fixed_points_degenerate():
    with pytest.raises(Degenerate):
        HenonMap(-3.0).fixed_point_locations(1.0)
    with pytest.raises(Degenerate):
        henon.evaluate_inverse(np.zeros(2), 0.0)
    with pytest.raises(Degenerate):
        HenonMap(0.0)


def test_hyperbolic_splitting_projectors():
    splitting = hyperbolic_splitting(henon.primary_fixed_point(0.35))
    p_s, p_u = splitting.projector_stable, splitting.projector_unstable
    assert np.allclose(p_s + p_u, np.eye(2), atol=1e-12)
    assert np.allclose(p_s @ p_s, p_s, atol=1e-12)
    assert np.allclose(p_u @ p_u, p_u, atol=1e-12)
    # boundary rows annihilate the complementary subspace
    assert np.allclose(splitting.boundary_stable @ splitting.unstable_basis, 0, atol=1e-12)
    assert np.allclose(splitting.boundary_unstable @ splitting.stable_basis, 0, atol=1e-12)


def test_domain_escape():
    with pytest.raises(DomainEscape):
        henon(np.array([1e200, 0.0]), 0.35)


def test_finite_difference_map_matches_henon():
    fd = make_map("henon-fd")
    assert isinstance(fd, FiniteDifferenceMap)
    assert fd.metadata()["finite_difference_derivatives"] is True
    x = np.array([[0.5, -0.2], [1.5, 2.0]])
    assert np.allclose(fd.jacobian(x, 0.35), henon.jacobian(x, 0.35), atol=1e-8)
    assert np.allclose(fd.second_derivative(x, 0.35), henon.second_derivative(x, 0.35), atol=1e-4)
    assert np.allclose(fd.primary_fixed_point(0.35).location, henon.primary_fixed_point(0.35).location)


def test_make_map_rejects_unknown():
    with pytest.raises(ValueError):
        make_map("lorenz")
    with pytest.raises(ValueError):
        make_map("henon", dimension=3)
