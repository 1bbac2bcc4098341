from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
import scipy.linalg as LA
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from src.errors import NoConvergence, SingularJacobian
from src.maps import FixedPointData, HyperbolicSplitting, ParameterizedMap, hyperbolic_splitting

BoundaryKind = Literal["periodic", "projection"]

DEFAULT_N_MINUS = -20
DEFAULT_N_PLUS = 21
# ‖x_{n±} − ξ‖ above this means the segment is not a homoclinic approximation
TAIL_THRESHOLD = 1e-2
LAMBDA_STEP = 1e-6
TRANSVERSALITY_THRESHOLD = 1e-6


class NewtonSettings(BaseModel):
    tolerance: float = Field(default=1e-10, gt=0)
    max_iterations: int = Field(default=30, ge=1)
    # backtracking factor applied while the residual grows; None disables damping
    damping: float | None = Field(default=None, gt=0, le=1)


@dataclass(frozen=True, eq=False)
class OrbitSegment:
    n_minus: int
    n_plus: int
    points: np.ndarray
    lam: float
    bc: BoundaryKind = "projection"
    residual: float | None = None
    history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if not self.n_minus < 0 < self.n_plus:
            raise ValueError(
                f"interval [{self.n_minus}, {self.n_plus}] must satisfy n- < 0 < n+"
            )
        if self.points.shape[0] != self.n_plus - self.n_minus + 1:
            raise ValueError(
                f"{self.points.shape[0]} points do not fit [{self.n_minus}, {self.n_plus}]"
            )

    @property
    def length(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.n_minus, self.n_plus + 1)

    def point(self, n: int) -> np.ndarray:
        return self.points[n - self.n_minus]

    def flat(self) -> np.ndarray:
        return self.points.reshape(-1)

    def with_points(self, points: np.ndarray, lam: float | None = None) -> "OrbitSegment":
        return replace(
            self,
            points=points,
            lam=self.lam if lam is None else float(lam),
            residual=None,
            history=(),
        )


@dataclass(frozen=True, eq=False)
class BoundarySetup:
    kind: BoundaryKind
    fixed_point: FixedPointData
    splitting: HyperbolicSplitting | None

    @property
    def xi(self) -> np.ndarray:
        return self.fixed_point.location


def boundary_setup(fmap: ParameterizedMap, lam: float, kind: BoundaryKind) -> BoundarySetup:
    fp = fmap.primary_fixed_point(lam)
    splitting = hyperbolic_splitting(fp) if kind == "projection" else None
    return BoundarySetup(kind=kind, fixed_point=fp, splitting=splitting)


def _boundary_rows(points: np.ndarray, setup: BoundarySetup) -> np.ndarray:
    if setup.kind == "periodic":
        return points[0] - points[-1]
    assert setup.splitting is not None
    return np.concatenate(
        (
            setup.splitting.boundary_stable @ (points[0] - setup.xi),
            setup.splitting.boundary_unstable @ (points[-1] - setup.xi),
        )
    )


def evaluate_gamma(
    fmap: ParameterizedMap, points: np.ndarray, lam: float, setup: BoundarySetup
) -> np.ndarray:
    interior = points[1:] - fmap.evaluate(points[:-1], lam)
    return np.concatenate((interior.reshape(-1), _boundary_rows(points, setup)))


def gamma_residual(
    fmap: ParameterizedMap,
    segment: OrbitSegment,
    lam: float | None = None,
    bc: BoundaryKind | None = None,
) -> np.ndarray:
    """Γ_J: interior rows x_{n+1} − f(x_n, λ), then k boundary rows."""
    lam = segment.lam if lam is None else lam
    setup = boundary_setup(fmap, lam, bc or segment.bc)
    return evaluate_gamma(fmap, segment.points, lam, setup)


def gamma_jacobian(
    fmap: ParameterizedMap, points: np.ndarray, lam: float, setup: BoundarySetup
) -> np.ndarray:
    """Dense D_xΓ_J in the row order of `gamma_residual`."""
    m, k = points.shape
    size = m * k
    jac = np.zeros((size, size))
    f_x = fmap.jacobian(points[:-1], lam)
    for i in range(m - 1):
        rows = slice(i * k, (i + 1) * k)
        jac[rows, i * k : (i + 1) * k] = -f_x[i]
        jac[rows, (i + 1) * k : (i + 2) * k] = np.eye(k)
    offset = (m - 1) * k
    if setup.kind == "periodic":
        jac[offset:, :k] = np.eye(k)
        jac[offset:, size - k :] = -np.eye(k)
    else:
        assert setup.splitting is not None
        k_s = setup.splitting.stable_dimension
        jac[offset : offset + k_s, :k] = setup.splitting.boundary_stable
        jac[offset + k_s :, size - k :] = setup.splitting.boundary_unstable
    return jac


def apply_interior_jacobian(
    fmap: ParameterizedMap, points: np.ndarray, lam: float, v: np.ndarray
) -> np.ndarray:
    """Rows v_{n+1} − f_x(x_n, λ) v_n for n = n−..n+−1."""
    f_x = fmap.jacobian(points[:-1], lam)
    return v[1:] - np.einsum("nij,nj->ni", f_x, v[:-1])


def gamma_lambda_derivative(
    fmap: ParameterizedMap, points: np.ndarray, lam: float, kind: BoundaryKind
) -> np.ndarray:
    interior = -fmap.parameter_derivative(points[:-1], lam).reshape(-1)
    if kind == "periodic":
        boundary = np.zeros(points.shape[1])
    else:
        # ξ(λ) and B_s(λ), B_u(λ) have no closed-form λ-derivative in general
        plus = _boundary_rows(points, boundary_setup(fmap, lam + LAMBDA_STEP, kind))
        minus = _boundary_rows(points, boundary_setup(fmap, lam - LAMBDA_STEP, kind))
        boundary = (plus - minus) / (2 * LAMBDA_STEP)
    return np.concatenate((interior, boundary))


def gamma_second_action(
    fmap: ParameterizedMap,
    points: np.ndarray,
    lam: float,
    kind: BoundaryKind,
    u: np.ndarray,
) -> np.ndarray:
    """Derivative of D_xΓ_J(x, λ)·u with respect to (x, λ), shape (N, N + 1)."""
    m, k = points.shape
    size = m * k
    u_points = u.reshape(m, k)
    out = np.zeros((size, size + 1))
    f_xx = fmap.second_derivative(points[:-1], lam)
    f_xl = fmap.mixed_derivative(points[:-1], lam)
    for i in range(m - 1):
        rows = slice(i * k, (i + 1) * k)
        # d/dx_i of −f_x(x_i) u_i is −f_xx(x_i)[u_i, ·]
        out[rows, i * k : (i + 1) * k] = -np.einsum("ijl,j->il", f_xx[i], u_points[i])
        out[rows, size] = -f_xl[i] @ u_points[i]
    if kind == "projection":
        plus = boundary_setup(fmap, lam + LAMBDA_STEP, kind).splitting
        minus = boundary_setup(fmap, lam - LAMBDA_STEP, kind).splitting
        assert plus is not None and minus is not None
        d_stable = (plus.boundary_stable - minus.boundary_stable) / (2 * LAMBDA_STEP)
        d_unstable = (plus.boundary_unstable - minus.boundary_unstable) / (2 * LAMBDA_STEP)
        out[(m - 1) * k :, size] = np.concatenate(
            (d_stable @ u_points[0], d_unstable @ u_points[-1])
        )
    return out


def _to_banded(matrix: np.ndarray, lower: int, upper: int) -> np.ndarray:
    n = matrix.shape[1]
    banded = np.zeros((lower + upper + 1, n))
    for d in range(-lower, upper + 1):
        diagonal = np.diagonal(matrix, offset=d)
        if d >= 0:
            banded[upper - d, d:] = diagonal
        else:
            banded[upper - d, : n + d] = diagonal
    return banded


def solve_newton_system(
    jac: np.ndarray, rhs: np.ndarray, setup: BoundarySetup, dimension: int
) -> np.ndarray:
    """Solve D_xΓ_J δ = rhs.

    Projection conditions only touch the two end blocks, so moving the B_s rows
    to the top makes the system banded and LU with partial pivoting runs in
    O(k³|J|). Periodic conditions couple both ends and use a dense LU.
    """
    try:
        if setup.kind == "projection":
            assert setup.splitting is not None
            k = dimension
            k_s = setup.splitting.stable_dimension
            interior = jac.shape[0] - k
            order = np.concatenate(
                (
                    np.arange(interior, interior + k_s),
                    np.arange(interior),
                    np.arange(interior + k_s, jac.shape[0]),
                )
            )
            lower, upper = k_s + k - 1, 2 * k - 1 - k_s
            delta = LA.solve_banded(
                (lower, upper), _to_banded(jac[order], lower, upper), rhs[order]
            )
        else:
            delta = LA.solve(jac, rhs)
    except (LA.LinAlgError, ValueError) as e:
        raise SingularJacobian(f"[Newton] linear solve failed: {e}") from e
    if not np.all(np.isfinite(delta)):
        raise SingularJacobian("[Newton] linear solve produced non-finite values")
    return delta


def newton_solve(
    fmap: ParameterizedMap,
    seed: OrbitSegment,
    lam: float | None = None,
    bc: BoundaryKind | None = None,
    settings: NewtonSettings | None = None,
) -> OrbitSegment:
    settings = settings or NewtonSettings()
    lam = seed.lam if lam is None else float(lam)
    kind = bc or seed.bc
    setup = boundary_setup(fmap, lam, kind)
    points = np.array(seed.points, dtype=float)
    k = points.shape[1]
    history: list[float] = []

    residual = evaluate_gamma(fmap, points, lam, setup)
    for iteration in range(settings.max_iterations + 1):
        norm = float(np.max(np.abs(residual)))
        history.append(norm)
        logger.trace(f"[Newton] iteration {iteration} residual {norm:.3e}")
        if not np.isfinite(norm):
            raise NoConvergence(
                "[Newton] residual became non-finite", lam=lam, history=history
            )
        if norm <= settings.tolerance:
            logger.debug(
                f"[Newton] converged in {iteration} iterations, residual {norm:.3e}"
            )
            return OrbitSegment(
                n_minus=seed.n_minus,
                n_plus=seed.n_plus,
                points=points,
                lam=lam,
                bc=kind,
                residual=norm,
                history=tuple(history),
            )
        if iteration == settings.max_iterations:
            break

        jac = gamma_jacobian(fmap, points, lam, setup)
        delta = solve_newton_system(jac, -residual, setup, k).reshape(points.shape)
        step = 1.0
        trial = points + delta
        trial_residual = evaluate_gamma(fmap, trial, lam, setup)
        if settings.damping is not None:
            while (
                not np.all(np.isfinite(trial_residual))
                or np.max(np.abs(trial_residual)) > norm
            ) and step > 1e-4:
                step *= settings.damping
                trial = points + step * delta
                trial_residual = evaluate_gamma(fmap, trial, lam, setup)
        points, residual = trial, trial_residual

    raise NoConvergence(
        f"[Newton] no convergence after {settings.max_iterations} iterations",
        lam=lam,
        history=history,
    )


def is_homoclinic(
    fmap: ParameterizedMap, segment: OrbitSegment, threshold: float = TAIL_THRESHOLD
) -> bool:
    """Tail decay at both ends and a nontrivial excursion."""
    xi = fmap.primary_fixed_point(segment.lam).location
    distances = np.linalg.norm(segment.points - xi, axis=1)
    return bool(
        distances[0] <= threshold
        and distances[-1] <= threshold
        and np.max(distances) > threshold
    )


def dynamics_residual(fmap: ParameterizedMap, segment: OrbitSegment) -> np.ndarray:
    """max_i |x_{n+1} − f(x_n, λ)| per interior index n."""
    jumps = segment.points[1:] - fmap.evaluate(segment.points[:-1], segment.lam)
    return np.max(np.abs(jumps), axis=1)


def amplitude(fmap: ParameterizedMap, orbit: OrbitSegment) -> float:
    xi = fmap.primary_fixed_point(orbit.lam).location
    return float(np.sqrt(np.sum((orbit.points - xi) ** 2)))


def shift_points(points: np.ndarray, shift: int, fill: np.ndarray) -> np.ndarray:
    """out[n] = points[n + shift], padding with `fill` outside the old range."""
    out = np.tile(fill, (points.shape[0], 1)).astype(float)
    m = points.shape[0]
    if shift >= 0:
        out[: m - shift] = points[shift:]
    else:
        out[-shift:] = points[: m + shift]
    return out


def extend_interval(
    fmap: ParameterizedMap,
    orbit: OrbitSegment,
    n_minus: int,
    n_plus: int,
    settings: NewtonSettings | None = None,
    solve: bool = True,
) -> OrbitSegment:
    """Pad `orbit` with ξ(λ) onto [n_minus, n_plus] (or cut it) and re-solve."""
    xi = fmap.primary_fixed_point(orbit.lam).location
    points = np.tile(xi, (n_plus - n_minus + 1, 1)).astype(float)
    for n in range(max(n_minus, orbit.n_minus), min(n_plus, orbit.n_plus) + 1):
        points[n - n_minus] = orbit.point(n)
    padded = OrbitSegment(
        n_minus=n_minus, n_plus=n_plus, points=points, lam=orbit.lam, bc=orbit.bc
    )
    if not solve:
        return padded
    return newton_solve(fmap, padded, settings=settings)


def center_orbit(
    fmap: ParameterizedMap, orbit: OrbitSegment, settings: NewtonSettings | None = None
) -> OrbitSegment:
    """Shift the largest excursion from ξ to index 0 and re-solve."""
    xi = fmap.primary_fixed_point(orbit.lam).location
    peak = int(np.argmax(np.linalg.norm(orbit.points - xi, axis=1))) + orbit.n_minus
    if peak == 0:
        return orbit
    logger.debug(f"[BVP] Re-centering orbit, peak at index {peak}")
    shifted = orbit.with_points(shift_points(orbit.points, peak, xi))
    return newton_solve(fmap, shifted, settings=settings)


class AssumptionReport(BaseModel):
    lam: float
    min_abs_det: float
    fixed_point_residual: float
    hyperbolicity_gap: float
    smallest_singular_value: float
    diffeomorphism: bool
    hyperbolic: bool
    transversal: bool


def assumption_report(fmap: ParameterizedMap, orbit: OrbitSegment) -> AssumptionReport:
    """Runtime checks of the standing assumptions along a computed orbit."""
    fp = fmap.primary_fixed_point(orbit.lam)
    dets = np.linalg.det(fmap.jacobian(orbit.points, orbit.lam))
    gap = float(np.min(np.abs(np.abs(fp.eigenvalues) - 1.0)))
    setup = boundary_setup(fmap, orbit.lam, orbit.bc)
    sigma = LA.svdvals(gamma_jacobian(fmap, orbit.points, orbit.lam, setup))
    min_det = float(np.min(np.abs(dets)))
    return AssumptionReport(
        lam=orbit.lam,
        min_abs_det=min_det,
        fixed_point_residual=fp.residual,
        hyperbolicity_gap=gap,
        smallest_singular_value=float(sigma[-1]),
        diffeomorphism=min_det > 0,
        hyperbolic=fp.hyperbolic,
        transversal=float(sigma[-1]) > TRANSVERSALITY_THRESHOLD,
    )


class OrbitRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    lam: float = Field(alias="lambda")
    n_minus: int
    n_plus: int
    points: list[list[float]]
    bc: BoundaryKind
    residual: float | None = None

    @classmethod
    def from_segment(cls, segment: OrbitSegment) -> "OrbitRecord":
        return cls(
            lam=segment.lam,
            n_minus=segment.n_minus,
            n_plus=segment.n_plus,
            points=segment.points.tolist(),
            bc=segment.bc,
            residual=segment.residual,
        )

    def to_segment(self) -> OrbitSegment:
        return OrbitSegment(
            n_minus=self.n_minus,
            n_plus=self.n_plus,
            points=np.array(self.points, dtype=float),
            lam=self.lam,
            bc=self.bc,
            residual=self.residual,
        )

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=4)
