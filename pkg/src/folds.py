from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg as LA
from loguru import logger
from pydantic import BaseModel

from src.bvp import (
    OrbitSegment,
    apply_interior_jacobian,
    boundary_setup,
    extend_interval,
    gamma_jacobian,
)
from src.continuation import (
    BranchPoint,
    ContinuationSettings,
    FoldEvent,
    HomoclinicProblem,
    predictor_corrector_step,
    refine_fold,
    start_point,
)
from src.errors import AugmentedSingular, HomoclinicError, InsufficientPoints, KernelNotSimple
from src.maps import ParameterizedMap, apply_bilinear

KERNEL_TOLERANCE = 1e-6
SECOND_SINGULAR_FLOOR = 1e-2
MIN_FIT_POINTS = 8
DEFAULT_TAU_MAX = 0.05


@dataclass(frozen=True, eq=False)
class TangencyData:
    lam_bar: float
    orbit: OrbitSegment
    # u on every index of J, w on the interior equation rows n = n−..n+−1
    u: np.ndarray
    w: np.ndarray
    c_lambda: float = float("nan")
    c_x: float = float("nan")
    sv_gap: float = float("nan")

    @property
    def ratio(self) -> float:
        """Predicted coefficient of τ² in λ − λ̄."""
        return -self.c_x / self.c_lambda


def kernel_and_adjoint(
    fmap: ParameterizedMap, orbit: OrbitSegment
) -> tuple[np.ndarray, np.ndarray, float]:
    """Kernel u and adjoint w of D_xΓ_J at a fold orbit, with σ_{N−1}/σ_N.

    Both come from the smallest singular triple of the square Jacobian. The
    interior block alone has a k-dimensional kernel, so u needs the boundary
    rows; w is the left vector restricted to the interior rows.
    """
    setup = boundary_setup(fmap, orbit.lam, orbit.bc)
    jac = gamma_jacobian(fmap, orbit.points, orbit.lam, setup)
    left, sigma, vt = LA.svd(jac)
    smallest, second = float(sigma[-1]), float(sigma[-2])
    gap = second / smallest if smallest > 0 else float("inf")
    if smallest > KERNEL_TOLERANCE or second < SECOND_SINGULAR_FLOOR:
        raise KernelNotSimple(
            f"[Fold] kernel at λ={orbit.lam:.8f} is not simple",
            smallest=smallest,
            second=second,
        )
    k = orbit.dimension
    u = vt[-1].reshape(orbit.length, k)
    w = left[: (orbit.length - 1) * k, -1].reshape(orbit.length - 1, k)
    u = u / np.linalg.norm(u)
    w = w / np.linalg.norm(w)
    logger.debug(
        f"[Fold] σ_min={smallest:.3e}, σ_next={second:.3e}, gap ratio {gap:.3e}"
    )
    return u, w, gap


def tangency_constants(fmap: ParameterizedMap, data: TangencyData) -> tuple[float, float]:
    """c_λ = Σ ⟨w_n, f_λ(x̄_n)⟩ and c_x = ½ Σ ⟨w_n, f_xx(x̄_n)[u_n, u_n]⟩ over interior rows."""
    points = data.orbit.points[:-1]
    u = data.u[:-1]
    f_lambda = fmap.parameter_derivative(points, data.lam_bar)
    f_xx = fmap.second_derivative(points, data.lam_bar)
    c_lambda = float(np.sum(data.w * f_lambda))
    c_x = 0.5 * float(np.sum(data.w * apply_bilinear(f_xx, u, u)))
    return c_lambda, c_x


def tangency_data(
    fmap: ParameterizedMap, fold: FoldEvent, problem: HomoclinicProblem
) -> TangencyData:
    """Kernel, adjoint and tangency constants at a located fold.

    u is oriented along the fold kernel from continuation, w so that c_λ > 0.
    """
    orbit = problem.to_orbit(fold.z)
    u, w, gap = kernel_and_adjoint(fmap, orbit)
    if float(np.sum(u * fold.kernel.reshape(u.shape))) < 0:
        u = -u
    data = TangencyData(lam_bar=fold.lam, orbit=orbit, u=u, w=w, sv_gap=gap)
    c_lambda, c_x = tangency_constants(fmap, data)
    if c_lambda < 0:
        data = replace(data, w=-w)
        c_lambda, c_x = -c_lambda, -c_x
    logger.info(
        f"[Fold] {fold.side}-fold λ̄={fold.lam:.10f}: c_λ={c_lambda:.6e}, c_x={c_x:.6e}"
    )
    return replace(data, c_lambda=c_lambda, c_x=c_x)


def range_orthogonality(
    fmap: ParameterizedMap,
    data: TangencyData,
    rng: np.random.Generator,
    samples: int = 20,
) -> float:
    """max |⟨w, L v⟩| / ‖v‖ over random v, L the interior Jacobian at the fold."""
    worst = 0.0
    for _ in range(samples):
        v = rng.standard_normal(data.orbit.points.shape)
        image = apply_interior_jacobian(fmap, data.orbit.points, data.lam_bar, v)
        worst = max(worst, abs(float(np.sum(data.w * image))) / float(np.linalg.norm(v)))
    return worst


def sample_near_fold(
    problem: HomoclinicProblem,
    fold: FoldEvent,
    data: TangencyData,
    tau_max: float,
    settings: ContinuationSettings | None = None,
) -> list[BranchPoint]:
    """Branch points through the fold with step τ_max/10, both directions."""
    h = tau_max / 10
    base = settings or ContinuationSettings()
    local = base.model_copy(update={"h_min": h, "h_initial": h, "h_max": h})
    points: list[BranchPoint] = []
    for direction in (1, -1):
        current = start_point(problem, fold.z, direction=direction)
        if direction == 1:
            points.append(current)
        for _ in range(40):
            current = predictor_corrector_step(problem, current, h, local)
            if abs(tau_coordinate(problem, current.z, data)) > tau_max * (1 + 1e-9):
                break
            points.append(current)
    logger.debug(f"[Fold] {len(points)} samples within |τ| ≤ {tau_max} of λ̄={fold.lam:.8f}")
    return points


def tau_coordinate(problem: HomoclinicProblem, z: np.ndarray, data: TangencyData) -> float:
    return float(np.sum(data.u * (problem.points(z) - data.orbit.points)))


class FitReport(BaseModel):
    slope: float
    prediction: float
    deviation: float
    r2: float
    points: int
    tau_max: float


def fit_quadratic(
    tau: np.ndarray, dlam: np.ndarray, prediction: float, tau_max: float
) -> FitReport:
    """Least squares λ − λ̄ ≈ a τ² + b τ³; the cubic term absorbs the O(|τ|³) remainder."""
    tau = np.asarray(tau, dtype=float)
    dlam = np.asarray(dlam, dtype=float)
    if tau.size < MIN_FIT_POINTS:
        raise InsufficientPoints(
            f"[Fold] {tau.size} points within |τ| ≤ {tau_max}, need {MIN_FIT_POINTS}",
            points=int(tau.size),
        )
    design = np.column_stack((tau**2, tau**3))
    coefficients, *_ = LA.lstsq(design, dlam)
    fitted = design @ coefficients
    total = float(np.sum((dlam - dlam.mean()) ** 2))
    r2 = 1.0 - float(np.sum((dlam - fitted) ** 2)) / total if total > 0 else 1.0
    slope = float(coefficients[0])
    deviation = abs(slope - prediction) / abs(prediction) if prediction != 0 else float("inf")
    return FitReport(
        slope=slope,
        prediction=prediction,
        deviation=deviation,
        r2=r2,
        points=int(tau.size),
        tau_max=tau_max,
    )


def quadratic_fit_check(
    problem: HomoclinicProblem,
    points: Sequence[BranchPoint],
    data: TangencyData,
    tau_max: float,
) -> FitReport:
    tau = np.array([tau_coordinate(problem, p.z, data) for p in points])
    dlam = np.array([p.lam - data.lam_bar for p in points])
    mask = np.abs(tau) <= tau_max * (1 + 1e-9)
    report = fit_quadratic(tau[mask], dlam[mask], data.ratio, tau_max)
    logger.info(
        f"[Fold] λ̄={data.lam_bar:.8f}: fit slope {report.slope:.6e}, "
        f"predicted {report.prediction:.6e}, deviation {report.deviation:.2e}, R² {report.r2:.6f}"
    )
    return report


def fold_convergence(
    fmap: ParameterizedMap,
    fold: FoldEvent,
    problem: HomoclinicProblem,
    factors: Sequence[int] = (1, 2, 4),
    settings: ContinuationSettings | None = None,
) -> list[tuple[int, int, float]]:
    """λ̄ of the same fold re-solved on J scaled by each factor: (n−, n+, λ̄) rows."""
    settings = settings or ContinuationSettings()
    orbit = problem.to_orbit(fold.z)
    kernel = fold.kernel.reshape(orbit.points.shape)
    rows: list[tuple[int, int, float]] = []
    for factor in factors:
        n_minus, n_plus = orbit.n_minus * factor, orbit.n_plus * factor
        wide = HomoclinicProblem(fmap, n_minus, n_plus, orbit.bc)
        padded = extend_interval(fmap, orbit, n_minus, n_plus, solve=False)
        u = np.zeros_like(padded.points)
        offset = orbit.n_minus - n_minus
        u[offset : offset + orbit.length] = kernel
        try:
            z, _ = refine_fold(wide, HomoclinicProblem.state(padded), u.reshape(-1), settings)
        except AugmentedSingular as e:
            logger.warning(f"[Fold] re-solve on [{n_minus}, {n_plus}] failed: {e.message}")
            continue
        rows.append((n_minus, n_plus, float(z[-1])))
        logger.debug(f"[Fold] J=[{n_minus}, {n_plus}]: λ̄={z[-1]:.12f}")
    return rows


class TangencyReport(BaseModel):
    side: str
    lambda_bar: float
    c_lambda: float
    c_x: float
    ratio: float
    sv_gap: float
    quadratic: bool
    fit_slope: float | None = None
    fit_r2: float | None = None
    fit_deviation: float | None = None

    @classmethod
    def build(
        cls, fold: FoldEvent, data: TangencyData, fit: FitReport | None = None
    ) -> "TangencyReport":
        return cls(
            side=fold.side,
            lambda_bar=data.lam_bar,
            c_lambda=data.c_lambda,
            c_x=data.c_x,
            ratio=data.ratio,
            sv_gap=data.sv_gap,
            quadratic=fold.quadratic,
            fit_slope=fit.slope if fit else None,
            fit_r2=fit.r2 if fit else None,
            fit_deviation=fit.deviation if fit else None,
        )


class FoldSummary(BaseModel):
    tangency: TangencyReport | None = None
    fit_half: FitReport | None = None
    range_orthogonality: float | None = None
    convergence: list[tuple[int, int, float]] = []
    error: str | None = None

    @property
    def accepted(self) -> bool:
        """Quadratic law within 10% at R² ≥ 0.999, not degrading when τ_max halves."""
        t = self.tangency
        if self.error or t is None or t.fit_deviation is None or t.fit_r2 is None:
            return False
        if t.fit_deviation > 0.1 or t.fit_r2 < 0.999:
            return False
        return self.fit_half is None or self.fit_half.deviation <= t.fit_deviation + 1e-3


def analyze_fold(
    fmap: ParameterizedMap,
    problem: HomoclinicProblem,
    fold: FoldEvent,
    tau_max: float = DEFAULT_TAU_MAX,
    settings: ContinuationSettings | None = None,
    seed: int = 0,
) -> FoldSummary:
    """Tangency constants, quadratic fits at τ_max and τ_max/2, and J-convergence of λ̄."""
    try:
        data = tangency_data(fmap, fold, problem)
        points = sample_near_fold(problem, fold, data, tau_max, settings)
        fit = quadratic_fit_check(problem, points, data, tau_max)
        fit_half = quadratic_fit_check(problem, points, data, tau_max / 2)
    except HomoclinicError as e:
        logger.warning(f"[Fold] analysis at λ={fold.lam:.8f} failed: {e.message}")
        return FoldSummary(error=f"{type(e).__name__}: {e.message}")
    orthogonality = range_orthogonality(fmap, data, np.random.default_rng(seed))
    return FoldSummary(
        tangency=TangencyReport.build(fold, data, fit),
        fit_half=fit_half,
        range_orthogonality=orthogonality,
        convergence=fold_convergence(fmap, fold, problem, (1, 2), settings),
    )
