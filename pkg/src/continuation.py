from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import scipy.linalg as LA
from loguru import logger
from pydantic import BaseModel, Field, model_validator

from src.bvp import (
    BoundaryKind,
    NewtonSettings,
    OrbitSegment,
    amplitude,
    boundary_setup,
    evaluate_gamma,
    gamma_jacobian,
    gamma_lambda_derivative,
    gamma_second_action,
    newton_solve,
)
from src.errors import (
    AugmentedSingular,
    HomoclinicError,
    MinStepReached,
    NoConvergence,
    NoSignChange,
    RankDeficient,
    SingularJacobian,
    StepFailed,
)
from src.maps import ParameterizedMap

FoldSide = Literal["L", "R"]

# σ_min/σ_max of the extended Jacobian below this means a kernel of dimension > 1
RANK_TOLERANCE = 1e-9
AUGMENTED_CONDITION_LIMIT = 1e12
TANGENT_CONDITION_LIMIT = 1e12


class ContinuationSettings(BaseModel):
    h_initial: float = Field(default=1e-2, gt=0)
    h_min: float = Field(default=1e-4, gt=0)
    h_max: float = Field(default=5e-2, gt=0)
    step_budget: int = Field(default=20000, ge=1)
    tolerance: float = Field(default=1e-10, gt=0)
    max_iterations: int = Field(default=12, ge=1)
    closure_tolerance: float = Field(default=1e-6, gt=0)
    lambda_window: tuple[float, float] | None = None
    grow_after: int = Field(default=3, ge=1)
    grow_factor: float = Field(default=1.3, gt=1)
    locate_folds: bool = True
    fold_bisection_tolerance: float = Field(default=1e-7, gt=0)

    @model_validator(mode="after")
    def check_steps(self) -> "ContinuationSettings":
        if not self.h_min <= self.h_initial <= self.h_max:
            raise ValueError(
                f"need h_min <= h_initial <= h_max, got {self.h_min}, {self.h_initial}, {self.h_max}"
            )
        if self.lambda_window is not None and self.lambda_window[0] >= self.lambda_window[1]:
            raise ValueError(f"lambda window {self.lambda_window} is not ordered")
        return self

    def newton(self) -> NewtonSettings:
        return NewtonSettings(tolerance=self.tolerance, max_iterations=self.max_iterations)


class ContinuationProblem(ABC):
    """F(x, λ) = 0 with x ∈ R^m; continuation runs over z = (x, λ) ∈ R^{m+1}."""

    size: int

    @abstractmethod
    def residual(self, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def jacobian(self, z: np.ndarray) -> np.ndarray:
        """[D_xF | D_λF], shape (m, m + 1)."""

    @abstractmethod
    def second_action(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Derivative of D_xF(z)·u with respect to z, shape (m, m + 1)."""

    def amplitude(self, z: np.ndarray) -> float:
        return float(np.linalg.norm(z[:-1]))

    def solve_at(self, z: np.ndarray, lam: float, settings: NewtonSettings) -> np.ndarray:
        """Newton on F(·, λ) = 0 with λ frozen, starting from z's state part."""
        x = np.array(z[:-1], dtype=float)
        for _ in range(settings.max_iterations + 1):
            point = np.append(x, lam)
            residual = self.residual(point)
            if float(np.max(np.abs(residual))) <= settings.tolerance:
                return point
            try:
                x = x - LA.solve(self.jacobian(point)[:, :-1], residual)
            except LA.LinAlgError as e:
                raise SingularJacobian(f"[Continuation] frozen-λ solve failed: {e}") from e
        raise NoConvergence("[Continuation] frozen-λ solve did not converge", lam=lam)


class FunctionProblem(ContinuationProblem):
    """Continuation problem from plain callables; missing derivatives by central differences."""

    def __init__(
        self,
        function: Callable[[np.ndarray, float], np.ndarray],
        size: int,
        jacobian: Callable[[np.ndarray, float], np.ndarray] | None = None,
        step: float = 1e-6,
    ) -> None:
        self.function = function
        self.size = size
        self._jacobian = jacobian
        self.step = step

    def residual(self, z: np.ndarray) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.function(z[:-1], float(z[-1])), dtype=float))

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        if self._jacobian is not None:
            return np.asarray(self._jacobian(z[:-1], float(z[-1])), dtype=float)
        columns = []
        for j in range(self.size + 1):
            e = np.zeros(self.size + 1)
            e[j] = self.step
            columns.append((self.residual(z + e) - self.residual(z - e)) / (2 * self.step))
        return np.stack(columns, axis=1)

    def second_action(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        step = 1e-5
        columns = []
        for j in range(self.size + 1):
            e = np.zeros(self.size + 1)
            e[j] = step
            plus = self.jacobian(z + e)[:, :-1] @ u
            minus = self.jacobian(z - e)[:, :-1] @ u
            columns.append((plus - minus) / (2 * step))
        return np.stack(columns, axis=1)


class HomoclinicProblem(ContinuationProblem):
    """Γ_J(x_J, λ) = 0 on a fixed interval J."""

    def __init__(
        self,
        fmap: ParameterizedMap,
        n_minus: int,
        n_plus: int,
        bc: BoundaryKind = "projection",
    ) -> None:
        self.fmap = fmap
        self.n_minus = n_minus
        self.n_plus = n_plus
        self.bc: BoundaryKind = bc
        self.length = n_plus - n_minus + 1
        self.size = self.length * fmap.dimension

    def points(self, z: np.ndarray) -> np.ndarray:
        return z[:-1].reshape(self.length, self.fmap.dimension)

    def to_orbit(self, z: np.ndarray, residual: float | None = None) -> OrbitSegment:
        return OrbitSegment(
            n_minus=self.n_minus,
            n_plus=self.n_plus,
            points=self.points(z).copy(),
            lam=float(z[-1]),
            bc=self.bc,
            residual=residual,
        )

    @staticmethod
    def state(orbit: OrbitSegment) -> np.ndarray:
        return np.append(orbit.flat(), orbit.lam)

    def residual(self, z: np.ndarray) -> np.ndarray:
        lam = float(z[-1])
        return evaluate_gamma(self.fmap, self.points(z), lam, boundary_setup(self.fmap, lam, self.bc))

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        lam = float(z[-1])
        points = self.points(z)
        setup = boundary_setup(self.fmap, lam, self.bc)
        return np.column_stack(
            (
                gamma_jacobian(self.fmap, points, lam, setup),
                gamma_lambda_derivative(self.fmap, points, lam, self.bc),
            )
        )

    def second_action(self, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        return gamma_second_action(self.fmap, self.points(z), float(z[-1]), self.bc, u)

    def amplitude(self, z: np.ndarray) -> float:
        return amplitude(self.fmap, self.to_orbit(z))

    def solve_at(self, z: np.ndarray, lam: float, settings: NewtonSettings) -> np.ndarray:
        orbit = newton_solve(self.fmap, self.to_orbit(z), lam=lam, settings=settings)
        return self.state(orbit)


@dataclass(frozen=True, eq=False)
class BranchPoint:
    z: np.ndarray
    s: float
    tangent: np.ndarray
    amplitude: float

    @property
    def lam(self) -> float:
        return float(self.z[-1])


@dataclass(frozen=True, eq=False)
class FoldEvent:
    lam: float
    z: np.ndarray
    side: FoldSide
    s: float
    kernel: np.ndarray
    quadratic: bool = True
    tangent: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class BranchCrossing:
    s: float
    z: np.ndarray
    index: int


@dataclass(eq=False)
class Branch:
    points: list[BranchPoint] = field(default_factory=list)
    folds: list[FoldEvent] = field(default_factory=list)
    crossings: list[BranchCrossing] = field(default_factory=list)
    closed: bool = False
    stop_reason: str = ""

    @property
    def arclength(self) -> float:
        return self.points[-1].s if self.points else 0.0

    def sides(self) -> list[FoldSide]:
        return [fold.side for fold in self.folds]


def _orient(tangent: np.ndarray, previous: np.ndarray | None, direction: int) -> np.ndarray:
    if previous is not None:
        return tangent if float(tangent @ previous) >= 0 else -tangent
    # λ-component positive, else the largest state component positive
    pivot = tangent[-1] if abs(tangent[-1]) > 1e-12 else tangent[int(np.argmax(np.abs(tangent)))]
    return direction * (tangent if pivot > 0 else -tangent)


def branch_tangent(
    problem: ContinuationProblem,
    z: np.ndarray,
    previous: np.ndarray | None = None,
    direction: int = 1,
) -> np.ndarray:
    """Unit kernel vector of [D_xF | D_λF] at z."""
    jac = problem.jacobian(z)
    if previous is None:
        _, sigma, vt = LA.svd(jac)
        # m rows: all m singular values must stay away from zero for a 1-dim kernel
        if sigma[-1] <= RANK_TOLERANCE * max(sigma[0], 1.0):
            raise RankDeficient(
                "[Continuation] extended Jacobian has a kernel of dimension > 1",
                lam=float(z[-1]),
                smallest_singular_values=sigma[-3:],
            )
        return _orient(vt[-1], None, direction)
    bordered = np.vstack((jac, previous))
    condition = float(np.linalg.cond(bordered))
    if not condition <= TANGENT_CONDITION_LIMIT:
        raise RankDeficient(
            "[Continuation] bordered tangent system is ill-conditioned",
            lam=float(z[-1]),
            condition=condition,
        )
    rhs = np.zeros(problem.size + 1)
    rhs[-1] = 1.0
    try:
        tangent = LA.solve(bordered, rhs)
    except LA.LinAlgError as e:
        raise RankDeficient(f"[Continuation] bordered tangent system singular: {e}") from e
    if not np.all(np.isfinite(tangent)):
        raise RankDeficient("[Continuation] bordered tangent system singular")
    return _orient(tangent / np.linalg.norm(tangent), previous, direction)


def _correct(
    problem: ContinuationProblem,
    z: np.ndarray,
    normal: np.ndarray,
    anchor: np.ndarray,
    settings: ContinuationSettings,
) -> np.ndarray:
    """Newton on {F(z) = 0, normal·(z − anchor) = 0}."""
    for iteration in range(settings.max_iterations + 1):
        residual = np.append(problem.residual(z), normal @ (z - anchor))
        norm = float(np.max(np.abs(residual)))
        if not np.isfinite(norm):
            raise StepFailed("[Continuation] corrector residual became non-finite")
        if norm <= settings.tolerance:
            return z
        if iteration == settings.max_iterations:
            break
        bordered = np.vstack((problem.jacobian(z), normal))
        try:
            delta = LA.solve(bordered, -residual)
        except LA.LinAlgError as e:
            raise StepFailed(f"[Continuation] bordered corrector system singular: {e}") from e
        z = z + delta
    raise StepFailed(
        f"[Continuation] corrector did not converge in {settings.max_iterations} iterations",
        residual=norm,
    )


def predictor_corrector_step(
    problem: ContinuationProblem,
    point: BranchPoint,
    h: float,
    settings: ContinuationSettings | None = None,
) -> BranchPoint:
    settings = settings or ContinuationSettings()
    if h == 0:
        return point
    if h < settings.h_min * (1 - 1e-12):
        raise MinStepReached(f"[Continuation] step {h:.3e} below h_min", lam=point.lam, h=h)
    predictor = point.z + h * point.tangent
    try:
        z = _correct(problem, predictor, point.tangent, predictor, settings)
    except HomoclinicError as e:
        raise StepFailed(f"[Continuation] step h={h:.3e} failed: {e.message}", h=h) from e
    # guard against the corrector jumping to a different sheet
    if np.linalg.norm(z - predictor) > max(2 * h, 10 * settings.tolerance):
        raise StepFailed("[Continuation] corrector left the step neighborhood", h=h)
    tangent = branch_tangent(problem, z, previous=point.tangent)
    return BranchPoint(
        z=z,
        s=point.s + float(np.linalg.norm(z - point.z)),
        tangent=tangent,
        amplitude=problem.amplitude(z),
    )


def start_point(
    problem: ContinuationProblem, z: np.ndarray, direction: int = 1
) -> BranchPoint:
    z = np.asarray(z, dtype=float)
    return BranchPoint(
        z=z,
        s=0.0,
        tangent=branch_tangent(problem, z, direction=direction),
        amplitude=problem.amplitude(z),
    )


def _sign(value: float) -> int:
    return 1 if value > 0 else (-1 if value < 0 else 0)


def _bisect_fold(
    problem: ContinuationProblem,
    left: BranchPoint,
    right: BranchPoint,
    settings: ContinuationSettings,
) -> BranchPoint:
    """Shrink the bracket on pseudo-arclength until the λ-tangent sign change is localized."""
    side = _sign(left.tangent[-1])
    low, high = 0.0, float(np.linalg.norm(right.z - left.z))
    best = left
    exact = settings.model_copy(update={"h_min": 0.0, "h_initial": 0.0})
    while high - low > settings.fold_bisection_tolerance:
        mid = 0.5 * (low + high)
        try:
            candidate = predictor_corrector_step(problem, left, mid, exact)
        except HomoclinicError:
            break
        if _sign(candidate.tangent[-1]) == side:
            low, best = mid, candidate
        else:
            high = mid
    return best


def refine_fold(
    problem: ContinuationProblem,
    z: np.ndarray,
    u: np.ndarray,
    settings: ContinuationSettings,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve {F = 0, D_xF·u = 0, ‖u‖² = 1} for (z, u)."""
    m = problem.size
    u = u / np.linalg.norm(u)
    for iteration in range(settings.max_iterations + 1):
        jac = problem.jacobian(z)
        residual = np.concatenate(
            (problem.residual(z), jac[:, :m] @ u, [u @ u - 1.0])
        )
        norm = float(np.max(np.abs(residual)))
        logger.trace(f"[Fold] augmented iteration {iteration} residual {norm:.3e}")
        if norm <= settings.tolerance:
            return z, u
        if iteration == settings.max_iterations or not np.isfinite(norm):
            break
        augmented = np.zeros((2 * m + 1, 2 * m + 1))
        augmented[:m, : m + 1] = jac
        augmented[m : 2 * m, : m + 1] = problem.second_action(z, u)
        augmented[m : 2 * m, m + 1 :] = jac[:, :m]
        augmented[2 * m, m + 1 :] = 2 * u
        if np.linalg.cond(augmented) > AUGMENTED_CONDITION_LIMIT:
            raise AugmentedSingular(
                "[Fold] augmented fold system is singular", lam=float(z[-1])
            )
        delta = LA.solve(augmented, -residual)
        z = z + delta[: m + 1]
        u = u + delta[m + 1 :]
    raise AugmentedSingular(
        "[Fold] augmented fold system did not converge", lam=float(z[-1]), residual=norm
    )


def locate_fold(
    problem: ContinuationProblem,
    left: BranchPoint,
    right: BranchPoint,
    settings: ContinuationSettings | None = None,
) -> FoldEvent:
    """Fold between two branch points whose tangent λ-components differ in sign."""
    settings = settings or ContinuationSettings()
    if _sign(left.tangent[-1]) * _sign(right.tangent[-1]) >= 0:
        raise NoSignChange(
            "[Fold] no sign change of the tangent λ-component in the bracket",
            left=float(left.tangent[-1]),
            right=float(right.tangent[-1]),
        )
    # λ increasing before the fold means a local maximum
    side: FoldSide = "R" if left.tangent[-1] > 0 else "L"
    near = _bisect_fold(problem, left, right, settings)
    guess = near.tangent[:-1]
    if np.linalg.norm(guess) < 1e-8:
        guess = LA.svd(problem.jacobian(near.z)[:, :-1])[2][-1]
    try:
        z, u = refine_fold(problem, near.z, guess, settings)
        quadratic = True
    except (AugmentedSingular, LA.LinAlgError) as e:
        logger.warning(f"[Fold] {side}-fold near λ={near.lam:.8f} is not quadratic: {e}")
        z, u, quadratic = near.z, guess / np.linalg.norm(guess), False
    if float(u @ near.tangent[:-1]) < 0:
        u = -u
    s = near.s + float(np.linalg.norm(z - near.z))
    logger.info(f"[Fold] {side}-fold at λ={z[-1]:.10f}, s={s:.4f}")
    return FoldEvent(
        lam=float(z[-1]), z=z, side=side, s=s, kernel=u, quadratic=quadratic, tangent=near.tangent
    )


def _crossing_between(
    problem: ContinuationProblem,
    a: BranchPoint,
    b: BranchPoint,
    lambda_tilde: float,
    settings: ContinuationSettings,
) -> BranchCrossing | None:
    da, db = a.lam - lambda_tilde, b.lam - lambda_tilde
    if not (da * db < 0 or (db == 0 and da != 0)):
        return None
    theta = da / (da - db)
    guess = a.z + theta * (b.z - a.z)
    try:
        z = problem.solve_at(guess, lambda_tilde, settings.newton())
    except HomoclinicError as e:
        logger.warning(f"[Continuation] λ̃-crossing re-solve failed: {e.message}")
        return None
    return BranchCrossing(s=a.s + theta * (b.s - a.s), z=z, index=-1)


def _closing_point(
    problem: ContinuationProblem,
    last: BranchPoint,
    start: BranchPoint,
    settings: ContinuationSettings,
) -> BranchPoint | None:
    """Point on the branch in the hyperplane through start normal to its tangent."""
    try:
        z = _correct(problem, last.z.copy(), start.tangent, start.z, settings)
    except HomoclinicError:
        return None
    if np.linalg.norm(z - start.z) > settings.closure_tolerance:
        return None
    return BranchPoint(
        z=z,
        s=last.s + float(np.linalg.norm(z - last.z)),
        tangent=branch_tangent(problem, z, previous=last.tangent),
        amplitude=problem.amplitude(z),
    )


def trace_branch(
    problem: ContinuationProblem,
    start: BranchPoint,
    settings: ContinuationSettings | None = None,
    lambda_tilde: float | None = None,
) -> Branch:
    """Pseudo-arclength continuation until closure, window exit or step budget."""
    settings = settings or ContinuationSettings()
    branch = Branch(points=[start])
    if lambda_tilde is not None and abs(start.lam - lambda_tilde) <= 1e-12:
        branch.crossings.append(BranchCrossing(s=0.0, z=start.z, index=0))

    def record_segment(a: BranchPoint, b: BranchPoint) -> None:
        if settings.locate_folds and _sign(a.tangent[-1]) * _sign(b.tangent[-1]) < 0:
            try:
                branch.folds.append(locate_fold(problem, a, b, settings))
            except HomoclinicError as e:
                logger.warning(f"[Fold] fold location failed: {e.message}")
        if lambda_tilde is None:
            return
        crossing = _crossing_between(problem, a, b, lambda_tilde, settings)
        if crossing is None:
            return
        if any(np.max(np.abs(crossing.z - c.z)) <= 1e-6 for c in branch.crossings):
            return
        branch.crossings.append(
            BranchCrossing(s=crossing.s, z=crossing.z, index=len(branch.crossings))
        )

    h = settings.h_initial
    accepted_run = 0
    current = start
    steps = 0
    while steps < settings.step_budget:
        try:
            candidate = predictor_corrector_step(problem, current, h, settings)
        except (StepFailed, RankDeficient) as e:
            h *= 0.5
            accepted_run = 0
            logger.debug(f"[Continuation] {e.message}; halving step to {h:.3e}")
            if h < settings.h_min:
                branch.stop_reason = "min-step"
                logger.warning(
                    f"[Continuation] minimum step reached at λ={current.lam:.8f}, branch left open"
                )
                return branch
            continue
        steps += 1

        # closure: crossing the hyperplane through start, near start
        if candidate.s >= 10 * settings.h_max:
            before = float(start.tangent @ (current.z - start.z))
            after = float(start.tangent @ (candidate.z - start.z))
            near = np.linalg.norm(candidate.z - start.z) <= 2 * settings.h_max
            if before < 0 <= after and near:
                closing = _closing_point(problem, current, start, settings)
                if closing is not None:
                    record_segment(current, closing)
                    branch.points.append(closing)
                    branch.closed = True
                    branch.stop_reason = "closed"
                    logger.info(
                        f"[Continuation] Branch closed after {steps} steps, "
                        f"arclength {closing.s:.4f}, {len(branch.folds)} folds"
                    )
                    return branch

        record_segment(current, candidate)
        branch.points.append(candidate)

        if settings.lambda_window is not None:
            lo, hi = settings.lambda_window
            if not lo <= candidate.lam <= hi:
                branch.stop_reason = "window"
                logger.info(f"[Continuation] λ={candidate.lam:.6f} left the window {lo}, {hi}")
                return branch

        current = candidate
        accepted_run += 1
        if accepted_run >= settings.grow_after:
            h = min(settings.grow_factor * h, settings.h_max)
            accepted_run = 0

    branch.stop_reason = "budget"
    logger.warning(f"[Continuation] step budget {settings.step_budget} exhausted, branch open")
    return branch
