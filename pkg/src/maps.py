from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as LA
from loguru import logger

from src.errors import Degenerate, DomainEscape, NoConvergence, NotHyperbolic

# Modulus band around 1 inside which an eigenvalue counts as non-hyperbolic
HYPERBOLIC_MARGIN = 1e-6
FIXED_POINT_TOLERANCE = 1e-12
FD_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class MapDerivatives:
    f_x: np.ndarray
    f_lambda: np.ndarray
    f_xx: np.ndarray

    def second_order(self, u: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
        """f_xx[u, v]; with v omitted this is f_xx u²."""
        return apply_bilinear(self.f_xx, u, u if v is None else v)


def apply_bilinear(f_xx: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    # f_xx[..., i, j, l] = d²f_i / dx_j dx_l
    return np.einsum("...ijl,...j,...l->...i", f_xx, u, v)


class ParameterizedMap(ABC):
    """Smooth family of diffeomorphisms x -> f(x, λ) on R^k.

    Every evaluation method accepts a single point of shape (k,) or a stack of
    points of shape (m, k) and broadcasts over the leading axis.
    """

    name: str = "map"
    dimension: int = 2
    parameter_domain: tuple[float, float] = (-np.inf, np.inf)
    # True when derivatives come from central differences instead of formulas
    finite_difference: bool = False

    @abstractmethod
    def evaluate(self, x: np.ndarray, lam: float) -> np.ndarray: ...

    @abstractmethod
    def jacobian(self, x: np.ndarray, lam: float) -> np.ndarray: ...

    @abstractmethod
    def parameter_derivative(self, x: np.ndarray, lam: float) -> np.ndarray: ...

    @abstractmethod
    def second_derivative(self, x: np.ndarray, lam: float) -> np.ndarray: ...

    @abstractmethod
    def mixed_derivative(self, x: np.ndarray, lam: float) -> np.ndarray:
        """d/dλ of f_x, shape (..., k, k)."""

    def __call__(self, x: np.ndarray, lam: float) -> np.ndarray:
        return self.checked_evaluate(x, lam)

    def checked_evaluate(self, x: np.ndarray, lam: float) -> np.ndarray:
        out = self.evaluate(np.asarray(x, dtype=float), lam)
        if not np.all(np.isfinite(out)):
            raise DomainEscape(
                f"[{self.name}] non-finite map output at lambda={lam}",
                lam=lam,
            )
        return out

    def derivatives(self, x: np.ndarray, lam: float) -> MapDerivatives:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainEscape(f"[{self.name}] non-finite input point", lam=lam)
        return MapDerivatives(
            f_x=self.jacobian(x, lam),
            f_lambda=self.parameter_derivative(x, lam),
            f_xx=self.second_derivative(x, lam),
        )

    def metadata(self) -> dict[str, object]:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "finite_difference_derivatives": self.finite_difference,
        }

    def evaluate_inverse(
        self,
        y: np.ndarray,
        lam: float,
        seed: np.ndarray | None = None,
        tolerance: float = 1e-13,
        max_iterations: int = 50,
    ) -> np.ndarray:
        """Solve f(x, λ) = y by Newton from `seed` (defaults to y)."""
        y = np.asarray(y, dtype=float)
        x = np.array(y if seed is None else seed, dtype=float)
        for _ in range(max_iterations):
            residual = self.evaluate(x, lam) - y
            if np.max(np.abs(residual)) <= tolerance:
                return x
            x = x - np.linalg.solve(self.jacobian(x, lam), residual[..., None])[..., 0]
        raise NoConvergence(
            f"[{self.name}] inverse map did not converge", lam=lam, point=y
        )

    def fixed_point_locations(self, lam: float) -> list[np.ndarray]:
        return [self._newton_fixed_point(np.zeros(self.dimension), lam)]

    def fixed_points(self, lam: float) -> list["FixedPointData"]:
        points: list[FixedPointData] = []
        for location in self.fixed_point_locations(lam):
            data = FixedPointData.from_map(self, location, lam, require_hyperbolic=False)
            if not data.hyperbolic:
                logger.debug(
                    f"[Map] Skipping non-hyperbolic fixed point {location} at lambda={lam}"
                )
                continue
            points.append(data)
        return points

    def primary_fixed_point(self, lam: float) -> "FixedPointData":
        """The fixed point whose homoclinic orbits are computed."""
        return FixedPointData.from_map(self, self.fixed_point_locations(lam)[0], lam)

    def _newton_fixed_point(
        self, seed: np.ndarray, lam: float, max_iterations: int = 50
    ) -> np.ndarray:
        x = np.array(seed, dtype=float)
        identity = np.eye(self.dimension)
        for _ in range(max_iterations):
            residual = self.evaluate(x, lam) - x
            if np.max(np.abs(residual)) <= FIXED_POINT_TOLERANCE:
                return x
            try:
                x = x - LA.solve(self.jacobian(x, lam) - identity, residual)
            except LA.LinAlgError as e:
                raise NoConvergence(
                    f"[{self.name}] singular fixed point Newton step: {e}", lam=lam
                ) from e
        raise NoConvergence(
            f"[{self.name}] fixed point Newton did not converge from {seed}",
            lam=lam,
            seed=seed,
        )


class HenonMap(ParameterizedMap):
    """f(x, λ) = (1 + x2 − a x1², λ x1), a fixed and λ the contraction coefficient.

    det f_x = −λ, so the map is a diffeomorphism for every λ != 0.
    """

    name = "henon"
    dimension = 2

    def __init__(self, a: float = 1.4) -> None:
        if a == 0:
            raise Degenerate("Henon quadratic coefficient a must be nonzero")
        self.a = float(a)

    def evaluate(self, x: np.ndarray, lam: float) -> np.ndarray:
        x1 = x[..., 0]
        x2 = x[..., 1]
        return np.stack((1.0 + x2 - self.a * x1**2, lam * x1), axis=-1)

    def jacobian(self, x: np.ndarray, lam: float) -> np.ndarray:
        x1 = x[..., 0]
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = -2.0 * self.a * x1
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = lam
        return out

    def parameter_derivative(self, x: np.ndarray, lam: float) -> np.ndarray:
        out = np.zeros_like(x, dtype=float)
        out[..., 1] = x[..., 0]
        return out

    def second_derivative(self, x: np.ndarray, lam: float) -> np.ndarray:
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = -2.0 * self.a
        return out

    def mixed_derivative(self, x: np.ndarray, lam: float) -> np.ndarray:
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 1, 0] = 1.0
        return out

    def evaluate_inverse(
        self,
        y: np.ndarray,
        lam: float,
        seed: np.ndarray | None = None,
        tolerance: float = 1e-13,
        max_iterations: int = 50,
    ) -> np.ndarray:
        if lam == 0:
            raise Degenerate("Henon map is not invertible at lambda=0", lam=lam)
        y = np.asarray(y, dtype=float)
        x1 = y[..., 1] / lam
        return np.stack((x1, y[..., 0] - 1.0 + self.a * x1**2), axis=-1)

    def fixed_point_locations(self, lam: float) -> list[np.ndarray]:
        # x2 = λ x1 and a x1² + (1 − λ) x1 − 1 = 0; the + root comes first
        discriminant = (1.0 - lam) ** 2 + 4.0 * self.a
        if discriminant < 0:
            if discriminant > -1e-14 * max(1.0, abs(4.0 * self.a)):
                discriminant = 0.0
            else:
                raise Degenerate(
                    f"no real Henon fixed points at lambda={lam}",
                    lam=lam,
                    discriminant=discriminant,
                )
        root = np.sqrt(discriminant)
        locations = []
        for sign in (1.0, -1.0):
            nu = ((lam - 1.0) + sign * root) / (2.0 * self.a)
            locations.append(np.array([nu, lam * nu]))
        return locations


class FiniteDifferenceMap(ParameterizedMap):
    """Wraps a bare map callable and supplies central-difference derivatives."""

    finite_difference = True

    def __init__(
        self,
        function: Callable[[np.ndarray, float], np.ndarray],
        dimension: int,
        name: str = "fd-map",
        step: float = FD_STEP,
        inverse: Callable[[np.ndarray, float], np.ndarray] | None = None,
        fixed_point_seeds: list[np.ndarray] | None = None,
    ) -> None:
        self.function = function
        self.dimension = dimension
        self.name = name
        self.step = step
        self.inverse = inverse
        self.fixed_point_seeds = fixed_point_seeds or [np.zeros(dimension)]

    def evaluate(self, x: np.ndarray, lam: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.asarray(self.function(x, lam), dtype=float)
        return np.stack([np.asarray(self.function(p, lam), dtype=float) for p in x])

    def jacobian(self, x: np.ndarray, lam: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        columns = []
        for j in range(self.dimension):
            e = np.zeros(self.dimension)
            e[j] = self.step
            columns.append(
                (self.evaluate(x + e, lam) - self.evaluate(x - e, lam)) / (2 * self.step)
            )
        return np.stack(columns, axis=-1)

    def parameter_derivative(self, x: np.ndarray, lam: float) -> np.ndarray:
        return (self.evaluate(x, lam + self.step) - self.evaluate(x, lam - self.step)) / (
            2 * self.step
        )

    def second_derivative(self, x: np.ndarray, lam: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        slices = []
        for l in range(self.dimension):
            e = np.zeros(self.dimension)
            e[l] = self.step
            slices.append(
                (self.jacobian(x + e, lam) - self.jacobian(x - e, lam)) / (2 * self.step)
            )
        return np.stack(slices, axis=-1)

    def mixed_derivative(self, x: np.ndarray, lam: float) -> np.ndarray:
        return (self.jacobian(x, lam + self.step) - self.jacobian(x, lam - self.step)) / (
            2 * self.step
        )

    def evaluate_inverse(
        self,
        y: np.ndarray,
        lam: float,
        seed: np.ndarray | None = None,
        tolerance: float = 1e-13,
        max_iterations: int = 50,
    ) -> np.ndarray:
        if self.inverse is not None:
            return np.asarray(self.inverse(y, lam), dtype=float)
        y = np.asarray(y, dtype=float)
        if y.ndim == 2:
            seeds = y if seed is None else seed
            return np.stack(
                [
                    super(FiniteDifferenceMap, self).evaluate_inverse(
                        p, lam, s, tolerance, max_iterations
                    )
                    for p, s in zip(y, seeds)
                ]
            )
        return super().evaluate_inverse(y, lam, seed, tolerance, max_iterations)

    def fixed_point_locations(self, lam: float) -> list[np.ndarray]:
        return [self._newton_fixed_point(seed, lam) for seed in self.fixed_point_seeds]


@dataclass(frozen=True, eq=False)
class FixedPointData:
    location: np.ndarray
    lam: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    left_eigenvectors: np.ndarray
    jacobian: np.ndarray
    hyperbolic: bool
    residual: float

    @classmethod
    def from_map(
        cls,
        fmap: ParameterizedMap,
        location: np.ndarray,
        lam: float,
        require_hyperbolic: bool = True,
    ) -> "FixedPointData":
        location = np.asarray(location, dtype=float)
        residual = float(np.max(np.abs(fmap.evaluate(location, lam) - location)))
        if residual > FIXED_POINT_TOLERANCE * max(1.0, float(np.max(np.abs(location)))):
            raise NoConvergence(
                f"[Map] {location} is not a fixed point at lambda={lam}",
                residual=residual,
            )
        jac = fmap.jacobian(location, lam)
        eigenvalues, left, right = LA.eig(jac, left=True, right=True)
        moduli = np.abs(eigenvalues)
        hyperbolic = bool(np.all(np.abs(moduli - 1.0) > HYPERBOLIC_MARGIN))
        if require_hyperbolic and not hyperbolic:
            raise NotHyperbolic(
                f"[Map] fixed point at lambda={lam} is not hyperbolic",
                eigenvalues=eigenvalues,
            )
        return cls(
            location=location,
            lam=float(lam),
            eigenvalues=eigenvalues,
            eigenvectors=right,
            left_eigenvectors=left,
            jacobian=jac,
            hyperbolic=hyperbolic,
            residual=residual,
        )

    @property
    def stable_mask(self) -> np.ndarray:
        return np.abs(self.eigenvalues) < 1.0 - HYPERBOLIC_MARGIN

    @property
    def unstable_mask(self) -> np.ndarray:
        return np.abs(self.eigenvalues) > 1.0 + HYPERBOLIC_MARGIN

    @property
    def stable_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[self.stable_mask]

    @property
    def unstable_eigenvalues(self) -> np.ndarray:
        return self.eigenvalues[self.unstable_mask]

    @property
    def mu_s(self) -> complex:
        """Stable eigenvalue closest to the unit circle."""
        values = self.stable_eigenvalues
        return values[np.argmax(np.abs(values))]

    @property
    def mu_u(self) -> complex:
        """Unstable eigenvalue closest to the unit circle."""
        values = self.unstable_eigenvalues
        return values[np.argmin(np.abs(values))]


@dataclass(frozen=True, eq=False)
class HyperbolicSplitting:
    stable_basis: np.ndarray
    unstable_basis: np.ndarray
    projector_stable: np.ndarray
    projector_unstable: np.ndarray
    # B_s (x − ξ) = 0  <=>  x − ξ in the unstable subspace (left endpoint)
    boundary_stable: np.ndarray
    # B_u (x − ξ) = 0  <=>  x − ξ in the stable subspace (right endpoint)
    boundary_unstable: np.ndarray
    fixed_point: FixedPointData = field(repr=False)

    @property
    def stable_dimension(self) -> int:
        return self.stable_basis.shape[1]

    @property
    def unstable_dimension(self) -> int:
        return self.unstable_basis.shape[1]


def _real_span(vectors: np.ndarray, eigenvalues: np.ndarray) -> np.ndarray:
    """Real basis (columns) of the span of possibly complex eigenvectors."""
    columns = []
    for value, vector in zip(eigenvalues, vectors.T):
        if abs(value.imag) <= 1e-12:
            columns.append(vector.real)
        elif value.imag > 0:
            columns.extend((vector.real, vector.imag))
    return LA.orth(np.array(columns).T)


def _sign_normalize(rows: np.ndarray) -> np.ndarray:
    # largest component positive keeps B_s(λ), B_u(λ) continuous in λ
    out = rows.copy()
    for i, row in enumerate(out):
        if row[np.argmax(np.abs(row))] < 0:
            out[i] = -row
    return out


def hyperbolic_splitting(fp: FixedPointData) -> HyperbolicSplitting:
    if not fp.hyperbolic:
        raise NotHyperbolic(
            f"[Map] cannot split a non-hyperbolic fixed point at lambda={fp.lam}",
            eigenvalues=fp.eigenvalues,
        )
    stable, unstable = fp.stable_mask, fp.unstable_mask
    right = fp.eigenvectors
    inverse = LA.inv(right)
    projector_stable = np.real(right[:, stable] @ inverse[stable, :])
    projector_unstable = np.real(right[:, unstable] @ inverse[unstable, :])

    # Rows of V^{-1} are left eigenvectors; stable rows annihilate unstable vectors.
    boundary_stable = _sign_normalize(
        _real_span(inverse[stable, :].conj().T, fp.eigenvalues[stable]).T
    )
    boundary_unstable = _sign_normalize(
        _real_span(inverse[unstable, :].conj().T, fp.eigenvalues[unstable]).T
    )

    return HyperbolicSplitting(
        stable_basis=_real_span(right[:, stable], fp.eigenvalues[stable]),
        unstable_basis=_real_span(right[:, unstable], fp.eigenvalues[unstable]),
        projector_stable=projector_stable,
        projector_unstable=projector_unstable,
        boundary_stable=boundary_stable,
        boundary_unstable=boundary_unstable,
        fixed_point=fp,
    )


def finite_difference_error(
    fmap: ParameterizedMap,
    rng: np.random.Generator,
    samples: int = 100,
    box: float = 3.0,
    lam_range: tuple[float, float] = (0.1, 1.0),
    step: float = FD_STEP,
) -> float:
    """Largest relative deviation of f_x and f_λ from central differences."""
    worst = 0.0
    k = fmap.dimension
    for _ in range(samples):
        x = rng.uniform(-box, box, size=k)
        lam = float(rng.uniform(*lam_range))
        analytic = fmap.jacobian(x, lam)
        numeric = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = step
            numeric[:, j] = (fmap.evaluate(x + e, lam) - fmap.evaluate(x - e, lam)) / (
                2 * step
            )
        f_lam = fmap.parameter_derivative(x, lam)
        numeric_lam = (fmap.evaluate(x, lam + step) - fmap.evaluate(x, lam - step)) / (
            2 * step
        )
        scale = max(1.0, float(np.max(np.abs(analytic))))
        worst = max(worst, float(np.max(np.abs(analytic - numeric))) / scale)
        scale_lam = max(1.0, float(np.max(np.abs(f_lam))))
        worst = max(worst, float(np.max(np.abs(f_lam - numeric_lam))) / scale_lam)
    return worst


def make_map(name: str, a: float = 1.4, dimension: int = 2) -> ParameterizedMap:
    name = name.lower().strip()
    if name == "henon":
        fmap: ParameterizedMap = HenonMap(a)
    elif name == "henon-fd":
        henon = HenonMap(a)
        fmap = FiniteDifferenceMap(
            henon.evaluate,
            dimension=2,
            name="henon-fd",
            inverse=henon.evaluate_inverse,
        )
        fmap.fixed_point_locations = henon.fixed_point_locations  # type: ignore[method-assign]
        logger.warning("[Map] Using finite-difference derivatives for henon-fd")
    else:
        raise ValueError(f"Unknown map '{name}', choose between henon, henon-fd")

    if fmap.dimension != dimension:
        raise ValueError(
            f"Map '{name}' has dimension {fmap.dimension}, config requested {dimension}"
        )
    return fmap
