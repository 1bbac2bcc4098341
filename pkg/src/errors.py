from typing import Any


class HomoclinicError(Exception):
    """Base error; `diagnostics` ends up in the CLI's error.json."""

    def __init__(self, message: str, **diagnostics: Any) -> None:
        super().__init__(message)
        self.message = message
        self.diagnostics: dict[str, Any] = diagnostics

    def to_dict(self) -> dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "diagnostics": {k: _plain(v) for k, v in self.diagnostics.items()},
        }


def _plain(value: Any) -> Any:
    # numpy scalars and arrays are not JSON serializable
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    return value


# map-core
class DomainEscape(HomoclinicError):
    pass


class Degenerate(HomoclinicError):
    pass


class NotHyperbolic(HomoclinicError):
    pass


# orbit-bvp
class NoConvergence(HomoclinicError):
    pass


class SingularJacobian(HomoclinicError):
    pass


class NoIntersectionFound(HomoclinicError):
    pass


# arclength-continuation
class RankDeficient(HomoclinicError):
    pass


class StepFailed(HomoclinicError):
    pass


class MinStepReached(HomoclinicError):
    pass


class NoSignChange(HomoclinicError):
    pass


class AugmentedSingular(HomoclinicError):
    pass


class OpenBranch(HomoclinicError):
    pass


# fold-analysis
class KernelNotSimple(HomoclinicError):
    pass


class InsufficientPoints(HomoclinicError):
    pass


# multihump-catalog
class GapTooSmall(HomoclinicError):
    pass


class AmbiguousMatch(HomoclinicError):
    pass


# tangle-graph
class BudgetExceeded(HomoclinicError):
    pass


class ClauseViolation(HomoclinicError):
    pass
