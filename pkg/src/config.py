import hashlib
import os
from argparse import Namespace
from typing import Any

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.bvp import NewtonSettings
from src.continuation import ContinuationSettings
from src.functions import parse_window, str_to_bool

# environment key -> RunConfig field
ENV_KEYS: dict[str, str] = {
    "MAP_NAME": "map_name",
    "HENON_A": "henon_a",
    "MAP_DIMENSION": "map_dimension",
    "LAMBDA_TILDE": "lambda_tilde",
    "J_MINUS": "j_minus",
    "J_PLUS": "j_plus",
    "TOLERANCE": "tolerance",
    "MAX_ITERATIONS": "max_iterations",
    "LAMBDA_WINDOW": "lambda_window",
    "N_HUMPS": "n_humps",
    "OUTPUT_DIR": "output_dir",
    "RANDOM_SEED": "random_seed",
    "H_MIN": "h_min",
    "H_MAX": "h_max",
    "H_INITIAL": "h_initial",
    "STEP_BUDGET": "step_budget",
    "PARTITION_BUDGET": "partition_budget",
    "GRAPH_MAX_N": "graph_max_n",
    "MAX_THREADS": "max_threads",
    "GAP_STUDY": "gap_study",
}

BOOL_FIELDS = frozenset({"gap_study"})

# argparse destination -> RunConfig field
FLAG_KEYS: dict[str, str] = {
    "map": "map_name",
    "lambda_tilde": "lambda_tilde",
    "n": "n_humps",
    "j_minus": "j_minus",
    "j_plus": "j_plus",
    "tol": "tolerance",
    "out": "output_dir",
    "lambda_window": "lambda_window",
}


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    map_name: str = "henon"
    henon_a: float = 1.4
    map_dimension: int = Field(default=2, ge=1)
    lambda_tilde: float = 0.35
    j_minus: int = -20
    j_plus: int = 21
    tolerance: float = Field(default=1e-10, gt=0)
    max_iterations: int = Field(default=30, ge=1)
    lambda_window: tuple[float, float] = (0.25, 0.45)
    n_humps: int = Field(default=1, ge=1)
    output_dir: str = "out"
    random_seed: int = 0
    h_min: float = Field(default=1e-4, gt=0)
    h_max: float = Field(default=5e-2, gt=0)
    h_initial: float = Field(default=1e-2, gt=0)
    step_budget: int = Field(default=20000, ge=1)
    partition_budget: int = Field(default=100000, ge=1)
    graph_max_n: int = Field(default=8, ge=1)
    max_threads: int = Field(default=32, ge=1)
    gap_study: bool = True

    @model_validator(mode="after")
    def check_ranges(self) -> "RunConfig":
        if not self.j_minus < 0 < self.j_plus:
            raise ValueError(f"J must satisfy n- < 0 < n+, got [{self.j_minus}, {self.j_plus}]")
        if self.lambda_window[0] >= self.lambda_window[1]:
            raise ValueError(f"lambda window {self.lambda_window} is not ordered")
        if not self.h_min <= self.h_initial <= self.h_max:
            raise ValueError("need H_MIN <= H_INITIAL <= H_MAX")
        return self

    @classmethod
    def from_env(cls, environ: dict[str, str] | None = None) -> "RunConfig":
        """Read every known key from the environment (already populated from .env)."""
        environ = dict(os.environ) if environ is None else environ
        values: dict[str, Any] = {}
        for key, name in ENV_KEYS.items():
            raw = environ.get(key)
            if raw is None or raw.strip() == "":
                continue
            if name == "lambda_window":
                values[name] = parse_window(raw)
            elif name in BOOL_FIELDS:
                values[name] = str_to_bool(raw.strip())
            else:
                values[name] = raw.strip()
        return cls.model_validate(values)

    def with_flags(self, args: Namespace) -> "RunConfig":
        """Command-line flags override the file; unset flags leave values alone."""
        updates: dict[str, Any] = {}
        for dest, name in FLAG_KEYS.items():
            value = getattr(args, dest, None)
            if value is None:
                continue
            updates[name] = parse_window(value) if name == "lambda_window" else value
        if not updates:
            return self
        logger.debug(f"[System] Flag overrides: {updates}")
        return RunConfig.model_validate({**self.model_dump(), **updates})

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()

    def newton(self) -> NewtonSettings:
        return NewtonSettings(tolerance=self.tolerance, max_iterations=self.max_iterations)

    def continuation(
        self, lambda_window: tuple[float, float] | None = None
    ) -> ContinuationSettings:
        return ContinuationSettings(
            h_initial=self.h_initial,
            h_min=self.h_min,
            h_max=self.h_max,
            step_budget=self.step_budget,
            tolerance=self.tolerance,
            lambda_window=lambda_window,
        )


def load_config(args: Namespace | None = None) -> RunConfig:
    try:
        config = RunConfig.from_env()
        if args is not None:
            config = config.with_flags(args)
    except ValidationError as e:
        logger.error(f"[System] Invalid configuration: {e}")
        raise
    logger.debug(f"[System] Config hash {config.config_hash()[:12]}")
    return config
