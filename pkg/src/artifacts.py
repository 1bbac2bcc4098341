import csv
import json
import os
import shutil
import sys
from importlib.metadata import PackageNotFoundError, version
from typing import Any, Iterable, Sequence, TypeVar

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, RootModel

from src.bvp import OrbitRecord, OrbitSegment
from src.config import RunConfig
from src.continuation import Branch
from src.errors import HomoclinicError

ModelT = TypeVar("ModelT", bound=BaseModel)

ORBITS_FILE = "orbits.json"
TRACKED_PACKAGES = ("numpy", "scipy", "networkx", "pydantic", "loguru", "python-dotenv")


class BranchPointRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    s: float
    lam: float = Field(alias="lambda")
    amp: float


class FoldRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    lam: float = Field(alias="lambda")
    side: str
    s: float
    quadratic: bool


class CrossingRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    index: int
    s: float
    lam: float = Field(alias="lambda")
    symbol: str | None = None
    # "orbits.json#<symbol>", the stored orbit of this crossing
    orbit: str | None = None

    @classmethod
    def labelled(cls, index: int, s: float, lam: float, symbol: str | None) -> "CrossingRecord":
        orbit = f"{ORBITS_FILE}#{symbol}" if symbol is not None else None
        return cls(index=index, s=s, lam=lam, symbol=symbol, orbit=orbit)


class BranchRecord(BaseModel):
    closed: bool
    stop_reason: str
    arclength: float
    points: list[BranchPointRecord]
    folds: list[FoldRecord]
    crossings: list[CrossingRecord]

    @classmethod
    def from_branch(
        cls, branch: Branch, symbols: dict[int, str] | None = None
    ) -> "BranchRecord":
        symbols = symbols or {}
        return cls(
            closed=branch.closed,
            stop_reason=branch.stop_reason,
            arclength=branch.arclength,
            points=[
                BranchPointRecord(s=p.s, lam=p.lam, amp=p.amplitude) for p in branch.points
            ],
            folds=[
                FoldRecord(lam=f.lam, side=f.side, s=f.s, quadratic=f.quadratic)
                for f in branch.folds
            ],
            crossings=[
                CrossingRecord.labelled(
                    c.index, c.s, float(c.z[-1]), symbols.get(c.index)
                )
                for c in branch.crossings
            ],
        )


class OrbitMap(RootModel[dict[str, OrbitRecord]]):
    """Symbol string to orbit record."""

    @classmethod
    def from_segments(cls, segments: dict[str, OrbitSegment]) -> "OrbitMap":
        return cls({key: OrbitRecord.from_segment(segments[key]) for key in sorted(segments)})

    def segments(self) -> dict[str, OrbitSegment]:
        return {key: record.to_segment() for key, record in self.root.items()}


class ErrorRecord(BaseModel):
    error: str
    message: str
    diagnostics: dict[str, Any] = {}

    @classmethod
    def from_exception(cls, e: BaseException) -> "ErrorRecord":
        if isinstance(e, HomoclinicError):
            return cls.model_validate(e.to_dict())
        return cls(error=type(e).__name__, message=str(e))


class Manifest(BaseModel):
    command: str
    status: str
    exit_code: int
    config_hash: str
    config: RunConfig
    python: str
    versions: dict[str, str]
    files: list[str]
    warnings: list[str] = []


def package_versions(packages: Iterable[str] = TRACKED_PACKAGES) -> dict[str, str]:
    versions: dict[str, str] = {}
    for package in packages:
        try:
            versions[package] = version(package)
        except PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def load_model(path: str, model: type[ModelT]) -> ModelT | None:
    """Previously written artifact, or None when it is missing, empty or unreadable."""
    if not os.path.exists(path):
        return None

    if os.path.getsize(path) == 0:
        logger.warning(f"[System] Artifact {path} is empty, ignoring it")
        return None

    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return model.model_validate(data)
    except json.JSONDecodeError as e:
        logger.error(f"[System] Failed to decode {path}: {e}")
        backup_file = path + ".corrupted"
        try:
            shutil.copy2(path, backup_file)
            logger.info(f"[System] Corrupted artifact backed up to {backup_file}")
        except OSError as backup_error:
            logger.error(f"[System] Failed to back up corrupted artifact: {backup_error}")
        return None
    except Exception as e:
        logger.error(f"[System] Failed to load {path}: {e}")
        return None


class ArtifactWriter:
    """Single writer for one command's output directory; remembers what it wrote."""

    def __init__(self, directory: str) -> None:
        self.directory = directory
        self.files: list[str] = []
        self.warnings: list[str] = []
        os.makedirs(directory, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def _track(self, name: str) -> str:
        if name not in self.files:
            self.files.append(name)
        logger.debug(f"[System] Wrote {self.path(name)}")
        return self.path(name)

    def write_model(self, name: str, model: BaseModel) -> str:
        with open(self.path(name), "w", encoding="utf-8") as f:
            f.write(model.model_dump_json(indent=4, by_alias=True))
        return self._track(name)

    def write_models(self, name: str, models: Sequence[BaseModel]) -> str:
        payload = [m.model_dump(mode="json", by_alias=True) for m in models]
        with open(self.path(name), "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=4)
        return self._track(name)

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        # repr of Python floats always uses '.'
        with open(self.path(name), "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
        return self._track(name)

    def write_text(self, name: str, text: str) -> str:
        with open(self.path(name), "w", encoding="utf-8") as f:
            f.write(text)
        return self._track(name)

    def warn(self, message: str) -> None:
        logger.warning(message)
        self.warnings.append(message)

    def write_error(self, e: BaseException) -> str:
        return self.write_model("error.json", ErrorRecord.from_exception(e))

    def write_manifest(self, command: str, config: RunConfig, exit_code: int) -> str:
        status = {0: "success", 2: "partial"}.get(exit_code, "failure")
        manifest = Manifest(
            command=command,
            status=status,
            exit_code=exit_code,
            config_hash=config.config_hash(),
            config=config,
            python=".".join(map(str, sys.version_info[:3])),
            versions=package_versions(),
            files=sorted(self.files),
            warnings=self.warnings,
        )
        return self.write_model("manifest.json", manifest)
