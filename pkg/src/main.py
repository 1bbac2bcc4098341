import argparse
import os
import sys
from dataclasses import dataclass
from time import perf_counter
from typing import Callable, Sequence

from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel

from src.artifacts import ORBITS_FILE, ArtifactWriter, BranchRecord, OrbitMap, load_model
from src.bvp import OrbitSegment, assumption_report
from src.config import RunConfig, load_config
from src.continuation import Branch, HomoclinicProblem, start_point, trace_branch
from src.errors import HomoclinicError, OpenBranch
from src.folds import DEFAULT_TAU_MAX, FoldSummary, analyze_fold
from src.functions import CONFIG_DIR, future_thread_executor, resolve_path
from src.graph import (
    CyclePartition,
    LRCycle,
    PartitionRecord,
    build_graph,
    enumerate_partitions,
    export_edge_list,
    is_partition_of,
    theorem_p1_report,
)
from src.manifolds import seed_homoclinic, trace_manifolds
from src.maps import ParameterizedMap, make_map
from src.multihump import (
    CycleTable,
    enumerate_catalog,
    gap_study,
    gap_study_sequence,
    label_primary_orbits,
    trace_all_components,
)

load_dotenv(os.path.join(CONFIG_DIR, ".env"), override=True)

log_file = resolve_path(os.getenv("LOG_FILE"), "log.log")
level = os.getenv("DEBUG_LEVEL", "INFO").upper()

EXIT_SUCCESS, EXIT_FAILURE, EXIT_PARTIAL = 0, 1, 2
# room in λ around the primary folds for multi-hump continuation
WINDOW_MARGIN = 0.05
GAP_STUDY_INTERVALS = ((-20, 19), (-40, 39))


def configure_logger() -> None:
    logger.remove()
    if level not in ["INFO", "DEBUG", "TRACE"]:
        logger.add(sys.stdout)
        raise Exception("Invalid DEBUG_LEVEL, please choose between INFO, DEBUG, TRACE")
    logger.add(log_file, level=level, mode="w")
    logger.add(sys.stdout, level=level)


def build_map(config: RunConfig) -> ParameterizedMap:
    return make_map(config.map_name, a=config.henon_a, dimension=config.map_dimension)


@dataclass(eq=False)
class PrimaryRun:
    problem: HomoclinicProblem
    branch: Branch
    # symbol by crossing index, None when the branch admits no labeling
    labels: list[int] | None
    primaries: dict[int, OrbitSegment]


def trace_primary(fmap: ParameterizedMap, config: RunConfig) -> PrimaryRun:
    """Seed at λ̃, continue the one-hump branch and label its λ̃-crossings."""
    seed = seed_homoclinic(fmap, config.lambda_tilde, config.j_minus, config.j_plus)
    problem = HomoclinicProblem(fmap, seed.n_minus, seed.n_plus, seed.bc)
    start = start_point(problem, HomoclinicProblem.state(seed))
    branch = trace_branch(problem, start, config.continuation(), lambda_tilde=config.lambda_tilde)
    labels: list[int] | None = None
    primaries: dict[int, OrbitSegment] = {}
    try:
        labels = label_primary_orbits(branch)
    except HomoclinicError as e:
        logger.warning(f"[System] Primary orbits left unlabeled: {e.message}")
    else:
        primaries = {labels[c.index]: problem.to_orbit(c.z) for c in branch.crossings}
    return PrimaryRun(problem=problem, branch=branch, labels=labels, primaries=primaries)


def check_fold_order(run: PrimaryRun) -> list[str]:
    """λ(r_{2,3}) > λ(r_{0,1}) and λ(ℓ_{1,2}) > λ(ℓ_{3,0}), folds named by their neighbours."""
    if run.labels is None:
        return ["primary orbits are unlabeled"]
    crossing_s = {run.labels[c.index]: c.s for c in run.branch.crossings}
    order = sorted(crossing_s, key=crossing_s.__getitem__)
    named: dict[frozenset[int], float] = {}
    for fold in run.branch.folds:
        before = [k for k in order if crossing_s[k] < fold.s]
        a = before[-1] if before else order[-1]
        b = order[(order.index(a) + 1) % len(order)]
        named[frozenset({a, b})] = fold.lam
    problems: list[str] = []
    for high, low in (({2, 3}, {0, 1}), ({1, 2}, {3, 0})):
        hi, lo = named.get(frozenset(high)), named.get(frozenset(low))
        if hi is None or lo is None or not hi > lo:
            problems.append(f"fold ordering {sorted(high)} > {sorted(low)} fails: {hi} vs {lo}")
    return problems


def cmd_primary(config: RunConfig, writer: ArtifactWriter) -> int:
    fmap = build_map(config)
    start_time = perf_counter()
    run = trace_primary(fmap, config)
    branch = run.branch
    symbols = (
        {index: str(symbol) for index, symbol in enumerate(run.labels)} if run.labels else None
    )
    writer.write_model("branch.json", BranchRecord.from_branch(branch, symbols))
    writer.write_csv(
        "branch.csv", ("s", "lambda", "amp"), ((p.s, p.lam, p.amplitude) for p in branch.points)
    )
    logger.info(
        f"[System] One-hump branch: closed={branch.closed}, {len(branch.folds)} folds "
        f"({''.join(branch.sides())}), {len(branch.crossings)} crossings "
        f"in {perf_counter() - start_time:.2f}s"
    )

    status = EXIT_SUCCESS
    if not branch.closed:
        writer.warn(f"[System] one-hump branch is open ({branch.stop_reason})")
        status = EXIT_PARTIAL
    if len(branch.folds) != 4 or len(branch.crossings) != 4:
        writer.warn(
            f"[System] expected 4 folds and 4 crossings, got {len(branch.folds)} and "
            f"{len(branch.crossings)}"
        )
        status = EXIT_PARTIAL
    for problem in check_fold_order(run):
        writer.warn(f"[System] {problem}")
        status = EXIT_PARTIAL

    if run.primaries:
        segments = {str(symbol): orbit for symbol, orbit in run.primaries.items()}
        writer.write_model(ORBITS_FILE, OrbitMap.from_segments(segments))
        writer.write_models(
            "assumptions.json",
            [assumption_report(fmap, segments[key]) for key in sorted(segments)],
        )

    settings = config.continuation()
    summaries: list[FoldSummary] = future_thread_executor(
        [
            (analyze_fold, fmap, run.problem, fold, DEFAULT_TAU_MAX, settings, config.random_seed)
            for fold in branch.folds
        ],
        config.max_threads,
    )
    writer.write_models("tangency.json", summaries)
    for fold, summary in zip(branch.folds, summaries):
        if not fold.quadratic:
            writer.warn(f"[Fold] fold at λ={fold.lam:.8f} is not quadratic")
            status = EXIT_PARTIAL
        if not summary.accepted:
            writer.warn(f"[Fold] quadratic law not confirmed at λ={fold.lam:.8f}")
            status = EXIT_PARTIAL

    trace = trace_manifolds(fmap, config.lambda_tilde)
    writer.write_csv(
        "manifolds.csv", ("kind", "sign", "level", "index", "x1", "x2"), trace.rows()
    )
    logger.info(f"[System] Primary run finished in {perf_counter() - start_time:.2f}s")
    return status


class FailureManifest(BaseModel):
    catalog: dict[str, str] = {}
    components: dict[str, str] = {}
    open_branches: list[str] = []


def load_primaries(
    fmap: ParameterizedMap, config: RunConfig
) -> tuple[dict[int, OrbitSegment], list[float]]:
    """Primary orbits and fold λ values from the one-hump artifacts, recomputed if absent."""
    directory = os.path.join(config.output_dir, "primary")
    orbits = load_model(os.path.join(directory, ORBITS_FILE), OrbitMap)
    record = load_model(os.path.join(directory, "branch.json"), BranchRecord)
    if orbits is not None and record is not None:
        segments = {int(k): v for k, v in orbits.segments().items()}
        sample = segments.get(0)
        if (
            len(segments) == 4
            and sample is not None
            and sample.lam == config.lambda_tilde
            and (sample.n_minus, sample.n_plus) == (config.j_minus, config.j_plus)
        ):
            logger.info(f"[System] Using one-hump artifacts from {directory}")
            return segments, [f.lam for f in record.folds]
        logger.warning(f"[System] One-hump artifacts in {directory} do not match the config")

    logger.info("[System] Recomputing the primary orbits")
    run = trace_primary(fmap, config)
    if run.labels is None:
        raise OpenBranch(
            "one-hump branch gave no labeled primary orbits",
            closed=run.branch.closed,
            folds=len(run.branch.folds),
        )
    return run.primaries, [f.lam for f in run.branch.folds]


def multihump_window(config: RunConfig, fold_lambdas: Sequence[float]) -> tuple[float, float]:
    lo, hi = config.lambda_window
    if fold_lambdas:
        lo = min(lo, min(fold_lambdas) - WINDOW_MARGIN)
        hi = max(hi, max(fold_lambdas) + WINDOW_MARGIN)
    return lo, hi


def cmd_multihump(config: RunConfig, writer: ArtifactWriter) -> int:
    fmap = build_map(config)
    n = config.n_humps
    start_time = perf_counter()
    primaries, fold_lambdas = load_primaries(fmap, config)

    catalog = enumerate_catalog(
        fmap, primaries, n, settings=config.newton(), threads=config.max_threads
    )
    writer.write_model("catalog.json", OrbitMap.from_segments(catalog.entries))
    status = EXIT_SUCCESS
    if not catalog.complete:
        writer.warn(f"[Catalog] {len(catalog.failures)} symbols failed to shadow")
        status = EXIT_PARTIAL

    window = multihump_window(config, fold_lambdas)
    components = trace_all_components(fmap, catalog, config.continuation(window))
    writer.write_csv("table.csv", ("n", "cycle_length", "count"), components.table(n))
    for cycle in components.cycles:
        writer.write_model(f"cycle-{cycle.branch_id:03d}.json", cycle)
    writer.write_model("cycles.json", CycleTable(components.cycles))

    covered = sum(cycle.length for cycle in components.cycles)
    if covered != 4**n or components.failures:
        writer.warn(f"[Catalog] cycles cover {covered} of {4**n} symbols")
        status = EXIT_PARTIAL
    if catalog.failures or components.failures:
        writer.write_model(
            "failures.json",
            FailureManifest(
                catalog=catalog.failures,
                components=components.failures,
                open_branches=components.open_branches,
            ),
        )

    if n >= 2 and config.gap_study:
        rows = gap_study(
            fmap,
            primaries,
            gap_study_sequence(n),
            GAP_STUDY_INTERVALS,
            config.newton(),
        )
        writer.write_models("gap_study.json", rows)

    for row in components.table(n):
        logger.info(f"[System] Table row {row[0]},{row[1]},{row[2]}")
    logger.info(f"[System] Multi-hump run finished in {perf_counter() - start_time:.2f}s")
    return status


class CrossValidation(BaseModel):
    source: str
    cycles: int
    valid: bool
    reason: str | None = None
    among_enumerated: bool | None = None


class PartitionSummary(BaseModel):
    n: int
    exhaustive: bool
    total: int
    enumerated: int
    length_profiles: dict[str, int]
    partitions: list[PartitionRecord]


PARTITION_DUMP_LIMIT = 1000


def cmd_graph(config: RunConfig, writer: ArtifactWriter) -> int:
    n = config.n_humps
    start_time = perf_counter()
    g = build_graph(n, config.graph_max_n)
    writer.write_text("edges.txt", export_edge_list(g))

    partitions = enumerate_partitions(g, budget=config.partition_budget)
    if not partitions.exhaustive:
        writer.warn(
            f"[Graph] partition budget {config.partition_budget} reached, "
            f"{len(partitions.partitions)} of {partitions.total} enumerated"
        )
    profiles: dict[str, int] = {}
    for partition in partitions.partitions:
        key = ",".join(map(str, partition.lengths))
        profiles[key] = profiles.get(key, 0) + 1
    writer.write_model(
        "partitions.json",
        PartitionSummary(
            n=n,
            exhaustive=partitions.exhaustive,
            total=partitions.total,
            enumerated=len(partitions.partitions),
            length_profiles=dict(sorted(profiles.items())),
            partitions=[
                PartitionRecord.from_partition(p)
                for p in partitions.partitions[:PARTITION_DUMP_LIMIT]
            ],
        ),
    )

    report = theorem_p1_report(g, partitions, strict=False)
    writer.write_model("p1_report.json", report)
    status = EXIT_FAILURE if report.violations else EXIT_SUCCESS

    source = os.path.join(config.output_dir, f"multihump-n{n}", "cycles.json")
    empirical = load_model(source, CycleTable)
    if empirical is not None and empirical.root:
        cycles = [LRCycle(tuple(c.vertices), tuple(c.labels)) for c in empirical.root]
        valid, reason = is_partition_of(g, cycles)
        among = None
        if partitions.exhaustive:
            among = CyclePartition.of(cycles) in set(partitions.partitions)
        writer.write_model(
            "crossvalidation.json",
            CrossValidation(
                source=source,
                cycles=len(cycles),
                valid=valid,
                reason=reason,
                among_enumerated=among,
            ),
        )
        if not valid or among is False:
            writer.warn(f"[Graph] empirical cycles do not match G: {reason}")
            if status == EXIT_SUCCESS:
                status = EXIT_PARTIAL
        else:
            logger.info(f"[Graph] {len(cycles)} empirical cycles form a partition of G")
    logger.info(f"[System] Graph run finished in {perf_counter() - start_time:.2f}s")
    return status


COMMANDS: dict[str, Callable[[RunConfig, ArtifactWriter], int]] = {
    "primary": cmd_primary,
    "multihump": cmd_multihump,
    "graph": cmd_graph,
}


def output_directory(command: str, config: RunConfig) -> str:
    if command == "primary":
        return os.path.join(config.output_dir, "primary")
    return os.path.join(config.output_dir, f"{command}-n{config.n_humps}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--map", help="map family: henon or henon-fd")
    common.add_argument("--lambda-tilde", type=float, help="parameter of the orbit catalog")
    common.add_argument("--n", type=int, help="number of humps")
    common.add_argument("--j-minus", type=int, help="left end of J")
    common.add_argument("--j-plus", type=int, help="right end of J")
    common.add_argument("--tol", type=float, help="Newton tolerance")
    common.add_argument("--out", help="output directory")
    common.add_argument("--lambda-window", help="'lo,hi' parameter window for continuation")

    parser = argparse.ArgumentParser(
        prog="homoclinic_network",
        description="Homoclinic orbit continuation, tangencies and LR-cycle checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("primary", parents=[common], help="one-hump branch and fold analysis")
    sub.add_parser("multihump", parents=[common], help="n-hump catalog and cycle table")
    sub.add_parser("graph", parents=[common], help="transition graph and LR-cycle checks")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = load_config(args)
    writer = ArtifactWriter(output_directory(args.command, config))
    logger.info(f"[System] {args.command} run, config {config.config_hash()[:12]}")
    try:
        status = COMMANDS[args.command](config, writer)
    except HomoclinicError as e:
        logger.error(f"[System] {type(e).__name__}: {e.message}")
        writer.write_error(e)
        status = EXIT_FAILURE
    except Exception as e:
        logger.exception(f"[System] {args.command} failed: {e}")
        writer.write_error(e)
        status = EXIT_FAILURE
    writer.write_manifest(args.command, config, status)
    return status


@logger.catch
def main(argv: Sequence[str] | None = None) -> int:
    configure_logger()
    start = perf_counter()
    status = run(argv)
    logger.info(f"[System] Finished in {perf_counter() - start:.2f}s with exit code {status}")
    return status
