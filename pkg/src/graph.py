from collections import deque
from dataclasses import dataclass, field
from itertools import islice, product
from typing import Iterator, Literal, Sequence

import networkx as nx
from loguru import logger
from pydantic import BaseModel

from src.errors import BudgetExceeded, ClauseViolation

Label = Literal["L", "R"]

DEFAULT_MAX_N = 8
DEFAULT_PARTITION_BUDGET = 100_000

# unconditional and conditional symbol swaps per label
_ALWAYS: dict[Label, frozenset[int]] = {"R": frozenset({0, 1}), "L": frozenset({1, 2})}
_CONDITIONAL: dict[Label, frozenset[int]] = {"R": frozenset({2, 3}), "L": frozenset({0, 3})}


def cycle_distance(a: int, b: int) -> int:
    """Distance on the cycle 0-1-2-3-0."""
    d = abs(a - b) % 4
    return min(d, 4 - d)


def edge_label(a: str, b: str) -> Label | None:
    """Label of the edge between two symbol strings, None if there is no edge."""
    if len(a) != len(b) or a == b:
        return None
    diff = [j for j in range(len(a)) if a[j] != b[j]]
    if len(diff) != 1:
        return None
    pair = frozenset({int(a[diff[0]]), int(b[diff[0]])})
    for label in ("R", "L"):
        if pair == _ALWAYS[label]:
            return label
        if pair == _CONDITIONAL[label] and all(int(c) in _CONDITIONAL[label] for c in a + b):
            return label
    return None


def build_graph(n: int, max_n: int = DEFAULT_MAX_N) -> nx.Graph:
    """Labeled transition graph on {0,1,2,3}^n."""
    if not 1 <= n <= max_n:
        raise BudgetExceeded(f"[Graph] n={n} outside 1..{max_n}", n=n, max_n=max_n)
    g = nx.Graph(n=n)
    vertices = ["".join(map(str, s)) for s in product(range(4), repeat=n)]
    g.add_nodes_from(vertices)
    for v in vertices:
        for j in range(n):
            for t in "0123":
                u = v[:j] + t + v[j + 1 :]
                if u > v:
                    label = edge_label(v, u)
                    if label is not None:
                        g.add_edge(v, u, label=label)
    logger.debug(
        f"[Graph] n={n}: {g.number_of_nodes()} vertices, "
        f"{len(label_edges(g, 'L'))} L-edges, {len(label_edges(g, 'R'))} R-edges"
    )
    return g


def label_edges(g: nx.Graph, label: Label) -> list[tuple[str, str]]:
    return [(u, v) for u, v, lab in g.edges(data="label") if lab == label]


def label_subgraph(g: nx.Graph, label: Label) -> nx.Graph:
    sub = nx.Graph()
    sub.add_nodes_from(g.nodes)
    sub.add_edges_from(label_edges(g, label))
    return sub


def export_edge_list(g: nx.Graph) -> str:
    """"s_from s_to label" lines."""
    return "\n".join(nx.generate_edgelist(g, data=["label"])) + "\n"


def _other(label: Label) -> Label:
    return "L" if label == "R" else "R"


@dataclass(frozen=True)
class LRCycle:
    vertices: tuple[str, ...]
    # labels[i] belongs to the edge vertices[i] -> vertices[i + 1], cyclically
    labels: tuple[Label, ...]

    @property
    def length(self) -> int:
        return len(self.vertices)

    def canonical(self) -> "LRCycle":
        """Minimal rotation over both orientations among those whose first edge is R."""
        m = self.length
        candidates = []
        for i in range(m):
            if self.labels[i] == "R":
                vertices = tuple(self.vertices[(i + j) % m] for j in range(m))
                labels = tuple(self.labels[(i + j) % m] for j in range(m))
                candidates.append((vertices, labels))
            # reversed walk from vertex i uses the edge (i-1, i)
            if self.labels[(i - 1) % m] == "R":
                vertices = tuple(self.vertices[(i - j) % m] for j in range(m))
                labels = tuple(self.labels[(i - 1 - j) % m] for j in range(m))
                candidates.append((vertices, labels))
        if not candidates:
            return self
        vertices, labels = min(candidates)
        return LRCycle(vertices, labels)


@dataclass(frozen=True)
class CyclePartition:
    cycles: tuple[LRCycle, ...]

    @classmethod
    def of(cls, cycles: Sequence[LRCycle]) -> "CyclePartition":
        return cls(tuple(sorted((c.canonical() for c in cycles), key=lambda c: c.vertices)))

    @property
    def lengths(self) -> list[int]:
        return sorted(c.length for c in self.cycles)

    def cycle_of(self, vertex: str) -> LRCycle | None:
        for cycle in self.cycles:
            if vertex in cycle.vertices:
                return cycle
        return None


def validate_cycle(g: nx.Graph, cycle: LRCycle) -> tuple[bool, str | None]:
    m = cycle.length
    if m < 2 or len(cycle.labels) != m:
        return False, f"cycle needs matching vertex and label lists, got {m} and {len(cycle.labels)}"
    if len(set(cycle.vertices)) != m:
        return False, "cycle repeats a vertex"
    if m % 2:
        return False, f"odd length {m} cannot alternate labels"
    for i in range(m):
        a, b = cycle.vertices[i], cycle.vertices[(i + 1) % m]
        if not g.has_edge(a, b):
            return False, f"no edge {a} -> {b}"
        actual = g.edges[a, b]["label"]
        if actual != cycle.labels[i]:
            return False, f"edge {a} -> {b} is {actual}, not {cycle.labels[i]}"
        if cycle.labels[i] == cycle.labels[(i + 1) % m]:
            return False, f"labels do not alternate at {b}"
    return True, None


def is_partition_of(g: nx.Graph, cycles: Sequence[LRCycle]) -> tuple[bool, str | None]:
    """Valid, vertex-disjoint LR-cycles covering every vertex of g."""
    covered: set[str] = set()
    for cycle in cycles:
        ok, reason = validate_cycle(g, cycle)
        if not ok:
            return False, f"{'-'.join(cycle.vertices)}: {reason}"
        overlap = covered.intersection(cycle.vertices)
        if overlap:
            return False, f"vertices {sorted(overlap)} covered twice"
        covered.update(cycle.vertices)
    missing = set(g.nodes) - covered
    if missing:
        return False, f"{len(missing)} vertices uncovered, e.g. {min(missing)}"
    return True, None


def perfect_matchings(sub: nx.Graph) -> Iterator[dict[str, str]]:
    """All perfect matchings, extending from the smallest unmatched vertex."""
    order = sorted(sub.nodes)
    neighbors = {v: sorted(sub.neighbors(v)) for v in order}
    partner: dict[str, str] = {}

    def extend(index: int) -> Iterator[dict[str, str]]:
        while index < len(order) and order[index] in partner:
            index += 1
        if index == len(order):
            yield dict(partner)
            return
        v = order[index]
        for u in neighbors[v]:
            if u not in partner:
                partner[v], partner[u] = u, v
                yield from extend(index + 1)
                del partner[v], partner[u]

    yield from extend(0)


def cycles_from_matchings(
    matching_l: dict[str, str], matching_r: dict[str, str]
) -> list[LRCycle]:
    cycles: list[LRCycle] = []
    seen: set[str] = set()
    for start in sorted(matching_r):
        if start in seen:
            continue
        vertices: list[str] = []
        labels: list[Label] = []
        v, label = start, "R"
        while True:
            vertices.append(v)
            labels.append(label)
            seen.add(v)
            v = (matching_r if label == "R" else matching_l)[v]
            label = _other(label)
            if v == start:
                break
        cycles.append(LRCycle(tuple(vertices), tuple(labels)))
    return cycles


@dataclass(eq=False)
class PartitionSet:
    partitions: list[CyclePartition] = field(default_factory=list)
    total: int = 0

    @property
    def exhaustive(self) -> bool:
        return len(self.partitions) == self.total


def count_perfect_matchings(sub: nx.Graph) -> int:
    """Product of the matching counts of the connected components."""
    total = 1
    for component in nx.connected_components(sub):
        if len(component) % 2:
            return 0
        total *= sum(1 for _ in perfect_matchings(sub.subgraph(component)))
    return total


def iter_partitions(g: nx.Graph) -> Iterator[CyclePartition]:
    """Lazily yields every LR-cycle partition of g, L-matching major."""
    sub_l, sub_r = label_subgraph(g, "L"), label_subgraph(g, "R")
    for matching_l in perfect_matchings(sub_l):
        for matching_r in perfect_matchings(sub_r):
            yield CyclePartition.of(cycles_from_matchings(matching_l, matching_r))


def enumerate_partitions(
    g: nx.Graph, budget: int = DEFAULT_PARTITION_BUDGET, strict: bool = False
) -> PartitionSet:
    """LR-cycle partitions of g, as pairs of perfect matchings of its L and R subgraphs.

    One L-edge and one R-edge meet at every vertex of a partition, and a
    vertex pair never carries both labels, so each pair of matchings is a
    partition and each partition arises exactly once. At most budget of
    them are kept; the total is counted without enumerating the product.
    """
    count_l = count_perfect_matchings(label_subgraph(g, "L"))
    count_r = count_perfect_matchings(label_subgraph(g, "R"))
    result = PartitionSet(
        partitions=list(islice(iter_partitions(g), budget)), total=count_l * count_r
    )
    logger.info(
        f"[Graph] {len(result.partitions)} of {result.total} partitions enumerated "
        f"({count_l} L-matchings, {count_r} R-matchings)"
    )
    if not result.exhaustive:
        logger.warning(f"[Graph] partition budget {budget} exhausted")
        if strict:
            raise BudgetExceeded(
                f"[Graph] partition budget {budget} exhausted",
                enumerated=len(result.partitions),
                total=result.total,
            )
    return result


def lr_parity_certificate(g: nx.Graph) -> bool:
    """True if g has a 2-colouring that R-edges flip and L-edges keep.

    Closing an LR-cycle then needs an even number of R-edges, so every
    LR-cycle, in any partition, has length ≡ 0 mod 4.
    """
    colour: dict[str, int] = {}
    for root in sorted(g.nodes):
        if root in colour:
            continue
        colour[root] = 0
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for u in g.neighbors(v):
                expected = colour[v] ^ (g.edges[v, u]["label"] == "R")
                if u not in colour:
                    colour[u] = expected
                    queue.append(u)
                elif colour[u] != expected:
                    return False
    return True


def shared_cycle_lower_bound(g: nx.Graph) -> int:
    """Twice the distance from (0…0) to (2…2): each of the two arcs of a shared cycle is a path."""
    n = g.graph["n"]
    try:
        return 2 * nx.shortest_path_length(g, "0" * n, "2" * n)
    except nx.NetworkXNoPath:
        return 0


def proof_cycle(n: int) -> LRCycle:
    """The explicit 4n-cycle through (0…0) and (2…2)."""
    vertices: list[list[int]] = []
    s = [0] * n
    vertices.append(list(s))
    for j in range(n):
        for value in (1, 2):
            s[j] = value
            vertices.append(list(s))
    s[0] = 3
    vertices.append(list(s))
    for j in range(1, n):
        for value in (1, 0):
            s[j] = value
            vertices.append(list(s))
    # the last step 3 -> 0 in the first coordinate closes the cycle
    labels: list[Label] = ["R" if i % 2 == 0 else "L" for i in range(len(vertices))]
    return LRCycle(tuple("".join(map(str, v)) for v in vertices), tuple(labels))


def proof_step_iii_check(g: nx.Graph) -> tuple[bool, int]:
    """No alternating path from (2…2) starting with an L-edge reaches a symbol containing 3.

    The search runs in g without (0…0) and without the R-edges at (2…2).
    Returns the verdict and the number of reachable (vertex, next label) states.
    """
    n = g.graph["n"]
    s0, s2 = "0" * n, "2" * n
    start = (s2, "L")
    seen = {start}
    queue = deque([start])
    while queue:
        v, label = queue.popleft()
        if "3" in v:
            return False, len(seen)
        for u in g.neighbors(v):
            if u == s0 or g.edges[v, u]["label"] != label:
                continue
            if label == "R" and s2 in (u, v):
                continue
            state = (u, _other(label))
            if state not in seen:
                seen.add(state)
                queue.append(state)
    return True, len(seen)


class P1Report(BaseModel):
    n: int
    partitions_checked: int
    partitions_total: int
    # the verdict covers every partition, not only the checked ones
    complete: bool
    lengths_divisible_by_four: bool
    shared_cycle: bool
    shared_cycle_long_enough: bool
    parity_certificate: bool
    shared_cycle_lower_bound: int
    proof_cycle_length: int
    proof_cycle_valid: bool
    step_iii_holds: bool
    violations: list[str] = []


def theorem_p1_report(
    g: nx.Graph, partitions: PartitionSet, strict: bool = True
) -> P1Report:
    """Check cycle lengths ≡ 0 mod 4, and that (0…0), (2…2) share a cycle of length ≥ 4n.

    The enumerated partitions are checked one by one. The clauses hold for
    every LR-cycle when the parity certificate, step (iii) and the distance
    bound hold, which covers the partitions beyond the budget.
    """
    n = g.graph["n"]
    s0, s2 = "0" * n, "2" * n
    violations: list[str] = []

    parity = lr_parity_certificate(g)
    if not parity:
        violations.append("(a) no 2-colouring separates R-edges from L-edges")
    step_iii, _ = proof_step_iii_check(g)
    if not step_iii:
        violations.append("(iii) an alternating path from (2…2) reaches a symbol with 3")
    bound = shared_cycle_lower_bound(g)
    if bound < 4 * n:
        violations.append(f"(c) distance bound {bound} is below {4 * n}")
    mod4, shared, long_enough = parity, step_iii, bound >= 4 * n

    for index, partition in enumerate(partitions.partitions):
        for cycle in partition.cycles:
            if cycle.length % 4:
                mod4 = False
                violations.append(
                    f"(a) partition {index}: cycle {'-'.join(cycle.vertices)} has length {cycle.length}"
                )
        cycle = partition.cycle_of(s0)
        if cycle is None or s2 not in cycle.vertices:
            shared = False
            violations.append(f"(b) partition {index}: {s0} and {s2} on different cycles")
        elif cycle.length < 4 * n:
            long_enough = False
            violations.append(f"(c) partition {index}: shared cycle has length {cycle.length}")
    explicit = proof_cycle(n)
    valid, reason = validate_cycle(g, explicit)
    if not valid:
        violations.append(f"proof cycle invalid: {reason}")
    report = P1Report(
        n=n,
        partitions_checked=len(partitions.partitions),
        partitions_total=partitions.total,
        complete=partitions.exhaustive or (parity and step_iii and bound >= 4 * n),
        lengths_divisible_by_four=mod4,
        shared_cycle=shared,
        shared_cycle_long_enough=long_enough,
        parity_certificate=parity,
        shared_cycle_lower_bound=bound,
        proof_cycle_length=explicit.length,
        proof_cycle_valid=valid,
        step_iii_holds=step_iii,
        violations=violations,
    )
    if violations:
        logger.error(f"[Graph] n={n}: {len(violations)} clause violations, first: {violations[0]}")
        if strict:
            raise ClauseViolation(violations[0], n=n, violations=violations[:20])
    else:
        logger.info(
            f"[Graph] n={n}: all clauses hold for the {report.partitions_total} partitions "
            f"({report.partitions_checked} checked one by one), "
            f"proof cycle length {explicit.length}"
        )
    return report


class CycleRecord(BaseModel):
    vertices: list[str]
    labels: list[Label]


class PartitionRecord(BaseModel):
    lengths: list[int]
    cycles: list[CycleRecord]

    @classmethod
    def from_partition(cls, partition: CyclePartition) -> "PartitionRecord":
        return cls(
            lengths=partition.lengths,
            cycles=[
                CycleRecord(vertices=list(c.vertices), labels=list(c.labels))
                for c in partition.cycles
            ],
        )
