"""Causal graphs with fairness-labelled edges.

A :class:`CausalGraph` is an immutable DAG whose edges carry one of the labels
``fair``, ``unfair`` or ``unknown``.  Besides the usual structural queries
(relatives, simple paths, colliders, d-separation, back-door adjustment) the
module classifies the paths leaving the sensitive node and turns that
classification into advice on which group-fairness criteria make sense.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .errors import (
    BadParameter,
    CycleDetected,
    DuplicateEdge,
    DuplicateNode,
    EndpointConditioned,
    NotInterior,
    OverlappingSets,
    PathBudgetExceeded,
    RolesUnset,
    UnknownNode,
    ValidationError,
)

FAIR = "fair"
UNFAIR = "unfair"
UNKNOWN = "unknown"
LABELS = (FAIR, UNFAIR, UNKNOWN)

FORWARD = "forward"
BACKWARD = "backward"

CAUSAL = "causal"
BACK_DOOR = "back_door"
OTHER = "other"

DEFAULT_PATH_BUDGET = 10_000

Edge = tuple[str, str]


@dataclass(frozen=True)
class CausalGraph:
    """Validated DAG.  Build instances with :func:`validate_graph`."""

    nodes: tuple[str, ...]
    edges: frozenset[Edge]
    edge_labels: Mapping[Edge, str] = field(default_factory=dict)
    sensitive: Optional[str] = None
    outcome: Optional[str] = None
    _parents: dict = field(default=None, init=False, repr=False, compare=False)
    _children: dict = field(default=None, init=False, repr=False, compare=False)
    _order: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        parents = {n: [] for n in self.nodes}
        children = {n: [] for n in self.nodes}
        for u, v in self.edges:
            parents[v].append(u)
            children[u].append(v)
        object.__setattr__(self, "_parents", {n: tuple(sorted(p)) for n, p in parents.items()})
        object.__setattr__(self, "_children", {n: tuple(sorted(c)) for n, c in children.items()})
        object.__setattr__(self, "_order", _lexicographic_toposort(self.nodes, self._parents, self._children))

    def __hash__(self):
        return hash((self.nodes, self.edges, tuple(sorted(self.edge_labels.items())), self.sensitive, self.outcome))

    def _check(self, n):
        if n not in self._parents:
            raise UnknownNode(n)

    def parents(self, n: str) -> tuple[str, ...]:
        self._check(n)
        return self._parents[n]

    def children(self, n: str) -> tuple[str, ...]:
        self._check(n)
        return self._children[n]

    def ancestors(self, n: str) -> frozenset[str]:
        self._check(n)
        return frozenset(_reach(n, self._parents))

    def descendants(self, n: str) -> frozenset[str]:
        self._check(n)
        return frozenset(_reach(n, self._children))

    def topological_order(self) -> tuple[str, ...]:
        """Topological order, ties broken lexicographically."""
        return self._order

    def label(self, u: str, v: str) -> str:
        if (u, v) not in self.edges:
            raise ValidationError(f"no edge {u}->{v}")
        return self.edge_labels.get((u, v), UNKNOWN)

    def sorted_edges(self) -> list[Edge]:
        index = {n: i for i, n in enumerate(self._order)}
        return sorted(self.edges, key=lambda e: (index[e[0]], index[e[1]]))

    def with_labels(self, labels: Mapping[Edge, str]) -> "CausalGraph":
        merged = dict(self.edge_labels)
        merged.update(labels)
        return validate_graph(self.nodes, self.edges, merged, self.sensitive, self.outcome)

    def with_roles(self, sensitive=None, outcome=None) -> "CausalGraph":
        return validate_graph(self.nodes, self.edges, self.edge_labels, sensitive, outcome)

    def without_incoming(self, nodes: Iterable[str]) -> "CausalGraph":
        nodes = set(nodes)
        for n in nodes:
            self._check(n)
        edges = [e for e in self.edges if e[1] not in nodes]
        labels = {e: lab for e, lab in self.edge_labels.items() if e[1] not in nodes}
        return validate_graph(self.nodes, edges, labels, self.sensitive, self.outcome)

    def without_outgoing(self, node: str) -> "CausalGraph":
        self._check(node)
        edges = [e for e in self.edges if e[0] != node]
        labels = {e: lab for e, lab in self.edge_labels.items() if e[0] != node}
        return validate_graph(self.nodes, edges, labels, self.sensitive, self.outcome)


def _reach(start, adjacency):
    seen = set()
    stack = list(adjacency[start])
    while stack:
        n = stack.pop()
        if n not in seen:
            seen.add(n)
            stack.extend(adjacency[n])
    return seen


def _lexicographic_toposort(nodes, parents, children):
    indegree = {n: len(parents[n]) for n in nodes}
    heap = [n for n in nodes if indegree[n] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        n = heapq.heappop(heap)
        order.append(n)
        for c in children[n]:
            indegree[c] -= 1
            if indegree[c] == 0:
                heapq.heappush(heap, c)
    return tuple(order)


def _find_cycle(nodes, children):
    colour = {n: 0 for n in nodes}
    stack_path = []

    def visit(n):
        colour[n] = 1
        stack_path.append(n)
        for c in children[n]:
            if colour[c] == 1:
                return stack_path[stack_path.index(c):] + [c]
            if colour[c] == 0:
                found = visit(c)
                if found:
                    return found
        stack_path.pop()
        colour[n] = 2
        return None

    for n in sorted(nodes):
        if colour[n] == 0:
            found = visit(n)
            if found:
                return found
    return None


def validate_graph(
    nodes: Iterable[str],
    edges: Iterable[Edge],
    labels: Optional[Mapping[Edge, str]] = None,
    sensitive: Optional[str] = None,
    outcome: Optional[str] = None,
) -> CausalGraph:
    """Check a raw node/edge description and return a :class:`CausalGraph`.

    Raises :class:`DuplicateNode`, :class:`UnknownNode`, :class:`DuplicateEdge`
    or :class:`CycleDetected` (carrying one offending cycle).
    """
    node_list = list(nodes)
    if len(set(node_list)) != len(node_list):
        dup = sorted(n for n in set(node_list) if node_list.count(n) > 1)
        raise DuplicateNode(f"duplicate node(s): {', '.join(dup)}")
    node_set = set(node_list)
    edge_set = set()
    for u, v in edges:
        for n in (u, v):
            if n not in node_set:
                raise UnknownNode(n)
        if (u, v) in edge_set:
            raise DuplicateEdge(f"duplicate edge {u}->{v}")
        if u == v:
            raise CycleDetected([u, u])
        edge_set.add((u, v))
    for u, v in edge_set:
        if (v, u) in edge_set:
            raise CycleDetected([u, v, u])
    children = {n: sorted(v for u, v in edge_set if u == n) for n in node_set}
    cycle = _find_cycle(node_set, children)
    if cycle:
        raise CycleDetected(cycle)
    clean_labels = {}
    for edge, lab in (labels or {}).items():
        edge = tuple(edge)
        if edge not in edge_set:
            raise UnknownNode(f"{edge[0]}->{edge[1]}")
        if lab not in LABELS:
            raise ValidationError(f"bad edge label {lab!r}")
        if lab != UNKNOWN:
            clean_labels[edge] = lab
    for role in (sensitive, outcome):
        if role is not None and role not in node_set:
            raise UnknownNode(role)
    if sensitive is not None and sensitive == outcome:
        raise ValidationError("sensitive and outcome must differ")
    return CausalGraph(
        nodes=tuple(sorted(node_set)),
        edges=frozenset(edge_set),
        edge_labels=clean_labels,
        sensitive=sensitive,
        outcome=outcome,
    )


def relatives(g: CausalGraph, n: str) -> dict[str, frozenset[str]]:
    """Parents, children, strict ancestors and strict descendants of ``n``."""
    return {
        "parents": frozenset(g.parents(n)),
        "children": frozenset(g.children(n)),
        "ancestors": g.ancestors(n),
        "descendants": g.descendants(n),
    }


@dataclass(frozen=True)
class Path:
    """Simple path; ``directions[i]`` describes the link between nodes i and i+1."""

    nodes: tuple[str, ...]
    directions: tuple[str, ...]

    def __post_init__(self):
        if len(self.nodes) < 2 or len(self.directions) != len(self.nodes) - 1:
            raise ValidationError("a path needs at least two nodes and one direction per step")
        if len(set(self.nodes)) != len(self.nodes):
            raise ValidationError("paths must be simple")

    @classmethod
    def from_nodes(cls, g: CausalGraph, nodes: Iterable[str]) -> "Path":
        nodes = tuple(nodes)
        dirs = []
        for u, v in zip(nodes, nodes[1:]):
            if (u, v) in g.edges:
                dirs.append(FORWARD)
            elif (v, u) in g.edges:
                dirs.append(BACKWARD)
            else:
                raise ValidationError(f"{u} and {v} are not adjacent")
        return cls(nodes, tuple(dirs))

    def edges(self) -> list[Edge]:
        out = []
        for (u, v), d in zip(zip(self.nodes, self.nodes[1:]), self.directions):
            out.append((u, v) if d == FORWARD else (v, u))
        return out

    @property
    def start(self):
        return self.nodes[0]

    @property
    def end(self):
        return self.nodes[-1]

    def __str__(self):
        parts = [self.nodes[0]]
        for n, d in zip(self.nodes[1:], self.directions):
            parts.append(("->" if d == FORWARD else "<-") + n)
        return "".join(parts)


def enumerate_paths(g: CausalGraph, src: str, dst: str, budget: int = DEFAULT_PATH_BUDGET) -> list[Path]:
    """All simple paths between ``src`` and ``dst``, sorted by node sequence.

    Raises :class:`PathBudgetExceeded` once more than ``budget`` paths exist.
    """
    g._check(src)
    g._check(dst)
    if src == dst:
        raise ValidationError("source and destination must differ")
    neighbours = {n: sorted(set(g.parents(n)) | set(g.children(n))) for n in g.nodes}
    found = []
    trail = [src]
    on_trail = {src}

    def walk(n):
        for m in neighbours[n]:
            if m in on_trail:
                continue
            if m == dst:
                found.append(tuple(trail) + (m,))
                if len(found) > budget:
                    raise PathBudgetExceeded(f"more than {budget} paths between {src} and {dst}")
                continue
            trail.append(m)
            on_trail.add(m)
            walk(m)
            trail.pop()
            on_trail.discard(m)

    walk(src)
    found.sort()
    return [Path.from_nodes(g, p) for p in found]


def is_collider(p: Path, n: str) -> bool:
    if n not in p.nodes[1:-1]:
        raise NotInterior(f"{n} is not an interior node of {p}")
    i = p.nodes.index(n)
    return p.directions[i - 1] == FORWARD and p.directions[i] == BACKWARD


def is_blocked(p: Path, z: Iterable[str], g: CausalGraph) -> bool:
    z = set(z)
    for n in z:
        g._check(n)
    if p.start in z or p.end in z:
        raise EndpointConditioned(f"endpoint of {p} is in the conditioning set")
    for n in p.nodes[1:-1]:
        if is_collider(p, n):
            if n not in z and not (g.descendants(n) & z):
                return True
        elif n in z:
            return True
    return False


def d_separated(g: CausalGraph, x: Iterable[str], y: Iterable[str], z: Iterable[str] = ()) -> bool:
    """True iff every path from ``x`` to ``y`` is blocked given ``z``.

    Uses reachability over (node, arrival direction) pairs rather than path
    enumeration, so it stays linear in the size of the graph.
    """
    x, y, z = set(x), set(y), set(z)
    for n in x | y | z:
        g._check(n)
    if x & y or x & z or y & z:
        raise OverlappingSets("x, y and z must be pairwise disjoint")
    opened = set(z)
    for n in z:
        opened |= g.ancestors(n)
    # "up": arrived from a child, "down": arrived from a parent
    frontier = [(n, "up") for n in sorted(x)]
    visited = set()
    while frontier:
        n, direction = frontier.pop()
        if (n, direction) in visited:
            continue
        visited.add((n, direction))
        if n not in z and n in y:
            return False
        if direction == "up" and n not in z:
            frontier.extend((p, "up") for p in g.parents(n))
            frontier.extend((c, "down") for c in g.children(n))
        elif direction == "down":
            if n not in z:
                frontier.extend((c, "down") for c in g.children(n))
            if n in opened:
                frontier.extend((p, "up") for p in g.parents(n))
    return True


def back_door_paths(g: CausalGraph, a: str, y: str, budget: int = DEFAULT_PATH_BUDGET) -> list[Path]:
    return [p for p in enumerate_paths(g, a, y, budget) if p.directions[0] == BACKWARD]


def satisfies_backdoor(g: CausalGraph, c: Iterable[str], a: str, y: str) -> bool:
    c = set(c)
    for n in c | {a, y}:
        g._check(n)
    if a in c or y in c:
        raise OverlappingSets("treatment and outcome cannot be in the adjustment set")
    if c & g.descendants(a):
        return False
    # removing the links out of a leaves exactly the back-door paths
    return d_separated(g.without_outgoing(a), {a}, {y}, c)


def minimal_adjustment_sets(g: CausalGraph, a: str, y: str, max_size: Optional[int] = None) -> list[frozenset[str]]:
    """Inclusion-minimal back-door adjustment sets with at most ``max_size`` nodes."""
    g._check(a)
    g._check(y)
    limit = len(g.nodes) - 2
    if max_size is None:
        max_size = limit
    if max_size < 0 or max_size > limit:
        raise BadParameter(f"max_size must lie in [0, {limit}]")
    candidates = sorted(set(g.nodes) - {a, y} - g.descendants(a))
    valid = []
    for size in range(max_size + 1):
        for combo in itertools.combinations(candidates, size):
            s = frozenset(combo)
            if any(v < s for v in valid):
                continue
            if satisfies_backdoor(g, s, a, y):
                valid.append(s)
    # minimality against every proper subset, not only the valid ones found
    minimal = []
    for s in valid:
        if not any(
            satisfies_backdoor(g, frozenset(sub), a, y)
            for k in range(len(s))
            for sub in itertools.combinations(sorted(s), k)
        ):
            minimal.append(s)
    return sorted(minimal, key=lambda s: (len(s), sorted(s)))


def path_fairness(g: CausalGraph, p: Path) -> str:
    labels = [g.label(u, v) for u, v in p.edges()]
    if UNFAIR in labels:
        return UNFAIR
    if all(lab == FAIR for lab in labels):
        return FAIR
    return UNKNOWN


def path_kind(p: Path) -> str:
    if all(d == FORWARD for d in p.directions):
        return CAUSAL
    if p.directions[0] == BACKWARD:
        return BACK_DOOR
    return OTHER


@dataclass(frozen=True)
class PathAudit:
    target: str
    path: Path
    kind: str
    fairness: str
    open_marginally: bool

    @property
    def problematic(self) -> Optional[bool]:
        """Whether the path carries unfair influence; ``None`` when undecidable."""
        if self.kind != CAUSAL:
            return False
        return {UNFAIR: True, FAIR: False}.get(self.fairness)

    def to_dict(self):
        return {
            "target": self.target,
            "path": str(self.path),
            "kind": self.kind,
            "fairness": self.fairness,
            "open_given_empty": self.open_marginally,
            "problematic": self.problematic,
        }


@dataclass(frozen=True)
class AuditReport:
    sensitive: str
    outcome: str
    entries: tuple[PathAudit, ...]

    def for_target(self, target: str) -> list[PathAudit]:
        return [e for e in self.entries if e.target == target]

    def causal_paths(self, target: Optional[str] = None) -> list[PathAudit]:
        target = self.outcome if target is None else target
        return [e for e in self.for_target(target) if e.kind == CAUSAL]

    def back_door_paths(self, target: Optional[str] = None) -> list[PathAudit]:
        target = self.outcome if target is None else target
        return [e for e in self.for_target(target) if e.kind == BACK_DOOR]

    def to_dict(self):
        return {
            "sensitive": self.sensitive,
            "outcome": self.outcome,
            "paths": [e.to_dict() for e in self.entries],
        }


def audit_paths(g: CausalGraph, budget: int = DEFAULT_PATH_BUDGET) -> AuditReport:
    """Classify every path from the sensitive node to the outcome and to each other node."""
    if g.sensitive is None or g.outcome is None:
        raise RolesUnset("sensitive and outcome nodes must both be set")
    a = g.sensitive
    targets = [g.outcome] + [n for n in g.nodes if n not in (a, g.outcome)]
    entries = []
    for t in targets:
        for p in enumerate_paths(g, a, t, budget):
            entries.append(PathAudit(t, p, path_kind(p), path_fairness(g, p), not is_blocked(p, (), g)))
    return AuditReport(a, g.outcome, tuple(entries))


@dataclass(frozen=True)
class Recommendation:
    """Which criteria suit the labelled mechanism; ``None`` means undecidable."""

    dp_appropriate: Optional[bool]
    error_rate_parity_appropriate: Optional[bool]
    calibration_appropriate: Optional[bool]
    rationale: str

    def to_dict(self):
        return {
            "dp_appropriate": self.dp_appropriate,
            "error_rate_parity_appropriate": self.error_rate_parity_appropriate,
            "calibration_appropriate": self.calibration_appropriate,
            "rationale": self.rationale,
        }


def recommend_criteria(audit: AuditReport) -> Recommendation:
    causal = audit.causal_paths()
    labels = [e.fairness for e in causal]
    a, y = audit.sensitive, audit.outcome
    if not causal:
        n_bd = len(audit.back_door_paths())
        return Recommendation(
            False, True, True,
            f"No causal path from {a} to {y}; the {n_bd} back-door path(s) carry no unfair influence, "
            "so equal error rates and calibration are permissible and demographic parity is not required.",
        )
    if UNFAIR in labels:
        if all(lab == UNFAIR for lab in labels):
            return Recommendation(
                True, False, False,
                f"Every causal path from {a} to {y} is unfair: a prediction independent of {a} "
                "(demographic parity) removes all of it, while equal error rates and calibration would "
                "tolerate the unfair influence.",
            )
        if UNKNOWN in labels:
            return Recommendation(
                None, False, False,
                f"At least one causal path from {a} to {y} is unfair, so equal error rates and calibration "
                "are inappropriate; unlabelled paths leave demographic parity undetermined.",
            )
        return Recommendation(
            False, False, False,
            f"Causal paths from {a} to {y} mix fair and unfair influence: equal error rates and calibration "
            "keep the unfair part and demographic parity also removes the fair part; use a path-specific "
            "measure such as path-specific counterfactual fairness.",
        )
    if all(lab == FAIR for lab in labels):
        return Recommendation(
            False, True, True,
            f"Every causal path from {a} to {y} is fair: equal error rates and calibration may keep this "
            "influence, demographic parity would remove it.",
        )
    return Recommendation(
        None, None, None,
        f"Some causal paths from {a} to {y} are unlabelled and none is known to be unfair; cannot determine "
        "which criteria apply.",
    )
