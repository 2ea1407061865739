"""Conjunctive query DAGs, the structure catalog, and set-semantics evaluation."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ParseError, QueryValidationError
from .kgraph import TypedGraph

ANCHOR = "anchor"
VARIABLE = "variable"
TARGET = "target"

QueryEdge = tuple[int, int, int]


@dataclass(frozen=True)
class QueryNode:
    kind: str
    type: int
    node: int | None = None

    @property
    def is_anchor(self) -> bool:
        return self.kind == ANCHOR


@dataclass(frozen=True)
class StructureId:
    """A query shape.

    ``nodes`` lists the roles of the template's query nodes and ``edges``
    holds ``(src, dst)`` index pairs. ``degree_vector`` is the number of
    predecessors sampled from each node when walking backwards from the
    target in breadth-first order; only the first ``E`` entries are kept.
    """

    name: str
    degree_vector: tuple[int, ...]
    nodes: tuple[str, ...] = field(repr=False)
    edges: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def has_intersection(self) -> bool:
        return any(d > 1 for d in self.degree_vector)

    @property
    def has_bound_variables(self) -> bool:
        return VARIABLE in self.nodes


def _structure(name, nodes, edges):
    dv = _reverse_bfs_degrees(len(nodes), edges, nodes.index(TARGET))
    return StructureId(name, tuple(dv[: len(edges)]), tuple(nodes), tuple(edges))


def _reverse_bfs_degrees(n, edges, target):
    preds = [[] for _ in range(n)]
    for s, d in edges:
        preds[d].append(s)
    # children with more predecessors first; makes the vector canonical
    order, queue = [], deque([target])
    while queue:
        w = queue.popleft()
        order.append(w)
        queue.extend(sorted(preds[w], key=lambda p: -len(preds[p])))
    return [len(preds[w]) for w in order]


A, V, T = ANCHOR, VARIABLE, TARGET
_CATALOG = (
    _structure("chain1", [A, T], [(0, 1)]),
    _structure("chain2", [A, V, T], [(0, 1), (1, 2)]),
    _structure("chain3", [A, V, V, T], [(0, 1), (1, 2), (2, 3)]),
    _structure("inter2", [A, A, T], [(0, 2), (1, 2)]),
    _structure("inter3", [A, A, A, T], [(0, 3), (1, 3), (2, 3)]),
    _structure("inter_chain", [A, A, V, T], [(0, 2), (1, 2), (2, 3)]),
    _structure("chain_inter", [A, V, A, T], [(0, 1), (1, 3), (2, 3)]),
)
_BY_NAME = {s.name: s for s in _CATALOG}
_BY_DEGREES = {s.degree_vector: s for s in _CATALOG}
STRUCTURE_NAMES = tuple(s.name for s in _CATALOG)


def structure_catalog() -> list[StructureId]:
    return list(_CATALOG)


def structure(name: str) -> StructureId:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise KeyError(f"unknown query structure {name!r}; known: {', '.join(STRUCTURE_NAMES)}") from None


@dataclass(frozen=True)
class QueryDag:
    nodes: tuple[QueryNode, ...]
    edges: tuple[QueryEdge, ...]
    structure: str

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))

    @property
    def target(self) -> int:
        return next(i for i, n in enumerate(self.nodes) if n.kind == TARGET)

    @property
    def target_type(self) -> int:
        return self.nodes[self.target].type

    @property
    def anchors(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.is_anchor]

    def incoming(self) -> list[list[tuple[int, int]]]:
        """Per node, its ``(src, relation)`` in-edges in edge-list order."""
        inc = [[] for _ in self.nodes]
        for s, r, d in self.edges:
            inc[d].append((s, r))
        return inc

    def topological_order(self) -> list[int]:
        """Kahn order with FIFO tie-breaking by node index; raises on cycles."""
        indeg = [0] * len(self.nodes)
        out = [[] for _ in self.nodes]
        for s, _, d in self.edges:
            indeg[d] += 1
            out[s].append(d)
        queue = deque(i for i, k in enumerate(indeg) if k == 0)
        order = []
        while queue:
            u = queue.popleft()
            order.append(u)
            for d in out[u]:
                indeg[d] -= 1
                if indeg[d] == 0:
                    queue.append(d)
        if len(order) != len(self.nodes):
            raise QueryValidationError(["query graph is not a DAG"])
        return order

    def has_intersection(self) -> bool:
        return any(len(inc) > 1 for inc in self.incoming())


def shape_of(q: QueryDag) -> StructureId | None:
    """The catalog structure isomorphic to ``q``'s dependency graph, if any."""
    try:
        target = q.target
    except StopIteration:
        return None
    dv = _reverse_bfs_degrees(len(q.nodes), [(s, d) for s, _, d in q.edges], target)
    s = _BY_DEGREES.get(tuple(dv[: len(q.edges)]))
    if s is None or s.num_edges != len(q.edges) or len(s.nodes) != len(q.nodes):
        return None
    return s


def validate(q: QueryDag, g: TypedGraph) -> list[str]:
    """Every violated query invariant; an empty list means the query is valid."""
    problems = []
    n = len(q.nodes)
    if not q.edges:
        problems.append("query has no edges")
    targets = [i for i, node in enumerate(q.nodes) if node.kind == TARGET]
    if len(targets) != 1:
        problems.append(f"query must have exactly one target, found {len(targets)}")
    for i, node in enumerate(q.nodes):
        if node.kind not in (ANCHOR, VARIABLE, TARGET):
            problems.append(f"node {i}: unknown kind {node.kind!r}")
        if not 0 <= node.type < len(g.types):
            problems.append(f"node {i}: unknown type id {node.type}")
            continue
        if node.is_anchor:
            if node.node is None or not 0 <= node.node < g.num_nodes:
                problems.append(f"node {i}: anchor without a valid graph node")
            elif g.node_type(node.node) != node.type:
                problems.append(f"node {i}: anchor {g.node_names[node.node]} is not of type {g.types[node.type].name}")
        elif node.node is not None:
            problems.append(f"node {i}: only anchors may carry a graph node")
    indeg, outdeg = [0] * n, [0] * n
    for k, (s, r, d) in enumerate(q.edges):
        if not (0 <= s < n and 0 <= d < n):
            problems.append(f"edge {k}: endpoint index out of range")
            continue
        if s == d:
            problems.append(f"edge {k}: self loop on query node {s}")
        indeg[d] += 1
        outdeg[s] += 1
        if not 0 <= r < len(g.relations):
            problems.append(f"edge {k}: unknown relation id {r}")
            continue
        rel = g.relations[r]
        if q.nodes[s].type != rel.domain_type or q.nodes[d].type != rel.range_type:
            problems.append(f"edge {k}: relation {rel.name} does not fit endpoint types")
    if problems:
        return problems
    try:
        q.topological_order()
    except QueryValidationError:
        problems.append("query graph is not a DAG")
    for i, node in enumerate(q.nodes):
        if indeg[i] == 0 and not node.is_anchor:
            problems.append(f"node {i}: source that is not an anchor")
        if node.is_anchor and indeg[i] > 0:
            problems.append(f"node {i}: anchor with incoming edges")
        if outdeg[i] == 0 and node.kind != TARGET:
            problems.append(f"node {i}: sink that is not the target (target not unique sink)")
        if node.kind == TARGET and outdeg[i] > 0:
            problems.append(f"node {i}: target has outgoing edges")
    if not problems and q.structure in _BY_NAME:
        s = shape_of(q)
        if s is None or s.name != q.structure:
            problems.append(f"structure tag {q.structure!r} does not match the query shape")
    return problems


def check(q: QueryDag, g: TypedGraph) -> None:
    problems = validate(q, g)
    if problems:
        raise QueryValidationError(problems)


def _evaluate(q: QueryDag, g: TypedGraph, combine) -> tuple[int, ...]:
    incoming = q.incoming()
    sets: dict[int, set[int]] = {}
    for i in q.topological_order():
        node = q.nodes[i]
        if node.is_anchor:
            sets[i] = {node.node}
            continue
        acc = None
        for s, r in incoming[i]:
            adj = g.adjacency(r)
            projected = set()
            for v in sets[s]:
                projected.update(adj.get(v, ()))
            acc = projected if acc is None else combine(acc, projected)
        sets[i] = acc
    return tuple(sorted(sets[q.target]))


def denotation(q: QueryDag, g: TypedGraph) -> tuple[int, ...]:
    """Nodes satisfying the conjunctive query on ``g`` (sorted)."""
    return _evaluate(q, g, set.intersection)


def denotation_disjunctive(q: QueryDag, g: TypedGraph) -> tuple[int, ...]:
    """Same traversal as :func:`denotation` with every intersection replaced by a union."""
    return _evaluate(q, g, set.union)


def edge_query(anchor: int, relation: int, g: TypedGraph) -> QueryDag:
    rel = g.relations[relation]
    return QueryDag(
        (QueryNode(ANCHOR, rel.domain_type, anchor), QueryNode(TARGET, rel.range_type)),
        ((0, relation, 1),),
        "chain1",
    )


# -- JSON ----------------------------------------------------------------
def to_json(q: QueryDag, g: TypedGraph) -> dict:
    rank = {n: i for i, n in enumerate(q.topological_order())}
    edges = sorted(q.edges, key=lambda e: (rank[e[0]], rank[e[2]]))
    nodes = []
    for n in q.nodes:
        doc = {"kind": n.kind}
        if n.is_anchor:
            doc["node"] = g.node_names[n.node]
        doc["type"] = g.types[n.type].name
        nodes.append(doc)
    return {
        "structure": q.structure,
        "target_type": g.types[q.target_type].name,
        "nodes": nodes,
        "edges": [[s, g.relations[r].name, d] for s, r, d in edges],
    }


def from_json(doc: dict, g: TypedGraph) -> QueryDag:
    try:
        nodes = []
        for i, n in enumerate(doc["nodes"]):
            kind = n["kind"]
            t = g.type_id(n["type"])
            node = g.node_id(n["node"]) if kind == ANCHOR else None
            nodes.append(QueryNode(kind, t, node))
        edges = tuple((int(s), g.relation_id(r), int(d)) for s, r, d in doc["edges"])
        q = QueryDag(tuple(nodes), edges, doc.get("structure", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid query document: {exc}") from None
    if "target_type" in doc:
        try:
            if g.types[q.target_type].name != doc["target_type"]:
                raise ParseError("target_type does not match the target node's type")
        except StopIteration:
            raise ParseError("query has no target node") from None
    return q


def loads(text: str, g: TypedGraph) -> QueryDag:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from None
    return from_json(doc, g)


def describe(q: QueryDag, g: TypedGraph) -> str:
    """Human-readable conjunction, e.g. ``rel0(t0_1, V1) & rel2(V1, ?)``."""

    def label(i):
        n = q.nodes[i]
        if n.is_anchor:
            return g.node_names[n.node]
        if n.kind == TARGET:
            return "?"
        return f"V{i}"

    return " & ".join(f"{g.relations[r].name}({label(s)}, {label(d)})" for s, r, d in q.edges)


def structures_from(names: Iterable[str] | None) -> Sequence[StructureId]:
    if names is None:
        return structure_catalog()
    return [structure(n) for n in names]
