"""Immutable typed multi-relational graph store.

Every forward relation ``r`` is paired with a materialized inverse relation
``r__inv`` holding the reversed edges.  Relation ids are assigned so that a
forward relation has an even id ``2k`` and its inverse ``2k + 1``; the
inverse of any relation id is therefore ``rid ^ 1``.

Node ids are dense integers assigned in node-type-file order; the original
string ids are kept in :attr:`TypedGraph.node_names`.
"""

from __future__ import annotations

import os
from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, SchemaError

INVERSE_SUFFIX = "__inv"

Edge = tuple[int, int, int]


@dataclass(frozen=True)
class NodeType:
    id: int
    name: str
    feature_dim: int


@dataclass(frozen=True)
class Relation:
    id: int
    name: str
    domain_type: int
    range_type: int
    inverse_of: int

    @property
    def is_inverse(self) -> bool:
        return self.id % 2 == 1


class TypedGraph:
    """A typed knowledge graph with materialized inverse relations.

    Instances are treated as immutable: all containers are tuples or
    private dicts that are never mutated after ``__init__``.
    """

    def __init__(
        self,
        node_names: Sequence[str],
        node_type_ids: Sequence[int],
        types: Sequence[NodeType],
        relations: Sequence[Relation],
        features: Sequence[Sequence[int]],
        edges: Iterable[Edge],
    ):
        self.node_names = tuple(node_names)
        self._node_type = tuple(int(t) for t in node_type_ids)
        self.types = tuple(types)
        self.relations = tuple(relations)
        self._features = tuple(tuple(int(i) for i in f) for f in features)
        if len(self._node_type) != len(self.node_names) or len(self._features) != len(self.node_names):
            raise ValueError("node names, types and features must have equal length")
        self._index = {name: i for i, name in enumerate(self.node_names)}
        if len(self._index) != len(self.node_names):
            raise SchemaError("duplicate node id")

        by_type: list[list[int]] = [[] for _ in self.types]
        for v, t in enumerate(self._node_type):
            by_type[t].append(v)
        self._by_type = tuple(tuple(vs) for vs in by_type)
        self._local = {}
        for vs in self._by_type:
            for i, v in enumerate(vs):
                self._local[v] = i

        adj: list[dict[int, set[int]]] = [dict() for _ in self.relations]
        for u, r, v in edges:
            rel = self.relations[r]
            if rel.is_inverse:
                raise ValueError("edges must be given with forward relations only")
            self._check_edge_types(u, r, v)
            adj[r].setdefault(u, set()).add(v)
            adj[r ^ 1].setdefault(v, set()).add(u)
        self._adj = tuple({u: tuple(sorted(vs)) for u, vs in sorted(a.items())} for a in adj)
        self._incident: dict[int, tuple[tuple[int, int], ...]] = {}
        self._rel_by_name = {r.name: r.id for r in self.relations}
        self._type_by_name = {t.name: t.id for t in self.types}

    # -- schema ----------------------------------------------------------
    def _check_edge_types(self, u: int, r: int, v: int) -> None:
        rel = self.relations[r]
        if self._node_type[u] != rel.domain_type or self._node_type[v] != rel.range_type:
            raise SchemaError(
                f"edge ({self.node_names[u]}, {rel.name}, {self.node_names[v]}) violates "
                f"{rel.name}: {self.types[rel.domain_type].name} -> {self.types[rel.range_type].name}"
            )

    @property
    def num_nodes(self) -> int:
        return len(self.node_names)

    @property
    def forward_relations(self) -> tuple[Relation, ...]:
        return tuple(r for r in self.relations if not r.is_inverse)

    def node_type(self, v: int) -> int:
        return self._node_type[v]

    def node_id(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown node {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._rel_by_name[name]
        except KeyError:
            raise KeyError(f"unknown relation {name!r}") from None

    def type_id(self, name: str) -> int:
        try:
            return self._type_by_name[name]
        except KeyError:
            raise KeyError(f"unknown node type {name!r}") from None

    @staticmethod
    def inverse(r: int) -> int:
        return r ^ 1

    # -- lookup ----------------------------------------------------------
    def neighbors(self, v: int, r: int) -> tuple[int, ...]:
        """Sorted tail nodes of ``r``-edges leaving ``v``."""
        rel = self.relations[r]
        if self._node_type[v] != rel.domain_type:
            raise SchemaError(
                f"node {self.node_names[v]} has type {self.types[self._node_type[v]].name}, "
                f"relation {rel.name} expects {self.types[rel.domain_type].name}"
            )
        return self._adj[r].get(v, ())

    def has_edge(self, u: int, r: int, v: int) -> bool:
        nbrs = self._adj[r].get(u, ())
        i = bisect_left(nbrs, v)
        return i < len(nbrs) and nbrs[i] == v

    def incident(self, v: int) -> tuple[tuple[int, int], ...]:
        """All ``(relation, neighbor)`` pairs leaving ``v``, inverse relations included."""
        cached = self._incident.get(v)
        if cached is None:
            cached = tuple((r, w) for r in range(len(self.relations)) for w in self._adj[r].get(v, ()))
            self._incident[v] = cached
        return cached

    def nodes_of_type(self, t: int) -> tuple[int, ...]:
        if not 0 <= t < len(self.types):
            raise ValueError(f"unknown node type id {t}")
        return self._by_type[t]

    def local_index(self, v: int) -> int:
        """Position of ``v`` among the nodes of its type."""
        return self._local[v]

    def features(self, v: int) -> tuple[int, ...]:
        return self._features[v]

    def adjacency(self, r: int) -> dict[int, tuple[int, ...]]:
        return self._adj[r]

    def edges(self, include_inverse: bool = False) -> list[Edge]:
        out = []
        for r, a in enumerate(self._adj):
            if r % 2 == 1 and not include_inverse:
                continue
            for u, vs in a.items():
                out.extend((u, r, v) for v in vs)
        out.sort()
        return out

    def num_edges(self, include_inverse: bool = False) -> int:
        n = sum(len(vs) for r in range(0, len(self._adj), 2) for vs in self._adj[r].values())
        return 2 * n if include_inverse else n

    def with_edges(self, edges: Iterable[Edge]) -> "TypedGraph":
        """Same schema and nodes, different forward edge set."""
        return TypedGraph(self.node_names, self._node_type, self.types, self.relations, self._features, edges)

    # -- serialization ---------------------------------------------------
    def is_one_hot(self, t: int) -> bool:
        return all(self._features[v] == (i,) for i, v in enumerate(self._by_type[t])) and \
            self.types[t].feature_dim == len(self._by_type[t])

    def serialize(self) -> dict[str, str]:
        """Canonical text files: ``nodes.tsv``, ``edges.tsv`` and optionally ``features.tsv``."""
        nodes = "".join(f"{n}\t{self.types[t].name}\n" for n, t in zip(self.node_names, self._node_type))
        edges = "".join(
            f"{self.node_names[u]}\t{self.relations[r].name}\t{self.node_names[v]}\n"
            for r, u, v in sorted((r, u, v) for u, r, v in self.edges())
        )
        rels = "".join(
            f"{r.name}\t{self.types[r.domain_type].name}\t{self.types[r.range_type].name}\n"
            for r in self.forward_relations
        )
        files = {"nodes.tsv": nodes, "edges.tsv": edges, "relations.tsv": rels}
        featured = [t.id for t in self.types if not self.is_one_hot(t.id)]
        if featured:
            lines = []
            for t in featured:
                for v in self._by_type[t]:
                    lines.append(f"{self.node_names[v]}\t{' '.join(map(str, self._features[v]))}\n")
            files["features.tsv"] = "".join(lines)
        return files


@dataclass(frozen=True)
class GraphSplit:
    train_graph: TypedGraph
    deleted_edges: frozenset


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def ingest(
    edge_file,
    node_type_file,
    feature_file=None,
    min_relation_edges: int = 0,
    relation_file=None,
) -> TypedGraph:
    """Load a typed graph from tab-separated files.

    Args:
        edge_file: ``head<TAB>relation<TAB>tail`` per line.
        node_type_file: ``node<TAB>type`` per line; fixes node ids.
        feature_file: optional ``node<TAB>space separated indices``. Types
            absent from it get one-hot features.
        min_relation_edges: relations with fewer distinct edges are dropped.
        relation_file: optional ``relation<TAB>domain<TAB>range`` schema that
            fixes relation order and keeps relations without edges.
    """
    names: list[str] = []
    node_types: list[int] = []
    type_index: dict[str, int] = {}
    seen: set[str] = set()
    for lineno, parts in _read_lines(node_type_file):
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ParseError("expected node_id<TAB>type_name", node_type_file, lineno)
        node, tname = parts
        if node in seen:
            raise ParseError(f"node {node!r} declared twice", node_type_file, lineno)
        seen.add(node)
        names.append(node)
        node_types.append(type_index.setdefault(tname, len(type_index)))
    index = {n: i for i, n in enumerate(names)}

    rel_index: dict[str, int] = {}
    rel_types: list[tuple[int, int]] = []
    if relation_file is not None:
        for lineno, parts in _read_lines(relation_file):
            if len(parts) != 3 or parts[1] not in type_index or parts[2] not in type_index:
                raise ParseError("expected relation<TAB>domain_type<TAB>range_type", relation_file, lineno)
            if parts[0] in rel_index:
                raise ParseError(f"relation {parts[0]!r} declared twice", relation_file, lineno)
            rel_index[parts[0]] = len(rel_types)
            rel_types.append((type_index[parts[1]], type_index[parts[2]]))
    raw_edges: list[tuple[int, int, int]] = []
    for lineno, parts in _read_lines(edge_file):
        if len(parts) != 3 or not all(parts):
            raise ParseError("expected head<TAB>relation<TAB>tail", edge_file, lineno)
        h, rname, t = parts
        if rname.endswith(INVERSE_SUFFIX):
            raise ParseError(f"relation names may not end in {INVERSE_SUFFIX!r}", edge_file, lineno)
        for n in (h, t):
            if n not in index:
                raise ParseError(f"node {n!r} not declared in node type file", edge_file, lineno)
        u, v = index[h], index[t]
        k = rel_index.get(rname)
        if k is None and relation_file is not None:
            raise ParseError(f"relation {rname!r} not declared in relation file", edge_file, lineno)
        if k is None:
            k = rel_index[rname] = len(rel_types)
            rel_types.append((node_types[u], node_types[v]))
        elif rel_types[k] != (node_types[u], node_types[v]):
            dom, rng = rel_types[k]
            inv_types = {i: n for n, i in type_index.items()}
            raise SchemaError(
                f"{edge_file}:line {lineno}: edge ({h}, {rname}, {t}) violates {rname}: "
                f"{inv_types[dom]} -> {inv_types[rng]}"
            )
        raw_edges.append((u, k, v))

    counts = [0] * len(rel_types)
    for u, k, v in set(raw_edges):
        counts[k] += 1
    keep = [k for k in range(len(rel_types)) if counts[k] >= min_relation_edges]
    remap = {k: i for i, k in enumerate(keep)}
    rel_names = {i: n for n, i in rel_index.items()}

    per_type_count = [0] * len(type_index)
    for t in node_types:
        per_type_count[t] += 1
    features: list[tuple[int, ...]] = [()] * len(names)
    featured_types: set[int] = set()
    if feature_file is not None:
        given: dict[int, tuple[int, ...]] = {}
        for lineno, parts in _read_lines(feature_file):
            if len(parts) not in (1, 2) or parts[0] not in index:
                raise ParseError("expected known node_id<TAB>feature indices", feature_file, lineno)
            try:
                idx = tuple(sorted({int(x) for x in (parts[1].split() if len(parts) == 2 else [])}))
            except ValueError:
                raise ParseError("feature indices must be integers", feature_file, lineno) from None
            if any(i < 0 for i in idx):
                raise ParseError("feature indices must be non-negative", feature_file, lineno)
            given[index[parts[0]]] = idx
        featured_types = {node_types[v] for v in given}
        for v, t in enumerate(node_types):
            if t in featured_types:
                if v not in given:
                    raise SchemaError(f"node {names[v]} has no features but its type is featured")
                features[v] = given[v]
    feat_dim = list(per_type_count)
    local = [0] * len(type_index)
    for v, t in enumerate(node_types):
        if t in featured_types:
            continue
        features[v] = (local[t],)
        local[t] += 1
    for t in featured_types:
        feat_dim[t] = 1 + max((max(features[v]) for v in range(len(names)) if node_types[v] == t and features[v]),
                              default=0)

    type_names = sorted(type_index, key=type_index.get)
    types = [NodeType(i, n, max(1, feat_dim[i])) for i, n in enumerate(type_names)]
    relations = []
    for i, k in enumerate(keep):
        dom, rng = rel_types[k]
        relations.append(Relation(2 * i, rel_names[k], dom, rng, 2 * i + 1))
        relations.append(Relation(2 * i + 1, rel_names[k] + INVERSE_SUFFIX, rng, dom, 2 * i))
    edges = [(u, 2 * remap[k], v) for u, k, v in raw_edges if k in remap]
    return TypedGraph(names, node_types, types, relations, features, edges)


def read_graph(directory) -> TypedGraph:
    """Load a graph written by :func:`write_graph`."""
    d = Path(directory)
    feats = d / "features.tsv"
    rels = d / "relations.tsv"
    return ingest(
        d / "edges.tsv",
        d / "nodes.tsv",
        feats if feats.exists() else None,
        relation_file=rels if rels.exists() else None,
    )


def write_graph(g: TypedGraph, directory) -> bool:
    """Write the canonical serialization; returns True if any file changed."""
    from .atomic import write_text_if_changed

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    changed = False
    files = g.serialize()
    for name, text in files.items():
        changed |= write_text_if_changed(d / name, text)
    stale = d / "features.tsv"
    if "features.tsv" not in files and stale.exists():
        os.remove(stale)
        changed = True
    return changed


def split_edges(g: TypedGraph, fraction: float, seed: int) -> GraphSplit:
    """Delete a uniform fraction of forward edges together with their inverses."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    forward = g.edges()
    k = int(round(fraction * len(forward)))
    if k < 1:
        raise ValueError(f"fraction {fraction} of {len(forward)} edges deletes nothing")
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(forward), size=k, replace=False).tolist())
    dropped = {forward[i] for i in chosen}
    deleted = set()
    for u, r, v in dropped:
        deleted.add((u, r, v))
        deleted.add((v, r ^ 1, u))
    train = g.with_edges(e for e in forward if e not in dropped)
    return GraphSplit(train, frozenset(deleted))


def nodes_of_type(g: TypedGraph, t: int) -> tuple[int, ...]:
    return g.nodes_of_type(t)


def neighbors(g: TypedGraph, v: int, r: int) -> tuple[int, ...]:
    return g.neighbors(v, r)


def synthetic_blocks(
    num_types: int = 3,
    nodes_per_type: int = 100,
    density: float = 0.5,
    num_relations: int = 4,
    num_blocks: int = 10,
    seed: int = 0,
) -> TypedGraph:
    """Random graph with planted block structure.

    Relation ``k`` links type ``k % T`` to type ``(k + 1 + k // T) % T``.
    Each relation draws its own balanced partition of its domain nodes and
    of its range nodes into ``num_blocks`` blocks; an edge ``(u, k, v)`` is
    present with probability ``density`` when ``u`` and ``v`` share a block
    and never otherwise.
    """
    if num_types < 1 or nodes_per_type < 1 or num_relations < 1 or num_blocks < 1:
        raise ValueError("synthetic graph sizes must be positive")
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    names = [f"t{t}_{i}" for t in range(num_types) for i in range(nodes_per_type)]
    node_types = [t for t in range(num_types) for _ in range(nodes_per_type)]
    types = [NodeType(t, f"type{t}", nodes_per_type) for t in range(num_types)]
    relations = []
    edges = []
    for k in range(num_relations):
        dom = k % num_types
        rng_t = (k + 1 + k // num_types) % num_types
        relations.append(Relation(2 * k, f"rel{k}", dom, rng_t, 2 * k + 1))
        relations.append(Relation(2 * k + 1, f"rel{k}{INVERSE_SUFFIX}", rng_t, dom, 2 * k))
        dom_block = rng.permutation(np.arange(nodes_per_type) % num_blocks)
        rng_block = rng.permutation(np.arange(nodes_per_type) % num_blocks)
        coin = rng.random((nodes_per_type, nodes_per_type))
        for i in range(nodes_per_type):
            for j in range(nodes_per_type):
                if dom_block[i] == rng_block[j] and coin[i, j] < density:
                    edges.append((dom * nodes_per_type + i, 2 * k, rng_t * nodes_per_type + j))
    features = [(i,) for _ in range(num_types) for i in range(nodes_per_type)]
    return TypedGraph(names, node_types, types, relations, features, edges)


def parse_synthetic(spec: str, seed: int = 0) -> TypedGraph:
    """Build a graph from ``blocks:K,N,p[,R[,C]]``.

    ``K`` node types of ``N`` nodes each, intra-block density ``p``,
    ``R`` relations (default 4) and ``C`` blocks per relation (default 10).
    """
    kind, _, args = spec.partition(":")
    if kind != "blocks" or not args:
        raise ValueError(f"unknown synthetic graph spec {spec!r}; expected blocks:K,N,p[,R[,C]]")
    parts = args.split(",")
    if not 3 <= len(parts) <= 5:
        raise ValueError(f"blocks spec takes 3 to 5 values, got {len(parts)}")
    try:
        k, n, p = int(parts[0]), int(parts[1]), float(parts[2])
        r = int(parts[3]) if len(parts) > 3 else 4
        c = int(parts[4]) if len(parts) > 4 else 10
    except ValueError:
        raise ValueError(f"malformed blocks spec {spec!r}") from None
    return synthetic_blocks(k, n, p, r, c, seed)
