"""Query embedding model: node encoder, projection and intersection operators,
query encoding by Kahn traversal, scoring, and the exact one-hot construction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numkernel as nk
from .errors import CapacityError, DegenerateError, SchemaError
from .kgraph import TypedGraph
from .numkernel import Var
from .querydag import QueryDag, check

VARIANTS = ("bilinear", "distmult", "transe")
AGGREGATORS = ("min", "mean")


class ModelParams:
    """All trainable tensors plus the architecture choices they belong to.

    Tensors are indexed by type id (``Z``, ``B``, ``bias``, ``W``) and by
    relation id (``R``). For ``distmult`` and ``transe`` the entries of ``R``
    are vectors (diagonal and translation respectively).
    """

    def __init__(
        self,
        dim: int,
        variant: str,
        aggregator: str,
        type_names: Sequence[str],
        relation_names: Sequence[str],
        Z: Sequence[Var],
        R: Sequence[Var],
        B: Sequence[Var],
        bias: Sequence[Var],
        W: Sequence[Var],
        intersection_net: bool = True,
        exact: bool = False,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown projection variant {variant!r}")
        if aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {aggregator!r}")
        self.dim = dim
        self.variant = variant
        self.aggregator = aggregator
        self.type_names = tuple(type_names)
        self.relation_names = tuple(relation_names)
        self.Z, self.R, self.B, self.bias, self.W = list(Z), list(R), list(B), list(bias), list(W)
        self.intersection_net = intersection_net
        self.exact = exact
        for name, group in self._groups():
            for label, v in zip(self._labels(name), group):
                v.name = f"{name}/{label}"

    def _groups(self):
        return (("Z", self.Z), ("R", self.R), ("B", self.B), ("bias", self.bias), ("W", self.W))

    def _labels(self, group):
        return self.relation_names if group == "R" else self.type_names

    def parameters(self) -> list[Var]:
        return [v for _, group in self._groups() for v in group]

    def named_parameters(self) -> dict[str, Var]:
        return {v.name: v for v in self.parameters()}

    def copy(self) -> "ModelParams":
        def dup(vs):
            return [Var(v.value.copy()) for v in vs]

        return ModelParams(
            self.dim, self.variant, self.aggregator, self.type_names, self.relation_names,
            dup(self.Z), dup(self.R), dup(self.B), dup(self.bias), dup(self.W),
            self.intersection_net, self.exact,
        )

    def load_state(self, other: "ModelParams") -> None:
        """Copy values from ``other`` (same architecture) in place."""
        for mine, theirs in zip(self.parameters(), other.parameters()):
            mine.value[...] = theirs.value

    def with_options(self, **kw) -> "ModelParams":
        """A copy with different architecture flags (e.g. ``intersection_net=False``)."""
        out = self.copy()
        for k, v in kw.items():
            if k == "aggregator" and v not in AGGREGATORS:
                raise ValueError(f"unknown aggregator {v!r}")
            setattr(out, k, v)
        return out

    @classmethod
    def init(
        cls,
        g: TypedGraph,
        dim: int,
        variant: str = "bilinear",
        aggregator: str = "mean",
        rng: np.random.Generator | None = None,
        intersection_net: bool = True,
        noise: float = 0.1,
    ) -> "ModelParams":
        """Random initialization with near-identity operators."""
        if dim < 1:
            raise ValueError("embedding dimension must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(dim)
        Z = [Var(rng.uniform(-bound, bound, size=(dim, t.feature_dim))) for t in g.types]
        R = []
        for _ in g.relations:
            if variant == "bilinear":
                R.append(Var(np.eye(dim) + rng.uniform(-noise, noise, size=(dim, dim))))
            elif variant == "distmult":
                R.append(Var(np.ones(dim) + rng.uniform(-noise, noise, size=dim)))
            elif variant == "transe":
                R.append(Var(rng.uniform(-noise, noise, size=dim)))
            else:
                raise ValueError(f"unknown projection variant {variant!r}")
        B = [Var(np.eye(dim) + rng.uniform(-noise, noise, size=(dim, dim))) for _ in g.types]
        bias = [Var(np.zeros(dim)) for _ in g.types]
        W = [Var(np.eye(dim) + rng.uniform(-noise, noise, size=(dim, dim))) for _ in g.types]
        return cls(dim, variant, aggregator, [t.name for t in g.types], [r.name for r in g.relations],
                   Z, R, B, bias, W, intersection_net=intersection_net)


@dataclass(frozen=True)
class OpCounts:
    projections: int
    intersections: int


@dataclass(frozen=True)
class QueryEmbedding:
    vector: Var
    query: QueryDag
    ops: OpCounts


def embed_node(params: ModelParams, g: TypedGraph, v: int) -> Var:
    """Bag-of-features embedding: feature matrix times indicator, over the feature count."""
    feats = g.features(v)
    if not feats:
        raise DegenerateError(f"node {g.node_names[v]} has no active features")
    return nk.gather_mean(params.Z[g.node_type(v)], feats)


def project(params: ModelParams, q: Var, r: int) -> Var:
    if not 0 <= r < len(params.R):
        raise ValueError(f"unknown relation id {r}")
    rel = params.R[r]
    if params.variant == "bilinear":
        return nk.matvec(rel, q)
    if params.variant == "distmult":
        return nk.hadamard(rel, q)
    return nk.add(q, rel)


def intersect(params: ModelParams, inputs: Sequence[Var], t: int) -> Var:
    """Symmetric set-intersection operator for inputs of target type ``t``."""
    if not inputs:
        raise ValueError("intersect needs at least one input")
    reduce_ = nk.min_across if params.aggregator == "min" else nk.mean_across
    if not params.intersection_net:
        return reduce_(list(inputs))
    hidden = [nk.relu(nk.add(nk.matvec(params.B[t], x), params.bias[t])) for x in inputs]
    return nk.matvec(params.W[t], reduce_(hidden))


def score(q: Var, z: Var, allow_zero: bool = False) -> Var:
    """Cosine similarity; with ``allow_zero`` a zero query vector scores 0."""
    if allow_zero and not np.any(q.value):
        return Var(0.0)
    return nk.cosine(q, z)


def encode_query(params: ModelParams, g: TypedGraph, q: QueryDag, validate: bool = True) -> QueryEmbedding:
    """Embed ``q`` by Kahn traversal of its DAG.

    Anchors start from their node embeddings. Removing an edge applies the
    projection to the source's vector; popping a node with several incoming
    vectors applies the intersection, a single incoming vector passes through.
    """
    if validate:
        check(q, g)
    n = len(q.nodes)
    indeg = [0] * n
    out_edges = [[] for _ in range(n)]
    for s, r, d in q.edges:
        indeg[d] += 1
        out_edges[s].append((r, d))
    inbox: list[list[Var]] = [[] for _ in range(n)]
    queue = deque(i for i in range(n) if indeg[i] == 0)
    projections = intersections = 0
    vec = None
    while queue:
        u = queue.popleft()
        node = q.nodes[u]
        if node.is_anchor:
            vec = embed_node(params, g, node.node)
        elif len(inbox[u]) == 1:
            vec = inbox[u][0]
        else:
            vec = intersect(params, inbox[u], node.type)
            intersections += 1
        for r, d in out_edges[u]:
            inbox[d].append(project(params, vec, r))
            projections += 1
            indeg[d] -= 1
            if indeg[d] == 0:
                queue.append(d)
    return QueryEmbedding(vec, q, OpCounts(projections, intersections))


def embedding_table(params: ModelParams, g: TypedGraph, t: int) -> np.ndarray:
    """Embeddings of every node of type ``t`` as rows, in ``nodes_of_type`` order."""
    Zt = params.Z[t].value
    nodes = g.nodes_of_type(t)
    if g.is_one_hot(t):
        return Zt.T.copy()
    out = np.empty((len(nodes), params.dim))
    for i, v in enumerate(nodes):
        feats = g.features(v)
        if not feats:
            raise DegenerateError(f"node {g.node_names[v]} has no active features")
        out[i] = Zt[:, list(feats)].mean(axis=1)
    return out


def cosine_scores(q: np.ndarray, table: np.ndarray, allow_zero: bool = False) -> np.ndarray:
    """Cosine of ``q`` against every row of ``table``."""
    qn = np.linalg.norm(q)
    if qn == 0.0:
        if allow_zero:
            return np.zeros(len(table))
        raise DegenerateError("query embedding has zero norm")
    norms = np.linalg.norm(table, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (table @ q) / (norms * qn)
    return np.where(norms > 0, s, 0.0)


def answer(params: ModelParams, g: TypedGraph, q: QueryDag, top_k: int) -> list[tuple[int, float]]:
    """Rank all nodes of the target type by score; ties broken by node id."""
    emb = encode_query(params, g, q)
    t = q.target_type
    nodes = np.asarray(g.nodes_of_type(t))
    scores = cosine_scores(emb.vector.value, embedding_table(params, g, t), allow_zero=params.exact)
    order = np.lexsort((nodes, -scores))[: max(0, top_k)]
    return [(int(nodes[i]), float(scores[i])) for i in order]


def exact_parameters(g: TypedGraph, memory_budget: int = 1 << 30) -> ModelParams:
    """One-hot embeddings, adjacency projections, identity intersections with min.

    ``R[r][j, i] = 1`` iff ``r(v_i, v_j)`` holds, so ``R[r] @ indicator(S)`` is
    nonzero exactly on the ``r``-neighbors of ``S``.
    """
    d = g.num_nodes
    needed = 8 * d * (d * (len(g.relations) + 2 * len(g.types)) + d + len(g.types))
    if needed > memory_budget:
        raise CapacityError(f"exact mode needs {needed} bytes for {d} nodes; budget is {memory_budget}")
    if d == 0:
        raise CapacityError("exact mode needs at least one node")
    Z = []
    for t in g.types:
        if not g.is_one_hot(t.id):
            raise SchemaError(f"exact mode needs one-hot features; type {t.name} has bag-of-features")
        m = np.zeros((d, t.feature_dim))
        for i, v in enumerate(g.nodes_of_type(t.id)):
            m[v, i] = 1.0
        Z.append(Var(m))
    R = []
    for rel in g.relations:
        m = np.zeros((d, d))
        for u, vs in g.adjacency(rel.id).items():
            m[list(vs), u] = 1.0
        R.append(Var(m))
    B = [Var(np.eye(d)) for _ in g.types]
    bias = [Var(np.zeros(d)) for _ in g.types]
    W = [Var(np.eye(d)) for _ in g.types]
    return ModelParams(d, "bilinear", "min", [t.name for t in g.types], [r.name for r in g.relations],
                       Z, R, B, bias, W, intersection_net=True, exact=True)


def positive_set(params: ModelParams, g: TypedGraph, q: QueryDag) -> tuple[int, ...]:
    """Nodes of the target type whose score is strictly positive."""
    emb = encode_query(params, g, q)
    t = q.target_type
    nodes = g.nodes_of_type(t)
    s = cosine_scores(emb.vector.value, embedding_table(params, g, t), allow_zero=True)
    return tuple(v for v, x in zip(nodes, s) if x > 0)
