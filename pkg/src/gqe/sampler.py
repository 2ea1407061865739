"""Query dataset generation by target-first rejection sampling."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import querydag as qd
from .errors import ParseError, SamplingInfeasibleError
from .kgraph import GraphSplit, TypedGraph
from .querydag import QueryDag, QueryNode, StructureId

log = logging.getLogger(__name__)

RETRY_CAP = 1000


@dataclass
class QueryExample:
    query: QueryDag
    positive: int
    standard_negatives: tuple[int, ...]
    hard_negatives: tuple[int, ...] = ()

    @property
    def structure(self) -> str:
        return self.query.structure


@dataclass
class DatasetSpec:
    """Per-structure example counts and sampling options.

    ``counts`` maps a structure name to ``(train, valid, test)``. ``chain1``
    is special: its train examples are all train-graph edges and its
    valid/test examples are the deleted edges, so its counts are ignored.
    """

    counts: dict[str, tuple[int, int, int]] = field(
        default_factory=lambda: {s: (10_000, 500, 1_000) for s in qd.STRUCTURE_NAMES}
    )
    seed: int = 0
    pool_size: int = 1000
    relations: str = "all"
    test_negatives: str = "full"
    retry_cap: int = RETRY_CAP

    def __post_init__(self):
        for name, c in self.counts.items():
            qd.structure(name)
            if len(c) != 3 or min(c) < 0:
                raise ValueError(f"counts for {name} must be three non-negative integers")
        if self.pool_size < 1:
            raise ValueError("negative pool size must be at least 1")
        if self.relations not in ("all", "forward"):
            raise ValueError("relations must be 'all' or 'forward'")
        if self.test_negatives not in ("full", "train"):
            raise ValueError("test_negatives must be 'full' or 'train'")
        self.counts = {k: tuple(int(x) for x in v) for k, v in self.counts.items()}

    @classmethod
    def uniform(cls, train: int, valid: int, test: int, structures=None, **kw) -> "DatasetSpec":
        names = structures or qd.STRUCTURE_NAMES
        return cls(counts={s: (train, valid, test) for s in names}, **kw)

    def to_json(self) -> dict:
        d = asdict(self)
        d["counts"] = {k: list(v) for k, v in self.counts.items()}
        return d


@dataclass
class Dataset:
    train: list[QueryExample]
    valid: list[QueryExample]
    test: list[QueryExample]
    warnings: list[dict] = field(default_factory=list)

    def split(self, name: str) -> list[QueryExample]:
        return {"train": self.train, "valid": self.valid, "test": self.test}[name]


# -- sampling ---------------------------------------------------------------
def _walk_order(s: StructureId) -> list[int]:
    """Template node indices in the order the backward walk visits them."""
    preds = [[] for _ in s.nodes]
    for a, b in s.edges:
        preds[b].append(a)
    target = s.nodes.index(qd.TARGET)
    order, queue = [], deque([target])
    while queue:
        w = queue.popleft()
        order.append(w)
        queue.extend(sorted(preds[w], key=lambda p: -len(preds[p])))
    return order


def _allowed_steps(g: TypedGraph, w: int, relations: str):
    """``(relation, neighbor)`` pairs a backward step may take from ``w``.

    Stepping from ``w`` along ``rho`` to ``u`` yields the query edge
    ``rho^-1(u, w)``; ``forward`` mode keeps only steps producing forward
    relations in the query.
    """
    steps = g.incident(w)
    if relations == "forward":
        steps = tuple(p for p in steps if p[0] % 2 == 1)
    return steps


def sample_query(g: TypedGraph, s: StructureId, rng: np.random.Generator,
                 relations: str = "all", retry_cap: int = RETRY_CAP) -> tuple[QueryDag, int]:
    """Sample a query of shape ``s`` together with a node that satisfies it.

    The target node is drawn first; the walk then moves backwards through
    the template, drawing as many incident edges at each node as it has
    predecessors. Nodes without predecessors become anchors.
    """
    if g.num_nodes == 0:
        raise SamplingInfeasibleError(s.name, 0)
    order = _walk_order(s)
    preds = [[] for _ in s.nodes]
    for a, b in s.edges:
        preds[b].append(a)
    for _ in range(retry_cap):
        assigned = {order[0]: int(rng.integers(g.num_nodes))}
        edges = []
        ok = True
        for w in order:
            k = len(preds[w])
            if k == 0:
                continue
            steps = _allowed_steps(g, assigned[w], relations)
            if len(steps) < k:
                ok = False
                break
            picks = rng.choice(len(steps), size=k, replace=False)
            for p, idx in zip(sorted(preds[w], key=lambda p: -len(preds[p])), picks):
                rho, u = steps[int(idx)]
                assigned[p] = u
                edges.append((p, rho ^ 1, w))
        if not ok:
            continue
        nodes = []
        for i, role in enumerate(s.nodes):
            v = assigned[i]
            nodes.append(QueryNode(role, g.node_type(v), v if role == qd.ANCHOR else None))
        q = QueryDag(tuple(nodes), tuple(sorted(edges)), s.name)
        return q, assigned[order[0]]
    raise SamplingInfeasibleError(s.name, retry_cap)


def standard_negatives(q: QueryDag, g: TypedGraph, k: int, rng: np.random.Generator,
                       members=None) -> tuple[int, ...]:
    """Up to ``k`` distinct nodes of the target type outside the denotation on ``g``."""
    members = set(qd.denotation(q, g) if members is None else members)
    pool = [v for v in g.nodes_of_type(q.target_type) if v not in members]
    if len(pool) <= k:
        return tuple(pool)
    idx = np.sort(rng.choice(len(pool), size=k, replace=False))
    return tuple(pool[i] for i in idx)


def hard_negatives(q: QueryDag, g: TypedGraph, k: int | None = None,
                   rng: np.random.Generator | None = None, members=None) -> tuple[int, ...] | None:
    """Nodes satisfying the disjunctive relaxation but not the query itself.

    Returns ``None`` for queries without an intersection. With ``k`` set the
    pool is uniformly subsampled to at most ``k`` nodes.
    """
    if not q.has_intersection():
        return None
    members = set(qd.denotation(q, g) if members is None else members)
    pool = [v for v in qd.denotation_disjunctive(q, g) if v not in members]
    if k is None or len(pool) <= k:
        return tuple(pool)
    rng = rng if rng is not None else np.random.default_rng(0)
    idx = np.sort(rng.choice(len(pool), size=k, replace=False))
    return tuple(pool[i] for i in idx)


def _make_example(q, positive, source, neg_graph, spec, rng):
    members = qd.denotation(q, neg_graph)
    std = standard_negatives(q, neg_graph, spec.pool_size, rng, members)
    hard = hard_negatives(q, neg_graph, spec.pool_size, rng, members) or ()
    return QueryExample(q, positive, std, hard)


def _stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def full_graph_of(split: GraphSplit) -> TypedGraph:
    """The train graph with the deleted edges restored."""
    g = split.train_graph
    restored = [e for e in split.deleted_edges if e[1] % 2 == 0]
    return g.with_edges(g.edges() + restored)


def build_dataset(split: GraphSplit, spec: DatasetSpec, full_graph: TypedGraph | None = None) -> Dataset:
    """Sample train/valid/test examples for every structure in ``spec.counts``.

    Train queries come from the train graph. Valid and test queries come
    from the full graph and are kept only if the positive is not reachable
    with train edges alone.
    """
    train_g = split.train_graph
    if full_graph is None:
        full_graph = full_graph_of(split)
    ds = Dataset([], [], [])
    for si, name in enumerate(qd.STRUCTURE_NAMES):
        if name not in spec.counts:
            continue
        s = qd.structure(name)
        n_train, n_valid, n_test = spec.counts[name]
        rng = _stream(spec.seed, 1, si)
        if name == "chain1":
            _edge_examples(ds, split, full_graph, spec, rng)
            continue
        ds.train.extend(_sample_split(ds, s, train_g, train_g, None, n_train, spec, rng, "train"))
        test_neg = full_graph if spec.test_negatives == "full" else train_g
        held = _sample_split(ds, s, full_graph, test_neg, train_g, n_valid + n_test, spec, rng, "valid/test")
        ds.valid.extend(held[:n_valid])
        ds.test.extend(held[n_valid:])
    return ds


def _sample_one(s, source, neg_graph, train_g, spec, rng):
    """One accepted example, or ``None`` once the retry cap is spent."""
    for _ in range(spec.retry_cap):
        try:
            q, pos = sample_query(source, s, rng, spec.relations, retry_cap=spec.retry_cap)
        except SamplingInfeasibleError:
            return None
        # held-out examples must need at least one deleted edge
        if train_g is not None and pos in qd.denotation(q, train_g):
            continue
        ex = _make_example(q, pos, source, neg_graph, spec, rng)
        if ex.standard_negatives:
            return ex
    return None


def _sample_split(ds, s, source, neg_graph, train_g, n, spec, rng, label):
    out = []
    while len(out) < n:
        ex = _sample_one(s, source, neg_graph, train_g, spec, rng)
        if ex is None:
            _warn(ds, s.name, label, n, len(out))
            break
        out.append(ex)
    return out


def _warn(ds, structure, label, requested, produced):
    record = {"structure": structure, "split": label, "requested": requested, "produced": produced,
              "reason": "retry cap exhausted"}
    ds.warnings.append(record)
    log.warning("sampling %s %s: produced %d of %d examples", structure, label, produced, requested)


def _edge_examples(ds, split, full_graph, spec, rng):
    train_g = split.train_graph
    test_neg = full_graph if spec.test_negatives == "full" else train_g
    for u, r, v in train_g.edges(include_inverse=True):
        q = qd.edge_query(u, r, train_g)
        ex = _make_example(q, v, train_g, train_g, spec, rng)
        if ex.standard_negatives:
            ds.train.append(ex)
    deleted = sorted(split.deleted_edges)
    order = rng.permutation(len(deleted))
    n_test = int(round(0.9 * len(deleted)))
    for rank, i in enumerate(order):
        u, r, v = deleted[i]
        q = qd.edge_query(u, r, full_graph)
        ex = _make_example(q, v, full_graph, test_neg, spec, rng)
        if not ex.standard_negatives:
            continue
        (ds.test if rank < n_test else ds.valid).append(ex)


# -- serialization --------------------------------------------------------------
def example_to_json(ex: QueryExample, g: TypedGraph) -> dict:
    names = g.node_names
    return {
        "query": qd.to_json(ex.query, g),
        "positive": names[ex.positive],
        "neg": [names[v] for v in ex.standard_negatives],
        "hard_neg": [names[v] for v in ex.hard_negatives],
    }


def example_from_json(doc: dict, g: TypedGraph) -> QueryExample:
    q = qd.from_json(doc["query"], g)
    return QueryExample(
        q,
        g.node_id(doc["positive"]),
        tuple(g.node_id(n) for n in doc.get("neg", [])),
        tuple(g.node_id(n) for n in doc.get("hard_neg", [])),
    )


def dumps_examples(examples, g: TypedGraph) -> str:
    return "".join(json.dumps(example_to_json(ex, g), sort_keys=True, separators=(",", ":")) + "\n"
                   for ex in examples)


def loads_examples(text: str, g: TypedGraph) -> list[QueryExample]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=lineno, column=exc.colno) from None
        out.append(example_from_json(doc, g))
    return out
