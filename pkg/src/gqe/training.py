"""Max-margin training with an edge-prediction warm-up followed by
per-structure batches over all query shapes."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numkernel as nk
from . import querydag as qd
from .errors import DegenerateError, NumericError, TrainingDivergedError
from .kgraph import TypedGraph
from .model import ModelParams, embed_node, encode_query, score
from .numkernel import GradientTape, Var
from .sampler import QueryExample

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8

PATH_STRUCTURES = ("chain2", "chain3")


@dataclass
class TrainConfig:
    """Hyperparameters for both training stages.

    Args:
        lr: Adam step size.
        batch_size: examples per batch (``B``).
        dim: embedding dimension.
        margin: hinge margin.
        path_weight: loss factor for multi-edge chains.
        inter_weight: loss factor for structures with an intersection.
        val_every: batches between validations.
        patience: validations without improvement before stopping.
        seed: root of every random stream used in training.
        clip: global gradient-norm cap in the second stage.
        max_batches_stage1: hard cap on first-stage batches.
        max_batches_stage2: hard cap on second-stage batches.
        mirror_hard: reuse the standard-negative queries for the hard-negative
            batch instead of drawing a fresh set.
    """

    lr: float = 0.01
    batch_size: int = 256
    dim: int = 128
    margin: float = 1.0
    path_weight: float = 0.01
    inter_weight: float = 0.005
    val_every: int = 5000
    patience: int = 5
    seed: int = 0
    clip: float = 10.0
    max_batches_stage1: int = 100_000
    max_batches_stage2: int = 100_000
    mirror_hard: bool = False

    def __post_init__(self):
        for name in ("lr", "batch_size", "dim", "margin", "path_weight", "inter_weight",
                     "val_every", "clip", "max_batches_stage1", "max_batches_stage2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")

    def weight(self, structure: str) -> float:
        if structure == "chain1":
            return 1.0
        if qd.structure(structure).has_intersection:
            return self.inter_weight
        return self.path_weight

    def to_json(self) -> dict:
        return asdict(self)


# -- loss ------------------------------------------------------------------------
def margin_loss(params: ModelParams, g: TypedGraph, ex: QueryExample, negative: int,
                margin: float = 1.0, query_id=None) -> Var:
    """``max(0, margin - score(q, z_pos) + score(q, z_neg))`` recorded on the active tape."""
    if g.node_type(negative) != ex.query.target_type:
        raise ValueError("negative does not have the query's target type")
    try:
        q = encode_query(params, g, ex.query, validate=False).vector
        s_pos = score(q, embed_node(params, g, ex.positive))
        s_neg = score(q, embed_node(params, g, negative))
    except DegenerateError as exc:
        label = f"query {query_id}" if query_id is not None else "query"
        raise NumericError(f"{label} ({ex.structure}): {exc}") from None
    return nk.hinge(nk.add(nk.sub(Var(margin), s_pos), s_neg))


def hinge_value(s_pos: float, s_neg: float, margin: float = 1.0) -> float:
    return max(0.0, margin - s_pos + s_neg)


# -- optimizer -------------------------------------------------------------------
@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPSILON

    @classmethod
    def for_params(cls, params: Sequence[Var]) -> "OptimizerState":
        return cls([np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def optimizer_step(state: OptimizerState, params: Sequence[Var], grads: Sequence[np.ndarray], lr: float) -> None:
    """One Adam update with bias correction, in place."""
    if len(grads) != len(params) or len(state.m) != len(params):
        raise ValueError("parameter, gradient and state lists differ in length")
    for p, gr in zip(params, grads):
        if np.shape(gr) != p.shape:
            raise ValueError(f"gradient for {p.name} has shape {np.shape(gr)}, expected {p.shape}")
        if not np.all(np.isfinite(gr)):
            raise NumericError(f"non-finite gradient for {p.name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for i, (p, gr) in enumerate(zip(params, grads)):
        m = state.m[i] = b1 * state.m[i] + (1.0 - b1) * gr
        v = state.v[i] = b2 * state.v[i] + (1.0 - b2) * gr * gr
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- batches ---------------------------------------------------------------------
@dataclass
class LogRecord:
    batch: int
    stage: int
    structure: str
    negatives: str
    raw_loss: float
    weighted_loss: float
    grad_norm: float
    clipped: bool = False
    val_macro_auc: float | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        if d["val_macro_auc"] is None:
            del d["val_macro_auc"]
        return d


@dataclass
class TrainLog:
    records: list[LogRecord] = field(default_factory=list)
    validations: list[tuple[int, float]] = field(default_factory=list)
    best_val: float = -math.inf
    best_batch: int = -1
    stopped: str = ""
    clipped: int = 0

    @property
    def total_loss(self) -> float:
        return math.fsum(r.weighted_loss for r in self.records)

    def losses(self) -> list[float]:
        return [r.raw_loss for r in self.records]


def _batch_step(params, g, batch, negatives, weight, cfg, opt, rng, clip, start_id):
    """Forward and backward over one single-structure batch; returns (raw, norm, clipped)."""
    plist = params.parameters()
    with GradientTape() as tape:
        total = None
        for j, ex in enumerate(batch):
            pool = ex.hard_negatives if negatives == "hard" else ex.standard_negatives
            neg = pool[int(rng.integers(len(pool)))]
            term = margin_loss(params, g, ex, neg, cfg.margin, query_id=start_id + j)
            total = term if total is None else nk.add(total, term)
        raw = nk.scale(total, 1.0 / len(batch))
        objective = nk.scale(raw, weight)
    raw_value = float(raw.value)
    if not math.isfinite(raw_value):
        raise NumericError("non-finite loss")
    grads = tape.gradient(objective, plist)
    gl = [grads[p] for p in plist]
    norm = math.sqrt(math.fsum(float(np.sum(x * x)) for x in gl))
    clipped = clip is not None and norm > clip
    if clipped:
        gl = [x * (clip / norm) for x in gl]
    optimizer_step(opt, plist, gl, cfg.lr)
    return raw_value, norm, clipped


def _stream(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 100 + key]))


class _Cycler:
    """Endless shuffled passes over a list; reshuffles at each pass."""

    def __init__(self, items, rng):
        self.items = list(items)
        self.rng = rng
        self.order = []

    def take(self, n):
        out = []
        while len(out) < n:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.items)))
            out.append(self.items[self.order.pop()])
        return out


def default_validator(g: TypedGraph, examples, structures=None, include_chain1: bool = True):
    """Validation callback: macro AUC over ``examples`` (optionally filtered)."""
    from .evaluation import evaluate

    chosen = [ex for ex in examples if structures is None or ex.structure in structures]

    def run(params):
        return evaluate(params, g, chosen, "both", include_chain1).macro_auc

    return run


class _Tracker:
    def __init__(self, params, cfg, log, validate):
        self.best = params.copy()
        self.cfg = cfg
        self.log = log
        self.validate = validate
        self.bad = 0

    def check(self, params, batch) -> bool:
        """Validate; returns True when patience is exhausted."""
        val = float(self.validate(params))
        self.log.validations.append((batch, val))
        if self.log.records:
            self.log.records[-1].val_macro_auc = val
        if val > self.log.best_val:
            self.log.best_val, self.log.best_batch = val, batch
            self.best = params.copy()
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.cfg.patience


def train_stage1_edges(params: ModelParams, g: TypedGraph, train: Sequence[QueryExample],
                       cfg: TrainConfig, validate: Callable[[ModelParams], float],
                       log: TrainLog | None = None) -> tuple[ModelParams, TrainLog]:
    """Edge prediction until validation stops improving.

    Uses only chain1 examples. Returns a copy of the parameters at the best
    validation score; ``params`` itself holds the final state.
    """
    edges = [ex for ex in train if ex.structure == "chain1" and ex.standard_negatives]
    if not edges:
        raise ValueError("stage 1 needs chain1 training examples")
    log = log if log is not None else TrainLog()
    rng = _stream(cfg.seed, 1)
    cycle = _Cycler(edges, rng)
    opt = OptimizerState.for_params(params.parameters())
    tracker = _Tracker(params, cfg, log, validate)
    for b in range(cfg.max_batches_stage1):
        batch = cycle.take(min(cfg.batch_size, len(edges)))
        try:
            raw, norm, _ = _batch_step(params, g, batch, "standard", 1.0, cfg, opt, rng, None, b * cfg.batch_size)
        except NumericError as exc:
            log.stopped = f"diverged: {exc}"
            raise TrainingDivergedError(str(exc), tracker.best, log) from None
        log.records.append(LogRecord(b, 1, "chain1", "standard", raw, raw, norm))
        if (b + 1) % cfg.val_every == 0 and tracker.check(params, b):
            log.stopped = "patience"
            return tracker.best, log
    if cfg.max_batches_stage1 % cfg.val_every:
        tracker.check(params, cfg.max_batches_stage1 - 1)
    log.stopped = log.stopped or "max_batches"
    return tracker.best, log


def stage2_batches(train: Sequence[QueryExample], cfg: TrainConfig, rng: np.random.Generator):
    """Yield ``(structure, negatives, examples)`` batches forever.

    Each round has one standard-negative batch per structure and, for
    structures with an intersection, one hard-negative batch.
    """
    by_struct: dict[str, list] = {}
    for ex in train:
        by_struct.setdefault(ex.structure, []).append(ex)
    names = [n for n in qd.STRUCTURE_NAMES if n in by_struct]
    std = {n: _Cycler([e for e in by_struct[n] if e.standard_negatives], rng) for n in names}
    hard = {n: _Cycler([e for e in by_struct[n] if e.hard_negatives], rng) for n in names
            if qd.structure(n).has_intersection}
    while True:
        for n in names:
            if not std[n].items:
                continue
            batch = std[n].take(min(cfg.batch_size, len(std[n].items)))
            yield n, "standard", batch
            if n in hard and hard[n].items:
                if cfg.mirror_hard:
                    mirrored = [e for e in batch if e.hard_negatives]
                    if mirrored:
                        yield n, "hard", mirrored
                else:
                    yield n, "hard", hard[n].take(min(cfg.batch_size, len(hard[n].items)))


def train_stage2_full(params: ModelParams, g: TypedGraph, train: Sequence[QueryExample],
                      cfg: TrainConfig, validate: Callable[[ModelParams], float],
                      log: TrainLog | None = None) -> tuple[ModelParams, TrainLog]:
    """Training on every structure with per-structure loss weights and clipping."""
    if not train:
        raise ValueError("stage 2 needs training examples")
    log = log if log is not None else TrainLog()
    log.best_val, log.best_batch = -math.inf, -1
    rng = _stream(cfg.seed, 2)
    opt = OptimizerState.for_params(params.parameters())
    tracker = _Tracker(params, cfg, log, validate)
    batches = stage2_batches(train, cfg, rng)
    for b in range(cfg.max_batches_stage2):
        name, kind, batch = next(batches)
        w = cfg.weight(name)
        try:
            raw, norm, clipped = _batch_step(params, g, batch, kind, w, cfg, opt, rng, cfg.clip, b * cfg.batch_size)
        except NumericError as exc:
            log.stopped = f"diverged: {exc}"
            raise TrainingDivergedError(str(exc), tracker.best, log) from None
        log.clipped += clipped
        log.records.append(LogRecord(b, 2, name, kind, raw, w * raw, norm, clipped))
        if (b + 1) % cfg.val_every == 0 and tracker.check(params, b):
            log.stopped = "patience"
            return tracker.best, log
    if cfg.max_batches_stage2 % cfg.val_every:
        tracker.check(params, cfg.max_batches_stage2 - 1)
    log.stopped = log.stopped or "max_batches"
    return tracker.best, log


def edge_only_ablation(stage1: ModelParams, aggregator: str | None = None) -> ModelParams:
    """Edge-trained parameters with the intersection network replaced by a plain elementwise reduction."""
    return stage1.with_options(intersection_net=False, aggregator=aggregator or stage1.aggregator)
