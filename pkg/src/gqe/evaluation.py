"""ROC AUC, average percentile rank, macro-averaged reports and the
edge-enumeration baseline."""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import querydag as qd
from .errors import DegenerateError
from .kgraph import TypedGraph
from .model import ModelParams, cosine_scores, embed_node, embedding_table, encode_query, project, score
from .querydag import QueryDag
from .sampler import QueryExample

NEGATIVE_KINDS = ("standard", "hard")
BASELINE_SCALES = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)


def auc(pos, neg) -> float:
    """Mann-Whitney statistic ``P(pos > neg) + P(pos == neg) / 2``."""
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.sort(np.asarray(neg, dtype=np.float64).ravel())
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc needs at least one positive and one negative score")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    wins = below.sum() + 0.5 * (upto - below).sum()
    return float(wins / (pos.size * neg.size))


def percentile_rank(pos_score: float, neg_scores) -> float:
    """Fraction of the pool scored below the positive, ties counting half."""
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if neg.size == 0:
        raise DegenerateError("empty negative pool")
    below = np.count_nonzero(neg < pos_score)
    ties = np.count_nonzero(neg == pos_score)
    return float((below + 0.5 * ties) / neg.size)


def _example_scores(params: ModelParams, g: TypedGraph, ex: QueryExample, kind: str):
    pool = ex.standard_negatives if kind == "standard" else ex.hard_negatives
    if not pool:
        raise DegenerateError("empty negative pool")
    emb = encode_query(params, g, ex.query, validate=False)
    t = ex.query.target_type
    table = embedding_table(params, g, t)
    s = cosine_scores(emb.vector.value, table, allow_zero=params.exact)
    local = [g.local_index(v) for v in pool]
    return float(s[g.local_index(ex.positive)]), s[local]


def apr(example: QueryExample, params: ModelParams, g: TypedGraph, kind: str = "standard") -> float:
    pos, neg = _example_scores(params, g, example, kind)
    return percentile_rank(pos, neg)


@dataclass
class Cell:
    structure: str
    kind: str
    auc: float
    apr: float
    count: int
    skipped: int = 0


@dataclass
class MetricReport:
    cells: list[Cell]
    macro_auc: float
    macro_apr: float
    skipped: int = 0
    ranks: list[tuple[int, str, str, float, float]] = field(default_factory=list, repr=False)

    def cell(self, structure: str, kind: str = "standard") -> Cell:
        for c in self.cells:
            if c.structure == structure and c.kind == kind:
                return c
        raise KeyError((structure, kind))

    def macro(self, structures=None, kinds=NEGATIVE_KINDS) -> float:
        """Mean AUC over the cells whose structure and kind are selected."""
        vals = [c.auc for c in self.cells
                if (structures is None or c.structure in structures) and c.kind in kinds]
        return float(np.mean(vals)) if vals else math.nan

    def to_json(self) -> dict:
        return {
            "macro_auc": self.macro_auc,
            "macro_apr": self.macro_apr,
            "skipped": self.skipped,
            "cells": [vars(c).copy() for c in self.cells],
        }

    def to_table(self) -> str:
        rows = [("structure", "negatives", "n", "auc", "apr")]
        for c in self.cells:
            rows.append((c.structure, c.kind, str(c.count), f"{c.auc:.4f}", f"{100 * c.apr:.2f}"))
        rows.append(("macro", "", str(sum(c.count for c in self.cells)),
                     f"{self.macro_auc:.4f}", f"{100 * self.macro_apr:.2f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        lines = ["  ".join(x.ljust(w) if i < 2 else x.rjust(w) for i, (x, w) in enumerate(zip(r, widths))).rstrip()
                 for r in rows]
        return "\n".join(lines) + "\n"

    def ranks_csv(self) -> str:
        buf = io.StringIO()
        buf.write("example,structure,negatives,score,percentile\n")
        for i, s, k, sc, pr in self.ranks:
            buf.write(f"{i},{s},{k},{sc!r},{pr!r}\n")
        return buf.getvalue()


def evaluate(params: ModelParams, g: TypedGraph, examples, negatives: str = "both",
             include_chain1: bool = True) -> MetricReport:
    """Per-structure AUC/APR and their unweighted macro average.

    AUC for a cell pools every positive score against every negative score
    of that cell. Hard-negative cells exist only for structures with an
    intersection.
    """
    if negatives not in ("standard", "hard", "both"):
        raise ValueError("negatives must be standard, hard or both")
    examples = list(examples)
    if not examples:
        raise ValueError("evaluate needs a nonempty dataset")
    kinds = NEGATIVE_KINDS if negatives == "both" else (negatives,)
    grouped: dict[tuple[str, str], list] = {}
    skipped_by: dict[tuple[str, str], int] = {}
    ranks = []
    for i, ex in enumerate(examples):
        for kind in kinds:
            if kind == "hard" and not qd.structure(ex.structure).has_intersection:
                continue
            key = (ex.structure, kind)
            try:
                pos, neg = _example_scores(params, g, ex, kind)
            except DegenerateError:
                skipped_by[key] = skipped_by.get(key, 0) + 1
                continue
            pr = percentile_rank(pos, neg)
            grouped.setdefault(key, []).append((pos, neg, pr))
            ranks.append((i, ex.structure, kind, pos, pr))
    cells = []
    order = {n: i for i, n in enumerate(qd.STRUCTURE_NAMES)}
    for key in sorted(set(grouped) | set(skipped_by), key=lambda k: (NEGATIVE_KINDS.index(k[1]), order[k[0]])):
        items = grouped.get(key, [])
        if not items:
            continue
        pos = np.array([x[0] for x in items])
        neg = np.concatenate([x[1] for x in items])
        cells.append(Cell(key[0], key[1], auc(pos, neg), float(np.mean([x[2] for x in items])),
                          len(items), skipped_by.get(key, 0)))
    used = [c for c in cells if include_chain1 or c.structure != "chain1"]
    macro_auc = float(np.mean([c.auc for c in used])) if used else math.nan
    macro_apr = float(np.mean([c.apr for c in used])) if used else math.nan
    return MetricReport(cells, macro_auc, macro_apr, sum(skipped_by.values()), ranks)


# -- enumeration baseline --------------------------------------------------------
def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def enumeration_baseline(params: ModelParams, g: TypedGraph, q: QueryDag, candidate: int, scale: float) -> float:
    """Soft-AND of per-edge likelihoods for a query without bound variables.

    Each edge ``tau(a, target)`` contributes
    ``sigmoid(scale * score(project(z_a, tau), z_candidate))``.
    """
    if any(n.kind == qd.VARIABLE for n in q.nodes):
        raise ValueError("enumeration baseline is not applicable to queries with bound variables")
    if g.node_type(candidate) != q.target_type:
        raise ValueError("candidate does not have the target type")
    z = embed_node(params, g, candidate)
    out = 1.0
    for s, r, _ in q.edges:
        a = q.nodes[s].node
        proj = project(params, embed_node(params, g, a), r)
        out *= _sigmoid(scale * float(score(proj, z, allow_zero=params.exact).value))
    return out



def fit_baseline_scale(params: ModelParams, g: TypedGraph, examples, grid=BASELINE_SCALES) -> float:
    """Grid value maximizing the log-likelihood of edge classification.

    Each chain1 example contributes its positive (label 1) and its standard
    negatives (label 0). Ties go to the smallest scale.
    """
    pos_scores, neg_scores = [], []
    for ex in examples:
        if ex.structure != "chain1" or not ex.standard_negatives:
            continue
        p, n = _example_scores(params, g, ex, "standard")
        pos_scores.append(p)
        neg_scores.extend(n.tolist())
    if not pos_scores:
        raise ValueError("fitting the baseline scale needs chain1 examples")
    pos, neg = np.array(pos_scores), np.array(neg_scores)
    best, best_ll = None, -np.inf
    for c in grid:
        # log sigmoid(x) = -logaddexp(0, -x)
        ll = -np.logaddexp(0, -c * pos).sum() - np.logaddexp(0, c * neg).sum()
        if ll > best_ll:
            best, best_ll = c, ll
    return float(best)


def to_json_text(report: MetricReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
