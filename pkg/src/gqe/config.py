"""Run configuration from an INI-style ``key = value`` file plus flag overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import querydag as qd
from .model import AGGREGATORS, VARIANTS
from .training import TrainConfig

# Every random consumer draws from SeedSequence([seed, STREAMS[name]]).
STREAMS = {"synthetic": 1, "split": 2, "sample": 3, "init": 4, "train": 5, "oracle": 6}


def derive_seed(seed: int, stream: str) -> int:
    """Independent 32-bit seed for one named consumer of the run seed."""
    return int(np.random.SeedSequence([seed, STREAMS[stream]]).generate_state(1)[0])


@dataclass
class RunConfig:
    graph: str = "graph"
    data: str = "data"
    checkpoint: str = "checkpoint"
    mode: str = "learned"
    variant: str = "bilinear"
    aggregator: str = "mean"
    seed: int = 0
    threads: int = 1
    delete_fraction: float = 0.1
    structures: tuple[str, ...] = qd.STRUCTURE_NAMES
    train_count: int = 10_000
    valid_count: int = 500
    test_count: int = 1_000
    pool_size: int = 1000
    test_negatives: str = "full"
    oracle_queries: int = 100
    exact_budget: int = 1 << 30
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.mode not in ("learned", "exact"):
            raise ValueError(f"mode must be learned or exact, got {self.mode!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {', '.join(VARIANTS)}")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {', '.join(AGGREGATORS)}")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        for s in self.structures:
            qd.structure(s)

    def dataset_counts(self) -> dict:
        return {s: (self.train_count, self.valid_count, self.test_count) for s in self.structures}


_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}
_RUN_KEYS = {f.name for f in fields(RunConfig)} - {"train"}


def _coerce(value: str, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(x.strip() for x in value.split(",") if x.strip())
    return value.strip()


def parse(text: str, overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from INI text; a missing ``[run]`` header is implied."""
    cp = configparser.ConfigParser(interpolation=None)
    if not text.lstrip().startswith("["):
        text = "[run]\n" + text
    cp.read_string(text)
    values = dict(cp["run"]) if cp.has_section("run") else {}
    if cp.has_section("train"):
        values.update(cp["train"])
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = str(v) if not isinstance(v, str) else v
    base, tdefaults = RunConfig(), TrainConfig()
    run_kw, train_kw = {}, {}
    for key, raw in values.items():
        if key in _RUN_KEYS:
            run_kw[key] = _coerce(raw, getattr(base, key))
        elif key in _TRAIN_KEYS:
            train_kw[key] = _coerce(raw, getattr(tdefaults, key))
        else:
            raise ValueError(f"unknown configuration key {key!r}")
    if "seed" in run_kw:
        train_kw.setdefault("seed", run_kw["seed"])
    return RunConfig(**run_kw, train=TrainConfig(**train_kw))


def load(path, overrides: dict | None = None) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8") if path is not None else ""
    return parse(text, overrides)
