"""Checkpoint file: one JSON manifest line, then raw little-endian float64 tensors."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .atomic import write_bytes_if_changed
from .errors import CheckpointError
from .model import ModelParams
from .numkernel import Var
from .training import BETA1, BETA2, EPSILON

FORMAT_VERSION = 1
MAGIC = "gqe-checkpoint"


def dumps(params: ModelParams, extra: dict | None = None) -> bytes:
    tensors, blobs, offset = [], [], 0
    for group, vs in params._groups():
        for label, v in zip(params._labels(group), vs):
            arr = np.ascontiguousarray(v.value, dtype="<f8")
            shape = list(arr.shape)
            tensors.append({"group": group, "label": label, "shape": shape, "offset": offset})
            blobs.append(arr.tobytes())
            offset += arr.nbytes
    manifest = {
        "format": MAGIC,
        "version": FORMAT_VERSION,
        "variant": params.variant,
        "aggregator": params.aggregator,
        "dim": params.dim,
        "intersection_net": params.intersection_net,
        "exact": params.exact,
        "types": list(params.type_names),
        "relations": list(params.relation_names),
        "optimizer": {"name": "adam", "beta1": BETA1, "beta2": BETA2, "eps": EPSILON},
        "tensors": tensors,
        "extra": extra or {},
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return head + b"\n" + b"".join(blobs)


def loads(data: bytes) -> tuple[ModelParams, dict]:
    head, sep, blob = data.partition(b"\n")
    if not sep:
        raise CheckpointError("checkpoint has no manifest line")
    try:
        manifest = json.loads(head)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint manifest: {exc}") from None
    if manifest.get("format") != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if manifest.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {manifest.get('version')} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        return _build(manifest, blob)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc!r}") from None


def _build(manifest: dict, blob: bytes) -> tuple[ModelParams, dict]:
    groups: dict[str, list[Var]] = {k: [] for k in ("Z", "R", "B", "bias", "W")}
    end = 0
    for t in manifest["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64)) * 8
        start = int(t["offset"])
        if start + n > len(blob):
            raise CheckpointError(f"tensor {t['group']}/{t['label']} runs past the end of the file")
        arr = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=start).astype(np.float64).reshape(t["shape"])
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"tensor {t['group']}/{t['label']} holds non-finite values")
        groups[t["group"]].append(Var(arr))
        end = max(end, start + n)
    if end != len(blob):
        raise CheckpointError(f"checkpoint has {len(blob) - end} unexpected trailing bytes")
    params = ModelParams(
        manifest["dim"], manifest["variant"], manifest["aggregator"], manifest["types"], manifest["relations"],
        groups["Z"], groups["R"], groups["B"], groups["bias"], groups["W"],
        intersection_net=manifest["intersection_net"], exact=manifest["exact"],
    )
    return params, manifest.get("extra", {})


def save(params: ModelParams, path, extra: dict | None = None) -> bool:
    """Write atomically; returns False when the file already held these bytes."""
    return write_bytes_if_changed(path, dumps(params, extra))


def load(path) -> tuple[ModelParams, dict]:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"no checkpoint at {p}")
    return loads(p.read_bytes())


def check_compatible(params: ModelParams, g) -> None:
    """Refuse a checkpoint whose type/relation tables differ from the graph's."""
    if tuple(t.name for t in g.types) != params.type_names:
        raise CheckpointError("checkpoint node types do not match the graph")
    if tuple(r.name for r in g.relations) != params.relation_names:
        raise CheckpointError("checkpoint relations do not match the graph")
    for t, z in zip(g.types, params.Z):
        if z.shape != (params.dim, t.feature_dim):
            raise CheckpointError(f"embedding matrix for {t.name} has shape {z.shape}")
