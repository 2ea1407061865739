"""Dense float64 primitives with reverse-mode gradients.

Values are wrapped in :class:`Var`. Operations executed inside an active
:class:`GradientTape` are recorded in order; :meth:`GradientTape.gradient`
replays them in exact reverse order. Outside a tape the same functions are
plain forward computations.

    >>> w = Var(np.eye(2), name="w")
    >>> with GradientTape() as tape:
    ...     y = dot(matvec(w, Var([1.0, 2.0])), Var([1.0, 1.0]))
    >>> tape.gradient(y, [w])[w]
    array([[1., 2.],
           [1., 2.]])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateError, NumericError, ShapeError

_ACTIVE: list["GradientTape"] = []


class Var:
    """A float64 array, optionally a named trainable parameter."""

    __slots__ = ("value", "name")

    def __init__(self, value, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Var{label}{self.value.shape}"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


class GradientTape:
    """Records primitive operations for a single backward pass.

    ``kink_distance`` is the smallest distance seen so far between an
    argument of a non-smooth primitive (ReLU, hinge, min) and its kink.
    Finite-difference probes closer than the step size are unreliable.
    """

    def __init__(self):
        self._ops: list[tuple[Var, tuple[Var, ...], Callable]] = []
        self.kink_distance = np.inf

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)

    def __len__(self):
        return len(self._ops)

    def record(self, out: Var, inputs: tuple[Var, ...], backward: Callable) -> None:
        self._ops.append((out, inputs, backward))

    def note_kink(self, distance: float) -> None:
        if distance < self.kink_distance:
            self.kink_distance = float(distance)

    def gradient(self, target: Var, sources: Iterable[Var], seed: float = 1.0) -> dict[Var, np.ndarray]:
        """Gradients of scalar ``target`` with respect to each source.

        Sources that do not influence the target get a zero array.
        """
        grads: dict[int, np.ndarray] = {id(target): np.full(target.shape, seed, dtype=np.float64)}
        for out, inputs, backward in reversed(self._ops):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for x, gx in zip(inputs, backward(g)):
                if gx is None:
                    continue
                k = id(x)
                if k in grads:
                    grads[k] = grads[k] + gx
                else:
                    grads[k] = gx
        return {s: grads.get(id(s), np.zeros(s.shape)) for s in sources}


def _tape():
    return _ACTIVE[-1] if _ACTIVE else None


def _emit(value, inputs, backward) -> Var:
    out = Var(value)
    tape = _tape()
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


# -- primitives ------------------------------------------------------------
def matvec(m: Var, x: Var) -> Var:
    """``m @ x`` for a matrix and a vector."""
    m, x = as_var(m), as_var(x)
    if m.value.ndim != 2 or x.value.ndim != 1 or m.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: cannot multiply {m.shape} by {x.shape}")
    mv, xv = m.value, x.value
    return _emit(mv @ xv, (m, x), lambda g: (np.outer(g, xv), mv.T @ g))


def gather_mean(m: Var, columns: Sequence[int]) -> Var:
    """Mean of selected columns: ``m @ x / |x|`` for a binary indicator ``x``."""
    m = as_var(m)
    cols = np.asarray(columns, dtype=np.intp)
    if cols.size == 0:
        raise DegenerateError("gather_mean over an empty column set")
    if cols.min() < 0 or cols.max() >= m.shape[1]:
        raise ShapeError(f"gather_mean: column out of range for {m.shape}")
    k = cols.size

    def backward(g):
        gm = np.zeros(m.shape)
        np.add.at(gm, (slice(None), cols), (g / k)[:, None])
        return (gm,)

    return _emit(m.value[:, cols].mean(axis=1), (m,), backward)


def add(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    return _emit(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")
    return _emit(a.value - b.value, (a, b), lambda g: (g, -g))


def scale(a: Var, s: float) -> Var:
    a = as_var(a)
    return _emit(a.value * s, (a,), lambda g: (g * s,))


def hadamard(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def relu(a: Var) -> Var:
    a = as_var(a)
    av = a.value
    tape = _tape()
    if tape is not None and av.size:
        tape.note_kink(np.min(np.abs(av)))
    mask = av > 0
    return _emit(np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))


def hinge(a: Var) -> Var:
    """``max(0, a)`` for a scalar."""
    a = as_var(a)
    tape = _tape()
    if tape is not None:
        tape.note_kink(abs(float(a.value)))
    active = float(a.value) > 0
    return _emit(np.maximum(a.value, 0.0), (a,), lambda g: (g if active else None,))


def _check_set(xs: Sequence[Var], op: str) -> list[Var]:
    xs = [as_var(x) for x in xs]
    if not xs:
        raise ValueError(f"{op}: empty input set")
    shape = xs[0].shape
    for x in xs:
        if x.shape != shape:
            raise ShapeError(f"{op}: inputs have shapes {shape} and {x.shape}")
    return xs


def min_across(xs: Sequence[Var]) -> Var:
    """Elementwise minimum; the gradient goes to the first argmin on ties."""
    xs = _check_set(xs, "min_across")
    stack = np.stack([x.value for x in xs])
    arg = np.argmin(stack, axis=0)
    tape = _tape()
    if tape is not None and len(xs) > 1:
        part = np.sort(stack, axis=0)
        tape.note_kink(np.min(part[1] - part[0]))

    def backward(g):
        return tuple(np.where(arg == i, g, 0.0) for i in range(len(xs)))

    return _emit(stack.min(axis=0), tuple(xs), backward)


def mean_across(xs: Sequence[Var]) -> Var:
    xs = _check_set(xs, "mean_across")
    n = len(xs)
    # summing sorted values keeps the result bitwise independent of input order
    total = np.sort(np.stack([x.value for x in xs]), axis=0).sum(axis=0)
    return _emit(total / n, tuple(xs), lambda g: tuple(g / n for _ in range(n)))


def dot(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    if a.shape != b.shape or a.value.ndim != 1:
        raise ShapeError(f"dot: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    return _emit(np.dot(av, bv), (a, b), lambda g: (g * bv, g * av))


def cosine(a: Var, b: Var) -> Var:
    """Cosine similarity ``a.b / (|a| |b|)``."""
    a, b = as_var(a), as_var(b)
    if a.shape != b.shape or a.value.ndim != 1:
        raise ShapeError(f"cosine: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise DegenerateError("cosine of a zero-norm vector")
    c = float(np.dot(av, bv) / (na * nb))

    def backward(g):
        return (g * (bv / (na * nb) - c * av / (na * na)), g * (av / (na * nb) - c * bv / (nb * nb)))

    return _emit(np.float64(c), (a, b), backward)


_REDUCTIONS = {"min_across": min_across, "mean_across": mean_across}


def elementwise(op: str, inputs: Sequence, factor: float = 1.0) -> Var:
    """Dispatch by name: ``relu``, ``min_across``, ``mean_across``, ``add`` or ``scale``."""
    if op == "relu":
        (x,) = inputs
        return relu(x)
    if op in _REDUCTIONS:
        return _REDUCTIONS[op](inputs)
    if op == "add":
        a, b = inputs
        return add(a, b)
    if op == "scale":
        (x,) = inputs
        return scale(x, factor)
    raise ValueError(f"unknown elementwise op {op!r}")


# -- finite-difference checking ----------------------------------------------
@dataclass
class GradCheck:
    max_rel_error: float
    per_param: dict[str, float]
    kink_distance: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(f: Callable[[], Var], params: Sequence[Var], eps: float = 1e-5, tol: float = 1e-4) -> GradCheck:
    """Compare tape gradients of scalar ``f()`` with central differences.

    ``f`` must read the parameter values on every call; entries are perturbed
    in place and restored. The error for one parameter is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``, which stays
    meaningful for entries whose gradient is near zero.
    """
    with GradientTape() as tape:
        out = f()
    base = float(out.value)
    if not np.isfinite(base):
        raise NumericError("objective is not finite at the probe point")
    analytic = tape.gradient(out, params)
    per_param = {}
    diffs = []
    for k, p in enumerate(params):
        numeric = np.zeros(p.shape)
        flat = p.value.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().value)
            flat[i] = orig - eps
            lo = float(f().value)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(f"objective not finite while probing {p.name or k}[{i}]")
            num_flat[i] = (hi - lo) / (2 * eps)
        a = analytic[p]
        scale_ = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(numeric), initial=0.0))
        diffs.append((p.name or str(k), float(np.max(np.abs(a - numeric), initial=0.0)), scale_))
    floor = max((sc for _, _, sc in diffs), default=0.0)
    for name, diff, _ in diffs:
        per_param[name] = 0.0 if floor == 0.0 else diff / floor
    worst = max(per_param.values(), default=0.0)
    return GradCheck(worst, per_param, tape.kink_distance, tol)
