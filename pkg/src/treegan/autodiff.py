"""A small reverse-mode tape over numpy matrices.

Values are float64 arrays of rank <= 2.  Operations take :class:`Var` or
plain arrays; when no input is tracked they return plain arrays and record
nothing, so inference code runs on the same functions without overhead.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class TapeError(RuntimeError):
    pass


class Var:
    __slots__ = ("value", "grad", "tape", "param")

    def __init__(self, value: np.ndarray, tape: "Tape", param: str | None = None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self) -> str:
        tag = f" param={self.param}" if self.param else ""
        return f"Var(shape={self.value.shape}{tag})"


class Tape:
    """Records primitive operations; :meth:`backward` may run once."""

    def __init__(self):
        self.records: list[tuple[Var, Callable[[np.ndarray], None]]] = []
        self.leaves: list[Var] = []
        self.consumed = False

    def var(self, value, param: str | None = None) -> Var:
        v = Var(np.asarray(value, dtype=np.float64), self, param)
        self.leaves.append(v)
        return v

    def record(self, out: Var, fn: Callable[[np.ndarray], None]) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        self.records.append((out, fn))

    def backward(self, out: Var, seed=None) -> None:
        if self.consumed:
            raise TapeError("backward() called twice on the same tape")
        self.consumed = True
        if seed is None:
            if out.value.size != 1:
                raise TapeError("seed gradient required for non-scalar output")
            seed = np.ones_like(out.value)
        out.grad = np.asarray(seed, dtype=np.float64).reshape(out.value.shape).copy()
        for node, fn in reversed(self.records):
            if node.grad is not None:
                fn(node.grad)


def _accum(v, g: np.ndarray) -> None:
    if not isinstance(v, Var):
        return
    if g.shape != v.value.shape:
        g = _unbroadcast(g, v.value.shape)
    v.grad = g if v.grad is None else v.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def value(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else x


def _out(tape: Tape, val: np.ndarray, fn) -> Var:
    v = Var(val, tape)
    tape.record(v, fn)
    return v


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    tape = _tape_of(a, b)
    out = value(a) + value(b)
    if tape is None:
        return out

    def back(g):
        _accum(a, g)
        _accum(b, g)
    return _out(tape, out, back)


def sub(a, b):
    tape = _tape_of(a, b)
    out = value(a) - value(b)
    if tape is None:
        return out

    def back(g):
        _accum(a, g)
        _accum(b, -g)
    return _out(tape, out, back)


def mul(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = av * bv
    if tape is None:
        return out

    def back(g):
        _accum(a, g * bv)
        _accum(b, g * av)
    return _out(tape, out, back)


def scale(a, c: float):
    tape = _tape_of(a)
    out = value(a) * c
    if tape is None:
        return out
    return _out(tape, out, lambda g: _accum(a, g * c))


def linear(x, W):
    """``x @ W.T`` for a batch of row vectors ``x`` (B, D) and ``W`` (H, D)."""
    tape = _tape_of(x, W)
    xv, Wv = value(x), value(W)
    out = xv @ Wv.T
    if tape is None:
        return out

    def back(g):
        if isinstance(x, Var):
            _accum(x, g @ Wv)
        if isinstance(W, Var):
            _accum(W, g.T @ xv)
    return _out(tape, out, back)


def sigmoid(a):
    tape = _tape_of(a)
    av = value(a)
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    e = np.exp(av[~pos])
    out[~pos] = e / (1.0 + e)
    if tape is None:
        return out
    return _out(tape, out, lambda g: _accum(a, g * out * (1.0 - out)))


def tanh(a):
    tape = _tape_of(a)
    out = np.tanh(value(a))
    if tape is None:
        return out
    return _out(tape, out, lambda g: _accum(a, g * (1.0 - out * out)))


def log(a):
    tape = _tape_of(a)
    av = value(a)
    out = np.log(av)
    if tape is None:
        return out
    return _out(tape, out, lambda g: _accum(a, g / av))


def clip(a, lo: float, hi: float):
    """Clamp; the gradient is zero where the bound is active."""
    tape = _tape_of(a)
    av = value(a)
    out = np.clip(av, lo, hi)
    if tape is None:
        return out
    inside = (av >= lo) & (av <= hi)
    return _out(tape, out, lambda g: _accum(a, g * inside))


def concat(xs: Sequence, axis: int = -1):
    tape = _tape_of(*xs)
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def back(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if isinstance(x, Var):
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _accum(x, g[tuple(idx)])
    return _out(tape, out, back)


def take_rows(table, idx: np.ndarray):
    """Gather rows ``table[idx]``; repeated indices accumulate on backward."""
    tape = _tape_of(table)
    tv = value(table)
    out = tv[idx]
    if tape is None:
        return out

    def back(g):
        full = np.zeros_like(tv)
        np.add.at(full, idx, g)
        _accum(table, full)
    return _out(tape, out, back)


def segment_sum(x, seg: np.ndarray, n: int):
    """Sum rows of ``x`` into ``n`` buckets given by ``seg``."""
    tape = _tape_of(x)
    xv = value(x)
    out = np.zeros((n,) + xv.shape[1:])
    np.add.at(out, seg, xv)
    if tape is None:
        return out
    return _out(tape, out, lambda g: _accum(x, g[seg]))


def reshape(a, shape: tuple):
    tape = _tape_of(a)
    av = value(a)
    out = av.reshape(shape)
    if tape is None:
        return out
    return _out(tape, out, lambda g: _accum(a, g.reshape(av.shape)))


def total(a):
    tape = _tape_of(a)
    out = np.asarray(value(a).sum())
    if tape is None:
        return out
    av = value(a)
    return _out(tape, out, lambda g: _accum(a, np.broadcast_to(g, av.shape).copy()))


def dot_const(a, w: np.ndarray):
    """``sum(a * w)`` for a constant weight array ``w``."""
    tape = _tape_of(a)
    out = np.asarray((value(a) * w).sum())
    if tape is None:
        return out
    return _out(tape, out, lambda g: _accum(a, g * w))


def masked_log_softmax_pick(logits, mask: np.ndarray, target: np.ndarray):
    """Log-probability of ``target`` under softmax restricted to ``mask``.

    Equivalent to masking the full softmax and renormalising.  ``logits`` and
    ``mask`` are (B, L); ``target`` is (B,) and must be allowed by the mask.
    """
    tape = _tape_of(logits)
    lv = value(logits)
    z = np.where(mask, lv, -np.inf)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(lv.shape[0])
    out = (z[rows, target] - m[:, 0]) - np.log(s[:, 0])
    if tape is None:
        return out
    p = e / s

    def back(g):
        d = -p * g[:, None]
        d[rows, target] += g
        _accum(logits, d)
    return _out(tape, out, back)


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Forward-only renormalised masked softmax over the last axis."""
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# parameters


class ParamStore:
    """Named float64 matrices/vectors with matching gradient buffers."""

    def __init__(self):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        if value.ndim not in (1, 2):
            raise ValueError("parameters are vectors or matrices")
        if not np.all(np.isfinite(value)):
            raise ValueError(f"non-finite initial value for {name!r}")
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.values if n.startswith(prefix)]

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def bind(self, tape: Tape | None) -> "Bound":
        return Bound(self, tape)

    def num_params(self) -> int:
        return sum(v.size for v in self.values.values())

    def flat(self, names: Iterable[str] | None = None) -> np.ndarray:
        names = list(self.values) if names is None else list(names)
        return np.concatenate([self.values[n].ravel() for n in names])

    def flat_grad(self, names: Iterable[str] | None = None) -> np.ndarray:
        names = list(self.values) if names is None else list(names)
        return np.concatenate([self.grads[n].ravel() for n in names])

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for n, v in self.values.items():
            out.add(n, v.copy())
        out.step = self.step
        return out


class Bound:
    """Parameter view for one forward pass.

    With a tape, ``bound[name]`` is a tracked leaf (created once per name)
    whose gradient is folded into the store after :meth:`backward`.
    """

    def __init__(self, store: ParamStore, tape: Tape | None):
        self.store = store
        self.tape = tape
        self._leaves: dict[str, Var] = {}

    def __getitem__(self, name: str):
        if self.tape is None:
            return self.store.values[name]
        v = self._leaves.get(name)
        if v is None:
            v = self.tape.var(self.store.values[name], param=name)
            self._leaves[name] = v
        return v

    def backward(self, out: Var, seed=None) -> None:
        """Run the tape backward and add leaf gradients to the store."""
        self.tape.backward(out, seed)
        for name, v in self._leaves.items():
            if v.grad is not None:
                self.store.grads[name] += v.grad


# ---------------------------------------------------------------------------
# optimisation and checking


def sgd_step(store: ParamStore, lr: float, clip_norm: float | None = 5.0, names: Iterable[str] | None = None) -> float:
    """Plain SGD with global gradient-norm clipping; returns the pre-clip norm."""
    names = list(store.values) if names is None else list(names)
    norm = float(np.sqrt(sum(float((store.grads[n] ** 2).sum()) for n in names)))
    factor = 1.0
    if clip_norm is not None and norm > clip_norm:
        factor = clip_norm / norm
    for n in names:
        store.values[n] -= lr * factor * store.grads[n]
    store.step += 1
    return norm


def grad_check(
    f: Callable[[Bound], Var],
    store: ParamStore,
    names: Iterable[str] | None = None,
    step: float = 1e-5,
    floor: float = 1e-4,
) -> dict:
    """Compare tape gradients of scalar ``f`` with central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    the floor keeps round-off on near-zero coordinates from dominating.
    """
    names = list(store.values) if names is None else list(names)
    store.zero_grad()
    bound = store.bind(Tape())
    out = f(bound)
    bound.backward(out)
    worst = {"max_rel_error": 0.0, "param": None, "index": None, "analytic": 0.0, "numeric": 0.0}
    for n in names:
        arr = store.values[n]
        ana = store.grads[n]
        flat = arr.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            fp = float(value(f(store.bind(None))))
            flat[k] = orig - step
            fm = float(value(f(store.bind(None))))
            flat[k] = orig
            num = (fp - fm) / (2 * step)
            a = float(ana.reshape(-1)[k])
            rel = abs(a - num) / max(abs(a), abs(num), floor)
            if rel > worst["max_rel_error"]:
                worst = {"max_rel_error": rel, "param": n, "index": k, "analytic": a, "numeric": num}
    store.zero_grad()
    return worst
