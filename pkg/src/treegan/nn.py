"""Recurrent cells and output heads built on the tape primitives.

Parameters are looked up by name through a :class:`~treegan.autodiff.Bound`
view (or a plain dict of arrays), so each function works both for
training (tracked) and sampling (untracked).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

GATES = ("i", "f", "o", "u")
INIT_SCALE = 0.08


@dataclass
class LstmCellState:
    h: object  # (B, H) array or Var
    c: object

    @classmethod
    def zeros(cls, hidden: int, batch: int = 1) -> "LstmCellState":
        return cls(np.zeros((batch, hidden)), np.zeros((batch, hidden)))


def init_uniform(rng: np.random.Generator, shape, scale: float = INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


def init_lstm(store: ad.ParamStore, prefix: str, in_dim: int, hidden: int, rng: np.random.Generator) -> None:
    """``W_g`` (H, D), ``U_g`` (H, H) and ``b_g`` (H,) for each gate g in i, f, o, u."""
    for g in GATES:
        store.add(f"{prefix}.W_{g}", init_uniform(rng, (hidden, in_dim)))
        store.add(f"{prefix}.U_{g}", init_uniform(rng, (hidden, hidden)))
        store.add(f"{prefix}.b_{g}", init_uniform(rng, (hidden,)))


def _check(x, name: str, shape_tail: tuple) -> None:
    v = ad.value(x)
    if v.shape[1:] != shape_tail:
        raise ValueError(f"{name}: expected trailing shape {shape_tail}, got {v.shape}")


def _gate(P, prefix: str, g: str, x, h):
    return ad.add(ad.add(ad.linear(x, P[f"{prefix}.W_{g}"]), ad.linear(h, P[f"{prefix}.U_{g}"])), P[f"{prefix}.b_{g}"])


def lstm_step(P, prefix: str, x, prev: LstmCellState) -> LstmCellState:
    """One step of a standard LSTM on a batch of rows.

    i, f, o = sigmoid(W x + U h + b); u = tanh(W x + U h + b);
    c = i*u + f*c_prev; h = o*tanh(c).
    """
    W = ad.value(P[f"{prefix}.W_i"])
    H, D = W.shape
    squeeze = ad.value(x).ndim == 1
    if squeeze:
        x = ad.reshape(x, (1, D))
        prev = LstmCellState(ad.reshape(prev.h, (1, H)), ad.reshape(prev.c, (1, H)))
    _check(x, "x", (D,))
    _check(prev.h, "h", (H,))
    _check(prev.c, "c", (H,))
    if not np.all(np.isfinite(ad.value(x))):
        raise ValueError("non-finite LSTM input")
    i = ad.sigmoid(_gate(P, prefix, "i", x, prev.h))
    f = ad.sigmoid(_gate(P, prefix, "f", x, prev.h))
    o = ad.sigmoid(_gate(P, prefix, "o", x, prev.h))
    u = ad.tanh(_gate(P, prefix, "u", x, prev.h))
    c = ad.add(ad.mul(i, u), ad.mul(f, prev.c))
    h = ad.mul(o, ad.tanh(c))
    if squeeze:
        return LstmCellState(ad.reshape(h, (H,)), ad.reshape(c, (H,)))
    return LstmCellState(h, c)


def treelstm_level(P, prefix: str, x, child_h, child_c, seg: np.ndarray):
    """Child-Sum Tree-LSTM for ``n`` nodes at once.

    ``x`` is (n, D); ``child_h``/``child_c`` are (m, H) states of all
    children and ``seg[k]`` names the parent row of child k.  Input, output
    and update gates read the summed child state; each child gets its own
    forget gate computed from that child's hidden state.
    """
    n = ad.value(x).shape[0]
    H = ad.value(P[f"{prefix}.U_i"]).shape[0]
    if child_h is None or len(seg) == 0:
        h_sum = np.zeros((n, H))
        fc = None
    else:
        h_sum = ad.segment_sum(child_h, seg, n)
        wx_f = ad.take_rows(ad.linear(x, P[f"{prefix}.W_f"]), seg)
        f = ad.sigmoid(ad.add(ad.add(wx_f, ad.linear(child_h, P[f"{prefix}.U_f"])), P[f"{prefix}.b_f"]))
        fc = ad.segment_sum(ad.mul(f, child_c), seg, n)
    i = ad.sigmoid(_gate(P, prefix, "i", x, h_sum))
    o = ad.sigmoid(_gate(P, prefix, "o", x, h_sum))
    u = ad.tanh(_gate(P, prefix, "u", x, h_sum))
    c = ad.mul(i, u)
    if fc is not None:
        c = ad.add(c, fc)
    h = ad.mul(o, ad.tanh(c))
    return h, c


def treelstm_node(P, prefix: str, x_j, children: list[LstmCellState]) -> LstmCellState:
    """Single-node form of :func:`treelstm_level` for a (D,) input."""
    D = ad.value(P[f"{prefix}.W_i"]).shape[1]
    H = ad.value(P[f"{prefix}.U_i"]).shape[0]
    if ad.value(x_j).shape != (D,):
        raise ValueError(f"x_j: expected shape ({D},), got {ad.value(x_j).shape}")
    for ch in children:
        if ad.value(ch.h).shape[-1] != H or ad.value(ch.c).shape[-1] != H:
            raise ValueError("child state has wrong hidden size")
    x = ad.reshape(x_j, (1, D))
    if children:
        ch_h = ad.concat([ad.reshape(ch.h, (1, H)) for ch in children], axis=0)
        ch_c = ad.concat([ad.reshape(ch.c, (1, H)) for ch in children], axis=0)
        seg = np.zeros(len(children), dtype=np.int64)
    else:
        ch_h = ch_c = None
        seg = np.zeros(0, dtype=np.int64)
    h, c = treelstm_level(P, prefix, x, ch_h, ch_c, seg)
    return LstmCellState(ad.reshape(h, (H,)), ad.reshape(c, (H,)))


def init_affine(store: ad.ParamStore, prefix: str, out_dim: int, in_dim: int, rng: np.random.Generator) -> None:
    store.add(f"{prefix}.W", init_uniform(rng, (out_dim, in_dim)))
    store.add(f"{prefix}.b", init_uniform(rng, (out_dim,)))


def affine(P, prefix: str, h):
    W = ad.value(P[f"{prefix}.W"])
    if ad.value(h).shape[-1] != W.shape[1]:
        raise ValueError(f"affine {prefix}: input size {ad.value(h).shape[-1]} != {W.shape[1]}")
    return ad.add(ad.linear(h, P[f"{prefix}.W"]), P[f"{prefix}.b"])


def affine_softmax(P, prefix: str, h) -> np.ndarray:
    """Forward-only softmax(W h + b) for a (H,) or (B, H) input."""
    hv = np.atleast_2d(ad.value(h))
    z = ad.value(affine(P, prefix, hv))
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if ad.value(h).ndim == 1 else p


def affine_sigmoid(P, prefix: str, h):
    """sigmoid(W h + b) with a single output row; returns shape (B,) or a scalar."""
    W = ad.value(P[f"{prefix}.W"])
    if W.shape[0] != 1:
        raise ValueError("confidence head must have exactly one output row")
    squeeze = ad.value(h).ndim == 1
    if squeeze:
        h = ad.reshape(h, (1, W.shape[1]))
    z = affine(P, prefix, h)
    psi = ad.sigmoid(ad.reshape(z, (ad.value(z).shape[0],)))
    return ad.reshape(psi, ()) if squeeze else psi
