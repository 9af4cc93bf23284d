"""Binary checkpoints for generator/discriminator parameters and run state.

Layout (all integers little-endian)::

    b"TGAN1"
    u64   grammar fingerprint
    u32   metadata length, then UTF-8 JSON (sorted keys)
    u32   number of parameter blocks, then per block:
          u16 name length, UTF-8 name, u32 rows, u32 cols,
          rows*cols float64 values in row-major order
    u32   RNG state length, then UTF-8 JSON
    u64   epoch counter

Vectors are stored as ``rows = n, cols = 1`` and listed under
``"vectors"`` in the metadata so their rank is restored on load.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .discriminator import DiscriminatorModel
from .generator import GeneratorModel
from .grammar import Grammar

MAGIC = b"TGAN1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    gen: GeneratorModel | None = None
    disc: DiscriminatorModel | None = None
    rng_state: dict | None = None
    epoch: int = 0
    meta: dict = field(default_factory=dict)

    def rng(self, seed: int = 0) -> np.random.Generator:
        r = np.random.default_rng(seed)
        if self.rng_state is not None:
            r.bit_generator.state = self.rng_state
        return r


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode_checkpoint(g: Grammar, ck: Checkpoint) -> bytes:
    params: dict[str, np.ndarray] = {}
    meta = dict(ck.meta)
    if ck.gen is not None:
        params.update(ck.gen.store.values)
        meta["gen"] = ck.gen.hyper()
    if ck.disc is not None:
        params.update(ck.disc.store.values)
        meta["disc"] = ck.disc.hyper()
    meta["vectors"] = sorted(n for n, v in params.items() if v.ndim == 1)
    out = bytearray(MAGIC)
    out += struct.pack("<Q", g.fingerprint())
    m = _json(meta)
    out += struct.pack("<I", len(m)) + m
    out += struct.pack("<I", len(params))
    for name in params:  # store order, so optimiser sums replay identically
        v = params[name]
        rows, cols = (v.shape[0], 1) if v.ndim == 1 else v.shape
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb + struct.pack("<II", rows, cols)
        out += np.ascontiguousarray(v, dtype="<f8").tobytes()
    r = _json(ck.rng_state) if ck.rng_state is not None else b"null"
    out += struct.pack("<I", len(r)) + r
    out += struct.pack("<Q", ck.epoch)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes, g: Grammar) -> Checkpoint:
    rd = _Reader(data)
    if rd.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    (fp,) = rd.unpack("<Q")
    if fp != g.fingerprint():
        raise CheckpointError(f"grammar fingerprint mismatch: checkpoint {fp:016x}, grammar {g.fingerprint():016x}")
    (mlen,) = rd.unpack("<I")
    meta = json.loads(rd.take(mlen).decode("utf-8"))
    vectors = set(meta.pop("vectors", []))
    (nblocks,) = rd.unpack("<I")
    params = {}
    for _ in range(nblocks):
        (nlen,) = rd.unpack("<H")
        name = rd.take(nlen).decode("utf-8")
        rows, cols = rd.unpack("<II")
        arr = np.frombuffer(rd.take(8 * rows * cols), dtype="<f8").astype(np.float64).reshape(rows, cols)
        params[name] = arr.reshape(rows) if name in vectors else arr
    (rlen,) = rd.unpack("<I")
    rng_state = json.loads(rd.take(rlen).decode("utf-8"))
    (epoch,) = rd.unpack("<Q")
    if rd.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint")

    def store_for(prefix: str) -> ad.ParamStore:
        s = ad.ParamStore()
        for n in params:
            if n.startswith(prefix + "."):
                s.add(n, params[n])
        return s

    ck = Checkpoint(rng_state=rng_state, epoch=epoch)
    gh = meta.pop("gen", None)
    dh = meta.pop("disc", None)
    if gh is not None:
        ck.gen = GeneratorModel(store_for("gen"), gh["n_productions"], gh["n_terminals"], gh["embed_dim"], gh["hidden"])
        ck.gen.check_grammar(g)
    if dh is not None:
        ck.disc = DiscriminatorModel(store_for("disc"), dh["n_symbols"], dh["n_productions"], dh["embed_dim"],
                                     dh["hidden"], dh["use_rule_ids"])
        ck.disc.check_grammar(g)
    ck.meta = meta
    return ck


def save_checkpoint(path, g: Grammar, ck: Checkpoint) -> None:
    Path(path).write_bytes(encode_checkpoint(g, ck))


def load_checkpoint(path, g: Grammar) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), g)
