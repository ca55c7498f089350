"""Parameter storage, Adam, and the binary checkpoint format."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ShapeError

MAGIC = b"VHE1"


@dataclass
class ParameterStore:
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        self.params = {k: np.asarray(p, dtype=np.float64) for k, p in self.params.items()}
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))

    def copy(self) -> "ParameterStore":
        return ParameterStore(
            {k: p.copy() for k, p in self.params.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step,
        )

    def shapes(self) -> dict[str, tuple]:
        return {k: p.shape for k, p in self.params.items()}


def adam_step(
    store: ParameterStore,
    grads: dict[str, np.ndarray],
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterStore:
    """One bias-corrected Adam update (minimization), in place. Returns ``store``."""
    unknown = set(grads) - set(store.params)
    if unknown:
        raise KeyError(f"gradients for unknown parameters: {sorted(unknown)}")
    for k, g in grads.items():
        if g.shape != store.params[k].shape:
            raise ShapeError(f"adam_step: gradient for {k} has shape {g.shape}, parameter {store.params[k].shape}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, g in grads.items():
        m = store.m[k]
        v = store.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        store.params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


# ----------------------------------------------------------------- checkpoint
#
# layout (little endian):
#   b"VHE1", u32 n_params,
#   n_params x [u32 name_len, name utf-8, u32 rank, rank x u64 dims, f64 values]
#   n_params x [f64 first moment], n_params x [f64 second moment]  (same order)
#   u64 step


def _write_array(buf: list, a: np.ndarray):
    buf.append(np.ascontiguousarray(a, dtype="<f8").tobytes())


def save_checkpoint(store: ParameterStore, path) -> None:
    names = list(store.params)
    buf = [MAGIC, struct.pack("<I", len(names))]
    for name in names:
        p = store.params[name]
        raw = name.encode("utf-8")
        buf.append(struct.pack("<I", len(raw)))
        buf.append(raw)
        buf.append(struct.pack("<I", p.ndim))
        buf.append(struct.pack(f"<{p.ndim}Q", *p.shape))
        _write_array(buf, p)
    for name in names:
        _write_array(buf, store.m[name])
    for name in names:
        _write_array(buf, store.v[name])
    buf.append(struct.pack("<Q", store.step))
    Path(path).write_bytes(b"".join(buf))


def load_checkpoint(path) -> ParameterStore:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a VHE1 checkpoint (header {data[:4]!r})")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    m = {}
    v = {}
    for name, p in params.items():
        m[name] = np.frombuffer(take(8 * p.size), dtype="<f8").reshape(p.shape).astype(np.float64)
    for name, p in params.items():
        v[name] = np.frombuffer(take(8 * p.size), dtype="<f8").reshape(p.shape).astype(np.float64)
    (step,) = struct.unpack("<Q", take(8))
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return ParameterStore(params, m, v, step)
