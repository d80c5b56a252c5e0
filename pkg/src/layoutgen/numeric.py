"""Deterministic numeric substrate: seeded RNG, matmul, softmax, attention.

All arrays are float64 numpy arrays.  Randomness comes from a counter-based
Philox generator keyed by ``(seed, stream)``; uniforms and normals are derived
from the raw 64-bit words with fixed formulas so that a given seed and call
sequence always reproduces the same values.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

from .errors import DimensionError

_MASK64 = (1 << 64) - 1
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


def _stream_key(*parts) -> int:
    text = "\x1f".join(repr(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


class Rng:
    """Counter-based generator (Philox-4x64) with explicit stream keys.

    ``fork`` derives an independent child stream from hashable labels, which
    is how training steps, epochs and dataset items get their own randomness
    without depending on how many draws happened before them.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=key)
        self.draws = 0

    def fork(self, *labels) -> "Rng":
        return Rng(self.seed, _stream_key(self.stream, *labels))

    def _raw(self, n: int) -> np.ndarray:
        self.draws += n
        return self._bitgen.random_raw(n)

    def uniform(self, shape=()) -> np.ndarray | float:
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return float(u[0]) if shape == () else u.reshape(shape)

    def normal(self, shape=()) -> np.ndarray | float:
        # Box-Muller, one output per pair of words.
        n = int(np.prod(shape, dtype=np.int64)) if shape != () else 1
        raw = self._raw(2 * n)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        return float(z[0]) if shape == () else z.reshape(shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray | int:
        """Integers in ``[low, high)``."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(shape if shape != () else (1,))
        out = low + np.minimum(np.floor(u * (high - low)), high - low - 1).astype(np.int64)
        return int(out[0]) if shape == () else out

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform((n,)), kind="stable")

    def choice(self, seq):
        return seq[self.integers(0, len(seq))]


def _as2d(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product of ``a[..., m, k]`` and ``b[k, n]`` (or matching batch)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def softmax_rows(a, mask=None) -> np.ndarray:
    """Softmax over the last axis with row-max subtraction.

    ``mask`` (broadcastable boolean, True = keep) sets excluded entries to
    exactly zero weight.  A fully masked row yields zeros.
    """
    a = np.asarray(a, dtype=np.float64)
    if mask is not None:
        a = np.where(mask, a, -np.inf)
    m = np.max(a, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a - m)
    s = np.sum(e, axis=-1, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    # [..., T, d] -> [..., h, T, d/h]
    *lead, t, d = x.shape
    return np.moveaxis(x.reshape(*lead, t, n_heads, d // n_heads), -2, -3)


def merge_heads(x: np.ndarray) -> np.ndarray:
    x = np.moveaxis(x, -3, -2)
    *lead, t, h, dh = x.shape
    return x.reshape(*lead, t, h * dh)


def attention_weights(q, k, mask=None, n_heads: int = 1) -> np.ndarray:
    """Attention probabilities ``softmax(q kᵀ / sqrt(d_head))``.

    Shapes: q[..., Tq, d], k[..., Tk, d]; result [..., h, Tq, Tk] when
    ``n_heads > 1`` and [..., Tq, Tk] otherwise.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape[-1] != k.shape[-1] or q.shape[-1] % n_heads:
        raise DimensionError(f"query/key widths disagree: {q.shape} vs {k.shape} ({n_heads} heads)")
    if n_heads > 1:
        q, k = split_heads(q, n_heads), split_heads(k, n_heads)
        if mask is not None:
            mask = np.expand_dims(mask, -3)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ np.swapaxes(k, -1, -2)) * scale
    return softmax_rows(scores, mask)


def attention(q, k, v, mask=None, n_heads: int = 1) -> np.ndarray:
    """Scaled dot-product attention ``softmax(q kᵀ/√d) v``.

    q[..., Tq, d], k[..., Tk, d], v[..., Tk, dv] -> [..., Tq, dv].  ``mask``
    broadcasts to [..., Tq, Tk] with True marking admissible keys.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if q.ndim < 2 or k.ndim < 2 or v.ndim < 2:
        raise DimensionError(f"attention needs matrices, got {q.shape}, {k.shape}, {v.shape}")
    if k.shape[-2] < 1 or k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"keys {k.shape} and values {v.shape} disagree")
    if v.shape[-1] % n_heads:
        raise DimensionError(f"value width {v.shape[-1]} not divisible by {n_heads} heads")
    p = attention_weights(q, k, mask, n_heads)
    if n_heads > 1:
        return merge_heads(p @ split_heads(v, n_heads))
    return p @ v


def gather_rows(x, index, valid=None) -> np.ndarray:
    """``out[..., :] = x[index[...], :]``; rows where ``valid`` is False are zero."""
    x = np.asarray(x, dtype=np.float64)
    out = x[index]
    if valid is not None:
        out = out * valid[..., None]
    return out


def scatter_rows(src, src_index, dst_index, n_rows: int) -> np.ndarray:
    """Accumulate rows of ``src`` (flattened to 2-D) into a zero [n_rows, d] array."""
    src = np.asarray(src, dtype=np.float64)
    flat = src.reshape(-1, src.shape[-1])
    out = np.zeros((n_rows, src.shape[-1]))
    np.add.at(out, dst_index, flat[src_index])
    return out
