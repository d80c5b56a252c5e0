"""Toy text encoders: chunked word-level prompt encoder and byte-level glyph encoder.

Neither carries pretrained weights.  Every vocabulary id maps to a seeded
pseudo-random unit vector, so the encoders are pure functions of
``(text, config)``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError
from .numeric import Rng

VOCAB_SIZE = 65536
NULL_ID = VOCAB_SIZE  # reserved, outside the hashed range
POSITION_SCALE = 0.1


@dataclass(frozen=True)
class EncoderConfig:
    chunk_size: int = 77
    d_text: int = 32
    seed: int = 0
    max_text_len: int = 2048

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ConfigurationError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.d_text < 1 or self.max_text_len < 1:
            raise ConfigurationError("d_text and max_text_len must be positive")


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    embeddings: np.ndarray

    def __len__(self):
        return len(self.ids)


def token_id(word: str) -> int:
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % VOCAB_SIZE


def tokenize(prompt: str) -> list[str]:
    words = prompt.split()
    # whitespace-only prompts stay a real (non-null) token
    return words if words or not prompt else [prompt]


@lru_cache(maxsize=None)
def _unit_vector(seed: int, table: str, key: int, dim: int) -> np.ndarray:
    v = Rng(seed).fork(table, key).normal((dim,))
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def _position(seed: int, pos: int, dim: int) -> np.ndarray:
    return POSITION_SCALE * _unit_vector(seed, "position", pos, dim)


def _embed(ids, positions, cfg: EncoderConfig, table: str) -> np.ndarray:
    out = np.empty((len(ids), cfg.d_text))
    for row, (i, p) in enumerate(zip(ids, positions)):
        out[row] = _unit_vector(cfg.seed, table, i, cfg.d_text) + _position(cfg.seed, p, cfg.d_text)
    return out


def chunked_prompt_encode(prompt: str, cfg: EncoderConfig = EncoderConfig()) -> TokenSeq:
    """Word ids split into chunks of ``chunk_size``; positions restart per chunk."""
    if prompt == "":
        return null_encode(cfg)
    ids = [token_id(w) for w in tokenize(prompt)][: cfg.max_text_len]
    positions = [i % cfg.chunk_size for i in range(len(ids))]
    return TokenSeq(tuple(ids), _embed(ids, positions, cfg, "word"))


def chunk_ids(prompt: str, cfg: EncoderConfig = EncoderConfig()) -> list[list[int]]:
    ids = [token_id(w) for w in tokenize(prompt)][: cfg.max_text_len]
    return [ids[i:i + cfg.chunk_size] for i in range(0, len(ids), cfg.chunk_size)]


def glyph_encode(text: str, cfg: EncoderConfig = EncoderConfig()) -> TokenSeq:
    """One token per UTF-8 byte, with an absolute positional term."""
    ids = list(text.encode("utf-8"))[: cfg.max_text_len]
    if not ids:
        return null_encode(cfg)
    return TokenSeq(tuple(ids), _embed(ids, range(len(ids)), cfg, "byte"))


def null_encode(cfg: EncoderConfig = EncoderConfig()) -> TokenSeq:
    emb = _unit_vector(cfg.seed, "null", NULL_ID, cfg.d_text).copy()[None, :]
    return TokenSeq((NULL_ID,), emb)


@dataclass
class GlyphMapper:
    """Per-token affine map ``x @ weight + bias`` aligning glyph tokens to the text width."""

    weight: np.ndarray
    bias: np.ndarray

    @classmethod
    def identity(cls, d: int) -> "GlyphMapper":
        return cls(np.eye(d), np.zeros(d))


def glyph_map(seq: TokenSeq, mapper: GlyphMapper) -> TokenSeq:
    w = np.asarray(mapper.weight, dtype=np.float64)
    b = np.asarray(mapper.bias, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != seq.embeddings.shape[1] or b.shape != (w.shape[1],):
        raise ConfigurationError(
            f"mapper {w.shape}/{b.shape} does not fit token width {seq.embeddings.shape[1]}")
    return TokenSeq(seq.ids, seq.embeddings @ w + b)
