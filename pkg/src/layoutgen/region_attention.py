"""Layout-guided cross attention.

Each layer's grid cells attend only to that layer's prompt tokens.  Regions
are cropped with a row gather, batched into padded groups (padding keys are
masked, padding queries are discarded), and pasted back with a row scatter.
In ``overwrite`` mode a cell only receives the output of the highest layer
covering it; in ``sum`` mode every covering region adds its output.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import numeric
from .errors import ConfigurationError, OracleScopeError
from .layout import COMBINE_MODES, LayerKind, Layout, layer_rects, owner_map


@dataclass(frozen=True)
class RegionTokens:
    layer_index: int
    tokens: np.ndarray
    source: str = "clip_like"  # or "glyph"

    def __post_init__(self):
        if self.source not in ("clip_like", "glyph"):
            raise ConfigurationError(f"unknown token source {self.source!r}")
        if np.asarray(self.tokens).ndim != 2 or len(self.tokens) < 1:
            raise ConfigurationError(f"layer {self.layer_index}: region tokens must be a non-empty matrix")


@dataclass
class AttentionWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_out: np.ndarray
    n_heads: int = 1

    def __post_init__(self):
        dh = self.w_q.shape[1]
        if (self.w_k.shape[1], self.w_v.shape[1], self.w_out.shape[0]) != (dh, dh, dh) \
                or self.w_k.shape[0] != self.w_v.shape[0] or dh % self.n_heads:
            raise ConfigurationError(
                f"inconsistent attention weights q{self.w_q.shape} k{self.w_k.shape} "
                f"v{self.w_v.shape} out{self.w_out.shape} heads={self.n_heads}")

    @classmethod
    def random(cls, d_model: int, d_text: int, d_head: int, rng: numeric.Rng, n_heads: int = 1):
        def init(r, c):
            return rng.normal((r, c)) / np.sqrt(r)
        return cls(init(d_model, d_head), init(d_text, d_head), init(d_text, d_head),
                   init(d_head, d_model), n_heads)


@dataclass(frozen=True)
class Region:
    cells: np.ndarray   # flat cell indices, ascending
    tokens: np.ndarray  # row indices into the token matrix
    write: np.ndarray   # subset of ``cells`` this region pastes into


@dataclass(frozen=True)
class Group:
    cell_idx: np.ndarray
    cell_valid: np.ndarray
    tok_idx: np.ndarray
    tok_valid: np.ndarray
    src: np.ndarray  # flat positions into the [R*n_max] group output
    dst: np.ndarray  # destination cell rows


@dataclass(frozen=True)
class RegionPlan:
    groups: tuple[Group, ...]
    n_cells: int


def build_plan(regions: Sequence[Region], n_cells: int, group_size: int | None = None,
               order: Sequence[int] | None = None) -> RegionPlan:
    order = list(range(len(regions))) if order is None else list(order)
    if sorted(order) != list(range(len(regions))):
        raise ConfigurationError("order must be a permutation of the regions")
    size = len(order) if not group_size else group_size
    groups = []
    for g0 in range(0, len(order), max(size, 1)):
        members = [regions[i] for i in order[g0:g0 + size]]
        n_max = max(len(r.cells) for r in members)
        t_max = max(len(r.tokens) for r in members)
        R = len(members)
        cell_idx = np.zeros((R, n_max), dtype=np.int64)
        cell_valid = np.zeros((R, n_max))
        tok_idx = np.zeros((R, t_max), dtype=np.int64)
        tok_valid = np.zeros((R, t_max), dtype=bool)
        src, dst = [], []
        for r, reg in enumerate(members):
            cell_idx[r, :len(reg.cells)] = reg.cells
            cell_valid[r, :len(reg.cells)] = 1.0
            tok_idx[r, :len(reg.tokens)] = reg.tokens
            tok_valid[r, :len(reg.tokens)] = True
            pos = np.searchsorted(reg.cells, reg.write)
            src.append(r * n_max + pos)
            dst.append(reg.write)
        groups.append(Group(cell_idx, cell_valid, tok_idx, tok_valid,
                            np.concatenate(src).astype(np.int64), np.concatenate(dst).astype(np.int64)))
    return RegionPlan(tuple(groups), n_cells)


def layout_regions(layout: Layout, H: int, W: int, token_counts: Sequence[int], mode: str = "overwrite",
                   cell_offset: int = 0, token_offset: int = 0) -> list[Region]:
    if mode not in COMBINE_MODES:
        raise ConfigurationError(f"unknown combine mode {mode!r}")
    owner = owner_map(layout, H, W).reshape(-1)
    grid = np.arange(H * W).reshape(H, W)
    regions, t0 = [], token_offset
    for i, (rect, t) in enumerate(zip(layer_rects(layout, H, W), token_counts)):
        local = grid[rect.slices()].reshape(-1)
        local.sort()
        write = local if mode == "sum" else local[owner[local] == i]
        regions.append(Region(local + cell_offset, np.arange(t0, t0 + t), write + cell_offset))
        t0 += t
    return regions


def _ordered_tokens(layout: Layout, region_tokens: Sequence[RegionTokens]) -> list[RegionTokens]:
    by_layer = {rt.layer_index: rt for rt in region_tokens}
    out = []
    for layer in layout.layers:
        if layer.index not in by_layer:
            raise ConfigurationError(f"no region tokens for layer {layer.index}")
        out.append(by_layer[layer.index])
    return out


def region_cross_attention(h: ad.Var, tokens: ad.Var, plan: RegionPlan, w_q, w_k, w_v, w_out,
                           n_heads: int = 1) -> ad.Var:
    """Differentiable grouped cross attention over flat cell rows ``h[n_cells, d]``."""
    q = h @ w_q
    k = tokens @ w_k
    v = tokens @ w_v
    z = None
    for g in plan.groups:
        Q = ad.gather(q, g.cell_idx, g.cell_valid)
        K = ad.gather(k, g.tok_idx)
        V = ad.gather(v, g.tok_idx)
        O = ad.attention(Q, K, V, mask=g.tok_valid[:, None, :], n_heads=n_heads)
        part = ad.scatter(O, g.src, g.dst, plan.n_cells)
        z = part if z is None else z + part
    return z @ w_out


def layout_guided_cross_attention(f, layout: Layout, region_tokens: Sequence[RegionTokens],
                                  weights: AttentionWeights, mode: str = "overwrite",
                                  group_size: int | None = None, order=None) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    H, W, C = f.shape
    toks = _ordered_tokens(layout, region_tokens)
    regions = layout_regions(layout, H, W, [len(t.tokens) for t in toks], mode)
    plan = build_plan(regions, H * W, group_size, order)
    token_matrix = np.concatenate([t.tokens for t in toks], axis=0)
    out = region_cross_attention(ad.const(f.reshape(H * W, C)), ad.const(token_matrix), plan,
                                 weights.w_q, weights.w_k, weights.w_v, weights.w_out, weights.n_heads)
    return out.value.reshape(H, W, -1)


def _check_disjoint(layout: Layout, H: int, W: int):
    rects = layer_rects(layout, H, W)
    for i in range(1, len(rects)):
        for j in range(i + 1, len(rects)):
            if rects[i].intersect(rects[j]) is not None:
                raise OracleScopeError(f"layers {i} and {j} overlap; the masked oracle needs disjoint regions")


def oracle_masked_attention(f, layout: Layout, region_tokens: Sequence[RegionTokens],
                            weights: AttentionWeights) -> np.ndarray:
    """Brute-force reference: every cell attends over all tokens with a block mask.

    Non-background regions must be pairwise disjoint; the background owns the
    cells no other region covers.
    """
    f = np.asarray(f, dtype=np.float64)
    H, W, C = f.shape
    _check_disjoint(layout, H, W)
    toks = _ordered_tokens(layout, region_tokens)
    token_matrix = np.concatenate([t.tokens for t in toks], axis=0)
    token_owner = np.concatenate([np.full(len(t.tokens), i) for i, t in enumerate(toks)])
    owner = owner_map(layout, H, W).reshape(-1)
    mask = owner[:, None] == token_owner[None, :]
    q = f.reshape(H * W, C) @ weights.w_q
    k = token_matrix @ weights.w_k
    v = token_matrix @ weights.w_v
    z = numeric.attention(q, k, v, mask=mask, n_heads=weights.n_heads)
    return (z @ weights.w_out).reshape(H, W, -1)


@dataclass(frozen=True)
class CostReport:
    grouped_pairs: int
    full_pairs: int
    ratio: float

    def to_dict(self) -> dict:
        return {"grouped_pairs": self.grouped_pairs, "full_pairs": self.full_pairs, "ratio": self.ratio}


def attention_cost(layout: Layout, region_tokens, H: int | None = None, W: int | None = None) -> CostReport:
    """Query-key pair counts of grouped vs. full cross attention.

    ``region_tokens`` may be RegionTokens or plain per-layer token counts.
    """
    if H is None or W is None:
        H, W = layout.latent_grid()
    counts = [len(rt.tokens) if isinstance(rt, RegionTokens) else int(rt) for rt in region_tokens]
    if isinstance(region_tokens[0], RegionTokens):
        counts = [len(rt.tokens) for rt in _ordered_tokens(layout, region_tokens)]
    rects = layer_rects(layout, H, W)
    grouped = sum(r.area * t for r, t in zip(rects, counts))
    full = H * W * sum(counts)
    return CostReport(grouped, full, full / grouped)


def encode_layout_tokens(layout: Layout, cfg=None) -> list[RegionTokens]:
    """Region tokens per layer: glyph encoder for text layers, chunked encoder otherwise."""
    from .encoders import EncoderConfig, chunked_prompt_encode, glyph_encode

    cfg = cfg or EncoderConfig()
    out = []
    for layer in layout.layers:
        prompt = layer.prompt if not layer.style_trigger else f"{layer.prompt} {layer.style_trigger}"
        if layer.kind is LayerKind.TEXT:
            out.append(RegionTokens(layer.index, glyph_encode(prompt, cfg).embeddings, "glyph"))
        else:
            out.append(RegionTokens(layer.index, chunked_prompt_encode(prompt, cfg).embeddings))
    return out
