"""Occlusion-aware crops, Set-of-Mark replicas and the LGSR pipeline."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from ..errors import JudgeTransportError, ScopeError, ValidationError
from ..layout import LayerKind, Layout, discretize
from .judge import ELEMENT_TYPES, JudgeProvider, LayerContext
from .metrics import spelling_precision

log = logging.getLogger(__name__)

SOM_PALETTE = ((230, 25, 75), (60, 180, 75), (0, 130, 200), (245, 130, 48),
               (145, 30, 180), (70, 240, 240), (240, 50, 230), (128, 128, 0))


def _rects(layout: Layout, H: int, W: int):
    return [discretize(l.bbox, H, W) for l in layout.layers]


def occlusion_crop(image: np.ndarray, layout: Layout, index: int) -> np.ndarray:
    """Crop a layer's rect; pixels under any higher layer's rect get alpha 0."""
    if not 0 <= index < len(layout.layers):
        raise ValidationError(f"layer index {index} out of range")
    if layout.layers[index].kind is LayerKind.TEXT:
        raise ScopeError(f"layer {index} is text; text layers are scored by spelling precision")
    img = np.asarray(image, dtype=np.uint8)
    H, W = img.shape[:2]
    if img.shape[2] == 3:
        img = np.concatenate([img, np.full((H, W, 1), 255, np.uint8)], axis=2)
    rects = _rects(layout, H, W)
    r = rects[index]
    crop = img[r.slices()].copy()
    for upper in rects[index + 1:]:
        inter = r.intersect(upper)
        if inter is not None:
            crop[inter.r0 - r.r0:inter.r1 - r.r0, inter.c0 - r.c0:inter.c1 - r.c0, 3] = 0
    return crop


def occluders(layout: Layout, index: int, H: int, W: int) -> list[int]:
    rects = _rects(layout, H, W)
    return [j for j in range(index + 1, len(rects)) if rects[index].intersect(rects[j]) is not None]


def som_color(index: int) -> tuple[int, int, int]:
    return SOM_PALETTE[index % len(SOM_PALETTE)]


def annotate_som(image: np.ndarray, layout: Layout, width: int = 2) -> np.ndarray:
    """Replica with every layer's rect outlined and labelled in a cycling color."""
    img = Image.fromarray(np.asarray(image, dtype=np.uint8)).convert("RGBA")
    draw = ImageDraw.Draw(img)
    for layer, r in zip(layout.layers, _rects(layout, img.height, img.width)):
        color = som_color(layer.index) + (255,)
        draw.rectangle([r.c0, r.r0, r.c1 - 1, r.r1 - 1], outline=color, width=width)
        draw.text((r.c0 + width + 1, r.r0 + width + 1), str(layer.index), fill=color)
    return np.asarray(img, dtype=np.uint8).copy()


# ------------------------------------------------------------------ LGSR

@dataclass(frozen=True, eq=False)
class EvalItem:
    image: np.ndarray
    layout: Layout
    references: dict[int, str] = field(default_factory=dict)
    hypotheses: dict[int, str] = field(default_factory=dict)
    name: str = "item"
    global_caption: str = ""

    def __post_init__(self):
        text_idx = {l.index for l in self.layout.text_layers}
        for d, what in ((self.references, "reference"), (self.hypotheses, "hypothesis")):
            extra = set(d) - text_idx
            if extra:
                raise ValidationError(f"{what} text given for non-text layers {sorted(extra)}")
        if set(self.hypotheses) != set(self.references):
            raise ValidationError("hypotheses must align with the text layers that have references")


def item_spelling(item: EvalItem) -> float | None:
    langs = {l.index: l.language or "en" for l in item.layout.text_layers}
    scores = [spelling_precision(item.references[i], item.hypotheses[i], langs[i]) for i in sorted(item.references)]
    return sum(scores) / len(scores) if scores else None


@dataclass(frozen=True)
class LayerJudgement:
    index: int
    element_type: str | None
    description: str | None
    score: int | None
    reason: str

    @property
    def scored(self) -> bool:
        return self.score is not None

    def to_dict(self) -> dict:
        return {"index": self.index, "element_type": self.element_type, "description": self.description,
                "score": self.score, "reason": self.reason}


@dataclass(frozen=True)
class LGSRReport:
    judgements: tuple[LayerJudgement, ...]
    threshold: int
    lgsr: float | None
    complete: bool
    note: str = ""

    def to_dict(self) -> dict:
        return {"lgsr": self.lgsr, "threshold": self.threshold, "complete": self.complete, "note": self.note,
                "judgements": [j.to_dict() for j in self.judgements]}


def _retry(fn, attempts: int):
    last = None
    for _ in range(attempts):
        try:
            return fn()
        except JudgeTransportError as exc:
            last = exc
            log.warning("judge call failed: %s", exc)
    raise last


def _judge_layer(item: EvalItem, judge: JudgeProvider, index: int, annotated: np.ndarray,
                 attempts: int) -> LayerJudgement:
    layer = item.layout.layers[index]
    H, W = item.image.shape[:2]
    ctx = LayerContext(index, layer.prompt, layer.bbox.as_list(), occluders(item.layout, index, H, W))
    kind = desc = None
    try:
        kind = _retry(lambda: judge.classify(ctx), attempts)
        if kind not in ELEMENT_TYPES:
            raise JudgeTransportError(f"unknown element type {kind!r}")
        ctx = LayerContext(ctx.index, ctx.caption, ctx.bbox, ctx.occluders, kind)
        crop = occlusion_crop(item.image, item.layout, index)
        desc = _retry(lambda: judge.caption(crop, ctx), attempts)
        ctx = LayerContext(ctx.index, ctx.caption, ctx.bbox, ctx.occluders, kind, desc)
        score, reason = _retry(lambda: judge.score(item.global_caption, item.image, annotated, ctx), attempts)
    except JudgeTransportError as exc:
        return LayerJudgement(index, kind, desc, None, f"unscored: {exc}")
    return LayerJudgement(index, kind, desc, int(score), reason)


def lgsr(item: EvalItem, judge: JudgeProvider, threshold: int = 5, attempts: int = 3,
         parallelism: int = 4) -> LGSRReport:
    """Share of non-text, non-background layers whose judge score reaches ``threshold``.

    Layers whose judge calls keep failing are reported unscored; the rate then
    covers the scored layers only and the report is marked incomplete.
    """
    if attempts < 1 or parallelism < 1:
        raise ValidationError("attempts and parallelism must be >= 1")
    targets = [l.index for l in item.layout.nontext_layers]
    if not targets:
        return LGSRReport((), threshold, None, True, "no non-text layers: rate undefined")
    annotated = annotate_som(item.image, item.layout)
    with ThreadPoolExecutor(max_workers=min(parallelism, len(targets))) as pool:
        results = list(pool.map(lambda i: _judge_layer(item, judge, i, annotated, attempts), targets))
    results.sort(key=lambda j: j.index)
    scored = [j for j in results if j.scored]
    complete = len(scored) == len(results)
    rate = sum(j.score >= threshold for j in scored) / len(scored) if scored else None
    note = "" if complete else f"{len(results) - len(scored)} of {len(results)} layers unscored"
    return LGSRReport(tuple(results), threshold, rate, complete, note)
