"""Layer templates: source-over compositing, dominant-layer selection and
retrieval-driven layer/background replacement.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from ..errors import ValidationError
from ..layout import LayerKind, Layout, discretize, dumps_manifest, load_manifest
from ..numeric import Rng
from .assets import LayerAsset, LayerDatabase, is_solid
from .retrieval import retrieve

MAIN = "MainElement"
OTHERS = "Others"
OPAQUE_ALPHA = 128


def _to_float(rgba) -> np.ndarray:
    a = np.asarray(rgba)
    return a.astype(np.float64) / 255.0 if a.dtype == np.uint8 else a.astype(np.float64)


def over(src, dst) -> np.ndarray:
    """Straight-alpha source-over on float RGBA in [0,1] (uint8 inputs are rescaled)."""
    s, d = _to_float(src), _to_float(dst)
    sa, da = s[..., 3:], d[..., 3:]
    out_a = sa + da * (1.0 - sa)
    num = s[..., :3] * sa + d[..., :3] * da * (1.0 - sa)
    rgb = np.divide(num, out_a, out=np.zeros_like(num), where=out_a > 0)
    return np.concatenate([rgb, out_a], axis=-1)


def quantize(rgba_float: np.ndarray) -> np.ndarray:
    return np.clip(np.round(rgba_float * 255.0), 0, 255).astype(np.uint8)


def letterbox(rgba, height: int, width: int) -> np.ndarray:
    """Aspect-preserving fit into ``height x width``, centred, padded with alpha 0."""
    a = np.asarray(rgba, dtype=np.uint8)
    if a.shape[:2] == (height, width):
        return a.copy()
    h0, w0 = a.shape[:2]
    scale = min(height / h0, width / w0)
    nh, nw = max(1, min(height, round(h0 * scale))), max(1, min(width, round(w0 * scale)))
    im = Image.fromarray(a, "RGBA").convert("RGBa").resize((nw, nh), Image.Resampling.BILINEAR)
    fitted = np.asarray(im.convert("RGBA"), dtype=np.uint8)
    out = np.zeros((height, width, 4), dtype=np.uint8)
    top, left = (height - nh) // 2, (width - nw) // 2
    out[top:top + nh, left:left + nw] = fitted
    return out


@dataclass(frozen=True, eq=False)
class Template:
    """A layout plus one rect-sized RGBA bitmap per layer (canvas resolution)."""

    layout: Layout
    bitmaps: tuple[np.ndarray, ...]
    name: str = "template"

    def __post_init__(self):
        if len(self.bitmaps) != len(self.layout.layers):
            raise ValidationError(f"{len(self.bitmaps)} bitmaps for {len(self.layout.layers)} layers")
        H, W = self.layout.canvas_height, self.layout.canvas_width
        for layer, bmp in zip(self.layout.layers, self.bitmaps):
            rect = discretize(layer.bbox, H, W)
            if bmp.shape != (rect.height, rect.width, 4) or bmp.dtype != np.uint8:
                raise ValidationError(f"layer {layer.index}: bitmap {bmp.shape} does not fit rect "
                                      f"{rect.height}x{rect.width}")

    def with_bitmap(self, index: int, bmp: np.ndarray) -> "Template":
        bitmaps = list(self.bitmaps)
        bitmaps[index] = bmp
        return Template(self.layout, tuple(bitmaps), self.name)


def composite(template: Template) -> np.ndarray:
    """Bottom-to-top source-over of all layers; quantised once at the end."""
    H, W = template.layout.canvas_height, template.layout.canvas_width
    canvas = np.zeros((H, W, 4))
    for layer, bmp in zip(template.layout.layers, template.bitmaps):
        sl = discretize(layer.bbox, H, W).slices()
        canvas[sl] = over(bmp, canvas[sl])
    return quantize(canvas)


def template_from_sample(sample, name: str = "template") -> Template:
    from .synth import layer_bitmap

    lay = sample.layout
    return Template(lay, tuple(layer_bitmap(l, lay.canvas_height, lay.canvas_width) for l in lay.layers), name)


def save_template(template: Template, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(dumps_manifest(template.layout), encoding="utf-8")
    for i, bmp in enumerate(template.bitmaps):
        Image.fromarray(bmp, "RGBA").save(root / f"layer_{i:03d}.png", format="PNG")


def load_template(root) -> Template:
    root = Path(root)
    if not (root / "manifest.json").is_file():
        raise ValidationError(f"{root} is not a template directory (missing manifest.json)")
    layout = load_manifest(root / "manifest.json")
    bitmaps = []
    for i in range(len(layout.layers)):
        path = root / f"layer_{i:03d}.png"
        if not path.is_file():
            raise ValidationError(f"template {root.name} lacks {path.name}")
        with Image.open(path) as im:
            bitmaps.append(np.asarray(im.convert("RGBA"), dtype=np.uint8).copy())
    return Template(layout, tuple(bitmaps), root.name)


# ------------------------------------------------------------------ dominant layers

Classifier = Callable[[Template, int], str]


def dominant_heuristic(template: Template, index: int, area_range=(0.01, 0.5),
                       min_opaque: float = 0.05) -> str:
    layer = template.layout.layers[index]
    if layer.kind is not LayerKind.NONTEXT:
        return OTHERS
    area = layer.bbox.area
    alpha = template.bitmaps[index][..., 3]
    opaque = alpha >= OPAQUE_ALPHA
    ring = np.concatenate([opaque[0], opaque[-1], opaque[:, 0], opaque[:, -1]])
    if area_range[0] <= area <= area_range[1] and opaque.mean() >= min_opaque and not ring.any():
        return MAIN
    return OTHERS


def select_dominant(template: Template, classifier: Classifier | None = None) -> list[str]:
    """Label each layer MainElement or Others; background and text are always Others."""
    classify = classifier or dominant_heuristic
    out = []
    for layer in template.layout.layers:
        if layer.kind is not LayerKind.NONTEXT:
            out.append(OTHERS)
        else:
            out.append(classify(template, layer.index))
    return out


# ------------------------------------------------------------------ replacement

@dataclass(frozen=True)
class ReplacementPlan:
    replacements: tuple[tuple[int, str], ...] = ()
    background: str | None = None

    def __post_init__(self):
        idx = [i for i, _ in self.replacements]
        if len(set(idx)) != len(idx):
            raise ValidationError(f"layer indices repeat in plan: {sorted(idx)}")
        if 0 in idx:
            raise ValidationError("layer 0 is the background; use the background field")


def apply_plan(template: Template, plan: ReplacementPlan, db: LayerDatabase) -> Template:
    H, W = template.layout.canvas_height, template.layout.canvas_width
    out = template
    for index, asset_id in plan.replacements:
        if not 0 < index < len(template.layout.layers):
            raise ValidationError(f"plan references layer {index}, template has {len(template.layout.layers)}")
        rect = discretize(template.layout.layers[index].bbox, H, W)
        out = out.with_bitmap(index, letterbox(db.get(asset_id).rgba, rect.height, rect.width))
    if plan.background is not None:
        out = out.with_bitmap(0, _fill_canvas(db.get(plan.background).rgba, H, W))
    return out


def _fill_canvas(rgba: np.ndarray, H: int, W: int) -> np.ndarray:
    if rgba.shape[:2] == (H, W):
        return rgba.copy()
    im = Image.fromarray(rgba, "RGBA").convert("RGBa").resize((W, H), Image.Resampling.BILINEAR)
    return np.asarray(im.convert("RGBA"), dtype=np.uint8).copy()


def replace_layers(template: Template, plan: ReplacementPlan, db: LayerDatabase) -> np.ndarray:
    return composite(apply_plan(template, plan, db))


def harvest(template: Template, index: int) -> LayerAsset:
    layer = template.layout.layers[index]
    return LayerAsset(f"{template.name}-L{index:03d}", template.bitmaps[index], layer.prompt)


def invert_plan(template: Template, plan: ReplacementPlan, db: LayerDatabase) -> ReplacementPlan:
    """Plan restoring the layers ``plan`` touches; the originals are added to ``db``."""
    def ensure(index):
        asset = harvest(template, index)
        if asset.id in db:
            if not np.array_equal(db.get(asset.id).rgba, asset.rgba):
                raise ValidationError(f"asset {asset.id} already exists with different pixels")
        else:
            db.add(asset)
        return asset.id

    back = tuple((i, ensure(i)) for i, _ in plan.replacements)
    return ReplacementPlan(back, ensure(0) if plan.background is not None else None)


def replace_background(template: Template, db: LayerDatabase, rng: Rng) -> tuple[Template, str | None]:
    """Swap a solid background for a uniformly drawn solid asset; no-op otherwise."""
    if not is_solid(template.bitmaps[0]):
        return template, None
    candidates = [a for a in db.ids() if is_solid(db.get(a).rgba)]
    if not candidates:
        return template, None
    choice = rng.choice(candidates)
    return apply_plan(template, ReplacementPlan(background=choice), db), choice


@dataclass(frozen=True, eq=False)
class Variant:
    name: str
    plan: ReplacementPlan
    template: Template


def augment(template: Template, db: LayerDatabase, rng: Rng, k: int = 10, ar_tol: float = 1.5,
            swap_background: bool = True, classifier: Classifier | None = None) -> list[Variant]:
    """One variant per retrieved neighbour of each dominant layer (at most ``k`` each)."""
    labels = select_dominant(template, classifier)
    variants = []
    for index, label in enumerate(labels):
        if label != MAIN:
            continue
        for m in retrieve(harvest(template, index), db, k, ar_tol):
            plan = ReplacementPlan(((index, m.asset_id),))
            t = apply_plan(template, plan, db)
            bg = None
            if swap_background:
                t, bg = replace_background(t, db, rng.fork("background", index, m.asset_id))
            plan = ReplacementPlan(plan.replacements, bg)
            variants.append(Variant(f"{template.name}-L{index:03d}-{m.asset_id}", plan, t))
    return variants


def variants_layout(variant: Variant, db: LayerDatabase) -> Layout:
    """Layout whose prompts follow the replacement assets' captions."""
    prompts = {i: db.get(a).caption for i, a in variant.plan.replacements if db.get(a).caption}
    if variant.plan.background is not None and db.get(variant.plan.background).caption:
        prompts[0] = db.get(variant.plan.background).caption
    return variant.template.layout.with_prompts(prompts)

