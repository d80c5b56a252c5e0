"""Synthetic color-semantics layouts for training and evaluation.

Each layer's prompt names one palette color and the layer's rect is painted
that color.  Text layers additionally carry their characters as a band of
dark bit bars (one 8-bar slot per UTF-8 byte), which
:func:`decode_text_band` reads back.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ValidationError
from ..layout import Layer, LayerKind, Layout, NormalizedBBox, PixelRect, discretize, layout_stats, owner_map
from ..layout import dumps_manifest, load_manifest
from ..numeric import Rng

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.70, 0.20),
    "blue": (0.10, 0.20, 0.85),
    "yellow": (0.95, 0.90, 0.15),
    "purple": (0.55, 0.15, 0.70),
    "cyan": (0.10, 0.80, 0.85),
    "white": (0.95, 0.95, 0.95),
    "orange": (1.00, 0.55, 0.05),
}
COLOR_NAMES = tuple(PALETTE)
_PALETTE_ARRAY = np.array([PALETTE[c] for c in COLOR_NAMES])
_COLOR_RE = re.compile(r"\b(" + "|".join(COLOR_NAMES) + r")\b")

SHAPES = ("circle icon", "square block", "star badge", "banner", "photo frame", "arrow", "chart", "ribbon")
WORDS = {
    "en": ("SALE", "GROWTH", "DATA", "TEAM", "PLAN", "2025", "FOCUS", "CLOUD", "RISK", "VALUE", "GOAL", "NEWS"),
    "zh": ("数据", "增长", "团队", "计划", "价值", "目标"),
}

BAR_WIDTH = 2
SLOT_WIDTH = 8 * BAR_WIDTH + 2
BAND_MARGIN = 2
DARKEN = 0.45
BAND_HEIGHT = 6


def color_of_prompt(prompt: str) -> str | None:
    m = _COLOR_RE.search(prompt)
    return m.group(1) if m else None


def classify_rgb(rgb) -> np.ndarray:
    """Nearest palette index for each RGB triple (values in [0,1])."""
    rgb = np.asarray(rgb, dtype=np.float64)
    d = ((rgb[..., None, :] - _PALETTE_ARRAY) ** 2).sum(axis=-1)
    return np.argmin(d, axis=-1)


def band_capacity(rect: PixelRect) -> int:
    return max(0, (rect.width - 2 * BAND_MARGIN) // SLOT_WIDTH)


def _band_rows(rect: PixelRect) -> tuple[int, int]:
    mid = rect.r0 + rect.height // 2
    return max(rect.r0, mid - BAND_HEIGHT // 2), min(rect.r1, mid + BAND_HEIGHT // 2)


def render_text_band(image: np.ndarray, rect: PixelRect, text: str, color) -> None:
    """Draw ``text`` as bit bars inside ``rect`` of a uint8 RGBA image, in place."""
    data = text.encode("utf-8")
    if len(data) > band_capacity(rect):
        raise ValidationError(f"text {text!r} needs {len(data)} slots, rect holds {band_capacity(rect)}")
    dark = np.round(np.asarray(color) * DARKEN * 255).astype(np.uint8)
    b0, b1 = _band_rows(rect)
    for s, byte in enumerate(data):
        for bit in range(8):
            if byte >> (7 - bit) & 1:
                x = rect.c0 + BAND_MARGIN + s * SLOT_WIDTH + bit * BAR_WIDTH
                image[b0:b1, x:x + BAR_WIDTH, :3] = dark


def decode_text_band(image: np.ndarray, rect: PixelRect) -> str:
    """Read bit bars back from a rendered text rect (best effort)."""
    img = np.asarray(image)
    region = img[rect.slices()][..., :3].astype(np.float64)
    if region.size == 0:
        return ""
    base = np.median(region.reshape(-1, 3), axis=0).sum()
    row = img[(sum(_band_rows(rect)) - 1) // 2, :, :3].astype(np.float64).sum(axis=1)
    out = bytearray()
    for s in range(band_capacity(rect)):
        byte = 0
        for bit in range(8):
            x = rect.c0 + BAND_MARGIN + s * SLOT_WIDTH + bit * BAR_WIDTH
            byte = (byte << 1) | int(row[x] < 0.75 * base)
        if byte == 0:
            break
        out.append(byte)
    return out.decode("utf-8", errors="ignore")


@dataclass(frozen=True)
class SynthSpec:
    count: int = 64
    min_layers: int = 2
    max_layers: int = 8
    canvas: tuple[int, int] = (640, 320)
    cell: int = 32
    text_fraction: float = 0.35
    languages: tuple[str, ...] = ("en", "zh")
    min_visible: float = 0.4

    def validate(self):
        gw, gh = self.canvas[0] // self.cell, self.canvas[1] // self.cell
        if self.count < 1:
            raise ValidationError(f"count must be >= 1, got {self.count}")
        if not 1 <= self.min_layers <= self.max_layers:
            raise ValidationError(f"need 1 <= min_layers <= max_layers, got {self.min_layers}..{self.max_layers}")
        if gw < 6 or gh < 4:
            raise ValidationError(f"canvas {self.canvas} too small for {self.cell}px cells")
        for lang in self.languages:
            if lang not in WORDS:
                raise ValidationError(f"no word list for language {lang!r}")


@dataclass(frozen=True)
class SynthSample:
    image: np.ndarray  # uint8 RGBA at canvas resolution
    layout: Layout


def _text_content(rng: Rng, lang: str, capacity: int) -> str:
    words = WORDS[lang]
    sep = " " if lang != "zh" else ""
    text = rng.choice(words)
    for _ in range(2):
        nxt = text + sep + rng.choice(words)
        if len(nxt.encode("utf-8")) > capacity or rng.uniform() < 0.5:
            break
        text = nxt
    return text


def _random_layout(spec: SynthSpec, rng: Rng) -> tuple[Layout, list[str]]:
    W, H = spec.canvas
    gw, gh = W // spec.cell, H // spec.cell
    n = rng.integers(spec.min_layers, spec.max_layers + 1)
    bg_color = rng.choice(COLOR_NAMES)
    layers = [Layer(0, LayerKind.BACKGROUND, NormalizedBBox.full(), f"solid {bg_color} background")]
    colors = [bg_color]
    for i in range(1, n + 1):
        is_text = rng.uniform() < spec.text_fraction
        if is_text:
            w = rng.integers(4, max(5, gw // 2 + 1))
            h = rng.integers(2, 4)
        else:
            w = rng.integers(2, max(3, gw // 2))
            h = rng.integers(2, max(3, gh // 2 + 1))
        w, h = min(w, gw), min(h, gh)
        c0 = rng.integers(0, gw - w + 1)
        r0 = rng.integers(0, gh - h + 1)
        bbox = NormalizedBBox(c0 / gw, r0 / gh, (c0 + w) / gw, (r0 + h) / gh)
        color = rng.choice([c for c in COLOR_NAMES if c != bg_color])
        colors.append(color)
        if is_text:
            lang = rng.choice(spec.languages)
            cap = band_capacity(discretize(bbox, H, W))
            content = _text_content(rng, lang, cap)
            layers.append(Layer(i, LayerKind.TEXT, bbox, f'{color} text "{content}"', content, lang))
        else:
            layers.append(Layer(i, LayerKind.NONTEXT, bbox, f"a {color} {rng.choice(SHAPES)}"))
    return Layout(W, H, tuple(layers)), colors


def _visible_enough(layout: Layout, spec: SynthSpec) -> bool:
    gh, gw = spec.canvas[1] // spec.cell, spec.canvas[0] // spec.cell
    owner = owner_map(layout, gh, gw)
    for layer in layout.layers[1:]:
        rect = discretize(layer.bbox, gh, gw)
        if (owner == layer.index).sum() < max(2, spec.min_visible * rect.area):
            return False
    return True


def layer_bitmap(layer: Layer, H: int, W: int) -> np.ndarray:
    """Opaque rect-sized RGBA bitmap for one layer at canvas resolution."""
    color = PALETTE[color_of_prompt(layer.prompt)]
    rect = discretize(layer.bbox, H, W)
    bmp = np.empty((rect.height, rect.width, 4), dtype=np.uint8)
    bmp[..., :3] = np.round(np.asarray(color) * 255).astype(np.uint8)
    bmp[..., 3] = 255
    if layer.is_text:
        local = PixelRect(0, rect.height, 0, rect.width)
        render_text_band(bmp, local, layer.text_content, color)
    return bmp


def render(layout: Layout) -> np.ndarray:
    """Paint each layer's prompted color over its rect, bottom to top."""
    H, W = layout.canvas_height, layout.canvas_width
    img = np.zeros((H, W, 4), dtype=np.uint8)
    for layer in layout.layers:
        img[discretize(layer.bbox, H, W).slices()] = layer_bitmap(layer, H, W)
    return img


def synth_dataset(spec: SynthSpec, rng: Rng) -> list[SynthSample]:
    spec.validate()
    out = []
    for k in range(spec.count):
        r = rng.fork("layout", k)
        for _ in range(200):
            layout, _ = _random_layout(spec, r)
            if _visible_enough(layout, spec):
                break
        else:
            raise ValidationError(f"could not place a non-degenerate layout for item {k}")
        out.append(SynthSample(render(layout), layout))
    return out


def visible_color_fractions(image_rgb: np.ndarray, layout: Layout, H: int, W: int) -> dict[int, float]:
    """Per layer, fraction of its visible cells whose color class matches the prompt.

    ``image_rgb`` is a cell-resolution [H, W, 3] array in [0,1].
    """
    cls = classify_rgb(image_rgb)
    owner = owner_map(layout, H, W)
    out = {}
    for layer in layout.layers:
        sel = owner == layer.index
        if sel.any():
            target = COLOR_NAMES.index(color_of_prompt(layer.prompt))
            out[layer.index] = float((cls[sel] == target).mean())
    return out


def dominant_color(image_rgb: np.ndarray, cells: np.ndarray) -> str:
    cls = classify_rgb(image_rgb[cells])
    return COLOR_NAMES[int(np.bincount(cls, minlength=len(COLOR_NAMES)).argmax())]


# ------------------------------------------------------------------ dataset directories

def write_png(path, rgba: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgba, dtype=np.uint8), "RGBA").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGBA"), dtype=np.uint8).copy()


def write_dataset(samples, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(samples):
        d = out / f"{k:04d}"
        d.mkdir(exist_ok=True)
        write_png(d / "image.png", s.image)
        (d / "manifest.json").write_text(dumps_manifest(s.layout), encoding="utf-8")
    stats = layout_stats([s.layout for s in samples])
    (out / "stats.json").write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_dataset(root) -> list[SynthSample]:
    root = Path(root)
    items = sorted(p for p in root.iterdir() if p.is_dir())
    out = []
    for d in items:
        img, man = d / "image.png", d / "manifest.json"
        if not img.is_file() or not man.is_file():
            raise ValidationError(f"dataset item {d.name} lacks image.png or manifest.json")
        layout = load_manifest(man)
        image = read_png(img)
        if image.shape[:2] != (layout.canvas_height, layout.canvas_width):
            raise ValidationError(f"dataset item {d.name}: image {image.shape[:2]} != canvas "
                                  f"{layout.canvas_height}x{layout.canvas_width}")
        out.append(SynthSample(image, layout))
    return out
