"""Layer/layout data model, grid geometry, masks, guidance maps and manifests."""
from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    CoverageError,
    EmptyInputError,
    GeometryError,
    ManifestParseError,
    ValidationError,
)

DEFAULT_CANVAS = (2240, 896)  # width, height
LATENT_DOWNSCALE = 32
COMBINE_MODES = ("overwrite", "sum")
_SNAP = 1e-9


class LayerKind(str, Enum):
    BACKGROUND = "background"
    NONTEXT = "nontext"
    TEXT = "text"


@dataclass(frozen=True)
class NormalizedBBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise ValidationError(f"invalid bbox {self.as_list()}: need 0<=x1<x2<=1 and 0<=y1<y2<=1")

    @classmethod
    def full(cls) -> "NormalizedBBox":
        return cls(0.0, 0.0, 1.0, 1.0)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class Layer:
    index: int
    kind: LayerKind
    bbox: NormalizedBBox
    prompt: str
    text_content: str = ""
    language: str = ""
    style_trigger: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.kind is LayerKind.TEXT:
            if not self.text_content:
                raise ValidationError(f"layer {self.index}: text layer needs text_content")
        elif self.text_content:
            raise ValidationError(f"layer {self.index}: only text layers carry text_content")
        if self.kind is LayerKind.BACKGROUND and self.bbox != NormalizedBBox.full():
            raise ValidationError(f"layer {self.index}: background must cover [0,0,1,1]")

    @property
    def is_text(self) -> bool:
        return self.kind is LayerKind.TEXT


@dataclass(frozen=True)
class Layout:
    canvas_width: int
    canvas_height: int
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.canvas_width < 1 or self.canvas_height < 1:
            raise ValidationError(f"canvas must be positive, got {self.canvas_width}x{self.canvas_height}")
        if not self.layers:
            raise ValidationError("layout has no layers")
        for i, layer in enumerate(self.layers):
            if layer.index != i:
                raise ValidationError(f"layer {layer.index}: expected index {i} (layers must be 0..L-1 in z-order)")
            if (layer.kind is LayerKind.BACKGROUND) != (i == 0):
                raise ValidationError(f"layer {layer.index}: exactly one background layer, at index 0")

    @property
    def text_layers(self) -> list[Layer]:
        return [l for l in self.layers if l.kind is LayerKind.TEXT]

    @property
    def nontext_layers(self) -> list[Layer]:
        """Non-text object layers, background excluded."""
        return [l for l in self.layers if l.kind is LayerKind.NONTEXT]

    def __len__(self):
        return len(self.layers)

    def latent_grid(self, downscale: int = LATENT_DOWNSCALE) -> tuple[int, int]:
        """(H, W) of the latent grid for this canvas."""
        return max(1, self.canvas_height // downscale), max(1, self.canvas_width // downscale)

    def with_prompts(self, prompts: dict[int, str]) -> "Layout":
        layers = [Layer(l.index, l.kind, l.bbox, prompts.get(l.index, l.prompt), l.text_content,
                        l.language, l.style_trigger) for l in self.layers]
        return Layout(self.canvas_width, self.canvas_height, tuple(layers))


@dataclass(frozen=True)
class PixelRect:
    r0: int
    r1: int
    c0: int
    c1: int

    @property
    def height(self) -> int:
        return self.r1 - self.r0

    @property
    def width(self) -> int:
        return self.c1 - self.c0

    @property
    def area(self) -> int:
        return self.height * self.width

    def slices(self) -> tuple[slice, slice]:
        return slice(self.r0, self.r1), slice(self.c0, self.c1)

    def intersect(self, other: "PixelRect") -> "PixelRect | None":
        r0, r1 = max(self.r0, other.r0), min(self.r1, other.r1)
        c0, c1 = max(self.c0, other.c0), min(self.c1, other.c1)
        if r0 >= r1 or c0 >= c1:
            return None
        return PixelRect(r0, r1, c0, c1)

    def check_within(self, H: int, W: int):
        if not (0 <= self.r0 < self.r1 <= H and 0 <= self.c0 < self.c1 <= W):
            raise GeometryError(f"rect rows [{self.r0},{self.r1}) cols [{self.c0},{self.c1}) outside {H}x{W} grid")


@dataclass(frozen=True)
class GuidanceSpec:
    gammas: tuple[float, ...]
    alpha: float = 0.5
    global_scale: float = 7.0

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if any(g < 0 for g in self.gammas):
            raise ConfigurationError(f"guidance scalars must be >= 0, got {self.gammas}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0,1], got {self.alpha}")
        if self.global_scale < 0:
            raise ConfigurationError(f"global scale must be >= 0, got {self.global_scale}")

    @classmethod
    def uniform(cls, n_layers: int, gamma: float, alpha: float = 0.5, global_scale: float | None = None):
        return cls((gamma,) * n_layers, alpha, gamma if global_scale is None else global_scale)

    @classmethod
    def from_overrides(cls, n_layers: int, overrides: dict[int, float], alpha: float = 0.5,
                       global_scale: float = 7.0):
        """Per-layer scalars; layers without an override use ``global_scale``."""
        for i in overrides:
            if not 0 <= i < n_layers:
                raise ConfigurationError(f"guidance index {i} out of range for {n_layers} layers")
        return cls(tuple(overrides.get(i, global_scale) for i in range(n_layers)), alpha, global_scale)


def _snap(x: float) -> float:
    r = round(x)
    return float(r) if abs(x - r) < _SNAP else x


def discretize(bbox: NormalizedBBox, H: int, W: int) -> PixelRect:
    """Outward-rounded grid rect of a normalized bbox, clamped and non-empty."""
    r0 = math.floor(_snap(bbox.y1 * H))
    r1 = math.ceil(_snap(bbox.y2 * H))
    c0 = math.floor(_snap(bbox.x1 * W))
    c1 = math.ceil(_snap(bbox.x2 * W))
    r0 = min(max(r0, 0), H - 1)
    c0 = min(max(c0, 0), W - 1)
    r1 = min(max(r1, r0 + 1), H)
    c1 = min(max(c1, c0 + 1), W)
    return PixelRect(r0, r1, c0, c1)


def layer_rects(layout: Layout, H: int, W: int) -> list[PixelRect]:
    return [discretize(l.bbox, H, W) for l in layout.layers]


def crop(f: np.ndarray, rect: PixelRect) -> np.ndarray:
    f = np.asarray(f)
    rect.check_within(f.shape[0], f.shape[1])
    return f[rect.slices()].copy()


def paste(z: np.ndarray, rect: PixelRect, H: int, W: int) -> np.ndarray:
    z = np.asarray(z)
    rect.check_within(H, W)
    if z.shape[:2] != (rect.height, rect.width):
        raise GeometryError(f"piece of shape {z.shape[:2]} does not fit rect {rect.height}x{rect.width}")
    out = np.zeros((H, W) + z.shape[2:], dtype=np.result_type(z.dtype, np.float64))
    out[rect.slices()] = z
    return out


def combine(pieces: Sequence[tuple[np.ndarray, PixelRect]], H: int, W: int,
            mode: str = "overwrite") -> np.ndarray:
    """Merge z-ordered pieces: highest piece wins (overwrite) or pastes add up (sum)."""
    if mode not in COMBINE_MODES:
        raise ConfigurationError(f"unknown combine mode {mode!r}")
    if not pieces:
        raise EmptyInputError("nothing to combine")
    tail = np.asarray(pieces[0][0]).shape[2:]
    out = np.zeros((H, W) + tail)
    if mode == "sum":
        for z, rect in pieces:
            out += paste(z, rect, H, W)
        return out
    covered = np.zeros((H, W), dtype=bool)
    for z, rect in pieces:
        z = np.asarray(z)
        rect.check_within(H, W)
        if z.shape[:2] != (rect.height, rect.width):
            raise GeometryError(f"piece of shape {z.shape[:2]} does not fit rect {rect.height}x{rect.width}")
        out[rect.slices()] = z
        covered[rect.slices()] = True
    if not covered.all():
        raise CoverageError(np.argwhere(~covered)[0])
    return out


def owner_map(layout: Layout, H: int, W: int) -> np.ndarray:
    """Index of the highest-z layer covering each cell (-1 where uncovered)."""
    owner = np.full((H, W), -1, dtype=np.int64)
    for i, rect in enumerate(layer_rects(layout, H, W)):
        owner[rect.slices()] = i
    return owner


def binary_mask(layer: Layer, H: int, W: int) -> np.ndarray:
    rect = discretize(layer.bbox, H, W)
    m = np.zeros((H, W))
    m[rect.slices()] = 1.0
    return m


def text_mask(layout: Layout, H: int, W: int) -> np.ndarray:
    m = np.zeros((H, W))
    for layer in layout.text_layers:
        m = np.maximum(m, binary_mask(layer, H, W))
    return m


def compose_guidance_map(layout: Layout, spec: GuidanceSpec, H: int, W: int,
                         mode: str = "overwrite") -> np.ndarray:
    if len(spec.gammas) != len(layout.layers):
        raise ConfigurationError(f"{len(spec.gammas)} guidance scalars for {len(layout.layers)} layers")
    if mode == "sum":
        return sum((g * binary_mask(l, H, W) for g, l in zip(spec.gammas, layout.layers)), np.zeros((H, W)))
    pieces = []
    for g, rect in zip(spec.gammas, layer_rects(layout, H, W)):
        pieces.append((np.full((rect.height, rect.width), g), rect))
    return combine(pieces, H, W, mode)


# ---------------------------------------------------------------- manifests

def layout_to_dict(layout: Layout) -> dict:
    layers = []
    for l in layout.layers:
        d = {"index": l.index, "kind": l.kind.value, "bbox": l.bbox.as_list(), "prompt": l.prompt}
        if l.is_text:
            d["text"] = l.text_content
            d["lang"] = l.language
        if l.style_trigger is not None:
            d["style"] = l.style_trigger
        layers.append(d)
    return {"canvas": [layout.canvas_width, layout.canvas_height], "layers": layers}


def dumps_manifest(layout: Layout) -> str:
    return json.dumps(layout_to_dict(layout), ensure_ascii=False, indent=2) + "\n"


def layout_from_dict(doc) -> Layout:
    if not isinstance(doc, dict) or "canvas" not in doc or "layers" not in doc:
        raise ManifestParseError("manifest must be an object with 'canvas' and 'layers'")
    try:
        cw, ch = (int(v) for v in doc["canvas"])
    except (TypeError, ValueError):
        raise ManifestParseError(f"canvas must be [W, H], got {doc['canvas']!r}") from None
    if not isinstance(doc["layers"], list):
        raise ManifestParseError("'layers' must be a list")
    layers = []
    for pos, d in enumerate(doc["layers"]):
        if not isinstance(d, dict):
            raise ManifestParseError(f"layer entry {pos} is not an object")
        idx = d.get("index", pos)
        try:
            kind = LayerKind(d.get("kind"))
        except ValueError:
            raise ManifestParseError(f"layer {idx}: unknown kind {d.get('kind')!r}") from None
        try:
            x1, y1, x2, y2 = (float(v) for v in d["bbox"])
            prompt = d["prompt"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestParseError(f"layer {idx}: malformed entry ({exc})") from None
        try:
            bbox = NormalizedBBox(x1, y1, x2, y2)
        except ValidationError as exc:
            raise ValidationError(f"layer {idx}: {exc}") from None
        layers.append(Layer(int(idx), kind, bbox, str(prompt), d.get("text", ""),
                            d.get("lang", ""), d.get("style")))
    layers.sort(key=lambda l: l.index)
    return Layout(cw, ch, tuple(layers))


def loads_manifest(text: str) -> Layout:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        lines = text.splitlines()
        context = lines[exc.lineno - 1] if 0 < exc.lineno <= len(lines) else ""
        raise ManifestParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}: {context.strip()!r}") from None
    return layout_from_dict(doc)


def load_manifest(path) -> Layout:
    return loads_manifest(Path(path).read_text(encoding="utf-8"))


def save_manifest(layout: Layout, path) -> None:
    Path(path).write_text(dumps_manifest(layout), encoding="utf-8")


# ---------------------------------------------------------------- statistics

@dataclass
class Stats:
    text_layers: list[int]
    nontext_layers: list[int]
    total_layers: list[int]
    chars_per_text_layer: list[int]
    medians: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "count": len(self.total_layers),
            "text_layers": self.text_layers,
            "nontext_layers": self.nontext_layers,
            "total_layers": self.total_layers,
            "chars_per_text_layer": self.chars_per_text_layer,
            "medians": self.medians,
        }


def layout_stats(layouts: Iterable[Layout]) -> Stats:
    """Per-layout layer counts and character counts with their medians.

    The background counts as a non-text layer.
    """
    layouts = list(layouts)
    if not layouts:
        raise EmptyInputError("layout_stats needs at least one layout")
    text = [len(l.text_layers) for l in layouts]
    nontext = [len(l.layers) - len(l.text_layers) for l in layouts]
    total = [len(l.layers) for l in layouts]
    chars = [len(t.text_content) for l in layouts for t in l.text_layers]
    medians = {
        "text_layers": float(statistics.median(text)),
        "nontext_layers": float(statistics.median(nontext)),
        "total_layers": float(statistics.median(total)),
    }
    if chars:
        medians["chars_per_text_layer"] = float(statistics.median(chars))
    return Stats(text, nontext, total, chars, medians)
