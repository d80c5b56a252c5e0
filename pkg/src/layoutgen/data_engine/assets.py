"""Transparent-layer assets, the on-disk layer database and the alpha filter."""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from PIL import Image

from ..errors import AssetNotFoundError, ValidationError
from ..numeric import Rng

STYLES = ("chinese", "comic", "illustration", "minimalism", "none")
EMBED_GRID = 8
EMBED_DIM = EMBED_GRID * EMBED_GRID * 4
INDEX_FILE = "index.json"


def _check_rgba(rgba) -> np.ndarray:
    a = np.asarray(rgba)
    if a.ndim != 3 or a.shape[2] != 4:
        raise ValidationError(f"expected an HxWx4 RGBA bitmap, got shape {a.shape}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ValidationError("bitmap has zero size")
    if a.dtype != np.uint8:
        raise ValidationError(f"expected 8-bit channels, got {a.dtype}")
    return a


def _bin_edges(n: int, bins: int) -> list[tuple[int, int]]:
    edges = np.floor(np.linspace(0, n, bins + 1)).astype(int)
    return [(min(e, n - 1), max(f, min(e, n - 1) + 1)) for e, f in zip(edges[:-1], edges[1:])]


def mean_pool_embedding(rgba) -> np.ndarray:
    """8x8 mean-pooled RGBA, flattened and L2-normalised."""
    a = _check_rgba(rgba).astype(np.float64) / 255.0
    rows, cols = _bin_edges(a.shape[0], EMBED_GRID), _bin_edges(a.shape[1], EMBED_GRID)
    pooled = np.array([[a[r0:r1, c0:c1].mean(axis=(0, 1)) for c0, c1 in cols] for r0, r1 in rows])
    v = pooled.reshape(-1)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        # fully transparent black: no direction to keep, use a fixed unit vector
        return np.full(EMBED_DIM, 1.0 / np.sqrt(EMBED_DIM))
    return v / norm


EmbeddingProvider = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class LayerAsset:
    id: str
    rgba: np.ndarray
    caption: str = ""
    style: str = "none"
    embedding: np.ndarray | None = None

    def __post_init__(self):
        _check_rgba(self.rgba)
        if not self.id or "/" in self.id or "\\" in self.id or self.id.startswith("."):
            raise ValidationError(f"asset id {self.id!r} is not a safe file stem")
        if self.style not in STYLES:
            raise ValidationError(f"unknown style {self.style!r}; expected one of {STYLES}")
        emb = mean_pool_embedding(self.rgba) if self.embedding is None else np.asarray(self.embedding, float)
        if emb.ndim != 1 or abs(np.linalg.norm(emb) - 1.0) > 1e-9:
            raise ValidationError(f"asset {self.id}: embedding must be a unit vector")
        object.__setattr__(self, "embedding", emb)

    @property
    def aspect_ratio(self) -> float:
        return self.rgba.shape[1] / self.rgba.shape[0]


@dataclass
class LayerDatabase:
    assets: dict[str, LayerAsset] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __len__(self):
        return len(self.assets)

    def __contains__(self, asset_id):
        return asset_id in self.assets

    def ids(self) -> list[str]:
        return sorted(self.assets)

    def add(self, asset: LayerAsset) -> None:
        with self._lock:
            if asset.id in self.assets:
                raise ValidationError(f"duplicate asset id {asset.id!r}")
            self.assets[asset.id] = asset

    def extend(self, assets: Iterable[LayerAsset]) -> None:
        for a in assets:
            self.add(a)

    def get(self, asset_id: str) -> LayerAsset:
        try:
            return self.assets[asset_id]
        except KeyError:
            raise AssetNotFoundError(asset_id) from None

    def by_style(self, style: str) -> list[LayerAsset]:
        return [self.assets[k] for k in self.ids() if self.assets[k].style == style]

    def embedding_matrix(self) -> tuple[list[str], np.ndarray]:
        ids = self.ids()
        if not ids:
            return ids, np.zeros((0, EMBED_DIM))
        return ids, np.stack([self.assets[k].embedding for k in ids])

    def save(self, root) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        index = []
        for k in self.ids():
            a = self.assets[k]
            Image.fromarray(a.rgba, "RGBA").save(root / f"{k}.png", format="PNG")
            meta = {"id": k, "caption": a.caption, "style": a.style, "embedding": a.embedding.tolist()}
            (root / f"{k}.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
            index.append(k)
        (root / INDEX_FILE).write_text(json.dumps({"assets": index}, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, root) -> "LayerDatabase":
        root = Path(root)
        index_path = root / INDEX_FILE
        if not index_path.is_file():
            raise ValidationError(f"{root} is not a layer database (missing {INDEX_FILE})")
        db = cls()
        for k in json.loads(index_path.read_text(encoding="utf-8"))["assets"]:
            meta = json.loads((root / f"{k}.json").read_text(encoding="utf-8"))
            with Image.open(root / f"{k}.png") as im:
                rgba = np.asarray(im.convert("RGBA"), dtype=np.uint8).copy()
            db.add(LayerAsset(k, rgba, meta.get("caption", ""), meta.get("style", "none"),
                              np.asarray(meta["embedding"], dtype=np.float64)))
        return db


@dataclass(frozen=True)
class FilterVerdict:
    accept: bool
    reason: str | None = None
    transparent_fraction: float = 0.0
    border_fraction: float = 0.0


OPAQUE_CANVAS = "opaque canvas"
FILLS_CANVAS = "object fills canvas"


def _border_ring(a: np.ndarray) -> np.ndarray:
    if a.shape[0] <= 2 or a.shape[1] <= 2:
        return a.reshape(-1)
    return np.concatenate([a[0], a[-1], a[1:-1, 0], a[1:-1, -1]])


def transparency_filter(rgba, theta_bg: float = 0.15, theta_border: float = 0.60) -> FilterVerdict:
    """Keep bitmaps with enough fully transparent area, most of it around the border."""
    alpha = _check_rgba(rgba)[..., 3]
    bg = float(np.mean(alpha == 0))
    border = float(np.mean(_border_ring(alpha) == 0))
    if bg < theta_bg:
        return FilterVerdict(False, OPAQUE_CANVAS, bg, border)
    if border < theta_border:
        return FilterVerdict(False, FILLS_CANVAS, bg, border)
    return FilterVerdict(True, None, bg, border)


def is_solid(rgba, tol: float = 1e-4) -> bool:
    """Fully opaque with per-channel variance at most ``tol`` (unit-range values)."""
    a = _check_rgba(rgba).astype(np.float64) / 255.0
    return bool(np.all(a[..., 3] == 1.0) and np.all(a[..., :3].reshape(-1, 3).var(axis=0) <= tol))


# ------------------------------------------------------------------ procedural demo assets

def _shape_mask(kind: str, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    if kind == "disc":
        return ((yy - cy) / (0.4 * h)) ** 2 + ((xx - cx) / (0.4 * w)) ** 2 <= 1.0
    if kind == "diamond":
        return np.abs(yy - cy) / (0.42 * h) + np.abs(xx - cx) / (0.42 * w) <= 1.0
    return (np.abs(yy - cy) <= 0.35 * h) & (np.abs(xx - cx) <= 0.35 * w)


def demo_assets(rng: Rng, n_objects: int = 24, n_backgrounds: int = 6) -> list[LayerAsset]:
    """Seeded transparent objects plus solid background swatches."""
    from .synth import PALETTE

    colors = list(PALETTE)
    out = []
    for k in range(n_objects):
        r = rng.fork("object", k)
        kind = r.choice(("disc", "diamond", "square"))
        color = r.choice(colors)
        h = r.integers(24, 97)
        w = max(8, int(round(h * float(r.choice((0.5, 0.75, 1.0, 1.5, 2.0))))))
        rgba = np.zeros((h, w, 4), dtype=np.uint8)
        m = _shape_mask(kind, h, w)
        rgba[m, :3] = np.round(np.asarray(PALETTE[color]) * 255).astype(np.uint8)
        rgba[m, 3] = 255
        out.append(LayerAsset(f"obj{k:03d}", rgba, f"a {color} {kind}", r.choice(STYLES)))
    for k in range(n_backgrounds):
        color = colors[k % len(colors)]
        rgba = np.empty((64, 128, 4), dtype=np.uint8)
        rgba[..., :3] = np.round(np.asarray(PALETTE[color]) * 255).astype(np.uint8)
        rgba[..., 3] = 255
        out.append(LayerAsset(f"bg{k:03d}", rgba, f"solid {color} background"))
    return out
