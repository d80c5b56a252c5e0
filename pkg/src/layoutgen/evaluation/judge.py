"""Judge providers for the classify / caption / score pipeline.

The stub compares palette colors between a layer's prompt and its crop, so
the whole pipeline runs offline and deterministically.  The remote provider
speaks a small JSON protocol over HTTP.
"""
from __future__ import annotations

import base64
import io
import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from PIL import Image

from ..errors import ConfigurationError, JudgeTransportError, ValidationError

ELEMENT_TYPES = ("block", "object")
BLOCK_WORDS = ("background", "block", "banner", "frame", "ribbon", "panel", "bar", "card")


@dataclass(frozen=True)
class LayerContext:
    index: int
    caption: str
    bbox: list[float]
    occluders: list[int]
    element_type: str | None = None
    description: str | None = None


class JudgeProvider(Protocol):
    def classify(self, layer: LayerContext) -> str: ...

    def caption(self, crop: np.ndarray, layer: LayerContext) -> str: ...

    def score(self, global_caption: str, image: np.ndarray, annotated: np.ndarray,
              layer: LayerContext) -> tuple[int, str]: ...


def png_b64(rgba: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(rgba, dtype=np.uint8), "RGBA").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def check_score(score) -> int:
    if isinstance(score, bool) or not isinstance(score, (int, float)) or score != int(score) or not 0 <= score <= 10:
        raise ValidationError(f"judge score must be an integer in [0, 10], got {score!r}")
    return int(score)


class StubJudge:
    """Deterministic offline judge.

    ``classify`` keys on shape words, ``caption`` names the majority palette
    color of the visible crop, and ``score`` gives 10 when that color matches
    the prompt's color, 2 when it differs and 0 for a fully hidden layer.
    ``fixed`` maps layer index to a forced score.
    """

    def __init__(self, fixed: dict[int, int] | None = None):
        self.fixed = {k: check_score(v) for k, v in (fixed or {}).items()}

    def classify(self, layer: LayerContext) -> str:
        words = layer.caption.lower().split()
        return "block" if any(w in BLOCK_WORDS for w in words) else "object"

    def caption(self, crop: np.ndarray, layer: LayerContext) -> str:
        from ..data_engine.synth import COLOR_NAMES, classify_rgb

        visible = crop[..., 3] > 0
        if not visible.any():
            return "nothing visible"
        cls = classify_rgb(crop[visible][:, :3].astype(np.float64) / 255.0)
        color = COLOR_NAMES[int(np.bincount(cls, minlength=len(COLOR_NAMES)).argmax())]
        return f"a mostly {color} {layer.element_type or 'object'}"

    def score(self, global_caption, image, annotated, layer: LayerContext) -> tuple[int, str]:
        from ..data_engine.synth import color_of_prompt

        if layer.index in self.fixed:
            return self.fixed[layer.index], "fixed score"
        want = color_of_prompt(layer.caption)
        got = color_of_prompt(layer.description or "")
        if got is None:
            return 0, "layer not visible"
        if want is None or want == got:
            return 10, f"{got} region matches the prompt"
        return 2, f"expected {want}, saw {got}"


class RemoteJudge:
    """HTTP judge; one POST per request kind, JSON in and out."""

    def __init__(self, endpoint: str, token: str | None = None, timeout: float = 30.0):
        if not endpoint:
            raise ConfigurationError("remote judge needs an endpoint URL")
        self.endpoint, self.token, self.timeout = endpoint, token, timeout

    @classmethod
    def from_env(cls, timeout: float = 30.0) -> "RemoteJudge":
        endpoint = os.environ.get("JUDGE_ENDPOINT", "")
        if not endpoint:
            raise ConfigurationError("JUDGE_ENDPOINT is not set")
        return cls(endpoint, os.environ.get("JUDGE_TOKEN"), timeout)

    def _post(self, record: dict) -> dict:
        data = json.dumps(record, sort_keys=True).encode("utf-8")
        req = urllib.request.Request(self.endpoint, data=data, method="POST",
                                     headers={"Content-Type": "application/json"})
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except (urllib.error.URLError, OSError) as exc:
            raise JudgeTransportError(f"judge request failed: {exc}") from None
        try:
            out = json.loads(body)
        except json.JSONDecodeError:
            raise JudgeTransportError("judge returned non-JSON body") from None
        if not isinstance(out, dict):
            raise JudgeTransportError("judge response is not an object")
        return out

    @staticmethod
    def _layer(layer: LayerContext) -> dict:
        d = {"index": layer.index, "caption": layer.caption, "bbox": layer.bbox, "occluders": layer.occluders}
        if layer.element_type is not None:
            d["element_type"] = layer.element_type
        if layer.description is not None:
            d["description"] = layer.description
        return d

    def classify(self, layer: LayerContext) -> str:
        out = self._post({"kind": "classify", "images": [], "layers": [self._layer(layer)]})
        kind = out.get("element_type")
        if kind not in ELEMENT_TYPES:
            raise JudgeTransportError(f"bad element_type {kind!r}")
        return kind

    def caption(self, crop: np.ndarray, layer: LayerContext) -> str:
        out = self._post({"kind": "caption", "images": [png_b64(crop)], "layers": [self._layer(layer)]})
        if not isinstance(out.get("description"), str):
            raise JudgeTransportError("caption response lacks a description")
        return out["description"]

    def score(self, global_caption, image, annotated, layer: LayerContext) -> tuple[int, str]:
        out = self._post({"kind": "score", "global_caption": global_caption,
                          "images": [png_b64(image), png_b64(annotated)], "layers": [self._layer(layer)]})
        try:
            return check_score(out.get("score")), str(out.get("reason", ""))
        except ValidationError as exc:
            raise JudgeTransportError(str(exc)) from None
