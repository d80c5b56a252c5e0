from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import settings

from layoutgen.layout import Layer, LayerKind, Layout, NormalizedBBox

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

# acceptance criterion number -> (title, passed, detail)
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@contextmanager
def criterion(number: int, title: str):
    """Record a pass/fail line for one acceptance criterion; failures still propagate."""
    detail = {"text": ""}
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE[number] = (title, False, f"{detail['text']} {type(exc).__name__}: {exc}".strip())
        print(f"[criterion {number:2d}] FAIL {title}: {ACCEPTANCE[number][2]}")
        raise
    ACCEPTANCE[number] = (title, True, detail["text"])
    print(f"[criterion {number:2d}] PASS {title}: {detail['text']}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail}")


def grid_bbox(r0, r1, c0, c1, H, W):
    return NormalizedBBox(c0 / W, r0 / H, c1 / W, r1 / H)


def make_layout(rects, H, W, kinds=None, prompts=None, canvas=None):
    """Layout from grid rects (r0, r1, c0, c1) on an H x W grid; background added first."""
    cw, ch = canvas or (W * 32, H * 32)
    layers = [Layer(0, LayerKind.BACKGROUND, NormalizedBBox.full(), prompts[0] if prompts else "solid white background")]
    for i, rect in enumerate(rects, start=1):
        kind = kinds[i - 1] if kinds else LayerKind.NONTEXT
        prompt = prompts[i] if prompts else f"layer number {i}"
        text = f"T{i}" if kind is LayerKind.TEXT else ""
        layers.append(Layer(i, kind, grid_bbox(*rect, H, W), prompt, text, "en" if text else ""))
    return Layout(cw, ch, tuple(layers))


def random_disjoint_rects(rng: np.random.Generator, H, W, n, max_tries=200):
    rects, taken = [], np.zeros((H, W), bool)
    for _ in range(max_tries):
        if len(rects) == n:
            break
        h = rng.integers(1, min(H, max(2, H // 2)) + 1)
        w = rng.integers(1, min(W, max(2, W // 2)) + 1)
        r0, c0 = rng.integers(0, H - h + 1), rng.integers(0, W - w + 1)
        if not taken[r0:r0 + h, c0:c0 + w].any():
            taken[r0:r0 + h, c0:c0 + w] = True
            rects.append((int(r0), int(r0 + h), int(c0), int(c0 + w)))
    return rects


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


def disc_rgba(h, w, color=(255, 0, 0), radius=0.35):
    """Opaque disc of ``color`` centred on an alpha-0 field."""
    yy, xx = np.mgrid[0:h, 0:w]
    m = ((yy - (h - 1) / 2) / (radius * h)) ** 2 + ((xx - (w - 1) / 2) / (radius * w)) ** 2 <= 1.0
    a = np.zeros((h, w, 4), np.uint8)
    a[m, :3] = color
    a[m, 3] = 255
    return a


def solid_rgba(h, w, color, alpha=255):
    a = np.empty((h, w, 4), np.uint8)
    a[..., :3] = color
    a[..., 3] = alpha
    return a


def icon_template(name="tpl"):
    """Three-layer template: solid white background, a half-transparent banner, a centred red icon."""
    from layoutgen.data_engine.compose import Template

    bg = Layer(0, LayerKind.BACKGROUND, NormalizedBBox.full(), "solid white background")
    banner = Layer(1, LayerKind.NONTEXT, NormalizedBBox(0.0, 0.0, 1.0, 0.25), "a blue banner")
    icon = Layer(2, LayerKind.NONTEXT, NormalizedBBox(0.375, 0.375, 0.625, 0.625), "a red circle icon")
    lay = Layout(64, 64, (bg, banner, icon))
    bitmaps = (solid_rgba(64, 64, (255, 255, 255)), solid_rgba(16, 64, (0, 0, 255), alpha=128),
               disc_rgba(16, 16))
    return Template(lay, bitmaps, name)
