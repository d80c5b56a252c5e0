import json
import statistics

import numpy as np
import pytest
from hypothesis import given, strategies as st

from layoutgen.errors import (ConfigurationError, CoverageError, EmptyInputError, GeometryError,
                              ManifestParseError, ValidationError)
from layoutgen.layout import (GuidanceSpec, Layer, LayerKind, Layout, NormalizedBBox, PixelRect, combine,
                              compose_guidance_map, crop, discretize, dumps_manifest, layout_stats,
                              loads_manifest, owner_map, paste, text_mask)

from conftest import make_layout


def test_bbox_validation():
    with pytest.raises(ValidationError):
        NormalizedBBox(0.5, 0.0, 0.5, 1.0)
    with pytest.raises(ValidationError):
        NormalizedBBox(0.0, 0.0, 1.1, 1.0)


def test_layer_and_layout_invariants():
    with pytest.raises(ValidationError):
        Layer(1, LayerKind.TEXT, NormalizedBBox.full(), "p")  # no text content
    with pytest.raises(ValidationError):
        Layer(1, LayerKind.NONTEXT, NormalizedBBox.full(), "p", "oops")
    with pytest.raises(ValidationError):
        Layer(0, LayerKind.BACKGROUND, NormalizedBBox(0, 0, 0.5, 0.5), "p")
    bg = Layer(0, LayerKind.BACKGROUND, NormalizedBBox.full(), "bg")
    obj = Layer(1, LayerKind.NONTEXT, NormalizedBBox(0, 0, 0.5, 0.5), "x")
    with pytest.raises(ValidationError):
        Layout(64, 64, (obj, bg))
    with pytest.raises(ValidationError):
        Layout(64, 64, ())
    lay = Layout(64, 32, (bg, obj))
    assert lay.latent_grid() == (1, 2)


def test_discretize_examples():
    assert discretize(NormalizedBBox.full(), 4, 8) == PixelRect(0, 4, 0, 8)
    # outward rounding
    assert discretize(NormalizedBBox(0.1, 0.1, 0.3, 0.3), 10, 10) == PixelRect(1, 3, 1, 3)
    assert discretize(NormalizedBBox(0.11, 0.11, 0.29, 0.29), 10, 10) == PixelRect(1, 3, 1, 3)
    # sliver still covers one cell
    assert discretize(NormalizedBBox(0.5, 0.5, 0.5001, 0.5001), 4, 4).area == 1


@given(st.floats(0, 0.98), st.floats(0, 0.98), st.floats(0.01, 1), st.floats(0.01, 1),
       st.integers(1, 20), st.integers(1, 20))
def test_discretize_contains_bbox(x1, y1, dx, dy, H, W):
    x2, y2 = min(1.0, x1 + dx), min(1.0, y1 + dy)
    r = discretize(NormalizedBBox(x1, y1, x2, y2), H, W)
    r.check_within(H, W)
    assert r.area >= 1
    assert r.r0 <= y1 * H + 1e-9 or r.r0 == H - 1
    assert r.r1 >= y2 * H - 1e-9
    assert r.c1 >= x2 * W - 1e-9


def test_crop_paste_roundtrip(np_rng):
    f = np_rng.normal(size=(5, 6, 2))
    rect = PixelRect(1, 4, 2, 5)
    z = crop(f, rect)
    out = paste(z, rect, 5, 6)
    assert np.array_equal(out[1:4, 2:5], f[1:4, 2:5])
    assert out.sum() == pytest.approx(f[1:4, 2:5].sum())
    with pytest.raises(GeometryError):
        paste(z, PixelRect(0, 2, 0, 2), 5, 6)
    with pytest.raises(GeometryError):
        crop(f, PixelRect(0, 9, 0, 2))


def test_combine_overwrite_and_sum():
    a = (np.full((2, 2), 1.0), PixelRect(0, 2, 0, 2))
    b = (np.full((1, 1), 5.0), PixelRect(1, 2, 1, 2))
    ow = combine([a, b], 2, 2)
    assert ow.tolist() == [[1, 1], [1, 5]]
    sm = combine([a, b], 2, 2, "sum")
    assert sm.tolist() == [[1, 1], [1, 6]]
    with pytest.raises(CoverageError):
        combine([b], 2, 2)
    with pytest.raises(ConfigurationError):
        combine([a], 2, 2, "max")
    with pytest.raises(EmptyInputError):
        combine([], 2, 2)


def test_owner_map_and_text_mask():
    lay = make_layout([(0, 2, 0, 2), (1, 3, 1, 3)], 4, 4, kinds=[LayerKind.NONTEXT, LayerKind.TEXT])
    own = owner_map(lay, 4, 4)
    assert own[0, 0] == 1 and own[1, 1] == 2 and own[3, 3] == 0
    assert text_mask(lay, 4, 4).sum() == 4


def test_guidance_map_overwrite_and_sum():
    lay = make_layout([(0, 2, 0, 2), (1, 3, 1, 3)], 4, 4)
    spec = GuidanceSpec((1.0, 2.0, 3.0))
    g = compose_guidance_map(lay, spec, 4, 4)
    assert g[0, 0] == 2.0 and g[1, 1] == 3.0 and g[3, 0] == 1.0
    s = compose_guidance_map(lay, spec, 4, 4, "sum")
    assert s[1, 1] == 6.0 and s[0, 0] == 3.0 and s[3, 3] == 1.0
    with pytest.raises(ConfigurationError):
        compose_guidance_map(lay, GuidanceSpec((1.0,)), 4, 4)


def test_guidance_spec_validation_and_overrides():
    with pytest.raises(ConfigurationError):
        GuidanceSpec((-1.0,))
    with pytest.raises(ConfigurationError):
        GuidanceSpec((1.0,), alpha=1.5)
    spec = GuidanceSpec.from_overrides(4, {2: 1.5}, global_scale=7.0)
    assert spec.gammas == (7.0, 7.0, 1.5, 7.0)
    with pytest.raises(ConfigurationError):
        GuidanceSpec.from_overrides(3, {3: 1.0})
    assert GuidanceSpec.uniform(2, 3.0).global_scale == 3.0


def test_manifest_roundtrip_and_errors():
    lay = make_layout([(0, 2, 0, 2), (1, 3, 1, 3)], 4, 4, kinds=[LayerKind.NONTEXT, LayerKind.TEXT])
    text = dumps_manifest(lay)
    assert loads_manifest(text) == lay
    assert dumps_manifest(loads_manifest(text)) == text
    with pytest.raises(ManifestParseError, match="line 1"):
        loads_manifest("{not json")
    with pytest.raises(ManifestParseError):
        loads_manifest(json.dumps({"canvas": [4, 4]}))
    doc = json.loads(text)
    doc["layers"][1]["kind"] = "sticker"
    with pytest.raises(ManifestParseError, match="sticker"):
        loads_manifest(json.dumps(doc))


def test_layout_stats_medians_match_sort_oracle(np_rng):
    lays = []
    for n in [1, 3, 2, 5, 4]:
        kinds = [LayerKind.TEXT if i % 2 else LayerKind.NONTEXT for i in range(n)]
        lays.append(make_layout([(0, 1, 0, 1)] * n, 4, 4, kinds=kinds))
    st_ = layout_stats(lays)
    totals = sorted(len(l.layers) for l in lays)
    assert st_.medians["total_layers"] == totals[len(totals) // 2]
    assert st_.medians["text_layers"] == statistics.median(len(l.text_layers) for l in lays)
    assert st_.to_dict()["count"] == 5
    with pytest.raises(EmptyInputError):
        layout_stats([])
