from pathlib import Path

import numpy as np
import pytest

from layoutgen.errors import ConfigurationError, OracleScopeError
from layoutgen.layout import load_manifest
from layoutgen.numeric import Rng
from layoutgen.region_attention import (AttentionWeights, RegionTokens, attention_cost, encode_layout_tokens,
                                        layout_guided_cross_attention, oracle_masked_attention)

from conftest import make_layout

FIXTURE = Path(__file__).resolve().parents[1] / "src" / "layoutgen" / "data" / "fixture_30_layers.json"


def _tokens(layout, rng, d=6, max_t=4):
    return [RegionTokens(i, rng.normal(size=(int(rng.integers(1, max_t + 1)), d))) for i in range(len(layout))]


def test_matches_oracle_small(np_rng):
    lay = make_layout([(0, 2, 0, 3), (3, 5, 2, 6)], 6, 6)
    toks = _tokens(lay, np_rng)
    f = np_rng.normal(size=(6, 6, 5))
    w = AttentionWeights.random(5, 6, 4, Rng(0), n_heads=2)
    out = layout_guided_cross_attention(f, lay, toks, w, group_size=2)
    assert np.abs(out - oracle_masked_attention(f, lay, toks, w)).max() <= 1e-12


def test_group_size_and_order_do_not_matter(np_rng):
    lay = make_layout([(0, 2, 0, 3), (3, 5, 2, 6), (0, 1, 5, 6)], 6, 6)
    toks = _tokens(lay, np_rng)
    f = np_rng.normal(size=(6, 6, 5))
    w = AttentionWeights.random(5, 6, 4, Rng(1))
    ref = layout_guided_cross_attention(f, lay, toks, w)
    for gs, order in [(1, None), (3, [3, 1, 0, 2]), (None, [2, 0, 3, 1])]:
        out = layout_guided_cross_attention(f, lay, toks, w, group_size=gs, order=order)
        assert np.abs(out - ref).max() <= 1e-12


def test_overwrite_vs_sum_on_overlap(np_rng):
    lay = make_layout([(0, 3, 0, 3), (2, 4, 2, 4)], 4, 4)
    toks = _tokens(lay, np_rng)
    f = np_rng.normal(size=(4, 4, 5))
    w = AttentionWeights.random(5, 6, 4, Rng(2))
    ow = layout_guided_cross_attention(f, lay, toks, w, mode="overwrite")
    sm = layout_guided_cross_attention(f, lay, toks, w, mode="sum")
    # cell (2,2) is covered by all three layers
    only_top = layout_guided_cross_attention(f, make_layout([(2, 4, 2, 4)], 4, 4),
                                             [toks[0], RegionTokens(1, toks[2].tokens)], w)
    assert np.allclose(ow[2, 2], only_top[2, 2], atol=1e-12)
    assert not np.allclose(sm[2, 2], ow[2, 2])
    assert np.allclose(sm[3, 0], ow[3, 0])  # background only


def test_oracle_rejects_overlap(np_rng):
    lay = make_layout([(0, 3, 0, 3), (2, 4, 2, 4)], 4, 4)
    with pytest.raises(OracleScopeError):
        oracle_masked_attention(np.zeros((4, 4, 5)), lay, _tokens(lay, np_rng), AttentionWeights.random(5, 6, 4, Rng(0)))


def test_missing_tokens_and_bad_weights(np_rng):
    lay = make_layout([(0, 1, 0, 1)], 2, 2)
    w = AttentionWeights.random(5, 6, 4, Rng(0))
    with pytest.raises(ConfigurationError, match="layer 1"):
        layout_guided_cross_attention(np.zeros((2, 2, 5)), lay, _tokens(lay, np_rng)[:1], w)
    with pytest.raises(ConfigurationError):
        AttentionWeights(np.zeros((5, 4)), np.zeros((6, 3)), np.zeros((6, 4)), np.zeros((4, 5)))
    with pytest.raises(ConfigurationError):
        RegionTokens(0, np.zeros((0, 3)))


def test_attention_cost_hand_computed():
    lay = make_layout([(0, 2, 0, 2)], 4, 4)
    rep = attention_cost(lay, [3, 5], 4, 4)
    assert rep.grouped_pairs == 16 * 3 + 4 * 5
    assert rep.full_pairs == 16 * 8
    assert rep.ratio == pytest.approx(128 / 68)


def test_fixture_layout_cost_and_tokens():
    lay = load_manifest(FIXTURE)
    assert len(lay) == 30
    toks = encode_layout_tokens(lay)
    assert [t.source for t in toks if t.source == "glyph"] == ["glyph"] * len(lay.text_layers)
    assert attention_cost(lay, toks).ratio >= 5
