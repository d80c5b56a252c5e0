"""Cosine-similarity retrieval with an aspect-ratio gate."""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import ValidationError
from .assets import LayerAsset, LayerDatabase


@dataclass(frozen=True)
class Match:
    asset_id: str
    similarity: float


def aspect_compatible(ar_a: float, ar_b: float, ar_tol: float) -> bool:
    return max(ar_a / ar_b, ar_b / ar_a) <= ar_tol


def retrieve(query: LayerAsset, db: LayerDatabase, k: int = 10, ar_tol: float = 1.5) -> list[Match]:
    """Top-``k`` assets by cosine similarity among aspect-compatible candidates.

    Ties keep id order.  The query's own id never appears in the result.
    """
    if k < 0 or ar_tol < 1.0:
        raise ValidationError(f"need k >= 0 and ar_tol >= 1, got k={k}, ar_tol={ar_tol}")
    ids, emb = db.embedding_matrix()
    if not ids or k == 0:
        return []
    sims = emb @ query.embedding
    keep = [i for i, a in enumerate(ids)
            if a != query.id and aspect_compatible(query.aspect_ratio, db.get(a).aspect_ratio, ar_tol)]
    keep.sort(key=lambda i: -sims[i])  # stable: equal similarities stay in id order
    return [Match(ids[i], float(sims[i])) for i in keep[:k]]
