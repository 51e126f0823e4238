"""Render decoded paths as readable explanations."""

from __future__ import annotations

from typing import Sequence

from .kg import RelationSpace
from .search import RankedPrediction


def render_path(path: Sequence[int], relations: RelationSpace, entity_labels: Sequence[str] | None = None,
                relation_labels: Sequence[str] | None = None) -> str:
    """``a —r→ b ←s— c``: inverse hops point left and use the base label; self-loops are dropped."""

    def ent(e):
        return entity_labels[e] if entity_labels is not None else str(e)

    def rel(r):
        return relation_labels[r] if relation_labels is not None else str(r)

    parts = [ent(path[0])]
    for r, e in zip(path[1::2], path[2::2]):
        if r == relations.self_loop:
            continue
        if relations.is_inverse(r):
            parts.append(f"←{rel(relations.base_of(r))}—")
        else:
            parts.append(f"—{rel(r)}→")
        parts.append(ent(e))
    return " ".join(parts)


def explain(predictions: Sequence[RankedPrediction], relations: RelationSpace,
            entity_labels: Sequence[str] | None = None, relation_labels: Sequence[str] | None = None,
            top: int = 1) -> str:
    """One rendered line per prediction, best first."""
    lines = [render_path(p.path, relations, entity_labels, relation_labels) for p in predictions[:top]]
    return "\n".join(lines)
