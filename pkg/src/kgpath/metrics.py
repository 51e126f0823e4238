"""Filtered ranking metrics and relation-cardinality breakdown."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .kg import Triple
from .search import RankedPrediction

HITS_AT = (1, 3, 10)
TO_MANY_THRESHOLD = 1.5


def raw_rank(predictions: Sequence[RankedPrediction], answer: int) -> int | None:
    for p in predictions:
        if p.entity == answer:
            return p.rank
    return None


def filtered_rank(predictions: Sequence[RankedPrediction], answer: int, known: Iterable[int] = ()) -> int | None:
    """Rank of ``answer`` after removing other known answers; None if never reached."""
    skip = set(known) - {answer}
    rank = 0
    for p in predictions:
        if p.entity in skip:
            continue
        rank += 1
        if p.entity == answer:
            return rank
    return None


@dataclass
class EvalReport:
    mrr: float
    hits_at: dict[int, float]
    num_queries: int
    relation_types: dict | None = None
    ranks: list[int | None] = field(default_factory=list, repr=False)
    raw_ranks: list[int | None] = field(default_factory=list, repr=False)
    predictions: list = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        doc = {"num_queries": self.num_queries, "mrr": self.mrr}
        for k in HITS_AT:
            doc[f"hits@{k}"] = self.hits_at[k]
        if self.relation_types is not None:
            doc["relation_types"] = self.relation_types
        return json.dumps(doc, indent=2)


def metrics_from_ranks(ranks: Sequence[int | None], ks: Sequence[int] = HITS_AT) -> EvalReport:
    n = len(ranks)
    if n == 0:
        return EvalReport(0.0, {k: 0.0 for k in ks}, 0, ranks=[])
    rr = [0.0 if r is None else 1.0 / r for r in ranks]
    hits = {k: sum(1 for r in ranks if r is not None and r <= k) / n for k in ks}
    return EvalReport(sum(rr) / n, hits, n, ranks=list(ranks))


def relation_cardinality(triples: Iterable[Triple]) -> dict[int, float]:
    """Mean number of distinct tails per distinct head, per relation."""
    tails: dict[int, dict[int, set]] = defaultdict(lambda: defaultdict(set))
    for h, r, t in triples:
        tails[r][h].add(t)
    return {r: sum(len(s) for s in heads.values()) / len(heads) for r, heads in tails.items()}


def relation_type_report(test: Sequence[Triple], cardinality: dict[int, float],
                         ranks: Sequence[int | None] | None = None) -> dict:
    """Split test triples into to-Many (ratio > 1.5) and to-1 classes.

    Relations missing from ``cardinality`` count as to-1 and are listed under
    ``unseen_relations``.
    """
    groups: dict[str, list[int]] = {"to-Many": [], "to-1": []}
    missing = set()
    for i, (_, r, _) in enumerate(test):
        ratio = cardinality.get(r)
        if ratio is None:
            missing.add(r)
        groups["to-Many" if ratio is not None and ratio > TO_MANY_THRESHOLD else "to-1"].append(i)
    n = max(len(test), 1)
    out = {}
    for name, idx in groups.items():
        entry = {"percent": 100.0 * len(idx) / n, "count": len(idx)}
        if ranks is not None:
            entry["mrr"] = (sum(0.0 if ranks[i] is None else 1.0 / ranks[i] for i in idx) / len(idx)) if idx else 0.0
        out[name] = entry
    out["unseen_relations"] = sorted(missing)
    return out
