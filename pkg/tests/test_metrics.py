import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgpath.kg import Triple
from kgpath.metrics import (
    EvalReport, filtered_rank, metrics_from_ranks, raw_rank, relation_cardinality, relation_type_report,
)
from kgpath.search import RankedPrediction


def _preds(entities):
    return [RankedPrediction(e, [0], -float(i), i + 1) for i, e in enumerate(entities)]


class TestRanks:
    def test_hand_ranking_fixture(self):
        # answers at filtered ranks 1, 2 and 6
        rows = [(_preds([5, 6, 7]), 5, set()),
                (_preds([9, 3, 4, 8]), 4, {3}),
                (_preds([1, 2, 3, 4, 5, 6, 7, 8]), 7, {7, 2})]
        ranks = [filtered_rank(p, a, k) for p, a, k in rows]
        assert ranks == [1, 2, 6]
        report = metrics_from_ranks(ranks)
        assert report.mrr == (1 + 1 / 2 + 1 / 6) / 3
        assert report.hits_at == {1: 1 / 3, 3: 2 / 3, 10: 1.0}

    def test_unreached_scores_zero(self):
        assert filtered_rank(_preds([1, 2]), 3) is None
        report = metrics_from_ranks([1, None])
        assert report.mrr == 0.5 and report.hits_at[10] == 0.5

    def test_perfect_predictor(self):
        report = metrics_from_ranks([1] * 7)
        assert report.mrr == 1.0 and all(v == 1.0 for v in report.hits_at.values())

    @given(st.lists(st.integers(0, 30), min_size=1, max_size=20, unique=True), st.data())
    def test_filtered_never_worse_than_raw(self, entities, data):
        answer = data.draw(st.sampled_from(entities))
        known = set(data.draw(st.lists(st.sampled_from(entities), max_size=10)))
        preds = _preds(entities)
        assert filtered_rank(preds, answer, known) <= raw_rank(preds, answer)

    @given(st.lists(st.one_of(st.none(), st.integers(1, 50)), min_size=1, max_size=40))
    def test_metric_sanity(self, ranks):
        r = metrics_from_ranks(ranks)
        assert 0 <= r.hits_at[1] <= r.hits_at[3] <= r.hits_at[10] <= 1
        assert r.hits_at[1] <= r.mrr <= 1
        shuffled = metrics_from_ranks(list(reversed(ranks)))
        assert shuffled.mrr == pytest.approx(r.mrr, abs=1e-15) and shuffled.hits_at == r.hits_at


class TestReportJson:
    def test_fixed_key_order(self):
        report = metrics_from_ranks([1, 2])
        report.relation_types = {"to-1": {}}
        keys = list(json.loads(report.to_json()))
        assert keys == ["num_queries", "mrr", "hits@1", "hits@3", "hits@10", "relation_types"]

    def test_empty(self):
        assert metrics_from_ranks([]).num_queries == 0


class TestRelationTypes:
    def test_cardinality(self):
        triples = [Triple(0, 0, 1), Triple(1, 0, 2), Triple(0, 1, 1), Triple(0, 1, 2), Triple(0, 1, 3)]
        assert relation_cardinality(triples) == {0: 1.0, 1: 3.0}

    def test_classes_and_percentages(self):
        card = {0: 1.0, 1: 3.0, 2: 1.5}
        test = [Triple(0, 0, 1), Triple(0, 1, 1), Triple(0, 2, 1), Triple(0, 7, 1)]
        rep = relation_type_report(test, card, [1, 2, None, 4])
        assert rep["to-Many"]["count"] == 1 and rep["to-1"]["count"] == 3
        assert rep["to-Many"]["percent"] + rep["to-1"]["percent"] == pytest.approx(100.0)
        assert rep["to-Many"]["mrr"] == 0.5
        assert rep["to-1"]["mrr"] == pytest.approx((1 + 0 + 0.25) / 3)
        assert rep["unseen_relations"] == [7]
