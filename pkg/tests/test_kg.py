import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgpath.kg import (
    GraphError, InductiveSplit, KnowledgeGraph, ParseError, RelationSpace, Triple, Vocab, build_graph,
    known_answers, load_triples, make_inductive_split, pagerank, pagerank_iterates, parse_triples,
    prune_actions, sample_neighbor_mask,
)
from conftest import random_triples


class TestRelationSpace:
    def test_inverse_offsets(self):
        rs = RelationSpace(5)
        assert rs.inverse(2) == 7
        assert rs.inverse(7) == 2
        assert rs.is_inverse(7) and not rs.is_inverse(2)
        assert rs.base_of(7) == 2

    def test_reserved_ids_follow_inverses(self):
        rs = RelationSpace(5)
        assert (rs.start, rs.self_loop, rs.pad, rs.total) == (10, 11, 12, 13)
        with pytest.raises(GraphError):
            rs.inverse(rs.self_loop)

    @given(st.integers(1, 50), st.data())
    def test_inverse_is_involution(self, n, data):
        rs = RelationSpace(n)
        r = data.draw(st.integers(0, 2 * n - 1))
        assert rs.inverse(rs.inverse(r)) == r


class TestParsing:
    def test_first_encounter_ids(self):
        vocab = Vocab()
        triples = parse_triples(["a\tr\tb", "b\ts\tc", "", "a\tr\tc"], vocab)
        assert triples == [Triple(0, 0, 1), Triple(1, 1, 2), Triple(0, 0, 2)]
        assert vocab.entity_labels() == ["a", "b", "c"]
        assert vocab.relation_labels() == ["r", "s"]

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("a\tr\tb\na\tr\n")
        with pytest.raises(ParseError) as err:
            load_triples(path, Vocab())
        assert err.value.lineno == 2

    def test_vocab_roundtrip(self, tmp_path):
        vocab = Vocab()
        parse_triples(["x y\tlives in\tz"], vocab)
        vocab.save(tmp_path / "vocab.tsv")
        assert Vocab.load(tmp_path / "vocab.tsv") == vocab


class TestGraph:
    def test_inverse_closure(self, small_graph):
        assert small_graph.inverse_closed
        assert small_graph.check_inverse_closure()
        assert small_graph.has_edge(1, 2, 0)  # inverse of (0, 0, 1) with |R| = 2

    def test_adjacency_sorted_and_unique(self):
        g = build_graph([Triple(0, 1, 1), Triple(0, 0, 1), Triple(0, 1, 1)], 2, 2)
        assert g.adjacency[0] == [(0, 1), (1, 1)]

    def test_out_of_bounds(self):
        with pytest.raises(GraphError):
            build_graph([Triple(0, 0, 5)], 3, 1)
        with pytest.raises(GraphError):
            build_graph([Triple(0, 2, 1)], 3, 1)

    def test_neighbors(self, small_graph):
        assert small_graph.neighbors(0) == {1, 3}
        assert small_graph.neighbors(2) == {1, 3, 4}

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_rebuild_from_closed_triples_is_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        g = build_graph(random_triples(rng, 8, 3, 12), 8, 3)
        assert build_graph(g.triples(), 8, 3) == g
        assert g.check_inverse_closure()


class TestInductiveSplit:
    @pytest.fixture
    def triples(self):
        return random_triples(np.random.default_rng(0), 200, 6, 1500)

    def test_membership_rules(self, triples):
        split = make_inductive_split(triples, 200, 6, seed=3)
        split.check()
        assert len(split.unseen) == 20
        assert split.seed == 3

    def test_every_triple_is_placed(self, triples):
        split = make_inductive_split(triples, 200, 6, seed=1)
        placed = set(split.train) | set(split.dev) | set(split.aux)
        unseen = split.unseen
        expected = {t for t in triples if not (t.head in unseen and t.tail in unseen)}
        assert placed == expected
        assert not set(split.train) & set(split.dev)

    def test_dev_fraction(self, triples):
        split = make_inductive_split(triples, 200, 6, dev_fraction=0.05, seed=2)
        n_seen = len(split.train) + len(split.dev)
        assert len(split.dev) == round(0.05 * n_seen)

    def test_deterministic(self, triples):
        a = make_inductive_split(triples, 200, 6, seed=4)
        b = make_inductive_split(triples, 200, 6, seed=4)
        assert a.unseen == b.unseen and a.train == b.train and a.test == b.test

    def test_zero_unseen_is_rejected(self):
        with pytest.raises(ValueError):
            make_inductive_split([Triple(0, 0, 1)], 5, 1, unseen_fraction=0.1)

    def test_isolated_test_heads_are_dropped(self):
        # entity 9 has a single edge; if unseen, its only triple cannot be a test query
        triples = [Triple(i, 0, (i + 1) % 9) for i in range(9)] + [Triple(i, 1, (i + 3) % 9) for i in range(9)]
        triples.append(Triple(9, 0, 0))
        for seed in range(40):
            split = make_inductive_split(triples, 10, 2, unseen_fraction=0.1, seed=seed)
            split.check()
            if 9 in split.unseen:
                assert split.test == [] and split.dropped_test == 1
                break
        else:
            pytest.fail("entity 9 never drawn as unseen")

    def test_save_load_roundtrip(self, tmp_path, triples):
        vocab = Vocab()
        labelled = parse_triples([f"e{h}\tr{r}\te{t}" for h, r, t in triples], vocab)
        split = make_inductive_split(labelled, vocab.num_entities, vocab.num_relations, seed=0)
        split.save(tmp_path, vocab)
        loaded, vocab2 = InductiveSplit.load(tmp_path)
        assert vocab2 == vocab
        for name in ("train", "dev", "test", "aux"):
            assert getattr(loaded, name) == getattr(split, name)
        assert loaded.unseen == split.unseen
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["counts"]["test"] == len(split.test)


def _dense_pagerank(graph: KnowledgeGraph, damping: float, iterations: int) -> np.ndarray:
    n = graph.num_entities
    P = np.zeros((n, n))
    for i, edges in enumerate(graph.adjacency):
        if edges:
            for _, j in edges:
                P[i, j] += 1.0 / len(edges)
        else:
            P[i, :] = 1.0 / n
    x = np.full(n, 1.0 / n)
    for _ in range(iterations):
        x = damping * x @ P + (1 - damping) / n
    return x


class TestPageRank:
    def test_sums_to_one(self, small_graph):
        assert pagerank(small_graph).sum() == pytest.approx(1.0, abs=1e-12)

    def test_star_graph_center_wins(self):
        g = build_graph([Triple(i, 0, 0) for i in range(1, 6)], 6, 1, add_inverse=False)
        scores = pagerank(g)
        assert scores.argmax() == 0
        np.testing.assert_allclose(scores[1:], scores[1])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        g = build_graph(random_triples(rng, 7, 2, 9), 7, 2, add_inverse=bool(seed % 2))
        np.testing.assert_allclose(pagerank(g), _dense_pagerank(g, 0.85, 50), atol=1e-12)

    def test_contracts_by_damping(self, small_graph):
        iterates = list(pagerank_iterates(small_graph))
        assert len(iterates) == 50
        steps = [np.abs(b - a).sum() for a, b in zip(iterates, iterates[1:])]
        for before, after in zip(steps, steps[1:]):
            assert after <= 0.85 * before + 1e-15


class TestPruning:
    def test_top_k_by_score(self):
        g = build_graph([Triple(0, 0, j) for j in range(1, 5)], 5, 1, add_inverse=False)
        scores = np.array([0.0, 0.1, 0.4, 0.2, 0.3])
        pruned = prune_actions(g, scores, 2)
        assert pruned.adjacency[0] == [(0, 2), (0, 4)]

    def test_ties_broken_by_relation_then_entity(self):
        g = build_graph([Triple(0, 1, 1), Triple(0, 0, 2), Triple(0, 0, 1)], 3, 2, add_inverse=False)
        pruned = prune_actions(g, np.ones(3), 2)
        assert pruned.adjacency[0] == [(0, 1), (0, 2)]

    def test_no_pruning_keeps_closure(self, small_graph):
        pruned = prune_actions(small_graph, pagerank(small_graph), 100)
        assert pruned == small_graph and pruned.inverse_closed

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 4))
    def test_degree_bound(self, seed, k):
        rng = np.random.default_rng(seed)
        g = build_graph(random_triples(rng, 6, 2, 12), 6, 2)
        pruned = prune_actions(g, pagerank(g), k)
        for full, cut in zip(g.adjacency, pruned.adjacency):
            assert len(cut) == min(k, len(full))
            assert set(cut) <= set(full)


class TestNeighborMask:
    def test_masks_floor_fraction(self):
        rng = np.random.default_rng(0)
        kept = sample_neighbor_mask(list(range(10)), 0.5, rng)
        assert len(kept) == 5 and len(set(kept)) == 5

    def test_keeps_at_least_one(self):
        assert len(sample_neighbor_mask([7], 0.9, np.random.default_rng(0))) == 1
        assert sample_neighbor_mask([], 0.5, np.random.default_rng(0)) == []

    def test_uniform(self):
        rng = np.random.default_rng(1)
        counts = np.zeros(4)
        for _ in range(4000):
            counts[sample_neighbor_mask([0, 1, 2, 3], 0.5, rng)] += 1
        # each node kept with probability 1/2
        np.testing.assert_allclose(counts / 4000, 0.5, atol=0.03)


def test_known_answers_with_inverses():
    answers = known_answers([Triple(0, 0, 1), Triple(0, 0, 2)], RelationSpace(1))
    assert answers[(0, 0)] == {1, 2}
    assert answers[(1, 1)] == {0}
