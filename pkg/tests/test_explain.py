from kgpath.explain import explain, render_path
from kgpath.kg import RelationSpace
from kgpath.search import RankedPrediction

RS = RelationSpace(2)
ENTS = ["alice", "acme", "springfield"]
RELS = ["works_for", "located_in"]


def test_forward_hop():
    assert render_path([0, 0, 1], RS, ENTS, RELS) == "alice —works_for→ acme"


def test_inverse_hop_points_left():
    assert render_path([1, 2, 0], RS, ENTS, RELS) == "acme ←works_for— alice"


def test_self_loops_elided():
    text = render_path([0, 0, 1, RS.self_loop, 1, RS.self_loop, 1], RS, ENTS, RELS)
    assert text == "alice —works_for→ acme"
    assert text.count("→") + text.count("←") < 3


def test_ids_without_labels():
    assert render_path([0, 1, 2], RS) == "0 —1→ 2"


def test_one_line_per_prediction():
    preds = [RankedPrediction(2, [0, 0, 1, 1, 2], -0.1, 1), RankedPrediction(1, [0, 0, 1], -0.5, 2)]
    out = explain(preds, RS, ENTS, RELS, top=2)
    assert out.splitlines() == ["alice —works_for→ acme —located_in→ springfield",
                                "alice —works_for→ acme"]
