"""Synthetic knowledge graphs with planted two-hop composition rules."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import InductiveSplit, Triple, Vocab, parse_triples


@dataclass(frozen=True)
class Rule:
    """body_1(x, y) and body_2(y, z) imply head(x, z); all fields are relation ids."""

    body_1: int
    body_2: int
    head: int


@dataclass
class SyntheticKG:
    triples: list[Triple]
    vocab: Vocab
    rules: list[Rule]

    @property
    def num_entities(self) -> int:
        return self.vocab.num_entities

    @property
    def num_relations(self) -> int:
        return self.vocab.num_relations

    def rule_for(self, rel: int) -> Rule | None:
        return next((r for r in self.rules if r.head == rel), None)

    def rule_queries(self, split: InductiveSplit) -> list[Triple]:
        """Test triples with a rule head whose body is present in train + aux."""
        facts = set(split.train) | set(split.aux)
        out = []
        for h, r, t in split.test:
            rule = self.rule_for(r)
            if rule is None:
                continue
            mids = {y for (a, b, y) in facts if a == h and b == rule.body_1}
            if any((y, rule.body_2, t) in facts for y in mids):
                out.append(Triple(h, r, t))
        return out

    def path_follows_rule(self, path, rel: int, self_loop: int) -> bool:
        """True if the hops (self-loops removed) are exactly the rule body for ``rel``."""
        rule = self.rule_for(rel)
        hops = [r for r in path[1::2] if r != self_loop]
        return rule is not None and hops == [rule.body_1, rule.body_2]


# team attribute -> (derived athlete relation, value label prefix, value of team i)
# Values are shared across teams so that no attribute value identifies a team,
# and teams sharing one attribute value differ in every other attribute.
TEAM_ATTRIBUTES = {
    "plays_in_league": ("athlete_league", "league", lambda i: i % 2),
    "team_city": ("athlete_city", "city", lambda i: i % 3),
    "home_stadium": ("athlete_stadium", "stadium", lambda i: (i // 2) % 3),
}


def sports_kg(seed: int = 0, teams: int = 6, athletes: int = 46, acquaintances: int = 1,
              derived_fraction: float = 0.5) -> SyntheticKG:
    """Athletes, teams and team attributes with one composition rule per attribute.

    plays_for(x, y) and home_stadium(y, z) => athlete_stadium(x, z), and
    likewise for every entry of ``TEAM_ATTRIBUTES``.  ``knows`` edges between
    random athletes act as distractors.  Each derived fact is stored with
    probability ``derived_fraction``, so copying a teammate's fact is
    unreliable while the rule body always holds.  The default sizes give 60
    entities.
    """
    rng = np.random.default_rng(seed)
    lines = []
    team = [f"team{i}" for i in range(teams)]
    attrs: dict[str, dict[str, str]] = {t: {} for t in team}
    for body, (_, prefix, value) in TEAM_ATTRIBUTES.items():
        for i, t in enumerate(team):
            attrs[t][body] = f"{prefix}{value(i)}"
            lines.append((t, body, attrs[t][body]))
    persons = [f"athlete{i}" for i in range(athletes)]
    for i, p in enumerate(persons):
        t = team[i % teams]
        lines.append((p, "plays_for", t))
        for body, (head, _, _) in TEAM_ATTRIBUTES.items():
            if rng.random() < derived_fraction:
                lines.append((p, head, attrs[t][body]))
    for i, p in enumerate(persons):
        for _ in range(acquaintances):
            j = int(rng.integers(len(persons) - 1))
            j += j >= i
            lines.append((p, "knows", persons[j]))
    order = rng.permutation(len(lines))
    vocab = Vocab()
    triples = parse_triples(("\t".join(lines[i]) for i in order), vocab)
    triples = list(dict.fromkeys(triples))
    rel = vocab.relations
    rules = [Rule(rel["plays_for"], rel[body], rel[head]) for body, (head, _, _) in TEAM_ATTRIBUTES.items()
             if head in rel]
    return SyntheticKG(triples, vocab, rules)


def random_kg(num_entities: int, num_relations: int, num_triples: int, seed: int = 0,
              zipf: float | None = None) -> tuple[list[Triple], int, int]:
    """Random multi-relational graph; ``zipf`` skews endpoint choice towards hubs."""
    rng = np.random.default_rng(seed)
    if zipf is None:
        p = None
    else:
        w = 1.0 / np.arange(1, num_entities + 1) ** zipf
        p = w[rng.permutation(num_entities)]
        p /= p.sum()
    arr = np.empty((0, 3), dtype=np.int64)
    # duplicates and self-edges are dropped, so draw until the requested count is reached
    while len(arr) < num_triples:
        n = int((num_triples - len(arr)) * 1.1) + 8
        h = rng.choice(num_entities, size=n, p=p)
        t = rng.choice(num_entities, size=n, p=p)
        r = rng.integers(num_relations, size=n)
        fresh = np.stack([h, r, t], axis=1)[h != t]
        arr = np.unique(np.concatenate([arr, fresh]), axis=0)
    arr = arr[rng.permutation(len(arr))[:num_triples]]
    return [Triple(int(a), int(b), int(c)) for a, b, c in arr], num_entities, num_relations


# relation name -> (kind, share of triples); shares follow the WN18RR relation mix
LEXICAL_RELATIONS = {
    "hypernym": ("tree", 0.40),
    "derivationally_related_form": ("symmetric", 0.34),
    "member_meronym": ("skewed", 0.08),
    "has_part": ("skewed", 0.05),
    "synset_domain_topic_of": ("skewed", 0.04),
    "instance_hypernym": ("skewed", 0.03),
    "also_see": ("symmetric", 0.015),
    "verb_group": ("symmetric", 0.015),
    "member_of_domain_region": ("skewed", 0.01),
    "member_of_domain_usage": ("skewed", 0.01),
    "similar_to": ("symmetric", 0.01),
}


def lexical_kg(num_entities: int, num_triples: int, seed: int = 0) -> tuple[list[Triple], Vocab]:
    """WordNet-shaped graph: a hypernym forest, symmetric lexical links and hub-skewed relations."""
    rng = np.random.default_rng(seed)
    vocab = Vocab()
    for i in range(num_entities):
        vocab.entity_id(f"synset{i:05d}")
    for name in LEXICAL_RELATIONS:
        vocab.relation_id(name)
    hubs = 1.0 / np.arange(1, num_entities + 1) ** 1.1
    hubs = hubs[rng.permutation(num_entities)]
    hubs /= hubs.sum()
    out: set[Triple] = set()
    for name, (kind, share) in LEXICAL_RELATIONS.items():
        r = vocab.relations[name]
        n = max(1, int(round(share * num_triples)))
        if kind == "tree":
            # parents have smaller ids so the hypernym graph is acyclic
            children = rng.choice(np.arange(1, num_entities), size=min(n, num_entities - 1), replace=False)
            for c in children:
                parent = int(rng.integers(max(1, c // 4))) if c > 1 else 0
                out.add(Triple(int(c), r, parent))
        elif kind == "symmetric":
            for _ in range(n // 2):
                a, b = rng.choice(num_entities, size=2, replace=False)
                out.add(Triple(int(a), r, int(b)))
                out.add(Triple(int(b), r, int(a)))
        else:
            heads = rng.choice(num_entities, size=n, p=hubs)
            tails = rng.choice(num_entities, size=n)
            out.update(Triple(int(h), r, int(t)) for h, t in zip(heads, tails) if h != t)
    triples = sorted(out)
    order = rng.permutation(len(triples))
    return [triples[i] for i in order], vocab


# Published entity / relation / triple counts used for same-size stand-ins.
BENCHMARK_SIZES = {"fb15k-237": (14_541, 237, 310_116), "wn18rr": (40_943, 11, 93_003)}
