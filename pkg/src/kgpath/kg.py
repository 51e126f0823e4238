"""Triple store, inductive splits and PageRank-based action pruning."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    """A triple file line could not be parsed."""

    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = path
        self.lineno = lineno


class GraphError(ValueError):
    pass


class SplitError(RuntimeError):
    pass


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


class RelationSpace:
    """Dense relation ids: base relations, their inverses, then START, SELF_LOOP, PAD."""

    def __init__(self, num_base: int):
        self.num_base = num_base

    def inverse(self, rel: int) -> int:
        if rel < self.num_base:
            return rel + self.num_base
        if rel < 2 * self.num_base:
            return rel - self.num_base
        raise GraphError(f"relation {rel} is reserved and has no inverse")

    def is_inverse(self, rel: int) -> bool:
        return self.num_base <= rel < 2 * self.num_base

    def base_of(self, rel: int) -> int:
        return rel - self.num_base if self.is_inverse(rel) else rel

    @property
    def start(self) -> int:
        return 2 * self.num_base

    @property
    def self_loop(self) -> int:
        return 2 * self.num_base + 1

    @property
    def pad(self) -> int:
        return 2 * self.num_base + 2

    @property
    def total(self) -> int:
        return 2 * self.num_base + 3

    def __eq__(self, other):
        return isinstance(other, RelationSpace) and other.num_base == self.num_base

    def __repr__(self):
        return f"RelationSpace(num_base={self.num_base})"


@dataclass
class Vocab:
    """Label <-> id maps, extended in first-encounter order."""

    entities: dict[str, int] = field(default_factory=dict)
    relations: dict[str, int] = field(default_factory=dict)

    def entity_id(self, label: str) -> int:
        return self.entities.setdefault(label, len(self.entities))

    def relation_id(self, label: str) -> int:
        return self.relations.setdefault(label, len(self.relations))

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def entity_labels(self) -> list[str]:
        labels = [""] * len(self.entities)
        for label, i in self.entities.items():
            labels[i] = label
        return labels

    def relation_labels(self) -> list[str]:
        labels = [""] * len(self.relations)
        for label, i in self.relations.items():
            labels[i] = label
        return labels

    def save(self, path) -> None:
        # kind<TAB>label<TAB>id; one file holds both maps
        with open(path, "w", encoding="utf-8") as f:
            for label, i in self.entities.items():
                f.write(f"E\t{label}\t{i}\n")
            for label, i in self.relations.items():
                f.write(f"R\t{label}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        vocab = cls()
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3 or parts[0] not in ("E", "R"):
                    raise ParseError(path, lineno, "expected kind, label, id")
                table = vocab.entities if parts[0] == "E" else vocab.relations
                table[parts[1]] = int(parts[2])
        return vocab


def parse_triples(lines: Iterable[str], vocab: Vocab, source="<string>") -> list[Triple]:
    triples = []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(source, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
        h, r, t = parts
        triples.append(Triple(vocab.entity_id(h), vocab.relation_id(r), vocab.entity_id(t)))
    return triples


def load_triples(path, vocab: Vocab) -> list[Triple]:
    """Read a head<TAB>relation<TAB>tail file, extending ``vocab`` as labels appear."""
    with open(path, encoding="utf-8") as f:
        return parse_triples(f, vocab, source=path)


def write_triples(path, triples: Iterable[Triple], vocab: Vocab) -> None:
    ents = vocab.entity_labels()
    rels = vocab.relation_labels()
    with open(path, "w", encoding="utf-8") as f:
        for h, r, t in triples:
            f.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")


class KnowledgeGraph:
    """Adjacency-list graph over dense ids.

    ``adjacency[e]`` is a list of ``(relation, neighbor)`` pairs sorted ascending;
    relation ids live in ``self.relations`` (base, inverse and reserved ids).
    """

    def __init__(self, num_entities: int, num_base_relations: int,
                 adjacency: list[list[tuple[int, int]]], inverse_closed: bool):
        self.num_entities = num_entities
        self.num_base_relations = num_base_relations
        self.relations = RelationSpace(num_base_relations)
        self.adjacency = adjacency
        self.inverse_closed = inverse_closed
        self._edge_set = None

    def neighbors(self, entity: int) -> set[int]:
        return {j for _, j in self.adjacency[entity]}

    def has_edge(self, head: int, rel: int, tail: int) -> bool:
        if self._edge_set is None:
            self._edge_set = {(h, r, t) for h, edges in enumerate(self.adjacency) for r, t in edges}
        return (head, rel, tail) in self._edge_set

    def triples(self) -> list[Triple]:
        return [Triple(h, r, t) for h, edges in enumerate(self.adjacency) for r, t in edges]

    @property
    def num_edges(self) -> int:
        return sum(len(a) for a in self.adjacency)

    def check_inverse_closure(self) -> bool:
        rs = self.relations
        return all(self.has_edge(t, rs.inverse(r), h) for h, r, t in self.triples())

    def __eq__(self, other):
        return (isinstance(other, KnowledgeGraph)
                and self.num_entities == other.num_entities
                and self.num_base_relations == other.num_base_relations
                and self.adjacency == other.adjacency)

    def __repr__(self):
        return (f"KnowledgeGraph(entities={self.num_entities}, base_relations={self.num_base_relations}, "
                f"edges={self.num_edges}, inverse_closed={self.inverse_closed})")


def build_graph(triples: Iterable[Triple], num_entities: int, num_base_relations: int,
                add_inverse: bool = True) -> KnowledgeGraph:
    rs = RelationSpace(num_base_relations)
    edges: list[set] = [set() for _ in range(num_entities)]
    for h, r, t in triples:
        if not (0 <= h < num_entities and 0 <= t < num_entities):
            raise GraphError(f"entity id out of bounds in {(h, r, t)} (num_entities={num_entities})")
        # inverse ids are accepted so that an already-closed triple list can be rebuilt
        if not 0 <= r < 2 * num_base_relations:
            raise GraphError(f"relation id out of bounds in {(h, r, t)} (base relations={num_base_relations})")
        edges[h].add((r, t))
        if add_inverse:
            edges[t].add((rs.inverse(r), h))
    adjacency = [sorted(e) for e in edges]
    return KnowledgeGraph(num_entities, num_base_relations, adjacency, inverse_closed=add_inverse)


@dataclass
class InductiveSplit:
    seen: set[int]
    unseen: set[int]
    train: list[Triple]
    dev: list[Triple]
    test: list[Triple]
    aux: list[Triple]
    num_entities: int
    num_base_relations: int
    seed: int | None = None
    unseen_fraction: float | None = None
    dev_fraction: float | None = None
    dropped_test: int = 0

    def check(self) -> None:
        """Raise AssertionError if any membership rule is violated."""
        assert not (self.seen & self.unseen)
        assert self.seen | self.unseen == set(range(self.num_entities))
        unseen = np.zeros(self.num_entities, dtype=bool)
        unseen[list(self.unseen)] = True

        def cols(triples):
            a = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
            return unseen[a[:, 0]], unseen[a[:, 2]]

        h, t = cols(self.train + self.dev)
        assert not (h | t).any()
        h, t = cols(self.test)
        assert h.all() and not t.any()
        h, t = cols(self.aux)
        assert (h ^ t).all()
        assert set(self.test) <= set(self.aux)
        # every test head keeps at least one seen neighbor in aux
        linked = {a if unseen[a] else b for a, _, b in self.aux}
        assert {q for q, _, _ in self.test} <= linked

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "unseen_fraction": self.unseen_fraction,
            "dev_fraction": self.dev_fraction,
            "num_entities": self.num_entities,
            "num_base_relations": self.num_base_relations,
            "counts": {
                "seen": len(self.seen), "unseen": len(self.unseen),
                "train": len(self.train), "dev": len(self.dev),
                "test": len(self.test), "aux": len(self.aux),
                "dropped_test": self.dropped_test,
            },
        }

    def save(self, directory, vocab: Vocab) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("train", "dev", "test", "aux"):
            write_triples(directory / f"{name}.txt", getattr(self, name), vocab)
        vocab.save(directory / "vocab.tsv")
        manifest = self.manifest()
        manifest["unseen_entities"] = sorted(self.unseen)
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory) -> tuple["InductiveSplit", Vocab]:
        directory = Path(directory)
        vocab = Vocab.load(directory / "vocab.tsv")
        manifest = json.loads((directory / "manifest.json").read_text())
        n_ent, n_rel = vocab.num_entities, vocab.num_relations
        parts = {}
        for name in ("train", "dev", "test", "aux"):
            parts[name] = load_triples(directory / f"{name}.txt", vocab)
        if vocab.num_entities != n_ent or vocab.num_relations != n_rel:
            raise ParseError(directory, 0, "split files mention labels missing from vocab.tsv")
        unseen = set(manifest["unseen_entities"])
        return cls(
            seen=set(range(n_ent)) - unseen, unseen=unseen, num_entities=n_ent,
            num_base_relations=n_rel, seed=manifest.get("seed"),
            unseen_fraction=manifest.get("unseen_fraction"),
            dev_fraction=manifest.get("dev_fraction"),
            dropped_test=manifest.get("counts", {}).get("dropped_test", 0), **parts,
        ), vocab


def make_inductive_split(triples: Sequence[Triple], num_entities: int, num_base_relations: int,
                         unseen_fraction: float = 0.10, dev_fraction: float = 0.05,
                         seed: int = 0) -> InductiveSplit:
    """Partition entities into seen/unseen and triples into train/dev/test/aux.

    Triples with both endpoints seen become train or dev; head-unseen/tail-seen
    triples are the test set; every triple with exactly one unseen endpoint is aux.
    A test triple is kept only if its head has another aux edge to a seen entity,
    so the head stays connected once the queried edge is hidden.
    """
    if not 0.0 < unseen_fraction < 1.0:
        raise ValueError(f"unseen_fraction must be in (0, 1), got {unseen_fraction}")
    if not 0.0 <= dev_fraction < 1.0:
        raise ValueError(f"dev_fraction must be in [0, 1), got {dev_fraction}")
    if not triples:
        raise ValueError("cannot split an empty triple list")
    n_unseen = math.floor(num_entities * unseen_fraction)
    if n_unseen == 0:
        raise ValueError(f"unseen_fraction {unseen_fraction} selects no entity out of {num_entities}")
    if n_unseen >= num_entities:
        raise ValueError("unseen_fraction leaves no seen entity")

    rng = np.random.default_rng(seed)
    unseen_ids = rng.choice(num_entities, size=n_unseen, replace=False)
    is_unseen = np.zeros(num_entities, dtype=bool)
    is_unseen[unseen_ids] = True

    arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    hu, tu = is_unseen[arr[:, 0]], is_unseen[arr[:, 2]]
    both_seen = ~hu & ~tu
    test_mask = hu & ~tu
    aux_mask = hu ^ tu

    set1 = np.flatnonzero(both_seen)
    if len(set1) == 0:
        raise SplitError("no triple has both endpoints seen; cannot build a training graph")
    perm = rng.permutation(set1)
    n_dev = int(round(len(set1) * dev_fraction))
    dev_idx = np.sort(perm[:n_dev])
    train_idx = np.sort(perm[n_dev:])

    # seen-neighbor count per unseen entity over aux edges
    aux_arr = arr[aux_mask]
    unseen_end = np.where(is_unseen[aux_arr[:, 0]], aux_arr[:, 0], aux_arr[:, 2])
    seen_links = np.bincount(unseen_end, minlength=num_entities)
    test_arr = arr[test_mask]
    keep = seen_links[test_arr[:, 0]] >= 2
    dropped = int((~keep).sum())
    if dropped:
        orphans = len(set(test_arr[~keep, 0].tolist()))
        logger.warning("dropping %d test triples of %d unseen entities with no other seen neighbor",
                       dropped, orphans)

    def as_triples(a):
        return [Triple(int(h), int(r), int(t)) for h, r, t in a]

    unseen = set(unseen_ids.tolist())
    return InductiveSplit(
        seen=set(range(num_entities)) - unseen, unseen=unseen,
        train=as_triples(arr[train_idx]), dev=as_triples(arr[dev_idx]),
        test=as_triples(test_arr[keep]), aux=as_triples(aux_arr),
        num_entities=num_entities, num_base_relations=num_base_relations,
        seed=seed, unseen_fraction=unseen_fraction, dev_fraction=dev_fraction,
        dropped_test=dropped,
    )


def pagerank_iterates(graph: KnowledgeGraph, damping: float = 0.85, iterations: int = 50):
    """Yield each power-iteration vector; every adjacency entry is one link."""
    n = graph.num_entities
    if n == 0:
        raise GraphError("pagerank of an empty graph")
    rows, cols = [], []
    for i, edges in enumerate(graph.adjacency):
        for _, j in edges:
            rows.append(i)
            cols.append(j)
    out_deg = np.bincount(np.asarray(rows, dtype=np.int64), minlength=n).astype(float)
    weights = np.ones(len(rows))
    # column-stochastic transition restricted to non-dangling sources
    if rows:
        weights = 1.0 / out_deg[rows]
    M = sparse.csr_matrix((weights, (cols, rows)), shape=(n, n))
    dangling = out_deg == 0
    x = np.full(n, 1.0 / n)
    for _ in range(iterations):
        x = damping * (M @ x + x[dangling].sum() / n) + (1.0 - damping) / n
        x /= x.sum()
        yield x


def pagerank(graph: KnowledgeGraph, damping: float = 0.85, iterations: int = 50) -> np.ndarray:
    """Power-iteration PageRank with uniform teleport and uniform dangling redistribution."""
    x = np.full(graph.num_entities, 1.0 / max(graph.num_entities, 1))
    for x in pagerank_iterates(graph, damping, iterations):
        pass
    return x


def prune_actions(graph: KnowledgeGraph, scores: np.ndarray, k: int) -> KnowledgeGraph:
    """Keep the ``k`` outgoing edges per entity whose neighbors score highest."""
    if k < 1:
        raise ValueError("k must be >= 1")
    adjacency = []
    for edges in graph.adjacency:
        if len(edges) <= k:
            adjacency.append(list(edges))
            continue
        ranked = sorted(edges, key=lambda e: (-scores[e[1]], e[0], e[1]))
        adjacency.append(sorted(ranked[:k]))
    pruned = KnowledgeGraph(graph.num_entities, graph.num_base_relations, adjacency, inverse_closed=False)
    if graph.inverse_closed:
        pruned.inverse_closed = adjacency == graph.adjacency or pruned.check_inverse_closure()
    return pruned


def sample_neighbor_mask(neighborhood: Sequence[int], fraction: float, rng: np.random.Generator) -> list[int]:
    """Drop ``floor(fraction * n)`` distinct neighbors uniformly; always keep at least one."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"mask fraction must be in [0, 1), got {fraction}")
    nodes = sorted(set(neighborhood))
    n_mask = min(math.floor(fraction * len(nodes)), max(len(nodes) - 1, 0))
    if n_mask == 0:
        return nodes
    masked = set(rng.choice(len(nodes), size=n_mask, replace=False).tolist())
    return [v for i, v in enumerate(nodes) if i not in masked]


def known_answers(triples: Iterable[Triple], relations: RelationSpace | None = None) -> dict:
    """Map (head, rel) -> set of tails; with ``relations`` also index inverse queries."""
    answers: dict[tuple[int, int], set[int]] = {}
    for h, r, t in triples:
        answers.setdefault((h, r), set()).add(t)
        if relations is not None:
            answers.setdefault((t, relations.inverse(r)), set()).add(h)
    return answers
