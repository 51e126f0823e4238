"""ConvE scorer used only to shape terminal rewards during policy training."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import numerics as nx
from .kg import RelationSpace, Triple, known_answers

logger = logging.getLogger(__name__)


@dataclass
class ConvEConfig:
    embed_dim: int = 32
    reshape: tuple[int, int] = (4, 8)
    channels: int = 8
    kernel: tuple[int, int] = (3, 3)
    input_dropout: float = 0.2
    feature_dropout: float = 0.2
    hidden_dropout: float = 0.3
    label_smoothing: float = 0.1
    learning_rate: float = 0.003
    batch_size: int = 128
    epochs: int = 100

    def __post_init__(self):
        self.reshape = tuple(self.reshape)
        self.kernel = tuple(self.kernel)
        rows, cols = self.reshape
        if rows * cols != self.embed_dim:
            raise ValueError(f"reshape {self.reshape} does not factor embed_dim {self.embed_dim}")
        if self.kernel[0] > 2 * rows or self.kernel[1] > cols:
            raise ValueError(f"kernel {self.kernel} does not fit a {2 * rows}x{cols} input")

    @property
    def feature_map(self) -> tuple[int, int]:
        rows, cols = self.reshape
        return 2 * rows - self.kernel[0] + 1, cols - self.kernel[1] + 1

    @property
    def flat_size(self) -> int:
        h, w = self.feature_map
        return self.channels * h * w


class ConvE:
    """1-N ConvE: stack reshaped subject/relation, convolve, project, dot with objects."""

    def __init__(self, config: ConvEConfig, num_entities: int, num_base_relations: int,
                 known_entities: Sequence[int], store: nx.ParamStore):
        self.config = config
        self.num_entities = num_entities
        self.relations = RelationSpace(num_base_relations)
        self.known = np.zeros(num_entities, dtype=bool)
        self.known[list(known_entities)] = True
        self.store = store

    @classmethod
    def create(cls, config: ConvEConfig, num_entities: int, num_base_relations: int,
               known_entities: Sequence[int], seed: int = 0, dtype=torch.float64) -> "ConvE":
        store = nx.ParamStore(dtype)
        rng = nx.stream(seed, 7)
        k, c = config.embed_dim, config.channels
        store.add("conve.entity", nx.xavier_normal((num_entities, k), rng, dtype))
        store.add("conve.relation", nx.xavier_normal((2 * num_base_relations, k), rng, dtype))
        store.add("conve.kernels", nx.xavier_normal((c, 1, *config.kernel), rng, dtype))
        store.add("conve.conv_bias", torch.zeros(c, dtype=dtype))
        store.add("conve.fc.W", nx.xavier_normal((k, config.flat_size), rng, dtype))
        store.add("conve.fc.b", torch.zeros(k, dtype=dtype))
        store.add("conve.entity_bias", torch.zeros(num_entities, dtype=dtype))
        return cls(config, num_entities, num_base_relations, known_entities, store)

    def _check(self, entities) -> None:
        for e in entities:
            if not (0 <= e < self.num_entities and self.known[e]):
                raise LookupError(f"entity {e} is not covered by the ConvE tables")

    def hidden(self, heads, rels, train: bool = False, gen: torch.Generator | None = None) -> torch.Tensor:
        """Projected query features (B, k) before the object dot product."""
        cfg, p = self.config, self.store
        rows, cols = cfg.reshape
        e = nx.embedding_gather(p["conve.entity"], heads).reshape(-1, 1, rows, cols)
        r = nx.embedding_gather(p["conve.relation"], rels).reshape(-1, 1, rows, cols)
        x = torch.cat([e, r], dim=2)
        x = nx.dropout(x, cfg.input_dropout, gen, train)
        x = nx.relu(nx.conv2d(x, p["conve.kernels"], p["conve.conv_bias"]))
        x = nx.dropout(x, cfg.feature_dropout, gen, train)
        x = nx.linear(x.reshape(x.shape[0], -1), p["conve.fc.W"], p["conve.fc.b"])
        x = nx.dropout(x, cfg.hidden_dropout, gen, train)
        return nx.relu(x)

    def all_logits(self, heads, rels, train: bool = False, gen=None) -> torch.Tensor:
        h = self.hidden(heads, rels, train, gen)
        return h @ self.store["conve.entity"].T + self.store["conve.entity_bias"]

    def score(self, heads, rels, tails) -> torch.Tensor:
        heads, tails = list(heads), list(tails)
        self._check(heads)
        self._check(tails)
        h = self.hidden(heads, list(rels))
        obj = nx.embedding_gather(self.store["conve.entity"], tails)
        return (h * obj).sum(-1) + self.store["conve.entity_bias"][torch.as_tensor(tails)]

    # -- persistence
    def save(self, directory, train_hash: str, seed: int) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tensors = dict(self.store.snapshot())
        tensors["conve.known"] = torch.as_tensor(self.known.astype(np.int64))
        nx.save_tensors(directory / "conve.tensors", tensors)
        nx.write_manifest(
            directory / "conve.manifest.json", precision=str(self.store.dtype).replace("torch.", ""),
            seed=seed, train_subgraph_sha256=train_hash, num_entities=self.num_entities,
            num_base_relations=self.relations.num_base, config=asdict(self.config),
        )

    @classmethod
    def load(cls, directory) -> "ConvE":
        directory = Path(directory)
        manifest = nx.read_manifest(directory / "conve.manifest.json")
        tensors = nx.load_tensors(directory / "conve.tensors")
        known = np.flatnonzero(tensors.pop("conve.known").numpy())
        dtype = nx.DTYPES[manifest["precision"]]
        model = cls.create(ConvEConfig(**manifest["config"]), manifest["num_entities"],
                           manifest["num_base_relations"], known, dtype=dtype)
        model.store.set_values({k: v.to(dtype) for k, v in tensors.items()})
        model.train_hash = manifest["train_subgraph_sha256"]
        return model


def conve_score(e_s: int, r_q: int, e_o: int, model: ConvE) -> torch.Tensor:
    """Raw ConvE logit of a single triple."""
    return model.score([e_s], [r_q], [e_o])[0]


def triples_hash(triples: Sequence[Triple]) -> str:
    h = hashlib.sha256()
    for t in sorted(tuple(map(int, t)) for t in triples):
        h.update(f"{t[0]}\t{t[1]}\t{t[2]}\n".encode())
    return h.hexdigest()


def conve_ranks(model: ConvE, triples: Sequence[Triple], filter_triples: Sequence[Triple]) -> np.ndarray:
    """Filtered tail ranks (1-based) of ``triples`` under ``model``."""
    answers = known_answers(filter_triples)
    ranks = []
    with torch.no_grad():
        for start in range(0, len(triples), 256):
            chunk = triples[start:start + 256]
            logits = model.all_logits([t.head for t in chunk], [t.rel for t in chunk]).clone()
            logits[:, ~torch.as_tensor(model.known)] = float("-inf")
            for row, t in zip(logits, chunk):
                target = row[t.tail].item()
                others = [e for e in answers.get((t.head, t.rel), ()) if e != t.tail]
                row[others] = float("-inf")
                ranks.append(1 + int((row > target).sum()))
    return np.asarray(ranks)


def train_conve(train: Sequence[Triple], config: ConvEConfig, num_entities: int, num_base_relations: int,
                epochs: int | None = None, seed: int = 0, dev: Sequence[Triple] | None = None,
                dtype=torch.float64, on_epoch: Callable[[int, float, ConvE], None] | None = None) -> ConvE:
    """1-vs-all BCE training with label smoothing on ``train`` (and inverse queries).

    ``dev`` is only used to pick the epoch with the best filtered MRR; gradient
    steps read nothing but ``train``.
    """
    train = [Triple(*t) for t in train]
    rel = RelationSpace(num_base_relations)
    seen = sorted({t.head for t in train} | {t.tail for t in train})
    model = ConvE.create(config, num_entities, num_base_relations, seen, seed, dtype)
    answers = known_answers(train, rel)
    queries = sorted(answers)
    rng = nx.stream(seed, 8)
    gen = nx.torch_generator(rng)
    known_mask = torch.as_tensor(model.known)
    best, best_mrr = None, -1.0
    n_epochs = config.epochs if epochs is None else epochs
    for epoch in range(n_epochs):
        order = rng.permutation(len(queries))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [queries[i] for i in order[start:start + config.batch_size]]
            target = torch.zeros(len(batch), num_entities, dtype=dtype)
            for row, (h, r) in enumerate(batch):
                target[row, sorted(answers[(h, r)])] = 1.0
            target = (1.0 - config.label_smoothing) * target + config.label_smoothing / len(seen)
            logits = model.all_logits([h for h, _ in batch], [r for _, r in batch], train=True, gen=gen)
            loss = F.binary_cross_entropy_with_logits(logits[:, known_mask], target[:, known_mask])
            nx.backward(loss, model.store)
            nx.adam_step(model.store, lr=config.learning_rate)
            total += loss.item() * len(batch)
        mean_loss = total / max(len(queries), 1)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, model)
        if dev:
            dev_seen = [t for t in dev if model.known[t.head] and model.known[t.tail]]
            mrr = float(np.mean(1.0 / conve_ranks(model, dev_seen, list(train) + list(dev)))) if dev_seen else 0.0
            logger.debug("conve epoch %d loss %.4f dev mrr %.4f", epoch, mean_loss, mrr)
            if mrr > best_mrr:
                best, best_mrr = model.store.snapshot(), mrr
    if best is not None:
        model.store.set_values(best)
    model.train_hash = triples_hash(train)
    return model


def shaped_reward(e_s: int, r_q: int, e_T: int, answer: int, model: ConvE | None) -> float:
    """1 for a hit, else sigmoid of the ConvE logit; 0 when ConvE does not know an id."""
    if e_T == answer:
        return 1.0
    if model is None:
        return 0.0
    try:
        with torch.no_grad():
            return float(torch.sigmoid(conve_score(e_s, r_q, e_T, model)))
    except LookupError:
        return 0.0


class RewardShaper:
    """Batched terminal rewards for a rollout batch."""

    def __init__(self, model: ConvE | None):
        self.model = model

    def __call__(self, sources, query_rels, finals, answers) -> torch.Tensor:
        out = np.zeros(len(finals))
        miss = []
        for m, (s, q, f, a) in enumerate(zip(sources, query_rels, finals, answers)):
            if f == a:
                out[m] = 1.0
            elif self.model is not None and self.model.known[s] and self.model.known[f]:
                miss.append(m)
        if miss:
            with torch.no_grad():
                logits = self.model.score([sources[m] for m in miss], [query_rels[m] for m in miss],
                                          [finals[m] for m in miss])
            out[miss] = torch.sigmoid(logits).numpy()
        return torch.as_tensor(out)
