"""Training loop, evaluation and checkpoints."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import numerics as nx
from .config import ConfigError, RunConfig
from .environment import KGEnvironment
from .kg import InductiveSplit, KnowledgeGraph, Triple, build_graph, known_answers, pagerank, prune_actions
from .metrics import EvalReport, filtered_rank, metrics_from_ranks, raw_rank, relation_cardinality, relation_type_report
from .policy import Agent, reinforce_objective
from .reward import ConvE, RewardShaper
from .search import RankedPrediction, beam_search

logger = logging.getLogger(__name__)

# sub-stream ids for nx.stream(seed, ...)
_SHUFFLE, _BATCH, _UNSEEN = 1, 2, 3


def environment_graph(triples: Sequence[Triple], num_entities: int, num_base_relations: int, top_k: int,
                      damping: float = 0.85, iterations: int = 50) -> KnowledgeGraph:
    """Inverse-closed graph with each action list cut to the top-k PageRank neighbors."""
    graph = build_graph(triples, num_entities, num_base_relations, add_inverse=True)
    return prune_actions(graph, pagerank(graph, damping, iterations), top_k)


def with_inverses(triples: Sequence[Triple], num_base_relations: int) -> list[Triple]:
    out = []
    for h, r, t in triples:
        out.append(Triple(h, r, t))
        out.append(Triple(t, r + num_base_relations, h))
    return out


@dataclass
class Checkpoint:
    config: RunConfig
    num_entities: int
    num_base_relations: int
    params: dict[str, torch.Tensor]
    meta: dict = field(default_factory=dict)

    def agent(self) -> Agent:
        dtype = nx.DTYPES[self.config.train.precision]
        agent = Agent.create(self.config.encoder, self.config.policy, self.num_entities,
                             self.num_base_relations, self.config.train.seed, dtype)
        agent.store.set_values({k: v.to(dtype) for k, v in self.params.items()})
        return agent

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        nx.save_tensors(directory / "model.tensors", self.params)
        nx.write_manifest(
            directory / "manifest.json", precision=self.config.train.precision, seed=self.config.train.seed,
            num_entities=self.num_entities, num_base_relations=self.num_base_relations,
            config=self.config.to_dict(), meta=self.meta,
        )

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        directory = Path(directory)
        manifest = nx.read_manifest(directory / "manifest.json")
        params = nx.load_tensors(directory / "model.tensors")
        return cls(RunConfig.from_dict(manifest["config"]), manifest["num_entities"],
                   manifest["num_base_relations"], params, manifest.get("meta", {}))


def train(split: InductiveSplit, config: RunConfig, conve: ConvE | None = None,
          checkpoint_dir=None, epochs: int | None = None) -> Checkpoint:
    """Minibatch REINFORCE over train triples and their inverses; keeps the best-dev parameters."""
    tc = config.train
    if tc.use_reward_shaping and conve is None:
        raise ConfigError("reward shaping is enabled but no ConvE checkpoint was supplied")
    dtype = nx.DTYPES[tc.precision]
    n_rel = split.num_base_relations
    agent = Agent.create(config.encoder, config.policy, split.num_entities, n_rel, tc.seed, dtype)
    graph = environment_graph(split.train, split.num_entities, n_rel, config.env.top_k,
                              tc.pagerank_damping, tc.pagerank_iterations)
    env = KGEnvironment(graph, config.env)
    queries = with_inverses(split.train, n_rel)
    known = known_answers(list(split.train) + list(split.dev), graph.relations)
    shaper = RewardShaper(conve if tc.use_reward_shaping else None)
    pc = config.policy

    best, best_mrr, history = agent.store.snapshot(), -1.0, []
    n_epochs = tc.epochs if epochs is None else epochs
    for epoch in range(n_epochs):
        order = nx.stream(tc.seed, _SHUFFLE, epoch).permutation(len(queries))
        losses, hit_rate = [], []
        for b, start in enumerate(range(0, len(order), tc.batch_size)):
            batch = [queries[i] for i in order[start:start + tc.batch_size]]
            rng = nx.stream(tc.seed, _BATCH, epoch, b)
            rb = agent.rollout_batch(batch, env, rng, pc.num_rollouts, train=True, known=known)
            rows = [rb.query_of(m) for m in range(len(rb.finals))]
            rewards = shaper([q.head for q in rows], [q.rel for q in rows], rb.finals, [q.tail for q in rows])
            rewards = rewards.to(dtype)
            loss = reinforce_objective(rb, pc.entropy_weight, rewards, pc.baseline)
            nx.backward(loss, agent.store)
            nx.adam_step(agent.store, lr=tc.learning_rate, clip_norm=pc.grad_clip)
            losses.append(loss.item())
            hit_rate.append(float(np.mean([f == q.tail for f, q in zip(rb.finals, rows)])))
        dev_mrr = float("nan")
        if split.dev:
            report = evaluate_triples(agent, split.dev, env, tc.dev_beam_width,
                                      filter_triples=list(split.train) + list(split.dev),
                                      batch_size=tc.eval_batch_size)
            dev_mrr = report.mrr
        logger.info("epoch %d loss %.4f train-hit %.3f dev MRR %.4f",
                    epoch, np.mean(losses), np.mean(hit_rate), dev_mrr)
        history.append({"epoch": epoch, "loss": float(np.mean(losses)), "train_hit": float(np.mean(hit_rate)),
                        "dev_mrr": dev_mrr})
        score = dev_mrr if split.dev else float(epoch)
        if score > best_mrr:
            best, best_mrr = agent.store.snapshot(), score
    meta = {"history": history, "best_dev_mrr": best_mrr if split.dev else None,
            "reward_shaping": tc.use_reward_shaping,
            "conve_train_hash": getattr(conve, "train_hash", None) if tc.use_reward_shaping else None}
    ckpt = Checkpoint(config, split.num_entities, n_rel, best, meta)
    if checkpoint_dir is not None:
        ckpt.save(checkpoint_dir)
    return ckpt


def evaluate_triples(agent: Agent, triples: Sequence[Triple], env: KGEnvironment, width: int,
                     filter_triples: Sequence[Triple], base_table=None, batch_size: int = 16,
                     workers: int = 1, uniform: bool = False) -> EvalReport:
    """Filtered MRR/Hits@k of ``triples`` treated as (head, rel, ?) queries."""
    triples = [Triple(*t) for t in triples]
    answers = known_answers(filter_triples)
    chunks = [triples[i:i + batch_size] for i in range(0, len(triples), batch_size)]

    def run(chunk):
        return beam_search(chunk, env, width, agent=agent, base_table=base_table, uniform=uniform)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    predictions = [p for chunk in results for p in chunk]
    ranks, raw = [], []
    for q, preds in zip(triples, predictions):
        ranks.append(filtered_rank(preds, q.tail, answers.get((q.head, q.rel), ())))
        raw.append(raw_rank(preds, q.tail))
    report = metrics_from_ranks(ranks)
    report.raw_ranks = raw
    report.predictions = predictions
    return report


def inference_setup(split: InductiveSplit, ckpt: Checkpoint):
    """Agent, train+aux environment and the per-session table with Xavier rows for unseen entities."""
    cfg = ckpt.config
    agent = ckpt.agent()
    graph = environment_graph(list(split.train) + list(split.aux), split.num_entities, split.num_base_relations,
                              cfg.env.top_k, cfg.train.pagerank_damping, cfg.train.pagerank_iterations)
    env = KGEnvironment(graph, cfg.env)
    table = agent.encoder.inference_table(split.unseen, nx.stream(cfg.train.seed, _UNSEEN))
    return agent, env, table


def evaluate(split: InductiveSplit, ckpt: Checkpoint, triples: Sequence[Triple] | None = None,
             width: int | None = None, workers: int | None = None, uniform: bool = False) -> EvalReport:
    """Beam-decode test queries on the aux-augmented graph and report filtered metrics."""
    cfg = ckpt.config
    agent, env, table = inference_setup(split, ckpt)
    n_rel = split.num_base_relations
    triples = list(split.test if triples is None else triples)
    if cfg.train.eval_inverse_queries:
        triples = with_inverses(triples, n_rel)
    filt = list(split.train) + list(split.dev) + list(split.aux) + list(split.test)
    if cfg.train.eval_inverse_queries:
        filt = with_inverses(filt, n_rel)
    report = evaluate_triples(agent, triples, env, width or cfg.train.beam_width, filt, base_table=table,
                              batch_size=cfg.train.eval_batch_size, workers=workers or cfg.train.workers,
                              uniform=uniform)
    card = relation_cardinality(with_inverses(split.train, n_rel))
    report.relation_types = relation_type_report(triples, card, report.ranks)
    return report
