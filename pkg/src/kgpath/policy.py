"""LSTM path-history policy over embedded actions, rollouts and the REINFORCE loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from . import numerics as nx
from .encoder import EncoderSession, GraphTransformer
from .environment import Action, KGEnvironment, Rollout, State, initial_state
from .kg import RelationSpace, Triple


@dataclass
class PolicyConfig:
    lstm_layers: int = 2
    lstm_hidden: int | None = None
    mlp_hidden: int | None = None
    num_rollouts: int = 20
    entropy_weight: float = 0.02
    baseline: float | None = None
    grad_clip: float | None = 5.0

    def __post_init__(self):
        if not 0.0 <= self.entropy_weight <= 0.1:
            raise ValueError(f"entropy_weight must lie in [0, 0.1], got {self.entropy_weight}")
        if self.num_rollouts < 1:
            raise ValueError("num_rollouts must be >= 1")
        if self.lstm_layers < 1:
            raise ValueError("lstm_layers must be >= 1")

    def hidden(self, dim: int) -> int:
        return self.lstm_hidden or 2 * dim

    def mlp(self, dim: int) -> int:
        return self.mlp_hidden or 2 * dim


def init_policy_params(store: nx.ParamStore, config: PolicyConfig, dim: int, rng: np.random.Generator) -> None:
    H, M, dt = config.hidden(dim), config.mlp(dim), store.dtype
    inp = 2 * dim
    for l in range(config.lstm_layers):
        store.add(f"policy.lstm{l}.w_ih", nx.xavier_normal((4 * H, inp), rng, dt))
        store.add(f"policy.lstm{l}.w_hh", nx.xavier_normal((4 * H, H), rng, dt))
        store.add(f"policy.lstm{l}.bias", torch.zeros(4 * H, dtype=dt))
        inp = H
    store.add("policy.W_1", nx.xavier_normal((M, H + 2 * dim), rng, dt))
    store.add("policy.W_2", nx.xavier_normal((2 * dim, M), rng, dt))


def lstm_weights(store: nx.ParamStore, layers: int):
    return [(store[f"policy.lstm{l}.w_ih"], store[f"policy.lstm{l}.w_hh"], store[f"policy.lstm{l}.bias"])
            for l in range(layers)]


@dataclass
class History:
    """Stacked LSTM state; ``top`` is the last layer's hidden vector h_t."""

    states: list[tuple[torch.Tensor, torch.Tensor]]

    @property
    def top(self) -> torch.Tensor:
        return self.states[-1][0]

    def select(self, index) -> "History":
        idx = torch.as_tensor(index, dtype=torch.long)
        return History([(h[idx], c[idx]) for h, c in self.states])


def encode_history(history: History, action_vec: torch.Tensor, weights) -> History:
    """One stacked-LSTM step consuming a (B, 2d) action embedding."""
    if action_vec.shape[-1] != weights[0][0].shape[-1]:
        raise nx.DimensionError(
            f"encode_history: action width {action_vec.shape[-1]} vs LSTM input {weights[0][0].shape[-1]}")
    _, states = nx.lstm_stack(action_vec, history.states, weights)
    return History(states)


def init_history(source_vec: torch.Tensor, start_vec: torch.Tensor, weights) -> History:
    """History after consuming a_0 = [e_s; r_START] from a zero state."""
    if start_vec.dim() < source_vec.dim():
        start_vec = start_vec.expand_as(source_vec)
    batch = source_vec.shape[:-1]
    zeros = [(source_vec.new_zeros(*batch, w_hh.shape[1]), source_vec.new_zeros(*batch, w_hh.shape[1]))
             for _, w_hh, _ in weights]
    return encode_history(History(zeros), nx.concat([source_vec, start_vec]), weights)


def action_distribution(h: torch.Tensor, e_t: torch.Tensor, r_q: torch.Tensor, actions: torch.Tensor,
                        mask: torch.Tensor, W_1: torch.Tensor, W_2: torch.Tensor) -> torch.Tensor:
    """Log-probabilities softmax(A_t W_2 ReLU(W_1 [h; e_t; r_q])) over unmasked slots.

    h: (B, H); e_t, r_q: (B, d); actions: (B, A, 2d); mask: (B, A).
    """
    if not bool(mask.any(dim=-1).all()):
        raise ValueError("every state needs at least one unmasked action")
    proj = nx.linear(nx.relu(nx.linear(nx.concat([h, e_t, r_q]), W_1)), W_2)
    if actions.shape[-1] != proj.shape[-1]:
        raise nx.DimensionError(f"action_distribution: actions {tuple(actions.shape)} vs policy {tuple(proj.shape)}")
    logits = torch.einsum("bad,bd->ba", actions, proj)
    return nx.masked_log_softmax(logits, mask)


@dataclass
class RolloutBatch:
    """M = len(queries) * N trajectories; row m belongs to query m // N."""

    queries: list[Triple]
    num_rollouts: int
    actions: list[list[Action]]
    log_probs: torch.Tensor  # (M, T)
    entropies: torch.Tensor  # (M, T)
    finals: list[int]
    rewards: torch.Tensor | None = None
    sessions: list = field(default_factory=list, repr=False)

    def query_of(self, m: int) -> Triple:
        return self.queries[m // self.num_rollouts]

    def rollouts(self) -> list[Rollout]:
        out = []
        for m, acts in enumerate(self.actions):
            out.append(Rollout(
                actions=list(acts), log_probs=list(self.log_probs[m]), entropies=list(self.entropies[m]),
                final=self.finals[m],
                reward=None if self.rewards is None else float(self.rewards[m]),
            ))
        return out


class Agent:
    """Encoder + policy network acting in a :class:`KGEnvironment`."""

    def __init__(self, store: nx.ParamStore, encoder: GraphTransformer, config: PolicyConfig):
        self.store = store
        self.encoder = encoder
        self.config = config
        self.dim = encoder.config.dim
        self.relations: RelationSpace = encoder.relations

    @classmethod
    def create(cls, encoder_config, policy_config: PolicyConfig, num_entities: int, num_base_relations: int,
               seed: int = 0, dtype=torch.float64) -> "Agent":
        from .encoder import init_encoder_params

        store = nx.ParamStore(dtype)
        rel = RelationSpace(num_base_relations)
        rng = nx.stream(seed, 0)
        init_encoder_params(store, encoder_config, num_entities, rel, rng)
        init_policy_params(store, policy_config, encoder_config.dim, rng)
        return cls(store, GraphTransformer(store, encoder_config, rel), policy_config)

    @property
    def lstm(self):
        return lstm_weights(self.store, self.config.lstm_layers)

    def start(self, sess: EncoderSession, sources: Sequence[int], query_rels: Sequence[int],
              hidden: Sequence[tuple | None]) -> History:
        src = sess.encode([sess.key(s, q, h) for s, q, h in zip(sources, query_rels, hidden)])
        start = sess.relations([self.relations.start])[0]
        return init_history(src, start, self.lstm)

    def embed_actions(self, sess: EncoderSession, action_lists: Sequence[Sequence[Action]],
                      query_rels: Sequence[int], hidden: Sequence[tuple | None]):
        """Padded (B, A, 2d) action embeddings [e_next; r_next] plus the validity mask."""
        width = max(len(a) for a in action_lists)
        keys, rels, mask = [], [], []
        for acts, q, h in zip(action_lists, query_rels, hidden):
            pad = width - len(acts)
            keys.extend(sess.key(a.dest, q, h) for a in acts)
            keys.extend([sess.key(acts[0].dest, q, h)] * pad)
            rels.extend([a.rel for a in acts] + [self.relations.pad] * pad)
            mask.append([True] * len(acts) + [False] * pad)
        B = len(action_lists)
        ent = sess.encode(keys).reshape(B, width, self.dim)
        rel = sess.relations(rels).reshape(B, width, self.dim)
        return torch.cat([ent, rel], dim=-1), torch.tensor(mask, dtype=torch.bool)

    def log_probs(self, sess: EncoderSession, history: History, currents: Sequence[int],
                  query_rels: Sequence[int], hidden: Sequence[tuple | None],
                  action_lists: Sequence[Sequence[Action]]):
        """Returns (log-probs (B, A), action embeddings (B, A, 2d), mask (B, A))."""
        emb, mask = self.embed_actions(sess, action_lists, query_rels, hidden)
        e_t = sess.encode([sess.key(c, q, h) for c, q, h in zip(currents, query_rels, hidden)])
        r_q = sess.relations(list(query_rels))
        lp = action_distribution(history.top, e_t, r_q, emb, mask, self.store["policy.W_1"], self.store["policy.W_2"])
        return lp, emb, mask

    def rollout_batch(self, queries: Sequence[Triple], env: KGEnvironment, rng: np.random.Generator,
                      num_rollouts: int | None = None, train: bool = False,
                      known: dict | None = None, base_table=None) -> RolloutBatch:
        """Sample N trajectories of length T per query.

        ``known`` maps (head, rel) to known answers and enables false-negative
        masking at the final step.
        """
        n = num_rollouts or self.config.num_rollouts
        queries = [Triple(*q) for q in queries]
        sess = self.encoder.session(env.graph, train=train, rng=rng, base_table=base_table)
        rows = [q for q in queries for _ in range(n)]
        hidden = [tuple(q) if env.config.hide_answer_edge else None for q in rows]
        qrels = [q.rel for q in rows]
        history = self.start(sess, [q.head for q in rows], qrels, hidden)
        states = [initial_state(q.head, q.rel) for q in rows]
        T = env.horizon
        log_probs, entropies = [], []
        chosen: list[list[Action]] = [[] for _ in rows]
        for t in range(T):
            final = t == T - 1
            action_lists = [
                env.actions(s, q, known.get((q.head, q.rel)) if known else None, final_step=final)
                for s, q in zip(states, rows)
            ]
            lp, emb, mask = self.log_probs(sess, history, [s.current for s in states], qrels, hidden, action_lists)
            idx = _sample(lp.detach(), mask, rng)
            ar = torch.arange(len(rows))
            log_probs.append(lp[ar, idx])
            entropies.append(nx.entropy_from_log_probs(lp, mask))
            acts = [action_lists[m][i] for m, i in enumerate(idx.tolist())]
            for m, a in enumerate(acts):
                chosen[m].append(a)
            states = [env.step(s, a, validate=False) for s, a in zip(states, acts)]
            if not final:
                history = encode_history(history, emb[ar, idx], self.lstm)
        return RolloutBatch(
            queries=queries, num_rollouts=n, actions=chosen,
            log_probs=torch.stack(log_probs, dim=1), entropies=torch.stack(entropies, dim=1),
            finals=[s.current for s in states], sessions=[sess],
        )


def _sample(log_probs: torch.Tensor, mask: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    probs = log_probs.exp().masked_fill(~mask, 0.0).to(torch.float64).numpy()
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    # guard against landing on a zero-probability slot through rounding
    last_valid = mask.numpy().shape[1] - 1 - np.argmax(mask.numpy()[:, ::-1], axis=1)
    idx = np.minimum(idx, last_valid)
    for m in np.flatnonzero(probs[np.arange(len(idx)), idx] == 0.0):
        idx[m] = int(np.argmax(probs[m]))
    return torch.as_tensor(idx, dtype=torch.long)


def sample_rollouts(query: Triple, env: KGEnvironment, agent: Agent, n: int, rng: np.random.Generator,
                    train: bool = False, known: dict | None = None, base_table=None) -> list[Rollout]:
    return agent.rollout_batch([query], env, rng, n, train=train, known=known, base_table=base_table).rollouts()


def reinforce_objective(rollouts, beta: float, rewards=None, baseline: float | None = None) -> torch.Tensor:
    """-(1/N) sum_n R_n sum_t log pi(a_t^n) - beta (1/N) sum_n sum_t H_t^n.

    ``rollouts`` is a :class:`RolloutBatch` or a list of :class:`Rollout`; rewards
    come from ``rewards`` or the rollouts themselves and are treated as constants.
    """
    if isinstance(rollouts, RolloutBatch):
        lp, ent = rollouts.log_probs, rollouts.entropies
        if rewards is None:
            rewards = rollouts.rewards
    else:
        lp = torch.stack([torch.stack(list(r.log_probs)) for r in rollouts])
        ent = torch.stack([torch.stack(list(r.entropies)) for r in rollouts])
        if rewards is None:
            rewards = [r.reward for r in rollouts]
    R = torch.as_tensor(rewards, dtype=lp.dtype).detach()
    if baseline is not None:
        R = R - baseline
    pg = -(R * lp.sum(dim=1)).mean()
    return pg - beta * ent.sum(dim=1).mean()
