"""Beam-search decoding of reasoning paths."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .environment import Action, KGEnvironment, State, initial_state
from .kg import Triple
from .policy import Agent, encode_history


@dataclass
class RankedPrediction:
    entity: int
    path: list[int]  # e_s, r_1, e_1, ..., r_T, e_T
    log_likelihood: float
    rank: int

    @property
    def hops(self) -> list[tuple[int, int]]:
        return list(zip(self.path[1::2], self.path[2::2]))


@dataclass
class _Beam:
    actions: tuple[Action, ...]
    score: float
    state: State


def _query(q) -> Triple:
    q = tuple(q)
    return Triple(q[0], q[1], q[2] if len(q) > 2 and q[2] is not None else -1)


def beam_search(queries: Sequence, env: KGEnvironment, width: int, agent: Agent | None = None,
                base_table: torch.Tensor | None = None, hide_query_edge: bool = True,
                uniform: bool = False) -> list[list[RankedPrediction]]:
    """Width-limited exact-prefix beam search over T steps for a batch of queries.

    Queries are (source, relation[, tail]) tuples; a known tail lets the
    environment hide the queried edge.  Beams are ranked by cumulative
    log-probability with ties broken by the action sequence; after the last
    step each entity keeps its best path and entities are ranked by
    (score desc, id asc).  ``uniform=True`` replaces the policy by a uniform
    distribution over available actions.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    if agent is None and not uniform:
        raise ValueError("beam search needs an agent unless uniform=True")
    queries = [_query(q) for q in queries]
    hidden = [tuple(q) if hide_query_edge and q.tail >= 0 and env.config.hide_answer_edge else None
              for q in queries]
    T = env.horizon
    beams = [[_Beam((), 0.0, initial_state(q.head, q.rel))] for q in queries]
    owner = list(range(len(queries)))
    with torch.no_grad():
        sess = None
        history = None
        if not uniform:
            sess = agent.encoder.session(env.graph, train=False, base_table=base_table)
            history = agent.start(sess, [q.head for q in queries], [q.rel for q in queries], hidden)
        for t in range(T):
            flat = [b for group in beams for b in group]
            owner = [qi for qi, group in enumerate(beams) for _ in group]
            action_lists = [env.actions(b.state, queries[qi] if hidden[qi] else None)
                            for b, qi in zip(flat, owner)]
            if uniform:
                lp = [np.full(len(a), -math.log(len(a))) for a in action_lists]
                emb = None
            else:
                lp_t, emb, _ = agent.log_probs(sess, history, [b.state.current for b in flat],
                                               [queries[qi].rel for qi in owner], [hidden[qi] for qi in owner],
                                               action_lists)
                lp_np = lp_t.numpy()
                lp = [lp_np[i, :len(a)] for i, a in enumerate(action_lists)]
            # gather candidates per query
            per_query: list[list] = [[] for _ in queries]
            for row, (b, qi, acts) in enumerate(zip(flat, owner, action_lists)):
                scores = b.score + lp[row]
                for ai, a in enumerate(acts):
                    per_query[qi].append((float(scores[ai]), b.actions + (a,), row, ai))
            new_beams, rows, cols = [], [], []
            for qi, cands in enumerate(per_query):
                kept = _top(cands, width)
                group = []
                for score, acts, row, ai in kept:
                    group.append(_Beam(acts, score, State(acts[-1].dest, queries[qi].rel, queries[qi].head, t + 1)))
                    rows.append(row)
                    cols.append(ai)
                new_beams.append(group)
            if not uniform and t < T - 1:
                r, c = torch.as_tensor(rows), torch.as_tensor(cols)
                history = encode_history(history.select(r), emb[r, c], agent.lstm)
            beams = new_beams
    return [_rank(q, group) for q, group in zip(queries, beams)]


def _top(cands: list, width: int) -> list:
    if len(cands) > width:
        scores = np.fromiter((c[0] for c in cands), dtype=float, count=len(cands))
        cutoff = np.partition(-scores, width - 1)[width - 1]
        cands = [c for c, s in zip(cands, scores) if -s <= cutoff]
    cands.sort(key=lambda c: (-c[0], c[1]))
    return cands[:width]


def _rank(query: Triple, group: list[_Beam]) -> list[RankedPrediction]:
    best: dict[int, _Beam] = {}
    for b in group:
        e = b.state.current
        cur = best.get(e)
        if cur is None or b.score > cur.score or (b.score == cur.score and b.actions < cur.actions):
            best[e] = b
    ordered = sorted(best.items(), key=lambda kv: (-kv[1].score, kv[0]))
    out = []
    for rank, (entity, b) in enumerate(ordered, 1):
        path = [query.head]
        for a in b.actions:
            path.extend((a.rel, a.dest))
        out.append(RankedPrediction(entity, path, b.score, rank))
    return out
