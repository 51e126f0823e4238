"""Deterministic finite-horizon walk environment over a knowledge graph."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple

from .kg import KnowledgeGraph, Triple


class IllegalAction(RuntimeError):
    pass


@dataclass
class EnvConfig:
    horizon: int = 3
    top_k: int = 256
    include_self_loop: bool = True
    hide_answer_edge: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass(frozen=True)
class State:
    current: int
    query_rel: int
    source: int
    step: int = 0


class Action(NamedTuple):
    rel: int
    dest: int


@dataclass
class Rollout:
    actions: list[Action]
    log_probs: list
    entropies: list
    final: int
    reward: float | None = None


def initial_state(source: int, query_rel: int) -> State:
    return State(current=source, query_rel=query_rel, source=source, step=0)


def available_actions(state: State, graph: KnowledgeGraph, config: EnvConfig,
                      query_edge: Triple | None = None) -> list[Action]:
    """Outgoing edges of the current entity plus the self-loop.

    With ``hide_answer_edge`` set and a ``query_edge`` given, the queried edge
    and its inverse are removed from the episode graph.
    """
    edges = graph.adjacency[state.current]
    if config.hide_answer_edge and query_edge is not None:
        h, r, t = query_edge
        if state.current == h or state.current == t:
            rs = graph.relations
            hidden = set()
            if state.current == h:
                hidden.add((r, t))
            if state.current == t:
                hidden.add((rs.inverse(r), h))
            edges = [e for e in edges if e not in hidden]
    actions = [Action(r, e) for r, e in edges]
    if config.include_self_loop or not actions:
        actions.append(Action(graph.relations.self_loop, state.current))
    return actions


def step(state: State, action: Action, graph: KnowledgeGraph | None = None) -> State:
    """Follow ``action``; with ``graph`` given the edge is checked for existence."""
    if graph is not None:
        if action.rel == graph.relations.self_loop:
            if action.dest != state.current:
                raise IllegalAction(f"self-loop from {state.current} must stay in place, got {action}")
        elif not graph.has_edge(state.current, action.rel, action.dest):
            raise IllegalAction(f"no edge {action} from entity {state.current}")
    return State(action.dest, state.query_rel, state.source, state.step + 1)


def terminal_reward(final: int, answer: int, shaper: Callable[[int, int, int], float] | None = None,
                    source: int | None = None, query_rel: int | None = None) -> float:
    if final == answer:
        return 1.0
    if shaper is None:
        return 0.0
    return float(shaper(source, query_rel, final))


def false_negative_mask(candidates: Iterable, query: Triple, known: set) -> list:
    """Drop candidates that are known answers other than the queried tail.

    Candidates may be entity ids or :class:`Action` objects (judged by ``dest``).
    """
    out = []
    for c in candidates:
        dest = c.dest if isinstance(c, Action) else c
        if dest != query.tail and dest in known:
            continue
        out.append(c)
    return out


class KGEnvironment:
    """Stateless wrapper binding a graph and a config."""

    def __init__(self, graph: KnowledgeGraph, config: EnvConfig):
        self.graph = graph
        self.config = config

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def reset(self, source: int, query_rel: int) -> State:
        return initial_state(source, query_rel)

    def actions(self, state: State, query_edge: Triple | None = None, known: set | None = None,
                final_step: bool = False) -> list[Action]:
        acts = available_actions(state, self.graph, self.config, query_edge)
        if final_step and known and query_edge is not None:
            masked = false_negative_mask(acts, query_edge, known)
            # keep the walk alive when every option is a false negative
            acts = masked or [Action(self.graph.relations.self_loop, state.current)]
        return acts

    def step(self, state: State, action: Action, validate: bool = True) -> State:
        return step(state, action, self.graph if validate else None)
