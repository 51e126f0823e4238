"""Inductive, explainable link prediction with a graph-transformer encoder and a path-finding agent."""

from .config import ConfigError, RunConfig, load_config
from .kg import InductiveSplit, KnowledgeGraph, Triple, Vocab, build_graph, make_inductive_split
from .search import RankedPrediction, beam_search
from .training import Checkpoint, evaluate, train

__all__ = [
    "Checkpoint", "ConfigError", "InductiveSplit", "KnowledgeGraph", "RankedPrediction", "RunConfig",
    "Triple", "Vocab", "beam_search", "build_graph", "evaluate", "load_config", "make_inductive_split", "train",
]
