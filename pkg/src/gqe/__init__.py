"""Graph query embeddings: conjunctive queries over typed knowledge graphs
answered by geometric operations in an embedding space."""

from .kgraph import TypedGraph, ingest, split_edges, synthetic_blocks
from .model import ModelParams, answer, encode_query, exact_parameters
from .querydag import QueryDag, denotation, structure_catalog

__all__ = [
    "TypedGraph", "ingest", "split_edges", "synthetic_blocks",
    "ModelParams", "answer", "encode_query", "exact_parameters",
    "QueryDag", "denotation", "structure_catalog",
]
__version__ = "0.1.0"
