"""Entity and relation alignment between two knowledge graphs via relation-aware
neighbourhood matching on top of a highway GCN encoder."""

from .config import EncoderConfig, IterConfig, MatchConfig, RunConfig, TrainConfig
from .graph import GraphPair, KnowledgeGraph, add_reverse_relations, build_indexes, build_pair_indexes
from .io import Dataset, SeedAlignments, load_dbp15k, load_features, write_dataset
from .pipeline import prepare, run_pipeline
from .synthetic import SynthSpec, generate_synthetic_pair

__version__ = "0.1.0"

__all__ = [
    "Dataset", "EncoderConfig", "GraphPair", "IterConfig", "KnowledgeGraph", "MatchConfig", "RunConfig",
    "SeedAlignments", "SynthSpec", "TrainConfig", "add_reverse_relations", "build_indexes", "build_pair_indexes",
    "generate_synthetic_pair", "load_dbp15k", "load_features", "prepare", "run_pipeline", "write_dataset",
]
