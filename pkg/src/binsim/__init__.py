"""Similarity-preserving embeddings of binary functions from their control-flow graphs."""

from ._kernels import BACKEND
from .cfg import CFG, Dataset, RawInstruction, Vertex, load_dataset, normalize_instruction
from .i2v import EmbeddingTable, SkipGramConfig, build_vocab, train_skipgram
from .s2v import GraphEmbeddingModel, ModelConfig, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CFG", "Dataset", "RawInstruction", "Vertex", "load_dataset", "normalize_instruction",
    "EmbeddingTable", "SkipGramConfig", "build_vocab", "train_skipgram",
    "GraphEmbeddingModel", "ModelConfig", "TrainConfig", "train",
]
