from recps.models.base import RecModel, predict, top_k
from recps.models.checkpoint import load_checkpoint, save_checkpoint
from recps.models.lightgcn import LightGCN, normalized_adjacency
from recps.models.mf import MatrixFactorization
from recps.models.ncf import NeuralCF
from recps.models.registry import FAMILIES, build_model, model_class

__all__ = [
    "FAMILIES",
    "LightGCN",
    "MatrixFactorization",
    "NeuralCF",
    "RecModel",
    "build_model",
    "load_checkpoint",
    "model_class",
    "normalized_adjacency",
    "predict",
    "save_checkpoint",
    "top_k",
]
