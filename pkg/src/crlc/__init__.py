"""Contrastive representation learning and clustering on vector data."""
from crlc.config import RunConfig, RunReport
from crlc.critics import CriticConfig, CriticKind
from crlc.kernels import BACKEND
from crlc.losses import LossWeights, ProbBatch
from crlc.memory_bank import MemoryBank
from crlc.model import ModelSpec, TwoHeadModel

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CriticConfig", "CriticKind", "LossWeights", "MemoryBank", "ModelSpec",
    "ProbBatch", "RunConfig", "RunReport", "TwoHeadModel",
]
