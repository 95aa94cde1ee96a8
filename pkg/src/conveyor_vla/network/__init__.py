"""Transformer layers and the mixture-of-transformers core.

The full policy lives in `conveyor_vla.network.policy` (it also depends on
`conveyor_vla.foresight`, which builds on these layers).
"""

from conveyor_vla.network.layers import Embedding, FeedForward, Linear, RMSNorm
from conveyor_vla.network.module import Module
from conveyor_vla.network.mot import KVCache, MixtureOfTransformers, SegmentOutputs, route_segments

__all__ = [
    "Embedding",
    "FeedForward",
    "KVCache",
    "Linear",
    "MixtureOfTransformers",
    "Module",
    "RMSNorm",
    "SegmentOutputs",
    "route_segments",
]
