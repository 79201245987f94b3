"""Causal audio-visual fusion, audio-guided contrastive losses and online tracking."""

__version__ = "0.1.0"

from .agcl import (  # noqa: E402
    FrameContrastSet,
    InstanceContrastSet,
    LossWeights,
    frame_contrastive_loss,
    instance_contrastive_loss,
    total_loss,
)
from .ccaf import CausalCrossAttentionFusion, build_causal_mask, fuse_level  # noqa: E402
from .synth import ScenarioConfig, generate  # noqa: E402
from .tracker import MemoryBankTracker, TrackerConfig  # noqa: E402

__all__ = [
    "CausalCrossAttentionFusion",
    "FrameContrastSet",
    "InstanceContrastSet",
    "LossWeights",
    "MemoryBankTracker",
    "ScenarioConfig",
    "TrackerConfig",
    "build_causal_mask",
    "frame_contrastive_loss",
    "fuse_level",
    "generate",
    "instance_contrastive_loss",
    "total_loss",
]
