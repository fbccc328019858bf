"""Hierarchical CVAE accent-transfer TTS with bottleneck-feature constraints."""

from accent_vits.config import ABLATION_MODES, ModelConfig, TrainConfig

__version__ = "0.1.0"

__all__ = ["ABLATION_MODES", "ModelConfig", "TrainConfig", "__version__"]
