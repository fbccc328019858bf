from accent_vits.model.commons import (
    GaussianSeq,
    LatentSeq,
    ModeError,
    length_regulate,
    reparam_sample,
    sequence_mask,
    slice_segments,
)
from accent_vits.model.discriminators import MultiDiscriminator
from accent_vits.model.network import AccentVITS, TrainOutputs, build_models, round_durations

__all__ = [
    "AccentVITS",
    "GaussianSeq",
    "LatentSeq",
    "ModeError",
    "MultiDiscriminator",
    "TrainOutputs",
    "build_models",
    "length_regulate",
    "reparam_sample",
    "round_durations",
    "sequence_mask",
    "slice_segments",
]
