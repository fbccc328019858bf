from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

SAMPLE_RATE = 16000
HOP_LENGTH = 200  # 12.5 ms
WIN_LENGTH = 800  # 50 ms
N_FFT = 1024
N_MELS = 80
BN_DIM = 512
LOG_FLOOR = 1e-5

ABLATION_MODES = ("full", "no_bn_encoder", "no_bn_decoder", "no_bn_both")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_symbols: int = 256
    n_speakers: int = 8
    hidden: int = 192
    latent: int = 192
    speaker_dim: int = 256
    ffn_hidden: int = 768
    n_heads: int = 2
    text_blocks: int = 4
    frame_blocks: int = 4
    ffn_kernel: int = 3
    conv_layers: int = 4
    conv_kernel: int = 5
    dropout: float = 0.1
    flow_layers: int = 4
    flow_wn_layers: int = 4
    flow_kernel: int = 5
    flow_mean_only: bool = True
    upsample_rates: tuple[int, ...] = (5, 5, 4, 2)
    upsample_kernels: tuple[int, ...] = (10, 10, 8, 4)
    upsample_initial: int = 512
    resblock_kernels: tuple[int, ...] = (3, 7, 11)
    resblock_dilations: tuple[tuple[int, ...], ...] = ((1, 3, 5), (1, 3, 5), (1, 3, 5))
    mpd_periods: tuple[int, ...] = (2, 3, 5, 7, 11)
    mpd_channels: tuple[int, ...] = (32, 128, 512, 1024)
    msd_channels: tuple[int, ...] = (16, 64, 256, 1024, 1024)
    msd_scales: int = 3
    bn_dim: int = BN_DIM
    ablation: str = "full"

    def __post_init__(self) -> None:
        # yaml / json round-trips hand back lists
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
                setattr(self, f.name, v)
        self.validate()

    def validate(self) -> None:
        if self.ablation not in ABLATION_MODES:
            raise ConfigError(f"unknown ablation mode {self.ablation!r}")
        if math.prod(self.upsample_rates) != HOP_LENGTH:
            raise ConfigError(
                f"upsample rates {self.upsample_rates} multiply to "
                f"{math.prod(self.upsample_rates)}, need {HOP_LENGTH}"
            )
        if len(self.upsample_kernels) != len(self.upsample_rates):
            raise ConfigError("upsample_kernels and upsample_rates differ in length")
        if self.latent % 2 or self.acoustic_channels % 2:
            raise ConfigError("latent channels must be even for coupling splits")
        if self.hidden % self.n_heads:
            raise ConfigError("hidden must be divisible by n_heads")
        if len(self.resblock_kernels) != len(self.resblock_dilations):
            raise ConfigError("resblock kernels/dilations differ in length")

    @property
    def uses_bn_encoder(self) -> bool:
        return self.ablation in ("full", "no_bn_decoder")

    @property
    def uses_bn_decoder(self) -> bool:
        return self.ablation in ("full", "no_bn_encoder")

    @property
    def acoustic_channels(self) -> int:
        """Channel count of z_ac; in no_bn_both the prior lives in BN space."""
        return self.bn_dim if self.ablation == "no_bn_both" else self.latent

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ModelConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def toy(cls, **overrides: Any) -> ModelConfig:
        """CPU-sized preset used by the tests and the toy scripts."""
        base = dict(
            hidden=32,
            latent=32,
            speaker_dim=16,
            ffn_hidden=64,
            n_heads=2,
            text_blocks=2,
            frame_blocks=2,
            conv_layers=2,
            flow_layers=4,
            flow_wn_layers=2,
            upsample_initial=32,
            resblock_kernels=(3,),
            resblock_dilations=((1, 3),),
            mpd_channels=(4, 8, 16, 16),
            msd_channels=(4, 8, 16, 16, 16),
            dropout=0.0,
        )
        base.update(overrides)
        return cls(**base)


@dataclass
class TrainConfig:
    steps: int = 400_000
    batch: int = 24
    lr: float = 2e-4
    betas: tuple[float, float] = (0.8, 0.99)
    eps: float = 1e-9
    lr_decay: float = 0.999875
    slice_frames: int = 32
    alpha: float = 45.0
    lam: float = 1.0
    bn_mse_weight: float = 1.0
    log_duration: bool = False
    grad_clip: float | None = None
    seed: int = 1234
    log_every: int = 1
    checkpoint_every: int = 10_000

    def __post_init__(self) -> None:
        self.betas = tuple(self.betas)  # type: ignore[assignment]
        if self.slice_frames < 1:
            raise ConfigError("slice_frames must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def toy(cls, **overrides: Any) -> TrainConfig:
        base = dict(batch=2, slice_frames=16, steps=2000, lr=5e-4)
        base.update(overrides)
        return cls(**base)


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def load_config(path: str | Path | None, *, toy: bool = False) -> ExperimentConfig:
    """Read a YAML (or JSON) file with optional ``model:`` / ``train:`` sections."""
    raw: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        extra = set(raw) - {"model", "train"}
        if extra:
            raise ConfigError(f"{path}: unknown sections {sorted(extra)}")
    model_kw = raw.get("model") or {}
    train_kw = raw.get("train") or {}
    if toy:
        return ExperimentConfig(ModelConfig.toy(**model_kw), TrainConfig.toy(**train_kw))
    return ExperimentConfig(ModelConfig.from_dict(model_kw), TrainConfig.from_dict(train_kw))
