"""Flat JSON run configuration with strict key checking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .metrics import SHORT_TERM_MS, HorizonError, HorizonSpec, horizon_to_frame
from .model import ConfigError, ModelConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # training
    seed: int = 0
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    loss_terms: list[str] = field(default_factory=lambda: ["forward", "reverse"])
    decoder_mode: str = "decoupled"
    squared_loss: bool = True
    clip_norm: float | None = None
    # model
    encoder: str = "gru"
    activation: str = "relu"
    d_e: int = 16
    d_h: int = 32
    feature: int = 32
    gcn_layers: int = 2
    residual: bool = True
    # data
    t_p: int = 10
    t_f: int = 10
    joints: int = 8
    fps: float = 25.0
    stride: int | None = None
    normalize: bool = True
    val_fraction: float = 0.2
    # evaluation
    horizons_ms: list[float] = field(default_factory=lambda: list(SHORT_TERM_MS))
    average_over: str = "horizons"
    compute_fid: bool = True
    ablation_seeds: list[int] | None = None

    def __post_init__(self):
        self.validate()

    @property
    def window_stride(self) -> int:
        return self.stride if self.stride is not None else self.t_f

    def validate(self) -> None:
        ints = ("seed", "epochs", "batch_size", "d_e", "d_h", "feature", "gcn_layers", "t_p", "t_f", "joints")
        for name in ints:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{name}: expected an integer, got {v!r}")
        if self.seed < 0:
            raise ConfigError("seed: must be >= 0")
        for name in ("learning_rate", "fps"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                raise ConfigError(f"{name}: expected a positive number, got {v!r}")
        for name in ("squared_loss", "residual", "normalize", "compute_fid"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name}: expected true/false")
        if self.stride is not None and (not isinstance(self.stride, int) or self.stride < 1):
            raise ConfigError(f"stride: expected a positive integer or null, got {self.stride!r}")
        if not (isinstance(self.val_fraction, (int, float)) and 0 < self.val_fraction < 1):
            raise ConfigError(f"val_fraction: expected a number in (0, 1), got {self.val_fraction!r}")
        if self.average_over not in ("horizons", "frames"):
            raise ConfigError("average_over: expected 'horizons' or 'frames'")
        if not isinstance(self.horizons_ms, list) or not self.horizons_ms:
            raise ConfigError("horizons_ms: expected a non-empty list")
        for ms in self.horizons_ms:
            try:
                horizon_to_frame(float(ms), float(self.fps), self.t_f)
            except (HorizonError, TypeError, ValueError) as exc:
                raise ConfigError(f"horizons_ms: {exc}") from None
        if self.ablation_seeds is not None:
            if not isinstance(self.ablation_seeds, list) or not self.ablation_seeds or not all(
                isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in self.ablation_seeds
            ):
                raise ConfigError("ablation_seeds: expected a non-empty list of non-negative integers")
        self.model_config()
        self.train_config()

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            joints=self.joints, t_p=self.t_p, t_f=self.t_f, d_e=self.d_e, d_h=self.d_h,
            feature=self.feature, encoder=self.encoder, decoder_mode=self.decoder_mode,
            activation=self.activation, residual=self.residual, gcn_layers=self.gcn_layers,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=float(self.learning_rate),
            optimizer=self.optimizer, loss_terms=tuple(self.loss_terms), decoder_mode=self.decoder_mode,
            squared_loss=self.squared_loss, seed=self.seed, clip_norm=self.clip_norm,
        )

    def horizon_spec(self) -> HorizonSpec:
        return HorizonSpec([float(h) for h in self.horizons_ms], float(self.fps))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
