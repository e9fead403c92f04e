"""Model and training hyperparameters.

Defaults follow the full-scale setup (200-d embeddings, 300-d transformer,
256-d BiGRU, F=3, 50 decoding steps). Tests and the acceptance suite use
much smaller desk-scale values; see ``desk_model_config``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

ABLATIONS = ("no_sse", "no_rcr", "no_af", "no_al")


@dataclass(frozen=True)
class ModelConfig:
    vocab_cap: int = 50_000
    d_embed: int = 200
    d_model: int = 300
    n_heads: int = 6
    d_ff: int = 50
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    gru_hidden: int = 256  # both directions together
    gru_layers: int = 2
    salience_ff: Optional[int] = None  # defaults to gru_hidden
    scale_salience_attention: bool = False
    tie_salience_embeddings: bool = True
    pool_window: int = 3
    n_focused: int = 3
    max_tags: int = 20
    max_decode_steps: int = 50
    n_clusters: Optional[int] = None  # None -> choose_k(M)
    kmeans_iters: int = 100
    kmeans_restarts: int = 10
    cluster_seed: int = 0
    dropout: float = 0.2  # keep rate 0.8

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.gru_hidden % 2:
            raise ValueError("gru_hidden must be even (split across directions)")
        if self.n_focused < 1 or self.n_focused % 2 == 0:
            raise ValueError(f"n_focused must be a positive odd number, got {self.n_focused}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")


@dataclass(frozen=True)
class TrainConfig:
    lambda_cla: float = 1.0
    lambda_aln: float = 1.0
    lambda_gen: float = 1.0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup: int = 4000
    label_smoothing: float = 0.1
    batch_size: int = 16
    max_epochs: int = 50
    max_steps: Optional[int] = None
    patience: int = 3
    clip_norm: Optional[float] = None
    seed: int = 0
    ablations: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("lambda_cla", "lambda_aln", "lambda_gen"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must be in [0, 1)")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation flag(s): {sorted(unknown)}")
        # canonical order makes flag sets hashable/comparable and idempotent
        object.__setattr__(self, "ablations", tuple(a for a in ABLATIONS if a in self.ablations))


def desk_model_config(**overrides) -> ModelConfig:
    """A small model that trains in minutes on one CPU core."""
    base = dict(
        vocab_cap=5000, d_embed=32, d_model=48, n_heads=4, d_ff=64,
        n_enc_layers=1, n_dec_layers=2, gru_hidden=32, gru_layers=2,
        dropout=0.1,
    )
    base.update(overrides)
    return ModelConfig(**base)


def desk_train_config(**overrides) -> TrainConfig:
    """Training settings matched to ``desk_model_config``.

    The full-scale 1e-4 rate with 4000 warmup steps barely moves a model
    trained for a few hundred steps, so the desk setup warms up faster and
    caps the rate higher.
    """
    base = dict(lr=3e-3, warmup=50, batch_size=8, max_epochs=40)
    base.update(overrides)
    return TrainConfig(**base)


def _split_fields(flat: dict[str, Any]) -> tuple[dict, dict]:
    model_keys = {f.name for f in dataclasses.fields(ModelConfig)}
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    model_kw, train_kw = {}, {}
    for key, value in flat.items():
        if key in model_keys:
            model_kw[key] = value
        elif key in train_keys:
            train_kw[key] = tuple(value) if key == "ablations" else value
        else:
            raise KeyError(f"unknown config key: {key!r}")
    return model_kw, train_kw


def configs_from_dict(flat: dict[str, Any]) -> tuple[ModelConfig, TrainConfig]:
    model_kw, train_kw = _split_fields(flat)
    return ModelConfig(**model_kw), TrainConfig(**train_kw)


def configs_to_dict(model_cfg: ModelConfig, train_cfg: TrainConfig) -> dict[str, Any]:
    flat = dataclasses.asdict(model_cfg)
    train = dataclasses.asdict(train_cfg)
    train["ablations"] = list(train["ablations"])
    flat.update(train)
    return flat


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Read a flat JSON key/value config file."""
    with open(Path(path), encoding="utf-8") as fh:
        flat = json.load(fh)
    if not isinstance(flat, dict):
        raise ValueError(f"{path}: config must be a flat JSON object")
    return configs_from_dict(flat)
