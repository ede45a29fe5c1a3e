"""Run configuration: one flat record for every hyperparameter.

Defaults are the desk profile (small enough that the whole pipeline runs on
one CPU core in minutes).  ``paper_profile`` switches to the full-scale
dimensions reported for the original setup; nothing in this package is
expected to be trained at that scale, it exists so the configuration space
is faithful.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from dataclasses import dataclass

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class RunConfig:
    seed: int = 0

    # encoder architecture
    n_layers: int = 2
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 512
    vocab_size: int = 8192
    max_len: int = 128

    # masking
    r_enc: float = 0.3
    r_dec: float = 0.5

    # decoder / pre-training objective
    dec_heads: int = 1
    cls_decoding: bool = True
    ot_decoding: bool = True

    # representation
    d_prime: int = 64
    top_k: int = 64
    query_sparsify: bool = False

    # optimizer
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01

    # schedules
    pretrain_steps: int = 500
    pretrain_batch: int = 16
    finetune_lr: float = 5e-4
    finetune_batch: int = 16
    stage1_epochs: int = 4
    stage2_epochs: int = 4
    stage3_epochs: int = 4
    n_hard_negatives: int = 8
    temperature: float = 1.0

    # teacher for stage-3 distillation: "cross-encoder" or "oracle"
    teacher: str = "cross-encoder"
    teacher_epochs: int = 8
    teacher_lr: float = 1e-3

    # default data locations, overridable by CLI flags
    corpus_path: str = ""
    queries_path: str = ""
    qrels_path: str = ""

    def validate(self) -> None:
        if not 0.0 < self.r_enc < 1.0:
            raise ConfigError(f"r_enc must be in (0, 1), got {self.r_enc}")
        if not 0.0 < self.r_dec < 1.0:
            raise ConfigError(f"r_dec must be in (0, 1), got {self.r_dec}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % self.dec_heads != 0:
            raise ConfigError(f"d_model={self.d_model} not divisible by dec_heads={self.dec_heads}")
        if self.d_prime > self.d_model:
            raise ConfigError(f"d_prime={self.d_prime} exceeds d_model={self.d_model}")
        if self.top_k > self.vocab_size:
            raise ConfigError(f"top_k={self.top_k} exceeds vocab_size={self.vocab_size}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if self.vocab_size > 65536:
            raise ConfigError(f"vocab_size={self.vocab_size} exceeds the 16-bit sparse-id limit (65536)")
        if self.vocab_size < 6:
            raise ConfigError(f"vocab_size must be >= 6, got {self.vocab_size}")
        if self.max_len < 3:
            raise ConfigError(f"max_len must be >= 3, got {self.max_len}")
        if self.teacher not in ("cross-encoder", "oracle"):
            raise ConfigError(f"teacher must be 'cross-encoder' or 'oracle', got {self.teacher!r}")
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "pretrain_batch", "finetune_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    def validate_for_pretraining(self) -> None:
        self.validate()
        if not (self.cls_decoding or self.ot_decoding):
            raise ConfigError("at least one of cls_decoding / ot_decoding must be true for pre-training")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "RunConfig":
        return cls(**json.loads(blob))

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)


def paper_profile() -> RunConfig:
    """Full-scale configuration: 12-layer 768-dim encoder, 30522-token
    vocabulary, 384-dim projections with 384 retained sparse entries."""
    return RunConfig(
        n_layers=12,
        d_model=768,
        n_heads=12,
        d_ff=3072,
        vocab_size=30522,
        max_len=512,
        d_prime=384,
        top_k=384,
    )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def load_config(path) -> RunConfig:
    """Read a flat TOML file of RunConfig keys; unknown keys are errors."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(raw, source=str(path))


def config_from_mapping(raw: dict, source: str = "<mapping>") -> RunConfig:
    base = RunConfig()
    if raw.get("profile") == "paper":
        base = paper_profile()
    values = {}
    for key, value in raw.items():
        if key == "profile":
            if value not in ("desk", "paper"):
                raise ConfigError(f"{source}: unknown profile {value!r}")
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}: unknown config key {key!r}")
        current = getattr(base, key)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{source}: key {key!r} expects a boolean, got {value!r}")
        elif isinstance(current, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{source}: key {key!r} expects an integer, got {value!r}")
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{source}: key {key!r} expects a number, got {value!r}")
            value = float(value)
        values[key] = value
    cfg = base.replace(**values)
    cfg.validate()
    return cfg
