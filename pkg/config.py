import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import ConfigError

N_PROPERTIES = 3
PROPERTY_NAMES = ("plogp", "qed", "drd2")


def _settings(**kwargs) -> SettingsConfigDict:
    return SettingsConfigDict(env_prefix="CMG_", extra="ignore", **kwargs)


class ModelConfig(BaseSettings):
    """Network sizes for the translator and the constraint networks"""

    model_config = _settings()

    d: int = Field(64, ge=1)
    heads: int = Field(4, ge=1)
    enc_layers: int = Field(2, ge=1)
    dec_layers: int = Field(2, ge=1)
    ff: int = Field(128, ge=1)
    max_len: int = Field(64, ge=3)
    k: int = N_PROPERTIES

    # Constraint networks (PropNet / SimNet)
    rnn_d: int = Field(64, ge=1)

    init_seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.k != N_PROPERTIES:
            raise ValueError(f"k must be {N_PROPERTIES}")
        return self


class TrainConfig(BaseSettings):
    """Optimisation settings shared by pre-training and CMG training"""

    model_config = _settings()

    lambda_p: float = Field(0.5, ge=0.0)
    lambda_s: float = Field(0.5, ge=0.0)
    lr: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(16, ge=1)
    max_epochs: int = Field(50, ge=1)
    patience: int = Field(10, ge=1)
    seed: int = 0
    optimizer: Literal["adam", "sgd"] = "adam"


class DataConfig(BaseSettings):
    """Curation settings"""

    model_config = _settings()

    delta: float = Field(0.4, gt=0.0, le=1.0)
    radius: int = Field(2, ge=0)
    n_bits: int = Field(2048, ge=1)
    split_ratio: float = Field(0.8, gt=0.0, lt=1.0)
    simnet_fraction: float = Field(1.0, gt=0.0, le=1.0)
    positive_ratio: float = Field(0.5, gt=0.0, lt=1.0)
    bins: int = Field(10, ge=1)
    negative_cap: int = Field(5, ge=1)
    ordered_pairs: bool = True
    seed: int = 0

    @field_validator("n_bits")
    @classmethod
    def _power_of_two(cls, v: int) -> int:
        if v & (v - 1):
            raise ValueError(f"n_bits must be a power of two, got {v}")
        return v


class DecodeConfig(BaseSettings):
    """Beam search, rescoring and target jitter"""

    model_config = _settings()

    beam_width: int = Field(5, ge=1)
    max_len: int = Field(64, ge=3)
    n_samples: int = Field(20, ge=1)
    sigma: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    length_norm: bool = False

    # Ablation switches
    modified_beam: bool = True
    use_propnet: bool = True
    use_simnet: bool = True
    seed: int = 0

    @field_validator("sigma", mode="before")
    @classmethod
    def _split_sigma(cls, v):
        if isinstance(v, str):
            v = [part for part in v.replace(" ", "").split(",") if part]
        return v

    @field_validator("sigma")
    @classmethod
    def _non_negative(cls, v):
        if any(s < 0 for s in v):
            raise ValueError("sigma entries must be non-negative")
        return v


class RuntimeConfig(BaseSettings):
    """Process-level settings"""

    model_config = _settings()

    threads: int = Field(1, ge=1)
    log_level: str = "INFO"
    progress: bool = True


class MooCriteria(BaseModel):
    """Success criteria for multi-objective optimisation"""

    delta: float = 0.4
    min_plogp_gain: float = 1.0
    min_qed: float = 0.9
    min_drd2: float = 0.5  # exclusive


def load_config_file(path) -> dict:
    """Parse a key=value file. Keys may be plain (`lr`) or sectioned (`train.lr`)."""
    values = {}
    path = Path(path)
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        values[key] = value
    return values


SECTIONS = {
    ModelConfig: "model",
    TrainConfig: "train",
    DataConfig: "data",
    DecodeConfig: "decode",
    RuntimeConfig: "runtime",
}


def build_settings(cls, file_values: Optional[dict] = None, **overrides):
    """Instantiate a settings class: overrides > config file > environment > defaults."""
    section = SECTIONS.get(cls)
    kwargs = {}
    for key, value in (file_values or {}).items():
        name = key
        if "." in key:
            prefix, name = key.split(".", 1)
            if prefix != section:
                continue
        if name in cls.model_fields:
            kwargs[name] = value
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**kwargs)


def config_hash(*models: BaseModel) -> str:
    payload = json.dumps(
        [type(m).__name__ for m in models] + [m.model_dump(mode="json") for m in models],
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
