import hashlib
import json
from pathlib import Path
from typing import Any, Literal, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .utilities.constants import CONFIG_VERSION, SHARED_KEY
from .utilities.errors import ConfigError
from .utilities.logging import get_logger

logger = get_logger(__name__)


class Settings(BaseSettings):
    """Loads runtime configuration from environment variables or .env file."""
    model_config = SettingsConfigDict(
        env_prefix="MINDCROSS_", env_file=".env", extra="ignore"
    )

    log_level: str = Field("INFO", description="Level for the mindcross logger tree")
    record_wall_time: bool = Field(
        True, description="Write wall times into metrics; disable for byte-identical reruns"
    )
    default_seed: int = Field(0, description="Seed used when neither flag nor file sets one")
    gradcheck_tolerance: float = Field(1e-4, description="Max relative error for gradcheck")
    eval_trials: int = Field(100, description="Distractor draws per sample in N-way top-K")


class ModelConfig(BaseModel):
    """Architecture of one MindCross network."""
    model_config = ConfigDict(extra="forbid")

    in_dim: int = Field(310, ge=1, description="Input feature length m")
    hidden: int = Field(2048, ge=1, description="Hidden width h")
    embed_dim: int = Field(..., ge=1, description="Semantic embedding length d")
    subjects: list[str] = Field(..., description="Training subject ids, in label order")
    dropout_p: float = Field(0.15, ge=0.0, lt=1.0, description="Dropout probability")
    grl_scale: float = Field(1.0, gt=0.0, description="Gradient reversal scale")
    subject_norm: bool = Field(
        True, description="Standardize the shared path with per-subject moments"
    )
    seed: int = Field(0, description="Initialization seed")

    @field_validator("subjects")
    @classmethod
    def _check_subjects(cls, subjects: list[str]) -> list[str]:
        if not subjects:
            raise ValueError("subjects must be non-empty")
        if len(set(subjects)) != len(subjects):
            raise ValueError(f"subjects must be unique, got {subjects}")
        if SHARED_KEY in subjects:
            raise ValueError(f"'{SHARED_KEY}' is reserved for the shared branch")
        return subjects


class LossWeights(BaseModel):
    """Weights of the training and calibration objectives."""
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(0.1, gt=0.0, description="Reconstruction weight")
    beta: float = Field(0.1, gt=0.0, description="Domain classification weight")
    gamma: float = Field(0.1, gt=0.0, description="Domain alignment weight")
    zeta: float = Field(0.1, gt=0.0, description="Difference loss weight")
    alpha_c: float = Field(0.1, gt=0.0, description="Calibration reconstruction weight")
    beta_c: float = Field(0.1, gt=0.0, description="Calibration difference weight")
    tau: float = Field(0.125, gt=0.0, description="SoftCLIP temperature")


LossTerm = Literal["rec", "dc", "da", "diff"]


class RunConfig(BaseModel):
    """Hyperparameters of the train, calibrate and test phases."""
    model_config = ConfigDict(extra="forbid")

    epochs_train: int = Field(1000, ge=1)
    epochs_calib: int = Field(200, ge=0)
    batch_size: int = Field(256, ge=2)
    learning_rate: float = Field(1e-3, ge=0.0)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    seed: int = 0
    weights: LossWeights = Field(default_factory=LossWeights)
    da_variant: Literal["grl", "kl", "lp"] = "grl"
    lp_p: Literal[1, 2] = 2
    top_k: int = Field(1, ge=1, description="K of the Top-K collaboration")
    lambda_collab: float = Field(1e-2, ge=0.0, description="Weight of the collaborative prediction")
    grl_scale: float = Field(1.0, gt=0.0)
    batch_mode: Literal["per_subject", "mixed"] = "per_subject"
    loss_terms: list[LossTerm] = Field(default_factory=lambda: ["rec", "dc", "da", "diff"])
    calib_loss: Literal["full", "align_only"] = "full"
    ce_reduction: Literal["sum", "mean"] = "sum"
    normalize_clip: bool = True
    renormalize_topk: bool = False

    @field_validator("loss_terms")
    @classmethod
    def _unique_terms(cls, terms: list[str]) -> list[str]:
        if len(set(terms)) != len(terms):
            raise ValueError(f"loss_terms contains duplicates: {terms}")
        return terms

    def check_top_k(self, n_subjects: int) -> None:
        """Raises unless 1 <= top_k <= n_subjects."""
        if self.top_k > n_subjects:
            logger.error(f"top_k={self.top_k} with only {n_subjects} training subjects")
            raise ConfigError(f"top_k={self.top_k} exceeds the {n_subjects} training subjects")


class SyntheticConfig(BaseModel):
    """Generator settings for the synthetic multi-subject benchmark."""
    model_config = ConfigDict(extra="forbid")

    n_subjects: int = Field(4, ge=1)
    n_classes: int = Field(10, ge=2)
    trials_per_class_per_subject: int = Field(100, ge=1)
    m: int = Field(310, ge=1)
    d: int = Field(32, ge=1)
    latent_dim: int = Field(16, ge=1)
    noise_sigma: float = Field(0.1, ge=0.0)
    subject_perturbation: float = Field(1.0, ge=0.0)
    clone_source: str | None = None
    clone_perturbation: float = Field(0.05, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_dims(self) -> "SyntheticConfig":
        if self.latent_dim > self.m:
            raise ValueError(f"latent_dim ({self.latent_dim}) must not exceed m ({self.m})")
        if self.clone_source is not None and self.clone_source not in self.subject_ids():
            raise ValueError(f"clone_source {self.clone_source!r} is not a generated subject")
        return self

    def subject_ids(self) -> list[str]:
        return [f"subj{i + 1}" for i in range(self.n_subjects)]


class ArchitectureConfig(BaseModel):
    """Model fields that are not implied by the data."""
    model_config = ConfigDict(extra="forbid")

    hidden: int = Field(2048, ge=1)
    dropout_p: float = Field(0.15, ge=0.0, lt=1.0)
    pool_length: int | None = Field(None, ge=1, description="Adaptive pool target; default m")
    subject_norm: bool = True


class SynthConfigFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config_version: int = CONFIG_VERSION
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)


class TrainConfigFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config_version: int = CONFIG_VERSION
    model: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    run: RunConfig = Field(default_factory=RunConfig)


ConfigT = TypeVar("ConfigT", bound=BaseModel)


def load_config_file(path: Path | None, model_cls: type[ConfigT],
                     overrides: dict[str, Any] | None = None) -> ConfigT:
    """Reads a versioned JSON config, applies dotted-key overrides and validates it."""
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            logger.error(f"Config file {path} is not valid JSON: {e}")
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        version = raw.get("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(
                f"{path}: config_version {version} is not supported (expected {CONFIG_VERSION})"
            )
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    try:
        return model_cls.model_validate(raw)
    except ValidationError as e:
        for err in e.errors():
            field = ".".join(str(p) for p in err["loc"])
            logger.error(f"Invalid config field {field}: {err['msg']}")
        raise


def config_digest(config: BaseModel | dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON of a config."""
    payload = config.model_dump(mode="json") if isinstance(config, BaseModel) else config
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# Load settings once
settings = Settings()
