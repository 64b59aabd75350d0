import zlib
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

from ..config import ModelConfig
from ..engine import Tensor, no_grad
from ..engine import functional as F
from ..utilities.constants import SHARED_KEY, SUBJECT_NORM_EPS
from ..utilities.errors import (
    ConfigError,
    DimensionError,
    DuplicateSubjectError,
    UnknownSubjectError,
)
from ..utilities.logging import get_logger
from .layers import (
    DomainClassifier,
    Encoder,
    Linear,
    Module,
    Reconstructer,
    ResFuse,
    SharedDecoder,
)

logger = get_logger(__name__)


@dataclass
class ParameterGroup:
    """A named parameter tensor; freezing toggles `requires_grad` in place."""
    name: str
    tensor: Tensor

    @property
    def trainable(self) -> bool:
        return self.tensor.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.tensor.requires_grad = flag


@dataclass
class ForwardOutputs:
    s: Tensor
    r: Tensor
    x_hat_s: Tensor
    x_hat_r: Tensor
    e_hat: Tensor
    y_dc: Tensor | None
    y_da: Tensor | None


@dataclass
class SubjectStats:
    """Per-feature moments of one subject's inputs and, once fitted, of its shared features."""
    input_mean: np.ndarray
    input_std: np.ndarray
    shared_mean: np.ndarray | None = None
    shared_std: np.ndarray | None = None

    def to_json(self) -> dict[str, list[float] | None]:
        return {
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "shared_mean": None if self.shared_mean is None else self.shared_mean.tolist(),
            "shared_std": None if self.shared_std is None else self.shared_std.tolist(),
        }

    @classmethod
    def from_json(cls, raw: dict[str, list[float] | None]) -> "SubjectStats":
        def arr(key: str) -> np.ndarray | None:
            value = raw.get(key)
            return None if value is None else np.asarray(value, dtype=np.float64)

        input_mean, input_std = arr("input_mean"), arr("input_std")
        if input_mean is None or input_std is None:
            raise ConfigError("subject statistics need input_mean and input_std")
        return cls(input_mean, input_std, arr("shared_mean"), arr("shared_std"))


@dataclass
class MindCrossModel:
    """Shared/specific encoders, reconstructers, fusers, decoder and classifiers."""
    config: ModelConfig
    specific_encoders: dict[str, Encoder]
    shared_encoder: Encoder
    specific_reconstructers: dict[str, Reconstructer]
    shared_reconstructer: Reconstructer
    fusers: dict[str, ResFuse]
    shared_decoder: SharedDecoder
    head_semantic: Linear
    dc_classifier: DomainClassifier
    da_classifier: DomainClassifier
    da_projection: Linear
    grl_scale: float = 1.0
    new_subjects: list[str] = field(default_factory=list)
    similarity_cache: dict[str, np.ndarray] = field(default_factory=dict)
    subject_stats: dict[str, SubjectStats] = field(default_factory=dict)

    @property
    def subjects(self) -> list[str]:
        """Every subject with a specific branch, training subjects first."""
        return list(self.specific_encoders)

    def subject_index(self, subject: str) -> int:
        """Domain label of a training subject."""
        try:
            return self.config.subjects.index(subject)
        except ValueError:
            raise UnknownSubjectError(f"{subject!r} is not a training subject") from None

    def _modules(self) -> Iterator[tuple[str, Module]]:
        for subject, enc in self.specific_encoders.items():
            yield f"encoder/{subject}", enc
        yield f"encoder/{SHARED_KEY}", self.shared_encoder
        for subject, rec in self.specific_reconstructers.items():
            yield f"reconstructer/{subject}", rec
        yield f"reconstructer/{SHARED_KEY}", self.shared_reconstructer
        for subject, fuser in self.fusers.items():
            yield f"fuser/{subject}", fuser
        yield "decoder", self.shared_decoder
        yield "head", self.head_semantic
        yield "dc_classifier", self.dc_classifier
        yield "da_classifier", self.da_classifier
        yield "da_projection", self.da_projection

    def groups(self) -> list[ParameterGroup]:
        return [ParameterGroup(name, tensor)
                for prefix, module in self._modules()
                for name, tensor in module.named_parameters(prefix)]

    def group(self, name: str) -> ParameterGroup:
        for g in self.groups():
            if g.name == name:
                return g
        raise KeyError(name)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {g.name: g.tensor.data.copy() for g in self.groups()}


def subject_prefixes(subject: str) -> tuple[str, ...]:
    """Name prefixes of the groups that belong to one subject's specific branch."""
    return (f"encoder/{subject}/", f"reconstructer/{subject}/", f"fuser/{subject}/")


def _subject_rng(seed: int, subject: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(subject.encode("utf-8"))])


def build(config: ModelConfig, rng: np.random.Generator | None = None) -> MindCrossModel:
    """Initializes every group; identical config and seed give identical parameters."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    m, h, d, n = config.in_dim, config.hidden, config.embed_dim, len(config.subjects)
    model = MindCrossModel(
        config=config,
        specific_encoders={s: Encoder(m, h, rng) for s in config.subjects},
        shared_encoder=Encoder(m, h, rng),
        specific_reconstructers={s: Reconstructer(h, m, rng) for s in config.subjects},
        shared_reconstructer=Reconstructer(h, m, rng),
        fusers={s: ResFuse(h, config.dropout_p, rng) for s in config.subjects},
        shared_decoder=SharedDecoder(h, config.dropout_p, rng),
        head_semantic=Linear(h, d, rng),
        dc_classifier=DomainClassifier(h, n, rng),
        da_classifier=DomainClassifier(h, n, rng),
        da_projection=Linear(h, n, rng),
        grl_scale=config.grl_scale,
    )
    logger.info(
        f"Built MindCross for {n} subjects (m={m}, h={h}, d={d}): "
        f"{parameter_count(model)} parameters"
    )
    return model


def parameter_count(model: MindCrossModel,
                    predicate: Callable[[ParameterGroup], bool] | None = None) -> int:
    return sum(g.tensor.size for g in model.groups() if predicate is None or predicate(g))


def _check_branch(model: MindCrossModel, subject: str) -> None:
    if subject not in model.specific_encoders:
        logger.error(f"Unknown subject {subject!r}; known: {model.subjects}")
        raise UnknownSubjectError(f"no specific branch for subject {subject!r}")


def _check_input(model: MindCrossModel, x: Tensor, subject: str) -> None:
    _check_branch(model, subject)
    if x.ndim != 2 or x.shape[1] != model.config.in_dim:
        raise DimensionError(f"input shape {x.shape} does not match (B, {model.config.in_dim})")


def _moments(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return values.mean(axis=0), np.sqrt(values.var(axis=0) + SUBJECT_NORM_EPS)


def _standardize(x: Tensor, mean: np.ndarray, std: np.ndarray) -> Tensor:
    return F.div(F.sub(x, mean), std)


def fit_subject_stats(model: MindCrossModel, subject: str, x: Any,
                      shared: bool = True) -> SubjectStats:
    """
    Records the moments that standardize `subject`'s shared path.

    Input moments come from `x` directly; with `shared`, the shared encoder is run
    once over the standardized inputs and the moments of its features are kept too.
    """
    values = np.asarray(x, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != model.config.in_dim or len(values) == 0:
        raise DimensionError(
            f"statistics need a non-empty (B, {model.config.in_dim}) batch, got {values.shape}"
        )
    stats = SubjectStats(*_moments(values))
    if shared and model.config.subject_norm:
        with no_grad():
            r = model.shared_encoder(_standardize(Tensor(values), stats.input_mean,
                                                  stats.input_std)).data
        stats.shared_mean, stats.shared_std = _moments(r)
    model.subject_stats[subject] = stats
    logger.debug(f"Fitted statistics of {subject!r} on {len(values)} trials (shared={shared})")
    return stats


def encode(model: MindCrossModel, x: Any, subject: str, via: str | None = None,
           batch_stats: bool = False) -> tuple[Tensor, Tensor]:
    """
    (specific, shared) features of a batch recorded from `subject`.

    Args:
        via: Specific branch to route the batch through; defaults to `subject`.
        batch_stats: Standardize the shared features with the batch's own moments
            instead of the stored ones; used while the shared encoder trains.
    """
    x = F.as_tensor(x)
    branch = subject if via is None else via
    _check_branch(model, subject)
    _check_input(model, x, branch)
    s = model.specific_encoders[branch](x)
    if not model.config.subject_norm:
        return s, model.shared_encoder(x)

    stats = model.subject_stats.get(subject)
    if stats is not None:
        x = _standardize(x, stats.input_mean, stats.input_std)
    r = model.shared_encoder(x)
    if batch_stats and x.shape[0] > 1:
        r = F.standardize_columns(r, SUBJECT_NORM_EPS)
    elif stats is not None and stats.shared_mean is not None and stats.shared_std is not None:
        r = _standardize(r, stats.shared_mean, stats.shared_std)
    return s, r


def decode(model: MindCrossModel, s: Tensor, r: Tensor, subject: str, training: bool = False,
           rng: np.random.Generator | None = None) -> Tensor:
    fused = model.fusers[subject](s, r, training, rng)
    return model.head_semantic(model.shared_decoder(fused, training, rng))


def forward_train(model: MindCrossModel, x: Any, subject: str, training: bool = False,
                  rng: np.random.Generator | None = None, reverse_gradients: bool = True,
                  with_domain_heads: bool = True, batch_stats: bool = False) -> ForwardOutputs:
    """
    Full training-phase forward pass of one subject's batch.

    Args:
        x: (B x m) inputs.
        subject: Subject whose specific branch is used.
        training: Enables dropout (needs `rng`).
        reverse_gradients: Route the da classifier through grad_reverse; off only
            for the dual-graph gradient oracle and forward-objective checks.
        with_domain_heads: Skip both domain classifiers when False (calibration).
        batch_stats: See `encode`.
    """
    s, r = encode(model, x, subject, batch_stats=batch_stats)
    y_dc = y_da = None
    if with_domain_heads:
        y_dc = model.dc_classifier(s)
        adversarial = F.grad_reverse(r, model.grl_scale) if reverse_gradients else r
        y_da = model.da_classifier(adversarial)
    return ForwardOutputs(
        s=s,
        r=r,
        x_hat_s=model.specific_reconstructers[subject](s),
        x_hat_r=model.shared_reconstructer(r),
        e_hat=decode(model, s, r, subject, training, rng),
        y_dc=y_dc,
        y_da=y_da,
    )


def branch_predict(model: MindCrossModel, x: Any, subject: str, via: str | None = None,
                   training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """head(decoder(ResFuse_via(E_via(x), E_shared(x)))) for a batch recorded from `subject`."""
    branch = subject if via is None else via
    s, r = encode(model, x, subject, via=branch)
    return decode(model, s, r, branch, training, rng)


def add_new_subject(model: MindCrossModel, subject: str, rng: np.random.Generator | None = None,
                    init: Literal["fresh", "copy"] = "fresh",
                    copy_from: str | None = None) -> None:
    """
    Adds a trainable encoder, reconstructer and fuser for an unseen subject.

    With `init="copy"` all three start as copies of `copy_from`'s branch.
    """
    if subject in model.specific_encoders or subject == SHARED_KEY:
        logger.error(f"Subject {subject!r} already has a branch")
        raise DuplicateSubjectError(f"subject {subject!r} already exists")
    if init == "copy" and copy_from not in model.specific_encoders:
        logger.error(f"Cannot copy a branch from {copy_from!r}; known: {model.subjects}")
        raise UnknownSubjectError(f"cannot copy a branch from {copy_from!r}")
    rng = rng if rng is not None else _subject_rng(model.config.seed, subject)
    cfg = model.config
    encoder = Encoder(cfg.in_dim, cfg.hidden, rng)
    reconstructer = Reconstructer(cfg.hidden, cfg.in_dim, rng)
    fuser = ResFuse(cfg.hidden, cfg.dropout_p, rng)
    if init == "copy":
        assert copy_from is not None
        encoder.copy_from(model.specific_encoders[copy_from])
        reconstructer.copy_from(model.specific_reconstructers[copy_from])
        fuser.copy_from(model.fusers[copy_from])
    model.specific_encoders[subject] = encoder
    model.specific_reconstructers[subject] = reconstructer
    model.fusers[subject] = fuser
    model.new_subjects.append(subject)
    source = f" from {copy_from!r}" if init == "copy" else ""
    logger.info(f"Added new subject {subject!r} ({init} branch{source})")


def set_trainable(model: MindCrossModel, predicate: Callable[[str], bool]) -> int:
    """Sets each group's trainable flag from `predicate(name)`; returns trainable parameters."""
    count = 0
    for g in model.groups():
        g.trainable = bool(predicate(g.name))
        if g.trainable:
            count += g.tensor.size
    logger.debug(f"{count} trainable parameters after set_trainable")
    return count
