"""Training and calibration loops."""

import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from ..config import ModelConfig, RunConfig, settings
from ..data.records import SubjectArrays, TrialRecord, stack_records
from ..engine import Tape, Tensor, backward, zero_grad
from ..engine import functional as F
from ..losses import (
    TrainLossComponents,
    alignment_loss,
    difference_loss,
    domain_alignment_loss_grl,
    domain_alignment_loss_kl,
    domain_alignment_loss_lp,
    domain_classification_loss,
    reconstruction_loss,
    total_calibration_loss,
    total_train_loss,
)
from ..models.mindcross import (
    MindCrossModel,
    ParameterGroup,
    add_new_subject,
    build,
    fit_subject_stats,
    forward_train,
    set_trainable,
    subject_prefixes,
)
from ..utilities.constants import NEW_SUBJECT_KEY
from ..utilities.errors import (
    ConfigError,
    FrozenParameterDriftError,
    NumericalError,
    UnknownSubjectError,
)
from ..utilities.logging import get_logger
from .history import EpochRecord, TrainHistory, rng_digest
from .inference import nearest_subject, similarity
from .optim import AdamState, adam_step

logger = get_logger(__name__)

SubjectData = Mapping[str, Sequence[TrialRecord] | SubjectArrays]
DriftHook = Callable[[MindCrossModel], None]


@dataclass
class _Chunk:
    subject: str
    data: SubjectArrays


def _stack_all(data: SubjectData, subjects: Sequence[str]) -> dict[str, SubjectArrays]:
    stacked = {}
    for subject in subjects:
        records = data.get(subject)
        if records is None or len(records) == 0:
            logger.error(f"No training data for subject {subject!r}")
            raise ConfigError(f"subject {subject!r} has no data")
        stacked[subject] = stack_records(records)
    return stacked


def _epoch_order(n: int, length: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffled indices of length `length`, repeating fresh permutations when n < length."""
    reps = -(-length // n)
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:length]


def resolve_batch_mode(config: RunConfig, n_subjects: int) -> str:
    """KL and Lp alignment compare subjects within one step, so they need mixed batches."""
    needs_mixed = "da" in config.loss_terms and config.da_variant in ("kl", "lp")
    if not needs_mixed:
        return config.batch_mode
    if n_subjects < 2:
        raise ConfigError(f"da_variant {config.da_variant!r} needs at least two subjects")
    if config.batch_mode == "per_subject":
        logger.warning(f"da_variant {config.da_variant!r} runs on mixed batches; "
                       f"switching batch_mode from per_subject to mixed")
    return "mixed"


def _train_components(model: MindCrossModel, chunks: Sequence[_Chunk], config: RunConfig,
                      rng: np.random.Generator) -> TrainLossComponents:
    outputs = {c.subject: forward_train(model, c.data.x, c.subject, training=True, rng=rng,
                                        batch_stats=True)
               for c in chunks}
    cat = F.concat_rows
    x = Tensor(np.concatenate([c.data.x for c in chunks]))
    e = Tensor(np.concatenate([c.data.e for c in chunks]))
    labels = np.concatenate([np.full(len(c.data), model.subject_index(c.subject)) for c in chunks])
    outs = [outputs[c.subject] for c in chunks]
    w = config.weights
    terms = set(config.loss_terms)

    components = TrainLossComponents(
        align=alignment_loss(cat([o.e_hat for o in outs]), e, w.tau, config.normalize_clip)
    )
    if "rec" in terms:
        components.rec = reconstruction_loss(cat([o.x_hat_s for o in outs]),
                                             cat([o.x_hat_r for o in outs]), x)
    if "dc" in terms:
        y_dc = [o.y_dc for o in outs if o.y_dc is not None]
        components.dc = domain_classification_loss(cat(y_dc), labels, config.ce_reduction)
    if "da" in terms:
        if config.da_variant == "grl":
            y_da = [o.y_da for o in outs if o.y_da is not None]
            components.da = domain_alignment_loss_grl(cat(y_da), labels, config.ce_reduction)
        elif config.da_variant == "kl":
            components.da = domain_alignment_loss_kl({s: o.r for s, o in outputs.items()},
                                                     model.da_projection)
        else:
            components.da = domain_alignment_loss_lp({s: o.r for s, o in outputs.items()},
                                                     config.lp_p)
    if "diff" in terms:
        components.diff = difference_loss(cat([o.s for o in outs]), cat([o.r for o in outs]))
    return components


def _check_finite(loss: Tensor, phase: str, epoch: int, step: int,
                  values: dict[str, float]) -> None:
    if np.isfinite(loss.item()):
        return
    logger.error(f"Non-finite {phase} loss at epoch {epoch}, step {step}: {values}")
    raise NumericalError(f"non-finite {phase} loss at epoch {epoch}, step {step}: {values}")


def _summarize(phase: str, epoch: int, sums: dict[str, float], total: float, steps: int,
               config: RunConfig, start: float, rng: np.random.Generator,
               record_wall_time: bool) -> EpochRecord:
    denom = max(steps, 1)
    return EpochRecord(
        phase=phase,  # type: ignore[arg-type]
        epoch=epoch,
        steps=steps,
        losses={k: v / denom for k, v in sums.items()},
        total=total / denom,
        learning_rate=config.learning_rate,
        wall_time=(time.perf_counter() - start) if record_wall_time else None,
        rng_digest=rng_digest(rng),
    )


def _optimize(groups: Sequence[ParameterGroup], state: AdamState,
              build_loss: Callable[[], tuple[Tensor, dict[str, float]]],
              phase: str, epoch: int, step: int) -> tuple[float, dict[str, float]]:
    trainable = [g.tensor for g in groups if g.trainable]
    zero_grad(trainable)
    with Tape():
        loss, values = build_loss()
        _check_finite(loss, phase, epoch, step, values)
        backward(loss)
    adam_step(groups, state)
    return loss.item(), values


def train(model: MindCrossModel, data: SubjectData, config: RunConfig,
          record_wall_time: bool | None = None) -> TrainHistory:
    """
    Jointly trains encoders, reconstructers, fusers, decoder and classifiers.

    One epoch is one pass over the largest subject; smaller subjects are resampled.
    In per-subject mode each step sees one subject's chunk and subjects take turns;
    in mixed mode each step concatenates one chunk per subject. Shared features are
    standardized with each chunk's own moments while training; the stored per-subject
    moments are refitted on the full data afterwards.
    """
    subjects = list(model.config.subjects)
    if not data:
        raise ConfigError("training data is empty")
    stacked = _stack_all(data, subjects)
    mode = resolve_batch_mode(config, len(subjects))
    record_wall_time = settings.record_wall_time if record_wall_time is None else record_wall_time

    sizes = {s: len(a) for s, a in stacked.items()}
    longest = max(sizes.values())
    short = [s for s, n in sizes.items() if n < longest]
    if short:
        logger.warning(f"Resampling subjects {short} up to {longest} trials per epoch")

    for subject in subjects:
        fit_subject_stats(model, subject, stacked[subject].x, shared=False)
    model.grl_scale = config.grl_scale
    new_prefixes = tuple(p for s in model.new_subjects for p in subject_prefixes(s))
    set_trainable(model, lambda name: not name.startswith(new_prefixes))
    groups = model.groups()
    state = AdamState.from_config(config)
    rng = np.random.default_rng(config.seed)
    chunk = (config.batch_size if mode == "per_subject"
             else max(1, config.batch_size // len(subjects)))
    n_batches = -(-longest // chunk)
    history = TrainHistory(phase="train", config=config.model_dump(mode="json"))

    logger.info(f"Training {len(subjects)} subjects for {config.epochs_train} epochs "
                f"({mode} batches, da={config.da_variant}, terms={config.loss_terms})")
    start = time.perf_counter()
    for epoch in range(1, config.epochs_train + 1):
        orders = {s: _epoch_order(sizes[s], longest, rng) for s in subjects}
        batches: list[list[_Chunk]] = []
        for b in range(n_batches):
            parts = [_Chunk(s, stacked[s].take(orders[s][b * chunk:(b + 1) * chunk]))
                     for s in subjects]
            batches.extend([[p] for p in parts] if mode == "per_subject" else [parts])

        sums: dict[str, float] = {}
        total = 0.0
        for step, chunks in enumerate(batches):
            def build_loss(chunks: list[_Chunk] = chunks) -> tuple[Tensor, dict[str, float]]:
                components = _train_components(model, chunks, config, rng)
                return total_train_loss(components, config.weights), components.values()

            value, values = _optimize(groups, state, build_loss, "train", epoch, step)
            total += value
            for k, v in values.items():
                sums[k] = sums.get(k, 0.0) + v
        record = _summarize("train", epoch, sums, total, len(batches), config, start, rng,
                            record_wall_time)
        history.records.append(record)
        logger.debug(f"train epoch {epoch}: total={record.total:.6f} {record.losses}")
    for subject in subjects:
        fit_subject_stats(model, subject, stacked[subject].x)
    logger.info(f"Training finished: final loss {history.records[-1].total:.6f}")
    return history


def calibrate(model: MindCrossModel, data: Sequence[TrialRecord] | SubjectArrays,
              config: RunConfig, subject: str = NEW_SUBJECT_KEY,
              drift_hook: DriftHook | None = None,
              record_wall_time: bool | None = None) -> TrainHistory:
    """
    Trains only `subject`'s encoder, reconstructer and fuser against the frozen model.

    Every other group is verified bit-identical afterwards; `drift_hook` runs just
    before that verification. The subject's statistics come from the calibration set,
    and its similarity vector is cached on the model.
    """
    if subject not in model.new_subjects:
        logger.error(f"Subject {subject!r} has no new-subject branch; call add_new_subject first")
        raise UnknownSubjectError(f"{subject!r} is not a new subject")
    arrays = stack_records(data)
    record_wall_time = settings.record_wall_time if record_wall_time is None else record_wall_time
    prefixes = subject_prefixes(subject)
    fit_subject_stats(model, subject, arrays.x)

    n_trainable = set_trainable(model, lambda name: name.startswith(prefixes))
    groups = model.groups()
    frozen = {g.name: g.tensor.data.tobytes() for g in groups if not g.trainable}
    state = AdamState.from_config(config)
    rng = np.random.default_rng(config.seed)
    w = config.weights
    history = TrainHistory(phase="calibrate", config=config.model_dump(mode="json"))

    logger.info(f"Calibrating {subject!r} on {len(arrays)} trials for {config.epochs_calib} "
                f"epochs; {n_trainable} trainable parameters, {len(frozen)} frozen groups")
    start = time.perf_counter()
    for epoch in range(1, config.epochs_calib + 1):
        order = rng.permutation(len(arrays))
        sums: dict[str, float] = {}
        total = 0.0
        steps = 0
        for step, lo in enumerate(range(0, len(arrays), config.batch_size)):
            batch = arrays.take(order[lo:lo + config.batch_size])

            def build_loss(batch: SubjectArrays = batch) -> tuple[Tensor, dict[str, float]]:
                out = forward_train(model, batch.x, subject, training=True, rng=rng,
                                    with_domain_heads=False)
                align = alignment_loss(out.e_hat, batch.e, w.tau, config.normalize_clip)
                if config.calib_loss == "align_only":
                    return align, {"align": align.item()}
                rec = reconstruction_loss(out.x_hat_s, out.x_hat_r, batch.x)
                diff = difference_loss(out.s, out.r)
                values = {"align": align.item(), "rec": rec.item(), "diff": diff.item()}
                return total_calibration_loss(align, rec, diff, w), values

            value, values = _optimize(groups, state, build_loss, "calibrate", epoch, step)
            total += value
            steps += 1
            for k, v in values.items():
                sums[k] = sums.get(k, 0.0) + v
        history.records.append(_summarize("calibrate", epoch, sums, total, steps, config, start,
                                          rng, record_wall_time))

    if drift_hook is not None:
        drift_hook(model)
    drifted = [g.name for g in model.groups()
               if g.name in frozen and g.tensor.data.tobytes() != frozen[g.name]]
    if drifted:
        logger.error(f"Frozen parameter groups changed during calibration: {drifted}")
        raise FrozenParameterDriftError(f"frozen groups drifted: {drifted}")

    model.similarity_cache[subject] = similarity(model, arrays.x, subject).p
    if history.records:
        logger.info(f"Calibration finished: final loss {history.records[-1].total:.6f}")
    return history


def train_from_scratch(model_config: ModelConfig, data: SubjectData,
                       config: RunConfig) -> tuple[MindCrossModel, TrainHistory]:
    """Builds a fresh model and trains it on `data` alone."""
    model = build(model_config)
    return model, train(model, data, config)


def add_calibration_branch(model: MindCrossModel, data: Sequence[TrialRecord] | SubjectArrays,
                           init: str = "nearest",
                           copy_from: str | None = None,
                           subject: str = NEW_SUBJECT_KEY) -> str | None:
    """
    Adds `subject`'s branch ahead of calibration; returns the training subject it copies.

    "nearest" copies the branch of the training subject whose inputs look most like `data`;
    "copy" takes `copy_from` instead. A "fresh" branch is seeded from the subject id.
    """
    if init == "nearest":
        copy_from = nearest_subject(model, stack_records(data).x)
    elif init == "fresh":
        copy_from = None
    elif init != "copy":
        raise ConfigError(f"unknown branch init {init!r}; use nearest, fresh or copy")
    elif copy_from is None:
        raise ConfigError("init 'copy' needs a source subject")
    add_new_subject(model, subject, init="fresh" if copy_from is None else "copy",
                    copy_from=copy_from)
    return copy_from
