"""Checkpoints: every parameter group flattened into one container payload."""

from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from ..config import ModelConfig, config_digest
from ..data.container import read_container, write_container
from ..utilities.constants import CONTAINER_FORMAT_VERSION
from ..utilities.errors import ContainerError, DimensionError
from ..utilities.logging import get_logger
from .mindcross import MindCrossModel, SubjectStats, add_new_subject, build

logger = get_logger(__name__)

CHECKPOINT_KIND = "checkpoint"


class LoadedCheckpoint(NamedTuple):
    model: MindCrossModel
    extra: dict[str, Any]
    digest: str | None


def save_checkpoint(model: MindCrossModel, path: str | Path,
                    extra: dict[str, Any] | None = None) -> None:
    """
    Writes the model and an optional effective run config.

    `extra` may carry `run_config` (a JSON-able dict); its digest is stored next to it.
    """
    groups = model.groups()
    extra = dict(extra or {})
    run_config = extra.get("run_config")
    header = {
        "kind": CHECKPOINT_KIND,
        "format_version": CONTAINER_FORMAT_VERSION,
        "model_config": model.config.model_dump(mode="json"),
        "grl_scale": model.grl_scale,
        "new_subjects": list(model.new_subjects),
        "similarity": {k: v.tolist() for k, v in sorted(model.similarity_cache.items())},
        "subject_stats": {k: v.to_json() for k, v in sorted(model.subject_stats.items())},
        "groups": [
            {"name": g.name, "shape": list(g.tensor.shape), "trainable": g.trainable}
            for g in groups
        ],
        "extra": extra,
        "digest": config_digest(run_config) if run_config is not None else None,
    }
    payload = (np.concatenate([g.tensor.data.reshape(-1) for g in groups])
               if groups else np.zeros(0))
    header["count"] = int(payload.size)
    header["record_size"] = 1
    write_container(path, header, payload)
    logger.info(f"Saved checkpoint {path}: {len(groups)} groups, {payload.size} parameters")


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    header, values = read_container(path)
    if header.get("kind") != CHECKPOINT_KIND:
        logger.error(f"{path} holds a {header.get('kind')!r} container, not a checkpoint")
        raise ContainerError(f"{path}: not a checkpoint")

    model = build(ModelConfig.model_validate(header["model_config"]))
    for subject in header["new_subjects"]:
        add_new_subject(model, subject)
    model.grl_scale = float(header["grl_scale"])
    model.similarity_cache = {k: np.asarray(v, dtype=np.float64)
                              for k, v in header["similarity"].items()}
    model.subject_stats = {k: SubjectStats.from_json(v)
                           for k, v in header.get("subject_stats", {}).items()}

    by_name = {g.name: g for g in model.groups()}
    stored = {entry["name"] for entry in header["groups"]}
    if stored != set(by_name):
        missing = sorted(set(by_name) - stored)
        unexpected = sorted(stored - set(by_name))
        logger.error(f"{path}: group mismatch, missing={missing} unexpected={unexpected}")
        raise ContainerError(f"{path}: parameter groups do not match the stored config")

    offset = 0
    for entry in header["groups"]:
        group = by_name[entry["name"]]
        shape = tuple(entry["shape"])
        if shape != group.tensor.shape:
            raise DimensionError(f"{entry['name']}: stored shape {shape} vs {group.tensor.shape}")
        size = int(np.prod(shape, dtype=np.int64))
        group.tensor.data[...] = values[offset:offset + size].reshape(shape)
        group.trainable = bool(entry["trainable"])
        offset += size
    logger.info(f"Loaded checkpoint {path}: {len(by_name)} groups")
    return LoadedCheckpoint(model, header.get("extra", {}), header.get("digest"))
