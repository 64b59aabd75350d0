import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..utilities.constants import CONTAINER_FORMAT_VERSION
from ..utilities.errors import ConfigError, DimensionError
from ..utilities.logging import get_logger
from .container import DatasetContainer

logger = get_logger(__name__)


@dataclass(frozen=True)
class TrialRecord:
    """One (subject, class, brain features, target embedding) sample."""
    subject: str
    class_label: int
    x: np.ndarray = field(repr=False)
    e: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class SubjectArrays:
    """Row-stacked view of one subject's trials."""
    x: np.ndarray
    e: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def take(self, idx: np.ndarray) -> "SubjectArrays":
        return SubjectArrays(self.x[idx], self.e[idx], self.labels[idx])


Dataset = dict[str, list[TrialRecord]]


def stack_records(records: Sequence[TrialRecord] | SubjectArrays) -> SubjectArrays:
    if isinstance(records, SubjectArrays):
        return records
    if not records:
        raise ConfigError("cannot stack an empty record list")
    return SubjectArrays(
        x=np.stack([r.x for r in records]).astype(np.float64),
        e=np.stack([r.e for r in records]).astype(np.float64),
        labels=np.array([r.class_label for r in records], dtype=np.int64),
    )


def records_to_container(dataset: Mapping[str, Sequence[TrialRecord]],
                         config: dict[str, Any] | None = None) -> DatasetContainer:
    """Packs records as [subject_index, class_label, x..., e...] rows."""
    subjects = list(dataset)
    all_records = [r for s in subjects for r in dataset[s]]
    if not all_records:
        raise ConfigError("dataset is empty")
    m, d = all_records[0].x.shape[0], all_records[0].e.shape[0]
    rows = []
    for r in all_records:
        if r.x.shape != (m,) or r.e.shape != (d,):
            raise DimensionError(f"record of {r.subject} has x {r.x.shape}, e {r.e.shape}; "
                                 f"expected ({m},), ({d},)")
        rows.append(np.concatenate([[subjects.index(r.subject), r.class_label], r.x, r.e]))
    header = {
        "kind": "dataset",
        "format_version": CONTAINER_FORMAT_VERSION,
        "dims": {"m": m, "d": d},
        "subjects": subjects,
        "classes": sorted({r.class_label for r in all_records}),
        "counts": {s: len(dataset[s]) for s in subjects},
        "count": len(rows),
        "record_size": 2 + m + d,
        "config": config or {},
    }
    return DatasetContainer(header, np.stack(rows))


def container_to_records(container: DatasetContainer) -> Dataset:
    header = container.header
    if header.get("kind") != "dataset":
        raise ConfigError(f"container kind is {header.get('kind')!r}, expected 'dataset'")
    m, d = header["dims"]["m"], header["dims"]["d"]
    subjects: list[str] = header["subjects"]
    dataset: Dataset = {s: [] for s in subjects}
    for row in container.payload:
        subject = subjects[int(row[0])]
        dataset[subject].append(
            TrialRecord(subject, int(row[1]), row[2:2 + m].copy(), row[2 + m:2 + m + d].copy())
        )
    return dataset


def export_jsonl(dataset: Mapping[str, Sequence[TrialRecord]], path: str | Path) -> None:
    """Human-readable one-trial-per-line export for debugging."""
    with open(path, "w", encoding="utf-8") as f:
        for subject, records in dataset.items():
            for r in records:
                f.write(json.dumps({
                    "subject": subject,
                    "class_label": r.class_label,
                    "x": r.x.tolist(),
                    "e": r.e.tolist(),
                }) + "\n")
    logger.info(f"Exported {sum(len(v) for v in dataset.values())} trials to {path}")
