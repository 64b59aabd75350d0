import asyncio
import csv
import json
import zlib
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator

from ..config import RunConfig, settings
from ..data.records import SubjectArrays, TrialRecord, stack_records
from ..engine import no_grad
from ..models.mindcross import MindCrossModel, encode
from ..pipeline.inference import predict
from ..utilities.constants import MAX_NWAY
from ..utilities.errors import ConfigError
from ..utilities.logging import get_logger
from .metrics import CentroidClassifier, centroid_classifier, nway_topk, retrieval_accuracy
from .probe import domain_probe

logger = get_logger(__name__)


def nway_key(n_way: int, k_top: int) -> str:
    return f"{n_way}-way-top{k_top}"


class SubjectMetrics(BaseModel):
    nway: dict[str, float] = Field(..., description="N-way top-K accuracy keyed 'N-way-topK'")
    retrieval: float = Field(..., ge=0.0, le=1.0)
    n_trials: int = Field(..., gt=0)

    @field_validator("nway")
    @classmethod
    def _in_unit_interval(cls, values: dict[str, float]) -> dict[str, float]:
        for key, value in values.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{key} accuracy {value} outside [0, 1]")
        return values


class MetricReport(BaseModel):
    """Accuracy of one evaluation run, per subject and pooled."""
    seed: int
    trials: int = Field(..., gt=0, description="Distractor draws per prediction")
    lambda_collab: float
    top_k: int
    overall: SubjectMetrics
    subjects: dict[str, SubjectMetrics]
    probes: dict[str, float | None] = Field(
        default_factory=dict, description="Domain probe accuracy on specific/shared/raw features"
    )
    config: dict[str, Any] = Field(default_factory=dict)

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


def class_embeddings(
    data: Mapping[str, Sequence[TrialRecord] | SubjectArrays],
) -> dict[int, np.ndarray]:
    """Ground-truth embeddings of every trial grouped by class."""
    grouped: dict[int, list[np.ndarray]] = {}
    for records in data.values():
        arrays = stack_records(records)
        for label, e in zip(arrays.labels, arrays.e):
            grouped.setdefault(int(label), []).append(e)
    return {c: np.stack(rows) for c, rows in grouped.items()}


def _subject_metrics(model: MindCrossModel, branch: str, arrays: SubjectArrays,
                     classifier: CentroidClassifier, config: RunConfig,
                     protocols: list[tuple[int, int]],
                     trials: int, rng: np.random.Generator) -> SubjectMetrics:
    pred = predict(model, arrays.x, config, branch)
    nway = {nway_key(n, k): nway_topk(classifier, pred, arrays.labels, n, k, trials, rng)
            for n, k in protocols}
    return SubjectMetrics(nway=nway, retrieval=retrieval_accuracy(classifier, pred, arrays.labels),
                          n_trials=len(arrays))


def _features(model: MindCrossModel, stacked: Mapping[str, SubjectArrays],
              routing: Mapping[str, str],
              kind: Literal["specific", "shared"]) -> dict[str, np.ndarray]:
    out = {}
    with no_grad():
        for subject, arrays in stacked.items():
            s, r = encode(model, arrays.x, routing[subject])
            out[subject] = (s if kind == "specific" else r).data
    return out


def _probe(features: Mapping[str, np.ndarray], seed: int) -> float | None:
    if len(features) < 2:
        return None
    return domain_probe(features, seed=seed)


async def evaluate_async(model: MindCrossModel,
                         data: Mapping[str, Sequence[TrialRecord] | SubjectArrays],
                         config: RunConfig, seed: int = 0, trials: int | None = None,
                         routing: Mapping[str, str] | None = None,
                         classifier: CentroidClassifier | None = None,
                         with_probes: bool = True) -> MetricReport:
    """
    Scores every subject in `data` concurrently.

    `routing` maps a data subject id to the model branch that serves it (for example
    a held-out subject to its calibrated "new" branch); unmapped subjects use their
    own id.
    """
    stacked = {s: stack_records(r) for s, r in data.items() if len(r) > 0}
    if not stacked:
        logger.error("Evaluation called with an empty test set")
        raise ConfigError("test set is empty")
    routing = {s: (routing or {}).get(s, s) for s in stacked}
    trials = trials if trials is not None else settings.eval_trials
    classifier = classifier or centroid_classifier(class_embeddings(stacked))
    n_classes = classifier.n_classes
    protocols = list(dict.fromkeys([(2, 1), (min(MAX_NWAY, n_classes), 1)]))

    logger.info(f"Evaluating {len(stacked)} subjects over {n_classes} classes "
                f"(lambda={config.lambda_collab}, K={config.top_k})")
    tasks = {
        subject: asyncio.to_thread(
            _subject_metrics, model, routing[subject], arrays, classifier, config, protocols,
            trials, np.random.default_rng([seed, zlib.crc32(subject.encode("utf-8"))]),
        )
        for subject, arrays in stacked.items()
    }
    results = await asyncio.gather(*tasks.values())
    per_subject = dict(zip(tasks, results))

    total = sum(m.n_trials for m in per_subject.values())
    overall = SubjectMetrics(
        nway={key: sum(m.nway[key] * m.n_trials for m in per_subject.values()) / total
              for key in next(iter(per_subject.values())).nway},
        retrieval=sum(m.retrieval * m.n_trials for m in per_subject.values()) / total,
        n_trials=total,
    )

    probes: dict[str, float | None] = {}
    if with_probes:
        feature_sets = {
            "specific": _features(model, stacked, routing, "specific"),
            "shared": _features(model, stacked, routing, "shared"),
            "raw": {s: a.x for s, a in stacked.items()},
        }
        accuracies = await asyncio.gather(
            *(asyncio.to_thread(_probe, f, seed) for f in feature_sets.values())
        )
        probes = dict(zip(feature_sets, accuracies))

    report = MetricReport(seed=seed, trials=trials, lambda_collab=config.lambda_collab,
                          top_k=config.top_k, overall=overall, subjects=per_subject,
                          probes=probes, config=config.model_dump(mode="json"))
    logger.info(f"Overall: {overall.nway}, retrieval {overall.retrieval:.3f}, probes {probes}")
    return report


def evaluate(model: MindCrossModel, data: Mapping[str, Sequence[TrialRecord] | SubjectArrays],
             config: RunConfig, seed: int = 0, trials: int | None = None,
             routing: Mapping[str, str] | None = None,
             classifier: CentroidClassifier | None = None,
             with_probes: bool = True) -> MetricReport:
    return asyncio.run(evaluate_async(model, data, config, seed, trials, routing, classifier,
                                      with_probes))


class BudgetRow(BaseModel):
    heldout: str
    budget: int = Field(..., gt=0)
    strategy: Literal["calib", "scratch"]
    seed: int
    accuracy_2way: float = Field(..., ge=0.0, le=1.0)
    accuracy_nway: float = Field(..., ge=0.0, le=1.0)
    n_way: int
    trainable_parameters: int
    wall_time: float | None = None


def write_budget_csv(rows: Sequence[BudgetRow], path: str | Path,
                     config: dict[str, Any] | None = None) -> None:
    """Writes the adaptation curve CSV plus a `<path>.config.json` sidecar."""
    path = Path(path)
    fields = list(BudgetRow.model_fields)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            values = row.model_dump()
            values["wall_time"] = "" if row.wall_time is None else f"{row.wall_time:.6f}"
            writer.writerow(values)
    sidecar = path.with_name(path.name + ".config.json")
    sidecar.write_text(json.dumps(config or {}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(rows)} rows to {path}")
