from collections import defaultdict
from collections.abc import Sequence

import numpy as np

from ..utilities.errors import ConfigError
from ..utilities.logging import get_logger
from .records import TrialRecord

logger = get_logger(__name__)


def _groups(records: Sequence[TrialRecord]) -> dict[tuple[str, int], list[int]]:
    groups: dict[tuple[str, int], list[int]] = defaultdict(list)
    for i, r in enumerate(records):
        groups[(r.subject, r.class_label)].append(i)
    return dict(sorted(groups.items(), key=lambda kv: (kv[1][0], kv[0][1])))


def split(records: Sequence[TrialRecord], train_fraction: float,
          seed: int) -> tuple[list[TrialRecord], list[TrialRecord]]:
    """Class-stratified, per-subject train/test split; both keep input order."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx: list[int] = []
    for (subject, label), idx in _groups(records).items():
        if len(idx) < 2:
            logger.error(f"Subject {subject} class {label} has {len(idx)} trial(s)")
            raise ConfigError(f"subject {subject} class {label} has fewer than 2 trials")
        n_train = min(len(idx) - 1, max(1, round(train_fraction * len(idx))))
        train_idx.extend(rng.permutation(idx)[:n_train].tolist())
    chosen = set(train_idx)
    train = [r for i, r in enumerate(records) if i in chosen]
    test = [r for i, r in enumerate(records) if i not in chosen]
    return train, test


def subsample_stratified(records: Sequence[TrialRecord], n: int, seed: int) -> list[TrialRecord]:
    """Draws `n` trials, dealing classes round-robin so every class is represented."""
    if n > len(records):
        raise ConfigError(f"budget {n} exceeds the {len(records)} available trials")
    if n < 1:
        raise ConfigError(f"budget must be positive, got {n}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = defaultdict(list)
    for i, r in enumerate(records):
        by_class[r.class_label].append(i)
    queues = [list(rng.permutation(by_class[c])) for c in sorted(by_class)]
    picked: list[int] = []
    while len(picked) < n:
        for queue in queues:
            if queue and len(picked) < n:
                picked.append(int(queue.pop(0)))
    return [records[i] for i in sorted(picked)]
