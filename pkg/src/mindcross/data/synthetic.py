"""
Synthetic multi-subject benchmark.

Every class owns a unit embedding e_c. A shared lift W maps it to a latent of
size q; each subject i mixes that latent through A_i = A_0 + perturbation * G_i
and adds a bias b_i, so all subjects carry the same class signal through
different linear responses.
"""

import asyncio
import math
from dataclasses import dataclass

import numpy as np

from ..config import SyntheticConfig
from ..utilities.constants import NEW_SUBJECT_KEY
from ..utilities.logging import get_logger
from .records import Dataset, TrialRecord

logger = get_logger(__name__)


@dataclass(frozen=True)
class _Mixing:
    subject: str
    A: np.ndarray
    b: np.ndarray
    rng: np.random.Generator


def _plan(config: SyntheticConfig) -> tuple[np.ndarray, np.ndarray, list[_Mixing]]:
    ids = config.subject_ids()
    extra = 1 if config.clone_source is not None else 0
    shared_seq, *subject_seqs = np.random.SeedSequence(config.seed).spawn(1 + len(ids) + extra)

    shared = np.random.default_rng(shared_seq)
    embeddings = shared.standard_normal((config.n_classes, config.d))
    embeddings /= np.linalg.norm(embeddings, axis=1, keepdims=True)
    W = shared.standard_normal((config.latent_dim, config.d)) / math.sqrt(config.d)
    A0 = shared.standard_normal((config.m, config.latent_dim)) / math.sqrt(config.latent_dim)

    plan: list[_Mixing] = []
    for subject, seq in zip(ids, subject_seqs):
        rng = np.random.default_rng(seq)
        G = rng.standard_normal((config.m, config.latent_dim)) / math.sqrt(config.latent_dim)
        b = rng.standard_normal(config.m)
        plan.append(_Mixing(subject, A0 + config.subject_perturbation * G,
                            config.subject_perturbation * b, rng))

    if config.clone_source is not None:
        source = plan[ids.index(config.clone_source)]
        rng = np.random.default_rng(subject_seqs[-1])
        G = rng.standard_normal((config.m, config.latent_dim)) / math.sqrt(config.latent_dim)
        b = rng.standard_normal(config.m)
        plan.append(_Mixing(NEW_SUBJECT_KEY, source.A + config.clone_perturbation * G,
                            source.b + config.clone_perturbation * b, rng))
    return embeddings, W, plan


def _subject_trials(config: SyntheticConfig, embeddings: np.ndarray, W: np.ndarray,
                    mixing: _Mixing) -> list[TrialRecord]:
    records: list[TrialRecord] = []
    T = config.trials_per_class_per_subject
    for c in range(config.n_classes):
        latent = W @ embeddings[c]
        noise = mixing.rng.standard_normal((T, config.latent_dim))
        z = latent[None, :] + config.noise_sigma * noise
        X = z @ mixing.A.T + mixing.b
        records.extend(TrialRecord(mixing.subject, c, X[t], embeddings[c].copy()) for t in range(T))
    return records


async def generate_synthetic_async(config: SyntheticConfig) -> Dataset:
    """Generates every subject concurrently; each subject owns its RNG stream."""
    embeddings, W, plan = _plan(config)
    tasks = [asyncio.to_thread(_subject_trials, config, embeddings, W, mixing) for mixing in plan]
    results = await asyncio.gather(*tasks)
    dataset = {mixing.subject: records for mixing, records in zip(plan, results)}
    logger.info(
        f"Generated {sum(len(r) for r in results)} trials for {len(dataset)} subjects "
        f"({config.n_classes} classes, m={config.m}, d={config.d})"
    )
    return dataset


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    return asyncio.run(generate_synthetic_async(config))
