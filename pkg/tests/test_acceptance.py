"""Desk-scale end-to-end runs; select with `pytest -m slow`."""

import statistics
import time

import numpy as np
import pytest

from mindcross.config import ModelConfig, RunConfig, SyntheticConfig
from mindcross.data import generate_synthetic, split, stack_records, subsample_stratified
from mindcross.evaluation import (
    CentroidClassifier,
    centroid_classifier,
    class_embeddings,
    domain_probe,
    evaluate,
    nway_topk,
    nway_topk_exact,
)
from mindcross.models import add_new_subject, branch_predict, build
from mindcross.pipeline import add_calibration_branch, calibrate, train, train_from_scratch

pytestmark = pytest.mark.slow


@pytest.mark.parametrize("n_way,k_top", [(2, 1), (3, 1), (5, 1)])
def test_sampled_nway_matches_enumeration(n_way, k_top):
    rng = np.random.default_rng(11)
    classifier = CentroidClassifier(np.eye(5), temperature=0.5)
    pred = rng.standard_normal((3, 5))
    gt = np.array([0, 3, 4])
    exact = nway_topk_exact(classifier(pred), gt, n_way, k_top)
    sampled = nway_topk(classifier, pred, gt, n_way, k_top, 100_000, rng)
    assert sampled == pytest.approx(exact, abs=0.01)


def test_generated_subjects_are_separable_from_raw_features():
    data = generate_synthetic(SyntheticConfig(n_subjects=2, n_classes=5,
                                              trials_per_class_per_subject=40, m=32, d=8,
                                              latent_dim=6, subject_perturbation=2.0, seed=1))
    features = {s: stack_records(r).x for s, r in data.items()}
    assert domain_probe(features) > 0.95


def test_long_calibration_keeps_frozen_groups():
    """Test that 200 calibration epochs leave every pre-existing group bit-identical."""
    data = generate_synthetic(SyntheticConfig(n_subjects=2, n_classes=4,
                                              trials_per_class_per_subject=10, m=8, d=4,
                                              latent_dim=3, clone_source="subj1", seed=0))
    model = build(ModelConfig(in_dim=8, hidden=8, embed_dim=4, subjects=["subj1", "subj2"]))
    train(model, {s: data[s] for s in ("subj1", "subj2")},
          RunConfig(epochs_train=3, batch_size=16), record_wall_time=False)
    x = stack_records(data["subj2"]).x
    before_pred = branch_predict(model, x, "subj2").data.tobytes()
    before = model.snapshot()

    add_new_subject(model, "new")
    calibrate(model, data["new"], RunConfig(epochs_calib=200, batch_size=16),
              record_wall_time=False)

    after = model.snapshot()
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)
    assert branch_predict(model, x, "subj2").data.tobytes() == before_pred


REFERENCE_DATA = dict(n_subjects=4, n_classes=10, trials_per_class_per_subject=100, m=310, d=32,
                      latent_dim=16)


@pytest.fixture(scope="module")
def reference_report():
    """Train on the reference benchmark (h=256, 300 epochs) and evaluate the held-out split."""
    data = generate_synthetic(SyntheticConfig(**REFERENCE_DATA, seed=0))
    train_part, test_part = {}, {}
    for subject, records in data.items():
        train_part[subject], test_part[subject] = split(records, 0.8, seed=0)
    model = build(ModelConfig(in_dim=310, hidden=256, embed_dim=32, subjects=list(data)))
    run = RunConfig(epochs_train=300)
    train(model, train_part, run, record_wall_time=False)
    classifier = centroid_classifier(class_embeddings(train_part))
    return evaluate(model, test_part, run, seed=0, classifier=classifier)


def test_reference_decoding_accuracy(reference_report):
    assert reference_report.overall.nway["2-way-top1"] >= 0.90
    assert reference_report.overall.nway["10-way-top1"] >= 0.50


def test_reference_features_split_subject_identity(reference_report):
    """Test that specific features identify the subject while shared features do not."""
    probes = reference_report.probes
    assert probes["specific"] >= 0.90
    assert probes["shared"] <= 0.25 + 0.10
    assert probes["raw"] > probes["shared"]


def test_calibration_matches_scratch_at_a_fraction_of_the_time():
    """Test median accuracy and wall time of calibration against scratch training over 5 seeds."""
    calib_acc, scratch_acc, calib_time, scratch_time = [], [], [], []
    for seed in range(5):
        data = generate_synthetic(SyntheticConfig(**REFERENCE_DATA, seed=seed))
        others = ["subj1", "subj2", "subj3"]
        pool, test = split(data["subj4"], 0.5, seed=seed)
        budget = subsample_stratified(pool, 100, seed)
        run = RunConfig(epochs_train=100, epochs_calib=20, seed=seed)
        classifier = centroid_classifier(class_embeddings({s: data[s] for s in others}))

        base = build(ModelConfig(in_dim=310, hidden=64, embed_dim=32, subjects=others,
                                 seed=seed))
        train(base, {s: data[s] for s in others}, run, record_wall_time=False)
        start = time.perf_counter()
        add_calibration_branch(base, budget)
        calibrate(base, budget, run, record_wall_time=False)
        calib_time.append(time.perf_counter() - start)
        report = evaluate(base, {"subj4": test}, run, seed=seed, routing={"subj4": "new"},
                          classifier=classifier, with_probes=False)
        calib_acc.append(report.overall.nway["2-way-top1"])

        start = time.perf_counter()
        scratch, _ = train_from_scratch(
            ModelConfig(in_dim=310, hidden=64, embed_dim=32, subjects=["subj4"], seed=seed),
            {"subj4": budget}, run)
        scratch_time.append(time.perf_counter() - start)
        report = evaluate(scratch, {"subj4": test}, run, seed=seed, classifier=classifier,
                          with_probes=False)
        scratch_acc.append(report.overall.nway["2-way-top1"])

    assert statistics.median(calib_acc) >= statistics.median(scratch_acc)
    assert statistics.median(calib_time) < 0.25 * statistics.median(scratch_time)


def test_clone_source_is_the_most_similar_subject():
    """Test that a subject cloned from subj3 ranks subj3 first on at least 4 of 5 seeds."""
    hits = 0
    for seed in range(5):
        data = generate_synthetic(SyntheticConfig(**REFERENCE_DATA, clone_source="subj3",
                                                  seed=seed))
        subjects = ["subj1", "subj2", "subj3", "subj4"]
        model = build(ModelConfig(in_dim=310, hidden=64, embed_dim=32, subjects=subjects,
                                  seed=seed))
        run = RunConfig(epochs_train=60, epochs_calib=30, seed=seed)
        train(model, {s: data[s] for s in subjects}, run, record_wall_time=False)
        budget = subsample_stratified(data["new"], 100, seed)
        add_calibration_branch(model, budget)
        calibrate(model, budget, run, record_wall_time=False)
        hits += int(np.argmax(model.similarity_cache["new"]) == subjects.index("subj3"))
    assert hits >= 4
