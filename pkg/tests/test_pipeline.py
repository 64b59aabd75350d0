import logging
from unittest.mock import patch

import numpy as np
import pytest

from mindcross.config import ModelConfig, RunConfig, SyntheticConfig
from mindcross.data import generate_synthetic, stack_records
from mindcross.engine import Tensor
from mindcross.models import add_new_subject, branch_predict, build, encode
from mindcross.pipeline import (
    SimilarityVector,
    add_calibration_branch,
    calibrate,
    combine_topk,
    nearest_subject,
    predict,
    resolve_batch_mode,
    select_topk,
    similarity,
    topk_collaborate,
    train,
    train_from_scratch,
)
from mindcross.utilities.errors import (
    ConfigError,
    FrozenParameterDriftError,
    NumericalError,
    UnknownSubjectError,
)


@pytest.fixture
def model_config():
    return ModelConfig(in_dim=6, hidden=8, embed_dim=4, subjects=["subj1", "subj2"],
                       dropout_p=0.1, seed=0)


@pytest.fixture
def trained(model_config, tiny_dataset, small_run):
    model = build(model_config)
    train(model, tiny_dataset, small_run, record_wall_time=False)
    return model


@pytest.fixture
def new_data():
    data = generate_synthetic(SyntheticConfig(n_subjects=2, n_classes=4,
                                              trials_per_class_per_subject=10, m=6, d=4,
                                              latent_dim=3, clone_source="subj2", seed=0))
    return data["new"]


def test_zero_learning_rate_keeps_parameters(model_config, tiny_dataset):
    model = build(model_config)
    before = model.snapshot()
    train(model, tiny_dataset, RunConfig(epochs_train=2, batch_size=8, learning_rate=0.0))
    after = model.snapshot()
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)


def test_training_is_deterministic(model_config, tiny_dataset, small_run):
    runs = []
    for _ in range(2):
        model = build(model_config)
        history = train(model, tiny_dataset, small_run, record_wall_time=False)
        runs.append((history.model_dump(), model.snapshot()))
    assert runs[0][0] == runs[1][0]
    assert all(runs[0][1][k].tobytes() == runs[1][1][k].tobytes() for k in runs[0][1])


def test_history_has_one_record_per_epoch(model_config, tiny_dataset, small_run):
    history = train(build(model_config), tiny_dataset, small_run, record_wall_time=False)
    assert [r.epoch for r in history.records] == [1, 2]
    assert set(history.records[0].losses) == {"align", "rec", "dc", "da", "diff"}
    assert history.records[0].wall_time is None


def test_cooperative_training_loss_decreases(model_config, tiny_dataset):
    """Test that without the adversarial term the epoch loss drops on most seeds."""
    improved = 0
    for seed in range(5):
        run = RunConfig(epochs_train=5, batch_size=8, learning_rate=1e-2, seed=seed,
                        loss_terms=["rec", "dc", "diff"])
        history = train(build(model_config.model_copy(update={"seed": seed})), tiny_dataset, run,
                        record_wall_time=False)
        improved += history.totals[-1] < history.totals[0]
    assert improved >= 4


def test_missing_subject_is_rejected(model_config, tiny_dataset, small_run):
    with pytest.raises(ConfigError):
        train(build(model_config), {"subj1": tiny_dataset["subj1"]}, small_run)
    with pytest.raises(ConfigError):
        train(build(model_config), {}, small_run)


def test_kl_variant_switches_to_mixed_batches(model_config, tiny_dataset, caplog):
    run = RunConfig(epochs_train=1, batch_size=8, da_variant="kl")
    with caplog.at_level(logging.WARNING, logger="mindcross"):
        history = train(build(model_config), tiny_dataset, run, record_wall_time=False)
    assert "mixed" in caplog.text
    assert history.records[0].losses["da"] >= 0.0
    with pytest.raises(ConfigError):
        resolve_batch_mode(RunConfig(da_variant="lp"), 1)
    assert resolve_batch_mode(RunConfig(da_variant="lp", loss_terms=["rec"]), 2) == "per_subject"


def test_lp_variant_trains(model_config, tiny_dataset):
    run = RunConfig(epochs_train=1, batch_size=8, da_variant="lp", lp_p=1, batch_mode="mixed")
    history = train(build(model_config), tiny_dataset, run, record_wall_time=False)
    assert np.isfinite(history.records[0].total)


def test_non_finite_loss_aborts(model_config, tiny_dataset, small_run):
    with patch("mindcross.pipeline.phases.total_train_loss", return_value=Tensor(np.nan)):
        with pytest.raises(NumericalError, match="epoch 1"):
            train(build(model_config), tiny_dataset, small_run)


def test_calibration_freezes_everything_else(trained, tiny_dataset, new_data):
    """Test that calibration leaves every pre-existing group and prediction bit-identical."""
    x = stack_records(tiny_dataset["subj1"]).x
    before_pred = branch_predict(trained, x, "subj1").data.tobytes()
    before = trained.snapshot()
    add_new_subject(trained, "new")
    init = trained.group("encoder/new/linear0/weight").tensor.data.copy()

    calibrate(trained, new_data, RunConfig(epochs_calib=3, batch_size=8), record_wall_time=False)

    after = trained.snapshot()
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)
    assert branch_predict(trained, x, "subj1").data.tobytes() == before_pred
    assert not np.array_equal(trained.group("encoder/new/linear0/weight").tensor.data, init)
    trainable = {g.name for g in trained.groups() if g.trainable}
    assert trainable and all(n.split("/")[1] == "new" for n in trainable)
    assert trained.similarity_cache["new"].sum() == pytest.approx(1.0)


def test_calibration_loss_decreases(trained, new_data):
    add_new_subject(trained, "new")
    run = RunConfig(epochs_calib=15, batch_size=8, learning_rate=5e-3)
    history = calibrate(trained, new_data[:40], run, record_wall_time=False)
    assert history.totals[-1] < history.totals[0]
    assert set(history.records[0].losses) == {"align", "rec", "diff"}


def test_align_only_calibration(trained, new_data):
    add_new_subject(trained, "new")
    history = calibrate(trained, new_data, RunConfig(epochs_calib=1, calib_loss="align_only"),
                        record_wall_time=False)
    assert set(history.records[0].losses) == {"align"}


def test_zero_epoch_calibration_keeps_initialization(trained, new_data):
    add_new_subject(trained, "new")
    init = trained.snapshot()
    history = calibrate(trained, new_data, RunConfig(epochs_calib=0))
    assert history.records == []
    after = trained.snapshot()
    assert all(init[k].tobytes() == after[k].tobytes() for k in init)


def test_drift_is_a_hard_failure(trained, new_data):
    add_new_subject(trained, "new")

    def nudge(model):
        model.group("decoder/block0/linear0/weight").tensor.data[0, 0] += 1e-12

    with pytest.raises(FrozenParameterDriftError, match="decoder/block0/linear0/weight"):
        calibrate(trained, new_data, RunConfig(epochs_calib=1), drift_hook=nudge)


def test_calibrate_requires_new_branch(trained, new_data):
    with pytest.raises(UnknownSubjectError):
        calibrate(trained, new_data, RunConfig(epochs_calib=1))


def test_train_from_scratch(model_config, tiny_dataset, small_run):
    model, history = train_from_scratch(model_config, tiny_dataset, small_run)
    assert len(history.records) == small_run.epochs_train
    assert model.config == model_config


def test_similarity_from_logits():
    uniform = SimilarityVector.from_logits(["a", "b", "c", "d"], np.zeros(4))
    np.testing.assert_allclose(uniform.p, 0.25)
    peaked = SimilarityVector.from_logits(["a", "b", "c"], np.array([2.0, 0.0, 0.0]))
    np.testing.assert_allclose(peaked.p, [0.7870, 0.1065, 0.1065], atol=1e-4)
    permuted = SimilarityVector.from_logits(["b", "a", "c"], np.array([0.0, 2.0, 0.0]))
    assert permuted.p[1] == pytest.approx(peaked.p[0])


def test_similarity_of_model_sums_to_one(trained, new_data):
    add_new_subject(trained, "new")
    x = stack_records(new_data).x
    p = similarity(trained, x)
    assert p.subjects == ("subj1", "subj2")
    assert p.p.sum() == pytest.approx(1.0)


def test_select_topk_ties_and_nesting():
    p = np.array([0.3, 0.3, 0.1, 0.3])
    assert select_topk(p, 1).tolist() == [0]
    for k in range(1, 4):
        assert set(select_topk(p, k)) <= set(select_topk(p, k + 1))
    with pytest.raises(ConfigError):
        select_topk(p, 5)
    with pytest.raises(ConfigError):
        select_topk(p, 0)


def test_combine_topk_hand_case():
    p = np.array([0.7, 0.2, 0.1])
    preds = [np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])]
    selected = select_topk(p, 2)
    np.testing.assert_allclose(combine_topk(p, selected, preds), [[0.7, 0.2]])
    np.testing.assert_allclose(combine_topk(p, selected, preds, renormalize=True),
                               [[7 / 9, 2 / 9]])
    same = [np.array([[0.5, -1.0]])] * 3
    np.testing.assert_allclose(combine_topk(p, select_topk(p, 3), same), [[0.5, -1.0]])


def test_top1_collaboration_is_scaled_branch(trained, new_data):
    add_new_subject(trained, "new")
    x = stack_records(new_data).x[:5]
    p = SimilarityVector(("subj1", "subj2"), np.array([0.35, 0.65]))
    expected = 0.65 * branch_predict(trained, x, "new", via="subj2").data
    np.testing.assert_allclose(topk_collaborate(trained, x, p, 1), expected, rtol=1e-14)


def test_predict_limits_and_continuity(trained, new_data):
    add_new_subject(trained, "new")
    calibrate(trained, new_data, RunConfig(epochs_calib=1, batch_size=8), record_wall_time=False)
    x = stack_records(new_data).x[:6]
    e_t = branch_predict(trained, x, "new").data

    base = predict(trained, x, RunConfig(lambda_collab=0.0))
    assert base.tobytes() == e_t.tobytes()

    run = RunConfig(lambda_collab=1e-2, top_k=2)
    p = SimilarityVector(("subj1", "subj2"), trained.similarity_cache["new"])
    collab = predict(trained, x, run)
    np.testing.assert_allclose(collab, e_t + 1e-2 * topk_collaborate(trained, x, p, 2))
    assert collab.shape == (6, 4) and np.all(np.isfinite(collab))

    branches = [branch_predict(trained, x, "new", via=s).data for s in ("subj1", "subj2")]
    bound = 1e-2 * np.max([np.linalg.norm(b, axis=1) for b in branches], axis=0)
    assert np.all(np.linalg.norm(collab - base, axis=1) <= bound + 1e-15)


def test_predict_for_training_subject_is_its_branch(trained, tiny_dataset):
    x = stack_records(tiny_dataset["subj2"]).x
    out = predict(trained, x, RunConfig(lambda_collab=1.0), subject="subj2")
    assert out.tobytes() == branch_predict(trained, x, "subj2").data.tobytes()


def test_training_records_subject_statistics(trained, tiny_dataset):
    """Test that each training subject's shared features are centred after training."""
    assert set(trained.subject_stats) == {"subj1", "subj2"}
    for subject in ("subj1", "subj2"):
        x = stack_records(tiny_dataset[subject]).x
        stats = trained.subject_stats[subject]
        np.testing.assert_allclose(stats.input_mean, x.mean(axis=0))
        assert stats.shared_mean is not None
        _, r = encode(trained, x, subject)
        np.testing.assert_allclose(r.data.mean(axis=0), 0.0, atol=1e-10)


def test_calibration_fits_the_new_subject_statistics(trained, new_data):
    add_new_subject(trained, "new")
    calibrate(trained, new_data, RunConfig(epochs_calib=1, batch_size=8), record_wall_time=False)
    np.testing.assert_allclose(trained.subject_stats["new"].input_mean,
                               stack_records(new_data).x.mean(axis=0))


def test_nearest_subject_finds_the_clone_source(trained, new_data):
    assert nearest_subject(trained, stack_records(new_data).x) == "subj2"
    with pytest.raises(ConfigError):
        nearest_subject(build(trained.config), stack_records(new_data).x)


def test_nearest_init_copies_the_closest_branch(trained, new_data):
    assert add_calibration_branch(trained, new_data) == "subj2"
    assert np.array_equal(trained.group("encoder/new/linear0/weight").tensor.data,
                          trained.group("encoder/subj2/linear0/weight").tensor.data)


def test_fresh_and_copy_init(trained, new_data):
    assert add_calibration_branch(trained, new_data, init="fresh") is None
    assert not np.array_equal(trained.group("fuser/new/linear0/weight").tensor.data,
                              trained.group("fuser/subj1/linear0/weight").tensor.data)
    assert add_calibration_branch(trained, new_data, init="copy", copy_from="subj1",
                                  subject="other") == "subj1"
    with pytest.raises(ConfigError):
        add_calibration_branch(trained, new_data, init="copy", subject="third")
