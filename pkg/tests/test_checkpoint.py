import numpy as np
import pytest

from mindcross.config import RunConfig, config_digest
from mindcross.data import records_to_container, save
from mindcross.models import add_new_subject, fit_subject_stats, load_checkpoint, save_checkpoint
from mindcross.utilities.errors import ContainerError


def test_checkpoint_round_trip(tiny_model, tmp_path):
    add_new_subject(tiny_model, "new")
    tiny_model.group("encoder/subj1/norm0/gain").trainable = False
    tiny_model.similarity_cache["new"] = np.array([0.25, 0.75])
    fit_subject_stats(tiny_model, "subj1", np.random.default_rng(0).standard_normal((5, 8)))
    fit_subject_stats(tiny_model, "new", np.ones((2, 8)), shared=False)
    run = {"run": RunConfig().model_dump(mode="json")}
    path = tmp_path / "model.ckpt"
    save_checkpoint(tiny_model, path, extra={"run_config": run, "holdout": ["subj3"]})

    loaded = load_checkpoint(path)
    before, after = tiny_model.snapshot(), loaded.model.snapshot()
    assert before.keys() == after.keys()
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)
    assert loaded.model.new_subjects == ["new"]
    assert not loaded.model.group("encoder/subj1/norm0/gain").trainable
    np.testing.assert_array_equal(loaded.model.similarity_cache["new"], [0.25, 0.75])
    for subject, stats in tiny_model.subject_stats.items():
        restored = loaded.model.subject_stats[subject]
        assert restored.input_mean.tobytes() == stats.input_mean.tobytes()
        assert restored.input_std.tobytes() == stats.input_std.tobytes()
    assert loaded.model.subject_stats["subj1"].shared_mean.tobytes() == \
        tiny_model.subject_stats["subj1"].shared_mean.tobytes()
    assert loaded.model.subject_stats["new"].shared_mean is None
    assert loaded.extra["holdout"] == ["subj3"]
    assert loaded.digest == config_digest(run)


def test_checkpoint_bytes_are_reproducible(tiny_model, tmp_path):
    save_checkpoint(tiny_model, tmp_path / "a.ckpt")
    save_checkpoint(tiny_model, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_dataset_container_is_not_a_checkpoint(tiny_dataset, tmp_path):
    path = tmp_path / "data.mcds"
    save(records_to_container(tiny_dataset), path)
    with pytest.raises(ContainerError):
        load_checkpoint(path)
