"""Command-line entry point: synth, train, calibrate, eval, gradcheck, bench-adapt."""

import copy
import time
from collections.abc import Iterator, Mapping, Sequence
from contextlib import contextmanager
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import typer
from pydantic import ValidationError

from .config import (
    ModelConfig,
    RunConfig,
    SynthConfigFile,
    TrainConfigFile,
    config_digest,
    load_config_file,
    settings,
)
from .data import (
    Dataset,
    TrialRecord,
    container_to_records,
    export_jsonl,
    generate_synthetic,
    load,
    pool_features,
    records_to_container,
    save,
    split,
    subsample_stratified,
)
from .evaluation import (
    BudgetRow,
    CentroidClassifier,
    centroid_classifier,
    class_embeddings,
    evaluate,
    nway_key,
    write_budget_csv,
)
from .models import (
    MindCrossModel,
    build,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .pipeline import add_calibration_branch
from .pipeline import calibrate as run_calibration
from .pipeline import train as run_training
from .pipeline import train_from_scratch
from .selfcheck import run_gradient_suite
from .utilities.constants import (
    CONFIG_VERSION,
    EXIT_IO,
    EXIT_NUMERIC,
    EXIT_VALIDATION,
    NEW_SUBJECT_KEY,
)
from .utilities.errors import (
    ConfigError,
    ContainerError,
    DimensionError,
    DuplicateSubjectError,
    FrozenParameterDriftError,
    LabelError,
    NumericalError,
    UnknownSubjectError,
)
from .utilities.logging import configure_logging, get_logger

logger = get_logger(__name__)

app = typer.Typer(add_completion=False, help="Cross-subject brain decoding experiments.")


class OutputFormat(str, Enum):
    container = "container"
    json = "json"


class DaVariant(str, Enum):
    grl = "grl"
    kl = "kl"
    lp = "lp"


class BranchInit(str, Enum):
    nearest = "nearest"
    fresh = "fresh"
    copy = "copy"


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Maps library failures onto the documented exit codes."""
    try:
        yield
    except ValidationError as e:
        for err in e.errors():
            field = ".".join(str(p) for p in err["loc"])
            typer.echo(f"invalid {field}: {err['msg']}", err=True)
        raise typer.Exit(EXIT_VALIDATION) from e
    except (ConfigError, DimensionError, DuplicateSubjectError, UnknownSubjectError,
            LabelError) as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(EXIT_VALIDATION) from e
    except (NumericalError, FrozenParameterDriftError) as e:
        typer.echo(f"numeric failure: {e}", err=True)
        raise typer.Exit(EXIT_NUMERIC) from e
    except (ContainerError, OSError) as e:
        typer.echo(f"i/o error: {e}", err=True)
        raise typer.Exit(EXIT_IO) from e


def _timing(no_timing: bool) -> bool:
    return settings.record_wall_time and not no_timing


def _load_dataset(path: Path) -> Dataset:
    return container_to_records(load(path))


def _fit_input(dataset: Dataset, in_dim: int) -> Dataset:
    """Pools longer inputs down to the model input length."""
    lengths = {r.x.shape[0] for records in dataset.values() for r in records}
    if lengths == {in_dim}:
        return dataset
    if any(n < in_dim for n in lengths):
        raise DimensionError(f"data feature lengths {sorted(lengths)} vs model input {in_dim}")
    logger.info(f"Pooling inputs of length {sorted(lengths)} to {in_dim}")
    return pool_features(dataset, in_dim)


def _saved_run(extra: Mapping[str, Any]) -> RunConfig:
    stored = extra.get("run_config", {}).get("run")
    return RunConfig.model_validate(stored) if stored is not None else RunConfig()


def _stored_classifier(extra: Mapping[str, Any]) -> tuple[CentroidClassifier | None, str]:
    """Class centroids saved at training time, or None to build them from the test set."""
    centroids = extra.get("class_centroids")
    if centroids is None:
        logger.warning("Checkpoint has no class centroids; building them from the test set")
        return None, "test"
    return CentroidClassifier(np.asarray(centroids, dtype=np.float64)), "train"


def _override(run: RunConfig, **updates: Any) -> RunConfig:
    values = run.model_dump()
    values.update({k: v for k, v in updates.items() if v is not None})
    return RunConfig.model_validate(values)


def _parse_list(raw: str, cast: type = int) -> list[Any]:
    try:
        return [cast(item.strip()) for item in raw.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"cannot parse list {raw!r}: {e}") from e


@app.callback()
def main(
    log_level: str = typer.Option(None, "--log-level", help="DEBUG, INFO, WARNING or ERROR"),
) -> None:
    configure_logging(log_level or settings.log_level)


@app.command()
def synth(
    out: Path = typer.Option(..., "--out", help="Dataset container to write"),
    config: Path = typer.Option(None, "--config", help="JSON synthetic config"),
    seed: int = typer.Option(None, "--seed"),
    subjects: int = typer.Option(None, "--subjects", help="Number of subjects N"),
    classes: int = typer.Option(None, "--classes", help="Number of classes C"),
    trials: int = typer.Option(None, "--trials", help="Trials per class per subject"),
    clone_source: str = typer.Option(None, "--clone-source",
                                     help="Also generate a 'new' subject cloned from this one"),
    train_fraction: float = typer.Option(None, "--train-fraction",
                                         help="Split into --out and --test-out"),
    test_out: Path = typer.Option(None, "--test-out"),
    output_format: OutputFormat = typer.Option(OutputFormat.container, "--format"),
) -> None:
    """Generate a synthetic multi-subject dataset."""
    with _exit_codes():
        cfg = load_config_file(config, SynthConfigFile, {
            "synthetic.seed": seed,
            "synthetic.n_subjects": subjects,
            "synthetic.n_classes": classes,
            "synthetic.trials_per_class_per_subject": trials,
            "synthetic.clone_source": clone_source,
        })
        if (train_fraction is None) != (test_out is None):
            raise ConfigError("--train-fraction and --test-out must be given together")
        effective = cfg.model_dump(mode="json")
        dataset = generate_synthetic(cfg.synthetic)

        outputs: dict[Path, Dataset] = {out: dataset}
        if train_fraction is not None and test_out is not None:
            train_part: Dataset = {}
            test_part: Dataset = {}
            for subject, records in dataset.items():
                train_part[subject], test_part[subject] = split(records, train_fraction,
                                                                cfg.synthetic.seed)
            outputs = {out: train_part, test_out: test_part}

        for path, part in outputs.items():
            save(records_to_container(part, effective), path)
            if output_format is OutputFormat.json:
                export_jsonl(part, path.with_name(path.name + ".jsonl"))
            counts = ", ".join(f"{s}={len(r)}" for s, r in part.items())
            typer.echo(f"{path}: {sum(len(r) for r in part.values())} records ({counts})")


@app.command()
def train(
    data: Path = typer.Option(..., "--data", help="Training dataset container"),
    out: Path = typer.Option(..., "--out", help="Checkpoint to write"),
    config: Path = typer.Option(None, "--config", help="JSON train config"),
    metrics: Path = typer.Option(None, "--metrics", help="JSON-lines history"),
    holdout: list[str] = typer.Option([], "--holdout", help="Subject excluded from training"),
    da_variant: DaVariant = typer.Option(None, "--da-variant"),
    epochs: int = typer.Option(None, "--epochs"),
    hidden: int = typer.Option(None, "--hidden"),
    batch_size: int = typer.Option(None, "--batch-size"),
    seed: int = typer.Option(None, "--seed"),
    no_timing: bool = typer.Option(False, "--no-timing", help="Omit wall times from metrics"),
) -> None:
    """Train MindCross on every subject of the dataset except held-out ones."""
    with _exit_codes():
        cfg = load_config_file(config, TrainConfigFile, {
            "run.seed": seed,
            "run.epochs_train": epochs,
            "run.batch_size": batch_size,
            "run.da_variant": da_variant.value if da_variant else None,
            "model.hidden": hidden,
        })
        dataset = _load_dataset(data)
        for subject in holdout:
            if subject not in dataset:
                raise UnknownSubjectError(f"held-out subject {subject!r} is not in {data}")
        subjects = [s for s in dataset if s not in holdout and s != NEW_SUBJECT_KEY]
        training = {s: dataset[s] for s in subjects}
        if not training:
            raise ConfigError("no training subjects left after hold-out")

        first = training[subjects[0]][0]
        in_dim = cfg.model.pool_length or first.x.shape[0]
        training = _fit_input(training, in_dim)
        model_config = ModelConfig(in_dim=in_dim, hidden=cfg.model.hidden,
                                   embed_dim=first.e.shape[0], subjects=subjects,
                                   dropout_p=cfg.model.dropout_p, grl_scale=cfg.run.grl_scale,
                                   subject_norm=cfg.model.subject_norm, seed=cfg.run.seed)
        cfg.run.check_top_k(len(subjects))
        effective = {"config_version": CONFIG_VERSION,
                     "model": model_config.model_dump(mode="json"),
                     "architecture": cfg.model.model_dump(mode="json"),
                     "run": cfg.run.model_dump(mode="json")}

        model = build(model_config)
        start = time.perf_counter()
        history = run_training(model, training, cfg.run, record_wall_time=_timing(no_timing))
        elapsed = time.perf_counter() - start

        centroids = centroid_classifier(class_embeddings(training)).centroids
        save_checkpoint(model, out, extra={"run_config": effective, "holdout": list(holdout),
                                           "class_centroids": centroids.tolist()})
        if metrics is not None:
            history.config = effective
            history.write_jsonl(metrics, include_wall_time=_timing(no_timing))
        typer.echo(f"trained {len(subjects)} subjects for {cfg.run.epochs_train} epochs; "
                   f"final loss {history.records[-1].total:.6f}; "
                   f"{parameter_count(model)} parameters; config {config_digest(effective)[:12]}")
        if _timing(no_timing):
            typer.echo(f"wall time {elapsed:.2f}s")


def _calibration_subject(dataset: Dataset, model: MindCrossModel, requested: str | None) -> str:
    if requested is not None:
        if requested not in dataset:
            raise UnknownSubjectError(f"subject {requested!r} is not in the calibration data")
        return requested
    if NEW_SUBJECT_KEY in dataset:
        return NEW_SUBJECT_KEY
    unseen = [s for s in dataset if s not in model.config.subjects]
    if len(unseen) != 1:
        raise ConfigError(f"cannot pick the calibration subject from {list(dataset)}; "
                          f"pass --subject")
    return unseen[0]


@app.command()
def calibrate(
    model_path: Path = typer.Option(..., "--model", help="Trained checkpoint"),
    newdata: Path = typer.Option(..., "--newdata", help="Dataset holding the new subject"),
    budget: int = typer.Option(..., "--budget", help="Number of calibration trials"),
    out: Path = typer.Option(..., "--out", help="Calibrated checkpoint to write"),
    subject: str = typer.Option(None, "--subject", help="Subject of --newdata to calibrate on"),
    epochs: int = typer.Option(None, "--epochs"),
    seed: int = typer.Option(None, "--seed"),
    init: BranchInit = typer.Option(BranchInit.nearest, "--init",
                                    help="Starting point of the new branch"),
    copy_from: str = typer.Option(None, "--copy-from", help="Source subject for --init copy"),
    metrics: Path = typer.Option(None, "--metrics"),
    no_timing: bool = typer.Option(False, "--no-timing"),
) -> None:
    """Adapt a trained model to a new subject with only that subject's branch trainable."""
    with _exit_codes():
        checkpoint = load_checkpoint(model_path)
        model = checkpoint.model
        run = _override(_saved_run(checkpoint.extra), epochs_calib=epochs, seed=seed)
        dataset = _load_dataset(newdata)
        source = _calibration_subject(dataset, model, subject)
        records = _fit_input({source: dataset[source]}, model.config.in_dim)[source]
        chosen = subsample_stratified(records, budget, run.seed)

        run.check_top_k(len(model.config.subjects))
        warm_start = add_calibration_branch(model, chosen, init.value, copy_from)
        start = time.perf_counter()
        history = run_calibration(model, chosen, run, NEW_SUBJECT_KEY,
                                  record_wall_time=_timing(no_timing))
        elapsed = time.perf_counter() - start

        extra = dict(checkpoint.extra)
        extra["calibration"] = {"subject": source, "branch": NEW_SUBJECT_KEY, "budget": budget,
                                "init": init.value, "copy_from": warm_start,
                                "run": run.model_dump(mode="json")}
        save_checkpoint(model, out, extra=extra)
        if metrics is not None:
            history.config = extra
            history.write_jsonl(metrics, include_wall_time=_timing(no_timing))

        trainable = parameter_count(model, lambda g: g.trainable)
        typer.echo(f"calibrated {source!r} on {len(chosen)} trials; frozen groups verified")
        typer.echo(f"branch init {init.value}"
                   + (f" from {warm_start!r}" if warm_start is not None else ""))
        typer.echo(f"trainable parameters {trainable} of {parameter_count(model)}")
        if _timing(no_timing):
            typer.echo(f"wall time {elapsed:.2f}s")


@app.command("eval")
def eval_command(
    model_path: Path = typer.Option(..., "--model", help="Checkpoint to evaluate"),
    data: Path = typer.Option(..., "--data", help="Test dataset container"),
    report: Path = typer.Option(..., "--report", help="MetricReport JSON to write"),
    lambda_collab: float = typer.Option(None, "--lambda", help="Top-K collaboration weight"),
    topk: int = typer.Option(None, "--topk", help="K of the Top-K collaboration"),
    seed: int = typer.Option(None, "--seed"),
    trials: int = typer.Option(None, "--trials", help="Distractor draws per prediction"),
    no_probes: bool = typer.Option(False, "--no-probes"),
) -> None:
    """Score a checkpoint with the N-way top-K protocol, retrieval and domain probes."""
    with _exit_codes():
        checkpoint = load_checkpoint(model_path)
        model = checkpoint.model
        calibration = checkpoint.extra.get("calibration")
        base = RunConfig.model_validate(calibration["run"]) if calibration else _saved_run(
            checkpoint.extra)
        run = _override(base, lambda_collab=lambda_collab, top_k=topk, seed=seed)
        run.check_top_k(len(model.config.subjects))
        classifier, classifier_source = _stored_classifier(checkpoint.extra)

        dataset = _load_dataset(data)
        routing = {calibration["subject"]: calibration["branch"]} if calibration else {}
        served = {s: r for s, r in dataset.items()
                  if routing.get(s, s) in model.specific_encoders}
        skipped = sorted(set(dataset) - set(served))
        if skipped:
            logger.warning(f"No branch serves subjects {skipped}; they are not evaluated")
        served = _fit_input(served, model.config.in_dim)

        result = evaluate(model, served, run, seed=run.seed, trials=trials, routing=routing,
                          classifier=classifier, with_probes=not no_probes)
        result.config = {"checkpoint": checkpoint.extra, "run": run.model_dump(mode="json"),
                         "classifier": classifier_source}
        result.write_json(report)
        for key, value in result.overall.nway.items():
            typer.echo(f"{key}: {value:.4f}")
        typer.echo(f"retrieval: {result.overall.retrieval:.4f}")
        for name, value in result.probes.items():
            typer.echo(f"probe[{name}]: {'n/a' if value is None else f'{value:.4f}'}")


@app.command()
def gradcheck(
    tolerance: float = typer.Option(None, "--tolerance", help="Max relative error"),
    seed: int = typer.Option(None, "--seed"),
) -> None:
    """Central-difference check of every loss on a 4-unit model."""
    with _exit_codes():
        rows = run_gradient_suite(seed if seed is not None else settings.default_seed, tolerance)
        typer.echo(f"{'check':<24}{'max error':>14}{'tolerance':>12}  result")
        for row in rows:
            verdict = "PASS" if row.passed else "FAIL"
            typer.echo(f"{row.name:<24}{row.max_error:>14.3e}{row.tolerance:>12.1e}  {verdict}")
        if not all(row.passed for row in rows):
            raise typer.Exit(EXIT_NUMERIC)


def _bench_scores(model: MindCrossModel, heldout: str, branch: str, test: Sequence[TrialRecord],
                  run: RunConfig, seed: int,
                  classifier: CentroidClassifier) -> tuple[float, float, int]:
    report = evaluate(model, {heldout: list(test)}, run, seed=seed, routing={heldout: branch},
                      classifier=classifier, with_probes=False)
    keys = list(report.overall.nway)
    n_way = int(keys[-1].split("-")[0])
    return report.overall.nway[nway_key(2, 1)], report.overall.nway[keys[-1]], n_way


@app.command("bench-adapt")
def bench_adapt(
    data: Path = typer.Option(..., "--data", help="Dataset with at least three subjects"),
    out: Path = typer.Option(..., "--out", help="CSV to write"),
    budgets: str = typer.Option("40,200", "--budgets"),
    strategies: str = typer.Option("calib,scratch", "--strategies"),
    seeds: str = typer.Option("0,1,2", "--seeds"),
    config: Path = typer.Option(None, "--config", help="JSON train config"),
    epochs: int = typer.Option(None, "--epochs", help="Training epochs (also used by scratch)"),
    calib_epochs: int = typer.Option(None, "--calib-epochs"),
    hidden: int = typer.Option(None, "--hidden"),
    train_fraction: float = typer.Option(0.5, "--train-fraction",
                                         help="Share of the held-out subject used as budget pool"),
    no_timing: bool = typer.Option(False, "--no-timing"),
) -> None:
    """Leave-one-subject-out comparison of calibration against training from scratch."""
    with _exit_codes():
        cfg = load_config_file(config, TrainConfigFile, {
            "run.epochs_train": epochs,
            "run.epochs_calib": calib_epochs,
            "model.hidden": hidden,
        })
        budget_list = _parse_list(budgets)
        strategy_list = _parse_list(strategies, str)
        seed_list = _parse_list(seeds)
        unknown = set(strategy_list) - {"calib", "scratch"}
        if unknown:
            raise ConfigError(f"unknown strategies {sorted(unknown)}")
        dataset = _load_dataset(data)
        subjects = [s for s in dataset if s != NEW_SUBJECT_KEY]
        if len(subjects) < 3:
            raise ConfigError(f"bench-adapt needs at least three subjects, got {len(subjects)}")
        cfg.run.check_top_k(len(subjects) - 1)
        first = dataset[subjects[0]][0]
        in_dim = cfg.model.pool_length or first.x.shape[0]
        dataset = _fit_input({s: dataset[s] for s in subjects}, in_dim)
        timing = _timing(no_timing)

        rows: list[BudgetRow] = []
        for heldout in subjects:
            pool, test = split(dataset[heldout], train_fraction, 0)
            others = [s for s in subjects if s != heldout]
            classifier = centroid_classifier(class_embeddings({s: dataset[s] for s in others}))
            for seed in seed_list:
                run = _override(cfg.run, seed=seed)
                base = build(ModelConfig(in_dim=in_dim, hidden=cfg.model.hidden,
                                         embed_dim=first.e.shape[0], subjects=others,
                                         dropout_p=cfg.model.dropout_p, grl_scale=run.grl_scale,
                                         subject_norm=cfg.model.subject_norm, seed=seed))
                run_training(base, {s: dataset[s] for s in others}, run, record_wall_time=False)
                for budget in budget_list:
                    chosen = subsample_stratified(pool, budget, seed)
                    for strategy in strategy_list:
                        start = time.perf_counter()
                        if strategy == "calib":
                            model = copy.deepcopy(base)
                            add_calibration_branch(model, chosen)
                            run_calibration(model, chosen, run, record_wall_time=False)
                            branch = NEW_SUBJECT_KEY
                        else:
                            scratch_run = run if run.da_variant == "grl" else _override(
                                run, da_variant="grl")
                            model, _ = train_from_scratch(
                                ModelConfig(in_dim=in_dim, hidden=cfg.model.hidden,
                                            embed_dim=first.e.shape[0], subjects=[heldout],
                                            dropout_p=cfg.model.dropout_p,
                                            subject_norm=cfg.model.subject_norm, seed=seed),
                                {heldout: chosen}, scratch_run)
                            branch = heldout
                        elapsed = time.perf_counter() - start
                        acc2, accn, n_way = _bench_scores(model, heldout, branch, test, run, seed,
                                                          classifier)
                        rows.append(BudgetRow(
                            heldout=heldout, budget=budget, strategy=strategy, seed=seed,
                            accuracy_2way=acc2, accuracy_nway=accn, n_way=n_way,
                            trainable_parameters=parameter_count(model, lambda g: g.trainable),
                            wall_time=elapsed if timing else None,
                        ))
                        logger.info(f"{heldout} budget={budget} {strategy} seed={seed}: "
                                    f"2-way {acc2:.3f}, {n_way}-way {accn:.3f}")

        order = {s: i for i, s in enumerate(strategy_list)}
        rows.sort(key=lambda r: (subjects.index(r.heldout), budget_list.index(r.budget),
                                 order[r.strategy], seed_list.index(r.seed)))
        effective = {"config_version": CONFIG_VERSION, "budgets": budget_list,
                     "strategies": strategy_list, "seeds": seed_list,
                     "train_fraction": train_fraction,
                     "architecture": cfg.model.model_dump(mode="json"),
                     "run": cfg.run.model_dump(mode="json")}
        write_budget_csv(rows, out, effective)
        typer.echo(f"wrote {len(rows)} rows to {out}")


def run() -> None:
    app()


if __name__ == "__main__":
    run()
