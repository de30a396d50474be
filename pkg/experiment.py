"""
Experiment runner used by the CLI.

Every public method writes its artifacts under `out_root` and returns the
pydantic model it wrote. Independent runs (compare seeds, grid cells) go
through a process pool when `workers > 1`; `timing_isolated` forces them to
run one after another so step timings are not shared with siblings.
"""
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from gcsam import (
    BATCH_RNG,
    GENERATOR_RNG,
    BoundDomainError,
    BoundParams,
    ComparisonReport,
    ComparisonRow,
    CountingOracle,
    CsvSource,
    EpochRecord,
    EvaluationError,
    GcsamError,
    GridAxes,
    GridCell,
    GridSearchResult,
    InvalidInputError,
    LandscapeExport,
    LandscapeGrid,
    MlpOracle,
    NonFiniteGradientError,
    ParamSet,
    RunConfig,
    RunReport,
    SplitSpec,
    StepAbortedError,
    StepTelemetry,
    bound_report,
    build_dataset,
    build_optimizer,
    comparable_view,
    config_digest,
    estimate_sharpness,
    evaluate,
    init_params,
    load_checkpoint,
    load_config,
    minibatches,
    orthogonal_gaussian_directions,
    parameter_count,
    sample_landscape,
    save_checkpoint,
    spec_hash,
    split_dataset,
    summarize_centralization,
    with_optimizer,
    with_seed,
    write_telemetry_csv,
)

logger = logging.getLogger(__name__)

_VERSIONED_PACKAGES = ("numpy", "pandas", "scikit-learn", "pydantic")

RunOutcome = Tuple[Optional[RunReport], Optional[str]]


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """load_config, with a relative CSV path resolved against the config file's directory."""
    path = Path(path)
    config = load_config(path)
    source = config.data.source
    if isinstance(source, CsvSource) and not Path(source.path).is_absolute():
        resolved = source.model_copy(update={"path": str((path.parent / source.path).resolve())})
        data = config.data.model_copy(update={"source": resolved})
        config = config.model_copy(update={"data": data})
    return config


def run_id_for(config: RunConfig) -> str:
    return f"{config.optimizer.kind}-s{config.seed}-{config_digest(config)[:10]}"


def _environment() -> Dict[str, str]:
    env = {
        "generator_rng": GENERATOR_RNG,
        "batch_rng": BATCH_RNG,
        "python": platform.python_version(),
    }
    for package in _VERSIONED_PACKAGES:
        try:
            env[package] = version(package)
        except PackageNotFoundError:
            env[package] = "unknown"
    return env


def _mean_std(values: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    if not values:
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _describe(exc: BaseException) -> str:
    return f"{type(exc).__name__}: {exc}"


def _run_job(out_root: str, config: RunConfig) -> RunOutcome:
    """Process-pool entry point; errors come back as text so they always pickle."""
    try:
        return ExperimentRunner(Path(out_root)).run(config), None
    except GcsamError as exc:
        return None, _describe(exc)


class ExperimentRunner:
    def __init__(self, out_root: Union[str, Path] = "runs", workers: int = 1, timing_isolated: bool = False):
        if workers < 1:
            raise InvalidInputError(f"workers must be >= 1, got {workers}")
        self.out_root = Path(out_root)
        self.workers = workers
        self.timing_isolated = timing_isolated

    @property
    def effective_workers(self) -> int:
        return 1 if self.timing_isolated else self.workers

    # ------------------------------------------------------------------
    # run
    # ------------------------------------------------------------------

    def _baseline_report(self, run_id: str) -> RunReport:
        path = self.out_root / run_id / "report.json"
        if not path.is_file():
            raise InvalidInputError(f"baseline run '{run_id}' not found (looked for {path})")
        return RunReport.model_validate_json(path.read_text(encoding="utf-8"))

    def run(self, config: RunConfig, baseline: Optional[str] = None) -> RunReport:
        """
        Train one model and write `<out_root>/<run_id>/` with report.json,
        steps.csv and checkpoint.npz.

        A non-finite gradient, an aborted SAM step or a non-finite evaluation
        stops training; the report is then marked failed and keeps the
        parameters from the last good step.
        """
        baseline_report = self._baseline_report(baseline) if baseline else None
        started = time.perf_counter()
        run_id = run_id_for(config)
        spec = config.model
        logger.info("Run %s: %s on %s", run_id, config.optimizer.kind, config.data.source.kind)

        dataset = build_dataset(config.data)
        train, test = split_dataset(dataset, config.data.split)
        validation = None
        if config.early_stop is not None:
            carve = SplitSpec(test_fraction=config.early_stop.validation_fraction, seed=config.data.split.seed)
            train, validation = split_dataset(train, carve)
        if config.batch_size > len(train):
            raise InvalidInputError(f"batch_size {config.batch_size} exceeds the {len(train)} training rows")

        params = init_params(spec)
        oracle = CountingOracle(MlpOracle(spec))
        optimizer = build_optimizer(config.optimizer)
        state = optimizer.init_state(params)

        per_epoch = math.ceil(len(train) / config.batch_size)
        max_epochs = config.epochs or math.ceil(config.max_steps / per_epoch)
        telemetry: List[StepTelemetry] = []
        epochs: List[EpochRecord] = []
        status: Literal["completed", "failed"] = "completed"
        error: Optional[str] = None
        best: Optional[Tuple[float, int, ParamSet]] = None
        stale = 0
        early_stopped = False

        for epoch in range(max_epochs):
            try:
                for batch in minibatches(train, config.batch_size, config.seed, config.shuffle, epoch):
                    if config.max_steps is not None and len(telemetry) >= config.max_steps:
                        break
                    params, state, step_record = optimizer.step(params, batch, oracle, state)
                    telemetry.append(step_record)
                    logger.debug("step %d loss %.6g", step_record.step, step_record.loss_clean)
                train_loss, train_acc = evaluate(spec, params, train)
                record = EpochRecord(epoch=epoch, steps=len(telemetry), train_loss=train_loss, train_accuracy=train_acc)
                if validation is not None:
                    record.val_loss, record.val_accuracy = evaluate(spec, params, validation)
            except (NonFiniteGradientError, StepAbortedError, EvaluationError) as exc:
                status, error = "failed", _describe(exc)
                logger.error("Run %s failed after step %d: %s", run_id, len(telemetry), exc)
                break
            epochs.append(record)
            logger.info("Epoch %d: train loss %.6g", epoch, train_loss)

            if validation is not None:
                stop = config.early_stop
                score = record.val_loss if stop.metric == "val_loss" else -(record.val_accuracy or 0.0)
                if best is None or score < best[0]:
                    best, stale = (score, epoch, params), 0
                else:
                    stale += 1
                    if stale >= stop.patience:
                        early_stopped = True
                        logger.info("Early stop after epoch %d; restoring epoch %d", epoch, best[1])
                        break
            if config.max_steps is not None and len(telemetry) >= config.max_steps:
                break

        if early_stopped:
            params = best[2]

        test_loss = test_acc = sharpness = bound = None
        sharpness_seed = config.sharpness.seed if config.sharpness.seed is not None else config.seed
        if status == "completed":
            test_loss, test_acc = evaluate(spec, params, test)
            if config.sharpness.enabled:
                s = config.sharpness
                try:
                    sharpness = estimate_sharpness(
                        MlpOracle(spec), params, train, s.rho, s.m, s.ascent_steps, sharpness_seed, s.min_radius
                    )
                except EvaluationError as exc:
                    logger.warning("Sharpness estimate failed: %s", exc)
            if config.bound is not None and sharpness is not None and sharpness.max_perturbed_loss is not None:
                b = config.bound
                bp = BoundParams(
                    n=len(train),
                    k=params.num_elements,
                    delta=b.delta,
                    eta=b.eta,
                    rho=sharpness.rho,
                    constant_term=b.constant_term,
                )
                try:
                    bound = bound_report(sharpness.max_perturbed_loss, params.sq_norm(), bp)
                except BoundDomainError as exc:
                    logger.warning("Bound not evaluated: %s", exc)

        opt = config.optimizer
        gcsam = opt.kind == "gcsam"
        centralization = summarize_centralization(
            telemetry,
            ascent=gcsam and opt.sam.centralize_ascent,
            descent=gcsam and opt.sam.centralize_descent,
            column_axis=opt.sam.gc.column_axis,
            min_rank=opt.sam.gc.min_rank,
        )

        seeds = {
            "run": config.seed,
            "init": spec.seed,
            "batch_order": config.seed,
            "split": config.data.split.seed,
            "sharpness": sharpness_seed,
        }
        data_seed = getattr(config.data.source, "seed", None)
        if data_seed is not None:
            seeds["data"] = data_seed

        mean_step_ns = float(np.mean([t.step_wall_ns for t in telemetry])) if telemetry else None
        relative_speed = None
        if baseline_report is not None and mean_step_ns and baseline_report.mean_step_ns:
            relative_speed = mean_step_ns / baseline_report.mean_step_ns

        last = epochs[-1] if epochs else None
        run_dir = self.out_root / run_id
        write_telemetry_csv(run_dir / "steps.csv", telemetry)
        save_checkpoint(run_dir / "checkpoint.npz", params, spec)

        report = RunReport(
            run_id=run_id,
            status=status,
            error=error,
            last_good_step=len(telemetry),
            config=config,
            seeds=seeds,
            dataset=dataset.provenance,
            train_rows=len(train),
            test_rows=len(test),
            validation_rows=len(validation) if validation is not None else 0,
            epochs=epochs,
            early_stopped=early_stopped,
            best_epoch=best[1] if best is not None else None,
            steps_executed=len(telemetry),
            oracle_calls=oracle.calls,
            oracle_calls_per_step=optimizer.oracle_calls_per_step,
            final_train_loss=last.train_loss if last else None,
            final_train_accuracy=last.train_accuracy if last else None,
            test_loss=test_loss,
            test_accuracy=test_acc,
            sharpness=sharpness,
            bound=bound,
            centralization=centralization,
            param_digest=params.digest(),
            param_count=parameter_count(spec),
            environment=_environment(),
            total_wall_s=time.perf_counter() - started,
            mean_step_ns=mean_step_ns,
            relative_speed=relative_speed,
            baseline_run_id=baseline,
        )
        (run_dir / "report.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
        logger.info("Run %s %s: test accuracy %s", run_id, status, test_acc)
        return report

    def _run_many(self, configs: Sequence[RunConfig]) -> List[RunOutcome]:
        workers = self.effective_workers
        if workers > 1 and len(configs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_run_job, str(self.out_root), config) for config in configs]
                return [future.result() for future in futures]
        outcomes = []
        for config in configs:
            try:
                outcomes.append((self.run(config), None))
            except GcsamError as exc:
                outcomes.append((None, _describe(exc)))
        return outcomes

    # ------------------------------------------------------------------
    # compare
    # ------------------------------------------------------------------

    def compare(self, configs: Sequence[RunConfig], seeds: Sequence[int]) -> ComparisonReport:
        """
        Run every config with every seed. Speed is the per-seed ratio of mean
        step time to the first config's, so the first row is 1.00.
        """
        if len(configs) < 2:
            raise InvalidInputError("compare needs at least two configs")
        if not seeds:
            raise InvalidInputError("compare needs at least one seed")
        reference = comparable_view(configs[0])
        for i, config in enumerate(configs[1:], start=1):
            view = comparable_view(config)
            if view != reference:
                keys = sorted(k for k in set(view) | set(reference) if view.get(k) != reference.get(k))
                raise InvalidInputError(
                    f"config {i} ({config.label}) differs from config 0 outside the optimizer: {', '.join(keys)}"
                )

        jobs = [with_seed(config, seed) for config in configs for seed in seeds]
        outcomes = self._run_many(jobs)
        grouped = [outcomes[i * len(seeds):(i + 1) * len(seeds)] for i in range(len(configs))]
        baseline = grouped[0]

        rows = []
        for config, group in zip(configs, grouped):
            done = [report for report, _ in group if report is not None and report.status == "completed"]
            ratios = []
            for (report, _), (base, _) in zip(group, baseline):
                if report and base and report.mean_step_ns and base.mean_step_ns:
                    ratios.append(report.mean_step_ns / base.mean_step_ns)
            acc_mean, acc_std = _mean_std([r.test_accuracy for r in done if r.test_accuracy is not None])
            sharp_mean, sharp_std = _mean_std(
                [r.sharpness.estimate for r in done if r.sharpness is not None and r.sharpness.estimate is not None]
            )
            speed_mean, speed_std = _mean_std(ratios)
            for report, err in group:
                if err is not None:
                    logger.warning("%s: run failed: %s", config.label, err)
            rows.append(
                ComparisonRow(
                    name=config.label,
                    optimizer=config.optimizer.kind,
                    seeds=list(seeds),
                    run_ids=[report.run_id for report, _ in group if report is not None],
                    failed_runs=len(group) - len(done),
                    accuracy_mean=acc_mean,
                    accuracy_std=acc_std,
                    sharpness_mean=sharp_mean,
                    sharpness_std=sharp_std,
                    speed_mean=speed_mean,
                    speed_std=speed_std,
                )
            )

        result = ComparisonReport(seeds=list(seeds), baseline=configs[0].label, rows=rows)
        self.out_root.mkdir(parents=True, exist_ok=True)
        (self.out_root / "comparison.json").write_text(result.model_dump_json(indent=2), encoding="utf-8")
        return result

    # ------------------------------------------------------------------
    # landscape
    # ------------------------------------------------------------------

    def landscape(
        self,
        config: RunConfig,
        checkpoint: Union[str, Path],
        axes: GridAxes,
        seed: int = 0,
        normalization: Literal["raw", "per_layer"] = "raw",
        out_dir: Optional[Union[str, Path]] = None,
    ) -> LandscapeGrid:
        """Sample the training loss around a checkpoint and write landscape.csv / landscape.json."""
        spec = config.model
        params = load_checkpoint(checkpoint, spec)
        train, _ = split_dataset(build_dataset(config.data), config.data.split)
        directions = orthogonal_gaussian_directions(params, seed, normalization)
        grid = sample_landscape(
            MlpOracle(spec),
            params,
            axes,
            directions,
            train,
            seed=seed,
            normalization=normalization,
            workers=self.effective_workers,
        )

        out = Path(out_dir) if out_dir is not None else self.out_root
        grid.to_csv(out / "landscape.csv")
        meta = LandscapeExport(
            checkpoint=str(checkpoint),
            spec_hash=spec_hash(spec),
            axes=axes,
            seed=seed,
            normalization=normalization,
            center_loss=grid.center_loss,
            failed_cells=int(np.isnan(grid.losses).sum()),
            rows=int(grid.losses.size),
        )
        (out / "landscape.json").write_text(meta.model_dump_json(indent=2), encoding="utf-8")
        logger.info("Landscape %dx%d written to %s", *grid.shape, out)
        return grid

    # ------------------------------------------------------------------
    # grid search
    # ------------------------------------------------------------------

    def grid_search(
        self,
        template: RunConfig,
        lrs: Sequence[float],
        rhos: Sequence[float],
        seeds: Sequence[int],
    ) -> GridSearchResult:
        """
        Evaluate every (lr, rho) cell with every seed and pick the best by
        mean test accuracy, then lower sharpness, then lower lr. A cell with
        any failed run is recorded as failed and never selected.
        """
        lrs = sorted(set(float(v) for v in lrs))
        rhos = sorted(set(float(v) for v in rhos))
        if not lrs or not rhos:
            raise InvalidInputError("grid search needs at least one lr and one rho")
        if not seeds:
            raise InvalidInputError("grid search needs at least one seed")
        if any(v <= 0 for v in lrs):
            raise InvalidInputError("learning rates must be positive")
        if any(v < 0 for v in rhos):
            raise InvalidInputError("rho values must be non-negative")

        cells_spec = [(lr, rho) for lr in lrs for rho in rhos]
        jobs = [with_seed(with_optimizer(template, lr, rho), seed) for lr, rho in cells_spec for seed in seeds]
        outcomes = self._run_many(jobs)

        cells = []
        for i, (lr, rho) in enumerate(cells_spec):
            group = outcomes[i * len(seeds):(i + 1) * len(seeds)]
            cell = GridCell(lr=lr, rho=rho, optimizer=template.optimizer.kind, seeds=list(seeds))
            errors = []
            for report, err in group:
                if report is None:
                    errors.append(err)
                    continue
                cell.run_ids.append(report.run_id)
                if report.status != "completed":
                    errors.append(report.error)
                    continue
                if report.test_accuracy is not None:
                    cell.accuracies.append(report.test_accuracy)
                if report.sharpness is not None and report.sharpness.estimate is not None:
                    cell.sharpness.append(report.sharpness.estimate)
            if errors:
                cell.status = "failed"
                cell.error = "; ".join(e or "unknown error" for e in errors)
                logger.warning("Grid cell lr=%g rho=%g failed: %s", lr, rho, cell.error)
            cell.mean_accuracy = _mean_std(cell.accuracies)[0]
            cell.mean_sharpness = _mean_std(cell.sharpness)[0]
            cells.append(cell)

        candidates = [c for c in cells if c.status == "completed"]
        best = min(candidates, key=GridCell.selection_key) if candidates else None
        result = GridSearchResult(
            seeds=list(seeds),
            cells=cells,
            best=best,
            best_config=with_optimizer(template, best.lr, best.rho) if best else None,
        )

        self.out_root.mkdir(parents=True, exist_ok=True)
        (self.out_root / "grid_search.json").write_text(result.model_dump_json(indent=2), encoding="utf-8")
        result.to_frame().to_csv(
            self.out_root / "grid_search.csv", index=False, float_format="%.17g", lineterminator="\n"
        )
        return result
