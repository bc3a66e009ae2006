"""The training loop with per-batch instrumentation, and config sweeps.

Per batch: backprop, optimizer step, then delta_w from the pre/post-step
flat parameters and delta_a from the probe-set patterns before/after the
step (both captured in eval mode on parameter snapshots).  Early
stopping watches the best validation score with a patience of
floor(epochs * patience_fraction) epochs and a relative minimum
improvement threshold.

Instrumentation is non-intrusive: probe forwards run in eval mode and
dropout/shuffle draw from their own PRNG streams, so disabling metrics
leaves the loss sequence bit-identical.
"""

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import metrics as rm
from .config import RunConfig
from .checkpoint import save_checkpoint
from .data import Dataset, load_dataset
from .errors import DivergenceError
from .nn import backward, build_model, evaluate_accuracy, forward, init_params
from .optim import OptimizerState, step
from .prng import stream

TRAIN_SCORE_SAMPLE = 2000  # eval at most this many train samples per epoch


@dataclass
class RunSummary:
    config: dict
    best_val_score: float
    best_epoch: int
    early_stop_epoch: int
    stopped_early: bool
    epochs_run: int
    num_batches: int
    batches_per_epoch: int
    sma_window: int
    probe_size: int
    param_count: int
    auc_w: Optional[float]
    auc_p: Optional[float]
    rho: Optional[float]
    rho_degenerate: bool
    split: str
    diverged: bool = False
    wall_clock_sec: float = 0.0  # written to timing.json, never summary.json

    def to_json_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "wall_clock_sec"}
        return d


@dataclass
class RunResult:
    summary: RunSummary
    dw: Optional[rm.TrajectorySeries]
    da: Optional[rm.TrajectorySeries]
    scores: List[Tuple[int, float, float, int]]  # (epoch, train, val, end_batch_index)
    loss_seq: List[float] = field(default_factory=list)


def _load_run_dataset(config: RunConfig) -> Dataset:
    return load_dataset(config.dataset, path=config.dataset_path,
                        train_size=config.train_size, val_size=config.val_size,
                        seed=config.seed)


def run_training(config: RunConfig, out_dir: Optional[str] = None,
                 capture_metrics: Optional[bool] = None) -> RunResult:
    """Train one configuration; write artifacts if out_dir is given.

    Raises DivergenceError on a non-finite loss, after preserving
    whatever partial artifacts exist.
    """
    t_start = time.perf_counter()
    capture = config.metrics_enabled if capture_metrics is None else capture_metrics
    dataset = _load_run_dataset(config)
    model_def = build_model(config.model, dropout_rate=config.dropout_rate,
                            custom=config.custom_model_spec())
    model = list(model_def.layers)
    params = init_params(model, stream(config.seed, "init"))
    opt_config = config.optimizer_config()
    opt_state = OptimizerState(opt_config, params)
    dropout_rng = stream(config.seed, "dropout")
    shuffle_rng = stream(config.seed, "shuffle")

    train_x, train_y = dataset.train_inputs, dataset.train_labels
    val_x, val_y = dataset.val_inputs, dataset.val_labels
    n_train = train_x.shape[0]
    batches_per_epoch = math.ceil(n_train / config.batch_size)
    patience = max(1, int(math.floor(config.epochs * config.patience_fraction)))

    probe = rm.select_probe_set(val_x, config.batch_size, stream(config.seed, "probe"),
                                fraction=config.probe_fraction)
    pattern_prev = rm.capture_pattern(model, params, probe) if capture else None

    dw_raw: List[float] = []
    da_raw: List[float] = []
    loss_seq: List[float] = []
    scores: List[Tuple[int, float, float, int]] = []
    best_val = -math.inf          # reported best validation score
    best_epoch = 0
    threshold_best = -math.inf    # patience bookkeeping (thresholded improvements)
    epochs_since_improvement = 0
    stopped_early = False
    batch_index = 0
    epochs_run = 0
    diverged = False
    train_eval_n = min(TRAIN_SCORE_SAMPLE, n_train)

    try:
        for epoch in range(1, config.epochs + 1):
            perm = shuffle_rng.permutation(n_train)
            for start in range(0, n_train, config.batch_size):
                idx = perm[start:start + config.batch_size]
                loss_val, grad = backward(model, params, (train_x[idx], train_y[idx]),
                                          loss=config.loss, mode="train",
                                          rng=dropout_rng, batch_index=batch_index)
                loss_seq.append(loss_val)
                w_prev = params.to_flat()
                step(opt_config, opt_state, params, grad)
                if capture:
                    dw_raw.append(rm.delta_w(w_prev, params.to_flat()))
                    pattern = rm.capture_pattern(model, params, probe)
                    da_raw.append(rm.delta_a(pattern_prev, pattern))
                    pattern_prev = pattern
                batch_index += 1
            epochs_run = epoch

            train_score = evaluate_accuracy(model, params, train_x[:train_eval_n],
                                            train_y[:train_eval_n])
            val_score = evaluate_accuracy(model, params, val_x, val_y)
            scores.append((epoch, train_score, val_score, batch_index - 1))

            if val_score > best_val:
                best_val = val_score
                best_epoch = epoch
            improved = val_score > threshold_best * (1.0 + config.min_improvement) \
                if threshold_best > 0 else val_score > threshold_best
            if improved:
                threshold_best = val_score
                epochs_since_improvement = 0
            else:
                epochs_since_improvement += 1
                if epochs_since_improvement >= patience:
                    stopped_early = True
                    break
    except DivergenceError:
        diverged = True
        raise
    finally:
        summary, dw, da = _summarize(config, dataset, params, capture, dw_raw, da_raw,
                                     batches_per_epoch, best_val, best_epoch, epochs_run,
                                     stopped_early, batch_index, probe, diverged)
        summary.wall_clock_sec = time.perf_counter() - t_start
        result = RunResult(summary=summary, dw=dw, da=da, scores=scores, loss_seq=loss_seq)
        if out_dir is not None:
            write_artifacts(Path(out_dir), config, model_def, model, params, result)
    return result


def _summarize(config, dataset, params, capture, dw_raw, da_raw, batches_per_epoch,
               best_val, best_epoch, epochs_run, stopped_early, num_batches, probe,
               diverged):
    window = rm.sma_window(batches_per_epoch, config.sma_fraction)
    dw = da = None
    auc_w = auc_p = rho = None
    rho_degenerate = False
    if capture and dw_raw:
        dw = rm.TrajectorySeries.from_raw(np.array(dw_raw), window)
        da = rm.TrajectorySeries.from_raw(np.array(da_raw), window)
        auc_w = dw.auc
        auc_p = da.auc
        ratio = rm.speedup_ratio(auc_w, auc_p)
        if math.isfinite(ratio):
            rho = ratio
        else:
            rho_degenerate = True
    summary = RunSummary(
        config=config.to_dict(),
        best_val_score=best_val if best_val > -math.inf else 0.0,
        best_epoch=best_epoch,
        early_stop_epoch=epochs_run,
        stopped_early=stopped_early,
        epochs_run=epochs_run,
        num_batches=num_batches,
        batches_per_epoch=batches_per_epoch,
        sma_window=window,
        probe_size=probe.size,
        param_count=params.flat_len,
        auc_w=auc_w, auc_p=auc_p, rho=rho, rho_degenerate=rho_degenerate,
        split=dataset.meta.get("split", "unknown"),
        diverged=diverged,
    )
    return summary, dw, da


def write_artifacts(out_dir: Path, config: RunConfig, model_def, model, params,
                    result: RunResult) -> None:
    """config echo, trajectories CSV, scores CSV, summary/timing JSON, checkpoint."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(config.to_text())
    if result.dw is not None:
        rm.write_trajectories_csv(out_dir / "trajectories.csv", result.dw, result.da)
    with open(out_dir / "scores.csv", "w") as fh:
        fh.write("epoch,train_score,val_score,end_batch_index\n")
        for epoch, train_score, val_score, end_batch in result.scores:
            fh.write(f"{epoch},{train_score!r},{val_score!r},{end_batch}\n")
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(result.summary.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out_dir / "timing.json", "w") as fh:
        json.dump({"wall_clock_sec": result.summary.wall_clock_sec}, fh)
        fh.write("\n")
    save_checkpoint(out_dir / "checkpoint.bin", model, params,
                    {"model": model_def.name,
                     "input_shape": list(model_def.input_shape),
                     "num_classes": model_def.num_classes})


def _sweep_one(args):
    index, config_dict = args
    config = RunConfig.from_dict(config_dict)
    try:
        result = run_training(config)
        return index, result.summary.to_json_dict(), None
    except Exception as exc:  # propagate per-run failures without killing the sweep
        return index, None, f"{type(exc).__name__}: {exc}"


def sweep_threads() -> int:
    raw = os.environ.get("REGIME_SCOPE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def sweep(configs: List[RunConfig], max_workers: Optional[int] = None) -> dict:
    """Run many configs, assemble summaries in config order, pick best-by-val.

    Ties break toward the lower config index.  Failures are recorded per
    run and do not abort the sweep.
    """
    if not configs:
        raise ValueError("empty config list")
    if max_workers is None:
        max_workers = sweep_threads()
    jobs = [(i, c.to_dict()) for i, c in enumerate(configs)]
    results = [None] * len(configs)
    if max_workers == 1:
        for job in jobs:
            results[job[0]] = _sweep_one(job)
    else:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            for index, summary, error in pool.map(_sweep_one, jobs):
                results[index] = (index, summary, error)

    rows = []
    best_index = None
    best_score = -math.inf
    for index, summary, error in results:
        rows.append({"index": index, "summary": summary, "error": error})
        if summary is not None and summary["best_val_score"] > best_score:
            best_score = summary["best_val_score"]
            best_index = index
    return {"runs": rows, "best_index": best_index}


def paper_mlp_grid(base: RunConfig) -> List[RunConfig]:
    """The MLP sweep grid: {sgd, adam} x lr {1e-2, 1e-3, 1e-4} x wd {1e-3, 1e-4}."""
    configs = []
    for opt in ("sgd", "adam"):
        for lr in (1e-2, 1e-3, 1e-4):
            for wd in (1e-3, 1e-4):
                d = base.to_dict()
                d.update(optimizer=opt, lr=lr, weight_decay=wd)
                configs.append(RunConfig.from_dict(d))
    return configs
