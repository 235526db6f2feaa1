"""Experiment orchestration: staged runs, grids, sweeps, and studies.

A run is fully described by a RunConfig. The same staged loop drives single
runs, LR x WD grids, stage-count sweeps, label-noise studies, and the
online/warm-start simulation; studies differ only in how they vary the
config and slice the data. Every piece of randomness is owned by one of four
named seeds, so any run can be replayed bit-for-bit.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (
    AugmentSpec,
    Dataset,
    apply_normalization,
    augment_batch,
    compute_normalization,
    inject_label_noise,
    load_csv,
    load_idx,
    make_chunks,
    make_synthetic,
    split,
    split_indices,
    subset,
)
from .distill import TeacherCache, distill_rows, save_teacher_cache, snapshot_teacher
from .errors import ConfigurationError, HarnessError, NumericalError
from .nn import (
    FrozenNormLayer,
    InitDistribution,
    NetworkSpec,
    ParamVector,
    block_norms,
    forward,
    init_params,
    loss_grad_logits,
    weight_norm,
)
from .optim import LrSchedule, OptimState, lr_at, sgd_step
from .reinit import (
    ReinitContext,
    ReinitSpec,
    apply_reinit,
    make_stage_plan,
    shrink_perturb,
    stage_seed,
)
from .runio import MetricsRecord, emit_metrics, save_checkpoint, write_summary_csv

SETTINGS = ("none", "d", "dc", "dcw")

# fixed tags for deriving independent sub-seeds from the named seeds
TEST_SPLIT_TAG = 101
VAL_SPLIT_TAG = 102
CHUNK_TAG = 103
AUGMENT_TAG = 104

EVAL_BATCH = 1024


@dataclass(frozen=True)
class Seeds:
    """The four independent randomness owners of a run."""

    init: int = 0
    data: int = 1
    noise: int = 2
    shuffle: int = 3


@dataclass(frozen=True)
class DistillConfig:
    enabled: bool = False
    beta: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")


@dataclass(frozen=True)
class DataConfig:
    """Where training data comes from and how it is carved up.

    synthetic: a Gaussian-mixture task generated on the fly. idx: an
    MNIST-style image/label file pair, optionally with a separate test pair.
    csv: a `label,f0,...` table. Without explicit test files, test_fraction
    of the data is held out first; val_fraction of the remainder becomes the
    validation split.
    """

    source: str = "synthetic"
    num_classes: int = 10
    dim: int = 50
    per_class: int = 500
    class_separation: float = 2.5
    image_hw: tuple[int, int] | None = None
    images_path: str | None = None
    labels_path: str | None = None
    test_images_path: str | None = None
    test_labels_path: str | None = None
    csv_path: str | None = None
    test_csv_path: str | None = None
    val_fraction: float = 0.1
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.source not in ("synthetic", "idx", "csv"):
            raise ConfigurationError(f"unknown data source {self.source!r}")
        if self.source == "idx" and (self.images_path is None or self.labels_path is None):
            raise ConfigurationError("idx source needs images_path and labels_path")
        if self.source == "csv" and self.csv_path is None:
            raise ConfigurationError("csv source needs csv_path")


@dataclass(frozen=True)
class RunConfig:
    network: NetworkSpec
    data: DataConfig = DataConfig()
    setting: str = "none"
    lr: float = 0.05
    weight_decay: float = 0.0
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 125
    stages: int = 1
    reinit: ReinitSpec = ReinitSpec("none")
    distill: DistillConfig = DistillConfig()
    noise_q: float = 0.0
    seeds: Seeds = Seeds()
    eta_min: float = 0.0
    reset_optimizer_on_stage: bool = True
    rescale_mode: str = "per_block"
    augment: AugmentSpec = AugmentSpec()
    run_name: str | None = None

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigurationError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.noise_q <= 1.0:
            raise ConfigurationError(f"noise_q must lie in [0, 1], got {self.noise_q}")
        make_stage_plan(self.epochs, self.stages)
        required = self.reinit.required_stages()
        if required is not None and required != self.stages:
            raise ConfigurationError(
                f"layer_wise with K={self.reinit.blocks}, M={self.reinit.repeats} "
                f"requires exactly {required} stages, got {self.stages}"
            )
        if self.reinit.kind == "layer_wise" and self.reinit.blocks != self.network.num_blocks:
            raise ConfigurationError(
                f"reinit expects {self.reinit.blocks} blocks but the network has {self.network.num_blocks}"
            )

    # setting flags, per the D / C / W composition
    @property
    def augment_enabled(self) -> bool:
        return self.setting in ("d", "dc", "dcw")

    @property
    def cosine_enabled(self) -> bool:
        return self.setting in ("dc", "dcw")

    @property
    def effective_weight_decay(self) -> float:
        return self.weight_decay if self.setting == "dcw" else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"] = self.network.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        d = dict(d)
        d["network"] = NetworkSpec.from_dict(d["network"])
        if "data" in d:
            data = dict(d["data"])
            if data.get("image_hw") is not None:
                data["image_hw"] = tuple(data["image_hw"])
            d["data"] = DataConfig(**data)
        if "reinit" in d:
            d["reinit"] = ReinitSpec(**d["reinit"])
        if "distill" in d:
            d["distill"] = DistillConfig(**d["distill"])
        if "seeds" in d:
            d["seeds"] = Seeds(**d["seeds"])
        if "augment" in d:
            d["augment"] = AugmentSpec(**d["augment"])
        return RunConfig(**d)

    @property
    def run_id(self) -> str:
        if self.run_name:
            return self.run_name
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class DataBundle:
    """Normalized splits plus the (possibly noisy) training labels."""

    train: Dataset
    train_labels: np.ndarray
    noise_mask: np.ndarray
    val: Dataset
    test: Dataset

    def take_train(self, indices: np.ndarray) -> "DataBundle":
        idx = np.asarray(indices)
        return DataBundle(
            subset(self.train, idx),
            self.train_labels[idx],
            self.noise_mask[idx],
            self.val,
            self.test,
        )


def prepare_data(cfg: RunConfig) -> DataBundle:
    """Load, carve test/val, normalize from train stats, inject label noise."""
    dc = cfg.data
    test = None
    if dc.source == "synthetic":
        full = make_synthetic(
            dc.num_classes, dc.dim, dc.per_class, dc.class_separation, cfg.seeds.data, dc.image_hw
        )
    elif dc.source == "idx":
        full = load_idx(dc.images_path, dc.labels_path)
        if dc.test_images_path:
            test = load_idx(dc.test_images_path, dc.test_labels_path)
    else:
        full = load_csv(dc.csv_path)
        if dc.test_csv_path:
            test = load_csv(dc.test_csv_path)
    if test is None:
        full, test = split(full, dc.test_fraction, stage_seed(cfg.seeds.data, TEST_SPLIT_TAG))
    train, val = split(full, dc.val_fraction, stage_seed(cfg.seeds.data, VAL_SPLIT_TAG))
    mean, std = compute_normalization(train)
    train = apply_normalization(train, mean, std)
    val = apply_normalization(val, mean, std)
    test = apply_normalization(test, mean, std)
    noisy = inject_label_noise(train, cfg.noise_q, cfg.seeds.noise)
    return DataBundle(train, noisy.noisy_labels, noisy.noise_mask, val, test)


def evaluate_accuracy(
    network: NetworkSpec,
    params: ParamVector,
    inputs: np.ndarray,
    labels: np.ndarray,
    frozen_norm: FrozenNormLayer | None = None,
) -> float:
    hits = 0
    for start in range(0, inputs.shape[0], EVAL_BATCH):
        logits = forward(network, params, inputs[start : start + EVAL_BATCH], frozen_norm)
        hits += int((logits.argmax(axis=1) == labels[start : start + EVAL_BATCH]).sum())
    return hits / inputs.shape[0]


@dataclass
class BoundaryEvent:
    """Weight-norm bookkeeping at one re-initialization boundary."""

    stage: int
    norm_before: float
    norm_after: float
    fresh_norm: float


@dataclass
class RunResult:
    config: RunConfig
    run_id: str
    records: list[MetricsRecord]
    final_params: ParamVector | None
    best_params: ParamVector | None
    best_stage: int
    best_epoch: int
    best_val_acc: float
    best_test_acc: float
    boundary_events: list[BoundaryEvent]
    counters: dict
    total_steps: int
    failed: bool = False
    failure: str | None = None
    run_dir: Path | None = None
    frozen_norm: FrozenNormLayer | None = None
    best_frozen_norm: FrozenNormLayer | None = None


def run_experiment(
    cfg: RunConfig,
    bundle: DataBundle | None = None,
    out_dir=None,
    initial_params: ParamVector | None = None,
) -> RunResult:
    """Algorithm: T stages of floor(N/T) epochs with re-init at boundaries.

    Distillation, when enabled with beta > 0, snapshots a teacher at each
    stage end and mixes beta * KL into the loss from stage 2 onward. A run
    with beta == 0 skips the teacher machinery entirely and is bit-identical
    to one with distillation disabled.
    """
    if bundle is None:
        bundle = prepare_data(cfg)
    plan = make_stage_plan(cfg.epochs, cfg.stages)
    run_id = cfg.run_id
    network = cfg.network

    params = initial_params.copy() if initial_params is not None else init_params(
        network, InitDistribution(cfg.seeds.init)
    )
    init_norms = tuple(block_norms(params))
    reinit_ctx = ReinitContext(
        network=network,
        init_block_norms=init_norms,
        stats_batch=bundle.train.inputs[: min(256, bundle.train.n)],
        rescale_mode=cfg.rescale_mode,
    )

    n_train = bundle.train.n
    steps_per_epoch = math.ceil(n_train / cfg.batch_size)
    steps_per_stage = plan.epochs_per_stage * steps_per_epoch
    schedule = LrSchedule(
        "cosine_per_stage" if cfg.cosine_enabled else "constant",
        eta_max=cfg.lr,
        eta_min=cfg.eta_min,
        steps_per_stage=steps_per_stage,
    )
    distill_on = cfg.distill.enabled and cfg.distill.beta > 0

    shuffle_rng = np.random.Generator(np.random.PCG64(cfg.seeds.shuffle))
    augment_rng = np.random.Generator(np.random.PCG64(stage_seed(cfg.seeds.shuffle, AUGMENT_TAG)))
    aug_spec = cfg.augment

    opt = OptimState.fresh(params, cfg.momentum, cfg.effective_weight_decay)
    frozen_norm: FrozenNormLayer | None = None
    teacher: TeacherCache | None = None
    records: list[MetricsRecord] = []
    boundary_events: list[BoundaryEvent] = []
    counters = {
        "augment_calls": 0,
        "teacher_cache_batches": 0,
        "teacher_reads": 0,
        "teacher_reads_by_stage": {str(s): 0 for s in range(1, cfg.stages + 1)},
        "optimizer_steps": 0,
    }
    best = {"val_acc": -1.0, "stage": 0, "epoch": 0, "test_acc": 0.0, "params": None, "fn": None}
    global_epoch = 0
    global_step = 0
    failed = False
    failure = None

    run_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "config.json", "w") as fh:
            json.dump(cfg.to_dict(), fh, sort_keys=True, indent=2)

    try:
        for stage in range(1, cfg.stages + 1):
            if stage > 1:
                norm_before = weight_norm(params)
                params, new_fn = apply_reinit(
                    cfg.reinit, params, InitDistribution(cfg.seeds.init), stage - 1, reinit_ctx
                )
                if cfg.reinit.kind != "none":
                    fresh = init_params(
                        network, InitDistribution(stage_seed(cfg.seeds.init, stage - 1))
                    )
                    boundary_events.append(
                        BoundaryEvent(stage, norm_before, weight_norm(params), weight_norm(fresh))
                    )
                if new_fn is not None:
                    frozen_norm = new_fn
                if cfg.reset_optimizer_on_stage:
                    opt = OptimState.fresh(params, cfg.momentum, cfg.effective_weight_decay)
            for epoch_in_stage in range(plan.epochs_per_stage):
                t0 = time.monotonic()
                perm = shuffle_rng.permutation(n_train)
                epoch_loss = 0.0
                epoch_hits = 0
                lr_first = None
                for start in range(0, n_train, cfg.batch_size):
                    idx = perm[start : start + cfg.batch_size]
                    x = bundle.train.inputs[idx]
                    if cfg.augment_enabled:
                        x = augment_batch(x, bundle.train.image_shape, aug_spec, augment_rng)
                        counters["augment_calls"] += 1
                    y = bundle.train_labels[idx]
                    rows = None
                    beta = 0.0
                    if distill_on and stage > 1 and teacher is not None:
                        rows = distill_rows(teacher, idx, stage=stage)
                        counters["teacher_reads"] += 1
                        counters["teacher_reads_by_stage"][str(stage)] += 1
                        beta = cfg.distill.beta
                    step_in_stage = epoch_in_stage * steps_per_epoch + (start // cfg.batch_size)
                    lr = lr_at(schedule, step_in_stage)
                    if lr_first is None:
                        lr_first = lr
                    loss, grad, logits = loss_grad_logits(
                        network, params, x, y, rows, beta, frozen_norm
                    )
                    if not np.isfinite(loss):
                        raise NumericalError(f"non-finite loss at step {global_step}")
                    params, opt = sgd_step(params, grad, opt, lr, step=global_step)
                    counters["optimizer_steps"] += 1
                    global_step += 1
                    epoch_loss += loss * len(idx)
                    epoch_hits += int((logits.argmax(axis=1) == y).sum())
                global_epoch += 1
                val_acc = evaluate_accuracy(
                    network, params, bundle.val.inputs, bundle.val.labels, frozen_norm
                )
                test_acc = evaluate_accuracy(
                    network, params, bundle.test.inputs, bundle.test.labels, frozen_norm
                )
                records.append(
                    MetricsRecord(
                        run_id=run_id,
                        stage=stage,
                        epoch=global_epoch,
                        step=global_step,
                        lr=lr_first,
                        train_loss=epoch_loss / n_train,
                        train_acc=epoch_hits / n_train,
                        val_acc=val_acc,
                        test_acc=test_acc,
                        weight_norm=weight_norm(params),
                        wall_ms=(time.monotonic() - t0) * 1000.0,
                    )
                )
                if val_acc > best["val_acc"]:
                    best.update(
                        val_acc=val_acc,
                        stage=stage,
                        epoch=global_epoch,
                        test_acc=test_acc,
                        params=params.copy(),
                        fn=frozen_norm,
                    )
            if distill_on and stage < cfg.stages:
                teacher = snapshot_teacher(
                    network,
                    params,
                    bundle.train.inputs,
                    source_stage=stage,
                    beta=cfg.distill.beta,
                    frozen_norm=frozen_norm,
                )
                counters["teacher_cache_batches"] += math.ceil(n_train / 1024)
                if run_dir is not None:
                    save_teacher_cache(teacher, run_dir / f"teacher_stage{stage}.bin")
    except NumericalError as exc:
        failed = True
        failure = str(exc)

    result = RunResult(
        config=cfg,
        run_id=run_id,
        records=records,
        final_params=params,
        best_params=best["params"],
        best_stage=best["stage"],
        best_epoch=best["epoch"],
        best_val_acc=best["val_acc"],
        best_test_acc=best["test_acc"],
        boundary_events=boundary_events,
        counters=counters,
        total_steps=global_step,
        failed=failed,
        failure=failure,
        run_dir=run_dir,
        frozen_norm=frozen_norm,
        best_frozen_norm=best["fn"],
    )
    if run_dir is not None:
        emit_metrics(records, run_dir / "metrics.jsonl")
        write_summary_csv(_stage_summaries(result), run_dir / "summary.csv")
        if best["params"] is not None:
            save_checkpoint(
                run_dir / "best.ckpt",
                network,
                best["params"],
                cfg.seeds.init,
                best["stage"],
                best["epoch"],
                best["fn"],
            )
    return result


def _stage_summaries(result: RunResult) -> list[dict]:
    if not result.records:
        return []
    # every completed epoch runs the same number of optimizer steps
    steps_per_epoch = result.records[-1].step // result.records[-1].epoch
    rows = []
    for stage in sorted({r.stage for r in result.records}):
        stage_recs = [r for r in result.records if r.stage == stage]
        last = stage_recs[-1]
        rows.append(
            {
                "run_id": result.run_id,
                "stage": stage,
                "epochs": len(stage_recs),
                "steps": len(stage_recs) * steps_per_epoch,
                "stage_val_acc": last.val_acc,
                "stage_test_acc": last.test_acc,
                "best_val_acc": max(r.val_acc for r in stage_recs),
                "weight_norm": last.weight_norm,
                "wall_ms": round(sum(r.wall_ms for r in stage_recs), 3),
            }
        )
    return rows


@dataclass
class GridResult:
    cells: dict
    chosen: tuple[float, float]
    chosen_val_acc: float
    chosen_test_acc: float
    robustness: float


def _max_workers() -> int:
    cap = os.environ.get("REINIT_LAB_THREADS")
    if cap:
        try:
            return max(1, int(cap))
        except ValueError:
            raise ConfigurationError(f"REINIT_LAB_THREADS must be an integer, got {cap!r}") from None
    return min(4, os.cpu_count() or 1)


def grid_search(base_cfg: RunConfig, lr_grid, wd_grid, out_dir=None) -> GridResult:
    """One run per (lr, wd) cell over shared data; winner by validation accuracy.

    Ties prefer the smaller lr, then the smaller wd. Failed (diverged) cells
    stay in the output table but never win; a grid with no surviving cell is
    an error.
    """
    lrs, wds = list(lr_grid), list(wd_grid)
    if not lrs or not wds:
        raise ConfigurationError("lr and wd grids must be nonempty")
    bundle = prepare_data(base_cfg)
    cfgs = {(lr, wd): replace(base_cfg, lr=lr, weight_decay=wd) for lr in lrs for wd in wds}

    results = {}
    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        futures = {
            key: pool.submit(run_experiment, cfg, bundle, out_dir) for key, cfg in cfgs.items()
        }
        for key, fut in futures.items():
            results[key] = fut.result()

    cells = {}
    for (lr, wd), res in results.items():
        cells[(lr, wd)] = {
            "lr": lr,
            "wd": wd,
            "val_acc": res.best_val_acc,
            "test_acc": res.best_test_acc,
            "failed": res.failed,
            "run_id": res.run_id,
        }
    alive = {k: v for k, v in cells.items() if not v["failed"]}
    if not alive:
        raise HarnessError("every grid cell diverged")
    chosen = min(alive, key=lambda k: (-alive[k]["val_acc"], k[0], k[1]))
    accs = [v["test_acc"] for v in alive.values()]
    grid = GridResult(
        cells=cells,
        chosen=chosen,
        chosen_val_acc=alive[chosen]["val_acc"],
        chosen_test_acc=alive[chosen]["test_acc"],
        robustness=max(accs) - min(accs),
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "grid.json", "w") as fh:
            json.dump(
                {
                    "cells": [v for _, v in sorted(cells.items())],
                    "chosen": {"lr": chosen[0], "wd": chosen[1]},
                    "robustness": grid.robustness,
                },
                fh,
                sort_keys=True,
                indent=2,
            )
    return grid


def stage_sweep(base_cfg: RunConfig, t_values, out_dir=None) -> list[dict]:
    """Equal-compute comparison across stage counts; T=1 is the baseline."""
    rows = []
    step_counts = set()
    for t in t_values:
        if base_cfg.epochs % t != 0:
            raise ConfigurationError(
                f"stage count {t} does not divide {base_cfg.epochs} epochs; compute parity breaks"
            )
        cfg = replace(base_cfg, stages=t, reinit=_reinit_for_stages(base_cfg.reinit, base_cfg, t))
        res = run_experiment(cfg, out_dir=out_dir)
        step_counts.add(res.total_steps)
        rows.append(
            {
                "stages": t,
                "test_acc": res.best_test_acc,
                "val_acc": res.best_val_acc,
                "total_steps": res.total_steps,
                "run_id": res.run_id,
                "failed": res.failed,
            }
        )
    if len(step_counts) > 1:
        raise HarnessError(f"step counts diverged across the sweep: {sorted(step_counts)}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "stage_sweep.json", "w") as fh:
            json.dump(rows, fh, sort_keys=True, indent=2)
    return rows


def _reinit_for_stages(rspec: ReinitSpec, cfg: RunConfig, t: int) -> ReinitSpec:
    if t == 1:
        return ReinitSpec("none")
    if rspec.kind == "layer_wise":
        k = cfg.network.num_blocks
        if t % k != 0:
            raise ConfigurationError(f"stage count {t} is not a multiple of {k} blocks")
        return ReinitSpec("layer_wise", blocks=k, repeats=t // k)
    return rspec


METHOD_TABLE = {
    "standard": (ReinitSpec("none"), DistillConfig(enabled=False)),
    "sp": (ReinitSpec("shrink_perturb"), DistillConfig(enabled=False)),
    "sp_distill": (ReinitSpec("shrink_perturb"), DistillConfig(enabled=True)),
    "full": (ReinitSpec("full"), DistillConfig(enabled=False)),
    "full_distill": (ReinitSpec("full"), DistillConfig(enabled=True)),
}


def _method_config(base_cfg: RunConfig, method: str) -> RunConfig:
    if method not in METHOD_TABLE:
        raise ConfigurationError(f"unknown method {method!r}; expected one of {sorted(METHOD_TABLE)}")
    rspec, dist = METHOD_TABLE[method]
    if dist.enabled:
        dist = DistillConfig(enabled=True, beta=base_cfg.distill.beta)
    stages = 1 if method == "standard" else base_cfg.stages
    return replace(base_cfg, reinit=rspec, distill=dist, stages=stages)


def noise_study(base_cfg: RunConfig, q_values, methods, out_dir=None, budget_fractions=(0.5, 1.0)) -> list[dict]:
    """Per (q, method) accuracy plus memorization of the corrupted subset.

    Memorization rate is the best checkpoint's accuracy against the noisy
    labels on the corrupted indices; the standard method also gets an
    epoch-budget sweep arm, since shortening training is the classical
    defense against fitting noise.
    """
    rows = []
    for q in q_values:
        if not 0.0 <= q <= 1.0:
            raise ConfigurationError(f"noise fraction must lie in [0, 1], got {q}")
        q_cfg = replace(base_cfg, noise_q=q)
        bundle = prepare_data(q_cfg)
        for method in methods:
            cfg = _method_config(q_cfg, method)
            res = run_experiment(cfg, bundle, out_dir)
            rows.append(_noise_row(q, method, cfg.epochs, res, bundle))
            if method == "standard":
                for frac in budget_fractions:
                    epochs = max(1, int(cfg.epochs * frac))
                    if epochs == cfg.epochs:
                        continue
                    short = replace(cfg, epochs=epochs, stages=1)
                    res_short = run_experiment(short, bundle, out_dir)
                    rows.append(_noise_row(q, f"standard@{epochs}ep", epochs, res_short, bundle))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "noise_study.json", "w") as fh:
            json.dump(rows, fh, sort_keys=True, indent=2)
    return rows


def _noise_row(q: float, method: str, epochs: int, res: RunResult, bundle: DataBundle) -> dict:
    memorization = None
    mask = bundle.noise_mask
    if mask.any() and res.best_params is not None:
        memorization = evaluate_accuracy(
            res.config.network,
            res.best_params,
            bundle.train.inputs[mask],
            bundle.train_labels[mask],
            res.best_frozen_norm,
        )
    return {
        "q": q,
        "method": method,
        "epochs": epochs,
        "test_acc": res.best_test_acc,
        "val_acc": res.best_val_acc,
        "memorization": memorization,
        "total_steps": res.total_steps,
        "run_id": res.run_id,
        "failed": res.failed,
    }


ONLINE_METHODS = ("scratch", "warm_start", "shrink_perturb")


def online_sim(base_cfg: RunConfig, num_chunks: int, methods=ONLINE_METHODS, out_dir=None) -> dict:
    """Data arrives in equal chunks; each method trains on all data so far.

    Every method gets epochs // num_chunks epochs per chunk. scratch draws
    fresh parameters each chunk, warm_start continues from the previous
    chunk's final parameters, shrink_perturb shrinks them toward a fresh
    draw. Chunk 1 is identical for all methods by construction.
    """
    if num_chunks < 2:
        raise ConfigurationError(f"need at least 2 chunks, got {num_chunks}")
    for m in methods:
        if m not in ONLINE_METHODS:
            raise ConfigurationError(f"unknown online method {m!r}; expected one of {ONLINE_METHODS}")
    epochs_per_chunk = base_cfg.epochs // num_chunks
    if epochs_per_chunk < 1:
        raise ConfigurationError(f"{base_cfg.epochs} epochs cannot cover {num_chunks} chunks")
    bundle = prepare_data(base_cfg)
    stream = make_chunks(bundle.train, num_chunks, stage_seed(base_cfg.seeds.data, CHUNK_TAG))

    curves = {}
    for method in methods:
        params = init_params(base_cfg.network, InitDistribution(base_cfg.seeds.init))
        curve = []
        for k in range(1, num_chunks + 1):
            if k > 1:
                fresh = init_params(
                    base_cfg.network, InitDistribution(stage_seed(base_cfg.seeds.init, k))
                )
                if method == "scratch":
                    params = fresh
                elif method == "shrink_perturb":
                    rspec = (
                        base_cfg.reinit
                        if base_cfg.reinit.kind == "shrink_perturb"
                        else ReinitSpec("shrink_perturb")
                    )
                    params = shrink_perturb(params, fresh, rspec.lam, rspec.gamma)
            chunk_bundle = bundle.take_train(stream.cumulative_union(k))
            cfg = replace(
                base_cfg,
                epochs=epochs_per_chunk,
                stages=1,
                reinit=ReinitSpec("none"),
                distill=DistillConfig(enabled=False),
                run_name=f"{base_cfg.run_id}-{method}-chunk{k}",
                seeds=replace(base_cfg.seeds, shuffle=stage_seed(base_cfg.seeds.shuffle, k)),
            )
            res = run_experiment(cfg, chunk_bundle, initial_params=params)
            if res.failed:
                raise HarnessError(f"online chunk {k} diverged for method {method}: {res.failure}")
            params = res.final_params
            curve.append(
                {
                    "chunk": k,
                    "train_size": int(len(stream.cumulative_union(k))),
                    "test_acc": res.best_test_acc,
                    "val_acc": res.best_val_acc,
                    "final_test_acc": res.records[-1].test_acc,
                }
            )
        curves[method] = curve
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "online_sim.json", "w") as fh:
            json.dump(curves, fh, sort_keys=True, indent=2)
    return curves
