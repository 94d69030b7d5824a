"""Desk-scale pruning sweep.

For each trial a baseline MLP is trained; then every (method, fraction)
cell prunes the configured layers, fine-tunes with the mask held fixed, and
logs one record per epoch (epoch 0 is the freshly pruned model). Cells are
independent and seeded by ``derive_seed(master_seed, trial, method,
fraction)``, so results do not depend on which worker runs them or on which
other cells exist.
"""
from __future__ import annotations

import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, wtns
from .errors import InvalidParameter, PrunescopeError
from .latent import FAMILIES
from .micronet import Dataset, MlpModel, TrainConfig, evaluate, fine_tune, load_csv, make_blobs, sgd_train
from .numkernel import RngStream, derive_seed
from .patterns import LatentConfig, LatentProjection, ap2
from .pruning import METHODS, PruneMask, magnitude_mask
from .report import correlation_summary, render_plots, write_records

log = logging.getLogger(__name__)

DEFAULT_FRACTIONS = (0.1, 0.3, 0.5, 0.8)


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "blobs", "classes": 3, "n_per_class": 800, "spread": 1.5, "dim": 2})
    model_dims: list = field(default_factory=lambda: [2, 16, 3])
    activation: str = "relu"
    train: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=dict)
    finetune_epochs: int = 20
    pruned_layers: list = field(default_factory=lambda: [-1])
    tracked_layer: int = -1
    methods: list = field(default_factory=lambda: list(METHODS))
    fractions: list = field(default_factory=lambda: list(DEFAULT_FRACTIONS))
    latents: list = field(default_factory=lambda: [{"family": "gaussian-diag", "sigma": 1.0}])
    trials: int = 3
    master_seed: int = 0
    output_dir: str = "runs/experiment"
    pd_split: str = "test"

    def __post_init__(self):
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise InvalidParameter(f"methods must be a non-empty subset of {METHODS}")
        if not self.fractions or any(not 0 < f <= 1 for f in self.fractions):
            raise InvalidParameter("fractions must be non-empty and lie in (0, 1]")
        if not self.latents:
            raise InvalidParameter("at least one latent config is required")
        labels = [self.latent_configs()[i].label for i in range(len(self.latents))]
        if len(set(labels)) != len(labels):
            raise InvalidParameter(f"latent labels must be unique, got {labels}")
        if self.trials < 1 or self.finetune_epochs < 0:
            raise InvalidParameter("trials must be >= 1 and finetune_epochs >= 0")
        self.train_config()
        self.finetune_config(0)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw.get("config", raw))
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(raw) - known)
        if unknown:
            raise InvalidParameter(f"unknown config keys: {unknown}")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InvalidParameter(f"{path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InvalidParameter(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def trial_seed(self, trial: int) -> int:
        return derive_seed(self.master_seed, trial, "baseline")

    def cell_seed(self, trial: int, method: str, fraction: float) -> int:
        return derive_seed(self.master_seed, trial, method, float(fraction))

    def train_config(self, seed: int = 0) -> TrainConfig:
        return TrainConfig(**{**self.train, "seed": seed})

    def finetune_config(self, seed: int) -> TrainConfig:
        return TrainConfig(**{**self.train, **self.finetune, "epochs": self.finetune_epochs, "seed": seed})

    def latent_configs(self) -> list[LatentConfig]:
        out = []
        for i, raw in enumerate(self.latents):
            raw = dict(raw)
            if raw.get("family") not in FAMILIES:
                raise InvalidParameter(f"latent {i}: unknown family {raw.get('family')!r}")
            raw.setdefault("seed", derive_seed(self.master_seed, "latent", i))
            out.append(LatentConfig.from_dict(raw))
        return out

    def build_dataset(self) -> Dataset:
        spec = dict(self.dataset)
        kind = spec.pop("kind", "blobs")
        if kind == "blobs":
            return make_blobs(rng=RngStream(derive_seed(self.master_seed, "dataset")), **spec)
        if kind == "csv":
            return load_csv(spec.pop("path"), seed=derive_seed(self.master_seed, "dataset"), **spec)
        raise InvalidParameter(f"unknown dataset kind {kind!r}")


def record_columns(latents: list[LatentConfig]) -> list[str]:
    cols = ["trial", "method", "fraction", "epoch", "ap2"]
    for lc in latents:
        tag = lc.label.replace("-", "_")
        cols += [f"ap3_{tag}", f"ap3_{tag}_se", f"gap_def_{tag}", f"gap_thm_{tag}"]
    cols += ["pd_accuracy", "pd_loss", "test_accuracy", "test_loss"]
    return cols


def train_baseline(cfg: ExperimentConfig, data: Dataset, trial: int):
    seed = cfg.trial_seed(trial)
    model = MlpModel.init(cfg.model_dims, RngStream(seed).child("init"), cfg.activation)
    return sgd_train(model, data, cfg.train_config(seed))


def prune_model(model: MlpModel, layers, method: str, fraction: float, seed: int) -> tuple[MlpModel, dict[int, PruneMask]]:
    pruned = model.copy()
    masks = {}
    for layer in layers:
        idx = model.layer_index(layer)
        rng = RngStream(derive_seed(seed, "mask", idx)) if method == "random" else None
        mask = magnitude_mask(model.layer_vector(idx), fraction, method, rng)
        masks[idx] = mask
        w = pruned.weights[idx]
        w[:-1] = np.where(mask.bits.reshape(w[:-1].shape) == 1, w[:-1], 0.0)
    return pruned, masks


_PROJECTIONS: dict = {}


def _projections(cfg: ExperimentConfig, d: int) -> list[LatentProjection]:
    # one shared set per process: same covariance and MC draws for every cell
    key = (json.dumps(cfg.latents, sort_keys=True), cfg.master_seed, d)
    if key not in _PROJECTIONS:
        _PROJECTIONS.clear()
        _PROJECTIONS[key] = [LatentProjection(lc, d) for lc in cfg.latent_configs()]
    return _PROJECTIONS[key]


def run_cell(cfg: ExperimentConfig, data: Dataset, baseline: MlpModel, trial: int, method: str, fraction: float):
    """Prune, fine-tune, and return (records, final model, masks, seconds)."""
    start = time.perf_counter()
    seed = cfg.cell_seed(trial, method, fraction)
    tracked = baseline.layer_index(cfg.tracked_layer)
    pruned, masks = prune_model(baseline, cfg.pruned_layers, method, fraction, seed)
    orig_eval = evaluate(baseline, data, cfg.pd_split)
    w_star = baseline.layer_vector(tracked).values
    w_tilde_star = pruned.layer_vector(tracked).values
    projections = _projections(cfg, w_star.size)
    refs = [p.kl(w_star, w_tilde_star) for p in projections]

    model, history, snapshots = fine_tune(pruned, masks, data, cfg.finetune_config(seed), tracked)
    evals = [evaluate(pruned, data, cfg.pd_split)]
    for h in history:
        evals.append(h[cfg.pd_split] if cfg.pd_split in h else evaluate(model, data, cfg.pd_split))
    weights = [w_tilde_star] + [s.values for s in snapshots]

    rows = []
    for epoch, (w_t, ev) in enumerate(zip(weights, evals)):
        row = {"trial": trial, "method": method, "fraction": float(fraction), "epoch": epoch, "ap2": ap2(w_star, w_t)}
        for proj, ref in zip(projections, refs):
            tag = proj.cfg.label.replace("-", "_")
            cur = proj.kl(w_star, w_t)
            thm = proj.kl(w_tilde_star, w_t)
            row[f"ap3_{tag}"] = cur.value
            row[f"ap3_{tag}_se"] = cur.std_error
            row[f"gap_def_{tag}"] = abs(ref.value - cur.value)
            row[f"gap_thm_{tag}"] = abs(ref.value - thm.value)
        row["pd_accuracy"] = abs(orig_eval.accuracy - ev.accuracy)
        row["pd_loss"] = abs(orig_eval.loss - ev.loss)
        row["test_accuracy"] = ev.accuracy
        row["test_loss"] = ev.loss
        rows.append(row)
    return rows, model, masks, time.perf_counter() - start


def _cell_job(args):
    cfg_dict, data, baseline, trial, method, fraction = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        return (trial, method, fraction), run_cell(cfg, data, baseline, trial, method, fraction), None
    except Exception as exc:  # a failed cell must not abort the sweep
        return (trial, method, fraction), None, f"{type(exc).__name__}: {exc}"


def worker_count() -> int:
    raw = os.environ.get("PRUNESCOPE_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise InvalidParameter(f"PRUNESCOPE_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1


def cell_name(trial: int, method: str, fraction: float) -> str:
    return f"trial{trial}_{method}_{fraction:g}"


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run the sweep and write records.csv, timings.csv, manifest.json,
    report.json, weights/, masks/ and plots/ under the output directory.
    Returns the manifest."""
    out = Path(out_dir or cfg.output_dir)
    (out / "weights").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    data = cfg.build_dataset()
    latents = cfg.latent_configs()
    columns = record_columns(latents)

    baselines, failures, jobs = {}, [], []
    for trial in range(cfg.trials):
        try:
            model, history = train_baseline(cfg, data, trial)
        except PrunescopeError as exc:
            failures.append({"cell": f"trial{trial}_baseline", "error": f"{type(exc).__name__}: {exc}"})
            continue
        baselines[trial] = (model, history)
        wtns.save(out / "weights" / f"trial{trial}_baseline.wtns", wtns.model_tensors(model))
        for method in cfg.methods:
            for fraction in cfg.fractions:
                jobs.append((cfg.to_dict(), data, model, trial, method, float(fraction)))

    workers = min(worker_count(), max(1, len(jobs)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]

    rows, timings = [], []
    for (trial, method, fraction), result, error in sorted(results, key=lambda r: (r[0][0], r[0][1], r[0][2])):
        name = cell_name(trial, method, fraction)
        if error is not None:
            log.warning("cell %s failed: %s", name, error)
            failures.append({"cell": name, "error": error})
            continue
        cell_rows, model, masks, seconds = result
        rows.extend(cell_rows)
        timings.append({"trial": trial, "method": method, "fraction": fraction, "epoch": 0, "wall_time": seconds})
        wtns.save(out / "weights" / f"{name}.wtns", wtns.model_tensors(model))
        wtns.save(out / "masks" / f"{name}.wtns", {f"layer{i}.mask": m.bits.reshape(model.weights[i][:-1].shape) for i, m in masks.items()})

    write_records(out / "records.csv", rows, columns)
    write_records(out / "timings.csv", timings, ["trial", "method", "fraction", "wall_time"])

    report = {"correlations": [], "deviations": []}
    if rows:
        render_plots(out / "records.csv", out / "plots")
        report = correlation_summary(rows)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")

    manifest = {
        "config": cfg.to_dict(),
        "latents_resolved": [lc.to_dict() for lc in latents],
        "seeds": {
            "dataset": derive_seed(cfg.master_seed, "dataset"),
            "baselines": {str(t): cfg.trial_seed(t) for t in range(cfg.trials)},
            "cells": {cell_name(t, m, f): cfg.cell_seed(t, m, f) for t in range(cfg.trials) for m in cfg.methods for f in cfg.fractions},
            "rng_algorithm": RngStream.algorithm,
        },
        "dataset_id": data.dataset_id,
        "baseline_test_accuracy": {str(t): float(h[-1]["test"].accuracy) if h and "test" in h[-1] else None for t, (_, h) in baselines.items()},
        "versions": {"prunescope": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
        "workers": workers,
        "rows": len(rows),
        "failures": failures,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest
