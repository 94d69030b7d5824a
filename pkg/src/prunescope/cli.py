"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import wtns
from .divergence import DEFAULT_GROUPS, DEFAULT_MC_SAMPLES, pinsker_kl_lower_bound, tv_lower_bound
from .errors import DataError, DimensionMismatch, PrunescopeError
from .experiment import ExperimentConfig, run_experiment, train_baseline
from .latent import FAMILIES
from .patterns import LatentConfig, LatentProjection, ap2
from .pruning import METHODS, magnitude_mask
from .numkernel import RngStream
from .report import correlation_summary, read_records, render_plots

EXIT_USAGE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"{text} is not a 64-bit unsigned integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prunescope", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the baseline model of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("prune", help="magnitude-prune the tensors of a WTNS file")
    p.add_argument("--weights", required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--fraction", required=True, type=float)
    p.add_argument("--seed", type=_u64)
    p.add_argument("--out", required=True)
    p.add_argument("--tensor", action="append", help="restrict to these tensor names (repeatable)")

    p = sub.add_parser("analyze", help="AP2/AP3 and lower bounds between two WTNS files")
    p.add_argument("--orig", required=True)
    p.add_argument("--pruned", required=True)
    p.add_argument("--latent", required=True, choices=FAMILIES)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--dof", type=float, default=4.0)
    p.add_argument("--groups", type=int, default=DEFAULT_GROUPS)
    p.add_argument("--samples", type=int, default=DEFAULT_MC_SAMPLES)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--tensor", action="append", help="restrict to these tensor names (repeatable)")

    p = sub.add_parser("experiment", help="run a full pruning sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the config's output_dir")

    p = sub.add_parser("report", help="plots and rank correlations from records.csv")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    return parser


def _selected(tensors: dict, names) -> list[str]:
    if names:
        missing = [n for n in names if n not in tensors]
        if missing:
            raise DataError(f"tensors not found: {missing}")
        return list(names)
    return [n for n, t in tensors.items() if t.dtype == np.float64 and not n.endswith(".bias")]


def _flat(tensors: dict, names: list[str]) -> np.ndarray:
    if not names:
        raise DataError("no weight tensors selected")
    return np.concatenate([tensors[n].reshape(-1) for n in names])


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    data = cfg.build_dataset()
    model, history = train_baseline(cfg, data, 0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wtns.save(out / "baseline.wtns", wtns.model_tensors(model))
    hist = [{split: vars(ev) for split, ev in epoch.items()} for epoch in history]
    (out / "history.json").write_text(json.dumps({"dataset_id": data.dataset_id, "history": hist}, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_prune(args) -> int:
    if args.method == "random" and args.seed is None:
        raise UsageError("--seed is required with --method random")
    if not 0.0 <= args.fraction <= 1.0:
        raise UsageError("--fraction must lie in [0, 1]")
    tensors = wtns.load(args.weights)
    out = dict(tensors)
    for i, name in enumerate(_selected(tensors, args.tensor)):
        arr = tensors[name]
        rng = RngStream(args.seed).child(i) if args.method == "random" else None
        mask = magnitude_mask(arr.reshape(-1), args.fraction, args.method, rng)
        out[name] = np.where(mask.bits == 1, arr.reshape(-1), 0.0).reshape(arr.shape)
        out[f"{name}.mask"] = mask.bits.reshape(arr.shape)
    wtns.save(args.out, out)
    return 0


def cmd_analyze(args) -> int:
    orig = wtns.load(args.orig)
    pruned = wtns.load(args.pruned)
    names = _selected(orig, args.tensor)
    for n in names:
        if n not in pruned or pruned[n].shape != orig[n].shape:
            raise DimensionMismatch(f"tensor {n!r} missing or reshaped in {args.pruned}")
    w = _flat(orig, names)
    w_tilde = _flat(pruned, names)
    cfg = LatentConfig(family=args.latent, sigma=args.sigma, dof=args.dof, groups=args.groups, mc_samples=args.samples, seed=args.seed)
    proj = LatentProjection(cfg, w.size)
    est = proj.kl(w, w_tilde)
    mean_p, mean_q, cov = proj.project(w), proj.project(w_tilde), proj.distribution_cov
    result = {
        "tensors": names,
        "dim": int(w.size),
        "latent": args.latent,
        "latent_dim": proj.dim,
        "ap2": ap2(w, w_tilde),
        "ap3": est.value,
        "ap3_std_error": est.std_error,
        "ap3_method": est.method,
        "ap3_samples": est.n_samples,
        "tv_lower_bound": tv_lower_bound(mean_p, mean_q, cov, cov),
        "pinsker_kl_lower_bound": pinsker_kl_lower_bound(mean_p, mean_q, cov, cov),
    }
    print(json.dumps(result, indent=2))
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    manifest = run_experiment(cfg, args.out)
    out = Path(args.out or cfg.output_dir)
    print(json.dumps({"output_dir": str(out), "rows": manifest["rows"], "failures": len(manifest["failures"])}))
    return 0 if manifest["rows"] else 2


def cmd_report(args) -> int:
    render_plots(args.records, args.out)
    summary = correlation_summary(read_records(args.records))
    Path(args.out, "report.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=2))
    for line in summary["deviations"]:
        print(f"deviation: {line}", file=sys.stderr)
    return 0


COMMANDS = {
    "train": cmd_train,
    "prune": cmd_prune,
    "analyze": cmd_analyze,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"prunescope: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PrunescopeError as exc:
        print(f"prunescope: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"prunescope: {exc}", file=sys.stderr)
        return 2
