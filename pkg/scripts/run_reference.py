"""Run a sweep config and print the headline rank correlations.

    python scripts/run_reference.py [config.json] [--out DIR]
"""
import argparse
import json
import time
from pathlib import Path

from prunescope.experiment import ExperimentConfig, run_experiment

HERE = Path(__file__).resolve().parent


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config", nargs="?", default=HERE / "configs" / "reference.json")
    parser.add_argument("--out")
    args = parser.parse_args()

    cfg = ExperimentConfig.load(args.config)
    start = time.perf_counter()
    manifest = run_experiment(cfg, args.out)
    out = Path(args.out or cfg.output_dir)
    print(f"{manifest['rows']} rows, {len(manifest['failures'])} failed cells, {time.perf_counter() - start:.1f} s -> {out}")

    report = json.loads((out / "report.json").read_text())
    for entry in report["correlations"]:
        rho = "n/a" if entry["rho"] is None else f"{entry['rho']:+.4f}"
        print(f"  {entry['metric']:<24} epoch {entry['metric_epoch']:>2} vs PD {entry['pd_mode']:<8} epoch {entry['pd_epoch']:>2}: rho {rho}")
    for line in report["deviations"]:
        print(f"deviation: {line}")


if __name__ == "__main__":
    main()
