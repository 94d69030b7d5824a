"""Evaluate the performance-difference bounds on a trained reference baseline.

Trains the reference model, measures the last layer's Hessian lambda_max,
prunes it at each fraction, and prints the Gaussian-projection bound next
to the measured loss gap. The label-expectation factor is set to 1.
"""
import argparse
from pathlib import Path

from prunescope.experiment import ExperimentConfig, prune_model, train_baseline
from prunescope.micronet import evaluate, hessian_lambda_max
from prunescope.numkernel import RngStream
from prunescope.patterns import BoundInputs, LatentConfig, ap3, pd_bound_gaussian, inverse_cov_extremes
from prunescope.latent import diag_cov

HERE = Path(__file__).resolve().parent


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config", nargs="?", default=HERE / "configs" / "reference.json")
    parser.add_argument("--sigma", type=float, default=1.0)
    args = parser.parse_args()

    cfg = ExperimentConfig.load(args.config)
    data = cfg.build_dataset()
    model, _ = train_baseline(cfg, data, 0)
    lam_max = hessian_lambda_max(model, data, -1, 1e-6, RngStream(cfg.master_seed))
    w = model.layer_vector(-1).values
    lam_min_inv, lam_max_inv = inverse_cov_extremes(diag_cov(w.size, args.sigma))
    base = evaluate(model, data, "test")
    print(f"Hessian lambda_max (last layer) = {lam_max:.4f}")
    print(f"{'method':<8} {'fraction':>8} {'AP3':>10} {'bound':>10} {'|dLoss|':>10}")
    for method in cfg.methods:
        for fraction in cfg.fractions:
            pruned, _ = prune_model(model, cfg.pruned_layers, method, fraction, cfg.cell_seed(0, method, fraction))
            eps = ap3(w, pruned.layer_vector(-1).values, LatentConfig(sigma=args.sigma)).value
            # BoundInputs requires lambda_min <= lambda_max; raising lambda_max only loosens the bound
            bound = pd_bound_gaussian(BoundInputs(eps, lambda_max=max(lam_max, lam_min_inv), lambda_min=lam_min_inv))
            gap = abs(evaluate(pruned, data, "test").loss - base.loss)
            print(f"{method:<8} {fraction:>8g} {eps:>10.4f} {bound:>10.4f} {gap:>10.4f}")


if __name__ == "__main__":
    main()
