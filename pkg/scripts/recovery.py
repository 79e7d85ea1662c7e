"""Fit the model back from simulated ticks and compare with the truth."""

import argparse

import numpy as np

from models import ALPHA, MINUS, PLUS, reference_model
from mrptick.estimate import TickSeries, fit_model
from mrptick.simulate import ORDINARY, simulate_jumps


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--jumps", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    path = simulate_jumps(reference_model(), args.jumps, rng, init=ORDINARY)
    model, report = fit_model(TickSeries.from_path(path), "both", curves=False)

    print(f"alpha  true {ALPHA:+.4f}  est {report.alpha_hat:+.4f} +/- {report.alpha_stderr:.4f}")
    for name, (shape, scale) in (("plus", PLUS), ("minus", MINUS)):
        for key in ("mle", "moments"):
            f = report.sign_fits[name][key]
            print(
                f"{name:<6}{key:<8} shape {f['shape']:.5g} ({100 * (f['shape'] / shape - 1):+.1f}%)"
                f"  scale {f['scale']:.5g} ({100 * (f['scale'] / scale - 1):+.1f}%)"
            )


if __name__ == "__main__":
    main()
