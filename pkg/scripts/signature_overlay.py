"""Analytic mean signature against a Monte Carlo estimate for the mixture model."""

import argparse
from pathlib import Path

import numpy as np

from models import reference_mixture_model
from mrptick.signature import mean_signature_analytic, mean_signature_monte_carlo, signature_limits


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=200)
    ap.add_argument("--horizon-mult", type=float, default=400.0, help="horizon in mean sojourns")
    ap.add_argument("--n-tau", type=int, default=16)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--out", default="runs/signature")
    args = ap.parse_args()

    model = reference_mixture_model()
    mu = model.mean_sojourn
    tau = np.geomspace(0.05 * mu, 40 * mu, args.n_tau)
    v0, vinf = signature_limits(model)
    an = mean_signature_analytic(model, tau)
    mc = mean_signature_monte_carlo(model, tau, args.horizon_mult * mu, args.paths, args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "analytic.csv").write_text(an.to_csv())
    (out / "monte_carlo.csv").write_text(mc.to_csv())

    print(f"v0 = {v0:.6g}  vinf = {vinf:.6g}  (per ms)")
    print(f"{'tau/mu':>9} {'analytic':>11} {'mc':>11} {'z':>7}")
    for t, a, m, s in zip(tau, an.values, mc.values, mc.stderr):
        print(f"{t / mu:>9.3g} {a:>11.5g} {m:>11.5g} {(m - a) / s:>7.2f}")


if __name__ == "__main__":
    main()
