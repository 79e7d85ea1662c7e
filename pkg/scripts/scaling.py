"""Var(P_T / sqrt T) against the macroscopic variance as the horizon grows."""

import argparse

from models import reference_mixture_model, reference_model
from mrptick.simulate import ORDINARY, STATIONARY, scaling_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", choices=("reference", "mixture"), default="reference")
    ap.add_argument("--paths", type=int, default=1000)
    ap.add_argument("--multiples", default="10,100,1000")
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    model = reference_model() if args.model == "reference" else reference_mixture_model()
    # stationary starts need sign-independent kernels
    init = STATIONARY if args.model == "mixture" else ORDINARY
    mu = model.mean_sojourn
    mults = [float(x) for x in args.multiples.split(",")]
    rows = scaling_experiment(model, [m * mu for m in mults], args.paths, args.seed, args.threads, init)
    print(f"{'T/mu':>8} {'var':>11} {'se':>9} {'ratio':>7} {'A2':>6} {'p':>6}")
    for m, r in zip(mults, rows):
        print(f"{m:>8.0f} {r.var_scaled:>11.5g} {r.var_stderr:>9.2g} {r.ratio:>7.4f} {r.ad_statistic:>6.3f} {r.ad_pvalue:>6.3f}")
    print(f"sigma2_inf = {rows[0].sigma2_inf:.6g}")


if __name__ == "__main__":
    main()
