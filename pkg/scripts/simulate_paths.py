"""Simulate a handful of price paths from the reference model and summarize them.

    python3 scripts/simulate_paths.py --paths 9 --horizon 2e6 --out runs/paths
"""

import argparse
from pathlib import Path

import numpy as np

from models import reference_model
from mrptick.simulate import ORDINARY, simulate_batch, write_paths_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=9)
    ap.add_argument("--horizon", type=float, default=2e6, help="ms")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="runs/paths")
    ap.add_argument("--plot", action="store_true", help="write paths.png (needs matplotlib)")
    args = ap.parse_args()

    model = reference_model()
    paths = simulate_batch(model, args.horizon, 0, args.paths, args.seed, ORDINARY)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "paths.csv", "w", newline="") as fh:
        write_paths_csv(paths, fh)

    print(f"mean sojourn {model.mean_sojourn:.1f} ms, horizon {args.horizon:.3g} ms")
    print(f"{'path':>4} {'jumps':>7} {'P_T':>6} {'min':>6} {'max':>6} {'frac reversals':>15}")
    for k, p in enumerate(paths):
        m = p.marks
        rev = float(np.mean(m[1:] != m[:-1])) if m.size > 1 else float("nan")
        print(f"{k:>4} {p.n_jumps:>7} {p.terminal_price:>6} {p.prices.min():>6} {p.prices.max():>6} {rev:>15.3f}")

    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(3, 3, figsize=(10, 7), sharex=True)
        for ax, p in zip(axes.flat, paths):
            t = np.concatenate(([0.0], p.jump_times, [args.horizon]))
            y = np.concatenate(([p.p0], p.prices, [p.terminal_price]))
            ax.step(t / 1e3, y, where="post", lw=0.6)
        for ax in axes[-1]:
            ax.set_xlabel("t (s)")
        fig.tight_layout()
        fig.savefig(out / "paths.png", dpi=120)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
