"""Command-line front end: simulate, estimate, signature, scaling.

Exit codes: 0 success, 2 invalid input or configuration, 3 I/O failure,
4 numerical failure. Errors print one line on stderr:

    mrptick: error kind=<validation|io|numerical> exit=<code> msg=<text>
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4


class CliValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliValidationError(message)


def atomic_write(path, text):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(doc):
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _existing(path, what):
    p = Path(path)
    if not p.is_file():
        raise CliValidationError(f"{what} file not found: {path}")
    return p


def _require_seed(args):
    if args.seed is None:
        raise CliValidationError("--seed is required for stochastic commands")


def _load_model(path):
    from .model import load_model

    p = _existing(path, "model")
    try:
        return load_model(p)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliValidationError(f"invalid model document {path}: {exc}") from exc


# ---------------------------------------------------------------- commands


def cmd_simulate(args):
    from .simulate import InitMode, simulate_batch, write_paths_csv

    _require_seed(args)
    model = _load_model(args.model)
    init = InitMode.parse(args.init)
    paths = simulate_batch(model, args.horizon, args.p0, args.paths, args.seed, init, args.threads)
    buf = io.StringIO()
    write_paths_csv(paths, buf)
    out = Path(args.out)
    atomic_write(out / "paths.csv", buf.getvalue())
    meta = {
        "seed": args.seed,
        "model_hash": model.model_hash,
        "horizon": args.horizon,
        "n_paths": args.paths,
        "init": str(init),
        "p0": args.p0,
        "n_jumps": [int(p.n_jumps) for p in paths],
    }
    atomic_write(out / "metadata.json", _dump(meta))
    return EXIT_OK


def cmd_estimate(args):
    from .estimate import fit_model, ingest_ticks

    data = _existing(args.data, "tick data")
    series = ingest_ticks(data, m_max=args.m_max)
    bandwidth = args.bandwidth if args.bandwidth == "auto" else float(args.bandwidth)
    model, report = fit_model(series, args.estimator, bandwidth=bandwidth)
    out = Path(args.out)
    atomic_write(out / "model.json", model.to_json() + "\n")
    doc = report.to_dict()
    doc["n_zero_dropped"] = series.n_zero_dropped
    atomic_write(out / "fit_report.json", _dump(doc))
    atomic_write(out / "density.csv", report.density_csv())
    atomic_write(out / "hazard.csv", report.hazard_csv())

    print(f"jumps            {report.n_jumps}  (zero increments dropped: {series.n_zero_dropped})")
    print(f"alpha            {report.alpha_hat:+.6f} +/- {report.alpha_stderr:.6f}")
    print("p                " + " ".join(f"{p:.6f}" for p in report.p_hat))
    for name in ("plus", "minus"):
        entry = report.sign_fits[name]
        for key in ("mle", "moments"):
            if key in entry:
                f = entry[key]
                print(f"{name:<6}{key:<11}shape {f['shape']:.6g} +/- {f['shape_stderr']:.2g}   scale {f['scale']:.6g} +/- {f['scale_stderr']:.2g}")
    return EXIT_OK


def _tau_grid(args, mu):
    lo = args.tau_min if args.tau_min is not None else mu / 100.0
    hi = args.tau_max if args.tau_max is not None else 100.0 * mu
    if not (0 < lo < hi) or args.n_tau < 2:
        raise CliValidationError("need 0 < tau-min < tau-max and n-tau >= 2")
    return np.geomspace(lo, hi, args.n_tau)


def cmd_signature(args):
    from .signature import (
        empirical_signature,
        mean_signature_analytic,
        mean_signature_monte_carlo,
        signature_limits,
    )

    model = _load_model(args.model)
    out = Path(args.out)
    mu = model.mean_sojourn
    tau = _tau_grid(args, mu)
    v0, vinf = signature_limits(model)
    atomic_write(out / "limits.json", _dump({"v0": v0, "vinf": vinf, "model_hash": model.model_hash}))
    curves = {"analytic": mean_signature_analytic(model, tau)}
    if args.mc_paths:
        _require_seed(args)
        horizon = args.horizon if args.horizon is not None else 200.0 * mu
        curves["monte_carlo"] = mean_signature_monte_carlo(model, tau, horizon, args.mc_paths, args.seed, args.threads)
    if args.empirical:
        from .estimate import ingest_ticks

        series = ingest_ticks(_existing(args.empirical, "tick data"))
        curves["empirical"] = empirical_signature(series, tau[tau * 10 <= series.end - series.start])
    for name, curve in curves.items():
        atomic_write(out / f"{name}.csv", curve.to_csv())
        atomic_write(out / f"{name}.json", curve.sidecar())
    return EXIT_OK


def cmd_scaling(args):
    from .simulate import scaling_experiment

    _require_seed(args)
    model = _load_model(args.model)
    mu = model.mean_sojourn
    mults = [float(x) for x in args.t_multiples.split(",")]
    rows = scaling_experiment(model, [m * mu for m in mults], args.paths, args.seed, args.threads)
    lines = ["T,var_scaled,var_stderr,sigma2_inf,ratio,ad_statistic,ad_critical_1pct,ad_pvalue"]
    for r in rows:
        vals = (r.horizon, r.var_scaled, r.var_stderr, r.sigma2_inf, r.ratio, r.ad_statistic, r.ad_critical_1pct, r.ad_pvalue)
        lines.append(",".join(repr(float(v)) for v in vals))
    atomic_write(Path(args.out) / "scaling.csv", "\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    parser = _Parser(prog="mrptick", description="Markov renewal tick-price models.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def shared(p, model_required=True):
        p.add_argument("--model", required=model_required, help="model JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("simulate", help="simulate price paths")
    shared(p)
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--paths", type=int, default=1)
    p.add_argument("--init", default="stationary", help="stationary | ordinary | fixed:<mark>")
    p.add_argument("--p0", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit a model to tick data")
    shared(p, model_required=False)
    p.add_argument("--data", required=True, help="tick CSV (t,price)")
    p.add_argument("--estimator", choices=("mle", "moments", "nonparametric", "both"), default="mle")
    p.add_argument("--m-max", type=int, default=None)
    p.add_argument("--bandwidth", default="auto")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("signature", help="mean signature plot")
    shared(p)
    p.add_argument("--tau-min", type=float, default=None)
    p.add_argument("--tau-max", type=float, default=None)
    p.add_argument("--n-tau", type=int, default=40)
    p.add_argument("--mc-paths", type=int, default=0)
    p.add_argument("--horizon", type=float, default=None, help="Monte Carlo horizon (default 200 mean sojourns)")
    p.add_argument("--empirical", default=None, help="tick CSV for an empirical curve")
    p.set_defaults(func=cmd_signature)

    p = sub.add_parser("scaling", help="diffusive-limit experiment")
    shared(p)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--t-multiples", default="100,1000,10000", help="horizons in units of the mean sojourn")
    p.set_defaults(func=cmd_scaling)
    return parser


def _fail(kind, code, exc):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"mrptick: error kind={kind} exit={code} msg={msg}", file=sys.stderr)
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        for name in ("horizon", "paths", "threads", "mc_paths"):
            v = getattr(args, name, None)
            if v is not None and v < (0 if name == "mc_paths" else 1e-300 if name == "horizon" else 1):
                raise CliValidationError(f"--{name.replace('_', '-')} must be positive")
        return args.func(args)
    except ArithmeticError as exc:
        return _fail("numerical", EXIT_NUMERICAL, exc)
    except OSError as exc:
        return _fail("io", EXIT_IO, exc)
    except (ValueError, KeyError, TypeError) as exc:
        return _fail("validation", EXIT_VALIDATION, exc)


if __name__ == "__main__":
    sys.exit(main())
