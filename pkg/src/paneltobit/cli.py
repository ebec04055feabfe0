"""Command-line entry points: estimate, forecast, evaluate, montecarlo, check."""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import diagnostics as diag
from .forecast import (PredictiveDensity, PredictiveDrawComponents, SetForecast,
                       build_predictive_density, direct_multistep_estimate,
                       predictive_components, set_forecasts)
from .gibbs import SamplerSettings, estimate
from .montecarlo import DESIGNS, DgpSpec, run_experiment
from .panel import per_unit_variance_mean, read_panel_csv
from .priors import MC_SPECS, default_priors, named_spec
from .rng import stream
from .scoring import SET_KINDS, evaluate_density, evaluate_sets
from .store import (default_config, load_config, load_draws, parse_config, read_arrays,
                    save_config, save_draws, write_arrays)

log = logging.getLogger("paneltobit")
PRED_FILE = "predictive.bin"


def _f(v):
    v = float(v)
    return "nan" if not np.isfinite(v) else repr(round(v, 10))


# ---------------------------------------------------------------------------
# estimate


def cmd_estimate(a):
    data = read_panel_csv(a.data, T=a.T)
    if a.config:
        spec, tuning, settings = load_config(a.config)
    else:
        spec, tuning, settings = parse_config(default_config())
    if a.spec:
        spec = named_spec(a.spec, K=spec.K)
    spec = replace(spec, n_x=data.n_x)
    over = {k: v for k, v in (("seed", a.seed), ("n_draws", a.n_draws),
                              ("burn_in", a.burn_in)) if v is not None}
    if a.workers:
        over.update(parallel_units=a.workers > 1, n_workers=a.workers)
    settings = replace(settings, **over)
    log.info("estimating %s on N=%d T=%d", spec.label(), data.n_units, data.n_periods_T)
    draws = estimate(data, spec, tuning, settings)
    save_draws(a.out, draws, data)
    # parallel knobs are reset so the saved config is identical with or without --workers
    serial = replace(settings, parallel_units=False, n_workers=SamplerSettings.n_workers)
    save_config(os.path.join(a.out, "config.json"), spec, tuning, serial)
    log.info("wrote %s (%.1fs)", a.out, draws.diagnostics["seconds"])


# ---------------------------------------------------------------------------
# forecast


def cmd_forecast(a):
    draws, data = load_draws(a.draws)
    x_future = None
    if a.x_future:
        x_future = np.load(a.x_future)
    if a.direct and a.h > 1:
        tuning = replace(draws.tuning, v_star=per_unit_variance_mean(data.y))
        priors = default_priors(draws.spec, tuning)
        draws = direct_multistep_estimate(data, draws.spec, priors, draws.settings, a.h)
    comp = predictive_components(draws, data, h=a.h, x_future=x_future)
    seed = draws.settings.seed if a.seed is None else a.seed
    pd = build_predictive_density(comp, stream(seed, 0xF0, a.h),
                                  density_method=a.density)
    sets = set_forecasts(pd, a.alpha, a.mode)
    point = pd.point_forecast()
    os.makedirs(a.out, exist_ok=True)
    with open(os.path.join(a.out, "forecasts.jsonl"), "w") as fh:
        for i, s in enumerate(sets):
            rec = s.to_record(data.unit_ids[i], point[i], pd.pi0[i])
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(os.path.join(a.out, "forecasts.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "mode", "alpha", "includes_zero", "n_segments", "segments",
                    "length", "point_forecast", "pi0"])
        for i, s in enumerate(sets):
            segs = ";".join(f"{_f(lo)}:{_f(hi)}" for lo, hi in s.segments)
            w.writerow([data.unit_ids[i], s.mode, _f(a.alpha),
                        int(s.includes_zero and not s.is_empty), len(s.segments), segs,
                        _f(s.length), _f(point[i]), _f(pd.pi0[i])])
    meta = {"kind": "predictive", "alpha": a.alpha, "mode": a.mode, "h": a.h,
            "spec": draws.spec.label(), "unit_ids": list(data.unit_ids),
            "sets": [[s.includes_zero, s.is_empty, [list(g) for g in s.segments]] for s in sets]}
    arrays = {"pi0": pd.pi0, "samples": pd.samples, "weights": pd.weights,
              "density": pd.density, "mu": comp.mu, "var": comp.var}
    if data.holdout_y is not None and data.holdout_y.shape[1] >= a.h:
        arrays["realized"] = data.holdout_y[:, a.h - 1]
    write_arrays(os.path.join(a.out, PRED_FILE), arrays, meta)


def load_forecast(path):
    arr, meta = read_arrays(os.path.join(path, PRED_FILE))
    comp = PredictiveDrawComponents(arr["mu"], arr["var"])
    pd = PredictiveDensity(arr["pi0"], arr["samples"], arr["weights"], arr["density"], comp)
    sets = [SetForecast(bool(z), [tuple(g) for g in segs], meta["alpha"], meta["mode"],
                        is_empty=bool(e)) for z, e, segs in meta["sets"]]
    return pd, sets, meta, arr.get("realized")


# ---------------------------------------------------------------------------
# evaluate


def _read_realized(path, unit_ids):
    vals = {}
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames is None or "unit_id" not in r.fieldnames or "y" not in r.fieldnames:
            raise SystemExit(f"{path}: expected columns unit_id,y")
        for row in r:
            vals[row["unit_id"]] = float(row["y"])
    missing = [u for u in unit_ids if u not in vals]
    if missing:
        raise SystemExit(f"{path}: no realized value for units {missing[:5]}")
    return np.array([vals[u] for u in unit_ids])


EVAL_COLUMNS = ["forecast", "spec", "mode", "alpha", "h", "lps", "crps", "coverage", "length"] + \
    [f"frac_{k}" for k in SET_KINDS] + ["n_lps_floored"]


def cmd_evaluate(a):
    rows = []
    for path in a.forecast:
        pd, sets, meta, realized = load_forecast(path)
        if a.realized:
            realized = _read_realized(a.realized, meta["unit_ids"])
        if realized is None:
            raise SystemExit(f"{path}: no realized outcomes; pass --realized")
        d = evaluate_density(pd, realized)
        s = evaluate_sets(sets, realized)
        row = {"forecast": os.path.basename(os.path.normpath(path)), "spec": meta["spec"],
               "mode": meta["mode"], "alpha": _f(meta["alpha"]), "h": meta["h"],
               "lps": _f(d["lps"]), "crps": _f(d["crps"]), "coverage": _f(s["coverage_freq"]),
               "length": _f(s["avg_length"]), "n_lps_floored": d["n_lps_floored"]}
        for k in SET_KINDS:
            row[f"frac_{k}"] = _f(s["set_type_fractions"][k])
        rows.append(row)
    os.makedirs(os.path.dirname(os.path.abspath(a.out)), exist_ok=True)
    with open(a.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, EVAL_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# montecarlo


def cmd_montecarlo(a):
    kw = {}
    if a.N:
        kw["N"] = a.N
    if a.T:
        kw["T"] = a.T
    dgp = DgpSpec.design(a.design, n_reps=a.reps, seed=a.seed, **kw)
    settings = SamplerSettings(n_draws=a.n_draws, burn_in=a.burn_in)
    specs = a.specs.split(",") if a.specs else list(MC_SPECS)
    run_experiment(dgp, specs, settings, alpha=a.alpha, n_jobs=a.jobs, out_dir=a.out)
    log.info("wrote %s", a.out)


# ---------------------------------------------------------------------------
# check


def cmd_check(a):
    draws, stored = load_draws(a.draws)
    data = read_panel_csv(a.data, T=stored.n_periods_T) if a.data else stored
    stats = diag.PPC_STATS if a.stats == "all" else tuple(a.stats.split(","))
    os.makedirs(a.out, exist_ok=True)
    seed = draws.settings.seed if a.seed is None else a.seed
    ppc = diag.posterior_predictive_check(draws, data, a.hairlines, seed, stats)
    diag.write_ppc_csv(os.path.join(a.out, "ppc.csv"), ppc)
    diag.write_chain_diagnostics(a.out, diag.chain_diagnostics(draws))


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="paneltobit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="run the Gibbs sampler on a panel CSV")
    e.add_argument("--data", required=True)
    e.add_argument("--config")
    e.add_argument("--spec", help="short spec name, e.g. flexible_hetero_cre")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--n-draws", type=int)
    e.add_argument("--burn-in", type=int)
    e.add_argument("--workers", type=int, default=0)
    e.add_argument("--T", type=int, help="last estimation period; later rows are holdout")
    e.set_defaults(fn=cmd_estimate)

    f = sub.add_parser("forecast", help="predictive densities and set forecasts")
    f.add_argument("--draws", required=True)
    f.add_argument("--alpha", type=float, default=0.10)
    f.add_argument("--mode", choices=("average", "pointwise"), default="average")
    f.add_argument("--h", type=int, default=1)
    f.add_argument("--direct", action="store_true", help="re-estimate a lag-h model")
    f.add_argument("--x-future", help=".npy file with standardized x_{T+1..T+h-1}")
    f.add_argument("--density", choices=("auto", "exact", "grid"), default="auto")
    f.add_argument("--seed", type=int)
    f.add_argument("--out", required=True)
    f.set_defaults(fn=cmd_forecast)

    v = sub.add_parser("evaluate", help="score forecasts against realized outcomes")
    v.add_argument("--forecast", nargs="+", required=True)
    v.add_argument("--realized", help="CSV with unit_id,y (default: stored holdout)")
    v.add_argument("--out", required=True)
    v.set_defaults(fn=cmd_evaluate)

    m = sub.add_parser("montecarlo", help="synthetic-data experiment")
    m.add_argument("--design", choices=sorted(DESIGNS), default="table1")
    m.add_argument("--reps", type=int, default=20)
    m.add_argument("--N", type=int)
    m.add_argument("--T", type=int)
    m.add_argument("--specs")
    m.add_argument("--n-draws", type=int, default=2000)
    m.add_argument("--burn-in", type=int, default=1000)
    m.add_argument("--alpha", type=float, default=0.10)
    m.add_argument("--seed", type=int, default=DgpSpec.seed)
    m.add_argument("--jobs", type=int, default=1)
    m.add_argument("--out", required=True)
    m.set_defaults(fn=cmd_montecarlo)

    c = sub.add_parser("check", help="posterior predictive checks and chain diagnostics")
    c.add_argument("--draws", required=True)
    c.add_argument("--data")
    c.add_argument("--stats", default="all")
    c.add_argument("--hairlines", type=int, default=100)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True)
    c.set_defaults(fn=cmd_check)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
