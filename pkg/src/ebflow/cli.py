"""Batch experiment runner.

Subcommands::

    ebflow generate   --config CFG --seed N --out DATA_DIR
    ebflow fit        --config CFG --data DATA_DIR --seed N --out RESULT_DIR
    ebflow evaluate   --result RESULT_DIR --data DATA_DIR
    ebflow experiment --config CFG [--out DIR] [--threads N]

Exit status is 0 on success, 2 for configuration errors and 3 for numerical
failures.
"""

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rngmod
from .baselines import fit_cavi, fit_gibbs_mcem, fit_langevin_mcem
from .datagen import (DESIGN_KINDS, PRIOR_KINDS, DesignSpec, PriorSpec, generate, load_dataset,
                      make_prior, save_dataset, write_matrix)
from .errors import ConfigError, NumericalFailure
from .flow import StepSchedule, fit_ebflow
from .inference import grid_w1, identity_marginal_nll, kl, prediction_mse, tv_distance
from .model import GridPrior, build_reparam
from .penalty import SplinePenalty

ALGORITHMS = ("ebflow", "ebflow-precond", "langevin-mcem", "gibbs-mcem", "cavi")
TRACE_COLUMNS = ("iter", "eta_phi", "eta_w", "tv", "seq_nll", "clamp_count")
TV_TARGET = 0.2


@dataclass
class ExperimentConfig:
    prior: str = "gaussian"
    M: float = 3.0
    K: int = 61
    design: str = "iid"
    n: int = 500
    p: int = 1000
    noise_fraction: float = 0.5
    algorithm: str = "ebflow"
    schedule: str = "loglinear"
    eta_start: float = 1.0
    eta_end: float = 0.1
    ratio: float = 0.01
    eta_phi: float = 1.0
    eta_w: float = 0.01
    T: int = 10000
    burn_in: int = 200
    lam: float = None
    T_iter: int = 100
    S: int = 10000
    cavi_iters: int = 1000
    n_post: int = 50000
    thin: int = 1
    trace_every: int = 10
    n_new: int = 1000
    data_seed: int = 0
    seeds: list = field(default_factory=lambda: list(range(10)))
    out: str = "results"
    threads: int = 1

    def __post_init__(self):
        if self.prior not in PRIOR_KINDS or self.prior == "custom":
            raise ConfigError(f"prior must be one of gaussian/cauchy/skew/bimodal, got {self.prior!r}")
        if self.design not in DESIGN_KINDS or self.design == "custom":
            raise ConfigError(f"unsupported design {self.design!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.schedule not in ("loglinear", "constant"):
            raise ConfigError(f"schedule must be loglinear or constant, got {self.schedule!r}")
        if not 0 < self.noise_fraction < 1:
            raise ConfigError("noise_fraction must lie in (0, 1)")
        for name in ("K", "n", "p", "T_iter", "S", "thin", "trace_every", "n_new", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("T", "burn_in", "cavi_iters", "n_post"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lam must be nonnegative")
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        try:
            self.design_spec()
            self.step_schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for k, v in d.items():
            kwargs[k] = _coerce(k, v, known[k])
        return cls(**kwargs)

    def to_dict(self):
        return dataclasses.asdict(self)

    @property
    def penalty_weight(self):
        if self.lam is not None:
            return float(self.lam)
        return 0.003 if self.prior == "gaussian" else 0.001

    def prior_spec(self):
        return PriorSpec(self.prior, self.M, self.K)

    def design_spec(self):
        return DesignSpec(self.design, self.n, self.p)

    def step_schedule(self):
        if self.schedule == "loglinear":
            return StepSchedule.loglinear(self.eta_start, self.eta_end, self.T, self.ratio,
                                          self.burn_in)
        return StepSchedule.constant(self.eta_phi, self.eta_w, self.T, self.burn_in)


def _coerce(key, value, f):
    default = f.default if f.default is not dataclasses.MISSING else None
    try:
        if key == "seeds":
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return [int(s) for s in value]
        if key == "lam":
            return None if value is None else float(value)
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def load_config(path=None, overrides=None):
    d = {}
    if path is not None:
        try:
            with open(path) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(d)


def save_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- formatting --------------------------------------------------------------

def fmt(x):
    """17 significant digits; NaN, None and infinities become ``NA``."""
    if x is None:
        return "NA"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "NA"
    return f"{x:.17g}"


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    rows = [[np.nan if v == "NA" else float(v) for v in ln.split(",")] for ln in lines[1:]]
    return header, np.array(rows)


def build_hash():
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def iterations_to_tv(iters, tv, target=TV_TARGET):
    """First traced iteration with TV below ``target``; ``None`` if the final TV exceeds it."""
    iters = np.asarray(iters)
    tv = np.asarray(tv, dtype=float)
    ok = ~np.isnan(tv)
    if not ok.any() or tv[ok][-1] > target:
        return None
    hit = np.flatnonzero(ok & (tv < target))
    return int(iters[hit[0]]) if hit.size else None


def round_hundred(x):
    return None if x is None else int(100 * math.floor(x / 100.0 + 0.5))


# -- commands ----------------------------------------------------------------

def cmd_generate(cfg, seed, out):
    model, _, X_new = generate(cfg.prior_spec(), cfg.design_spec(), cfg.noise_fraction, seed,
                               n_new=cfg.n_new)
    meta = {"prior": cfg.prior, "M": cfg.M, "K": cfg.K, "design": cfg.design, "n": cfg.n,
            "p": cfg.p, "noise_fraction": cfg.noise_fraction, "seed": int(seed),
            "rng": rngmod.RNG_NAME, "rng_version": rngmod.RNG_VERSION}
    save_dataset(out, model, meta, X_new)
    return out


def _truth_from_meta(meta):
    return make_prior(PriorSpec(meta["prior"], meta["M"], meta["K"]))


def run_fit(cfg, model, truth, seed):
    """Fit ``cfg.algorithm`` with the chain stream of ``seed``; returns a FitResult."""
    rng = rngmod.make_rng(seed, rngmod.CHAIN)
    init = GridPrior.uniform(cfg.M, cfg.K)
    penalty = SplinePenalty.for_prior(init, cfg.penalty_weight)
    total = cfg.burn_in + cfg.T
    if cfg.algorithm in ("ebflow", "ebflow-precond"):
        precond = cfg.algorithm == "ebflow-precond"
        ctx = build_reparam(model, precond=precond)
        return fit_ebflow(ctx, init, cfg.step_schedule(), penalty, precond=precond, rng=rng,
                          truth=truth, trace_every=cfg.trace_every, n_post=cfg.n_post,
                          thin=cfg.thin)
    if cfg.algorithm == "langevin-mcem":
        ctx = build_reparam(model)
        return fit_langevin_mcem(ctx, init, cfg.T_iter, cfg.eta_phi, total, penalty, cfg.S, rng,
                                 truth, burn_in=cfg.burn_in, trace_every=cfg.trace_every,
                                 n_post=cfg.n_post)
    if cfg.algorithm == "gibbs-mcem":
        return fit_gibbs_mcem(model, init, cfg.T_iter, total, penalty, rng, truth,
                              burn_in=cfg.burn_in, trace_every=cfg.trace_every, n_post=cfg.n_post)
    return fit_cavi(model, init, cfg.cavi_iters, penalty, truth, trace_every=1)


def cmd_fit(cfg, data_dir, seed, out):
    model, meta, _ = load_dataset(data_dir)
    truth = _truth_from_meta(meta)
    start = time.perf_counter()
    res = run_fit(cfg, model, truth, seed)
    wall = time.perf_counter() - start
    os.makedirs(out, exist_ok=True)
    tr = res.trace
    write_csv(os.path.join(out, "trace.csv"), TRACE_COLUMNS,
              zip(tr.iter, tr.eta_phi, tr.eta_w, tr.tv, tr.seq_nll, tr.clamp_count))
    write_csv(os.path.join(out, "final_weights.csv"), ("b", "w"),
              zip(res.prior.support, res.prior.weights))
    if res.theta_hat is not None:
        write_matrix(os.path.join(out, "theta_hat.csv"), res.theta_hat)
    run_meta = {"seed": int(seed), "algorithm": cfg.algorithm, "build_hash": build_hash(),
                "version": __version__, "numpy": np.__version__, "rng": rngmod.RNG_NAME,
                "rng_version": rngmod.RNG_VERSION, "wall_time": wall,
                "n_post": int(res.n_post), "config": cfg.to_dict()}
    if res.autocorr is not None:
        run_meta["median_lag1_autocorr"] = float(np.nanmedian(res.autocorr))
    with open(os.path.join(out, "run_meta.json"), "w") as fh:
        json.dump(run_meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


METRIC_COLUMNS = ("seed", "tv", "w1", "kl", "iters_to_tv02", "mse", "identity_nll")


def cmd_evaluate(result_dir, data_dir):
    """Compute the metrics row for one fit and write ``metrics.json``."""
    model, meta, X_new = load_dataset(data_dir)
    truth = _truth_from_meta(meta)
    _, fw = read_csv(os.path.join(result_dir, "final_weights.csv"))
    est = GridPrior(fw[:, 0], fw[:, 1] / fw[:, 1].sum())
    header, trace = read_csv(os.path.join(result_dir, "trace.csv"))
    cols = {h: trace[:, i] for i, h in enumerate(header)} if trace.size else {}
    with open(os.path.join(result_dir, "run_meta.json")) as fh:
        run_meta = json.load(fh)
    hit = iterations_to_tv(cols["iter"], cols["tv"]) if cols else None
    metrics = {"seed": run_meta.get("seed"), "tv": tv_distance(est, truth),
               "w1": grid_w1(est, truth), "kl": kl(truth, est), "iters_to_tv02": hit,
               "mse": None, "identity_nll": None}
    theta_path = os.path.join(result_dir, "theta_hat.csv")
    if X_new is not None and model.theta_star is not None and os.path.exists(theta_path):
        theta_hat = np.loadtxt(theta_path, delimiter=",", ndmin=1)
        metrics["mse"] = prediction_mse(theta_hat, model.theta_star, X_new)
    if meta.get("design") == "identity":
        metrics["identity_nll"] = identity_marginal_nll(model, est)
    with open(os.path.join(result_dir, "metrics.json"), "w") as fh:
        json.dump({k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                   for k, v in metrics.items()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return metrics


def _experiment_seed(args):
    cfg_dict, data_dir, seed, out = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        cmd_fit(cfg, data_dir, seed, out)
        return cmd_evaluate(out, data_dir)
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        return {"seed": seed, "failed": f"{type(exc).__name__}: {exc}"}


def _summary(values):
    vals = [v for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return None, None
    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return float(np.mean(vals)), sd


def cmd_experiment(cfg, out=None, threads=None):
    """Generate the dataset once, fit every seed, and aggregate the table row.

    Writes ``runs.csv`` (one row per seed) and ``table.csv`` with mean and
    standard deviation of TV, the median iterations to TV < 0.2 (nearest
    100, NA if most runs never get there), and mean MSE / identity NLL.
    """
    out = out or cfg.out
    threads = threads or cfg.threads
    data_dir = os.path.join(out, "data")
    cmd_generate(cfg, cfg.data_seed, data_dir)
    save_config(cfg, os.path.join(out, "config.json"))
    jobs = [(cfg.to_dict(), data_dir, s, os.path.join(out, f"seed_{s}")) for s in cfg.seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_experiment_seed, jobs))
    else:
        rows = [_experiment_seed(j) for j in jobs]

    ok = [r for r in rows if "failed" not in r]
    write_csv(os.path.join(out, "runs.csv"), METRIC_COLUMNS + ("failed",),
              ([r.get(c) for c in METRIC_COLUMNS] + [0 if "failed" not in r else 1] for r in rows))
    tv_mean, tv_sd = _summary([r["tv"] for r in ok])
    hits = sorted(np.inf if r["iters_to_tv02"] is None else r["iters_to_tv02"] for r in ok)
    med = float(np.median(hits)) if hits else np.inf
    mse_mean, _ = _summary([r["mse"] for r in ok])
    nll_mean, _ = _summary([r["identity_nll"] for r in ok])
    table = {"algorithm": cfg.algorithm, "prior": cfg.prior, "design": cfg.design, "n": cfg.n,
             "p": cfg.p, "tv_mean": tv_mean, "tv_sd": tv_sd,
             "iters_to_tv02": round_hundred(med) if math.isfinite(med) else None,
             "mse": mse_mean, "identity_nll": nll_mean, "n_failed": len(rows) - len(ok)}
    with open(os.path.join(out, "table.csv"), "w") as fh:
        fh.write(",".join(table) + "\n")
        fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in table.values()) + "\n")
    return table


# -- entry point -------------------------------------------------------------

def _parser():
    ap = argparse.ArgumentParser(prog="ebflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a dataset")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)

    f = sub.add_parser("fit", help="fit one algorithm to a dataset")
    f.add_argument("--config")
    f.add_argument("--data", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.add_argument("--algorithm", choices=ALGORITHMS)

    e = sub.add_parser("evaluate", help="metrics for a fitted result")
    e.add_argument("--result", required=True)
    e.add_argument("--data", required=True)

    x = sub.add_parser("experiment", help="generate, fit all seeds, aggregate")
    x.add_argument("--config")
    x.add_argument("--out")
    x.add_argument("--threads", type=int)
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "generate":
            cfg = load_config(args.config)
            cmd_generate(cfg, cfg.data_seed if args.seed is None else args.seed, args.out)
        elif args.command == "fit":
            cfg = load_config(args.config, {"algorithm": args.algorithm})
            cmd_fit(cfg, args.data, args.seed, args.out)
        elif args.command == "evaluate":
            metrics = cmd_evaluate(args.result, args.data)
            print(",".join(METRIC_COLUMNS))
            print(",".join(fmt(metrics[c]) for c in METRIC_COLUMNS))
        else:
            cfg = load_config(args.config, {"out": args.out, "threads": args.threads})
            table = cmd_experiment(cfg)
            print(",".join(table))
            print(",".join(v if isinstance(v, str) else fmt(v) for v in table.values()))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
