"""Command-line experiment runner.

Every command writes CSV files whose first line is a ``# config:`` comment with
the complete merged configuration, so ``--config some_output.csv`` re-runs it.
Settings are resolved as built-in defaults, then ``--config`` (an INI file or
a CSV written by this tool), then explicit flags.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .analytic import ModelParams, p_u, p_urw, p_urw_star
from .csvio import read_config_header, save_csv
from .detection import (
    DetectorConfig,
    InsufficientSample,
    calibrate_from_windows,
    distance_dp,
    empirical_distribution,
    guarded_tip_selection,
    honest_windows,
    sliding_windows,
    window_distances,
)
from .parasite import AttackKind, AttackSpec, pc_a_root_probability, walk_template
from .rng import derive_seed, stream
from .simulator import (
    SimConfig,
    fit_linear_exit,
    measure_approver_distribution,
    measure_exit_profile,
    run,
    simulate,
)
from .tipselect import WalkConfig, walk_select

log = logging.getLogger("tanglepc")

COMMON = {
    "lam": 100.0, "policy": "sem", "alpha": 0.0, "a": 1.3, "S": 10, "eta": None, "seed": 1,
}

DEFAULTS = {
    "simulate": {"tip_selection": "urts", "horizon": 200.0, "warmup": 100.0},
    "analytic": {"n_max": 10},
    "exit-profile": {"tip_selection": "walk", "horizon": 200.0, "warmup": 100.0,
                     "snapshots": 20, "walks": 10_000, "grid": 50, "method": "exact"},
    "calibrate": {"horizon": 200.0, "warmup": 100.0, "metric": "dp", "fpr": 0.01, "windows": 20_000},
    "attack-detect": {"horizon": 200.0, "warmup": 100.0, "attack": "spc", "mu": 50.0,
                      "attack_start": 150.0, "duration": 20.0, "p_root": None, "metric": "dp",
                      "fpr": 0.01, "windows": 20_000, "trials": 1, "selections": 100,
                      "safe_alpha": 0.5, "walk_start": "root"},
    "reproduce-figure": {"figure": None, "scale": "desk"},
}

# Monte Carlo sizes for figure reproduction.
SCALES = {
    "desk": {"fig2_samples": 20_000, "fig3_horizon": 200.0, "fig3_snapshots": 10, "fig3_walks": 10_000,
             "fig5_samples": 5_000, "fig5_walks": 2_000, "fig7_horizon": 300.0, "fig7_windows": 5_000},
    "paper": {"fig2_samples": 100_000, "fig3_horizon": 400.0, "fig3_snapshots": 100, "fig3_walks": 100_000,
              "fig5_samples": 40_000, "fig5_walks": 20_000, "fig7_horizon": 400.0, "fig7_windows": 50_000},
}

FIG2_LAMBDAS = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)
FIG5_LAMBDAS = (5.0, 10.0, 20.0, 50.0, 100.0)
FIG7_SIZES = (10, 25, 50, 100)


class ConfigError(ValueError):
    pass


# -- configuration ------------------------------------------------------------


# value types for settings whose default is None
NULLABLE = {"eta": float, "p_root": float, "figure": int}


def _coerce(key: str, value, default):
    if value is None or isinstance(value, str) and value.strip().lower() in ("", "none"):
        return None
    kind = NULLABLE.get(key, type(default))
    try:
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def load_config_file(path: str) -> dict:
    """Settings from an INI file (all sections merged) or a CSV ``# config:`` header."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    if p.suffix == ".csv":
        return read_config_header(p)
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep "S" upper case
    parser.read(p)
    out = dict(parser.defaults())
    for section in parser.sections():
        out.update(parser[section])
    if "lambda" in out:
        out["lam"] = out.pop("lambda")
    return {k.replace("-", "_"): v for k, v in out.items()}


def resolve(args: argparse.Namespace) -> dict:
    command = args.command
    defaults = {**COMMON, **DEFAULTS[command]}
    merged = dict(defaults)
    if getattr(args, "config", None):
        for k, v in load_config_file(args.config).items():
            if k in defaults:
                merged[k] = v
    for k, v in vars(args).items():
        # an omitted optional positional comes through as None
        if k in defaults and v is not None:
            merged[k] = v
    return {k: _coerce(k, v, defaults[k]) for k, v in merged.items()}


def sim_config(cfg: dict, tip_selection: str | None = None, seed: int | None = None, **over) -> SimConfig:
    kw = dict(lam=cfg["lam"], edge_policy=cfg["policy"], tip_selection=tip_selection or cfg.get("tip_selection", "walk"),
              alpha=cfg["alpha"], horizon=cfg.get("horizon", 200.0), warmup=cfg.get("warmup", 100.0),
              seed=cfg["seed"] if seed is None else seed)
    kw.update(over)
    return SimConfig(**kw)


def model_params(cfg: dict, lam: float | None = None, a: float | None = None) -> ModelParams:
    return ModelParams(cfg["lam"] if lam is None else lam, cfg["policy"], cfg["a"] if a is None else a)


def _embedded(cfg: dict, command: str, **extra) -> dict:
    return {"command": command, **cfg, **extra}


# -- commands -----------------------------------------------------------------


def cmd_simulate(cfg: dict, out: Path) -> list[Path]:
    config = sim_config(cfg)
    result = simulate(config)
    snapshot = out / "tangle.txt"
    out.mkdir(parents=True, exist_ok=True)
    with snapshot.open("w") as fh:
        result.tangle.dump(fh)
    hist = measure_approver_distribution(result.tangle, "all", config.warmup, config.horizon)
    meta = _embedded(cfg, "simulate")
    paths = [snapshot, save_csv(out / "histogram.csv", hist.CSV_COLUMNS, hist.csv_rows(), meta)]
    paths.append(save_csv(out / "tips.csv", ("mean_tips", "num_transactions"),
                          [(result.mean_tips, len(result.tangle))], meta))
    return paths


def analytic_rows(params: ModelParams, n_max: int) -> list[tuple]:
    pu, pw, ps = p_u(params), p_urw(params), p_urw_star(params)
    return [(n, pu[n], pw[n], ps[n]) for n in range(1, n_max + 1)]


def cmd_analytic(cfg: dict, out: Path) -> list[Path]:
    params = model_params(cfg)
    rows = analytic_rows(params, cfg["n_max"])
    return [save_csv(out / "analytic.csv", ("n", "P_U", "P_URW", "P_URW_star"), rows, _embedded(cfg, "analytic"))]


def cmd_exit_profile(cfg: dict, out: Path) -> list[Path]:
    config = sim_config(cfg)
    grid = cfg["grid"] or None
    profile = measure_exit_profile(config, cfg["snapshots"], cfg["walks"], grid=grid, method=cfg["method"])
    meta = _embedded(cfg, "exit-profile")
    return [
        save_csv(out / "exit_profile.csv", profile.CSV_COLUMNS, profile.points, meta),
        save_csv(out / "exit_fit.csv", ("a", "mean_tips"), [(fit_linear_exit(profile), profile.mean_tips)], meta),
    ]


def _calibration(cfg: dict, tangle, S: int, metric: str, at_time: float, reference, name: str):
    windows = honest_windows(tangle, S, cfg["windows"], stream(cfg["seed"], name), at_time, cfg["warmup"])
    return calibrate_from_windows(windows, DetectorConfig(S, reference, metric), cfg["fpr"])


def cmd_calibrate(cfg: dict, out: Path) -> list[Path]:
    config = sim_config(cfg, "walk")
    tangle = run(config)
    ref = p_urw_star(model_params(cfg))
    cal = _calibration(cfg, tangle, cfg["S"], cfg["metric"], config.horizon, ref, "calibrate")
    meta = _embedded(cfg, "calibrate")
    print(f"eta = {cal.eta:.6g} for fpr {cfg['fpr']} (S={cfg['S']}, {cfg['metric']})")
    return [
        save_csv(out / "calibration_cdf.csv", ("d", "cumulative_probability"), cal.csv_rows(), meta),
        save_csv(out / "eta.csv", ("S", "metric", "fpr", "eta"), [(cal.S, cal.metric.value, cal.fpr_target, cal.eta)], meta),
    ]


CAMPAIGN_COLUMNS = (
    "trial", "seed", "kind", "mu", "p_root", "num_malicious", "root_links", "r", "r_over_mu",
    "mean_n_pc", "residual_dp", "pc_dp", "eta", "honest_fpr", "pc_flag_rate",
    "unguarded_capture", "guarded_capture", "guarded_flag_rate",
)


def attack_spec(cfg: dict, reference, template=None) -> AttackSpec:
    kind = AttackKind(cfg["attack"])
    p_root = cfg["p_root"]
    if p_root is None:
        p_root = pc_a_root_probability(reference) if kind is AttackKind.PC1 else 1.0
    return AttackSpec(kind, cfg["mu"], cfg["duration"], start=cfg["attack_start"], p_root=p_root,
                      target_distribution=reference if kind is AttackKind.MIMIC else None,
                      template=template)


def run_trial(cfg: dict, trial: int) -> tuple:
    seed = derive_seed(cfg["seed"], "trial", trial)
    config = sim_config(cfg, "walk", seed=seed)
    ref = p_urw_star(model_params(cfg))
    if not config.warmup < cfg["attack_start"] < config.horizon:
        raise ConfigError("attack_start must lie between warmup and horizon")
    template = None
    if AttackKind(cfg["attack"]) is AttackKind.MIMIC:
        honest = run(sim_config(cfg, "walk", seed=seed, horizon=cfg["attack_start"]))
        template = walk_template(honest, 2_000, stream(seed, "template"), warmup=config.warmup)
    spec = attack_spec(cfg, ref, template)
    if spec.reveal > config.horizon:
        raise ConfigError("the attack is revealed after the horizon")
    result = simulate(config, spec)
    tangle, report = result.tangle, result.attack
    S, metric = cfg["S"], cfg["metric"]
    # Calibrate on what honest nodes see before the reveal.
    if cfg["eta"] is None:
        eta = _calibration(cfg, tangle, S, metric, spec.start, ref, f"calibrate-{trial}").eta
    else:
        eta = cfg["eta"]
    check = honest_windows(tangle, S, cfg["windows"], stream(seed, "fpr"), spec.start, config.warmup)
    honest_fpr = float(np.mean(window_distances(check, ref, metric) > eta))
    pc_windows = sliding_windows(report.main_counts(), S)
    pc_flag = float(np.mean(window_distances(pc_windows, ref, metric) > eta)) if len(pc_windows) else math.nan
    main = report.main_counts()
    pc_dp = distance_dp(empirical_distribution(main), ref) if main else math.nan

    at = config.horizon
    start = report.root if cfg["walk_start"] == "root" else 0
    walk = WalkConfig(alpha=config.alpha, start=start)
    weights = tangle.cumulative_weights(at) if config.alpha > 0 or cfg["safe_alpha"] > 0 else None
    detector = DetectorConfig(S, ref, metric, eta=min(max(eta, 0.0), 1.0), safe_alpha=cfg["safe_alpha"])
    rng = stream(seed, "selections")
    n = cfg["selections"]
    unguarded = guarded = flagged = 0
    bad = set(report.malicious)
    # A selection is captured when its final walk runs through the PC.
    for _ in range(n):
        unguarded += not bad.isdisjoint(walk_select(tangle, walk, at, rng, weights).path)
        _, trace = guarded_tip_selection(tangle, walk, detector, at, rng, weights)
        last_mode = trace.rows[-1][5] if trace.rows else "standard"
        guarded += any(row[1] in bad for row in trace.rows if row[5] == last_mode)
        flagged += trace.flagged
    return (
        trial, seed, report.kind.value, report.mu, report.p_root, report.num_malicious, report.root_links,
        report.effective_rate_r, report.effective_rate_r / report.mu, report.mean_n_pc, report.residual_dp,
        pc_dp, eta, honest_fpr, pc_flag, unguarded / n if n else math.nan,
        guarded / n if n else math.nan, flagged / n if n else math.nan,
    )


def cmd_attack_detect(cfg: dict, out: Path) -> list[Path]:
    if cfg["trials"] < 0:
        raise ConfigError("trials must be non-negative")
    # validate the composition before any simulation
    attack_spec(cfg, p_urw_star(model_params(cfg)), template=[1])
    sim_config(cfg, "walk")
    rows = [run_trial(cfg, i) for i in range(cfg["trials"])]
    return [save_csv(out / "campaign.csv", CAMPAIGN_COLUMNS, rows, _embedded(cfg, "attack-detect"))]


# -- figures --------------------------------------------------------------------


def figure2(cfg: dict, scale: dict) -> dict[str, tuple]:
    """Simulated (URTS) and analytic P(n), n = 1..4, over a lambda sweep, per edge policy."""
    out = {}
    for policy in ("sem", "mem"):
        rows = []
        for lam in FIG2_LAMBDAS:
            warmup = 100.0
            horizon = warmup + scale["fig2_samples"] / lam + 2.0
            tangle = run(SimConfig(lam, policy, "urts", horizon=horizon, warmup=warmup,
                                   seed=derive_seed(cfg["seed"], f"fig2-{policy}", int(lam * 100))))
            sim = measure_approver_distribution(tangle, "all", warmup, horizon).distribution()
            ana = p_u(ModelParams(lam, policy, 0.0))
            rows += [(lam, n, sim[n], ana[n]) for n in range(1, 5)]
        out[f"fig2_{policy}.csv"] = (("lambda", "n", "simulated", "analytic"), rows)
    return out


def figure3(cfg: dict, scale: dict) -> dict[str, tuple]:
    config = SimConfig(100.0, cfg["policy"], "walk", alpha=cfg["alpha"], horizon=scale["fig3_horizon"],
                       warmup=100.0, seed=cfg["seed"])
    profile = measure_exit_profile(config, scale["fig3_snapshots"], scale["fig3_walks"])
    return {
        "fig3_profile.csv": (profile.CSV_COLUMNS, profile.points),
        "fig3_fit.csv": (("a", "mean_tips"), [(fit_linear_exit(profile), profile.mean_tips)]),
    }


def figure4(cfg: dict, scale: dict) -> dict[str, tuple]:
    rows = []
    for a in np.linspace(0.0, 2.0, 21):
        params = ModelParams(100.0, cfg["policy"], float(a))
        pw, ps = p_urw(params), p_urw_star(params)
        rows += [(round(float(a), 10), n, pw[n], ps[n]) for n in range(1, 5)]
    return {"fig4.csv": (("a", "n", "P_URW", "P_URW_star"), rows)}


def figure5(cfg: dict, scale: dict) -> dict[str, tuple]:
    rows = []
    for lam in FIG5_LAMBDAS:
        horizon = 100.0 + scale["fig5_samples"] / lam + 2.0
        seed = derive_seed(cfg["seed"], "fig5", int(lam))
        tangle = run(SimConfig(lam, cfg["policy"], "walk", horizon=horizon, warmup=100.0, seed=seed))
        every = measure_approver_distribution(tangle, "all", 100.0, horizon).distribution()
        along = measure_approver_distribution(tangle, "along_walks", 100.0, horizon,
                                              walks=scale["fig5_walks"], rng=stream(seed, "fig5-walks")).distribution()
        params = ModelParams(lam, cfg["policy"], cfg["a"])
        pw, ps = p_urw(params), p_urw_star(params)
        rows += [(lam, n, every[n], along[n], pw[n], ps[n]) for n in range(1, 5)]
    return {"fig5.csv": (("lambda", "n", "all", "along_walks", "P_URW", "P_URW_star"), rows)}


def figure7(cfg: dict, scale: dict) -> dict[str, tuple]:
    config = SimConfig(100.0, cfg["policy"], "walk", horizon=scale["fig7_horizon"], warmup=100.0, seed=cfg["seed"])
    tangle = run(config)
    ref = p_urw_star(ModelParams(100.0, cfg["policy"], cfg["a"]))
    out = {}
    for S in FIG7_SIZES:
        windows = honest_windows(tangle, S, scale["fig7_windows"], stream(cfg["seed"], f"fig7-{S}"),
                                 warmup=config.warmup)
        for metric in ("dp", "dq"):
            cal = calibrate_from_windows(windows, DetectorConfig(S, ref, metric))
            out[f"fig7_{metric}_S{S}.csv"] = (("d", "cumulative_probability"), cal.csv_rows())
    return out


FIGURES = {2: figure2, 3: figure3, 4: figure4, 5: figure5, 7: figure7}


def cmd_reproduce_figure(cfg: dict, out: Path) -> list[Path]:
    which = cfg["figure"]
    if which is None:
        raise ConfigError("which figure? (2, 3, 4, 5 or 7)")
    if which not in FIGURES:
        raise ConfigError(f"unknown figure {which}; choose from {sorted(FIGURES)}")
    if cfg["scale"] not in SCALES:
        raise ConfigError(f"unknown scale {cfg['scale']!r}")
    meta = _embedded(cfg, "reproduce-figure")
    return [save_csv(out / name, columns, rows, meta)
            for name, (columns, rows) in FIGURES[which](cfg, SCALES[cfg["scale"]]).items()]


COMMANDS = {
    "simulate": cmd_simulate,
    "analytic": cmd_analytic,
    "exit-profile": cmd_exit_profile,
    "calibrate": cmd_calibrate,
    "attack-detect": cmd_attack_detect,
    "reproduce-figure": cmd_reproduce_figure,
}


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--lambda", dest="lam", type=float, help="honest arrival rate per reveal delay")
    common.add_argument("--policy", choices=("sem", "mem"), help="duplicate-selection edge policy")
    common.add_argument("--alpha", type=float, help="walk bias (0 = unbiased walk)")
    common.add_argument("--a", type=float, help="exit-profile slope of the reference model")
    common.add_argument("--S", type=int, help="detector window size")
    common.add_argument("--eta", type=float, help="detection threshold (default: calibrate)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--config", help="INI file, or a CSV written by this tool")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    sim = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    sim.add_argument("--horizon", type=float)
    sim.add_argument("--warmup", type=float)

    parser = argparse.ArgumentParser(prog="tanglepc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common, sim], help="generate a Tangle and its approver histogram")
    p.add_argument("--tip-selection", dest="tip_selection", choices=("urts", "walk"), default=argparse.SUPPRESS)

    p = sub.add_parser("analytic", parents=[common], help="reference distributions P_U, P_URW, P*_URW")
    p.add_argument("--n-max", dest="n_max", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("exit-profile", parents=[common, sim], help="L-normalised exit profile and fitted slope")
    p.add_argument("--tip-selection", dest="tip_selection", choices=("urts", "walk"), default=argparse.SUPPRESS)
    p.add_argument("--snapshots", type=int, default=argparse.SUPPRESS)
    p.add_argument("--walks", type=int, default=argparse.SUPPRESS)
    p.add_argument("--grid", type=int, default=argparse.SUPPRESS, help="bins on [0, 1]; 0 keeps every rank")
    p.add_argument("--method", choices=("exact", "walks"), default=argparse.SUPPRESS)

    detect = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    detect.add_argument("--metric", choices=("dp", "dq"))
    detect.add_argument("--fpr", type=float, help="target honest false-positive rate")
    detect.add_argument("--windows", type=int, help="honest windows used for calibration")

    sub.add_parser("calibrate", parents=[common, sim, detect], help="honest distance CDF and threshold")

    p = sub.add_parser("attack-detect", parents=[common, sim, detect], help="parasite-chain campaign")
    p.add_argument("--attack", choices=[k.value for k in AttackKind], default=argparse.SUPPRESS)
    p.add_argument("--mu", type=float, default=argparse.SUPPRESS)
    p.add_argument("--attack-start", dest="attack_start", type=float, default=argparse.SUPPRESS)
    p.add_argument("--duration", type=float, default=argparse.SUPPRESS)
    p.add_argument("--p-root", dest="p_root", type=float, default=argparse.SUPPRESS)
    p.add_argument("--trials", type=int, default=argparse.SUPPRESS)
    p.add_argument("--selections", type=int, default=argparse.SUPPRESS, help="post-reveal tip selections per trial")
    p.add_argument("--safe-alpha", dest="safe_alpha", type=float, default=argparse.SUPPRESS)
    p.add_argument("--walk-start", dest="walk_start", choices=("root", "genesis"), default=argparse.SUPPRESS)

    p = sub.add_parser("reproduce-figure", parents=[common], help="CSV data behind one of the figures")
    p.add_argument("figure", type=int, nargs="?", default=None, help="2, 3, 4, 5 or 7")
    p.add_argument("--scale", choices=tuple(SCALES), default=argparse.SUPPRESS)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        paths = COMMANDS[args.command](cfg, Path(getattr(args, "out", ".")))
    except (ConfigError, InsufficientSample, ValueError) as exc:
        print(f"tanglepc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"tanglepc {args.command}: cannot write output: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        log.info("wrote %s", p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
