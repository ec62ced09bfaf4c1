"""Command-line front end.

Experiments are described by an INI-style config (block headers, key=value
lines); every value can be overridden on the command line with a dotted
flag of the same name, e.g. ``--params.t_h=0.2``.  All randomness flows
from the run block's master seed.  Outputs are CSV files written
atomically; a metadata header records the config hash, seed and version.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import re
import sys
import time

import numpy as np

from . import __version__, analysis, calibration, dynamics, network

DEFAULT_CONFIG = """
[network]
n1 = 6
n2 = 60
n3 = 420
n4 = 10080
q1 = 1.0
q2 = 0.7
q3 = 0.05
q4 = auto
target_degree = 100
seed = 1

[params]
t_h = 0.2
p_ext = 0.009
tau0 = 7
sigma = 30

[forcing]
kind = ramp
value = 0.004
rate = 3.854e-6
base = 0.0
series =
c = -0.125
p_int_bar = 3.7e-4

[run]
horizon = 4000
initial_inactive_fraction = 0.0
master_seed = 1

[sweep]
ramp_rate = 3.854e-6
p_int_max = 0.008
replicates = 20
smooth_window = 25
min_gap = 0.05

[riskmap]
axis1 = t_h
axis1_min = 0.06
axis1_max = 0.44
axis1_steps = 10
axis2 = tau_bar
axis2_min = 10
axis2_max = 143
axis2_steps = 10
p_int = 0.004
settle_horizon = 5000
recovery_horizon = 5000
replicates = 10
vote_threshold = 0.5
settle_tol = 0.02
recovery_fraction = 0.9
tail_fraction = 0.25

[dfa]
input =
scale_min = 4
scale_max = 0
n_scales = 16

[calibrate]
input =
runs_per_eval = 20
max_evals = 150
restarts = 2
tau0 = 7
c = -0.125
burn_in = 360

[output]
dir = out
gnuplot = false
"""

_DOTTED = re.compile(r"^--([a-z][a-z0-9_]*)\.([a-z][a-z0-9_]*)=(.*)$")


class CliError(ValueError):
    pass


def load_config(path: str | None, overrides: list[tuple[str, str, str]]):
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(DEFAULT_CONFIG)
    known = {(s, k) for s in parser.sections() for k in parser[s]}
    if path is not None:
        user = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                user.read_file(fh)
        except configparser.Error as exc:
            raise CliError(f"bad config file {path}: {exc}") from None
        for section in user.sections():
            for key, value in user[section].items():
                if (section, key) not in known:
                    raise CliError(f"unknown config key [{section}] {key}")
                parser[section][key] = value
    for section, key, value in overrides:
        if (section, key) not in known:
            raise CliError(f"unknown config key [{section}] {key}")
        parser[section][key] = value
    return parser


def config_hash(cfg) -> str:
    lines = sorted(
        f"{section}.{key}={cfg[section][key]}"
        for section in cfg.sections()
        for key in cfg[section]
    )
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


def meta_header(cfg, command: str, seed: int, timestamp: bool) -> tuple[str, ...]:
    lines = [
        f"borrownet {__version__}",
        f"command={command}",
        f"config_sha256={config_hash(cfg)}",
        f"seed={seed}",
    ]
    if timestamp:
        lines.append(f"written={time.strftime('%Y-%m-%dT%H:%M:%S')}")
    return tuple(lines)


def _atomic(path, write_fn):
    tmp = f"{path}.tmp"
    write_fn(tmp)
    os.replace(tmp, path)


def _getfloat(cfg, section, key):
    try:
        return cfg[section].getfloat(key)
    except ValueError:
        raise CliError(f"[{section}] {key} must be a number, got {cfg[section][key]!r}") from None


def _getint(cfg, section, key):
    try:
        return cfg[section].getint(key)
    except ValueError:
        raise CliError(f"[{section}] {key} must be an integer, got {cfg[section][key]!r}") from None


def network_config(cfg, seed: int | None = None) -> network.NetworkConfig:
    sec = cfg["network"]
    q4_raw = sec["q4"].strip().lower()
    tgt_raw = sec["target_degree"].strip().lower()
    try:
        return network.NetworkConfig(
            n1=_getint(cfg, "network", "n1"),
            n2=_getint(cfg, "network", "n2"),
            n3=_getint(cfg, "network", "n3"),
            n4=_getint(cfg, "network", "n4"),
            q1=_getfloat(cfg, "network", "q1"),
            q2=_getfloat(cfg, "network", "q2"),
            q3=_getfloat(cfg, "network", "q3"),
            q4=None if q4_raw in ("auto", "") else float(q4_raw),
            target_degree=None if tgt_raw in ("none", "") else float(tgt_raw),
            seed=seed if seed is not None else _getint(cfg, "network", "seed"),
        )
    except ValueError as exc:
        raise CliError(f"invalid network config: {exc}") from None


def sim_params(cfg) -> dynamics.SimParams:
    try:
        return dynamics.SimParams(
            t_h=_getfloat(cfg, "params", "t_h"),
            p_ext=_getfloat(cfg, "params", "p_ext"),
            tau0=_getfloat(cfg, "params", "tau0"),
            sigma=_getfloat(cfg, "params", "sigma"),
        )
    except ValueError as exc:
        raise CliError(f"invalid params: {exc}") from None


def forcing_schedule(cfg, horizon: int) -> dynamics.ForcingSchedule:
    kind = cfg["forcing"]["kind"].strip().lower()
    if kind == "constant":
        return dynamics.ForcingSchedule.constant(_getfloat(cfg, "forcing", "value"), horizon)
    if kind == "ramp":
        return dynamics.ForcingSchedule.ramp(
            _getfloat(cfg, "forcing", "rate"), horizon, base=_getfloat(cfg, "forcing", "base")
        )
    if kind == "trend":
        path = cfg["forcing"]["series"].strip()
        if not path:
            raise CliError("[forcing] series path required for kind=trend")
        series = calibration.load_series(path)
        trend = calibration.fit_trend(series)
        return calibration.build_forcing(
            trend,
            _getfloat(cfg, "forcing", "c"),
            _getfloat(cfg, "forcing", "p_int_bar"),
            horizon,
        )
    raise CliError(f"unknown forcing kind {kind!r}")


def _gnuplot_stub(path, csv_name, title, using, ylabel):
    with open(path, "w") as fh:
        fh.write(
            f'set datafile separator ","\nset title "{title}"\n'
            f'set ylabel "{ylabel}"\nset key outside\n'
            f"plot {using}\n"
        )


def cmd_generate(cfg, args) -> int:
    netcfg = network_config(cfg)
    net = network.build_hierarchy(netcfg)
    out = os.path.join(args.out_dir, "network.edges")
    _atomic(out, lambda p: network.save_network(net, p))
    print(network.degree_summary(net))
    print(f"wrote {out}")
    return 0


def cmd_simulate(cfg, args) -> int:
    horizon = _getint(cfg, "run", "horizon")
    if horizon < 1:
        raise CliError("horizon must be >= 1")
    seed = args.seed if args.seed is not None else _getint(cfg, "run", "master_seed")
    net = network.build_hierarchy(network_config(cfg))
    params = sim_params(cfg)
    forcing = forcing_schedule(cfg, horizon)
    frac = _getfloat(cfg, "run", "initial_inactive_fraction")
    traj = dynamics.run(net, params, forcing, horizon, frac, dynamics.spawn_rng(seed, 0))
    out = os.path.join(args.out_dir, "trajectory.csv")
    header = meta_header(cfg, "simulate", seed, not args.no_timestamp)
    _atomic(out, lambda p: traj.to_csv(p, extra_header=header))
    if args.gnuplot:
        _gnuplot_stub(
            os.path.join(args.out_dir, "trajectory.gp"),
            "trajectory.csv",
            "fraction of active agents over time",
            "'trajectory.csv' using 1:2 with lines title 'f'",
            "f",
        )
    print(f"wrote {out}")
    return 0


def cmd_sweep(cfg, args) -> int:
    seed = args.seed if args.seed is not None else _getint(cfg, "run", "master_seed")
    net = network.build_hierarchy(network_config(cfg))
    params = sim_params(cfg)
    result = analysis.hysteresis_sweep(
        net,
        params,
        _getfloat(cfg, "sweep", "ramp_rate"),
        _getfloat(cfg, "sweep", "p_int_max"),
        replicates=_getint(cfg, "sweep", "replicates"),
        seed=seed,
        workers=args.threads,
        smooth_window=_getint(cfg, "sweep", "smooth_window"),
        min_gap=_getfloat(cfg, "sweep", "min_gap"),
    )
    header = meta_header(cfg, "sweep", seed, not args.no_timestamp)
    out = os.path.join(args.out_dir, "hysteresis.csv")
    _atomic(out, lambda p: result.to_csv(p, extra_header=header))
    crit = os.path.join(args.out_dir, "hysteresis_criticals.csv")
    _atomic(crit, lambda p: result.criticals_to_csv(p, extra_header=header))
    if args.gnuplot:
        _gnuplot_stub(
            os.path.join(args.out_dir, "hysteresis.gp"),
            "hysteresis.csv",
            "hysteresis loop",
            "'hysteresis.csv' using 2:3 with lines title 'f vs p_int'",
            "f",
        )
    print(f"wrote {out} and {crit}")
    return 0


def cmd_riskmap(cfg, args) -> int:
    seed = args.seed if args.seed is not None else _getint(cfg, "run", "master_seed")
    sec = "riskmap"
    axis1 = analysis.AxisSpec.linspace(
        cfg[sec]["axis1"].strip(),
        _getfloat(cfg, sec, "axis1_min"),
        _getfloat(cfg, sec, "axis1_max"),
        _getint(cfg, sec, "axis1_steps"),
    )
    axis2 = analysis.AxisSpec.linspace(
        cfg[sec]["axis2"].strip(),
        _getfloat(cfg, sec, "axis2_min"),
        _getfloat(cfg, sec, "axis2_max"),
        _getint(cfg, sec, "axis2_steps"),
    )
    policy = analysis.ClassifyPolicy(
        settle_horizon=_getint(cfg, sec, "settle_horizon"),
        recovery_horizon=_getint(cfg, sec, "recovery_horizon"),
        replicates=_getint(cfg, sec, "replicates"),
        vote_threshold=_getfloat(cfg, sec, "vote_threshold"),
        settle_tol=_getfloat(cfg, sec, "settle_tol"),
        recovery_fraction=_getfloat(cfg, sec, "recovery_fraction"),
        tail_fraction=_getfloat(cfg, sec, "tail_fraction"),
        seed=seed,
    )
    result = analysis.risk_map(
        axis1,
        axis2,
        sim_params(cfg),
        _getfloat(cfg, sec, "p_int"),
        policy,
        network_config(cfg),
        workers=args.threads,
    )
    header = meta_header(cfg, "riskmap", seed, not args.no_timestamp)
    out = os.path.join(args.out_dir, "riskmap.csv")
    _atomic(out, lambda p: result.to_csv(p, extra_header=header))
    bnd = os.path.join(args.out_dir, "riskmap_boundaries.csv")
    _atomic(bnd, lambda p: result.boundaries_to_csv(p, extra_header=header))
    if args.gnuplot:
        _gnuplot_stub(
            os.path.join(args.out_dir, "riskmap.gp"),
            "riskmap.csv",
            "risk map",
            "'riskmap.csv' using 1:2:3 with points palette title 'regime'",
            cfg[sec]["axis2"],
        )
    print(f"wrote {out} and {bnd}")
    return 0


def _read_plain_series(path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            token = line.split(",")[-1].strip()
            try:
                values.append(float(token))
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise CliError(f"line {lineno}: cannot parse {token!r}") from None
    if not values:
        raise CliError(f"no numeric data in {path}")
    return np.array(values)


def cmd_dfa(cfg, args) -> int:
    path = cfg["dfa"]["input"].strip()
    if not path:
        raise CliError("[dfa] input path is required")
    series = _read_plain_series(path)
    scale_max = _getint(cfg, "dfa", "scale_max")
    result = analysis.dfa(
        series,
        scale_min=_getint(cfg, "dfa", "scale_min"),
        scale_max=scale_max if scale_max > 0 else None,
        n_scales=_getint(cfg, "dfa", "n_scales"),
    )
    seed = args.seed if args.seed is not None else _getint(cfg, "run", "master_seed")
    header = meta_header(cfg, "dfa", seed, not args.no_timestamp)
    out = os.path.join(args.out_dir, "dfa.csv")
    _atomic(out, lambda p: result.to_csv(p, extra_header=header))
    if args.gnuplot:
        _gnuplot_stub(
            os.path.join(args.out_dir, "dfa.gp"),
            "dfa.csv",
            "detrended fluctuation analysis",
            "'dfa.csv' using 1:2 with linespoints title 'F(l)'",
            "F(l)",
        )
    print(f"alpha = {result.alpha:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_calibrate(cfg, args) -> int:
    path = cfg["calibrate"]["input"].strip()
    if not path:
        raise CliError("[calibrate] input path is required")
    series = calibration.load_series(path)
    seed = args.seed if args.seed is not None else _getint(cfg, "run", "master_seed")
    fit_config = calibration.FitConfig(
        network_config=network_config(cfg),
        tau0=_getfloat(cfg, "calibrate", "tau0"),
        c=_getfloat(cfg, "calibrate", "c"),
        runs_per_eval=_getint(cfg, "calibrate", "runs_per_eval"),
        max_evals=_getint(cfg, "calibrate", "max_evals"),
        restarts=_getint(cfg, "calibrate", "restarts"),
        seed=seed,
        workers=args.threads,
        burn_in_days=_getint(cfg, "calibrate", "burn_in"),
    )
    estimate = calibration.fit(series, fit_config)
    header = meta_header(cfg, "calibrate", seed, not args.no_timestamp)
    report = os.path.join(args.out_dir, "fit_report.txt")
    trace = os.path.join(args.out_dir, "fit_trace.csv")
    calibration.write_fit_report(estimate, report + ".tmp", trace + ".tmp", extra_header=header)
    os.replace(report + ".tmp", report)
    os.replace(trace + ".tmp", trace)
    print(
        f"estimate: p_int_bar={estimate.p_int_bar:.4g} t_h={estimate.t_h:.4g} "
        f"p_ext={estimate.p_ext:.4g} sigma={estimate.sigma:.4g} "
        f"(objective {estimate.objective:.4g})"
    )
    print(f"wrote {report} and {trace}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "riskmap": cmd_riskmap,
    "dfa": cmd_dfa,
    "calibrate": cmd_calibrate,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # validation errors exit with code 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="borrownet", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="INI config file; defaults are built in")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--out-dir", default=None, help="output directory (default from config)")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for sweeps/grids")
    parser.add_argument("--no-timestamp", action="store_true", help="omit the timestamp header line")
    parser.add_argument("--gnuplot", action="store_true", help="also write gnuplot script stubs")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    dotted: list[tuple[str, str, str]] = []
    rest: list[str] = []
    for token in argv:
        m = _DOTTED.match(token)
        if m:
            dotted.append((m.group(1), m.group(2), m.group(3)))
        else:
            rest.append(token)
    parser = build_parser()
    args = parser.parse_args(rest)
    try:
        cfg = load_config(args.config, dotted)
        if args.out_dir is None:
            args.out_dir = cfg["output"]["dir"]
        os.makedirs(args.out_dir, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (CliError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
