"""Config-driven runner: ``mptcplab run|reproduce|list-experiments|validate``.

Exit codes: 0 success, 2 invalid config or arguments, 3 numerical failure
(divergence or non-convergence; a ``diagnostic.json`` is written to the output
directory).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .algorithms import Algorithm, AlgorithmError, from_config
from .analysis import AnalysisError, linearization, table_one
from .equilibrium import SolverError, solve_test_network
from .fluidsim import FluidDivergence, FluidRunConfig, default_initial, integrate, settle
from .netmodel import LinkSpec, NetworkError, NetworkSpec, RouteSpec, SystemState
from .packetsim import FlowSchedule, ScheduleError, friendliness_split, run_packet_sim, summary
from .reporting import dump_json, jsonable
from .scenarios import EXPERIMENTS, reproduce

log = logging.getLogger("mptcplab")

SCHEMA_VERSION = 1
MODES = ("fluid", "packet", "analyze", "equilibrium", "friendliness")

# Every optional key with its default; rendered into --help.
DEFAULTS = {
    "seed": 0,
    "outputs": {"dir": "out", "prefix": "run"},
    "link": {"price_gain": 1.0, "buffer": 100, "prop_delay": 0.0, "loss_prob": 0.0},
    "flow": {"start": 0.0, "end": None},
    "fluid": {"t_end": 100.0, "dt": 1e-3, "method": "rk4", "record_every": 10},
    "packet": {"horizon": 60.0, "sample_dt": 0.01, "start_jitter": 0.01, "ack_jitter": 0.0},
    "analyze": {"samples": 100, "algorithms": None},
    "equilibrium": {},
    "friendliness": {"capacity": 100.0, "rtts_mp": [1.0, 1.0], "rtt_sp": 1.0, "algorithms": None},
    "tolerances": {"equilibrium_residual": 1e-6, "settle_time": 200.0},
}

CONFIG_HELP = """\
config file (YAML):
  schema_version: 1                    required
  mode: fluid|packet|analyze|equilibrium|friendliness
  seed: 0
  network:                             required except for analyze/friendliness
    links: [{capacity: 10, price_gain: 1.0, buffer: 100, prop_delay: 0.0, loss_prob: 0.0}]
  flows:                               one entry per source
    - algorithm: balia                 or {name: generalized, beta: 0.2, eta: 0.5, n: inf}
      routes: [{links: [0], rtt: 1.0}]
      start: 0.0                       packet mode only
      end: null                        packet mode only, null = whole run
  fluid:        {t_end: 100.0, dt: 0.001, method: rk4, record_every: 10}
  packet:       {horizon: 60.0, sample_dt: 0.01, start_jitter: 0.01, ack_jitter: 0.0}
  analyze:      {samples: 100, algorithms: null}     null = the flows' algorithms
  friendliness: {capacity: 100.0, rtts_mp: [1.0, 1.0], rtt_sp: 1.0, algorithms: null}
  tolerances:   {equilibrium_residual: 1e-6, settle_time: 200.0}
  outputs:      {dir: out, prefix: run}

environment: MPTCPLAB_LOG sets the log level (DEBUG, INFO, WARNING; default WARNING).
"""


class ConfigError(ValueError):
    """Invalid config; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass
class ExperimentConfig:
    mode: str
    seed: int
    network: NetworkSpec | None
    algorithms: list[Algorithm]
    schedule: list[FlowSchedule]
    section: dict                      # mode options with defaults filled in
    tolerances: dict
    outputs: dict
    raw: dict = field(default_factory=dict)


# ------------------------------------------------------------------ parsing

def _merge(key: str, given, defaults: dict) -> dict:
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(key, "must be a mapping")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{key}.{unknown[0]}", "unknown key")
    return {**defaults, **given}


def _number(key: str, v, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(key, f"expected a number, got {v!r}")
    v = float(v)
    if not np.isfinite(v) or (positive and v <= 0) or (nonneg and v < 0):
        raise ConfigError(key, f"out of range: {v!r}")
    return v


def _algorithm(key: str, spec) -> Algorithm:
    try:
        return from_config(spec)
    except (AlgorithmError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(key, str(e)) from None


def _network(raw: dict, need_flows: bool):
    net_raw = raw.get("network")
    if not isinstance(net_raw, dict):
        raise ConfigError("network", "required mapping with a 'links' list")
    links_raw = net_raw.get("links")
    if not isinstance(links_raw, list) or not links_raw:
        raise ConfigError("network.links", "must be a non-empty list")
    links = []
    for i, l in enumerate(links_raw):
        key = f"network.links[{i}]"
        if not isinstance(l, dict) or "capacity" not in l:
            raise ConfigError(f"{key}.capacity", "required")
        l = _merge(key, l, {"capacity": None, **DEFAULTS["link"]})
        try:
            links.append(LinkSpec(_number(f"{key}.capacity", l["capacity"], positive=True),
                                  _number(f"{key}.price_gain", l["price_gain"], positive=True),
                                  int(_number(f"{key}.buffer", l["buffer"], positive=True)),
                                  _number(f"{key}.prop_delay", l["prop_delay"], nonneg=True),
                                  _number(f"{key}.loss_prob", l["loss_prob"], nonneg=True)))
        except NetworkError as e:
            raise ConfigError(key, str(e)) from None
    flows_raw = raw.get("flows")
    if not isinstance(flows_raw, list) or not flows_raw:
        raise ConfigError("flows", "must be a non-empty list")
    routes, algs, sched = [], [], []
    for s, f in enumerate(flows_raw):
        key = f"flows[{s}]"
        if not isinstance(f, dict):
            raise ConfigError(key, "must be a mapping")
        f = _merge(key, f, {"algorithm": None, "routes": None, **DEFAULTS["flow"]})
        if f["algorithm"] is None:
            raise ConfigError(f"{key}.algorithm", "required")
        algs.append(_algorithm(f"{key}.algorithm", f["algorithm"]))
        if not isinstance(f["routes"], list) or not f["routes"]:
            raise ConfigError(f"{key}.routes", "must be a non-empty list")
        for j, r in enumerate(f["routes"]):
            rk = f"{key}.routes[{j}]"
            r = _merge(rk, r, {"links": None, "rtt": None})
            if not isinstance(r["links"], list) or not r["links"]:
                raise ConfigError(f"{rk}.links", "must be a non-empty list of link indices")
            for l in r["links"]:
                if isinstance(l, bool) or not isinstance(l, int) or not 0 <= l < len(links):
                    raise ConfigError(f"{rk}.links", f"unknown link {l!r}")
            try:
                routes.append(RouteSpec(s, tuple(r["links"]), _number(f"{rk}.rtt", r["rtt"], positive=True)))
            except NetworkError as e:
                raise ConfigError(rk, str(e)) from None
        start = _number(f"{key}.start", f["start"], nonneg=True)
        end = np.inf if f["end"] is None else _number(f"{key}.end", f["end"], positive=True)
        if end <= start:
            raise ConfigError(f"{key}.end", "must exceed start")
        if start > 0 or np.isfinite(end):
            sched.append(FlowSchedule(s, start, end))
    return NetworkSpec(tuple(links), tuple(routes)), algs, sched


def parse_config(raw) -> ExperimentConfig:
    """Validate a loaded config tree; raises ConfigError naming the bad key."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    allowed = {"schema_version", "mode", "seed", "network", "flows", "outputs", "tolerances", *MODES}
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}, got {mode!r}")
    seed = raw.get("seed", DEFAULTS["seed"])
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", f"must be a nonnegative integer, got {seed!r}")
    section = _merge(mode, raw.get(mode), DEFAULTS[mode])
    tol = _merge("tolerances", raw.get("tolerances"), DEFAULTS["tolerances"])
    for k, v in tol.items():
        _number(f"tolerances.{k}", v, positive=True)
    outputs = _merge("outputs", raw.get("outputs"), DEFAULTS["outputs"])

    net, algs, sched = None, [], []
    if mode in ("fluid", "packet", "equilibrium") or "network" in raw:
        net, algs, sched = _network(raw, True)
    if mode in ("fluid", "equilibrium") and sched:
        raise ConfigError(f"flows[{sched[0].flow}].start", "schedules apply to packet mode only")

    if mode == "fluid":
        for k in ("t_end", "dt"):
            _number(f"fluid.{k}", section[k], positive=True)
        if section["method"] not in ("euler", "rk4"):
            raise ConfigError("fluid.method", "must be 'euler' or 'rk4'")
        if section["t_end"] <= section["dt"]:
            raise ConfigError("fluid.t_end", "must exceed fluid.dt")
    elif mode == "packet":
        _number("packet.horizon", section["horizon"], positive=True)
        _number("packet.sample_dt", section["sample_dt"], positive=True)
        _number("packet.start_jitter", section["start_jitter"], nonneg=True)
        _number("packet.ack_jitter", section["ack_jitter"], nonneg=True)
        try:
            net.check_packet_delays()
        except NetworkError as e:
            raise ConfigError("flows", str(e)) from None
        for s in sched:
            if s.start >= section["horizon"]:
                raise ConfigError(f"flows[{s.flow}].start", "must be before packet.horizon")
    elif mode in ("analyze", "friendliness"):
        names = section["algorithms"]
        if names is None:
            if not algs:
                raise ConfigError(f"{mode}.algorithms", "required when no flows are given")
        else:
            if not isinstance(names, list) or not names:
                raise ConfigError(f"{mode}.algorithms", "must be a non-empty list")
            algs = [_algorithm(f"{mode}.algorithms[{i}]", a) for i, a in enumerate(names)]
        if mode == "analyze":
            if isinstance(section["samples"], bool) or not isinstance(section["samples"], int) \
                    or section["samples"] < 1:
                raise ConfigError("analyze.samples", "must be a positive integer")
        else:
            _number("friendliness.capacity", section["capacity"], positive=True)
            _number("friendliness.rtt_sp", section["rtt_sp"], positive=True)
            if not isinstance(section["rtts_mp"], list) or not section["rtts_mp"]:
                raise ConfigError("friendliness.rtts_mp", "must be a non-empty list")
            for i, t in enumerate(section["rtts_mp"]):
                _number(f"friendliness.rtts_mp[{i}]", t, positive=True)
    return ExperimentConfig(mode, seed, net, algs, sched, section, tol, outputs, raw)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError("--config", f"cannot read {path}: {e.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError("<root>", f"not valid YAML: {e}") from None
    return parse_config(raw)


# ------------------------------------------------------------------- modes

class NumericalFailure(RuntimeError):
    def __init__(self, msg: str, diagnostic: dict):
        super().__init__(msg)
        self.diagnostic = diagnostic


def _state_dict(net: NetworkSpec, state: SystemState) -> dict:
    return {"rates": state.rates, "prices": state.prices,
            "source_rates": [float(state.rates[list(g)].sum()) for g in net.sources]}


def _run_fluid(cfg: ExperimentConfig, out: Path, prefix: str) -> dict:
    net, algs, sec = cfg.network, cfg.algorithms, cfg.section
    init = default_initial(net)
    run = FluidRunConfig(float(sec["t_end"]), init, float(sec["dt"]), sec["method"], int(sec["record_every"]))
    try:
        eq = settle(net, algs, t_end=cfg.tolerances["settle_time"])
        tr = integrate(net, algs, run, equilibrium=eq.state if eq.converged else None, residuals=True)
    except FluidDivergence as e:
        raise NumericalFailure(str(e), {"mode": "fluid", "failure": "divergence", "t": e.t}) from None
    tr.to_csv(out / f"{prefix}_fluid.csv")
    res = float(tr.residuals[-1])
    out_sum = {"mode": "fluid", "final": _state_dict(net, tr.final), "terminal_residual": res,
               "equilibrium": _state_dict(net, eq.state), "equilibrium_residual": eq.residual}
    if tr.lyapunov is not None:
        out_sum["lyapunov_max_increase"] = float(np.max(np.diff(tr.lyapunov), initial=0.0))
    if not res <= cfg.tolerances["equilibrium_residual"]:
        raise NumericalFailure(f"terminal residual {res:.3g} above tolerance",
                               {**out_sum, "failure": "non-convergence"})
    return out_sum


def _run_equilibrium(cfg: ExperimentConfig, out: Path, prefix: str) -> dict:
    net, algs = cfg.network, cfg.algorithms
    eq = settle(net, algs, t_end=cfg.tolerances["settle_time"])
    tol = cfg.tolerances["equilibrium_residual"]
    diag = {"mode": "equilibrium", "state": _state_dict(net, eq.state), "residual": eq.residual,
            **eq.diagnostics}
    if not eq.residual <= tol:
        raise NumericalFailure(f"equilibrium residual {eq.residual:.3g} above {tol:g}",
                               {**diag, "failure": "non-convergence"})
    out_sum = {**diag, "active_links": eq.active_links}
    try:
        spec = linearization(net, algs, eq.state, max_residual=tol)
        out_sum["linearization"] = {"eigenvalues": spec.eigenvalues,
                                    "spectral_abscissa": spec.spectral_abscissa,
                                    "lambda_bar": spec.lambda_bar, "rayleigh_gap": spec.rayleigh_gap}
    except (AnalysisError, np.linalg.LinAlgError) as e:
        out_sum["linearization"] = {"error": str(e)}
    with open(out / f"{prefix}_equilibrium.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "index", "source", "value"])
        for r, x in enumerate(eq.state.rates):
            w.writerow(["rate", r, net.routes[r].source, repr(float(x))])
        for l, p in enumerate(eq.state.prices):
            w.writerow(["price", l, "", repr(float(p))])
    return out_sum


def _run_packet(cfg: ExperimentConfig, out: Path, prefix: str) -> dict:
    net, sec = cfg.network, cfg.section
    tr = run_packet_sim(net, cfg.algorithms, cfg.schedule, float(sec["horizon"]), cfg.seed,
                        float(sec["sample_dt"]), float(sec["start_jitter"]), float(sec["ack_jitter"]))
    tr.to_csv(out / f"{prefix}_packet.csv")
    t0, t1 = float(tr.times[0]), float(tr.times[-1])
    thr = [friendliness_split(tr, f, [], (t0, t1))[0] for f in range(net.n_sources)]
    return summary(tr, mode="packet", throughput=thr, throughput_window=(t0, t1),
                   algorithms=[a.label for a in cfg.algorithms])


def _run_analyze(cfg: ExperimentConfig, out: Path, prefix: str) -> dict:
    rows = {}
    for alg in cfg.algorithms:
        reps = table_one(alg, n=int(cfg.section["samples"]), seed=cfg.seed)
        rows[alg.label] = {k: {"verdict": r.verdict, "samples": r.samples, "worst_witness": r.worst_witness}
                           for k, r in reps.items()}
    with open(out / f"{prefix}_analyze.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        keys = list(next(iter(rows.values())))
        w.writerow(["algorithm"] + keys)
        for label, r in rows.items():
            w.writerow([label] + [r[k]["verdict"] for k in keys])
    return {"mode": "analyze", "seed": cfg.seed, "verdicts": {a: {k: v["verdict"] for k, v in r.items()}
                                                              for a, r in rows.items()},
            "details": rows}


def _run_friendliness(cfg: ExperimentConfig, out: Path, prefix: str) -> dict:
    sec = cfg.section
    rows = []
    for alg in cfg.algorithms:
        try:
            r = solve_test_network(alg, sec["rtts_mp"], float(sec["rtt_sp"]), float(sec["capacity"]))
        except SolverError as e:
            raise NumericalFailure(str(e), {"mode": "friendliness", "algorithm": alg.label,
                                            "failure": "non-convergence"}) from None
        rows.append(r)
    ordered = sorted(rows, key=lambda r: -r.mp_throughput)
    with open(out / f"{prefix}_friendliness.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "mp_throughput", "sp_throughput", "bottleneck_price"])
        for r in rows:
            w.writerow([r.algorithm, repr(r.mp_throughput), repr(r.sp_throughput), repr(r.bottleneck_price)])
    return {"mode": "friendliness", "capacity": sec["capacity"], "rows": rows,
            "ordering": [r.algorithm for r in ordered]}


RUNNERS = {"fluid": _run_fluid, "packet": _run_packet, "analyze": _run_analyze,
           "equilibrium": _run_equilibrium, "friendliness": _run_friendliness}


# --------------------------------------------------------------- commands

def _outdir(args, cfg_dir: str) -> Path:
    out = Path(args.out if args.out is not None else cfg_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _outdir(args, cfg.outputs["dir"])
    prefix = cfg.outputs["prefix"]
    log.info("running mode=%s seed=%d into %s", cfg.mode, cfg.seed, out)
    try:
        result = RUNNERS[cfg.mode](cfg, out, prefix)
    except NumericalFailure as e:
        dump_json({"error": str(e), **e.diagnostic}, out / "diagnostic.json")
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    dump_json({"config": cfg.raw, "seed": cfg.seed, "result": result}, out / f"{prefix}_summary.json")
    print(out / f"{prefix}_summary.json")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"ok: mode={cfg.mode}")
    return 0


def cmd_list(args) -> int:
    for name, desc in EXPERIMENTS.items():
        print(f"{name}\t{desc}")
    return 0


def cmd_reproduce(args) -> int:
    if args.name not in EXPERIMENTS:
        print(f"unknown experiment {args.name!r}; try list-experiments", file=sys.stderr)
        return 2
    seeds = tuple(range(args.seed, args.seed + args.seeds))
    rep = reproduce(args.name, seeds, jobs=args.jobs)
    out = _outdir(args, "out")
    dump_json(rep, out / f"{args.name}.json")
    runs = rep["runs"]
    with open(out / f"{args.name}_runs.csv", "w", newline="") as fh:
        keys = [k for k, v in runs[0].items() if np.ndim(v) == 0]
        w = csv.writer(fh)
        w.writerow(keys)
        for r in runs:
            w.writerow([jsonable(r[k]) for k in keys])
    print(f"{args.name}: paper ordering '{rep['paper_ordering']}'")
    for k, ok in rep["checks"].items():
        print(f"  {'PASS' if ok else 'FAIL'} {k}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mptcplab", description=__doc__.splitlines()[0],
                                 epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one config file", epilog=CONFIG_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True, metavar="PATH")
    p.add_argument("--seed", type=int, default=None, metavar="N", help="override the config seed")
    p.add_argument("--out", default=None, metavar="DIR", help="output directory (default: outputs.dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a config file and exit", epilog=CONFIG_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True, metavar="PATH")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("list-experiments", help="list the built-in experiments")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("reproduce", help="run a built-in experiment and compare orderings",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("name", help="experiment name, see list-experiments")
    p.add_argument("--seed", type=int, default=0, metavar="N", help="first seed")
    p.add_argument("--seeds", type=int, default=3, metavar="K", help="number of consecutive seeds")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel worker processes")
    p.add_argument("--out", default="out", metavar="DIR")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("MPTCPLAB_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "jobs", 1) < 1 or getattr(args, "seeds", 1) < 1:
        print("--jobs and --seeds must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 2
    except (ScheduleError, NetworkError, AlgorithmError) as e:
        print(f"invalid config: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
