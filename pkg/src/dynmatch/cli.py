"""Scenario runner and command-line interface.

Commands: ``simulate`` (one config, N replications), ``sweep`` (one parameter
over a value list), ``bounds`` (batching bound curves), ``static`` (SMM/FWP
pool experiments), ``chain`` (stationary-distribution solves).  Scenarios are
TOML files; flags override file values.  Outputs are deterministic CSVs plus
a summary JSON; volatile metadata (timestamps, host info) goes to a separate
meta file so re-runs stay byte-identical.
"""

from __future__ import annotations

import argparse
import datetime
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import tomli

from . import __version__
from .compat import (
    CompatModel,
    HomogeneousModel,
    MatrixModel,
    TwoTypeModel,
    fwp,
    load_pool_matrix,
    sample_static_pool,
    smm,
)
from .errors import DynmatchError, InvalidConfig, InvalidParameter
from .sim import Batching, Greedy, Patient, Policy, SimConfig, policy_name, run_simulation
from .stats import Report, report_csv_header, report_csv_row, summarize
from .theory import (
    Predictions,
    any_policy_upper_bound,
    batching_bounds,
    bd_stationary_adaptive,
    ctmc_stationary_2d,
    greedy_ctmc,
    greedy_limits,
    ml_chain,
    mu_chain,
    patient_limits,
    small_lambda_limits,
)

_SWEEP_PARAMS = ("m", "lambda", "T")


@dataclass
class Scenario:
    m: float = 1.0
    lam: float = 0.5
    d: float = 200.0
    compat_kind: str = "two_type"
    p: float = 0.1
    q: float = 0.04
    pool_path: Optional[str] = None
    policy_kind: str = "greedy"
    T: Optional[float] = None
    horizon_arrivals: int = 70000
    warmup_agents: int = 5000
    capacity_kappa: Optional[float] = None
    seed: int = 1
    replications: int = 1
    sweep_parameter: Optional[str] = None
    sweep_values: tuple[float, ...] = ()
    prefix: str = "out/run"
    save_traces: bool = False

    def model(self) -> CompatModel:
        if self.compat_kind == "two_type":
            return TwoTypeModel(p=self.p, q=self.q)
        if self.compat_kind == "homogeneous":
            return HomogeneousModel(p=self.p)
        if self.compat_kind == "matrix":
            if not self.pool_path:
                raise InvalidConfig("matrix compat needs a pool file path")
            return load_pool_matrix(self.pool_path)
        raise InvalidConfig(f"unknown compat kind {self.compat_kind!r}")

    def policy(self, t_override: Optional[float] = None) -> Policy:
        if self.policy_kind == "greedy":
            return Greedy()
        if self.policy_kind == "patient":
            return Patient()
        if self.policy_kind == "batching":
            t = t_override if t_override is not None else self.T
            if t is None:
                raise InvalidConfig("batching policy needs a period T")
            return Batching(T=float(t))
        raise InvalidConfig(f"unknown policy kind {self.policy_kind!r}")

    def build_config(self, sweep_value: Optional[float], rep: int) -> SimConfig:
        m, lam, t_override = self.m, self.lam, None
        if self.sweep_parameter is not None and sweep_value is not None:
            if self.sweep_parameter == "m":
                m = sweep_value
            elif self.sweep_parameter == "lambda":
                lam = sweep_value
            elif self.sweep_parameter == "T":
                if self.policy_kind != "batching":
                    raise InvalidConfig("sweeping T requires the batching policy")
                t_override = sweep_value
        return SimConfig(
            m=m,
            lam=lam,
            d=self.d,
            model=self.model(),
            policy=self.policy(t_override),
            horizon_arrivals=self.horizon_arrivals,
            warmup_agents=self.warmup_agents,
            capacity_kappa=self.capacity_kappa,
            seed=self.seed + rep,
        )

    def validate(self) -> None:
        if self.replications < 1:
            raise InvalidConfig("replications must be >= 1")
        if self.sweep_parameter is not None:
            if self.sweep_parameter not in _SWEEP_PARAMS:
                raise InvalidConfig(
                    f"sweep parameter must be one of {_SWEEP_PARAMS}, "
                    f"got {self.sweep_parameter!r}"
                )
            if len(self.sweep_values) == 0:
                raise InvalidConfig("sweep value list is empty")
            for v in self.sweep_values:
                if self.sweep_parameter == "m" and not v > 0:
                    raise InvalidConfig(f"swept m must be positive, got {v}")
                if self.sweep_parameter == "lambda" and v < -1:
                    raise InvalidConfig(f"swept lambda must be >= -1, got {v}")
                if self.sweep_parameter == "T" and not v > 0:
                    raise InvalidConfig(f"swept T must be positive, got {v}")
        # construct once to surface config errors before any work happens
        self.build_config(
            self.sweep_values[0] if self.sweep_parameter else None, 0
        )


def _get(section: dict, key: str, typ, default):
    if key not in section:
        return default
    v = section[key]
    try:
        return typ(v)
    except (TypeError, ValueError):
        raise InvalidConfig(f"field {key!r}: cannot interpret {v!r}") from None


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except FileNotFoundError:
        raise InvalidConfig(f"scenario file not found: {path}")
    except tomli.TOMLDecodeError as exc:
        raise InvalidConfig(f"scenario parse error in {path}: {exc}")
    sc = Scenario()
    market = doc.get("market", {})
    sc.m = _get(market, "m", float, sc.m)
    sc.lam = _get(market, "lambda", float, sc.lam)
    sc.d = _get(market, "d", float, sc.d)
    compat = doc.get("compat", {})
    sc.compat_kind = _get(compat, "kind", str, sc.compat_kind)
    sc.p = _get(compat, "p", float, sc.p)
    sc.q = _get(compat, "q", float, sc.q)
    sc.pool_path = _get(compat, "path", str, sc.pool_path)
    pol = doc.get("policy", {})
    sc.policy_kind = _get(pol, "kind", str, sc.policy_kind)
    sc.T = _get(pol, "T", float, sc.T)
    run = doc.get("run", {})
    sc.horizon_arrivals = _get(run, "horizon_arrivals", int, sc.horizon_arrivals)
    sc.warmup_agents = _get(run, "warmup_agents", int, sc.warmup_agents)
    sc.capacity_kappa = _get(run, "capacity_kappa", float, sc.capacity_kappa)
    sc.seed = _get(run, "seed", int, sc.seed)
    sc.replications = _get(run, "replications", int, sc.replications)
    sweep = doc.get("sweep", {})
    if sweep:
        sc.sweep_parameter = _get(sweep, "parameter", str, None)
        vals = sweep.get("values", [])
        if not isinstance(vals, list):
            raise InvalidConfig("sweep values must be a list")
        sc.sweep_values = tuple(float(v) for v in vals)
    out = doc.get("output", {})
    sc.prefix = _get(out, "prefix", str, sc.prefix)
    sc.save_traces = bool(out.get("save_traces", sc.save_traces))
    return sc


def _predictions_for(config: SimConfig) -> Predictions:
    nan = float("nan")
    if isinstance(config.model, MatrixModel):
        return Predictions(nan, nan, nan, nan, None)
    lam, d = config.lam, config.d
    try:
        if isinstance(config.policy, Greedy):
            return greedy_limits(lam, d) if lam > 0 else _balanced_or_small(lam, d)
        if isinstance(config.policy, Patient):
            return patient_limits(lam, d) if lam > 0 else _balanced_or_small(lam, d)
        return batching_bounds(lam, d, config.policy.T)
    except InvalidParameter:
        return Predictions(nan, nan, nan, nan, None)


def _balanced_or_small(lam: float, d: float) -> Predictions:
    if lam < 0:
        return small_lambda_limits(lam, d)
    return Predictions(q_H=1.0, q_E=1.0, w_H=0.0, w_E=0.0, dist_rate_H=None)


_PRED_COLS = ["pred_q_H", "pred_q_E", "pred_w_H", "pred_w_E", "pred_rate_H"]


def _pred_row(pred: Predictions) -> list[str]:
    vals = [pred.q_H, pred.q_E, pred.w_H, pred.w_E]
    out = [repr(float(v)) for v in vals]
    out.append(repr(float(pred.dist_rate_H)) if pred.dist_rate_H is not None else "")
    return out


def _run_one(args: tuple[Scenario, Optional[float], int, bool]):
    scenario, value, rep, want_trace = args
    config = scenario.build_config(value, rep)
    trace = run_simulation(config)
    report = summarize(trace)
    return (value, rep, config.seed, report, trace if want_trace else None)


def run_scenario(scenario: Scenario, jobs: int = 0) -> int:
    """Execute all (sweep value, replication) runs and write output files."""
    scenario.validate()
    if jobs <= 0:
        jobs = os.cpu_count() or 1
    values: list[Optional[float]] = (
        list(scenario.sweep_values) if scenario.sweep_parameter else [None]
    )
    tasks = [
        (scenario, v, rep, scenario.save_traces)
        for v in values
        for rep in range(scenario.replications)
    ]
    if jobs == 1 or len(tasks) == 1:
        results = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks, chunksize=1))

    prefix = scenario.prefix
    parent = os.path.dirname(prefix)
    if parent:
        os.makedirs(parent, exist_ok=True)

    header = (
        ["sweep_parameter", "sweep_value", "replication", "seed", "policy"]
        + report_csv_header()
        + _PRED_COLS
    )
    rows_path = f"{prefix}_rows.csv"
    with open(rows_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for idx, (value, rep, seed, report, trace) in enumerate(results):
            config = scenario.build_config(value, rep)
            pred = _predictions_for(config)
            prefix_vals = [
                scenario.sweep_parameter or "",
                repr(float(value)) if value is not None else "",
                rep,
                seed,
                policy_name(config.policy),
            ]
            row = report_csv_row(report, prefix_vals) + _pred_row(pred)
            fh.write(",".join(row) + "\n")
            if trace is not None:
                vi = values.index(value)
                tag = f"v{vi}_r{rep}" if scenario.sweep_parameter else f"r{rep}"
                with open(
                    f"{prefix}_trace_{tag}.csv", "w", encoding="utf-8", newline="\n"
                ) as tfh:
                    trace.to_csv(tfh)

    summary = _summarize_groups(scenario, values, results)
    with open(f"{prefix}_summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")

    meta = {
        "version": __version__,
        "generated_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "jobs": jobs,
        "scenario": {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in vars(scenario).items()
        },
    }
    with open(f"{prefix}_meta.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"wrote {rows_path}", file=sys.stderr)
    return 0


_SUMMARY_METRICS = [
    "E_match_rate",
    "E_mean_waiting",
    "E_mean_matching_time",
    "H_match_rate",
    "H_mean_waiting",
    "H_mean_matching_time",
    "H_littles_error",
    "H_pool_mean",
]


def _summarize_groups(scenario, values, results) -> dict:
    out: dict = {"sweep_parameter": scenario.sweep_parameter, "groups": []}
    for v in values:
        group = [r for r in results if r[0] == v]
        entry: dict = {
            "sweep_value": v,
            "replications": len(group),
            "seeds": [seed for (_, _, seed, _, _) in group],
        }
        flat_all = [report.flat_dict() for (_, _, _, report, _) in group]
        for metric in _SUMMARY_METRICS:
            samples = [f[metric] for f in flat_all if metric in f]
            samples = [s for s in samples if not math.isnan(s)]
            if not samples:
                continue
            mean = sum(samples) / len(samples)
            if len(samples) > 1:
                var = sum((s - mean) ** 2 for s in samples) / (len(samples) - 1)
                se = math.sqrt(var / len(samples))
            else:
                se = 0.0
            entry[metric] = {"mean": mean, "se": se}
        config = scenario.build_config(v, 0)
        pred = _predictions_for(config)
        entry["predicted"] = {
            "q_H": pred.q_H,
            "q_E": pred.q_E,
            "w_H": pred.w_H,
            "w_E": pred.w_E,
            "rate_H": pred.dist_rate_H,
        }
        out["groups"].append(entry)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _apply_overrides(sc: Scenario, args: argparse.Namespace) -> Scenario:
    if args.m is not None:
        sc.m = args.m
    if getattr(args, "lam", None) is not None:
        sc.lam = args.lam
    if args.d is not None:
        sc.d = args.d
    if args.p is not None:
        sc.p = args.p
    if args.q is not None:
        sc.q = args.q
    if args.pool is not None:
        sc.pool_path = args.pool
        sc.compat_kind = "matrix"
    if args.policy is not None:
        sc.policy_kind = args.policy
    if args.T is not None:
        sc.T = args.T
    if args.arrivals is not None:
        sc.horizon_arrivals = args.arrivals
    if args.warmup is not None:
        sc.warmup_agents = args.warmup
    if args.kappa is not None:
        sc.capacity_kappa = args.kappa
    if args.seed is not None:
        sc.seed = args.seed
    if args.reps is not None:
        sc.replications = args.reps
    if args.out is not None:
        sc.prefix = args.out
    if args.save_traces:
        sc.save_traces = True
    return sc


def _add_sim_flags(sub: argparse.ArgumentParser, file_optional: bool) -> None:
    sub.add_argument("--scenario", help="scenario TOML file")
    sub.add_argument("--m", type=float, help="E arrival rate per day")
    sub.add_argument("--lambda", dest="lam", type=float, help="imbalance (H rate = (1+lambda)m)")
    sub.add_argument("--d", type=float, help="mean sojourn in days")
    sub.add_argument("--p", type=float, help="E-H compatibility probability")
    sub.add_argument("--q", type=float, help="E-E compatibility probability")
    sub.add_argument("--pool", help="matrix pool file (switches compat kind to matrix)")
    sub.add_argument("--policy", choices=["greedy", "patient", "batching"])
    sub.add_argument("--T", type=float, help="batching period in days")
    sub.add_argument("--arrivals", type=int, help="horizon in arrivals")
    sub.add_argument("--warmup", type=int, help="warmup agents excluded from stats")
    sub.add_argument("--kappa", type=float, help="capacity multiplier (C = kappa * total rate)")
    sub.add_argument("--seed", type=int, help="base seed (replication r uses seed + r)")
    sub.add_argument("--reps", type=int, help="replication count")
    sub.add_argument("--out", help="output path prefix")
    sub.add_argument("--save-traces", action="store_true", help="write per-run trace CSVs")
    sub.add_argument("--jobs", type=int, default=0, help="parallel workers (0 = all cores)")


def _cmd_simulate(args: argparse.Namespace) -> int:
    if args.scenario:
        sc = load_scenario(args.scenario)
    else:
        missing = [
            flag
            for flag, val in (
                ("--seed", args.seed),
                ("--policy", args.policy),
                ("--reps", args.reps),
                ("--out", args.out),
            )
            if val is None
        ]
        if missing:
            raise InvalidConfig(
                f"without --scenario these flags are required: {', '.join(missing)}"
            )
        sc = Scenario()
    sc = _apply_overrides(sc, args)
    if sc.sweep_parameter is not None:
        raise InvalidConfig("scenario has a [sweep] section; use the sweep command")
    return run_scenario(sc, jobs=args.jobs)


def _cmd_sweep(args: argparse.Namespace) -> int:
    if not args.scenario:
        raise InvalidConfig("sweep requires --scenario with a [sweep] section")
    sc = load_scenario(args.scenario)
    sc = _apply_overrides(sc, args)
    if sc.sweep_parameter is None:
        raise InvalidConfig("scenario has no [sweep] section")
    return run_scenario(sc, jobs=args.jobs)


def _parse_grid(spec: str) -> list[float]:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise InvalidConfig(f"grid must be start:stop:count, got {spec!r}")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise InvalidConfig("grid count must be >= 1")
        return np.linspace(start, stop, count).tolist()
    return [float(tok) for tok in spec.split(",") if tok.strip()]


def _cmd_bounds(args: argparse.Namespace) -> int:
    ts = _parse_grid(args.t)
    if not ts:
        raise InvalidConfig("empty T grid")
    g = greedy_limits(args.lam, args.d)
    p = patient_limits(args.lam, args.d)
    lines = ["T,q_H_ub,q_E_ub,w_H_lb,w_E_lb,q_greedy,w_greedy,w_patient"]
    for t in ts:
        b = batching_bounds(args.lam, args.d, t)
        lines.append(
            f"{t!r},{b.q_H!r},{b.q_E!r},{b.w_H!r},{b.w_E!r},"
            f"{g.q_H!r},{g.w_H!r},{p.w_H!r}"
        )
    _emit(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_static(args: argparse.Namespace) -> int:
    sizes = [int(v) for v in _parse_grid(args.sizes)]
    if not sizes:
        raise InvalidConfig("empty size list")
    if args.pool:
        model: CompatModel = load_pool_matrix(args.pool)
    elif args.kind == "homogeneous":
        model = HomogeneousModel(p=args.p)
    else:
        model = TwoTypeModel(p=args.p, q=args.q)
    lines = ["m,lambda,seed,n,smm,fwp"]
    for size in sizes:
        for rep in range(args.seeds):
            seed = args.seed + rep
            g = sample_static_pool(size, args.lam, model, seed)
            lines.append(
                f"{size},{args.lam!r},{seed},{g.n},{smm(g)!r},{fwp(g)!r}"
            )
    _emit(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_chain(args: argparse.Namespace) -> int:
    if args.kind in ("ml", "mu"):
        if args.kind == "ml":
            chain = ml_chain(args.m, args.lam)
        else:
            chain = mu_chain(args.m, args.lam, args.p)
        st = bd_stationary_adaptive(chain)
        result = {
            "kind": args.kind,
            "m": args.m,
            "lambda": args.lam,
            "mean": st.mean(),
            "std": math.sqrt(st.variance()),
            "tail_mass_estimate": st.tail_mass_estimate,
            "support": [int(st.states[0]), int(st.states[-1])],
        }
        if args.kind == "mu":
            result["p"] = args.p
    else:
        sol = ctmc_stationary_2d(
            greedy_ctmc(args.m, args.lam, args.p, args.q, args.C)
        )
        mx, my = sol.mean_xy()
        result = {
            "kind": "greedy2d",
            "m": args.m,
            "lambda": args.lam,
            "p": args.p,
            "q": args.q,
            "C": args.C,
            "mean_h": mx,
            "mean_e": my,
            "residual_inf": sol.residual_inf,
        }
    _emit(args.out, json.dumps(result, sort_keys=True, indent=2) + "\n")
    return 0


def _emit(out: Optional[str], text: str) -> None:
    if out:
        parent = os.path.dirname(out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynmatch",
        description="Dynamic two-type matching market simulator and analysis toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="run one configuration with replications")
    _add_sim_flags(sim, file_optional=True)
    sim.set_defaults(func=_cmd_simulate)

    sw = subs.add_parser("sweep", help="run a scenario file with a [sweep] section")
    _add_sim_flags(sw, file_optional=False)
    sw.set_defaults(func=_cmd_sweep)

    bd = subs.add_parser("bounds", help="emit batching bound curves as CSV")
    bd.add_argument("--lambda", dest="lam", type=float, required=True)
    bd.add_argument("--d", type=float, required=True)
    bd.add_argument("--t", required=True, help="T grid: start:stop:count or comma list")
    bd.add_argument("--out", help="output CSV path (default stdout)")
    bd.set_defaults(func=_cmd_bounds)

    st = subs.add_parser("static", help="SMM/FWP experiments on static pools")
    st.add_argument("--kind", choices=["two_type", "homogeneous"], default="two_type")
    st.add_argument("--sizes", required=True, help="pool sizes m: comma list or grid")
    st.add_argument("--lambda", dest="lam", type=float, default=1.0)
    st.add_argument("--p", type=float, default=0.1)
    st.add_argument("--q", type=float, default=0.04)
    st.add_argument("--pool", help="matrix pool file")
    st.add_argument("--seeds", type=int, default=10)
    st.add_argument("--seed", type=int, default=1, help="base seed")
    st.add_argument("--out", help="output CSV path (default stdout)")
    st.set_defaults(func=_cmd_static)

    ch = subs.add_parser("chain", help="stationary solves for the bounding chains")
    ch.add_argument("--kind", choices=["ml", "mu", "greedy2d"], required=True)
    ch.add_argument("--m", type=float, required=True)
    ch.add_argument("--lambda", dest="lam", type=float, required=True)
    ch.add_argument("--p", type=float, default=0.1)
    ch.add_argument("--q", type=float, default=0.04)
    ch.add_argument("--C", type=int, default=20)
    ch.add_argument("--out", help="output JSON path (default stdout)")
    ch.set_defaults(func=_cmd_chain)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidConfig, InvalidParameter) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DynmatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
