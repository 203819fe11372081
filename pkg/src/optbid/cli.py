"""Command-line front end: ``optbid {solve,simulate,sweep,meanfield}``.

Exit codes:
  0  success
  2  configuration or validation error (the offending field is named)
  3  solver or simulation error
  4  Monte Carlo estimate more than ``--z-threshold`` standard errors from
     the analytic reference
  5  a sweep monotonicity verdict reports a violation
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional, Sequence

from . import analytic, montecarlo, solver
from .model import (
    Channel,
    Constant,
    IntensityProfile,
    ModelError,
    PolicyTable,
    Purchase,
    SocialDiscount,
    SocialPopulation,
    Subscription,
    channel_from_dict,
    channel_to_dict,
    estimate_to_dict,
    eta_from_dict,
    eta_to_dict,
    model_from_dict,
    model_to_dict,
    policy_from_rows,
    policy_rows,
    policy_to_dict,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_DRIFT = 4
EXIT_VERDICT = 5

FORMATS = ("csv", "json", "table")
POLICY_HEADER = ("p", "bid_T", "bid_NT", "v")


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class RunConfig:
    model: Any
    eta: IntensityProfile
    channel_T: Channel
    channel_NT: Optional[Channel] = None
    bid: Optional[float] = None
    policy_path: Optional[Path] = None
    sim: Optional[montecarlo.SimConfig] = None
    sweep_param: Optional[str] = None
    sweep_values: Optional[tuple[float, ...]] = None
    quad_n: int = 10**6
    meanfield_M: Optional[tuple[int, ...]] = None
    out_path: Optional[Path] = None
    out_format: str = "table"


# --------------------------------------------------------------------------
# config loading

_ETA_FIELDS = {"eta_I", "eta_T", "eta_NT", "eta_S"}


def _as_int(value: Any, field: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(field, f"expected an integer, got {value!r}")
    if int(value) < minimum:
        raise ConfigError(field, f"must be >= {minimum}, got {value!r}")
    return int(value)


def _section(data: dict, key: str) -> Optional[dict]:
    val = data.get(key)
    if val is not None and not isinstance(val, dict):
        raise ConfigError(key, "expected an object")
    return val


def parse_config(data: Any, base: Path = Path(".")) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a JSON object")
    known = {"model", "eta", "channel_T", "channel_NT", "bid", "policy", "sim", "sweep",
             "meanfield", "output"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(unknown[0], "unknown field")
    try:
        if "model" not in data:
            raise ConfigError("model", "missing")
        spec = model_from_dict(data["model"], "model")
        if "eta" not in data:
            raise ConfigError("eta", "missing")
        eta = eta_from_dict(data["eta"], "eta")
        if "channel_T" not in data:
            raise ConfigError("channel_T", "missing")
        chT = channel_from_dict(data["channel_T"], "channel_T")
        chNT = None
        if data.get("channel_NT") is not None:
            chNT = channel_from_dict(data["channel_NT"], "channel_NT")
    except ModelError as exc:
        raise ConfigError(exc.field, str(exc).split(": ", 1)[-1]) from None
    population = isinstance(spec, SocialPopulation)
    if population and eta.eta_NT > 0 and chNT is None:
        raise ConfigError("channel_NT", "required when eta_NT > 0")
    if chNT is not None and not (population and eta.eta_NT > 0):
        raise ConfigError("channel_NT", "only allowed for a population model with eta_NT > 0")
    if population and eta.eta_I <= 0:
        raise ConfigError("eta.eta_I", "population model requires eta_I > 0")
    if isinstance(spec, SocialDiscount) and eta.eta_I + spec.rho <= 0:
        raise ConfigError("eta.eta_I", "eta_I + rho must be > 0")

    bid = data.get("bid")
    if bid is not None:
        if isinstance(bid, bool) or not isinstance(bid, (int, float)) or not math.isfinite(bid) or bid < 0:
            raise ConfigError("bid", f"must be a nonnegative number, got {bid!r}")
        bid = float(bid)
    policy_path = data.get("policy")
    if policy_path is not None:
        if not isinstance(policy_path, str):
            raise ConfigError("policy", "expected a path string")
        policy_path = base / policy_path

    sim = None
    sim_data = _section(data, "sim")
    if sim_data is not None:
        unknown = sorted(set(sim_data) - {"paths", "seed", "max_events_per_path", "workers", "block_size"})
        if unknown:
            raise ConfigError(f"sim.{unknown[0]}", "unknown field")
        kwargs = {}
        for name in ("paths", "max_events_per_path", "workers", "block_size"):
            if name in sim_data:
                kwargs[name] = _as_int(sim_data[name], f"sim.{name}")
        if "paths" not in kwargs:
            raise ConfigError("sim.paths", "missing")
        if "seed" in sim_data:
            seed = _as_int(sim_data["seed"], "sim.seed", minimum=0)
            if seed >= 2**64:
                raise ConfigError("sim.seed", "must fit in 64 bits")
            kwargs["seed"] = seed
        sim = montecarlo.SimConfig(**kwargs)

    sweep_param = sweep_values = None
    sweep = _section(data, "sweep")
    if sweep is not None:
        sweep_param = sweep.get("param")
        allowed = _ETA_FIELDS | ({"K", "M"} if population else {"K", "rho"})
        if sweep_param not in allowed:
            raise ConfigError("sweep.param", f"must name a numeric field, one of {sorted(allowed)}")
        values = sweep.get("values")
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep.values", "must be a nonempty list")
        for i, v in enumerate(values):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"sweep.values[{i}]", f"expected a number, got {v!r}")
        sweep_values = tuple(float(v) for v in values)

    quad_n, ms = 10**6, None
    mf = _section(data, "meanfield")
    if mf is not None:
        quad_n = _as_int(mf.get("quad_n", 10**6), "meanfield.quad_n", minimum=2)
        raw = mf.get("M")
        if not isinstance(raw, list) or not raw:
            raise ConfigError("meanfield.M", "must be a nonempty list")
        ms = tuple(_as_int(m, f"meanfield.M[{i}]") for i, m in enumerate(raw))

    out_path, out_format = None, "table"
    out = _section(data, "output")
    if out is not None:
        if out.get("path") is not None:
            out_path = base / str(out["path"])
        out_format = out.get("format", "table")
        if out_format not in FORMATS:
            raise ConfigError("output.format", f"must be one of {FORMATS}")

    return RunConfig(spec, eta, chT, chNT, bid, policy_path, sim, sweep_param, sweep_values,
                     quad_n, ms, out_path, out_format)


def load_config(path: Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}", f"invalid JSON: {exc.msg}") from None
    return parse_config(data, Path(path).parent)


# --------------------------------------------------------------------------
# output


def fmt_float(x: float) -> str:
    return f"{x:.17g}"


def _cell(x: Any) -> str:
    if isinstance(x, float):
        return fmt_float(x)
    return str(x)


def render_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(x) for x in row])
    return buf.getvalue()


def render_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    cells = [list(header)] + [[f"{x:.6g}" if isinstance(x, float) else str(x) for x in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines) + "\n"


def render_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=True) + "\n"


def _emit(text: str, cfg: RunConfig) -> None:
    if cfg.out_path is None:
        sys.stdout.write(text)
    else:
        cfg.out_path.parent.mkdir(parents=True, exist_ok=True)
        cfg.out_path.write_text(text)


def _emit_tabular(cfg: RunConfig, doc: dict, header, rows, notes: Sequence[str] = ()) -> None:
    if cfg.out_format == "json":
        _emit(render_json(doc), cfg)
    elif cfg.out_format == "csv":
        _emit(render_csv(header, rows), cfg)
    else:
        _emit(render_table(header, rows) + "".join(n + "\n" for n in notes), cfg)
    if cfg.out_path is not None or cfg.out_format == "csv":
        for n in notes:
            print(n, file=sys.stderr if cfg.out_path is None else sys.stdout)


# --------------------------------------------------------------------------
# commands


def _is_population(cfg: RunConfig) -> bool:
    return isinstance(cfg.model, SocialPopulation)


def _solve(spec, eta, chT, chNT, schedule: str = "dichotomy") -> solver.SolveReport:
    if isinstance(spec, Purchase):
        return solver.solve_purchase(spec, eta, chT)
    if isinstance(spec, Subscription):
        return solver.solve_subscription(spec, eta, chT)
    if isinstance(spec, SocialDiscount):
        return solver.solve_social_discount(spec, eta, chT)
    return solver.solve_social_population(spec, eta, chT, chNT, schedule=schedule)


def _value_at_bid(spec, eta, ch, bid: float) -> float:
    if isinstance(spec, Purchase):
        return analytic.value_purchase(spec, eta, ch, bid)
    if isinstance(spec, Subscription):
        return analytic.value_subscription(spec, eta, ch, bid)
    return analytic.value_social_discount(spec, eta, ch, bid)


def _inputs_doc(cfg: RunConfig) -> dict:
    doc = {"model": model_to_dict(cfg.model), "eta": eta_to_dict(cfg.eta),
           "channel_T": channel_to_dict(cfg.channel_T)}
    if cfg.channel_NT is not None:
        doc["channel_NT"] = channel_to_dict(cfg.channel_NT)
    return doc


def cmd_solve(cfg: RunConfig, args) -> int:
    report = _solve(cfg.model, cfg.eta, cfg.channel_T, cfg.channel_NT, args.schedule)
    doc = {"command": "solve", **_inputs_doc(cfg), "optimal_value": report.optimal_value,
           "method": report.method.value, "evaluations": report.evaluations}
    if report.policy is not None:
        doc["policy"] = policy_to_dict(report.policy)
        header, rows = POLICY_HEADER, policy_rows(report.policy)
        notes = [f"total {fmt_float(report.optimal_value)}"]
    else:
        doc["bid_min"] = report.bid_min
        header = ("value", "bid_min", "method", "evaluations")
        rows = [(report.optimal_value, report.bid_min, report.method.value, report.evaluations)]
        notes = []
    _emit_tabular(cfg, doc, header, rows, notes)
    return EXIT_OK


def read_policy_csv(path: Path) -> PolicyTable:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("policy", f"cannot read {path}: {exc.strerror}") from None
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != POLICY_HEADER:
        raise ConfigError("policy", f"header must be {','.join(POLICY_HEADER)}")
    rows = []
    for i, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            rows.append(tuple(float(x) for x in row))
        except ValueError:
            raise ConfigError(f"policy:{i}", "non-numeric cell") from None
        if len(rows[-1]) != 4:
            raise ConfigError(f"policy:{i}", "expected 4 columns")
    try:
        return policy_from_rows(rows)
    except ModelError as exc:
        raise ConfigError(exc.field, str(exc).split(": ", 1)[-1]) from None


def cmd_simulate(cfg: RunConfig, args) -> int:
    if cfg.sim is None:
        raise ConfigError("sim", "missing")
    spec, eta, chT, chNT = cfg.model, cfg.eta, cfg.channel_T, cfg.channel_NT
    doc = {"command": "simulate", **_inputs_doc(cfg), "paths": cfg.sim.paths, "seed": cfg.sim.seed}
    log = montecarlo.EventLog() if args.events is not None else None
    if _is_population(cfg):
        optimal = _solve(spec, eta, chT, chNT)
        if cfg.policy_path is not None:
            policy = read_policy_csv(cfg.policy_path)
            if policy.M != spec.M:
                raise ConfigError("policy", f"has {policy.M} rows, model M is {spec.M}")
        else:
            policy = optimal.policy
        reference = analytic.value_population(spec.K, eta, chT, chNT, policy)
        est = montecarlo.simulate_population(spec, eta, chT, chNT, policy, cfg.sim,
                                             literal_danger=args.literal_danger, log=log)
        doc["policy"] = policy_to_dict(policy)
        doc["optimal_value"] = optimal.optimal_value
    else:
        bid = cfg.bid
        if bid is None:
            bid = _solve(spec, eta, chT, chNT).bid_min
        reference = _value_at_bid(spec, eta, chT, bid)
        est = montecarlo.simulate_individual(spec, eta, chT, bid, cfg.sim,
                                             accrual=args.accrual, log=log)
        doc["bid"] = bid
    if log is not None:
        with open(args.events, "w") as fh:
            log.write(fh)
    z = est.z_score(reference)
    doc.update({"estimate": estimate_to_dict(est), "reference": reference, "z": z})
    header = ("mean", "std_error", "paths", "reference", "z")
    rows = [(est.mean, est.std_error, est.paths, reference, z)]
    if "optimal_value" in doc:
        header += ("optimal",)
        rows = [rows[0] + (doc["optimal_value"],)]
    _emit_tabular(cfg, doc, header, rows)
    if abs(z) > args.z_threshold:
        print(f"error: |z| = {abs(z):.3g} exceeds {args.z_threshold}", file=sys.stderr)
        return EXIT_DRIFT
    return EXIT_OK


def _with_param(cfg: RunConfig, name: str, value: float):
    spec, eta = cfg.model, cfg.eta
    if name in _ETA_FIELDS:
        return spec, eta.replace(**{name: value})
    if name == "M":
        return replace(spec, M=_as_int(value, "sweep.values")), eta
    return replace(spec, **{name: value}), eta


# monotone direction of (V, bid_min) claimed for each swept parameter
_INDIVIDUAL_CLAIMS = {
    Purchase: {"eta_I": (1, -1), "eta_T": (1, -1), "rho": (-1, 1)},
    Subscription: {"eta_I": (1, -1), "eta_T": (1, -1), "rho": (-1, 1)},
    SocialDiscount: {"eta_I": (-1, -1), "eta_T": (-1, -1), "rho": (-1, -1)},
}

_WORD = {1: "non-decreasing", -1: "non-increasing"}
VERDICT_TOL = 1e-12


def monotone(xs: Sequence[float], direction: int, tol: float = VERDICT_TOL) -> bool:
    return all(direction * (b - a) >= -tol * max(1.0, abs(a)) for a, b in zip(xs, xs[1:]))


def _verdict(claim: str, ok: bool) -> tuple[str, bool]:
    return f"verdict: {claim}: {'ok' if ok else 'VIOLATION'}", ok


def sweep_verdicts(model_type, param: str, values, results, eta_rows) -> list[tuple[str, bool]]:
    """Monotonicity verdicts for a completed sweep (rows sorted by value)."""
    out = []
    ok_rows = [(v, r, e) for v, r, e in zip(values, results, eta_rows) if r is not None]
    ok_rows.sort(key=lambda x: x[0])
    if model_type is SocialPopulation:
        if param in _ETA_FIELDS:
            vs = [r.policy.values for _, r, _ in ok_rows]
            ok = all(monotone([row[k] for row in vs], -1) for k in range(len(vs[0]))) if vs else True
            out.append(_verdict(f"v(p) non-increasing in {param}", ok))
        for value, r, eta in ok_rows:
            pol = r.policy
            out.append(_verdict(f"{param}={fmt_float(value)}: bid_NT non-increasing in p",
                                monotone(pol.bid_NT, -1)))
            if eta.eta_NT == 0:
                out.append(_verdict(f"{param}={fmt_float(value)}: bid_T non-increasing in p",
                                    monotone(pol.bid_T, -1)))
            if eta.eta_S == 0:
                out.append(_verdict(f"{param}={fmt_float(value)}: bid_T non-decreasing in p",
                                    monotone(pol.bid_T, 1)))
        return out
    claims = _INDIVIDUAL_CLAIMS.get(model_type, {}).get(param)
    if claims is None:
        return out
    dv, db = claims
    out.append(_verdict(f"V {_WORD[dv]} in {param}",
                        monotone([r.optimal_value for _, r, _ in ok_rows], dv)))
    out.append(_verdict(f"bid_min {_WORD[db]} in {param}",
                        monotone([r.bid_min for _, r, _ in ok_rows], db)))
    return out


def cmd_sweep(cfg: RunConfig, args) -> int:
    if cfg.sweep_values is None:
        raise ConfigError("sweep", "missing")
    population = _is_population(cfg)
    results, eta_rows, rows, docs = [], [], [], []
    failed = False
    for value in cfg.sweep_values:
        try:
            spec, eta = _with_param(cfg, cfg.sweep_param, value)
            rep = _solve(spec, eta, cfg.channel_T, cfg.channel_NT, args.schedule)
        except (ModelError, ValueError, ZeroDivisionError, solver.SolverError) as exc:
            failed = True
            results.append(None)
            eta_rows.append(None)
            rows.append((cfg.sweep_param, value, f"error: {exc}"))
            docs.append({"value": value, "status": "error", "error": str(exc)})
            continue
        results.append(rep)
        eta_rows.append(eta)
        row = (cfg.sweep_param, value, "ok", rep.optimal_value)
        entry = {"value": value, "status": "ok", "V": rep.optimal_value}
        if population:
            row += tuple(rep.policy.bid_T) + tuple(rep.policy.bid_NT)
            entry["policy"] = policy_to_dict(rep.policy)
        else:
            row += (rep.bid_min,)
            entry["bid_min"] = rep.bid_min
        rows.append(row)
        docs.append(entry)
    header = ["param", "value", "status", "V"]
    if population:
        widths = {len(r.policy.bid_T) for r in results if r is not None}
        n = max(widths) if widths else 0
        header += [f"bid_T[{k}]" for k in range(n)] + [f"bid_NT[{k}]" for k in range(n)]
    else:
        header.append("bid_min")
    verdicts = sweep_verdicts(type(cfg.model), cfg.sweep_param, cfg.sweep_values, results, eta_rows)
    doc = {"command": "sweep", **_inputs_doc(cfg), "param": cfg.sweep_param, "rows": docs,
           "verdicts": [{"claim": line, "ok": ok} for line, ok in verdicts]}
    _emit_tabular(cfg, doc, header, rows, [line for line, _ in verdicts])
    if failed:
        return EXIT_SOLVER
    if not all(ok for _, ok in verdicts):
        return EXIT_VERDICT
    return EXIT_OK


def _closed_form_applies(cfg: RunConfig) -> bool:
    return (cfg.eta.eta_NT == 0 and cfg.eta.eta_S > 0 and isinstance(cfg.channel_T.dist, Constant)
            and cfg.channel_T.dist.value > 0)


def cmd_meanfield(cfg: RunConfig, args) -> int:
    if not _is_population(cfg):
        raise ConfigError("model.kind", "meanfield requires a social_population model")
    if cfg.meanfield_M is None:
        raise ConfigError("meanfield", "missing")
    K, eta, chT, chNT = cfg.model.K, cfg.eta, cfg.channel_T, cfg.channel_NT
    integral = analytic.meanfield_value(eta, chT, chNT, K, cfg.quad_n)
    rows, docs = [], []
    for M in cfg.meanfield_M:
        rep = solver.solve_social_population(SocialPopulation(K, M), eta, chT, chNT)
        per = rep.optimal_value / M
        rows.append((M, per, integral, abs(per - integral)))
        docs.append({"M": M, "V_over_M": per, "integral": integral, "gap": abs(per - integral)})
    doc = {"command": "meanfield", **_inputs_doc(cfg), "quad_n": cfg.quad_n, "rows": docs}
    notes = []
    if _closed_form_applies(cfg):
        closed = analytic.meanfield_closed_form_targeted(eta, K, chT.dist.value)
        doc["closed_form"] = closed
        doc["closed_form_deviation"] = abs(closed - integral)
        notes.append(f"closed form {fmt_float(closed)}, deviation from quadrature "
                     f"{fmt_float(abs(closed - integral))}")
    _emit_tabular(cfg, doc, ("M", "V_over_M", "integral", "gap"), rows, notes)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "meanfield": cmd_meanfield}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optbid", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--out", type=Path, help="output file (default: stdout)")
        p.add_argument("--format", choices=FORMATS, help="output format")
        p.add_argument("--seed", type=int, help="override sim.seed")
        p.add_argument("--paths", type=int, help="override sim.paths")
        p.add_argument("--workers", type=int, help="override sim.workers")
        p.add_argument("--schedule", choices=("dichotomy", "naive"), default="dichotomy",
                       help="population row schedule")
        p.add_argument("--z-threshold", type=float, default=5.0,
                       help="exit 4 when |z| exceeds this (simulate)")
        p.add_argument("--accrual", action="store_true",
                       help="integrate discounted danger cost instead of simulating jumps")
        p.add_argument("--literal-danger", action="store_true",
                       help="simulate population danger jumps instead of accruing cost")
        p.add_argument("--events", type=Path,
                       help="write a tab-separated per-event log (simulate)")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.out is not None:
        cfg = replace(cfg, out_path=args.out)
    if args.format is not None:
        cfg = replace(cfg, out_format=args.format)
    overrides = {k: getattr(args, k) for k in ("seed", "paths", "workers")
                 if getattr(args, k) is not None}
    if overrides:
        if cfg.sim is None:
            if "paths" not in overrides:
                raise ConfigError("sim", "missing; --paths is required to create it")
            cfg = replace(cfg, sim=montecarlo.SimConfig(**overrides))
        else:
            try:
                cfg = replace(cfg, sim=replace(cfg.sim, **overrides))
            except ValueError as exc:
                raise ConfigError(f"--{str(exc).split(':')[0]}", str(exc).split(": ", 1)[-1]) from None
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (solver.SolverError, montecarlo.SimulationError, ZeroDivisionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
