"""Command-line driver.

Exit status is 0 on success, 2 when the bounds cannot be met
(``TaskInfeasible`` / ``SafetyUnsatisfiable``) and 1 for input or
validation errors.  Failures print one line ``ERROR <code>: <message>``
to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .automata import (all_lassos, dra_accepts_lasso, dra_intersection, parse_hoa, parse_template,
                       random_lasso, serialize_hoa, template_dra)
from .errors import SafeReturnError, SafetyUnsatisfiable, TaskInfeasible
from .execution import ComparisonTable, SimConfig, execute, parse_request
from .ltl import ltl_eval_lasso, parse_ltl
from .model import load_mdp, save_mdp, validate_mdp
from .planner import PlanConfig, load_plan, plan as make_plan, save_plan
from .workspace import GridSpec, TerrainSpec, load_map, spec_to_mdp

THREADS_ENV = "SAFERETURN_THREADS"
INFEASIBLE = (TaskInfeasible, SafetyUnsatisfiable)


class CliError(Exception):
    def __init__(self, code: str, msg: str, status: int = 1):
        super().__init__(msg)
        self.code, self.status = code, status


def _read_model(path):
    p = Path(path)
    if p.suffix == ".map":
        return spec_to_mdp(load_map(p))
    return load_mdp(p)


def _read_automaton(text: str):
    """HOA file path, or template syntax; ``a & b`` intersects templates."""
    p = Path(text)
    if p.suffix in (".hoa", ".txt") or p.is_file():
        return parse_hoa(p.read_text())
    parts = [t for t in text.split("&") if t.strip()]
    dras = [template_dra(parse_template(t)) for t in parts]
    out = dras[0]
    for d in dras[1:]:
        out = dra_intersection(out, d)
    return out


def _write(path, text: str) -> None:
    Path(path).write_text(text)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise CliError("BadEnvironment", f"{THREADS_ENV} must be an integer") from None


def _sim_config(args, traces=False) -> SimConfig:
    return SimConfig(rng_seed=args.seed, horizon=args.horizon, request_law=parse_request(args.request),
                     num_runs=args.runs, record_traces=traces, early_stop=getattr(args, "early_stop", False))


# ---------------------------------------------------------------- commands


def cmd_build(args, want) -> int:
    spec = load_map(args.map)
    if want is TerrainSpec and not isinstance(spec, TerrainSpec):
        raise CliError("InvalidTerrain", f"{args.map} has no [terrain] section")
    if want is GridSpec and isinstance(spec, TerrainSpec):
        raise CliError("InvalidGrid", f"{args.map} is a terrain map; use build-terrain")
    m = spec_to_mdp(spec)
    rep = validate_mdp(m)
    if not rep.ok:
        raise CliError("InvalidModel", "; ".join(rep.violations))
    save_mdp(m, args.output)
    print(f"{m.n_states} states, {m.n_rows} state-action pairs -> {args.output}")
    return 0


def _certify(d, text: str, n_random: int = 2000) -> None:
    """Lasso-oracle check of ``d`` against an LTL formula."""
    f = parse_ltl(text)
    ap = sorted(set(d.ap) | f.props())
    rng = np.random.default_rng(0)
    words = list(all_lassos(ap, 2, 2)) if len(ap) <= 3 else []
    words += [random_lasso(rng, ap) for _ in range(n_random)]
    for w in words:
        if dra_accepts_lasso(d, w) != ltl_eval_lasso(f, w):
            raise CliError("LanguageMismatch", f"automaton and formula disagree on {w}")


def cmd_automaton(args) -> int:
    d = _read_automaton(args.spec)
    if args.ltl:
        _certify(d, args.ltl)
    text = serialize_hoa(d, args.name or "")
    if args.output:
        _write(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_plan(args) -> int:
    m = _read_model(args.model)
    cfg = PlanConfig(args.chi_o, args.chi_r, args.safety_mode, args.epsilon, args.seed)
    pl = make_plan(m, _read_automaton(args.task), _read_automaton(args.ret), cfg, args.method)
    save_plan(pl, args.output)
    if args.dump_product:
        doc = pl.task_product.to_json()
        doc["amec"] = [{"states": c.states.tolist(), "witness_pair": int(c.pair)} for c in pl.task_amec.components]
        _write(args.dump_product, json.dumps(doc, indent=1) + "\n")
    if args.dump_lp:
        lp = pl.outbound.prefix.lp
        if lp is None:
            raise CliError("NoPrefixLp", "the initial state already lies in the accepting set")
        _write(args.dump_lp, lp.to_mps())
    print(f"{pl.method} plan: task product {pl.task_product.n_states} states, "
          f"plan cost {pl.outbound.plan_cost:.6g} -> {args.output}")
    return 0


def cmd_simulate(args) -> int:
    m = _read_model(args.model)
    pl = load_plan(args.plan, m)
    rep = execute(m, pl, _sim_config(args, bool(args.traces)), _threads(args))
    stem = str(args.output)
    _write(stem + ".json", rep.to_json())
    _write(stem + ".csv", rep.to_csv())
    if args.traces:
        _write(stem + "_traces.csv", rep.traces_csv())
    if not args.no_figures:
        from .plotting import report_figures

        report_figures(rep, stem, m)
    print(json.dumps(rep.summary(), sort_keys=True))
    return 0


def _plan_values(pl):
    return pl.v_ext.values if pl.method == "hier" else pl.return_value


def cmd_heatmap(args) -> int:
    m = _read_model(args.model)
    pl = load_plan(args.plan, m)
    vals = _plan_values(pl)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state_index", "x", "y", "value"])
    for i in range(m.n_states):
        x, y = m.coords[i] if m.coords is not None else (i, 0)
        w.writerow([i, x, y, repr(float(vals[i]))])
    _write(args.output, buf.getvalue())
    if not args.no_figures and m.coords is not None:
        from .plotting import value_heatmap

        value_heatmap(m, vals, Path(args.output).with_suffix(".png"), f"return value ({pl.method})")
    return 0


def cmd_compare(args) -> int:
    dra_o, dra_r = _read_automaton(args.task), _read_automaton(args.ret)
    cfg_sim = _sim_config(args)
    rows = []
    for mpath in args.model:
        m = _read_model(mpath)
        for method in args.method:
            for chi_o in args.chi_o:
                for chi_r in args.chi_r:
                    name = f"{Path(mpath).stem}:o={chi_o:g}:r={chi_r:g}"
                    try:
                        pl = make_plan(m, dra_o, dra_r, PlanConfig(chi_o, chi_r, args.safety_mode), method)
                    except INFEASIBLE:
                        rows.append((name, method, None, None, None, None, None, None))
                        continue
                    rep = execute(m, pl, cfg_sim, _threads(args))
                    rows.append((name, method, rep.sat_rate, rep.safe_rate, rep.trapped_rate, rep.mean_cost,
                                 rep.mean_suffix_cost, None))
    table = ComparisonTable(rows)
    sys.stdout.write(table.to_text())
    if args.output:
        _write(args.output, table.to_csv())
        if not args.no_figures:
            from .plotting import comparison_figure

            comparison_figure(table, Path(args.output).with_suffix(".png"))
    return 0


# ---------------------------------------------------------------- parser


def _sim_args(p):
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--request", default="none", help="geometric:RATE | fixed:T | uniform:A,B | none")
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--early-stop", action="store_true", help="end runs once nothing observable can change")
    p.add_argument("--no-figures", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safereturn", description="LTL planning with probabilistic safe return.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--threads", type=int, default=None,
                    help=f"worker processes for simulation (default ${THREADS_ENV} or 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, hlp in (("build-grid", "grid map -> model JSON"), ("build-terrain", "terrain map -> model JSON")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("map")
        p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("automaton", help="template or HOA file -> HOA")
    p.add_argument("spec", help="e.g. 'surveil(r1,r2)', 'safe_return(bs)', 'a & b', or a .hoa file")
    p.add_argument("--name", default="")
    p.add_argument("--ltl", help="certify the automaton against this LTL formula on lasso words")
    p.add_argument("-o", "--output")

    p = sub.add_parser("plan", help="model + task + return automata -> plan JSON")
    p.add_argument("--model", required=True, help="model JSON or .map file")
    p.add_argument("--task", required=True)
    p.add_argument("--return", dest="ret", required=True)
    p.add_argument("--method", choices=("baseline", "hier"), default="hier")
    p.add_argument("--chi-o", type=float, default=0.8)
    p.add_argument("--chi-r", type=float, default=0.9)
    p.add_argument("--safety-mode", choices=("cumulative", "statewise"), default="cumulative")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-product", help="write the task product and its accepting components as JSON")
    p.add_argument("--dump-lp", help="write the prefix LP in MPS format")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("simulate", help="Monte-Carlo report for a plan")
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--traces", action="store_true", help="also write per-step traces")
    p.add_argument("-o", "--output", required=True, help="output stem: STEM.json, STEM.csv, STEM_*.png")
    _sim_args(p)

    p = sub.add_parser("heatmap", help="plan return values -> CSV (and PNG)")
    p.add_argument("--model", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("compare", help="methods x bounds x models -> table")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--return", dest="ret", required=True)
    p.add_argument("--method", nargs="+", choices=("baseline", "hier"), default=["baseline", "hier"])
    p.add_argument("--chi-o", type=float, nargs="+", default=[0.8])
    p.add_argument("--chi-r", type=float, nargs="+", default=[0.9])
    p.add_argument("--safety-mode", choices=("cumulative", "statewise"), default="cumulative")
    p.add_argument("-o", "--output")
    _sim_args(p)
    return ap


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "build-grid":
        return cmd_build(args, GridSpec)
    if cmd == "build-terrain":
        return cmd_build(args, TerrainSpec)
    return {"automaton": cmd_automaton, "plan": cmd_plan, "simulate": cmd_simulate,
            "heatmap": cmd_heatmap, "compare": cmd_compare}[cmd](args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except INFEASIBLE as exc:
        bound = getattr(exc, "bound", None)
        extra = f" [bound {bound}]" if bound and bound not in str(exc) else ""
        code, msg, status = exc.code, f"{exc}{extra}", 2
    except SafeReturnError as exc:
        code, msg, status = exc.code, str(exc), 1
    except CliError as exc:
        code, msg, status = exc.code, str(exc), exc.status
    except (OSError, json.JSONDecodeError) as exc:
        code, msg, status = "IOError", str(exc), 1
    except (ValueError, KeyError) as exc:
        code, msg, status = "InvalidInput", str(exc), 1
    print(f"ERROR {code}: {' '.join(msg.split())}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
