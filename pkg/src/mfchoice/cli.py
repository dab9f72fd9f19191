"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 non-convergence or divergence,
4 enumeration cap exceeded. Output files are byte-stable for identical
inputs: JSON is written with sorted keys and CSV floats with 17
significant digits.
"""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import scenario as scenario_io
from .centralized import exact_social_optimum
from .errors import ConvergenceError, MFChoiceError, ScenarioError
from .meanfield import asymptotic_social_cost, check_assumptions, find_fixed_point
from .numerics import SampledPath
from .population import mean_path_residual, sample_population, simulate_decentralized
from .scenario import COOPERATIVE, NONCOOPERATIVE
from .uniform import solve_lambda_bisection

OUT_ENV = "MFCHOICE_OUT"
DEFAULT_OUT = "mfchoice-out"
TRAJECTORY_LIMIT = 1000
MODE_ALIASES = {
    "coop": COOPERATIVE,
    "cooperative": COOPERATIVE,
    "noncoop": NONCOOPERATIVE,
    "noncooperative": NONCOOPERATIVE,
}

log = logging.getLogger("mfchoice")


# -- emission -------------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_csv_matrix(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:]])


def out_dir(args):
    path = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    os.makedirs(path, exist_ok=True)
    return path


def path_rows(grid, values):
    return ([t, *v] for t, v in zip(grid.times, values))


def _trajectory_rows(grid, states, controls, choice):
    for k, t in enumerate(grid.times):
        for i in range(states.shape[1]):
            yield [t, i, *states[k, i], *controls[k, i], int(choice[i])]


def _trajectory_header(n, m):
    return ["t", "agent", *[f"x{i + 1}" for i in range(n)], *[f"u{i + 1}" for i in range(m)], "choice"]


# -- commands -----------------------------------------------------------------------

def cmd_check(args):
    sc = scenario_io.load(args.scenario)
    report = check_assumptions(sc, k3_points=args.k3_points)
    print(f"k1 = {report['k1']:.6g}")
    print(f"k2 = {report['k2']:.6g}")
    print(f"k3 = {report['k3']:.6g}")
    verdict = "holds" if report["assumption1_holds"] else "fails (solver proceeds anyway)"
    print(f"Assumption 1: sqrt(max(k1 + k2, k3)) T = {report['assumption1_lhs']:.6g} "
          f"vs pi/2 = {report['assumption1_rhs']:.6g} -> {verdict}")
    eigs = ", ".join(f"{e:.6g}" for e in report["L_eigenvalues"])
    print(f"L eigenvalues ({report['mode']}): {eigs}")
    print(f"Assumption 2 (L >= 0): {'holds' if report['assumption2_holds'] else 'fails'}")
    print(f"E|x0|^2 = {report['second_moment']:.6g}")
    write_json(os.path.join(out_dir(args), "check.json"), report)
    return 0


def _write_solution(out, sol, sc, extra):
    grid = sol.grid
    header = ["t", *[f"x{i + 1}" for i in range(sc.n)]]
    write_csv(os.path.join(out, "xbar.csv"), header, path_rows(grid, sol.xbar.values))
    write_json(os.path.join(out, "basins.json"), sol.classifier.to_dict())
    write_json(os.path.join(out, "lambda.json"), {"fractions": sol.fractions, **extra})
    write_json(os.path.join(out, "cost.json"), {"asymptotic_per_agent_cost": asymptotic_social_cost(sol)})
    write_json(
        os.path.join(out, "solve.json"),
        {"residual": sol.residual, "iterations": sol.iterations, "history": sol.history, "mode": sol.mode},
    )


def cmd_solve_mf(args):
    sc = scenario_io.load(args.scenario)
    out = out_dir(args)
    extra = {}
    guess = None
    if args.uniform:
        res = solve_lambda_bisection(sc)
        extra = {
            "bisection_fractions": res.fractions,
            "bisection_residual": res.residual,
            "bisection_steps": res.steps,
            "bisection_flagged": res.flagged,
        }
        guess = res.mean_path(sc.destinations)
    try:
        sol = find_fixed_point(sc, initial_guess=guess)
    except ConvergenceError as exc:
        write_json(os.path.join(out, "solve.json"), {"error": str(exc), "history": exc.history})
        raise
    _write_solution(out, sol, sc, extra)
    print(f"fractions: {', '.join('%.6f' % f for f in sol.fractions)}")
    print(f"residual {sol.residual:.3e} after {sol.iterations} updates; output in {out}")
    return 0


def _load_agents(path, sc):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ScenarioError("agents", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError("agents", f"invalid JSON: {exc}") from None
    items = data.get("agents") if isinstance(data, dict) else data
    if not isinstance(items, list) or not items:
        raise ScenarioError("agents", "expected a non-empty list")
    agents = []
    for i, item in enumerate(items):
        if isinstance(item, dict):
            a, x0 = item.get("atom", 0), item.get("x0")
        else:
            a, x0 = 0, item
        if not isinstance(a, int) or not 0 <= a < len(sc.atoms):
            raise ScenarioError(f"agents[{i}].atom", f"must index one of {len(sc.atoms)} atoms")
        x = np.asarray(x0, dtype=float).reshape(-1) if x0 is not None else None
        if x is None or x.size != sc.n:
            raise ScenarioError(f"agents[{i}].x0", f"needs {sc.n} entries")
        agents.append((sc.atoms[a], x))
    return agents


def cmd_solve_exact(args):
    sc = scenario_io.load(args.scenario)
    agents = _load_agents(args.agents, sc)
    sol = exact_social_optimum(sc, agents, keep_table=args.table)
    out = out_dir(args)
    write_json(
        os.path.join(out, "exact.json"),
        {"assignment": list(sol.d), "cost": sol.cost, "per_agent_cost": sol.per_agent_cost, "N": len(agents)},
    )
    write_csv(
        os.path.join(out, "trajectories.csv"),
        _trajectory_header(sc.n, sc.m),
        _trajectory_rows(sol.states.grid, sol.states.values, sol.controls.values, sol.d),
    )
    if args.table:
        write_csv(
            os.path.join(out, "assignments.csv"),
            ["assignment", "cost"],
            ([" ".join(str(j) for j in d), c] for d, c in sol.costs.items()),
        )
    print(f"d* = {list(sol.d)}  J* = {sol.cost:.10g}")
    return 0


def _solve_for_simulation(args, sc):
    guess = None
    if args.from_dir:
        values = read_csv_matrix(os.path.join(args.from_dir, "xbar.csv"))
        if values.shape[0] != sc.steps + 1:
            raise ScenarioError("--from", f"xbar.csv has {values.shape[0]} rows, grid needs {sc.steps + 1}")
        guess = SampledPath(sc.grid, np.ascontiguousarray(values[:, 1:]))
    return find_fixed_point(sc, initial_guess=guess)


def cmd_simulate(args):
    sc = scenario_io.load(args.scenario)
    seed = sc.seed if args.seed is None else args.seed
    mf = _solve_for_simulation(args, sc)
    sample = sample_population(sc, args.N, seed)
    store = args.trajectories or args.N <= TRAJECTORY_LIMIT
    run = simulate_decentralized(sample, mf, store_paths=store)
    out = out_dir(args)
    if store:
        write_csv(
            os.path.join(out, "trajectories.csv"),
            _trajectory_header(sc.n, sc.m),
            _trajectory_rows(run.grid, run.states, run.controls, run.choice),
        )
    write_json(
        os.path.join(out, "summary.json"),
        {
            "N": sample.N,
            "seed": seed,
            "counts": run.counts,
            "fractions": run.fractions,
            "mean_field_fractions": mf.fractions,
            "social_cost": run.J_soc,
            "per_agent_cost": run.per_agent_cost,
            "mean_path_residual": mean_path_residual(run, mf),
            "sample": sample.summary(),
        },
    )
    print(f"fractions: {', '.join('%.4f' % f for f in run.fractions)}  per-agent cost {run.per_agent_cost:.6g}")
    return 0


def _parse_list(text, cast, what):
    try:
        return [cast(v.strip()) for v in text.split(",") if v.strip()]
    except (KeyError, ValueError):
        raise ScenarioError(what, f"cannot parse {text!r}") from None


def cmd_sweep(args):
    sc = scenario_io.load(args.scenario)
    values = _parse_list(args.values, float, "--values")
    modes = _parse_list(args.modes, lambda s: MODE_ALIASES[s.lower()], "--modes")
    if not values or not modes:
        raise ScenarioError("--values/--modes", "need at least one entry each")
    seed = sc.seed if args.seed is None else args.seed
    sample = sample_population(sc, args.N, seed)
    rows = []
    for value in values:
        for mode in modes:
            s2 = sc.with_(**{args.param: value, "mode": mode})
            mf = find_fixed_point(s2)
            run = simulate_decentralized(sample, mf, store_paths=False)
            rows.append([
                value, mode, *mf.fractions, *run.fractions, run.per_agent_cost,
                asymptotic_social_cost(mf), mf.iterations,
            ])
            log.info("%s=%g %s done", args.param, value, mode)
    l = sc.l
    header = [
        args.param, "mode",
        *[f"lambda{j + 1}" for j in range(l)],
        *[f"finite_fraction{j + 1}" for j in range(l)],
        "per_agent_cost", "asymptotic_per_agent_cost", "iterations",
    ]
    out = out_dir(args)
    write_csv(os.path.join(out, "sweep.csv"), header, rows)
    for r in rows:
        print(" ".join(_cell(v) if not isinstance(v, float) else f"{v:.6g}" for v in r))
    return 0


# -- entry point ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="mfchoice", description="Mean-field destination choice solver")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")

    c = sub.add_parser("check", help="evaluate the existence and coupling hypotheses")
    common(c)
    c.add_argument("--k3-points", type=int, default=101, help="time samples for the k3 triple maximum")
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("solve-mf", help="mean-field fixed point")
    common(s)
    s.add_argument("--uniform", action="store_true", help="bisection on the split (one atom, two destinations)")
    s.set_defaults(func=cmd_solve_mf)

    e = sub.add_parser("solve-exact", help="exact social optimum by assignment enumeration")
    common(e)
    e.add_argument("--agents", required=True, help="JSON list of agents: {atom, x0} or bare x0")
    e.add_argument("--table", action="store_true", help="also write every assignment's cost")
    e.set_defaults(func=cmd_solve_exact)

    m = sub.add_parser("simulate", help="finite population under the decentralized strategies")
    common(m)
    m.add_argument("-N", type=int, required=True, help="number of agents")
    m.add_argument("--seed", type=int, help="sampling seed (default: scenario seed)")
    m.add_argument("--from", dest="from_dir", help="directory holding xbar.csv from solve-mf")
    m.add_argument("--trajectories", action="store_true", help=f"write paths even when N > {TRAJECTORY_LIMIT}")
    m.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="solve and simulate over a list of parameter values")
    common(w)
    w.add_argument("--param", default="q", choices=["q", "horizon"])
    w.add_argument("--values", required=True, help="comma-separated values")
    w.add_argument("--modes", default="coop,noncoop", help="comma-separated: coop, noncoop")
    w.add_argument("-N", type=int, default=400)
    w.add_argument("--seed", type=int)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except MFChoiceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, ConvergenceError) and exc.history:
            tail = ", ".join("%.3e" % h for h in exc.history[-5:])
            print(f"residual history (last 5): {tail}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
