"""Command line entry point: ``lpbsde <subcommand> [options]``.

Parameters come from built-in defaults, then an optional ``--config`` JSON
file, then explicit flags.  Every run writes one JSON document (sorted keys,
so identical inputs give identical bytes) that echoes the parameters, the
package version and the seed.  ``--threads`` only caps the number of workers
and is deliberately not echoed.

Exit codes: 0 all checks pass, 1 a check failed, 2 invalid input.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import statistics
import sys

import numpy as np

from . import __version__
from .bsde_engine import (make_problem, max_node_error, residual_check, solve_backward,
                          PROBLEMS)
from .estimates_lab import (apriori_ratio, batch_mean, bdg_sandwich, bj_norm_check,
                            condition_c_check, counterexample_gap, ep_norms,
                            martingale_isometry_check, poisson_moment)
from .jump_paths import sample_poisson_measure, simulate_paths, to_arrays, uniform_grid
from .levy_measure import (Atomic, AtomValues, InvalidMeasure, PowerForm, PowerLaw,
                           measure_from_json, total_mass)
from .sum_norms import NonConvergence, sum_norm
from .tech_inequality import TechIneqParams, certificate_sweep, check_inequality, epsilon_max

SEED_ENV = "LPBSDE_SEED"
DEFAULT_MEASURE = {"type": "atomic", "atoms": [{"u": [1.0], "w": 1.0}]}


class InputError(Exception):
    pass


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _json_arg(text):
    if isinstance(text, (dict, list)):
        return text
    if isinstance(text, str) and text.startswith("@"):
        with open(text[1:]) as fh:
            return json.load(fh)
    return json.loads(text)


# name -> (parser, default, help)
COMMON = {
    "p": (float, 1.5, "integrability exponent in (1, 2)"),
    "T": (float, 1.0, "time horizon"),
    "paths": (int, 100_000, "number of simulated paths"),
    "grid_steps": (int, 64, "number of time steps"),
}
SCHEMAS = {
    "verify-lemma": {"p": COMMON["p"], "K": (float, 0.0, "Lipschitz constant K"),
                     "eps": (float, None, "epsilon (default: largest admissible)"),
                     "certificates": (int, 10_000, "random certificate points per case")},
    "sum-norm": {"measure": (_json_arg, DEFAULT_MEASURE, "measure JSON or @file"),
                 "phi": (_json_arg, [0.0], "values at the atoms (JSON list) or power coefficient"),
                 "q": (float, 1.0, "exponent of the large part")},
    "simulate": {"measure": (_json_arg, DEFAULT_MEASURE, "measure JSON or @file"),
                 "T": COMMON["T"], "paths": (int, 1000, "number of paths"),
                 "grid_steps": COMMON["grid_steps"], "brownian_dim": (int, 1, "Brownian dimension k"),
                 "truncation": (float, None, "small-jump cutoff eta for power laws"),
                 "jsonl": (str, None, "write one path per line to this file")},
    "solve": {"problem": (str, "counterexample", f"one of {sorted(PROBLEMS)}"),
              "method": (str, "markov-exact", "markov-exact or regression"),
              "T": COMMON["T"], "paths": COMMON["paths"], "grid_steps": COMMON["grid_steps"],
              "intensity": (float, 1.0, "jump intensity (counterexample)")},
    "counterexample": {"p": (_floats, [1.5], "comma-separated exponents"), "T": COMMON["T"],
                       "paths": COMMON["paths"]},
    "apriori": {"p": COMMON["p"], "T": (_floats, [0.5, 1.0, 2.0], "comma-separated horizons"),
                "problem": (lambda s: [x for x in str(s).split(",") if x] if not isinstance(s, list) else s,
                            sorted(PROBLEMS), "comma-separated registry problems"),
                "paths": COMMON["paths"], "grid_steps": COMMON["grid_steps"]},
    "bdg": {"measure": (_json_arg, DEFAULT_MEASURE, "atomic measure JSON or @file"),
            "psi": (_json_arg, None, "values at the atoms (default: all ones)"),
            "p": COMMON["p"], "T": (_floats, [1.0, 2.0, 4.0], "comma-separated horizons"),
            "paths": COMMON["paths"]},
    "bj": {"measure": (_json_arg, DEFAULT_MEASURE, "measure JSON or @file"),
           "psi": (_json_arg, None, "atom values (JSON list) or power coefficient (default 1)"),
           "p": COMMON["p"], "T": COMMON["T"], "paths": COMMON["paths"],
           "truncation": (float, None, "small-jump cutoff eta for power laws")},
    "ep-norms": {"problem": (str, "counterexample", f"one of {sorted(PROBLEMS)}"),
                 "p": COMMON["p"], "T": COMMON["T"], "paths": COMMON["paths"],
                 "grid_steps": COMMON["grid_steps"], "intensity": (float, 1.0, "jump intensity")},
}
STOCHASTIC = {"simulate", "solve", "counterexample", "apriori", "bdg", "bj", "ep-norms"}


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return x


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lpbsde", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file with parameters")
        sp.add_argument("--seed", type=int, default=None, help=f"master seed (default ${SEED_ENV})")
        sp.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
        sp.add_argument("--out", help="write the JSON summary here instead of stdout")
        sp.add_argument("--csv", help="also write a CSV table here")
        for key, (_, _, hlp) in schema.items():
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=argparse.SUPPRESS,
                            help=hlp)
    return ap


def resolve_config(args) -> dict:
    """Defaults, then config file, then flags; raise InputError on bad input."""
    schema = SCHEMAS[args.command]
    params = {k: v[1] for k, v in schema.items()}
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
            raw = json.loads(text)
        except OSError as exc:
            raise InputError(f"{args.config}: {exc.strerror}")
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.config}: line {exc.lineno} column {exc.colno}: {exc.msg}")
        if not isinstance(raw, dict):
            raise InputError(f"{args.config}: line 1: top level must be an object")
        raw = dict(raw)
        if "seed" in raw and args.seed is None:
            args.seed = raw.pop("seed")
        raw.pop("seed", None)
        unknown = sorted(set(raw) - set(schema))
        if unknown:
            raise InputError(f"{args.config}: unknown parameter(s) {unknown} for {args.command}")
    for key, val in list(raw.items()) + [(k, getattr(args, k)) for k in schema if hasattr(args, k)]:
        conv = schema[key][0]
        try:
            params[key] = None if val is None else conv(val)
        except (ValueError, TypeError, json.JSONDecodeError, OSError) as exc:
            raise InputError(f"parameter {key!r}: cannot parse {val!r} ({exc})")
    seed = args.seed
    if seed is None and os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise InputError(f"${SEED_ENV} must be an integer")
    if seed is None and args.command in STOCHASTIC:
        raise InputError(f"{args.command} is stochastic: pass --seed or set ${SEED_ENV}")
    if seed is not None and not 0 <= int(seed) < 2 ** 64:
        raise InputError("seed must lie in [0, 2^64)")
    params["seed"] = None if seed is None else int(seed)
    _validate(args.command, params)
    return params


def _validate(cmd, prm):
    def need(cond, msg):
        if not cond:
            raise InputError(msg)

    for key in ("paths", "grid_steps", "certificates"):
        if key in prm:
            need(prm[key] >= 1, f"{key} must be at least 1")
    ps = prm.get("p")
    for p in (ps if isinstance(ps, list) else [ps] if ps is not None else []):
        lo_ok = 1.0 < p < 2.0 or (cmd == "bdg" and p == 2.0)
        need(lo_ok, f"p={p} must lie in (1, 2)")
    Ts = prm.get("T")
    for T in (Ts if isinstance(Ts, list) else [Ts] if Ts is not None else []):
        need(T > 0, "T must be positive")
    if "problem" in prm:
        probs = prm["problem"] if isinstance(prm["problem"], list) else [prm["problem"]]
        for pr in probs:
            need(pr in PROBLEMS, f"unknown problem {pr!r}; choose from {sorted(PROBLEMS)}")
    if "method" in prm:
        need(prm["method"] in ("markov-exact", "regression"), f"unknown method {prm['method']!r}")
    if cmd == "verify-lemma":
        need(prm["K"] >= 0, "K must be non-negative")
    if "measure" in prm:
        try:
            prm["_measure"] = measure_from_json(prm["measure"])
        except (InvalidMeasure, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"measure: {exc}")
    if cmd in ("bdg",):
        need(isinstance(prm["_measure"], Atomic), "bdg needs an atomic measure")


def _atom_psi(prm, m):
    vals = prm.get("psi")
    if vals is None:
        return AtomValues(np.ones((m.n_atoms, 1)))
    v = np.asarray(vals, dtype=float)
    if v.ndim == 0 or v.shape[0] != m.n_atoms:
        raise InputError(f"psi needs one value per atom ({m.n_atoms})")
    return AtomValues(v)


# --- subcommands; each returns (summary dict, csv rows, ok) ---

def cmd_verify_lemma(prm, threads):
    eps = prm["eps"] if prm["eps"] is not None else epsilon_max(prm["K"], prm["p"])
    params = TechIneqParams(prm["p"], prm["K"], eps)
    rep = check_inequality(params)
    cert = certificate_sweep(params, prm["certificates"], prm["seed"] or 0)
    ok = rep.ok and cert["ok"] and params.admissible
    row = {"p": params.p, "K": params.K, "eps": params.eps, "min_slack": rep.min_slack,
           "n_violations": rep.n_violations, "certificates_ok": cert["ok"]}
    return {"grid": rep.to_json(), "certificates": cert, "ok": ok}, [row], ok


def cmd_sum_norm(prm, threads):
    m = prm["_measure"]
    phi = prm["phi"]
    if isinstance(m, PowerLaw):
        coef = float(phi[0] if isinstance(phi, list) else phi)
        f = PowerForm(coef)
    else:
        v = np.asarray(phi, dtype=float)
        if v.ndim == 1 and len(v) == 1 and m.n_atoms > 1 and v[0] == 0.0:
            v = np.zeros(m.n_atoms)
        if v.shape[0] != m.n_atoms:
            raise InputError(f"phi needs one value per atom ({m.n_atoms})")
        f = AtomValues(v)
    try:
        res = sum_norm(f, m, prm["q"])
    except NonConvergence as exc:
        return {"error": str(exc), "best_bound": exc.best_bound, "ok": False}, [], False
    out = res.to_json()
    ok = res.value <= res.threshold_bound * (1 + 1e-12) + 1e-15
    out["ok"] = ok
    return out, [{"value": res.value, "method": res.method, "gap": res.gap,
                  "threshold_bound": res.threshold_bound}], ok


def cmd_simulate(prm, threads):
    m = prm["_measure"]
    eta = prm["truncation"]
    if isinstance(m, PowerLaw) and eta is None:
        raise InputError("power-law measures need --truncation")
    if math.isinf(total_mass(m, eta or 0.0)):
        raise InputError("measure has infinite mass; increase --truncation")
    grid = uniform_grid(prm["T"], prm["grid_steps"])
    paths = simulate_paths(m, grid, prm["paths"], prm["seed"], k=prm["brownian_dim"],
                           eta=eta, threads=threads)
    counts = np.array([len(pb.jumps) for pb in paths], dtype=float)
    lam = total_mass(m, eta or 0.0)
    mean, se = batch_mean(counts)
    summary = {"mean_jump_count": mean, "stderr": se, "expected": lam * prm["T"],
               "within_3_stderr": abs(mean - lam * prm["T"]) <= 3 * se or se == 0 and mean == lam * prm["T"]}
    if prm["jsonl"]:
        header = {"config": {k: v for k, v in prm.items() if not k.startswith("_")},
                  "seed": prm["seed"], "version": __version__}
        with open(prm["jsonl"], "w") as fh:
            fh.write(json.dumps(_clean({"header": header}), sort_keys=True) + "\n")
            for pb in paths:
                fh.write(json.dumps(_clean(pb.to_json()), sort_keys=True) + "\n")
    rows = [{"path_index": pb.path_index, "n_jumps": len(pb.jumps),
             "last_jump": float(pb.jumps.times[-1]) if len(pb.jumps) else ""} for pb in paths]
    return summary, rows, True


def _solve(prm, threads, problem):
    kw = {"intensity": prm["intensity"]} if problem == "counterexample" else {}
    prob = make_problem(problem, **kw)
    grid = uniform_grid(prm["T"], prm["grid_steps"])
    paths = simulate_paths(prob.measure, grid, prm["paths"], prm["seed"], k=prob.k, threads=threads)
    sc = to_arrays(paths, prob.measure)
    sol = solve_backward(prob.generator, prob.terminal, sc, prob.measure, prm.get("method", "markov-exact"))
    return prob, sc, sol


def cmd_solve(prm, threads):
    prob, sc, sol = _solve(prm, threads, prm["problem"])
    res = residual_check(sol, prob.generator, prob.terminal, sc, prob.measure)
    err = max_node_error(sol, prob, sc) if prob.exact else None
    # the discrete scheme reproduces these two problems exactly
    exact_scheme = prm["problem"] in ("counterexample", "zero") and prm["method"] == "markov-exact"
    ok = res.terminal_error == 0.0
    if prm["method"] == "markov-exact":
        ok = ok and res.ok
    if exact_scheme:
        ok = ok and err <= 1e-10
    diag = {k: v for k, v in sol.diagnostics.items() if k != "value_tables"}
    summary = {"Y0": sol.Y[0, 0].tolist(), "max_node_error": err, "residual_max": float(res.per_step_max.max()),
               "terminal_error": res.terminal_error, "diagnostics": diag, "ok": ok}
    rows = [{"t": float(t), "mean_Y": float(sol.Y[:, i, 0].mean()),
             "mean_psi": float(sol.psi[:, i, 0, 0].mean()) if i < len(sol.grid) - 1 else ""}
            for i, t in enumerate(sol.grid)]
    return summary, rows, ok


def cmd_counterexample(prm, threads):
    m = Atomic([[1.0]], [1.0])
    T, n = prm["T"], prm["paths"]
    jumps = [sample_poisson_measure(m, T, prm["seed"], i).times for i in range(n)]
    rows = []
    for p in prm["p"]:
        rows.append(counterexample_gap(p, T, jumps=jumps).to_json())
    ok = all(r["ok"] for r in rows)
    return {"results": rows, "ok": ok}, rows, ok


def cmd_apriori(prm, threads):
    rows = []
    for name in prm["problem"]:
        for T in prm["T"]:
            q = dict(prm, T=T, intensity=1.0, method="markov-exact")
            prob, sc, sol = _solve(q, threads, name)
            xi = prob.terminal(sc.W[:, -1], sc.counts[:, -1])
            # every registry generator satisfies the growth condition with f_t = 0, alpha = 0
            cc = condition_c_check(prob.generator, prob.measure, 0.0, 0.0, prob.generator.K_psi + prob.generator.K_z,
                                   seed=prm["seed"] % (2 ** 32))
            rep = apriori_ratio(sol, xi, 0.0, prm["p"], sc, prob.measure)
            rows.append({"problem": name, "T": T, "lhs": rep.lhs, "rhs": rep.rhs, "C_hat": rep.ratio,
                         "misuse": rep.misuse, "condition_c_ok": cc["ok"]})
    ratios = [r["C_hat"] for r in rows]
    med = statistics.median(ratios)
    stable = all(r <= 10 * med for r in ratios)
    ok = stable and all(math.isfinite(r) for r in ratios) and not any(r["misuse"] for r in rows) \
        and all(r["condition_c_ok"] for r in rows)
    return {"results": rows, "median_C_hat": med, "stable": stable, "ok": ok}, rows, ok


def cmd_bdg(prm, threads):
    m = prm["_measure"]
    psi = _atom_psi(prm, m)
    rows = []
    for T in prm["T"]:
        rep = bdg_sandwich(psi, m, prm["p"], T, prm["paths"], prm["seed"]).to_json()
        iso = martingale_isometry_check(psi, m, T, prm["paths"], prm["seed"])
        rep.update(isometry=iso.to_json())
        rows.append(rep)
    finite = [r for r in rows if r["e_qv"] > 0]
    ok = all(0 < r["ratio"] < math.inf for r in finite) and all(r["isometry"]["isometry_ok"] for r in rows)
    flat = [{k: v for k, v in r.items() if k != "isometry"} | {"isometry_ok": r["isometry"]["isometry_ok"]}
            for r in rows]
    return {"results": rows, "ok": ok}, flat, ok


def cmd_bj(prm, threads):
    m = prm["_measure"]
    if isinstance(m, PowerLaw):
        if prm["truncation"] is None:
            raise InputError("power-law measures need --truncation")
        psi = PowerForm(float(prm["psi"]) if prm["psi"] is not None else 1.0)
    else:
        psi = _atom_psi(prm, m)
    rep = bj_norm_check(psi, m, prm["p"], prm["T"], prm["paths"], prm["seed"], eta=prm["truncation"])
    out = rep.to_json()
    ok = rep.cofinite
    out["ok"] = ok
    return out, [out], ok


def cmd_ep_norms(prm, threads):
    q = dict(prm, method="markov-exact")
    prob, sc, sol = _solve(q, threads, prm["problem"])
    ep = ep_norms(sol, prm["p"], sc, prob.measure)
    out = ep.to_json()
    ok = True
    if prm["problem"] == "counterexample":
        oracle = poisson_moment(prm["p"] / 2.0, prm["intensity"] * prm["T"])
        out["e_psi_oracle"] = oracle
        ok = abs(ep.e_psi - oracle) <= 3 * ep.stderr["e_psi"]
    out["ok"] = ok
    return out, [{k: v for k, v in out.items() if k != "stderr"}], ok


COMMANDS = {"verify-lemma": cmd_verify_lemma, "sum-norm": cmd_sum_norm, "simulate": cmd_simulate,
            "solve": cmd_solve, "counterexample": cmd_counterexample, "apriori": cmd_apriori,
            "bdg": cmd_bdg, "bj": cmd_bj, "ep-norms": cmd_ep_norms}


def _write_csv(path, rows, header_cfg):
    buf = io.StringIO()
    buf.write("# " + json.dumps(header_cfg, sort_keys=True) + "\n")
    if rows:
        keys = sorted({k for r in rows for k in r})
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _clean(r.get(k, "")) for k in keys})
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        prm = resolve_config(args)
        summary, rows, ok = COMMANDS[args.command](prm, max(1, args.threads))
    except InputError as exc:
        print(f"lpbsde {args.command}: error: {exc}", file=sys.stderr)
        return 2
    config = {k: v for k, v in prm.items() if not k.startswith("_")}
    doc = _clean({"command": args.command, "config": config, "seed": prm["seed"],
                  "version": __version__, "result": summary, "ok": bool(ok)})
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        _write_csv(args.csv, rows, {"command": args.command, "config": doc["config"],
                                    "seed": prm["seed"], "version": __version__})
    if not ok:
        print(f"lpbsde {args.command}: check failed", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
