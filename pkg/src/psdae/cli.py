"""Command-line harness: single runs, sweeps, mu-sweeps, diagnostics and timing.

Exit codes: 0 success, 1 invalid input (flags, config, case file), 2 solver
failure (power flow, Newton, singular Jacobian).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .integrators import SchemeConfig
from .model import build_model, check_index_one, check_regularity, jacobian_fd_error, linearize
from .network import CaseFileError, NetworkValidationError, load_case
from .powerflow import InitializationError, PowerFlowError
from .sim import (SimulationError, ScenarioSpec, equilibrium, metrics_row, random_consistent_states,
                  reference_trace, run, run_many, timing_comparison, write_metrics_csv)
from .solver import NewtonConfig
from .transforms import DEFAULT_MU, ModelForm, Variant

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2
OUT_DIR_ENV = "PSDAE_OUT_DIR"

DEFAULTS = {
    "case": "cases/wscc9.case",
    "form": "dae",
    "scheme": "bdf",
    "kg": 2,
    "h": 0.1,
    "mu": DEFAULT_MU,
    "alpha_l": 2.0,
    "t_end": 15.0,
    "tol": 1e-2,
    "max_iter": 10,
    "seed": 0,
    "jobs": 1,
    "forms": "dae,ode-dae,approx-dae",
    "schemes": "be,bdf2,ti",
    "mu_values": "1e-4,1e-5,1e-6,1e-7,1e-8",
    "alpha_values": None,
    "fd_points": 5,
    "repeats": 3,
    "reference": True,
}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--case", help="case file (default cases/wscc9.case)")
    p.add_argument("--config", help="JSON file of option defaults; flags override it")
    p.add_argument("--out-dir", help=f"output root (default ${OUT_DIR_ENV} or ./out)")
    p.add_argument("--alpha-l", type=float, help="load step in percent (default 2)")
    p.add_argument("--t-end", type=float, help="simulated seconds (default 15)")
    p.add_argument("--h", type=float, help="step size (default 0.1)")
    p.add_argument("--tol", type=float, help="Newton increment tolerance (default 1e-2)")
    p.add_argument("--max-iter", type=int, help="Newton iteration limit (default 10)")


def build_parser():
    parser = _Parser(prog="psdae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one scenario")
    _common(p)
    p.add_argument("--form", choices=[v.value for v in Variant])
    p.add_argument("--scheme", choices=["bdf", "be", "ti"])
    p.add_argument("--kg", type=int, help="BDF order 1..5 (default 2)")
    p.add_argument("--mu", type=float, help="approx-dae parameter (default 1e-6)")
    p.add_argument("--no-reference", dest="reference", action="store_const", const=False,
                   help="skip the reference run and error metrics")

    p = sub.add_parser("sweep", help="forms x schemes x load steps")
    _common(p)
    p.add_argument("--forms", help="comma list (default dae,ode-dae,approx-dae)")
    p.add_argument("--schemes", help="comma list of be, bdf<k>, ti (default be,bdf2,ti)")
    p.add_argument("--alpha-values", help="comma list of load steps; overrides --alpha-l")
    p.add_argument("--mu", type=float)
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("mu-sweep", help="approx-dae error over mu")
    _common(p)
    p.add_argument("--mu", dest="mu_values", help="comma list (default 1e-4,...,1e-8)")
    p.add_argument("--schemes")
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("check", help="regularity, index-1 and Jacobian checks at equilibrium")
    p.add_argument("--case")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, help="seed for the random Jacobian check points")
    p.add_argument("--fd-points", type=int, help="random states for the Jacobian check (default 5)")

    p = sub.add_parser("timing", help="median wall time per form x scheme")
    _common(p)
    p.add_argument("--forms")
    p.add_argument("--schemes")
    p.add_argument("--mu", type=float)
    p.add_argument("--repeats", type=int)
    return parser


def resolve_config(args):
    """Merge ``flags > config file > built-in defaults`` into one dict."""
    given = {k: v for k, v in vars(args).items() if v is not None and k != "config"}
    from_file = {}
    if getattr(args, "config", None):
        try:
            from_file = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise UsageError("config file must hold a JSON object")
        from_file = {k.replace("-", "_"): v for k, v in from_file.items()}
        unknown = set(from_file) - set(DEFAULTS) - {"out_dir"}
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = {**DEFAULTS, "out_dir": os.environ.get(OUT_DIR_ENV, "out"), **from_file, **given}
    cfg["explicit"] = set(given) | set(from_file)
    return cfg


def _floats(text):
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}") from exc


def parse_scheme(token, h):
    """``be``, ``ti`` or ``bdf<k>`` to a scheme config."""
    t = token.strip().lower()
    if t in ("be", "ti"):
        return SchemeConfig(t, 1, h)
    if t.startswith("bdf") and t[3:].isdigit():
        return SchemeConfig.bdf(int(t[3:]), h)
    raise UsageError(f"unknown scheme {token!r} (use be, ti or bdf1..bdf5)")


def parse_form(token, mu):
    v = Variant(token.strip().lower())
    return ModelForm.approx_dae(mu) if v is Variant.APPROX_DAE else ModelForm(v)


def _newton(cfg):
    return NewtonConfig(tol=float(cfg["tol"]), max_iter=int(cfg["max_iter"]))


def _single_spec(cfg, net):
    form = parse_form(cfg["form"], float(cfg["mu"]))
    if "mu" in cfg["explicit"] and form.variant is not Variant.APPROX_DAE:
        raise UsageError("--mu only applies to --form approx-dae")
    if cfg["scheme"] == "bdf":
        scheme = SchemeConfig.bdf(int(cfg["kg"]), float(cfg["h"]))
    else:
        if "kg" in cfg["explicit"] and int(cfg["kg"]) != 1:
            raise UsageError("--kg only applies to --scheme bdf")
        scheme = SchemeConfig(cfg["scheme"], 1, float(cfg["h"]))
    return ScenarioSpec(net, float(cfg["alpha_l"]), float(cfg["t_end"]), form, scheme, _newton(cfg))


def emit_summary(results, stream=None):
    """Aligned table of error and wall time per scenario, sorted by (form, scheme)."""
    stream = stream or sys.stdout
    cols = ("form", "scheme", "mu", "alpha_L", "rmse", "zeta_terminal", "max_iter", "walltime_s")

    def scheme_label(r):
        return f"bdf{r['kg']}" if r.get("scheme") == "bdf" else str(r.get("scheme", ""))

    def cell(r, c):
        if c == "scheme":
            return scheme_label(r)
        v = r.get(c, "")
        return f"{v:.4g}" if isinstance(v, float) else str(v)

    rows = sorted(results, key=lambda r: (r["form"], scheme_label(r), float(r.get("mu") or 0),
                                          float(r.get("alpha_L") or 0)))
    table = [list(cols)] + [[cell(r, c) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in table]
    text = "\n".join(lines) + "\n"
    stream.write(text)
    return text


def _scenario_dir(cfg, spec):
    return Path(cfg["out_dir"]) / spec.slug()


def _write_scenario(cfg, spec, trace, row):
    d = _scenario_dir(cfg, spec)
    trace.to_csv(d / "trace.csv")
    write_metrics_csv([row], d / "metrics.csv")


def _cmd_run(cfg, net):
    spec = _single_spec(cfg, net)
    trace = run(spec)
    ref = reference_trace(spec) if cfg["reference"] else None
    row = metrics_row(spec, trace, ref)
    _write_scenario(cfg, spec, trace, row)
    emit_summary([row])
    print(f"wrote {_scenario_dir(cfg, spec)}")


def _sweep_specs(cfg, net):
    mu = float(cfg["mu"])
    forms = [parse_form(t, mu) for t in str(cfg["forms"]).split(",")]
    schemes = [parse_scheme(t, float(cfg["h"])) for t in str(cfg["schemes"]).split(",")]
    alphas = _floats(cfg["alpha_values"]) if cfg["alpha_values"] else [float(cfg["alpha_l"])]
    return [ScenarioSpec(net, a, float(cfg["t_end"]), f, s, _newton(cfg))
            for f in forms for s in schemes for a in alphas]


def _cmd_sweep(cfg, net, specs=None, name="sweep"):
    specs = specs if specs is not None else _sweep_specs(cfg, net)
    traces = run_many(specs, int(cfg["jobs"]))
    rows = []
    for spec, trace in zip(specs, traces):
        row = metrics_row(spec, trace, reference_trace(spec))
        _write_scenario(cfg, spec, trace, row)
        rows.append(row)
    path = Path(cfg["out_dir"]) / f"{net.name}_{name}" / "metrics.csv"
    write_metrics_csv(rows, path)
    emit_summary(rows)
    print(f"wrote {path}")


def _cmd_mu_sweep(cfg, net):
    mus = _floats(cfg["mu_values"])
    if not mus or any(not m > 0 for m in mus):
        raise UsageError("mu values must be positive")
    schemes = [parse_scheme(t, float(cfg["h"])) for t in str(cfg["schemes"]).split(",")]
    specs = [ScenarioSpec(net, float(cfg["alpha_l"]), float(cfg["t_end"]), ModelForm.approx_dae(m),
                          s, _newton(cfg)) for s in schemes for m in mus]
    _cmd_sweep(cfg, net, specs, name=f"mu-sweep_a{float(cfg['alpha_l']):g}")


def _cmd_check(cfg, net):
    x0, u = equilibrium(net)
    model = build_model(net)
    nd = model.n_d
    reg = check_regularity(linearize(net, x0[:nd], x0[nd:], u), seed=int(cfg["seed"]))
    idx = check_index_one(net, x0[:nd], x0[nd:])
    states, u = random_consistent_states(net, int(cfg["fd_points"]), seed=int(cfg["seed"]))
    err = max((max(jacobian_fd_error(model, x[:nd], x[nd:], u).values()) for x in states), default=0.0)
    yes = {True: "yes", False: "no"}
    print(f"regular: {yes[bool(reg)]}, index-1: {yes[bool(idx)]}, cond(G_xa)={idx.condition:.4g}")
    print(f"jacobian fd max rel error: {err:.3e} over {len(states)} states (seed {cfg['seed']})")
    return EXIT_OK if reg and idx else EXIT_SOLVER


def _cmd_timing(cfg, net):
    mu = float(cfg["mu"])
    forms = [parse_form(t, mu) for t in str(cfg["forms"]).split(",")]
    schemes = [parse_scheme(t, float(cfg["h"])) for t in str(cfg["schemes"]).split(",")]
    path = Path(cfg["out_dir"]) / f"{net.name}_timing_a{float(cfg['alpha_l']):g}" / "metrics.csv"
    rows = timing_comparison(net, float(cfg["alpha_l"]), forms, schemes, float(cfg["t_end"]),
                             _newton(cfg), repeats=int(cfg["repeats"]), out_path=path)
    emit_summary(rows)
    print(f"wrote {path}")


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "mu-sweep": _cmd_mu_sweep,
            "check": _cmd_check, "timing": _cmd_timing}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        net = load_case(cfg["case"])
        code = COMMANDS[args.subcommand](cfg, net)
        return EXIT_OK if code is None else code
    except SimulationError as exc:
        d = exc.diagnostics
        extra = "" if d is None else (f" [iterations={d.iterations}, |dx|={d.final_increment_norm:.3e}, "
                                      f"|phi|={d.final_residual_norm:.3e}]")
        print(f"solver failure: {exc}{extra}", file=sys.stderr)
        return EXIT_SOLVER
    # LinAlgError subclasses ValueError, so it must be caught first
    except (PowerFlowError, InitializationError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (UsageError, CaseFileError, NetworkValidationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

if __name__ == "__main__":
    sys.exit(main())
