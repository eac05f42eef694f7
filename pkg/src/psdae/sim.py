"""Time stepping, reference trajectories, error metrics and experiment sweeps."""
from __future__ import annotations

import csv
import dataclasses
import functools
import io
import os
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .integrators import History, SchemeConfig
from .model import StateLayout, build_model
from .network import PowerNetwork, apply_load_disturbance
from .powerflow import initialize_dynamic_state, solve_power_flow
from .solver import ConvergenceError, NewtonConfig, StepDiagnostics, newton_solve
from .transforms import ModelForm, Variant

REFERENCE_H = 1e-3
REFERENCE_NEWTON = NewtonConfig(tol=1e-8, max_iter=50)
REFERENCE_ORDER = 5
REFERENCE_STARTUP_REFINE = 16

METRICS_FIELDS = ("scenario", "form", "scheme", "kg", "h", "mu", "alpha_L",
                  "rmse_dyn", "rmse_alg", "walltime_s")


class SimulationError(RuntimeError):
    def __init__(self, message, step=None, time=None, diagnostics=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ScenarioSpec:
    case: PowerNetwork
    alpha_L: float = 0.0
    t_end: float = 15.0
    form: ModelForm = field(default_factory=ModelForm.dae)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    startup_refine: int = 1     # BDF ramp-up steps split into this many sub-steps

    def __post_init__(self):
        if self.startup_refine < 1:
            raise ValueError("startup_refine must be >= 1")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not np.isfinite(self.alpha_L):
            raise ValueError("alpha_L must be finite")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.scheme.h))

    def slug(self):
        parts = [self.case.name, self.form.variant.value]
        if self.form.variant is Variant.APPROX_DAE:
            parts.append(f"mu{self.form.mu:g}")
        parts += [self.scheme.label.lower(), f"h{self.scheme.h:g}",
                  f"a{self.alpha_L:g}", f"t{self.t_end:g}"]
        return "_".join(parts)


@dataclass
class SimulationTrace:
    times: np.ndarray
    states: np.ndarray
    diagnostics: list
    wall_time: float
    layout: StateLayout
    spec: ScenarioSpec | None = None

    @property
    def n_d(self):
        return self.layout.n_d

    @property
    def x_d(self):
        return self.states[:, : self.n_d]

    @property
    def x_a(self):
        return self.states[:, self.n_d:]

    def column(self, quantity, device_id):
        return self.states[:, self.layout.index(quantity, device_id)]

    def max_iterations(self):
        return max((d.iterations for d in self.diagnostics), default=0)

    def to_csv(self, path=None):
        """Write ``t,<state names>`` with 17 significant digits; return the text if no path."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *self.layout.names()])
        for t, row in zip(self.times, self.states):
            w.writerow([f"{t:.17g}", *(f"{v:.17g}" for v in row)])
        text = buf.getvalue()
        if path is None:
            return text
        atomic_write(path, text)
        return path


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return header, data[:, 0], data[:, 1:]


@functools.lru_cache(maxsize=32)
def equilibrium(net: PowerNetwork):
    """Power-flow based equilibrium ``(x0, u)`` of the undisturbed network."""
    pf = solve_power_flow(net)
    state, inputs = initialize_dynamic_state(net, pf)
    x0, u = state.x, inputs.u
    x0.setflags(write=False)
    u.setflags(write=False)
    return x0, u


def consistent_algebraic(model, x, tol=1e-12, max_iter=50):
    """Solve ``g(x_d, x_a) = 0`` for ``x_a`` with ``x_d`` held fixed."""
    nd = model.n_d
    xd, xa = x[:nd], np.array(x[nd:], dtype=float)
    for _ in range(max_iter):
        g = model.g(xd, xa)
        if np.max(np.abs(g)) <= tol:
            return np.concatenate([xd, xa])
        _, Ga = model.jac_g(xd, xa)
        xa -= scipy.linalg.solve(Ga, g, check_finite=False)
    g = model.g(xd, xa)
    if np.max(np.abs(g)) > 1e3 * tol:
        raise SimulationError(f"no consistent algebraic state after the disturbance "
                              f"(|g| = {np.max(np.abs(g)):.3e})", step=0)
    return np.concatenate([xd, xa])


def random_consistent_states(net: PowerNetwork, n, seed=0, scale=0.05):
    """``n`` states near the equilibrium: ``x_d`` perturbed, ``x_a`` solving ``g = 0``."""
    x0, u = equilibrium(net)
    model = build_model(net)
    rng = np.random.default_rng(seed)
    nd = model.n_d
    out = []
    for _ in range(n):
        x = np.array(x0)
        x[:nd] += scale * (1.0 + np.abs(x[:nd])) * rng.uniform(-1, 1, nd)
        out.append(consistent_algebraic(model, x))
    return out, np.array(u)


def run(spec: ScenarioSpec) -> SimulationTrace:
    """Simulate a load step applied just after t = 0.

    Row 0 of the trace is the undisturbed equilibrium.  At ``t = 0+`` the
    loads are scaled by ``1 + alpha_L/100``; the dynamic states are continuous
    across the step and the algebraic states jump to the consistent solution
    of the disturbed constraints, which seeds the integrator history.
    """
    x0, u = equilibrium(spec.case)
    net = apply_load_disturbance(spec.case, spec.alpha_L) if spec.alpha_L else spec.case
    model = build_model(net)
    form, scheme, cfg = spec.form, spec.scheme, spec.newton
    n = spec.n_steps
    h = scheme.h

    start = time.perf_counter()
    x = consistent_algebraic(model, x0) if spec.alpha_L else np.array(x0)
    hist = History.seeded(model, form, x, u)
    states = np.empty((n + 1, x0.size))
    states[0] = x0
    diagnostics = []

    def step(sch, hist, x, k):
        try:
            x, diag, ev = newton_solve(model, form, sch, hist, x, u, cfg)
        except ConvergenceError as exc:
            raise SimulationError(f"step {k} (t = {k * h:.6g} s): {exc}", step=k, time=k * h,
                                  diagnostics=exc.diagnostics) from exc
        except np.linalg.LinAlgError as exc:
            raise SimulationError(f"step {k} (t = {k * h:.6g} s): {exc}", step=k, time=k * h) from exc
        g = ev.alg if form.variant is not Variant.ODE_DAE else model.g(x[: model.n_d], x[model.n_d:])
        diag.constraint_norm = float(np.max(np.abs(g)))
        hist.push(x, ev.f, ev.alg)
        return x, diag, ev

    first = 1
    ramp = min(scheme.order - 1, n) if scheme.is_bdf else 0
    r = spec.startup_refine
    if ramp > 0 and r > 1:
        # self-starting: the low-order ramp runs on a finer grid so its error stays negligible
        fine = SchemeConfig.bdf(scheme.order, h / r)
        fhist = History.seeded(model, form, x, u)
        for j in range(1, ramp * r + 1):
            k = -(-j // r)
            x, diag, ev = step(fine.at_order(min(j, fine.order)), fhist, x, k)
            if j % r == 0:
                hist.push(x, ev.f, ev.alg)
                states[k] = x
                diagnostics.append(diag)
        first = ramp + 1
    for k in range(first, n + 1):
        sch = scheme.at_order(min(k, scheme.order)) if scheme.is_bdf else scheme
        x, diag, _ = step(sch, hist, x, k)
        diagnostics.append(diag)
        states[k] = x
    wall = time.perf_counter() - start
    return SimulationTrace(times=h * np.arange(n + 1), states=states, diagnostics=diagnostics,
                           wall_time=wall, layout=model.layout, spec=spec)


def resample(trace: SimulationTrace, times) -> SimulationTrace:
    times = np.asarray(times, float)
    states = np.column_stack([np.interp(times, trace.times, c) for c in trace.states.T])
    return dataclasses.replace(trace, times=times, states=states)


def reference_spec(spec: ScenarioSpec, h_ref=REFERENCE_H) -> ScenarioSpec:
    return dataclasses.replace(spec, form=ModelForm.dae(),
                               scheme=SchemeConfig.bdf(REFERENCE_ORDER, h_ref),
                               newton=REFERENCE_NEWTON, startup_refine=REFERENCE_STARTUP_REFINE)


@functools.lru_cache(maxsize=16)
def _reference_run(case, alpha_L, t_end, h_ref):
    spec = reference_spec(ScenarioSpec(case, alpha_L, t_end), h_ref)
    return run(spec)


def reference_trace(spec: ScenarioSpec, h_ref=REFERENCE_H) -> SimulationTrace:
    """Baseline DAE with BDF5 at ``h_ref`` and tight Newton tolerance, on the scenario's grid.

    Stands in for a variable-order stiff solver.  The order ramp-up runs on a
    16x finer grid, mimicking the small initial steps such solvers take.
    Fine runs are cached per ``(case, alpha_L, t_end, h_ref)``.
    """
    fine = _reference_run(spec.case, spec.alpha_L, spec.t_end, h_ref)
    out = resample(fine, spec.scheme.h * np.arange(spec.n_steps + 1))
    out.spec = reference_spec(spec, h_ref)
    return out


def _check_grids(trace, ref):
    if trace.states.shape != ref.states.shape or not np.allclose(trace.times, ref.times,
                                                                 rtol=0, atol=1e-9):
        raise ValueError("traces are not on the same time grid")


@dataclass
class RMSE:
    per_state: np.ndarray
    dynamic: float
    algebraic: float
    total: float        # over all states jointly


def rmse(trace: SimulationTrace, ref: SimulationTrace) -> RMSE:
    """Per-state ``sqrt(sum_k e_k^2 / t)`` over samples ``k = 1..t``, plus group means.

    Row 0 (the shared initial condition) is excluded from the sum.
    """
    _check_grids(trace, ref)
    e = trace.states[1:] - ref.states[1:]
    per = np.sqrt(np.mean(e**2, axis=0)) if len(e) else np.zeros(trace.states.shape[1])
    nd = trace.n_d
    return RMSE(per, float(per[:nd].mean()), float(per[nd:].mean()),
                float(np.sqrt(np.mean(per**2))))


def error_norm_series(trace: SimulationTrace, ref: SimulationTrace) -> np.ndarray:
    """``zeta_k = ||x_hat_k - x_k||_2`` at every output time."""
    _check_grids(trace, ref)
    return np.linalg.norm(trace.states - ref.states, axis=1)


def terminal_mean(series, fraction=0.2):
    series = np.asarray(series)
    k = max(1, int(round(len(series) * fraction)))
    return float(np.mean(series[-k:]))


def metrics_row(spec: ScenarioSpec, trace: SimulationTrace, ref: SimulationTrace | None,
                scenario=None):
    r = rmse(trace, ref) if ref is not None else None
    return {
        "scenario": scenario or spec.slug(),
        "form": spec.form.variant.value,
        "scheme": "bdf" if spec.scheme.is_bdf else "ti",
        "kg": spec.scheme.order if spec.scheme.is_bdf else "",
        "h": spec.scheme.h,
        "mu": spec.form.mu if spec.form.variant is Variant.APPROX_DAE else "",
        "alpha_L": spec.alpha_L,
        "rmse": r.total if r else "",
        "rmse_dyn": r.dynamic if r else "",
        "rmse_alg": r.algebraic if r else "",
        "zeta_terminal": terminal_mean(error_norm_series(trace, ref)) if ref is not None else "",
        "max_iter": trace.max_iterations(),
        "walltime_s": trace.wall_time,
    }


def write_metrics_csv(rows, path=None):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRICS_FIELDS, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in r.items()})
    if path is None:
        return buf.getvalue()
    atomic_write(path, buf.getvalue())
    return path


def run_many(specs, jobs=1):
    """Run independent scenarios; results come back in input order."""
    if jobs <= 1 or len(specs) <= 1:
        return [run(s) for s in specs]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, specs))


def mu_sweep(case, alpha_L, mu_values, schemes, t_end=15.0, newton=NewtonConfig(), jobs=1,
             out_path=None):
    """RMSE of the approximate DAE against the reference for every (scheme, mu)."""
    if any(not mu > 0 for mu in mu_values):
        raise ValueError("mu values must be positive")
    specs = [ScenarioSpec(case, alpha_L, t_end, ModelForm.approx_dae(mu), sch, newton)
             for sch in schemes for mu in mu_values]
    traces = run_many(specs, jobs)
    rows = []
    for spec, tr in zip(specs, traces):
        ref = reference_trace(spec)
        rows.append(metrics_row(spec, tr, ref))
    if out_path is not None:
        write_metrics_csv(rows, out_path)
    return rows


def timing_comparison(case, alpha_L, forms, schemes, t_end=15.0, newton=NewtonConfig(),
                      repeats=3, out_path=None):
    """Median-of-``repeats`` wall time of the stepping loop per form x scheme."""
    rows = []
    for form in forms:
        for sch in schemes:
            spec = ScenarioSpec(case, alpha_L, t_end, form, sch, newton)
            times = []
            for _ in range(repeats):
                tr = run(spec)
                times.append(tr.wall_time)
            row = metrics_row(spec, tr, None)
            row["walltime_s"] = statistics.median(times)
            rows.append(row)
    if out_path is not None:
        write_metrics_csv(rows, out_path)
    return rows
