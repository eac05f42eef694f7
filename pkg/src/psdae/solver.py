"""Newton-Raphson solution of one implicit time step."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .integrators import History, SchemeConfig, residual_from_eval
from .transforms import ModelForm, Variant, evaluate


class ConvergenceError(RuntimeError):
    def __init__(self, message, diagnostics=None, step=None):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.step = step


class SingularJacobianError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-2       # absolute bound on ||dx||_2
    max_iter: int = 10
    stagnation_factor: float = 1e3

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class StepDiagnostics:
    iterations: int
    final_increment_norm: float
    final_residual_norm: float
    jacobian_condition_estimate: float
    constraint_norm: float = float("nan")   # ||g(x_k)||_inf of the accepted state


def jacobian_from_eval(model, form: ModelForm, scheme: SchemeConfig, ev):
    """Block Jacobian ``d phi / d x_k`` from evaluated model Jacobians."""
    nd, na = model.n_d, model.n_a
    ht = scheme.h_tilde
    A = np.empty((nd + na, nd + na))
    A[:nd, :nd] = -ht * ev.F_xd
    A[:nd, nd:] = -ht * ev.F_xa
    A[nd:, :nd] = -ht * ev.alg_xd
    A[nd:, nd:] = -ht * ev.alg_xa
    dyn = np.arange(nd)
    A[dyn, dyn] += 1.0
    alg = np.arange(nd, nd + na)
    if form.variant is Variant.ODE_DAE:
        A[alg, alg] += 1.0
    elif form.variant is Variant.APPROX_DAE:
        A[alg, alg] += form.mu
    return A


def assemble_jacobian(model, form: ModelForm, scheme: SchemeConfig, x, u):
    """``A_g``: top rows ``[I - h~ F_xd, -h~ F_xa]``; bottom rows depend on the form.

    DAE ``[-h~ G_xd, -h~ G_xa]``, ODE-DAE ``[-h~ Gt_xd, I - h~ Gt_xa]``,
    Approx-DAE ``[-h~ G_xd, mu I - h~ G_xa]``.
    """
    x = np.asarray(x, float)
    ev = evaluate(model, form, x[: model.n_d], x[model.n_d:], np.asarray(u, float))
    return jacobian_from_eval(model, form, scheme, ev)


def _lu(A):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    d = np.abs(np.diag(lu))
    if not np.all(np.isfinite(d)) or d.min() < 1e-12 * d.max():
        raise SingularJacobianError("singular Newton Jacobian (pivot below 1e-12 of max)")
    return lu, piv, float(d.max() / d.min())


def newton_solve(model, form: ModelForm, scheme: SchemeConfig, hist: History, x_guess, u,
                 cfg: NewtonConfig = NewtonConfig()):
    """Solve ``phi(x_k) = 0`` by Newton's method.

    The update is ``x <- x - A_g^{-1} phi`` (one LU factorization per
    iteration, no explicit inverse).  Converged when ``||dx||_2 <= tol`` and
    the residual has not stagnated above ``stagnation_factor * tol``.

    Returns ``(x_k, StepDiagnostics, evaluation at x_k)``; the evaluation is
    reused by the caller to seed the trapezoidal history.
    """
    x = np.array(x_guess, dtype=float)
    u = np.asarray(u, float)
    nd = model.n_d
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite initial guess")
    dx_norm = np.inf
    cond = np.nan
    for it in range(1, cfg.max_iter + 1):
        ev = evaluate(model, form, x[:nd], x[nd:], u)
        phi = residual_from_eval(model, form, scheme, hist, x, ev)
        lu, piv, cond = _lu(jacobian_from_eval(model, form, scheme, ev))
        dx = scipy.linalg.lu_solve((lu, piv), phi, check_finite=False)
        x -= dx
        dx_norm = float(np.linalg.norm(dx))
        if not np.all(np.isfinite(x)):
            break
        if dx_norm <= cfg.tol:
            ev = evaluate(model, form, x[:nd], x[nd:], u, jacobian=False)
            phi = residual_from_eval(model, form, scheme, hist, x, ev)
            res = float(np.max(np.abs(phi)))
            if res <= cfg.stagnation_factor * cfg.tol:
                diag = StepDiagnostics(it, dx_norm, res, cond)
                return x, diag, ev
    ev = evaluate(model, form, x[:nd], x[nd:], u, jacobian=False) if np.all(np.isfinite(x)) else None
    res = float(np.max(np.abs(residual_from_eval(model, form, scheme, hist, x, ev)))) if ev else np.inf
    diag = StepDiagnostics(cfg.max_iter, dx_norm, res, cond)
    raise ConvergenceError(
        f"Newton did not converge in {cfg.max_iter} iterations "
        f"(|dx| = {dx_norm:.3e}, |phi|_inf = {res:.3e})", diag)
