"""DAE-to-ODE transformations of the algebraic block.

* ``ODE_DAE``: differentiate ``0 = g`` along trajectories (implicit function
  theorem), ``x_a' = -G_xa^{-1} G_xd f = gt``.
* ``APPROX_DAE``: replace ``0 = g`` by ``mu x_a' = g``.

Jacobians of ``gt`` contain second derivatives of ``g``.  Writing
``w = G_xa^{-1} G_xd f`` (so ``gt = -w``), differentiation of
``G_xa w = G_xd f`` gives, for any state coordinate ``x_j``::

    d gt/d x_j = -G_xa^{-1} [ (dG_xd/dx_j) f - (dG_xa/dx_j) w + G_xd dF/dx_j ]

The bracketed Hessian terms, collected over all ``j``, are the second
derivative of ``g`` contracted with the velocity ``p = (f, gt)``.  Because
second derivatives commute, that contraction equals the directional
derivative of the Jacobian ``[G_xd, G_xa]`` along ``p``, which a central
difference obtains from two Jacobian evaluations instead of one per state.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import build_model


class Variant(str, enum.Enum):
    DAE = "dae"
    ODE_DAE = "ode-dae"
    APPROX_DAE = "approx-dae"


class IndexViolationError(np.linalg.LinAlgError):
    """``G_xa`` is (numerically) singular, so the DAE is not index one here."""

    def __init__(self, message, condition=np.inf):
        super().__init__(message)
        self.condition = condition


DEFAULT_MU = 1e-6
DEFAULT_FD_STEP = 1e-5


@dataclass(frozen=True)
class ModelForm:
    variant: Variant = Variant.DAE
    mu: float | None = None
    fd_step: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is Variant.APPROX_DAE:
            if self.mu is None:
                object.__setattr__(self, "mu", DEFAULT_MU)
            if not self.mu > 0:
                raise ValueError("mu must be positive for the approximate DAE")
        if self.variant is Variant.ODE_DAE:
            if self.fd_step is None:
                object.__setattr__(self, "fd_step", DEFAULT_FD_STEP)
            if not self.fd_step > 0:
                raise ValueError("fd_step must be positive for the IFT form")

    @classmethod
    def dae(cls):
        return cls(Variant.DAE)

    @classmethod
    def ode_dae(cls, fd_step=DEFAULT_FD_STEP):
        return cls(Variant.ODE_DAE, fd_step=fd_step)

    @classmethod
    def approx_dae(cls, mu=DEFAULT_MU):
        return cls(Variant.APPROX_DAE, mu=mu)

    @property
    def label(self):
        if self.variant is Variant.APPROX_DAE:
            return f"{self.variant.value}(mu={self.mu:g})"
        return self.variant.value


def _factor(Ga):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(Ga, check_finite=False)
    d = np.abs(np.diag(lu))
    if not np.all(np.isfinite(d)) or d.min() <= 1e-14 * d.max():
        from .model import condition_number
        cond = condition_number(Ga)
        raise IndexViolationError(f"G_xa is singular (cond ~ {cond:.3e}); the DAE is not index one here",
                                  cond)
    return lu, piv


def ift_rhs(net, x_d, x_a, u):
    """``gt = -G_xa^{-1} G_xd f`` by one LU solve."""
    model = build_model(net)
    f = model.f(x_d, x_a, u)
    Gd, Ga = model.jac_g(x_d, x_a)
    return -scipy.linalg.lu_solve(_factor(Ga), Gd @ f, check_finite=False)


def approx_rhs(net, x_d, x_a, mu):
    """``g / mu``; the O(mu) model error is not computed."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    return build_model(net).g(x_d, x_a) / mu


_WHICH = {
    "G_xa_wrt_xd": ("Ga", "xd"), "G_xd_wrt_xd": ("Gd", "xd"),
    "G_xa_wrt_xa": ("Ga", "xa"), "G_xd_wrt_xa": ("Gd", "xa"),
    "G_xa": ("Ga", None), "G_xd": ("Gd", None),
}


def hessian_action_fd(net, which, x_d, x_a, direction, m):
    """Central difference ``[J(x + m d) - J(x - m d)] / (2m)`` of a constraint Jacobian.

    ``which`` picks the Jacobian block (``G_xa`` or ``G_xd``) and, through the
    ``_wrt_xd`` / ``_wrt_xa`` suffix, which block of the state is shifted.
    Without a suffix, ``direction`` has length ``n_d + n_a`` and shifts both.
    With a unit coordinate direction this is one slice of the 3-index Hessian.
    """
    if not m > 0:
        raise ValueError("m must be positive")
    block, part = _WHICH[which]
    model = build_model(net)
    x_d = np.asarray(x_d, float)
    x_a = np.asarray(x_a, float)
    d = np.asarray(direction, float)
    if not np.any(d):
        raise ValueError("direction must be nonzero")
    dd = np.zeros(model.n_d)
    da = np.zeros(model.n_a)
    if part == "xd":
        dd = d
    elif part == "xa":
        da = d
    else:
        dd, da = d[: model.n_d], d[model.n_d:]
    Jp = model.jac_g(x_d + m * dd, x_a + m * da)
    Jm = model.jac_g(x_d - m * dd, x_a - m * da)
    k = 0 if block == "Gd" else 1
    out = (Jp[k] - Jm[k]) / (2 * m)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite Jacobian at shifted point")
    return out


def _velocity_step(x, p, m):
    """Shift length along ``p`` so the largest relative state change is ``m``."""
    rel = np.max(np.abs(p) / (1.0 + np.abs(x)))
    return m / rel if rel > 0 else 0.0


@dataclass
class Evaluation:
    """Right-hand sides and (optionally) Jacobians of one model form at a point."""

    f: np.ndarray
    alg: np.ndarray            # g for DAE / Approx-DAE, gt for ODE-DAE
    F_xd: np.ndarray | None = None
    F_xa: np.ndarray | None = None
    alg_xd: np.ndarray | None = None
    alg_xa: np.ndarray | None = None


def evaluate(model, form: ModelForm, x_d, x_a, u, jacobian=True) -> Evaluation:
    f = model.f(x_d, x_a, u)
    if form.variant is not Variant.ODE_DAE:
        ev = Evaluation(f=f, alg=model.g(x_d, x_a))
        if jacobian:
            ev.F_xd, ev.F_xa = model.jac_f(x_d, x_a, u)
            ev.alg_xd, ev.alg_xa = model.jac_g(x_d, x_a)
        return ev

    Gd, Ga = model.jac_g(x_d, x_a)
    lu = _factor(Ga)
    gt = -scipy.linalg.lu_solve(lu, Gd @ f, check_finite=False)
    ev = Evaluation(f=f, alg=gt)
    if not jacobian:
        return ev
    Fd, Fa = model.jac_f(x_d, x_a, u)
    ev.F_xd, ev.F_xa = Fd, Fa
    x = np.concatenate([x_d, x_a])
    p = np.concatenate([f, gt])
    t = _velocity_step(x, p, form.fd_step)
    nd = model.n_d
    if t > 0:
        Gdp, Gap = model.jac_g(x_d + t * f, x_a + t * gt)
        Gdm, Gam = model.jac_g(x_d - t * f, x_a - t * gt)
        hess = np.hstack([Gdp - Gdm, Gap - Gam]) / (2 * t)
    else:
        hess = np.zeros((model.n_a, nd + model.n_a))
    rhs = hess + Gd @ np.hstack([Fd, Fa])
    Gt = -scipy.linalg.lu_solve(lu, rhs, check_finite=False)
    ev.alg_xd, ev.alg_xa = Gt[:, :nd], Gt[:, nd:]
    return ev


def ift_jacobians(net, x_d, x_a, u, m=DEFAULT_FD_STEP):
    """``(dgt/dx_d, dgt/dx_a)`` with second-derivative terms by central differences."""
    ev = evaluate(build_model(net), ModelForm.ode_dae(m), np.asarray(x_d, float),
                  np.asarray(x_a, float), np.asarray(u, float))
    return ev.alg_xd, ev.alg_xa
