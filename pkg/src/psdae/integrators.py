"""Fixed-step BDF (orders 1-5) and trapezoidal residuals for the three model forms."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb

import numpy as np

from .transforms import ModelForm, Variant, evaluate

MAX_BDF_ORDER = 5


@lru_cache(maxsize=None)
def _bdf_fractions(k_g):
    beta = 1 / sum(Fraction(1, s) for s in range(1, k_g + 1))
    alpha = tuple(
        (-1) ** (s - 1) * beta * sum(Fraction(comb(j, s), j) for j in range(s, k_g + 1))
        for s in range(1, k_g + 1)
    )
    return beta, alpha


def bdf_constants(k_g: int):
    """``(beta, alpha)`` of the order-``k_g`` BDF, exact in rational arithmetic.

    The scheme reads ``x_k - sum_s alpha[s-1] x_{k-s} = beta h f(x_k)``.
    """
    if not isinstance(k_g, (int, np.integer)) or not 1 <= k_g <= MAX_BDF_ORDER:
        raise ValueError(f"BDF order must be an integer in 1..{MAX_BDF_ORDER}, got {k_g!r}")
    beta, alpha = _bdf_fractions(int(k_g))
    return float(beta), np.array([float(a) for a in alpha])


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "bdf"     # "bdf" or "ti"
    order: int = 2          # BDF order; 1 is backward Euler; ignored for "ti"
    h: float = 0.1

    def __post_init__(self):
        s = self.scheme.lower()
        if s in ("be", "euler"):
            s = "bdf"
            object.__setattr__(self, "order", 1)
        if s in ("trap", "trapezoidal"):
            s = "ti"
        if s not in ("bdf", "ti"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        object.__setattr__(self, "scheme", s)
        if s == "ti":
            object.__setattr__(self, "order", 1)
        elif not 1 <= self.order <= MAX_BDF_ORDER:
            raise ValueError(f"BDF order must be in 1..{MAX_BDF_ORDER}")
        if not self.h > 0:
            raise ValueError("step size must be positive")

    @classmethod
    def bdf(cls, order, h):
        return cls("bdf", order, h)

    @classmethod
    def trapezoidal(cls, h):
        return cls("ti", 1, h)

    @property
    def is_bdf(self):
        return self.scheme == "bdf"

    @property
    def beta(self):
        return bdf_constants(self.order)[0] if self.is_bdf else None

    @property
    def alpha(self):
        return bdf_constants(self.order)[1] if self.is_bdf else np.array([1.0])

    @property
    def h_tilde(self):
        return self.beta * self.h if self.is_bdf else 0.5 * self.h

    @property
    def lookback(self):
        return self.order if self.is_bdf else 1

    @property
    def label(self):
        if not self.is_bdf:
            return "TI"
        return "BE" if self.order == 1 else f"BDF{self.order}"

    def at_order(self, order):
        return self if not self.is_bdf or order == self.order else SchemeConfig("bdf", order, self.h)


def startup_schedule(k_g: int, n_steps: int):
    """Orders used by the first ``n_steps`` steps: 1, 2, ..., k_g, k_g, ..."""
    if k_g < 1:
        raise ValueError("order must be >= 1")
    return [min(n, k_g) for n in range(1, n_steps + 1)]


class InsufficientHistoryError(ValueError):
    pass


class History:
    """The last accepted states, newest first, with their right-hand sides.

    ``f`` and ``alg`` (``g`` or ``gt`` depending on the form) of the newest
    entry are kept so the trapezoidal rule does not re-evaluate them.
    """

    def __init__(self, maxlen=MAX_BDF_ORDER):
        self.states = deque(maxlen=maxlen)
        self.f_prev = None
        self.alg_prev = None

    def __len__(self):
        return len(self.states)

    def push(self, x, f=None, alg=None):
        self.states.appendleft(np.array(x, dtype=float))
        self.f_prev = f
        self.alg_prev = alg

    @classmethod
    def seeded(cls, model, form, x0, u, maxlen=MAX_BDF_ORDER):
        hist = cls(maxlen)
        ev = evaluate(model, form, x0[: model.n_d], x0[model.n_d:], u, jacobian=False)
        hist.push(x0, ev.f, ev.alg)
        return hist

    def predictor(self, scheme: SchemeConfig):
        """``sum_s alpha_s x_{k-s}`` (BDF) or ``x_{k-1}`` (TI)."""
        if len(self.states) < scheme.lookback:
            raise InsufficientHistoryError(
                f"{scheme.label} needs {scheme.lookback} past states, have {len(self.states)}")
        if not scheme.is_bdf:
            return self.states[0]
        alpha = scheme.alpha
        out = alpha[0] * self.states[0]
        for s in range(1, scheme.order):
            out = out + alpha[s] * self.states[s]
        return out


def residual_from_eval(model, form: ModelForm, scheme: SchemeConfig, hist: History, x, ev):
    nd = model.n_d
    ht = scheme.h_tilde
    pred = hist.predictor(scheme)
    xd, xa = x[:nd], x[nd:]
    pd, pa = pred[:nd], pred[nd:]
    if scheme.is_bdf:
        f_term, alg_term = ev.f, ev.alg
    else:
        if hist.f_prev is None or hist.alg_prev is None:
            raise InsufficientHistoryError("trapezoidal rule needs the previous right-hand side")
        f_term, alg_term = ev.f + hist.f_prev, ev.alg + hist.alg_prev
    phi_d = xd - pd - ht * f_term
    if form.variant is Variant.DAE:
        phi_a = -ht * alg_term
    elif form.variant is Variant.ODE_DAE:
        phi_a = xa - pa - ht * alg_term
    else:
        phi_a = form.mu * (xa - pa) - ht * alg_term
    return np.concatenate([phi_d, phi_a])


def residual(model, form: ModelForm, scheme: SchemeConfig, hist: History, x, u):
    """Stacked discrete residual ``phi(x_k)`` of one implicit step.

    Differential rows ``x_d,k - sum alpha_s x_d,k-s - h~ f`` (BDF) or
    ``x_d,k - x_d,k-1 - h~ (f_k + f_k-1)`` (TI).  Algebraic rows:

    ==========  ====================================  ==========================================
    form        BDF                                   TI
    ==========  ====================================  ==========================================
    DAE         ``-h~ g_k``                           ``-h~ (g_k + g_k-1)``
    ODE-DAE     ``x_a,k - sum alpha_s x_a,k-s - h~ gt_k``  ``x_a,k - x_a,k-1 - h~ (gt_k + gt_k-1)``
    Approx-DAE  ``mu (x_a,k - sum alpha_s x_a,k-s) - h~ g_k``  ``mu (x_a,k - x_a,k-1) - h~ (g_k + g_k-1)``
    ==========  ====================================  ==========================================
    """
    x = np.asarray(x, float)
    ev = evaluate(model, form, x[: model.n_d], x[model.n_d:], np.asarray(u, float), jacobian=False)
    return residual_from_eval(model, form, scheme, hist, x, ev)
