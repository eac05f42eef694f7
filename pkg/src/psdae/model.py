"""Multi-machine two-axis DAE ``x_d' = f(x_d, x_a, u)``, ``0 = g(x_d, x_a)``.

State layout (grouped by quantity, m generators, n buses)::

    x_d = [delta(m), omega(m), Eq'(m), Ed'(m), T_M(m)]        n_d = 5m
    x_a = [I_d(m), I_q(m), V(n), theta(n)]                     n_a = 2m + 2n
    u   = [E_fd(m), P_ref(m)]                                  n_u = 2m

``omega`` is the absolute rotor speed in rad/s, so ``delta' = omega - omega0``.
The governor droop ``R_D`` is in Hz/pu: its input is ``(omega - omega0)/(2 pi)``.

Algebraic rows, in order: d-axis stator (m), q-axis stator (m), active power
balance (n), reactive power balance (n).  Loads are either constant power or
constant impedance (see ``LoadModel``); impedance loads are folded into the
admittance matrix.
"""
from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .network import LoadModel, PowerNetwork, admittance_matrix
from .powerflow import PowerFlowError, bus_power, power_derivatives, solve_power_flow

DYNAMIC_NAMES = ("delta", "omega", "Eqp", "Edp", "TM")
ALGEBRAIC_GEN_NAMES = ("Id", "Iq")
ALGEBRAIC_BUS_NAMES = ("V", "theta")


@dataclass(frozen=True)
class StateLayout:
    gen_buses: tuple
    bus_ids: tuple

    @classmethod
    def for_network(cls, net: PowerNetwork):
        return cls(tuple(g.bus for g in net.generators), tuple(b.id for b in net.buses))

    @property
    def n_gen(self):
        return len(self.gen_buses)

    @property
    def n_bus(self):
        return len(self.bus_ids)

    @property
    def n_d(self):
        return 5 * self.n_gen

    @property
    def n_a(self):
        return 2 * self.n_gen + 2 * self.n_bus

    def dynamic_index(self, quantity, gen_pos):
        return DYNAMIC_NAMES.index(quantity) * self.n_gen + gen_pos

    def algebraic_index(self, quantity, pos):
        if quantity in ALGEBRAIC_GEN_NAMES:
            return ALGEBRAIC_GEN_NAMES.index(quantity) * self.n_gen + pos
        return 2 * self.n_gen + ALGEBRAIC_BUS_NAMES.index(quantity) * self.n_bus + pos

    def index(self, quantity, device_id):
        """Position in the stacked ``[x_d, x_a]`` vector of ``quantity`` at a generator or bus id."""
        if quantity in DYNAMIC_NAMES:
            return self.dynamic_index(quantity, self.gen_buses.index(device_id))
        if quantity in ALGEBRAIC_GEN_NAMES:
            return self.n_d + self.algebraic_index(quantity, self.gen_buses.index(device_id))
        if quantity in ALGEBRAIC_BUS_NAMES:
            return self.n_d + self.algebraic_index(quantity, self.bus_ids.index(device_id))
        raise KeyError(quantity)

    def names(self):
        out = [f"{q}_g{b}" for q in DYNAMIC_NAMES for b in self.gen_buses]
        out += [f"{q}_g{b}" for q in ALGEBRAIC_GEN_NAMES for b in self.gen_buses]
        out += [f"{q}_b{b}" for q in ALGEBRAIC_BUS_NAMES for b in self.bus_ids]
        return out


@dataclass
class SystemState:
    x_d: np.ndarray
    x_a: np.ndarray
    layout: StateLayout

    def __post_init__(self):
        self.x_d = np.asarray(self.x_d, dtype=float)
        self.x_a = np.asarray(self.x_a, dtype=float)
        if self.x_d.shape != (self.layout.n_d,) or self.x_a.shape != (self.layout.n_a,):
            raise ValueError("state dimensions do not match layout")

    @property
    def x(self):
        return np.concatenate([self.x_d, self.x_a])

    def __getitem__(self, key):
        quantity, device_id = key
        return self.x[self.layout.index(quantity, device_id)]


@dataclass
class InputVector:
    e_fd: np.ndarray
    p_ref: np.ndarray

    @property
    def u(self):
        return np.concatenate([self.e_fd, self.p_ref])


@dataclass
class Linearization:
    E: np.ndarray
    A: np.ndarray
    B: np.ndarray


class PowerSystemModel:
    """Vectorized evaluation of f, g and their analytic Jacobians for one network.

    ``v_ref`` are the bus voltages at which impedance loads draw their rated
    power; by default ``net.load_v_ref``, else the network's own power-flow
    voltages.
    """

    def __init__(self, net: PowerNetwork, v_ref=None):
        self.net = net
        self.layout = StateLayout.for_network(net)
        m, n = net.n_gen, net.n_bus
        self.m, self.n = m, n
        self.n_d, self.n_a, self.n_u = 5 * m, 2 * m + 2 * n, 2 * m
        gen = net.generators
        arr = lambda name: np.array([getattr(g, name) for g in gen], dtype=float)
        self.M = arr("M")
        self.D = arr("D")
        self.xd = arr("x_d")
        self.xq = arr("x_q")
        self.xdp = arr("x_d_prime")
        self.xqp = arr("x_q_prime")
        self.Td0 = arr("T_d0_prime")
        self.Tq0 = arr("T_q0_prime")
        self.RD = arr("R_D")
        self.TCH = arr("T_CH")
        self.omega0 = net.omega0
        self.gb = net.gen_bus_positions()
        self.Y = admittance_matrix(net)
        self.p_load, self.q_load = net.load_vectors()
        if net.load_model is LoadModel.IMPEDANCE:
            if v_ref is None:
                v_ref = net.load_v_ref if net.load_v_ref is not None else reference_voltages(net)
            v_ref = np.asarray(v_ref, float)
            self.v_ref = v_ref
            self.Y = self.Y + np.diag((self.p_load - 1j * self.q_load) / v_ref**2)
            self.p_load = np.zeros(n)
            self.q_load = np.zeros(n)
        # generator -> bus incidence, for scattering injections onto bus rows
        self.C = np.zeros((n, m))
        self.C[self.gb, np.arange(m)] = 1.0

    # -- slicing helpers ---------------------------------------------------
    def split_d(self, x_d):
        m = self.m
        return x_d[:m], x_d[m:2 * m], x_d[2 * m:3 * m], x_d[3 * m:4 * m], x_d[4 * m:]

    def split_a(self, x_a):
        m, n = self.m, self.n
        return x_a[:m], x_a[m:2 * m], x_a[2 * m:2 * m + n], x_a[2 * m + n:]

    def _check(self, x_d, x_a, u=None):
        if np.shape(x_d) != (self.n_d,):
            raise ValueError(f"x_d has shape {np.shape(x_d)}, expected ({self.n_d},)")
        if np.shape(x_a) != (self.n_a,):
            raise ValueError(f"x_a has shape {np.shape(x_a)}, expected ({self.n_a},)")
        if u is not None and np.shape(u) != (self.n_u,):
            raise ValueError(f"u has shape {np.shape(u)}, expected ({self.n_u},)")

    # -- residuals ---------------------------------------------------------
    def f(self, x_d, x_a, u):
        self._check(x_d, x_a, u)
        delta, omega, eq, ed, tm = self.split_d(x_d)
        i_d, i_q, _, _ = self.split_a(x_a)
        efd, pref = u[: self.m], u[self.m:]
        dw = omega - self.omega0
        pe = eq * i_q + ed * i_d + (self.xqp - self.xdp) * i_d * i_q
        return np.concatenate([
            dw,
            (tm - pe - self.D * dw) / self.M,
            (-eq - (self.xd - self.xdp) * i_d + efd) / self.Td0,
            (-ed + (self.xq - self.xqp) * i_q) / self.Tq0,
            (-tm + pref - dw / (2 * np.pi * self.RD)) / self.TCH,
        ])

    def g(self, x_d, x_a):
        self._check(x_d, x_a)
        delta, _, eq, ed, _ = self.split_d(x_d)
        i_d, i_q, v, th = self.split_a(x_a)
        vg = v[self.gb]
        phi = delta - th[self.gb]
        s, c = np.sin(phi), np.cos(phi)
        stator_d = ed - vg * s + self.xqp * i_q
        stator_q = eq - vg * c - self.xdp * i_d
        pg = vg * (i_d * s + i_q * c)
        qg = vg * (i_d * c - i_q * s)
        sbus = bus_power(self.Y, v, th)
        return np.concatenate([
            stator_d,
            stator_q,
            self.C @ pg - self.p_load - sbus.real,
            self.C @ qg - self.q_load - sbus.imag,
        ])

    # -- Jacobians ---------------------------------------------------------
    def jac_f(self, x_d, x_a, u):
        self._check(x_d, x_a, u)
        m = self.m
        _, _, eq, ed, _ = self.split_d(x_d)
        i_d, i_q, _, _ = self.split_a(x_a)
        ar = np.arange(m)
        Fd = np.zeros((self.n_d, self.n_d))
        Fa = np.zeros((self.n_d, self.n_a))
        # delta
        Fd[ar, m + ar] = 1.0
        # omega
        Fd[m + ar, m + ar] = -self.D / self.M
        Fd[m + ar, 2 * m + ar] = -i_q / self.M
        Fd[m + ar, 3 * m + ar] = -i_d / self.M
        Fd[m + ar, 4 * m + ar] = 1.0 / self.M
        Fa[m + ar, ar] = -(ed + (self.xqp - self.xdp) * i_q) / self.M
        Fa[m + ar, m + ar] = -(eq + (self.xqp - self.xdp) * i_d) / self.M
        # Eq'
        Fd[2 * m + ar, 2 * m + ar] = -1.0 / self.Td0
        Fa[2 * m + ar, ar] = -(self.xd - self.xdp) / self.Td0
        # Ed'
        Fd[3 * m + ar, 3 * m + ar] = -1.0 / self.Tq0
        Fa[3 * m + ar, m + ar] = (self.xq - self.xqp) / self.Tq0
        # T_M
        Fd[4 * m + ar, m + ar] = -1.0 / (2 * np.pi * self.RD * self.TCH)
        Fd[4 * m + ar, 4 * m + ar] = -1.0 / self.TCH
        return Fd, Fa

    def jac_u(self):
        m = self.m
        ar = np.arange(m)
        Fu = np.zeros((self.n_d, self.n_u))
        Fu[2 * m + ar, ar] = 1.0 / self.Td0
        Fu[4 * m + ar, m + ar] = 1.0 / self.TCH
        return Fu

    def jac_g(self, x_d, x_a):
        self._check(x_d, x_a)
        m, n = self.m, self.n
        delta, _, _, _, _ = self.split_d(x_d)
        i_d, i_q, v, th = self.split_a(x_a)
        gb = self.gb
        vg = v[gb]
        phi = delta - th[gb]
        s, c = np.sin(phi), np.cos(phi)
        ar = np.arange(m)
        Gd = np.zeros((self.n_a, self.n_d))
        Ga = np.zeros((self.n_a, self.n_a))
        iv, it = 2 * m, 2 * m + n  # column offsets of V and theta in x_a
        rp, rq = 2 * m, 2 * m + n  # row offsets of P and Q balance

        # stator d: Ed' - V sin(phi) + xq' Iq
        Gd[ar, ar] = -vg * c
        Gd[ar, 3 * m + ar] = 1.0
        Ga[ar, m + ar] = self.xqp
        Ga[ar, iv + gb] = -s
        Ga[ar, it + gb] = vg * c
        # stator q: Eq' - V cos(phi) - xd' Id
        Gd[m + ar, ar] = vg * s
        Gd[m + ar, 2 * m + ar] = 1.0
        Ga[m + ar, ar] = -self.xdp
        Ga[m + ar, iv + gb] = -c
        Ga[m + ar, it + gb] = -vg * s

        # generator injections
        dpg_dphi = vg * (i_d * c - i_q * s)
        dqg_dphi = -vg * (i_d * s + i_q * c)
        Gd[rp + gb, ar] = dpg_dphi
        Gd[rq + gb, ar] = dqg_dphi
        Ga[rp + gb, ar] = vg * s
        Ga[rp + gb, m + ar] = vg * c
        Ga[rq + gb, ar] = vg * c
        Ga[rq + gb, m + ar] = -vg * s

        dS_dth, dS_dv = power_derivatives(self.Y, v, th)
        Ga[rp:rp + n, iv:iv + n] = -dS_dv.real
        Ga[rp:rp + n, it:it + n] = -dS_dth.real
        Ga[rq:rq + n, iv:iv + n] = -dS_dv.imag
        Ga[rq:rq + n, it:it + n] = -dS_dth.imag
        # np.add.at: several generators could share a bus in a hand-built network
        np.add.at(Ga, (rp + gb, iv + gb), i_d * s + i_q * c)
        np.add.at(Ga, (rp + gb, it + gb), -dpg_dphi)
        np.add.at(Ga, (rq + gb, iv + gb), i_d * c - i_q * s)
        np.add.at(Ga, (rq + gb, it + gb), -dqg_dphi)
        return Gd, Ga


def reference_voltages(net: PowerNetwork):
    """Power-flow bus voltages, or set-points/flat 1.0 where no power flow exists."""
    try:
        return solve_power_flow(net).v
    except PowerFlowError:
        # only reached for diagnostic, deliberately degenerate networks
        return np.array([b.v_setpoint or 1.0 for b in net.buses])


@functools.lru_cache(maxsize=64)
def _cached_model(net, v_ref):
    return PowerSystemModel(net, None if v_ref is None else np.array(v_ref))


def build_model(net: PowerNetwork, v_ref=None) -> PowerSystemModel:
    # load_v_ref is not part of network equality, so it must be part of the cache key
    v_ref = net.load_v_ref if v_ref is None else v_ref
    return _cached_model(net, None if v_ref is None else tuple(np.asarray(v_ref, float)))


def f_eval(net, x_d, x_a, u):
    return build_model(net).f(np.asarray(x_d, float), np.asarray(x_a, float), np.asarray(u, float))


def g_eval(net, x_d, x_a):
    return build_model(net).g(np.asarray(x_d, float), np.asarray(x_a, float))


def jac_f(net, x_d, x_a, u):
    return build_model(net).jac_f(np.asarray(x_d, float), np.asarray(x_a, float), np.asarray(u, float))


def jac_g(net, x_d, x_a):
    return build_model(net).jac_g(np.asarray(x_d, float), np.asarray(x_a, float))


def condition_number(G_xa):
    """1-norm condition number estimate; ``inf`` for a singular matrix."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(G_xa, check_finite=False)
    except (ValueError, np.linalg.LinAlgError):
        return np.inf
    if np.any(np.diag(lu) == 0):
        return np.inf
    inv = scipy.linalg.lu_solve((lu, piv), np.eye(G_xa.shape[0]), check_finite=False)
    return float(np.linalg.norm(G_xa, 1) * np.linalg.norm(inv, 1))


def linearize(net, x_d, x_a, u) -> Linearization:
    model = build_model(net)
    Fd, Fa = model.jac_f(x_d, x_a, u)
    Gd, Ga = model.jac_g(x_d, x_a)
    E = np.diag(np.concatenate([np.ones(model.n_d), np.zeros(model.n_a)]))
    A = np.block([[Fd, Fa], [Gd, Ga]])
    B = np.vstack([model.jac_u(), np.zeros((model.n_a, model.n_u))])
    return Linearization(E=E, A=A, B=B)


@dataclass
class RegularityResult:
    regular: bool
    witness: complex | None = None
    min_relative_pivot: float = 0.0
    zero_at_origin: bool = False

    def __bool__(self):
        return self.regular


def _relative_pivot(M):
    if not np.any(M):
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, _ = scipy.linalg.lu_factor(M, check_finite=False)
    d = np.abs(np.diag(lu))
    return float(d.min() / d.max()) if d.max() > 0 else 0.0


def check_regularity(lin: Linearization, samples: int = 16, seed: int = 0,
                     pivot_tol: float = 1e-13) -> RegularityResult:
    """Test whether the pencil ``(E, A)`` is regular, i.e. ``det(sE - A)`` is not identically zero.

    ``det(sE - A)`` is evaluated by LU at ``s = 0`` and at ``samples`` random
    complex points with log-uniform modulus in ``[1e-3, 1e3]``.  A determinant
    counts as zero when its smallest pivot is below ``pivot_tol`` relative to
    the largest pivot.  The pencil is regular if any sample is nonzero; a
    vanishing determinant at every sample is evidence of a singular pencil and
    the first sample is returned as the witness.
    """
    E, A = np.asarray(lin.E), np.asarray(lin.A)
    if E.shape != A.shape or E.shape[0] != E.shape[1]:
        raise ValueError("E and A must be square and of equal shape")
    rng = np.random.default_rng(seed)
    mod = 10.0 ** rng.uniform(-3, 3, samples)
    arg = rng.uniform(0, 2 * np.pi, samples)
    points = np.concatenate([[0.0], mod * np.exp(1j * arg)])
    pivots = np.array([_relative_pivot(s * E - A) for s in points])
    zero = pivots < pivot_tol
    if np.all(zero):
        return RegularityResult(False, complex(points[0]), float(pivots.max()), True)
    return RegularityResult(True, None, float(pivots[~zero].min()), bool(zero[0]))


@dataclass
class IndexResult:
    index_one: bool
    condition: float
    min_relative_pivot: float

    def __bool__(self):
        return self.index_one


def check_index_one(net, x_d, x_a, pivot_tol: float = 1e-10) -> IndexResult:
    """Index-1 test: ``G_xa = dg/dx_a`` LU-factorizes with no tiny pivot."""
    _, Ga = build_model(net).jac_g(np.asarray(x_d, float), np.asarray(x_a, float))
    piv = _relative_pivot(Ga) if np.all(np.isfinite(Ga)) else 0.0
    ok = piv >= pivot_tol
    return IndexResult(ok, condition_number(Ga) if ok else np.inf, piv)


def _fd_columns(fun, x, step):
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step * (1.0 + abs(x[j]))
        cols.append((fun(x + e) - fun(x - e)) / (2 * e[j]))
    return np.column_stack(cols)


def jacobian_fd_error(model: PowerSystemModel, x_d, x_a, u, step=1e-6):
    """Largest deviation of each analytic Jacobian block from central differences.

    Returned as ``{"F_xd": err, ...}`` with ``err = max|J - J_fd| / max(1, max|J|)``.
    """
    x_d, x_a, u = (np.asarray(v, float) for v in (x_d, x_a, u))
    analytic = dict(zip(("F_xd", "F_xa"), model.jac_f(x_d, x_a, u)))
    analytic.update(zip(("G_xd", "G_xa"), model.jac_g(x_d, x_a)))
    numeric = {
        "F_xd": _fd_columns(lambda z: model.f(z, x_a, u), x_d, step),
        "F_xa": _fd_columns(lambda z: model.f(x_d, z, u), x_a, step),
        "G_xd": _fd_columns(lambda z: model.g(z, x_a), x_d, step),
        "G_xa": _fd_columns(lambda z: model.g(x_d, z), x_a, step),
    }
    return {k: float(np.max(np.abs(analytic[k] - numeric[k])) / max(1.0, np.max(np.abs(analytic[k]))))
            for k in analytic}
