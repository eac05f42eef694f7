"""Newton-Raphson power flow and equilibrium initialization of the machine DAE."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .network import BusKind, PowerNetwork, admittance_matrix


class PowerFlowError(RuntimeError):
    """Power flow did not converge or its Jacobian is singular."""

    def __init__(self, message, iterations=None, mismatch=None):
        super().__init__(message)
        self.iterations = iterations
        self.mismatch = mismatch


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PowerFlowSolution:
    v: np.ndarray
    theta: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray
    iterations: int
    mismatch: float


def bus_power(Y, v, theta):
    """Complex power injected into the network at every bus."""
    vc = v * np.exp(1j * theta)
    return vc * np.conj(Y @ vc)


def power_derivatives(Y, v, theta):
    """dS/dtheta and dS/dV of the injected bus power (polar coordinates)."""
    vc = v * np.exp(1j * theta)
    ibus = Y @ vc
    dv = np.diag(vc)
    dS_dtheta = 1j * dv @ np.conj(np.diag(ibus) - Y * vc[None, :])
    vnorm = np.exp(1j * theta)
    dS_dv = dv @ np.conj(Y * vnorm[None, :]) + np.diag(np.conj(ibus) * vnorm)
    return dS_dtheta, dS_dv


def solve_power_flow(net: PowerNetwork, tol: float = 1e-8, max_iter: int = 50) -> PowerFlowSolution:
    """Polar Newton-Raphson power flow from a flat start.

    PV buses hold their generator's ``p_gen`` and ``v_setpoint``; the slack
    bus holds its voltage and angle 0.  No reactive limits are enforced.
    """
    Y = admittance_matrix(net)
    n = net.n_bus
    kinds = [b.kind for b in net.buses]
    p_load, q_load = net.load_vectors()
    pos = net.bus_index()
    p_sched = np.zeros(n)
    for g in net.generators:
        p_sched[pos[g.bus]] += g.p_gen
    p_spec = p_sched - p_load
    q_spec = -q_load

    v = np.ones(n)
    theta = np.zeros(n)
    for i, b in enumerate(net.buses):
        if b.kind is not BusKind.PQ:
            v[i] = b.v_setpoint

    pv_pq = np.array([i for i, k in enumerate(kinds) if k is not BusKind.SLACK], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)

    def mismatch():
        s = bus_power(Y, v, theta)
        return np.concatenate([s.real[pv_pq] - p_spec[pv_pq], s.imag[pq] - q_spec[pq]])

    dF = mismatch()
    err = float(np.max(np.abs(dF))) if dF.size else 0.0
    it = 0
    while err > tol:
        if it >= max_iter:
            raise PowerFlowError(
                f"power flow did not converge in {max_iter} iterations "
                f"(max mismatch {err:.3e} pu)", it, err)
        dS_dth, dS_dv = power_derivatives(Y, v, theta)
        J = np.block([
            [dS_dth.real[np.ix_(pv_pq, pv_pq)], dS_dv.real[np.ix_(pv_pq, pq)]],
            [dS_dth.imag[np.ix_(pq, pv_pq)], dS_dv.imag[np.ix_(pq, pq)]],
        ])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(J, check_finite=False)
        d = np.abs(np.diag(lu))
        if not np.all(np.isfinite(d)) or d.min() <= 1e-12 * d.max():
            raise PowerFlowError("singular power-flow Jacobian", it, err)
        dx = scipy.linalg.lu_solve((lu, piv), dF, check_finite=False)
        theta[pv_pq] -= dx[: pv_pq.size]
        v[pq] -= dx[pv_pq.size:]
        it += 1
        dF = mismatch()
        err = float(np.max(np.abs(dF)))
        if not np.isfinite(err) or np.any(v <= 0):
            raise PowerFlowError(f"power flow diverged at iteration {it}", it, err)

    s = bus_power(Y, v, theta)
    gp = net.gen_bus_positions()
    p_gen = s.real[gp] + p_load[gp]
    q_gen = s.imag[gp] + q_load[gp]
    return PowerFlowSolution(v=v, theta=theta, p_gen=p_gen, q_gen=q_gen,
                             iterations=it, mismatch=err)


def initialize_dynamic_state(net: PowerNetwork, pf: PowerFlowSolution):
    """Equilibrium machine states and inputs consistent with a power flow.

    Returns ``(SystemState, InputVector)``.  Stator resistance is zero.
    """
    from .model import InputVector, StateLayout, SystemState

    gp = net.gen_bus_positions()
    gen = net.generators
    xq = np.array([g.x_q for g in gen])
    xd = np.array([g.x_d for g in gen])
    xdp = np.array([g.x_d_prime for g in gen])
    xqp = np.array([g.x_q_prime for g in gen])

    vt = pf.v[gp] * np.exp(1j * pf.theta[gp])
    it = np.conj((pf.p_gen + 1j * pf.q_gen) / vt)
    e = vt + 1j * xq * it
    delta = np.angle(e)
    idq = it * np.exp(-1j * (delta - np.pi / 2))
    i_d, i_q = idq.real, idq.imag
    phi = delta - pf.theta[gp]
    vd = pf.v[gp] * np.sin(phi)
    vq = pf.v[gp] * np.cos(phi)

    ed_p = vd - xqp * i_q
    eq_p = vq + xdp * i_d
    if np.max(np.abs(ed_p - (xq - xqp) * i_q)) > 1e-8:
        raise InitializationError("stator equations inconsistent with power-flow dispatch")
    e_fd = eq_p + (xd - xdp) * i_d
    t_m = eq_p * i_q + ed_p * i_d + (xqp - xdp) * i_d * i_q
    p_ref = t_m.copy()
    omega = np.full(len(gen), net.omega0)

    layout = StateLayout.for_network(net)
    x_d = np.concatenate([delta, omega, eq_p, ed_p, t_m])
    x_a = np.concatenate([i_d, i_q, pf.v, pf.theta])
    return SystemState(x_d, x_a, layout), InputVector(e_fd, p_ref)
