"""Power network data model, case-file reader and admittance matrix.

All electrical quantities are per unit on the system MVA base.
"""
from __future__ import annotations

import dataclasses
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class BusKind(str, Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"


class LoadModel(str, Enum):
    """How bus loads respond to voltage during a simulation.

    ``IMPEDANCE`` converts each load pair to a shunt admittance at the
    undisturbed power-flow voltage, ``(p_load - j q_load) / V0**2``, so it draws
    exactly ``(p_load, q_load)`` at the initial operating point.
    """

    POWER = "power"
    IMPEDANCE = "impedance"


class CaseFileError(ValueError):
    """Raised when a case file cannot be parsed."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class NetworkValidationError(ValueError):
    """Raised when a network violates one of its structural invariants."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    base_kv: float = 1.0
    v_setpoint: float | None = None
    p_load: float = 0.0
    q_load: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    series_r: float
    series_x: float
    shunt_b: float = 0.0
    tap: float = 1.0


@dataclass(frozen=True)
class GeneratorParams:
    """Two-axis machine with a first-order governor/turbine.

    ``M`` is ``2H/omega0`` so that ``M * domega/dt`` is in per-unit torque
    with ``omega`` in rad/s. ``R_D`` is in Hz/pu. ``p_gen`` is the scheduled
    active power used by the power flow (ignored at the slack bus).
    """

    bus: int
    M: float
    x_d: float
    x_q: float
    x_d_prime: float
    x_q_prime: float
    T_d0_prime: float
    T_q0_prime: float
    R_D: float
    T_CH: float
    D: float = 0.0
    p_gen: float = 0.0


@dataclass(frozen=True)
class PowerNetwork:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[GeneratorParams, ...]
    omega0: float = 120 * math.pi
    s_base: float = 100.0
    load_model: LoadModel = LoadModel.IMPEDANCE
    name: str = field(default="network", compare=False)
    # voltages at which impedance loads draw their nominal power; None means the
    # network's own power-flow voltages (set by apply_load_disturbance)
    load_v_ref: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "load_model", LoadModel(self.load_model))
        # accept lists for convenience; store tuples so the network is hashable
        for attr in ("buses", "branches", "generators"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_gen(self):
        return len(self.generators)

    def bus_index(self):
        """Map bus id -> row position."""
        return {b.id: i for i, b in enumerate(self.buses)}

    def gen_bus_positions(self):
        idx = self.bus_index()
        return np.array([idx[g.bus] for g in self.generators], dtype=int)

    def load_vectors(self):
        p = np.array([b.p_load for b in self.buses], dtype=float)
        q = np.array([b.q_load for b in self.buses], dtype=float)
        return p, q

    def total_load(self):
        p, q = self.load_vectors()
        return float(p.sum()), float(q.sum())

    def slack_position(self):
        for i, b in enumerate(self.buses):
            if b.kind is BusKind.SLACK:
                return i
        raise NetworkValidationError("no slack bus")


def _finite(x):
    return x is not None and math.isfinite(x)


def validate(net: PowerNetwork) -> PowerNetwork:
    """Check structural invariants; return ``net`` unchanged or raise."""
    if net.n_bus == 0:
        raise NetworkValidationError("empty network")
    if not (math.isfinite(net.omega0) and net.omega0 > 0):
        raise NetworkValidationError("omega0 must be positive and finite")
    if not (math.isfinite(net.s_base) and net.s_base > 0):
        raise NetworkValidationError("s_base must be positive and finite")

    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise NetworkValidationError("duplicate bus id")
    n_slack = sum(b.kind is BusKind.SLACK for b in net.buses)
    if n_slack == 0:
        raise NetworkValidationError("no slack bus")
    if n_slack > 1:
        raise NetworkValidationError(f"{n_slack} slack buses; exactly one is required")
    for b in net.buses:
        if not (_finite(b.p_load) and _finite(b.q_load)):
            raise NetworkValidationError(f"bus {b.id}: non-finite load")
        if b.kind is not BusKind.PQ:
            if not (_finite(b.v_setpoint) and b.v_setpoint > 0):
                raise NetworkValidationError(f"bus {b.id}: {b.kind.value} bus needs v_setpoint > 0")

    known = set(ids)
    for k, br in enumerate(net.branches):
        if br.from_bus not in known or br.to_bus not in known:
            raise NetworkValidationError(f"branch {k}: unknown bus {br.from_bus}-{br.to_bus}")
        if br.from_bus == br.to_bus:
            raise NetworkValidationError(f"branch {k}: from_bus == to_bus ({br.from_bus})")
        if not (math.hypot(br.series_r, br.series_x) > 0):
            raise NetworkValidationError(f"branch {br.from_bus}-{br.to_bus}: zero series impedance")
        if not (_finite(br.tap) and br.tap > 0):
            raise NetworkValidationError(f"branch {br.from_bus}-{br.to_bus}: tap must be positive")

    if not net.generators:
        raise NetworkValidationError("network has no generators")
    kinds = {b.id: b.kind for b in net.buses}
    seen = set()
    for g in net.generators:
        if g.bus not in known:
            raise NetworkValidationError(f"generator at unknown bus {g.bus}")
        if g.bus in seen:
            raise NetworkValidationError(f"bus {g.bus}: more than one generator")
        seen.add(g.bus)
        if kinds[g.bus] is BusKind.PQ:
            raise NetworkValidationError(f"generator at bus {g.bus} which is PQ")
        for name in ("M", "T_d0_prime", "T_q0_prime", "R_D", "T_CH", "x_d_prime", "x_q_prime"):
            v = getattr(g, name)
            if not (_finite(v) and v > 0):
                raise NetworkValidationError(f"generator {g.bus}: {name} must be > 0")
        if g.x_d < g.x_d_prime:
            raise NetworkValidationError(f"generator {g.bus}: x_d < x_d_prime")
        if g.x_q < g.x_q_prime:
            raise NetworkValidationError(f"generator {g.bus}: x_q < x_q_prime")
        if not (_finite(g.D) and _finite(g.p_gen)):
            raise NetworkValidationError(f"generator {g.bus}: non-finite D or p_gen")
    for b in net.buses:
        if b.kind is not BusKind.PQ and b.id not in seen:
            raise NetworkValidationError(f"bus {b.id}: {b.kind.value} bus without generator")

    for bus_id in unreachable_buses(net):
        raise NetworkValidationError(
            f"disconnected load bus {bus_id}: no path to any generator bus")
    return net


def unreachable_buses(net: PowerNetwork) -> list[int]:
    """Bus ids with no branch path to a generator bus (breadth-first search)."""
    adj = {b.id: [] for b in net.buses}
    for br in net.branches:
        if br.from_bus in adj and br.to_bus in adj:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    start = [g.bus for g in net.generators if g.bus in adj]
    seen = set(start)
    queue = deque(start)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return [b.id for b in net.buses if b.id not in seen]


def admittance_matrix(net: PowerNetwork) -> np.ndarray:
    """Bus admittance matrix with the off-nominal tap on the from side.

    For a branch with series admittance ``y``, charging ``b`` and tap ``t``:
    ``Yff = (y + jb/2)/t**2``, ``Ytt = y + jb/2``, ``Yft = Ytf = -y/t``.
    """
    idx = net.bus_index()
    n = net.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.series_r, br.series_x)
        ysh = 0.5j * br.shunt_b
        t = br.tap
        Y[i, i] += (y + ysh) / t**2
        Y[j, j] += y + ysh
        Y[i, j] -= y / t
        Y[j, i] -= y / t
    return Y


def apply_load_disturbance(net: PowerNetwork, alpha_L: float) -> PowerNetwork:
    """Scale every load pair by ``1 + alpha_L/100``.

    Impedance loads keep the reference voltages of the undisturbed network,
    so their admittance scales by the same factor.
    """
    if not math.isfinite(alpha_L):
        raise ValueError("alpha_L must be finite")
    scale = 1.0 + alpha_L / 100.0
    buses = tuple(
        dataclasses.replace(b, p_load=b.p_load * scale, q_load=b.q_load * scale)
        for b in net.buses
    )
    v_ref = net.load_v_ref
    if v_ref is None and net.load_model is LoadModel.IMPEDANCE:
        from .model import reference_voltages
        v_ref = tuple(float(v) for v in reference_voltages(net))
    return dataclasses.replace(net, buses=buses, load_v_ref=v_ref)


# ---------------------------------------------------------------------------
# case files

_BUS_FIELDS = ("id", "kind", "base_kv", "v_setpoint", "p_load", "q_load")
_BRANCH_FIELDS = ("from_bus", "to_bus", "series_r", "series_x", "shunt_b", "tap")
_GEN_FIELDS = tuple(f.name for f in dataclasses.fields(GeneratorParams))

_TABLES = {
    "buses": (Bus, _BUS_FIELDS, {"id"}),
    "branches": (Branch, _BRANCH_FIELDS, {"from_bus", "to_bus", "series_r", "series_x"}),
    "generators": (GeneratorParams, _GEN_FIELDS,
                   {"bus", "M", "x_d", "x_q", "x_d_prime", "x_q_prime",
                    "T_d0_prime", "T_q0_prime", "R_D", "T_CH"}),
}
_INT_FIELDS = {"id", "from_bus", "to_bus", "bus"}


def _convert(name, token):
    if name in _INT_FIELDS:
        return int(token)
    if name == "kind":
        for k in BusKind:
            if token.lower() == k.value.lower():
                return k
        raise ValueError(f"unknown bus kind {token!r}")
    if token in ("-", "none", "None"):
        return None
    return float(token)


def parse_case(text: str, path=None) -> PowerNetwork:
    """Parse case-file text (see ``cases/wscc9.case`` for the layout)."""
    header = {}
    records = {name: [] for name in _TABLES}
    section = None
    columns = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _TABLES:
                raise CaseFileError(f"unknown section [{section}]", lineno, path)
            columns = None
            continue
        if section is None:
            if "=" not in line:
                raise CaseFileError(f"expected 'key = value' in header, got {line!r}", lineno, path)
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in ("omega0", "s_base", "name", "load_model"):
                raise CaseFileError(f"unknown header key {key!r}", lineno, path)
            if key == "name":
                header[key] = value
            elif key == "load_model":
                try:
                    header[key] = LoadModel(value.lower())
                except ValueError:
                    raise CaseFileError(f"load_model must be 'power' or 'impedance', got {value!r}",
                                        lineno, path) from None
            else:
                try:
                    header[key] = float(value)
                except ValueError:
                    raise CaseFileError(f"{key}: not a number: {value!r}", lineno, path) from None
            continue

        cls, allowed, required = _TABLES[section]
        tokens = line.split()
        if columns is None:
            unknown = [t for t in tokens if t not in allowed]
            if unknown:
                raise CaseFileError(f"[{section}] unknown column(s) {unknown}", lineno, path)
            missing = sorted(required - set(tokens))
            if missing:
                raise CaseFileError(f"[{section}] missing column(s) {missing}", lineno, path)
            columns = tokens
            continue
        if len(tokens) != len(columns):
            raise CaseFileError(
                f"[{section}] expected {len(columns)} fields, got {len(tokens)}", lineno, path)
        kwargs = {}
        for name, tok in zip(columns, tokens):
            try:
                kwargs[name] = _convert(name, tok)
            except ValueError as exc:
                raise CaseFileError(f"[{section}] field {name}: {exc}", lineno, path) from None
        if section == "buses" and "kind" not in kwargs:
            kwargs["kind"] = BusKind.PQ
        if section == "generators" and kwargs.get("D") is None:
            kwargs.pop("D", None)
        records[section].append(cls(**kwargs))

    net = PowerNetwork(
        buses=records["buses"],
        branches=records["branches"],
        generators=records["generators"],
        omega0=header.get("omega0", 120 * math.pi),
        s_base=header.get("s_base", 100.0),
        load_model=header.get("load_model", LoadModel.IMPEDANCE),
        name=header.get("name", Path(path).stem if path else "network"),
    )
    return validate(net)


def load_case(path) -> PowerNetwork:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CaseFileError(f"cannot read case file: {exc.strerror}", path=path) from None
    return parse_case(text, path=path)


def format_case(net: PowerNetwork) -> str:
    """Serialize ``net`` in the case-file format (round-trips through parse_case)."""
    out = [f"name = {net.name}", f"omega0 = {net.omega0!r}", f"s_base = {net.s_base!r}",
           f"load_model = {net.load_model.value}", ""]

    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, BusKind):
            return v.value
        return repr(v)

    for section, (cls, fields, _) in _TABLES.items():
        rows = {"buses": net.buses, "branches": net.branches, "generators": net.generators}[section]
        out.append(f"[{section}]")
        out.append(" ".join(fields))
        for r in rows:
            out.append(" ".join(fmt(getattr(r, f)) for f in fields))
        out.append("")
    return "\n".join(out)
