"""Microgrid network description and assembly of the linear swing model.

A network is a set of buses (synchronous generators or droop-controlled
inverters) joined by dominantly inductive lines.  Small-angle linearization
around the desired operating point gives the state-space model

    xdot = A x + B2 u + B1 d,    x = [theta_hat; omega_hat],

with A = [[0, I], [-M^-1 L, -M^-1 D]], B2 = [0; M^-1], B1 = [0; M^-1 V^2].
L is the voltage-weighted graph Laplacian built from positive line couplings
b = X / (R^2 + X^2), so L is symmetric PSD with a single zero eigenvalue on a
connected network.

Units: angles in rad, frequencies in rad/s, powers in p.u.  Droop
coefficients arrive in Hz per p.u. and are converted by 2*pi on ingestion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError

TWO_PI = 2.0 * math.pi

SYNCHRONOUS_GENERATOR = "synchronous-generator"
DROOP_INVERTER = "droop-inverter"
_BUS_KINDS = (SYNCHRONOUS_GENERATOR, DROOP_INVERTER)

_BUS_FIELDS = {
    "id", "kind", "lambda_p_hz_per_pu", "tau_s", "inertia", "damping",
    "voltage_pu", "g_shunt_pu", "theta0_rad",
}
_LINE_FIELDS = {"from", "to", "r_pu", "x_pu"}


@dataclass(frozen=True)
class BusSpec:
    """One node of the network.

    Inverters carry a droop coefficient (Hz/p.u.) and a power-measurement
    filter time constant (s); generators carry inertia and damping directly
    in the internal unit system.
    """

    id: int
    kind: str
    lambda_p_hz_per_pu: float | None = None
    tau_s: float | None = None
    inertia: float | None = None
    damping: float | None = None
    voltage_pu: float = 1.0
    g_shunt_pu: float = 0.0
    theta0_rad: float = 0.0

    def __post_init__(self) -> None:
        name = f"bus {self.id}"
        if self.kind not in _BUS_KINDS:
            raise ConfigError(f"{name}: unknown kind {self.kind!r} "
                              f"(expected one of {_BUS_KINDS})")
        if self.voltage_pu <= 0.0:
            raise ConfigError(f"{name}: non-positive voltage_pu {self.voltage_pu}")
        if self.kind == DROOP_INVERTER:
            if self.lambda_p_hz_per_pu is None:
                raise ConfigError(f"{name}: missing field 'lambda_p_hz_per_pu' for droop-inverter")
            if self.tau_s is None:
                raise ConfigError(f"{name}: missing field 'tau_s' for droop-inverter")
            if self.lambda_p_hz_per_pu <= 0.0:
                raise ConfigError(f"{name}: non-positive lambda_p_hz_per_pu {self.lambda_p_hz_per_pu}")
            if self.tau_s <= 0.0:
                raise ConfigError(f"{name}: non-positive tau_s {self.tau_s}")
            if self.inertia is not None or self.damping is not None:
                raise ConfigError(f"{name}: inertia/damping are generator fields, "
                                  "not valid on a droop-inverter")
        else:
            if self.inertia is None:
                raise ConfigError(f"{name}: missing field 'inertia' for synchronous-generator")
            if self.damping is None:
                raise ConfigError(f"{name}: missing field 'damping' for synchronous-generator")
            if self.inertia <= 0.0:
                raise ConfigError(f"{name}: non-positive inertia {self.inertia}")
            if self.damping <= 0.0:
                raise ConfigError(f"{name}: non-positive damping {self.damping}")
            if self.lambda_p_hz_per_pu is not None or self.tau_s is not None:
                raise ConfigError(f"{name}: lambda_p_hz_per_pu/tau_s are inverter fields, "
                                  "not valid on a synchronous-generator")


@dataclass(frozen=True)
class LineSpec:
    """An inductive line between two buses, impedance (R, X) in p.u."""

    from_bus: int
    to_bus: int
    r_pu: float
    x_pu: float

    def __post_init__(self) -> None:
        name = f"line ({self.from_bus}, {self.to_bus})"
        if self.from_bus == self.to_bus:
            raise ConfigError(f"{name}: endpoints must differ")
        if self.x_pu <= 0.0:
            raise ConfigError(f"{name}: non-positive reactance x_pu {self.x_pu}")


@dataclass(frozen=True)
class NetworkSpec:
    """Validated network: buses indexed 0..n-1, connected line graph."""

    buses: tuple[BusSpec, ...]
    lines: tuple[LineSpec, ...]
    desired_frequency_hz: float

    def __post_init__(self) -> None:
        if self.desired_frequency_hz <= 0.0:
            raise ConfigError(f"network: non-positive desired_frequency_hz "
                              f"{self.desired_frequency_hz}")
        n = len(self.buses)
        if n == 0:
            raise ConfigError("network: no buses")
        ids = sorted(b.id for b in self.buses)
        if ids != list(range(n)):
            raise ConfigError(f"network: bus ids must be 0..{n - 1} with no gaps, got {ids}")
        object.__setattr__(self, "buses",
                           tuple(sorted(self.buses, key=lambda b: b.id)))
        seen: set[tuple[int, int]] = set()
        for line in self.lines:
            for end in (line.from_bus, line.to_bus):
                if not 0 <= end < n:
                    raise ConfigError(f"line ({line.from_bus}, {line.to_bus}): "
                                      f"unknown bus {end}")
            key = (min(line.from_bus, line.to_bus), max(line.from_bus, line.to_bus))
            if key in seen:
                raise ConfigError(f"line ({line.from_bus}, {line.to_bus}): duplicate line")
            seen.add(key)
        if n > 1:
            unreachable = _unreachable_from_zero(n, self.lines)
            if unreachable:
                raise ConfigError(f"network: disconnected "
                                  f"(bus {unreachable[0]} unreachable from bus 0)")

    @property
    def n(self) -> int:
        return len(self.buses)

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Power-network neighbor set of bus i."""
        out = set()
        for line in self.lines:
            if line.from_bus == i:
                out.add(line.to_bus)
            elif line.to_bus == i:
                out.add(line.from_bus)
        return tuple(sorted(out))


def _unreachable_from_zero(n: int, lines) -> list[int]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for line in lines:
        adj[line.from_bus].append(line.to_bus)
        adj[line.to_bus].append(line.from_bus)
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in adj[i]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return sorted(set(range(n)) - seen)


@dataclass(frozen=True, eq=False)
class LinearModel:
    """State-space model of the linearized swing dynamics.

    A is 2n x 2n, B1 and B2 are 2n x n.  M, D, V are positive diagonal and L
    is the symmetric PSD voltage-weighted Laplacian.
    """

    n: int
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    M: np.ndarray
    D: np.ndarray
    L: np.ndarray
    V: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.A, self.B1, self.B2, self.M, self.D, self.L, self.V):
            arr.setflags(write=False)

    @property
    def m_diag(self) -> np.ndarray:
        return np.diag(self.M)

    @property
    def d_diag(self) -> np.ndarray:
        return np.diag(self.D)

    @property
    def v_diag(self) -> np.ndarray:
        return np.diag(self.V)


def line_coupling(line: LineSpec) -> float:
    """Positive coupling strength b = X / (R^2 + X^2) of a line.

    This is the magnitude of the imaginary part of the inverse impedance;
    the sign convention keeps the assembled Laplacian PSD.
    """
    return line.x_pu / (line.r_pu ** 2 + line.x_pu ** 2)


def inertia_damping(bus: BusSpec) -> tuple[float, float]:
    """(M_i, D_i) of a bus in internal units (rad/s, p.u.).

    For inverters M = tau / lambda and D = 1 / lambda with the droop
    coefficient converted from Hz/p.u. to rad/s per p.u. first.  Generators
    store M and D directly.
    """
    if bus.kind == DROOP_INVERTER:
        lam = bus.lambda_p_hz_per_pu * TWO_PI
        return bus.tau_s / lam, 1.0 / lam
    return bus.inertia, bus.damping


def assemble_laplacian(spec: NetworkSpec) -> np.ndarray:
    """Voltage-weighted Laplacian: L_ij = -b_ij v_i v_j, rows sum to zero."""
    n = spec.n
    v = np.array([b.voltage_pu for b in spec.buses])
    lap = np.zeros((n, n))
    for line in spec.lines:
        i, j = line.from_bus, line.to_bus
        w = line_coupling(line) * v[i] * v[j]
        lap[i, j] -= w
        lap[j, i] -= w
        lap[i, i] += w
        lap[j, j] += w
    return lap


def assemble_state_space(spec: NetworkSpec) -> LinearModel:
    """Build the LinearModel for a validated network."""
    n = spec.n
    md = np.array([inertia_damping(b) for b in spec.buses])
    m, d = md[:, 0], md[:, 1]
    v = np.array([b.voltage_pu for b in spec.buses])
    lap = assemble_laplacian(spec)

    a = np.zeros((2 * n, 2 * n))
    a[:n, n:] = np.eye(n)
    a[n:, :n] = -lap / m[:, None]
    a[n:, n:] = np.diag(-d / m)

    b2 = np.zeros((2 * n, n))
    b2[n:, :] = np.diag(1.0 / m)
    b1 = np.zeros((2 * n, n))
    b1[n:, :] = np.diag(v ** 2 / m)

    return LinearModel(n=n, A=a, B1=b1, B2=b2,
                       M=np.diag(m), D=np.diag(d), L=lap, V=np.diag(v))


def setpoint_offset(spec: NetworkSpec, i: int) -> float:
    """Constant c_i such that applying P_set = u - c_i cancels the constant
    forcing (shunt load and initial-angle coupling) in the shifted dynamics.

    c_i = -G_ii v_i^2 - sum_j v_i v_j b_ij (theta0_i - theta0_j).
    """
    return float(setpoint_offsets(spec)[i])


def setpoint_offsets(spec: NetworkSpec) -> np.ndarray:
    """Vector of set-point offsets c for all buses."""
    n = spec.n
    v = np.array([b.voltage_pu for b in spec.buses])
    theta0 = np.array([b.theta0_rad for b in spec.buses])
    c = np.array([-b.g_shunt_pu * b.voltage_pu ** 2 for b in spec.buses])
    for line in spec.lines:
        i, j = line.from_bus, line.to_bus
        w = line_coupling(line) * v[i] * v[j]
        c[i] -= w * (theta0[i] - theta0[j])
        c[j] -= w * (theta0[j] - theta0[i])
    return c


def _require_fields(entry: dict, allowed: set, required: set, name: str) -> None:
    unknown = set(entry) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown field(s) {sorted(unknown)}")
    missing = required - set(entry)
    if missing:
        raise ConfigError(f"{name}: missing field(s) {sorted(missing)}")


def network_from_dict(doc: dict) -> NetworkSpec:
    """Build a validated NetworkSpec from a parsed configuration document."""
    if not isinstance(doc, dict):
        raise ConfigError("network: document must be a mapping")
    for section in ("buses", "lines", "desired_frequency_hz"):
        if section not in doc:
            raise ConfigError(f"network: missing section '{section}'")

    buses = []
    for idx, entry in enumerate(doc["buses"]):
        name = f"bus entry {idx}"
        if not isinstance(entry, dict):
            raise ConfigError(f"{name}: must be a mapping")
        _require_fields(entry, _BUS_FIELDS, {"id", "kind"}, name)
        buses.append(BusSpec(
            id=int(entry["id"]),
            kind=str(entry["kind"]),
            lambda_p_hz_per_pu=_opt_float(entry, "lambda_p_hz_per_pu"),
            tau_s=_opt_float(entry, "tau_s"),
            inertia=_opt_float(entry, "inertia"),
            damping=_opt_float(entry, "damping"),
            voltage_pu=float(entry.get("voltage_pu", 1.0)),
            g_shunt_pu=float(entry.get("g_shunt_pu", 0.0)),
            theta0_rad=float(entry.get("theta0_rad", 0.0)),
        ))

    lines = []
    for idx, entry in enumerate(doc["lines"] or []):
        name = f"line entry {idx}"
        if not isinstance(entry, dict):
            raise ConfigError(f"{name}: must be a mapping")
        _require_fields(entry, _LINE_FIELDS, _LINE_FIELDS, name)
        lines.append(LineSpec(
            from_bus=int(entry["from"]),
            to_bus=int(entry["to"]),
            r_pu=float(entry["r_pu"]),
            x_pu=float(entry["x_pu"]),
        ))

    return NetworkSpec(buses=tuple(buses), lines=tuple(lines),
                       desired_frequency_hz=float(doc["desired_frequency_hz"]))


def _opt_float(entry: dict, key: str) -> float | None:
    return None if entry.get(key) is None else float(entry[key])


def network_to_dict(spec: NetworkSpec) -> dict:
    """Inverse of network_from_dict (None fields omitted)."""
    buses = []
    for b in spec.buses:
        entry = {"id": b.id, "kind": b.kind,
                 "voltage_pu": b.voltage_pu, "g_shunt_pu": b.g_shunt_pu,
                 "theta0_rad": b.theta0_rad}
        if b.kind == DROOP_INVERTER:
            entry["lambda_p_hz_per_pu"] = b.lambda_p_hz_per_pu
            entry["tau_s"] = b.tau_s
        else:
            entry["inertia"] = b.inertia
            entry["damping"] = b.damping
        buses.append(entry)
    lines = [{"from": ln.from_bus, "to": ln.to_bus,
              "r_pu": ln.r_pu, "x_pu": ln.x_pu} for ln in spec.lines]
    return {"desired_frequency_hz": spec.desired_frequency_hz,
            "buses": buses, "lines": lines}


def parse_network(document) -> NetworkSpec:
    """Parse a configuration document (YAML text or an already-parsed mapping)."""
    if isinstance(document, str):
        try:
            doc = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise ConfigError(f"network: invalid document ({exc})") from exc
    else:
        doc = document
    if isinstance(doc, dict) and "options" in doc:
        doc = {k: v for k, v in doc.items() if k != "options"}
    return network_from_dict(doc)


def serialize_network(spec: NetworkSpec) -> str:
    """Canonical YAML form; parse_network(serialize_network(s)) == s."""
    return yaml.safe_dump(network_to_dict(spec), sort_keys=True)


def load_network(path) -> NetworkSpec:
    """Read and parse a network configuration file."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_network(fh.read())
