"""Frequency safety layer: barrier functions, robust control bounds, the
minimal-deviation filter, and the cross-layer information topology.

Per node the frequency band -omega_l <= omega_hat <= omega_h is encoded by
two barriers h1 = omega_hat + omega_l and h2 = omega_h - omega_hat.  Keeping
both nonnegative under every bounded disturbance |d| <= d_s reduces to an
interval constraint lo <= u <= hi on the node's power set-point, and the
filter projects the nominal control onto that interval in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CbfInfeasibleError, ConfigError
from .network import TWO_PI, NetworkSpec

FILTER_INACTIVE = 0
FILTER_CLAMPED_LO = 1
FILTER_CLAMPED_HI = 2
FILTER_INFEASIBLE = 3
FILTER_STATUS_NAMES = ("inactive", "clamped-lo", "clamped-hi", "infeasible-fallback")


@dataclass(frozen=True)
class SafetyEnvelope:
    """Safety contract: band edges (rad/s), linear class-K slopes (1/s) and
    the disturbance bound (p.u.)."""

    omega_l: float
    omega_h: float
    eta1: float
    eta2: float
    d_s: float

    def __post_init__(self) -> None:
        for name in ("omega_l", "omega_h", "eta1", "eta2"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"envelope: {name} must be > 0")
        if self.d_s < 0.0:
            raise ConfigError(f"envelope: d_s must be >= 0, got {self.d_s}")

    @classmethod
    def from_hz(cls, band_hz: float, eta1: float, eta2: float,
                d_s: float) -> "SafetyEnvelope":
        """Symmetric band of +-band_hz around the desired frequency."""
        return cls(omega_l=band_hz * TWO_PI, omega_h=band_hz * TWO_PI,
                   eta1=eta1, eta2=eta2, d_s=d_s)

    def widened(self, factor: float) -> "SafetyEnvelope":
        return SafetyEnvelope(omega_l=self.omega_l * factor,
                              omega_h=self.omega_h * factor,
                              eta1=self.eta1, eta2=self.eta2, d_s=self.d_s)


@dataclass(frozen=True)
class ControlBounds:
    """Closed interval of power set-points satisfying both robust barrier
    conditions; empty (lo > hi) when the band is too narrow for d_s."""

    lo: float
    hi: float

    @property
    def feasible(self) -> bool:
        return self.lo <= self.hi


def barrier_values(omega_hat_i: float, env: SafetyEnvelope) -> tuple[float, float]:
    """(h1, h2) = (omega_hat + omega_l, omega_h - omega_hat)."""
    return omega_hat_i + env.omega_l, env.omega_h - omega_hat_i


def control_bounds_all(model, x: np.ndarray, env: SafetyEnvelope
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Robust safe-control intervals for every node at state x.

    With coupling power (L theta)_i and worst-case disturbance +-d_s:

        lo_i = D_i w_i + (L theta)_i + v_i^2 d_s - M_i eta1 (w_i + omega_l)
        hi_i = D_i w_i + (L theta)_i - v_i^2 d_s + M_i eta2 (omega_h - w_i)

    Any u in [lo, hi] keeps hdot1 + eta1 h1 >= 0 and hdot2 + eta2 h2 >= 0 for
    every |d| <= d_s.
    """
    n = model.n
    theta = x[:n]
    omega = x[n:]
    m = model.m_diag
    d = model.d_diag
    v2 = model.v_diag ** 2
    coupling = model.L @ theta
    base = d * omega + coupling
    lo = base + v2 * env.d_s - m * env.eta1 * (omega + env.omega_l)
    hi = base - v2 * env.d_s + m * env.eta2 * (env.omega_h - omega)
    return lo, hi


def safe_control_bounds(model, x: np.ndarray, i: int,
                        env: SafetyEnvelope) -> ControlBounds:
    """Robust safe-control interval of node i; raises on an empty interval."""
    lo, hi = control_bounds_all(model, x, env)
    bounds = ControlBounds(lo=float(lo[i]), hi=float(hi[i]))
    if not bounds.feasible:
        raise CbfInfeasibleError(
            f"cbf conflict: node {i} interval empty by {bounds.lo - bounds.hi:.3e} "
            "(d_s or eta too aggressive for the band width)",
            gap=bounds.hi - bounds.lo)
    return bounds


def nominal_control(k: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sparse linear feedback u0 = -K x."""
    return -(k @ x)


def qp_filter(u0_i: float, bounds: ControlBounds) -> float:
    """Minimal-deviation safe control: the projection of u0 onto [lo, hi].

    The per-node problem has one variable and two affine constraints, so the
    unique minimizer of |u - u0| is the interval clamp; no iterative solver
    is involved.
    """
    if not bounds.feasible:
        raise CbfInfeasibleError(
            f"cbf conflict: interval empty by {bounds.lo - bounds.hi:.3e}",
            gap=bounds.hi - bounds.lo)
    return min(max(u0_i, bounds.lo), bounds.hi)


def filter_with_fallback(u0: np.ndarray, lo: np.ndarray, hi: np.ndarray
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized filter used by the simulator.

    Feasible nodes are clamped; an infeasible node falls back to the midpoint
    (the minimizer of the larger constraint violation) and is flagged so the
    event lands in the trace instead of aborting the run.
    """
    u = np.minimum(np.maximum(u0, lo), hi)
    status = np.zeros(u0.shape, dtype=np.int8)
    status[u0 < lo] = FILTER_CLAMPED_LO
    status[u0 > hi] = FILTER_CLAMPED_HI
    infeasible = lo > hi
    if np.any(infeasible):
        u = np.where(infeasible, 0.5 * (lo + hi), u)
        status[infeasible] = FILTER_INFEASIBLE
    return u, status


@dataclass(frozen=True)
class NodeInfoSet:
    """Nodes whose state node i must receive, tagged by the layer that
    requires them."""

    node: int
    gain_only: tuple[int, ...]
    power_only: tuple[int, ...]
    both: tuple[int, ...]

    @property
    def needs(self) -> tuple[int, ...]:
        return tuple(sorted(set(self.gain_only) | set(self.power_only) | set(self.both)))


@dataclass(frozen=True)
class TopologyReport:
    """Union communication topology: links implied by the gain pattern plus
    the power-flow neighbor graph.  Link counts are directed (i needs j)."""

    nodes: tuple[NodeInfoSet, ...]
    gain_links: int
    power_links: int
    union_links: int

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": s.node,
                 "needs": [{"node": j, "source": tag}
                           for j, tag in sorted(
                               [(j, "both") for j in s.both]
                               + [(j, "gain") for j in s.gain_only]
                               + [(j, "power") for j in s.power_only])]}
                for s in self.nodes
            ],
            "links": {"gain": self.gain_links, "power": self.power_links,
                      "union": self.union_links},
        }


def cross_layer_topology(pattern: np.ndarray, spec: NetworkSpec) -> TopologyReport:
    """Per-node information sets: the union of gain-implied links (nonzero
    entries in the angle or frequency column of another node) and power
    neighbors (needed to evaluate the barrier bounds)."""
    pattern = np.asarray(pattern, dtype=bool)
    n = spec.n
    if pattern.shape != (n, 2 * n):
        raise ConfigError(f"topology: pattern shape {pattern.shape} does not "
                          f"match n={n} (expected {(n, 2 * n)})")
    nodes = []
    gain_total = power_total = union_total = 0
    for i in range(n):
        gain_set = {j for j in range(n)
                    if j != i and (pattern[i, j] or pattern[i, n + j])}
        power_set = set(spec.neighbors(i))
        both = tuple(sorted(gain_set & power_set))
        gain_only = tuple(sorted(gain_set - power_set))
        power_only = tuple(sorted(power_set - gain_set))
        nodes.append(NodeInfoSet(node=i, gain_only=gain_only,
                                 power_only=power_only, both=both))
        gain_total += len(gain_set)
        power_total += len(power_set)
        union_total += len(gain_set | power_set)
    return TopologyReport(nodes=tuple(nodes), gain_links=gain_total,
                          power_links=power_total, union_links=union_total)
