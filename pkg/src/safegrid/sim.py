"""Closed-loop time-domain simulation with zero-order-hold sampled control.

At every sample the controller computes the nominal feedback u0 = -K x,
projects it through the per-node safety filter, and holds the result while
the plant (linear swing model or the sine-coupled original) is integrated by
fixed-step RK4.  Traces record exactly what was applied, so identical
configuration and seed reproduce identical arrays bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalBlowupError, UnstableSystemError
from .kernels import check_stability
from .network import (TWO_PI, LinearModel, NetworkSpec, assemble_state_space,
                      inertia_damping, line_coupling, setpoint_offsets)
from .safety import (FILTER_INACTIVE, FILTER_INFEASIBLE, FILTER_STATUS_NAMES,
                     SafetyEnvelope, control_bounds_all, filter_with_fallback,
                     nominal_control)

DISTURBANCE_KINDS = ("zero", "constant", "step", "sinusoid",
                     "uniform-random", "adversarial")


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded exogenous load disturbance; every sample obeys |d_i| <= d_s.

    amplitude defaults to the bound itself.  step switches on at t_on,
    sinusoid oscillates at frequency_hz, uniform-random draws are a pure
    function of (seed, t) so replays are exact, adversarial pushes each node
    toward its nearer band edge (+d_s when omega_hat >= 0).
    """

    kind: str
    d_s: float = 0.0
    amplitude: float | None = None
    t_on: float = 1.0
    frequency_hz: float = 1.0
    phase_rad: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in DISTURBANCE_KINDS:
            raise ConfigError(f"disturbance: unknown kind {self.kind!r} "
                              f"(expected one of {DISTURBANCE_KINDS})")
        if self.d_s < 0.0:
            raise ConfigError(f"disturbance: d_s must be >= 0, got {self.d_s}")
        if self.amplitude is None:
            object.__setattr__(self, "amplitude", self.d_s)
        if abs(self.amplitude) > self.d_s + 1e-15:
            raise ConfigError(f"disturbance: amplitude {self.amplitude} exceeds "
                              f"bound d_s {self.d_s}")


def _time_key(t: float) -> int:
    # Bit pattern of the sample time; gives a stable per-instant stream key.
    return int(np.float64(t).view(np.int64)) & 0x7FFFFFFFFFFFFFFF


def sample_disturbance(dm: DisturbanceModel, t: float, x: np.ndarray) -> np.ndarray:
    """Disturbance vector at time t for state x = [theta_hat; omega_hat]."""
    n = len(x) // 2
    if dm.kind == "zero":
        return np.zeros(n)
    if dm.kind == "constant":
        return np.full(n, dm.amplitude)
    if dm.kind == "step":
        return np.full(n, dm.amplitude if t >= dm.t_on else 0.0)
    if dm.kind == "sinusoid":
        return np.full(n, dm.amplitude
                       * math.sin(TWO_PI * dm.frequency_hz * t + dm.phase_rad))
    if dm.kind == "uniform-random":
        rng = np.random.default_rng([dm.seed, _time_key(t)])
        return rng.uniform(-dm.amplitude, dm.amplitude, n)
    # adversarial: push toward the nearer band edge, ties to +
    omega = x[n:]
    return np.where(omega >= 0.0, dm.d_s, -dm.d_s)


@dataclass(frozen=True)
class SimConfig:
    """Sampled-control run: dt between controller updates, RK4 substeps per
    sample, and the safety envelope (None disables the filter)."""

    dt: float
    horizon: float
    plant: str = "linear"
    substeps: int = 1
    envelope: SafetyEnvelope | None = None
    theta_range: tuple[float, float] = (0.0, math.pi / 2.0)
    omega_range_hz: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ConfigError(f"sim: dt must be > 0, got {self.dt}")
        if self.horizon < self.dt:
            raise ConfigError(f"sim: horizon {self.horizon} below dt {self.dt}")
        if self.plant not in ("linear", "nonlinear"):
            raise ConfigError(f"sim: unknown plant {self.plant!r}")
        if self.substeps < 1:
            raise ConfigError("sim: substeps must be >= 1")


def sample_initial_state(n: int, seed: int,
                         theta_range: tuple[float, float] = (0.0, math.pi / 2.0),
                         omega_range_hz: tuple[float, float] = (-0.5, 0.5)
                         ) -> np.ndarray:
    """Seeded initial state: uniform angles (rad) and frequencies (Hz)."""
    rng = np.random.default_rng(seed)
    theta = rng.uniform(theta_range[0], theta_range[1], n)
    omega = rng.uniform(omega_range_hz[0], omega_range_hz[1], n) * TWO_PI
    return np.concatenate([theta, omega])


@dataclass(frozen=True, eq=False)
class SimTrace:
    """Time-indexed record of one run.

    Rows are the sample instants t_k; u, d and filter_status at row k are
    what the controller computed there (and held over [t_k, t_k+dt) for all
    but the final instant).  omega is stored in rad/s; the CSV boundary
    converts to Hz.
    """

    t: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    u: np.ndarray
    d: np.ndarray
    filter_status: np.ndarray
    complete: bool = True

    @property
    def n(self) -> int:
        return self.theta.shape[1]

    def state(self, k: int) -> np.ndarray:
        return np.concatenate([self.theta[k], self.omega[k]])


def step_linear(model: LinearModel, x: np.ndarray, u: np.ndarray,
                d: np.ndarray, h: float) -> np.ndarray:
    """One explicit RK4 substep of xdot = A x + B2 u + B1 d with u, d held."""
    forcing = model.B2 @ u + model.B1 @ d
    a = model.A
    k1 = a @ x + forcing
    k2 = a @ (x + 0.5 * h * k1) + forcing
    k3 = a @ (x + 0.5 * h * k2) + forcing
    k4 = a @ (x + h * k3) + forcing
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise NumericalBlowupError("numerical blowup: non-finite state in linear step")
    return x_next


class _SinePlant:
    """Precomputed arrays for the sine-coupled swing dynamics."""

    def __init__(self, spec: NetworkSpec):
        md = np.array([inertia_damping(b) for b in spec.buses])
        self.m = md[:, 0]
        self.d = md[:, 1]
        self.v = np.array([b.voltage_pu for b in spec.buses])
        self.g = np.array([b.g_shunt_pu for b in spec.buses])
        theta0 = np.array([b.theta0_rad for b in spec.buses])
        self.ei = np.array([ln.from_bus for ln in spec.lines], dtype=int)
        self.ej = np.array([ln.to_bus for ln in spec.lines], dtype=int)
        self.w = np.array([line_coupling(ln) * self.v[i] * self.v[j]
                           for ln, i, j in zip(spec.lines, self.ei, self.ej)])
        self.offset = theta0[self.ei] - theta0[self.ej] if len(spec.lines) else np.zeros(0)
        self.n = spec.n

    def drawn_power(self, theta: np.ndarray) -> np.ndarray:
        """P_i = G_ii v_i^2 + sum_j v_i v_j b_ij sin(theta_ij + offset)."""
        p = self.g * self.v ** 2
        if len(self.w):
            s = self.w * np.sin(theta[self.ei] - theta[self.ej] + self.offset)
            p = p.copy()
            np.add.at(p, self.ei, s)
            np.add.at(p, self.ej, -s)
        return p

    def deriv(self, state: np.ndarray, p_set: np.ndarray,
              d: np.ndarray) -> np.ndarray:
        n = self.n
        theta, omega = state[:n], state[n:]
        acc = (-self.d * omega + p_set - self.drawn_power(theta)
               + self.v ** 2 * d) / self.m
        return np.concatenate([omega, acc])


def step_nonlinear(spec: NetworkSpec, state: np.ndarray, p_set: np.ndarray,
                   d: np.ndarray, h: float) -> np.ndarray:
    """One RK4 substep of the sine-coupled dynamics.

    p_set is the actual power set-point; the caller is responsible for the
    set-point compensation (p_set = u - c).
    """
    return _step_sine(_SinePlant(spec), state, p_set, d, h)


def _step_sine(plant: _SinePlant, state, p_set, d, h) -> np.ndarray:
    k1 = plant.deriv(state, p_set, d)
    k2 = plant.deriv(state + 0.5 * h * k1, p_set, d)
    k3 = plant.deriv(state + 0.5 * h * k2, p_set, d)
    k4 = plant.deriv(state + h * k3, p_set, d)
    x_next = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise NumericalBlowupError("numerical blowup: non-finite state in nonlinear step")
    return x_next


def run_closed_loop(plant, k_gain: np.ndarray, cfg: SimConfig,
                    dm: DisturbanceModel, x0: np.ndarray) -> SimTrace:
    """Simulate the sampled closed loop and record the full trace.

    plant is a LinearModel, or a NetworkSpec (required for the nonlinear
    plant; the linear model used by the controller and the safety bounds is
    assembled from it).  The gain must stabilize the linear model.
    """
    if isinstance(plant, NetworkSpec):
        spec, model = plant, assemble_state_space(plant)
    else:
        spec, model = None, plant
    if cfg.plant == "nonlinear" and spec is None:
        raise ConfigError("sim: nonlinear plant requires the NetworkSpec")

    n = model.n
    k_gain = np.asarray(k_gain, dtype=float)
    if k_gain.shape != (n, 2 * n):
        raise ConfigError(f"sim: gain shape {k_gain.shape}, expected {(n, 2 * n)}")
    if not check_stability(model.A - model.B2 @ k_gain).is_hurwitz:
        raise UnstableSystemError("unstable gain: refusing to simulate")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2 * n,) or not np.all(np.isfinite(x0)):
        raise ConfigError(f"sim: x0 must be a finite vector of length {2 * n}")

    steps = int(round(cfg.horizon / cfg.dt))
    h = cfg.dt / cfg.substeps
    sine = _SinePlant(spec) if cfg.plant == "nonlinear" else None
    offsets = setpoint_offsets(spec) if cfg.plant == "nonlinear" else None

    t = np.arange(steps + 1) * cfg.dt
    theta = np.empty((steps + 1, n))
    omega = np.empty((steps + 1, n))
    u_rec = np.empty((steps + 1, n))
    d_rec = np.empty((steps + 1, n))
    status_rec = np.zeros((steps + 1, n), dtype=np.int8)

    x = x0.copy()
    complete = True
    last = steps
    for k in range(steps + 1):
        u0 = nominal_control(k_gain, x)
        d = sample_disturbance(dm, float(t[k]), x)
        if cfg.envelope is not None:
            lo, hi = control_bounds_all(model, x, cfg.envelope)
            u, status = filter_with_fallback(u0, lo, hi)
        else:
            u, status = u0, np.zeros(n, dtype=np.int8)
        theta[k] = x[:n]
        omega[k] = x[n:]
        u_rec[k] = u
        d_rec[k] = d
        status_rec[k] = status
        if k == steps:
            break
        try:
            if sine is not None:
                p_set = u - offsets
                for _ in range(cfg.substeps):
                    x = _step_sine(sine, x, p_set, d, h)
            else:
                for _ in range(cfg.substeps):
                    x = step_linear(model, x, u, d, h)
        except NumericalBlowupError:
            complete = False
            last = k
            break

    end = last + 1
    return SimTrace(t=t[:end], theta=theta[:end], omega=omega[:end],
                    u=u_rec[:end], d=d_rec[:end],
                    filter_status=status_rec[:end], complete=complete)


@dataclass(frozen=True)
class SafetyMetrics:
    """Summary of one trace against an envelope (internal units)."""

    max_abs_omega: float
    max_exceedance: float
    violation_samples: int
    violation_duration: float
    settling_time: float | None
    filter_active_samples: int
    infeasible_samples: int
    final_theta_inf: float
    final_omega_inf: float

    def to_dict(self) -> dict:
        return {
            "max_abs_omega_hz": self.max_abs_omega / TWO_PI,
            "max_exceedance_hz": self.max_exceedance / TWO_PI,
            "violation_samples": self.violation_samples,
            "violation_duration_s": self.violation_duration,
            "settling_time_s": self.settling_time,
            "filter_active_samples": self.filter_active_samples,
            "infeasible_samples": self.infeasible_samples,
            "final_theta_inf_rad": self.final_theta_inf,
            "final_omega_inf_hz": self.final_omega_inf / TWO_PI,
        }


def safety_metrics(trace: SimTrace, env: SafetyEnvelope,
                   settle_tol: float = 0.05) -> SafetyMetrics:
    """Violation counts, filter activity and settling time for a trace.

    Settling time is the earliest sample after which ||x||_inf stays at or
    below settle_tol; None if the trace never settles.
    """
    omega = trace.omega
    below = -env.omega_l - omega
    above = omega - env.omega_h
    exceed = np.maximum(np.maximum(below, above), 0.0)
    violating = exceed > 0.0
    dt = float(trace.t[1] - trace.t[0]) if len(trace.t) > 1 else 0.0

    x_inf = np.maximum(np.abs(trace.theta).max(axis=1),
                       np.abs(trace.omega).max(axis=1))
    settled = x_inf <= settle_tol
    settling_time: float | None = None
    if settled[-1]:
        idx = len(settled) - 1
        while idx > 0 and settled[idx - 1]:
            idx -= 1
        settling_time = float(trace.t[idx])

    return SafetyMetrics(
        max_abs_omega=float(np.abs(omega).max()),
        max_exceedance=float(exceed.max()),
        violation_samples=int(violating.sum()),
        violation_duration=float(violating.any(axis=1).sum()) * dt,
        settling_time=settling_time,
        filter_active_samples=int((trace.filter_status != FILTER_INACTIVE).sum()),
        infeasible_samples=int((trace.filter_status == FILTER_INFEASIBLE).sum()),
        final_theta_inf=float(np.abs(trace.theta[-1]).max()),
        final_omega_inf=float(np.abs(trace.omega[-1]).max()),
    )


def write_trace_csv(trace: SimTrace, path) -> None:
    """CSV trace: angles in rad, frequencies in Hz, powers in p.u.

    Floats are written with shortest round-trip repr so identical runs
    produce identical bytes.
    """
    n = trace.n
    cols = (["t"]
            + [f"theta_hat_{i}" for i in range(n)]
            + [f"omega_hat_{i}" for i in range(n)]
            + [f"u_{i}" for i in range(n)]
            + [f"d_{i}" for i in range(n)]
            + [f"filter_{i}" for i in range(n)])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(len(trace.t)):
            row = [repr(float(trace.t[k]))]
            row += [repr(float(v)) for v in trace.theta[k]]
            row += [repr(float(v / TWO_PI)) for v in trace.omega[k]]
            row += [repr(float(v)) for v in trace.u[k]]
            row += [repr(float(v)) for v in trace.d[k]]
            row += [FILTER_STATUS_NAMES[s] for s in trace.filter_status[k]]
            fh.write(",".join(row) + "\n")
