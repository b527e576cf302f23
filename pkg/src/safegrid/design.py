"""Sparsity-promoting state-feedback design.

The nominal controller minimizes the H2 cost J(K) = Tr(B1' P(K) B1), where
P(K) is the closed-loop observability Gramian, plus a reweighted l1 penalty
gamma * sum_ij W_ij |K_ij| that prunes feedback links.  The composite problem
is split by ADMM (K-step: smooth descent, G-step: elementwise
soft-thresholding, scaled dual update) inside a small number of reweighting
passes, and the surviving pattern is polished by structured descent.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ConvergenceError, StabilityLossError, UnstableSystemError
from .kernels import DesignWeights, StabilityReport, check_stability, solve_lyapunov

log = logging.getLogger(__name__)

_ARMIJO_C = 1e-4
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class SparsityOptions:
    """Knobs of the sparse design.

    gamma weighs the cardinality surrogate, epsilon is the reweighting
    constant, rho the ADMM penalty.  zero_tol is the magnitude below which a
    polished entry counts as zero.

    The default epsilon is deliberately large: on stiffly coupled networks
    the H2 cost is nearly flat in many gain directions, and sharp reweighting
    (epsilon far below the typical entry magnitude) prunes cheap links even
    at vanishing gamma.  epsilon of order the typical |K| keeps the smallest
    penalty honest while the reweighting still separates live entries from
    dead ones at large gamma.
    """

    gamma: float = 0.0
    epsilon: float = 1.0
    rho: float = 100.0
    max_admm_iters: int = 1000
    max_reweight_iters: int = 5
    primal_tol: float = 1e-5
    dual_tol: float = 1e-5
    zero_tol: float = 1e-6
    max_kstep_iters: int = 50
    max_polish_iters: int = 500

    def __post_init__(self) -> None:
        if self.gamma < 0.0:
            raise ConfigError(f"options: gamma must be >= 0, got {self.gamma}")
        for name in ("epsilon", "rho", "primal_tol", "dual_tol", "zero_tol"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"options: {name} must be > 0")
        if self.zero_tol >= self.epsilon:
            raise ConfigError(f"options: zero_tol {self.zero_tol} must be "
                              f"below epsilon {self.epsilon}")


@dataclass(frozen=True, eq=False)
class GainResult:
    """A designed feedback gain with its sparsity certificate."""

    K: np.ndarray
    pattern: np.ndarray
    gamma: float
    cost: float
    card: int
    stability: StabilityReport
    admm_iterations: int
    reweight_iterations: int

    def __post_init__(self) -> None:
        self.K.setflags(write=False)
        self.pattern.setflags(write=False)


@dataclass(frozen=True, eq=False)
class SweepEntry:
    """One point of a gamma sweep; failed points carry the error instead."""

    gamma: float
    result: GainResult | None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.result is None


def closed_loop(model, k: np.ndarray) -> np.ndarray:
    return model.A - model.B2 @ k


def h2_cost(model, weights: DesignWeights, k: np.ndarray) -> float:
    """J(K) = Tr(B1' P(K) B1); raises for a non-stabilizing gain."""
    a_cl = closed_loop(model, k)
    if not check_stability(a_cl).is_hurwitz:
        raise UnstableSystemError("unstable gain: h2 cost undefined")
    p = solve_lyapunov(a_cl, weights.Q + k.T @ weights.R @ k)
    return float(np.trace(model.B1.T @ p @ model.B1))


def h2_cost_or_inf(model, weights: DesignWeights, k: np.ndarray) -> float:
    """Sweep-context variant: +inf sentinel instead of raising."""
    try:
        return h2_cost(model, weights, k)
    except UnstableSystemError:
        return np.inf


def h2_gradient(model, weights: DesignWeights, k: np.ndarray) -> np.ndarray:
    """Gradient of the H2 cost: 2 (R K - B2' P) Lambda.

    P is the closed-loop observability Gramian of Q + K'RK and Lambda the
    controllability Gramian seeded by B1 B1'.
    """
    a_cl = closed_loop(model, k)
    if not check_stability(a_cl).is_hurwitz:
        raise UnstableSystemError("unstable gain: h2 gradient undefined")
    p = solve_lyapunov(a_cl, weights.Q + k.T @ weights.R @ k)
    lam = solve_lyapunov(a_cl.T, model.B1 @ model.B1.T)
    return 2.0 * (weights.R @ k - model.B2.T @ p) @ lam


def reweight(k: np.ndarray, epsilon: float) -> np.ndarray:
    """Elementwise weights W_ij = 1 / (|K_ij| + epsilon)."""
    if epsilon <= 0.0:
        raise ConfigError(f"reweight: epsilon must be > 0, got {epsilon}")
    return 1.0 / (np.abs(k) + epsilon)


def soft_threshold(v: np.ndarray, threshold: np.ndarray) -> np.ndarray:
    """Proximal step of the weighted l1 norm: shrink toward zero by threshold."""
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def count_nonzeros(k: np.ndarray, zero_tol: float) -> int:
    return int(np.count_nonzero(np.abs(k) > zero_tol))


def _cost_and_gramian(model, weights, k):
    """(J, P) when A - B2 K is Hurwitz, else (None, None)."""
    a_cl = closed_loop(model, k)
    if not check_stability(a_cl).is_hurwitz:
        return None, None
    p = solve_lyapunov(a_cl, weights.Q + k.T @ weights.R @ k)
    return float(np.trace(model.B1.T @ p @ model.B1)), p


def _descend(model, weights, k, grad_fn, value_fn, max_iters, grad_tol):
    """BB-stepped gradient descent with Armijo backtracking.

    value_fn returns None for non-stabilizing iterates, which the line search
    treats as an automatic reject (step halving on stability loss).  Returns
    the final iterate; every accepted iterate is stabilizing.
    """
    val = value_fn(k)
    if val is None:
        raise UnstableSystemError("unstable gain: descent requires a stabilizing start")
    grad = grad_fn(k)
    step = 1.0 / max(1.0, float(np.linalg.norm(grad)))
    for _ in range(max_iters):
        gnorm2 = float(np.sum(grad * grad))
        if np.sqrt(gnorm2) <= grad_tol:
            break
        t = step
        accepted = False
        for _ in range(_MAX_HALVINGS):
            k_new = k - t * grad
            val_new = value_fn(k_new)
            if val_new is not None and val_new <= val - _ARMIJO_C * t * gnorm2:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        grad_new = grad_fn(k_new)
        dk = k_new - k
        dg = grad_new - grad
        denom = float(np.sum(dk * dg))
        step = float(np.sum(dk * dk)) / denom if denom > 0.0 else t * 2.0
        step = min(max(step, 1e-12), 1e6)
        k, val, grad = k_new, val_new, grad_new
    return k


def _k_step(model, weights, k, target, rho, max_iters, grad_tol):
    """Minimize J(K) + (rho/2) ||K - target||_F^2 over stabilizing K."""

    def value(kk):
        j, _ = _cost_and_gramian(model, weights, kk)
        if j is None:
            return None
        return j + 0.5 * rho * float(np.sum((kk - target) ** 2))

    def grad(kk):
        return h2_gradient(model, weights, kk) + rho * (kk - target)

    return _descend(model, weights, k, grad, value, max_iters, grad_tol)


def polish(model, weights: DesignWeights, pattern: np.ndarray,
           k_init: np.ndarray | None = None, *,
           max_iters: int = 500, grad_tol: float = 1e-9) -> np.ndarray:
    """Minimize the H2 cost over gains supported exactly on the pattern.

    Projected descent: the gradient is masked to the pattern so off-pattern
    entries stay identically zero.  The full pattern reduces to the
    unconstrained problem and returns the centralized Riccati gain.
    """
    from .kernels import solve_are

    pattern = np.asarray(pattern, dtype=bool)
    if pattern.all():
        _, k = solve_are(model, weights)
        return k

    if k_init is None:
        _, k_init = solve_are(model, weights)
    k = np.where(pattern, k_init, 0.0)
    if not check_stability(closed_loop(model, k)).is_hurwitz:
        raise StabilityLossError(
            f"polish stability loss: pattern with {int(pattern.sum())} "
            "entries admits no stabilizing start")

    def value(kk):
        j, _ = _cost_and_gramian(model, weights, kk)
        return j

    def grad(kk):
        return np.where(pattern, h2_gradient(model, weights, kk), 0.0)

    scale = max(1.0, abs(value(k)))
    return _descend(model, weights, k, grad, value, max_iters, grad_tol * scale)


def _build_result(model, weights, k, gamma, zero_tol, admm_iters, rw_iters) -> GainResult:
    pattern = np.abs(k) > zero_tol
    report = check_stability(closed_loop(model, k))
    if not report.is_hurwitz:
        raise StabilityLossError(
            f"polish stability loss: final gain abscissa {report.spectral_abscissa:.3e}")
    cost = h2_cost(model, weights, k)
    return GainResult(K=k.copy(), pattern=pattern, gamma=float(gamma), cost=cost,
                      card=int(pattern.sum()), stability=report,
                      admm_iterations=admm_iters, reweight_iterations=rw_iters)


def admm_sparse_gain(model, weights: DesignWeights, opts: SparsityOptions,
                     k_init: np.ndarray | None = None) -> GainResult:
    """Design a sparse stabilizing gain for the given penalty weight.

    Splits min J(K) + gamma ||W o G||_1 subject to K = G; the weights W are
    refreshed from the current iterate at the start of every reweighting
    pass.  The final pattern is taken from the splitting variable and
    polished on fixed support.
    """
    from .kernels import solve_are

    weights.validate_for(model)
    if k_init is None:
        _, k_init = solve_are(model, weights)
    k = np.asarray(k_init, dtype=float).copy()
    if not check_stability(closed_loop(model, k)).is_hurwitz:
        raise UnstableSystemError("unstable gain: admm requires a stabilizing start")

    if opts.gamma == 0.0:
        _, k_c = solve_are(model, weights)
        return _build_result(model, weights, k_c, 0.0, opts.zero_tol, 0, 0)

    rho = opts.rho
    g = k.copy()
    u = np.zeros_like(k)
    total_admm = 0
    rw_done = 0
    prev_pattern = None
    for rw in range(opts.max_reweight_iters):
        w_l1 = reweight(k, opts.epsilon)
        converged = False
        for it in range(1, opts.max_admm_iters + 1):
            # inner accuracy tracks the dual criterion: a K-step solved to
            # gradient norm g_tol moves K by about g_tol / rho per iteration
            tight = 0.3 * opts.dual_tol * max(1.0, rho * float(np.linalg.norm(u)))
            loose = 0.05 * rho * float(np.linalg.norm(k - g))
            grad_tol = max(1e-9, tight, min(loose, 1.0))
            k = _k_step(model, weights, k, g - u, rho,
                        opts.max_kstep_iters, grad_tol)
            g_new = soft_threshold(k + u, opts.gamma * w_l1 / rho)
            r_primal = float(np.linalg.norm(k - g_new))
            s_dual = float(rho * np.linalg.norm(g_new - g))
            u = u + (k - g_new)
            g = g_new
            eps_pri = opts.primal_tol * max(1.0, np.linalg.norm(k), np.linalg.norm(g))
            eps_dual = opts.dual_tol * max(1.0, rho * np.linalg.norm(u))
            if r_primal <= eps_pri and s_dual <= eps_dual:
                converged = True
                break
            # residual balancing keeps the penalty commensurate with the
            # problem curvature; the unscaled dual y = rho * u is preserved
            if r_primal > 10.0 * s_dual and rho < 1e4 * opts.rho:
                rho *= 2.0
                u /= 2.0
            elif s_dual > 10.0 * r_primal and rho > 1e-4 * opts.rho:
                rho /= 2.0
                u *= 2.0
        total_admm += it
        rw_done = rw + 1
        if not converged:
            raise ConvergenceError(
                f"admm max iters: gamma {opts.gamma:.3e}, reweight pass {rw}, "
                f"primal {np.linalg.norm(k - g):.3e}")
        # the splitting variable evaluated at the nominal penalty is
        # rho-invariant at the fixed point: zero exactly where the weighted
        # l1 stationarity test says zero, the smooth iterate elsewhere
        g = soft_threshold(k + (rho / opts.rho) * u, opts.gamma * w_l1 / opts.rho)
        pattern = g != 0.0
        log.debug("gamma %.3e pass %d: admm %d iters, support %d",
                  opts.gamma, rw, it, int(pattern.sum()))
        if prev_pattern is not None and np.array_equal(pattern, prev_pattern):
            break
        prev_pattern = pattern

    support = np.abs(g) > opts.zero_tol * max(1.0, float(np.abs(g).max()))
    start = np.where(support, g, 0.0)
    if not check_stability(closed_loop(model, start)).is_hurwitz:
        start = np.where(support, k, 0.0)
    k_pol = polish(model, weights, support, start, max_iters=opts.max_polish_iters)
    return _build_result(model, weights, k_pol, opts.gamma, opts.zero_tol,
                         total_admm, rw_done)


def gamma_sweep(model, weights: DesignWeights, gammas, opts: SparsityOptions,
                k_init: np.ndarray | None = None) -> list[SweepEntry]:
    """Run the design over an ascending list of penalty weights.

    Each point is warm-started from the previous solution; a failed point is
    recorded and the sweep continues from the last good gain.  The per-point
    problem is nonconvex, so after the forward pass each point also considers
    its successor's solution and keeps whichever is better on the combined
    objective J + gamma * card (a dominated stationary point is replaced by
    the sparser, cheaper one).
    """
    from .kernels import solve_are

    gammas = [float(g) for g in gammas]
    if any(b < a for a, b in zip(gammas, gammas[1:])):
        raise ConfigError("sweep: gamma list must be ascending")
    if k_init is None:
        _, k_init = solve_are(model, weights)
    warm = k_init
    entries: list[SweepEntry] = []
    for gamma in gammas:
        try:
            res = admm_sparse_gain(model, weights, replace(opts, gamma=gamma),
                                   k_init=warm)
            entries.append(SweepEntry(gamma=gamma, result=res))
            warm = res.K
        except (ConvergenceError, UnstableSystemError) as exc:
            log.warning("sweep point gamma %.3e failed: %s", gamma, exc)
            entries.append(SweepEntry(gamma=gamma, result=None, error=str(exc)))

    for i in range(len(entries) - 2, -1, -1):
        cur, nxt = entries[i], entries[i + 1]
        if cur.failed or nxt.failed:
            continue
        better = (nxt.result.cost + cur.gamma * nxt.result.card
                  < cur.result.cost + cur.gamma * cur.result.card - 1e-12)
        if better and nxt.result.card <= cur.result.card:
            log.debug("sweep point gamma %.3e adopts the successor pattern "
                      "(card %d, cost %.6g)", cur.gamma, nxt.result.card,
                      nxt.result.cost)
            entries[i] = SweepEntry(gamma=cur.gamma,
                                    result=replace(nxt.result, gamma=cur.gamma))
    return entries


def gain_to_dict(result: GainResult) -> dict:
    """Wire form of a designed gain (row-major numeric arrays)."""
    return {
        "gamma": result.gamma,
        "cost": result.cost,
        "card": result.card,
        "spectral_abscissa": result.stability.spectral_abscissa,
        "k": [[float(x) for x in row] for row in result.K],
        "pattern": [[int(x) for x in row] for row in result.pattern],
    }


def gain_from_dict(doc: dict) -> GainResult:
    k = np.array(doc["k"], dtype=float)
    pattern = np.array(doc["pattern"], dtype=bool)
    if k.ndim != 2 or pattern.shape != k.shape:
        raise ConfigError(f"gain document: k shape {k.shape} does not match "
                          f"pattern shape {pattern.shape}")
    return GainResult(
        K=k, pattern=pattern, gamma=float(doc["gamma"]), cost=float(doc["cost"]),
        card=int(doc["card"]),
        stability=StabilityReport(float(doc["spectral_abscissa"]),
                                  float(doc["spectral_abscissa"]) < 0.0),
        admm_iterations=int(doc.get("admm_iterations", 0)),
        reweight_iterations=int(doc.get("reweight_iterations", 0)),
    )


def save_gain(result: GainResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(gain_to_dict(result), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_gain(path) -> GainResult:
    with open(path, "r", encoding="utf-8") as fh:
        return gain_from_dict(json.load(fh))
