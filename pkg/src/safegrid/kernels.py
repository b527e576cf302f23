"""Dense control kernels: Lyapunov solves, Hurwitz checks, Riccati design.

Problem sizes here are desk scale (state dimension a few tens), so the
Lyapunov equation is solved by direct Kronecker vectorization and the
Riccati equation by Newton-Kleinman iteration on top of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ConvergenceError, UnstableSystemError

# Above this matrix dimension the m^2 x m^2 Kronecker system gets heavy;
# fall back to the Bartels-Stewart solver.
_KRON_DIRECT_LIMIT = 40

LYAPUNOV_RESIDUAL_TOL = 1e-10
ARE_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class StabilityReport:
    spectral_abscissa: float
    is_hurwitz: bool


def check_stability(a_cl: np.ndarray) -> StabilityReport:
    """Eigenvalue-based stability report: Hurwitz iff max Re(eig) < 0."""
    a_cl = np.asarray(a_cl, dtype=float)
    abscissa = float(np.max(np.linalg.eigvals(a_cl).real))
    return StabilityReport(spectral_abscissa=abscissa, is_hurwitz=abscissa < 0.0)


def spectral_abscissa(a: np.ndarray) -> float:
    return check_stability(a).spectral_abscissa


def solve_lyapunov(a_cl: np.ndarray, s: np.ndarray, *,
                   residual_tol: float = LYAPUNOV_RESIDUAL_TOL) -> np.ndarray:
    """Solve A_cl' P + P A_cl = -S for the symmetric PSD P.

    A_cl must be Hurwitz and S symmetric PSD.  The residual is checked
    relative to ||S||_F and a conditioning failure is reported rather than
    silently returning a bad solution.
    """
    a_cl = np.asarray(a_cl, dtype=float)
    s = np.asarray(s, dtype=float)
    m = a_cl.shape[0]
    if a_cl.shape != (m, m) or s.shape != (m, m):
        raise ConfigError(f"lyapunov: shape mismatch {a_cl.shape} vs {s.shape}")
    report = check_stability(a_cl)
    if not report.is_hurwitz:
        raise UnstableSystemError(
            f"unstable closed loop: spectral abscissa {report.spectral_abscissa:.6e}")

    coef = None
    if m <= _KRON_DIRECT_LIMIT:
        eye = np.eye(m)
        coef = np.kron(a_cl.T, eye) + np.kron(eye, a_cl.T)
        p = np.linalg.solve(coef, -s.reshape(-1)).reshape(m, m)
    else:
        from scipy.linalg import solve_continuous_lyapunov
        p = solve_continuous_lyapunov(a_cl.T, -s)
    p = 0.5 * (p + p.T)

    s_norm = np.linalg.norm(s)
    resid = np.linalg.norm(a_cl.T @ p + p @ a_cl + s)
    rel = resid / max(s_norm, np.finfo(float).tiny)
    if s_norm > 0.0 and rel > residual_tol:
        cond = np.linalg.cond(coef) if coef is not None else np.inf
        raise ConvergenceError(
            f"lyapunov conditioning: relative residual {rel:.3e} exceeds "
            f"{residual_tol:.1e} (condition estimate {cond:.3e})")
    return p


@dataclass(frozen=True, eq=False)
class DesignWeights:
    """Quadratic performance weights: Q (state, PSD) and R (control, PD)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.Q, dtype=float)
        r = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "R", r)
        for name, mat in (("Q", q), ("R", r)):
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ConfigError(f"weights: {name} must be square")
            if not np.allclose(mat, mat.T, atol=1e-12 * max(1.0, np.abs(mat).max())):
                raise ConfigError(f"weights: {name} must be symmetric")
        if np.min(np.linalg.eigvalsh(q)) < -1e-10 * max(1.0, np.abs(q).max()):
            raise ConfigError("weights: Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(r)) <= 0.0:
            raise ConfigError("weights: R must be positive definite")
        q.setflags(write=False)
        r.setflags(write=False)

    @classmethod
    def identity(cls, model) -> "DesignWeights":
        return cls(Q=np.eye(2 * model.n), R=np.eye(model.n))

    def sqrt_q(self) -> np.ndarray:
        w, v = np.linalg.eigh(self.Q)
        return v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T

    def validate_for(self, model) -> None:
        """PBH checks: (A, B2) stabilizable and (A, Q^1/2) detectable."""
        a, b2 = model.A, model.B2
        m = a.shape[0]
        if self.Q.shape != (m, m) or self.R.shape != (b2.shape[1], b2.shape[1]):
            raise ConfigError(f"weights: expected Q {m}x{m} and "
                              f"R {b2.shape[1]}x{b2.shape[1]}")
        sq = self.sqrt_q()
        eigs = np.linalg.eigvals(a)
        for lam in eigs:
            if lam.real < -1e-9:
                continue
            eye = np.eye(m)
            if np.linalg.matrix_rank(np.hstack([a - lam * eye, b2])) < m:
                raise ConfigError(f"weights: (A, B2) not stabilizable "
                                  f"(mode {lam:.4e})")
            if np.linalg.matrix_rank(np.vstack([a - lam * eye, sq])) < m:
                raise ConfigError(f"weights: (A, Q^1/2) not detectable "
                                  f"(mode {lam:.4e})")


def _bass_stabilizing_gain(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Initial stabilizing gain via the shifted-Lyapunov (Bass) construction.

    With sigma > -min Re(eig(A)), Z solving (A + sigma I) Z + Z (A + sigma I)'
    = 2 B B' is positive definite for a controllable pair and K0 = B' Z^-1
    renders A - B K0 Hurwitz.  sigma = ||A||_2 + 1 dominates every eigenvalue.
    """
    m = a.shape[0]
    sigma = float(np.linalg.norm(a, 2)) + 1.0
    shifted = -(a + sigma * np.eye(m)).T
    z = solve_lyapunov(shifted, 2.0 * b @ b.T)
    try:
        return b.T @ np.linalg.solve(z, np.eye(m))
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(
            "are divergence: stabilization seed failed "
            "(pair may be uncontrollable)") from exc


def solve_are(model, weights: DesignWeights, *,
              residual_tol: float = ARE_RESIDUAL_TOL,
              max_iters: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Stabilizing solution of A'P + PA - P B2 R^-1 B2' P + Q = 0.

    Newton-Kleinman iteration: each step solves one Lyapunov equation for the
    current closed loop and is monotone from a stabilizing start.  Returns
    (P, K) with K = R^-1 B2' P and A - B2 K Hurwitz.
    """
    weights.validate_for(model)
    a, b2 = model.A, model.B2
    q, r = weights.Q, weights.R
    r_inv = np.linalg.inv(r)

    k = _bass_stabilizing_gain(a, b2)
    history: list[float] = []
    p = None
    for _ in range(max_iters):
        p = solve_lyapunov(a - b2 @ k, q + k.T @ r @ k)
        k = r_inv @ b2.T @ p
        resid = a.T @ p + p @ a - p @ b2 @ r_inv @ b2.T @ p + q
        denom = (np.linalg.norm(q) + np.linalg.norm(a.T @ p) +
                 np.linalg.norm(p @ a) + np.linalg.norm(p @ b2 @ r_inv @ b2.T @ p))
        rel = float(np.linalg.norm(resid) / max(denom, np.finfo(float).tiny))
        history.append(rel)
        if rel <= residual_tol:
            if not check_stability(a - b2 @ k).is_hurwitz:
                raise ConvergenceError(
                    "are divergence: converged residual but non-Hurwitz loop",
                    history=history)
            return p, k
    raise ConvergenceError(
        f"are divergence: residual {history[-1]:.3e} after {max_iters} "
        f"iterations (history {['%.1e' % h for h in history[-5:]]})",
        history=history)
