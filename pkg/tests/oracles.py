"""Independent oracles used by the test suite.

These are deliberately naive implementations: the production code must agree
with them, so they never share its code paths.
"""

import numpy as np


def lyapunov_kron_naive(a_cl, s):
    """Solve A' P + P A = -S by an explicitly loop-built linear system.

    Row-major vec indexing: coefficient of P[k, j] in (A'P)[i, j] is A[k, i],
    coefficient of P[i, k] in (P A)[i, j] is A[k, j].
    """
    m = a_cl.shape[0]
    coef = np.zeros((m * m, m * m))
    rhs = np.zeros(m * m)
    for i in range(m):
        for j in range(m):
            row = i * m + j
            rhs[row] = -s[i, j]
            for k in range(m):
                coef[row, k * m + j] += a_cl[k, i]
                coef[row, i * m + k] += a_cl[k, j]
    return np.linalg.solve(coef, rhs).reshape(m, m)


def qp_clamp_kkt(u0, lo, hi):
    """Minimizer of |u - u0| on [lo, hi] by KKT case enumeration."""
    candidates = []
    if lo <= u0 <= hi:
        candidates.append(u0)          # interior, multipliers zero
    if u0 <= lo:
        candidates.append(lo)          # lower constraint active
    if u0 >= hi:
        candidates.append(hi)          # upper constraint active
    assert candidates, "KKT enumeration found no candidate"
    return min(candidates, key=lambda u: abs(u - u0))


def barrier_conditions(model, x, i, u_i, d_i, env):
    """Direct substitution of the two barrier-decay conditions at node i.

    Returns (hdot1 + eta1 h1, hdot2 + eta2 h2) for the given control and
    disturbance realization.
    """
    n = model.n
    theta, omega = x[:n], x[n:]
    m_i = model.m_diag[i]
    d_coef = model.d_diag[i]
    v_i = model.v_diag[i]
    coupling = float(model.L[i] @ theta)
    omega_dot = (-d_coef * omega[i] - coupling + u_i + v_i ** 2 * d_i) / m_i
    h1 = omega[i] + env.omega_l
    h2 = env.omega_h - omega[i]
    return omega_dot + env.eta1 * h1, -omega_dot + env.eta2 * h2
