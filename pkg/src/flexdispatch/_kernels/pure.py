"""Reference numpy implementations of the hot numerical kernels.

These define the semantics of record. The compiled extension in
``_core.pyx`` implements the same algorithms step for step; the test
suite cross-checks both backends. Keep any change here mirrored there.
"""

import math

import numpy as np

from ..errors import KernelError

# |column sum - 1| tolerance for the per-column dual root-find
ROOT_TOL = 1e-10
ROOT_MAX_ITER = 100


def exact_simplex(p):
    """Normalize a nonnegative vector so its float sum is 1.0 to the last ulp.

    Divides by the sum, then absorbs the remaining rounding residual into
    the largest entry (usually landing on exactly 1.0; pairwise-summation
    rounding can leave a one-ulp remainder).
    """
    p = np.asarray(p, dtype=float)
    s = p.sum()
    if s <= 0:
        raise KernelError("cannot normalize a vector with nonpositive sum")
    p = p / s
    for _ in range(8):
        r = p.sum() - 1.0
        if r == 0.0:
            break
        p[int(np.argmax(p))] -= r
    return p


def backward_column(c, gamma_col, pbar_col):
    """Optimal transition distribution out of one origin state.

    Minimizes sum_a p_a * (c_a + gamma_a * log(p_a / pbar_a)) over the
    probability simplex restricted to support(pbar). Returns (p, value).

    Uniform gamma on the support has the closed-form softmin solution;
    otherwise the scalar dual of the simplex constraint is solved by
    safeguarded Newton on the monotone normalization equation.
    """
    c = np.asarray(c, dtype=float)
    gamma_col = np.asarray(gamma_col, dtype=float)
    pbar_col = np.asarray(pbar_col, dtype=float)
    n = pbar_col.shape[0]
    support = pbar_col > 0.0
    if not support.any():
        raise KernelError("empty support column: target matrix column is all zero")

    cs = c[support]
    gs = gamma_col[support]
    ps = pbar_col[support]
    if np.any(gs <= 0.0):
        raise KernelError("penalty weight must be positive on the target support")

    if np.all(gs == gs[0]):
        p_s, value = _column_softmin(cs, gs[0], ps)
    else:
        p_s, value = _column_dual(cs, gs, ps)

    p = np.zeros(n)
    p[support] = p_s
    return p, value


def _column_softmin(cs, gam, ps):
    cmin = cs.min()
    if np.all(cs == cmin):
        # constant cost: the target column is exactly optimal, value = cost
        return ps.copy(), float(cmin)
    w = ps * np.exp(-(cs - cmin) / gam)
    z = w.sum()
    value = cmin - gam * math.log(z)
    return exact_simplex(w), value


def _column_dual(cs, gs, ps):
    # stationarity gives p_a(nu) = pbar_a * exp(-(c_a + nu)/gamma_a - 1);
    # sum_a p_a(nu) is strictly decreasing, so solve sum = 1 for nu.
    log_ps = np.log(ps)
    lo = -(cs + gs).max()  # sum(lo) >= 1
    hi = -(cs + gs).min()  # sum(hi) <= 1
    nu = 0.5 * (lo + hi)
    gap = None
    for _ in range(ROOT_MAX_ITER):
        e = log_ps - (cs + nu) / gs - 1.0
        m = e.max()
        w = np.exp(e - m)
        sw = w.sum()
        h = m + math.log(sw)  # log of the column sum
        gap = math.expm1(h)
        if abs(gap) <= ROOT_TOL:
            break
        if h > 0.0:
            lo = nu
        else:
            hi = nu
        dh = -float((w / gs).sum() / sw)
        step = nu - h / dh
        nu = step if lo < step < hi else 0.5 * (lo + hi)
    else:
        raise KernelError(f"column dual root-find stalled (|sum-1| = {abs(gap):.3e}); "
                          "costs are ill-scaled relative to the penalty weights")
    e = log_ps - (cs + nu) / gs - 1.0
    p = exact_simplex(np.exp(e - e.max()))
    value = float(np.dot(p, cs + gs * np.log(p / ps)))
    return p, value


def kl_backward(u_eff, pbar, gamma):
    """Backward sweep of the penalty-regularized transition optimization.

    u_eff   (T, n): effective per-state cost at arrival times 1..T
    pbar    (n, n): column-stochastic target matrix (column = origin)
    gamma   (T, n, n): penalty weights per step

    Returns (P, V): P (T, n, n) optimized transition matrices and
    V (T+1, n) state values with the terminal condition V[T] = 0.
    """
    u_eff = np.asarray(u_eff, dtype=float)
    pbar = np.asarray(pbar, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    T, n = u_eff.shape
    P = np.zeros((T, n, n))
    V = np.zeros((T + 1, n))
    for t in range(T - 1, -1, -1):
        c = u_eff[t] + V[t + 1]
        for b in range(n):
            P[t, :, b], V[t, b] = backward_column(c, gamma[t, :, b], pbar[:, b])
    return P, V


def boxqp_pen(h, g, lo, hi, cmat, d, cl, cu, rho, lip, x0, tol, max_iter):
    """Accelerated projected gradient for a box QP with interval penalties.

    Minimizes 0.5 x'Hx + g'x + rho/2 * dist^2(Cx + d, [cl, cu]) subject to
    lo <= x <= hi, using FISTA with gradient-based adaptive restart and the
    fixed step 1/lip. Returns (x, residual, iterations) where residual is
    the infinity norm of the projected-gradient map at x.
    """
    h = np.asarray(h, dtype=float)
    g = np.asarray(g, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    n = x.shape[0]
    if n == 0:
        return x, 0.0, 0
    has_rows = cmat is not None and cmat.shape[0] > 0

    def grad(v):
        gv = h @ v + g
        if has_rows:
            z = cmat @ v + d
            gv = gv + rho * (cmat.T @ (z - np.clip(z, cl, cu)))
        return gv

    gx = grad(x)
    res = float(np.abs(x - np.clip(x - gx, lo, hi)).max())
    if res <= tol:
        return x, res, 0

    y = x.copy()
    tk = 1.0
    step = 1.0 / lip
    for k in range(1, max_iter + 1):
        gy = grad(y)
        x_new = np.clip(y - step * gy, lo, hi)
        gx = grad(x_new)
        res = float(np.abs(x_new - np.clip(x_new - gx, lo, hi)).max())
        if res <= tol:
            return x_new, res, k
        if float(np.dot(gx, x_new - x)) > 0.0:
            tk = 1.0  # adaptive restart: momentum points uphill
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
        y = x_new + ((tk - 1.0) / t_new) * (x_new - x)
        x = x_new
        tk = t_new
    return x, res, max_iter
