# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: step-for-step mirror of ``pure.py``.

The algorithms and tolerances must stay in lockstep with the numpy
reference; the test suite asserts cross-backend agreement.
"""

from libc.math cimport exp, expm1, fabs, log, sqrt
from libc.stdlib cimport free, malloc

import numpy as np

from ..errors import KernelError

cdef double ROOT_TOL = 1e-10
cdef int ROOT_MAX_ITER = 100

# error codes from the nogil column solver
cdef enum:
    COL_OK = 0
    COL_EMPTY_SUPPORT = 1
    COL_BAD_GAMMA = 2
    COL_STALLED = 3


cdef void _exact_fix(double* p, int n) noexcept nogil:
    # absorb the rounding residual of sum(p) into the largest entry
    cdef int i, k, rep
    cdef double s, mx
    for rep in range(4):
        s = 0.0
        for i in range(n):
            s += p[i]
        if s - 1.0 == 0.0:
            break
        k = 0
        mx = p[0]
        for i in range(1, n):
            if p[i] > mx:
                mx = p[i]
                k = i
        p[k] -= s - 1.0


cdef int _solve_column(int n, const double* c, const double* gcol, const double* pcol,
                       double* p_out, double* v_out, double* scratch) noexcept nogil:
    """Optimal transition column; scratch needs 4*n doubles."""
    cdef double* cs = scratch
    cdef double* gs = scratch + n
    cdef double* ps = scratch + 2 * n
    cdef double* w = scratch + 3 * n
    cdef int i, m = 0
    cdef bint uniform = True
    for i in range(n):
        p_out[i] = 0.0
        if pcol[i] > 0.0:
            cs[m] = c[i]
            gs[m] = gcol[i]
            ps[m] = pcol[i]
            if gcol[i] <= 0.0:
                return COL_BAD_GAMMA
            m += 1
    if m == 0:
        return COL_EMPTY_SUPPORT
    for i in range(1, m):
        if gs[i] != gs[0]:
            uniform = False
            break

    cdef double cmin, z, gam, value
    cdef double lo, hi, nu, e, emax, sw, h, gap, dh, step
    cdef int it
    if uniform:
        gam = gs[0]
        cmin = cs[0]
        for i in range(1, m):
            if cs[i] < cmin:
                cmin = cs[i]
        uniform = True
        for i in range(m):
            if cs[i] != cmin:
                uniform = False
                break
        if uniform:
            # constant cost: the target column is exactly optimal, value = cost
            for i in range(m):
                w[i] = ps[i]
            value = cmin
        else:
            z = 0.0
            for i in range(m):
                w[i] = ps[i] * exp(-(cs[i] - cmin) / gam)
                z += w[i]
            value = cmin - gam * log(z)
            for i in range(m):
                w[i] = w[i] / z
            _exact_fix(w, m)
    else:
        lo = -(cs[0] + gs[0])
        hi = lo
        for i in range(1, m):
            e = -(cs[i] + gs[i])
            if e < lo:
                lo = e
            if e > hi:
                hi = e
        # bracket orientation: column sum >= 1 at lo, <= 1 at hi
        nu = 0.5 * (lo + hi)
        gap = 0.0
        it = 0
        while it < ROOT_MAX_ITER:
            emax = log(ps[0]) - (cs[0] + nu) / gs[0] - 1.0
            for i in range(1, m):
                e = log(ps[i]) - (cs[i] + nu) / gs[i] - 1.0
                if e > emax:
                    emax = e
            sw = 0.0
            dh = 0.0
            for i in range(m):
                e = exp(log(ps[i]) - (cs[i] + nu) / gs[i] - 1.0 - emax)
                w[i] = e
                sw += e
                dh += e / gs[i]
            h = emax + log(sw)
            gap = expm1(h)
            if fabs(gap) <= ROOT_TOL:
                break
            if h > 0.0:
                lo = nu
            else:
                hi = nu
            dh = -dh / sw
            step = nu - h / dh
            if lo < step and step < hi:
                nu = step
            else:
                nu = 0.5 * (lo + hi)
            it += 1
        if it >= ROOT_MAX_ITER and fabs(gap) > ROOT_TOL:
            return COL_STALLED
        emax = log(ps[0]) - (cs[0] + nu) / gs[0] - 1.0
        for i in range(1, m):
            e = log(ps[i]) - (cs[i] + nu) / gs[i] - 1.0
            if e > emax:
                emax = e
        for i in range(m):
            w[i] = exp(log(ps[i]) - (cs[i] + nu) / gs[i] - 1.0 - emax)
        z = 0.0
        for i in range(m):
            z += w[i]
        for i in range(m):
            w[i] = w[i] / z
        _exact_fix(w, m)
        value = 0.0
        for i in range(m):
            value += w[i] * (cs[i] + gs[i] * log(w[i] / ps[i]))

    m = 0
    for i in range(n):
        if pcol[i] > 0.0:
            p_out[i] = w[m]
            m += 1
    v_out[0] = value
    return COL_OK


cdef void _raise_column_error(int code):
    if code == COL_EMPTY_SUPPORT:
        raise KernelError("empty support column: target matrix column is all zero")
    if code == COL_BAD_GAMMA:
        raise KernelError("penalty weight must be positive on the target support")
    if code == COL_STALLED:
        raise KernelError("column dual root-find stalled; costs are ill-scaled "
                          "relative to the penalty weights")


def backward_column(c, gamma_col, pbar_col):
    """Single-column entry point; see pure.backward_column."""
    cdef double[::1] cv = np.ascontiguousarray(c, dtype=float)
    cdef double[::1] gv = np.ascontiguousarray(gamma_col, dtype=float)
    cdef double[::1] pv = np.ascontiguousarray(pbar_col, dtype=float)
    cdef int n = cv.shape[0]
    p = np.zeros(n)
    cdef double[::1] pout = p
    cdef double value = 0.0
    cdef double* scratch = <double*> malloc(4 * n * sizeof(double))
    if scratch == NULL:
        raise MemoryError()
    cdef int code
    try:
        code = _solve_column(n, &cv[0], &gv[0], &pv[0], &pout[0], &value, scratch)
    finally:
        free(scratch)
    if code != COL_OK:
        _raise_column_error(code)
    return p, value


def kl_backward(u_eff, pbar, gamma):
    """Backward sweep; see pure.kl_backward."""
    cdef double[:, ::1] u = np.ascontiguousarray(u_eff, dtype=float)
    cdef double[:, ::1] pb = np.ascontiguousarray(pbar, dtype=float)
    cdef double[:, :, ::1] ga = np.ascontiguousarray(gamma, dtype=float)
    cdef int T = u.shape[0]
    cdef int n = u.shape[1]
    P = np.zeros((T, n, n))
    V = np.zeros((T + 1, n))
    cdef double[:, :, ::1] Pv = P
    cdef double[:, ::1] Vv = V
    cdef double* scratch = <double*> malloc((6 * n) * sizeof(double))
    if scratch == NULL:
        raise MemoryError()
    cdef double* cbuf = scratch + 4 * n
    cdef double* gbuf = NULL
    cdef double* pcol = scratch + 5 * n
    cdef int t, b, a, code = COL_OK
    cdef double val
    gbuf = <double*> malloc(n * sizeof(double))
    if gbuf == NULL:
        free(scratch)
        raise MemoryError()
    cdef double* pcbuf = <double*> malloc(n * sizeof(double))
    if pcbuf == NULL:
        free(scratch)
        free(gbuf)
        raise MemoryError()
    try:
        with nogil:
            for t in range(T - 1, -1, -1):
                for a in range(n):
                    cbuf[a] = u[t, a] + Vv[t + 1, a]
                for b in range(n):
                    for a in range(n):
                        gbuf[a] = ga[t, a, b]
                        pcbuf[a] = pb[a, b]
                    code = _solve_column(n, cbuf, gbuf, pcbuf, pcol, &val, scratch)
                    if code != COL_OK:
                        break
                    for a in range(n):
                        Pv[t, a, b] = pcol[a]
                    Vv[t, b] = val
                if code != COL_OK:
                    break
    finally:
        free(scratch)
        free(gbuf)
        free(pcbuf)
    if code != COL_OK:
        _raise_column_error(code)
    return P, V


def boxqp_pen(h, g, lo, hi, cmat, d, cl, cu, double rho, double lip, x0,
              double tol, int max_iter):
    """FISTA box QP with interval penalty; see pure.boxqp_pen."""
    cdef double[:, ::1] H = np.ascontiguousarray(h, dtype=float)
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=float)
    cdef double[::1] lov = np.ascontiguousarray(lo, dtype=float)
    cdef double[::1] hiv = np.ascontiguousarray(hi, dtype=float)
    cdef int n = gv.shape[0]
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    if n == 0:
        return x, 0.0, 0

    cdef bint has_rows = cmat is not None and cmat.shape[0] > 0
    cdef double[:, ::1] C = np.zeros((1, 1))
    cdef double[::1] dv = np.zeros(1)
    cdef double[::1] clv = np.zeros(1)
    cdef double[::1] cuv = np.zeros(1)
    cdef int nc = 0
    if has_rows:
        C = np.ascontiguousarray(cmat, dtype=float)
        dv = np.ascontiguousarray(d, dtype=float)
        clv = np.ascontiguousarray(cl, dtype=float)
        cuv = np.ascontiguousarray(cu, dtype=float)
        nc = C.shape[0]

    cdef double[::1] xv = x
    buf = np.zeros((4, n))
    cdef double[:, ::1] B = buf
    cdef double[::1] y = B[0]
    cdef double[::1] gy = B[1]
    cdef double[::1] xn = B[2]
    cdef double[::1] gx = B[3]
    cdef int i, k, niter = 0
    cdef double res, step, tk, t_new, dot

    with nogil:
        for i in range(n):
            y[i] = xv[i]
        _grad(H, gv, has_rows, C, dv, clv, cuv, rho, nc, n, xv, gx)
        res = _pg_residual(n, xv, gx, lov, hiv)
        if res > tol:
            step = 1.0 / lip
            tk = 1.0
            for k in range(1, max_iter + 1):
                niter = k
                _grad(H, gv, has_rows, C, dv, clv, cuv, rho, nc, n, y, gy)
                for i in range(n):
                    xn[i] = _clip(y[i] - step * gy[i], lov[i], hiv[i])
                _grad(H, gv, has_rows, C, dv, clv, cuv, rho, nc, n, xn, gx)
                res = _pg_residual(n, xn, gx, lov, hiv)
                if res <= tol:
                    for i in range(n):
                        xv[i] = xn[i]
                    break
                dot = 0.0
                for i in range(n):
                    dot += gx[i] * (xn[i] - xv[i])
                if dot > 0.0:
                    tk = 1.0
                t_new = 0.5 * (1.0 + sqrt(1.0 + 4.0 * tk * tk))
                for i in range(n):
                    y[i] = xn[i] + ((tk - 1.0) / t_new) * (xn[i] - xv[i])
                    xv[i] = xn[i]
                tk = t_new
    return x, res, niter


cdef inline double _clip(double v, double a, double b) noexcept nogil:
    if v < a:
        return a
    if v > b:
        return b
    return v


cdef double _pg_residual(int n, double[::1] x, double[::1] gx,
                         double[::1] lo, double[::1] hi) noexcept nogil:
    cdef double res = 0.0, dev
    cdef int i
    for i in range(n):
        dev = fabs(x[i] - _clip(x[i] - gx[i], lo[i], hi[i]))
        if dev > res:
            res = dev
    return res


cdef void _grad(double[:, ::1] H, double[::1] g, bint has_rows, double[:, ::1] C,
                double[::1] d, double[::1] cl, double[::1] cu, double rho,
                int nc, int n, double[::1] v, double[::1] out) noexcept nogil:
    cdef int i, j, r
    cdef double acc, zr, er
    for i in range(n):
        acc = g[i]
        for j in range(n):
            acc += H[i, j] * v[j]
        out[i] = acc
    if has_rows:
        for r in range(nc):
            zr = d[r]
            for j in range(n):
                zr += C[r, j] * v[j]
            er = zr - _clip(zr, cl[r], cu[r])
            if er != 0.0:
                er *= rho
                for j in range(n):
                    out[j] += C[r, j] * er
