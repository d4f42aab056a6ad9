"""Goldfarb-Idnani dual active-set kernel (numba).

Solves  min 1/2 x'Gx + a'x  s.t.  C[:meq] x = b[:meq],  C[meq:] x >= b[meq:]
given ``J0 = L^{-T}`` for the Cholesky factor ``G = L L'``. Rows of ``C``
are expected to have unit norm.
"""

import numpy as np
from numba import njit

OPTIMAL = 0
INFEASIBLE = 1
MAX_ITER = 2


@njit(cache=True)
def _backsolve(R, q, d):
    r = np.zeros(q)
    for i in range(q - 1, -1, -1):
        s = d[i]
        for j in range(i + 1, q):
            s -= R[i, j] * r[j]
        r[i] = s / R[i, i]
    return r


@njit(cache=True)
def _directions(J, R, q, nvec):
    n = J.shape[0]
    d = np.zeros(n)
    for j in range(n):
        s = 0.0
        for i in range(n):
            s += J[i, j] * nvec[i]
        d[j] = s
    z = np.zeros(n)
    for j in range(q, n):
        dj = d[j]
        if dj != 0.0:
            for i in range(n):
                z[i] += J[i, j] * dj
    r = _backsolve(R, q, d)
    return d, z, r


@njit(cache=True)
def _add(J, R, q, d):
    n = J.shape[0]
    for j in range(n - 1, q, -1):
        if d[j] == 0.0:
            continue
        h = np.hypot(d[j - 1], d[j])
        c = d[j - 1] / h
        s = d[j] / h
        d[j - 1] = h
        d[j] = 0.0
        for i in range(n):
            a = J[i, j - 1]
            b = J[i, j]
            J[i, j - 1] = c * a + s * b
            J[i, j] = -s * a + c * b
    for i in range(q + 1):
        R[i, q] = d[i]


@njit(cache=True)
def _drop(J, R, q, l, active, sign, u):
    n = J.shape[0]
    for c in range(l, q - 1):
        active[c] = active[c + 1]
        sign[c] = sign[c + 1]
        u[c] = u[c + 1]
        for i in range(n):
            R[i, c] = R[i, c + 1]
    for i in range(n):
        R[i, q - 1] = 0.0
    active[q - 1] = -1
    u[q - 1] = 0.0
    for c in range(l, q - 1):
        a = R[c, c]
        b = R[c + 1, c]
        if b == 0.0:
            continue
        h = np.hypot(a, b)
        cs = a / h
        sn = b / h
        for col in range(c, q - 1):
            t1 = R[c, col]
            t2 = R[c + 1, col]
            R[c, col] = cs * t1 + sn * t2
            R[c + 1, col] = -sn * t1 + cs * t2
        R[c + 1, c] = 0.0
        for i in range(n):
            t1 = J[i, c]
            t2 = J[i, c + 1]
            J[i, c] = cs * t1 + sn * t2
            J[i, c + 1] = -sn * t1 + cs * t2


@njit(cache=True)
def solve_dual_active_set(J0, a, C, b, meq, max_iter, feas_tol):
    """Return ``(x, duals, status, iterations, witness)``.

    ``duals`` follow the convention ``G x + a - C' duals = 0`` with inequality
    duals nonnegative. On infeasibility ``witness`` holds multipliers ``y``
    (``y >= 0`` on inequality rows) with ``C' y = 0`` and ``b' y > 0``.
    """
    n = J0.shape[0]
    m = C.shape[0]
    J = J0.copy()
    R = np.zeros((n, n))
    active = np.full(n, -1)
    sign = np.ones(n)
    u = np.zeros(n)
    witness = np.zeros(m)
    q = 0
    iters = 0

    # unconstrained minimum x = -G^{-1} a = -J J' a
    x = np.zeros(n)
    tmp = np.zeros(n)
    for j in range(n):
        s = 0.0
        for i in range(n):
            s += J[i, j] * a[i]
        tmp[j] = s
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += J[i, j] * tmp[j]
        x[i] = -s

    is_active = np.zeros(m, dtype=np.bool_)
    nvec = np.zeros(n)

    p = 0
    while True:
        # pick the next constraint: pending equalities first, then the most violated inequality
        if p < meq:
            cur = p
            p += 1
            s_p = -b[cur]
            for i in range(n):
                s_p += C[cur, i] * x[i]
            sgn = 1.0
            if s_p > 0.0:
                sgn = -1.0
                s_p = -s_p
        else:
            cur = -1
            worst = -feas_tol
            for r_ in range(meq, m):
                if is_active[r_]:
                    continue
                s = -b[r_]
                for i in range(n):
                    s += C[r_, i] * x[i]
                if s < worst:
                    worst = s
                    cur = r_
            if cur < 0:
                break
            s_p = worst
            sgn = 1.0
        for i in range(n):
            nvec[i] = sgn * C[cur, i]
        bp = sgn * b[cur]
        up = 0.0
        cur_is_eq = cur < meq

        while True:
            iters += 1
            if iters > max_iter:
                duals = np.zeros(m)
                for j in range(q):
                    duals[active[j]] = u[j] * sign[j]
                return x, duals, MAX_ITER, iters, witness
            d, z, r = _directions(J, R, q, nvec)
            # dual step: largest step keeping active inequality duals >= 0
            t1 = np.inf
            l = -1
            for j in range(q):
                if active[j] >= meq and r[j] > 0.0:
                    ratio = u[j] / r[j]
                    if ratio < t1:
                        t1 = ratio
                        l = j
            dnorm2 = 0.0
            for i in range(n):
                dnorm2 += d[i] * d[i]
            ztn = 0.0
            for j in range(q, n):
                ztn += d[j] * d[j]
            # primal step: length that makes the new constraint tight
            if ztn > 1e-13 * dnorm2 and ztn > 0.0:
                s_now = -bp
                for i in range(n):
                    s_now += nvec[i] * x[i]
                t2 = -s_now / ztn
                if t2 < 0.0:
                    t2 = 0.0
            else:
                t2 = np.inf
            if cur_is_eq and t2 == np.inf:
                # dependent equality row: consistent if already satisfied
                s_now = -bp
                for i in range(n):
                    s_now += nvec[i] * x[i]
                if abs(s_now) <= feas_tol:
                    break
            if t1 == np.inf and t2 == np.inf:
                witness[cur] = sgn
                for j in range(q):
                    witness[active[j]] = -r[j] * sign[j]
                duals = np.zeros(m)
                for j in range(q):
                    duals[active[j]] = u[j] * sign[j]
                return x, duals, INFEASIBLE, iters, witness
            if t2 == np.inf:
                for j in range(q):
                    u[j] -= t1 * r[j]
                up += t1
                is_active[active[l]] = False
                _drop(J, R, q, l, active, sign, u)
                q -= 1
                continue
            t = t1 if t1 < t2 else t2
            for i in range(n):
                x[i] += t * z[i]
            for j in range(q):
                u[j] -= t * r[j]
            up += t
            if t2 <= t1:
                _add(J, R, q, d)
                active[q] = cur
                sign[q] = sgn
                u[q] = up
                is_active[cur] = True
                q += 1
                break
            is_active[active[l]] = False
            _drop(J, R, q, l, active, sign, u)
            q -= 1

    duals = np.zeros(m)
    for j in range(q):
        duals[active[j]] = u[j] * sign[j]
    return x, duals, OPTIMAL, iters, witness
