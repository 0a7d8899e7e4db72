"""Compiled inner loops for the projection solver.

Coordinates are described by ``g1``/``g2``: the constraint row of each
coordinate in view1/view2, or -1.  Row 0 always covers every coordinate.
"""

import numba as nb
import numpy as np

_JIT = dict(cache=True, nogil=True)


@nb.njit(**_JIT)
def penalty_and_gradient(x, yG, yI, v2, s, g1, g2, gx, gyG, gyI, ax, q):
    """Penalty value; gradient written into ``gx``, ``gyG``, ``gyI``.

    ``ax`` and ``q`` are scratch arrays of length ``s.size``.
    """
    p = x.size
    G = s.size
    for g in range(G):
        ax[g] = 0.0
    tot = 0.0
    for i in range(p):
        tot += x[i]
        if g1[i] >= 0:
            ax[g1[i]] += x[i]
        if g2[i] >= 0:
            ax[g2[i]] += x[i]
    ax[0] = tot
    r = 0.0
    for g in range(G):
        r += s[g] * yG[g]
    for i in range(p):
        r += yI[i] - v2[i] * x[i]
    f = r * r
    for g in range(G):
        qg = ax[g] - s[g]
        if qg < 0.0:
            qg = 0.0
        q[g] = qg
        f += qg * qg
        gyG[g] = r * s[g]
    for i in range(p):
        a = yG[0]
        aq = q[0]
        if g1[i] >= 0:
            a += yG[g1[i]]
            aq += q[g1[i]]
        if g2[i] >= 0:
            a += yG[g2[i]]
            aq += q[g2[i]]
        h = v2[i] - a - yI[i]
        if h < 0.0:
            h = 0.0
        f += h * h
        gyI[i] = r - h
        gyG[0] -= h
        if g1[i] >= 0:
            gyG[g1[i]] -= h
        if g2[i] >= 0:
            gyG[g2[i]] -= h
        gx[i] = -r * v2[i] + aq
    return 0.5 * f


@nb.njit(**_JIT)
def majorant_matvec(z, v2, s, g1, g2, out):
    """``out = H z`` for the quadratic majorant of the penalty.

    ``z`` stacks ``(x, yG, yI)``.  H = d d^T + blockdiag(A^T A, B^T B)
    with d = (-v2, s, 1) and B = [A^T I].
    """
    p = v2.size
    G = s.size
    dz = 0.0
    for i in range(p):
        dz += -v2[i] * z[i] + z[p + G + i]
    for g in range(G):
        dz += s[g] * z[p + g]
    ax = np.zeros(G)
    tot = 0.0
    for i in range(p):
        tot += z[i]
        if g1[i] >= 0:
            ax[g1[i]] += z[i]
        if g2[i] >= 0:
            ax[g2[i]] += z[i]
    ax[0] = tot
    by = np.empty(p)
    for i in range(p):
        a = z[p] + z[p + G + i]
        if g1[i] >= 0:
            a += z[p + g1[i]]
        if g2[i] >= 0:
            a += z[p + g2[i]]
        by[i] = a
    for g in range(G):
        out[p + g] = s[g] * dz
    for i in range(p):
        a = ax[0]
        if g1[i] >= 0:
            a += ax[g1[i]]
        if g2[i] >= 0:
            a += ax[g2[i]]
        out[i] = -v2[i] * dz + a
        out[p + G + i] = dz + by[i]
        out[p] += by[i]
        if g1[i] >= 0:
            out[p + g1[i]] += by[i]
        if g2[i] >= 0:
            out[p + g2[i]] += by[i]


@nb.njit(**_JIT)
def power_iteration(v2, s, g1, g2, scale, iters, tol):
    """Largest eigenvalue of ``S^1/2 H S^1/2`` with ``S = diag(scale)``."""
    n = scale.size
    z = np.ones(n) / np.sqrt(n)
    w = np.empty(n)
    out = np.empty(n)
    lam = 0.0
    for _ in range(iters):
        for k in range(n):
            w[k] = np.sqrt(scale[k]) * z[k]
        majorant_matvec(w, v2, s, g1, g2, out)
        nrm = 0.0
        for k in range(n):
            out[k] *= np.sqrt(scale[k])
            nrm += out[k] * out[k]
        nrm = np.sqrt(nrm)
        if nrm == 0.0:
            return 0.0
        for k in range(n):
            z[k] = out[k] / nrm
        if abs(nrm - lam) <= tol * nrm:
            return nrm
        lam = nrm
    return lam


@nb.njit(**_JIT)
def dual_bound(yG, v2, s, g1, g2):
    """Upper bound on the integer optimum from any ``yG >= 0``."""
    ub = 0.0
    for g in range(s.size):
        ub += s[g] * yG[g]
    for i in range(v2.size):
        a = yG[0]
        if g1[i] >= 0:
            a += yG[g1[i]]
        if g2[i] >= 0:
            a += yG[g2[i]]
        if v2[i] > a:
            ub += v2[i] - a
    return ub


@nb.njit(**_JIT)
def _fits(i, cnt, s, g1, g2):
    if cnt[0] + 1 > s[0]:
        return False
    if g1[i] >= 0 and cnt[g1[i]] + 1 > s[g1[i]]:
        return False
    if g2[i] >= 0 and cnt[g2[i]] + 1 > s[g2[i]]:
        return False
    return True


@nb.njit(**_JIT)
def _take(i, cnt, g1, g2, sup):
    sup[i] = 1
    cnt[0] += 1
    if g1[i] >= 0:
        cnt[g1[i]] += 1
    if g2[i] >= 0:
        cnt[g2[i]] += 1


@nb.njit(**_JIT)
def round_support(x, v2, s, g1, g2, order, sup, cnt, complete):
    """0/1 candidate from ``x``; returns its objective under ``v2``.

    Coordinates with ``x >= 0.5`` are kept.  Without ``complete`` that is
    the whole rule and an infeasible rounding returns ``-inf``.  With
    ``complete`` an overflowing rounding is trimmed (largest ``x`` first)
    and the remaining coordinates with positive weight are then added
    greedily in ``order`` while every budget has room.
    """
    p = x.size
    for g in range(s.size):
        cnt[g] = 0.0
    for i in range(p):
        sup[i] = 0
    for i in range(p):
        if x[i] >= 0.5:
            _take(i, cnt, g1, g2, sup)
    ok = True
    for g in range(s.size):
        if cnt[g] > s[g]:
            ok = False
    if not complete:
        if not ok:
            return -np.inf
        val = 0.0
        for i in range(p):
            if sup[i]:
                val += v2[i]
        return val
    if not ok:
        for g in range(s.size):
            cnt[g] = 0.0
        for i in range(p):
            sup[i] = 0
        byx = np.argsort(-x)
        for k in range(p):
            i = byx[k]
            if x[i] < 0.5:
                break
            if _fits(i, cnt, s, g1, g2):
                _take(i, cnt, g1, g2, sup)
    for k in range(p):
        i = order[k]
        if v2[i] <= 0.0:
            break
        if sup[i] == 0 and _fits(i, cnt, s, g1, g2):
            _take(i, cnt, g1, g2, sup)
    val = 0.0
    for i in range(p):
        if sup[i]:
            val += v2[i]
    return val


@nb.njit(**_JIT)
def tighten_dual(yG, v2, s, g1, g2, ptr, idx, sweeps, out):
    """Lower :func:`dual_bound` by exact minimization over one group multiplier at a time.

    Starts from ``yG`` and writes the result to ``out``.  ``ptr``/``idx``
    list the coordinates of each constraint row (CSR layout).  For fixed
    other multipliers the bound is convex piecewise linear in ``yG[g]``
    and minimized at the ``(s_g + 1)``-th largest reduced weight of the
    row, clipped at 0.  Returns the final bound.
    """
    G = s.size
    for g in range(G):
        out[g] = yG[g]
    for _ in range(sweeps):
        for g in range(G):
            n = ptr[g + 1] - ptr[g]
            b = int(s[g])
            if n <= b:
                out[g] = 0.0
                continue
            red = np.empty(n)
            for k in range(n):
                i = idx[ptr[g] + k]
                a = out[0]
                if g1[i] >= 0:
                    a += out[g1[i]]
                if g2[i] >= 0:
                    a += out[g2[i]]
                red[k] = v2[i] - (a - out[g])
            red.sort()
            out[g] = max(red[n - 1 - b], 0.0)
    return dual_bound(out, v2, s, g1, g2)


@nb.njit(**_JIT)
def reduced_greedy(yG, v2, s, g1, g2, sup, cnt):
    """Greedy support in decreasing reduced weight ``v2_i - (A^T yG)_i``.

    At an optimal ``yG`` the coordinates with positive reduced weight
    belong to every optimal support, so this recovers an optimum without
    waiting for the primal iterate to settle.  Returns its objective.
    """
    p = v2.size
    red = np.empty(p)
    for i in range(p):
        a = yG[0]
        if g1[i] >= 0:
            a += yG[g1[i]]
        if g2[i] >= 0:
            a += yG[g2[i]]
        red[i] = v2[i] - a
    for g in range(s.size):
        cnt[g] = 0.0
    for i in range(p):
        sup[i] = 0
    val = 0.0
    for i in np.argsort(-red, kind="mergesort"):
        if v2[i] > 0.0 and _fits(i, cnt, s, g1, g2):
            _take(i, cnt, g1, g2, sup)
            val += v2[i]
    return val


@nb.njit(**_JIT)
def _attempt(x, yG, v2c, s, g1, g2, order, sup, cnt, complete, ptr, idx, sweeps, ywork, eps, alt):
    prim = round_support(x, v2c, s, g1, g2, order, sup, cnt, complete)
    ub = dual_bound(yG, v2c, s, g1, g2)
    if prim < ub - eps and sweeps > 0 and prim > -np.inf:
        ub = min(ub, tighten_dual(yG, v2c, s, g1, g2, ptr, idx, sweeps, ywork))
        if complete and prim < ub - eps:
            other = reduced_greedy(ywork, v2c, s, g1, g2, alt, cnt)
            if other > prim:
                prim = other
                sup[:] = alt
    return prim >= ub - eps, ub


@nb.njit(**_JIT)
def run(v2, v2c, s, g1, g2, order, sx, sg, si, x, yG, yI, maxit, eps, delta,
        momentum, interval, start, complete, ptr, idx, sweeps, hist, traj, ring):
    """Projected gradient on the penalty, optionally with restarted momentum.

    ``v2`` drives the iteration, ``v2c`` is the weight used by the
    rounding certificate.  ``x``, ``yG``, ``yI`` hold the start point and
    are overwritten with the last iterate.  ``hist`` receives penalty
    values (as many as fit), ``traj`` the stacked iterates (rows as fit),
    ``ring`` the most recent step lengths; ``complete`` selects the
    rounding rule of :func:`round_support` and ``sweeps`` the number of
    :func:`tighten_dual` passes (on a copy of ``yG``) spent on each
    certificate attempt.  The certificate is tried
    whenever ``x`` is near-binary and, if ``interval > 0``, also every
    ``interval`` iterations from iteration ``start`` on.

    Returns ``(status, iterations, penalty, n_steps, support, bound)``
    where status is 1 when the certificate accepted and 0 at the cap, and
    bound is the dual bound of the last attempt.
    """
    p = v2.size
    G = s.size
    xp = x.copy()
    yGp = yG.copy()
    yIp = yI.copy()
    wx = np.empty(p)
    wyG = np.empty(G)
    wyI = np.empty(p)
    nx = np.empty(p)
    nyG = np.empty(G)
    nyI = np.empty(p)
    gx = np.empty(p)
    gyG = np.empty(G)
    gyI = np.empty(p)
    ax = np.empty(G)
    q = np.empty(G)
    cnt = np.empty(G)
    sup = np.zeros(p, dtype=np.int8)
    alt = np.zeros(p, dtype=np.int8)
    ywork = np.empty(G)
    ub = np.inf
    nring = ring.size

    fz = penalty_and_gradient(x, yG, yI, v2, s, g1, g2, gx, gyG, gyI, ax, q)
    if hist.size > 0:
        hist[0] = fz
    if traj.shape[0] > 0:
        traj[0, :p] = x
        traj[0, p:p + G] = yG
        traj[0, p + G:] = yI

    fractional = 0
    for i in range(p):
        if min(x[i], 1.0 - x[i]) >= delta:
            fractional += 1
    if fractional == 0:
        ok, ub = _attempt(x, yG, v2c, s, g1, g2, order, sup, cnt, complete, ptr, idx, sweeps, ywork, eps, alt)
        if ok:
            return 1, 0, fz, 0, sup, ub

    k = 0
    for t in range(maxit):
        beta = k / (k + 3.0) if momentum else 0.0
        if beta > 0.0:
            for i in range(p):
                wx[i] = x[i] + beta * (x[i] - xp[i])
                wyI[i] = yI[i] + beta * (yI[i] - yIp[i])
            for g in range(G):
                wyG[g] = yG[g] + beta * (yG[g] - yGp[g])
            penalty_and_gradient(wx, wyG, wyI, v2, s, g1, g2, gx, gyG, gyI, ax, q)
        else:
            wx[:] = x
            wyG[:] = yG
            wyI[:] = yI
        for i in range(p):
            nx[i] = min(max(wx[i] - sx[i] * gx[i], 0.0), 1.0)
            nyI[i] = max(wyI[i] - si[i] * gyI[i], 0.0)
        for g in range(G):
            nyG[g] = max(wyG[g] - sg[g] * gyG[g], 0.0)
        fn = penalty_and_gradient(nx, nyG, nyI, v2, s, g1, g2, gx, gyG, gyI, ax, q)
        if beta > 0.0 and fn > fz:
            # restart: plain step from the current point
            k = 0
            penalty_and_gradient(x, yG, yI, v2, s, g1, g2, gx, gyG, gyI, ax, q)
            for i in range(p):
                nx[i] = min(max(x[i] - sx[i] * gx[i], 0.0), 1.0)
                nyI[i] = max(yI[i] - si[i] * gyI[i], 0.0)
            for g in range(G):
                nyG[g] = max(yG[g] - sg[g] * gyG[g], 0.0)
            fn = penalty_and_gradient(nx, nyG, nyI, v2, s, g1, g2, gx, gyG, gyI, ax, q)
        else:
            k += 1

        step = 0.0
        fractional = 0
        for i in range(p):
            d = nx[i] - x[i]
            e = nyI[i] - yI[i]
            step += d * d + e * e
            xp[i] = x[i]
            yIp[i] = yI[i]
            x[i] = nx[i]
            yI[i] = nyI[i]
            if min(x[i], 1.0 - x[i]) >= delta:
                fractional += 1
        for g in range(G):
            d = nyG[g] - yG[g]
            step += d * d
            yGp[g] = yG[g]
            yG[g] = nyG[g]
        fz = fn
        if nring > 0:
            ring[t % nring] = np.sqrt(step)
        if t + 1 < hist.size:
            hist[t + 1] = fz
        if t + 1 < traj.shape[0]:
            traj[t + 1, :p] = x
            traj[t + 1, p:p + G] = yG
            traj[t + 1, p + G:] = yI

        if fractional == 0 or (interval > 0 and t + 1 >= start and (t + 1) % interval == 0):
            ok, ub = _attempt(x, yG, v2c, s, g1, g2, order, sup, cnt, complete, ptr, idx, sweeps, ywork, eps, alt)
            if ok:
                return 1, t + 1, fz, t + 1, sup, ub
    return 0, maxit, fz, maxit, sup, ub
