"""Time-stepping kernels.

Each stepper is written once and compiled with numba; the uncompiled
``py_func`` of the same source drives fields given as Python callables. The
right-hand side is passed as ``rhs(t, z, prm, out)`` writing dz/dt into ``out``.
"""

import math

import numpy as np
from numba import njit

COMPLETED, STEP_UNDERFLOW, NON_FINITE = 0, 1, 2

# Dormand–Prince 5(4) tableau
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = np.zeros((7, 7))
DP_A[1, :1] = [1 / 5]
DP_A[2, :2] = [3 / 40, 9 / 40]
DP_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
DP_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
DP_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
DP_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
# difference between the 5th- and embedded 4th-order weights
DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# quartic continuous extension: y(t + θh) = y + h Σ_j K_j Σ_k P[j, k] θ^(k+1)
DP_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
GROW_MAX = 5.0
SHRINK_MIN = 0.2
# PI controller exponents (Hairer–Wanner DOPRI5 defaults)
PI_ALPHA = 0.17
PI_BETA = 0.04


def _dp45(rhs, prm, z0, samples, rtol, atol, h_init, h_min, h_max, time_cap, out, stats):
    """Adaptive Dormand–Prince integration from samples[0] to samples[-1].

    Fills ``out[k]`` with the state at ``samples[k]`` and returns
    ``(status, t_stop, n_filled)``; ``stats`` receives accepted/rejected step
    counts and the number of right-hand-side evaluations.
    """
    n = z0.shape[0]
    ns = samples.shape[0]
    K = np.zeros((7, n))
    z = z0.copy()
    zn = np.empty(n)
    t = samples[0]
    t_end = samples[ns - 1]
    for i in range(n):
        out[0, i] = z[i]
    filled = 1
    if ns == 1:
        return COMPLETED, t, filled
    rhs(t, z, prm, K[0])
    nfev = 1
    for i in range(n):
        if not math.isfinite(K[0, i]):
            return NON_FINITE, t, filled
    h = h_init
    err_prev = 1e-4
    n_acc = 0
    n_rej = 0
    last_nonfinite = False
    rejected = False
    while t < t_end:
        hmax = h_max
        if time_cap and t > 0.0 and 0.1 * t < hmax:
            hmax = 0.1 * t
        if h > hmax:
            h = hmax
        clipped = False
        if t + h >= t_end:
            h = t_end - t
            clipped = True
        if h < h_min and not clipped:
            stats[0], stats[1], stats[2] = n_acc, n_rej, nfev
            return (NON_FINITE if last_nonfinite else STEP_UNDERFLOW), t, filled
        for s in range(1, 7):
            for i in range(n):
                acc = z[i]
                for j in range(s):
                    acc += h * DP_A[s, j] * K[j, i]
                zn[i] = acc
            rhs(t + DP_C[s] * h, zn, prm, K[s])
        nfev += 6
        err = 0.0
        for i in range(n):
            e = 0.0
            for j in range(7):
                e += DP_E[j] * K[j, i]
            sc = atol + rtol * max(abs(z[i]), abs(zn[i]))
            err += (h * e / sc) ** 2
        err = math.sqrt(err / n)
        if not math.isfinite(err):
            last_nonfinite = True
            n_rej += 1
            h *= SHRINK_MIN
            rejected = True
            continue
        last_nonfinite = False
        if err <= 1.0:
            t_new = t_end if clipped else t + h
            # dense output for samples inside (t, t_new]
            while filled < ns and samples[filled] <= t_new:
                ts = samples[filled]
                if ts == t_new:
                    for i in range(n):
                        out[filled, i] = zn[i]
                else:
                    th = (ts - t) / h
                    for i in range(n):
                        acc = 0.0
                        for j in range(7):
                            q = 0.0
                            pw = th
                            for k in range(4):
                                q += DP_P[j, k] * pw
                                pw *= th
                            acc += K[j, i] * q
                        out[filled, i] = z[i] + h * acc
                filled += 1
            t = t_new
            for i in range(n):
                z[i] = zn[i]
                K[0, i] = K[6, i]
            n_acc += 1
            if err == 0.0:
                fac = GROW_MAX
            else:
                fac = SAFETY * err ** (-PI_ALPHA) * err_prev ** PI_BETA
                fac = min(GROW_MAX, max(SHRINK_MIN, fac))
            if rejected:
                fac = min(fac, 1.0)
            rejected = False
            err_prev = max(err, 1e-4)
            if not clipped:
                h *= fac
        else:
            n_rej += 1
            rejected = True
            h *= max(SHRINK_MIN, SAFETY * err ** -0.2)
    stats[0], stats[1], stats[2] = n_acc, n_rej, nfev
    return COMPLETED, t, filled


def _rk4(rhs, prm, z0, samples, h, out, stats):
    """Classical RK4; each sample interval is split into equal substeps of size ≤ h."""
    n = z0.shape[0]
    ns = samples.shape[0]
    z = z0.copy()
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for i in range(n):
        out[0, i] = z[i]
    nfev = 0
    nsteps = 0
    for kk in range(ns - 1):
        a = samples[kk]
        b = samples[kk + 1]
        m = int(math.ceil((b - a) / h * (1.0 - 1e-12)))
        if m < 1:
            m = 1
        hs = (b - a) / m
        for j in range(m):
            t = a + j * hs
            rhs(t, z, prm, k1)
            for i in range(n):
                tmp[i] = z[i] + 0.5 * hs * k1[i]
            rhs(t + 0.5 * hs, tmp, prm, k2)
            for i in range(n):
                tmp[i] = z[i] + 0.5 * hs * k2[i]
            rhs(t + 0.5 * hs, tmp, prm, k3)
            for i in range(n):
                tmp[i] = z[i] + hs * k3[i]
            rhs(t + hs, tmp, prm, k4)
            for i in range(n):
                z[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            nfev += 4
            nsteps += 1
            for i in range(n):
                if not math.isfinite(z[i]):
                    stats[0], stats[1], stats[2] = nsteps, 0, nfev
                    return NON_FINITE, t + hs, kk + 1
        for i in range(n):
            out[kk + 1, i] = z[i]
    stats[0], stats[1], stats[2] = nsteps, 0, nfev
    return COMPLETED, samples[ns - 1], ns


def _affine_rhs(t, z, prm, out):
    """dz/dt = (M0 + δ(t) Md) z − γ(t)·[velocity rows] + c + ε(t)·[x, y velocity rows].

    ``prm`` packs CSR arrays of M0 and Md, the constant vector, damping and
    coupling codes, and the perturbation description.
    """
    (ip0, ix0, dv0, ipd, ixd, dvd, c, fam, alpha, r, coup, cpar,
     vstart, pert, pc, pq, neps) = prm
    if fam == 0:
        g = alpha / t ** r
    else:
        g = 1.0 / (t * math.log(t) ** r)
    if coup == 0:
        d = 1.0 / (cpar * g)
    else:
        d = t / (2.0 * cpar)
    n = z.shape[0]
    for i in range(n):
        acc = c[i]
        for k in range(ip0[i], ip0[i + 1]):
            acc += dv0[k] * z[ix0[k]]
        dd = 0.0
        for k in range(ipd[i], ipd[i + 1]):
            dd += dvd[k] * z[ixd[k]]
        out[i] = acc + d * dd
    for i in range(vstart, n):
        out[i] -= g * z[i]
    if pert == 1:
        e = pc * (1.0 + t) ** (-pq)
        for i in range(vstart, vstart + neps):
            out[i] += e


dp45_jit = njit(cache=True)(_dp45)
rk4_jit = njit(cache=True)(_rk4)
affine_rhs_jit = njit(cache=True)(_affine_rhs)
