"""Hot numeric loops.

Every kernel exists twice: a ``*_nb`` loop compiled with numba and a ``*_np``
vectorised (or plain-loop, where the recursion is nonlinear) fallback. The
unsuffixed names are bound at import time according to
:data:`robcusum._accel.USE_NUMBA`; both variants stay importable so tests and
the benchmark can compare them.
"""

import math

import numpy as np
from scipy.signal import lfilter

from ._accel import USE_NUMBA, njit

LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------------------
# GARCH(1,1) conditional variance


@njit
def garch_variance_nb(x2, omega, alpha, beta, init):
    n = x2.shape[0]
    s2 = np.empty(n)
    s2[0] = init
    for t in range(1, n):
        s2[t] = omega + alpha * x2[t - 1] + beta * s2[t - 1]
    return s2


def garch_variance_np(x2, omega, alpha, beta, init):
    n = x2.shape[0]
    drive = np.empty(n)
    drive[0] = init
    drive[1:] = omega + alpha * x2[:-1]
    return lfilter([1.0], [1.0, -beta], drive)


# --------------------------------------------------------------------------
# Criterion value and analytic gradient.
# gamma == 0 selects the Gaussian quasi-likelihood log s + u/s, gamma > 0 the
# density power divergence loss with a Gaussian kernel.


@njit
def garch_loss_grad_nb(x2, omega, alpha, beta, init, gamma):
    n = x2.shape[0]
    total = 0.0
    g0 = 0.0
    g1 = 0.0
    g2 = 0.0
    s = init
    d0 = 0.0
    d1 = 0.0
    d2 = 0.0
    if gamma > 0.0:
        c = math.exp(-0.5 * gamma * LOG_2PI)
        a = 1.0 / math.sqrt(1.0 + gamma)
        b = 1.0 + 1.0 / gamma
    else:
        c = 1.0
        a = 0.0
        b = 0.0
    for t in range(n):
        if t > 0:
            d0 = 1.0 + beta * d0
            d1 = x2[t - 1] + beta * d1
            d2 = s + beta * d2
            s = omega + alpha * x2[t - 1] + beta * s
        u = x2[t]
        if gamma > 0.0:
            e = math.exp(-0.5 * gamma * u / s)
            sp = c * s ** (-0.5 * gamma)
            total += sp * (a - b * e)
            dl = 0.5 * gamma * sp / s * (-a + b * e * (1.0 - u / s))
        else:
            total += math.log(s) + u / s
            dl = 1.0 / s - u / (s * s)
        g0 += dl * d0
        g1 += dl * d1
        g2 += dl * d2
    grad = np.empty(3)
    grad[0] = g0 / n
    grad[1] = g1 / n
    grad[2] = g2 / n
    return total / n, grad


def garch_loss_grad_np(x2, omega, alpha, beta, init, gamma):
    n = x2.shape[0]
    s = garch_variance_np(x2, omega, alpha, beta, init)
    den = [1.0, -beta]
    lag_one = np.zeros(n)
    lag_one[1:] = 1.0
    lag_x2 = np.zeros(n)
    lag_x2[1:] = x2[:-1]
    lag_s = np.zeros(n)
    lag_s[1:] = s[:-1]
    ds = np.vstack([lfilter([1.0], den, lag_one),
                    lfilter([1.0], den, lag_x2),
                    lfilter([1.0], den, lag_s)])
    if gamma > 0.0:
        c = math.exp(-0.5 * gamma * LOG_2PI)
        a = 1.0 / math.sqrt(1.0 + gamma)
        b = 1.0 + 1.0 / gamma
        e = np.exp(-0.5 * gamma * x2 / s)
        sp = c * s ** (-0.5 * gamma)
        loss = sp * (a - b * e)
        dl = 0.5 * gamma * sp / s * (-a + b * e * (1.0 - x2 / s))
    else:
        loss = np.log(s) + x2 / s
        dl = 1.0 / s - x2 / (s * s)
    return loss.mean(), ds @ dl / n


# --------------------------------------------------------------------------
# Simulation: x_t = sqrt(s_t) * eps_t, parameters may vary with t.


@njit
def garch_simulate_nb(eps, omega_t, alpha_t, beta_t, init):
    n = eps.shape[0]
    x = np.empty(n)
    s2 = np.empty(n)
    s = init
    for t in range(n):
        if t > 0:
            s = omega_t[t] + alpha_t[t] * x[t - 1] * x[t - 1] + beta_t[t] * s
        s2[t] = s
        x[t] = math.sqrt(s) * eps[t]
    return x, s2


def garch_simulate_np(eps, omega_t, alpha_t, beta_t, init):
    n = eps.shape[0]
    x = np.empty(n)
    s2 = np.empty(n)
    s = float(init)
    for t in range(n):
        if t > 0:
            s = omega_t[t] + alpha_t[t] * x[t - 1] * x[t - 1] + beta_t[t] * s
        s2[t] = s
        x[t] = math.sqrt(s) * eps[t]
    return x, s2


# --------------------------------------------------------------------------
# CUSUM process |S_k - (k/n) S_n|, k = 1..n


@njit
def cusum_abs_nb(v):
    n = v.shape[0]
    total = 0.0
    for t in range(n):
        total += v[t]
    mean = total / n
    out = np.empty(n)
    acc = 0.0
    for k in range(n):
        acc += v[k] - mean
        out[k] = abs(acc)
    out[n - 1] = 0.0
    return out


def cusum_abs_np(v):
    out = np.abs(np.cumsum(v - v.mean()))
    out[-1] = 0.0
    return out


# --------------------------------------------------------------------------
# Self-normaliser V_{n,k}, k = 1..n-1, in O(n).
#   forward(k)  = sum_{t<=k} (S_t - t S_k / k)^2
#               = A_k - 2 (S_k/k) B_k + (S_k/k)^2 C_k
# with A_k = sum S_t^2, B_k = sum t S_t, C_k = sum t^2; the backward part is
# the same expression on the reversed series evaluated at n - k.
# The input is centred first: V is translation invariant and centring keeps
# the prefix sums small.


@njit
def _forward_terms_nb(v):
    n = v.shape[0]
    out = np.empty(n)
    s = 0.0
    a = 0.0
    b = 0.0
    for k in range(1, n + 1):
        s += v[k - 1]
        a += s * s
        b += k * s
        m = s / k
        c = k * (k + 1.0) * (2.0 * k + 1.0) / 6.0
        val = a - 2.0 * m * b + m * m * c
        out[k - 1] = val if val > 0.0 else 0.0
    return out


@njit
def self_normalizer_nb(v):
    n = v.shape[0]
    total = 0.0
    for t in range(n):
        total += v[t]
    mean = total / n
    w = np.empty(n)
    r = np.empty(n)
    for t in range(n):
        w[t] = v[t] - mean
        r[n - 1 - t] = v[t] - mean
    fwd = _forward_terms_nb(w)
    bwd = _forward_terms_nb(r)
    out = np.empty(n - 1)
    for k in range(1, n):
        out[k - 1] = fwd[k - 1] + bwd[n - k - 1]
    return out


def _forward_terms_np(w):
    k = np.arange(1, w.shape[0] + 1, dtype=float)
    s = np.cumsum(w)
    a = np.cumsum(s * s)
    b = np.cumsum(k * s)
    c = k * (k + 1.0) * (2.0 * k + 1.0) / 6.0
    m = s / k
    return np.maximum(a - 2.0 * m * b + m * m * c, 0.0)


def self_normalizer_np(v):
    w = v - v.mean()
    n = w.shape[0]
    fwd = _forward_terms_np(w)
    bwd = _forward_terms_np(w[::-1])
    return fwd[: n - 1] + bwd[n - 2:: -1]


# --------------------------------------------------------------------------
# Brownian bridge supremum with exact sub-interval extrema.
# Between grid values a and b (duration h) the bridge is itself a Brownian
# bridge from a to b; its maximum has the closed-form inverse CDF
#   (a + b + sqrt((b - a)^2 - 2 h log U)) / 2.


@njit
def bridge_sup_nb(z, u_hi, u_lo, refine):
    m = z.shape[0]
    scale = 1.0 / math.sqrt(m)
    total = 0.0
    for j in range(m):
        total += z[j]
    h = 1.0 / m
    acc = 0.0
    prev = 0.0
    best = 0.0
    for j in range(m):
        acc += z[j]
        cur = (acc - (j + 1.0) / m * total) * scale
        if refine:
            d2 = (cur - prev) * (cur - prev)
            top = 0.5 * (prev + cur + math.sqrt(d2 - 2.0 * h * math.log(u_hi[j])))
            bot = 0.5 * (prev + cur - math.sqrt(d2 - 2.0 * h * math.log(u_lo[j])))
            if top > best:
                best = top
            if -bot > best:
                best = -bot
        elif abs(cur) > best:
            best = abs(cur)
        prev = cur
    return best


def bridge_sup_np(z, u_hi, u_lo, refine):
    m = z.shape[0]
    t = np.arange(1, m + 1) / m
    s = np.cumsum(z)
    bridge = (s - t * s[-1]) / math.sqrt(m)
    if not refine:
        return float(np.abs(bridge).max())
    prev = np.concatenate(([0.0], bridge[:-1]))
    d2 = (bridge - prev) ** 2
    h = 1.0 / m
    top = 0.5 * (prev + bridge + np.sqrt(d2 - 2.0 * h * np.log(u_hi)))
    bot = 0.5 * (prev + bridge - np.sqrt(d2 - 2.0 * h * np.log(u_lo)))
    return float(max(top.max(), (-bot).max(), 0.0))


# --------------------------------------------------------------------------
# Self-normalised ratio n D_k^2 / V_{n,k} maximised over k = 1..n-1, skipping
# k whose V_{n,k} is numerically zero. Returns (max, argmax k) with k 1-based;
# (nan, 0) when every V vanishes.

_V_RTOL = 1e-12


@njit
def sn_max_nb(v):
    n = v.shape[0]
    d = cusum_abs_nb(v)
    vv = self_normalizer_nb(v)
    vmax = 0.0
    for k in range(n - 1):
        if vv[k] > vmax:
            vmax = vv[k]
    if vmax <= 0.0:
        return np.nan, 0
    floor = _V_RTOL * vmax
    best = -1.0
    arg = 0
    for k in range(n - 1):
        if vv[k] > floor:
            r = n * d[k] * d[k] / vv[k]
            if r > best:
                best = r
                arg = k + 1
    return best, arg


def sn_max_np(v):
    n = v.shape[0]
    d = cusum_abs_np(v)[: n - 1]
    vv = self_normalizer_np(v)
    vmax = vv.max()
    if vmax <= 0.0:
        return float("nan"), 0
    ok = vv > _V_RTOL * vmax
    ratio = np.full(n - 1, -1.0)
    ratio[ok] = n * d[ok] ** 2 / vv[ok]
    k = int(np.argmax(ratio))
    return float(ratio[k]), k + 1


if USE_NUMBA:
    garch_variance = garch_variance_nb
    garch_loss_grad = garch_loss_grad_nb
    garch_simulate = garch_simulate_nb
    cusum_abs = cusum_abs_nb
    self_normalizer = self_normalizer_nb
    bridge_sup = bridge_sup_nb
    sn_max = sn_max_nb
else:
    garch_variance = garch_variance_np
    garch_loss_grad = garch_loss_grad_np
    garch_simulate = garch_simulate_np
    cusum_abs = cusum_abs_np
    self_normalizer = self_normalizer_np
    bridge_sup = bridge_sup_np
    sn_max = sn_max_np
