"""Independent reference implementations used by the tests.

Everything here is deliberately naive: scalar loops, brute force and
numerical quadrature, sharing no code with the package.
"""

import math

import numpy as np
from scipy import integrate, special


def scalar_bce(e_hat, e, eps=1e-7):
    total = 0.0
    for p, y in zip(e_hat, e):
        p = min(max(p, eps), 1 - eps)
        total += y * math.log(p) + (1 - y) * math.log(1 - p)
    return -total / len(e)


def direct_l1(e, e_hat):
    total = 0.0
    rows, cols = len(e), len(e[0])
    for i in range(rows):
        for j in range(cols):
            total += abs(float(e[i][j]) - float(e_hat[i][j]))
    return total / (rows * cols)


def finite_difference(loss_fn, params, h=1e-6):
    """Central differences of ``loss_fn()`` w.r.t. every entry of ``params``."""
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_fn()
            p[idx] = old - h
            down = loss_fn()
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-4):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def hamming(x, y):
    return sum(int(a != b) for a, b in zip(x, y))


def brute_nn(engagers, contributors, cols, exclude=None):
    """Index of the nearest contributor per engager, lowest index on ties."""
    picks = []
    for i, e in enumerate(engagers):
        best, best_d = None, None
        for k, c in enumerate(contributors):
            if exclude is not None and exclude[i] == k:
                continue
            d = hamming(e[:cols], c[:cols])
            if best_d is None or d < best_d:
                best, best_d = k, d
        picks.append(best)
    return picks


def brute_conditional_nn(engagers, contributors, t, cols, exclude=None):
    """Nearest covering contributor; if none covers, distance + (t + 1) * missed."""
    picks = []
    for i, e in enumerate(engagers):
        scored = []
        for k, c in enumerate(contributors):
            if exclude is not None and exclude[i] == k:
                continue
            missed = sum(1 for j in range(t) if e[j] == 1 and c[j] == 0)
            scored.append((missed, hamming(e[:cols], c[:cols]), k))
        covering = [(d, k) for missed, d, k in scored if missed == 0]
        if covering:
            picks.append(min(covering)[1])
        else:
            picks.append(min((d + (t + 1) * missed, k) for missed, d, k in scored)[1])
    return picks


def single_cell_posterior_mean(a, hyper):
    """E[pi * lam | a] for a ~ Poisson(pi lam), pi ~ Gamma(c1, c2), lam ~ Gamma(c3, c4).

    2-D quadrature over (pi, lam) in log coordinates; shape/rate Gammas.
    """
    c1, c2, c3, c4 = hyper

    def log_joint(u, v):
        pi, lam = math.exp(u), math.exp(v)
        r = pi * lam
        return (c1 * u - c2 * pi + c3 * v - c4 * lam + a * math.log(r) - r
                - special.gammaln(a + 1))

    lim = (-40.0, 8.0)
    shift = log_joint(0.5 * math.log(max(a, 1)), 0.5 * math.log(max(a, 1)))

    def dens(v, u):
        return math.exp(log_joint(u, v) - shift)

    def moment(v, u):
        return math.exp(u + v + log_joint(u, v) - shift)

    opts = dict(epsabs=0, epsrel=1e-10)
    z, _ = integrate.dblquad(dens, *lim, *lim, **opts)
    m, _ = integrate.dblquad(moment, *lim, *lim, **opts)
    return m / z


def mean_field_single_cell(a, hyper, iters=10_000):
    """Fixed point of coordinate ascent for the single-cell Gamma-Poisson model."""
    c1, c2, c3, c4 = hyper
    su, ru, st, rt = c1, c2, c3, c4
    for _ in range(iters):
        # one latent component, so the allocation weight is 1
        su, ru = c1 + a, c2 + st / rt
        st, rt = c3 + a, c4 + su / ru
    return (su / ru) * (st / rt)
