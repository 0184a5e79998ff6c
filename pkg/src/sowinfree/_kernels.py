"""Compiled inner loops for the fixed-step Lie-group steppers.

Straight translations of the batched numpy kernels in
:mod:`sowinfree.dynamics`, compiled with numba so that long fixed-step runs
are not dominated by per-call dispatch overhead.  The numpy implementations
remain the reference path; :func:`sowinfree.dynamics.integrate` falls back
to them whenever this module does not cover a configuration (n > 6, the
ambient stepper, a profile with no packed form, numba unavailable).

Profiles are dispatched on an integer kind id with packed scalar
parameters, so a single compiled specialization serves every supported
configuration:

    0  linear-hat     sp = [beta]
    1  cosine-taper   sp = [beta]
    2  continuum      sp = [beta, r1, rx0, kappa, lambda_star, x0]
    3  tabulated      knots / vals arrays
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["advance", "pack_profile"]

_EMPTY = np.empty(0)


def pack_profile(influence):
    """Map an influence function onto (kind_id, scalars, knots, vals).

    Returns None when the profile has no compiled equivalent.
    """
    p = influence.params
    if influence.kind == "linear-hat":
        return 0, np.array([float(p["beta"])]), _EMPTY, _EMPTY
    if influence.kind == "cosine-taper":
        return 1, np.array([float(p["beta"])]), _EMPTY, _EMPTY
    if influence.kind == "continuum":
        r1 = float(np.arcsin(p["lambda_star"] / p["kappa"]))
        rx0 = float(np.arcsin(p["lambda_star"] / (p["kappa"] * p["x0"])))
        sp = np.array([float(p["beta"]), r1, rx0, float(p["kappa"]),
                       float(p["lambda_star"]), float(p["x0"])])
        return 2, sp, _EMPTY, _EMPTY
    if influence.kind == "tabulated":
        return (3, np.array([float(influence.beta)]),
                np.ascontiguousarray(p["knots"], dtype=np.float64),
                np.ascontiguousarray(p["values"], dtype=np.float64))
    return None


@njit(cache=True, inline="always")
def _profile_scalar(kind, sp, knots, vals, r):
    if kind == 0:
        v = 1.0 - r / sp[0]
        return v if v > 0.0 else 0.0
    if kind == 1:
        beta = sp[0]
        if r < beta:
            c = np.cos(np.pi * r / (2.0 * beta))
            return c * c
        return 0.0
    if kind == 2:
        beta = sp[0]
        r1 = sp[1]
        rx0 = sp[2]
        if r <= r1:
            return 1.0
        if r <= rx0:
            return sp[4] / (sp[3] * np.sin(r))
        if r < beta:
            return sp[5] * (beta - r) / (beta - rx0)
        return 0.0
    # tabulated: linear between knots, zero beyond the last
    m = knots.shape[0]
    if r >= knots[m - 1]:
        return vals[m - 1] if r == knots[m - 1] else 0.0
    lo = 0
    hi = m - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if knots[mid] <= r:
            lo = mid
        else:
            hi = mid
    w = (r - knots[lo]) / (knots[hi] - knots[lo])
    return vals[lo] + w * (vals[hi] - vals[lo])


@njit(cache=True, inline="always")
def _clip1(c):
    if c > 1.0:
        return 1.0
    if c < -1.0:
        return -1.0
    return c


@njit(cache=True, inline="always")
def _mm(a, b, out):
    n = a.shape[0]
    for r in range(n):
        for c in range(n):
            acc = 0.0
            for k in range(n):
                acc += a[r, k] * b[k, c]
            out[r, c] = acc


@njit(cache=True)
def _dist(rel, ws):
    # geodesic distance to the identity of one near-rotation; ws is a
    # scratch matrix used only by the n = 6 branch
    n = rel.shape[0]
    if n == 2:
        return abs(np.arctan2(rel[1, 0] - rel[0, 1], rel[0, 0] + rel[1, 1]))
    if n == 3:
        return np.arccos(_clip1((rel[0, 0] + rel[1, 1] + rel[2, 2] - 1.0) / 2.0))
    if n <= 5:
        off = float(n - 4)
        t1 = 0.0
        t2 = 0.0
        for a in range(n):
            t1 += rel[a, a]
            for b in range(n):
                s = 0.5 * (rel[a, b] + rel[b, a])
                t2 += s * s
        e1 = (t1 - off) / 2.0
        m2 = (t2 - off) / 2.0
        d2 = 2.0 * m2 - e1 * e1
        disc = np.sqrt(d2) if d2 > 0.0 else 0.0
        th1 = np.arccos(_clip1((e1 + disc) / 2.0))
        th2 = np.arccos(_clip1((e1 - disc) / 2.0))
        return np.sqrt(th1 * th1 + th2 * th2)
    # n = 6: trigonometric roots of the symmetric part's cubic
    for a in range(6):
        for b in range(6):
            ws[a, b] = 0.5 * (rel[a, b] + rel[b, a])
    p1 = 0.0
    p2 = 0.0
    for a in range(6):
        p1 += ws[a, a]
        for b in range(6):
            p2 += ws[a, b] * ws[a, b]
    p1 /= 2.0
    p2 /= 2.0
    p3 = 0.0
    for a in range(6):
        for b in range(6):
            acc = 0.0
            for k in range(6):
                acc += ws[a, k] * ws[k, b]
            p3 += acc * ws[b, a]
    p3 /= 2.0
    e1 = p1
    e2 = (p1 * p1 - p2) / 2.0
    e3 = (p1 ** 3 - 3.0 * p1 * p2 + 2.0 * p3) / 6.0
    p = e2 - e1 * e1 / 3.0
    q = -2.0 * e1 ** 3 / 27.0 + e1 * e2 / 3.0 - e3
    mag = -p / 3.0
    m = 2.0 * np.sqrt(mag) if mag > 0.0 else 0.0
    denom = p * m
    arg = 3.0 * q / denom if abs(denom) > 1e-300 else 0.0
    phi = np.arccos(_clip1(arg))
    acc = 0.0
    for k in range(3):
        root = _clip1(e1 / 3.0 + m * np.cos((phi - 2.0 * np.pi * k) / 3.0))
        th = np.arccos(root)
        acc += th * th
    return np.sqrt(acc)


@njit(cache=True)
def _expm(x, out, w1, w2, w3, w4, w5):
    # same evaluation as the batched numpy version: closed forms for
    # n <= 3, scaled degree-8 Taylor above
    n = x.shape[0]
    if n == 2:
        a = x[1, 0]
        c = np.cos(a)
        s = np.sin(a)
        out[0, 0] = c
        out[0, 1] = -s
        out[1, 0] = s
        out[1, 1] = c
        return
    if n == 3:
        th2 = x[2, 1] * x[2, 1] + x[0, 2] * x[0, 2] + x[1, 0] * x[1, 0]
        th = np.sqrt(th2)
        if th < 1e-4:      # series branch keeps (1 - cos)/th^2 cancellation-free
            a = 1.0 - th2 / 6.0 + th2 * th2 / 120.0
            b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0
        else:
            a = np.sin(th) / th
            b = (1.0 - np.cos(th)) / th2
        for r in range(3):
            for c in range(3):
                acc = 0.0
                for k in range(3):
                    acc += x[r, k] * x[k, c]
                out[r, c] = a * x[r, c] + b * acc
            out[r, r] += 1.0
        return
    fro2 = 0.0
    for r in range(n):
        for c in range(n):
            fro2 += x[r, c] * x[r, c]
    top = np.sqrt(fro2)
    sq = 0
    if top > 0.05:
        sq = int(np.ceil(np.log2(top / 0.05)))
    scale = 1.0 / 2.0 ** sq
    for r in range(n):
        for c in range(n):
            w1[r, c] = scale * x[r, c]
    _mm(w1, w1, w2)
    _mm(w2, w1, w3)
    _mm(w2, w2, w4)
    for r in range(n):
        for c in range(n):
            out[r, c] = w1[r, c] + w2[r, c] / 2.0 + w3[r, c] / 6.0
            w5[r, c] = w1[r, c] / 120.0 + w2[r, c] / 720.0 + w3[r, c] / 5040.0 + w4[r, c] / 40320.0
        out[r, r] += 1.0
        w5[r, r] += 1.0 / 24.0
    for r in range(n):
        for c in range(n):
            acc = 0.0
            for k in range(n):
                acc += w4[r, k] * w5[k, c]
            out[r, c] += acc
    for _ in range(sq):
        _mm(out, out, w5)
        for r in range(n):
            for c in range(n):
                out[r, c] = w5[r, c]


@njit(cache=True)
def _coupling(y, kappa, qt, has_q, kind, sp, knots, vals, rel, ws):
    if kappa == 0.0:
        return 0.0
    count = y.shape[0]
    acc = 0.0
    for i in range(count):
        if has_q:
            _mm(qt, y[i], rel)
            acc += _profile_scalar(kind, sp, knots, vals, _dist(rel, ws))
        else:
            acc += _profile_scalar(kind, sp, knots, vals, _dist(y[i], ws))
    return 0.5 * kappa * acc / count


@njit(cache=True)
def _generators(y, freqs, coup, qt, has_q, out, tmp):
    count = y.shape[0]
    n = y.shape[1]
    for i in range(count):
        if has_q:
            # m = Q y_i^T written through qt = Q^T
            for a in range(n):
                for b in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += qt[k, a] * y[i, b, k]
                    tmp[a, b] = acc
            for a in range(n):
                for b in range(n):
                    out[i, a, b] = freqs[i, a, b] + coup * (tmp[a, b] - tmp[b, a])
        else:
            for a in range(n):
                for b in range(n):
                    out[i, a, b] = freqs[i, a, b] + coup * (y[i, b, a] - y[i, a, b])


@njit(cache=True, inline="always")
def _dexpinv(kmat, a, alpha, out, t1, t2, t3):
    # dexpinv about u = alpha * kmat, truncated after the double commutator
    _mm(kmat, a, t1)
    _mm(a, kmat, t2)
    n = a.shape[0]
    for r in range(n):
        for c in range(n):
            t1[r, c] -= t2[r, c]
    _mm(kmat, t1, t2)
    _mm(t1, kmat, t3)
    ha = 0.5 * alpha
    qa = alpha * alpha / 12.0
    for r in range(n):
        for c in range(n):
            out[r, c] = a[r, c] - ha * t1[r, c] + qa * (t2[r, c] - t3[r, c])


@njit(cache=True)
def advance(rot, freqs, kappa, qt, has_q, kind, sp, knots, vals, h, steps, rkmk4):
    """Advance the ensemble ``steps`` fixed steps in place."""
    count = rot.shape[0]
    n = rot.shape[1]
    k1 = np.empty((count, n, n))
    k2 = np.empty((count, n, n))
    k3 = np.empty((count, n, n))
    k4 = np.empty((count, n, n))
    y = np.empty((count, n, n))
    g = np.empty((count, n, n))
    u = np.empty((n, n))
    e = np.empty((n, n))
    t1 = np.empty((n, n))
    t2 = np.empty((n, n))
    t3 = np.empty((n, n))
    w1 = np.empty((n, n))
    w2 = np.empty((n, n))
    w3 = np.empty((n, n))
    w4 = np.empty((n, n))
    w5 = np.empty((n, n))
    tmp = np.empty((n, n))
    ws = np.empty((n, n))
    half = 0.5 * h
    sixth = h / 6.0
    for _ in range(steps):
        coup = _coupling(rot, kappa, qt, has_q, kind, sp, knots, vals, tmp, ws)
        _generators(rot, freqs, coup, qt, has_q, k1, tmp)
        if not rkmk4:
            for i in range(count):
                for r in range(n):
                    for c in range(n):
                        u[r, c] = h * k1[i, r, c]
                _expm(u, e, w1, w2, w3, w4, w5)
                _mm(e, rot[i], t1)
                for r in range(n):
                    for c in range(n):
                        rot[i, r, c] = t1[r, c]
            continue
        for i in range(count):
            for r in range(n):
                for c in range(n):
                    u[r, c] = half * k1[i, r, c]
            _expm(u, e, w1, w2, w3, w4, w5)
            _mm(e, rot[i], y[i])
        coup = _coupling(y, kappa, qt, has_q, kind, sp, knots, vals, tmp, ws)
        _generators(y, freqs, coup, qt, has_q, g, tmp)
        for i in range(count):
            _dexpinv(k1[i], g[i], half, k2[i], t1, t2, t3)
        for i in range(count):
            for r in range(n):
                for c in range(n):
                    u[r, c] = half * k2[i, r, c]
            _expm(u, e, w1, w2, w3, w4, w5)
            _mm(e, rot[i], y[i])
        coup = _coupling(y, kappa, qt, has_q, kind, sp, knots, vals, tmp, ws)
        _generators(y, freqs, coup, qt, has_q, g, tmp)
        for i in range(count):
            _dexpinv(k2[i], g[i], half, k3[i], t1, t2, t3)
        for i in range(count):
            for r in range(n):
                for c in range(n):
                    u[r, c] = h * k3[i, r, c]
            _expm(u, e, w1, w2, w3, w4, w5)
            _mm(e, rot[i], y[i])
        coup = _coupling(y, kappa, qt, has_q, kind, sp, knots, vals, tmp, ws)
        _generators(y, freqs, coup, qt, has_q, g, tmp)
        for i in range(count):
            _dexpinv(k3[i], g[i], h, k4[i], t1, t2, t3)
        for i in range(count):
            for r in range(n):
                for c in range(n):
                    u[r, c] = sixth * (k1[i, r, c] + 2.0 * (k2[i, r, c] + k3[i, r, c]) + k4[i, r, c])
            _expm(u, e, w1, w2, w3, w4, w5)
            _mm(e, rot[i], t1)
            for r in range(n):
                for c in range(n):
                    rot[i, r, c] = t1[r, c]
