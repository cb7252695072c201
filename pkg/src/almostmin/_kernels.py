"""Fused prox-gradient kernels (numba), component-first layout (m, N0, N1[, N2]).

Mirrors the numpy path in solver._Problem; tests compare the two.
"""
from __future__ import annotations

import math

try:
    from numba import njit
except ImportError:  # pragma: no cover - numpy fallback is used
    njit = None

if njit is not None:

    @njit(cache=True, fastmath=True)
    def step2(y, fixed, free, src, lam, h, out, s2):
        m, N0, N1 = y.shape
        c = 2.0 * lam / (h * h)
        t = 2.0 * lam
        s2[:, :] = 0.0
        for k in range(m):
            for i in range(1, N0 - 1):
                for j in range(1, N1 - 1):
                    w = (y[k, i, j] + c * (y[k, i - 1, j] + y[k, i + 1, j] + y[k, i, j - 1] + y[k, i, j + 1]
                                          - 4.0 * y[k, i, j]) + t * src[k, i, j])
                    out[k, i, j] = w
                    s2[i, j] += w * w
        for i in range(N0):
            for j in range(N1):
                nw = math.sqrt(s2[i, j])
                sc = 1.0 - t / nw if nw > t else 0.0
                f = free[i, j]
                for k in range(m):
                    out[k, i, j] = out[k, i, j] * sc if f else fixed[k, i, j]
        return out

    @njit(cache=True, fastmath=True)
    def step3(y, fixed, free, src, lam, h, out, s2):
        m, N0, N1, N2 = y.shape
        c = 2.0 * lam / (h * h)
        t = 2.0 * lam
        s2[:, :, :] = 0.0
        for k in range(m):
            for i in range(1, N0 - 1):
                for j in range(1, N1 - 1):
                    for l in range(1, N2 - 1):
                        w = (y[k, i, j, l] + c * (y[k, i - 1, j, l] + y[k, i + 1, j, l] + y[k, i, j - 1, l]
                                                  + y[k, i, j + 1, l] + y[k, i, j, l - 1] + y[k, i, j, l + 1]
                                                  - 6.0 * y[k, i, j, l]) + t * src[k, i, j, l])
                        out[k, i, j, l] = w
                        s2[i, j, l] += w * w
        for i in range(N0):
            for j in range(N1):
                for l in range(N2):
                    nw = math.sqrt(s2[i, j, l])
                    sc = 1.0 - t / nw if nw > t else 0.0
                    f = free[i, j, l]
                    for k in range(m):
                        out[k, i, j, l] = out[k, i, j, l] * sc if f else fixed[k, i, j, l]
        return out

    @njit(cache=True, fastmath=True)
    def delta2(x, y, ffree, e0, e1, src, h, sx, sy):
        """J(x) - J(y) term by term (with y = 0 this is J(x))."""
        m, N0, N1 = x.shape
        De = 0.0
        lin = 0.0
        sx[:, :] = 0.0
        sy[:, :] = 0.0
        for k in range(m):
            for i in range(N0 - 1):
                for j in range(N1):
                    a = x[k, i + 1, j] - x[k, i, j]
                    b = y[k, i + 1, j] - y[k, i, j]
                    De += e0[i, j] * (a - b) * (a + b)
            for i in range(N0):
                for j in range(N1 - 1):
                    a = x[k, i, j + 1] - x[k, i, j]
                    b = y[k, i, j + 1] - y[k, i, j]
                    De += e1[i, j] * (a - b) * (a + b)
            for i in range(N0):
                for j in range(N1):
                    xv = x[k, i, j]
                    yv = y[k, i, j]
                    sx[i, j] += xv * xv
                    sy[i, j] += yv * yv
                    lin += src[k, i, j] * (xv - yv)
        Dn = 0.0
        for i in range(N0):
            for j in range(N1):
                Dn += ffree[i, j] * (math.sqrt(sx[i, j]) - math.sqrt(sy[i, j]))
        return De + (2.0 * Dn - 2.0 * lin) * h * h

    @njit(cache=True, fastmath=True)
    def delta3(x, y, ffree, e0, e1, e2, src, h, sx, sy):
        m, N0, N1, N2 = x.shape
        De = 0.0
        lin = 0.0
        sx[:, :, :] = 0.0
        sy[:, :, :] = 0.0
        for k in range(m):
            for i in range(N0 - 1):
                for j in range(N1):
                    for l in range(N2):
                        a = x[k, i + 1, j, l] - x[k, i, j, l]
                        b = y[k, i + 1, j, l] - y[k, i, j, l]
                        De += e0[i, j, l] * (a - b) * (a + b)
            for i in range(N0):
                for j in range(N1 - 1):
                    for l in range(N2):
                        a = x[k, i, j + 1, l] - x[k, i, j, l]
                        b = y[k, i, j + 1, l] - y[k, i, j, l]
                        De += e1[i, j, l] * (a - b) * (a + b)
            for i in range(N0):
                for j in range(N1):
                    for l in range(N2 - 1):
                        a = x[k, i, j, l + 1] - x[k, i, j, l]
                        b = y[k, i, j, l + 1] - y[k, i, j, l]
                        De += e2[i, j, l] * (a - b) * (a + b)
            for i in range(N0):
                for j in range(N1):
                    for l in range(N2):
                        xv = x[k, i, j, l]
                        yv = y[k, i, j, l]
                        sx[i, j, l] += xv * xv
                        sy[i, j, l] += yv * yv
                        lin += src[k, i, j, l] * (xv - yv)
        Dn = 0.0
        for i in range(N0):
            for j in range(N1):
                for l in range(N2):
                    Dn += ffree[i, j, l] * (math.sqrt(sx[i, j, l]) - math.sqrt(sy[i, j, l]))
        return h * De + (2.0 * Dn - 2.0 * lin) * h * h * h

    @njit(cache=True, fastmath=True)
    def momentum(x, z, y, beta):
        """y <- z + beta (z - x); returns <y_old - z, z - x> (gradient-restart test)."""
        fx = x.reshape(-1)
        fz = z.reshape(-1)
        fy = y.reshape(-1)
        s = 0.0
        for i in range(fz.size):
            d = fz[i] - fx[i]
            s += (fy[i] - fz[i]) * d
            fy[i] = fz[i] + beta * d
        return s

    STEP = {2: step2, 3: step3}
    DELTA = {2: delta2, 3: delta3}
else:  # pragma: no cover
    STEP = {}
    DELTA = {}
    momentum = None
