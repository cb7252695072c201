"""Sphere and ball quadrature: polar Gauss rules and exact partial-cell grid weights."""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from .grid import BallFrame, GridSpec, VectorField
from .interp import FieldFunction, as_function


# ---------------------------------------------------------------- polar rules

def sphere_rule(n: int, n_quad: int):
    """Unit-sphere nodes and weights.

    n=2: ``n_quad`` equispaced angles. n=3: product rule with n_quad//2
    Gauss-Legendre nodes in cos(polar) and n_quad equispaced azimuths.
    """
    if n_quad < 4:
        raise ValidationError("n_quad too small")
    if n == 2:
        th = 2 * np.pi * np.arange(n_quad) / n_quad
        pts = np.stack([np.cos(th), np.sin(th)], axis=1)
        return pts, np.full(n_quad, 2 * np.pi / n_quad)
    if n == 3:
        p = max(n_quad // 2, 2)
        z, wz = np.polynomial.legendre.leggauss(p)
        az = 2 * np.pi * np.arange(n_quad) / n_quad
        Z, A = np.meshgrid(z, az, indexing="ij")
        s = np.sqrt(1 - Z * Z)
        pts = np.stack([s * np.cos(A), s * np.sin(A), Z], axis=-1).reshape(-1, 3)
        w = (wz[:, None] * np.full(n_quad, 2 * np.pi / n_quad)[None, :]).ravel()
        return pts, w
    raise ValidationError(f"n must be 2 or 3, got {n}")


def sphere_nodes(n: int, r: float, h: float | None) -> int:
    """Default sphere resolution: about two nodes per grid spacing of arc."""
    if n == 2:
        return 2048 if h is None else int(max(256, 2 * np.ceil(2 * np.pi * r / h)))
    return 96 if h is None else int(max(32, 2 * np.ceil(np.pi * r / h)))


def ball_rule(n: int, r: float, h: float | None):
    """Polar rule on B_r(0): 4-point Gauss panels of width ~2h in the radius
    times a sphere rule with ~h spacing. The spline reconstruction error
    dominates well before this resolution.
    """
    panels = 24 if h is None else int(max(4, np.ceil(r / (2 * h))))
    g, wg = np.polynomial.legendre.leggauss(4)
    edges = np.linspace(0.0, r, panels + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    rho = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    wr = (half[:, None] * wg[None, :]).ravel() * rho ** (n - 1)
    if n == 2:
        na = 1024 if h is None else int(max(128, np.ceil(2 * np.pi * r / h)))
    else:
        na = 64 if h is None else int(max(24, np.ceil(2 * np.pi * r / h)))
    s, ws = sphere_rule(n, na)
    pts = (rho[:, None, None] * s[None, :, :]).reshape(-1, n)
    w = (wr[:, None] * ws[None, :]).ravel()
    return pts, w


_CHUNK = 1 << 17


def integrate_ball(u, frame: BallFrame, integrand, method: str = "spline"):
    """Sum over the polar rule of ``integrand(x_rel, values, grads)`` on B_r(x0).

    ``integrand`` returns an array of shape (P,) or (P, k); the result has
    shape () or (k,).
    """
    f = as_function(u, method)
    pts, w = ball_rule(f.n, frame.r, f.h)
    x0 = frame.center
    total = 0.0
    for s in range(0, len(w), _CHUNK):
        p = pts[s:s + _CHUNK]
        v, g = f.evaluate(x0 + p)
        val = integrand(p, v, g)
        total = total + np.tensordot(w[s:s + _CHUNK], val, axes=(0, 0))
    return total


# ------------------------------------------------------------ boundary traces

@dataclass(frozen=True)
class BoundaryTrace:
    """Values and derivatives of a field at sphere quadrature nodes.

    Arrays: points (P,n), normals (P,n), weights (P,), values (P,m),
    grad (P,m,n), d_nu (P,m), d_theta (P,m,n).
    """

    frame: BallFrame
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    grad: np.ndarray
    d_nu: np.ndarray
    d_theta: np.ndarray

    def integrate(self, q) -> float:
        """Surface integral of nodal samples q (P,) or (P,k)."""
        return np.tensordot(self.weights, q, axes=(0, 0))


def boundary_trace(u, frame: BallFrame, n_quad: int | None = None, method: str = "spline") -> BoundaryTrace:
    """Sample u and its normal/tangential derivatives on the sphere of ``frame``."""
    f = as_function(u, method)
    if isinstance(u, VectorField):
        frame.check(u.spec)
    if n_quad is None:
        n_quad = sphere_nodes(f.n, frame.r, f.h)
    if n_quad < 16:
        raise ValidationError("n_quad must be >= 16")
    s, ws = sphere_rule(f.n, n_quad)
    pts = frame.center + frame.r * s
    w = ws * frame.r ** (f.n - 1)
    v, g = f.evaluate(pts)
    dn = np.einsum("pmk,pk->pm", g, s)
    dt = g - dn[:, :, None] * s[:, None, :]
    return BoundaryTrace(frame, pts, s, w, v, g, dn, dt)


# ----------------------------------------------------- exact grid cell weights

def _disk_square_moments(a, b, c, d, r):
    """Area and first moments of [a,b]x[c,d] intersected with the disk |x|<=r.

    Exact: the chord length is integrated piecewise in x with closed-form
    antiderivatives of sqrt(r^2-x^2), x sqrt(r^2-x^2) and r^2-x^2.
    """
    a, b, c, d, r = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (a, b, c, d, r)))
    lo = np.maximum(a, -r)
    hi = np.maximum(np.minimum(b, r), lo)
    cand = [lo, hi]
    for y in (c, d):
        t = np.sqrt(np.maximum(r * r - y * y, 0.0))
        cand += [t, -t]
    X = np.sort(np.clip(np.stack(cand, axis=-1), lo[..., None], hi[..., None]), axis=-1)

    def S(x):
        xc = np.clip(x, -r, r)
        s = np.sqrt(np.maximum(r * r - xc * xc, 0.0))
        return 0.5 * (xc * s + r * r * np.arcsin(np.where(r > 0, xc / np.where(r > 0, r, 1), 0)))

    def T(x):
        return -np.maximum(r * r - x * x, 0.0) ** 1.5 / 3

    def Q(x):
        return r * r * x - x ** 3 / 3

    area = np.zeros_like(a)
    mx = np.zeros_like(a)
    my = np.zeros_like(a)
    for k in range(X.shape[-1] - 1):
        x0, x1 = X[..., k], X[..., k + 1]
        dx = x1 - x0
        xm = 0.5 * (x0 + x1)
        sm = np.sqrt(np.maximum(r * r - xm * xm, 0.0))
        up_s = sm < d
        lo_s = -sm > c
        ok = (dx > 0) & (np.minimum(d, sm) > np.maximum(c, -sm))
        Is, Ixs, Is2 = S(x1) - S(x0), T(x1) - T(x0), Q(x1) - Q(x0)
        Ix = 0.5 * (x1 * x1 - x0 * x0)
        U = np.where(up_s, Is, d * dx)
        Lw = np.where(lo_s, -Is, c * dx)
        XU = np.where(up_s, Ixs, d * Ix)
        XL = np.where(lo_s, -Ixs, c * Ix)
        U2 = np.where(up_s, Is2, d * d * dx)
        L2 = np.where(lo_s, Is2, c * c * dx)
        area += np.where(ok, U - Lw, 0.0)
        mx += np.where(ok, XU - XL, 0.0)
        my += np.where(ok, 0.5 * (U2 - L2), 0.0)
    return area, mx, my


def _ball_box_moments(lo, hi, r, order=6):
    """Volume and centroid moments of boxes [lo,hi] (K,3) intersected with B_r(0)."""
    a, b, c, d, e, f = lo[:, 0], hi[:, 0], lo[:, 1], hi[:, 1], lo[:, 2], hi[:, 2]
    z0 = np.maximum(e, -r)
    z1 = np.maximum(np.minimum(f, r), z0)
    cand = [z0, z1]
    for q in (a * a, b * b, c * c, d * d, a * a + c * c, a * a + d * d, b * b + c * c, b * b + d * d):
        t = np.sqrt(np.maximum(r * r - q, 0.0))
        cand += [t, -t]
    Z = np.sort(np.clip(np.stack(cand, axis=-1), z0[:, None], z1[:, None]), axis=-1)
    g, wg = np.polynomial.legendre.leggauss(order)
    vol = np.zeros(len(a))
    mom = np.zeros((len(a), 3))
    for k in range(Z.shape[1] - 1):
        za, zb = Z[:, k], Z[:, k + 1]
        half = 0.5 * (zb - za)
        if not np.any(half > 0):
            continue
        mid = 0.5 * (za + zb)
        for gi, wi in zip(g, wg):
            z = mid + half * gi
            rho = np.sqrt(np.maximum(r * r - z * z, 0.0))
            A, mx, my = _disk_square_moments(a, b, c, d, rho)
            ww = wi * half
            vol += ww * A
            mom[:, 0] += ww * mx
            mom[:, 1] += ww * my
            mom[:, 2] += ww * z * A
    return vol, mom


@functools.lru_cache(maxsize=64)
def ball_weights(spec: GridSpec, frame: BallFrame):
    """Nodal weights w with sum_i w_i g(x_i) = integral over B_r(x0) of the
    multilinear interpolant's centroid rule.

    Each cell contributes |cell ∩ B| times the multilinear basis evaluated at
    the centroid of cell ∩ B, so the rule is exact for affine integrands.
    """
    frame.check(spec, floor=False)
    n, h, L, N = spec.n, spec.h, spec.L, spec.N
    x0 = frame.center
    r = frame.r
    ilo = np.clip(np.floor((x0 - r + L) / h).astype(int), 0, N - 2)
    ihi = np.clip(np.ceil((x0 + r + L) / h).astype(int) - 1, 0, N - 2)
    ranges = [np.arange(ilo[k], ihi[k] + 1) for k in range(n)]
    I = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, n)
    lo = -L + h * I - x0
    hi = lo + h
    near = np.sqrt(np.sum(np.maximum(np.maximum(lo, -hi), 0.0) ** 2, axis=1))
    far = np.sqrt(np.sum(np.maximum(np.abs(lo), np.abs(hi)) ** 2, axis=1))
    full = far <= r
    part = (~full) & (near < r)
    vol = np.where(full, h ** n, 0.0)
    cen = np.where(full[:, None], lo + 0.5 * h, 0.0)
    if np.any(part):
        if n == 2:
            A, mx, my = _disk_square_moments(lo[part, 0], hi[part, 0], lo[part, 1], hi[part, 1], r)
            mom = np.stack([mx, my], axis=1)
        else:
            A, mom = _ball_box_moments(lo[part], hi[part], r)
        keep = A > 0
        c = np.where(keep[:, None], mom / np.where(keep, A, 1.0)[:, None], 0.0)
        vol[part] = A
        cen[part] = c
    use = vol > 0
    I, lo, vol, cen = I[use], lo[use], vol[use], cen[use]
    t = np.clip((cen - lo) / h, 0.0, 1.0)
    flat = []
    wts = []
    for corner in itertools.product((0, 1), repeat=n):
        corner = np.array(corner)
        basis = np.prod(np.where(corner == 1, t, 1.0 - t), axis=1)
        flat.append(np.ravel_multi_index(tuple((I + corner).T), spec.shape))
        wts.append(vol * basis)
    flat = np.concatenate(flat)
    wts = np.concatenate(wts)
    idx, inv = np.unique(flat, return_inverse=True)
    w = np.bincount(inv, weights=wts)
    idx.flags.writeable = False
    w.flags.writeable = False
    return idx, w


def ball_integral(g, frame: BallFrame, spec: GridSpec) -> float:
    """Grid quadrature of a nodal scalar g over B_r(x0).

    ``g`` is an array of node shape or a callable on (P, n) points.
    """
    frame.check(spec)
    idx, w = ball_weights(spec, frame)
    if callable(g):
        pts = spec.points()[idx]
        vals = np.asarray(g(pts), dtype=float).reshape(-1)
    else:
        vals = np.asarray(g, dtype=float).reshape(-1)[idx]
    return float(w @ vals)
