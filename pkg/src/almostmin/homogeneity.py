"""Rescalings, 2-homogeneous replacements, phi-rescalings, blowups and half-space fits."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .energy import half_space
from .errors import DegenerateFitError, ResolutionError, ValidationError
from .field import (BallFrame, FieldFunction, GridSpec, VectorField, as_function, boundary_trace,
                    integrate_ball, shifted, sphere_nodes)
from .weiss import WeissParams, check_free_boundary_point

RESCALE_L = 1.25


@dataclass(frozen=True)
class RescaledField:
    """u_{x0,r}(x) = u(x0 + r x)/r^2 sampled on a grid over [-1.25, 1.25]^n."""

    source: object
    x0: np.ndarray
    r: float
    field: VectorField


def _frame_ok(u, x0, r):
    frame = BallFrame(x0, r)
    if isinstance(u, VectorField):
        frame.check(u.spec, floor=False)
    return frame


def default_h_min(n: int) -> float:
    """Finest re-gridding spacing: 1/256 in 2D, 1/64 in 3D (memory)."""
    return 1 / 256 if n == 2 else 1 / 64


def rescale(u, x0, r, h_target: float | None = None, h_min: float | None = None, method: str = "spline") -> RescaledField:
    """Interpolate u(x0 + r x)/r^2 onto a grid with spacing about max(h/r, h_min).

    Nodes whose preimage leaves the source cube (outside B_1 only) take the
    value at the nearest cube point.
    """
    f = as_function(u, method)
    x0 = np.asarray(x0, dtype=float)
    _frame_ok(u, x0, r)
    n = f.n
    h_min = default_h_min(n) if h_min is None else h_min
    if h_target is None:
        h_target = max(f.h / r, h_min) if f.h is not None else h_min
    k = int(np.ceil(RESCALE_L / h_target - 1e-9))
    spec = GridSpec(n, f.m, RESCALE_L / k, RESCALE_L)
    pts = x0 + r * spec.points()
    if np.isfinite(f.L):
        pts = np.clip(pts, -f.L, f.L)
    vals = f(pts) / (r * r)
    return RescaledField(u, x0, float(r), VectorField(spec, vals.reshape(spec.shape + (f.m,))))


def homogeneous_replacement(u, x0, r, method: str = "spline") -> FieldFunction:
    """c(x) = |x|^2 u_{x0,r}(x/|x|): equal to u_{x0,r} on the unit sphere, 2-homogeneous.

    The sphere values come from the same interpolant boundary_trace uses, so the
    two agree exactly at quadrature nodes.
    """
    f = as_function(u, method)
    _frame_ok(u, x0, r)
    U = shifted(f, x0, r, r * r)

    def _split(p):
        rho = np.linalg.norm(p, axis=1)
        safe = np.where(rho > 0, rho, 1.0)
        return rho, p / safe[:, None]

    def evaluate(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        rho, w = _split(p)
        v, G = U.evaluate(w)
        val = (rho * rho)[:, None] * v
        Gt = G - np.einsum("pmk,pk->pm", G, w)[:, :, None] * w[:, None, :]
        grad = 2 * p[:, None, :] * v[:, :, None] + rho[:, None, None] * Gt
        zero = rho == 0
        val[zero] = 0.0
        grad[zero] = 0.0
        return val, grad

    c = FieldFunction(f.n, f.m, lambda p: evaluate(p)[0], lambda p: evaluate(p)[1],
                      h=None if f.h is None else f.h / r, name="homogeneous_replacement")
    c.evaluate = lambda p: evaluate(c._check(p))
    return c


def phi(r, params: WeissParams):
    """phi(r) = exp(-(2b/alpha) r^alpha) r^2."""
    r = np.asarray(r, dtype=float)
    return np.exp(-(2 * params.b / params.alpha) * r ** params.alpha) * r * r


def phi_rescale(u, x0, r, params: WeissParams, method: str = "spline") -> FieldFunction:
    """u^phi(x) = u(x0 + r x)/phi(r), evaluable on B_1."""
    f = as_function(u, method)
    _frame_ok(u, x0, r)
    p = params.for_dim(f.n)
    return shifted(f, x0, r, float(phi(r, p)), name="phi_rescale")


def homogeneity_deviation(v, method: str = "spline") -> float:
    """Integral over B_1 of |x . grad v - 2 v|^2."""
    f = as_function(v, method)

    def dens(p, val, g):
        d = np.einsum("pmk,pk->pm", g, p) - 2 * val
        return np.sum(d * d, axis=1)

    return float(integrate_ball(f, BallFrame(np.zeros(f.n), 1.0), dens, method))


# ------------------------------------------------------------------ half-space fits

def _unit_from_angles(ang):
    if len(ang) == 1:
        return np.array([np.cos(ang[0]), np.sin(ang[0])])
    th, ph = ang
    return np.array([np.cos(th), np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph)])


def angles(nu) -> list:
    """Polar angles of a unit vector: [theta] in 2D, [theta, phi] in 3D (theta from e1)."""
    nu = np.asarray(nu, dtype=float)
    if len(nu) == 2:
        return [float(np.arctan2(nu[1], nu[0]))]
    return [float(np.arccos(np.clip(nu[0], -1, 1))), float(np.arctan2(nu[2], nu[1]))]


def _fibonacci(k):
    i = np.arange(k) + 0.5
    z = 1 - 2 * i / k
    a = np.pi * (1 + 5 ** 0.5) * i
    s = np.sqrt(1 - z * z)
    return np.stack([z, s * np.cos(a), s * np.sin(a)], axis=1)


def fit_half_space(v, n_quad: int | None = None, method: str = "spline"):
    """Best (nu, e) for the sphere L2 misfit of v against max(x.nu, 0)^2/2 e.

    For fixed nu the optimal e is w/|w| with w = oint max(x.nu,0)^2/2 v, and the
    misfit is oint|v|^2 - 2|w| + const, so nu maximizes |w|: an angle sweep
    refined by Brent (2D) or a Fibonacci sweep refined by Nelder-Mead (3D).
    Returns (nu, e, residual) with residual the minimized sphere integral.
    """
    f = as_function(v, method)
    n = f.n
    tr = boundary_trace(f, BallFrame(np.zeros(n), 1.0), n_quad=n_quad or sphere_nodes(n, 1.0, f.h), method=method)
    X, V, w = tr.points, tr.values, tr.weights
    vv = float(w @ np.sum(V * V, axis=1))
    if not vv > 0:
        raise DegenerateFitError("v vanishes on the unit sphere; no half-space to fit")
    wV = w[:, None] * V

    def moment(nu):
        s = np.maximum(X @ nu, 0.0)
        return (0.5 * s * s) @ wV

    def neg(ang):
        return -np.linalg.norm(moment(_unit_from_angles(np.atleast_1d(ang))))

    if n == 2:
        grid = np.linspace(-np.pi, np.pi, 721)[:-1]
        vals = np.array([neg([a]) for a in grid])
        i = int(np.argmin(vals))
        step = grid[1] - grid[0]
        opt = minimize_scalar(lambda a: neg([a]), bounds=(grid[i] - step, grid[i] + step), method="bounded",
                              options={"xatol": 1e-12})
        ang = [opt.x] if opt.fun <= vals[i] else [grid[i]]
    else:
        cand = _fibonacci(4000)
        vals = np.array([-np.linalg.norm(moment(c)) for c in cand])
        best = cand[int(np.argmin(vals))]
        opt = minimize(neg, angles(best), method="Nelder-Mead",
                       options={"xatol": 1e-11, "fatol": 1e-16, "maxiter": 4000})
        ang = list(opt.x)
    nu = _unit_from_angles(np.atleast_1d(ang))
    m = moment(nu)
    if not np.linalg.norm(m) > 0:
        raise DegenerateFitError("v has no overlap with any half-space profile")
    e = m / np.linalg.norm(m)
    hv = half_space(nu, e)(X)
    residual = float(w @ np.sum((V - hv) ** 2, axis=1))
    return nu, e, residual


# ------------------------------------------------------------------ blowups

@dataclass
class BlowupResult:
    limit: FieldFunction
    radii: np.ndarray
    deviations: np.ndarray
    nu: np.ndarray
    e: np.ndarray
    residual: float
    converged: bool
    tolerance: float

    def to_json(self) -> str:
        return json.dumps({"radii": self.radii.tolist(), "deviations": self.deviations.tolist(),
                           "nu_angles": angles(self.nu), "e": self.e.tolist(), "residual": self.residual,
                           "converged": self.converged})


def cauchy_deviations(u, x0, radii, params: WeissParams, method: str = "spline", n_quad: int | None = None):
    """oint_{dB_1} |u^phi_t - u^phi_s| for successive ladder radii (equal radii give 0)."""
    f = as_function(u, method)
    n = f.n
    p = params.for_dim(n)
    radii = np.asarray(radii, dtype=float)
    frame = BallFrame(np.zeros(n), 1.0)
    q = n_quad or sphere_nodes(n, 1.0, None)
    traces = [boundary_trace(phi_rescale(u, x0, r, p, method), frame, n_quad=q, method=method) for r in radii]
    dev = []
    for a, b in zip(traces[:-1], traces[1:]):
        dev.append(float(a.integrate(np.linalg.norm(a.values - b.values, axis=1))))
    return np.array(dev), traces


def extract_blowup(u, x0, radii, params: WeissParams | None = None, tol: float | None = None,
                   method: str = "spline", check: bool = True) -> BlowupResult:
    """phi-rescalings along a descending ladder, their Cauchy deviations and a half-space fit
    of the smallest rescaling (the blowup proxy).

    ``converged`` is False when a deviation exceeds its predecessor by more than ``tol``
    (default 10 h^2/r_min^2 times the sphere L1 mass of the proxy).
    """
    f = as_function(u, method)
    n = f.n
    p = (params or WeissParams(1.9, n)).for_dim(n)
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or len(radii) < 2 or np.any(np.diff(radii) >= 0):
        raise ValidationError("radii must be a strictly descending ladder of length >= 2")
    if f.h is not None and radii[-1] < 4 * f.h * (1 - 1e-12):
        raise ResolutionError(f"smallest radius {radii[-1]} below 4h = {4 * f.h}")
    if check:
        check_free_boundary_point(u, x0)
    for r in radii:
        _frame_ok(u, x0, r)
    dev, traces = cauchy_deviations(u, x0, radii, p, method)
    last = traces[-1]
    mass = float(last.integrate(np.linalg.norm(last.values, axis=1)))
    if tol is None:
        tol = 10 * (f.h / radii[-1]) ** 2 * mass if f.h is not None else 1e-12
    ok = bool(np.all(np.diff(dev) <= tol))
    limit = phi_rescale(u, x0, radii[-1], p, method)
    nu, e, res = fit_half_space(limit, method=method)
    return BlowupResult(limit, radii, dev, nu, e, res, ok, float(tol))


__all__ = ["RescaledField", "BlowupResult", "rescale", "homogeneous_replacement", "phi", "phi_rescale",
           "homogeneity_deviation", "fit_half_space", "extract_blowup", "cauchy_deviations", "angles",
           "default_h_min"]
