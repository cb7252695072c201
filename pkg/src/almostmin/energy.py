"""Energy densities, localized energies, the boundary-adjusted functional M and the shrink prox."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .field import BallFrame, FieldFunction, VectorField, ball_integral, boundary_trace, gradient, integrate_ball


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    potential: float
    total: float
    frame: BallFrame

    def row(self) -> str:
        """CSV row ``x0...,r,dirichlet,potential,total``."""
        vals = list(self.frame.x0) + [self.frame.r, self.dirichlet, self.potential, self.total]
        return ",".join(repr(float(v)) for v in vals)

    @staticmethod
    def header(n: int) -> str:
        return ",".join([f"x0_{k + 1}" for k in range(n)] + ["r", "dirichlet", "potential", "total"])


def _densities(_, v, g):
    return np.stack([np.sum(g * g, axis=(1, 2)), 2 * np.sqrt(np.sum(v * v, axis=1))], axis=1)


def energy(u, frame: BallFrame, method: str = "spline") -> EnergyBreakdown:
    """E(u, B_r(x0)) split into its Dirichlet and potential parts.

    method="spline" (default) integrates the cubic-spline reconstruction with
    a polar Gauss rule; method="grid" uses nodal central-difference gradients
    with the exact-cell grid rule. Analytic fields always use the polar rule.
    """
    if isinstance(u, VectorField):
        frame.check(u.spec)
        if method == "grid":
            g = gradient(u)
            dens = np.sum(g * g, axis=(-2, -1))
            d = ball_integral(dens, frame, u.spec)
            p = ball_integral(2 * u.norm(), frame, u.spec)
            return EnergyBreakdown(d, p, d + p, frame)
    d, p = integrate_ball(u, frame, _densities, "spline" if method == "grid" else method)
    d, p = float(d), float(p)
    return EnergyBreakdown(d, p, d + p, frame)


def sphere_mean_square(u, frame: BallFrame, method: str = "spline") -> float:
    """Surface integral of |u|^2 over the sphere of ``frame``."""
    tr = boundary_trace(u, frame, method="spline" if method == "grid" else method)
    return float(tr.integrate(np.sum(tr.values ** 2, axis=1)))


def boundary_adjusted_energy(v, method: str = "spline") -> float:
    """M(v) = E(v, B_1) - 2 * surface integral of |v|^2 over the unit sphere."""
    n = v.n
    frame = BallFrame(np.zeros(n), 1.0)
    return energy(v, frame, method).total - 2 * sphere_mean_square(v, frame, method)


def homogeneous_M(trace) -> float:
    """M of the 2-homogeneous extension of a unit-sphere trace.

    For c(x) = |x|^2 g(x/|x|) the ball integrals reduce exactly to
    M(c) = (1/(n+2)) * oint(|grad_theta g|^2 + 2|g| - 2n|g|^2).
    """
    n = trace.points.shape[1]
    g2 = np.sum(trace.values ** 2, axis=1)
    t2 = np.sum(trace.d_theta ** 2, axis=(1, 2))
    return float(trace.integrate(t2 + 2 * np.sqrt(g2) - 2 * n * g2) / (n + 2))


def prox_shrink(v, lam: float) -> np.ndarray:
    """argmin_w 1/2|w - v|^2 + 2 lam |w|, applied along the last axis."""
    if not lam > 0:
        raise ValidationError("lambda must be positive")
    v = np.asarray(v, dtype=float)
    nv = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    scale = np.maximum(1.0 - 2 * lam / np.where(nv > 0, nv, 1.0), 0.0)
    return v * np.where(nv > 2 * lam, scale, 0.0)


def _unit(x, what):
    x = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(x)) or abs(np.linalg.norm(x) - 1) > 1e-12:
        raise ValidationError(f"{what} must be a unit vector, got {x.tolist()}")
    return x


def half_space(nu, e) -> FieldFunction:
    """x -> max(x.nu, 0)^2/2 e, with gradient max(x.nu, 0) e (x) nu."""
    nu = _unit(nu, "nu")
    e = _unit(e, "e")

    def value(p):
        s = np.maximum(p @ nu, 0.0)
        return 0.5 * (s * s)[:, None] * e[None, :]

    def grad(p):
        s = np.maximum(p @ nu, 0.0)
        return s[:, None, None] * e[None, :, None] * nu[None, None, :]

    f = FieldFunction(len(nu), len(e), value, grad, name="half_space")
    f.nu, f.e = nu, e
    return f


def rotation_to(nu) -> np.ndarray:
    """Orthogonal matrix whose first column is nu."""
    nu = np.asarray(nu, dtype=float)
    n = len(nu)
    A = np.eye(n)
    A[:, 0] = nu
    q, _ = np.linalg.qr(A)
    return q * np.sign(q[:, 0] @ nu)


def beta_half(n: int, order: int = 40, nu=None, e=None) -> float:
    """beta_n/2 = M(half-space), by Gauss quadrature in polar coordinates about nu.

    The angular range is split where x.nu changes sign, so each panel sees a
    smooth integrand.
    """
    if n not in (2, 3):
        raise ValidationError("n must be 2 or 3")
    nu = np.eye(n)[0] if nu is None else np.asarray(nu, dtype=float)
    e = np.array([1.0]) if e is None else np.asarray(e, dtype=float)
    h = half_space(nu, e)
    Q = rotation_to(nu)
    g, wg = np.polynomial.legendre.leggauss(order)
    rho, wr = 0.5 * (g + 1), 0.5 * wg
    if n == 2:
        th = np.concatenate([np.pi / 2 * g, np.pi / 2 * g + np.pi])
        wt = np.concatenate([np.pi / 2 * wg, np.pi / 2 * wg])
        dirs = np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        z = np.concatenate([0.5 * (g - 1), 0.5 * (g + 1)])
        wz = np.concatenate([0.5 * wg, 0.5 * wg])
        k = 8
        az = 2 * np.pi * np.arange(k) / k
        Z, A = np.meshgrid(z, az, indexing="ij")
        s = np.sqrt(1 - Z * Z)
        dirs = np.stack([Z, s * np.cos(A), s * np.sin(A)], axis=-1).reshape(-1, 3)
        wt = (wz[:, None] * np.full(k, 2 * np.pi / k)).ravel()
    dirs = dirs @ Q.T
    pts = (rho[:, None, None] * dirs[None]).reshape(-1, n)
    w = (wr[:, None] * rho[:, None] ** (n - 1) * wt[None, :]).ravel()
    v, gr = h.evaluate(pts)
    E = w @ (np.sum(gr * gr, axis=(1, 2)) + 2 * np.linalg.norm(v, axis=1))
    vb = h(dirs)
    S = wt @ np.sum(vb * vb, axis=1)
    return float(E - 2 * S)
