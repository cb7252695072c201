"""Point evaluation of fields: analytic closures, multilinear and cubic-spline samplers."""
from __future__ import annotations

import itertools

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from ..errors import DomainError, ValidationError
from .grid import VectorField, gradient

_CHUNK = 1 << 16


class FieldFunction:
    """A field evaluable anywhere: ``value(P,n) -> (P,m)``, ``grad(P,n) -> (P,m,n)``.

    ``h`` is the spacing of the underlying grid (None for analytic fields) and
    ``L`` the half-width of the region where evaluation is allowed.
    """

    def __init__(self, n, m, value, grad=None, h=None, L=np.inf, name=""):
        self.n = int(n)
        self.m = int(m)
        self._value = value
        self._grad = grad
        self.h = h
        self.L = L
        self.name = name

    def _check(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if pts.shape[1] != self.n:
            raise ValidationError(f"expected points of dimension {self.n}")
        if np.isfinite(self.L) and np.any(np.abs(pts) > self.L * (1 + 1e-12)):
            raise DomainError("evaluation point outside the grid cube")
        return pts

    def __call__(self, pts) -> np.ndarray:
        return self._value(self._check(pts))

    def grad(self, pts) -> np.ndarray:
        if self._grad is None:
            raise ValidationError(f"field {self.name!r} has no gradient")
        return self._grad(self._check(pts))

    def evaluate(self, pts):
        """Values and gradients together."""
        return self(pts), self.grad(pts)

    def __repr__(self):
        return f"FieldFunction({self.name or 'anonymous'}, n={self.n}, m={self.m})"


def interpolate(u: VectorField, x) -> np.ndarray:
    """Multilinear interpolation of ``u`` at point(s) ``x``."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if np.any(np.abs(pts) > u.spec.L * (1 + 1e-12)):
        raise DomainError("interpolation point outside the grid cube")
    pts = np.clip(pts, -u.spec.L, u.spec.L)
    out = _linear(u, "values")(pts)
    return out[0] if single else out


def _linear(u: VectorField, what: str):
    def build():
        ax = (u.spec.axis(),) * u.n
        data = u.values if what == "values" else gradient(u)
        return RegularGridInterpolator(ax, data, method="linear")
    return u.cached(("linear", what), build)


def linear_sampler(u: VectorField) -> FieldFunction:
    """Multilinear values with multilinearly interpolated nodal gradients."""
    L = u.spec.L

    def value(p):
        return _linear(u, "values")(np.clip(p, -L, L))

    def grad(p):
        return _linear(u, "grad")(np.clip(p, -L, L))

    return FieldFunction(u.n, u.m, value, grad, h=u.h, L=L, name="linear")


def _bspline(f):
    f2 = f * f
    f3 = f2 * f
    g = 1.0 - f
    w = np.stack([g * g * g / 6, (3 * f3 - 6 * f2 + 4) / 6, (-3 * f3 + 3 * f2 + 3 * f + 1) / 6, f3 / 6])
    d = np.stack([-g * g / 2, (3 * f2 - 4 * f) / 2, (-3 * f2 + 2 * f + 1) / 2, f2 / 2])
    return w, d


def _spline_coefficients(u: VectorField) -> np.ndarray:
    def build():
        c = np.empty_like(u.values)
        for k in range(u.m):
            c[..., k] = ndimage.spline_filter(u.values[..., k], order=3, mode="mirror")
        return c
    return u.cached("spline", build)


def _spline_eval(u: VectorField, pts: np.ndarray, want_grad: bool):
    coef = _spline_coefficients(u)
    N, h, L, n, m = u.spec.N, u.h, u.spec.L, u.n, u.m
    P = pts.shape[0]
    vals = np.zeros((P, m))
    grads = np.zeros((P, m, n)) if want_grad else None
    for start in range(0, P, _CHUNK):
        p = pts[start:start + _CHUNK]
        s = (p + L) / h
        i = np.clip(np.floor(s).astype(int), 0, N - 2)
        f = s - i
        idx, ws, ds = [], [], []
        for k in range(n):
            w, d = _bspline(f[:, k])
            j = i[:, k][None, :] + np.arange(-1, 3)[:, None]
            j = np.where(j < 0, -j, j)
            j = np.where(j > N - 1, 2 * (N - 1) - j, j)
            idx.append(j)
            ws.append(w)
            ds.append(d / h)
        v = np.zeros((p.shape[0], m))
        g = np.zeros((p.shape[0], m, n)) if want_grad else None
        for off in itertools.product(range(4), repeat=n):
            c = coef[tuple(idx[k][off[k]] for k in range(n))]
            wt = ws[0][off[0]]
            for k in range(1, n):
                wt = wt * ws[k][off[k]]
            v += c * wt[:, None]
            if want_grad:
                for a in range(n):
                    wa = ds[a][off[a]]
                    for k in range(n):
                        if k != a:
                            wa = wa * ws[k][off[k]]
                    g[:, :, a] += c * wa[:, None]
        vals[start:start + _CHUNK] = v
        if want_grad:
            grads[start:start + _CHUNK] = g
    return vals, grads


class _SplineField(FieldFunction):
    def evaluate(self, pts):
        pts = self._check(pts)
        return _spline_eval(self._u, np.clip(pts, -self.L, self.L), True)


def spline_sampler(u: VectorField) -> FieldFunction:
    """Cubic B-spline interpolant of the nodal values (mirror extension at faces)."""
    L = u.spec.L

    def value(p):
        return _spline_eval(u, np.clip(p, -L, L), False)[0]

    def grad(p):
        return _spline_eval(u, np.clip(p, -L, L), True)[1]

    f = _SplineField(u.n, u.m, value, grad, h=u.h, L=L, name="spline")
    f._u = u
    return f


SAMPLERS = {"spline": spline_sampler, "linear": linear_sampler}


def as_function(u, method: str = "spline") -> FieldFunction:
    """Wrap a VectorField (or pass through a FieldFunction) for point evaluation."""
    if isinstance(u, FieldFunction):
        return u
    if isinstance(u, VectorField):
        if method not in SAMPLERS:
            raise ValidationError(f"unknown evaluation method {method!r}")
        return u.cached(("sampler", method), lambda: SAMPLERS[method](u))
    raise ValidationError(f"cannot evaluate object of type {type(u).__name__}")


def shifted(u: FieldFunction, x0, r, scale, name="") -> FieldFunction:
    """x -> u(x0 + r x) / scale, with the chain-rule gradient."""
    x0 = np.asarray(x0, dtype=float)

    def value(p):
        return u(x0 + r * p) / scale

    def grad(p):
        return u.grad(x0 + r * p) * (r / scale)

    f = FieldFunction(u.n, u.m, value, grad, h=None if u.h is None else u.h / r, name=name)

    def evaluate(p):
        v, g = u.evaluate(x0 + r * f._check(p))
        return v / scale, g * (r / scale)

    f.evaluate = evaluate
    return f
