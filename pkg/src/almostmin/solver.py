"""Discrete minimizers, harmonic replacements and drift (almost-minimizer) solutions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import cg

from . import _kernels
from .errors import NonConvergenceError, PicardDivergenceError, ValidationError
from .field import BallFrame, GridSpec, VectorField, default_mask, laplacian, make_field


@dataclass
class SolveOptions:
    """Proximal-gradient settings.

    ``step=None`` picks h^2/(8n) with acceleration (1/L for the smooth part,
    whose gradient -2 Lap_h u has Lipschitz constant 8n/h^2) and h^2/(4n)
    without. Steps above h^2/(4n) are rejected.
    """

    max_iters: int = 200_000
    tol: float = 1e-16
    step: float | None = None
    accelerate: bool = True
    check_every: int = 10

    def step_for(self, h: float, n: int) -> float:
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        bound = h * h / (4 * n)
        if self.step is None:
            return bound / 2 if self.accelerate else bound
        if not (0 < self.step <= bound * (1 + 1e-12)):
            raise ValidationError(f"step {self.step} outside (0, h^2/(4n)] = (0, {bound}]")
        return float(self.step)


@dataclass
class SolveInfo:
    iterations: int
    history: np.ndarray
    converged: bool
    energy: float
    decrease: float
    extra: dict = field(default_factory=dict)


class _Problem:
    """Discrete functional on an array block with frozen Dirichlet nodes.

    J(u) = sum over edges touching a free node of |u_i - u_j|^2 h^(n-2)
           + sum over free nodes of (2|u| - 2 f.u) h^n.

    Iterates are stored component-first, shape (m,) + node shape; ``inner``
    and ``outer`` convert from and to the node-shape + (m,) layout.
    """

    def __init__(self, data, free, h, source=None, fast=True):
        self.free = np.ascontiguousarray(free, dtype=bool)
        self.n = self.free.ndim
        if np.any(self.free & _faces(self.free.shape)):
            raise ValidationError("free nodes on the block faces; faces must be Dirichlet")
        self.h = float(h)
        self.data = self.inner(data)
        self.src = np.zeros_like(self.data) if source is None else self.inner(np.where(self.free[..., None], source, 0.0))
        self.edges = []
        for ax in range(self.n):
            a = np.take(self.free, np.arange(1, self.free.shape[ax]), axis=ax)
            b = np.take(self.free, np.arange(0, self.free.shape[ax] - 1), axis=ax)
            self.edges.append(np.ascontiguousarray(a | b, dtype=float))
        self.ffloat = self.free.astype(float)
        self.fixed = np.where(self.free, 0.0, self.data)
        self.fast = fast and self.n in _kernels.STEP
        self._zero = np.zeros_like(self.data)
        self._b1 = np.empty(self.free.shape)
        self._b2 = np.empty(self.free.shape)

    @staticmethod
    def inner(a):
        a = np.asarray(a, dtype=float)
        return np.ascontiguousarray(np.moveaxis(a, -1, 0))

    @staticmethod
    def outer(a):
        return np.ascontiguousarray(np.moveaxis(a, 0, -1))

    def energy(self, x) -> float:
        return self.decrease(x, self._zero)

    def decrease(self, x, y) -> float:
        """J(x) - J(y), summed term by term."""
        if self.fast:
            return float(_kernels.DELTA[self.n](x, y, self.ffloat, *self.edges, self.src, self.h,
                                                self._b1, self._b2))
        return self._decrease_np(x, y)

    def step(self, y, lam, out=None):
        """Prox-gradient map: shrink(y + 2 lam (Lap_h y + f), lam) on free nodes."""
        out = np.empty_like(self.data) if out is None else out
        if self.fast:
            return _kernels.STEP[self.n](y, self.fixed, self.free, self.src, lam, self.h, out, self._b1)
        out[...] = self._step_np(y, lam)
        return out

    def _decrease_np(self, x, y) -> float:
        D = 0.0
        for ax, w in enumerate(self.edges):
            a = np.diff(x, axis=ax + 1)
            b = np.diff(y, axis=ax + 1)
            D += np.sum(w * np.sum((a - b) * (a + b), axis=0))
        nx = np.sqrt(np.sum(x * x, axis=0))
        ny = np.sqrt(np.sum(y * y, axis=0))
        D = D * self.h ** (self.n - 2)
        D += 2 * self.h ** self.n * (np.sum((nx - ny) * self.ffloat) - np.sum(self.src * (x - y)))
        return float(D)

    def _step_np(self, y, lam):
        w = np.zeros_like(y)
        core = (slice(None),) + (slice(1, -1),) * self.n
        lap = -2 * self.n * y[core]
        for ax in range(1, self.n + 1):
            for lo, hi in ((0, -2), (2, None)):
                sl = [slice(1, -1)] * (self.n + 1)
                sl[0] = slice(None)
                sl[ax] = slice(lo, hi)
                lap = lap + y[tuple(sl)]
        w[core] = lap / (self.h * self.h)
        w += self.src
        w *= 2 * lam
        w += y
        nw = np.sqrt(np.sum(w * w, axis=0))
        w *= np.where(nw > 2 * lam, 1.0 - 2 * lam / np.maximum(nw, 1e-300), 0.0)
        return np.where(self.free, w, self.fixed)


def _iterate(prob: _Problem, x, opts: SolveOptions, lam: float):
    """Monotone FISTA (function and gradient restarts) or plain prox-gradient.

    ``x`` and the returned iterate are component-first.
    """
    x = np.where(prob.free, x, prob.data)
    Fx = prob.energy(x)
    hist = [Fx]
    y = x.copy()
    t = 1.0
    dec = np.inf
    stall = 0
    Tx = np.empty_like(x)
    for k in range(opts.max_iters + 1):
        if k % opts.check_every == 0:
            prob.step(x, lam, Tx)
            dec = prob.decrease(x, Tx)
            if dec <= opts.tol * max(abs(Fx), 1e-300):
                return x, SolveInfo(k, np.array(hist), True, Fx, dec)
            if stall >= opts.check_every:
                # no step lowers J in floating point: the roundoff floor
                return x, SolveInfo(k, np.array(hist), True, Fx, dec, {"roundoff_floor": True})
        if k == opts.max_iters:
            break
        z = prob.step(y, lam)
        d = prob.decrease(x, z)
        if opts.accelerate and d < 0:
            t = 1.0
            y[...] = x
            z = prob.step(x, lam)
            d = prob.decrease(x, z)
        stall = stall + 1 if d <= 0 else 0
        if d < 0:
            z, d = x, 0.0
        Fz = Fx - d
        if opts.accelerate:
            tn = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
            if _momentum(x, z, y, (t - 1) / tn) > 0:
                tn = 1.0
                y[...] = z
            t = tn
        else:
            y = z
        x, Fx = z, Fz
        hist.append(Fx)
    return x, SolveInfo(opts.max_iters, np.array(hist), False, Fx, dec)


def _momentum(x, z, y, beta):
    """In place y <- z + beta (z - x); returns <y_old - z, z - x>."""
    if _kernels.momentum is not None:
        return _kernels.momentum(x, z, y, beta)
    s = float(np.sum((y - z) * (z - x)))
    y[...] = z + beta * (z - x)
    return s


def _data_and_mask(g, spec, mask):
    if isinstance(g, VectorField):
        return g.spec, np.array(g.values), np.array(g.boundary_mask) if mask is None else mask
    if spec is None:
        raise ValidationError("a GridSpec is needed for non-field boundary data")
    if mask is None or isinstance(mask, str):
        mask = default_mask(spec, mask or "ball")
    if callable(g):
        return spec, np.array(make_field(spec, g, mask).values), mask
    arr = np.asarray(g, dtype=float)
    if arr.shape == spec.shape and spec.m == 1:
        arr = arr[..., None]
    if arr.shape != spec.shape + (spec.m,) or not np.all(np.isfinite(arr)):
        raise ValidationError("boundary data must be finite with node shape")
    return spec, arr, mask


def _faces(shape):
    m = np.zeros(shape, dtype=bool)
    for ax in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[ax] = 0
        m[tuple(sl)] = True
        sl[ax] = -1
        m[tuple(sl)] = True
    return m


def minimize(g, spec: GridSpec | None = None, opts: SolveOptions | None = None, mask=None,
             x0=None, source=None, return_info: bool = False):
    """Minimize the discrete energy with u = g on the Dirichlet nodes.

    ``g`` is a VectorField (its mask is used), a callable on points, or a
    node array. ``x0`` warm-starts the free nodes. ``source`` adds the linear
    term -2 sum f.u h^n. Raises NonConvergenceError when ``max_iters`` runs out.
    """
    opts = opts or SolveOptions()
    spec, data, mask = _data_and_mask(g, spec, mask)
    mask = np.asarray(mask, dtype=bool) | _faces(spec.shape)
    lam = opts.step_for(spec.h, spec.n)
    prob = _Problem(data, ~mask, spec.h, source)
    start = np.zeros_like(data) if x0 is None else np.array(
        x0.values if isinstance(x0, VectorField) else x0, dtype=float).reshape(data.shape)
    x, info = _iterate(prob, prob.inner(start), opts, lam)
    out = VectorField(spec, prob.outer(x), mask)
    if not info.converged:
        raise NonConvergenceError(
            f"no convergence in {opts.max_iters} iterations (last decrease {info.decrease:.3e})",
            iterate=out, history=info.history)
    return (out, info) if return_info else out


def minimize_block(data, free, h: float, opts: SolveOptions | None = None, x0=None):
    """Minimize J on a raw node block (shape + (m,)); nodes outside ``free`` keep ``data``.

    Returns (values, SolveInfo) and raises NonConvergenceError like minimize.
    """
    opts = opts or SolveOptions()
    data = np.asarray(data, dtype=float)
    free = np.asarray(free, dtype=bool) & ~_faces(free.shape)
    lam = opts.step_for(h, free.ndim)
    prob = _Problem(data, free, h)
    x, info = _iterate(prob, prob.inner(data if x0 is None else x0), opts, lam)
    x = prob.outer(x)
    if not info.converged:
        raise NonConvergenceError(
            f"no convergence in {opts.max_iters} iterations (last decrease {info.decrease:.3e})",
            iterate=x, history=info.history)
    return x, info


def block_energy(values, free, h: float) -> float:
    """J restricted to ``free`` nodes of a raw block (edges touching them and their node terms)."""
    prob = _Problem(values, free, h)
    return prob.energy(prob.inner(values))


def discrete_energy(u: VectorField, free=None, source=None) -> float:
    """The solver's functional J for ``u`` (free nodes default to ~boundary_mask)."""
    free = ~u.boundary_mask if free is None else free
    prob = _Problem(u.values, free, u.h, source)
    return prob.energy(prob.inner(u.values))


def ball_nodes(spec: GridSpec, frame: BallFrame) -> np.ndarray:
    """Boolean node mask of |x - x0| < r."""
    r2 = sum((c - x) ** 2 for c, x in zip(spec.coords(), frame.x0))
    return r2 < frame.r ** 2 * (1 - 1e-12)


def harmonic_replacement(u: VectorField, frame: BallFrame, tol: float = 1e-10, maxiter: int | None = None):
    """Copy of u with nodes inside B_r(x0) replaced by the discrete harmonic extension."""
    frame.check(u.spec)
    inside = ball_nodes(u.spec, frame) & ~_faces(u.spec.shape)
    idx = np.flatnonzero(inside)
    out = np.array(u.values).reshape(-1, u.m)
    if idx.size == 0:
        return u
    pos = -np.ones(u.spec.size, dtype=int)
    pos[idx] = np.arange(idx.size)
    shape = u.spec.shape
    multi = np.array(np.unravel_index(idx, shape)).T
    rows, cols, vals = [np.arange(idx.size)], [np.arange(idx.size)], [np.full(idx.size, 2.0 * u.n)]
    rhs = np.zeros((idx.size, u.m))
    for ax in range(u.n):
        for sgn in (-1, 1):
            nb = multi.copy()
            nb[:, ax] += sgn
            flat = np.ravel_multi_index(tuple(nb.T), shape)
            p = pos[flat]
            ins = p >= 0
            rows.append(np.flatnonzero(ins))
            cols.append(p[ins])
            vals.append(-np.ones(ins.sum()))
            rhs[~ins] += out[flat[~ins]]
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(idx.size, idx.size))
    for j in range(u.m):
        b = rhs[:, j]
        history = []
        bn = np.linalg.norm(b) or 1.0
        x, info = cg(A, b, x0=out[idx, j], rtol=tol, atol=0.0, maxiter=maxiter,
                     callback=lambda xk: history.append(np.linalg.norm(b - A @ xk) / bn))
        if info != 0:
            raise NonConvergenceError(f"CG did not converge (component {j})", history=np.array(history))
        out[idx, j] = x
    return VectorField(u.spec, out.reshape(u.values.shape), u.boundary_mask)


@dataclass(frozen=True)
class DriftSpec:
    """Velocity field b (node shape + (n,), or a constant n-vector) and exponent p > n."""

    b: np.ndarray
    p: float

    def field(self, spec: GridSpec) -> np.ndarray:
        b = np.asarray(self.b, dtype=float)
        if b.shape == (spec.n,):
            b = np.broadcast_to(b, spec.shape + (spec.n,))
        if b.shape != spec.shape + (spec.n,):
            raise ValidationError("drift field has the wrong shape")
        if not np.all(np.isfinite(b)):
            raise ValidationError("drift field must be finite")
        if not self.p > spec.n:
            raise ValidationError(f"p must exceed n = {spec.n}")
        return b

    def predicted_exponent(self, n: int) -> float:
        return 1.0 - n / self.p


def advection(values: np.ndarray, b: np.ndarray, h: float) -> np.ndarray:
    """(b . grad) u per component with central differences."""
    n = b.shape[-1]
    g = np.gradient(values, h, axis=tuple(range(n)), edge_order=2)
    return sum(b[..., k:k + 1] * g[k] for k in range(n))


def solve_drift(g, drift: DriftSpec, spec: GridSpec | None = None, opts: SolveOptions | None = None,
                mask=None, picard_tol: float = 1e-9, max_picard: int = 200, return_info: bool = False):
    """Picard iteration for Lap u + b.grad u - u/|u| = 0 with frozen advection source."""
    opts = opts or SolveOptions()
    spec, data, mask = _data_and_mask(g, spec, mask)
    b = drift.field(spec)
    u, info = minimize(data, spec, opts, mask, return_info=True)
    base = max(float(np.max(np.abs(u.values))), 1e-300)
    steps = []
    for k in range(1, max_picard + 1):
        src = advection(np.asarray(u.values), b, spec.h)
        new, info = minimize(data, spec, opts, mask, x0=u, source=src, return_info=True)
        diff = float(np.max(np.abs(new.values - u.values)))
        steps.append(diff)
        u = new
        if np.max(np.abs(u.values)) > 10 * base:
            raise PicardDivergenceError("Picard iterates grew beyond 10x the drift-free solution; reduce |b|")
        if diff < picard_tol:
            info.extra = {"picard_iterations": k, "picard_steps": steps,
                          "predicted_exponent": drift.predicted_exponent(spec.n)}
            return (u, info) if return_info else u
    raise NonConvergenceError(f"Picard iteration stalled after {max_picard} steps (last change {steps[-1]:.3e})",
                              iterate=u, history=np.array(steps))


def system_residual(u: VectorField, eps_u: float | None = None) -> np.ndarray:
    """Node-wise |Lap_h u - u/|u|| on {|u| > eps_u}, at least 2h from Dirichlet nodes; 0 elsewhere."""
    nrm = u.norm()
    if eps_u is None:
        eps_u = 10 * u.h ** 2 * max(float(nrm.max()), 1e-300)
    if not eps_u > 0:
        raise ValidationError("eps_u must be positive")
    dist = ndimage.distance_transform_edt(~u.boundary_mask) * u.h
    keep = (nrm > eps_u) & (dist >= 2 * u.h * (1 - 1e-12))
    lap = laplacian(np.asarray(u.values), u.h, u.n)
    unit = np.asarray(u.values) / np.where(nrm > 0, nrm, 1.0)[..., None]
    res = np.sqrt(np.sum((lap - unit) ** 2, axis=-1))
    return np.where(keep, res, 0.0)
