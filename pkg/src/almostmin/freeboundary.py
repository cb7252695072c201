"""Free-boundary extraction, growth constants, normal maps and local graph fits."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .energy import energy, rotation_to
from .errors import ConeViolationError, PreconditionError, ValidationError
from .field import BallFrame, VectorField, as_function, boundary_trace, gradient
from .homogeneity import extract_blowup
from .weiss import WeissParams


@dataclass
class FreeBoundaryPoint:
    location: np.ndarray
    node: tuple
    classification: str = ""
    W0: float = float("nan")
    nu: np.ndarray | None = None
    e: np.ndarray | None = None
    c_lower: float = float("nan")
    C_upper: float = float("nan")

    def row(self, n: int, m: int) -> str:
        nu = self.nu if self.nu is not None else np.full(n, np.nan)
        e = self.e if self.e is not None else np.full(m, np.nan)
        vals = [repr(float(v)) for v in self.location] + [self.classification or "", repr(float(self.W0))]
        vals += [repr(float(v)) for v in nu] + [repr(float(v)) for v in e]
        vals += [repr(float(self.c_lower)), repr(float(self.C_upper))]
        return ",".join(vals)


def gamma_csv(points, n: int, m: int) -> str:
    head = [f"x{k + 1}" for k in range(n)] + ["class", "W0"] + [f"nu{k + 1}" for k in range(n)]
    head += [f"e{k + 1}" for k in range(m)] + ["c_lower", "C_upper"]
    return "\n".join([",".join(head)] + [p.row(n, m) for p in points]) + "\n"


def default_thresholds(u: VectorField, c_u: float = 10.0, c_g: float = 10.0):
    """eps_u = c_u h^2 sup|u| and eps_g = c_g h sup|grad u|."""
    g = gradient(u)
    gn = np.sqrt(np.sum(g * g, axis=(-2, -1)))
    return c_u * u.h ** 2 * float(u.norm().max()), c_g * u.h * float(gn.max())


def _offsets(n):
    """Neighbour offsets, axis directions first."""
    offs = [d for d in itertools.product((-1, 0, 1), repeat=n) if any(d)]
    return sorted(offs, key=lambda d: sum(abs(c) for c in d))


def extract_free_boundary(u: VectorField, eps_u: float | None = None, eps_g: float | None = None,
                          c_u: float = 10.0, c_g: float = 10.0) -> list:
    """Free nodes with |u| <= eps_u, |grad u| <= eps_g and an 8/26-neighbour above eps_u,
    each moved to the zero of sqrt|u| extrapolated linearly from the two nodes
    beyond it along its steepest-ascent neighbour ray (exact for quadratic vanishing).
    """
    du, dg = default_thresholds(u, c_u, c_g)
    eps_u = du if eps_u is None else eps_u
    eps_g = dg if eps_g is None else eps_g
    if not (eps_u > 0 and eps_g > 0):
        if float(u.norm().max()) == 0:
            return []
        raise ValidationError("thresholds must be positive")
    nrm = u.norm()
    g = gradient(u)
    gn = np.sqrt(np.sum(g * g, axis=(-2, -1)))
    n, N = u.n, u.spec.N
    pad = np.pad(nrm, 2, constant_values=-1.0)
    offs = _offsets(n)
    best = np.full(nrm.shape, -np.inf)
    arg = np.zeros(nrm.shape, dtype=int)
    for k, d in enumerate(offs):
        sh = pad[tuple(slice(2 + c, 2 + c + N) for c in d)]
        sh = (sh - nrm) / np.sqrt(sum(abs(c) for c in d))
        upd = sh > best
        best = np.where(upd, sh, best)
        arg = np.where(upd, k, arg)
    big = np.zeros(nrm.shape, dtype=bool)
    for d in offs:
        big |= pad[tuple(slice(2 + c, 2 + c + N) for c in d)] > eps_u
    cand = (nrm <= eps_u) & big & (gn <= eps_g) & ~u.boundary_mask
    ax = u.spec.axis()
    # positive-side nodes have their zero behind them: |u| <= eps_u puts it within sqrt(2 eps_u)
    back = np.sqrt(2 * eps_u) / u.h + 1
    out = []
    for idx in map(tuple, np.argwhere(cand)):
        d = np.array(offs[arg[idx]])
        x = np.array([ax[i] for i in idx])
        a = np.sqrt(pad[tuple(np.array(idx) + 2 + d)])
        q = np.array(idx) + 2 + 2 * d
        b2 = pad[tuple(q)]
        s = 0.0
        c = np.sqrt(max(nrm[idx], 0.0))
        if b2 > 0 and np.sqrt(b2) > a:
            s = 1 - a / (np.sqrt(b2) - a)
        elif c > 0 and a > c:
            # second sample off the grid (cube face): extrapolate from the node itself
            s = -c / (a - c)
        s = float(np.clip(s, -back, 1.0))
        loc = x + s * u.h * d
        out.append(FreeBoundaryPoint(loc, idx))
    return out


@dataclass
class GrowthReport:
    x0: np.ndarray
    radii: np.ndarray
    sup_ratio: np.ndarray
    energy_ratio: np.ndarray

    @property
    def c0(self) -> float:
        return float(self.sup_ratio.min())

    @property
    def C_sup(self) -> float:
        return float(self.sup_ratio.max())

    @property
    def eps0(self) -> float:
        return float(self.energy_ratio.min())

    @property
    def C_energy(self) -> float:
        return float(self.energy_ratio.max())


def growth_report(u, x0, radii, method: str = "spline") -> GrowthReport:
    """sup_{B_r}|u|/r^2 and E(u, B_r)/r^(n+2) along the ladder.

    The sup combines interior nodes with a dense sample of the sphere, where the
    subharmonic |u| peaks.
    """
    x0 = np.asarray(x0, dtype=float)
    radii = np.asarray(radii, dtype=float)
    f = as_function(u, method)
    n = f.n
    sup, en = [], []
    for r in radii:
        frame = BallFrame(x0, r)
        if isinstance(u, VectorField):
            frame.check(u.spec)
        tr = boundary_trace(u, frame, method=method)
        s = float(np.max(np.linalg.norm(tr.values, axis=1)))
        if isinstance(u, VectorField):
            inside = sum((c - x) ** 2 for c, x in zip(u.spec.coords(), x0)) <= r * r
            if inside.any():
                s = max(s, float(u.norm()[inside].max()))
        sup.append(s / r ** 2)
        en.append(energy(u, frame, method).total / r ** (n + 2))
    return GrowthReport(x0, radii, np.array(sup), np.array(en))


@dataclass
class NormalMap:
    points: list
    nu: np.ndarray
    e: np.ndarray
    gammas: np.ndarray
    ratios: np.ndarray
    gamma: float
    excluded: list = field(default_factory=list)

    @property
    def max_deviation(self) -> float:
        """Largest pairwise |nu_i - nu_j| + |e_i - e_j|."""
        if len(self.nu) < 2:
            return 0.0
        dn = np.linalg.norm(self.nu[:, None] - self.nu[None], axis=-1)
        de = np.linalg.norm(self.e[:, None] - self.e[None], axis=-1)
        return float((dn + de).max())


def normal_direction_map(u, points, r_fit, params: WeissParams | None = None, gammas=None,
                         bound: float = 10.0, classifications=None, method: str = "spline") -> NormalMap:
    """(nu, e) per point from blowup fits, plus the Hölder table over a gamma grid.

    ``ratios[k]`` is the largest pairwise (|dnu| + |de|)/|dx|^gamma_k; ``gamma`` is the
    largest grid exponent whose ratio stays <= ``bound``. Points whose
    classification is Indeterminate are skipped and listed in ``excluded``.
    """
    gammas = np.linspace(0.1, 1.0, 10) if gammas is None else np.asarray(gammas, dtype=float)
    keep, excluded, nus, es = [], [], [], []
    for i, p in enumerate(points):
        loc = p.location if isinstance(p, FreeBoundaryPoint) else np.asarray(p, dtype=float)
        verdict = classifications[i].verdict if classifications is not None else ""
        if verdict == "Indeterminate":
            excluded.append((loc, "Indeterminate classification"))
            continue
        b = extract_blowup(u, loc, r_fit, params, method=method, check=False)
        keep.append(loc)
        nus.append(b.nu)
        es.append(b.e)
        if isinstance(p, FreeBoundaryPoint):
            p.nu, p.e = b.nu, b.e
    nu = np.array(nus)
    e = np.array(es)
    ratios = np.zeros(len(gammas))
    if len(keep) >= 2:
        X = np.array(keep)
        i, j = np.triu_indices(len(keep), 1)
        dist = np.linalg.norm(X[i] - X[j], axis=1)
        dev = np.linalg.norm(nu[i] - nu[j], axis=1) + np.linalg.norm(e[i] - e[j], axis=1)
        ok = dist > 0
        for k, gam in enumerate(gammas):
            ratios[k] = float(np.max(dev[ok] / dist[ok] ** gam)) if ok.any() else 0.0
    good = gammas[ratios <= bound]
    gamma = float(good.max()) if len(good) else float("nan")
    return NormalMap(keep, nu, e, gammas, ratios, gamma, excluded)


@dataclass
class GraphFit:
    base: np.ndarray
    frame: np.ndarray
    xp: np.ndarray
    g: np.ndarray
    coef: np.ndarray
    residuals: np.ndarray
    gamma: float
    normal: np.ndarray

    @property
    def tilt_deg(self) -> float:
        """Angle between the fitted normal and the frame normal."""
        return float(np.degrees(np.arccos(np.clip(self.normal @ self.frame[:, -1], -1, 1))))

    def to_json(self) -> str:
        return json.dumps({"base": self.base.tolist(), "normal": self.normal.tolist(), "gamma": self.gamma,
                           "coef": self.coef.tolist(),
                           "samples": [[*map(float, x), float(y)] for x, y in zip(self.xp, self.g)]})


def _design(xp):
    cols = [np.ones(len(xp))] + [xp[:, k] for k in range(xp.shape[1])]
    for a in range(xp.shape[1]):
        for b in range(a, xp.shape[1]):
            cols.append(xp[:, a] * xp[:, b])
    return np.stack(cols, axis=1)


def _holder(xp, grads, trim=0.05):
    """Pairwise log-log slope of |dgrad| against |dx'| with the top ratios trimmed; clipped to (0, 1]."""
    i, j = np.triu_indices(len(xp), 1)
    d = np.linalg.norm(xp[i] - xp[j], axis=1)
    dg = np.linalg.norm(grads[i] - grads[j], axis=1)
    ok = (d > 0) & (dg > 0)
    if ok.sum() < 3:
        return 1.0
    d, dg = d[ok], dg[ok]
    r = dg / d
    keep = r <= np.quantile(r, 1 - trim)
    slope = np.polyfit(np.log(d[keep]), np.log(dg[keep]), 1)[0]
    return float(np.clip(slope, 1e-3, 1.0))


def graph_fit(u, base, points, nu=None, window: float = 0.25, params: WeissParams | None = None,
              h: float | None = None, tol: float | None = None, verdict: str | None = None) -> GraphFit:
    """Write nearby Gamma points as x_n = g(x') in the frame whose last axis is nu(base).

    g is smoothed by a quadratic least-squares fit; its gradient at each point comes
    from local plane fits, and gamma from pairwise log-log regression. Two points with
    |dg| > tol + |dx'| raise ConeViolationError (default tol 4h).
    """
    base = np.asarray(base, dtype=float)
    if verdict is not None and verdict != "Regular":
        raise PreconditionError(f"base point is {verdict}, not Regular")
    if h is None and u is not None:
        h = as_function(u).h
    n = len(base)
    if nu is None:
        if u is None:
            raise PreconditionError("need a field to estimate the normal")
        r0 = max(8 * h, 0.02) if h else 0.05
        radii = r0 * 2 ** np.arange(3, -1, -1) / 1.0
        nu = extract_blowup(u, base, radii, params, check=False).nu
    nu = np.asarray(nu, dtype=float)
    P = np.array([p.location if isinstance(p, FreeBoundaryPoint) else p for p in points], dtype=float)
    P = P[np.linalg.norm(P - base, axis=1) <= window]
    if len(P) < 5:
        raise PreconditionError(f"only {len(P)} points in the fit window (need 5)")
    Q = rotation_to(nu)
    R = np.concatenate([Q[:, 1:], Q[:, :1]], axis=1)  # last axis = nu
    loc = (P - base) @ R
    xp, g = loc[:, :-1], loc[:, -1]
    tol = 4 * (h or 0.0) if tol is None else tol
    i, j = np.triu_indices(len(P), 1)
    bad = np.abs(g[i] - g[j]) > tol + np.linalg.norm(xp[i] - xp[j], axis=1)
    if bad.any():
        k = int(np.argmax(bad))
        raise ConeViolationError(f"points {P[i[k]].tolist()} and {P[j[k]].tolist()} are not a graph over the tangent plane")
    A = _design(xp)
    coef, *_ = np.linalg.lstsq(A, g, rcond=None)
    res = g - A @ coef
    lin = coef[1:n]
    normal = R @ np.append(-lin, 1.0)
    normal /= np.linalg.norm(normal)
    grads = np.zeros_like(xp)
    rad = max(window / 4, 4 * (h or 0.01))
    for k in range(len(xp)):
        near = np.linalg.norm(xp - xp[k], axis=1) <= rad
        if near.sum() >= n + 1:
            B = np.concatenate([np.ones((near.sum(), 1)), xp[near]], axis=1)
            c, *_ = np.linalg.lstsq(B, g[near], rcond=None)
            grads[k] = c[1:]
    return GraphFit(base, R, xp, g, coef, res, _holder(xp, grads), normal)


__all__ = ["FreeBoundaryPoint", "GrowthReport", "NormalMap", "GraphFit", "extract_free_boundary",
           "default_thresholds", "growth_report", "normal_direction_map", "graph_fit", "gamma_csv"]
