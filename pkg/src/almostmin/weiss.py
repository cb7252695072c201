"""Weiss-type monotone functional, ladder scans, the limit W(0+) and point classification."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .energy import beta_half, energy
from .errors import PreconditionError, ResolutionError, ValidationError
from .field import BallFrame, VectorField, as_function, boundary_trace


@dataclass(frozen=True)
class WeissParams:
    """Gauge exponent alpha in (0, 2); a = (n+2)/alpha and b = (n+4)/alpha for dimension n."""

    alpha: float
    n: int = 2

    def __post_init__(self):
        if not (0 < self.alpha < 2):
            raise ValidationError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.n not in (2, 3):
            raise ValidationError("n must be 2 or 3")

    @property
    def a(self) -> float:
        return (self.n + 2) / self.alpha

    @property
    def b(self) -> float:
        return (self.n + 4) / self.alpha

    def for_dim(self, n: int) -> "WeissParams":
        return self if n == self.n else WeissParams(self.alpha, n)


def _parts(u, frame: BallFrame, method: str):
    """E(u, B_t), the sphere integral of |u|^2 and the lower-bound integral (without prefactor)."""
    tr = boundary_trace(u, frame, method=method)
    S = float(tr.integrate(np.sum(tr.values ** 2, axis=1)))
    E = energy(u, frame, method).total
    return E, S, tr


def weiss(u, frame: BallFrame, params: WeissParams, method: str = "spline") -> float:
    """W(u, x0, t) = e^(a t^alpha)/t^(n+2) [E(u, B_t(x0)) - 2(1 - b t^alpha)/t * oint |u|^2]."""
    n = len(frame.x0)
    p = params.for_dim(n)
    t = frame.r
    E, S, _ = _parts(u, frame, method)
    ta = t ** p.alpha
    return float(np.exp(p.a * ta) / t ** (n + 2) * (E - 2 * (1 - p.b * ta) / t * S))


@dataclass
class WeissReport:
    """One ladder scan. ``E_scaled`` = E/t^(n+2) and ``B`` = oint|u|^2/t^(n+3) keep the
    decomposition so the limit can be fitted on the gauge-free part."""

    x0: np.ndarray
    t: np.ndarray
    W: np.ndarray
    slopes: np.ndarray
    lower_bound: np.ndarray
    params: WeissParams
    tolerance_mono: float
    E_scaled: np.ndarray | None = None
    B: np.ndarray | None = None
    W0_estimate: float = float("nan")
    W0_error: float = float("nan")

    @property
    def violations(self) -> np.ndarray:
        """Interval indices whose slope is below -tolerance_mono."""
        return np.flatnonzero(self.slopes < -self.tolerance_mono)

    @property
    def lower_bound_violations(self) -> np.ndarray:
        """Intervals where the slope falls short of the mean lower-bound integrand by more than tolerance_mono."""
        lb = 0.5 * (self.lower_bound[1:] + self.lower_bound[:-1])
        return np.flatnonzero(self.slopes < lb - self.tolerance_mono)

    def stripped(self) -> np.ndarray | None:
        """e^(-a t^alpha) W - 2 b t^alpha B = E/t^(n+2) - 2 B, the gauge-free part."""
        if self.E_scaled is None or self.B is None:
            return None
        return self.E_scaled - 2 * self.B

    def to_csv(self) -> str:
        rows = ["t,W,slope,lower_bound"]
        sl = np.append(self.slopes, np.nan)
        for t, w, s, lb in zip(self.t, self.W, sl, self.lower_bound):
            rows.append(",".join(repr(float(v)) for v in (t, w, s, lb)))
        return "\n".join(rows) + "\n"


def tolerance_mono(u, h: float | None, x0=None) -> float:
    """Default monotonicity tolerance 5 h (1 + E(u, B_1)); 0 for analytic fields."""
    if h is None:
        return 0.0
    n = u.n
    L = u.spec.L if isinstance(u, VectorField) else (u.L if np.isfinite(u.L) else 1.0)
    E1 = energy(u, BallFrame(np.zeros(n), min(1.0, L))).total
    return 5 * h * (1 + E1)


def ladder(t_min: float, t_max: float, ratio: float) -> np.ndarray:
    """Geometric ladder t_min * ratio^k, k = 0.. while <= t_max (t_max appended if missed by > 1%)."""
    if not (1 < ratio <= 2):
        raise ValidationError("ladder ratio must lie in (1, 2]")
    if not (0 < t_min < t_max):
        raise ValidationError("need 0 < t_min < t_max")
    k = int(np.floor(np.log(t_max / t_min) / np.log(ratio) + 1e-9))
    t = t_min * ratio ** np.arange(k + 1)
    if t[-1] < t_max * 0.99:
        t = np.append(t, t_max)
    return t


def _reach(u, x0) -> float:
    """Largest radius around x0 that stays inside the evaluable cube."""
    L = u.spec.L if isinstance(u, VectorField) else u.L
    return float(L - np.max(np.abs(x0))) if np.isfinite(L) else np.inf


def weiss_scan(u, x0, t_range=(0.04, 0.4), params: WeissParams | None = None, ladder_ratio: float = 2 ** 0.25,
               method: str = "spline", tol_mono: float | None = None) -> WeissReport:
    """Sample W on a geometric ladder in t_range; radii outside [4h, reach) are dropped.

    Raises ResolutionError when fewer than 4 ladder radii survive.
    """
    f = as_function(u, method)
    x0 = np.asarray(x0, dtype=float)
    n = f.n
    p = (params or WeissParams(1.9, n)).for_dim(n)
    t = ladder(float(t_range[0]), float(t_range[1]), ladder_ratio)
    lo = 4 * f.h if f.h is not None else 0.0
    t = t[(t >= lo * (1 - 1e-12)) & (t <= _reach(u, x0) * (1 + 1e-12))]
    if len(t) < 4:
        raise ResolutionError(f"only {len(t)} ladder radii lie in [4h, reach) for x0={x0.tolist()}")
    tm = tolerance_mono(u, f.h) if tol_mono is None else float(tol_mono)
    W, Es, B, lb = [], [], [], []
    for ti in t:
        frame = BallFrame(x0, ti)
        if isinstance(u, VectorField):
            frame.check(u.spec)
        E, S, tr = _parts(u, frame, method)
        ta = ti ** p.alpha
        pref = np.exp(p.a * ta) / ti ** (n + 2)
        coef = 2 * (1 - p.b * ta) / ti
        W.append(pref * (E - coef * S))
        Es.append(E / ti ** (n + 2))
        B.append(S / ti ** (n + 3))
        res = tr.d_nu - coef * tr.values
        lb.append(pref * float(tr.integrate(np.sum(res * res, axis=1))))
    W = np.array(W)
    rep = WeissReport(x0, t, W, np.diff(W) / np.diff(t), np.array(lb), p, tm, np.array(Es), np.array(B))
    lim = weiss_limit(rep, p)
    rep.W0_estimate, rep.W0_error = lim.W0, lim.err
    return rep


@dataclass(frozen=True)
class LimitFit:
    """W0 with error bar; unpacks as (W0, err). ``indeterminate`` marks a failed fit."""

    W0: float
    err: float
    c: float = 0.0
    delta: float = float("nan")
    indeterminate: bool = False
    reason: str = ""

    def __iter__(self):
        return iter((self.W0, self.err))


def _profile(t, y, delta):
    """Least squares y ~ W0 + c t^delta with c >= 0; returns (sse, W0, c)."""
    x = t ** delta
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    c = max(np.sum((x - xm) * (y - ym)) / sxx, 0.0) if sxx > 0 else 0.0
    W0 = ym - c * xm
    r = y - W0 - c * x
    return float(r @ r), float(W0), float(c)


def fit_power(t, y, delta_max: float, delta_min: float = 1e-3):
    """Fit y = W0 + c t^delta, delta in [delta_min, delta_max], c >= 0. Returns (W0, c, delta, residuals)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = np.linspace(delta_min, delta_max, 200)
    sse = [_profile(t, y, d)[0] for d in grid]
    i = int(np.argmin(sse))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    d = grid[i]
    if hi > lo:
        opt = minimize_scalar(lambda q: _profile(t, y, q)[0], bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-10})
        if opt.fun <= sse[i]:
            d = float(opt.x)
    _, W0, c = _profile(t, y, d)
    return W0, c, d, y - W0 - c * t ** d


def weiss_limit(report: WeissReport, params: WeissParams | None = None) -> LimitFit:
    """Extrapolate W(0+) by a fit W0 + c t^delta (0 < delta <= alpha, c >= 0).

    With the stored decomposition the fit runs on the gauge-free part
    E/t^(n+2) - 2B, which has the same limit and no exponential factor.
    Without it, the fit is done on W and on e^(-a t^alpha) W and the
    smaller residual wins.
    Error bar: max(largest fit residual, |value at t_min - W0|).
    """
    p = params or report.params
    if len(report.t) < 4:
        raise ResolutionError("need at least 4 ladder points")
    y = report.stripped()
    y = report.W if y is None else y
    scale = max(float(np.max(np.abs(y))), 1e-300)
    if np.max(np.abs(y)) == 0:
        return LimitFit(0.0, 0.0, 0.0, p.alpha)
    if len(report.violations):
        return LimitFit(float(y[0]), float(np.ptp(y)), indeterminate=True,
                        reason=f"{len(report.violations)} monotonicity violations beyond tolerance")
    W0, c, d, res = fit_power(report.t, y, p.alpha)
    if report.stripped() is None:
        # no decomposition: also try the model with the gauge factor divided out
        y2 = report.W * np.exp(-p.a * report.t ** p.alpha)
        alt = fit_power(report.t, y2, p.alpha)
        if np.sum(alt[3] ** 2) < np.sum(res ** 2):
            W0, c, d, res = alt
            y = y2
    if not np.isfinite(W0):
        return LimitFit(float(y[0]), float(np.ptp(y)), indeterminate=True, reason="fit failed")
    err = max(float(np.max(np.abs(res))), abs(float(y[0]) - W0), 1e-15 * scale)
    return LimitFit(W0, err, c, d)


@dataclass
class Classification:
    verdict: str
    W0_estimate: float
    err: float
    threshold: float
    x0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reason: str = ""

    def to_json(self) -> str:
        def fin(v):
            return float(v) if v is not None and np.isfinite(v) else None
        return json.dumps({"x0": [float(c) for c in self.x0], "W0": fin(self.W0_estimate), "err": fin(self.err),
                           "threshold": fin(self.threshold), "verdict": self.verdict}, allow_nan=False)


def check_free_boundary_point(u, x0, eps_u: float | None = None):
    """Raise PreconditionError unless |u(x0)| <= eps_u and |u| > eps_u somewhere on a small sphere."""
    f = as_function(u)
    x0 = np.asarray(x0, dtype=float)
    if isinstance(u, VectorField):
        scale = float(np.max(u.norm()))
        eps = 10 * u.h ** 2 * scale if eps_u is None else eps_u
        rho = 4 * u.h
    else:
        scale = 1.0
        eps = 1e-10 if eps_u is None else eps_u
        rho = 0.05
    if scale == 0:
        raise PreconditionError("x0 is not a free boundary point: the field vanishes identically")
    if np.linalg.norm(f(x0[None])[0]) > eps:
        raise PreconditionError(f"x0={x0.tolist()} lies in the positivity set (|u| > {eps:.3g})")
    ring = boundary_trace(f, BallFrame(x0, min(rho, _reach(u, x0))), n_quad=64)
    if np.max(np.linalg.norm(ring.values, axis=1)) <= eps:
        raise PreconditionError(f"x0={x0.tolist()} lies in the interior of the zero set")


def classify_point(u, x0, params: WeissParams | None = None, threshold_factor: float = 1.15,
                   t_range=(0.04, 0.4), ladder_ratio: float = 2 ** 0.25, method: str = "spline",
                   check: bool = True) -> Classification:
    """Regular if W0 + err <= factor * beta_n/2, NonRegular if W0 - err > it, else Indeterminate."""
    f = as_function(u, method)
    n = f.n
    p = (params or WeissParams(1.9, n)).for_dim(n)
    x0 = np.asarray(x0, dtype=float)
    if threshold_factor <= 1:
        raise ValidationError("threshold factor must exceed 1")
    thr = threshold_factor * beta_half(n)
    if check:
        check_free_boundary_point(u, x0)
    try:
        rep = weiss_scan(u, x0, t_range, p, ladder_ratio, method)
    except ResolutionError as exc:
        return Classification("Indeterminate", float("nan"), float("nan"), thr, x0, str(exc))
    lim = weiss_limit(rep, p)
    if lim.indeterminate:
        return Classification("Indeterminate", lim.W0, lim.err, thr, x0, lim.reason)
    if lim.W0 + lim.err <= thr:
        verdict = "Regular"
    elif lim.W0 - lim.err > thr:
        verdict = "NonRegular"
    else:
        verdict = "Indeterminate"
    return Classification(verdict, lim.W0, lim.err, thr, x0, "" if verdict != "Indeterminate" else "error bar straddles threshold")


def closed_form_half_space(t, params: WeissParams):
    """W on an exact half-space centred on its free boundary: e^(a t^alpha)(beta/2)(1 + b' t^alpha)."""
    t = np.asarray(t, dtype=float)
    n = params.n
    beta2 = beta_half(n)
    # gauge-free part is beta/2 at every t; the gauge adds 2 b t^alpha times the sphere L2 mass
    B2 = 2 * _half_space_sphere_l2(n)
    ta = t ** params.alpha
    return np.exp(params.a * ta) * (beta2 + params.b * ta * B2)


def _half_space_sphere_l2(n: int) -> float:
    """oint over the unit sphere of max(x1, 0)^4 / 4."""
    return 3 * np.pi / 32 if n == 2 else np.pi / 10


__all__ = ["WeissParams", "WeissReport", "LimitFit", "Classification", "weiss", "weiss_scan", "weiss_limit",
           "classify_point", "check_free_boundary_point", "tolerance_mono", "ladder", "fit_power",
           "closed_form_half_space", "beta_half"]
