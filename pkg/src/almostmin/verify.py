"""Certification harnesses: almost-minimality gauges, epiperimetric ratios, Weiss decay and rotation fits."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import beta_half, half_space, homogeneous_M, rotation_to
from .errors import DegenerateFitError, PreconditionError, ResolutionError, ValidationError
from .field import BallFrame, FieldFunction, GridSpec, VectorField, as_function, boundary_trace, make_field
from .homogeneity import cauchy_deviations, fit_half_space
from .solver import SolveOptions, block_energy, discrete_energy, minimize, minimize_block
from .weiss import WeissParams, WeissReport, weiss_limit, weiss_scan

SOLVER_TOL = 1e-10


def pmap(fn, items, jobs: int = 1):
    """Ordered map, threaded when jobs > 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


# ------------------------------------------------------------------ gauge fits

def fit_power_decay(r, y):
    """Least squares log y = log C + beta log r over y > 0. Returns (C, beta)."""
    r = np.asarray(r, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (y > 0) & (r > 0)
    if ok.sum() < 2 or np.ptp(np.log(r[ok])) == 0:
        raise DegenerateFitError("fewer than two usable positive samples")
    beta, logC = np.polyfit(np.log(r[ok]), np.log(y[ok]), 1)
    return float(np.exp(logC)), float(beta)


@dataclass
class GaugeFit:
    frames: list
    ratios: np.ndarray
    C: float = float("nan")
    beta: float = float("nan")
    worst_margin: float = float("nan")
    verdict: str = ""
    solver_tol: float = SOLVER_TOL
    flagged: list = field(default_factory=list)

    @property
    def r(self) -> np.ndarray:
        return np.array([f.r for f in self.frames])

    def to_csv(self) -> str:
        n = len(self.frames[0].x0) if self.frames else 0
        rows = [",".join([f"x0_{k + 1}" for k in range(n)] + ["r", "ratio"])]
        for f, q in zip(self.frames, self.ratios):
            rows.append(",".join(repr(float(v)) for v in (*f.x0, f.r, q)))
        return "\n".join(rows) + "\n"

    def summary_json(self) -> str:
        def fin(v):
            return float(v) if np.isfinite(v) else None
        return json.dumps({"C": fin(self.C), "beta": fin(self.beta), "worst_margin": fin(self.worst_margin),
                           "verdict": self.verdict}, allow_nan=False)


def sample_frames(count: int, r_range, seed: int = 0, region: float = 0.5, n: int = 2, reach: float = 1.0,
                  floor: float = 0.0):
    """Random frames: log-uniform r in r_range, x0 uniform in [-region, region]^n, ball inside the cube.

    Radii below ``floor`` (pass 4h) are rejected, so the sample covers r_range clipped to the floor.
    """
    lo, hi = map(float, r_range)
    if hi < 10 * lo * (1 - 1e-12):
        raise ValidationError("radii must span at least one decade")
    lo = max(lo, float(floor))
    if lo >= hi:
        raise ValidationError("the resolution floor leaves no admissible radii")
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        r = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        x0 = rng.uniform(-region, region, n)
        if np.max(np.abs(x0)) + r <= reach - 1e-9:
            out.append(BallFrame(x0, r))
    return out


def _local_ratio(u: VectorField, frame: BallFrame, opts: SolveOptions):
    """J_ball(u)/J_ball(v) with v the discrete minimizer on the ball nodes of u's grid."""
    spec = u.spec
    frame.check(spec)
    ax = spec.axis()
    pad = 2
    sl = []
    for c in frame.x0:
        i0 = max(int(np.floor((c - frame.r + spec.L) / spec.h)) - pad, 0)
        i1 = min(int(np.ceil((c + frame.r + spec.L) / spec.h)) + pad, spec.N - 1)
        sl.append(slice(i0, i1 + 1))
    sl = tuple(sl)
    block = np.array(u.values[sl])
    coords = np.meshgrid(*[ax[s] for s in sl], indexing="ij")
    r2 = sum((X - c) ** 2 for X, c in zip(coords, frame.x0))
    free = r2 < frame.r ** 2 * (1 - 1e-12)
    if not free.any():
        raise ResolutionError(f"no grid nodes inside B_{frame.r}({frame.x0})")
    v, info = minimize_block(block, free, spec.h, opts, x0=block)
    Ju = block_energy(block, free, spec.h)
    Jv = block_energy(v, free, spec.h)
    return Ju / Jv if Jv > 0 else 1.0


def almost_min_verify(u: VectorField, frames, opts: SolveOptions | None = None, solver_tol: float = SOLVER_TOL,
                      flag_level: float = 0.05, jobs: int = 1) -> GaugeFit:
    """Energy ratios against local minimizers on each frame, and the gauge ratio <= 1 + C r^beta.

    beta is the log-log least-squares slope of ratio - 1; C is then the smallest
    constant making the inequality hold on every sampled frame.

    Frames with ratio - 1 <= 10 solver_tol carry no signal and are excluded from the
    fit; if none remain the verdict is "indistinguishable from minimizer".
    """
    opts = opts or SolveOptions()
    frames = list(frames)
    if not frames:
        raise ValidationError("no frames to verify")
    ratios = np.array(pmap(lambda f: _local_ratio(u, f, opts), frames, jobs))
    r = np.array([f.r for f in frames])
    fit = GaugeFit(frames, ratios, solver_tol=solver_tol)
    fit.flagged = [f for f, q in zip(frames, ratios) if q > 1 + flag_level]
    sig = ratios - 1 > 10 * solver_tol
    if sig.sum() < 2:
        fit.verdict = "indistinguishable from minimizer"
        fit.worst_margin = float(np.min(1 + 10 * solver_tol - ratios))
        return fit
    _, fit.beta = fit_power_decay(r[sig], ratios[sig] - 1)
    # envelope constant: the smallest C with ratio <= 1 + C r^beta on every frame
    fit.C = float(np.max((ratios[sig] - 1) / r[sig] ** fit.beta))
    fit.worst_margin = float(np.min(1 + fit.C * r ** fit.beta - ratios))
    fit.verdict = "almost minimizer" if fit.beta > 0 else "gauge not decaying"
    return fit


# ------------------------------------------------------------------ epiperimetric

@dataclass
class EpiReport:
    dist_to_H: float
    M_c: float
    M_v: float
    kappa_hat: float
    degenerate: bool
    nu: np.ndarray
    e: np.ndarray
    competitor: VectorField | None = None
    iterations: int = 0

    def row(self) -> str:
        return ",".join(repr(float(v)) for v in (self.dist_to_H, self.M_c, self.M_v, self.kappa_hat))

    header = "dist_to_H,M_c,M_v,kappa_hat"


def check_homogeneous(c, n: int, seed: int = 0, tol: float = 1e-9):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(16, n))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    for lam in (0.3, 0.7):
        a, b = c(lam * x), lam * lam * c(x)
        if np.max(np.abs(a - b)) > tol * (1 + np.max(np.abs(b))):
            raise PreconditionError("c is not 2-homogeneous")


def epiperimetric_test(c, h: float = 1 / 64, opts: SolveOptions | None = None, solver_tol: float = SOLVER_TOL,
                       keep_competitor: bool = False) -> EpiReport:
    """Competitor v = discrete minimizer on B_1 with v = c on the Dirichlet nodes.

    M(c) uses the exact sphere reduction for 2-homogeneous fields; M(v) = M(c) minus
    the discrete improvement J_h(c sampled) - J_h(v), so M(v) <= M(c) by construction.
    kappa_hat is reported only when M(c) - beta_n/2 > 1e-6.
    """
    f = as_function(c)
    n, m = f.n, f.m
    check_homogeneous(f, n)
    tr = boundary_trace(f, BallFrame(np.zeros(n), 1.0))
    Mc = homogeneous_M(tr)
    nu, e, res = fit_half_space(f)
    spec = GridSpec(n, m, h)
    cs = make_field(spec, f)
    opts = opts or SolveOptions()
    v, info = minimize(cs, opts=opts, x0=cs, return_info=True)
    gain = discrete_energy(cs) - discrete_energy(v)
    Mv = Mc - gain
    b2 = beta_half(n)
    degenerate = not (Mc - b2 > 1e-6)
    kappa = float("nan") if degenerate else (Mc - Mv) / (Mc - b2)
    return EpiReport(float(np.sqrt(res)), Mc, Mv, kappa, degenerate, nu, e,
                     v if keep_competitor else None, info.iterations)


def _mode(theta, k, kind):
    return np.cos(k * theta) if kind == "cos" else np.sin(k * theta)


def perturbed_half_space(nu, e, amplitude: float, k: int = 2, kind: str = "wobble", mode: str = "cos",
                         e_perp=None) -> FieldFunction:
    """2-homogeneous extension of h(theta) + amplitude * Y_k(theta) * d on the unit sphere.

    Y_k is cos/sin(k theta) with theta the angle from nu in the plane of the first two
    frame axes (2D) or the azimuth about the first axis (3D). d = e for "wobble",
    d = e_perp (a unit vector orthogonal to e) for "rotate".
    """
    hs = half_space(nu, e)
    n, m = hs.n, hs.m
    nu, e = hs.nu, hs.e
    if kind == "wobble":
        d = e
    elif kind == "rotate":
        if m < 2:
            raise ValidationError("rotation perturbations need m >= 2")
        if e_perp is None:
            q = np.linalg.qr(np.column_stack([e, np.eye(m)]))[0]
            e_perp = q[:, 1]
        d = np.asarray(e_perp, dtype=float)
        if abs(d @ e) > 1e-12 or abs(np.linalg.norm(d) - 1) > 1e-12:
            raise ValidationError("e_perp must be a unit vector orthogonal to e")
    else:
        raise ValidationError(f"unknown perturbation kind {kind!r}")
    Q = rotation_to(nu)

    def Y(w):
        z = w @ Q
        th = np.arctan2(z[:, 1], z[:, 0]) if n == 2 else np.arctan2(z[:, 2], z[:, 1])
        return _mode(th, k, mode)

    def value(p):
        rho = np.linalg.norm(p, axis=1)
        w = p / np.where(rho > 0, rho, 1.0)[:, None]
        return hs(p) + amplitude * (rho * rho * Y(w))[:, None] * d[None, :]

    def grad(p):
        eps = 1e-6
        g = np.empty((len(p), m, n))
        for j in range(n):
            dp = np.zeros(n)
            dp[j] = eps
            g[:, :, j] = (value(p + dp) - value(p - dp)) / (2 * eps)
        return g

    return FieldFunction(n, m, value, grad, name=f"{kind}_{mode}{k}_{amplitude}")


def perturbation_family(nu, e, amplitudes=(0.01, 0.05, 0.1), modes=(1, 2, 3), kinds=("wobble", "rotate")):
    """(label, field) pairs over amplitudes, spherical modes (cos and sin) and kinds."""
    m = len(np.atleast_1d(e))
    out = []
    for kind in kinds:
        if kind == "rotate" and m < 2:
            continue
        for a in amplitudes:
            for k in modes:
                for md in ("cos", "sin"):
                    out.append((f"{kind},{md}{k},{a}", perturbed_half_space(nu, e, a, k, kind, md)))
    return out


# ------------------------------------------------------------------ Weiss decay and rotation

@dataclass
class DecayFit:
    C: float
    delta: float
    W0: float
    t: np.ndarray
    excess: np.ndarray
    decay_violation: bool


def weiss_decay_fit(u=None, x0=None, params: WeissParams | None = None, report: WeissReport | None = None,
                    t_range=(0.04, 0.4), ladder_ratio: float = 2 ** 0.25) -> DecayFit:
    """Fit W(t) - W0 = C t^delta on the scan ladder.

    With the stored decomposition the excess is taken after removing the factor
    e^(a t^alpha), i.e. E/t^(n+2) - 2(1 - b t^alpha) B - W0; raw W - W0 otherwise.
    """
    if report is None:
        if u is None or x0 is None:
            raise ValidationError("need a field and point, or a report")
        report = weiss_scan(u, x0, t_range, params, ladder_ratio)
    p = params or report.params
    lim = weiss_limit(report, p)
    if lim.indeterminate:
        raise PreconditionError(f"no usable W0: {lim.reason}")
    if report.E_scaled is not None and report.B is not None:
        ta = report.t ** p.alpha
        y = report.E_scaled - 2 * (1 - p.b * ta) * report.B - lim.W0
    else:
        y = report.W - lim.W0
    try:
        C, d = fit_power_decay(report.t, y)
    except DegenerateFitError:
        return DecayFit(0.0, float("nan"), lim.W0, report.t, y, True)
    return DecayFit(C, d, lim.W0, report.t, y, not d > 0)


@dataclass
class RotationFit:
    C: float
    exponent: float
    radii: np.ndarray
    deviations: np.ndarray
    monotone: bool
    ratio_to_half_delta: float = float("nan")

    @property
    def consistent(self) -> bool:
        """Exponent within a factor 2 of delta/2."""
        q = self.ratio_to_half_delta
        return bool(np.isfinite(q) and 0.5 <= q <= 2.0)


def rotation_check(u, x0, radii, params: WeissParams | None = None, delta: float | None = None,
                   method: str = "spline") -> RotationFit:
    """Cauchy deviations of phi-rescalings for successive ladder pairs, fitted as C t^exponent
    (t the larger radius of each pair). Equal radii are skipped."""
    f = as_function(u, method)
    p = (params or WeissParams(1.9, f.n)).for_dim(f.n)
    radii = np.unique(np.asarray(radii, dtype=float))[::-1]
    if len(radii) < 3:
        raise ValidationError("need at least 3 distinct radii")
    if f.h is not None and radii[-1] < 4 * f.h * (1 - 1e-12):
        raise ResolutionError(f"smallest radius {radii[-1]} below 4h")
    dev, _ = cauchy_deviations(u, x0, radii, p, method)
    t = radii[:-1]
    C, ex = fit_power_decay(t, dev)
    mono = bool(np.all(np.diff(dev) <= 0))
    q = ex / (delta / 2) if delta is not None and delta > 0 else float("nan")
    return RotationFit(C, ex, radii, dev, mono, q)


__all__ = ["GaugeFit", "EpiReport", "DecayFit", "RotationFit", "almost_min_verify", "sample_frames",
           "epiperimetric_test", "perturbed_half_space", "perturbation_family", "weiss_decay_fit",
           "rotation_check", "fit_power_decay", "check_homogeneous", "pmap", "SOLVER_TOL"]
