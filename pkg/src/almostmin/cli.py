"""Command-line experiment runner: solve | analyze | verify | beta.

Configuration is an INI file. Sections and keys (defaults in brackets):

[grid]      n [2], m [1], h [1/128], L [1.0], mask [ball | faces]
[problem]   data [half_space | zero | perturbed | file], nu (angle in degrees in 2D,
            or a comma list), e (comma list), file, amplitude, k, kind, mode,
            drift (comma list, empty for none), p, tol [1e-16], max_iters [200000]
[analysis]  alpha [1.9], t_min [0.04], t_max [0.4], ladder_ratio [2^(1/4)],
            threshold_factor [1.15], c_u [10], c_g [10], subsample [0 = all],
            max_indeterminate [0.1]
[verify]    frames [30], r_min [0.03], r_max [0.3], region [0.5], solver_tol [1e-10],
            epi [no], amplitudes [0.01,0.05,0.1], epi_h [1/64]
[output]    dir [out]

Exit codes: 0 success, 1 configuration error, 2 non-convergence, 3 resolution.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import re
import sys
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import energy as _energy
from .errors import NonConvergenceError, PicardDivergenceError, ResolutionError, ValidationError
from .field import BallFrame, GridSpec, VectorField, make_field, read_field, write_field
from .freeboundary import extract_free_boundary, gamma_csv, growth_report
from .homogeneity import extract_blowup
from .solver import DriftSpec, SolveOptions, discrete_energy, minimize, solve_drift, system_residual
from .verify import (almost_min_verify, epiperimetric_test, perturbation_family, perturbed_half_space, pmap,
                     sample_frames)
from .weiss import WeissParams, classify_point, ladder, weiss_scan

EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_RESOLUTION = 0, 1, 2, 3

SCHEMA = {
    "grid": {"n": "2", "m": "1", "h": "1/128", "L": "1.0", "mask": "ball"},
    "problem": {"data": "half_space", "nu": "0", "e": "", "file": "", "amplitude": "0.05", "k": "2",
                "kind": "wobble", "mode": "cos", "drift": "", "p": "4", "tol": "1e-16", "max_iters": "200000"},
    "analysis": {"alpha": "1.9", "t_min": "0.04", "t_max": "0.4", "ladder_ratio": "1.189207115002721",
                 "threshold_factor": "1.15", "c_u": "10", "c_g": "10", "subsample": "0",
                 "max_indeterminate": "0.1"},
    "verify": {"frames": "30", "r_min": "0.03", "r_max": "0.3", "region": "0.5", "solver_tol": "1e-10",
               "epi": "no", "amplitudes": "0.01,0.05,0.1", "epi_h": "1/64"},
    "output": {"dir": "out"},
}
GENERATORS = ("half_space", "zero", "perturbed", "file")


class ConfigError(Exception):
    pass


def _locate(text: str, section: str, key: str) -> int | None:
    """1-based line of ``key`` inside ``[section]``."""
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            cur = m.group(1).strip()
        elif cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s, re.IGNORECASE):
            return i
    return None


@dataclass
class ExperimentConfig:
    path: str
    text: str
    cp: configparser.ConfigParser

    def where(self, section, key) -> str:
        line = _locate(self.text, section, key)
        return f"{self.path}:{line}" if line else f"{self.path}: [{section}] {key}"

    def fail(self, section, key, msg):
        raise ConfigError(f"{self.where(section, key)}: {msg}")

    def get(self, section, key) -> str:
        return self.cp.get(section, key, fallback=SCHEMA[section][key]).strip()

    def num(self, section, key, kind=float):
        raw = self.get(section, key)
        try:
            return kind(Fraction(raw)) if kind is float else kind(raw)
        except (ValueError, ZeroDivisionError):
            self.fail(section, key, f"expected a number, got {raw!r}")

    def vec(self, section, key) -> np.ndarray | None:
        raw = self.get(section, key)
        if not raw:
            return None
        try:
            return np.array([float(Fraction(s.strip())) for s in raw.split(",")])
        except (ValueError, ZeroDivisionError):
            self.fail(section, key, f"expected a comma-separated list of numbers, got {raw!r}")

    def flag(self, section, key) -> bool:
        raw = self.get(section, key).lower()
        if raw not in ("yes", "no", "true", "false", "1", "0", "on", "off"):
            self.fail(section, key, f"expected yes/no, got {raw!r}")
        return raw in ("yes", "true", "1", "on")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        msg = exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc)
        raise ConfigError(f"{path}:{line if line is not None else '?'}: {msg}") from None
    cfg = ExperimentConfig(path, text, cp)
    for sec in cp.sections():
        if sec not in SCHEMA:
            line = next((i for i, l in enumerate(text.splitlines(), 1) if l.strip() == f"[{sec}]"), "?")
            raise ConfigError(f"{path}:{line}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                cfg.fail(sec, key, f"unknown key {key!r} in [{sec}]")
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    n = cfg.num("grid", "n", int)
    if n not in (2, 3):
        cfg.fail("grid", "n", "n must be 2 or 3")
    if cfg.num("grid", "m", int) < 1:
        cfg.fail("grid", "m", "m must be >= 1")
    if not cfg.num("grid", "h") > 0:
        cfg.fail("grid", "h", "h must be positive")
    if cfg.get("grid", "mask") not in ("ball", "faces"):
        cfg.fail("grid", "mask", "mask must be 'ball' or 'faces'")
    if cfg.get("problem", "data") not in GENERATORS:
        cfg.fail("problem", "data", f"unknown generator; expected one of {', '.join(GENERATORS)}")
    if cfg.get("problem", "data") == "file" and not cfg.get("problem", "file"):
        cfg.fail("problem", "data", "data = file needs a 'file' key")
    alpha = cfg.num("analysis", "alpha")
    if not 0 < alpha < 2:
        cfg.fail("analysis", "alpha", f"alpha must lie in (0, 2), got {alpha}")
    t0, t1 = cfg.num("analysis", "t_min"), cfg.num("analysis", "t_max")
    if not 0 < t0 < t1:
        cfg.fail("analysis", "t_min", "need 0 < t_min < t_max")
    if not 1 < cfg.num("analysis", "ladder_ratio") <= 2:
        cfg.fail("analysis", "ladder_ratio", "ladder ratio must lie in (1, 2]")
    if not cfg.num("analysis", "threshold_factor") > 1:
        cfg.fail("analysis", "threshold_factor", "threshold factor must exceed 1")
    if not 0 <= cfg.num("analysis", "max_indeterminate") <= 1:
        cfg.fail("analysis", "max_indeterminate", "must lie in [0, 1]")
    drift = cfg.vec("problem", "drift")
    if drift is not None:
        if len(drift) != n:
            cfg.fail("problem", "drift", f"drift needs {n} components")
        if not cfg.num("problem", "p") > n:
            cfg.fail("problem", "p", f"p must exceed n = {n}")
    if not cfg.num("problem", "tol") > 0:
        cfg.fail("problem", "tol", "tol must be positive")
    if not cfg.num("verify", "r_max") >= 10 * cfg.num("verify", "r_min") * (1 - 1e-12):
        cfg.fail("verify", "r_max", "verification radii must span at least one decade")


def _spec(cfg) -> GridSpec:
    try:
        return GridSpec(cfg.num("grid", "n", int), cfg.num("grid", "m", int), cfg.num("grid", "h"),
                        cfg.num("grid", "L"))
    except ValidationError as exc:
        cfg.fail("grid", "h", str(exc))


def _normal(cfg, n):
    nu = cfg.vec("problem", "nu")
    if nu is None:
        nu = np.zeros(1)
    if n == 2 and len(nu) == 1:
        a = np.radians(nu[0])
        return np.array([np.cos(a), np.sin(a)])
    if len(nu) != n:
        cfg.fail("problem", "nu", f"nu needs 1 angle (2D) or {n} components")
    return nu / np.linalg.norm(nu)


def _direction(cfg, m):
    e = cfg.vec("problem", "e")
    if e is None:
        e = np.eye(m)[0]
    if len(e) != m:
        cfg.fail("problem", "e", f"e needs {m} components")
    return e / np.linalg.norm(e)


def boundary_data(cfg, spec: GridSpec):
    """Boundary generator named in [problem]; returns a VectorField with the configured mask."""
    kind = cfg.get("problem", "data")
    mask = cfg.get("grid", "mask")
    if kind == "file":
        path = cfg.get("problem", "file")
        try:
            u = read_field(path, mask)
        except (OSError, ValidationError) as exc:
            cfg.fail("problem", "file", f"cannot load field: {exc}")
        if (u.spec.n, u.spec.m) != (spec.n, spec.m):
            cfg.fail("problem", "file", "field dimensions disagree with [grid]")
        return u
    if kind == "zero":
        return make_field(spec, lambda p: np.zeros((len(p), spec.m)), mask)
    nu, e = _normal(cfg, spec.n), _direction(cfg, spec.m)
    try:
        if kind == "half_space":
            g = _energy.half_space(nu, e)
        else:
            g = perturbed_half_space(nu, e, cfg.num("problem", "amplitude"), cfg.num("problem", "k", int),
                                     cfg.get("problem", "kind"), cfg.get("problem", "mode"))
    except ValidationError as exc:
        cfg.fail("problem", "data", str(exc))
    return make_field(spec, g, mask)


def _params(cfg, n):
    return WeissParams(cfg.num("analysis", "alpha"), n)


def _write(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _outdir(args, cfg):
    d = args.out or cfg.get("output", "dir")
    os.makedirs(d, exist_ok=True)
    return d


# ------------------------------------------------------------------ subcommands

def cmd_solve(args, cfg) -> int:
    spec = _spec(cfg)
    g = boundary_data(cfg, spec)
    opts = SolveOptions(tol=cfg.num("problem", "tol"), max_iters=cfg.num("problem", "max_iters", int))
    drift = cfg.vec("problem", "drift")
    out = _outdir(args, cfg)
    converged, status = True, "converged"
    try:
        if drift is None:
            u, info = minimize(g, opts=opts, return_info=True)
        else:
            u, info = solve_drift(g, DriftSpec(drift, cfg.num("problem", "p")), opts=opts, return_info=True)
    except (NonConvergenceError, PicardDivergenceError) as exc:
        u = getattr(exc, "iterate", None)
        info = None
        converged, status = False, str(exc)
        if u is None:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NONCONV
    write_field(os.path.join(out, "field.txt"), u)
    res = system_residual(u)
    frame = BallFrame(np.zeros(spec.n), min(1.0, spec.L))
    manifest = {
        "converged": converged,
        "status": status,
        "iterations": info.iterations if info else None,
        "discrete_energy": discrete_energy(u),
        "energy_unit_ball": _energy.energy(u, frame).total,
        "residual_max": float(res.max()),
        "residual_mean": float(res.mean()),
        "grid": {"n": spec.n, "m": spec.m, "h": spec.h, "L": spec.L},
        "problem": cfg.get("problem", "data"),
        "extra": {k: v for k, v in (info.extra.items() if info else []) if k != "picard_steps"},
    }
    _write(os.path.join(out, "manifest.json"), json.dumps(manifest, indent=2, default=float) + "\n")
    print(f"solve: {status}; energy {manifest['discrete_energy']:.8g}; wrote {out}")
    return EXIT_OK if converged else EXIT_NONCONV


def _load_field(args, cfg) -> VectorField:
    path = args.field or os.path.join(_outdir(args, cfg), "field.txt")
    try:
        return read_field(path, cfg.get("grid", "mask"))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read field: {exc.strerror}") from None
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_analyze(args, cfg) -> int:
    u = _load_field(args, cfg)
    out = _outdir(args, cfg)
    n, m = u.n, u.spec.m
    p = _params(cfg, n)
    t_range = (cfg.num("analysis", "t_min"), cfg.num("analysis", "t_max"))
    ratio = cfg.num("analysis", "ladder_ratio")
    pts = extract_free_boundary(u, c_u=cfg.num("analysis", "c_u"), c_g=cfg.num("analysis", "c_g"))
    if not pts:
        _write(os.path.join(out, "gamma.csv"), gamma_csv([], n, m))
        _write(os.path.join(out, "classification.json"), json.dumps({"points": [], "counts": {}}) + "\n")
        print("analyze: empty free boundary, nothing to classify")
        return EXIT_OK
    k = cfg.num("analysis", "subsample", int)
    if 0 < k < len(pts):
        rng = np.random.default_rng(args.seed)
        pts = [pts[i] for i in sorted(rng.choice(len(pts), k, replace=False))]
    fac = cfg.num("analysis", "threshold_factor")
    wdir = os.path.join(out, "weiss")
    os.makedirs(wdir, exist_ok=True)
    radii = ladder(*t_range, ratio)

    def work(item):
        i, pt = item
        c = classify_point(u, pt.location, p, fac, t_range, ratio, check=False)
        try:
            rep = weiss_scan(u, pt.location, t_range, p, ratio)
            csv = rep.to_csv()
        except ResolutionError:
            csv = None
        ok = radii[(radii >= 4 * u.h) & (radii < u.spec.L - np.max(np.abs(pt.location)))]
        g = growth_report(u, pt.location, ok) if len(ok) else None
        bl = None
        if c.verdict == "Regular" and len(ok) >= 2:
            bl = extract_blowup(u, pt.location, ok[::-1], p, check=False)
        return i, c, csv, g, bl

    results = pmap(work, list(enumerate(pts)), args.jobs)
    rows, counts = [], {}
    for i, c, csv, g, bl in results:
        pt = pts[i]
        if bl is not None:
            pt.nu, pt.e = bl.nu, bl.e
        pt.classification, pt.W0 = c.verdict, c.W0_estimate
        if g is not None:
            pt.c_lower, pt.C_upper = g.c0, g.C_sup
        counts[c.verdict] = counts.get(c.verdict, 0) + 1
        if csv is not None:
            _write(os.path.join(wdir, f"point_{i:04d}.csv"), csv)
        rows.append({"index": i, **json.loads(c.to_json()), "reason": c.reason})
    _write(os.path.join(out, "gamma.csv"), gamma_csv(pts, n, m))
    frac = counts.get("Indeterminate", 0) / len(pts)
    _write(os.path.join(out, "classification.json"),
           json.dumps({"points": rows, "counts": counts, "indeterminate_fraction": frac}, indent=1) + "\n")
    print(f"analyze: {len(pts)} points, " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))
    if frac > cfg.num("analysis", "max_indeterminate"):
        print(f"analyze: Indeterminate fraction {frac:.3f} exceeds the configured limit", file=sys.stderr)
        return EXIT_RESOLUTION
    return EXIT_OK


def cmd_verify(args, cfg) -> int:
    out = _outdir(args, cfg)
    tol = cfg.num("verify", "solver_tol")
    did = False
    if args.field or os.path.exists(os.path.join(out, "field.txt")):
        u = _load_field(args, cfg)
        frames = sample_frames(cfg.num("verify", "frames", int),
                               (cfg.num("verify", "r_min"), cfg.num("verify", "r_max")), args.seed,
                               cfg.num("verify", "region"), u.n, u.spec.L, floor=4 * u.h)
        fit = almost_min_verify(u, frames, SolveOptions(tol=tol), tol, jobs=args.jobs)
        _write(os.path.join(out, "gauge.csv"), fit.to_csv())
        _write(os.path.join(out, "gauge.json"), fit.summary_json() + "\n")
        print(f"verify: {fit.verdict}; max ratio {float(np.max(fit.ratios)):.6g}; beta {fit.beta:.4g}")
        did = True
    if cfg.flag("verify", "epi"):
        spec = _spec(cfg)
        nu, e = _normal(cfg, spec.n), _direction(cfg, spec.m)
        amps = tuple(cfg.vec("verify", "amplitudes"))
        fam = [("exact", _energy.half_space(nu, e))] + perturbation_family(nu, e, amps)
        h = cfg.num("verify", "epi_h")
        reps = pmap(lambda lc: epiperimetric_test(lc[1], h, SolveOptions(tol=tol), tol), fam, args.jobs)
        lines = ["label,dist_to_H,M_c,M_v,kappa_hat,degenerate"]
        for (lab, _), r in zip(fam, reps):
            lines.append(f"\"{lab}\",{r.row()},{int(r.degenerate)}")
        _write(os.path.join(out, "epi.csv"), "\n".join(lines) + "\n")
        k = [r.kappa_hat for r in reps if not r.degenerate]
        print(f"verify: {len(reps)} epiperimetric reports; min kappa_hat {min(k) if k else float('nan'):.4g}")
        did = True
    if not did:
        raise ConfigError(f"{cfg.path}: nothing to verify (no field file and [verify] epi = no)")
    return EXIT_OK


def cmd_beta(args, cfg) -> int:
    dims = [args.n] if args.n else [2, 3]
    for n in dims:
        print(f"n={n} beta/2={_energy.beta_half(n)!r}")
    return EXIT_OK


# ------------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="almostmin", description=__doc__.splitlines()[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter,
                                 epilog="\n".join(__doc__.splitlines()[2:]))
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "analyze", "verify", "beta"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "beta", help="INI experiment file")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=1)
        if name in ("analyze", "verify"):
            sp.add_argument("--field", help="field file (default OUT/field.txt)")
        if name == "beta":
            sp.add_argument("--n", type=int, choices=(2, 3))
    return ap


COMMANDS = {"solve": cmd_solve, "analyze": cmd_analyze, "verify": cmd_verify, "beta": cmd_beta}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else None
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResolutionError as exc:
        print(f"resolution error: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONV


if __name__ == "__main__":
    sys.exit(main())
