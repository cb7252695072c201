import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from almostmin.energy import beta_half, half_space
from almostmin.errors import PreconditionError, ResolutionError, ValidationError
from almostmin.field import BallFrame, FieldFunction, GridSpec, make_field
from almostmin.freeboundary import extract_free_boundary
from almostmin.weiss import (WeissParams, WeissReport, classify_point, closed_form_half_space, fit_power, ladder,
                             tolerance_mono, weiss, weiss_limit, weiss_scan)

from oracles import weiss_half_space_symbolic

H = half_space([1.0, 0.0], [1.0])
ZERO = FieldFunction(2, 1, lambda p: np.zeros((len(p), 1)), lambda p: np.zeros((len(p), 1, 2)))


@settings(max_examples=50)
@given(alpha=st.floats(0.01, 1.99), n=st.sampled_from([2, 3]))
def test_params_formulas(alpha, n):
    p = WeissParams(alpha, n)
    assert p.a == (n + 2) / alpha and p.b == (n + 4) / alpha


@pytest.mark.parametrize("alpha", [0.0, 2.0, 3.0, -1.0])
def test_params_reject_alpha(alpha):
    with pytest.raises(ValidationError):
        WeissParams(alpha)


def test_weiss_half_space_matches_symbolic_oracle():
    p = WeissParams(1.0, 2)
    t = sp.Rational(1, 10)
    ref = float(weiss_half_space_symbolic(2, 1, t))
    assert ref == pytest.approx(0.8202, abs=5e-3)
    assert weiss(H, BallFrame([0, 0], 0.1), p) == pytest.approx(ref, rel=1e-7)
    assert closed_form_half_space(0.1, p) == pytest.approx(ref, rel=1e-12)


def test_closed_form_3d_matches_oracle():
    p = WeissParams(1.5, 3)
    t = sp.Rational(1, 5)
    ref = float(weiss_half_space_symbolic(3, sp.Rational(3, 2), t))
    assert closed_form_half_space(0.2, p) == pytest.approx(ref, rel=1e-12)
    h3 = half_space([0.0, 0.0, 1.0], [1.0])
    assert weiss(h3, BallFrame([0, 0, 0], 0.2), p) == pytest.approx(ref, rel=1e-4)


def test_weiss_of_zero_is_zero():
    assert weiss(ZERO, BallFrame([0, 0], 0.2), WeissParams(1.0)) == 0.0


def test_scan_half_space_monotone_and_slopes():
    p = WeissParams(1.0, 2)
    rep = weiss_scan(H, [0, 0], (0.02, 0.4), p)
    assert len(rep.violations) == 0
    assert np.all(np.diff(rep.W) > 0)
    tm = 0.5 * (rep.t[1:] + rep.t[:-1])
    dt = 1e-7
    exact = (closed_form_half_space(tm + dt, p) - closed_form_half_space(tm - dt, p)) / (2 * dt)
    assert np.allclose(rep.slopes, exact, rtol=0.05)
    assert rep.W[0] > np.pi / 16
    assert rep.W0_estimate == pytest.approx(np.pi / 16, abs=1e-4)


def test_scan_zero_field():
    rep = weiss_scan(ZERO, [0, 0], (0.04, 0.4), WeissParams(1.0))
    assert np.all(rep.W == 0) and np.all(rep.slopes == 0)
    assert weiss_limit(rep).W0 == 0


def test_report_csv_layout():
    rep = weiss_scan(H, [0, 0], (0.05, 0.4), WeissParams(1.0))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "t,W,slope,lower_bound" and len(lines) == len(rep.t) + 1
    assert lines[-1].split(",")[2] == "nan"


def test_ladder_properties():
    t = ladder(0.04, 0.4, 2 ** 0.25)
    assert np.all(np.diff(t) > 0) and t[0] == 0.04 and t[-1] == pytest.approx(0.4)
    with pytest.raises(ValidationError):
        ladder(0.04, 0.4, 3.0)


def test_scan_drops_unresolved_radii(coarse_solve):
    u, _ = coarse_solve
    rep = weiss_scan(u, [0, 0], (0.04, 0.4), WeissParams(1.9))
    assert rep.t.min() >= 4 * u.h * (1 - 1e-12)
    with pytest.raises(ResolutionError):
        weiss_scan(u, [0, 0], (0.01, 0.12), WeissParams(1.9))


@settings(max_examples=30, deadline=None)
@given(W0=st.floats(0.05, 1.0), c=st.floats(0.05, 2.0), delta=st.floats(0.2, 1.0))
def test_fit_power_recovers_exact_model(W0, c, delta):
    t = ladder(0.04, 0.4, 2 ** 0.25)
    W0f, cf, df, res = fit_power(t, W0 + c * t ** delta, 1.0)
    assert W0f == pytest.approx(W0, abs=1e-6)
    assert df == pytest.approx(delta, abs=1e-4)


def test_limit_synthetic_linear():
    t = ladder(0.04, 0.4, 2 ** 0.25)
    rep = WeissReport(np.zeros(2), t, 0.2 + 0.5 * t, np.diff(0.5 * t) / np.diff(t), np.zeros_like(t),
                      WeissParams(1.0), 0.0)
    assert weiss_limit(rep).W0 == pytest.approx(0.2, abs=1e-6)


def test_limit_closed_form_samples():
    p = WeissParams(1.0, 2)
    t = ladder(0.04, 0.4, 2 ** 0.25)
    W = closed_form_half_space(t, p)
    rep = WeissReport(np.zeros(2), t, W, np.diff(W) / np.diff(t), np.zeros_like(t), p, 0.0)
    assert weiss_limit(rep).W0 == pytest.approx(np.pi / 16, abs=1e-4)


def test_limit_flags_non_monotone():
    t = ladder(0.04, 0.4, 2 ** 0.25)
    W = 0.3 - 0.2 * t
    rep = WeissReport(np.zeros(2), t, W, np.diff(W) / np.diff(t), np.zeros_like(t), WeissParams(1.0), 0.01)
    assert weiss_limit(rep).indeterminate


def test_classify_analytic_half_space():
    c = classify_point(H, [0, 0], WeissParams(1.0))
    assert c.verdict == "Regular"
    assert c.W0_estimate == pytest.approx(beta_half(2), abs=1e-3)
    assert c.W0_estimate + c.err <= c.threshold


def test_classify_rejects_non_free_boundary_points(coarse_solve):
    u, nu = coarse_solve
    with pytest.raises(PreconditionError, match="positivity"):
        classify_point(u, 0.3 * nu)
    with pytest.raises(PreconditionError, match="interior of the zero set"):
        classify_point(u, -0.3 * nu)
    z = make_field(GridSpec(2, 1, 1 / 32), lambda p: np.zeros(len(p)))
    with pytest.raises(PreconditionError):
        classify_point(z, [0, 0])


def test_classification_verdict_consistent_with_threshold(coarse_solve):
    u, _ = coarse_solve
    pts = extract_free_boundary(u)
    near = sorted(pts, key=lambda q: np.linalg.norm(q.location))[:3]
    for q in near:
        c = classify_point(u, q.location, check=False)
        if c.verdict == "Regular":
            assert c.W0_estimate <= c.threshold
        elif c.verdict == "NonRegular":
            assert c.W0_estimate > c.threshold
        else:
            assert c.W0_estimate - c.err <= c.threshold < c.W0_estimate + c.err or c.reason


def test_tolerance_mono_scales_with_h(coarse_solve):
    u, _ = coarse_solve
    assert tolerance_mono(H, None) == 0.0
    assert tolerance_mono(u, u.h) == pytest.approx(5 * u.h * (1 + np.pi / 4), rel=0.05)
