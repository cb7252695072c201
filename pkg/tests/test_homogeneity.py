import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from almostmin.energy import energy, half_space
from almostmin.errors import PreconditionError, ValidationError
from almostmin.field import BallFrame, FieldFunction, as_function, boundary_trace
from almostmin.homogeneity import (angles, cauchy_deviations, extract_blowup, fit_half_space,
                                   homogeneity_deviation, homogeneous_replacement, phi, phi_rescale, rescale)
from almostmin.verify import perturbed_half_space
from almostmin.weiss import WeissParams

from conftest import unit

P1 = WeissParams(1.0, 2)


def test_rescale_energy_identity(tilted_solve):
    u, _ = tilted_solve
    x0, r = np.array([0.1, 0.05]), 0.3
    R = rescale(u, x0, r)
    E1 = energy(R.field, BallFrame([0, 0], 1.0)).total
    E2 = energy(u, BallFrame(x0, r)).total / r ** 4
    assert E1 == pytest.approx(E2, rel=1e-3)


def test_rescale_value_at_origin(coarse_solve):
    u, nu = coarse_solve
    x0 = 0.2 * nu
    R = rescale(u, x0, 0.25)
    mid = tuple(s // 2 for s in R.field.spec.shape)
    assert R.field.values[mid][0] == pytest.approx(as_function(u)(x0[None])[0, 0] / 0.25 ** 2, rel=1e-9)


def test_rescale_half_space_scale_invariant():
    h = half_space(unit(0.4), [1.0])
    R = rescale(h, [0, 0], 0.37, h_target=1 / 32)
    pts = R.field.spec.points()
    assert np.allclose(R.field.values.reshape(-1, 1), h(pts), atol=1e-14)


@settings(max_examples=10, deadline=None)
@given(x0=st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3)), r=st.floats(0.1, 0.6))
def test_homogeneous_replacement_trace_and_homogeneity(x0, r):
    f = perturbed_half_space(unit(0.2), [1.0], 0.05, k=3)
    c = homogeneous_replacement(f, x0, r)
    rng = np.random.default_rng(0)
    w = rng.normal(size=(12, 2))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    assert np.allclose(c(w), f(np.asarray(x0) + r * w) / r ** 2, atol=1e-12)
    for lam in (0.3, 0.7):
        assert np.allclose(c(lam * w), lam ** 2 * c(w), atol=1e-12)
    tr_c = boundary_trace(c, BallFrame([0, 0], 1.0), n_quad=64)
    tr_u = boundary_trace(f, BallFrame(x0, r), n_quad=64)
    assert np.allclose(tr_c.values, tr_u.values / r ** 2, atol=1e-12)


def test_homogeneous_replacement_of_half_space_is_itself():
    h = half_space(unit(1.1), [1.0])
    c = homogeneous_replacement(h, [0, 0], 0.5)
    x = np.random.default_rng(3).uniform(-1, 1, (20, 2))
    assert np.allclose(c(x), h(x), atol=1e-14)
    v, g = c.evaluate(x)
    assert np.allclose(g, h.grad(x), atol=1e-12)


def test_phi_values_and_ode():
    assert phi(1e-3, P1) / 1e-6 == pytest.approx(np.exp(-12e-3), rel=1e-12)
    assert np.exp(-12e-3) == pytest.approx(0.98807, abs=1e-5)
    for r in (0.1, 0.2):
        d = 1e-6
        fd = (phi(r + d, P1) - phi(r - d, P1)) / (2 * d)
        assert fd == pytest.approx(2 * phi(r, P1) * (1 - P1.b * r) / r, abs=1e-8)


def test_phi_rescale_of_half_space():
    h = half_space(unit(0.0), [1.0])
    r = 0.2
    v = phi_rescale(h, [0, 0], r, P1)
    x = np.random.default_rng(1).uniform(-1, 1, (10, 2))
    assert np.allclose(v(x), r ** 2 / phi(r, P1) * h(x), rtol=1e-12)


def test_homogeneity_deviation_examples():
    assert homogeneity_deviation(half_space(unit(0.3), [1.0])) <= 1e-3
    lin = FieldFunction(2, 1, lambda x: x[:, :1], lambda x: np.tile([[[1.0, 0.0]]], (len(x), 1, 1)))
    assert homogeneity_deviation(lin) == pytest.approx(np.pi / 4, rel=1e-6)
    const = FieldFunction(2, 1, lambda x: np.full((len(x), 1), 0.5), lambda x: np.zeros((len(x), 1, 2)))
    assert homogeneity_deviation(const) == pytest.approx(4 * 0.25 * np.pi, rel=1e-6)


@settings(max_examples=15, deadline=None)
@given(th=st.floats(-np.pi, np.pi), phi_e=st.floats(0, 2 * np.pi))
def test_fit_half_space_recovers_members_2d(th, phi_e):
    nu, e = unit(th), unit(phi_e)
    fnu, fe, res = fit_half_space(half_space(nu, e))
    assert res <= 1e-8
    assert np.allclose(fnu, nu, atol=1e-6) and np.allclose(fe, e, atol=1e-6)


def test_fit_half_space_3d():
    nu = np.array([0.3, -0.5, 0.8])
    nu /= np.linalg.norm(nu)
    fnu, fe, res = fit_half_space(half_space(nu, [1.0]))
    assert res <= 1e-8 and np.allclose(fnu, nu, atol=1e-5)


def test_fit_half_space_perturbed_against_brute_force():
    nu0 = unit(0.5)
    v = perturbed_half_space(nu0, [1.0], 0.01, k=2)
    nu, e, res = fit_half_space(v)
    assert res <= 0.02
    assert np.degrees(abs(angles(nu)[0] - 0.5)) <= 2
    # oracle: brute-force sweep of the sphere misfit
    tr = boundary_trace(v, BallFrame([0, 0], 1.0), n_quad=1024)
    best = min(np.arange(0, 2 * np.pi, 1e-3),
               key=lambda a: tr.integrate(np.sum((tr.values - half_space(unit(a), [1.0])(tr.points)) ** 2, 1)))
    assert abs(angles(nu)[0] - best) < 2e-3


def test_fit_half_space_saddle_has_residual():
    q = FieldFunction(2, 1, lambda x: (x[:, 0] ** 2 - x[:, 1] ** 2)[:, None],
                      lambda x: np.stack([2 * x[:, 0], -2 * x[:, 1]], 1)[:, None, :])
    assert fit_half_space(q)[2] > 0.1


def test_cauchy_deviations_half_space():
    h = half_space(unit(0.0), [1.0])
    tr = boundary_trace(h, BallFrame([0, 0], 1.0), n_quad=2048)
    mass = float(tr.integrate(np.abs(tr.values[:, 0])))
    assert mass == pytest.approx(np.pi / 4, rel=1e-10)  # half-circle integral of cos^2/2
    for p, ratio in ((P1, 2 ** 0.5), (WeissParams(1.9), 2 ** 0.25)):
        radii = 0.1 * ratio ** -np.arange(5.0)
        dev, _ = cauchy_deviations(h, [0, 0], radii, p)
        expect = np.abs(radii[:-1] ** 2 / phi(radii[:-1], p) - radii[1:] ** 2 / phi(radii[1:], p)) * mass
        assert np.allclose(dev, expect, rtol=1e-8)
    assert np.all(dev <= 1e-2)  # alpha = 1.9 on the analysis ladder
    same, _ = cauchy_deviations(h, [0, 0], [0.1, 0.1], P1)
    assert same[0] == 0


def test_blowup_of_minimizer(tilted_solve):
    u, nu = tilted_solve
    b = extract_blowup(u, [0, 0], 0.4 * 2 ** (-np.arange(6) / 2), WeissParams(1.9))
    assert np.degrees(np.arccos(np.clip(b.nu @ nu, -1, 1))) <= 5
    assert b.e[0] == pytest.approx(1.0, abs=0.05)
    assert b.converged


def test_blowup_guards(tilted_solve):
    u, nu = tilted_solve
    with pytest.raises(PreconditionError):
        extract_blowup(u, 0.3 * nu, [0.2, 0.1])
    with pytest.raises(ValidationError):
        extract_blowup(u, [0, 0], [0.1, 0.2])
