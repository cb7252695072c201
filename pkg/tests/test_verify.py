import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from almostmin.energy import beta_half, half_space
from almostmin.errors import PreconditionError, ValidationError
from almostmin.field import BallFrame, FieldFunction, GridSpec, make_field
from almostmin.homogeneity import phi
from almostmin.solver import DriftSpec, ball_nodes, block_energy, minimize_block, solve_drift
from almostmin.verify import (SOLVER_TOL, almost_min_verify, check_homogeneous, epiperimetric_test,
                              perturbation_family, perturbed_half_space, rotation_check, sample_frames,
                              weiss_decay_fit)
from almostmin.weiss import WeissParams, WeissReport, ladder

from conftest import unit

E1 = [1.0, 0.0]


def test_sample_frames_reproducible_and_inside():
    a = sample_frames(20, (0.03, 0.3), seed=4)
    b = sample_frames(20, (0.03, 0.3), seed=4)
    assert a == b
    for f in a:
        assert np.max(np.abs(f.center)) + f.r <= 1 and 0.03 <= f.r <= 0.3
    with pytest.raises(ValidationError):
        sample_frames(5, (0.1, 0.3))


def test_minimizer_is_indistinguishable(tilted_solve):
    u, _ = tilted_solve
    fit = almost_min_verify(u, sample_frames(8, (0.03, 0.3), seed=1))
    assert fit.verdict == "indistinguishable from minimizer"
    assert np.all(fit.ratios <= 1 + 10 * SOLVER_TOL)
    assert np.all(fit.ratios >= 1 - 10 * SOLVER_TOL)


def test_bump_is_flagged(tilted_solve):
    u, nu = tilted_solve
    bump = make_field(u.spec, lambda p: half_space(nu, [1.0])(p) + 0.2 * np.linalg.norm(p, axis=1)[:, None] ** 3)
    fit = almost_min_verify(bump, sample_frames(12, (0.03, 0.3), seed=1))
    assert fit.ratios.max() > 1.05 and fit.flagged
    assert np.all(fit.ratios >= 1 - 10 * SOLVER_TOL)


def test_competitor_beats_random_admissible_fields(coarse_solve):
    u, _ = coarse_solve
    frame = BallFrame([0.05, 0.0], 0.4)
    free = ball_nodes(u.spec, frame)
    block = u.values + 0.05 * np.random.default_rng(0).normal(size=u.values.shape) * free[..., None]
    v, _ = minimize_block(block, free, u.h)
    Jv = block_energy(v, free, u.h)
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = v + rng.normal(scale=10 ** rng.uniform(-4, -1), size=v.shape) * free[..., None]
        assert Jv <= block_energy(w, free, u.h)


def test_drift_gauge_records_exponent():
    s = GridSpec(2, 1, 1 / 64)
    u = solve_drift(half_space(unit(0.3), [1.0]), DriftSpec(np.array([0.5, 0.0]), 4.0), s)
    fit = almost_min_verify(u, sample_frames(10, (0.0625, 0.625), seed=2, region=0.3))
    assert np.isfinite(fit.beta) and fit.beta > 0
    assert fit.ratios.max() <= 1.1 and fit.worst_margin >= -1e-12


# ------------------------------------------------------------------ epiperimetric

def test_epi_exact_half_space_degenerate():
    r = epiperimetric_test(half_space(E1, [1.0]))
    assert r.degenerate and np.isnan(r.kappa_hat)
    assert r.M_c == pytest.approx(beta_half(2), abs=1e-12)
    assert abs(r.M_v - r.M_c) <= 10 * SOLVER_TOL * (1 + abs(r.M_c))


def test_epi_second_mode_perturbation():
    r = epiperimetric_test(perturbed_half_space(E1, [1.0], 0.05, k=2, kind="wobble", mode="cos"))
    assert 0 < r.kappa_hat < 1 and r.M_v <= r.M_c + 1e-8


def test_epi_doubled_half_space():
    h = half_space(E1, [1.0])
    two = FieldFunction(2, 1, lambda p: 2 * h(p), lambda p: 2 * h.grad(p))
    r = epiperimetric_test(two)
    assert r.M_v < r.M_c
    assert r.degenerate  # M(2h) = 0 < beta/2, see ledger


def test_epi_rejects_non_homogeneous():
    f = FieldFunction(2, 1, lambda p: p[:, :1], lambda p: np.tile([[[1.0, 0.0]]], (len(p), 1, 1)))
    with pytest.raises(PreconditionError):
        epiperimetric_test(f)


@settings(max_examples=10, deadline=None)
@given(amp=st.floats(0.0, 0.2), k=st.integers(1, 4), kind=st.sampled_from(["wobble", "rotate"]),
       mode=st.sampled_from(["cos", "sin"]))
def test_perturbations_are_2_homogeneous(amp, k, kind, mode):
    check_homogeneous(perturbed_half_space(E1, [1.0, 0.0], amp, k, kind, mode), 2)


def test_perturbation_family_labels():
    fam = perturbation_family(E1, [1.0, 0.0], amplitudes=(0.05,))
    assert len(fam) == 2 * 3 * 2 and fam[0][0] == "wobble,cos1,0.05"
    assert len(perturbation_family(E1, [1.0], amplitudes=(0.05,))) == 6


# ------------------------------------------------------------------ decay and rotation

def test_decay_fit_analytic_half_space():
    p = WeissParams(1.0, 2)
    d = weiss_decay_fit(half_space(E1, [1.0]), np.zeros(2), p)
    assert d.delta == pytest.approx(1.0, abs=1e-6)
    assert d.C == pytest.approx(3 * np.pi * p.b / 16, rel=0.1)
    assert not d.decay_violation


def test_decay_fit_synthetic():
    p = WeissParams(1.0, 2)
    t = ladder(0.04, 0.4, 2 ** 0.25)
    W = 0.3 + 0.7 * t ** 0.5
    rep = WeissReport(np.zeros(2), t, W, np.diff(W) / np.diff(t), np.zeros_like(t), p, 0.0)
    d = weiss_decay_fit(report=rep, params=p)
    assert d.delta == pytest.approx(0.5, abs=1e-3)


def test_decay_fit_minimizer(tilted_solve):
    u, _ = tilted_solve
    p = WeissParams(1.9)
    d = weiss_decay_fit(u, np.zeros(2), p)
    assert 0 < d.delta <= p.alpha


def test_rotation_half_space_formula_and_exponent():
    p = WeissParams(1.0, 2)
    h = half_space(E1, [1.0])
    radii = 1e-2 * 2 ** -np.arange(0, 3, 0.5)
    rc = rotation_check(h, [0, 0], radii, p)
    q = radii ** 2 / phi(radii, p)
    assert np.allclose(rc.deviations, np.abs(np.diff(q)) * np.pi / 4, rtol=1e-8)
    assert rc.exponent == pytest.approx(p.alpha, rel=0.1)
    same = rotation_check(h, [0, 0], [0.1, 0.1, 0.05, 0.02], p)
    assert len(same.deviations) == 2  # duplicate radius skipped


def test_rotation_minimizer(tilted_solve):
    u, _ = tilted_solve
    rc = rotation_check(u, [0, 0], 0.4 * 2 ** (-0.25 * np.arange(14)), WeissParams(1.9))
    assert rc.exponent > 0 and rc.monotone
