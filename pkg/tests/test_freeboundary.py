import numpy as np
import pytest

from almostmin.energy import half_space
from almostmin.errors import ConeViolationError, PreconditionError
from almostmin.field import GridSpec, make_field
from almostmin.freeboundary import (FreeBoundaryPoint, extract_free_boundary, gamma_csv, graph_fit, growth_report,
                                    normal_direction_map)
from almostmin.weiss import WeissParams

from conftest import unit

RADII = np.array([0.05, 0.1, 0.2, 0.4])


def test_extract_sampled_half_space():
    s = GridSpec(2, 1, 1 / 64)
    u = make_field(s, half_space([1.0, 0.0], [1.0]))
    pts = extract_free_boundary(u)
    X = np.array([p.location for p in pts])
    assert len(pts) > 50
    assert np.max(np.abs(X[:, 0])) <= s.h


def test_extract_zero_field_is_empty():
    u = make_field(GridSpec(2, 1, 1 / 16), lambda p: np.zeros(len(p)))
    assert extract_free_boundary(u) == []


def test_extract_minimizer_within_2h(rotated_solve):
    u, nu = rotated_solve
    pts = extract_free_boundary(u)
    X = np.array([p.location for p in pts])
    assert np.max(np.abs(X @ nu)) <= 2 * u.h
    # and the line is covered inside B_1/2
    tau = np.array([-nu[1], nu[0]])
    line = np.linspace(-0.5, 0.5, 101)[:, None] * tau
    gap = np.min(np.linalg.norm(line[:, None] - X[None], axis=2), axis=1).max()
    assert gap <= u.h


def test_growth_half_space_exact():
    g = growth_report(half_space(unit(0.3), [1.0]), [0, 0], RADII)
    assert np.allclose(g.sup_ratio, 0.5, atol=1e-12)
    assert np.allclose(g.energy_ratio, np.pi / 4, rtol=1e-6)


def test_growth_minimizer_two_sided(tilted_solve):
    u, _ = tilted_solve
    x0 = min(extract_free_boundary(u), key=lambda p: np.linalg.norm(p.location)).location
    g = growth_report(u, x0, RADII)
    assert 0.3 <= g.c0 <= g.C_sup <= 0.7
    assert 0.5 * np.pi / 4 <= g.eps0 <= g.C_energy <= 1.5 * np.pi / 4


def test_normal_map_half_space_constant():
    h = half_space(unit(0.3), [1.0])
    tau = np.array([-np.sin(0.3), np.cos(0.3)])
    pts = [s * tau for s in (-0.2, 0.0, 0.2)]
    m = normal_direction_map(h, pts, np.array([0.2, 0.1, 0.05]))
    assert m.max_deviation < 1e-6 and np.all(m.ratios < 1e-5)  # optimizer precision
    one = normal_direction_map(h, pts[:1], np.array([0.2, 0.1]))
    assert len(one.nu) == 1 and np.all(one.ratios == 0)


def test_normal_map_minimizer(tilted_solve):
    u, nu = tilted_solve
    pts = [p for p in extract_free_boundary(u) if np.linalg.norm(p.location) <= 0.25][::6]
    m = normal_direction_map(u, pts, 0.3 * 2 ** (-np.arange(4) / 2), WeissParams(1.9))
    assert m.max_deviation <= 0.1
    assert np.all(np.abs(m.nu @ nu - 1) < 1e-3)


def test_graph_fit_exact_line():
    nu = unit(0.7)
    tau = np.array([-nu[1], nu[0]])
    pts = [s * tau + 0.01 * nu for s in np.linspace(-0.2, 0.2, 21)]
    gf = graph_fit(None, pts[10], pts, nu=nu, h=0.01)
    assert np.max(np.abs(gf.residuals)) <= 1e-8
    assert gf.tilt_deg < 1e-6


def test_graph_fit_minimizer_flat(rotated_solve):
    u, nu = rotated_solve
    pts = extract_free_boundary(u)
    base = min(pts, key=lambda p: np.linalg.norm(p.location)).location
    gf = graph_fit(u, base, pts)
    assert np.degrees(np.arccos(np.clip(abs(gf.normal @ nu), -1, 1))) <= 3
    assert np.max(np.abs(gf.g)) <= 2 * u.h
    assert 0 < gf.gamma <= 1


def test_graph_fit_cone_violation_and_guards():
    nu = unit(0.0)
    pts = [np.array([0.0, s]) for s in np.linspace(-0.1, 0.1, 5)] + [np.array([0.2, 0.0])]
    with pytest.raises(ConeViolationError):
        graph_fit(None, pts[2], pts, nu=nu, h=0.01, window=0.5)
    with pytest.raises(PreconditionError):
        graph_fit(None, pts[0], pts, nu=nu, h=0.01, verdict="Indeterminate")


def test_gamma_csv_header():
    p = FreeBoundaryPoint(np.array([0.1, 0.2]), (1, 2), "Regular", 0.19)
    lines = gamma_csv([p], 2, 1).splitlines()
    assert lines[0] == "x1,x2,class,W0,nu1,nu2,e1,c_lower,C_upper"
    assert lines[1].startswith("0.1,0.2,Regular,0.19,nan")
