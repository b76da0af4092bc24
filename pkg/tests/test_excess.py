import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orlicz_lab import nfunc
from orlicz_lab.corpus import kink_field, perturbed_affine, random_zero_boundary
from orlicz_lab.excess import (ExcessError, affine_fit, almost_harmonicity_defect,
                               approximation_closeness, caccioppoli_ratio, decay_curve, excess,
                               mean_comparison_ratio, nondegeneracy_bounds, poincare_ratio,
                               regular_scan, reverse_holder_ratio, shifted_mean_bound,
                               smallness_check)
from orlicz_lab.experiments import classify_kink
from orlicz_lab.fespace import (AffineField, Ball, FieldP1, ball_region, build_mesh, gradient,
                                interpolate)
from orlicz_lab.minimize import DirichletProblem, make_radial, minimize

QUAD = nfunc.make_catalog("quadratic")
CUBIC = nfunc.make_catalog("power", 3.0)
QA = np.array([[0.8, 0.3], [-0.2, 0.6]])
B0 = Ball((0.0, 0.0), 0.25)


def saddle(mesh):
    x, y = mesh.vertices.T
    return FieldP1(mesh, np.column_stack([x * x - y * y, 0 * x]))


def outer_mean_grad(u, ball):
    reg = ball_region(u.mesh, ball.scaled(2.0))
    return reg.average(gradient(u)[reg.tri])


_CACHE = {}


def minimizer(p, h, amp):
    key = (p, h, amp)
    if key not in _CACHE:
        phi = QUAD if p == 2 else nfunc.make_catalog("power", p)
        f = make_radial(phi)
        mesh = build_mesh(1.0, h)
        u = minimize(DirichletProblem(f, mesh, perturbed_affine(mesh, amp=amp)))
        _CACHE[key] = (f, u)
    return _CACHE[key]


# ------------------------------------------------------------------ excess

def test_excess_affine_zero(mesh16):
    u = AffineField(QA).interpolate(mesh16)
    for s in (1.0, 1.5, 3.0):
        assert excess(u, B0, s, CUBIC).phi_s == pytest.approx(0.0, abs=1e-24)


def test_excess_saddle_polar_oracle():
    mesh = build_mesh(1.0, 1 / 64)
    u = saddle(mesh)
    r1 = excess(u, Ball((0.0, 0.0), 0.5), 1.0, QUAD)
    r2 = excess(u, Ball((0.0, 0.0), 0.5), 2.0, QUAD)
    # |grad u|^2 = 4 rho^2 with zero mean: mean over B(0, R) is 2 R^2; the L4 term gives 4 R^2 / sqrt 3
    assert r1.phi_s == pytest.approx(0.5, rel=0.05)
    assert r2.phi_s == pytest.approx(1 / np.sqrt(3), rel=0.05)
    assert r1.phi_s <= r2.phi_s
    assert r1.energy_V == pytest.approx(r1.phi_s, rel=1e-6)


def test_excess_two_resolutions_agree():
    vals = [excess(saddle(build_mesh(1.0, h)), Ball((0.1, 0.05), 0.3), 1.0, CUBIC).phi_s
            for h in (1 / 32, 1 / 64)]
    assert vals[1] == pytest.approx(vals[0], rel=0.05)


def test_excess_constant_invariance(mesh16):
    u = saddle(mesh16)
    shifted = FieldP1(mesh16, u.values + np.array([3.0, -1.0]))
    assert excess(shifted, B0, 1.0, CUBIC).phi_s == excess(u, B0, 1.0, CUBIC).phi_s


def test_excess_validation(mesh16):
    u = saddle(mesh16)
    with pytest.raises(ExcessError):
        excess(u, B0, 0.5)
    with pytest.raises(ExcessError):
        excess(u, Ball((0.9, 0.0), 0.3))


@settings(max_examples=20)
@given(st.floats(1.0, 3.0), st.floats(0.0, 2.0), st.floats(-0.5, 0.5))
def test_excess_monotone_in_s(s1, ds, cx):
    mesh = build_mesh(1.0, 1 / 8)
    u = interpolate(mesh, lambda x, y: np.column_stack([np.sin(2 * x) + y * y, x * y]))
    ball = Ball((cx, 0.0), 0.4)
    a = excess(u, ball, s1, CUBIC).phi_s
    b = excess(u, ball, s1 + ds, CUBIC).phi_s
    assert a <= b * (1 + 1e-12)


# ------------------------------------------------------------------ smallness

def test_smallness_examples(mesh16):
    aff = AffineField(QA).interpolate(mesh16)
    res = smallness_check(aff, B0, 1e-6)
    assert res.holds and res.margin == pytest.approx(0.0, abs=1e-24) and not res.vacuous
    const = FieldP1(mesh16, np.ones((mesh16.n_vertices, 2)))
    res = smallness_check(const, B0, 0.1)
    assert res.holds and res.vacuous
    pert = perturbed_affine(build_mesh(1.0, 1 / 32), amp=0.01)
    res = smallness_check(pert, Ball((0.0, 0.0), 0.2), 0.1)
    assert res.holds and res.margin < 1e-3


# ------------------------------------------------------------------ ratio checks

def test_caccioppoli_affine_zero(mesh16):
    u = AffineField(QA).interpolate(mesh16)
    assert caccioppoli_ratio(u, B0, QA, CUBIC) == 0.0


def test_affine_fit_zero_mean(mesh32):
    u = saddle(mesh32)
    ball = Ball((0.1, 0.2), 0.3)
    b = affine_fit(u, ball, QA)
    reg = ball_region(mesh32, ball)
    z = reg.evaluate(mesh32, u.values) - reg.evaluate(mesh32, mesh32.vertices) @ QA.T - b
    np.testing.assert_allclose(reg.average(z), 0.0, atol=1e-13)


def test_caccioppoli_harmonic_refinement_stable():
    vals = []
    for h in (1 / 32, 1 / 64):
        # the interpolant of x^2 - y^2 is the discrete quadratic minimizer
        u = saddle(build_mesh(1.0, h))
        vals.append(caccioppoli_ratio(u, B0, outer_mean_grad(u, B0), QUAD))
    assert np.isfinite(vals).all()
    assert vals[1] == pytest.approx(vals[0], rel=0.25)


def test_caccioppoli_p3_minimizer_bounded():
    f, u = minimizer(3, 1 / 32, 0.05)
    r = caccioppoli_ratio(u, B0, outer_mean_grad(u, B0), f.phi)
    assert 0 < r < 10


def test_poincare_linear_polar_oracle():
    mesh = build_mesh(1.0, 1 / 64)
    w = interpolate(mesh, lambda x, y: np.column_stack([x, 0 * x]))
    # psi = t^2/2: mean x^2/2 over the unit disc is 1/8, mean psi(1) = 1/2
    assert poincare_ratio(w, Ball((0.0, 0.0), 1.0), QUAD) == pytest.approx(0.25, rel=1e-2)


def test_poincare_constant_and_alpha(mesh16):
    w = FieldP1(mesh16, np.ones((mesh16.n_vertices, 2)))
    assert poincare_ratio(w, B0, QUAD) == 0.0
    with pytest.raises(ExcessError):
        poincare_ratio(w, B0, QUAD, alpha=1.5)


@pytest.mark.parametrize("alpha", [0.75, 1.0])
def test_poincare_bounded_corpus(mesh32, alpha):
    ratios = [poincare_ratio(w, Ball((0.0, 0.0), 0.5), psi, alpha)
              for w in random_zero_boundary(mesh32, 5, seed=4)
              for psi in (QUAD, CUBIC)]
    assert max(ratios) < 5 and min(ratios) > 0


def test_reverse_holder_examples():
    mesh = build_mesh(1.0, 1 / 32)
    aff = AffineField(QA).interpolate(mesh)
    assert reverse_holder_ratio(aff, B0, QA) == 0.0
    u = saddle(mesh)
    Q = outer_mean_grad(u, B0)
    lo = reverse_holder_ratio(u, B0, Q, 1.1)
    hi = reverse_holder_ratio(u, B0, Q, 1.5)
    assert 0 < lo <= hi < np.inf
    with pytest.raises(ExcessError):
        reverse_holder_ratio(u, B0, Q, 1.0)


def test_reverse_holder_refinement_stable():
    vals = []
    for h in (1 / 32, 1 / 64):
        u = saddle(build_mesh(1.0, h))
        vals.append(reverse_holder_ratio(u, B0, outer_mean_grad(u, B0), 1.25))
    assert vals[1] == pytest.approx(vals[0], rel=0.25)


# ------------------------------------------------------------------ defect and closeness

def test_defect_affine_zero(mesh32):
    u = AffineField(QA).interpolate(mesh32)
    f = make_radial(CUBIC)
    assert almost_harmonicity_defect(u, B0, f).eps == 0.0


def test_defect_quadratic_minimizer_tiny():
    f, u = minimizer(2, 1 / 32, 0.05)
    res = almost_harmonicity_defect(u, B0, f)
    assert res.eps < 1e-8


def test_defect_shrinks_with_perturbation():
    ball = Ball((0.0, 0.0), 0.2)
    big = almost_harmonicity_defect(minimizer(3, 1 / 32, 0.05)[1], ball, make_radial(CUBIC)).eps
    small = almost_harmonicity_defect(minimizer(3, 1 / 32, 0.01)[1], ball, make_radial(CUBIC)).eps
    assert 0 < small < big


def test_defect_degenerate_raises(mesh32):
    u = FieldP1(mesh32, np.zeros((mesh32.n_vertices, 2)))
    with pytest.raises(ExcessError):
        almost_harmonicity_defect(u, B0, make_radial(QUAD))


def test_closeness_affine_zero(mesh32):
    u = AffineField(QA).interpolate(mesh32)
    res = approximation_closeness(u, B0, make_radial(CUBIC))
    assert res.lhs == pytest.approx(0.0, abs=1e-20)


def test_closeness_quadratic_exact():
    # the discrete quadratic minimizer is itself A-harmonic, so w vanishes to rounding
    for amp in (0.05, 0.01):
        res = approximation_closeness(minimizer(2, 1 / 32, amp)[1], B0, make_radial(QUAD))
        assert res.rhs > 0 and res.ratio < 1e-18


def test_closeness_p3_shrinks():
    f = make_radial(CUBIC)
    ratios = [approximation_closeness(minimizer(3, 1 / 32, amp)[1], B0, f).ratio
              for amp in (0.05, 0.01)]
    assert 0 < ratios[1] < ratios[0] < 1e-3


def test_closeness_constant_invariance():
    f, u = minimizer(3, 1 / 32, 0.05)
    moved = FieldP1(u.mesh, u.values + np.array([1.0, 2.0]))
    a = approximation_closeness(u, B0, f).lhs
    b = approximation_closeness(moved, B0, f).lhs
    assert b == pytest.approx(a, rel=1e-8)


# ------------------------------------------------------------------ decay and scan

def test_decay_affine_flagged(mesh32):
    u = AffineField(QA).interpolate(mesh32)
    curve = decay_curve(u, (0.0, 0.0), (0.4, 0.3), 0.5)
    assert curve.flagged and np.isnan(curve.fitted_slope)


def test_decay_radius_validation(mesh32):
    u = saddle(mesh32)
    with pytest.raises(ExcessError):
        decay_curve(u, (0.0, 0.0), (0.2, 0.4))
    with pytest.raises(ExcessError):
        decay_curve(u, (0.0, 0.0), (0.6, 0.3))
    with pytest.warns(UserWarning, match="dropped"):
        curve = decay_curve(u, (0.0, 0.0), (0.4, 0.3, 0.1))
    assert list(curve.radii) == [0.4, 0.3] and curve.dropped == [0.1]


def test_decay_saddle_slope():
    # smooth field: Phi(rho B) ~ rho^2 exactly for the saddle
    for h, taus in ((1 / 80, {0.5}), (1 / 160, {0.5, 0.25})):
        curve = decay_curve(saddle(build_mesh(1.0, h)), (0.0, 0.0), (0.4, 0.2, 0.1), 0.5, QUAD)
        assert curve.fitted_slope == pytest.approx(2.0, rel=0.05)
        assert set(curve.tau_ratios) == taus
        # Phi(tau B) / Phi(2B) = (tau / 2)^2 for the saddle
        assert curve.tau_ratios[0.5] == pytest.approx(1 / 16, rel=0.05)


def test_scan_affine_zero(mesh32):
    u = AffineField(QA).interpolate(mesh32)
    pts = regular_scan(u, 0.2, (0.25, 0.125))
    assert pts and max(p.proxy for p in pts) < 1e-24


def test_scan_kink_small():
    mesh = build_mesh(1.0, 1 / 64)
    radii = (0.25, 0.125)
    pts = regular_scan(kink_field(mesh), 0.1, radii)
    res = classify_kink(pts, 0.03, radii, mesh.h)
    assert res.kink_min > 10 * res.smooth_median
    assert res.smooth_max < 10 * res.smooth_median


def test_scan_refinement_decreases_smooth_proxies():
    radii = (0.25, 0.125)
    med = []
    for h in (1 / 32, 1 / 64):
        mesh = build_mesh(1.0, h)
        u = interpolate(mesh, lambda x, y: np.column_stack([x + 0.05 * np.abs(x - 0.03) ** 1.5, y]))
        pts = regular_scan(u, 0.1, radii)
        med.append(np.median([p.proxy for p in pts]))
    assert med[1] < med[0]


# ------------------------------------------------------------------ mean-value bounds

def test_mean_comparison_examples(mesh32):
    aff = AffineField(QA).interpolate(mesh32)
    assert mean_comparison_ratio(aff, B0, CUBIC) == 1.0
    u = saddle(mesh32)
    assert mean_comparison_ratio(u, B0, QUAD) == pytest.approx(1.0, rel=1e-12)


def test_mean_comparison_p3_corpus():
    ratios = []
    for amp in (0.01, 0.05, 0.2):
        mesh = build_mesh(1.0, 1 / 32)
        u = perturbed_affine(mesh, amp=amp, profile="poly")
        for c in ((0.0, 0.0), (0.2, -0.1)):
            ratios.append(mean_comparison_ratio(u, Ball(c, 0.3), CUBIC))
    ratios = np.array(ratios)
    assert np.all(ratios <= 1 + 1e-9) and ratios.min() > 0.5


def test_nondegeneracy_examples(mesh32):
    aff = AffineField(QA).interpolate(mesh32)
    r = nondegeneracy_bounds(aff, B0, 0.03, CUBIC)
    assert r.r1 == pytest.approx(0.25) and r.r2 == pytest.approx(0.0, abs=1e-20)
    assert r.r3 == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ExcessError):
        nondegeneracy_bounds(FieldP1(mesh32, np.zeros((mesh32.n_vertices, 2))), B0, 0.03)


def test_nondegeneracy_perturbations():
    mesh = build_mesh(1.0, 1 / 32)
    r3 = []
    for amp in (0.05, 0.01):
        u = perturbed_affine(mesh, amp=amp)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            r = nondegeneracy_bounds(u, Ball((0.0, 0.0), 0.4), 0.03, CUBIC)
        assert r.r1 <= 1 and r.r2 <= 1
        r3.append(r.r3)
    assert r3[1] < r3[0]


def test_shifted_mean_examples():
    mesh = build_mesh(1.0, 1 / 32)
    aff = AffineField(QA).interpolate(mesh)
    assert shifted_mean_bound(aff, B0, QA, CUBIC).ratio == 0.0
    for amp in (0.05, 0.2):
        u = perturbed_affine(mesh, amp=amp, profile="poly")
        Q = outer_mean_grad(u, B0)
        res = shifted_mean_bound(u, B0, Q, CUBIC)
        assert res.jensen >= 1 - 1e-9
        assert 0 < res.ratio < 10
