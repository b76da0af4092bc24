"""Excess functional and the ratio checks of the partial regularity proof.

All ball integrals use the clipped quadrature of
:func:`orlicz_lab.fespace.ball_region`; ``mean`` below always means the
area-normalized integral over the clipped ball.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nfunc
from .aharmonic import approximate, tensor_from_integrand
from .fespace import Ball, FieldP1, ball_region, domain_region, flux_load, gradient, submesh
from .rng import SplitMix64

__all__ = [
    "ExcessReport", "DecayCurve", "SmallnessResult", "DefectResult",
    "ClosenessResult", "NondegeneracyResult", "ShiftedMeanResult", "ScanPoint",
    "ExcessError",
    "excess", "smallness_check", "caccioppoli_ratio", "poincare_ratio",
    "reverse_holder_ratio", "almost_harmonicity_defect",
    "approximation_closeness", "decay_curve", "regular_scan",
    "mean_comparison_ratio", "nondegeneracy_bounds", "shifted_mean_bound",
    "affine_fit",
]

log = logging.getLogger(__name__)

S0_DEFAULT = 1.25
MIN_RADIUS_CELLS = 8
RANDOM_TEST_FIELDS = 10


class ExcessError(ValueError):
    pass


def _norm(M):
    return np.sqrt(np.sum(M * M, axis=(-2, -1)))


def _v_values(u, region, phi):
    G = gradient(u)[region.tri]
    return G, nfunc.v_map(phi, G)


def _require_inside(u, ball, factor):
    if u.mesh.domain is not None and not ball.inside(u.mesh, factor):
        raise ExcessError(f"{factor:g}B for {ball} leaves the domain")


@dataclass(frozen=True)
class ExcessReport:
    ball: Ball
    s: float
    phi_s: float
    mean_V: np.ndarray
    energy_V: float
    small_delta: float | None


def _phi_s(u, ball, s, phi, V_tri=None):
    reg = ball_region(u.mesh, ball)
    if V_tri is None:
        _, V = _v_values(u, reg, phi)
    else:
        V = V_tri[reg.tri]
    mean_V = reg.average(V)
    dev = _norm(V - mean_V)
    phi_s = reg.average(dev ** (2 * s)) ** (1.0 / s)
    return float(phi_s), mean_V, float(reg.average(_norm(V) ** 2))


def excess(u, ball, s=1.0, phi=None):
    """``Phi_s(B, u) = (mean_B |V(grad u) - <V(grad u)>_B|^{2s})^{1/s}``."""
    if s < 1:
        raise ExcessError("excess exponent s must be >= 1")
    phi = phi or nfunc.make_catalog("quadratic")
    _require_inside(u, ball, 1.0)
    val, mean_V, energy_V = _phi_s(u, ball, s, phi)
    small = None
    if u.mesh.domain is None or ball.inside(u.mesh, 2.0):
        p2, _, e2 = _phi_s(u, ball.scaled(2.0), 1.0, phi)
        small = p2 / e2 if e2 > 0 else 0.0
    return ExcessReport(ball, float(s), val, mean_V, energy_V, small)


@dataclass(frozen=True)
class SmallnessResult:
    holds: bool
    margin: float
    vacuous: bool = False


def smallness_check(u, ball, delta, phi=None):
    """``Phi(2B, u) <= delta mean_{2B} |V(grad u)|^2``; ``margin`` is the ratio."""
    phi = phi or nfunc.make_catalog("quadratic")
    _require_inside(u, ball, 2.0)
    p2, _, e2 = _phi_s(u, ball.scaled(2.0), 1.0, phi)
    if e2 == 0.0:
        return SmallnessResult(True, 0.0, vacuous=True)
    ratio = p2 / e2
    return SmallnessResult(bool(ratio <= delta), float(ratio))


def affine_fit(u, ball, Q):
    """Offset ``b`` with ``<u - (Q x + b)>_ball = 0``."""
    reg = ball_region(u.mesh, ball)
    vals = reg.evaluate(u.mesh, u.values)
    pts = reg.evaluate(u.mesh, u.mesh.vertices)
    return reg.average(vals - pts @ np.asarray(Q).T)


def _ratio(num, den, scale=1.0):
    tiny = 1e-13 * max(scale, 1e-300)
    if den <= tiny:
        if num <= tiny:
            return 0.0
        log.warning("ratio with vanishing denominator: %.3g / %.3g", num, den)
        return float("inf")
    return float(num / den)


def caccioppoli_ratio(u, ball, Q, phi):
    """``int_B phi_|Q|(|grad u - Q|) / int_2B phi_|Q|(|u - q| / R)``.

    ``q(x) = Q x + b`` with ``b`` so that ``u - q`` has zero mean on 2B.
    A value of ``inf`` flags a violation (zero right side, positive left).
    """
    _require_inside(u, ball, 2.0)
    Q = np.asarray(Q, dtype=float)
    psi = nfunc.shift(phi, float(np.linalg.norm(Q)))
    mesh = u.mesh
    inner = ball_region(mesh, ball)
    outer = ball_region(mesh, ball.scaled(2.0))
    lhs = inner.integrate(psi(_norm(gradient(u)[inner.tri] - Q)))
    b = affine_fit(u, ball.scaled(2.0), Q)
    pts = outer.evaluate(mesh, mesh.vertices)
    z = outer.evaluate(mesh, u.values) - pts @ Q.T - b
    rhs = outer.integrate(psi(np.linalg.norm(z, axis=-1) / ball.radius))
    return _ratio(float(lhs), float(rhs), float(psi(np.array(np.abs(gradient(u)).max()))))


def poincare_ratio(w, ball, psi, alpha=1.0):
    """``mean_B psi(|w - <w>_B| / R) / (mean_B psi(|grad w|)^alpha)^{1/alpha}``."""
    if not 0 < alpha <= 1:
        raise ExcessError("alpha must lie in (0, 1]")
    mesh = w.mesh
    reg = ball_region(mesh, ball)
    vals = reg.evaluate(mesh, w.values)
    dev = np.linalg.norm(vals - reg.average(vals), axis=-1)
    lhs = reg.average(psi(dev / ball.radius))
    rhs = reg.average(psi(_norm(gradient(w)[reg.tri])) ** alpha) ** (1.0 / alpha)
    return _ratio(float(lhs), float(rhs))


def reverse_holder_ratio(u, ball, Q, s0=S0_DEFAULT, phi=None):
    """``(mean_B |V(grad u) - V(Q)|^{2 s0})^{1/s0} / mean_2B |V(grad u) - V(Q)|^2``."""
    if not s0 > 1:
        raise ExcessError("s0 must exceed 1")
    phi = phi or nfunc.make_catalog("quadratic")
    _require_inside(u, ball, 2.0)
    VQ = nfunc.v_map(phi, np.asarray(Q, dtype=float))
    inner = ball_region(u.mesh, ball)
    outer = ball_region(u.mesh, ball.scaled(2.0))
    _, Vi = _v_values(u, inner, phi)
    _, Vo = _v_values(u, outer, phi)
    lhs = inner.average(_norm(Vi - VQ) ** (2 * s0)) ** (1.0 / s0)
    rhs = outer.average(_norm(Vo - VQ) ** 2)
    return _ratio(float(lhs), float(rhs), float(_norm(VQ)) ** 2)


def _bump_fields(sub_mesh, ball, count, rng, N):
    """Smooth random fields vanishing on the sub-mesh boundary."""
    x = sub_mesh.vertices - np.asarray(ball.center)
    r2 = np.sum(x * x, axis=1) / ball.radius ** 2
    base = np.clip(1.0 - r2, 0.0, None)
    out = []
    for _ in range(count):
        k = rng.normal(4) * 3.0 / ball.radius
        phase = rng.uniform(2) * 2 * np.pi
        amp = rng.normal(N)
        wave = np.sin(x @ k[:2] + phase[0]) + np.cos(x @ k[2:] + phase[1])
        vals = (base * wave)[:, None] * amp
        vals[sub_mesh.boundary_nodes] = 0.0
        out.append(vals)
    return out


@dataclass(frozen=True)
class DefectResult:
    """Measured almost-harmonicity constant and its context."""

    eps: float
    Q: np.ndarray
    smallness: SmallnessResult | None
    basis_max: float = 0.0
    random_max: float = 0.0


def almost_harmonicity_defect(u, ball, f, delta=0.03, seed=0, n_random=RANDOM_TEST_FIELDS):
    """Measured ``eps`` in the almost A-harmonicity bound with ``Q = <grad u>_2B``.

    Test fields are all interior nodal basis fields of the sub-mesh of
    ``ball`` plus ``n_random`` smooth bump fields, each divided by its
    ``||grad xi||_inf``.
    """
    mesh = u.mesh
    _require_inside(u, ball, 2.0)
    outer = ball_region(mesh, ball.scaled(2.0))
    G = gradient(u)
    Q = outer.average(G[outer.tri])
    q = float(_norm(Q))
    if q == 0.0:
        raise ExcessError("mean gradient vanishes: degenerate case")
    small = smallness_check(u, ball, delta, f.phi)
    if not small.holds:
        warnings.warn(f"smallness fails on 2B (ratio {small.margin:.3g} > {delta})")
    spread = outer.average(_norm(G[outer.tri] - Q))
    den = float(f.phi.second(np.array(q))) * spread
    # affine fields leave ~1e-14 relative gradient noise
    if spread <= 1e-10 * q:
        return DefectResult(0.0, Q, small)
    sub = submesh(mesh, ball)
    sm = sub.mesh
    area = sm.area
    H = f.D2f(Q)
    flux = np.einsum("iajb,tjb->tia", H, G[sub.triangle_map] - Q)
    load = flux_load(sm, flux) / area
    interior = np.ones(sm.n_vertices, dtype=bool)
    interior[sm.boundary_nodes] = False
    gmax = np.zeros(sm.n_vertices)
    np.maximum.at(gmax, sm.triangles.ravel(), np.linalg.norm(sm.grad_basis, axis=2).ravel())
    basis = float((np.abs(load[interior]) / gmax[interior, None]).max()) if interior.any() else 0.0
    rng = SplitMix64(seed)
    rand = 0.0
    for vals in _bump_fields(sm, ball, n_random, rng, u.components):
        xi = FieldP1(sm, vals)
        gx = gradient(xi)
        lin = float(np.einsum("t,tia,tia->", sm.areas, flux, gx)) / area
        rand = max(rand, abs(lin) / float(_norm(gx).max()))
    eps = max(basis, rand) / den
    return DefectResult(float(eps), Q, small, basis / den, rand / den)


@dataclass(frozen=True)
class ClosenessResult:
    lhs: float
    rhs: float
    Q: np.ndarray

    @property
    def ratio(self):
        return self.lhs / self.rhs if self.rhs > 0 else 0.0


def approximation_closeness(u, ball, f, psi=None, s=S0_DEFAULT):
    """Closeness of ``z = u - q`` to its A-harmonic approximation on ``ball``.

    ``Q = <grad u>_2B``, ``A = D2f(Q) / phi''(|Q|)`` and ``psi`` defaults
    to the shifted function ``phi_|Q|``.  ``lhs`` is
    ``mean_B psi(|w| / r) + mean_B psi(|grad w|)`` with ``w = z - h``;
    ``rhs`` is ``(mean_B psi(|grad z|)^s)^{1/s} + mean_2B psi(|grad z|)``.
    """
    mesh = u.mesh
    _require_inside(u, ball, 2.0)
    outer = ball_region(mesh, ball.scaled(2.0))
    G = gradient(u)
    Q = outer.average(G[outer.tri])
    if psi is None:
        psi = nfunc.shift(f.phi, float(_norm(Q)))
    A = tensor_from_integrand(f, Q)
    b = affine_fit(u, ball.scaled(2.0), Q)
    z = FieldP1(mesh, u.values - mesh.vertices @ Q.T - b)
    res = approximate(A, z, ball)
    sm = res.sub.mesh
    reg = domain_region(sm)
    wv = np.linalg.norm(reg.evaluate(sm, res.w.values), axis=-1)
    gw = _norm(gradient(res.w))
    lhs = reg.average(psi(wv / ball.radius)) + float(sm.areas @ psi(gw)) / sm.area
    inner = ball_region(mesh, ball)
    gz_in = _norm(G[inner.tri] - Q)
    gz_out = _norm(G[outer.tri] - Q)
    rhs = inner.average(psi(gz_in) ** s) ** (1.0 / s) + outer.average(psi(gz_out))
    return ClosenessResult(float(lhs), float(rhs), Q)


@dataclass
class DecayCurve:
    center: tuple
    radii: np.ndarray
    beta: float
    values: np.ndarray
    fitted_slope: float
    tau_ratios: dict = field(default_factory=dict)
    flagged: bool = False
    dropped: list = field(default_factory=list)


def _valid_radii(u, center, radii):
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) >= 0):
        raise ExcessError("radii must be strictly decreasing")
    keep, dropped = [], []
    for r in radii:
        b = Ball(center, r)
        if u.mesh.domain is not None and not b.inside(u.mesh, 2.0):
            raise ExcessError(f"2B for {b} leaves the domain")
        (keep if r >= MIN_RADIUS_CELLS * u.mesh.h * (1 - 1e-9) else dropped).append(r)
    if dropped:
        warnings.warn(f"radii {dropped} are below {MIN_RADIUS_CELLS}h and were dropped")
    return np.array(keep), dropped


def decay_curve(u, center, radii, beta=0.5, phi=None, taus=(0.5, 0.25)):
    """Excess along shrinking balls and its log-log slope.

    ``tau_ratios[tau] = Phi(tau B) / Phi(2B)`` for the base ball ``B`` of
    radius ``radii[0] / 2``.
    """
    phi = phi or nfunc.make_catalog("quadratic")
    radii, dropped = _valid_radii(u, center, radii)
    V_tri = nfunc.v_map(phi, gradient(u))
    values = np.array([_phi_s(u, Ball(center, r), 1.0, phi, V_tri)[0] for r in radii])
    scale = max(float(_phi_s(u, Ball(center, radii[0]), 1.0, phi)[2]), 1e-300) if len(radii) else 1.0
    flagged = len(radii) < 2 or np.any(values <= 1e-14 * scale)
    if flagged:
        slope = float("nan")
    else:
        slope = float(np.polyfit(np.log(radii), np.log(values), 1)[0])
    tau_ratios = {}
    if len(radii):
        base = Ball(center, radii[0] / 2)
        phi2 = values[0]
        for tau in taus:
            r = base.radius * tau
            if r >= MIN_RADIUS_CELLS * u.mesh.h * (1 - 1e-9):
                tau_ratios[tau] = _ratio(_phi_s(u, Ball(center, r), 1.0, phi)[0], phi2, scale)
    return DecayCurve(tuple(center), radii, float(beta), values, slope,
                      tau_ratios, bool(flagged), dropped)


@dataclass(frozen=True)
class ScanPoint:
    x: float
    y: float
    proxy: float
    margin: float


def regular_scan(u, grid_step, radii, phi=None, delta=0.03):
    """Minimum excess over ``radii`` at every grid center with ``2B`` inside.

    ``margin`` is the smallness ratio at the largest radius.
    """
    phi = phi or nfunc.make_catalog("quadratic")
    radii = np.sort(np.asarray(radii, dtype=float))[::-1]
    L = u.mesh.domain
    if L is None:
        raise ExcessError("regular_scan needs a square-domain mesh")
    reach = L - 2 * radii[0]
    if reach < 0:
        raise ExcessError("largest radius too big for the domain")
    n = int(np.floor(reach / grid_step + 1e-9))
    coords = grid_step * np.arange(-n, n + 1)
    V_tri = nfunc.v_map(phi, gradient(u))
    points = []
    for x in coords:
        for y in coords:
            vals = [_phi_s(u, Ball((x, y), r), 1.0, phi, V_tri)[0] for r in radii]
            p2, _, e2 = _phi_s(u, Ball((x, y), 2 * radii[0]), 1.0, phi, V_tri)
            margin = p2 / e2 if e2 > 0 else 0.0
            points.append(ScanPoint(float(x), float(y), float(min(vals)), float(margin)))
    return points


def mean_comparison_ratio(u, ball, phi=None):
    """``mean |V - <V>|^2 / mean |V - V(<grad u>)|^2`` (at most 1)."""
    phi = phi or nfunc.make_catalog("quadratic")
    reg = ball_region(u.mesh, ball)
    G, V = _v_values(u, reg, phi)
    lhs = reg.average(_norm(V - reg.average(V)) ** 2)
    rhs = reg.average(_norm(V - nfunc.v_map(phi, reg.average(G))) ** 2)
    scale = reg.average(_norm(V) ** 2)
    if rhs <= 1e-20 * max(scale, 1e-300):
        return 1.0
    return float(lhs / rhs)


@dataclass(frozen=True)
class NondegeneracyResult:
    r1: float
    r2: float
    r3: float
    smallness: float


def nondegeneracy_bounds(u, ball, delta, phi=None):
    """Ratios of the mean-value bounds; ``r1, r2 <= 1`` under smallness on ``B``."""
    phi = phi or nfunc.make_catalog("quadratic")
    reg = ball_region(u.mesh, ball)
    G, V = _v_values(u, reg, phi)
    Gm = reg.average(G)
    vm2 = float(_norm(nfunc.v_map(phi, Gm)) ** 2)
    if float(_norm(Gm)) == 0.0:
        raise ExcessError("mean gradient vanishes: degenerate case")
    energy_V = reg.average(_norm(V) ** 2)
    phi_b = reg.average(_norm(V - reg.average(V)) ** 2)
    r1 = energy_V / (4 * vm2)
    r2 = phi_b / (4 * delta * vm2)
    r3 = reg.average(_norm(G - Gm)) / float(_norm(Gm))
    small = phi_b / energy_V if energy_V > 0 else 0.0
    if small > delta:
        warnings.warn(f"smallness fails on B (ratio {small:.3g} > {delta})")
    return NondegeneracyResult(float(r1), float(r2), float(r3), float(small))


@dataclass(frozen=True)
class ShiftedMeanResult:
    """``ratio`` compares with the mean over 2B, ``jensen`` over B itself."""

    ratio: float
    jensen: float


def shifted_mean_bound(u, ball, Q, phi):
    """``mean_B phi_|Q|(|grad u - Q|) / phi_|Q|(mean_2B |grad u - Q|)``."""
    _require_inside(u, ball, 2.0)
    Q = np.asarray(Q, dtype=float)
    psi = nfunc.shift(phi, float(_norm(Q)))
    G = gradient(u)
    inner = ball_region(u.mesh, ball)
    outer = ball_region(u.mesh, ball.scaled(2.0))
    dev_in = _norm(G[inner.tri] - Q)
    lhs = inner.average(psi(dev_in))
    m2 = outer.average(_norm(G[outer.tri] - Q))
    m1 = inner.average(dev_in)
    ratio = _ratio(float(lhs), float(psi(np.array(m2))))
    jensen = _ratio(float(lhs), float(psi(np.array(m1))))
    return ShiftedMeanResult(ratio, jensen)
