"""Measurement routines behind the CLI stages and the acceptance suite.

Each function returns plain measurements; thresholds live with the
callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nfunc
from .aharmonic import (harmonic_approximation, identity_tensor, interior_decay_probe,
                        solve_dirichlet_div, tensor_from_integrand)
from .corpus import decay_fields, kink_field, perturbed_affine, spike_corpus
from .excess import (almost_harmonicity_defect, caccioppoli_ratio, decay_curve,
                     regular_scan, reverse_holder_ratio, smallness_check)
from .fespace import Ball, FieldP1, ball_region, build_mesh, domain_region, gradient
from .liptrunc import truncate, verify_truncation
from .minimize import DirichletProblem, boundary_field, make_radial, minimize
from .rng import SplitMix64

__all__ = [
    "ACCEPTANCE_PHIS", "catalog_phi", "nfunc_suite", "hammer_suite", "shift_suite",
    "solver_convergence", "probe_tensors", "decay_probe_suite", "truncation_suite",
    "caccioppoli_suite", "pipeline", "kink_scan", "classify_kink",
]

ACCEPTANCE_PHIS = {
    "t^1.5/1.5": ("power", 1.5),
    "t^2/2": ("quadratic", 2.0),
    "t^3/3": ("power", 3.0),
    "t^4/4": ("power", 4.0),
    "t^2log(e+t)": ("power_log", 2.0),
}


def catalog_phi(name):
    kind, p = ACCEPTANCE_PHIS[name]
    return nfunc.make_catalog(kind, p)


def _log_uniform(rng, lo, hi, n):
    return 10.0 ** rng.uniform(n, np.log10(lo), np.log10(hi))


@dataclass
class NFuncMeasurements:
    young_min: float
    young_equality_max: float
    biconjugation_max: float
    pre_inequalities: bool
    conj_ratio_lo: float
    conj_ratio_hi: float
    bracket: tuple
    characteristics: nfunc.Characteristics
    samples: int


def nfunc_suite(phi, samples=10_000, seed=0):
    """Young, biconjugation and ``phi*(phi')`` checks on seeded samples.

    Young gaps are reported relative to ``phi(t) + phi*(s)``.
    """
    rng = SplitMix64(seed)
    lo, hi = phi.valid_range
    conj = nfunc.conjugate(phi)
    t = _log_uniform(rng, lo, hi, samples)
    s = _log_uniform(rng, *conj.valid_range, samples)
    pt, cs = phi(t), conj(s)
    young = (pt + cs - t * s) / (pt + cs)
    d = phi.deriv(t)
    cd = conj(d)
    eq = np.abs(pt + cd - t * d) / (pt + cd)
    bi = nfunc.conjugate(conj)
    biconj = np.abs(bi(t) - pt) / pt
    half = 0.5 * t
    pre = bool(np.all(half * phi.deriv(half) <= pt) and np.all(pt <= t * d))
    ch = nfunc.characteristics_estimate(phi, 400)
    ratio = cd / pt
    bracket = (0.5 / ch.ratio_hi, 2.0 / ch.ratio_lo)
    return NFuncMeasurements(float(young.min()), float(eq.max()), float(biconj.max()), pre,
                             float(ratio.min()), float(ratio.max()), bracket, ch, samples)


def _random_matrices(rng, n, norms):
    M = rng.normal((n, 2, 2))
    M /= nfunc.matrix_norm(M)[:, None, None]
    return M * norms[:, None, None]


@dataclass
class HammerMeasurements:
    lo: np.ndarray
    hi: np.ndarray

    @property
    def spread(self):
        return self.hi / self.lo


def hammer_suite(phi, pairs=10_000, seed=0):
    """Extremes of the three ratios over pairs with ``|P|/|Q|`` in ``[1e-3, 1e3]``."""
    rng = SplitMix64(seed)
    qn = _log_uniform(rng, 1e-2, 1e2, pairs)
    ratio = _log_uniform(rng, 1e-3, 1e3, pairs)
    Q = _random_matrices(rng, pairs, qn)
    # angle between P and Q uniform in [0, pi]: isotropic directions in R^4
    # almost never come close to the parallel and antipodal extremes
    theta = rng.uniform(pairs, 0.0, np.pi)
    other = rng.normal((pairs, 2, 2))
    qhat = Q / qn[:, None, None]
    other -= np.sum(other * qhat, axis=(1, 2))[:, None, None] * qhat
    other /= nfunc.matrix_norm(other)[:, None, None]
    P = (np.cos(theta)[:, None, None] * qhat
         + np.sin(theta)[:, None, None] * other) * (qn * ratio)[:, None, None]
    r = np.stack(nfunc.hammer_ratios(phi, P, Q))
    return HammerMeasurements(r.min(axis=1), r.max(axis=1))


@dataclass
class ShiftMeasurements:
    c_large: float
    c_small: float
    c_scaling: float

    @property
    def c(self):
        return max(self.c_large, self.c_small)


def shift_suite(phi, n=50, lo=1e-3, hi=1e3, scales=np.linspace(0.1, 1.0, 10)):
    """Shifted-function asymptotics over an ``n x n`` log grid of ``(a, t)``."""
    a_grid = np.geomspace(lo, hi, n)
    t_grid = np.geomspace(lo, hi, n)
    c_large = c_small = c_scal = 1.0
    for a in a_grid:
        pa = nfunc.shift(phi, float(a))
        vals = pa(t_grid)
        big = t_grid >= a
        if big.any():
            r = vals[big] / phi(t_grid[big])
            c_large = max(c_large, float(r.max()), float(1 / r.min()))
        small = ~big
        if small.any():
            ts = t_grid[small]
            r = vals[small] / (phi.second(np.array(a)) * ts * ts)
            c_small = max(c_small, float(r.max()), float(1 / r.min()))
            st = np.outer(scales, ts)
            r = pa(st) / (scales[:, None] ** 2 * vals[small])
            c_scal = max(c_scal, float(r.max()))
    return ShiftMeasurements(c_large, c_small, c_scal)


def _exact_grad_error(mesh, uh):
    """L^2 error of ``grad uh`` against the gradient of ``(x^2-y^2, 2xy)``."""
    reg = domain_region(mesh)
    pts = reg.evaluate(mesh, mesh.vertices)
    x, y = pts.T
    ex = np.empty((len(pts), 2, 2))
    ex[:, 0, 0], ex[:, 0, 1] = 2 * x, -2 * y
    ex[:, 1, 0], ex[:, 1, 1] = 2 * y, 2 * x
    G = gradient(uh)[reg.tri]
    return float(np.sqrt(reg.integrate(np.sum((G - ex) ** 2, axis=(1, 2)))))


def solver_convergence(hs=(1 / 16, 1 / 32, 1 / 64), L=1.0):
    """Gradient errors of the identity-tensor solve with harmonic data."""
    A = identity_tensor(2)
    errors = []
    for h in hs:
        mesh = build_mesh(L, h)
        data = boundary_field(mesh, "harmonic-poly")
        lift = np.zeros_like(data.values)
        lift[mesh.boundary_nodes] = data.values[mesh.boundary_nodes]
        lift = FieldP1(mesh, lift)
        w = solve_dirichlet_div(A, -A.apply(gradient(lift)), mesh)
        errors.append(_exact_grad_error(mesh, w + lift))
    errors = np.array(errors)
    return errors, errors[:-1] / errors[1:]


def probe_tensors():
    """The identity and the linearization of ``t^4/4`` at a rank-one ``Q``."""
    f4 = make_radial(nfunc.make_catalog("power", 4.0))
    return {"identity": identity_tensor(2),
            "p4-radial": tensor_from_integrand(f4, np.array([[1.0, 0.0], [0.0, 0.0]]))}


def decay_probe_suite(h=1 / 64, taus=(0.5, 0.25, 0.125), base_radius=0.9,
                      probe_radius=0.5, count=5, seed=1):
    """Probe ratios per tensor and corpus field: ``{name: array(count, len(taus))}``."""
    mesh = build_mesh(1.0, h)
    out = {}
    for name, A in probe_tensors().items():
        rows = []
        for u in decay_fields(mesh, count, seed):
            hfield = harmonic_approximation(A, u, Ball((0.0, 0.0), base_radius))
            rows.append([interior_decay_probe(hfield, Ball((0.0, 0.0), probe_radius), t)
                         for t in taus])
        out[name] = np.array(rows)
    return out


@dataclass
class TruncationRow:
    case: str
    psi: str
    m0: int
    lam: float
    e1: float
    e2: float
    e3: float
    pigeonhole_sum: float
    bad_triangles: int
    idempotent: bool


TRUNCATION_PSIS = {"t^1.5": 1.5, "t^2": 2.0, "t^3": 3.0}


def truncation_suite(h=1 / 32, m0s=(4, 8, 16), gamma=1.0, psis=None, L=1.0):
    """Truncation constants over the spike corpus; ``gamma=None`` picks it per field."""
    mesh = build_mesh(L, h)
    psis = TRUNCATION_PSIS if psis is None else {f"t^{p:g}": p for p in psis}
    rows = []
    for case, w in spike_corpus(mesh).items():
        for pname, p in psis.items():
            psi = nfunc.make_catalog("power", p)
            for m0 in m0s:
                res = truncate(w, psi, gamma, m0)
                c = verify_truncation(w, res, psi)
                again = truncate(res.w_lambda, psi, res.lam, m0)
                idem = (len(again.bad_set) == 0
                        and np.array_equal(again.w_lambda.values, res.w_lambda.values))
                rows.append(TruncationRow(case, pname, m0, res.lam, c.e1, c.e2, c.e3,
                                          c.pigeonhole_sum, len(res.bad_set), bool(idem)))
    return rows


def _minimizer(p, h, amp, profile="sine", L=1.0):
    phi = nfunc.make_catalog("quadratic") if p == 2 else nfunc.make_catalog("power", p)
    f = make_radial(phi)
    mesh = build_mesh(L, h)
    data = perturbed_affine(mesh, amp=amp, profile=profile)
    return f, minimize(DirichletProblem(f, mesh, data))


def caccioppoli_suite(ps=(2, 3), hs=(1 / 32, 1 / 64), amp=0.05, radius=0.25, s0=1.25):
    """``{p: {h: (caccioppoli, reverse_holder)}}`` at the origin."""
    out = {}
    ball = Ball((0.0, 0.0), radius)
    for p in ps:
        out[p] = {}
        for h in hs:
            f, u = _minimizer(p, h, amp)
            outer = ball_region(u.mesh, ball.scaled(2.0))
            Q = outer.average(gradient(u)[outer.tri])
            out[p][h] = (caccioppoli_ratio(u, ball, Q, f.phi),
                         reverse_holder_ratio(u, ball, Q, s0, f.phi))
    return out


@dataclass
class PipelineResult:
    p: float
    smallness: object
    defect: float
    curve: object
    extra: dict = field(default_factory=dict)


def pipeline(p=2, h=1 / 160, amp=0.01, radii=(0.4, 0.2, 0.1, 0.05), beta=0.5, delta=0.03):
    """Smallness, defect and decay for a minimizer with perturbed affine data.

    Smallness and the defect are evaluated on the base ball of radius
    ``radii[0] / 2``, whose double is the largest ball of the curve.
    """
    f, u = _minimizer(p, h, amp)
    base = Ball((0.0, 0.0), radii[0] / 2)
    small = smallness_check(u, base, delta, f.phi)
    defect = almost_harmonicity_defect(u, base, f, delta)
    curve = decay_curve(u, (0.0, 0.0), radii, beta, f.phi)
    return PipelineResult(p, small, defect.eps, curve)


@dataclass
class ScanResult:
    points: list
    offset: float
    kink_min: float
    smooth_median: float
    smooth_max: float
    radii: tuple


def kink_scan(h=1 / 128, grid_step=0.1, radii=(0.25, 0.125, 0.0625), offset=0.03, seed=0):
    """Regular-point scan of a field with a gradient kink along ``x = offset``.

    Centers within ``r_min / 2`` of the kink count as on it; centers
    farther than ``r_min + 2h`` form the smooth region.
    """
    mesh = build_mesh(1.0, h)
    u = kink_field(mesh, offset=offset, seed=seed)
    return classify_kink(regular_scan(u, grid_step, radii), offset, radii, mesh.h)


def classify_kink(points, offset, radii, h):
    """Split scan points into those on the kink ``x = offset`` and the smooth region."""
    x = np.array([pt.x for pt in points])
    proxy = np.array([pt.proxy for pt in points])
    dist = np.abs(x - offset)
    r_min = min(radii)
    on = dist <= r_min / 2
    smooth = dist >= r_min + 2 * h
    if not on.any() or not smooth.any():
        raise ValueError("scan grid misses the kink line or the smooth region")
    med = float(np.median(proxy[smooth]))
    return ScanResult(points, offset, float(proxy[on].min()), med, float(proxy[smooth].max()),
                      tuple(radii))
