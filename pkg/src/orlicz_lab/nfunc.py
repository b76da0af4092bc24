"""N-functions and their calculus.

An :class:`NFunction` bundles vectorized evaluators for ``phi``, ``phi'``
and ``phi''``.  Closed-form members come from :func:`make_catalog`; the
derived members (shifted functions, the complementary function and the
associated ``psi``) know their derivative exactly and obtain values by
adaptive Gauss-Legendre quadrature, tabulated once on a logarithmic grid.

Matrix arguments are plain arrays whose two trailing axes hold the
``N x n`` matrix; everything broadcasts over the leading axes.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "NFunction", "Characteristics", "GrowthEnvelope",
    "NFunctionError", "QuadratureError", "EnvelopeError",
    "make_catalog", "parse_catalog_spec", "format_catalog_spec",
    "shift", "conjugate", "associated_psi", "shifted_value",
    "a_map", "v_map", "matrix_norm",
    "characteristics_estimate", "type_decomposition", "envelope_constant",
    "young_gap", "hammer_ratios", "segment_average_ratio",
]

DEFAULT_RANGE = (1e-6, 1e6)
QUAD_RTOL = 1e-9
BISECTION_ITERS = 80
GRID_PER_DECADE = 32

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


class NFunctionError(ValueError):
    """Raised when a function violates the N-function requirements."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach its tolerance."""

    def __init__(self, message, intervals=()):
        super().__init__(message)
        self.intervals = list(intervals)


class EnvelopeError(RuntimeError):
    """The growth envelope of a type decomposition failed on samples."""

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


def _gauss_legendre(n):
    if n not in _GL_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = ((x + 1.0) / 2.0, w / 2.0)
    return _GL_CACHE[n]


def _gl_integrate(f, a, b, n):
    """Integrate ``f`` over each ``[a_i, b_i]`` with an ``n``-point rule."""
    x, w = _gauss_legendre(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    nodes = a + (b - a) * x
    return ((b - a) * w * f(nodes)).sum(axis=-1)


def _adaptive_intervals(f, a, b, rtol=QUAD_RTOL, max_depth=40):
    """Integral of ``f`` over every interval ``[a_i, b_i]``.

    Each interval is bisected until a 10-point rule and its two-halves
    refinement agree to ``rtol``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    total = np.zeros(a.shape)
    owner = np.arange(a.size)
    lo, hi = a.ravel().copy(), b.ravel().copy()
    for _ in range(max_depth):
        mid = 0.5 * (lo + hi)
        coarse = _gl_integrate(f, lo, hi, 10)
        fine = _gl_integrate(f, lo, mid, 10) + _gl_integrate(f, mid, hi, 10)
        ok = np.abs(fine - coarse) <= rtol * np.abs(fine) + 1e-300
        np.add.at(total.ravel(), owner[ok], fine[ok])
        if ok.all():
            return total
        owner = np.concatenate([owner[~ok], owner[~ok]])
        lo, hi = (np.concatenate([lo[~ok], mid[~ok]]),
                  np.concatenate([mid[~ok], hi[~ok]]))
    raise QuadratureError(
        f"adaptive quadrature did not converge on {lo.size} subintervals",
        intervals=list(zip(lo[:10].tolist(), hi[:10].tolist())))


class _Diagnostics:
    """Counts evaluations that fell outside the tabulated range."""

    def __init__(self):
        self.clamped = 0


class _QuadTable:
    """Cumulative integral of a derivative on a log grid.

    Off-grid values add a 5-point Gauss-Legendre integral from the
    nearest node below.  Beyond the table ends the value is continued as
    the local power law, and the evaluation is counted as clamped.
    """

    def __init__(self, deriv, t_min, t_max, diagnostics):
        decades = math.log10(t_max / t_min)
        n = max(int(math.ceil(decades * GRID_PER_DECADE)), 8)
        self.grid = np.geomspace(t_min, t_max, n + 1)
        self.deriv = deriv
        self.diag = diagnostics
        self.lo_exp = self._local_exponent(t_min, 1.0 / 1.01)
        self.hi_exp = self._local_exponent(t_max, 1.01)
        head = t_min * deriv(np.array([t_min]))[0] / (self.lo_exp + 1.0)
        pieces = _adaptive_intervals(deriv, self.grid[:-1], self.grid[1:])
        self.cum = np.concatenate([[head], head + np.cumsum(pieces)])

    def _local_exponent(self, t, factor):
        d = self.deriv(np.array([t, t * factor]))
        if d[0] <= 0 or d[1] <= 0:
            return 1.0
        return math.log(d[1] / d[0]) / math.log(factor)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        g = self.grid
        inside = (t >= g[0]) & (t <= g[-1])
        if inside.any():
            ti = t[inside]
            k = np.clip(np.searchsorted(g, ti, side="right") - 1, 0, g.size - 2)
            out[inside] = self.cum[k] + _gl_integrate(self.deriv, g[k], ti, 5)
        below = (t > 0) & (t < g[0])
        above = t > g[-1]
        if below.any():
            out[below] = self.cum[0] * (t[below] / g[0]) ** (self.lo_exp + 1.0)
        if above.any():
            out[above] = self.cum[-1] * (t[above] / g[-1]) ** (self.hi_exp + 1.0)
        self.diag.clamped += int(below.sum() + above.sum())
        return out


@dataclass(frozen=True, eq=False)
class NFunction:
    """Evaluator bundle for an N-function.

    ``value``, ``deriv`` and ``second`` accept arrays.  ``valid_range`` is
    the interval on which tabulated quantities are trusted; ``kind`` is
    one of ``closed-form``, ``shifted``, ``conjugate-numeric`` or
    ``psi-derived``.
    """

    value: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    second: Callable[[np.ndarray], np.ndarray]
    kind: str
    valid_range: tuple[float, float] = DEFAULT_RANGE
    label: str = ""
    params: dict = field(default_factory=dict)
    diagnostics: _Diagnostics = field(default_factory=_Diagnostics, repr=False)

    def __call__(self, t):
        return self.value(np.asarray(t, dtype=float))

    def sample_grid(self, count):
        lo, hi = self.valid_range
        return np.geomspace(lo, hi, count)

    def check(self, samples=257, rtol=1e-6):
        """Sampled check of the N-function invariants; raises on failure."""
        t = self.sample_grid(samples)
        if abs(float(self.value(np.array([0.0]))[0])) > 0:
            raise NFunctionError(f"{self.label}: phi(0) != 0")
        d = self.deriv(t)
        if np.any(d <= 0):
            raise NFunctionError(f"{self.label}: phi' not positive")
        if np.any(np.diff(d) < -1e-12 * np.abs(d[1:])):
            raise NFunctionError(f"{self.label}: phi' decreasing")
        s, u = t[:-1], t[1:]
        mid = self.value(0.5 * (s + u))
        avg = 0.5 * (self.value(s) + self.value(u))
        if np.any(mid > avg * (1 + 1e-10)):
            raise NFunctionError(f"{self.label}: midpoint convexity fails")
        stride = max(1, samples // 16)
        probe = t[::stride]
        lo = probe[:-1]
        exact = self.value(probe[1:]) - self.value(lo)
        quad = _adaptive_intervals(self.deriv, lo, probe[1:])
        if np.any(np.abs(exact - quad) > rtol * np.abs(quad) + 1e-300):
            raise NFunctionError(f"{self.label}: value and deriv disagree")


def _closed(value, deriv, second, label, params):
    return NFunction(value=value, deriv=deriv, second=second,
                     kind="closed-form", label=label, params=params)


def make_catalog(kind="power", p=2.0):
    """Closed-form N-function from the test catalog.

    ``power``: ``t**p / p``; ``power_log``: ``t**p * log(e + t)``;
    ``quadratic``: ``t**2 / 2``.
    """
    if kind == "quadratic":
        return _closed(lambda t: 0.5 * t * t, lambda t: 1.0 * t,
                       lambda t: np.ones_like(t), "t^2/2",
                       {"kind": "quadratic", "p": 2.0})
    p = float(p)
    if not p > 1.0:
        raise NFunctionError(f"exponent p={p} must exceed 1")
    if kind == "power":
        return _closed(lambda t: t ** p / p, lambda t: t ** (p - 1.0),
                       lambda t: (p - 1.0) * t ** (p - 2.0), f"t^{p:g}/{p:g}",
                       {"kind": "power", "p": p})
    if kind == "power_log":
        def value(t):
            return t ** p * np.log(np.e + t)

        def deriv(t):
            return p * t ** (p - 1.0) * np.log(np.e + t) + t ** p / (np.e + t)

        def second(t):
            e = np.e + t
            return (p * (p - 1.0) * t ** (p - 2.0) * np.log(e)
                    + 2.0 * p * t ** (p - 1.0) / e - t ** p / e ** 2)

        return _closed(value, deriv, second, f"t^{p:g}log(e+t)",
                       {"kind": "power_log", "p": p})
    raise NFunctionError(f"unknown catalog kind {kind!r}")


def parse_catalog_spec(text):
    """Parse ``kind=power, p=3.0`` (commas or newlines) into an N-function."""
    items = {}
    for part in text.replace("\n", ",").split(","):
        if part.strip():
            key, _, val = part.partition("=")
            items[key.strip()] = val.strip()
    kind = items.get("kind", "power")
    return make_catalog(kind, float(items.get("p", 2.0)))


def format_catalog_spec(phi):
    return ", ".join(f"{k}={v}" for k, v in phi.params.items())


def _tabulated(deriv, second, kind, t_range, label, params):
    diag = _Diagnostics()
    table = _QuadTable(deriv, t_range[0], t_range[1], diag)
    return NFunction(value=table, deriv=deriv, second=second, kind=kind,
                     valid_range=t_range, label=label, params=params,
                     diagnostics=diag)


@functools.lru_cache(maxsize=512)
def shift(phi, a):
    """Shifted N-function with ``phi_a'(t) = phi'(a + t) t / (a + t)``."""
    a = float(a)
    if a < 0:
        raise NFunctionError("shift must be non-negative")
    if a == 0.0:
        deriv, second = phi.deriv, phi.second
    else:
        def deriv(t):
            return phi.deriv(a + t) * t / (a + t)

        def second(t):
            s = a + t
            return phi.second(s) * t / s + phi.deriv(s) * a / (s * s)

    return _tabulated(deriv, second, "shifted", phi.valid_range,
                      f"({phi.label})_{a:g}", {"base": phi.label, "a": a})


def _invert_increasing(f, s, lo0, hi0, iters=BISECTION_ITERS):
    """Solve ``f(x) = s`` for increasing ``f`` by bisection in log space.

    The bracket starts at ``[lo0, hi0]`` and grows geometrically until it
    encloses the root.  Zero maps to zero.
    """
    s = np.asarray(s, dtype=float)
    flat = s.ravel()
    out = np.zeros(flat.shape)
    pos = flat > 0
    target = flat[pos]
    lo = np.full(target.shape, float(lo0))
    hi = np.full(target.shape, float(hi0))
    for _ in range(4000):
        bad = f(lo) > target
        if not bad.any():
            break
        lo[bad] *= 0.5
    for _ in range(4000):
        bad = f(hi) < target
        if not bad.any():
            break
        hi[bad] *= 2.0
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        up = f(mid) >= target
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if np.all(hi - lo <= 4e-16 * hi):
            break
    out[pos] = 0.5 * (lo + hi)
    return out.reshape(s.shape)


class _Inverse:
    """Vectorized inverse of an increasing derivative (for conjugation)."""

    def __init__(self, f, lo, hi):
        self.f, self.lo, self.hi = f, lo, hi
        self.grid = np.geomspace(lo, hi, 16 * int(math.log10(hi / lo) + 1))
        self.values = f(self.grid)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        flat = s.ravel()
        out = np.zeros(flat.shape)
        k = np.searchsorted(self.values, flat)
        inner = (k > 0) & (k < self.grid.size) & (flat > 0)
        if inner.any():
            out[inner] = _bisect_bracketed(
                self.f, flat[inner], self.grid[k[inner] - 1], self.grid[k[inner]])
        outer = ~inner & (flat > 0)
        if outer.any():
            out[outer] = _invert_increasing(self.f, flat[outer], self.lo, self.hi)
        return out.reshape(s.shape)


def _bisect_bracketed(f, target, lo, hi, iters=BISECTION_ITERS):
    lo, hi = lo.copy(), hi.copy()
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        up = f(mid) >= target
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if np.all(hi - lo <= 4e-16 * hi):
            break
    return 0.5 * (lo + hi)


@functools.lru_cache(maxsize=128)
def conjugate(phi):
    """Complementary N-function ``phi*(t) = int_0^t (phi')^{-1}``."""
    lo, hi = phi.valid_range
    t = np.geomspace(lo, hi, 513)
    d = phi.deriv(t)
    bad = np.nonzero(np.diff(d) <= 0)[0]
    if bad.size:
        i = int(bad[0])
        raise NFunctionError(
            f"{phi.label}: phi' not strictly increasing between "
            f"t={t[i]:.6g} and t={t[i + 1]:.6g}")
    inverse = _Inverse(phi.deriv, lo, hi)

    def second(s):
        return 1.0 / phi.second(inverse(s))

    s_range = (float(d[0]), float(d[-1]))
    return _tabulated(inverse, second, "conjugate-numeric", s_range,
                      f"({phi.label})*", {"base": phi.label})


@functools.lru_cache(maxsize=128)
def associated_psi(phi):
    """N-function with ``psi'(t) = sqrt(phi'(t) t)``."""
    def deriv(t):
        return np.sqrt(phi.deriv(t) * t)

    def second(t):
        d = phi.deriv(t)
        root = np.sqrt(d * t)
        return np.where(root > 0, (phi.second(t) * t + d) / (2.0 * np.where(root > 0, root, 1.0)), 0.0)

    return _tabulated(deriv, second, "psi-derived", phi.valid_range,
                      f"psi({phi.label})", {"base": phi.label})


def shifted_value(phi, a, t, pieces=48, nodes=6):
    """``phi_a(t)`` for arrays of shifts ``a`` and arguments ``t``.

    Direct quadrature on dyadic pieces ``[t 2^-j-1, t 2^-j]`` of ``[0, t]``.
    Used where every sample carries its own shift.
    """
    a, t = np.broadcast_arrays(np.asarray(a, float), np.asarray(t, float))
    shape = a.shape
    a, t = a.ravel(), t.ravel()
    j = np.arange(pieces)
    hi = t[:, None] * 0.5 ** j
    lo = 0.5 * hi
    x, w = _gauss_legendre(nodes)
    s = lo[..., None] + (hi - lo)[..., None] * x
    aa = a[:, None, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        integrand = np.where(s > 0, phi.deriv(aa + s) * s / np.where(s > 0, aa + s, 1.0), 0.0)
    out = ((hi - lo)[..., None] * w * integrand).sum(axis=(-1, -2))
    return out.reshape(shape)


def matrix_norm(Q):
    """Frobenius norm over the two trailing axes, scaled against under/overflow."""
    Q = np.asarray(Q, dtype=float)
    m = np.max(np.abs(Q), axis=(-2, -1))
    safe = np.where(m > 0, m, 1.0)
    return m * np.sqrt(np.sum(np.square(Q / safe[..., None, None]), axis=(-2, -1)))


def _radial_map(profile, Q):
    Q = np.asarray(Q, dtype=float)
    r = matrix_norm(Q)
    safe = np.where(r > 0, r, 1.0)
    scale = np.where(r > 0, profile(safe) / safe, 0.0)
    return scale[..., None, None] * Q


def a_map(phi, Q):
    """``A(Q) = phi'(|Q|) Q / |Q|`` with ``A(0) = 0``."""
    return _radial_map(phi.deriv, Q)


def v_map(phi, Q):
    """``V(Q) = psi'(|Q|) Q / |Q| = sqrt(phi'(|Q|) / |Q|) Q``."""
    return _radial_map(lambda r: np.sqrt(phi.deriv(r) * r), Q)


@dataclass(frozen=True)
class Characteristics:
    ratio_lo: float
    ratio_hi: float
    delta2_phi: float
    delta2_conj: float


def _delta2(fn, count):
    lo, hi = fn.valid_range
    t = np.geomspace(lo, hi / 2.0, count)
    return float(np.max(fn(2.0 * t) / fn(t)))


def characteristics_estimate(phi, samples=200):
    """Bounds of ``phi'(t) / (t phi''(t))`` and Delta_2 estimates."""
    if samples < 2:
        raise ValueError("need at least two samples")
    t = phi.sample_grid(samples)
    second = phi.second(t)
    if np.any(second <= 0):
        i = int(np.argmax(second <= 0))
        raise NFunctionError(f"{phi.label}: phi''({t[i]:.6g}) <= 0")
    ratio = phi.deriv(t) / (t * second)
    return Characteristics(float(ratio.min()), float(ratio.max()),
                           _delta2(phi, samples), _delta2(conjugate(phi), samples))


@dataclass(frozen=True)
class GrowthEnvelope:
    """Type ``(p0, p1)`` data of an N-function.

    ``p0``, ``p1`` and ``C1`` follow the standard type construction from
    the Delta_2 constants; ``tight_p0``/``tight_p1`` are the measured
    extreme local growth indices ``t phi'(t) / phi(t)``, for which the
    envelope holds with constant one.
    """

    p0: float
    p1: float
    C1: float
    C2: float
    h_samples: np.ndarray
    tight_p0: float
    tight_p1: float
    bound: float


def envelope_constant(phi, p0, p1, count=61):
    """Worst ``phi(st) / (max(s^p0, s^p1) phi(t))`` on a log sample grid.

    Returns ``(constant, (s, t))`` for the maximizing pair.
    """
    lo, hi = phi.valid_range
    t = np.geomspace(lo * 1e3, hi * 1e-3, count)
    s = np.geomspace(1e-3, 1e3, count)
    S, T = np.meshgrid(s, t, indexing="ij")
    ratio = phi(S * T) / (np.maximum(S ** p0, S ** p1) * phi(T))
    k = np.unravel_index(np.argmax(ratio), ratio.shape)
    return float(ratio[k]), (float(S[k]), float(T[k]))


def type_decomposition(phi, samples=200, min_gap=0.2):
    """Exponents ``p0 < p1`` with ``phi(st) <= C1 max(s^p0, s^p1) phi(t)``.

    ``p1 = log2 K`` and ``p0 = log K* / log(K*/2)`` with ``K`` the Delta_2
    constant of ``phi`` and ``K* = max(Delta_2(phi*), 3)``.  When these
    leave less than ``min_gap`` between them (pure powers), they are
    moved apart symmetrically, which keeps both defining inequalities.
    """
    ch = characteristics_estimate(phi, samples)
    if not (np.isfinite(ch.delta2_phi) and np.isfinite(ch.delta2_conj)):
        raise EnvelopeError("Delta_2 estimates are not finite")
    K = ch.delta2_phi
    K_star = max(ch.delta2_conj, 3.0)
    p1 = math.log2(K)
    p0 = math.log(K_star) / math.log(K_star / 2.0)
    if p1 - p0 < min_gap:
        mid = 0.5 * (p0 + p1)
        p0 = min(p0, mid - 0.5 * min_gap)
        p1 = max(p1, mid + 0.5 * min_gap)
        if p0 <= 1.0:
            p0 = 0.5 * (1.0 + min(p0 + 0.5 * min_gap, p1))
    bound = max(K, K_star)
    C1, worst = envelope_constant(phi, p0, p1)
    if C1 > bound * (1 + 1e-9):
        raise EnvelopeError(
            f"{phi.label}: envelope constant {C1:.4g} exceeds {bound:.4g} "
            f"at s={worst[0]:.3g}, t={worst[1]:.3g}", worst=worst)

    gap = p1 - p0
    lo, hi = phi.valid_range
    u = np.geomspace(lo ** gap * 1e2, hi ** gap * 1e-2, samples)

    def h(x):
        return phi(x ** (1.0 / gap)) * x ** (-p0 / gap)

    hu = h(u)
    lam = np.geomspace(1e-2, 1e2, 41)
    L, U = np.meshgrid(lam, u, indexing="ij")
    inside = (L * U >= u[0]) & (L * U <= u[-1])
    ratio = np.where(inside, h(L * U) / (np.maximum(1.0, L) * h(U)), 0.0)
    C2 = float(ratio.max())
    if C2 > bound * (1 + 1e-9):
        raise EnvelopeError(f"{phi.label}: h not quasi-concave (C2={C2:.4g})")

    t = phi.sample_grid(samples)
    index = t * phi.deriv(t) / phi(t)
    return GrowthEnvelope(p0=p0, p1=p1, C1=C1, C2=C2, h_samples=hu,
                          tight_p0=float(index.min()), tight_p1=float(index.max()),
                          bound=bound)


def young_gap(phi, t, s):
    """``phi(t) + phi*(s) - t s``; non-negative by Young's inequality."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    return phi(t) + conjugate(phi)(s) - t * s


def hammer_ratios(phi, P, Q):
    """Ratios comparing the A- and V-maps with the shifted function.

    Returns ``(r1, r2, r3)`` with ``r1 = (A(P)-A(Q)):(P-Q) / |V(P)-V(Q)|^2``,
    ``r2 = |V(P)-V(Q)|^2 / phi_|P|(|P-Q|)`` and
    ``r3 = |A(P)-A(Q)| / phi'_|P|(|P-Q|)``.  Coinciding pairs give ones.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    dA = a_map(phi, P) - a_map(phi, Q)
    dV = v_map(phi, P) - v_map(phi, Q)
    D = P - Q
    a = matrix_norm(P)
    t = matrix_norm(D)
    same = t == 0
    num1 = np.sum(dA * D, axis=(-2, -1))
    vv = np.sum(dV * dV, axis=(-2, -1))
    shifted = shifted_value(phi, a, t).reshape(np.shape(t))
    dshift = phi.deriv(a + t) * t / np.where(a + t > 0, a + t, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r1 = np.where(same, 1.0, num1 / np.where(same, 1.0, vv))
        r2 = np.where(same, 1.0, vv / np.where(same, 1.0, shifted))
        r3 = np.where(same, 1.0, matrix_norm(dA) / np.where(same, 1.0, dshift))
    return r1, r2, r3


def segment_average_ratio(phi, P0, P1, quad_pts=8, levels=48):
    """Average of ``phi'(|P_t|)/|P_t|`` along the segment ``P0 -> P1``
    divided by ``phi'(|P0|+|P1|)/(|P0|+|P1|)``.

    The parameter interval is split at the point closest to the origin and
    graded geometrically towards it, so the integrable singularity of a
    segment through zero is resolved.
    """
    P0 = np.asarray(P0, dtype=float)
    P1 = np.asarray(P1, dtype=float)
    scale = matrix_norm(P0) + matrix_norm(P1)
    if scale <= 0:
        raise ValueError("segment must not be the zero matrix")

    D = P1 - P0
    dd = float(np.sum(D * D))
    t0 = 0.0 if dd == 0 else -float(np.sum(P0 * D)) / dd
    star = float(np.clip(t0, 0.0, 1.0))
    # |P_theta| from the distance to the closest point: evaluating P_theta
    # directly cancels catastrophically next to the origin
    m = float(matrix_norm(P0 + t0 * D))
    dn = math.sqrt(dd)

    def integrate(npts):
        def g(theta):
            r = np.hypot(dn * (theta - t0), m)
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(r > 0, phi.deriv(r) / np.where(r > 0, r, 1.0), 0.0)

        total = 0.0
        for length, sign in ((star, -1.0), (1.0 - star, 1.0)):
            if length <= 0:
                continue
            edges = length * 0.5 ** np.arange(levels + 1)
            near, far = edges[1:], edges[:-1]
            total += float(np.sum(_gl_integrate(
                lambda d: g(star + sign * d), near, far, npts)))
        return total

    value = integrate(quad_pts)
    check = integrate(quad_pts + 4)
    if not np.isfinite(value) or abs(value - check) > 1e-6 * abs(check):
        raise QuadratureError(
            f"segment quadrature unstable: {value:.10g} vs {check:.10g}")
    return value / (phi.deriv(np.array([scale]))[0] / scale)
