"""Integrands with N-function growth and discrete energy minimization.

Matrices are arrays with trailing axes ``(N, 2)``; fourth-order tensors
use the layout ``D2f[..., i, a, j, b]`` with component indices ``i, j``
and space indices ``a, b``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nfunc
from .fespace import (FieldP1, factorize, flux_load, gradient, harmonic_fill,
                      tensor_stiffness)

__all__ = [
    "Integrand", "IntegrandConstants", "DirichletProblem", "SolverConfig",
    "SolveResult", "SolverError", "IntegrandError",
    "make_radial", "make_perturbed", "check_integrand", "rank_one_minimum",
    "energy", "energy_gradient", "assemble_hessian", "minimize", "solve",
    "el_residual", "dual_residual", "boundary_field", "empirical_k",
]

log = logging.getLogger(__name__)

DEGENERATE_FLOOR = 1e-8


class SolverError(RuntimeError):
    """Minimization stalled; ``result`` holds the last iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class IntegrandError(ValueError):
    pass


@dataclass(frozen=True)
class IntegrandConstants:
    """Measured hypothesis constants of an integrand.

    ``K`` bounds ``|f| / phi(|Q|)``, ``c_hess`` bounds ``|D2f| / phi''``,
    ``c_holder`` is the Hölder ratio away from zero and ``lh`` the
    smallest normalized rank-one value of ``D2f``.
    """

    K: float
    c_hess: float
    c_holder: float
    lh: float
    beta: float


@dataclass(frozen=True, eq=False)
class Integrand:
    """``f(Q) = phi(sqrt(sum_ia W_ia Q_ia^2))`` with a diagonal weight ``W``.

    ``W = 1`` is the radial case.  ``constants`` is filled by
    :func:`check_integrand`.
    """

    phi: nfunc.NFunction
    weight: np.ndarray
    kind: str = "radial"
    eps: float = 0.0
    constants: IntegrandConstants | None = None

    @property
    def N(self):
        return self.weight.shape[0]

    @property
    def k(self):
        return None if self.constants is None else self.constants.lh

    @property
    def K(self):
        return None if self.constants is None else self.constants.K

    @property
    def beta(self):
        return None if self.constants is None else self.constants.beta

    def _r(self, Q):
        return np.sqrt(np.sum(self.weight * Q * Q, axis=(-2, -1)))

    def f(self, Q):
        Q = np.asarray(Q, dtype=float)
        return self.phi(self._r(Q))

    def Df(self, Q):
        Q = np.asarray(Q, dtype=float)
        r = self._r(Q)
        safe = np.where(r > 0, r, 1.0)
        scale = np.where(r > 0, self.phi.deriv(safe) / safe, 0.0)
        return scale[..., None, None] * self.weight * Q

    def D2f(self, Q, floor=DEGENERATE_FLOOR):
        """Second derivative; below ``floor`` the ray value at ``floor``."""
        Q = np.array(Q, dtype=float)
        N = Q.shape[-2]
        r = self._r(Q)
        small = r < floor
        if np.any(small):
            direction = np.zeros((N, 2))
            direction[0, 0] = 1.0
            Qs = Q[small]
            rs = r[small][..., None, None]
            unit = np.where(rs > 0, Qs / np.where(rs > 0, rs, 1.0), direction)
            Q[small] = floor * unit / np.sqrt(np.sum(self.weight * unit * unit,
                                                      axis=(-2, -1)))[..., None, None]
            r = self._r(Q)
        d1 = self.phi.deriv(r) / r
        d2 = self.phi.second(r)
        n = self.weight.reshape(N, 2) * Q / r[..., None, None]
        eye = np.einsum("ia,ij,ab->iajb", self.weight, np.eye(N), np.eye(2))
        return (d1[..., None, None, None, None] * eye
                + (d2 - d1)[..., None, None, None, None]
                * np.einsum("...ia,...jb->...iajb", n, n))


def rank_one_minimum(A, count=64):
    """Minimum of ``A(eta x xi, eta x xi)`` over unit vectors (N = 2).

    ``A`` has shape ``(..., N, 2, N, 2)``; a uniform angular grid is used.
    """
    N = A.shape[-4]
    ang = np.linspace(0, np.pi, count, endpoint=False)
    xi = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if N == 1:
        eta = np.ones((1, 1))
    else:
        eta = xi
    M = np.einsum("pi,qa->pqia", eta, xi)
    vals = np.einsum("pqia,...iajb,pqjb->...pq", M, A, M)
    return vals.reshape(vals.shape[:-2] + (-1,)).min(axis=-1)


def check_integrand(f, samples=400, seed=0):
    """Measure (H2), (H4), (H5) and Legendre-Hadamard constants.

    Uses ``samples`` random matrices with norms log-uniform in
    ``[1e-3, 1e3]``.  Raises :class:`IntegrandError` when a measured
    constant is non-finite or the rank-one minimum is not positive.
    """
    rng = np.random.default_rng(seed)
    N = f.N
    Q = rng.standard_normal((samples, N, 2))
    Q /= np.linalg.norm(Q, axis=(1, 2), keepdims=True)
    mag = 10.0 ** rng.uniform(-3, 3, samples)
    Q *= mag[:, None, None]
    phi = f.phi
    K = float(np.max(np.abs(f.f(Q)) / phi(mag)))
    H = f.D2f(Q)
    hnorm = np.sqrt(np.sum(H.reshape(samples, -1) ** 2, axis=1))
    c_hess = float(np.max(hnorm / phi.second(mag)))
    P = rng.standard_normal((samples, N, 2))
    P /= np.linalg.norm(P, axis=(1, 2), keepdims=True)
    pm = mag * 10.0 ** rng.uniform(-3, np.log10(0.5), samples)
    P *= pm[:, None, None]
    beta = 1.0
    diff = np.sqrt(np.sum((H - f.D2f(Q + P)).reshape(samples, -1) ** 2, axis=1))
    c_holder = float(np.max(diff / (phi.second(mag) * (pm / mag) ** beta)))
    lh = float(np.min(rank_one_minimum(H, 48) / phi.second(mag)))
    consts = IntegrandConstants(K=K, c_hess=c_hess, c_holder=c_holder, lh=lh, beta=beta)
    if not all(np.isfinite([K, c_hess, c_holder, lh])) or lh <= 0:
        raise IntegrandError(f"integrand invariant suite failed: {consts}")
    return consts


def make_radial(phi, N=2):
    """``f(Q) = phi(|Q|)`` with measured constants."""
    f = Integrand(phi=phi, weight=np.ones((N, 2)), kind="radial")
    return replace(f, constants=check_integrand(f))


def make_perturbed(phi, eps, N=2):
    """``f(Q) = phi(sqrt(|Q|^2 + eps Q_11^2))``, ``eps`` in ``[0, 0.5]``."""
    eps = float(eps)
    if not 0.0 <= eps <= 0.5:
        raise IntegrandError(f"eps={eps} outside [0, 0.5]")
    if eps == 0.0:
        return make_radial(phi, N)
    w = np.ones((N, 2))
    w[0, 0] += eps
    f = Integrand(phi=phi, weight=w, kind="radial-plus-rank-one", eps=eps)
    return replace(f, constants=check_integrand(f))


def empirical_k(f, Q, mesh, fields):
    """Smallest ``(F(q + w) - F(q)) / int phi_|Q|(|grad w|)`` over ``fields``.

    ``q`` is the affine field with gradient ``Q`` and each ``w`` a
    zero-boundary field on ``mesh``; this is the measured quasiconvexity
    constant of the strict growth hypothesis.
    """
    Q = np.asarray(Q, dtype=float)
    shifted = nfunc.shift(f.phi, float(np.linalg.norm(Q)))
    base = f.f(Q) * mesh.area
    ratios = []
    for w in fields:
        G = gradient(w)
        num = float(mesh.areas @ f.f(Q + G)) - base
        den = float(mesh.areas @ shifted(np.linalg.norm(G, axis=(1, 2))))
        if den > 0:
            ratios.append(num / den)
    return float(min(ratios)) if ratios else float("nan")


@dataclass(frozen=True, eq=False)
class DirichletProblem:
    """Minimize ``int f(grad u)`` with ``u`` fixed on the boundary nodes.

    ``boundary_data`` is a field on the mesh; only its boundary values
    are used.
    """

    integrand: Integrand
    mesh: object
    boundary_data: FieldP1

    def __post_init__(self):
        vals = self.boundary_data.values[self.mesh.boundary_nodes]
        if not np.all(np.isfinite(vals)):
            raise ValueError("boundary data must be finite")
        if self.boundary_data.components != self.integrand.N:
            raise ValueError("boundary data and integrand disagree on N")

    @property
    def fixed(self):
        mask = np.zeros(self.mesh.n_vertices, dtype=bool)
        mask[self.mesh.boundary_nodes] = True
        return mask


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 60
    residual_tol: float = 1e-9
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    floor: float = DEGENERATE_FLOOR

    def __post_init__(self):
        if not (self.max_iters > 0 and self.residual_tol > 0
                and 0 < self.armijo_c < 1 and 0 < self.backtrack < 1):
            raise ValueError(f"invalid solver configuration {self}")


@dataclass
class SolveResult:
    u: FieldP1
    iterations: int
    residual: float
    energy: float
    converged: bool
    history: list = field(default_factory=list)


def energy(problem, u):
    """``sum_T area(T) f(grad u|_T)``."""
    return float(u.mesh.areas @ problem.integrand.f(gradient(u)))


def energy_gradient(problem, u):
    """Nodal derivative of the energy, shape (V, N)."""
    return flux_load(u.mesh, problem.integrand.Df(gradient(u)))


def assemble_hessian(problem, u, floor=DEGENERATE_FLOOR):
    """Sparse second variation on all ``V*N`` degrees of freedom."""
    return tensor_stiffness(u.mesh, problem.integrand.D2f(gradient(u), floor))


def _basis_l1(mesh):
    norms = np.linalg.norm(mesh.grad_basis, axis=2) * mesh.areas[:, None]
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles, norms)
    return out


def dual_residual(problem, u, grad=None):
    """Scaled dual residual of the discrete Euler-Lagrange equation.

    Each nodal residual is divided by the ``L^1`` norm of the nodal basis
    gradient and the result by the mean ``|Df(grad u)|``.
    """
    if grad is None:
        grad = energy_gradient(problem, u)
    mesh = u.mesh
    free = ~problem.fixed
    if not free.any():
        return 0.0
    r = np.abs(grad[free]).max(axis=1) / _basis_l1(mesh)[free]
    worst = float(r.max())
    if worst == 0.0:
        return 0.0
    Df = problem.integrand.Df(gradient(u))
    scale = float(mesh.areas @ np.linalg.norm(Df, axis=(1, 2))) / mesh.area
    return worst / max(scale, 1e-300)


def _initial_guess(problem):
    vals = harmonic_fill(problem.mesh, problem.boundary_data.values, problem.fixed)
    return FieldP1(problem.mesh, vals)


def solve(problem, config=SolverConfig(), initial=None):
    """Damped Newton with Armijo backtracking and a gradient fallback."""
    mesh = problem.mesh
    N = problem.integrand.N
    free_nodes = ~problem.fixed
    free = np.repeat(free_nodes, N)
    u = _initial_guess(problem) if initial is None else initial
    E = energy(problem, u)
    history = []
    res = float("inf")
    for it in range(config.max_iters + 1):
        grad = energy_gradient(problem, u)
        res = dual_residual(problem, u, grad)
        history.append((it, E, res))
        log.debug("iter %d energy %.12g residual %.3e", it, E, res)
        if res <= config.residual_tol:
            return SolveResult(u, it, res, E, True, history)
        if it == config.max_iters:
            break
        g = grad.ravel()[free]
        H = assemble_hessian(problem, u, config.floor)[free][:, free].tocsc()
        try:
            d = factorize(H).solve(-g)
            ok = np.all(np.isfinite(d)) and d @ g < 0
        except RuntimeError:
            ok = False
        if not ok:
            d = -g / max(float(H.diagonal().max()), 1e-300)
        slope = float(d @ g)
        step = 1.0
        accepted = False
        for _ in range(config.max_backtracks):
            vals = u.values.copy()
            vals.reshape(-1)[free] += step * d
            trial = FieldP1(mesh, vals)
            Et = energy(problem, trial)
            if Et <= E + config.armijo_c * step * slope:
                accepted = True
                break
            step *= config.backtrack
        if not accepted:
            # energy differences are below rounding: accept the full step
            # only if it still shrinks the residual
            vals = u.values.copy()
            vals.reshape(-1)[free] += d
            trial = FieldP1(mesh, vals)
            if dual_residual(problem, trial) < res:
                Et = energy(problem, trial)
            else:
                result = SolveResult(u, it, res, E, False, history)
                raise SolverError(f"line search failed at iteration {it}, "
                                  f"residual {res:.3e}", result)
        u, E = trial, Et
    result = SolveResult(u, config.max_iters, res, E, False, history)
    raise SolverError(f"no convergence in {config.max_iters} iterations, "
                      f"residual {res:.3e}", result)


def minimize(problem, config=SolverConfig()):
    """Discrete minimizer of the Dirichlet problem."""
    return solve(problem, config).u


def el_residual(problem, u, xi):
    """``int Df(grad u) : grad xi`` for a zero-boundary test field."""
    bnd = xi.mesh.boundary_nodes
    if np.any(xi.values[bnd] != 0):
        raise ValueError("test field must vanish on the boundary")
    S = problem.integrand.Df(gradient(u))
    return float(np.einsum("t,tia,tia->", u.mesh.areas, S, gradient(xi)))


def boundary_field(mesh, tag, coeffs=(), N=2):
    """Boundary data from the fixed catalog.

    ``affine``: ``coeffs`` = the ``N*2`` entries of ``Q`` row by row.
    ``harmonic-poly``: first component ``x^2 - y^2``, second ``2xy``,
    scaled by ``coeffs[0]`` (default 1).
    ``custom-coefficients``: per component the six coefficients of
    ``c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2``.
    """
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    if tag == "affine":
        Q = coeffs.reshape(N, 2) if coeffs.size else np.eye(N, 2)
        vals = mesh.vertices @ Q.T
    elif tag == "harmonic-poly":
        c = coeffs[0] if coeffs.size else 1.0
        comps = [x * x - y * y, 2 * x * y]
        vals = c * np.column_stack(comps[:N])
    elif tag == "custom-coefficients":
        if coeffs.size != 6 * N:
            raise ValueError(f"custom-coefficients needs {6 * N} values")
        c = coeffs.reshape(N, 6)
        mono = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
        vals = mono @ c.T
    else:
        raise ValueError(f"unknown boundary-data tag {tag!r}")
    return FieldP1(mesh, vals)
