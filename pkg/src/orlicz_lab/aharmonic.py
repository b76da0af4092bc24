"""Constant-coefficient systems satisfying the Legendre-Hadamard condition.

Tensors are stored as arrays ``A[i, a, j, b]`` (component, space,
component, space), so ``A(P, R) = sum P[i, a] A[i, a, j, b] R[j, b]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import nfunc
from .fespace import (Ball, FieldP1, MeshError, ball_region, factorize, flux_load,
                      gradient, luxemburg_norm, modular, submesh, tensor_stiffness)

__all__ = [
    "EllipticTensor", "TensorError", "SolveError", "ApproximationResult",
    "make_tensor", "identity_tensor", "tensor_from_integrand",
    "legendre_hadamard_constant", "solve_dirichlet_div",
    "harmonic_approximation", "approximate", "interior_decay_probe",
    "variational_norm_check", "stability_ratio",
]

KAPPA_GRID = 360
MIN_INTERIOR = 25


class TensorError(ValueError):
    pass


class SolveError(RuntimeError):
    pass


def _rank_one_form(A, eta_angle, xi_angle):
    N = A.shape[0]
    xi = np.stack([np.cos(xi_angle), np.sin(xi_angle)], axis=-1)
    if N == 1:
        eta = np.ones(np.shape(eta_angle) + (1,))
    else:
        eta = np.stack([np.cos(eta_angle), np.sin(eta_angle)], axis=-1)
    M = eta[..., :, None] * xi[..., None, :]
    return np.einsum("...ia,iajb,...jb->...", M, A, M)


def legendre_hadamard_constant(A, grid=KAPPA_GRID):
    """``min A(eta x xi, eta x xi)`` over unit ``eta``, ``xi``.

    Exhaustive search on a ``grid x grid`` angle lattice, then a local
    Nelder-Mead refinement from the best lattice point.
    """
    A = np.asarray(A, dtype=float)
    ang = np.linspace(0.0, np.pi, grid, endpoint=False)
    E, X = np.meshgrid(ang, ang, indexing="ij")
    vals = _rank_one_form(A, E, X)
    k = np.unravel_index(np.argmin(vals), vals.shape)
    best = float(vals[k])
    res = optimize.minimize(lambda z: float(_rank_one_form(A, z[0], z[1])),
                            [ang[k[0]], ang[k[1]]], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14})
    return min(best, float(res.fun))


@dataclass(frozen=True, eq=False)
class EllipticTensor:
    entries: np.ndarray
    kappa: float

    @property
    def N(self):
        return self.entries.shape[0]

    @property
    def norm(self):
        return float(np.sqrt(np.sum(self.entries ** 2)))

    def adjoint(self):
        return EllipticTensor(np.transpose(self.entries, (2, 3, 0, 1)).copy(), self.kappa)

    def apply(self, G):
        """``A G`` for matrices with trailing axes ``(N, 2)``."""
        return np.einsum("iajb,...jb->...ia", self.entries, G)

    def form(self, P, R):
        return np.einsum("...ia,iajb,...jb->...", P, self.entries, R)


def make_tensor(entries):
    entries = np.array(entries, dtype=float)
    if entries.ndim != 4 or entries.shape[1] != 2 or entries.shape[3] != 2:
        raise TensorError(f"tensor shape {entries.shape} is not (N, 2, N, 2)")
    return EllipticTensor(entries, legendre_hadamard_constant(entries))


def identity_tensor(N=2):
    return EllipticTensor(np.einsum("ij,ab->iajb", np.eye(N), np.eye(2)), 1.0)


def tensor_from_integrand(f, Q):
    """``D2f(Q) / phi''(|Q|)`` with its measured Legendre-Hadamard constant."""
    Q = np.asarray(Q, dtype=float)
    q = float(np.linalg.norm(Q))
    if q == 0.0:
        raise TensorError("the linearized tensor is undefined at Q = 0")
    return make_tensor(f.D2f(Q) / float(f.phi.second(np.array(q))))


def _factor(mesh, A):
    cache = mesh.__dict__.setdefault("_factor_cache", {})
    key = id(A)
    hit = cache.get(key)
    if hit is not None and hit[0] is A:
        return hit[1], hit[2]
    N = A.N
    K = tensor_stiffness(mesh, A.entries)
    free = np.ones(mesh.n_vertices, dtype=bool)
    free[mesh.boundary_nodes] = False
    free = np.repeat(free, N)
    try:
        lu = factorize(K[free][:, free])
    except RuntimeError as exc:
        raise SolveError(f"assembled system is singular: {exc}") from exc
    if len(cache) > 8:
        cache.clear()
    cache[key] = (A, lu, (K, free))
    return lu, (K, free)


def solve_dirichlet_div(A, G, mesh, rtol=1e-10):
    """Zero-boundary ``w`` with ``int A grad w : grad xi = int G : grad xi``."""
    if not A.kappa > 0:
        raise TensorError(f"tensor is not Legendre-Hadamard elliptic (kappa={A.kappa})")
    N = A.N
    lu, (K, free) = _factor(mesh, A)
    b = flux_load(mesh, G).ravel()[free]
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolveError("non-finite solution: singular assembled matrix")
    resid = np.linalg.norm(K[free][:, free] @ x - b)
    if resid > rtol * max(np.linalg.norm(b), 1e-300) and np.linalg.norm(b) > 0:
        raise SolveError(f"solve residual {resid:.2e} exceeds tolerance")
    vals = np.zeros(mesh.n_vertices * N)
    vals[free] = x
    return FieldP1(mesh, vals.reshape(-1, N))


@dataclass(frozen=True, eq=False)
class ApproximationResult:
    """A-harmonic approximation on the sub-mesh of a ball.

    ``u`` is the input restricted to the sub-mesh, ``w = u - h``.
    """

    sub: object
    u: FieldP1
    h: FieldP1
    w: FieldP1
    ball: Ball


def approximate(A, u, ball):
    """Sub-mesh solve returning ``u``, ``h`` and ``w`` on the sub-mesh."""
    sub = submesh(u.mesh, ball)
    n_int = sub.mesh.n_vertices - len(sub.mesh.boundary_nodes)
    if n_int < MIN_INTERIOR:
        raise MeshError(f"sub-mesh of {ball} has {n_int} interior vertices; "
                        f"refine h to get at least {MIN_INTERIOR}")
    ur = sub.restrict(u)
    w = solve_dirichlet_div(A, A.apply(gradient(ur)), sub.mesh)
    return ApproximationResult(sub, ur, ur - w, w, ball)


def harmonic_approximation(A, u, ball):
    """A-harmonic ``h`` on the sub-mesh of ``ball`` with ``h = u`` on its boundary."""
    return approximate(A, u, ball).h


def interior_decay_probe(h, ball, tau):
    """``sup_{tau B} |grad h - <grad h>_{tau B}| / (tau mean_B |grad h - <grad h>_B|)``."""
    if not 0 < tau <= 0.5:
        raise ValueError("tau must lie in (0, 1/2]")
    mesh = h.mesh
    G = gradient(h)
    outer = ball_region(mesh, ball)
    mean_b = outer.average(G[outer.tri])
    den = tau * outer.average(np.linalg.norm(G[outer.tri] - mean_b, axis=(1, 2)))
    inner = ball_region(mesh, ball.scaled(tau))
    mean_t = inner.average(G[inner.tri])
    num = float(np.linalg.norm(G[inner.cells] - mean_t, axis=(1, 2)).max())
    # quadrature sums leave ~1e-13 relative noise on constant gradients
    scale = max(float(np.abs(G).max()), 1e-300)
    if den <= 1e-10 * scale:
        return 0.0 if num <= 1e-9 * scale else float("inf")
    return num / float(den)


def _basis_luxemburg(psi, mesh, iters=90):
    """Luxemburg norm of ``grad phi_v`` for every vertex ``v``."""
    g = np.linalg.norm(mesh.grad_basis, axis=2)
    w = np.repeat(mesh.areas[:, None], 3, axis=1)
    tri = mesh.triangles
    V = mesh.n_vertices
    gmax = np.zeros(V)
    np.maximum.at(gmax, tri.ravel(), g.ravel())
    lo = gmax * 1e-12
    hi = gmax * 1e12

    def rho(lam):
        vals = w * psi(g / lam[tri])
        return np.bincount(tri.ravel(), vals.ravel(), minlength=V)

    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        big = rho(mid) > 1.0
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
    return hi


def variational_norm_check(A, u, psi=None):
    """Compare ``||grad u||_psi`` with a dual sup over normalized test fields.

    Returns ``(lhs, rhs)``; ``rhs`` maximizes ``int A grad u : grad xi``
    over the nodal basis fields and the field ``xi*`` solving the adjoint
    problem with right-hand side ``psi'(|grad u| / lhs) grad u / |grad u|``,
    each scaled to unit ``psi*`` Luxemburg norm.
    """
    if psi is None:
        psi = nfunc.make_catalog("quadratic")
    mesh = u.mesh
    bnd = mesh.boundary_nodes
    if np.any(u.values[bnd] != 0):
        raise ValueError("u must vanish on the boundary")
    G = gradient(u)
    mag = np.linalg.norm(G, axis=(1, 2))
    lhs = luxemburg_norm(psi, mesh, mag)
    if lhs == 0.0:
        return 0.0, 0.0
    psi_star = nfunc.conjugate(psi)
    load = flux_load(mesh, A.apply(G))
    interior = np.ones(mesh.n_vertices, dtype=bool)
    interior[bnd] = False
    norms = _basis_luxemburg(psi_star, mesh)
    best = float((np.abs(load[interior]) / norms[interior, None]).max())
    safe = np.where(mag > 0, mag, 1.0)
    flux = (psi.deriv(mag / lhs) / safe)[:, None, None] * G
    xi = solve_dirichlet_div(A.adjoint(), flux, mesh)
    xn = luxemburg_norm(psi_star, mesh, np.linalg.norm(gradient(xi), axis=(1, 2)))
    if xn > 0:
        pairing = float(np.einsum("t,tia,tia->", mesh.areas, A.apply(G), gradient(xi)))
        best = max(best, abs(pairing) / xn)
    return float(lhs), best


def stability_ratio(A, G, mesh, psi):
    """``int psi(|grad T_A G|) / int psi(|G|)`` for the zero-boundary solve."""
    w = solve_dirichlet_div(A, G, mesh)
    den = modular(psi, mesh, np.linalg.norm(G, axis=(1, 2)))
    num = modular(psi, mesh, np.linalg.norm(gradient(w), axis=(1, 2)))
    return num / den if den > 0 else 0.0
