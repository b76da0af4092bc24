"""Discrete maximal function and Lipschitz truncation of P1 fields.

The maximal function averages per-triangle data over discrete balls:
a triangle belongs to ``B(v, r)`` when its centroid does.  On the
structured meshes of :func:`orlicz_lab.fespace.build_mesh` all centroids
lie on a lattice of step ``h/3``, so the averages for every radius are
two FFT convolutions; other meshes fall back to a k-d tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import signal
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .fespace import FieldP1, gradient, harmonic_fill, modular

__all__ = [
    "TruncationResult", "LevelSelection", "TruncationError",
    "maximal_function", "dyadic_radii", "select_level", "truncate",
    "verify_truncation", "bad_triangles",
]

CLAMP_FACTOR = 8.0
CLAMP_ROUNDS = 5


class TruncationError(RuntimeError):
    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst


def dyadic_radii(mesh):
    """``h, 2h, 4h, ...`` up to the first radius covering the mesh."""
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    radii = [mesh.h]
    while radii[-1] < diam:
        radii.append(2 * radii[-1])
    return np.array(radii)


def _lattice(mesh):
    """Integer h/3-lattice coordinates of centroids and vertices, or None."""
    step = mesh.h / 3.0
    origin = mesh.vertices.min(axis=0)
    vi = (mesh.vertices - origin) / step
    ci = (mesh.centroids - origin) / step
    vr, cr = np.rint(vi), np.rint(ci)
    if np.abs(vi - vr).max() > 1e-6 or np.abs(ci - cr).max() > 1e-6:
        return None
    return vr.astype(np.int64), cr.astype(np.int64)


def _disc(radius_cells):
    r = int(np.floor(radius_cells + 1e-9))
    k = np.arange(-r, r + 1)
    X, Y = np.meshgrid(k, k, indexing="ij")
    return (X * X + Y * Y <= radius_cells ** 2 * (1 + 1e-12)).astype(float)


def _ball_averages_lattice(mesh, g, radii, lat):
    vr, cr = lat
    shape = tuple(cr.max(axis=0) + 1)
    shape = (max(shape[0], vr[:, 0].max() + 1), max(shape[1], vr[:, 1].max() + 1))
    mass = np.zeros(shape)
    area = np.zeros(shape)
    np.add.at(mass, (cr[:, 0], cr[:, 1]), g * mesh.areas)
    np.add.at(area, (cr[:, 0], cr[:, 1]), mesh.areas)
    step = mesh.h / 3.0
    out = np.empty((len(radii), mesh.n_vertices))
    for k, r in enumerate(radii):
        ker = _disc(r / step)
        cm = signal.fftconvolve(mass, ker, mode="same")
        ca = signal.fftconvolve(area, ker, mode="same")
        m = cm[vr[:, 0], vr[:, 1]]
        a = ca[vr[:, 0], vr[:, 1]]
        # FFT round-off must not turn an empty ball into a tiny negative mass
        tiny = 1e-12 * mesh.areas.min()
        out[k] = np.where(a > tiny, np.maximum(m, 0.0) / np.where(a > tiny, a, 1.0), 0.0)
    return out


def _ball_averages_tree(mesh, g, radii):
    tree = cKDTree(mesh.centroids)
    out = np.zeros((len(radii), mesh.n_vertices))
    wg = g * mesh.areas
    for k, r in enumerate(radii):
        hits = tree.query_ball_point(mesh.vertices, r * (1 + 1e-12))
        for v, idx in enumerate(hits):
            if idx:
                out[k, v] = wg[idx].sum() / mesh.areas[idx].sum()
    return out


def maximal_function(g, mesh, radii=None):
    """Dyadic maximal function of per-triangle data at each vertex."""
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise ValueError("maximal function expects non-negative data")
    if radii is None:
        radii = dyadic_radii(mesh)
    lat = _lattice(mesh)
    if lat is not None:
        avg = _ball_averages_lattice(mesh, g, radii, lat)
    else:
        avg = _ball_averages_tree(mesh, g, radii)
    return avg.max(axis=0)


def bad_triangles(mesh, bad_vertices):
    return np.nonzero(bad_vertices[mesh.triangles].any(axis=1))[0]


@dataclass(frozen=True)
class LevelSelection:
    """Dyadic level choice; ``products[j] = psi(l_j) |bad_j| / |B|``."""

    lam: float
    index: int
    levels: np.ndarray
    products: np.ndarray
    mean_modular: float


def select_level(w, psi, gamma, m0, maximal=None):
    """Pigeonhole choice of ``lambda`` among ``gamma 2^j``, ``j < m0``.

    The bad set at a level is the union of triangles touching a vertex
    where the maximal function of ``|grad w|`` exceeds it.  Ties go to
    the smallest level.
    """
    if not gamma > 0 or int(m0) < 1:
        raise ValueError("need gamma > 0 and m0 >= 1")
    mesh = w.mesh
    if maximal is None:
        maximal = maximal_function(np.linalg.norm(gradient(w), axis=(1, 2)), mesh)
    levels = gamma * 2.0 ** np.arange(int(m0))
    total = mesh.area
    products = np.empty(len(levels))
    for j, lam in enumerate(levels):
        bad = bad_triangles(mesh, maximal > lam)
        products[j] = float(psi(np.array(lam))) * mesh.areas[bad].sum() / total
    j = int(np.argmin(products))
    mean_mod = modular(psi, mesh, np.linalg.norm(gradient(w), axis=(1, 2))) / total
    return LevelSelection(float(levels[j]), j, levels, products, mean_mod)


@dataclass(frozen=True, eq=False)
class TruncationResult:
    w_lambda: FieldP1
    lam: float
    gamma: float
    m0: int
    bad_set: np.ndarray
    lip_const: float
    selection: LevelSelection
    clamp_rounds: int = 0


def _clamp(mesh, vals, bad_v, lam, factor, rounds):
    """Shrink bad components toward their ring mean until gradients obey the cap."""
    edges = mesh.edges()
    n = mesh.n_vertices
    bad_edges = edges[bad_v[edges[:, 0]] & bad_v[edges[:, 1]]]
    adj = sp.coo_matrix((np.ones(len(bad_edges)), (bad_edges[:, 0], bad_edges[:, 1])),
                        shape=(n, n))
    _, labels = csgraph.connected_components(adj, directed=False)
    ring = bad_v[edges[:, 0]] != bad_v[edges[:, 1]]
    ring_e = edges[ring]
    inner = np.where(bad_v[ring_e[:, 0]], ring_e[:, 0], ring_e[:, 1])
    outer = np.where(bad_v[ring_e[:, 0]], ring_e[:, 1], ring_e[:, 0])
    cap = factor * lam
    used = 0
    for used in range(rounds + 1):
        G = np.linalg.norm(np.einsum("tkn,tkd->tnd", vals[mesh.triangles],
                                     mesh.grad_basis), axis=(1, 2))
        over = G > cap * (1 - 1e-12)
        if not over.any():
            return vals, used
        if used == rounds:
            break
        tri_comp = np.where(bad_v[mesh.triangles], labels[mesh.triangles], -1).max(axis=1)
        for c in np.unique(tri_comp[over]):
            if c < 0:
                continue
            members = (labels == c) & bad_v
            rmask = members[inner]
            if rmask.any():
                mean = vals[outer[rmask]].mean(axis=0)
            else:
                mean = np.zeros(vals.shape[1])
            gmax = G[tri_comp == c].max()
            s = min(1.0, cap / gmax) * 0.95
            vals[members] = mean + s * (vals[members] - mean)
    tri = int(np.argmax(G))
    raise TruncationError(f"gradient {G[tri]:.3g} exceeds {factor:g} lambda={cap:.3g} "
                          f"after {rounds} clamp rounds on triangle {tri}",
                          worst=(tri, float(G[tri])))


def truncate(w, psi, gamma=None, m0=8, factor=CLAMP_FACTOR, rounds=CLAMP_ROUNDS):
    """Lipschitz truncation of a zero-boundary field.

    ``gamma`` defaults to the median of ``|grad w|``, or its mean when
    the median is zero.
    """
    mesh = w.mesh
    bnd = mesh.boundary_nodes
    if np.any(w.values[bnd] != 0):
        raise ValueError("truncation expects zero boundary values")
    gnorm = np.linalg.norm(gradient(w), axis=(1, 2))
    if gamma is None:
        gamma = float(np.median(gnorm)) or float(mesh.areas @ gnorm / mesh.area)
        if gamma == 0.0:
            gamma = 1.0
    Mg = maximal_function(gnorm, mesh)
    sel = select_level(w, psi, gamma, m0, maximal=Mg)
    lam = sel.lam
    bad_v = Mg > lam
    bad_v[bnd] = False
    vals = w.values.copy()
    rounds_used = 0
    if bad_v.any():
        vals = harmonic_fill(mesh, vals, ~bad_v)
        vals, rounds_used = _clamp(mesh, vals, bad_v, lam, factor, rounds)
    w_lam = FieldP1(mesh, vals)
    changed = np.nonzero(np.any(vals[mesh.triangles] != w.values[mesh.triangles],
                                axis=(1, 2)))[0]
    bad = np.union1d(bad_triangles(mesh, Mg > lam), changed)
    lip = float(np.linalg.norm(gradient(w_lam), axis=(1, 2)).max()) / lam
    return TruncationResult(w_lam, lam, float(gamma), int(m0), bad, lip, sel, rounds_used)


@dataclass(frozen=True)
class TruncationConstants:
    e1: float
    e2: float
    e3: float
    pigeonhole_sum: float


def verify_truncation(w, result, psi):
    """Measured constants of the three truncation estimates.

    ``pigeonhole_sum`` is ``sum_j products_j / mean psi(|grad w|)``; the
    pigeonhole principle gives ``e2 <= pigeonhole_sum``.
    """
    mesh = w.mesh
    total = mesh.area
    mean_mod = modular(psi, mesh, np.linalg.norm(gradient(w), axis=(1, 2))) / total
    mean_lam = modular(psi, mesh, np.linalg.norm(gradient(result.w_lambda), axis=(1, 2))) / total
    e1 = result.lip_const
    if mean_mod == 0:
        return TruncationConstants(e1, 0.0, 1.0, 0.0)
    bad_area = mesh.areas[result.bad_set].sum() / total
    e2 = float(psi(np.array(result.lam))) * bad_area / mean_mod * result.m0
    e3 = mean_lam / mean_mod
    psum = float(result.selection.products.sum()) / mean_mod
    return TruncationConstants(float(e1), float(e2), float(e3), psum)
