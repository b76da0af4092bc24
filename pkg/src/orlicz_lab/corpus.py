"""Deterministic test fields shared by the experiments and the CLI."""

from __future__ import annotations

import numpy as np

from .fespace import FieldP1
from .rng import SplitMix64

__all__ = [
    "perturbed_affine", "spike_field", "spike_corpus", "decay_fields",
    "kink_field", "random_zero_boundary", "SPIKE_CASES",
]

# (center x, center y, height) triples per case
SPIKE_CASES = {
    "single": [(0.0, 0.0, 1.0)],
    "tall": [(0.3, -0.2, 10.0)],
    "pair": [(-0.5, 0.5, 1.0), (0.5, 0.5, -2.0)],
    "bump-spike": [(0.1, 0.1, 3.0)],
    "near-boundary": [(0.9, 0.0, 2.0), (0.0, -0.9, 1.0)],
}
_BUMP_CASES = {"bump-spike": 0.2}


def perturbed_affine(mesh, Q=None, amp=0.01, profile="sine"):
    """``Q x + amp * p(x)`` with a smooth profile.

    ``sine``: ``p = (sin(pi x) cosh(pi y) / cosh(pi), x y)``, whose
    first component is harmonic.  ``poly``: ``p = (x^2 - y^2, 2 x y)``.
    ``Q`` defaults to ``I / sqrt(2)`` so that ``|Q| = 1``.
    """
    Q = np.eye(2) / np.sqrt(2) if Q is None else np.asarray(Q, dtype=float)
    x, y = mesh.vertices.T
    if profile == "sine":
        pert = np.column_stack([np.sin(np.pi * x) * np.cosh(np.pi * y) / np.cosh(np.pi),
                                x * y])
    elif profile == "poly":
        pert = np.column_stack([x * x - y * y, 2 * x * y])
    else:
        raise ValueError(f"unknown perturbation profile {profile!r}")
    return FieldP1(mesh, mesh.vertices @ Q.T + amp * pert[:, :Q.shape[0]])


def spike_field(mesh, spikes, bump=0.0):
    """Nodal hats ``(x, y, height)`` at the nearest vertices plus a smooth bump.

    Both components carry the profile, the second scaled by 1/2.
    """
    x, y = mesh.vertices.T
    v = bump * (1 - x * x) * (1 - y * y)
    for cx, cy, height in spikes:
        k = int(np.argmin((x - cx) ** 2 + (y - cy) ** 2))
        v[k] += height
    v[mesh.boundary_nodes] = 0.0
    return FieldP1(mesh, np.column_stack([v, 0.5 * v]))


def spike_corpus(mesh):
    return {name: spike_field(mesh, spikes, _BUMP_CASES.get(name, 0.0))
            for name, spikes in SPIKE_CASES.items()}


def decay_fields(mesh, count=5, seed=1):
    """Quadratic-dominated fields with small cubic parts (boundary data for h)."""
    rng = SplitMix64(seed)
    x, y = mesh.vertices.T
    out = []
    for _ in range(count):
        quad = rng.normal(6)
        cubic = 0.1 * rng.normal(4)
        u1 = quad[0] * x * x + quad[1] * x * y + quad[2] * y * y + cubic[0] * x ** 3 + cubic[1] * y ** 3
        u2 = quad[3] * x * x + quad[4] * x * y + quad[5] * y * y + cubic[2] * x * x * y + cubic[3] * x * y * y
        out.append(FieldP1(mesh, np.column_stack([u1, u2])))
    return out


def kink_field(mesh, offset=0.03, jump=0.5, smooth=0.05, seed=0):
    """Piecewise-affine field with a gradient jump across ``x = offset``.

    A small seeded quadratic keeps the excess away from zero in the
    smooth region.
    """
    rng = SplitMix64(seed)
    c = smooth * (1 + 0.1 * rng.uniform(4))
    x, y = mesh.vertices.T
    u1 = x + jump * np.maximum(x - offset, 0.0) + c[0] * x * x + c[1] * y * y
    u2 = y + c[2] * x * y + c[3] * (x * x - y * y)
    return FieldP1(mesh, np.column_stack([u1, u2]))


def random_zero_boundary(mesh, count=5, seed=0, modes=3):
    """Random trigonometric fields vanishing on the square's boundary."""
    L = mesh.domain
    rng = SplitMix64(seed)
    x, y = mesh.vertices.T
    out = []
    for _ in range(count):
        vals = np.zeros((mesh.n_vertices, 2))
        for comp in range(2):
            coef = rng.normal((modes, modes))
            for i in range(modes):
                for j in range(modes):
                    vals[:, comp] += (coef[i, j] / (1 + i + j)
                                      * np.sin((i + 1) * np.pi * (x + L) / (2 * L))
                                      * np.sin((j + 1) * np.pi * (y + L) / (2 * L)))
        vals[mesh.boundary_nodes] = 0.0
        out.append(FieldP1(mesh, vals))
    return out
