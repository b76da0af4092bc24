import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orlicz_lab import nfunc
from orlicz_lab.corpus import random_zero_boundary, spike_corpus, spike_field
from orlicz_lab.fespace import FieldP1, TriMesh, build_mesh, gradient
from orlicz_lab.liptrunc import (TruncationError, bad_triangles, dyadic_radii, maximal_function,
                                 select_level, truncate, verify_truncation)

PSIS = {p: nfunc.make_catalog("power", p) for p in (1.5, 2.0, 3.0)}


def brute_maximal(g, mesh, radii):
    """Direct O(V T) evaluation of the dyadic centroid-ball averages."""
    d = np.linalg.norm(mesh.vertices[:, None, :] - mesh.centroids[None, :, :], axis=2)
    best = np.zeros(mesh.n_vertices)
    for r in radii:
        inside = d <= r * (1 + 1e-12)
        mass = inside @ (g * mesh.areas)
        area = inside @ mesh.areas
        best = np.maximum(best, np.where(area > 0, mass / np.where(area > 0, area, 1), 0))
    return best


def unstructured(mesh):
    """Same triangles with a jittered interior so the lattice path is skipped."""
    v = mesh.vertices.copy()
    jitter = 0.1 * mesh.h * np.sin(7 * v[:, ::-1])
    inner = mesh.interior_nodes
    v[inner] += jitter[inner]
    return TriMesh(vertices=v, triangles=mesh.triangles, h=mesh.h,
                   boundary_nodes=mesh.boundary_nodes, domain=mesh.domain)


# ------------------------------------------------------------------ maximal function

def test_dyadic_radii(mesh16):
    r = dyadic_radii(mesh16)
    assert r[0] == mesh16.h and r[-1] >= 2 * np.sqrt(2) > r[-2]
    np.testing.assert_allclose(r[1:] / r[:-1], 2.0)


def test_maximal_constant(mesh16):
    g = np.full(mesh16.n_triangles, 2.5)
    np.testing.assert_allclose(maximal_function(g, mesh16), 2.5, rtol=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_maximal_matches_brute_force(seed):
    mesh = build_mesh(1.0, 1 / 8)
    g = np.random.default_rng(seed).exponential(size=mesh.n_triangles)
    radii = dyadic_radii(mesh)
    np.testing.assert_allclose(maximal_function(g, mesh), brute_maximal(g, mesh, radii),
                               rtol=1e-10)


def test_maximal_tree_path_matches_brute_force():
    mesh = unstructured(build_mesh(1.0, 1 / 8))
    g = np.random.default_rng(3).exponential(size=mesh.n_triangles)
    radii = dyadic_radii(mesh)
    np.testing.assert_allclose(maximal_function(g, mesh), brute_maximal(g, mesh, radii),
                               rtol=1e-12)


def test_maximal_single_triangle_decreasing(mesh16):
    k = int(np.argmin(np.linalg.norm(mesh16.centroids, axis=1)))
    g = np.zeros(mesh16.n_triangles)
    g[k] = 1.0
    M = maximal_function(g, mesh16)
    np.testing.assert_allclose(M, brute_maximal(g, mesh16, dyadic_radii(mesh16)), atol=1e-12)
    # dyadic radii: decrease holds across distance doublings along a ray
    ray = [int(np.argmin(np.linalg.norm(mesh16.vertices - t, axis=1))) for t in
           np.array([0.1, 0.2, 0.4, 0.8])[:, None] * np.array([1.0, 1.0])]
    vals = M[ray]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] > 0


def test_maximal_rejects_negative(mesh16):
    with pytest.raises(ValueError):
        maximal_function(-np.ones(mesh16.n_triangles), mesh16)


@settings(max_examples=20)
@given(st.integers(0, 2 ** 32 - 1))
def test_maximal_monotone(seed):
    mesh = build_mesh(1.0, 0.25)
    rng = np.random.default_rng(seed)
    g1 = rng.exponential(size=mesh.n_triangles)
    g2 = g1 + rng.exponential(size=mesh.n_triangles)
    assert np.all(maximal_function(g1, mesh) <= maximal_function(g2, mesh) * (1 + 1e-12))


@settings(max_examples=20)
@given(st.integers(0, 2 ** 32 - 1))
def test_maximal_dominates_data_mean(seed):
    mesh = build_mesh(1.0, 0.25)
    g = np.random.default_rng(seed).exponential(size=mesh.n_triangles)
    mean = mesh.areas @ g / mesh.area
    # the largest radius covers everything, so M g >= the domain mean
    assert np.all(maximal_function(g, mesh) >= mean * (1 - 1e-12))


# ------------------------------------------------------------------ level selection

def test_select_level_lipschitz_input(mesh16):
    w = random_zero_boundary(mesh16, 1, seed=0)[0]
    gamma = 2 * np.linalg.norm(gradient(w), axis=(1, 2)).max()
    sel = select_level(w, PSIS[2.0], gamma, 8)
    assert sel.lam == gamma and sel.index == 0 and sel.products[0] == 0.0


def test_select_level_pigeonhole_exhaustive(mesh32):
    w = spike_field(mesh32, [(0.0, 0.0, 1.0)])
    psi = PSIS[2.0]
    sel = select_level(w, psi, 1.0, 8)
    # exhaustive oracle: recompute each product directly
    mag = np.linalg.norm(gradient(w), axis=(1, 2))
    M = maximal_function(mag, mesh32)
    prods = [(2.0 ** j) ** 2 / 2 * mesh32.areas[bad_triangles(mesh32, M > 2.0 ** j)].sum()
             / mesh32.area for j in range(8)]
    np.testing.assert_allclose(sel.products, prods, rtol=1e-12)
    assert sel.products[sel.index] == min(prods)
    assert sel.products[sel.index] <= sum(prods) / 8
    assert 1.0 <= sel.lam <= 2.0 ** 8


def test_select_level_doubling_gamma(mesh32):
    psi = PSIS[2.0]
    for w in spike_corpus(mesh32).values():
        a = select_level(w, psi, 1.0, 8)
        b = select_level(w, psi, 2.0, 8)
        assert b.products[b.index] <= 4 * a.products[a.index] + 1e-15


@pytest.mark.parametrize("gamma,m0", [(0.0, 4), (1.0, 0)])
def test_select_level_validation(mesh16, gamma, m0):
    w = random_zero_boundary(mesh16, 1)[0]
    with pytest.raises(ValueError):
        select_level(w, PSIS[2.0], gamma, m0)


# ------------------------------------------------------------------ truncation

def test_truncate_lipschitz_unchanged(mesh16):
    w = random_zero_boundary(mesh16, 1, seed=2)[0]
    gamma = 2 * np.linalg.norm(gradient(w), axis=(1, 2)).max()
    res = truncate(w, PSIS[2.0], gamma, 8)
    np.testing.assert_array_equal(res.w_lambda.values, w.values)
    assert len(res.bad_set) == 0 and res.lip_const <= 1
    c = verify_truncation(w, res, PSIS[2.0])
    assert c.e1 <= 1 and c.e2 == 0 and c.e3 == pytest.approx(1.0)


def test_truncate_single_spike(mesh32):
    w = spike_field(mesh32, [(0.0, 0.0, 1.0)])
    res = truncate(w, PSIS[2.0], 1.0, 4)
    assert res.lam == 1.0 and len(res.bad_set) > 0
    # bad set stays inside a few cells of the spike
    reach = np.linalg.norm(mesh32.centroids[res.bad_set], axis=1).max()
    assert reach <= 6 * mesh32.h
    good = np.setdiff1d(np.arange(mesh32.n_triangles), res.bad_set)
    tri = mesh32.triangles[good]
    np.testing.assert_array_equal(res.w_lambda.values[tri], w.values[tri])
    assert res.lip_const <= 8
    np.testing.assert_array_equal(res.w_lambda.values[mesh32.boundary_nodes], 0.0)


def test_truncate_requires_zero_boundary(mesh16):
    w = FieldP1(mesh16, np.ones((mesh16.n_vertices, 2)))
    with pytest.raises(ValueError):
        truncate(w, PSIS[2.0], 1.0)


def test_truncate_default_gamma(mesh32):
    w = random_zero_boundary(mesh32, 1, seed=8)[0]
    res = truncate(w, PSIS[2.0])
    assert res.gamma == pytest.approx(np.median(np.linalg.norm(gradient(w), axis=(1, 2))))


def test_clamp_failure_reports_worst(mesh32):
    # a smooth bump gives the fill nonconstant ring data; a tiny cap with no rounds fails
    w = spike_field(mesh32, [(0.0, 0.0, 1.0)], bump=0.2)
    with pytest.raises(TruncationError) as info:
        truncate(w, PSIS[2.0], 1.0, 1, factor=1e-3, rounds=0)
    tri, worst = info.value.worst
    assert 0 <= tri < mesh32.n_triangles and worst > 0


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_spike_corpus_constants(mesh32, p):
    psi = PSIS[p]
    for name, w in spike_corpus(mesh32).items():
        sums = []
        for m0 in (4, 8, 16):
            res = truncate(w, psi, 1.0, m0)
            c = verify_truncation(w, res, psi)
            assert res.gamma <= res.lam <= 2 ** m0 * res.gamma
            assert c.e1 <= 8 and c.e3 <= 10, name
            assert c.e2 <= c.pigeonhole_sum + 1e-12
            sums.append(c.pigeonhole_sum)
            again = truncate(res.w_lambda, psi, res.lam, m0)
            assert len(again.bad_set) == 0
            np.testing.assert_array_equal(again.w_lambda.values, res.w_lambda.values)
        assert max(sums) <= 10, name


@settings(max_examples=15)
@given(st.floats(0.5, 20.0), st.integers(1, 12))
def test_truncation_level_bracket(height, m0):
    mesh = build_mesh(1.0, 1 / 8)
    w = spike_field(mesh, [(0.25, -0.25, height)])
    res = truncate(w, PSIS[2.0], 1.0, m0)
    assert 1.0 <= res.lam <= 2.0 ** m0
    assert res.lip_const <= 8 + 1e-9
    np.testing.assert_array_equal(res.w_lambda.values[mesh.boundary_nodes], 0.0)
