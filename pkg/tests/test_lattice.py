import itertools

import numpy as np
import pytest

from dislo.geometry import Domain
from dislo.lattice import (EmptyMeshError, LatticeSpec, build_triangulation, clip,
                           make_mesh)


def _edges(P):
    return np.linalg.norm(P[:, [1, 2, 0]] - P, axis=-1)


def test_square_cell_two_right_isosceles():
    spec = LatticeSpec.square()
    tri = build_triangulation(spec)
    assert len(tri.triangles) == 2
    for t in spec.points(tri.triangles):
        e = np.sort(np.linalg.norm(t[[1, 2, 0]] - t, axis=1))
        np.testing.assert_allclose(e, [1, 1, np.sqrt(2)])


def test_triangular_cell_two_equilateral():
    spec = LatticeSpec.triangular()
    tri = build_triangulation(spec)
    assert len(tri.triangles) == 2
    for t in spec.points(tri.triangles):
        np.testing.assert_allclose(np.linalg.norm(t[[1, 2, 0]] - t, axis=1), 1.0)


def test_triangular_bonds_are_nearest_neighbours():
    mesh = make_mesh(Domain.box(2.0), 0.25, LatticeSpec.triangular())
    lengths = np.linalg.norm(mesh.bond_vectors, axis=1)
    np.testing.assert_allclose(lengths, 0.25)


def test_collinear_generators_rejected():
    with pytest.raises(ValueError):
        LatticeSpec((1.0, 0.0), (2.0, 0.0))


def test_duplicate_translations_rejected():
    with pytest.raises(ValueError):
        LatticeSpec((1, 0), (0, 1), ((0, 0), (1, 0)))


def test_triangulation_deterministic():
    a = build_triangulation(LatticeSpec.honeycomb()).triangles
    b = build_triangulation(LatticeSpec.honeycomb()).triangles
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("factory", [LatticeSpec.square, LatticeSpec.triangular,
                                     LatticeSpec.honeycomb])
def test_periodic_patch_translation_invariant(factory):
    spec = factory()
    tri = build_triangulation(spec)
    patch = tri.patch(3)
    as_sets = {frozenset(map(tuple, t.tolist())) for t in patch}
    for shift in ((1, 0), (0, 1)):
        moved = patch.copy()
        moved[..., 1] += shift[0]
        moved[..., 2] += shift[1]
        inner = [t for t in moved
                 if np.all(np.abs(t[:, 1]) <= 2) and np.all(np.abs(t[:, 2]) <= 2)]
        assert inner
        for t in inner:
            assert frozenset(map(tuple, t.tolist())) in as_sets


@pytest.mark.parametrize("factory", [LatticeSpec.square, LatticeSpec.triangular,
                                     LatticeSpec.honeycomb])
def test_patch_tiles_without_overlap(factory):
    spec = factory()
    tri = build_triangulation(spec)
    P = spec.points(tri.triangles)
    cell_area = abs(np.linalg.det(spec.matrix))
    x = P[:, 1] - P[:, 0]
    y = P[:, 2] - P[:, 0]
    areas = 0.5 * (x[:, 0] * y[:, 1] - x[:, 1] * y[:, 0])
    assert np.all(areas > 0)
    # triangles per cell cover exactly one cell; with positive orientation this
    # rules out overlaps for a periodic family
    assert areas.sum() == pytest.approx(cell_area)


def _enumerate_square_counts(n):
    """Independent count: every cell of an n x n grid gives two triangles."""
    tris = set()
    nodes = set()
    for a, b in itertools.product(range(n), repeat=2):
        tris.add(((a, b), (a + 1, b), (a + 1, b + 1)))
        tris.add(((a, b), (a + 1, b + 1), (a, b + 1)))
        nodes.update({(a, b), (a + 1, b), (a, b + 1), (a + 1, b + 1)})
    return len(tris), len(nodes)


def test_unit_square_quarter_counts(unit_square):
    mesh = make_mesh(unit_square, 0.25)
    assert _enumerate_square_counts(4) == (32, 25)
    assert (mesh.n_triangles, mesh.n_nodes) == (32, 25)
    assert mesh.n_bonds == 16 * 3 + 8


def test_empty_mesh_error(unit_square):
    with pytest.raises(EmptyMeshError):
        make_mesh(unit_square, 2.0)
    with pytest.raises(ValueError):
        make_mesh(unit_square, 0.0)


def test_triangle_count_monotone_in_epsilon(unit_square):
    counts = [make_mesh(unit_square, e).n_triangles for e in (1 / 8, 1 / 4, 1 / 2)]
    assert counts == sorted(counts, reverse=True)
    assert counts == [128, 32, 8]


@pytest.mark.parametrize("spec", [LatticeSpec.square(), LatticeSpec.triangular(),
                                  LatticeSpec.honeycomb()])
def test_clipped_mesh_invariants(spec):
    omega = Domain.regular_polygon(9, 1.0)
    mesh = clip(spec, build_triangulation(spec), omega, 0.1)
    assert np.all(mesh.signed_areas > 0)
    # every triangle inside the closed domain
    P = mesh.nodes[mesh.triangles].reshape(-1, 2)
    assert np.all(omega.contains(P, tol=1e-12))
    # bonds and triangle edges coincide
    e = np.sort(np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]],
                                mesh.triangles[:, [2, 0]]]), axis=1)
    assert {tuple(x) for x in e.tolist()} == {tuple(x) for x in mesh.bonds.tolist()}
    assert np.all(mesh.bonds[:, 0] < mesh.bonds[:, 1])
    np.testing.assert_allclose(mesh.barycenters, mesh.nodes[mesh.triangles].mean(1))
    # incidence signs agree with the stored orientation
    t = mesh.triangles
    starts, ends = t, t[:, [1, 2, 0]]
    np.testing.assert_array_equal(mesh.bonds[mesh.tri_bonds].min(-1), np.minimum(starts, ends))
    np.testing.assert_array_equal(mesh.tri_signs == 1, starts < ends)


def test_mesh_json_keys(mesh8):
    data = mesh8.to_json()
    assert set(data) == {"epsilon", "nodes", "bonds", "triangles", "barycenters"}
    assert len(data["triangles"]) == mesh8.n_triangles


def test_locate_barycenters(mesh8):
    idx = np.arange(0, mesh8.n_triangles, 7)
    np.testing.assert_array_equal(mesh8.locate(mesh8.barycenters[idx]), idx)
    assert mesh8.locate([[0.5 + 1e-3, 0.5]])[0] == -1
