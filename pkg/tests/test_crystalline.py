import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dislo.crystalline import (PolyhedralNorm, SubdifferentialFace, dual_norm, fenchel_residual,
                               norm, prox_half_squared, psi, select_velocity, subdifferential)

NORMS = {
    "l1": PolyhedralNorm.l1(),
    "hex": PolyhedralNorm.hexagonal(),
    "linf": PolyhedralNorm.linf(),
    "euclid": PolyhedralNorm.euclidean_norm(),
}

finite = st.floats(-10, 10, allow_nan=False)


def brute_conjugate(phi, xi, n=801, R=None):
    """sup over a grid of <xi, eta> - phi(eta)^2 / 2."""
    if R is None:
        R = 1.5 * max(1.0, phi.max_vertex_norm ** 2) * (np.abs(xi).max() + 1e-3)
    s = np.linspace(-R, R, n)
    X, Y = np.meshgrid(s, s, indexing="ij")
    E = np.stack([X, Y], axis=-1)
    return float(np.max(E @ xi - 0.5 * norm(phi, E) ** 2))


def test_l1_values():
    phi = NORMS["l1"]
    assert norm(phi, [1, 1]) == pytest.approx(2.0)
    assert dual_norm(phi, [1, 1]) == pytest.approx(1.0)
    assert dual_norm(phi, [2, 1]) == pytest.approx(2.0)


def test_euclidean_self_dual(rng):
    phi = NORMS["euclid"]
    v = rng.normal(size=(10, 2))
    np.testing.assert_allclose(norm(phi, v), dual_norm(phi, v))


def test_hexagonal_glide_directions_unit():
    phi = NORMS["hex"]
    np.testing.assert_allclose(norm(phi, phi.vertices), 1.0)


def test_psi_values():
    assert psi(NORMS["euclid"], [3, 4]) == pytest.approx(12.5)
    assert psi(NORMS["l1"], [0, 0]) == 0.0
    assert psi(NORMS["l1"], [2, 1]) == pytest.approx(2.0)
    assert brute_conjugate(NORMS["l1"], np.array([2.0, 1.0])) == pytest.approx(2.0, abs=1e-2)


def test_subdifferential_examples():
    xi = np.array([3.0, -1.0])
    f = subdifferential(NORMS["euclid"], xi)
    assert f.kind == "point"
    np.testing.assert_allclose(f.endpoints[0], xi)
    f = subdifferential(NORMS["l1"], [2, 1])
    assert f.kind == "point"
    np.testing.assert_allclose(f.endpoints[0], [2, 0])
    f = subdifferential(NORMS["l1"], [1, 1])
    assert f.kind == "segment"
    assert {tuple(np.round(p, 12)) for p in f.endpoints} == {(1.0, 0.0), (0.0, 1.0)}
    for p in f.endpoints:
        assert fenchel_residual(NORMS["l1"], [1, 1], p) == pytest.approx(0.0, abs=1e-12)
    assert subdifferential(NORMS["l1"], [0, 0]).kind == "point"


def test_select_velocity_rules():
    seg = SubdifferentialFace("segment", ((1.0, 0.0), (0.0, 1.0)))
    np.testing.assert_allclose(select_velocity(seg, "min-norm"), [0.5, 0.5])
    np.testing.assert_allclose(select_velocity(seg, "extreme-first"), [0.0, 1.0])
    np.testing.assert_allclose(select_velocity(seg, "proximal", hint=[2.0, 0.0]), [1.0, 0.0])
    pt = SubdifferentialFace("point", ((2.0, 3.0),))
    for rule in ("min-norm", "extreme-first"):
        np.testing.assert_allclose(select_velocity(pt, rule), [2.0, 3.0])
    with pytest.raises(ValueError):
        select_velocity(seg, "proximal")


def test_invalid_norms():
    with pytest.raises(ValueError):   # not symmetric
        PolyhedralNorm(np.array([[1, 0], [0, 1], [-1, 0], [0, -2]]))
    with pytest.raises(ValueError):   # (0.5, 0.5) is not an extreme point
        PolyhedralNorm(np.array([[1, 0], [0.5, 0.5], [0, 1], [-1, 0], [-0.5, -0.5], [0, -1]]))


def test_json_roundtrip():
    for phi in NORMS.values():
        back = PolyhedralNorm.from_json(phi.to_json())
        v = np.array([0.3, -1.2])
        assert norm(back, v) == pytest.approx(norm(phi, v))


@pytest.mark.parametrize("name", ["l1", "hex", "linf", "euclid"])
@settings(max_examples=20, deadline=None)
@given(x=finite, y=finite)
def test_fenchel_equality_on_faces(name, x, y):
    phi = NORMS[name]
    xi = np.array([x, y])
    face = subdifferential(phi, xi)
    for p in face.endpoints:
        assert abs(fenchel_residual(phi, xi, p)) <= 1e-10 * max(1.0, xi @ xi)
    mid = face.project(np.zeros(2))
    assert abs(fenchel_residual(phi, xi, mid)) <= 1e-10 * max(1.0, xi @ xi)


@pytest.mark.parametrize("name", ["l1", "hex", "euclid"])
@settings(max_examples=20, deadline=None)
@given(x=finite, y=finite, t=st.floats(0.01, 20))
def test_homogeneity(name, x, y, t):
    phi = NORMS[name]
    xi = np.array([x, y])
    assert psi(phi, t * xi) == pytest.approx(t * t * psi(phi, xi), rel=1e-12, abs=1e-12)
    f1 = subdifferential(phi, t * xi).array
    f2 = subdifferential(phi, xi).scaled(t).array
    np.testing.assert_allclose(np.sort(f1, axis=0), np.sort(f2, axis=0), atol=1e-9 * (1 + t))


@settings(max_examples=50, deadline=None)
@given(x=finite, y=finite)
def test_l1_glide_alignment(x, y):
    if abs(abs(x) - abs(y)) < 1e-6 * max(abs(x), abs(y), 1e-300) or x == y == 0:
        return
    z = select_velocity(subdifferential(NORMS["l1"], [x, y]))
    small = 1 if abs(x) > abs(y) else 0
    assert z[small] == 0.0


@pytest.mark.parametrize("name", ["l1", "hex", "linf", "euclid"])
def test_prox_is_minimizer(name, rng):
    phi = NORMS[name]
    for _ in range(20):
        v = rng.normal(size=2) * 3
        a = rng.uniform(0.01, 5)
        z = prox_half_squared(phi, v, a)
        obj = lambda w: 0.5 * a * norm(phi, w) ** 2 + 0.5 * np.sum((w - v) ** 2)
        # optimality: v - z in a * d(phi^2/2)(z), i.e. Fenchel equality with xi = (v - z)/a
        assert fenchel_residual(phi, (v - z) / a, z) == pytest.approx(0.0, abs=1e-10)
        for _ in range(20):
            w = z + rng.normal(scale=0.1, size=2)
            assert obj(w) >= obj(z) - 1e-12
