import numpy as np
import pytest

from dislo import images
from dislo.atoms import AtomicMeasure
from dislo.geometry import Domain
from dislo.renormalized import (AnisotropyQ, PuncturedDomain, RenormEvaluator,
                                continuity_check_punctured, get_solver, grad_W,
                                harmonic_correction, in_K, min_separation, renorm_energy_aniso,
                                renorm_energy_iso)

DISK = Domain.regular_polygon(1024)
H = 1 / 64


def test_images_oracle_closed_forms():
    a = np.array([0.5, 0.0])
    R = images.disk_regular_part([a], [a], [1])[0]
    assert R == pytest.approx(-np.log(0.75))
    assert images.disk_energy([a], [1]) == pytest.approx(np.pi * np.log(0.75))
    assert images.disk_single_atom_energy(0.5) == pytest.approx(-0.90378, abs=1e-5)
    # off-centre disk of radius 2: translation covariance, and dilation adds pi log 2
    c = np.array([3.0, -2.0])
    assert images.disk_energy([a * 2 + c], [1], c, 2.0) == pytest.approx(
        np.pi * np.log(0.75) + np.pi * np.log(2.0))


def test_images_regular_part_is_boundary_extension():
    atoms = np.array([[0.3, 0.1], [-0.2, 0.4]])
    d = np.array([1, -1])
    th = np.linspace(0, 2 * np.pi, 50)
    circle = np.column_stack([np.cos(th), np.sin(th)])
    R = images.disk_regular_part(circle, atoms, d)
    ref = -sum(dk * np.log(np.linalg.norm(circle - z, axis=1)) for z, dk in zip(atoms, d))
    np.testing.assert_allclose(R, ref, atol=1e-12)


def test_zero_boundary_data_gives_zero():
    R = harmonic_correction(AtomicMeasure.dirac([0, 0]), Domain.regular_polygon(256), H)
    pts = np.random.default_rng(1).uniform(-0.5, 0.5, (20, 2))
    assert np.abs(R(pts)).max() < 2e-4


def test_regular_part_single_atom():
    R = harmonic_correction(AtomicMeasure.dirac([0.5, 0.0]), DISK, H)
    assert R([[0.5, 0.0]])[0] == pytest.approx(-np.log(0.75), abs=1e-5)


def test_solver_residual():
    s = get_solver(DISK, H)
    b = s.boundary_nodes
    g = -np.log(np.linalg.norm(b - [0.2, 0.1], axis=1))
    U = s.solve(g)
    assert s.residual(U, g) < 1e-10


def test_self_convergence_order():
    vals = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        R = harmonic_correction(AtomicMeasure.dirac([0.5, 0.0]), DISK, h)
        vals.append(R([[0.5, 0.0]])[0])
    order = np.log2(abs(vals[0] - vals[1]) / abs(vals[1] - vals[2]))
    assert order >= 1.8


def test_iso_energy_disk_oracles():
    e = renorm_energy_iso(AtomicMeasure.dirac([0, 0]), DISK, H)
    assert abs(e.calW) < 1e-3
    e = renorm_energy_iso(AtomicMeasure.dirac([0.5, 0]), DISK, H)
    assert e.calW == pytest.approx(images.disk_single_atom_energy(0.5), abs=1e-3)
    assert e.W == pytest.approx(e.calW / (2 * np.pi ** 2))
    for t in (0.2, 0.4):
        nu = AtomicMeasure([[t, 0], [-t, 0]], [1, -1])
        assert renorm_energy_iso(nu, DISK, H).calW == pytest.approx(
            images.disk_dipole_energy(t), abs=1e-3)


def test_iso_energy_random_pairs(rng):
    for _ in range(5):
        r = rng.uniform(0.1, 0.6, 2)
        th = rng.uniform(0, 2 * np.pi, 2)
        pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
        if np.linalg.norm(pts[0] - pts[1]) < 0.1:
            continue
        d = rng.choice([-1, 1], 2)
        got = renorm_energy_iso(AtomicMeasure(pts, d), DISK, H).calW
        assert got == pytest.approx(images.disk_energy(pts, d), abs=1e-3)


def test_anisotropy_invariants():
    Q = AnisotropyQ(np.array([[3.0, 1.0], [1.0, 2.0]]))
    assert np.linalg.det(Q.Qt) == pytest.approx(1.0)
    np.testing.assert_allclose(Q.Qt_half @ Q.Qt_half, Q.Qt, atol=1e-12)
    np.testing.assert_allclose(Q.Qt_half @ Q.Qt_inv_half, np.eye(2), atol=1e-12)
    assert Q.lam == pytest.approx(np.sqrt(5.0))
    with pytest.raises(ValueError):
        AnisotropyQ(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        AnisotropyQ(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_aniso_identity_and_scalar():
    omega = Domain.unit_square()
    mu = AtomicMeasure([[0.3, 0.4], [0.6, 0.6]], [1, -1])
    iso = renorm_energy_iso(mu, omega, H).W
    assert renorm_energy_aniso(mu, RenormEvaluator(omega, H)) == pytest.approx(iso, abs=1e-14)
    assert renorm_energy_aniso(mu, RenormEvaluator(omega, H, 4 * np.eye(2))) \
        == pytest.approx(4 * iso, abs=1e-12)


def test_aniso_change_of_variables_against_images():
    # the ellipse Qt^{1/2}(disk) is mapped back onto the disk by Qt^{-1/2}
    Q = AnisotropyQ(np.diag([4.0, 1.0]))
    assert Q.lam == pytest.approx(2.0)
    np.testing.assert_allclose(Q.Qt, np.diag([2.0, 0.5]))
    ellipse = DISK.transformed(Q.Qt_half)
    ev = RenormEvaluator(ellipse, H, Q)
    x = np.array([[0.3, 0.0], [-0.3, 0.0]])
    mu = AtomicMeasure(x, [1, -1])
    y = x @ Q.Qt_inv_half.T
    ref = Q.lam * images.disk_energy(y, [1, -1]) / (2 * np.pi ** 2)
    assert renorm_energy_aniso(mu, ev) == pytest.approx(ref, abs=1e-3 / (2 * np.pi ** 2) * 2)


def test_free_space_dipole_gradient():
    ev = RenormEvaluator(Domain.box(100.0), 2.0, signs=[1, -1])
    x = np.array([[0.5, 0.1], [-0.5, -0.1]])
    g = grad_W(x, ev)
    d = x[0] - x[1]
    expected = d / (np.pi * d @ d)
    np.testing.assert_allclose(g[0], expected, rtol=1e-3)
    np.testing.assert_allclose(g[1], -expected, rtol=1e-3)
    # -grad points from x1 towards x2: attraction
    assert np.dot(-g[0], x[1] - x[0]) > 0


def test_symmetric_dipole_odd_gradient():
    ev = RenormEvaluator(DISK, H, signs=[1, -1])
    g = ev.gradient([[0.3, 0.0], [-0.3, 0.0]])
    np.testing.assert_allclose(g[0], -g[1], atol=1e-9)
    assert abs(g[0, 1]) < 1e-9


def test_gradient_matches_finite_differences(rng):
    ev = RenormEvaluator(Domain.unit_square(), signs=[1, -1, 1])
    x = np.array([[0.3, 0.3], [0.6, 0.5], [0.4, 0.75]])
    assert in_K(x, ev.domain, 0.2)
    _, g = ev.energy_and_gradient(x)
    for _ in range(4):
        v = rng.normal(size=x.shape)
        s = 1e-5
        fd = (ev.energy(x + s * v) - ev.energy(x - s * v)) / (2 * s)
        assert abs(fd - np.sum(g * v)) <= 1e-4 * abs(fd)


def test_gradient_with_anisotropy_matches_fd(rng):
    ev = RenormEvaluator(Domain.unit_square(), 1 / 32, np.array([[2.0, 0.3], [0.3, 1.0]]),
                         signs=[1, -1])
    x = np.array([[0.35, 0.4], [0.6, 0.65]])
    _, g = ev.energy_and_gradient(x)
    for _ in range(3):
        v = rng.normal(size=x.shape)
        s = 1e-5
        fd = (ev.energy(x + s * v) - ev.energy(x - s * v)) / (2 * s)
        assert abs(fd - np.sum(g * v)) <= 1e-4 * abs(fd)


def test_sign_flip_and_translation():
    omega = Domain.unit_square()
    mu = AtomicMeasure([[0.3, 0.4], [0.6, 0.6], [0.5, 0.2]], [1, -1, 1])
    neg = AtomicMeasure(mu.points, -mu.weights)
    ev = RenormEvaluator(omega, 1 / 32)
    assert ev.measure_energy(neg) == pytest.approx(ev.measure_energy(mu), abs=1e-12)
    shift = np.array([2.5, -1.0])
    moved = Domain(omega.rings[0] + shift)
    ev2 = RenormEvaluator(moved, 1 / 32)
    assert ev2.measure_energy(mu.translated(shift)) == pytest.approx(ev.measure_energy(mu),
                                                                     abs=1e-9)


def test_evaluation_errors():
    omega = Domain.unit_square()
    with pytest.raises(ValueError):
        renorm_energy_iso(AtomicMeasure.dirac([0.01, 0.5]), omega, H)
    ev = RenormEvaluator(omega, H, signs=[1, -1])
    with pytest.raises(ValueError):
        ev.energy([[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ValueError):
        ev.energy([[0.5, 0.5]])
    assert not ev.admissible([[0.5, 0.5], [0.999, 0.5]])


def test_min_separation_and_K():
    omega = Domain.unit_square()
    x = np.array([[0.5, 0.35], [0.5, 0.65]])
    assert min_separation(x, Domain.box(1.0, (0.5, 0.5)).transformed(np.eye(2))) \
        == pytest.approx(0.3)
    assert min_separation([[0.2, 0.5]], omega) == pytest.approx(0.2)
    assert in_K(x, omega, 0.3) and in_K(x, omega, 0.1)
    assert not in_K(x, omega, 0.31)


def test_punctured_continuity_table():
    mu = AtomicMeasure([[0.3, 0.5], [0.5, 0.5]], [1, -1])
    nu = AtomicMeasure.dirac([0.75, 0.7])
    rows = continuity_check_punctured(mu, nu, Domain.unit_square(), [0.2, 0.1, 0.05, 0.025],
                                      h=1 / 64)
    dev = [r["deviation"] for r in rows]
    assert np.all(np.diff(dev) < 0)
    assert dev[-1] < 1e-2


def test_punctured_empty_and_errors():
    mu = AtomicMeasure([[0.3, 0.5]], [1])
    rows = continuity_check_punctured(mu, AtomicMeasure.empty(), Domain.unit_square(),
                                      [0.2, 0.1], h=1 / 32)
    assert rows[0]["value"] == rows[1]["value"] == rows[0]["reference"]
    with pytest.raises(ValueError):
        continuity_check_punctured(mu, mu, Domain.unit_square(), [0.1], h=1 / 32)
    with pytest.raises(ValueError):
        PuncturedDomain(Domain.unit_square(), ((0.05, 0.5),), 0.1).domain
    with pytest.raises(ValueError):
        PuncturedDomain(Domain.unit_square(), ((0.4, 0.5), (0.6, 0.5)), 0.15).domain
