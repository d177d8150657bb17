import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from visco2d import geometry as g
from visco2d import material as m

MP = m.MaterialParams(mu=1.0, lam=0.3, c1=0.1, a=16.0, c2=0.05, p=4.0, nu=0.7)


@pytest.fixture(scope="module")
def mesh():
    return g.disc(1.0, 5)


def _rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _perturbed(mesh, rng, amp=0.03):
    return mesh.vertices + amp * rng.normal(size=mesh.vertices.shape)


def _fd_best(f, x, direction, steps=(1e-4, 1e-5, 1e-6, 1e-7)):
    return [(f(x + h * direction) - f(x - h * direction)) / (2 * h) for h in steps]


def test_identity_is_zero(mesh):
    e = m.energy_parts(mesh, mesh.vertices, MP)
    # F is formed from irrational coordinates, so zero holds to round-off
    assert max(abs(e.elastic), abs(e.barrier), abs(e.second_gradient), abs(e.total)) < 1e-14
    unit = g.rectangle(1.0, 1.0, 4, 4)
    assert m.energy(unit, unit.vertices, MP) == 0.0
    assert np.abs(m.energy_gradient(mesh, mesh.vertices, MP)).max() < 1e-13


def test_rotation_is_zero(mesh):
    for theta in (0.3, 1.7, -2.9):
        x = mesh.vertices @ _rotation(theta).T + [0.4, -1.0]
        assert abs(m.energy(mesh, x, MP)) < 1e-12
        assert np.abs(m.energy_gradient(mesh, x, MP)).max() < 1e-11


def test_uniform_scaling_closed_form():
    unit = g.rectangle(1.0, 1.0, 3, 3)
    mp = m.MaterialParams(mu=1.0, lam=0.0, c1=0.25, a=16.0)
    e = m.elastic_energy(g.Deformation(unit, 2.0 * unit.vertices), mp)
    assert e.elastic == pytest.approx(18.0, abs=1e-12)
    assert e.barrier == pytest.approx(0.25 * (4.0 ** -16 + 16 * 4.0 - 17.0), abs=1e-12)
    assert e.second_gradient == pytest.approx(0.0, abs=1e-12)
    assert e.total == e.elastic + e.barrier + e.second_gradient


def test_infeasible_sentinel(mesh):
    x = mesh.vertices.copy()
    x[:, 0] *= -1.0
    e = m.energy_parts(mesh, x, MP)
    assert e.total == np.inf and not e.feasible
    assert 0 <= e.infeasible_triangle < mesh.n_triangles
    with pytest.raises(m.InfeasibleDeformation):
        m.energy_gradient(mesh, x, MP)


def test_energy_gradient_matches_finite_differences(mesh):
    rng = np.random.default_rng(10)
    x = _perturbed(mesh, rng).ravel()
    grad = m.energy_gradient(mesh, x, MP)
    f = lambda y: m.energy(mesh, y, MP)
    for _ in range(5):
        v = rng.normal(size=x.size)
        exact = grad @ v
        best = min(abs(fd - exact) / abs(exact) for fd in _fd_best(f, x, v))
        assert best < 1e-6


def test_energy_hessian_matches_gradient_differences(mesh):
    rng = np.random.default_rng(11)
    x = _perturbed(mesh, rng).ravel()
    H = m.energy_hessian(mesh, x, MP, project=False)
    for _ in range(3):
        v = rng.normal(size=x.size)
        h = 1e-6
        fd = (m.energy_gradient(mesh, x + h * v, MP) - m.energy_gradient(mesh, x - h * v, MP)) / (2 * h)
        assert np.linalg.norm(fd - H @ v) <= 1e-6 * np.linalg.norm(H @ v)


def test_projected_hessian_is_psd(mesh):
    rng = np.random.default_rng(12)
    x = _perturbed(mesh, rng, 0.08).ravel()
    H = m.energy_hessian(mesh, x, MP).toarray()
    assert np.allclose(H, H.T, atol=1e-10)
    assert np.linalg.eigvalsh(H).min() > -1e-9 * np.abs(H).max()


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31 - 1))
def test_frame_invariance_property(theta, cx, cy, seed):
    mesh = g.disc(1.0, 3)
    x = _perturbed(mesh, np.random.default_rng(seed), 0.05)
    e0 = m.energy(mesh, x, MP)
    e1 = m.energy(mesh, x @ _rotation(theta).T + [cx, cy], MP)
    assert abs(e1 - e0) <= 1e-10 * (1 + abs(e0))


def test_barrier_blows_up_under_compression():
    tri = g.mesh_from_triangles([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    mp = m.MaterialParams()
    dets = np.geomspace(0.99, 1e-3, 40)
    vals = [m.energy_parts(tri, np.array([[0, 0], [1, 0], [0, s]]), mp).barrier for s in dets]
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] > 1e40


def test_dissipation_axioms(mesh):
    rng = np.random.default_rng(13)
    d = g.Deformation(mesh, _perturbed(mesh, rng))
    b = g.VelocityField(mesh, rng.normal(size=(mesh.n_vertices, 2)))
    R = m.dissipation(d, b, MP)
    assert R > 0
    assert m.dissipation(d, g.VelocityField(mesh, np.zeros_like(b.values)), MP) == 0.0
    assert m.dissipation(d, g.VelocityField(mesh, 3.0 * b.values), MP) == pytest.approx(9.0 * R, rel=1e-12)
    D = m.dissipation_gradient(d, b, MP)
    assert np.allclose(m.dissipation_gradient(d, g.VelocityField(mesh, 3.0 * b.values), MP), 3.0 * D,
                       rtol=1e-12, atol=1e-14 * np.abs(D).max())
    assert np.sum(D * b.values) == pytest.approx(2.0 * R, rel=1e-10)
    assert np.abs(m.dissipation_gradient(d, g.VelocityField(mesh, np.zeros_like(b.values)), MP)).max() == 0.0


def test_dissipation_gradient_finite_differences(mesh):
    rng = np.random.default_rng(14)
    d = g.Deformation(mesh, _perturbed(mesh, rng))
    b = rng.normal(size=(mesh.n_vertices, 2))
    D = m.dissipation_gradient(d, g.VelocityField(mesh, b), MP)
    f = lambda y: m.dissipation(d, g.VelocityField(mesh, y.reshape(-1, 2)), MP)
    for _ in range(5):
        v = rng.normal(size=b.shape)
        exact = np.sum(D * v)
        best = min(abs(fd - exact) / abs(exact) for fd in _fd_best(f, b.ravel(), v.ravel()))
        assert best < 1e-6


def test_dissipation_matrix_consistent(mesh):
    rng = np.random.default_rng(15)
    x = _perturbed(mesh, rng)
    b = rng.normal(size=x.size)
    K = m.dissipation_matrix(mesh, x, MP)
    assert b @ (K @ b) == pytest.approx(m.dissipation_value(mesh, x, b, MP), rel=1e-12)


def test_infinitesimal_rigid_motions_dissipate_nothing(mesh):
    rng = np.random.default_rng(16)
    W = np.array([[0.0, -1.3], [1.3, 0.0]])
    ident = g.Deformation.identity(mesh)
    assert abs(m.dissipation(ident, g.VelocityField(mesh, mesh.vertices @ W.T), MP)) < 1e-24
    # skew times the deformed gradient: b = W eta + c
    d = g.Deformation(mesh, _perturbed(mesh, rng, 0.1))
    b = d.positions @ W.T + [0.2, -0.7]
    assert abs(m.dissipation(d, g.VelocityField(mesh, b), MP)) < 1e-20


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-4, 4))
def test_dissipation_homogeneity_property(seed, lam):
    mesh = g.disc(1.0, 2)
    rng = np.random.default_rng(seed)
    x = _perturbed(mesh, rng)
    b = rng.normal(size=x.size)
    R = m.dissipation_value(mesh, x, b, MP)
    assert R >= 0
    assert m.dissipation_value(mesh, x, lam * b, MP) == pytest.approx(lam**2 * R, rel=1e-12, abs=1e-300)


def test_korn_eigenvalue_positive(mesh):
    for x in (mesh.vertices, _perturbed(mesh, np.random.default_rng(17), 0.05)):
        assert m.korn_constant(g.Deformation(mesh, x), MP) > 0


def test_parameter_validation():
    with pytest.raises(ValueError):
        m.MaterialParams(mu=-1.0)
    with pytest.raises(ValueError):
        m.MaterialParams(p=2.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        m.MaterialParams(a=3.0)
    assert any("injectivity" in str(w.message) for w in caught)
