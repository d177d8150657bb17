import numpy as np
import pytest

from visco2d import contact as c
from visco2d import geometry as g
from visco2d import material as m
from visco2d.solver import (IncrementalProblem, SolverFailure, SolverSettings, problem_scales,
                            solve_incremental)

MP = m.MaterialParams(mu=5.0, c2=1.0, nu=1.0)


def _settings(mesh, mp=MP, gravity=(0.0, 0.0), **kw):
    return SolverSettings.scaled(problem_scales(mesh, mp, gravity=gravity), mesh, **kw)


def _body_force(mesh, mp, gvec):
    return (mp.rho * mesh.lumped_area[:, None] * np.asarray(gvec)[None, :]).ravel()


@pytest.fixture(scope="module")
def cantilever():
    mesh = g.rectangle(1.0, 0.25, 8, 2)
    left = np.flatnonzero(mesh.vertices[:, 0] == 0.0)
    return mesh.with_dirichlet(left)


@pytest.fixture(scope="module")
def pressed_disc():
    mesh = g.disc(1.0, 4, center=(0.0, 1.0 + 1e-3))
    f = _body_force(mesh, MP, (0.0, -0.5))
    prob = IncrementalProblem(mesh, MP, mesh.vertices, tau=0.1, f_ext=f, obstacles=[g.HalfPlane((0.0, 1.0))])
    res = solve_incremental(prob, _settings(mesh, gravity=(0.0, -0.5)))
    return mesh, f, prob, res


def test_identity_stays_identity():
    mesh = g.disc(1.0, 4)
    prob = IncrementalProblem(mesh, MP, mesh.vertices, tau=0.1)
    res = solve_incremental(prob, _settings(mesh))
    assert np.abs(res.x - mesh.vertices.ravel()).max() < 1e-14
    assert len(res.contact_force) == 0
    assert res.kkt_residual < 1e-12
    assert res.descent <= 0.0


def test_small_load_satisfies_stationarity(cantilever):
    mesh = cantilever
    f = _body_force(mesh, MP, (0.0, -0.05))
    prob = IncrementalProblem(mesh, MP, mesh.vertices, tau=0.2, f_ext=f)
    s = _settings(mesh, gravity=(0.0, -0.05))
    res = solve_incremental(prob, s)
    # DE(eta_k) + D2R(eta_{k-1}, (eta_k - eta_{k-1})/tau) = f on the free dofs
    d = res.x - prob.x_prev
    resid = m.energy_gradient(mesh, res.x, MP) + 2.0 * (prob.K @ d) / prob.tau - f
    assert np.abs(resid[prob.free]).max() <= s.tol_kkt
    assert np.abs(d).max() > 1e-4
    assert np.all(d[prob.fixed] == 0.0)
    assert res.descent <= 1e-10 * problem_scales(mesh, MP).energy
    # applied load plus reactions balance exactly in statics
    total = f.reshape(-1, 2).sum(0) + res.reactions.sum(0)
    assert np.linalg.norm(total) <= 1e-8 * np.linalg.norm(f.reshape(-1, 2).sum(0))


def test_pressed_disc_force_balance(pressed_disc):
    mesh, f, prob, res = pressed_disc
    load = f.reshape(-1, 2).sum(0)
    force = res.contact_force.nodal(mesh.n_vertices).sum(0)
    assert np.linalg.norm(force + load) <= 1e-6 * np.linalg.norm(load)
    assert np.all(res.lam >= 0)
    assert np.all(res.evaluation.gap > 0)
    assert np.all(g.det2(g.deformation_gradients(mesh, res.x)) > 0)
    assert m.energy_parts(mesh, res.x, MP).feasible


def test_pressed_disc_normality_and_complementarity(pressed_disc):
    mesh, f, prob, res = pressed_disc
    scale = problem_scales(mesh, MP, gravity=(0.0, -0.5))
    force = res.contact_force
    sig = c.significant(force, scale.force)
    assert sig.sum() >= 1
    assert np.all(c.normal_angles(mesh, res.x, force)[sig] < 5.0)
    assert np.allclose(force.direction, [0.0, 1.0])
    s = _settings(mesh, gravity=(0.0, -0.5))
    assert np.all(res.lam * res.evaluation.gap <= 1.01 * s.mu_min)


def test_variational_inequality_on_tangent_cone(pressed_disc):
    mesh, f, prob, res = pressed_disc
    s = _settings(mesh, gravity=(0.0, -0.5))
    grad = prob.gradient(res.x).reshape(-1, 2)
    rng = np.random.default_rng(0)
    witnesses = res.constraints.witness
    d = g.Deformation(mesh, res.x)
    contacts = c.ContactSet(res.constraints, res.evaluation.gap, res.evaluation)
    for _ in range(50):
        phi = rng.normal(size=(mesh.n_vertices, 2))
        phi[witnesses, 1] = np.abs(phi[witnesses, 1])
        assert c.tangent_cone_violation(d, contacts, phi) >= 0
        assert np.sum(grad * phi) >= -s.tol_kkt * np.linalg.norm(phi)


def test_tau_refinement_first_order(cantilever):
    mesh = cantilever
    f = _body_force(mesh, MP, (0.0, -0.5))
    s = _settings(mesh, gravity=(0.0, -0.5))
    horizon = 0.4
    finals = []
    for n in (2, 4, 8, 16):
        x = mesh.vertices.ravel().copy()
        for _ in range(n):
            x = solve_incremental(IncrementalProblem(mesh, MP, x, tau=horizon / n, f_ext=f), s).x
        finals.append(x)
    diffs = [np.abs(a - b).max() for a, b in zip(finals, finals[1:])]
    ratios = np.array(diffs[:-1]) / np.array(diffs[1:])
    assert np.all(np.array(diffs) > 0)
    assert np.all((ratios > 1.6) & (ratios < 2.6))


def test_settings_are_relative_to_scales():
    mesh = g.disc(1.0, 3)
    sc = problem_scales(mesh, MP)
    s = SolverSettings.scaled(sc, mesh, tol_kkt=1e-7, max_newton=10)
    assert s.mu_min == pytest.approx(1e-10 * sc.energy)
    assert s.tol_kkt == pytest.approx(1e-7 * sc.force)
    assert s.eps_act == pytest.approx(0.02 * mesh.min_edge_length)
    assert s.max_newton == 10
    with pytest.raises(TypeError):
        SolverSettings.scaled(sc, mesh, tolerance=1.0)


def test_newton_budget_exhaustion_is_reported(cantilever):
    mesh = cantilever
    f = _body_force(mesh, MP, (0.0, -5.0))
    prob = IncrementalProblem(mesh, MP, mesh.vertices, tau=0.2, f_ext=f)
    with pytest.raises(SolverFailure):
        solve_incremental(prob, _settings(mesh, gravity=(0.0, -5.0), max_newton=1))
