import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from visco2d import contact as c
from visco2d import geometry as g


def _squares(dx=0.0, n=3):
    return g.compose(g.rectangle(1, 1, n, n), g.rectangle(1, 1, n, n), offsets=[(0, 0), (1 + dx, 0)])


def test_flat_normal_and_scaling():
    sq = g.rectangle(1, 1, 4, 4)
    bottom = int(np.flatnonzero((sq.vertices[:, 1] == 0) & (sq.vertices[:, 0] == 0.5))[0])
    d = g.Deformation.identity(sq)
    assert np.allclose(c.interior_normal(d, bottom), [0, 1], atol=1e-15)
    assert np.allclose(c.interior_normal(g.Deformation(sq, 2 * sq.vertices), bottom), [0, 1], atol=1e-15)
    with pytest.raises(ValueError):
        c.interior_normal(d, int(np.flatnonzero((sq.vertices == [0.5, 0.5]).all(1))[0]))


@pytest.mark.parametrize("gamma", [0.3, -1.1, 2.0])
def test_shear_normal_hand_cofactor(gamma):
    sq = g.rectangle(1, 1, 4, 4)
    bottom = int(np.flatnonzero((sq.vertices[:, 1] == 0) & (sq.vertices[:, 0] == 0.5))[0])
    # F = [[1, 0], [gamma, 1]]: cof F = [[1, -gamma], [0, 1]], so cof F (0, 1) = (-gamma, 1)
    F = np.array([[1.0, 0.0], [gamma, 1.0]])
    n = c.interior_normal(g.Deformation(sq, sq.vertices @ F.T), bottom)
    assert np.allclose(n, np.array([-gamma, 1.0]) / np.hypot(gamma, 1.0), atol=1e-14)
    # F = [[1, gamma], [0, 1]] slides the bottom edge along itself
    F = np.array([[1.0, gamma], [0.0, 1.0]])
    n = c.interior_normal(g.Deformation(sq, sq.vertices @ F.T), bottom)
    assert np.allclose(n, [0.0, 1.0], atol=1e-14)


def _bent(strip, radius=1.5):
    V = strip.vertices
    th = V[:, 0] / radius
    r = radius - V[:, 1]
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


@pytest.mark.parametrize("d", ["square", "bent"])
def test_almost_normal_conditions(d):
    if d == "square":
        mesh = g.rectangle(1, 1, 6, 6)
        x = mesh.vertices
    else:
        mesh = g.rectangle(3.0, 0.3, 30, 3)
        x = _bent(mesh)
    res = c.almost_normal(g.Deformation(mesh, x))
    n = c.vertex_normals(mesh, x)
    bnd = mesh.boundary_vertices
    assert np.linalg.norm(res.field, axis=1).max() <= 1.0 + 1e-15
    assert np.einsum("vi,vi->v", res.field[bnd], n[bnd]).min() > 0.5
    assert not res.fallback


def _brute_force(mesh, x, radius, cutoff):
    """All vertex-edge pairs by exhaustive search with independent filters."""
    loops = mesh.boundary_loops
    where = {}
    for li, loop in enumerate(loops):
        for k, v in enumerate(loop.tolist()):
            where[v] = (li, k, len(loop))
    third = {}
    for t in mesh.triangles.tolist():
        for i in range(3):
            third[frozenset((t[i], t[(i + 1) % 3]))] = t[(i + 2) % 3]
    out = {}
    for e, (a, b) in enumerate(mesh.boundary_edges.tolist()):
        for w in mesh.boundary_vertices.tolist():
            if w in (a, b):
                continue
            lw, kw, n = where[w]
            la, ka, _ = where[a]
            lb, kb, _ = where[b]
            hop = lambda i, j: min(abs(i - j), n - abs(i - j))
            if lw == la and (hop(kw, ka) <= cutoff or hop(kw, kb) <= cutoff):
                continue
            A, B, W = x[a], x[b], x[w]
            t = np.clip((W - A) @ (B - A) / ((B - A) @ (B - A)), 0, 1)
            q = A + t * (B - A)
            dist = np.linalg.norm(W - q)
            inward = x[third[frozenset((a, b))]] - A
            nrm = np.array([-(B - A)[1], (B - A)[0]])
            nrm *= np.sign(nrm @ inward)
            if dist <= radius and (W - q) @ nrm <= 0:
                out[(w, e)] = dist
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_find_constraints_matches_brute_force(seed):
    mesh = g.two_discs(0.5, 4, 1.02)
    rng = np.random.default_rng(seed)
    x = mesh.vertices + 0.01 * rng.normal(size=mesh.vertices.shape)
    radius = 0.15
    cs, ev = c.find_constraints(mesh, x, [], radius, cutoff=3)
    got = {(int(w), int(e)): gap for w, e, gap in zip(cs.witness, cs.edge, ev.gap)}
    ref = _brute_force(mesh, x, radius, 3)
    assert set(got) == set(ref)
    for k in ref:
        assert got[k] == pytest.approx(ref[k], abs=1e-14)


def test_far_ball_has_no_contacts():
    ball = g.disc(1.0, 4, center=(3.0, 0.0))
    cs = c.detect_contacts(g.Deformation.identity(ball), [g.HalfPlane((1.0, 0.0))], 0.02)
    assert len(cs) == 0


def test_tangent_ball():
    ball = g.disc(1.0, 4, center=(1.0, 0.0))
    cs = c.detect_contacts(g.Deformation.identity(ball), [g.HalfPlane((1.0, 0.0))], 0.02 * ball.min_edge_length)
    touching = np.flatnonzero(np.abs(ball.vertices[:, 0]) < 1e-12)
    assert cs.constraints.witness.tolist() == touching.tolist()
    assert np.all(cs.constraints.kind == c.OBSTACLE)
    assert np.abs(cs.gaps).max() < 1e-15


def test_squares_sharing_an_edge():
    sq = _squares()
    cs = c.detect_contacts(g.Deformation.identity(sq), [], 0.02 * sq.min_edge_length)
    shared = np.flatnonzero(np.abs(sq.vertices[:, 0] - 1.0) < 1e-12)
    assert sorted(cs.constraints.witness.tolist()) == sorted(shared.tolist())
    assert np.all(cs.constraints.kind == c.SELF)
    assert np.all(cs.gaps == 0.0)
    for w, e in zip(cs.constraints.witness, cs.constraints.edge):
        assert sq.vertex_component[w] != sq.vertex_component[sq.boundary_edges[e, 0]]


def test_gap_hessians_match_finite_differences():
    mesh = g.two_discs(0.5, 4, 1.03)
    rng = np.random.default_rng(5)
    x = mesh.vertices + 0.005 * rng.normal(size=mesh.vertices.shape)
    cs, ev = c.find_constraints(mesh, x, [], 0.1)
    H = c.gap_hessians(mesh, x, cs, ev)
    interior = np.flatnonzero((ev.t > 0.05) & (ev.t < 0.95))
    assert interior.size > 0
    h = 1e-6
    for i in interior[:10]:
        verts = ev.verts[i]
        fd = np.zeros((6, 6))
        for k in range(6):
            xp, xm = x.copy(), x.copy()
            xp[verts[k // 2], k % 2] += h
            xm[verts[k // 2], k % 2] -= h
            gp = c.evaluate_gaps(mesh, xp, cs.subset([i]), []).grads.reshape(6)
            gm = c.evaluate_gaps(mesh, xm, cs.subset([i]), []).grads.reshape(6)
            fd[:, k] = (gp - gm) / (2 * h)
        assert np.abs(fd - H[i]).max() <= 1e-6 * max(np.abs(H[i]).max(), 1.0)


def test_cn_deficit_injective_cases():
    disc = g.disc(1.0, 6)
    r = c.ciarlet_necas_deficit(g.Deformation.identity(disc))
    assert abs(r.deficit) <= r.tolerance and r.ok
    sq = g.rectangle(1, 1, 4, 4)
    r = c.ciarlet_necas_deficit(g.Deformation(sq, 2 * sq.vertices))
    assert abs(r.deficit) <= r.tolerance


def test_two_squares_onto_one():
    sq = _squares()
    x = sq.vertices.copy()
    x[sq.vertex_component == 1, 0] -= 1.0
    r = c.ciarlet_necas_deficit(g.Deformation(sq, x), 512)
    assert r.integral_det == pytest.approx(2.0)
    assert abs(r.deficit - 1.0) <= 2 * r.tolerance
    assert abs(r.deficit_coarse - 1.0) <= 2 * r.tolerance * 2
    assert not r.ok


def test_tangent_cone():
    sq = _squares(dx=1e-4)
    d = g.Deformation.identity(sq)
    contacts = c.detect_contacts(d, [], 0.02 * sq.min_edge_length)
    assert len(contacts) > 0
    assert c.tangent_cone_violation(d, contacts, np.zeros((sq.n_vertices, 2))) == 0.0
    ntilde = c.almost_normal(d).field
    assert c.tangent_cone_violation(d, contacts, ntilde) >= 0.5 - np.radians(5.0)
    push = np.where((sq.vertex_component == 0)[:, None], [1.0, 0.0], [-1.0, 0.0])
    assert c.tangent_cone_violation(d, contacts, push) < 0

    ball = g.disc(1.0, 4, center=(1.0, 0.0))
    db = g.Deformation.identity(ball)
    ob = c.detect_contacts(db, [g.HalfPlane((1.0, 0.0))], 0.02 * ball.min_edge_length)
    assert c.tangent_cone_violation(db, ob, c.almost_normal(db).field) >= 0.5 - np.radians(5.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_action_reaction_property(seed):
    mesh = g.two_discs(0.5, 3, 1.01)
    rng = np.random.default_rng(seed)
    x = mesh.vertices + 0.003 * rng.normal(size=mesh.vertices.shape)
    cs, ev = c.find_constraints(mesh, x, [], 0.08)
    lam = rng.exponential(size=len(cs)) * 10.0 ** rng.uniform(-3, 3, size=len(cs))
    f = c.assemble_contact_force(cs, ev, lam)
    assert np.all(f.magnitude >= 0)
    if len(cs):
        # each pair's atoms cancel exactly, not just to round-off
        assert np.all(f.pair_sums() == 0.0)
        net = f.nodal(mesh.n_vertices).sum(axis=0)
        assert np.linalg.norm(net) <= 8 * len(cs) * np.spacing(lam.max())


def test_gradient_slots_cancel():
    mesh = g.two_discs(0.5, 3, 1.01)
    cs, ev = c.find_constraints(mesh, mesh.vertices, [], 0.08)
    assert len(cs)
    assert np.abs(ev.grads.sum(axis=1)).max() < 1e-15


def test_obstacle_atoms_point_along_normal():
    ball = g.disc(1.0, 4, center=(1.0, 0.0))
    x = ball.vertices
    cs, ev = c.find_constraints(ball, x, [g.HalfPlane((1.0, 0.0))], 1e-3)
    f = c.assemble_contact_force(cs, ev, np.ones(len(cs)))
    assert np.all(c.normal_angles(ball, x, f) < 1e-6)
    assert np.all(c.significant(f, 1.0))
    assert not np.any(c.significant(f, 1e5))


def test_opposite_normal_defect_small_for_flush_faces():
    sq = _squares(dx=1e-4)
    d = g.Deformation.identity(sq)
    contacts = c.detect_contacts(d, [], 0.02 * sq.min_edge_length)
    defect = c.opposite_normal_defect(sq, d.positions, contacts)
    interior = np.abs(sq.vertices[contacts.constraints.witness, 1] - 0.5) < 0.4
    assert np.all(np.abs(defect[interior]) < 1e-12)
