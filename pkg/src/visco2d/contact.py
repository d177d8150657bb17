"""Non-interpenetration: normals, gap constraints, contact detection and forces.

Self-contact is modelled by vertex-versus-boundary-edge distance constraints.
The distance gradient splits into a force ``u`` on the witness vertex and
``-(1-t) u``, ``-t u`` on the edge end points, so every pair is balanced by
construction.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .geometry import Deformation, ReferenceMesh, _rot90, cofactor, deformation_gradients

OBSTACLE = 0
SELF = 1
# Atoms below this fraction of the force scale are barrier residue from pairs
# that are near but not touching: at the smallest barrier weight mu_min,
# a pair with gap above 1e-6 of the length scale carries at most this much.
SIGNIFICANT_FORCE = 1e-4


# ---------------------------------------------------------------- normals

def edge_interior_normals(mesh: ReferenceMesh, positions) -> np.ndarray:
    """Deformed unit interior normals of the boundary edges, normalize(cof F n_Q)."""
    F = deformation_gradients(mesh, positions)[mesh.boundary_edge_tri]
    v = np.einsum("eij,ej->ei", cofactor(F), mesh.reference_edge_normals)
    nrm = np.linalg.norm(v, axis=1)
    if np.any(nrm == 0):
        raise ValueError("degenerate deformation gradient on a boundary edge")
    return v / nrm[:, None]


def vertex_normals(mesh: ReferenceMesh, positions) -> np.ndarray:
    """Interior unit normals at boundary vertices (average of the two edge normals), 0 elsewhere."""
    ne = edge_interior_normals(mesh, positions)
    inc = mesh.vertex_boundary_edges
    n = np.zeros((mesh.n_vertices, 2))
    for k in range(2):
        has = inc[:, k] >= 0
        n[has] += ne[inc[has, k]]
    nrm = np.linalg.norm(n, axis=1)
    on = nrm > 0
    n[on] /= nrm[on, None]
    return n


def interior_normal(d: Deformation, bv: int) -> np.ndarray:
    if bv not in set(d.mesh.boundary_vertices.tolist()):
        raise ValueError(f"vertex {bv} is not on the boundary")
    return vertex_normals(d.mesh, d.positions)[bv]


@dataclass
class AlmostNormal:
    field: np.ndarray
    min_dot: float
    iterations: int
    fallback: bool


def almost_normal(d: Deformation, iterations: int = 20, weight: float = 0.5) -> AlmostNormal:
    """Smooth field on all vertices with |n~| <= 1 and n~ . n_eta > 1/2 on the boundary.

    Boundary normals are extended inward by Jacobi smoothing on the vertex
    graph; boundary values are relaxed towards their neighbour average with
    ``weight``. Falls back to a nearest-boundary extension of the raw normals
    if the result violates the boundary condition.
    """
    mesh = d.mesh
    n = vertex_normals(mesh, d.positions)
    bnd = mesh.boundary_vertices
    A = mesh.vertex_neighbors
    deg = np.asarray(A.sum(axis=1)).ravel()
    field_ = n.copy()
    interior = np.ones(mesh.n_vertices, dtype=bool)
    interior[bnd] = False
    for _ in range(iterations):
        avg = (A @ field_) / deg[:, None]
        new = field_.copy()
        new[interior] = avg[interior]
        new[bnd] = (1 - weight) * n[bnd] + weight * avg[bnd]
        field_ = new
    nrm = np.linalg.norm(field_, axis=1)
    big = nrm > 1.0
    field_[big] /= nrm[big, None]
    dots = np.einsum("vi,vi->v", field_[bnd], n[bnd])
    if len(bnd) == 0 or dots.min() > 0.5:
        return AlmostNormal(field_, float(dots.min()) if len(bnd) else 1.0, iterations, False)
    # nearest boundary value extension of the raw normals
    X = d.positions
    idx = np.argmin(np.linalg.norm(X[:, None, :] - X[bnd][None], axis=2), axis=1)
    fb = n[bnd][idx]
    fb[bnd] = n[bnd]
    return AlmostNormal(fb, 1.0, iterations, True)


# ---------------------------------------------------------------- constraints

@dataclass
class ConstraintSet:
    """A fixed list of gap constraints, evaluated at arbitrary positions.

    ``kind`` is OBSTACLE or SELF; ``witness`` the boundary vertex; for SELF
    rows ``edge`` indexes ``mesh.boundary_edges``, for OBSTACLE rows
    ``obstacle`` indexes the obstacle list.
    """

    kind: np.ndarray
    witness: np.ndarray
    edge: np.ndarray
    obstacle: np.ndarray

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy(), z.copy())

    def __len__(self):
        return len(self.kind)

    def subset(self, mask) -> "ConstraintSet":
        return ConstraintSet(self.kind[mask], self.witness[mask], self.edge[mask], self.obstacle[mask])

    def keys(self) -> set:
        return {(int(k), int(w), int(e), int(o))
                for k, w, e, o in zip(self.kind, self.witness, self.edge, self.obstacle)}

    def union(self, other: "ConstraintSet") -> "ConstraintSet":
        have = self.keys()
        extra = [i for i, key in enumerate(zip(other.kind, other.witness, other.edge, other.obstacle))
                 if tuple(int(v) for v in key) not in have]
        o = other.subset(np.array(extra, dtype=np.int64))
        return ConstraintSet(np.concatenate([self.kind, o.kind]), np.concatenate([self.witness, o.witness]),
                             np.concatenate([self.edge, o.edge]), np.concatenate([self.obstacle, o.obstacle]))


@dataclass
class GapEvaluation:
    """Gap values and gradient data of a ConstraintSet at given positions.

    Gradients are stored per constraint as up to three (vertex, vector) slots;
    unused slots have vertex -1.
    """

    gap: np.ndarray
    verts: np.ndarray  # (m, 3)
    grads: np.ndarray  # (m, 3, 2)
    t: np.ndarray
    direction: np.ndarray  # (m, 2) unit force direction on the witness

    def jacobian(self, n_vertices: int) -> sp.csr_matrix:
        m = len(self.gap)
        rows = np.repeat(np.arange(m), 6)
        v = self.verts
        cols = np.stack([2 * v, 2 * v + 1], axis=-1).reshape(m, 6)
        vals = self.grads.reshape(m, 6)
        keep = (np.repeat(v, 2, axis=1) >= 0).ravel()
        return sp.csr_matrix((vals.ravel()[keep], (rows[keep], cols.ravel()[keep])),
                             shape=(m, 2 * n_vertices))


def evaluate_gaps(mesh: ReferenceMesh, positions, cs: ConstraintSet, obstacles) -> GapEvaluation:
    x = np.asarray(positions, dtype=float).reshape(-1, 2)
    m = len(cs)
    gap = np.zeros(m)
    verts = -np.ones((m, 3), dtype=np.int64)
    grads = np.zeros((m, 3, 2))
    t = np.zeros(m)
    direction = np.zeros((m, 2))
    verts[:, 0] = cs.witness
    ob_rows = np.flatnonzero(cs.kind == OBSTACLE)
    for k, ob in enumerate(obstacles):
        rows = ob_rows[cs.obstacle[ob_rows] == k]
        if rows.size:
            g, n = ob.gap(x[cs.witness[rows]])
            gap[rows] = g
            grads[rows, 0] = n
            direction[rows] = n
    srows = np.flatnonzero(cs.kind == SELF)
    if srows.size:
        e = mesh.boundary_edges[cs.edge[srows]]
        w = x[cs.witness[srows]]
        a = x[e[:, 0]]
        b = x[e[:, 1]]
        d = b - a
        tt = np.clip(np.einsum("ij,ij->i", w - a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
        q = a + tt[:, None] * d
        diff = w - q
        dist = np.linalg.norm(diff, axis=1)
        u = diff / np.where(dist > 0, dist, 1.0)[:, None]
        gap[srows] = dist
        verts[srows, 1] = e[:, 0]
        verts[srows, 2] = e[:, 1]
        grads[srows, 0] = u
        grads[srows, 1] = -(1.0 - tt)[:, None] * u
        grads[srows, 2] = -tt[:, None] * u
        t[srows] = tt
        direction[srows] = u
    return GapEvaluation(gap, verts, grads, t, direction)


def gap_hessians(mesh: ReferenceMesh, positions, cs: ConstraintSet, ev: GapEvaluation) -> np.ndarray:
    """Second derivatives of each gap w.r.t. its (witness, a, b) dofs, shape (m, 6, 6).

    Only vertex-edge rows whose closest point is interior to the edge get a
    nonzero block; there the gap is |(b - a) x (w - a)| / |b - a|, which is
    smooth away from the edge line. Obstacle and endpoint rows are zero.
    """
    x = np.asarray(positions, dtype=float).reshape(-1, 2)
    out = np.zeros((len(cs), 6, 6))
    rows = np.flatnonzero((cs.kind == SELF) & (ev.t > 0.0) & (ev.t < 1.0))
    if not rows.size:
        return out
    w = x[ev.verts[rows, 0]]
    a = x[ev.verts[rows, 1]]
    b = x[ev.verts[rows, 2]]
    e = b - a
    r = w - a
    c = e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0]
    s = np.where(c >= 0.0, 1.0, -1.0)
    L = np.linalg.norm(e, axis=1)
    k = rows.size
    dc = np.zeros((k, 6))
    dc[:, 0:2] = np.stack([-e[:, 1], e[:, 0]], axis=1)
    dc[:, 4:6] = np.stack([r[:, 1], -r[:, 0]], axis=1)
    dc[:, 2:4] = -dc[:, 0:2] - dc[:, 4:6]
    S = np.array([[0.0, 1.0], [-1.0, 0.0]])
    C = np.zeros((6, 6))
    # c = b x w - b x a - a x w
    for (i, j, sign) in ((2, 0, 1.0), (2, 1, -1.0), (1, 0, -1.0)):
        C[2 * i:2 * i + 2, 2 * j:2 * j + 2] += sign * S
        C[2 * j:2 * j + 2, 2 * i:2 * i + 2] += sign * S.T
    uh = e / L[:, None]
    dL = np.zeros((k, 6))
    dL[:, 4:6] = uh
    dL[:, 2:4] = -uh
    P = (np.eye(2)[None] - uh[:, :, None] * uh[:, None, :]) / L[:, None, None]
    d2L = np.zeros((k, 6, 6))
    d2L[:, 4:6, 4:6] = P
    d2L[:, 2:4, 2:4] = P
    d2L[:, 2:4, 4:6] = -P
    d2L[:, 4:6, 2:4] = -P
    L1 = L[:, None, None]
    cL = c[:, None, None]
    cross = dc[:, :, None] * dL[:, None, :]
    H = (C[None] / L1 - (cross + cross.transpose(0, 2, 1)) / L1 ** 2 - cL * d2L / L1 ** 2
         + 2.0 * cL * dL[:, :, None] * dL[:, None, :] / L1 ** 3)
    out[rows] = s[:, None, None] * H
    return out


def _excluded_by_topology(mesh: ReferenceMesh, w, a, b, cutoff: int):
    lid, pos, length = mesh.loop_position
    same = lid[w] == lid[a]
    def hops(p, q, n):
        dd = np.abs(p - q)
        return np.minimum(dd, n - dd)
    near = (hops(pos[w], pos[a], length[w]) <= cutoff) | (hops(pos[w], pos[b], length[w]) <= cutoff)
    return same & near


def find_constraints(mesh: ReferenceMesh, positions, obstacles, radius: float,
                     cutoff: int = 3, dedupe: bool = False) -> tuple[ConstraintSet, GapEvaluation]:
    """All vertex-obstacle and vertex-edge pairs with gap <= radius.

    Broad phase hashes boundary edges by midpoint into a uniform grid; the
    narrow phase computes exact point-segment distances. Vertex-edge pairs
    are kept only when the witness lies on the exterior side of the edge and
    is not within ``cutoff`` boundary hops of it on the same loop. With
    ``dedupe`` only the closest edge per (witness, target loop) is returned.
    """
    x = np.asarray(positions, dtype=float).reshape(-1, 2)
    bv = mesh.boundary_vertices
    kinds, wit, edg, obs = [], [], [], []
    for k, ob in enumerate(obstacles):
        g, _ = ob.gap(x[bv])
        sel = bv[np.asarray(g) <= radius]
        kinds.append(np.full(sel.size, OBSTACLE))
        wit.append(sel)
        edg.append(np.full(sel.size, -1))
        obs.append(np.full(sel.size, k))

    E = mesh.boundary_edges
    if len(E):
        mid = 0.5 * (x[E[:, 0]] + x[E[:, 1]])
        half = 0.5 * np.linalg.norm(x[E[:, 1]] - x[E[:, 0]], axis=1)
        cell = float(half.max() + radius)
        grid = defaultdict(list)
        keys = np.floor(mid / cell).astype(np.int64)
        for e, (i, j) in enumerate(keys.tolist()):
            grid[(i, j)].append(e)
        vkeys = np.floor(x[bv] / cell).astype(np.int64)
        pw, pe = [], []
        for v, (i, j) in zip(bv.tolist(), vkeys.tolist()):
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    lst = grid.get((i + di, j + dj))
                    if lst:
                        pe.extend(lst)
                        pw.extend([v] * len(lst))
        pw = np.array(pw, dtype=np.int64)
        pe = np.array(pe, dtype=np.int64)
        if pw.size:
            a, b = E[pe, 0], E[pe, 1]
            keep = (pw != a) & (pw != b) & ~_excluded_by_topology(mesh, pw, a, b, cutoff)
            pw, pe = pw[keep], pe[keep]
        if pw.size:
            trial = ConstraintSet(np.full(pw.size, SELF), pw, pe, np.full(pw.size, -1))
            ev = evaluate_gaps(mesh, x, trial, obstacles)
            nint = edge_interior_normals(mesh, x)[pe]
            q = x[E[pe, 0]] + ev.t[:, None] * (x[E[pe, 1]] - x[E[pe, 0]])
            outside = np.einsum("ij,ij->i", x[pw] - q, nint) <= 0.0
            keep = (ev.gap <= radius) & outside
            pw, pe = pw[keep], pe[keep]
            if dedupe and pw.size:
                lid = mesh.loop_position[0][E[pe, 0]]
                gsel = ev.gap[keep]
                order = np.lexsort((pe, gsel, lid, pw))
                _, first = np.unique(np.column_stack([pw[order], lid[order]]), axis=0, return_index=True)
                chosen = np.sort(order[first])
                pw, pe = pw[chosen], pe[chosen]
        kinds.append(np.full(pw.size, SELF))
        wit.append(pw)
        edg.append(pe)
        obs.append(np.full(pw.size, -1))

    if kinds:
        cs = ConstraintSet(*(np.concatenate(v).astype(np.int64) for v in (kinds, wit, edg, obs)))
    else:
        cs = ConstraintSet.empty()
    order = np.lexsort((cs.edge, cs.obstacle, cs.witness, cs.kind))
    cs = cs.subset(order)
    return cs, evaluate_gaps(mesh, x, cs, obstacles)


@dataclass
class ContactSet:
    constraints: ConstraintSet
    gaps: np.ndarray
    evaluation: GapEvaluation

    def __len__(self):
        return len(self.constraints)

    @property
    def is_self(self) -> np.ndarray:
        return self.constraints.kind == SELF


def detect_contacts(d: Deformation, obstacles, eps_act: float, cutoff: int = 3) -> ContactSet:
    cs, ev = find_constraints(d.mesh, d.positions, obstacles, eps_act, cutoff=cutoff, dedupe=True)
    return ContactSet(cs, ev.gap, ev)


# ---------------------------------------------------------------- forces

@dataclass
class ContactForce:
    """Atomic contact force on boundary vertices.

    Each atom carries a non-negative magnitude and a unit direction; ``kind``
    is OBSTACLE or SELF, ``constraint`` the index of the generating gap
    constraint, shared by the three atoms of a self-contact pair. Atoms on
    the end points of a contacted edge record that ``edge`` (else -1): their
    force acts at the contact point inside the edge.
    """

    vertex: np.ndarray
    magnitude: np.ndarray
    direction: np.ndarray
    kind: np.ndarray
    constraint: np.ndarray
    partner: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    edge: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    gap: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.vertex)

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, np.zeros(0), np.zeros((0, 2)), z.copy(), z.copy(), z.copy(), z.copy(), np.zeros(0))

    def nodal(self, n_vertices: int, kind: int | None = None) -> np.ndarray:
        f = np.zeros((n_vertices, 2))
        sel = slice(None) if kind is None else self.kind == kind
        np.add.at(f, self.vertex[sel], self.magnitude[sel, None] * self.direction[sel])
        return f

    def pair_sums(self) -> np.ndarray:
        """Net force of each self-contact constraint, summed in exact rational arithmetic."""
        sel = self.kind == SELF
        ids = np.unique(self.constraint[sel])
        out = np.zeros((ids.size, 2))
        for k, c in enumerate(ids):
            m = sel & (self.constraint == c)
            out[k] = exact_net(self.magnitude[m], self.direction[m])
        return out


def exact_net(magnitude, direction) -> tuple[float, float]:
    """sum_i magnitude_i * direction_i without rounding (rounded once at the end)."""
    sx = sum((Fraction(float(m)) * Fraction(float(d)) for m, d in zip(magnitude, direction[:, 0])), Fraction(0))
    sy = sum((Fraction(float(m)) * Fraction(float(d)) for m, d in zip(magnitude, direction[:, 1])), Fraction(0))
    return float(sx), float(sy)


def assemble_contact_force(cs: ConstraintSet, ev: GapEvaluation, lam) -> ContactForce:
    lam = np.asarray(lam, dtype=float)
    vs, mags, dirs, kinds, cons, partner, edges, gaps = [], [], [], [], [], [], [], []
    for i in range(len(cs)):
        if lam[i] <= 0:
            continue
        u = ev.direction[i]
        if cs.kind[i] == OBSTACLE:
            vs.append(cs.witness[i]); mags.append(lam[i]); dirs.append(u)
            kinds.append(OBSTACLE); cons.append(i); partner.append(cs.obstacle[i]); edges.append(-1)
            gaps.append(ev.gap[i])
            continue
        # the larger share by product, the smaller by subtraction (exact by Sterbenz),
        # so ma + mb == lam[i] holds exactly and the pair wrench cancels in exact arithmetic
        if ev.t[i] <= 0.5:
            ma = lam[i] * (1.0 - ev.t[i])
            mb = lam[i] - ma
        else:
            mb = lam[i] * ev.t[i]
            ma = lam[i] - mb
        for v, mag, dv, e in ((cs.witness[i], lam[i], u, -1), (ev.verts[i, 1], ma, -u, cs.edge[i]),
                              (ev.verts[i, 2], mb, -u, cs.edge[i])):
            if mag > 0:
                vs.append(v); mags.append(mag); dirs.append(dv)
                kinds.append(SELF); cons.append(i); partner.append(cs.witness[i]); edges.append(e)
                gaps.append(ev.gap[i])
    if not vs:
        return ContactForce.empty()
    ints = lambda a: np.array(a, dtype=np.int64)
    return ContactForce(ints(vs), np.array(mags), np.array(dirs).reshape(-1, 2), ints(kinds), ints(cons),
                        ints(partner), ints(edges), np.array(gaps))


def significant(force: ContactForce, force_scale: float) -> np.ndarray:
    """Mask of atoms carrying a physically meaningful share of the contact force."""
    return force.magnitude >= SIGNIFICANT_FORCE * force_scale


def normal_angles(mesh: ReferenceMesh, positions, force: ContactForce) -> np.ndarray:
    """Angle (degrees) between each atom direction and the interior normal where it acts.

    That is the vertex normal for obstacle and witness atoms and the normal of
    the contacted edge for atoms on its end points.
    """
    if len(force) == 0:
        return np.zeros(0)
    n = vertex_normals(mesh, positions)[force.vertex]
    on_edge = force.edge >= 0
    if np.any(on_edge):
        n[on_edge] = edge_interior_normals(mesh, positions)[force.edge[on_edge]]
    c = np.clip(np.einsum("ij,ij->i", n, force.direction), -1.0, 1.0)
    return np.degrees(np.arccos(c))


def opposite_normal_defect(mesh: ReferenceMesh, positions, contacts: ContactSet) -> np.ndarray:
    """1 + n_eta(witness) . n_eta(target point) for every self contact (0 when exactly opposite)."""
    sel = np.flatnonzero(contacts.is_self)
    if sel.size == 0:
        return np.zeros(0)
    vn = vertex_normals(mesh, positions)
    en = edge_interior_normals(mesh, positions)
    cs = contacts.constraints
    return 1.0 + np.einsum("ij,ij->i", vn[cs.witness[sel]], en[cs.edge[sel]])


def tangent_cone_violation(d: Deformation, contacts: ContactSet, phi) -> float:
    """min over active contacts of grad g . phi (negative means phi pushes into contact)."""
    if len(contacts) == 0:
        return 0.0
    phi = np.asarray(phi, dtype=float).reshape(-1, 2)
    ev = contacts.evaluation
    vals = np.zeros(len(contacts))
    for s in range(3):
        v = ev.verts[:, s]
        on = v >= 0
        vals[on] += np.einsum("ij,ij->i", ev.grads[on, s], phi[v[on]])
    return float(vals.min())


# ---------------------------------------------------------------- Ciarlet-Necas

def _raster_union_area(tri_xy: np.ndarray, lo, hi, n: int) -> float:
    """Area of the union of triangles, sampled at the centres of an n x n grid.

    Scanline fill: each triangle contributes one span of cells per grid row it
    crosses; spans are accumulated with a difference array and a cell counts
    as covered when at least one span contains its centre.
    """
    dx = (hi[0] - lo[0]) / n
    dy = (hi[1] - lo[1]) / n
    ys = tri_xy[:, :, 1]
    eps = 1e-9
    j0 = np.clip(np.ceil((ys.min(1) - lo[1]) / dy - 0.5 - eps), 0, n).astype(np.int64)
    j1 = np.clip(np.floor((ys.max(1) - lo[1]) / dy - 0.5 + eps), -1, n - 1).astype(np.int64)
    counts = np.maximum(j1 - j0 + 1, 0)
    tri = np.repeat(np.arange(len(tri_xy)), counts)
    row = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts) + np.repeat(j0, counts)
    yc = lo[1] + (row + 0.5) * dy
    P = tri_xy[tri]
    xl = np.full(len(tri), np.inf)
    xr = np.full(len(tri), -np.inf)
    tol_y = eps * dy
    for k in range(3):
        A = P[:, k]
        B = P[:, (k + 1) % 3]
        ymin = np.minimum(A[:, 1], B[:, 1])
        ymax = np.maximum(A[:, 1], B[:, 1])
        hit = (yc >= ymin - tol_y) & (yc <= ymax + tol_y)
        span = B[:, 1] - A[:, 1]
        flat = np.abs(span) <= tol_y
        s = np.where(flat, 0.0, (yc - A[:, 1]) / np.where(flat, 1.0, span))
        s = np.clip(s, 0.0, 1.0)
        xa = A[:, 0] + s * (B[:, 0] - A[:, 0])
        xb = np.where(flat, B[:, 0], xa)
        xl = np.where(hit, np.minimum(xl, np.minimum(xa, xb)), xl)
        xr = np.where(hit, np.maximum(xr, np.maximum(xa, xb)), xr)
    ok = xl <= xr
    i0 = np.clip(np.ceil((xl[ok] - lo[0]) / dx - 0.5 - eps), 0, n).astype(np.int64)
    i1 = np.clip(np.floor((xr[ok] - lo[0]) / dx - 0.5 + eps), -1, n - 1).astype(np.int64)
    r = row[ok]
    good = i1 >= i0
    diff = np.zeros((n, n + 1), dtype=np.int64)
    np.add.at(diff, (r[good], i0[good]), 1)
    np.add.at(diff, (r[good], i1[good] + 1), -1)
    covered = np.cumsum(diff[:, :n], axis=1) > 0
    return float(covered.sum()) * dx * dy


@dataclass
class CNResult:
    deficit: float
    deficit_coarse: float
    tolerance: float
    integral_det: float
    union_area: float

    @property
    def ok(self) -> bool:
        return abs(self.deficit) <= self.tolerance and abs(self.deficit - self.deficit_coarse) <= 2 * self.tolerance


def ciarlet_necas_deficit(d: Deformation, resolution: int = 512) -> CNResult:
    """int det(grad eta) - |eta(Q)|, with the image area from rasterisation.

    The union is sampled at cell centres on a ``resolution``^2 grid over the
    deformed bounding box, and again at half resolution. The tolerance is the
    area of a band of two cells around the deformed boundary.
    """
    mesh = d.mesh
    x = d.positions
    P = x[mesh.triangles]
    integral = float(mesh.signed_areas @ d.determinants)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    pad = 0.01 * span
    lo, hi = lo - pad, hi + pad
    fine = _raster_union_area(P, lo, hi, resolution)
    coarse = _raster_union_area(P, lo, hi, max(resolution // 2, 1))
    perim = float(np.linalg.norm(x[mesh.boundary_edges[:, 1]] - x[mesh.boundary_edges[:, 0]], axis=1).sum())
    cell = float(max((hi - lo) / resolution))
    tol = 2.0 * perim * cell
    return CNResult(integral - fine, integral - coarse, tol, integral, fine)
