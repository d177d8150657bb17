"""Reference meshes, deformations, differential operators and obstacles.

Everything here works on P1 triangles in the plane. Degrees of freedom are
flattened as ``x[2*v + i]`` (vertex ``v``, component ``i``), and 2x2 matrices
are flattened row-major as ``[F00, F01, F10, F11]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay


class MeshError(ValueError):
    pass


def _rot90(v):
    """Rotate vectors by +90 degrees (last axis of length 2)."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def cofactor(F):
    """Cofactor matrix of (batched) 2x2 matrices, cof F = det(F) F^{-T}."""
    F = np.asarray(F, dtype=float)
    C = np.empty_like(F)
    C[..., 0, 0] = F[..., 1, 1]
    C[..., 0, 1] = -F[..., 1, 0]
    C[..., 1, 0] = -F[..., 0, 1]
    C[..., 1, 1] = F[..., 0, 0]
    return C


def det2(F):
    F = np.asarray(F, dtype=float)
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


@dataclass(frozen=True, eq=False)
class ReferenceMesh:
    """Triangulated reference configuration, possibly with several bodies.

    ``boundary_edges`` are directed so that the body lies on the left of each
    edge; the reference interior normal of an edge with direction ``d`` is
    therefore ``rot90(d)/|d|``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    components: np.ndarray
    dirichlet_vertices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        V = np.ascontiguousarray(self.vertices, dtype=float)
        T = np.ascontiguousarray(self.triangles, dtype=np.int64)
        B = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        C = np.ascontiguousarray(self.components, dtype=np.int64)
        D = np.unique(np.asarray(self.dirichlet_vertices, dtype=np.int64))
        for name, arr in [("vertices", V), ("triangles", T), ("boundary_edges", B),
                          ("components", C), ("dirichlet_vertices", D)]:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if V.ndim != 2 or V.shape[1] != 2:
            raise MeshError("vertices must have shape (N, 2)")
        if T.ndim != 2 or T.shape[1] != 3:
            raise MeshError("triangles must have shape (T, 3)")
        if len(C) != len(T):
            raise MeshError("one component label per triangle required")
        if T.size and (T.min() < 0 or T.max() >= len(V)):
            raise MeshError("triangle refers to a missing vertex")
        area = self.signed_areas
        bad = np.flatnonzero(area <= 0.0)
        if bad.size:
            raise MeshError(f"triangle {bad[0]} has non-positive reference area {area[bad[0]]:g}")

    # ------------------------------------------------------------------ sizes
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.vertices)

    # ---------------------------------------------------------- per triangle
    @cached_property
    def signed_areas(self) -> np.ndarray:
        X = self.vertices[self.triangles]
        e1 = X[:, 1] - X[:, 0]
        e2 = X[:, 2] - X[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """(T, 3, 2) reference gradients of the three barycentric functions."""
        X = self.vertices[self.triangles]
        Dm = np.stack([X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]], axis=-1)  # columns = edges
        Dinv = np.linalg.inv(Dm)  # rows are gradients of lambda_1, lambda_2
        G = np.empty((self.n_triangles, 3, 2))
        G[:, 1] = Dinv[:, 0]
        G[:, 2] = Dinv[:, 1]
        G[:, 0] = -G[:, 1] - G[:, 2]
        return G

    @cached_property
    def gradient_operator(self) -> sp.csr_matrix:
        """Sparse map from nodal dofs to row-major per-triangle gradients (4T x 2N)."""
        T = self.triangles
        G = self.shape_gradients
        rows, cols, vals = [], [], []
        for i in range(2):
            for j in range(2):
                r = 4 * np.arange(len(T)) + 2 * i + j
                for a in range(3):
                    rows.append(r)
                    cols.append(2 * T[:, a] + i)
                    vals.append(G[:, a, j])
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(4 * len(T), self.n_dofs),
        )

    @cached_property
    def lumped_area(self) -> np.ndarray:
        """Per-vertex share of reference area (one third of each adjacent triangle)."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.signed_areas / 3.0, 3))
        return w

    @cached_property
    def total_area(self) -> float:
        return float(self.signed_areas.sum())

    # ------------------------------------------------------------- edges
    @cached_property
    def _edge_table(self):
        T = self.triangles
        half = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
        owner = np.tile(np.arange(len(T)), 3)
        key = np.sort(half, axis=1)
        uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        if np.any(counts > 2):
            raise MeshError("an edge is shared by more than two triangles")
        return half, owner, uniq, inv, counts

    @cached_property
    def interior_edges(self) -> np.ndarray:
        """(E, 4) rows ``[v0, v1, left_tri, right_tri]`` for edges shared by two triangles."""
        half, owner, uniq, inv, counts = self._edge_table
        order = np.argsort(inv, kind="stable")
        inv_s = inv[order]
        shared = np.flatnonzero(counts == 2)
        first = np.searchsorted(inv_s, shared)
        a = order[first]
        b = order[first + 1]
        return np.column_stack([half[a, 0], half[a, 1], owner[a], owner[b]]).astype(np.int64)

    @cached_property
    def hinge_lengths(self) -> np.ndarray:
        """Reference length scale of each hinge patch: (A_left + A_right)/|e|."""
        E = self.interior_edges
        A = self.signed_areas
        elen = np.linalg.norm(self.vertices[E[:, 1]] - self.vertices[E[:, 0]], axis=1)
        return (A[E[:, 2]] + A[E[:, 3]]) / elen

    @cached_property
    def hinge_weights(self) -> np.ndarray:
        """Quadrature weight of each hinge, (A_left + A_right)/3."""
        E = self.interior_edges
        A = self.signed_areas
        return (A[E[:, 2]] + A[E[:, 3]]) / 3.0

    @cached_property
    def hinge_operator(self) -> sp.csr_matrix:
        """Sparse map from nodal dofs to (F_left - F_right)/l_e per interior edge (4E x 2N)."""
        E = self.interior_edges
        Gop = self.gradient_operator
        n = len(E)
        rows = np.repeat(np.arange(4 * n), 2)
        cols = np.empty(8 * n, dtype=np.int64)
        vals = np.empty(8 * n)
        for k in range(4):
            cols[2 * k::8] = 4 * E[:, 2] + k
            cols[2 * k + 1::8] = 4 * E[:, 3] + k
            vals[2 * k::8] = 1.0 / self.hinge_lengths
            vals[2 * k + 1::8] = -1.0 / self.hinge_lengths
        S = sp.csr_matrix((vals, (rows, cols)), shape=(4 * n, 4 * self.n_triangles))
        return (S @ Gop).tocsr()

    @cached_property
    def assembler(self) -> "BlockAssembler":
        """Fixed-pattern assembler for triangle (6 dof) and hinge (8 dof) local matrices."""
        return BlockAssembler(self.n_dofs, [
            local_operator_blocks(self.gradient_operator, 4),
            local_operator_blocks(self.hinge_operator, 4),
        ])

    # ------------------------------------------------------------- boundary
    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges.ravel())

    @cached_property
    def boundary_loops(self) -> list[np.ndarray]:
        """Closed boundary loops as vertex sequences following edge direction."""
        nxt = {}
        for a, b in self.boundary_edges:
            if a in nxt:
                raise MeshError(f"boundary vertex {a} has two outgoing edges")
            nxt[int(a)] = int(b)
        seen = set()
        loops = []
        for start in sorted(nxt):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            v = nxt[start]
            while v != start:
                if v not in nxt or v in seen:
                    raise MeshError("boundary edges do not form closed loops")
                loop.append(v)
                seen.add(v)
                v = nxt[v]
            loops.append(np.array(loop, dtype=np.int64))
        return loops

    @cached_property
    def loop_position(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per vertex: (loop id, index within loop, loop length); -1 for interior vertices."""
        lid = -np.ones(self.n_vertices, dtype=np.int64)
        pos = -np.ones(self.n_vertices, dtype=np.int64)
        length = np.zeros(self.n_vertices, dtype=np.int64)
        for k, loop in enumerate(self.boundary_loops):
            lid[loop] = k
            pos[loop] = np.arange(len(loop))
            length[loop] = len(loop)
        return lid, pos, length

    @cached_property
    def boundary_edge_tri(self) -> np.ndarray:
        """Triangle owning each boundary edge."""
        half, owner, uniq, inv, counts = self._edge_table
        lookup = {(int(a), int(b)): int(t) for (a, b), t in zip(half, owner)}
        return np.array([lookup[(int(a), int(b))] for a, b in self.boundary_edges], dtype=np.int64)

    @cached_property
    def reference_edge_normals(self) -> np.ndarray:
        """Unit interior normals n_Q of the boundary edges in the reference configuration."""
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        n = _rot90(d)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def vertex_boundary_edges(self) -> np.ndarray:
        """(N, 2) ids of (incoming, outgoing) boundary edges per vertex, -1 if none."""
        inc = -np.ones((self.n_vertices, 2), dtype=np.int64)
        for e, (a, b) in enumerate(self.boundary_edges):
            inc[b, 0] = e
            inc[a, 1] = e
        return inc

    @cached_property
    def vertex_component(self) -> np.ndarray:
        comp = np.zeros(self.n_vertices, dtype=np.int64)
        comp[self.triangles.ravel()] = np.repeat(self.components, 3)
        return comp

    @cached_property
    def min_edge_length(self) -> float:
        T = self.triangles
        X = self.vertices
        lens = [np.linalg.norm(X[T[:, (k + 1) % 3]] - X[T[:, k]], axis=1) for k in range(3)]
        return float(np.min(lens))

    @cached_property
    def vertex_neighbors(self) -> sp.csr_matrix:
        """Symmetric vertex adjacency (graph of triangle edges)."""
        T = self.triangles
        r = np.concatenate([T[:, 0], T[:, 1], T[:, 2], T[:, 1], T[:, 2], T[:, 0]])
        c = np.concatenate([T[:, 1], T[:, 2], T[:, 0], T[:, 0], T[:, 1], T[:, 2]])
        A = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(self.n_vertices,) * 2)
        A.data[:] = 1.0
        return A

    def with_dirichlet(self, vertices) -> "ReferenceMesh":
        return ReferenceMesh(self.vertices, self.triangles, self.boundary_edges,
                             self.components, np.asarray(vertices, dtype=np.int64))

    def check(self) -> None:
        """Validate the structural invariants, raising MeshError on failure."""
        self.boundary_loops
        _, _, _, _, counts = self._edge_table
        if np.any(counts == 1) and len(self.boundary_edges) != int(np.sum(counts == 1)):
            raise MeshError("boundary edge list does not match the triangulation")


def local_operator_blocks(op: sp.csr_matrix, rows_per_el: int):
    """Split a row-blocked sparse operator into dense local blocks and their dof lists.

    Returns ``(B, dofs)`` with ``B`` of shape (n_el, rows_per_el, k) such that
    rows ``r*e .. r*e + r - 1`` of ``op`` equal ``B[e]`` on columns ``dofs[e]``.
    """
    n_el = op.shape[0] // rows_per_el
    coo = op.tocoo()
    el = coo.row // rows_per_el
    order = np.lexsort((coo.col, el))
    el, col, row, val = el[order], coo.col[order], coo.row[order], coo.data[order]
    k = 0
    dof_lists = []
    starts = np.searchsorted(el, np.arange(n_el + 1))
    for e in range(n_el):
        u = np.unique(col[starts[e]:starts[e + 1]])
        dof_lists.append(u)
        k = max(k, len(u))
    dofs = np.zeros((n_el, k), dtype=np.int64)
    B = np.zeros((n_el, rows_per_el, k))
    for e, u in enumerate(dof_lists):
        dofs[e, :len(u)] = u
        dofs[e, len(u):] = u[0] if len(u) else 0
        sl = slice(starts[e], starts[e + 1])
        pos = np.searchsorted(u, col[sl])
        B[e, row[sl] - rows_per_el * e, pos] = val[sl]
    return B, dofs


class BlockAssembler:
    """Assembles sums of ``B_e^T W_e B_e`` into one CSR matrix with a fixed pattern."""

    def __init__(self, n: int, groups):
        self.n = n
        self.groups = []
        keys = [np.arange(n, dtype=np.int64) * (n + 1)]
        for B, dofs in groups:
            I = np.repeat(dofs, dofs.shape[1], axis=1)
            J = np.tile(dofs, (1, dofs.shape[1]))
            keys.append((I * n + J).ravel())
        allk = np.unique(np.concatenate(keys))
        self.indices = (allk % n).astype(np.int32)
        self.indptr = np.searchsorted(allk // n, np.arange(n + 1)).astype(np.int32)
        self.nnz = len(allk)
        self.diag_pos = np.searchsorted(allk, keys[0])
        for (B, dofs), key in zip(groups, keys[1:]):
            self.groups.append((B, np.searchsorted(allk, key)))
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        self.rows = rows
        self.cols = self.indices.astype(np.int64)

    def data(self, group: int, W) -> np.ndarray:
        """CSR data of sum_e B_e^T W_e B_e for group ``group``."""
        B, pos = self.groups[group]
        local = B.transpose(0, 2, 1) @ W @ B
        return np.bincount(pos, weights=local.ravel(), minlength=self.nnz)

    def diagonal_data(self, d) -> np.ndarray:
        out = np.zeros(self.nnz)
        out[self.diag_pos] = d
        return out

    def matrix(self, data) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


@dataclass(frozen=True, eq=False)
class Deformation:
    """Nodal positions of the deformed configuration."""

    mesh: ReferenceMesh
    positions: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=float).reshape(self.mesh.n_vertices, 2)
        if not np.all(np.isfinite(x)):
            raise ValueError("deformation has non-finite positions")
        x.setflags(write=False)
        object.__setattr__(self, "positions", x)

    @classmethod
    def identity(cls, mesh: ReferenceMesh, offset=(0.0, 0.0)) -> "Deformation":
        return cls(mesh, mesh.vertices + np.asarray(offset, dtype=float))

    @property
    def flat(self) -> np.ndarray:
        return self.positions.ravel()

    @cached_property
    def gradients(self) -> np.ndarray:
        """(T, 2, 2) deformation gradient of every triangle."""
        return deformation_gradients(self.mesh, self.positions)

    @cached_property
    def determinants(self) -> np.ndarray:
        return det2(self.gradients)


@dataclass(frozen=True, eq=False)
class VelocityField:
    mesh: ReferenceMesh
    values: np.ndarray

    def __post_init__(self):
        b = np.array(self.values, dtype=float).reshape(self.mesh.n_vertices, 2)
        b.setflags(write=False)
        object.__setattr__(self, "values", b)


def deformation_gradients(mesh: ReferenceMesh, positions) -> np.ndarray:
    x = np.asarray(positions, dtype=float).reshape(-1, 2)
    X = x[mesh.triangles]  # (T, 3, 2)
    return np.einsum("tai,taj->tij", X, mesh.shape_gradients)


def deformation_gradient(d: Deformation, tri: int) -> np.ndarray:
    if not 0 <= tri < d.mesh.n_triangles:
        raise IndexError(f"triangle {tri} out of range")
    return d.gradients[tri].copy()


def hinge_second_difference(d: Deformation, edge: int) -> np.ndarray:
    """(F_left - F_right)/l_e for interior edge ``edge`` (index into ``interior_edges``)."""
    E = d.mesh.interior_edges
    if not 0 <= edge < len(E):
        raise MeshError(f"edge {edge} is not an interior edge")
    F = d.gradients
    return (F[E[edge, 2]] - F[E[edge, 3]]) / d.mesh.hinge_lengths[edge]


def hinge_second_differences(mesh: ReferenceMesh, positions) -> np.ndarray:
    """All hinge second differences, (E, 2, 2)."""
    x = np.asarray(positions, dtype=float).ravel()
    return (mesh.hinge_operator @ x).reshape(-1, 2, 2)


# ---------------------------------------------------------------- obstacles

@dataclass(frozen=True)
class HalfPlane:
    """Rigid region {x : normal.x < offset}; the admissible side is normal.x > offset."""

    normal: tuple[float, float]
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        object.__setattr__(self, "normal", (float(n[0]), float(n[1])))

    def gap(self, p):
        p = np.asarray(p, dtype=float)
        n = np.asarray(self.normal)
        g = p @ n - self.offset
        return g, np.broadcast_to(n, p.shape).copy()

    def to_dict(self):
        return {"kind": "halfplane", "normal": list(self.normal), "offset": self.offset}


@dataclass(frozen=True)
class Circle:
    """Rigid disc obstacle; the admissible region is its exterior."""

    center: tuple[float, float]
    radius: float

    def gap(self, p):
        p = np.asarray(p, dtype=float)
        d = p - np.asarray(self.center, dtype=float)
        r = np.linalg.norm(d, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        n = d / safe[..., None]
        n = np.where((r > 0)[..., None], n, np.array([1.0, 0.0]))
        return r - self.radius, n

    def to_dict(self):
        return {"kind": "circle", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class ConvexPolygon:
    """Rigid convex polygon (counter-clockwise vertices); admissible region is outside."""

    vertices: tuple

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        e1 = V[1] - V[0]
        e2 = V[2] - V[0]
        if e1[0] * e2[1] - e1[1] * e2[0] < 0:
            V = V[::-1]
        object.__setattr__(self, "vertices", tuple(map(tuple, V.tolist())))

    def gap(self, p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        V = np.asarray(self.vertices)
        A = V
        B = np.roll(V, -1, axis=0)
        d = B - A
        out = -_rot90(d)
        out /= np.linalg.norm(out, axis=1, keepdims=True)
        # outside distance: distance to the nearest edge segment
        ap = p[:, None, :] - A[None]
        t = np.clip(np.einsum("pki,ki->pk", ap, d) / np.einsum("ki,ki->k", d, d), 0.0, 1.0)
        q = A[None] + t[..., None] * d[None]
        diff = p[:, None, :] - q
        dist = np.linalg.norm(diff, axis=2)
        k = np.argmin(dist, axis=1)
        sd_edges = np.einsum("pki,ki->pk", ap, out)
        inside = np.all(sd_edges < 0, axis=1)
        idx = np.arange(len(p))
        dmin = dist[idx, k]
        n_out = diff[idx, k] / np.where(dmin > 0, dmin, 1.0)[:, None]
        kin = np.argmax(sd_edges, axis=1)
        gap = np.where(inside, sd_edges[idx, kin], dmin)
        normal = np.where(inside[:, None], out[kin], n_out)
        return gap, normal

    def to_dict(self):
        return {"kind": "polygon", "vertices": [list(v) for v in self.vertices]}


Obstacle = HalfPlane | Circle | ConvexPolygon


def obstacle_gap(ob, p):
    """Signed distance of point(s) ``p`` to the obstacle and the unit normal pointing into Omega."""
    g, n = ob.gap(np.asarray(p, dtype=float))
    if np.ndim(p) == 1:
        return float(np.ravel(g)[0]), np.asarray(n).reshape(-1, 2)[0]
    return g, n


def obstacle_from_dict(d: dict):
    kind = d["kind"]
    if kind == "halfplane":
        return HalfPlane(tuple(d["normal"]), float(d.get("offset", 0.0)))
    if kind == "circle":
        return Circle(tuple(d["center"]), float(d["radius"]))
    if kind == "polygon":
        return ConvexPolygon(tuple(map(tuple, d["vertices"])))
    raise ValueError(f"unknown obstacle kind {kind!r}")


# ---------------------------------------------------------------- generators

def _boundary_from_triangles(triangles) -> np.ndarray:
    T = np.asarray(triangles)
    half = np.concatenate([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]])
    key = np.sort(half, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return half[counts[inv.ravel()] == 1]


def _components_from_triangles(n_vertices, triangles) -> np.ndarray:
    from scipy.sparse.csgraph import connected_components

    T = np.asarray(triangles)
    r = np.concatenate([T[:, 0], T[:, 1]])
    c = np.concatenate([T[:, 1], T[:, 2]])
    A = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(n_vertices, n_vertices))
    _, labels = connected_components(A, directed=False)
    # relabel in order of first appearance
    tri_lab = labels[T[:, 0]]
    _, first = np.unique(tri_lab, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=np.int64)
    remap[np.unique(tri_lab)[order]] = np.arange(order.size)
    return remap[tri_lab]


def mesh_from_triangles(vertices, triangles, dirichlet=()) -> ReferenceMesh:
    V = np.asarray(vertices, dtype=float)
    T = np.asarray(triangles, dtype=np.int64).copy()
    X = V[T]
    e1 = X[:, 1] - X[:, 0]
    e2 = X[:, 2] - X[:, 0]
    flip = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    T[flip] = T[flip][:, [0, 2, 1]]
    return ReferenceMesh(V, T, _boundary_from_triangles(T),
                         _components_from_triangles(len(V), T),
                         np.asarray(dirichlet, dtype=np.int64))


def disc(radius: float = 1.0, resolution: int = 9, center=(0.0, 0.0)) -> ReferenceMesh:
    """Disc from concentric rings; ring k carries 6k points (``resolution`` rings)."""
    if resolution < 1:
        raise MeshError("resolution must be >= 1")
    pts = [np.zeros((1, 2))]
    for k in range(1, resolution + 1):
        th = 2 * np.pi * (np.arange(6 * k) + 0.5 * (k % 2)) / (6 * k)
        r = radius * k / resolution
        pts.append(np.column_stack([r * np.cos(th), r * np.sin(th)]))
    V = np.concatenate(pts)
    tri = Delaunay(V).simplices
    X = V[tri]
    a = 0.5 * np.abs((X[:, 1, 0] - X[:, 0, 0]) * (X[:, 2, 1] - X[:, 0, 1])
                     - (X[:, 1, 1] - X[:, 0, 1]) * (X[:, 2, 0] - X[:, 0, 0]))
    tri = tri[a > 1e-12 * radius**2]
    return mesh_from_triangles(V + np.asarray(center, dtype=float), tri)


def rectangle(w: float = 1.0, h: float = 1.0, nx: int = 4, ny: int = 4,
              origin=(0.0, 0.0)) -> ReferenceMesh:
    """Structured rectangle, each cell split along its (0,0)-(1,1) diagonal."""
    xs = np.linspace(0.0, w, nx + 1)
    ys = np.linspace(0.0, h, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    V = np.column_stack([X.ravel(), Y.ravel()]) + np.asarray(origin, dtype=float)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tri = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return mesh_from_triangles(V, tri)


def bent_strip(inner: float = 0.6, outer: float = 1.0, opening: float = 0.3,
               n_arc: int = 40, n_thick: int = 3, center=(0.0, 0.0)) -> ReferenceMesh:
    """Strip bent into a C shape: annular sector leaving an angular gap ``opening`` (radians)
    centred on the positive x axis."""
    th = np.linspace(opening / 2, 2 * np.pi - opening / 2, n_arc + 1)
    rs = np.linspace(inner, outer, n_thick + 1)
    R, TH = np.meshgrid(rs, th)
    V = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
    idx = np.arange(len(V)).reshape(n_arc + 1, n_thick + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    tri = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return mesh_from_triangles(V + np.asarray(center, dtype=float), tri)


def annulus(inner: float = 0.7, outer: float = 1.0, n_arc: int = 64, n_thick: int = 3,
            center=(0.0, 0.0)) -> ReferenceMesh:
    """Closed ring between radii ``inner`` and ``outer``."""
    th = np.linspace(0.0, 2 * np.pi, n_arc, endpoint=False)
    rs = np.linspace(inner, outer, n_thick + 1)
    R, TH = np.meshgrid(rs, th)
    V = np.column_stack([(R * np.cos(TH)).ravel(), (R * np.sin(TH)).ravel()])
    idx = np.arange(len(V)).reshape(n_arc, n_thick + 1)
    nxt = np.roll(idx, -1, axis=0)
    a = idx[:, :-1].ravel()
    b = idx[:, 1:].ravel()
    c = nxt[:, 1:].ravel()
    d = nxt[:, :-1].ravel()
    tri = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return mesh_from_triangles(V + np.asarray(center, dtype=float), tri)


def compose(*meshes: ReferenceMesh, offsets=None) -> ReferenceMesh:
    """Disjoint union of meshes (each translated by its offset) as one multi-body mesh."""
    if offsets is None:
        offsets = [(0.0, 0.0)] * len(meshes)
    V, T, B, C, D = [], [], [], [], []
    nv = 0
    nc = 0
    for m, off in zip(meshes, offsets):
        V.append(m.vertices + np.asarray(off, dtype=float))
        T.append(m.triangles + nv)
        B.append(m.boundary_edges + nv)
        C.append(m.components + nc)
        D.append(m.dirichlet_vertices + nv)
        nv += m.n_vertices
        nc += int(m.components.max()) + 1
    return ReferenceMesh(np.concatenate(V), np.concatenate(T), np.concatenate(B),
                         np.concatenate(C), np.concatenate(D))


def two_discs(radius: float = 0.5, resolution: int = 5, separation: float = 1.2) -> ReferenceMesh:
    """Two equal discs centred at (0, 0) and (separation, 0)."""
    d = disc(radius, resolution)
    return compose(d, d, offsets=[(0.0, 0.0), (separation, 0.0)])


# ---------------------------------------------------------------- mesh files

def write_mesh(mesh: ReferenceMesh, path) -> None:
    lines = ["[vertices]"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append("[triangles]")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    lines.append("[boundary]")
    lines += [f"{a} {b}" for a, b in mesh.boundary_edges.tolist()]
    lines.append("[components]")
    lines += [str(c) for c in mesh.components.tolist()]
    if len(mesh.dirichlet_vertices):
        lines.append("[dirichlet]")
        lines += [str(v) for v in mesh.dirichlet_vertices.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> ReferenceMesh:
    sections: dict[str, list[list[str]]] = {}
    current = None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current in sections:
                raise MeshError(f"duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise MeshError("data before the first section header")
        sections[current].append(line.split())
    known = {"vertices", "triangles", "boundary", "components", "dirichlet"}
    unknown = set(sections) - known
    if unknown:
        raise MeshError(f"unknown mesh sections: {sorted(unknown)}")
    for req in ("vertices", "triangles"):
        if req not in sections:
            raise MeshError(f"mesh file lacks [{req}]")
    V = np.array([[float(s) for s in row] for row in sections["vertices"]], dtype=float)
    T = np.array([[int(s) for s in row] for row in sections["triangles"]], dtype=np.int64)
    B = (np.array([[int(s) for s in row] for row in sections["boundary"]], dtype=np.int64)
         if sections.get("boundary") else _boundary_from_triangles(T))
    C = (np.array([int(row[0]) for row in sections["components"]], dtype=np.int64)
         if sections.get("components") else _components_from_triangles(len(V), T))
    D = np.array([int(row[0]) for row in sections.get("dirichlet", [])], dtype=np.int64)
    mesh = ReferenceMesh(V, T, B.reshape(-1, 2), C, D)
    mesh.check()
    return mesh
