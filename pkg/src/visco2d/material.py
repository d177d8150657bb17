"""Second-grade viscoelastic energy-dissipation pair on P1 triangles.

Stored energy per unit reference area::

    W(F) = mu |C - I|^2 + lam tr(C - I)^2 + c1 (J^-a + a J - 1 - a),   C = F^T F,  J = det F

plus the hinge second-gradient term ``c2 * sum_e w_e |(F_l - F_r)/l_e|^p``. The
barrier is shifted by an affine function of J so that the identity is a
stress-free state. Dissipation is ``nu * int |d/dt (F^T F)|^2``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import Deformation, ReferenceMesh, VelocityField, cofactor, det2

logger = logging.getLogger(__name__)

INFEASIBLE = np.inf


class InfeasibleDeformation(ValueError):
    """Raised when a derivative is requested at a state with det F <= 0."""

    def __init__(self, triangle: int, det: float):
        super().__init__(f"triangle {triangle} has det F = {det:g} <= 0")
        self.triangle = triangle
        self.det = det


@dataclass(frozen=True)
class MaterialParams:
    mu: float = 1.0
    lam: float = 0.0
    c1: float = 0.1
    a: float = 16.0
    c2: float = 1e-3
    p: float = 4.0
    rho: float = 1.0
    nu: float = 1.0

    def __post_init__(self):
        for name in ("mu", "c1", "a", "c2", "rho", "nu"):
            if not getattr(self, name) > 0:
                raise ValueError(f"material parameter {name} must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not self.p > 2:
            raise ValueError("second-gradient exponent p must exceed 2")
        n = 2
        threshold = self.p * n / (self.p - n)
        if self.a <= threshold:
            warnings.warn(f"barrier exponent a={self.a} is below the injectivity threshold "
                          f"p*n/(p-n)={threshold:g}", stacklevel=2)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EnergyBreakdown:
    elastic: float
    barrier: float
    second_gradient: float
    infeasible_triangle: int | None = None

    @property
    def total(self) -> float:
        return self.elastic + self.barrier + self.second_gradient

    @property
    def feasible(self) -> bool:
        return self.infeasible_triangle is None


def _gradients(mesh, x):
    return (mesh.gradient_operator @ np.asarray(x, dtype=float).ravel()).reshape(-1, 2, 2)


def barrier_density(J, a):
    """Normalised volumetric barrier J^-a + aJ - (1+a); zero with zero slope at J = 1."""
    return J ** (-a) + a * J - (1.0 + a)


def energy_parts(mesh: ReferenceMesh, x, mp: MaterialParams) -> EnergyBreakdown:
    F = _gradients(mesh, x)
    J = det2(F)
    if np.any(J <= 0):
        bad = int(np.flatnonzero(J <= 0)[0])
        return EnergyBreakdown(INFEASIBLE, INFEASIBLE, INFEASIBLE, bad)
    A = mesh.signed_areas
    E = np.einsum("tki,tkj->tij", F, F)
    E[:, 0, 0] -= 1.0
    E[:, 1, 1] -= 1.0
    trE = E[:, 0, 0] + E[:, 1, 1]
    w_el = mp.mu * np.einsum("tij,tij->t", E, E) + mp.lam * trE**2
    w_bar = mp.c1 * barrier_density(J, mp.a)
    H = (mesh.hinge_operator @ np.asarray(x, dtype=float).ravel()).reshape(-1, 4)
    s = np.einsum("ek,ek->e", H, H)
    sg = mp.c2 * float(np.dot(mesh.hinge_weights, s ** (mp.p / 2)))
    return EnergyBreakdown(float(A @ w_el), float(A @ w_bar), sg)


def elastic_energy(d: Deformation, mp: MaterialParams) -> EnergyBreakdown:
    return energy_parts(d.mesh, d.positions, mp)


def energy(mesh: ReferenceMesh, x, mp: MaterialParams) -> float:
    return energy_parts(mesh, x, mp).total


def _first_piola(F, mp):
    """dW/dF for the bulk terms, (T, 2, 2); assumes det F > 0."""
    J = det2(F)
    E = np.einsum("tki,tkj->tij", F, F)
    E[:, 0, 0] -= 1.0
    E[:, 1, 1] -= 1.0
    trE = E[:, 0, 0] + E[:, 1, 1]
    P = 4.0 * mp.mu * np.einsum("tik,tkj->tij", F, E) + 4.0 * mp.lam * trE[:, None, None] * F
    P += (mp.c1 * mp.a * (1.0 - J ** (-mp.a - 1.0)))[:, None, None] * cofactor(F)
    return P


def energy_gradient(mesh: ReferenceMesh, x, mp: MaterialParams) -> np.ndarray:
    """Exact gradient of the discrete energy with respect to the flat nodal dofs."""
    x = np.asarray(x, dtype=float).ravel()
    F = _gradients(mesh, x)
    J = det2(F)
    if np.any(J <= 0):
        bad = int(np.flatnonzero(J <= 0)[0])
        raise InfeasibleDeformation(bad, float(J[bad]))
    P = _first_piola(F, mp) * mesh.signed_areas[:, None, None]
    g = mesh.gradient_operator.T @ P.reshape(-1)
    H = mesh.hinge_operator @ x
    Hr = H.reshape(-1, 4)
    s = np.einsum("ek,ek->e", Hr, Hr)
    coef = mp.c2 * mp.p * mesh.hinge_weights * s ** (mp.p / 2 - 1)
    g += mesh.hinge_operator.T @ (coef[:, None] * Hr).ravel()
    return g


def elastic_gradient(d: Deformation, mp: MaterialParams) -> np.ndarray:
    """Per-vertex covector DE(eta), shape (N, 2)."""
    return energy_gradient(d.mesh, d.positions, mp).reshape(-1, 2)


_UNIT = np.eye(4).reshape(4, 2, 2)


def _bulk_hessian_blocks(F, mp):
    """(T, 4, 4) exact Hessians of the bulk density with respect to row-major vec F."""
    J = det2(F)
    E = np.einsum("tki,tkj->tij", F, F)
    E[:, 0, 0] -= 1.0
    E[:, 1, 1] -= 1.0
    trE = E[:, 0, 0] + E[:, 1, 1]
    cof = cofactor(F)
    wp = mp.c1 * mp.a * (1.0 - J ** (-mp.a - 1.0))
    wpp = mp.c1 * mp.a * (mp.a + 1.0) * J ** (-mp.a - 2.0)
    Hs = np.empty((len(F), 4, 4))
    for k in range(4):
        dF = _UNIT[k]
        dE = np.einsum("ki,tkj->tij", dF, F) + np.einsum("tki,kj->tij", F, dF)
        trdE = dE[:, 0, 0] + dE[:, 1, 1]
        dP = 4.0 * mp.mu * (np.einsum("ik,tkj->tij", dF, E) + np.einsum("tik,tkj->tij", F, dE))
        dP += 4.0 * mp.lam * (trdE[:, None, None] * F + trE[:, None, None] * dF)
        dJ = np.einsum("tij,ij->t", cof, dF)
        dP += (wpp * dJ)[:, None, None] * cof + wp[:, None, None] * cofactor(dF)[None]
        Hs[:, :, k] = dP.reshape(-1, 4)
    return 0.5 * (Hs + Hs.transpose(0, 2, 1))


def _project_psd(H):
    w, Q = np.linalg.eigh(H)
    w = np.maximum(w, 0.0)
    return np.einsum("tij,tj,tkj->tik", Q, w, Q)


def energy_hessian_data(mesh: ReferenceMesh, x, mp: MaterialParams, project: bool = True) -> np.ndarray:
    """CSR data of the Hessian in the pattern of ``mesh.assembler``."""
    x = np.asarray(x, dtype=float).ravel()
    F = _gradients(mesh, x)
    Hb = _bulk_hessian_blocks(F, mp)
    if project:
        Hb = _project_psd(Hb)
    asm = mesh.assembler
    data = asm.data(0, Hb * mesh.signed_areas[:, None, None])
    D = mesh.hinge_operator
    if D.shape[0]:
        Hr = (D @ x).reshape(-1, 4)
        s = np.einsum("ek,ek->e", Hr, Hr)
        q = mp.p / 2 - 1
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(s[:, None] > 0, Hr / np.sqrt(s)[:, None], 0.0)
        c = mp.c2 * mp.p * mesh.hinge_weights
        blocks = (c * s**q)[:, None, None] * (np.eye(4)[None] + (mp.p - 2) * np.einsum("ei,ej->eij", unit, unit))
        data += asm.data(1, blocks)
    return data


def energy_hessian(mesh: ReferenceMesh, x, mp: MaterialParams, project: bool = True) -> sp.csr_matrix:
    """Sparse Hessian of the discrete energy; element blocks clamped to PSD when ``project``."""
    return mesh.assembler.matrix(energy_hessian_data(mesh, x, mp, project))


# ---------------------------------------------------------------- dissipation

def _strain_rate_maps(F):
    """(T, 4, 4) linear maps vec G -> vec(G^T F + F^T G)."""
    L = np.empty((len(F), 4, 4))
    for k in range(4):
        G = _UNIT[k]
        S = np.einsum("ki,tkj->tij", G, F) + np.einsum("tki,kj->tij", F, G)
        L[:, :, k] = S.reshape(-1, 4)
    return L


def dissipation_matrix(mesh: ReferenceMesh, x, mp: MaterialParams) -> sp.csr_matrix:
    """Symmetric PSD matrix K with R(eta, b) = b^T K b."""
    F = _gradients(mesh, x)
    L = _strain_rate_maps(F)
    blocks = mp.nu * mesh.signed_areas[:, None, None] * np.einsum("tki,tkj->tij", L, L)
    asm = mesh.assembler
    return asm.matrix(asm.data(0, blocks))


def dissipation_value(mesh: ReferenceMesh, x, b, mp: MaterialParams) -> float:
    F = _gradients(mesh, x)
    Gb = _gradients(mesh, b)
    S = np.einsum("tki,tkj->tij", Gb, F)
    S = S + S.transpose(0, 2, 1)
    return float(mp.nu * mesh.signed_areas @ np.einsum("tij,tij->t", S, S))


def dissipation(d: Deformation, vel: VelocityField, mp: MaterialParams) -> float:
    return dissipation_value(d.mesh, d.positions, vel.values, mp)


def dissipation_gradient(d: Deformation, vel: VelocityField, mp: MaterialParams) -> np.ndarray:
    """D_2 R(eta, b) as a per-vertex covector, shape (N, 2)."""
    mesh = d.mesh
    F = d.gradients
    Gb = _gradients(mesh, vel.values)
    S = np.einsum("tki,tkj->tij", Gb, F)
    S = S + S.transpose(0, 2, 1)
    # dR/dG = 4 nu A F S  (S symmetric)
    P = 4.0 * mp.nu * mesh.signed_areas[:, None, None] * np.einsum("tik,tkj->tij", F, S)
    return (mesh.gradient_operator.T @ P.reshape(-1)).reshape(-1, 2)


def korn_constant(d: Deformation, mp: MaterialParams) -> float:
    """Smallest generalised eigenvalue of R(eta, .) + ||.||_L2^2 against the discrete H^1 norm."""
    from scipy.linalg import eigh

    mesh = d.mesh
    K = dissipation_matrix(mesh, d.positions, mp).toarray()
    m = np.repeat(mesh.lumped_area, 2)
    G = mesh.gradient_operator
    S = (G.T @ sp.diags(np.repeat(mesh.signed_areas, 4)) @ G).toarray()
    lhs = K + np.diag(m)
    rhs = S + np.diag(m)
    return float(eigh(lhs, rhs, eigvals_only=True, subset_by_index=[0, 0])[0])
