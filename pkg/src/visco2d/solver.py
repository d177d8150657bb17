"""Interior-point Newton solver for one incremental minimisation step.

Each step minimises over positions ``x``::

    J(x) = E(x) + 1/2 d^T Q d - f^T d,    d = x - x_prev,
    Q = (2/tau) K(x_prev) + M_rho / (h tau),   f = F_ext + M_rho zeta / h

subject to ``g_i(x) >= 0`` for the gap constraints near the predicted path.
The constraints are handled with a logarithmic barrier whose weight is
driven to ``mu_min``; multipliers are recovered as ``mu / g``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import contact
from .geometry import ReferenceMesh, det2
from .material import MaterialParams, dissipation_matrix, energy_gradient, energy_hessian_data, energy_parts

logger = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Scales:
    energy: float
    length: float
    momentum: float

    @property
    def force(self) -> float:
        return self.energy / self.length


def problem_scales(mesh: ReferenceMesh, mp: MaterialParams, v0=None, gravity=(0.0, 0.0)) -> Scales:
    """Characteristic energy, length and momentum of a scenario."""
    area = mesh.total_area
    L = float(np.linalg.norm(np.ptp(mesh.vertices, axis=0)))
    v = 0.0 if v0 is None else float(np.max(np.linalg.norm(np.asarray(v0).reshape(-1, 2), axis=1), initial=0.0))
    E = mp.mu * area + 0.5 * mp.rho * area * v**2 + mp.rho * area * float(np.linalg.norm(gravity)) * L
    return Scales(E, L, float(np.sqrt(2 * mp.rho * area * E)))


@dataclass
class SolverSettings:
    mu0: float = 1e-6
    mu_factor: float = 0.1
    mu_min: float = 1e-10
    tol_kkt: float = 1e-8
    eps_act: float = 1e-2
    max_newton: int = 60
    max_enlarge: int = 6
    fraction_to_boundary: float = 0.01
    armijo: float = 1e-4
    topo_cutoff: int = 3
    polish: float = 1e-3

    @classmethod
    def scaled(cls, scales: Scales, mesh: ReferenceMesh, **kw) -> "SolverSettings":
        """Settings with ``mu0``, ``mu_min`` (energy), ``tol_kkt`` (force) and ``eps_act``
        (shortest edge) given relative to the problem scales."""
        rel = dict(mu0=1e-6, mu_min=1e-10, tol_kkt=1e-8, eps_act=0.02)
        unknown = set(kw) - set(cls.__dataclass_fields__)
        if unknown:
            raise TypeError(f"unknown solver settings: {sorted(unknown)}")
        rel.update({k: kw.pop(k) for k in list(kw) if k in rel})
        return cls(mu0=rel["mu0"] * scales.energy, mu_min=rel["mu_min"] * scales.energy,
                   tol_kkt=rel["tol_kkt"] * scales.force, eps_act=rel["eps_act"] * mesh.min_edge_length, **kw)


@dataclass
class IncrementalProblem:
    mesh: ReferenceMesh
    material: MaterialParams
    x_prev: np.ndarray
    tau: float
    zeta: np.ndarray | None = None
    h: float | None = None
    f_ext: np.ndarray | None = None
    obstacles: list = field(default_factory=list)
    x_fixed: np.ndarray | None = None

    def __post_init__(self):
        n = self.mesh.n_dofs
        self.x_prev = np.asarray(self.x_prev, dtype=float).ravel().copy()
        self.zeta = np.zeros(n) if self.zeta is None else np.asarray(self.zeta, dtype=float).ravel().copy()
        self.f_ext = np.zeros(n) if self.f_ext is None else np.asarray(self.f_ext, dtype=float).ravel().copy()
        inertial = self.h is not None and np.isfinite(self.h) and self.material.rho > 0
        m = np.repeat(self.material.rho * self.mesh.lumped_area, 2) if inertial else np.zeros(n)
        self.mass = m
        self.K = dissipation_matrix(self.mesh, self.x_prev, self.material)
        asm = self.mesh.assembler
        self.Q_data = (2.0 / self.tau) * self.K.data
        if inertial:
            self.Q_data = self.Q_data + asm.diagonal_data(m / (self.h * self.tau))
        self.Q = asm.matrix(self.Q_data)
        self.f = self.f_ext + (m * self.zeta / self.h if inertial else 0.0)
        fixed = np.zeros(n, dtype=bool)
        dv = self.mesh.dirichlet_vertices
        fixed[2 * dv] = True
        fixed[2 * dv + 1] = True
        self.fixed = fixed
        self.free = np.flatnonzero(~fixed)
        self.target = self.x_prev.copy()
        if self.x_fixed is not None:
            self.target[fixed] = np.asarray(self.x_fixed, dtype=float).ravel()[fixed]

    def objective(self, x) -> float:
        e = energy_parts(self.mesh, x, self.material)
        if not e.feasible:
            return np.inf
        d = x - self.x_prev
        return e.total + 0.5 * d @ (self.Q @ d) - self.f @ d

    def gradient(self, x) -> np.ndarray:
        d = x - self.x_prev
        return energy_gradient(self.mesh, x, self.material) + self.Q @ d - self.f

    def hessian(self, x):
        return self.mesh.assembler.matrix(energy_hessian_data(self.mesh, x, self.material) + self.Q_data)

    def predictor(self) -> np.ndarray:
        x = self.x_prev + self.tau * self.zeta
        x[self.fixed] = self.target[self.fixed]
        return x


@dataclass
class StepResult:
    x: np.ndarray
    lam: np.ndarray
    constraints: contact.ConstraintSet
    evaluation: contact.GapEvaluation
    objective: float
    objective_prev: float
    energy: object
    dissipation: float
    kkt_residual: float
    reactions: np.ndarray
    contact_force: contact.ContactForce
    newton_iterations: int
    enlargements: int
    search_radius: float

    @property
    def descent(self) -> float:
        """J(x_k) - J(x_{k-1}); non-positive up to solver tolerance."""
        return self.objective - self.objective_prev

    @property
    def sigma(self) -> np.ndarray:
        return self.contact_force.nodal(len(self.x) // 2)


class _Stalled(Exception):
    pass


class _Escaped(Exception):
    pass


def _feasible(mesh, x, cs, obstacles):
    F = (mesh.gradient_operator @ x).reshape(-1, 2, 2)
    J = det2(F)
    if np.any(J <= 0):
        return None
    ev = contact.evaluate_gaps(mesh, x.reshape(-1, 2), cs, obstacles)
    if np.any(ev.gap <= 0) or _crossed(mesh, x, cs):
        return None
    return J, ev


def _crossed(mesh, x, cs) -> bool:
    """True if some witness lies behind its edge with its projection inside the segment.

    Vertex-edge pairs are only generated with the witness on the exterior
    side, so this flags a point that passed through the edge during a step,
    which the unsigned distance alone cannot detect.
    """
    rows = np.flatnonzero(cs.kind == contact.SELF)
    if rows.size == 0:
        return False
    X = x.reshape(-1, 2)
    e = mesh.boundary_edges[cs.edge[rows]]
    a = X[e[:, 0]]
    d = X[e[:, 1]] - a
    r = X[cs.witness[rows]] - a
    side = d[:, 0] * r[:, 1] - d[:, 1] * r[:, 0]
    t = np.einsum("ij,ij->i", r, d) / np.einsum("ij,ij->i", d, d)
    return bool(np.any((side > 0) & (t >= 0) & (t <= 1)))


def _roundoff_floor(x, ev, cs, lam) -> float:
    """Attainable gradient accuracy when gap directions come from nearly coincident points.

    A direction computed from points at distance g carries a relative error
    of about eps * |x| / g, so a multiplier lam cannot be balanced more
    accurately than lam times that.
    """
    if not len(cs) or lam is None:
        return 0.0
    rows = cs.kind == contact.SELF
    if not np.any(rows):
        return 0.0
    size = float(np.max(np.abs(x)))
    return float(np.max(np.finfo(float).eps * size * lam[rows] / ev.gap[rows]))


def _barrier_hessian(mesh, x, cs, ev, lam):
    """Primal-dual barrier Hessian with gap curvature, projected to PSD per constraint.

    At small gaps the multipliers are large and lam * hess(g) stiffens the
    tangential motions that would close a gap at second order; leaving it out
    makes Newton slide the contact shut and stall at the boundary.
    """
    N = mesh.n_vertices
    G = ev.grads.reshape(len(cs), 6)
    local = (lam / ev.gap)[:, None, None] * G[:, :, None] * G[:, None, :]
    local -= lam[:, None, None] * contact.gap_hessians(mesh, x, cs, ev)
    w, V = np.linalg.eigh(local)
    local = (V * np.maximum(w, 0.0)[:, None, :]) @ V.transpose(0, 2, 1)
    verts = np.where(ev.verts >= 0, ev.verts, 0)
    dofs = (2 * verts[:, :, None] + np.arange(2)).reshape(len(cs), 6)
    rows = np.broadcast_to(dofs[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(dofs[:, None, :], local.shape).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(2 * N, 2 * N))


def _newton_stage(prob: IncrementalProblem, x, cs, mu, tol, settings, d_pred, iters, lam=None, accept=None):
    """Primal-dual Newton on the barrier problem at fixed ``mu``; returns (x, gaps, lam)."""
    mesh = prob.mesh
    free = prob.free
    obstacles = prob.obstacles
    N = mesh.n_vertices

    def merit(x, ev):
        val = prob.objective(x)
        if len(cs):
            val -= mu * np.sum(np.log(ev.gap))
        return val

    dets, ev = _feasible(mesh, x, cs, obstacles)
    phi = merit(x, ev)
    if len(cs):
        lam = mu / ev.gap if lam is None else np.clip(lam, 1e-3 * mu / ev.gap, 1e3 * mu / ev.gap)
    for _ in range(settings.max_newton):
        iters[0] += 1
        Jg = ev.jacobian(N) if len(cs) else None
        grad = prob.gradient(x)
        if len(cs):
            grad -= Jg.T @ (mu / ev.gap)
        gnorm = float(np.max(np.abs(grad[free]), initial=0.0))
        logger.debug("newton mu=%.2e m=%d |g|=%.3e tol=%.1e min gap=%.3e", mu, len(cs), gnorm, tol,
                     ev.gap.min() if len(cs) else np.inf)
        if gnorm <= tol:
            return x, ev, (mu / ev.gap if len(cs) else lam)
        H = prob.hessian(x)
        if len(cs):
            H = H + _barrier_hessian(mesh, x, cs, ev, lam)
        if len(free) < len(x):
            # prescribed dofs: identity rows so the step leaves them in place
            keep = sp.diags((~prob.fixed).astype(float))
            H = keep @ H @ keep + sp.diags(prob.fixed.astype(float))
        Hf = H.tocsc()
        gf = np.where(prob.fixed, 0.0, grad)
        step = None
        delta = 0.0
        diag_scale = float(np.mean(np.abs(Hf.diagonal()))) or 1.0
        for _attempt in range(12):
            A = Hf if delta == 0.0 else Hf + delta * sp.identity(len(x), format="csc")
            try:
                p = spla.splu(A, permc_spec="MMD_AT_PLUS_A").solve(-gf)
            except RuntimeError:
                p = None
            if p is not None and np.all(np.isfinite(p)) and gf @ p < 0:
                step = p
                break
            delta = 1e-10 * diag_scale if delta == 0.0 else delta * 100.0
        if step is None:
            step = -gf / diag_scale
        full = step
        full[prob.fixed] = 0.0
        alpha = 1.0
        accepted = False
        slope = float(gf @ step)
        while alpha > 1e-12:
            xn = x + alpha * full
            disp = np.max(np.linalg.norm((xn - prob.x_prev).reshape(-1, 2), axis=1))
            if disp > d_pred:
                alpha *= 0.5
                continue
            fe = _feasible(mesh, xn, cs, obstacles)
            if fe is None or np.any(fe[0] < settings.fraction_to_boundary * dets) or (
                    len(cs) and np.any(fe[1].gap < settings.fraction_to_boundary * ev.gap)):
                alpha *= 0.5
                continue
            phin = merit(xn, fe[1])
            if phin <= phi + settings.armijo * alpha * slope:
                accepted = True
                break
            # near round-off the merit cannot resolve decrease; fall back to the gradient norm
            if abs(phin - phi) <= 1e-13 * max(abs(phi), 1.0) * 10:
                gn = prob.gradient(xn)
                if len(cs):
                    gn -= fe[1].jacobian(N).T @ (mu / fe[1].gap)
                if np.max(np.abs(gn[free]), initial=0.0) < gnorm:
                    accepted = True
                    break
            alpha *= 0.5
        logger.debug("  line search alpha=%.2e accepted=%s", alpha, accepted)
        if not accepted and accept is not None and gnorm <= max(accept, _roundoff_floor(x, ev, cs, lam)):
            return x, ev, (mu / ev.gap if len(cs) else lam)
        if not accepted:
            disp = np.max(np.linalg.norm((x + full - prob.x_prev).reshape(-1, 2), axis=1))
            if disp > d_pred:
                raise _Escaped()
            raise _Stalled(gnorm)
        if len(cs):
            # dual step from the linearised complementarity g lam = mu
            dlam = mu / ev.gap - lam - (lam / ev.gap) * (Jg @ full)
            lam = lam + alpha * dlam
        x = xn
        dets, ev = fe
        phi = phin
        if len(cs):
            lam = np.clip(lam, 1e-3 * mu / ev.gap, 1e3 * mu / ev.gap)
        if np.max(np.linalg.norm((x - prob.x_prev).reshape(-1, 2), axis=1)) > 0.95 * d_pred:
            raise _Escaped()
    if accept is not None and gnorm <= max(accept, _roundoff_floor(x, ev, cs, lam)):
        return x, ev, (mu / ev.gap if len(cs) else lam)
    raise _Stalled(gnorm)


def _solve_with_radius(prob, settings, d_pred, iters):
    mesh = prob.mesh
    radius = settings.eps_act + 2.0 * d_pred
    cs, _ = contact.find_constraints(mesh, prob.x_prev, prob.obstacles, radius, cutoff=settings.topo_cutoff)
    # constraints whose dofs are all prescribed cannot change
    if len(cs):
        fixed_v = np.zeros(mesh.n_vertices, dtype=bool)
        fixed_v[mesh.dirichlet_vertices] = True
        ev0 = contact.evaluate_gaps(mesh, prob.x_prev.reshape(-1, 2), cs, prob.obstacles)
        movable = np.array([not np.all(fixed_v[v[v >= 0]]) for v in ev0.verts])
        cs = cs.subset(movable)
    x = prob.predictor()
    fe = _feasible(mesh, x, cs, prob.obstacles)
    if fe is None:
        x = prob.x_prev.copy()
        x[prob.fixed] = prob.target[prob.fixed]
        if _feasible(mesh, x, cs, prob.obstacles) is None:
            raise SolverFailure("previous state is not strictly feasible")
    if len(cs) == 0:
        x, ev, _ = _newton_stage(prob, x, cs, 0.0, settings.polish * settings.tol_kkt, settings, d_pred, iters,
                                 accept=settings.tol_kkt)
        return x, cs, ev, 0.0
    mu = settings.mu0
    lam = None
    while True:
        last = mu <= settings.mu_min
        tol = settings.tol_kkt * (settings.polish if last else mu / settings.mu_min)
        x, ev, lam = _newton_stage(prob, x, cs, mu, tol, settings, d_pred, iters, lam,
                                   accept=settings.tol_kkt if last else None)
        if last:
            return x, cs, ev, mu
        mu = mu * settings.mu_factor
        if mu <= settings.mu_min * (1.0 + 1e-6):
            mu = settings.mu_min


def solve_incremental(prob: IncrementalProblem, settings: SolverSettings | None = None) -> StepResult:
    """Minimise the incremental functional; raises SolverFailure if Newton stalls."""
    settings = settings or SolverSettings()
    mesh = prob.mesh
    N = mesh.n_vertices
    step_len = float(np.max(np.linalg.norm((prob.tau * prob.zeta).reshape(-1, 2), axis=1), initial=0.0))
    d_pred = max(4.0 * step_len, 0.5 * mesh.min_edge_length)
    iters = [0]
    for enlarge in range(settings.max_enlarge + 1):
        try:
            x, cs, ev, mu = _solve_with_radius(prob, settings, d_pred, iters)
            break
        except _Escaped:
            d_pred *= 2.0
        except _Stalled as exc:
            raise SolverFailure(f"Newton stalled with gradient norm {exc.args[0]:.3e}") from None
    else:
        raise SolverFailure("step exceeded the largest search radius")
    lam = mu / ev.gap if len(cs) else np.zeros(0)
    grad = prob.gradient(x)
    Jg = ev.jacobian(N) if len(cs) else sp.csr_matrix((0, 2 * N))
    resid = grad - Jg.T @ lam
    reactions = np.zeros(2 * N)
    reactions[prob.fixed] = resid[prob.fixed]
    kkt = float(np.max(np.abs(resid[prob.free]), initial=0.0))
    force = contact.assemble_contact_force(cs, ev, lam)
    d = x - prob.x_prev
    b = d / prob.tau
    return StepResult(
        x=x, lam=lam, constraints=cs, evaluation=ev,
        objective=prob.objective(x), objective_prev=prob.objective(prob.x_prev),
        energy=energy_parts(mesh, x, prob.material),
        dissipation=float(b @ (prob.K @ b)), kkt_residual=kkt,
        reactions=reactions.reshape(-1, 2), contact_force=force,
        newton_iterations=iters[0], enlargements=enlarge,
        search_radius=settings.eps_act + 2.0 * d_pred,
    )
