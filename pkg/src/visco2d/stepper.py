"""Two-time-scale stepping: outer intervals of length h, M inner steps each.

Inside an outer interval the inertial term is replaced by the difference
quotient ``rho (b(t) - b(t - h)) / h``, where ``b`` is the piecewise constant
inner-step velocity. The velocity one interval back is read from a history
buffer; before t = 0 it equals the initial velocity.

Every inner step appends one ledger row; its energy-balance columns are
arranged so that the interval and global energy inequalities read::

    E(t) + D(t) + K(t) <= E(s) + D(s) + K(s) + W(t) - W(s)

with D the dissipated energy sum of 2 tau R, K the kinetic proxy
``(rho/2h) * int_{t-h}^t |b|^2`` and W the work of the external load.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import contact
from .geometry import Deformation, ReferenceMesh, det2
from .material import MaterialParams, energy_parts
from .solver import IncrementalProblem, Scales, SolverFailure, SolverSettings, problem_scales, solve_incremental

logger = logging.getLogger(__name__)

LEDGER_COLUMNS = [
    "t", "E_elastic", "E_barrier", "E_sg", "dissipation", "kinetic", "p_x", "p_y",
    "impulse_x", "impulse_y", "sigma_norm", "cn_deficit", "min_det", "min_gap",
    # auxiliary columns used by the offline checks
    "tau", "work", "J", "J_prev", "sigma_x", "sigma_y", "reaction_x", "reaction_y",
    "fext_x", "fext_y", "pz_x", "pz_y", "kkt", "lam_min", "cn_tol", "cn_coarse", "frame",
]


@dataclass
class Scenario:
    """Everything needed to run one simulation."""

    name: str
    mesh: ReferenceMesh
    material: MaterialParams
    x0: np.ndarray
    v0: np.ndarray
    T: float
    L: int
    M: int
    obstacles: list = field(default_factory=list)
    gravity: tuple = (0.0, 0.0)
    inertial: bool = True
    frame_stride: int = 1
    solver: dict = field(default_factory=dict)
    theta_tol: float = 5.0
    delta_opp: float = 0.1
    r_cn: int = 512
    max_split: int = 4

    def __post_init__(self):
        n = self.mesh.n_vertices
        self.x0 = np.asarray(self.x0, dtype=float).reshape(n, 2)
        self.v0 = np.broadcast_to(np.asarray(self.v0, dtype=float), (n, 2)).copy()
        if not (self.T > 0 and self.L >= 1 and self.M >= 1):
            raise ValueError("time horizon, L and M must be positive")

    @property
    def h(self) -> float:
        return self.T / self.L

    @property
    def scales(self) -> Scales:
        return problem_scales(self.mesh, self.material, self.v0, self.gravity)

    def settings(self) -> SolverSettings:
        return SolverSettings.scaled(self.scales, self.mesh, **self.solver)

    def external_force(self) -> np.ndarray:
        m = self.material.rho * self.mesh.lumped_area
        return (m[:, None] * np.asarray(self.gravity, dtype=float)[None, :]).ravel()

    def mass(self) -> np.ndarray:
        return self.material.rho * self.mesh.lumped_area if self.inertial else np.zeros(self.mesh.n_vertices)


@dataclass
class Segment:
    t0: Fraction
    t1: Fraction
    b: np.ndarray


class VelocityHistory:
    """Piecewise constant velocity on [t - h, t]; the initial velocity before 0."""

    def __init__(self, v0: np.ndarray):
        self.v0 = np.asarray(v0, dtype=float).ravel().copy()
        self.previous: list[Segment] = []
        self.current: list[Segment] = []

    def push(self, seg: Segment):
        self.current.append(seg)

    def roll(self):
        self.previous, self.current = self.current, []

    def average(self, s0: Fraction, s1: Fraction) -> np.ndarray:
        """Mean of the previous interval's velocity over [s0, s1] (in units of h, shifted back)."""
        if not self.previous:
            return self.v0.copy()
        acc = np.zeros_like(self.v0)
        covered = Fraction(0)
        for seg in self.previous:
            lo = max(seg.t0, s0)
            hi = min(seg.t1, s1)
            if hi > lo:
                acc += float(hi - lo) * seg.b
                covered += hi - lo
        if covered != s1 - s0:
            raise RuntimeError("velocity history does not cover the requested window")
        return acc / float(s1 - s0)

    def window_kinetic(self, mass2: np.ndarray, h: float, now: Fraction) -> float:
        """(rho/2h) * int over [now - 1, now] of |b|^2_M, times in units of h."""
        lo = now - 1
        tot = 0.0
        covered = Fraction(0)
        for seg in self.previous + self.current:
            a, b = max(seg.t0, lo), min(seg.t1, now)
            if b > a:
                tot += float(b - a) * h * float(seg.b @ (mass2 * seg.b))
                covered += b - a
        if covered < 1:
            tot += float(1 - covered) * h * float(self.v0 @ (mass2 * self.v0))
        return tot / (2 * h)


@dataclass
class StepperState:
    t: Fraction
    x: np.ndarray
    history: VelocityHistory
    dissipation: float = 0.0
    work: float = 0.0
    impulse: np.ndarray = field(default_factory=lambda: np.zeros(2))
    sigma_l2: float = 0.0
    step: int = 0


@dataclass
class InnerStepRecord:
    """Per-step data kept in memory for the in-run invariant checks."""

    t: float
    tau: float
    x: np.ndarray
    contact_force: contact.ContactForce
    lam: np.ndarray
    min_gap: float
    descent: float
    momentum_residual: float
    kkt: float


@dataclass
class SimulationRecord:
    scenario: Scenario
    ledger: list[dict]
    frames: list[tuple[int, float, np.ndarray]]
    contacts: list[tuple[float, contact.ContactForce]]
    steps: list[InnerStepRecord]
    sigma_l2: float
    runtime: float
    failed: str | None = None

    def column(self, name) -> np.ndarray:
        return np.array([row[name] for row in self.ledger], dtype=float)


def momentum(mass: np.ndarray, v) -> np.ndarray:
    return (mass[:, None] * np.asarray(v).reshape(-1, 2)).sum(axis=0)


def momentum_identity_check(mass, b, zeta, h, fext, sigma, reactions) -> float:
    """|| (P(b) - P(zeta))/h - (sum f + sum sigma + sum reactions) ||."""
    lhs = (momentum(mass, b) - momentum(mass, zeta)) / h
    rhs = np.asarray(fext).reshape(-1, 2).sum(0) + np.asarray(sigma).reshape(-1, 2).sum(0) \
        + np.asarray(reactions).reshape(-1, 2).sum(0)
    return float(np.linalg.norm(lhs - rhs))


def _state_row(sc: Scenario, st: StepperState, x, mass2, *, tau, J=np.nan, J_prev=np.nan,
               sigma=np.zeros(2), reaction=np.zeros(2), fext=np.zeros(2), pz=np.zeros(2),
               b=None, kkt=0.0, lam_min=np.nan, min_gap=np.inf, sigma_norm=0.0, cn=None, frame=-1):
    mesh = sc.mesh
    e = energy_parts(mesh, x, sc.material)
    dets = det2((mesh.gradient_operator @ x.ravel()).reshape(-1, 2, 2))
    p = momentum(sc.mass(), st.history.v0 if b is None else b)
    row = dict(
        t=float(st.t) * sc.h, E_elastic=e.elastic, E_barrier=e.barrier, E_sg=e.second_gradient,
        dissipation=st.dissipation, kinetic=st.history.window_kinetic(mass2, sc.h, st.t) if sc.inertial else 0.0,
        p_x=p[0], p_y=p[1], impulse_x=st.impulse[0], impulse_y=st.impulse[1], sigma_norm=sigma_norm,
        cn_deficit=np.nan if cn is None else cn.deficit, min_det=float(dets.min()), min_gap=min_gap,
        tau=tau, work=st.work, J=J, J_prev=J_prev, sigma_x=sigma[0], sigma_y=sigma[1],
        reaction_x=reaction[0], reaction_y=reaction[1], fext_x=fext[0], fext_y=fext[1],
        pz_x=pz[0], pz_y=pz[1], kkt=kkt, lam_min=lam_min,
        cn_tol=np.nan if cn is None else cn.tolerance, cn_coarse=np.nan if cn is None else cn.deficit_coarse,
        frame=frame,
    )
    return row


def _initial_gap(sc: Scenario, x, settings) -> float:
    cs = contact.detect_contacts(Deformation(sc.mesh, x), sc.obstacles, settings.eps_act,
                                 cutoff=settings.topo_cutoff)
    return float(cs.gaps.min()) if len(cs) else np.inf


class Simulation:
    """Drives a Scenario through its outer intervals and collects the record."""

    def __init__(self, sc: Scenario, on_frame=None):
        self.sc = sc
        self.settings = sc.settings()
        self.mass2 = np.repeat(sc.mass(), 2)
        self.fext = sc.external_force()
        self.on_frame = on_frame
        self.state = StepperState(Fraction(0), sc.x0.ravel().copy(), VelocityHistory(sc.v0))
        self.ledger: list[dict] = []
        self.frames: list = []
        self.contacts: list = []
        self.steps: list[InnerStepRecord] = []

    def _frame(self, x):
        idx = len(self.frames)
        self.frames.append((idx, float(self.state.t) * self.sc.h, x.reshape(-1, 2).copy()))
        if self.on_frame:
            self.on_frame(self.frames[-1])
        return idx

    def start(self):
        sc, st = self.sc, self.state
        x = st.x
        if np.any(det2((sc.mesh.gradient_operator @ x).reshape(-1, 2, 2)) <= 0):
            raise SolverFailure("initial deformation is not locally injective")
        cn = contact.ciarlet_necas_deficit(Deformation(sc.mesh, x), sc.r_cn)
        frame = self._frame(x)
        self.ledger.append(_state_row(sc, st, x, self.mass2, tau=0.0, cn=cn, frame=frame,
                                      min_gap=_initial_gap(sc, x, self.settings),
                                      fext=self.fext.reshape(-1, 2).sum(0)))

    def _solve(self, s0: Fraction, s1: Fraction, depth: int):
        """Solve the inner step [s0, s1] (units of h), splitting it on solver failure."""
        sc, st = self.sc, self.state
        h = sc.h
        tau = float(s1 - s0) * h
        zeta = st.history.average(s0 - 1, s1 - 1) if sc.inertial else np.zeros_like(st.x)
        prob = IncrementalProblem(sc.mesh, sc.material, st.x, tau, zeta=zeta,
                                  h=h if sc.inertial else None, f_ext=self.fext, obstacles=sc.obstacles)
        try:
            res = solve_incremental(prob, self.settings)
        except SolverFailure:
            if depth >= sc.max_split:
                raise
            mid = (s0 + s1) / 2
            logger.info("splitting inner step at t=%g", float(s0) * h)
            self._solve(s0, mid, depth + 1)
            self._solve(mid, s1, depth + 1)
            return
        self._accept(s1, tau, zeta, prob, res)

    def _accept(self, s1, tau, zeta, prob, res):
        sc, st = self.sc, self.state
        h = sc.h
        x_prev = st.x
        b = (res.x - x_prev) / tau
        st.history.push(Segment(st.t, s1, b))
        st.t = s1
        st.x = res.x
        st.step += 1
        st.dissipation += 2.0 * tau * res.dissipation
        st.work += tau * float(self.fext @ b)
        sigma_nodal = res.sigma
        st.impulse = st.impulse + tau * sigma_nodal.sum(axis=0)
        sig_norm = float(np.linalg.norm(sigma_nodal))
        st.sigma_l2 += tau * sig_norm**2
        react = res.reactions
        mom = momentum_identity_check(sc.mass(), b, zeta, h, self.fext, sigma_nodal, react) if sc.inertial else 0.0
        gap = float(res.evaluation.gap.min()) if len(res.constraints) else np.inf
        force = res.contact_force
        significant = contact.significant(force, sc.scales.force)
        in_contact = bool(np.any(significant))
        on_stride = (st.t.denominator == 1 and st.t.numerator % sc.frame_stride == 0) or st.t == sc.L
        cn = frame = None
        if on_stride or in_contact:
            cn = contact.ciarlet_necas_deficit(Deformation(sc.mesh, res.x), sc.r_cn)
            frame = self._frame(res.x)
        if len(force):
            self.contacts.append((float(st.t) * h, force))
        self.steps.append(InnerStepRecord(float(st.t) * h, tau, res.x.reshape(-1, 2).copy(), force, res.lam,
                                          gap, res.descent, mom, res.kkt_residual))
        self.ledger.append(_state_row(
            sc, st, res.x, self.mass2, tau=tau, J=res.objective, J_prev=res.objective_prev,
            sigma=sigma_nodal.sum(axis=0), reaction=react.sum(axis=0), fext=self.fext.reshape(-1, 2).sum(0),
            pz=momentum(sc.mass(), zeta), b=b, kkt=res.kkt_residual,
            lam_min=float(res.lam.min()) if len(res.lam) else np.nan, min_gap=gap, sigma_norm=sig_norm,
            cn=cn, frame=-1 if frame is None else frame))

    def advance_outer_interval(self):
        sc, st = self.sc, self.state
        j0 = st.t
        for k in range(sc.M):
            self._solve(j0 + Fraction(k, sc.M), j0 + Fraction(k + 1, sc.M), 0)
        st.history.roll()

    def run(self) -> SimulationRecord:
        t0 = _time.perf_counter()
        failed = None
        self.start()
        try:
            for _ in range(self.sc.L):
                self.advance_outer_interval()
        except SolverFailure as exc:
            failed = str(exc)
            logger.error("solver failure at t=%g: %s", float(self.state.t) * self.sc.h, exc)
        return SimulationRecord(self.sc, self.ledger, self.frames, self.contacts, self.steps,
                                self.state.sigma_l2, _time.perf_counter() - t0, failed)


def run(sc: Scenario, on_frame=None) -> SimulationRecord:
    return Simulation(sc, on_frame).run()
