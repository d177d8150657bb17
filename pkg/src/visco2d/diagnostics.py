"""Invariant suites evaluated on a stored (or in-memory) simulation record.

Every suite works from the ledger, the frames and the contact table only, so
the same code runs in-run and offline; records written with 17 significant
digits give identical inputs and therefore identical verdicts.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import contact
from .geometry import Deformation, HalfPlane, deformation_gradients, det2
from .material import energy_parts
from .record import RecordData

DESCENT_TOL = 1e-10
ENERGY_TOL = 1e-8
MOMENTUM_TOL = 1e-8
ENERGY_MATCH_TOL = 1e-9


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    limit: float
    detail: str = ""

    def to_dict(self):
        return dict(name=self.name, passed=bool(self.passed), worst=float(self.worst), limit=float(self.limit),
                    detail=self.detail)


@dataclass
class DiagnosticsReport:
    name: str
    suites: list[SuiteResult]
    info: dict = field(default_factory=dict)
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def verdicts(self) -> dict:
        return {s.name: s.passed for s in self.suites}

    def suite(self, name) -> SuiteResult:
        for s in self.suites:
            if s.name == name:
                return s
        raise KeyError(name)

    def table(self) -> str:
        lines = [f"diagnostics for {self.name}"]
        for s in self.suites:
            lines.append(f"  {'PASS' if s.passed else 'FAIL'}  {s.name:<18} worst={s.worst:.3e} "
                         f"limit={s.limit:.3e}  {s.detail}")
        for k, v in self.info.items():
            lines.append(f"  info  {k:<18} {v}")
        lines.append(f"  overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_dict(self):
        return dict(name=self.name, passed=self.passed, suites=[s.to_dict() for s in self.suites],
                    info=self.info, runtime=self.runtime)


def _steps(d: RecordData) -> np.ndarray:
    return np.flatnonzero(d.ledger["tau"] > 0)


def _balance(d: RecordData) -> np.ndarray:
    L = d.ledger
    return L["E_elastic"] + L["E_barrier"] + L["E_sg"] + L["dissipation"] + L["kinetic"] - L["work"]


def check_completed(d: RecordData) -> SuiteResult:
    t_end = float(d.ledger["t"][-1]) if len(d.ledger["t"]) else 0.0
    ok = d.failed is None and np.isclose(t_end, d.T, rtol=0, atol=1e-9 * max(d.T, 1.0))
    return SuiteResult("completed", bool(ok), t_end, d.T, d.failed or "")


def check_descent(d: RecordData) -> SuiteResult:
    s = _steps(d)
    inc = d.ledger["J"][s] - d.ledger["J_prev"][s]
    worst = float(np.max(inc, initial=-np.inf))
    limit = DESCENT_TOL * d.scales.energy
    return SuiteResult("descent", bool(np.all(inc <= limit)), worst, limit, f"{s.size} inner steps")


def check_energy_interval(d: RecordData) -> SuiteResult:
    t = d.ledger["t"]
    k = t / d.h
    ends = np.flatnonzero(np.abs(k - np.round(k)) <= 1e-9 * np.maximum(1.0, k))
    B = _balance(d)[ends]
    slack = B[:-1] - B[1:]
    worst = float(np.min(slack, initial=np.inf))
    limit = -ENERGY_TOL * d.scales.energy
    return SuiteResult("energy_interval", bool(np.all(slack >= limit)), worst, limit,
                       f"{slack.size} outer intervals")


def check_energy_global(d: RecordData) -> SuiteResult:
    B = _balance(d)
    slack = B[0] - B
    worst = float(np.min(slack))
    limit = -ENERGY_TOL * d.scales.energy
    return SuiteResult("energy_global", bool(np.all(slack >= limit)), worst, limit, f"{B.size} output times")


def check_energy_frames(d: RecordData) -> SuiteResult:
    """Ledger energies agree with energies recomputed from the stored frames."""
    L = d.ledger
    worst = 0.0
    for idx, t, x in d.frames:
        rows = np.flatnonzero(L["frame"] == idx)
        if rows.size != 1:
            return SuiteResult("energy_frames", False, np.inf, 0.0, f"frame {idx} has no unique ledger row")
        r = rows[0]
        e = energy_parts(d.mesh, x.ravel(), d.material)
        diff = abs(e.elastic - L["E_elastic"][r]) + abs(e.barrier - L["E_barrier"][r]) \
            + abs(e.second_gradient - L["E_sg"][r])
        worst = max(worst, diff)
    limit = ENERGY_MATCH_TOL * d.scales.energy
    return SuiteResult("energy_frames", worst <= limit, worst, limit, f"{len(d.frames)} frames")


def momentum_residuals(d: RecordData) -> np.ndarray:
    """|| (P(b) - P(zeta))/h - (sum f + sum sigma + sum reactions) || per inner step."""
    L = d.ledger
    s = _steps(d)
    lhs = np.column_stack([L["p_x"][s] - L["pz_x"][s], L["p_y"][s] - L["pz_y"][s]]) / d.h
    rhs = np.column_stack([L["fext_x"][s] + L["sigma_x"][s] + L["reaction_x"][s],
                           L["fext_y"][s] + L["sigma_y"][s] + L["reaction_y"][s]])
    return np.linalg.norm(lhs - rhs, axis=1)


def free_system(d: RecordData) -> bool:
    return not d.obstacles and not np.any(d.gravity) and len(d.mesh.dirichlet_vertices) == 0


def check_momentum(d: RecordData) -> SuiteResult:
    tol = MOMENTUM_TOL * d.scales.momentum / d.h
    res = momentum_residuals(d)
    worst = float(np.max(res, initial=0.0))
    ok = worst <= tol
    detail = "difference-quotient identity"
    if free_system(d):
        P = np.column_stack([d.ledger["p_x"], d.ledger["p_y"]])
        drift = float(np.max(np.linalg.norm(P - P[0], axis=1)))
        ok = ok and drift <= tol * d.T
        detail += f"; total momentum drift {drift:.3e} (limit {tol * d.T:.3e})"
    return SuiteResult("momentum", bool(ok), worst, tol, detail)


def check_multipliers(d: RecordData) -> SuiteResult:
    mags = d.contacts.magnitude
    lam = d.ledger["lam_min"]
    lam = lam[np.isfinite(lam)]
    worst = float(min(np.min(mags, initial=np.inf), np.min(lam, initial=np.inf)))
    ok = bool(np.all(np.isfinite(mags)) and np.all(mags >= 0) and np.all(lam >= 0))
    return SuiteResult("multipliers", ok, worst if np.isfinite(worst) else 0.0, 0.0, f"{len(mags)} atoms")


def _frame_at(d: RecordData):
    L = d.ledger
    by_idx = {idx: x for idx, _, x in d.frames}
    out = {}
    for r in np.flatnonzero(L["frame"] >= 0):
        out[float(L["t"][r])] = by_idx.get(int(L["frame"][r]))
    return out


def check_normality(d: RecordData) -> SuiteResult:
    frames = _frame_at(d)
    F = d.scales.force
    worst = 0.0
    n_checked = 0
    for t in d.contacts.times():
        f = d.contacts.at(t)
        sig = contact.significant(f, F)
        if not np.any(sig):
            continue
        x = frames.get(float(t))
        if x is None:
            return SuiteResult("normality", False, np.inf, d.checks.theta_tol, f"no frame stored at t={t}")
        ang = contact.normal_angles(d.mesh, x, f)[sig]
        worst = max(worst, float(ang.max()))
        n_checked += int(sig.sum())
    return SuiteResult("normality", worst <= d.checks.theta_tol, worst, d.checks.theta_tol,
                       f"{n_checked} atoms above {contact.SIGNIFICANT_FORCE:g} x force scale")


def check_action_reaction(d: RecordData) -> SuiteResult:
    """Each self-contact pair's atoms must cancel exactly (summed in rational arithmetic)."""
    c = d.contacts
    sel = np.flatnonzero(c.kind == contact.SELF)
    if not sel.size:
        return SuiteResult("action_reaction", True, 0.0, 0.0, "no self contact")
    keys = np.column_stack([c.time[sel], c.constraint[sel]])
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    order = np.argsort(inv, kind="stable")
    bounds = np.flatnonzero(np.diff(inv[order])) + 1
    worst = 0.0
    for grp in np.split(sel[order], bounds):
        net = contact.exact_net(c.magnitude[grp], c.direction[grp])
        worst = max(worst, float(np.hypot(*net)) / float(c.magnitude[grp].max()))
    return SuiteResult("action_reaction", worst == 0.0, worst, 0.0, f"{bounds.size + 1} pairs, exact sums")


def check_feasibility(d: RecordData) -> SuiteResult:
    L = d.ledger
    worst_det = float(np.min(L["min_det"]))
    gaps = L["min_gap"][np.isfinite(L["min_gap"])]
    worst_gap = float(np.min(gaps, initial=np.inf))
    frame_det = np.inf
    for _, _, x in d.frames:
        frame_det = min(frame_det, float(det2(deformation_gradients(d.mesh, x.ravel())).min()))
    ok = worst_det > 0 and worst_gap >= 0 and frame_det > 0
    return SuiteResult("feasibility", bool(ok), min(worst_det, frame_det), 0.0,
                       f"min det {min(worst_det, frame_det):.4g}, min gap {worst_gap:.3e}")


def check_cn(d: RecordData) -> SuiteResult:
    worst = 0.0
    ok = True
    for _, _, x in d.frames:
        r = contact.ciarlet_necas_deficit(Deformation(d.mesh, x), d.r_cn)
        ok = ok and r.ok
        worst = max(worst, abs(r.deficit) / r.tolerance)
    return SuiteResult("cn_deficit", bool(ok), worst, 1.0, f"{len(d.frames)} frames, |deficit| / raster tolerance")


def wall_velocity(d: RecordData, normal) -> np.ndarray:
    n = np.asarray(normal, dtype=float)
    mass = d.material.rho * d.mesh.total_area
    return (d.ledger["p_x"] * n[0] + d.ledger["p_y"] * n[1]) / mass


def check_rebound(d: RecordData) -> SuiteResult:
    walls = [ob for ob in d.obstacles if isinstance(ob, HalfPlane)]
    if not walls:
        return SuiteResult("rebound", False, np.nan, 0.0, "no half-plane obstacle")
    vn = wall_velocity(d, walls[0].normal)
    sig = d.ledger["sigma_norm"] >= contact.SIGNIFICANT_FORCE * d.scales.force
    if not np.any(sig):
        return SuiteResult("rebound", False, float(vn[-1]), 0.0, "no contact")
    first = int(np.argmax(sig))
    after = vn[first:]
    neg = np.flatnonzero(after <= 0)
    start = first + (neg[-1] + 1 if neg.size else 0)
    ok = start < len(vn)
    t_leave = float(d.ledger["t"][start]) if ok else np.nan
    return SuiteResult("rebound", bool(ok), float(vn[-1]), 0.0,
                       f"first contact t={d.ledger['t'][first]:.4g}, away from wall from t={t_leave:.4g} on")


def opposite_normals(d: RecordData) -> float:
    """Largest 1 + n(witness).n(target) over significant self contacts (reported, not judged)."""
    frames = _frame_at(d)
    worst = 0.0
    c = d.contacts
    for t in c.times():
        f = c.at(t)
        m = (f.kind == contact.SELF) & (f.edge >= 0) & contact.significant(f, d.scales.force)
        x = frames.get(float(t))
        if not np.any(m) or x is None:
            continue
        vn = contact.vertex_normals(d.mesh, x)
        en = contact.edge_interior_normals(d.mesh, x)
        wit = f.partner[m]
        worst = max(worst, float(np.max(1.0 + np.einsum("ij,ij->i", vn[wit], en[f.edge[m]]))))
    return worst


def run_checks(d: RecordData) -> DiagnosticsReport:
    t0 = _time.perf_counter()
    suites = [
        check_completed(d), check_descent(d), check_energy_interval(d), check_energy_global(d),
        check_energy_frames(d), check_momentum(d), check_multipliers(d), check_normality(d),
        check_action_reaction(d), check_feasibility(d), check_cn(d),
    ]
    if d.checks.rebound:
        suites.append(check_rebound(d))
    info = dict(sigma_l2=f"{d.sigma_l2:.6e}", opposite_normal_defect=f"{opposite_normals(d):.3e}",
                delta_opp=d.checks.delta_opp)
    return DiagnosticsReport(d.name, suites, info, _time.perf_counter() - t0)
