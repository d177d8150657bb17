"""Frame snapshots and report figures (matplotlib, written to files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
from matplotlib.patches import Circle as CirclePatch, Polygon  # noqa: E402

from . import contact  # noqa: E402
from .geometry import Circle, ConvexPolygon, HalfPlane  # noqa: E402
from .record import RecordData  # noqa: E402


def _limits(frames, pad=0.15):
    pts = np.concatenate([x for _, _, x in frames])
    lo, hi = pts.min(0), pts.max(0)
    span = float(max(hi - lo))
    c = 0.5 * (lo + hi)
    half = 0.5 * span * (1 + 2 * pad)
    return (c[0] - half, c[0] + half), (c[1] - half, c[1] + half)


def _draw_obstacles(ax, obstacles, xlim, ylim):
    for ob in obstacles:
        if isinstance(ob, HalfPlane):
            n = np.asarray(ob.normal)
            xs, ys = np.meshgrid(np.linspace(*xlim, 2), np.linspace(*ylim, 2))
            corners = np.column_stack([xs.ravel(), ys.ravel()])[[0, 1, 3, 2]]
            # clip the box against n.x <= offset
            poly = []
            for a, b in zip(corners, np.roll(corners, -1, axis=0)):
                da, db = a @ n - ob.offset, b @ n - ob.offset
                if da <= 0:
                    poly.append(a)
                if da * db < 0:
                    poly.append(a + (b - a) * da / (da - db))
            if len(poly) >= 3:
                ax.add_patch(Polygon(np.array(poly), closed=True, color="0.75", zorder=0))
        elif isinstance(ob, Circle):
            ax.add_patch(CirclePatch(ob.center, ob.radius, color="0.75", zorder=0))
        elif isinstance(ob, ConvexPolygon):
            ax.add_patch(Polygon(np.asarray(ob.vertices), closed=True, color="0.75", zorder=0))


def render_frame(mesh, x, path, obstacles=(), force: contact.ContactForce | None = None, title="",
                 limits=None, force_scale=None):
    """One SVG (or any matplotlib format, by suffix) of the deformed mesh with contact arrows."""
    x = np.asarray(x).reshape(-1, 2)
    fig, ax = plt.subplots(figsize=(5, 5))
    xlim, ylim = limits or _limits([(0, 0.0, x)])
    _draw_obstacles(ax, obstacles, xlim, ylim)
    ax.triplot(x[:, 0], x[:, 1], mesh.triangles, lw=0.3, color="tab:blue")
    seg = x[mesh.boundary_edges]
    ax.add_collection(LineCollection(seg, colors="k", linewidths=0.8))
    if force is not None and len(force):
        keep = force.magnitude > 0
        if force_scale is not None:
            keep &= contact.significant(force, force_scale)
        if np.any(keep):
            vec = force.magnitude[keep, None] * force.direction[keep]
            span = xlim[1] - xlim[0]
            scale = 0.15 * span / max(float(np.abs(vec).max()), 1e-300)
            p = x[force.vertex[keep]]
            ax.quiver(p[:, 0], p[:, 1], vec[:, 0] * scale, vec[:, 1] * scale, angles="xy", scale_units="xy",
                      scale=1.0, color="tab:red", width=0.004)
    ax.set_xlim(*xlim)
    ax.set_ylim(*ylim)
    ax.set_aspect("equal")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_record(data: RecordData, outdir, select=None) -> list[Path]:
    """Render the selected frames of a record; ``select`` is a slice or iterable of frame numbers."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    frames = data.frames
    if isinstance(select, slice):
        frames = frames[select]
    elif select is not None:
        wanted = set(select)
        frames = [f for f in frames if f[0] in wanted]
    if not frames:
        return []
    limits = _limits(data.frames)
    L = data.ledger
    written = []
    for idx, t, x in frames:
        rows = np.flatnonzero(L["frame"] == idx)
        cn = L["cn_deficit"][rows[0]] if rows.size else np.nan
        tol = L["cn_tol"][rows[0]] if rows.size else np.nan
        force = data.contacts.at(t) if t in set(data.contacts.time.tolist()) else None
        title = f"{data.name}  t = {t:.4f}   CN deficit = {cn:.2e} (tol {tol:.1e})"
        p = out / f"frame_{idx:04d}.svg"
        render_frame(data.mesh, x, p, data.obstacles, force, title, limits, data.scales.force)
        written.append(p)
    return written


def report_figures(data: RecordData, outdir) -> list[Path]:
    """Energy ledger, momentum and contact history plots."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    L = data.ledger
    t = L["t"]
    E = L["E_elastic"] + L["E_barrier"] + L["E_sg"]
    written = []

    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    a1.plot(t, E, label="stored energy")
    a1.plot(t, L["kinetic"], label="kinetic proxy")
    a1.plot(t, L["dissipation"], label="dissipated")
    a1.plot(t, L["work"], label="external work")
    a1.plot(t, E + L["kinetic"] + L["dissipation"] - L["work"], "k--", label="balance")
    a1.legend(fontsize=8)
    a1.set_ylabel("energy")
    slack = (E + L["kinetic"] + L["dissipation"] - L["work"])[0] - (E + L["kinetic"] + L["dissipation"] - L["work"])
    a2.plot(t, slack)
    a2.set_ylabel("global slack")
    a2.set_xlabel("t")
    fig.tight_layout()
    p = out / "energy.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, L["p_x"], label="p_x")
    ax.plot(t, L["p_y"], label="p_y")
    ax.plot(t, L["impulse_x"], ":", label="contact impulse x")
    ax.plot(t, L["impulse_y"], ":", label="contact impulse y")
    ax.legend(fontsize=8)
    ax.set_xlabel("t")
    ax.set_ylabel("momentum")
    fig.tight_layout()
    p = out / "momentum.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    g = L["min_gap"]
    fin = np.isfinite(g)
    if np.any(fin):
        a1.semilogy(t[fin], np.maximum(g[fin], 1e-16), label="min gap")
    a1.semilogy(t, np.maximum(L["sigma_norm"], 1e-16), label="|sigma|")
    a1.legend(fontsize=8)
    a2.plot(t, L["min_det"])
    a2.set_ylabel("min det F")
    a2.set_xlabel("t")
    fig.tight_layout()
    p = out / "contact.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)
    return written
