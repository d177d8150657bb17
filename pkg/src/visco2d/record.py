"""On-disk simulation records.

A record directory holds::

    mesh.txt            reference mesh
    ledger.csv          one row per accepted state (fixed column order)
    contacts.csv        one row per contact-force atom
    frames/index.csv    frame number and time
    frames/NNNN.csv     deformed vertex positions
    meta.json           run manifest: version, config echo, scales, report

Floats are written with 17 significant digits so that reading a record back
reproduces the in-memory doubles exactly.
"""

from __future__ import annotations

import csv
import json
import subprocess
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import contact
from .geometry import ReferenceMesh, obstacle_from_dict, read_mesh, write_mesh
from .material import MaterialParams
from .solver import Scales
from .stepper import LEDGER_COLUMNS, SimulationRecord

CONTACT_COLUMNS = ["time", "vertex", "magnitude", "dir_x", "dir_y", "kind", "partner", "edge", "constraint", "gap"]
REQUIRED_FILES = ["mesh.txt", "ledger.csv", "contacts.csv", "frames/index.csv", "meta.json"]


class RecordError(RuntimeError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        base = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        base = "0+unknown"
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{base}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


@dataclass
class CheckSettings:
    theta_tol: float = 5.0
    delta_opp: float = 0.1
    rebound: bool = False

    def to_dict(self):
        return dict(theta_tol=self.theta_tol, delta_opp=self.delta_opp, rebound=self.rebound)


@dataclass
class ContactTable:
    """Flat per-atom contact rows across all steps."""

    time: np.ndarray
    vertex: np.ndarray
    magnitude: np.ndarray
    direction: np.ndarray
    kind: np.ndarray
    partner: np.ndarray
    edge: np.ndarray
    constraint: np.ndarray
    gap: np.ndarray

    def __len__(self):
        return len(self.time)

    @classmethod
    def from_steps(cls, contacts) -> "ContactTable":
        parts = [(t, f) for t, f in contacts if len(f)]
        if not parts:
            z = np.zeros(0, dtype=np.int64)
            return cls(np.zeros(0), z, np.zeros(0), np.zeros((0, 2)), z, z, z, z, np.zeros(0))
        cat = lambda name: np.concatenate([getattr(f, name) for _, f in parts])
        return cls(np.concatenate([np.full(len(f), t) for t, f in parts]), cat("vertex"), cat("magnitude"),
                   np.concatenate([f.direction for _, f in parts]), cat("kind"), cat("partner"), cat("edge"),
                   cat("constraint"), cat("gap"))

    def at(self, t: float) -> contact.ContactForce:
        m = self.time == t
        return contact.ContactForce(self.vertex[m], self.magnitude[m], self.direction[m], self.kind[m],
                                    self.constraint[m], self.partner[m], self.edge[m], self.gap[m])

    def times(self) -> np.ndarray:
        return np.unique(self.time)


@dataclass
class RecordData:
    """Everything the offline checks need, independent of the solver."""

    name: str
    mesh: ReferenceMesh
    material: MaterialParams
    obstacles: list
    gravity: tuple
    h: float
    T: float
    scales: Scales
    checks: CheckSettings
    ledger: dict
    frames: list
    contacts: ContactTable
    r_cn: int = 512
    failed: str | None = None
    sigma_l2: float = 0.0
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_simulation(cls, rec: SimulationRecord, checks: CheckSettings | None = None) -> "RecordData":
        sc = rec.scenario
        ledger = {c: rec.column(c) for c in LEDGER_COLUMNS}
        return cls(sc.name, sc.mesh, sc.material, list(sc.obstacles), tuple(map(float, sc.gravity)), sc.h,
                   float(sc.T), sc.scales, checks or CheckSettings(sc.theta_tol, sc.delta_opp), ledger,
                   [(i, t, np.asarray(x)) for i, t, x in rec.frames], ContactTable.from_steps(rec.contacts),
                   sc.r_cn, rec.failed, rec.sigma_l2)


def write_record(directory, rec: SimulationRecord, checks: CheckSettings, config: dict | None = None,
                 config_text: str | None = None, report: dict | None = None) -> Path:
    out = Path(directory)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    sc = rec.scenario
    write_mesh(sc.mesh, out / "mesh.txt")
    with open(out / "ledger.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_COLUMNS)
        for row in rec.ledger:
            w.writerow([_fmt(row[c]) for c in LEDGER_COLUMNS])
    table = ContactTable.from_steps(rec.contacts)
    with open(out / "contacts.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONTACT_COLUMNS)
        for i in range(len(table)):
            w.writerow([_fmt(table.time[i]), table.vertex[i], _fmt(table.magnitude[i]), _fmt(table.direction[i, 0]),
                        _fmt(table.direction[i, 1]), table.kind[i], table.partner[i], table.edge[i],
                        table.constraint[i], _fmt(table.gap[i])])
    for old in (out / "frames").glob("*.csv"):
        old.unlink()
    with open(out / "frames" / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "t"])
        for idx, t, x in rec.frames:
            w.writerow([idx, _fmt(t)])
            np.savetxt(out / "frames" / f"{idx:04d}.csv", np.asarray(x).reshape(-1, 2), fmt="%.17g",
                       delimiter=",", header="x,y", comments="")
    s = sc.scales
    meta = dict(
        version=version_string(), name=sc.name, h=sc.h, T=float(sc.T), L=sc.L, M=sc.M, r_cn=sc.r_cn,
        material=sc.material.to_dict(), obstacles=[ob.to_dict() for ob in sc.obstacles],
        gravity=[float(g) for g in sc.gravity],
        scales=dict(energy=s.energy, length=s.length, momentum=s.momentum),
        checks=checks.to_dict(), runtime=rec.runtime, failed=rec.failed, sigma_l2=rec.sigma_l2,
        n_frames=len(rec.frames), n_steps=len(rec.steps), config=config, config_text=config_text, report=report,
    )
    (out / "meta.json").write_text(json.dumps(meta, indent=2, default=_json_default))
    return out


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RecordError(f"{path} is empty")
    return rows[0], rows[1:]


def read_record(directory) -> RecordData:
    base = Path(directory)
    if not base.is_dir():
        raise RecordError(f"record directory {base} does not exist")
    missing = [f for f in REQUIRED_FILES if not (base / f).is_file()]
    if missing:
        raise RecordError(f"incomplete record in {base}; missing: {', '.join(missing)}")
    try:
        meta = json.loads((base / "meta.json").read_text())
        mesh = read_mesh(base / "mesh.txt")
        header, rows = _read_csv(base / "ledger.csv")
        if header != LEDGER_COLUMNS:
            raise RecordError("ledger.csv has unexpected columns")
        data = np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(-1, len(header))
        ledger = {c: data[:, i] for i, c in enumerate(header)}
        header, rows = _read_csv(base / "contacts.csv")
        if header != CONTACT_COLUMNS:
            raise RecordError("contacts.csv has unexpected columns")
        cols = list(zip(*rows)) if rows else [()] * len(CONTACT_COLUMNS)
        f = lambda i: np.array([float(v) for v in cols[i]], dtype=float)
        n = lambda i: np.array([int(v) for v in cols[i]], dtype=np.int64)
        contacts = ContactTable(f(0), n(1), f(2), np.column_stack([f(3), f(4)]).reshape(-1, 2), n(5), n(6), n(7),
                                n(8), f(9))
        _, rows = _read_csv(base / "frames" / "index.csv")
        frames = []
        for idx, t in rows:
            p = base / "frames" / f"{int(idx):04d}.csv"
            if not p.is_file():
                raise RecordError(f"incomplete record in {base}; missing: frames/{p.name}")
            x = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
            if x.shape != (mesh.n_vertices, 2):
                raise RecordError(f"frame {p.name} has shape {x.shape}, expected ({mesh.n_vertices}, 2)")
            frames.append((int(idx), float(t), x))
        s = meta["scales"]
        return RecordData(
            name=meta["name"], mesh=mesh, material=MaterialParams(**meta["material"]),
            obstacles=[obstacle_from_dict(d) for d in meta["obstacles"]], gravity=tuple(meta["gravity"]),
            h=float(meta["h"]), T=float(meta["T"]), scales=Scales(s["energy"], s["length"], s["momentum"]),
            checks=CheckSettings(**meta["checks"]), ledger=ledger, frames=frames, contacts=contacts,
            r_cn=int(meta["r_cn"]), failed=meta.get("failed"), sigma_l2=float(meta["sigma_l2"]), meta=meta,
        )
    except RecordError:
        raise
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise RecordError(f"corrupt record in {base}: {exc}") from exc
