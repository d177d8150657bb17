"""Command line interface: run, check, render, sweep, mesh-gen.

Exit codes::

    0  success, all invariant suites pass
    2  configuration or usage error
    3  solver failure (a partial record is still written)
    4  invariant violation
    5  record error (missing, corrupt or unwritable record)
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from . import diagnostics, geometry, plotting, record, stepper

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INVARIANT = 4
EXIT_RECORD = 5
OUTPUT_ENV = "VISCO2D_OUTPUT_DIR"

log = logging.getLogger("visco2d")


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def parse_overrides(extra: list[str]) -> dict:
    """``["--time.L", "128", "--solver.tol_kkt=1e-9"]`` -> {"time.L": "128", ...}."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise cfgmod.ConfigError(f"unrecognised argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise cfgmod.ConfigError(f"override {tok} needs a value")
            i += 1
            val = extra[i]
        out[key] = val
        i += 1
    return out


def output_directory(cfg: cfgmod.ScenarioConfig, explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env) / cfg.name
    if cfg["output"]["directory"]:
        return Path(cfg["output"]["directory"])
    return Path("runs") / cfg.name


def execute(cfg: cfgmod.ScenarioConfig, outdir, figures=True, quiet=False):
    """Run a parsed config, write its record and return (exit code, SimulationRecord, Report)."""
    sc = cfgmod.build_scenario(cfg)
    checks = cfgmod.check_settings(cfg)
    outdir = Path(outdir)
    log.info("running %s (%d vertices, h=%g, M=%d) into %s", sc.name, sc.mesh.n_vertices, sc.h, sc.M, outdir)
    rec = stepper.run(sc)
    report = diagnostics.run_checks(record.RecordData.from_simulation(rec, checks))
    try:
        record.write_record(outdir, rec, checks, config=cfg.values, config_text=cfg.to_text(),
                            report=report.to_dict())
        data = record.read_record(outdir)
        if figures:
            plotting.report_figures(data, outdir / "report")
        if cfg["output"]["svg"]:
            plotting.render_record(data, outdir / "svg")
    except (OSError, record.RecordError) as exc:
        _err(f"record: {exc}")
        return EXIT_RECORD, rec, report
    if not quiet:
        print(report.table())
        print(f"runtime {rec.runtime:.1f} s, record written to {outdir}")
    if rec.failed:
        _err(f"solver failure: {rec.failed}")
        return EXIT_SOLVER, rec, report
    return (EXIT_OK if report.passed else EXIT_INVARIANT), rec, report


def run_config(path, overrides=None, out=None, figures=True, quiet=False) -> int:
    try:
        cfg = cfgmod.load_config(cfgmod.locate(path))
        if overrides:
            cfg = cfg.with_overrides(overrides)
        cfgmod.build_scenario(cfg)
    except cfgmod.ConfigError as exc:
        _err(f"config: {exc}")
        return EXIT_CONFIG
    return execute(cfg, output_directory(cfg, out), figures, quiet)[0]


def check_record(path, figures=False, quiet=False) -> int:
    try:
        data = record.read_record(path)
    except record.RecordError as exc:
        _err(str(exc))
        return EXIT_RECORD
    report = diagnostics.run_checks(data)
    if not quiet:
        print(report.table())
    stored = (data.meta.get("report") or {}).get("suites")
    if stored is not None:
        before = {s["name"]: s["passed"] for s in stored}
        if before != report.verdicts():
            print("note: verdicts differ from the in-run report", file=sys.stderr)
    if figures:
        plotting.report_figures(data, Path(path) / "report")
    return EXIT_OK if report.passed else EXIT_INVARIANT


def _parse_range(text: str | None):
    if not text:
        return None
    if ":" in text:
        a, b = text.split(":", 1)
        return slice(int(a) if a else None, int(b) if b else None)
    return [int(v) for v in text.split(",")]


def render(path, frames=None, out=None) -> int:
    try:
        data = record.read_record(path)
    except record.RecordError as exc:
        _err(str(exc))
        return EXIT_RECORD
    try:
        files = plotting.render_record(data, Path(out) if out else Path(path) / "svg", _parse_range(frames))
    except ValueError as exc:
        _err(f"bad frame selection: {exc}")
        return EXIT_CONFIG
    print(f"wrote {len(files)} frames")
    return EXIT_OK


def _sweep_job(args):
    path, overrides, out = args
    logging.basicConfig(level=logging.WARNING)
    return run_config(path, overrides, out, quiet=True)


def sweep(paths, overrides=None, base=None, jobs=None) -> int:
    tasks = []
    for p in paths:
        out = None
        if base:
            try:
                out = str(Path(base) / cfgmod.load_config(cfgmod.locate(p)).name)
            except cfgmod.ConfigError as exc:
                _err(f"config: {exc}")
                return EXIT_CONFIG
        tasks.append((str(p), overrides, out))
    with ProcessPoolExecutor(max_workers=jobs or os.cpu_count() or 1) as pool:
        codes = list(pool.map(_sweep_job, tasks))
    for (p, _, _), code in zip(tasks, codes):
        print(f"{p}: exit {code}")
    return max(codes, default=EXIT_OK)


def mesh_gen(generator, params, out, pin_box=None) -> int:
    text = f"[mesh]\ngenerator = {generator}\nparams = {params or '{}'}\n"
    if pin_box:
        text += f"pin_box = {pin_box}\n"
    fake = text + "[material]\n[obstacles]\n[initial]\n[forcing]\n[time]\nT = 1.0\nL = 1\n[solver]\n[output]\n"
    try:
        mesh = cfgmod.build_mesh(cfgmod.parse_config(fake))
    except cfgmod.ConfigError as exc:
        _err(f"config: {exc}")
        return EXIT_CONFIG
    try:
        geometry.write_mesh(mesh, out)
    except OSError as exc:
        _err(str(exc))
        return EXIT_RECORD
    print(f"{mesh.n_vertices} vertices, {mesh.n_triangles} triangles -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="visco2d", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario; extra --section.key VALUE arguments override the config")
    r.add_argument("config")
    r.add_argument("--out", help=f"record directory (else ${OUTPUT_ENV}/<name> or [output] directory)")
    r.add_argument("--no-figures", action="store_true", help="skip report figures")

    c = sub.add_parser("check", help="re-verify a stored record")
    c.add_argument("record")
    c.add_argument("--figures", action="store_true", help="also render report figures")

    d = sub.add_parser("render", help="write SVG frames of a record")
    d.add_argument("record")
    d.add_argument("--frames", help="range a:b or list i,j,k of frame numbers")
    d.add_argument("--out")

    s = sub.add_parser("sweep", help="run several scenarios concurrently")
    s.add_argument("configs", nargs="+")
    s.add_argument("--out", help="base directory; each scenario writes to <out>/<name>")
    s.add_argument("--jobs", type=int)

    m = sub.add_parser("mesh-gen", help="write a generated mesh file")
    m.add_argument("generator", choices=sorted(cfgmod.GENERATORS))
    m.add_argument("--params", help='python dict literal, e.g. \'{"radius": 1.0}\'')
    m.add_argument("--pin-box", help="(xmin, ymin, xmax, ymax)")
    m.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if extra:
        if args.command not in ("run", "sweep"):
            _err(f"unrecognised arguments: {' '.join(extra)}")
            return EXIT_CONFIG
        try:
            overrides = parse_overrides(extra)
        except cfgmod.ConfigError as exc:
            _err(f"config: {exc}")
            return EXIT_CONFIG
    if args.command == "run":
        return run_config(args.config, overrides, args.out, figures=not args.no_figures)
    if args.command == "check":
        return check_record(args.record, figures=args.figures)
    if args.command == "render":
        return render(args.record, args.frames, args.out)
    if args.command == "sweep":
        return sweep(args.configs, overrides, args.out, args.jobs)
    return mesh_gen(args.generator, args.params, args.out, args.pin_box)


if __name__ == "__main__":
    sys.exit(main())
