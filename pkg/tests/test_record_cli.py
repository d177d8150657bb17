import csv
import json

import numpy as np
import pytest

from visco2d import cli, diagnostics, record, stepper
from visco2d import config as cfgmod
from visco2d.record import LEDGER_COLUMNS


@pytest.fixture(scope="module")
def flight_record(tmp_path_factory):
    out = tmp_path_factory.mktemp("rec") / "free-flight"
    assert cli.main(["run", "free-flight.cfg", "--out", str(out), "--time.T", "0.5", "--time.L", "8",
                     "--output.frame_stride", "1"]) == 0
    return out


def _same(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return a.shape == b.shape and np.array_equal(a, b, equal_nan=True)


def test_round_trip_is_bitwise(tmp_path):
    cfg = cfgmod.load_config(cfgmod.locate("free-flight.cfg")).with_overrides({"time.L": "4", "time.T": "0.25"})
    rec = stepper.run(cfgmod.build_scenario(cfg))
    checks = cfgmod.check_settings(cfg)
    record.write_record(tmp_path, rec, checks, cfg.values, cfg.to_text())
    mem = record.RecordData.from_simulation(rec, checks)
    disk = record.read_record(tmp_path)
    for c in LEDGER_COLUMNS:
        assert _same(mem.ledger[c], disk.ledger[c]), c
    assert len(mem.frames) == len(disk.frames)
    for (i, t, x), (j, s, y) in zip(mem.frames, disk.frames):
        assert i == j and t == s and _same(x, y)
    assert _same(mem.mesh.vertices, disk.mesh.vertices)
    assert mem.scales == disk.scales and mem.material == disk.material
    assert diagnostics.run_checks(mem).verdicts() == diagnostics.run_checks(disk).verdicts()


def test_check_passes_on_fresh_record(flight_record):
    assert cli.main(["check", str(flight_record)]) == 0
    meta = json.loads((flight_record / "meta.json").read_text())
    assert meta["L"] == 8 and meta["config"]["time"]["L"] == 8
    assert "version" in meta and meta["report"]["passed"]
    for name in ("energy.png", "momentum.png", "contact.png"):
        assert (flight_record / "report" / name).stat().st_size > 0


def test_corrupted_ledger_row_fails_energy_suite(flight_record, tmp_path):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(flight_record, bad)
    path = bad / "ledger.csv"
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    col = rows[0].index("E_elastic")
    rows[5][col] = repr(float(rows[5][col]) + 1.0)
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    report = diagnostics.run_checks(record.read_record(bad))
    assert not report.suite("energy_interval").passed
    assert not report.suite("energy_global").passed
    assert cli.main(["check", str(bad)]) == cli.EXIT_INVARIANT


def test_empty_directory_is_a_record_error(tmp_path, capsys):
    assert cli.main(["check", str(tmp_path)]) == cli.EXIT_RECORD
    err = capsys.readouterr().err
    assert "missing" in err and "ledger.csv" in err
    assert cli.main(["render", str(tmp_path / "nowhere")]) == cli.EXIT_RECORD


def test_render_range(flight_record, tmp_path):
    out = tmp_path / "svg"
    assert cli.main(["render", str(flight_record), "--frames", "2:5", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.svg")) == ["frame_0002.svg", "frame_0003.svg", "frame_0004.svg"]
    out2 = tmp_path / "svg2"
    assert cli.main(["render", str(flight_record), "--frames", "0,7", "--out", str(out2)]) == 0
    assert sorted(p.name for p in out2.glob("*.svg")) == ["frame_0000.svg", "frame_0007.svg"]


def test_rest_frames_identical(tmp_path):
    out = tmp_path / "rest"
    assert cli.main(["run", "rest.cfg", "--out", str(out), "--no-figures"]) == 0
    data = record.read_record(out)
    for _, _, x in data.frames:
        assert _same(x, data.frames[0][2])


def test_config_errors_exit_2(tmp_path):
    assert cli.main(["run", "free-flight.cfg", "--out", str(tmp_path), "--time.LL", "3"]) == cli.EXIT_CONFIG
    assert cli.main(["run", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.cfg"
    bad.write_text("[mesh]\ngenerator = disc\n")
    assert cli.main(["run", str(bad)]) == cli.EXIT_CONFIG


def test_output_directory_env(monkeypatch, tmp_path):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path))
    cfg = cfgmod.load_config(cfgmod.locate("rest.cfg"))
    assert cli.output_directory(cfg, None) == tmp_path / "rest"
    assert cli.output_directory(cfg, "elsewhere").name == "elsewhere"


def test_mesh_gen(tmp_path):
    out = tmp_path / "ring.txt"
    assert cli.main(["mesh-gen", "annulus", "--params", '{"n_arc": 24, "n_thick": 2}', "--out", str(out)]) == 0
    from visco2d.geometry import read_mesh

    mesh = read_mesh(out)
    assert mesh.n_vertices == 24 * 3
    assert cli.main(["mesh-gen", "disc", "--params", '{"bogus": 1}', "--out", str(out)]) == cli.EXIT_CONFIG


def test_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["run", "free-flight.cfg", "--out", str(d), "--no-figures", "--time.L", "4",
                         "--time.T", "0.25"]) == 0
    assert (a / "ledger.csv").read_bytes() == (b / "ledger.csv").read_bytes()
    assert (a / "contacts.csv").read_bytes() == (b / "contacts.csv").read_bytes()


def test_sweep(tmp_path):
    code = cli.main(["sweep", "rest.cfg", "free-flight.cfg", "--out", str(tmp_path), "--jobs", "2",
                     "--time.T", "0.25", "--time.L", "4"])
    assert code == 0
    assert (tmp_path / "rest" / "ledger.csv").is_file()
    assert (tmp_path / "free-flight" / "ledger.csv").is_file()
