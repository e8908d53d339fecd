import json

import numpy as np
import pytest

from cpisim import cli
from cpisim.core import dump_scenario, paper_setup
from cpisim.gridio import load_tensor


def run(tmp_path, *args):
    return cli.main(["--out-dir", str(tmp_path), *args])


SMALL = ["--grid-a", "64,7.2e-6", "--grid-b", "32,72e-6"]


def test_gamma_and_manifest(tmp_path):
    assert run(tmp_path, "gamma", *SMALL) == 0
    t = load_tensor(tmp_path / "gamma.cgrid")
    assert t.values.shape == (64, 32) and t.scenario == paper_setup()
    man = json.loads((tmp_path / "gamma.manifest.json").read_text())
    assert man["command"] == "gamma" and man["seeds"] == [0]
    assert man["outputs"][0]["path"] == "gamma.cgrid"
    assert len(man["scenario_sha256"]) == 64
    assert cli.main(["verify", str(tmp_path / "gamma.manifest.json")]) == 0


def test_verify_detects_corruption(tmp_path, capsys):
    run(tmp_path, "gamma", *SMALL)
    p = tmp_path / "gamma.cgrid"
    raw = bytearray(p.read_bytes())
    raw[-1] ^= 1
    p.write_bytes(bytes(raw))
    assert cli.main(["verify", str(tmp_path / "gamma.manifest.json")]) == cli.EXIT_IO
    assert "checksum mismatch" in capsys.readouterr().err


def test_gamma_thread_count_does_not_change_output(tmp_path):
    a, b = tmp_path / "one", tmp_path / "four"
    assert run(a, "--threads", "1", "gamma", *SMALL) == 0
    assert run(b, "--threads", "4", "gamma", *SMALL) == 0
    assert (a / "gamma.cgrid").read_bytes() == (b / "gamma.cgrid").read_bytes()


def test_refocus_and_ghost(tmp_path, capsys):
    run(tmp_path, "gamma")
    assert run(tmp_path, "refocus", str(tmp_path / "gamma.cgrid"), "--mask", cli.MEASUREMENT_B,
               "--normalize") == 0
    v = float(capsys.readouterr().out.split("=")[1])
    assert v == pytest.approx(0.65, abs=0.02)
    rows = (tmp_path / "refocused.csv").read_text().splitlines()
    assert rows[0] == "x_m,value" and max(float(r.split(",")[1]) for r in rows[1:]) == 1.0
    assert run(tmp_path, "ghost", str(tmp_path / "gamma.cgrid"), "--postprocess",
               "threshold=0.02") == 0
    assert (tmp_path / "ghost.csv").exists()


def test_scenario_file_and_set(tmp_path):
    cfg = paper_setup().replace(z_b=0.1)
    s = tmp_path / "s.cfg"
    s.write_text(dump_scenario(cfg))
    assert run(tmp_path, "--scenario", str(s), "--set", "z_b=0.095", "gamma", *SMALL) == 0
    assert load_tensor(tmp_path / "gamma.cgrid").scenario.z_b == 0.095


def test_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "--set", "z_b=-1", "gamma") == cli.EXIT_CONFIG
    assert "z_b" in capsys.readouterr().err
    assert run(tmp_path, "--set", "nonsense", "gamma") == cli.EXIT_CONFIG
    assert run(tmp_path, "gamma", "--mask", "slits:n=2,a=2e-4,d=1e-4") == cli.EXIT_CONFIG
    assert run(tmp_path, "gamma", "--grid-a", "64,7.2e-6", "--grid-b", "64,1e-2") == cli.EXIT_PRECONDITION
    assert run(tmp_path, "refocus", str(tmp_path / "missing.cgrid")) == cli.EXIT_IO
    (tmp_path / "junk.cgrid").write_bytes(b"junk" * 10)
    assert run(tmp_path, "refocus", str(tmp_path / "junk.cgrid")) == cli.EXIT_IO
    assert run(tmp_path, "--threads", "0", "bound") == cli.EXIT_CONFIG
    assert run(tmp_path, "vismap", "--d-range", "5:2:3") == cli.EXIT_CONFIG


def test_bound(tmp_path, capsys):
    assert run(tmp_path, "bound", "--mask", "slits:n=2,a=40e-6,d=80e-6") == 0
    assert "refocusing range" in capsys.readouterr().out
    lines = (tmp_path / "bound.csv").read_text().splitlines()
    lo, hi = float(lines[1].split(",")[-3]), float(lines[1].split(",")[-2])
    assert lo < 0.092 < hi


def test_vismap_single_value(tmp_path):
    assert run(tmp_path, "vismap", "--modality", "standard", "--d-range", "8", "--dz-range", "0") == 0
    rows = (tmp_path / "vismap_standard.csv").read_text().splitlines()
    assert len(rows) == 2
    assert float(rows[1].split(",")[3]) > 0.1


@pytest.mark.slow
def test_dof_writes_near_and_far(tmp_path):
    assert run(tmp_path, "dof", "--d", "0.354", "--tol", "1e-3") == 0
    near = (tmp_path / "dof_near.csv").read_text().splitlines()
    far = (tmp_path / "dof_far.csv").read_text().splitlines()
    assert near[0].startswith("d_m,modality,z_b_min_m") and far[0].startswith("d_m,modality,z_b_max_m")
    assert len(near) == len(far) == 4
    assert "DOF_CPI / DOF_standard" in (tmp_path / "dof_report.txt").read_text()


@pytest.mark.filterwarnings("ignore:only .* frames")
def test_speckle_resume_and_estimate(tmp_path):
    common = ["--seed", "5", "speckle", "--mask", "slits:n=2,a=99e-6,d=198e-6", "--pixels-a", "16",
              "--pixels-b", "8", "--batch", "7"]
    full, part = tmp_path / "full", tmp_path / "part"
    assert run(full, *common, "--frames", "20") == 0
    assert run(part, *common, "--frames", "13") == 0
    assert run(part, *common, "--frames", "20", "--resume") == 0
    a = load_tensor(full / "gamma_mc.cgrid").values
    b = load_tensor(part / "gamma_mc.cgrid").values
    assert np.array_equal(a, b)
    assert run(part, "estimate", str(part / "frames.cfs"), "--output", "again.cgrid") == 0
    assert np.array_equal(load_tensor(part / "again.cgrid").values, a)
    man = json.loads((part / "estimate.manifest.json").read_text())
    assert man["seeds"] == [5]


@pytest.mark.filterwarnings("ignore:only .* frames")
def test_speckle_resume_rejects_other_run(tmp_path):
    common = ["speckle", "--pixels-a", "16", "--pixels-b", "8", "--frames", "4"]
    assert run(tmp_path, "--seed", "1", *common) == 0
    assert run(tmp_path, "--seed", "2", *common, "--resume") == cli.EXIT_CONFIG
