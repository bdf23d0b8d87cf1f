import json

import numpy as np
import pytest

from clothgeom import cli
from clothgeom.codecs import read_height, read_pfm, write_csv, write_depth_pgm, write_mask, write_pfm
from clothgeom.grid import Calibration, HeightField, PixelMask
from clothgeom.pipeline import AnalysisReport
from clothgeom.synth import SceneSpec, generate

CALIB = Calibration(0.001, 1.0)
# ridge amplitudes whose inflection-to-inflection slack is 4 mm and 6 mm at sigma 10 mm
A_SLACK_4MM = 0.0155390021361196276
A_SLACK_6MM = 0.0196032591277367270


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def scene_file(tmp_path, name="scene.toml", **kw):
    lines = [f"{k} = {json.dumps(v)}" for k, v in kw.items()]
    path = tmp_path / name
    path.write_text("[scene]\n" + "\n".join(lines) + "\n")
    return path


def synth(tmp_path, capsys, **kw):
    out = tmp_path / "synth"
    code, _, err = run(capsys, "synth", scene_file(tmp_path, **kw), "--out", out)
    assert code == 0, err
    return out


# ---------------------------------------------------------------- exit codes

def test_missing_file_exit_2(tmp_path, capsys):
    code, out, err = run(capsys, "analyze", tmp_path / "nope.pfm")
    assert code == 2 and out == ""
    assert err.startswith("error:") and "Traceback" not in err


def test_unknown_format_exit_2(tmp_path, capsys):
    bad = tmp_path / "depth.xyz"
    bad.write_text("1 2 3")
    assert run(capsys, "analyze", bad)[0] == 2


def test_corrupt_pfm_exit_2(tmp_path, capsys):
    bad = tmp_path / "depth.pfm"
    bad.write_bytes(b"Pf\n4 4\n-1.0\n\x00\x00")
    code, _, err = run(capsys, "analyze", bad)
    assert code == 2 and "error:" in err


def test_bad_config_exit_2(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="plane", width=40, height=40)
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("no_such_key = 3\n")
    assert run(capsys, "analyze", data / "height.pfm", "--config", cfg)[0] == 2


def test_empty_mask_exit_3(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="plane", width=40, height=40)
    write_mask(tmp_path / "empty.pgm", PixelMask(np.zeros((40, 40), bool)))
    code, _, err = run(capsys, "analyze", data / "height.pfm", "--mask", tmp_path / "empty.pgm")
    assert code == 3 and "mask" in err


def test_mask_shape_mismatch_exit_2(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="plane", width=40, height=40)
    write_mask(tmp_path / "small.pgm", PixelMask(np.ones((30, 40), bool)))
    assert run(capsys, "analyze", data / "height.pfm", "--mask", tmp_path / "small.pgm")[0] == 2


def test_stage_failure_exit_4(tmp_path, capsys, monkeypatch):
    data = synth(tmp_path, capsys, kind="gaussian_ridge")

    def broken(*a, **k):
        raise ValueError("forced")
    monkeypatch.setattr("clothgeom.pipeline.detect_wrinkles", broken)
    code, out, err = run(capsys, "analyze", data / "height.pfm")
    assert code == 4 and out == ""
    assert "stage wrinkles" in err and "Traceback" not in err


def test_unwritable_output_exit_2(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run(capsys, "synth", scene_file(tmp_path, kind="plane"), "--out", blocker / "sub")[0] == 2
    data = synth(tmp_path, capsys, kind="plane", width=40, height=40)
    assert run(capsys, "analyze", data / "height.pfm", "--out", blocker / "r.json")[0] == 2


def test_bad_scene_exit_2(tmp_path, capsys):
    assert run(capsys, "synth", scene_file(tmp_path, kind="torus"), "--out", tmp_path / "o")[0] == 2
    assert run(capsys, "synth", scene_file(tmp_path, colour="red"), "--out", tmp_path / "o")[0] == 2
    broken = tmp_path / "broken.toml"
    broken.write_text("kind = = 1\n")
    assert run(capsys, "synth", broken, "--out", tmp_path / "o")[0] == 2


# ---------------------------------------------------------------- synth

def test_synth_plane_is_zero(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="plane", width=40, height=30)
    h = read_pfm(data / "height.pfm", 0.001)
    assert h.shape == (30, 40) and np.all(h.values == 0.0)


def test_synth_ridge_reingests_exactly(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="gaussian_ridge")
    h, mask, _ = generate(SceneSpec(kind="gaussian_ridge"))
    back = read_pfm(data / "height.pfm", 0.001)
    # PFM stores float32 samples
    assert np.array_equal(back.values, h.values.astype(np.float32).astype(np.float64))
    assert np.array_equal(read_height(data / "height.pfm", CALIB).values, back.values)


def test_synth_crossing_truth(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="crossing_ridges", orientation=30.0, orientation2=120.0)
    truth = json.loads((data / "truth.json").read_text())
    assert len(truth["truth"]["crest_lines"]) == 2
    assert truth["truth"]["directions_deg"] == [30.0, 120.0]
    assert truth["spec"]["kind"] == "crossing_ridges"


def test_seed_override(tmp_path, capsys):
    spec = scene_file(tmp_path, kind="plane", width=40, height=40, noise_sigma=0.001, seed=1)
    for seed, name in ((1, "a"), (1, "b"), (2, "c")):
        assert run(capsys, "synth", spec, "--out", tmp_path / name, "--seed", seed)[0] == 0
    read = lambda n: (tmp_path / n / "height.pfm").read_bytes()
    assert read("a") == read("b") != read("c")


# ---------------------------------------------------------------- analyze

def test_analyze_ridge_pfm(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="gaussian_ridge")
    code, out, _ = run(capsys, "analyze", data / "height.pfm", "--mask", data / "mask.pgm")
    report = json.loads(out)
    assert code == 0 and report["schema_version"] == 1
    assert len(report["wrinkles"]) == 1
    assert report["triplet_counts"] == [len(report["wrinkles"][0]["triplets"])]
    assert set(report["timing_ms"]) >= {"preprocess", "differential", "surface", "topology", "wrinkles"}


def test_analyze_flat_pgm16(tmp_path, capsys):
    path = tmp_path / "flat.pgm"
    write_depth_pgm(path, HeightField(np.full((60, 80), 0.25), 0.001), CALIB)
    code, out, _ = run(capsys, "analyze", path)
    report = json.loads(out)
    assert code == 0 and report["wrinkles"] == [] and report["is_flat"] is True


def test_analyze_csv_and_flags(tmp_path, capsys):
    h, _, _ = generate(SceneSpec(kind="gaussian_ridge", pitch=0.002, sigma=0.02, amplitude=0.04))
    write_csv(tmp_path / "h.csv", h)
    code, out, _ = run(capsys, "analyze", tmp_path / "h.csv", "--pitch", 0.002, "--no-timing")
    report = json.loads(out)
    assert code == 0 and report["pitch"] == 0.002 and "timing_ms" not in report
    assert len(report["wrinkles"]) == 1


def test_report_file_and_round_trip(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="crossing_ridges", orientation=0.0, orientation2=60.0)
    dest = tmp_path / "report.json"
    code, out, _ = run(capsys, "analyze", data / "height.pfm", "--out", dest)
    assert code == 0 and out == ""
    d = json.loads(dest.read_text())
    again = AnalysisReport.from_dict(d).to_dict()
    assert json.dumps(again, sort_keys=True) == json.dumps(d, sort_keys=True)


def test_determinism(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="multi_wrinkle")
    first = run(capsys, "analyze", data / "height.pfm", "--no-timing")[1]
    second = run(capsys, "analyze", data / "height.pfm", "--no-timing")[1]
    assert first == second and len(first) > 100


def test_config_file_applies(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="gaussian_ridge")
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("[differential]\nsigma = 2.0\n[planner]\nhalting_slack_m = 0.001\n")
    report = json.loads(run(capsys, "analyze", data / "height.pfm", "--config", cfg)[1])
    assert report["config"]["sigma"] == 2.0 and report["is_flat"] is False


# ---------------------------------------------------------------- plan and simulate

def test_plan_benchmark(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="benchmark_oriented", orientation=0.0)
    code, out, _ = run(capsys, "plan", data / "height.pfm", "--mask", data / "mask.pgm")
    doc = json.loads(out)
    plan = doc["plan"]
    assert code == 0 and plan["dual_arm"] is True
    assert {tuple(np.round(plan["pull_dir_a"], 9)), tuple(np.round(plan["pull_dir_b"], 9))} == {(1.0, 0.0),
                                                                                                (-1.0, 0.0)}


def test_plan_flat(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="plane", width=60, height=60)
    doc = json.loads(run(capsys, "plan", data / "height.pfm")[1])
    assert doc["plan"] is None and doc["is_flat"] is True and doc["wrinkles"] == 0


@pytest.mark.parametrize("amplitude, flat", [(A_SLACK_4MM, True), (A_SLACK_6MM, False)])
def test_plan_halting_verdict(tmp_path, capsys, amplitude, flat):
    data = synth(tmp_path, capsys, kind="gaussian_ridge", amplitude=amplitude)
    doc = json.loads(run(capsys, "plan", data / "height.pfm")[1])
    assert doc["is_flat"] is flat and doc["plan"] is not None


def test_simulate_benchmark_scene(tmp_path, capsys):
    spec = scene_file(tmp_path, kind="benchmark_oriented", orientation=-45.0)
    code, out, _ = run(capsys, "simulate", spec)
    log = json.loads(out)
    assert code == 0 and log["converged"] is True and log["rni"] == 1


def test_simulate_multi_and_flat(tmp_path, capsys):
    log = json.loads(run(capsys, "simulate", scene_file(tmp_path, kind="multi_wrinkle"))[1])
    assert log["converged"] and 1 <= log["rni"] <= 10
    log = json.loads(run(capsys, "simulate", scene_file(tmp_path, "flat.toml", kind="plane"))[1])
    assert log["rni"] == 0 and len(log["iterations"]) == 1


def test_simulate_json_spec_and_iteration_cap(tmp_path, capsys):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"kind": "gaussian_ridge"}))
    log = json.loads(run(capsys, "simulate", spec, "--max-iters", 0)[1])
    assert log["converged"] is False and log["rni"] is None
    assert log["iterations"][0]["wrinkles"] == 1


def test_simulate_data_file(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="gaussian_ridge")
    log = json.loads(run(capsys, "simulate", data / "height.pfm", "--mask", data / "mask.pgm")[1])
    assert log["rni"] == 1


# ---------------------------------------------------------------- render

def test_render_outputs(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="crossing_ridges", orientation=0.0, orientation2=90.0)
    out_dir = tmp_path / "render"
    code, out, _ = run(capsys, "render", data / "height.pfm", out_dir)
    assert code == 0
    names = {p.split("/")[-1] for p in out.split()}
    assert names == {"types.ppm", "topology.ppm", "triplets.ppm", "wrinkles.ppm", "wrinkles.csv",
                     "overview.png", "types.png"}
    ppm = (out_dir / "topology.ppm").read_bytes()
    assert ppm.startswith(b"P6\n201 201\n255\n") and len(ppm) == 15 + 201 * 201 * 3
    rgb = np.frombuffer(ppm[15:], np.uint8).reshape(201, 201, 3)
    assert np.all(rgb[100, 30] == (255, 0, 0))
    rows = (out_dir / "wrinkles.csv").read_text().splitlines()
    assert rows[0].startswith("rank,score,width_m") and len(rows) == 3
    assert (out_dir / "overview.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_analyze_render_flag(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="gaussian_ridge")
    code, out, _ = run(capsys, "analyze", data / "height.pfm", "--render", tmp_path / "r", "--no-timing")
    assert code == 0 and json.loads(out)["wrinkles"]
    assert (tmp_path / "r" / "types.ppm").exists() and (tmp_path / "r" / "types.png").exists()


def test_render_is_byte_stable(tmp_path, capsys):
    data = synth(tmp_path, capsys, kind="t_junction")
    run(capsys, "render", data / "height.pfm", tmp_path / "a")
    run(capsys, "render", data / "height.pfm", tmp_path / "b")
    for name in ("types.ppm", "topology.ppm", "triplets.ppm", "wrinkles.ppm", "wrinkles.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
