import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from ch4map.cli import run
from ch4map.config import PipelineConfig, config_from_dict, load_config
from ch4map.cube import load_map
from ch4map.errors import ConfigError, MissingFile

# noise well above the shrinkage floor, so a plume-free scene stays plume-free
SMALL = {"rows": 80, "cols": 40, "bands": 12, "clutter_amplitude": 0.01, "noise_floor": 0.002, "seed": 4}
PLUME = {"source_row": 40, "source_col": 8, "q_true_kg_s": 2.0, "wind_mps": 3.0}


def write_config(tmp_path, name="cfg.json", **sections):
    path = tmp_path / name
    path.write_text(json.dumps(sections))
    return path


def synth(tmp_path, plume=True, **extra):
    scene = dict(SMALL, plume=PLUME if plume else None)
    cfg = write_config(tmp_path, synth={"scene": scene, "wind_sigma_mps": 0.5}, **extra)
    out = tmp_path / "out"
    assert run(["synth", "--config", str(cfg), "--out", str(out)]) == 0
    return cfg, out


def error_of(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_config_defaults_and_strictness(tmp_path):
    cfg = load_config(None)
    assert isinstance(cfg, PipelineConfig) and cfg.variant == "cw-cmf"
    assert cfg.background.shrinkage_gamma == 0.01 and cfg.background.buffer_px == 0
    with pytest.raises(ConfigError):
        config_from_dict({"background": {"kapa": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({"variant": "mf"})
    with pytest.raises(ConfigError):
        config_from_dict({"segment": {"min_pixels": 2.5}})
    with pytest.raises(ConfigError):
        config_from_dict({"flux": {"bg_correlated": 1}})
    with pytest.raises(MissingFile):
        load_config(tmp_path / "absent.json")


def test_relative_paths_resolve_against_config(tmp_path):
    sub = tmp_path / "conf"
    sub.mkdir()
    cfg = load_config(write_config(sub, paths={"cube": "data/scene.json"}))
    assert cfg.paths.cube == str(sub.resolve() / "data" / "scene.json")


def test_round_trip_config_dict():
    cfg = config_from_dict({"synth": {"scene": {"rows": 10, "plume": {"q_true_kg_s": 1.0}}}})
    assert config_from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_full_pipeline(tmp_path):
    cfg, out = synth(tmp_path)
    for name in ("scene.json", "scene.bsq", "truth.json", "wind.csv", "delta_x_true.json", "resolved_config.json"):
        assert (out / name).is_file()
    assert run(["retrieve", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["variant"] == "CW-CMF"
    sig, _ = load_map(out / "sigma.json")
    assert sig.shape == (2, 80, 40)
    assert run(["quantify", "--config", str(cfg), "--out", str(out)]) == 0
    plumes = json.loads((out / "plumes.json").read_text())
    assert len(plumes) >= 1 and plumes[0]["u10_mps"] == 3.0 and plumes[0]["sigma_u10_mps"] == 0.5
    with open(out / "plumes.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(plumes)
    assert float(rows[0]["q_t_per_h"]) == pytest.approx(plumes[0]["q_t_per_h"])
    truth = json.loads((out / "truth.json").read_text())
    assert plumes[0]["q_t_per_h"] == pytest.approx(truth["q_true_t_per_h"], rel=0.6)
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["command"] == "quantify" and resolved["paths"]["out_dir"] == str(out)


def test_cmf_gives_single_scope(tmp_path):
    cfg, out = synth(tmp_path, variant="cmf")
    assert run(["retrieve", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_scopes"] == 1 and summary["variant"] == "CMF"


def test_no_plume_is_success_with_empty_list(tmp_path):
    cfg, out = synth(tmp_path, plume=False)
    (out / "wind.csv").write_text("scene_id,u10_mps,sigma_u10_mps\nscene,3.0,0.5\n")
    assert run(["retrieve", "--config", str(cfg), "--out", str(out)]) == 0
    assert run(["quantify", "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads((out / "plumes.json").read_text()) == []
    assert not (out / "plume_masks.json").exists()


def test_missing_wind_exits_2(tmp_path, capsys):
    cfg, out = synth(tmp_path)
    assert run(["retrieve", "--config", str(cfg), "--out", str(out)]) == 0
    (out / "wind.csv").unlink()
    capsys.readouterr()
    assert run(["quantify", "--config", str(cfg), "--out", str(out)]) == 2
    assert error_of(capsys)["kind"] == "MissingWind"
    (out / "wind.csv").write_text("scene_id,u10_mps,sigma_u10_mps\nother,3.0,0.5\n")
    assert run(["quantify", "--config", str(cfg), "--out", str(out)]) == 2
    assert error_of(capsys)["kind"] == "MissingWind"


def test_missing_absorption_exits_2(tmp_path, capsys):
    cfg, out = synth(tmp_path)
    bad = write_config(tmp_path, "bad.json", paths={"absorption": "nope.txt"})
    capsys.readouterr()
    assert run(["retrieve", "--config", str(bad), "--out", str(out)]) == 2
    assert error_of(capsys)["kind"] == "MissingFile"


def test_missing_cube_and_bad_config_exit_2(tmp_path, capsys):
    assert run(["retrieve", "--out", str(tmp_path / "empty")]) == 2
    assert error_of(capsys)["kind"] == "MissingFile"
    bad = write_config(tmp_path, synth={"scene": {"noise_floor": -1.0}})
    assert run(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert error_of(capsys)["kind"] == "ConfigError"
    bad = write_config(tmp_path, "typo.json", synth={"scen": {}})
    assert run(["synth", "--config", str(bad)]) == 2
    assert run(["synth", "--threads", "0"]) == 2


def test_diagnose_outputs_and_reference(tmp_path):
    cfg, out = synth(tmp_path, plume=False, diag={"detrend_halfwidth": 5})
    assert run(["diagnose", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "snr.csv", newline="") as fh:
        snr = list(csv.DictReader(fh))
    with open(out / "striping.csv", newline="") as fh:
        stripes = list(csv.DictReader(fh))
    assert len(snr) == 12 and len(stripes) == 12
    diag = json.loads((out / "diagnostics.json").read_text())
    assert len(diag["noise_sigma"]) == 12
    ref = tmp_path / "ref"
    shutil.copytree(out, ref)
    cfg2 = write_config(tmp_path, "ref.json", paths={"reference_cube": str(ref / "scene.json"), "cube": str(out / "scene.json")},
                        diag={"detrend_halfwidth": 5})
    assert run(["diagnose", "--config", str(cfg2), "--out", str(tmp_path / "o2")]) == 0
    with open(tmp_path / "o2" / "snr.csv", newline="") as fh:
        normed = list(csv.DictReader(fh))
    # a scene normalized to itself is unchanged
    for a, b in zip(snr, normed):
        assert float(b["snr_median"]) == pytest.approx(float(a["snr_median"]), rel=1e-9)


def test_console_script_threads_identical(tmp_path):
    exe = shutil.which("ch4")
    if exe is None:
        pytest.skip("ch4 console script not installed")
    cfg, out = synth(tmp_path)
    results = {}
    for threads in (1, 4):
        o = tmp_path / f"t{threads}"
        shutil.copytree(out, o)
        proc = subprocess.run([exe, "retrieve", "--config", str(cfg), "--out", str(o), "--threads", str(threads)],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        results[threads] = {p.name: p.read_bytes() for p in o.iterdir() if p.name != "resolved_config.json"}
    assert results[1] == results[4]
    dx, _ = load_map(tmp_path / "t1" / "delta_x.json")
    assert np.isfinite(dx).any()
