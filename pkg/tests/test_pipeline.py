import json
import os

import numpy as np
import pytest

from phaseless.elliptic import VolumeGrid
from phaseless.errors import ConfigError, ShapeMismatchError
from phaseless.geometry import BallConfig
from phaseless.io import read_scan, read_volume
from phaseless.pipeline import (PipelineConfig, compare_volumes, resample_volume, run_pipeline,
                                simulate)
from phaseless.geometry import chord_grid


def small_config(**over):
    d = {"ball": {"B": 1.0, "R": 0.8, "grid_n": 24},
         "chords": {"n_z": 6, "n_alpha": 32, "n_s": 32},
         "sweep": "never"}
    d.update(over)
    return d


@pytest.mark.parametrize("patch, match", [
    ({"noise": -1.0}, "noise"),
    ({"method": "fourier"}, "method"),
    ({"chords": {"n_z": 0, "n_alpha": 8, "n_s": 8}}, "n_z"),
    ({"ball": {"B": 1.0, "R": 1.2}}, "R < B"),
    ({"kgrid": {"k0": 10.0, "k_max": 5.0, "dk": 0.5}}, "k"),
    ({"noise": 0.01, "sweep": "never"}, "noise"),
    ({"abel": {"M": 4}}, "abel.M"),
    ({"colour": "red"}, "colour"),
])
def test_config_validation(patch, match):
    with pytest.raises(ConfigError, match=match):
        PipelineConfig.from_dict(small_config(**patch))


def test_config_load_reports_json_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"ball": {"B": 1.0,,}}')
    with pytest.raises(ConfigError, match="line 1 column"):
        PipelineConfig.load(p)
    p.write_text(json.dumps(small_config()))
    cfg = PipelineConfig.load(p)
    assert cfg.n_chords() == 6 * 32 * 32
    assert cfg["abel"]["method"] == "iterate"   # defaults merged


def test_sweep_policy():
    assert not PipelineConfig.from_dict(small_config()).use_sweeps()
    auto = PipelineConfig.from_dict(small_config(sweep="auto"))
    assert auto.use_sweeps()
    big = PipelineConfig.from_dict(small_config(sweep="auto", max_sweep_chords=100))
    assert not big.use_sweeps()
    assert PipelineConfig.from_dict(small_config(sweep="auto", noise=0.01,
                                                 max_sweep_chords=100)).use_sweeps()


def test_compare_volumes_cases():
    cfg = BallConfig(1.0, 0.8, 8)
    a = VolumeGrid.empty(cfg)
    b = VolumeGrid.empty(cfg)
    assert compare_volumes(a, b)["rel_l2"] == 0.0
    a.values[:] = 1.0
    assert compare_volumes(a, b)["rel_l2"] == 1.0
    b.values[:] = 2.0
    res = compare_volumes(a, b, R=0.5)
    assert res["rel_l2"] == pytest.approx(0.5) and res["linf"] == 1.0
    assert len(res["per_slice"]) == 8 and res["mask_radius"] == 0.5
    fine = VolumeGrid.empty(BallConfig(1.0, 0.8, 16))
    with pytest.raises(ShapeMismatchError):
        compare_volumes(fine, b)
    fine.values[:] = 2.0
    assert compare_volumes(fine, b, R=0.5, resample=True)["rel_l2"] < 1e-12


def test_resample_is_exact_for_linear_fields():
    lin = lambda p: 1 + p[..., 0] - 2 * p[..., 2]
    src = VolumeGrid.from_function(lin, BallConfig(1.0, 0.8, 16))
    dst = VolumeGrid.from_function(lin, BallConfig(1.0, 0.8, 10))
    out = resample_volume(src, dst)
    inner = dst.mask(0.8)
    np.testing.assert_allclose(out.values[inner], dst.values[inner], atol=1e-12)


def test_run_in_memory():
    # q is interpolated linearly between slices, so the Abel path needs a
    # reasonable number of them (6 slices give ~100% error, 16 give ~17%)
    rep = run_pipeline(small_config(chords={"n_z": 16, "n_alpha": 32, "n_s": 32}))
    assert set(rep.metrics) == {"radon", "abel", "radon_vs_abel"}
    assert rep.metrics["radon"]["rel_l2"] < 0.06
    assert rep.metrics["abel"]["rel_l2"] < 0.2
    assert rep.volumes["radon"].shape == (24, 24, 24)
    assert set(rep.timings) >= {"phantom", "simulate", "recon-radon", "recon-abel"}
    assert rep.outputs == {}


def test_run_to_directory(tmp_path):
    out = tmp_path / "run"
    rep = run_pipeline(small_config(method="radon", dump_csv=True), str(out))
    names = set(os.listdir(out))
    assert {"phantom.json", "beta_true.pkvol", "chords.pkchord", "observables.pkobs",
            "beta_radon.pkvol", "beta_radon.csv", "report.json"} <= names
    assert "beta_abel.pkvol" not in names
    vol = read_volume(out / "beta_radon.pkvol")
    np.testing.assert_array_equal(vol.values, rep.volumes["radon"].values)
    saved = json.loads((out / "report.json").read_text())
    assert saved["metrics"]["radon"]["rel_l2"] == rep.metrics["radon"]["rel_l2"]


def test_sweeps_match_direct_observables(tmp_path):
    base = small_config(chords={"n_z": 4, "n_alpha": 16, "n_s": 16})
    direct = PipelineConfig.from_dict(base)
    swept = PipelineConfig.from_dict(dict(base, sweep="always"))
    chords = chord_grid(direct.ball, 4, 16, 16)
    a = simulate(direct, chords)
    b = simulate(swept, chords, scan_path=tmp_path / "s.pkscan")
    # grazing chords with delays far below the sweep resolution read as
    # line of sight
    differ = a.line_of_sight != b.line_of_sight
    assert np.all(b.line_of_sight[differ])
    assert np.all(a.tau_hat[differ] - a.dist[differ] < 1e-8)
    np.testing.assert_allclose(b.A_hat[~differ], a.A_hat[~differ], rtol=1e-6)
    np.testing.assert_allclose(b.A_hat, a.A_hat, rtol=1e-3)
    np.testing.assert_allclose(b.tau_hat, a.tau_hat, atol=1e-6)
    scan = read_scan(tmp_path / "s.pkscan")
    assert scan.values.shape == (len(chords), swept.kgrid.n_k)


def test_seeded_noise_is_deterministic():
    cfg = small_config(chords={"n_z": 1, "n_alpha": 32, "n_s": 32}, noise=0.01, seed=7,
                       method="radon", sweep="auto")
    r1 = run_pipeline(cfg)
    r2 = run_pipeline(cfg)
    np.testing.assert_array_equal(r1.volumes["radon"].values, r2.volumes["radon"].values)
    r3 = run_pipeline(dict(cfg, seed=8))
    assert not np.array_equal(r1.volumes["radon"].values, r3.volumes["radon"].values)


def test_zero_phantom_reconstructs_zero():
    rep = run_pipeline(small_config(phantom={"bumps": []}))
    for vol in rep.volumes.values():
        assert np.max(np.abs(vol.values)) < 1e-12
    assert rep.metrics["radon"]["rel_l2"] == 0.0
