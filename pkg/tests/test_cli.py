import csv
import json
from pathlib import Path
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lfmicroscan import io
from lfmicroscan.cli import main
from lfmicroscan.core import LensletGrid
from lfmicroscan.errors import ConfigurationError
from lfmicroscan.pipeline import (EXIT_CODES, GridSpec, PipelineConfig, Run, SceneSpec, StageError,
                                  aggregate_reports)


def small_config(**kw) -> PipelineConfig:
    base = PipelineConfig(grid=GridSpec(rows=16, cols=16, full_sensor=False),
                          scene=SceneSpec(kind="test_chart", n_bands=8), seed=3)
    return replace(base, **kw)


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    io.write_json(path, cfg.to_dict())
    return str(path)


def tree_bytes(d):
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "timings.json"}


@given(seed=st.integers(0, 2**31 - 1), threshold=st.floats(0.01, 0.9),
       counts=st.lists(st.sampled_from([1, 2, 4, 8, 16]), min_size=1, max_size=5, unique=True),
       source=st.sampled_from(["register", "commanded", "actual"]))
def test_config_round_trip(seed, threshold, counts, source):
    cfg = small_config(seed=seed, captures=tuple(counts), shift_source=source)
    cfg = replace(cfg, metrics=replace(cfg.metrics, threshold=threshold))
    d = cfg.to_dict()
    back = PipelineConfig.from_dict(json.loads(json.dumps(d)))
    assert back == cfg
    assert back.to_dict() == d


def test_config_rejects_bad_input():
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_dict({"scene": {}, "bogus": 1})
    with pytest.raises(ConfigurationError):
        PipelineConfig.from_dict({"scene": {"colour": 1}})
    with pytest.raises(ConfigurationError):
        PipelineConfig(shift_source="guess")
    with pytest.raises(ConfigurationError):
        PipelineConfig(captures=(3,))


def test_default_grid_is_full_sensor():
    assert PipelineConfig().grid.build().to_dict() == LensletGrid().to_dict()


def test_simulate_default_count(tmp_path):
    cfg = write_cfg(tmp_path, small_config())
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    caps = tmp_path / "r" / "captures"
    sched = io.read_json(caps / "schedule.json")
    assert len(sched["labels"]) == 16
    assert len(list(caps.glob("capture_*.pgm"))) == 16
    assert (caps / "white.pgm").exists()


def test_simulate_single(tmp_path):
    cfg = write_cfg(tmp_path, small_config())
    assert main(["simulate", "--count", "1", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
    assert [p.name for p in (tmp_path / "r" / "captures").glob("capture_*.pgm")] == ["capture_01.pgm"]


def test_simulate_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, small_config())
    for name in ("a", "b"):
        assert main(["simulate", "--count", "4", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    assert tree_bytes(tmp_path / "a" / "captures") == tree_bytes(tmp_path / "b" / "captures")


def test_simulate_failure_leaves_no_partial(tmp_path):
    bad = small_config(scene=SceneSpec(kind="natural_image", margin_um=-500.0))
    cfg = write_cfg(tmp_path, bad)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "r")]) == EXIT_CODES["simulate"]
    assert not list((tmp_path / "r").rglob("*.partial"))
    assert not (tmp_path / "r" / "captures").exists()


def test_exit_codes(tmp_path, capsys):
    cfg = write_cfg(tmp_path, small_config())
    (tmp_path / "bad.json").write_text('{"nonsense": true}')
    assert main(["pipeline", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "r")]) == 2
    assert main(["calibrate", "--config", cfg, "--out", str(tmp_path / "empty")]) == EXIT_CODES["calibrate"]
    assert "[calibrate]" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "nothing"), "--out", str(tmp_path / "rep")]) == EXIT_CODES["report"]
    assert len(set(EXIT_CODES.values())) == len(EXIT_CODES)


def test_stage_error_carries_code():
    assert StageError("fuse", ValueError("x")).exit_code == 14
    assert "[register]" in str(StageError("register", ValueError("x")))


def test_identity_pipeline(tmp_path):
    cfg = write_cfg(tmp_path, small_config(shift_source="commanded"))
    out = tmp_path / "r"
    assert main(["pipeline", "--captures", "1", "--enhancement", "1", "--config", cfg, "--out", str(out)]) == 0
    fused = io.load_lightfield(out / "n1" / "fused")
    decoded = io.load_lightfield(out / "decoded" / "capture_01")
    assert fused.data.shape == decoded.data.shape
    np.testing.assert_allclose(fused.data, decoded.data, atol=1e-9)


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweep")
    cfg = replace(small_config(shift_source="commanded"), captures=(1, 2, 4, 8, 16))
    path = write_cfg(root, cfg)
    assert main(["pipeline", "--config", path, "--out", str(root / "full")]) == 0
    return root, cfg, path


def test_pipeline_outputs(sweep):
    root, cfg, _ = sweep
    for c in cfg.captures:
        lf = io.load_lightfield(root / "full" / f"n{c}" / "fused")
        assert lf.angular_size == (7, 7)
        assert lf.spatial_size == (64, 64)
        assert (root / "full" / f"n{c}" / "report" / "report.json").exists()
    timings = io.read_json(root / "full" / "timings.json")
    assert {f"interpolate_n{c}" for c in cfg.captures} <= set(timings)


def test_stage_isolation(sweep, tmp_path):
    root, cfg, path = sweep
    out = tmp_path / "staged"
    for cmd in (["simulate"], ["calibrate"], ["decode"], ["register"], ["fuse"], ["deconv"], ["evaluate"]):
        assert main(cmd + ["--config", path, "--out", str(out)]) == 0
    for c in cfg.captures:
        for sub in ("fused", "deconv"):
            a = np.load(root / "full" / f"n{c}" / sub / "data.npy")
            b = np.load(out / f"n{c}" / sub / "data.npy")
            assert np.array_equal(a, b)
        rep = Path(f"n{c}") / "report" / "report.json"
        assert (root / "full" / rep).read_bytes() == (out / rep).read_bytes()


def test_cached_rerun_is_unchanged(sweep):
    root, _, path = sweep
    before = tree_bytes(root / "full")
    assert main(["pipeline", "--config", path, "--out", str(root / "full")]) == 0
    assert tree_bytes(root / "full") == before


def test_report_single_row(sweep, tmp_path):
    root, _, _ = sweep
    one = tmp_path / "one"
    for c in (1,):
        (one / f"n{c}" / "report").mkdir(parents=True)
        src = root / "full" / f"n{c}" / "report" / "report.json"
        (one / f"n{c}" / "report" / "report.json").write_bytes(src.read_bytes())
    rows, missing = aggregate_reports([one], tmp_path / "rep")
    assert len(rows) == 1 and not missing
    with open(tmp_path / "rep" / "summary.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 1


def test_report_sweep(sweep, tmp_path):
    root, _, _ = sweep
    rows, missing = aggregate_reports([root / "full", tmp_path / "absent"], tmp_path / "rep")
    assert [r["count"] for r in rows] == [1, 2, 4, 8, 16]
    assert missing == [str(tmp_path / "absent")]
    assert all(r["cutoff_fused"] > 0 for r in rows)
    for name in ("cutoff_vs_count.png", "interpolation_time_vs_count.png", "contrast_curves.png"):
        assert (tmp_path / "rep" / name).stat().st_size > 0
    assert main(["report", str(root / "full"), str(tmp_path / "absent"), "--out", str(tmp_path / "rep2")]) == 0


def test_default_config_prints_json(capsys):
    assert main(["default-config"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert PipelineConfig.from_dict(d) == PipelineConfig()
