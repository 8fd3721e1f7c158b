import csv
import io
import json
from contextlib import redirect_stdout

import numpy as np
import pytest

from raybos.cli import main
from raybos.engine import presets
from raybos.engine.config import ConfigError, build_experiment, config_hash, load_config
from raybos.engine.pipeline import bos_run, render, trace_debug
from raybos.sensor import read_pgm


def small(density=None, **kw):
    kw.setdefault("rays", 64)
    kw.setdefault("dots", 12)
    kw.setdefault("sensor_px", 64)
    return presets.reference_layout(density, **kw)


def test_reference_geometry():
    exp = build_experiment(presets.reference_layout(dots=1))
    mx, my = exp.magnification
    assert mx == pytest.approx(-0.12, rel=1e-4) and my == pytest.approx(-0.12, rel=1e-4)
    assert exp.sensor.center[2] - exp.geometry.lens_z == pytest.approx(0.1176, rel=1e-6)
    assert exp.d_tau == pytest.approx(47.22e-6, rel=1e-3)
    assert exp.entrance[1] == pytest.approx(0.105 / 22)


@pytest.mark.parametrize("patch, match", [
    ({"geometry": {"Z_D": -1.0}}, "Z_D"),
    ({"optics": []}, "optics"),
    ({"optics": [{"type": "prism"}]}, "unknown element"),
    ({"optics": [{"type": "thin_lens", "focal_length": 0.1}]}, "missing key"),
    ({"sensor": {"pitch": 0}}, "pitch"),
    ({"bundle": {"rays_per_source": 0}}, "rays_per_source"),
    ({"run": {"threads": 0}}, "threads"),
    ({"run": {"executor": "gpu"}}, "executor"),
    ({"scene": {"source": "stars"}}, "source"),
    ({"scene": {"density": {"type": "sine"}}}, "density type"),
    ({"scene": {"density": {"type": "gvol", "path": "/nonexistent.gvol"}}}, "does not exist"),
])
def test_config_errors(patch, match):
    cfg = small()
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    with pytest.raises(ConfigError, match=match):
        build_experiment(cfg)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_config_hash_ignores_run_only_keys():
    a = small()
    b = small(run={"threads": 4, "out": "elsewhere"})
    c = small(seed=3)
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)


def test_shipped_configs_build():
    from pathlib import Path
    for path in sorted(Path(__file__).resolve().parents[1].joinpath("configs").glob("*.json")):
        build_experiment(load_config(path))


def test_zero_dots_blank_image(tmp_path):
    counts, report = render(small(dots=0, sensor={**presets.REFERENCE_LAYOUT["sensor"], "width": 32, "height": 32, "gain": 1.0}),
                            out_dir=tmp_path)
    assert counts.max() == 0 and report.landed == 0 and report.emitted == 0
    assert read_pgm(tmp_path / "image.pgm").shape == (32, 32)


def test_render_accounting_balances(tmp_path):
    _, report = render(small(presets.linear_density()), out_dir=tmp_path)
    assert report.emitted == 12 * 64
    assert report.balanced
    assert report.landed > 0
    saved = json.loads((tmp_path / "report.json").read_text())
    assert saved["emitted"] == report.emitted and saved["config_hash"] == report.config_hash


def test_render_blocked_rays_counted(tmp_path):
    cfg = small()
    # rays are aimed at the stop's disk; a lens smaller than the stop clips the rim
    cfg["optics"] = [{"type": "aperture", "offset": 0.0, "radius": 0.004},
                     {"type": "thin_lens", "offset": 0.0, "focal_length": 0.105, "diameter": 0.004}]
    _, report = render(cfg, out_dir=tmp_path)
    assert report.blocked.get("blocked_miss", 0) > 0
    assert report.balanced


def test_render_deterministic_across_runs_and_workers(tmp_path):
    cfg = small(presets.linear_density())
    a, _ = render(cfg, out_dir=tmp_path / "a")
    b, _ = render(cfg, out_dir=tmp_path / "b")
    c, _ = render(small(presets.linear_density(), run={"threads": 3, "chunk_sources": 2}), out_dir=tmp_path / "c")
    d, _ = render(small(presets.linear_density(), run={"chunk_sources": 2}), out_dir=tmp_path / "d")
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(c, d)
    assert (tmp_path / "c" / "image.pgm").read_bytes() == (tmp_path / "d" / "image.pgm").read_bytes()


def test_process_executor_matches_threads(tmp_path):
    base = dict(rays=32, dots=8)
    a, _ = render(small(**base, run={"threads": 2, "executor": "process", "chunk_sources": 2}), out_dir=tmp_path / "p")
    b, _ = render(small(**base, run={"threads": 1, "chunk_sources": 2}), out_dir=tmp_path / "t")
    np.testing.assert_array_equal(a, b)


def test_seed_changes_image(tmp_path):
    a, _ = render(small(seed=1), out_dir=tmp_path / "a")
    b, _ = render(small(seed=2), out_dir=tmp_path / "b")
    assert not np.array_equal(a, b)


def test_bos_run_writes_outputs(tmp_path):
    res = bos_run(small(presets.linear_density(), rays=64, dots=60, sensor_px=96), out_dir=tmp_path)
    for name in ("ref.pgm", "grad.pgm", "measured.csv", "theory.csv", "metrics.csv", "dots.csv", "report.json"):
        assert (tmp_path / name).exists(), name
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert len(rows) == 2 and "rms_error" in rows[0]
    assert res.metrics["mean_dx_px"] == pytest.approx(0.0678, rel=0.05)
    with pytest.raises(ValueError):
        bos_run(small(), write=False)


def test_trace_debug_rows():
    rows = trace_debug(small(presets.linear_density()), dot=0, ray=0)
    stages = [r["stage"] for r in rows]
    assert stages[0] == "source" and stages[1] == "entry" and "exit" in stages
    assert stages[-3:] == ["optics", "sensor", "status:ok"]
    no_field = [r["stage"] for r in trace_debug(small(presets.linear_density()), 0, 0, with_field=False)]
    assert no_field == ["source", "optics", "sensor", "status:ok"]
    with pytest.raises(IndexError):
        trace_debug(small(), dot=99, ray=0)
    with pytest.raises(IndexError):
        trace_debug(small(), dot=0, ray=64)


def test_cli_validate_and_errors(tmp_path, capsys):
    assert main(["validate", "snell", "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["passed"] and (tmp_path / "validate_snell.json").exists()
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(small(presets.linear_density())))
    assert main(["trace-debug", str(cfg), "--dot", "0", "--ray", "1"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("stage,xi,x,y,z,tx,ty,tz")
    assert main(["trace-debug", str(cfg), "--dot", "500", "--ray", "0"]) == 2
    assert main(["render", str(tmp_path / "nope.json")]) == 2


def test_cli_render_overrides(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(small()))
    assert main(["render", str(cfg), "--seed", "5", "--threads", "2", "--out", str(tmp_path / "o")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["info"]["threads"] == 2
    assert (tmp_path / "o" / "image.pgm").exists()
