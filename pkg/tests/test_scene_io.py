import csv
import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atwflow.cli import main
from atwflow.experiment import MissingSnapshot, emit_plot_data, run_experiment, verify_manifest
from atwflow.grid import GridSpec, LabelField, SignedField
from atwflow.io import (
    SnapshotError,
    load_signed_csv,
    read_label_pgm,
    write_label_pgm,
    write_signed_csv,
)
from atwflow.scene import (
    ConfigError,
    ExperimentConfig,
    OverlappingShapes,
    ShapeConfig,
    ShapeOutOfDomain,
    rasterize_scene,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def cfg(phases=(), n=64, **kw):
    d = {"grid": {"width": n, "height": n, "h": 1 / n}, "phases": list(phases), "lambdas": [10], "steps": 1}
    d.update(kw)
    return ExperimentConfig.from_dict(d)


def disk(cx, cy, r, label=0):
    return {"shape": "disk", "label": label, "cx": cx, "cy": cy, "r": r}


def gauss_count(r, cx, cy):
    """Integer points (cell centers in cell units) inside the circle, counted row by row."""
    total = 0
    for i in range(int(math.floor(cx - r)) - 1, int(math.ceil(cx + r)) + 2):
        x = i + 0.5 - cx
        if abs(x) > r:
            continue
        s = math.sqrt(r * r - x * x)
        total += math.floor(cy + s - 0.5) - math.ceil(cy - s - 0.5) + 1
    return total


# ---- rasterization ------------------------------------------------------------------------------


def test_empty_scene_is_exterior():
    f = rasterize_scene(cfg(num_bounded=2))
    assert f.num_bounded == 2 and f.is_extinct()
    assert (f.labels == 2).all()


def test_disk_area_gauss():
    n = 64
    f = rasterize_scene(cfg([disk(0.5, 0.5, 20 / n)], n=n))
    h = 1 / n
    assert f.area(0) == pytest.approx(gauss_count(20, 32, 32) * h * h, abs=1e-15)
    r = 20 * h
    assert abs(f.area(0) - math.pi * r * r) <= 4 * math.pi * r * h


def test_frame_stays_exterior_and_shapes_map_to_labels():
    c = cfg(
        [
            {"shape": "rectangle", "label": 0, "x0": 0.1, "y0": 0.1, "x1": 0.4, "y1": 0.3},
            {"shape": "regular_polygon", "label": 1, "cx": 0.7, "cy": 0.7, "r": 0.2, "sides": 6},
            {"shape": "polygon", "label": 2, "vertices": [[0.1, 0.6], [0.3, 0.6], [0.1, 0.9]]},
        ]
    )
    f = rasterize_scene(c)
    assert f.num_bounded == 3
    assert all(f.area(j) > 0 for j in range(3))
    assert (f.labels[f.spec.frame_mask()] == 3).all()
    cell = lambda x, y: f.labels[int(x * 64), int(y * 64)]
    assert (cell(0.25, 0.2), cell(0.7, 0.7), cell(0.15, 0.65), cell(0.6, 0.2)) == (0, 1, 2, 3)


def test_overlap_and_domain_errors():
    with pytest.raises(OverlappingShapes):
        rasterize_scene(cfg([disk(0.4, 0.5, 0.2, 0), disk(0.6, 0.5, 0.2, 1)]))
    # the same label may overlap itself
    rasterize_scene(cfg([disk(0.4, 0.5, 0.2), disk(0.6, 0.5, 0.2)]))
    with pytest.raises(ShapeOutOfDomain):
        rasterize_scene(cfg([disk(0.5, 0.5, 0.6)]))
    with pytest.raises(ConfigError):
        rasterize_scene(cfg([disk(0.5, 0.5, 0.2, 3)], num_bounded=2))


def test_second_ring_warning(caplog):
    n = 32
    # center of the disk in cell 1's column: covers ring 2 but not the frame
    rasterize_scene(cfg([disk(1.5 / n, 16.5 / n, 0.4 / n)], n=n))
    assert "second ring" in caplog.text


def test_pgm_shape(tmp_path):
    spec = GridSpec(16, 16, 1 / 16)
    lab = np.full(spec.shape, 1)
    lab[4:9, 5:12] = 0
    write_label_pgm(LabelField(spec, 1, lab), tmp_path / "mask.pgm")
    c = cfg([{"shape": "pgm", "label": 0, "path": str(tmp_path / "mask.pgm"), "threshold": 0}], n=16)
    # pixels >= 0 is everything, including the frame
    with pytest.raises(ShapeOutOfDomain):
        rasterize_scene(c)
    from PIL import Image

    # a plain grayscale mask: 1 inside the rectangle, 0 elsewhere (not a valid label field)
    Image.fromarray(np.ascontiguousarray((1 - lab).astype(np.uint8).T[::-1]), mode="L").save(
        tmp_path / "inv.pgm", format="PPM"
    )
    c = cfg([{"shape": "pgm", "label": 0, "path": str(tmp_path / "inv.pgm"), "threshold": 1}], n=16)
    assert np.array_equal(rasterize_scene(c).labels, lab)


# ---- config -------------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "patch",
    [
        {"lambdas": [0.5]},
        {"lambdas": []},
        {"grid": {"width": 8, "height": 8, "h": 0}},
        {"steps": -1},
        {"arity": 6},
        {"verifiers": {"nonsense": True}},
    ],
)
def test_config_rejects(patch):
    d = {"grid": {"width": 8, "height": 8, "h": 0.125}, "phases": [], "lambdas": [10], "steps": 1}
    d.update(patch)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(d)


def test_config_needs_steps_or_time_and_known_shapes():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"grid": {"width": 8, "height": 8, "h": 0.125}, "lambdas": [10]})
    with pytest.raises(ConfigError):
        ShapeConfig.from_dict({"shape": "blob", "label": 0})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"lambdas": [10], "steps": 1})


def test_digest_stable_and_sensitive():
    a = ExperimentConfig.load(CONFIGS / "shrinking_disk.json")
    b = ExperimentConfig.from_dict(json.loads(json.dumps(a.to_dict())))
    assert a.digest() == b.digest()
    c = ExperimentConfig.from_dict({**a.to_dict(), "order_seed": 99})
    assert c.digest() != a.digest()


def test_steps_from_t_final():
    c = cfg(t_final=0.1, steps=None, lambdas=[50, 400])
    assert [c.steps_for(l) for l in c.lambdas] == [5, 40]
    assert c.sample_times()[-1] == pytest.approx(0.1)


def test_shipped_configs_parse():
    for p in sorted(CONFIGS.glob("*.json")):
        c = ExperimentConfig.load(p)
        rasterize_scene(c)


# ---- round trips --------------------------------------------------------------------------------


@settings(max_examples=25)
@given(
    st.integers(4, 20),
    st.integers(4, 20),
    st.integers(1, 5),
    st.integers(0, 2**31),
)
def test_pgm_round_trip(tmp_path_factory, w, hgt, N, seed):
    rng = np.random.default_rng(seed)
    spec = GridSpec(w, hgt, 0.37)
    lab = rng.integers(0, N + 1, spec.shape)
    lab[spec.frame_mask()] = N
    f = LabelField(spec, N, lab)
    p = tmp_path_factory.mktemp("pgm") / "f.pgm"
    write_label_pgm(f, p)
    assert p.read_bytes()[:2] == b"P5"
    g = read_label_pgm(p)
    assert g == f and g.spec == spec


def test_rasterize_save_load_identical(tmp_path):
    f = rasterize_scene(cfg([disk(0.3, 0.4, 0.15, 0), disk(0.7, 0.6, 0.2, 1)]))
    write_label_pgm(f, tmp_path / "s.pgm")
    assert read_label_pgm(tmp_path / "s.pgm") == f


def test_pgm_orientation(tmp_path):
    # cell (i, j) is x-major: the top image row carries the largest y
    spec = GridSpec(6, 5, 1.0)
    lab = np.full(spec.shape, 1)
    lab[1, 3] = 0
    write_label_pgm(LabelField(spec, 1, lab), tmp_path / "o.pgm")
    from PIL import Image

    img = np.asarray(Image.open(tmp_path / "o.pgm"))
    assert img.shape == (5, 6)
    assert img[5 - 1 - 3, 1] == 0


def test_pgm_missing_sidecar(tmp_path):
    f = LabelField.empty(GridSpec(6, 6, 1.0), 1)
    write_label_pgm(f, tmp_path / "x.pgm")
    (tmp_path / "x.json").unlink()
    with pytest.raises(SnapshotError):
        read_label_pgm(tmp_path / "x.pgm")


def test_signed_csv_round_trip(tmp_path, rng):
    spec = GridSpec(7, 5, 0.1)
    vals = rng.normal(size=spec.shape) * 10.0 ** rng.integers(-8, 8, spec.shape)
    write_signed_csv(SignedField(spec, vals), tmp_path / "v.csv")
    back = load_signed_csv(tmp_path / "v.csv", spec)
    assert np.array_equal(back.values, vals)
    with open(tmp_path / "v.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 7 and len(rows[0]) == 5


# ---- experiments --------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def stationary_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("stationary")
    status, manifest = run_experiment(ExperimentConfig.load(CONFIGS / "stationary.json"), d / "run")
    return status, manifest


def test_stationary_exit_zero(stationary_run):
    status, manifest = stationary_run
    assert status == 0
    m = json.loads(manifest.read_text())
    assert m["all_passed"] and m["config_hash"] == ExperimentConfig.load(CONFIGS / "stationary.json").digest()
    (chain,) = m["chains"]
    # nothing to evolve: the chain stops at once and keeps only the initial state
    assert chain["steps"] == 0 and len(chain["snapshots"]) == 1
    assert len(m["trajectory"]["snapshots"]) == len(m["trajectory"]["times"])
    reports = json.loads((manifest.parent / "reports.json").read_text())
    assert {r["check"] for r in reports} == {"energy_descent", "hull_confinement"}


def test_zero_step_manifest_single_row(tmp_path):
    c = ExperimentConfig.from_dict(
        {
            "grid": {"width": 16, "height": 16, "h": 1 / 16},
            "phases": [disk(0.5, 0.5, 0.25)],
            "lambdas": [10],
            "steps": 0,
            "times": [0.0],
        }
    )
    status, manifest = run_experiment(c, tmp_path / "run")
    assert status == 0
    m = json.loads(manifest.read_text())
    assert len(m["chains"][0]["snapshots"]) == 1
    paths = emit_plot_data(manifest)
    for p in paths:
        if p.name == "holder_pairs.csv":
            continue
        with open(p) as fh:
            assert len(list(csv.reader(fh))) == 2  # header + one row


def test_injected_violation_exit_one(tmp_path):
    status, manifest = run_experiment(ExperimentConfig.load(CONFIGS / "injected_violation.json"), tmp_path / "run")
    assert status == 1
    assert not json.loads(manifest.read_text())["all_passed"]
    assert verify_manifest(manifest) == 1


def test_verify_and_plotdata(stationary_run, tmp_path):
    _, manifest = stationary_run
    assert verify_manifest(manifest) == 0
    names = {p.name for p in emit_plot_data(manifest)}
    assert names == {"area_vs_t.csv", "perimeter_vs_k.csv", "holder_pairs.csv", "discrepancy.csv"}


def test_area_csv_follows_disk_law(tmp_path):
    c = ExperimentConfig.from_dict(
        {
            "grid": {"width": 96, "height": 96, "h": 1 / 96},
            "phases": [disk(0.5, 0.5, 0.35)],
            "lambdas": [150],
            "steps": 6,
        }
    )
    _, manifest = run_experiment(c, tmp_path / "run")
    (area_csv,) = [p for p in emit_plot_data(manifest) if p.name == "area_vs_t.csv"]
    with open(area_csv) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 7
    for row in rows[1:]:
        t, a = float(row["t"]), float(row["area_0"])
        expect = math.pi * (0.35**2 - 2 * t)
        assert abs(a - expect) <= 0.07 * expect + 4 * math.pi * 0.35 / 96


def test_empty_manifest_missing_snapshot(stationary_run, tmp_path):
    _, manifest = stationary_run
    m = json.loads(manifest.read_text())
    m["chains"] = []
    p = tmp_path / "manifest.json"
    p.write_text(json.dumps(m))
    with pytest.raises(MissingSnapshot):
        emit_plot_data(p)
    # a manifest whose snapshot files were removed
    run = tmp_path / "copy"
    shutil.copytree(manifest.parent, run)
    shutil.rmtree(run / "snapshots")
    with pytest.raises(MissingSnapshot):
        verify_manifest(run / "manifest.json")


def test_run_deterministic(tmp_path):
    c = ExperimentConfig.load(CONFIGS / "two_disks.json")
    c = ExperimentConfig.from_dict({**c.to_dict(), "steps": 2, "verifiers": {}}, base_dir=c.base_dir)
    _, m1 = run_experiment(c, tmp_path / "a")
    _, m2 = run_experiment(c, tmp_path / "b")
    a, b = json.loads(m1.read_text()), json.loads(m2.read_text())
    assert a["config_hash"] == b["config_hash"]
    for ca, cb in zip(a["chains"], b["chains"]):
        for sa, sb in zip(ca["snapshots"], cb["snapshots"]):
            assert (m1.parent / sa).read_bytes() == (m2.parent / sb).read_bytes()


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ATWFLOW_OUTPUT_ROOT", str(tmp_path / "root"))
    _, manifest = run_experiment(ExperimentConfig.load(CONFIGS / "stationary.json"))
    assert manifest.parent.parent == tmp_path / "root"
    digest = ExperimentConfig.load(CONFIGS / "stationary.json").digest()
    assert manifest.parent.name.endswith(digest[:12])


# ---- CLI ----------------------------------------------------------------------------------------


def test_cli_oracle(capsys):
    assert main(["oracle", str(CONFIGS / "tiny_oracle.json")]) == 0
    out = capsys.readouterr().out
    assert out.count(" ok") == 4 and "MISMATCH" not in out


def test_cli_run_verify_plotdata(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["run", str(CONFIGS / "stationary.json"), "--out", str(run)]) == 0
    assert main(["verify", str(run / "manifest.json")]) == 0
    assert main(["plotdata", str(run / "manifest.json")]) == 0
    assert "area_vs_t.csv" in capsys.readouterr().out


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"grid": {"width": 8, "height": 8, "h": 0.125}, "lambdas": [0.1], "steps": 1}))
    assert main(["run", str(bad)]) == 2
    assert "ConfigError" in capsys.readouterr().err
    assert main(["verify", str(tmp_path / "nope.json")]) == 2
