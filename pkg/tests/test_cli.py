import json
import shutil

import numpy as np
import pytest

from exedit.cli import main
from exedit.config import RunConfig
from exedit.errors import ConfigError
from exedit.images import save_png, sha256_file

from conftest import make_corpus, structured_image, write_run_config


@pytest.fixture
def workspace(tmp_path):
    """Config + exemplar triple on disk."""
    config_path = write_run_config(tmp_path / "config.json")
    save_png(structured_image(1), tmp_path / "x.png")
    save_png(structured_image(2), tmp_path / "x_edit.png")
    save_png(structured_image(3), tmp_path / "y.png")
    return tmp_path, config_path


def edit_args(ws, config_path, out="out", extra=()):
    return [
        "edit",
        "--exemplar", str(ws / "x.png"), str(ws / "x_edit.png"),
        "--target", str(ws / "y.png"),
        "--config", str(config_path),
        "--out", str(ws / out),
        "--id", "demo",
        *extra,
    ]


# ---------------------------------------------------------------------------
# edit
# ---------------------------------------------------------------------------

def test_edit_writes_image_and_provenance(workspace, capsys):
    ws, config_path = workspace
    assert main(edit_args(ws, config_path)) == 0
    out = capsys.readouterr().out
    assert "total" in out
    image_path = ws / "out" / "demo.png"
    assert image_path.is_file()
    prov = json.loads((ws / "out" / "demo.provenance.json").read_text())
    assert prov["g_text"]
    assert prov["g_caption"]
    assert prov["prompt_version"] == "v1"
    assert prov["config"]["run_config"]["raw"]["resolution"] == 64
    assert set(prov["stage_seconds"]) >= {"capture_edit", "ddim_invert", "edited_run"}


def test_edit_same_seed_is_byte_identical(workspace):
    ws, config_path = workspace
    assert main(edit_args(ws, config_path, out="a")) == 0
    assert main(edit_args(ws, config_path, out="b")) == 0
    assert sha256_file(ws / "a" / "demo.png") == sha256_file(ws / "b" / "demo.png")


def test_edit_different_seed_changes_output(workspace):
    ws, config_path = workspace
    assert main(edit_args(ws, config_path, out="a")) == 0
    assert main(edit_args(ws, config_path, out="c", extra=["--seed", "7"])) == 0
    assert sha256_file(ws / "a" / "demo.png") != sha256_file(ws / "c" / "demo.png")


def test_edit_missing_target_is_usage_error(workspace):
    ws, config_path = workspace
    with pytest.raises(SystemExit) as excinfo:
        main(["edit", "--exemplar", str(ws / "x.png"), str(ws / "x_edit.png"),
              "--config", str(config_path)])
    assert excinfo.value.code == 2


def test_edit_bad_config_path_fails_cleanly(workspace, capsys):
    ws, _ = workspace
    code = main(edit_args(ws, ws / "missing.json"))
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_edit_dump_trajectory(workspace):
    ws, config_path = workspace
    assert main(edit_args(ws, config_path, extra=["--dump-trajectory"])) == 0
    digest = json.loads((ws / "out" / "demo.trajectory.json").read_text())
    assert len(digest) == 51  # 50 steps + clean anchor
    assert digest[0]["step"] == 0 and digest[-1]["t"] == 999
    assert all("checksum" in row for row in digest)


# ---------------------------------------------------------------------------
# batch
# ---------------------------------------------------------------------------

def test_batch_runs_every_entry(tmp_path, capsys):
    manifest_path, ids = make_corpus(tmp_path)
    config_path = write_run_config(tmp_path / "config.json")
    code = main(["batch", "--manifest", str(manifest_path),
                 "--config", str(config_path), "--out", str(tmp_path / "out")])
    assert code == 0
    for entry_id in ids:
        assert (tmp_path / "out" / f"{entry_id}.png").is_file()
        assert (tmp_path / "out" / f"{entry_id}.provenance.json").is_file()
    summary = json.loads((tmp_path / "out" / "batch_summary.json").read_text())
    assert summary["total"] == 3
    assert sorted(summary["succeeded"]) == ids
    assert summary["failed"] == {}


def test_batch_isolates_per_entry_failures(tmp_path):
    manifest_path, ids = make_corpus(tmp_path)
    (tmp_path / "images" / f"{ids[1]}_y.png").write_bytes(b"corrupt")
    config_path = write_run_config(tmp_path / "config.json")
    code = main(["batch", "--manifest", str(manifest_path),
                 "--config", str(config_path), "--out", str(tmp_path / "out")])
    assert code == 3  # partial
    summary = json.loads((tmp_path / "out" / "batch_summary.json").read_text())
    assert sorted(summary["succeeded"]) == [ids[0], ids[2]]
    assert list(summary["failed"]) == [ids[1]]
    assert (tmp_path / "out" / f"{ids[0]}.png").is_file()
    assert not (tmp_path / "out" / f"{ids[1]}.png").exists()


def test_batch_parallel_matches_serial(tmp_path):
    manifest_path, ids = make_corpus(tmp_path)
    config_path = write_run_config(tmp_path / "config.json")
    assert main(["batch", "--manifest", str(manifest_path), "--config", str(config_path),
                 "--out", str(tmp_path / "serial")]) == 0
    assert main(["batch", "--manifest", str(manifest_path), "--config", str(config_path),
                 "--out", str(tmp_path / "parallel"), "--parallel", "2"]) == 0
    for entry_id in ids:
        assert (sha256_file(tmp_path / "serial" / f"{entry_id}.png")
                == sha256_file(tmp_path / "parallel" / f"{entry_id}.png"))


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def _prediction_dir(tmp_path, manifest_path, ids):
    from exedit.dataset import load_manifest

    manifest = load_manifest(manifest_path)
    preds = tmp_path / "preds"
    preds.mkdir()
    for entry_id in ids:
        shutil.copy(manifest.resolve(manifest.entry(entry_id).y_edit_path),
                    preds / f"{entry_id}.png")
    return preds


def test_evaluate_ground_truth_predictions(tmp_path, capsys):
    manifest_path, ids = make_corpus(tmp_path)
    preds = _prediction_dir(tmp_path, manifest_path, ids)
    config_path = write_run_config(tmp_path / "config.json")
    captions_path = tmp_path / "captions.json"
    captions_path.write_text(json.dumps(
        {i: {"target": f"target {i}", "source": f"source {i}"} for i in ids}))
    code = main(["evaluate", "--manifest", str(manifest_path),
                 "--predictions", str(preds), "--config", str(config_path),
                 "--out", str(tmp_path / "report"), "--captions", str(captions_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "LPIPS" in out and "S-Visual" in out
    csv_lines = (tmp_path / "report" / "report.csv").read_text().strip().splitlines()
    assert len(csv_lines) == 8  # header + 7 metrics
    report = json.loads((tmp_path / "report" / "report.json").read_text())
    assert abs(report["per_metric"]["ssim"]["mean"] - 1.0) <= 1e-5


def test_evaluate_without_captions_signals_skips(tmp_path):
    manifest_path, ids = make_corpus(tmp_path)
    preds = _prediction_dir(tmp_path, manifest_path, ids)
    config_path = write_run_config(tmp_path / "config.json")
    base = ["evaluate", "--manifest", str(manifest_path), "--predictions", str(preds),
            "--config", str(config_path), "--out", str(tmp_path / "report")]
    assert main(base) == 1
    assert main(base + ["--allow-skips"]) == 0


def test_evaluate_missing_prediction_lists_id(tmp_path, capsys):
    manifest_path, ids = make_corpus(tmp_path)
    preds = _prediction_dir(tmp_path, manifest_path, ids)
    (preds / f"{ids[2]}.png").unlink()
    config_path = write_run_config(tmp_path / "config.json")
    code = main(["evaluate", "--manifest", str(manifest_path),
                 "--predictions", str(preds), "--config", str(config_path),
                 "--out", str(tmp_path / "report")])
    assert code == 1
    assert ids[2] in capsys.readouterr().err


# ---------------------------------------------------------------------------
# validate / catalog
# ---------------------------------------------------------------------------

def test_validate_clean_corpus(tmp_path, capsys):
    manifest_path, _ = make_corpus(tmp_path)
    assert main(["validate", "--manifest", str(manifest_path)]) == 0
    assert "0 failing" in capsys.readouterr().out


def test_validate_flags_corrupt_entry(tmp_path, capsys):
    manifest_path, ids = make_corpus(tmp_path)
    (tmp_path / "images" / f"{ids[0]}_x.png").write_bytes(b"junk")
    assert main(["validate", "--manifest", str(manifest_path)]) == 1
    assert f"FAIL {ids[0]}" in capsys.readouterr().out


def test_catalog_prints_twelve_attention_rows(tmp_path, capsys):
    config_path = write_run_config(tmp_path / "config.json")
    assert main(["catalog", "--config", str(config_path)]) == 0
    out = capsys.readouterr().out
    assert out.count("self-attention") == 12
    assert out.count("residual-up") == 6


def test_catalog_with_bad_config_exits_nonzero(tmp_path, capsys):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({"schema_version": "1", "backend": {"kind": "warp"}}))
    assert main(["catalog", "--config", str(config_path)]) == 1
    assert "backend kind" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# RunConfig validation
# ---------------------------------------------------------------------------

def test_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"schema_version": "1", "resolutionn": 64}))
    with pytest.raises(ConfigError, match="resolutionn"):
        RunConfig.load(path)
    path.write_text(json.dumps({"schema_version": "1", "edit": {"stepz": 10}}))
    with pytest.raises(ConfigError, match="stepz"):
        RunConfig.load(path)


def test_config_cross_validates_steps_and_dims(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({
        "schema_version": "1",
        "edit": {"steps": 25},
        "schedule": {"num_steps": 50},
    }))
    with pytest.raises(ConfigError, match="steps"):
        RunConfig.load(path)
    path.write_text(json.dumps({
        "schema_version": "1",
        "clients": {"text_encoder": {"dim": 24}},
        "backend": {"context_dim": 16},
    }))
    with pytest.raises(ConfigError, match="context_dim"):
        RunConfig.load(path)


def test_config_builds_consistent_pipeline(tmp_path):
    config_path = write_run_config(tmp_path / "config.json")
    cfg = RunConfig.load(config_path)
    clients = cfg.build_pipeline_clients()
    assert clients.backend.context_dim == clients.text_encoder.context_dim
    assert cfg.edit_config().steps == clients.schedule.num_steps
    # fresh sessions per call
    assert cfg.build_pipeline_clients().vlm is not clients.vlm


def test_config_seed_override_propagates(tmp_path):
    config_path = write_run_config(tmp_path / "config.json")
    cfg = RunConfig.load(config_path, overrides={"seed": 9})
    assert cfg.seed == 9
    assert cfg.build_backend().seed == 9
    assert np.isfinite(cfg.edit_config().guidance_scale)


def test_env_var_supplies_vlm_endpoint(tmp_path, monkeypatch):
    from exedit.clients import HTTPVLM

    config_path = write_run_config(tmp_path / "config.json",
                                   clients={"vlm": {"kind": "http"}})
    monkeypatch.setenv("EXEDIT_VLM_ENDPOINT", "http://vlm.internal/generate")
    vlm = RunConfig.load(config_path).build_vlm()
    assert isinstance(vlm, HTTPVLM)
    assert vlm.endpoint == "http://vlm.internal/generate"
    monkeypatch.delenv("EXEDIT_VLM_ENDPOINT")
    with pytest.raises(ConfigError, match="endpoint"):
        RunConfig.load(config_path).build_vlm()
