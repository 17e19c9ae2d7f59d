import json

import numpy as np
import pytest

from action_region import io
from action_region.exceptions import DataError
from action_region.pipeline import PipelineConfig, StageError, run_pipeline
from action_region.synthetic import write_sequence, SyntheticSequence


def _config(assets, **overrides):
    cfg = PipelineConfig.from_dict({"paths": assets["paths"],
                                    "classifier": {"crop_side": 64}})
    return cfg.with_overrides(overrides) if overrides else cfg


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# ------------------------------------------------------------------ config

def test_config_defaults_round_trip(tmp_path):
    cfg = PipelineConfig()
    cfg.save(tmp_path / "c.json")
    assert PipelineConfig.load(tmp_path / "c.json") == cfg
    assert cfg.abnormality.threshold == 0.5


def test_config_rejects_unknown_keys():
    with pytest.raises(DataError):
        PipelineConfig.from_dict({"bogus": {}})
    with pytest.raises(DataError):
        PipelineConfig.from_dict({"flow": {"bogus": 1}})
    with pytest.raises(DataError):
        PipelineConfig().with_overrides({"flow.bogus": 1})


def test_config_overrides():
    cfg = PipelineConfig().with_overrides({"abnormality.threshold": 0.3, "proposals.scales": [32, 64]})
    assert cfg.abnormality.threshold == 0.3
    assert cfg.proposals.scales == (32, 64)


# ------------------------------------------------------------------ runs

def test_end_to_end_emits_decisions(pipeline_assets, tmp_path):
    out = tmp_path / "out"
    pipe = run_pipeline(_config(pipeline_assets), pipeline_assets["manifests"], out)
    assert pipe.skipped == {}
    lines = (out / "decisions.jsonl").read_text().splitlines()
    assert len(lines) == len(pipeline_assets["manifests"])
    report = json.loads((out / "evaluation.json").read_text())
    assert len(report["records"]) == len(lines)
    seq = out / sorted(p.name for p in out.iterdir() if p.is_dir())[0]
    # every artifact is readable by its module's reader
    assert io.read_flow(seq / "flow" / "fwd_0000.flo").shape == (64, 64, 2)
    assert io.read_boundary_map(seq / "boundary" / "map_0000.pgm").shape == (64, 64)
    assert len(io.read_proposals(seq / "proposals.jsonl")) == 1
    assert io.read_frame(seq / "crops" / "crop_0000.png").shape == (64, 64, 3)
    assert json.loads((out / "config.json").read_text())["classifier"]["crop_side"] == 64


def test_two_runs_are_byte_identical(pipeline_assets, tmp_path):
    for name in ("a", "b"):
        run_pipeline(_config(pipeline_assets), pipeline_assets["manifests"], tmp_path / name)
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_cached_stages_are_skipped(pipeline_assets, tmp_path):
    cfg = _config(pipeline_assets)
    first = run_pipeline(cfg, pipeline_assets["manifests"][:1], tmp_path)
    assert len(first.ran) == 7
    assert run_pipeline(cfg, pipeline_assets["manifests"][:1], tmp_path).ran == []
    assert len(run_pipeline(cfg, pipeline_assets["manifests"][:1], tmp_path, force=True).ran) == 7


def test_unconfigured_models_skip_stages(pipeline_assets, tmp_path):
    pipe = run_pipeline(PipelineConfig(), pipeline_assets["manifests"][:1], tmp_path)
    assert set(pipe.skipped) == {"boundary", "proposals", "crops", "action", "scene", "decision"}
    assert not (tmp_path / "decisions.jsonl").exists()


def test_static_sequence_falls_back_to_full_frame(forest_file, tmp_path):
    frame = np.random.default_rng(0).random((48, 48, 3))
    seq = SyntheticSequence(np.stack([frame, frame]), np.zeros((2, 48, 48), bool),
                            [(0, 0, 48, 48)] * 2, (0, 0), (0, 0))
    manifest = write_sequence(seq, tmp_path / "static")
    cfg = PipelineConfig.from_dict({"paths": {"forest": str(forest_file)}})
    run_pipeline(cfg, [manifest], tmp_path / "out")
    boxes = io.read_proposals(tmp_path / "out" / "static" / "proposals.jsonl")
    assert [(b.x, b.y, b.w, b.h) for b in boxes] == [(0, 0, 48, 48)]
    assert json.loads((tmp_path / "out" / "static" / "no_motion.json").read_text()) == [True]


def test_stage_error_names_the_stage(pipeline_assets, tmp_path):
    cfg = _config(pipeline_assets).with_overrides({"providers.action": "file"})
    with pytest.raises(StageError) as info:
        run_pipeline(cfg, pipeline_assets["manifests"][:1], tmp_path)
    assert info.value.stage == "action"


def test_single_frame_manifest_rejected(tmp_path):
    io.write_frame(tmp_path / "f.png", np.zeros((16, 16, 3)))
    io.SequenceManifest(tmp_path, ["f.png"]).save(tmp_path / "manifest.json")
    with pytest.raises(StageError) as info:
        run_pipeline(PipelineConfig(), [tmp_path / "manifest.json"], tmp_path / "out")
    assert info.value.stage == "load"


def test_literal_prior_option(pipeline_assets, tmp_path):
    cfg = _config(pipeline_assets).with_overrides({"abnormality.literal_prior": True})
    run_pipeline(cfg, pipeline_assets["manifests"][:1], tmp_path)
    decision = json.loads(next(tmp_path.glob("*/decision.json")).read_text())
    assert decision["p_scene_given_action"] in (0.0, 1.0)
