"""End-to-end orchestration tests on a miniature configuration.

A full run (pretrain, align, tune, eval, trend) executes in well under a
minute at these sizes, so the tests exercise the real artifact contract:
deterministic report bytes, cache reuse across experiment seeds, eval-only
reloads, the ablation matrix, and rendered summaries.
"""

import json

import numpy as np
import pytest
import torch
from PIL import Image

from dynafuse import report as report_mod
from dynafuse.config import parse_config
from dynafuse.errors import CheckpointError, DataIOError
from dynafuse.runner import (FRAMES_GRID, build_model, extract_features,
                             frames_override, make_eval_samples,
                             make_train_samples, run_ablation, run_experiment)
from dynafuse.tasks import gen_relation

TINY = {
    "frames": 4,
    "semantic": {"width": 16, "pretrain_steps": 2, "pretrain_samples": 8},
    "codec": {"width": 8, "pretrain_steps": 2},
    "denoiser": {"base_width": 8, "depth": 1, "channel_multipliers": [2],
                 "pretrain_steps": 2, "pretrain_clips": 8},
    "decoder": {"width": 16, "depth": 1, "heads": 2},
    "fusion": {"projector_hidden": 16},
    "train": {"total_steps": 2, "batch_size": 4, "align_stage": True},
    "align": {"steps": 2, "samples": 8},
    "data": {"train_tasks": ["relation"], "train_per_task": 8,
             "eval_tasks": ["relation", "motion"], "eval_n": 4,
             "motion_frames": 3},
}


def tiny_config(seed=0, **extra):
    overrides = json.loads(json.dumps(TINY))
    for key, value in extra.items():
        if isinstance(value, dict):
            overrides.setdefault(key, {}).update(value)
        else:
            overrides[key] = value
    return parse_config(overrides, seed=seed)


@pytest.fixture(scope="module")
def completed_run(tmp_path_factory):
    wd = tmp_path_factory.mktemp("run_wd")
    cfg = tiny_config()
    report, run_dir = run_experiment(cfg, wd)
    return cfg, wd, report, run_dir


# --- sample construction -------------------------------------------------------


def test_train_samples_counts_and_kinds():
    cfg = tiny_config(data={"train_tasks": ["relation", "claim"], "train_per_task": 6})
    samples = make_train_samples(cfg)
    assert len(samples) == 12
    assert [s.kind for s in samples[:6]] == ["relation"] * 6
    # claim samples score in the view family, so they carry its kind
    assert [s.kind for s in samples[6:]] == ["view"] * 6
    assert all(len(s.images) == 1 for s in samples)


def test_train_samples_deterministic():
    cfg = tiny_config()
    a = make_train_samples(cfg)
    b = make_train_samples(cfg)
    assert [s.question_ids for s in a] == [s.question_ids for s in b]
    assert [s.answer_ids for s in a] == [s.answer_ids for s in b]


def test_train_samples_single_image_motion_form():
    cfg = tiny_config(data={"train_tasks": ["motion"], "train_per_task": 5})
    samples = make_train_samples(cfg)
    assert all(len(s.images) == 1 for s in samples)
    assert all(s.kind == "motion" for s in samples)


def test_eval_samples_shapes():
    cfg = tiny_config()
    groups = make_eval_samples(cfg)
    assert set(groups) == {"relation", "motion"}
    assert all(len(v) == 4 for v in groups.values())
    assert all(len(s.images) == 3 for s in groups["motion"])
    assert all(len(s.images) == 1 for s in groups["relation"])


def test_eval_samples_steered_by_experiment_seed():
    a = make_eval_samples(tiny_config(seed=0))["relation"]
    b = make_eval_samples(tiny_config(seed=1))["relation"]
    assert [s.question_ids for s in a] != [s.question_ids for s in b]


def test_train_and_eval_pools_disjoint_seeds():
    cfg = tiny_config()
    train = make_train_samples(cfg)
    heldout = make_eval_samples(cfg)["relation"]
    train_keys = {tuple(s.question_ids) + (s.scenes[0].objects,) for s in train}
    eval_keys = {tuple(s.question_ids) + (s.scenes[0].objects,) for s in heldout}
    assert not train_keys & eval_keys


# --- frames override ------------------------------------------------------------


def test_frames_override_restores_on_exception(tiny_model):
    before = tiny_model.cfg.t_frames
    with pytest.raises(RuntimeError):
        with frames_override(tiny_model, 14):
            assert tiny_model.cfg.t_frames == 14
            raise RuntimeError("boom")
    assert tiny_model.cfg.t_frames == before


# --- pretraining caches ----------------------------------------------------------


def test_pretrain_cache_shared_across_seeds(tmp_path):
    info0, info1 = {}, {}
    build_model(tiny_config(seed=0), tmp_path, info0)
    build_model(tiny_config(seed=1), tmp_path, info1)
    assert info0["generative_pretrain"]["cached"] is False
    assert info1["generative_pretrain"]["cached"] is True
    assert info1["semantic_pretrain"]["cached"] is True
    assert len(list((tmp_path / "cache").glob("encoders-*.ckpt"))) == 1
    assert len(list((tmp_path / "cache").glob("semantic-*.ckpt"))) == 1


def test_pretrain_cache_reload_bitwise(tmp_path):
    cfg = tiny_config()
    m1 = build_model(cfg, tmp_path)
    m2 = build_model(cfg, tmp_path)
    s1, s2 = m1.state_dict(), m2.state_dict()
    assert set(s1) == set(s2)
    for k in s1:
        assert torch.equal(s1[k], s2[k]), k


def test_pretrain_cache_distinct_for_different_subconfigs(tmp_path):
    build_model(tiny_config(), tmp_path)
    build_model(tiny_config(codec={"pretrain_steps": 3}), tmp_path)
    assert len(list((tmp_path / "cache").glob("encoders-*.ckpt"))) == 2


# --- full runs -------------------------------------------------------------------


def test_report_contract(completed_run):
    cfg, wd, report, run_dir = completed_run
    assert run_dir == wd / "runs" / cfg.fingerprint[:16]
    assert set(report["results"]) == {"relation", "motion"}
    for task, res in report["results"].items():
        assert 0.0 <= res["accuracy"] <= 1.0
        assert res["n"] == 4
        assert 0.0 < res["chance"] < 1.0
    assert report["fingerprint"] == cfg.fingerprint
    assert report["seed"] == 0
    assert set(report["trend"]["frames"]) == {str(f) for f in FRAMES_GRID}
    assert report["stages"]["train"]["steps"] == 2
    assert report["stages"]["align"]["steps"] == 2
    assert report["wall_clock"] == "recorded in runinfo.json"


def test_run_artifacts_exist(completed_run):
    _, _, _, run_dir = completed_run
    for name in ("report.json", "runinfo.json", "model.ckpt",
                 "train_metrics.jsonl", "align_metrics.jsonl"):
        assert (run_dir / name).exists(), name


def test_wall_clock_only_in_sidecar(completed_run):
    _, _, _, run_dir = completed_run
    report = json.loads((run_dir / "report.json").read_text())
    info = json.loads((run_dir / "runinfo.json").read_text())
    assert "seconds" not in json.dumps(report["stages"])
    assert info["total_seconds"] > 0
    assert set(info["stage_seconds"]) >= {"pretrain", "train", "eval"}


def test_metrics_log_schema(completed_run):
    _, _, _, run_dir = completed_run
    records = report_mod.read_jsonl(run_dir / "train_metrics.jsonl")
    assert len(records) == 2
    assert set(records[0]) == {"step", "loss", "lr", "grad_norm", "wall_ms"}
    assert records[0]["step"] == 0 and records[1]["step"] == 1


def test_report_bytes_deterministic(completed_run, tmp_path):
    cfg, _, _, run_dir = completed_run
    _, run_dir2 = run_experiment(tiny_config(), tmp_path)
    a = (run_dir / "report.json").read_bytes()
    b = (run_dir2 / "report.json").read_bytes()
    assert a == b
    assert (run_dir / "model.ckpt").read_bytes() == (run_dir2 / "model.ckpt").read_bytes()


def test_eval_only_reproduces_results(completed_run):
    cfg, wd, report, run_dir = completed_run
    before = (run_dir / "report.json").read_bytes()
    eval_report, _ = run_experiment(cfg, wd, eval_only=True)
    assert (run_dir / "report_eval.json").exists()
    assert eval_report["results"] == report["results"]
    assert eval_report["stages"] == {"align": None, "train": None}
    assert (run_dir / "report.json").read_bytes() == before


def test_eval_only_without_checkpoint_fails(tmp_path):
    cfg = tiny_config(data={"eval_tasks": ["relation"]})
    with pytest.raises(CheckpointError):
        run_experiment(cfg, tmp_path, eval_only=True)


def test_align_stage_skipped_when_disabled(tmp_path):
    cfg = tiny_config(train={"align_stage": False})
    report, run_dir = run_experiment(cfg, tmp_path)
    assert report["stages"]["align"] is None
    assert not (run_dir / "align_metrics.jsonl").exists()


# --- ablation matrix -------------------------------------------------------------


@pytest.fixture(scope="module")
def completed_ablation(tmp_path_factory):
    wd = tmp_path_factory.mktemp("abl_wd")
    overrides = json.loads(json.dumps(TINY))
    overrides["ablation"] = {"encoders": ["vae_only", "svd_only"], "align": [False]}
    overrides["train"]["align_stage"] = False
    summary, path = run_ablation(overrides, wd, seed=0)
    return wd, summary, path


def test_ablation_cells_cover_axes(completed_ablation):
    _, summary, path = completed_ablation
    assert path.name == "ablation_summary.json"
    assert summary["axes"] == {"encoders": ["vae_only", "svd_only"], "align": [False]}
    assert [(c["encoders"], c["align"]) for c in summary["cells"]] == [
        ("vae_only", False), ("svd_only", False)]
    assert len({c["fingerprint"] for c in summary["cells"]}) == 2


def test_ablation_cells_match_run_reports(completed_ablation):
    wd, summary, _ = completed_ablation
    for cell in summary["cells"]:
        report = json.loads((wd / "runs" / cell["run_dir"] / "report.json").read_text())
        assert report["results"] == cell["results"]
        assert report["train_accuracy"] == cell["train_accuracy"]
        assert report["config"]["encoders"] == cell["encoders"]


def test_ablation_shares_generative_cache(completed_ablation):
    wd, _, _ = completed_ablation
    # vae_only and svd_only differ only in which features feed the decoder,
    # so both cells reuse one pretrained codec+denoiser pair
    assert len(list((wd / "cache").glob("encoders-*.ckpt"))) == 1


def test_render_writes_csv_and_figures(completed_ablation):
    wd, summary, _ = completed_ablation
    written = report_mod.render(wd)
    out = wd / "report"
    assert (out / "summary.csv").exists()
    lines = (out / "summary.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + len(summary["cells"])
    assert lines[0].startswith("fingerprint,run_dir,encoders,align,frames")
    names = {p.split("/")[-1] for p in written["figures"]}
    assert "frames_trend.png" in names
    assert "training_loss.png" in names
    assert "ablation_accuracy.png" in names
    for fig in written["figures"]:
        header = open(fig, "rb").read(8)
        assert header == b"\x89PNG\r\n\x1a\n"


def test_render_without_runs_fails(tmp_path):
    with pytest.raises(DataIOError):
        report_mod.render(tmp_path)


# --- feature extraction -----------------------------------------------------------


def _write_pngs(tmp_path, n):
    paths = []
    for i, sample in enumerate(gen_relation(n, seed=5)):
        arr = np.clip(np.round(sample.images[0] * 255), 0, 255).astype(np.uint8)
        p = tmp_path / f"img{i}.png"
        Image.fromarray(arr).save(p)
        paths.append(p)
    return paths


def test_extract_features_npz_contract(tmp_path):
    cfg = tiny_config(frames=8)
    paths = _write_pngs(tmp_path, 3)
    out = tmp_path / "feat.npz"
    header = extract_features(cfg, paths, out, tmp_path / "wd")
    assert header["frames"] == 8
    assert header["keyframe_indices"] == [0, 4, 7]
    with np.load(out) as data:
        assert set(data.files) == {"dynamic", "semantic", "header"}
        stored = json.loads(bytes(data["header"]).decode())
        assert stored == json.loads(json.dumps(header))
        t, hd, wd_ = header["hidden_shape"]
        assert data["dynamic"].shape[0] == t * hd * wd_ == header["rows_dynamic"]
        assert data["semantic"].shape == (header["rows_semantic"], 16)
        assert np.isfinite(data["dynamic"]).all()


def test_extract_features_deterministic(tmp_path):
    cfg = tiny_config(frames=8)
    paths = _write_pngs(tmp_path, 2)
    extract_features(cfg, paths, tmp_path / "a.npz", tmp_path / "wd")
    extract_features(cfg, paths, tmp_path / "b.npz", tmp_path / "wd")
    with np.load(tmp_path / "a.npz") as a, np.load(tmp_path / "b.npz") as b:
        assert np.array_equal(a["dynamic"], b["dynamic"])
        assert np.array_equal(a["semantic"], b["semantic"])


def test_extract_features_missing_image(tmp_path):
    cfg = tiny_config()
    with pytest.raises(DataIOError, match="cannot read image"):
        extract_features(cfg, [tmp_path / "nope.png"], tmp_path / "x.npz", tmp_path / "wd")
