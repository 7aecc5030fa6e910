"""Acceptance checks, one labeled PASS/FAIL line per criterion.

Criteria 1-6 and 11 are fast oracles and run in seconds to a couple of
minutes. Criteria 7-10 train real models from the reference configurations
frozen in REFERENCE below; together they dominate the module's runtime
(under an hour on one CPU core, far less with more cores or an accelerator).
Run only the fast ones with:

    pytest tests/test_acceptance.py -k "not trained" -v
"""

import json
import math
import time

import numpy as np
import pytest
import torch

from dynafuse.checkpoint import parameter_checksum, state_tensors
from dynafuse.config import ENCODER_COMBOS, parse_config
from dynafuse.generative import (LatentVideo, NoiseSchedule, euler_step,
                                 keyframe_indices, run_generative_encoder)
from dynafuse.runner import frames_override, run_experiment
from dynafuse.tasks import CHANCE, gen_motion, gen_relation
from dynafuse.training import (FreezePolicy, TrainConfig, clip_gradients,
                               evaluate, lr_at, train_single_stage)

from conftest import build_tiny


def _criterion(num: int, ok: bool, detail: str) -> None:
    print(f"\n[criterion {num:02d}] {'PASS' if ok else 'FAIL'}: {detail}", flush=True)
    assert ok, f"criterion {num:02d} failed: {detail}"


# --- criterion 1: single Euler step against the closed form ----------------------


def test_criterion_01_euler_closed_form():
    t0 = time.perf_counter()
    torch.manual_seed(0)
    z0 = LatentVideo(data=torch.randn(8, 4, 8, 8, dtype=torch.float64))
    a = torch.randn(4, 4, dtype=torch.float64) * 0.3

    def drift(z, sigma):
        return torch.einsum("dc,tchw->tdhw", a, z)

    out = euler_step(z0, NoiseSchedule(sigma0=1.0, dsigma=-0.6), drift)
    expected = z0.data - 0.6 * torch.einsum("dc,tchw->tdhw", a, z0.data)
    err = float((out.data - expected).abs().max())
    dt = time.perf_counter() - t0
    _criterion(1, err <= 1e-6 and dt < 1.0,
               f"linear-drift Euler step max|err|={err:.3e} (<=1e-6), {dt:.2f}s")


# --- criterion 2: keyframe indices against brute force ----------------------------


def test_criterion_02_keyframe_indices_exhaustive():
    t0 = time.perf_counter()
    checked = 0
    worst = None
    for t in range(1, 33):
        for k in range(1, t + 1):
            if k == 1:
                want = [0]
            else:
                pos = [i * (t - 1) / (k - 1) for i in range(k)]
                want = [int(math.floor(p)) + (1 if p - math.floor(p) >= 0.5 else 0)
                        for p in pos]
            got = keyframe_indices(k, t)
            if got != want and worst is None:
                worst = (k, t, got, want)
            checked += 1
    dt = time.perf_counter() - t0
    # 1 <= K <= T <= 32 enumerates 528 pairs, a superset of the 496 K < T cases
    _criterion(2, worst is None and checked == 528 and dt < 1.0,
               f"{checked} (K,T) cases match round(linspace) half-away-from-zero, "
               f"{dt:.2f}s" + (f"; first mismatch {worst}" if worst else ""))


# --- criterion 3: token-count and hidden-shape suite over every encoder combo -----


def test_criterion_03_shape_suite():
    frames, n_sem, failures = 4, 64, []
    samples = gen_motion(2, seed=3, k=3)
    for combo, (variant, source, _) in sorted(ENCODER_COMBOS.items()):
        model = build_tiny(variant=variant, source=source, t_frames=frames)
        clips = model.images_to_clips(samples)
        sem = model.semantic_features(clips)
        dyn = model.dynamic_features(clips)
        visual = model.visual_tokens(sem, dyn)
        if source == "denoiser":
            spec = model.denoiser.spec
            hd = wd = 8 // (2 ** spec.depth)  # 64x64 image -> 8x8 latent
            tokens = run_generative_encoder(model.codec, model.denoiser,
                                            samples[0].images, frames)
            if tuple(tokens.shape) != (frames, hd, wd):
                failures.append(f"{combo}: hidden shape {tokens.shape}")
        else:
            hd = wd = 8 // 2  # one stride-2 conv stage over the latent grid
        expected = (0 if variant == "none" else n_sem) + frames * hd * wd
        if visual.shape[-2] != expected:
            failures.append(f"{combo}: rows {visual.shape[-2]} != {expected}")
    _criterion(3, not failures,
               "rows(V) = N + T*H_d*W_d and hidden shapes hold for all "
               f"{len(ENCODER_COMBOS)} combos" + ("; " + "; ".join(failures)
                                                  if failures else ""))


# --- criterion 4: projector gradients against central finite differences ----------


def test_criterion_04_projector_gradient_check():
    t0 = time.perf_counter()
    model = build_tiny(t_frames=2).double()
    samples = gen_relation(2, seed=11)
    clips = model.images_to_clips(samples).double()
    from dynafuse.decoder import answer_cross_entropy
    from dynafuse.model import collate_streams
    ids, mask = collate_streams(samples)
    visual_len = model.visual_tokens(model.semantic_features(clips),
                                     model.dynamic_features(clips)).shape[-2]

    def loss_fn():
        logits = model(clips, ids)
        return answer_cross_entropy(logits, ids, mask, visual_len)

    params = [(f"semantic_projector.{n}", p) for n, p
              in model.semantic_projector.named_parameters()]
    params += [(f"dynamic_projector.{n}", p) for n, p
               in model.dynamic_projector.named_parameters()]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, [p for _, p in params])
    worst = 0.0
    eps = 1e-5
    rng = np.random.default_rng(0)
    for (name, p), g in zip(params, grads):
        flat = p.data.view(-1)
        idxs = rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False)
        for i in map(int, idxs):
            orig = float(flat[i])
            flat[i] = orig + eps
            hi = float(loss_fn().detach())
            flat[i] = orig - eps
            lo = float(loss_fn().detach())
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            an = float(g.view(-1)[i])
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-9)
            worst = max(worst, rel)
    dt = time.perf_counter() - t0
    _criterion(4, worst <= 1e-5 and dt < 120,
               f"answer-loss grads vs central FD over {len(params)} projector "
               f"tensors: worst rel err {worst:.2e} (<=1e-5), {dt:.1f}s")


# --- criterion 5: freeze policies leave frozen parameters bit-identical -----------


def _checksums(model) -> dict:
    return {group: parameter_checksum(dict(pairs))
            for group, pairs in model.parameter_groups().items() if pairs}


def _train_50(model, policy):
    samples = gen_relation(16, seed=21)
    cfg = TrainConfig(batch_size=4, total_steps=50, peak_lr=1e-3)
    train_single_stage(model, samples, cfg, FreezePolicy(policy), fingerprint="accept")


def test_criterion_05_freeze_exactness():
    model = build_tiny(t_frames=2)
    before = _checksums(model)
    _train_50(model, "frozen_both")
    after = _checksums(model)
    frozen_ok = all(before[g] == after[g] for g in ("codec", "denoiser", "semantic"))
    tuned_ok = before["decoder"] != after["decoder"]

    model2 = build_tiny(t_frames=2)
    before2 = _checksums(model2)
    _train_50(model2, "unet_trainable")
    after2 = _checksums(model2)
    unet_ok = (before2["denoiser"] != after2["denoiser"]
               and before2["codec"] == after2["codec"]
               and before2["semantic"] == after2["semantic"])
    _criterion(5, frozen_ok and tuned_ok and unet_ok,
               "frozen_both: codec/denoiser/semantic checksums unchanged over 50 "
               f"steps ({frozen_ok}); unet_trainable: denoiser changed, codec did "
               f"not ({unet_ok})")


# --- criterion 6: schedule, clipping, and optimizer unit oracles -------------------


def test_criterion_06_schedule_clip_adamw_oracles():
    cfg = TrainConfig()  # table defaults: peak 3e-4, warmup 3%, 1500 steps
    w = cfg.warmup_steps
    sched_ok = (lr_at(0, cfg) == 0.0
                and abs(lr_at(w, cfg) - cfg.peak_lr) < 1e-15
                and lr_at(cfg.total_steps, cfg) == 0.0)

    grads = {"a": torch.tensor([3.0, 4.0], dtype=torch.float64),
             "b": torch.tensor([0.0, 12.0], dtype=torch.float64)}
    clipped = clip_gradients(grads, max_norm=1.0)
    norm = math.sqrt(sum(float((g ** 2).sum()) for g in clipped.values()))
    clip_ok = norm <= 1.0 + 1e-12

    lr, wd, eps = 1e-2, 0.1, 1e-8
    p = torch.nn.Parameter(torch.tensor(1.0, dtype=torch.float64))
    opt = torch.optim.AdamW([p], lr=lr, betas=(0.9, 0.999), eps=eps, weight_decay=wd)
    (0.5 * p ** 2).backward()
    opt.step()
    # hand-derived: decoupled decay, then bias-corrected moment update with g=1
    want = 1.0 * (1 - lr * wd) - lr * 1.0 / (math.sqrt(1.0) + eps)
    adamw_err = abs(float(p.detach()) - want)
    _criterion(6, sched_ok and clip_ok and adamw_err <= 1e-10,
               f"lr_at endpoints (0, peak, 0) {sched_ok}; clipped joint norm "
               f"{norm:.6f} <= 1.0; AdamW scalar step err {adamw_err:.2e} (<=1e-10)")


# --- criterion 11: byte-identical reports, bit-exact checkpoints -------------------

_TINY_RUN = {
    "frames": 4,
    "semantic": {"width": 16, "pretrain_steps": 2, "pretrain_samples": 8},
    "codec": {"width": 8, "pretrain_steps": 2},
    "denoiser": {"base_width": 8, "depth": 1, "channel_multipliers": [2],
                 "pretrain_steps": 2, "pretrain_clips": 8},
    "decoder": {"width": 16, "depth": 1, "heads": 2},
    "fusion": {"projector_hidden": 16},
    "train": {"total_steps": 2, "batch_size": 4},
    "align": {"steps": 2, "samples": 8},
    "data": {"train_tasks": ["relation"], "train_per_task": 8,
             "eval_tasks": ["relation", "motion"], "eval_n": 4,
             "motion_frames": 3},
}


def test_criterion_11_determinism(tmp_path):
    _, dir_a = run_experiment(parse_config(json.loads(json.dumps(_TINY_RUN))),
                              tmp_path / "a")
    _, dir_b = run_experiment(parse_config(json.loads(json.dumps(_TINY_RUN))),
                              tmp_path / "b")
    report_ok = (dir_a / "report.json").read_bytes() == (dir_b / "report.json").read_bytes()
    ckpt_ok = (dir_a / "model.ckpt").read_bytes() == (dir_b / "model.ckpt").read_bytes()

    from dynafuse.checkpoint import load_model, save_model
    from dynafuse.runner import build_model
    cfg = parse_config(json.loads(json.dumps(_TINY_RUN)))
    model = build_model(cfg, tmp_path / "a")
    saved = {k: v.clone() for k, v in state_tensors(model).items()}
    save_model(model, tmp_path / "rt.ckpt", fingerprint=cfg.fingerprint)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(1.0)
    load_model(model, tmp_path / "rt.ckpt")
    round_trip_ok = all(torch.equal(saved[k], v)
                        for k, v in state_tensors(model).items())
    _criterion(11, report_ok and ckpt_ok and round_trip_ok,
               f"two fresh runs byte-identical (report {report_ok}, checkpoint "
               f"{ckpt_ok}); checkpoint round-trip bit-exact ({round_trip_ok})")


# --- trained-model criteria --------------------------------------------------------
#
# One reference configuration, trained from scratch inside the test session.
# Budgets are desk-scale: a run is ~10-20 CPU-minutes; criteria 8 and 9 add
# four more runs that share the pretraining caches. Select them out with
# `-k "not trained"` during development.

REFERENCE_SEED = 1

REFERENCE = {
    "encoders": "text_svd",
    "denoiser": {"pretrain_steps": 600, "pretrain_clips": 384},
    "codec": {"pretrain_steps": 400},
    "semantic": {"pretrain_steps": 250, "pretrain_samples": 768},
    "train": {"total_steps": 2000, "batch_size": 32, "peak_lr": 1e-3},
    "data": {"train_tasks": ["relation", "claim"], "train_per_task": 4096,
             "eval_tasks": ["relation", "counting", "motion", "view"],
             "eval_n": 200, "motion_frames": 6},
}


def _reference_overrides(encoders=None, eval_tasks=None):
    over = json.loads(json.dumps(REFERENCE))
    if encoders is not None:
        over["encoders"] = encoders
    if eval_tasks is not None:
        over["data"]["eval_tasks"] = eval_tasks
    return over


@pytest.fixture(scope="module")
def acceptance_workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance_wd")


@pytest.fixture(scope="module")
def reference_run(acceptance_workdir):
    cfg = parse_config(_reference_overrides(), seed=REFERENCE_SEED)
    t0 = time.perf_counter()
    report, run_dir = run_experiment(cfg, acceptance_workdir)
    minutes = (time.perf_counter() - t0) / 60
    return cfg, report, run_dir, minutes


def test_criterion_07_trained_toy_convergence(reference_run):
    cfg, report, _, minutes = reference_run
    train_acc = report["train_accuracy"]["relation"]
    held = report["results"]["relation"]
    need = held["chance"] + 0.30
    _criterion(7, train_acc >= 0.90 and held["accuracy"] >= need and minutes < 45,
               f"train relation acc {train_acc:.3f} (>=0.90) within "
               f"{cfg['train.total_steps']} steps; held-out {held['accuracy']:.3f} "
               f"(>= chance+30 = {need:.2f}); {minutes:.1f} min CPU (<45)")


@pytest.fixture(scope="module")
def trend_runs(acceptance_workdir, reference_run):
    cfg0, report0, _, _ = reference_run
    rows = [report0["trend"]["frames"]]
    for seed in (REFERENCE_SEED + 1, REFERENCE_SEED + 2):
        cfg = parse_config(_reference_overrides(eval_tasks=["motion"]), seed=seed)
        report, _ = run_experiment(cfg, acceptance_workdir)
        rows.append(report["trend"]["frames"])
    return rows


def test_criterion_08_trained_frame_count_trend(trend_runs):
    means = {f: float(np.mean([r[f] for r in trend_runs])) for f in ("1", "4", "8")}
    monotone = means["1"] <= means["4"] <= means["8"]
    _criterion(8, monotone and means["8"] >= means["1"] + 0.10,
               f"mean motion accuracy over {len(trend_runs)} seeds: "
               f"T=1 {means['1']:.3f} -> T=4 {means['4']:.3f} -> T=8 {means['8']:.3f} "
               f"(non-decreasing, T8 >= T1+0.10); per-seed "
               + "; ".join(f"{r['1']:.2f}->{r['8']:.2f}" for r in trend_runs))


@pytest.fixture(scope="module")
def encoder_comparison(acceptance_workdir):
    accs = {}
    for combo in ("svd_only", "vae_only"):
        cfg = parse_config(_reference_overrides(encoders=combo,
                                               eval_tasks=["motion"]),
                           seed=REFERENCE_SEED)
        report, _ = run_experiment(cfg, acceptance_workdir)
        accs[combo] = report["results"]["motion"]["accuracy"]
    return accs


def test_criterion_09_trained_prediction_features_beat_raw_latents(encoder_comparison):
    svd, vae = encoder_comparison["svd_only"], encoder_comparison["vae_only"]
    _criterion(9, svd >= vae + 0.10,
               f"motion accuracy, identical budgets: denoiser features {svd:.3f} "
               f"vs raw latents {vae:.3f} (needs +0.10)")


def test_criterion_10_trained_zero_shot_multi_image(reference_run, acceptance_workdir):
    from dynafuse.checkpoint import load_model
    from dynafuse.runner import _data_seed, build_model
    from dynafuse.tasks import gen_view, limit_images
    cfg, _, run_dir, _ = reference_run
    model = build_model(cfg, acceptance_workdir)
    load_model(model, run_dir / "model.ckpt")
    ds = _data_seed(cfg)
    motion = limit_images(gen_motion(200, ds + 307, cfg["data.motion_frames"]), 2)
    view = limit_images(gen_view(200, ds + 401), 2)
    with frames_override(model, cfg["frames"]):
        acc_m = evaluate(model, motion).accuracy["motion"]
        acc_v = evaluate(model, view).accuracy["view"]
    need_m, need_v = CHANCE["motion"] + 0.15, CHANCE["view"] + 0.15
    _criterion(10, acc_m >= need_m and acc_v >= need_v,
               f"single-image-trained model, K=2 slotting: motion {acc_m:.3f} "
               f"(>= {need_m:.2f}), view {acc_v:.3f} (>= {need_v:.2f})")
