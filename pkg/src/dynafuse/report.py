"""Report serialization and rendering.

`write_json_atomic` gives byte-deterministic reports: canonical key order,
fixed float formatting via round-tripped JSON, temp-file + rename so readers
never observe partial writes. `render` turns a workdir's reports into a
summary CSV plus PNG figures (frames trend, ablation bars, training loss).
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataIOError  # noqa: E402


def write_json_atomic(obj: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_jsonl(records: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_reports(workdir: str | Path) -> list[dict]:
    runs = Path(workdir) / "runs"
    if not runs.is_dir():
        raise DataIOError(f"no runs directory under {workdir}")
    reports = []
    for report_path in sorted(runs.glob("*/report.json")):
        with open(report_path) as fh:
            rep = json.load(fh)
        rep["_run_dir"] = report_path.parent.name
        reports.append(rep)
    if not reports:
        raise DataIOError(f"no reports found under {runs}")
    return reports


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def summary_rows(reports: list[dict]) -> tuple[list[str], list[list[str]]]:
    tasks = sorted({t for rep in reports for t in rep.get("results", {})})
    header = ["fingerprint", "run_dir", "encoders", "align", "frames", "freeze", "seed",
              "train_acc_mean"]
    for t in tasks:
        header += [f"{t}_acc", f"{t}_chance"]
    rows = []
    for rep in sorted(reports, key=lambda r: r["fingerprint"]):
        cfg = rep["config"]
        train_acc = rep.get("train_accuracy", {})
        mean_train = (sum(train_acc.values()) / len(train_acc)) if train_acc else 0.0
        row = [rep["fingerprint"][:16], rep.get("_run_dir", ""), cfg["encoders"],
               cfg["train"]["align_stage"], cfg["frames"], cfg["freeze"], rep["seed"],
               mean_train]
        for t in tasks:
            res = rep["results"].get(t)
            row += [res["accuracy"] if res else "", res["chance"] if res else ""]
        rows.append([_fmt(x) for x in row])
    return header, rows


def write_summary_csv(reports: list[dict], path: str | Path) -> None:
    header, rows = summary_rows(reports)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _figure_frames_trend(reports: list[dict], path: Path) -> bool:
    trended = [r for r in reports if r.get("trend", {}).get("frames")]
    if not trended:
        return False
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for rep in trended:
        rows = rep["trend"]["frames"]
        frames = sorted(int(k) for k in rows)
        label = f"{rep['config']['encoders']} seed={rep['seed']}"
        ax.plot(frames, [rows[str(f)] for f in frames], marker="o", label=label)
    chance = None
    for rep in trended:
        chance = rep["results"].get("motion", {}).get("chance")
        if chance is not None:
            break
    if chance is not None:
        ax.axhline(chance, color="gray", linestyle="--", linewidth=1, label="chance")
    ax.set_xlabel("latent frames T")
    ax.set_ylabel("motion accuracy")
    ax.set_title("Motion accuracy vs frame count")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def _figure_ablation(reports: list[dict], path: Path) -> bool:
    cells: dict[tuple[str, bool], float] = {}
    for rep in reports:
        results = rep.get("results", {})
        if not results:
            continue
        mean_acc = sum(r["accuracy"] for r in results.values()) / len(results)
        key = (rep["config"]["encoders"], rep["config"]["train"]["align_stage"])
        cells[key] = mean_acc
    if len(cells) < 2:
        return False
    combos = sorted({k[0] for k in cells})
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.38
    xs = range(len(combos))
    for shift, align in ((-width / 2, False), (width / 2, True)):
        vals = [cells.get((c, align), 0.0) for c in combos]
        ax.bar([x + shift for x in xs], vals, width, label=f"align={align}")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(combos, rotation=30, ha="right", fontsize=7)
    ax.set_ylabel("mean eval accuracy")
    ax.set_title("Encoder combinations")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def _figure_loss(workdir: Path, reports: list[dict], path: Path) -> bool:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    plotted = False
    for rep in reports:
        metrics = workdir / "runs" / rep["_run_dir"] / "train_metrics.jsonl"
        if not metrics.exists():
            continue
        records = read_jsonl(metrics)
        ax.plot([r["step"] for r in records], [r["loss"] for r in records],
                linewidth=0.8, label=rep["fingerprint"][:8])
        plotted = True
    if not plotted:
        plt.close(fig)
        return False
    ax.set_xlabel("step")
    ax.set_ylabel("answer cross-entropy")
    ax.set_title("Training loss")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def render(workdir: str | Path, out_dir: str | Path | None = None) -> dict:
    """Write summary.csv and figures for every report under `workdir`."""
    workdir = Path(workdir)
    out = Path(out_dir) if out_dir else workdir / "report"
    out.mkdir(parents=True, exist_ok=True)
    reports = load_reports(workdir)
    write_summary_csv(reports, out / "summary.csv")
    written = {"summary_csv": str(out / "summary.csv"), "figures": []}
    for name, fn in (("frames_trend.png", lambda p: _figure_frames_trend(reports, p)),
                     ("ablation_accuracy.png", lambda p: _figure_ablation(reports, p)),
                     ("training_loss.png", lambda p: _figure_loss(workdir, reports, p))):
        if fn(out / name):
            written["figures"].append(str(out / name))
    return written
