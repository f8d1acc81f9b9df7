"""Figures and delimited summaries rendered from a training log CSV."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _by_phase(rows, key):
    series = defaultdict(lambda: ([], []))
    for r in rows:
        if r.get(key) in (None, ""):
            continue
        xs, ys = series[r["phase"]]
        xs.append(int(r["epoch"]))
        ys.append(float(r[key]))
    return series


def plot_curve(rows, key: str, path, ylabel: str | None = None) -> bool:
    series = _by_phase(rows, key)
    if not series:
        return False
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for phase, (xs, ys) in series.items():
        ax.plot(xs, ys, label=phase, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel or key)
    ax.legend(frameon=False, fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def summarize(rows) -> list[dict]:
    out = []
    for phase in dict.fromkeys(r["phase"] for r in rows):
        sub = [r for r in rows if r["phase"] == phase]
        losses = [float(r["loss"]) for r in sub]
        rewards = [float(r["reward_mean"]) for r in sub if r.get("reward_mean") not in (None, "")]
        out.append({"phase": phase, "epochs": len(sub), "first_loss": losses[0], "last_loss": losses[-1],
                    "min_loss": min(losses),
                    "last_reward": rewards[-1] if rewards else ""})
    return out


def render_report(log_path, out_dir) -> list[Path]:
    """Write loss/reward figures and summary.csv next to each other; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = read_log(log_path)
    if not rows:
        raise ValueError(f"{log_path}: empty training log")
    written = []
    for key, fname, label in (("loss", "loss.png", "training loss"),
                              ("reward_mean", "reward.png", "mean sampled reward"),
                              ("lr_main", "lr.png", "learning rate")):
        if plot_curve(rows, key, out / fname, label):
            written.append(out / fname)
    summary = summarize(rows)
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)
    written.append(out / "summary.csv")
    return written
