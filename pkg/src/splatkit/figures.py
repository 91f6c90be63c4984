"""Matplotlib figures rendered next to the delimited report outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import EvalReport


def save_loss_curves(log: list[dict], path: str | Path) -> None:
    """Loss-term trajectories plus the Gaussian-count curve."""
    if not log:
        return
    iters = [r["iteration"] for r in log]
    fig, (ax, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for key, label in [("total", "total"), ("L_c", "color"), ("L_d", "depth"),
                       ("L_dp", "pseudo depth"), ("L_cp", "pseudo color")]:
        ax.plot(iters, [r[key] for r in log], label=label, linewidth=1)
    ax.set_yscale("log")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8, ncol=3)
    ax2.plot(iters, [r["n_gaussians"] for r in log], color="tab:green", linewidth=1)
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("gaussians")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def save_eval_chart(report: EvalReport, path: str | Path) -> None:
    """Per-view PSNR / SSIM bars with the mean overlaid."""
    if not report.views:
        return
    ids = [v.cam_id for v in report.views]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.bar(ids, [v.psnr_db for v in report.views], color="tab:blue")
    ax1.axhline(report.mean_psnr_db, color="k", linestyle="--", linewidth=1,
                label=f"mean {report.mean_psnr_db:.2f} dB")
    ax1.set_ylabel("PSNR (dB)")
    ax1.legend(fontsize=8)
    ax2.bar(ids, [v.ssim for v in report.views], color="tab:orange")
    ax2.axhline(report.mean_ssim, color="k", linestyle="--", linewidth=1,
                label=f"mean {report.mean_ssim:.3f}")
    ax2.set_ylabel("SSIM")
    ax2.legend(fontsize=8)
    for ax in (ax1, ax2):
        ax.tick_params(axis="x", rotation=45, labelsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
