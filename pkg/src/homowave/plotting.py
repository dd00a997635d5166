"""Figures written next to the CSV reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata=_META)
    plt.close(fig)
    return path


def convergence_figures(study, out_dir) -> list[Path]:
    out = Path(out_dir)
    eps = np.array(study.eps)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for e in study.eps:
        errs = study.errors(e)
        ax1.scatter(np.full(errs.size, e), errs, s=8, color="0.6", zorder=1)
    ax1.plot(eps, [study.medians[e] for e in study.eps], "o-", color="C0", label="median D", zorder=2)
    ax1.axhline(study.delta, color="C3", ls="--", lw=1, label=r"$\delta$")
    ax1.set_xscale("log", base=2)
    ax1.set_yscale("log")
    ax1.set_xlabel(r"$\varepsilon$")
    ax1.set_ylabel(r"$\|u_\varepsilon - u_0\|_{L^2(Q_T)}$")
    ax1.legend(frameon=False)
    ax2.plot(eps, [study.exceedance[e] for e in study.eps], "s-", color="C1")
    ax2.set_xscale("log", base=2)
    ax2.set_ylim(-0.05, 1.05)
    ax2.set_xlabel(r"$\varepsilon$")
    ax2.set_ylabel(r"fraction $D > \delta$")
    for ax in (ax1, ax2):
        ax.invert_xaxis()
        ax.grid(True, alpha=0.3)
    paths = [_save(fig, out / "convergence.png")]
    if study.estimates is not None:
        paths += estimate_figures(study.estimates, out)
    return paths


def estimate_figures(est, out_dir) -> list[Path]:
    out = Path(out_dir)
    eps = np.array(est.eps)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for name in ("sup_H1_sq", "sup_L2_sq", "int_H1_v"):
        ax1.plot(eps, [est.estimates[e][name] for e in est.eps], "o-", label=name)
    ax1.set_xscale("log", base=2)
    ax1.invert_xaxis()
    ax1.set_xlabel(r"$\varepsilon$")
    ax1.set_ylabel("Monte Carlo mean")
    ax1.legend(frameon=False, fontsize=8)
    thetas = np.array(est.thetas)
    for e in est.eps:
        ax2.plot(thetas, np.array(est.modulus[e]) / thetas, "o-", label=f"eps={e:g}")
    ax2.set_xscale("log", base=2)
    ax2.set_xlabel(r"$\theta$")
    ax2.set_ylabel(r"modulus$(\theta)/\theta$")
    ax2.legend(frameon=False, fontsize=8)
    for ax in (ax1, ax2):
        ax.grid(True, alpha=0.3)
    return [_save(fig, out / "estimates.png")]


def trajectory_figure(times, columns: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3))
    for label, values in columns.items():
        ax.plot(times, values, label=label)
    ax.set_xlabel("t")
    ax.grid(True, alpha=0.3)
    ax.legend(frameon=False)
    return _save(fig, Path(path))
