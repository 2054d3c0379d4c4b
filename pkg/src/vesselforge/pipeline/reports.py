"""Run summaries: plot-ready tables (emit_reports) and optional PNG figures (render_figures)."""

from __future__ import annotations

import csv
import json
import shutil
from pathlib import Path

from .runner import sha256_file

REPORT_DIR = "reports"
FIGURE_DIR = "figures"

# report file -> (source artifact, producing stage)
_COPIES = {
    "metrics.csv": ("evaluate/metrics.csv", "evaluate"),
    "loss_seg.csv": ("train/loss_seg.csv", "train"),
    "loss_deform.csv": ("deform/loss_deform.csv", "deform"),
}
_QUALITY = {"reconstructed": "reconstruct/quality.json", "deformed": "deform/quality.json"}


def emit_reports(run_dir):
    """Gather the run's tables into ``run_dir/reports`` and describe what is missing.

    Writes metrics.csv, loss_seg.csv, loss_deform.csv and quality.json when
    their source stage output exists, plus summary.json listing present and
    missing reports.  Returns the summary with a ``hashes`` map added.
    """
    run_dir = Path(run_dir)
    rep = run_dir / REPORT_DIR
    rep.mkdir(parents=True, exist_ok=True)
    present, missing = [], {}
    for name, (src, stage) in _COPIES.items():
        dst = rep / name
        if (run_dir / src).exists():
            shutil.copyfile(run_dir / src, dst)
            present.append(name)
        else:
            if dst.exists():
                dst.unlink()
            missing[name] = f"no {stage} stage output ({src})"
    quality = {}
    for key, src in _QUALITY.items():
        if (run_dir / src).exists():
            with open(run_dir / src) as fh:
                quality[key] = json.load(fh)
    qpath = rep / "quality.json"
    if quality:
        with open(qpath, "w") as fh:
            json.dump(quality, fh, indent=1, sort_keys=True)
            fh.write("\n")
        present.append("quality.json")
        for key, src in _QUALITY.items():
            if key not in quality:
                missing[f"quality.json:{key}"] = f"no {src.split('/')[0]} stage output ({src})"
    else:
        if qpath.exists():
            qpath.unlink()
        missing["quality.json"] = "no reconstruct or deform stage output"
    summary = {"present": sorted(present), "missing": missing}
    with open(rep / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    hashes = {f"{REPORT_DIR}/{n}": sha256_file(rep / n) for n in sorted(present) + ["summary.json"]}
    return {**summary, "hashes": hashes}


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_figures(run_dir):
    """Render loss curves, metric bars, STD-vs-SNR and a mid-slice overlay as PNG files.

    Figures are written to ``run_dir/figures`` and are not part of the
    manifest; only sources that exist are plotted.  Returns the written paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    from ..volume import load_volume

    run_dir = Path(run_dir)
    fig_dir = run_dir / FIGURE_DIR
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def save(fig, name):
        path = fig_dir / name
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

    rep = run_dir / REPORT_DIR
    if (rep / "loss_seg.csv").exists():
        rows = _read_csv(rep / "loss_seg.csv")
        fig, ax = plt.subplots(figsize=(6, 4))
        ep = [int(r["epoch"]) for r in rows]
        for key in ("total", "dice", "nll", "kl"):
            ax.plot(ep, [float(r[key]) for r in rows], label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title("segmentation training")
        ax.legend()
        save(fig, "loss_seg.png")
    if (rep / "loss_deform.csv").exists():
        rows = _read_csv(rep / "loss_deform.csv")
        fig, ax = plt.subplots(figsize=(6, 4))
        ep = [int(r["epoch"]) for r in rows]
        for key in ("total", "misalign"):
            ax.plot(ep, [float(r[key]) for r in rows], label=key)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title("surface deformation")
        ax.legend()
        save(fig, "loss_deform.png")
    if (rep / "metrics.csv").exists():
        rows = _read_csv(rep / "metrics.csv")
        dist = [r for r in rows if r["metric"].startswith(("asd", "hausdorff"))]
        if dist:
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.bar([r["metric"] for r in dist], [float(r["value"]) for r in dist])
            ax.set_ylabel("mm")
            ax.tick_params(axis="x", rotation=30)
            ax.set_title("surface distances to ground truth")
            save(fig, "surface_metrics.png")
    side = run_dir / "evaluate" / "std_sidecar.csv"
    if side.exists():
        rows = _read_csv(side)
        snr = np.array([float(r["snr"]) for r in rows])
        std = np.array([float(r["std_mm"]) for r in rows])
        keep = (std > 0) & (snr < 1e6)
        if keep.sum() >= 3:
            x, y = snr[keep], np.log10(std[keep])
            slope, icpt = np.polyfit(x, y, 1)
            fig, ax = plt.subplots(figsize=(6, 4))
            ax.scatter(x, y, s=4, alpha=0.4)
            xs = np.linspace(x.min(), x.max(), 2)
            ax.plot(xs, slope * xs + icpt, color="k", label=f"slope {slope:.3f}")
            ax.set_xlabel("local SNR")
            ax.set_ylabel("log10 surface STD (mm)")
            ax.legend()
            save(fig, "std_vs_snr.png")
    img_p, prob_p = run_dir / "phantom" / "image.nrrd", run_dir / "segment" / "prob_mean.nrrd"
    if img_p.exists():
        img = load_volume(img_p)
        k = img.dims[2] // 2
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.imshow(img.data[:, :, k].T, cmap="gray", origin="lower")
        if prob_p.exists():
            prob = load_volume(prob_p)
            ax.contour(prob.data[:, :, k].T, levels=[0.5], colors="r", linewidths=1)
        ax.set_title(f"slice z={k}")
        save(fig, "slice.png")
    return written
