"""Quantitative evaluation: PSNR and SSIM over matched image directories.

SSIM reuses the loss module's windowed map so the training loss and the
reported metric cannot drift apart. PSNR is computed over all channels;
identical images report an infinity sentinel.
"""

import math
import os
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .data import load_png
from .losses import SSIMParams, ssim_map
from .validation import ValidationError, check_image, check_same_shape

__all__ = ["ImageScore", "EvalReport", "psnr", "ssim", "evaluate_dir", "write_report_tsv"]


@dataclass
class ImageScore:
    id: str
    psnr_db: float
    ssim: float


@dataclass
class EvalReport:
    per_image: list
    mean_psnr: float
    mean_ssim: float
    config: dict = field(default_factory=dict)
    rejects: list = field(default_factory=list)


def psnr(a, b):
    """Peak signal-to-noise ratio in dB at dynamic range 1; inf for equality."""
    check_same_shape(a, b, "a", "b")
    mse = float((a.double() - b.double()).pow(2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a, b, params=None):
    """Mean of the windowed SSIM map (luminance-based)."""
    return float(ssim_map(a, b, params or SSIMParams()).mean())


def _resize(img, resolution):
    if resolution <= 0 or img.shape[-2:] == (resolution, resolution):
        return img
    out = F.interpolate(
        img.unsqueeze(0), size=(resolution, resolution), mode="bilinear", align_corners=False
    )
    return out.squeeze(0)


def evaluate_dir(pred_dir, gt_dir, resolution=0, config=None):
    """Score filename-matched PNGs; orphans are recorded and excluded.

    resolution > 0 resizes both images bilinearly before scoring,
    matching fixed-resolution evaluation protocols.
    """
    for d in (pred_dir, gt_dir):
        if not os.path.isdir(d):
            raise ValidationError(f"not a directory: {d}")
    pred_names = {n for n in os.listdir(pred_dir) if n.endswith(".png")}
    gt_names = {n for n in os.listdir(gt_dir) if n.endswith(".png")}
    scores, rejects = [], []
    for name in sorted(pred_names | gt_names):
        if name not in gt_names:
            rejects.append((name, "missing ground truth"))
            continue
        if name not in pred_names:
            rejects.append((name, "missing prediction"))
            continue
        pred = check_image(load_png(os.path.join(pred_dir, name)), name)
        gt = check_image(load_png(os.path.join(gt_dir, name)), name)
        if pred.shape != gt.shape and resolution <= 0:
            rejects.append((name, "pair shapes differ"))
            continue
        pred = _resize(pred, resolution)
        gt = _resize(gt, resolution)
        scores.append(
            ImageScore(id=os.path.splitext(name)[0], psnr_db=psnr(pred, gt), ssim=ssim(pred, gt))
        )
    if scores:
        mean_psnr = sum(s.psnr_db for s in scores) / len(scores)
        mean_ssim = sum(s.ssim for s in scores) / len(scores)
    else:
        mean_psnr = mean_ssim = float("nan")
    snapshot = dict(config or {})
    snapshot.update({"pred_dir": pred_dir, "gt_dir": gt_dir, "resolution": resolution})
    return EvalReport(
        per_image=scores,
        mean_psnr=mean_psnr,
        mean_ssim=mean_ssim,
        config=snapshot,
        rejects=rejects,
    )


def _fmt(x):
    if math.isinf(x):
        return "inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.6f}"


def write_report_tsv(report, path):
    """UTF-8 TSV: comment lines for config/rejects, header, rows, mean row."""
    lines = []
    for key in sorted(report.config):
        lines.append(f"# {key}={report.config[key]}")
    for name, reason in report.rejects:
        lines.append(f"# orphan: {name} ({reason})")
    lines.append("id\tpsnr_db\tssim")
    for s in report.per_image:
        lines.append(f"{s.id}\t{_fmt(s.psnr_db)}\t{_fmt(s.ssim)}")
    lines.append(f"mean\t{_fmt(report.mean_psnr)}\t{_fmt(report.mean_ssim)}")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path
