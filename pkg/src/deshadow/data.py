"""Paired shadow / shadow-free data handling.

Covers 8-bit PNG I/O, directory-paired dataset indexing, geometrically
synchronized augmentation, and a deterministic synthetic-shadow
generator so the whole pipeline can be exercised without downloading a
benchmark. No shadow masks are read or written anywhere.
"""

import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .filters import gaussian_blur
from .validation import ValidationError, check_image

__all__ = [
    "PairedSample",
    "PairedDirectory",
    "SyntheticShadowSpec",
    "AffineParams",
    "load_png",
    "save_png",
    "load_paired_dir",
    "draw_affine_params",
    "apply_affine",
    "augment",
    "draw_shadow_spec",
    "apply_shadow",
    "synthesize_pair",
    "make_clean_image",
    "generate_synthetic_dataset",
]


def load_png(path):
    """Read an 8-bit PNG as a (C, H, W) float tensor scaled by 1/255."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    return torch.from_numpy(arr.copy())


def save_png(img, path):
    """Write a (C, H, W) float tensor as 8-bit PNG, round-half-up at 255."""
    img = check_image(img, "image", unit_range=False).clamp(0.0, 1.0)
    arr = torch.floor(img * 255.0 + 0.5).to(torch.uint8).numpy()
    if arr.shape[0] == 1:
        pil = Image.fromarray(arr[0], mode="L")
    else:
        pil = Image.fromarray(arr.transpose(1, 2, 0), mode="RGB")
    pil.save(path, format="PNG")


@dataclass
class PairedSample:
    shadow: torch.Tensor
    shadow_free: torch.Tensor
    id: str


@dataclass
class PairedDirectory:
    """Index of a <split>/shadow + <split>/shadow_free directory pair."""

    samples: list
    rejects: list  # (filename, reason) for orphans / unreadable files


def load_paired_dir(root, split):
    """Load filename-matched PNG pairs in deterministic lexicographic order."""
    shadow_dir = os.path.join(root, split, "shadow")
    free_dir = os.path.join(root, split, "shadow_free")
    for d in (shadow_dir, free_dir):
        if not os.path.isdir(d):
            raise ValidationError(f"missing dataset directory: {d}")
    shadow_names = {n for n in os.listdir(shadow_dir) if n.endswith(".png")}
    free_names = {n for n in os.listdir(free_dir) if n.endswith(".png")}
    samples, rejects = [], []
    for name in sorted(shadow_names | free_names):
        if name not in free_names:
            rejects.append((name, "no shadow_free counterpart"))
            continue
        if name not in shadow_names:
            rejects.append((name, "no shadow counterpart"))
            continue
        try:
            shadow = check_image(load_png(os.path.join(shadow_dir, name)), name, min_size=8)
            free = check_image(load_png(os.path.join(free_dir, name)), name, min_size=8)
        except (OSError, ValidationError) as exc:
            rejects.append((name, str(exc)))
            continue
        if shadow.shape != free.shape:
            rejects.append((name, "pair shapes differ"))
            continue
        samples.append(PairedSample(shadow=shadow, shadow_free=free, id=os.path.splitext(name)[0]))
    return PairedDirectory(samples=samples, rejects=rejects)


# --- augmentation ---------------------------------------------------------

MAX_ROT_DEG = 10.0
MAX_TRANSLATE = 0.05
SCALE_RANGE = (0.9, 1.1)


@dataclass
class AffineParams:
    angle_deg: float
    translate_x: float  # fraction of width
    translate_y: float  # fraction of height
    scale: float
    flip: bool

    def is_identity(self):
        return (
            self.angle_deg == 0.0
            and self.translate_x == 0.0
            and self.translate_y == 0.0
            and self.scale == 1.0
        )


def _uniform(generator, lo, hi):
    return lo + (hi - lo) * torch.rand((), generator=generator).item()


def draw_affine_params(generator):
    """Small random affine + horizontal flip (p=0.5)."""
    return AffineParams(
        angle_deg=_uniform(generator, -MAX_ROT_DEG, MAX_ROT_DEG),
        translate_x=_uniform(generator, -MAX_TRANSLATE, MAX_TRANSLATE),
        translate_y=_uniform(generator, -MAX_TRANSLATE, MAX_TRANSLATE),
        scale=_uniform(generator, *SCALE_RANGE),
        flip=torch.rand((), generator=generator).item() < 0.5,
    )


def _affine_resample(img, params):
    theta_rad = torch.tensor(params.angle_deg * torch.pi / 180.0, dtype=torch.float64)
    cos, sin = torch.cos(theta_rad), torch.sin(theta_rad)
    # Inverse map (output -> input) in normalized coords for grid_sample.
    inv_scale = 1.0 / params.scale
    mat = torch.tensor(
        [
            [cos * inv_scale, -sin * inv_scale, 2 * params.translate_x],
            [sin * inv_scale, cos * inv_scale, 2 * params.translate_y],
        ],
        dtype=torch.float32,
    )
    grid = F.affine_grid(mat.unsqueeze(0), (1, *img.shape), align_corners=False)
    out = F.grid_sample(
        img.unsqueeze(0),
        grid,
        mode="bilinear",
        padding_mode="reflection",
        align_corners=False,
    )
    return out.squeeze(0)


def _transform_image(img, params):
    out = img
    if not params.is_identity():
        out = _affine_resample(out, params)
    if params.flip:
        out = torch.flip(out, dims=[-1])
    return out.clamp(0.0, 1.0)


def apply_affine(sample, params):
    """Apply one affine + flip to both images of a pair."""
    return PairedSample(
        shadow=_transform_image(sample.shadow, params),
        shadow_free=_transform_image(sample.shadow_free, params),
        id=sample.id,
    )


def augment(sample, generator):
    """Draw a random transform and apply it identically to both images."""
    return apply_affine(sample, draw_affine_params(generator))


# --- synthetic shadows ----------------------------------------------------


@dataclass
class SyntheticShadowSpec:
    shape: str  # "ellipse" | "polygon"
    attenuation: float  # multiplicative darkening, in (0, 1)
    softness: float  # Gaussian blur sigma of the mask edge, >= 0
    color_shift: tuple  # per-channel multipliers near 1

    def __post_init__(self):
        if self.shape not in ("ellipse", "polygon"):
            raise ValidationError(f"unknown shadow shape: {self.shape!r}")
        if not 0.0 < self.attenuation < 1.0:
            raise ValidationError(f"attenuation must be in (0, 1), got {self.attenuation}")
        if self.softness < 0:
            raise ValidationError(f"softness must be >= 0, got {self.softness}")


def draw_shadow_spec(generator):
    shape = "ellipse" if torch.rand((), generator=generator).item() < 0.5 else "polygon"
    return SyntheticShadowSpec(
        shape=shape,
        attenuation=_uniform(generator, 0.25, 0.7),
        softness=_uniform(generator, 0.0, 3.0),
        color_shift=tuple(_uniform(generator, 0.9, 1.1) for _ in range(3)),
    )


def _coord_grid(h, w):
    ys = torch.arange(h, dtype=torch.float64).reshape(-1, 1).expand(h, w)
    xs = torch.arange(w, dtype=torch.float64).reshape(1, -1).expand(h, w)
    return ys, xs


def _ellipse_mask(h, w, generator):
    ys, xs = _coord_grid(h, w)
    cy = _uniform(generator, 0.2 * h, 0.8 * h)
    cx = _uniform(generator, 0.2 * w, 0.8 * w)
    ry = _uniform(generator, 0.15 * h, 0.45 * h)
    rx = _uniform(generator, 0.15 * w, 0.45 * w)
    theta = _uniform(generator, 0.0, torch.pi)
    dy, dx = ys - cy, xs - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return ((u / rx) ** 2 + (v / ry) ** 2 <= 1.0).to(torch.float64)


def _polygon_mask(h, w, generator):
    # Convex polygon: sorted angles around a random center.
    n = int(_uniform(generator, 3.0, 7.0))
    cy = _uniform(generator, 0.3 * h, 0.7 * h)
    cx = _uniform(generator, 0.3 * w, 0.7 * w)
    angles = sorted(_uniform(generator, 0.0, 2 * torch.pi) for _ in range(n))
    radius = _uniform(generator, 0.2, 0.45) * min(h, w)
    pts = [(cy + radius * np.sin(a), cx + radius * np.cos(a)) for a in angles]
    ys, xs = _coord_grid(h, w)
    inside = torch.ones(h, w, dtype=torch.bool)
    for i in range(len(pts)):
        y0, x0 = pts[i]
        y1, x1 = pts[(i + 1) % len(pts)]
        # Half-plane test: points must lie left of every edge.
        cross = (x1 - x0) * (ys - y0) - (y1 - y0) * (xs - x0)
        inside &= cross >= 0
    return inside.to(torch.float64)


def _rasterize_mask(spec, h, w, generator):
    if spec.shape == "ellipse":
        mask = _ellipse_mask(h, w, generator)
    else:
        mask = _polygon_mask(h, w, generator)
    if spec.softness > 0:
        mask = gaussian_blur(mask.unsqueeze(0), spec.softness).squeeze(0)
    return mask.clamp(0.0, 1.0)


def apply_shadow(clean, mask, spec):
    """Darken `clean` under `mask`: clean * (1 - m * (1 - attenuation) * shift)."""
    shift = torch.tensor(spec.color_shift, dtype=clean.dtype).view(-1, 1, 1)
    factor = 1.0 - mask.to(clean.dtype).unsqueeze(0) * (1.0 - spec.attenuation) * shift
    return (clean * factor).clamp(0.0, 1.0)


def synthesize_pair(clean, spec, generator, sample_id="synthetic"):
    """Rasterize a soft shadow from `spec` and darken a clean image with it."""
    clean = check_image(clean, "clean", channels=(3,))
    _, h, w = clean.shape
    mask = _rasterize_mask(spec, h, w, generator)
    return PairedSample(shadow=apply_shadow(clean, mask, spec), shadow_free=clean, id=sample_id)


def make_clean_image(size, generator):
    """Procedural clean image: gradient + smooth noise + a few rectangles.

    Rectangles include deliberately dark ones so that low reflectance
    and cast shadows are not trivially separable.
    """
    h = w = size
    ys, xs = _coord_grid(h, w)
    c0 = torch.rand(3, generator=generator, dtype=torch.float64)
    c1 = torch.rand(3, generator=generator, dtype=torch.float64)
    t = (xs / max(w - 1, 1) + ys / max(h - 1, 1)) / 2.0
    img = c0.view(3, 1, 1) + (c1 - c0).view(3, 1, 1) * t

    # Smooth "Perlin-like" field: bilinear upsampling of a coarse grid.
    coarse = torch.rand(1, 3, 8, 8, generator=generator, dtype=torch.float64)
    field = F.interpolate(coarse, size=(h, w), mode="bilinear", align_corners=False)[0]
    img = img + 0.3 * (field - 0.5)

    n_rects = int(_uniform(generator, 2.0, 6.0))
    for _ in range(n_rects):
        rh = int(_uniform(generator, 0.1, 0.4) * h)
        rw = int(_uniform(generator, 0.1, 0.4) * w)
        ry = int(_uniform(generator, 0.0, 1.0) * (h - rh))
        rx = int(_uniform(generator, 0.0, 1.0) * (w - rw))
        color = torch.rand(3, generator=generator, dtype=torch.float64)
        if torch.rand((), generator=generator).item() < 0.4:
            color = color * 0.3  # dark distractor, easily mistaken for shadow
        alpha = _uniform(generator, 0.6, 1.0)
        patch = img[:, ry : ry + rh, rx : rx + rw]
        img[:, ry : ry + rh, rx : rx + rw] = (1 - alpha) * patch + alpha * color.view(3, 1, 1)
    return img.clamp(0.0, 1.0).to(torch.float32)


def generate_synthetic_dataset(root, count, size, seed, test_count=0):
    """Emit deterministic PNG pairs under root/{train,test}/... plus a manifest.

    Returns the manifest rows: (id, split, shape, attenuation, softness,
    color_shift, seed).
    """
    rows = []
    for split, n, base in (("train", count, 0), ("test", test_count, count)):
        if n <= 0:
            continue
        shadow_dir = os.path.join(root, split, "shadow")
        free_dir = os.path.join(root, split, "shadow_free")
        os.makedirs(shadow_dir, exist_ok=True)
        os.makedirs(free_dir, exist_ok=True)
        for i in range(n):
            pair_seed = seed + base + i
            g = torch.Generator().manual_seed(pair_seed)
            clean = make_clean_image(size, g)
            spec = draw_shadow_spec(g)
            sample_id = f"{split}_{i:05d}"
            pair = synthesize_pair(clean, spec, g, sample_id=sample_id)
            save_png(pair.shadow, os.path.join(shadow_dir, sample_id + ".png"))
            save_png(pair.shadow_free, os.path.join(free_dir, sample_id + ".png"))
            rows.append(
                (
                    sample_id,
                    split,
                    spec.shape,
                    f"{spec.attenuation:.6f}",
                    f"{spec.softness:.6f}",
                    ",".join(f"{s:.6f}" for s in spec.color_shift),
                    str(pair_seed),
                )
            )
    manifest = os.path.join(root, "manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write("id\tsplit\tshape\tattenuation\tsoftness\tcolor_shift\tseed\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")
    return rows
