"""Training-time image transforms and bilinear resizing.

Images are (3, H, W) float arrays with values in [0, 1]; every transform
clamps its output back into that range and leaves its input untouched.
All randomness comes from an explicit Rng, so a fixed seed reproduces the
whole pipeline bit for bit.

The training pipeline applies crop, erasing, flip, color jitter, and a
per-image RGB principal-component shift once at the largest configured
scale, then resizes the one augmented result to every branch resolution.
Evaluation resizes only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ConfigError, DimensionError
from .rng import Rng

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class AugmentConfig:
    crop_padding: int = 8
    erase_probability: float = 0.5
    erase_area: tuple = (0.02, 0.4)
    erase_aspect: tuple = (0.3, 3.33)
    flip_probability: float = 0.5
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    pca_sigma: float = 0.1

    def __post_init__(self):
        if self.crop_padding < 0:
            raise ConfigError("crop_padding must be non-negative")
        for name in ("erase_probability", "flip_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0,1], got {v}")
        lo, hi = self.erase_area
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError(f"erase_area must sit inside (0,1), got {self.erase_area}")
        alo, ahi = self.erase_aspect
        if not (0.0 < alo <= ahi):
            raise ConfigError(f"erase_aspect must be positive, got {self.erase_aspect}")
        for name in ("brightness", "contrast", "saturation", "pca_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        """Identity configuration: every transform becomes a no-op."""
        return cls(crop_padding=0, erase_probability=0.0, flip_probability=0.0,
                   brightness=0.0, contrast=0.0, saturation=0.0, pca_sigma=0.0)


def validate_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[0] != 3:
        raise DimensionError(f"image buffers are (3,H,W), got {img.shape}")
    if not np.isfinite(img).all():
        raise DimensionError("image holds non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DimensionError("image values fall outside [0,1]")


def random_crop(img: np.ndarray, padding: int, rng: Rng) -> np.ndarray:
    """Zero-pad by `padding` on all sides, crop back to the original size
    at a uniformly random offset."""
    _, h, w = img.shape
    oy, ox = rng.integers(0, 2 * padding + 1, 2)
    if padding == 0:
        return img.copy()
    padded = np.pad(img, ((0, 0), (padding, padding), (padding, padding)))
    return padded[:, oy:oy + h, ox:ox + w].copy()


def random_flip(img: np.ndarray, p: float, rng: Rng) -> np.ndarray:
    if rng.random() < p:
        return img[:, :, ::-1].copy()
    return img.copy()


def random_erasing(img: np.ndarray, config: AugmentConfig, rng: Rng) -> np.ndarray:
    """Overwrite one random rectangle with per-pixel uniform noise.

    Fires with probability erase_probability. The rectangle's area
    fraction and aspect ratio are drawn uniformly from the configured
    ranges; draws that do not fit (after integer rounding) are retried up
    to 10 times, then the image passes through unchanged.
    """
    out = img.copy()
    if rng.random() >= config.erase_probability:
        return out
    c, h, w = img.shape
    area = h * w
    lo, hi = config.erase_area
    for _ in range(10):
        frac = rng.uniform(lo, hi)
        aspect = rng.uniform(*config.erase_aspect)
        eh = int(round(np.sqrt(frac * area * aspect)))
        ew = int(round(np.sqrt(frac * area / aspect)))
        if eh < 1 or ew < 1 or eh > h or ew > w:
            continue
        if not lo <= (eh * ew) / area <= hi:
            continue  # integer rounding pushed the area out of range
        oy = int(rng.integers(0, h - eh + 1))
        ox = int(rng.integers(0, w - ew + 1))
        out[:, oy:oy + eh, ox:ox + ew] = rng.random((c, eh, ew)).astype(img.dtype)
        return out
    return out


def _grayscale(img: np.ndarray) -> np.ndarray:
    return np.tensordot(_LUMA, img, axes=(0, 0))


def color_jitter(img: np.ndarray, config: AugmentConfig, rng: Rng) -> np.ndarray:
    """Brightness, contrast, and saturation shifts in a random order.

    Each factor is 1+u with u uniform in [-delta, +delta]; contrast
    blends toward the mean luminance, saturation toward the per-pixel
    grayscale. Values clamp to [0,1] after every step.
    """
    factors = {
        "brightness": 1.0 + rng.uniform(-config.brightness, config.brightness),
        "contrast": 1.0 + rng.uniform(-config.contrast, config.contrast),
        "saturation": 1.0 + rng.uniform(-config.saturation, config.saturation),
    }
    names = ("brightness", "contrast", "saturation")
    out = img.astype(np.float64)
    for i in rng.permutation(3):
        name = names[i]
        f = factors[name]
        if name == "brightness":
            out = out * f
        elif name == "contrast":
            out = f * out + (1.0 - f) * _grayscale(out).mean()
        else:
            out = f * out + (1.0 - f) * _grayscale(out)[None]
        out = np.clip(out, 0.0, 1.0)
    return out.astype(img.dtype)


def rgb_covariance_eig(img: np.ndarray):
    """Eigenvalues and eigenvectors of this image's RGB covariance."""
    flat = img.reshape(3, -1).astype(np.float64)
    cov = np.cov(flat) if flat.shape[1] > 1 else np.zeros((3, 3))
    evals, evecs = np.linalg.eigh(cov)
    return evals, evecs


def color_pca_augment(img: np.ndarray, sigma: float, rng: Rng) -> np.ndarray:
    """Shift every pixel by sum_i alpha_i * lambda_i * e_i, the classic
    principal-component color shift, with alpha_i ~ Normal(0, sigma).

    A constant image has zero covariance, so it passes through unchanged.
    """
    if sigma == 0:
        return img.copy()
    alphas = rng.normal(0.0, sigma, 3)
    evals, evecs = rgb_covariance_eig(img)
    shift = evecs @ (alphas * evals)
    out = np.clip(img.astype(np.float64) + shift[:, None, None], 0.0, 1.0)
    return out.astype(img.dtype)


def resize_bilinear(img: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Bilinear resize sampling at pixel centers (align-corners false),
    with edge replication at the borders."""
    if target_h < 1 or target_w < 1:
        raise DimensionError(f"resize target must be positive, got {target_h}x{target_w}")
    _, h, w = img.shape
    if (h, w) == (target_h, target_w):
        return img.copy()
    ys = (np.arange(target_h) + 0.5) * (h / target_h) - 0.5
    xs = (np.arange(target_w) + 0.5) * (w / target_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    fy = fy[:, None]
    fx = fx[None, :]
    top = img[:, y0c[:, None], x0c[None, :]] * (1 - fx) + img[:, y0c[:, None], x1c[None, :]] * fx
    bot = img[:, y1c[:, None], x0c[None, :]] * (1 - fx) + img[:, y1c[:, None], x1c[None, :]] * fx
    out = top * (1 - fy) + bot * fy
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def compose_pipeline(img: np.ndarray, config: AugmentConfig, scales, rng: Rng):
    """Augment once at the largest configured scale, then resize the one
    result to every scale. Returns a list of images in scale order."""
    scales = [tuple(s) for s in scales]
    target = max(scales, key=lambda s: s[0] * s[1])
    base = resize_bilinear(img, *target)
    x = random_crop(base, config.crop_padding, rng.split("crop"))
    x = random_erasing(x, config, rng.split("erase"))
    x = random_flip(x, config.flip_probability, rng.split("flip"))
    x = color_jitter(x, config, rng.split("jitter"))
    x = color_pca_augment(x, config.pca_sigma, rng.split("pca"))
    return [resize_bilinear(x, h, w) for h, w in scales]


def resize_for_scales(img: np.ndarray, scales):
    """Evaluation path: plain resizes, no augmentation."""
    return [resize_bilinear(img, h, w) for h, w in scales]


# ---------------------------------------------------------------------------
# 8-bit PNG I/O, values mapped linearly to [0,1]
# ---------------------------------------------------------------------------

def save_png(path, img: np.ndarray) -> None:
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return (arr.transpose(2, 0, 1) / 255.0).astype(np.float32)
