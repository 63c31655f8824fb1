"""Enhancement pipeline: grayscale normalization, gamma correction, Gaussian filtering."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .image_io import Image

# every convolution in the package uses half-sample symmetric reflection
# (d c b a | a b c d | d c b a)
BORDER_MODE = "reflect"

STEPS_ORDER = ("normalize", "gamma", "gaussian")


@dataclass(frozen=True)
class PreprocessConfig:
    """Settings for :func:`preprocess_pipeline`.

    ``gaussian_sigma=None`` disables the filtering step; ``gamma=1`` is a
    no-op.
    """

    gamma: float = 0.8
    gaussian_sigma: Optional[float] = 1.0
    normalize: bool = True

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.gaussian_sigma is not None and not self.gaussian_sigma > 0:
            raise ValueError(f"gaussian_sigma must be positive, got {self.gaussian_sigma}")

    @property
    def steps_order(self) -> tuple[str, ...]:
        return STEPS_ORDER

    def to_dict(self) -> dict:
        d = asdict(self)
        d["steps_order"] = list(STEPS_ORDER)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        return cls(
            gamma=float(d.get("gamma", cls.gamma)),
            gaussian_sigma=None if d.get("gaussian_sigma", 1.0) is None else float(d.get("gaussian_sigma", 1.0)),
            normalize=bool(d.get("normalize", True)),
        )


def normalize_gray(img: Image) -> Image:
    """Min-max stretch to [0, 1].

    A constant image maps to all zeros and comes back with ``degenerate=True``.
    """
    px = img.pixels
    lo, hi = px.min(), px.max()
    if hi == lo:
        return img.with_pixels(np.zeros_like(px), value_range="normalized", degenerate=True)
    return img.with_pixels((px - lo) / (hi - lo), value_range="normalized")


def gamma_correct(img: Image, gamma: float) -> Image:
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    px = img.pixels
    if px.min() < 0.0 or px.max() > 1.0:
        raise ValueError(f"{img.source_id or 'image'}: gamma correction needs pixels in [0, 1]")
    vr = "normalized" if img.value_range in ("normalized", "float") else img.value_range
    return img.with_pixels(np.power(px, gamma), value_range=vr)


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled, unit-sum Gaussian of radius ``ceil(3*sigma)``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_filter_array(arr: np.ndarray, sigma: float) -> np.ndarray:
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(np.asarray(arr, dtype=np.float64), k, axis=0, mode=BORDER_MODE)
    return ndimage.correlate1d(out, k, axis=1, mode=BORDER_MODE)


def gaussian_filter(img: Image, sigma: float) -> Image:
    """Isotropic Gaussian smoothing as two separable 1-D passes."""
    out = gaussian_filter_array(img.pixels, sigma)
    if img.value_range == "normalized":
        # a convex combination cannot leave [0, 1]; clip only rounding spill
        out = np.clip(out, 0.0, 1.0)
        return img.with_pixels(out)
    return img.with_pixels(out, value_range="float")


def preprocess_pipeline(img: Image, cfg: PreprocessConfig = PreprocessConfig()) -> Image:
    out = img
    if cfg.normalize:
        out = normalize_gray(out)
    if cfg.gamma != 1.0:
        out = gamma_correct(out, cfg.gamma)
    if cfg.gaussian_sigma is not None:
        out = gaussian_filter(out, cfg.gaussian_sigma)
    return out
