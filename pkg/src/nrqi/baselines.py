"""Reference metrics (CNR, Tenengrad, entropy) and the normalized pre/post difference report."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from .image_io import Image

HIGHER_BETTER = "higher-better"
LOWER_BETTER = "lower-better"

# orientations of every metric name the report understands; NIQE and PIQE
# are not computed here but externally produced values can be merged in
METRIC_ORIENTATION = {
    "qi": HIGHER_BETTER,
    "cnr": HIGHER_BETTER,
    "tenengrad": HIGHER_BETTER,
    "entropy": HIGHER_BETTER,
    "niqe": LOWER_BETTER,
    "piqe": LOWER_BETTER,
}


class UndefinedCNRError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)

    def within(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.w > 0 and self.h > 0 \
            and self.x + self.w <= width and self.y + self.h <= height

    def overlaps(self, other: "Rect") -> bool:
        return not (self.x + self.w <= other.x or other.x + other.w <= self.x
                    or self.y + self.h <= other.y or other.y + other.h <= self.y)


@dataclass(frozen=True)
class RegionSpec:
    """Explicit ROI/background rectangles, or ``mode="auto"`` for an Otsu split."""

    roi: Optional[Rect] = None
    background: Optional[Rect] = None
    mode: str = "auto"

    @classmethod
    def rects(cls, roi, background) -> "RegionSpec":
        return cls(Rect(*roi), Rect(*background), mode="rects")

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "RegionSpec":
        if not d or d.get("mode", "auto") == "auto":
            return cls()
        return cls.rects(d["roi"], d["background"])

    def masks(self, img: Image) -> tuple[np.ndarray, np.ndarray]:
        px = img.pixels
        if self.mode == "auto":
            if px.min() == px.max():
                raise UndefinedCNRError("constant image has no Otsu split")
            t = threshold_otsu(px)
            fg = px > t
            return fg, ~fg
        for r in (self.roi, self.background):
            if not r.within(img.width, img.height):
                raise ValueError(f"region {r} outside {img.width}x{img.height} image")
        if self.roi.overlaps(self.background):
            raise ValueError("roi and background regions overlap")
        roi = np.zeros(px.shape, bool)
        bg = np.zeros(px.shape, bool)
        roi[self.roi.slices()] = True
        bg[self.background.slices()] = True
        return roi, bg


def cnr(img: Image, regions: RegionSpec = RegionSpec()) -> float:
    """``|mean(roi) - mean(bg)| / std(bg)`` with the population std."""
    roi, bg = regions.masks(img)
    bg_vals = img.pixels[bg]
    if bg_vals.size < 2 or roi.sum() == 0:
        raise UndefinedCNRError("CNR needs a non-empty roi and at least 2 background pixels")
    sd = float(np.std(bg_vals))
    if sd == 0.0:
        raise UndefinedCNRError("background standard deviation is zero")
    return float(abs(img.pixels[roi].mean() - bg_vals.mean()) / sd)


def tenengrad(img: Image) -> float:
    """Mean 3x3-Sobel gradient magnitude over interior pixels."""
    px = img.pixels
    if px.shape[0] < 3 or px.shape[1] < 3:
        raise ValueError("tenengrad needs an image of at least 3x3")
    gx = ndimage.sobel(px, axis=1, mode="reflect")[1:-1, 1:-1]
    gy = ndimage.sobel(px, axis=0, mode="reflect")[1:-1, 1:-1]
    return float(np.mean(np.hypot(gx, gy)))


def _value_range(img: Image) -> tuple[float, float]:
    if img.value_range == "normalized":
        return 0.0, 1.0
    if img.value_range == "uint8":
        return 0.0, 256.0
    if img.value_range == "uint16":
        return 0.0, 65536.0
    lo, hi = float(img.pixels.min()), float(img.pixels.max())
    return (lo, hi) if hi > lo else (lo - 0.5, lo + 0.5)


def entropy(img: Image, bins: int = 256) -> float:
    """Shannon entropy (bits) of a histogram over the image's declared value range."""
    counts, _ = np.histogram(img.pixels, bins=bins, range=_value_range(img))
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log2(p)) + 0.0)


@dataclass
class MetricDiff:
    name: str
    orientation: str
    per_frame_diffs: np.ndarray
    median: float
    mean: float
    std: float

    def to_dict(self) -> dict:
        return {"name": self.name, "orientation": self.orientation,
                "per_frame_diffs": [float(v) for v in self.per_frame_diffs],
                "median": self.median, "mean": self.mean, "std": self.std}


@dataclass
class MetricDiffReport:
    metrics: list[MetricDiff]
    skipped: list[dict] = field(default_factory=list)

    def get(self, name: str) -> MetricDiff:
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"metrics": [m.to_dict() for m in self.metrics], "skipped": list(self.skipped)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "median", "mean", "std"])
            for m in self.metrics:
                w.writerow([m.name, repr(m.median), repr(m.mean), repr(m.std)])


def metric_diff_report(pre: Mapping[str, Sequence[float]], post: Mapping[str, Sequence[float]],
                       orientations: Optional[Mapping[str, str]] = None) -> MetricDiffReport:
    """Per-frame ``z(post) - z(pre)`` with z-scores against the pooled pre+post values.

    Lower-better metrics are negated so that improvement is always positive.
    Metrics whose pooled values have zero spread are skipped and listed.
    """
    orientations = {**METRIC_ORIENTATION, **(orientations or {})}
    metrics, skipped = [], []
    for name in pre:
        a = np.asarray(pre[name], dtype=np.float64)
        b = np.asarray(post[name], dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"metric {name!r}: pre/post frame counts differ ({a.size} vs {b.size})")
        orientation = orientations.get(name, HIGHER_BETTER)
        if a.size == 0:
            skipped.append({"name": name, "reason": "no_frames"})
            continue
        pooled = np.concatenate([a, b])
        mu, sd = float(np.mean(pooled)), float(np.std(pooled))
        if sd == 0.0:
            skipped.append({"name": name, "reason": "zero_pooled_std"})
            continue
        diffs = (b - mu) / sd - (a - mu) / sd
        if orientation == LOWER_BETTER:
            diffs = -diffs
        diffs = diffs + 0.0
        metrics.append(MetricDiff(name, orientation, diffs, float(np.median(diffs)),
                                  float(np.mean(diffs)), float(np.std(diffs))))
    return MetricDiffReport(metrics, skipped)
