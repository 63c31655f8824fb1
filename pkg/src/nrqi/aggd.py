"""Zero-mode asymmetric generalized Gaussian (AGGD) fitting by moment matching.

Density::

    f(x) = g / ((bl + br) * Gamma(1/g)) * exp(-(-x/bl)**g)   for x <= 0
    f(x) = g / ((bl + br) * Gamma(1/g)) * exp(-( x/br)**g)   for x >= 0

``g`` is the shape (sharpness), ``bl``/``br`` the left/right scales.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import gamma as gamma_fn
from scipy.special import gammaln

from .directional import DIRECTIONS, directional_products
from .mscn import MscnField

log = logging.getLogger(__name__)

SHAPE_MIN = 0.2
SHAPE_MAX = 10.0
GRID_POINTS = 10_001
MIN_SAMPLES = 64

FEATURE_NAMES = tuple(f"{d}_{p}" for d in DIRECTIONS for p in ("gamma", "beta_left", "beta_right"))


class DegenerateFitError(ValueError):
    """The samples cannot support an AGGD fit."""

    reason = "degenerate"

    def __init__(self, message: str, frame_id: str = "", direction: str = ""):
        self.frame_id = frame_id
        self.direction = direction
        where = ":".join(p for p in (frame_id, direction) if p)
        super().__init__(f"{where}: {message}" if where else message)


class TooFewSamplesError(DegenerateFitError):
    reason = "too_few_samples"


class OneSidedSamplesError(DegenerateFitError):
    reason = "one_sided"


class AllZeroSamplesError(DegenerateFitError):
    reason = "all_zero"


class ShapeClampWarning(RuntimeWarning):
    pass


def ggd_ratio(alpha):
    """rho(alpha) = Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)); strictly increasing in alpha."""
    a = np.asarray(alpha, dtype=np.float64)
    r = np.exp(2.0 * gammaln(2.0 / a) - gammaln(1.0 / a) - gammaln(3.0 / a))
    return float(r) if r.ndim == 0 else r


@lru_cache(maxsize=1)
def ratio_table() -> tuple[np.ndarray, np.ndarray]:
    """Geometric shape grid on [SHAPE_MIN, SHAPE_MAX] and rho evaluated on it."""
    alphas = np.geomspace(SHAPE_MIN, SHAPE_MAX, GRID_POINTS)
    rhos = ggd_ratio(alphas)
    alphas.setflags(write=False)
    rhos.setflags(write=False)
    return alphas, rhos


def ggd_ratio_inverse(r: float, return_flag: bool = False):
    """Shape ``alpha`` with ``ggd_ratio(alpha) == r``.

    The table brackets the root by bisection; the bracket is then polished
    with Brent's method so that ``|rho(alpha) - r| < 1e-9``. Ratios outside
    the attainable range clamp to the nearest grid end and emit
    :class:`ShapeClampWarning` (``return_flag=True`` also returns the flag).
    """
    alphas, rhos = ratio_table()
    r = float(r)
    clamped = False
    if not np.isfinite(r) or r < rhos[0]:
        alpha, clamped = alphas[0], True
    elif r > rhos[-1]:
        alpha, clamped = alphas[-1], True
    elif r == rhos[0]:
        alpha = alphas[0]
    else:
        hi = int(np.searchsorted(rhos, r, side="left"))
        lo = hi - 1
        if rhos[hi] == r:
            alpha = alphas[hi]
        else:
            a0, a1 = alphas[lo], alphas[hi]
            alpha = brentq(lambda a: ggd_ratio(a) - r, a0, a1, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    if clamped:
        warnings.warn(f"ratio {r!r} outside attainable range; shape clamped to {alpha}",
                      ShapeClampWarning, stacklevel=2)
    alpha = float(alpha)
    return (alpha, clamped) if return_flag else alpha


@dataclass(frozen=True)
class AggdParams:
    gamma_shape: float
    beta_left: float
    beta_right: float
    eta: float
    sample_count: int = 0
    clamped: bool = False

    @classmethod
    def from_shape_scales(cls, gamma_shape: float, beta_left: float, beta_right: float,
                          sample_count: int = 0) -> "AggdParams":
        return cls(gamma_shape, beta_left, beta_right,
                   eta(gamma_shape, beta_left, beta_right), sample_count)


def eta(gamma_shape, beta_left=None, beta_right=None) -> float:
    """Asymmetry summary ``(br - bl) * Gamma(2/g) / Gamma(1/g)``.

    Accepts either an :class:`AggdParams` or the three numbers.
    """
    if isinstance(gamma_shape, AggdParams):
        p = gamma_shape
        gamma_shape, beta_left, beta_right = p.gamma_shape, p.beta_left, p.beta_right
    return float((beta_right - beta_left) * gamma_fn(2.0 / gamma_shape) / gamma_fn(1.0 / gamma_shape))


def fit_aggd(samples, min_samples: int = MIN_SAMPLES, frame_id: str = "",
             direction: str = "") -> AggdParams:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < min_samples:
        raise TooFewSamplesError(f"{x.size} samples, need at least {min_samples}", frame_id, direction)
    if not np.all(np.isfinite(x)):
        raise DegenerateFitError("non-finite samples", frame_id, direction)
    neg = x[x < 0]
    pos = x[x >= 0]
    if neg.size == 0 and not np.any(pos > 0):
        raise AllZeroSamplesError("all samples are zero", frame_id, direction)
    if neg.size == 0 or not np.any(pos > 0):
        raise OneSidedSamplesError("samples lie on one side of zero", frame_id, direction)

    sigma_l = np.sqrt(np.mean(neg * neg))
    sigma_r = np.sqrt(np.mean(pos * pos))
    ratio = sigma_r / sigma_l
    mean_sq = np.mean(x * x)
    r_hat = np.mean(np.abs(x)) ** 2 / mean_sq
    R_hat = r_hat * (ratio**3 + 1.0) * (ratio + 1.0) / (ratio**2 + 1.0) ** 2

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ShapeClampWarning)
        alpha, clamped = ggd_ratio_inverse(R_hat, return_flag=True)
    if clamped:
        log.warning("%s", caught[0].message if caught else "shape clamped")

    scale = np.sqrt(np.exp(gammaln(1.0 / alpha) - gammaln(3.0 / alpha)))
    bl = float(sigma_l * scale)
    br = float(sigma_r * scale)
    return AggdParams(alpha, bl, br, eta(alpha, bl, br), int(x.size), clamped)


def sample_aggd(params, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` AGGD variates; deterministic for a given seed.

    The side is negative with probability ``bl / (bl + br)``; the magnitude is
    ``beta * G**(1/g)`` with ``G ~ Gamma(1/g, 1)``.
    """
    if isinstance(params, AggdParams):
        g, bl, br = params.gamma_shape, params.beta_left, params.beta_right
    else:
        g, bl, br = params
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    left = rng.random(n) < bl / (bl + br)
    mag = rng.gamma(1.0 / g, 1.0, size=n) ** (1.0 / g)
    return np.where(left, -bl * mag, br * mag)


@dataclass(frozen=True)
class FrameFeatureVector:
    """Twelve AGGD parameters in the order [H, V, D_left, D_right] x [g, bl, br]."""

    features: tuple[float, ...]
    etas: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    frame_id: str = ""

    def __post_init__(self):
        f = tuple(float(v) for v in self.features)
        if len(f) != 12:
            raise ValueError(f"expected 12 features, got {len(f)}")
        if not all(np.isfinite(f)) or min(f) <= 0:
            raise ValueError("features must be finite and positive")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "etas", tuple(float(v) for v in self.etas))

    def as_array(self) -> np.ndarray:
        return np.array(self.features)

    def triple(self, direction: str) -> tuple[float, float, float]:
        i = DIRECTIONS.index(direction)
        return self.features[3 * i : 3 * i + 3]


def frame_features(field: MscnField, frame_id: str = "",
                   min_samples: int = MIN_SAMPLES) -> FrameFeatureVector:
    frame_id = frame_id or getattr(field, "source_id", "")
    planes = directional_products(field).planes()
    feats, etas = [], []
    for direction in DIRECTIONS:
        p = fit_aggd(planes[direction], min_samples=min_samples, frame_id=frame_id, direction=direction)
        feats.extend((p.gamma_shape, p.beta_left, p.beta_right))
        etas.append(p.eta)
    return FrameFeatureVector(tuple(feats), tuple(etas), frame_id)


def write_features_csv(rows: Iterable[FrameFeatureVector], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_id", *FEATURE_NAMES, *(f"{d}_eta" for d in DIRECTIONS)])
        for fv in rows:
            w.writerow([fv.frame_id, *(repr(v) for v in fv.features), *(repr(v) for v in fv.etas)])


def feature_matrix(rows: Sequence[FrameFeatureVector]) -> np.ndarray:
    return np.array([fv.features for fv in rows], dtype=np.float64).reshape(len(rows), 12)
