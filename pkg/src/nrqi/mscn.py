"""Local Gaussian-weighted statistics and MSCN coefficients.

For a unit-range image ``I`` the mean subtracted contrast normalized field is

    mscn(i, j) = (I(i, j) - mu(i, j)) / (sigma(i, j) + C)

with ``mu`` and ``sigma`` the weighted mean and standard deviation over a
``(2K+1) x (2L+1)`` circularly symmetric Gaussian window. Borders use
half-sample symmetric reflection.

Unit-range images are evaluated on the 8-bit luminance scale
(``INTENSITY_SCALE = 255``), so that ``C = 1`` stays small next to typical
local deviations. On a [0, 1] scale ``C = 1`` would swamp ``sigma`` and the
division would no longer normalize contrast.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .image_io import Image, save_raw_f32, to_unit_range

DEFAULT_K = 3
DEFAULT_L = 3
DEFAULT_SIGMA_W = 7.0 / 6.0
DEFAULT_C = 1.0
INTENSITY_SCALE = 255.0


@dataclass(frozen=True, eq=False)
class GaussianWindow:
    half_extents: tuple[int, int]
    weights: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


@dataclass(frozen=True, eq=False)
class MscnField:
    values: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    c_constant: float
    source_id: str = ""

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class Pdfmc:
    bin_edges: np.ndarray
    densities: np.ndarray
    sample_count: int

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


def gaussian_window(K: int = DEFAULT_K, L: int = DEFAULT_L,
                    sigma_w: float = DEFAULT_SIGMA_W) -> GaussianWindow:
    if K < 0 or L < 0:
        raise ValueError("window half extents must be non-negative")
    if not sigma_w > 0:
        raise ValueError("sigma_w must be positive")
    k = np.arange(-K, K + 1, dtype=np.float64)[:, None]
    l = np.arange(-L, L + 1, dtype=np.float64)[None, :]
    w = np.exp(-(k * k + l * l) / (2.0 * sigma_w * sigma_w))
    w /= w.sum()
    w.setflags(write=False)
    return GaussianWindow((K, L), w)


def _as_field(img: Union[Image, np.ndarray]) -> np.ndarray:
    if isinstance(img, Image):
        return to_unit_range(img)
    return np.asarray(img, dtype=np.float64)


def _shifted_views(arr: np.ndarray, K: int, L: int):
    """Yield ``(k, l, view)`` with ``view[i, j] == arr[i + k, j + l]`` under reflection."""
    padded = np.pad(arr, ((K, K), (L, L)), mode="symmetric")
    M, N = arr.shape
    for k in range(-K, K + 1):
        for l in range(-L, L + 1):
            yield k, l, padded[K + k : K + k + M, L + l : L + l + N]


def _centred_moments(arr: np.ndarray, win: GaussianWindow) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(mu - I, sigma)`` accumulated from neighbour differences.

    Working with ``I(i+k, j+l) - I(i, j)`` makes a constant image give exact
    zeros and an additive offset cancel exactly whenever the differences are
    exact. The variance uses the definition form
    ``sum w * (I(i+k, j+l) - mu(i, j))**2`` rather than ``E[I^2] - mu^2``,
    which avoids cancellation on flat regions.
    """
    K, L = win.half_extents
    diffs = [(win.weights[k + K, l + L], view - arr) for k, l, view in _shifted_views(arr, K, L)]
    shift = np.zeros_like(arr)
    for w, d in diffs:
        shift += w * d
    var = np.zeros_like(arr)
    for w, d in diffs:
        e = d - shift
        var += w * (e * e)
    return shift, np.sqrt(np.maximum(var, 0.0))


def local_stats(img: Union[Image, np.ndarray], win: GaussianWindow) -> tuple[np.ndarray, np.ndarray]:
    """Weighted local mean and standard deviation fields."""
    arr = _as_field(img)
    shift, sigma = _centred_moments(arr, win)
    return arr + shift, sigma


def mscn(img: Union[Image, np.ndarray], win: GaussianWindow | None = None,
         C: float = DEFAULT_C, intensity_scale: float = INTENSITY_SCALE) -> MscnField:
    """MSCN field of a unit-range image.

    Pixels are multiplied by ``intensity_scale`` before the local statistics
    are taken; pass ``intensity_scale=1`` to evaluate on the values as given.
    """
    if win is None:
        win = gaussian_window()
    arr = _as_field(img) * intensity_scale
    shift, sigma = _centred_moments(arr, win)
    values = -shift / (sigma + C)
    source_id = img.source_id if isinstance(img, Image) else ""
    return MscnField(values=values + 0.0, mu=arr + shift, sigma=sigma, c_constant=float(C),
                     source_id=source_id)


def pdfmc_histogram(field: Union[MscnField, np.ndarray], bins: int = 101) -> Pdfmc:
    """Density-normalized histogram of the MSCN values over their [min, max]."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    values = field.values if isinstance(field, MscnField) else np.asarray(field, dtype=np.float64)
    values = values.ravel()
    if values.size == 0:
        raise ValueError("empty MSCN field")
    densities, edges = np.histogram(values, bins=bins, density=True)
    return Pdfmc(bin_edges=edges, densities=densities, sample_count=int(values.size))


def export_mscn(field: MscnField, path: Union[str, Path]) -> None:
    save_raw_f32(field.values, path)


def write_pdfmc_csv(pdf: Pdfmc, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_center", "density"])
        for c, d in zip(pdf.bin_centers, pdf.densities):
            w.writerow([repr(float(c)), repr(float(d))])
