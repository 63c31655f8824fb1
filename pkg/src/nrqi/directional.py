"""Adjacent-pixel products of MSCN coefficients along four orientations.

Only index pairs where both neighbours exist are used; there is no padding.
The left diagonal pairs ``(i, j)`` with ``(i + 1, j - 1)`` (down-left).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .mscn import MscnField

DIRECTIONS = ("horizontal", "vertical", "diag_left", "diag_right")


@dataclass(frozen=True, eq=False)
class DirectionalProducts:
    horizontal: np.ndarray  # M x (N-1)
    vertical: np.ndarray  # (M-1) x N
    diag_right: np.ndarray  # (M-1) x (N-1)
    diag_left: np.ndarray  # (M-1) x (N-1)

    def planes(self) -> dict[str, np.ndarray]:
        """Planes keyed by direction, in the canonical feature order."""
        return {d: getattr(self, d) for d in DIRECTIONS}


def directional_products(field: Union[MscnField, np.ndarray]) -> DirectionalProducts:
    m = field.values if isinstance(field, MscnField) else np.asarray(field, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise ValueError(f"directional products need a field of at least 2x2, got {m.shape}")
    return DirectionalProducts(
        horizontal=m[:, :-1] * m[:, 1:],
        vertical=m[:-1, :] * m[1:, :],
        diag_right=m[:-1, :-1] * m[1:, 1:],
        diag_left=m[:-1, 1:] * m[1:, :-1],
    )
