"""Feature clustering and signed weight derivation.

Frames are described by 12 AGGD parameters. They are z-scored, grouped with
k-means (k=3), and each cluster is tagged as *structure* (shape dominated),
*brightness* (left-scale dominated) or *noise* (right-scale dominated). The
weight magnitudes are the frame masses of those categories; the signs are
fixed to (+, -, -).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

CATEGORIES = ("structure", "brightness", "noise")

MIXED_RATIO = 1.5
WEIGHT_FLOOR = 0.05
DEFAULT_SEED = 42


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Standardized feature rows plus the record needed to undo the scaling."""

    values: np.ndarray
    column_means: np.ndarray
    column_stds: np.ndarray
    frame_ids: tuple[str, ...] = ()

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def destandardize(self, z: Optional[np.ndarray] = None) -> np.ndarray:
        z = self.values if z is None else z
        return z * self.column_stds + self.column_means


def standardize(rows, frame_ids: Sequence[str] = ()) -> FeatureMatrix:
    """Per-column z-scoring (population std). Zero-variance columns are only centred."""
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("standardize needs a non-empty 2-D matrix")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    return FeatureMatrix((X - means) / stds, means, stds, tuple(frame_ids))


def destandardize(mat: FeatureMatrix) -> np.ndarray:
    return mat.destandardize()


@dataclass(frozen=True, eq=False)
class ClusterModel:
    k: int
    centers: np.ndarray
    assignments: np.ndarray
    seed: int
    iterations_used: int
    inertia: float
    inertia_history: tuple[float, ...] = ()

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    # fixed-order reduction over the feature axis
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = _sq_dists(X, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        centers[c] = X[idx]
        closest = np.minimum(closest, _sq_dists(X, centers[c : c + 1])[:, 0])
    return centers


def kmeans(mat, k: int = 3, seed: int = DEFAULT_SEED, max_iter: int = 100,
           tol: float = 1e-6) -> ClusterModel:
    """Lloyd's k-means with k-means++ seeding.

    Rows are put in lexicographic order before seeding, so the result does
    not depend on the order in which frames are supplied. Empty clusters are
    re-seeded with the point farthest from its centre. Iteration stops when
    the centres move less than ``tol`` (max abs coordinate), when inertia
    stops decreasing, or after ``max_iter`` rounds.
    """
    X = mat.values if isinstance(mat, FeatureMatrix) else np.asarray(mat, dtype=np.float64)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if n < k:
        raise ValueError(f"k-means needs at least k={k} rows, got {n}")

    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(Xs, k, rng)

    d = _sq_dists(Xs, centers)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(n), labels].sum())
    history = [inertia]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new_centers = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new_centers[c] = Xs[members].mean(axis=0)
        d = _sq_dists(Xs, new_centers)
        new_labels = d.argmin(axis=1)
        for c in range(k):
            if not np.any(new_labels == c):
                point_d = d[np.arange(n), new_labels]
                far = int(point_d.argmax())
                new_centers[c] = Xs[far]
                d = _sq_dists(Xs, new_centers)
                new_labels = d.argmin(axis=1)
        new_inertia = float(d[np.arange(n), new_labels].sum())
        if new_inertia > inertia:
            # rounding-level uptick at convergence: keep the better state
            break
        shift = float(np.max(np.abs(new_centers - centers)))
        centers, labels, inertia = new_centers, new_labels, new_inertia
        history.append(inertia)
        if shift < tol:
            break

    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = labels
    return ClusterModel(k, centers, assignments, int(seed), iterations, inertia, tuple(history))


@dataclass(frozen=True, eq=False)
class CategoryLabels:
    mapping: dict[int, str]
    dominance_scores: np.ndarray  # (k, 3): gamma-, beta_left-, beta_right-dominance

    def clusters_for(self, category: str) -> list[int]:
        return [c for c, cat in sorted(self.mapping.items()) if cat == category]


def dominance_scores(centers: np.ndarray) -> np.ndarray:
    """Mean standardized magnitude of the gamma / beta_l / beta_r slots of each centre."""
    C = np.abs(np.atleast_2d(centers)).reshape(-1, 4, 3)
    return C.mean(axis=1)


def label_clusters(model: ClusterModel, mat=None) -> CategoryLabels:
    """Bijective category assignment maximizing total dominance.

    Ties between permutations go to the one giving larger clusters to the
    earlier categories, then to lower cluster indices.
    """
    scores = dominance_scores(model.centers)
    k = scores.shape[0]
    if k != len(CATEGORIES):
        # non-bijective case (sub-clusters): each cluster takes its dominant category
        mapping = {c: CATEGORIES[int(np.argmax(scores[c]))] for c in range(k)}
        return CategoryLabels(mapping, scores)
    sizes = model.sizes()
    best_key, best = None, None
    for perm in itertools.permutations(range(k)):
        # perm[j] is the cluster assigned to category j
        total = sum(scores[perm[j], j] for j in range(k))
        key = (round(total, 12), tuple(int(sizes[c]) for c in perm), tuple(-c for c in perm))
        if best_key is None or key > best_key:
            best_key, best = key, perm
    mapping = {best[j]: CATEGORIES[j] for j in range(k)}
    return CategoryLabels(dict(sorted(mapping.items())), scores)


def is_mixed(score_row: np.ndarray, ratio: float = MIXED_RATIO) -> bool:
    top, second = np.sort(score_row)[::-1][:2]
    # a centre sitting on the column means dominates nothing
    return bool(top < ratio * second or top == 0)


@dataclass(frozen=True)
class WeightVector:
    w1: float
    w2: float
    w3: float
    seed: Optional[int] = None
    flags: tuple[str, ...] = ()
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if not (self.w1 > 0 and self.w2 < 0 and self.w3 < 0):
            raise ValueError(f"weight signs must be (+, -, -), got ({self.w1}, {self.w2}, {self.w3})")

    @property
    def triple(self) -> tuple[float, float, float]:
        return (self.w1, self.w2, self.w3)

    @classmethod
    def from_masses(cls, masses, floor: float = WEIGHT_FLOOR, **kw) -> "WeightVector":
        m = np.abs(np.asarray(masses, dtype=np.float64))
        m = m / m.sum()
        m = np.maximum(m, floor)
        m = m / m.sum()
        return cls(float(m[0]), -float(m[1]), -float(m[2]), **kw)

    @classmethod
    def uniform(cls, **kw) -> "WeightVector":
        return cls(1.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, **kw)

    def to_dict(self) -> dict:
        return {"w1": self.w1, "w2": self.w2, "w3": self.w3, "seed": self.seed,
                "flags": list(self.flags), "provenance": list(self.provenance)}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightVector":
        try:
            return cls(float(d["w1"]), float(d["w2"]), float(d["w3"]),
                       seed=d.get("seed"), flags=tuple(d.get("flags", ())),
                       provenance=tuple(d.get("provenance", ())))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"invalid weights record: {exc}") from None


def _split_mass(X: np.ndarray, rows: np.ndarray, mass: float, seed: int, rounds_left: int,
                masses: np.ndarray) -> bool:
    """Re-cluster a mixed group with k=2 and distribute its mass.

    Returns False if some piece is still mixed once the refinement budget is
    exhausted (or cannot be split further).
    """
    if rounds_left == 0 or rows.size < 2:
        return False
    sub = kmeans(X[rows], k=2, seed=seed)
    sub_scores = dominance_scores(sub.centers)
    sizes = sub.sizes()
    ok = True
    for c in range(2):
        part = mass * sizes[c] / rows.size
        if is_mixed(sub_scores[c]):
            ok &= _split_mass(X, rows[sub.assignments == c], part, seed, rounds_left - 1, masses)
        else:
            masses[int(np.argmax(sub_scores[c]))] += part
    return ok


def derive_weights(model: ClusterModel, labels: CategoryLabels, mat,
                   max_refine: int = 3) -> WeightVector:
    """Signed weights from category frame masses.

    Pure clusters contribute their frame fraction to their category. Mixed
    clusters (top dominance below 1.5x the runner-up) are split with k=2 up
    to ``max_refine`` rounds and contribute by sub-cluster proportions. If
    mixing survives refinement, the uniform (1/3, -1/3, -1/3) fallback is
    returned with the ``unresolved_mixing`` flag.
    """
    X = mat.values if isinstance(mat, FeatureMatrix) else np.asarray(mat, dtype=np.float64)
    n = X.shape[0]
    masses = np.zeros(3)
    resolved = True
    refined = False
    for c in range(model.k):
        rows = np.flatnonzero(model.assignments == c)
        if rows.size == 0:
            continue
        mass = rows.size / n
        if is_mixed(labels.dominance_scores[c]):
            refined = True
            resolved &= _split_mass(X, rows, mass, model.seed, max_refine, masses)
        else:
            masses[CATEGORIES.index(labels.mapping[c])] += mass
    if not resolved:
        log.info("cluster mixing unresolved after %d refinement rounds; using uniform weights", max_refine)
        return WeightVector.uniform(seed=model.seed, flags=("unresolved_mixing",))
    flags = ("refined",) if refined else ()
    return WeightVector.from_masses(masses, seed=model.seed, flags=flags)


def fit_weights(rows, seed: int = DEFAULT_SEED, k: int = 3, max_refine: int = 3,
                frame_ids: Sequence[str] = ()) -> tuple[WeightVector, ClusterModel, CategoryLabels]:
    """standardize -> kmeans -> label_clusters -> derive_weights on raw feature rows.

    With fewer than ``k`` rows clustering is impossible and the flagged
    uniform fallback is returned (with no model).
    """
    mat = standardize(rows, frame_ids)
    if mat.n_rows < k:
        return WeightVector.uniform(seed=seed, flags=("too_few_frames",)), None, None
    model = kmeans(mat, k=k, seed=seed)
    labels = label_clusters(model, mat)
    return derive_weights(model, labels, mat, max_refine=max_refine), model, labels
