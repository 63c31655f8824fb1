"""Directional quality scores, MAD and MAD-weighted fusion into the Quality Index."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .aggd import DegenerateFitError, FrameFeatureVector, frame_features
from .clustering import WeightVector
from .directional import DIRECTIONS
from .image_io import FrameSequence, Image, to_unit_range
from .mscn import DEFAULT_C, GaussianWindow, gaussian_window, mscn
from .preprocess import PreprocessConfig, preprocess_pipeline

log = logging.getLogger(__name__)

MAD_TOTAL_EPS = 1e-12


@dataclass(frozen=True)
class DirectionalScores:
    qi_h: float
    qi_v: float
    qi_dl: float
    qi_dr: float
    frame_id: str = ""

    def as_array(self) -> np.ndarray:
        return np.array([self.qi_h, self.qi_v, self.qi_dl, self.qi_dr])


def directional_qi(features: FrameFeatureVector, w) -> DirectionalScores:
    """``w1*gamma + w2*beta_l + w3*beta_r`` per direction on the raw parameters.

    ``w`` may be a :class:`WeightVector` or any 3-sequence (useful for
    unnormalized probes).
    """
    w1, w2, w3 = w.triple if isinstance(w, WeightVector) else tuple(w)
    f = np.asarray(features.features).reshape(4, 3)
    s = w1 * f[:, 0] + w2 * f[:, 1] + w3 * f[:, 2]
    return DirectionalScores(*(float(v) for v in s), frame_id=features.frame_id)


def mad(values) -> float:
    """Median absolute deviation about the median (unscaled)."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("MAD of an empty array")
    return float(np.median(np.abs(x - np.median(x))))


@dataclass(frozen=True)
class FusionResult:
    qi: tuple[float, ...]
    mads: tuple[float, float, float, float]
    mad_total: float
    direction_weights: tuple[float, float, float, float]
    uniform_fallback: bool


def fuse_qi(per_frame_scores: Sequence[DirectionalScores],
            reference: Optional[Sequence[DirectionalScores]] = None) -> FusionResult:
    """MAD-proportional fusion of directional scores.

    MADs are taken over ``reference`` (default: the scored frames themselves)
    and the resulting direction weights are applied to every frame in
    ``per_frame_scores``. When the MADs sum to (near) zero the four
    directions are weighted equally and ``uniform_fallback`` is set.
    """
    if len(per_frame_scores) == 0:
        raise ValueError("fusion needs at least one frame")
    ref = per_frame_scores if reference is None else reference
    if len(ref) == 0:
        raise ValueError("fusion needs at least one reference frame")
    S = np.array([s.as_array() for s in per_frame_scores])
    R = np.array([s.as_array() for s in ref])
    mads = tuple(mad(R[:, d]) for d in range(4))
    mad_total = float(sum(mads))
    fallback = mad_total < MAD_TOTAL_EPS
    if fallback or len(set(mads)) == 1:
        weights = (0.25, 0.25, 0.25, 0.25)
    else:
        weights = tuple(m / mad_total for m in mads)
    # fixed summation order, so equal weights give exactly the 4-direction mean
    qi = weights[0] * S[:, 0] + weights[1] * S[:, 1] + weights[2] * S[:, 2] + weights[3] * S[:, 3]
    return FusionResult(tuple(float(v) for v in qi), mads, mad_total, weights, fallback)


@dataclass
class FrameResult:
    frame_id: str
    scores: DirectionalScores
    qi: float
    features: FrameFeatureVector


@dataclass
class SequenceQualityReport:
    sequence_id: str
    patient_id: str
    per_frame: list[FrameResult]
    invalid: list[dict]
    mads: tuple[float, float, float, float]
    mad_total: float
    direction_weights: tuple[float, float, float, float]
    weights_used: WeightVector
    skip_frames: int = 0
    flags: list[str] = field(default_factory=list)

    @property
    def qi_values(self) -> np.ndarray:
        return np.array([f.qi for f in self.per_frame])

    @property
    def summary(self) -> dict:
        q = self.qi_values
        return {"mean": float(np.mean(q)), "median": float(np.median(q)), "std": float(np.std(q))}

    def to_dict(self) -> dict:
        return {
            "sequence_id": self.sequence_id,
            "patient_id": self.patient_id,
            "weights_used": self.weights_used.to_dict(),
            "skip_frames": self.skip_frames,
            "mads": dict(zip(DIRECTIONS, self.mads)),
            "mad_total": self.mad_total,
            "direction_weights": dict(zip(DIRECTIONS, self.direction_weights)),
            "flags": list(self.flags),
            "summary": self.summary,
            "per_frame": [
                {
                    "frame_id": f.frame_id,
                    "qi_h": f.scores.qi_h,
                    "qi_v": f.scores.qi_v,
                    "qi_dl": f.scores.qi_dl,
                    "qi_dr": f.scores.qi_dr,
                    "qi": f.qi,
                }
                for f in self.per_frame
            ],
            "invalid": list(self.invalid),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame_id", "qi_h", "qi_v", "qi_dl", "qi_dr", "qi"])
            for f in self.per_frame:
                s = f.scores
                w.writerow([f.frame_id, *(repr(v) for v in (s.qi_h, s.qi_v, s.qi_dl, s.qi_dr, f.qi))])


def _frame_id(img: Image, index: int) -> str:
    return img.source_id or f"frame{index:04d}"


def extract_features(img: Image, pp: Optional[PreprocessConfig] = None,
                     win: Optional[GaussianWindow] = None, C: float = DEFAULT_C,
                     frame_id: str = "") -> FrameFeatureVector:
    """Image -> (optional preprocessing) -> MSCN -> 12 AGGD features."""
    if pp is not None:
        img = preprocess_pipeline(img, pp)
    field_ = mscn(to_unit_range(img), win or gaussian_window(), C)
    return frame_features(field_, frame_id=frame_id or img.source_id)


def sequence_features(seq: FrameSequence, pp: Optional[PreprocessConfig] = None,
                      jobs: int = 1, win: Optional[GaussianWindow] = None,
                      C: float = DEFAULT_C) -> list:
    """Per-frame feature vectors, or the :class:`DegenerateFitError` raised for a frame.

    Output order always follows frame order, whatever ``jobs`` is.
    """
    win = win or gaussian_window()

    def one(item):
        i, img = item
        try:
            return extract_features(img, pp, win, C, frame_id=_frame_id(img, i))
        except DegenerateFitError as exc:
            return exc

    items = list(enumerate(seq.frames))
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]


def score_sequence(seq: FrameSequence, w: WeightVector, pp: Optional[PreprocessConfig] = None,
                   skip_frames: int = 0, jobs: int = 1, win: Optional[GaussianWindow] = None,
                   C: float = DEFAULT_C) -> SequenceQualityReport:
    """Score every frame of a sequence.

    Frames whose AGGD fits degenerate are listed in ``invalid`` and left out
    of the MADs. The first ``skip_frames`` frames are scored and reported but
    do not contribute to the MADs.
    """
    results = sequence_features(seq, pp, jobs=jobs, win=win, C=C)
    frame_ids = [_frame_id(img, i) for i, img in enumerate(seq.frames)]
    return report_from_features(results, w, skip_frames=skip_frames, frame_ids=frame_ids,
                                sequence_id=seq.sequence_id, patient_id=seq.patient_id)


def report_from_features(results: Sequence, w: WeightVector, skip_frames: int = 0,
                         frame_ids: Sequence[str] = (), sequence_id: str = "",
                         patient_id: str = "") -> SequenceQualityReport:
    """Fusion stage of :func:`score_sequence` on precomputed per-frame features.

    ``results`` holds one :class:`FrameFeatureVector` or
    :class:`DegenerateFitError` per frame, in frame order.
    """
    if skip_frames < 0:
        raise ValueError("skip_frames must be non-negative")
    valid: list[tuple[int, FrameFeatureVector]] = []
    invalid = []
    for i, r in enumerate(results):
        if isinstance(r, DegenerateFitError):
            fid = frame_ids[i] if i < len(frame_ids) else r.frame_id
            invalid.append({"index": i, "frame_id": fid, "direction": r.direction, "reason": r.reason})
        else:
            valid.append((i, r))
    if not valid:
        raise ValueError(f"sequence {sequence_id!r}: every frame failed feature extraction")

    scores = [directional_qi(fv, w) for _, fv in valid]
    reference = [s for (i, _), s in zip(valid, scores) if i >= skip_frames]
    flags = []
    if not reference:
        reference = scores
        flags.append("skip_frames_exceeds_sequence")
    fused = fuse_qi(scores, reference)
    if fused.uniform_fallback:
        flags.append("uniform_direction_weights")
    if invalid:
        flags.append("invalid_frames")
    per_frame = [FrameResult(fv.frame_id, s, q, fv)
                 for (_, fv), s, q in zip(valid, scores, fused.qi)]
    return SequenceQualityReport(
        sequence_id=sequence_id,
        patient_id=patient_id,
        per_frame=per_frame,
        invalid=invalid,
        mads=fused.mads,
        mad_total=fused.mad_total,
        direction_weights=fused.direction_weights,
        weights_used=w,
        skip_frames=skip_frames,
        flags=flags,
    )
