"""Synthetic distortions, synthetic patient corpora, LOO-CV weight fitting and probes.

The synthetic frames are MR-like phantoms: an elliptical body with a few
organ-like inclusions, band-limited tissue texture and a little acquisition
noise. Organ positions drift with a breathing cycle across the frames of a
sequence. Each patient gets a degradation profile (noise, bias field,
contrast shift) that produces the "pre" frames; the "post" frames are the
pre frames run through :func:`nrqi.preprocess.preprocess_pipeline`.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .aggd import DegenerateFitError, FrameFeatureVector
from .clustering import DEFAULT_SEED, WeightVector, fit_weights
from .image_io import FrameSequence, Image, load_sequence, save_image, to_unit_range, write_manifest
from .preprocess import PreprocessConfig, gaussian_filter_array, preprocess_pipeline
from .quality import extract_features, report_from_features

log = logging.getLogger(__name__)

DISTORTION_KINDS = ("gaussian_noise", "gaussian_blur", "bias_field", "gamma_shift")
CORPUS_CONFIG_VERSION = 1


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    level: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DISTORTION_KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        if not self.level >= 0:
            raise ValueError("distortion level must be non-negative")


def bias_surface(shape: tuple[int, int], seed: int) -> np.ndarray:
    """Smooth quadratic surface with max |value| == 1, fixed by ``seed``."""
    rng = np.random.default_rng(seed)
    h, w = shape
    y, x = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    c = rng.normal(size=5)
    s = c[0] * x + c[1] * y + c[2] * x * x + c[3] * y * y + c[4] * x * y
    s = s - s.mean()
    peak = np.abs(s).max()
    return s / peak if peak > 0 else s


def simulate_distortion(img: Image, spec: DistortionSpec) -> Image:
    """Apply one synthetic degradation to a unit-range image. Level 0 is the identity."""
    px = to_unit_range(img)
    if spec.level == 0:
        return img
    if spec.kind == "gaussian_noise":
        rng = np.random.default_rng(spec.seed)
        out = px + rng.normal(0.0, spec.level, px.shape)
    elif spec.kind == "gaussian_blur":
        out = gaussian_filter_array(px, spec.level)
    elif spec.kind == "bias_field":
        out = px * (1.0 + spec.level * bias_surface(px.shape, spec.seed))
        m = out.mean()
        if m > 0:
            out = out * (px.mean() / m)
    else:
        out = np.power(px, 1.0 + spec.level)
    return Image(np.clip(out, 0.0, 1.0), value_range="normalized", source_id=img.source_id)


# ---------------------------------------------------------------------------
# synthetic anatomy


def generate_base_image(seed: int, size: int = 96, phase: float = 0.0,
                        texture_amp: float = 0.04, acquisition_noise: float = 0.01,
                        frame_seed: Optional[int] = None) -> Image:
    """MR-like phantom in [0, 1].

    ``seed`` fixes the anatomy and tissue texture; ``phase`` (radians)
    shifts the organs along a breathing cycle; ``frame_seed`` fixes the
    acquisition noise (defaults to ``seed``).
    """
    rng = np.random.default_rng(seed)
    y, x = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    body_a, body_b = rng.uniform(0.75, 0.9), rng.uniform(0.6, 0.75)
    img = np.full((size, size), 0.05)
    body = (x / body_a) ** 2 + (y / body_b) ** 2 < 1
    img[body] = rng.uniform(0.35, 0.5)
    drift = 0.06 * np.sin(phase)
    for _ in range(6):
        cx, cy = rng.uniform(-0.45, 0.45, 2)
        a, b = rng.uniform(0.1, 0.3, 2)
        v = rng.uniform(0.2, 0.9)
        img[((x - cx) / a) ** 2 + ((y - cy - drift) / b) ** 2 < 1] = v
    texture = gaussian_filter_array(rng.standard_normal((size, size)), 1.0)
    texture *= texture_amp / texture.std()
    img = gaussian_filter_array(img, 0.8) + texture
    noise_rng = np.random.default_rng(seed if frame_seed is None else frame_seed)
    img = img + noise_rng.normal(0.0, acquisition_noise, img.shape)
    return Image(np.clip(img, 0.0, 1.0), value_range="normalized", source_id=f"base{seed}")


@dataclass(frozen=True)
class CorpusConfig:
    """Parameters of a synthetic patient corpus (serialized with a version tag)."""

    n_patients: int = 10
    sequences_per_patient: int = 3
    frames_per_sequence: int = 10
    size: int = 96
    seed: int = 2024
    noise_range: tuple[float, float] = (0.02, 0.06)
    bias_range: tuple[float, float] = (0.1, 0.4)
    gamma_shift_range: tuple[float, float] = (0.0, 0.5)
    preprocess: PreprocessConfig = PreprocessConfig()
    version: int = CORPUS_CONFIG_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["preprocess"] = self.preprocess.to_dict()
        d["noise_range"] = list(self.noise_range)
        d["bias_range"] = list(self.bias_range)
        d["gamma_shift_range"] = list(self.gamma_shift_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        d = dict(d)
        if d.get("version", CORPUS_CONFIG_VERSION) != CORPUS_CONFIG_VERSION:
            raise ValueError(f"unsupported corpus config version {d.get('version')}")
        if "preprocess" in d:
            d["preprocess"] = PreprocessConfig.from_dict(d["preprocess"])
        for key in ("noise_range", "bias_range", "gamma_shift_range"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


@dataclass
class Patient:
    patient_id: str
    pairs: list[tuple[FrameSequence, FrameSequence]]  # (pre, post)
    profile: dict = field(default_factory=dict)


def _degrade(frame: Image, profile: dict, frame_seed: int) -> Image:
    out = simulate_distortion(frame, DistortionSpec("bias_field", profile["bias"], profile["bias_seed"]))
    out = simulate_distortion(out, DistortionSpec("gamma_shift", profile["gamma_shift"]))
    out = simulate_distortion(out, DistortionSpec("gaussian_noise", profile["noise"], frame_seed))
    # exported frames are 8-bit
    q = np.round(out.pixels * 255.0)
    return Image(q, value_range="uint8", source_id=frame.source_id)


def generate_corpus(cfg: CorpusConfig = CorpusConfig()) -> list[Patient]:
    """Deterministic synthetic corpus of pre/post sequence pairs."""
    root = np.random.default_rng(cfg.seed)
    patient_seeds = root.integers(0, 2**31 - 1, size=cfg.n_patients)
    patients = []
    for p, pseed in enumerate(patient_seeds):
        pid = f"p{p:02d}"
        prng = np.random.default_rng(int(pseed))
        profile = {
            "noise": float(prng.uniform(*cfg.noise_range)),
            "bias": float(prng.uniform(*cfg.bias_range)),
            "bias_seed": int(prng.integers(2**31 - 1)),
            "gamma_shift": float(prng.uniform(*cfg.gamma_shift_range)),
        }
        anatomy_seed = int(prng.integers(2**31 - 1))
        pairs = []
        for s in range(cfg.sequences_per_patient):
            sid = f"{pid}_s{s:02d}"
            phase0 = float(prng.uniform(0, 2 * np.pi))
            pre_frames, post_frames = [], []
            for f in range(cfg.frames_per_sequence):
                fseed = int(prng.integers(2**31 - 1))
                phase = phase0 + 2 * np.pi * f / max(cfg.frames_per_sequence, 1)
                clean = generate_base_image(anatomy_seed, cfg.size, phase=phase, frame_seed=fseed)
                fid = f"{sid}_f{f:03d}"
                pre = _degrade(clean, profile, fseed + 1)
                pre = Image(pre.pixels, value_range="uint8", source_id=f"{fid}_pre")
                post = preprocess_pipeline(pre, cfg.preprocess)
                post = Image(post.pixels, value_range="normalized", source_id=f"{fid}_post",
                             degenerate=post.degenerate)
                pre_frames.append(pre)
                post_frames.append(post)
            pairs.append((FrameSequence(tuple(pre_frames), f"{sid}_pre", pid),
                          FrameSequence(tuple(post_frames), f"{sid}_post", pid)))
        patients.append(Patient(pid, pairs, profile))
    return patients


def write_corpus(patients: Sequence[Patient], out_dir, cfg: Optional[CorpusConfig] = None) -> Path:
    """Write frames (pre: 8-bit PNG, post: raw-f32), sequence manifests and ``corpus.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"patients": []}
    for patient in patients:
        entry = {"patient_id": patient.patient_id, "profile": patient.profile, "pairs": []}
        pdir = out_dir / patient.patient_id
        pdir.mkdir(exist_ok=True)
        for pre, post in patient.pairs:
            paths = {}
            for tag, seq, ext in (("pre", pre, ".png"), ("post", post, ".f32")):
                sdir = pdir / seq.sequence_id
                sdir.mkdir(exist_ok=True)
                frame_paths = []
                for i, frame in enumerate(seq.frames):
                    fp = sdir / f"frame{i:03d}{ext}"
                    save_image(frame, fp)
                    frame_paths.append(fp)
                mpath = pdir / f"{seq.sequence_id}.json"
                write_manifest(mpath, frame_paths, seq.sequence_id, patient.patient_id)
                paths[tag] = str(mpath.relative_to(out_dir))
            entry["pairs"].append(paths)
        doc["patients"].append(entry)
    if cfg is not None:
        doc["config"] = cfg.to_dict()
    path = out_dir / "corpus.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_corpus(path) -> list[Patient]:
    """Read a ``corpus.json`` written by :func:`write_corpus`.

    Frame ids are rewritten as ``<sequence_id>_f<index>`` so they stay unique
    across the corpus.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    patients = []
    for entry in doc.get("patients", []):
        pairs = []
        for pair in entry["pairs"]:
            loaded = []
            for tag in ("pre", "post"):
                seq = load_sequence(path.parent / pair[tag])
                frames = tuple(Image(f.pixels, f.value_range, f"{seq.sequence_id}_f{i:03d}", f.degenerate)
                               for i, f in enumerate(seq.frames))
                loaded.append(FrameSequence(frames, seq.sequence_id, entry["patient_id"]))
            pairs.append(tuple(loaded))
        patients.append(Patient(str(entry["patient_id"]), pairs, entry.get("profile", {})))
    return patients


# ---------------------------------------------------------------------------
# LOO-CV


@dataclass
class FoldReport:
    fold_index: int
    held_out_patient: str
    weights: WeightVector
    effect_size: float
    train_frames: int
    eval_frames: int
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"fold_index": self.fold_index, "held_out_patient": self.held_out_patient,
                "weights": self.weights.to_dict(), "effect_size": self.effect_size,
                "train_frames": self.train_frames, "eval_frames": self.eval_frames,
                "flags": list(self.flags)}


def _features_for(seq: FrameSequence, jobs: int) -> list:
    def one(img):
        try:
            return extract_features(img, frame_id=img.source_id)
        except DegenerateFitError as exc:
            return exc
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, seq.frames))
    return [one(f) for f in seq.frames]


def effect_size(pairs_features: Sequence[tuple[list, list]], w: WeightVector,
                skip_frames: int = 0) -> float:
    """``(mean qi_post - mean qi_pre) / pooled std`` over one patient's frames."""
    pre_q, post_q = [], []
    for pre_f, post_f in pairs_features:
        pre_q.extend(report_from_features(pre_f, w, skip_frames).qi_values)
        post_q.extend(report_from_features(post_f, w, skip_frames).qi_values)
    pooled = np.concatenate([pre_q, post_q])
    sd = float(np.std(pooled))
    diff = float(np.mean(post_q) - np.mean(pre_q))
    return diff / sd if sd > 0 else 0.0


def _valid_rows(feats: list) -> list[FrameFeatureVector]:
    return [f for f in feats if isinstance(f, FrameFeatureVector)]


def loocv_fit(patients: Sequence[Patient], seed: int = DEFAULT_SEED, jobs: int = 1,
              skip_frames: int = 0, features: Optional[dict] = None
              ) -> tuple[WeightVector, list[FoldReport]]:
    """Leave-one-patient-out weight fitting.

    Each fold clusters the pooled pre+post frame features of every other
    patient and derives weights; the fold's effect size is measured on the
    held-out patient. Every fold's weights are then evaluated on every
    held-out patient, and the candidate with the highest mean effect size
    becomes the global weight vector (ties: lowest fold index). Patients are
    processed in ``patient_id`` order, so input order does not matter.
    """
    if len(patients) < 2:
        raise ValueError("LOO-CV needs at least 2 patients")
    patients = sorted(patients, key=lambda p: p.patient_id)
    ids = [p.patient_id for p in patients]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate patient ids")

    if features is None:
        features = {}
    for p in patients:
        if p.patient_id not in features:
            features[p.patient_id] = [(_features_for(pre, jobs), _features_for(post, jobs))
                                      for pre, post in p.pairs]

    def rows_of(pid):
        out = []
        for pre_f, post_f in features[pid]:
            out.extend(_valid_rows(pre_f))
            out.extend(_valid_rows(post_f))
        return out

    folds = []
    for i, held in enumerate(ids):
        train = [r for pid in ids if pid != held for r in rows_of(pid)]
        evaluation = rows_of(held)
        train_ids = {r.frame_id for r in train}
        if train_ids & {r.frame_id for r in evaluation}:
            raise AssertionError(f"fold {i}: training and evaluation frames overlap")
        w, _, _ = fit_weights([r.features for r in train], seed=seed,
                              frame_ids=[r.frame_id for r in train])
        w = WeightVector(w.w1, w.w2, w.w3, seed=seed, flags=w.flags,
                         provenance=tuple(pid for pid in ids if pid != held))
        es = effect_size(features[held], w, skip_frames)
        folds.append(FoldReport(i, held, w, es, len(train), len(evaluation), w.flags))

    cross = np.array([[effect_size(features[pid], f.weights, skip_frames) for pid in ids]
                      for f in folds])
    scores = cross.mean(axis=1)
    best = int(np.flatnonzero(scores == scores.max())[0])
    chosen = folds[best].weights
    global_w = WeightVector(chosen.w1, chosen.w2, chosen.w3, seed=seed,
                            flags=chosen.flags, provenance=(f"fold{best}", *chosen.provenance))
    return global_w, folds


# ---------------------------------------------------------------------------
# monotonicity probe


@dataclass
class ProbeResult:
    kind: str
    levels: tuple[float, ...]
    qi: list[Optional[float]]
    spearman: float
    degenerate: list[dict] = field(default_factory=list)


def monotonicity_probe(clean: Image, kind: str, levels: Sequence[float], w,
                       seed: int = 0) -> ProbeResult:
    """Score increasingly distorted copies of ``clean``; report Spearman(level, qi).

    Each copy is scored as a single-frame sequence, which makes the
    direction fusion uniform.
    """
    levels = tuple(float(v) for v in levels)
    if len(levels) < 3:
        raise ValueError("monotonicity probe needs at least 3 levels")
    if levels[0] != 0 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("levels must start at 0 and be strictly ascending")
    qi: list[Optional[float]] = []
    degenerate = []
    for lvl in levels:
        img = simulate_distortion(clean, DistortionSpec(kind, lvl, seed))
        try:
            fv = extract_features(img, frame_id=f"{kind}@{lvl}")
        except DegenerateFitError as exc:
            degenerate.append({"level": lvl, "direction": exc.direction, "reason": exc.reason})
            qi.append(None)
            continue
        qi.append(report_from_features([fv], w).per_frame[0].qi)
    ok = [(lv, q) for lv, q in zip(levels, qi) if q is not None]
    rho = float(spearmanr([a for a, _ in ok], [b for _, b in ok])[0]) if len(ok) >= 3 else float("nan")
    return ProbeResult(kind, levels, qi, rho, degenerate)
