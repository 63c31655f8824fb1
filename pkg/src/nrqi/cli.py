"""Command-line front end: ``nrqi <command> ...``.

Commands: preprocess, score, fit-weights, compare, simulate, features, pdfmc.

Every command writes its outputs only after all inputs have been read and
validated. Failures are reported as JSON lines (``--errors``, default
stderr) next to the usual log messages. Exit codes: 0 success, 1 data or
processing error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .aggd import DegenerateFitError, write_features_csv
from .baselines import RegionSpec, UndefinedCNRError, cnr, entropy, metric_diff_report, tenengrad
from .clustering import DEFAULT_SEED, WeightVector
from .harness import CorpusConfig, DistortionSpec, generate_corpus, load_corpus, loocv_fit, \
    simulate_distortion, write_corpus
from .image_io import FrameSequence, Image, ImageFormatError, SequenceError, load_image, \
    load_sequence, save_raw_f32, to_unit_range, write_manifest
from .mscn import mscn, pdfmc_histogram
from .preprocess import PreprocessConfig, preprocess_pipeline
from .quality import score_sequence, sequence_features

log = logging.getLogger("nrqi")

SEED_ENV = "NRQI_SEED"
EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class ErrorSink:
    """Collects machine-readable error records and mirrors them as JSON lines."""

    def __init__(self, stream):
        self.stream = stream
        self.records: list[dict] = []

    def emit(self, command: str, kind: str, message: str, **extra) -> None:
        rec = {"command": command, "error": kind, "message": message, **extra}
        self.records.append(rec)
        self.stream.write(json.dumps(rec, sort_keys=True) + "\n")
        self.stream.flush()


def _dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {path} is not valid JSON: {exc}") from None


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _preprocess_config(args) -> PreprocessConfig:
    """Defaults, then flags, then ``--config`` JSON (the JSON wins)."""
    d = PreprocessConfig().to_dict()
    if getattr(args, "gamma", None) is not None:
        d["gamma"] = args.gamma
    if getattr(args, "sigma", None) is not None:
        d["gaussian_sigma"] = None if args.sigma <= 0 else args.sigma
    if getattr(args, "no_normalize", False):
        d["normalize"] = False
    if getattr(args, "config", None):
        d.update(_load_json(args.config, "config").get("preprocess", {}))
    try:
        return PreprocessConfig.from_dict(d)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_weights(path) -> WeightVector:
    doc = _load_json(path, "weights")
    try:
        return WeightVector.from_dict(doc.get("weights", doc))
    except (ValueError, AttributeError) as exc:
        raise UsageError(f"invalid weights file {path}: {exc}") from None


def _load_seq(path) -> FrameSequence:
    _require_file(path, "manifest")
    return load_sequence(path)


def _unit(img: Image) -> Image:
    return Image(to_unit_range(img), value_range="normalized", source_id=img.source_id,
                 degenerate=img.degenerate)


def _apply_pipeline(img: Image, cfg: PreprocessConfig) -> Image:
    if not cfg.normalize:
        img = _unit(img)
    return preprocess_pipeline(img, cfg)


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args, errors: ErrorSink) -> int:
    cfg = _preprocess_config(args)
    seq = _load_seq(args.manifest)
    out_dir = Path(args.out_dir)
    processed, frame_records = [], []
    for i, img in enumerate(seq.frames):
        try:
            out = _apply_pipeline(img, cfg)
        except ValueError as exc:
            errors.emit("preprocess", "frame_failed", str(exc), frame_index=i)
            frame_records.append({"index": i, "flags": ["failed"]})
            if not args.keep_going:
                return EXIT_ERROR
            continue
        processed.append((i, out))
        frame_records.append({"index": i, "flags": ["degenerate"] if out.degenerate else []})

    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, out in processed:
        p = out_dir / f"frame{i:04d}.f32"
        save_raw_f32(out.pixels, p, value_range="normalized")
        paths.append(p)
    if paths:
        write_manifest(out_dir / "manifest.json", paths, f"{seq.sequence_id}_preprocessed", seq.patient_id)
    _dump_json({"tool": "nrqi", "version": __version__, "command": "preprocess",
                "input_manifest": str(args.manifest), "sequence_id": seq.sequence_id,
                "config": cfg.to_dict(), "frames": frame_records},
               out_dir / "provenance.json")
    return EXIT_ERROR if errors.records else EXIT_OK


def cmd_score(args, errors: ErrorSink) -> int:
    w = _load_weights(args.weights)
    seq = _load_seq(args.manifest)
    pp = _preprocess_config(args) if args.preprocess else None
    try:
        report = score_sequence(seq, w, pp=pp, skip_frames=args.skip_frames, jobs=args.jobs)
    except ValueError as exc:
        errors.emit("score", "scoring_failed", str(exc), sequence_id=seq.sequence_id)
        return EXIT_ERROR
    for rec in report.invalid:
        errors.emit("score", "degenerate_frame", rec["reason"], **{k: v for k, v in rec.items() if k != "reason"})
    if report.invalid and not args.keep_going:
        return EXIT_ERROR
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    if args.csv:
        report.write_csv(args.csv)
    return EXIT_OK


def cmd_fit_weights(args, errors: ErrorSink) -> int:
    _require_file(args.corpus, "corpus manifest")
    patients = load_corpus(args.corpus)
    if len(patients) < 2:
        raise UsageError(f"fit-weights needs at least 2 patients, corpus has {len(patients)}")
    w, folds = loocv_fit(patients, seed=args.seed, jobs=args.jobs, skip_frames=args.skip_frames)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(w.to_dict(), out)
    if args.folds:
        _dump_json({"seed": args.seed, "folds": [f.to_dict() for f in folds]}, args.folds)
    return EXIT_OK


def _frame_metrics(seq: FrameSequence, regions: RegionSpec, errors: ErrorSink) -> dict:
    m = {"cnr": [], "tenengrad": [], "entropy": []}
    for i, img in enumerate(seq.frames):
        u = _unit(img)
        try:
            m["cnr"].append(cnr(u, regions))
        except UndefinedCNRError as exc:
            errors.emit("compare", "undefined_cnr", str(exc), sequence_id=seq.sequence_id, frame_index=i)
            m["cnr"].append(float("nan"))
        m["tenengrad"].append(tenengrad(u))
        m["entropy"].append(entropy(u))
    return m


def _compare_pair(pre: FrameSequence, post: FrameSequence, w: WeightVector, regions: RegionSpec,
                  args, errors: ErrorSink) -> Optional[tuple[dict, dict]]:
    if len(pre) != len(post):
        raise SequenceError(f"frame count mismatch: {pre.sequence_id} has {len(pre)}, "
                            f"{post.sequence_id} has {len(post)}")
    values = []
    for seq in (pre, post):
        report = score_sequence(seq, w, skip_frames=args.skip_frames, jobs=args.jobs)
        qi = np.full(len(seq), np.nan)
        for rec in report.invalid:
            errors.emit("compare", "degenerate_frame", rec["reason"], sequence_id=seq.sequence_id,
                        frame_index=rec["index"])
        valid = [i for i in range(len(seq)) if i not in {r["index"] for r in report.invalid}]
        qi[valid] = report.qi_values
        metrics = _frame_metrics(seq, regions, errors)
        metrics["qi"] = list(qi)
        values.append(metrics)
    return values[0], values[1]


def _write_plot_svg(path, rows, summary) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "nrqi"
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    idx = [r[0] for r in rows]
    ax1.plot(idx, [r[1] for r in rows], label="pre")
    ax1.plot(idx, [r[2] for r in rows], label="post")
    ax1.set_xlabel("frame")
    ax1.set_ylabel("QI")
    ax1.legend()
    names = [m["name"] for m in summary]
    ax2.bar(names, [m["mean"] for m in summary], yerr=[m["std"] for m in summary])
    ax2.set_ylabel("normalized difference")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_compare(args, errors: ErrorSink) -> int:
    w = _load_weights(args.weights) if args.weights else WeightVector.uniform(flags=("default_uniform",))
    regions = RegionSpec.from_dict(_load_json(args.regions, "regions")) if args.regions else RegionSpec()
    if args.corpus:
        _require_file(args.corpus, "corpus manifest")
        pairs = [pair for p in load_corpus(args.corpus) for pair in p.pairs]
    else:
        if not (args.pre and args.post):
            raise UsageError("compare needs --pre and --post manifests, or --corpus")
        pairs = [(_load_seq(args.pre), _load_seq(args.post))]

    pre_all: dict[str, list] = {}
    post_all: dict[str, list] = {}
    plot_rows = []
    for pre, post in pairs:
        a, b = _compare_pair(pre, post, w, regions, args, errors)
        for name in ("qi", "cnr", "tenengrad", "entropy"):
            pre_all.setdefault(name, []).extend(a[name])
            post_all.setdefault(name, []).extend(b[name])
        for i, (qa, qb) in enumerate(zip(a["qi"], b["qi"])):
            plot_rows.append((len(plot_rows), qa, qb, pre.sequence_id, i))
    if errors.records and not args.keep_going:
        return EXIT_ERROR

    # frames undefined in either corpus are dropped pairwise per metric
    pre_clean, post_clean = {}, {}
    for name in pre_all:
        a, b = np.array(pre_all[name]), np.array(post_all[name])
        keep = np.isfinite(a) & np.isfinite(b)
        pre_clean[name], post_clean[name] = a[keep], b[keep]
    report = metric_diff_report(pre_clean, post_clean)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["weights_used"] = w.to_dict()
    doc["pairs"] = [{"pre": p.sequence_id, "post": q.sequence_id} for p, q in pairs]
    _dump_json(doc, out)
    if args.csv:
        report.write_csv(args.csv)
    if args.plot_csv:
        with open(args.plot_csv, "w", newline="") as fh:
            cw = csv.writer(fh)
            cw.writerow(["frame_index", "sequence_id", "sequence_frame", "qi_pre", "qi_post"])
            for k, qa, qb, sid, i in plot_rows:
                cw.writerow([k, sid, i, repr(float(qa)), repr(float(qb))])
    if args.svg:
        _write_plot_svg(args.svg, [(r[0], r[1], r[2]) for r in plot_rows],
                        [m.to_dict() for m in report.metrics])
    return EXIT_ERROR if errors.records else EXIT_OK


def cmd_simulate(args, errors: ErrorSink) -> int:
    if args.input:
        if not args.kind or args.level is None or not args.out:
            raise UsageError("single-image simulate needs --kind, --level and --out")
        img = load_image(_require_file(args.input, "input image"))
        try:
            spec = DistortionSpec(args.kind, args.level, args.seed)
            out = simulate_distortion(_unit(img), spec)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        save_raw_f32(out.pixels, args.out, value_range="normalized")
        return EXIT_OK
    if not args.out_dir:
        raise UsageError("corpus simulate needs --out-dir")
    cfg = CorpusConfig(seed=args.seed)
    if args.config:
        cfg = CorpusConfig.from_dict({**cfg.to_dict(), **_load_json(args.config, "config").get("corpus", {})})
    write_corpus(generate_corpus(cfg), args.out_dir, cfg)
    return EXIT_OK


def cmd_features(args, errors: ErrorSink) -> int:
    seq = _load_seq(args.manifest)
    pp = _preprocess_config(args) if args.preprocess else None
    rows = []
    for i, r in enumerate(sequence_features(seq, pp, jobs=args.jobs)):
        if isinstance(r, DegenerateFitError):
            errors.emit("features", "degenerate_frame", r.reason, frame_index=i, direction=r.direction)
        else:
            rows.append(r)
    if errors.records and not args.keep_going:
        return EXIT_ERROR
    write_features_csv(rows, args.out)
    return EXIT_ERROR if errors.records else EXIT_OK


def cmd_pdfmc(args, errors: ErrorSink) -> int:
    if args.manifest:
        frames = list(_load_seq(args.manifest).frames)
    else:
        frames = [load_image(_require_file(args.input, "input image"))]
    pp = _preprocess_config(args) if args.preprocess else None
    hists = []
    for i, img in enumerate(frames):
        if pp is not None:
            img = _apply_pipeline(img, pp)
        hists.append((i, pdfmc_histogram(mscn(_unit(img)), bins=args.bins)))
    with open(args.out, "w", newline="") as fh:
        cw = csv.writer(fh)
        cw.writerow(["frame_index", "bin_center", "density"])
        for i, h in hists:
            for c, d in zip(h.bin_centers, h.densities):
                cw.writerow([i, repr(float(c)), repr(float(d))])
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        log.warning("ignoring non-integer %s=%r", SEED_ENV, raw)
        return DEFAULT_SEED


def _add_pp_flags(p: argparse.ArgumentParser, optional: bool = False) -> None:
    if optional:
        p.add_argument("--preprocess", action="store_true", help="run the preprocessing pipeline first")
    p.add_argument("--gamma", type=float, help="gamma exponent (default 0.8)")
    p.add_argument("--sigma", type=float, help="Gaussian filter sigma; <= 0 disables (default 1.0)")
    p.add_argument("--no-normalize", action="store_true", help="skip min-max normalization")
    p.add_argument("--config", help="JSON config; its 'preprocess' object overrides the flags")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrqi", description="No-reference MR frame quality index.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=_default_seed(),
                        help=f"random seed (default ${SEED_ENV} or {DEFAULT_SEED})")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for per-frame work")
    common.add_argument("--errors", help="append JSON-lines error records here (default stderr)")
    common.add_argument("--continue", dest="keep_going", action="store_true",
                        help="keep going after frame-level failures")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="normalize, gamma-correct and smooth frames")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    _add_pp_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("score", parents=[common], help="score a sequence")
    p.add_argument("manifest")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--csv", help="per-frame CSV")
    p.add_argument("--skip-frames", type=int, default=0)
    _add_pp_flags(p, optional=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fit-weights", parents=[common], help="LOO-CV weight fitting on a corpus")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="weights JSON")
    p.add_argument("--folds", help="fold reports JSON")
    p.add_argument("--skip-frames", type=int, default=0)
    p.set_defaults(func=cmd_fit_weights)

    p = sub.add_parser("compare", parents=[common], help="normalized pre/post metric differences")
    p.add_argument("--pre")
    p.add_argument("--post")
    p.add_argument("--corpus")
    p.add_argument("--weights", help="weights JSON (default: uniform)")
    p.add_argument("--regions", help="CNR regions JSON (default: Otsu split)")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--csv")
    p.add_argument("--plot-csv")
    p.add_argument("--svg")
    p.add_argument("--skip-frames", type=int, default=0)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", parents=[common], help="distort one image or generate a corpus")
    p.add_argument("--input")
    p.add_argument("--kind", choices=("gaussian_noise", "gaussian_blur", "bias_field", "gamma_shift"))
    p.add_argument("--level", type=float)
    p.add_argument("--out")
    p.add_argument("--out-dir")
    p.add_argument("--config", help="JSON config with a 'corpus' object")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("features", parents=[common], help="dump per-frame AGGD features")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    _add_pp_flags(p, optional=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("pdfmc", parents=[common], help="dump MSCN histograms")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--input")
    p.add_argument("--bins", type=int, default=101)
    p.add_argument("--out", required=True)
    _add_pp_flags(p, optional=True)
    p.set_defaults(func=cmd_pdfmc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    stream = open(args.errors, "a") if args.errors else sys.stderr
    errors = ErrorSink(stream)
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if getattr(args, "skip_frames", 0) < 0:
            raise UsageError("--skip-frames must be >= 0")
        return args.func(args, errors)
    except UsageError as exc:
        errors.emit(args.command, "usage", str(exc))
        return EXIT_USAGE
    except (SequenceError, ImageFormatError, DegenerateFitError, ValueError, OSError) as exc:
        errors.emit(args.command, type(exc).__name__, str(exc))
        return EXIT_ERROR
    finally:
        if stream is not sys.stderr:
            stream.close()


if __name__ == "__main__":
    sys.exit(main())
