"""Grayscale image and frame-sequence I/O.

Supported on-disk formats:

* PGM (binary ``P5``), maxval 255 or 65535
* PNG grayscale, 8 or 16 bit
* raw little-endian float32 with a JSON sidecar ``<file>.json`` holding
  ``{"width": .., "height": ..}`` (and optionally ``value_range``)

Loading never rescales. Integer rasters keep their raw code values, and
normalization is an explicit later step (see :mod:`nrqi.preprocess`).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from PIL import Image as PILImage

PathLike = Union[str, Path]

VALUE_RANGES = ("normalized", "uint8", "uint16", "float")
FORMATS = ("pgm", "png", "raw-f32")

_MAXVAL = {"uint8": 255, "uint16": 65535}


class ImageFormatError(ValueError):
    """Malformed, truncated or unsupported image file."""


class SequenceError(ValueError):
    """Invalid frame manifest or inconsistent frame set."""


@dataclass(frozen=True, eq=False)
class Image:
    """Immutable 2-D grayscale raster.

    ``pixels`` is stored as a read-only float64 array of shape
    ``(height, width)``. ``value_range`` declares the domain of the values:
    ``"normalized"`` means [0, 1], ``"uint8"``/``"uint16"`` are raw integer
    code values, and ``"float"`` is an unconstrained real field (e.g. an
    exported MSCN plane).
    """

    pixels: np.ndarray
    value_range: str = "normalized"
    source_id: str = ""
    degenerate: bool = False

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {arr.shape}")
        if self.value_range not in VALUE_RANGES:
            raise ValueError(f"unknown value_range {self.value_range!r}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite pixel values")
        if self.value_range == "normalized":
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError("normalized image has pixels outside [0, 1]")
        elif self.value_range in _MAXVAL:
            if arr.min() < 0 or arr.max() > _MAXVAL[self.value_range] or np.any(arr != np.round(arr)):
                raise ValueError(f"pixels are not valid {self.value_range} code values")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def bit_depth(self) -> Optional[int]:
        return {"uint8": 8, "uint16": 16}.get(self.value_range)

    def with_pixels(self, pixels, **changes) -> "Image":
        """Copy of this image with new pixel data (and optional metadata changes)."""
        return replace(self, pixels=pixels, **changes)


@dataclass(frozen=True)
class FrameSequence:
    frames: tuple[Image, ...]
    sequence_id: str = ""
    patient_id: str = ""

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise SequenceError("a frame sequence needs at least one frame")
        shape = frames[0].shape
        for f in frames[1:]:
            if f.shape != shape:
                raise SequenceError(
                    f"dimension mismatch in sequence {self.sequence_id!r}: "
                    f"{f.source_id or 'frame'} is {f.width}x{f.height}, expected {shape[1]}x{shape[0]}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)


def to_unit_range(img: Image) -> np.ndarray:
    """Pixels mapped to [0, 1] by fixed code-value scaling (no min/max stretch).

    Integer images are divided by their maxval. Float images must already lie
    in [0, 1].
    """
    if img.value_range in _MAXVAL:
        return img.pixels / _MAXVAL[img.value_range]
    if img.value_range == "float" and (img.pixels.min() < 0.0 or img.pixels.max() > 1.0):
        raise ValueError(f"{img.source_id or 'image'}: float pixels outside [0, 1]; normalize first")
    return img.pixels


def infer_format(path: PathLike) -> str:
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return "pgm"
    if suffix == ".png":
        return "png"
    if suffix in (".f32", ".raw"):
        return "raw-f32"
    raise ImageFormatError(f"cannot infer image format from {str(path)!r}")


# ---------------------------------------------------------------------------
# PGM

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def _decode_pgm(data: bytes, source_id: str) -> Image:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError(f"{source_id}: malformed PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ImageFormatError(f"{source_id}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(f"{source_id}: malformed PGM header") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{source_id}: invalid PGM dimensions {width}x{height}")
    if maxval not in (255, 65535):
        raise ImageFormatError(f"{source_id}: unsupported PGM maxval {maxval}")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or data[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise ImageFormatError(f"{source_id}: truncated PGM payload")
    pos += 1
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    payload = data[pos:]
    if len(payload) < expected:
        raise ImageFormatError(
            f"{source_id}: truncated PGM payload ({len(payload)} of {expected} bytes)"
        )
    arr = np.frombuffer(payload[:expected], dtype=dtype).reshape(height, width)
    return Image(arr, value_range="uint16" if maxval == 65535 else "uint8", source_id=source_id)


def _encode_pgm(img: Image) -> bytes:
    if img.value_range == "uint16":
        maxval, raster = 65535, img.pixels.astype(">u2")
    elif img.value_range == "uint8":
        maxval, raster = 255, img.pixels.astype("u1")
    else:
        raise ImageFormatError("PGM output needs an integer (uint8/uint16) image")
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    return header + raster.tobytes()


# ---------------------------------------------------------------------------
# PNG


def _decode_png(path: Path, source_id: str) -> Image:
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{source_id}: cannot decode PNG ({exc})") from None
    if mode == "L":
        return Image(arr, value_range="uint8", source_id=source_id)
    if mode.startswith("I;16") or mode == "I":
        if arr.min() < 0 or arr.max() > 65535:
            raise ImageFormatError(f"{source_id}: PNG values exceed 16 bits")
        return Image(arr.astype(np.uint16), value_range="uint16", source_id=source_id)
    raise ImageFormatError(f"{source_id}: unsupported PNG mode {mode!r} (need 8/16-bit grayscale)")


def _encode_png(img: Image, path: Path) -> None:
    if img.value_range == "uint8":
        im = PILImage.fromarray(img.pixels.astype(np.uint8), mode="L")
    elif img.value_range == "uint16":
        im = PILImage.fromarray(img.pixels.astype(np.uint16))
    else:
        raise ImageFormatError("PNG output needs an integer (uint8/uint16) image")
    im.save(path, format="PNG")


# ---------------------------------------------------------------------------
# raw float32 + sidecar


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _decode_raw(path: Path, source_id: str) -> Image:
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
        width, height = int(meta["width"]), int(meta["height"])
    except FileNotFoundError:
        raise ImageFormatError(f"{source_id}: missing sidecar {side.name}") from None
    except (ValueError, KeyError, TypeError):
        raise ImageFormatError(f"{source_id}: malformed sidecar {side.name}") from None
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{source_id}: invalid dimensions {width}x{height}")
    data = path.read_bytes()
    expected = width * height * 4
    if len(data) != expected:
        raise ImageFormatError(
            f"{source_id}: raw payload has {len(data)} bytes, expected {expected}"
        )
    arr = np.frombuffer(data, dtype="<f4").reshape(height, width)
    value_range = meta.get("value_range", "float")
    if value_range not in ("normalized", "float"):
        raise ImageFormatError(f"{source_id}: unsupported sidecar value_range {value_range!r}")
    return Image(arr, value_range=value_range, source_id=source_id)


def save_raw_f32(pixels: np.ndarray, path: PathLike, value_range: str = "float") -> None:
    """Write an arbitrary 2-D real field as raw float32 plus its sidecar."""
    path = Path(path)
    arr = np.asarray(pixels, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("raw-f32 export expects a 2-D field")
    path.write_bytes(arr.tobytes())
    meta = {"width": int(arr.shape[1]), "height": int(arr.shape[0]), "value_range": value_range}
    sidecar_path(path).write_text(json.dumps(meta, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# public API


def load_image(path: PathLike, format: Optional[str] = None) -> Image:
    path = Path(path)
    fmt = format or infer_format(path)
    source_id = str(path)
    if fmt not in FORMATS:
        raise ImageFormatError(f"unsupported format {fmt!r}")
    if not path.is_file():
        raise FileNotFoundError(f"image file not found: {path}")
    if fmt == "pgm":
        return _decode_pgm(path.read_bytes(), source_id)
    if fmt == "png":
        return _decode_png(path, source_id)
    return _decode_raw(path, source_id)


def save_image(img: Image, path: PathLike, format: Optional[str] = None) -> None:
    path = Path(path)
    fmt = format or infer_format(path)
    if fmt == "pgm":
        path.write_bytes(_encode_pgm(img))
    elif fmt == "png":
        _encode_png(img, path)
    elif fmt == "raw-f32":
        vr = "normalized" if img.value_range == "normalized" else "float"
        save_raw_f32(img.pixels, path, value_range=vr)
    else:
        raise ImageFormatError(f"unsupported format {fmt!r}")


def load_sequence(manifest: PathLike) -> FrameSequence:
    """Load a JSON manifest ``{sequence_id, patient_id, frames: [paths]}``.

    Relative frame paths resolve against the manifest's directory.
    """
    manifest = Path(manifest)
    try:
        doc = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise SequenceError(f"{manifest}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("frames"), list):
        raise SequenceError(f"{manifest}: manifest needs a 'frames' list")
    if not doc["frames"]:
        raise SequenceError(f"{manifest}: manifest lists no frames")
    base = manifest.parent
    frames = []
    for entry in doc["frames"]:
        frame_path = Path(entry)
        if not frame_path.is_absolute():
            frame_path = base / frame_path
        if not frame_path.is_file():
            raise SequenceError(f"{manifest}: missing frame file {entry}")
        frames.append(load_image(frame_path))
    return FrameSequence(
        tuple(frames),
        sequence_id=str(doc.get("sequence_id", manifest.stem)),
        patient_id=str(doc.get("patient_id", "")),
    )


def write_manifest(path: PathLike, frame_paths: Sequence[PathLike], sequence_id: str,
                   patient_id: str = "") -> None:
    path = Path(path)
    frames = []
    for p in frame_paths:
        p = Path(p)
        try:
            frames.append(str(p.relative_to(path.parent)))
        except ValueError:
            frames.append(str(p))
    doc = {"sequence_id": sequence_id, "patient_id": patient_id, "frames": frames}
    path.write_text(json.dumps(doc, indent=2) + "\n")
