"""Spectral image data model, normalization and the ``.spa`` container.

Cubes are stored wavelength-major, then row (depth), then column (lateral),
both in memory and on disk. Computation is float64; files hold float32.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    ConstantImageWarning,
    HeaderMismatch,
    InvalidImage,
    UnsupportedDtype,
)

MAGIC = b"SPAIMG01"
DTYPE_TAG = "f32le"
ORDER_TAG = "wavelength,row,col"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def as_plane(x) -> np.ndarray:
    """Validate a 2D plane and return it as a float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidImage(f"plane must be 2D and non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidImage("plane contains non-finite values")
    return a


@dataclass(frozen=True)
class SpectralImage:
    """A (wavelength, row, col) photoacoustic cube.

    ``pitch_axial_mm`` is the depth covered by one pixel row and
    ``pitch_lateral_mm`` the width of one pixel column.
    """

    data: np.ndarray
    wavelengths_nm: tuple = ()
    pitch_axial_mm: float = 0.195
    pitch_lateral_mm: float = 0.195
    channels: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvalidImage(f"cube must have shape (L, H, W) with L, H, W >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidImage("cube contains NaN or Inf")
        wl = self.wavelengths_nm
        if wl is None or len(wl) == 0:
            wl = tuple(float(i + 1) for i in range(data.shape[0]))
        wl = tuple(float(v) for v in wl)
        if len(wl) != data.shape[0]:
            raise InvalidImage(f"{len(wl)} wavelengths given for {data.shape[0]} frames")
        if any(v <= 0 for v in wl) or any(b <= a for a, b in zip(wl, wl[1:])):
            raise InvalidImage("wavelengths must be positive and strictly increasing")
        if not (self.pitch_axial_mm > 0 and self.pitch_lateral_mm > 0):
            raise InvalidImage("pitches must be positive")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "wavelengths_nm", wl)
        object.__setattr__(self, "pitch_axial_mm", float(self.pitch_axial_mm))
        object.__setattr__(self, "pitch_lateral_mm", float(self.pitch_lateral_mm))
        if self.channels is not None:
            object.__setattr__(self, "channels", tuple(str(c) for c in self.channels))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def n_wavelengths(self) -> int:
        return self.data.shape[0]

    def with_data(self, data) -> "SpectralImage":
        """Same metadata, new pixel values."""
        return SpectralImage(
            data, self.wavelengths_nm, self.pitch_axial_mm, self.pitch_lateral_mm, self.channels
        )

    def select(self, indices: Sequence[int]) -> "SpectralImage":
        """Sub-cube holding only the given wavelength indices."""
        idx = list(indices)
        return SpectralImage(
            self.data[idx],
            [self.wavelengths_nm[i] for i in idx],
            self.pitch_axial_mm,
            self.pitch_lateral_mm,
        )


@dataclass(frozen=True)
class NormalizationRecord:
    offset: float
    scale: float
    constant: bool = False

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.offset) / self.scale

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale + self.offset


def normalize(img: SpectralImage) -> tuple[SpectralImage, NormalizationRecord]:
    """Affinely map the cube onto [0, 1].

    A constant cube is returned unchanged with ``scale=1`` and
    ``constant=True``; a :class:`ConstantImageWarning` is emitted.
    """
    lo = float(img.data.min())
    hi = float(img.data.max())
    if hi == lo:
        warnings.warn("image is constant; normalization skipped", ConstantImageWarning, stacklevel=2)
        return img, NormalizationRecord(offset=0.0, scale=1.0, constant=True)
    rec = NormalizationRecord(offset=lo, scale=hi - lo)
    return img.with_data(rec.apply(img.data)), rec


def denormalize(img: SpectralImage, rec: NormalizationRecord) -> SpectralImage:
    return img.with_data(rec.invert(img.data))


# --- .spa container -------------------------------------------------------


def _header_bytes(img: SpectralImage) -> bytes:
    header = {
        "dims": list(img.shape),
        "dtype": DTYPE_TAG,
        "order": ORDER_TAG,
        "wavelengths_nm": list(img.wavelengths_nm),
        "pitch_mm": {"axial": img.pitch_axial_mm, "lateral": img.pitch_lateral_mm},
    }
    if img.channels is not None:
        header["channels"] = list(img.channels)
    return json.dumps(header, separators=(",", ":")).encode("utf-8")


def write_spa(path, img: SpectralImage) -> None:
    head = _header_bytes(img)
    payload = np.ascontiguousarray(img.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(payload)


def read_spa(path) -> SpectralImage:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise BadMagic(f"{path}: not a .spa file")
    (n,) = struct.unpack("<I", raw[8:12])
    if 12 + n > len(raw):
        raise HeaderMismatch(f"{path}: header length {n} exceeds file size")
    try:
        header = json.loads(raw[12 : 12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderMismatch(f"{path}: unreadable header ({exc})") from exc
    if header.get("dtype") != DTYPE_TAG:
        raise UnsupportedDtype(f"{path}: dtype {header.get('dtype')!r} is not supported")
    if header.get("order", ORDER_TAG) != ORDER_TAG:
        raise HeaderMismatch(f"{path}: unsupported order {header.get('order')!r}")
    dims = header.get("dims")
    if not isinstance(dims, list) or len(dims) != 3 or any(int(d) < 1 for d in dims):
        raise HeaderMismatch(f"{path}: bad dims {dims!r}")
    payload = raw[12 + n :]
    count = int(np.prod(dims))
    if len(payload) != 4 * count:
        raise HeaderMismatch(
            f"{path}: header dims {dims} need {count} values, payload holds {len(payload) / 4:g}"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(dims)
    pitch = header.get("pitch_mm", {})
    return SpectralImage(
        data,
        header.get("wavelengths_nm") or (),
        pitch.get("axial", 0.195),
        pitch.get("lateral", 0.195),
        header.get("channels"),
    )


def write_pgm(path, plane) -> None:
    """Binary 16-bit PGM, scaled so the plane maximum maps to 65535.

    Negative values are clipped to zero.
    """
    a = np.clip(as_plane(plane), 0.0, None)
    peak = a.max()
    scaled = np.zeros_like(a) if peak == 0 else a / peak * 65535.0
    pix = np.round(scaled).astype(">u2")
    rows, cols = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        fh.write(pix.tobytes())
