"""Spectral-domain data reassembly.

A (L, H, W) cube becomes an H x (L*W) plane in which the L columns
``w*L .. w*L + L - 1`` hold the full spectrum of lateral position ``w``,
wavelength-ascending. The mapping is a pure permutation, so the inverse is
exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .imaging import SpectralImage, as_plane


@dataclass(frozen=True)
class SddrImage:
    plane: np.ndarray
    n_wavelengths: int
    width: int
    wavelengths_nm: tuple = ()
    pitch_axial_mm: float = 0.195
    pitch_lateral_mm: float = 0.195

    def __post_init__(self):
        plane = as_plane(self.plane).copy()
        plane.setflags(write=False)
        object.__setattr__(self, "plane", plane)

    def with_plane(self, plane) -> "SddrImage":
        return SddrImage(
            plane,
            self.n_wavelengths,
            self.width,
            self.wavelengths_nm,
            self.pitch_axial_mm,
            self.pitch_lateral_mm,
        )

    def group_bounds(self) -> list[tuple[int, int]]:
        """Column ranges ``[start, stop)`` of the per-pixel spectral groups."""
        lam = self.n_wavelengths
        return [(w * lam, (w + 1) * lam) for w in range(self.width)]


def sddr_forward(img: SpectralImage) -> SddrImage:
    lam, h, w = img.shape
    # out[h, w*lam + j] = in[j, h, w]
    plane = np.transpose(img.data, (1, 2, 0)).reshape(h, w * lam)
    return SddrImage(
        plane, lam, w, img.wavelengths_nm, img.pitch_axial_mm, img.pitch_lateral_mm
    )


def sddr_inverse(s: SddrImage) -> SpectralImage:
    lam = s.n_wavelengths
    h, cols = s.plane.shape
    if lam < 1 or cols % lam != 0 or cols // lam != s.width:
        raise ShapeMismatch(f"{cols} columns cannot be split into {lam} wavelengths x {s.width}")
    cube = s.plane.reshape(h, s.width, lam).transpose(2, 0, 1)
    return SpectralImage(cube, s.wavelengths_nm or (), s.pitch_axial_mm, s.pitch_lateral_mm)


def sddr_plane(plane, n_wavelengths: int, **meta) -> SddrImage:
    """Wrap a bare plane as an SDDR image, checking column divisibility."""
    plane = as_plane(plane)
    cols = plane.shape[1]
    if n_wavelengths < 1 or cols % n_wavelengths:
        raise ShapeMismatch(f"{cols} columns is not a multiple of {n_wavelengths}")
    return SddrImage(plane, n_wavelengths, cols // n_wavelengths, **meta)
