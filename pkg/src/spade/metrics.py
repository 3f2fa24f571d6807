"""Image-quality and spectral-fidelity metrics.

PSNR and SSIM come in two variants. ``as_written`` puts the RMSE (not the
MSE) in the PSNR denominator and takes the square root of the SSIM
denominator; ``standard`` is the usual textbook form. Standard deviations are
population (ddof=0) throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    NoRoom,
    ShapeMismatch,
    TooFewWavelengths,
    WavelengthMismatch,
    ZeroVariance,
)
from .imaging import SpectralImage, as_plane

INF = math.inf


@dataclass(frozen=True)
class RegionSpec:
    """Where the SNR noise patch comes from.

    ``kind="auto"`` places a patch at the peak's depth, offset laterally by at
    least ``lateral_offset_mm`` (and never fewer than 10 pixels) toward the
    farther image edge. ``kind="explicit"`` uses ``rect = (row0, col0, row1,
    col1)``, half-open.
    """

    kind: str = "auto"
    rect: tuple | None = None
    lateral_offset_mm: float = 1.0
    depth_halfband_mm: float = 0.5
    patch_rows: int = 20
    patch_cols: int = 20

    def __post_init__(self):
        if self.kind not in ("auto", "explicit"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.kind == "explicit":
            if self.rect is None or len(self.rect) != 4:
                raise ValueError("explicit region needs rect=(row0, col0, row1, col1)")
            r0, c0, r1, c1 = self.rect
            if not (r1 > r0 >= 0 and c1 > c0 >= 0):
                raise ValueError(f"degenerate rectangle {self.rect}")


@dataclass(frozen=True)
class SnrResult:
    snr_db: float
    peak_pos: tuple[int, int]
    noise_rect: tuple[int, int, int, int]
    zero_noise: bool = False


def lateral_offset_px(pitch_lateral_mm: float, offset_mm: float = 1.0) -> int:
    return max(math.ceil(offset_mm / pitch_lateral_mm - 1e-9), 10)


def auto_noise_rect(shape, peak, pitch_axial_mm, pitch_lateral_mm, region: RegionSpec):
    rows, cols = shape
    pr, pc = peak
    ph, pw = region.patch_rows, region.patch_cols
    band = math.ceil(region.depth_halfband_mm / pitch_axial_mm - 1e-9)
    if ph > rows:
        raise NoRoom(f"patch height {ph} exceeds image height {rows}")
    r0 = min(max(pr - ph // 2, 0), rows - ph)
    # the patch must cover the peak's depth band (clipped to the image)
    if r0 > max(pr - band, 0) or r0 + ph < min(pr + band + 1, rows):
        raise NoRoom("noise patch cannot cover the peak depth band")
    off = lateral_offset_px(pitch_lateral_mm, region.lateral_offset_mm)
    if pc < cols / 2:
        c0 = pc + off
        c1 = c0 + pw
        if c1 > cols:
            raise NoRoom(f"no {ph}x{pw} patch fits {off} px right of column {pc}")
    else:
        c1 = pc - off + 1
        c0 = c1 - pw
        if c0 < 0:
            raise NoRoom(f"no {ph}x{pw} patch fits {off} px left of column {pc}")
    return (r0, c0, r0 + ph, c1)


def snr_db(x, pitch_lateral_mm: float = 0.195, region: RegionSpec | None = None,
           pitch_axial_mm: float | None = None) -> SnrResult:
    """``20 log10(|peak| / sigma_background)``.

    The peak is ``argmax |x|`` (first in row-major order on ties). A zero
    background standard deviation yields ``+inf`` with ``zero_noise=True``.
    """
    x = as_plane(x)
    region = region or RegionSpec()
    flat = int(np.argmax(np.abs(x)))
    peak = divmod(flat, x.shape[1])
    p_peak = abs(x[peak])
    if region.kind == "explicit":
        rect = tuple(int(v) for v in region.rect)
        if rect[2] > x.shape[0] or rect[3] > x.shape[1]:
            raise NoRoom(f"rectangle {rect} exceeds image {x.shape}")
    else:
        pa = pitch_lateral_mm if pitch_axial_mm is None else pitch_axial_mm
        rect = auto_noise_rect(x.shape, peak, pa, pitch_lateral_mm, region)
    r0, c0, r1, c1 = rect
    sigma = float(np.std(x[r0:r1, c0:c1]))
    if sigma == 0:
        return SnrResult(INF, peak, rect, zero_noise=True)
    if p_peak == 0:
        return SnrResult(-INF, peak, rect)
    return SnrResult(20 * math.log10(p_peak / sigma), peak, rect)


def psnr_db(test, ref, variant: str = "as_written") -> float:
    test, ref = as_plane(test), as_plane(ref)
    if test.shape != ref.shape:
        raise ShapeMismatch(f"{test.shape} vs {ref.shape}")
    mse = float(np.mean((ref - test) ** 2))
    if mse == 0:
        return INF
    peak2 = float(np.max(np.abs(ref))) ** 2
    if variant == "as_written":
        return 10 * math.log10(peak2 / math.sqrt(mse))
    if variant == "standard":
        return 10 * math.log10(peak2 / mse)
    raise ValueError(f"unknown PSNR variant {variant!r}")


def _ssim_stats(t, r, c1, c2, variant):
    mu_t, mu_r = t.mean(axis=-1), r.mean(axis=-1)
    var_t = t.var(axis=-1)
    var_r = r.var(axis=-1)
    cov = ((t - mu_t[..., None]) * (r - mu_r[..., None])).mean(axis=-1)
    num = (2 * mu_r * mu_t + c1) * (2 * cov + c2)
    den = (mu_r**2 + mu_t**2 + c1) * (var_r + var_t + c2)
    if variant == "as_written":
        den = np.sqrt(den)
    elif variant != "standard":
        raise ValueError(f"unknown SSIM variant {variant!r}")
    return num / den


def ssim(test, ref, variant: str = "as_written", c1=None, c2=None, window: int | None = None) -> float:
    """Global structural similarity.

    With ``window`` set, the statistic is averaged over all ``window x window``
    sliding windows instead. ``c1``/``c2`` default to ``(0.01 L)^2`` and
    ``(0.03 L)^2`` with ``L = max |ref|``.
    """
    test, ref = as_plane(test), as_plane(ref)
    if test.shape != ref.shape:
        raise ShapeMismatch(f"{test.shape} vs {ref.shape}")
    peak = float(np.max(np.abs(ref)))
    c1 = (0.01 * peak) ** 2 if c1 is None else c1
    c2 = (0.03 * peak) ** 2 if c2 is None else c2
    if window is None:
        val = _ssim_stats(test.ravel(), ref.ravel(), c1, c2, variant)
    else:
        tw = sliding_window_view(test, (window, window)).reshape(-1, window * window)
        rw = sliding_window_view(ref, (window, window)).reshape(-1, window * window)
        val = _ssim_stats(tw, rw, c1, c2, variant).mean()
    return float(val)


def _roi_slice(roi, shape):
    r0, c0, r1, c1 = (int(v) for v in roi)
    if not (0 <= r0 < r1 <= shape[1] and 0 <= c0 < c1 <= shape[2]):
        raise ShapeMismatch(f"ROI {roi} outside image of shape {shape[1:]}")
    return slice(r0, r1), slice(c0, c1)


def _pearson(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(np.dot(a, a)), np.sqrt(np.dot(b, b))
    if na == 0 or nb == 0:
        raise ZeroVariance("spectrum is constant")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def pearson_spectrum(test: SpectralImage, ref: SpectralImage, roi, per_pixel: bool = False) -> float:
    """Pearson r between the ROI-mean spectra of two cubes.

    ``per_pixel=True`` instead averages r over the ROI pixels, skipping pixels
    whose spectrum is constant in either cube.
    """
    if test.shape != ref.shape:
        raise ShapeMismatch(f"{test.shape} vs {ref.shape}")
    if test.n_wavelengths < 2:
        raise TooFewWavelengths("Pearson correlation needs at least two wavelengths")
    rs, cs = _roi_slice(roi, test.shape)
    t = test.data[:, rs, cs]
    r = ref.data[:, rs, cs]
    if not per_pixel:
        return _pearson(t.mean(axis=(1, 2)), r.mean(axis=(1, 2)))
    vals = []
    for tv, rv in zip(t.reshape(t.shape[0], -1).T, r.reshape(r.shape[0], -1).T):
        try:
            vals.append(_pearson(tv, rv))
        except ZeroVariance:
            continue
    if not vals:
        raise ZeroVariance("every ROI pixel has a constant spectrum")
    return float(np.mean(vals))


# --- reports -----------------------------------------------------------------


@dataclass
class WavelengthMetrics:
    nm: float
    snr_db: float
    psnr_db: float
    psnr_db_standard: float
    ssim: float
    ssim_standard: float


@dataclass
class MetricsReport:
    per_wavelength: list[WavelengthMetrics]
    pearson_r: float | None
    aggregate: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.aggregate:
            self.aggregate = {
                f"{k}_median": float(np.median([getattr(w, k) for w in self.per_wavelength]))
                for k in ("snr_db", "psnr_db", "psnr_db_standard", "ssim", "ssim_standard")
            }

    def to_dict(self) -> dict:
        return _encode_inf(
            {
                "per_wavelength": [asdict(w) for w in self.per_wavelength],
                "aggregate": dict(self.aggregate),
                "pearson_r": self.pearson_r,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def _encode_inf(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return None
        return obj
    if isinstance(obj, dict):
        return {k: _encode_inf(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_encode_inf(v) for v in obj]
    return obj


REPORT_SCHEMA = {
    "type": "object",
    "required": ["per_wavelength", "aggregate", "pearson_r"],
    "properties": {
        "per_wavelength": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["nm", "snr_db", "psnr_db", "psnr_db_standard", "ssim", "ssim_standard"],
                "properties": {
                    k: {"anyOf": [{"type": "number"}, {"enum": ["inf", "-inf"]}, {"type": "null"}]}
                    for k in ["nm", "snr_db", "psnr_db", "psnr_db_standard", "ssim", "ssim_standard"]
                },
            },
        },
        "aggregate": {"type": "object"},
        "pearson_r": {"anyOf": [{"type": "number"}, {"type": "null"}]},
    },
}


def evaluate(test: SpectralImage, ref: SpectralImage, roi=None, region: RegionSpec | None = None) -> MetricsReport:
    """Per-wavelength SNR (of ``test``), PSNR and SSIM against ``ref``, plus
    the ROI spectral correlation (None when undefined)."""
    if test.shape != ref.shape:
        raise ShapeMismatch(f"test {test.shape} vs ref {ref.shape}")
    if not np.allclose(test.wavelengths_nm, ref.wavelengths_nm):
        raise WavelengthMismatch("test and reference wavelengths differ")
    rows = []
    for j, nm in enumerate(test.wavelengths_nm):
        t, r = test.data[j], ref.data[j]
        snr = snr_db(t, test.pitch_lateral_mm, region, test.pitch_axial_mm).snr_db
        rows.append(
            WavelengthMetrics(
                nm=nm,
                snr_db=snr,
                psnr_db=psnr_db(t, r, "as_written"),
                psnr_db_standard=psnr_db(t, r, "standard"),
                ssim=ssim(t, r, "as_written"),
                ssim_standard=ssim(t, r, "standard"),
            )
        )
    if roi is None:
        roi = (0, 0, test.shape[1], test.shape[2])
    try:
        r = pearson_spectrum(test, ref, roi)
    except (ZeroVariance, TooFewWavelengths):
        r = None
    return MetricsReport(rows, r)
