"""Synthetic multi-wavelength phantoms, noise injection and spectral unmixing.

The forward model is image-domain only: each target is a disk blurred by an
anisotropic Gaussian PSF, attenuated by exponential fluence decay with depth
and scaled per wavelength by its chromophore mixture spectrum.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import (
    ConfigError,
    NonMonotoneWavelengths,
    ParseError,
    TargetOutOfBounds,
    UnknownChromophore,
    WavelengthMismatch,
    ZeroImage,
    RankDeficientLibrary,
)
from .imaging import SpectralImage

DEFAULT_WAVELENGTHS = tuple(float(v) for v in range(700, 851, 10))  # 16 bands


@dataclass(frozen=True)
class SpectrumLibrary:
    names: tuple
    wavelengths_nm: tuple
    matrix: np.ndarray  # (L, K)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        names = tuple(str(n) for n in self.names)
        wl = tuple(float(v) for v in self.wavelengths_nm)
        if m.ndim != 2 or m.shape != (len(wl), len(names)) or len(names) < 1:
            raise ConfigError(f"library matrix shape {m.shape} does not match {len(wl)} x {len(names)}")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ConfigError("library spectra must be finite and non-negative")
        if np.any(np.all(m == 0, axis=0)):
            raise ConfigError("library has an all-zero spectrum")
        if any(b <= a for a, b in zip(wl, wl[1:])):
            raise NonMonotoneWavelengths("library wavelengths must be strictly increasing")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "wavelengths_nm", wl)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownChromophore(f"{name!r} not in library {self.names}") from None

    def mixture(self, weights: dict) -> np.ndarray:
        """Spectrum of a weighted mixture of library chromophores."""
        out = np.zeros(len(self.wavelengths_nm))
        for name, w in weights.items():
            out += float(w) * self.matrix[:, self.index(name)]
        return out

    def subset(self, indices: Sequence[int]) -> "SpectrumLibrary":
        idx = list(indices)
        return SpectrumLibrary(self.names, [self.wavelengths_nm[i] for i in idx], self.matrix[idx])


def synthetic_library(wavelengths_nm: Sequence[float] = DEFAULT_WAVELENGTHS) -> SpectrumLibrary:
    """Three constructed test spectra (not physical absorption data).

    ``agent`` is a Gaussian bump at 780 nm, ``ramp_down`` descends and
    ``ramp_up`` ascends across the band. Each peaks at 1.
    """
    wl = np.asarray(wavelengths_nm, dtype=np.float64)
    lo, hi = wl.min(), wl.max()
    t = (wl - lo) / (hi - lo) if hi > lo else np.zeros_like(wl)
    agent = np.exp(-0.5 * ((wl - 780.0) / 30.0) ** 2)
    ramp_down = 1.0 - 0.8 * t
    ramp_up = 0.2 + 0.8 * t
    return SpectrumLibrary(("agent", "ramp_down", "ramp_up"), wl, np.stack([agent, ramp_down, ramp_up], axis=1))


def load_spectra_csv(path) -> SpectrumLibrary:
    """Read ``wavelength_nm,<name1>,<name2>,...`` with one numeric row per band."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    head = [h.strip() for h in rows[0]]
    if len(head) < 2 or head[0] != "wavelength_nm":
        raise ParseError(f"{path}: header must start with 'wavelength_nm' and name at least one spectrum")
    values = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(head):
            raise ParseError(f"{path}: row {i} has {len(row)} columns, expected {len(head)}")
        try:
            values.append([float(cell) for cell in row])
        except ValueError as exc:
            raise ParseError(f"{path}: row {i}: {exc}") from None
    if not values:
        raise ParseError(f"{path}: no data rows")
    arr = np.array(values)
    wl = arr[:, 0]
    if np.any(np.diff(wl) <= 0):
        raise NonMonotoneWavelengths(f"{path}: wavelengths must be strictly increasing")
    return SpectrumLibrary(tuple(head[1:]), tuple(wl), arr[:, 1:])


def write_spectra_csv(path, lib: SpectrumLibrary) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavelength_nm", *lib.names])
        for nm, row in zip(lib.wavelengths_nm, lib.matrix):
            w.writerow([repr(float(nm)), *(repr(float(v)) for v in row)])


# --- simulation ----------------------------------------------------------------


@dataclass
class Target:
    center_mm: tuple  # (lateral, depth)
    diameter_mm: float = 0.65
    weights: dict = field(default_factory=lambda: {"agent": 0.6, "ramp_down": 0.3, "ramp_up": 0.1})


def _default_targets():
    return [Target((20.8, d)) for d in (3.9, 12.0, 20.0, 28.0)]


@dataclass
class SimConfig:
    """Phantom geometry, optics surrogate and noise settings.

    ``rows``/``cols`` default to 213 so the 0.195 mm grid spans about
    41.6 mm. Target centres are ``(lateral, depth)`` in mm, with depth 0 at
    the top row.
    """

    rows: int = 213
    cols: int = 213
    pitch_axial_mm: float = 0.195
    pitch_lateral_mm: float = 0.195
    wavelengths_nm: tuple = DEFAULT_WAVELENGTHS
    targets: list = field(default_factory=_default_targets)
    psf_sigma_axial_mm: float = 0.15
    psf_sigma_lateral_mm: float = 0.25
    mu_eff_per_mm: float = 0.05
    snr_db: float | None = 20.0
    seed: int = 0
    frames: int = 1
    library: SpectrumLibrary | None = None

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError("grid must be at least 1x1")
        if not (self.pitch_axial_mm > 0 and self.pitch_lateral_mm > 0):
            raise ConfigError("pitches must be positive")
        if self.frames < 0:
            raise ConfigError("frames must be >= 0")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ConfigError("snr_db must be finite")
        self.targets = [t if isinstance(t, Target) else Target(**_target_kwargs(t)) for t in self.targets]
        self.wavelengths_nm = tuple(float(v) for v in self.wavelengths_nm)

    @property
    def extent_mm(self) -> tuple[float, float]:
        return self.cols * self.pitch_lateral_mm, self.rows * self.pitch_axial_mm

    def spectra(self) -> SpectrumLibrary:
        lib = self.library or synthetic_library(self.wavelengths_nm)
        if not np.allclose(lib.wavelengths_nm, self.wavelengths_nm):
            raise WavelengthMismatch("library wavelengths differ from the simulation wavelengths")
        return lib

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__) - {"library"}
        unknown = set(d) - known - {"spectra_csv"}
        if unknown:
            raise ConfigError(f"unknown simulation config field(s): {sorted(unknown)}")
        csv_path = d.pop("spectra_csv", None)
        if csv_path is not None:
            d["library"] = load_spectra_csv(csv_path)
            d.setdefault("wavelengths_nm", d["library"].wavelengths_nm)
        return cls(**d)


def _target_kwargs(t: dict) -> dict:
    t = dict(t)
    unknown = set(t) - {"center_mm", "diameter_mm", "weights"}
    if unknown:
        raise ConfigError(f"unknown target field(s): {sorted(unknown)}")
    if "center_mm" not in t:
        raise ConfigError("target needs center_mm")
    t["center_mm"] = tuple(float(v) for v in t["center_mm"])
    return t


def _check_target(t: Target, cfg: SimConfig, i: int):
    lat, dep = t.center_mm
    ext_l, ext_d = cfg.extent_mm
    if t.diameter_mm <= 0:
        raise ConfigError(f"targets[{i}].diameter_mm must be > 0")
    if not (0 <= lat <= ext_l and 0 <= dep <= ext_d):
        raise TargetOutOfBounds(
            f"targets[{i}] centre {t.center_mm} mm outside the {ext_l:.2f} x {ext_d:.2f} mm field"
        )


def spatial_profile(t: Target, cfg: SimConfig) -> np.ndarray:
    """Unit-amplitude disk for one target convolved with the PSF (no fluence)."""
    depth = np.arange(cfg.rows)[:, None] * cfg.pitch_axial_mm
    lat = np.arange(cfg.cols)[None, :] * cfg.pitch_lateral_mm
    r = t.diameter_mm / 2
    disk = ((lat - t.center_mm[0]) ** 2 + (depth - t.center_mm[1]) ** 2 <= r * r).astype(np.float64)
    if not disk.any():
        # sub-pixel target: light the nearest pixel
        rr = min(cfg.rows - 1, int(round(t.center_mm[1] / cfg.pitch_axial_mm)))
        cc = min(cfg.cols - 1, int(round(t.center_mm[0] / cfg.pitch_lateral_mm)))
        disk[rr, cc] = 1.0
    sig = (cfg.psf_sigma_axial_mm / cfg.pitch_axial_mm, cfg.psf_sigma_lateral_mm / cfg.pitch_lateral_mm)
    if sig[0] > 0 or sig[1] > 0:
        disk = gaussian_filter(disk, sig, mode="constant", truncate=4.0)
    return disk


def render_clean(cfg: SimConfig) -> SpectralImage:
    lib = cfg.spectra()
    lam = len(cfg.wavelengths_nm)
    cube = np.zeros((lam, cfg.rows, cfg.cols))
    fluence = np.exp(-cfg.mu_eff_per_mm * np.arange(cfg.rows) * cfg.pitch_axial_mm)[:, None]
    for i, t in enumerate(cfg.targets):
        _check_target(t, cfg, i)
        spec = lib.mixture(t.weights)
        cube += spec[:, None, None] * (spatial_profile(t, cfg) * fluence)[None]
    return SpectralImage(cube, cfg.wavelengths_nm, cfg.pitch_axial_mm, cfg.pitch_lateral_mm)


def noise_sigma(peak: float, target_snr_db: float) -> float:
    return peak / 10 ** (target_snr_db / 20)


def inject_noise(img: SpectralImage, target_snr_db: float, seed=0) -> SpectralImage:
    """Add white Gaussian noise with ``sigma = max|img| / 10^(snr/20)``.

    One sigma is shared by all wavelengths. ``seed`` may be an int or a
    ``numpy.random.SeedSequence``.
    """
    peak = float(np.max(np.abs(img.data)))
    if peak == 0:
        raise ZeroImage("cannot calibrate noise on an all-zero image")
    sigma = noise_sigma(peak, target_snr_db)
    rng = np.random.default_rng(seed)
    return img.with_data(img.data + rng.normal(0.0, sigma, size=img.shape))


def generate_phantom(cfg: SimConfig) -> tuple[SpectralImage, list[SpectralImage]]:
    """Clean cube plus ``cfg.frames`` independently noised copies.

    Frame ``i`` draws from child ``i`` of ``SeedSequence(cfg.seed)``, so a
    frame's noise does not depend on how many frames are requested.
    """
    clean = render_clean(cfg)
    if cfg.snr_db is None or cfg.frames == 0:
        return clean, [clean] * cfg.frames
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.frames)
    return clean, [inject_noise(clean, cfg.snr_db, ss) for ss in children]


# --- unmixing --------------------------------------------------------------------


def nnls(a: np.ndarray, b: np.ndarray, tol: float = 1e-10, max_iter: int | None = None):
    """Lawson-Hanson active-set solution of ``min |a x - b|`` with ``x >= 0``.

    Ties in the entering variable resolve to the lowest index. Returns
    ``(x, residual_norm)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = a.shape
    max_iter = max_iter or 3 * n + 10
    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    w = a.T @ (b - a @ x)
    it = 0
    while (~passive).any() and np.max(np.where(passive, -np.inf, w)) > tol:
        if it >= max_iter:
            break
        it += 1
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(a[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > tol):
                x = z
                break
            mask = passive & (z <= tol)
            alpha = np.min(x[mask] / (x[mask] - z[mask]))
            x = x + alpha * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
            if not passive.any():
                break
        w = a.T @ (b - a @ x)
    return x, float(np.linalg.norm(a @ x - b))


@dataclass
class ConcentrationMaps:
    names: tuple
    maps: np.ndarray  # (K, H, W)
    residual: np.ndarray  # (H, W)
    agent_ratio: np.ndarray | None = None

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.maps[list(self.names).index(name)]
        except ValueError:
            raise UnknownChromophore(f"{name!r} not among {self.names}") from None

    def to_image(self, pitch_axial_mm=0.195, pitch_lateral_mm=0.195) -> SpectralImage:
        """Pack as a cube, one slot per chromophore (plus the ratio, if set)."""
        data = list(self.maps)
        names = list(self.names)
        if self.agent_ratio is not None:
            data.append(self.agent_ratio)
            names.append("agent_ratio")
        return SpectralImage(
            np.stack(data),
            [float(i + 1) for i in range(len(data))],
            pitch_axial_mm,
            pitch_lateral_mm,
            channels=names,
        )


def unmix(img: SpectralImage, lib: SpectrumLibrary, tol: float = 1e-10) -> ConcentrationMaps:
    """Per-pixel non-negative least-squares unmixing."""
    if len(lib.wavelengths_nm) != img.n_wavelengths or not np.allclose(lib.wavelengths_nm, img.wavelengths_nm):
        raise WavelengthMismatch("library and image wavelengths differ")
    s = lib.matrix
    lam, k = s.shape
    if np.linalg.matrix_rank(s) < k:
        warnings.warn("spectrum library is rank deficient", RankDeficientLibrary, stacklevel=2)
    pix = img.data.reshape(lam, -1)
    coef = np.zeros((k, pix.shape[1]))
    res = np.zeros(pix.shape[1])
    # pixels whose unconstrained solution is already feasible need no active set
    full_rank = np.linalg.matrix_rank(s) == k
    if full_rank:
        ls = np.linalg.lstsq(s, pix, rcond=None)[0]
        ok = np.all(ls > tol, axis=0)
        coef[:, ok] = ls[:, ok]
        res[ok] = np.linalg.norm(s @ ls[:, ok] - pix[:, ok], axis=0)
        pending = np.nonzero(~ok)[0]
    else:
        pending = np.arange(pix.shape[1])
    for i in pending:
        coef[:, i], res[i] = nnls(s, pix[:, i], tol)
    h, w = img.shape[1:]
    return ConcentrationMaps(lib.names, coef.reshape(k, h, w), res.reshape(h, w))


def agent_ratio(maps: ConcentrationMaps, agent_name: str, hb_names: Sequence[str], eps: float = 1e-9):
    """``c_agent / (sum of hemoglobin maps + eps)``.

    Returns ``(ratio, floored)`` where ``floored`` marks pixels whose
    hemoglobin total is not above ``eps``.
    """
    agent = maps[agent_name]
    hb = sum((maps[n] for n in hb_names), np.zeros_like(agent))
    ratio = agent / (hb + eps)
    return ratio, hb <= eps
