"""Benchmark sweeps over input SNR, wavelength count, seed and method.

A sweep renders the bundled phantom suite for every (snr, wavelength count,
seed) cell, runs each requested method on it and scores the result against
the clean cube. Rows come back in sorted order and every number is a pure
function of the spec, so rerunning a spec reproduces the CSV byte for byte.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError
from .metrics import evaluate
from .phantom import DEFAULT_WAVELENGTHS, SimConfig, Target, generate_phantom
from .pipeline import DenoiseConfig, denoise_average, denoise_spade, denoise_vanilla_bm3d

METHODS = ("noisy", "spade", "bm3d_vanilla", "zsn2n_only", "average")
COLUMNS = (
    "snr_db", "n_wavelengths", "seed", "method",
    "input_snr_db", "output_snr_db", "delta_snr_db",
    "psnr_db", "psnr_db_standard", "ssim", "ssim_standard", "pearson_r",
)

SUITE_SIZE = 128
SUITE_DEPTHS_MM = (3.9, 9.0, 14.0, 19.0)

# The configuration the acceptance sweep runs with. The ZS-N2N stage is
# trained briefly (the full default schedule costs minutes per image on one
# core) and block matching searches the whole depth of each group.
ACCEPTANCE_DENOISE = {
    "bm3d": {"search_radius_rows": SUITE_SIZE - 1},
    "train": {"channels": 4, "iterations": 50, "step_size": 1e-2},
}


def wavelength_indices(n: int, total: int = len(DEFAULT_WAVELENGTHS)) -> list[int]:
    """``n`` band indices spread evenly over ``total`` bands (both ends included)."""
    if not 1 <= n <= total:
        raise ConfigError(f"wavelength count must lie in 1..{total}, got {n}")
    idx = np.round(np.linspace(0, total - 1, n)).astype(int).tolist()
    if len(set(idx)) != n:
        raise ConfigError(f"cannot pick {n} distinct bands from {total}")
    return idx


def suite_config(snr_db: float, seed: int, frames: int = 1) -> SimConfig:
    """The bundled 128 x 128, 16-wavelength suite: four point targets stacked
    in depth at mid-aperture."""
    lateral = SUITE_SIZE * 0.195 / 2
    return SimConfig(
        rows=SUITE_SIZE,
        cols=SUITE_SIZE,
        targets=[Target((lateral, d)) for d in SUITE_DEPTHS_MM],
        snr_db=snr_db,
        seed=seed,
        frames=frames,
    )


def suite_roi(cfg: SimConfig, half: int = 3) -> tuple[int, int, int, int]:
    """Square ROI around the shallowest target's centre pixel."""
    t = min(cfg.targets, key=lambda t: t.center_mm[1])
    r = int(round(t.center_mm[1] / cfg.pitch_axial_mm))
    c = int(round(t.center_mm[0] / cfg.pitch_lateral_mm))
    return (max(r - half, 0), max(c - half, 0), min(r + half + 1, cfg.rows), min(c + half + 1, cfg.cols))


@dataclass
class BenchSpec:
    snr_db: list = field(default_factory=lambda: [10.0, 15.0, 20.0, 25.0])
    n_wavelengths: list = field(default_factory=lambda: [16])
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    methods: list = field(default_factory=lambda: ["noisy", "spade", "bm3d_vanilla"])
    denoise: dict = field(default_factory=dict)
    average_frames: int = 64
    roi: list | None = None
    out: str | None = None  # CSV path; the command line --out takes precedence

    def __post_init__(self):
        # an integer seed count means seeds 0..n-1
        if isinstance(self.seeds, int) and not isinstance(self.seeds, bool):
            if self.seeds < 1:
                raise ConfigError("bench seeds count must be >= 1")
            self.seeds = list(range(self.seeds))
        for name in ("snr_db", "n_wavelengths", "seeds", "methods"):
            if not isinstance(getattr(self, name), (list, tuple)) or not getattr(self, name):
                raise ConfigError(f"bench spec field {name!r} must be a non-empty list")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown bench method(s) {bad}; choose from {METHODS}")
        if any(not math.isfinite(float(s)) for s in self.snr_db):
            raise ConfigError("bench snr_db values must be finite")
        if any(int(s) != s or s < 0 for s in self.seeds):
            raise ConfigError("bench seeds must be non-negative integers")
        for n in self.n_wavelengths:
            wavelength_indices(int(n))
        if self.average_frames < 1:
            raise ConfigError("average_frames must be >= 1")
        if self.roi is not None and len(self.roi) != 4:
            raise ConfigError("roi must be [row0, col0, row1, col1]")
        # validate eagerly so a bad spec fails before any work is done
        self.denoise_config()

    def denoise_config(self) -> DenoiseConfig:
        return DenoiseConfig.from_dict(self.denoise)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        if not isinstance(d, dict):
            raise ConfigError("bench spec must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown bench spec field(s): {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def acceptance_spec(**overrides) -> BenchSpec:
    d = {"denoise": ACCEPTANCE_DENOISE}
    d.update(overrides)
    return BenchSpec(**d)


def _run_method(method, noisy, frames, cfg: DenoiseConfig, seed: int):
    if method == "noisy":
        return noisy
    if method == "average":
        return denoise_average(frames)
    if method == "bm3d_vanilla":
        return denoise_vanilla_bm3d(noisy, replace(cfg, method="bm3d_vanilla"))
    if method == "zsn2n_only":
        return denoise_spade(noisy, replace(cfg, method="zsn2n_only", stage_order="zsn2n_only").with_seed(seed))
    return denoise_spade(noisy, replace(cfg, method="spade").with_seed(seed))


def run_bench(spec: BenchSpec, progress=None) -> list[dict]:
    """Evaluate every cell of the sweep; rows sorted by (snr, L, seed, method)."""
    cfg = spec.denoise_config()
    rows = []
    n_frames = spec.average_frames if "average" in spec.methods else 1
    # fewer-wavelength data is cut from the full 16-band acquisition, so every
    # wavelength count shares the same phantom and noise realisation
    for snr in sorted(float(s) for s in spec.snr_db):
        for lam in sorted(int(n) for n in spec.n_wavelengths):
            idx = wavelength_indices(lam)
            for seed in sorted(int(s) for s in spec.seeds):
                sim = suite_config(snr, seed, frames=n_frames)
                clean, frames = generate_phantom(sim)
                clean = clean.select(idx)
                frames = [f.select(idx) for f in frames]
                noisy = frames[0]
                roi = tuple(spec.roi) if spec.roi is not None else suite_roi(sim)
                base = evaluate(noisy, clean, roi)
                in_snr = base.aggregate["snr_db_median"]
                for method in sorted(spec.methods):
                    out = _run_method(method, noisy, frames, cfg, seed)
                    rep = base if method == "noisy" else evaluate(out, clean, roi)
                    agg = rep.aggregate
                    rows.append({
                        "snr_db": snr,
                        "n_wavelengths": lam,
                        "seed": seed,
                        "method": method,
                        "input_snr_db": in_snr,
                        "output_snr_db": agg["snr_db_median"],
                        "delta_snr_db": agg["snr_db_median"] - in_snr,
                        "psnr_db": agg["psnr_db_median"],
                        "psnr_db_standard": agg["psnr_db_standard_median"],
                        "ssim": agg["ssim_median"],
                        "ssim_standard": agg["ssim_standard_median"],
                        "pearson_r": rep.pearson_r,
                    })
                    if progress is not None:
                        progress(rows[-1])
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in COLUMNS])
    return buf.getvalue()


def summarize(rows: list[dict]) -> dict:
    """Means over seeds of output SNR, delta SNR and Pearson r per (method, snr, L)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["method"], r["snr_db"], r["n_wavelengths"]), []).append(r)
    out = {}
    for (method, snr, lam), rs in sorted(groups.items()):
        rvals = [x["pearson_r"] for x in rs if x["pearson_r"] is not None]
        out.setdefault(method, []).append({
            "snr_db": snr,
            "n_wavelengths": lam,
            "output_snr_db_mean": float(np.mean([x["output_snr_db"] for x in rs])),
            "delta_snr_db_mean": float(np.mean([x["delta_snr_db"] for x in rs])),
            "pearson_r_median": float(np.median(rvals)) if rvals else None,
        })
    return out
