"""Command-line entry point: ``spade simulate | denoise | evaluate | unmix | bench``.

Configs are JSON files. ``--seed`` given on the command line overrides any
seed in the config. Exit codes: 0 success, 2 configuration or validation
error, 3 I/O error (missing, unreadable or malformed files), 4 numerical
failure (training diverged).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as _bench
from .errors import BadMagic, Diverged, HeaderMismatch, NoRoom, SpadeError, UnsupportedDtype
from .imaging import read_spa, write_spa
from .metrics import evaluate, snr_db
from .phantom import SimConfig, agent_ratio, generate_phantom, load_spectra_csv, unmix
from .pipeline import DenoiseConfig, denoise, denoise_average

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

# command-line method names -> pipeline method names
DENOISE_METHODS = {"spade": "spade", "bm3d": "bm3d_vanilla", "zsn2n": "zsn2n_only", "average": "average"}

_IO_ERRORS = (OSError, BadMagic, HeaderMismatch, UnsupportedDtype)


def _load_json(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


def _finite_or_str(v):
    v = float(v)
    return v if np.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")


# --- subcommands --------------------------------------------------------------


def cmd_simulate(args) -> int:
    raw = _load_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SimConfig.from_dict(raw)
    clean, frames = generate_phantom(cfg)
    write_spa(args.out, clean)
    paths = []
    if frames:
        if args.noisy_out is None:
            raise SpadeError("--noisy-out is required when the config asks for noisy frames")
        out_dir = Path(args.noisy_out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(frames):
            p = out_dir / f"noisy_{i:03d}.spa"
            write_spa(p, f)
            paths.append(str(p))
    # achieved SNR measured on the brightest wavelength of each noisy frame
    j = int(np.argmax(np.abs(clean.data).max(axis=(1, 2))))
    achieved = []
    for f in frames:
        try:
            achieved.append(_finite_or_str(_snr(f, j)))
        except NoRoom:
            achieved.append(None)
    _emit({
        "clean": str(args.out),
        "shape": list(clean.shape),
        "wavelengths_nm": list(clean.wavelengths_nm),
        "noisy_frames": paths,
        "target_snr_db": cfg.snr_db,
        "achieved_snr_db": achieved,
        "seed": cfg.seed,
    })
    return EXIT_OK


def _snr(img, j):
    return snr_db(img.data[j], img.pitch_lateral_mm).snr_db


def _read_frames(path) -> list:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.spa"))
        if not files:
            raise FileNotFoundError(f"no .spa files in {p}")
        return [read_spa(f) for f in files]
    return [read_spa(p)]


def cmd_denoise(args) -> int:
    method = DENOISE_METHODS[args.method]
    cfg = None
    if method != "average":
        raw = _load_json(args.config)
        raw["method"] = method
        if method == "zsn2n_only":
            raw["stage_order"] = "zsn2n_only"
        cfg = DenoiseConfig.from_dict(raw)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    t0 = time.perf_counter()
    info: dict = {"stages": []}
    if method == "average":
        frames = _read_frames(args.inp)
        out = denoise_average(frames)
        info["frames"] = len(frames)
    else:
        out = denoise(read_spa(args.inp), cfg, info)
    write_spa(args.out, out)
    info.update({
        "method": args.method,
        "out": str(args.out),
        "shape": list(out.shape),
        "seconds": time.perf_counter() - t0,
    })
    _emit(info)
    return EXIT_OK


def _parse_roi(text):
    if text is None:
        return None
    try:
        roi = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise SpadeError(f"--roi must be four integers r0,c0,r1,c1, got {text!r}") from None
    if len(roi) != 4:
        raise SpadeError(f"--roi must be four integers r0,c0,r1,c1, got {text!r}")
    return roi


def cmd_evaluate(args) -> int:
    roi = _parse_roi(args.roi)
    test, ref = read_spa(args.test), read_spa(args.ref)
    rep = evaluate(test, ref, roi)
    text = rep.to_json()
    if args.report is not None:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_unmix(args) -> int:
    img = read_spa(args.inp)
    lib = load_spectra_csv(args.spectra)
    maps = unmix(img, lib)
    summary = {"chromophores": list(maps.names), "residual_mean": float(maps.residual.mean())}
    if args.agent is not None:
        hb = [h for h in (args.hb or "").split(",") if h]
        if not hb:
            raise SpadeError("--agent needs --hb naming the hemoglobin spectra")
        ratio, floored = agent_ratio(maps, args.agent, hb)
        maps.agent_ratio = ratio
        summary["agent_ratio_floored_pixels"] = int(floored.sum())
    write_spa(args.out, maps.to_image(img.pitch_axial_mm, img.pitch_lateral_mm))
    summary["out"] = str(args.out)
    _emit(summary)
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = _bench.BenchSpec.from_dict(_load_json(args.spec))
    out = args.out or spec.out
    if out is None:
        raise SpadeError("no output path: pass --out or set 'out' in the spec")

    def progress(row):
        print(f"{row['snr_db']:g} dB  L={row['n_wavelengths']}  seed={row['seed']}  "
              f"{row['method']}: {row['output_snr_db']:.2f} dB", file=sys.stderr)

    rows = _bench.run_bench(spec, progress=progress if args.verbose else None)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(_bench.rows_to_csv(rows))
    _emit({"out": str(out), "rows": len(rows), "summary": _bench.summarize(rows)})
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spade", description="Spectral photoacoustic denoising toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a phantom and its noisy frames")
    p.add_argument("--config", help="simulation config JSON (defaults apply when omitted)")
    p.add_argument("--out", required=True, help="clean cube .spa path")
    p.add_argument("--noisy-out", help="directory for noisy_NNN.spa frames")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("denoise", help="denoise a cube (or average a directory of frames)")
    p.add_argument("--method", required=True, choices=sorted(DENOISE_METHODS))
    p.add_argument("--in", dest="inp", required=True, help=".spa file, or a directory of frames for average")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="denoise config JSON")
    p.add_argument("--seed", type=int, help="overrides the training seed in the config")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("evaluate", help="score a cube against a reference")
    p.add_argument("--test", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--roi", help="r0,c0,r1,c1 for the spectral correlation")
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("unmix", help="per-pixel NNLS unmixing")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--spectra", required=True, help="spectra CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--agent", help="name of the contrast agent spectrum")
    p.add_argument("--hb", help="comma-separated hemoglobin spectrum names")
    p.set_defaults(func=cmd_unmix)

    p = sub.add_parser("bench", help="run a benchmark sweep to CSV")
    p.add_argument("--spec", required=True, help="bench spec JSON")
    p.add_argument("--out", help="results CSV (overrides the spec's 'out')")
    p.add_argument("-v", "--verbose", action="store_true", help="print one progress line per row")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Diverged as exc:
        return _fail(exc, EXIT_NUMERIC)
    except _IO_ERRORS as exc:
        return _fail(exc, EXIT_IO)
    except (SpadeError, json.JSONDecodeError) as exc:
        return _fail(exc, EXIT_CONFIG)


def _fail(exc, code) -> int:
    print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
