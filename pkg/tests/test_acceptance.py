"""Acceptance criteria 1-11.

Each test records one ``criterion N [PASS|FAIL] ...`` line, printed at the
end of the run by the terminal-summary hook in conftest. The two benchmark
sweeps (criteria 1-3) take a few minutes on one core.
"""

import itertools
import json

import numpy as np
import pytest

from spade import cli
from spade.bench import acceptance_spec, run_bench, summarize
from spade.bm3d import Bm3dParams, hard_threshold_stage, inverse_transform_3d, transform_3d, wiener_stage
from spade.imaging import SpectralImage
from spade.metrics import RegionSpec, pearson_spectrum, psnr_db, snr_db, ssim
from spade.phantom import SimConfig, SpectrumLibrary, Target, generate_phantom, nnls, synthetic_library, unmix
from spade.pipeline import denoise_average
from spade.sddr import sddr_forward, sddr_inverse
from spade.zsn2n import grad

from conftest import ACCEPTANCE_LINES
from test_metrics import plane_with_patch
from test_pipeline import fixed_region_snr
from test_zsn2n import fd_gradient, gradient_instances, max_relative_error


def record(n, ok, detail):
    line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def snr_sweep():
    spec = acceptance_spec(snr_db=[10.0, 15.0, 20.0, 25.0], n_wavelengths=[16], seeds=[0, 1, 2, 3, 4],
                           methods=["noisy", "spade", "bm3d_vanilla"])
    return summarize(run_bench(spec))


@pytest.fixture(scope="module")
def wavelength_sweep():
    spec = acceptance_spec(snr_db=[15.0], n_wavelengths=[2, 4, 8, 16], seeds=[0, 1, 2, 3, 4],
                           methods=["noisy", "spade"])
    return summarize(run_bench(spec))


def by_snr(summary, method):
    return {e["snr_db"]: e for e in summary[method]}


def test_criterion_1_snr_improvement(snr_sweep):
    spade, vanilla = by_snr(snr_sweep, "spade"), by_snr(snr_sweep, "bm3d_vanilla")
    delta_ok = all(e["delta_snr_db_mean"] >= 10.0 for e in spade.values())
    beat_ok = all(spade[s]["output_snr_db_mean"] >= vanilla[s]["output_snr_db_mean"] for s in spade if s <= 20.0)
    detail = "; ".join(
        f"{s:g} dB: dSNR {spade[s]['delta_snr_db_mean']:.2f}, out {spade[s]['output_snr_db_mean']:.2f}"
        f" vs vanilla {vanilla[s]['output_snr_db_mean']:.2f}"
        for s in sorted(spade)
    )
    assert record(1, delta_ok and beat_ok, detail)


def test_criterion_2_spectral_preservation(snr_sweep):
    spade = by_snr(snr_sweep, "spade")
    ok = all(e["pearson_r_median"] >= 0.8 for s, e in spade.items() if s >= 10.0)
    detail = ", ".join(f"{s:g} dB r={e['pearson_r_median']:.4f}" for s, e in sorted(spade.items()))
    assert record(2, ok, "median Pearson r " + detail)


def test_criterion_3_wavelength_count_stability(wavelength_sweep):
    deltas = {e["n_wavelengths"]: e["delta_snr_db_mean"] for e in wavelength_sweep["spade"]}
    spread = max(deltas.values()) - min(deltas.values())
    detail = ", ".join(f"L={k}: {v:.2f}" for k, v in sorted(deltas.items())) + f"; spread {spread:.2f} dB (limit 3)"
    assert record(3, spread <= 3.0, "mean dSNR at 15 dB " + detail)


def test_criterion_4_averaging_law():
    cfg = SimConfig(rows=128, cols=128, targets=[Target((12.48, 3.9))], snr_db=15.0, seed=5, frames=64)
    clean, frames = generate_phantom(cfg)
    j = int(np.argmax(np.abs(clean.data).max(axis=(1, 2))))
    ref = snr_db(clean.data[j])
    avg = denoise_average(frames)
    single = np.mean([fixed_region_snr(f.data[j], ref.peak_pos, ref.noise_rect) for f in frames])
    gain = fixed_region_snr(avg.data[j], ref.peak_pos, ref.noise_rect) - single
    assert record(4, abs(gain - 18.06) <= 1.0, f"64-frame SNR gain {gain:.2f} dB (target 18.06 +- 1)")


def test_criterion_5_sddr_exactness():
    rng = np.random.default_rng(55)
    total = passed = 0
    for lam in (1, 2, 3, 16):
        sizes = [(1, 1), (7, 5), (9, 13)] + [tuple(rng.integers(1, 40, size=2)) for _ in range(6)]
        for h, w in sizes:
            img = SpectralImage(rng.normal(size=(lam, h, w)), [700.0 + i for i in range(lam)])
            back = sddr_inverse(sddr_forward(img))
            total += 1
            passed += back.data.tobytes() == img.data.tobytes() and back.wavelengths_nm == img.wavelengths_nm
    assert record(5, passed == total, f"bit-exact round trips {passed}/{total}")


def test_criterion_6_gradient_correctness():
    worst, count = 0.0, 0
    for p, y in gradient_instances(20):
        count += 1
        worst = max(worst, max_relative_error(grad(p, y).arrays(), fd_gradient(p, y, h=1e-5)))
    assert record(6, count >= 20 and worst < 1e-6, f"{count} instances, max relative error {worst:.2e}")


def test_criterion_7_transform_fidelity():
    worst = 0.0
    for block, n in itertools.product([(8, 8), (8, 4), (8, 2)], [1, 3, 16, 32]):
        s = np.random.default_rng(n).normal(size=(n, *block))
        c = transform_3d(s)
        worst = max(worst, np.max(np.abs(inverse_transform_3d(c) - s)), abs(np.linalg.norm(c) - np.linalg.norm(s)))
    assert record(7, worst <= 1e-10, f"worst round-trip/Parseval deviation {worst:.1e}")


def test_criterion_8_bm3d_properties():
    x = np.full((32, 40), 0.42)
    const_dev = max(np.max(np.abs(hard_threshold_stage(x, Bm3dParams(sigma=s)) - x)) for s in (0.01, 0.1, 1.0))
    # the Wiener factor b^2/(b^2+sigma^2) equals 1 only in the small-sigma limit
    const_dev = max(const_dev, np.max(np.abs(wiener_stage(x, x, Bm3dParams(sigma=1e-6)) - x)))
    ratios, wiener_ok = [], True
    for seed in range(5):
        noise = 0.1 * np.random.default_rng(seed).normal(size=(128, 128))
        p = Bm3dParams(sigma=0.1)
        basic = hard_threshold_stage(0.5 + noise, p)
        final = wiener_stage(0.5 + noise, basic, p)
        ratios.append(basic.std() / noise.std())
        wiener_ok &= final.std() <= basic.std()
    ok = const_dev <= 1e-10 and max(ratios) <= 0.25 and wiener_ok
    detail = (f"constant deviation {const_dev:.1e}; hard/input noise std <= {max(ratios):.3f};"
              f" Wiener <= hard on all seeds: {wiener_ok}")
    assert record(8, ok, detail)


def test_criterion_9_metric_identities():
    rng = np.random.default_rng(9)
    x = rng.uniform(size=(16, 16))
    checks = {"ssim": abs(ssim(x, x, "standard") - 1.0) <= 1e-12}
    s = rng.uniform(size=(6, 4, 5))
    roi = (0, 0, 4, 5)
    cube = SpectralImage(s)
    checks["pearson"] = all(
        abs(pearson_spectrum(cube.with_data(a * s + b), cube, roi) - 1.0) <= 1e-9
        for a, b in [(0.01, 0.0), (2.0, 1.0), (37.0, -5.0)]
    )
    ref, test = np.ones((8, 8)), np.full((8, 8), 0.9)
    checks["psnr"] = abs(psnr_db(test, ref) - 10.0) <= 1e-9 and abs(psnr_db(test, ref, "standard") - 20.0) <= 1e-9
    snr_ok = True
    for peak, sigma, expected in [(1.0, 0.1, 20.0), (2.0, 0.02, 40.0)]:
        plane, rect = plane_with_patch(sigma, peak)
        snr_ok &= abs(snr_db(plane, region=RegionSpec(kind="explicit", rect=rect)).snr_db - expected) <= 1e-9
    checks["snr"] = snr_ok
    assert record(9, all(checks.values()), ", ".join(f"{k}={'ok' if v else 'BAD'}" for k, v in checks.items()))


def test_criterion_10_unmixing_oracle():
    rng = np.random.default_rng(10)
    worst = 0.0
    for lam in (5, 8, 16):
        wl = tuple(np.linspace(700.0, 900.0, lam))
        lib = synthetic_library(wl)
        conc = rng.uniform(0.0, 1.0, size=(3, 6, 7))
        conc[:, 0, 0] = 0.0
        conc[1, 2, :] = 0.0
        img = SpectralImage(np.einsum("lk,khw->lhw", lib.matrix, conc), wl)
        worst = max(worst, np.max(np.abs(unmix(img, lib).maps - conc)))
    x, _ = nnls(np.eye(2), np.array([-0.1, 0.5]))
    lib2 = SpectrumLibrary(("a", "b"), (700.0, 710.0), np.eye(2))
    m2 = unmix(SpectralImage(np.array([-0.1, 0.5])[:, None, None] * np.ones((2, 1, 1)), [700.0, 710.0]), lib2)
    clamp_ok = x.tolist() == [0.0, 0.5] and m2.maps[:, 0, 0].tolist() == [0.0, 0.5]
    ok = worst <= 1e-6 and clamp_ok
    assert record(10, ok, f"mix-unmix max error {worst:.1e}; clamp (-0.1, 0.5) -> {x.tolist()}")


def test_criterion_11_bench_determinism(tmp_path, capsys):
    spec = {"snr_db": [15, 25], "n_wavelengths": [4, 16], "seeds": [0], "methods": ["noisy", "spade", "bm3d_vanilla"],
            "denoise": {"train": {"channels": 2, "iterations": 5, "step_size": 1e-2}}}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    codes = [cli.main(["bench", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / f"{n}.csv")])
             for n in ("a", "b")]
    capsys.readouterr()
    a, b = (tmp_path / "a.csv").read_bytes(), (tmp_path / "b.csv").read_bytes()
    ok = codes == [0, 0] and a == b
    rows = len(a.splitlines()) - 1
    assert record(11, ok, f"two runs, {rows} rows, byte-identical: {a == b}")
