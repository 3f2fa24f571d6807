import warnings

import numpy as np
import pytest

from spade.bm3d import denoise_bm3d
from spade.errors import ConfigError, EmptyInput, ShapeMismatch
from spade.imaging import ConstantImageWarning, SpectralImage, normalize
from spade.metrics import evaluate, psnr_db, snr_db
from spade.phantom import SimConfig, Target, generate_phantom
from spade.pipeline import (
    DenoiseConfig,
    denoise,
    denoise_average,
    denoise_spade,
    denoise_vanilla_bm3d,
)
from spade.zsn2n import TrainConfig

QUICK = TrainConfig(channels=2, iterations=5, step_size=1e-2)


def small_phantom(snr=15.0, seed=0, size=64, weights=None):
    kw = {} if weights is None else {"weights": weights}
    cfg = SimConfig(rows=size, cols=size, targets=[Target((size * 0.195 / 2, 3.9), **kw)],
                    snr_db=snr, seed=seed)
    clean, frames = generate_phantom(cfg)
    return clean, frames[0] if frames else clean


def test_spade_deterministic_and_preserves_metadata():
    _, noisy = small_phantom()
    cfg = DenoiseConfig(train=QUICK)
    a, b = denoise_spade(noisy, cfg), denoise_spade(noisy, cfg)
    assert np.array_equal(a.data, b.data)
    assert a.shape == noisy.shape
    assert a.wavelengths_nm == noisy.wavelengths_nm
    assert (a.pitch_axial_mm, a.pitch_lateral_mm) == (noisy.pitch_axial_mm, noisy.pitch_lateral_mm)


def test_spade_info_records_stages():
    _, noisy = small_phantom()
    info = {}
    denoise_spade(noisy, DenoiseConfig(train=QUICK), info)
    names = [s["stage"] for s in info["stages"]]
    assert names == ["bm3d", "zsn2n"]
    assert info["stages"][1]["loss_final"] <= info["stages"][1]["loss_initial"] * 10
    assert info["stages"][0]["sigma"] > 0


@pytest.mark.parametrize("order,expected", [
    ("bm3d_then_zsn2n", ["bm3d", "zsn2n"]),
    ("zsn2n_then_bm3d", ["zsn2n", "bm3d"]),
    ("bm3d_only", ["bm3d"]),
    ("zsn2n_only", ["zsn2n"]),
])
def test_stage_orders(order, expected):
    _, noisy = small_phantom(size=32)
    info = {}
    denoise_spade(noisy, DenoiseConfig(stage_order=order, train=QUICK), info)
    assert [s["stage"] for s in info["stages"]] == expected


def test_spade_suite_reaches_25db():
    cfg = SimConfig(rows=128, cols=128, targets=[Target((12.48, d)) for d in (3.9, 9.0, 14.0, 19.0)],
                    snr_db=15.0, seed=0)
    clean, (noisy,) = generate_phantom(cfg)
    out = denoise_spade(noisy, DenoiseConfig(train=TrainConfig(channels=4, iterations=20, step_size=1e-2)))
    assert evaluate(out, clean).aggregate["snr_db_median"] >= 25.0


def test_noiseless_input_near_identity():
    # needs enough training for the network to learn there is no noise to remove
    clean, _ = small_phantom(snr=None)
    out = denoise_spade(clean, DenoiseConfig(train=TrainConfig(channels=4, iterations=100, step_size=1e-2)))
    for j in range(clean.n_wavelengths):
        assert psnr_db(out.data[j], clean.data[j], "standard") >= 40.0


def test_vanilla_single_wavelength_matches_frame_denoiser(rng):
    frame = np.zeros((48, 48))
    frame[20:26, 20:26] = 1.0
    frame += 0.1 * rng.normal(size=frame.shape)
    img = SpectralImage(frame[None])
    out = denoise_vanilla_bm3d(img)
    norm, rec = normalize(img)
    ref = rec.invert(denoise_bm3d(norm.data[0], mode="vanilla"))
    assert np.max(np.abs(out.data[0] - ref)) <= 1e-12


def test_zero_cube_stays_zero():
    z = SpectralImage(np.zeros((4, 24, 24)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConstantImageWarning)
        assert not denoise_vanilla_bm3d(z).data.any()
        assert not denoise_spade(z, DenoiseConfig(train=QUICK)).data.any()


def test_vanilla_improves_snr():
    cfg = SimConfig(rows=128, cols=128, targets=[Target((12.48, 3.9))], snr_db=15.0, seed=1)
    clean, (noisy,) = generate_phantom(cfg)
    out = denoise_vanilla_bm3d(noisy)
    assert evaluate(out, clean).aggregate["snr_db_median"] > evaluate(noisy, clean).aggregate["snr_db_median"]


def test_spectral_shape_sanity():
    # all targets share one spectrum; denoising should not make the ROI spectrum less faithful
    weights = {"agent": 0.7, "ramp_up": 0.3}
    noisy_r, den_r = [], []
    for seed in range(10):
        clean, noisy = small_phantom(snr=15.0, seed=seed, weights=weights)
        roi = (17, 29, 24, 36)
        out = denoise_spade(noisy, DenoiseConfig(train=QUICK))
        noisy_r.append(evaluate(noisy, clean, roi).pearson_r)
        den_r.append(evaluate(out, clean, roi).pearson_r)
    assert np.median(den_r) >= np.median(noisy_r)


def test_sigma_override_in_input_units():
    _, noisy = small_phantom()
    info = {}
    norm, rec = normalize(noisy)
    denoise_spade(noisy, DenoiseConfig(stage_order="bm3d_only", sigma_override=0.02), info)
    assert info["stages"][0]["sigma"] == pytest.approx(0.02 / rec.scale)


# --- averaging ----------------------------------------------------------------


def test_average_examples():
    ones = SpectralImage(np.ones((2, 3, 3)))
    threes = SpectralImage(np.full((2, 3, 3), 3.0))
    assert np.array_equal(denoise_average([ones, threes]).data, np.full((2, 3, 3), 2.0))
    assert np.array_equal(denoise_average([threes]).data, threes.data)


def test_average_of_copies_is_exact(rng):
    f = SpectralImage(rng.normal(size=(3, 5, 5)))
    assert np.array_equal(denoise_average([f] * 7).data, f.data)


def test_average_errors():
    with pytest.raises(EmptyInput):
        denoise_average([])
    with pytest.raises(ShapeMismatch):
        denoise_average([SpectralImage(np.ones((2, 3, 3))), SpectralImage(np.ones((2, 3, 4)))])


def fixed_region_snr(x, peak, rect):
    r0, c0, r1, c1 = rect
    return 20 * np.log10(abs(x[peak]) / np.std(x[r0:r1, c0:c1]))


def test_average_law_64_frames():
    cfg = SimConfig(rows=128, cols=128, targets=[Target((12.48, 3.9))], snr_db=15.0, seed=5, frames=64)
    clean, frames = generate_phantom(cfg)
    j = int(np.argmax(np.abs(clean.data).max(axis=(1, 2))))
    # peak pixel and noise patch are fixed from the clean phantom
    ref = snr_db(clean.data[j])
    avg = denoise_average(frames)
    single = np.mean([fixed_region_snr(f.data[j], ref.peak_pos, ref.noise_rect) for f in frames])
    gain = fixed_region_snr(avg.data[j], ref.peak_pos, ref.noise_rect) - single
    assert abs(gain - 10 * np.log10(64)) <= 1.0


# --- config -------------------------------------------------------------------


def test_config_round_trip_and_validation():
    cfg = DenoiseConfig.from_dict({"stage_order": "bm3d_only", "bm3d": {"step": 2}, "train": {"channels": 4}})
    assert cfg.bm3d.step == 2 and cfg.train.channels == 4
    again = DenoiseConfig.from_dict(cfg.to_dict())
    assert again == cfg
    with pytest.raises(ConfigError):
        DenoiseConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        DenoiseConfig.from_dict({"bm3d": {"radius": 3}})
    with pytest.raises(ConfigError):
        DenoiseConfig(method="nope")
    with pytest.raises(ConfigError):
        DenoiseConfig(method="zsn2n_only", stage_order="bm3d_only")
    assert cfg.with_seed(9).train.seed == 9


def test_dispatch():
    _, noisy = small_phantom(size=32)
    out = denoise(noisy, DenoiseConfig(method="bm3d_vanilla"))
    assert out.shape == noisy.shape
    with pytest.raises(ConfigError):
        denoise(noisy, DenoiseConfig(method="average"))
