import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spade.errors import ShapeMismatch
from spade.imaging import SpectralImage
from spade.sddr import SddrImage, sddr_forward, sddr_inverse, sddr_plane

from conftest import random_cube


def brute_force_forward(cube):
    lam, h, w = cube.shape
    out = np.empty((h, lam * w))
    for j, r, c in itertools.product(range(lam), range(h), range(w)):
        out[r, c * lam + j] = cube[j, r, c]
    return out


def test_single_wavelength_is_identity(rng):
    img = random_cube(rng, (1, 5, 7))
    np.testing.assert_array_equal(sddr_forward(img).plane, img.data[0])


def test_two_wavelength_example():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    img = SpectralImage(np.array([[[a, b]], [[c, d]]]), [700.0, 800.0])
    np.testing.assert_array_equal(sddr_forward(img).plane, [[a, c, b, d]])


def test_inverse_example():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    s = sddr_plane(np.array([[a, c, b, d]]), 2)
    back = sddr_inverse(s)
    np.testing.assert_array_equal(back.data, [[[a, b]], [[c, d]]])


def test_forward_matches_brute_force(rng):
    img = random_cube(rng, (3, 2, 2))
    np.testing.assert_array_equal(sddr_forward(img).plane, brute_force_forward(img.data))


@pytest.mark.parametrize("lam", [1, 2, 3, 16])
@pytest.mark.parametrize("hw", [(4, 6), (5, 7), (1, 1), (9, 2)])
def test_round_trip_bit_exact(rng, lam, hw):
    img = random_cube(rng, (lam, *hw))
    s = sddr_forward(img)
    assert s.plane.shape == (hw[0], lam * hw[1])
    back = sddr_inverse(s)
    assert back.data.tobytes() == img.data.tobytes()
    assert back.wavelengths_nm == img.wavelengths_nm
    assert back.pitch_lateral_mm == img.pitch_lateral_mm


def test_indivisible_columns_rejected():
    with pytest.raises(ShapeMismatch):
        sddr_plane(np.zeros((2, 5)), 2)
    with pytest.raises(ShapeMismatch):
        sddr_inverse(SddrImage(np.zeros((2, 5)), 2, 2))


@given(
    lam=st.integers(1, 5),
    h=st.integers(1, 6),
    w=st.integers(1, 6),
    seed=st.integers(0, 2**31),
)
@settings(max_examples=60, deadline=None)
def test_spatial_grouping_and_permutation(lam, h, w, seed):
    rng = np.random.default_rng(seed)
    img = random_cube(rng, (lam, h, w))
    plane = sddr_forward(img).plane
    for r in range(h):
        for c in range(w):
            np.testing.assert_array_equal(plane[r, c * lam : (c + 1) * lam], img.data[:, r, c])
    np.testing.assert_array_equal(np.sort(plane.ravel()), np.sort(img.data.ravel()))
