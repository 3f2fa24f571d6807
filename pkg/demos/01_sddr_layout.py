"""
Spectral data re-assembly on a toy cube
=======================================

A spectral photoacoustic acquisition is a cube of shape (wavelengths, depth,
lateral). Re-assembly lays every pixel's spectrum out as adjacent columns of
one 2D plane, so a 2D denoiser sees each spectrum as a small spatial patch.
"""

import numpy as np

from spade import SpectralImage, sddr_forward, sddr_inverse

# Three wavelengths on a 2 x 3 grid. Encode (wavelength, row, col) in each
# value so the layout is easy to read: 100*j + 10*h + w.
lam, rows, cols = 3, 2, 3
j, h, w = np.meshgrid(np.arange(lam), np.arange(rows), np.arange(cols), indexing="ij")
cube = SpectralImage(100.0 * j + 10.0 * h + w, wavelengths_nm=[700.0, 750.0, 800.0])

s = sddr_forward(cube)
print("cube shape :", cube.shape)
print("plane shape:", s.plane.shape)
print(s.plane.astype(int))

# Columns 0..2 hold the spectrum of lateral position 0, columns 3..5 that of
# position 1, and so on: out[h, w * lam + j] == cube[j, h, w].
assert s.plane[1, 2 * lam + 1] == cube.data[1, 1, 2]

# The mapping is a pure permutation, so the inverse restores the cube bit for bit.
back = sddr_inverse(s)
assert back.data.tobytes() == cube.data.tobytes()
print("round trip exact:", back.data.tobytes() == cube.data.tobytes())
