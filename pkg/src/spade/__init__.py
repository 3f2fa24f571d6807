"""Spectral photoacoustic denoising.

Spectral data re-assembly (SDDR) folds a wavelength cube into one plane so
that BM3D and a zero-shot Noise2Noise network can exploit correlation across
wavelengths. The package also ships a phantom generator, NNLS unmixing, image
quality metrics and a benchmark harness.
"""

from .errors import SpadeError
from .imaging import SpectralImage, normalize, read_spa, write_spa
from .metrics import evaluate
from .phantom import SimConfig, Target, generate_phantom, unmix
from .pipeline import DenoiseConfig, denoise, denoise_average, denoise_spade, denoise_vanilla_bm3d
from .sddr import sddr_forward, sddr_inverse

__version__ = "0.1.0"

__all__ = [
    "DenoiseConfig",
    "SimConfig",
    "SpadeError",
    "SpectralImage",
    "Target",
    "denoise",
    "denoise_average",
    "denoise_spade",
    "denoise_vanilla_bm3d",
    "evaluate",
    "generate_phantom",
    "normalize",
    "read_spa",
    "sddr_forward",
    "sddr_inverse",
    "unmix",
    "write_spa",
]
