"""Zero-shot Noise2Noise residual denoiser in plain numpy.

The network is conv3x3 -> leaky ReLU -> conv3x3 -> leaky ReLU -> conv1x1 and
predicts the noise in its input; the denoised image is ``y - f(y)``. It is
trained on a single image using the two fixed diagonal downsamplers, the
residual loss and the consistency loss. Forward and backward passes are
written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from .errors import ConfigError, Diverged, TooSmall
from .imaging import as_plane


@dataclass
class NetworkParams:
    w1: np.ndarray  # (C, 1, 3, 3)
    b1: np.ndarray  # (C,)
    w2: np.ndarray  # (C, C, 3, 3)
    b2: np.ndarray  # (C,)
    w3: np.ndarray  # (1, C, 1, 1)
    b3: np.ndarray  # (1,)

    @property
    def channels(self) -> int:
        return self.w1.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f.name) for f in fields(self)]

    @classmethod
    def from_arrays(cls, arrays) -> "NetworkParams":
        return cls(*arrays)

    @classmethod
    def zeros(cls, channels: int) -> "NetworkParams":
        c = channels
        return cls(
            np.zeros((c, 1, 3, 3)), np.zeros(c),
            np.zeros((c, c, 3, 3)), np.zeros(c),
            np.zeros((1, c, 1, 1)), np.zeros(1),
        )

    def copy(self) -> "NetworkParams":
        return self.from_arrays([a.copy() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class TrainConfig:
    channels: int = 48
    iterations: int = 2000
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("train.channels must be >= 1")
        if self.iterations < 0:
            raise ConfigError("train.iterations must be >= 0")
        if not self.step_size > 0:
            raise ConfigError("train.step_size must be > 0")
        if not 0 <= self.leaky_slope < 1:
            raise ConfigError("train.leaky_slope must lie in [0, 1)")
        if self.seed < 0:
            raise ConfigError("train.seed must be a non-negative integer")


def init_params(channels: int, seed: int) -> NetworkParams:
    """Weights uniform in +-1/sqrt(fan_in); biases start at zero."""
    rng = np.random.default_rng(seed)
    c = channels
    w1 = rng.uniform(-1 / 3, 1 / 3, size=(c, 1, 3, 3))
    s2 = 1 / np.sqrt(9 * c)
    w2 = rng.uniform(-s2, s2, size=(c, c, 3, 3))
    s3 = 1 / np.sqrt(c)
    w3 = rng.uniform(-s3, s3, size=(1, c, 1, 1))
    return NetworkParams(w1, np.zeros(c), w2, np.zeros(c), w3, np.zeros(1))


# --- downsampling -----------------------------------------------------------


def downsample_pair(y) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(d1, d2)``, the anti-diagonal and diagonal 2x2 averages.

    For each stride-2 block ``[[a, b], [c, d]]``, ``d1 = (b + c)/2`` and
    ``d2 = (a + d)/2``. A trailing odd row or column is dropped.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 2 or y.shape[1] < 2:
        raise TooSmall(f"need at least 2x2 to downsample, got {y.shape}")
    h, w = (y.shape[0] // 2) * 2, (y.shape[1] // 2) * 2
    a = y[0:h:2, 0:w:2]
    b = y[0:h:2, 1:w:2]
    c = y[1:h:2, 0:w:2]
    d = y[1:h:2, 1:w:2]
    return 0.5 * (b + c), 0.5 * (a + d)


def _downsample_adjoint(g1, g2, shape) -> np.ndarray:
    """Adjoint of ``y -> (d1, d2)`` applied to ``(g1, g2)``."""
    out = np.zeros(shape)
    h, w = g1.shape[0] * 2, g1.shape[1] * 2
    out[0:h:2, 0:w:2] = 0.5 * g2
    out[1:h:2, 1:w:2] = 0.5 * g2
    out[0:h:2, 1:w:2] = 0.5 * g1
    out[1:h:2, 0:w:2] = 0.5 * g1
    return out


# --- layers -----------------------------------------------------------------
#
# A 3x3 "same" convolution is evaluated on a zero-padded image flattened to
# (C, (H+2)*(W+2) + 2). Output pixel (r, c) sits at flat index r*(W+2) + c,
# and kernel tap (i, j) reads at a constant offset i*(W+2) + j, so every tap
# is one matmul against a strided view. Columns c >= W are junk and dropped.


def _pad_flat(x: np.ndarray) -> np.ndarray:
    cin, h, w = x.shape
    wp = w + 2
    flat = np.zeros((cin, (h + 2) * wp + 2))
    flat[:, : (h + 2) * wp].reshape(cin, h + 2, wp)[:, 1:-1, 1:-1] = x
    return flat


def _conv3(xflat: np.ndarray, w: np.ndarray, b: np.ndarray, h: int, width: int) -> np.ndarray:
    wp = width + 2
    n = h * wp
    out = np.empty((w.shape[0], n))
    out[:] = b[:, None]
    for i in range(3):
        for j in range(3):
            off = i * wp + j
            out += w[:, :, i, j] @ xflat[:, off : off + n]
    return out.reshape(-1, h, wp)[:, :, :width]


def _conv3_backward(g, xflat, w, h, width, need_input=True):
    cout = g.shape[0]
    wp = width + 2
    n = h * wp
    gflat = np.zeros((cout, h, wp))
    gflat[:, :, :width] = g
    gflat = gflat.reshape(cout, n)
    gw = np.empty_like(w)
    gx = np.zeros_like(xflat) if need_input else None
    for i in range(3):
        for j in range(3):
            off = i * wp + j
            gw[:, :, i, j] = gflat @ xflat[:, off : off + n].T
            if need_input:
                gx[:, off : off + n] += w[:, :, i, j].T @ gflat
    gb = g.sum(axis=(1, 2))
    if need_input:
        cin = xflat.shape[0]
        gx = gx[:, : (h + 2) * wp].reshape(cin, h + 2, wp)[:, 1:-1, 1:-1]
    return gx, gw, gb


def _leaky(x, slope):
    return np.where(x >= 0, x, slope * x)


def _leaky_grad(x, slope):
    # derivative at exactly 0 is taken from the positive side
    return np.where(x >= 0, 1.0, slope)


def _forward_cached(p: NetworkParams, x: np.ndarray, slope: float):
    h, w = x.shape
    x0 = _pad_flat(x[None])
    z1 = _conv3(x0, p.w1, p.b1, h, w)
    a1 = _leaky(z1, slope)
    x1 = _pad_flat(a1)
    z2 = _conv3(x1, p.w2, p.b2, h, w)
    a2 = _leaky(z2, slope)
    c = a2.shape[0]
    out = (p.w3.reshape(1, c) @ a2.reshape(c, -1)).reshape(h, w) + p.b3[0]
    return out, (x0, z1, x1, z2, a2)


def _backward(p: NetworkParams, g_out: np.ndarray, cache, slope: float, need_input=False):
    """Accumulate parameter gradients for one forward pass.

    Returns ``(grads, g_input)``; ``g_input`` is None unless requested.
    """
    x0, z1, x1, z2, a2 = cache
    h, w = g_out.shape
    c = a2.shape[0]
    gw3 = (g_out.reshape(1, -1) @ a2.reshape(c, -1).T).reshape(1, c, 1, 1)
    gb3 = np.array([g_out.sum()])
    g_a2 = p.w3.reshape(c, 1, 1) * g_out[None]
    g_z2 = g_a2 * _leaky_grad(z2, slope)
    g_a1, gw2, gb2 = _conv3_backward(g_z2, x1, p.w2, h, w)
    g_z1 = g_a1 * _leaky_grad(z1, slope)
    g_x, gw1, gb1 = _conv3_backward(g_z1, x0, p.w1, h, w, need_input=need_input)
    grads = NetworkParams(gw1, gb1, gw2, gb2, gw3, gb3)
    return grads, (g_x[0] if need_input else None)


def net_forward(p: NetworkParams, x, leaky_slope: float = 0.2) -> np.ndarray:
    x = as_plane(x)
    return _forward_cached(p, x, leaky_slope)[0]


# --- losses -----------------------------------------------------------------


@dataclass(frozen=True)
class LossTerms:
    total: float
    residual: float
    consistency: float


def _loss_and_grad(p: NetworkParams, y: np.ndarray, slope: float, want_grad: bool):
    d1, d2 = downsample_pair(y)
    n = d1.size
    f1, c1cache = _forward_cached(p, d1, slope)
    f2, c2cache = _forward_cached(p, d2, slope)
    fy, cycache = _forward_cached(p, y, slope)
    e1, e2 = downsample_pair(y - fy)

    r1 = d1 - f1 - d2
    r2 = d2 - f2 - d1
    k1 = d1 - f1 - e1
    k2 = d2 - f2 - e2
    residual = 0.5 * (np.mean(r1 * r1) + np.mean(r2 * r2))
    consistency = 0.5 * (np.mean(k1 * k1) + np.mean(k2 * k2))
    terms = LossTerms(residual + consistency, residual, consistency)
    if not want_grad:
        return terms, None

    g_f1 = -(r1 + k1) / n
    g_f2 = -(r2 + k2) / n
    g_fy = _downsample_adjoint(k1 / n, k2 / n, y.shape)
    total = None
    for g, cache in ((g_f1, c1cache), (g_f2, c2cache), (g_fy, cycache)):
        gr, _ = _backward(p, g, cache, slope)
        if total is None:
            total = gr
        else:
            for acc, part in zip(total.arrays(), gr.arrays()):
                acc += part
    return terms, total


def loss(p: NetworkParams, y, leaky_slope: float = 0.2) -> LossTerms:
    """Residual, consistency and total loss (squared norms as pixel means)."""
    return _loss_and_grad(p, as_plane(y), leaky_slope, want_grad=False)[0]


def grad(p: NetworkParams, y, leaky_slope: float = 0.2) -> NetworkParams:
    """Exact gradient of the total loss with respect to every parameter."""
    return _loss_and_grad(p, as_plane(y), leaky_slope, want_grad=True)[1]


def loss_and_grad(p: NetworkParams, y, leaky_slope: float = 0.2):
    return _loss_and_grad(p, as_plane(y), leaky_slope, want_grad=True)


# --- training ---------------------------------------------------------------


class Adam:
    def __init__(self, params: NetworkParams, step_size=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = step_size, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params: NetworkParams, grads: NetworkParams) -> None:
        self.t += 1
        bc1 = 1 - self.beta1**self.t
        bc2 = 1 - self.beta2**self.t
        for a, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            a -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def train(
    y,
    cfg: TrainConfig | None = None,
    history: list | None = None,
    callback: Callable[[int, LossTerms], None] | None = None,
) -> NetworkParams:
    """Fit the noise-predicting network to a single noisy plane.

    Every iteration is a full-image Adam step. If ``history`` is given, the
    loss before each step is appended to it.

    Raises:
        Diverged: the loss or the parameters became non-finite.
    """
    cfg = cfg or TrainConfig()
    y = as_plane(y)
    if y.shape[0] < 2 or y.shape[1] < 2:
        raise TooSmall(f"need at least 2x2 to train, got {y.shape}")
    params = init_params(cfg.channels, cfg.seed)
    opt = Adam(params, cfg.step_size, cfg.beta1, cfg.beta2, cfg.eps)
    for it in range(cfg.iterations):
        terms, g = _loss_and_grad(params, y, cfg.leaky_slope, want_grad=True)
        if not np.isfinite(terms.total):
            raise Diverged(f"loss became {terms.total} at iteration {it}")
        if history is not None:
            history.append(terms)
        if callback is not None:
            callback(it, terms)
        opt.step(params, g)
        if not params.is_finite():
            raise Diverged(f"parameters became non-finite at iteration {it}")
    return params


def denoise_zsn2n(y, cfg: TrainConfig | None = None, clamp_nonnegative=False, history=None):
    cfg = cfg or TrainConfig()
    y = as_plane(y)
    params = train(y, cfg, history=history)
    out = y - net_forward(params, y, cfg.leaky_slope)
    if clamp_nonnegative:
        out = np.maximum(out, 0.0)
    return out
