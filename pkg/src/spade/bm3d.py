"""Two-stage BM3D with optional spectral grouping.

Both stages work on a batch of equally shaped "group images". In vanilla mode
the whole plane is one group. In spectral mode an SDDR plane is cut into its
per-pixel spectral groups (width = number of wavelengths) and block matching
never leaves a group.

The 3D transform is an orthonormal DCT-II over each block followed by an
orthonormal DCT-II along the stack, so stacks can have any length.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dctn, idctn

from .errors import ConfigError, ShapeMismatch, SigmaMissing, TooSmall
from .imaging import as_plane
from .sddr import SddrImage

# distances are compared on a 1e-12 grid so near-equal candidates tie and
# fall back to row-major order
_DIST_QUANTUM = 1e-12
_WIENER_EPS = 1e-12
_MEM_BUDGET = 2**24  # float64 entries per distance chunk


@dataclass(frozen=True)
class Bm3dParams:
    block_rows: int = 8
    block_cols: int | None = None  # None: 8, or min(8, L) in spectral mode
    step: int = 4
    search_radius_rows: int = 19
    search_radius_cols: int = 19
    max_matches_hard: int = 16
    max_matches_wiener: int = 32
    match_threshold: float = 0.0384
    hard_lambda: float = 2.7
    sigma: float | None = None

    def __post_init__(self):
        if self.block_rows < 1 or (self.block_cols is not None and self.block_cols < 1):
            raise ConfigError("bm3d block dimensions must be >= 1")
        if self.step < 1:
            raise ConfigError("bm3d.step must be >= 1")
        if self.search_radius_rows < 0 or self.search_radius_cols < 0:
            raise ConfigError("bm3d search radii must be >= 0")
        if self.max_matches_hard < 1 or self.max_matches_wiener < 1:
            raise ConfigError("bm3d max_matches must be >= 1")
        if not (self.match_threshold > 0 and self.hard_lambda > 0):
            raise ConfigError("bm3d thresholds must be > 0")
        if self.sigma is not None and not self.sigma >= 0:
            raise ConfigError("bm3d.sigma must be >= 0")

    def block_shape(self, group_width: int | None = None) -> tuple[int, int]:
        if self.block_cols is not None:
            return self.block_rows, self.block_cols
        return self.block_rows, 8 if group_width is None else min(8, group_width)


@dataclass(frozen=True)
class BlockStack:
    reference: tuple[int, int]
    positions: np.ndarray  # (N, 2) top-left (row, col) in plane coordinates
    blocks: np.ndarray  # (N, block_rows, block_cols)
    distances: np.ndarray  # (N,)


def estimate_sigma(x) -> float:
    """Noise level from the finest diagonal Haar detail band.

    ``median(|HH|) / 0.6745`` with ``HH = (a - b - c + d) / 2`` over the
    2x2 blocks ``[[a, b], [c, d]]``.
    """
    x = as_plane(x)
    if x.shape[0] < 2 or x.shape[1] < 2:
        raise TooSmall("estimate_sigma needs at least a 2x2 plane")
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    hh = 0.5 * (x[0:h:2, 0:w:2] - x[0:h:2, 1:w:2] - x[1:h:2, 0:w:2] + x[1:h:2, 1:w:2])
    return float(np.median(np.abs(hh)) / 0.6745)


def transform_3d(stack) -> np.ndarray:
    """Orthonormal separable DCT-II over the last three axes (stack, row, col)."""
    return dctn(np.asarray(stack, dtype=np.float64), type=2, norm="ortho", axes=(-3, -2, -1))


def inverse_transform_3d(coef) -> np.ndarray:
    return idctn(np.asarray(coef, dtype=np.float64), type=2, norm="ortho", axes=(-3, -2, -1))


# --- geometry ----------------------------------------------------------------


def _grid(n_positions: int, step: int) -> np.ndarray:
    pos = list(range(0, n_positions, step))
    if pos[-1] != n_positions - 1:
        pos.append(n_positions - 1)
    return np.array(pos)


class _Geometry:
    """Block positions, reference grid and search windows for one group shape."""

    def __init__(self, rows, cols, block, step, radius):
        bh, bw = block
        if bh > rows or bw > cols:
            raise TooSmall(f"block {block} does not fit in a {rows}x{cols} group")
        self.rows, self.cols, self.block = rows, cols, block
        self.pr, self.pc = rows - bh + 1, cols - bw + 1
        ref_r = _grid(self.pr, min(step, bh))
        ref_c = _grid(self.pc, min(step, bw))
        rr, cc = np.meshgrid(ref_r, ref_c, indexing="ij")
        self.ref_rc = np.stack([rr.ravel(), cc.ravel()], axis=1)
        self.ref_idx = self.ref_rc[:, 0] * self.pc + self.ref_rc[:, 1]

        # window candidates per reference, row-major, padded with -1
        rad_r, rad_c = radius
        wins = []
        for r, c in self.ref_rc:
            r0, r1 = max(0, r - rad_r), min(self.pr - 1, r + rad_r)
            c0, c1 = max(0, c - rad_c), min(self.pc - 1, c + rad_c)
            gr, gc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
            wins.append((gr * self.pc + gc).ravel())
        k = max(len(wn) for wn in wins)
        self.window = np.full((len(wins), k), -1, dtype=np.int64)
        for i, wn in enumerate(wins):
            self.window[i, : len(wn)] = wn

    def pixel_index(self, patch_idx: np.ndarray) -> np.ndarray:
        """Flat in-group pixel indices covered by each patch: (..., bh*bw)."""
        bh, bw = self.block
        r, c = np.divmod(patch_idx, self.pc)
        du, dv = np.meshgrid(np.arange(bh), np.arange(bw), indexing="ij")
        return ((r[..., None] + du.ravel()) * self.cols + c[..., None] + dv.ravel())


def _patches(groups: np.ndarray, block) -> np.ndarray:
    g = groups.shape[0]
    view = sliding_window_view(groups, block, axis=(1, 2))
    return view.reshape(g, -1, block[0] * block[1])


def _match(ref_patches, all_patches, geo: _Geometry, tau: float, k: int):
    """Best ``k`` window candidates per reference.

    Returns member patch indices (G, R, k), member distances (G, R, k) and the
    number of valid members per stack (G, R). The reference is always first.
    """
    npix = all_patches.shape[-1]
    sq_all = np.einsum("gpk,gpk->gp", all_patches, all_patches)
    sq_ref = np.take(sq_all, geo.ref_idx, axis=1)
    cross = ref_patches @ all_patches.transpose(0, 2, 1)
    dist = (sq_ref[:, :, None] + sq_all[:, None, :] - 2.0 * cross) / npix
    np.maximum(dist, 0.0, out=dist)

    win = geo.window
    valid = win >= 0
    safe = np.where(valid, win, 0)
    dw = np.take_along_axis(dist, np.broadcast_to(safe, dist.shape[:1] + safe.shape), axis=2)
    dw[:, ~valid] = np.inf
    q = np.rint(np.minimum(dw, tau * 2) / _DIST_QUANTUM)
    over = dw > tau
    q_max = np.rint(tau * 2 / _DIST_QUANTUM) + 1
    q[over] = q_max
    kw = win.shape[1]
    key = q.astype(np.int64) * kw + np.arange(kw)
    is_ref = win == geo.ref_idx[:, None]
    key[:, is_ref] = -1

    k = min(k, kw)
    if k < kw:
        part = np.argpartition(key, k - 1, axis=2)[:, :, :k]
    else:
        part = np.broadcast_to(np.arange(kw), key.shape).copy()
    pk = np.take_along_axis(key, part, axis=2)
    order = np.argsort(pk, axis=2)
    sel = np.take_along_axis(part, order, axis=2)
    members = np.take_along_axis(np.broadcast_to(safe, key.shape), sel, axis=2)
    mdist = np.take_along_axis(dw, sel, axis=2)
    count = np.minimum(np.sum(~over, axis=2), k)
    return members, mdist, np.maximum(count, 1)


def _group_chunks(n_groups, n_ref, n_patch):
    per = max(1, _MEM_BUDGET // max(1, n_ref * n_patch))
    for s in range(0, n_groups, per):
        yield slice(s, min(n_groups, s + per))


def _sigma_vector(sigma, n_groups) -> np.ndarray:
    if sigma is None:
        raise SigmaMissing("sigma must be set before filtering")
    s = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (n_groups,))
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise SigmaMissing("sigma must be finite and >= 0")
    return s


def _collaborative(groups, guide, sigma, p: Bm3dParams, block, stage: str) -> np.ndarray:
    """Shared driver: matching on ``guide``, filtering, aggregation."""
    n_groups, rows, cols = groups.shape
    geo = _Geometry(rows, cols, block, p.step, (p.search_radius_rows, p.search_radius_cols))
    sig = _sigma_vector(sigma, n_groups)
    kmax = p.max_matches_hard if stage == "hard" else p.max_matches_wiener
    out = np.empty_like(groups)
    npix_group = rows * cols
    for sl in _group_chunks(n_groups, len(geo.ref_idx), geo.pr * geo.pc):
        g_noisy = groups[sl]
        g_guide = guide[sl]
        ng = g_noisy.shape[0]
        pg = _patches(g_guide, block)
        members, _, count = _match(pg[:, geo.ref_idx], pg, geo, p.match_threshold, kmax)
        pn = pg if stage == "hard" else _patches(g_noisy, block)
        num = np.zeros(ng * npix_group)
        den = np.zeros(ng * npix_group)
        s_chunk = sig[sl]
        for n in np.unique(count):
            gi, ri = np.nonzero(count == n)
            mem = members[gi, ri, :n]  # (M, n)
            stacks = pn[gi[:, None], mem].reshape(-1, n, *block)
            coef = transform_3d(stacks)
            s = s_chunk[gi][:, None, None, None]
            if stage == "hard":
                keep = np.abs(coef) >= p.hard_lambda * s
                keep[:, 0, 0, 0] = True
                coef = np.where(keep, coef, 0.0)
                n_ret = keep.reshape(len(gi), -1).sum(axis=1)
                weight = 1.0 / np.maximum(1, n_ret)
            else:
                basic = transform_3d(pg[gi[:, None], mem].reshape(-1, n, *block))
                b2 = basic * basic
                s2 = s * s
                shrink = np.divide(b2, b2 + s2, out=np.ones_like(b2), where=(b2 + s2) > 0)
                coef = coef * shrink
                sums = (shrink * shrink).reshape(len(gi), -1).sum(axis=1)
                weight = 1.0 / (s_chunk[gi] ** 2 * sums + _WIENER_EPS)
            est = inverse_transform_3d(coef).reshape(len(gi), n, -1)
            pix = geo.pixel_index(mem) + (gi * npix_group)[:, None, None]
            w = np.broadcast_to(weight[:, None, None], est.shape)
            num += np.bincount(pix.ravel(), (w * est).ravel(), minlength=num.size)
            den += np.bincount(pix.ravel(), w.ravel(), minlength=den.size)
        out[sl] = (num / den).reshape(ng, rows, cols)
    return out


# --- group layout -------------------------------------------------------------


def _split(x: np.ndarray, group_width: int | None) -> np.ndarray:
    if group_width is None:
        return x[None]
    h, c = x.shape
    if c % group_width:
        raise ShapeMismatch(f"{c} columns are not a multiple of group width {group_width}")
    return x.reshape(h, c // group_width, group_width).transpose(1, 0, 2).copy()


def _merge(groups: np.ndarray, group_width: int | None) -> np.ndarray:
    if group_width is None:
        return groups[0]
    g, h, w = groups.shape
    return groups.transpose(1, 0, 2).reshape(h, g * w)


def _resolve_sigma(x, p: Bm3dParams) -> float:
    return estimate_sigma(x) if p.sigma is None else p.sigma


def block_match(x, ref, p: Bm3dParams, group_bounds=None, max_matches=None, guide=None) -> BlockStack:
    """Stack of blocks similar to the one at ``ref`` (top-left row, col).

    Candidates are all block positions inside the search window whose columns
    lie within ``group_bounds = (col_start, col_stop)``. Distance is the mean
    squared pixel difference; candidates above ``p.match_threshold`` are
    dropped, the rest sorted by distance with row-major tie-break and cut to
    ``max_matches``. The reference always comes first.
    """
    x = as_plane(x)
    c0, c1 = (0, x.shape[1]) if group_bounds is None else group_bounds
    width = c1 - c0
    bh, bw = p.block_shape(None if group_bounds is None else width)
    k = p.max_matches_hard if max_matches is None else max_matches
    r, c = ref
    if not (0 <= r <= x.shape[0] - bh and c0 <= c <= c1 - bw):
        raise ShapeMismatch(f"reference block at {ref} does not fit in the group")
    src = x if guide is None else as_plane(guide)
    ref_block = src[r : r + bh, c : c + bw]
    cands = []
    for rr in range(max(0, r - p.search_radius_rows), min(x.shape[0] - bh, r + p.search_radius_rows) + 1):
        for cc in range(max(c0, c - p.search_radius_cols), min(c1 - bw, c + p.search_radius_cols) + 1):
            d = float(np.mean((src[rr : rr + bh, cc : cc + bw] - ref_block) ** 2))
            if (rr, cc) == (r, c):
                cands.append((-1, rr, cc, d))
            elif d <= p.match_threshold:
                cands.append((int(round(d / _DIST_QUANTUM)), rr, cc, d))
    cands.sort(key=lambda t: (t[0], t[1], t[2]))
    cands = cands[:k]
    pos = np.array([(rr, cc) for _, rr, cc, _ in cands])
    blocks = np.stack([x[rr : rr + bh, cc : cc + bw] for rr, cc in pos])
    return BlockStack((r, c), pos, blocks, np.array([t[3] for t in cands]))


def hard_threshold_stage(x, p: Bm3dParams, group_width: int | None = None) -> np.ndarray:
    """Basic estimate: collaborative hard thresholding of 3D block stacks.

    Every coefficient with magnitude below ``hard_lambda * sigma`` is zeroed,
    the DC term excepted. Stacks are aggregated with weight
    ``1 / max(1, retained)``.
    """
    x = as_plane(x)
    if p.sigma is None:
        raise SigmaMissing("hard_threshold_stage needs p.sigma")
    groups = _split(x, group_width)
    block = p.block_shape(group_width)
    out = _collaborative(groups, groups, p.sigma, p, block, "hard")
    return _merge(out, group_width)


def wiener_stage(noisy, basic, p: Bm3dParams, group_width: int | None = None) -> np.ndarray:
    """Final estimate: empirical Wiener shrinkage guided by the basic estimate."""
    noisy = as_plane(noisy)
    basic = as_plane(basic)
    if noisy.shape != basic.shape:
        raise ShapeMismatch(f"noisy {noisy.shape} vs basic {basic.shape}")
    if p.sigma is None:
        raise SigmaMissing("wiener_stage needs p.sigma")
    gn = _split(noisy, group_width)
    gb = _split(basic, group_width)
    block = p.block_shape(group_width)
    out = _collaborative(gn, gb, p.sigma, p, block, "wiener")
    return _merge(out, group_width)


def denoise_bm3d(s, p: Bm3dParams | None = None, mode: str = "spectral"):
    """Run both stages on an SDDR image (spectral mode) or a plane (vanilla).

    In spectral mode the SDDR plane is split into one group per lateral
    position; with a single wavelength this reduces to vanilla mode. The
    return type matches the input type.
    """
    p = p or Bm3dParams()
    if mode not in ("spectral", "vanilla"):
        raise ConfigError(f"unknown bm3d mode {mode!r}")
    if mode == "spectral":
        if not isinstance(s, SddrImage):
            raise ConfigError("spectral mode needs an SddrImage")
        x = s.plane
        width = s.n_wavelengths if s.n_wavelengths > 1 else None
    else:
        x = s.plane if isinstance(s, SddrImage) else as_plane(s)
        width = None
    p = replace(p, sigma=_resolve_sigma(x, p))
    basic = hard_threshold_stage(x, p, width)
    final = wiener_stage(x, basic, p, width)
    return s.with_plane(final) if isinstance(s, SddrImage) else final


def denoise_frames(frames: np.ndarray, p: Bm3dParams | None = None) -> np.ndarray:
    """Vanilla BM3D applied independently to each frame of a (L, H, W) stack.

    Frames share geometry, so they are processed as one batch of groups; noise
    levels are estimated per frame unless ``p.sigma`` is set.
    """
    p = p or Bm3dParams()
    frames = np.asarray(frames, dtype=np.float64)
    block = p.block_shape(None)
    if p.sigma is None:
        sig = np.array([estimate_sigma(f) for f in frames])
    else:
        sig = np.full(frames.shape[0], float(p.sigma))
    basic = _collaborative(frames, frames, sig, p, block, "hard")
    return _collaborative(frames, basic, sig, p, block, "wiener")
