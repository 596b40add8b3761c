"""Dense optical flow between consecutive luma frames.

Pyramidal iterative Lucas-Kanade estimated on a coarse point grid (every
4th pixel), 5x5 patches, 10 iterations per pyramid level, then bilinearly
upsampled to a dense field. Points whose patch gradient matrix is
near-singular are marked invalid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateWindow, DimensionMismatch, OutOfBounds

GRID_STEP = 4
PATCH_RADIUS = 2
N_LEVELS = 3
N_ITERS = 10
MIN_EIGENVALUE = 1e-6
MAG_EPS = 1e-3
N_ANGLE_BINS = 8


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement (u, v) in pixels/frame plus a validity mask."""

    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if not (self.u.shape == self.v.shape == self.valid.shape):
            raise DimensionMismatch("flow planes must share one shape")

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]


def _downsample(img: np.ndarray) -> np.ndarray:
    """Halve resolution by 2x2 block averaging (odd edges truncated)."""
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    return img[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


@njit(cache=True)
def _lk_level(prev, cur, pxs, pys, u, v, active, gmat, scale, n_iters):
    """One pyramid level of iterative LK for all grid points, in place.

    pxs/pys and u/v are in full-resolution pixel units; `scale` converts to
    this level. Writes patch gradient matrices to gmat and marks points that
    had a full patch at this level in `active`.
    """
    h, w = prev.shape
    n = pxs.shape[0]
    r = PATCH_RADIUS
    side = 2 * r + 1
    tmpl = np.empty((side, side))
    gx = np.empty((side, side))
    gy = np.empty((side, side))
    for i in range(n):
        cx = pxs[i] / scale
        cy = pys[i] / scale
        ix = int(np.floor(cx + 0.5))
        iy = int(np.floor(cy + 0.5))
        # patch plus central-difference margin must fit inside the level
        if ix - r < 1 or ix + r > w - 2 or iy - r < 1 or iy + r > h - 2:
            active[i] = 0
            gmat[i, 0] = 0.0
            gmat[i, 1] = 0.0
            gmat[i, 2] = 0.0
            continue
        active[i] = 1
        gxx = 0.0
        gxy = 0.0
        gyy = 0.0
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                yy = iy + dy
                xx = ix + dx
                gxv = (prev[yy, xx + 1] - prev[yy, xx - 1]) * 0.5
                gyv = (prev[yy + 1, xx] - prev[yy - 1, xx]) * 0.5
                tmpl[dy + r, dx + r] = prev[yy, xx]
                gx[dy + r, dx + r] = gxv
                gy[dy + r, dx + r] = gyv
                gxx += gxv * gxv
                gxy += gxv * gyv
                gyy += gyv * gyv
        gmat[i, 0] = gxx
        gmat[i, 1] = gxy
        gmat[i, 2] = gyy
        det = gxx * gyy - gxy * gxy
        if det <= 1e-14:
            continue
        fu = u[i] / scale
        fv = v[i] / scale
        for _ in range(n_iters):
            bx = 0.0
            by = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    sx = ix + dx + fu
                    sy = iy + dy + fv
                    if sx < 0.0:
                        sx = 0.0
                    elif sx > w - 1.0:
                        sx = w - 1.0
                    if sy < 0.0:
                        sy = 0.0
                    elif sy > h - 1.0:
                        sy = h - 1.0
                    x0 = int(sx)
                    y0 = int(sy)
                    if x0 > w - 2:
                        x0 = w - 2
                    if y0 > h - 2:
                        y0 = h - 2
                    ax = sx - x0
                    ay = sy - y0
                    val = (
                        (1.0 - ax) * (1.0 - ay) * cur[y0, x0]
                        + ax * (1.0 - ay) * cur[y0, x0 + 1]
                        + (1.0 - ax) * ay * cur[y0 + 1, x0]
                        + ax * ay * cur[y0 + 1, x0 + 1]
                    )
                    diff = val - tmpl[dy + r, dx + r]
                    bx += gx[dy + r, dx + r] * diff
                    by += gy[dy + r, dx + r] * diff
            fu += -(gyy * bx - gxy * by) / det
            fv += -(gxx * by - gxy * bx) / det
        u[i] = fu * scale
        v[i] = fv * scale


def _upsample(grid: np.ndarray, height: int, width: int, step: int) -> np.ndarray:
    """Bilinear upsample a coarse point grid to dense, edge-extended."""
    gy = np.arange(height, dtype=np.float64) / step
    gx = np.arange(width, dtype=np.float64) / step
    ny, nx = grid.shape
    y0 = np.minimum(gy.astype(np.int64), ny - 1)
    x0 = np.minimum(gx.astype(np.int64), nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    x1 = np.minimum(x0 + 1, nx - 1)
    ay = np.clip(gy - y0, 0.0, 1.0)[:, None]
    ax = np.clip(gx - x0, 0.0, 1.0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1.0 - ax) + grid[np.ix_(y0, x1)] * ax
    bot = grid[np.ix_(y1, x0)] * (1.0 - ax) + grid[np.ix_(y1, x1)] * ax
    return top * (1.0 - ay) + bot * ay


def dense_flow(prev_luma: np.ndarray, cur_luma: np.ndarray) -> FlowField:
    """Estimate dense flow carrying prev_luma onto cur_luma."""
    prev = np.ascontiguousarray(prev_luma, dtype=np.float64)
    cur = np.ascontiguousarray(cur_luma, dtype=np.float64)
    if prev.shape != cur.shape:
        raise DimensionMismatch(
            f"frame shapes differ: {prev.shape} vs {cur.shape}"
        )
    h, w = prev.shape
    if h < 16 or w < 16:
        raise DegenerateWindow(f"frames must be at least 16x16, got {w}x{h}")

    pyr_prev = [prev]
    pyr_cur = [cur]
    for _ in range(N_LEVELS - 1):
        pyr_prev.append(_downsample(pyr_prev[-1]))
        pyr_cur.append(_downsample(pyr_cur[-1]))

    ys = np.arange(0, h, GRID_STEP)
    xs = np.arange(0, w, GRID_STEP)
    gyy, gxx = np.meshgrid(ys, xs, indexing="ij")
    pxs = gxx.ravel().astype(np.float64)
    pys = gyy.ravel().astype(np.float64)
    npts = pxs.size
    u = np.zeros(npts)
    v = np.zeros(npts)
    active = np.zeros(npts, dtype=np.uint8)
    gmat = np.zeros((npts, 3))
    for level in range(N_LEVELS - 1, -1, -1):
        _lk_level(
            pyr_prev[level],
            pyr_cur[level],
            pxs,
            pys,
            u,
            v,
            active,
            gmat,
            float(2**level),
            N_ITERS,
        )

    # validity from the full-resolution gradient matrix
    gxx_, gxy_, gyy_ = gmat[:, 0], gmat[:, 1], gmat[:, 2]
    half_tr = 0.5 * (gxx_ + gyy_)
    disc = np.sqrt(np.maximum(0.0, (0.5 * (gxx_ - gyy_)) ** 2 + gxy_**2))
    min_eig = half_tr - disc
    valid_pts = (active == 1) & (min_eig >= MIN_EIGENVALUE)
    u[~valid_pts] = 0.0
    v[~valid_pts] = 0.0

    shape = (ys.size, xs.size)
    dense_u = _upsample(u.reshape(shape), h, w, GRID_STEP)
    dense_v = _upsample(v.reshape(shape), h, w, GRID_STEP)
    validf = _upsample(valid_pts.astype(np.float64).reshape(shape), h, w, GRID_STEP)
    return FlowField(u=dense_u, v=dense_v, valid=validf >= 1.0 - 1e-9)


def flow_features(
    flow: FlowField, window: tuple[int, int, int, int] | None = None
) -> np.ndarray:
    """Five per-window flow statistics.

    [min |f|, max |f|, mean |f|, std |f|, orientation entropy] over valid
    pixels; all zeros when the window has no valid pixels. Entropy is the
    Shannon entropy (nats) of an 8-bin direction histogram over valid pixels
    with |f| above MAG_EPS.
    """
    if window is None:
        window = (0, 0, flow.width, flow.height)
    x0, y0, ww, wh = window
    if x0 < 0 or y0 < 0 or x0 + ww > flow.width or y0 + wh > flow.height:
        raise OutOfBounds(f"flow window {window} outside field")
    sl = (slice(y0, y0 + wh), slice(x0, x0 + ww))
    mask = flow.valid[sl]
    if not mask.any():
        return np.zeros(5)
    uw = flow.u[sl][mask]
    vw = flow.v[sl][mask]
    mag = np.hypot(uw, vw)
    strong = mag > MAG_EPS
    if strong.any():
        ang = np.arctan2(vw[strong], uw[strong])
        bins = np.clip(
            ((ang + np.pi) * (N_ANGLE_BINS / (2.0 * np.pi))).astype(np.int64),
            0,
            N_ANGLE_BINS - 1,
        )
        hist = np.bincount(bins, minlength=N_ANGLE_BINS).astype(np.float64)
        p = hist[hist > 0.0] / hist.sum()
        entropy = float(-(p * np.log(p)).sum())
    else:
        entropy = 0.0
    return np.array(
        [float(mag.min()), float(mag.max()), float(mag.mean()), float(mag.std()), entropy]
    )
