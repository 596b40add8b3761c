"""Per-window visual features and their assembly into one grouped vector.

Window groups, per window: Radon top-2 line integrals (30), structure
tensor orientation histogram (15), Laws texture energies (8), flow
statistics (5). A single 9-dim non-visual block (command history EMAs,
lateral drift, yaw deviation) is appended after all windows.

Single-window functions and the batched paths used by extract() share the
same numeric code, so recomputing any layout slice reproduces it exactly.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import (
    CommandOutOfRange,
    DegenerateWindow,
    DimensionMismatch,
    UnknownGroup,
)
from .flow import FlowField, dense_flow, flow_features
from .imaging import Raster, WindowGrid

GROUP_RADON = "Radon"
GROUP_ST = "StructureTensor"
GROUP_LAWS = "Laws"
GROUP_FLOW = "Flow"
GROUP_NONVISUAL = "NonVisual"

WINDOW_GROUPS = (GROUP_RADON, GROUP_ST, GROUP_LAWS, GROUP_FLOW)
GROUP_DIMS = {GROUP_RADON: 30, GROUP_ST: 15, GROUP_LAWS: 8, GROUP_FLOW: 5}
NONVISUAL_DIM = 9
ALL_GROUPS = WINDOW_GROUPS + (GROUP_NONVISUAL,)

N_THETA = 15
N_S = 15
ST_BINS = 15

EMA_DECAYS = (0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 0.95)


@dataclass(frozen=True)
class LayoutEntry:
    group: str
    window: int | None
    start: int
    length: int


@dataclass(frozen=True)
class FeatureLayout:
    """Maps (group, window) to contiguous index ranges of the flat vector."""

    entries: tuple[LayoutEntry, ...]

    def __post_init__(self):
        pos = 0
        for e in self.entries:
            if e.start != pos or e.length <= 0:
                raise ValueError("layout ranges must be contiguous and non-empty")
            pos += e.length

    @property
    def total_dim(self) -> int:
        last = self.entries[-1]
        return last.start + last.length

    def slice_for(self, group: str, window: int | None = None) -> slice:
        for e in self.entries:
            if e.group == group and e.window == window:
                return slice(e.start, e.start + e.length)
        raise UnknownGroup(f"no layout entry for ({group}, {window})")

    def group_total(self, group: str) -> int:
        total = sum(e.length for e in self.entries if e.group == group)
        if total == 0:
            raise UnknownGroup(f"group {group!r} not in layout")
        return total

    def group_ids(self) -> list[str]:
        seen: list[str] = []
        for e in self.entries:
            if e.group not in seen:
                seen.append(e.group)
        return seen

    def indices_without(self, drop_groups: set[str]) -> np.ndarray:
        """Flat indices of every dimension not in the dropped groups."""
        for g in drop_groups:
            self.group_total(g)  # raises UnknownGroup for typos
        keep = [
            np.arange(e.start, e.start + e.length)
            for e in self.entries
            if e.group not in drop_groups
        ]
        if not keep:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(keep)

    def without(self, drop_groups: set[str]) -> "FeatureLayout":
        """Layout after removing whole groups, indices recompacted."""
        entries = []
        pos = 0
        for e in self.entries:
            if e.group in drop_groups:
                continue
            entries.append(LayoutEntry(e.group, e.window, pos, e.length))
            pos += e.length
        return FeatureLayout(entries=tuple(entries))

    def to_json_dict(self) -> dict:
        return {
            "groups": [
                {"id": e.group, "window": e.window, "start": e.start, "len": e.length}
                for e in self.entries
            ]
        }

    @staticmethod
    def from_json_dict(d: dict) -> "FeatureLayout":
        return FeatureLayout(
            entries=tuple(
                LayoutEntry(g["id"], g["window"], g["start"], g["len"])
                for g in d["groups"]
            )
        )

    @staticmethod
    def single_group(group: str, dim: int) -> "FeatureLayout":
        return FeatureLayout(entries=(LayoutEntry(group, None, 0, dim),))


@functools.lru_cache(maxsize=8)
def layout_for_grid(nx: int, ny: int) -> FeatureLayout:
    entries = []
    pos = 0
    for w in range(nx * ny):
        for group in WINDOW_GROUPS:
            length = GROUP_DIMS[group]
            entries.append(LayoutEntry(group, w, pos, length))
            pos += length
    entries.append(LayoutEntry(GROUP_NONVISUAL, None, pos, NONVISUAL_DIM))
    return FeatureLayout(entries=tuple(entries))


# ---------------------------------------------------------------------------
# Radon features


@functools.lru_cache(maxsize=32)
def _radon_table(h: int, w: int, n_theta: int, n_s: int):
    """Precomputed nearest-pixel sample indices for every (theta, s) line.

    Lines are parameterized by direction angle theta in [0, pi) and signed
    center offset s spanning the window diagonal; samples are taken at unit
    steps along the line and rounded to the nearest pixel.
    """
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    diag = float(np.hypot(w, h))
    s_vals = np.linspace(-diag / 2.0, diag / 2.0, n_s)
    tmax = int(np.ceil(diag / 2.0))
    ts = np.arange(-tmax, tmax + 1, dtype=np.float64)
    chunks = []
    line_ids = []
    counts = []
    for i in range(n_theta):
        theta = np.pi * i / n_theta
        dx, dy = np.cos(theta), np.sin(theta)
        nxv, nyv = -np.sin(theta), np.cos(theta)
        for j, s in enumerate(s_vals):
            px = cx + s * nxv + ts * dx
            py = cy + s * nyv + ts * dy
            ix = np.floor(px + 0.5).astype(np.int64)
            iy = np.floor(py + 0.5).astype(np.int64)
            ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
            flat = iy[ok] * w + ix[ok]
            if flat.size:
                chunks.append(flat)
                line_ids.append(i * n_s + j)
                counts.append(flat.size)
    idx = np.concatenate(chunks)
    starts = np.concatenate([[0], np.cumsum([c.size for c in chunks])[:-1]])
    return (
        idx,
        starts.astype(np.int64),
        np.asarray(line_ids, dtype=np.int64),
        np.asarray(counts, dtype=np.float64),
    )


def _radon_batch(wins: np.ndarray, n_theta: int, n_s: int) -> np.ndarray:
    b, h, w = wins.shape
    idx, starts, line_ids, counts = _radon_table(h, w, n_theta, n_s)
    vals = wins.reshape(b, h * w)[:, idx]
    sums = np.add.reduceat(vals, starts, axis=1)
    means = sums / counts
    acc = np.zeros((b, n_theta * n_s))
    acc[:, line_ids] = means
    acc = acc.reshape(b, n_theta, n_s)
    part = np.partition(-acc, 1, axis=2)
    out = np.empty((b, 2 * n_theta))
    out[:, 0::2] = -part[:, :, 0]
    out[:, 1::2] = -part[:, :, 1]
    return out


def radon_features(
    window_luma: np.ndarray, n_theta: int = N_THETA, n_s: int = N_S
) -> np.ndarray:
    """Top-2 normalized line integrals per direction, interleaved by theta."""
    arr = np.ascontiguousarray(window_luma, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] < 2:
        raise DegenerateWindow("radon features need a window of at least 2x2")
    return _radon_batch(arr[None], n_theta, n_s)[0]


# ---------------------------------------------------------------------------
# Structure tensor features


def _box3_mean(x: np.ndarray) -> np.ndarray:
    """Same-size 3x3 box mean, normalized by the in-bounds neighbor count."""
    b, m, n = x.shape
    padded = np.zeros((b, m + 2, n + 2))
    padded[:, 1:-1, 1:-1] = x
    total = np.zeros((b, m, n))
    for dy in range(3):
        for dx in range(3):
            total += padded[:, dy : dy + m, dx : dx + n]
    def axis_counts(size: int) -> np.ndarray:
        i = np.arange(size)
        return np.minimum(size - 1, i + 1) - np.maximum(0, i - 1) + 1

    cnt = axis_counts(m)[:, None] * axis_counts(n)[None, :]
    return total / cnt


def _st_batch(wins: np.ndarray, n_bins: int) -> np.ndarray:
    b = wins.shape[0]
    ix = (wins[:, 1:-1, 2:] - wins[:, 1:-1, :-2]) * 0.5
    iy = (wins[:, 2:, 1:-1] - wins[:, :-2, 1:-1]) * 0.5
    axx = _box3_mean(ix * ix)
    axy = _box3_mean(ix * iy)
    ayy = _box3_mean(iy * iy)
    trace = axx + ayy
    phi = 0.5 * np.arctan2(2.0 * axy, axx - ayy)
    phi = np.where(phi < 0.0, phi + np.pi, phi)
    bins = np.clip((phi * (n_bins / np.pi)).astype(np.int64), 0, n_bins - 1)
    offsets = np.arange(b, dtype=np.int64)[:, None] * n_bins
    flat_bins = (bins.reshape(b, -1) + offsets).ravel()
    out = np.bincount(flat_bins, weights=trace.ravel(), minlength=b * n_bins)
    return out.reshape(b, n_bins)


def structure_tensor_features(
    window_luma: np.ndarray, n_bins: int = ST_BINS
) -> np.ndarray:
    """Orientation histogram of the smoothed gradient structure tensor.

    Per interior pixel the tensor trace (sum of eigenvalues) is accumulated
    into the bin of the dominant eigenvector orientation in [0, pi).
    """
    arr = np.ascontiguousarray(window_luma, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 3 or arr.shape[1] < 3:
        raise DegenerateWindow("structure tensor needs a window of at least 3x3")
    return _st_batch(arr[None], n_bins)[0]


# ---------------------------------------------------------------------------
# Laws texture features

_KERNELS_1D = {
    "L": np.array([1.0, 2.0, 1.0]),
    "E": np.array([-1.0, 0.0, 1.0]),
    "S": np.array([-1.0, 2.0, -1.0]),
}

# fixed output order: LL on all three channels, the rest on luma only
LAWS_OUTPUTS = (
    ("LL", "y"),
    ("LL", "cr"),
    ("LL", "cb"),
    ("LE", "y"),
    ("LS", "y"),
    ("EE", "y"),
    ("ES", "y"),
    ("SS", "y"),
)


def laws_mask(name: str) -> np.ndarray:
    """2-D mask: first letter is the vertical kernel, second the horizontal."""
    return np.outer(_KERNELS_1D[name[0]], _KERNELS_1D[name[1]])


def conv3_valid(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-region 3x3 correlation, accumulated in row-major kernel order."""
    h, w = plane.shape[-2:]
    out = np.zeros(plane.shape[:-2] + (h - 2, w - 2))
    for i in range(3):
        for j in range(3):
            out += kernel[i, j] * plane[..., i : i + h - 2, j : j + w - 2]
    return out


def laws_features(window: Raster) -> np.ndarray:
    """Mean absolute Laws mask responses over the valid interior."""
    if window.height < 3 or window.width < 3:
        raise DegenerateWindow("laws features need a window of at least 3x3")
    planes = {"y": window.y, "cr": window.cr, "cb": window.cb}
    out = np.empty(len(LAWS_OUTPUTS))
    for k, (mask, plane) in enumerate(LAWS_OUTPUTS):
        out[k] = np.abs(conv3_valid(planes[plane], laws_mask(mask))).mean()
    return out


@functools.lru_cache(maxsize=8)
def _window_block_indices(
    field_w: int, win_w: int, win_h: int, origins: tuple
) -> np.ndarray:
    """Flat indices of each window's valid-conv block inside the full field."""
    bh, bw = win_h - 2, win_w - 2
    rows = np.arange(bh)[:, None] * field_w + np.arange(bw)[None, :]
    blocks = [
        (y0 * field_w + x0) + rows.ravel() for (x0, y0) in origins
    ]
    return np.stack(blocks)


def _laws_windows(raster: Raster, grid: WindowGrid) -> np.ndarray:
    """Per-window Laws features computed from full-frame convolutions."""
    planes = {"y": raster.y, "cr": raster.cr, "cb": raster.cb}
    origins = tuple(grid.origins())
    idx = _window_block_indices(
        raster.width - 2, grid.win_w, grid.win_h, origins
    )
    out = np.empty((len(origins), len(LAWS_OUTPUTS)))
    for k, (mask, plane) in enumerate(LAWS_OUTPUTS):
        field = conv3_valid(planes[plane], laws_mask(mask))
        out[:, k] = np.abs(field.ravel()[idx]).mean(axis=1)
    return out


# ---------------------------------------------------------------------------
# Non-visual context


@dataclass(frozen=True)
class ControlContext:
    """EMA history of executed commands plus drift and yaw deviation."""

    history: tuple[float, ...]
    drift: float
    yaw_dev: float

    @staticmethod
    def initial() -> "ControlContext":
        return ControlContext(history=(0.0,) * len(EMA_DECAYS), drift=0.0, yaw_dev=0.0)

    def vector(self) -> np.ndarray:
        return np.array(self.history + (self.drift, self.yaw_dev))


def update_context(
    ctx: ControlContext,
    executed_command: float,
    lateral_velocity: float,
    yaw_dev: float,
) -> ControlContext:
    """Advance the command EMAs and replace drift / yaw deviation."""
    if not -1.0 <= executed_command <= 1.0:
        raise CommandOutOfRange(f"command {executed_command} outside [-1, 1]")
    history = tuple(
        a * h + (1.0 - a) * executed_command
        for a, h in zip(EMA_DECAYS, ctx.history)
    )
    return ControlContext(history=history, drift=lateral_velocity, yaw_dev=yaw_dev)


# ---------------------------------------------------------------------------
# Assembly


def _window_stack(plane: np.ndarray, grid: WindowGrid) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(
        plane, (grid.win_h, grid.win_w)
    )[:: grid.stride_y, :: grid.stride_x]
    return view.reshape(grid.n_windows, grid.win_h, grid.win_w)


def extract(
    prev: Raster,
    cur: Raster,
    ctx: ControlContext,
    grid: WindowGrid,
    flow: FlowField | None = None,
) -> tuple[np.ndarray, FeatureLayout]:
    """Full feature vector for one frame pair plus its layout.

    Window order is row-major; within a window the group order is fixed as
    (Radon, StructureTensor, Laws, Flow). A precomputed flow field for the
    same frame pair may be passed to avoid recomputation.
    """
    if (cur.width, cur.height) != (grid.width, grid.height):
        raise DimensionMismatch(
            f"raster {cur.width}x{cur.height} does not match grid "
            f"{grid.width}x{grid.height}"
        )
    if (prev.width, prev.height) != (cur.width, cur.height):
        raise DimensionMismatch("previous frame shape differs from current")
    if flow is None:
        flow = dense_flow(prev.y, cur.y)

    wins = _window_stack(cur.y, grid)
    radon = _radon_batch(wins, N_THETA, N_S)
    st = _st_batch(wins, ST_BINS)
    laws = _laws_windows(cur, grid)
    flow_stats = np.stack(
        [
            flow_features(flow, (x0, y0, grid.win_w, grid.win_h))
            for (x0, y0) in grid.origins()
        ]
    )

    layout = layout_for_grid(grid.nx, grid.ny)
    per_window = np.concatenate([radon, st, laws, flow_stats], axis=1)
    vec = np.empty(layout.total_dim)
    n_vis = per_window.size
    vec[:n_vis] = per_window.ravel()
    vec[n_vis:] = ctx.vector()
    return vec, layout


def features_to_csv(vec: np.ndarray, layout: FeatureLayout) -> str:
    """CSV dump with header group,window,dim,value (dim is within-slice)."""
    lines = ["group,window,dim,value"]
    for e in layout.entries:
        window = "" if e.window is None else str(e.window)
        for d in range(e.length):
            lines.append(f"{e.group},{window},{d},{vec[e.start + d]!r}")
    return "\n".join(lines) + "\n"
