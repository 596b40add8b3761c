"""YCrCb raster storage, color conversion, window grids, and raster file I/O.

Rasters hold three float planes (Y, Cr, Cb) with intensities in [0, 1].
Planes are frozen (read-only) after construction so rasters can be shared
freely between threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import NonDivisibleGeometry, OutOfBounds

YCCR_MAGIC = b"YCCR"


@dataclass(frozen=True)
class Raster:
    """Three-plane image (Y, Cr, Cb), row-major, intensities in [0, 1]."""

    y: np.ndarray
    cr: np.ndarray
    cb: np.ndarray

    def __post_init__(self):
        shape = self.y.shape
        for plane in (self.y, self.cr, self.cb):
            if plane.ndim != 2 or plane.shape != shape:
                raise ValueError("raster planes must be 2-D with a common shape")
            if plane.size == 0:
                raise ValueError("raster planes must be non-empty")
            if plane.dtype != np.float64:
                raise ValueError("raster planes must be float64")
            lo, hi = float(plane.min()), float(plane.max())
            if lo < 0.0 or hi > 1.0 or not np.isfinite(lo) or not np.isfinite(hi):
                raise ValueError("raster intensities must lie in [0, 1]")
            plane.flags.writeable = False

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y, self.cr, self.cb

    def digest(self) -> str:
        """Short content hash used in episode logs."""
        import hashlib

        h = hashlib.sha256()
        for plane in self.planes():
            h.update(np.ascontiguousarray(plane).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class WindowGrid:
    """Grid of 50%-overlapping windows that tile a raster exactly."""

    nx: int
    ny: int
    win_w: int
    win_h: int
    stride_x: int
    stride_y: int

    @property
    def width(self) -> int:
        return self.stride_x * (self.nx - 1) + self.win_w

    @property
    def height(self) -> int:
        return self.stride_y * (self.ny - 1) + self.win_h

    @property
    def n_windows(self) -> int:
        return self.nx * self.ny

    def origins(self) -> list[tuple[int, int]]:
        """(x0, y0) of every window in row-major window order."""
        return [
            (wx * self.stride_x, wy * self.stride_y)
            for wy in range(self.ny)
            for wx in range(self.nx)
        ]

    def center(self, index: int) -> tuple[float, float]:
        wy, wx = divmod(index, self.nx)
        return (
            wx * self.stride_x + (self.win_w - 1) / 2.0,
            wy * self.stride_y + (self.win_h - 1) / 2.0,
        )


def _axis_window(extent: int, n: int, axis: str) -> int:
    if n < 1:
        raise NonDivisibleGeometry(f"window count along {axis} must be >= 1")
    if (2 * extent) % (n + 1) != 0:
        raise NonDivisibleGeometry(
            f"2*{extent} not divisible by {n + 1} along {axis}"
        )
    win = (2 * extent) // (n + 1)
    if win % 2 != 0:
        # stride = win/2 must be a whole pixel count
        raise NonDivisibleGeometry(
            f"window extent {win} along {axis} has no integral half stride"
        )
    return win


def make_grid(width: int, height: int, nx: int, ny: int) -> WindowGrid:
    """Build the 50%-overlap window grid covering a width x height raster.

    Window extents follow from the tiling identity win*(n+1)/2 = extent;
    geometries that do not tile exactly raise NonDivisibleGeometry.
    """
    win_w = _axis_window(width, nx, "x")
    win_h = _axis_window(height, ny, "y")
    return WindowGrid(
        nx=nx,
        ny=ny,
        win_w=win_w,
        win_h=win_h,
        stride_x=win_w // 2,
        stride_y=win_h // 2,
    )


def rgb_to_ycrcb(r, g, b):
    """Full-range BT.601 RGB -> (Y, Cr, Cb); accepts scalars or arrays."""
    r = np.clip(r, 0.0, 1.0)
    g = np.clip(g, 0.0, 1.0)
    b = np.clip(b, 0.0, 1.0)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cr = (r - y) * 0.713 + 0.5
    cb = (b - y) * 0.564 + 0.5
    return (
        np.clip(y, 0.0, 1.0),
        np.clip(cr, 0.0, 1.0),
        np.clip(cb, 0.0, 1.0),
    )


def ycrcb_to_rgb(y, cr, cb):
    """Inverse of rgb_to_ycrcb, clamped to [0, 1]."""
    r = y + (cr - 0.5) / 0.713
    b = y + (cb - 0.5) / 0.564
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return (
        np.clip(r, 0.0, 1.0),
        np.clip(g, 0.0, 1.0),
        np.clip(b, 0.0, 1.0),
    )


def crop(raster: Raster, window: tuple[int, int, int, int]) -> Raster:
    """Extract the (x0, y0, w, h) sub-raster; never clamps silently."""
    x0, y0, w, h = window
    if w < 1 or h < 1:
        raise OutOfBounds(f"empty crop window {window}")
    if x0 < 0 or y0 < 0 or x0 + w > raster.width or y0 + h > raster.height:
        raise OutOfBounds(
            f"window {window} outside {raster.width}x{raster.height} raster"
        )
    return Raster(
        y=np.ascontiguousarray(raster.y[y0 : y0 + h, x0 : x0 + w]),
        cr=np.ascontiguousarray(raster.cr[y0 : y0 + h, x0 : x0 + w]),
        cb=np.ascontiguousarray(raster.cb[y0 : y0 + h, x0 : x0 + w]),
    )


def write_raster(path, raster: Raster) -> None:
    """Write the internal float format: 16-byte YCCR header + 3 f32 planes."""
    header = YCCR_MAGIC + struct.pack("<III", raster.width, raster.height, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        for plane in raster.planes():
            fh.write(np.ascontiguousarray(plane, dtype="<f4").tobytes())


def read_raster(path) -> Raster:
    """Read a raster written by write_raster."""
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != YCCR_MAGIC:
            raise ValueError(f"{path}: not a YCCR raster file")
        width, height, _ = struct.unpack("<III", header[4:])
        n = width * height
        data = np.frombuffer(fh.read(3 * n * 4), dtype="<f4")
    if data.size != 3 * n:
        raise ValueError(f"{path}: truncated raster payload")
    planes = data.astype(np.float64).reshape(3, height, width)
    planes = np.clip(planes, 0.0, 1.0)
    return Raster(y=planes[0].copy(), cr=planes[1].copy(), cb=planes[2].copy())


def _read_ppm_token(fh) -> bytes:
    """Next whitespace-delimited token, skipping '#' comments."""
    token = b""
    while True:
        ch = fh.read(1)
        if ch == b"":
            raise ValueError("unexpected end of PPM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_ppm(path) -> Raster:
    """Read a binary (P6) PPM and convert it to YCrCb."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic != b"P6":
            raise ValueError(f"{path}: not a P6 PPM file")
        width = int(_read_ppm_token(fh))
        height = int(_read_ppm_token(fh))
        maxval = int(_read_ppm_token(fh))
        if not 0 < maxval < 256:
            raise ValueError(f"{path}: unsupported maxval {maxval}")
        data = np.frombuffer(fh.read(width * height * 3), dtype=np.uint8)
    if data.size != width * height * 3:
        raise ValueError(f"{path}: truncated pixel payload")
    rgb = data.reshape(height, width, 3).astype(np.float64) / maxval
    y, cr, cb = rgb_to_ycrcb(rgb[..., 0], rgb[..., 1], rgb[..., 2])
    return Raster(y=y, cr=cr, cb=cb)


def write_ppm(path, raster: Raster) -> None:
    """Write an 8-bit binary (P6) PPM, converting back to RGB."""
    r, g, b = ycrcb_to_rgb(*raster.planes())
    rgb = np.stack([r, g, b], axis=-1)
    data = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (raster.width, raster.height))
        fh.write(data.tobytes())
