"""Raster buffers, PNG I/O, bilinear sampling and canvas region partitioning.

Coordinates follow the blend kernel's convention: ``i``/``x`` is the column,
``j``/``y`` is the row. Arrays are stored row-major, so pixel (i, j) lives at
``data[j, i]``.
"""
from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from PIL import Image

from . import _edt
from . import _parallel  # noqa: F401  (configures numba before first kernel)
from .errors import ContractError, EmptyRegionError, ImageFormatError, NoOverlapError

LUMA = np.array([0.299, 0.587, 0.114])


def _readonly(a: np.ndarray) -> np.ndarray:
    if a.flags.writeable:
        a = a.view()
        a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ImageBuf:
    """Float raster in [0, 1] with a per-pixel validity mask.

    ``data`` has shape (height, width, channels) with channels 1 or 3.
    ``origin`` is the (x, y) canvas position of the buffer's top-left pixel;
    it is (0, 0) for canvas-sized buffers and the box offset for crops.
    """

    data: np.ndarray
    valid: np.ndarray
    origin: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ContractError(f"image data must be HxWx1 or HxWx3, got shape {data.shape}")
        if data.shape[0] == 0 or data.shape[1] == 0:
            raise ContractError("image must be non-empty")
        valid = np.ascontiguousarray(self.valid, dtype=bool)
        if valid.shape != data.shape[:2]:
            raise ContractError(
                f"valid mask shape {valid.shape} does not match image {data.shape[:2]}"
            )
        if not np.all(np.isfinite(data)):
            raise ContractError("image contains non-finite intensities")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ContractError("intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "valid", _readonly(valid))
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @classmethod
    def full(cls, data, origin=(0, 0)) -> "ImageBuf":
        """Wrap ``data`` with an all-valid mask."""
        data = np.asarray(data, dtype=np.float64)
        return cls(data, np.ones(data.shape[:2], dtype=bool), origin)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def plane(self) -> np.ndarray:
        """Single-channel view; only valid for grayscale buffers."""
        if self.channels != 1:
            raise ContractError("expected a grayscale image")
        return self.data[:, :, 0]


def to_gray(img: ImageBuf) -> ImageBuf:
    """Rec.601 luminance (0.299 R + 0.587 G + 0.114 B)."""
    if img.channels == 1:
        return img
    gray = np.clip(img.data @ LUMA, 0.0, 1.0)
    return ImageBuf(gray[:, :, None], img.valid, img.origin)


def to_rgb(img: ImageBuf) -> ImageBuf:
    if img.channels == 3:
        return img
    return ImageBuf(np.repeat(img.data, 3, axis=2), img.valid, img.origin)


# --------------------------------------------------------------------------
# PNG I/O

_MODES = {"L": 1, "LA": 1, "RGB": 3, "RGBA": 3}


def load_image(path) -> ImageBuf:
    """Read an 8-bit grayscale/RGB/RGBA PNG into an ImageBuf.

    Alpha >= 128 marks a pixel valid; the alpha channel is then dropped.
    """
    path = os.fspath(path)
    with Image.open(path) as im:
        if im.format != "PNG":
            raise ImageFormatError(f"{path}: not a PNG file ({im.format})")
        mode = im.mode
        if mode == "P":
            im = im.convert("RGBA")
            mode = "RGBA"
        if mode not in _MODES:
            raise ImageFormatError(f"{path}: unsupported PNG mode {mode!r} (need 8-bit L/LA/RGB/RGBA)")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if mode in ("LA", "RGBA"):
        valid = arr[:, :, -1] >= 128
        arr = arr[:, :, :-1]
    else:
        valid = np.ones(arr.shape[:2], dtype=bool)
    return ImageBuf(arr.astype(np.float64) / 255.0, valid)


def to_bytes(img: ImageBuf) -> np.ndarray:
    """Quantize to uint8 with round-to-nearest."""
    return np.rint(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: ImageBuf, path) -> None:
    """Write an 8-bit PNG; an alpha channel is added only if some pixel is invalid."""
    arr = to_bytes(img)
    if not img.valid.all():
        alpha = np.where(img.valid, 255, 0).astype(np.uint8)[:, :, None]
        arr = np.concatenate([arr, alpha], axis=2)
    mode = {1: "L", 2: "LA", 3: "RGB", 4: "RGBA"}[arr.shape[2]]
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr, mode=mode).save(os.fspath(path), format="PNG", compress_level=6)


# --------------------------------------------------------------------------
# Sampling


@njit(cache=True)
def _sample_px(data, valid, x, y, out):
    h, w, nc = data.shape
    if x < 0.0:
        x = 0.0
    elif x > w - 1:
        x = w - 1.0
    if y < 0.0:
        y = 0.0
    elif y > h - 1:
        y = h - 1.0
    # cell anchored so that x1 = x0 + 1 whenever the image is wider than 1
    x0 = max(min(int(math.floor(x)), w - 2), 0)
    y0 = max(min(int(math.floor(y)), h - 2), 0)
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy
    v00 = valid[y0, x0]
    v01 = valid[y0, x1]
    v10 = valid[y1, x0]
    v11 = valid[y1, x1]
    if v00 and v01 and v10 and v11:
        for c in range(nc):
            out[c] = (w00 * data[y0, x0, c] + w01 * data[y0, x1, c]
                      + w10 * data[y1, x0, c] + w11 * data[y1, x1, c])
        return
    n = 0
    if v00:
        n += 1
    else:
        w00 = 0.0
    if v01:
        n += 1
    else:
        w01 = 0.0
    if v10:
        n += 1
    else:
        w10 = 0.0
    if v11:
        n += 1
    else:
        w11 = 0.0
    if n == 0:
        for c in range(nc):
            out[c] = 0.0
        return
    total = w00 + w01 + w10 + w11
    if total <= 0.0:
        # sample sits exactly on invalid pixels: plain mean of the valid corners
        w00 = 1.0 if v00 else 0.0
        w01 = 1.0 if v01 else 0.0
        w10 = 1.0 if v10 else 0.0
        w11 = 1.0 if v11 else 0.0
        total = float(n)
    for c in range(nc):
        out[c] = (w00 * data[y0, x0, c] + w01 * data[y0, x1, c]
                  + w10 * data[y1, x0, c] + w11 * data[y1, x1, c]) / total


@njit(parallel=True, cache=True)
def _warp(data, valid, dx, dy, out):
    h, w = dx.shape
    for y in prange(h):
        px = np.empty(data.shape[2])
        for x in range(w):
            _sample_px(data, valid, x + dx[y, x], y + dy[y, x], px)
            for c in range(data.shape[2]):
                out[y, x, c] = px[c]


def bilinear_sample(img: ImageBuf, x: float, y: float) -> np.ndarray:
    """Sample every channel of ``img`` at real coordinates (x=column, y=row).

    Coordinates are clamped to the image; invalid neighbours give their weight
    to the valid ones, and a point with no valid neighbour samples to 0.
    """
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ContractError("sample coordinates must be finite")
    out = np.empty(img.channels)
    _sample_px(img.data, img.valid, float(x), float(y), out)
    return out


def warp_array(data: np.ndarray, valid: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Sample ``data`` (HxWxC) at (x + dx, y + dy) for every output pixel."""
    out = np.empty(dx.shape + (data.shape[2],))
    _warp(np.ascontiguousarray(data, dtype=np.float64), np.ascontiguousarray(valid),
          np.ascontiguousarray(dx, dtype=np.float64), np.ascontiguousarray(dy, dtype=np.float64), out)
    return out


# --------------------------------------------------------------------------
# Canvas partitioning


class Region(enum.IntEnum):
    OUTSIDE = 0
    AREA1 = 1  # only L
    AREA2 = 2  # only R
    AREA3 = 3  # both


@dataclass(frozen=True, eq=False)
class RegionPartition:
    label: np.ndarray  # uint8, values of Region

    def __post_init__(self):
        object.__setattr__(self, "label", _readonly(np.ascontiguousarray(self.label, dtype=np.uint8)))

    @property
    def height(self) -> int:
        return self.label.shape[0]

    @property
    def width(self) -> int:
        return self.label.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.label.shape

    def mask(self, region: Region) -> np.ndarray:
        return self.label == region

    @property
    def counts(self) -> dict[Region, int]:
        hist = np.bincount(self.label.ravel(), minlength=4)
        return {r: int(hist[r]) for r in Region}

    def overlap_box(self) -> tuple[int, int, int, int]:
        """(x0, y0, x1, y1) bounds of Area3, end-exclusive."""
        rows = np.flatnonzero(self.mask(Region.AREA3).any(axis=1))
        cols = np.flatnonzero(self.mask(Region.AREA3).any(axis=0))
        if rows.size == 0:
            raise NoOverlapError("no overlap between the two images")
        return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def compute_partition(mask_l: np.ndarray, mask_r: np.ndarray) -> RegionPartition:
    mask_l = np.asarray(mask_l, dtype=bool)
    mask_r = np.asarray(mask_r, dtype=bool)
    if mask_l.shape != mask_r.shape or mask_l.ndim != 2:
        raise ContractError(f"mask shapes differ: {mask_l.shape} vs {mask_r.shape}")
    # Region values are chosen so the label is just a two-bit code.
    return RegionPartition(mask_l.astype(np.uint8) | (mask_r.astype(np.uint8) << 1))


def crop_overlap(img: ImageBuf, partition: RegionPartition) -> ImageBuf:
    """Cut the Area3 bounding box out of a canvas-sized image.

    Pixels in the box but outside Area3 keep their data and are marked invalid.
    """
    if img.shape != partition.shape:
        raise ContractError(f"image {img.shape} and partition {partition.shape} differ in size")
    x0, y0, x1, y1 = partition.overlap_box()
    data = img.data[y0:y1, x0:x1]
    valid = partition.mask(Region.AREA3)[y0:y1, x0:x1]
    return ImageBuf(data, valid, (img.origin[0] + x0, img.origin[1] + y0))


def place(img: ImageBuf, canvas_width: int, canvas_height: int, offset: tuple[int, int]) -> ImageBuf:
    """Embed ``img`` on an empty canvas at integer ``offset`` = (x, y)."""
    ox, oy = offset
    if ox < 0 or oy < 0 or ox + img.width > canvas_width or oy + img.height > canvas_height:
        raise ContractError(
            f"image of size {img.width}x{img.height} at ({ox},{oy}) "
            f"does not fit a {canvas_width}x{canvas_height} canvas"
        )
    data = np.zeros((canvas_height, canvas_width, img.channels))
    valid = np.zeros((canvas_height, canvas_width), dtype=bool)
    data[oy:oy + img.height, ox:ox + img.width] = img.data
    valid[oy:oy + img.height, ox:ox + img.width] = img.valid
    return ImageBuf(data, valid)


def fill_invalid(img: ImageBuf) -> ImageBuf:
    """Replace invalid pixels by their nearest valid pixel (Euclidean)."""
    if img.valid.all():
        return img
    if not img.valid.any():
        raise EmptyRegionError("image has no valid pixels")
    _, rr, cc = _edt.squared_edt(np.ascontiguousarray(img.valid))
    return ImageBuf(img.data[rr, cc], np.ones(img.shape, dtype=bool), img.origin)
