"""Dense pyramidal Lucas-Kanade flow and Middlebury ``.flo`` I/O.

Flow convention: a field computed with ``dense_pyr_lk(src, dst)`` holds, at
each pixel p of ``src``, the displacement d such that ``src(p)`` matches
``dst(p + d)``. Component 0 displaces the column (x), component 1 the row (y).
"""
from __future__ import annotations

import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .errors import ContractError, ImageFormatError
from .imagecore import ImageBuf, _readonly, _sample_px, fill_invalid, to_gray, warp_array

log = logging.getLogger(__name__)

MIN_LEVEL_SIZE = 8
FLO_MAGIC = b"PIEH"
# Middlebury marks unknown vectors with values above this.
FLO_UNKNOWN = 1e9


@dataclass(frozen=True)
class FlowParams:
    levels: int = 4
    window_radius: int = 8
    iterations_per_level: int = 3
    min_eigen_eps: float = 1e-4
    smoothing_passes: int = 2

    def __post_init__(self):
        if self.levels < 1:
            raise ContractError(f"levels must be >= 1, got {self.levels}")
        if self.window_radius < 1:
            raise ContractError(f"window_radius must be >= 1, got {self.window_radius}")
        if self.iterations_per_level < 1:
            raise ContractError(f"iterations_per_level must be >= 1, got {self.iterations_per_level}")
        if not self.min_eigen_eps > 0:
            raise ContractError(f"min_eigen_eps must be > 0, got {self.min_eigen_eps}")
        if self.smoothing_passes < 0:
            raise ContractError(f"smoothing_passes must be >= 0, got {self.smoothing_passes}")


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement ``vectors[y, x] = (dx, dy)`` stored as float32.

    ``valid`` is False where the solver never found enough texture and the
    value is only the propagated/zero fallback.
    """

    vectors: np.ndarray
    valid: np.ndarray
    origin: tuple[int, int] = field(default=(0, 0))

    def __post_init__(self):
        vec = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if vec.ndim != 3 or vec.shape[2] != 2:
            raise ContractError(f"flow vectors must be HxWx2, got {vec.shape}")
        valid = np.ascontiguousarray(self.valid, dtype=bool)
        if valid.shape != vec.shape[:2]:
            raise ContractError("flow valid mask does not match the vector field")
        if not np.all(np.isfinite(vec)):
            raise ContractError("flow contains non-finite components")
        object.__setattr__(self, "vectors", _readonly(vec))
        object.__setattr__(self, "valid", _readonly(valid))
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width, 2), np.float32), np.ones((height, width), bool))

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape[:2]

    @property
    def dx(self) -> np.ndarray:
        return self.vectors[:, :, 0]

    @property
    def dy(self) -> np.ndarray:
        return self.vectors[:, :, 1]


def flow_magnitude(flow: FlowField) -> np.ndarray:
    """Per-pixel Euclidean length of the flow, in pixels (float64)."""
    v = flow.vectors.astype(np.float64)
    return np.sqrt(v[:, :, 0] ** 2 + v[:, :, 1] ** 2)


def embed_flow(flow: FlowField, width: int, height: int) -> FlowField:
    """Place a crop-sized field at its origin on a zero canvas-sized field."""
    ox, oy = flow.origin
    if ox < 0 or oy < 0 or ox + flow.width > width or oy + flow.height > height:
        raise ContractError("flow crop does not fit the canvas")
    vec = np.zeros((height, width, 2), np.float32)
    valid = np.zeros((height, width), bool)
    vec[oy:oy + flow.height, ox:ox + flow.width] = flow.vectors
    valid[oy:oy + flow.height, ox:ox + flow.width] = flow.valid
    return FlowField(vec, valid)


# --------------------------------------------------------------------------
# Pyramid


def _binomial_reduce(a: np.ndarray) -> np.ndarray:
    p = np.pad(a, 2, mode="edge")
    p = (p[:, :-4] + 4 * p[:, 1:-3] + 6 * p[:, 2:-2] + 4 * p[:, 3:-1] + p[:, 4:]) / 16.0
    p = (p[:-4] + 4 * p[1:-3] + 6 * p[2:-2] + 4 * p[3:-1] + p[4:]) / 16.0
    h, w = a.shape
    return p[0:2 * (h // 2):2, 0:2 * (w // 2):2]


def usable_levels(width: int, height: int, levels: int, min_size: int = MIN_LEVEL_SIZE) -> int:
    n = 1
    while n < levels and min(width >> n, height >> n) >= min_size:
        n += 1
    return n


def build_pyramid(img: ImageBuf, levels: int, min_size: int = 1) -> list[ImageBuf]:
    """Gaussian pyramid: level 0 is ``img``; each level is a (1,4,6,4,1)/16
    separable blur of the previous one (edge-clamped) keeping even pixels.

    ``levels`` is reduced (with a log message) so that the coarsest level is
    at least ``min_size`` pixels on each side. The flow solver asks for 8.
    """
    if img.channels != 1:
        raise ContractError("build_pyramid needs a grayscale image")
    if levels < 1:
        raise ContractError(f"levels must be >= 1, got {levels}")
    n = usable_levels(img.width, img.height, levels, min_size)
    if n < levels:
        log.info("pyramid for %dx%d reduced from %d to %d levels", img.width, img.height, levels, n)
    out = [img]
    for _ in range(1, n):
        prev = out[-1]
        data = np.clip(_binomial_reduce(prev.plane()), 0.0, 1.0)
        out.append(ImageBuf(data[:, :, None], prev.valid[0:2 * (prev.height // 2):2, 0:2 * (prev.width // 2):2]))
    return out


# --------------------------------------------------------------------------
# Kernels


@njit(parallel=True, cache=True)
def _box_sum(a, r):
    # (2r+1)^2 window sum, truncated at the borders
    h, w = a.shape
    tmp = np.empty((h, w))
    for y in prange(h):
        for x in range(w):
            s = 0.0
            for k in range(max(x - r, 0), min(x + r + 1, w)):
                s += a[y, k]
            tmp[y, x] = s
    out = np.empty((h, w))
    for y in prange(h):
        lo = max(y - r, 0)
        hi = min(y + r + 1, h)
        for x in range(w):
            s = 0.0
            for k in range(lo, hi):
                s += tmp[k, x]
            out[y, x] = s
    return out


@njit(parallel=True, cache=True)
def _box_blur3(a):
    # 3x3 mean, edge-clamped
    h, w = a.shape
    out = np.empty((h, w))
    for y in prange(h):
        for x in range(w):
            s = 0.0
            for dy in range(-1, 2):
                yy = min(max(y + dy, 0), h - 1)
                for dx in range(-1, 2):
                    xx = min(max(x + dx, 0), w - 1)
                    s += a[yy, xx]
            out[y, x] = s / 9.0
    return out


@njit(parallel=True, cache=True)
def _upsample2(flow, h, w):
    # bilinear resample of a coarse field at (x/2, y/2), scaled by 2
    out = np.empty((h, w, 2))
    valid = np.ones(flow.shape[:2], np.bool_)
    for y in prange(h):
        px = np.empty(2)
        for x in range(w):
            _sample_px(flow, valid, 0.5 * x, 0.5 * y, px)
            out[y, x, 0] = 2.0 * px[0]
            out[y, x, 1] = 2.0 * px[1]
    return out


def _gradients(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.pad(a, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    return gx, gy


def _clamp_norm(flow: np.ndarray, limit: float) -> None:
    mag = np.sqrt(flow[:, :, 0] ** 2 + flow[:, :, 1] ** 2)
    over = mag > limit
    if over.any():
        scale = limit / mag[over]
        flow[over, 0] *= scale
        flow[over, 1] *= scale


def _solve_level(src, dst, flow, p: FlowParams):
    """Refine ``flow`` in place at one pyramid level; returns the solvable mask."""
    r = p.window_radius
    gx, gy = _gradients(src)
    gxx = _box_sum(gx * gx, r)
    gxy = _box_sum(gx * gy, r)
    gyy = _box_sum(gy * gy, r)
    half_tr = 0.5 * (gxx + gyy)
    lam_min = half_tr - np.sqrt((0.5 * (gxx - gyy)) ** 2 + gxy ** 2)
    ok = lam_min >= p.min_eigen_eps * (2 * r + 1) ** 2
    det = np.where(ok, gxx * gyy - gxy * gxy, 1.0)
    all_valid = np.ones(src.shape, bool)
    limit = float(max(src.shape))
    dst3 = dst[:, :, None]
    for _ in range(p.iterations_per_level):
        warped = warp_array(dst3, all_valid, flow[:, :, 0], flow[:, :, 1])[:, :, 0]
        it = warped - src
        bx = _box_sum(gx * it, r)
        by = _box_sum(gy * it, r)
        du = -(gyy * bx - gxy * by) / det
        dv = -(gxx * by - gxy * bx) / det
        flow[:, :, 0] += np.where(ok, du, 0.0)
        flow[:, :, 1] += np.where(ok, dv, 0.0)
        _clamp_norm(flow, limit)
    for _ in range(p.smoothing_passes):
        flow[:, :, 0] = _box_blur3(np.ascontiguousarray(flow[:, :, 0]))
        flow[:, :, 1] = _box_blur3(np.ascontiguousarray(flow[:, :, 1]))
    return ok


def dense_pyr_lk(src: ImageBuf, dst: ImageBuf, params: FlowParams | None = None) -> FlowField:
    """Dense coarse-to-fine Lucas-Kanade flow from ``src`` into ``dst``.

    Pixels whose windowed structure tensor is too weak keep the flow
    propagated from the coarser level; they are reported invalid only if no
    level could solve them.
    """
    p = params or FlowParams()
    if src.channels != 1 or dst.channels != 1:
        raise ContractError("dense_pyr_lk needs grayscale images")
    if src.shape != dst.shape:
        raise ContractError(f"image sizes differ: {src.shape} vs {dst.shape}")
    pyr_s = build_pyramid(src, p.levels, MIN_LEVEL_SIZE)
    pyr_d = build_pyramid(dst, len(pyr_s), MIN_LEVEL_SIZE)

    flow = None
    solved = None
    for lvl in range(len(pyr_s) - 1, -1, -1):
        s = np.ascontiguousarray(pyr_s[lvl].plane())
        d = np.ascontiguousarray(pyr_d[lvl].plane())
        h, w = s.shape
        if flow is None:
            flow = np.zeros((h, w, 2))
            solved = np.zeros((h, w), bool)
        else:
            flow = _upsample2(flow, h, w)
            ys = np.minimum(np.arange(h) // 2, solved.shape[0] - 1)
            xs = np.minimum(np.arange(w) // 2, solved.shape[1] - 1)
            solved = solved[ys][:, xs]
        ok = _solve_level(s, d, flow, p)
        solved |= ok
    _clamp_norm(flow, float(max(src.shape)))
    return FlowField(flow.astype(np.float32), solved, src.origin)


def _flow_input(img: ImageBuf) -> ImageBuf:
    return fill_invalid(to_gray(img))


def bidirectional_flow(
    overlapped_l: ImageBuf,
    overlapped_r: ImageBuf,
    params: FlowParams | None = None,
    concurrent: bool = False,
) -> tuple[FlowField, FlowField]:
    """Return ``(flow_l_to_r, flow_r_to_l)`` between two overlap crops.

    ``flow_r_to_l(p)`` points from R's pixel p to the matching location in L,
    ``flow_l_to_r`` the other way. Colour crops are reduced to luminance and
    invalid pixels are filled from their nearest valid neighbour first.
    """
    if overlapped_l.shape != overlapped_r.shape:
        raise ContractError(f"crop sizes differ: {overlapped_l.shape} vs {overlapped_r.shape}")
    gl = _flow_input(overlapped_l)
    gr = _flow_input(overlapped_r)
    if concurrent:
        with ThreadPoolExecutor(max_workers=2) as ex:
            f_lr = ex.submit(dense_pyr_lk, gl, gr, params)
            f_rl = ex.submit(dense_pyr_lk, gr, gl, params)
            return f_lr.result(), f_rl.result()
    return dense_pyr_lk(gl, gr, params), dense_pyr_lk(gr, gl, params)


# --------------------------------------------------------------------------
# Middlebury .flo


def write_flo(path, flow: FlowField) -> None:
    """Write ``PIEH`` + int32 width/height + row-major float32 (dx, dy), little-endian."""
    with open(os.fspath(path), "wb") as fh:
        fh.write(FLO_MAGIC)
        fh.write(struct.pack("<ii", flow.width, flow.height))
        fh.write(flow.vectors.astype("<f4").tobytes(order="C"))


def read_flo(path) -> FlowField:
    path = os.fspath(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != FLO_MAGIC:
        raise ImageFormatError(f"{path}: not a .flo file (bad magic)")
    w, h = struct.unpack("<ii", blob[4:12])
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"{path}: invalid dimensions {w}x{h}")
    n = w * h * 2
    if len(blob) != 12 + 4 * n:
        raise ImageFormatError(f"{path}: expected {n} floats, file size is {len(blob)} bytes")
    vec = np.frombuffer(blob, dtype="<f4", count=n, offset=12).reshape(h, w, 2).astype(np.float32)
    unknown = ~np.isfinite(vec).all(axis=2) | (np.abs(vec) > FLO_UNKNOWN).any(axis=2)
    if unknown.any():
        vec = vec.copy()
        vec[unknown] = 0.0
    return FlowField(vec, ~unknown)
