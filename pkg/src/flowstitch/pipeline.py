"""Layout ingestion, iterative pairwise stitching, translation search and the
patch-based misalignment metric."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit, prange
from PIL import Image

from .blender import BlendParams, blend_pair
from .blendfield import compute_blend
from .errors import ContractError, LayoutError, NoOverlapError, NoTextureError
from .imagecore import (
    ImageBuf,
    Region,
    RegionPartition,
    compute_partition,
    crop_overlap,
    load_image,
    place,
    to_gray,
    to_rgb,
)
from .optflow import FlowParams, bidirectional_flow, flow_magnitude

log = logging.getLogger(__name__)

MIN_PATCH_VARIANCE = 1e-4


# --------------------------------------------------------------------------
# Layout


@dataclass(frozen=True)
class LayoutEntry:
    path: str
    offset_x: int
    offset_y: int
    mask: str | None = None


@dataclass(frozen=True)
class CanvasLayout:
    canvas_width: int
    canvas_height: int
    entries: tuple[LayoutEntry, ...]


def _field(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise LayoutError(f"{where}.{key}: missing")
    val = obj[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise LayoutError(f"{where}.{key}: expected integer, got {val!r}")
    if kind is str and not isinstance(val, str):
        raise LayoutError(f"{where}.{key}: expected string, got {val!r}")
    return val


def _image_size(path: str, where: str) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.size
    except OSError as exc:
        raise OSError(f"{where}: cannot read {path}: {exc}") from exc


def layout_from_dict(doc, base_dir: str = ".") -> CanvasLayout:
    """Validate a parsed layout document; relative paths resolve against ``base_dir``."""
    if not isinstance(doc, dict):
        raise LayoutError("layout: expected a JSON object")
    canvas = doc.get("canvas")
    if not isinstance(canvas, dict):
        raise LayoutError("canvas: missing or not an object")
    cw = _field(canvas, "width", int, "canvas")
    ch = _field(canvas, "height", int, "canvas")
    if cw <= 0 or ch <= 0:
        raise LayoutError(f"canvas: size must be positive, got {cw}x{ch}")
    images = doc.get("images")
    if not isinstance(images, list):
        raise LayoutError("images: missing or not a list")
    if len(images) < 2:
        raise LayoutError("images: at least two images required")

    entries = []
    for n, item in enumerate(images):
        where = f"images[{n}]"
        path = _field(item, "path", str, where)
        offset = item.get("offset")
        if not isinstance(offset, dict):
            raise LayoutError(f"{where}.offset: missing or not an object")
        ox = _field(offset, "x", int, f"{where}.offset")
        oy = _field(offset, "y", int, f"{where}.offset")
        mask = item.get("mask")
        if mask is not None and not isinstance(mask, str):
            raise LayoutError(f"{where}.mask: expected string or null, got {mask!r}")
        path = os.path.join(base_dir, path)
        if mask is not None:
            mask = os.path.join(base_dir, mask)
        w, h = _image_size(path, where)
        if ox < 0 or oy < 0 or ox + w > cw or oy + h > ch:
            raise LayoutError(
                f"{where}: {w}x{h} image at ({ox},{oy}) extends outside the {cw}x{ch} canvas"
            )
        entries.append(LayoutEntry(path, ox, oy, mask))
    # sorted() is stable, so equal offsets keep list order
    entries = sorted(entries, key=lambda e: e.offset_x)
    return CanvasLayout(cw, ch, tuple(entries))


def parse_layout(path) -> CanvasLayout:
    path = os.fspath(path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LayoutError(f"{path}: invalid JSON: {exc}") from exc
    return layout_from_dict(doc, os.path.dirname(os.path.abspath(path)))


def load_entry(entry: LayoutEntry) -> ImageBuf:
    img = load_image(entry.path)
    if entry.mask is None:
        return img
    m = load_image(entry.mask)
    if m.shape != img.shape:
        raise LayoutError(f"mask {entry.mask} is {m.shape}, image is {img.shape}")
    keep = m.valid & (to_gray(m).plane() >= 0.5)
    return ImageBuf(img.data, img.valid & keep)


# --------------------------------------------------------------------------
# Report


@dataclass
class PairReport:
    index: int
    overlap_pixels: int
    mean_flow_mag_lr: float
    mean_flow_mag_rl: float
    misalignment_before: float | None
    misalignment_after: float | None
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class StitchReport:
    pairs: list[PairReport] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        with open(os.fspath(path), "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


# --------------------------------------------------------------------------
# Stitching


def _score_or_none(a, b, partition):
    try:
        return misalignment_score(a, b, partition)
    except NoTextureError:
        return None


def stitch_pair(L: ImageBuf, R: ImageBuf, flow_params: FlowParams | None = None,
                blend_params: BlendParams | None = None, measure: bool = True,
                index: int = 1) -> tuple[ImageBuf, PairReport]:
    """One fold: blend canvas-sized R into canvas-sized L."""
    t = {}
    t0 = time.perf_counter()
    part = compute_partition(L.valid, R.valid)
    n3 = part.counts[Region.AREA3]
    if n3 == 0:
        raise NoOverlapError(f"no overlap between the panorama and image {index}")
    crop_l = crop_overlap(L, part)
    crop_r = crop_overlap(R, part)
    t["partition"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    flow_lr, flow_rl = bidirectional_flow(crop_l, crop_r, flow_params)
    t["flow"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    blend = compute_blend(part)
    t["blendfield"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    F, color_l, color_r = blend_pair(L, R, flow_lr, flow_rl, blend, part, blend_params,
                                     return_constituents=True)
    t["blend"] = time.perf_counter() - t0

    in3 = crop_l.valid
    report = PairReport(
        index=index,
        overlap_pixels=n3,
        mean_flow_mag_lr=float(flow_magnitude(flow_lr)[in3].mean()),
        mean_flow_mag_rl=float(flow_magnitude(flow_rl)[in3].mean()),
        misalignment_before=None,
        misalignment_after=None,
        timings=t,
    )
    if measure:
        t0 = time.perf_counter()
        report.misalignment_before = _score_or_none(L, R, part)
        area3 = part.mask(Region.AREA3)
        report.misalignment_after = _score_or_none(ImageBuf(color_l, area3), ImageBuf(color_r, area3), part)
        t["metrics"] = time.perf_counter() - t0
    return F, report


def stitch_images(images: list[ImageBuf], offsets: list[tuple[int, int]], canvas: tuple[int, int],
                  flow_params: FlowParams | None = None, blend_params: BlendParams | None = None,
                  measure: bool = True, names: list[str] | None = None) -> tuple[ImageBuf, StitchReport]:
    """Fold images into one canvas in the given order; image k is always R."""
    if len(images) < 2:
        raise ContractError("at least two images required")
    if len(images) != len(offsets):
        raise ContractError("one offset per image required")
    cw, ch = canvas
    if any(im.channels == 3 for im in images):
        images = [to_rgb(im) for im in images]
    report = StitchReport()
    t_start = time.perf_counter()
    F = place(images[0], cw, ch, offsets[0])
    for k in range(1, len(images)):
        R = place(images[k], cw, ch, offsets[k])
        try:
            F, pair = stitch_pair(F, R, flow_params, blend_params, measure, index=k)
        except NoOverlapError as exc:
            name = f" ({names[k]})" if names else ""
            raise NoOverlapError(
                f"no overlap between the panorama of images 0..{k - 1} and image {k}{name}"
            ) from exc
        log.info("fold %d: %d overlap px, %.2fs", k, pair.overlap_pixels, sum(pair.timings.values()))
        report.pairs.append(pair)
    report.timings["total"] = time.perf_counter() - t_start
    return F, report


def stitch_all(layout: CanvasLayout, flow_params: FlowParams | None = None,
               blend_params: BlendParams | None = None,
               measure: bool = True) -> tuple[ImageBuf, StitchReport]:
    """Load every layout entry and fold them left to right."""
    t0 = time.perf_counter()
    images = [load_entry(e) for e in layout.entries]
    t_load = time.perf_counter() - t0
    offsets = [(e.offset_x, e.offset_y) for e in layout.entries]
    F, report = stitch_images(images, offsets, (layout.canvas_width, layout.canvas_height),
                              flow_params, blend_params, measure,
                              names=[e.path for e in layout.entries])
    report.timings["load"] = t_load
    return F, report


# --------------------------------------------------------------------------
# Translation search


def _ncc(a: np.ndarray, b: np.ndarray) -> float | None:
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float((a * a).sum()) * float((b * b).sum()))
    if den <= 1e-12:
        return None
    return float((a * b).sum()) / den


def estimate_translation(A: ImageBuf, B: ImageBuf, max_shift: int) -> tuple[int, int, float]:
    """Integer shift (dx, dy) maximizing NCC between A(p) and B(p + (dx, dy)).

    Exhaustive over [-max_shift, max_shift]^2; ties go to the smaller shift,
    then to the lexicographically smaller (dx, dy).
    """
    a = to_gray(A).plane()
    b = to_gray(B).plane()
    if a.shape != b.shape:
        raise ContractError(f"image sizes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    if max_shift < 0 or max_shift > min(h, w) / 4:
        raise ContractError(f"max_shift must be in [0, {min(h, w) // 4}], got {max_shift}")
    if a.std() < 1e-9 or b.std() < 1e-9:
        raise NoTextureError("constant image: no texture to register")
    best = None
    for dx in range(-max_shift, max_shift + 1):
        for dy in range(-max_shift, max_shift + 1):
            ax0, ax1 = max(0, -dx), min(w, w - dx)
            ay0, ay1 = max(0, -dy), min(h, h - dy)
            score = _ncc(a[ay0:ay1, ax0:ax1], b[ay0 + dy:ay1 + dy, ax0 + dx:ax1 + dx])
            if score is None:
                continue
            key = (-score, dx * dx + dy * dy, dx, dy)
            if best is None or score > best[0] + 1e-12 or (
                abs(score - best[0]) <= 1e-12 and key[1:] < best[1][1:]
            ):
                best = (score, key)
    if best is None:
        raise NoTextureError("no shift produced a textured overlap")
    _, (_, _, dx, dy) = best
    return dx, dy, float(max(-1.0, min(1.0, best[0])))


# --------------------------------------------------------------------------
# Misalignment metric


@njit(parallel=True, cache=True)
def _match_patches(a, b, area3, cx, cy, r, search, min_var):
    n = cx.shape[0]
    out = np.full((n, 3), np.nan)  # (dx, dy, ncc)
    side = 2 * r + 1
    npx = side * side
    for k in prange(n):
        x0 = cx[k] - r
        y0 = cy[k] - r
        ma = 0.0
        for yy in range(side):
            for xx in range(side):
                ma += a[y0 + yy, x0 + xx]
        ma /= npx
        va = 0.0
        for yy in range(side):
            for xx in range(side):
                d = a[y0 + yy, x0 + xx] - ma
                va += d * d
        if va / npx < min_var:
            continue
        best = -np.inf
        bdx = 0
        bdy = 0
        bn = 0
        h, w = b.shape
        for sx in range(-search, search + 1):
            for sy in range(-search, search + 1):
                bx0 = x0 + sx
                by0 = y0 + sy
                if bx0 < 0 or by0 < 0 or bx0 + side > w or by0 + side > h:
                    continue
                inside = True
                for yy in range(side):
                    for xx in range(side):
                        if not area3[by0 + yy, bx0 + xx]:
                            inside = False
                            break
                    if not inside:
                        break
                if not inside:
                    continue
                mb = 0.0
                for yy in range(side):
                    for xx in range(side):
                        mb += b[by0 + yy, bx0 + xx]
                mb /= npx
                vb = 0.0
                cov = 0.0
                for yy in range(side):
                    for xx in range(side):
                        db = b[by0 + yy, bx0 + xx] - mb
                        vb += db * db
                        cov += (a[y0 + yy, x0 + xx] - ma) * db
                if vb <= 1e-12:
                    continue
                score = cov / math.sqrt(va * vb)
                norm = sx * sx + sy * sy
                if score > best + 1e-12 or (abs(score - best) <= 1e-12 and norm < bn):
                    best = score
                    bdx = sx
                    bdy = sy
                    bn = norm
        if best > -np.inf:
            out[k, 0] = bdx
            out[k, 1] = bdy
            out[k, 2] = best
    return out


def _grid(lo: int, hi: int, r: int, stride: int) -> np.ndarray:
    # centres c with [c - r, c + r] inside [lo, hi), centred in the span
    first, last = lo + r, hi - 1 - r
    if last < first:
        return np.empty(0, np.int64)
    slack = (last - first) % stride
    return np.arange(first + slack // 2, last + 1, stride, dtype=np.int64)


def misalignment_displacements(L: ImageBuf, R: ImageBuf, partition: RegionPartition,
                               patch_radius: int = 8, stride: int = 32) -> np.ndarray:
    """Per-patch best-match displacement (dx, dy, ncc) rows for textured patches."""
    if L.shape != partition.shape or R.shape != partition.shape:
        raise ContractError("L, R and partition must share the canvas size")
    if patch_radius < 1 or stride < 1:
        raise ContractError("patch_radius and stride must be >= 1")
    area3 = np.ascontiguousarray(partition.mask(Region.AREA3))
    x0, y0, x1, y1 = partition.overlap_box()
    xs = _grid(x0, x1, patch_radius, stride)
    ys = _grid(y0, y1, patch_radius, stride)
    cx, cy = np.meshgrid(xs, ys)
    cx, cy = cx.ravel(), cy.ravel()
    # keep centres whose whole patch lies in the overlap
    side = 2 * patch_radius + 1
    keep = np.array([area3[y - patch_radius:y - patch_radius + side,
                           x - patch_radius:x - patch_radius + side].all() for x, y in zip(cx, cy)],
                    dtype=bool)
    cx, cy = np.ascontiguousarray(cx[keep]), np.ascontiguousarray(cy[keep])
    a = np.ascontiguousarray(to_gray(L).plane())
    b = np.ascontiguousarray(to_gray(R).plane())
    res = _match_patches(a, b, area3, cx, cy, patch_radius, 2 * patch_radius, MIN_PATCH_VARIANCE)
    return res[~np.isnan(res[:, 0])]


def misalignment_score(L: ImageBuf, R: ImageBuf, partition: RegionPartition,
                       patch_radius: int = 8, stride: int = 32) -> float:
    """Mean displacement (pixels) between matching L and R patches in the overlap.

    Patch centres lie on a ``stride`` grid inside the overlap; flat patches
    (variance below 1e-4) are skipped. Each L patch is matched by normalized
    cross-correlation against R patches shifted by up to ``2 * patch_radius``.
    """
    res = misalignment_displacements(L, R, partition, patch_radius, stride)
    if len(res) == 0:
        raise NoTextureError("no textured patches in the overlap")
    return float(np.hypot(res[:, 0], res[:, 1]).mean())
