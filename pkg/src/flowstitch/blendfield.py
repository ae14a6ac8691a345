"""Exact Euclidean distance transform and the per-pixel blend coefficient.

The blend coefficient is 0 where only L exists, 1 where only R exists, 0.5
outside both, and inside the overlap it is ``dl / (dl + dr)`` where ``dl`` and
``dr`` are the distances to the nearest L-only and R-only pixel.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import _edt
from .errors import ContractError, EmptyRegionError
from .imagecore import Region, RegionPartition, _readonly


@dataclass(frozen=True, eq=False)
class DistanceField:
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d", _readonly(np.asarray(self.d, dtype=np.float64)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.d.shape


@dataclass(frozen=True, eq=False)
class BlendField:
    b: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        if b.ndim != 2:
            raise ContractError("blend field must be 2-D")
        if not np.all(np.isfinite(b)) or b.min() < 0.0 or b.max() > 1.0:
            raise ContractError("blend coefficients must lie in [0, 1]")
        object.__setattr__(self, "b", _readonly(b))

    @property
    def shape(self) -> tuple[int, int]:
        return self.b.shape


def distance_transform(mask: np.ndarray) -> DistanceField:
    """Exact Euclidean distance from every pixel to the nearest True pixel.

    Separable lower-envelope-of-parabolas transform, linear in the pixel
    count. Raises EmptyRegionError if the mask has no True pixel.
    """
    mask = np.ascontiguousarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.size == 0:
        raise ContractError(f"mask must be a non-empty 2-D array, got shape {mask.shape}")
    if not mask.any():
        raise EmptyRegionError("distance transform of an empty region")
    d2, _, _ = _edt.squared_edt(mask)
    return DistanceField(np.sqrt(d2))


def compute_blend(partition: RegionPartition) -> BlendField:
    label = partition.label
    b = np.full(label.shape, 0.5)
    b[label == Region.AREA1] = 0.0
    b[label == Region.AREA2] = 1.0
    area3 = label == Region.AREA3
    if not area3.any():
        return BlendField(b)
    area1 = label == Region.AREA1
    area2 = label == Region.AREA2
    if not area1.any() or not area2.any():
        # one side has no exclusive pixels: no ramp to build
        return BlendField(b)
    lmin = distance_transform(area1).d[area3]
    rmin = distance_transform(area2).d[area3]
    total = lmin + rmin
    b[area3] = np.where(total > 0, lmin / np.where(total > 0, total, 1.0), 0.5)
    return BlendField(b)


def save_blend_png(blend: BlendField, path) -> None:
    """Debug view: 8-bit grayscale of ``b * 255``; brighter means closer to R."""
    arr = np.rint(blend.b * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(os.fspath(path), format="PNG", compress_level=6)
