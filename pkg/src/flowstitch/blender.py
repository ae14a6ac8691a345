"""Flow-guided softmax blending of two canvas-aligned images, and a feathering baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .blendfield import BlendField
from .errors import ContractError
from .imagecore import ImageBuf, RegionPartition, _sample_px
from .optflow import FlowField, embed_flow


@dataclass(frozen=True)
class BlendParams:
    k_softmax_sharpness: float = 10.0
    k_flow_mag_coef: float = 0.05

    def __post_init__(self):
        if not (math.isfinite(self.k_softmax_sharpness) and self.k_softmax_sharpness > 0):
            raise ContractError(f"k_softmax_sharpness must be finite and > 0, got {self.k_softmax_sharpness}")
        if not (math.isfinite(self.k_flow_mag_coef) and self.k_flow_mag_coef >= 0):
            raise ContractError(f"k_flow_mag_coef must be finite and >= 0, got {self.k_flow_mag_coef}")


@njit(parallel=True, cache=True)
def _blend_kernel(ldata, lvalid, rdata, rvalid, flr, frl, blend, label,
                  k_sharp, k_mag, out, out_valid, color_l, color_r):
    h, w, nc = out.shape
    for j in prange(h):
        cl = np.empty(nc)
        cr = np.empty(nc)
        for i in range(w):
            lab = label[j, i]
            if lab == 1:
                for c in range(nc):
                    out[j, i, c] = ldata[j, i, c]
                    color_l[j, i, c] = ldata[j, i, c]
                    color_r[j, i, c] = ldata[j, i, c]
                out_valid[j, i] = True
            elif lab == 2:
                for c in range(nc):
                    out[j, i, c] = rdata[j, i, c]
                    color_l[j, i, c] = rdata[j, i, c]
                    color_r[j, i, c] = rdata[j, i, c]
                out_valid[j, i] = True
            elif lab == 3:
                blend_l = 1.0 - blend[j, i]
                blend_r = blend[j, i]
                lx = i + frl[j, i, 0] * (1.0 - blend_l)
                ly = j + frl[j, i, 1] * (1.0 - blend_l)
                _sample_px(ldata, lvalid, lx, ly, cl)
                rx = i + flr[j, i, 0] * (1.0 - blend_r)
                ry = j + flr[j, i, 1] * (1.0 - blend_r)
                _sample_px(rdata, rvalid, rx, ry, cr)
                mag_rl = math.sqrt(frl[j, i, 0] ** 2 + frl[j, i, 1] ** 2)
                mag_lr = math.sqrt(flr[j, i, 0] ** 2 + flr[j, i, 1] ** 2)
                flow_l = 1.0 + k_mag * mag_rl
                a_l = k_sharp * blend_l * flow_l
                flow_r = 1.0 + k_mag * mag_lr
                a_r = k_sharp * blend_r * flow_r
                # max-shifted softmax; same value, no overflow
                m = max(a_l, a_r)
                exp_l = math.exp(a_l - m)
                exp_r = math.exp(a_r - m)
                soft_l = exp_l / (exp_l + exp_r)
                soft_r = exp_r / (exp_l + exp_r)
                for c in range(nc):
                    v = cl[c] * soft_l + cr[c] * soft_r
                    out[j, i, c] = min(max(v, 0.0), 1.0)
                    color_l[j, i, c] = cl[c]
                    color_r[j, i, c] = cr[c]
                out_valid[j, i] = True
            else:
                for c in range(nc):
                    out[j, i, c] = 0.0
                    color_l[j, i, c] = 0.0
                    color_r[j, i, c] = 0.0
                out_valid[j, i] = False


def _canvas_flow(flow: FlowField, shape: tuple[int, int]) -> np.ndarray:
    if flow.shape != shape:
        flow = embed_flow(flow, shape[1], shape[0])
    return np.ascontiguousarray(flow.vectors, dtype=np.float64)


def _check_inputs(L: ImageBuf, R: ImageBuf, blend: BlendField, partition: RegionPartition):
    shape = partition.shape
    for name, s in (("L", L.shape), ("R", R.shape), ("blend", blend.shape)):
        if s != shape:
            raise ContractError(f"{name} has size {s}, canvas is {shape}")
    if L.channels != R.channels:
        raise ContractError(f"channel counts differ: L={L.channels}, R={R.channels}")


def blend_pair(
    L: ImageBuf,
    R: ImageBuf,
    flow_l_to_r: FlowField,
    flow_r_to_l: FlowField,
    blend: BlendField,
    partition: RegionPartition,
    params: BlendParams | None = None,
    return_constituents: bool = False,
):
    """Blend two canvas-sized images through the overlap using both flow fields.

    L-only pixels copy L, R-only pixels copy R, pixels covered by neither are
    0 and invalid. In the overlap each side is reverse-mapped along its flow,
    scaled by how far the pixel sits from that side, and the two samples are
    mixed with softmax weights driven by the blend coefficient and by the
    per-pixel flow magnitudes.

    Flow fields may be canvas-sized or overlap crops (embedded at their
    ``origin``; zero flow elsewhere).

    With ``return_constituents`` the reverse-mapped L and R samples are also
    returned as HxWxC arrays (equal to the output outside the overlap).
    """
    p = params or BlendParams()
    _check_inputs(L, R, blend, partition)
    shape = partition.shape
    flr = _canvas_flow(flow_l_to_r, shape)
    frl = _canvas_flow(flow_r_to_l, shape)
    h, w = shape
    nc = L.channels
    out = np.empty((h, w, nc))
    out_valid = np.empty((h, w), bool)
    color_l = np.empty((h, w, nc))
    color_r = np.empty((h, w, nc))
    _blend_kernel(L.data, L.valid, R.data, R.valid, flr, frl, blend.b, partition.label,
                  float(p.k_softmax_sharpness), float(p.k_flow_mag_coef),
                  out, out_valid, color_l, color_r)
    result = ImageBuf(out, out_valid)
    if return_constituents:
        return result, color_l, color_r
    return result


def feather_blend(L: ImageBuf, R: ImageBuf, blend: BlendField, partition: RegionPartition) -> ImageBuf:
    """Linear baseline: ``(1 - b) * L + b * R`` in the overlap, no motion compensation."""
    _check_inputs(L, R, blend, partition)
    label = partition.label
    b = blend.b[:, :, None]
    out = np.zeros(L.data.shape)
    out = np.where((label == 1)[:, :, None], L.data, out)
    out = np.where((label == 2)[:, :, None], R.data, out)
    out = np.where((label == 3)[:, :, None], (1.0 - b) * L.data + b * R.data, out)
    return ImageBuf(np.clip(out, 0.0, 1.0), label != 0)
