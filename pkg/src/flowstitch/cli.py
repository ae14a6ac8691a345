"""Command-line front end.

    flowstitch flow    --from A.png --to B.png --out f.flo
    flowstitch blend   --left L.png --right R.png --left-offset 0,0 --right-offset 600,0 \\
                       --canvas 1624x768 --out F.png
    flowstitch stitch  --layout layout.json --out pano.png --report report.json
    flowstitch metrics --left L.png --right R.png --right-offset 600,0 --json

Exit status: 0 on success, 1 on usage/contract/layout errors, 2 on I/O errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from . import _parallel
from .blender import BlendParams, blend_pair, feather_blend
from .blendfield import compute_blend, save_blend_png
from .errors import ContractError, FlowStitchError, NoTextureError
from .imagecore import compute_partition, crop_overlap, load_image, place, save_image, to_gray, to_rgb
from .optflow import FlowParams, bidirectional_flow, dense_pyr_lk, write_flo
from .pipeline import misalignment_displacements, parse_layout, stitch_all

log = logging.getLogger("flowstitch")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> tuple[int, int]:
    try:
        x, y = text.split(",")
        return int(x), int(y)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y integers, got {text!r}") from None


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError(f"canvas size must be positive, got {text!r}")
    return w, h


def _env_threads() -> int:
    try:
        return int(os.environ.get(_parallel.ENV_THREADS, "0") or 0)
    except ValueError:
        return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=_env_threads(),
                   help="worker threads, 0 = auto (default: $FLOWSTITCH_THREADS or 0)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_flow_flags(p: argparse.ArgumentParser) -> None:
    d = FlowParams()
    g = p.add_argument_group("optical flow")
    g.add_argument("--levels", type=int, default=d.levels)
    g.add_argument("--window", type=int, default=d.window_radius, help="LK window radius")
    g.add_argument("--iters", type=int, default=d.iterations_per_level)
    g.add_argument("--eps", type=float, default=d.min_eigen_eps, help="min eigenvalue per window pixel")
    g.add_argument("--smooth", type=int, default=d.smoothing_passes, help="flow box-blur passes per level")


def _add_blend_flags(p: argparse.ArgumentParser) -> None:
    d = BlendParams()
    g = p.add_argument_group("blending")
    g.add_argument("--k-sharpness", type=float, default=d.k_softmax_sharpness)
    g.add_argument("--k-flowmag", type=float, default=d.k_flow_mag_coef)


def _add_placement(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--left", required=True)
    p.add_argument("--right", required=True)
    p.add_argument("--left-offset", type=_pair, default=(0, 0))
    p.add_argument("--right-offset", type=_pair, default=None if required else (0, 0),
                   required=required)
    p.add_argument("--canvas", type=_size, default=None,
                   help="WxH; default is the bounding box of both placed images")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowstitch", description="Optical-flow panorama blending.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", help="dense LK flow from one image to another")
    p.add_argument("--from", dest="src", required=True)
    p.add_argument("--to", dest="dst", required=True)
    p.add_argument("--out", required=True, help=".flo output")
    _add_flow_flags(p)
    _add_common(p)

    p = sub.add_parser("blend", help="blend two placed images")
    _add_placement(p, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("flow", "feather"), default="flow")
    p.add_argument("--blend-field", default=None, help="also write the blend coefficients as PNG")
    _add_flow_flags(p)
    _add_blend_flags(p)
    _add_common(p)

    p = sub.add_parser("stitch", help="stitch every image of a layout file")
    p.add_argument("--layout", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="write a JSON stitch report")
    p.add_argument("--no-metrics", action="store_true", help="skip misalignment scoring")
    _add_flow_flags(p)
    _add_blend_flags(p)
    _add_common(p)

    p = sub.add_parser("metrics", help="patch-NCC misalignment between two placed images")
    _add_placement(p, required=False)
    p.add_argument("--patch-radius", type=int, default=8)
    p.add_argument("--stride", type=int, default=32)
    p.add_argument("--json", action="store_true")
    _add_common(p)
    return parser


def _flow_params(a) -> FlowParams:
    return FlowParams(a.levels, a.window, a.iters, a.eps, a.smooth)


def _blend_params(a) -> BlendParams:
    return BlendParams(a.k_sharpness, a.k_flowmag)


def _check_out(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"output directory does not exist: {parent}")


def _placed(a):
    left, right = load_image(a.left), load_image(a.right)
    if left.channels != right.channels:
        left, right = to_rgb(left), to_rgb(right)
    if a.canvas is None:
        w = max(a.left_offset[0] + left.width, a.right_offset[0] + right.width)
        h = max(a.left_offset[1] + left.height, a.right_offset[1] + right.height)
    else:
        w, h = a.canvas
    return place(left, w, h, a.left_offset), place(right, w, h, a.right_offset)


def _cmd_flow(a) -> None:
    fp = _flow_params(a)
    _check_out(a.out)
    src, dst = to_gray(load_image(a.src)), to_gray(load_image(a.dst))
    if src.shape != dst.shape:
        raise ContractError(f"--from is {src.width}x{src.height} but --to is {dst.width}x{dst.height}")
    log.info("flow params: %s", asdict(fp))
    write_flo(a.out, dense_pyr_lk(src, dst, fp))


def _cmd_blend(a) -> None:
    fp, bp = _flow_params(a), _blend_params(a)
    _check_out(a.out)
    log.info("flow params: %s", asdict(fp))
    log.info("blend params: %s", asdict(bp))
    L, R = _placed(a)
    part = compute_partition(L.valid, R.valid)
    crop_l = crop_overlap(L, part)  # raises "no overlap"
    crop_r = crop_overlap(R, part)
    blend = compute_blend(part)
    if a.blend_field:
        save_blend_png(blend, a.blend_field)
    if a.method == "feather":
        F = feather_blend(L, R, blend, part)
    else:
        flow_lr, flow_rl = bidirectional_flow(crop_l, crop_r, fp)
        F = blend_pair(L, R, flow_lr, flow_rl, blend, part, bp)
    save_image(F, a.out)


def _cmd_stitch(a) -> None:
    fp, bp = _flow_params(a), _blend_params(a)
    _check_out(a.out)
    if a.report:
        _check_out(a.report)
    log.info("flow params: %s", asdict(fp))
    log.info("blend params: %s", asdict(bp))
    layout = parse_layout(a.layout)
    F, report = stitch_all(layout, fp, bp, measure=not a.no_metrics)
    save_image(F, a.out)
    if a.report:
        report.to_json(a.report)


def _cmd_metrics(a) -> None:
    L, R = _placed(a)
    part = compute_partition(L.valid, R.valid)
    res = misalignment_displacements(L, R, part, a.patch_radius, a.stride)
    if len(res) == 0:
        raise NoTextureError("no textured patches in the overlap")
    score = float(np.hypot(res[:, 0], res[:, 1]).mean())
    if a.json:
        print(json.dumps({"misalignment": score, "patches": int(len(res)),
                          "patch_radius": a.patch_radius, "stride": a.stride}))
    else:
        print(f"misalignment: {score:.3f} px over {len(res)} patches")


COMMANDS = {"flow": _cmd_flow, "blend": _cmd_blend, "stitch": _cmd_stitch, "metrics": _cmd_metrics}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if a.verbose == 0 else
                        logging.INFO if a.verbose == 1 else logging.DEBUG,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        n = _parallel.set_threads(a.threads)
        log.info("threads: %d", n)
        COMMANDS[a.command](a)
    except OSError as exc:
        print(f"flowstitch: I/O error: {exc}", file=sys.stderr)
        return 2
    except (FlowStitchError, ValueError) as exc:
        print(f"flowstitch: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
