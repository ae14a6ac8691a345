"""End-to-end acceptance checks, one recorded line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as they
are produced; they are also repeated in the terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from flowstitch import (
    BlendField,
    BlendParams,
    FlowField,
    ImageBuf,
    Region,
    blend_pair,
    compute_blend,
    compute_partition,
    dense_pyr_lk,
    distance_transform,
    parse_layout,
    read_flo,
    stitch_all,
    threads,
    write_flo,
)
from flowstitch.cli import run
from flowstitch.pipeline import stitch_images
from flowstitch.synthetic import parallax_scene, shift_image, smooth_texture, window_strip

from oracles import brute_blend, brute_edt, naive_blend, write_png


def test_edt_oracle(rng, criterion):
    distance_transform(np.eye(4, dtype=bool))  # compile outside the timed region
    worst, elapsed = 0.0, 0.0
    for _ in range(50):
        h, w = rng.integers(1, 65, size=2)
        mask = rng.random((h, w)) < rng.uniform(0.005, 0.3)
        mask[rng.integers(h), rng.integers(w)] = True
        t0 = time.perf_counter()
        d = distance_transform(mask).d
        elapsed += time.perf_counter() - t0
        worst = max(worst, float(np.abs(d - brute_edt(mask)).max()))
    ok = worst <= 1e-6 and elapsed < 10.0
    criterion("EDT oracle", ok, f"50 masks, max error {worst:.2e} (<= 1e-6), {elapsed:.3f} s (< 10 s)")
    assert ok


def random_rect(rng, h, w):
    y0, x0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
    y1, x1 = rng.integers(y0 + 2, h + 1), rng.integers(x0 + 2, w + 1)
    m = np.zeros((h, w), bool)
    m[y0:y1, x0:x1] = True
    return m


def test_blend_coefficient_conformance(rng, criterion):
    worst, exact, n = 0.0, True, 0
    while n < 20:
        h, w = rng.integers(16, 64, size=2)
        ml, mr = random_rect(rng, h, w), random_rect(rng, h, w)
        if not (ml & mr).any():
            continue
        n += 1
        part = compute_partition(ml, mr)
        b = compute_blend(part).b
        exact &= bool((b[part.mask(Region.AREA1)] == 0).all()
                      and (b[part.mask(Region.AREA2)] == 1).all()
                      and (b[part.mask(Region.OUTSIDE)] == 0.5).all())
        a3 = part.mask(Region.AREA3)
        worst = max(worst, float(np.abs(b[a3] - brute_blend(part.label)[a3]).max()))
    ok = exact and worst <= 1e-6
    criterion("blend coefficient conformance", ok,
              f"20 layouts, fixed regions exact={exact}, overlap max error {worst:.2e} (<= 1e-6)")
    assert ok


def test_blend_oracle_equivalence(rng, criterion):
    worst = 0.0
    for _ in range(10):
        h = w = 128
        ml, mr = random_rect(rng, h, w), random_rect(rng, h, w)
        ml[:, :40] = True
        mr[:, 88:] = True
        ml[:, 40:88] |= mr[:, 40:88]
        mr[:, 40:88] = True
        part = compute_partition(ml, mr)
        L = ImageBuf(rng.random((h, w, 3)), ml)
        R = ImageBuf(rng.random((h, w, 3)), mr)
        vlr = rng.uniform(-10, 10, (h, w, 2)).astype(np.float32)
        vrl = rng.uniform(-10, 10, (h, w, 2)).astype(np.float32)
        all_valid = np.ones((h, w), bool)
        params = BlendParams(rng.uniform(1, 20), rng.uniform(0, 0.2))
        blend = compute_blend(part)
        F = blend_pair(L, R, FlowField(vlr, all_valid), FlowField(vrl, all_valid), blend, part, params)
        ref = naive_blend(L.data, ml, R.data, mr, vlr.astype(float), vrl.astype(float), blend.b,
                          part.label, params.k_softmax_sharpness, params.k_flow_mag_coef)
        worst = max(worst, float(np.abs(F.data - ref).max()))
    ok = worst <= 1e-6
    criterion("flow-aware blend vs scalar reference", ok, f"10 cases 128x128, max error {worst:.2e} (<= 1e-6)")
    assert ok


def test_flow_translation_recovery(criterion):
    tex = smooth_texture(128, 128, sigma=3.0, seed=7)
    results = {}
    for t in [(3, 0), (0, -4), (5, 3)]:
        flow = dense_pyr_lk(ImageBuf.full(tex), ImageBuf.full(shift_image(tex, *t)))
        v = flow.vectors[16:-16, 16:-16].astype(float)
        results[t] = float(np.hypot(v[..., 0] - t[0], v[..., 1] - t[1]).mean())
    ok = all(e <= 0.5 for e in results.values())
    detail = ", ".join(f"{t}: {e:.3f} px" for t, e in results.items())
    criterion("flow translation recovery", ok, f"interior mean EPE {detail} (<= 0.5)")
    assert ok


def test_zero_flow_softmax_reduction(rng, criterion):
    h = w = 100
    m = np.ones((h, w), bool)
    part = compute_partition(m, m)
    b = rng.random((h, w))
    L = ImageBuf(rng.random((h, w, 3)), m)
    R = ImageBuf(rng.random((h, w, 3)), m)
    k = BlendParams().k_softmax_sharpness
    zero = FlowField.zeros(w, h)
    F = blend_pair(L, R, zero, zero, BlendField(b), part)
    worst = 0.0
    for y in range(h):
        for x in range(w):
            s = 1.0 / (1.0 + math.exp(-k * ((1.0 - b[y, x]) - b[y, x])))
            ref = s * L.data[y, x] + (1.0 - s) * R.data[y, x]
            worst = max(worst, float(np.abs(F.data[y, x] - ref).max()))
    ok = worst <= 1e-9
    criterion("zero-flow logistic reduction", ok, f"10^4 pixels, max error {worst:.2e} (<= 1e-9)")
    assert ok


def test_seam_reduction_surrogate(criterion):
    ratios = []
    for seed, px in enumerate([6, 7, 8, 9, 10]):
        scene = parallax_scene((px, 0), seed=seed)
        _, report = stitch_images([scene.left, scene.right], [scene.left_offset, scene.right_offset],
                                  scene.canvas)
        pair = report.pairs[0]
        ratios.append((px, pair.misalignment_before, pair.misalignment_after))
    ok = all(after <= 0.5 * before for _, before, after in ratios)
    detail = ", ".join(f"{px}px: {a:.2f}/{b:.2f}" for px, b, a in ratios)
    criterion("seam misalignment, flow vs feather", ok, f"flow/feather {detail} (ratio <= 0.5 each)")
    assert ok


@pytest.fixture(scope="module")
def strip(tmp_path_factory):
    root = tmp_path_factory.mktemp("strip")
    tex = np.rint(smooth_texture(600, 1600, sigma=3.0, seed=42, channels=3) * 255) / 255
    images = []
    for k, (win, x) in enumerate(window_strip(tex, 3, overlap=250)):
        write_png(root / f"win{k}.png", np.rint(win * 255).astype(np.uint8))
        images.append({"path": f"win{k}.png", "offset": {"x": x, "y": 0}, "mask": None})
    doc = {"canvas": {"width": 1600, "height": 600}, "images": images}
    (root / "layout.json").write_text(json.dumps(doc))
    return root, tex


def test_identity_stitch(strip, criterion):
    root, tex = strip
    F, _ = stitch_all(parse_layout(root / "layout.json"), measure=False)
    frac = float((np.abs(F.data - tex) <= 1 / 255 + 1e-12).all(axis=2).mean())
    ok = frac >= 0.99
    criterion("identity stitch 1600x600", ok, f"{100 * frac:.3f}% of pixels within 1/255 (>= 99%)")
    assert ok


def test_determinism_across_threads(strip, criterion):
    root, _ = strip
    outs = {}
    for n in ("1", "8"):
        out = root / f"pano_t{n}.png"
        assert run(["stitch", "--layout", str(root / "layout.json"), "--out", str(out),
                    "--no-metrics", "--threads", n]) == 0
        outs[n] = out.read_bytes()
    ok = outs["1"] == outs["8"]
    criterion("determinism --threads 1 vs 8", ok, f"byte-identical={ok} ({len(outs['1'])} bytes)")
    assert ok


@pytest.mark.slow
def test_throughput_informational(criterion):
    tex = smooth_texture(1000, 2000, sigma=3.0, seed=5, channels=3)
    left = ImageBuf.full(tex[:, :1200])
    right = ImageBuf.full(tex[:, 800:])
    timings = {}
    for n in (1, 4):
        with threads(n):
            stitch_images([left, right], [(0, 0), (800, 0)], (2000, 1000), measure=False)  # warm
            t0 = time.perf_counter()
            stitch_images([left, right], [(0, 0), (800, 0)], (2000, 1000), measure=False)
            timings[n] = time.perf_counter() - t0
    speedup = timings[1] / timings[4]
    criterion("throughput (informational)", None,
              f"2000x1000 pair {timings[1]:.2f} s at 1 thread (target < 60 s), "
              f"{timings[4]:.2f} s at 4 threads, speedup {speedup:.2f}x (target >= 2x on >= 4 cores)")


def test_flo_round_trip(rng, tmp_path, criterion):
    v = (rng.normal(size=(97, 131, 2)) * 30).astype(np.float32)
    write_flo(tmp_path / "r.flo", FlowField(v, np.ones((97, 131), bool)))
    back = read_flo(tmp_path / "r.flo")
    ok = back.vectors.tobytes() == v.tobytes()
    criterion(".flo round-trip", ok, f"bit-identical={ok}")
    assert ok
