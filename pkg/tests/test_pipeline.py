import json

import numpy as np
import pytest

from flowstitch import (
    ContractError,
    ImageBuf,
    LayoutError,
    NoOverlapError,
    NoTextureError,
    compute_partition,
    estimate_translation,
    load_image,
    misalignment_score,
    parse_layout,
    save_image,
    stitch_all,
)
from flowstitch.imagecore import place
from flowstitch.pipeline import stitch_images
from flowstitch.synthetic import parallax_scene, shift_image, smooth_texture, window_strip

from oracles import write_png


def write_layout(tmp_path, images, canvas, name="layout.json", masks=None):
    entries = []
    for k, (arr, (x, y)) in enumerate(images):
        path = f"img{k}.png"
        write_png(tmp_path / path, np.rint(arr * 255).astype(np.uint8))
        entry = {"path": path, "offset": {"x": x, "y": y}, "mask": None}
        if masks and masks[k] is not None:
            write_png(tmp_path / f"mask{k}.png", masks[k])
            entry["mask"] = f"mask{k}.png"
        entries.append(entry)
    doc = {"canvas": {"width": canvas[0], "height": canvas[1]}, "images": entries}
    (tmp_path / name).write_text(json.dumps(doc))
    return tmp_path / name


# -- layout -------------------------------------------------------------------


def test_parse_two_entries(tmp_path):
    img = np.zeros((768, 1024))
    path = write_layout(tmp_path, [(img, (0, 0)), (img, (600, 0))], (1624, 768))
    layout = parse_layout(path)
    assert len(layout.entries) == 2
    assert (layout.canvas_width, layout.canvas_height) == (1624, 768)
    assert layout.entries[1].offset_x == 600


def test_parse_sorts_by_offset_stably(tmp_path):
    img = np.zeros((4, 4))
    path = write_layout(tmp_path, [(img, (6, 0)), (img, (0, 0)), (img, (6, 1)), (img, (3, 0))], (10, 5))
    layout = parse_layout(path)
    assert [(e.offset_x, e.offset_y) for e in layout.entries] == [(0, 0), (3, 0), (6, 0), (6, 1)]


def test_parse_out_of_canvas(tmp_path):
    img = np.zeros((768, 1024))
    path = write_layout(tmp_path, [(img, (0, 0)), (img, (601, 0))], (1624, 768))
    with pytest.raises(LayoutError, match=r"images\[1\]"):
        parse_layout(path)


def test_parse_schema_errors(tmp_path):
    img = np.zeros((4, 4))
    write_png(tmp_path / "a.png", img.astype(np.uint8))
    good = {"path": "a.png", "offset": {"x": 0, "y": 0}, "mask": None}
    cases = {
        "images": {"canvas": {"width": 8, "height": 8}, "images": []},
        "canvas.width": {"canvas": {"height": 8}, "images": [good, good]},
        "images[1].offset.x": {"canvas": {"width": 8, "height": 8},
                               "images": [good, {"path": "a.png", "offset": {"x": "1", "y": 0}}]},
        "images[0].path": {"canvas": {"width": 8, "height": 8}, "images": [{"offset": {"x": 0, "y": 0}}, good]},
        "images[0].mask": {"canvas": {"width": 8, "height": 8}, "images": [dict(good, mask=3), good]},
    }
    for field, doc in cases.items():
        (tmp_path / "l.json").write_text(json.dumps(doc))
        with pytest.raises(LayoutError) as info:
            parse_layout(tmp_path / "l.json")
        assert field in str(info.value)
    (tmp_path / "l.json").write_text(json.dumps(cases["images"]))
    with pytest.raises(LayoutError, match="at least two images required"):
        parse_layout(tmp_path / "l.json")
    (tmp_path / "l.json").write_text("{not json")
    with pytest.raises(LayoutError):
        parse_layout(tmp_path / "l.json")


def test_parse_missing_image(tmp_path):
    doc = {"canvas": {"width": 8, "height": 8},
           "images": [{"path": "nope.png", "offset": {"x": 0, "y": 0}}] * 2}
    (tmp_path / "l.json").write_text(json.dumps(doc))
    with pytest.raises(OSError):
        parse_layout(tmp_path / "l.json")


# -- stitching ----------------------------------------------------------------


def test_two_identical_images_same_offset(tmp_path):
    tex = smooth_texture(40, 60, seed=1, channels=3)
    path = write_layout(tmp_path, [(tex, (5, 3)), (tex, (5, 3))], (70, 50))
    F, report = stitch_all(parse_layout(path))
    src = load_image(tmp_path / "img0.png").data
    np.testing.assert_allclose(F.data[3:43, 5:65], src, atol=1e-12)
    assert F.valid.sum() == 40 * 60
    assert report.pairs[0].overlap_pixels == 40 * 60


def test_three_window_strip_restitches_texture(tmp_path):
    tex = np.rint(smooth_texture(120, 400, seed=2, channels=3) * 255) / 255
    windows = window_strip(tex, 3, overlap=60)
    path = write_layout(tmp_path, [(w, (x, 0)) for w, x in windows], (400, 120))
    F, report = stitch_all(parse_layout(path))
    err = np.abs(F.data - tex).max(axis=2)
    assert (err <= 1 / 255).mean() >= 0.99
    assert F.valid.all()
    assert len(report.pairs) == 2
    for pair in report.pairs:
        assert pair.misalignment_before == 0.0 and pair.misalignment_after == 0.0


def test_mask_conservation_and_locality():
    tex = smooth_texture(60, 150, seed=4)
    a = ImageBuf.full(tex[:40, :80])
    b_valid = np.ones((40, 80), bool)
    b_valid[:8, :8] = False
    b = ImageBuf(tex[20:60, 70:150], b_valid)
    F, _ = stitch_images([a, b], [(0, 0), (70, 20)], (150, 60), measure=False)
    union = place(a, 150, 60, (0, 0)).valid | place(b, 150, 60, (70, 20)).valid
    np.testing.assert_array_equal(F.valid, union)
    # L-only pixels are copied untouched
    np.testing.assert_array_equal(F.data[:20, :70, 0], tex[:20, :70])


def test_mask_file_limits_valid_region(tmp_path):
    tex = smooth_texture(30, 90, seed=5)
    mask = np.full((30, 50), 255, np.uint8)
    mask[:, :5] = 0
    path = write_layout(tmp_path, [(tex[:, :50], (0, 0)), (tex[:, 40:], (40, 0))], (90, 30),
                        masks=[None, mask])
    F, report = stitch_all(parse_layout(path))
    assert F.valid.all()
    assert report.pairs[0].overlap_pixels == 30 * 5


def test_no_overlap_names_the_pair(tmp_path):
    img = smooth_texture(10, 10, seed=6)
    path = write_layout(tmp_path, [(img, (0, 0)), (img, (20, 0))], (30, 10))
    with pytest.raises(NoOverlapError, match=r"image 1 .*img1\.png"):
        stitch_all(parse_layout(path))


def test_stitch_mixed_channels():
    tex = smooth_texture(30, 60, seed=8, channels=3)
    gray = ImageBuf.full(tex[:, 20:, 0])
    F, _ = stitch_images([ImageBuf.full(tex[:, :40]), gray], [(0, 0), (20, 0)], (60, 30), measure=False)
    assert F.channels == 3


def test_parallax_pair_flow_beats_feather():
    scene = parallax_scene((8, 0), seed=3)
    F, report = stitch_images([scene.left, scene.right], [scene.left_offset, scene.right_offset],
                              scene.canvas)
    pair = report.pairs[0]
    assert pair.misalignment_after < pair.misalignment_before
    assert pair.mean_flow_mag_lr > 0.5


def test_report_json(tmp_path):
    scene = parallax_scene((6, 0), seed=1, channels=1)
    _, report = stitch_images([scene.left, scene.right], [scene.left_offset, scene.right_offset],
                              scene.canvas)
    report.to_json(tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    pair = doc["pairs"][0]
    for key in ("overlap_pixels", "mean_flow_mag_lr", "mean_flow_mag_rl",
                "misalignment_before", "misalignment_after", "timings"):
        assert key in pair
    assert pair["overlap_pixels"] > 0
    assert all(t >= 0 for t in pair["timings"].values())


# -- translation search -------------------------------------------------------


def test_estimate_translation_shift():
    tex = smooth_texture(64, 64, seed=11)
    dx, dy, score = estimate_translation(ImageBuf.full(tex), ImageBuf.full(shift_image(tex, 5, -3)), 8)
    assert (dx, dy) == (5, -3) and score > 0.99


def test_estimate_translation_identity():
    tex = smooth_texture(32, 32, seed=12)
    dx, dy, score = estimate_translation(ImageBuf.full(tex), ImageBuf.full(tex), 4)
    assert (dx, dy) == (0, 0) and score == pytest.approx(1.0)


def test_estimate_translation_errors():
    flat = ImageBuf.full(np.full((32, 32), 0.3))
    with pytest.raises(NoTextureError):
        estimate_translation(flat, flat, 4)
    tex = ImageBuf.full(smooth_texture(32, 32, seed=1))
    with pytest.raises(ContractError):
        estimate_translation(tex, tex, 9)


# -- misalignment metric ------------------------------------------------------


def overlap_pair(tex, t):
    h, w = tex.shape[:2]
    m = np.ones((h, w), bool)
    return ImageBuf.full(tex), ImageBuf.full(shift_image(tex, *t)), compute_partition(m, m)


def test_misalignment_zero_for_identical():
    L, R, part = overlap_pair(smooth_texture(96, 96, seed=2), (0, 0))
    assert misalignment_score(L, R, part) == 0.0


@pytest.mark.parametrize("t", [(4, 0), (0, -4), (3, 3), (-7, 2), (12, 0)])
def test_misalignment_translation_covariant(t):
    L, R, part = overlap_pair(smooth_texture(160, 160, seed=9), t)
    assert misalignment_score(L, R, part, stride=16) == pytest.approx(np.hypot(*t), abs=0.5)


def test_misalignment_no_texture():
    L, R, part = overlap_pair(np.full((64, 64), 0.5), (0, 0))
    with pytest.raises(NoTextureError):
        misalignment_score(L, R, part)


def test_misalignment_ignores_pixels_outside_overlap():
    tex = smooth_texture(64, 128, seed=4)
    ml = np.zeros((64, 128), bool)
    mr = np.zeros((64, 128), bool)
    ml[:, :80] = True
    mr[:, 40:] = True
    noise = np.random.default_rng(0).random((64, 128))
    Ld = np.where(ml, tex, noise)
    Rd = np.where(mr, tex, noise)
    assert misalignment_score(ImageBuf(Ld, ml), ImageBuf(Rd, mr), compute_partition(ml, mr), stride=8) == 0.0


def test_save_load_stitched(tmp_path):
    scene = parallax_scene((6, 0), seed=2, channels=1)
    F, _ = stitch_images([scene.left, scene.right], [scene.left_offset, scene.right_offset],
                         scene.canvas, measure=False)
    save_image(F, tmp_path / "p.png")
    assert np.abs(load_image(tmp_path / "p.png").data - F.data).max() <= 0.5 / 255 + 1e-12
