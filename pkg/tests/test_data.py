import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from wrecon.data import (
    build_dataset,
    export_png,
    gen_phantoms,
    load_image,
    load_image_f32,
    load_png,
    read_manifest,
    save_image_f32,
    write_manifest,
)
from wrecon.kspace import generate_mask, undersample, zero_filled
from wrecon.metrics import hfen, nmse, psnr

RNG = np.random.default_rng(31337)


# ---------------------------------------------------------------------------
# phantoms


def test_phantoms_deterministic():
    a = gen_phantoms(3, 32, 32, seed=4)
    b = gen_phantoms(3, 32, 32, seed=4)
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa.image, pb.image)
    c = gen_phantoms(3, 32, 32, seed=5)
    assert any((pa.image != pc.image).any() for pa, pc in zip(a, c))


def test_phantom_range_and_shape():
    for ph in gen_phantoms(20, 32, 48, seed=1):
        assert ph.image.shape == (32, 48)
        assert ph.image.dtype == np.float32
        assert ph.image.min() >= 0.0 and ph.image.max() <= 1.0
        assert ph.primitives


def test_phantom_rejections():
    with pytest.raises(ValueError):
        gen_phantoms(0, 32, 32, seed=1)
    with pytest.raises(ValueError):
        gen_phantoms(1, 31, 32, seed=1)
    with pytest.raises(ValueError):
        gen_phantoms(1, 32, 32, seed=1, fine_detail_density=-1)


def test_detail_density_raises_high_frequency_content():
    smooth = gen_phantoms(6, 64, 64, seed=8, fine_detail_density=0.0)
    detailed = gen_phantoms(6, 64, 64, seed=8, fine_detail_density=1.0)

    def hf(ph):
        return hfen(gaussian_filter(ph.image.astype(np.float64), 1.0), ph.image)

    assert np.mean([hf(p) for p in smooth]) < np.mean([hf(p) for p in detailed])


# ---------------------------------------------------------------------------
# dataset pairing


def test_split_counts_mirror_ratio():
    phantoms = gen_phantoms(250, 16, 16, seed=2)
    mask = generate_mask(16, 4, 2, seed=1)
    train, val = build_dataset(phantoms, mask, split_ratio=0.69, seed=3)
    assert len(train) == 172 and len(val) == 78


def test_dataset_items_reproducible_and_disjoint():
    phantoms = gen_phantoms(10, 16, 16, seed=2)
    mask = generate_mask(16, 4, 2, seed=1)
    train, val = build_dataset(phantoms, mask, split_ratio=0.8, seed=3)
    assert set(train.ids()).isdisjoint(val.ids())
    for it in val.items:
        regen = zero_filled(undersample(it.target, mask), mask).real.astype(np.float32)
        assert regen.tobytes() == it.zero_filled.tobytes()
    train2, _ = build_dataset(phantoms, mask, split_ratio=0.8, seed=3)
    assert train.ids() == train2.ids()


def test_dataset_validation():
    mask = generate_mask(16, 4, 2, seed=1)
    with pytest.raises(ValueError):
        build_dataset([], mask, 0.8, 1)
    with pytest.raises(ValueError):
        build_dataset(gen_phantoms(4, 16, 16, seed=1), mask, 1.5, 1)


def test_undersampled_inputs_are_degraded():
    phantoms = gen_phantoms(20, 64, 64, seed=6)
    mask = generate_mask(64, 5, 4, seed=1)
    train, _ = build_dataset(phantoms, mask, 0.9, seed=0)
    nmses = [nmse(it.zero_filled, it.target) for it in train.items]
    psnrs = [psnr(it.zero_filled, it.target, float(it.target.max())) for it in train.items]
    assert np.mean(nmses) > 0.01
    assert np.isfinite(np.mean(psnrs))


# ---------------------------------------------------------------------------
# raw image format


def test_imgf_round_trip(tmp_path):
    img = RNG.uniform(-2, 2, (12, 20)).astype(np.float32)
    path = tmp_path / "x.imgf"
    save_image_f32(img, path)
    assert load_image_f32(path).tobytes() == img.tobytes()


def test_imgf_error_cases(tmp_path):
    p = tmp_path / "bad.imgf"
    p.write_bytes(b"")
    with pytest.raises(ValueError):
        load_image_f32(p)
    p.write_bytes(b"IMGF" + (1).to_bytes(4, "little") + (4).to_bytes(4, "little")
                  + (4).to_bytes(4, "little"))  # header only
    with pytest.raises(ValueError):
        load_image_f32(p)
    p.write_bytes(b"JUNK" + bytes(12 + 64))
    with pytest.raises(ValueError):
        load_image_f32(p)
    p.write_bytes(b"IMGF" + (9).to_bytes(4, "little") + (2).to_bytes(4, "little")
                  + (2).to_bytes(4, "little") + bytes(16))
    with pytest.raises(ValueError):
        load_image_f32(p)
    save_image_f32(np.zeros((2, 2), dtype=np.float32), p)
    blob = p.read_bytes()
    p.write_bytes(blob + b"\x00")  # trailing junk
    with pytest.raises(ValueError):
        load_image_f32(p)


# ---------------------------------------------------------------------------
# PNG export / import


def test_png_window_mapping(tmp_path):
    lo, hi = 0.2, 0.8
    for value, want in [(0.2, 0), (0.8, 255), (0.5, 128)]:
        path = tmp_path / f"v{int(value * 10)}.png"
        export_png(np.full((4, 4), value), path, window=(lo, hi))
        got = np.asarray(load_png(path) * 255, dtype=np.int64)
        assert np.all(np.abs(got - want) <= 1)


def test_png_invalid_window(tmp_path):
    with pytest.raises(ValueError):
        export_png(np.zeros((4, 4)), tmp_path / "x.png", window=(1.0, 1.0))


def test_load_image_dispatch(tmp_path):
    img = RNG.uniform(0, 1, (8, 8)).astype(np.float32)
    save_image_f32(img, tmp_path / "a.imgf")
    export_png(img, tmp_path / "a.png")
    assert load_image(tmp_path / "a.imgf").shape == (8, 8)
    assert load_image(tmp_path / "a.png").shape == (8, 8)
    with pytest.raises(ValueError):
        load_image(tmp_path / "a.jpg")


# ---------------------------------------------------------------------------
# manifest


def test_manifest_round_trip(tmp_path):
    m = {"seed": 3, "items": [{"id": "a", "path": "a.imgf"}]}
    write_manifest(tmp_path / "m.json", m)
    assert read_manifest(tmp_path / "m.json") == m
    write_manifest(tmp_path / "bad.json", {"items": []})
    with pytest.raises(ValueError):
        read_manifest(tmp_path / "bad.json")
