import numpy as np
import pytest
from PIL import Image
from scipy.stats import chisquare

from depthadapt.core import DepthMap, ImageSample, seeded_rng
from depthadapt.datasets import (
    AugmentConfig,
    DatasetManifest,
    IngestionError,
    PairedDataset,
    SubsetSizeError,
    UnpairedDataset,
    augment,
    load_paired,
    load_unpaired,
    sample_subsets,
    write_depth_png,
    write_image_png,
)
from depthadapt.networks import ConfigurationError

from conftest import random_pairs


def _toy_tree(root, n, with_depth=True, res=(8, 10), depth_fn=None):
    (root / "images").mkdir(parents=True)
    if with_depth:
        (root / "depth").mkdir()
    rng = np.random.default_rng(0)
    for i in range(n):
        write_image_png(root / "images" / f"{i:03d}.png", rng.random((*res, 3)))
        if with_depth:
            d = depth_fn(i) if depth_fn else rng.uniform(0.5, 5, res)
            write_depth_png(root / "depth" / f"{i:03d}.png", d)
    DatasetManifest("images/*.png", "depth/*.png" if with_depth else None, 0.001, 10.0, "toy", "train").write(root)
    return root


def test_load_paired_counts(tmp_path):
    ds = load_paired(_toy_tree(tmp_path / "s", 3))
    assert len(ds) == 3 and ds.name == "toy"
    assert ds.items[0][0].shape == ds.items[0][1].shape == (8, 10)


def test_missing_depth_names_frame(tmp_path):
    root = _toy_tree(tmp_path / "s", 3)
    (root / "depth" / "001.png").unlink()
    with pytest.raises(IngestionError, match="001"):
        load_paired(root)


def test_unreadable_image(tmp_path):
    root = _toy_tree(tmp_path / "s", 2)
    (root / "images" / "000.png").write_bytes(b"garbage")
    with pytest.raises(IngestionError, match="000"):
        load_paired(root)


def test_sixteen_bit_millimeters(tmp_path):
    root = tmp_path / "mm"
    (root / "images").mkdir(parents=True)
    (root / "depth").mkdir()
    write_image_png(root / "images" / "a.png", np.zeros((2, 3, 3)))
    raw = np.array([[0, 1, 1500], [2500, 65535, 40000]], dtype=np.uint16)
    Image.fromarray(raw).save(root / "depth" / "a.png")
    DatasetManifest("images/*.png", "depth/*.png", 0.001).write(root)
    (_, dm), = load_paired(root).items
    assert np.array_equal(dm.depths[..., 0], (raw / 1000.0).astype(np.float32))
    assert dm.valid_mask.tolist() == [[False, True, True], [True, True, True]]


def test_npy_depth_and_preset_layout(tmp_path):
    root = tmp_path / "p"
    (root / "rgb").mkdir(parents=True)
    (root / "depth").mkdir()
    write_image_png(root / "rgb" / "f.png", np.ones((4, 4, 3)))
    np.save(root / "depth" / "f.npy", np.full((4, 4), 3000.0))
    DatasetManifest("rgb/*.png", "depth/*.npy", 0.001).write(root)
    assert load_paired(root).items[0][1].depths.max() == pytest.approx(3.0)
    (root / "manifest.yaml").unlink()
    with pytest.raises(IngestionError):
        load_paired(root)
    np.save(root / "depth" / "f.npy", np.full((4, 4), 3000.0))
    (root / "depth" / "f.png").write_bytes(b"")  # presets glob png; empty file is unreadable
    with pytest.raises(IngestionError):
        load_paired(root, layout="nyu")


def test_unknown_manifest_key(tmp_path):
    root = _toy_tree(tmp_path / "s", 1)
    (root / "manifest.yaml").write_text("image_glob: images/*.png\nbogus: 1\n")
    with pytest.raises(IngestionError, match="bogus"):
        load_unpaired(root)


def test_load_unpaired(tmp_path):
    assert len(load_unpaired(_toy_tree(tmp_path / "t", 5, with_depth=False))) == 5
    empty = tmp_path / "empty"
    empty.mkdir()
    DatasetManifest("images/*.png").write(empty)
    with pytest.raises(IngestionError):
        load_unpaired(empty)
    with pytest.raises(IngestionError):
        load_unpaired(tmp_path / "nope")


def test_unpaired_keeps_mixed_resolutions(tmp_path):
    root = tmp_path / "mix"
    (root / "images").mkdir(parents=True)
    write_image_png(root / "images" / "a.png", np.zeros((4, 6, 3)))
    write_image_png(root / "images" / "b.png", np.zeros((8, 5, 3)))
    DatasetManifest("images/*.png").write(root)
    assert [im.shape for im in load_unpaired(root).items] == [(4, 6), (8, 5)]


def _datasets(ns, nt):
    S = PairedDataset(random_pairs(ns, res=(2, 2)))
    T = UnpairedDataset([im for im, _ in random_pairs(nt, res=(2, 2))])
    return S, T


def test_subsets_size_and_uniqueness():
    S, T = _datasets(300, 250)
    sub = sample_subsets(S, T, 100, seeded_rng(0, "subsets"))
    assert sub.size == 100
    for idx, n in ((sub.source_subset, 300), (sub.target_subset, 250)):
        assert len(idx) == len(set(idx)) == 100 and all(0 <= i < n for i in idx)


def test_subsets_deterministic_and_exhaustive():
    S, T = _datasets(20, 30)
    a = sample_subsets(S, T, 20, seeded_rng(4, "subsets"))
    assert a == sample_subsets(S, T, 20, seeded_rng(4, "subsets"))
    assert sorted(a.source_subset) == list(range(20))


def test_subset_too_large():
    S, T = _datasets(5, 10)
    with pytest.raises(SubsetSizeError):
        sample_subsets(S, T, 6, seeded_rng(0, "s"))
    with pytest.raises(SubsetSizeError):
        sample_subsets(S, T, 0, seeded_rng(0, "s"))


def test_subset_sampling_is_uniform():
    S, T = _datasets(10, 10)
    counts = np.zeros(10)
    for k in range(10_000):
        sub = sample_subsets(S, T, 1, seeded_rng(k, "uniformity"))
        counts[sub.source_subset[0]] += 1
    assert chisquare(counts).pvalue > 0.01


def _pair(res=(48, 64), seed=0):
    (im, dm), = random_pairs(1, res=res, seed=seed)
    return im, dm


def test_disabled_is_plain_resize():
    im, dm = _pair()
    out_im, out_d = augment(im, dm, AugmentConfig((224, 224), enabled=False), seeded_rng(0, "a"))
    assert out_im.shape == out_d.shape == (224, 224)
    im2, _ = augment(im, None, AugmentConfig((48, 64), enabled=False), seeded_rng(0, "a"))
    assert np.array_equal(im2.pixels, im.pixels)


def test_identity_settings_are_geometric_identity():
    im, dm = _pair()
    cfg = AugmentConfig((48, 64), jitter_strength=0.0, rotation_degrees_max=0.0, scale_range=(1.0, 1.0))
    out_im, out_d = augment(im, dm, cfg, seeded_rng(0, "a"))
    assert np.array_equal(out_im.pixels, im.pixels)
    assert np.array_equal(out_d.depths, dm.depths)
    assert out_d.valid_mask.all()


def test_augment_is_deterministic():
    im, dm = _pair()
    cfg = AugmentConfig((32, 32))
    a = augment(im, dm, cfg, seeded_rng(9, "aug"))
    b = augment(im, dm, cfg, seeded_rng(9, "aug"))
    assert a[0].pixels.tobytes() == b[0].pixels.tobytes()
    assert a[1].depths.tobytes() == b[1].depths.tobytes()
    c = augment(im, dm, cfg, seeded_rng(10, "aug"))
    assert a[0].pixels.tobytes() != c[0].pixels.tobytes()


@pytest.mark.parametrize("seed", range(10))
def test_augmented_shapes_match_and_rotation_marks_invalid(seed):
    im, dm = _pair(res=(40, 56), seed=seed)
    cfg = AugmentConfig((32, 48), rotation_degrees_max=30.0, scale_range=(1.0, 1.0))
    out_im, out_d = augment(im, dm, cfg, seeded_rng(seed, "aug"))
    assert out_im.shape == out_d.shape == (32, 48)
    assert not out_d.valid_mask.all()  # a rotated frame exposes corners
    assert np.all(out_d.depths[..., 0][~out_d.valid_mask] == 0)


def test_depth_not_rescaled_by_default():
    im = ImageSample(np.full((32, 32, 3), 0.5))
    dm = DepthMap(np.full((32, 32), 4.0))
    cfg = AugmentConfig((32, 32), 0.0, 0.0, (1.5, 1.5))
    _, out = augment(im, dm, cfg, seeded_rng(0, "a"))
    assert np.all(out.depths == 4.0)
    from dataclasses import replace
    _, out = augment(im, dm, replace(cfg, scale_adjusts_depth=True), seeded_rng(0, "a"))
    assert np.allclose(out.depths, 4.0 / 1.5)


def test_crop_larger_than_scaled_image():
    im, dm = _pair(res=(32, 32))
    with pytest.raises(ConfigurationError):
        augment(im, dm, AugmentConfig((32, 32), crop_size=(64, 64), scale_range=(1.0, 1.2)), seeded_rng(0, "a"))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AugmentConfig((0, 10))
    with pytest.raises(ConfigurationError):
        AugmentConfig(scale_range=(0.0, 1.0))
    with pytest.raises(ConfigurationError):
        AugmentConfig(scale_range=(1.0, 2.5))
