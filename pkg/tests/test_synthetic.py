import json

import numpy as np
import pytest

from camlabel.masks import decode_rle
from camlabel.synthetic import (
    SceneParams,
    generate_synthetic_scene,
    scene_weak_labels,
    write_scene_corpus,
)
from camlabel.weakset import ingest_labels, load_manifest

PARAMS = SceneParams(size=(128, 128), n_crack=2, n_spalling=1, n_rust=1,
                     n_negative_clicks=2)


class TestGenerate:
    def test_deterministic(self):
        a = generate_synthetic_scene(PARAMS, 7)
        b = generate_synthetic_scene(PARAMS, 7)
        assert np.array_equal(a.image, b.image)
        assert len(a.instances) == len(b.instances)
        for ia, ib in zip(a.instances, b.instances):
            assert np.array_equal(ia.mask, ib.mask)
            assert ia.click == ib.click
        assert a.negative_points == b.negative_points

    def test_seed_changes_scene(self):
        a = generate_synthetic_scene(PARAMS, 1)
        b = generate_synthetic_scene(PARAMS, 2)
        assert not np.array_equal(a.image, b.image)

    def test_requested_counts_and_disjointness(self):
        params = SceneParams(size=(160, 160), n_crack=3, n_spalling=0, n_rust=0)
        scene = generate_synthetic_scene(params, 5)
        cracks = scene.masks_for("crack")
        assert len(cracks) == 3
        for i in range(3):
            assert cracks[i].any()
            for j in range(i + 1, 3):
                assert not (cracks[i] & cracks[j]).any()

    def test_every_instance_has_area_and_interior_click(self):
        scene = generate_synthetic_scene(PARAMS, 11)
        for inst in scene.instances:
            assert inst.mask.sum() > 0
            assert inst.mask[inst.click]

    def test_blank_scene(self):
        params = SceneParams(size=(96, 96), n_crack=0, n_spalling=0, n_rust=0,
                             n_negative_clicks=3)
        scene = generate_synthetic_scene(params, 0)
        assert scene.instances == []
        assert len(scene.negative_points) == 3

    def test_degenerate_params_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            SceneParams(n_crack=0, n_spalling=0, n_rust=0, n_negative_clicks=0)

    def test_negative_points_keep_margin(self):
        from scipy.ndimage import binary_dilation

        scene = generate_synthetic_scene(PARAMS, 13)
        forbidden = np.zeros(PARAMS.size, dtype=bool)
        for inst in scene.instances:
            forbidden |= inst.mask
        forbidden = binary_dilation(forbidden, iterations=PARAMS.negative_margin)
        for point in scene.negative_points:
            assert not forbidden[point]

    def test_image_is_uint8_rgb(self):
        scene = generate_synthetic_scene(PARAMS, 3)
        assert scene.image.dtype == np.uint8
        assert scene.image.shape == (128, 128, 3)

    def test_crack_pixels_darker_than_surroundings(self):
        params = SceneParams(size=(128, 128), n_crack=1, n_spalling=0, n_rust=0,
                             crack_width=(3, 4))
        scene = generate_synthetic_scene(params, 21)
        mask = scene.instances[0].mask
        lum = scene.image.mean(axis=2)
        assert lum[mask].mean() < lum[~mask].mean() - 20


class TestLabels:
    def test_positive_label_per_instance(self):
        scene = generate_synthetic_scene(PARAMS, 4)
        labels = scene_weak_labels(scene, "img0")
        positives = [l for l in labels if l.polarity == "positive"]
        assert len(positives) == len(scene.instances)
        for lbl, inst in zip(positives, scene.instances):
            assert lbl.defect_class == inst.defect_class
            assert lbl.point == inst.click

    def test_negatives_cover_each_class(self):
        scene = generate_synthetic_scene(PARAMS, 4)
        labels = scene_weak_labels(scene, "img0", negative_classes=("crack", "rust"))
        negatives = [l for l in labels if l.polarity == "negative"]
        assert len(negatives) == 2 * len(scene.negative_points)
        assert {l.defect_class for l in negatives} == {"crack", "rust"}


class TestCorpus:
    def test_corpus_roundtrip(self, tmp_path):
        paths = write_scene_corpus(tmp_path / "corpus", 3, PARAMS, seed=99)
        manifest = load_manifest(paths["manifest"])
        assert len(manifest) == 3
        for info in manifest.values():
            assert (info.height, info.width) == PARAMS.size
        labels = ingest_labels(paths["labels"], manifest)
        assert labels, "corpus labels must validate against the schema"
        gt = json.loads(paths["gt"].read_text())
        scene0 = generate_synthetic_scene(PARAMS, 99)
        assert len(gt["scene_0000"]) == len(scene0.instances)
        mask = decode_rle(gt["scene_0000"][0]["mask"])
        assert np.array_equal(mask, scene0.instances[0].mask)

    def test_corpus_images_match_generator(self, tmp_path):
        from PIL import Image

        paths = write_scene_corpus(tmp_path / "c2", 1, PARAMS, seed=5)
        manifest = load_manifest(paths["manifest"])
        with Image.open(manifest["scene_0000"].path) as img:
            pixels = np.asarray(img.convert("RGB"))
        assert np.array_equal(pixels, generate_synthetic_scene(PARAMS, 5).image)
