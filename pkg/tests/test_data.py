import numpy as np
import pytest

from pfcnet.augment import save_png, validate_image
from pfcnet.data import (DatasetSplit, PersonImageRecord, SynthConfig,
                         batch_sampler, export_split, generate_synthetic,
                         label_mapping, load_directory, load_flat_directory,
                         parse_image_name)
from pfcnet.errors import ConfigError, DataLoadError
from pfcnet.rng import Rng


def small_config(**kw):
    base = dict(n_id=3, cameras=2, images_per_id_per_camera=2, seed=0)
    base.update(kw)
    return SynthConfig(**base)


class TestSynthetic:
    def test_record_counts(self):
        cfg = SynthConfig(n_id=8, cameras=2, images_per_id_per_camera=10)
        split = generate_synthetic(cfg)
        total = len(split.query) + len(split.train)
        assert total == 8 * 2 * 10 == 160
        assert len(split.query) == 80     # one camera per identity reserved
        assert len(split.train) == len(split.gallery) == 80

    def test_same_seed_bit_identical(self):
        a = generate_synthetic(small_config(seed=7))
        b = generate_synthetic(small_config(seed=7))
        for ra, rb in zip(a.train + a.query, b.train + b.query):
            assert ra.identity == rb.identity and ra.camera == rb.camera
            assert np.array_equal(ra.image, rb.image)

    def test_different_seeds_differ(self):
        a = generate_synthetic(small_config(seed=1))
        b = generate_synthetic(small_config(seed=2))
        assert not np.array_equal(a.train[0].image, b.train[0].image)

    def test_zero_nuisances_collapse_to_one_image(self):
        cfg = small_config(images_per_id_per_camera=3, color_shift=0.0,
                           illumination=0.0, pose_jitter=0.0,
                           background_clutter=0.0, occlusion_prob=0.0)
        split = generate_synthetic(cfg)
        by_key = {}
        for rec in split.train + split.query:
            by_key.setdefault((rec.identity, rec.camera), []).append(rec.image)
        for images in by_key.values():
            for img in images[1:]:
                assert np.array_equal(img, images[0])

    def test_single_camera_rejected(self):
        with pytest.raises(ConfigError, match="cameras"):
            SynthConfig(cameras=1)

    def test_images_satisfy_buffer_invariants(self):
        split = generate_synthetic(small_config())
        for rec in split.train + split.query:
            validate_image(rec.image)

    def test_query_and_gallery_cameras_disjoint(self):
        split = generate_synthetic(small_config())
        assert {r.camera for r in split.query} == {1}
        assert 1 not in {r.camera for r in split.gallery}

    def test_identities_visually_distinct(self):
        split = generate_synthetic(small_config(n_id=8, pose_jitter=0.0,
                                                background_clutter=0.0,
                                                occlusion_prob=0.0))
        means = {}
        for rec in split.train:
            means.setdefault(rec.identity, rec.image.mean(axis=(1, 2)))
        vals = list(means.values())
        for i, a in enumerate(vals):
            for b in vals[i + 1:]:
                assert np.linalg.norm(a - b) > 1e-3


class TestSplitWarnings:
    def test_missing_cross_camera_match_warns(self):
        img = np.zeros((3, 16, 8), dtype=np.float32)
        with pytest.warns(UserWarning, match="no cross-camera"):
            DatasetSplit(
                train=[],
                query=[PersonImageRecord(1, 1, img)],
                gallery=[PersonImageRecord(1, 1, img)],
            )


class TestFilenames:
    def test_market_style_name(self):
        assert parse_image_name("0002_c1s1_000451_03.png") == (2, 1)

    def test_junk_name_rejected(self):
        assert parse_image_name("junk.png") is None

    def test_more_names(self):
        assert parse_image_name("15_c3_0.jpg") == (15, 3)
        assert parse_image_name("c1_0001.png") is None


class TestDirectoryRoundTrip:
    def test_export_then_load(self, tmp_path):
        split = generate_synthetic(small_config())
        export_split(split, tmp_path)
        back = load_directory(tmp_path)
        assert back.counts() == split.counts()
        orig = sorted((r.identity, r.camera) for r in split.train)
        got = sorted((r.identity, r.camera) for r in back.train)
        assert orig == got
        # PNG quantization bounds the pixel error
        a = sorted(split.query, key=lambda r: (r.identity, r.camera))
        b = sorted(back.query, key=lambda r: (r.identity, r.camera))
        assert np.abs(a[0].image - b[0].image).max() <= 0.5 / 255 + 1e-6

    def test_missing_subdir(self, tmp_path):
        (tmp_path / "train").mkdir()
        save_png(tmp_path / "train" / "0001_c1s1_000000.png",
                 np.zeros((3, 16, 8), dtype=np.float32))
        with pytest.raises(DataLoadError, match="query"):
            load_directory(tmp_path)

    def test_empty_split_is_load_error(self, tmp_path):
        for sub in ("train", "query", "gallery"):
            (tmp_path / sub).mkdir()
        with pytest.raises(DataLoadError, match="empty"):
            load_directory(tmp_path)

    def test_unparseable_names_skipped_with_warning(self, tmp_path):
        img = np.zeros((3, 16, 8), dtype=np.float32)
        for i in range(5):
            save_png(tmp_path / f"{i + 1:04d}_c1s1_{i:06d}.png", img)
        save_png(tmp_path / "junk.png", img)
        with pytest.warns(UserWarning, match="junk.png"):
            records = load_flat_directory(tmp_path)
        assert len(records) == 5

    def test_flat_directory_requires_images(self, tmp_path):
        with pytest.raises(DataLoadError):
            load_flat_directory(tmp_path)


class TestBatching:
    def _records(self, n, ids=(4, 7, 9)):
        img = np.zeros((3, 8, 4), dtype=np.float32)
        return [PersonImageRecord(ids[i % len(ids)], 1, img) for i in range(n)]

    def test_batch_count(self):
        batches = batch_sampler(self._records(160), 16, Rng(0))
        assert len(batches) == 10
        assert all(len(b) == 16 for b in batches)

    def test_short_final_batch_kept(self):
        batches = batch_sampler(self._records(10), 4, Rng(0))
        assert [len(b) for b in batches] == [4, 4, 2]

    def test_every_record_appears_once(self):
        batches = batch_sampler(self._records(23), 5, Rng(1))
        seen = sorted(i for b in batches for i in b)
        assert seen == list(range(23))

    def test_epochs_reshuffle(self):
        recs = self._records(30)
        e0 = [i for b in batch_sampler(recs, 8, Rng(0).split("epoch0")) for i in b]
        e1 = [i for b in batch_sampler(recs, 8, Rng(0).split("epoch1")) for i in b]
        assert e0 != e1

    def test_label_mapping_is_contiguous_bijection(self):
        recs = self._records(9, ids=(12, 3, 400))
        mapping = label_mapping(recs)
        assert sorted(mapping.values()) == [0, 1, 2]
        assert set(mapping.keys()) == {3, 12, 400}

    def test_empty_train_set(self):
        with pytest.raises(DataLoadError, match="empty"):
            batch_sampler([], 4, Rng(0))

    def test_bad_batch_size(self):
        with pytest.raises(ConfigError):
            batch_sampler(self._records(4), 0, Rng(0))
