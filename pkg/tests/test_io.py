import os

import numpy as np
import pytest

from wsibp import (
    CorrelationMatrix,
    FormatError,
    ModelConfig,
    VocabMismatchError,
    fit,
    sample_dataset,
)
from wsibp.io import (
    load_dataset,
    load_model,
    load_posteriors,
    load_truth,
    save_dataset,
    save_model,
    save_posteriors,
    save_truth,
    write_segmentation,
)
from wsibp.tasks import SegmentationMap


@pytest.fixture
def trained(small_dataset, small_config):
    return fit(small_dataset.bags, small_config)


class TestDatasetRoundTrip:
    @pytest.mark.parametrize("binary", [True, False])
    def test_features_round_trip(self, tmp_path, small_dataset, small_config, binary):
        cfg = small_config
        path = str(tmp_path / "ds")
        save_dataset(path, small_dataset.bags, cfg.default_vocab(),
                     cfg.k_objects, cfg.k_attributes, cfg.k_extra,
                     binary=binary)
        loaded = load_dataset(path)
        assert loaded.k_objects == cfg.k_objects
        assert loaded.vocab == cfg.default_vocab()
        for orig, back in zip(small_dataset.bags, loaded.bags):
            assert back.id == orig.id
            if binary:
                assert back.features.tobytes() == orig.features.tobytes()
            else:
                np.testing.assert_allclose(back.features, orig.features,
                                           atol=1e-6)
            assert np.array_equal(back.edges, orig.edges)
            assert np.array_equal(back.labels.bits, orig.labels.bits)

    def test_unknown_label_name(self, tmp_path, small_dataset, small_config):
        cfg = small_config
        path = str(tmp_path / "ds")
        save_dataset(path, small_dataset.bags, cfg.default_vocab(),
                     cfg.k_objects, cfg.k_attributes, cfg.k_extra)
        bag_file = os.path.join(path, small_dataset.bags[0].id + ".bag")
        data = open(bag_file, "rb").read()
        data = data[: data.rindex(b"labels:")] + b"labels: nosuchfactor\n"
        open(bag_file, "wb").write(data)
        with pytest.raises(VocabMismatchError, match="nosuchfactor"):
            load_dataset(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "ds"
        path.mkdir()
        (path / "manifest.txt").write_text("format: something-else\n")
        with pytest.raises(FormatError):
            load_dataset(str(path))

    def test_unknown_version(self, tmp_path, small_dataset, small_config):
        cfg = small_config
        path = str(tmp_path / "ds")
        save_dataset(path, small_dataset.bags, cfg.default_vocab(),
                     cfg.k_objects, cfg.k_attributes, cfg.k_extra)
        manifest = os.path.join(path, "manifest.txt")
        text = open(manifest).read().replace("version: 1", "version: 99")
        open(manifest, "w").write(text)
        with pytest.raises(FormatError, match="version"):
            load_dataset(str(path))

    def test_large_feature_dim_accepted(self, tmp_path):
        cfg = ModelConfig(k_objects=1, k_attributes=0, k_extra=0,
                          beta=0.0, rho=0.0)
        ds = sample_dataset(cfg, 2, 3, 1024, seed=0, labels=1.0)
        path = str(tmp_path / "ds")
        save_dataset(path, ds.bags, cfg.default_vocab(), 1, 0, 0)
        loaded = load_dataset(path)
        assert loaded.bags[0].feature_dim == 1024


class TestModelRoundTrip:
    @pytest.mark.parametrize("binary", [True, False])
    def test_round_trip(self, tmp_path, trained, binary):
        path = str(tmp_path / "m.model")
        save_model(path, trained.model, trained.correlation, binary=binary)
        model, corr = load_model(path)
        if binary:
            assert model.means.tobytes() == trained.model.means.tobytes()
            assert model.variances.tobytes() == trained.model.variances.tobytes()
            assert corr.m.tobytes() == trained.correlation.m.tobytes()
        else:
            np.testing.assert_allclose(model.means, trained.model.means)
        assert model.vocab == trained.model.vocab
        assert model.config == trained.model.config

    def test_corrupted_magic(self, tmp_path, trained):
        path = str(tmp_path / "m.model")
        save_model(path, trained.model, trained.correlation)
        data = bytearray(open(path, "rb").read())
        data[3] ^= 0xFF
        open(path, "wb").write(bytes(data))
        with pytest.raises(FormatError):
            load_model(path)

    def test_dim_mismatch_surfaces_on_use(self, tmp_path, trained):
        from wsibp import infer_test
        from wsibp.core import Bag, WeakLabels, DimensionMismatchError
        path = str(tmp_path / "m.model")
        save_model(path, trained.model, trained.correlation)
        model, corr = load_model(path)
        bag = Bag(features=np.zeros((2, model.feature_dim + 1), dtype=np.float32),
                  edges=np.zeros((0, 2), dtype=np.int64),
                  labels=WeakLabels(np.ones(model.config.k_max)), id="w")
        with pytest.raises(DimensionMismatchError):
            infer_test(bag, model, corr, model.config)


class TestPosteriorsRoundTrip:
    def test_round_trip_bit_exact(self, tmp_path, trained, small_dataset,
                                  small_config):
        path = str(tmp_path / "p.post")
        pairs = [(b.id, p) for b, p in zip(small_dataset.bags,
                                           trained.posteriors)]
        save_posteriors(path, pairs, small_config.k_max)
        loaded = load_posteriors(path)
        for (ida, pa), (idb, pb) in zip(pairs, loaded):
            assert ida == idb
            assert pa.nu.tobytes() == pb.nu.tobytes()
            assert pa.tau.tobytes() == pb.tau.tobytes()
            assert pa.logits.tobytes() == pb.logits.tobytes()


class TestWriteSegmentation:
    def test_csv_rows(self, tmp_path):
        seg = SegmentationMap(labels=np.array([0, 1, 0]),
                              scores=np.array([0.9, 0.8, 0.7]))
        path = str(tmp_path / "seg.csv")
        write_segmentation(path, seg, ["cat", "dog"])
        lines = open(path).read().strip().split("\n")
        assert lines[0] == "instance,label_index,label_name,score"
        assert len(lines) == 4
        assert lines[1].startswith("0,0,cat,")

    def test_ppm_raster(self, tmp_path):
        seg = SegmentationMap(labels=np.array([0, 1]),
                              scores=np.array([1.0, 1.0]))
        path = str(tmp_path / "seg.csv")
        raster = np.array([[0, 0], [1, 1]])
        write_segmentation(path, seg, ["a", "b"], raster=raster)
        ppm = open(path + ".ppm").read().split()
        assert ppm[0] == "P3"
        assert ppm[1:4] == ["2", "2", "255"]
        pixels = [tuple(ppm[4 + 3 * i: 7 + 3 * i]) for i in range(4)]
        assert len(set(pixels)) == 2  # two palette colours for two labels

    def test_unknown_instance_in_raster(self, tmp_path):
        seg = SegmentationMap(labels=np.array([0]), scores=np.array([1.0]))
        with pytest.raises(Exception, match="instance"):
            write_segmentation(str(tmp_path / "s.csv"), seg, ["a"],
                               raster=np.array([[0, 5]]))


class TestTruthSidecar:
    def test_round_trip(self, tmp_path, small_dataset):
        path = str(tmp_path / "truth.json")
        save_truth(path, small_dataset.true_z, small_dataset.true_pi,
                   small_dataset.true_a, [b.id for b in small_dataset.bags])
        back = load_truth(path)
        assert back["bag_ids"] == [b.id for b in small_dataset.bags]
        for a, b in zip(back["true_z"], small_dataset.true_z):
            assert np.array_equal(a, b)
        np.testing.assert_allclose(back["true_a"], small_dataset.true_a)
