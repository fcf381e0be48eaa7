import numpy as np
import pytest
from hypothesis import given, strategies as st

from wsibp import (
    Bag,
    ConfigError,
    DimensionMismatchError,
    EdgeIndexError,
    EmptyDatasetError,
    ModelConfig,
    WeakLabels,
    expected_pi,
    validate_dataset,
)
from wsibp.core import digamma, log_sum_exp, sigmoid


def make_bag(n, d, config, bag_id="b0", edges=None):
    rng = np.random.default_rng(0)
    if edges is None:
        edges = np.zeros((0, 2), dtype=np.int64)
    labels = WeakLabels.from_annotated(np.ones(config.k_annotated), config)
    return Bag(features=rng.normal(size=(n, d)).astype(np.float32),
               edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
               labels=labels, id=bag_id)


class TestModelConfig:
    def test_k_max_derived(self):
        cfg = ModelConfig(k_objects=3, k_attributes=4, k_extra=20)
        assert cfg.k_max == 27
        assert cfg.k_annotated == 7

    @pytest.mark.parametrize("kwargs", [
        {"alpha": 0.0}, {"alpha": -1.0}, {"sigma": 0.0}, {"sigma_a": -0.5},
        {"beta": -0.1}, {"rho": -1e-9}, {"tol": -1.0}, {"max_iters": 0},
    ])
    def test_invalid_scalars_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            ModelConfig(k_objects=2, k_attributes=2, k_extra=1, **kwargs)

    def test_zero_factors_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(k_objects=0, k_attributes=0, k_extra=0)

    def test_default_vocab_layout(self):
        cfg = ModelConfig(k_objects=2, k_attributes=1, k_extra=2)
        assert cfg.default_vocab() == ["obj0", "obj1", "att0", "bg0", "bg1"]


class TestWeakLabels:
    def test_padding_keeps_extras_on(self):
        cfg = ModelConfig(k_objects=2, k_attributes=1, k_extra=3)
        lab = WeakLabels.from_annotated([1, 0, 1], cfg)
        assert lab.bits.tolist() == [1, 0, 1, 1, 1, 1]

    def test_wrong_length_rejected(self):
        cfg = ModelConfig(k_objects=2, k_attributes=1, k_extra=3)
        with pytest.raises(DimensionMismatchError):
            WeakLabels.from_annotated([1, 0], cfg)

    def test_masked_extra_slot_rejected(self):
        cfg = ModelConfig(k_objects=1, k_attributes=0, k_extra=2)
        lab = WeakLabels(np.array([1.0, 0.0, 1.0]))
        with pytest.raises(Exception):
            lab.validate(cfg)


class TestValidateDataset:
    def setup_method(self):
        self.cfg = ModelConfig(k_objects=2, k_attributes=2, k_extra=0)

    def test_valid_dataset_handle(self):
        bags = [make_bag(5, 16, self.cfg, "a"), make_bag(7, 16, self.cfg, "b")]
        handle = validate_dataset(bags, self.cfg)
        assert handle.num_bags == 2
        assert handle.feature_dim == 16
        assert handle.k_max == 4

    def test_dimension_mismatch_names_bag(self):
        bags = [make_bag(5, 16, self.cfg, "good"), make_bag(5, 15, self.cfg, "bad")]
        with pytest.raises(DimensionMismatchError, match="bad"):
            validate_dataset(bags, self.cfg)

    def test_empty_dataset(self):
        with pytest.raises(EmptyDatasetError):
            validate_dataset([], self.cfg)

    def test_out_of_range_edge(self):
        bag = make_bag(4, 8, self.cfg, "e", edges=[(0, 4)])
        with pytest.raises(EdgeIndexError, match="e"):
            validate_dataset([bag], self.cfg)

    def test_self_edge(self):
        bag = make_bag(4, 8, self.cfg, "s", edges=[(1, 1)])
        with pytest.raises(EdgeIndexError):
            validate_dataset([bag], self.cfg)


class TestExpectedPi:
    def test_uniform_sticks(self):
        np.testing.assert_allclose(
            expected_pi(np.array([[1.0, 1.0], [1.0, 1.0]])), [0.5, 0.25])

    def test_single_stick(self):
        np.testing.assert_allclose(expected_pi(np.array([[3.0, 1.0]])), [0.75])

    def test_repeated_halving(self):
        np.testing.assert_allclose(
            expected_pi(np.array([[2.0, 2.0]] * 3)), [0.5, 0.25, 0.125])

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            expected_pi(np.array([[1.0, 0.0]]))

    @given(st.lists(st.tuples(st.floats(0.01, 50), st.floats(0.01, 50)),
                    min_size=1, max_size=12))
    def test_positive_and_nonincreasing(self, rows):
        pi = expected_pi(np.array(rows))
        assert np.all(pi > 0)
        assert np.all(pi <= 1)
        assert np.all(np.diff(pi) <= 0)


class TestMathUtils:
    @pytest.mark.parametrize("x", [0.5, 1.0, 2.0, 10.0])
    def test_digamma_recurrence(self, x):
        assert abs(float(digamma(x + 1) - digamma(x)) - 1.0 / x) < 1e-10

    def test_digamma_known_values(self):
        euler_gamma = 0.5772156649015329
        assert abs(float(digamma(1.0)) + euler_gamma) < 1e-10
        assert abs(float(digamma(0.5)) + euler_gamma + 2 * np.log(2)) < 1e-10

    def test_digamma_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            digamma(0.0)

    def test_log_sum_exp_matches_direct(self):
        a = np.array([-1.0, 2.0, 0.5])
        assert abs(float(log_sum_exp(a)) - np.log(np.exp(a).sum())) < 1e-12

    def test_log_sum_exp_large_values(self):
        a = np.array([1000.0, 1000.0])
        assert abs(float(log_sum_exp(a)) - (1000 + np.log(2))) < 1e-9

    @given(st.floats(-800, 800))
    def test_sigmoid_bounded_and_monotone_at_zero(self, x):
        s = float(sigmoid(np.array(x)))
        assert 0.0 <= s <= 1.0

    def test_sigmoid_values(self):
        np.testing.assert_allclose(sigmoid(np.array([0.0])), [0.5])
        np.testing.assert_allclose(sigmoid(np.array([2.0])),
                                   [1 / (1 + np.exp(-2))])
