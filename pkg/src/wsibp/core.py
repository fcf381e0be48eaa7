"""Shared domain types, configuration and small math utilities.

Factor index layout is fixed everywhere: object factors occupy
``[0, k_objects)``, attribute factors ``[k_objects, k_objects+k_attributes)``
and the remaining ``k_extra`` slots hold unannotated background / latent
attribute factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class WsibpError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(WsibpError):
    pass


class DatasetError(WsibpError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class EdgeIndexError(DatasetError):
    pass


class VocabMismatchError(DatasetError):
    pass


class FormatError(WsibpError):
    """Raised for unreadable or version-mismatched files."""


@dataclass(frozen=True)
class ModelConfig:
    """Scalar hyperparameters and run controls.

    ``k_max`` is always derived as ``k_objects + k_attributes + k_extra``.
    """

    k_objects: int
    k_attributes: int
    k_extra: int = 20
    alpha: float = 2.0
    sigma_a: float = 1.0
    sigma: float = 0.5
    beta: float = 1.0
    rho: float = 0.1
    max_iters: int = 1500
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0 or self.sigma_a <= 0 or self.sigma <= 0:
            raise ConfigError("alpha, sigma_a and sigma must be > 0")
        if self.beta < 0 or self.rho < 0:
            raise ConfigError("beta and rho must be >= 0")
        if self.k_objects < 0 or self.k_attributes < 0 or self.k_extra < 0:
            raise ConfigError("factor counts must be >= 0")
        if self.k_max <= 0:
            raise ConfigError("k_max must be > 0")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.tol < 0:
            raise ConfigError("tol must be >= 0")

    @property
    def k_annotated(self) -> int:
        return self.k_objects + self.k_attributes

    @property
    def k_max(self) -> int:
        return self.k_objects + self.k_attributes + self.k_extra

    def default_vocab(self) -> list[str]:
        return (
            [f"obj{k}" for k in range(self.k_objects)]
            + [f"att{k}" for k in range(self.k_attributes)]
            + [f"bg{k}" for k in range(self.k_extra)]
        )


@dataclass(frozen=True)
class WeakLabels:
    """Bag-level binary availability vector over all k_max factors.

    Unannotated slots (index >= k_annotated) are always available (bit 1).
    """

    bits: np.ndarray

    @staticmethod
    def from_annotated(annotated: np.ndarray, config: ModelConfig) -> "WeakLabels":
        """Pad a length-k_annotated 0/1 vector with always-on extra slots."""
        annotated = np.asarray(annotated, dtype=np.float64).ravel()
        if annotated.size != config.k_annotated:
            raise DimensionMismatchError(
                f"annotated label vector has length {annotated.size}, "
                f"expected {config.k_annotated}"
            )
        bits = np.concatenate([annotated, np.ones(config.k_extra)])
        return WeakLabels(bits)

    def validate(self, config: ModelConfig) -> None:
        if self.bits.shape != (config.k_max,):
            raise DimensionMismatchError(
                f"label vector has shape {self.bits.shape}, expected ({config.k_max},)"
            )
        if not np.all(np.isin(self.bits, (0.0, 1.0))):
            raise DatasetError("label bits must be 0 or 1")
        if not np.all(self.bits[config.k_annotated:] == 1.0):
            raise DatasetError("unannotated factor slots must have label bit 1")


@dataclass(frozen=True)
class Bag:
    """One image: instance features, adjacency and weak labels."""

    features: np.ndarray  # (N_i, D)
    edges: np.ndarray  # (E, 2) int, unordered pairs
    labels: WeakLabels
    id: str

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class AppearanceModel:
    """Per-factor Gaussian appearance posterior (mean rows + scalar variances)."""

    means: np.ndarray  # (k_max, D)
    variances: np.ndarray  # (k_max,), each interpreted as scalar * I
    vocab: list[str]
    config: ModelConfig

    def validate(self) -> None:
        k = self.config.k_max
        if self.means.shape[0] != k or self.variances.shape != (k,):
            raise DimensionMismatchError("appearance model shape mismatch with config")
        if len(self.vocab) != k:
            raise VocabMismatchError(
                f"vocab length {len(self.vocab)} != k_max {k}"
            )
        if np.any(self.variances <= 0):
            raise WsibpError("appearance variances must be > 0")
        if not np.all(np.isfinite(self.means)):
            raise WsibpError("appearance means must be finite")

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]


@dataclass
class BagPosterior:
    """Per-bag variational state: stick parameters, factor probabilities, logits."""

    tau: np.ndarray  # (k_max, 2)
    nu: np.ndarray  # (N_i, k_max)
    logits: np.ndarray  # (N_i, k_max), post-MRF values from the last sweep


@dataclass
class CorrelationMatrix:
    """Symmetric non-negative inter-factor co-occurrence matrix, zero diagonal."""

    m: np.ndarray  # (k_max, k_max)

    def validate(self) -> None:
        if self.m.ndim != 2 or self.m.shape[0] != self.m.shape[1]:
            raise DimensionMismatchError("correlation matrix must be square")
        if not np.allclose(self.m, self.m.T):
            raise WsibpError("correlation matrix must be symmetric")
        if np.any(np.diag(self.m) != 0):
            raise WsibpError("correlation matrix diagonal must be zero")
        if np.any(self.m < 0):
            raise WsibpError("correlation matrix entries must be >= 0")

    @staticmethod
    def zeros(k_max: int) -> "CorrelationMatrix":
        return CorrelationMatrix(np.zeros((k_max, k_max)))


@dataclass(frozen=True)
class DatasetHandle:
    """Validated dataset summary: bag count, feature dim, truncation level."""

    num_bags: int
    feature_dim: int
    k_max: int


def validate_dataset(bags: list[Bag], config: ModelConfig) -> DatasetHandle:
    """Check shape consistency across bags and return a summary handle."""
    if not bags:
        raise EmptyDatasetError("dataset contains no bags")
    dim = bags[0].feature_dim
    for bag in bags:
        if bag.feature_dim != dim:
            raise DimensionMismatchError(
                f"bag {bag.id!r} has feature dim {bag.feature_dim}, expected {dim}"
            )
        if not np.all(np.isfinite(bag.features)):
            raise DatasetError(f"bag {bag.id!r} has non-finite feature values")
        bag.labels.validate(config)
        if bag.edges.size:
            if bag.edges.ndim != 2 or bag.edges.shape[1] != 2:
                raise EdgeIndexError(f"bag {bag.id!r} edge list must be (E, 2)")
            if bag.edges.min() < 0 or bag.edges.max() >= bag.n_instances:
                raise EdgeIndexError(
                    f"bag {bag.id!r} has an edge endpoint outside [0, {bag.n_instances})"
                )
            if np.any(bag.edges[:, 0] == bag.edges[:, 1]):
                raise EdgeIndexError(f"bag {bag.id!r} contains a self-edge")
    return DatasetHandle(num_bags=len(bags), feature_dim=dim, k_max=config.k_max)


# --- math utilities ---------------------------------------------------------

_DIGAMMA_SHIFT = 8.0


def digamma(x):
    """Digamma via upward recurrence to x >= 6 plus asymptotic series."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("digamma defined here for x > 0 only")
    scalar = x.ndim == 0
    x = np.atleast_1d(x).copy()
    acc = np.zeros_like(x)
    while True:
        small = x < _DIGAMMA_SHIFT
        if not small.any():
            break
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
    inv2 = 1.0 / (x * x)
    # psi(x) ~ ln x - 1/(2x) - 1/(12x^2) + 1/(120x^4) - 1/(252x^6) + 1/(240x^8)
    series = (
        np.log(x)
        - 0.5 / x
        - inv2 * (1.0 / 12.0
                  - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)))
    )
    out = acc + series
    return out[0] if scalar else out


def log_sum_exp(a, axis=None):
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def expected_pi(tau: np.ndarray) -> np.ndarray:
    """E[pi_k] = prod_{t<=k} tau_{t1} / (tau_{t1} + tau_{t2}); non-increasing."""
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau <= 0):
        raise ValueError("stick parameters must be > 0")
    return np.cumprod(tau[:, 0] / (tau[:, 0] + tau[:, 1]))
