"""Mean-field variational learning and test-time inference.

The engine alternates three stages per outer iteration: a Gauss-Seidel
appearance sweep over factors, per-bag stick and factor-probability
updates (with spatial and factorial MRF messages folded into the logits),
and a recomputation of the inter-factor correlation matrix.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    AppearanceModel,
    Bag,
    BagPosterior,
    CorrelationMatrix,
    DimensionMismatchError,
    ModelConfig,
    WeakLabels,
    digamma,
    log_sum_exp,
    sigmoid,
    validate_dataset,
)

LOGIT_CLIP = 30.0
VAR_FLOOR = 1e-12


@dataclass
class StickBoundCache:
    """Per-bag cached stick quantities for one sweep.

    ``q`` holds the multinomial bound weights row-wise (row k is a
    probability vector over s = 1..k); ``neg_log_terms[k]`` caches the
    lower bound on E[log(1 - prod_{t<=k} v_t)]; ``prior_cumsum[k]`` is
    sum_{t<=k} (psi(tau_t1) - psi(tau_t2)).
    """

    q: np.ndarray  # (k_max, k_max) lower-triangular
    neg_log_terms: np.ndarray  # (k_max,)
    prior_cumsum: np.ndarray  # (k_max,)

    @staticmethod
    def from_tau(tau: np.ndarray) -> "StickBoundCache":
        tau = np.asarray(tau, dtype=np.float64)
        if np.any(tau <= 0):
            raise ValueError("stick parameters must be > 0")
        k_max = tau.shape[0]
        d1 = digamma(tau[:, 0])
        d2 = digamma(tau[:, 1])
        d12 = digamma(tau[:, 0] + tau[:, 1])
        # w_s = psi(tau_s2) + sum_{t<s} psi(tau_t1) - sum_{t<=s} psi(tau_t1+tau_t2)
        w = d2 + np.concatenate([[0.0], np.cumsum(d1)[:-1]]) - np.cumsum(d12)
        q = np.zeros((k_max, k_max))
        neg_log = np.empty(k_max)
        for k in range(k_max):
            row = w[: k + 1]
            lse = log_sum_exp(row)
            q[k, : k + 1] = np.exp(row - lse)
            neg_log[k] = lse  # sum_s q_s w_s + H(q) collapses to logsumexp(w)
        return StickBoundCache(q=q, neg_log_terms=neg_log,
                               prior_cumsum=np.cumsum(d1 - d2))


def stick_bound(tau: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Multinomial-bound weights and lower bound for factor index k (1-based)."""
    tau = np.asarray(tau, dtype=np.float64)
    if not 1 <= k <= tau.shape[0]:
        raise ValueError(f"k must lie in [1, {tau.shape[0]}]")
    cache = StickBoundCache.from_tau(tau)
    return cache.q[k - 1, :k].copy(), float(cache.neg_log_terms[k - 1])


@dataclass
class FitResult:
    model: AppearanceModel
    posteriors: list[BagPosterior]
    correlation: CorrelationMatrix
    trace: list[tuple[float, float]]  # (mean |delta nu|, seconds) per iteration


def init_posterior(bag_n: int, labels: WeakLabels, config: ModelConfig,
                   rng: np.random.Generator) -> BagPosterior:
    k = config.k_max
    bits = labels.bits
    nu = (0.5 + rng.uniform(-0.01, 0.01, size=(bag_n, k))) * bits
    np.clip(nu, 0.0, 1.0, out=nu)
    tau = np.column_stack([np.full(k, config.alpha), np.ones(k)])
    return BagPosterior(tau=tau, nu=nu, logits=np.zeros((bag_n, k)))


def init_model(config: ModelConfig, feature_dim: int, vocab: list[str],
               rng: np.random.Generator) -> AppearanceModel:
    means = rng.normal(0.0, 0.01 * config.sigma_a, size=(config.k_max, feature_dim))
    variances = np.full(config.k_max, config.sigma_a ** 2)
    return AppearanceModel(means=means, variances=variances,
                           vocab=list(vocab), config=config)


def update_appearance(bags: list[Bag], posteriors: list[BagPosterior],
                      model: AppearanceModel, config: ModelConfig) -> None:
    """Gauss-Seidel sweep over factors, each using the freshest other means.

    Bags are combined in ascending index order so the reduction is
    deterministic regardless of any outer parallelism.
    """
    inv_s2 = 1.0 / config.sigma ** 2
    inv_sa2 = 1.0 / config.sigma_a ** 2
    residuals = [
        bag.features.astype(np.float64) - post.nu @ model.means
        for bag, post in zip(bags, posteriors)
    ]
    for k in range(config.k_max):
        mass = 0.0
        sq_mass = 0.0
        num = np.zeros(model.feature_dim)
        for post, resid in zip(posteriors, residuals):
            col = post.nu[:, k]
            mass += col.sum()
            sq_mass += (col * col).sum()
            num += col @ resid
        num += sq_mass * model.means[k]
        var = 1.0 / (inv_sa2 + inv_s2 * mass)
        var = max(var, VAR_FLOOR)
        new_mean = inv_s2 * num * var
        delta = new_mean - model.means[k]
        if np.any(delta):
            for post, resid in zip(posteriors, residuals):
                resid -= np.outer(post.nu[:, k], delta)
        model.means[k] = new_mean
        model.variances[k] = var


def update_stick(post: BagPosterior, cache: StickBoundCache,
                 config: ModelConfig, n_i: int) -> None:
    """Stick-breaking Beta parameter update from the current q weights."""
    k_max = config.k_max
    q = cache.q
    s = post.nu.sum(axis=0)  # sum_j nu_{jm}
    deficit = n_i - s
    tail = np.concatenate([np.cumsum(s[::-1])[::-1], [0.0]])
    tau = np.empty((k_max, 2))
    for k in range(k_max):
        cross = 0.0
        for m in range(k + 1, k_max):
            cross += deficit[m] * q[m, k + 1: m + 1].sum()
        tau[k, 0] = config.alpha + tail[k] + cross
        tau[k, 1] = 1.0 + (deficit[k:] * q[k:, k]).sum()
    post.tau = tau


def compute_logits(bag: Bag, post: BagPosterior, model: AppearanceModel,
                   cache: StickBoundCache, config: ModelConfig) -> np.ndarray:
    """Pre-MRF logits eta for every (instance, factor) at the current state."""
    inv_2s2 = 0.5 / config.sigma ** 2
    x = bag.features.astype(np.float64)
    resid = x - post.nu @ model.means
    d = model.feature_dim
    eta = np.empty((bag.n_instances, config.k_max))
    for k in range(config.k_max):
        phi = model.means[k]
        resid_k = resid + np.outer(post.nu[:, k], phi)
        quad = d * model.variances[k] + phi @ phi
        eta[:, k] = (cache.prior_cumsum[k] - cache.neg_log_terms[k]
                     - inv_2s2 * (quad - 2.0 * (resid_k @ phi)))
    return eta


def apply_mrf(eta: np.ndarray, post: BagPosterior,
              correlation: CorrelationMatrix, edges: np.ndarray,
              config: ModelConfig) -> np.ndarray:
    """Add spatial-neighbour and cross-factor messages to the logits."""
    out = eta.copy()
    if edges.size:
        neigh = np.zeros_like(out)
        np.add.at(neigh, edges[:, 0], post.nu[edges[:, 1]])
        np.add.at(neigh, edges[:, 1], post.nu[edges[:, 0]])
        out += config.beta * neigh
    out += config.rho * (post.nu @ correlation.m)  # zero diagonal skips n = k
    return out


def update_nu(eta_prime: np.ndarray, labels: WeakLabels,
              post: BagPosterior) -> None:
    clipped = np.clip(eta_prime, -LOGIT_CLIP, LOGIT_CLIP)
    post.nu = labels.bits * sigmoid(clipped)
    post.logits = eta_prime


def _sweep_bag(bag: Bag, post: BagPosterior, model: AppearanceModel,
               correlation: CorrelationMatrix, config: ModelConfig,
               use_mrf: bool, update_sticks: bool = True) -> float:
    """One full per-bag update; returns the mean |delta nu| of the sweep.

    Factors are updated in ascending order, each seeing the freshest values
    of the others; instances are updated jointly per factor.
    """
    n = bag.n_instances
    if update_sticks:
        cache = StickBoundCache.from_tau(post.tau)
        update_stick(post, cache, config, n)
    cache = StickBoundCache.from_tau(post.tau)

    inv_2s2 = 0.5 / config.sigma ** 2
    x = bag.features.astype(np.float64)
    nu = post.nu
    resid = x - nu @ model.means
    d = model.feature_dim
    bits = bag.labels.bits
    total_delta = 0.0
    if use_mrf and bag.edges.size:
        src = np.concatenate([bag.edges[:, 0], bag.edges[:, 1]])
        dst = np.concatenate([bag.edges[:, 1], bag.edges[:, 0]])
    else:
        src = dst = None
    for k in range(config.k_max):
        phi = model.means[k]
        resid_k = resid + np.outer(nu[:, k], phi)
        quad = d * model.variances[k] + phi @ phi
        eta = (cache.prior_cumsum[k] - cache.neg_log_terms[k]
               - inv_2s2 * (quad - 2.0 * (resid_k @ phi)))
        if use_mrf:
            if src is not None:
                neigh = np.zeros(n)
                np.add.at(neigh, src, nu[dst, k])
                eta = eta + config.beta * neigh
            eta = eta + config.rho * (nu @ correlation.m[:, k])
        post.logits[:, k] = eta
        new_col = bits[k] * sigmoid(np.clip(eta, -LOGIT_CLIP, LOGIT_CLIP))
        total_delta += np.abs(new_col - nu[:, k]).sum()
        resid += np.outer(nu[:, k] - new_col, phi)
        nu[:, k] = new_col
    return total_delta / (n * config.k_max)


def update_correlation(posteriors: list[BagPosterior],
                       labels: list[WeakLabels],
                       first_iteration: bool) -> CorrelationMatrix:
    """Recompute M from scratch: label outer products first, nu afterwards."""
    if first_iteration:
        m = sum(np.outer(lab.bits, lab.bits) for lab in labels)
    else:
        m = sum(post.nu.T @ post.nu for post in posteriors)
    m = np.asarray(m, dtype=np.float64)
    np.fill_diagonal(m, 0.0)
    m = 0.5 * (m + m.T)
    peak = m.max()
    if peak > 0:
        m /= peak
    return CorrelationMatrix(m)


def _map_bags(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fit(bags: list[Bag], config: ModelConfig, vocab: list[str] | None = None,
        use_mrf: bool = True, threads: int = 1) -> FitResult:
    """Run the full variational learning loop until |delta nu| < tol."""
    handle = validate_dataset(bags, config)
    if vocab is None:
        vocab = config.default_vocab()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    model = init_model(config, handle.feature_dim, vocab, rng)
    posteriors = [init_posterior(b.n_instances, b.labels, config, rng) for b in bags]
    all_labels = [b.labels for b in bags]
    correlation = update_correlation(posteriors, all_labels, first_iteration=True)

    trace: list[tuple[float, float]] = []
    for _ in range(config.max_iters):
        start = time.perf_counter()
        update_appearance(bags, posteriors, model, config)

        def sweep(pair):
            bag, post = pair
            return _sweep_bag(bag, post, model, correlation, config, use_mrf)

        deltas = _map_bags(sweep, list(zip(bags, posteriors)), threads)
        total_n = sum(b.n_instances for b in bags)
        delta = float(np.dot(deltas, [b.n_instances for b in bags]) / total_n)
        correlation = update_correlation(posteriors, all_labels, first_iteration=False)
        trace.append((delta, time.perf_counter() - start))
        if delta < config.tol:
            break
    return FitResult(model=model, posteriors=posteriors,
                     correlation=correlation, trace=trace)


def infer_test(bag: Bag, model: AppearanceModel,
               correlation: CorrelationMatrix, config: ModelConfig,
               use_mrf: bool = True) -> BagPosterior:
    """Test-time inference: appearance and correlation frozen, labels all-ones."""
    if bag.feature_dim != model.feature_dim:
        raise DimensionMismatchError(
            f"bag {bag.id!r} has feature dim {bag.feature_dim}, "
            f"model expects {model.feature_dim}"
        )
    labels = WeakLabels(np.ones(config.k_max))
    open_bag = Bag(features=bag.features, edges=bag.edges, labels=labels, id=bag.id)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    post = init_posterior(bag.n_instances, labels, config, rng)
    for _ in range(config.max_iters):
        delta = _sweep_bag(open_bag, post, model, correlation, config, use_mrf)
        if delta < config.tol:
            break
    return post


def fit_transductive(
    train_bags: list[Bag],
    test_bags: list[Bag],
    config: ModelConfig,
    test_labels: list[WeakLabels] | None = None,
    vocab: list[str] | None = None,
    use_mrf: bool = True,
    threads: int = 1,
) -> tuple[AppearanceModel, list[BagPosterior], FitResult]:
    """Joint fit over train + test bags; test labels default to all-ones."""
    if test_labels is None:
        test_labels = [WeakLabels(np.ones(config.k_max)) for _ in test_bags]
    if len(test_labels) != len(test_bags):
        raise DimensionMismatchError("one label vector required per test bag")
    relabeled = [
        Bag(features=b.features, edges=b.edges, labels=lab, id=b.id)
        for b, lab in zip(test_bags, test_labels)
    ]
    result = fit(train_bags + relabeled, config, vocab=vocab,
                 use_mrf=use_mrf, threads=threads)
    return result.model, result.posteriors[len(train_bags):], result
