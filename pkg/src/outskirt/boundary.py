"""Outskirt selection over the latent catalog and zero-shot outlier synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import seeds
from .errors import ConfigError, DataError, DegenerateAxisError, EmptyOutskirtError
from .hierarchy import GaussianParams

RULES = ("ellipsoid", "l2")
NOISE_MODES = ("half_normal", "deterministic_one")


@dataclass
class MetaStats:
    """Mean/variance of the catalog means, per axis and over their L2 norms.

    Variances use the unbiased ``n - 1`` denominator.
    """

    mu_bar: np.ndarray
    sigma_bar_sq: np.ndarray
    mu_bar_l2: float
    sigma_bar_l2: float
    n: int


def meta_stats(catalog):
    mu = np.asarray(catalog.mu, dtype=np.float64)
    n = len(mu)
    if n < 2:
        raise DataError(f"meta statistics need at least 2 distributions, got {n}")
    mu_bar = mu.mean(axis=0)
    var = ((mu - mu_bar) ** 2).sum(axis=0) / (n - 1)
    zero = np.flatnonzero(var == 0.0)
    if zero.size:
        raise DegenerateAxisError(int(zero[0]))
    norms = np.linalg.norm(mu, axis=1)
    mu_l2 = float(norms.mean())
    var_l2 = float(((norms - mu_l2) ** 2).sum() / (n - 1))
    return MetaStats(mu_bar, var, mu_l2, float(np.sqrt(var_l2)), n)


@dataclass
class OutskirtSet:
    indices: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray | None
    rule: str
    alpha: float
    stats: MetaStats = field(repr=False)

    def __len__(self):
        return len(self.indices)

    @property
    def selected(self):
        """``[(catalog index, GaussianParams), ...]``."""
        sig = self.sigma if self.sigma is not None else np.zeros_like(self.mu)
        return [(int(i), GaussianParams(m, s)) for i, m, s in zip(self.indices, self.mu, sig)]


def ellipsoid_score(mu, stats, alpha):
    """``sum_d (mu_d - mu_bar_d)^2 / (alpha * sigma_bar_d^2)``; outskirt iff >= 1."""
    return np.sum((np.atleast_2d(mu) - stats.mu_bar) ** 2 / (alpha * stats.sigma_bar_sq), axis=1)


def l2_deviation(mu, stats):
    return np.abs(np.linalg.norm(np.atleast_2d(mu), axis=1) - stats.mu_bar_l2)


def _select(catalog, stats, alpha, rule, mask, allow_empty):
    idx = np.flatnonzero(mask)
    if idx.size == 0 and not allow_empty:
        raise EmptyOutskirtError(rule, alpha)
    sigma = None if catalog.sigma is None else catalog.sigma[idx]
    return OutskirtSet(idx, catalog.mu[idx], sigma, rule, float(alpha), stats)


def _check_alpha(alpha):
    if not alpha > 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")


def select_ellipsoid(catalog, stats, alpha, allow_empty=False):
    _check_alpha(alpha)
    return _select(catalog, stats, alpha, "ellipsoid",
                   ellipsoid_score(catalog.mu, stats, alpha) >= 1.0, allow_empty)


def select_l2(catalog, stats, alpha, allow_empty=False):
    _check_alpha(alpha)
    return _select(catalog, stats, alpha, "l2",
                   l2_deviation(catalog.mu, stats) >= alpha * stats.sigma_bar_l2, allow_empty)


def select(catalog, stats, alpha, rule, allow_empty=False):
    if rule == "ellipsoid":
        return select_ellipsoid(catalog, stats, alpha, allow_empty)
    if rule == "l2":
        return select_l2(catalog, stats, alpha, allow_empty)
    raise ConfigError(f"unknown selector {rule!r}")


def direction_signs(mu, stats):
    """+1 where ``mu_d >= mu_bar_d`` (ties included), else -1."""
    return np.where(np.asarray(mu) >= stats.mu_bar, 1.0, -1.0)


@dataclass
class SynthesisConfig:
    beta: float = 5.0
    noise: str = "half_normal"
    count: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError("beta must be > 0")
        if self.count < 1:
            raise ConfigError("synthesis count must be >= 1")
        if self.noise not in NOISE_MODES:
            raise ConfigError(f"noise must be one of {NOISE_MODES}")


def synthesize(outskirts, cfg):
    """Draw ``cfg.count`` synthetic outliers ``mu + beta * s * sigma * eps``.

    Generators are picked uniformly with replacement from the outskirt set.
    Sample ``i`` uses its own stream keyed on ``(cfg.seed, i)``, so the output
    does not depend on how the work might be partitioned.  The deterministic
    mode cycles through the outskirts in order and ignores the seed.
    """
    if len(outskirts) == 0:
        raise EmptyOutskirtError(outskirts.rule, outskirts.alpha)
    if outskirts.sigma is None:
        raise ConfigError("synthesis needs a Gaussian catalog (VAE fusion)")
    d = outskirts.mu.shape[1]
    signs = direction_signs(outskirts.mu, outskirts.stats)
    out = np.empty((cfg.count, d))
    for i in range(cfg.count):
        if cfg.noise == "half_normal":
            rng = np.random.default_rng([seeds.derive(cfg.seed, "synthesis"), i])
            j = rng.integers(len(outskirts))
            eps = np.abs(rng.standard_normal(d))
        else:
            j = i % len(outskirts)
            eps = np.ones(d)
        out[i] = outskirts.mu[j] + cfg.beta * signs[j] * outskirts.sigma[j] * eps
    return out


def jitter_ae_space(codes, noise_sigma=1.5, seed=0):
    """Add zero-mean Gaussian noise with standard deviation ``noise_sigma``."""
    codes = np.asarray(codes, dtype=np.float64)
    if noise_sigma == 0:
        return codes.copy()
    rng = np.random.default_rng(seeds.derive(seed, "synthesis", 1))
    return codes + rng.normal(0.0, noise_sigma, size=codes.shape)


def jitter_synthesize(outskirts, count, noise_sigma=1.5, seed=0):
    """AE-space ablation: resample outskirt codes and jitter them."""
    if len(outskirts) == 0:
        raise EmptyOutskirtError(outskirts.rule, outskirts.alpha)
    rng = np.random.default_rng(seeds.derive(seed, "synthesis", 0))
    picks = outskirts.mu[rng.integers(len(outskirts), size=count)]
    return jitter_ae_space(picks, noise_sigma, seed)
