import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from outskirt import boundary as B
from outskirt.errors import ConfigError, DataError, DegenerateAxisError, EmptyOutskirtError
from outskirt.hierarchy import LatentCatalog


def random_catalog(rng, n=None, d=None):
    n = n or int(rng.integers(2, 101))
    d = d or int(rng.integers(1, 7))
    mu = rng.normal(0, rng.uniform(0.5, 3), size=(n, d)) + rng.normal(0, 2, size=d)
    sigma = rng.uniform(0.1, 2.0, size=(n, d))
    return LatentCatalog(mu, sigma)


def brute_force(catalog, alpha, rule):
    """Straight loops over the definitions, no numpy reductions."""
    mu = catalog.mu.tolist()
    n, d = len(mu), len(mu[0])
    mean = [sum(row[k] for row in mu) / n for k in range(d)]
    var = [sum((row[k] - mean[k]) ** 2 for row in mu) / (n - 1) for k in range(d)]
    norms = [math.sqrt(sum(v * v for v in row)) for row in mu]
    mean_l2 = sum(norms) / n
    sd_l2 = math.sqrt(sum((x - mean_l2) ** 2 for x in norms) / (n - 1))
    picked = []
    for i, row in enumerate(mu):
        if rule == "ellipsoid":
            score = sum((row[k] - mean[k]) ** 2 / (alpha * var[k]) for k in range(d))
            hit = score >= 1.0
        else:
            hit = abs(norms[i] - mean_l2) >= alpha * sd_l2
        if hit:
            picked.append(i)
    return picked


def test_hand_example_ellipsoid_and_l2():
    mu = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [-2.0, 0.0], [0.0, -2.0], [6.0, 0.0]])
    cat = LatentCatalog(mu, np.ones_like(mu))
    s = B.meta_stats(cat)
    np.testing.assert_allclose(s.mu_bar, [1.0, 0.0])
    # var_x = (1+1+1+9+1+25)/5 = 7.6, var_y = 8/5 = 1.6
    np.testing.assert_allclose(s.sigma_bar_sq, [7.6, 1.6])
    # x-scores 1/7.6, 1/7.6, 9/7.6, 1/7.6, 25/7.6 after the y terms 0 or 4/1.6
    sel = B.select(cat, s, 1.0, "ellipsoid")
    assert sel.indices.tolist() == brute_force(cat, 1.0, "ellipsoid") == [2, 3, 4, 5]
    # norms 0,2,2,2,2,6: mean 14/6, sd 1.966, threshold 2.95
    sel = B.select(cat, s, 1.5, "l2")
    assert sel.indices.tolist() == [5]


def test_selectors_equal_brute_force_on_200_catalogs():
    rng = np.random.default_rng(7)
    for _ in range(200):
        cat = random_catalog(rng)
        s = B.meta_stats(cat)
        for rule in ("ellipsoid", "l2"):
            alpha = float(rng.uniform(0.5, 3.0))
            got = B.select(cat, s, alpha, rule, allow_empty=True).indices.tolist()
            assert got == brute_force(cat, alpha, rule)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.2, 2.0), st.floats(0.2, 2.0),
       st.sampled_from(["ellipsoid", "l2"]))
def test_outskirts_shrink_as_alpha_grows(seed, a1, a2, rule):
    cat = random_catalog(np.random.default_rng(seed))
    s = B.meta_stats(cat)
    lo, hi = sorted((a1, a2))
    small = set(B.select(cat, s, hi, rule, allow_empty=True).indices.tolist())
    large = set(B.select(cat, s, lo, rule, allow_empty=True).indices.tolist())
    assert small <= large


def test_empty_outskirt_error_carries_alpha():
    mu = np.array([[0.0], [1.0], [2.0]])
    cat = LatentCatalog(mu, np.ones_like(mu))
    with pytest.raises(EmptyOutskirtError) as info:
        B.select(cat, B.meta_stats(cat), 100.0, "ellipsoid")
    assert info.value.alpha == 100.0
    assert len(B.select(cat, B.meta_stats(cat), 100.0, "l2", allow_empty=True)) == 0


def test_degenerate_axis_named():
    mu = np.array([[0.0, 1.0], [1.0, 1.0], [2.0, 1.0]])
    with pytest.raises(DegenerateAxisError) as info:
        B.meta_stats(LatentCatalog(mu, np.ones_like(mu)))
    assert info.value.axis == 1


def test_single_entry_rejected():
    with pytest.raises(DataError):
        B.meta_stats(LatentCatalog(np.zeros((1, 2)), np.ones((1, 2))))


def test_bad_parameters():
    cat = random_catalog(np.random.default_rng(0), n=10, d=2)
    with pytest.raises(ConfigError):
        B.select(cat, B.meta_stats(cat), 0.0, "l2")
    with pytest.raises(ConfigError):
        B.select(cat, B.meta_stats(cat), 1.0, "box")
    with pytest.raises(ConfigError):
        B.SynthesisConfig(beta=0)


def test_direction_ties_go_positive():
    mu = np.array([[0.0, 0.0], [2.0, 2.0]])
    s = B.meta_stats(LatentCatalog(mu, np.ones_like(mu)))
    np.testing.assert_array_equal(B.direction_signs(np.array([1.0, 0.5]), s), [1.0, -1.0])


def test_deterministic_synthesis_hand_example():
    mu = np.array([[0.0, 0.0], [4.0, -2.0], [-1.0, 1.0]])
    sigma = np.array([[1.0, 1.0], [0.5, 0.25], [1.0, 1.0]])
    cat = LatentCatalog(mu, sigma)
    s = B.meta_stats(cat)  # mu_bar = (1, -1/3)
    out = B.select(cat, s, 0.5, "l2", allow_empty=True)
    sel = B.OutskirtSet(np.array([1]), mu[[1]], sigma[[1]], "l2", 0.5, s)
    y = B.synthesize(sel, B.SynthesisConfig(beta=2.0, noise="deterministic_one", count=3))
    np.testing.assert_allclose(y, [[5.0, -2.5]] * 3)
    assert 1 in out.indices


def check_directional(outskirts, y, picks_from):
    """Every synthetic point is an outward move from some outskirt mean."""
    s = outskirts.stats
    ok = 0
    for row in y:
        for j in picks_from:
            sign = B.direction_signs(outskirts.mu[j], s)
            step = row - outskirts.mu[j]
            aligned = np.all(step * sign >= 0)
            farther = np.all(np.abs(row - s.mu_bar) >= np.abs(outskirts.mu[j] - s.mu_bar))
            if aligned and farther:
                ok += 1
                break
    return ok


@pytest.mark.parametrize("noise", B.NOISE_MODES)
def test_synthesis_properties(noise):
    rng = np.random.default_rng(11)
    cat = random_catalog(rng, n=60, d=4)
    s = B.meta_stats(cat)
    out = B.select(cat, s, 1.0, "ellipsoid")
    y = B.synthesize(out, B.SynthesisConfig(beta=3.0, noise=noise, count=400, seed=5))
    assert y.shape == (400, 4)
    assert check_directional(out, y, range(len(out))) == 400


def test_synthesis_is_seeded_and_prefix_stable():
    cat = random_catalog(np.random.default_rng(2), n=40, d=3)
    out = B.select(cat, B.meta_stats(cat), 1.0, "l2")
    a = B.synthesize(out, B.SynthesisConfig(count=50, seed=1))
    b = B.synthesize(out, B.SynthesisConfig(count=80, seed=1))
    c = B.synthesize(out, B.SynthesisConfig(count=50, seed=2))
    np.testing.assert_array_equal(a, b[:50])
    assert not np.array_equal(a, c)


def test_deterministic_mode_cycles_and_ignores_seed():
    cat = random_catalog(np.random.default_rng(3), n=40, d=3)
    out = B.select(cat, B.meta_stats(cat), 1.0, "l2")
    a = B.synthesize(out, B.SynthesisConfig(beta=2.0, noise="deterministic_one", count=7, seed=1))
    b = B.synthesize(out, B.SynthesisConfig(beta=2.0, noise="deterministic_one", count=7, seed=9))
    np.testing.assert_array_equal(a, b)
    signs = B.direction_signs(out.mu, out.stats)
    j = np.arange(7) % len(out)
    np.testing.assert_allclose(a, out.mu[j] + 2.0 * signs[j] * out.sigma[j])


def test_synthesis_needs_sigma():
    cat = LatentCatalog(np.array([[0.0], [1.0], [5.0]]))
    out = B.select(cat, B.meta_stats(cat), 0.5, "l2")
    with pytest.raises(ConfigError):
        B.synthesize(out, B.SynthesisConfig())


def test_jitter_noise_std():
    codes = np.zeros((50_000, 4))
    out = B.jitter_ae_space(codes, 1.5, seed=3)
    np.testing.assert_allclose(out.std(axis=0), 1.5, rtol=0.02)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=0.05)
    np.testing.assert_array_equal(B.jitter_ae_space(codes[:3], 0.0), codes[:3])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 10.0), st.sampled_from(B.NOISE_MODES))
def test_directional_property_random(seed, beta, noise):
    rng = np.random.default_rng(seed)
    cat = random_catalog(rng, n=int(rng.integers(5, 50)))
    out = B.select(cat, B.meta_stats(cat), 0.5, "ellipsoid", allow_empty=True)
    if len(out) == 0:
        return
    y = B.synthesize(out, B.SynthesisConfig(beta=beta, noise=noise, count=20, seed=seed))
    assert check_directional(out, y, range(len(out))) == 20
