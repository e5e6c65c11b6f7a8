"""Flip-noise regimes: ring tables, flip statistics, alphabet preservation,
independence, and the information-equivalence baseline between the wide
noisy window and the narrow clean one."""

import numpy as np
import pytest
from scipy import stats

from samarl import gridworld as gw
from samarl.gridworld import Observation, WorldConfig, builtin_map, encode_observation, reset
from samarl.noise import (LARGE_MARGINAL, NOISELESS, SMALL_FULL, SMALL_MARGINAL,
                          NoiseSpec, apply_noise, build_spec, ring_mask)


def random_obs(rng, nc=3, R=7):
    """Random observation respecting channel alphabets."""
    ch = np.zeros((nc, R, R), dtype=np.int8)
    ch[:nc - 1] = (rng.random((nc - 1, R, R)) < 0.4).astype(np.int8)
    ch[nc - 1] = -(rng.random((R, R)) < 0.4).astype(np.int8)
    return Observation(channels=ch)


# ---------------------------------------------------------------------------
# build_spec
# ---------------------------------------------------------------------------

def test_build_spec_large_marginal():
    spec = build_spec(LARGE_MARGINAL, 9)
    assert spec.rings == ((4, 0.5),)


def test_build_spec_noiseless_empty():
    assert build_spec(NOISELESS, 7).rings == ()
    assert build_spec(NOISELESS, 9).rings == ()


def test_build_spec_small_full_three_rings():
    spec = build_spec(SMALL_FULL, 7)
    assert spec.rings == ((3, 0.2), (2, 0.1), (1, 0.05))


def test_build_spec_small_marginal():
    assert build_spec(SMALL_MARGINAL, 7).rings == ((3, 0.2),)


@pytest.mark.parametrize("regime,R", [
    (LARGE_MARGINAL, 7), (SMALL_MARGINAL, 9), (SMALL_FULL, 9),
    ("bogus", 7), (NOISELESS, 8),
])
def test_build_spec_rejects_illegal_pairs(regime, R):
    with pytest.raises(ValueError):
        build_spec(regime, R)


def test_ring_mask_counts():
    # Chebyshev ring at distance d has 8d cells (d >= 1)
    for R, d in [(7, 1), (7, 2), (7, 3), (9, 4)]:
        assert ring_mask(R, d).sum() == 8 * d
    assert ring_mask(7, 0).sum() == 1


# ---------------------------------------------------------------------------
# apply_noise
# ---------------------------------------------------------------------------

def test_noiseless_is_identity(rng):
    obs = random_obs(rng)
    spec = build_spec(NOISELESS, 7)
    out = apply_noise(obs, spec, rng)
    np.testing.assert_array_equal(out.channels, obs.channels)
    assert out.channels is not obs.channels


def test_input_not_mutated(rng):
    obs = random_obs(rng)
    before = obs.channels.copy()
    apply_noise(obs, build_spec(SMALL_FULL, 7), rng)
    np.testing.assert_array_equal(obs.channels, before)


def test_p1_band_flips_everything_and_is_involution(rng):
    spec = NoiseSpec(regime="custom", R=7, rings=((3, 1.0),))
    obs = random_obs(rng)
    band = ring_mask(7, 3)
    once = apply_noise(obs, spec, rng)
    # every band entry flipped within its alphabet
    for c in range(3):
        target = -1 if c == 2 else 1
        src = obs.channels[c][band]
        got = once.channels[c][band]
        np.testing.assert_array_equal(got, np.where(src == 0, target, 0))
        np.testing.assert_array_equal(once.channels[c][~band], obs.channels[c][~band])
    twice = apply_noise(once, spec, rng)
    np.testing.assert_array_equal(twice.channels, obs.channels)


def test_window_mismatch_rejected(rng):
    obs = random_obs(rng, R=9)
    with pytest.raises(ValueError):
        apply_noise(obs, build_spec(SMALL_MARGINAL, 7), rng)


def test_alphabets_preserved(rng):
    spec = build_spec(SMALL_FULL, 7)
    for _ in range(50):
        out = apply_noise(random_obs(rng), spec, rng).channels
        assert out.shape == (3, 7, 7)
        assert set(np.unique(out[:2]).tolist()) <= {0, 1}
        assert set(np.unique(out[2]).tolist()) <= {-1, 0}


def _flip_counts(regime, R, n, seed=0):
    """Empirical per-cell flip counts over n draws on an all-zero observation."""
    rng = np.random.default_rng(seed)
    spec = build_spec(regime, R)
    base = Observation(channels=np.zeros((3, R, R), dtype=np.int8))
    counts = np.zeros((3, R, R))
    for _ in range(n):
        out = apply_noise(base, spec, rng)
        counts += out.channels != 0
    return counts, spec


def test_small_marginal_flip_rates():
    n = 10 ** 5
    counts, spec = _flip_counts(SMALL_MARGINAL, 7, n)
    band = ring_mask(7, 3)
    rates = counts / n
    assert np.abs(rates[:, band] - 0.2).max() < 0.005
    assert rates[:, ~band].max() == 0.0


def test_small_full_flip_rates():
    n = 10 ** 5
    counts, _ = _flip_counts(SMALL_FULL, 7, n, seed=1)
    rates = counts / n
    for d, p in [(3, 0.2), (2, 0.1), (1, 0.05)]:
        band = ring_mask(7, d)
        assert np.abs(rates[:, band] - p).max() < 0.005
    assert rates[:, ring_mask(7, 0)].max() == 0.0


def test_large_marginal_flip_rates():
    n = 10 ** 5
    counts, _ = _flip_counts(LARGE_MARGINAL, 9, n, seed=2)
    rates = counts / n
    outer = ring_mask(9, 4)
    assert np.abs(rates[:, outer] - 0.5).max() < 0.005
    assert rates[:, ~outer].max() == 0.0


def test_flip_independence_chi_square():
    # pairwise independence of flips across two cells and across channels
    n = 20000
    rng = np.random.default_rng(7)
    spec = build_spec(SMALL_MARGINAL, 7)
    base = Observation(channels=np.zeros((3, 7, 7), dtype=np.int8))
    pairs = [((0, 0, 0), (0, 0, 6)), ((0, 0, 0), (1, 0, 0)),
             ((2, 6, 6), (1, 6, 0)), ((0, 3, 0), (2, 3, 6))]
    samples = np.zeros((n, len(pairs), 2), dtype=int)
    for k in range(n):
        out = apply_noise(base, spec, rng).channels
        for j, (a, b) in enumerate(pairs):
            samples[k, j, 0] = out[a] != 0
            samples[k, j, 1] = out[b] != 0
    for j in range(len(pairs)):
        table = np.zeros((2, 2))
        for k in range(n):
            table[samples[k, j, 0], samples[k, j, 1]] += 1
        _, p, _, _ = stats.chi2_contingency(table)
        assert p > 0.01, f"pair {j} dependent (p={p})"


def test_information_equivalence_inner_window():
    # pre-noise, the wide window restricted to its inner 7x7 equals the
    # narrow clean encoding of the same state
    gmap = builtin_map("three-rooms")
    cfg = WorldConfig()
    rng = np.random.default_rng(17)
    state = reset(gmap, cfg, rng)
    for _ in range(20):
        gw.step(state, rng.integers(4, size=6).tolist())
        for agent in range(6):
            wide = encode_observation(state, agent, 9, "exp1").channels
            narrow = encode_observation(state, agent, 7, "exp1").channels
            np.testing.assert_array_equal(wide[:, 1:8, 1:8], narrow)
