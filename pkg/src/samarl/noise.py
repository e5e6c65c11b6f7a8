"""Region-structured flip noise over encoded observations.

Rings are Chebyshev-distance bands from the window center; a flipped entry
inverts within its channel alphabet ({0,1} for presence channels, {0,-1}
for the blocked channel). The center cell is never noised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridworld import Observation

NOISELESS = "noiseless"
LARGE_MARGINAL = "large-marginal"
SMALL_MARGINAL = "small-marginal"
SMALL_FULL = "small-full"
REGIMES = (NOISELESS, LARGE_MARGINAL, SMALL_MARGINAL, SMALL_FULL)


@dataclass(frozen=True)
class NoiseSpec:
    regime: str
    R: int
    rings: tuple[tuple[int, float], ...]    # (Chebyshev distance, flip probability)


def build_spec(regime: str, R: int) -> NoiseSpec:
    """Canonical ring tables for the four regimes; illegal (regime, R) pairs
    are rejected."""
    legal = {
        (NOISELESS, 7): (),
        (NOISELESS, 9): (),
        (LARGE_MARGINAL, 9): ((4, 0.5),),
        (SMALL_MARGINAL, 7): ((3, 0.2),),
        (SMALL_FULL, 7): ((3, 0.2), (2, 0.1), (1, 0.05)),
    }
    if (regime, R) not in legal:
        raise ValueError(f"illegal noise configuration: regime={regime!r}, R={R}")
    return NoiseSpec(regime=regime, R=R, rings=legal[(regime, R)])


def ring_mask(R: int, distance: int) -> np.ndarray:
    """Boolean R x R mask of cells at exactly the given Chebyshev distance."""
    r = R // 2
    ys, xs = np.mgrid[0:R, 0:R]
    cheb = np.maximum(np.abs(ys - r), np.abs(xs - r))
    return cheb == distance


def apply_noise(obs: Observation, spec: NoiseSpec, rng: np.random.Generator) -> Observation:
    """Flip each (channel, cell) in a noised band independently with its
    band's probability. The input is not mutated."""
    if obs.R != spec.R:
        raise ValueError(f"observation window {obs.R} does not match noise spec R={spec.R}")
    out = obs.channels.copy()
    if not spec.rings:
        return Observation(channels=out)
    nc = out.shape[0]
    blocked = obs.blocked_channel
    for distance, p in spec.rings:
        band = ring_mask(spec.R, distance)
        flips = rng.random((nc, spec.R, spec.R)) < p
        flips &= band[None, :, :]
        for c in range(nc):
            target = -1 if c == blocked else 1
            ch = out[c]
            f = flips[c]
            ch[f] = np.where(ch[f] == 0, target, 0)
    return Observation(channels=out)
