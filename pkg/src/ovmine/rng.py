"""Deterministic random streams for the synthetic benchmark.

Every image draws from its own substream, keyed by XOR-ing the image
index into the world seed, so generated bytes do not depend on the
order in which images are produced or on the worker count. Uniform
draws come from the counter-based Philox generator; Gaussians are
derived from those uniforms with the Box-Muller transform, pinned here
so the sampled values are a fixed function of the seed alone.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Substream tags for world-level draws that are not tied to one image.
# They sit far above any realistic image index to keep streams disjoint.
CONCEPT_STREAM = 1 << 62
WEIGHT_STREAM = 1 << 61


def substream(seed: int, index: int) -> np.random.Generator:
    """Return the generator for one substream of ``seed``."""
    return np.random.Generator(np.random.Philox(key=(seed ^ index) & _MASK64))


def uniform(gen: np.random.Generator, low: float, high: float, size=None) -> np.ndarray | float:
    u = gen.random(size)
    return low + (high - low) * u


def gaussian(gen: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws via Box-Muller over paired uniforms."""
    n = int(np.prod(size))
    if n == 0:
        return np.zeros(size, dtype=np.float64)
    half = (n + 1) // 2
    # log argument in (0, 1]: flip the half-open range of random().
    u1 = 1.0 - gen.random(half)
    u2 = gen.random(half)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
    return z[:n].reshape(size)
