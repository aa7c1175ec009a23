"""Deterministic stream splitting from one 64-bit root seed.

``stream(root, "attack", 3)`` seeds a generator from
``SeedSequence([root, crc32("attack"), 3])``; distinct component names or
indices give independent streams.
"""
from __future__ import annotations

import os
import zlib

import numpy as np

MASK64 = (1 << 64) - 1
ENV_SEED = "BBC_SEED"


def root_seed(default: int = 0) -> int:
    env = os.environ.get(ENV_SEED)
    return (int(env) if env not in (None, "") else int(default)) & MASK64


def _entropy(root: int, component: str, index: int) -> list[int]:
    return [root & 0xFFFFFFFF, (root >> 32) & 0xFFFFFFFF, zlib.crc32(component.encode()), int(index)]


def stream(root: int, component: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(_entropy(root, component, index)))


def derive_seed(root: int, component: str, index: int = 0) -> int:
    return int(np.random.SeedSequence(_entropy(root, component, index)).generate_state(1, np.uint32)[0])
