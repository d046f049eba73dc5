"""Synthetic attention maps: controlled peripheral-bias fixtures and tiny exact softmax.

All randomness comes from :class:`ecprune.rng.SplitMix64`, so a given
``(parameters, seed)`` pair yields bit-identical maps on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from ecprune.bias import RegionPartition
from ecprune.earf import AttentionMap, softmax_attention
from ecprune.errors import ConfigError, InputDataError
from ecprune.rng import SplitMix64, derive_seed

# Group means of the peripheral-to-center ratio for a 28-layer model
# (layers 0-7, 8-16, 17-27).
GROUP_MULTIPLIERS = ((range(0, 8), 3.35), (range(8, 17), 5.64), (range(17, 28), 2.86))


def default_multipliers(n_layers: int = 28) -> Tuple[float, ...]:
    out = []
    for layer in range(n_layers):
        out.append(next((m for r, m in GROUP_MULTIPLIERS if layer in r), GROUP_MULTIPLIERS[-1][1]))
    return tuple(out)


@dataclass(frozen=True)
class BiasProfile:
    multipliers: Tuple[float, ...] = field(default_factory=default_multipliers)
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if any(m < 0 for m in self.multipliers):
            raise ConfigError("peripheral multipliers must be >= 0")
        if self.noise_scale < 0:
            raise ConfigError("noise_scale must be >= 0")
        object.__setattr__(self, "multipliers", tuple(float(m) for m in self.multipliers))

    def multiplier(self, layer: int) -> float:
        if not self.multipliers:
            return 1.0
        return self.multipliers[min(max(layer, 0), len(self.multipliers) - 1)]


def token_masses(partition: RegionPartition, multiplier: float, noise_scale: float, gen: SplitMix64) -> np.ndarray:
    """Unnormalised per-token mass: 1 in the center, ``multiplier`` on the periphery, plus noise."""
    n = partition.rows * partition.cols
    mass = np.ones(n)
    mass[partition.peripheral] = multiplier
    if noise_scale > 0:
        mass = np.maximum(mass + gen.uniform(n, -noise_scale, noise_scale), 0.0)
    return mass


def synth_biased_map(
    partition: RegionPartition,
    profile: BiasProfile,
    layer: int,
    seed: Optional[int] = None,
    active: Optional[Mapping[int, Sequence[int]]] = None,
    n_text: int = 8,
    n_queries: int = 4,
    visual_fraction: float = 0.5,
    multiplier: Optional[float] = None,
) -> AttentionMap:
    """Attention rows over ``[visual tokens..., text tokens...]`` with injected peripheral bias.

    ``active`` maps frame -> token ids present in the sequence (default: every
    token of frame 0). The scoring queries are the last ``n_queries`` text
    tokens. Each row gives ``visual_fraction`` of its mass to the visual
    block, split in proportion to the biased token masses, and spreads the
    rest evenly over the text tokens.
    """
    if n_text < 1 or not 1 <= n_queries <= n_text:
        raise ConfigError("need 1 <= n_queries <= n_text")
    if not 0.0 < visual_fraction <= 1.0:
        raise ConfigError("visual_fraction must lie in (0, 1]")
    n_grid = partition.rows * partition.cols
    if active is None:
        active = {0: range(n_grid)}
    m = profile.multiplier(layer) if multiplier is None else multiplier
    if m < 0:
        raise ConfigError("multiplier must be >= 0")
    base_seed = profile.seed if seed is None else seed

    vi_rows = []
    for f in sorted(active):
        toks = np.asarray(sorted(active[f]), dtype=np.int64)
        if toks.size and (toks.min() < 0 or toks.max() >= n_grid):
            raise InputDataError(f"frame {f}: token ids outside the {n_grid}-token grid")
        for t in toks:
            vi_rows.append((len(vi_rows), f, int(t)))
    vi = np.asarray(vi_rows, dtype=np.int64).reshape(-1, 3)
    n_vis = len(vi)
    n_seq = n_vis + n_text

    scores = np.zeros((n_queries, n_seq))
    for q in range(n_queries):
        row_vis = np.empty(n_vis)
        for f in sorted(active):
            gen = SplitMix64(derive_seed(base_seed, layer, f, q))
            mass = token_masses(partition, m, profile.noise_scale, gen)
            sel = vi[:, 1] == f
            row_vis[sel] = mass[vi[sel, 2]]
        total = row_vis.sum()
        vis_share = visual_fraction if n_vis else 0.0
        if total > 0:
            scores[q, :n_vis] = vis_share * row_vis / total
        elif n_vis:
            scores[q, :n_vis] = vis_share / n_vis
        scores[q, n_vis:] = (1.0 - vis_share) / n_text
    return AttentionMap(scores, vi, layer)


def random_attention_inputs(n_queries: int, n_keys: int, d_k: int, d_v: int, seed: int, scale: float = 1.0):
    """Seeded ``(queries, keys, values)`` with entries uniform in ``[-scale, scale)``."""
    gen = SplitMix64(seed)
    q = gen.uniform(n_queries * d_k, -scale, scale).reshape(n_queries, d_k)
    k = gen.uniform(n_keys * d_k, -scale, scale).reshape(n_keys, d_k)
    v = gen.uniform(n_keys * d_v, -scale, scale).reshape(n_keys, d_v)
    return q, k, v


def tiny_attention(queries, keys, values, d_k: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Exact softmax attention over every key: ``(alpha, z)``."""
    return softmax_attention(queries, keys, values, d_k)
