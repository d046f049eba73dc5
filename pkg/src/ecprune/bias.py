"""Peripheral attention-sink statistics and score-distribution diagnostics."""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from ecprune.errors import ConfigError, InputDataError


@dataclass(frozen=True)
class RegionPartition:
    rows: int
    cols: int
    margin_fraction: float
    corner: np.ndarray
    edge: np.ndarray
    center: np.ndarray

    @property
    def peripheral(self) -> np.ndarray:
        return np.union1d(self.corner, self.edge)

    def labels(self) -> np.ndarray:
        """Per-token region code: 0 center, 1 edge, 2 corner."""
        lab = np.zeros(self.rows * self.cols, dtype=np.int8)
        lab[self.edge] = 1
        lab[self.corner] = 2
        return lab


def partition_regions(rows: int, cols: int, margin_fraction: float = 0.15) -> RegionPartition:
    """Split a token grid into corner, edge and center cells.

    Each side gets a margin band ``floor(margin_fraction * dim)`` cells thick.
    Corners lie in a row band and a column band at once; the rest of the
    border is edge. On 12x18 with 0.15 this gives 8 / 68 / 140.
    """
    if rows < 3 or cols < 3:
        raise ConfigError(f"grid must be at least 3x3, got {rows}x{cols}")
    if not 0.0 < margin_fraction < 0.5:
        raise ConfigError(f"margin_fraction must lie in (0, 0.5), got {margin_fraction}")
    mr = math.floor(margin_fraction * rows + 1e-9)
    mc = math.floor(margin_fraction * cols + 1e-9)
    if mr < 1 or mc < 1:
        raise ConfigError(f"margin of {margin_fraction} leaves an empty band on a {rows}x{cols} grid")
    if 2 * mr >= rows or 2 * mc >= cols:
        raise ConfigError(f"margins consume the whole {rows}x{cols} grid")
    r, c = np.divmod(np.arange(rows * cols), cols)
    in_rows = (r < mr) | (r >= rows - mr)
    in_cols = (c < mc) | (c >= cols - mc)
    return RegionPartition(
        rows,
        cols,
        margin_fraction,
        corner=np.flatnonzero(in_rows & in_cols),
        edge=np.flatnonzero(in_rows ^ in_cols),
        center=np.flatnonzero(~(in_rows | in_cols)),
    )


def peripheral_ratio(mass, partition: RegionPartition, region: str = "peripheral") -> float:
    """Mean per-token mass over ``region`` divided by the mean over the center.

    ``region`` is one of ``peripheral``, ``corner``, ``edge``.
    """
    mass = np.asarray(mass, dtype=np.float64).ravel()
    if mass.size != partition.rows * partition.cols:
        raise InputDataError(f"{mass.size} token masses for a {partition.rows}x{partition.cols} grid")
    cells = {"peripheral": partition.peripheral, "corner": partition.corner, "edge": partition.edge}[region]
    center = _region_mean(mass[partition.center])
    if center == 0:
        raise InputDataError("center region carries zero attention mass")
    return _region_mean(mass[cells]) / center


def _region_mean(v: np.ndarray) -> float:
    # shifting by the first value makes a constant region's mean exact
    return float(v[0] + math.fsum(v - v[0]) / v.size)


@dataclass(frozen=True)
class BiasStats:
    layer: int
    mu: float
    sigma: float
    d: float
    t: float
    n: int
    degenerate: bool = False


def bias_stats(ratios: Sequence[float], mu0: float = 1.0, layer: int = 0) -> BiasStats:
    """Sample mean/std of per-frame ratios, Cohen's d against 1 and a one-sample t against ``mu0``.

    Zero spread yields ``degenerate=True`` with ``d`` and ``t`` set to NaN.
    """
    x = np.asarray(ratios, dtype=np.float64)
    n = x.size
    if n < 2:
        raise InputDataError(f"need at least two ratio samples, got {n}")
    mu = math.fsum(x) / n
    sigma = math.sqrt(math.fsum((x - mu) ** 2) / (n - 1))
    if sigma == 0:
        return BiasStats(layer, mu, 0.0, math.nan, math.nan, n, degenerate=True)
    return BiasStats(layer, mu, sigma, (mu - 1.0) / sigma, (mu - mu0) / (sigma / math.sqrt(n)), n)


def profile_correlation(a: Sequence[float], b: Sequence[float]) -> float:
    """Pearson r between two per-layer profiles."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise InputDataError("profiles must be 1-D, equal length and at least 2 long")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = math.fsum(dx * dx), math.fsum(dy * dy)
    if sxx == 0 or syy == 0:
        raise InputDataError("correlation undefined for a constant profile")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def distribution_diagnostics(values: Sequence[float]) -> Dict[str, float]:
    """Fisher-Pearson skewness ``g1 = m3 / m2**1.5`` and the share of mass in the top 10% of tokens."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 3:
        raise InputDataError("need at least three values")
    d = v - v.mean()
    m2 = math.fsum(d**2) / v.size
    if m2 == 0:
        raise InputDataError("zero variance")
    m3 = math.fsum(d**3) / v.size
    total = math.fsum(v)
    if total <= 0:
        raise InputDataError("total mass must be positive")
    k = math.ceil(0.1 * v.size)
    top = math.fsum(np.sort(v)[::-1][:k])
    return {"skewness": m3 / m2**1.5, "top_decile_share": top / total}


def stats_to_csv(stats: Iterable[BiasStats]) -> str:
    buf = io.StringIO()
    buf.write("layer,mu,sigma,d,t,n\n")
    for s in stats:
        buf.write(f"{s.layer},{s.mu!r},{s.sigma!r},{s.d!r},{s.t!r},{s.n}\n")
    return buf.getvalue()


def stats_to_json(stats: Iterable[BiasStats], correlation: Optional[float] = None) -> str:
    def clean(v):
        return None if isinstance(v, float) and math.isnan(v) else v

    rows = [{k: clean(v) for k, v in asdict(s).items()} for s in stats]
    doc = {"layers": rows}
    if correlation is not None:
        doc["profile_correlation"] = correlation
    return json.dumps(doc, sort_keys=True, indent=1)


def layer_ratios(masses_by_layer: Dict[int, List[np.ndarray]], partition: RegionPartition) -> Dict[int, List[float]]:
    """Per-layer list of per-frame peripheral ratios."""
    return {
        layer: [peripheral_ratio(m, partition) for m in masses]
        for layer, masses in sorted(masses_by_layer.items())
    }
