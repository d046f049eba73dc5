"""Token-aligned motion saliency and budgeted top-K retention."""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ecprune.errors import ConfigError, InputDataError
from ecprune.events import DensityFilterParams, EventStream, density_filter

SALIENCY_HEADER = struct.Struct("<IHH")


def floor_budget(ratio: float, n: int) -> int:
    """``max(1, floor(ratio * n))`` for ``n >= 1``.

    A 1e-9 slack absorbs products such as ``0.29 * 100 == 28.999999999999996``.
    """
    if n <= 0:
        return 0
    return max(1, math.floor(ratio * n + 1e-9))


@dataclass(frozen=True)
class TokenGridSpec:
    rows: int
    cols: int
    sensor_width: int
    sensor_height: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"token grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.cols > self.sensor_width or self.rows > self.sensor_height:
            raise ConfigError(
                f"{self.rows}x{self.cols} token grid is finer than the "
                f"{self.sensor_width}x{self.sensor_height} sensor"
            )

    @property
    def n_tokens(self) -> int:
        return self.rows * self.cols

    def token_of(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Row-major token index for each pixel. Remainder pixels go to the last row/column."""
        cw = self.sensor_width // self.cols
        ch = self.sensor_height // self.rows
        col = np.minimum(np.asarray(x) // cw, self.cols - 1)
        row = np.minimum(np.asarray(y) // ch, self.rows - 1)
        return row * self.cols + col


@dataclass(frozen=True)
class SaliencyMap:
    counts: np.ndarray
    saliency: np.ndarray
    frame_index: int
    window: Tuple[int, int]
    rows: int = 0
    cols: int = 0

    def __len__(self) -> int:
        return len(self.saliency)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("token_index,count,saliency\n")
        for i, (c, s) in enumerate(zip(self.counts.tolist(), self.saliency.tolist())):
            buf.write(f"{i},{c},{s!r}\n")
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        head = SALIENCY_HEADER.pack(self.frame_index, self.rows, self.cols)
        return head + np.asarray(self.saliency, dtype="<f4").tobytes()

    @staticmethod
    def saliency_from_bytes(data: bytes) -> Tuple[int, int, int, np.ndarray]:
        """Decode ``(frame_index, rows, cols, saliency)`` from :meth:`to_bytes` output."""
        if len(data) < SALIENCY_HEADER.size:
            raise InputDataError("saliency block shorter than its header")
        frame, rows, cols = SALIENCY_HEADER.unpack_from(data)
        body = np.frombuffer(data, dtype="<f4", offset=SALIENCY_HEADER.size)
        if body.size != rows * cols:
            raise InputDataError(f"saliency block holds {body.size} values, header says {rows}x{cols}")
        return frame, rows, cols, body.astype(np.float64)


@dataclass(frozen=True)
class RetainedSet:
    indices: np.ndarray
    budget_k: int
    frame_index: int


def minmax_saliency(counts: np.ndarray) -> np.ndarray:
    """Min-max normalise; all-equal counts give all zeros."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        return counts.copy()
    lo, hi = counts.min(), counts.max()
    if hi == lo:
        return np.zeros_like(counts)
    return (counts - lo) / (hi - lo)


def token_saliency(
    stream: EventStream,
    grid: TokenGridSpec,
    window: Tuple[int, int],
    filter: DensityFilterParams = DensityFilterParams(),
    frame_index: int = 0,
    prefiltered: bool = False,
) -> SaliencyMap:
    """Count filtered events per token cell inside ``[window[0], window[1])``.

    Pass ``prefiltered=True`` when ``stream`` already went through
    :func:`density_filter`; the filter is then skipped.
    """
    a, b = int(window[0]), int(window[1])
    if b <= a:
        raise ConfigError(f"empty saliency window [{a}, {b})")
    if (grid.sensor_width, grid.sensor_height) != (stream.width, stream.height):
        raise InputDataError(
            f"grid laid out for {grid.sensor_width}x{grid.sensor_height}, stream is {stream.width}x{stream.height}"
        )
    filtered = stream if prefiltered else density_filter(stream, filter)
    lo = np.searchsorted(filtered.t, a, side="left")
    hi = np.searchsorted(filtered.t, b, side="left")
    tok = grid.token_of(filtered.x[lo:hi], filtered.y[lo:hi])
    counts = np.bincount(tok, minlength=grid.n_tokens).astype(np.int64)
    return SaliencyMap(counts, minmax_saliency(counts), frame_index, (a, b), grid.rows, grid.cols)


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties to the lower index, returned sorted."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))
    return np.sort(order[:k])


def retain_topk(smap: SaliencyMap, rho: float, budget: Optional[int] = None) -> RetainedSet:
    """Keep ``max(1, floor(rho * N))`` tokens of highest saliency (or ``budget`` if given)."""
    n = len(smap)
    if n == 0:
        raise InputDataError("cannot retain tokens from an empty saliency map")
    if not (0.0 < rho <= 1.0):
        raise ConfigError(f"retention ratio must lie in (0, 1], got {rho}")
    k = floor_budget(rho, n) if budget is None else budget
    return RetainedSet(topk_indices(smap.saliency, k), k, smap.frame_index)
