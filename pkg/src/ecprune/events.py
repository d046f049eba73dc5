"""Event data model, ingestion, density filtering and windowed activity flux.

Timestamps are integer microseconds throughout. A stream is held as parallel
numpy columns (``t``, ``x``, ``y``, ``p``) sorted by time.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from typing import BinaryIO, NamedTuple, Optional, Union

import numpy as np

from ecprune.errors import ConfigError, InputDataError

BINARY_MAGIC = b"ECPEVT01"
BINARY_HEADER = np.dtype([("magic", "S8"), ("width", "<u2"), ("height", "<u2"), ("reserved", "V4")])
BINARY_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])

FORMATS = ("text-csv", "packed-binary")


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int
    t_start: int = 0
    t_end: int = 0

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.int64)
        x = np.ascontiguousarray(self.x, dtype=np.int32)
        y = np.ascontiguousarray(self.y, dtype=np.int32)
        p = np.ascontiguousarray(self.p, dtype=np.int8)
        if not (len(t) == len(x) == len(y) == len(p)):
            raise InputDataError("event columns have different lengths")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError(f"sensor dims must be positive, got {self.width}x{self.height}")
        if len(t):
            if np.any(np.diff(t) < 0):
                raise InputDataError("events are not sorted by timestamp")
            if t[0] < self.t_start or t[-1] > self.t_end:
                raise InputDataError("events fall outside [t_start, t_end]")
            if x.min() < 0 or y.min() < 0 or x.max() >= self.width or y.max() >= self.height:
                raise InputDataError("event outside sensor bounds")
            if not np.all((p == 1) | (p == -1)):
                raise InputDataError("polarity must be +1 or -1")
        if self.t_end < self.t_start:
            raise InputDataError("t_end precedes t_start")
        for name, arr in (("t", t), ("x", x), ("y", y), ("p", p)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_arrays(cls, t, x, y, p, width, height, t_start=None, t_end=None) -> "EventStream":
        """Build a stream from unsorted columns; sorts stably by time."""
        t = np.asarray(t, dtype=np.int64)
        order = np.argsort(t, kind="stable")
        t = t[order]
        if t_start is None:
            t_start = int(t[0]) if len(t) else 0
        if t_end is None:
            t_end = int(t[-1]) if len(t) else t_start
        return cls(
            t,
            np.asarray(x)[order],
            np.asarray(y)[order],
            np.asarray(p)[order],
            int(width),
            int(height),
            int(t_start),
            int(t_end),
        )

    @classmethod
    def empty(cls, width: int, height: int, t_start: int = 0, t_end: int = 0) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height, t_start, t_end)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def subset(self, mask: np.ndarray) -> "EventStream":
        return EventStream(
            self.t[mask], self.x[mask], self.y[mask], self.p[mask],
            self.width, self.height, self.t_start, self.t_end,
        )

    def same_as(self, other: "EventStream") -> bool:
        return (
            (self.width, self.height, self.t_start, self.t_end)
            == (other.width, other.height, other.t_start, other.t_end)
            and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in "txyp")
        )


@dataclass(frozen=True)
class DensityFilterParams:
    spatial_radius: int = 1
    temporal_radius: int = 10_000
    min_neighbors: int = 0

    def __post_init__(self):
        if self.spatial_radius < 0 or self.temporal_radius < 0 or self.min_neighbors < 0:
            raise ConfigError("density filter parameters must be non-negative")


@dataclass(frozen=True)
class WindowingParams:
    delta_t: int
    origin: Optional[int] = None  # None: use the stream's t_start

    def __post_init__(self):
        if self.delta_t <= 0:
            raise ConfigError(f"delta_t must be positive, got {self.delta_t}")

    def resolve_origin(self, stream: EventStream) -> int:
        return stream.t_start if self.origin is None else int(self.origin)


@dataclass(frozen=True)
class ActivityProfile:
    flux: np.ndarray
    deltas: np.ndarray
    windowing: WindowingParams
    origin: int = 0

    def __len__(self) -> int:
        return len(self.flux)

    def window_start(self, n: int) -> int:
        return self.origin + n * self.windowing.delta_t

    def window_mid(self, n: int) -> float:
        return self.origin + (n + 0.5) * self.windowing.delta_t


# --------------------------------------------------------------------------
# ingestion


def _to_microseconds(token: str, scale: int) -> int:
    try:
        value = Decimal(token)
    except InvalidOperation:
        raise ValueError(f"bad timestamp {token!r}") from None
    if not value.is_finite():
        raise ValueError(f"bad timestamp {token!r}")
    return int((value * scale).quantize(Decimal(1), rounding=ROUND_HALF_EVEN))


def _normalize_polarity(p: int) -> int:
    if p in (1, -1):
        return p
    if p == 0:
        return -1
    raise ValueError(f"polarity must be one of -1, 0, 1; got {p}")


def _read_csv(text: str, width: int, height: int, time_unit: str) -> EventStream:
    scale = {"us": 1, "s": 1_000_000}[time_unit]
    ts, xs, ys, ps = [], [], [], []
    record = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        record += 1
        parts = [s.strip() for s in line.split(",")]
        if len(parts) != 4:
            raise InputDataError(f"line {lineno} (record {record}): expected 4 fields t_us,x,y,p, got {len(parts)}")
        try:
            t = _to_microseconds(parts[0], scale)
            x, y = int(parts[1]), int(parts[2])
            p = _normalize_polarity(int(parts[3]))
        except ValueError as exc:
            raise InputDataError(f"line {lineno} (record {record}): {exc}") from None
        if t < 0:
            raise InputDataError(f"line {lineno} (record {record}): negative timestamp {t}")
        if not (0 <= x < width and 0 <= y < height):
            raise InputDataError(
                f"line {lineno} (record {record}): event ({x},{y}) outside {width}x{height} sensor"
            )
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(p)
    return EventStream.from_arrays(ts, xs, ys, ps, width, height)


def _read_binary(data: bytes, width: Optional[int], height: Optional[int]) -> EventStream:
    if len(data) < BINARY_HEADER.itemsize:
        raise InputDataError("packed-binary input shorter than its 16-byte header")
    header = np.frombuffer(data, dtype=BINARY_HEADER, count=1)[0]
    if bytes(header["magic"]) != BINARY_MAGIC:
        raise InputDataError(f"bad magic {bytes(header['magic'])!r}, expected {BINARY_MAGIC!r}")
    hw, hh = int(header["width"]), int(header["height"])
    if (width is not None and width != hw) or (height is not None and height != hh):
        raise InputDataError(f"header dims {hw}x{hh} disagree with requested {width}x{height}")
    body = data[BINARY_HEADER.itemsize:]
    if len(body) % BINARY_RECORD.itemsize:
        raise InputDataError(
            f"truncated record: payload of {len(body)} bytes is not a multiple of {BINARY_RECORD.itemsize}"
        )
    rec = np.frombuffer(body, dtype=BINARY_RECORD)
    if rec["t"].size and rec["t"].max() > np.iinfo(np.int64).max:
        raise InputDataError("timestamp overflows int64")
    bad = np.flatnonzero((rec["x"] >= hw) | (rec["y"] >= hh))
    if bad.size:
        raise InputDataError(f"record {bad[0] + 1}: event outside {hw}x{hh} sensor")
    bad = np.flatnonzero((rec["p"] != 1) & (rec["p"] != -1) & (rec["p"] != 0))
    if bad.size:
        raise InputDataError(f"record {bad[0] + 1}: polarity {rec['p'][bad[0]]} not in {{-1, 0, 1}}")
    p = np.where(rec["p"] == 0, -1, rec["p"]).astype(np.int8)
    return EventStream.from_arrays(rec["t"].astype(np.int64), rec["x"], rec["y"], p, hw, hh)


Source = Union[str, bytes, os.PathLike, BinaryIO]


def ingest_events(
    source: Source,
    format: str = "text-csv",
    width: Optional[int] = None,
    height: Optional[int] = None,
    time_unit: str = "us",
) -> EventStream:
    """Read an event stream from a path, raw bytes, or a binary file object.

    ``text-csv`` needs explicit sensor dims; ``packed-binary`` carries them
    in its header (passing dims there only adds a consistency check).
    ``time_unit="s"`` reads CSV timestamps as seconds, rounding half-even
    to whole microseconds.
    """
    if format not in FORMATS:
        raise ConfigError(f"unknown event format {format!r}; expected one of {FORMATS}")
    if time_unit not in ("us", "s"):
        raise ConfigError(f"time_unit must be 'us' or 's', got {time_unit!r}")
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, (bytes, bytearray, memoryview)):
        data = bytes(source)
    else:
        data = source.read()
    if format == "text-csv":
        if width is None or height is None:
            raise ConfigError("text-csv ingestion needs sensor width and height")
        if width <= 0 or height <= 0:
            raise ConfigError(f"sensor dims must be positive, got {width}x{height}")
        try:
            text = data.decode("ascii")
        except UnicodeDecodeError as exc:
            raise InputDataError(f"non-ASCII byte at offset {exc.start}") from None
        return _read_csv(text, width, height, time_unit)
    return _read_binary(data, width, height)


def write_events(stream: EventStream, dest: Union[str, os.PathLike, BinaryIO], format: str = "packed-binary") -> None:
    if format == "packed-binary":
        header = np.zeros(1, dtype=BINARY_HEADER)
        header["magic"] = BINARY_MAGIC
        header["width"] = stream.width
        header["height"] = stream.height
        rec = np.empty(len(stream), dtype=BINARY_RECORD)
        rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
        payload = header.tobytes() + rec.tobytes()
    elif format == "text-csv":
        buf = io.StringIO()
        buf.write("# t_us,x,y,p\n")
        for t, x, y, p in zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()):
            buf.write(f"{t},{x},{y},{p}\n")
        payload = buf.getvalue().encode("ascii")
    else:
        raise ConfigError(f"unknown event format {format!r}")
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "wb") as fh:
            fh.write(payload)
    else:
        dest.write(payload)


# --------------------------------------------------------------------------
# filtering and flux


def neighbor_counts(stream: EventStream, spatial_radius: int, temporal_radius: int, cap: Optional[int] = None) -> np.ndarray:
    """Number of other events within Chebyshev ``spatial_radius`` and ``|dt| <= temporal_radius``.

    Counts saturate at ``cap`` when given, which lets the filter stop early.
    """
    t, x, y = stream.t, stream.x, stream.y
    lo = np.searchsorted(t, t - temporal_radius, side="left")
    hi = np.searchsorted(t, t + temporal_radius, side="right")
    counts = np.empty(len(t), dtype=np.int64)
    for i in range(len(t)):
        a, b = lo[i], hi[i]
        near = (np.abs(x[a:b] - x[i]) <= spatial_radius) & (np.abs(y[a:b] - y[i]) <= spatial_radius)
        counts[i] = int(np.count_nonzero(near)) - 1  # self is always inside
    if cap is not None:
        np.minimum(counts, cap, out=counts)
    return counts


def density_filter(stream: EventStream, params: DensityFilterParams) -> EventStream:
    """Keep events with at least ``min_neighbors`` spatiotemporal neighbours."""
    if params.min_neighbors == 0 or len(stream) == 0:
        return stream
    counts = neighbor_counts(stream, params.spatial_radius, params.temporal_radius)
    return stream.subset(counts >= params.min_neighbors)


def window_count(stream: EventStream, delta_t: int, origin: int) -> int:
    """Windows needed to cover ``[origin, t_end]``; at least one."""
    n = max(1, -(-(stream.t_end - origin) // delta_t))
    if len(stream) and stream.t[-1] >= origin:
        n = max(n, int((stream.t[-1] - origin) // delta_t) + 1)
    return n


def activity_flux(
    stream: EventStream,
    windowing: WindowingParams,
    filter: DensityFilterParams = DensityFilterParams(),
) -> ActivityProfile:
    """Per-window count of density-filtered events, plus absolute first differences."""
    origin = windowing.resolve_origin(stream)
    filtered = density_filter(stream, filter)
    n = window_count(stream, windowing.delta_t, origin)
    t = filtered.t
    t = t[t >= origin]
    idx = (t - origin) // windowing.delta_t
    flux = np.bincount(idx, minlength=n)[:n].astype(np.float64)
    deltas = np.abs(np.diff(flux))
    return ActivityProfile(flux, deltas, windowing, origin)

