"""Simulated DVS events from a grayscale frame sequence.

Per pixel, log intensity ``ln(I + log_eps)`` is interpolated linearly between
frame samples. Each crossing of ``ref + c_pos`` emits a +1 event and lifts the
reference by ``c_pos``; each crossing of ``ref - c_neg`` emits -1 and lowers it
by ``c_neg``. A crossing inside the refractory period of the pixel's previous
emitted event is dropped, but the reference still moves.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from ecprune.errors import ConfigError, InputDataError
from ecprune.events import EventStream

# Slack on threshold comparisons so an exact arithmetic crossing (ln-change of
# exactly 2 * c) is not lost to rounding in ln().
CROSSING_TOL = 1e-9


@dataclass(frozen=True)
class EsimParams:
    c_pos: float = 0.2
    c_neg: float = 0.2
    t_ref: int = 0
    log_eps: float = 1e-3

    def __post_init__(self):
        if not (self.c_pos > 0 and self.c_neg > 0):
            raise ConfigError("contrast thresholds must be positive")
        if self.t_ref < 0:
            raise ConfigError("refractory period must be >= 0")
        if not self.log_eps > 0:
            raise ConfigError("log_eps must be positive")


@dataclass(frozen=True)
class FrameSequence:
    frames: np.ndarray  # (n_frames, height, width), values in [0, 1]
    timestamps: np.ndarray  # microseconds, strictly increasing

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        ts = np.asarray(self.timestamps, dtype=np.int64)
        if frames.ndim != 3:
            raise InputDataError(f"frames must be a (n, height, width) stack, got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise InputDataError("at least two frames are needed to simulate events")
        if ts.shape != (frames.shape[0],):
            raise InputDataError(f"{frames.shape[0]} frames but {ts.size} timestamps")
        if np.any(np.diff(ts) <= 0):
            raise InputDataError("frame timestamps must be strictly increasing")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    @classmethod
    def from_list(cls, frames: Sequence[np.ndarray], timestamps: Sequence[int]) -> "FrameSequence":
        shapes = {np.shape(f) for f in frames}
        if len(shapes) > 1:
            raise InputDataError(f"frames differ in size: {sorted(shapes)}")
        return cls(np.stack([np.asarray(f, dtype=np.float64) for f in frames]), np.asarray(timestamps))

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def simulate_events(frames: FrameSequence, params: EsimParams = EsimParams()) -> EventStream:
    logs = np.log(frames.frames + params.log_eps).reshape(len(frames.timestamps), -1)
    ts = frames.timestamps.astype(np.float64)
    ref = logs[0].copy()

    pix_chunks: List[np.ndarray] = []
    t_chunks: List[np.ndarray] = []
    p_chunks: List[np.ndarray] = []
    for k in range(len(ts) - 1):
        l0, l1 = logs[k], logs[k + 1]
        slope = l1 - l0
        dt = ts[k + 1] - ts[k]
        for sign, c in ((1, params.c_pos), (-1, params.c_neg)):
            excess = sign * (l1 - ref)
            n = np.floor(excess / c + CROSSING_TOL).astype(np.int64)
            n[(excess <= 0) | (sign * slope <= 0)] = 0
            hit = np.flatnonzero(n > 0)
            if hit.size == 0:
                continue
            reps = n[hit]
            pix = np.repeat(hit, reps)
            # j-th crossing of this interval for each repeated pixel, starting at 1
            j = np.arange(pix.size) - np.repeat(np.cumsum(reps) - reps, reps) + 1
            level = ref[pix] + sign * j * c
            frac = np.clip((level - l0[pix]) / slope[pix], 0.0, 1.0)
            pix_chunks.append(pix)
            t_chunks.append(ts[k] + frac * dt)
            p_chunks.append(np.full(pix.size, sign, dtype=np.int8))
            ref[hit] += sign * reps * c

    width, height = frames.width, frames.height
    t0, t1 = int(frames.timestamps[0]), int(frames.timestamps[-1])
    if not pix_chunks:
        return EventStream.empty(width, height, t0, t1)
    pix = np.concatenate(pix_chunks)
    t = np.rint(np.concatenate(t_chunks)).astype(np.int64)
    p = np.concatenate(p_chunks)

    if params.t_ref > 0:
        keep = _refractory_mask(pix, t, params.t_ref)
        pix, t, p = pix[keep], t[keep], p[keep]

    x, y = pix % width, pix // width
    order = np.lexsort((p, x, y, t))
    return EventStream(t[order], x[order], y[order], p[order], width, height, t0, t1)


def _refractory_mask(pix: np.ndarray, t: np.ndarray, t_ref: int) -> np.ndarray:
    """Drop events closer than ``t_ref`` to the same pixel's last emitted event."""
    order = np.lexsort((t, pix))
    keep = np.zeros(pix.size, dtype=bool)
    last_pix, last_t = -1, 0
    for i in order:
        if pix[i] != last_pix or t[i] - last_t >= t_ref:
            keep[i] = True
            last_pix, last_t = pix[i], t[i]
    return keep


# --------------------------------------------------------------------------
# PGM frame directories

_WS = rb"(?:\s|#[^\n]*\n)+"
_PGM_HEADER = re.compile(rb"P5" + _WS + rb"(\d+)" + _WS + rb"(\d+)" + _WS + rb"(\d+)\s")


def read_pgm(path: Union[str, os.PathLike]) -> np.ndarray:
    """Read a binary (P5) PGM, 8- or 16-bit, scaled to [0, 1]."""
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if m is None:
        raise InputDataError(f"{path}: not a binary (P5) PGM or bad header")
    width, height, maxval = (int(g) for g in m.groups())
    if not 0 < maxval < 65536:
        raise InputDataError(f"{path}: maxval {maxval} out of range")
    dtype = np.dtype(">u2" if maxval > 255 else "u1")
    count = width * height
    if len(data) - m.end() < count * dtype.itemsize:
        raise InputDataError(f"{path}: pixel data shorter than {width}x{height}")
    body = np.frombuffer(data, dtype=dtype, count=count, offset=m.end())
    return body.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path: Union[str, os.PathLike], image: np.ndarray, maxval: int = 255) -> None:
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    dtype = ">u2" if maxval > 255 else "u1"
    pixels = np.rint(img * maxval).astype(dtype)
    h, w = img.shape
    Path(path).write_bytes(b"P5\n%d %d\n%d\n" % (w, h, maxval) + pixels.tobytes())


def read_frame_dir(directory: Union[str, os.PathLike], timestamps_file: Union[str, os.PathLike, None] = None) -> FrameSequence:
    """Load ``*.pgm`` frames (sorted by numeric stem) plus per-frame µs timestamps.

    The timestamp sidecar defaults to ``timestamps.txt`` inside the directory.
    """
    directory = Path(directory)
    paths = sorted(directory.glob("*.pgm"), key=lambda p: (len(p.stem), p.stem))
    if not paths:
        raise InputDataError(f"{directory}: no .pgm frames")
    ts_path = Path(timestamps_file) if timestamps_file else directory / "timestamps.txt"
    if not ts_path.exists():
        raise InputDataError(f"{ts_path}: timestamp sidecar missing")
    stamps = []
    for lineno, line in enumerate(ts_path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            stamps.append(int(line))
        except ValueError:
            raise InputDataError(f"{ts_path} line {lineno}: expected integer microseconds") from None
    if len(stamps) != len(paths):
        raise InputDataError(f"{len(paths)} frames but {len(stamps)} timestamps in {ts_path}")
    return FrameSequence.from_list([read_pgm(p) for p in paths], stamps)
