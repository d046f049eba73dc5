"""Event-triggered keyframe selection from an activity profile.

Selection proceeds in four steps: the windows with the largest activity
change, then the most active windows, then a refinement pass that trades
clustered low-activity picks for coverage of the widest gap, and finally the
mapping of window midpoints onto the nearest RGB frames.

Every tie (equal flux, equal delta, equal gap, equidistant frames) resolves
toward the earlier index.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import List, Sequence, Set, Tuple

import numpy as np

from ecprune.errors import ConfigError, InputDataError
from ecprune.events import ActivityProfile


@dataclass(frozen=True)
class EtcsParams:
    n_target: int = 8
    delta_share: float = 0.5
    min_gap: int = 0
    low_activity_quantile: float = 0.25

    def __post_init__(self):
        if self.n_target < 1:
            raise ConfigError(f"n_target must be >= 1, got {self.n_target}")
        if not 0.0 <= self.delta_share <= 1.0:
            raise ConfigError(f"delta_share must lie in [0, 1], got {self.delta_share}")
        if self.min_gap < 0:
            raise ConfigError("min_gap must be >= 0")
        if not 0.0 <= self.low_activity_quantile <= 1.0:
            raise ConfigError("low_activity_quantile must lie in [0, 1]")


@dataclass(frozen=True)
class KeyframeSet:
    window_indices: List[int]
    frame_indices: List[int]
    frame_times: List[int]

    def __len__(self) -> int:
        return len(self.frame_indices)

    def to_manifest(self) -> str:
        buf = io.StringIO()
        for f, w, t in zip(self.frame_indices, self.window_indices, self.frame_times):
            buf.write(f"{f},{w},{t}\n")
        return buf.getvalue()

    @classmethod
    def from_manifest(cls, text: str) -> "KeyframeSet":
        fs, ws, ts = [], [], []
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                f, w, t = (int(v) for v in line.split(","))
            except ValueError:
                raise InputDataError(f"manifest line {lineno}: expected frame_index,window_index,frame_time_us") from None
            fs.append(f)
            ws.append(w)
            ts.append(t)
        return cls(ws, fs, ts)


def _ranked(values: np.ndarray, candidates: Sequence[int]) -> List[int]:
    """Candidates ordered by descending value, earlier index first on ties."""
    return sorted(candidates, key=lambda n: (-values[n], n))


def initial_selection(flux: np.ndarray, deltas: np.ndarray, params: EtcsParams) -> List[int]:
    """Steps 1-2: top-delta windows, then top-flux windows, before refinement."""
    n_windows = len(flux)
    budget = min(params.n_target, n_windows)
    # window n carries deltas[n - 1]; window 0 has no delta
    delta_of = np.full(n_windows, -np.inf)
    delta_of[1:] = deltas
    n_delta = min(math.ceil(params.delta_share * params.n_target), budget, n_windows - 1)
    chosen = _ranked(delta_of, range(1, n_windows))[:n_delta]
    taken = set(chosen)
    for n in _ranked(flux, range(n_windows)):
        if len(chosen) >= budget:
            break
        if n not in taken:
            chosen.append(n)
            taken.add(n)
    return sorted(chosen)


def _refine(selected: List[int], flux: np.ndarray, params: EtcsParams) -> Tuple[List[int], Set[int]]:
    """Step 3. Returns the refined selection and the windows it dropped."""
    if params.min_gap <= 0 or len(selected) < 2:
        return selected, set()
    threshold = float(np.quantile(flux, params.low_activity_quantile))
    sel = sorted(selected)
    dropped = set()
    for _ in range(params.n_target):
        offending = None
        for a, b in zip(sel, sel[1:]):
            if b - a < params.min_gap and (flux[a] < threshold or flux[b] < threshold):
                offending = (a, b)
                break
        if offending is None:
            break
        a, b = offending
        drop = b if flux[b] <= flux[a] else a
        sel.remove(drop)
        dropped.add(drop)
        # a dropped window is never re-added, so the loop cannot oscillate
        gaps = [(q - p, p, q) for p, q in zip(sel, sel[1:]) if q - p > 1 and (p + q) // 2 not in dropped]
        if gaps:
            width = max(g[0] for g in gaps)
            _, p, q = next(g for g in gaps if g[0] == width)
            sel.append((p + q) // 2)
            sel.sort()
    return sel, dropped


def nearest_frame(t: float, frame_times: np.ndarray) -> int:
    j = int(np.searchsorted(frame_times, t, side="left"))
    if j == 0:
        return 0
    if j == len(frame_times):
        return len(frame_times) - 1
    # equidistant goes to the earlier frame
    return j - 1 if t - frame_times[j - 1] <= frame_times[j] - t else j


def select_keyframes(profile: ActivityProfile, params: EtcsParams, frame_times: Sequence[int]) -> KeyframeSet:
    flux = np.asarray(profile.flux, dtype=np.float64)
    deltas = np.asarray(profile.deltas, dtype=np.float64)
    if flux.size == 0:
        raise InputDataError("activity profile has no windows")
    ft = np.asarray(frame_times, dtype=np.float64)
    if ft.size == 0:
        raise InputDataError("no frame times to anchor keyframes to")
    if np.any(np.diff(ft) <= 0):
        raise InputDataError("frame times must be strictly increasing")

    selected, dropped = _refine(initial_selection(flux, deltas, params), flux, params)
    budget = min(params.n_target, flux.size)

    used_frames = {}
    tried = set()

    def take(n: int) -> None:
        tried.add(n)
        f = nearest_frame(profile.window_mid(n), ft)
        if f not in used_frames:
            used_frames[f] = n

    for n in selected:
        take(n)
    # backfill by S rank; refinement drops are a last resort
    ranked = _ranked(flux, range(flux.size))
    for n in [n for n in ranked if n not in dropped] + [n for n in ranked if n in dropped]:
        if len(used_frames) >= budget:
            break
        if n not in tried:
            take(n)

    frames = sorted(used_frames)
    return KeyframeSet(
        window_indices=[used_frames[f] for f in frames],
        frame_indices=frames,
        frame_times=[int(frame_times[f]) for f in frames],
    )


def uniform_keyframes(frame_times: Sequence[int], n_target: int, profile: ActivityProfile) -> KeyframeSet:
    """Evenly spaced frames; the fallback when a clip produced no events.

    Each frame is paired with the window containing its timestamp, so window
    indices may repeat when frames are denser than windows.
    """
    n_frames = len(frame_times)
    if n_frames == 0:
        raise InputDataError("no frame times to anchor keyframes to")
    k = min(n_target, n_frames)
    frames = sorted(set(np.linspace(0, n_frames - 1, k).round().astype(int).tolist()))
    n_windows = len(profile)
    dt = profile.windowing.delta_t
    windows = [min(n_windows - 1, max(0, int((frame_times[f] - profile.origin) // dt))) for f in frames]
    return KeyframeSet(windows, frames, [int(frame_times[f]) for f in frames])
