"""Event/attention rank fusion and layer-wise pruning of visual tokens.

Attention scores and event saliency live on different, long-tailed scales, so
both are mapped to normalised ranks within a keyframe before being mixed:

    S_calib = (1 - gamma) * rank(attention) + gamma * rank(event)

Each pruning layer keeps ``max(1, floor(rho * |V_f|))`` tokens per frame. The
retained keys/values then form the purified active set that later softmax
attention renormalises over.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ecprune.emsf import floor_budget, topk_indices
from ecprune.errors import ConfigError, InputDataError, InvariantViolation

ATTN_MAGIC = b"ECPATT01"
ATTN_HEADER = struct.Struct("<8sIIII")
ROW_SUM_TOL = 1e-5

# Layer choices: highest Cohen's d (3), peak peripheral ratio (9), start of
# the deep group (17). Fusion weights follow the shallow-heavy decay.
DEFAULT_LAYERS = (3, 9, 17)
DEFAULT_GAMMA = (0.8, 0.6, 0.5)


@dataclass(frozen=True, eq=False)
class AttentionMap:
    """Head-averaged post-softmax rows for the scoring queries of one layer.

    ``scores`` is ``(n_queries, n_tokens)`` over the whole active sequence;
    ``visual_index`` rows are ``(sequence_pos, frame_index, token_index)``.
    """

    scores: np.ndarray
    visual_index: np.ndarray
    layer: int = 0
    query_set: Optional[np.ndarray] = None  # row indices used for scoring; None = all rows
    check_rows: bool = True

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        vi = np.asarray(self.visual_index, dtype=np.int64).reshape(-1, 3)
        if scores.ndim != 2:
            raise InputDataError(f"attention scores must be 2-D, got shape {scores.shape}")
        if scores.shape[0] == 0:
            raise InputDataError("attention map has no query rows")
        if np.any(scores < 0):
            raise InputDataError("attention scores must be non-negative")
        if self.check_rows:
            bad = np.flatnonzero(np.abs(scores.sum(axis=1) - 1.0) > ROW_SUM_TOL)
            if bad.size:
                raise InputDataError(f"attention row {bad[0]} sums to {scores[bad[0]].sum():.6f}, not 1")
        if vi.size and (vi[:, 0].min() < 0 or vi[:, 0].max() >= scores.shape[1]):
            raise InputDataError("visual_index points outside the token sequence")
        qs = np.arange(scores.shape[0]) if self.query_set is None else np.asarray(self.query_set, dtype=np.int64)
        if qs.size == 0:
            raise InputDataError("empty scoring query set")
        if qs.min() < 0 or qs.max() >= scores.shape[0]:
            raise InputDataError("query_set refers to missing rows")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "visual_index", vi)
        object.__setattr__(self, "query_set", qs)

    @property
    def n_queries(self) -> int:
        return self.scores.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.scores.shape[1]

    def frames(self) -> List[int]:
        return sorted(set(self.visual_index[:, 1].tolist()))

    def to_bytes(self) -> bytes:
        head = ATTN_HEADER.pack(ATTN_MAGIC, self.layer, self.n_queries, self.n_tokens, len(self.visual_index))
        return head + self.scores.astype("<f4").tobytes() + self.visual_index.astype("<u4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, check_rows: bool = True) -> "AttentionMap":
        if len(data) < ATTN_HEADER.size:
            raise InputDataError("attention file shorter than its header")
        magic, layer, nq, nt, nv = ATTN_HEADER.unpack_from(data)
        if magic != ATTN_MAGIC:
            raise InputDataError(f"bad magic {magic!r}, expected {ATTN_MAGIC!r}")
        expected = ATTN_HEADER.size + 4 * nq * nt + 12 * nv
        if len(data) != expected:
            raise InputDataError(f"attention file is {len(data)} bytes, header implies {expected}")
        off = ATTN_HEADER.size
        scores = np.frombuffer(data, dtype="<f4", count=nq * nt, offset=off).reshape(nq, nt)
        vi = np.frombuffer(data, dtype="<u4", count=3 * nv, offset=off + 4 * nq * nt).reshape(nv, 3)
        return cls(scores.astype(np.float64), vi.astype(np.int64), layer, check_rows=check_rows)

    @classmethod
    def read(cls, path, check_rows: bool = True) -> "AttentionMap":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), check_rows=check_rows)

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())


@dataclass(frozen=True)
class VisualScore:
    """Attention and event scores for the active tokens of one keyframe, aligned by position."""

    attention: np.ndarray
    event: np.ndarray
    tokens: Optional[np.ndarray] = None

    def __post_init__(self):
        a = np.asarray(self.attention, dtype=np.float64)
        e = np.asarray(self.event, dtype=np.float64)
        if a.shape != e.shape or a.ndim != 1:
            raise InputDataError(f"attention ({a.shape}) and event ({e.shape}) vectors are not aligned")
        tok = np.arange(a.size) if self.tokens is None else np.asarray(self.tokens, dtype=np.int64)
        if tok.shape != a.shape:
            raise InputDataError("token ids do not match score length")
        object.__setattr__(self, "attention", a)
        object.__setattr__(self, "event", e)
        object.__setattr__(self, "tokens", tok)

    def __len__(self) -> int:
        return self.attention.size


@dataclass(frozen=True)
class PruneSchedule:
    layers: Tuple[int, ...] = DEFAULT_LAYERS
    gamma: Tuple[float, ...] = DEFAULT_GAMMA
    rho: Tuple[float, ...] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        layers, gamma, rho = tuple(self.layers), tuple(self.gamma), tuple(self.rho)
        if not (len(layers) == len(gamma) == len(rho)):
            raise ConfigError(f"schedule lengths differ: layers {len(layers)}, gamma {len(gamma)}, rho {len(rho)}")
        if list(layers) != sorted(set(layers)) or any(l < 1 for l in layers):
            raise ConfigError("pruning layers must be distinct, ascending and >= 1")
        if any(not 0.0 <= g <= 1.0 for g in gamma):
            raise ConfigError("gamma values must lie in [0, 1]")
        if any(not 0.0 < r <= 1.0 for r in rho):
            raise ConfigError("rho values must lie in (0, 1]")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "rho", rho)

    def __len__(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class ActiveSet:
    text_tokens: Tuple[int, ...]
    visual_tokens: Dict[int, np.ndarray] = field(default_factory=dict)  # frame -> sorted token ids
    layer: int = 0

    def counts(self) -> Dict[int, int]:
        return {f: int(v.size) for f, v in self.visual_tokens.items()}

    def n_visual(self) -> int:
        return sum(v.size for v in self.visual_tokens.values())


# --------------------------------------------------------------------------
# readout, ranks and calibration


def attention_readout(amap: AttentionMap, frame: int, tokens: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Mean over the scoring queries of the visual columns of ``frame``.

    Returns ``(token_ids, scores)`` ordered by token id. When ``tokens`` is
    given, only those tokens are read (each must be present in the map).
    """
    rows = amap.visual_index[amap.visual_index[:, 1] == frame]
    if rows.size == 0:
        raise InputDataError(f"frame {frame} has no visual tokens in the layer-{amap.layer} attention map")
    rows = rows[np.argsort(rows[:, 2], kind="stable")]
    if tokens is not None:
        tokens = np.asarray(tokens, dtype=np.int64)
        pos = np.searchsorted(rows[:, 2], tokens)
        pos = np.minimum(pos, len(rows) - 1)
        if not np.array_equal(rows[pos, 2], tokens):
            missing = np.setdiff1d(tokens, rows[:, 2])
            raise InputDataError(f"frame {frame}: tokens {missing[:5].tolist()} absent from attention map")
        rows = rows[pos]
    q = amap.scores[amap.query_set]
    return rows[:, 2].copy(), q[:, rows[:, 0]].mean(axis=0)


def rank_project(values) -> np.ndarray:
    """Zero-based ascending rank divided by ``max(N - 1, 1)``; ties take consecutive ranks by index."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    ranks[order] = np.arange(v.size, dtype=np.float64)
    return ranks / max(v.size - 1, 1)


def calibrate(scores: VisualScore, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")
    return (1.0 - gamma) * rank_project(scores.attention) + gamma * rank_project(scores.event)


def score_gap(scores: VisualScore, u: int, j: int, gamma: float) -> float:
    """Calibrated-score margin of token ``u`` over token ``j`` (positions within the frame).

    Computed from rank differences and cross-checked against the direct
    difference of calibrated scores.
    """
    ra, rm = rank_project(scores.attention), rank_project(scores.event)
    gap = (1.0 - gamma) * (ra[u] - ra[j]) + gamma * (rm[u] - rm[j])
    s = calibrate(scores, gamma)
    if abs(gap - (s[u] - s[j])) > 1e-12:
        raise InvariantViolation(f"rank gap {gap!r} disagrees with calibrated difference {s[u] - s[j]!r}")
    return float(gap)


# --------------------------------------------------------------------------
# pruning


def prune_frame(scores: VisualScore, gamma: float, rho: float) -> Tuple[np.ndarray, np.ndarray]:
    """Token ids kept for one frame and the calibrated scores they were chosen by."""
    if len(scores) == 0:
        raise InvariantViolation("frame reached a pruning layer with zero active tokens")
    s = calibrate(scores, gamma)
    keep = topk_indices(s, floor_budget(rho, len(scores)))
    return scores.tokens[keep], s


def prune_layer(
    active: ActiveSet,
    scores: Mapping[int, VisualScore],
    gamma: float,
    rho: float,
    layer: Optional[int] = None,
) -> ActiveSet:
    """Per-frame top-K on calibrated scores; text tokens pass through untouched."""
    if not 0.0 < rho <= 1.0:
        raise ConfigError(f"rho must lie in (0, 1], got {rho}")
    kept: Dict[int, np.ndarray] = {}
    for f, current in active.visual_tokens.items():
        if current.size == 0:
            raise InvariantViolation(f"frame {f} has zero active tokens before pruning")
        sc = scores.get(f)
        if sc is None:
            raise InputDataError(f"no scores supplied for frame {f}")
        if not np.array_equal(sc.tokens, current):
            raise InputDataError(f"frame {f}: scores are not aligned with the active tokens")
        kept[f], _ = prune_frame(sc, gamma, rho)
    return ActiveSet(active.text_tokens, kept, active.layer if layer is None else layer)


# --------------------------------------------------------------------------
# purified attention


def softmax_attention(queries, keys, values, d_k: Optional[int] = None, keep=None) -> Tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product attention restricted to the key indices in ``keep``.

    Returns ``(alpha, z)``; ``alpha`` has one column per kept key, in the
    order given. ``keep=None`` attends over every key.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    k = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise InputDataError(f"inconsistent shapes q{q.shape} k{k.shape} v{v.shape}")
    d = q.shape[1] if d_k is None else d_k
    if d < 1:
        raise ConfigError("d_k must be >= 1")
    idx = np.arange(k.shape[0]) if keep is None else np.asarray(keep, dtype=np.int64)
    if idx.size == 0:
        raise InputDataError("attention over an empty key set")
    logits = q @ k[idx].T / math.sqrt(d)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    alpha = w / w.sum(axis=1, keepdims=True)
    return alpha, alpha @ v[idx]


def purified_attention(queries, keys, values, retained, d_k: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Attention whose softmax denominator runs over the retained keys only."""
    retained = np.unique(np.asarray(retained, dtype=np.int64))
    return softmax_attention(queries, keys, values, d_k, keep=retained)


def active_key_positions(active: ActiveSet, visual_index: np.ndarray) -> np.ndarray:
    """Sequence positions of text tokens plus the retained visual tokens."""
    vi = np.asarray(visual_index, dtype=np.int64).reshape(-1, 3)
    keep = np.zeros(len(vi), dtype=bool)
    for f, toks in active.visual_tokens.items():
        keep |= (vi[:, 1] == f) & np.isin(vi[:, 2], toks)
    return np.union1d(np.asarray(active.text_tokens, dtype=np.int64), vi[keep, 0])


# --------------------------------------------------------------------------
# schedules


def split_ratio(final_ratio: float, n_stages: int) -> float:
    """Per-stage ratio whose ``n_stages``-fold product is ``final_ratio``."""
    if not 0.0 < final_ratio <= 1.0:
        raise ConfigError(f"final ratio must lie in (0, 1], got {final_ratio}")
    if n_stages < 1:
        raise ConfigError("need at least one stage")
    return final_ratio ** (1.0 / n_stages)


def cascade_counts(n_tokens: int, ratios: Sequence[float]) -> List[int]:
    """Token count after each stage, applying the min-1 floor stage by stage."""
    out = []
    n = n_tokens
    for r in ratios:
        n = floor_budget(r, n)
        out.append(n)
    return out


def prune_report(history: Sequence[dict]) -> str:
    """JSON text for a list of per-layer records; keys sorted for byte-stable output."""
    return json.dumps({"layers": list(history)}, sort_keys=True, indent=1)


def masks_for(active: ActiveSet, n_tokens: int) -> Dict[int, bytes]:
    """One u8-per-token mask per frame (1 = retained)."""
    out = {}
    for f, toks in sorted(active.visual_tokens.items()):
        m = np.zeros(n_tokens, dtype=np.uint8)
        m[toks] = 1
        out[f] = m.tobytes()
    return out
