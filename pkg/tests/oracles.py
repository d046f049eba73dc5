"""Brute-force reference implementations. Deliberately naive and independent of ecprune."""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def _combos(n: int, k: int) -> np.ndarray:
    return np.array(list(itertools.combinations(range(n), k)), dtype=np.int64).reshape(-1, k)


def brute_topk(values, k: int) -> tuple:
    """Exhaustive argmax over all k-subsets of the score sum.

    Near-ties (within 1e-9) are settled with exact rational sums; a remaining
    exact tie goes to the lexicographically smallest index tuple, which is
    what "prefer the lower token index" means for a set.
    """
    v = [float(x) for x in values]
    combos = _combos(len(v), k)
    sums = np.asarray(v)[combos].sum(axis=1)
    near = combos[sums >= sums.max() - 1e-9]
    exact = [sum((Fraction(v[i]) for i in c), Fraction(0)) for c in near]
    best = max(exact)
    return min(tuple(int(i) for i in c) for c, s in zip(near, exact) if s == best)


def brute_rank(values) -> list:
    """rank_i = #{j: v_j < v_i} + #{j < i: v_j == v_i}, normalised by max(N-1, 1)."""
    n = len(values)
    out = []
    for i in range(n):
        r = 0
        for j in range(n):
            if values[j] < values[i] or (values[j] == values[i] and j < i):
                r += 1
        out.append(r / max(n - 1, 1))
    return out


def brute_neighbors(ts, xs, ys, radius, t_radius) -> list:
    n = len(ts)
    out = []
    for i in range(n):
        c = 0
        for j in range(n):
            if i != j and abs(xs[i] - xs[j]) <= radius and abs(ys[i] - ys[j]) <= radius and abs(ts[i] - ts[j]) <= t_radius:
                c += 1
        out.append(c)
    return out


def brute_histogram(ts, origin, delta_t, n_windows) -> list:
    counts = [0] * n_windows
    for t in ts:
        for n in range(n_windows):
            if origin + n * delta_t <= t < origin + (n + 1) * delta_t:
                counts[n] += 1
    return counts


def naive_softmax_attention(q, k, v, d_k, keep=None):
    """Double-loop softmax; pruned keys get a -inf logit."""
    nq, nk = len(q), len(k)
    alpha = [[0.0] * nk for _ in range(nq)]
    z = []
    for a in range(nq):
        logits = []
        for b in range(nk):
            if keep is not None and b not in keep:
                logits.append(-math.inf)
            else:
                logits.append(sum(q[a][c] * k[b][c] for c in range(len(q[a]))) / math.sqrt(d_k))
        m = max(logits)
        w = [math.exp(x - m) for x in logits]
        s = math.fsum(w)
        alpha[a] = [x / s for x in w]
        z.append([math.fsum(alpha[a][b] * v[b][c] for b in range(nk)) for c in range(len(v[0]))])
    return np.array(alpha), np.array(z)


def naive_column_mean(rows, cols) -> list:
    out = []
    for c in cols:
        acc = 0.0
        for r in rows:
            acc += r[c]
        out.append(acc / len(rows))
    return out


def linear_crossings(l0, l1, t0, t1, c):
    """Times where a linear ramp from l0 to l1 crosses l0 + j*c (j >= 1), ignoring rounding."""
    out = []
    j = 1
    while l0 + j * c <= l1 + 1e-12:
        out.append(t0 + (j * c) / (l1 - l0) * (t1 - t0))
        j += 1
    return out


def etcs_reference(flux, n_target, delta_share, frame_times, window_mid):
    """Steps 1, 2 and 4 of keyframe selection with refinement disabled, by plain enumeration."""
    W = len(flux)
    budget = min(n_target, W)
    deltas = [abs(flux[n] - flux[n - 1]) for n in range(1, W)]
    k_delta = min(math.ceil(delta_share * n_target), budget, W - 1)
    # repeatedly take the best remaining candidate
    chosen = []
    pool = list(range(1, W))
    for _ in range(k_delta):
        best = None
        for n in pool:
            if best is None or deltas[n - 1] > deltas[best - 1]:
                best = n
        chosen.append(best)
        pool.remove(best)
    pool = [n for n in range(W) if n not in chosen]
    while len(chosen) < budget:
        best = None
        for n in pool:
            if best is None or flux[n] > flux[best]:
                best = n
        chosen.append(best)
        pool.remove(best)

    def nearest(t):
        best = 0
        for i, ft in enumerate(frame_times):
            if abs(ft - t) < abs(frame_times[best] - t):
                best = i
        return best

    frames = {}
    for n in sorted(chosen):
        f = nearest(window_mid(n))
        frames.setdefault(f, n)
    rest = [n for n in range(W) if n not in chosen]
    while len(frames) < budget and rest:
        best = rest[0]
        for n in rest:
            if flux[n] > flux[best]:
                best = n
        rest.remove(best)
        frames.setdefault(nearest(window_mid(best)), best)
    fs = sorted(frames)
    return [frames[f] for f in fs], fs


def dense_masked_attention(q, k, v, d_k, keep):
    """Full logit matrix with -inf on pruned columns; alpha keeps every column."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    logits = q @ k.T / math.sqrt(d_k)
    mask = np.full(k.shape[0], True)
    mask[list(keep)] = False
    logits[:, mask] = -np.inf
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    alpha = e / e.sum(axis=1, keepdims=True)
    return alpha, alpha @ v
