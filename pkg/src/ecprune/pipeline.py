"""Configuration, cascade orchestration and analytical attention-cost accounting.

The cascade runs events -> keyframe sampling -> motion-saliency filtering ->
rank-fusion pruning at each configured layer, writing every intermediate
artifact to the output directory. Given the same config and seed the written
files are byte-identical, whatever the thread count.
"""

from __future__ import annotations

import contextlib
import copy
import csv
import glob
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ecprune import earf
from ecprune.attention_sim import BiasProfile, synth_biased_map
from ecprune.bias import partition_regions
from ecprune.earf import ActiveSet, AttentionMap, PruneSchedule, VisualScore
from ecprune.emsf import SaliencyMap, TokenGridSpec, retain_topk, token_saliency
from ecprune.errors import ConfigError, EcpError, InputDataError
from ecprune.esim import EsimParams, read_frame_dir, simulate_events
from ecprune.etcs import EtcsParams, KeyframeSet, select_keyframes, uniform_keyframes
from ecprune.events import (
    ActivityProfile,
    DensityFilterParams,
    WindowingParams,
    activity_flux,
    density_filter,
    ingest_events,
    write_events,
)

log = logging.getLogger(__name__)

# multiply-adds for QK^T and AV, two FLOPs each
ATTENTION_FLOP_CONSTANT = 4

DEFAULT_CONFIG: Dict[str, Any] = {
    "seed": 0,
    "threads": 1,
    "final_ratio": None,
    "events": {"path": None, "format": "text-csv", "width": None, "height": None, "time_unit": "us"},
    "frames": {"dir": None, "timestamps": None, "times_us": None, "rate_hz": 30.0},
    "esim": {"c_pos": 0.2, "c_neg": 0.2, "t_ref_us": 0, "log_eps": 1e-3},
    "windowing": {"delta_t_us": 33_333, "origin_us": None},
    "density_filter": {"spatial_radius": 1, "temporal_radius_us": 10_000, "min_neighbors": 0},
    "etcs": {"n_target": 8, "delta_share": 0.5, "min_gap": 0, "low_activity_quantile": 0.25},
    "grid": {"rows": 12, "cols": 18},
    "emsf": {"rho": 1.0},
    "earf": {"layers": list(earf.DEFAULT_LAYERS), "gamma": list(earf.DEFAULT_GAMMA), "rho": [1.0, 1.0, 1.0]},
    "attention": {
        "source": "synthetic",
        "glob": None,
        "multipliers": None,
        "noise_scale": 0.05,
        "margin_fraction": 0.15,
        "n_text": 8,
        "n_queries": 4,
        "visual_fraction": 0.5,
    },
    "model": {"n_layers": 28, "d_k": 128},
    "timings": False,
}

CONFIG_HELP: Dict[str, str] = {
    "seed": "base seed for synthetic attention (u64)",
    "threads": "max worker threads for per-frame work; output does not depend on it",
    "final_ratio": "if set, overrides emsf.rho and earf.rho with a geometric split of this final retention",
    "events.path": "event file; if null, events are simulated from frames.dir",
    "events.format": "text-csv (t_us,x,y,p per line) or packed-binary (ECPEVT01 header)",
    "events.width": "sensor width in pixels (text-csv only; binary carries it)",
    "events.height": "sensor height in pixels (text-csv only)",
    "events.time_unit": "us, or s to read CSV timestamps as seconds (rounded half-even to us)",
    "frames.dir": "directory of P5 PGM frames plus timestamps.txt",
    "frames.timestamps": "timestamp sidecar path (default <frames.dir>/timestamps.txt)",
    "frames.times_us": "explicit RGB frame times when no frame directory is used",
    "frames.rate_hz": "frame rate used to synthesise frame times when neither of the above is set",
    "esim.c_pos": "positive log-contrast threshold",
    "esim.c_neg": "negative log-contrast threshold",
    "esim.t_ref_us": "refractory period in microseconds",
    "esim.log_eps": "epsilon added before taking ln of intensity",
    "windowing.delta_t_us": "activity window length in microseconds",
    "windowing.origin_us": "start of window 0 (default: first event / stream start)",
    "density_filter.spatial_radius": "Chebyshev neighbourhood radius in pixels",
    "density_filter.temporal_radius_us": "neighbourhood half-width in time",
    "density_filter.min_neighbors": "neighbours required to keep an event; 0 disables the filter",
    "etcs.n_target": "keyframe budget",
    "etcs.delta_share": "fraction of the budget picked by activity change rather than activity",
    "etcs.min_gap": "minimum window separation enforced by refinement; 0 disables refinement",
    "etcs.low_activity_quantile": "flux quantile below which a clustered pick counts as low activity",
    "grid.rows": "visual token rows per frame",
    "grid.cols": "visual token columns per frame",
    "emsf.rho": "fraction of tokens kept by motion-saliency filtering",
    "earf.layers": "pruning layer indices (>= 1; scores come from the layer before)",
    "earf.gamma": "event weight per pruning layer",
    "earf.rho": "fraction of active tokens kept at each pruning layer",
    "attention.source": "synthetic, or file (ECPATT01 maps matched by attention.glob)",
    "attention.glob": "glob for attention map files; the map whose layer is l-1 scores layer l",
    "attention.multipliers": "per-layer peripheral multiplier for synthetic maps (null: 3.35/5.64/2.86 by layer group)",
    "attention.noise_scale": "half-width of the uniform noise added to synthetic token masses",
    "attention.margin_fraction": "border band used to place synthetic peripheral bias",
    "attention.n_text": "text tokens appended after the visual block in synthetic maps",
    "attention.n_queries": "scoring queries (last text tokens) in synthetic maps",
    "attention.visual_fraction": "share of each synthetic attention row given to visual tokens",
    "model.n_layers": "transformer depth used by the cost model",
    "model.d_k": "key dimension used by the cost model",
    "timings": "write wall-clock per stage into efficiency.json (makes output non-reproducible)",
}


def _merge(base: Dict[str, Any], override: Dict[str, Any], path: str = "") -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key.startswith("_"):
            continue
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    return cfg


def annotated_config(cfg: Dict[str, Any]) -> str:
    """Config as JSON with a ``_help`` block describing every key and its default."""
    doc = copy.deepcopy(cfg)
    flat_defaults = _flatten(DEFAULT_CONFIG)
    doc["_help"] = {k: f"{v} (default: {json.dumps(flat_defaults[k])})" for k, v in CONFIG_HELP.items()}
    return json.dumps(doc, indent=2, sort_keys=True)


def _flatten(d: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, prefix + k + "."))
        else:
            out[prefix + k] = v
    return out


@dataclass
class Params:
    """Typed view of a config dict."""

    windowing: WindowingParams
    density: DensityFilterParams
    etcs: EtcsParams
    esim: EsimParams
    emsf_rho: float
    schedule: PruneSchedule
    final_ratio: Optional[float]

    @classmethod
    def from_config(cls, cfg: Dict[str, Any]) -> "Params":
        try:
            w, dfp, e, s = cfg["windowing"], cfg["density_filter"], cfg["etcs"], cfg["esim"]
            windowing = WindowingParams(int(w["delta_t_us"]), None if w["origin_us"] is None else int(w["origin_us"]))
            density = DensityFilterParams(
                int(dfp["spatial_radius"]), int(dfp["temporal_radius_us"]), int(dfp["min_neighbors"])
            )
            etcs = EtcsParams(int(e["n_target"]), float(e["delta_share"]), int(e["min_gap"]), float(e["low_activity_quantile"]))
            esim = EsimParams(float(s["c_pos"]), float(s["c_neg"]), int(s["t_ref_us"]), float(s["log_eps"]))
            layers = [int(v) for v in cfg["earf"]["layers"]]
            gamma = [float(v) for v in cfg["earf"]["gamma"]]
            rho = [float(v) for v in cfg["earf"]["rho"]]
            emsf_rho = float(cfg["emsf"]["rho"])
            final = cfg["final_ratio"]
            if final is not None:
                final = float(final)
                per_stage = earf.split_ratio(final, len(layers) + 1)
                emsf_rho = per_stage
                rho = [per_stage] * len(layers)
            if not 0.0 < emsf_rho <= 1.0:
                raise ConfigError(f"emsf.rho must lie in (0, 1], got {emsf_rho}")
            schedule = PruneSchedule(tuple(layers), tuple(gamma), tuple(rho))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from None
        if max(layers, default=0) >= int(cfg["model"]["n_layers"]):
            raise ConfigError("pruning layer beyond model.n_layers")
        return cls(windowing, density, etcs, esim, emsf_rho, schedule, final)


# --------------------------------------------------------------------------
# cost model


@dataclass
class EfficiencyReport:
    layer_counts: List[int]
    baseline_counts: List[int]
    layer_cost: List[float]
    baseline_cost: List[float]
    total_cost: float
    baseline_total: float
    reduction_ratio: float
    d_k: int
    pruning: List[Dict[str, int]] = field(default_factory=list)
    wall_clock_s: Dict[str, float] = field(default_factory=dict)

    def to_dict(self, timings: bool = False) -> Dict[str, Any]:
        d = {
            "d_k": self.d_k,
            "layer_counts": self.layer_counts,
            "baseline_counts": self.baseline_counts,
            "layer_attention_flops": self.layer_cost,
            "baseline_attention_flops": self.baseline_cost,
            "total_attention_flops": self.total_cost,
            "baseline_total_attention_flops": self.baseline_total,
            "reduction_ratio": self.reduction_ratio,
            "pruning": self.pruning,
            "note": "analytical visual-token attention term only (4*n^2*d_k per layer); not a measured model FLOP count",
        }
        if timings:
            d["wall_clock_s"] = self.wall_clock_s
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "tokens", "baseline_tokens", "attention_flops", "baseline_attention_flops"])
        for i, (n, b, c, bc) in enumerate(zip(self.layer_counts, self.baseline_counts, self.layer_cost, self.baseline_cost)):
            w.writerow([i, n, b, repr(c), repr(bc)])
        return buf.getvalue()


def flops_model(
    token_counts: Sequence[int],
    d_k: int,
    n_layers: Optional[int] = None,
    baseline_counts: Optional[Sequence[int]] = None,
) -> EfficiencyReport:
    """Visual-token attention cost ``4 * n**2 * d_k`` per layer against a full-token baseline.

    ``token_counts`` holds one entry per layer; a shorter list is padded with
    its last value up to ``n_layers``. The baseline defaults to the largest
    count at every layer.
    """
    counts = [int(c) for c in token_counts]
    if not counts:
        raise ConfigError("need at least one token count")
    if any(c <= 0 for c in counts):
        raise ConfigError("token counts must be positive")
    if n_layers is not None:
        if len(counts) > n_layers:
            raise ConfigError(f"{len(counts)} counts for {n_layers} layers")
        counts += [counts[-1]] * (n_layers - len(counts))
    base = [max(counts)] * len(counts) if baseline_counts is None else [int(c) for c in baseline_counts]
    if len(base) != len(counts):
        raise ConfigError("baseline and token counts differ in length")
    cost = [float(ATTENTION_FLOP_CONSTANT * c * c * d_k) for c in counts]
    bcost = [float(ATTENTION_FLOP_CONSTANT * c * c * d_k) for c in base]
    total, btotal = math.fsum(cost), math.fsum(bcost)
    return EfficiencyReport(counts, base, cost, bcost, total, btotal, total / btotal, d_k)


def layer_token_counts(n_after_emsf: int, schedule_counts: Sequence[int], layers: Sequence[int], n_layers: int) -> List[int]:
    """Visual tokens seen by each layer: EMSF output until the first pruning layer, then each pruned count."""
    out = []
    current = n_after_emsf
    pending = dict(zip(layers, schedule_counts))
    for layer in range(n_layers):
        if layer in pending:
            current = pending[layer]
        out.append(current)
    return out


# --------------------------------------------------------------------------
# stages


@contextlib.contextmanager
def stage(name: str, source: str, clock: Dict[str, float]):
    t0 = time.perf_counter()
    try:
        yield
    except EcpError as exc:
        raise type(exc)(f"[{name}] {source}: {exc}") from exc
    finally:
        clock[name] = time.perf_counter() - t0


def load_stream(cfg: Dict[str, Any], params: Params):
    """Event stream and RGB frame times from the config."""
    ev, fr = cfg["events"], cfg["frames"]
    frame_times = None
    frames = None
    if fr["dir"]:
        frames = read_frame_dir(fr["dir"], fr["timestamps"])
        frame_times = frames.timestamps.tolist()
    if ev["path"]:
        stream = ingest_events(ev["path"], ev["format"], ev["width"], ev["height"], ev["time_unit"])
    elif frames is not None:
        stream = simulate_events(frames, params.esim)
    else:
        raise ConfigError("set events.path or frames.dir")
    if frame_times is None:
        if fr["times_us"]:
            frame_times = [int(t) for t in fr["times_us"]]
        else:
            rate = float(fr["rate_hz"])
            if rate <= 0:
                raise ConfigError("frames.rate_hz must be positive")
            step = 1e6 / rate
            n = int(math.floor((stream.t_end - stream.t_start) / step)) + 1
            frame_times = [stream.t_start + int(round(k * step)) for k in range(n)]
    return stream, frame_times


@dataclass
class PruneResult:
    keyframes: KeyframeSet
    emsf_retained: Dict[int, np.ndarray]
    history: List[Dict[str, Any]]
    final: ActiveSet
    n_tokens: int

    def final_counts(self) -> Dict[int, int]:
        return self.final.counts()

    def to_json(self) -> str:
        return json.dumps(
            {
                "n_tokens_per_frame": self.n_tokens,
                "keyframes": [
                    {"frame_index": f, "window_index": w, "frame_time_us": t}
                    for f, w, t in zip(self.keyframes.frame_indices, self.keyframes.window_indices, self.keyframes.frame_times)
                ],
                "emsf": {str(f): v.tolist() for f, v in sorted(self.emsf_retained.items())},
                "layers": self.history,
                "final": {str(f): v.tolist() for f, v in sorted(self.final.visual_tokens.items())},
            },
            sort_keys=True,
            indent=1,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "layer", "frame_index", "tokens_before", "tokens_after", "gamma", "rho"])
        for f, v in sorted(self.emsf_retained.items()):
            w.writerow(["emsf", 0, f, self.n_tokens, v.size, "", ""])
        for rec in self.history:
            for fr in rec["frames"]:
                w.writerow(["earf", rec["layer"], fr["frame_index"], fr["tokens_before"], fr["budget"], rec["gamma"], rec["rho"]])
        return buf.getvalue()


class AttentionSource:
    """Scoring maps for each pruning layer, synthetic or read from ECPATT01 files."""

    def __init__(self, cfg: Dict[str, Any], grid: TokenGridSpec, seed: int):
        a = cfg["attention"]
        self.kind = a["source"]
        self.seed = seed
        self.cfg = a
        if self.kind == "synthetic":
            mult = a["multipliers"]
            self.profile = BiasProfile(
                tuple(mult) if mult is not None else BiasProfile().multipliers, float(a["noise_scale"]), seed
            )
            self.partition = partition_regions(grid.rows, grid.cols, float(a["margin_fraction"]))
        elif self.kind == "file":
            if not a["glob"]:
                raise ConfigError("attention.source=file needs attention.glob")
            paths = sorted(glob.glob(a["glob"]))
            if not paths:
                raise InputDataError(f"no attention maps match {a['glob']}")
            self.maps: Dict[int, AttentionMap] = {}
            for p in paths:
                m = AttentionMap.read(p)
                self.maps[m.layer] = m
        else:
            raise ConfigError(f"attention.source must be synthetic or file, got {self.kind!r}")

    def map_for(self, layer: int, active: ActiveSet) -> AttentionMap:
        if self.kind == "synthetic":
            return synth_biased_map(
                self.partition,
                self.profile,
                layer - 1,
                seed=self.seed,
                active=active.visual_tokens,
                n_text=int(self.cfg["n_text"]),
                n_queries=int(self.cfg["n_queries"]),
                visual_fraction=float(self.cfg["visual_fraction"]),
            )
        m = self.maps.get(layer - 1)
        if m is None:
            raise InputDataError(f"no attention map for layer {layer - 1} (needed to prune layer {layer})")
        return m


def compute_saliency(stream, keyframes: KeyframeSet, profile: ActivityProfile, grid: TokenGridSpec, density, threads: int) -> List[SaliencyMap]:
    filtered = density_filter(stream, density)
    dt = profile.windowing.delta_t

    def one(i: int) -> SaliencyMap:
        a = profile.window_start(keyframes.window_indices[i])
        return token_saliency(filtered, grid, (a, a + dt), frame_index=keyframes.frame_indices[i], prefiltered=True)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(one, range(len(keyframes))))


def run_cascade(
    maps: Sequence[SaliencyMap],
    params: Params,
    attention: AttentionSource,
    threads: int = 1,
):
    """EMSF retention followed by every EARF layer; returns ``(emsf_retained, history, active)``."""
    emsf_retained = {m.frame_index: retain_topk(m, params.emsf_rho).indices for m in maps}
    saliency = {m.frame_index: m.saliency for m in maps}
    active = ActiveSet(tuple(), dict(emsf_retained), layer=0)
    history = []
    sched = params.schedule
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for layer, gamma, rho in zip(sched.layers, sched.gamma, sched.rho):
            amap = attention.map_for(layer, active)

            def one(item):
                f, toks = item
                tok_ids, att = earf.attention_readout(amap, f, toks)
                vs = VisualScore(att, saliency[f][tok_ids], tok_ids)
                kept, s = earf.prune_frame(vs, gamma, rho)
                return f, toks, kept, s

            results = list(pool.map(one, sorted(active.visual_tokens.items())))
            frames_rec = []
            kept_by_frame = {}
            for f, toks, kept, s in results:
                kept_by_frame[f] = kept
                kept_mask = np.isin(toks, kept)
                frames_rec.append(
                    {
                        "frame_index": f,
                        "tokens_before": int(toks.size),
                        "budget": int(kept.size),
                        "retained": kept.tolist(),
                        "score_mean_kept": float(s[kept_mask].mean()),
                        "score_mean_dropped": float(s[~kept_mask].mean()) if (~kept_mask).any() else None,
                    }
                )
            active = ActiveSet(active.text_tokens, kept_by_frame, layer)
            history.append({"layer": layer, "gamma": gamma, "rho": rho, "frames": frames_rec})
    return emsf_retained, history, active


def run_pipeline(cfg: Dict[str, Any], out_dir, threads: Optional[int] = None):
    """Full cascade; writes artifacts into ``out_dir`` and returns ``(PruneResult, EfficiencyReport)``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = int(cfg["threads"] if threads is None else threads)
    clock: Dict[str, float] = {}
    params = Params.from_config(cfg)
    if params.final_ratio is not None and params.final_ratio * cfg["grid"]["rows"] * cfg["grid"]["cols"] < 1:
        log.warning("final ratio %.4g keeps under one token per frame; the min-1 floor takes over", params.final_ratio)

    src = cfg["events"]["path"] or cfg["frames"]["dir"] or "<none>"
    with stage("events", str(src), clock):
        stream, frame_times = load_stream(cfg, params)
        write_events(stream, out / "events.bin")

    with stage("etcs", str(src), clock):
        profile = activity_flux(stream, params.windowing, params.density)
        if profile.flux.sum() == 0:
            log.info("no events after filtering; falling back to uniform frame sampling")
            keyframes = uniform_keyframes(frame_times, params.etcs.n_target, profile)
        else:
            keyframes = select_keyframes(profile, params.etcs, frame_times)
        _write_activity(out / "activity.csv", profile)
        (out / "keyframes.csv").write_text(keyframes.to_manifest())

    grid = TokenGridSpec(int(cfg["grid"]["rows"]), int(cfg["grid"]["cols"]), stream.width, stream.height)
    with stage("emsf", "keyframes.csv", clock):
        maps = compute_saliency(stream, keyframes, profile, grid, params.density, threads)
        sal_dir = out / "saliency"
        sal_dir.mkdir(exist_ok=True)
        for m in maps:
            (sal_dir / f"frame_{m.frame_index:06d}.csv").write_text(m.to_csv())
            (sal_dir / f"frame_{m.frame_index:06d}.bin").write_bytes(m.to_bytes())

    with stage("earf", str(cfg["attention"]["glob"] or "synthetic"), clock):
        attention = AttentionSource(cfg, grid, int(cfg["seed"]))
        emsf_retained, history, final = run_cascade(maps, params, attention, threads)
        result = PruneResult(keyframes, emsf_retained, history, final, grid.n_tokens)
        (out / "prune_result.json").write_text(result.to_json())
        (out / "prune_result.csv").write_text(result.to_csv())
        mask_dir = out / "masks"
        mask_dir.mkdir(exist_ok=True)
        for rec in history:
            act = ActiveSet((), {fr["frame_index"]: np.asarray(fr["retained"], dtype=np.int64) for fr in rec["frames"]})
            for f, blob in earf.masks_for(act, grid.n_tokens).items():
                (mask_dir / f"layer_{rec['layer']:02d}_frame_{f:06d}.u8").write_bytes(blob)

    with stage("flops", "prune_result", clock):
        n_frames = len(keyframes)
        n_emsf = sum(v.size for v in emsf_retained.values())
        per_layer = [sum(fr["budget"] for fr in rec["frames"]) for rec in history]
        n_layers = int(cfg["model"]["n_layers"])
        counts = layer_token_counts(n_emsf, per_layer, params.schedule.layers, n_layers)
        report = flops_model(counts, int(cfg["model"]["d_k"]), n_layers, [grid.n_tokens * n_frames] * n_layers)
        report.pruning = [{"stage": "emsf", "before": grid.n_tokens * n_frames, "after": n_emsf}] + [
            {"stage": f"layer_{rec['layer']}", "before": sum(fr["tokens_before"] for fr in rec["frames"]), "after": c}
            for rec, c in zip(history, per_layer)
        ]
    report.wall_clock_s = dict(clock)
    (out / "efficiency.json").write_text(json.dumps(report.to_dict(bool(cfg["timings"])), sort_keys=True, indent=1))
    (out / "efficiency.csv").write_text(report.to_csv())
    resolved = copy.deepcopy(cfg)
    resolved["threads"] = None  # not part of the result
    (out / "config.json").write_text(json.dumps(resolved, sort_keys=True, indent=1))
    return result, report


def _write_activity(path: Path, profile: ActivityProfile) -> None:
    buf = io.StringIO()
    buf.write("window,start_us,flux,delta\n")
    for n, s in enumerate(profile.flux.tolist()):
        d = "" if n == 0 else repr(float(profile.deltas[n - 1]))
        buf.write(f"{n},{profile.window_start(n)},{s!r},{d}\n")
    path.write_text(buf.getvalue())
