"""Command-line entry point: ``ecprune <subcommand> [options]``.

Exit codes: 0 success, 2 config error, 3 input-data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ecprune import bias, earf, pipeline
from ecprune.attention_sim import BiasProfile, synth_biased_map
from ecprune.emsf import SaliencyMap
from ecprune.errors import ConfigError, EcpError, InputDataError
from ecprune.esim import read_frame_dir, simulate_events
from ecprune.etcs import KeyframeSet
from ecprune.events import write_events

log = logging.getLogger("ecprune")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (see --print-config)")
    p.add_argument("--out", default="ecp_out", help="output directory")
    p.add_argument("--seed", type=int, help="base seed (u64)")
    p.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    p.add_argument("--final-ratio", type=float, help="final visual-token retention in (0, 1]")
    p.add_argument("--print-config", action="store_true", help="print the resolved config with documented defaults and exit")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecprune", description="Event-guided cascade pruning of visual tokens.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-events", help="simulate DVS events from a PGM frame directory")
    _common(p)
    p.add_argument("--frames", help="frame directory (overrides frames.dir)")
    p.add_argument("--format", choices=("packed-binary", "text-csv"), default="packed-binary")

    p = sub.add_parser("sample", help="activity flux and keyframe selection")
    _common(p)
    p.add_argument("--events", help="event file (overrides events.path)")

    p = sub.add_parser("saliency", help="token saliency maps for keyframes")
    _common(p)
    p.add_argument("--events", help="event file (overrides events.path)")
    p.add_argument("--keyframes", help="keyframe manifest from `sample` (default: recompute)")

    p = sub.add_parser("prune", help="motion-saliency filtering and rank-fusion pruning from saliency maps")
    _common(p)
    p.add_argument("--saliency", required=True, help="directory of frame_*.bin saliency blocks")

    p = sub.add_parser("analyze-bias", help="peripheral-bias statistics over attention map files")
    _common(p)
    p.add_argument("--attention", required=True, help="glob of ECPATT01 files")
    p.add_argument("--compare", help="second glob; reports the correlation of per-layer mean ratios")
    p.add_argument("--margin", type=float, default=0.15)

    p = sub.add_parser("synth-attn", help="write synthetic peripheral-bias attention maps")
    _common(p)
    p.add_argument("--layers", default="0-27", help="layer list, e.g. 0-27 or 2,8,16")
    p.add_argument("--frames", type=int, default=1, help="frames per map")
    p.add_argument("--noise", type=float, help="noise half-width (overrides attention.noise_scale)")

    p = sub.add_parser("flops", help="analytical attention cost of a pruning schedule")
    _common(p)
    p.add_argument("--counts", help="comma-separated visual-token count per layer (otherwise from the schedule)")
    p.add_argument("--tokens", type=int, help="visual tokens per frame before pruning (default grid size)")
    p.add_argument("--frames", type=int, default=1)

    p = sub.add_parser("run", help="full cascade: events -> keyframes -> saliency -> pruning -> report")
    _common(p)
    p.add_argument("--events", help="event file (overrides events.path)")
    return ap


def _parse_layers(spec: str) -> List[int]:
    out: List[int] = []
    for part in spec.split(","):
        part = part.strip()
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _config(args) -> Dict:
    overrides: Dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.final_ratio is not None:
        overrides["final_ratio"] = args.final_ratio
    if getattr(args, "events", None):
        overrides.setdefault("events", {})["path"] = args.events
    if args.command == "simulate-events" and args.frames:
        overrides.setdefault("frames", {})["dir"] = args.frames
    if args.command == "synth-attn" and args.noise is not None:
        overrides.setdefault("attention", {})["noise_scale"] = args.noise
    return pipeline.load_config(args.config, overrides)


def _write_json_csv(out: Path, stem: str, doc: str, table: str) -> None:
    (out / f"{stem}.json").write_text(doc)
    (out / f"{stem}.csv").write_text(table)


def cmd_simulate(args, cfg) -> None:
    if not cfg["frames"]["dir"]:
        raise ConfigError("simulate-events needs --frames or frames.dir")
    params = pipeline.Params.from_config(cfg)
    frames = read_frame_dir(cfg["frames"]["dir"], cfg["frames"]["timestamps"])
    stream = simulate_events(frames, params.esim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = "events.bin" if args.format == "packed-binary" else "events.csv"
    write_events(stream, out / name, args.format)
    print(f"{len(stream)} events -> {out / name}")


def _sample(cfg, out: Path):
    params = pipeline.Params.from_config(cfg)
    stream, frame_times = pipeline.load_stream(cfg, params)
    profile = pipeline.activity_flux(stream, params.windowing, params.density)
    if profile.flux.sum() == 0:
        kf = pipeline.uniform_keyframes(frame_times, params.etcs.n_target, profile)
    else:
        kf = pipeline.select_keyframes(profile, params.etcs, frame_times)
    pipeline._write_activity(out / "activity.csv", profile)
    (out / "keyframes.csv").write_text(kf.to_manifest())
    return params, stream, profile, kf


def cmd_sample(args, cfg) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, _, profile, kf = _sample(cfg, out)
    print(f"{len(profile)} windows, {len(kf)} keyframes -> {out / 'keyframes.csv'}")


def cmd_saliency(args, cfg) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params, stream, profile, kf = _sample(cfg, out)
    if args.keyframes:
        kf = KeyframeSet.from_manifest(Path(args.keyframes).read_text())
    grid = pipeline.TokenGridSpec(int(cfg["grid"]["rows"]), int(cfg["grid"]["cols"]), stream.width, stream.height)
    maps = pipeline.compute_saliency(stream, kf, profile, grid, params.density, int(cfg["threads"]))
    sal = out / "saliency"
    sal.mkdir(exist_ok=True)
    for m in maps:
        (sal / f"frame_{m.frame_index:06d}.csv").write_text(m.to_csv())
        (sal / f"frame_{m.frame_index:06d}.bin").write_bytes(m.to_bytes())
    print(f"{len(maps)} saliency maps -> {sal}")


def cmd_prune(args, cfg) -> None:
    params = pipeline.Params.from_config(cfg)
    paths = sorted(Path(args.saliency).glob("frame_*.bin"))
    if not paths:
        raise InputDataError(f"no frame_*.bin saliency blocks in {args.saliency}")
    maps = []
    for p in paths:
        f, rows, cols, sal = SaliencyMap.saliency_from_bytes(p.read_bytes())
        if (rows, cols) != (cfg["grid"]["rows"], cfg["grid"]["cols"]):
            raise InputDataError(f"{p}: {rows}x{cols} grid, config says {cfg['grid']['rows']}x{cfg['grid']['cols']}")
        maps.append(SaliencyMap(np.zeros(sal.size, dtype=np.int64), sal, f, (0, 0), rows, cols))
    grid = pipeline.TokenGridSpec(rows, cols, cols, rows)
    attention = pipeline.AttentionSource(cfg, grid, int(cfg["seed"]))
    emsf_retained, history, final = pipeline.run_cascade(maps, params, attention, int(cfg["threads"]))
    kf = KeyframeSet([], [m.frame_index for m in maps], [])
    result = pipeline.PruneResult(kf, emsf_retained, history, final, rows * cols)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json_csv(out, "prune_result", result.to_json(), result.to_csv())
    print(f"final per-frame counts: {result.final_counts()}")


def cmd_analyze_bias(args, cfg) -> None:
    def per_layer(pattern: str):
        paths = sorted(glob.glob(pattern))
        if not paths:
            raise InputDataError(f"no attention maps match {pattern}")
        ratios: Dict[int, List[float]] = {}
        for p in paths:
            amap = earf.AttentionMap.read(p)
            for f in amap.frames():
                toks, mass = earf.attention_readout(amap, f)
                grid_mass = np.zeros(part.rows * part.cols)
                grid_mass[toks] = mass
                ratios.setdefault(amap.layer, []).append(bias.peripheral_ratio(grid_mass, part))
        return [bias.bias_stats(r, layer=layer) for layer, r in sorted(ratios.items())]

    part = bias.partition_regions(int(cfg["grid"]["rows"]), int(cfg["grid"]["cols"]), args.margin)
    stats = per_layer(args.attention)
    r = None
    if args.compare:
        other = {s.layer: s.mu for s in per_layer(args.compare)}
        common = [s for s in stats if s.layer in other]
        r = bias.profile_correlation([s.mu for s in common], [other[s.layer] for s in common])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json_csv(out, "bias", bias.stats_to_json(stats, r), bias.stats_to_csv(stats))
    sys.stdout.write(bias.stats_to_csv(stats))
    if r is not None:
        print(f"profile correlation r = {r:.6f}")


def cmd_synth_attn(args, cfg) -> None:
    a = cfg["attention"]
    rows, cols = int(cfg["grid"]["rows"]), int(cfg["grid"]["cols"])
    part = bias.partition_regions(rows, cols, float(a["margin_fraction"]))
    mult = a["multipliers"]
    profile = BiasProfile(tuple(mult) if mult is not None else BiasProfile().multipliers, float(a["noise_scale"]), int(cfg["seed"]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    active = {f: range(rows * cols) for f in range(args.frames)}
    layers = _parse_layers(args.layers)
    for layer in layers:
        amap = synth_biased_map(
            part, profile, layer, active=active, n_text=int(a["n_text"]),
            n_queries=int(a["n_queries"]), visual_fraction=float(a["visual_fraction"]),
        )
        amap.write(out / f"layer_{layer:02d}.ecpatt")
    print(f"{len(layers)} maps -> {out}")


def cmd_flops(args, cfg) -> None:
    n_layers, d_k = int(cfg["model"]["n_layers"]), int(cfg["model"]["d_k"])
    n_tok = args.tokens or int(cfg["grid"]["rows"]) * int(cfg["grid"]["cols"])
    full = n_tok * args.frames
    if args.counts:
        counts = [int(c) for c in args.counts.split(",")]
        report = pipeline.flops_model(counts, d_k, n_layers, None)
    else:
        params = pipeline.Params.from_config(cfg)
        stages = earf.cascade_counts(n_tok, [params.emsf_rho, *params.schedule.rho])
        per_layer = [c * args.frames for c in stages[1:]]
        counts = pipeline.layer_token_counts(stages[0] * args.frames, per_layer, params.schedule.layers, n_layers)
        report = pipeline.flops_model(counts, d_k, n_layers, [full] * n_layers)
        report.pruning = [{"stage": "emsf", "before": full, "after": stages[0] * args.frames}] + [
            {"stage": f"layer_{layer}", "before": b * args.frames, "after": c * args.frames}
            for layer, b, c in zip(params.schedule.layers, stages[:-1], stages[1:])
        ]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json_csv(out, "efficiency", json.dumps(report.to_dict(), sort_keys=True, indent=1), report.to_csv())
    print(f"attention-term ratio vs full tokens: {report.reduction_ratio:.6f}")
    print("(analytical visual-token attention model; not a measured FLOP count)")


def cmd_run(args, cfg) -> None:
    result, report = pipeline.run_pipeline(cfg, args.out, cfg["threads"])
    for name, secs in report.wall_clock_s.items():
        log.info("stage %-6s %.3fs", name, secs)
    print(f"keyframes: {result.keyframes.frame_indices}")
    print(f"final per-frame counts: {result.final_counts()}")
    print(f"attention-term ratio vs full tokens: {report.reduction_ratio:.6f}")


COMMANDS = {
    "simulate-events": cmd_simulate,
    "sample": cmd_sample,
    "saliency": cmd_saliency,
    "prune": cmd_prune,
    "analyze-bias": cmd_analyze_bias,
    "synth-attn": cmd_synth_attn,
    "flops": cmd_flops,
    "run": cmd_run,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        if args.print_config:
            print(pipeline.annotated_config(cfg))
            return 0
        COMMANDS[args.command](args, cfg)
    except EcpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputDataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
