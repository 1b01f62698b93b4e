"""Command-line interface: simulate | analyze | map, plus ringcheck and repro.

Exit codes: 0 success, 2 usage or validation error, 1 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import formats, gridsim, powermap, rmt, windows
from .config import THREADS_ENV, RunConfig, config_hash, load_config, merge, resolve_threads
from .errors import IoError, RingLawError, ValidationError, WindowError, ZeroVarianceRow

SPECTRUM_DEFAULT_TIMES = (300, 301)


def _read(path) -> str:
    if path in (None, "-"):
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _emit(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _topology(args) -> gridsim.GridTopology:
    return gridsim.load_topology(getattr(args, "topology", None) or gridsim.BUILTIN)


def _base_config(args) -> RunConfig:
    """Config file values; thread count precedence is flag, then $RINGLAW_THREADS, then file."""
    cfg = load_config(getattr(args, "config", None))
    flag = getattr(args, "threads", None)
    if flag is not None or os.environ.get(THREADS_ENV):
        cfg = replace(cfg, threads=resolve_threads(flag))
    return cfg


def _parse_times(spec: str) -> list:
    out = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            a, b = part.split(":", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return out


# -- simulate ---------------------------------------------------------------


def simulate_text(topo, script, script_id: str, cfg: RunConfig) -> str:
    stream = gridsim.simulate(topo, script, cfg.sim)
    eff = cfg.effective("sim")
    eff["script"] = script_id
    meta = {"command": "simulate", "config_hash": config_hash(eff), "seed": cfg.sim.seed, "config": eff}
    return gridsim.format_stream(stream, formats.provenance_line(meta)[2:])


def _script_id(script: gridsim.EventScript) -> str:
    parts = []
    for bus in sorted(script.entries):
        for s in script.entries[bus]:
            parts.append(f"{bus}:{s.t_start}-{s.t_end}:{s.kind}:{s.a!r}:{s.b!r}")
    return ";".join(parts) or "empty"


def cmd_simulate(args) -> int:
    cfg = merge(
        _base_config(args),
        {
            "sim": {
                "seed": args.seed,
                "duration": args.duration,
                "noise_sigma": args.noise_sigma,
                "attenuation": args.attenuation,
                "gain": args.gain,
                "base_voltage": args.base_voltage,
            }
        },
    )
    topo = _topology(args)
    script = gridsim.load_script(args.script or "builtin:bus22")
    _emit(simulate_text(topo, script, _script_id(script), cfg), args.output)
    return 0


# -- analyze ----------------------------------------------------------------


def _drop(stream, topo, names):
    for name in names or ():
        if name not in topo.partitions:
            raise ValidationError(f"unknown partition {name!r}; have {sorted(topo.partitions)}")
        stream = stream.without([b for b in topo.partitions[name] if b in stream.bus_ids])
    return stream


def analyze_stream(stream, topo, cfg: RunConfig, dropped=(), start=None, stop=None, upstream=None):
    """Run the window engine; returns (series list, series CSV text, provenance dict)."""
    present = set(stream.bus_ids)
    parts = {k: v for k, v in topo.partitions.items() if k not in dropped and any(b in present for b in v)}
    wcfg = replace(cfg.window, partitions=parts, threads=cfg.threads)
    series = windows.msr_series(stream, wcfg, start=start, stop=stop)
    eff = cfg.effective("window")
    eff["dropped"] = sorted(dropped)
    meta = {"command": "analyze", "config_hash": config_hash(eff), "seed": wcfg.seed, "config": eff}
    if upstream:
        meta["upstream"] = {k: upstream[k] for k in ("config_hash", "seed") if k in upstream}
    return series, formats.format_series(series, meta), meta


def spectrum_dump(stream, cfg: RunConfig, t: int):
    wcfg = cfg.window
    res = windows.analyze_window(windows.window_at(stream, t, wcfg), wcfg, windows.GRID)
    params = rmt.RingParams(len(stream.bus_ids), wcfg.window_len, wcfg.factors)
    eff = cfg.effective("window")
    meta = {
        "command": "analyze",
        "kind": "spectrum",
        "time": int(t),
        "config_hash": config_hash(eff),
        "seed": wcfg.seed,
        "msr": res.msr,
        "conformance": res.conformance.as_dict(),
    }
    return res, params, formats.format_spectrum(res.spectrum, meta)


def _window_overrides(args) -> dict:
    return {
        "window": {
            "window_len": args.window,
            "hop": args.hop,
            "factors": args.factors,
            "seed": args.seed,
            "normalize": args.normalize,
            "tol": args.tol,
            "jitter": True if args.jitter else None,
        }
    }


def cmd_analyze(args) -> int:
    cfg = merge(_base_config(args), _window_overrides(args))
    text = _read(args.input)
    stream = gridsim.parse_stream(text, args.input or "<stdin>")
    upstream = formats.read_provenance(text)
    topo = _topology(args)
    stream = _drop(stream, topo, args.drop_partition)
    series, out, _ = analyze_stream(
        stream, topo, cfg, tuple(args.drop_partition or ()), args.start, args.stop, upstream
    )
    dumps = []
    if args.dump_spectrum:
        sdir = Path(args.spectrum_dir)
        sdir.mkdir(parents=True, exist_ok=True)
        for t in args.dump_spectrum:
            res, params, body = spectrum_dump(stream, cfg, t)
            _emit(body, sdir / f"spectrum_t{t:05d}.csv")
            dumps.append((t, res, params))
    if args.figures:
        from . import plotting

        fdir = Path(args.figures)
        fdir.mkdir(parents=True, exist_ok=True)
        grid = series[0]
        ev = windows.event_onsets(windows.detect_events(grid)) if len(grid) > 50 else []
        plotting.plot_msr_series(series, fdir / "msr_series.png", ev)
        for t, res, params in dumps:
            plotting.plot_ring(res.spectrum, params, fdir / f"ring_t{t:05d}.png", f"t = {t} s")
    _emit(out, args.output)
    return 0


# -- map --------------------------------------------------------------------


def map_frames(quantity, series, stream, topo, spec, times, missing, threads=1):
    source = series if quantity == "msr" else stream
    return powermap.build_frames(source, topo, spec, times, quantity, missing, threads)


def _map_provenance(spec: powermap.MapSpec, quantity: str, seed, missing) -> dict:
    eff = {"map": {k: v for k, v in vars(spec).items() if k != "bbox"}, "quantity": quantity, "missing": sorted(missing)}
    return {"command": "map", "config_hash": config_hash(eff), "seed": seed}


def cmd_map(args) -> int:
    cfg = merge(
        _base_config(args),
        {"map": {"width": args.width, "height": args.height, "idw_power": args.idw_power, "neighbors": args.neighbors}},
    )
    quantities = args.quantity or ["msr"]
    topo = _topology(args)
    series = stream = None
    # each quantity records the seed of the file it was computed from
    seeds = {}
    series_src = args.series
    if series_src is None and args.stream is None:
        series_src = "-"
    if series_src is not None:
        text = _read(series_src)
        series = formats.parse_series(text, series_src)
        seeds["msr"] = formats.read_provenance(text).get("seed")
    if args.stream is not None:
        text = _read(args.stream)
        stream = gridsim.parse_stream(text, args.stream)
        seeds["voltage"] = formats.read_provenance(text).get("seed")
    if "msr" in quantities and series is None:
        raise ValidationError("msr frames need --series")
    if "voltage" in quantities and stream is None:
        raise ValidationError("voltage frames need --stream")

    if args.all_times:
        times = series[0].times.tolist() if series is not None else stream.times.tolist()
    elif args.times:
        times = _parse_times(args.times)
    else:
        times = list(powermap.KEY_FRAMES)
    missing = tuple(args.drop_partition or ())
    for name in missing:
        if name not in topo.partitions:
            raise ValidationError(f"unknown partition {name!r}")
    spec = cfg.map
    written = []
    for q in quantities:
        frames = map_frames(q, series, stream, topo, spec, times, missing, cfg.threads)
        prov = _map_provenance(spec, q, seeds.get(q), missing)
        written += powermap.write_frames(frames, args.out, provenance=prov)
        if args.figures and frames:
            from . import plotting

            plotting.plot_frames(frames, powermap.shared_range(frames), Path(args.out) / f"{q}_frames.png")
    print(f"wrote {len(written) // 2} frames to {args.out}", file=sys.stderr)
    return 0


# -- ringcheck --------------------------------------------------------------


def cmd_ringcheck(args) -> int:
    if args.n < 2 or args.t < 1 or args.n > args.t:
        raise ValidationError(f"need 2 <= n <= t, got n={args.n}, t={args.t}")
    if args.l < 1 or args.trials < 1:
        raise ValidationError("l and trials must be >= 1")
    rep = rmt.ring_check(
        args.n, args.t, args.l, args.trials, args.seed, args.tol, args.normalize, keep_first=bool(args.figure)
    )
    first = rep.pop("first_spectrum", None)
    print(f"ring check: N={rep['n']} T={rep['t']} L={rep['factors']} c={rep['ratio']:.4f} trials={rep['trials']}")
    print(f"  inner radius       {rep['inner_radius']:.4f}")
    print(f"  outer radius       {rep['outer_radius']:.4f}")
    print(f"  expected MSR       {rep['expected_msr']:.4f}")
    print(f"  mean MSR           {rep['msr_mean']:.4f} +/- {rep['msr_std']:.4f}")
    print(f"  annulus fraction   {rep['annulus_fraction']:.4f} (tol {rep['tol']})")
    if args.json:
        _emit(json.dumps(rep, indent=2, sort_keys=True) + "\n", args.json)
    if args.figure:
        from . import plotting

        plotting.plot_ring(first, rmt.RingParams(args.n, args.t, args.l), args.figure, f"N={args.n}, T={args.t}, L={args.l}")
    return 0


# -- repro ------------------------------------------------------------------


def run_repro(out, seed: int, cfg: RunConfig, figures: bool = True, stop=None) -> dict:
    """Bus-22 case study end to end: stream, MSR series with and without A2, spectra, frames."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(cfg, sim=replace(cfg.sim, seed=seed), window=replace(cfg.window, seed=seed))
    topo = gridsim.load_topology()
    script = gridsim.load_script("builtin:bus22")
    stream_text = simulate_text(topo, script, _script_id(script), cfg)
    (out / "stream.csv").write_text(stream_text)
    stream = gridsim.parse_stream(stream_text)
    upstream = formats.read_provenance(stream_text)

    summary = {"seed": seed}
    runs = {"full": (), "noA2": ("A2",)}
    spec = cfg.map
    for tag, dropped in runs.items():
        s = _drop(stream, topo, dropped)
        series, text, _ = analyze_stream(s, topo, cfg, dropped, stop=stop, upstream=upstream)
        name = "series.csv" if tag == "full" else f"series_{tag}.csv"
        (out / name).write_text(text)
        series = formats.parse_series(text)
        grid = series[0]
        onsets = windows.event_onsets(windows.detect_events(grid))
        info = {"onsets": [[e.time, e.severity] for e in onsets]}
        if onsets:
            info["recovery_samples"] = windows.recovery_time(grid, onsets[0].time)

        sdir = out / "spectra" / tag
        sdir.mkdir(parents=True, exist_ok=True)
        dumps = []
        for t in SPECTRUM_DEFAULT_TIMES:
            res, params, body = spectrum_dump(s, cfg, t)
            (sdir / f"spectrum_t{t:05d}.csv").write_text(body)
            info[f"conformance_t{t}"] = res.conformance.fraction
            info[f"msr_t{t}"] = res.msr
            dumps.append((t, res, params))

        times = [t for t in powermap.KEY_FRAMES if stop is None or t <= stop]
        fdir = out / "frames" / tag
        frames = {}
        for q in powermap.QUANTITIES:
            fr = map_frames(q, series, stream, topo, spec, times, dropped, cfg.threads)
            powermap.write_frames(fr, fdir, provenance=_map_provenance(spec, q, seed, dropped))
            frames[q] = fr
        if len(times) >= 2 and times[:2] == [300, 301]:
            contrast = {}
            for q, fr in frames.items():
                contrast[q] = powermap.frame_l1_change(fr[0], fr[1], powermap.shared_range(fr))
            contrast["voltage_abs_pu"] = float(np.mean(np.abs(frames["voltage"][1].values - frames["voltage"][0].values)))
            info["contrast_300_301"] = contrast
        summary[tag] = info

        if figures:
            from . import plotting

            gdir = out / "figures"
            gdir.mkdir(exist_ok=True)
            plotting.plot_msr_series(series, gdir / f"msr_series_{tag}.png", onsets)
            for t, res, params in dumps:
                plotting.plot_ring(res.spectrum, params, gdir / f"ring_{tag}_t{t:05d}.png", f"t = {t} s")
            for q, fr in frames.items():
                if fr:
                    plotting.plot_frames(fr, powermap.shared_range(fr), gdir / f"powermap_{q}_{tag}.png", f"{q} ({tag})")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_repro(args) -> int:
    cfg = merge(_base_config(args), {"window": {"factors": args.factors}})
    summary = run_repro(args.out, args.seed, cfg, figures=not args.no_figures, stop=args.stop)
    for tag in ("full", "noA2"):
        info = summary[tag]
        first = info["onsets"][0][0] if info["onsets"] else None
        print(
            f"{tag:5s} first event t={first}  conformance 300->301: "
            f"{info['conformance_t300']:.3f} -> {info['conformance_t301']:.3f}"
        )
    print(f"outputs in {args.out}")
    return 0


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ringlaw", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML config file with window/sim/map sections")
    p.add_argument("--threads", type=int, help="worker threads (default: $RINGLAW_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    def topo_args(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--builtin-118", action="store_true", help="bundled IEEE 118-bus topology (default)")
        g.add_argument("--topology", help="topology file with [buses] and [lines] sections")

    sp = sub.add_parser("simulate", help="generate a synthetic voltage stream (CSV)")
    topo_args(sp)
    sp.add_argument("--script", help="event script file, 'builtin:bus22' (default) or 'none'")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--duration", type=int)
    sp.add_argument("--noise-sigma", type=float)
    sp.add_argument("--attenuation", type=float)
    sp.add_argument("--gain", type=float)
    sp.add_argument("--base-voltage", type=float)
    sp.add_argument("-o", "--output", default="-")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="MSR series of a stream (CSV)")
    sp.add_argument("input", nargs="?", default="-")
    topo_args(sp)
    sp.add_argument("--window", type=int, help="window length T in samples")
    sp.add_argument("--hop", type=int)
    sp.add_argument("--factors", "-l", type=int, help="number of product factors L")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--normalize", choices=("column", "row"))
    sp.add_argument("--tol", type=float, help="annulus tolerance for conformance")
    sp.add_argument("--jitter", action="store_true", help="jitter constant rows instead of failing")
    sp.add_argument("--start", type=int)
    sp.add_argument("--stop", type=int)
    sp.add_argument("--drop-partition", action="append", metavar="NAME")
    sp.add_argument("--dump-spectrum", action="append", type=int, metavar="T")
    sp.add_argument("--spectrum-dir", default=".")
    sp.add_argument("--figures", metavar="DIR", help="also write PNG figures here")
    sp.add_argument("-o", "--output", default="-")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("map", help="power-map frames (JSON + PGM)")
    topo_args(sp)
    sp.add_argument("--series", help="MSR series CSV ('-' for stdin)")
    sp.add_argument("--stream", help="voltage stream CSV ('-' for stdin)")
    sp.add_argument("--quantity", action="append", choices=powermap.QUANTITIES)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--times", help="comma list of times, ranges as a:b")
    g.add_argument("--key-frames", action="store_true", help="t = 300, 301, 302, 420, 820, 826 (default)")
    g.add_argument("--all-times", action="store_true")
    sp.add_argument("--drop-partition", action="append", metavar="NAME")
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.add_argument("--idw-power", type=float)
    sp.add_argument("--neighbors", type=int)
    sp.add_argument("--figures", action="store_true", help="also write a PNG montage per quantity")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("ringcheck", help="Monte Carlo check of the ring law")
    sp.add_argument("-n", type=int, default=400)
    sp.add_argument("-t", type=int, default=1000)
    sp.add_argument("-l", type=int, default=1)
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=0.05)
    sp.add_argument("--normalize", choices=("column", "row"), default="column")
    sp.add_argument("--json", metavar="PATH", help="write the report as JSON ('-' for stdout)")
    sp.add_argument("--figure", metavar="PNG", help="plot one trial's spectrum")
    sp.set_defaults(func=cmd_ringcheck)

    sp = sub.add_parser("repro", help="run the full 118-bus case study")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--out", default="repro_out")
    sp.add_argument("--factors", "-l", type=int)
    sp.add_argument("--stop", type=int, help="last analysis time (default: end of stream)")
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WindowError as exc:
        hint = " (constant measurements can be rescued with --jitter)" if isinstance(exc.cause, ZeroVarianceRow) else ""
        print(f"ringlaw: error: {exc}{hint}", file=sys.stderr)
        return 2 if isinstance(exc.cause, ValidationError) else 1
    except (ValidationError, IoError) as exc:
        print(f"ringlaw: error: {exc}", file=sys.stderr)
        return 2
    except (RingLawError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"ringlaw: numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
