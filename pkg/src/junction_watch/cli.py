"""Command line entry point.

Exit codes: 0 success, 2 configuration error (bad config, lens, routes,
script or arguments), 3 data error (malformed or inconsistent input data).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

from . import anomaly, pipeline, simulator
from .errors import ConfigError, DataError, OutsideCalibratedRange
from .geometry import fit_distortion, load_calibration, load_model, save_model
from .ingest import DetectionReader, load_detector_reports, rank_detectors
from .render import render_svg
from .routes import route_definitions_to_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


def _config(args) -> pipeline.PipelineConfig:
    return pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()


def _read_text(path) -> str:
    p = Path(path)
    if not p.exists():
        raise DataError(f"input file not found: {p}")
    return p.read_text()


def _open_out(path):
    return open(path, "w") if path and path != "-" else sys.stdout


def _context(args, cfg):
    lens = pipeline.resolve_lens(cfg, getattr(args, "lens", None))
    norm = pipeline.resolve_normalizer(cfg, lens)
    defs = pipeline.resolve_routes(cfg, norm, getattr(args, "routes", None))
    return lens, norm, pipeline.route_models(defs, norm)


def _load_script(args) -> simulator.ScenarioScript:
    script = simulator.load_script(args.script) if args.script else simulator.default_script()
    if args.seed is not None:
        script = replace(script, seed=args.seed)
    if getattr(args, "duration", None) is not None:
        script = replace(script, duration=args.duration)
    return script


def _write_scenario(out_dir: Path, script, output) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "detections.txt").write_text(output.stream_text())
    (out_dir / "truth.txt").write_text(output.truth.to_text())
    (out_dir / "truth.json").write_text(json.dumps(output.truth.sidecar(), indent=2, sort_keys=True) + "\n")
    simulator.save_script(script, out_dir / "script.json")


def cmd_simulate(args) -> int:
    script = _load_script(args)
    lens = load_model(args.lens) if args.lens else simulator.default_lens(script.width, script.height)
    out = Path(args.out)
    if args.suite:
        for i, sc in enumerate(simulator.seven_scenario_suite(script), 1):
            _write_scenario(out / f"scenario-{i}", sc, simulator.run_scenario(sc, lens))
            label = ", ".join(f"{inc.kind} on {inc.route_id}" for inc in sc.incidents) or "no incident"
            print(f"scenario-{i}: {label}")
    else:
        output = simulator.run_scenario(script, lens)
        _write_scenario(out, script, output)
        print(f"{len(output.truth.vehicles)} vehicles, {len(output.batches)} frames -> {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    pairs, center, order = load_calibration(args.pairs)
    if args.order is not None:
        order = args.order
    if center is None:
        center = (cfg.width / 2, cfg.height / 2)
    model = fit_distortion(pairs, center, 3 if order is None else order)
    save_model(model, args.out)
    coefs = " ".join(f"{c:.6g}" for c in model.coefficients)
    print(f"pairs {len(pairs)} order {model.order} residual_rms {model.residual_rms:.6g} px")
    print(f"K coefficients: {coefs}")
    return EXIT_OK


def _track(args, cfg, lens):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideCalibratedRange)
        reader = DetectionReader(_read_text(args.detections))
        if reader.meta.width != cfg.width or reader.meta.height != cfg.height:
            cfg = replace(cfg, width=reader.meta.width, height=reader.meta.height)
        return pipeline.track(reader, cfg, lens)


def cmd_track(args) -> int:
    cfg = _config(args)
    lens = pipeline.resolve_lens(cfg, args.lens)
    trajectories = _track(args, cfg, lens)
    out = _open_out(args.out)
    try:
        pipeline.write_trajectories(trajectories, out)
    finally:
        if out is not sys.stdout:
            out.close()
    print(f"{len(trajectories)} trajectories", file=sys.stderr)
    return EXIT_OK


def _read_trajectories(path):
    p = Path(path)
    if not p.exists():
        raise DataError(f"input file not found: {p}")
    with p.open() as fh:
        return pipeline.read_trajectories(fh)


def cmd_baseline(args) -> int:
    cfg = _config(args)
    _, norm, models = _context(args, cfg)
    classified, rejected = pipeline.classify_all(_read_trajectories(args.trajectories), models, norm)
    report = pipeline.baselines(classified, models, cfg)
    out_path = args.out or cfg.baselines
    if out_path is None:
        raise ConfigError("no baseline store given (--out or paths.baselines)")
    anomaly.save_baselines(report.baselines.values(), out_path)
    for rid, b in sorted(report.baselines.items()):
        print(f"{rid}: lowest degree {b.lowest_degree} from {b.sample_count} vehicles")
    for rid, why in sorted(report.insufficient.items()):
        print(f"{rid}: insufficient ({why})")
    if rejected:
        print(f"{len(rejected)} trajectories matched no route")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args)
    lens, norm, models = _context(args, cfg)
    store = args.baselines or cfg.baselines
    if store is None:
        raise ConfigError("no baseline store given (--baselines or paths.baselines)")
    base = anomaly.load_baselines(store)
    classified, _ = pipeline.classify_all(_track(args, cfg, lens), models, norm)
    verdicts = pipeline.detect(classified, base, models, cfg)
    out = _open_out(args.out or cfg.verdict_log)
    try:
        for v in verdicts:
            out.write(anomaly.format_verdict(v) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.svg:
        Path(args.svg).write_text(render_svg(models, classified, verdicts, title="verdicts"))
    flagged = sorted({v.route_id for v in verdicts if v.is_anomaly})
    n_anom = sum(v.is_anomaly for v in verdicts)
    print(f"{len(verdicts)} verdicts, {n_anom} anomalies on routes: {', '.join(flagged) or 'none'}", file=sys.stderr)
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = _config(args)
    _, norm, models = _context(args, cfg)
    trajectories = _read_trajectories(args.trajectories) if args.trajectories else []
    classified, _ = pipeline.classify_all(trajectories, models, norm)
    verdicts = []
    if args.verdicts:
        try:
            lines = [line for line in _read_text(args.verdicts).splitlines() if line.strip()]
            verdicts = [anomaly.parse_verdict(line) for line in lines]
        except ValueError as exc:
            raise DataError(f"{args.verdicts}: malformed verdict line: {exc}") from exc
    Path(args.out).write_text(render_svg(models, classified, verdicts))
    return EXIT_OK


def cmd_score_detector(args) -> int:
    ranked = rank_detectors(load_detector_reports(_read_text(args.report)))
    print(f"{'rank':<5}{'model':<20}{'score':>8}")
    for i, (r, s) in enumerate(ranked, 1):
        print(f"{i:<5}{r.name:<20}{s:>8.2f}")
    return EXIT_OK


def cmd_characterize(args) -> int:
    """Normal-behaviour batch: per-route degree percentiles and the IQR whiskers of degree diffs."""
    cfg = _config(args)
    script = _load_script(args)
    lens = simulator.default_lens(script.width, script.height)
    models = pipeline.route_models(script.routes, script.normalizer)
    runs = []
    t0 = time.perf_counter()
    for sc in simulator.thirty_run_scripts(script, args.runs):
        out = simulator.run_scenario(sc, lens)
        runs.append(pipeline.classify_all(pipeline.track(out.batches, cfg, lens), models, script.normalizer)[0])
    for rid, s in anomaly.characterize_normal(runs, models, cfg.error_threshold, cfg.degrees, cfg.mode).items():
        print(f"{rid}: p10 {s.p10} median {s.median} p90 {s.p90}")
    diffs = pipeline.no_incident_diffs(runs, models, cfg)
    if len(diffs) >= 4:
        lo, hi = anomaly.iqr_threshold(diffs)
        print(f"degree-diff whiskers: {lo:g} {hi:g} over {len(diffs)} samples")
    print(f"{args.runs} runs in {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return EXIT_OK


def cmd_defaults(args) -> int:
    """Write the default config, routes and scenario files into a directory."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    script = simulator.default_script()
    pipeline.save_config(pipeline.PipelineConfig(), out / "config.json")
    (out / "routes.json").write_text(json.dumps(route_definitions_to_dict(script.routes), indent=2) + "\n")
    simulator.save_script(script, out / "scenario.json")
    save_model(simulator.default_lens(), out / "lens.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="override the scenario seed")

    p = argparse.ArgumentParser(prog="junction-watch", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a scenario script")
    s.add_argument("--script", help="scenario JSON; default junction when omitted")
    s.add_argument("--lens", help="lens model JSON; default lens when omitted")
    s.add_argument("--duration", type=float, help="override the scenario duration in seconds")
    s.add_argument("--suite", action="store_true", help="write the seven-scenario incident suite")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("calibrate", parents=[common], help="fit a lens model from correspondences")
    s.add_argument("pairs", help="calibration file: 'fx fy bx by' rows")
    s.add_argument("--order", type=int, help="polynomial order of K (default 3)")
    s.add_argument("--out", required=True, help="model JSON to write")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("track", parents=[common], help="detections to bird's-eye trajectories")
    s.add_argument("detections")
    s.add_argument("--lens")
    s.add_argument("--out", help="trajectory JSON lines; stdout when omitted")
    s.set_defaults(func=cmd_track)

    s = sub.add_parser("baseline", parents=[common], help="per-route lowest degree from a day of trajectories")
    s.add_argument("trajectories")
    s.add_argument("--routes", help="routes JSON; default junction when omitted")
    s.add_argument("--out", help="baseline CSV store")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("detect", parents=[common], help="runtime anomaly verdicts for a detection stream")
    s.add_argument("detections")
    s.add_argument("--lens")
    s.add_argument("--routes")
    s.add_argument("--baselines")
    s.add_argument("--out", help="verdict log; stdout when omitted")
    s.add_argument("--svg", help="also render the classified trajectories")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("render", parents=[common], help="SVG of routes, trajectories and verdicts")
    s.add_argument("trajectories", nargs="?")
    s.add_argument("--routes")
    s.add_argument("--verdicts")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("score-detector", parents=[common], help="rank detector models by weighted score")
    s.add_argument("report", help="CSV: name,map50,map75,map95,inference_ms|inference_s")
    s.set_defaults(func=cmd_score_detector)

    s = sub.add_parser("characterize", parents=[common], help="normal-behaviour batch statistics")
    s.add_argument("--script")
    s.add_argument("--runs", type=int, default=30)
    s.add_argument("--duration", type=float)
    s.set_defaults(func=cmd_characterize)

    s = sub.add_parser("defaults", parents=[common], help="write default config, routes, scenario and lens")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_defaults)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
