"""Command-line entry points.

Subcommands: ``gen`` (synthesize a cohort), ``train`` (fit and bundle the
two-stage stack), ``eval`` (held-out report), ``sim`` (closed-loop scenario
run), ``serve`` (telemetry/override endpoint for a live run or a replay)
and ``export`` (plot-ready tables).

Exit codes: 0 success, 2 bad arguments or config, 3 missing input,
4 incompatible file version, 5 internal invariant failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_VERSION = 4
EXIT_INVARIANT = 5


def _load_cfg(args):
    from .config import load_config, desk_scale_config, StackConfig
    base = desk_scale_config() if getattr(args, "desk", False) else StackConfig()
    return load_config(getattr(args, "config", None), base=base)


def cmd_gen(args):
    from . import pipeline
    cfg = _load_cfg(args)
    out = Path(args.out)
    t0 = time.time()
    train, val = pipeline.generate_cohort(cfg, seed=args.seed, out_dir=out)
    n = sum(len(rec.t) for rec, _ in list(train.values()) + list(val.values()))
    print(f"wrote {len(train)}+{len(val)} subjects ({n} samples) to {out} "
          f"in {time.time() - t0:.1f}s")
    return EXIT_OK


def cmd_train(args):
    from . import pipeline
    from .bundle import save_bundle
    cfg = _load_cfg(args)
    t0 = time.time()
    if args.dataset:
        train, val = pipeline.load_cohort_dir(args.dataset,
                                              cfg.cohort.n_validation)
    else:
        train, val = pipeline.generate_cohort(cfg, seed=args.seed)
    bundle = pipeline.train_stack(train, val, cfg, seed=args.seed,
                                  n_jobs=args.jobs,
                                  progress=lambda m: print(f"  {m}"))
    save_bundle(bundle, args.bundle)
    print(f"bundle {bundle.fingerprint()} written to {args.bundle} "
          f"in {time.time() - t0:.1f}s")
    return EXIT_OK


def cmd_eval(args):
    from . import pipeline, evaluation
    from .bundle import load_bundle
    from .runtime import read_session_log
    cfg = _load_cfg(args)
    bundle = load_bundle(args.bundle)
    if args.dataset:
        train, val = pipeline.load_cohort_dir(args.dataset,
                                              cfg.cohort.n_validation)
    else:
        _, val = pipeline.generate_cohort(cfg, seed=args.seed)
    log = read_session_log(args.session) if args.session else None
    report = evaluation.evaluate(
        bundle, val, log,
        meta={"seed": args.seed, "bundle": bundle.fingerprint()})
    report.to_yaml(args.out)
    print(f"report written to {args.out}")
    worst = max(v["mae"] for v in report.feature_mae.values())
    print(f"worst feature MAE: {worst:.4f}; mean kinematics R^2: "
          f"{report.kin_r2_mean:.3f}")
    return EXIT_OK


def _build_loop(args, cfg, scenario):
    from .bundle import load_bundle
    from .config import RunConfig
    from .runtime import ControlLoop
    from .synth import SubjectProfile
    bundle = load_bundle(args.bundle)
    run_cfg = RunConfig(
        sensor_rate_hz=cfg.run.sensor_rate_hz,
        inference_rate_hz=cfg.run.inference_rate_hz,
        telemetry_rate_hz=cfg.run.telemetry_rate_hz,
        lockstep=args.lockstep,
        duration_s=args.duration,
        seed=args.seed,
    )
    profile = SubjectProfile("live", rng_seed=args.seed + 500)
    return ControlLoop(bundle, run_cfg, profile=profile, scenario=scenario,
                       plant_cfg=cfg.plant, mc_samples=cfg.ensemble.mc_samples)


def cmd_sim(args):
    from . import evaluation
    from .runtime import (Scenario, reference_scenario, write_session_log)
    cfg = _load_cfg(args)
    scenario = (Scenario.from_yaml(args.scenario) if args.scenario
                else reference_scenario())
    if args.duration is None:
        args.duration = scenario.duration_hint + 20.0
    loop = _build_loop(args, cfg, scenario)
    t0 = time.time()
    if args.lockstep:
        loop.run_lockstep(args.duration)
    else:
        loop.run_wallclock(args.duration)
    write_session_log(loop.ticks, args.out)
    lat = sorted(t.latency_ms for t in loop.ticks)
    p95 = lat[int(0.95 * (len(lat) - 1))] if lat else float("nan")
    segs = sorted({t.segment for t in loop.ticks})
    print(f"{len(loop.ticks)} ticks over {args.duration:.0f}s sim time "
          f"({time.time() - t0:.1f}s wall); p95 latency {p95:.1f} ms")
    print(f"segments: {', '.join(segs)}")
    print(f"log written to {args.out}")
    return EXIT_OK


def cmd_serve(args):
    from .runtime import (Scenario, reference_scenario, read_session_log,
                          serve_loop, serve_replay, write_session_log)
    if args.replay:
        log = read_session_log(args.replay)
        server, feeder = serve_replay(log, port=args.port, speed=args.speed)
        server.start()
        print(f"replaying {args.replay} ({len(log)} ticks) on port {server.port}")
        feeder.start()
        feeder.join()
        server.stop()
        return EXIT_OK
    cfg = _load_cfg(args)
    scenario = (Scenario.from_yaml(args.scenario) if args.scenario
                else reference_scenario())
    if args.duration is None:
        args.duration = scenario.duration_hint + 20.0
    loop = _build_loop(args, cfg, scenario)
    server = serve_loop(loop, port=args.port)
    server.start()
    print(f"serving live session on port {server.port}")
    try:
        if args.lockstep:
            loop.run_lockstep(args.duration, pace=args.pace)
        else:
            loop.run_wallclock(args.duration)
    finally:
        server.stop()
    if args.out:
        write_session_log(loop.ticks, args.out)
        print(f"log written to {args.out}")
    return EXIT_OK


def cmd_export(args):
    from . import pipeline, evaluation
    from .bundle import load_bundle
    from .runtime import read_session_log
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wrote = []
    if args.bundle and (args.dataset or args.traces):
        bundle = load_bundle(args.bundle)
        if args.dataset:
            train, val = pipeline.load_cohort_dir(args.dataset,
                                                  cfg.cohort.n_validation)
        else:
            _, val = pipeline.generate_cohort(cfg, seed=args.seed)
        path = out / "feature_traces.csv"
        evaluation.export_feature_traces(bundle, val, path)
        wrote.append(path)
    if args.session:
        log = read_session_log(args.session)
        path = out / "stride_kinematics.csv"
        evaluation.export_stride_kinematics(log, path)
        wrote.append(path)
    if not wrote:
        print("nothing to export: pass --bundle and/or --session", file=sys.stderr)
        return EXIT_USAGE
    for p in wrote:
        print(f"wrote {p}")
    return EXIT_OK


def _common(p, bundle=False, dataset=False):
    p.add_argument("--config", help="YAML config overriding the defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--desk", action="store_true",
                   help="start from the reduced desk-scale defaults")
    if bundle:
        p.add_argument("--bundle", required=True, help="model bundle directory")
    if dataset:
        p.add_argument("--dataset", help="generated cohort directory")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="exogait",
        description="data-driven gait-feature exoskeleton controller tools")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen", help="synthesize a cohort dataset")
    _common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train both stages and write a bundle")
    _common(p, dataset=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--jobs", type=int, default=2)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="held-out evaluation report")
    _common(p, bundle=True, dataset=True)
    p.add_argument("--session", help="closed-loop session log for power stats")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sim", help="run a closed-loop scenario")
    _common(p, bundle=True)
    p.add_argument("--scenario", help="scenario YAML (default: reference script)")
    p.add_argument("--out", required=True)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--lockstep", action="store_true", default=True)
    p.add_argument("--wallclock", dest="lockstep", action="store_false")
    p.set_defaults(fn=cmd_sim)

    p = sub.add_parser("serve", help="serve telemetry/overrides for a run or replay")
    _common(p)
    p.add_argument("--bundle")
    p.add_argument("--scenario")
    p.add_argument("--replay", help="session log to replay instead of a live run")
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--port", type=int, default=7463)
    p.add_argument("--out", help="write the session log after a live run")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--pace", type=float, default=1.0)
    p.add_argument("--lockstep", action="store_true", default=True)
    p.add_argument("--wallclock", dest="lockstep", action="store_false")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("export", help="emit plot-ready tables")
    _common(p, dataset=True)
    p.add_argument("--bundle")
    p.add_argument("--session")
    p.add_argument("--traces", action="store_true",
                   help="export feature traces from a freshly generated cohort")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "cmd", None) == "serve" and not args.replay and not args.bundle:
        print("serve needs --bundle for a live run or --replay for a log",
              file=sys.stderr)
        return EXIT_USAGE
    from .kinematics import FormatVersionError
    from .bundle import BundleVersionError, BundleError
    from .nn.serial import WeightsVersionError, WeightsError
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (BundleVersionError, FormatVersionError, WeightsVersionError) as exc:
        print(f"version mismatch: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (BundleError, WeightsError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"internal invariant failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
