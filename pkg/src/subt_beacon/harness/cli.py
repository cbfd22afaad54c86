"""Command line: ``subt-beacon sim run``, ``replay`` and ``metrics``.

Exit codes: 0 success, 1 failed metrics gate, 2 bad input (config, log or
arguments), 3 collision in some episode.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..simulator.episode import METRICS_HEADER, run_episode
from .config import ConfigError, parse_scenario, resolve_scenario
from .metrics import MetricsError, collect
from .replay import ReplayError, replay

log = logging.getLogger("subt_beacon")

EXIT_OK, EXIT_GATE, EXIT_INPUT, EXIT_COLLISION = 0, 1, 2, 3


class InputError(Exception):
    pass


def _setup_logging():
    name = os.environ.get("SUBT_BEACON_LOG", "WARNING").strip().upper()
    level = int(name) if name.isdigit() else logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def parse_seeds(text: str) -> list[int]:
    """``1,2,5-7`` -> [1, 2, 5, 6, 7]."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        lo, sep, hi = part.partition("-")
        try:
            if sep:
                seeds.extend(range(int(lo), int(hi) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise InputError(f"--seed: bad seed list '{text}'") from None
    if not seeds:
        raise InputError("--seed: empty seed list")
    return seeds


def _run_one(scenario_path: str, seed: int, out_dir: str, duration: float | None) -> tuple[int, str, bool]:
    spec = parse_scenario(scenario_path)
    if duration is not None:
        spec.duration_s = duration
    t = time.perf_counter()
    name = f"{spec.name}/seed_{seed}"
    res = run_episode(spec.episode_config(), seed, log_dir=Path(out_dir) / f"seed_{seed}", name=name)
    log.info("%s seed %d: %.1f s wall, detect %.3f", spec.name, seed, time.perf_counter() - t,
             res.metrics.detect_rate)
    return seed, res.metrics.row(name), res.collided


def cmd_sim_run(args) -> int:
    path = resolve_scenario(args.scenario)
    if not path.is_file():
        raise InputError(f"{args.scenario}: scenario file not found")
    spec = parse_scenario(path)
    seeds = parse_seeds(args.seed) if args.seed else spec.seeds
    if args.duration is not None and not args.duration > 0:
        raise InputError("--duration: must be positive")
    out = Path(args.out) if args.out else Path("runs") / spec.name
    out.mkdir(parents=True, exist_ok=True)
    jobs = max(1, min(args.jobs, len(seeds)))
    work = [(str(path), s, str(out), args.duration) for s in seeds]
    if jobs == 1:
        results = [_run_one(*w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, *zip(*work)))
    rows = [METRICS_HEADER] + [r[1] for r in results]
    text = "\n".join(rows) + "\n"
    (out / "metrics.csv").write_text(text)
    sys.stdout.write(text)
    collided = [r[0] for r in results if r[2]]
    if collided:
        print(f"collision in seed(s) {', '.join(map(str, collided))}", file=sys.stderr)
        return EXIT_COLLISION
    return EXIT_OK


def cmd_replay(args) -> int:
    spec = None
    if args.config:
        path = resolve_scenario(args.config)
        if not path.is_file():
            raise InputError(f"{args.config}: scenario file not found")
        spec = parse_scenario(path, check_world=False)
    text = replay(args.events, args.cloud, args.pose, spec, args.seed)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_metrics(args) -> int:
    if not args.dirs:
        raise InputError("metrics: no output directories given")
    report = collect(args.dirs)
    if not report.rows:
        raise InputError("metrics: no episode rows found")
    sys.stdout.write(report.text())
    failures = report.gate(args.min_detect_rate, args.max_p95_err)
    for f in failures:
        print(f"FAIL {f}", file=sys.stderr)
    return EXIT_GATE if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subt-beacon", description="Event camera + LiDAR beacon following simulator")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="simulation commands")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)
    run = sim_sub.add_parser("run", help="run a scenario for each seed")
    run.add_argument("scenario", help="scenario file or bundled scenario name")
    run.add_argument("--out", help="output directory (default runs/<scenario>)")
    run.add_argument("--seed", help="seed list overriding the scenario, e.g. 1,2,3 or 1-5")
    run.add_argument("--jobs", type=int, default=1, help="parallel episodes")
    run.add_argument("--duration", type=float, help="override the episode length in seconds")
    run.set_defaults(func=cmd_sim_run)

    rp = sub.add_parser("replay", help="rerun logged events and clouds through the detection pipeline")
    rp.add_argument("--events", required=True)
    rp.add_argument("--cloud", required=True)
    rp.add_argument("--pose", required=True)
    rp.add_argument("--out", help="detections CSV (default standard output)")
    rp.add_argument("--config", help="scenario supplying the camera and pipeline settings (default: defaults)")
    rp.add_argument("--seed", type=int, help="episode seed (default: first seed of the config)")
    rp.set_defaults(func=cmd_replay)

    met = sub.add_parser("metrics", help="aggregate metrics.csv files")
    met.add_argument("dirs", nargs="*")
    met.add_argument("--min-detect-rate", type=float)
    met.add_argument("--max-p95-err", type=float)
    met.set_defaults(func=cmd_metrics)
    return p


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ReplayError, MetricsError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
