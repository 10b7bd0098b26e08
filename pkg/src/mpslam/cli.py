"""Command-line entry point.

Subcommands:

``run <config>``
    Execute the configured Monte-Carlo experiment and write artifacts.
``validate <config>``
    Print the fully-resolved config (defaults included) and all range or
    geometry diagnostics; exits nonzero if any check fails.
``simulate <config>``
    Write only the scenario's measurement stream as CSV.
``bench``
    Time the inner-loop kernels on the compiled and the numpy backend.

The output directory comes from ``output.directory``, optionally
reparented by the ``MPSLAM_OUTPUT_ROOT`` environment variable or replaced
by ``--output``.
"""

from __future__ import annotations

import argparse
import os
import sys
from time import perf_counter
from typing import List, Optional

import numpy as np

from .config import ConfigError, format_config, load, validate
from .experiment import output_directory, run_experiment, write_measurement_csv
from .geometry import GeometryError
from .simulator import scenario_from_config


def _load(path: str):
    try:
        return load(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path!r}: {exc.strerror}") from None


def _diagnostics(cfg) -> List[str]:
    """Schema-range checks plus a scenario construction dry run."""
    errors = list(validate(cfg))
    if not errors:
        try:
            scenario_from_config(cfg)
        except (GeometryError, ValueError) as exc:
            errors.append(f"scenario: {exc}")
    return errors


def _cmd_validate(args) -> int:
    cfg = _load(args.config)
    sys.stdout.write(format_config(cfg))
    errors = _diagnostics(cfg)
    for err in errors:
        print(f"error: {err}", file=sys.stderr)
    if not errors:
        print("config ok")
    return 1 if errors else 0


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    errors = _diagnostics(cfg)
    if errors:
        for err in errors:
            print(f"error: {err}", file=sys.stderr)
        return 1
    out = output_directory(cfg, args.output)
    summary = run_experiment(cfg, out)
    for alg, agg in summary["algorithms"].items():
        print(
            f"{alg}: {agg['runs']} runs, lost {agg['lost']} "
            f"({100.0 * agg['lost_rate']:.1f}%), "
            f"mean step {1e3 * agg['mean_step_seconds']:.1f} ms"
        )
    for name, ratio in summary["comparisons"].items():
        print(f"{name}: {ratio:.2f}")
    print(f"artifacts in {out}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = _load(args.config)
    errors = _diagnostics(cfg)
    if errors:
        for err in errors:
            print(f"error: {err}", file=sys.stderr)
        return 1
    out = output_directory(cfg, args.output)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "measurements.csv")
    rows = write_measurement_csv(cfg, path)
    print(f"{rows} measurements in {path}")
    return 0


def _bench_da(impl, beta, xi, repeat: int) -> float:
    t0 = perf_counter()
    for _ in range(repeat):
        impl.da_messages(beta, xi, 200, 1e-8, 0.0)
    return (perf_counter() - t0) / repeat


def _bench_weights(impl, args_tuple, repeat: int) -> float:
    t0 = perf_counter()
    for _ in range(repeat):
        impl.particle_log_weights(*args_tuple)
    return (perf_counter() - t0) / repeat


def _cmd_bench(args) -> int:
    from .kernels import BACKEND, _fallback

    try:
        from .kernels import _core
    except ImportError:
        _core = None
    rng = np.random.default_rng(0)

    beta = rng.uniform(0.1, 2.0, size=(8, 11))
    xi = rng.uniform(0.5, 1.5, size=10)
    n = args.particles
    states = rng.uniform(0.0, 6.0, size=(n, 5))
    centers = rng.uniform(0.0, 6.0, size=(4, 2))
    pts = centers[:, None, :] + 0.1 * rng.standard_normal((4, 5, 2))
    wm = np.full(5, 1.0 / 6.0)
    wm[0] = 1.0 / 3.0
    wc = wm.copy()
    wc[0] += 2.0
    direct = np.array([1, 0, 0, 0], dtype=np.uint8)
    pa = np.array([1.0, 1.2])
    miss = np.full(4, 0.05)
    amp = rng.uniform(1.0, 100.0, size=4)
    xi_w = rng.uniform(1.0, 1.5, size=3)
    z = np.column_stack([
        rng.uniform(1.0, 10.0, size=3),
        rng.uniform(-3.0, 3.0, size=3),
        rng.uniform(-3.0, 3.0, size=3),
    ])
    c_z = np.diag([0.01, 1.2e-3, 1.2e-3])
    weight_args = (states, pts, wm, wc, direct, pa, miss, amp, xi_w, z,
                   c_z, 1000, 1e-6)

    print(f"active backend: {BACKEND}")
    results = {}
    for name, impl in (("fallback", _fallback), ("compiled", _core)):
        if impl is None:
            print(f"{name}: unavailable")
            continue
        da_s = _bench_da(impl, beta, xi, args.repeat)
        wt_s = _bench_weights(impl, weight_args, args.repeat)
        results[name] = (da_s, wt_s)
        print(f"{name}: association messages {1e6 * da_s:.1f} us, "
              f"particle weights ({n}) {1e3 * wt_s:.3f} ms")
    if len(results) == 2:
        da_ratio = results["fallback"][0] / results["compiled"][0]
        wt_ratio = results["fallback"][1] / results["compiled"][1]
        print(f"compiled speedup: messages x{da_ratio:.1f}, "
              f"weights x{wt_ratio:.1f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpslam",
        description="Multipath SLAM experiments: sigma-point belief "
                    "propagation filter vs. particle baseline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment")
    p_run.add_argument("config", help="path to a key = value config file")
    p_run.add_argument("--output", help="override the output directory")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check and print a config")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate)

    p_sim = sub.add_parser("simulate", help="write the measurement stream")
    p_sim.add_argument("config")
    p_sim.add_argument("--output", help="override the output directory")
    p_sim.set_defaults(func=_cmd_simulate)

    p_bench = sub.add_parser("bench", help="time the inner-loop kernels")
    p_bench.add_argument("--repeat", type=int, default=50)
    p_bench.add_argument("--particles", type=int, default=10000)
    p_bench.set_defaults(func=_cmd_bench)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
