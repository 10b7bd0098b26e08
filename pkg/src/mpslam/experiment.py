"""Monte-Carlo experiment orchestration and result persistence.

An experiment executes R independent realizations of each configured
algorithm ("sp" for the sigma-point filter, "pf<count>" for the particle
baseline) on the same scenario. Realization r uses measurement seed
``mc.base_seed + r``, so every algorithm consumes the identical
measurement stream for a given r and runtime comparisons stay fair. All
randomness derives from that seed through counter-based streams, which
makes serial and parallel execution produce identical artifacts.

Artifacts in the output directory:

``runs/<algorithm>_run<r>.json``
    One record per realization (truth, estimates, reported map, timing).
``rmse.csv``
    Per-step RMS agent position error per algorithm (lost runs excluded).
``ospa.csv``
    Per-step mean OSPA(c, p) of the reported map against the currently
    visible images and against all images.
``cardinality.csv``
    Per-step mean absolute map cardinality error, both truth variants.
``ecdf.csv``
    Empirical distribution of final position errors per algorithm.
``summary.json``
    Versioned summary: resolved config, per-algorithm aggregates and
    series, runtime ratios. Step durations are measured around the
    algorithm's update only, never simulation or I/O.

CSV cells are written with ``repr`` so repeated runs of one config are
byte-identical; wall-clock readings appear only in ``summary.json``.
"""

from __future__ import annotations

import json
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from time import perf_counter
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .association import NumericalError
from .baseline import BaselineConfig, TrackLossError, init_baseline, particle_step
from .baseline import estimate as baseline_estimate
from .config import ConfigError, validate
from .filter import FilterConfig, estimate, init_filter, step
from .gaussmath import DegenerateMixtureError, FactorizationError, ShapeError
from .geometry import GeometryError
from .metrics import RunRecord, StepRecord, ecdf
from .metrics import cardinality_error, ospa_series, rmse, summarize
from .models import (
    BirthModel,
    ClutterModel,
    DetectionModel,
    MeasurementNoise,
    build_motion,
)
from .simulator import (
    Scenario,
    generate_measurements,
    initial_belief,
    scenario_from_config,
    step_rng,
    visible_images,
)

__all__ = [
    "OUTPUT_ROOT_ENV",
    "SUMMARY_SCHEMA_VERSION",
    "filter_config_from",
    "baseline_config_from",
    "run_realization",
    "run_experiment",
    "output_directory",
    "write_measurement_csv",
]

OUTPUT_ROOT_ENV = "MPSLAM_OUTPUT_ROOT"
SUMMARY_SCHEMA_VERSION = 1

# Stream salt separating algorithm-internal randomness (three-word seeds)
# from the simulator's per-step streams (two-word seeds).
_ALGO_SALT = 86028121

# Failure modes that mark a realization lost instead of aborting the
# experiment.
RUN_FAILURES = (
    TrackLossError,
    NumericalError,
    FactorizationError,
    DegenerateMixtureError,
    ShapeError,
    GeometryError,
    np.linalg.LinAlgError,
)

OSPA_CUTOFF = 5.0
OSPA_ORDER = 2.0


def filter_config_from(cfg: Mapping[str, object]) -> FilterConfig:
    """Shared models and tuning constants from a resolved config."""
    return FilterConfig(
        motion=build_motion(
            float(cfg["scenario.dt"]),
            float(cfg["filter.sigma_a"]) ** 2,
            np.radians(float(cfg["filter.sigma_kappa_deg"])) ** 2,
        ),
        noise=MeasurementNoise(
            sigma_d=float(cfg["scenario.sigma_d"]),
            sigma_aoa=np.radians(float(cfg["scenario.sigma_aoa_deg"])),
            sigma_aod=np.radians(float(cfg["scenario.sigma_aod_deg"])),
        ),
        detection=DetectionModel(
            p_d=float(cfg["scenario.p_d"]), p_s=float(cfg["filter.p_s"])
        ),
        clutter=ClutterModel(
            mu_fa=float(cfg["scenario.mu_fa"]), d_max=float(cfg["scenario.d_max"])
        ),
        birth=BirthModel(
            mu_n=float(cfg["filter.mu_n"]), d_max=float(cfg["scenario.d_max"])
        ),
        detection_threshold=float(cfg["filter.p_de"]),
        pruning_threshold=float(cfg["filter.p_pr"]),
        birth_samples=int(cfg["filter.birth_samples"]),
        da_max_iter=int(cfg["filter.da_max_iter"]),
        da_tol=float(cfg["filter.da_tol"]),
        sigma_reg=float(cfg["filter.sigma_reg"]),
        merge_distance=float(cfg["filter.merge_distance"]),
        da_method=str(cfg["filter.da_method"]),
    )


def baseline_config_from(
    cfg: Mapping[str, object], n_particles: int
) -> BaselineConfig:
    return BaselineConfig(
        filter=filter_config_from(cfg),
        n_particles=n_particles,
        ess_fraction=float(cfg["baseline.ess_fraction"]),
    )


def _algorithm_rng(seed: int, algorithm: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(
        [int(seed), _ALGO_SALT, zlib.crc32(algorithm.encode("ascii"))]
    )))


def _image_truth(scenario: Scenario) -> np.ndarray:
    """All mirrored-image positions (every anchor, direct path excluded)."""
    rows = [scenario.image_positions(j)[1:]
            for j in range(scenario.n_anchors)]
    return np.vstack(rows) if rows else np.zeros((0, 2))


def _visible_truth(scenario: Scenario, n: int) -> np.ndarray:
    rows = []
    for j in range(scenario.n_anchors):
        pos = scenario.image_positions(j)
        rows.extend(pos[i] for i in visible_images(scenario, n, j) if i > 0)
    return np.vstack(rows) if rows else np.zeros((0, 2))


def run_realization(
    cfg: Mapping[str, object], algorithm: str, run_index: int
) -> RunRecord:
    """Execute one realization of one algorithm; never raises on a
    numerical failure mid-run (the record is marked failed and the last
    estimate is carried forward instead)."""
    scenario = scenario_from_config(cfg)
    seed = int(cfg["mc.base_seed"]) + run_index
    scenario = replace(scenario, seed=seed)
    n_steps = scenario.n_steps

    belief0 = initial_belief(
        scenario,
        step_rng(seed, n_steps),   # one stream past the measurement range
        sigma_p=float(cfg["filter.init_sigma_p"]),
        sigma_v=float(cfg["filter.init_sigma_v"]),
        sigma_kappa=np.radians(float(cfg["filter.init_sigma_kappa_deg"])),
    )
    rng = _algorithm_rng(seed, algorithm)
    pas = scenario.env.pa_positions

    if algorithm == "sp":
        fcfg = filter_config_from(cfg)
        state = init_filter(belief0, pas, fcfg)

        def advance(st, meas):
            return step(st, meas, fcfg, rng)[0]

        def report(st):
            return estimate(st, fcfg)
    else:
        bcfg = baseline_config_from(cfg, int(algorithm[2:]))
        state = init_baseline(belief0, pas, bcfg, rng)

        def advance(st, meas):
            return particle_step(st, meas, bcfg, rng)[0]

        def report(st):
            return baseline_estimate(st, bcfg)

    record = RunRecord(
        algorithm=algorithm, seed=seed, all_va=_image_truth(scenario)
    )
    est_state = belief0.mean.copy()
    map_positions = np.zeros((0, 2))
    map_existences = np.zeros(0)
    for n in range(n_steps):
        meas = generate_measurements(scenario, n)
        duration = float("nan")
        if not record.failed:
            try:
                t0 = perf_counter()
                state = advance(state, meas)
                duration = perf_counter() - t0
                agent_est, objects = report(state)
                est_state = agent_est
                others = [o for o in objects if not o.is_pa]
                map_positions = np.array([o.position for o in others]) \
                    if others else np.zeros((0, 2))
                map_existences = np.array([o.existence for o in others])
            except RUN_FAILURES as exc:
                record.failed = True
                record.failure_step = n
                record.failure_reason = f"{type(exc).__name__}: {exc}"
                duration = float("nan")
        record.steps.append(StepRecord(
            true_state=scenario.true_state(n),
            est_state=est_state,
            map_positions=map_positions,
            map_existences=map_existences,
            visible_va=_visible_truth(scenario, n),
            duration=duration,
        ))
    return record


def _realization_task(args: Tuple[Dict[str, object], str, int]) -> str:
    cfg, algorithm, run_index = args
    return run_realization(cfg, algorithm, run_index).to_json()


def output_directory(
    cfg: Mapping[str, object], override: Optional[str] = None
) -> str:
    """Resolve the artifact directory.

    Precedence: explicit override, then the ``MPSLAM_OUTPUT_ROOT``
    environment variable as a parent for the configured directory, then
    the configured directory itself.
    """
    if override:
        return override
    configured = str(cfg["output.directory"])
    root = os.environ.get(OUTPUT_ROOT_ENV, "")
    if root and not os.path.isabs(configured):
        return os.path.join(root, configured)
    return configured


def _fmt(value: float) -> str:
    return repr(float(value))


def _series_csv(path: str, header: List[str], columns: List[np.ndarray]) -> None:
    n = columns[0].shape[0]
    lines = [",".join(header)]
    for i in range(n):
        lines.append(",".join([str(i)] + [_fmt(col[i]) for col in columns]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def run_experiment(
    cfg: Mapping[str, object], out_dir: Optional[str] = None
) -> Dict[str, object]:
    """Run all configured algorithms and write artifacts; returns the
    summary dictionary."""
    errors = validate(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    try:
        scenario_from_config(cfg)
    except (GeometryError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from None
    out = output_directory(cfg, out_dir)
    os.makedirs(out, exist_ok=True)

    algorithms: Sequence[str] = list(cfg["mc.algorithms"])
    runs = int(cfg["mc.runs"])
    workers = int(cfg["mc.workers"])
    tasks = [(dict(cfg), alg, r) for alg in algorithms for r in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            payloads = list(pool.map(_realization_task, tasks))
    else:
        payloads = [_realization_task(t) for t in tasks]
    records: Dict[str, List[RunRecord]] = {alg: [] for alg in algorithms}
    for (cfg_t, alg, r), payload in zip(tasks, payloads):
        records[alg].append(RunRecord.from_json(payload))

    if bool(cfg["output.write_runs"]):
        runs_dir = os.path.join(out, "runs")
        os.makedirs(runs_dir, exist_ok=True)
        for alg in algorithms:
            for r, rec in enumerate(records[alg]):
                path = os.path.join(runs_dir, f"{alg}_run{r:04d}.json")
                with open(path, "w", encoding="utf-8", newline="\n") as fh:
                    fh.write(rec.to_json() + "\n")

    rmse_cols, ospa_cols, card_cols = [], [], []
    rmse_head, ospa_head, card_head = ["step"], ["step"], ["step"]
    summary_algos: Dict[str, object] = {}
    for alg in algorithms:
        recs = records[alg]
        series, excluded = rmse(recs)
        rmse_cols.append(series)
        rmse_head.append(alg)
        for visible, tag in ((True, "visible"), (False, "all")):
            ospa_cols.append(ospa_series(
                recs, c=OSPA_CUTOFF, p=OSPA_ORDER, visible_only=visible
            ))
            ospa_head.append(f"{alg}_{tag}")
            card_cols.append(cardinality_error(recs, visible_only=visible))
            card_head.append(f"{alg}_{tag}")
        dist = ecdf([rec.final_error for rec in recs])
        agg = summarize(recs)
        agg["rmse_series"] = [None if not np.isfinite(v) else float(v)
                              for v in series]
        agg["ospa_visible_series"] = [float(v) for v in ospa_cols[-2]]
        agg["ospa_all_series"] = [float(v) for v in ospa_cols[-1]]
        agg["final_error_ecdf"] = {
            "values": [float(v) for v in dist.values],
            "fractions": [float(v) for v in dist.fractions],
        }
        summary_algos[alg] = agg

    _series_csv(os.path.join(out, "rmse.csv"), rmse_head, rmse_cols)
    _series_csv(os.path.join(out, "ospa.csv"), ospa_head, ospa_cols)
    _series_csv(os.path.join(out, "cardinality.csv"), card_head, card_cols)

    ecdf_lines = ["algorithm,final_error,fraction"]
    for alg in algorithms:
        dist = ecdf([rec.final_error for rec in records[alg]])
        for v, f in zip(dist.values, dist.fractions):
            ecdf_lines.append(f"{alg},{_fmt(v)},{_fmt(f)}")
    with open(os.path.join(out, "ecdf.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(ecdf_lines) + "\n")

    comparisons: Dict[str, object] = {}
    if "sp" in summary_algos:
        sp_time = summary_algos["sp"]["mean_step_seconds"]
        for alg in algorithms:
            if alg == "sp" or not sp_time:
                continue
            comparisons[f"{alg}_step_time_over_sp"] = (
                summary_algos[alg]["mean_step_seconds"] / sp_time
            )
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "config": dict(cfg),
        "n_steps": int(cfg["scenario.n_steps"]),
        "algorithms": summary_algos,
        "comparisons": comparisons,
    }
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def write_measurement_csv(cfg: Mapping[str, object], path: str) -> int:
    """Write the scenario's measurement stream; returns the row count.

    Columns: step, anchor, distance, arrival angle, departure angle, and
    the ground-truth origin label (0 clutter, i+1 for image i).
    """
    from .simulator import measurement_rows

    errors = validate(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    scenario = scenario_from_config(cfg)
    lines = ["n,j,z_d,z_aoa,z_aod,origin"]
    for n in range(scenario.n_steps):
        for row in measurement_rows(generate_measurements(scenario, n)):
            lines.append(",".join([
                str(row[0]), str(row[1]), _fmt(row[2]), _fmt(row[3]),
                _fmt(row[4]), str(row[5]),
            ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(lines) - 1
