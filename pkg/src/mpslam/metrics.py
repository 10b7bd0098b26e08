"""Evaluation: per-run records, OSPA, RMSE, eCDF, and cardinality error.

A run record captures one realization end to end (truth, estimates, map,
visibility, timing) and serializes to plain JSON so aggregation never
needs the objects that produced it.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

LOST_TRACK_ERROR = 1.0   # final position error marking a lost realization
EXHAUSTIVE_MAX = 6       # assignment enumeration limit before Hungarian


@dataclass
class StepRecord:
    """Ground truth and estimates for one filter step."""

    true_state: np.ndarray          # (5,)
    est_state: np.ndarray           # (5,)
    map_positions: np.ndarray       # (n_obj, 2) reported non-anchor objects
    map_existences: np.ndarray      # (n_obj,)
    visible_va: np.ndarray          # (n_vis, 2) true mirrored images in view
    duration: float                 # algorithm seconds for this step

    def __post_init__(self):
        self.true_state = np.asarray(self.true_state, dtype=float).reshape(5)
        self.est_state = np.asarray(self.est_state, dtype=float).reshape(5)
        self.map_positions = np.asarray(self.map_positions,
                                        dtype=float).reshape(-1, 2)
        self.map_existences = np.asarray(self.map_existences,
                                         dtype=float).reshape(-1)
        self.visible_va = np.asarray(self.visible_va,
                                     dtype=float).reshape(-1, 2)
        if self.map_existences.shape[0] != self.map_positions.shape[0]:
            raise ValueError("map positions and existences disagree")
        if self.duration < 0.0:
            raise ValueError("negative step duration")

    @property
    def position_error(self) -> float:
        return float(np.linalg.norm(self.est_state[:2] - self.true_state[:2]))


@dataclass
class RunRecord:
    """One realization of one algorithm on one scenario."""

    algorithm: str
    seed: int
    steps: List[StepRecord] = field(default_factory=list)
    all_va: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    failed: bool = False
    failure_step: Optional[int] = None
    failure_reason: str = ""

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def lost(self) -> bool:
        """Track loss: explicit failure or a final error beyond the bound."""
        if self.failed:
            return True
        if not self.steps:
            return True
        return self.steps[-1].position_error > LOST_TRACK_ERROR

    @property
    def final_error(self) -> float:
        if not self.steps:
            return float("inf")
        return self.steps[-1].position_error

    def errors(self) -> np.ndarray:
        return np.array([s.position_error for s in self.steps])

    def durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.steps])

    def to_json(self) -> str:
        payload = {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "failed": self.failed,
            "failure_step": self.failure_step,
            "failure_reason": self.failure_reason,
            "all_va": self.all_va.tolist(),
            "steps": [
                {
                    "true_state": s.true_state.tolist(),
                    "est_state": s.est_state.tolist(),
                    "map_positions": s.map_positions.tolist(),
                    "map_existences": s.map_existences.tolist(),
                    "visible_va": s.visible_va.tolist(),
                    "duration": s.duration,
                }
                for s in self.steps
            ],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        data = json.loads(text)
        rec = cls(
            algorithm=data["algorithm"],
            seed=int(data["seed"]),
            all_va=np.asarray(data["all_va"], dtype=float).reshape(-1, 2),
            failed=bool(data["failed"]),
            failure_step=data["failure_step"],
            failure_reason=data.get("failure_reason", ""),
        )
        for s in data["steps"]:
            rec.steps.append(StepRecord(
                true_state=s["true_state"],
                est_state=s["est_state"],
                map_positions=s["map_positions"],
                map_existences=s["map_existences"],
                visible_va=s["visible_va"],
                duration=s["duration"],
            ))
        return rec


def ospa(x: np.ndarray, y: np.ndarray, c: float, p: float) -> float:
    """Optimal subpattern assignment distance between two 2-D point sets.

    With m = |X| <= n = |Y| (sets swapped otherwise):
    ``((1/n) (min_assign sum min(d, c)^p + c^p (n - m)))^(1/p)``.
    Both sets empty gives 0. The optimal assignment is found by exhaustive
    enumeration for small sets and by the Hungarian algorithm otherwise.
    """
    if c <= 0.0:
        raise ValueError("cutoff must be positive")
    if p < 1.0:
        raise ValueError("order must be at least 1")
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    y = np.asarray(y, dtype=float).reshape(-1, 2)
    if x.shape[0] > y.shape[0]:
        x, y = y, x
    m, n = x.shape[0], y.shape[0]
    if n == 0:
        return 0.0
    if m == 0:
        return float(c)
    d = np.linalg.norm(x[:, None, :] - y[None, :, :], axis=2)
    cost = np.minimum(d, c) ** p
    if n <= EXHAUSTIVE_MAX:
        best = min(
            sum(cost[i, perm[i]] for i in range(m))
            for perm in itertools.permutations(range(n), m)
        )
    else:
        rows, cols = linear_sum_assignment(cost)
        best = float(cost[rows, cols].sum())
    return float(((best + (c ** p) * (n - m)) / n) ** (1.0 / p))


def rmse(records: Sequence[RunRecord]) -> Tuple[np.ndarray, int]:
    """Per-step RMS position error over non-lost runs.

    Returns the RMSE series and the number of excluded (lost) runs.
    """
    if not records:
        raise ValueError("need at least one run")
    kept = [r for r in records if not r.lost]
    excluded = len(records) - len(kept)
    if not kept:
        n = max(r.n_steps for r in records)
        return np.full(n, np.nan), excluded
    n = kept[0].n_steps
    if any(r.n_steps != n for r in kept):
        raise ValueError("runs have inconsistent lengths")
    errs = np.stack([r.errors() for r in kept])
    return np.sqrt(np.mean(errs ** 2, axis=0)), excluded


@dataclass(frozen=True)
class ECDF:
    """Right-continuous empirical distribution of a scalar sample."""

    values: np.ndarray
    fractions: np.ndarray

    def __call__(self, threshold: float) -> float:
        """Fraction of the sample <= threshold."""
        idx = np.searchsorted(self.values, threshold, side="right")
        return float(self.fractions[idx - 1]) if idx > 0 else 0.0


def ecdf(sample: Sequence[float]) -> ECDF:
    values = np.sort(np.asarray(sample, dtype=float))
    if values.size == 0:
        raise ValueError("empty sample")
    n = values.size
    uniq, counts = np.unique(values, return_counts=True)
    fractions = np.cumsum(counts) / n
    return ECDF(values=uniq, fractions=fractions)


def cardinality_error(records: Sequence[RunRecord],
                      visible_only: bool = True) -> np.ndarray:
    """Mean per-step |#reported - #true| map cardinality error."""
    if not records:
        raise ValueError("need at least one run")
    n = records[0].n_steps
    out = np.zeros(n)
    for rec in records:
        if rec.n_steps != n:
            raise ValueError("runs have inconsistent lengths")
        for i, s in enumerate(rec.steps):
            truth = s.visible_va.shape[0] if visible_only \
                else rec.all_va.shape[0]
            out[i] += abs(s.map_positions.shape[0] - truth)
    return out / len(records)


def ospa_series(records: Sequence[RunRecord], c: float = 5.0, p: float = 2.0,
                visible_only: bool = True) -> np.ndarray:
    """Mean per-step OSPA between the reported map and the true images."""
    if not records:
        raise ValueError("need at least one run")
    n = records[0].n_steps
    out = np.zeros(n)
    for rec in records:
        if rec.n_steps != n:
            raise ValueError("runs have inconsistent lengths")
        for i, s in enumerate(rec.steps):
            truth = s.visible_va if visible_only else rec.all_va
            out[i] += ospa(s.map_positions, truth, c, p)
    return out / len(records)


def detected_count(record: RunRecord, radius: float = 0.5) -> int:
    """True mirrored images matched by the final reported map."""
    if not record.steps:
        return 0
    est = record.steps[-1].map_positions
    count = 0
    for tv in record.all_va:
        if est.shape[0] and np.linalg.norm(est - tv, axis=1).min() <= radius:
            count += 1
    return count


def summarize(records: Sequence[RunRecord]) -> Dict[str, object]:
    """Aggregate one algorithm's runs into plain JSON-ready scalars."""
    if not records:
        raise ValueError("need at least one run")
    finals = [r.final_error for r in records if not r.failed]
    # Steps padded after a failure carry NaN durations; average over the
    # steps the algorithm actually executed.
    durs = np.concatenate([r.durations() for r in records])
    durs = durs[np.isfinite(durs)]
    lost = sum(1 for r in records if r.lost)
    rmse_series, excluded = rmse(records)
    return {
        "runs": len(records),
        "failed": sum(1 for r in records if r.failed),
        "lost": lost,
        "lost_rate": lost / len(records),
        "excluded_from_rmse": excluded,
        "mean_step_seconds": float(durs.mean()) if durs.size else 0.0,
        "final_error_median": float(np.median(finals)) if finals else None,
        "final_error_below_0p1": (
            float(np.mean([e < 0.1 for e in finals])) if finals else None
        ),
        "rmse_last": (
            float(rmse_series[-1]) if np.isfinite(rmse_series[-1]) else None
        ),
        "detected_va_mean": float(np.mean([
            detected_count(r) for r in records if not r.failed
        ])) if finals else None,
    }
