"""Particle-based reference filter for accuracy and runtime comparison.

The agent belief is a weighted particle cloud pushed through the motion
model (bootstrap proposal); each particle is reweighted by the
association-marginalized measurement likelihood

    prod_k ( beta_ik0 + sum_m nu_i[m][k] r_k p_d f(z_m | x_i, psi_k) / (mu_fa f_fa) )

where the association messages ``nu_i`` come from running the same loopy
scheme the sigma-point filter uses on each particle's own evidence table.
The map is Rao-Blackwellized: one shared bank of Gaussian object
hypotheses conditioned on the weighted agent mean, not a map per particle,
which keeps large particle counts affordable. The likelihood is still
fully per particle — each object's sigma points are pushed through the
measurement map at every particle's pose and the association messages are
iterated per particle — so the reweighting cost scales with the particle
count.

Systematic resampling triggers when the effective sample size drops below
a configurable fraction of the particle count. A weight collapse (no
particle explains the measurements) raises ``TrackLossError``; callers
report such a realization as lost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from . import kernels
from .association import AssociationInput, loopy_da
from .filter import (
    DENSITY_FLOOR,
    FilterConfig,
    FilterState,
    MapEstimate,
    _merge_duplicates,
    _refine_birth,
    evaluate_legacy,
    evaluate_new,
    init_filter,
)
from .gaussmath import (
    GaussianBelief,
    ensure_psd,
    moment_match,
    sigma_points,
    wrap_angle,
)
from .models import STATE_DIM, MeasurementSet, PBOHypothesis

__all__ = [
    "TrackLossError",
    "ParticleCloud",
    "BaselineConfig",
    "BaselineState",
    "BaselineDiagnostics",
    "init_baseline",
    "sample_cloud",
    "ess",
    "systematic_resample",
    "particle_step",
    "estimate",
]

WEIGHT_FLOOR = 1e-300


class TrackLossError(RuntimeError):
    """Every particle weight collapsed to zero."""


@dataclass
class ParticleCloud:
    """Weighted sample representation of the agent belief."""

    states: np.ndarray   # (N, 5)
    weights: np.ndarray  # (N,), nonnegative, summing to 1

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        n = self.states.shape[0]
        if n < 1 or self.states.shape[1] != STATE_DIM:
            raise ValueError(f"particle states must be (N, {STATE_DIM}) with N >= 1")
        if self.weights.shape != (n,):
            raise ValueError("one weight per particle required")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("particle states must be finite")
        if np.any(self.weights < 0.0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")
        total = float(self.weights.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total}, expected 1 within 1e-9")
        self.weights = self.weights / total

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    def mean(self) -> np.ndarray:
        """Weighted mean state; the orientation dimension is averaged on
        the circle."""
        out = self.weights @ self.states
        s = float(self.weights @ np.sin(self.states[:, 4]))
        c = float(self.weights @ np.cos(self.states[:, 4]))
        out[4] = np.arctan2(s, c) if (s != 0.0 or c != 0.0) else self.states[0, 4]
        return out

    def gaussian(self) -> GaussianBelief:
        """Moment-matched Gaussian proxy of the cloud."""
        mu = self.mean()
        d = self.states - mu
        d[:, 4] = wrap_angle(d[:, 4])
        cov = (d.T * self.weights) @ d
        return GaussianBelief(mu, ensure_psd(cov))


def ess(weights: np.ndarray) -> float:
    """Effective sample size 1 / sum w^2 of normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices from one uniform draw and a stratified comb."""
    w = np.asarray(weights, dtype=float)
    n = w.size
    comb = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(w)
    cdf[-1] = 1.0   # guard against round-off at the top
    return np.searchsorted(cdf, comb, side="left")


def sample_cloud(
    belief: GaussianBelief, n: int, rng: np.random.Generator
) -> ParticleCloud:
    """Draw an equally weighted cloud from a Gaussian belief."""
    if belief.dim != STATE_DIM:
        raise ValueError("agent belief must be 5-dimensional")
    if n < 1:
        raise ValueError("need at least one particle")
    w, v = np.linalg.eigh(belief.cov)
    root = v * np.sqrt(np.maximum(w, 0.0))
    states = belief.mean + rng.standard_normal((n, STATE_DIM)) @ root.T
    states[:, 4] = wrap_angle(states[:, 4])
    return ParticleCloud(states, np.full(n, 1.0 / n))


@dataclass(frozen=True)
class BaselineConfig:
    """Particle count and resampling policy on top of the shared models."""

    filter: FilterConfig
    n_particles: int = 1000
    ess_fraction: float = 0.5

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if not (0.0 < self.ess_fraction <= 1.0):
            raise ValueError("ess_fraction must be in (0, 1]")


@dataclass
class BaselineState:
    """Particle cloud plus the shared map bank."""

    cloud: ParticleCloud
    pbos: List[List[PBOHypothesis]]
    pa_positions: np.ndarray
    step: int = 0
    next_labels: List[int] = field(default_factory=list)

    @property
    def n_anchors(self) -> int:
        return self.pa_positions.shape[0]


@dataclass(frozen=True)
class BaselineDiagnostics:
    """Per-step internals: sample health and association bookkeeping."""

    ess: float
    resampled: bool
    da_iterations: int
    da_converged: bool
    n_objects: int
    n_measurements: int
    n_born: int


def init_baseline(
    agent0: GaussianBelief,
    pa_positions: np.ndarray,
    cfg: BaselineConfig,
    rng: np.random.Generator,
) -> BaselineState:
    """Start from a Gaussian prior: sample the cloud, pin anchor objects."""
    seed_state = init_filter(agent0, pa_positions, cfg.filter)
    return BaselineState(
        cloud=sample_cloud(agent0, cfg.n_particles, rng),
        pbos=seed_state.pbos,
        pa_positions=seed_state.pa_positions,
        step=0,
        next_labels=seed_state.next_labels,
    )


def _noise_root(cov: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(cov)
    return v * np.sqrt(np.maximum(w, 0.0))


def particle_step(
    state: BaselineState,
    measurements: MeasurementSet,
    cfg: BaselineConfig,
    rng: np.random.Generator,
) -> Tuple[BaselineState, BaselineDiagnostics]:
    """One full baseline cycle: propagate, reweight, resample, update map."""
    per_anchor_z = measurements.per_anchor
    if len(per_anchor_z) != state.n_anchors:
        raise ValueError("measurement set anchor count mismatch")
    fcfg = cfg.filter
    n = state.cloud.n_particles

    # Bootstrap propagation through the motion model with sampled noise.
    states = state.cloud.states @ fcfg.motion.transition.T
    if np.any(fcfg.motion.noise_cov):
        root = _noise_root(fcfg.motion.noise_cov)
        states = states + rng.standard_normal((n, STATE_DIM)) @ root.T
    states[:, 4] = wrap_angle(states[:, 4])
    weights = state.cloud.weights.copy()

    # Map-side prediction mirrors the sigma-point filter: existence decays
    # by the survival probability, the pinned anchor re-inflates instead.
    drift = fcfg.sigma_reg ** 2 * np.eye(2)
    pred_pbos: List[List[PBOHypothesis]] = []
    for anchor_list in state.pbos:
        row = []
        for pbo in anchor_list:
            if pbo.is_pa:
                belief = GaussianBelief(pbo.belief.mean, pbo.belief.cov + drift) \
                    if fcfg.sigma_reg > 0.0 else pbo.belief
                row.append(PBOHypothesis(
                    belief=belief, existence=1.0,
                    anchor=pbo.anchor, label=pbo.label, is_pa=True,
                ))
            else:
                row.append(PBOHypothesis(
                    belief=pbo.belief,
                    existence=fcfg.detection.p_s * pbo.existence,
                    anchor=pbo.anchor, label=pbo.label, is_pa=False,
                ))
        pred_pbos.append(row)

    # The shared bank conditions on the predicted weighted mean of the
    # cloud, pinned (zero covariance): the cloud, not the bank, carries the
    # agent uncertainty.
    cond = GaussianBelief(
        ParticleCloud(states, weights).mean(),
        np.zeros((STATE_DIM, STATE_DIM)),
    )
    fa = max(fcfg.clutter.mu_fa * fcfg.clutter.density(), DENSITY_FLOOR)
    p_d = fcfg.detection.p_d
    c_z = fcfg.noise.cov()

    logw = np.zeros(n)
    anchor_data = []
    total_iters = 0
    all_converged = True
    total_meas = 0
    for j in range(state.n_anchors):
        z = np.atleast_2d(np.asarray(per_anchor_z[j], dtype=float))
        if z.size == 0:
            z = np.zeros((0, 3))
        m_meas = z.shape[0]
        total_meas += m_meas
        pa = state.pa_positions[j]
        legacy = pred_pbos[j]
        evals = [evaluate_legacy(cond, pbo, z, fcfg, pa) for pbo in legacy]
        news = [evaluate_new(cond, z[m], fcfg, pa, rng) for m in range(m_meas)]
        beta = np.vstack([e.beta_row for e in evals]) \
            if evals else np.zeros((0, m_meas + 1))
        xi = np.array([nw.xi for nw in news])
        da = loopy_da(
            AssociationInput(beta, xi),
            max_iter=fcfg.da_max_iter, tol=fcfg.da_tol,
            method=fcfg.da_method,
        )
        total_iters += da.iterations
        all_converged = all_converged and da.converged

        if m_meas and legacy:
            sets = [sigma_points(pbo.belief, fcfg.ut) for pbo in legacy]
            pts = np.stack([sp.points for sp in sets])
            direct = np.array([pbo.is_pa for pbo in legacy], dtype=np.uint8)
            miss = beta[:, 0].copy()
            # Gaussian-evidence amplitude per track: existence and
            # detection odds against the clutter density.
            amp = np.array([pbo.existence * p_d / fa for pbo in legacy])
            logw += kernels.particle_log_weights(
                states, pts, sets[0].mean_weights, sets[0].cov_weights,
                direct, pa, miss, amp, xi, z, c_z,
                fcfg.da_max_iter, fcfg.da_tol,
            )
        anchor_data.append((z, legacy, evals, news, da))

    # Reweight on the absolute likelihood scale: a cloud so far from the
    # data that every exp underflows is a collapse. Only a positive best
    # log-weight is shifted out (that cannot mask a collapse, and it keeps
    # exp from overflowing).
    best = logw.max()
    if best > 0.0:
        logw -= best
    with np.errstate(under="ignore"):
        weights = weights * np.exp(logw)
    total = float(weights.sum())
    if not np.isfinite(total) or total <= WEIGHT_FLOOR:
        raise TrackLossError(
            f"particle weights collapsed at step {state.step + 1}"
        )
    weights = weights / total

    sample_size = ess(weights)
    resampled = sample_size < cfg.ess_fraction * n
    if resampled:
        idx = systematic_resample(weights, rng)
        states = states[idx]
        weights = np.full(n, 1.0 / n)
    cloud = ParticleCloud(states, weights)
    agent_mean = cloud.mean()

    # Shared map bank update, conditioned on the weighted agent mean.
    new_pbos: List[List[PBOHypothesis]] = []
    next_labels = list(state.next_labels)
    n_born = 0
    for j, (z, legacy, evals, news, da) in enumerate(anchor_data):
        pa = state.pa_positions[j]
        m_meas = z.shape[0]
        out: List[PBOHypothesis] = []
        for k, (pbo, ev) in enumerate(zip(legacy, evals)):
            eta = da.eta[k]
            r = pbo.existence
            beta0 = ev.beta_row[0]
            miss_w = eta[0] * (r * (1.0 - p_d) / beta0) if beta0 > 0.0 else 0.0
            comps = [(float(miss_w), pbo.belief)]
            for m in range(m_meas):
                comps.append((
                    float(eta[m + 1]),
                    GaussianBelief(
                        ev.post_means[m][STATE_DIM:],
                        ev.post_cov[STATE_DIM:, STATE_DIM:],
                    ),
                ))
            if sum(w for w, _ in comps) > 0.0:
                belief = moment_match(comps)
            else:
                belief = pbo.belief
            if pbo.is_pa:
                existence = 1.0
            else:
                s1 = eta[0] * r * (1.0 - p_d) + float(
                    np.dot(eta[1:], ev.beta_row[1:])
                )
                s0 = eta[0] * (1.0 - r)
                existence = s1 / (s1 + s0) if s1 + s0 > 0.0 else 0.0
            if pbo.is_pa or existence >= fcfg.pruning_threshold:
                out.append(PBOHypothesis(
                    belief=belief, existence=existence,
                    anchor=pbo.anchor, label=pbo.label, is_pa=pbo.is_pa,
                ))
        for m in range(m_meas):
            var0 = da.varsigma[m, 0] if da.varsigma.size else 1.0
            odds = (news[m].xi - 1.0) * var0
            existence = odds / (1.0 + odds)
            if existence < fcfg.pruning_threshold:
                continue
            belief = _refine_birth(news[m].proposal, z[m], agent_mean, fcfg, pa)
            out.append(PBOHypothesis(
                belief=belief, existence=min(existence, 1.0),
                anchor=j, label=next_labels[j], is_pa=False,
            ))
            next_labels[j] += 1
            n_born += 1
        new_pbos.append(_merge_duplicates(out, fcfg))

    new_state = BaselineState(
        cloud=cloud, pbos=new_pbos, pa_positions=state.pa_positions,
        step=state.step + 1, next_labels=next_labels,
    )
    diag = BaselineDiagnostics(
        ess=sample_size, resampled=resampled,
        da_iterations=total_iters, da_converged=all_converged,
        n_objects=sum(len(l) for l in new_pbos),
        n_measurements=total_meas, n_born=n_born,
    )
    return new_state, diag


def estimate(
    state: BaselineState, cfg: BaselineConfig
) -> Tuple[np.ndarray, List[MapEstimate]]:
    """Point estimates in the same format the sigma-point filter reports."""
    from .filter import estimate as filter_estimate

    shim = FilterState(
        agent=state.cloud.gaussian(), pbos=state.pbos,
        pa_positions=state.pa_positions, step=state.step,
        next_labels=list(state.next_labels),
    )
    return filter_estimate(shim, cfg.filter)
