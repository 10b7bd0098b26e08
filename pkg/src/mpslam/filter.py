"""Sum-product filter over the agent state and a map of potential anchor
images, with sigma-point Gaussian message approximations.

Each step: predict the agent belief through the motion model and decay
object existences; evaluate association weights for every tracked object
and every measurement through one stacked unscented transform per object;
evaluate a newborn weight per measurement by importance sampling around a
sigma-point birth proposal; run loopy data association; collapse the
resulting mixtures by moment matching; fuse the per-object agent posteriors
by a Gaussian product; update existences; spawn and prune objects.

Object existence and association semantics follow the likelihood-ratio
convention: measurement m scores ``r p_d f(z_m | stacked belief) / (mu_fa
f_fa(z_m))`` against a missed/nonexistent weight ``r (1 - p_d) + (1 - r)``,
and a newborn weight ``xi_m = 1 + mu_n E[f(z_m | x, psi)] / (mu_fa
f_fa(z_m))`` with the expectation over the birth disc taken by importance
sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .association import AssociationInput, AssociationOutput, loopy_da
from .gaussmath import (
    GaussianBelief,
    UTParams,
    ensure_psd,
    fuse_with_common_prior,
    kf_predict,
    kf_update_stacked,
    moment_match,
    sigma_points,
    unscented_transform,
    wrap_angle,
)
from .geometry import (
    GeometryError,
    birth_map_batch,
    measurement_fn_batch,
)
from .models import (
    STATE_DIM,
    BirthModel,
    ClutterModel,
    DetectionModel,
    MeasurementNoise,
    MeasurementSet,
    MotionModel,
    PBOHypothesis,
)

__all__ = [
    "FilterConfig",
    "FilterState",
    "MapEstimate",
    "StepDiagnostics",
    "init_filter",
    "predict",
    "evaluate_legacy",
    "evaluate_new",
    "update",
    "step",
    "estimate",
]

ANGLE_DIMS = (1, 2)       # AOA and AOD components of a measurement
DENSITY_FLOOR = 1e-300    # floor for the clutter-density denominator
MIN_SAMPLE_DISTANCE = 1e-9


@dataclass(frozen=True)
class FilterConfig:
    """Models and tuning constants for the sum-product filter."""

    motion: MotionModel
    noise: MeasurementNoise
    detection: DetectionModel
    clutter: ClutterModel
    birth: BirthModel
    detection_threshold: float = 0.5   # existence needed to report an object
    pruning_threshold: float = 1e-4    # existence below this drops an object
    birth_samples: int = 10
    da_max_iter: int = 100000
    da_tol: float = 1e-6
    sigma_reg: float = 0.01            # anchor reanchoring std dev per step (m)
    merge_distance: float = 0.5        # duplicate-track absorption radius (m)
    da_method: str = "auto"            # association marginals: auto/bp/exact
    ut: UTParams = field(default_factory=UTParams)

    def __post_init__(self):
        if not (0.0 <= self.pruning_threshold < self.detection_threshold <= 1.0):
            raise ValueError("need 0 <= pruning threshold < detection threshold <= 1")
        if self.birth_samples < 1:
            raise ValueError("birth_samples must be at least 1")
        if self.sigma_reg < 0.0:
            raise ValueError("sigma_reg must be nonnegative")
        if self.merge_distance < 0.0:
            raise ValueError("merge_distance must be nonnegative")
        if self.da_method not in ("auto", "bp", "exact"):
            raise ValueError("da_method must be auto, bp, or exact")


@dataclass
class FilterState:
    """Agent belief plus per-anchor object hypothesis lists."""

    agent: GaussianBelief
    pbos: List[List[PBOHypothesis]]
    pa_positions: np.ndarray
    step: int = 0
    next_labels: List[int] = field(default_factory=list)

    @property
    def n_anchors(self) -> int:
        return self.pa_positions.shape[0]


@dataclass(frozen=True)
class MapEstimate:
    """One reported map object."""

    position: np.ndarray
    existence: float
    anchor: int
    label: int
    is_pa: bool


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-step internals useful for logging and tests."""

    da_iterations: int
    da_converged: bool
    n_objects: int
    n_measurements: int
    n_born: int
    xi: List[np.ndarray]


def init_filter(
    agent0: GaussianBelief,
    pa_positions: np.ndarray,
    cfg: FilterConfig,
) -> FilterState:
    """Start a filter with known anchors: one pinned object per anchor."""
    pa_positions = np.atleast_2d(np.asarray(pa_positions, dtype=float))
    if agent0.dim != STATE_DIM:
        raise ValueError("agent belief must be 5-dimensional")
    pbos: List[List[PBOHypothesis]] = []
    next_labels: List[int] = []
    anchor_cov = cfg.sigma_reg ** 2 * np.eye(2)
    for j in range(pa_positions.shape[0]):
        pbos.append([
            PBOHypothesis(
                belief=GaussianBelief(pa_positions[j], anchor_cov),
                existence=1.0,
                anchor=j,
                label=1,
                is_pa=True,
            )
        ])
        next_labels.append(2)
    return FilterState(
        agent=agent0, pbos=pbos, pa_positions=pa_positions, step=0,
        next_labels=next_labels,
    )


def predict(state: FilterState, cfg: FilterConfig) -> FilterState:
    """Propagate the agent belief and decay object existences one step.

    Anchor objects stay pinned at existence 1; their position belief is
    re-inflated by sigma_reg^2 per step so repeated updates cannot collapse
    it to a point.
    """
    agent = kf_predict(state.agent, cfg.motion.transition, cfg.motion.noise_cov)
    drift = cfg.sigma_reg ** 2 * np.eye(2)
    new_pbos: List[List[PBOHypothesis]] = []
    for anchor_list in state.pbos:
        out = []
        for pbo in anchor_list:
            if pbo.is_pa:
                belief = GaussianBelief(pbo.belief.mean, pbo.belief.cov + drift) \
                    if cfg.sigma_reg > 0.0 else pbo.belief
                out.append(replace(pbo, belief=belief))
            else:
                out.append(replace(pbo, existence=cfg.detection.p_s * pbo.existence))
        new_pbos.append(out)
    return FilterState(
        agent=agent, pbos=new_pbos, pa_positions=state.pa_positions,
        step=state.step, next_labels=list(state.next_labels),
    )


@dataclass(frozen=True)
class LegacyEvaluation:
    """Association weights and cached update quantities for one object."""

    beta_row: np.ndarray    # (M+1,)
    evidences: np.ndarray   # (M,), f(z_m; predicted measurement)
    post_means: np.ndarray  # (M, 7) stacked posterior means
    post_cov: np.ndarray    # (7, 7), shared across measurements
    prior: GaussianBelief   # stacked prior


def _stacked_prior(agent: GaussianBelief, pbo: PBOHypothesis) -> GaussianBelief:
    mean = np.concatenate([agent.mean, pbo.belief.mean])
    cov = np.zeros((STATE_DIM + 2, STATE_DIM + 2))
    cov[:STATE_DIM, :STATE_DIM] = agent.cov
    cov[STATE_DIM:, STATE_DIM:] = pbo.belief.cov
    return GaussianBelief(mean, cov)


def evaluate_legacy(
    agent: GaussianBelief,
    pbo: PBOHypothesis,
    measurements: np.ndarray,
    cfg: FilterConfig,
    pa_pos: np.ndarray,
) -> LegacyEvaluation:
    """Association weights of one tracked object against all measurements.

    One unscented transform of the stacked [agent; object] state gives the
    predicted measurement, innovation covariance, and gain shared by every
    measurement; each column m of the weights is the likelihood ratio
    ``r p_d f(z_m) / (mu_fa f_fa)``, column 0 the missed/nonexistent weight.
    """
    z = np.atleast_2d(np.asarray(measurements, dtype=float))
    m_meas = z.shape[0] if z.size else 0
    joint = _stacked_prior(agent, pbo)
    pa = np.asarray(pa_pos, dtype=float)

    r = pbo.existence
    p_d = cfg.detection.p_d
    if m_meas == 0:
        # No measurement columns: only the miss weight is defined and the
        # measurement transform is never needed.
        return LegacyEvaluation(
            beta_row=np.array([r * (1.0 - p_d) + (1.0 - r)]),
            evidences=np.empty(0), post_means=np.empty((0, joint.dim)),
            post_cov=joint.cov, prior=joint,
        )

    def h(s):
        return measurement_fn_batch(s[:, 0:2], s[:, 4], s[:, 5:7], pa, pbo.is_pa)

    mu_t, cov_t, cross = unscented_transform(
        joint, h, cfg.ut, angle_dims=ANGLE_DIMS, vectorized=True
    )
    c_z = cfg.noise.cov()
    s_mat = 0.5 * ((cov_t + c_z) + (cov_t + c_z).T)
    c, low = cho_factor(s_mat)
    gain = cho_solve((c, low), cross.T).T
    post_cov = ensure_psd(joint.cov - gain @ s_mat @ gain.T)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))

    fa = max(cfg.clutter.mu_fa * cfg.clutter.density(), DENSITY_FLOOR)
    beta_row = np.empty(m_meas + 1)
    beta_row[0] = r * (1.0 - p_d) + (1.0 - r)
    evidences = np.empty(m_meas)
    post_means = np.empty((m_meas, joint.dim))
    for m in range(m_meas):
        innov = z[m] - mu_t
        for a in ANGLE_DIMS:
            innov[a] = wrap_angle(innov[a])
        maha = float(innov @ cho_solve((c, low), innov))
        evidences[m] = np.exp(-0.5 * (3.0 * np.log(2.0 * np.pi) + logdet + maha))
        post_means[m] = joint.mean + gain @ innov
        beta_row[m + 1] = r * p_d * evidences[m] / fa
    return LegacyEvaluation(
        beta_row=beta_row, evidences=evidences, post_means=post_means,
        post_cov=post_cov, prior=joint,
    )


@dataclass(frozen=True)
class NewEvaluation:
    """Newborn weight and birth proposal for one measurement."""

    xi: float
    proposal: GaussianBelief
    effective_samples: int


def evaluate_new(
    agent: GaussianBelief,
    z: np.ndarray,
    cfg: FilterConfig,
    pa_pos: np.ndarray,
    rng: np.random.Generator,
) -> NewEvaluation:
    """Newborn association weight for one measurement.

    Builds a Gaussian birth proposal by pushing the product sigma-point
    grid of the agent belief and the measurement (as a Gaussian with the
    noise covariance) through the inverse range/bearing map, then estimates
    ``E[f(z | x, psi)]`` over the uniform birth disc by importance sampling
    from the proposal.
    """
    z = np.asarray(z, dtype=float).reshape(3)
    pa = np.asarray(pa_pos, dtype=float)
    sp_x = sigma_points(agent, cfg.ut)
    sp_z = sigma_points(GaussianBelief(z, cfg.noise.cov()), cfg.ut)
    z_pts = sp_z.points.copy()
    z_pts[:, 0] = np.maximum(z_pts[:, 0], MIN_SAMPLE_DISTANCE)

    n_x = sp_x.points.shape[0]
    n_z = z_pts.shape[0]
    pos = np.repeat(sp_x.points[:, 0:2], n_z, axis=0)
    kap = np.repeat(sp_x.points[:, 4], n_z)
    zz = np.tile(z_pts, (n_x, 1))
    births = birth_map_batch(pos, kap, zz)
    w_mean = np.outer(sp_x.mean_weights, sp_z.mean_weights).ravel()
    w_cov = np.outer(sp_x.cov_weights, sp_z.cov_weights).ravel()
    mean = w_mean @ births
    d = births - mean
    cov = ensure_psd((d.T * w_cov) @ d) + 1e-10 * np.eye(2)
    proposal = GaussianBelief(mean, cov)

    if cfg.birth.mu_n == 0.0:
        return NewEvaluation(xi=1.0, proposal=proposal, effective_samples=0)

    chol = np.linalg.cholesky(proposal.cov)
    p_samp = cfg.birth_samples
    psis = mean + rng.standard_normal((p_samp, 2)) @ chol.T
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    dd = np.linalg.solve(chol, (psis - mean).T)
    log_q = -0.5 * (2.0 * np.log(2.0 * np.pi) + logdet + np.sum(dd * dd, axis=0))
    inside = np.hypot(psis[:, 0] - pa[0], psis[:, 1] - pa[1]) <= cfg.birth.d_max
    weights = np.where(inside, cfg.birth.density() * np.exp(-log_q), 0.0)

    # One batched pushforward of the fixed agent sigma points for every
    # usable sample; samples with degenerate geometry are dropped like
    # out-of-disc ones.
    agent_pos = sp_x.points[:, 0:2]
    agent_kap = sp_x.points[:, 4]
    pair_d = np.hypot(psis[:, None, 0] - agent_pos[None, :, 0],
                      psis[:, None, 1] - agent_pos[None, :, 1])
    ok = (weights > 0.0) \
        & np.all(pair_d >= 1e-8, axis=1) \
        & (np.hypot(psis[:, 0] - pa[0], psis[:, 1] - pa[1]) >= 1e-8)
    used = int(np.count_nonzero(ok))
    fa = max(cfg.clutter.mu_fa * cfg.clutter.density(), DENSITY_FLOOR)
    if used == 0:
        return NewEvaluation(xi=1.0, proposal=proposal, effective_samples=0)

    psis_ok = psis[ok]
    y = measurement_fn_batch(
        np.tile(agent_pos, (used, 1)),
        np.tile(agent_kap, used),
        np.repeat(psis_ok, n_x, axis=0),
        pa, False,
    ).reshape(used, n_x, 3)
    for a in ANGLE_DIMS:
        y[:, :, a] = y[:, 0:1, a] + wrap_angle(y[:, :, a] - y[:, 0:1, a])
    mu_p = np.einsum("s,psa->pa", sp_x.mean_weights, y)
    dev = y - mu_p[:, None, :]
    c_z = cfg.noise.cov()
    s_mat = np.einsum("s,psa,psb->pab", sp_x.cov_weights, dev, dev) + c_z
    innov = z - mu_p
    for a in ANGLE_DIMS:
        innov[:, a] = wrap_angle(innov[:, a])
    maha = np.einsum("pa,pab,pb->p", innov, np.linalg.inv(s_mat), innov)
    _, ld = np.linalg.slogdet(s_mat)
    dens = np.exp(-0.5 * (3.0 * np.log(2.0 * np.pi) + ld + maha))
    acc = float(weights[ok] @ dens)
    xi = 1.0 + cfg.birth.mu_n / fa * acc / p_samp
    return NewEvaluation(xi=float(xi), proposal=proposal, effective_samples=used)


def _refine_birth(
    proposal: GaussianBelief,
    z: np.ndarray,
    agent_mean: np.ndarray,
    cfg: FilterConfig,
    pa_pos: np.ndarray,
) -> GaussianBelief:
    """One measurement update of a birth proposal with the agent held fixed."""
    pos = agent_mean[0:2]
    kap = agent_mean[4]
    pa = np.asarray(pa_pos, dtype=float)

    def h(s):
        n = s.shape[0]
        return measurement_fn_batch(np.tile(pos, (n, 1)), np.full(n, kap), s, pa, False)

    try:
        ut = unscented_transform(
            proposal, h, cfg.ut, angle_dims=ANGLE_DIMS, vectorized=True
        )
        refined, _ = kf_update_stacked(proposal, z, cfg.noise.cov(), ut, ANGLE_DIMS)
        return refined
    except (GeometryError, np.linalg.LinAlgError):
        return proposal


def update(
    state: FilterState,
    measurements: MeasurementSet,
    cfg: FilterConfig,
    rng: np.random.Generator,
) -> Tuple[FilterState, StepDiagnostics]:
    """Measurement update: association, mixture collapse, fusion, births.

    ``state`` must already be predicted. The returned state has step
    advanced by one.
    """
    per_anchor_z = measurements.per_anchor
    if len(per_anchor_z) != state.n_anchors:
        raise ValueError("measurement set anchor count mismatch")

    agent_prior = state.agent
    fusion_terms: List[GaussianBelief] = []
    anchor_data = []
    total_iters = 0
    all_converged = True
    total_meas = 0
    xis_out: List[np.ndarray] = []

    for j in range(state.n_anchors):
        z = np.atleast_2d(np.asarray(per_anchor_z[j], dtype=float))
        if z.size == 0:
            z = np.zeros((0, 3))
        m_meas = z.shape[0]
        total_meas += m_meas
        pa = state.pa_positions[j]
        legacy = state.pbos[j]
        evals = [evaluate_legacy(agent_prior, pbo, z, cfg, pa) for pbo in legacy]
        news = [evaluate_new(agent_prior, z[m], cfg, pa, rng) for m in range(m_meas)]
        beta = np.vstack([e.beta_row for e in evals]) if evals else np.zeros((0, m_meas + 1))
        xi = np.array([n.xi for n in news])
        xis_out.append(xi)
        da = loopy_da(
            AssociationInput(beta, xi),
            max_iter=cfg.da_max_iter, tol=cfg.da_tol, method=cfg.da_method,
        )
        total_iters += da.iterations
        all_converged = all_converged and da.converged

        # An anchor without measurements contributes no information gain
        # (every pair posterior would equal the prior), so skip it.
        if m_meas:
            for k, (pbo, ev) in enumerate(zip(legacy, evals)):
                eta = da.eta[k]
                # Collapse the agent-side mixture: prior belief with the
                # no-detection weight, per-measurement stacked posteriors
                # sliced to the agent block otherwise.
                comps = [(float(eta[0]), agent_prior)]
                for m in range(m_meas):
                    comps.append((
                        float(eta[m + 1]),
                        GaussianBelief(
                            ev.post_means[m][:STATE_DIM],
                            ev.post_cov[:STATE_DIM, :STATE_DIM],
                        ),
                    ))
                fusion_terms.append(moment_match(comps))
        anchor_data.append((z, legacy, evals, news, da))

    # Every pair posterior is the same prior updated with one evidence
    # block, so their information gains add onto the prior exactly once.
    agent_post = fuse_with_common_prior(agent_prior, fusion_terms,
                                        angle_dims=(4,))

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
            p_d = cfg.detection.p_d
            # Object position mixture, conditional on existence: the prior
            # component carries only the detected-but-missed share of the
            # no-detection marginal.
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
            if pbo.is_pa or existence >= cfg.pruning_threshold:
                out.append(replace(pbo, belief=belief, existence=existence))
        for m in range(m_meas):
            var0 = da.varsigma[m, 0] if da.varsigma.size else 1.0
            odds = (news[m].xi - 1.0) * var0
            existence = odds / (1.0 + odds)
            if existence < cfg.pruning_threshold:
                continue
            belief = _refine_birth(news[m].proposal, z[m], agent_post.mean, cfg, pa)
            out.append(PBOHypothesis(
                belief=belief, existence=min(existence, 1.0),
                anchor=j, label=next_labels[j], is_pa=False,
            ))
            next_labels[j] += 1
            n_born += 1
        new_pbos.append(_merge_duplicates(out, cfg))

    new_state = FilterState(
        agent=agent_post, pbos=new_pbos, pa_positions=state.pa_positions,
        step=state.step + 1, next_labels=next_labels,
    )
    diag = StepDiagnostics(
        da_iterations=total_iters, da_converged=all_converged,
        n_objects=sum(len(l) for l in new_pbos),
        n_measurements=total_meas, n_born=n_born, xi=xis_out,
    )
    return new_state, diag


def _merge_duplicates(
    tracks: List[PBOHypothesis], cfg: FilterConfig
) -> List[PBOHypothesis]:
    """Absorb near-coincident hypotheses of the same map feature.

    The point-object constraint keeps one feature per measurement, but a
    birth races its own confirmation by one step, so two hypotheses can
    settle on one feature and then share its detections indefinitely.
    Greedily (strongest first) fold any track within ``merge_distance``
    into its dominant neighbour: existences combine as the probability
    that either hypothesis exists, positions by moment matching. The
    anchor itself never merges.
    """
    if cfg.merge_distance <= 0.0 or len(tracks) < 2:
        return tracks
    order = sorted(range(len(tracks)),
                   key=lambda i: (tracks[i].is_pa, tracks[i].existence),
                   reverse=True)
    kept: List[PBOHypothesis] = []
    for idx in order:
        cand = tracks[idx]
        if cand.is_pa:
            kept.append(cand)
            continue
        for i, host in enumerate(kept):
            if host.is_pa:
                continue
            gap = np.linalg.norm(host.belief.mean - cand.belief.mean)
            if gap < cfg.merge_distance:
                belief = moment_match([
                    (max(host.existence, 1e-12), host.belief),
                    (max(cand.existence, 1e-12), cand.belief),
                ])
                existence = 1.0 - (1.0 - host.existence) * (1.0 - cand.existence)
                kept[i] = replace(host, belief=belief,
                                  existence=min(existence, 1.0))
                break
        else:
            kept.append(cand)
    kept.sort(key=lambda t: t.label)
    return kept


def step(
    state: FilterState,
    measurements: MeasurementSet,
    cfg: FilterConfig,
    rng: np.random.Generator,
) -> Tuple[FilterState, StepDiagnostics]:
    """One full filter cycle: predict then update."""
    return update(predict(state, cfg), measurements, cfg, rng)


def estimate(state: FilterState, cfg: FilterConfig) -> Tuple[np.ndarray, List[MapEstimate]]:
    """Point estimates: agent state vector and objects above the report
    threshold (anchors always included)."""
    agent = state.agent.mean.copy()
    agent[4] = float(wrap_angle(agent[4]))
    out: List[MapEstimate] = []
    for anchor_list in state.pbos:
        for pbo in anchor_list:
            if pbo.is_pa or pbo.existence > cfg.detection_threshold:
                out.append(MapEstimate(
                    position=pbo.belief.mean.copy(),
                    existence=pbo.existence,
                    anchor=pbo.anchor,
                    label=pbo.label,
                    is_pa=pbo.is_pa,
                ))
    return agent, out
