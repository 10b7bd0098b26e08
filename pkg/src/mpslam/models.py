"""State, motion, measurement, clutter, and birth models.

The agent state is [p_x, p_y, v_x, v_y, kappa]: planar position, velocity,
and orientation. Motion is a nearly constant velocity model driven by white
acceleration, with an independent orientation random walk. Measurements are
(distance, arrival angle, departure angle) triples with independent
Gaussian noise; false alarms are uniform over [0, d_max] x (-pi, pi]^2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .gaussmath import GaussianBelief, wrap_angle
from .geometry import measurement_fn

__all__ = [
    "AgentState",
    "MotionModel",
    "MeasurementNoise",
    "ClutterModel",
    "BirthModel",
    "DetectionModel",
    "PBOHypothesis",
    "MeasurementSet",
    "build_motion",
    "lhf",
    "clutter_rate",
    "survival_transition",
]

STATE_DIM = 5
MEAS_DIM = 3


@dataclass(frozen=True)
class AgentState:
    """Agent pose: position (m), velocity (m/s), orientation wrapped to (-pi, pi]."""

    position: np.ndarray
    velocity: np.ndarray
    orientation: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2).copy()
        vel = np.asarray(self.velocity, dtype=float).reshape(2).copy()
        pos.flags.writeable = False
        vel.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)
        object.__setattr__(self, "orientation", float(wrap_angle(self.orientation)))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, [self.orientation]])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "AgentState":
        x = np.asarray(x, dtype=float).reshape(STATE_DIM)
        return cls(position=x[0:2], velocity=x[2:4], orientation=float(x[4]))


@dataclass(frozen=True)
class MotionModel:
    """Discrete-time transition x' = A x + w, w ~ N(0, C_x)."""

    transition: np.ndarray  # (5, 5)
    noise_cov: np.ndarray   # (5, 5)
    dt: float
    sigma_a_sq: float
    sigma_kappa_sq: float


def build_motion(dt: float, sigma_a_sq: float, sigma_kappa_sq: float) -> MotionModel:
    """Nearly constant velocity dynamics plus an orientation random walk.

    White-acceleration covariance blocks:
    position/velocity per axis [[dt^4/4, dt^3/2], [dt^3/2, dt^2]] * sigma_a_sq,
    orientation variance sigma_kappa_sq * dt.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if sigma_a_sq < 0.0 or sigma_kappa_sq < 0.0:
        raise ValueError("noise variances must be nonnegative")
    a = np.eye(STATE_DIM)
    a[0, 2] = dt
    a[1, 3] = dt
    c = np.zeros((STATE_DIM, STATE_DIM))
    q_pp = dt ** 4 / 4.0 * sigma_a_sq
    q_pv = dt ** 3 / 2.0 * sigma_a_sq
    q_vv = dt ** 2 * sigma_a_sq
    for axis in range(2):
        c[axis, axis] = q_pp
        c[axis, axis + 2] = q_pv
        c[axis + 2, axis] = q_pv
        c[axis + 2, axis + 2] = q_vv
    c[4, 4] = sigma_kappa_sq * dt
    return MotionModel(
        transition=a, noise_cov=c, dt=dt,
        sigma_a_sq=sigma_a_sq, sigma_kappa_sq=sigma_kappa_sq,
    )


@dataclass(frozen=True)
class MeasurementNoise:
    """Independent noise std devs for distance (m) and both angles (rad)."""

    sigma_d: float
    sigma_aoa: float
    sigma_aod: float

    def __post_init__(self):
        if min(self.sigma_d, self.sigma_aoa, self.sigma_aod) <= 0.0:
            raise ValueError("noise std devs must be positive")

    def cov(self) -> np.ndarray:
        return np.diag([self.sigma_d ** 2, self.sigma_aoa ** 2, self.sigma_aod ** 2])


@dataclass(frozen=True)
class ClutterModel:
    """Poisson false alarms, uniform over [0, d_max] x (-pi, pi]^2."""

    mu_fa: float
    d_max: float

    def __post_init__(self):
        if self.mu_fa < 0.0:
            raise ValueError("mu_fa must be nonnegative")
        if self.d_max <= 0.0:
            raise ValueError("d_max must be positive")

    def density(self) -> float:
        """Constant false-alarm density on the measurement domain."""
        return 1.0 / (self.d_max * (2.0 * np.pi) ** 2)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` false alarms, shape (count, 3)."""
        z = np.empty((count, MEAS_DIM))
        z[:, 0] = rng.uniform(0.0, self.d_max, size=count)
        z[:, 1] = rng.uniform(-np.pi, np.pi, size=count)
        z[:, 2] = rng.uniform(-np.pi, np.pi, size=count)
        return z


@dataclass(frozen=True)
class BirthModel:
    """Poisson newborn objects, uniform on a disc of radius d_max at the anchor."""

    mu_n: float
    d_max: float

    def __post_init__(self):
        if self.mu_n < 0.0:
            raise ValueError("mu_n must be nonnegative")
        if self.d_max <= 0.0:
            raise ValueError("d_max must be positive")

    def density(self) -> float:
        """Uniform position density on the birth disc."""
        return 1.0 / (np.pi * self.d_max ** 2)


@dataclass(frozen=True)
class DetectionModel:
    """Detection probability per visible path and object survival probability."""

    p_d: float
    p_s: float

    def __post_init__(self):
        if not (0.0 < self.p_d <= 1.0):
            raise ValueError("p_d must be in (0, 1]")
        if not (0.0 < self.p_s <= 1.0):
            raise ValueError("p_s must be in (0, 1]")


@dataclass(frozen=True)
class PBOHypothesis:
    """Potential object: position belief, existence probability, identifiers.

    ``is_pa`` marks the physical-anchor object, whose existence stays pinned
    at 1 and whose measurement model is the direct path.
    """

    belief: GaussianBelief
    existence: float
    anchor: int
    label: int
    is_pa: bool = False

    def __post_init__(self):
        r = float(self.existence)
        if not np.isfinite(r) or r < -1e-12 or r > 1.0 + 1e-12:
            raise ValueError(f"existence probability {r} outside [0, 1]")
        object.__setattr__(self, "existence", min(max(r, 0.0), 1.0))
        if self.belief.dim != 2:
            raise ValueError("object belief must be over a 2-D position")


@dataclass(frozen=True)
class MeasurementSet:
    """Measurements of one time step, grouped per anchor.

    ``per_anchor[j]`` has shape (M_j, 3); ``origins[j]`` holds the index of
    the generating anchor image in enumeration order, or -1 for clutter
    (simulator ground truth; the filter never reads it).
    """

    step: int
    per_anchor: List[np.ndarray]
    origins: List[np.ndarray]
    noise: MeasurementNoise


def lhf(
    z: np.ndarray,
    state: AgentState,
    psi: np.ndarray,
    noise: MeasurementNoise,
    pa_pos: np.ndarray,
    direct: bool = False,
) -> float:
    """Likelihood of one measurement given agent state and object position.

    Product of three independent Gaussian factors; angle innovations are
    wrapped to (-pi, pi].
    """
    z = np.asarray(z, dtype=float).reshape(MEAS_DIM)
    h = measurement_fn(state.position, state.orientation, psi, pa_pos, direct)
    innov = np.array([
        z[0] - h[0],
        float(wrap_angle(z[1] - h[1])),
        float(wrap_angle(z[2] - h[2])),
    ])
    sig = np.array([noise.sigma_d, noise.sigma_aoa, noise.sigma_aod])
    return float(np.prod(np.exp(-0.5 * (innov / sig) ** 2) / (np.sqrt(2.0 * np.pi) * sig)))


def clutter_rate(n_s: float, gamma: float) -> float:
    """Mean false alarms implied by a detection threshold gamma."""
    if n_s < 0.0 or gamma < 0.0:
        raise ValueError("n_s and gamma must be nonnegative")
    return float(n_s * np.exp(-gamma ** 2))


def survival_transition(
    pbo: PBOHypothesis, p_s: float, drift_cov: Optional[np.ndarray] = None
) -> PBOHypothesis:
    """Propagate an object hypothesis one step: existence decays by p_s,
    position belief stays (optionally inflated by a drift covariance)."""
    if not (0.0 < p_s <= 1.0):
        raise ValueError("p_s must be in (0, 1]")
    belief = pbo.belief
    if drift_cov is not None:
        belief = GaussianBelief(belief.mean, belief.cov + np.asarray(drift_cov, dtype=float))
    return replace(pbo, belief=belief, existence=p_s * pbo.existence)
