"""Synthetic scenario construction and measurement generation.

A scenario bundles the room geometry, the true agent trajectory (a smooth
closed loop through waypoints), the anchor images implied by the walls,
and the measurement models.  Measurement generation for step ``n`` is a
pure function of ``(seed, n)`` via a counter-based bit generator, so steps
can be produced in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import CubicSpline

from .config import SCHEMA, section
from .gaussmath import GaussianBelief, wrap_angle
from .geometry import (
    Environment,
    GeometryError,
    VirtualAnchor,
    Wall,
    enumerate_virtual_anchors,
    measurement_fn,
    path_blocked,
    visibility,
)
from .models import (
    BirthModel,
    ClutterModel,
    DetectionModel,
    MeasurementNoise,
    MeasurementSet,
)


@dataclass(frozen=True)
class RFParams:
    """Front-end description carried as run metadata."""

    carrier_hz: float = 6.0e9
    bandwidth_hz: float = 5.0e8
    rolloff: float = 0.6
    array_shape: Tuple[int, int] = (3, 3)
    element_spacing: float = 0.25  # in wavelengths
    tx_power_db: float = 40.0
    reflection_loss_db: float = 3.0
    snr_db: float = 9.0

    def as_dict(self) -> Dict[str, object]:
        return {
            "carrier_hz": self.carrier_hz,
            "bandwidth_hz": self.bandwidth_hz,
            "rolloff": self.rolloff,
            "array_shape": list(self.array_shape),
            "element_spacing": self.element_spacing,
            "tx_power_db": self.tx_power_db,
            "reflection_loss_db": self.reflection_loss_db,
            "snr_db": self.snr_db,
        }


@dataclass(frozen=True)
class Scenario:
    """Immutable world description plus ground truth."""

    env: Environment
    trajectory: np.ndarray  # (n_steps, 5) true state vectors
    anchors: Tuple[Tuple[VirtualAnchor, ...], ...]  # per PA, image 0 = PA
    rf: RFParams
    noise: MeasurementNoise
    clutter: ClutterModel
    detection: DetectionModel
    birth: BirthModel
    seed: int
    dt: float = 1.0

    def __post_init__(self):
        traj = np.asarray(self.trajectory, dtype=float)
        if traj.ndim != 2 or traj.shape[1] != 5 or traj.shape[0] < 1:
            raise GeometryError("trajectory must be (n_steps, 5)")
        xmin, ymin, xmax, ymax = self.env.bounds
        pos = traj[:, :2]
        if np.any(pos[:, 0] <= xmin) or np.any(pos[:, 0] >= xmax) \
                or np.any(pos[:, 1] <= ymin) or np.any(pos[:, 1] >= ymax):
            raise GeometryError("trajectory leaves the room")
        traj = traj.copy()
        traj.flags.writeable = False
        object.__setattr__(self, "trajectory", traj)

    @property
    def n_steps(self) -> int:
        return self.trajectory.shape[0]

    @property
    def n_anchors(self) -> int:
        return len(self.anchors)

    def true_state(self, n: int) -> np.ndarray:
        return self.trajectory[n]

    def image_positions(self, j: int) -> np.ndarray:
        """(n_images, 2) positions of anchor j's images, PA first."""
        return np.array([va.position for va in self.anchors[j]])


def _loop_trajectory(
    center: np.ndarray,
    radii: Sequence[float],
    n_steps: int,
    dt: float,
) -> np.ndarray:
    """Closed smooth loop through evenly-phased waypoints.

    Returns (n_steps, 5) rows [p_x, p_y, v_x, v_y, kappa] with the heading
    aligned to the velocity. The phase origin points toward negative x so
    the loop opens and closes on the anchor side of the room.
    """
    radii = np.asarray(radii, dtype=float)
    n_way = radii.size
    phases = np.pi + 2.0 * np.pi * np.arange(n_way + 1) / n_way
    r = np.append(radii, radii[0])
    points = center + np.column_stack([r * np.cos(phases), r * np.sin(phases)])
    knots = np.linspace(0.0, 1.0, n_way + 1)
    spline = CubicSpline(knots, points, axis=0, bc_type="periodic")
    s = np.arange(n_steps) / n_steps
    pos = spline(s)
    vel = spline(s, 1) / n_steps / dt
    kappa = np.arctan2(vel[:, 1], vel[:, 0])
    return np.column_stack([pos, vel, kappa])


def build_scenario(cfg: Optional[Mapping[str, object]] = None,
                   **overrides: object) -> Scenario:
    """Scenario from scenario-section config values.

    ``cfg`` holds keys with the ``scenario.`` prefix stripped (missing keys
    take schema defaults); ``overrides`` are applied on top.
    """
    values = {key[len("scenario."):]: entry[0]
              for key, entry in SCHEMA.items() if key.startswith("scenario.")}
    values.update(cfg or {})
    values.update(overrides)
    unknown = set(values) - {k[len("scenario."):]
                             for k in SCHEMA if k.startswith("scenario.")}
    if unknown:
        raise GeometryError(f"unknown scenario keys: {sorted(unknown)}")

    w, h = float(values["room_width"]), float(values["room_height"])
    corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)]
    walls = [Wall(np.array(corners[i]), np.array(corners[(i + 1) % 4]))
             for i in range(4)]
    if values["obstruction"]:
        walls.append(Wall(
            np.array([values["obstruction_x1"], values["obstruction_y1"]],
                     dtype=float),
            np.array([values["obstruction_x2"], values["obstruction_y2"]],
                     dtype=float),
            reflective=False,
        ))
    pas = np.asarray(values["pa_positions"], dtype=float).reshape(-1, 2)
    env = Environment(walls=tuple(walls), pa_positions=pas,
                      bounds=(0.0, 0.0, w, h))
    anchors = tuple(enumerate_virtual_anchors(env, j)
                    for j in range(pas.shape[0]))

    center = np.array([values["center_x"], values["center_y"]], dtype=float)
    traj = _loop_trajectory(center, values["radii"],
                            int(values["n_steps"]), float(values["dt"]))
    for n in range(traj.shape[0] - 1):
        if path_blocked(traj[n, :2], traj[n + 1, :2], walls[4:]):
            raise GeometryError("trajectory walks through the occluding wall")

    rf = RFParams(
        carrier_hz=float(values["carrier_hz"]),
        bandwidth_hz=float(values["bandwidth_hz"]),
        rolloff=float(values["rolloff"]),
        array_shape=(int(values["array_rows"]), int(values["array_cols"])),
        element_spacing=float(values["element_spacing"]),
        tx_power_db=float(values["tx_power_db"]),
        reflection_loss_db=float(values["reflection_loss_db"]),
        snr_db=float(values["snr_db"]),
    )
    return Scenario(
        env=env,
        trajectory=traj,
        anchors=anchors,
        rf=rf,
        noise=MeasurementNoise(
            sigma_d=float(values["sigma_d"]),
            sigma_aoa=np.radians(float(values["sigma_aoa_deg"])),
            sigma_aod=np.radians(float(values["sigma_aod_deg"])),
        ),
        clutter=ClutterModel(mu_fa=float(values["mu_fa"]),
                             d_max=float(values["d_max"])),
        detection=DetectionModel(p_d=float(values["p_d"]), p_s=0.999),
        birth=BirthModel(mu_n=0.1, d_max=float(values["d_max"])),
        seed=int(values["seed"]),
        dt=float(values["dt"]),
    )


def scenario_from_config(cfg: Mapping[str, object]) -> Scenario:
    """Scenario from a fully-resolved dotted-key config.

    Filter-block survival and birth intensities are folded into the model
    metadata so the scenario is self-describing.
    """
    scn = build_scenario(section(cfg, "scenario"))
    fil = section(cfg, "filter")
    return replace(
        scn,
        detection=DetectionModel(p_d=scn.detection.p_d,
                                 p_s=float(fil["p_s"])),
        birth=BirthModel(mu_n=float(fil["mu_n"]), d_max=scn.birth.d_max),
    )


def step_rng(seed: int, n: int) -> np.random.Generator:
    """Counter-based stream for step ``n``: order-independent and stable."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([int(seed), int(n)]))
    )


def visible_images(scenario: Scenario, n: int, j: int) -> List[int]:
    """Indices of anchor j's images with an open propagation path."""
    pos = scenario.trajectory[n, :2]
    return [i for i, va in enumerate(scenario.anchors[j])
            if visibility(pos, va, scenario.env)]


def generate_measurements(scenario: Scenario, n: int) -> MeasurementSet:
    """Detections of visible images plus clutter, shuffled, for step n.

    Origin labels: 0 for clutter, ``i + 1`` for anchor image ``i`` (so the
    direct path is origin 1).  Deterministic given (scenario.seed, n).
    """
    if not 0 <= n < scenario.n_steps:
        raise IndexError(f"step {n} outside 0..{scenario.n_steps - 1}")
    rng = step_rng(scenario.seed, n)
    state = scenario.trajectory[n]
    pos, kappa = state[:2], state[4]
    scale = np.array([scenario.noise.sigma_d, scenario.noise.sigma_aoa,
                      scenario.noise.sigma_aod])
    per_anchor: List[np.ndarray] = []
    origins: List[np.ndarray] = []
    for j in range(scenario.n_anchors):
        pa = scenario.env.pa_positions[j]
        rows: List[np.ndarray] = []
        labels: List[int] = []
        for i in visible_images(scenario, n, j):
            if rng.random() >= scenario.detection.p_d:
                continue
            va = scenario.anchors[j][i]
            z = measurement_fn(pos, kappa, va.position, pa,
                               direct=(va.order == 0))
            z = z + rng.standard_normal(3) * scale
            z[1:] = wrap_angle(z[1:])
            if 0.0 < z[0] <= scenario.clutter.d_max:
                rows.append(z)
                labels.append(i + 1)
        n_fa = int(rng.poisson(scenario.clutter.mu_fa))
        if n_fa:
            rows.extend(scenario.clutter.sample(rng, n_fa))
            labels.extend([0] * n_fa)
        if rows:
            z_all = np.vstack(rows)
            lab = np.array(labels, dtype=int)
            order = rng.permutation(len(rows))
            per_anchor.append(z_all[order])
            origins.append(lab[order])
        else:
            per_anchor.append(np.zeros((0, 3)))
            origins.append(np.zeros(0, dtype=int))
    return MeasurementSet(step=n, per_anchor=per_anchor, origins=origins,
                          noise=scenario.noise)


def initial_belief(
    scenario: Scenario,
    rng: np.random.Generator,
    sigma_p: float = 0.1,
    sigma_v: float = 0.01,
    sigma_kappa: float = np.radians(10.0),
) -> GaussianBelief:
    """Gaussian prior drawn around the true initial state."""
    stds = np.array([sigma_p, sigma_p, sigma_v, sigma_v, sigma_kappa])
    mean = scenario.trajectory[0] + rng.standard_normal(5) * stds
    mean = mean.copy()
    mean[4] = wrap_angle(mean[4])
    return GaussianBelief(mean, np.diag(stds ** 2))


def measurement_rows(ms: MeasurementSet) -> List[Tuple[int, int, float, float, float, int]]:
    """Flatten a measurement set into (n, j, z_d, z_aoa, z_aod, origin) rows."""
    rows = []
    for j, (z, lab) in enumerate(zip(ms.per_anchor, ms.origins)):
        for m in range(z.shape[0]):
            rows.append((ms.step, j, float(z[m, 0]), float(z[m, 1]),
                         float(z[m, 2]), int(lab[m])))
    return rows
