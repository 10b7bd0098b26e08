"""Mirror-source geometry for a 2-D room with straight walls.

Provides virtual anchors (single-bounce mirror images of a physical
anchor), the multipath measurement function mapping agent pose and anchor
image to (distance, arrival angle, departure angle), the inverse birth
mapping, and occlusion tests.

Conventions
-----------
Arrival angles are agent-frame: bearing of the anchor image seen from the
agent minus the agent orientation, wrapped to (-pi, pi]. Departure angles
are global-frame at the physical anchor: toward the agent for the direct
path, toward the agent's mirror image across the generating wall plane for
a single-bounce path. A first-order image determines its generating wall
plane as the perpendicular bisector of the segment from the physical
anchor to the image, so departure angles are computable from the image
position alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .gaussmath import wrap_angle

__all__ = [
    "GeometryError",
    "DomainError",
    "Wall",
    "Environment",
    "VirtualAnchor",
    "reflect_point",
    "mirror_anchor",
    "enumerate_virtual_anchors",
    "measurement_fn",
    "measurement_fn_batch",
    "birth_map",
    "birth_map_batch",
    "segment_intersection",
    "path_blocked",
    "visibility",
]

EPS_LEN = 1e-12
EPS_PARAM = 1e-9


class GeometryError(ValueError):
    """Degenerate geometric configuration (coincident points, zero-length wall)."""


class DomainError(ValueError):
    """Measurement outside the valid domain (nonpositive distance)."""


@dataclass(frozen=True)
class Wall:
    """Straight wall segment; reflective walls spawn mirror images."""

    start: np.ndarray
    end: np.ndarray
    reflective: bool = True

    def __post_init__(self):
        start = np.asarray(self.start, dtype=float).reshape(2).copy()
        end = np.asarray(self.end, dtype=float).reshape(2).copy()
        if float(np.hypot(*(end - start))) < EPS_LEN:
            raise GeometryError("degenerate wall: endpoints coincide")
        start.flags.writeable = False
        end.flags.writeable = False
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)


@dataclass(frozen=True)
class Environment:
    """Room layout: walls, physical anchor positions, and a bounding box."""

    walls: Tuple[Wall, ...]
    pa_positions: np.ndarray           # (J, 2)
    bounds: Tuple[float, float, float, float]  # xmin, ymin, xmax, ymax

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(self.walls))
        pas = np.atleast_2d(np.asarray(self.pa_positions, dtype=float)).copy()
        if pas.ndim != 2 or pas.shape[1] != 2 or pas.shape[0] < 1:
            raise GeometryError("pa_positions must have shape (J, 2) with J >= 1")
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise GeometryError("bounding box is empty")
        if np.any(pas[:, 0] < xmin) or np.any(pas[:, 0] > xmax) \
                or np.any(pas[:, 1] < ymin) or np.any(pas[:, 1] > ymax):
            raise GeometryError("anchor outside the bounding box")
        pas.flags.writeable = False
        object.__setattr__(self, "pa_positions", pas)

    @property
    def n_anchors(self) -> int:
        return self.pa_positions.shape[0]


@dataclass(frozen=True)
class VirtualAnchor:
    """Physical anchor (order 0) or its single-bounce mirror image (order 1)."""

    position: np.ndarray
    pa_index: int
    order: int
    wall_index: Optional[int] = None

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2).copy()
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        if self.order not in (0, 1):
            raise GeometryError("only direct paths and single bounces are modeled")
        if self.order == 1 and self.wall_index is None:
            raise GeometryError("first-order image requires a generating wall")


def reflect_point(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mirror point ``p`` across the infinite line through ``a`` and ``b``."""
    p = np.asarray(p, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    nn = float(d @ d)
    if nn < EPS_LEN ** 2:
        raise GeometryError("cannot reflect across a degenerate line")
    t = float((p - a) @ d) / nn
    foot = a + t * d
    return 2.0 * foot - p


def mirror_anchor(pa: np.ndarray, wall: Wall) -> np.ndarray:
    """Mirror image of an anchor across a wall's line."""
    return reflect_point(pa, wall.start, wall.end)


def enumerate_virtual_anchors(env: Environment, pa_index: int) -> Tuple[VirtualAnchor, ...]:
    """All anchors for one PA: itself first, then one image per reflective wall."""
    pa = env.pa_positions[pa_index]
    out = [VirtualAnchor(position=pa, pa_index=pa_index, order=0)]
    for w_idx, wall in enumerate(env.walls):
        if not wall.reflective:
            continue
        out.append(
            VirtualAnchor(
                position=mirror_anchor(pa, wall),
                pa_index=pa_index,
                order=1,
                wall_index=w_idx,
            )
        )
    return tuple(out)


def measurement_fn_batch(
    pos: np.ndarray,
    kappa: np.ndarray,
    psi: np.ndarray,
    pa_pos: np.ndarray,
    direct: bool,
) -> np.ndarray:
    """Vectorized noiseless measurement: rows of (distance, AOA, AOD).

    ``pos`` is (N, 2), ``kappa`` is (N,), ``psi`` is (N, 2) or (2,)
    broadcast, ``pa_pos`` the physical anchor. ``direct=True`` treats
    ``psi`` as the anchor itself; otherwise as a first-order image.
    """
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 1:
        psi = np.broadcast_to(psi, pos.shape)
    pa = np.asarray(pa_pos, dtype=float).reshape(2)
    diff = psi - pos
    dist = np.hypot(diff[:, 0], diff[:, 1])
    if np.any(dist < 1e-9):
        raise GeometryError("agent coincides with the anchor image")
    aoa = wrap_angle(np.arctan2(diff[:, 1], diff[:, 0]) - kappa)
    if direct:
        dep = pos - psi
        aod = np.arctan2(dep[:, 1], dep[:, 0])
    else:
        # Mirror the agent across the perpendicular bisector of (pa, psi);
        # that bisector is the generating wall plane of the image.
        normal = psi - pa
        nn = np.einsum("ij,ij->i", normal, normal)
        if np.any(nn < EPS_LEN ** 2):
            raise GeometryError("image coincides with its anchor; no wall plane")
        mid = 0.5 * (psi + pa)
        q = pos - mid
        proj = np.einsum("ij,ij->i", q, normal) / nn
        mirrored = pos - 2.0 * proj[:, None] * normal
        dep = mirrored - pa
        aod = np.arctan2(dep[:, 1], dep[:, 0])
    return np.column_stack([dist, wrap_angle(aoa), wrap_angle(aod)])


def measurement_fn(
    pos: np.ndarray,
    kappa: float,
    psi: np.ndarray,
    pa_pos: np.ndarray,
    direct: bool = False,
) -> np.ndarray:
    """Noiseless (distance, AOA, AOD) for one agent pose and one anchor image."""
    out = measurement_fn_batch(
        np.asarray(pos, dtype=float).reshape(1, 2),
        np.array([kappa], dtype=float),
        np.asarray(psi, dtype=float).reshape(2),
        pa_pos,
        direct,
    )
    return out[0]


def birth_map_batch(pos: np.ndarray, kappa: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorized inverse of the range/AOA part: candidate image positions."""
    pos = np.atleast_2d(np.asarray(pos, dtype=float))
    kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if np.any(z[:, 0] <= 0.0):
        raise DomainError("measured distance must be positive")
    bearing = kappa + z[:, 1]
    return pos + z[:, 0:1] * np.column_stack([np.cos(bearing), np.sin(bearing)])


def birth_map(pos: np.ndarray, kappa: float, z: np.ndarray) -> np.ndarray:
    """Map one (distance, AOA, AOD) measurement back to an image position."""
    out = birth_map_batch(
        np.asarray(pos, dtype=float).reshape(1, 2),
        np.array([kappa], dtype=float),
        np.asarray(z, dtype=float).reshape(1, 3),
    )
    return out[0]


def segment_intersection(
    p: np.ndarray, q: np.ndarray, a: np.ndarray, b: np.ndarray
) -> Optional[Tuple[float, float]]:
    """Line parameters (t, u) with p + t(q-p) == a + u(b-a), or None if parallel."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = q - p
    s = b - a
    denom = r[0] * s[1] - r[1] * s[0]
    scale = max(np.abs(r).max(initial=0.0) * np.abs(s).max(initial=0.0), 1e-300)
    if abs(denom) < 1e-14 * scale:
        return None
    w = a - p
    t = (w[0] * s[1] - w[1] * s[0]) / denom
    u = (w[0] * r[1] - w[1] * r[0]) / denom
    return t, u


def path_blocked(
    p: np.ndarray,
    q: np.ndarray,
    walls: Sequence[Wall],
    exclude: Sequence[int] = (),
) -> bool:
    """True if the open segment p-q crosses any wall not in ``exclude``."""
    excl = set(exclude)
    for idx, wall in enumerate(walls):
        if idx in excl:
            continue
        hit = segment_intersection(p, q, wall.start, wall.end)
        if hit is None:
            continue
        t, u = hit
        if EPS_PARAM < t < 1.0 - EPS_PARAM and -EPS_PARAM <= u <= 1.0 + EPS_PARAM:
            return True
    return False


def visibility(pos: np.ndarray, va: VirtualAnchor, env: Environment) -> bool:
    """Whether the propagation path for this anchor image exists at ``pos``.

    Direct paths need a clear line of sight. Single-bounce paths need the
    agent-to-image ray to meet the generating wall inside its extent, and
    both legs of the reflected path to be unobstructed by other walls.
    """
    pos = np.asarray(pos, dtype=float).reshape(2)
    if va.order == 0:
        return not path_blocked(pos, va.position, env.walls)
    wall = env.walls[va.wall_index]
    hit = segment_intersection(pos, va.position, wall.start, wall.end)
    if hit is None:
        return False
    t, u = hit
    if not (EPS_PARAM < t < 1.0 - EPS_PARAM):
        return False
    if not (-EPS_PARAM <= u <= 1.0 + EPS_PARAM):
        return False
    reflection = pos + t * (va.position - pos)
    pa = env.pa_positions[va.pa_index]
    if path_blocked(pos, reflection, env.walls, exclude=(va.wall_index,)):
        return False
    if path_blocked(reflection, pa, env.walls, exclude=(va.wall_index,)):
        return False
    return True
