"""Gaussian belief arithmetic: sigma points, the unscented transform, mixture
moment matching, Gaussian products, and Kalman-style prediction/update.

All functions are pure and operate on small dense float arrays. Covariance
outputs are symmetrized, and update outputs are repaired to be positive
semidefinite (eigenvalue clipping with a trace-relative jitter).

Angle-valued output dimensions are supported through ``angle_dims``: sigma
point images are re-centered around the central point before moments are
taken, and innovations are wrapped, so transforms never straddle the branch
cut at +-pi.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

__all__ = [
    "ShapeError",
    "FactorizationError",
    "DegenerateMixtureError",
    "GaussianBelief",
    "SigmaPointSet",
    "UTParams",
    "wrap_angle",
    "sigma_points",
    "unscented_transform",
    "moment_match",
    "gaussian_product",
    "kf_predict",
    "kf_update_stacked",
    "gaussian_logpdf",
    "ensure_psd",
]

# Tolerances for covariance validation and repair.
SYM_RTOL = 1e-9
EIG_FLOOR_RTOL = 1e-9
PSD_JITTER_RTOL = 1e-12

LOG_2PI = float(np.log(2.0 * np.pi))


class ShapeError(ValueError):
    """Dimensions of means, covariances, or mapped points disagree."""


class FactorizationError(ValueError):
    """A covariance is unusable: asymmetric, indefinite, or singular."""


class DegenerateMixtureError(ValueError):
    """A mixture carries no mass (all weights zero)."""


def wrap_angle(x):
    """Map angles (radians) into the interval (-pi, pi]."""
    w = np.mod(np.asarray(x, dtype=float), 2.0 * np.pi)
    return np.where(w > np.pi, w - 2.0 * np.pi, w)


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of a Gaussian belief over R^d.

    Construction validates shapes, symmetry (relative tolerance 1e-9) and
    positive semidefiniteness (eigenvalues >= -1e-9 * trace). Zero
    covariance blocks are legal; they represent pinned components.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        if mean.ndim != 1:
            raise ShapeError(f"mean must be a vector, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(
                f"covariance shape {cov.shape} does not match mean dimension {mean.size}"
            )
        scale = max(float(np.abs(cov).max(initial=0.0)), 1e-300)
        if not np.all(np.abs(cov - cov.T) <= SYM_RTOL * scale):
            raise FactorizationError("covariance is not symmetric")
        cov = _sym(cov)
        tr = float(np.trace(cov))
        if tr < 0.0:
            raise FactorizationError("covariance has negative trace")
        # Cheap definiteness probe; the eigen check arbitrates only when
        # the jittered factorization fails (legal for pinned, singular
        # covariances). A Cholesky success implies the eigen floor holds.
        floor = EIG_FLOOR_RTOL * max(tr, 1e-300)
        try:
            np.linalg.cholesky(cov + floor * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            eigs = np.linalg.eigvalsh(cov)
            if eigs.size and eigs[0] < -floor:
                raise FactorizationError(
                    f"covariance is indefinite (min eigenvalue {eigs[0]:.3e})"
                )
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class UTParams:
    """Scaled unscented transform parameters.

    ``kappa=None`` selects the 3-minus-dimension heuristic, which keeps the
    sigma point scaling n + lambda = 3 for alpha = 1 in every dimension.
    """

    alpha: float = 1.0
    beta: float = 2.0
    kappa: Optional[float] = None

    def resolve(self, dim: int) -> Tuple[float, float]:
        """Return (lambda, kappa) for a given state dimension."""
        kappa = 3.0 - dim if self.kappa is None else float(self.kappa)
        lam = self.alpha ** 2 * (dim + kappa) - dim
        return lam, kappa


@dataclass(frozen=True)
class SigmaPointSet:
    """2n+1 sigma points with their mean and covariance weights."""

    points: np.ndarray        # (2n+1, n)
    mean_weights: np.ndarray  # (2n+1,)
    cov_weights: np.ndarray   # (2n+1,)
    lam: float

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition."""
    m = _sym(m)
    w, v = np.linalg.eigh(m)
    tr = max(float(np.trace(m)), 1e-300)
    if w.size and w[0] < -EIG_FLOOR_RTOL * tr:
        raise FactorizationError(
            f"matrix is not PSD (min eigenvalue {w[0]:.3e}); cannot take square root"
        )
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def ensure_psd(m: np.ndarray) -> np.ndarray:
    """Symmetrize and, if needed, clip negative eigenvalues with tiny jitter."""
    m = _sym(np.asarray(m, dtype=float))
    try:
        np.linalg.cholesky(m + 0.0)
        return m
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    jitter = PSD_JITTER_RTOL * max(float(w.sum()), 1e-300)
    return _sym((v * w) @ v.T) + jitter * np.eye(m.shape[0])


def sigma_points(g: GaussianBelief, params: UTParams = UTParams()) -> SigmaPointSet:
    """Generate scaled sigma points for a belief.

    Offsets are columns of the symmetric eigen square root of
    (n + lambda) * cov, so zero-variance directions produce points that
    coincide with the mean.
    """
    n = g.dim
    lam, _ = params.resolve(n)
    if n + lam <= 0.0:
        raise FactorizationError(
            f"n + lambda = {n + lam:.3g} <= 0; choose a larger kappa or alpha"
        )
    root = _psd_sqrt((n + lam) * g.cov)
    points = np.empty((2 * n + 1, n))
    points[0] = g.mean
    points[1 : n + 1] = g.mean + root.T
    points[n + 1 :] = g.mean - root.T
    wm = np.full(2 * n + 1, 1.0 / (2.0 * (n + lam)))
    wc = wm.copy()
    wm[0] = lam / (n + lam)
    wc[0] = wm[0] + (1.0 - params.alpha ** 2 + params.beta)
    return SigmaPointSet(points=points, mean_weights=wm, cov_weights=wc, lam=lam)


def unscented_transform(
    g: GaussianBelief,
    f: Callable[[np.ndarray], np.ndarray],
    params: UTParams = UTParams(),
    angle_dims: Sequence[int] = (),
    vectorized: bool = False,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Propagate a belief through ``f`` and return (mean, cov, crosscov).

    ``f`` maps a state vector to an output vector; it is applied per sigma
    point. With ``vectorized=True``, ``f`` instead receives the whole
    (n_sigma, dim) point matrix and must return the (n_sigma, out) images
    in one call. Output dimensions listed in ``angle_dims`` are treated as
    angles: each point's value is re-centered around the central point's
    value before the weighted moments are formed, so a cluster of angles
    near the branch cut is averaged consistently.

    crosscov has shape (state_dim, out_dim): E[(s - mean_s)(f(s) - mean_f)^T].
    """
    sp = sigma_points(g, params)
    if vectorized:
        t = np.asarray(f(sp.points), dtype=float)
        if t.ndim != 2 or t.shape[0] != sp.points.shape[0]:
            raise ShapeError(
                "vectorized transform must map (n_sigma, dim) to (n_sigma, out)"
            )
    else:
        images = []
        out_dim = None
        for p in sp.points:
            y = np.atleast_1d(np.asarray(f(p), dtype=float))
            if y.ndim != 1:
                raise ShapeError("transform output must be a vector")
            if out_dim is None:
                out_dim = y.size
            elif y.size != out_dim:
                raise ShapeError("transform output dimension varies across sigma points")
            images.append(y)
        t = np.array(images)
    for a in angle_dims:
        t[:, a] = t[0, a] + wrap_angle(t[:, a] - t[0, a])
    mean = sp.mean_weights @ t
    dt = t - mean
    cov = _sym((dt.T * sp.cov_weights) @ dt)
    ds = sp.points - g.mean
    cross = (ds.T * sp.cov_weights) @ dt
    return mean, cov, cross


def moment_match(components: Sequence[Tuple[float, GaussianBelief]]) -> GaussianBelief:
    """Collapse a weighted Gaussian mixture to a single matched Gaussian.

    Weights must be nonnegative with positive total; they are normalized
    internally. The matched covariance includes the spread-of-means term.
    """
    if not components:
        raise DegenerateMixtureError("empty mixture")
    weights = np.array([w for w, _ in components], dtype=float)
    if np.any(weights < 0.0) or not np.all(np.isfinite(weights)):
        raise DegenerateMixtureError("mixture weights must be finite and nonnegative")
    total = weights.sum()
    if total <= 0.0:
        raise DegenerateMixtureError("mixture weights sum to zero")
    weights = weights / total
    dim = components[0][1].dim
    if any(g.dim != dim for _, g in components):
        raise ShapeError("mixture components have mismatched dimensions")
    mean = np.zeros(dim)
    for w, (_, g) in zip(weights, components):
        mean += w * g.mean
    cov = np.zeros((dim, dim))
    for w, (_, g) in zip(weights, components):
        d = g.mean - mean
        cov += w * (g.cov + np.outer(d, d))
    return GaussianBelief(mean, _sym(cov))


def gaussian_product(factors: Sequence[GaussianBelief]) -> GaussianBelief:
    """Normalized product of Gaussian densities (information-form fusion)."""
    if not factors:
        raise DegenerateMixtureError("empty product")
    dim = factors[0].dim
    if any(g.dim != dim for g in factors):
        raise ShapeError("product factors have mismatched dimensions")
    lam_sum = np.zeros((dim, dim))
    eta_sum = np.zeros(dim)
    for g in factors:
        try:
            c, low = cho_factor(g.cov)
        except np.linalg.LinAlgError as exc:
            raise FactorizationError("singular factor covariance in product") from exc
        lam = cho_solve((c, low), np.eye(dim))
        lam_sum += lam
        eta_sum += lam @ g.mean
    try:
        c, low = cho_factor(lam_sum)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("product precision is singular") from exc
    cov = _sym(cho_solve((c, low), np.eye(dim)))
    mean = cov @ eta_sum
    return GaussianBelief(mean, cov)


def _sym_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric matrix with an eigenvalue floor fallback."""
    a = _sym(a)
    try:
        c, low = cho_factor(a)
        inv = cho_solve((c, low), np.eye(a.shape[0]))
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(a)
        floor = max(float(w.max(initial=0.0)), 0.0) * EIG_FLOOR_RTOL + 1e-300
        w = np.maximum(w, floor)
        inv = (v / w) @ v.T
    return _sym(inv)


def fuse_with_common_prior(
    prior: GaussianBelief,
    posteriors: Sequence[GaussianBelief],
    angle_dims: Sequence[int] = (),
) -> GaussianBelief:
    """Combine several updated copies of one prior into a single belief.

    Each posterior must be the same prior conditioned on a distinct block
    of evidence, so the information gains add: the fused precision is the
    prior precision plus the sum of per-posterior precision increments,
    likewise for the information vectors. Exact for linear-Gaussian
    updates of a common prior; a single posterior is returned unchanged up
    to round-off. ``angle_dims`` re-expresses posterior means in the
    prior's angular chart before combining.
    """
    if not posteriors:
        return prior
    lam_prior = _sym_inverse(prior.cov)
    nu_prior = lam_prior @ prior.mean
    lam = lam_prior.copy()
    nu = nu_prior.copy()
    for post in posteriors:
        if post.dim != prior.dim:
            raise ShapeError("fusion posterior dimension mismatch")
        mean = post.mean.copy()
        for a in angle_dims:
            mean[a] = prior.mean[a] + wrap_angle(mean[a] - prior.mean[a])
        lam_k = _sym_inverse(post.cov)
        lam += lam_k - lam_prior
        nu += lam_k @ mean - nu_prior
    cov = ensure_psd(_sym_inverse(lam))
    return GaussianBelief(cov @ nu, cov)


def kf_predict(g: GaussianBelief, a: np.ndarray, c_w: np.ndarray) -> GaussianBelief:
    """Linear-Gaussian prediction: x' = A x + w, w ~ N(0, C_w)."""
    a = np.asarray(a, dtype=float)
    c_w = np.asarray(c_w, dtype=float)
    if a.shape != (g.dim, g.dim) or c_w.shape != (g.dim, g.dim):
        raise ShapeError("transition matrices must be square of state dimension")
    return GaussianBelief(a @ g.mean, _sym(a @ g.cov @ a.T + c_w))


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Log density of N(x; mean, cov) for small dense covariances."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    try:
        c, low = cho_factor(_sym(np.asarray(cov, dtype=float)))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("singular covariance in density evaluation") from exc
    d = x - mean
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    maha = float(d @ cho_solve((c, low), d))
    return -0.5 * (x.size * LOG_2PI + logdet + maha)


def kf_update_stacked(
    joint: GaussianBelief,
    z: np.ndarray,
    c_z: np.ndarray,
    ut: Tuple[np.ndarray, np.ndarray, np.ndarray],
    angle_dims: Sequence[int] = (),
) -> Tuple[GaussianBelief, float]:
    """Measurement update of a (possibly stacked) belief from UT statistics.

    ``ut`` is the (predicted mean, predicted cov, crosscov) triple returned
    by :func:`unscented_transform` for the measurement function evaluated on
    ``joint``. Innovation components in ``angle_dims`` are wrapped. Returns
    the posterior belief and the evidence N(z; z_pred, S) with
    S = predicted cov + C_z.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    mu_t, cov_t, cross = ut
    if mu_t.shape != z.shape:
        raise ShapeError("measurement dimension does not match UT output")
    if cross.shape != (joint.dim, z.size):
        raise ShapeError("crosscov shape does not match joint/measurement dims")
    s = _sym(cov_t + np.asarray(c_z, dtype=float))
    try:
        c, low = cho_factor(s)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("singular innovation covariance") from exc
    gain = cho_solve((c, low), cross.T).T
    innov = z - mu_t
    if len(angle_dims):
        innov = innov.copy()
        for a in angle_dims:
            innov[a] = wrap_angle(innov[a])
    post_mean = joint.mean + gain @ innov
    post_cov = ensure_psd(joint.cov - gain @ s @ gain.T)
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    maha = float(innov @ cho_solve((c, low), innov))
    evidence = float(np.exp(-0.5 * (z.size * LOG_2PI + logdet + maha)))
    return GaussianBelief(post_mean, post_cov), evidence
