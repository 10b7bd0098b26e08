"""Probabilistic measurement-to-object association by loopy belief
propagation on the bipartite association graph.

Inputs are the per-object likelihood tables ``beta`` (K objects x M+1
columns; column 0 is the missed/nonexistent weight) and the per-measurement
newborn weights ``xi``. Outputs are the object-side association marginals
``eta`` (K x M+1) and the measurement-side marginals ``varsigma``
(M x K+1; column 0 means "not from any tracked object").

The message scheme is the standard scalable one: with object-to-measurement
messages zeta and measurement-to-object messages nu,

    zeta[k][m] = beta[k][m] / (beta[k][0] + sum_{m' != m} beta[k][m'] nu[m'][k])
    nu[m][k]   = 1 / (xi[m] + sum_{k' != k} zeta[k'][m])

iterated until the largest nu change is below tolerance. On association
trees these messages are exact; on dense ambiguous tables their fixed point
can miss the true marginals by up to ~0.1 total variation per row. Small
problems (at most 4 objects and 4 measurements) are therefore marginalized
exactly by enumerating admissible assignments, which costs at most a few
hundred weight products, less than one message sweep cap. Messages are
always computed, so downstream consumers of ``nu`` see BP semantics
regardless of the marginalization path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels

__all__ = [
    "NumericalError",
    "AssociationInput",
    "AssociationOutput",
    "exclusion_psi",
    "exclusion_gamma",
    "loopy_da",
]


class NumericalError(RuntimeError):
    """Non-finite values appeared during message passing."""


@dataclass(frozen=True)
class AssociationInput:
    """Likelihood tables for one anchor: beta (K, M+1) and xi (M,)."""

    beta: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float)).copy()
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float)).copy()
        if beta.ndim != 2 or beta.shape[1] != xi.size + 1:
            raise ValueError(
                f"beta shape {beta.shape} inconsistent with {xi.size} measurements"
            )
        if np.any(beta < 0.0) or np.any(xi < 0.0):
            raise ValueError("association weights must be nonnegative")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(xi))):
            raise ValueError("association weights must be finite")
        if beta.shape[0] and np.any(beta.sum(axis=1) <= 0.0):
            raise ValueError("every beta row needs positive total mass")
        beta.flags.writeable = False
        xi.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "xi", xi)

    @property
    def n_objects(self) -> int:
        return self.beta.shape[0]

    @property
    def n_measurements(self) -> int:
        return self.xi.size


@dataclass(frozen=True)
class AssociationOutput:
    """Marginals and diagnostics from message passing.

    ``nu`` holds the converged measurement-to-object messages, reused by the
    particle baseline as soft association weights.
    """

    eta: np.ndarray       # (K, M+1), rows sum to 1
    varsigma: np.ndarray  # (M, K+1), rows sum to 1
    nu: np.ndarray        # (M, K)
    iterations: int
    converged: bool


def exclusion_psi(a_k: int, abar_m: int, k: int, m: int) -> int:
    """Pairwise consistency of object- and measurement-side assignments.

    Zero iff the two variables contradict: object k claims measurement m
    while measurement m names a different source, or vice versa.
    """
    if a_k == m and abar_m != k:
        return 0
    if abar_m == k and a_k != m:
        return 0
    return 1


def exclusion_gamma(abar_m: int, rbar_m: int) -> int:
    """A newborn-side assignment may only name an object that exists."""
    return 0 if (abar_m != 0 and rbar_m == 0) else 1


# Problems up to this size are marginalized exactly.
EXACT_MAX_OBJECTS = 4
EXACT_MAX_MEASUREMENTS = 4


def _exact_marginals(beta, xi):
    """Exact marginals by depth-first enumeration of admissible assignments.

    Returns (eta, varsigma) unnormalized, or None if all assignments carry
    zero weight. Cost is bounded by sum_j C(K,j) C(M,j) j! terms.
    """
    k_obj = beta.shape[0]
    m_meas = xi.size
    eta = np.zeros((k_obj, m_meas + 1))
    varsigma = np.zeros((m_meas, k_obj + 1))
    assignment = np.zeros(k_obj, dtype=int)
    total = [0.0]

    def descend(k, weight):
        if weight == 0.0:
            return
        if k == k_obj:
            w = weight
            for m in range(1, m_meas + 1):
                if m not in assignment[:k_obj]:
                    w *= xi[m - 1]
            if w == 0.0:
                return
            total[0] += w
            for kk in range(k_obj):
                eta[kk, assignment[kk]] += w
            for m in range(1, m_meas + 1):
                hits = np.flatnonzero(assignment == m)
                varsigma[m - 1, hits[0] + 1 if hits.size else 0] += w
            return
        for m in range(m_meas + 1):
            if m > 0 and m in assignment[:k]:
                continue
            assignment[k] = m
            descend(k + 1, weight * beta[k, m])
        assignment[k] = 0

    descend(0, 1.0)
    if not np.isfinite(total[0]) or total[0] <= 0.0:
        return None
    return eta, varsigma


def loopy_da(
    inp: AssociationInput,
    max_iter: int = 100000,
    tol: float = 1e-6,
    damping: float = 0.0,
    method: str = "auto",
) -> AssociationOutput:
    """Compute association marginals.

    ``method`` selects the marginalization path: "bp" assembles marginals
    from converged messages, "exact" enumerates admissible assignments,
    "auto" enumerates when the problem is small enough and falls back to
    message assembly otherwise. Messages are iterated in every mode.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    if not (0.0 <= damping < 1.0):
        raise ValueError("damping must be in [0, 1)")
    if method not in ("auto", "bp", "exact"):
        raise ValueError("method must be one of auto, bp, exact")
    k_obj = inp.n_objects
    m_meas = inp.n_measurements

    nu, zeta, iters, converged = kernels.da_messages(
        inp.beta, inp.xi, max_iter, tol, damping
    )
    nu = np.asarray(nu, dtype=float)
    zeta = np.asarray(zeta, dtype=float)

    exact = None
    want_exact = method == "exact" or (
        method == "auto"
        and k_obj <= EXACT_MAX_OBJECTS
        and m_meas <= EXACT_MAX_MEASUREMENTS
    )
    if want_exact:
        exact = _exact_marginals(inp.beta, inp.xi)
        if exact is None and method == "exact":
            raise NumericalError("all admissible assignments have zero weight")

    if exact is not None:
        eta, varsigma = exact
    else:
        eta = np.array(inp.beta, dtype=float, copy=True)
        if m_meas and k_obj:
            eta[:, 1:] *= nu.T
        varsigma = np.empty((m_meas, k_obj + 1))
        if m_meas:
            varsigma[:, 0] = inp.xi
            if k_obj:
                varsigma[:, 1:] = zeta.T

    row = eta.sum(axis=1, keepdims=True)
    if k_obj and (not np.all(np.isfinite(row)) or np.any(row <= 0.0)):
        raise NumericalError("object association marginals are degenerate")
    if k_obj:
        eta = eta / row
    if m_meas:
        vrow = varsigma.sum(axis=1, keepdims=True)
        if not np.all(np.isfinite(vrow)):
            raise NumericalError("measurement association marginals are degenerate")
        # A measurement no hypothesis can explain defaults to "not from a
        # tracked object".
        dead = vrow[:, 0] <= 0.0
        varsigma[dead] = 0.0
        varsigma[dead, 0] = 1.0
        vrow[dead] = 1.0
        varsigma = varsigma / vrow

    if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(varsigma))):
        raise NumericalError("association marginals contain non-finite entries")
    return AssociationOutput(
        eta=eta, varsigma=varsigma, nu=nu, iterations=int(iters), converged=bool(converged)
    )
