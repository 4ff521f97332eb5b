"""Log densities, gradients, and constraints of the latent random effects.

Three building blocks: an intrinsic conditional autoregressive (ICAR) field
over the region graph, a first-order random walk (RW1) over quarters, and iid
Gaussian noise.  The two intrinsic fields are improper with rank deficiency
one on a connected index set; their normalizing constants use rank J-1 and
T-1 so that the precision conditionals stay proper.  A stationary AR(1)
alternative to the random walk is provided with a fixed autocorrelation.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import SpecError
from .panel import RegionGraph

LOG_2PI = math.log(2.0 * math.pi)
_SUM_TOL = 1e-10


def center(w: np.ndarray) -> np.ndarray:
    """Subtract the mean; idempotent, output sums to zero."""
    w = np.asarray(w, dtype=float)
    return w - w.mean()


def _require_centered(w: np.ndarray, what: str) -> None:
    if abs(float(np.sum(w))) > _SUM_TOL * max(1.0, float(np.abs(w).max(initial=0.0)) * w.size):
        raise SpecError(f"{what} must satisfy the sum-to-zero constraint")


def icar_quadform(w: np.ndarray, graph: RegionGraph) -> float:
    """Sum of squared differences over undirected edges."""
    q = 0.0
    for i, k in graph.edges():
        d = w[i - 1] - w[k - 1]
        q += d * d
    return q


def icar_logdensity(w: np.ndarray, tau: float, graph: RegionGraph) -> float:
    """Log density of the ICAR field at w under precision tau.

    Requires w centered; the quadratic form depends only on differences, so
    the density is invariant to a level shift applied before centering.
    """
    w = np.asarray(w, dtype=float)
    if w.shape[0] != graph.num_regions:
        raise SpecError("field length must match the number of regions")
    _require_centered(w, "ICAR field")
    rank = graph.num_regions - 1
    return 0.5 * rank * (math.log(tau) - LOG_2PI) - 0.5 * tau * icar_quadform(w, graph)


def icar_grad(w: np.ndarray, tau: float, graph: RegionGraph) -> np.ndarray:
    """Gradient of icar_logdensity with respect to w: -tau * (D - A) w."""
    w = np.asarray(w, dtype=float)
    grad = -tau * graph.degrees() * w
    for i, k in graph.edges():
        grad[i - 1] += tau * w[k - 1]
        grad[k - 1] += tau * w[i - 1]
    return grad


def structure_matrix(graph: RegionGraph) -> np.ndarray:
    """Dense ICAR structure matrix Q = D - A."""
    J = graph.num_regions
    Q = np.zeros((J, J))
    np.fill_diagonal(Q, graph.degrees().astype(float))
    for i, k in graph.edges():
        Q[i - 1, k - 1] = -1.0
        Q[k - 1, i - 1] = -1.0
    return Q


def rw1_quadform(w: np.ndarray) -> float:
    d = np.diff(np.asarray(w, dtype=float))
    return float(d @ d)


def rw1_logdensity(w: np.ndarray, tau: float) -> float:
    """Log density of the intrinsic first-order random walk at w."""
    w = np.asarray(w, dtype=float)
    if w.shape[0] < 2:
        raise SpecError("random walk needs at least two time points")
    _require_centered(w, "random-walk field")
    rank = w.shape[0] - 1
    return 0.5 * rank * (math.log(tau) - LOG_2PI) - 0.5 * tau * rw1_quadform(w)


def rw1_grad(w: np.ndarray, tau: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    grad = np.zeros_like(w)
    d = np.diff(w)
    grad[:-1] += tau * d
    grad[1:] -= tau * d
    return grad


def rw1_structure_matrix(T: int) -> np.ndarray:
    """Tridiagonal RW1 structure matrix."""
    R = np.zeros((T, T))
    for t in range(T - 1):
        R[t, t] += 1.0
        R[t + 1, t + 1] += 1.0
        R[t, t + 1] -= 1.0
        R[t + 1, t] -= 1.0
    return R


def ar1_quadform(w: np.ndarray, rho: float) -> float:
    w = np.asarray(w, dtype=float)
    q = (1.0 - rho * rho) * w[0] * w[0]
    resid = w[1:] - rho * w[:-1]
    return float(q + resid @ resid)


def ar1_logdensity(w: np.ndarray, tau: float, rho: float) -> float:
    """Log density of a stationary AR(1) with fixed |rho| < 1.

    Proper on the full T dimensions; the marginal variance of each point is
    1 / (tau * (1 - rho^2)).
    """
    if not abs(rho) < 1.0:
        raise SpecError("AR(1) autocorrelation must satisfy |rho| < 1")
    w = np.asarray(w, dtype=float)
    T = w.shape[0]
    if T < 2:
        raise SpecError("AR(1) needs at least two time points")
    return (0.5 * T * (math.log(tau) - LOG_2PI)
            + 0.5 * math.log1p(-rho * rho)
            - 0.5 * tau * ar1_quadform(w, rho))


def ar1_grad(w: np.ndarray, tau: float, rho: float) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    grad = np.zeros_like(w)
    grad[0] = -tau * (1.0 - rho * rho) * w[0]
    resid = w[1:] - rho * w[:-1]
    grad[1:] -= tau * resid
    grad[:-1] += tau * rho * resid
    return grad


def iid_logdensity(x: np.ndarray, tau: float) -> float:
    """Sum of independent N(0, 1/tau) log densities."""
    if tau <= 0:
        raise SpecError("precision must be positive")
    x = np.asarray(x, dtype=float)
    return 0.5 * x.size * (math.log(tau) - LOG_2PI) - 0.5 * tau * float(np.sum(x * x))


def iid_grad(x: np.ndarray, tau: float) -> np.ndarray:
    return -tau * np.asarray(x, dtype=float)
