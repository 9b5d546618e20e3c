"""Surrogate machinery for the sparse-coding iterations.

Two pieces make the updates closed-form: a smoothed absolute value whose
gradient is a clipped linear map, and a quadratic upper bound on the l1
penalty that touches it at the current iterate.  Minimizing the bound turns
each update into a diagonally reweighted least-squares solve, which the
matrix inversion lemma reduces to a system of the (small) input dimension.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonConvergence
from .linalg import as_float_array, cg_solve

# Below this input dimension the inner system is factored densely; above it,
# conjugate gradients win because only matrix-vector products are needed.
DENSE_CUTOFF = 32


def soft_clip(e: np.ndarray, margin: float) -> np.ndarray:
    """Gradient of the smoothed absolute value: e/margin clipped to [-1, 1]."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    return np.clip(np.asarray(e, dtype=np.float64) / margin, -1.0, 1.0)


def smooth_l1(e: np.ndarray, margin: float) -> float:
    """Smoothed l1 norm: quadratic within the margin, linear outside.

    Equals a^T e - (margin/2)*||a||^2 with a = soft_clip(e, margin), which
    undershoots the true l1 norm by at most margin/2 per component.
    """
    a = soft_clip(e, margin)
    e = np.asarray(e, dtype=np.float64)
    return float(np.sum(a * e) - 0.5 * margin * np.sum(a * a))


@dataclass(frozen=True)
class SmoothApprox:
    """The smoothed-l1 linearization at one innovation vector."""

    alpha_star: np.ndarray
    margin: float
    innovation: np.ndarray

    @classmethod
    def at(cls, innovation: np.ndarray, margin: float) -> "SmoothApprox":
        innovation = as_float_array(innovation, "innovation")
        return cls(soft_clip(innovation, margin), margin, innovation)


def majorizer_value(x: np.ndarray, anchor: np.ndarray, weight: float) -> float:
    """Quadratic upper bound on weight*||x||_1, tight where |x| = |anchor|.

    Zero anchor components are exact-zero carriers: they contribute nothing
    when the matching x component is zero and +inf otherwise, mirroring the
    absorbing behavior of the reweighted iteration.
    """
    if weight <= 0:
        raise ValueError("weight must be positive")
    x = as_float_array(x, "x")
    anchor = as_float_array(anchor, "anchor")
    mag = np.abs(anchor)
    live = mag > 0
    if np.any(x[~live] != 0):
        return float("inf")
    quad = 0.5 * weight * float(np.sum(x[live] ** 2 / mag[live]))
    const = 0.5 * weight * float(np.sum(mag[live]))
    return quad + const


@dataclass(frozen=True)
class ReweightDiagonal:
    """Diagonal of the inverted majorizer weights: r_k = |v_k| / weight.

    Zero entries are absorbing: a component that reaches exact zero has
    r_k = 0 and every later iterate keeps it at zero.
    """

    r: np.ndarray
    weight: float


def reweight(v: np.ndarray, weight: float) -> ReweightDiagonal:
    if weight <= 0:
        raise ValueError("weight must be positive")
    v = as_float_array(v, "reweight iterate")
    return ReweightDiagonal(np.abs(v) / weight, weight)


def _woodbury(c: np.ndarray, r: np.ndarray, rhs: np.ndarray,
              dense_cutoff: int,
              inner_start: Optional[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Apply T(C,R) = R - R C^T (I + C R C^T)^-1 C R to rhs.

    Returns (result, inner) where inner is the solution of the inner
    system, reusable as a warm start when R changes slowly.
    """
    p = c.shape[0]
    t = r * rhs
    if not np.any(t):
        return np.zeros_like(rhs), np.zeros(p)
    b = c @ t
    if p > dense_cutoff:
        apply = lambda z: z + c @ (r * (c.T @ z))
        try:
            inner = cg_solve(apply, b, tol=1e-10, max_iter=4 * p, x0=inner_start)
        except NonConvergence:
            m = np.eye(p) + (c * r) @ c.T
            inner = np.linalg.solve(m, b)
    else:
        m = np.eye(p) + (c * r) @ c.T
        inner = np.linalg.solve(m, b)
    return t - r * (c.T @ inner), inner


def woodbury_apply(c: np.ndarray, r, rhs: np.ndarray,
                   dense_cutoff: int = DENSE_CUTOFF) -> np.ndarray:
    """Solve the reweighted normal equations through the input-dimension system.

    Equals (C^T C + W)^-1 rhs on the support of r (W the diagonal majorizer
    weights); components with r_k = 0 come back exactly zero.
    """
    c = as_float_array(c, "dictionary")
    if isinstance(r, ReweightDiagonal):
        r = r.r
    r = as_float_array(r, "reweight diagonal")
    rhs = as_float_array(rhs, "rhs")
    if c.shape[1] != rhs.shape[0] or c.shape[1] != r.shape[0]:
        raise ValueError("dictionary, diagonal, and rhs sizes are inconsistent")
    if np.any(r < 0):
        raise ValueError("reweight diagonal must be nonnegative")
    result, _ = _woodbury(c, r, rhs, dense_cutoff, None)
    return result
