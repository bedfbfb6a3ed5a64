"""Wave-cone membership by minimizing the symbol gap over the unit sphere.

The gap of a state difference v is min_{|xi|=1} |A(xi) v|_2 with A the real
principal symbol.  v lies in the wave cone exactly when the gap vanishes.
The minimizer is found by a deterministic coarse sphere grid followed by a
derivative-free simplex polish on a tangent chart; antipodal symmetry of the
objective lets us search a hemisphere only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .operators import DifferentialOperator, principal_symbol_grid

__all__ = ["SphereSearchResult", "symbol_gap", "in_wave_cone", "ellipticity_constant"]

GRID_POINTS_2D = 4096
GRID_POINTS_3D = 8192
GRID_POINTS_HIGH = 2 ** 13
REFINE_MAXITER = 200
REFINE_XATOL = 1e-12
MEMBERSHIP_TOL = 1e-6

_GRID_CACHE: dict[int, tuple[np.ndarray, float]] = {}
_SCALE_CACHE: dict[tuple, float] = {}


@dataclass(frozen=True)
class SphereSearchResult:
    """Minimized symbol gap plus optimizer diagnostics.

    ``gap`` equals the objective evaluated at ``argmin_xi``;
    ``certified_resolution`` is the max spacing of the coarse grid actually
    searched, so callers can judge how global the minimum is.
    """

    gap: float
    argmin_xi: np.ndarray
    grid_points: int
    refinement_iterations: int
    certified_resolution: float


def _hemisphere_grid(d):
    """Deterministic coarse grid on a hemisphere of S^{d-1}.

    Returns (points (G, d), resolution) where resolution is the max over
    grid points of the distance to their nearest neighbour.
    """
    cached = _GRID_CACHE.get(d)
    if cached is not None:
        return cached
    if d == 1:
        pts = np.array([[1.0]])
        res = 0.0
    elif d == 2:
        angles = np.pi * np.arange(GRID_POINTS_2D) / GRID_POINTS_2D
        pts = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        res = 2.0 * math.sin(np.pi / (2 * GRID_POINTS_2D))
    elif d == 3:
        # Fibonacci lattice on the upper hemisphere
        i = np.arange(GRID_POINTS_3D)
        z = (i + 0.5) / GRID_POINTS_3D
        phi = 2.0 * np.pi * i * (math.sqrt(5.0) - 1.0) / 2.0
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        res = _max_nn_distance(pts)
    else:
        from scipy.stats import qmc
        from scipy.special import ndtri

        sob = qmc.Sobol(d, scramble=False)
        sob.fast_forward(1)  # skip the all-zero point
        u = sob.random(GRID_POINTS_HIGH)
        g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
        norms = np.linalg.norm(g, axis=1)
        norms[norms == 0] = 1.0
        pts = g / norms[:, None]
        pts = _to_hemisphere(pts)
        res = _max_nn_distance(pts)
    pts.setflags(write=False)
    _GRID_CACHE[d] = (pts, res)
    return pts, res


def _to_hemisphere(pts):
    out = pts.copy()
    for row in out:
        for x in row:
            if x > 0:
                break
            if x < 0:
                row *= -1.0
                break
    return out


def _max_nn_distance(pts):
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=2)
    return float(dist[:, 1].max())


def _objective(op, v):
    alphas, mats = op.stacked_terms(principal_only=True)
    w = mats @ v  # (T, n)

    def on_points(xis):
        mono = np.prod(xis[..., None, :] ** alphas, axis=-1)
        return np.linalg.norm(mono @ w, axis=-1)

    return on_points


def _canonical_sign(xi):
    for x in xi:
        if x > 1e-14:
            return xi
        if x < -1e-14:
            return -xi
    return xi


def symbol_gap(op: DifferentialOperator, v, *, refine_maxiter=REFINE_MAXITER) -> SphereSearchResult:
    """Global-up-to-resolution minimum of |A(xi) v| over the unit sphere.

    Deterministic: a fixed hemisphere grid picks the starting basin and a
    Nelder-Mead polish on the tangent chart at the best grid point finishes
    (termination once the simplex diameter drops below 1e-12).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (op.ell,):
        raise ValueError(f"state vector has shape {v.shape}, expected ({op.ell},)")
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        raise ValueError("zero state difference: equal states have no wave-cone question")

    objective = _objective(op, v)
    pts, resolution = _hemisphere_grid(op.d)
    values = objective(pts)
    best = int(np.argmin(values))
    xi0 = pts[best]
    best_val = float(values[best])
    iterations = 0

    if op.d > 1 and refine_maxiter > 0:
        # orthonormal tangent chart at xi0
        _, _, vt = np.linalg.svd(xi0[None, :])
        tangent = vt[1:]

        def chart(u):
            x = xi0 + tangent.T @ u
            return x / np.linalg.norm(x)

        def fun(u):
            return float(objective(chart(u)[None, :])[0])

        u0 = np.zeros(op.d - 1)
        simplex = np.vstack([u0, u0 + resolution * np.eye(op.d - 1)])
        res = minimize(
            fun,
            u0,
            method="Nelder-Mead",
            options={
                "maxiter": refine_maxiter,
                "xatol": REFINE_XATOL,
                "fatol": float("inf"),
                "initial_simplex": simplex,
            },
        )
        iterations = int(res.nit)
        if res.fun < best_val:
            xi0 = chart(res.x)
            best_val = float(res.fun)

    xi = _canonical_sign(xi0 / np.linalg.norm(xi0))
    gap = float(objective(xi[None, :])[0])
    xi = xi.copy()
    xi.setflags(write=False)
    return SphereSearchResult(
        gap=gap,
        argmin_xi=xi,
        grid_points=len(pts),
        refinement_iterations=iterations,
        certified_resolution=resolution,
    )


def _operator_scale(op: DifferentialOperator) -> float:
    """Max spectral norm of the principal symbol over the coarse grid."""
    key = op.cache_key
    hit = _SCALE_CACHE.get(key)
    if hit is None:
        pts, _ = _hemisphere_grid(op.d)
        sym = principal_symbol_grid(op, pts)
        hit = float(np.linalg.svd(sym, compute_uv=False)[..., 0].max())
        _SCALE_CACHE[key] = hit
    return hit


def in_wave_cone(op: DifferentialOperator, v, tol: float = MEMBERSHIP_TOL):
    """Decide v in Lambda via gap <= tol * |v| * scale(op).

    Returns (member, SphereSearchResult).  The threshold is relative in both
    the state size and the operator's symbol scale, so rescaling v or the
    coefficients does not flip the verdict.
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    result = symbol_gap(op, v)
    scale = _operator_scale(op)
    vnorm = float(np.linalg.norm(np.asarray(v, dtype=np.float64)))
    member = bool(result.gap <= tol * vnorm * scale)
    return member, result


def ellipticity_constant(op: DifferentialOperator, lam, tol: float = MEMBERSHIP_TOL) -> float:
    """The constant c with |A_spec(xi) lam| >= c |xi|^k, A_spec the full
    spectral symbol; equals (2 pi)^k times the sphere gap.  Only defined
    off the wave cone."""
    member, result = in_wave_cone(op, lam, tol)
    if member:
        raise ValueError("state difference lies in wave cone; ellipticity constant would be zero")
    return float((2.0 * np.pi) ** op.k * result.gap)
