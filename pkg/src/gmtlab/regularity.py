"""Ahlfors-regularity profiling and corkscrew searches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boundary import surface_ball
from .errors import ScaleTooSmall


@dataclass
class AhlforsProfile:
    centers: np.ndarray
    scale_grid: np.ndarray
    ratios: np.ndarray                # (n_centers, n_scales): sigma(B)/r^{n-1}
    C_A_hat: float
    sup_at: tuple = None              # (center_idx, scale_idx) attaining ratio sup
    inf_at: tuple = None


@dataclass
class CorkscrewResult:
    center: np.ndarray
    radius: float
    side: str
    point: np.ndarray = None          # absent (None) when no clearance found
    achieved_M: float = np.inf
    clearance: float = 0.0

    @property
    def found(self):
        return self.point is not None


def ahlfors_profile(mesh, centers, scale_grid) -> AhlforsProfile:
    """sigma(B(x,r)) / r^{n-1} over the grid; C_A_hat = max(sup, 1/inf)."""
    centers = np.atleast_2d(np.asarray(centers, float))
    centers = np.array([mesh.snap_to_boundary(c) for c in centers])
    scale_grid = np.asarray(scale_grid, float)
    if scale_grid.min() < mesh.r_min * 0.75:
        raise ScaleTooSmall(
            f"scale {scale_grid.min():.3g} below quadrature floor "
            f"{mesh.r_min * 0.75:.3g} (3x max facet diameter)"
        )
    n = mesh.dimension
    ratios = np.zeros((len(centers), len(scale_grid)))
    for i, c in enumerate(centers):
        for j, r in enumerate(scale_grid):
            ratios[i, j] = surface_ball(mesh, c, r, snap=False).measure / r ** (n - 1)
    sup_idx = np.unravel_index(np.argmax(ratios), ratios.shape)
    inf_idx = np.unravel_index(np.argmin(ratios), ratios.shape)
    c_hat = max(ratios.max(), 1.0 / ratios.min())
    return AhlforsProfile(centers, scale_grid, ratios, float(c_hat),
                          sup_at=sup_idx, inf_at=inf_idx)


def _level_grid(center, h, m, dim):
    axes = [np.linspace(center[d] - h, center[d] + h, m) for d in range(dim)]
    G = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in G], axis=1)


def corkscrew_search(mesh, x, r, side="interior", levels=3, m=16) -> CorkscrewResult:
    """Maximize corkscrew clearance min(dist-to-boundary, r - |X - x|).

    Multi-resolution grid: `levels` rounds of an m^dim grid zoomed on the
    incumbent.  Clearance is 1-Lipschitz, so a grid of pitch h certifies
    the optimum within h.
    """
    x = np.asarray(x, float)
    sign = -1.0 if side == "interior" else 1.0
    best_pt, best_val = None, -np.inf
    center, h = x, r
    for _ in range(levels):
        P = _level_grid(center, h, m, mesh.dimension)
        inside_ball = np.linalg.norm(P - x, axis=1) <= r
        P = P[inside_ball]
        if len(P) == 0:
            break
        sd = mesh.signed_distance(P)
        clearance = np.minimum(sign * sd, r - np.linalg.norm(P - x, axis=1))
        k = int(np.argmax(clearance))
        if clearance[k] > best_val:
            best_val = float(clearance[k])
            best_pt = P[k]
            center = P[k]
        h = h * 2.0 / (m - 1) * 1.5  # zoom: next window covers the grid cell
    if best_pt is None or best_val < mesh.max_diameter:
        return CorkscrewResult(x, r, side)
    return CorkscrewResult(x, r, side, point=best_pt,
                           achieved_M=float(r / best_val), clearance=best_val)


def dltscs_check(mesh, x0, M0, R0, n_scales=None, r_min=None):
    """Doubly local two-sided corkscrew check around x0 up to scale R0.

    Samples every atom inside B(x0, R0) and a dyadic scale grid; passes iff
    both-side corkscrews exist with achieved M <= M0 everywhere.
    """
    if M0 < 2:
        raise ValueError("M0 must be at least 2")
    x0 = np.asarray(x0, float)
    r_min = (4.0 * mesh.max_diameter) if r_min is None else r_min
    scales = []
    r = R0
    while r >= r_min and (n_scales is None or len(scales) < n_scales):
        scales.append(r)
        r /= 2
    d = np.linalg.norm(mesh.positions - x0, axis=1)
    sample_x = mesh.positions[d <= R0]
    worst = {"achieved_M": 0.0, "x": None, "r": None, "side": None}
    ok = True
    for x in sample_x:
        for r in scales:
            for side in ("interior", "exterior"):
                res = corkscrew_search(mesh, x, r, side)
                m_here = res.achieved_M if res.found else np.inf
                if m_here > worst["achieved_M"]:
                    worst = {"achieved_M": float(m_here), "x": x, "r": r, "side": side}
                if not res.found or res.achieved_M > M0:
                    ok = False
    return {
        "pass": ok,
        "M0": M0,
        "R0": R0,
        "n_samples": int(len(sample_x) * len(scales) * 2),
        "worst": worst,
    }
