"""Mean oscillation of boundary functions and the cylindrical excess.

The oscillation functional is the L^2 mean oscillation over surface balls,
with the sup over sub-scales evaluated on a dyadic grid; the excess is the
normalized De Giorgi flatness energy over cylinder windows.  Both are
weighted sums over clipped atoms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import ClippedRegion, CylinderSpec, average_normal, cylinder_clip, surface_ball
from .errors import DegenerateAverageNormal, ScaleTooSmall


@dataclass
class BoundaryFunction:
    """Per-atom scalar or vector values (one row per atom)."""

    values: np.ndarray
    kind: str = "generic"

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if not np.isfinite(self.values).all():
            raise ValueError("boundary function values must be finite")


def normal_function(mesh) -> BoundaryFunction:
    return BoundaryFunction(mesh.normals.copy(), kind="unit_normal")


@dataclass
class OscillationReport:
    """Per-center, per-scale oscillation (or excess) values with suprema."""

    centers: np.ndarray
    scales: np.ndarray
    matrix: np.ndarray             # (n_centers, n_scales)
    sup_per_scale: np.ndarray
    argmax_center: np.ndarray      # index into centers, per scale

    def vmo_profile(self):
        """Sup over centers as a function of scale (decay -> VMO behaviour)."""
        return self.scales, self.sup_per_scale


def _weighted_sq_oscillation(values, weights):
    """Mean |f - mean f|^2 with the given weights (vector f: euclidean norm)."""
    w = weights / weights.sum()
    v = values if values.ndim == 2 else values[:, None]
    mean = (w[:, None] * v).sum(axis=0)
    return float((w * ((v - mean) ** 2).sum(axis=1)).sum())


def ball_oscillation_sq(mesh, f, x, s):
    reg = surface_ball(mesh, x, s, snap=False)
    vals = f.values[reg.atom_indices]
    return _weighted_sq_oscillation(vals, reg.clipped_weights)


def mean_oscillation(mesh, f, centers, scale_grid, r_min=None) -> OscillationReport:
    """||f||_*(x, r) on a (centers x scales) grid.

    The sup over 0 < s < r is evaluated on the union of the dyadic subgrids
    {r_i / 2^j >= r_min} of all requested scales, so values are monotone
    non-decreasing in r exactly on the report grid.
    """
    centers = np.atleast_2d(np.asarray(centers, float))
    scale_grid = np.sort(np.asarray(scale_grid, float))[::-1]
    r_min = mesh.r_min if r_min is None else r_min
    if scale_grid.min() < r_min:
        raise ScaleTooSmall(
            f"scale {scale_grid.min():.3g} below reliable floor {r_min:.3g}"
        )
    sub = set()
    for r in scale_grid:
        s = r
        while s >= r_min:
            sub.add(s)
            s /= 2
    sub = np.sort(np.array(sorted(sub)))

    centers = np.array([mesh.snap_to_boundary(c) for c in centers])
    osc = np.zeros((len(centers), len(sub)))
    for i, c in enumerate(centers):
        for j, s in enumerate(sub):
            osc[i, j] = np.sqrt(ball_oscillation_sq(mesh, f, c, s))
    # sup over the dyadic sub-scales <= r
    matrix = np.zeros((len(centers), len(scale_grid)))
    for j, r in enumerate(scale_grid):
        mask = sub <= r + 1e-12 * r
        matrix[:, j] = osc[:, mask].max(axis=1)
    order = np.argsort(scale_grid)
    scales = scale_grid[order]
    matrix = matrix[:, order]
    return OscillationReport(
        centers=centers,
        scales=scales,
        matrix=matrix,
        sup_per_scale=matrix.max(axis=0),
        argmax_center=matrix.argmax(axis=0),
    )


def cylindrical_excess(mesh, x, r, nu, r_min=None, return_parts=False):
    """Normalized flatness energy over the window C(x, r, nu).

    Computed both as the mean-square normal deviation and as the defect
    1 - <nu_E, nu>; the two agree to round-off (algebraic identity for unit
    vectors), asserted on every call.
    """
    x = np.asarray(x, float)
    nu = np.asarray(nu, float)
    r_min = mesh.r_min if r_min is None else r_min
    if r < r_min:
        raise ScaleTooSmall(f"window radius {r:.3g} below reliable floor {r_min:.3g}")
    reg = cylinder_clip(mesh, CylinderSpec(center=x, radius_height=r, axis=nu))
    n = mesh.dimension
    if len(reg.atom_indices) == 0:
        return (0.0, 0.0, reg) if return_parts else 0.0
    normals = mesh.normals[reg.atom_indices]
    w = reg.clipped_weights
    form_sq = (w * 0.5 * ((normals - nu) ** 2).sum(axis=1)).sum() / r ** (n - 1)
    form_dot = (w * (1.0 - normals @ nu)).sum() / r ** (n - 1)
    scale = max(1.0, abs(form_sq), abs(form_dot))
    assert abs(form_sq - form_dot) <= 1e-12 * scale, "excess identity violated"
    if return_parts:
        return form_sq, form_dot, reg
    return form_sq


def excess_oscillation_compare(mesh, x, r):
    """Both directions of the oscillation/excess comparison at (x, r).

    lhs_osc is the mean-square oscillation of the normal over B(x, r); the
    excess is evaluated with the normalized average normal, and again at
    r / sqrt(2) as the comparison requires.  Exact-zero flat windows are
    flagged rather than divided.
    """
    x = mesh.snap_to_boundary(x)
    reg = surface_ball(mesh, x, r, snap=False)
    normals = mesh.normals[reg.atom_indices]
    osc_sq = _weighted_sq_oscillation(normals, reg.clipped_weights)
    nu_bar = average_normal(mesh, reg)
    nrm = np.linalg.norm(nu_bar)
    if nrm < 1e-9:
        raise DegenerateAverageNormal(f"|average normal| = {nrm:.3g} at (x={x}, r={r})")
    nu0 = nu_bar / nrm
    excess_r = cylindrical_excess(mesh, x, r, nu0)
    excess_half = cylindrical_excess(mesh, x, r / np.sqrt(2), nu0,
                                     r_min=mesh.r_min / np.sqrt(2))
    exact_zero = osc_sq == 0.0 and excess_r == 0.0
    ratio1 = 0.0 if exact_zero else osc_sq / excess_r if excess_r > 0 else np.inf
    ratio2 = 0.0 if exact_zero else excess_half / osc_sq if osc_sq > 0 else np.inf
    return {
        "lhs_osc": osc_sq,
        "rhs_excess": excess_r,
        "excess_half_scale": excess_half,
        "avg_normal_norm": nrm,
        "ratio1": ratio1,
        "ratio2": ratio2,
        "exact_zero": exact_zero,
    }
