"""Reifenberg flatness, separation, height bounds, excess measure, and
Lipschitz graph approximation.

Plane fitting follows the definition exactly: the infimum runs over planes
THROUGH the center point, optimized by a direction sweep plus local
refinement.  Hausdorff distances come from dense surface samples, with the
sampling pitch as the certified error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar, minimize
from scipy.spatial import cKDTree

from .boundary import CylinderSpec, average_normal, cylinder_clip, surface_ball
from .calibration import constants
from .errors import (
    DeltaTooLarge,
    EmptyM0,
    ExcessTooLarge,
    ScaleTooSmall,
    SeparationFails,
)
from .oscillation import ball_oscillation_sq, cylindrical_excess, normal_function


@dataclass
class FlatnessValue:
    center: np.ndarray
    radius: float
    theta: float
    best_plane_normal: np.ndarray
    hausdorff_parts: tuple      # (sup d(Sigma -> L), sup d(L -> Sigma))
    certified_error: float


@dataclass
class LipschitzApprox:
    base_point: np.ndarray
    radius: float
    axis: np.ndarray
    grid: np.ndarray            # (m,) in 2D or (m, m) nodes of D_r
    u: np.ndarray               # graph values on the grid
    u_plus: np.ndarray
    u_minus: np.ndarray
    m0_atoms: np.ndarray        # atom indices forming M0
    window_atoms: np.ndarray
    lip_bound: float
    sup_bound: float            # sup |u| / r
    dirichlet: float            # (1/r^{n-1}) int |grad' u|^2
    symm_diff: float            # H^{n-1}(M Delta Gamma) / r^{n-1}
    envelope_ok: bool
    envelope_violations: int
    excess_13r: float


@dataclass
class ExcessMeasureGrid:
    axis: np.ndarray
    radius: float
    cell_centers: np.ndarray
    cell_measures: np.ndarray   # H^{n-1}(G) per cell
    boundary_mass: np.ndarray   # H^{n-1}(M cap p^{-1}(G))
    flux: np.ndarray            # int_{M cap p^{-1}(G)} <nu_E, axis>
    zeta: np.ndarray
    identity_gap: np.ndarray    # |cell_measure - flux| per cell


def _frame(nu):
    """Orthonormal tangent basis completing nu."""
    nu = np.asarray(nu, float)
    if len(nu) == 2:
        return np.array([[-nu[1], nu[0]]])
    a = np.array([1.0, 0.0, 0.0]) if abs(nu[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(nu, a)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(nu, t1)
    return np.stack([t1, t2])


def fibonacci_directions(m):
    """Quasi-uniform directions on the upper hemisphere."""
    i = np.arange(m) + 0.5
    phi = np.arccos(1 - i / m)           # polar angle in upper half
    golden = np.pi * (1 + 5**0.5)
    theta = golden * i
    return np.stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)],
        axis=1,
    )


def _hausdorff_to_plane(samples, x, r, dirs, tree, chord_pitch):
    """theta(nu) = (sup d(Sigma->L) + sup d(L->Sigma)) / r for each direction.

    d(a, L cap B) is exactly |<a-x, nu>| for a in the ball; d(b, Sigma) is
    measured against the sampled surface via the KD-tree.
    """
    rel = samples - x
    part1 = np.abs(rel @ dirs.T).max(axis=0)

    dim = samples.shape[1]
    nt = max(3, int(np.ceil(2 * r / chord_pitch)))
    t = np.linspace(-r, r, nt)
    part2 = np.empty(len(dirs))
    if dim == 2:
        taus = np.stack([-dirs[:, 1], dirs[:, 0]], axis=1)
        pts = x + t[None, :, None] * taus[:, None, :]     # (ndir, nt, 2)
        d, _ = tree.query(pts.reshape(-1, 2))
        part2 = d.reshape(len(dirs), nt).max(axis=1)
    else:
        rj = np.linspace(-r, r, nt)
        U, V = np.meshgrid(rj, rj, indexing="ij")
        disk = np.stack([U.ravel(), V.ravel()], axis=1)
        disk = disk[np.linalg.norm(disk, axis=1) <= r]
        for k, nu in enumerate(dirs):
            t12 = _frame(nu)
            pts = x + disk @ t12
            d, _ = tree.query(pts)
            part2[k] = d.max()
    return part1, part2


def theta_flatness(mesh, x, r, coarse_dirs=None, coarse_pitch=0.04,
                   fine_pitch=0.01, r_min=None) -> FlatnessValue:
    """Reifenberg flatness: normalized Hausdorff distance to the best plane
    through x, over the closed ball B(x, r)."""
    r_min = mesh.r_min if r_min is None else r_min
    if r < r_min:
        raise ScaleTooSmall(f"radius {r:.3g} below floor {r_min:.3g}")
    x = mesh.snap_to_boundary(x)
    dim = mesh.dimension

    fine_samples = mesh.sample_surface(fine_pitch * r, center=x, radius=r)
    coarse_samples = mesh.sample_surface(coarse_pitch * r, center=x, radius=r)
    fine_tree = cKDTree(fine_samples)
    coarse_tree = cKDTree(coarse_samples)

    if dim == 2:
        ang = np.linspace(0, np.pi, 720, endpoint=False) if coarse_dirs is None else coarse_dirs
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        p1, p2 = _hausdorff_to_plane(coarse_samples, x, r, dirs, coarse_tree,
                                     coarse_pitch * r)
        total = p1 + p2
        k0 = int(np.argmin(total))
        da = ang[1] - ang[0]

        def f(theta_ang):
            d = np.array([[np.cos(theta_ang), np.sin(theta_ang)]])
            a, b = _hausdorff_to_plane(fine_samples, x, r, d, fine_tree,
                                       fine_pitch * r)
            return (a + b)[0]

        res = minimize_scalar(f, bracket=None,
                              bounds=(ang[k0] - 2 * da, ang[k0] + 2 * da),
                              method="bounded",
                              options={"xatol": 1e-4})
        best_ang = res.x
        d = np.array([[np.cos(best_ang), np.sin(best_ang)]])
        a, b = _hausdorff_to_plane(fine_samples, x, r, d, fine_tree, fine_pitch * r)
        nu_best, parts = d[0], (float(a[0]), float(b[0]))
    else:
        dirs = fibonacci_directions(512) if coarse_dirs is None else coarse_dirs
        p1, p2 = _hausdorff_to_plane(coarse_samples, x, r, dirs, coarse_tree,
                                     coarse_pitch * r)
        total = p1 + p2
        top = np.argsort(total)[:4]

        def f3(angles):
            th, ph = angles
            nu = np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph),
                           np.cos(th)])
            a, b = _hausdorff_to_plane(fine_samples, x, r, nu[None, :],
                                       fine_tree, fine_pitch * r)
            return (a + b)[0]

        best_val, best_nu = np.inf, dirs[top[0]]
        for k in top:
            nu = dirs[k]
            th0 = np.arccos(np.clip(nu[2], -1, 1))
            ph0 = np.arctan2(nu[1], nu[0])
            res = minimize(f3, [th0, ph0], method="Nelder-Mead",
                           options={"maxiter": 40, "xatol": 1e-3, "fatol": 1e-5})
            if res.fun < best_val:
                best_val = res.fun
                th, ph = res.x
                best_nu = np.array([np.sin(th) * np.cos(ph),
                                    np.sin(th) * np.sin(ph), np.cos(th)])
        a, b = _hausdorff_to_plane(fine_samples, x, r, best_nu[None, :],
                                   fine_tree, fine_pitch * r)
        nu_best, parts = best_nu, (float(a[0]), float(b[0]))

    theta = (parts[0] + parts[1]) / r
    return FlatnessValue(center=x, radius=r, theta=float(theta),
                         best_plane_normal=nu_best, hausdorff_parts=parts,
                         certified_error=2 * fine_pitch)


def separation_check(mesh, x, r, delta, pitch=0.01, n_dirs=None, tol=None):
    """Search a direction nu that delta-separates B(x, r) into the two sides."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    x = mesh.snap_to_boundary(x)
    dim = mesh.dimension
    if dim == 2:
        ang = np.linspace(0, 2 * np.pi, n_dirs or 720, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        grid_pitch = pitch * r
    else:
        half = fibonacci_directions(n_dirs or 512)
        dirs = np.concatenate([half, -half])
        grid_pitch = max(pitch, 0.04) * r
    axes = [np.arange(-r, r + grid_pitch / 2, grid_pitch) + x[d] for d in range(dim)]
    G = np.meshgrid(*axes, indexing="ij")
    P = np.stack([g.ravel() for g in G], axis=1)
    P = P[np.linalg.norm(P - x, axis=1) <= r]
    sd = mesh.signed_distance(P)
    tol = 1e-9 * r if tol is None else tol
    inside = sd < -tol
    outside = sd > tol
    dots = (P - x) @ dirs.T
    viol_up = (dots > delta * r) & inside[:, None]    # should be in Omega^c
    viol_dn = (dots < -delta * r) & outside[:, None]  # should be in Omega
    bad = viol_up | viol_dn
    n_viol = bad.sum(axis=0)
    k = int(np.argmin(n_viol))
    if n_viol[k] == 0:
        return {"pass": True, "witness_normal": dirs[k], "violation_point": None}
    which = np.flatnonzero(bad[:, k])[0]
    return {"pass": False, "witness_normal": None, "violation_point": P[which],
            "min_violations": int(n_viol[k])}


def _window_sup_height(mesh, x0, r, nu, pitch=0.01):
    """sup |<y - x0, nu>| / r over the boundary inside C(x0, r, nu)."""
    samples = mesh.sample_surface(pitch * r, center=x0, radius=r * np.sqrt(2.0))
    rel = samples - x0
    q = rel @ nu
    perp = rel - q[:, None] * nu
    in_cyl = (np.abs(q) < r) & (np.linalg.norm(perp, axis=1) < r)
    if not in_cyl.any():
        return 0.0
    return float(np.abs(q[in_cyl]).max() / r)


def height_bound_check(mesh, x0, r, nu, eps1=None, c1=None):
    """Sup-height in the r-window against the excess-power bound at 4r."""
    x0 = mesh.snap_to_boundary(x0)
    nu = np.asarray(nu, float)
    n = mesh.dimension
    eps1 = constants()["height_eps1"][str(n)] if eps1 is None else eps1
    c1 = constants()["height_c1"][str(n)] if c1 is None else c1
    excess_4r = cylindrical_excess(mesh, x0, 4 * r, nu)
    if excess_4r > eps1:
        raise ExcessTooLarge(f"e(x0, 4r) = {excess_4r:.3g} > eps1 = {eps1:.3g}")
    sup_height = _window_sup_height(mesh, x0, r, nu)
    rhs = c1 * excess_4r ** (1.0 / (2 * (n - 1)))
    return {
        "excess_4r": excess_4r,
        "sup_height": sup_height,
        "bound_rhs": rhs,
        "pass": sup_height <= rhs,
    }


def strong_separation_check(mesh, x0, r, nu, eps1=None, c1=None, pitch=0.02):
    """Emptiness of the two slabs beyond the height-bound level sets."""
    x0 = mesh.snap_to_boundary(x0)
    nu = np.asarray(nu, float)
    n = mesh.dimension
    eps1 = constants()["height_eps1"][str(n)] if eps1 is None else eps1
    c1 = constants()["height_c1"][str(n)] if c1 is None else c1
    excess_2r = cylindrical_excess(mesh, x0, 2 * r, nu)
    if excess_2r > eps1:
        raise ExcessTooLarge(f"e(x0, 2r) = {excess_2r:.3g} > eps1 = {eps1:.3g}")
    h = c1 * r * excess_2r ** (1.0 / (2 * (n - 1)))

    dim = mesh.dimension
    gp = pitch * r
    axes = [np.arange(-r, r + gp / 2, gp) + x0[d] for d in range(dim)]
    G = np.meshgrid(*axes, indexing="ij")
    P = np.stack([g.ravel() for g in G], axis=1)
    rel = P - x0
    q = rel @ nu
    perp = np.linalg.norm(rel - q[:, None] * nu, axis=1)
    in_cyl = (np.abs(q) < r) & (perp < r)
    P, q = P[in_cyl], q[in_cyl]
    sd = mesh.signed_distance(P)
    upper = q > h
    lower = q < -h
    # slab 1: no points of E (inside) above +h; slab 2: no complement below -h
    viol1 = upper & (sd < 0)
    viol2 = lower & (sd > 0)
    margin1 = float(h - q[sd < 0].max()) if (sd < 0).any() else np.inf
    margin2 = float(h + q[sd > 0].min()) if (sd > 0).any() else np.inf
    return {
        "level": h,
        "excess_2r": excess_2r,
        "pass1": not viol1.any(),
        "pass2": not viol2.any(),
        "margins": (margin1, margin2),
    }


def _cell_disk_area(cx, cy, h, r):
    """Area of the square cell [cx-h,cx+h] x [cy-h,cy+h] inside the disk of radius r."""
    from shapely.geometry import Point, box

    return box(cx - h, cy - h, cx + h, cy + h).intersection(
        Point(0.0, 0.0).buffer(r, quad_segs=128)
    ).area


def excess_measure(mesh, x0, r, nu, grid_resolution=16, t0=0.25,
                   pitch=0.02) -> ExcessMeasureGrid:
    """Per-cell excess measure zeta(G) over the projection disk D_r.

    Requires the measure-theoretic separation hypotheses at (x0, r, nu)
    (boundary confined to |q| < t0 r, side slabs clean), else SeparationFails.
    """
    x0 = mesh.snap_to_boundary(x0)
    nu = np.asarray(nu, float)
    n = mesh.dimension
    # separation hypotheses
    sup_h = _window_sup_height(mesh, x0, r, nu)
    if sup_h > t0:
        raise SeparationFails(f"boundary reaches height {sup_h:.3g} > t0 = {t0}")
    gp = pitch * r
    axes = [np.arange(-r, r + gp / 2, gp) + x0[d] for d in range(n)]
    G = np.meshgrid(*axes, indexing="ij")
    P = np.stack([g.ravel() for g in G], axis=1)
    rel = P - x0
    q = rel @ nu
    perp = np.linalg.norm(rel - q[:, None] * nu, axis=1)
    keep = (np.abs(q) < r) & (perp < r) & (np.abs(q) > t0 * r)
    P, q = P[keep], q[keep]
    if len(P):
        sd = mesh.signed_distance(P)
        if ((q > t0 * r) & (sd < 0)).any() or ((q < -t0 * r) & (sd > 0)).any():
            raise SeparationFails("side slabs are not clean at t0")

    taus = _frame(nu)
    reg = cylinder_clip(mesh, CylinderSpec(center=x0, radius_height=r, axis=nu))
    idx = reg.atom_indices

    if n == 2:
        m = grid_resolution
        edges = np.linspace(-r, r, m + 1)
        cell_meas = np.diff(edges)
        centers = (edges[:-1] + edges[1:]) / 2
        mass = np.zeros(m)
        flux = np.zeros(m)
        A = mesh.vertices[mesh.facets[idx, 0]]
        B = mesh.vertices[mesh.facets[idx, 1]]
        ta = (A - x0) @ taus[0]
        tb = (B - x0) @ taus[0]
        lo, hi = np.minimum(ta, tb), np.maximum(ta, tb)
        w = reg.clipped_weights
        dots = mesh.normals[idx] @ nu
        for i in range(m):
            ov = np.clip(np.minimum(hi, edges[i + 1]) - np.maximum(lo, edges[i]), 0, None)
            frac = np.where(hi > lo, ov / np.where(hi > lo, hi - lo, 1.0),
                            ((lo >= edges[i]) & (lo < edges[i + 1])).astype(float))
            mass[i] = (w * frac).sum()
            flux[i] = (w * frac * dots).sum()
        cell_centers = centers[:, None]
    else:
        m = grid_resolution
        edges = np.linspace(-r, r, m + 1)
        h = (edges[1] - edges[0]) / 2
        cx, cy = np.meshgrid(edges[:-1] + h, edges[:-1] + h, indexing="ij")
        cell_centers = np.stack([cx.ravel(), cy.ravel()], axis=1)
        cell_meas = np.array([_cell_disk_area(a, b, h, r) for a, b in cell_centers])
        # subdivide window facets and bin leaf centroids
        from .boundary import _subdivide_tris, _tri_areas, _tri_diams

        tris = mesh.facet_vertices(idx)
        fid = np.arange(len(idx))
        leaf_tris, leaf_fid = [], []
        target = min(2 * h, r * 0.1) / 4
        while len(tris):
            small = _tri_diams(tris) < target
            if small.any():
                leaf_tris.append(tris[small])
                leaf_fid.append(fid[small])
            tris, fid = tris[~small], fid[~small]
            if len(tris):
                tris = _subdivide_tris(tris)
                fid = np.tile(fid, 4)
        tris = np.concatenate(leaf_tris)
        fid = np.concatenate(leaf_fid)
        cen = tris.mean(axis=1)
        relc = cen - x0
        qc = relc @ nu
        pc = (relc - qc[:, None] * nu) @ taus.T
        in_cyl = (np.abs(qc) < r) & (np.linalg.norm(pc, axis=1) < r)
        tris, fid, pc = tris[in_cyl], fid[in_cyl], pc[in_cyl]
        areas = _tri_areas(tris)
        dots = mesh.normals[idx][fid] @ nu
        ix = np.clip(np.searchsorted(edges, pc[:, 0]) - 1, 0, m - 1)
        iy = np.clip(np.searchsorted(edges, pc[:, 1]) - 1, 0, m - 1)
        flat = ix * m + iy
        mass = np.bincount(flat, weights=areas, minlength=m * m)
        flux = np.bincount(flat, weights=areas * dots, minlength=m * m)

    zeta = mass - cell_meas
    return ExcessMeasureGrid(
        axis=nu, radius=r, cell_centers=cell_centers,
        cell_measures=cell_meas, boundary_mass=mass, flux=flux, zeta=zeta,
        identity_gap=np.abs(cell_meas - flux),
    )


def lipschitz_approximation(mesh, x0, r, delta0=None, axis=None,
                            grid_resolution=64) -> LipschitzApprox:
    """Lipschitz graph approximation of the boundary window C(x0, r).

    The graph is built on the projections of the low-excess atom set M0 and
    extended by the explicit inf/sup Lipschitz envelopes (their midpoint),
    truncated at the sup bound.
    """
    cal = constants()
    n = mesh.dimension
    delta0 = cal["lipapprox_delta0"][str(n)] if delta0 is None else delta0
    eps3 = cal["lipapprox_eps3"][str(n)]
    c1 = cal["height_c1"][str(n)]
    c3 = cal["lipapprox_c3"][str(n)]
    x0 = mesh.snap_to_boundary(x0)
    if axis is None:
        axis = average_normal(mesh, surface_ball(mesh, x0, min(13 * r, mesh.diam / 2),
                                                 snap=False))
        axis = axis / np.linalg.norm(axis)
    axis = np.asarray(axis, float)

    excess_13r = cylindrical_excess(mesh, x0, 13 * r, axis)
    if excess_13r > eps3:
        raise ExcessTooLarge(f"e(x0, 13r) = {excess_13r:.3g} > eps3 = {eps3:.3g}")

    taus = _frame(axis)
    rel = mesh.positions - x0
    qa = rel @ axis
    pa = (rel - qa[:, None] * axis) @ taus.T
    window = np.flatnonzero((np.abs(qa) < r) & (np.linalg.norm(pa, axis=1) < r))

    # M0: window atoms with uniformly small dyadic excess below 8r
    scales = []
    s = 8 * r
    while s >= mesh.r_min:
        scales.append(s)
        s /= 2
    sup_exc = np.zeros(len(window))
    for j, ai in enumerate(window):
        y = mesh.positions[ai]
        sup_exc[j] = max(
            cylindrical_excess(mesh, y, s, axis, r_min=0.0) for s in scales
        )
    m0_mask = sup_exc < delta0
    if not m0_mask.any():
        working = delta0
        while working < 4.0 and not (sup_exc < working).any():
            working *= 2
        raise EmptyM0("no low-excess atoms in the window",
                      smallest_working=working if working < 4.0 else None)
    m0 = window[m0_mask]

    L = min(0.9, c1 * delta0 ** (1.0 / (2 * (n - 1))))
    sup_cap = c3 * excess_13r ** (1.0 / (2 * (n - 1))) * r

    p0 = pa[m0]
    q0 = qa[m0]

    def env_plus(pts):
        d = np.linalg.norm(pts[:, None, :] - p0[None, :, :], axis=2)
        return (q0[None, :] + L * d).min(axis=1)

    def env_minus(pts):
        d = np.linalg.norm(pts[:, None, :] - p0[None, :, :], axis=2)
        return (q0[None, :] - L * d).max(axis=1)

    if n == 2:
        g = np.linspace(-r, r, grid_resolution)
        grid_pts = g[:, None]
        grid_shape = (grid_resolution,)
    else:
        g = np.linspace(-r, r, grid_resolution)
        U, V = np.meshgrid(g, g, indexing="ij")
        grid_pts = np.stack([U.ravel(), V.ravel()], axis=1)
        grid_shape = (grid_resolution, grid_resolution)

    up = env_plus(grid_pts)
    um = env_minus(grid_pts)
    u = np.clip((up + um) / 2, -sup_cap, sup_cap)
    # exact values on columns carrying M0 points
    tree = cKDTree(grid_pts)
    _, nearest_node = tree.query(p0)
    u[nearest_node] = q0

    # envelope bracketing on every window atom (exact envelope evaluation)
    up_w = env_plus(pa[window])
    um_w = env_minus(pa[window])
    viol = (qa[window] > up_w + 1e-12) | (qa[window] < um_w - 1e-12)

    # quantitative conclusions
    hgrid = g[1] - g[0]
    un = u.reshape(grid_shape)
    if n == 2:
        grads = np.gradient(un, hgrid)
        dirichlet = (grads**2).sum() * hgrid / r ** (n - 1)
        lip_seen = np.abs(np.diff(un) / hgrid).max()
        cell_measure = hgrid
        slope_sq = grads**2
    else:
        gx, gy = np.gradient(un, hgrid)
        in_disk = (np.linalg.norm(grid_pts, axis=1) <= r).reshape(grid_shape)
        slope_sq = gx**2 + gy**2
        dirichlet = (slope_sq * in_disk).sum() * hgrid**2 / r ** (n - 1)
        lip_seen = np.sqrt(slope_sq[in_disk].max()) if in_disk.any() else 0.0
        cell_measure = hgrid**2

    # symmetric difference H(M Delta Gamma) / r^{n-1}
    tol_graph = (1 + L) * max(mesh.max_diameter, hgrid)
    u_at_atoms = np.interp(pa[window][:, 0], g, un) if n == 2 else None
    if n == 3:
        from scipy.interpolate import RegularGridInterpolator

        itp = RegularGridInterpolator((g, g), un, bounds_error=False,
                                      fill_value=None)
        u_at_atoms = itp(pa[window])
    off_graph = np.abs(qa[window] - u_at_atoms) > tol_graph
    reg = cylinder_clip(mesh, CylinderSpec(center=x0, radius_height=r, axis=axis))
    w_in_window = np.zeros(mesh.n_atoms)
    w_in_window[reg.atom_indices] = reg.clipped_weights
    mass_m_minus_g = w_in_window[window][off_graph].sum()
    # graph columns not covered by on-graph atoms
    on_atoms = pa[window][~off_graph]
    if len(on_atoms):
        atree = cKDTree(on_atoms)
        dcol, _ = atree.query(grid_pts)
    else:
        dcol = np.full(len(grid_pts), np.inf)
    uncovered = dcol > 2 * max(mesh.max_diameter, hgrid)
    if n == 3:
        uncovered &= np.linalg.norm(grid_pts, axis=1) <= r
    area_factor = np.sqrt(1 + slope_sq.ravel())
    mass_g_minus_m = (uncovered * area_factor).sum() * cell_measure
    symm = (mass_m_minus_g + mass_g_minus_m) / r ** (n - 1)

    return LipschitzApprox(
        base_point=x0, radius=r, axis=axis, grid=grid_pts, u=u,
        u_plus=up, u_minus=um, m0_atoms=m0, window_atoms=window,
        lip_bound=float(max(lip_seen, 0.0)),
        sup_bound=float(np.abs(u).max() / r), dirichlet=float(dirichlet),
        symm_diff=float(symm), envelope_ok=not viol.any(),
        envelope_violations=int(viol.sum()), excess_13r=float(excess_13r),
    )


def semmes_height_check(mesh, q_pt, r, c=None):
    """Height of the boundary over the plane orthogonal to the average normal,
    against C sqrt(flatness + oscillation), with the three ingredient bounds."""
    cal = constants()
    n = mesh.dimension
    c = cal["semmes_c"][str(n)] if c is None else c
    q_pt = mesh.snap_to_boundary(q_pt)
    fv = theta_flatness(mesh, q_pt, r)
    eta = fv.theta
    nu_fn = normal_function(mesh)
    delta = float(np.sqrt(ball_oscillation_sq(mesh, nu_fn, q_pt, r)))
    if delta > 0.5:
        raise DeltaTooLarge(f"oscillation {delta:.3g} > 1/2")
    reg = surface_ball(mesh, q_pt, r, snap=False)
    nu_qr = average_normal(mesh, reg)
    samples = mesh.sample_surface(0.01 * r, center=q_pt, radius=r)
    lhs = float(np.abs((samples - q_pt) @ nu_qr).max() / r)
    rhs = float(c * np.sqrt(eta + delta))

    omega = {2: 2.0, 3: np.pi}[n]
    sigma_b = reg.measure
    n_flat = fv.best_plane_normal
    if n_flat @ nu_qr < 0:
        n_flat = -n_flat
    flux = float((reg.clipped_weights[:, None] * mesh.normals[reg.atom_indices]).sum(axis=0) @ n_flat)
    ing1_lhs = abs(flux - omega * r ** (n - 1))
    ing1_rhs = cal["semmes_ing1_c"][str(n)] * r ** (n - 1) * max(eta, 1e-12)
    ing2 = abs(np.linalg.norm(nu_qr) - 1.0) <= delta + 1e-12
    ing3_lo = (1 - n * eta**2) * omega * r ** (n - 1)
    ing3_hi = (1 + 2 * delta) * omega * r ** (n - 1)
    return {
        "lhs": lhs,
        "rhs": rhs,
        "eta": eta,
        "delta": delta,
        "pass": lhs <= rhs,
        "ingredients": {
            "flux_comparison": ing1_lhs <= ing1_rhs,
            "flux_gap": ing1_lhs,
            "avg_normal_near_unit": bool(ing2),
            "area_bracket": bool(ing3_lo <= sigma_b <= ing3_hi),
            "sigma_ball": float(sigma_b),
            "bracket": (float(ing3_lo), float(ing3_hi)),
        },
    }
