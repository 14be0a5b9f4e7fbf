"""Primitive mesh constructions used by the domain generators and tests."""

from __future__ import annotations

import numpy as np

from .boundary import build_boundary


def unit_circle(n=1024, radius=1.0, center=(0.0, 0.0)):
    t = 2 * np.pi * np.arange(n) / n
    verts = np.stack([np.cos(t), np.sin(t)], axis=1) * radius + np.asarray(center)
    return build_boundary(verts)


def perturbed_circle(n=1024, amplitude=0.05, frequency=6, radius=1.0, phase=0.0):
    """r(theta) = radius * (1 + amplitude * cos(frequency * theta + phase))."""
    t = 2 * np.pi * np.arange(n) / n
    r = radius * (1 + amplitude * np.cos(frequency * t + phase))
    verts = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    return build_boundary(verts)


def square(side=1.0, n_per_edge=64, center=(0.0, 0.0)):
    h = side / 2
    c = np.asarray(center, float)
    corners = np.array([[-h, -h], [h, -h], [h, h], [-h, h]]) + c
    pts = []
    for i in range(4):
        a, b = corners[i], corners[(i + 1) % 4]
        t = np.arange(n_per_edge) / n_per_edge
        pts.append(a + t[:, None] * (b - a))
    return build_boundary(np.concatenate(pts))


def segment_patch(length=8.0, n=256, y=0.0):
    """Open flat 2D patch along the x-axis; normal -e_y, interior side y > 0."""
    x = np.linspace(-length / 2, length / 2, n + 1)
    verts = np.stack([x, np.full_like(x, y)], axis=1)
    facets = np.stack([np.arange(n), np.arange(n) + 1], axis=1)
    return build_boundary(verts, facets, dimension=2, closed=False)


def graph_polyline_2d(u, x_range=(0.0, 2 * np.pi), n_top=512, depth=2.0):
    """Closed 2D domain under the graph y = u(x): wavy lid on a deep box.

    Returns (mesh, info) where info carries the exact graph callable and the
    lid x-range for oracle use.
    """
    x0, x1 = x_range
    xs = np.linspace(x0, x1, n_top + 1)
    top = np.stack([xs, np.asarray([u(x) for x in xs], float)], axis=1)
    ymin = -depth
    n_side = max(8, n_top // 8)
    right = np.stack(
        [np.full(n_side, x1), np.linspace(top[-1, 1], ymin, n_side + 1)[1:]], axis=1
    )
    n_bot = max(8, n_top // 2)
    bottom = np.stack(
        [np.linspace(x1, x0, n_bot + 1)[1:], np.full(n_bot, ymin)], axis=1
    )
    left = np.stack(
        [np.full(n_side - 1, x0), np.linspace(ymin, top[0, 1], n_side + 1)[1:-1]], axis=1
    )
    verts = np.concatenate([top, right, bottom, left])
    mesh = build_boundary(verts)
    info = {"graph": u, "x_range": x_range, "lid_top_index": n_top}
    return mesh, info


def icosphere(subdivisions=3, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Icosahedron subdivided and projected to the sphere (inscribed)."""
    phi = (1 + np.sqrt(5)) / 2
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        float,
    )
    verts /= np.linalg.norm(verts[0])
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    for _ in range(subdivisions):
        edge_mid = {}
        new_faces = []
        verts = list(verts)

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in edge_mid:
                m = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2
                m /= np.linalg.norm(m)
                edge_mid[key] = len(verts)
                verts.append(m)
            return edge_mid[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
        verts = np.array(verts)
        faces = np.array(new_faces)
    return build_boundary(verts * radius + np.asarray(center), faces, dimension=3)


def plane_patch_3d(side=8.0, n=48, z=0.0):
    """Open flat triangulated square patch in the plane z = const; normal +e_z."""
    xs = np.linspace(-side / 2, side / 2, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, z)], axis=1)
    faces = _grid_faces(n)
    return build_boundary(verts, faces, dimension=3, closed=False)


def _grid_faces(n):
    idx = np.arange((n + 1) * (n + 1)).reshape(n + 1, n + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    return np.concatenate(
        [np.stack([a, b, c], axis=1), np.stack([a, c, d], axis=1)]
    )


def graph_box_3d(u, xy_range=(0.0, 2 * np.pi), n_top=48, depth=2.0):
    """Closed 3D domain under the graph z = u(x, y): wavy lid on a box.

    The lid is a triangulated height field, the other five faces close the
    box.  info carries the exact graph callable for oracle use.
    """
    lo, hi = xy_range
    xs = np.linspace(lo, hi, n_top + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    Z = np.vectorize(u)(X, Y)
    zmin = -depth

    nv = (n_top + 1) ** 2
    lid_verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    bot_verts = np.stack([X.ravel(), Y.ravel(), np.full(nv, zmin)], axis=1)
    verts = [lid_verts, bot_verts]
    # lid oriented upward (+z outward), bottom downward
    lid_faces = _grid_faces(n_top)
    bot_faces = _grid_faces(n_top)[:, ::-1] + nv
    faces = [lid_faces, bot_faces]

    idx = np.arange(nv).reshape(n_top + 1, n_top + 1)
    offset = 2 * nv

    def wall(top_line, bot_line, flip):
        nonlocal offset
        k = len(top_line)
        # vertical strips between matching lid and bottom border vertices
        tv = lid_verts[top_line]
        bv = bot_verts[bot_line]
        w = np.concatenate([tv, bv])
        t = np.arange(k - 1)
        f1 = np.stack([t, t + k, t + 1], axis=1)
        f2 = np.stack([t + 1, t + k, t + k + 1], axis=1)
        f = np.concatenate([f1, f2])
        if flip:
            f = f[:, ::-1]
        verts.append(w)
        faces.append(f + offset)
        offset += 2 * k

    wall(idx[:, 0], idx[:, 0], flip=False)    # y = lo
    wall(idx[:, -1], idx[:, -1], flip=True)   # y = hi
    wall(idx[0, :], idx[0, :], flip=True)     # x = lo
    wall(idx[-1, :], idx[-1, :], flip=False)  # x = hi

    verts = np.concatenate(verts)
    faces = np.concatenate(faces)
    verts, faces = _weld(verts, faces)
    mesh = build_boundary(verts, faces, dimension=3)
    info = {"graph": u, "xy_range": xy_range}
    return mesh, info


def _weld(verts, faces, tol=1e-9):
    key = np.round(verts / tol).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return verts[first], inv[faces]


def koch_prefractal(angle_deg=60.0, depth=4, n_base=3, base_radius=1.0):
    """Koch-style prefractal closed curve; angle -> 0 flattens toward the base polygon."""
    t = 2 * np.pi * np.arange(n_base) / n_base + np.pi / 2
    pts = np.stack([np.cos(t), np.sin(t)], axis=1) * base_radius
    ang = np.deg2rad(angle_deg)
    for _ in range(depth):
        out = []
        for i in range(len(pts)):
            a, b = pts[i], pts[(i + 1) % len(pts)]
            d = b - a
            p1 = a + d / 3
            p2 = a + 2 * d / 3
            mid = (p1 + p2) / 2
            nrm = np.array([d[1], -d[0]])  # right of travel = outward for CCW
            h = np.tan(ang / 2) * np.linalg.norm(d) / 6
            apex = mid + nrm / np.linalg.norm(nrm) * h
            out += [a, p1, apex, p2]
        pts = np.asarray(out)
    return build_boundary(pts)


def star_polygon(n_spikes=8, inner=0.6, outer=1.0, pts_per_edge=24):
    t = np.pi * np.arange(2 * n_spikes) / n_spikes
    r = np.where(np.arange(2 * n_spikes) % 2 == 0, outer, inner)
    corners = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    pts = []
    for i in range(len(corners)):
        a, b = corners[i], corners[(i + 1) % len(corners)]
        s = np.arange(pts_per_edge) / pts_per_edge
        pts.append(a + s[:, None] * (b - a))
    return build_boundary(np.concatenate(pts))


def cusp_domain(sharpness=2.0, n=1024, radius=1.0):
    """Disk with an inward cusp at angle 0; larger sharpness pinches harder.

    r(theta) = radius * (1 - exp(-sharpness) ... ) profile: the notch depth and
    opening angle narrow as sharpness grows.
    """
    t = 2 * np.pi * np.arange(1, n + 1) / (n + 2)
    width = 1.0 / (1.0 + sharpness)
    notch = 0.8 * np.exp(-((np.minimum(t, 2 * np.pi - t)) / width) ** 2)
    r = radius * (1 - notch)
    verts = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    return build_boundary(verts)


def slit_domain(width=0.02, length=0.9, n_circle=512, radius=1.0):
    """Disk with a thin rectangular slit cut inward from the right edge."""
    half = width / 2
    theta0 = np.arcsin(half / radius)
    t = np.linspace(theta0, 2 * np.pi - theta0, n_circle)
    arc = np.stack([radius * np.cos(t), radius * np.sin(t)], axis=1)
    x_in = radius * np.cos(theta0) - length
    n_slit = max(16, int(length / (2 * np.pi * radius / n_circle)))
    xs = np.linspace(radius * np.cos(theta0), x_in, n_slit + 1)
    lower = np.stack([xs[::-1], np.full(n_slit + 1, -half)], axis=1)[:-1]
    tip = np.array([[x_in, half]])
    upper = np.stack([xs, np.full(n_slit + 1, half)], axis=1)[1:-1]
    verts = np.concatenate([arc, lower, tip, upper])
    return build_boundary(verts)


def sphere_bump(subdivisions=4, amplitude=0.05, frequency=3.0, radius=1.0):
    """Radially perturbed sphere r(x) = radius * (1 + amplitude * Y(x))."""
    base = icosphere(subdivisions, radius=1.0)
    v = base.vertices
    bump = np.sin(frequency * v[:, 0] * 2.5) * np.sin(frequency * v[:, 1] * 2.5) * np.cos(
        frequency * v[:, 2] * 2.5
    )
    r = radius * (1 + amplitude * bump)
    return build_boundary(v * r[:, None], base.facets, dimension=3)


# -- logarithmic funnel profiles -------------------------------------------


def log_funnel_profile(height, gauge, outer_radius=1.0, smooth=0.15):
    """C^1 radial profile u(rho): ~height inside the core, decaying like
    height * log(outer/rho) / gauge out to u = 0 at rho = outer_radius.

    gauge = log(outer_radius / core_radius).  Returns (u, core_radius).
    """
    core = outer_radius * np.exp(-gauge)

    def u(rho):
        rho = np.maximum(np.abs(rho), core * 1e-6)
        base = height * np.log(outer_radius / rho) / gauge
        val = np.clip(base, 0.0, height)
        # mollify the two kinks over a band of relative width `smooth`
        lo, hi = core * (1 - smooth), core * (1 + smooth)
        band = (rho > lo) & (rho < hi)
        if np.any(band):
            s = (rho[band] - lo) / (hi - lo)
            top = height
            slope_val = height * np.log(outer_radius / rho[band]) / gauge
            w = 3 * s**2 - 2 * s**3
            val[band] = np.minimum(top, (1 - w) * top + w * slope_val)
        lo2, hi2 = outer_radius * (1 - smooth), outer_radius
        band2 = (rho > lo2) & (rho <= hi2)
        if np.any(band2):
            s = (rho[band2] - lo2) / (hi2 - lo2)
            w = 3 * s**2 - 2 * s**3
            val[band2] = val[band2] * (1 - w)
        val[rho >= hi2] = 0.0
        return val

    return u, core


def funnel_graph_2d(height, gauge, n_top=2048, span=8.0, outer_radius=1.0):
    """2D wavy-lid box whose lid is a logarithmic funnel spike at x = 0."""
    u, core = log_funnel_profile(height, gauge, outer_radius)
    # grade the lid sampling logarithmically toward the spike core
    n_half = n_top // 2
    lin = np.linspace(core / 4, span / 2, n_half // 2)
    logs = np.geomspace(core / 4, outer_radius * 1.05, n_half - n_half // 2)
    xs = np.unique(np.concatenate([[0.0], lin, logs, np.linspace(0, span / 2, 64)]))
    xs = np.concatenate([-xs[::-1][:-1], xs])
    top = np.stack([xs, u(np.abs(xs))], axis=1)
    depth = 2.0
    ymin = -depth
    right = np.array([[span / 2, ymin]])
    left = np.array([[-span / 2, ymin]])
    verts = np.concatenate([top, right, left])
    mesh = build_boundary(verts)
    info = {"graph": lambda x: u(np.abs(np.atleast_1d(x))), "core": core,
            "outer_radius": outer_radius, "height": height, "gauge": gauge}
    return mesh, info


def funnel_graph_3d(height, gauge, n_angular=96, n_radial=72, span=4.0,
                    outer_radius=1.0):
    """3D box-with-lid whose lid carries a radially symmetric log-funnel spike."""
    u, core = log_funnel_profile(height, gauge, outer_radius)

    def lid(x, y):
        return float(u(np.hypot(x, y)))

    # structured lid: log-spaced rings around the spike + linear frame
    rings = np.geomspace(core / 3, outer_radius, n_radial)
    frame = np.linspace(outer_radius, span / 2 * np.sqrt(2), max(8, n_radial // 4))[1:]
    radii = np.concatenate([[0.0], rings, frame])
    ang = 2 * np.pi * np.arange(n_angular) / n_angular
    pts = [np.array([[0.0, 0.0]])]
    for r in radii[1:]:
        pts.append(np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1))
    pts = np.concatenate(pts)
    half = span / 2
    keep = (np.abs(pts[:, 0]) <= half * 0.999) & (np.abs(pts[:, 1]) <= half * 0.999)
    pts = pts[keep]
    # add the square frame border so the lid tiles the box cross-section
    edge = np.linspace(-half, half, n_angular // 2)
    border = np.concatenate(
        [
            np.stack([edge, np.full_like(edge, -half)], axis=1),
            np.stack([edge, np.full_like(edge, half)], axis=1),
            np.stack([np.full_like(edge, -half), edge], axis=1),
            np.stack([np.full_like(edge, half), edge], axis=1),
        ]
    )
    pts = np.concatenate([pts, border])
    from scipy.spatial import Delaunay

    pts = np.unique(np.round(pts / 1e-12).astype(np.int64), axis=0) * 1e-12
    dela = Delaunay(pts)
    faces = dela.simplices
    z = u(np.linalg.norm(pts, axis=1))
    lid_verts = np.stack([pts[:, 0], pts[:, 1], z], axis=1)
    # orient lid upward
    tri = lid_verts[faces]
    up = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])[:, 2]
    faces[up < 0] = faces[up < 0][:, ::-1]

    depth = 1.5
    nv = len(lid_verts)
    zmin = -depth
    bot_verts = np.stack([pts[:, 0], pts[:, 1], np.full(nv, zmin)], axis=1)
    bot_faces = faces[:, ::-1] + nv
    verts = [lid_verts, bot_verts]
    all_faces = [faces, bot_faces]
    offset = 2 * nv

    # walls: connect boundary edges of the lid triangulation straight down
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    und = np.sort(edges, axis=1)
    _, first, counts = np.unique(und, axis=0, return_index=True, return_counts=True)
    boundary_edges = edges[first[counts == 1]]
    walls = []
    for a, b in boundary_edges:
        # lid uses (a -> b); the wall must traverse it the opposite way
        walls.append([b, a, a + nv])
        walls.append([b, a + nv, b + nv])
    all_faces.append(np.asarray(walls, int))
    verts = np.concatenate(verts)
    all_faces = np.concatenate(all_faces)
    verts, all_faces = _weld(verts, all_faces)
    mesh = build_boundary(verts, all_faces, dimension=3)
    info = {"graph": lid, "core": core, "outer_radius": outer_radius,
            "height": height, "gauge": gauge}
    return mesh, info
