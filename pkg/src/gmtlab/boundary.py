"""Discrete two-sided domain boundaries.

A boundary is an oriented PL hypersurface: a closed polyline in R^2 or a
triangle mesh in R^3.  Surface measure is carried by one quadrature atom per
facet (position = centroid, weight = facet measure).  All downstream
integrals are weighted sums over atoms, with facets that straddle a query
region contributing their clipped fraction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateFacet,
    EmptyBall,
    EmptyRegion,
    InconsistentOrientation,
    NonManifold,
    OffBoundary,
)

BOUNDARY_TOL = 1e-12
CLIP_TOL = 1e-2  # subdivision clipping: leaf diameter below CLIP_TOL * r


@dataclass(frozen=True)
class SurfaceAtom:
    position: np.ndarray
    unit_normal: np.ndarray
    weight: float
    diameter: float
    facet_id: int


@dataclass(frozen=True)
class CylinderSpec:
    """Axis-aligned-in-nu cylinder: height |<y-x, nu>| < r, radius |perp| < r."""

    center: np.ndarray
    radius_height: float
    axis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, float))
        axis = np.asarray(self.axis, float)
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-9:
            axis = axis / norm
        object.__setattr__(self, "axis", axis)
        if self.radius_height <= 0:
            raise ValueError("cylinder radius must be positive")


@dataclass
class ClippedRegion:
    """Atom index set with clipped weights, the output of region queries."""

    atom_indices: np.ndarray
    clipped_weights: np.ndarray

    @property
    def measure(self) -> float:
        return float(self.clipped_weights.sum())

    def records(self):
        return [
            {"atom_id": int(i), "clipped_weight": float(w)}
            for i, w in zip(self.atom_indices, self.clipped_weights)
        ]


# ---------------------------------------------------------------------------
# low-level kernels
# ---------------------------------------------------------------------------


def _segment_closest(P, A, B):
    """Closest points on segments [A,B] to points P.  All (M, 2) arrays."""
    d = B - A
    denom = np.einsum("ij,ij->i", d, d)
    denom = np.where(denom > 0, denom, 1.0)
    t = np.einsum("ij,ij->i", P - A, d) / denom
    t = np.clip(t, 0.0, 1.0)
    return A + t[:, None] * d


def _triangle_closest(P, tri):
    """Closest points on triangles to points P.

    P: (M, 3); tri: (M, 3, 3).  Vectorized version of the standard
    region-based closest-point-on-triangle routine.
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    ap = P - a

    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)

    bp = P - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)

    cp = P - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    out = np.empty_like(P)
    done = np.zeros(len(P), bool)

    def assign(mask, value):
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
        done[m] = True

    assign((d1 <= 0) & (d2 <= 0), a)                      # vertex a
    assign((d3 >= 0) & (d4 <= d3), b)                     # vertex b
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0)
    assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab[:, None] * ab)  # edge ab
    assign((d6 >= 0) & (d5 <= d6), c)                     # vertex c
    vb = d5 * d2 - d1 * d6
    with np.errstate(divide="ignore", invalid="ignore"):
        w_ac = np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0)
    assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac[:, None] * ac)  # edge ac
    va = d3 * d6 - d5 * d4
    num = d4 - d3
    den = (d4 - d3) + (d5 - d6)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_bc = np.where(den != 0, num / den, 0.0)
    assign((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w_bc[:, None] * (c - b))

    # interior
    denom = va + vb + vc
    denom = np.where(denom != 0, denom, 1.0)
    v = vb / denom
    w = vc / denom
    assign(np.ones(len(P), bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


def _facet_closest(P, verts):
    """Dispatch: verts (M, n, dim) facet vertex stacks."""
    if verts.shape[1] == 2:
        return _segment_closest(P, verts[:, 0], verts[:, 1])
    return _triangle_closest(P, verts)


def _subdivide_tris(tris):
    """Split each triangle (K,3,3) into 4 midpoint children (4K,3,3)."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
    return np.concatenate(
        [
            np.stack([a, ab, ca], axis=1),
            np.stack([ab, b, bc], axis=1),
            np.stack([ca, bc, c], axis=1),
            np.stack([ab, bc, ca], axis=1),
        ]
    )


def _tri_areas(tris):
    return 0.5 * np.linalg.norm(
        np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]), axis=-1
    )


def _tri_diams(tris):
    e0 = np.linalg.norm(tris[:, 1] - tris[:, 0], axis=-1)
    e1 = np.linalg.norm(tris[:, 2] - tris[:, 1], axis=-1)
    e2 = np.linalg.norm(tris[:, 0] - tris[:, 2], axis=-1)
    return np.maximum(e0, np.maximum(e1, e2))


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------


@dataclass
class BoundaryMesh:
    """Oriented PL hypersurface with per-facet measure atoms.

    Immutable after construction; every query method is read-only.
    """

    dimension: int
    vertices: np.ndarray
    facets: np.ndarray
    positions: np.ndarray = field(repr=False, default=None)
    normals: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray = field(repr=False, default=None)
    diameters: np.ndarray = field(repr=False, default=None)
    closed: bool = True
    orientation_flipped: bool = False
    _tree: cKDTree = field(repr=False, default=None)
    _pseudo: dict = field(repr=False, default=None)

    # -- basic derived quantities --------------------------------------

    @property
    def n_atoms(self):
        return len(self.facets)

    @property
    def total_measure(self):
        return float(self.weights.sum())

    @property
    def max_diameter(self):
        return float(self.diameters.max())

    @property
    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diam(self):
        lo, hi = self.bounding_box
        return float(np.linalg.norm(hi - lo))

    @property
    def r_min(self):
        """Smallest reliable query scale: 4x the largest facet diameter."""
        return 4.0 * self.max_diameter

    def atom(self, i) -> SurfaceAtom:
        return SurfaceAtom(
            self.positions[i], self.normals[i], float(self.weights[i]),
            float(self.diameters[i]), int(i),
        )

    def facet_vertices(self, idx=None):
        idx = np.arange(len(self.facets)) if idx is None else np.asarray(idx)
        return self.vertices[self.facets[idx]]

    # -- distance queries ------------------------------------------------

    def nearest_atom(self, P):
        P = np.atleast_2d(np.asarray(P, float))
        d, idx = self._tree.query(P)
        return d, idx

    def nearest_facet(self, P):
        """Exact distance to the surface with nearest facet and foot point.

        Certified by k-NN escalation over the atom index: a candidate set
        covers the optimum once min(exact) <= dist(k-th centroid) - max_diam.
        """
        P = np.atleast_2d(np.asarray(P, float))
        m = len(P)
        dist = np.full(m, np.inf)
        fidx = np.zeros(m, int)
        foot = np.zeros_like(P)
        todo = np.arange(m)
        k = min(8, self.n_atoms)
        while len(todo):
            q = P[todo]
            knn_d, knn_i = self._tree.query(q, k=k)
            if k == 1:
                knn_d, knn_i = knn_d[:, None], knn_i[:, None]
            flat_pts = np.repeat(q, k, axis=0)
            flat_tris = self.facet_vertices(knn_i.ravel())
            cp = _facet_closest(flat_pts, flat_tris)
            d = np.linalg.norm(flat_pts - cp, axis=1).reshape(len(q), k)
            j = np.argmin(d, axis=1)
            rows = np.arange(len(q))
            dist[todo] = d[rows, j]
            fidx[todo] = knn_i[rows, j]
            foot[todo] = cp.reshape(len(q), k, -1)[rows, j]
            if k >= self.n_atoms:
                break
            certified = dist[todo] <= knn_d[:, -1] - self.max_diameter
            todo = todo[~certified]
            k = min(k * 4, self.n_atoms)
        return dist, fidx, foot

    def unsigned_distance(self, P):
        return self.nearest_facet(P)[0]

    def contains(self, P):
        """Strict inside test for the positive side (winding / solid angle parity)."""
        P = np.atleast_2d(np.asarray(P, float))
        if not self.closed:
            # half-space surrogate relative to the nearest facet
            _, fi, foot = self.nearest_facet(P)
            side = np.einsum("ij,ij->i", P - foot, self.normals[fi])
            return side < 0
        if self.dimension == 2:
            return np.abs(self._winding_2d(P)) > 0.5
        return self._ray_parity_3d(P)

    def _winding_2d(self, P, chunk=262144):
        A = self.vertices[self.facets[:, 0]]
        B = self.vertices[self.facets[:, 1]]
        out = np.empty(len(P))
        step = max(1, chunk // max(1, len(A)))
        for s in range(0, len(P), step):
            p = P[s : s + step]
            ax = A[None, :, 0] - p[:, None, 0]
            ay = A[None, :, 1] - p[:, None, 1]
            bx = B[None, :, 0] - p[:, None, 0]
            by = B[None, :, 1] - p[:, None, 1]
            ang = np.arctan2(ax * by - ay * bx, ax * bx + ay * by)
            out[s : s + step] = ang.sum(axis=1) / (2 * np.pi)
        return out

    def _ray_parity_3d(self, P, chunk=4194304):
        tri = self.facet_vertices()
        v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
        inside = np.zeros(len(P), bool)
        rng = np.random.default_rng(718281828)
        todo = np.arange(len(P))
        for _ in range(8):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            pvec = np.cross(d, e2)
            det = np.einsum("ij,ij->i", e1, pvec)
            ok_f = np.abs(det) > 1e-14
            inv = np.where(ok_f, 1.0 / np.where(ok_f, det, 1.0), 0.0)
            step = max(1, chunk // max(1, len(tri)))
            bad = np.zeros(len(todo), bool)
            cnt = np.zeros(len(todo), int)
            for s in range(0, len(todo), step):
                p = P[todo[s : s + step]]
                tv = p[:, None, :] - v0[None, :, :]
                u = np.einsum("pfj,fj->pf", tv, pvec) * inv[None, :]
                qv = np.cross(tv, e1[None, :, :])
                v = np.einsum("pfj,j->pf", qv, d) * inv[None, :]
                t = np.einsum("pfj,fj->pf", qv, e2) * inv[None, :]
                hit = (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0) & ok_f[None, :]
                margin = np.minimum.reduce([np.abs(u), np.abs(v), np.abs(1 - u - v), np.abs(t)])
                near = (margin < 1e-9) & (t > -1e-9)
                bad[s : s + step] = (near & ok_f[None, :]).any(axis=1)
                cnt[s : s + step] = hit.sum(axis=1)
            inside[todo] = cnt % 2 == 1
            todo = todo[bad]
            if len(todo) == 0:
                break
        return inside

    def _pseudo_normals(self):
        """Angle-weighted pseudonormals (exact sign test for closed PL surfaces)."""
        if self._pseudo is not None:
            return self._pseudo
        pn = {}
        if self.dimension == 2:
            vn = np.zeros_like(self.vertices)
            np.add.at(vn, self.facets[:, 0], self.normals)
            np.add.at(vn, self.facets[:, 1], self.normals)
            pn["vertex"] = vn
        else:
            tri = self.facet_vertices()
            vn = np.zeros_like(self.vertices)
            for k in range(3):
                e1 = tri[:, (k + 1) % 3] - tri[:, k]
                e2 = tri[:, (k + 2) % 3] - tri[:, k]
                cosang = np.einsum("ij,ij->i", e1, e2) / (
                    np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
                )
                ang = np.arccos(np.clip(cosang, -1, 1))
                np.add.at(vn, self.facets[:, k], ang[:, None] * self.normals)
            pn["vertex"] = vn
            edges = np.concatenate(
                [self.facets[:, [0, 1]], self.facets[:, [1, 2]], self.facets[:, [2, 0]]]
            )
            und = np.sort(edges, axis=1)
            uniq, inv = np.unique(und, axis=0, return_inverse=True)
            en = np.zeros((len(uniq), 3))
            np.add.at(en, inv, np.tile(self.normals, (3, 1)))
            pn["edges"] = uniq
            pn["edge_normal"] = en
            pn["facet_edge_id"] = inv.reshape(3, -1).T
        object.__setattr__(self, "_pseudo", pn)
        return pn

    def _sign_at(self, P, fidx, foot):
        """Inside/outside sign via the pseudonormal at the foot point."""
        pn = self._pseudo_normals()
        u = P - foot
        if self.dimension == 2:
            A = self.vertices[self.facets[fidx, 0]]
            B = self.vertices[self.facets[fidx, 1]]
            L = np.linalg.norm(B - A, axis=1)
            nrm = self.normals[fidx].copy()
            at_a = np.linalg.norm(foot - A, axis=1) < 1e-9 * L
            at_b = np.linalg.norm(foot - B, axis=1) < 1e-9 * L
            nrm[at_a] = pn["vertex"][self.facets[fidx[at_a], 0]]
            nrm[at_b] = pn["vertex"][self.facets[fidx[at_b], 1]]
        else:
            tri = self.facet_vertices(fidx)
            # barycentric coordinates of the foot
            v0 = tri[:, 1] - tri[:, 0]
            v1 = tri[:, 2] - tri[:, 0]
            v2 = foot - tri[:, 0]
            d00 = np.einsum("ij,ij->i", v0, v0)
            d01 = np.einsum("ij,ij->i", v0, v1)
            d11 = np.einsum("ij,ij->i", v1, v1)
            d20 = np.einsum("ij,ij->i", v2, v0)
            d21 = np.einsum("ij,ij->i", v2, v1)
            den = d00 * d11 - d01 * d01
            den = np.where(den != 0, den, 1.0)
            v = (d11 * d20 - d01 * d21) / den
            w = (d00 * d21 - d01 * d20) / den
            bar = np.stack([1 - v - w, v, w], axis=1)
            nrm = self.normals[fidx].copy()
            tol = 1e-9
            nz = bar > tol
            nnz = nz.sum(axis=1)
            vert_case = nnz == 1
            if vert_case.any():
                which = np.argmax(bar[vert_case], axis=1)
                vid = self.facets[fidx[vert_case], which]
                nrm[vert_case] = pn["vertex"][vid]
            edge_case = nnz == 2
            if edge_case.any():
                zero = np.argmin(bar[edge_case], axis=1)
                # barycentric index k zero -> edge opposite vertex k
                edge_of = np.array([1, 2, 0])  # k=0 -> edge (1,2) etc.
                eid = pn["facet_edge_id"][fidx[edge_case], edge_of[zero]]
                nrm[edge_case] = pn["edge_normal"][eid]
        return np.einsum("ij,ij->i", u, nrm)

    def signed_distance(self, P, method="pseudonormal"):
        """Distance to the boundary, negative inside the positive side.

        Points within BOUNDARY_TOL of a facet report exactly 0.  The default
        sign test uses angle-weighted pseudonormals at the nearest foot point
        (exact for closed PL surfaces); method="parity" uses the winding
        number / jittered-ray parity instead.
        """
        P = np.atleast_2d(np.asarray(P, float))
        d, fidx, foot = self.nearest_facet(P)
        if method == "parity" and self.closed:
            sgn = np.where(self.contains(P), -1.0, 1.0)
        else:
            sgn = np.where(self._sign_at(P, fidx, foot) < 0, -1.0, 1.0)
        out = sgn * d
        out[d <= BOUNDARY_TOL] = 0.0
        return out

    def snap_to_boundary(self, x):
        """Snap x to the nearest surface point; error if farther than one facet diameter."""
        x = np.asarray(x, float)
        d, fi, foot = self.nearest_facet(x[None, :])
        if d[0] > self.diameters[fi[0]]:
            raise OffBoundary(
                f"point at distance {d[0]:.3g} exceeds local facet diameter "
                f"{self.diameters[fi[0]]:.3g}"
            )
        return foot[0]

    # -- surface sampling ------------------------------------------------

    def sample_surface(self, pitch, center=None, radius=None):
        """Quasi-uniform point sample of the surface at the given pitch.

        Restricted to B(center, radius) when given.  Certified: every point
        of the (restricted) surface lies within `pitch` of a sample.
        """
        if center is not None:
            center = np.asarray(center, float)
            d = np.linalg.norm(self.positions - center, axis=1)
            keep = np.flatnonzero(d <= radius + self.diameters)
        else:
            keep = np.arange(self.n_atoms)
        if self.dimension == 2:
            A = self.vertices[self.facets[keep, 0]]
            B = self.vertices[self.facets[keep, 1]]
            L = np.linalg.norm(B - A, axis=1)
            nseg = np.maximum(1, np.ceil(L / pitch).astype(int))
            pts = []
            for a, b, k in zip(A, B, nseg):
                t = (np.arange(k) + 0.5) / k
                pts.append(a + t[:, None] * (b - a))
            pts = np.concatenate(pts) if pts else np.zeros((0, 2))
        else:
            tris = self.facet_vertices(keep)
            out = []
            while len(tris):
                dm = _tri_diams(tris)
                fine = dm <= pitch
                if fine.any():
                    out.append(tris[fine].mean(axis=1))
                tris = _subdivide_tris(tris[~fine]) if (~fine).any() else tris[:0]
            pts = np.concatenate(out) if out else np.zeros((0, 3))
        if center is not None and len(pts):
            pts = pts[np.linalg.norm(pts - center, axis=1) <= radius]
        return pts


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def _check_manifold_2d(facets, n_vertices):
    heads = np.zeros(n_vertices, int)
    tails = np.zeros(n_vertices, int)
    np.add.at(tails, facets[:, 0], 1)
    np.add.at(heads, facets[:, 1], 1)
    used = (heads + tails) > 0
    deg = heads + tails
    if (deg[used] != 2).any():
        raise NonManifold("every vertex of a closed polyline must join exactly 2 segments")
    if (heads[used] != 1).any() or (tails[used] != 1).any():
        raise InconsistentOrientation("segment directions disagree at a vertex")


def _check_manifold_3d(facets):
    edges = np.concatenate([facets[:, [0, 1]], facets[:, [1, 2]], facets[:, [2, 0]]])
    und = np.sort(edges, axis=1)
    uniq, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    if (counts != 2).any():
        raise NonManifold("every edge of a closed triangle mesh must join exactly 2 facets")
    forward = edges[:, 0] < edges[:, 1]
    fwd_count = np.zeros(len(uniq), int)
    np.add.at(fwd_count, inv, forward.astype(int))
    if (fwd_count != 1).any():
        raise InconsistentOrientation("paired facets traverse a shared edge in the same direction")


def build_boundary(vertices, facets=None, dimension=None, closed=True,
                   tol_closure=1e-9):
    """Build a BoundaryMesh from vertex/facet lists.

    2D: facets are index pairs; omitted facets mean the consecutive closed
    polyline.  3D: facets are triangles.  Orientation is validated (signed
    area / volume); a consistently inward input is flipped and flagged.
    """
    vertices = np.asarray(vertices, float)
    if dimension is None:
        dimension = vertices.shape[1]
    if facets is None:
        if dimension != 2:
            raise ValueError("automatic facets only for 2D closed polylines")
        n = len(vertices)
        facets = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    facets = np.asarray(facets, int)

    if dimension == 2:
        if closed:
            _check_manifold_2d(facets, len(vertices))
        A, B = vertices[facets[:, 0]], vertices[facets[:, 1]]
        d = B - A
        lengths = np.linalg.norm(d, axis=1)
        if (lengths <= 1e-14 * max(1.0, np.abs(vertices).max())).any():
            raise DegenerateFacet("zero-length segment")
        normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / lengths[:, None]
        positions = (A + B) / 2
        weights = lengths
        diameters = lengths
        signed_area = 0.5 * np.sum(A[:, 0] * B[:, 1] - B[:, 0] * A[:, 1])
        flipped = False
        if closed and signed_area < 0:
            facets = facets[:, ::-1]
            normals = -normals
            flipped = True
    elif dimension == 3:
        if closed:
            _check_manifold_3d(facets)
        tri = vertices[facets]
        cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        areas = 0.5 * np.linalg.norm(cr, axis=1)
        if (areas <= 1e-20 * max(1.0, np.abs(vertices).max()) ** 2).any():
            raise DegenerateFacet("zero-area triangle")
        normals = cr / (2 * areas)[:, None]
        positions = tri.mean(axis=1)
        weights = areas
        diameters = _tri_diams(tri)
        vol = np.einsum("ij,ij->i", tri[:, 0], cr).sum() / 6.0
        flipped = False
        if closed and vol < 0:
            facets = facets[:, [0, 2, 1]]
            normals = -normals
            flipped = True
    else:
        raise ValueError("dimension must be 2 or 3")

    mesh = BoundaryMesh(
        dimension=dimension, vertices=vertices, facets=facets,
        positions=positions, normals=normals, weights=weights,
        diameters=diameters, closed=closed, orientation_flipped=flipped,
        _tree=cKDTree(positions),
    )
    if closed:
        flux = np.linalg.norm((mesh.weights[:, None] * mesh.normals).sum(axis=0))
        if flux > tol_closure * mesh.total_measure:
            raise InconsistentOrientation(
                f"Gauss-Green closure violated: |sum w nu| = {flux:.3g}"
            )
    return mesh


def load_json(path_or_dict):
    """2D JSON input: {"dimension":2, "vertices":[[x,y],...], "closed":true}."""
    if isinstance(path_or_dict, (str, bytes)):
        with open(path_or_dict) as f:
            spec = json.load(f)
    else:
        spec = path_or_dict
    dim = spec.get("dimension", 2)
    verts = spec["vertices"]
    facets = spec.get("facets")
    closed = spec.get("closed", True)
    return build_boundary(verts, facets, dimension=dim, closed=closed)


def load_obj(path):
    """Wavefront OBJ subset: v / f lines, triangles only."""
    verts, faces = [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 3:
                    raise ValueError("only triangle faces supported")
                faces.append(idx)
    return build_boundary(np.array(verts), np.array(faces), dimension=3)


def save_obj(mesh, path):
    with open(path, "w") as f:
        for v in mesh.vertices:
            f.write("v " + " ".join(f"{x:.17g}" for x in v) + "\n")
        for fc in mesh.facets:
            f.write("f " + " ".join(str(i + 1) for i in fc) + "\n")


# ---------------------------------------------------------------------------
# region queries
# ---------------------------------------------------------------------------


def _clip_fractions_2d(mesh, constraint_intervals):
    """Exact clipped length fractions for 2D segments.

    constraint_intervals: callable(A, B) -> (t_lo, t_hi) arrays of the
    parameter interval satisfying the region, already intersected with [0,1].
    """
    A = mesh.vertices[mesh.facets[:, 0]]
    B = mesh.vertices[mesh.facets[:, 1]]
    t0, t1 = constraint_intervals(A, B)
    return np.clip(t1 - t0, 0.0, 1.0)


def _interval_abs_linear(c0, c1, r):
    """{t: |c0 + t c1| <= r} intersected with [0,1]; arrays elementwise."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (-r - c0) / c1
        tb = (r - c0) / c1
    lo = np.minimum(ta, tb)
    hi = np.maximum(ta, tb)
    const = np.abs(c1) < 1e-300
    inside_const = np.abs(c0) <= r
    lo = np.where(const, np.where(inside_const, 0.0, 1.0), lo)
    hi = np.where(const, np.where(inside_const, 1.0, 0.0), hi)
    return np.clip(lo, 0, 1), np.clip(hi, 0, 1)


def _ball_fractions_2d(mesh, x, r):
    A = mesh.vertices[mesh.facets[:, 0]]
    B = mesh.vertices[mesh.facets[:, 1]]
    d = B - A
    f = A - x
    a = np.einsum("ij,ij->i", d, d)
    b = 2 * np.einsum("ij,ij->i", f, d)
    c = np.einsum("ij,ij->i", f, f) - r * r
    disc = b * b - 4 * a * c
    hit = disc > 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = np.where(hit, (-b - sq) / (2 * a), 1.0)
        t1 = np.where(hit, (-b + sq) / (2 * a), 0.0)
    return np.clip(np.clip(t1, 0, 1) - np.clip(t0, 0, 1), 0, 1)


def _cylinder_fractions_2d(mesh, cyl):
    A = mesh.vertices[mesh.facets[:, 0]]
    B = mesh.vertices[mesh.facets[:, 1]]
    d = B - A
    nu = cyl.axis
    perp = np.array([-nu[1], nu[0]])
    r = cyl.radius_height
    q0 = (A - cyl.center) @ nu
    q1 = d @ nu
    p0 = (A - cyl.center) @ perp
    p1 = d @ perp
    lo1, hi1 = _interval_abs_linear(q0, q1, r)
    lo2, hi2 = _interval_abs_linear(p0, p1, r)
    lo = np.maximum(lo1, lo2)
    hi = np.minimum(hi1, hi2)
    return np.clip(hi - lo, 0, 1)


def _subdivision_fractions_3d(mesh, inside_fn, outside_fn, leaf_diam):
    """Clipped area fractions of triangles w.r.t. a convex region.

    inside_fn(tris) / outside_fn(tris) are certain-containment tests; the
    remainder is subdivided until diameter < leaf_diam, then resolved by
    a centroid test.
    """
    tris = mesh.facet_vertices()
    fid = np.arange(len(tris))
    areas = np.zeros(len(tris))
    while len(tris):
        inside = inside_fn(tris)
        outside = outside_fn(tris) & ~inside
        if inside.any():
            np.add.at(areas, fid[inside], _tri_areas(tris[inside]))
        rest = ~inside & ~outside
        tris, fid = tris[rest], fid[rest]
        if not len(tris):
            break
        small = _tri_diams(tris) < leaf_diam
        if small.any():
            cen_in = inside_fn(tris[small], centroid=True)
            take = small.copy()
            take[small] = cen_in
            if take.any():
                np.add.at(areas, fid[take], _tri_areas(tris[take]))
            tris, fid = tris[~small], fid[~small]
        if len(tris):
            tris = _subdivide_tris(tris)
            fid = np.tile(fid, 4)
    return areas / mesh.weights


def _ball_tests_3d(x, r):
    def inside(tris, centroid=False):
        if centroid:
            return np.linalg.norm(tris.mean(axis=1) - x, axis=1) <= r
        return (np.linalg.norm(tris - x, axis=2) <= r).all(axis=1)

    def outside(tris):
        flat = tris.reshape(-1, 3, 3)
        cp = _triangle_closest(np.broadcast_to(x, (len(flat), 3)).copy(), flat)
        return np.linalg.norm(cp - x, axis=1) >= r

    return inside, outside


def _cyl_tests_3d(cyl):
    x, r, nu = cyl.center, cyl.radius_height, cyl.axis

    def coords(pts):
        rel = pts - x
        q = rel @ nu
        perp = rel - q[..., None] * nu
        return q, np.linalg.norm(perp, axis=-1)

    def inside(tris, centroid=False):
        pts = tris.mean(axis=1) if centroid else tris
        q, p = coords(pts)
        ok = (np.abs(q) <= r) & (p <= r)
        return ok if centroid else ok.all(axis=1)

    def outside(tris):
        q, p = coords(tris)
        above = (q > r).all(axis=1)
        below = (q < -r).all(axis=1)
        dm = _tri_diams(tris)
        far = (p.min(axis=1) - dm) >= r
        return above | below | far

    return inside, outside


def surface_ball(mesh, x, r, snap=True):
    """Atoms of B(x, r) with exactly clipped weights (2D) or subdivision-clipped (3D)."""
    x = np.asarray(x, float)
    if snap:
        x = mesh.snap_to_boundary(x)
    if r <= 0:
        raise ValueError("radius must be positive")
    if mesh.dimension == 2:
        frac = _ball_fractions_2d(mesh, x, r)
    else:
        inside, outside = _ball_tests_3d(x, r)
        frac = _subdivision_fractions_3d(mesh, inside, outside, CLIP_TOL * r)
    idx = np.flatnonzero(frac > 0)
    if len(idx) == 0:
        raise EmptyBall(f"no boundary mass in B({x}, {r})")
    return ClippedRegion(idx, frac[idx] * mesh.weights[idx])


def cylinder_clip(mesh, cyl):
    """Atoms of the cylinder window C(x, r, nu) with clipped weights."""
    if mesh.dimension == 2:
        frac = _cylinder_fractions_2d(mesh, cyl)
    else:
        inside, outside = _cyl_tests_3d(cyl)
        frac = _subdivision_fractions_3d(mesh, inside, outside,
                                         CLIP_TOL * cyl.radius_height)
    idx = np.flatnonzero(frac > 0)
    return ClippedRegion(idx, frac[idx] * mesh.weights[idx])


def average_normal(mesh, region):
    """Weighted mean unit normal over a region (|result| <= 1)."""
    if isinstance(region, ClippedRegion):
        idx, w = region.atom_indices, region.clipped_weights
    else:
        idx = np.asarray(region, int)
        w = mesh.weights[idx]
    if len(idx) == 0 or w.sum() <= 0:
        raise EmptyRegion("average_normal of an empty region")
    return (w[:, None] * mesh.normals[idx]).sum(axis=0) / w.sum()
