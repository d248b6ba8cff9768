"""Conforming triangulations of the perforated domain with a graded neck.

Boundary polylines are placed on the exact curves with spacing taken from a
size field; the interior is filled by constrained quality Delaunay
refinement (Shewchuk's Triangle, ``q20``) driven by per-triangle area bounds.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property

import numpy as np
import triangle

from .geometry import TwoInclusionConfig, WulffInclusion

log = logging.getLogger(__name__)

MIN_ANGLE_DEG = 20.0


class Tag(IntEnum):
    INTERIOR = 0
    OUTER = 1
    INCLUSION_1 = 2
    INCLUSION_2 = 3


class MeshError(RuntimeError):
    """Mesh generation failed or produced an invalid mesh."""


@dataclass
class Mesh:
    """P1 triangle mesh with tagged boundary edges.

    ``edge_normals`` point *into* the meshed domain: on an inclusion boundary
    that is the outward normal of the inclusion, on the outer boundary it is
    the inward normal of the box.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    node_tags: np.ndarray
    inclusions: tuple = field(default=(), repr=False)
    info: dict = field(default_factory=dict)
    projectors: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tri = np.ascontiguousarray(self.triangles, dtype=np.int64)
        # counterclockwise orientation
        a = self._signed_areas(self.nodes, tri)
        flip = a < 0
        tri[flip] = tri[flip][:, [0, 2, 1]]
        self.triangles = tri
        self.boundary_edges = np.asarray(self.boundary_edges, dtype=np.int64)
        self.edge_tags = np.asarray(self.edge_tags, dtype=np.int64)
        self.node_tags = np.asarray(self.node_tags, dtype=np.int64)

    @staticmethod
    def _signed_areas(x, t):
        e1 = x[t[:, 1]] - x[t[:, 0]]
        e2 = x[t[:, 2]] - x[t[:, 0]]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def areas(self) -> np.ndarray:
        return self._signed_areas(self.nodes, self.triangles)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the three barycentric basis functions, shape ``(m, 3, 2)``."""
        x = self.nodes[self.triangles]
        a2 = 2.0 * self.areas
        b = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            i, j = (k + 1) % 3, (k + 2) % 3
            b[:, k, 0] = (x[:, i, 1] - x[:, j, 1]) / a2
            b[:, k, 1] = (x[:, j, 0] - x[:, i, 0]) / a2
        return b

    def gradients(self, u) -> np.ndarray:
        """Elementwise gradient of the P1 interpolant of nodal values ``u``."""
        return np.einsum("mk,mkd->md", np.asarray(u)[self.triangles], self.basis_gradients)

    @cached_property
    def edge_triangle(self) -> np.ndarray:
        """Index of the triangle adjacent to each boundary edge."""
        lookup = {}
        t = self.triangles
        for k in range(3):
            a, b = t[:, k], t[:, (k + 1) % 3]
            for idx, key in enumerate(zip(np.minimum(a, b), np.maximum(a, b))):
                lookup.setdefault(key, idx)
        e = self.boundary_edges
        return np.array([lookup[(min(i, j), max(i, j))] for i, j in e], dtype=np.int64)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        return np.linalg.norm(d, axis=1)

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return self.nodes[self.boundary_edges].mean(axis=1)

    @cached_property
    def edge_normals(self) -> np.ndarray:
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        n = np.stack([d[:, 1], -d[:, 0]], axis=1) / self.edge_lengths[:, None]
        # point towards the adjacent triangle
        c = self.centroids[self.edge_triangle]
        s = np.sign(np.einsum("kd,kd->k", c - self.edge_midpoints, n))
        return n * s[:, None]

    @cached_property
    def node_neighbors(self):
        """Sparse node adjacency (CSR, boolean)."""
        import scipy.sparse as sp

        t = self.triangles
        rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2], t[:, 1], t[:, 2], t[:, 0]])
        cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0], t[:, 0], t[:, 1], t[:, 2]])
        A = sp.coo_matrix((np.ones(len(rows), dtype=bool), (rows, cols)), shape=(self.n_nodes,) * 2)
        return A.tocsr()

    def boundary_layer(self, layers: int = 1) -> np.ndarray:
        """Boolean mask of triangles whose vertices come within ``layers`` edges of the boundary."""
        near = self.node_tags != Tag.INTERIOR
        A = self.node_neighbors
        for _ in range(layers):
            near = near | (A @ near.astype(np.int8) > 0)
        return near[self.triangles].any(axis=1)

    def min_angles_deg(self) -> np.ndarray:
        x = self.nodes[self.triangles]
        ang = []
        for k in range(3):
            u = x[:, (k + 1) % 3] - x[:, k]
            v = x[:, (k + 2) % 3] - x[:, k]
            c = np.einsum("md,md->m", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            ang.append(np.degrees(np.arccos(np.clip(c, -1, 1))))
        return np.min(ang, axis=0)

    def audit(self, min_angle: float = MIN_ANGLE_DEG - 0.05) -> dict:
        """Validity audit: orientation, conformity, angles and boundary tags."""
        problems = []
        if np.any(self.areas <= 0):
            problems.append(f"{int(np.sum(self.areas <= 0))} non-positive triangle areas")
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        if np.any(counts > 2):
            problems.append("edges shared by more than two triangles")
        free = {tuple(r) for r in uniq[counts == 1]}
        tagged = {tuple(r) for r in np.sort(self.boundary_edges, axis=1)}
        if free != tagged:
            problems.append(f"{len(free ^ tagged)} boundary edges untagged or mis-tagged (hanging nodes?)")
        if np.any(self.edge_tags == Tag.INTERIOR):
            problems.append("boundary edge with interior tag")
        bn = np.zeros(self.n_nodes, dtype=np.int64)
        bn[self.boundary_edges[:, 0]] = self.edge_tags
        bn[self.boundary_edges[:, 1]] = self.edge_tags
        if np.any(bn != self.node_tags):
            problems.append("node tags inconsistent with edge tags")
        amin = float(self.min_angles_deg().min())
        if amin < min_angle:
            problems.append(f"minimum angle {amin:.2f} deg < {min_angle}")
        return {"ok": not problems, "problems": problems, "min_angle_deg": amin,
                "n_nodes": self.n_nodes, "n_triangles": self.n_triangles}

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Containing triangle and barycentric coordinates (-1 if outside)."""
        from scipy.spatial import cKDTree

        points = np.atleast_2d(np.asarray(points, dtype=float))
        tree = cKDTree(self.centroids)
        k = min(24, self.n_triangles)
        _, cand = tree.query(points, k=k)
        cand = cand.reshape(len(points), k)
        tri_out = np.full(len(points), -1, dtype=np.int64)
        bary_out = np.zeros((len(points), 3))
        x = self.nodes[self.triangles]
        for j in range(k):
            c = cand[:, j]
            todo = tri_out < 0
            if not np.any(todo):
                break
            xt = x[c]
            lam = self._barycentric(points, xt)
            ok = todo & np.all(lam >= -1e-12, axis=1)
            tri_out[ok] = c[ok]
            bary_out[ok] = lam[ok]
        return tri_out, bary_out

    @staticmethod
    def _barycentric(p, xt):
        v0 = xt[:, 1] - xt[:, 0]
        v1 = xt[:, 2] - xt[:, 0]
        v2 = p - xt[:, 0]
        den = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
        l1 = (v2[:, 0] * v1[:, 1] - v2[:, 1] * v1[:, 0]) / den
        l2 = (v0[:, 0] * v2[:, 1] - v0[:, 1] * v2[:, 0]) / den
        return np.stack([1 - l1 - l2, l1, l2], axis=1)

    def interpolate(self, u, points) -> tuple[np.ndarray, np.ndarray]:
        """P1 values and elementwise gradients at ``points`` (NaN outside)."""
        tri, lam = self.locate(points)
        val = np.full(len(tri), np.nan)
        grad = np.full((len(tri), 2), np.nan)
        ok = tri >= 0
        u = np.asarray(u)
        val[ok] = np.einsum("pk,pk->p", u[self.triangles[tri[ok]]], lam[ok])
        grad[ok] = self.gradients(u)[tri[ok]]
        return val, grad


def boundary_quadrature(mesh: Mesh, tag, integrand, mask=None) -> float:
    """Midpoint-rule sum of ``integrand(midpoints, normals, edge_index)`` over tagged edges.

    ``normals`` point into the meshed domain (out of an inclusion).  ``mask``
    optionally restricts the sum to a subset of the tagged edges.
    """
    try:
        tag = Tag(tag)
    except ValueError:
        raise KeyError(f"unknown boundary tag {tag!r}") from None
    sel = mesh.edge_tags == tag
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(sel)
    if idx.size == 0:
        return 0.0
    vals = np.asarray(integrand(mesh.edge_midpoints[idx], mesh.edge_normals[idx], idx), dtype=float)
    return float(np.sum(vals * mesh.edge_lengths[idx]))


# -- size field -----------------------------------------------------------------


class SizeField:
    """Lipschitz size field ``h(x) = min(h_far, h_box(x), min_i h_i + g |x - s_i|)``.

    ``box`` optionally prescribes ``h`` directly inside the inter-inclusion gap.
    """

    def __init__(self, h_far: float, sources=None, source_h=None, grading: float = 0.3, gap=None):
        self.h_far = float(h_far)
        self.sources = np.zeros((0, 2)) if sources is None else np.asarray(sources, dtype=float)
        self.source_h = np.zeros(0) if source_h is None else np.asarray(source_h, dtype=float)
        self.grading = grading
        self.gap = gap

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        h = np.full(len(x), self.h_far)
        if len(self.sources):
            for s in range(0, len(x), 4096):
                xs = x[s : s + 4096]
                d = np.sqrt(((xs[:, None, :] - self.sources[None, :, :]) ** 2).sum(-1))
                h[s : s + 4096] = np.minimum(h[s : s + 4096], (self.source_h[None, :] + self.grading * d).min(1))
        if self.gap is not None:
            h = np.minimum(h, self.gap(x))
        return h


class _GapSizing:
    """Gap-proportional size inside the neck band ``|Q^{1/2} x'| < 2w``."""

    def __init__(self, x1, bottom, top, h_local):
        self.x1, self.bottom, self.top, self.h_local = x1, bottom, top, h_local

    def __call__(self, x):
        h = np.full(len(x), np.inf)
        inside = (x[:, 0] > self.x1[0]) & (x[:, 0] < self.x1[-1])
        xi = x[inside]
        lo = np.interp(xi[:, 0], self.x1, self.bottom)
        hi = np.interp(xi[:, 0], self.x1, self.top)
        band = (xi[:, 1] >= lo - 1e-12) & (xi[:, 1] <= hi + 1e-12)
        hv = np.interp(xi[:, 0], self.x1, self.h_local)
        sub = np.full(len(xi), np.inf)
        sub[band] = hv[band]
        h[inside] = sub
        return h


def _closed_polyline(curve, size: SizeField, n0: int = 2048, min_nodes: int = 12) -> np.ndarray:
    """Nodes on a closed parametric curve ``curve(s), s in [0, 1)`` spaced by ``size``."""
    s = np.linspace(0.0, 1.0, n0 + 1)
    for _ in range(40):
        x = curve(s)
        seg = np.linalg.norm(np.diff(x, axis=0), axis=1)
        hm = size(0.5 * (x[1:] + x[:-1]))
        bad = seg > 0.2 * hm
        if not np.any(bad):
            break
        s = np.sort(np.concatenate([s, 0.5 * (s[:-1] + s[1:])[bad]]))
    lam = np.concatenate([[0.0], np.cumsum(seg / hm)])
    n = max(min_nodes, int(round(lam[-1])))
    targets = np.linspace(0.0, lam[-1], n, endpoint=False)
    return curve(np.interp(targets, lam, s))


def _open_polyline(a, b, size: SizeField, n0: int = 512) -> np.ndarray:
    """Nodes on the segment ``[a, b)`` (end point excluded)."""
    a, b = np.asarray(a, float), np.asarray(b, float)

    def curve(s):
        return a[None, :] + np.asarray(s)[:, None] * (b - a)[None, :]

    s = np.linspace(0, 1, n0 + 1)
    x = curve(s)
    seg = np.linalg.norm(np.diff(x, axis=0), axis=1)
    lam = np.concatenate([[0.0], np.cumsum(seg / size(0.5 * (x[1:] + x[:-1])))])
    n = max(2, int(round(lam[-1])))
    return curve(np.interp(np.linspace(0, lam[-1], n, endpoint=False), lam, s))


def _wulff_curve(D: WulffInclusion):
    def curve(s):
        return D.boundary_point(2 * np.pi * np.asarray(s))

    return curve


def _triangulate(polylines, tags, holes, size: SizeField, max_rounds: int = 30, projectors=None) -> Mesh:
    verts, segs, vmark, smark = [], [], [], []
    off = 0
    for pl, tg in zip(polylines, tags):
        n = len(pl)
        verts.append(pl)
        idx = off + np.arange(n)
        segs.append(np.stack([idx, np.roll(idx, -1)], axis=1))
        vmark.append(np.full(n, int(tg)))
        smark.append(np.full(n, int(tg)))
        off += n
    A = dict(
        vertices=np.vstack(verts), segments=np.vstack(segs),
        vertex_markers=np.concatenate(vmark)[:, None], segment_markers=np.concatenate(smark)[:, None],
    )
    if holes:
        A["holes"] = np.asarray(holes, dtype=float)
    amax = np.sqrt(3) / 4 * size.h_far**2
    t = triangle.triangulate(A, f"pq{MIN_ANGLE_DEG:g}a{amax:.12g}Q")
    for rnd in range(max_rounds):
        x, tri = t["vertices"], t["triangles"]
        cen = x[tri].mean(axis=1)
        area = np.abs(Mesh._signed_areas(x, tri))
        target = np.sqrt(3) / 4 * size(cen) ** 2
        need = area > 1.3 * target
        if not np.any(need):
            break
        B = dict(vertices=x, triangles=tri, segments=t["segments"], segment_markers=t["segment_markers"],
                 vertex_markers=t["vertex_markers"])
        B["triangle_max_area"] = np.where(need, target, -1.0)[:, None]
        t = triangle.triangulate(B, f"rpq{MIN_ANGLE_DEG:g}aQ")
    else:
        log.warning("size-field refinement did not settle after %d rounds", max_rounds)

    x = np.array(t["vertices"], dtype=float)
    vm = t["vertex_markers"].ravel().astype(np.int64)
    n_input = off
    if projectors:
        # Steiner points inserted on curved segments go back onto the exact curve
        for tg, proj in projectors.items():
            sel = np.flatnonzero(vm == int(tg))
            sel = sel[sel >= n_input]
            if sel.size:
                x[sel] = proj(x[sel])
    segs = np.asarray(t["segments"], dtype=np.int64)
    sm = np.asarray(t["segment_markers"]).ravel().astype(np.int64)
    mesh = Mesh(nodes=x, triangles=t["triangles"], boundary_edges=segs, edge_tags=sm, node_tags=vm,
                projectors=dict(projectors or {}))
    return mesh


def refine_uniformly(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle is split into four through its edge midpoints.

    Midpoints of boundary edges on curved boundaries are moved onto the exact
    curve with the mesh's projectors, so a refinement sequence is nested in
    the interior and converges to the true domain.
    """
    x, t = mesh.nodes, mesh.triangles
    n = len(x)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    es = np.sort(e, axis=1)
    uniq, inv = np.unique(es, axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = 0.5 * (x[uniq[:, 0]] + x[uniq[:, 1]])
    m = len(t)
    a, b, c = t[:, 0], t[:, 1], t[:, 2]
    ab, bc, ca = n + inv[:m], n + inv[m:2 * m], n + inv[2 * m:]
    tri = np.concatenate([
        np.stack([a, ab, ca], 1), np.stack([ab, b, bc], 1), np.stack([ca, bc, c], 1), np.stack([ab, bc, ca], 1),
    ])
    # boundary edges: locate each in the unique edge list
    be = np.sort(mesh.boundary_edges, axis=1)
    lookup = {tuple(v): i for i, v in enumerate(map(tuple, uniq))}
    bidx = np.array([lookup[tuple(v)] for v in be], dtype=np.int64)
    node_tags = np.concatenate([mesh.node_tags, np.zeros(len(uniq), dtype=np.int64)])
    node_tags[n + bidx] = mesh.edge_tags
    for tg, proj in mesh.projectors.items():
        sel = bidx[mesh.edge_tags == int(tg)]
        if sel.size:
            mid[sel] = proj(mid[sel])
    new_edges = np.concatenate([
        np.stack([mesh.boundary_edges[:, 0], n + bidx], 1), np.stack([n + bidx, mesh.boundary_edges[:, 1]], 1),
    ])
    new_tags = np.concatenate([mesh.edge_tags, mesh.edge_tags])
    out = Mesh(nodes=np.vstack([x, mid]), triangles=tri, boundary_edges=new_edges, edge_tags=new_tags,
               node_tags=node_tags, inclusions=mesh.inclusions, info={**mesh.info, "refined": mesh.info.get("refined", 0) + 1},
               projectors=mesh.projectors)
    return out


def generate_mesh(config: TwoInclusionConfig, h_far: float = 0.2, h_neck: float | None = None,
                  w: float = 0.3, grading: float = 0.3, cells_across_gap: float | None = None) -> Mesh:
    """Mesh ``Omega_delta`` with a gap-proportional graded neck.

    Inside the band ``|Q^{1/2} x'| < 2w`` between the inclusions the size is
    ``h_neck * gap(x') / gap(0)`` (so the number of cells across the gap stays
    ``~ delta / h_neck``), clipped to ``[h_neck, h_far]``; elsewhere it grows
    linearly with distance at rate ``grading`` up to ``h_far``.
    """
    if h_neck is None:
        h_neck = config.delta / 5.0
    if not (0 < h_neck <= h_far):
        raise MeshError(f"need 0 < h_neck <= h_far, got h_neck={h_neck}, h_far={h_far}")
    neck = config.neck(w)
    sq = float(neck.sqrtQ[0, 0])
    incl = config.inclusions
    Rmin = min(D.radius for D in incl)
    h_curve = min(h_far, 0.1 * Rmin)

    src, src_h = [], []
    gap_sizing = None
    if not config.single_inclusion:
        e1 = np.array([1.0, 0.0])
        xmax = min(2.0 * w / sq, 0.9 * min(config.R1, config.R2) * float(config.norm.value(e1)))
        u = np.sinh(np.linspace(-np.arcsinh(xmax / h_neck), np.arcsinh(xmax / h_neck), 241)) * h_neck
        try:
            top = config.top_of_D1(u)
            bot = config.bottom_of_D2(u)
        except Exception as exc:  # pragma: no cover - degenerate geometry
            raise MeshError(f"cannot resolve the neck region |x'| < {xmax:.3g}: {exc}") from exc
        g = bot - top
        g0 = float(config.gap_height(0.0)[0])
        hl = np.clip(h_neck * g / g0, h_neck, h_far)
        gap_sizing = _GapSizing(u, top, bot, hl)
        for yy in (top, 0.5 * (top + bot), bot):
            src.append(np.stack([u, yy], 1))
            src_h.append(hl)
    for D in incl:
        th = np.linspace(0, 2 * np.pi, 181, endpoint=False)
        src.append(D.boundary_point(th))
        src_h.append(np.full(len(th), h_curve))
    size = SizeField(h_far, np.vstack(src), np.concatenate(src_h), grading, gap_sizing)

    polylines, tags, holes, projectors = [], [], [], {}
    L = config.half_width
    if config.domain_shape == "square":
        corners = np.array([[-L, -L], [L, -L], [L, L], [-L, L]])
        outer = np.vstack([_open_polyline(corners[i], corners[(i + 1) % 4], size) for i in range(4)])
    else:
        outer_D = WulffInclusion(np.zeros(2), L, config.H0)
        outer = _closed_polyline(_wulff_curve(outer_D), size)
        projectors[Tag.OUTER] = outer_D.project
    polylines.append(outer)
    tags.append(Tag.OUTER)
    for k, D in enumerate(incl):
        tg = Tag.INCLUSION_1 if k == 0 else Tag.INCLUSION_2
        polylines.append(_closed_polyline(_wulff_curve(D), size))
        tags.append(tg)
        holes.append(D.center)
        projectors[tg] = D.project

    mesh = _triangulate(polylines, tags, holes, size, projectors=projectors)
    mesh.inclusions = tuple(incl)
    mesh.info = {"h_far": h_far, "h_neck": h_neck, "w": w, "grading": grading, "kind": "two_inclusion"}
    rep = mesh.audit()
    if not rep["ok"]:
        raise MeshError(f"invalid mesh: {rep['problems']}")
    return mesh


def structured_annulus_mesh(H0, r: float, R: float, n_r: int, n_theta: int, center=(0.0, 0.0)) -> Mesh:
    """Mapped mesh of the Wulff annulus on the grid ``rho_i x theta_j``.

    Node ``(i, j)`` sits at ``center + rho_i d_j / H0(d_j)`` with ``d_j`` the
    Euclidean unit vector at angle ``theta_j``, so both boundaries are exact
    at the nodes.  Each cell is split along alternating diagonals.  Doubling
    ``n_r`` and ``n_theta`` gives a nested refinement.
    """
    if not 0 < r < R:
        raise MeshError(f"need 0 < r < R, got r={r}, R={R}")
    center = np.asarray(center, dtype=float)
    rho = np.linspace(r, R, n_r + 1)
    th = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
    d = np.stack([np.cos(th), np.sin(th)], -1)
    d = d / H0.value(d)[:, None]
    nodes = center + (rho[:, None, None] * d[None, :, :]).reshape(-1, 2)
    idx = np.arange((n_r + 1) * n_theta).reshape(n_r + 1, n_theta)
    i0, j0 = np.meshgrid(np.arange(n_r), np.arange(n_theta), indexing="ij")
    a = idx[i0, j0]
    b = idx[i0, (j0 + 1) % n_theta]
    c = idx[i0 + 1, (j0 + 1) % n_theta]
    e = idx[i0 + 1, j0]
    flip = ((i0 + j0) % 2).astype(bool)
    t1 = np.where(flip[..., None], np.stack([a, b, e], -1), np.stack([a, b, c], -1))
    t2 = np.where(flip[..., None], np.stack([b, c, e], -1), np.stack([a, c, e], -1))
    tri = np.concatenate([t1.reshape(-1, 3), t2.reshape(-1, 3)])
    inner_ids, outer_ids = idx[0], idx[-1]
    edges = np.concatenate([
        np.stack([outer_ids, np.roll(outer_ids, -1)], 1), np.stack([inner_ids, np.roll(inner_ids, -1)], 1),
    ])
    edge_tags = np.concatenate([np.full(n_theta, int(Tag.OUTER)), np.full(n_theta, int(Tag.INCLUSION_1))])
    node_tags = np.zeros(len(nodes), dtype=np.int64)
    node_tags[outer_ids] = Tag.OUTER
    node_tags[inner_ids] = Tag.INCLUSION_1
    inner = WulffInclusion(center, r, H0)
    outer = WulffInclusion(center, R, H0)
    mesh = Mesh(nodes=nodes, triangles=tri, boundary_edges=edges, edge_tags=edge_tags, node_tags=node_tags,
                inclusions=(inner,), info={"kind": "structured_annulus", "r": r, "R": R, "n_r": n_r,
                                           "n_theta": n_theta, "h": (R - r) / n_r},
                projectors={Tag.OUTER: outer.project, Tag.INCLUSION_1: inner.project})
    return mesh


def generate_annulus_mesh(H0, r: float, R: float, h: float, center=(0.0, 0.0)) -> Mesh:
    """Quasi-uniform mesh of the Wulff annulus ``B_H0(R) minus B_H0(r)``.

    The outer boundary is tagged OUTER and the inner one INCLUSION_1.
    """
    if not 0 < r < R:
        raise MeshError(f"need 0 < r < R, got r={r}, R={R}")
    center = np.asarray(center, dtype=float)
    inner = WulffInclusion(center, r, H0)
    outer = WulffInclusion(center, R, H0)
    size = SizeField(h)
    polylines = [_closed_polyline(_wulff_curve(outer), size), _closed_polyline(_wulff_curve(inner), size)]
    mesh = _triangulate(polylines, [Tag.OUTER, Tag.INCLUSION_1], [center], size,
                        projectors={Tag.OUTER: outer.project, Tag.INCLUSION_1: inner.project})
    mesh.inclusions = (inner,)
    mesh.info = {"h": h, "kind": "annulus", "r": r, "R": R}
    rep = mesh.audit()
    if not rep["ok"]:
        raise MeshError(f"invalid mesh: {rep['problems']}")
    return mesh
