"""Primal triangulations and the edge-based staggered dual grid.

The solver keeps two overlapping tessellations of the domain: a primal
triangulation, where the pressure lives on the vertices, and a dual grid with
one cell per primal edge, where the transported unknowns live.  Each triangle
is split into three subtriangles (base = one of its edges, apex = the
barycenter); an interior dual cell is the diamond formed by the two
subtriangles meeting at an edge, a boundary dual cell is the single
subtriangle of a boundary edge.

Everything downstream (finite-volume loops, gradient recovery, interpolation
between grids) is driven by the index arrays assembled here.  Meshes are
immutable after construction: all arrays are marked read-only, so they can be
shared freely between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Raised for invalid geometry or connectivity."""


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass
class PrimalMesh:
    """Conforming triangulation with full edge adjacency.

    ``triangles`` are counter-clockwise.  ``tri_edges[t, k]`` is the global id
    of the edge opposite local vertex ``k`` of triangle ``t`` (the convention
    that makes the nonconforming P1 basis bookkeeping trivial).  For each edge,
    ``edge_tris`` holds the adjacent triangle pair, with -1 marking the outside
    on boundary edges.
    """

    vertices: np.ndarray        # (nv, 2)
    triangles: np.ndarray       # (nt, 3) int, CCW
    barycenters: np.ndarray     # (nt, 2)
    areas: np.ndarray           # (nt,)
    edges: np.ndarray           # (ne, 2) int, v0 < v1
    edge_tris: np.ndarray       # (ne, 2) int, second = -1 on the boundary
    tri_edges: np.ndarray       # (nt, 3) int, edge opposite local vertex k
    edge_tag: np.ndarray        # (ne,) int, 0 = interior
    grad_lambda: np.ndarray = None  # (nt, 3, 2) P1 barycentric gradients

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @property
    def boundary_edges(self):
        return np.nonzero(self.edge_tris[:, 1] < 0)[0]

    def domain_area(self):
        return float(self.areas.sum())

    def diameter(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.hypot(*(hi - lo)))


@dataclass
class DualMesh:
    """Edge-based staggered dual of a :class:`PrimalMesh`.

    One cell per primal edge (pairs merged under periodic wrapping).  The cell
    "node" ``centers[i]`` is the primal edge midpoint, which is also the
    nonconforming-P1 node of the adjacent triangles.  Interior dual edges are
    the vertex-to-barycenter segments; ``de_*`` arrays describe them once each
    (cells ``de_cells[:, 0]`` see ``+de_eta``, cells ``de_cells[:, 1]`` see
    ``-de_eta``).  ``de_d_i``/``de_d_j`` are midpoint offsets evaluated in each
    side's own coordinate chart so periodic wrapping needs no special-casing.
    """

    n_cells: int
    areas: np.ndarray           # (nc,)
    perimeters: np.ndarray      # (nc,)
    r: np.ndarray               # (nc,) incircle diameter 2*A/perimeter
    centers: np.ndarray         # (nc, 2) primal edge midpoints
    is_boundary: np.ndarray     # (nc,) bool
    cell_tag: np.ndarray        # (nc,) int boundary tag, 0 = interior
    # interior dual edges
    de_cells: np.ndarray        # (nde, 2) int
    de_eta: np.ndarray          # (nde, 2) length-weighted normal, i -> j
    de_mid: np.ndarray          # (nde, 2)
    de_d_i: np.ndarray          # (nde, 2) midpoint - center_i (chart of i)
    de_d_j: np.ndarray          # (nde, 2)
    de_tri: np.ndarray          # (nde,) primal element containing the edge
    de_vert: np.ndarray         # (nde,) primal vertex the edge starts from
    de_far_tri_i: np.ndarray    # (nde,) other parent of cell i, -1 if none
    de_far_tri_j: np.ndarray    # (nde,)
    # boundary dual edges (cell face lying on the domain boundary)
    be_cell: np.ndarray         # (nbe,) int
    be_eta: np.ndarray          # (nbe, 2) outward
    be_mid: np.ndarray          # (nbe, 2)
    be_tag: np.ndarray          # (nbe,) int
    be_verts: np.ndarray        # (nbe, 2) endpoint vertex ids
    # primal/dual overlaps
    cell_tris: np.ndarray       # (nc, 2) parent triangles, -1 padding
    cell_tri_areas: np.ndarray  # (nc, 2) |P_k cap C_i|
    tri_cells: np.ndarray       # (nt, 3) dual cell at each P1-edge node
    tri_overlap: np.ndarray     # (nt, 3) subtriangle areas
    tri_eta: np.ndarray         # (nt, 3, 2) outward primal-edge normals
    # pressure-vertex identification (periodic merging)
    vert_canon: np.ndarray      # (nv,) canonical vertex index
    n_vertices_eff: int
    periodic: bool = False
    # gather tables (filled by _finalize): per-cell dual edges padded to 4
    cell_de: np.ndarray = None        # (nc, 4) edge id, nde = padding
    cell_de_sign: np.ndarray = None   # (nc, 4) +1 owner side, -1 other, 0 pad
    cell_neighbors: np.ndarray = None  # (nc, 4) neighbour cell, self = pad
    cell_be: np.ndarray = None        # (nc,) boundary-edge id, nbe = padding
    cell_tri_w: np.ndarray = None     # (nc, 2) normalized parent weights
    cell_tri_pad: np.ndarray = None   # (nc, 2) parent ids, padded with 0
    de_slot_i: np.ndarray = None      # (nde,) slot of edge e in cell_de[i]
    de_slot_j: np.ndarray = None      # (nde,) slot of edge e in cell_de[j]

    @property
    def n_dual_edges(self):
        return self.de_cells.shape[0]

    def _finalize(self):
        """Build the padded per-cell gather tables (each cell has at most
        four dual edges and at most one boundary edge)."""
        nc = self.n_cells
        nde = self.de_cells.shape[0]
        cells = np.concatenate([self.de_cells[:, 0], self.de_cells[:, 1]])
        eids = np.concatenate([np.arange(nde), np.arange(nde)])
        sgns = np.concatenate([np.ones(nde), -np.ones(nde)])
        nbrs = np.concatenate([self.de_cells[:, 1], self.de_cells[:, 0]])
        order = np.argsort(cells, kind="stable")
        cs = cells[order]
        first = np.searchsorted(cs, np.arange(nc))
        slot = np.arange(cs.size) - first[cs]
        cell_de = np.full((nc, 4), nde, dtype=np.int64)
        sign = np.zeros((nc, 4))
        neigh = np.tile(np.arange(nc, dtype=np.int64)[:, None], (1, 4))
        cell_de[cs, slot] = eids[order]
        sign[cs, slot] = sgns[order]
        neigh[cs, slot] = nbrs[order]
        self.cell_de = cell_de
        self.cell_de_sign = sign
        self.cell_neighbors = neigh
        slot_of = np.empty(cells.size, dtype=np.int64)
        slot_of[order] = slot
        self.de_slot_i = slot_of[:nde].copy()
        self.de_slot_j = slot_of[nde:].copy()
        cell_be = np.full(nc, self.be_cell.shape[0], dtype=np.int64)
        cell_be[self.be_cell] = np.arange(self.be_cell.shape[0])
        self.cell_be = cell_be
        valid = self.cell_tris >= 0
        w = np.where(valid, self.cell_tri_areas, 0.0)
        self.cell_tri_w = w / w.sum(axis=1, keepdims=True)
        self.cell_tri_pad = np.where(valid, self.cell_tris, 0)
        return self

    def neighbor_counts(self):
        """Number of dual edges (interior + boundary) per cell."""
        counts = np.zeros(self.n_cells, dtype=int)
        np.add.at(counts, self.de_cells[:, 0], 1)
        np.add.at(counts, self.de_cells[:, 1], 1)
        np.add.at(counts, self.be_cell, 1)
        return counts


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def build_primal(vertices, triangles, boundary_tags=None):
    """Assemble a :class:`PrimalMesh` from raw arrays.

    ``boundary_tags`` maps sorted vertex pairs ``(v0, v1)`` to integer tags;
    untagged boundary edges get tag 1.  Degenerate triangles and non-manifold
    edges are rejected.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if triangles.ndim != 2 or triangles.shape[1] != 3 or triangles.shape[0] == 0:
        raise MeshError("need a (nt, 3) connectivity array with nt >= 1")
    nv = vertices.shape[0]
    if triangles.min() < 0 or triangles.max() >= nv:
        raise MeshError("triangle connectivity indexes outside the vertex array")

    signed = _signed_areas(vertices, triangles)
    # flip clockwise triangles instead of rejecting them
    flip = signed < 0
    if np.any(flip):
        triangles = triangles.copy()
        triangles[flip] = triangles[flip][:, [0, 2, 1]]
        signed = np.abs(signed)
    scale = max(np.ptp(vertices, axis=0).max(), 1.0) if nv else 1.0
    bad = np.nonzero(signed <= 1e-14 * scale**2)[0]
    if bad.size:
        raise MeshError(f"degenerate (zero-area) triangle at index {bad[0]}")

    areas = signed
    barycenters = vertices[triangles].mean(axis=1)

    # edge table; local edge k is opposite local vertex k
    nt = triangles.shape[0]
    ev0 = triangles[:, [1, 2, 0]].reshape(-1)
    ev1 = triangles[:, [2, 0, 1]].reshape(-1)
    key = np.stack([np.minimum(ev0, ev1), np.maximum(ev0, ev1)], axis=1)
    edges, inverse, counts = np.unique(key, axis=0, return_inverse=True,
                                       return_counts=True)
    if counts.max() > 2:
        eid = int(np.argmax(counts > 2))
        raise MeshError(f"non-manifold edge {tuple(edges[eid])} shared by "
                        f"{counts[eid]} triangles")
    tri_edges = inverse.reshape(nt, 3)

    ne = edges.shape[0]
    edge_tris = np.full((ne, 2), -1, dtype=np.int64)
    tri_of_slot = np.repeat(np.arange(nt), 3)
    order = np.argsort(inverse, kind="stable")
    sorted_eids = inverse[order]
    sorted_tris = tri_of_slot[order]
    first = np.searchsorted(sorted_eids, np.arange(ne), side="left")
    edge_tris[:, 0] = sorted_tris[first]
    second_mask = counts == 2
    edge_tris[second_mask, 1] = sorted_tris[first[second_mask] + 1]

    edge_tag = np.zeros(ne, dtype=np.int64)
    boundary = edge_tris[:, 1] < 0
    edge_tag[boundary] = 1
    if boundary_tags:
        tagged = np.zeros(ne, dtype=bool)
        lookup = {tuple(sorted(k)): v for k, v in boundary_tags.items()}
        for eid in np.nonzero(boundary)[0]:
            tag = lookup.get(tuple(edges[eid]))
            if tag is not None:
                edge_tag[eid] = tag
                tagged[eid] = True

    # P1 barycentric gradients; grad lambda_k is constant per triangle and
    # normal to the opposite edge
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    grad_lambda = np.empty((nt, 3, 2))
    inv2a = 1.0 / (2.0 * areas)
    for k, (a, b) in enumerate([(p1, p2), (p2, p0), (p0, p1)]):
        e = b - a
        grad_lambda[:, k, 0] = -e[:, 1] * inv2a
        grad_lambda[:, k, 1] = e[:, 0] * inv2a

    mesh = PrimalMesh(vertices, triangles, barycenters, areas, edges,
                      edge_tris, tri_edges, edge_tag, grad_lambda)
    _freeze(vertices, triangles, barycenters, areas, edges, edge_tris,
            tri_edges, edge_tag, grad_lambda)
    return mesh


def build_dual(primal):
    """Build the diamond-shaped dual grid of ``primal``.

    Interior cells are quadrilaterals (two barycenter-apex subtriangles glued
    along their shared primal edge), boundary cells single subtriangles.  Cell
    ids coincide with primal edge ids.
    """
    verts = primal.vertices
    tris = primal.triangles
    bary = primal.barycenters
    ne = primal.n_edges
    nt = primal.n_triangles

    mids = 0.5 * (verts[primal.edges[:, 0]] + verts[primal.edges[:, 1]])
    edge_len = np.linalg.norm(verts[primal.edges[:, 1]]
                              - verts[primal.edges[:, 0]], axis=1)

    # subtriangle overlap |P_k cap C_i| for local edge k (opposite vertex k):
    # triangle (v_{k+1}, v_{k+2}, barycenter), area = |P_k| / 3 exactly in
    # exact arithmetic; compute geometrically to keep the tiling identity.
    tri_overlap = np.empty((nt, 3))
    for k in range(3):
        a = verts[tris[:, (k + 1) % 3]]
        b = verts[tris[:, (k + 2) % 3]]
        tri_overlap[:, k] = 0.5 * np.abs(
            (b[:, 0] - a[:, 0]) * (bary[:, 1] - a[:, 1])
            - (bary[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))

    areas = np.zeros(ne)
    np.add.at(areas, primal.tri_edges.reshape(-1), tri_overlap.reshape(-1))

    cell_tris = np.full((ne, 2), -1, dtype=np.int64)
    cell_tri_areas = np.zeros((ne, 2))
    cell_tris[:, 0] = primal.edge_tris[:, 0]
    cell_tris[:, 1] = primal.edge_tris[:, 1]
    slot0 = primal.tri_edges[primal.edge_tris[:, 0]] == np.arange(ne)[:, None]
    cell_tri_areas[:, 0] = tri_overlap[primal.edge_tris[:, 0]][slot0]
    inner = primal.edge_tris[:, 1] >= 0
    slot1 = (primal.tri_edges[primal.edge_tris[inner, 1]]
             == np.nonzero(inner)[0][:, None])
    cell_tri_areas[inner, 1] = tri_overlap[primal.edge_tris[inner, 1]][slot1]

    # interior dual edges: vertex -> barycenter segments, one pair per vertex
    # of each triangle; segment from local vertex k separates the dual cells
    # of the two edges incident to that vertex (opposite the other vertices).
    pairs_k = [(1, 2), (0, 2), (0, 1)]  # cell slots (tri_edges cols) per vertex
    de_cells = np.empty((3 * nt, 2), dtype=np.int64)
    de_tri = np.repeat(np.arange(nt), 3)
    de_vert = np.empty(3 * nt, dtype=np.int64)
    s0 = np.empty((3 * nt, 2))
    for k in range(3):
        ca, cb = pairs_k[k]
        de_cells[k::3, 0] = primal.tri_edges[:, ca]
        de_cells[k::3, 1] = primal.tri_edges[:, cb]
        de_vert[k::3] = tris[:, k]
        s0[k::3] = verts[tris[:, k]]
    s1 = bary[de_tri]
    tangent = s1 - s0
    seg_len = np.linalg.norm(tangent, axis=1)
    normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    # orient from cell i towards cell j
    towards = mids[de_cells[:, 1]] - mids[de_cells[:, 0]]
    swap = np.einsum("ij,ij->i", normal, towards) < 0
    normal[swap] *= -1.0
    de_eta = normal  # |perp(tangent)| == segment length already
    de_mid = 0.5 * (s0 + s1)
    de_d_i = de_mid - mids[de_cells[:, 0]]
    de_d_j = de_mid - mids[de_cells[:, 1]]

    # far parent of cell i at this dual edge: the adjacent triangle of primal
    # edge i that is not the containing one
    def far_parent(cells):
        t0 = primal.edge_tris[cells, 0]
        t1 = primal.edge_tris[cells, 1]
        return np.where(t0 == de_tri, t1, t0)

    de_far_tri_i = far_parent(de_cells[:, 0])
    de_far_tri_j = far_parent(de_cells[:, 1])

    # boundary dual edges: the primal boundary edges themselves
    bidx = primal.boundary_edges
    be_cell = bidx.copy()
    v0 = verts[primal.edges[bidx, 0]]
    v1 = verts[primal.edges[bidx, 1]]
    t = v1 - v0
    nrm = np.stack([t[:, 1], -t[:, 0]], axis=1)
    owner = primal.edge_tris[bidx, 0]
    inward = bary[owner] - mids[bidx]
    flip = np.einsum("ij,ij->i", nrm, inward) > 0
    nrm[flip] *= -1.0
    be_eta = nrm
    be_mid = mids[bidx]
    be_tag = primal.edge_tag[bidx].copy()
    be_verts = primal.edges[bidx].copy()

    perim = np.zeros(ne)
    np.add.at(perim, de_cells[:, 0], seg_len)
    np.add.at(perim, de_cells[:, 1], seg_len)
    np.add.at(perim, be_cell, edge_len[bidx])

    is_boundary = np.zeros(ne, dtype=bool)
    is_boundary[bidx] = True
    cell_tag = np.zeros(ne, dtype=np.int64)
    cell_tag[bidx] = primal.edge_tag[bidx]

    tri_eta = np.empty((nt, 3, 2))
    for k in range(3):
        a = verts[tris[:, (k + 1) % 3]]
        b = verts[tris[:, (k + 2) % 3]]
        t = b - a
        nrm = np.stack([t[:, 1], -t[:, 0]], axis=1)
        outward = 0.5 * (a + b) - bary
        flip = np.einsum("ij,ij->i", nrm, outward) < 0
        nrm[flip] *= -1.0
        tri_eta[:, k] = nrm

    dual = DualMesh(
        n_cells=ne, areas=areas, perimeters=perim,
        r=2.0 * areas / perim, centers=mids,
        is_boundary=is_boundary, cell_tag=cell_tag,
        de_cells=de_cells, de_eta=de_eta, de_mid=de_mid,
        de_d_i=de_d_i, de_d_j=de_d_j, de_tri=de_tri, de_vert=de_vert,
        de_far_tri_i=de_far_tri_i, de_far_tri_j=de_far_tri_j,
        be_cell=be_cell, be_eta=be_eta, be_mid=be_mid, be_tag=be_tag,
        be_verts=be_verts,
        cell_tris=cell_tris, cell_tri_areas=cell_tri_areas,
        tri_cells=primal.tri_edges.copy(), tri_overlap=tri_overlap,
        tri_eta=tri_eta,
        vert_canon=np.arange(primal.n_vertices, dtype=np.int64),
        n_vertices_eff=primal.n_vertices,
    )
    dual._finalize()
    for a in (dual.areas, dual.perimeters, dual.r, dual.centers,
              dual.de_cells, dual.de_eta, dual.de_mid, dual.de_d_i,
              dual.de_d_j, dual.de_tri, dual.de_far_tri_i, dual.de_far_tri_j,
              dual.be_cell, dual.be_eta, dual.be_mid, dual.be_tag,
              dual.cell_tris, dual.cell_tri_areas, dual.tri_cells,
              dual.tri_overlap, dual.tri_eta, dual.vert_canon,
              dual.cell_de, dual.cell_de_sign, dual.cell_neighbors,
              dual.cell_be):
        a.setflags(write=False)
    return dual


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n, dtype=np.int64)

    def find(self, i):
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)

    def canonical(self):
        for i in range(len(self.parent)):
            self.find(i)
        roots, compressed = np.unique(self.parent, return_inverse=True)
        return compressed, roots.size


def _match_translated(pts_a, pts_b, translation, tol):
    """Index of the point of ``pts_b`` matching each ``pts_a + translation``."""
    shifted = pts_a + translation
    order = np.lexsort((pts_b[:, 1], pts_b[:, 0]))
    sb = pts_b[order]
    out = np.empty(len(pts_a), dtype=np.int64)
    for i, p in enumerate(shifted):
        lo = np.searchsorted(sb[:, 0], p[0] - tol)
        hi = np.searchsorted(sb[:, 0], p[0] + tol)
        cand = order[lo:hi]
        if cand.size == 0:
            return None, i
        d = np.abs(pts_b[cand] - p).max(axis=1)
        j = int(np.argmin(d))
        if d[j] > tol:
            return None, i
        out[i] = cand[j]
    return out, -1


def pair_periodic(primal, dual, axis_pairs, tol=None):
    """Merge dual cells and pressure vertices across periodic boundaries.

    ``axis_pairs`` is a sequence of tag pairs ``(tag_a, tag_b)``; the paired
    boundaries must carry matching discretisations up to a rigid translation
    (inferred from the boundary-edge midpoints).  Each matched pair of boundary
    cells becomes a single interior-like cell with four dual edges; the primal
    vertices on the paired boundaries are identified for the pressure system.
    """
    if tol is None:
        tol = 1e-9 * primal.diameter()

    cells_uf = _UnionFind(dual.n_cells)
    verts_uf = _UnionFind(primal.n_vertices)
    consumed_be = np.zeros(dual.be_cell.shape[0], dtype=bool)

    for tag_a, tag_b in axis_pairs:
        sel_a = np.nonzero(dual.be_tag == tag_a)[0]
        sel_b = np.nonzero(dual.be_tag == tag_b)[0]
        if sel_a.size == 0 or sel_b.size == 0 or sel_a.size != sel_b.size:
            raise MeshError(f"periodic tags ({tag_a}, {tag_b}) have "
                            f"{sel_a.size} and {sel_b.size} boundary edges")
        mid_a = dual.be_mid[sel_a]
        mid_b = dual.be_mid[sel_b]
        translation = mid_b.mean(axis=0) - mid_a.mean(axis=0)
        match, bad = _match_translated(mid_a, mid_b, translation, tol)
        if match is None:
            raise MeshError(
                f"boundaries {tag_a}/{tag_b} are not periodic: no partner for "
                f"boundary edge at {mid_a[bad] + translation}")
        for ia, ib in zip(sel_a, match):
            cells_uf.union(int(dual.be_cell[ia]), int(dual.be_cell[sel_b[ib]]))
        consumed_be[sel_a] = True
        consumed_be[sel_b[match]] = True
        # identify the edge endpoint vertices
        edge_a = dual.be_cell[sel_a]
        edge_b = dual.be_cell[sel_b[match]]
        va = primal.edges[edge_a].reshape(-1)
        vb_pool = np.unique(primal.edges[edge_b].reshape(-1))
        vmatch, bad = _match_translated(primal.vertices[va],
                                        primal.vertices[vb_pool], translation,
                                        tol)
        if vmatch is None:
            raise MeshError(
                f"boundaries {tag_a}/{tag_b} are not periodic: no partner for "
                f"vertex at {primal.vertices[va[bad]] + translation}")
        for v, j in zip(va, vmatch):
            verts_uf.union(int(v), int(vb_pool[j]))

    cell_map, n_cells = cells_uf.canonical()
    vert_canon, n_verts = verts_uf.canonical()

    areas = np.zeros(n_cells)
    np.add.at(areas, cell_map, dual.areas)
    centers = np.zeros((n_cells, 2))
    # representative chart: the lowest original id of each group
    rep_seen = np.zeros(n_cells, dtype=bool)
    for i in range(dual.n_cells):
        c = cell_map[i]
        if not rep_seen[c]:
            centers[c] = dual.centers[i]
            rep_seen[c] = True

    de_cells = cell_map[dual.de_cells]
    seg_len = np.linalg.norm(dual.de_eta, axis=1)
    perim = np.zeros(n_cells)
    np.add.at(perim, de_cells[:, 0], seg_len)
    np.add.at(perim, de_cells[:, 1], seg_len)

    keep = ~consumed_be
    be_cell = cell_map[dual.be_cell[keep]]
    edge_len = np.linalg.norm(dual.be_eta[keep], axis=1)
    np.add.at(perim, be_cell, edge_len)

    is_boundary = np.zeros(n_cells, dtype=bool)
    is_boundary[be_cell] = True
    cell_tag = np.zeros(n_cells, dtype=np.int64)
    cell_tag[be_cell] = dual.be_tag[keep]

    cell_tris = np.full((n_cells, 2), -1, dtype=np.int64)
    cell_tri_areas = np.zeros((n_cells, 2))
    for i in range(dual.n_cells):
        c = cell_map[i]
        for s in range(2):
            t = dual.cell_tris[i, s]
            if t < 0:
                continue
            slot = 0 if cell_tris[c, 0] in (-1, t) else 1
            if cell_tris[c, slot] == t:
                continue
            cell_tris[c, slot] = t
            cell_tri_areas[c, slot] = dual.cell_tri_areas[i, s]

    tri_cells = cell_map[dual.tri_cells]

    # far parent across the seam: the parent of the merged cell that is not
    # the containing triangle
    def far_parent(cells_new, tri_id):
        t0 = cell_tris[cells_new, 0]
        t1 = cell_tris[cells_new, 1]
        return np.where(t0 == tri_id, t1, t0)

    de_far_tri_i = far_parent(de_cells[:, 0], dual.de_tri)
    de_far_tri_j = far_parent(de_cells[:, 1], dual.de_tri)

    merged = DualMesh(
        n_cells=n_cells, areas=areas, perimeters=perim,
        r=2.0 * areas / perim, centers=centers,
        is_boundary=is_boundary, cell_tag=cell_tag,
        de_cells=de_cells, de_eta=dual.de_eta.copy(), de_mid=dual.de_mid.copy(),
        de_d_i=dual.de_d_i.copy(), de_d_j=dual.de_d_j.copy(),
        de_tri=dual.de_tri.copy(), de_vert=dual.de_vert.copy(),
        de_far_tri_i=de_far_tri_i, de_far_tri_j=de_far_tri_j,
        be_cell=be_cell, be_eta=dual.be_eta[keep].copy(),
        be_mid=dual.be_mid[keep].copy(), be_tag=dual.be_tag[keep].copy(),
        be_verts=dual.be_verts[keep].copy(),
        cell_tris=cell_tris, cell_tri_areas=cell_tri_areas,
        tri_cells=tri_cells, tri_overlap=dual.tri_overlap.copy(),
        tri_eta=dual.tri_eta.copy(),
        vert_canon=vert_canon, n_vertices_eff=n_verts, periodic=True,
    )
    merged._finalize()
    return merged


# ---------------------------------------------------------------------------
# built-in generator and plain-text mesh format

TAG_LEFT, TAG_RIGHT, TAG_BOTTOM, TAG_TOP = 1, 2, 3, 4


def _symmetric_linspace(a, b, n):
    """n+1 points on [a, b], exactly symmetric about the midpoint."""
    x = np.empty(n + 1)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    for i in range(n + 1):
        t = (2.0 * i - n) / n
        x[i] = mid + half * t
    # enforce bitwise mirror symmetry
    for i in range((n + 1) // 2):
        x[n - i] = 2.0 * mid - x[i]
    return x


def structured_rect(nx, ny, x0=0.0, x1=1.0, y0=0.0, y1=1.0, diagonal="right"):
    """Triangulate a rectangle with nx-by-ny squares, each split in two.

    ``diagonal`` chooses the split direction: ``"right"`` (all ``/``),
    ``"left"`` (all ``\\``), ``"mirror-x"`` (direction flips across the
    vertical centerline, mirror-symmetric mesh) or ``"mirror-xy"``
    (symmetric about both centerlines).  Returns ``(vertices, triangles,
    boundary_tags)`` ready for :func:`build_primal`; sides carry tags
    left=1, right=2, bottom=3, top=4.
    """
    xs = _symmetric_linspace(x0, x1, nx)
    ys = _symmetric_linspace(y0, y1, ny)
    xv, yv = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.stack([xv.reshape(-1), yv.reshape(-1)], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            if diagonal == "right":
                use_right = True
            elif diagonal == "left":
                use_right = False
            elif diagonal == "mirror-x":
                use_right = (2 * i < nx)
            elif diagonal == "mirror-xy":
                use_right = (2 * i < nx) == (2 * j < ny)
            else:
                raise MeshError(f"unknown diagonal mode {diagonal!r}")
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            if use_right:       # split along a-c
                tris.append((a, b, c))
                tris.append((a, c, d))
            else:               # split along b-d
                tris.append((a, b, d))
                tris.append((b, c, d))
    triangles = np.array(tris, dtype=np.int64)

    tags = {}
    for j in range(ny):
        tags[(vid(0, j), vid(0, j + 1))] = TAG_LEFT
        tags[(vid(nx, j), vid(nx, j + 1))] = TAG_RIGHT
    for i in range(nx):
        tags[(vid(i, 0), vid(i + 1, 0))] = TAG_BOTTOM
        tags[(vid(i, ny), vid(i + 1, ny))] = TAG_TOP
    tags = {tuple(sorted(k)): v for k, v in tags.items()}
    return vertices, triangles, tags


def write_mesh(path, primal):
    """Write the plain-text format: ``nv nt nbe`` header, vertices, 1-based
    connectivity, then boundary edges with tags."""
    bidx = primal.boundary_edges
    with open(path, "w") as f:
        f.write(f"{primal.n_vertices} {primal.n_triangles} {bidx.size}\n")
        for x, y in primal.vertices:
            f.write(f"{float(x)!r} {float(y)!r}\n")
        for t in primal.triangles:
            f.write(f"{t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
        for e in bidx:
            v0, v1 = primal.edges[e]
            f.write(f"{v0 + 1} {v1 + 1} {primal.edge_tag[e]}\n")


def read_mesh(path):
    """Read the plain-text mesh format; returns a :class:`PrimalMesh`."""
    with open(path) as f:
        tokens = f.read().split()
    it = iter(tokens)
    try:
        nv, nt, nbe = int(next(it)), int(next(it)), int(next(it))
        vertices = np.array([[float(next(it)), float(next(it))]
                             for _ in range(nv)])
        triangles = np.array([[int(next(it)) - 1, int(next(it)) - 1,
                               int(next(it)) - 1] for _ in range(nt)])
        tags = {}
        for _ in range(nbe):
            v0, v1, tag = int(next(it)) - 1, int(next(it)) - 1, int(next(it))
            tags[tuple(sorted((v0, v1)))] = tag
    except StopIteration:
        raise MeshError(f"truncated mesh file {path}") from None
    return build_primal(vertices, triangles, tags)
