"""Areal lattice, dissimilarity-weighted adjacencies, and the Leroux precision matrix.

Sites live on an integer grid with queen contiguity (shared edge or corner).
Each site carries a scalar covariate z_i (an angle in degrees for visual
fields); the dissimilarity between neighbors is z_ij = |z_i - z_j| and the
adjacency weight is w_ij(alpha) = exp(-z_ij * alpha), so alpha = 0 recovers
binary queen adjacency and large alpha cuts dissimilar neighbors apart.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np

from . import DataError


@dataclass(frozen=True)
class SpatialGraph:
    """Immutable areal lattice with per-site dissimilarity covariate.

    ``edges`` holds positional indices (0..m-1) into the site arrays, one
    row per unordered neighbor pair with i < j. ``dissim`` is the covariate
    after rescaling (see ``build_vf_graph``).
    """

    site_ids: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    dissim: np.ndarray
    edges: np.ndarray
    blind_spot_ids: tuple = ()
    dissim_scale: float = 1.0

    @property
    def m(self):
        return int(self.site_ids.shape[0])

    @property
    def n_edges(self):
        return int(self.edges.shape[0])

    def edge_dissim(self):
        """|z_i - z_j| for every edge, in the rescaled units."""
        return np.abs(self.dissim[self.edges[:, 0]] - self.dissim[self.edges[:, 1]])

    def neighbor_lists(self):
        """CSR-style (indptr, indices) arrays of neighbors per site."""
        m = self.m
        counts = np.zeros(m, dtype=np.int64)
        for a, b in self.edges:
            counts[a] += 1
            counts[b] += 1
        indptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.zeros(indptr[-1], dtype=np.int64)
        fill = indptr[:-1].copy()
        for a, b in self.edges:
            indices[fill[a]] = b
            fill[a] += 1
            indices[fill[b]] = a
            fill[b] += 1
        return indptr, indices

    def to_json(self):
        return json.dumps(
            {
                "m": self.m,
                "dissim_scale": self.dissim_scale,
                "blind_spot_ids": list(self.blind_spot_ids),
                "sites": [
                    {
                        "site_id": int(s),
                        "row": int(r),
                        "col": int(c),
                        "dissim": float(z),
                    }
                    for s, r, c, z in zip(self.site_ids, self.rows, self.cols, self.dissim)
                ],
                "edges": [[int(a), int(b)] for a, b in self.edges],
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class PrecisionMatrix:
    """Leroux precision Q(alpha, rho) = rho*W*(alpha) + (1-rho)*I."""

    Q: np.ndarray
    alpha: float
    rho: float


def adjacency_weight(alpha, z_ij):
    """Edge weight exp(-z_ij * alpha); the caller applies the neighbor mask."""
    alpha = np.asarray(alpha, dtype=float)
    z_ij = np.asarray(z_ij, dtype=float)
    if np.any(alpha < 0):
        raise DataError("adjacency weight requires alpha >= 0")
    if np.any(z_ij < 0):
        raise DataError("dissimilarity z_ij must be nonnegative")
    out = np.exp(-z_ij * alpha)
    return float(out) if out.ndim == 0 else out


def queen_edges(rows, cols):
    """Unordered neighbor pairs for sites that share a grid edge or corner."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    pos = {(int(r), int(c)): i for i, (r, c) in enumerate(zip(rows, cols))}
    if len(pos) != rows.shape[0]:
        raise DataError("duplicate grid positions in layout")
    edges = []
    for i, (r, c) in enumerate(zip(rows, cols)):
        for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
            j = pos.get((int(r) + dr, int(c) + dc))
            if j is not None:
                edges.append((min(i, j), max(i, j)))
    edges.sort()
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def build_vf_graph(layout, angles, dissim_scale=100.0):
    """Build the lattice graph from a layout and per-site angles.

    layout: iterable of (site_id, row, col, is_blind_spot) tuples.
    angles: mapping site_id -> angle in degrees, required for every kept
        (non blind-spot) site; values must lie in [0, 360).
    dissim_scale: divisor applied to the angles before storing them as the
        dissimilarity covariate (default 100, which keeps the Metropolis
        step on alpha well conditioned).
    """
    layout = list(layout)
    if not layout:
        raise DataError("empty site layout")
    seen = set()
    for sid, _, _, _ in layout:
        if sid in seen:
            raise DataError(f"duplicate site id {sid}")
        seen.add(sid)
    blind = tuple(sorted(int(sid) for sid, _, _, b in layout if b))
    kept = [(int(s), int(r), int(c)) for s, r, c, b in layout if not b]
    if not kept:
        raise DataError("all sites are blind spots; empty graph")
    z = np.empty(len(kept))
    for i, (sid, _, _) in enumerate(kept):
        if sid not in angles:
            raise DataError(f"missing angle for site {sid}")
        a = float(angles[sid])
        if not (0.0 <= a < 360.0) or not math.isfinite(a):
            raise DataError(f"angle for site {sid} outside [0, 360): {a}")
        z[i] = a / dissim_scale
    site_ids = np.array([s for s, _, _ in kept], dtype=np.int64)
    rows = np.array([r for _, r, _ in kept], dtype=np.int64)
    cols = np.array([c for _, _, c in kept], dtype=np.int64)
    edges = queen_edges(rows, cols)
    return SpatialGraph(
        site_ids=site_ids,
        rows=rows,
        cols=cols,
        dissim=z,
        edges=edges,
        blind_spot_ids=blind,
        dissim_scale=float(dissim_scale),
    )


def alpha_upper_bound(graph):
    """Largest alpha keeping the most similar neighbor pair at weight >= 0.5.

    b_alpha = -log(0.5) / min over edges of z_ij. All-equal (or tied)
    neighbor covariates make the bound infinite, which is rejected.
    """
    if graph.n_edges == 0:
        raise DataError("graph has no edges")
    zmin = float(graph.edge_dissim().min())
    if zmin <= 0.0:
        raise DataError("degenerate dissimilarity: adjacent sites share a covariate value")
    return -math.log(0.5) / zmin


def precision_matrix(graph, alpha, rho):
    """Q(alpha, rho) = rho*W*(alpha) + (1-rho)*I_m.

    W* is the weighted graph Laplacian: off-diagonal -w_ij(alpha) on edges,
    diagonal sum_j w_ij(alpha). Q is positive definite for rho in (0, 1)
    and alpha >= 0; rho = 1 is rejected because it makes Q singular on
    connected graphs.
    """
    if not (0.0 < rho < 1.0):
        raise DataError(f"rho must lie in (0, 1), got {rho}")
    if alpha < 0:
        raise DataError(f"alpha must be nonnegative, got {alpha}")
    m = graph.m
    Q = np.zeros((m, m))
    if graph.n_edges:
        w = adjacency_weight(alpha, graph.edge_dissim())
        a = graph.edges[:, 0]
        b = graph.edges[:, 1]
        Q[a, b] = -rho * w
        Q[b, a] = -rho * w
        deg = np.zeros(m)
        np.add.at(deg, a, w)
        np.add.at(deg, b, w)
        Q[np.diag_indices(m)] = rho * deg + (1.0 - rho)
    else:
        Q[np.diag_indices(m)] = 1.0 - rho
    return PrecisionMatrix(Q=Q, alpha=float(alpha), rho=float(rho))


# Standard 54-point visual field grid (24-2 pattern): row lengths
# 4-6-8-9-9-8-6-4 with the two blind-spot sites in the middle rows.
_VF54_ROW_COLS = (
    (0, (3, 4, 5, 6)),
    (1, (2, 3, 4, 5, 6, 7)),
    (2, (1, 2, 3, 4, 5, 6, 7, 8)),
    (3, (0, 1, 2, 3, 4, 5, 6, 7, 8)),
    (4, (0, 1, 2, 3, 4, 5, 6, 7, 8)),
    (5, (1, 2, 3, 4, 5, 6, 7, 8)),
    (6, (2, 3, 4, 5, 6, 7)),
    (7, (3, 4, 5, 6)),
)
_VF54_BLIND = ((3, 7), (4, 7))


def standard_vf54_layout():
    """The 54-site visual field grid as (site_id, row, col, is_blind_spot).

    Site ids run 1..54 in reading order; the two blind-spot sites sit at
    column 7 of the middle rows (right-eye orientation).
    """
    layout = []
    sid = 1
    for r, cs in _VF54_ROW_COLS:
        for c in cs:
            layout.append((sid, r, c, (r, c) in _VF54_BLIND))
            sid += 1
    return layout


def synthetic_garway_heath_angles(layout):
    """Deterministic synthetic stand-in for per-site optic-disc entry angles.

    The published per-site angle map is not redistributable, so this
    generates a smooth, anatomically flavored surrogate: the angle at
    which a site's nerve fibers would enter a disc located at the
    blind-spot position, with superior field mapping to the inferior
    disc and vice versa, plus a small eccentricity term that keeps
    neighboring values distinct. Returns {site_id: degrees in [0, 360)}.
    """
    blind = [(r, c) for _, r, c, b in layout if b]
    if blind:
        r0 = sum(r for r, _ in blind) / len(blind)
        c0 = sum(c for _, c in blind) / len(blind)
    else:
        rs = [r for _, r, _, _ in layout]
        cs = [c for _, _, c, _ in layout]
        r0 = (min(rs) + max(rs)) / 2.0
        c0 = (min(cs) + max(cs)) / 2.0
    angles = {}
    for sid, r, c, b in layout:
        if b:
            continue
        dy = r0 - r  # positive above the horizontal midline
        dx = c - c0
        psi = math.degrees(math.atan2(dy, dx - 0.25))
        # Vertical flip: superior field (dy > 0) projects to the inferior
        # disc sector and conversely.
        ang = (180.0 - psi) % 360.0
        ecc = math.hypot(dx, dy)
        ang = (ang + 3.0 * ecc + 0.01 * sid) % 360.0
        angles[sid] = round(ang, 4)
    return angles
