"""Fibre-bundle geometry: patterns, Voronoi labels, Delaunay meshes.

All geometry runs in float64. Positions use the same continuous coordinate
frame as ``images``: pixel ``[j, i]`` has its centre at ``(i + 0.5, j + 0.5)``
and a ``width x height`` grid spans ``[0, width) x [0, height)``.

A quasi-hexagonal pattern is a jittered triangular lattice clipped to a
circular field of view. The default spacing targets seven grid pixels per
fibre, matching the sampling density of real fibre bundles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull as _ConvexHull
from scipy.spatial import Delaunay as _SciDelaunay
from scipy.spatial import cKDTree as _KDTree

from .errors import ConfigurationError, GeometryError

# Mean pixels per fibre targeted by auto spacing: a hexagonal lattice cell
# covers spacing^2 * sqrt(3)/2 pixels, so spacing = sqrt(2*7/sqrt(3)).
PIXELS_PER_FIBRE = 7.0

# Documented minimum pairwise separation for a valid pattern, in pixels.
MIN_SEPARATION = 1e-6

# Label assigned to pixels outside the requested region.
SENTINEL_OUTSIDE = -1

PATTERN_FORMAT = "fibre-pattern"
PATTERN_VERSION = 1


def auto_spacing(pixels_per_fibre: float = PIXELS_PER_FIBRE) -> float:
    """Lattice spacing giving the requested mean pixel count per fibre."""
    return math.sqrt(2.0 * pixels_per_fibre / math.sqrt(3.0))


@dataclass
class FibrePattern:
    """Fibre centre positions inside a circular field of view on a grid.

    Attributes
    ----------
    positions : np.ndarray
        float64 array of shape (n, 2), columns (x, y), pixel units.
    fov_center : np.ndarray
        float64 array of shape (2,).
    fov_radius : float
    width, height : int
        The raster grid the pattern is expressed in.
    """

    positions: np.ndarray
    fov_center: np.ndarray
    fov_radius: float
    width: int
    height: int

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.fov_center = np.asarray(self.fov_center, dtype=np.float64).reshape(2)
        self.fov_radius = float(self.fov_radius)
        self.width = int(self.width)
        self.height = int(self.height)
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise GeometryError(f"positions must be (n, 2), got {self.positions.shape}")
        if self.width < 1 or self.height < 1:
            raise GeometryError(f"invalid grid {self.width}x{self.height}")

    @property
    def n_fibres(self) -> int:
        return self.positions.shape[0]

    def validate(self) -> None:
        """Check structural invariants; raises GeometryError on failure."""
        if self.n_fibres < 3:
            raise GeometryError(f"pattern needs >= 3 fibres, has {self.n_fibres}")
        if not np.all(np.isfinite(self.positions)):
            raise GeometryError("pattern contains non-finite positions")
        if not np.isfinite(self.fov_radius) or self.fov_radius <= 0:
            raise GeometryError(f"invalid fov_radius {self.fov_radius}")
        d = np.linalg.norm(self.positions - self.fov_center, axis=1)
        tol = 1e-9 * max(1.0, self.fov_radius)
        if d.max() > self.fov_radius + tol:
            raise GeometryError("fibre outside the field of view")
        # nearest-neighbour separation via KD-tree (an O(n^2) scan would do)
        dist, _ = _KDTree(self.positions).query(self.positions, k=2)
        if dist[:, 1].min() < MIN_SEPARATION:
            raise GeometryError(
                f"fibres closer than {MIN_SEPARATION} px (min {dist[:, 1].min():.3g})"
            )

    def to_json(self) -> str:
        payload = {
            "format": PATTERN_FORMAT,
            "version": PATTERN_VERSION,
            "width": self.width,
            "height": self.height,
            "fov_center": [float(self.fov_center[0]), float(self.fov_center[1])],
            "fov_radius": float(self.fov_radius),
            "fibres": [[float(x), float(y)] for x, y in self.positions],
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FibrePattern":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"pattern file is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("format") != PATTERN_FORMAT:
            raise ConfigurationError("not a fibre pattern file (missing format tag)")
        if payload.get("version") != PATTERN_VERSION:
            raise ConfigurationError(
                f"unsupported pattern version {payload.get('version')!r}"
            )
        try:
            pattern = cls(
                positions=np.array(payload["fibres"], dtype=np.float64),
                fov_center=np.array(payload["fov_center"], dtype=np.float64),
                fov_radius=float(payload["fov_radius"]),
                width=int(payload["width"]),
                height=int(payload["height"]),
            )
        except (KeyError, TypeError, ValueError, GeometryError) as exc:
            raise ConfigurationError(f"malformed pattern file: {exc}") from exc
        return pattern

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "FibrePattern":
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"pattern file not found: {p}")
        return cls.from_json(p.read_text())


def generate_quasi_hex_pattern(
    grid_w: int,
    grid_h: int,
    spacing: float | None = None,
    jitter_frac: float = 0.2,
    seed: int = 0,
) -> FibrePattern:
    """Jittered hexagonal lattice clipped to the inscribed field-of-view disc.

    Parameters
    ----------
    grid_w, grid_h : int
        Target grid size in pixels; the field of view is the inscribed disc
        centred at (grid_w/2, grid_h/2) with radius min(grid_w, grid_h)/2.
    spacing : float, optional
        Lattice constant in pixels; None selects the density of
        PIXELS_PER_FIBRE pixels per fibre.
    jitter_frac : float
        Per-site displacement amplitude as a fraction of spacing; each
        coordinate is drawn from U[-jitter_frac*spacing, +jitter_frac*spacing].
    seed : int
        Seed for the jitter draws.

    Candidate sites are enumerated row-major over the lattice and jitter is
    drawn for every candidate before clipping, so the kept subset for a
    given seed does not depend on intermediate ordering.
    """
    if spacing is None:
        spacing = auto_spacing()
    spacing = float(spacing)
    if spacing <= 0:
        raise ConfigurationError(f"spacing must be positive, got {spacing}")
    if not 0.0 <= jitter_frac < 0.5:
        raise ConfigurationError(f"jitter_frac must be in [0, 0.5), got {jitter_frac}")
    cx, cy = grid_w / 2.0, grid_h / 2.0
    fov_radius = min(grid_w, grid_h) / 2.0

    dy = spacing * math.sqrt(3.0) / 2.0
    n_rows = int(math.ceil((fov_radius + spacing) / dy))
    n_cols = int(math.ceil((fov_radius + spacing) / spacing))
    rows = np.arange(-n_rows, n_rows + 1)
    cols = np.arange(-n_cols, n_cols + 1)
    yy = cy + rows[:, None] * dy + np.zeros_like(cols, dtype=np.float64)[None, :]
    xx = cx + cols[None, :] * spacing + (np.abs(rows[:, None]) % 2) * (spacing / 2.0)
    sites = np.stack([xx.ravel(), yy.ravel()], axis=1)  # row-major order

    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-jitter_frac * spacing, jitter_frac * spacing, size=sites.shape)
    pts = sites + offsets
    keep = np.linalg.norm(pts - (cx, cy), axis=1) <= fov_radius
    pts = pts[keep]
    if pts.shape[0] < 3:
        raise ConfigurationError(
            f"field of view too small: {pts.shape[0]} fibres at spacing {spacing}"
        )
    return FibrePattern(
        positions=pts,
        fov_center=(cx, cy),
        fov_radius=fov_radius,
        width=grid_w,
        height=grid_h,
    )


def fit_pattern_to_grid(pattern: FibrePattern, grid_w: int, grid_h: int) -> FibrePattern:
    """Centre the pattern on a grid and drop fibres outside it.

    The field-of-view centre is translated to the grid centre (grid_w/2,
    grid_h/2) and fibres whose translated position falls outside the
    half-open rectangle [0, grid_w) x [0, grid_h) are removed; relative
    geometry is otherwise unchanged. Raises GeometryError when fewer than 3
    fibres survive.
    """
    if grid_w < 1 or grid_h < 1:
        raise ConfigurationError(f"invalid grid {grid_w}x{grid_h}")
    shift = np.array([grid_w / 2.0, grid_h / 2.0]) - pattern.fov_center
    pts = pattern.positions + shift
    keep = (
        (pts[:, 0] >= 0.0)
        & (pts[:, 0] < grid_w)
        & (pts[:, 1] >= 0.0)
        & (pts[:, 1] < grid_h)
    )
    pts = pts[keep]
    if pts.shape[0] < 3:
        raise GeometryError(
            f"only {pts.shape[0]} fibres fall inside a {grid_w}x{grid_h} grid"
        )
    return FibrePattern(
        positions=pts,
        fov_center=(grid_w / 2.0, grid_h / 2.0),
        fov_radius=pattern.fov_radius,
        width=grid_w,
        height=grid_h,
    )


def scale_pattern(pattern: FibrePattern, factor: float) -> FibrePattern:
    """Divide all coordinates by ``factor`` (>1 shrinks the pattern)."""
    if factor <= 0:
        raise ConfigurationError(f"scale factor must be positive, got {factor}")
    return FibrePattern(
        positions=pattern.positions / factor,
        fov_center=pattern.fov_center / factor,
        fov_radius=pattern.fov_radius / factor,
        width=max(1, int(round(pattern.width / factor))),
        height=max(1, int(round(pattern.height / factor))),
    )


@dataclass
class VoronoiLabelMap:
    """Per-pixel nearest-fibre labels plus cell pixel counts.

    ``labels`` holds the fibre index for every covered pixel and
    SENTINEL_OUTSIDE elsewhere; ``cell_sizes[i]`` counts the pixels labelled
    ``i`` (they sum to the number of labelled pixels).
    """

    width: int
    height: int
    labels: np.ndarray
    cell_sizes: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return self.labels != SENTINEL_OUTSIDE


def _hull_mask(pattern: FibrePattern, width: int, height: int) -> np.ndarray:
    """Pixels whose centre lies inside the convex hull of the fibres."""
    try:
        hull = _ConvexHull(pattern.positions)
    except Exception as exc:
        raise GeometryError(f"degenerate point set for hull: {exc}") from exc
    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    inside = np.ones((height, width), dtype=bool)
    # hull.equations rows are (a, b, offset) with a*x + b*y + offset <= 0 inside
    for a, b, off in hull.equations:
        inside &= a * gx + b * gy + off <= 1e-9
    return inside


def voronoi_labels(
    pattern: FibrePattern,
    grid_w: int,
    grid_h: int,
    full_rect: bool = False,
) -> VoronoiLabelMap:
    """Nearest-fibre label map over the grid.

    By default only pixel centres inside the convex hull of the fibres are
    labelled; ``full_rect=True`` labels every pixel of the rectangle.
    Distance ties resolve to the lowest fibre index (argmin semantics),
    which keeps the assignment deterministic for symmetric patterns.
    """
    pts = pattern.positions
    n = pts.shape[0]
    if n == 0:
        raise GeometryError("empty pattern")
    labels = np.empty((grid_h, grid_w), dtype=np.int32)
    xs = np.arange(grid_w, dtype=np.float64) + 0.5
    y_all = np.arange(grid_h, dtype=np.float64) + 0.5
    # chunk rows so the (rows*grid_w, n) distance block stays ~16 MB
    rows_per_chunk = max(1, 2_000_000 // max(1, n * grid_w))
    for r0 in range(0, grid_h, rows_per_chunk):
        r1 = min(grid_h, r0 + rows_per_chunk)
        gx = np.broadcast_to(xs, (r1 - r0, grid_w)).reshape(-1, 1)
        gy = np.repeat(y_all[r0:r1], grid_w).reshape(-1, 1)
        d2 = (gx - pts[:, 0]) ** 2 + (gy - pts[:, 1]) ** 2
        labels[r0:r1, :] = (
            np.argmin(d2, axis=1).astype(np.int32).reshape(r1 - r0, grid_w)
        )
    if not full_rect:
        if n < 3:
            raise GeometryError("hull mode needs >= 3 fibres")
        labels = np.where(
            _hull_mask(pattern, grid_w, grid_h), labels, np.int32(SENTINEL_OUTSIDE)
        )
    covered = labels != SENTINEL_OUTSIDE
    cell_sizes = np.bincount(labels[covered], minlength=n)
    return VoronoiLabelMap(
        width=grid_w, height=grid_h, labels=labels, cell_sizes=cell_sizes
    )


@dataclass
class DelaunayMesh:
    """Canonical Delaunay triangulation of a fibre pattern.

    Triangles are stored with vertex indices sorted ascending and the
    triangle list sorted lexicographically, so identical positions always
    produce identical meshes. Near-cocircular quads (incircle determinant
    within tolerance) are flipped to the lexicographically smallest
    diagonal, removing the ambiguity of regular grids.

    ``bary_coeffs[t]`` is a (3, 3) matrix such that the barycentric weights
    of point (x, y) in triangle t are ``bary_coeffs[t] @ (x, y, 1)``.
    """

    points: np.ndarray
    triangles: np.ndarray
    bary_coeffs: np.ndarray

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


_COCIRCULAR_TOL = 1e-9


def _incircle_dets(points: np.ndarray, quads: np.ndarray) -> np.ndarray:
    """Signed incircle determinant for quads (a, b, c, d).

    Positive when d lies inside the circumcircle of CCW triangle (a, b, c).
    Coordinates are translated by d before lifting, which keeps the
    determinant well conditioned for quads far from the origin.
    """
    a = points[quads[:, 0]]
    b = points[quads[:, 1]]
    c = points[quads[:, 2]]
    d = points[quads[:, 3]]
    orient = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (
        c[:, 0] - a[:, 0]
    )
    swap = orient < 0
    b_, c_ = b.copy(), c.copy()
    b_[swap], c_[swap] = c[swap], b[swap]
    ax, ay = (a - d).T
    bx, by = (b_ - d).T
    cx, cy = (c_ - d).T
    det = (
        (ax * ax + ay * ay) * (bx * cy - cx * by)
        - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay)
    )
    return det


def _segments_cross(p1, p2, p3, p4) -> bool:
    """True when open segments p1-p2 and p3-p4 properly intersect."""

    def orient(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _canonicalise_cocircular(points: np.ndarray, triangles) -> list:
    """Flip near-cocircular quads to the lexicographically smaller diagonal."""
    tris = {tuple(sorted(t)) for t in triangles}
    changed = True
    sweeps = 0
    while changed and sweeps < 64:
        changed = False
        sweeps += 1
        edge_map: dict[tuple[int, int], list] = {}
        for t in tris:
            for e in ((t[0], t[1]), (t[0], t[2]), (t[1], t[2])):
                edge_map.setdefault(e, []).append(t)
        for edge, owners in sorted(edge_map.items()):
            if len(owners) != 2:
                continue
            t1, t2 = owners
            if t1 not in tris or t2 not in tris:
                continue
            a, b = edge
            c = next(v for v in t1 if v not in edge)
            d = next(v for v in t2 if v not in edge)
            new_edge = tuple(sorted((c, d)))
            if new_edge >= edge:
                continue
            quad = np.array([[a, b, c, d]])
            det = _incircle_dets(points, quad)[0]
            span = np.ptp(points[[a, b, c, d]], axis=0).max()
            if abs(det) > _COCIRCULAR_TOL * max(span, 1.0) ** 4:
                continue
            if not _segments_cross(points[a], points[b], points[c], points[d]):
                continue
            tris.discard(t1)
            tris.discard(t2)
            tris.add(tuple(sorted((c, d, a))))
            tris.add(tuple(sorted((c, d, b))))
            changed = True
    return sorted(tris)


def delaunay(pattern: FibrePattern) -> DelaunayMesh:
    """Delaunay triangulation with deterministic cocircular resolution.

    Raises GeometryError for degenerate input (fewer than 3 fibres or all
    fibres collinear).
    """
    pts = pattern.positions
    if pts.shape[0] < 3:
        raise GeometryError("triangulation needs at least 3 fibres")
    try:
        sci = _SciDelaunay(pts)
    except Exception as exc:
        raise GeometryError(f"degenerate point set: {exc}") from exc
    if sci.simplices.shape[0] == 0:
        raise GeometryError("degenerate point set: no triangles")
    tris = _canonicalise_cocircular(pts, [tuple(t) for t in sci.simplices])
    triangles = np.array(tris, dtype=np.int32)

    tri_pts = pts[triangles]  # (T, 3, 2)
    mats = np.concatenate(
        [tri_pts.transpose(0, 2, 1), np.ones((triangles.shape[0], 1, 3))], axis=1
    )  # rows: x coords, y coords, ones
    try:
        bary = np.linalg.inv(mats)  # (T, 3, 3): weights = bary @ (x, y, 1)
    except np.linalg.LinAlgError as exc:
        raise GeometryError(f"degenerate triangle in mesh: {exc}") from exc
    return DelaunayMesh(points=pts.copy(), triangles=triangles, bary_coeffs=bary)


@dataclass
class ReconstructionPlan:
    """Precomputed pixel -> triangle assignment for linear interpolation.

    For every pixel centre inside the mesh hull: the indices of the three
    enclosing triangle vertices and their barycentric weights (clipped to
    [0, 1] and renormalised, so interpolation is an exact convex
    combination). Pixels on shared edges belong to the first triangle in
    canonical order. ``mask`` marks covered pixels.
    """

    width: int
    height: int
    vertex_ids: np.ndarray  # (H, W, 3) int32, 0 where unassigned
    weights: np.ndarray  # (H, W, 3) float64, 0 where unassigned
    mask: np.ndarray  # (H, W) bool

    def interpolate(self, signals: np.ndarray) -> np.ndarray:
        """Interpolate per-fibre signals onto the pixel grid (float64)."""
        vals = (signals[self.vertex_ids] * self.weights).sum(axis=2)
        return np.where(self.mask, vals, 0.0)


_INSIDE_TOL = 1e-9


def raster_plan(mesh: DelaunayMesh, width: int, height: int) -> ReconstructionPlan:
    """Assign pixel centres to mesh triangles and cache interpolation weights."""
    vertex_ids = np.zeros((height, width, 3), dtype=np.int32)
    weights = np.zeros((height, width, 3), dtype=np.float64)
    assigned = np.zeros((height, width), dtype=bool)
    pts = mesh.points
    for t in range(mesh.n_triangles):
        tri = mesh.triangles[t]
        coeff = mesh.bary_coeffs[t]
        corners = pts[tri]
        x0 = max(0, int(math.floor(corners[:, 0].min() - 0.5)))
        x1 = min(width - 1, int(math.ceil(corners[:, 0].max() - 0.5)))
        y0 = max(0, int(math.floor(corners[:, 1].min() - 0.5)))
        y1 = min(height - 1, int(math.ceil(corners[:, 1].max() - 0.5)))
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64) + 0.5
        ys = np.arange(y0, y1 + 1, dtype=np.float64) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        w = (
            coeff[None, None, :, 0] * gx[..., None]
            + coeff[None, None, :, 1] * gy[..., None]
            + coeff[None, None, :, 2]
        )
        inside = (w >= -_INSIDE_TOL).all(axis=2)
        block = assigned[y0 : y1 + 1, x0 : x1 + 1]
        take = inside & ~block
        if not take.any():
            continue
        w_take = np.clip(w[take], 0.0, None)
        w_take /= w_take.sum(axis=1, keepdims=True)
        sub_ids = vertex_ids[y0 : y1 + 1, x0 : x1 + 1]
        sub_w = weights[y0 : y1 + 1, x0 : x1 + 1]
        sub_ids[take] = tri
        sub_w[take] = w_take
        assigned[y0 : y1 + 1, x0 : x1 + 1] |= take
    return ReconstructionPlan(
        width=width,
        height=height,
        vertex_ids=vertex_ids,
        weights=weights,
        mask=assigned,
    )
