"""Vertex-representation polytopes.

Sets are stored as convex hulls of finitely many points.  Construction
canonicalizes: duplicate points (inf-norm distance below 1e-9) are merged,
non-extreme points are dropped, and the surviving vertices are put in a
canonical order -- counterclockwise from the lexicographically smallest
vertex in 2-D, plain lexicographic otherwise.  Two polytopes describing the
same set therefore carry identical vertex arrays.

Hulls are computed by a monotone chain in 2-D and by membership-LP pruning
in higher dimension; membership itself is decided by a small LP and
distance by a cone program, both through the solver layer.

Math
----
For vertices v_1 ... v_m, membership of x is feasibility of

    x = sum_i lambda_i v_i,   sum_i lambda_i = 1,   lambda >= 0,

and the distance query minimizes ||x - sum_i lambda_i v_i|| over the same
simplex, in the Euclidean or infinity norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .solver import ConvexProgram, SolveStatus

# coordinates closer than this are considered the same point
VERTEX_TOL = 1e-9


def _dedupe(points: np.ndarray) -> np.ndarray:
    """Lexicographically sort rows and drop near-duplicates."""
    order = np.lexsort(points.T[::-1])
    pts = points[order]
    keep = [0]
    for i in range(1, pts.shape[0]):
        if np.max(np.abs(pts[i] - pts[keep[-1]])) > VERTEX_TOL:
            keep.append(i)
    return pts[keep]


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _straight(o, a, b) -> bool:
    """Whether a may be dropped on the way from o to b: no strict left
    turn, or within VERTEX_TOL of the segment [o, b].  Distance goes to
    the segment, not the line, so a near-collinear point beyond the
    chord's extent is kept; and it is a distance, not a cross-product
    area, so the verdict does not collapse with the chord length."""
    if _cross(o, a, b) <= 0.0:
        return True
    gap = np.subtract(a, o)
    chord = np.subtract(b, o)
    nn = float(chord @ chord)
    if nn == 0.0:
        return float(np.linalg.norm(gap)) <= VERTEX_TOL
    t = min(1.0, max(0.0, float(gap @ chord) / nn))
    return float(np.linalg.norm(gap - t * chord)) <= VERTEX_TOL


def _hull_2d(pts: np.ndarray) -> np.ndarray:
    """Monotone chain on lexicographically sorted points; collinear points
    are dropped.  Returns vertices counterclockwise starting from the
    lexicographically smallest one."""
    if pts.shape[0] <= 2:
        return pts
    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and _straight(lower[-2], lower[-1], p):
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and _straight(upper[-2], upper[-1], p):
            upper.pop()
        upper.append(p)
    ring = np.array(lower[:-1] + upper[:-1])
    # near-duplicates can slip past _dedupe when another point interleaves
    # in lexicographic order; on the hull ring they sit side by side, and
    # merging them keeps every edge longer than VERTEX_TOL
    keep = [i for i in range(len(ring))
            if np.max(np.abs(ring[i] - ring[i - 1])) > VERTEX_TOL]
    return ring[keep] if keep else ring[:1]


def _membership_gap(vertices: np.ndarray, x: np.ndarray) -> float:
    """Smallest s with ||x - V'lambda||_inf <= s over the simplex."""
    m, n = vertices.shape
    prog = ConvexProgram("membership")
    lam = prog.new_variable("lam", m, nonneg=True)
    s = prog.new_variable("s", 1, nonneg=True)
    prog.add_equality([(lam, np.ones((1, m)))], 1.0, label="simplex")
    ones = np.ones((n, 1))
    prog.add_inequality([(lam, vertices.T), (s, -ones)], x, label="upper")
    prog.add_inequality([(lam, -vertices.T), (s, -ones)], -x, label="lower")
    prog.add_linear_cost(s, [1.0])
    res = prog.solve()
    if not res.ok:
        raise RuntimeError(f"membership LP failed: {res.status}")
    return float(res.objective)


def _prune_lp(pts: np.ndarray) -> np.ndarray:
    """Drop points expressible as convex combinations of the others."""
    keep = list(range(pts.shape[0]))
    i = 0
    while i < len(keep):
        others = [j for j in keep if j != keep[i]]
        if others and _membership_gap(pts[others], pts[keep[i]]) <= VERTEX_TOL:
            keep.pop(i)
        else:
            i += 1
    return pts[keep]


@dataclass(frozen=True, eq=False)
class Polytope:
    """Convex hull of finitely many points, canonicalized on construction.

    Attributes
    ----------
    vertices : ndarray, shape (m, n)
        Extreme points, one per row, in canonical order.
    """

    vertices: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("a polytope needs at least one point")
        pts = _dedupe(pts)
        if pts.shape[0] > 1:
            if pts.shape[1] == 1:
                pts = np.array([[pts[:, 0].min()], [pts[:, 0].max()]])
            elif pts.shape[1] == 2:
                pts = _hull_2d(pts)
            else:
                pts = _prune_lp(pts)
            pts = _canonical_order(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "vertices", pts)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------

    def contains(self, x, tol: float = 1e-9) -> bool:
        """Whether x is a convex combination of the vertices, within tol
        (decided by LP: the smallest inf-norm residual over the simplex)."""
        x = np.asarray(x, dtype=float)
        if self.num_vertices == 1:
            return bool(np.max(np.abs(x - self.vertices[0])) <= tol)
        return _membership_gap(self.vertices, x) <= tol

    def distance(self, x, norm: str = "euclidean") -> float:
        """Distance from x to the set, min over the simplex of
        ||x - V'lambda|| in the requested norm."""
        x = np.asarray(x, dtype=float)
        if self.num_vertices == 1:
            diff = x - self.vertices[0]
            return float(np.linalg.norm(diff, np.inf if norm == "polyhedral-inf"
                                        else 2))
        if self.dim == 1:
            lo, hi = self.vertices[0, 0], self.vertices[-1, 0]
            return float(max(0.0, lo - x[0], x[0] - hi))
        if norm == "polyhedral-inf":
            return _membership_gap(self.vertices, x)
        if norm != "euclidean":
            raise ValueError(f"unknown norm {norm!r}")
        # members are exactly at distance zero; the cone program would
        # report sqrt-scale residual noise for them
        if self.contains(x):
            return 0.0
        m = self.num_vertices
        prog = ConvexProgram("distance")
        lam = prog.new_variable("lam", m, nonneg=True)
        t = prog.new_variable("t", 1, nonneg=True)
        prog.add_equality([(lam, np.ones((1, m)))], 1.0, label="simplex")
        rows = [[(lam, -self.vertices.T[i:i + 1])] for i in range(self.dim)]
        prog.add_second_order_cone([(t, np.ones((1, 1)))], rows, arg_offset=x,
                                   label="norm")
        prog.add_linear_cost(t, [1.0])
        res = prog.solve()
        if not res.ok:
            raise RuntimeError(f"distance program failed: {res.status}")
        return max(0.0, float(res.objective))

    def support(self, direction) -> float:
        """max over the set of direction . x"""
        return float(np.max(self.vertices @ np.asarray(direction, dtype=float)))

    def bounding_box(self) -> np.ndarray:
        """Per-coordinate (min, max), shape (n, 2)."""
        return np.stack([self.vertices.min(axis=0), self.vertices.max(axis=0)], axis=1)

    def matches(self, other: "Polytope", tol: float = 1e-9) -> bool:
        """Same canonical vertex array up to tol."""
        return (self.vertices.shape == other.vertices.shape
                and np.max(np.abs(self.vertices - other.vertices)) <= tol)

    # ------------------------------------------------------------------
    # halfspace form (planar sets only)
    # ------------------------------------------------------------------

    def to_halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        """Outer description H x <= h with unit outward normals.

        Only 1-D and 2-D sets are supported; degenerate sets (segments,
        single points) come back as intersections of opposing halfspaces.
        """
        if self.dim > 2:
            raise ValueError("halfspace form only available in dimension <= 2")
        cached = self.__dict__.get("_halfspace_cache")
        if cached is not None:
            return cached
        h_mat, rhs = self._halfspaces()
        object.__setattr__(self, "_halfspace_cache", (h_mat, rhs))
        return h_mat, rhs

    def _halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.vertices
        if self.num_vertices == 1:
            eye = np.eye(self.dim)
            h_mat = np.vstack([eye, -eye])
            return h_mat, h_mat @ v[0]
        if self.dim == 1:
            return np.array([[1.0], [-1.0]]), np.array([v[-1, 0], -v[0, 0]])
        if self.num_vertices == 2:
            # segment: two sides of the carrier line plus two end caps
            d = v[1] - v[0]
            d = d / np.linalg.norm(d)
            nrm = np.array([-d[1], d[0]])
            h_mat = np.vstack([nrm, -nrm, d, -d])
            rhs = np.array([nrm @ v[0], -(nrm @ v[0]), d @ v[1], -(d @ v[0])])
            return h_mat, rhs
        rows, rhs = [], []
        for i in range(self.num_vertices):
            a, b = v[i], v[(i + 1) % self.num_vertices]
            edge = b - a
            nrm = np.array([edge[1], -edge[0]])  # outward for ccw ordering
            nrm = nrm / np.linalg.norm(nrm)
            rows.append(nrm)
            rhs.append(nrm @ a)
        return np.array(rows), np.array(rhs)

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {"dim": self.dim, "vertices": self.vertices.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Polytope":
        p = cls(np.asarray(data["vertices"], dtype=float))
        if p.dim != data["dim"]:
            raise ValueError("dimension field disagrees with vertex data")
        return p


def _canonical_order(pts: np.ndarray) -> np.ndarray:
    """Lexicographic order; in 2-D, counterclockwise from the
    lexicographically smallest vertex (what the monotone chain emits)."""
    if pts.shape[1] == 2 and pts.shape[0] > 2:
        start = np.lexsort(pts.T[::-1])[0]
        return np.roll(pts, -start, axis=0)
    return pts[np.lexsort(pts.T[::-1])]


# ----------------------------------------------------------------------
# constructors and binary operations
# ----------------------------------------------------------------------

def convex_hull(points) -> Polytope:
    """Hull of a point cloud (rows are points)."""
    return Polytope(np.asarray(points, dtype=float))


def box(bounds, dim: int | None = None) -> Polytope:
    """Axis-aligned box.

    `bounds` is either a scalar radius r (the box [-r, r]^dim, `dim`
    required) or an (n, 2) array of per-coordinate (lo, hi).
    """
    arr = np.asarray(bounds, dtype=float)
    if arr.ndim == 0:
        if dim is None:
            raise ValueError("scalar bounds need an explicit dimension")
        arr = np.tile([-float(arr), float(arr)], (dim, 1))
    n = arr.shape[0]
    corners = np.array(np.meshgrid(*[arr[i] for i in range(n)],
                                   indexing="ij")).reshape(n, -1).T
    return Polytope(corners)


def affine_image(p: Polytope, a, b=None) -> Polytope:
    """Hull of {A v + b : v vertex of p}; A may be rectangular."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] != p.dim:
        raise ValueError("matrix width must match polytope dimension")
    imgs = p.vertices @ a.T
    if b is not None:
        imgs = imgs + np.asarray(b, dtype=float)
    return Polytope(imgs)


def minkowski_sum(p: Polytope, q: Polytope) -> Polytope:
    """Hull of all pairwise vertex sums."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch in Minkowski sum")
    sums = (p.vertices[:, None, :] + q.vertices[None, :, :]).reshape(-1, p.dim)
    return Polytope(sums)


def scale(p: Polytope, factor: float) -> Polytope:
    return Polytope(p.vertices * float(factor))
