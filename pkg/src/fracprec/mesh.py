"""Triangulations, mesh generators, barycentric dual cells and geometry maps.

Meshes are conforming 2D triangulations stored as flat numpy arrays.  The
generators cover the unit disk (quasi-uniform and boundary-graded), the
L-shaped domain [-1,3]^2 \\ [1,3]^2 in four variants, and structured
rectangles [-a,a] x [-1,1].  Graded families are built by repeated
red-green refinement driven by a local mesh-size law, which keeps them
shape regular; the intentionally non-shape-regular L-shape family uses a
coordinate pushforward instead.
"""

import math

import numpy as np

__all__ = [
    "TriMesh",
    "DualMesh",
    "DomainMap",
    "ConditionReport",
    "generate_disk_mesh",
    "generate_lshape_mesh",
    "generate_rectangle_mesh",
    "build_barycentric_dual",
    "radial_projection",
    "check_mesh_conditions",
    "save_mesh",
    "load_mesh",
]

# Ring counts of the hexagonal disk meshes; interior dof counts
# 127, 469, 1951, 7651, 30907 track the reference sequence
# 123, 492, 1968, 7872, 31488 within 5%.
_DISK_RINGS = [7, 13, 26, 51, 102]

# Grid subdivisions of the quasi-uniform L-shape; interior dof counts
# 261, 1008, 3960, 15696 track 248, 992, 3968, 15872 within ~6%.
_LSHAPE_DIVISIONS = [20, 38, 74, 146]

_LSHAPE_POLYGON = [(-1.0, -1.0), (3.0, -1.0), (3.0, 1.0),
                   (1.0, 1.0), (1.0, 3.0), (-1.0, 3.0)]


class TriMesh:
    """Conforming triangulation with refinement bookkeeping.

    Attributes
    ----------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counter-clockwise
    level : (nt,) int array, red-refinement depth
    green_parent : (nt, 3) int array
        For green triangles the vertex triple of the red parent that was
        bisected; (-1, -1, -1) otherwise.
    """

    def __init__(self, vertices, triangles, level=None, green_parent=None):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        nt = len(self.triangles)
        self.level = (np.zeros(nt, dtype=np.int64) if level is None
                      else np.asarray(level, dtype=np.int64).copy())
        self.green_parent = (np.full((nt, 3), -1, dtype=np.int64)
                             if green_parent is None
                             else np.asarray(green_parent, dtype=np.int64).copy())
        self._cache = {}

    # -- derived quantities ------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def green_flag(self):
        return self.green_parent[:, 0] >= 0

    def signed_areas(self):
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))

    def areas(self):
        return np.abs(self.signed_areas())

    def h(self):
        """Local element size h_k = area^(1/2)."""
        return np.sqrt(self.areas())

    def diameters(self):
        p = self.vertices[self.triangles]
        d01 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        d12 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        d20 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        return np.maximum(np.maximum(d01, d12), d20)

    def edge_map(self):
        """Map sorted vertex pair -> list of incident triangle indices."""
        if "edge_map" not in self._cache:
            em = {}
            for k, (a, b, c) in enumerate(self.triangles):
                for e in ((a, b), (b, c), (c, a)):
                    key = (min(e), max(e))
                    em.setdefault(key, []).append(k)
            self._cache["edge_map"] = em
        return self._cache["edge_map"]

    def boundary_edges(self):
        """Edges with a single incident triangle, oriented ccw (domain left)."""
        if "boundary_edges" not in self._cache:
            out = []
            em = self.edge_map()
            for k, (a, b, c) in enumerate(self.triangles):
                for u, v in ((a, b), (b, c), (c, a)):
                    if len(em[(min(u, v), max(u, v))]) == 1:
                        out.append((u, v))
            self._cache["boundary_edges"] = out
        return self._cache["boundary_edges"]

    def boundary_vertex(self):
        if "boundary_vertex" not in self._cache:
            flag = np.zeros(self.n_vertices, dtype=bool)
            for u, v in self.boundary_edges():
                flag[u] = flag[v] = True
            self._cache["boundary_vertex"] = flag
        return self._cache["boundary_vertex"]

    def interior_vertices(self):
        return np.nonzero(~self.boundary_vertex())[0]

    def neighbors(self):
        """(nt, 3) triangle adjacency across edges; -1 at the boundary."""
        if "neighbors" not in self._cache:
            em = self.edge_map()
            nb = np.full((self.n_triangles, 3), -1, dtype=np.int64)
            for k, (a, b, c) in enumerate(self.triangles):
                for j, e in enumerate(((a, b), (b, c), (c, a))):
                    inc = em[(min(e), max(e))]
                    for m in inc:
                        if m != k:
                            nb[k, j] = m
                self._cache.setdefault("neighbors", nb)
            self._cache["neighbors"] = nb
        return self._cache["neighbors"]

    def vertex_patches(self):
        """List of triangle-index arrays, one per vertex."""
        if "patches" not in self._cache:
            patches = [[] for _ in range(self.n_vertices)]
            for k, tri in enumerate(self.triangles):
                for v in tri:
                    patches[v].append(k)
            self._cache["patches"] = [np.array(p, dtype=np.int64)
                                      for p in patches]
        return self._cache["patches"]

    def validate(self):
        """Raise if the mesh is non-conforming or badly oriented."""
        if np.any(self.signed_areas() <= 0):
            raise ValueError("triangle with non-positive signed area")
        for edge, inc in self.edge_map().items():
            if len(inc) > 2:
                raise ValueError(f"edge {edge} shared by {len(inc)} triangles")
        # Hanging node check: no vertex may lie strictly inside an edge.
        coords = {}
        for (u, v), inc in self.edge_map().items():
            coords[(u, v)] = (self.vertices[u], self.vertices[v])
        vert_rounded = {tuple(np.round(p, 12)): i
                        for i, p in enumerate(self.vertices)}
        for (u, v), (pu, pv) in coords.items():
            mid = tuple(np.round(0.5 * (pu + pv), 12))
            w = vert_rounded.get(mid)
            if w is not None and w not in (u, v):
                # A vertex sits at this edge midpoint: legal only if the
                # edge is not actually present as an unbroken edge of two
                # triangles on both sides (conforming closure removes it).
                if len(self.edge_map()[(u, v)]) == 2:
                    raise ValueError(f"hanging node {w} on edge {(u, v)}")

    def copy(self):
        return TriMesh(self.vertices.copy(), self.triangles.copy(),
                       self.level, self.green_parent)


class DualMesh:
    """Barycentric dual cells, one per primal vertex.

    Each primal triangle is split into 6 sub-triangles by its edge
    midpoints and barycenter; the two sub-triangles touching corner v
    belong to the dual cell of v.

    Attributes
    ----------
    mesh : TriMesh
    cell_subtris : list of (k, 3, 2) float arrays
        Corner coordinates of the sub-triangles of each cell; corner 0 is
        the owning primal vertex, corner 1 an edge midpoint, corner 2 the
        barycenter.
    cell_elems : list of (k,) int arrays
        Primal triangle containing each sub-triangle.
    """

    def __init__(self, mesh, cell_subtris, cell_elems):
        self.mesh = mesh
        self.cell_subtris = cell_subtris
        self.cell_elems = cell_elems

    def cell_areas(self):
        out = np.zeros(len(self.cell_subtris))
        for i, sub in enumerate(self.cell_subtris):
            if len(sub):
                out[i] = _tri_areas(sub).sum()
        return out


class DomainMap:
    """Geometry map onto the closed unit disk.

    kind "identity" requires the domain to be the unit disk already;
    kind "radial-projection" scales every ray from the origin so that
    the polygonal boundary lands on the unit circle.
    """

    def __init__(self, kind, polygon=None):
        if kind not in ("identity", "radial-projection"):
            raise ValueError(f"unknown map kind {kind!r}")
        if kind == "radial-projection":
            if polygon is None:
                raise ValueError("radial projection needs a polygon")
            polygon = np.asarray(polygon, dtype=float)
        self.kind = kind
        self.polygon = polygon

    def __call__(self, x):
        return radial_projection(self, x)

    def apply(self, points):
        """Vectorized map of an (..., 2) coordinate array."""
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, 2)
        out = np.array([radial_projection(self, p) for p in flat])
        return out.reshape(pts.shape)


class ConditionReport:
    """Mesh-condition certificate: shape regularity (C1), local
    quasi-uniformity (C2) and the order-dependent condition (C3)."""

    def __init__(self, c_R, c_L, c_0, admissible, s):
        self.c_R = c_R
        self.c_L = c_L
        self.c_0 = c_0
        self.admissible = admissible
        self.s = s

    def __repr__(self):
        return (f"ConditionReport(c_R={self.c_R:.4f}, c_L={self.c_L:.4f}, "
                f"c_0={self.c_0:.4f}, admissible={self.admissible})")


def _tri_areas(subtris):
    a = subtris[:, 0]
    b = subtris[:, 1]
    c = subtris[:, 2]
    return 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                        - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


# -- generators -------------------------------------------------------------


def _hex_disk(rings):
    """Hexagonal-ring triangulation of the unit disk."""
    verts = [(0.0, 0.0)]
    ring_start = [0, 1]
    for k in range(1, rings + 1):
        rad = k / rings
        for j in range(6 * k):
            ang = 2.0 * math.pi * j / (6 * k)
            verts.append((rad * math.cos(ang), rad * math.sin(ang)))
        ring_start.append(len(verts))
    tris = []
    # innermost fan
    for j in range(6):
        tris.append((0, 1 + j, 1 + (j + 1) % 6))
    for k in range(2, rings + 1):
        i0 = ring_start[k - 1]
        o0 = ring_start[k]
        ni, no = 6 * (k - 1), 6 * k
        for sector in range(6):
            inner = [i0 + (sector * (k - 1) + t) % ni for t in range(k)]
            outer = [o0 + (sector * k + t) % no for t in range(k + 1)]
            for t in range(k):
                tris.append((outer[t], outer[t + 1], inner[t]))
            for t in range(k - 1):
                tris.append((inner[t], outer[t + 1], inner[t + 1]))
    return TriMesh(np.array(verts), np.array(tris))


def _graded_refine(mesh, target, exponent, dist_fn, snap=None, max_passes=60):
    """Refine until h_k <= target * dist^((b-1)/b) with b = exponent.

    dist_fn maps element centroids to distances from the grading center
    (boundary or corner).  Red-green closure keeps the family shape
    regular; the element's own size floors the distance so the loop
    terminates with boundary elements of size ~ target^exponent.  An
    optional snap callback (e.g. circle projection) runs after every pass.
    """
    from .refine import MarkSet, refine_red_green

    expo = (exponent - 1.0) / exponent
    for _ in range(max_passes):
        h = mesh.h()
        cent = mesh.vertices[mesh.triangles].mean(axis=1)
        d = np.maximum(dist_fn(cent), h)
        marked = np.nonzero(h > target * d ** expo)[0]
        if len(marked) == 0:
            return mesh
        mesh = refine_red_green(mesh, MarkSet(set(marked.tolist())))
        if snap is not None:
            mesh = snap(mesh)
    raise RuntimeError("graded refinement did not terminate")


def _graded_refine_to_count(mesh, n_target, exponent, dist_fn, snap=None,
                            max_passes=200):
    """Greedy graded refinement toward a prescribed interior dof count.

    Each pass red refines the triangles with the largest grading quotient
    h / dist^((b-1)/b), marking only as many as the remaining dof budget
    suggests, so the final interior vertex count lands within a few
    percent of n_target while the mesh keeps the graded size law.
    """
    from .refine import MarkSet, refine_red_green

    expo = (exponent - 1.0) / exponent
    for _ in range(max_passes):
        n = len(mesh.interior_vertices())
        if n >= 0.97 * n_target:
            return mesh
        h = mesh.h()
        cent = mesh.vertices[mesh.triangles].mean(axis=1)
        d = np.maximum(dist_fn(cent), h)
        q = h / d ** expo
        m = int(np.clip((n_target - n) / 3.0, 1, mesh.n_triangles))
        marked = np.argsort(q)[::-1][:m]
        mesh = refine_red_green(mesh, MarkSet(set(marked.tolist())))
        if snap is not None:
            mesh = snap(mesh)
    raise RuntimeError("graded refinement did not reach the dof target")


def _snap_disk_boundary(mesh):
    """Project boundary vertices onto the unit circle."""
    flag = mesh.boundary_vertex()
    v = mesh.vertices.copy()
    norms = np.linalg.norm(v[flag], axis=1)
    v[flag] /= norms[:, None]
    return TriMesh(v, mesh.triangles, mesh.level, mesh.green_parent)


# Interior dof targets of the 2-graded disk family.
_DISK_GRADED_COUNTS = [1068, 4645, 13680]


def generate_disk_mesh(refinement_level, grading_exponent=1.0):
    """Triangulate the unit disk.

    grading_exponent = 1 gives the quasi-uniform hexagonal-ring family;
    grading_exponent > 1 grades algebraically toward the boundary via
    red-green refinement under the size law h ~ target * dist^((b-1)/b),
    so the family stays shape regular.
    """
    if refinement_level < 0:
        raise ValueError("refinement_level must be >= 0")
    if grading_exponent < 1:
        raise ValueError("grading_exponent must be >= 1")
    if grading_exponent == 1.0:
        if refinement_level < len(_DISK_RINGS):
            rings = _DISK_RINGS[refinement_level]
        else:
            rings = _DISK_RINGS[-1] * 2 ** (refinement_level
                                            - len(_DISK_RINGS) + 1)
        return _hex_disk(rings)
    base = _hex_disk(_DISK_RINGS[0])
    if refinement_level == 0:
        return base
    if refinement_level - 1 < len(_DISK_GRADED_COUNTS):
        count = _DISK_GRADED_COUNTS[refinement_level - 1]
    else:
        count = _DISK_GRADED_COUNTS[-1] * 3 ** (
            refinement_level - len(_DISK_GRADED_COUNTS))

    def dist_to_boundary(c):
        return np.maximum(1.0 - np.linalg.norm(c, axis=1), 0.0)

    return _graded_refine_to_count(base, count, grading_exponent,
                                   dist_to_boundary,
                                   snap=_snap_disk_boundary)


def _lshape_grid(m):
    """Structured right-triangle mesh of [-1,3]^2 minus [1,3]^2."""
    h = 4.0 / m
    index = {}
    verts = []

    def vid(i, j):
        key = (i, j)
        if key not in index:
            index[key] = len(verts)
            verts.append((-1.0 + i * h, -1.0 + j * h))
        return index[key]

    tris = []
    half = m // 2
    for i in range(m):
        for j in range(m):
            if i >= half and j >= half:
                continue
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return TriMesh(np.array(verts), np.array(tris))


# Parameters of the graded L-shape families (corner (1,1)): grid
# divisions of the coordinate-graded family, interior dof targets of the
# shape-regular graded family, and layer counts of the geometric family.
_LSHAPE_AG_DIVISIONS = [24, 46, 80, 148]
_LSHAPE_AGSR_COUNTS = [528, 912, 2736, 4920, 9072, 14784]


def generate_lshape_mesh(variant, level):
    """Triangulate the L-shape [-1,3]^2 \\ [1,3]^2.

    Variants: "quasi-uniform"; "geometric-graded" (red-green layers
    halving toward the reentrant corner); "algebraic-graded" (coordinate
    pushforward concentrating vertices at the corner, intentionally not
    shape regular); "algebraic-shape-regular" (red-green grading under
    an algebraic size law).
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    if variant == "quasi-uniform":
        if level < len(_LSHAPE_DIVISIONS):
            m = _LSHAPE_DIVISIONS[level]
        else:
            m = _LSHAPE_DIVISIONS[-1] * 2 ** (level - len(_LSHAPE_DIVISIONS) + 1)
        return _lshape_grid(m)
    if variant == "geometric-graded":
        # layer radii shrink by 1/sqrt(2) per pass while element sizes
        # halve, so each level roughly doubles the dof count
        mesh = _lshape_grid(12)
        from .refine import MarkSet, refine_red_green
        corner = np.array([1.0, 1.0])
        for p in range(level + 1):
            cent = mesh.vertices[mesh.triangles].mean(axis=1)
            d = np.linalg.norm(cent - corner, axis=1)
            radius = 2.0 * (0.5 ** 0.5) ** p
            marked = np.nonzero(d < radius)[0]
            mesh = refine_red_green(mesh, MarkSet(set(marked.tolist())))
        return mesh
    if variant == "algebraic-graded":
        m = (_LSHAPE_AG_DIVISIONS[level] if level < len(_LSHAPE_AG_DIVISIONS)
             else _LSHAPE_AG_DIVISIONS[-1] * 2 ** (
                 level - len(_LSHAPE_AG_DIVISIONS) + 1))
        mesh = _lshape_grid(m)
        # coordinate-wise 2-grading toward the reentrant corner: cells
        # near one corner axis but away from the other become thin,
        # so shape regularity (C1) degrades as the level grows
        v = mesh.vertices.copy()
        d = v - np.array([1.0, 1.0])
        v = np.array([1.0, 1.0]) + np.sign(d) * 2.0 * (np.abs(d) / 2.0) ** 2
        return TriMesh(v, mesh.triangles, mesh.level, mesh.green_parent)
    if variant == "algebraic-shape-regular":
        base = _lshape_grid(8)
        count = (_LSHAPE_AGSR_COUNTS[level]
                 if level < len(_LSHAPE_AGSR_COUNTS)
                 else _LSHAPE_AGSR_COUNTS[-1] * 2 ** (
                     level - len(_LSHAPE_AGSR_COUNTS) + 1))
        corner = np.array([1.0, 1.0])

        def dist_to_corner(c):
            return np.linalg.norm(c - corner, axis=1)

        return _graded_refine_to_count(base, count, 2.0, dist_to_corner)
    raise ValueError(f"unknown L-shape variant {variant!r}")


_RECT_H = [1 / (5 * math.sqrt(2)), 1 / (10 * math.sqrt(2)),
           1 / (15 * math.sqrt(2)), 1 / (20 * math.sqrt(2))]


def generate_rectangle_mesh(aspect, target_h):
    """Structured mesh of [-a, a] x [-1, 1] with squares split in two.

    target_h is the element size area^(1/2) = side/sqrt(2); supported
    values are 1/(k*5*sqrt(2)) for k = 1..4.
    """
    if target_h <= 0:
        raise ValueError("target_h must be positive")
    if aspect < 1:
        raise ValueError("aspect must be >= 1")
    matches = [h for h in _RECT_H if abs(h - target_h) < 1e-12]
    if not matches:
        raise ValueError(f"unsupported target_h {target_h}")
    side = target_h * math.sqrt(2)
    ny = round(2.0 / side)
    nx = round(2.0 * aspect / side)
    xs = np.linspace(-aspect, aspect, nx + 1)
    ys = np.linspace(-1.0, 1.0, ny + 1)

    def vid(i, j):
        return i * (ny + 1) + j

    verts = np.array([(x, y) for x in xs for y in ys])
    tris = []
    for i in range(nx):
        for j in range(ny):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return TriMesh(verts, np.array(tris))


# -- dual mesh --------------------------------------------------------------


def build_barycentric_dual(mesh):
    """Split every triangle 6 ways and collect the vertex-centred cells."""
    mesh.validate()
    nv = mesh.n_vertices
    cell_subtris = [[] for _ in range(nv)]
    cell_elems = [[] for _ in range(nv)]
    p = mesh.vertices
    for k, (a, b, c) in enumerate(mesh.triangles):
        pa, pb, pc = p[a], p[b], p[c]
        mab = 0.5 * (pa + pb)
        mbc = 0.5 * (pb + pc)
        mca = 0.5 * (pc + pa)
        bar = (pa + pb + pc) / 3.0
        for v, left, right in ((a, mab, mca), (b, mbc, mab), (c, mca, mbc)):
            pv = p[v]
            cell_subtris[v].append((pv, left, bar))
            cell_subtris[v].append((pv, bar, right))
            cell_elems[v].extend((k, k))
    return DualMesh(
        mesh,
        [np.array(s) if s else np.zeros((0, 3, 2)) for s in cell_subtris],
        [np.array(e, dtype=np.int64) for e in cell_elems],
    )


# -- geometry map -----------------------------------------------------------


def _ray_polygon_exit(polygon, direction):
    """Distance from the origin to the polygon boundary along direction."""
    best = None
    n = len(polygon)
    dx, dy = direction
    for i in range(n):
        px, py = polygon[i]
        qx, qy = polygon[(i + 1) % n]
        ex, ey = qx - px, qy - py
        det = dx * (-ey) - dy * (-ex)
        if abs(det) < 1e-15:
            continue
        t = (px * (-ey) - py * (-ex)) / det
        u = (dx * py - dy * px) / det
        if t > 1e-12 and -1e-12 <= u <= 1 + 1e-12:
            if best is None or t < best:
                best = t
    if best is None:
        raise ValueError("ray does not meet polygon boundary")
    return best


def radial_projection(domain_map, x):
    """Map chi(x) = x / (r(x) |x|) of the domain onto the unit disk."""
    x = np.asarray(x, dtype=float)
    if domain_map.kind == "identity":
        return x.copy()
    nrm = float(np.hypot(x[0], x[1]))
    if nrm == 0.0:
        return np.zeros(2)
    t_exit = _ray_polygon_exit(domain_map.polygon, x / nrm)
    if nrm > t_exit * (1 + 1e-9):
        raise ValueError(f"point {x} outside the domain")
    return x / t_exit


# -- mesh conditions --------------------------------------------------------


def check_mesh_conditions(mesh, s):
    """Certify (C1) shape regularity, (C2) local quasi-uniformity and the
    order-dependent condition (C3), cf. the admissibility bound
    c_L <= (1/2) (1129/49)^(1/(4|s|))."""
    if s == 0 or abs(s) > 1:
        raise ValueError("need 0 < |s| <= 1")
    h = mesh.h()
    d = mesh.diameters()
    c_R = float(np.min(h / d))
    ratios = [1.0]
    em = mesh.edge_map()
    for inc in em.values():
        if len(inc) == 2:
            k, m = inc
            ratios.append(max(h[k] / h[m], h[m] / h[k]))
    c_L = float(max(ratios))

    # hhat_j: mean element size over the triangles meeting supp(phi_j).
    patches = mesh.vertex_patches()
    patch_vertex_sets = [set() for _ in range(mesh.n_vertices)]
    for j in range(mesh.n_vertices):
        for k in patches[j]:
            patch_vertex_sets[j].update(mesh.triangles[k])
    # triangle k meets supp(phi_j) iff it has a vertex on the patch of j
    touching = [set() for _ in range(mesh.n_vertices)]
    for j in range(mesh.n_vertices):
        for v in patch_vertex_sets[j]:
            touching[j].update(patches[v])
    hhat = np.array([np.mean(h[sorted(touching[j])]) if touching[j] else h.mean()
                     for j in range(mesh.n_vertices)])

    interior = ~mesh.boundary_vertex()
    two_s = 2.0 * abs(s)
    c_0 = math.inf
    for k, tri in enumerate(mesh.triangles):
        js = [v for v in tri if interior[v]]
        if not js:
            continue
        hs = hhat[js]
        expr = 51.0 / 7.0 - math.sqrt(float(np.sum(hs ** two_s))
                                      * float(np.sum(hs ** -two_s)))
        c_0 = min(c_0, expr)
    if c_0 is math.inf:
        c_0 = 51.0 / 7.0 - math.sqrt(1.0)
    bound = 0.5 * (1129.0 / 49.0) ** (1.0 / (4.0 * abs(s)))
    return ConditionReport(c_R, c_L, float(c_0), c_L <= bound, s)


# -- text format ------------------------------------------------------------


def save_mesh(mesh, path):
    """Write the plain-text format: 'ntri nvert', vertex and triangle lines."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_triangles} {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x!r} {y!r}\n")
        for (i, j, k), lev in zip(mesh.triangles, mesh.level):
            fh.write(f"{i} {j} {k} {lev}\n")


def load_mesh(path):
    with open(path) as fh:
        ntri, nvert = map(int, fh.readline().split())
        verts = [tuple(map(float, fh.readline().split())) for _ in range(nvert)]
        tris = []
        levels = []
        for _ in range(ntri):
            i, j, k, lev = map(int, fh.readline().split())
            tris.append((i, j, k))
            levels.append(lev)
    return TriMesh(np.array(verts), np.array(tris), np.array(levels))


def barycentric_subdivision(mesh):
    """Conforming 6-way split of every triangle at its barycenter and
    edge midpoints.

    Returns (fine, orig, mid, bar0): the subdivided TriMesh, the
    fine-mesh ids of the original vertices (identity layout: originals
    come first, then edge midpoints, then barycenters), the (nt, 3)
    midpoint ids per element (edges (a,b), (b,c), (c,a)) and the id of
    the first barycenter (element k's barycenter is bar0 + k).  The six
    sub-triangles of element k are fine triangles 6k .. 6k+5.
    """
    mesh.validate()
    nv = mesh.n_vertices
    tris = np.asarray(mesh.triangles)
    edges = {}
    verts = [mesh.vertices]
    nxt = nv
    mid = np.zeros((len(tris), 3), dtype=np.int64)
    mids = []
    for k, (a, b, c) in enumerate(tris):
        for e, (u, v) in enumerate(((a, b), (b, c), (c, a))):
            key = (min(u, v), max(u, v))
            if key not in edges:
                edges[key] = nxt
                mids.append(0.5 * (mesh.vertices[u] + mesh.vertices[v]))
                nxt += 1
            mid[k, e] = edges[key]
    bar0 = nxt
    verts = np.vstack([mesh.vertices, np.array(mids),
                       mesh.vertices[tris].mean(axis=1)])
    fine_tris = []
    for k, (a, b, c) in enumerate(tris):
        g = bar0 + k
        mab, mbc, mca = mid[k]
        fine_tris.extend([
            (a, mab, g), (a, g, mca),
            (b, mbc, g), (b, g, mab),
            (c, mca, g), (c, g, mbc),
        ])
    fine = TriMesh(verts, np.array(fine_tris, dtype=np.int64))
    return fine, np.arange(nv)
