"""Red-green refinement, residual error indicators and the adaptive loop.

Refinement follows the five-step procedure: remove green edges, red
refine marked triangles, close with the 2-neighbour rule, enforce
1-irregularity of refinement levels, and bisect the remaining hanging
nodes by green edges.  Green triangles remember their red parent and are
re-coarsened before any further refinement.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import TriMesh

__all__ = [
    "MarkSet",
    "IndicatorField",
    "refine_red_green",
    "compute_error_indicators",
    "adaptive_loop",
]


@dataclass
class MarkSet:
    """Set of triangle indices to refine, with the marking parameter."""

    marked: set
    theta: float = 0.5

    def __post_init__(self):
        self.marked = set(int(k) for k in self.marked)
        if not (0.0 < self.theta < 1.0):
            raise ValueError("theta must lie in (0,1)")


@dataclass
class IndicatorField:
    """Per-element residual indicators eta(tau) >= 0."""

    eta: np.ndarray
    total: float = field(init=False)

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        if np.any(self.eta < 0):
            raise ValueError("negative indicator")
        self.total = float(self.eta.sum())

    def mark(self, theta):
        """Strict maximum marking: eta > theta * eta_max."""
        cut = theta * self.eta.max() if len(self.eta) else 0.0
        return MarkSet(set(np.nonzero(self.eta > cut)[0].tolist()), theta)


def _remove_green(mesh, marked):
    """Undo green bisections; marks on green children move to the parent."""
    tris = []
    levels = []
    new_marks = set()
    restored = {}  # parent triple -> new index
    for k in range(mesh.n_triangles):
        gp = mesh.green_parent[k]
        if gp[0] < 0:
            idx = len(tris)
            tris.append(tuple(mesh.triangles[k]))
            levels.append(int(mesh.level[k]))
            if k in marked:
                new_marks.add(idx)
        else:
            key = tuple(gp)
            if key not in restored:
                restored[key] = len(tris)
                tris.append(key)
                levels.append(int(mesh.level[k]))
            if k in marked:
                new_marks.add(restored[key])
    out = TriMesh(mesh.vertices, np.array(tris, dtype=np.int64),
                  np.array(levels, dtype=np.int64))
    return out, new_marks


def _has_hanging(mesh):
    """True if some vertex sits at the midpoint of a triangle edge."""
    coords = {(round(x, 12), round(y, 12)) for x, y in mesh.vertices}
    V = mesh.vertices
    for a, b, c in mesh.triangles:
        for u, v in ((a, b), (b, c), (c, a)):
            mx = 0.5 * (V[u, 0] + V[v, 0])
            my = 0.5 * (V[u, 1] + V[v, 1])
            if (round(mx, 12), round(my, 12)) in coords:
                return True
    return False


def refine_red_green(mesh, marks):
    """One red-green refinement sweep of the marked triangles.

    A pass can leave hanging nodes on freshly created children when two
    adjacent triangles of different levels are both refined red; follow-up
    passes with no marks bisect those by green edges until the mesh is
    conforming again.
    """
    result = _refine_pass(mesh, marks)
    for _ in range(30):
        if not _has_hanging(result):
            return result
        result = _refine_pass(result, set())
    raise RuntimeError("refinement did not reach a conforming mesh")


def _refine_pass(mesh, marks):
    """One raw refine pass: coarsen greens, refine red, close, green."""
    if isinstance(marks, MarkSet):
        marked = marks.marked
    else:
        marked = set(int(k) for k in marks)
    if marked and (min(marked) < 0 or max(marked) >= mesh.n_triangles):
        raise ValueError("mark outside triangle index range")

    # step 1: coarsen green edges away
    work, red = _remove_green(mesh, marked)
    tris = work.triangles
    levels = work.level
    nt = len(tris)

    # a coarsened green parent may sit next to children of an earlier
    # refinement, so an edge midpoint may already exist as a vertex and
    # must be found and reused, never duplicated
    verts = [tuple(v) for v in work.vertices]
    coord_index = {(round(x, 12), round(y, 12)): i
                   for i, (x, y) in enumerate(verts)}
    midpoint = {}

    def find_mid(a, b):
        key = (min(a, b), max(a, b))
        if key in midpoint:
            return midpoint[key]
        pa, pb = verts[a], verts[b]
        probe = (round(0.5 * (pa[0] + pb[0]), 12),
                 round(0.5 * (pa[1] + pb[1]), 12))
        idx = coord_index.get(probe)
        if idx is not None:
            midpoint[key] = idx
        return idx

    def mid(a, b):
        idx = find_mid(a, b)
        if idx is None:
            key = (min(a, b), max(a, b))
            pa, pb = verts[a], verts[b]
            verts.append((0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])))
            idx = len(verts) - 1
            midpoint[key] = idx
            coord_index[(round(verts[idx][0], 12),
                         round(verts[idx][1], 12))] = idx
        return idx

    # steps 2-4: grow the red set to a fixed point.  Adjacency includes
    # half-edge neighbours across edges that already carry a hanging
    # node, and such pre-broken edges count towards the 2-neighbour
    # rule.  A red neighbour across a half edge forces red refinement,
    # since a green bisection there would leave the mesh nonconforming.
    em = work.edge_map()
    adj = [set() for _ in range(nt)]
    broken_base = np.zeros(nt, dtype=np.int64)
    half = [set() for _ in range(nt)]
    for k in range(nt):
        a, b, c = tris[k]
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            for t in em.get(key, ()):
                if t != k:
                    adj[k].add(t)
            m = find_mid(u, v)
            if m is not None:
                broken_base[k] += 1
                for su, sv in ((u, m), (m, v)):
                    skey = (min(su, sv), max(su, sv))
                    for t in em.get(skey, ()):
                        if t != k:
                            adj[k].add(t)
                            half[k].add(t)
                            adj[t].add(k)

    red = set(red)
    pending = True
    guard = 0
    while pending:
        guard += 1
        if guard > 10 * nt + 10:
            raise RuntimeError("refinement closure did not terminate")
        pending = False
        for k in range(nt):
            if k in red:
                continue
            broken = int(broken_base[k])
            force = False
            for t in adj[k]:
                if t in red:
                    if t in half[k]:
                        force = True
                    if levels[t] + 1 - levels[k] >= 2:
                        force = True
                    if t not in half[k]:
                        broken += 1
            if broken >= 2 or force:
                red.add(k)
                pending = True

    out_tris = []
    out_levels = []
    out_green = []

    for k in red:
        a, b, c = tris[k]
        mab, mbc, mca = mid(a, b), mid(b, c), mid(c, a)
        lev = levels[k] + 1
        for child in ((a, mab, mca), (mab, b, mbc), (mca, mbc, c),
                      (mab, mbc, mca)):
            out_tris.append(child)
            out_levels.append(lev)
            out_green.append((-1, -1, -1))

    # step 5: copy the rest, bisecting hanging nodes with green edges
    for k in range(nt):
        if k in red:
            continue
        a, b, c = tris[k]
        hangs = []
        for u, v in ((a, b), (b, c), (c, a)):
            m = find_mid(u, v)
            if m is not None:
                hangs.append((u, v, m))
        if len(hangs) == 0:
            out_tris.append((a, b, c))
            out_levels.append(levels[k])
            out_green.append((-1, -1, -1))
        elif len(hangs) == 1:
            u, v, m = hangs[0]
            w = ({a, b, c} - {u, v}).pop()
            for child in ((u, m, w), (m, v, w)):
                out_tris.append(child)
                out_levels.append(levels[k])
                out_green.append((a, b, c))
        else:
            raise AssertionError("triangle left with 2 hanging nodes "
                                 "after closure")

    # drop vertices no longer referenced by any triangle (left behind by
    # green coarsening, e.g. snapped boundary midpoints)
    out_tris = np.array(out_tris, dtype=np.int64)
    out_green = np.array(out_green, dtype=np.int64)
    used = np.zeros(len(verts), dtype=bool)
    used[out_tris.ravel()] = True
    used[out_green[out_green >= 0]] = True
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(int(used.sum()))
    out_green = np.where(out_green >= 0, remap[out_green], -1)
    result = TriMesh(np.array(verts)[used], remap[out_tris],
                     np.array(out_levels, dtype=np.int64), out_green)
    return result


def compute_error_indicators(mesh, u_h, f, s, gauss_order=4):
    """Residual indicators eta(tau)^2 = sum_i h_i^(2s) ||(r_h - rbar_h) phi_i||^2
    over the element's own vertices, with the patch-mean residual rbar_h.

    The pointwise residual r_h = f - (-Lap)^s u_h is evaluated at element
    quadrature points by direct integration of the defining singular
    integral (exact radial part on the element containing the point).
    """
    if not (0.0 < s < 1.0):
        raise ValueError("indicators defined for s in (0,1) only")
    from . import assembly

    u_full = assembly.expand_interior(mesh, u_h)
    pts, wts, elem_of = assembly.element_quadrature(mesh, gauss_order)
    fv = np.broadcast_to(np.asarray(f(pts), dtype=float), (len(pts),))
    r_h = fv - assembly.frac_lap_apply(mesh, u_full, s, pts, elem_of)

    interior = ~mesh.boundary_vertex()
    patches = mesh.vertex_patches()
    h_vert = np.zeros(mesh.n_vertices)
    harea = mesh.h()
    for j in range(mesh.n_vertices):
        if len(patches[j]):
            h_vert[j] = harea[patches[j]].mean()

    # hat-function values at the quadrature points, per element corner
    hat = assembly.hat_values(mesh, pts, elem_of)

    nv = mesh.n_vertices
    num = np.zeros(nv)
    den = np.zeros(nv)
    for q in range(len(pts)):
        k = elem_of[q]
        for c, j in enumerate(mesh.triangles[k]):
            num[j] += wts[q] * r_h[q] * hat[q, c]
            den[j] += wts[q] * hat[q, c]
    rbar = np.zeros(nv)
    mask = interior & (den > 0)
    rbar[mask] = num[mask] / den[mask]

    eta_sq = np.zeros(mesh.n_triangles)
    for q in range(len(pts)):
        k = elem_of[q]
        for c, j in enumerate(mesh.triangles[k]):
            eta_sq[k] += (h_vert[j] ** (2 * s) * wts[q]
                          * ((r_h[q] - rbar[j]) * hat[q, c]) ** 2)
    return IndicatorField(np.sqrt(eta_sq))


def adaptive_loop(config):
    """SOLVE - ESTIMATE - MARK - REFINE driver.

    Yields per level a (mesh, solution, indicators) triple and records
    condition numbers and iteration counts in config.trace (list of
    dicts).  Stops when the indicator total drops below config.epsilon
    or config.max_levels is reached.
    """
    from . import assembly, solve
    from .mesh import check_mesh_conditions

    mesh = config.initial_mesh()
    report = check_mesh_conditions(mesh, config.s)
    if report.c_0 <= 0:
        raise ValueError("initial mesh violates the (C3) margin")
    config.trace = []
    results = []
    for level in range(config.max_levels):
        sysm = assembly.build_system(mesh, config)
        rep_A = solve.pcg(sysm.A, sysm.load, None, config.tol)
        if not rep_A.converged:
            raise RuntimeError(f"CG failed to converge at level {level}")
        P = solve.PrecondOperator(sysm.D, sysm.B)
        rep_P = solve.pcg(sysm.A, sysm.load, P, config.tol)
        eta = compute_error_indicators(mesh, rep_P.solution, config.f,
                                       config.s)
        kappa_A = solve.condition_number(sysm.A, None)
        kappa_PA = solve.condition_number(sysm.A, P)
        config.trace.append({
            "level": level,
            "N": sysm.A.shape[0],
            "kappa_A": kappa_A,
            "kappa_PA": kappa_PA,
            "iters_A": rep_A.iterations,
            "iters_PA": rep_P.iterations,
            "eta_total": eta.total,
        })
        results.append((mesh, rep_P.solution, eta))
        if eta.total <= config.epsilon or level == config.max_levels - 1:
            break
        mesh = refine_red_green(mesh, eta.mark(config.theta))
        report = check_mesh_conditions(mesh, config.s)
        if report.c_0 <= 0:
            raise RuntimeError(f"(C3) margin lost at level {level + 1}")
    return results
