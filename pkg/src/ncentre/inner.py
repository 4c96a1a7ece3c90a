"""Inner solution arcs: constrained minimization of the Maupertuis functional.

Paths joining two sphere points through the centre region are discretized on
a uniform grid, closed up according to a fixed convention, and classified by
the parity of their winding numbers about each centre.  Minimizers of the
discretized Maupertuis functional inside a topological class reparametrize to
fixed-energy solution arcs; the unconstrained variant admits near-collision
passages and reports them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import flow, potential as pot
from .errors import (
    AmbiguousWinding,
    CollisionDetected,
    ConstraintBroken,
    ConstructionFailed,
    InvariantViolation,
    NotConverged,
)

DELTA_COLL_FACTOR = 1e-3   # separation threshold delta_coll = factor * R
COLL_GUARD = 1e-6          # clamp radius for unconstrained near-collision passes


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class DiscretePath:
    """Uniformly sampled planar path on [0, 1] with fixed endpoints."""

    points: np.ndarray
    fixed_start: bool = True
    fixed_end: bool = True

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("points must be an (n, 2) array")
        if self.n_pts < 64:
            raise ValueError("a discrete path needs at least 64 samples")

    @property
    def n_pts(self) -> int:
        return self.points.shape[0]

    @property
    def dt(self) -> float:
        return 1.0 / (self.n_pts - 1)

    def resampled(self, n_pts: int) -> "DiscretePath":
        """Arclength-uniform resampling of the polyline to ``n_pts`` samples."""
        return DiscretePath(_resample(self.points, n_pts))


def _resample(points: np.ndarray, n_pts: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return np.repeat(points[:1], n_pts, axis=0)
    target = np.linspace(0.0, s[-1], n_pts)
    xs = np.interp(target, s, points[:, 0])
    ys = np.interp(target, s, points[:, 1])
    return np.column_stack([xs, ys])


@dataclass(frozen=True)
class WindingVector:
    """Per-centre winding parities of a closed-up path."""

    parities: tuple

    def __post_init__(self):
        object.__setattr__(self, "parities", tuple(int(p) % 2 for p in self.parities))

    @property
    def admissible(self) -> bool:
        return len(set(self.parities)) > 1

    def complement(self) -> "WindingVector":
        return WindingVector(tuple(1 - p for p in self.parities))


@dataclass(frozen=True)
class Partition:
    """Two-sided split of the centres; centre 1 always sits on side ``False``."""

    side_of: tuple

    def __post_init__(self):
        side = tuple(bool(b) for b in self.side_of)
        if side and side[0]:
            side = tuple(not b for b in side)
        object.__setattr__(self, "side_of", side)
        if not (any(side) and not all(side)):
            raise ValueError("both sides of a partition must be non-empty")

    @property
    def n_centres(self) -> int:
        return len(self.side_of)

    @property
    def index(self) -> int:
        bits = 0
        for j, b in enumerate(self.side_of[1:]):
            bits |= int(b) << j
        return bits - 1

    @classmethod
    def from_index(cls, n_centres: int, index: int) -> "Partition":
        if not 0 <= index <= 2 ** (n_centres - 1) - 2:
            raise ValueError(f"partition index {index} out of range for N={n_centres}")
        bits = index + 1
        side = [False] + [bool((bits >> j) & 1) for j in range(n_centres - 1)]
        return cls(tuple(side))

    def windings(self):
        """Canonical pair (l, l_tilde): ``l`` encircles centre 1's group."""
        l = tuple(0 if b else 1 for b in self.side_of)
        lt = tuple(1 - p for p in l)
        return WindingVector(l), WindingVector(lt)


def partition_of(l: WindingVector) -> Partition:
    """The partition induced by an admissible winding vector (the map A)."""
    if not l.admissible:
        raise ValueError("winding vector is not admissible")
    side = tuple(p != l.parities[0] for p in l.parities)
    return Partition(side)


def partition_windings(p: Partition):
    """Spec-facing alias of ``Partition.windings``."""
    return p.windings()


def all_partitions(n_centres: int):
    return [Partition.from_index(n_centres, i) for i in range(2 ** (n_centres - 1) - 1)]


def admissible_windings(n_centres: int):
    out = []
    for bits in range(1, 2 ** n_centres - 1):
        out.append(WindingVector(tuple((bits >> j) & 1 for j in range(n_centres))))
    return out


@dataclass
class CollisionEvent:
    """A near-collision passage of an unconstrained minimizer."""

    t: float
    centre: int
    segment_dist: float
    node_dist: float
    radial_convex: bool


@dataclass
class InnerArc:
    """Converged inner minimizer with its reparametrized solution arc."""

    path: DiscretePath
    arc: flow.Trajectory
    T_int: float
    omega: float
    M_value: float
    L_value: float
    winding: WindingVector
    min_centre_dist: float
    collisions: list
    eom_residual: float
    grad_norm: float
    iters: int
    constraint: str

    def write_summary(self, fh):
        fh.write("quantity,value\n")
        fh.write("M_value,%.17g\n" % self.M_value)
        fh.write("L_value,%.17g\n" % self.L_value)
        fh.write("omega,%.17g\n" % self.omega)
        fh.write("T_int,%.17g\n" % self.T_int)
        fh.write("winding,%s\n" % "".join(str(p) for p in self.winding.parities))
        fh.write("min_centre_dist,%.17g\n" % self.min_centre_dist)
        fh.write("eom_residual,%.17g\n" % self.eom_residual)
        fh.write("collisions,%d\n" % len(self.collisions))
        for ev in self.collisions:
            fh.write("collision,t=%.17g centre=%d seg_dist=%.3g convex=%d\n"
                     % (ev.t, ev.centre, ev.segment_dist, ev.radial_convex))


# ---------------------------------------------------------------------------
# Winding numbers
# ---------------------------------------------------------------------------

def _arc_points(R, th_from, th_to, max_step=0.05):
    """Counter-clockwise arc samples on |y| = R from th_from up to th_to (> th_from)."""
    n = max(2, int(math.ceil((th_to - th_from) / max_step)) + 1)
    th = np.linspace(th_from, th_to, n)
    return np.column_stack([R * np.cos(th), R * np.sin(th)])


def close_path(points: np.ndarray, R: float, closure: str) -> np.ndarray:
    """Close a sphere-to-sphere path into a loop.

    ``closure='sphere'`` glues the counter-clockwise arc of ``|y| = R`` from
    the end angle back to the start angle (no arc when the two coincide);
    ``closure='chord'`` leaves the straight wrap-around segment as the chord.
    """
    if closure == "chord":
        return points
    th1 = math.atan2(points[0][1], points[0][0]) % (2.0 * math.pi)
    th2 = math.atan2(points[-1][1], points[-1][0]) % (2.0 * math.pi)
    if abs(th1 - th2) < 1e-12 or abs(abs(th1 - th2) - 2.0 * math.pi) < 1e-12:
        return points
    th_to = th1 if th1 > th2 else th1 + 2.0 * math.pi
    arc = _arc_points(R, th2, th_to)
    return np.vstack([points, arc[1:-1]])


def _loop_windings(loop: np.ndarray, centres: np.ndarray, coll_eps: float = pot.COLL_EPS) -> np.ndarray:
    """Integer winding numbers of the implicitly closed polyline about each centre.

    Signed angle increments are summed segment by segment; every straight
    segment subtends strictly less than pi from any off-segment point, so the
    sum is exact for polylines.  A segment passing within ``coll_eps`` of a
    centre makes the count ambiguous.
    """
    pts = np.vstack([loop, loop[:1]])
    out = np.empty(len(centres), dtype=int)
    for j, c in enumerate(centres):
        d = pts - c
        ang = np.arctan2(d[:, 1], d[:, 0])
        dang = np.diff(ang)
        dang = (dang + math.pi) % (2.0 * math.pi) - math.pi
        # distance from the centre to each segment
        a = d[:-1]
        b = d[1:]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        tpar = np.clip(-np.einsum("ij,ij->i", a, ab) / np.where(denom == 0.0, 1.0, denom), 0.0, 1.0)
        near = a + tpar[:, None] * ab
        dist = np.hypot(near[:, 0], near[:, 1])
        if float(np.min(dist)) < coll_eps:
            raise AmbiguousWinding(f"segment within {coll_eps} of centre {j}")
        total = float(np.sum(dang)) / (2.0 * math.pi)
        w = int(round(total))
        if abs(total - w) > 1e-6:
            raise AmbiguousWinding(f"non-integer winding {total} about centre {j}")
        out[j] = w
    return out


def _centres_xy(spec, eps):
    return np.array([eps * c.position for c in spec.centres])


def winding_numbers(path: DiscretePath, spec, eps, R, closure: str = "sphere") -> np.ndarray:
    loop = close_path(path.points, R, closure)
    return _loop_windings(loop, _centres_xy(spec, eps))


def winding_vector(path: DiscretePath, spec, eps, R) -> WindingVector:
    """Winding parities of the path closed by the sphere-arc convention."""
    return WindingVector(tuple(int(w) % 2 for w in winding_numbers(path, spec, eps, R)))


# ---------------------------------------------------------------------------
# Initial paths
# ---------------------------------------------------------------------------

def _ray_crossing_parity(pts: np.ndarray, centre) -> int:
    """Parity of crossings of the downward vertical ray below ``centre``."""
    cx, cy = centre
    x = pts[:, 0] - cx
    y = pts[:, 1]
    count = 0
    for i in range(len(pts) - 1):
        x0, x1 = x[i], x[i + 1]
        if (x0 < 0.0) == (x1 < 0.0):
            continue
        t = x0 / (x0 - x1)
        y_cross = y[i] + t * (y[i + 1] - y[i])
        if y_cross < cy:
            count += 1
    return count % 2


def _closure_arc(p_start, p_end, R):
    """Sampled counter-clockwise closing arc (or empty for equal angles)."""
    th1 = math.atan2(p_start[1], p_start[0]) % (2.0 * math.pi)
    th2 = math.atan2(p_end[1], p_end[0]) % (2.0 * math.pi)
    if abs(th1 - th2) < 1e-12 or abs(abs(th1 - th2) - 2.0 * math.pi) < 1e-12:
        return np.empty((0, 2))
    th_to = th1 if th1 > th2 else th1 + 2.0 * math.pi
    return _arc_points(R, th2, th_to)


def _cluster_route(start, goal, centres, clearance, r_box, target_parity):
    """Shortest 8-connected grid route with prescribed cut-crossing parities.

    The search runs on a square grid covering the centre cluster; the state
    is (cell, parity vector of crossings of the vertical cuts hanging from
    the centres), so the returned polyline realizes the requested winding
    parities by construction.
    """
    import heapq

    uniq = []
    for c in centres:
        if not any(np.hypot(*(c - u)) < 1e-14 for u in uniq):
            uniq.append(c)
    uniq = np.array(uniq) if uniq else np.zeros((0, 2))
    m = 56
    xs = np.linspace(-r_box, r_box, m) + 0.217 * (2 * r_box / (m - 1))
    ys = np.linspace(-r_box, r_box, m)
    blocked = np.zeros((m, m), dtype=bool)
    for c in centres:
        dx = xs[:, None] - c[0]
        dy = ys[None, :] - c[1]
        blocked |= dx * dx + dy * dy < clearance * clearance

    def cell_of(p):
        i = int(np.clip(round((p[0] - xs[0]) / (xs[1] - xs[0])), 0, m - 1))
        j = int(np.clip(round((p[1] - ys[0]) / (ys[1] - ys[0])), 0, m - 1))
        best, bestd = None, math.inf
        for di in range(-3, 4):
            for dj in range(-3, 4):
                a, b = i + di, j + dj
                if 0 <= a < m and 0 <= b < m and not blocked[a, b]:
                    d = (xs[a] - p[0]) ** 2 + (ys[b] - p[1]) ** 2
                    if d < bestd:
                        best, bestd = (a, b), d
        return best

    def seg_parity(a, b):
        bits = 0
        pa = np.array([xs[a[0]], ys[a[1]]])
        pb = np.array([xs[b[0]], ys[b[1]]])
        for k, c in enumerate(uniq):
            if _ray_crossing_parity(np.vstack([pa, pb]), c):
                bits ^= 1 << k
        return bits

    start_cell = cell_of(start)
    goal_cell = cell_of(goal)
    if start_cell is None or goal_cell is None:
        return None
    target_bits = 0
    for k in range(len(uniq)):
        if target_parity[k]:
            target_bits |= 1 << k

    moves = [(di, dj, math.hypot(di, dj)) for di in (-1, 0, 1) for dj in (-1, 0, 1) if di or dj]
    dist = {}
    prev = {}
    src = (start_cell, 0)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, (cell, bits) = heapq.heappop(heap)
        if d > dist.get((cell, bits), math.inf):
            continue
        if cell == goal_cell and bits == target_bits:
            route = [cell]
            key = (cell, bits)
            while key in prev:
                key = prev[key]
                route.append(key[0])
            route.reverse()
            return np.array([[xs[i], ys[j]] for i, j in route])
        for di, dj, w in moves:
            a, b = cell[0] + di, cell[1] + dj
            if not (0 <= a < m and 0 <= b < m) or blocked[a, b]:
                continue
            nbits = bits ^ seg_parity(cell, (a, b))
            key = ((a, b), nbits)
            nd = d + w
            if nd < dist.get(key, math.inf):
                dist[key] = nd
                prev[key] = (cell, bits)
                heapq.heappush(heap, (nd, key))
    return None


def initial_path(p1, p2, l: WindingVector, spec, eps, R, n_pts: int = 256) -> DiscretePath:
    """Deterministic polyline from ``p1`` to ``p2`` realizing the class ``l``.

    Radial stubs connect the endpoints to a small box around the centre
    cluster, inside which the shortest grid route with the required
    cut-crossing parities is found; the result is verified against the
    winding convention and retried once with a perturbed grid.
    """
    if not l.admissible:
        raise ValueError("winding vector is not admissible")
    return _initial_path_targets(
        p1, p2, np.array(l.parities, dtype=int), "sphere", spec, eps, R, n_pts
    )


def _initial_path_targets(p1, p2, targets, closure, spec, eps, R, n_pts):
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    centres = _centres_xy(spec, eps)
    spread = float(np.max(np.hypot(centres[:, 0], centres[:, 1]))) if len(centres) else 0.0
    pair_dists = [
        float(np.hypot(*(centres[i] - centres[j])))
        for i in range(len(centres))
        for j in range(i + 1, len(centres))
        if float(np.hypot(*(centres[i] - centres[j]))) > 1e-14
    ]
    clearance = min(pair_dists) / 3.0 if pair_dists else 0.15 * R
    r_box = min(0.75 * R, max(2.0 * spread + 4.0 * clearance, 0.3 * R))

    # uniquify centres for the routing cuts; all members of a coincident
    # group must share their target parity
    uniq_idx = []
    group_of = []
    for j, c in enumerate(centres):
        for k, u in enumerate(uniq_idx):
            if float(np.hypot(*(c - centres[u]))) < 1e-14:
                group_of.append(k)
                break
        else:
            group_of.append(len(uniq_idx))
            uniq_idx.append(j)
    uniq_targets = np.zeros(len(uniq_idx), dtype=int)
    for j, k in enumerate(group_of):
        uniq_targets[k] = targets[j] % 2
    for j, k in enumerate(group_of):
        if uniq_targets[k] != targets[j] % 2:
            raise ConstructionFailed("coincident centres with conflicting winding targets")

    th1 = math.atan2(p1[1], p1[0])
    th2 = math.atan2(p2[1], p2[0])
    gate1 = r_box * np.array([math.cos(th1), math.sin(th1)])
    gate2 = r_box * np.array([math.cos(th2), math.sin(th2)])
    stub1 = np.vstack([p1, gate1])
    stub2 = np.vstack([gate2, p2])

    if closure == "sphere":
        arc = _closure_arc(p1, p2, R)
    else:
        arc = np.vstack([p2, p1])
    route_parity = np.zeros(len(uniq_idx), dtype=int)
    for k, u in enumerate(uniq_idx):
        bit = uniq_targets[k]
        if len(arc) > 1:
            bit ^= _ray_crossing_parity(arc, centres[u])
        bit ^= _ray_crossing_parity(stub1, centres[u])
        bit ^= _ray_crossing_parity(stub2, centres[u])
        route_parity[k] = bit

    uniq_centres = centres[uniq_idx]
    route = _cluster_route(gate1, gate2, uniq_centres, clearance, r_box, route_parity)
    if route is not None:
        raw = np.vstack([stub1, route, stub2])
        pts = _resample(raw, n_pts)
        pts[0] = p1
        pts[-1] = p2
        path = DiscretePath(pts)
        try:
            got = winding_numbers(path, spec, eps, R, closure)
            if np.all(got % 2 == targets % 2):
                return path
        except AmbiguousWinding:
            pass
    raise ConstructionFailed(f"could not realize windings {targets} from {p1} to {p2}")


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------

def maupertuis_value_grad(path: DiscretePath, spec, eps, clamp_guard: float | None = None):
    """Value and exact gradient of the discretized Maupertuis functional.

    Kinetic factor by forward differences, potential factor by the trapezoid
    rule; the gradient is the exact derivative of the discrete product (zero
    at the fixed endpoints).  With ``clamp_guard`` set, per-centre distances
    below the guard are clamped (flat potential continuation) instead of
    raising ``CollisionPoint``.
    """
    pts = path.points
    n = path.n_pts
    dt = path.dt
    diffs = np.diff(pts, axis=0)
    kin = 0.5 * float(np.sum(diffs * diffs)) / dt
    vals, grads, _ = pot.eval_rescaled_path(spec, eps, pts, clamp_guard)
    f = vals - 1.0
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    pot_term = dt * float(np.dot(w, f))
    M = kin * pot_term

    dK = np.zeros_like(pts)
    dK[1:-1] = (2.0 * pts[1:-1] - pts[:-2] - pts[2:]) / dt
    dP = dt * w[:, None] * grads
    grad = dK * pot_term + kin * dP
    grad[0] = 0.0
    grad[-1] = 0.0
    return M, grad


def _kin_pot(path: DiscretePath, spec, eps, clamp_guard=None):
    pts = path.points
    dt = path.dt
    diffs = np.diff(pts, axis=0)
    kin = 0.5 * float(np.sum(diffs * diffs)) / dt
    vals, _, _ = pot.eval_rescaled_path(spec, eps, pts, clamp_guard)
    f = vals - 1.0
    w = np.ones(path.n_pts)
    w[0] = w[-1] = 0.5
    return kin, dt * float(np.dot(w, f))


def jacobi_length(path: DiscretePath, spec, eps, h: float = 1.0) -> float:
    """Jacobi length by segment quadrature.

    Each segment contributes ``|du| * sqrt(mean of (V - h) at its ends)``;
    this pairing with the kinetic/potential quadratures makes the
    Cauchy-Schwarz identity ``L = sqrt(2 M)`` hold at discrete minimizers up
    to a quadratically small defect.
    """
    pts = path.points
    vals, _, _ = pot.eval_rescaled_path(spec, eps, pts, COLL_GUARD)
    f = vals - h
    fbar = 0.5 * (f[:-1] + f[1:])
    if np.any(fbar < 0.0):
        raise ValueError("path leaves the Hill region of the shell")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return float(np.sum(seg * np.sqrt(fbar)))


# ---------------------------------------------------------------------------
# Descent
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InnerOpts:
    n_pts: int = 256
    gtol: float = 1e-8
    eom_target: float = 3e-6   # ties the gradient tolerance to the discrete EOM residual
    max_iters: int = 6000
    memory: int = 10
    armijo: float = 1e-4
    max_halvings: int = 60
    restarts: int = 0


DEFAULT_INNER = InnerOpts()


def _lbfgs_direction(g, s_list, y_list, apply_h0inv):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_list), reversed(y_list)):
        rho = 1.0 / float(np.dot(y, s))
        a = rho * float(np.dot(s, q))
        alphas.append((a, rho, s, y))
        q -= a * y
    q = apply_h0inv(q)
    for a, rho, s, y in reversed(alphas):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return -q


def _make_preconditioner(pts, spec, eps, kin, pot_term, dt):
    """Banded Cholesky of the dominant Hessian block of the discrete functional.

    The kinetic factor contributes ``(P/dt) * tridiag(-1, 2, -1)`` per
    coordinate; the potential factor a diagonal curvature estimate
    ``K dt sum_j a_j (a_j + 1) V_j / d_j^2``.  Both act component-wise, so a
    single scalar tridiagonal factorization serves the x and y columns.
    """
    from scipy.linalg import cholesky_banded, cho_solve_banded

    m = len(pts) - 2
    diag_curv = np.zeros(m)
    for cx, cy, a, w, ang in spec._terms_rescaled(eps):
        dx = pts[1:-1, 0] - cx
        dy = pts[1:-1, 1] - cy
        r = np.maximum(np.hypot(dx, dy), COLL_GUARD)
        th = np.arctan2(dy, dx)
        diag_curv += a * (a + 1.0) * w * ang.value(th) * r ** (-a - 2.0)
    scale = pot_term / dt
    ab = np.zeros((2, m))
    ab[0, 1:] = -scale
    ab[1, :] = 2.0 * scale + kin * dt * diag_curv
    cb = cholesky_banded(ab)

    def apply(vec):
        v = vec.reshape(-1, 2)
        out = np.empty_like(v)
        out[:, 0] = cho_solve_banded((cb, False), v[:, 0])
        out[:, 1] = cho_solve_banded((cb, False), v[:, 1])
        return out.ravel()

    return apply


def _descend(path: DiscretePath, spec, eps, R, opts: InnerOpts, keep_class, clamp_guard,
             pinch_threshold: float | None = None):
    """Projected, preconditioned L-BFGS with Armijo backtracking.

    The quasi-Newton metric is seeded with the kinetic-Laplacian plus
    diagonal-curvature preconditioner, which removes the grid-induced
    stiffness of the discretized functional.  ``keep_class`` (or ``None``
    for the unconstrained problem) is evaluated on every candidate; steps
    that leave the class are halved.  Points beyond the sphere are pulled
    back radially, which resets the quasi-Newton memory.  With
    ``pinch_threshold`` set, an accepted iterate whose polyline passes that
    close to a centre aborts with ``CollisionDetected``: the class minimizer
    is collapsing onto a collision and cannot satisfy the constrained-mode
    contract.
    """
    pts = path.points.copy()
    centres = _centres_xy(spec, eps)

    def fg(p):
        M, grad = maupertuis_value_grad(DiscretePath(p), spec, eps, clamp_guard)
        return M, grad[1:-1].ravel()

    def project(p):
        r = np.hypot(p[1:-1, 0], p[1:-1, 1])
        over = r > R
        if np.any(over):
            p[1:-1][over] *= (R / r[over])[:, None]
        return bool(np.any(over))

    project(pts)
    f, g = fg(pts)
    s_hist, y_hist = [], []
    iters = 0
    stalled = False
    while iters < opts.max_iters:
        gnorm = float(np.max(np.hypot(g[0::2], g[1::2]))) if len(g) else 0.0
        kin, pot_term = _kin_pot(DiscretePath(pts), spec, eps, clamp_guard)
        # |grad| = dt K |omega^2 u'' - grad V| node-wise: meeting the EOM
        # residual target requires the resolution-scaled gradient tolerance
        gtol_eff = min(opts.gtol, opts.eom_target * path.dt * max(kin, 1e-12))
        if gnorm <= gtol_eff:
            break
        h0inv = _make_preconditioner(pts, spec, eps, kin, pot_term, path.dt)
        d = _lbfgs_direction(g, s_hist, y_hist, h0inv)
        descent = float(np.dot(d, g))
        if descent >= 0.0:
            d = -h0inv(g)
            descent = float(np.dot(d, g))
            s_hist, y_hist = [], []
        step = 1.0
        accepted = False
        broke_class = 0
        slack = 5e-16 * max(abs(f), 1.0)  # roundoff allowance for terminal polish
        for _ in range(opts.max_halvings):
            cand = pts.copy()
            cand[1:-1] += step * d.reshape(-1, 2)
            projected = project(cand)
            if keep_class is not None and not keep_class(cand):
                broke_class += 1
                step *= 0.5
                continue
            f_new, g_new = fg(cand)
            gn_new = float(np.max(np.hypot(g_new[0::2], g_new[1::2]))) if len(g_new) else 0.0
            if f_new <= f + opts.armijo * step * descent or (
                f_new <= f + slack and gn_new < 0.9 * gnorm
            ):
                s_vec = (cand[1:-1] - pts[1:-1]).ravel()
                y_vec = g_new - g
                pts, f, g = cand, f_new, g_new
                curv = float(np.dot(s_vec, y_vec))
                if projected:
                    s_hist, y_hist = [], []
                elif curv > 1e-10 * float(np.linalg.norm(s_vec)) * float(np.linalg.norm(y_vec)):
                    s_hist.append(s_vec)
                    y_hist.append(y_vec)
                    if len(s_hist) > opts.memory:
                        s_hist.pop(0)
                        y_hist.pop(0)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if broke_class >= opts.max_halvings:
                raise ConstraintBroken("could not keep the topological class along the descent")
            stalled = True
            break  # line search exhausted at numerical floor
        if pinch_threshold is not None:
            seg_min = min(d for d, _, _ in _segment_min_dists(pts, centres))
            if seg_min < pinch_threshold:
                raise CollisionDetected(
                    f"descent collapsed to {seg_min:.3g} of a centre: "
                    "the class minimizer is collisional on this instance"
                )
        iters += 1
    gnorm = float(np.max(np.hypot(g[0::2], g[1::2]))) if len(g) else 0.0
    kin, _ = _kin_pot(DiscretePath(pts), spec, eps, clamp_guard)
    gtol_eff = min(opts.gtol, opts.eom_target * path.dt * max(kin, 1e-12))
    return DiscretePath(pts), f, gnorm, iters, stalled, gtol_eff


# ---------------------------------------------------------------------------
# Constraints and the main operation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindingConstraint:
    l: WindingVector


@dataclass(frozen=True)
class PartitionConstraint:
    partition: Partition


@dataclass(frozen=True)
class PartitionComponentConstraint:
    partition: Partition
    component: WindingVector


@dataclass(frozen=True)
class FreeConstraint:
    start: WindingVector | None = None


@dataclass(frozen=True)
class TwoCentreConstraint:
    centre_index: int  # 0-based


def _segment_min_dists(pts: np.ndarray, centres: np.ndarray):
    """Per-centre minimum distance from the polyline, and its parameter location."""
    out = []
    for c in centres:
        a = pts[:-1] - c
        ab = np.diff(pts, axis=0)
        denom = np.einsum("ij,ij->i", ab, ab)
        t = np.clip(-np.einsum("ij,ij->i", a, ab) / np.where(denom == 0.0, 1.0, denom), 0.0, 1.0)
        near = a + t[:, None] * ab
        dist = np.hypot(near[:, 0], near[:, 1])
        i = int(np.argmin(dist))
        out.append((float(dist[i]), i, float(t[i])))
    return out


def _finish_arc(path, spec, eps, R, constraint_name, winding, grad_norm, iters,
                free_mode: bool, enforce: bool = True, eom_limit: float = 1e-5) -> InnerArc:
    pts = path.points
    n = path.n_pts
    dt = path.dt
    kin, pot_term = _kin_pot(path, spec, eps, COLL_GUARD if free_mode else None)
    if pot_term <= 0.0 or kin <= 0.0:
        raise NotConverged("degenerate minimizer (non-positive Maupertuis factors)")
    M = kin * pot_term
    omega = math.sqrt(pot_term / kin)
    T_int = 1.0 / omega
    L = jacobi_length(path, spec, eps)

    centres = _centres_xy(spec, eps)
    delta_coll = DELTA_COLL_FACTOR * R
    seg_dists = _segment_min_dists(pts, centres)
    min_dist = min(d for d, _, _ in seg_dists)

    collisions = []
    for j, (d, i, tpar) in enumerate(seg_dists):
        if d < delta_coll:
            s_loc = (i + tpar) * dt
            node_d = float(np.min(np.hypot(pts[:, 0] - centres[j][0], pts[:, 1] - centres[j][1])))
            inode = int(np.argmin(np.hypot(pts[:, 0] - centres[j][0], pts[:, 1] - centres[j][1])))
            radial = np.hypot(pts[:, 0] - centres[j][0], pts[:, 1] - centres[j][1]) ** 2
            convex = bool(
                1 <= inode <= n - 2
                and radial[inode - 1] - 2 * radial[inode] + radial[inode + 1] > 0.0
            )
            collisions.append(CollisionEvent(s_loc / omega, j, d, node_d, convex))
    if enforce and not free_mode and collisions:
        raise CollisionDetected(
            f"constrained minimizer within {delta_coll:.3g} of centres "
            + ",".join(str(ev.centre) for ev in collisions)
        )

    interior_r = np.hypot(pts[1:-1, 0], pts[1:-1, 1])
    if enforce and len(interior_r) and float(np.max(interior_r)) >= R - 1e-9:
        if not free_mode:
            raise InvariantViolation("minimizer touches the working sphere in its interior")

    # reparametrized solution arc x(t) = u(omega t)
    vals, grads, _ = pot.eval_rescaled_path(spec, eps, pts, COLL_GUARD)
    udot = _fourth_order_derivative(pts, dt)
    vs = omega * udot
    # endpoint velocities live on the energy shell exactly
    for idx in (0, -1):
        speed = math.sqrt(max(2.0 * (vals[idx] - 1.0), 0.0))
        norm = float(np.hypot(*vs[idx]))
        if norm > 0.0:
            vs[idx] *= speed / norm
    ts = np.arange(n) * dt / omega
    residuals = 0.5 * np.sum(vs * vs, axis=1) - vals + 1.0
    arc = flow.Trajectory(
        t=ts, x=pts.copy(), v=vs, energy_level=-1.0,
        residuals=residuals, max_energy_drift=float(np.max(np.abs(residuals))),
    )

    d2 = (pts[2:] - 2.0 * pts[1:-1] + pts[:-2]) / dt ** 2
    eom = float(np.max(np.linalg.norm(omega ** 2 * d2 - grads[1:-1], axis=1))) if n > 2 else 0.0
    if enforce and not free_mode and eom >= eom_limit:
        raise NotConverged(f"equation-of-motion residual {eom:.3g} above {eom_limit:.3g}")

    return InnerArc(
        path=path, arc=arc, T_int=T_int, omega=omega, M_value=M, L_value=L,
        winding=winding, min_centre_dist=min_dist, collisions=collisions,
        eom_residual=eom, grad_norm=grad_norm, iters=iters, constraint=constraint_name,
    )


def _fourth_order_derivative(pts, dt):
    n = len(pts)
    d = np.empty_like(pts)
    if n >= 5:
        d[2:-2] = (pts[:-4] - 8 * pts[1:-3] + 8 * pts[3:-1] - pts[4:]) / (12 * dt)
        d[0] = (-25 * pts[0] + 48 * pts[1] - 36 * pts[2] + 16 * pts[3] - 3 * pts[4]) / (12 * dt)
        d[1] = (-3 * pts[0] - 10 * pts[1] + 18 * pts[2] - 6 * pts[3] + pts[4]) / (12 * dt)
        d[-1] = (25 * pts[-1] - 48 * pts[-2] + 36 * pts[-3] - 16 * pts[-4] + 3 * pts[-5]) / (12 * dt)
        d[-2] = (3 * pts[-1] + 10 * pts[-2] - 18 * pts[-3] + 6 * pts[-4] - pts[-5]) / (12 * dt)
    else:
        d[:-1] = np.diff(pts, axis=0) / dt
        d[-1] = d[-2]
    return d


def minimize_inner(p1, p2, constraint, spec, eps, R, opts: InnerOpts = DEFAULT_INNER,
                   warm_path: DiscretePath | None = None):
    """Inner arc(s) between two sphere points under a topological constraint.

    ``constraint`` selects the mode: a fixed winding class, both components
    of a partition (returns a pair), the unconstrained collisional problem,
    or the two-centre homotopy class.  The descent is the projected
    quasi-Newton iteration on the discretized Maupertuis functional; accepted
    iterates keep their class in the constrained modes.
    """
    if isinstance(constraint, PartitionConstraint):
        l, lt = constraint.partition.windings()
        a1 = minimize_inner(p1, p2, WindingConstraint(l), spec, eps, R, opts)
        a2 = minimize_inner(p1, p2, WindingConstraint(lt), spec, eps, R, opts)
        return a1, a2

    if isinstance(constraint, FreeConstraint):
        # minimization over the union of the admissible classes: iterates may
        # switch class by sweeping across a centre (the collisional pass),
        # but may not degenerate into an inadmissible class
        def keep_admissible(ptsarr):
            try:
                got = _loop_windings(close_path(ptsarr, R, "sphere"), _centres_xy(spec, eps))
            except AmbiguousWinding:
                return False
            return len(set(int(x) % 2 for x in got)) > 1

        starts = [constraint.start] if constraint.start is not None else admissible_windings(spec.n_centres)
        best = None
        for l0 in starts:
            path0 = warm_path or initial_path(p1, p2, l0, spec, eps, R, opts.n_pts)
            path, M, gnorm, iters, stalled, _gt = _descend(path0, spec, eps, R, opts, keep_admissible, COLL_GUARD)
            if best is None or M < best[1]:
                try:
                    w = winding_vector(path, spec, eps, R)
                except AmbiguousWinding:
                    w = WindingVector((0,) * spec.n_centres)
                best = (path, M, gnorm, iters, w)
            if warm_path is not None:
                break
        path, M, gnorm, iters, w = best
        return _finish_arc(path, spec, eps, R, "free", w, gnorm, iters, free_mode=True)

    if isinstance(constraint, WindingConstraint):
        target = np.array(constraint.l.parities, dtype=int)

        def keep(ptsarr):
            try:
                got = _loop_windings(close_path(ptsarr, R, "sphere"), _centres_xy(spec, eps))
            except AmbiguousWinding:
                return False
            return bool(np.all(got % 2 == target))

        path0 = warm_path or initial_path(p1, p2, constraint.l, spec, eps, R, opts.n_pts)
        path, M, gnorm, iters, _stalled, gtol_eff = _descend(path0, spec, eps, R, opts, keep, None,
                                                    pinch_threshold=DELTA_COLL_FACTOR * R)
        if gnorm > gtol_eff:
            raise NotConverged(f"gradient norm {gnorm:.3g} above gtol after {iters} iterations")
        w = winding_vector(path, spec, eps, R)
        if tuple(w.parities) != tuple(constraint.l.parities):
            raise ConstraintBroken("converged path left its winding class")
        return _finish_arc(path, spec, eps, R, f"winding {constraint.l.parities}", w, gnorm, iters,
                           free_mode=False, eom_limit=max(1e-5, 3.0 * opts.eom_target))

    if isinstance(constraint, PartitionComponentConstraint):
        part = constraint.partition

        def keep(ptsarr):
            try:
                got = _loop_windings(close_path(ptsarr, R, "sphere"), _centres_xy(spec, eps))
            except AmbiguousWinding:
                return False
            wv = WindingVector(tuple(int(x) % 2 for x in got))
            return wv.admissible and partition_of(wv) == part

        path0 = warm_path or initial_path(p1, p2, constraint.component, spec, eps, R, opts.n_pts)
        path, M, gnorm, iters, _stalled, gtol_eff = _descend(path0, spec, eps, R, opts, keep, None,
                                                    pinch_threshold=DELTA_COLL_FACTOR * R)
        if gnorm > gtol_eff:
            raise NotConverged(f"gradient norm {gnorm:.3g} above gtol after {iters} iterations")
        w = winding_vector(path, spec, eps, R)
        return _finish_arc(path, spec, eps, R, f"partition {part.index}", w, gnorm, iters,
                           free_mode=False, eom_limit=max(1e-5, 3.0 * opts.eom_target))

    if isinstance(constraint, TwoCentreConstraint):
        if spec.n_centres != 2:
            raise ValueError("the two-centre homotopy constraint needs N = 2")
        i = constraint.centre_index
        target = np.array([1 if j == i else 0 for j in range(2)], dtype=int)

        def keep(ptsarr):
            try:
                got = _loop_windings(close_path(ptsarr, R, "chord"), _centres_xy(spec, eps))
            except AmbiguousWinding:
                return False
            return bool(np.all(np.abs(got) == target))

        path0 = warm_path
        if path0 is None:
            path0 = _initial_path_targets(p1, p2, target, "chord", spec, eps, R, opts.n_pts)
        path, M, gnorm, iters, _stalled, gtol_eff = _descend(path0, spec, eps, R, opts, keep, None,
                                                    pinch_threshold=DELTA_COLL_FACTOR * R)
        if gnorm > gtol_eff:
            raise NotConverged(f"gradient norm {gnorm:.3g} above gtol after {iters} iterations")
        w = winding_vector(path, spec, eps, R)
        return _finish_arc(path, spec, eps, R, f"around centre {i + 1}", w, gnorm, iters,
                           free_mode=False, eom_limit=max(1e-5, 3.0 * opts.eom_target))

    raise TypeError(f"unknown constraint {constraint!r}")


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

@dataclass
class ActionReport:
    T_grid: np.ndarray
    values: np.ndarray
    argmin: int
    T_star: float
    value_at_star: float
    two_sqrt_M: float
    ok: bool


def action_relation_check(arc: InnerArc, spec, eps, h: float = 1.0) -> ActionReport:
    """Scan of the fixed-time action A_T + T h over a log grid of periods.

    At a converged minimizer the scan attains its minimum at ``T = 1/omega``
    (within one grid step) with value ``2 sqrt(M)``.
    """
    kin, pot_term = _kin_pot(arc.path, spec, eps, COLL_GUARD)
    T_star = 1.0 / arc.omega
    grid = T_star * np.exp(np.linspace(-0.5, 0.5, 21))
    values = kin / grid + grid * pot_term
    argmin = int(np.argmin(values))
    centre_idx = 10
    v_star = kin / T_star + T_star * pot_term
    two_sqrt = 2.0 * math.sqrt(arc.M_value)
    ok = abs(argmin - centre_idx) <= 1 and abs(v_star - two_sqrt) <= 1e-4 * two_sqrt
    return ActionReport(grid, values, argmin, T_star, float(v_star), two_sqrt, ok)


def self_intersection_check(path: DiscretePath):
    """Proper crossings between non-adjacent segments (deduplicated points)."""
    pts = path.points
    n = len(pts) - 1
    crossings = []
    a = pts[:-1]
    b = pts[1:]
    for i in range(n - 2):
        js = np.arange(i + 2, n)
        if i == 0:
            js = js[js != n - 1] if np.allclose(pts[0], pts[-1]) else js
        if not len(js):
            continue
        c = a[js]
        d = b[js]
        r = b[i] - a[i]
        s = d - c
        denom = r[0] * s[:, 1] - r[1] * s[:, 0]
        qp = c - a[i]
        t_num = qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]
        u_num = qp[:, 0] * r[1] - qp[:, 1] * r[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(denom != 0.0, t_num / denom, np.nan)
            u = np.where(denom != 0.0, u_num / denom, np.nan)
        hit = (denom != 0.0) & (t > 0.0) & (t < 1.0) & (u > 0.0) & (u < 1.0)
        for k in np.nonzero(hit)[0]:
            point = a[i] + t[k] * r
            if not any(np.hypot(point[0] - p[0], point[1] - p[1]) < 1e-12 for _, _, p in crossings):
                crossings.append((i, int(js[k]), point))
    return crossings
