"""Boxes, lattices, Delone arrangements and the near-neighbour maps used by the
unique-continuation argument.

Coordinates are centred: ``Lambda_L(x) = [x - L/2, x + L/2]^d``.  Unit cells and
``M``-cells are half-open, ``[k - M/2, k + M/2)``, so every point of a box belongs
to exactly one cell.
"""

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ._validation import check_bc, check_dim, check_odd_side, check_points, check_positive
from .exceptions import DeloneInfeasible, NotDelone


def ceil_sqrt(d):
    """Smallest integer >= sqrt(d), computed without floating point."""
    c = math.isqrt(d)
    return c if c * c == d else c + 1


@dataclass(frozen=True)
class BoxSpec:
    """Closed box ``[center - L/2, center + L/2]^d`` with a boundary condition tag."""

    d: int
    L: float
    center: tuple = None
    bc: str = "periodic"

    def __post_init__(self):
        d = check_dim(self.d)
        check_positive(float(self.L), "L")
        center = (0.0,) * d if self.center is None else tuple(float(c) for c in self.center)
        if len(center) != d:
            raise ValueError(f"center has length {len(center)}, expected {d}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "bc", check_bc(self.bc))

    @property
    def lower(self):
        return np.asarray(self.center) - self.L / 2

    @property
    def upper(self):
        return np.asarray(self.center) + self.L / 2

    @property
    def volume(self):
        return float(self.L) ** self.d

    def contains(self, points, closed=True):
        pts = check_points(points, self.d)
        lo, hi = self.lower, self.upper
        if closed:
            return np.all((pts >= lo) & (pts <= hi), axis=1)
        return np.all((pts >= lo) & (pts < hi), axis=1)


def lattice_sites(box, M=1):
    """Centres of the ``M``-cells decomposing ``box``, in lexicographic order.

    ``box.L / M`` must be an odd integer; the returned array has ``(L/M)^d`` rows.
    Integer-valued site coordinates are returned with an integer dtype.
    """
    n = check_odd_side(box.L, M)
    half = (n - 1) // 2
    offsets = np.arange(-half, half + 1)
    grid = np.array(list(itertools.product(offsets, repeat=box.d)), dtype=float).reshape(-1, box.d)
    sites = np.asarray(box.center) + M * grid
    rounded = np.rint(sites)
    if np.allclose(sites, rounded, atol=1e-12, rtol=0):
        return rounded.astype(int)
    return sites


def cell_of(points, M=1, center=None):
    """Index of the half-open ``M``-cell ``[k - M/2, k + M/2)`` containing each point."""
    pts = check_points(points)
    c = np.zeros(pts.shape[1]) if center is None else np.asarray(center, dtype=float)
    j = np.floor((pts - c) / M + 0.5)
    sites = c + M * j
    rounded = np.rint(sites)
    if np.allclose(sites, rounded, atol=1e-12, rtol=0):
        return rounded.astype(int)
    return sites


@dataclass(frozen=True)
class DeloneArrangement:
    """A finite piece of a Delone set split into one point per ``M``-cell
    (``gamma1``) and the remaining points (``gamma2``).

    ``delta`` is the radius of the balls ``B(z_j, delta)`` attached to the
    ``gamma1`` points.
    """

    d: int
    M_tilde: float
    M: int
    delta: float
    gamma1_index: np.ndarray
    gamma1_points: np.ndarray
    gamma2_points: np.ndarray = field(default=None)

    def __post_init__(self):
        d = check_dim(self.d)
        idx = np.asarray(self.gamma1_index).reshape(-1, d)
        pts = np.asarray(self.gamma1_points, dtype=float).reshape(-1, d)
        g2 = np.zeros((0, d)) if self.gamma2_points is None else np.asarray(self.gamma2_points, dtype=float).reshape(-1, d)
        if idx.shape[0] != pts.shape[0]:
            raise ValueError("gamma1_index and gamma1_points must have the same length")
        for arr in (idx, pts, g2):
            arr.flags.writeable = False
        object.__setattr__(self, "gamma1_index", idx)
        object.__setattr__(self, "gamma1_points", pts)
        object.__setattr__(self, "gamma2_points", g2)

    @property
    def points(self):
        return np.vstack([self.gamma1_points, self.gamma2_points])

    @property
    def n_tilde(self):
        return math.ceil(self.M / self.M_tilde) ** self.d

    def balls_inside_cells(self, radius=None):
        r = self.delta if radius is None else radius
        return np.all(np.abs(self.gamma1_points - self.gamma1_index) + r <= self.M / 2 + 1e-12, axis=1)

    def to_dict(self):
        return {
            "d": self.d,
            "M_tilde": self.M_tilde,
            "M": self.M,
            "delta": self.delta,
            "gamma1": [[list(map(_json_num, i)), list(map(float, z))]
                       for i, z in zip(self.gamma1_index, self.gamma1_points)],
            "gamma2": [list(map(float, z)) for z in self.gamma2_points],
        }

    @classmethod
    def from_dict(cls, data):
        d = int(data["d"])
        g1 = data.get("gamma1", [])
        idx = np.array([e[0] for e in g1]).reshape(-1, d)
        if np.allclose(idx, np.rint(idx)):
            idx = np.rint(idx).astype(int)
        pts = np.array([e[1] for e in g1], dtype=float).reshape(-1, d)
        g2 = np.array(data.get("gamma2", []), dtype=float).reshape(-1, d)
        return cls(d, float(data["M_tilde"]), int(data["M"]), float(data["delta"]), idx, pts, g2)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, source):
        """Load from a JSON string or a path to a JSON file."""
        if isinstance(source, str) and source.lstrip().startswith("{"):
            return cls.from_dict(json.loads(source))
        with open(source, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _json_num(x):
    x = float(x)
    return int(x) if x.is_integer() else x


def lattice_arrangement(box, delta, M=1):
    """Balls of radius ``delta`` centred on the ``M``-lattice sites of ``box``."""
    sites = lattice_sites(box, M)
    _check_ball_radius(delta, M)
    return DeloneArrangement(box.d, M_tilde=0.5 * M, M=M, delta=float(delta),
                             gamma1_index=sites, gamma1_points=sites.astype(float))


def random_ball_arrangement(box, delta, seed, M=1):
    """One ball per ``M``-cell, centre uniform among positions keeping the ball inside its cell."""
    sites = lattice_sites(box, M)
    _check_ball_radius(delta, M)
    rng = np.random.default_rng(seed)
    room = M / 2 - delta
    pts = sites + rng.uniform(-room, room, size=sites.shape)
    return DeloneArrangement(box.d, M_tilde=min(0.5 * M, 2 * delta), M=M, delta=float(delta),
                             gamma1_index=sites, gamma1_points=pts)


def _check_ball_radius(delta, M):
    check_positive(delta, "delta")
    if delta > M / 2:
        raise DeloneInfeasible(f"ball radius {delta} does not fit in a cell of side {M}")


def generate_delone(d, M_tilde, M, window, seed, delta=None, n_extra=0, perturb=True, max_tries=200):
    """Deterministic perturbed-lattice Delone arrangement on ``window``.

    Each ``M``-cell receives one point drawn uniformly from the sub-box of its
    cell that keeps neighbouring points more than ``M_tilde`` apart (sup-norm)
    and the ball ``B(z, delta)`` inside the cell.  Up to ``n_extra`` further
    points are then drawn uniformly from the window and accepted when they keep
    the ``M_tilde`` separation; they become the ``gamma2`` points.
    """
    d = check_dim(d)
    M_tilde = float(M_tilde)
    if not (0 < M_tilde < M) or int(M) != M:
        raise DeloneInfeasible(f"need 0 < M_tilde < M with integer M, got M_tilde={M_tilde}, M={M}")
    M = int(M)
    if window.d != d:
        raise ValueError("window dimension does not match d")
    if delta is None:
        delta = min(1.0, 0.5 * M_tilde)
    _check_ball_radius(delta, M)

    sites = lattice_sites(window, M)
    rng = np.random.default_rng(seed)
    if perturb:
        # strict inequality keeps adjacent points at sup-distance > M_tilde
        room = min(0.5 * (M - M_tilde) * (1 - 1e-9), M / 2 - delta)
        room = max(room, 0.0)
        pts = sites + rng.uniform(-room, room, size=sites.shape)
    else:
        pts = sites.astype(float)

    extra = []
    if n_extra > 0:
        tree_pts = [p for p in pts]
        by_cell = {tuple(s): p for s, p in zip(np.atleast_2d(sites).tolist(), pts)}
        lo, hi = window.lower, window.upper
        for _ in range(max_tries * n_extra):
            if len(extra) >= n_extra:
                break
            cand = rng.uniform(lo, hi)
            if np.any(cand >= hi):
                continue
            dist = np.max(np.abs(np.asarray(tree_pts) - cand), axis=1)
            if np.min(dist) <= M_tilde:
                continue
            home = by_cell[tuple(cell_of(cand[None, :], M, window.center)[0].tolist())]
            # keep the gamma1 choice stable under split_delone's lexicographic rule
            if tuple(cand) <= tuple(home):
                continue
            extra.append(cand)
            tree_pts.append(cand)
    g2 = np.array(extra).reshape(-1, d)
    return DeloneArrangement(d, M_tilde, M, float(delta), sites, pts, g2)


@dataclass(frozen=True)
class DeloneValidation:
    """Outcome of :func:`validate_delone`.  Truthy when the set passed."""

    ok: bool
    kind: str = None
    center: tuple = None
    count: int = None

    def __bool__(self):
        return self.ok


def validate_delone(points, M_tilde, M, window):
    """Check the Delone conditions of a finite point set on ``window``.

    Uniform discreteness (no closed box of side ``M_tilde`` holds two points) is
    equivalent to all pairwise sup-norm distances exceeding ``M_tilde``; it is
    checked exactly with a k-d tree.  Relative density is checked on every
    ``M``-cell of the window.  The first violation found is returned as a
    witness box centre and point count.
    """
    pts = check_points(points, window.d)
    if len(pts) > 1:
        pairs = sorted(cKDTree(pts).query_pairs(r=M_tilde, p=np.inf))
        if pairs:
            i, j = pairs[0]
            c = 0.5 * (pts[i] + pts[j])
            inside = np.all(np.abs(pts - c) <= M_tilde / 2 + 1e-12, axis=1)
            return DeloneValidation(False, "discreteness", tuple(c.tolist()), int(inside.sum()))
    sites = lattice_sites(window, M)
    inwin = window.contains(pts, closed=False) if len(pts) else np.zeros(0, bool)
    occupied = set()
    if inwin.any():
        occupied = {tuple(row) for row in cell_of(pts[inwin], M, window.center).tolist()}
    for s in np.atleast_2d(sites).tolist():
        if tuple(s) not in occupied:
            return DeloneValidation(False, "density", tuple(float(v) for v in s), 0)
    return DeloneValidation(True)


@dataclass(frozen=True)
class DeloneSplit:
    gamma1_index: np.ndarray
    gamma1_points: np.ndarray
    gamma2_points: np.ndarray
    cell_counts: np.ndarray
    balls_inside: np.ndarray = None


def split_delone(points, M, window, delta_minus=None):
    """Split ``Z`` into one point per ``M``-cell (lexicographically smallest) and the rest.

    Points outside ``window`` are ignored.  When ``delta_minus`` is given, the
    returned ``balls_inside`` flags report whether ``B(z_j, delta_minus)`` lies
    in the cell of each ``gamma1`` point.
    """
    pts = check_points(points, window.d)
    pts = pts[window.contains(pts, closed=False)] if len(pts) else pts
    sites = np.atleast_2d(lattice_sites(window, M))
    if len(pts) == 0:
        raise NotDelone("no points inside the window")
    cells = cell_of(pts, M, window.center)
    order = np.lexsort(pts.T[::-1])
    first = {}
    counts = {}
    g2 = []
    for i in order:
        key = tuple(cells[i].tolist())
        counts[key] = counts.get(key, 0) + 1
        if key in first:
            g2.append(pts[i])
        else:
            first[key] = pts[i]
    g1_pts = []
    cc = []
    for s in sites.tolist():
        key = tuple(s)
        if key not in first:
            raise NotDelone(f"M-cell centred at {key} contains no point")
        g1_pts.append(first[key])
        cc.append(counts[key])
    g1_pts = np.array(g1_pts).reshape(-1, window.d)
    inside = None
    if delta_minus is not None:
        inside = np.all(np.abs(g1_pts - sites) + delta_minus <= M / 2 + 1e-12, axis=1)
    return DeloneSplit(sites, g1_pts, np.array(g2).reshape(-1, window.d), np.array(cc), inside)


@dataclass(frozen=True)
class NearNeighbor:
    k_plus: tuple
    k_plus_minus: tuple
    mirrored: bool
    fallback: bool


def right_near_neighbor(k, L, bc):
    """Right near-neighbour ``k+ = k + (ceil(sqrt d) + 1) e_1`` of a unit-lattice site.

    Periodic: ``k+`` is reduced modulo the torus and ``k+-`` equals ``k+``.
    Dirichlet: ``k+`` is not reduced; when it leaves the box, ``k+-`` is its
    mirror image across ``{x_1 = L/2}``.  For ``L < ceil(sqrt d) + 1`` a single
    mirror can overshoot the left face; the coordinate is then folded back by
    repeated reflections in the two faces, and ``fallback`` is set.
    """
    bc = check_bc(bc)
    k = tuple(int(v) for v in np.atleast_1d(k))
    L = check_odd_side(L)
    d = len(k)
    half = (L - 1) // 2
    if any(abs(v) > half for v in k):
        raise ValueError(f"site {k} is outside the box of side {L}")
    shift = ceil_sqrt(d) + 1
    first = k[0] + shift
    if bc == "periodic":
        first = (first + half) % L - half
        kp = (first,) + k[1:]
        return NearNeighbor(kp, kp, False, False)
    kp = (first,) + k[1:]
    if first <= half:
        return NearNeighbor(kp, kp, False, False)
    y = (first + L / 2) % (2 * L)
    if y > L:
        y = 2 * L - y
    folded = int(round(y - L / 2))
    return NearNeighbor(kp, (folded,) + k[1:], True, L < shift)


def neighbor_table(L, d, bc):
    """Sites of the unit lattice of ``Lambda_L`` with their ``k+`` and ``k+-`` images."""
    sites = np.atleast_2d(lattice_sites(BoxSpec(d, L), 1))
    kp, kpm = [], []
    for s in sites:
        nn = right_near_neighbor(s, L, bc)
        kp.append(nn.k_plus)
        kpm.append(nn.k_plus_minus)
    return sites, np.array(kp), np.array(kpm)


def reflect_extend_points(points, L, corner=False):
    """Extend a point set of ``Lambda_L`` to the doubled cube by mirror reflections.

    The reflections are taken in the faces through the lower corner, exactly as
    for the antisymmetric function extension, giving ``[-L, L]^d`` in corner
    coordinates (``[0, L]^d`` holds the original box) or ``[-3L/2, L/2]^d`` in
    centred coordinates.  The result, continued ``2L``-periodically, is
    reflection symmetric with respect to every face of the original box.
    """
    pts = check_points(points)
    y = pts if corner else pts + L / 2
    for axis in range(y.shape[1]):
        mirrored = y.copy()
        mirrored[:, axis] = -mirrored[:, axis]
        y = np.vstack([y, mirrored])
    y = np.unique(y, axis=0)
    return y if corner else y - L / 2


def is_reflection_symmetric(points, L, axis=0, corner=False, tol=1e-9):
    """Whether the ``2L``-periodic continuation of ``points`` is symmetric in the
    hyperplane through the upper face of ``Lambda_L`` normal to ``axis``."""
    pts = check_points(points)
    y = pts if corner else pts + L / 2
    ref = y.copy()
    ref[:, axis] = 2 * L - ref[:, axis]

    def canon(a):
        a = np.mod(a + L, 2 * L) - L
        a = np.where(np.abs(a - L) < tol, -L, a)
        return a[np.lexsort(np.round(a / tol).T[::-1])]

    a, b = canon(y), canon(ref)
    return a.shape == b.shape and np.allclose(a, b, atol=tol, rtol=0)
