"""Unique-continuation measurements on grid eigenfunctions.

The periodic extension of a box function is plain modular indexing.  The
Dirichlet extension reflects antisymmetrically in the lower faces of the box,
giving a ``2L``-periodic function on ``[-3L/2, L/2)^d``; its values vanish on
every reflection hyperplane node.

Unit cells ``[k - 1/2, k + 1/2)^d`` are blocks of ``q^d`` nodes when the grid
has ``q`` nodes per unit length.  Windows ``Lambda_T(k)`` are half-open and
contain exactly ``(T q)^d`` nodes of the (extended) torus, so the cover
identity holds exactly on the grid.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator
from threadpoolctl import threadpool_limits

from . import constants
from ._validation import check_bc, check_odd_side, check_positive
from .constants import CarlemanConfig
from .exceptions import DeltaTooLarge, GeometryViolation, GridAlignment, NotDominating, UnderResolvedBall
from .geometry import BoxSpec, ceil_sqrt, lattice_arrangement, random_ball_arrangement
from .operator import (Ball, Grid, GridFunction, apply_laplacian, build_hamiltonian,
                       eigs_lowest, gradient_mass, mass)

T_LOCAL_FLUCT = constants.T_LOCAL_FLUCT


def _nodes_per_unit(grid):
    q = grid.nodes_per_unit
    if q is None:
        raise GridAlignment(f"{grid.n_per_side} nodes do not divide a box of side {grid.box.L} into unit cells")
    return q


def extend_function(psi, bc=None):
    """Extension of ``psi`` used by the dominating-site argument.

    Periodic: ``psi`` itself, read modulo the torus.  Dirichlet: the
    antisymmetric extension to the cube of side ``2L`` with lower corner
    ``center - 3L/2``.
    """
    bc = check_bc(bc or psi.grid.bc)
    if bc == "periodic":
        return psi
    grid = psi.grid
    v = psi.values
    for ax in range(grid.d):
        idx = [slice(None)] * grid.d
        idx[ax] = 0
        if np.any(v[tuple(idx)] != 0):
            raise GridAlignment("Dirichlet function must vanish on the lower boundary nodes")
    n = grid.n_per_side
    for ax in range(grid.d):
        pad_shape = list(v.shape)
        pad_shape[ax] = 1
        padded = np.concatenate([v, np.zeros(pad_shape)], axis=ax)
        mirrored = -np.flip(np.take(padded, np.arange(1, n + 1), axis=ax), axis=ax)
        v = np.concatenate([mirrored, v], axis=ax)
    center = tuple(c - grid.box.L / 2 for c in grid.box.center)
    box = BoxSpec(grid.d, 2 * grid.box.L, center, "periodic")
    return GridFunction(Grid(box, 2 * n, cap=max(grid.cap, (2 * n) ** grid.d)), v)


def _wrap_counts(start, length, period):
    """How often each node of a ring of ``period`` nodes lies in ``[start, start + length)``."""
    counts = np.full(period, length // period, dtype=float)
    rest = length % period
    first = start % period
    idx = (first + np.arange(rest)) % period
    counts[idx] += 1
    return counts


def _window_masses(density, origin2, centers, T, q):
    """``sum`` of ``density`` over the half-open windows ``[k - T/2, k + T/2)^d`` on a torus.

    ``origin2[i]`` is the coordinate of node 0 along axis ``i`` in units of
    ``1/(2q)``, which keeps every window edge an integer for odd and even ``q``
    alike.  ``centers`` is an integer array of shape ``(m, d)``.
    """
    d = density.ndim
    period = density.shape[0]
    out = np.empty(len(centers))
    for j, k in enumerate(centers):
        contracted = density
        for ax in range(d):
            # first node with coordinate >= k - T/2, using integer arithmetic
            num = (2 * int(k[ax]) - T) * q - int(origin2[ax])
            start = -((-num) // 2)
            w = _wrap_counts(start, T * q, period)
            contracted = np.tensordot(w, contracted, axes=([0], [0]))
        out[j] = float(contracted)
    return out


def cell_masses(psi):
    """Mass of every unit cell of ``Lambda_L``, shape ``(L,) * d``."""
    grid = psi.grid
    q = _nodes_per_unit(grid)
    L = check_odd_side(grid.box.L)
    sq = (psi.values**2).reshape(sum(((L, q) for _ in range(grid.d)), ()))
    return grid.cell_volume * sq.sum(axis=tuple(range(1, 2 * grid.d, 2)))


def unit_sites(L, d):
    half = (L - 1) // 2
    axes = [np.arange(-half, half + 1)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class Classification:
    dominating: np.ndarray
    T: int
    bc: str
    cell_mass: np.ndarray
    window_mass: np.ndarray
    threshold: float
    total_mass: float
    cover_residual: float

    @property
    def weak_mass(self):
        return float(self.cell_mass[~self.dominating].sum())

    @property
    def weak_fraction(self):
        return self.weak_mass / self.total_mass

    @property
    def dominating_fraction(self):
        return float(self.cell_mass[self.dominating].sum()) / self.total_mass

    @property
    def n_weak(self):
        return int((~self.dominating).sum())


def classify_sites(psi, L=None, bc=None, T=None):
    """Label every unit site of ``Lambda_L`` dominating or weak.

    Periodic: ``k`` dominates when its cell holds at least ``1/(2 T^d)`` of the
    mass of ``psi`` in ``Lambda_T(k)`` on the torus.  Dirichlet: the threshold is
    ``1/(2 (2T)^d)`` and the window mass is taken from the antisymmetric
    extension.

    ``cover_residual`` is the relative defect of the identity
    ``sum_k mass(Lambda_T(k)) = T^d mass(Lambda_L)`` (periodic) or the amount by
    which ``sum_k mass(Lambda_T(k))`` exceeds ``T^d 2^d mass(Lambda_L)`` (Dirichlet,
    zero when the bound holds).
    """
    grid = psi.grid
    bc = check_bc(bc or grid.bc)
    L = check_odd_side(grid.box.L if L is None else L)
    if abs(grid.box.L - L) > 1e-9:
        raise GridAlignment("L does not match the grid box")
    d = grid.d
    T = constants.dominating_T(d) if T is None else int(T)
    q = _nodes_per_unit(grid)
    cells = cell_masses(psi)
    total = float(cells.sum())
    sites = unit_sites(L, d) + np.rint(np.asarray(grid.box.center)).astype(int)
    ext = extend_function(psi, bc)
    density = ext.grid.cell_volume * ext.values**2
    origin2 = np.rint(2 * np.asarray(ext.grid.box.lower) * q).astype(int)
    if not np.allclose(2 * ext.grid.box.lower * q, origin2):
        raise GridAlignment("box corner is not on the half-node lattice")
    windows = _window_masses(density, origin2, sites, T, q)
    if bc == "periodic":
        threshold = 1.0 / (2 * T**d)
        cover = abs(windows.sum() - T**d * total) / (T**d * total)
    else:
        threshold = 1.0 / (2 * (2 * T) ** d)
        cover = max(0.0, windows.sum() / ((2 * T) ** d * total) - 1.0)
    flat_cells = cells.ravel()
    dominating = flat_cells >= threshold * windows
    return Classification(dominating.reshape(cells.shape), T, bc, cells, windows.reshape(cells.shape),
                          threshold, total, float(cover))


def _ball_mass(psi, z, delta, q, L):
    """Mass of ``B(z, delta)``, looking only at the nodes of the unit cell of ``z``."""
    grid = psi.grid
    d = grid.d
    rel = np.asarray(z, dtype=float) - grid.box.lower
    cell = np.floor(rel + 0.0).astype(int)
    if np.any(rel - cell < delta) or np.any(cell + 1 - rel < delta) or np.any(cell < 0) or np.any(cell >= L):
        return mass(psi, Ball(tuple(z), delta))
    sl = tuple(slice(c * q, (c + 1) * q) for c in cell)
    block = psi.values[sl]
    axes = [grid.box.lower[i] + grid.h * np.arange(cell[i] * q, (cell[i] + 1) * q) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    r2 = sum((m - zi) ** 2 for m, zi in zip(mesh, z))
    inside = np.sqrt(r2) < delta - 1e-10 * max(1.0, delta)
    return float(grid.cell_volume * np.sum(block[inside] ** 2))


def ball_masses(psi, points, delta):
    grid = psi.grid
    q = _nodes_per_unit(grid)
    L = int(round(grid.box.L))
    return np.array([_ball_mass(psi, z, delta, q, L) for z in np.atleast_2d(points)])


def mass_ratio(psi, arrangement, L=None):
    """``sum_j mass(B(z_j, delta)) / mass(Lambda_L)`` over the ``gamma1`` balls."""
    grid = psi.grid
    if L is not None and abs(grid.box.L - L) > 1e-9:
        raise GridAlignment("L does not match the grid box")
    if arrangement.delta < 2 * grid.h:
        raise UnderResolvedBall(f"ball radius {arrangement.delta} is below two grid spacings ({2 * grid.h})")
    balls = ball_masses(psi, arrangement.gamma1_points, arrangement.delta)
    return float(balls.sum() / mass(psi))


@dataclass
class UcpReport:
    L: int
    bc: str
    eig_idx: int
    eigenvalue: float
    K_V: float
    ratio: float
    weak_frac: float
    c_sfuc_analytic: float
    T: int
    delta: float
    seed: int
    log10_c_sfuc: float
    dominating_frac: float
    cover_residual: float
    n_weak: int

    CSV_COLUMNS = ("L", "bc", "eig_idx", "lambda", "K_V", "ratio", "weak_frac", "c_sfuc_analytic",
                   "T", "delta", "seed", "log10_c_sfuc", "dominating_frac", "cover_residual", "n_weak")

    def row(self):
        out = asdict(self)
        out["lambda"] = out.pop("eigenvalue")
        return {k: out[k] for k in self.CSV_COLUMNS}


def _sample_potential(grid, V0):
    if V0 is None:
        return grid.zeros()
    if isinstance(V0, GridFunction):
        return V0
    return grid.sample(V0)


def _ucp_unit(L, d, bc, V0, n_eigs, delta, q, balls, seed, T, tol, config):
    with threadpool_limits(1):
        grid = Grid.for_box(BoxSpec(d, L, bc=bc), q)
        V = _sample_potential(grid, V0)
        H = build_hamiltonian(grid, V, bc)
        pairs = eigs_lowest(H, n_eigs, tol=tol)
        box = grid.box
        if balls == "centered":
            arr = lattice_arrangement(box, delta)
        elif balls == "random":
            arr = random_ball_arrangement(box, delta, seed=(seed, L))
        else:
            arr = balls(box)
        rows, classes = [], []
        for i, p in enumerate(pairs):
            K_V = float(np.max(np.abs(V.values[H.mask] - p.eigenvalue)))
            cls = classify_sites(p.psi, L, bc, T)
            log_c = constants.log_c_sfuc(d, K_V, delta, bc, config.C_dim)
            rows.append(UcpReport(
                L=L, bc=bc, eig_idx=i, eigenvalue=p.eigenvalue, K_V=K_V,
                ratio=mass_ratio(p.psi, arr, L), weak_frac=cls.weak_fraction,
                c_sfuc_analytic=math.exp(log_c), T=cls.T, delta=delta, seed=seed,
                log10_c_sfuc=log_c / math.log(10), dominating_frac=cls.dominating_fraction,
                cover_residual=cls.cover_residual, n_weak=cls.n_weak))
            classes.append(cls)
        return rows, classes, pairs


class UCPVerifier(BaseEstimator):
    """Measure the mass ratio of low-lying eigenfunctions on a family of boxes.

    Parameters
    ----------
    V0 : callable, optional
        Background potential ``V0(coords) -> values``; zero when omitted.
    L_values : sequence of odd int
    bc : {"periodic", "dirichlet"}
    n_eigs : int
    delta : float
        Ball radius.
    nodes_per_unit : int
        Grid nodes per unit length; the grid of ``Lambda_L`` has ``nodes_per_unit * L``
        nodes per side.
    balls : {"centered", "random"} or callable
        Ball placement; a callable receives the :class:`BoxSpec` and returns a
        :class:`DeloneArrangement`.

    Attributes
    ----------
    reports_ : list of UcpReport
        Ordered by ``(L, eig_idx)``.
    min_ratio_ : dict
        Smallest ratio per ``L``.
    slope_ : float
        Least-squares slope of ``ln min_ratio`` against ``L``.
    """

    def __init__(self, V0=None, L_values=(5, 9, 13), d=1, bc="periodic", n_eigs=10, delta=0.3,
                 nodes_per_unit=40, balls="centered", seed=0, T=None, tol=1e-9,
                 config=CarlemanConfig(), n_jobs=1, keep_eigenpairs=False):
        self.V0 = V0
        self.L_values = L_values
        self.d = d
        self.bc = bc
        self.n_eigs = n_eigs
        self.delta = delta
        self.nodes_per_unit = nodes_per_unit
        self.balls = balls
        self.seed = seed
        self.T = T
        self.tol = tol
        self.config = config
        self.n_jobs = n_jobs
        self.keep_eigenpairs = keep_eigenpairs

    def fit(self, X=None, y=None):
        """Run the measurement; ``X`` may override ``L_values``."""
        Ls = [check_odd_side(L) for L in (self.L_values if X is None else np.ravel(X))]
        bc = check_bc(self.bc)
        check_positive(self.delta, "delta")
        units = Parallel(n_jobs=self.n_jobs)(
            delayed(_ucp_unit)(L, self.d, bc, self.V0, self.n_eigs, self.delta, self.nodes_per_unit,
                               self.balls, self.seed, self.T, self.tol, self.config)
            for L in Ls)
        self.reports_ = [r for rows, _, _ in units for r in rows]
        self.classifications_ = {L: cls for L, (_, cls, _) in zip(Ls, units)}
        if self.keep_eigenpairs:
            self.eigenpairs_ = {L: pairs for L, (_, _, pairs) in zip(Ls, units)}
        self.min_ratio_ = {L: min(r.ratio for r in rows) for L, (rows, _, _) in zip(Ls, units)}
        self.slope_ = _log_slope(Ls, [self.min_ratio_[L] for L in Ls])
        return self

    def summary(self):
        return {
            "L": list(self.min_ratio_),
            "min_ratio": list(self.min_ratio_.values()),
            "slope_log_min_ratio": self.slope_,
            "max_weak_frac": max(r.weak_frac for r in self.reports_),
            "max_cover_residual": max(r.cover_residual for r in self.reports_),
            "weak_sites_1d": sum(r.n_weak for r in self.reports_) if self.d == 1 else None,
        }


def _log_slope(x, y):
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.any(y <= 0):
        return math.nan
    return float(np.polyfit(np.asarray(x, dtype=float), np.log(y), 1)[0])


def verify_ucp(V0, L_values, bc, n_eigs, delta=0.3, **kw):
    """Functional form of :class:`UCPVerifier`; returns ``(reports, summary)``."""
    est = UCPVerifier(V0=V0, L_values=L_values, bc=bc, n_eigs=n_eigs, delta=delta, **kw).fit()
    return est.reports_, est.summary()


# Cacciopoli ----------------------------------------------------------------

@dataclass
class CacciopoliResult:
    lhs: float
    rhs: float
    ok: bool
    case: str
    equation_defect: float
    equation_ok: bool


def _radial_distance(grid, center, bc):
    coords = grid.coords()
    diff = coords - np.asarray(center, dtype=float)
    if bc == "periodic":
        L = grid.box.L
        diff = diff - L * np.round(diff / L)
    return np.linalg.norm(diff, axis=1).reshape(grid.shape)


def cacciopoli_check(psi, V, a, b, c, center=None, bc=None, slack=0.05):
    """Compare ``int_{a <= |x| < c} |grad psi|^2`` with
    ``(1 + 9/b^2 + ||V||^2) int |psi|^2`` over the enlarged annulus (or ball).

    ``V`` is the effective potential with ``|Delta psi| <= |V psi|``; for an
    eigenfunction of ``-Delta + V0`` with eigenvalue ``E`` pass ``V0 - E``.
    The discrete equation is checked at the nodes with tolerance
    ``slack |V psi| + 10 h^2 ||psi||_inf`` and reported.
    """
    grid = psi.grid
    bc = check_bc(bc or grid.bc)
    if not 0 <= a < c:
        raise ValueError("need 0 <= a < c")
    check_positive(b, "b")
    center = np.zeros(grid.d) if center is None else np.asarray(center, dtype=float)
    V = V if isinstance(V, GridFunction) else GridFunction(grid, V)
    case = "annulus" if 0 < b < a else "ball"
    outer = c + b
    if bc == "periodic":
        if outer >= grid.box.L / 2:
            raise GeometryViolation("enlarged region wraps around the torus")
    elif np.any(center - outer < grid.box.lower) or np.any(center + outer > grid.box.upper):
        raise GeometryViolation("enlarged region leaves the box")
    r = _radial_distance(grid, center, bc)
    tol = 1e-12 * max(1.0, outer)
    inner_mask = (r >= a - tol) & (r < c - tol)
    if case == "annulus":
        big = (r >= a - b - tol) & (r <= outer + tol)
    else:
        big = r <= outer + tol
    lhs = gradient_mass(psi, inner_mask, bc)
    vmax = float(np.max(np.abs(V.values)))
    rhs = (1 + 9 / b**2 + vmax**2) * mass(psi, big)
    lap = apply_laplacian(psi, bc).values
    allowed = slack * np.abs(V.values * psi.values) + 10 * grid.h**2 * psi.sup()
    defect = np.abs(lap) - np.abs(V.values * psi.values)
    eq_defect = float(np.max(defect[big] - allowed[big])) if big.any() else 0.0
    return CacciopoliResult(lhs, rhs, lhs <= rhs * (1 + slack), case, eq_defect, eq_defect <= 0)


# local fluctuations --------------------------------------------------------

@dataclass
class LocalFluctuationReport:
    site: tuple
    n_sub: int
    max_box_index: tuple
    max_box_mass: float
    cell_mass: float
    pigeonhole_ok: bool
    min_ratio: float
    argmin_center: tuple
    c_lf_analytic: float
    log10_c_lf: float
    delta: float
    extra: dict = field(default_factory=dict)


def maximal_subbox(psi, site, n_sub=None):
    """Heaviest of the ``n_sub^d`` sub-boxes of the unit cell of ``site``.

    Sub-boxes are formed from the cell's nodes, so they partition the cell's
    mass; ties go to the lexicographically smallest sub-box index.  Returns
    ``(index, mass, cell_mass)``.
    """
    grid = psi.grid
    q = _nodes_per_unit(grid)
    d = grid.d
    n_sub = 10 * ceil_sqrt(d) if n_sub is None else n_sub
    corner = np.rint(np.asarray(site) - 0.5 - grid.box.lower).astype(int)
    block = psi.values[tuple(slice(c * q, (c + 1) * q) for c in corner)] ** 2 * grid.cell_volume
    label = (np.arange(q) * n_sub) // q
    sub = block
    for ax in range(d):
        sub = np.moveaxis(np.stack([np.take(sub, np.flatnonzero(label == j), axis=ax).sum(axis=ax)
                                    for j in range(n_sub)]), 0, ax)
    flat = sub.ravel()
    best = int(np.flatnonzero(flat == flat.max())[0])
    return np.unravel_index(best, sub.shape), float(flat[best]), float(block.sum())


def local_fluctuation_experiment(psi, site, delta, config=CarlemanConfig(), K_V=0.0, bc=None,
                                 classification=None, require_dominating=True):
    """Smallest ball-to-cell mass ratio inside a dominating unit cell.

    The site must dominate in the sense of windows of side ``T = 30 ceil(sqrt d)``.
    Ball centres run over the grid nodes ``x`` with ``B(x, delta)`` inside the
    cell.  The maximal sub-box and its pigeonhole bound are reported alongside.
    """
    grid = psi.grid
    bc = check_bc(bc or grid.bc)
    if not 0 < delta <= 1 / 20:
        raise DeltaTooLarge(f"delta must lie in (0, 1/20], got {delta}")
    if delta < 2 * grid.h:
        raise UnderResolvedBall(f"ball radius {delta} is below two grid spacings ({2 * grid.h})")
    d = grid.d
    site = tuple(int(v) for v in np.atleast_1d(site))
    cls = classification or classify_sites(psi, bc=bc, T=T_LOCAL_FLUCT * ceil_sqrt(d))
    L = int(round(grid.box.L))
    idx = tuple(int(s + (L - 1) // 2 - round(c)) for s, c in zip(site, grid.box.center))
    if require_dominating and not cls.dominating[idx]:
        raise NotDominating(f"site {site} is not dominating for T={cls.T}")
    n_sub = 10 * ceil_sqrt(d)
    sub_idx, sub_mass, cmass = maximal_subbox(psi, site, n_sub)
    pigeon = sub_mass >= cmass / n_sub**d * (1 - 1e-12)

    q = _nodes_per_unit(grid)
    local = np.arange(q) * grid.h
    lo = np.asarray(site, dtype=float) - 0.5
    ok_axis = (local >= delta - 1e-12) & (local <= 1 - delta + 1e-12)
    centres_1d = lo[:, None] + local[None, :]
    mesh = np.meshgrid(*[centres_1d[i][ok_axis] for i in range(d)], indexing="ij")
    centres = np.stack([m.ravel() for m in mesh], axis=1)
    ratios = ball_masses(psi, centres, delta) / cmass if cmass > 0 else np.full(len(centres), np.nan)
    j = int(np.nanargmin(ratios))
    parts = constants.c_lf_parts(d, K_V, delta, config, bc)
    return LocalFluctuationReport(site, n_sub, tuple(int(i) for i in sub_idx), sub_mass, cmass, bool(pigeon),
                                  float(ratios[j]), tuple(centres[j].tolist()), parts.c_lf,
                                  parts.log_c_lf / math.log(10), delta)


def pigeonhole_all(psi, classification):
    """Check the maximal sub-box bound on every dominating cell; returns ``(n_checked, n_failed)``."""
    grid = psi.grid
    L = int(round(grid.box.L))
    sites = unit_sites(L, grid.d) + np.rint(np.asarray(grid.box.center)).astype(int)
    n_sub = 10 * ceil_sqrt(grid.d)
    checked = failed = 0
    for s, dom in zip(sites, classification.dominating.ravel()):
        if not dom:
            continue
        _, sub_mass, cmass = maximal_subbox(psi, s, n_sub)
        checked += 1
        failed += sub_mass < cmass / n_sub**grid.d * (1 - 1e-12)
    return checked, int(failed)
