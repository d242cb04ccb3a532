"""Delone-Anderson random potentials and the spectral checks built on them."""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from joblib import Parallel, delayed
from scipy import integrate, stats
from sklearn.base import BaseEstimator
from threadpoolctl import threadpool_limits

from . import constants
from ._validation import check_bc, check_positive
from .constants import CarlemanConfig
from .exceptions import EigNotConverged, TooManyDropped
from .geometry import BoxSpec, lattice_arrangement
from .operator import (DENSE_LIMIT, Grid, GridFunction, SwitchFunction, build_hamiltonian,
                       count_eigenvalues, count_in_interval, eigs_lowest)
from .rng import site_uniforms
from .ucp import mass_ratio

log = logging.getLogger(__name__)


# coupling distributions -----------------------------------------------------

@dataclass(frozen=True)
class CouplingDistribution:
    """Single-site coupling law.

    ``kind`` is ``"uniform"`` (``a``, ``b``), ``"bernoulli"`` (value ``v1`` with
    probability ``p``, else ``v0``) or ``"truncated_gaussian"`` (``mu``,
    ``sigma`` restricted to ``[a, b]``).
    """

    kind: str
    a: float = 0.0
    b: float = 1.0
    p: float = 0.5
    v0: float = 0.0
    v1: float = 1.0
    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "bernoulli", "truncated_gaussian"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "bernoulli":
            if not 0 <= self.p <= 1:
                raise ValueError("p must lie in [0, 1]")
        elif not self.a < self.b:
            raise ValueError("need a < b")
        if self.kind == "truncated_gaussian":
            check_positive(self.sigma, "sigma")

    @classmethod
    def uniform(cls, a=0.0, b=1.0):
        return cls("uniform", a=a, b=b)

    @classmethod
    def bernoulli(cls, p=0.5, v0=0.0, v1=1.0):
        return cls("bernoulli", p=p, v0=v0, v1=v1)

    @classmethod
    def truncated_gaussian(cls, mu=0.0, sigma=1.0, a=-1.0, b=1.0):
        return cls("truncated_gaussian", a=a, b=b, mu=mu, sigma=sigma)

    @property
    def support(self):
        if self.kind == "bernoulli":
            return min(self.v0, self.v1), max(self.v0, self.v1)
        return self.a, self.b

    @property
    def m(self):
        lo, hi = self.support
        return max(abs(lo), abs(hi))

    @cached_property
    def _truncnorm(self):
        return stats.truncnorm((self.a - self.mu) / self.sigma, (self.b - self.mu) / self.sigma,
                               loc=self.mu, scale=self.sigma)

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        if self.kind == "bernoulli":
            return np.where(u < 1 - self.p, self.v0, self.v1)
        return self._truncnorm.ppf(u)

    def interval_mass(self, lo, hi):
        """``mu([lo, hi])``."""
        if hi < lo:
            return 0.0
        if self.kind == "uniform":
            return max(0.0, min(hi, self.b) - max(lo, self.a)) / (self.b - self.a)
        if self.kind == "bernoulli":
            return (1 - self.p) * (lo <= self.v0 <= hi) + self.p * (lo <= self.v1 <= hi)
        tn = self._truncnorm
        return float(tn.cdf(hi) - tn.cdf(lo))

    def expect(self, f):
        """``int f dmu``."""
        if self.kind == "bernoulli":
            return (1 - self.p) * f(self.v0) + self.p * f(self.v1)
        if self.kind == "uniform":
            val, _ = integrate.quad(f, self.a, self.b, limit=400, epsabs=1e-14, epsrel=1e-12)
            return val / (self.b - self.a)
        tn = self._truncnorm
        val, _ = integrate.quad(lambda x: f(x) * tn.pdf(x), self.a, self.b, limit=400,
                                epsabs=1e-14, epsrel=1e-12)
        return val


def modulus_of_continuity(dist, epsilon):
    """``s(eps) = sup_E mu([E - eps/2, E + eps/2])``."""
    check_positive(epsilon, "epsilon")
    lo, hi = dist.support
    if epsilon >= hi - lo:
        return 1.0
    if dist.kind == "uniform":
        return min(1.0, epsilon / (dist.b - dist.a))
    if dist.kind == "bernoulli":
        return max(dist.p, 1 - dist.p)
    # the density is unimodal and symmetric about mu, so the best window is centred
    # at mu, pushed inside the support when it would stick out
    c = min(max(dist.mu, dist.a + epsilon / 2), dist.b - epsilon / 2)
    return dist.interval_mass(c - epsilon / 2, c + epsilon / 2)


# model ----------------------------------------------------------------------

PROFILES = ("indicator", "bump")


def single_site_profile(r, C_minus, C_plus, delta_minus, delta_plus, profile="indicator"):
    """Radial single-site bump with ``C_- chi_B(delta_-) <= u <= C_+ chi_B(delta_+)``."""
    r = np.asarray(r, dtype=float)
    edge = 1e-10 * max(1.0, delta_plus)
    if profile == "indicator":
        return np.where(r < delta_minus - edge, C_minus, 0.0)
    if profile == "bump":
        inner = C_minus + (C_plus - C_minus) * (1 - (r / delta_minus) ** 2)
        t = np.clip((r - delta_minus) / (delta_plus - delta_minus), 0.0, 1.0)
        outer = C_minus * (1 - t * t * (3 - 2 * t))
        out = np.where(r < delta_minus, inner, outer)
        return np.where(r < delta_plus - edge, out, 0.0)
    raise ValueError(f"profile must be one of {PROFILES}")


@dataclass(frozen=True)
class DeloneAndersonModel:
    """``H = -Delta + V0 + sum_j omega_j u_j`` with impurities on a Delone set.

    With ``arrangement=None`` the impurities sit at the centres of the unit
    cells of the box, one per cell.
    """

    V0: object = None
    arrangement: object = None
    C_minus: float = 1.0
    C_plus: float = 1.0
    delta_minus: float = 0.3
    delta_plus: float = 0.4
    dist: CouplingDistribution = field(default_factory=CouplingDistribution.uniform)
    profile: str = "indicator"

    def __post_init__(self):
        if not 0 < self.C_minus <= self.C_plus:
            raise ValueError("need 0 < C_minus <= C_plus")
        if not 0 < self.delta_minus < self.delta_plus:
            raise ValueError("need 0 < delta_minus < delta_plus")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}")

    def sites(self, box):
        """``(points, n_gamma1)`` of the impurities inside ``box``."""
        if self.arrangement is None:
            arr = lattice_arrangement(box, self.delta_minus)
            return np.asarray(arr.gamma1_points, dtype=float), len(arr.gamma1_points)
        arr = self.arrangement
        g1 = arr.gamma1_points[box.contains(arr.gamma1_points, closed=False)]
        g2 = arr.gamma2_points
        if len(g2):
            g2 = g2[box.contains(g2, closed=False)]
        return np.vstack([g1, g2]).reshape(-1, box.d), len(g1)

    def background(self, grid):
        if self.V0 is None:
            return grid.zeros()
        if isinstance(self.V0, GridFunction):
            return self.V0
        return grid.sample(self.V0)

    def site_matrix(self, grid):
        """Sparse ``(n_sites, n_nodes)`` matrix whose rows are the samples of ``u_j``."""
        pts, _ = self.sites(grid.box)
        coords = grid.coords()
        rows, cols, vals = [], [], []
        for j, z in enumerate(pts):
            diff = coords - z
            if grid.bc == "periodic":
                diff -= grid.box.L * np.round(diff / grid.box.L)
            r = np.linalg.norm(diff, axis=1)
            u = single_site_profile(r, self.C_minus, self.C_plus, self.delta_minus, self.delta_plus,
                                    self.profile)
            nz = np.flatnonzero(u)
            rows.append(np.full(nz.size, j))
            cols.append(nz)
            vals.append(u[nz])
        if not pts.size:
            return sp.csr_matrix((0, grid.size))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(len(pts), grid.size))

    def gamma1_sum(self, grid):
        """``W = sum_{j in Gamma_1} u_j`` on ``grid``."""
        _, n1 = self.sites(grid.box)
        U = self.site_matrix(grid)
        return GridFunction(grid, np.asarray(U[:n1].sum(axis=0)).ravel())


@dataclass
class Couplings:
    gamma1: np.ndarray
    gamma2: np.ndarray

    @property
    def all(self):
        return np.concatenate([self.gamma1, self.gamma2])


def sample_couplings(model, n_sites, n_gamma1, seed, realization_id):
    omega = np.asarray(model.dist.ppf(site_uniforms(seed, realization_id, n_sites)), dtype=float)
    return Couplings(omega[:n_gamma1], omega[n_gamma1:])


def sample_potential(model, grid, seed, realization_id, site_matrix=None, split=False):
    """Random potential ``V_omega = sum_j omega_j u_j`` on ``grid``.

    Site ``j`` draws its coupling from the stream ``(seed, realization_id, j)``.
    Returns ``(V_omega, couplings)``; with ``split=True`` the first item is the
    pair ``(Gamma_1 part, Gamma_2 part)``.
    """
    U = model.site_matrix(grid) if site_matrix is None else site_matrix
    _, n1 = model.sites(grid.box)
    omega = sample_couplings(model, U.shape[0], n1, seed, realization_id)
    if split:
        v1 = U[:n1].T @ omega.gamma1
        v2 = U[n1:].T @ omega.gamma2
        return (GridFunction(grid, v1), GridFunction(grid, v2)), omega
    return GridFunction(grid, U.T @ omega.all), omega


def _grid_for(L, d, bc, nodes_per_unit):
    return Grid.for_box(BoxSpec(d, L, bc=bc), nodes_per_unit)


# Wegner ---------------------------------------------------------------------

def _realization_counts(H0_matrix, diag_offset, U, model, seed, rids, intervals, n1):
    out = []
    with threadpool_limits(1):
        for rid in rids:
            try:
                omega = sample_couplings(model, U.shape[0], n1, seed, rid).all
                V = (U.T @ omega)[diag_offset]
                A = H0_matrix + sp.diags(V)
                if A.shape[0] <= DENSE_LIMIT:
                    ev = sla.eigvalsh(A.toarray())
                    out.append((rid, [count_eigenvalues(ev, a, b) for a, b in intervals]))
                else:
                    out.append((rid, [count_in_interval(A, a, b, "sparse-inertia") for a, b in intervals]))
            except (EigNotConverged, np.linalg.LinAlgError, RuntimeError) as exc:
                out.append((rid, str(exc)))
    return out


class WegnerEstimator(BaseEstimator):
    """Monte-Carlo mean of the number of eigenvalues in ``[E - eps, E + eps]``.

    All ``epsilons`` share the same realizations.  ``E`` defaults to the
    bottom ``lambda(0)`` of the spectrum with the couplings set to zero plus
    ``E_offset``.

    Attributes
    ----------
    table_ : list of dict
        One row per ``eps`` with mean count, 95% normal confidence interval and
        the two analytic bounds.
    counts_ : ndarray of shape (n_real, n_eps)
    slope_ : float
        Least-squares slope of ``ln mean`` against ``ln eps`` over positive means.
    """

    CSV_COLUMNS = ("L", "E", "epsilon", "n_real", "mean_count", "ci_lo", "ci_hi", "bound_all_E",
                   "bound_low_E", "slope_fit")

    def __init__(self, model=None, L=21, d=1, bc="periodic", E=None, E_offset=0.1,
                 epsilons=(0.02, 0.04, 0.08, 0.16), n_real=2000, seed=0, nodes_per_unit=10,
                 kappa=None, q=0.5, config=CarlemanConfig(), K1=1.0, K2=1.0, n_jobs=1,
                 max_drop_fraction=0.05):
        self.model = model
        self.L = L
        self.d = d
        self.bc = bc
        self.E = E
        self.E_offset = E_offset
        self.epsilons = epsilons
        self.n_real = n_real
        self.seed = seed
        self.nodes_per_unit = nodes_per_unit
        self.kappa = kappa
        self.q = q
        self.config = config
        self.K1 = K1
        self.K2 = K2
        self.n_jobs = n_jobs
        self.max_drop_fraction = max_drop_fraction

    def fit(self, X=None, y=None):
        model = self.model or DeloneAndersonModel()
        bc = check_bc(self.bc)
        eps = np.asarray(self.epsilons, dtype=float)
        if np.any(eps <= 0) or np.any(eps > 1 / 3):
            raise ValueError("every epsilon must lie in (0, 1/3]")
        if self.n_real < 2:
            raise ValueError("n_real must be at least 2")
        grid = _grid_for(self.L, self.d, bc, self.nodes_per_unit)
        V0 = model.background(grid)
        H0 = build_hamiltonian(grid, V0, bc)
        self.lambda0_ = eigs_lowest(H0, 1)[0].eigenvalue
        E = self.lambda0_ + self.E_offset if self.E is None else float(self.E)
        self.E_ = E
        intervals = [(E - e, E + e) for e in eps]
        U = model.site_matrix(grid)
        _, n1 = model.sites(grid.box)
        mask = H0.mask.ravel()

        rids = np.arange(self.n_real)
        chunks = np.array_split(rids, max(1, min(len(rids), 8 * max(1, abs(self.n_jobs)))))
        parts = Parallel(n_jobs=self.n_jobs)(
            delayed(_realization_counts)(H0.matrix, mask, U, model, self.seed, c, intervals, n1)
            for c in chunks if len(c))
        results = sorted((r for part in parts for r in part), key=lambda t: t[0])
        kept = [c for _, c in results if not isinstance(c, str)]
        self.dropped_ = [(rid, msg) for rid, msg in results if isinstance(msg, str)]
        for rid, msg in self.dropped_:
            log.warning("realization %d dropped: %s", rid, msg)
        if len(self.dropped_) > self.max_drop_fraction * self.n_real:
            raise TooManyDropped(f"{len(self.dropped_)} of {self.n_real} realizations failed")
        counts = np.asarray(kept, dtype=float)
        self.counts_ = counts
        n = len(counts)
        mean = counts.mean(axis=0)
        half = 1.96 * counts.std(axis=0, ddof=1) / math.sqrt(n)

        # analytic constants
        d = self.d
        overlap = float(np.max(np.asarray((U != 0).sum(axis=0)).ravel())) if U.shape[0] else 0.0
        K_V = float(np.max(np.abs(V0.values))) + model.dist.m * model.C_plus * overlap + abs(E)
        c_sf = constants.c_sfuc(d, K_V, model.delta_minus, bc, self.config.C_dim)
        kappa_an, _, c_W = (constants.kappa_and_cw(model.C_minus, c_sf, E, d, self.K1, self.K2)
                            if c_sf > 0 else (0.0, math.nan, math.inf))
        kappa = kappa_an if self.kappa is None else float(self.kappa)
        J = (self.lambda0_, self.lambda0_ + self.q * kappa)
        self.kappa_analytic_ = kappa_an
        self.c_W_ = c_W
        self.window_J_ = J
        s = np.array([modulus_of_continuity(model.dist, e) for e in eps])
        vol = float(self.L) ** d
        bound_all = c_W * s * np.abs(np.log(eps)) ** d * vol
        inside = np.array([J[0] <= a and b <= J[1] for a, b in intervals])
        bound_low = np.where(inside, c_W * s * vol, np.nan)

        pos = mean > 0
        self.slope_ = (float(np.polyfit(np.log(eps[pos]), np.log(mean[pos]), 1)[0])
                       if pos.sum() >= 2 else math.nan)
        self.monotone_ = bool(np.all(np.diff(mean) >= 0))
        self.table_ = [
            {"L": self.L, "E": E, "epsilon": float(e), "n_real": n, "mean_count": float(m),
             "ci_lo": float(m - hw), "ci_hi": float(m + hw), "bound_all_E": float(ba),
             "bound_low_E": float(bl), "slope_fit": self.slope_}
            for e, m, hw, ba, bl in zip(eps, mean, half, bound_all, bound_low)
        ]
        return self


def wegner_mc(model, L, E, epsilon_list, n_real, seed, **kw):
    """Functional form of :class:`WegnerEstimator`; returns the table rows."""
    return WegnerEstimator(model=model, L=L, E=E, epsilons=epsilon_list, n_real=n_real, seed=seed,
                           **kw).fit().table_


# eigenvalue lifting ---------------------------------------------------------

class EigenvalueLifting(BaseEstimator):
    """Ground-state energy ``lambda(t)`` of ``H0 + t W`` along a grid of ``t``.

    ``W`` is the sum of the ``Gamma_1`` single-site potentials of ``model``.
    The empirical lifting rate is ``kappa_emp = C_- * min_t r(t)`` with
    ``r(t)`` the ball mass ratio of the ground state of ``H0 + t W``.
    Derivatives are compared with ``<psi, W psi>`` through central differences
    with step ``eta``.
    """

    def __init__(self, model=None, L=15, d=1, bc="periodic", nodes_per_unit=40,
                 t_values=tuple(np.linspace(0.0, 1.0, 11)), eta=1e-4, gap_tol=1e-10,
                 config=CarlemanConfig()):
        self.model = model
        self.L = L
        self.d = d
        self.bc = bc
        self.nodes_per_unit = nodes_per_unit
        self.t_values = t_values
        self.eta = eta
        self.gap_tol = gap_tol
        self.config = config

    def fit(self, X=None, y=None):
        model = self.model or DeloneAndersonModel()
        bc = check_bc(self.bc)
        grid = _grid_for(self.L, self.d, bc, self.nodes_per_unit)
        H0 = build_hamiltonian(grid, model.background(grid), bc)
        W = model.gamma1_sum(grid)
        box = grid.box
        pts, n1 = model.sites(box)
        arr = lattice_arrangement(box, model.delta_minus) if model.arrangement is None else model.arrangement
        t = np.asarray(self.t_values, dtype=float)
        lam, hf_lhs, hf_rhs, ratios, skipped = [], [], [], [], []
        for ti in t:
            Ht = H0.shifted(W, ti)
            pairs = eigs_lowest(Ht, 2)
            g = pairs[0]
            lam.append(g.eigenvalue)
            ratios.append(mass_ratio(g.psi, arr))
            hf_rhs.append(float(grid.cell_volume * np.sum(W.values * g.psi.values**2)))
            if pairs[1].eigenvalue - g.eigenvalue < self.gap_tol:
                skipped.append(float(ti))
                log.info("degenerate ground state at t=%g; derivative check skipped", ti)
                hf_lhs.append(math.nan)
                continue
            up = eigs_lowest(H0.shifted(W, ti + self.eta), 1)[0].eigenvalue
            dn = eigs_lowest(H0.shifted(W, ti - self.eta), 1)[0].eigenvalue
            hf_lhs.append((up - dn) / (2 * self.eta))
        self.t_ = t
        self.lambda_ = np.array(lam)
        self.hf_lhs_ = np.array(hf_lhs)
        self.hf_rhs_ = np.array(hf_rhs)
        self.ratios_ = np.array(ratios)
        self.skipped_ = skipped
        self.kappa_emp_ = model.C_minus * float(self.ratios_.min())
        K_V = float(np.max(np.abs(H0.potential.values))) + model.C_plus + abs(self.lambda_[0])
        self.kappa_analytic_ = model.C_minus * constants.c_sfuc(self.d, K_V, model.delta_minus, bc,
                                                                self.config.C_dim)
        self.H0_ = H0
        self.W_ = W
        return self

    @property
    def hf_residuals_(self):
        return np.abs(self.hf_lhs_ - self.hf_rhs_)

    def lift_margins(self, factor=0.95):
        """``lambda(t) - lambda(0) - factor * kappa_emp * t``."""
        return self.lambda_ - self.lambda_[0] - factor * self.kappa_emp_ * self.t_

    def second_differences(self):
        """Second differences of ``lambda`` on the (possibly non-uniform) ``t`` grid, scaled
        to the uniform form ``lambda(t-) - 2 lambda(t) + lambda(t+)``."""
        t, lam = self.t_, self.lambda_
        if len(t) < 3:
            return np.zeros(0)
        h1 = np.diff(t)[:-1]
        h2 = np.diff(t)[1:]
        slope_change = (lam[2:] - lam[1:-1]) / h2 - (lam[1:-1] - lam[:-2]) / h1
        return slope_change * 0.5 * (h1 + h2)

    def curve_rows(self):
        return [{"t": float(a), "lambda": float(b), "hf_lhs": float(c), "hf_rhs": float(e)}
                for a, b, c, e in zip(self.t_, self.lambda_, self.hf_lhs_, self.hf_rhs_)]


def eigenvalue_lift(model, t_grid, L, bc, **kw):
    """Functional form of :class:`EigenvalueLifting`; returns the fitted estimator."""
    return EigenvalueLifting(model=model, t_values=tuple(t_grid), L=L, bc=bc, **kw).fit()


# uncertainty principle --------------------------------------------------------

@dataclass
class UncertaintyResult:
    status: str
    min_eigenvalue: float
    dim: int
    bound: float
    energy_cut: float
    ok: bool


def uncertainty_check(H0, W, q, kappa, tol=0.05, energy_cut=None):
    """Smallest eigenvalue of ``P W P`` on ``ran P``, ``P = chi_I(H0)``.

    ``I = (-inf, lambda_1(H0) + q kappa]`` unless ``energy_cut`` gives the upper
    end explicitly.  ``ok`` means the minimum is at least
    ``(1 - q) kappa (1 - tol)``.  An empty ``ran P`` is reported with status
    ``"EmptyProjector"`` and counts as a pass.
    """
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    check_positive(kappa, "kappa")
    A = H0.matrix.toarray()
    evals, evecs = sla.eigh(A)
    cut = evals[0] + q * kappa if energy_cut is None else float(energy_cut)
    sel = evals <= cut
    bound = (1 - q) * kappa
    if not sel.any():
        return UncertaintyResult("EmptyProjector", math.nan, 0, bound, cut, True)
    w = W.values[H0.mask] if isinstance(W, GridFunction) else np.asarray(W, dtype=float)
    V = evecs[:, sel]
    compression = V.T @ (w[:, None] * V)
    lo = float(sla.eigvalsh(compression)[0])
    ok = lo >= bound * (1 - tol)
    return UncertaintyResult("ok" if ok else "fail", lo, int(sel.sum()), bound, cut, bool(ok))


# spectral shift function ------------------------------------------------------

@dataclass
class SsfRecord:
    """Step function ``xi = N_1 - N_2`` on the merged spectra.

    ``xi[i]`` is the value on ``[breakpoints[i], breakpoints[i+1])``; the function
    vanishes below the first breakpoint and above the last.
    """

    breakpoints: np.ndarray
    xi: np.ndarray
    evals1: np.ndarray = field(repr=False, default=None)
    evals2: np.ndarray = field(repr=False, default=None)

    def __call__(self, lam):
        i = np.searchsorted(self.breakpoints, lam, side="right") - 1
        return np.where(i >= 0, self.xi[np.clip(i, 0, None)], 0)

    def integrate_derivative(self, rho):
        """``int rho'(lam) xi(lam) dlam`` evaluated exactly on each step."""
        vals = rho(self.breakpoints)
        return float(np.sum(self.xi[:-1] * np.diff(vals)))

    def integrate(self, f, **kw):
        """``int f xi`` by adaptive quadrature on each step."""
        total = 0.0
        for lo, hi, x in zip(self.breakpoints[:-1], self.breakpoints[1:], self.xi[:-1]):
            if x and hi > lo:
                total += x * integrate.quad(f, lo, hi, **kw)[0]
        return total


def _dense(H):
    if hasattr(H, "matrix"):
        H = H.matrix
    return H.toarray() if sp.issparse(H) else np.asarray(H, dtype=float)


def ssf(H1, H2, centers=None, eps=0.1, check_positive_perturbation=True):
    """Spectral shift of the pair ``(H1, H2)`` with ``H2 - H1 >= 0``.

    Returns ``(record, max_residual)`` where the residual is the largest
    deviation in the trace identity ``Tr[rho(H2) - rho(H1)] = int rho' xi`` over
    switch functions ``rho_eps`` shifted to ``centers``.
    """
    A1, A2 = _dense(H1), _dense(H2)
    if check_positive_perturbation:
        lo = sla.eigvalsh(A2 - A1)[0]
        if lo < -1e-10 * max(1.0, np.abs(A1).max()):
            raise ValueError(f"H2 - H1 is not positive semidefinite (min eigenvalue {lo})")
    e1, e2 = sla.eigvalsh(A1), sla.eigvalsh(A2)
    bp = np.unique(np.concatenate([e1, e2]))
    n1 = np.searchsorted(e1, bp, side="right")
    n2 = np.searchsorted(e2, bp, side="right")
    rec = SsfRecord(bp, (n1 - n2).astype(int), e1, e2)
    if centers is None:
        centers = np.linspace(bp[0] - 2 * eps, bp[-1] + 2 * eps, 25)
    rho = SwitchFunction(eps)
    res = 0.0
    for c in centers:
        shifted = lambda x, c=c: rho(np.asarray(x) - c)  # noqa: E731
        lhs = float(np.sum(shifted(e2)) - np.sum(shifted(e1)))
        res = max(res, abs(lhs - rec.integrate_derivative(shifted)))
    return rec, res


def ssf_bound_report(record, f, a, b, K1=1.0, K2=1.0, d=1, n_quad=4001):
    """``int f xi`` next to ``K1 e^b + K2 ln(1 + ||f||_inf)^d ||f||_1`` (report only)."""
    x = np.linspace(a, b, n_quad)
    fx = np.asarray(f(x), dtype=float)
    val = record.integrate(f, limit=200)
    f1 = float(integrate.trapezoid(np.abs(fx), x))
    bound = K1 * math.exp(b) + K2 * math.log(1 + float(np.max(np.abs(fx)))) ** d * f1
    return {"integral": val, "bound": bound, "ratio": val / bound if bound else math.nan}


# single-site averaging lemma ----------------------------------------------------

@dataclass
class SmeRow:
    label: str
    epsilon: float
    lhs: float
    rhs: float
    margin: float
    ok: bool


def _is_monotone(phi, a, b, n=2001):
    x = np.linspace(a, b, n)
    return bool(np.all(np.diff(np.asarray(phi(x), dtype=float)) >= -1e-14))


def switch_family(a, b, widths=(0.05, 0.1, 0.2, 1 / 3), n_centers=9):
    """Shifted switch functions ``rho_eta(x - c)`` with centres spread over ``[a - 1, b + 1]``."""
    fam = []
    for w in widths:
        sw = SwitchFunction(w)
        for c in np.linspace(a - 1, b + 1, n_centers):
            fam.append((f"rho_{w:.4g}@{c:.4g}", lambda x, sw=sw, c=c: sw(np.asarray(x) - c)))
    return fam


def sme_check(dist, phi_family, epsilon_grid, a=None, b=None, tol=1e-10):
    """Check ``int [phi(l + eps) - phi(l)] dmu(l) <= s(eps) [phi(b + eps) - phi(a)]``.

    ``phi_family`` is a sequence of ``(label, phi)`` pairs; ``[a, b]`` defaults to
    the support of ``dist``.
    """
    lo, hi = dist.support
    a = lo if a is None else a
    b = hi if b is None else b
    if a > lo or b < hi:
        raise ValueError("[a, b] must contain the support of the distribution")
    rows = []
    for label, phi in phi_family:
        if not _is_monotone(phi, a - 1, b + 1 + max(epsilon_grid)):
            raise ValueError(f"{label} is not non-decreasing")
        for eps in epsilon_grid:
            lhs = dist.expect(lambda x: float(phi(x + eps) - phi(x)))
            rhs = modulus_of_continuity(dist, eps) * float(phi(b + eps) - phi(a))
            rows.append(SmeRow(label, float(eps), lhs, rhs, rhs - lhs, lhs <= rhs + tol))
    return rows


def default_lift_model(V0=None, delta=0.3, C_minus=1.0):
    """Indicator balls of radius ``delta`` on the unit lattice, couplings ``Uniform[0, 1]``."""
    return DeloneAndersonModel(V0=V0, C_minus=C_minus, C_plus=C_minus, delta_minus=delta,
                               delta_plus=min(0.5, delta + 0.1), profile="indicator")


def cosine_background(amplitude=0.5):
    """``V0(x) = amplitude * cos(2 pi x_1)``."""
    def V0(coords):
        return amplitude * np.cos(2 * np.pi * coords[:, 0])
    V0.__qualname__ = f"cosine_background({amplitude})"
    return V0

