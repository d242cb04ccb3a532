"""Finite-difference Schroedinger operators ``-Delta_h + V`` on boxes.

Grid convention
---------------
A box ``[c - L/2, c + L/2]^d`` with ``n`` nodes per side carries the nodes
``x_i = c - L/2 + i h``, ``i = 0 .. n-1``, ``h = L / n``, for both boundary
conditions.  Periodic: the nodes form a torus.  Dirichlet: the nodes with some
index ``0`` lie on the lower faces and are pinned to zero, the upper faces are
implicit zeros, and the unknowns are the ``(n - 1)^d`` interior nodes.  With
``n`` a multiple of ``L`` every half-open unit cell ``[k - 1/2, k + 1/2)^d``
holds exactly ``(n / L)^d`` nodes.

Integrals are node sums with weight ``h^d``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._lanczos import lanczos_lowest
from ._validation import check_bc, check_positive
from .exceptions import BadPotential, EigNotConverged
from .geometry import BoxSpec

DEFAULT_NODE_CAP = 200_000
DENSE_LIMIT = 4000
DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    box: BoxSpec
    n_per_side: int
    cap: int = DEFAULT_NODE_CAP

    def __post_init__(self):
        n = int(self.n_per_side)
        if n < 2:
            raise ValueError("need at least 2 nodes per side")
        if n**self.box.d > self.cap:
            raise ValueError(f"{n}^{self.box.d} grid points exceed the cap of {self.cap}")
        object.__setattr__(self, "n_per_side", n)

    @classmethod
    def for_box(cls, box, nodes_per_unit, **kw):
        return cls(box, int(round(box.L * nodes_per_unit)), **kw)

    @property
    def d(self):
        return self.box.d

    @property
    def h(self):
        return self.box.L / self.n_per_side

    @property
    def cell_volume(self):
        return self.h**self.d

    @property
    def shape(self):
        return (self.n_per_side,) * self.d

    @property
    def size(self):
        return self.n_per_side**self.d

    @property
    def bc(self):
        return self.box.bc

    @property
    def nodes_per_unit(self):
        """Nodes per unit length, or ``None`` when ``n / L`` is not an integer."""
        q = self.n_per_side / self.box.L
        return int(round(q)) if abs(q - round(q)) < 1e-9 else None

    def axis(self, i=0):
        return self.box.lower[i] + self.h * np.arange(self.n_per_side)

    def coords(self):
        """Node coordinates, shape ``(size, d)`` in C order."""
        axes = [self.axis(i) for i in range(self.d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interior_mask(self):
        """Nodes carrying unknowns (all nodes for periodic boxes)."""
        mask = np.ones(self.shape, dtype=bool)
        if self.bc == "dirichlet":
            for ax in range(self.d):
                idx = [slice(None)] * self.d
                idx[ax] = 0
                mask[tuple(idx)] = False
        return mask

    def sample(self, func):
        """Sample ``func(coords) -> values`` at the nodes."""
        vals = np.asarray(func(self.coords()), dtype=float)
        if vals.ndim == 0:
            vals = np.full(self.size, float(vals))
        return GridFunction(self, vals.reshape(self.shape))

    def zeros(self):
        return GridFunction(self, np.zeros(self.shape))


@dataclass
class GridFunction:
    """Real samples on the nodes of a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.grid.size:
            raise ValueError(f"{vals.size} values for a grid of {self.grid.size} nodes")
        self.values = vals.reshape(self.grid.shape)

    def norm2(self):
        return float(self.grid.cell_volume * np.sum(self.values**2))

    def sup(self):
        return float(np.max(np.abs(self.values)))

    def __add__(self, other):
        other_vals = other.values if isinstance(other, GridFunction) else other
        return GridFunction(self.grid, self.values + other_vals)

    def __mul__(self, scalar):
        return GridFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__


def laplacian_1d(n, h, bc):
    """``-d^2/dx^2`` on ``n`` nodes: ``n`` unknowns (periodic) or ``n - 1`` (Dirichlet)."""
    bc = check_bc(bc)
    if bc == "periodic":
        rows = np.concatenate([np.arange(n)] * 3)
        cols = np.concatenate([np.arange(n), (np.arange(n) + 1) % n, (np.arange(n) - 1) % n])
        vals = np.concatenate([np.full(n, 2.0), np.full(n, -1.0), np.full(n, -1.0)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n)) / h**2
    m = n - 1
    return sp.diags([np.full(m - 1, -1.0), np.full(m, 2.0), np.full(m - 1, -1.0)], [-1, 0, 1],
                    format="csr") / h**2


def kron_laplacian(grid, bc):
    bc = check_bc(bc)
    A1 = laplacian_1d(grid.n_per_side, grid.h, bc)
    m = A1.shape[0]
    total = None
    for ax in range(grid.d):
        factors = [sp.identity(m, format="csr")] * grid.d
        factors[ax] = A1
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        total = term if total is None else total + term
    return total.tocsr()


@dataclass
class DiscreteHamiltonian:
    """Sparse symmetric ``-Delta_h + V`` acting on the unknown nodes of ``grid``."""

    grid: Grid
    bc: str
    potential: GridFunction
    matrix: sp.csr_matrix
    mask: np.ndarray = field(repr=False, default=None)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def to_vector(self, f):
        vals = f.values if isinstance(f, GridFunction) else np.asarray(f).reshape(self.grid.shape)
        return vals[self.mask]

    def to_function(self, vec):
        vals = np.zeros(self.grid.shape)
        vals[self.mask] = vec
        return GridFunction(self.grid, vals)

    def norm_estimate(self):
        return float(abs(self.matrix).sum(axis=1).max())

    def lower_bound(self):
        """Gershgorin lower bound on the spectrum."""
        A = self.matrix
        diag = A.diagonal()
        off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
        return float(np.min(diag - off))

    def with_potential(self, V):
        return build_hamiltonian(self.grid, V, self.bc)

    def shifted(self, W, t):
        """``H + t W`` sharing the kinetic part."""
        w = W.values if isinstance(W, GridFunction) else np.asarray(W).reshape(self.grid.shape)
        extra = sp.diags(t * w[self.mask])
        pot = GridFunction(self.grid, self.potential.values + t * w)
        return DiscreteHamiltonian(self.grid, self.bc, pot, (self.matrix + extra).tocsr(), self.mask)


def build_hamiltonian(grid, V=None, bc=None):
    """Assemble ``-Delta_h + V`` with the standard ``2d + 1`` point stencil.

    ``V`` may be a :class:`GridFunction`, an array of node values or a callable
    ``V(coords) -> values`` sampled at the nodes.
    """
    bc = check_bc(bc or grid.bc)
    if V is None:
        V = grid.zeros()
    elif callable(V):
        V = grid.sample(V)
    elif not isinstance(V, GridFunction):
        V = GridFunction(grid, V)
    if not np.all(np.isfinite(V.values)):
        raise BadPotential("potential contains NaN or Inf")
    mask = np.ones(grid.shape, bool) if bc == "periodic" else _dirichlet_mask(grid)
    A = kron_laplacian(grid, bc) + sp.diags(V.values[mask])
    return DiscreteHamiltonian(grid, bc, V, A.tocsr(), mask)


def _dirichlet_mask(grid):
    g = Grid(BoxSpec(grid.d, grid.box.L, grid.box.center, "dirichlet"), grid.n_per_side, grid.cap)
    return g.interior_mask()


@dataclass
class EigenPair:
    eigenvalue: float
    psi: GridFunction
    residual: float = 0.0


def _fix_sign(vec):
    i = int(np.argmax(np.abs(vec)))
    return -vec if vec[i] < 0 else vec


def eigs_lowest(H, k, tol=DEFAULT_TOL, method="auto", seed=0):
    """The ``k`` lowest eigenpairs of ``H`` in non-decreasing order.

    ``method`` is ``"dense"`` (LAPACK), ``"lanczos"`` (shift-invert Lanczos with
    full reorthogonalisation) or ``"auto"`` (dense up to 4000 unknowns).  The
    eigenfunctions are normalised in ``L^2`` with weight ``h^d``; the sign is
    fixed so that the entry of largest modulus is positive.
    """
    check_positive(tol, "tol")
    n = H.dim
    if not 0 < k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    norm_est = H.norm_estimate()
    if method == "dense":
        vals, vecs = sla.eigh(H.matrix.toarray(), subset_by_index=[0, k - 1])
    elif method == "lanczos":
        sigma = H.lower_bound() - 1.0
        vals, vecs, _ = lanczos_lowest(H.matrix, k, tol=tol, sigma=sigma, seed=seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    scale = 1.0 / np.sqrt(H.grid.cell_volume)
    pairs = []
    residuals = []
    for j in range(k):
        v = _fix_sign(vecs[:, j])
        Av = H.matrix @ v
        res = float(np.linalg.norm(Av - vals[j] * v) / (norm_est + abs(vals[j])))
        residuals.append(res)
        pairs.append(EigenPair(float(vals[j]), H.to_function(v * scale), res))
    if max(residuals) > tol:
        raise EigNotConverged(f"residual {max(residuals):.3e} above tolerance {tol}", residuals)
    return pairs


def spectrum(H):
    """All eigenvalues of ``H`` (dense)."""
    return sla.eigvalsh(H.matrix.toarray())


def count_eigenvalues(evals, a, b):
    """Number of entries of the sorted array ``evals`` inside the closed interval ``[a, b]``."""
    return int(np.searchsorted(evals, b, side="right") - np.searchsorted(evals, a, side="left"))


def _negcount_dense(A, s):
    """Number of eigenvalues below ``s`` from the inertia of an LDL^T factorisation,
    or ``None`` when a pivot vanishes."""
    n = A.shape[0]
    _, D, _ = sla.ldl(A - s * np.eye(n))
    scale = max(1.0, np.abs(np.diag(D)).max())
    neg = 0
    i = 0
    while i < n:
        if i + 1 < n and D[i + 1, i] != 0.0:
            blk = D[i:i + 2, i:i + 2]
            ev = np.linalg.eigvalsh(blk)
            if np.any(np.abs(ev) < 1e-14 * scale):
                return None
            neg += int(np.sum(ev < 0))
            i += 2
        else:
            if abs(D[i, i]) < 1e-14 * scale:
                return None
            neg += int(D[i, i] < 0)
            i += 1
    return neg


def _negcount_sparse(A, s):
    n = A.shape[0]
    try:
        lu = spla.splu(sp.csc_matrix(A - s * sp.identity(n)), permc_spec="MMD_AT_PLUS_A",
                       diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError:
        return None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise RuntimeError("sparse LU used non-symmetric pivoting; inertia unavailable")
    piv = lu.U.diagonal()
    if np.any(np.abs(piv) < 1e-14 * max(1.0, np.abs(piv).max())):
        return None
    return int(np.sum(piv < 0))


def _negcount(A, s, sparse, nudge):
    counter = _negcount_sparse if sparse else _negcount_dense
    for shift in (0.0, nudge, -nudge, 10 * nudge):
        out = counter(A, s + shift)
        if out is not None:
            return out
    raise RuntimeError(f"singular factorisation at shift {s} despite nudging")


def count_in_interval(H, a, b, method="auto"):
    """Number of eigenvalues of ``H`` in the closed interval ``[a, b]``.

    ``"dense"`` counts a full dense spectrum; ``"inertia"`` and
    ``"sparse-inertia"`` use Sylvester's law of inertia on ``LDL^T``
    factorisations of ``H - a`` and ``H - b``.  A shift that hits an eigenvalue
    is nudged by ``1e-12`` (relative to ``||H||``).
    """
    if a > b:
        raise ValueError("need a <= b")
    A = H.matrix if isinstance(H, DiscreteHamiltonian) else H
    n = A.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "sparse-inertia"
    if method == "dense":
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        return count_eigenvalues(sla.eigvalsh(dense), a, b)
    sparse = method == "sparse-inertia"
    if not sparse:
        A = A.toarray() if sp.issparse(A) else np.asarray(A)
    norm = float(abs(A).sum(axis=1).max()) if sp.issparse(A) else float(np.abs(A).sum(axis=1).max())
    nudge = 1e-12 * max(1.0, norm)
    upper = n if np.isposinf(b) else _negcount(A, b + nudge, sparse, nudge)
    lower = 0 if np.isneginf(a) else _negcount(A, a - nudge, sparse, nudge)
    return int(upper - lower)


class SwitchFunction:
    """Non-decreasing C^1 switch: ``-1`` on ``(-inf, -eps]``, ``0`` on ``[eps, inf)``.

    In between it is the smoothstep ``-1 + 3 t^2 - 2 t^3`` with
    ``t = (x + eps) / (2 eps)``, whose slope peaks at ``0.75 / eps``.
    """

    def __init__(self, eps):
        if not 0 < eps <= 1 / 3:
            raise ValueError(f"eps must lie in (0, 1/3], got {eps}")
        self.eps = float(eps)

    def __call__(self, x):
        t = np.clip((np.asarray(x, dtype=float) + self.eps) / (2 * self.eps), 0.0, 1.0)
        return -1.0 + t * t * (3.0 - 2.0 * t)

    def derivative(self, x):
        t = np.clip((np.asarray(x, dtype=float) + self.eps) / (2 * self.eps), 0.0, 1.0)
        return 6.0 * t * (1.0 - t) / (2 * self.eps)

    @property
    def max_slope(self):
        return 0.75 / self.eps

    def __repr__(self):
        return f"SwitchFunction(eps={self.eps!r})"


def rho_switch(epsilon):
    return SwitchFunction(epsilon)


# regions -------------------------------------------------------------------

_EDGE = 1e-10


class Region:
    def mask(self, coords):
        raise NotImplementedError

    def __or__(self, other):
        return Union(self, other)


class Everywhere(Region):
    def mask(self, coords):
        return np.ones(len(coords), dtype=bool)


@dataclass(frozen=True)
class Ball(Region):
    """Open Euclidean ball; nodes within ``1e-10`` of the sphere count as outside."""

    center: tuple
    radius: float

    def mask(self, coords):
        r = np.linalg.norm(coords - np.asarray(self.center, dtype=float), axis=1)
        return r < self.radius - _EDGE * max(1.0, self.radius)


@dataclass(frozen=True)
class Annulus(Region):
    """``r_in <= |x - center| < r_out``."""

    center: tuple
    r_in: float
    r_out: float

    def mask(self, coords):
        r = np.linalg.norm(coords - np.asarray(self.center, dtype=float), axis=1)
        tol = _EDGE * max(1.0, self.r_out)
        return (r >= self.r_in - tol) & (r < self.r_out - tol)


@dataclass(frozen=True)
class Box(Region):
    """Half-open cube ``[center - side/2, center + side/2)^d``."""

    center: tuple
    side: float

    def mask(self, coords):
        lo = np.asarray(self.center, dtype=float) - self.side / 2
        tol = _EDGE * max(1.0, self.side)
        return np.all((coords >= lo - tol) & (coords < lo + self.side - tol), axis=1)


class Union(Region):
    def __init__(self, *regions):
        self.regions = regions

    def mask(self, coords):
        out = np.zeros(len(coords), dtype=bool)
        for r in self.regions:
            out |= r.mask(coords)
        return out


def region_mask(grid, region):
    if region is None:
        return np.ones(grid.shape, dtype=bool)
    if isinstance(region, np.ndarray):
        return region.reshape(grid.shape).astype(bool)
    return region.mask(grid.coords()).reshape(grid.shape)


def mass(psi, region=None):
    """``h^d * sum psi(x)^2`` over the nodes of ``region`` (whole grid by default)."""
    m = region_mask(psi.grid, region)
    return float(psi.grid.cell_volume * np.sum(psi.values[m] ** 2))


def forward_differences(psi, bc=None):
    """Forward differences along every axis; shape ``(d, *grid.shape)``."""
    bc = check_bc(bc or psi.grid.bc)
    v = psi.values
    h = psi.grid.h
    out = []
    for ax in range(psi.grid.d):
        if bc == "periodic":
            nxt = np.roll(v, -1, axis=ax)
        else:
            nxt = np.zeros_like(v)
            src = [slice(None)] * v.ndim
            dst = [slice(None)] * v.ndim
            src[ax] = slice(1, None)
            dst[ax] = slice(0, -1)
            nxt[tuple(dst)] = v[tuple(src)]
        out.append((nxt - v) / h)
    return np.array(out)


def gradient_mass(psi, region=None, bc=None):
    """``h^d * sum |grad_h psi|^2`` with forward differences over ``region``."""
    g = forward_differences(psi, bc)
    m = region_mask(psi.grid, region)
    return float(psi.grid.cell_volume * np.sum((g**2).sum(axis=0)[m]))


def apply_laplacian(psi, bc=None):
    """``Delta_h psi`` as a grid function (zero on pinned Dirichlet nodes)."""
    bc = check_bc(bc or psi.grid.bc)
    H0 = build_hamiltonian(psi.grid, None, bc)
    return H0.to_function(-(H0.matrix @ H0.to_vector(psi)))
