"""Explicit constants of the quantitative and scale-free unique continuation
estimates and of the Wegner bound.

Most constants are astronomically small (``(delta / 48R)^(2 alpha)`` with
``alpha`` in the hundreds underflows a double), so every constant has a
``log_*`` twin that is exact; the plain versions simply exponentiate.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from ._validation import check_bc, check_dim, check_positive
from .exceptions import DeltaTooLarge, GeometryViolation
from .geometry import ceil_sqrt

SERIES_CUTOFF = 8.0
T_SCALE_FREE = 62  # T = 62 ceil(sqrt d) for dominating boxes
T_LOCAL_FLUCT = 30  # T = 30 ceil(sqrt d) for the local-fluctuation estimate


def _ein_series(s):
    # int_0^s (1 - e^-t)/t dt = sum_{k>=1} (-1)^(k+1) s^k / (k k!)
    terms = []
    term = 1.0
    k = 1
    while True:
        term *= s / k  # s^k / k!
        t = term / k
        terms.append(t if k % 2 else -t)
        if t < 1e-18 and k > s:
            break
        k += 1
    return math.fsum(terms)


def _ein(s):
    if s <= SERIES_CUTOFF:
        return _ein_series(s)
    tail, _ = integrate.quad(lambda t: -math.expm1(-t) / t, SERIES_CUTOFF, s,
                             epsabs=1e-14, epsrel=1e-14, limit=200)
    return _ein_series(SERIES_CUTOFF) + tail


def phi(s):
    """Carleman profile ``phi(s) = s * exp(-int_0^s (1 - e^-t)/t dt)`` for ``s >= 0``.

    Accepts scalars or arrays.
    """
    arr = np.asarray(s, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("phi is defined for finite s >= 0")
    if arr.ndim == 0:
        x = float(arr)
        return x * math.exp(-_ein(x))
    out = np.empty_like(arr)
    for i, x in np.ndenumerate(arr):
        out[i] = x * math.exp(-_ein(float(x)))
    return out


def weight(x, rho):
    """Radial Carleman weight ``w_rho(x) = phi(|x| / rho)``; ``x`` has shape ``(..., d)``."""
    rho = check_positive(rho, "rho")
    r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
    return phi(r / rho)


@dataclass(frozen=True)
class CarlemanConfig:
    """Dimension constants that the estimates leave symbolic.

    The defaults are placeholders, not the true constants; every report echoes
    the configuration it was computed with.
    """

    C2: float = 1.0
    C3: float = 1.0
    K_Delta: float = 1.0
    C_dim: float = math.e

    def __post_init__(self):
        if self.C2 < 1 or self.C3 < 1:
            raise ValueError("C2 and C3 must be >= 1")
        check_positive(self.K_Delta, "K_Delta")
        if not self.C_dim > 1:
            raise ValueError("C_dim must be > 1")


@dataclass(frozen=True)
class UcpParams:
    d: int
    K_V: float
    D_0: float
    R: float
    delta: float
    beta: float

    def __post_init__(self):
        check_dim(self.d)
        check_positive(self.K_V, "K_V", strict=False)
        check_positive(self.D_0, "D_0")
        check_positive(self.R, "R")
        check_positive(self.delta, "delta")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")


def alpha_bounds(p, c=CarlemanConfig()):
    """The three lower bounds on the Carleman exponent ``alpha``.

    The logarithmic bound is clamped at zero: a negative logarithm imposes no
    constraint.
    """
    b1 = c.C2
    b2 = (24.0**5 * c.C3 * p.K_V**2 * p.R**4) ** (1.0 / 3.0)
    D1 = min(p.D_0, 1.0)
    arg = (24.0 * p.R * c.K_Delta / p.D_0) ** 4 * c.C3 * (1.0 + p.K_V**2) / D1**2 * p.beta
    b3 = max(0.5 * math.log(arg), 0.0)
    return b1, b2, b3


def choose_alpha(p, c=CarlemanConfig()):
    """Smallest ``alpha`` satisfying all three sufficient conditions."""
    return max(alpha_bounds(p, c))


def log_c_quc_full(p, c=CarlemanConfig()):
    if not p.delta < 4 * p.R:
        raise GeometryViolation(f"need delta < 4R, got delta={p.delta}, R={p.R}")
    alpha = choose_alpha(p, c)
    return (math.log(5.0 / 16.0) - math.log(41.0)
            + 3 * math.log(c.C2) - math.log(c.C3) - 4 * math.log(c.K_Delta)
            + 4 * math.log(p.delta) - 2 * math.log(p.R)
            + 2 * alpha * math.log(p.delta / (48.0 * p.R))
            - math.log1p(p.K_V**2))


def c_quc_full(p, c=CarlemanConfig()):
    """Explicit lower bound on the quantitative unique continuation constant."""
    return math.exp(log_c_quc_full(p, c))


def log_c_quc_corollary(d, K_V, R, delta, beta, C_dim=math.e, simplified=False):
    d = check_dim(d)
    check_positive(K_V, "K_V", strict=False)
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if beta < 1:
        raise ValueError("beta must be >= 1")
    if R < math.sqrt(d):
        raise GeometryViolation(f"need R >= sqrt(d), got R={R}, d={d}")
    if simplified:
        if R > 2 * ceil_sqrt(d):
            raise GeometryViolation("simplified form needs R <= 2 ceil(sqrt d)")
        return (C_dim + C_dim * K_V ** (2 / 3) + math.log(beta)) * math.log(delta / C_dim)
    exponent = C_dim + C_dim * R ** (4 / 3) * K_V ** (2 / 3) + math.log(beta)
    return exponent * math.log(delta / (C_dim * R))


def c_quc_corollary(d, K_V, R, delta, beta, C_dim=math.e, simplified=False):
    """Closed-form constant ``(delta / (C R))^(C + C R^(4/3) K_V^(2/3) + ln beta)``.

    With ``simplified=True`` (allowed for ``R <= 2 ceil(sqrt d)``) the
    ``R``-free form ``(delta / C)^(C + C K_V^(2/3) + ln beta)`` is returned.
    """
    return math.exp(log_c_quc_corollary(d, K_V, R, delta, beta, C_dim, simplified))


def dominating_T(d):
    return T_SCALE_FREE * ceil_sqrt(d)


def beta_scale_free(d, bc):
    """Mass-ratio bound on dominating boxes: ``2 T^d`` (periodic), ``2 (2T)^d`` (Dirichlet)."""
    bc = check_bc(bc)
    T = dominating_T(d)
    return 2.0 * float(T) ** d if bc == "periodic" else 2.0 * float(2 * T) ** d


def log_c_sfuc(d, K_V, delta, bc="periodic", C_dim=math.e):
    bc = check_bc(bc)
    prefactor = 0.5 if bc == "periodic" else 0.25
    R = 2 * ceil_sqrt(d)
    return math.log(prefactor) + log_c_quc_corollary(d, K_V, R, delta, beta_scale_free(d, bc), C_dim)


def c_sfuc(d, K_V, delta, bc="periodic", C_dim=math.e):
    """Scale-free constant composed from the corollary constant at
    ``R = 2 ceil(sqrt d)`` and the dominating-box ``beta``."""
    return math.exp(log_c_sfuc(d, K_V, delta, bc, C_dim))


def log_c_sfuc_simplified(d, K_V, delta, C_dim=math.e):
    check_dim(d)
    return (C_dim + C_dim * K_V ** (2 / 3)) * math.log(delta / C_dim)


def c_sfuc_simplified(d, K_V, delta, C_dim=math.e):
    """Lower-bound form ``(delta / C)^(C + C K_V^(2/3))``."""
    return math.exp(log_c_sfuc_simplified(d, K_V, delta, C_dim))


def log_c_sfuc_dilute(d, K_V, delta, M, C_dim=math.e):
    check_dim(d)
    return (C_dim + C_dim * M ** (4 / 3) * K_V ** (2 / 3)) * math.log(delta / (C_dim * M))


def c_sfuc_dilute(d, K_V, delta, M, C_dim=math.e):
    """Constant for balls on the sub-lattice ``(M Z)^d``:
    ``(delta / (C M))^(C + C M^(4/3) K_V^(2/3))``."""
    return math.exp(log_c_sfuc_dilute(d, K_V, delta, M, C_dim))


@dataclass(frozen=True)
class LocalFluctuationConstants:
    log_c_lf: float
    log_c1: float
    log_beta: float
    log_beta_tilde: float
    T: int

    @property
    def c_lf(self):
        return math.exp(self.log_c_lf)

    @property
    def c1(self):
        return math.exp(self.log_c1)


def c_lf_parts(d, K_V, delta, config=CarlemanConfig(), bc="periodic"):
    """Two-step constant for mass fluctuations inside a dominating unit box.

    The maximal sub-box ratio is ``beta = 2 (10 ceil(sqrt d) T)^d`` with
    ``T = 30 ceil(sqrt d)``; the second step uses
    ``beta~ = 2 T^d / c1(1/20, beta)``.  Dirichlet boxes carry an extra ``2^d``
    in both.
    """
    d = check_dim(d)
    if not 0 < delta <= 1 / 20:
        raise DeltaTooLarge(f"delta must lie in (0, 1/20], got {delta}")
    bc = check_bc(bc)
    C = config.C_dim
    n = ceil_sqrt(d)
    T = T_LOCAL_FLUCT * n
    log_nsub = d * math.log(10 * n)
    log_bc = d * math.log(2) if bc == "dirichlet" else 0.0

    def log_cq(dl, log_beta):
        return (C + C * K_V ** (2 / 3) + log_beta) * math.log(dl / C)

    log_beta = math.log(2) + d * math.log(10 * n * T) + log_bc
    log_c1_20 = log_cq(1 / 20, log_beta) - log_nsub
    log_beta_t = math.log(2) + d * math.log(T) + log_bc - log_c1_20
    log_clf = log_cq(1 / 20, log_beta) + log_cq(delta, log_beta_t) - log_nsub
    log_c1 = log_cq(delta, log_beta) - log_nsub
    if log_clf > log_c1 + 1e-12:
        raise RuntimeError("C_lf exceeded c1; inconsistent constants")
    return LocalFluctuationConstants(log_clf, log_c1, log_beta, log_beta_t, T)


def c_lf(d, K_V, delta, config=CarlemanConfig(), bc="periodic"):
    return c_lf_parts(d, K_V, delta, config, bc).c_lf


def kappa_and_cw(C_minus, c_sfuc, E0, d, K1=1.0, K2=1.0):
    """Lifting rate ``kappa = C_- C_sfUC``, ``C_E = K1 e^(E0+1) + 2^d K2`` and
    ``C_W = C_E ceil(4 / kappa)``.

    ``K1`` and ``K2`` carry the dependence on the single-site support diameter.
    """
    check_positive(C_minus, "C_minus")
    check_positive(c_sfuc, "c_sfuc")
    kappa = C_minus * c_sfuc
    c_E = K1 * math.exp(E0 + 1) + 2.0**d * K2
    ratio = 4.0 / kappa
    c_W = c_E * math.ceil(ratio) if math.isfinite(ratio) else math.inf
    return kappa, c_E, c_W


@dataclass
class ConstantsReport:
    alpha: float
    c_quc: float
    log10_c_quc: float
    c_sfuc: float
    log10_c_sfuc: float
    c_sfuc_simplified: float
    c_lf: float
    log10_c_lf: float
    kappa: float
    c_E: float
    c_W: float
    config: CarlemanConfig
    params: UcpParams
    bc: str = "periodic"
    C_minus: float = 1.0
    E0: float = 0.0
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        out = asdict(self)
        out["config"] = asdict(self.config)
        out["params"] = asdict(self.params)
        return out

    def flat(self):
        """Single-level mapping for one-row CSV output."""
        row = {}
        for key, value in self.as_dict().items():
            if isinstance(value, dict):
                for sub, v in value.items():
                    row[f"{key}.{sub}"] = v
            else:
                row[key] = value
        return row


def constants_report(d, K_V, delta, bc="periodic", config=CarlemanConfig(), C_minus=1.0,
                     E0=0.0, K1=1.0, K2=1.0, M=1):
    """Evaluate every constant for the scale-free geometry.

    The full quantitative constant is evaluated in the situation of the
    dominating-box argument: ``R = D_0 = 2 ceil(sqrt d)`` and the
    boundary-condition dependent ``beta``.
    """
    bc = check_bc(bc)
    R = 2.0 * ceil_sqrt(d)
    params = UcpParams(d, K_V, D_0=R, R=R, delta=delta, beta=beta_scale_free(d, bc))
    alpha = choose_alpha(params, config)
    lq = log_c_quc_full(params, config)
    ls = log_c_sfuc(d, K_V, delta, bc, config.C_dim)
    sf = math.exp(ls)
    lf = math.nan
    if delta <= 1 / 20:
        lf = c_lf_parts(d, K_V, delta, config, bc).log_c_lf
    kappa, c_E, c_W = kappa_and_cw(C_minus, sf, E0, d, K1, K2) if sf > 0 else (0.0, math.nan, math.inf)
    extra = {"T": dominating_T(d), "M": M}
    if M > 1:
        extra["c_sfuc_dilute"] = c_sfuc_dilute(d, K_V, delta, M, config.C_dim)
    ln10 = math.log(10)
    return ConstantsReport(
        alpha=alpha, c_quc=math.exp(lq), log10_c_quc=lq / ln10,
        c_sfuc=sf, log10_c_sfuc=ls / ln10,
        c_sfuc_simplified=c_sfuc_simplified(d, K_V, delta, config.C_dim),
        c_lf=math.exp(lf) if math.isfinite(lf) else math.nan,
        log10_c_lf=lf / ln10 if math.isfinite(lf) else math.nan,
        kappa=kappa, c_E=c_E, c_W=c_W, config=config, params=params, bc=bc,
        C_minus=C_minus, E0=E0, extra=extra,
    )
