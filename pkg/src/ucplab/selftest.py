"""A fast run of the core invariants, for checking an installation."""

import math

import numpy as np

from . import constants
from .anderson import ssf
from .geometry import BoxSpec, generate_delone, validate_delone
from .operator import Grid, build_hamiltonian, eigs_lowest, mass
from .rng import site_uniforms
from .ucp import classify_sites, extend_function


def _symmetry():
    g = Grid(BoxSpec(2, 5, bc="dirichlet"), 20)
    rng = np.random.default_rng(1)
    H = build_hamiltonian(g, rng.uniform(-1, 1, g.shape))
    u, v = rng.standard_normal((2, H.dim))
    err = abs(u @ (H.matrix @ v) - v @ (H.matrix @ u))
    return err < 1e-12 * H.norm_estimate() * np.linalg.norm(u) * np.linalg.norm(v), f"asymmetry {err:.2e}"


def _free_dirichlet():
    g = Grid(BoxSpec(1, 1.0, bc="dirichlet"), 100)
    lam = eigs_lowest(build_hamiltonian(g), 3)
    exact = [(4 / g.h**2) * math.sin(m * math.pi * g.h / 2) ** 2 for m in (1, 2, 3)]
    err = max(abs(p.eigenvalue - e) / e for p, e in zip(lam, exact))
    return err < 1e-10, f"relative error {err:.2e}"


def _lanczos():
    g = Grid(BoxSpec(2, 5, bc="periodic"), 50)
    H = build_hamiltonian(g, g.sample(lambda c: 0.5 * np.cos(2 * np.pi * c[:, 0])))
    a = eigs_lowest(H, 5, method="dense")
    b = eigs_lowest(H, 5, method="lanczos")
    err = max(abs(x.eigenvalue - y.eigenvalue) for x, y in zip(a, b))
    return err < 1e-8, f"max eigenvalue difference {err:.2e}"


def _cover():
    g = Grid.for_box(BoxSpec(1, 5, bc="periodic"), 20)
    psi = eigs_lowest(build_hamiltonian(g, g.sample(lambda c: np.cos(2 * np.pi * c[:, 0]))), 3)[2].psi
    cls = classify_sites(psi)
    return cls.cover_residual < 1e-10 and cls.weak_fraction <= 0.52, \
        f"cover residual {cls.cover_residual:.1e}, weak fraction {cls.weak_fraction:.3f}"


def _extension():
    g = Grid.for_box(BoxSpec(2, 3, bc="dirichlet"), 8)
    psi = eigs_lowest(build_hamiltonian(g), 2)[1].psi
    ext = extend_function(psi)
    err = abs(mass(ext) - 4 * mass(psi))
    return err < 1e-10, f"norm defect {err:.1e}"


def _weights():
    rng = np.random.default_rng(2)
    ok = True
    for rho in (0.1, 1.0, 24.0):
        x = rng.uniform(-1, 1, (1000, 3))
        x *= (rng.uniform(0, rho, 1000) / np.linalg.norm(x, axis=1))[:, None]
        r = np.linalg.norm(x, axis=1) / rho
        w = constants.weight(x, rho)
        ok &= bool(np.all(w >= r / 3 - 1e-10) and np.all(w <= r + 1e-10))
    p1 = constants.phi(1.0)
    return ok and abs(p1 - 0.45090) < 1e-4, f"phi(1) = {p1:.6f}"


def _ssf():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((60, 60))
    A = (A + A.T) / 2
    v = rng.standard_normal((60, 2))
    rec, res = ssf(A, A + v @ v.T)
    return res < 1e-8 and rec.xi.min() >= 0 and rec.xi.max() <= 2, f"trace residual {res:.1e}"


def _rng():
    a = site_uniforms(11, 4, 50)
    b = site_uniforms(11, 4, 20)
    return bool(np.array_equal(a[:20], b)), "prefix stability"


def _delone():
    box = BoxSpec(2, 7)
    arr = generate_delone(2, 0.9, 1, box, seed=7)
    res = validate_delone(arr.points, 0.9, 1, box)
    return bool(res), f"validation {res}"


CHECKS = [
    ("hamiltonian symmetry", _symmetry),
    ("free Dirichlet spectrum", _free_dirichlet),
    ("Lanczos vs dense", _lanczos),
    ("cover identity and weak mass", _cover),
    ("antisymmetric extension norm", _extension),
    ("Carleman weight bounds", _weights),
    ("spectral shift trace identity", _ssf),
    ("counter-based streams", _rng),
    ("Delone generation", _delone),
]


def run_selftest():
    results = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
