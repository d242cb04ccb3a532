import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from ucplab.exceptions import DeltaTooLarge, GeometryViolation, GridAlignment, NotDominating, UnderResolvedBall
from ucplab.geometry import BoxSpec, lattice_arrangement
from ucplab.operator import Ball, Grid, GridFunction, build_hamiltonian, eigs_lowest, mass
from ucplab.ucp import (UCPVerifier, cacciopoli_check, classify_sites, extend_function,
                        local_fluctuation_experiment, mass_ratio, maximal_subbox, pigeonhole_all, verify_ucp)


def cosine(c):
    return 0.5 * np.cos(2 * np.pi * c[:, 0])


def eigenfunctions(d, L, q, bc, k, seed=0):
    g = Grid.for_box(BoxSpec(d, L, bc=bc), q)
    V = np.random.default_rng(seed).uniform(-1, 1, g.shape)
    H = build_hamiltonian(g, V)
    return H, eigs_lowest(H, k)


def brute_window_masses(psi, T, L):
    """Window masses by explicit coordinates: a node at ``x`` counts once for
    every period shift ``x + m P`` landing in ``[k - T/2, k + T/2)^d``."""
    grid = psi.grid
    q = grid.nodes_per_unit
    P = grid.n_per_side  # torus period in nodes
    lo2 = np.rint(2 * np.asarray(grid.box.lower) * q).astype(int)  # units of 1/(2q)
    half = (L - 1) // 2
    ks = np.arange(-half, half + 1)
    dens = grid.cell_volume * psi.values**2
    out = []
    for k in np.array(np.meshgrid(*[ks] * grid.d, indexing="ij")).reshape(grid.d, -1).T:
        weights = []
        for ax in range(grid.d):
            x = lo2[ax] + 2 * np.arange(P)
            w = np.zeros(P)
            for m in range(-4 * T, 4 * T + 1):
                y = x + 2 * m * P
                w += (y >= (2 * k[ax] - T) * q) & (y < (2 * k[ax] + T) * q)
            weights.append(w)
        total = dens
        for w in weights:
            total = np.tensordot(w, total, axes=([0], [0]))
        out.append(float(total))
    return np.array(out)


class TestExtension:
    def test_sine_is_its_own_odd_extension(self):
        L = 3.0
        g = Grid(BoxSpec(1, L, bc="dirichlet"), 60)
        psi = g.sample(lambda c: np.sin(np.pi * (c[:, 0] + L / 2) / L))
        ext = extend_function(psi)
        x = ext.grid.axis(0)
        assert ext.grid.box.lower[0] == pytest.approx(-1.5 * L)
        assert np.allclose(ext.values, np.sin(np.pi * (x + L / 2) / L), atol=1e-12)

    @pytest.mark.parametrize("d, q", [(1, 10), (2, 4)])
    def test_norm_and_zeros(self, d, q):
        L = 5 if d == 1 else 3
        _, pairs = eigenfunctions(d, L, q, "dirichlet", 10, seed=d)
        n = L * q
        for p in pairs:
            ext = extend_function(p.psi)
            assert mass(ext) == pytest.approx(2**d * mass(p.psi), rel=1e-12)
            for ax in range(d):
                for plane in (0, n):
                    assert np.all(np.take(ext.values, plane, axis=ax) == 0.0)

    def test_odd_symmetry(self):
        _, pairs = eigenfunctions(1, 5, 8, "dirichlet", 3)
        v = extend_function(pairs[2].psi).values
        n = 40
        # v[n + j] = -v[n - j] across the plane x = -L/2 (node n)
        j = np.arange(1, n)
        assert np.array_equal(v[n + j], -v[n - j])

    def test_periodic_is_identity(self):
        g = Grid.for_box(BoxSpec(1, 5), 4)
        psi = g.sample(np.sin)
        assert extend_function(psi) is psi

    def test_nonzero_boundary_rejected(self):
        g = Grid(BoxSpec(1, 3.0, bc="dirichlet"), 30)
        with pytest.raises(GridAlignment):
            extend_function(GridFunction(g, np.ones(g.shape)))


class TestClassification:
    def test_constant_all_dominating(self):
        g = Grid.for_box(BoxSpec(2, 5), 6)
        psi = g.sample(lambda c: np.ones(len(c)))
        cls = classify_sites(psi)
        assert cls.dominating.all()
        assert cls.weak_fraction == 0.0
        assert cls.cover_residual < 1e-12
        assert cls.T == 124

    @settings(max_examples=20, deadline=None)
    @given(L=st.sampled_from([3, 5, 7]), q=st.integers(2, 6), T=st.integers(1, 20), d=st.integers(1, 2),
           seed=st.integers(0, 1000))
    def test_cover_identity(self, L, q, T, d, seed):
        g = Grid.for_box(BoxSpec(d, L), q)
        psi = GridFunction(g, np.random.default_rng(seed).standard_normal(g.shape))
        cls = classify_sites(psi, T=T)
        assert cls.cover_residual < 1e-10
        assert cls.weak_fraction + cls.dominating_fraction == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("bc, d, T", [("periodic", 1, 3), ("periodic", 1, 62), ("periodic", 2, 4),
                                          ("dirichlet", 1, 3), ("dirichlet", 2, 2), ("dirichlet", 1, 62)])
    def test_windows_match_brute_force(self, bc, d, T):
        L, q = (5, 4) if d == 1 else (3, 3)
        _, pairs = eigenfunctions(d, L, q, bc, 3, seed=7)
        psi = pairs[2].psi
        cls = classify_sites(psi, T=T)
        brute = brute_window_masses(extend_function(psi), T, L)
        assert np.allclose(cls.window_mass.ravel(), brute, rtol=1e-12, atol=1e-15)

    def test_dirichlet_threshold(self):
        for d in (1, 2):
            _, pairs = eigenfunctions(d, 3, 4, "dirichlet", 1)
            per = 1 / (2 * 7**d)
            assert classify_sites(pairs[0].psi, T=7).threshold == pytest.approx(per / 2**d)

    def test_dirichlet_cover_bound(self):
        _, pairs = eigenfunctions(2, 5, 4, "dirichlet", 5, seed=3)
        for p in pairs:
            assert classify_sites(p.psi).cover_residual == 0.0

    def test_weak_cell(self):
        g = Grid.for_box(BoxSpec(1, 5), 10)
        vals = np.ones(g.shape)
        vals[:10] = 0.0  # empty the leftmost cell
        cls = classify_sites(GridFunction(g, vals), T=3)
        assert not cls.dominating[0]
        assert cls.dominating[1:].all()

    def test_misaligned_grid(self):
        g = Grid(BoxSpec(1, 5), 12)
        with pytest.raises(GridAlignment):
            classify_sites(g.sample(np.cos))


def ball_node_count(q, delta):
    offsets = np.arange(-q, q + 1) / q
    return int(np.sum(np.abs(offsets) < delta - 1e-10))


class TestMassRatio:
    def test_constant_function(self):
        L, q, delta = 5, 40, 0.3
        g = Grid.for_box(BoxSpec(1, L), q)
        psi = g.sample(lambda c: np.ones(len(c)))
        r = mass_ratio(psi, lattice_arrangement(g.box, delta))
        assert r == pytest.approx(ball_node_count(q, delta) / q, rel=1e-12)
        assert r == pytest.approx(2 * delta, abs=1 / q)

    def test_constant_function_2d(self):
        g = Grid.for_box(BoxSpec(2, 3), 40)
        psi = g.sample(lambda c: np.ones(len(c)))
        assert mass_ratio(psi, lattice_arrangement(g.box, 0.3)) == pytest.approx(math.pi * 0.09, rel=0.05)

    def test_bounded_by_one(self):
        _, pairs = eigenfunctions(2, 3, 8, "periodic", 5)
        arr = lattice_arrangement(pairs[0].psi.grid.box, 0.3)
        for p in pairs:
            assert 0 < mass_ratio(p.psi, arr) <= 1

    def test_sine_ground_state_second_order(self):
        L, delta = 5, 0.25
        for q in (10, 30):  # centres are nodes and delta / h is a half-integer
            g = Grid.for_box(BoxSpec(1, L, bc="dirichlet"), q)
            psi = eigs_lowest(build_hamiltonian(g), 1)[0].psi

            def F(x):
                return x / 2 - L / (4 * math.pi) * math.sin(2 * math.pi * (x + L / 2) / L)
            exact = sum(F(k + delta) - F(k - delta) for k in range(-2, 3)) / (L / 2)
            err = abs(mass_ratio(psi, lattice_arrangement(g.box, delta)) - exact)
            assert err <= g.h**2

    def test_cell_local_path_matches_generic_mass(self):
        _, pairs = eigenfunctions(2, 3, 10, "periodic", 3)
        psi = pairs[1].psi
        arr = lattice_arrangement(psi.grid.box, 0.25)
        generic = sum(mass(psi, Ball(tuple(z), 0.25)) for z in arr.gamma1_points) / mass(psi)
        assert mass_ratio(psi, arr) == pytest.approx(generic, rel=1e-12)

    def test_under_resolved(self):
        g = Grid.for_box(BoxSpec(1, 5), 10)
        with pytest.raises(UnderResolvedBall):
            mass_ratio(g.sample(np.cos), lattice_arrangement(g.box, 0.15))


class TestVerifier:
    def test_free_ground_state_scale_free(self):
        reports, summary = verify_ucp(None, [5, 9, 13], "periodic", 1, 0.3, nodes_per_unit=20)
        ratios = [r.ratio for r in reports]
        assert ratios == pytest.approx([ratios[0]] * 3, rel=1e-12)
        assert abs(summary["slope_log_min_ratio"]) < 1e-10

    def test_report_columns(self):
        est = UCPVerifier(V0=cosine, L_values=[5], n_eigs=3, nodes_per_unit=20).fit()
        row = est.reports_[0].row()
        assert tuple(row) == est.reports_[0].CSV_COLUMNS
        for r in est.reports_:
            assert r.weak_frac + r.dominating_frac == pytest.approx(1.0, abs=1e-10)
            assert r.K_V >= 0

    def test_sklearn_params(self):
        est = UCPVerifier(V0=cosine, delta=0.2)
        assert clone(est).get_params()["delta"] == 0.2

    def test_random_balls_within_factor_ten(self):
        common = dict(V0=cosine, L_values=[5, 9], n_eigs=6, nodes_per_unit=20)
        centred = UCPVerifier(**common).fit()
        moved = UCPVerifier(**common, balls="random", seed=3).fit()
        for L in (5, 9):
            assert moved.min_ratio_[L] >= centred.min_ratio_[L] / 10


class TestCacciopoli:
    def test_free_dirichlet_eigenfunction(self):
        g = Grid.for_box(BoxSpec(1, 9, bc="dirichlet"), 20)
        pairs = eigs_lowest(build_hamiltonian(g), 4)
        for p in pairs:
            V = np.full(g.shape, -p.eigenvalue)
            res = cacciopoli_check(p.psi, V, a=0.5, b=0.5, c=2.0)
            assert res.ok and res.equation_ok
            assert res.lhs < res.rhs

    def test_constant_periodic(self):
        g = Grid.for_box(BoxSpec(2, 5), 8)
        psi = g.sample(lambda c: np.ones(len(c)))
        res = cacciopoli_check(psi, np.zeros(g.shape), a=0.0, b=0.5, c=1.0)
        assert res.lhs == 0.0 and res.ok and res.case == "ball"

    def test_geometry_violation(self):
        g = Grid.for_box(BoxSpec(1, 5), 8)
        psi = g.sample(np.cos)
        with pytest.raises(GeometryViolation):
            cacciopoli_check(psi, np.zeros(g.shape), a=0.5, b=1.0, c=2.0)

    def test_random_eigenfunctions_no_violation(self):
        rng = np.random.default_rng(11)
        checked = violations = 0
        for seed in range(10):
            g = Grid.for_box(BoxSpec(1, 9, bc="dirichlet"), 20)
            V0 = rng.uniform(-2, 2, g.shape)
            for p in eigs_lowest(build_hamiltonian(g, V0), 10):
                a = rng.uniform(0.2, 1.0)
                b = rng.uniform(0.1, a)
                c = a + rng.uniform(0.3, 1.5)
                centre = rng.uniform(-4.5 + c + b, 4.5 - c - b, 1)
                res = cacciopoli_check(p.psi, V0 - p.eigenvalue, a, b, c, center=centre)
                checked += 1
                violations += not res.ok
        assert checked == 100
        assert violations == 0


class TestLocalFluctuation:
    def test_constant_function(self):
        q, delta = 40, 0.05
        g = Grid.for_box(BoxSpec(1, 5), q)
        psi = g.sample(lambda c: np.ones(len(c)))
        rep = local_fluctuation_experiment(psi, (0,), delta)
        assert rep.max_box_index == (0,)
        assert rep.pigeonhole_ok
        assert rep.min_ratio == pytest.approx(ball_node_count(q, delta) / q, rel=1e-12)
        assert rep.c_lf_analytic > 0

    def test_maximal_subbox_pigeonhole(self):
        _, pairs = eigenfunctions(2, 3, 20, "periodic", 4)
        for p in pairs:
            idx, sub, cell = maximal_subbox(p.psi, (0, 0))
            assert sub >= cell / 400 * (1 - 1e-12)

    def test_pigeonhole_all(self):
        _, pairs = eigenfunctions(1, 9, 40, "periodic", 6)
        for p in pairs:
            checked, failed = pigeonhole_all(p.psi, classify_sites(p.psi, T=30))
            assert failed == 0

    def test_not_dominating(self):
        g = Grid.for_box(BoxSpec(1, 5), 40)
        vals = np.ones(g.shape)
        vals[:40] = 1e-6
        with pytest.raises(NotDominating):
            local_fluctuation_experiment(GridFunction(g, vals), (-2,), 0.05)

    def test_delta_too_large(self):
        g = Grid.for_box(BoxSpec(1, 5), 40)
        with pytest.raises(DeltaTooLarge):
            local_fluctuation_experiment(g.sample(np.cos), (0,), 0.1)
