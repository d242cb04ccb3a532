import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucplab.anderson import (CouplingDistribution, DeloneAndersonModel, EigenvalueLifting, WegnerEstimator,
                             _realization_counts, cosine_background, default_lift_model,
                             modulus_of_continuity, sample_potential, single_site_profile, sme_check, ssf,
                             ssf_bound_report, switch_family, uncertainty_check)
from ucplab.exceptions import TooManyDropped
from ucplab.geometry import BoxSpec, generate_delone
from ucplab.operator import Grid, GridFunction, build_hamiltonian, count_in_interval, eigs_lowest, spectrum

DISTS = [
    CouplingDistribution.uniform(-1, 1),
    CouplingDistribution.uniform(0, 1),
    CouplingDistribution.bernoulli(0.3, 0.0, 1.0),
    CouplingDistribution.truncated_gaussian(0.2, 0.5, -1, 1),
]


def scanned_modulus(dist, eps, n=4001):
    lo, hi = dist.support
    centres = np.linspace(lo - eps, hi + eps, n)
    if dist.kind == "bernoulli":
        centres = np.concatenate([centres, [dist.v0, dist.v1]])
    return max(dist.interval_mass(c - eps / 2, c + eps / 2) for c in centres)


class TestModulus:
    def test_uniform_example(self):
        assert modulus_of_continuity(CouplingDistribution.uniform(-1, 1), 0.5) == pytest.approx(0.25)

    @pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.kind)
    @pytest.mark.parametrize("eps", [0.01, 0.1, 0.5, 1.3])
    def test_matches_scan(self, dist, eps):
        assert modulus_of_continuity(dist, eps) == pytest.approx(scanned_modulus(dist, eps), abs=2e-4)

    @pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.kind)
    def test_window_covers_support(self, dist):
        assert modulus_of_continuity(dist, 2 * dist.m) == 1.0

    def test_atoms(self):
        dist = CouplingDistribution.bernoulli(0.3)
        assert modulus_of_continuity(dist, 1e-6) == pytest.approx(0.7)

    @settings(max_examples=40, deadline=None)
    @given(eps=st.floats(1e-3, 0.5), t=st.floats(1.0, 6.0), which=st.integers(0, len(DISTS) - 1))
    def test_scaling_chain(self, eps, t, which):
        dist = DISTS[which]
        s = modulus_of_continuity(dist, eps)
        st_ = modulus_of_continuity(dist, t * eps)
        assert s <= st_ + 1e-12
        assert st_ <= math.ceil(t) * s + 1e-12

    def test_support_bound(self):
        for dist in DISTS:
            u = np.linspace(1e-9, 1 - 1e-9, 1001)
            assert np.all(np.abs(dist.ppf(u)) <= dist.m)


class TestModel:
    def test_profile_bounds(self):
        r = np.linspace(0, 1, 1001)
        for profile in ("indicator", "bump"):
            u = single_site_profile(r, 0.5, 2.0, 0.3, 0.45, profile)
            assert np.all(u >= 0.5 * (r < 0.3 - 1e-9))
            assert np.all(u <= 2.0 * (r < 0.45))

    def test_invalid(self):
        with pytest.raises(ValueError):
            DeloneAndersonModel(C_minus=2.0, C_plus=1.0)
        with pytest.raises(ValueError):
            DeloneAndersonModel(delta_minus=0.4, delta_plus=0.3)

    def test_zero_couplings(self):
        model = DeloneAndersonModel(dist=CouplingDistribution.bernoulli(0.0))
        g = Grid.for_box(BoxSpec(1, 5), 20)
        V, omega = sample_potential(model, g, seed=1, realization_id=0)
        assert np.all(omega.all == 0)
        assert np.all(V.values == 0)

    def test_sup_bound_and_split(self):
        box = BoxSpec(2, 5)
        arr = generate_delone(2, 0.3, 1, box, seed=3, n_extra=8)
        model = DeloneAndersonModel(arrangement=arr, C_minus=0.5, C_plus=1.5, delta_minus=0.1,
                                    delta_plus=0.15, dist=CouplingDistribution.uniform(-2, 2), profile="bump")
        g = Grid.for_box(box, 20)
        (v1, v2), omega = sample_potential(model, g, 4, 2, split=True)
        V, _ = sample_potential(model, g, 4, 2)
        assert np.allclose(v1.values + v2.values, V.values)
        U = model.site_matrix(g)
        overlap = np.asarray((U != 0).sum(axis=0)).max()
        assert np.abs(V.values).max() <= model.dist.m * model.C_plus * overlap
        assert len(omega.gamma1) == 25
        assert len(omega.gamma2) == len(arr.gamma2_points)

    def test_deterministic_streams(self):
        model = default_lift_model()
        g = Grid.for_box(BoxSpec(1, 7), 10)
        a, _ = sample_potential(model, g, 9, 17)
        b, _ = sample_potential(model, g, 9, 17)
        c, _ = sample_potential(model, g, 9, 18)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)


class TestWegner:
    def test_saturation(self):
        model = default_lift_model()
        g = Grid.for_box(BoxSpec(1, 5), 4)
        H0 = build_hamiltonian(g)
        U = model.site_matrix(g)
        out = _realization_counts(H0.matrix, H0.mask.ravel(), U, model, 0, range(4), [(-1e3, 1e3)], 5)
        assert [c[0] for _, c in out] == [H0.dim] * 4

    def test_frozen_disorder(self):
        model = DeloneAndersonModel(V0=cosine_background(), dist=CouplingDistribution.bernoulli(1.0, 0.0, 0.0))
        est = WegnerEstimator(model=model, L=9, epsilons=(0.1, 0.3), E=2.0, n_real=20).fit()
        assert np.all(est.counts_ == est.counts_[0])
        assert est.counts_[0].tolist() == [count_in_interval(build_hamiltonian(
            Grid.for_box(BoxSpec(1, 9), 10), cosine_background()), 2.0 - e, 2.0 + e) for e in (0.1, 0.3)]

    def test_table_and_monotone(self):
        est = WegnerEstimator(model=default_lift_model(cosine_background()), L=9, n_real=200, seed=2,
                              epsilons=(0.05, 0.1, 0.2, 0.3)).fit()
        assert est.monotone_
        rows = est.table_
        assert [tuple(r) for r in rows] == [WegnerEstimator.CSV_COLUMNS] * 4
        for r in rows:
            assert r["ci_lo"] <= r["mean_count"] <= r["ci_hi"]
        assert est.E_ == pytest.approx(est.lambda0_ + 0.1)

    def test_worker_count_does_not_change_counts(self):
        kw = dict(model=default_lift_model(cosine_background()), L=7, n_real=60, seed=5)
        a = WegnerEstimator(**kw, n_jobs=1).fit()
        b = WegnerEstimator(**kw, n_jobs=3).fit()
        assert np.array_equal(a.counts_, b.counts_)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            WegnerEstimator(epsilons=(0.5,), L=5, n_real=2).fit()

    def test_drops_are_limited(self, monkeypatch):
        import ucplab.anderson as mod

        def failing(*args):
            return [(rid, "boom") for rid in args[5]]
        monkeypatch.setattr(mod, "_realization_counts", failing)
        with pytest.raises(TooManyDropped):
            WegnerEstimator(L=5, n_real=10).fit()


class TestLifting:
    def test_constant_perturbation(self):
        g = Grid.for_box(BoxSpec(1, 5), 20)
        H0 = build_hamiltonian(g, cosine_background())
        W = GridFunction(g, np.full(g.shape, 0.7))
        lam0 = eigs_lowest(H0, 1)[0].eigenvalue
        for t in (0.0, 0.3, 1.0):
            assert eigs_lowest(H0.shifted(W, t), 1)[0].eigenvalue == pytest.approx(lam0 + 0.7 * t, abs=1e-10)

    def test_free_model(self):
        est = EigenvalueLifting(model=default_lift_model(), L=5, nodes_per_unit=20,
                                t_values=np.linspace(0, 1, 6)).fit()
        assert est.hf_residuals_[0] <= 1e-6
        assert np.all(np.diff(est.lambda_) >= -1e-12)
        assert np.all(est.second_differences() <= 1e-8)
        assert np.all(est.lift_margins() >= -1e-12)
        assert est.kappa_emp_ > 0
        assert [tuple(r) for r in est.curve_rows()] == [("t", "lambda", "hf_lhs", "hf_rhs")] * 6


class TestUncertainty:
    def test_constant_w(self):
        g = Grid.for_box(BoxSpec(1, 5), 20)
        H0 = build_hamiltonian(g, cosine_background())
        res = uncertainty_check(H0, GridFunction(g, np.full(g.shape, 0.4)), 0.5, 0.5)
        assert res.min_eigenvalue == pytest.approx(0.4, abs=1e-12)
        assert res.ok

    def test_dimension_matches_count(self):
        g = Grid.for_box(BoxSpec(1, 7), 20)
        H0 = build_hamiltonian(g, cosine_background())
        W = default_lift_model().gamma1_sum(g)
        res = uncertainty_check(H0, W, 0.5, 3.0)
        lam0 = spectrum(H0)[0]
        assert res.dim == count_in_interval(H0, -np.inf, lam0 + 1.5)

    def test_empty_projector(self):
        g = Grid.for_box(BoxSpec(1, 5), 20)
        H0 = build_hamiltonian(g)
        res = uncertainty_check(H0, g.zeros(), 0.5, 1.0, energy_cut=-5.0)
        assert res.status == "EmptyProjector" and res.ok and res.dim == 0


def random_pair(n, rank, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    A = (A + A.T) / 2
    B = rng.standard_normal((n, rank))
    return A, A + B @ B.T


class TestSsf:
    def test_zero_perturbation(self):
        A, _ = random_pair(40, 1, 0)
        rec, res = ssf(A, A)
        assert np.all(rec.xi == 0)
        assert res == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_rank_one(self, seed):
        A = random_pair(50, 1, seed)[0]
        e = np.zeros(50)
        e[seed] = 1.0
        rec, res = ssf(A, A + 2.5 * np.outer(e, e))
        assert rec.xi.min() >= 0 and rec.xi.max() <= 1
        assert res < 1e-10

    def test_integer_steps_and_support(self):
        A, B = random_pair(60, 3, 7)
        rec, _ = ssf(A, B)
        assert rec.xi.dtype.kind == "i"
        assert rec(rec.breakpoints[0] - 1.0) == 0
        assert rec(rec.breakpoints[-1] + 1.0) == 0

    def test_trace_identity_quadrature_route(self):
        A, B = random_pair(30, 2, 3)
        rec, _ = ssf(A, B)
        f = lambda x: np.exp(-np.asarray(x) ** 2)  # noqa: E731
        F = lambda x: math.sqrt(math.pi) / 2 * math.erf(x)  # antiderivative of f  # noqa: E731
        # with xi = N_1 - N_2 the integral telescopes to sum_i F(l2_i) - F(l1_i)
        expected = sum(F(x) for x in rec.evals2) - sum(F(x) for x in rec.evals1)
        assert rec.integrate(f, limit=200) == pytest.approx(expected, rel=1e-8)

    def test_rejects_negative_perturbation(self):
        A, B = random_pair(20, 1, 1)
        with pytest.raises(ValueError):
            ssf(B, A)

    def test_bound_report(self):
        A, B = random_pair(20, 2, 2)
        rec, _ = ssf(A, B)
        rep = ssf_bound_report(rec, lambda x: np.exp(-np.asarray(x) ** 2), -5, 5)
        assert set(rep) == {"integral", "bound", "ratio"}
        assert rep["bound"] > 0


class TestSme:
    def test_constant_phi(self):
        rows = sme_check(CouplingDistribution.uniform(0, 1), [("const", lambda x: np.zeros_like(x) + 1.0)], [0.1])
        assert rows[0].lhs == 0.0 and rows[0].ok

    def test_point_mass(self):
        dist = CouplingDistribution.bernoulli(1.0, 0.0, 0.0)
        rho = switch_family(0, 0, widths=(0.2,), n_centers=1)[0][1]
        row = sme_check(dist, [("rho", rho)], [0.1], a=-0.5, b=0.5)[0]
        assert row.lhs == pytest.approx(float(rho(0.1) - rho(0.0)))
        assert row.rhs == pytest.approx(float(rho(0.6) - rho(-0.5)))
        assert row.ok

    @pytest.mark.parametrize("dist", [CouplingDistribution.uniform(0, 1), CouplingDistribution.bernoulli(0.4),
                                      CouplingDistribution.truncated_gaussian(0.5, 0.3, 0, 1)],
                             ids=lambda d: d.kind)
    def test_family(self, dist):
        rows = sme_check(dist, switch_family(0, 1), [0.05, 0.1, 0.2])
        assert all(r.ok for r in rows)
        assert min(r.margin for r in rows) >= -1e-10

    def test_uniform_quadrature_oracle(self):
        dist = CouplingDistribution.uniform(0, 1)
        label, phi = switch_family(0, 1, widths=(0.1,), n_centers=3)[1]
        x = np.linspace(0, 1, 200001)
        oracle = np.trapezoid(phi(x + 0.05) - phi(x), x)
        assert sme_check(dist, [(label, phi)], [0.05])[0].lhs == pytest.approx(oracle, abs=1e-9)

    def test_non_monotone_rejected(self):
        with pytest.raises(ValueError):
            sme_check(CouplingDistribution.uniform(0, 1), [("sin", np.sin)], [0.1])
