import collections
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ucplab.exceptions import DeloneInfeasible, IncommensurateBox, NotDelone
from ucplab.geometry import (BoxSpec, DeloneArrangement, cell_of, generate_delone, is_reflection_symmetric,
                             lattice_sites, neighbor_table, reflect_extend_points, right_near_neighbor,
                             split_delone, validate_delone)


def integer_points(d, L, step=1):
    half = (L - 1) // 2
    axes = [np.arange(-half, half + 1, step)] * d
    return np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1).astype(float)


class TestLatticeSites:
    def test_one_dimensional(self):
        sites = lattice_sites(BoxSpec(1, 3), 1)
        assert sites.ravel().tolist() == [-1, 0, 1]

    def test_counts(self):
        assert len(lattice_sites(BoxSpec(2, 5), 1)) == 25
        sites = lattice_sites(BoxSpec(2, 9), 3)
        assert len(sites) == 9
        assert np.all(sites % 3 == 0)

    def test_cells_cover_box(self):
        box = BoxSpec(2, 5)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-2.5, 2.5, (500, 2))
        cells = {tuple(c) for c in cell_of(pts).tolist()}
        assert cells <= {tuple(s) for s in lattice_sites(box).tolist()}

    @pytest.mark.parametrize("L, M", [(4, 1), (6, 3), (2.5, 1)])
    def test_incommensurate(self, L, M):
        with pytest.raises(IncommensurateBox):
            lattice_sites(BoxSpec(2, L), M)


class TestDelone:
    def test_unperturbed_lattice(self):
        box = BoxSpec(2, 5)
        arr = generate_delone(2, 0.5, 1, box, seed=0, perturb=False)
        assert validate_delone(arr.points, 0.5, 1, box)
        assert len(arr.gamma2_points) == 0

    def test_seed_seven(self):
        box = BoxSpec(2, 7)
        arr = generate_delone(2, 0.9, 1, box, seed=7)
        assert validate_delone(arr.points, 0.9, 1, box)
        again = generate_delone(2, 0.9, 1, box, seed=7)
        assert np.array_equal(arr.points, again.points)

    def test_infeasible(self):
        with pytest.raises(DeloneInfeasible):
            generate_delone(2, 1.5, 1, BoxSpec(2, 5), seed=0)

    def test_integer_lattice_valid(self):
        box = BoxSpec(2, 5)
        assert validate_delone(integer_points(2, 5), 0.5, 1, box).ok

    def test_close_pair_witness(self):
        box = BoxSpec(2, 5)
        pts = np.vstack([integer_points(2, 5), [[0.1, 0.0]]])
        res = validate_delone(pts, 0.5, 1, box)
        assert not res
        assert res.kind == "discreteness"
        assert res.count >= 2
        assert np.allclose(res.center, (0.05, 0.0))

    def test_sparse_lattice_has_empty_box(self):
        box = BoxSpec(2, 5)
        res = validate_delone(integer_points(2, 5, step=2), 0.5, 1, box)
        assert not res
        assert res.kind == "density"

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000), m_tilde=st.floats(0.05, 0.95), d=st.integers(1, 2),
           n_extra=st.integers(0, 6))
    def test_generated_sets_validate(self, seed, m_tilde, d, n_extra):
        box = BoxSpec(d, 5)
        arr = generate_delone(d, m_tilde, 1, box, seed=seed, n_extra=n_extra)
        assert validate_delone(arr.points, m_tilde, 1, box)
        assert np.all(arr.balls_inside_cells())

    def test_dilute_sublattice(self):
        box = BoxSpec(2, 9)
        arr = generate_delone(2, 1.2, 3, box, seed=3, n_extra=10)
        assert validate_delone(arr.points, 1.2, 3, box)

    def test_json_roundtrip(self, tmp_path):
        box = BoxSpec(2, 5)
        arr = generate_delone(2, 0.6, 1, box, seed=4, n_extra=3)
        path = tmp_path / "arr.json"
        arr.to_json(path)
        data = json.loads(path.read_text())
        assert set(data) == {"d", "M_tilde", "M", "delta", "gamma1", "gamma2"}
        back = DeloneArrangement.from_json(str(path))
        assert np.array_equal(back.gamma1_points, arr.gamma1_points)
        assert np.array_equal(back.gamma1_index, arr.gamma1_index)
        assert np.array_equal(back.gamma2_points, arr.gamma2_points)

    def test_arrangement_is_read_only(self):
        arr = generate_delone(1, 0.5, 1, BoxSpec(1, 3), seed=0)
        with pytest.raises(ValueError):
            arr.gamma1_points[0, 0] = 1.0


class TestSplit:
    def test_integer_lattice(self):
        box = BoxSpec(2, 5)
        split = split_delone(integer_points(2, 5), 1, box)
        assert len(split.gamma2_points) == 0
        assert np.all(split.cell_counts == 1)

    def test_one_extra_point(self):
        box = BoxSpec(2, 5)
        pts = np.vstack([integer_points(2, 5), [[0.4, 0.3]]])
        split = split_delone(pts, 1, box, delta_minus=0.2)
        assert len(split.gamma2_points) == 1
        assert np.allclose(split.gamma2_points[0], (0.4, 0.3))
        assert np.all(split.balls_inside)

    def test_lexicographic_choice(self):
        box = BoxSpec(1, 1)
        split = split_delone(np.array([[0.3], [-0.2]]), 1, box)
        assert split.gamma1_points.ravel().tolist() == [-0.2]

    def test_empty_cell(self):
        with pytest.raises(NotDelone):
            split_delone(integer_points(2, 5, step=2), 1, BoxSpec(2, 5))

    @pytest.mark.parametrize("m_tilde", [0.3, 0.45, 0.7])
    def test_cell_counts_bounded(self, m_tilde):
        box = BoxSpec(2, 7)
        arr = generate_delone(2, m_tilde, 1, box, seed=11, n_extra=60)
        split = split_delone(arr.points, 1, box)
        assert split.cell_counts.max() <= arr.n_tilde
        assert len(split.gamma1_points) == 49
        assert np.allclose(np.sort(split.gamma1_points, axis=0), np.sort(arr.gamma1_points, axis=0))


class TestNearNeighbor:
    def test_periodic_two_dimensional(self):
        assert right_near_neighbor((0, 0), 7, "periodic").k_plus == (3, 0)

    def test_dirichlet_mirror(self):
        nn = right_near_neighbor((3, 0), 7, "dirichlet")
        assert nn.k_plus == (6, 0)
        assert nn.k_plus_minus == (1, 0)
        assert nn.mirrored and not nn.fallback

    def test_periodic_one_dimensional(self):
        assert right_near_neighbor((-3,), 7, "periodic").k_plus == (-1,)

    def test_periodic_wraps(self):
        assert right_near_neighbor((3,), 7, "periodic").k_plus == (-2,)

    @pytest.mark.parametrize("d, L", [(d, L) for d in (1, 2) for L in range(5, 22, 2)] + [(3, 5), (3, 9), (3, 13)])
    def test_periodic_bijection(self, d, L):
        sites, kp, _ = neighbor_table(L, d, "periodic")
        assert len({tuple(k) for k in kp.tolist()}) == L**d

    @pytest.mark.parametrize("d, L", [(d, L) for d in (1, 2) for L in range(5, 22, 2)] + [(3, 5), (3, 7), (3, 11)])
    def test_dirichlet_multiplicity(self, d, L):
        sites, _, kpm = neighbor_table(L, d, "dirichlet")
        half = (L - 1) // 2
        assert np.all(np.abs(kpm) <= half)
        counts = collections.Counter(tuple(k) for k in kpm.tolist())
        assert max(counts.values()) <= 2

    def test_degenerate_box_falls_back(self):
        nn = right_near_neighbor((0, 0), 1, "dirichlet")
        assert nn.fallback
        assert nn.k_plus_minus == (0, 0)
        nn = right_near_neighbor((1,), 3, "dirichlet")
        assert abs(nn.k_plus_minus[0]) <= 1


class TestReflection:
    def test_single_point(self):
        ext = reflect_extend_points(np.array([[0.2]]), 1.0, corner=True)
        assert np.any(np.isclose(ext, 0.2)) and np.any(np.isclose(ext, -0.2))

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_cardinality_and_symmetry(self, d):
        L = 5
        arr = generate_delone(d, 0.5, 1, BoxSpec(d, L), seed=d, n_extra=3)
        ext = reflect_extend_points(arr.points, L)
        assert len(ext) <= 2**d * len(arr.points)
        for axis in range(d):
            assert is_reflection_symmetric(ext, L, axis=axis)

    def test_asymmetric_set_detected(self):
        pts = np.array([[0.3, 0.1]])
        assert not is_reflection_symmetric(pts + 2.5, 5, corner=True)

    def test_extension_fills_doubled_box(self):
        L = 5
        arr = generate_delone(2, 0.5, 1, BoxSpec(2, L), seed=2)
        ext = reflect_extend_points(arr.points, L)
        doubled = BoxSpec(2, 2 * L, center=(-L / 2, -L / 2))
        assert len(ext) == 4 * len(arr.points)
        assert np.all(doubled.contains(ext))
