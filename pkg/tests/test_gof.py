"""Dataset simulation, test statistics, and randomization-test machinery."""

import numpy as np
import pytest

from openscr.gof import GofStatistics, _mid_rank_p, run_gof, simulate_dataset
from openscr.gof import test_statistics as compute_statistics
from openscr.likelihood import StateModel, individual_loglik, DetectionField

from _synth import grid_mesh, grid_traps, histories_from_records, make_design, toy_data
from openscr.dataset import SCRData


def _fields(J, K, M, lam=0.7, sigma=1400.0, gamma=0.5, phi=0.85, D=3.0):
    return {
        "lambda": np.full((J, K), lam),
        "sigma": np.full((J, K), sigma),
        "gamma": np.full(K - 1, gamma),
        "phi": np.full(K - 1, phi),
        "D": np.full(M, D),
    }


class TestSimulateDataset:
    def _setup(self, K=2, L=2):
        design = make_design(K, L)
        traps = grid_traps(3, 3, K, L)
        mesh = grid_mesh(4, 4)
        return design, traps, mesh

    def test_zero_density_empty(self):
        design, traps, mesh = self._setup()
        fields = _fields(9, 2, 16, D=0.0)
        hist = simulate_dataset(fields, traps, design, mesh, seed=1)
        assert hist.n_individuals == 0

    def test_zero_encounter_rate_empty(self):
        design, traps, mesh = self._setup()
        fields = _fields(9, 2, 16, lam=0.0)
        hist = simulate_dataset(fields, traps, design, mesh, seed=2)
        assert hist.n_individuals == 0

    def test_fixed_seed_bitwise_reproducible(self):
        design, traps, mesh = self._setup()
        fields = _fields(9, 2, 16)
        a = simulate_dataset(fields, traps, design, mesh, seed=33)
        b = simulate_dataset(fields, traps, design, mesh, seed=33)
        assert a.ids == b.ids
        assert np.array_equal(a.omega, b.omega)

    def test_detected_count_matches_thinned_intensity(self):
        # mean detected individuals over sims ~ sum(a * D * pdot) against the
        # numeric integral from the likelihood machinery
        design, traps, mesh = self._setup()
        J, K, L, M = 9, 2, 2, 16
        fields = _fields(J, K, M, D=2.0)
        det = DetectionField(lam=fields["lambda"], sigma=fields["sigma"],
                             effort=traps.effort,
                             distances=np.linalg.norm(
                                 traps.xy[:, None] - mesh.xy[None, :], axis=2))
        state = StateModel(gamma=fields["gamma"], phi=fields["phi"], delta=design.delta)
        empty = np.full((K, L), -1, dtype=np.int64)
        expected = sum(mesh.areas[m] * fields["D"][m] *
                       (1 - individual_loglik(empty, m, det, state))
                       for m in range(M))
        n_sims = 400
        counts = np.array([
            simulate_dataset(fields, traps, design, mesh, seed=1000 + s).n_individuals
            for s in range(n_sims)])
        mc_se = counts.std() / np.sqrt(n_sims)
        assert abs(counts.mean() - expected) < 3 * mc_se

    def test_detections_only_with_effort(self):
        design = make_design(2, 2)
        effort = np.zeros((4, 2, 2), dtype=np.int64)
        effort[:, 0, 0] = 1  # only the first secondary is surveyed
        traps = grid_traps(2, 2, 2, 2, effort=effort)
        mesh = grid_mesh(2, 2)
        fields = _fields(4, 2, 4, lam=3.0, D=10.0)
        hist = simulate_dataset(fields, traps, design, mesh, seed=5)
        assert hist.n_individuals > 0
        assert np.all(hist.omega[:, 0, 1] == -1)
        assert np.all(hist.omega[:, 1, :] == -1)


class TestStatistics:
    def test_hand_counts(self):
        design = make_design(3, 1)
        traps = grid_traps(2, 1, 3, 1)
        hist = histories_from_records(
            [("a", 0, 0, 0), ("a", 2, 0, 1), ("b", 1, 0, 0)], K=3, L=1)
        stats = compute_statistics(hist, design, traps)
        assert stats.new_individuals.tolist() == [1, 1, 0]
        # individual a spans primaries 0..2 (2), b spans 0 -> mean 1.0
        assert stats.time_between == pytest.approx(1.0)
        assert stats.trap_counts.tolist() == [2, 1]

    def test_everyone_seen_once(self):
        design = make_design(2, 1)
        traps = grid_traps(2, 1, 2, 1)
        hist = histories_from_records([("a", 0, 0, 0), ("b", 1, 0, 1)], K=2, L=1)
        stats = compute_statistics(hist, design, traps)
        assert stats.time_between == 0.0

    def test_u_sums_to_detected_individuals(self):
        design = make_design(3, 2)
        traps = grid_traps(3, 1, 3, 2)
        mesh = grid_mesh(3, 2)
        fields = _fields(3, 3, 6, D=4.0)
        hist = simulate_dataset(fields, traps, design, mesh, seed=8)
        stats = compute_statistics(hist, design, traps)
        assert stats.new_individuals.sum() == hist.n_individuals
        assert stats.trap_counts.sum() >= hist.n_individuals

    def test_empty_histories(self):
        design = make_design(2, 1)
        traps = grid_traps(2, 1, 2, 1)
        hist = histories_from_records([], K=2, L=1)
        stats = compute_statistics(hist, design, traps)
        assert stats.new_individuals.tolist() == [0, 0]
        assert stats.time_between == 0.0


class TestMidRankP:
    def test_median_gives_one(self):
        sims = np.arange(1.0, 100.0)
        assert _mid_rank_p(50.0, sims) == pytest.approx(1.0)

    def test_beyond_all_sims_small_p(self):
        sims = np.arange(1.0, 100.0)
        n = len(sims)
        assert _mid_rank_p(1000.0, sims) <= 2.0 / (n + 1)
        assert _mid_rank_p(-5.0, sims) <= 2.0 / (n + 1)

    def test_ties_mid_rank(self):
        sims = np.array([1.0, 2.0, 2.0, 3.0])
        # r = (1 + 1 + 0.5) / 5 = 0.5 -> p = 1
        assert _mid_rank_p(2.0, sims) == pytest.approx(1.0)


class TestRunGof:
    def _data(self, seed=4):
        design = make_design(3, 2, gap_years=0.6)
        traps = grid_traps(4, 3, 3, 2)
        mesh = grid_mesh(5, 4)
        fields = _fields(12, 3, 20, D=3.0)
        hist = simulate_dataset(fields, traps, design, mesh, seed=seed)
        return SCRData(design=design, traps=traps, mesh=mesh, histories=hist), fields

    def test_fixed_fields_mode_self_consistent(self):
        data, fields = self._data()
        report = run_gof(None, data, n_sims=120, seed=9, fields=fields)
        assert report.n_sims == 120
        assert not report.resampled_draws
        for test in report.tests.values():
            assert np.all(test.p_values >= 0) and np.all(test.p_values <= 1)
            assert np.all(test.lo <= test.hi)
        # data were simulated from the same parameters: expect decent fit
        assert report.tests["time_between"].p_values[0] > 0.01
        assert report.tests["new_individuals"].inside_envelope

    def test_simulated_u_consistency(self):
        data, fields = self._data(seed=14)
        report = run_gof(None, data, n_sims=60, seed=2, fields=fields)
        sims = report.tests["new_individuals"].sims
        assert sims.shape == (60, 3)
        assert np.all(sims >= 0)

    def test_seed_reproducible_and_thread_invariant(self):
        data, fields = self._data(seed=21)
        a = run_gof(None, data, n_sims=40, seed=77, fields=fields)
        b = run_gof(None, data, n_sims=40, seed=77, fields=fields, threads=4)
        for name in a.tests:
            assert np.array_equal(a.tests[name].sims, b.tests[name].sims)
            assert np.array_equal(a.tests[name].p_values, b.tests[name].p_values)
