import warnings

import numpy as np
import pytest

from conftest import random_lti, simulate_lti
from flexdeepc.trajectory import (DimensionError, HankelSystem, ShortDataWarning, Trajectory, build_hankel, choose_rank,
                                  is_persistently_exciting, min_data_length, numerical_rank, split_past_future,
                                  svd_reduce)


class TestHankel:
    def test_small_examples(self):
        np.testing.assert_array_equal(build_hankel([1, 2, 3, 4], 2), [[1, 2, 3], [2, 3, 4]])
        np.testing.assert_array_equal(build_hankel([1, 2, 3, 4], 4), [[1], [2], [3], [4]])

    def test_full_scale_size(self):
        assert build_hankel(np.zeros(4000), 40).shape == (40, 3961)

    def test_depth_too_large(self):
        with pytest.raises(DimensionError):
            build_hankel([1, 2, 3], 4)

    def test_vector_signal_block_layout(self):
        w = np.arange(12.0).reshape(6, 2)
        h = build_hankel(w, 3)
        assert h.shape == (6, 4)
        for i in range(3):
            for j in range(4):
                np.testing.assert_array_equal(h[2 * i:2 * i + 2, j], w[i + j])


class TestExcitation:
    def test_constant_fails(self):
        assert not is_persistently_exciting(np.full(50, 3.0), 2)

    def test_white_noise_passes(self):
        rng = np.random.default_rng(0)
        assert is_persistently_exciting(rng.normal(size=200), 10)

    def test_too_short_warns(self):
        with pytest.warns(ShortDataWarning):
            assert not is_persistently_exciting(np.arange(10.0), 6)

    def test_min_length_bound(self):
        rng = np.random.default_rng(1)
        n, depth = 3, 6
        t_min = min_data_length(1, n, depth)
        assert t_min == 17
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ShortDataWarning)
            assert not is_persistently_exciting(rng.normal(size=t_min - 1), n + depth)
        assert is_persistently_exciting(rng.normal(size=t_min), n + depth)


class TestSplit:
    def test_blocks(self):
        rng = np.random.default_rng(2)
        traj = Trajectory(rng.normal(size=100), rng.normal(size=100), 0.1)
        hs = split_past_future(traj, 4, 6)
        np.testing.assert_array_equal(np.vstack([hs.up, hs.uf]), build_hankel(traj.u, 10))
        np.testing.assert_array_equal(np.vstack([hs.yp, hs.yf]), build_hankel(traj.y, 10))
        assert hs.up.shape == (4, 91) and hs.yf.shape == (6, 91)

    def test_full_scale_split(self):
        traj = Trajectory(np.zeros(4000), np.zeros(4000), 0.05)
        hs = split_past_future(traj, 20, 20)
        for block in (hs.up, hs.uf, hs.yp, hs.yf):
            assert block.shape == (20, 3961)
        assert hs.stacked.shape == (80, 3961)

    def test_no_past(self):
        traj = Trajectory(np.arange(10.0), np.arange(10.0), 1.0)
        hs = split_past_future(traj, 0, 5)
        assert hs.up.shape[0] == 0 and hs.yp.shape[0] == 0
        np.testing.assert_array_equal(hs.uf, build_hankel(traj.u, 5))

    def test_too_long(self):
        traj = Trajectory(np.zeros(10), np.zeros(10), 1.0)
        with pytest.raises(DimensionError):
            split_past_future(traj, 6, 6)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            Trajectory(np.zeros(3), np.zeros(4), 1.0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        traj = Trajectory(rng.normal(size=50), rng.normal(size=50), 0.05)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        assert path.read_text().splitlines()[0] == "t,u,y"
        back = Trajectory.from_csv(path)
        np.testing.assert_array_equal(back.u, traj.u)
        np.testing.assert_array_equal(back.y, traj.y)
        assert back.dt == pytest.approx(0.05)


class TestRank:
    def test_clear_gap(self):
        assert choose_rank([10, 9, 8, 1e-8, 1e-9]) == 3

    def test_flat_spectrum_falls_back(self):
        assert choose_rank(np.ones(7)) == 7

    def test_empty(self):
        with pytest.raises(DimensionError):
            choose_rank([])


def lti_data(rng, n=2, T=300, depth=10):
    a, b, c = random_lti(rng, n)
    u = rng.normal(size=T)
    y = simulate_lti(a, b, c, u).ravel()
    return Trajectory(u, y, 1.0), (a, b, c)


class TestSvdReduce:
    def test_gap_rule_finds_system_rank(self):
        rng = np.random.default_rng(4)
        traj, _ = lti_data(rng)
        hs = split_past_future(traj, 5, 5)
        red = svd_reduce(hs)
        assert red.rank == numerical_rank(hs.stacked) == 10 + 2

    def test_column_space_preserved(self):
        rng = np.random.default_rng(5)
        traj, _ = lti_data(rng)
        hs = split_past_future(traj, 5, 5)
        red = svd_reduce(hs)
        q_full = np.linalg.svd(hs.stacked, full_matrices=False)[0][:, :red.rank]
        q_red = np.linalg.qr(red.h_bar)[0]
        np.testing.assert_allclose(q_full @ q_full.T, q_red @ q_red.T, atol=1e-9)

    def test_fixed_full_rank_is_rotation(self):
        rng = np.random.default_rng(6)
        h = rng.normal(size=(8, 5))
        hs = HankelSystem(h[:2], h[2:4], h[4:6], h[6:], t_ini=2, horizon=2)
        red = svd_reduce(hs, 5)
        np.testing.assert_allclose(red.h_bar @ red.right_vectors.T, hs.stacked, atol=1e-12)

    def test_row_slices(self):
        rng = np.random.default_rng(7)
        traj, _ = lti_data(rng)
        red = svd_reduce(split_past_future(traj, 4, 6), 8)
        np.testing.assert_array_equal(np.vstack([red.up, red.uf, red.yp, red.yf]), red.h_bar)
        assert red.up.shape == (4, 8) and red.yf.shape == (6, 8)

    def test_bad_rank(self):
        rng = np.random.default_rng(8)
        traj, _ = lti_data(rng)
        with pytest.raises(DimensionError):
            svd_reduce(split_past_future(traj, 4, 6), 0)

    def test_spacecraft_full_row_count(self, spacecraft_data):
        red = svd_reduce(split_past_future(spacecraft_data, 20, 20), 80)
        assert red.h_bar.shape == (80, 80)


class TestFundamentalLemma:
    def test_fresh_trajectories_in_span(self):
        rng = np.random.default_rng(9)
        n, depth, T = 3, 8, 200
        a, b, c = random_lti(rng, n)
        u = rng.normal(size=T)
        assert is_persistently_exciting(u, n + depth)
        h = np.vstack([build_hankel(u, depth), build_hankel(simulate_lti(a, b, c, u), depth)])
        for _ in range(5):
            uf = rng.normal(size=depth)
            x0 = rng.normal(size=n)
            w = np.concatenate([uf, simulate_lti(a, b, c, uf, x0).ravel()])
            g = np.linalg.lstsq(h, w, rcond=None)[0]
            assert np.linalg.norm(h @ g - w) < 1e-8 * max(1.0, np.linalg.norm(w))

    def test_random_combinations_are_trajectories(self):
        rng = np.random.default_rng(10)
        n, depth, T = 3, 8, 200
        a, b, c = random_lti(rng, n)
        u = rng.normal(size=T)
        hu, hy = build_hankel(u, depth), build_hankel(simulate_lti(a, b, c, u), depth)
        obsv = np.vstack([c @ np.linalg.matrix_power(a, i) for i in range(depth)])
        toeplitz = np.zeros((depth, depth))
        for i in range(depth):
            for j in range(i):
                toeplitz[i, j] = (c @ np.linalg.matrix_power(a, i - j - 1) @ b).item()
        g = rng.normal(size=hu.shape[1])
        uw, yw = hu @ g, hy @ g
        # recover the initial state from the window and re-simulate
        x0 = np.linalg.lstsq(obsv, yw - toeplitz @ uw, rcond=None)[0]
        np.testing.assert_allclose(simulate_lti(a, b, c, uw, x0).ravel(), yw, atol=1e-8 * np.abs(yw).max())
