"""Tests for interval computation, grid building, kNN routing,
Gaussian basis features, and compress/decompress round trips."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ressm import autodiff as ad
from ressm import resample as rs


def make_cfg(width=3, kappa=0.5, window_k=2, basis_g=4, seed=0, delta_base=1.0):
    return rs.init_resample_config(width, kappa, window_k, basis_g,
                                   np.random.default_rng(seed), delta_base)


class TestCompressionDeltas:
    def test_zero_preactivation_midpoint(self):
        cfg = make_cfg(kappa=0.5, delta_base=1.0)
        cfg.theta_delta = np.zeros(3)
        d = rs.compression_deltas(cfg, np.random.default_rng(1).normal(size=(5, 3)))
        np.testing.assert_allclose(d, 0.75, rtol=1e-15)

    def test_sigmoid_limits(self):
        cfg = make_cfg(kappa=0.2, delta_base=2.0)
        cfg.theta_delta = np.array([100.0, 0.0, 0.0])
        lo = rs.compression_deltas(cfg, np.array([[-10.0, 0.0, 0.0]]))[0]
        hi = rs.compression_deltas(cfg, np.array([[10.0, 0.0, 0.0]]))[0]
        assert lo == pytest.approx(0.2 * 2.0, rel=1e-12)
        assert hi == pytest.approx(2.0, rel=1e-12)

    def test_strict_bounds_random_sweep(self):
        r = np.random.default_rng(2)
        for kappa in (0.1, 0.2, 0.5):
            cfg = make_cfg(kappa=kappa, seed=3)
            x = r.normal(size=(10_000, 3))
            d = rs.compression_deltas(cfg, x)
            assert np.all(d > kappa * cfg.delta_base)
            assert np.all(d < cfg.delta_base)

    def test_kappa_one_disables_compression(self):
        cfg = make_cfg(kappa=1.0, delta_base=0.5)
        d = rs.compression_deltas(cfg, np.random.default_rng(4).normal(size=(7, 3)))
        assert np.all(d == 0.5)

    def test_kappa_validation(self):
        with pytest.raises(ValueError):
            make_cfg(kappa=0.0)
        with pytest.raises(ValueError):
            make_cfg(kappa=1.5)


class TestBuildGrid:
    def test_no_compression_degeneracy(self):
        # Power-of-two interval keeps all sums exact: grid == source times.
        L, delta = 23, 0.5
        plan = rs.build_grid(np.full(L, delta), delta)
        assert plan.dst_len == L
        np.testing.assert_array_equal(plan.dst_times, plan.src_times)

    def test_full_compression_floor(self):
        L, kappa, delta = 10, 0.5, 1.0
        plan = rs.build_grid(np.full(L, kappa * delta), delta)
        assert plan.dst_len == math.floor(kappa * L)

    def test_length_one_clamp(self):
        plan = rs.build_grid(np.array([0.4]), 1.0)
        assert plan.dst_len == 1

    def test_positive_deltas_required(self):
        with pytest.raises(ValueError):
            rs.build_grid(np.array([0.5, 0.0]), 1.0)

    @settings(max_examples=100, deadline=None)
    @given(
        st.integers(min_value=1, max_value=64),
        st.sampled_from([0.1, 0.2, 0.5]),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    def test_grid_length_bounds(self, L, kappa, seed):
        cfg = make_cfg(kappa=kappa, seed=seed)
        x = np.random.default_rng(seed).normal(size=(L, 3))
        plan = rs.build_grid(rs.compression_deltas(cfg, x), cfg.delta_base)
        assert math.floor(kappa * L) <= plan.dst_len <= L


class TestKnn:
    def test_tie_breaks_toward_lower_index(self):
        # distances [0.4, 0.1, 0.4]: index 1 first, then the 0-vs-2 tie
        # resolves to 0; sorted by time gives [0, 1].
        idx = rs.knn_indices(0.6, np.array([0.2, 0.5, 1.0]), 2)
        np.testing.assert_array_equal(idx, [0, 1])

    def test_exact_hit_single_neighbor(self):
        idx = rs.knn_indices(0.5, np.array([0.2, 0.5, 1.0]), 1)
        np.testing.assert_array_equal(idx, [1])

    def test_k_equals_length_returns_all_in_order(self):
        idx = rs.knn_indices(0.9, np.array([0.1, 0.4, 0.8, 1.5]), 4)
        np.testing.assert_array_equal(idx, [0, 1, 2, 3])

    def test_k_beyond_length_repeats_last(self):
        idx = rs.knn_indices(0.3, np.array([0.2, 0.6]), 4)
        np.testing.assert_array_equal(idx, [0, 1, 1, 1])

    def test_matches_exhaustive_enumeration(self):
        r = np.random.default_rng(5)
        for _ in range(200):
            L = int(r.integers(1, 12))
            times = np.sort(r.uniform(0, 10, size=L))
            times += np.arange(L) * 1e-6  # enforce strict increase
            t = float(r.uniform(-1, 11))
            k = int(r.integers(1, 6))
            got = rs.knn_indices(t, times, k)
            ranked = sorted(range(L), key=lambda j: (abs(times[j] - t), j))
            want = np.sort(ranked[: min(k, L)])
            np.testing.assert_array_equal(got[: min(k, L)], want)

    def test_monotone_routing_windows(self):
        cfg = make_cfg(kappa=0.3, window_k=3, seed=7)
        x = np.random.default_rng(8).normal(size=(40, 3))
        plan = rs.make_plan(rs.compression_deltas(cfg, x), cfg.delta_base, cfg.window_k)
        for l in range(plan.dst_len - 1):
            assert np.all(plan.neighbors[l + 1] >= plan.neighbors[l])


class TestGaussExpand:
    def test_peak_at_mean(self):
        mus = np.array([-1.0, 0.3, 2.0])
        out = rs.gauss_expand(0.3, mus)
        assert out[1] == 1.0

    def test_half_height_offset(self):
        mus = np.array([0.0])
        out = rs.gauss_expand(math.sqrt(math.log(2.0)), mus)
        assert out[0] == pytest.approx(0.5, rel=1e-12)

    def test_range(self):
        r = np.random.default_rng(9)
        for _ in range(100):
            out = rs.gauss_expand(float(r.normal() * 3), r.normal(size=5))
            assert np.all(out > 0.0) and np.all(out <= 1.0)

    def test_mean_gradient_formula(self):
        # d/dmu exp(-(d-mu)^2) = 2 (d - mu) exp(-(d-mu)^2)
        d = 0.7
        mus = np.array([-0.5, 0.2, 1.3])
        tape = ad.Tape()
        m = tape.leaf(mus)
        diff = ad.sub(ad.constant(np.full(3, d)), m)
        eps = ad.exp(ad.neg(ad.mul(diff, diff)))
        tape.backward(ad.reduce_sum(eps))
        want = 2.0 * (d - mus) * rs.gauss_expand(d, mus)
        np.testing.assert_allclose(tape.grad(m), want, rtol=1e-12)
        err = ad.grad_check(
            lambda t: ad.reduce_sum(ad.exp(ad.neg(ad.mul(ad.sub(ad.constant(np.full(3, d)), t),
                                                         ad.sub(ad.constant(np.full(3, d)), t))))),
            mus,
        )
        assert err < 1e-4


class TestCompress:
    def test_k1_projection_copies_nearest(self):
        cfg = make_cfg(width=3, kappa=0.4, window_k=1, basis_g=2, seed=10)
        cfg.theta_gamma = rs.center_copy_gamma(3, 2)
        x = np.random.default_rng(11).normal(size=(12, 3))
        plan = rs.make_plan(rs.compression_deltas(cfg, x), cfg.delta_base, 1)
        out = rs.compress(cfg, x, plan)
        np.testing.assert_array_equal(out, x[plan.neighbors[:, 0]])

    def test_no_compression_identity(self):
        cfg = make_cfg(width=3, kappa=1.0, window_k=1, basis_g=2, seed=12, delta_base=0.5)
        cfg.theta_gamma = rs.center_copy_gamma(3, 2)
        x = np.random.default_rng(13).normal(size=(9, 3))
        plan = rs.make_plan(rs.compression_deltas(cfg, x), cfg.delta_base, 1)
        assert plan.dst_len == 9
        np.testing.assert_array_equal(rs.compress(cfg, x, plan), x)

    def test_plan_length_mismatch(self):
        cfg = make_cfg()
        x = np.random.default_rng(14).normal(size=(8, 3))
        plan = rs.make_plan(rs.compression_deltas(cfg, x), cfg.delta_base, cfg.window_k)
        with pytest.raises(ValueError):
            rs.compress(cfg, x[:5], plan)

    def test_tracked_matches_reference(self):
        cfg = make_cfg(width=3, kappa=0.3, window_k=3, basis_g=4, seed=15)
        x = np.random.default_rng(16).normal(size=(20, 3))
        deltas = rs.compression_deltas(cfg, x)
        plan = rs.make_plan(deltas, cfg.delta_base, cfg.window_k)
        want = rs.compress(cfg, x, plan)
        got = rs.compress_tracked(
            ad.constant(x), plan, ad.constant(cfg.theta_gamma), ad.constant(cfg.mus),
            ad.constant(plan.src_times), ad.constant(plan.dst_times),
        )
        np.testing.assert_allclose(got.numpy(), want, rtol=0, atol=1e-14)

    def test_gradients_wrt_inputs_and_means(self):
        cfg = make_cfg(width=2, kappa=0.4, window_k=2, basis_g=3, seed=17)
        x = np.random.default_rng(18).normal(size=(10, 2))
        deltas = rs.compression_deltas(cfg, x)
        plan = rs.make_plan(deltas, cfg.delta_base, cfg.window_k)  # routing frozen
        w = np.random.default_rng(19).normal(size=(plan.dst_len, 2))

        def loss_from_x(t):
            out = rs.compress_tracked(
                t, plan, ad.constant(cfg.theta_gamma), ad.constant(cfg.mus),
                ad.constant(plan.src_times), ad.constant(plan.dst_times),
            )
            return ad.reduce_sum(ad.mul(out, ad.constant(w)))

        assert ad.grad_check(loss_from_x, x) < 1e-4

        def loss_from_mus(t):
            out = rs.compress_tracked(
                ad.constant(x), plan, ad.constant(cfg.theta_gamma), t,
                ad.constant(plan.src_times), ad.constant(plan.dst_times),
            )
            return ad.reduce_sum(ad.mul(out, ad.constant(w)))

        assert ad.grad_check(loss_from_mus, cfg.mus) < 1e-4

    def test_time_axis_gradient_flows(self):
        # Gradients through the signed distances reach the source times,
        # which is the path that trains the interval map.
        cfg = make_cfg(width=2, kappa=0.4, window_k=2, basis_g=3, seed=20)
        x = np.random.default_rng(21).normal(size=(10, 2))
        deltas = rs.compression_deltas(cfg, x)
        plan = rs.make_plan(deltas, cfg.delta_base, cfg.window_k)
        w = np.random.default_rng(22).normal(size=(plan.dst_len, 2))

        def loss_from_src_times(t):
            out = rs.compress_tracked(
                ad.constant(x), plan, ad.constant(cfg.theta_gamma), ad.constant(cfg.mus),
                t, ad.constant(plan.dst_times),
            )
            return ad.reduce_sum(ad.mul(out, ad.constant(w)))

        assert ad.grad_check(loss_from_src_times, plan.src_times) < 1e-4

    def test_not_permutation_invariant(self):
        cfg = make_cfg(width=2, kappa=0.5, window_k=1, basis_g=2, seed=23)
        a = np.array([[2.0, -1.0], [-3.0, 0.5]])
        b = a[::-1].copy()
        out_a = rs.compress(cfg, a, rs.make_plan(rs.compression_deltas(cfg, a), cfg.delta_base, 1))
        out_b = rs.compress(cfg, b, rs.make_plan(rs.compression_deltas(cfg, b), cfg.delta_base, 1))
        assert out_a.shape != out_b.shape or not np.allclose(out_a, out_b)
        assert out_a.shape != out_b.shape or not np.allclose(out_a, out_b[::-1])


class TestDecompress:
    def test_identity_when_grids_match(self):
        plan = rs.build_grid(np.full(6, 0.5), 0.5)
        y = np.random.default_rng(24).normal(size=(6, 3))
        np.testing.assert_array_equal(rs.decompress(y, plan), y)

    def test_single_row_broadcast(self):
        plan = rs.build_grid(np.array([0.3, 0.3, 0.3]), 1.0)
        assert plan.dst_len == 1
        y = np.array([[1.0, 2.0]])
        out = rs.decompress(y, plan)
        np.testing.assert_array_equal(out, np.tile(y, (3, 1)))

    def test_matches_brute_force_argmin(self):
        r = np.random.default_rng(25)
        for _ in range(50):
            cfg = make_cfg(kappa=float(r.uniform(0.15, 0.9)), seed=int(r.integers(1 << 30)))
            x = r.normal(size=(int(r.integers(2, 30)), 3))
            plan = rs.build_grid(rs.compression_deltas(cfg, x), cfg.delta_base)
            got = rs.closest_grid_index(plan)
            for l, t in enumerate(plan.src_times):
                best = min(range(plan.dst_len), key=lambda j: (abs(t - plan.dst_times[j]), j))
                assert got[l] == best

    def test_length_mismatch(self):
        plan = rs.build_grid(np.full(6, 0.5), 0.5)
        with pytest.raises(ValueError):
            rs.decompress(np.zeros((4, 2)), plan)

    def test_tracked_matches_and_scatters(self):
        plan = rs.build_grid(np.full(4, 0.25), 0.5)  # dst_len 2, two sources per grid point
        y = np.random.default_rng(26).normal(size=(plan.dst_len, 2))
        out = rs.decompress_tracked(ad.constant(y), plan)
        np.testing.assert_array_equal(out.numpy(), rs.decompress(y, plan))
        tape = ad.Tape()
        yt = tape.leaf(y)
        tape.backward(ad.reduce_sum(rs.decompress_tracked(yt, plan)))
        counts = np.bincount(rs.closest_grid_index(plan), minlength=plan.dst_len)
        np.testing.assert_array_equal(tape.grad(yt), np.tile(counts[:, None], (1, 2)).astype(float))


class TestRoundTrip:
    def test_uncompressed_center_copy_roundtrip_bit_exact(self):
        r = np.random.default_rng(27)
        for _ in range(20):
            width = int(r.integers(1, 5))
            L = int(r.integers(1, 40))
            cfg = rs.init_resample_config(width, 1.0, 1, 3, r, delta_base=0.5)
            cfg.theta_gamma = rs.center_copy_gamma(width, 3)
            x = r.normal(size=(L, width))
            plan = rs.make_plan(rs.compression_deltas(cfg, x), cfg.delta_base, 1)
            back = rs.decompress(rs.compress(cfg, x, plan), plan)
            assert np.array_equal(back, x)
