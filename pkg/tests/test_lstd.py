"""Reduced-rank predictor: assembly identity, ALS behavior, training modes."""

import warnings

import numpy as np
import pytest

from chanpred import datasets as dsm
from chanpred import lstd
from synth import complex_vector, feature_targets, random_dataset, unit_vector


def _random_predictor(rng, s_dim, window, n_features):
    feats = [unit_vector(rng, s_dim) for _ in range(n_features)]
    filts = [complex_vector(rng, window) for _ in range(n_features)]
    return lstd.assemble(feats, filts)


class TestCanonicalPhase:
    def test_pins_global_phase(self):
        rng = np.random.default_rng(0)
        b = unit_vector(rng, 5)
        for theta in (0.3, 1.7, -2.2):
            rotated = b * np.exp(1j * theta)
            assert np.allclose(lstd.canonical_phase(rotated),
                               lstd.canonical_phase(b), atol=1e-12)

    def test_pivot_real_nonnegative(self):
        rng = np.random.default_rng(1)
        b = lstd.canonical_phase(unit_vector(rng, 6))
        pivot = b[int(np.argmax(np.abs(b)))]
        assert pivot.imag == pytest.approx(0.0, abs=1e-14)
        assert pivot.real >= 0


class TestAssemble:
    def test_single_feature_identity_block(self):
        s_dim = 3
        e0 = np.zeros(s_dim, dtype=complex)
        e0[0] = 1.0
        pred = lstd.assemble([e0], [np.array([1.0 + 0j])])
        want = np.zeros((s_dim, s_dim), dtype=complex)
        want[0, 0] = 1.0
        assert np.allclose(pred.V, want)

    def test_matrix_equals_pipeline(self):
        rng = np.random.default_rng(2)
        pred = _random_predictor(rng, 5, 4, 3)
        worst = 0.0
        for _ in range(100):
            hist = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
            via_matrix = pred.V.conj().T @ hist.reshape(-1, order="F")
            via_pipeline = lstd.apply_pipeline(pred, hist)
            worst = max(worst, float(np.max(np.abs(via_matrix - via_pipeline))))
        assert worst <= 1e-10

    def test_kron_block_rank_bounded(self):
        # every S x S block of the assembled matrix is a sum of K projectors
        rng = np.random.default_rng(3)
        s_dim, window, k = 4, 3, 2
        pred = _random_predictor(rng, s_dim, window, k)
        for n in range(window):
            block = pred.V[n * s_dim:(n + 1) * s_dim, :]
            svals = np.linalg.svd(block, compute_uv=False)
            rank = int(np.sum(svals > 1e-10 * max(svals[0], 1e-300)))
            assert rank <= k

    def test_slightly_off_norm_renormalized_with_warning(self):
        rng = np.random.default_rng(4)
        b = unit_vector(rng, 4) * (1 + 5e-7)
        with pytest.warns(RuntimeWarning):
            pred = lstd.assemble([b], [complex_vector(rng, 3)])
        assert np.linalg.norm(pred.features[0]) == pytest.approx(1.0, abs=1e-12)

    def test_far_from_unit_rejected(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            lstd.assemble([unit_vector(rng, 4) * 1.1], [complex_vector(rng, 3)])

    def test_mismatched_lists_rejected(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError):
            lstd.assemble([unit_vector(rng, 4)], [])


class TestAlsFeatureFit:
    def test_realizable_reaches_zero(self):
        rng = np.random.default_rng(10)
        s_dim, window, n_rows = 3, 4, 14
        b = unit_vector(rng, s_dim)
        v = complex_vector(rng, window)
        x = (rng.standard_normal((n_rows, s_dim * window))
             + 1j * rng.standard_normal((n_rows, s_dim * window)))
        y = feature_targets(x, s_dim, b, v)
        res = lstd.als_feature_fit(x, y, 0.0, 0.0, np.eye(s_dim)[0],
                                   np.zeros(window))
        assert res.trace[-1] <= 1e-10 * float(np.sum(np.abs(y) ** 2))
        assert abs(np.vdot(res.feature, b)) == pytest.approx(1.0, abs=1e-8)

    def test_monotone_objective_on_random_instances(self):
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            s_dim, window = 2 + seed % 3, 2 + seed % 4
            x = (rng.standard_normal((10, s_dim * window))
                 + 1j * rng.standard_normal((10, s_dim * window)))
            y = (rng.standard_normal((10, s_dim))
                 + 1j * rng.standard_normal((10, s_dim)))
            lam1, lam2 = rng.uniform(0, 2), rng.uniform(0, 2)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = lstd.als_feature_fit(x, y, lam1, lam2,
                                           unit_vector(rng, s_dim),
                                           complex_vector(rng, window))
            steps = np.diff(res.trace)
            assert np.all(steps <= 1e-10 * max(1.0, abs(res.trace[0])))

    def test_matches_multistart_oracle_on_tiny_instance(self):
        # global-quality check: best of 200 random restarts on a fixed
        # tiny instance must not beat the default fit by more than 1%
        rng = np.random.default_rng(42)
        s_dim, window, n_rows = 2, 2, 6
        x = (rng.standard_normal((n_rows, s_dim * window))
             + 1j * rng.standard_normal((n_rows, s_dim * window)))
        y = (rng.standard_normal((n_rows, s_dim))
             + 1j * rng.standard_normal((n_rows, s_dim)))
        b_bar = unit_vector(rng, s_dim)
        v_bar = complex_vector(rng, window)
        cfg = lstd.AlsConfig(tol=1e-12, max_iters=500)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            default = lstd.als_feature_fit(x, y, 0.5, 0.5, b_bar, v_bar, cfg)
            best = np.inf
            for k in range(200):
                start_rng = np.random.default_rng(1000 + k)
                res = lstd.als_feature_fit(
                    x, y, 0.5, 0.5, b_bar, v_bar, cfg,
                    feature_init=unit_vector(start_rng, s_dim))
                best = min(best, res.trace[-1])
        assert default.trace[-1] <= best + 0.01 * abs(best)

    def test_non_convergence_flagged(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((8, 6)) + 1j * rng.standard_normal((8, 6))
        y = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
        with pytest.warns(RuntimeWarning):
            res = lstd.als_feature_fit(x, y, 0.3, 0.3, unit_vector(rng, 2),
                                       complex_vector(rng, 3),
                                       lstd.AlsConfig(tol=1e-16, max_iters=1))
        assert not res.converged

    def test_feature_stays_unit_norm(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((9, 8)) + 1j * rng.standard_normal((9, 8))
        y = rng.standard_normal((9, 2)) + 1j * rng.standard_normal((9, 2))
        res = lstd.als_feature_fit(x, y, 0.4, 0.4, unit_vector(rng, 2),
                                   complex_vector(rng, 4))
        assert np.linalg.norm(res.feature) == pytest.approx(1.0, abs=1e-10)


class TestConventionalFit:
    def test_single_feature_equals_direct_als(self):
        rng = np.random.default_rng(20)
        tr = random_dataset(rng, 12, 3, 4)
        hyper = lstd.LstdHyper(1, 0.5, 0.5, [unit_vector(rng, 3)],
                               [complex_vector(rng, 4)])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pred = lstd.lstd_conventional_fit(tr, hyper)
            res = lstd.als_feature_fit(tr.X, tr.Y, 0.5, 0.5,
                                       hyper.long_bias[0], hyper.short_bias[0])
        assert np.allclose(pred.features[0], res.feature, atol=1e-12)
        assert np.allclose(pred.filters[0], res.filt, atol=1e-12)

    def test_training_loss_nonincreasing_in_features(self):
        rng = np.random.default_rng(21)
        tr = random_dataset(rng, 20, 3, 4)
        losses = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for k in (1, 2, 3):
                hyper = lstd.LstdHyper.uninformative(k, 3, 4)
                pred = lstd.lstd_conventional_fit(tr, hyper)
                losses.append(float(np.sum(np.abs(tr.X @ pred.V - tr.Y) ** 2)))
        assert losses[0] >= losses[1] - 1e-9
        assert losses[1] >= losses[2] - 1e-9

    def test_rank_two_noiseless_channel_fit_exactly(self):
        # two-path channel: each feature's amplitude sequence is a two-pole
        # signal, so a window-5 filter nails it and K=2 leaves nothing
        from chanpred import simulator as sim

        cfg = sim.AntennaConfig(n_rx_hor=4)
        rng = np.random.default_rng(22)
        spatial = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        fr = sim.frame_from_params(cfg, [0.6, 0.4], [0.0, 0.0], [23.0, 71.0],
                                   spatial, 48, srs_rate=200.0,
                                   symbol_period=1.0)
        tr = dsm.build_dataset(fr.channels, window=5, lag=3)
        hyper = lstd.LstdHyper.uninformative(2, 4, 5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pred = lstd.lstd_conventional_fit(
                tr, hyper, lstd.AlsConfig(tol=1e-13, max_iters=2000))
        resid = float(np.sum(np.abs(tr.X @ pred.V - tr.Y) ** 2))
        total = float(np.sum(np.abs(tr.Y) ** 2))
        assert resid <= 1e-8 * total


class TestAdapt:
    def test_zero_weights_match_conventional(self):
        rng = np.random.default_rng(30)
        tr = random_dataset(rng, 15, 3, 4)
        hyper = lstd.LstdHyper(2, 0.0, 0.0,
                               [unit_vector(rng, 3), unit_vector(rng, 3)],
                               [complex_vector(rng, 4), complex_vector(rng, 4)])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            a = lstd.lstd_adapt(tr, hyper)
            b = lstd.lstd_conventional_fit(tr, hyper)
        assert np.allclose(a.V, b.V, atol=1e-12)

    def test_huge_filter_weight_pins_filters(self):
        rng = np.random.default_rng(31)
        tr = random_dataset(rng, 15, 3, 4)
        v_bar = complex_vector(rng, 4)
        hyper = lstd.LstdHyper(1, 0.1, 1e8, [unit_vector(rng, 3)], [v_bar])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pred = lstd.lstd_adapt(tr, hyper)
        assert np.linalg.norm(pred.filters[0] - v_bar) <= 1e-4

    def test_informative_feature_prior_helps_from_one_pilot(self):
        # paired comparison on a noisy rank-one channel with one training
        # pair: aligning with the true direction must beat no prior
        from chanpred import simulator as sim

        wins = 0
        for seed in range(6):
            rng = np.random.default_rng(200 + seed)
            s_dim, window, lag = 4, 5, 3
            direction = unit_vector(rng, s_dim)
            rho = rng.uniform(0.1, 0.5)
            slots = 40
            clean = np.outer(direction * 2.0,
                             np.exp(-2j * np.pi * rho * np.arange(slots)))
            noisy = clean + 0.1 * (rng.standard_normal(clean.shape)
                                   + 1j * rng.standard_normal(clean.shape))
            ds = dsm.build_dataset(noisy, window, lag)
            clean_ds = dsm.build_dataset(clean, window, lag)
            head = dsm.RegressionDataset(X=ds.X[:1], Y=ds.Y[:1], window=window,
                                         lag=lag, channel_dim=s_dim)
            v_bar = np.zeros(window, dtype=complex)
            with_prior = lstd.LstdHyper(1, 50.0, 0.05, [direction], [v_bar])
            without = lstd.LstdHyper(1, 0.0, 0.05, [unit_vector(rng, s_dim)],
                                     [v_bar])
            errs = {}
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                for name, hyper in (("prior", with_prior), ("none", without)):
                    pred = lstd.lstd_adapt(head, hyper)
                    res = ds.X[1:] @ pred.V - clean_ds.Y[1:]
                    errs[name] = float(np.sum(np.abs(res) ** 2))
            wins += errs["prior"] < errs["none"]
        assert wins >= 5


class TestTransferFit:
    def test_single_frame_matches_unregularized_conventional(self):
        rng = np.random.default_rng(40)
        tr = random_dataset(rng, 14, 3, 4)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            hyper = lstd.lstd_transfer_fit([tr], 2)
            pred = lstd.lstd_conventional_fit(
                tr, lstd.LstdHyper.uninformative(2, 3, 4))
        for k in range(2):
            assert np.allclose(hyper.long_bias[k], pred.features[k], atol=1e-12)
            assert np.allclose(hyper.short_bias[k], pred.filters[k], atol=1e-12)

    def test_repeated_frames_leave_solution_unchanged(self):
        rng = np.random.default_rng(41)
        tr = random_dataset(rng, 14, 3, 4)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            once = lstd.lstd_transfer_fit([tr], 1)
            thrice = lstd.lstd_transfer_fit([tr, tr, tr], 1)
        assert np.allclose(once.long_bias[0], thrice.long_bias[0], atol=1e-9)
        assert np.allclose(once.short_bias[0], thrice.short_bias[0], atol=1e-9)

    def test_recovers_shared_direction(self):
        # frames share one spatial direction but carry different filters
        rng = np.random.default_rng(42)
        s_dim, window = 4, 3
        b_true = unit_vector(rng, s_dim)
        frames = []
        for _ in range(4):
            v = complex_vector(rng, window)
            # generous sample count: the greedy pooled fit aligns with the
            # common direction only up to O(1/L) finite-sample coupling
            x = (rng.standard_normal((200, s_dim * window))
                 + 1j * rng.standard_normal((200, s_dim * window)))
            y = feature_targets(x, s_dim, b_true, v)
            frames.append(dsm.RegressionDataset(X=x, Y=y, window=window,
                                                lag=1, channel_dim=s_dim))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            hyper = lstd.lstd_transfer_fit(frames, 1)
        assert abs(np.vdot(hyper.long_bias[0], b_true)) >= 0.99


class TestHyper:
    def test_long_bias_unit_normalized(self):
        hyper = lstd.LstdHyper(1, 0.1, 0.1, [np.array([3.0, 4.0])],
                               [np.zeros(2)])
        assert np.linalg.norm(hyper.long_bias[0]) == pytest.approx(1.0)

    def test_zero_long_bias_rejected(self):
        with pytest.raises(ValueError):
            lstd.LstdHyper(1, 0.1, 0.1, [np.zeros(3)], [np.zeros(2)])

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            lstd.LstdHyper(1, -0.1, 0.1, [np.ones(3)], [np.zeros(2)])


class TestSerialization:
    def test_hyper_round_trip(self):
        rng = np.random.default_rng(50)
        hyper = lstd.LstdHyper(2, 0.25, 1.5,
                               [unit_vector(rng, 4), unit_vector(rng, 4)],
                               [complex_vector(rng, 3), complex_vector(rng, 3)])
        back = lstd.hyper_from_csv(lstd.hyper_to_csv(hyper))
        assert back.n_features == 2
        assert back.lam_long == 0.25 and back.lam_short == 1.5
        for k in range(2):
            assert np.array_equal(back.long_bias[k], hyper.long_bias[k])
            assert np.array_equal(back.short_bias[k], hyper.short_bias[k])

    def test_predictor_round_trip(self):
        rng = np.random.default_rng(51)
        pred = _random_predictor(rng, 4, 3, 2)
        back = lstd.predictor_from_csv(lstd.predictor_to_csv(pred))
        assert np.allclose(back.V, pred.V, atol=1e-15)
