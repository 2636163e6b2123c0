"""Feature-count estimation: information criterion and validation sweep."""

import numpy as np
import pytest

from chanpred import meta, rank
from chanpred import simulator as sim
from synth import known_rank_frames, known_rank_splits


def _aic_reference(evals, n_samples):
    """Straight transcription of the eigenvalue information criterion,
    kept separate from the implementation on purpose."""
    p = evals.size
    scores = {}
    for k in range(1, p):
        tail = np.clip(evals[k:], max(evals[0] * 1e-14, 1e-300), None)
        log_ratio = np.log(np.mean(tail)) - np.mean(np.log(tail))
        scores[k] = 2.0 * n_samples * (p - k) * log_ratio + 2.0 * k * (2 * p - k)
    return scores


class TestAic:
    def test_noiseless_rank_one(self):
        # a single frame's slots all live on one direction
        cfg = sim.AntennaConfig.from_total(4)
        fr = sim.draw_frame(0, cfg, "fast", 1, 45e-9, 40)
        est = rank.aic_rank(fr.channels)
        assert est.k_hat == 1

    def test_known_rank_three_with_mild_noise(self):
        # pooled rank-3 snapshots, plenty of samples, criterion checked
        # exhaustively against the independent transcription
        chans = known_rank_frames(0, 1, 1, 3, n_slots=600, channel_dim=8,
                                  noise_std=0.05)[0]
        est = rank.aic_rank(chans)
        assert est.k_hat == 3
        cov = chans @ chans.conj().T / chans.shape[1]
        evals = np.clip(np.linalg.eigvalsh(cov)[::-1], 0.0, None)
        ref = _aic_reference(evals, chans.shape[1])
        assert min(ref, key=ref.get) == 3
        for i, k in enumerate(est.ks):
            assert est.scores[i] == pytest.approx(ref[int(k)], rel=1e-12)

    def test_high_dimensional_noisy_overestimates(self):
        # thin sample support in high dimension: the criterion must not
        # underestimate, mirroring its known overshoot
        cfg = sim.AntennaConfig.from_total(32)
        root = np.random.SeedSequence(7)
        children = root.spawn(8)
        frames = []
        for i in range(4):
            fr = sim.draw_frame(children[i], cfg, "fast", 3, 45e-9, 16)
            fr = sim.add_estimation_noise(fr, sim.NoiseModel(100.0, 1),
                                          children[4 + i])
            frames.append(fr)
        pooled = np.concatenate([f.channels for f in frames], axis=1)
        est = rank.aic_rank(pooled)
        assert est.k_hat >= 3

    def test_curve_minimum_is_the_estimate(self):
        chans = known_rank_frames(1, 2, 1, 2, n_slots=200, channel_dim=6,
                                  noise_std=0.05)[0]
        est = rank.aic_rank(chans)
        assert est.k_hat == int(est.ks[int(np.argmin(est.scores))])
        assert 1 <= est.k_hat <= 6

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            rank.aic_rank(np.ones((4, 1), dtype=complex))

    def test_thin_support_flagged(self):
        rng = np.random.default_rng(0)
        pooled = rng.standard_normal((8, 4)) + 1j * rng.standard_normal((8, 4))
        with pytest.warns(RuntimeWarning):
            rank.aic_rank(pooled)


EP = meta.EpConfig(outer_iters=15, step=2e-2, als_tol=1e-7, als_max_iters=60)


class TestMetaValidation:
    def test_recovers_rank_two(self):
        hits = 0
        for trial in range(4):
            tr = known_rank_splits(trial, 100 + trial, 10, 2, n_test=32)
            va = known_rank_splits(trial, 500 + trial, 10, 2, n_test=32)
            est = rank.meta_validation_rank(tr, va, 5.0, 16.0, EP, k_max=5)
            hits += (est.k_hat == 2)
        assert hits >= 3

    def test_training_curve_nonincreasing(self):
        tr = known_rank_splits(9, 109, 10, 2, n_test=32)
        va = known_rank_splits(9, 509, 10, 2, n_test=32)
        est = rank.meta_validation_rank(tr, va, 5.0, 16.0, EP, k_max=4,
                                        sequential=False)
        steps = np.diff(est.train_scores)
        assert np.all(steps <= 1e-9 * max(1.0, est.train_scores[0]))

    def test_early_stop_prunes_candidates(self):
        tr = known_rank_splits(2, 102, 10, 1, n_test=32)
        va = known_rank_splits(2, 502, 10, 1, n_test=32)
        est = rank.meta_validation_rank(tr, va, 5.0, 16.0, EP, k_max=6,
                                        sequential=True)
        assert est.ks.size < 6
        assert est.k_hat == 1

    def test_determinism(self):
        tr = known_rank_splits(3, 103, 6, 1, n_test=24)
        va = known_rank_splits(3, 503, 6, 1, n_test=24)
        a = rank.meta_validation_rank(tr, va, 5.0, 16.0, EP, k_max=3)
        b = rank.meta_validation_rank(tr, va, 5.0, 16.0, EP, k_max=3)
        assert a.k_hat == b.k_hat
        assert np.array_equal(a.scores, b.scores)

    def test_validation_frames_are_separate_objects(self):
        tr = known_rank_splits(4, 104, 4, 1, n_test=24)
        va = known_rank_splits(4, 504, 4, 1, n_test=24)
        assert not any(t is v for t in tr for v in va)
        for t in tr:
            for v in va:
                assert not np.array_equal(t.train.X, v.train.X)

    def test_requires_frames(self):
        tr = known_rank_splits(5, 105, 2, 1, n_test=24)
        with pytest.raises(ValueError):
            rank.meta_validation_rank(tr, [], 1.0, 1.0, EP)


class TestCurveCsv:
    def test_format(self):
        est = rank.RankEstimate(k_hat=2, ks=np.array([1, 2, 3]),
                                scores=np.array([3.0, 1.0, 2.0]),
                                method="AIC")
        text = rank.curve_to_csv(est)
        lines = text.strip().splitlines()
        assert lines[0] == "k,score"
        assert lines[1].startswith("1,")
        assert len(lines) == 4
