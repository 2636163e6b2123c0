"""Feature-count (model order) estimation for the reduced-rank learners.

Two estimators:

* An eigenvalue information criterion on the pooled snapshot covariance
  (the classical source-number detector).  Cheap, applicable to every
  learner, but known to overshoot when the sample support is thin
  relative to the dimension.
* A meta-validation sweep: meta-train with k features on one set of
  frames, adapt on held-out validation frames and keep the k minimizing
  the summed validation test loss.  Costlier but directly tied to
  prediction quality.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass

import numpy as np

from .datasets import SplitDataset
from .lstd import LstdHyper, lstd_adapt
from .meta import EpConfig, _FrameState, _meta_fit_feature, canonical_phase


@dataclass
class RankEstimate:
    """Chosen feature count plus the criterion curve that produced it."""

    k_hat: int
    ks: np.ndarray
    scores: np.ndarray
    method: str
    train_scores: np.ndarray | None = None   # meta-training curve, if any

    def __post_init__(self):
        self.ks = np.asarray(self.ks)
        self.scores = np.asarray(self.scores, dtype=float)


def aic_rank(pooled_channels: np.ndarray) -> RankEstimate:
    """Information-criterion rank estimate from pooled channel snapshots.

    For each candidate k the score is
    ``2*M*(p-k)*log(arith_mean/geo_mean of the p-k smallest covariance
    eigenvalues) + 2*k*(2p-k)`` with M pooled snapshots and p the
    snapshot dimension; the estimate is the minimizing k.  Flat tails
    (all remaining eigenvalues equal) zero the first term, so the
    penalty picks the smallest k with an isotropic remainder.

    Args:
        pooled_channels: (S, M) matrix of snapshots pooled over frames.

    Returns:
        RankEstimate over candidates k = 1..S-1 (k = S would leave no
        noise subspace to test).
    """
    pooled = np.asarray(pooled_channels, dtype=complex)
    if pooled.ndim != 2:
        raise ValueError("pooled_channels must be a (S, M) matrix")
    p, m = pooled.shape
    if m < 2:
        raise ValueError("need at least two pooled snapshots")
    if m < p:
        warnings.warn(f"only {m} snapshots for dimension {p}; the covariance "
                      "is rank deficient and the estimate unreliable",
                      RuntimeWarning, stacklevel=2)
    cov = pooled @ pooled.conj().T / m
    evals = np.linalg.eigvalsh(cov)[::-1]
    evals = np.clip(evals, 0.0, None)
    # Floor relative to the top eigenvalue so tails of pure numerical
    # junk (noiseless data) read as isotropic instead of spread over
    # dozens of decades; any physical noise floor sits far above this.
    floored = np.clip(evals, max(evals[0] * 1e-14, 1e-300), None)
    ks = np.arange(1, p)
    scores = np.empty(ks.size)
    for i, k in enumerate(ks):
        tail = floored[k:]
        log_ratio = np.log(np.mean(tail)) - np.mean(np.log(tail))
        scores[i] = 2.0 * m * (p - k) * log_ratio + 2.0 * k * (2 * p - k)
    k_hat = int(ks[int(np.argmin(scores))])
    return RankEstimate(k_hat=k_hat, ks=ks, scores=scores, method="AIC")


def meta_validation_rank(train_frames: list[SplitDataset],
                         val_frames: list[SplitDataset],
                         lam_long: float, lam_short: float,
                         ep: EpConfig = EpConfig(), k_max: int = 8,
                         sequential: bool = True,
                         patience: int = 2) -> RankEstimate:
    """Choose the feature count by a meta-validation sweep.

    Meta-training is hierarchical in the features, so the k-feature
    hyperparameters are the first k features of a single incremental
    fit.  After each feature the summed validation loss (adapt on each
    validation frame's train split, score on its test split, full
    k-feature predictor) is recorded; in sequential mode the sweep stops
    early once the curve has risen for ``patience`` consecutive steps.

    Args:
        train_frames: Meta-training split datasets.
        val_frames: Held-out validation split datasets (disjoint frames).
        lam_long / lam_short: Regularization weights used both for
            meta-training and for validation-time adaptation.
        ep: Outer-loop settings for the meta fit.
        k_max: Largest candidate feature count.
        sequential: Enable early stopping (the default); otherwise all
            candidates up to k_max are evaluated.
        patience: Consecutive increases tolerated before stopping.
    """
    if not train_frames or not val_frames:
        raise ValueError("need at least one meta-training and one validation frame")
    s_dim = train_frames[0].train.channel_dim
    k_max = min(int(k_max), s_dim)
    if k_max < 1:
        raise ValueError("k_max must be at least 1")

    states = [_FrameState(sd) for sd in train_frames]
    long_bias, short_bias = [], []
    ks, val_scores, train_scores = [], [], []
    rises = 0
    for k in range(1, k_max + 1):
        (loss, b_bar, v_bar, stars), _, _ = _meta_fit_feature(
            states, lam_long, lam_short, ep)
        long_bias.append(canonical_phase(b_bar))
        short_bias.append(v_bar)
        for st, star in zip(states, stars):
            st.advance(star.feature, star.filt)
        hyper_k = LstdHyper(n_features=k, lam_long=lam_long,
                            lam_short=lam_short, long_bias=list(long_bias),
                            short_bias=list(short_bias))
        val_loss = _validation_loss(val_frames, hyper_k, ep)
        ks.append(k)
        val_scores.append(val_loss)
        train_scores.append(loss)
        if sequential and len(val_scores) >= 2:
            rises = rises + 1 if val_scores[-1] > val_scores[-2] else 0
            if rises >= patience:
                break
    idx = int(np.argmin(val_scores))
    return RankEstimate(k_hat=int(ks[idx]), ks=np.asarray(ks),
                        scores=np.asarray(val_scores),
                        method="meta_validation",
                        train_scores=np.asarray(train_scores))


def _validation_loss(val_frames, hyper, ep: EpConfig) -> float:
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for sd in val_frames:
            pred = lstd_adapt(sd.train, hyper, ep.als)
            resid = sd.test.X @ pred.V - sd.test.Y
            total += float(np.sum(np.abs(resid) ** 2))
    return total


def curve_to_csv(est: RankEstimate) -> str:
    """Criterion curve as ``k,score`` CSV rows."""
    buf = io.StringIO()
    buf.write("k,score\n")
    for k, s in zip(est.ks, est.scores):
        buf.write(f"{int(k)},{float(s)!r}\n")
    return buf.getvalue()
