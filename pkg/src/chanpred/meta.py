"""Meta-learning of reduced-rank bias pairs via equilibrium propagation.

The meta problem asks for bias pairs (feature direction, filter mean)
such that, after adapting on each previous frame's train split, the
adapted predictors do well on the frames' held-out test splits.  The
inner adaptation is the alternating-least-squares fit of
:mod:`chanpred.lstd`, which has no closed-form dependence on the biases,
so the outer gradient is estimated by equilibrium propagation: solve the
inner problem twice, once as-is and once with the test loss mixed in at
a small weight ``alpha``, and difference the two stationary points.  For
the filter bias the gradient estimate is ``(2*lam_short/alpha) *
sum_f (v_f_star - v_f_alpha)``; for the feature bias it is
``(2*lam_long/alpha) * sum_f (P_f_star - P_f_alpha) @ b_bar`` with
``P = b b^H`` the feature projectors.  Both follow from differentiating
the inner losses at their stationary points, so they hold for any small
``alpha`` up to O(alpha) bias and inner-solver noise.

Features are meta-trained one at a time; when a feature's outer loop
finishes, its per-frame fitted contribution is subtracted from both the
train and test targets before the next feature starts (hierarchical
sequential training).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .datasets import SplitDataset
from .lstd import (AlsConfig, LstdHyper, _als, _default_feature_init,
                   _feature_rows, canonical_phase, history_stack)


@dataclass(frozen=True)
class EpConfig:
    """Equilibrium-propagation and outer-loop settings.

    ``alpha`` is the test-loss mixing weight of the perturbed inner
    problem (small, nonzero); ``step`` the Adam step size; ``outer_iters``
    the per-feature budget of outer updates; ``grad_tol`` stops a feature
    early once both gradient norms fall below it.
    """

    alpha: float = 1e-3
    step: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    outer_iters: int = 30
    grad_tol: float = 1e-9
    als_tol: float = 1e-8
    als_max_iters: int = 200

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be a small positive value below 1")
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.als_tol <= 0:
            raise ValueError("als_tol must be positive")

    @property
    def als(self) -> AlsConfig:
        return AlsConfig(tol=self.als_tol, max_iters=self.als_max_iters)


class Adam(object):
    """Adam over a real coefficient vector (complex handled by stacking)."""

    def __init__(self, dim, step, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step = step
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def update(self, grad):
        """Return the increment to subtract from the parameter."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return self.step * m_hat / (np.sqrt(v_hat) + self.eps)


def _c2r(z):
    return np.concatenate([z.real, z.imag])


def _r2c(x):
    half = x.size // 2
    return x[:half] + 1j * x[half:]


class _FrameState(object):
    """Per-frame buffers: window stacks, residual targets, shared ALS init.

    The alpha-perturbed inner problem is the plain inner problem on the
    row-stack [train; sqrt(alpha)*test], so the stacked buffers are
    prepared once per feature.
    """

    def __init__(self, sd: SplitDataset):
        self.hist_tr = history_stack(sd.train.X, sd.train.channel_dim)
        self.hist_te = history_stack(sd.test.X, sd.test.channel_dim)
        self.y_tr = np.array(sd.train.Y, dtype=complex)
        self.y_te = np.array(sd.test.Y, dtype=complex)

    def stacked(self, alpha):
        root = np.sqrt(alpha)
        hist = np.concatenate([self.hist_tr, root * self.hist_te], axis=0)
        y = np.concatenate([self.y_tr, root * self.y_te], axis=0)
        return hist, y

    def advance(self, feature, filt):
        self.y_tr = self.y_tr - _feature_rows(self.hist_tr, feature, filt)
        self.y_te = self.y_te - _feature_rows(self.hist_te, feature, filt)


def _solve_pair(state: _FrameState, b_bar, v_bar, lam_long, lam_short,
                alpha, als_cfg, b_init):
    """Unperturbed and alpha-perturbed inner solutions of one frame.

    Both solves descend from the same data-driven start; the perturbed
    problem is warm-started at the unperturbed stationary point, which
    pins it to the same local branch and keeps the finite-difference
    noise of the two-point gradient estimate small.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        star = _als(state.hist_tr, state.y_tr, lam_long, lam_short,
                    b_bar, v_bar, als_cfg, feature_init=b_init)
        hist_a, y_a = state.stacked(alpha)
        nudged = _als(hist_a, y_a, lam_long, lam_short,
                      b_bar, v_bar, als_cfg, feature_init=star.feature)
    return star, nudged


def _grad_accumulate(states, b_bar, v_bar, lam_long, lam_short, alpha, als_cfg,
                     inits):
    """One EP sweep over all frames.

    Returns (grad_b, grad_v, star solutions, outer loss, n_converged).
    Frames whose inner solves fail to converge are skipped and the sums
    rescaled to the full-frame count.
    """
    n_frames = len(states)
    proj_diff = np.zeros((b_bar.size, b_bar.size), dtype=complex)
    filt_diff = np.zeros(v_bar.size, dtype=complex)
    fallback_proj = np.zeros_like(proj_diff)
    fallback_filt = np.zeros_like(filt_diff)
    stars = [None] * n_frames
    loss = 0.0
    n_ok = 0
    for i, st in enumerate(states):
        star, nudged = _solve_pair(st, b_bar, v_bar, lam_long, lam_short,
                                   alpha, als_cfg, inits[i])
        stars[i] = star
        resid = _feature_rows(st.hist_te, star.feature, star.filt) - st.y_te
        loss += float(np.sum(np.abs(resid) ** 2))
        pd = (np.outer(star.feature, star.feature.conj())
              - np.outer(nudged.feature, nudged.feature.conj()))
        fd = star.filt - nudged.filt
        fallback_proj += pd
        fallback_filt += fd
        if not (star.converged and nudged.converged):
            continue
        n_ok += 1
        proj_diff += pd
        filt_diff += fd
    if n_ok == 0:
        # Every frame under-converged; a noisy full-batch estimate still
        # beats aborting the outer loop (the best-iterate rule protects
        # against a bad step).
        warnings.warn("no frame's inner ALS solves reached tolerance; "
                      "using under-converged gradient estimates",
                      RuntimeWarning, stacklevel=2)
        proj_diff, filt_diff, n_ok = fallback_proj, fallback_filt, n_frames
    elif n_ok < n_frames:
        warnings.warn(f"EP gradient used {n_ok}/{n_frames} frames "
                      "(others skipped for ALS non-convergence)",
                      RuntimeWarning, stacklevel=2)
    scale = n_frames / n_ok
    grad_b = (2.0 * lam_long / alpha) * scale * (proj_diff @ b_bar)
    grad_v = (2.0 * lam_short / alpha) * scale * filt_diff
    if not (np.all(np.isfinite(grad_b)) and np.all(np.isfinite(grad_v))):
        raise RuntimeError("non-finite EP gradient; alpha may be too small "
                           "for the configured ALS tolerance")
    return grad_b, grad_v, stars, loss, n_ok


def ep_gradients(frames: list[SplitDataset], feature_index: int,
                 hyper: LstdHyper, alpha: float,
                 als_cfg: AlsConfig = AlsConfig()):
    """Equilibrium-propagation gradients of the summed test loss for one
    feature's bias pair.

    ``frames`` carry the residual targets for the requested feature (for
    ``feature_index == 0`` that is just the raw targets).  Each frame is
    solved twice with a shared data-driven initialization; frames whose
    solves do not converge are skipped with a warning and the sums are
    rescaled to the full frame count.

    Returns:
        (grad_long, grad_short): gradients with respect to the feature
        bias and the filter bias of ``hyper`` at ``feature_index``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    states = [_FrameState(sd) for sd in frames]
    inits = [_default_feature_init(st.hist_tr, st.y_tr) for st in states]
    b_bar = hyper.long_bias[feature_index]
    v_bar = hyper.short_bias[feature_index]
    grad_b, grad_v, _, _, _ = _grad_accumulate(
        states, b_bar, v_bar, hyper.lam_long, hyper.lam_short, alpha,
        als_cfg, inits)
    return grad_b, grad_v


@dataclass
class MetaDiagnostics:
    """Per-feature optimization record of one meta fit."""

    init_long: list
    init_short: list
    loss_traces: list        # per feature: outer loss per outer iteration
    chosen_losses: list      # per feature: loss of the returned bias pair
    init_losses: list        # per feature: loss at the initialization


def _meta_fit_feature(states, lam_long, lam_short, ep: EpConfig):
    """Optimize one feature's bias pair over the current residual targets.

    Starts from the pooled (transfer-style) fit of the train residuals,
    runs Adam on EP gradients, and returns the iterate with the lowest
    outer loss together with its per-frame inner solutions (needed to
    advance the residual targets).
    """
    als_cfg = ep.als
    # Transfer-style warm start: pool every frame's full residual rows
    # (train and test splits both belong to the previous frames, so no
    # evaluation data is touched) and fit one unregularized pair.
    hist_pool = np.concatenate([st.hist_tr for st in states]
                               + [st.hist_te for st in states], axis=0)
    y_pool = np.concatenate([st.y_tr for st in states]
                            + [st.y_te for st in states], axis=0)
    s_dim = y_pool.shape[1]
    window = states[0].hist_tr.shape[2]
    e0 = np.zeros(s_dim, dtype=complex)
    e0[0] = 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        pooled = _als(hist_pool, y_pool, 0.0, 0.0, e0,
                      np.zeros(window, dtype=complex), als_cfg)
    b_bar = pooled.feature.copy()
    v_bar = pooled.filt.copy()

    inits = [_default_feature_init(st.hist_tr, st.y_tr) for st in states]
    adam_b = Adam(2 * s_dim, ep.step, ep.beta1, ep.beta2, ep.eps)
    adam_v = Adam(2 * window, ep.step, ep.beta1, ep.beta2, ep.eps)

    best = None     # (loss, b_bar, v_bar, stars)
    trace = []
    for _ in range(ep.outer_iters):
        grad_b, grad_v, stars, loss, _ = _grad_accumulate(
            states, b_bar, v_bar, lam_long, lam_short, ep.alpha, als_cfg, inits)
        trace.append(loss)
        if best is None or loss < best[0]:
            best = (loss, b_bar.copy(), v_bar.copy(), stars)
        if (np.linalg.norm(grad_b) < ep.grad_tol
                and np.linalg.norm(grad_v) < ep.grad_tol):
            break
        b_bar = b_bar - _r2c(adam_b.update(_c2r(grad_b)))
        nrm = np.linalg.norm(b_bar)
        if nrm == 0.0:
            raise RuntimeError("feature bias collapsed to zero during meta fit")
        b_bar = b_bar / nrm
        v_bar = v_bar - _r2c(adam_v.update(_c2r(grad_v)))

    # The hypers after the final update were never scored; do so, then keep
    # whichever iterate achieved the lowest outer loss.
    _, _, stars, loss, _ = _grad_accumulate(
        states, b_bar, v_bar, lam_long, lam_short, ep.alpha, als_cfg, inits)
    trace.append(loss)
    if loss < best[0]:
        best = (loss, b_bar, v_bar, stars)
    return best, trace, (pooled.feature, pooled.filt)


def lstd_meta_fit(frames: list[SplitDataset], n_features: int, lam_long: float,
                  lam_short: float, ep: EpConfig = EpConfig(),
                  return_diagnostics: bool = False):
    """Meta-learn K bias pairs from split previous-frame datasets.

    Features are handled in order; each one's bias pair is optimized with
    Adam on equilibrium-propagation gradients of the summed test-split
    loss, then the feature's fitted per-frame contribution is removed
    from both splits' targets before the next feature starts.

    Args:
        frames: Split datasets of the previous frames.
        n_features: Number K of bias pairs to learn.
        lam_long: Feature-alignment weight (also used at adaptation time).
        lam_short: Filter-pull weight (also used at adaptation time).
        ep: Outer-loop and inner-solver settings.
        return_diagnostics: If True, also return a
            :class:`MetaDiagnostics` with loss traces.

    Returns:
        The learned hyperparameters (and diagnostics when requested).
    """
    if not frames:
        raise ValueError("need at least one frame")
    if n_features < 1:
        raise ValueError("n_features must be at least 1")
    states = [_FrameState(sd) for sd in frames]
    diag = MetaDiagnostics([], [], [], [], [])
    long_bias, short_bias = [], []
    for _ in range(n_features):
        (loss, b_bar, v_bar, stars), trace, init_pair = _meta_fit_feature(
            states, lam_long, lam_short, ep)
        long_bias.append(canonical_phase(b_bar))
        short_bias.append(v_bar)
        diag.init_long.append(init_pair[0])
        diag.init_short.append(init_pair[1])
        diag.loss_traces.append(np.asarray(trace))
        diag.chosen_losses.append(loss)
        diag.init_losses.append(trace[0])
        for st, star in zip(states, stars):
            st.advance(star.feature, star.filt)
    hyper = LstdHyper(n_features=n_features, lam_long=lam_long,
                      lam_short=lam_short, long_bias=long_bias,
                      short_bias=short_bias)
    if return_diagnostics:
        return hyper, diag
    return hyper


def meta_outer_loss(frames: list[SplitDataset], hyper: LstdHyper,
                    cfg: AlsConfig = AlsConfig()) -> float:
    """Summed test-split loss after adapting the full K-feature predictor
    on each frame's train split with the given hyperparameters.

    This is the quantity meta-learning drives down, evaluated without any
    equilibrium-propagation machinery (used by tests as the independent
    yardstick).
    """
    from .lstd import lstd_adapt

    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for sd in frames:
            pred = lstd_adapt(sd.train, hyper, cfg)
            resid = sd.test.X @ pred.V - sd.test.Y
            total += float(np.sum(np.abs(resid) ** 2))
    return total
