"""Reduced-rank predictors built from a long/short-term channel split.

Instead of a free (S*N, S) matrix, the predictor is a sum of K rank-one
"feature" terms.  Feature k owns a unit-norm spatial direction ``b_k``
(long-term, frame-constant) and a length-N temporal filter ``v_k``
(short-term).  Applying the predictor to a snapshot window H means:

1. project the window onto the feature: amplitude row ``b_k^H H``,
2. extrapolate the scalar amplitude with the filter: ``v_k^H (b_k^H H)^T``,
3. rebuild the snapshot contribution: ``b_k`` times the prediction,

summed over k.  The same map is realized by the assembled matrix
``V = sum_k kron(v_k, b_k b_k^H)`` applied as ``V^H vec(H)``.

Each feature is trained by alternating least squares on a residual
target: for fixed ``b`` the filter update is a ridge problem with an
optional quadratic pull toward a filter bias; for fixed ``v`` the
feature update is the smallest-eigenvalue unit eigenvector of a
Hermitian matrix assembled from the filtered inputs, with an optional
alignment reward toward a feature bias.  Both half-steps minimize the
joint objective exactly, so the objective trace is non-increasing.

Features are fitted sequentially (k = 1..K); after each fit the
explained part is subtracted from the targets before the next feature.
"""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .datasets import RegressionDataset

# Unit-norm features are accepted up to this deviation (then renormalized
# with a warning); larger deviations are rejected.
_UNIT_TOL = 1e-6


def canonical_phase(vec: np.ndarray) -> np.ndarray:
    """Rotate a complex vector so its largest-magnitude entry is real >= 0.

    ``vec`` and ``vec * exp(1j*theta)`` map to the same representative,
    which pins the arbitrary global phase of eigenvector solutions.
    """
    vec = np.asarray(vec, dtype=complex)
    idx = int(np.argmax(np.abs(vec)))
    pivot = vec[idx]
    mag = abs(pivot)
    if mag == 0.0:
        return vec.copy()
    return vec * (np.conj(pivot) / mag)


@dataclass(frozen=True)
class AlsConfig:
    """Stopping rule for one alternating-least-squares feature fit."""

    tol: float = 1e-8
    max_iters: int = 100

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class LstdHyper:
    """Hyperparameters of the reduced-rank learner.

    ``long_bias[k]`` is the unit-norm prior direction rewarded by the
    alignment weight ``lam_long``; ``short_bias[k]`` is the prior mean of
    filter k penalized with weight ``lam_short``.
    """

    n_features: int
    lam_long: float
    lam_short: float
    long_bias: list
    short_bias: list

    def __post_init__(self):
        if self.n_features < 1:
            raise ValueError("n_features must be at least 1")
        if self.lam_long < 0 or self.lam_short < 0:
            raise ValueError("regularization weights must be nonnegative")
        if len(self.long_bias) != self.n_features or len(self.short_bias) != self.n_features:
            raise ValueError("bias lists must have one entry per feature")
        normed = []
        for b in self.long_bias:
            b = np.asarray(b, dtype=complex)
            nrm = np.linalg.norm(b)
            if nrm == 0.0:
                raise ValueError("long-term bias vectors must be nonzero "
                                 "(use lam_long=0 for an uninformative prior)")
            normed.append(b / nrm)
        self.long_bias = normed
        self.short_bias = [np.asarray(v, dtype=complex) for v in self.short_bias]

    @classmethod
    def uninformative(cls, n_features: int, channel_dim: int, window: int,
                      lam_long: float = 0.0, lam_short: float = 0.0) -> "LstdHyper":
        """Zero-information hyperparameters: basis-vector feature priors
        (irrelevant at lam_long = 0) and zero filter priors."""
        long_bias = []
        for k in range(n_features):
            e = np.zeros(channel_dim, dtype=complex)
            e[k % channel_dim] = 1.0
            long_bias.append(e)
        short_bias = [np.zeros(window, dtype=complex) for _ in range(n_features)]
        return cls(n_features=n_features, lam_long=lam_long, lam_short=lam_short,
                   long_bias=long_bias, short_bias=short_bias)


@dataclass(frozen=True)
class LstdPredictor:
    """K fitted (feature, filter) pairs plus the assembled matrix."""

    features: tuple       # K unit-norm (S,) vectors
    filters: tuple        # K (N,) vectors
    V: np.ndarray         # (S*N, S) assembled predictor matrix

    @property
    def n_features(self) -> int:
        return len(self.features)


def assemble(features, filters) -> LstdPredictor:
    """Build the predictor matrix ``sum_k kron(v_k, b_k b_k^H)``.

    Features must be unit norm; deviations up to 1e-6 are renormalized
    with a warning, anything larger is rejected.
    """
    if len(features) != len(filters) or not features:
        raise ValueError("need matching, nonempty feature and filter lists")
    feats, filts = [], []
    for b, v in zip(features, filters):
        b = np.asarray(b, dtype=complex)
        v = np.asarray(v, dtype=complex)
        nrm = np.linalg.norm(b)
        if abs(nrm - 1.0) > _UNIT_TOL:
            raise ValueError(f"feature norm {nrm} too far from 1")
        if nrm != 1.0:
            if abs(nrm - 1.0) > 1e-12:
                warnings.warn("renormalizing a slightly non-unit feature",
                              RuntimeWarning, stacklevel=2)
            b = b / nrm
        feats.append(b)
        filts.append(v)
    s_dim = feats[0].shape[0]
    window = filts[0].shape[0]
    v_mat = np.zeros((s_dim * window, s_dim), dtype=complex)
    for b, v in zip(feats, filts):
        v_mat += np.kron(v.reshape(-1, 1), np.outer(b, b.conj()))
    return LstdPredictor(features=tuple(feats), filters=tuple(filts), V=v_mat)


def apply_pipeline(pred: LstdPredictor, history: np.ndarray) -> np.ndarray:
    """Project-filter-reconstruct application of the predictor to an
    (S, N) window; equals ``V^H vec(history)`` up to roundoff."""
    history = np.asarray(history, dtype=complex)
    out = np.zeros(history.shape[0], dtype=complex)
    for b, v in zip(pred.features, pred.filters):
        amplitudes = b.conj() @ history          # past amplitudes, newest first
        out += b * np.vdot(v, amplitudes)
    return out


# ---------------------------------------------------------------------------
# Alternating least squares for one feature


@dataclass
class AlsResult:
    feature: np.ndarray
    filt: np.ndarray
    trace: np.ndarray     # objective after init and after every half-step
    converged: bool
    n_iters: int


def history_stack(x_rows: np.ndarray, channel_dim: int) -> np.ndarray:
    """Unpack conjugated covariate rows into an (L, S, N) window stack."""
    n_rows, sn = x_rows.shape
    window = sn // channel_dim
    if window * channel_dim != sn:
        raise ValueError("covariate width is not a multiple of channel_dim")
    return np.conj(x_rows).reshape(n_rows, window, channel_dim).transpose(0, 2, 1)


def _feature_rows(hist, b, v):
    """Conjugated prediction rows of one (feature, filter) pair, matching
    the dataset Y convention."""
    filtered = np.einsum("lsn,n->ls", hist, v.conj())
    t = filtered @ b.conj()
    return np.conj(t)[:, None] * np.conj(b)[None, :]


def _objective(hist, y_rows, b, v, lam_long, lam_short, b_bar, v_bar):
    resid = _feature_rows(hist, b, v) - y_rows
    sse = float(np.sum(np.abs(resid) ** 2))
    align = abs(np.vdot(b_bar, b)) ** 2
    pull = float(np.sum(np.abs(v - v_bar) ** 2))
    return sse - lam_long * align + lam_short * pull


def _default_feature_init(hist, y_rows):
    """Dominant direction of the target/window cross-moment (falls back to
    the dominant target direction, then to a basis vector)."""
    h_mean = hist.mean(axis=2)                        # (L, S)
    cross = y_rows.conj().T @ h_mean.conj()           # sum_i y_i h_mean_i^H
    if np.linalg.norm(cross) > 0:
        u, _, _ = np.linalg.svd(cross)
        b0 = u[:, 0]
    else:
        gram = y_rows.conj().T @ y_rows               # sum_i y_i y_i^H
        if np.linalg.norm(gram) > 0:
            w, q = np.linalg.eigh(gram)
            b0 = q[:, -1]
        else:
            b0 = np.zeros(y_rows.shape[1], dtype=complex)
            b0[0] = 1.0
    return canonical_phase(b0 / np.linalg.norm(b0))


def _update_filter(hist, y_rows, b, lam_short, v_bar):
    proj = np.einsum("lsn,s->ln", hist.conj(), b)     # rows: (H_i^H b)^T
    gram = proj.T @ proj.conj()
    rhs = proj.T @ np.conj(y_rows @ b) + lam_short * v_bar.conj()
    gram = gram + lam_short * np.eye(gram.shape[0])
    try:
        u = scipy.linalg.solve(gram, rhs, assume_a="pos")
    except np.linalg.LinAlgError:
        u, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    return np.conj(u)


def _update_feature(hist, y_rows, v, lam_long, b_bar, *, lam_short=0.0,
                    v_bar=None):
    filtered = np.einsum("lsn,n->ls", hist, v.conj())
    quad = filtered.T @ filtered.conj()
    cross = filtered.T @ y_rows
    m = quad - cross - cross.conj().T
    if lam_long > 0:
        m = m - lam_long * np.outer(b_bar, b_bar.conj())
    m = 0.5 * (m + m.conj().T)
    evals, evecs = np.linalg.eigh(m)
    # Degenerate smallest eigenvalue: pick the candidate with the lowest
    # actual objective rather than trusting eigenvector ordering.
    scale = max(abs(evals[0]), abs(evals[-1]), 1.0)
    tied = np.nonzero(evals - evals[0] <= 1e-12 * scale)[0]
    if tied.size > 1 and v_bar is not None:
        best, best_obj = None, np.inf
        for idx in tied:
            cand = canonical_phase(evecs[:, idx])
            obj = _objective(hist, y_rows, cand, v, lam_long, lam_short,
                             b_bar, v_bar)
            if obj < best_obj:
                best, best_obj = cand, obj
        return best
    return canonical_phase(evecs[:, 0])


def als_feature_fit(x_rows, y_rows, lam_long, lam_short, long_bias, short_bias,
                    cfg: AlsConfig = AlsConfig(), feature_init=None) -> AlsResult:
    """Fit one (feature, filter) pair to residual targets.

    Alternates an exact filter ridge update and an exact unit-eigenvector
    feature update until the relative objective change over one full
    iteration drops below ``cfg.tol`` or ``cfg.max_iters`` is reached.

    Args:
        x_rows: (L, S*N) conjugated covariate rows.
        y_rows: (L, S) conjugated residual-target rows.
        lam_long: Alignment reward weight toward ``long_bias``.
        lam_short: Quadratic penalty weight toward ``short_bias``.
        long_bias: Unit-norm (S,) prior direction.
        short_bias: (N,) prior filter.
        feature_init: Optional explicit starting feature (unit norm);
            defaults to a data-driven cross-moment direction.

    Returns:
        AlsResult with the fitted pair, the objective trace (one entry at
        initialization and one after every half-step) and a convergence
        flag; a non-converged fit returns the last (= best) iterate.
    """
    y_rows = np.asarray(y_rows, dtype=complex)
    b_bar = np.asarray(long_bias, dtype=complex)
    v_bar = np.asarray(short_bias, dtype=complex)
    hist = history_stack(np.asarray(x_rows, dtype=complex), y_rows.shape[1])
    return _als(hist, y_rows, lam_long, lam_short, b_bar, v_bar, cfg, feature_init)


def _als(hist, y_rows, lam_long, lam_short, b_bar, v_bar, cfg, feature_init=None):
    if feature_init is None:
        b = _default_feature_init(hist, y_rows)
    else:
        b = np.asarray(feature_init, dtype=complex)
        b = canonical_phase(b / np.linalg.norm(b))
    v = v_bar.copy()

    def obj(bb, vv):
        return _objective(hist, y_rows, bb, vv, lam_long, lam_short, b_bar, v_bar)

    trace = [obj(b, v)]
    # Floor the relative-change test with the initial scale so exactly
    # realizable problems (objective -> 0) still register as converged.
    scale0 = max(1.0, abs(trace[0]))
    converged = False
    n_iters = 0
    for n_iters in range(1, cfg.max_iters + 1):
        before = trace[-1]
        v = _update_filter(hist, y_rows, b, lam_short, v_bar)
        trace.append(obj(b, v))
        b = _update_feature(hist, y_rows, v, lam_long, b_bar,
                            lam_short=lam_short, v_bar=v_bar)
        trace.append(obj(b, v))
        if abs(before - trace[-1]) <= cfg.tol * max(abs(before), 1e-12 * scale0):
            converged = True
            break
    if not converged:
        warnings.warn(f"ALS did not converge within {cfg.max_iters} iterations "
                      f"(last relative change above {cfg.tol})",
                      RuntimeWarning, stacklevel=2)
    return AlsResult(feature=b, filt=v, trace=np.asarray(trace),
                     converged=converged, n_iters=n_iters)


# ---------------------------------------------------------------------------
# Sequential multi-feature training


def lstd_conventional_fit(tr: RegressionDataset, hyper: LstdHyper,
                          cfg: AlsConfig = AlsConfig()) -> LstdPredictor:
    """Fit all K features sequentially on one frame's training pairs.

    Feature k is fitted by ALS against the residual targets left over by
    features 1..k-1; afterwards its contribution is subtracted before
    fitting feature k+1.
    """
    hist = history_stack(tr.X, tr.channel_dim)
    y_resid = np.array(tr.Y, dtype=complex)
    feats, filts = [], []
    for k in range(hyper.n_features):
        res = _als(hist, y_resid, hyper.lam_long, hyper.lam_short,
                   hyper.long_bias[k], hyper.short_bias[k], cfg)
        y_resid = y_resid - _feature_rows(hist, res.feature, res.filt)
        feats.append(res.feature)
        filts.append(res.filt)
    return assemble(feats, filts)


def lstd_adapt(tr_new: RegressionDataset, hyper: LstdHyper,
               cfg: AlsConfig = AlsConfig()) -> LstdPredictor:
    """Adapt the reduced-rank predictor to a new frame's pilots.

    Identical to :func:`lstd_conventional_fit`; the hyperparameters carry
    whatever prior (transfer- or meta-learned) should steer the fit, and
    with both weights at zero this degenerates to plain conventional
    learning.
    """
    return lstd_conventional_fit(tr_new, hyper, cfg)


def lstd_transfer_fit(frames: list[RegressionDataset], n_features: int,
                      cfg: AlsConfig = AlsConfig()) -> LstdHyper:
    """Pooled sequential fit over previous frames, returned as bias pairs.

    Row-stacks every frame's pairs and runs the unregularized sequential
    fit; the fitted (feature, filter) pairs become the prior directions
    and filter means for later adaptation.
    """
    if not frames:
        raise ValueError("need at least one frame")
    x = np.vstack([f.X for f in frames])
    y = np.vstack([f.Y for f in frames])
    pooled = RegressionDataset(X=x, Y=y, window=frames[0].window,
                               lag=frames[0].lag,
                               channel_dim=frames[0].channel_dim)
    hyper0 = LstdHyper.uninformative(n_features, pooled.channel_dim, pooled.window)
    pred = lstd_conventional_fit(pooled, hyper0, cfg)
    return LstdHyper(n_features=n_features, lam_long=0.0, lam_short=0.0,
                     long_bias=list(pred.features),
                     short_bias=list(pred.filters))


# ---------------------------------------------------------------------------
# Serialization (JSON header line, then re/im CSV rows: K feature rows of
# width 2S followed by K filter rows of width 2N)


def _complex_row(vec) -> str:
    cells = np.empty(2 * vec.size)
    cells[0::2] = np.real(vec)
    cells[1::2] = np.imag(vec)
    return ",".join(repr(float(c)) for c in cells)


def _parse_complex_row(line) -> np.ndarray:
    vals = np.array([float(v) for v in line.split(",")])
    return vals[0::2] + 1j * vals[1::2]


def hyper_to_csv(hyper: LstdHyper) -> str:
    s_dim = hyper.long_bias[0].shape[0]
    window = hyper.short_bias[0].shape[0]
    head = {"K": hyper.n_features, "S": s_dim, "N": window,
            "lambda1": hyper.lam_long, "lambda2": hyper.lam_short}
    buf = io.StringIO()
    buf.write(json.dumps(head) + "\n")
    for b in hyper.long_bias:
        buf.write(_complex_row(b) + "\n")
    for v in hyper.short_bias:
        buf.write(_complex_row(v) + "\n")
    return buf.getvalue()


def hyper_from_csv(text: str) -> LstdHyper:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = json.loads(lines[0])
    k = int(head["K"])
    long_bias = [_parse_complex_row(lines[1 + i]) for i in range(k)]
    short_bias = [_parse_complex_row(lines[1 + k + i]) for i in range(k)]
    return LstdHyper(n_features=k, lam_long=float(head["lambda1"]),
                     lam_short=float(head["lambda2"]),
                     long_bias=long_bias, short_bias=short_bias)


def predictor_to_csv(pred: LstdPredictor) -> str:
    s_dim = pred.features[0].shape[0]
    window = pred.filters[0].shape[0]
    head = {"K": pred.n_features, "S": s_dim, "N": window}
    buf = io.StringIO()
    buf.write(json.dumps(head) + "\n")
    for b in pred.features:
        buf.write(_complex_row(b) + "\n")
    for v in pred.filters:
        buf.write(_complex_row(v) + "\n")
    return buf.getvalue()


def predictor_from_csv(text: str) -> LstdPredictor:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = json.loads(lines[0])
    k = int(head["K"])
    feats = [_parse_complex_row(lines[1 + i]) for i in range(k)]
    filts = [_parse_complex_row(lines[1 + k + i]) for i in range(k)]
    return assemble(feats, filts)
