"""Biased ridge regression and its transfer/meta-learned bias matrices.

These are the "naive" full-matrix predictors: a single complex matrix
``V`` of shape (S*N, S) maps the vectorized snapshot window to the
predicted snapshot via ``h_hat = V^H x``.  Three ways of choosing the
prior mean (bias) of ``V`` are provided:

* zero bias (conventional learning),
* the pooled least-squares fit over previous frames (transfer),
* the closed-form minimizer of the per-frame adapted test loss (meta).

The meta solution exploits that, for a fixed ridge weight, the adapted
predictor is affine in the bias, so the summed test loss is an ordinary
least-squares problem in preconditioned coordinates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .datasets import RegressionDataset, SplitDataset


@dataclass(frozen=True)
class RidgeHyper:
    """Ridge weight and prior-mean bias for the full-matrix predictor.

    ``bias`` has shape (S*N, S); pass a column vector for S = 1.
    """

    lam: float
    bias: np.ndarray

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        object.__setattr__(self, "bias", np.atleast_2d(np.asarray(self.bias, dtype=complex)))


@dataclass(frozen=True)
class LinearPredictor:
    """Linear snapshot predictor ``h_hat = V^H vec(window)``."""

    V: np.ndarray  # (S*N, S) complex

    def __post_init__(self):
        if not np.all(np.isfinite(self.V)):
            raise ValueError("predictor matrix contains non-finite entries")


def predict(pred: LinearPredictor, history: np.ndarray) -> np.ndarray:
    """Apply a predictor to an (S, N) snapshot window (newest column first)."""
    history = np.asarray(history, dtype=complex)
    if history.ndim == 1:
        history = history[None, :]
    sn, s = pred.V.shape
    if history.shape[0] * history.shape[1] != sn:
        raise ValueError(
            f"history {history.shape} incompatible with predictor {pred.V.shape}")
    x = history.reshape(-1, order="F")
    return pred.V.conj().T @ x


def predict_rows(pred: LinearPredictor, x_rows: np.ndarray) -> np.ndarray:
    """Predicted targets for conjugated covariate rows; returns (L, S) rows
    in the same conjugated convention as dataset targets."""
    return x_rows @ pred.V


def ridge_fit(tr: RegressionDataset, hyper: RidgeHyper) -> LinearPredictor:
    """Closed-form biased ridge regression.

    Minimizes ``||X V - Y||_F^2 + lam * ||V - bias||_F^2``; the solution
    is ``(X^H X + lam I)^{-1} (X^H Y + lam * bias)``, computed with one
    Hermitian positive-definite factorization shared by all S target
    columns.
    """
    bias = hyper.bias
    dim = tr.X.shape[1]
    if bias.shape != (dim, tr.Y.shape[1]):
        raise ValueError(
            f"bias shape {bias.shape} does not match data ({dim}, {tr.Y.shape[1]})")
    gram = tr.X.conj().T @ tr.X + hyper.lam * np.eye(dim)
    rhs = tr.X.conj().T @ tr.Y + hyper.lam * bias
    v = _solve_hermitian(gram, rhs)
    return LinearPredictor(V=v)


def _solve_hermitian(gram, rhs):
    """Solve a Hermitian positive-definite system, falling back to the
    minimum-norm pseudo-inverse (with a warning) if the factorization fails."""
    try:
        return scipy.linalg.solve(gram, rhs, assume_a="pos")
    except np.linalg.LinAlgError:
        warnings.warn("Gram matrix not positive definite; using pseudo-inverse",
                      RuntimeWarning, stacklevel=2)
        return np.linalg.pinv(gram) @ rhs


def transfer_bias(frames: list[RegressionDataset]) -> np.ndarray:
    """Pooled ordinary least-squares bias over previous frames.

    Row-stacks all frames' (X, Y) and solves ``min ||X V - Y||_F^2``.
    A rank-deficient stack yields the minimum-norm solution and a
    warning.
    """
    if not frames:
        raise ValueError("need at least one frame")
    x = np.vstack([f.X for f in frames])
    y = np.vstack([f.Y for f in frames])
    sol, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < x.shape[1]:
        warnings.warn(
            f"pooled system is rank deficient ({rank} < {x.shape[1]}); "
            "returning the minimum-norm solution", RuntimeWarning, stacklevel=2)
    return sol


def meta_bias_closed_form(frames: list[SplitDataset], lam: float) -> np.ndarray:
    """Closed-form meta-learned bias for the full-matrix ridge predictor.

    For each frame the ridge solution adapted on the train split is
    affine in the bias, so the summed test-split loss is least squares in
    the preconditioned rows ``lam * X_te @ (X_tr^H X_tr + lam I)^{-1}``
    against the part of the test targets not explained by the train
    data alone.  Stacking over frames and solving gives the minimizer.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not frames:
        raise ValueError("need at least one frame")
    x_blocks, y_blocks = [], []
    for sd in frames:
        if sd.train.n_pairs < 1 or sd.test.n_pairs < 1:
            raise ValueError("every frame needs nonempty train and test parts")
        xtr, ytr = sd.train.X, sd.train.Y
        xte, yte = sd.test.X, sd.test.Y
        dim = xtr.shape[1]
        gram = xtr.conj().T @ xtr + lam * np.eye(dim)
        # One factorization serves both the preconditioner and the
        # train-data-only prediction of the test targets.
        lu = scipy.linalg.cho_factor(gram)
        pre = scipy.linalg.cho_solve(lu, xte.conj().T).conj().T   # X_te @ gram^-1
        x_blocks.append(lam * pre)
        y_blocks.append(yte - pre @ (xtr.conj().T @ ytr))
    x_tilde = np.vstack(x_blocks)
    y_tilde = np.vstack(y_blocks)
    sol, _, rank, _ = np.linalg.lstsq(x_tilde, y_tilde, rcond=None)
    if rank < x_tilde.shape[1]:
        warnings.warn(
            f"preconditioned system is rank deficient ({rank} < {x_tilde.shape[1]}); "
            "returning the minimum-norm solution", RuntimeWarning, stacklevel=2)
    return sol


def meta_objective(frames: list[SplitDataset], lam: float, bias: np.ndarray) -> float:
    """Summed test-split loss of the per-frame adapted ridge predictors.

    This evaluates the quantity the meta bias minimizes, by explicitly
    refitting the ridge predictor of every frame; it exists so tests and
    diagnostics never need to trust the preconditioned shortcut.
    """
    total = 0.0
    for sd in frames:
        pred = ridge_fit(sd.train, RidgeHyper(lam=lam, bias=bias))
        resid = predict_rows(pred, sd.test.X) - sd.test.Y
        total += float(np.sum(np.abs(resid) ** 2))
    return total
