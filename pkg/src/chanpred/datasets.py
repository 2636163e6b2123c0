"""Windowed regression datasets built from channel slot sequences.

A prediction example pairs the ``N`` most recent channel snapshots with
the snapshot ``lag`` slots ahead.  With slots ``h_0, h_1, ...`` the pair
anchored at slot ``l`` has covariate ``x = vec([h_l, ..., h_{l-N+1}])``
(newest column first, column-major vectorization) and target
``y = h_{l+lag}``.

Matrix convention: row ``i`` of ``X`` stores the conjugate transpose of
``x_i`` and row ``i`` of ``Y`` stores the conjugate transpose of
``y_i``.  All least-squares code in the package relies on this: for a
predictor matrix ``V`` the residual matrix is simply ``X @ V - Y`` and
its squared Frobenius norm equals the summed squared prediction errors.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class RegressionDataset:
    """Windowed (input, target) pairs from one channel sequence.

    Attributes:
        X: (L, S*N) complex matrix; row i is the conjugated covariate.
        Y: (L, S) complex matrix; row i is the conjugated target.
        window: Number N of past snapshots per covariate.
        lag: Prediction lag in slots.
        channel_dim: Snapshot length S.
    """

    X: np.ndarray
    Y: np.ndarray
    window: int
    lag: int
    channel_dim: int

    def __post_init__(self):
        self.X.setflags(write=False)
        self.Y.setflags(write=False)

    @property
    def n_pairs(self) -> int:
        return self.X.shape[0]

    def history_matrix(self, i: int) -> np.ndarray:
        """Recover the (S, N) snapshot window of pair ``i`` (newest first)."""
        x = np.conj(self.X[i])
        return x.reshape(self.window, self.channel_dim).T

    def target(self, i: int) -> np.ndarray:
        """Recover the (S,) target vector of pair ``i``."""
        return np.conj(self.Y[i])


@dataclass(frozen=True, eq=False)
class SplitDataset:
    """Slot-ordered train/test partition of a dataset."""

    train: RegressionDataset
    test: RegressionDataset


def build_dataset(channels, window: int, lag: int, normalize: bool = False) -> RegressionDataset:
    """Build all windowed pairs from a slot-ordered channel matrix.

    Args:
        channels: (S, n_slots) complex matrix, one column per slot.  A 1-D
            array is treated as a single-dimension (S=1) slot sequence.
        window: Number N >= 1 of past snapshots per covariate.
        lag: Prediction lag >= 1 in slots.
        normalize: If True, divide each pair (x_i, y_i) by the Euclidean
            norm of its target so every row of Y has unit norm (training
            loss then matches the NMSE metric).

    Returns:
        A dataset with ``n_slots - window - lag + 1`` pairs.
    """
    channels = np.asarray(channels, dtype=complex)
    if channels.ndim == 1:
        channels = channels[None, :]
    if channels.ndim != 2:
        raise ValueError("channels must be a (S, n_slots) matrix or 1-D sequence")
    s_dim, n_slots = channels.shape
    if window < 1 or lag < 1:
        raise ValueError("window and lag must both be at least 1")
    n_pairs = n_slots - window - lag + 1
    if n_pairs < 1:
        raise ValueError(
            f"need at least window+lag={window + lag} slots, got {n_slots}")

    x_rows = np.empty((n_pairs, s_dim * window), dtype=complex)
    y_rows = np.empty((n_pairs, s_dim), dtype=complex)
    for i in range(n_pairs):
        anchor = window - 1 + i
        hist = channels[:, anchor - window + 1:anchor + 1][:, ::-1]  # newest first
        x_rows[i] = np.conj(hist.reshape(-1, order="F"))
        y_rows[i] = np.conj(channels[:, anchor + lag])
    if normalize:
        norms = np.linalg.norm(y_rows, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("cannot normalize: zero-norm target (degenerate channel)")
        x_rows /= norms[:, None]
        y_rows /= norms[:, None]
    return RegressionDataset(X=x_rows, Y=y_rows, window=window, lag=lag,
                             channel_dim=s_dim)


def split(ds: RegressionDataset, n_train: int) -> SplitDataset:
    """Split the first ``n_train`` pairs off as training, rest as test."""
    if not 1 <= n_train < ds.n_pairs:
        raise ValueError(
            f"n_train must lie in [1, {ds.n_pairs - 1}], got {n_train}")
    head = RegressionDataset(X=ds.X[:n_train].copy(), Y=ds.Y[:n_train].copy(),
                             window=ds.window, lag=ds.lag,
                             channel_dim=ds.channel_dim)
    tail = RegressionDataset(X=ds.X[n_train:].copy(), Y=ds.Y[n_train:].copy(),
                             window=ds.window, lag=ds.lag,
                             channel_dim=ds.channel_dim)
    return SplitDataset(train=head, test=tail)


def nmse(h_hat, h_true) -> float:
    """Squared prediction error normalized by the true snapshot energy."""
    h_hat = np.asarray(h_hat).ravel()
    h_true = np.asarray(h_true).ravel()
    if h_hat.shape != h_true.shape:
        raise ValueError("h_hat and h_true must have equal lengths")
    denom = float(np.sum(np.abs(h_true) ** 2))
    if denom == 0.0:
        raise ValueError("true channel has zero norm")
    return float(np.sum(np.abs(h_hat - h_true) ** 2)) / denom


# ---------------------------------------------------------------------------
# CSV import/export: header row with names, value row, then one row per pair
# holding the X cells followed by the Y cells, complex entries as re,im pairs.

_DS_HEADER = ("window", "lag", "channel_dim", "n_pairs")


def dataset_to_csv(ds: RegressionDataset) -> str:
    buf = io.StringIO()
    buf.write(",".join(_DS_HEADER) + "\n")
    buf.write(",".join(str(v) for v in (ds.window, ds.lag, ds.channel_dim,
                                        ds.n_pairs)) + "\n")
    for i in range(ds.n_pairs):
        row = np.concatenate([ds.X[i], ds.Y[i]])
        cells = np.empty(2 * row.size)
        cells[0::2] = row.real
        cells[1::2] = row.imag
        buf.write(",".join(repr(float(c)) for c in cells) + "\n")
    return buf.getvalue()


def dataset_from_csv(text: str) -> RegressionDataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if tuple(lines[0].split(",")) != _DS_HEADER:
        raise ValueError(f"unexpected dataset header {lines[0]!r}")
    window, lag, s_dim, n_pairs = (int(v) for v in lines[1].split(","))
    x_rows = np.empty((n_pairs, s_dim * window), dtype=complex)
    y_rows = np.empty((n_pairs, s_dim), dtype=complex)
    for i, ln in enumerate(lines[2:2 + n_pairs]):
        vals = np.array([float(v) for v in ln.split(",")])
        row = vals[0::2] + 1j * vals[1::2]
        x_rows[i] = row[:s_dim * window]
        y_rows[i] = row[s_dim * window:]
    return RegressionDataset(X=x_rows, Y=y_rows, window=window, lag=lag,
                             channel_dim=s_dim)
