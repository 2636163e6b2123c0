"""Built-in sanity battery behind the ``selftest`` CLI/endpoint.

A handful of fast invariant checks that exercise one representative case
per subsystem.  This is a smoke screen for installs and deployments;
the full oracle-backed suite lives under ``tests/``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import bench, datasets, lstd, ridge


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rng_dataset(rng, n_rows, s_dim, window):
    x = rng.standard_normal((n_rows, s_dim * window)) \
        + 1j * rng.standard_normal((n_rows, s_dim * window))
    y = rng.standard_normal((n_rows, s_dim)) + 1j * rng.standard_normal((n_rows, s_dim))
    return datasets.RegressionDataset(X=x, Y=y, window=window, lag=1,
                                      channel_dim=s_dim)


def _check_pulse() -> CheckResult:
    from .simulator import pulse
    ok = (abs(pulse(0.0, 0.22) - 1.0) < 1e-12
          and abs(pulse(3.0, 0.22)) < 1e-12
          and abs(pulse(0.5, 0.0) - 2.0 / math.pi) < 1e-12)
    return CheckResult("pulse_nyquist", ok, "origin/zero-crossing/sinc values")


def _check_ridge_oracle() -> CheckResult:
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(1000 + seed)
        s_dim, window, lam = 2, 5, 0.3
        tr = _rng_dataset(rng, 8, s_dim, window)
        bias = rng.standard_normal((s_dim * window, s_dim)) * (1 + 0j)
        got = ridge.ridge_fit(tr, ridge.RidgeHyper(lam=lam, bias=bias)).V
        gram = tr.X.conj().T @ tr.X + lam * np.eye(s_dim * window)
        want = np.linalg.inv(gram) @ (tr.X.conj().T @ tr.Y + lam * bias)
        worst = max(worst, np.linalg.norm(got - want) / np.linalg.norm(want))
    return CheckResult("ridge_normal_equations", worst < 1e-10,
                       f"max relative error {worst:.2e}")


def _check_als() -> CheckResult:
    rng = np.random.default_rng(7)
    s_dim, window, n_rows = 3, 4, 12
    b = rng.standard_normal(s_dim) + 1j * rng.standard_normal(s_dim)
    b /= np.linalg.norm(b)
    v = rng.standard_normal(window) + 1j * rng.standard_normal(window)
    x = rng.standard_normal((n_rows, s_dim * window)) \
        + 1j * rng.standard_normal((n_rows, s_dim * window))
    hist = lstd.history_stack(x, s_dim)
    y = lstd._feature_rows(hist, b, v)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = lstd.als_feature_fit(x, y, 0.0, 0.0, np.eye(s_dim)[0],
                                   np.zeros(window), lstd.AlsConfig())
    mono = bool(np.all(np.diff(res.trace) <= 1e-10 * max(1.0, abs(res.trace[0]))))
    realizable = res.trace[-1] <= 1e-10 * float(np.sum(np.abs(y) ** 2))
    return CheckResult("als_monotone_realizable", mono and realizable,
                       f"final objective {res.trace[-1]:.2e}")


def _check_lstd_identity() -> CheckResult:
    rng = np.random.default_rng(11)
    s_dim, window = 4, 3
    feats, filts = [], []
    for _ in range(2):
        b = rng.standard_normal(s_dim) + 1j * rng.standard_normal(s_dim)
        feats.append(b / np.linalg.norm(b))
        filts.append(rng.standard_normal(window) + 1j * rng.standard_normal(window))
    pred = lstd.assemble(feats, filts)
    worst = 0.0
    for _ in range(10):
        hist = rng.standard_normal((s_dim, window)) \
            + 1j * rng.standard_normal((s_dim, window))
        via_matrix = pred.V.conj().T @ hist.reshape(-1, order="F")
        via_pipeline = lstd.apply_pipeline(pred, hist)
        worst = max(worst, float(np.linalg.norm(via_matrix - via_pipeline)))
    return CheckResult("lstd_matrix_vs_pipeline", worst < 1e-10,
                       f"max deviation {worst:.2e}")


def _check_dataset() -> CheckResult:
    rng = np.random.default_rng(3)
    chans = rng.standard_normal((2, 9)) + 1j * rng.standard_normal((2, 9))
    ds = datasets.build_dataset(chans, window=3, lag=2)
    ok = ds.n_pairs == 5
    ok = ok and np.allclose(ds.history_matrix(0),
                            chans[:, [2, 1, 0]], atol=1e-14)
    ok = ok and np.allclose(ds.target(0), chans[:, 4], atol=1e-14)
    round_trip = datasets.dataset_from_csv(datasets.dataset_to_csv(ds))
    ok = ok and np.array_equal(round_trip.X, ds.X) and np.array_equal(round_trip.Y, ds.Y)
    return CheckResult("dataset_bookkeeping", bool(ok), "index map and CSV round trip")


def _mini_sweep_config():
    return bench.SweepConfig(
        env="fast", antenna_totals=(2,), taps=(1,), l_new=(4,), n_frames=(3,),
        learners=("conv_naive",), seeds=(0,), n_slots=12, eval_frames=2,
        eval_samples=3, selection_frames=1, selection_samples=3,
        lambda_grid=(0.1, 1.0), snr_db=20.0, pilots=100)


def _check_sweep_determinism() -> CheckResult:
    cfg = _mini_sweep_config()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a = bench.report_to_csv(bench.run_sweep(cfg))
        b = bench.report_to_csv(bench.run_sweep(cfg))
    return CheckResult("sweep_determinism", a == b,
                       "identical seeds give byte-identical reports")


def run_selftest() -> list:
    """Run all checks; returns their results (never raises)."""
    checks = []
    for fn in (_check_pulse, _check_ridge_oracle, _check_als,
               _check_lstd_identity, _check_dataset, _check_sweep_determinism):
        try:
            checks.append(fn())
        except Exception as exc:
            checks.append(CheckResult(fn.__name__.lstrip("_"), False,
                                      f"raised {type(exc).__name__}: {exc}"))
    return checks
