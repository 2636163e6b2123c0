"""Seeded, reproducible NMSE benchmark harness.

A sweep evaluates a set of learners over the grid
(antenna totals) x (tap counts) x (pilot budgets L_new) x (previous-frame
counts F) x (master seeds), all within one Doppler environment.  For
each grid cell the harness draws F source frames and a disjoint batch of
evaluation frames, trains every learner's prior from the (noisy) source
data, adapts per evaluation frame on its first ``l_new`` pairs and
scores the following ``eval_samples`` predictions against the clean
channel.

Regularization weights are picked per learner from a small grid scored
on held-out source frames; evaluation frames never influence training.
Every random draw derives from (master seed, cell parameters) through
named SeedSequence branches, so rerunning a sweep writes a byte-identical
report and editing one cell's seed cannot disturb any other cell.

The six learner names: ``conv``/``trans``/``meta`` pick the prior
(none, pooled fit, meta-learned) and ``naive``/``lstd`` the predictor
family (full matrix vs reduced rank).
"""

from __future__ import annotations

import io
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import datasets, lstd, meta, rank, ridge, simulator

LEARNERS = ("conv_naive", "conv_lstd", "trans_naive", "trans_lstd",
            "meta_naive", "meta_lstd")

REPORT_COLUMNS = ("learner", "env", "n_antennas", "taps", "l_new",
                  "n_frames", "seed", "nmse", "nmse_db", "wall_ms")

DEFAULT_LAMBDA_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)


@dataclass
class SweepConfig:
    """Everything a sweep needs; defaults mirror the reference full-scale
    setup (window 5, lag 3, F=500, L=100, 20 dB / 100-pilot estimation,
    200 evaluation frames x 100 samples)."""

    env: str = "fast"
    antenna_totals: tuple = (8,)
    taps: tuple = (1,)
    l_new: tuple = (1,)
    n_frames: tuple = (500,)
    learners: tuple = LEARNERS
    seeds: tuple = (0,)
    window: int = 5
    lag: int = 3
    n_slots: int = 100                 # training pairs per source frame
    snr_db: float | None = 20.0
    pilots: int = 100
    cluster_count: int = 1
    delay_spread: float = 45e-9
    srs_rate: float = 200.0
    rolloff: float = 0.22
    eval_frames: int = 200
    eval_samples: int = 100
    scenario_consistent: bool = True   # frames share long-term geometry
    scenario_jitter: float = 0.05      # per-frame angle perturbation (rad)
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    n_features: int | str = 1          # int or "auto" (rank estimation)
    rank_k_max: int = 6
    selection_frames: int = 20         # held-out source frames for the grid
    selection_samples: int = 20
    selection_fit_cap: int = 24        # meta-training frames per grid point
    ep_alpha: float = 1e-3
    ep_step: float = 1e-2
    ep_outer_iters: int = 20
    als_tol: float = 1e-7
    als_max_iters: int = 60
    workers: int = 1

    def __post_init__(self):
        for name in ("antenna_totals", "taps", "l_new", "n_frames",
                     "learners", "seeds", "lambda_grid"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValueError(f"{name} must be a nonempty list")
            setattr(self, name, value)
        unknown = set(self.learners) - set(LEARNERS)
        if unknown:
            raise ValueError(f"unknown learners {sorted(unknown)}; "
                             f"choose from {LEARNERS}")
        if self.env not in simulator.DOPPLER_RANGES:
            raise ValueError(f"env must be one of "
                             f"{sorted(simulator.DOPPLER_RANGES)}")
        if self.window < 1 or self.lag < 1:
            raise ValueError("window and lag must be at least 1")
        if any(l >= self.n_slots for l in self.l_new):
            raise ValueError("every l_new must be smaller than n_slots")

    @classmethod
    def desk_scale(cls, **overrides) -> "SweepConfig":
        """Shrunken defaults that keep a full run in the minutes range."""
        values = dict(n_frames=(100,), eval_frames=50, eval_samples=20,
                      selection_frames=10, selection_fit_cap=16)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def from_dict(cls, data: dict, desk_scale: bool = False) -> "SweepConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        if desk_scale:
            return cls.desk_scale(**data)
        return cls(**data)


def load_sweep_config(path, desk_scale: bool = False) -> SweepConfig:
    """Load a sweep configuration from a YAML mapping file."""
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("sweep config must be a YAML mapping")
    return SweepConfig.from_dict(data, desk_scale=desk_scale)


@dataclass
class ReportRow:
    learner: str
    env: str
    n_antennas: int
    taps: int
    l_new: int
    n_frames: int
    seed: int
    nmse: float
    nmse_db: float
    wall_ms: float
    n_samples: int = 0
    chosen_lambda: float = float("nan")


@dataclass
class NmseReport:
    rows: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Frame preparation


@dataclass
class FrameData:
    """One frame's training views: normalized pairs for fitting, raw noisy
    pairs for prediction inputs, clean targets for scoring."""

    ds_norm: datasets.RegressionDataset
    ds_raw: datasets.RegressionDataset
    clean_targets: np.ndarray     # (L, S) actual (unconjugated) snapshots


def _views_from_frame(frame, noise_seq, cfg: SweepConfig, n_slots: int) -> FrameData:
    clean = frame.channels[:, :n_slots]
    if cfg.snr_db is not None:
        noise = simulator.NoiseModel(snr=10.0 ** (cfg.snr_db / 10.0),
                                     pilots=cfg.pilots)
        rng = np.random.default_rng(noise_seq)
        scale = np.sqrt(noise.variance / 2.0)
        xi = rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
        noisy = clean + scale * xi
    else:
        noisy = clean
    ds_norm = datasets.build_dataset(noisy, cfg.window, cfg.lag, normalize=True)
    ds_raw = datasets.build_dataset(noisy, cfg.window, cfg.lag, normalize=False)
    ds_clean = datasets.build_dataset(clean, cfg.window, cfg.lag, normalize=False)
    return FrameData(ds_norm=ds_norm, ds_raw=ds_raw,
                     clean_targets=np.conj(ds_clean.Y))


def _prepare_frame(seed_seq, noise_seq, cfg: SweepConfig,
                   antenna: simulator.AntennaConfig, n_slots: int) -> FrameData:
    frame = simulator.draw_frame(
        seed_seq, antenna, cfg.env, cfg.cluster_count, cfg.delay_spread,
        n_slots, srs_rate=cfg.srs_rate, rolloff=cfg.rolloff)
    return _views_from_frame(frame, noise_seq, cfg, n_slots)


def _head(ds: datasets.RegressionDataset, n: int) -> datasets.RegressionDataset:
    return datasets.RegressionDataset(X=ds.X[:n].copy(), Y=ds.Y[:n].copy(),
                                      window=ds.window, lag=ds.lag,
                                      channel_dim=ds.channel_dim)


def _frame_nmse(v_matrix: np.ndarray, fd: FrameData, l_new: int,
                n_samples: int) -> list:
    """Per-sample NMSE of a predictor matrix on the pairs after the pilots."""
    stop = min(l_new + n_samples, fd.ds_raw.n_pairs)
    rows = fd.ds_raw.X[l_new:stop]
    preds = np.conj(rows @ v_matrix)
    truth = fd.clean_targets[l_new:stop]
    err = np.sum(np.abs(preds - truth) ** 2, axis=1)
    ref = np.sum(np.abs(truth) ** 2, axis=1)
    return list(err / ref)


# ---------------------------------------------------------------------------
# Learners: each returns an adapter (train-rows dataset) -> predictor matrix


def _make_conv_naive(lam, cfg):
    def adapter(tr):
        dim = tr.X.shape[1]
        bias = np.zeros((dim, tr.channel_dim), dtype=complex)
        return ridge.ridge_fit(tr, ridge.RidgeHyper(lam=lam, bias=bias)).V
    return adapter


def _make_biased_naive(lam, bias):
    def adapter(tr):
        return ridge.ridge_fit(tr, ridge.RidgeHyper(lam=lam, bias=bias)).V
    return adapter


def _make_conv_lstd(lam, cfg, k_features):
    als_cfg = lstd.AlsConfig(tol=cfg.als_tol, max_iters=cfg.als_max_iters)

    def adapter(tr):
        hyper = lstd.LstdHyper.uninformative(
            k_features, tr.channel_dim, tr.window, lam_long=0.0, lam_short=lam)
        return lstd.lstd_conventional_fit(tr, hyper, als_cfg).V
    return adapter


def _make_biased_lstd(lam, cfg, base_hyper):
    als_cfg = lstd.AlsConfig(tol=cfg.als_tol, max_iters=cfg.als_max_iters)
    hyper = lstd.LstdHyper(n_features=base_hyper.n_features, lam_long=lam,
                           lam_short=lam, long_bias=list(base_hyper.long_bias),
                           short_bias=list(base_hyper.short_bias))

    def adapter(tr):
        return lstd.lstd_adapt(tr, hyper, als_cfg).V
    return adapter


def _ep_config(cfg: SweepConfig) -> meta.EpConfig:
    return meta.EpConfig(alpha=cfg.ep_alpha, step=cfg.ep_step,
                         outer_iters=cfg.ep_outer_iters,
                         als_tol=cfg.als_tol, als_max_iters=cfg.als_max_iters)


def _select_lambda(cfg, make_adapter, sel_frames, l_new):
    """Score each grid value on the held-out frames; return the winner.

    ``make_adapter`` may train a prior per candidate (meta learners do).
    With no held-out frames available the grid midpoint is used.
    """
    grid = cfg.lambda_grid
    if not sel_frames:
        lam = grid[len(grid) // 2]
        return lam, make_adapter(lam)
    best = None
    for lam in grid:
        adapter = make_adapter(lam)
        vals = []
        for fd in sel_frames:
            v_matrix = adapter(_head(fd.ds_norm, l_new))
            vals.extend(_frame_nmse(v_matrix, fd, l_new, cfg.selection_samples))
        score = float(np.mean(vals))
        if best is None or score < best[0]:
            best = (score, lam, adapter)
    return best[1], best[2]


def _train_learner(name, cfg: SweepConfig, fit_frames, sel_frames, l_new,
                   k_features):
    """Resolve a learner name into (chosen lambda, adapter)."""
    if name == "conv_naive":
        return _select_lambda(cfg, lambda lam: _make_conv_naive(lam, cfg),
                              sel_frames, l_new)
    if name == "conv_lstd":
        return _select_lambda(
            cfg, lambda lam: _make_conv_lstd(lam, cfg, k_features),
            sel_frames, l_new)

    if name == "trans_naive":
        bias = ridge.transfer_bias([fd.ds_norm for fd in fit_frames])
        return _select_lambda(cfg, lambda lam: _make_biased_naive(lam, bias),
                              sel_frames, l_new)
    if name == "trans_lstd":
        als_cfg = lstd.AlsConfig(tol=cfg.als_tol, max_iters=cfg.als_max_iters)
        base = lstd.lstd_transfer_fit([fd.ds_norm for fd in fit_frames],
                                      k_features, als_cfg)
        return _select_lambda(
            cfg, lambda lam: _make_biased_lstd(lam, cfg, base),
            sel_frames, l_new)

    if name == "meta_naive":
        def make(lam, frames):
            splits = [datasets.split(fd.ds_norm, l_new) for fd in frames]
            bias = ridge.meta_bias_closed_form(splits, lam)
            return _make_biased_naive(lam, bias)

        cap = fit_frames[:cfg.selection_fit_cap]
        lam, _ = _select_lambda(cfg, lambda lam: make(lam, cap),
                                sel_frames, l_new)
        return lam, make(lam, fit_frames + sel_frames)

    if name == "meta_lstd":
        ep = _ep_config(cfg)

        def make(lam, frames):
            splits = [datasets.split(fd.ds_norm, l_new) for fd in frames]
            hyper = meta.lstd_meta_fit(splits, k_features, lam, lam, ep)
            return _make_biased_lstd(lam, cfg, hyper)

        cap = fit_frames[:cfg.selection_fit_cap]
        lam, _ = _select_lambda(cfg, lambda lam: make(lam, cap),
                                sel_frames, l_new)
        return lam, make(lam, fit_frames + sel_frames)

    raise ValueError(f"unknown learner {name!r}")


def _resolve_features(cfg: SweepConfig, fit_frames, sel_frames, l_new, name):
    """Fixed feature count, or rank estimation when configured as auto."""
    if cfg.n_features != "auto":
        return int(cfg.n_features)
    s_dim = fit_frames[0].ds_raw.channel_dim
    if name == "meta_lstd" and sel_frames:
        cap = fit_frames[:cfg.selection_fit_cap]
        tr = [datasets.split(fd.ds_norm, l_new) for fd in cap]
        va = [datasets.split(fd.ds_norm, l_new) for fd in sel_frames]
        lam = cfg.lambda_grid[len(cfg.lambda_grid) // 2]
        est = rank.meta_validation_rank(tr, va, lam, lam, _ep_config(cfg),
                                        k_max=min(cfg.rank_k_max, s_dim))
        return est.k_hat
    pooled = np.concatenate(
        [np.conj(fd.ds_raw.Y).T for fd in fit_frames[:cfg.selection_fit_cap]],
        axis=1)
    est = rank.aic_rank(pooled)
    return int(min(max(est.k_hat, 1), min(cfg.rank_k_max, s_dim)))


# ---------------------------------------------------------------------------
# Cells and the sweep driver


@dataclass(frozen=True)
class CellSpec:
    antenna_total: int
    taps: int
    l_new: int
    n_frames: int
    seed: int


def _cell_rows(cfg: SweepConfig, cell: CellSpec) -> list:
    root = np.random.SeedSequence(
        entropy=(int(cell.seed), cell.antenna_total, cell.taps,
                 cell.l_new, cell.n_frames))
    src_ss, src_noise, eval_ss, eval_noise = root.spawn(4)
    antenna = simulator.AntennaConfig.from_total(cell.antenna_total,
                                                 n_taps=cell.taps)
    slots_src = cfg.window + cfg.lag - 1 + cfg.n_slots
    slots_eval = cfg.window + cfg.lag - 1 + cell.l_new + cfg.eval_samples

    src_noise_children = src_noise.spawn(cell.n_frames)
    eval_noise_children = eval_noise.spawn(cfg.eval_frames)
    if cfg.scenario_consistent:
        # All of a cell's frames share one long-term geometry (evaluation
        # frames still use disjoint mobility draws and noise).
        scenario_seed = int(src_ss.generate_state(1)[0])
        frames = simulator.draw_scenario_frames(
            scenario_seed, cell.n_frames + cfg.eval_frames, antenna, cfg.env,
            cfg.cluster_count, cfg.delay_spread, max(slots_src, slots_eval),
            srs_rate=cfg.srs_rate, rolloff=cfg.rolloff,
            angle_jitter=cfg.scenario_jitter)
        source = [_views_from_frame(f, n, cfg, slots_src)
                  for f, n in zip(frames[:cell.n_frames], src_noise_children)]
        evals = [_views_from_frame(f, n, cfg, slots_eval)
                 for f, n in zip(frames[cell.n_frames:], eval_noise_children)]
    else:
        src_children = src_ss.spawn(cell.n_frames)
        source = [_prepare_frame(s, n, cfg, antenna, slots_src)
                  for s, n in zip(src_children, src_noise_children)]
        eval_children = eval_ss.spawn(cfg.eval_frames)
        evals = [_prepare_frame(s, n, cfg, antenna, slots_eval)
                 for s, n in zip(eval_children, eval_noise_children)]

    n_sel = min(cfg.selection_frames, max(0, len(source) - 1))
    fit_frames = source[:len(source) - n_sel]
    sel_frames = source[len(source) - n_sel:] if n_sel else []

    rows = []
    for name in cfg.learners:
        start = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                k_features = _resolve_features(cfg, fit_frames, sel_frames,
                                               cell.l_new, name)
                lam, adapter = _train_learner(name, cfg, fit_frames,
                                              sel_frames, cell.l_new,
                                              k_features)
                vals = []
                for fd in evals:
                    v_matrix = adapter(_head(fd.ds_norm, cell.l_new))
                    vals.extend(_frame_nmse(v_matrix, fd, cell.l_new,
                                            cfg.eval_samples))
            mean_nmse = float(np.mean(vals))
            db = float(10.0 * np.log10(mean_nmse)) if mean_nmse > 0 else float("-inf")
            n_samples = len(vals)
        except Exception as exc:   # record the failure, keep sweeping
            warnings.warn(f"learner {name} failed on {cell}: {exc}",
                          RuntimeWarning, stacklevel=2)
            mean_nmse, db, n_samples, lam = float("nan"), float("nan"), 0, float("nan")
        wall_ms = (time.perf_counter() - start) * 1e3
        rows.append(ReportRow(
            learner=name, env=cfg.env, n_antennas=cell.antenna_total,
            taps=cell.taps, l_new=cell.l_new, n_frames=cell.n_frames,
            seed=cell.seed, nmse=mean_nmse, nmse_db=db, wall_ms=wall_ms,
            n_samples=n_samples, chosen_lambda=lam))
    return rows


def run_sweep(cfg: SweepConfig) -> NmseReport:
    """Run the full grid and return the per-(cell, learner) NMSE rows.

    Cells are independent; with ``cfg.workers > 1`` they run in a thread
    pool.  Row order is the deterministic grid order either way.
    """
    cells = [CellSpec(a, w, l, f, s)
             for a in cfg.antenna_totals
             for w in cfg.taps
             for l in cfg.l_new
             for f in cfg.n_frames
             for s in cfg.seeds]
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            per_cell = list(pool.map(lambda c: _cell_rows(cfg, c), cells))
    else:
        per_cell = [_cell_rows(cfg, c) for c in cells]
    report = NmseReport()
    for rows in per_cell:
        report.rows.extend(rows)
    return report


# ---------------------------------------------------------------------------
# Report serialization


def report_to_csv(report: NmseReport, timing: bool = False) -> str:
    """Render the report; timing is suppressed by default so reruns with
    the same seed produce byte-identical files."""
    buf = io.StringIO()
    buf.write(",".join(REPORT_COLUMNS) + "\n")
    for r in report.rows:
        wall = int(round(r.wall_ms)) if timing else 0
        cells = (r.learner, r.env, str(r.n_antennas), str(r.taps),
                 str(r.l_new), str(r.n_frames), str(r.seed),
                 repr(float(r.nmse)), repr(float(r.nmse_db)), str(wall))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def emit_report(report: NmseReport, path, timing: bool = False) -> None:
    """Write the CSV report to ``path``."""
    text = report_to_csv(report, timing=timing)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def report_from_csv(text: str) -> NmseReport:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if tuple(lines[0].split(",")) != REPORT_COLUMNS:
        raise ValueError(f"unexpected report header {lines[0]!r}")
    report = NmseReport()
    for ln in lines[1:]:
        cells = ln.split(",")
        report.rows.append(ReportRow(
            learner=cells[0], env=cells[1], n_antennas=int(cells[2]),
            taps=int(cells[3]), l_new=int(cells[4]), n_frames=int(cells[5]),
            seed=int(cells[6]), nmse=float(cells[7]), nmse_db=float(cells[8]),
            wall_ms=float(cells[9])))
    return report


# ---------------------------------------------------------------------------
# Tap-count rule for delay-spread sweeps


def estimate_tap_count(env: str, antenna_total: int, cluster_count: int,
                       delay_spread: float, power_fraction: float = 0.9,
                       probe_taps: int = 12, n_probe: int = 16,
                       seed: int = 0) -> int:
    """Smallest tap count holding the requested share of channel power.

    Draws probe frames at a generous tap budget, measures the average
    per-tap power profile and returns the shortest prefix with at least
    ``power_fraction`` of the total.
    """
    cfg = simulator.AntennaConfig.from_total(antenna_total, n_taps=probe_taps)
    ss = np.random.SeedSequence(entropy=(seed, antenna_total, cluster_count))
    per_tap = np.zeros(probe_taps)
    block = cfg.n_rx * cfg.n_tx
    for child in ss.spawn(n_probe):
        frame = simulator.draw_frame(child, cfg, env, cluster_count,
                                     delay_spread, n_slots=4)
        power = np.abs(frame.channels) ** 2
        per_tap += power.reshape(probe_taps, block, -1).sum(axis=(1, 2))
    cdf = np.cumsum(per_tap) / per_tap.sum()
    return int(np.searchsorted(cdf, power_fraction) + 1)
