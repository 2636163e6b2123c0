"""FastAPI service exposing the channel-prediction toolbox.

The CLI is a thin client of these endpoints; other clients (dashboards,
batch schedulers) can use them directly.  CSV-producing endpoints return
``text/csv`` bodies that clients persist verbatim, which keeps the
byte-identical reproducibility guarantees of the core intact across the
wire.
"""

from __future__ import annotations

import warnings
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from . import __version__, bench, datasets, rank, simulator
from .meta import EpConfig
from .selftest import run_selftest

app = FastAPI(
    title="chanpred",
    description="Fading-channel prediction with transfer/meta-learned linear filters",
    version=__version__,
)


class HealthResponse(BaseModel):
    status: str
    version: str


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


class GenerateFrameRequest(BaseModel):
    """Parameters of one synthetic frame draw."""

    seed: int = 0
    env: Literal["slow", "fast"] = "fast"
    antenna_total: int = Field(8, description="total antennas N_R*N_T (tabulated)")
    n_taps: int = Field(1, ge=1)
    cluster_count: int = Field(1, ge=1)
    delay_spread: float = Field(45e-9, gt=0)
    n_slots: int = Field(107, ge=1)
    srs_rate: float = Field(200.0, gt=0)
    rolloff: float = Field(0.22, ge=0, le=1)
    snr_db: Optional[float] = Field(None, description="add estimation noise when set")
    pilots: int = Field(100, ge=1)


@app.post("/frames/generate", response_class=PlainTextResponse)
def generate_frame(req: GenerateFrameRequest) -> PlainTextResponse:
    """Draw one frame and return it in the frame CSV convention."""
    try:
        antenna = simulator.AntennaConfig.from_total(req.antenna_total,
                                                     n_taps=req.n_taps)
        frame = simulator.draw_frame(
            req.seed, antenna, req.env, req.cluster_count, req.delay_spread,
            req.n_slots, srs_rate=req.srs_rate, rolloff=req.rolloff)
        if req.snr_db is not None:
            noise = simulator.NoiseModel(snr=10.0 ** (req.snr_db / 10.0),
                                         pilots=req.pilots)
            frame = simulator.add_estimation_noise(frame, noise, req.seed + 1)
        text = simulator.frame_to_csv(frame, antenna)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return PlainTextResponse(content=text, media_type="text/csv")


class SweepRequest(BaseModel):
    """Sweep configuration as a mapping of SweepConfig fields."""

    config: dict = Field(default_factory=dict)
    desk_scale: bool = False
    seed: Optional[int] = Field(None, description="override the seeds list")
    timing: bool = Field(False, description="emit measured wall times "
                         "(breaks byte-identical reruns)")


@app.post("/sweep", response_class=PlainTextResponse)
def sweep(req: SweepRequest) -> PlainTextResponse:
    """Run a sweep and return the NMSE report as CSV."""
    data = dict(req.config)
    if req.seed is not None:
        data["seeds"] = [req.seed]
    try:
        cfg = bench.SweepConfig.from_dict(data, desk_scale=req.desk_scale)
    except (TypeError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = bench.run_sweep(cfg)
    return PlainTextResponse(content=bench.report_to_csv(report, timing=req.timing),
                             media_type="text/csv")


class RankRequest(BaseModel):
    """Rank estimation on synthetic frames drawn by the service."""

    method: Literal["aic", "meta_validation"] = "aic"
    seed: int = 0
    env: Literal["slow", "fast"] = "fast"
    antenna_total: int = 4
    n_taps: int = 1
    cluster_count: int = Field(2, ge=1, description="true path count of the draws")
    delay_spread: float = 45e-9
    n_frames: int = Field(10, ge=1, description="pooled (aic) or meta-training frames")
    n_frames_val: int = Field(10, ge=1, description="validation frames (meta only)")
    n_slots: int = 48
    window: int = 5
    lag: int = 3
    l_train: int = Field(20, ge=1, description="train split size per frame (meta only)")
    snr_db: Optional[float] = 20.0
    pilots: int = 100
    lam_long: float = 0.1
    lam_short: float = 0.1
    k_max: int = 6
    ep_outer_iters: int = 10
    als_tol: float = 1e-7
    als_max_iters: int = 60


class RankResponse(BaseModel):
    method: str
    k_hat: int
    ks: list[int]
    scores: list[float]
    curve_csv: str


def _rank_frames(req: RankRequest, count: int, branch: int):
    antenna = simulator.AntennaConfig.from_total(req.antenna_total,
                                                 n_taps=req.n_taps)
    root = np.random.SeedSequence(entropy=(req.seed, branch))
    children = root.spawn(2 * count)
    frames = []
    for child, nchild in zip(children[:count], children[count:]):
        frame = simulator.draw_frame(child, antenna, req.env,
                                     req.cluster_count, req.delay_spread,
                                     req.n_slots)
        if req.snr_db is not None:
            noise = simulator.NoiseModel(snr=10.0 ** (req.snr_db / 10.0),
                                         pilots=req.pilots)
            frame = simulator.add_estimation_noise(frame, noise, nchild)
        frames.append(frame)
    return frames


@app.post("/rank", response_model=RankResponse)
def rank_endpoint(req: RankRequest) -> RankResponse:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if req.method == "aic":
                frames = _rank_frames(req, req.n_frames, branch=0)
                pooled = np.concatenate([f.channels for f in frames], axis=1)
                est = rank.aic_rank(pooled)
            else:
                ep = EpConfig(outer_iters=req.ep_outer_iters,
                              als_tol=req.als_tol,
                              als_max_iters=req.als_max_iters)
                tr, va = [], []
                for frames, out in ((_rank_frames(req, req.n_frames, 0), tr),
                                    (_rank_frames(req, req.n_frames_val, 1), va)):
                    for f in frames:
                        ds = datasets.build_dataset(f.channels, req.window,
                                                    req.lag, normalize=True)
                        out.append(datasets.split(ds, req.l_train))
                est = rank.meta_validation_rank(tr, va, req.lam_long,
                                                req.lam_short, ep,
                                                k_max=req.k_max)
    except ValueError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    return RankResponse(method=est.method, k_hat=est.k_hat,
                        ks=[int(k) for k in est.ks],
                        scores=[float(s) for s in est.scores],
                        curve_csv=rank.curve_to_csv(est))


class CheckModel(BaseModel):
    name: str
    passed: bool
    detail: str


class SelftestResponse(BaseModel):
    passed: bool
    checks: list[CheckModel]


@app.post("/selftest", response_model=SelftestResponse)
def selftest_endpoint() -> SelftestResponse:
    checks = [CheckModel(name=c.name, passed=bool(c.passed), detail=c.detail)
              for c in run_selftest()]
    return SelftestResponse(passed=all(c.passed for c in checks), checks=checks)
