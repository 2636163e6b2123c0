"""Synthetic frame-based multi-antenna frequency-selective fading channels.

A frame is a block of consecutive slots over which the large-scale
propagation state is frozen: per-path average powers, delays, Doppler
shifts and array responses stay fixed, and only the per-slot phase
rotations of the paths evolve.  Across frames these long-term draws are
independent, which is what the transfer/meta learners exploit.

Conventions used throughout the package:

* A channel snapshot is a complex vector of length ``S = N_R * N_T * W``
  where ``W`` is the number of delay taps.  The layout is tap-major:
  entry ``w * N_R * N_T + (n_rx + n_tx * N_R)`` holds tap ``w`` of the
  (rx, tx) antenna pair, i.e. the vector is ``kron(g_taps, spatial)``
  for a single path.
* A frame's channel matrix has one column per slot.
* Slot ``l`` starts at wall-clock time ``l / srs_rate`` where
  ``srs_rate`` is the pilot (sounding) frequency, so a path with Doppler
  ``gamma`` contributes the rotation ``exp(-2j*pi*gamma*l/srs_rate)``
  and its normalized Doppler is ``gamma / srs_rate``.

The generator is deliberately parametric ("SCM-lite"): ideal
unit-magnitude planar-array steering vectors with half-wavelength
spacing stand in for full field patterns and polarization coupling
(polarization axes reuse the same steering vector), and the pulse shape
is a raised cosine.  The per-path symbol period equals the configured
delay spread, so delays are drawn over ``[0, W * delay_spread)`` and the
exponential power-delay profile decays on the delay-spread scale.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

# Singular values below RANK_RTOL times the largest are treated as zero
# when computing the rank of a signature matrix.
RANK_RTOL = 1e-9

# Normalized Doppler ranges per environment.
DOPPLER_RANGES = {"slow": (0.005, 0.05), "fast": (0.1, 1.0)}

# Antenna configurations indexed by total antenna count N_R * N_T; each
# entry is (rx_hor, rx_ver, rx_pol, tx_hor, tx_ver, tx_pol).
ANTENNA_TABLE = {
    1: (1, 1, 1, 1, 1, 1),
    2: (1, 1, 1, 2, 1, 1),
    4: (1, 1, 1, 2, 2, 1),
    8: (2, 1, 1, 2, 2, 1),
    16: (2, 1, 1, 2, 2, 2),
    32: (2, 1, 1, 4, 2, 2),
    64: (2, 1, 1, 4, 4, 2),
    128: (2, 2, 1, 4, 4, 2),
}


def pulse(tau, rolloff=0.22, symbol_period=1.0):
    """Raised-cosine pulse amplitude at delay ``tau``.

    The pulse models the cascade of the transmit waveform and the
    receiver matched filter.  It satisfies the Nyquist property:
    ``pulse(0) == 1`` and ``pulse(k * symbol_period) == 0`` for any
    nonzero integer ``k``.

    Args:
        tau: Delay in seconds (scalar or array).
        rolloff: Excess-bandwidth factor in [0, 1].
        symbol_period: Symbol period in seconds.

    Returns:
        Real amplitude(s), same shape as ``tau``.
    """
    if not 0.0 <= rolloff <= 1.0:
        raise ValueError(f"rolloff must lie in [0, 1], got {rolloff}")
    t = np.asarray(tau, dtype=float) / float(symbol_period)
    out = np.sinc(t)
    if rolloff > 0.0:
        denom = 1.0 - (2.0 * rolloff * t) ** 2
        # At |t| = 1/(2*rolloff) the generic expression is 0/0; the limit
        # is (pi/4) * sinc(1/(2*rolloff)).
        singular = np.isclose(denom, 0.0, atol=1e-12)
        safe = np.where(singular, 1.0, denom)
        out = out * np.cos(np.pi * rolloff * t) / safe
        out = np.where(singular, (np.pi / 4.0) * np.sinc(1.0 / (2.0 * rolloff)), out)
    if np.ndim(tau) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class AntennaConfig:
    """Planar-array geometry on both link ends plus the tap count.

    ``n_*_pol`` counts polarization ports; ports share the steering
    vector of their element position.
    """

    n_rx_hor: int = 1
    n_rx_ver: int = 1
    n_rx_pol: int = 1
    n_tx_hor: int = 1
    n_tx_ver: int = 1
    n_tx_pol: int = 1
    n_taps: int = 1
    carrier_wavelength: float = 0.1

    def __post_init__(self):
        counts = (self.n_rx_hor, self.n_rx_ver, self.n_rx_pol,
                  self.n_tx_hor, self.n_tx_ver, self.n_tx_pol, self.n_taps)
        if any(int(c) <= 0 for c in counts):
            raise ValueError(f"antenna/tap counts must be positive, got {counts}")
        if self.carrier_wavelength <= 0:
            raise ValueError("carrier_wavelength must be positive")

    @property
    def n_rx(self) -> int:
        return self.n_rx_hor * self.n_rx_ver * self.n_rx_pol

    @property
    def n_tx(self) -> int:
        return self.n_tx_hor * self.n_tx_ver * self.n_tx_pol

    @property
    def channel_dim(self) -> int:
        """Length S = N_R * N_T * W of one channel snapshot."""
        return self.n_rx * self.n_tx * self.n_taps

    @classmethod
    def from_total(cls, total_antennas: int, n_taps: int = 1,
                   carrier_wavelength: float = 0.1) -> "AntennaConfig":
        """Look up the standard configuration for a total antenna count."""
        try:
            tup = ANTENNA_TABLE[int(total_antennas)]
        except KeyError:
            raise ValueError(
                f"no tabulated configuration for {total_antennas} antennas; "
                f"available: {sorted(ANTENNA_TABLE)}") from None
        return cls(*tup, n_taps=n_taps, carrier_wavelength=carrier_wavelength)


@dataclass(frozen=True)
class NoiseModel:
    """Pilot-based channel estimation noise.

    With linear SNR ``snr`` and ``pilots`` averaged pilot symbols per
    slot, each channel entry is observed plus circular complex Gaussian
    noise of variance ``1 / (snr * pilots)``.
    """

    snr: float
    pilots: int = 1

    def __post_init__(self):
        if self.snr <= 0:
            raise ValueError("snr must be positive (linear scale)")
        if self.pilots < 1:
            raise ValueError("pilots must be at least 1")

    @property
    def variance(self) -> float:
        return 1.0 / (self.snr * self.pilots)


@dataclass
class FrameLongTerm:
    """Frame-constant generative state of one frame.

    ``signature`` has one column per path:
    ``sqrt(power_d) * kron(pulse samples at the path delay, spatial_d)``.
    ``basis`` is an orthonormal basis of the signature column span; its
    column count is the numerical rank of the signature matrix.
    """

    path_count: int
    powers: np.ndarray          # (D,) nonnegative, sums to 1 for drawn frames
    delays: np.ndarray          # (D,) seconds
    dopplers: np.ndarray        # (D,) Hz
    spatial: np.ndarray         # (N_R*N_T, D) complex steering products
    signature: np.ndarray       # (S, D) complex
    basis: np.ndarray           # (S, K) complex, orthonormal columns
    slot_period: float          # seconds between consecutive slots

    @property
    def rank(self) -> int:
        return self.basis.shape[1]


@dataclass
class ChannelFrame:
    """One frame: slot-indexed channel vectors plus hidden long-term state."""

    frame_index: int
    channels: np.ndarray        # (S, n_slots) complex, column l = slot l
    long_term: FrameLongTerm
    normalized_doppler: float   # max over paths of |doppler| / srs_rate
    seed: int | None = None

    @property
    def n_slots(self) -> int:
        return self.channels.shape[1]

    @property
    def channel_dim(self) -> int:
        return self.channels.shape[0]


def planar_steering(n_hor, n_ver, n_pol, azimuth, zenith):
    """Steering vector of a uniform planar array at half-wavelength spacing.

    Horizontal elements sit along x, vertical along z; entries have unit
    magnitude.  Ordering: horizontal index fastest, then vertical, then
    polarization (polarization ports repeat the positional phase).
    """
    ih = np.arange(n_hor)
    iv = np.arange(n_ver)
    phase_h = np.pi * ih * np.sin(zenith) * np.cos(azimuth)
    phase_v = np.pi * iv * np.cos(zenith)
    grid = np.exp(-1j * (phase_h[None, :] + phase_v[:, None]))  # (ver, hor)
    vec = grid.reshape(-1)  # vertical-major blocks of horizontal runs
    return np.tile(vec, n_pol)


def pulse_taps(delay, n_taps, symbol_period, rolloff):
    """Samples of the pulse at the tap grid: g(w*T - delay) for w = 0..W-1."""
    w = np.arange(n_taps) * symbol_period
    return pulse(w - delay, rolloff=rolloff, symbol_period=symbol_period)


def frame_from_params(cfg: AntennaConfig, powers, delays, dopplers, spatial,
                      n_slots, *, srs_rate=200.0, rolloff=0.22,
                      symbol_period=None, frame_index=0, seed=None,
                      normalized_doppler=None) -> ChannelFrame:
    """Assemble a frame from explicit per-path parameters.

    This is the deterministic core of :func:`draw_frame`; tests and the
    rank-selection benchmarks use it to build channels of known rank.

    Args:
        cfg: Antenna/tap geometry.
        powers: (D,) nonnegative path powers (linear).
        delays: (D,) path delays in seconds.
        dopplers: (D,) path Doppler shifts in Hz.
        spatial: (N_R*N_T, D) per-path spatial vectors.
        n_slots: Number of slots to synthesize.
        srs_rate: Pilot frequency in Hz; the slot period is its inverse.
        rolloff: Raised-cosine roll-off of the pulse.
        symbol_period: Tap spacing in seconds; defaults to the mean delay
            scale (max(delays, 1) if unset).
    """
    powers = np.asarray(powers, dtype=float)
    delays = np.asarray(delays, dtype=float)
    dopplers = np.asarray(dopplers, dtype=float)
    spatial = np.asarray(spatial, dtype=complex)
    n_paths = powers.shape[0]
    if n_slots < 1:
        raise ValueError("n_slots must be at least 1")
    if n_paths < 1:
        raise ValueError("need at least one path")
    if np.any(powers < 0):
        raise ValueError("path powers must be nonnegative")
    if symbol_period is None:
        symbol_period = float(max(np.max(delays), 1.0))

    # Space-time signature: column d = sqrt(power) * kron(taps_d, spatial_d).
    taps = np.stack([pulse_taps(delays[d], cfg.n_taps, symbol_period, rolloff)
                     for d in range(n_paths)], axis=1)          # (W, D)
    signature = np.einsum("wd,ad->wad", taps, spatial).reshape(
        cfg.n_taps * cfg.n_rx * cfg.n_tx, n_paths)
    signature = signature * np.sqrt(powers)[None, :]

    basis = _orthonormal_span(signature)

    slot_period = 1.0 / float(srs_rate)
    t = np.arange(n_slots) * slot_period
    rotations = np.exp(-2j * np.pi * dopplers[:, None] * t[None, :])  # (D, L)
    channels = signature @ rotations

    long_term = FrameLongTerm(
        path_count=n_paths, powers=powers, delays=delays, dopplers=dopplers,
        spatial=spatial, signature=signature, basis=basis,
        slot_period=slot_period)
    if normalized_doppler is None:
        normalized_doppler = float(np.max(np.abs(dopplers)) * slot_period)
    return ChannelFrame(frame_index=frame_index, channels=channels,
                        long_term=long_term,
                        normalized_doppler=float(normalized_doppler), seed=seed)


def _orthonormal_span(signature: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the signature column span (numerical rank)."""
    u, s, _ = np.linalg.svd(signature, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("signature matrix has rank zero (all powers zero?)")
    k = int(np.sum(s > RANK_RTOL * s[0]))
    return u[:, :k]


def draw_frame(rng_seed, antenna_cfg: AntennaConfig, env: str, cluster_count: int,
               delay_spread: float, n_slots: int, *, srs_rate=200.0,
               rolloff=0.22, frame_index=0) -> ChannelFrame:
    """Draw one frame's long-term state and synthesize its slots.

    Per path the draws are: delay uniform over ``[0, W * delay_spread)``
    with an exponential power-delay profile ``exp(-delay/delay_spread)``
    normalized to unit total power; normalized Doppler uniform over the
    environment's range (``slow`` or ``fast``) scaled by ``srs_rate``;
    azimuth/zenith angles uniform on the sphere ranges for both ends.
    Identical seeds and configuration reproduce the frame bit for bit.

    Args:
        rng_seed: Seed for the frame's private generator.
        antenna_cfg: Antenna/tap geometry.
        env: "slow" or "fast" Doppler environment.
        cluster_count: Number of paths D (>= 1).
        delay_spread: Exponential decay scale of the power-delay profile,
            in seconds; also used as the tap spacing.
        n_slots: Number of slots to synthesize (>= 1).
    """
    if env not in DOPPLER_RANGES:
        raise ValueError(f"env must be one of {sorted(DOPPLER_RANGES)}, got {env!r}")
    if cluster_count < 1:
        raise ValueError("cluster_count must be at least 1")
    if delay_spread <= 0:
        raise ValueError("delay_spread must be positive")
    if n_slots < 1:
        raise ValueError("n_slots must be at least 1")

    rng = np.random.default_rng(rng_seed)
    n_paths = int(cluster_count)

    delays = rng.uniform(0.0, antenna_cfg.n_taps * delay_spread, size=n_paths)
    powers = np.exp(-delays / delay_spread)
    powers = powers / powers.sum()

    lo, hi = DOPPLER_RANGES[env]
    # One mobility state per frame: the frame-level normalized Doppler is
    # drawn from the environment's range, and each path sees its cosine
    # projection onto a uniformly drawn motion angle.
    rho = rng.uniform(lo, hi)
    dopplers = rho * srs_rate * np.cos(rng.uniform(0.0, 2 * np.pi, size=n_paths))

    spatial = np.empty((antenna_cfg.n_rx * antenna_cfg.n_tx, n_paths), dtype=complex)
    for d in range(n_paths):
        az_rx, zen_rx = rng.uniform(0, 2 * np.pi), rng.uniform(0, np.pi)
        az_tx, zen_tx = rng.uniform(0, 2 * np.pi), rng.uniform(0, np.pi)
        a_rx = planar_steering(antenna_cfg.n_rx_hor, antenna_cfg.n_rx_ver,
                               antenna_cfg.n_rx_pol, az_rx, zen_rx)
        a_tx = planar_steering(antenna_cfg.n_tx_hor, antenna_cfg.n_tx_ver,
                               antenna_cfg.n_tx_pol, az_tx, zen_tx)
        # rx index varies fastest within the combined spatial vector
        spatial[:, d] = np.kron(a_tx, a_rx)

    return frame_from_params(
        antenna_cfg, powers, delays, dopplers, spatial, n_slots,
        srs_rate=srs_rate, rolloff=rolloff, symbol_period=delay_spread,
        frame_index=frame_index, seed=_seed_as_int(rng_seed),
        normalized_doppler=rho)


def _seed_as_int(seed):
    try:
        return int(seed)
    except (TypeError, ValueError):
        return None


def draw_scenario_frames(scenario_seed, n_frames, antenna_cfg: AntennaConfig,
                         env: str, cluster_count: int, delay_spread: float,
                         n_slots: int, *, srs_rate=200.0, rolloff=0.22,
                         doppler_range=None, angle_jitter=0.05) -> list:
    """Draw frames that share one slowly evolving long-term geometry.

    The scenario seed fixes path delays, powers and nominal arrival and
    departure angles once; each frame draws its own mobility state (a
    frame-level normalized Doppler from the environment's range, or
    ``doppler_range`` when given, projected per path through a random
    motion-angle cosine) plus a small Gaussian perturbation of the
    nominal angles (``angle_jitter`` radians).  This emulates consecutive
    frames of one propagation scenario, where the spatial structure is
    strongly correlated but not frozen across frames, and is the setting
    in which cross-frame priors on the feature directions carry
    information (rank estimation, transfer of feature bases).
    """
    if env not in DOPPLER_RANGES:
        raise ValueError(f"env must be one of {sorted(DOPPLER_RANGES)}, got {env!r}")
    if cluster_count < 1 or n_frames < 1:
        raise ValueError("cluster_count and n_frames must be at least 1")
    if delay_spread <= 0 or n_slots < 1:
        raise ValueError("delay_spread must be positive and n_slots at least 1")
    lo, hi = doppler_range if doppler_range is not None else DOPPLER_RANGES[env]

    root = np.random.SeedSequence(entropy=(int(scenario_seed), cluster_count))
    geom_ss, frames_ss = root.spawn(2)
    rng = np.random.default_rng(geom_ss)
    n_paths = int(cluster_count)
    delays = rng.uniform(0.0, antenna_cfg.n_taps * delay_spread, size=n_paths)
    powers = np.exp(-delays / delay_spread)
    powers = powers / powers.sum()
    nominal = [(rng.uniform(0, 2 * np.pi), rng.uniform(0, np.pi),
                rng.uniform(0, 2 * np.pi), rng.uniform(0, np.pi))
               for _ in range(n_paths)]

    frames = []
    for i, child in enumerate(frames_ss.spawn(int(n_frames))):
        frame_rng = np.random.default_rng(child)
        rho = frame_rng.uniform(lo, hi)
        cosines = np.cos(frame_rng.uniform(0.0, 2 * np.pi, size=n_paths))
        spatial = np.empty((antenna_cfg.n_rx * antenna_cfg.n_tx, n_paths),
                           dtype=complex)
        for d, (az_rx, zen_rx, az_tx, zen_tx) in enumerate(nominal):
            jit = angle_jitter * frame_rng.standard_normal(4)
            a_rx = planar_steering(antenna_cfg.n_rx_hor, antenna_cfg.n_rx_ver,
                                   antenna_cfg.n_rx_pol, az_rx + jit[0],
                                   zen_rx + jit[1])
            a_tx = planar_steering(antenna_cfg.n_tx_hor, antenna_cfg.n_tx_ver,
                                   antenna_cfg.n_tx_pol, az_tx + jit[2],
                                   zen_tx + jit[3])
            spatial[:, d] = np.kron(a_tx, a_rx)
        frames.append(frame_from_params(
            antenna_cfg, powers, delays, rho * srs_rate * cosines, spatial,
            n_slots, srs_rate=srs_rate, rolloff=rolloff,
            symbol_period=delay_spread, frame_index=i, normalized_doppler=rho))
    return frames


def lstd_ground_truth(frame: ChannelFrame):
    """Long/short-term factorization of a frame's channels.

    Returns the frame's orthonormal feature basis B (S x K) and the
    per-slot amplitude matrix D = B^H @ channels (K x n_slots) so that
    ``B @ D`` reconstructs the channels.
    """
    basis = frame.long_term.basis
    if basis.shape[1] == 0:
        raise ValueError("frame has a rank-zero signature matrix")
    amplitudes = basis.conj().T @ frame.channels
    return basis, amplitudes


def add_estimation_noise(frame: ChannelFrame, noise: NoiseModel, rng_seed) -> ChannelFrame:
    """Return a copy of the frame with pilot-estimation noise on every entry.

    Noise is i.i.d. circular complex Gaussian with per-entry variance
    ``noise.variance``; the input frame is left untouched.
    """
    rng = np.random.default_rng(rng_seed)
    scale = np.sqrt(noise.variance / 2.0)
    shape = frame.channels.shape
    xi = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    noisy = frame.channels + scale * xi
    return ChannelFrame(frame_index=frame.frame_index, channels=noisy,
                        long_term=frame.long_term,
                        normalized_doppler=frame.normalized_doppler,
                        seed=frame.seed)


# ---------------------------------------------------------------------------
# Frame CSV export/import
#
# Layout: two header lines (field names, then values), followed by one row
# per slot holding the S complex entries as interleaved re,im cells (so the
# flat value stream is column-major by slot).

_FRAME_HEADER = ("S", "n_slots", "n_rx", "n_tx", "n_taps", "seed")


def frame_to_csv(frame: ChannelFrame, cfg: AntennaConfig) -> str:
    """Serialize a frame's channel matrix to the package CSV convention."""
    buf = io.StringIO()
    seed = frame.seed if frame.seed is not None else -1
    buf.write(",".join(_FRAME_HEADER) + "\n")
    buf.write(",".join(str(v) for v in (
        frame.channel_dim, frame.n_slots, cfg.n_rx, cfg.n_tx, cfg.n_taps, seed)) + "\n")
    for l in range(frame.n_slots):
        col = frame.channels[:, l]
        cells = np.empty(2 * col.size)
        cells[0::2] = col.real
        cells[1::2] = col.imag
        buf.write(",".join(repr(float(c)) for c in cells) + "\n")
    return buf.getvalue()


def frame_from_csv(text: str):
    """Parse the CSV produced by :func:`frame_to_csv`.

    Returns ``(channels, meta)`` where ``channels`` is the (S, n_slots)
    complex matrix and ``meta`` maps the header fields to ints.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    names = lines[0].split(",")
    if tuple(names) != _FRAME_HEADER:
        raise ValueError(f"unexpected frame header {names!r}")
    meta = dict(zip(_FRAME_HEADER, (int(v) for v in lines[1].split(","))))
    rows = []
    for ln in lines[2:]:
        vals = np.array([float(v) for v in ln.split(",")])
        rows.append(vals[0::2] + 1j * vals[1::2])
    channels = np.stack(rows, axis=1)
    if channels.shape != (meta["S"], meta["n_slots"]):
        raise ValueError("frame payload does not match its header dimensions")
    return channels, meta
