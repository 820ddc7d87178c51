"""Random D2D layouts, breakpoint path-loss channels, and sum-rate evaluation.

Conventions used throughout the package:

* ``gain[k, l]`` is the linear power gain from transmitter k to receiver l,
  so the diagonal holds the direct links and column l collects everything
  received by pair l.
* Rates are Shannon rates ``B * log2(1 + SINR)`` in bit/s.
* All randomness flows through ``numpy.random.Generator`` seeded from a
  single integer, so every artifact is reproducible from its seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

SPEED_OF_LIGHT = 2.998e8  # m/s

# Stream tags so one record seed yields independent draws per purpose.
STREAM_LAYOUT = 0
STREAM_CHANNEL = 1
STREAM_BASELINE = 2

# Distances below this are clamped before path-loss evaluation; only
# cross links can get this close (direct links respect d_min >= 2 m).
MIN_PATHLOSS_DISTANCE_M = 1.0


def derived_rng(seed: int, stream: int) -> np.random.Generator:
    """Generator for (seed, stream), independent across stream tags."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(stream))))


def derived_seed(seed: int, stream: int) -> int:
    """Single integer seed for (seed, stream), for APIs that take one."""
    ss = np.random.SeedSequence((int(seed), int(stream)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class LayoutConfig:
    """Geometry of one deployment: L pairs on a square of edge area_edge."""

    num_pairs: int = 50
    area_edge: float = 500.0  # m
    d_min: float = 2.0  # m, minimum pairwise distance
    d_max: float = 65.0  # m, maximum pairwise distance
    seed: int = 0

    def validate(self) -> None:
        if self.num_pairs < 1:
            raise ConfigurationError(f"num_pairs must be >= 1, got {self.num_pairs}")
        if not (0.0 < self.d_min <= self.d_max <= self.area_edge):
            raise ConfigurationError(
                f"need 0 < d_min <= d_max <= area_edge, got "
                f"d_min={self.d_min}, d_max={self.d_max}, area_edge={self.area_edge}"
            )
        if self.seed < 0:
            raise ConfigurationError(f"seed must be nonnegative, got {self.seed}")


@dataclass
class NetworkLayout:
    """Transmitter/receiver coordinates for one deployment.

    Receivers sit on a disk around their transmitter and may fall outside
    the square; they are kept as drawn.
    """

    tx_pos: np.ndarray  # (L, 2) m
    rx_pos: np.ndarray  # (L, 2) m
    config: LayoutConfig
    weights: np.ndarray = field(default=None)  # (L,), all 1.0 in scope

    def __post_init__(self):
        self.tx_pos = np.asarray(self.tx_pos, dtype=np.float64)
        self.rx_pos = np.asarray(self.rx_pos, dtype=np.float64)
        if self.weights is None:
            self.weights = np.ones(len(self.tx_pos))
        self.weights = np.asarray(self.weights, dtype=np.float64)

    @property
    def num_pairs(self) -> int:
        return self.tx_pos.shape[0]

    def pair_distances(self) -> np.ndarray:
        """Direct-link distances, (L,)."""
        return np.hypot(*(self.tx_pos - self.rx_pos).T)

    def cross_distances(self) -> np.ndarray:
        """dist(T_k, R_l) for all pairs, (L, L); diagonal is the direct link."""
        diff = self.tx_pos[:, None, :] - self.rx_pos[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def validate(self) -> None:
        L = self.config.num_pairs
        if not (self.tx_pos.shape == self.rx_pos.shape == (L, 2)):
            raise ConfigurationError("coordinate arrays must both be (L, 2)")
        if len(self.weights) != L or np.any(self.weights < 0):
            raise ConfigurationError("weights must be L nonnegative reals")
        if np.any(self.tx_pos < 0) or np.any(self.tx_pos > self.config.area_edge):
            raise ConfigurationError("transmitters must lie inside the square")
        d = self.pair_distances()
        # 1e-9 m slack: rx coordinates reconstruct the drawn radius only up
        # to float rounding.
        if np.any(d < self.config.d_min - 1e-9) or np.any(d > self.config.d_max + 1e-9):
            raise ConfigurationError("pairwise distances violate [d_min, d_max]")


@dataclass(frozen=True)
class ChannelConfig:
    """Propagation and radio constants (defaults: 2.4 GHz short-range outdoor)."""

    noise_psd_dbm_hz: float = -169.0
    bandwidth_hz: float = 5e6
    carrier_freq_hz: float = 2.4e9
    antenna_height_m: float = 1.5
    tx_power_dbm: float = 40.0
    shadowing_std_db: float = 0.0  # 0 disables shadowing

    def validate(self) -> None:
        if self.bandwidth_hz <= 0 or self.carrier_freq_hz <= 0:
            raise ConfigurationError("bandwidth and carrier frequency must be positive")
        if self.antenna_height_m <= 0:
            raise ConfigurationError("antenna height must be positive")
        if self.shadowing_std_db < 0:
            raise ConfigurationError("shadowing std must be >= 0")

    @property
    def noise_power_watts(self) -> float:
        """AWGN power over the full bandwidth."""
        return dbm_to_watts(self.noise_psd_dbm_hz) * self.bandwidth_hz

    @property
    def tx_power_watts(self) -> float:
        return dbm_to_watts(self.tx_power_dbm)


@dataclass
class ChannelMatrix:
    """Everything needed to evaluate rates for one layout."""

    gain: np.ndarray  # (L, L) linear power gains, gain[k, l] = |h_kl|^2
    noise_power: float  # W over the full bandwidth
    tx_power: float  # W, uniform across links
    bandwidth: float  # Hz
    weights: np.ndarray  # (L,)

    @property
    def num_pairs(self) -> int:
        return self.gain.shape[0]

    def validate(self) -> None:
        if np.any(~np.isfinite(self.gain)) or np.any(self.gain <= 0):
            raise ConfigurationError("gains must be strictly positive and finite")


@dataclass
class ScheduleVector:
    """Binary activation vector, optionally with the soft probabilities behind it."""

    rho: np.ndarray  # (L,) in {0, 1}
    soft: np.ndarray | None = None  # (L,) activation probabilities

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.int64)
        if self.soft is not None:
            self.soft = np.asarray(self.soft, dtype=np.float64)

    @classmethod
    def from_soft(cls, soft: np.ndarray) -> "ScheduleVector":
        """Hard-decide activations; exactly 0.5 counts as inactive."""
        soft = np.asarray(soft, dtype=np.float64)
        return cls(rho=(soft > 0.5).astype(np.int64), soft=soft)

    def validate(self) -> None:
        if not np.all((self.rho == 0) | (self.rho == 1)):
            raise ConfigurationError("rho entries must be 0 or 1")
        if self.soft is not None:
            if self.soft.shape != self.rho.shape:
                raise ConfigurationError("soft and rho shapes differ")
            if np.any(self.rho != (self.soft > 0.5)):
                raise ConfigurationError("rho must equal the 0.5-threshold of soft")


def generate_layout(config: LayoutConfig, rng_seed: int | None = None) -> NetworkLayout:
    """Draw one layout: transmitters uniform on the square, receivers on a
    uniform-radius ring segment around their transmitter.

    ``rng_seed`` overrides ``config.seed`` so many layouts can share one
    config; the record-keeping seed stays whatever was passed in.
    """
    config.validate()
    seed = config.seed if rng_seed is None else int(rng_seed)
    rng = derived_rng(seed, STREAM_LAYOUT)
    L = config.num_pairs
    tx = rng.uniform(0.0, config.area_edge, size=(L, 2))
    radius = rng.uniform(config.d_min, config.d_max, size=L)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=L)
    rx = tx + radius[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    layout = NetworkLayout(
        tx_pos=tx,
        rx_pos=rx,
        config=LayoutConfig(
            num_pairs=L,
            area_edge=config.area_edge,
            d_min=config.d_min,
            d_max=config.d_max,
            seed=seed,
        ),
    )
    return layout


def pathloss_db(dist_m: np.ndarray, ch: ChannelConfig) -> np.ndarray:
    """Median line-of-sight loss of the short-range outdoor breakpoint model.

    Below the breakpoint distance R_bp = 4 h^2 / lambda the loss grows at
    20 dB/decade, above it at 40 dB/decade; the +6 dB offset is the median
    between the model's lower and upper bounds. Antenna gains are 0 dBi.
    """
    lam = SPEED_OF_LIGHT / ch.carrier_freq_hz
    h = ch.antenna_height_m
    r_bp = 4.0 * h * h / lam
    l_bp = abs(20.0 * np.log10(lam * lam / (8.0 * np.pi * h * h)))
    d = np.maximum(np.asarray(dist_m, dtype=np.float64), MIN_PATHLOSS_DISTANCE_M)
    slope = 20.0 * np.log10(d / r_bp)
    return l_bp + 6.0 + slope + np.where(d > r_bp, slope, 0.0)


def compute_channel(
    layout: NetworkLayout, ch: ChannelConfig, rng_seed: int | None = None
) -> ChannelMatrix:
    """Linear power gains for every (transmitter, receiver) pair.

    With ``shadowing_std_db > 0`` each directed link gets an i.i.d.
    log-normal factor, frozen for the layout; the draw is deterministic
    given ``rng_seed`` (default: derived from the layout's seed).
    """
    ch.validate()
    dist = layout.cross_distances()
    gain_db = -pathloss_db(dist, ch)
    if ch.shadowing_std_db > 0:
        seed = layout.config.seed if rng_seed is None else int(rng_seed)
        rng = derived_rng(seed, STREAM_CHANNEL)
        gain_db = gain_db + rng.normal(0.0, ch.shadowing_std_db, size=dist.shape)
    return ChannelMatrix(
        gain=10.0 ** (gain_db / 10.0),
        noise_power=ch.noise_power_watts,
        tx_power=ch.tx_power_watts,
        bandwidth=ch.bandwidth_hz,
        weights=layout.weights.copy(),
    )


def _signal_and_interference(ch: ChannelMatrix, activation: np.ndarray):
    """Received signal power and interference-plus-noise per link."""
    p = ch.tx_power
    direct = np.diag(ch.gain)
    signal = activation * p * direct
    # column l of gain collects what receiver l hears; remove the own term
    interference = activation @ (p * ch.gain) - signal
    return signal, interference + ch.noise_power


def sum_rate(ch: ChannelMatrix, sched: ScheduleVector) -> tuple[float, np.ndarray]:
    """Weighted Shannon sum rate of a hard schedule, plus per-link rates."""
    rho = np.asarray(sched.rho, dtype=np.float64)
    if rho.shape[0] != ch.num_pairs:
        raise ConfigurationError("schedule length does not match channel size")
    signal, denom = _signal_and_interference(ch, rho)
    per_link = ch.weights * ch.bandwidth * np.log2(1.0 + signal / denom)
    return float(per_link.sum()), per_link


def soft_sum_rate(
    ch: ChannelMatrix, probs: np.ndarray, with_grad: bool = False
) -> float | tuple[float, np.ndarray]:
    """Sum rate with continuous activation levels in place of the 0/1 vector.

    Differentiable in ``probs``; with ``with_grad`` the exact gradient of
    the total comes back alongside the value.
    """
    t = np.asarray(probs, dtype=np.float64)
    if t.shape[0] != ch.num_pairs:
        raise ConfigurationError("probability vector length does not match channel")
    signal, denom = _signal_and_interference(ch, t)
    scale = ch.weights * ch.bandwidth / np.log(2.0)
    total = float(np.sum(scale * np.log1p(signal / denom)))
    if not with_grad:
        return total
    p = ch.tx_power
    direct = np.diag(ch.gain)
    # own-link term: d/dt_m of log(1 + S_m / I_m) with S_m = t_m p g_mm
    own = scale * p * direct / (denom + signal)
    # cross term: raising t_m raises the interference I_l at every l != m
    c = scale * signal / (denom * (denom + signal))
    cross = (p * ch.gain) @ c - p * direct * c
    return total, own - cross
