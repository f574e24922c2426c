"""Sparse multipath channel simulation and noisy observation synthesis.

Channels are drawn with exponentially spaced path delays and Rayleigh path
amplitudes whose mean power decays linearly in dB across the delay spread.
The frequency-domain response across subcarriers is the line spectrum
h = sum_p beta_p * [1, e^{j theta_p}, ..., e^{j(N-1) theta_p}] with
theta_p = -2*pi*df*tau_p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ofdm import OFDMConfig, cfo_vector, unitary_idft

__all__ = [
    "ChannelStatistics",
    "PathSet",
    "Observation",
    "mean_power_profile",
    "draw_channel",
    "channel_frequency_response",
    "synthesize_observation",
    "snr_to_noise_var",
]


@dataclass(frozen=True)
class ChannelStatistics:
    """Path-arrival statistics plus the Doppler/CFO ranges of the scenario.

    ``doppler_range`` documents the common Doppler scaling factor of the
    scenario; the simulator works on the post-resampling discrete model, so
    only ``residual_cfo_range`` (radians/sample, drawn uniformly) affects the
    synthesized observation.
    """

    num_paths: int
    mean_interarrival: float
    decay_db_per_spread: float
    delay_spread: float
    doppler_range: tuple = (-2e-3, 2e-3)
    residual_cfo_range: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")
        if self.mean_interarrival <= 0:
            raise ValueError("mean_interarrival must be positive")
        if self.decay_db_per_spread < 0:
            raise ValueError("decay_db_per_spread must be nonnegative")


@dataclass(frozen=True)
class PathSet:
    """Physical delays/gains and their line-spectral equivalents.

    delays ascending with delays[0] == 0; total power sum|gains|^2 == 1;
    thetas = -2*pi*df*delays; betas fold in the lowest-subcarrier phase
    so that h_k = sum_p betas_p e^{j k thetas_p} (0-based k).
    """

    delays: np.ndarray
    gains: np.ndarray
    thetas: np.ndarray
    betas: np.ndarray

    @property
    def num_paths(self) -> int:
        return self.delays.size


@dataclass(frozen=True)
class Observation:
    """One synthesized receive vector together with its ground truth."""

    y: np.ndarray
    true_h: np.ndarray
    true_omega: float
    true_noise_var: float
    true_symbols: np.ndarray


def mean_power_profile(stats: ChannelStatistics, tau) -> np.ndarray:
    """Mean path power at delay tau, relative to a delay-0 path."""
    tau = np.asarray(tau, dtype=float)
    return 10.0 ** (-(stats.decay_db_per_spread / 10.0) * tau / stats.delay_spread)


def draw_channel(rng: np.random.Generator, stats: ChannelStatistics, config: OFDMConfig) -> PathSet:
    """Draw one random sparse channel.

    The first path is pinned to delay 0; inter-arrival gaps are i.i.d.
    exponential; delay vectors reaching past the cyclic prefix are redrawn.
    Amplitudes are Rayleigh with the dB decay profile, phases uniform, and
    the total power is normalized to 1.
    """
    n_paths = stats.num_paths
    for _ in range(1000):
        gaps = rng.exponential(stats.mean_interarrival, size=n_paths - 1)
        delays = np.concatenate([[0.0], np.cumsum(gaps)])
        if delays[-1] <= config.cp_duration:
            break
    else:
        raise RuntimeError("could not draw a delay profile inside the cyclic prefix")

    profile = mean_power_profile(stats, delays)
    amplitudes = rng.rayleigh(scale=np.sqrt(profile / 2.0))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_paths)
    gains = amplitudes * np.exp(1j * phases)
    gains = gains / np.linalg.norm(gains)

    thetas = -2.0 * np.pi * config.subcarrier_spacing * delays
    betas = gains * np.exp(-2j * np.pi * config.lowest_subcarrier_freq * delays)
    return PathSet(delays=delays, gains=gains, thetas=thetas, betas=betas)


def channel_frequency_response(paths: PathSet, config: OFDMConfig) -> np.ndarray:
    """Line spectrum h over all N subcarriers from the path parameters."""
    k = np.arange(config.num_subcarriers)
    return np.exp(1j * np.outer(k, paths.thetas)) @ paths.betas


def synthesize_observation(h, frame, omega: float, noise_var: float,
                           rng: np.random.Generator) -> Observation:
    """y = e(omega) o (F^H (h o d)) + w with circular Gaussian noise."""
    h = np.asarray(h, dtype=np.complex128)
    d = np.asarray(getattr(frame, "d", frame), dtype=np.complex128)
    n = h.size
    y = cfo_vector(omega, n) * unitary_idft(h * d)
    if noise_var > 0:
        noise = np.sqrt(noise_var / 2.0) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        y = y + noise
    return Observation(y=y, true_h=h, true_omega=float(omega),
                       true_noise_var=float(noise_var), true_symbols=d)


def snr_to_noise_var(snr_db: float, h, d, merged_indices) -> float:
    """Noise variance giving the requested SNR on the pilot-plus-data rows:
    sigma^2 = mean(|h_i d_i|^2, i in M) / 10^(snr/10)."""
    h = np.asarray(h)
    d = np.asarray(d)
    signal_power = np.mean(np.abs(h[merged_indices] * d[merged_indices]) ** 2)
    return float(signal_power / 10.0 ** (snr_db / 10.0))
