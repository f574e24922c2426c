"""Per-subcarrier MMSE message computation, residual-CFO refinement and EM
noise-variance estimation.

Derotating the receive vector by the current CFO estimate and applying the
unitary DFT turns the observation into independent scalar rows
y_tilde_i = h_i d_i + noise, which is the working model of every routine
here.  The CFO is refined by a damped Newton step on the type-II objective
g(omega) = (y_tilde(omega) - z)^H diag(v_z + sigma^2)^{-1} (y_tilde(omega) - z)
with z the current posterior of h o d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ofdm import SubcarrierPlan, SymbolAlphabet, cfo_vector, unitary_dft
from .valse import GaussianMessage

__all__ = [
    "ReceiverState",
    "SymbolBelief",
    "pseudo_measurement",
    "demod_message_to_decoder",
    "posterior_z",
    "cfo_objective",
    "cfo_objective_value",
    "refine_cfo",
    "em_noise_variance",
    "extrinsic_to_a",
]

_UNINFORMATIVE_CEILING = 1e8
_SECOND_MOMENT_FLOOR = 1e-12


@dataclass
class ReceiverState:
    """Mutable per-trial receiver quantities shared across iterations."""

    omega: float
    noise_var: float
    pseudo_y: np.ndarray
    z_post: np.ndarray = None
    v_z_post: np.ndarray = None

    @property
    def num_subcarriers(self) -> int:
        return self.pseudo_y.size

    @property
    def derivative_weights(self) -> np.ndarray:
        return -1j * np.arange(self.num_subcarriers)


@dataclass
class SymbolBelief:
    """Per-data-subcarrier PMF over the alphabet points (rows sum to 1)."""

    pmf: np.ndarray
    points: np.ndarray

    def mean(self) -> np.ndarray:
        return self.pmf @ self.points

    def var(self) -> np.ndarray:
        second = self.pmf @ (np.abs(self.points) ** 2)
        return np.maximum(second - np.abs(self.mean()) ** 2, 0.0)


def pseudo_measurement(y, omega: float) -> np.ndarray:
    """y_tilde(omega) = F (y o e(-omega)): per-subcarrier scalar observations."""
    y = np.asarray(y, dtype=np.complex128)
    return unitary_dft(y * cfo_vector(-omega, y.size))


def demod_message_to_decoder(msg: GaussianMessage, pseudo_y, noise_var: float,
                             plan: SubcarrierPlan, alphabet: SymbolAlphabet,
                             noise_augment: bool = True) -> SymbolBelief:
    """Symbol-prior PMFs on the data subcarriers.

    Each candidate point d is scored by the Gaussian density
    CN(y_tilde_i; h_ext_i d, |d|^2 v_ext_i [+ sigma^2]); the sigma^2 term is
    the measurement-noise augmentation flag.  Rows whose weights all underflow
    come back uniform (an erasure).
    """
    pseudo_y = np.asarray(pseudo_y, dtype=np.complex128)
    pos = np.searchsorted(msg.index_set, plan.data)
    h_ext = msg.mean[pos]
    v_ext = msg.var[pos]
    points = alphabet.points

    mix_var = np.abs(points[None, :]) ** 2 * v_ext[:, None]
    if noise_augment:
        mix_var = mix_var + noise_var
    mix_var = np.maximum(mix_var, 1e-300)
    resid = pseudo_y[plan.data, None] - h_ext[:, None] * points[None, :]
    logw = -(np.abs(resid) ** 2) / mix_var - np.log(mix_var)

    logw = logw - logw.max(axis=1, keepdims=True)
    pmf = np.exp(logw)
    total = pmf.sum(axis=1, keepdims=True)
    bad = ~np.isfinite(total.ravel()) | (total.ravel() <= 0)
    pmf = pmf / np.where(total > 0, total, 1.0)
    if np.any(bad):
        pmf[bad] = 1.0 / points.size
    return SymbolBelief(pmf=pmf, points=points)


def posterior_z(h_mean, h_var, msg_rows, d_mean, d_var, plan: SubcarrierPlan):
    """Posterior moments of z = h o d over all N rows (zeros at the nulls).

    ``h_mean``/``h_var`` live on ``msg_rows`` (the pilot-plus-data set);
    ``d_mean``/``d_var`` are length-N with the pilots filled in as certain
    symbols and zeros on the nulls.
    """
    n = plan.num_subcarriers
    hm = np.zeros(n, dtype=np.complex128)
    hv = np.zeros(n)
    hm[msg_rows] = h_mean
    hv[msg_rows] = h_var
    z = hm * d_mean
    v_z = (np.abs(d_mean) ** 2) * hv + (np.abs(hm) ** 2) * d_var + hv * d_var
    return z, v_z


def cfo_objective(omega: float, y, z, weights):
    """g(omega) with its first two derivatives.

    weights = 1 / (v_z + sigma^2).  The pseudo-measurement derivatives are
    d y_tilde / d omega = F(y o chi o e(-omega)) with chi = -j[0..N-1], and
    the second derivative uses chi^2.
    """
    y = np.asarray(y, dtype=np.complex128)
    n = y.size
    chi = -1j * np.arange(n)
    derot = y * cfo_vector(-omega, n)
    yt = unitary_dft(derot)
    dyt = unitary_dft(derot * chi)
    d2yt = unitary_dft(derot * chi * chi)
    resid = yt - z
    wr = weights * resid
    g = float(np.real(np.vdot(resid, wr)))
    dg = 2.0 * float(np.real(np.vdot(dyt, wr)))
    d2g = 2.0 * float(np.real(np.vdot(d2yt, wr))) + 2.0 * float(np.real(np.vdot(dyt, weights * dyt)))
    return g, dg, d2g


def cfo_objective_value(omega: float, y, z, weights) -> float:
    y = np.asarray(y, dtype=np.complex128)
    resid = pseudo_measurement(y, omega) - z
    return float(np.real(np.vdot(resid, weights * resid)))


def refine_cfo(state: ReceiverState, z_post, v_z_post, y, max_halvings: int = 8) -> bool:
    """One damped Newton step on g(omega).

    The step is accepted only if g decreases, halving up to ``max_halvings``
    times; a non-convex local fit (second derivative <= 0) skips the update.
    On acceptance the pseudo-measurements are recomputed at the new omega.
    """
    weights = 1.0 / (np.maximum(v_z_post, 0.0) + state.noise_var)
    g0, dg, d2g = cfo_objective(state.omega, y, z_post, weights)
    if d2g <= 0 or not np.isfinite(d2g) or not np.isfinite(dg):
        return False
    step = dg / d2g
    for k in range(max_halvings + 1):
        candidate = state.omega - step * (0.5 ** k)
        if abs(candidate) > np.pi:
            continue
        if cfo_objective_value(candidate, y, z_post, weights) < g0:
            state.omega = float(candidate)
            state.pseudo_y = pseudo_measurement(y, state.omega)
            return True
    return False


def em_noise_variance(pseudo_y, z_post, v_z_post) -> float:
    """EM update: sigma^2 = (||y_tilde - z||^2 + sum v_z) / N, floored at
    1e-12 of the mean pseudo-measurement power."""
    pseudo_y = np.asarray(pseudo_y, dtype=np.complex128)
    n = pseudo_y.size
    resid = pseudo_y - z_post
    est = (float(np.real(np.vdot(resid, resid))) + float(np.sum(v_z_post))) / n
    floor = 1e-12 * float(np.real(np.vdot(pseudo_y, pseudo_y))) / n
    return max(est, floor, 1e-300)


def extrinsic_to_a(pseudo_y, noise_var: float, plan: SubcarrierPlan, pilot_values,
                   d_mean_data, d_var_data) -> GaussianMessage:
    """Channel message from the scalar observations on the pilot-plus-data rows.

    Pilots: h_ext = y_tilde/d, v_ext = sigma^2/|d|^2.  Data: the decoder
    moments enter through the second moment |d_post|^2 + v_d; rows where it
    vanishes become uninformative (variance ceiling)."""
    pseudo_y = np.asarray(pseudo_y, dtype=np.complex128)
    merged = plan.merged
    mean = np.zeros(merged.size, dtype=np.complex128)
    var = np.zeros(merged.size)

    pilot_pos = np.searchsorted(merged, plan.pilot)
    pilot_values = np.asarray(pilot_values, dtype=np.complex128)
    mean[pilot_pos] = pseudo_y[plan.pilot] / pilot_values
    var[pilot_pos] = noise_var / np.abs(pilot_values) ** 2

    data_pos = np.searchsorted(merged, plan.data)
    d_mean_data = np.asarray(d_mean_data, dtype=np.complex128)
    second = np.abs(d_mean_data) ** 2 + np.asarray(d_var_data, dtype=float)
    informative = second >= _SECOND_MOMENT_FLOOR
    safe = np.maximum(second, _SECOND_MOMENT_FLOOR)
    mean[data_pos] = np.where(informative, pseudo_y[plan.data] * np.conj(d_mean_data) / safe, 0.0)
    data_var = noise_var / safe
    pool = np.concatenate([var[pilot_pos], data_var[informative]])
    base = float(np.median(pool)) if pool.size else noise_var
    ceiling = _UNINFORMATIVE_CEILING * max(base, 1e-300)
    var[data_pos] = np.where(informative, data_var, ceiling)
    return GaussianMessage(mean, var, merged)
