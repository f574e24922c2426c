"""Reference receivers for the performance comparison: pilot-only OMP with a
BIC stopping rule, pilot-only gridless estimation, the joint loop without CFO
refinement, the data-aware estimation bound, and the perfect-CSI genie
decoder.

Every baseline consumes the same Observation object as the full receiver so
per-trial comparisons are paired.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import Observation
from .equalizer import demod_message_to_decoder, pseudo_measurement
from .ldpc import spa_decode, symbol_prior_to_bit_llr
from .ofdm import OFDMConfig, SubcarrierPlan
from .receiver import JCCDConfig, ReceiverContext, ReceiverResult, run, jccd_config_without_cfo
from .valse import GaussianMessage, InsufficientDataError, posterior_h, valse_solve

__all__ = [
    "DelayDictionary",
    "build_delay_dictionary",
    "omp_pilot_estimate",
    "pilot_valse_estimate",
    "jcd_valse",
    "jccd_data_aware",
    "pcsi_decode",
    "ALGORITHM_NAMES",
]

ALGORITHM_NAMES = ("omp", "valse-pilot", "jcd-valse", "jccd-valse", "jccd-data-aware", "pcsi")


@dataclass(frozen=True)
class DelayDictionary:
    """Oversampled delay grid with unit-norm steering atoms on the pilot rows."""

    oversampling: int
    delays: np.ndarray
    thetas: np.ndarray
    atoms: np.ndarray
    pilot_rows: np.ndarray
    num_subcarriers: int


def build_delay_dictionary(config: OFDMConfig, plan: SubcarrierPlan,
                           oversampling: int = 8) -> DelayDictionary:
    """Delay grid covering [0, T_cp] at ``oversampling`` times the sample
    spacing 1/B; atoms are normalized over the pilot rows."""
    n = config.num_subcarriers
    step = config.symbol_duration / (oversampling * n)
    count = int(np.floor(config.cp_duration / step)) + 1
    delays = np.arange(count) * step
    thetas = -2.0 * np.pi * config.subcarrier_spacing * delays
    rows = plan.pilot.astype(float)
    atoms = np.exp(1j * np.outer(rows, thetas)) / np.sqrt(plan.num_pilots)
    return DelayDictionary(oversampling=oversampling, delays=delays, thetas=thetas,
                           atoms=atoms, pilot_rows=plan.pilot,
                           num_subcarriers=n)


def omp_pilot_estimate(h_pilot_obs, dictionary: DelayDictionary, noise_var: float = None,
                       max_atoms: int = None):
    """Greedy atom selection with per-step least-squares refit.

    Stops when the information criterion
    BIC(k) = |P| ln(RSS_k/|P|) + k ln|P| stops decreasing.  ``noise_var`` is
    accepted for interface symmetry with the other estimators; the BIC rule
    does not use it (pilot rows are homoscedastic for unit-modulus pilots).
    Returns (h_hat over all N subcarriers, selected grid indices).
    """
    h_obs = np.asarray(h_pilot_obs, dtype=np.complex128)
    num_pilots = h_obs.size
    if num_pilots == 0:
        raise InsufficientDataError("no pilot observations")
    if max_atoms is None:
        max_atoms = min(max(num_pilots // 4, 1), 64)

    scale = np.linalg.norm(h_obs)
    residual = h_obs.copy()
    selected: list[int] = []
    coefs = np.zeros(0, dtype=np.complex128)
    rss = float(np.real(np.vdot(residual, residual)))
    bic_best = num_pilots * np.log(max(rss, 1e-300) / num_pilots)

    while len(selected) < max_atoms:
        corr = dictionary.atoms.conj().T @ residual
        if selected:
            corr[selected] = 0.0
        pick = int(np.argmax(np.abs(corr)))
        if np.abs(corr[pick]) <= 1e-12 * max(scale, 1e-300):
            break
        trial = selected + [pick]
        basis = dictionary.atoms[:, trial]
        sol, *_ = np.linalg.lstsq(basis, h_obs, rcond=None)
        new_resid = h_obs - basis @ sol
        rss = float(np.real(np.vdot(new_resid, new_resid)))
        k = len(trial)
        bic = num_pilots * np.log(max(rss, 1e-300) / num_pilots) + k * np.log(num_pilots)
        if bic >= bic_best:
            break
        bic_best = bic
        selected, coefs, residual = trial, sol, new_resid

    n = dictionary.num_subcarriers
    if not selected:
        return np.zeros(n, dtype=np.complex128), np.empty(0, dtype=np.intp)
    full_atoms = np.exp(1j * np.outer(np.arange(n), dictionary.thetas[selected]))
    h_hat = full_atoms @ (coefs / np.sqrt(dictionary.pilot_rows.size))
    return h_hat, np.asarray(selected, dtype=np.intp)


def pilot_valse_estimate(h_pilot_obs, var_pilot, l_max: int, plan: SubcarrierPlan,
                         theta_window=None, max_iters: int = 100,
                         noise_floor: float = None, var_profile=None):
    """Pilot-only gridless estimate extrapolated to the whole band.

    Returns (h_hat over N, posterior variance over N, state, learned noise).
    """
    state, _, learned = valse_solve(
        h_pilot_obs, var_pilot, l_max, rows=plan.pilot, theta_window=theta_window,
        max_iters=max_iters, noise_floor=noise_floor, var_profile=var_profile,
    )
    post = posterior_h(state, rows=np.arange(plan.num_subcarriers))
    return post.mean, post.var, state, learned


def jcd_valse(observation: Observation, ctx: ReceiverContext,
              config: JCCDConfig = None, init=None, truth_bits=None) -> ReceiverResult:
    """Joint loop with the CFO refinement disabled (omega pinned at 0)."""
    return run(observation, ctx, jccd_config_without_cfo(config or JCCDConfig()),
               init=init, truth_bits=truth_bits)


def jccd_data_aware(observation: Observation, ctx: ReceiverContext,
                    config: JCCDConfig = None, init=None) -> ReceiverResult:
    """Estimation bound: the decoder is replaced by the true data symbols."""
    return run(observation, ctx, config or JCCDConfig(),
               genie_symbols=observation.true_symbols, init=init)


def pcsi_decode(observation: Observation, ctx: ReceiverContext,
                config: JCCDConfig = None):
    """Genie decoding with the true channel, CFO and noise level: the
    demapper sees h exactly (zero channel uncertainty) and one decoder pass
    produces the bits."""
    config = config or JCCDConfig()
    plan = ctx.plan
    pseudo = pseudo_measurement(observation.y, observation.true_omega)
    msg = GaussianMessage(observation.true_h[plan.merged],
                          np.zeros(plan.merged.size), plan.merged)
    beliefs = demod_message_to_decoder(msg, pseudo, observation.true_noise_var,
                                       plan, ctx.alphabet, noise_augment=True)
    llr_tx = symbol_prior_to_bit_llr(beliefs.pmf, ctx.alphabet)
    return spa_decode(ctx.interleaver.deinterleave(llr_tx), ctx.code)
