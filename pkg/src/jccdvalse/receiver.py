"""Iterative joint receiver: outer loop wiring the line-spectral channel
estimator (A), the per-subcarrier MMSE stage (B) and the LDPC decoder (C).

Message schedule per outer iteration: support/weight update, model-parameter
refit and frequency refinement in A; posterior and extrinsic of the channel;
demap and decode; z-posterior; damped Newton CFO step; EM noise update;
extrinsic back to A; linear-statistics refresh.  Initialization runs the
pilot-only estimator with the CFO estimate pinned at zero and seeds the noise
variance from the null subcarriers when available.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .channel import Observation
from .equalizer import (
    ReceiverState,
    cfo_objective_value,
    demod_message_to_decoder,
    em_noise_variance,
    extrinsic_to_a,
    posterior_z,
    pseudo_measurement,
    refine_cfo,
)
from .ldpc import (
    Interleaver,
    LDPCCode,
    bit_posteriors_to_symbol_moments,
    spa_decode,
    symbol_prior_to_bit_llr,
)
from .ofdm import OFDMConfig, SubcarrierPlan, SymbolAlphabet
from .valse import (
    GaussianMessage,
    ValseState,
    _cyclic_polish,
    clone_state,
    extrinsic_to_b,
    init_from_pseudo,
    posterior_h,
    rebind_rows,
    refresh_linear_stats,
    update_frequency,
    update_model_params,
    update_support_and_weights,
    valse_solve,
)

__all__ = ["ReceiverContext", "JCCDConfig", "IterationDiag", "ReceiverInit",
           "ReceiverResult", "initialize", "run"]


@dataclass(frozen=True)
class ReceiverContext:
    """Immutable per-experiment objects shared by every trial."""

    ofdm: OFDMConfig
    plan: SubcarrierPlan
    alphabet: SymbolAlphabet
    code: LDPCCode
    interleaver: Interleaver
    pilot_values: np.ndarray
    theta_window: tuple = None


@dataclass(frozen=True)
class JCCDConfig:
    """Outer-loop knobs.

    ``demap_noise_augment`` adds the measurement noise to the demap mixing
    variance; ``polish`` enables the concentrated cyclic refinement after the
    per-component frequency sweep (needed for deep convergence; the plain
    alternating sweep contracts frequency errors only geometrically).
    """

    t_max: int = 10
    l_max: int = 30
    cfo_refinement: bool = True
    demap_noise_augment: bool = True
    diagnostics: int = 1
    early_stop: bool = True
    polish: bool = True
    pilot_solve_iters: int = 40

    def __post_init__(self):
        if self.t_max < 1 or self.l_max < 1:
            raise ValueError("t_max and l_max must be >= 1")


@dataclass
class IterationDiag:
    iteration: int
    omega: float
    noise_var: float
    g_omega: float
    support_size: int
    rho: float
    nu: float
    nmse_db: float = None
    ber: float = None


@dataclass
class ReceiverInit:
    state: ValseState
    rx: ReceiverState
    msg_ab: GaussianMessage
    pilot_iterations: int


@dataclass
class ReceiverResult:
    info_bits: np.ndarray
    h_hat: np.ndarray
    omega: float
    noise_var: float
    iterations: int
    syndrome_ok: bool
    trace: list = field(default_factory=list)
    flags: list = field(default_factory=list)


def initialize(observation: Observation, ctx: ReceiverContext,
               config: JCCDConfig) -> ReceiverInit:
    """Pilot-only warm start: CFO pinned at zero, channel posterior and the
    noise/weight-variance hyperparameters from the pilot rows.

    The pilot estimator learns its working noise level by EM, floored at the
    null-subcarrier energy estimate when nulls exist (their energy is pure
    noise plus CFO leakage).
    """
    plan = ctx.plan
    pseudo0 = pseudo_measurement(observation.y, 0.0)
    power_floor = 1e-12 * float(np.mean(np.abs(pseudo0) ** 2)) + 1e-300

    h_pilot = pseudo0[plan.pilot] / ctx.pilot_values
    profile = 1.0 / np.abs(ctx.pilot_values) ** 2
    pilot_power = float(np.mean(np.abs(h_pilot) ** 2)) + 1e-300
    if plan.num_nulls:
        null_energy = float(np.mean(np.abs(pseudo0[plan.null]) ** 2))
        noise_floor = max(null_energy, power_floor)
    else:
        noise_floor = power_floor
    start_var = max(0.01 * pilot_power, noise_floor)

    state, iters, learned = valse_solve(
        h_pilot, start_var * profile, config.l_max, rows=plan.pilot,
        theta_window=ctx.theta_window, max_iters=config.pilot_solve_iters,
        noise_floor=noise_floor, var_profile=profile,
    )
    noise_var = learned if learned is not None else noise_floor

    state = rebind_rows(state, plan.merged)
    posterior = posterior_h(state)
    # incoming message at start: the pilot observations themselves; data rows
    # carry no information yet
    in_mean = np.zeros(plan.merged.size, dtype=np.complex128)
    in_var = np.full(plan.merged.size, np.inf)
    pilot_pos = np.searchsorted(plan.merged, plan.pilot)
    in_mean[pilot_pos] = h_pilot
    in_var[pilot_pos] = noise_var * profile
    msg_ab = extrinsic_to_b(posterior, GaussianMessage(in_mean, in_var, plan.merged))

    rx = ReceiverState(omega=0.0, noise_var=noise_var, pseudo_y=pseudo0)
    return ReceiverInit(state=state, rx=rx, msg_ab=msg_ab, pilot_iterations=iters)


def _decode_pass(msg_ab, rx, ctx, config, genie_symbols):
    """Demap to symbol beliefs and decode; returns data-symbol posterior
    moments plus the decoder outcome (None decode for genie data)."""
    plan = ctx.plan
    if genie_symbols is not None:
        d_mean = genie_symbols[plan.data].astype(np.complex128)
        d_var = np.zeros(plan.num_data)
        return d_mean, d_var, None
    beliefs = demod_message_to_decoder(
        msg_ab, rx.pseudo_y, rx.noise_var, plan, ctx.alphabet,
        noise_augment=config.demap_noise_augment,
    )
    llr_tx = symbol_prior_to_bit_llr(beliefs.pmf, ctx.alphabet)
    decoded = spa_decode(ctx.interleaver.deinterleave(llr_tx), ctx.code)
    llr_post_tx = ctx.interleaver.interleave(decoded.posterior_llr)
    d_mean, d_var, _ = bit_posteriors_to_symbol_moments(llr_post_tx, ctx.alphabet)
    return d_mean, d_var, decoded


def _symbol_moment_vectors(plan: SubcarrierPlan, pilot_values, d_mean, d_var):
    """Length-N posterior symbol moments: certain pilots, zeroed nulls."""
    n = plan.num_subcarriers
    mean = np.zeros(n, dtype=np.complex128)
    var = np.zeros(n)
    mean[plan.pilot] = pilot_values
    mean[plan.data] = d_mean
    var[plan.data] = d_var
    return mean, var


def run(observation: Observation, ctx: ReceiverContext, config: JCCDConfig = None,
        genie_symbols=None, init: ReceiverInit = None, truth_bits=None) -> ReceiverResult:
    """Execute the full joint estimation/decoding loop on one observation.

    ``genie_symbols`` replaces the decoder with the true data symbols
    (variance zero), giving the data-aware estimation bound.  A precomputed
    ``init`` may be shared between receiver variants of the same trial; it is
    cloned, never mutated.  ``truth_bits`` only feeds the diagnostics trace.
    """
    config = config or JCCDConfig()
    plan = ctx.plan
    if init is None:
        init = initialize(observation, ctx, config)
    state = clone_state(init.state)
    rx = ReceiverState(omega=init.rx.omega, noise_var=init.rx.noise_var,
                       pseudo_y=init.rx.pseudo_y.copy())
    msg_ab = GaussianMessage(init.msg_ab.mean.copy(), init.msg_ab.var.copy(),
                             init.msg_ab.index_set)
    flags = []

    # pre-loop: first demap/decode on the warm-start message and the first
    # channel message back; the loop's frequency posteriors are then
    # initialized fresh from the merged-row pseudo measurements (the pilot
    # state only seeds that first demap), with the pilot stage's model
    # parameters carried over as the warm start
    d_mean, d_var, decoded = _decode_pass(msg_ab, rx, ctx, config, genie_symbols)
    msg_ba = extrinsic_to_a(rx.pseudo_y, rx.noise_var, plan, ctx.pilot_values, d_mean, d_var)
    pilot_nu = state.nu
    state = init_from_pseudo(msg_ba.mean, msg_ba.var, config.l_max,
                             rows=plan.merged, theta_window=ctx.theta_window)
    if state.support_size == 0:
        state.nu = pilot_nu
    refresh_linear_stats(state, msg_ba.mean, msg_ba.var)

    trace = []
    streak = 0
    iterations = 0
    for t in range(1, config.t_max + 1):
        iterations = t
        prev_omega = rx.omega

        update_support_and_weights(state)
        update_model_params(state)
        for i in state.support:
            update_frequency(state, i, msg_ba.mean, msg_ba.var)
        if config.polish:
            _cyclic_polish(state, msg_ba.mean,
                           1.0 / np.maximum(msg_ba.var, 1e-300), passes=1)
        posterior = posterior_h(state)
        msg_ab = extrinsic_to_b(posterior, msg_ba)

        d_mean, d_var, decoded = _decode_pass(msg_ab, rx, ctx, config, genie_symbols)
        sym_mean, sym_var = _symbol_moment_vectors(plan, ctx.pilot_values, d_mean, d_var)
        z_post, v_z_post = posterior_z(posterior.mean, posterior.var, plan.merged,
                                       sym_mean, sym_var, plan)
        rx.z_post, rx.v_z_post = z_post, v_z_post
        if config.cfo_refinement:
            refine_cfo(rx, z_post, v_z_post, observation.y)
        rx.noise_var = em_noise_variance(rx.pseudo_y, z_post, v_z_post)
        msg_ba = extrinsic_to_a(rx.pseudo_y, rx.noise_var, plan, ctx.pilot_values,
                                d_mean, d_var)
        refresh_linear_stats(state, msg_ba.mean, msg_ba.var)
        flags.extend(state.flags)
        state.flags = []

        if config.diagnostics:
            g_now = cfo_objective_value(rx.omega, observation.y, z_post,
                                        1.0 / (v_z_post + rx.noise_var))
            nmse_db = None
            if observation.true_h is not None:
                h_full = posterior_h(state, rows=np.arange(plan.num_subcarriers)).mean
                err = float(np.sum(np.abs(h_full - observation.true_h) ** 2))
                ref = float(np.sum(np.abs(observation.true_h) ** 2))
                nmse_db = 10.0 * np.log10(max(err / ref, 1e-30))
            ber = None
            if truth_bits is not None and decoded is not None:
                ber = float(np.mean(decoded.info_bits != truth_bits))
            trace.append(IterationDiag(
                iteration=t, omega=rx.omega, noise_var=rx.noise_var, g_omega=g_now,
                support_size=state.support_size, rho=state.rho, nu=state.nu,
                nmse_db=nmse_db, ber=ber,
            ))

        converged_now = ((decoded is None or decoded.syndrome_ok)
                         and abs(rx.omega - prev_omega) < 1e-9)
        streak = streak + 1 if converged_now else 0
        if config.early_stop and streak >= 2:
            break

    h_hat = posterior_h(state, rows=np.arange(plan.num_subcarriers)).mean
    return ReceiverResult(
        info_bits=None if decoded is None else decoded.info_bits,
        h_hat=h_hat,
        omega=rx.omega,
        noise_var=rx.noise_var,
        iterations=iterations,
        syndrome_ok=bool(decoded.syndrome_ok) if decoded is not None else True,
        trace=trace,
        flags=flags,
    )


def jccd_config_without_cfo(config: JCCDConfig) -> JCCDConfig:
    return dataclasses.replace(config, cfo_refinement=False)
