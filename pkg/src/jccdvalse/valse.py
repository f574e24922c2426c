"""Gridless variational line spectral estimation under heterogeneous noise.

Estimates a superposition of complex sinusoids h = sum_i beta_i a(theta_i)
from per-row pseudo-measurements h_tilde with independent noise variances
sigma_tilde^2.  Component activity follows a Bernoulli(rho) prior, active
weights are CN(0, nu), and the frequency posteriors are kept in the von Mises
family.  The support is chosen greedily on the evidence ln Z(s) with rank-one
updates; frequencies are refined with a damped two-step Newton scheme.

The estimator exchanges extrinsic Gaussian messages per row, so it drops into
an expectation-propagation receiver unchanged: ``posterior_h`` gives the
moment-matched posterior and ``extrinsic_to_b`` divides out the incoming
message.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .vonmises import circular_moment, concentration_from_ratio

__all__ = [
    "InsufficientDataError",
    "GaussianMessage",
    "VonMisesPosterior",
    "ValseState",
    "init_from_pseudo",
    "refresh_linear_stats",
    "update_frequency",
    "update_support_and_weights",
    "update_model_params",
    "posterior_h",
    "extrinsic_to_b",
    "support_log_score",
    "valse_solve",
    "clone_state",
    "rebind_rows",
]

_SUPPORT_TOL = 1e-9
_UNINFORMATIVE_CEILING = 1e8
_POSTERIOR_VAR_FLOOR = 1e-12


class InsufficientDataError(ValueError):
    """Fewer than two pseudo-measurement rows were provided."""


@dataclass
class GaussianMessage:
    """Independent complex Gaussian beliefs over a set of subcarrier rows.

    ``var`` entries are positive; +inf marks an uninformative row.
    """

    mean: np.ndarray
    var: np.ndarray
    index_set: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.complex128)
        self.var = np.asarray(self.var, dtype=float)
        self.index_set = np.asarray(self.index_set, dtype=np.intp)


@dataclass
class VonMisesPosterior:
    mean_direction: float
    concentration: float


@dataclass
class ValseState:
    """Posterior state of the line-spectral estimator.

    ``rows`` are the 0-based subcarrier indices of the pseudo-measurements
    (they equal the circular-moment orders of the steering entries).  ``beta``
    and ``C`` are kept at full size L_max with zeros outside the active block.
    """

    rows: np.ndarray
    thetas: np.ndarray
    kappas: np.ndarray
    active: np.ndarray
    beta: np.ndarray
    C: np.ndarray
    rho: float
    nu: float
    A_hat: np.ndarray
    J: np.ndarray
    u: np.ndarray
    theta_window: tuple = None
    var_floor: float = _POSTERIOR_VAR_FLOOR
    flags: list = field(default_factory=list)

    @property
    def l_max(self) -> int:
        return self.thetas.size

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.active))

    def frequency_posterior(self, i: int) -> VonMisesPosterior:
        return VonMisesPosterior(float(self.thetas[i]), float(self.kappas[i]))


def clone_state(state: ValseState) -> ValseState:
    return ValseState(
        rows=state.rows.copy(), thetas=state.thetas.copy(), kappas=state.kappas.copy(),
        active=state.active.copy(), beta=state.beta.copy(), C=state.C.copy(),
        rho=state.rho, nu=state.nu, A_hat=state.A_hat.copy(), J=state.J.copy(),
        u=state.u.copy(), theta_window=state.theta_window, var_floor=state.var_floor,
        flags=list(state.flags),
    )


def rebind_rows(state: ValseState, rows) -> ValseState:
    """Re-target the state at a different row set (steering columns rebuilt;
    J and u must be refreshed against the new rows before further updates)."""
    rows = np.asarray(rows, dtype=np.intp)
    new = clone_state(state)
    new.rows = rows
    new.A_hat = np.column_stack(
        [circular_moment(rows, state.thetas[i], state.kappas[i]) for i in range(state.l_max)]
    )
    new.J = np.zeros_like(state.J)
    new.u = np.zeros_like(state.u)
    return new


def _trig_poly(eta, orders, theta):
    """Value and first two derivatives of f(theta) = Re{eta^H a(theta)}."""
    terms = np.conj(eta) * np.exp(1j * orders * theta)
    s0 = terms.sum()
    s1 = (orders * terms).sum()
    s2 = (orders * orders * terms).sum()
    return s0.real, -s1.imag, -s2.real


def _refine_frequency(eta, orders, theta0):
    """Two Newton steps with a midpoint damping stage.

    Returns (theta, kappa) for the best concave point found, or None when the
    refined point is non-concave or worse than the start (the caller keeps the
    previous posterior in that case).
    """
    f0, d1, d2 = _trig_poly(eta, orders, theta0)
    theta, fval, curv = theta0, f0, d2
    if d2 < 0 and np.isfinite(d1):
        mu1 = theta0 - d1 / d2
        mid = 0.5 * (mu1 + theta0)
        _, d1m, d2m = _trig_poly(eta, orders, mid)
        if d2m < 0 and np.isfinite(d1m):
            cand = mid - d1m / d2m
            f2, _, c2 = _trig_poly(eta, orders, cand)
            if f2 >= f0 and c2 < 0:
                theta, fval, curv = cand, f2, c2
    if curv >= 0 or not np.isfinite(curv):
        return None
    kappa = concentration_from_ratio(np.exp(0.5 / curv))
    return float(theta), float(kappa)


def _concentrated_climb(weighted_resid, orders, theta0, max_steps: int = 30):
    """Damped Newton ascent of the concentrated objective |c(theta)|^2 with
    c(theta) = a(theta)^H (W r).

    Maximizing |c|^2 profiles the component amplitude out of the fit, so the
    iteration is free of the amplitude-phase coupling that makes alternating
    (theta, beta) updates converge only linearly.
    """
    theta = float(theta0)

    def moments(th):
        ph = weighted_resid * np.exp(-1j * orders * th)
        return ph.sum(), (-1j * orders * ph).sum(), (-(orders ** 2) * ph).sum()

    c0, c1, c2 = moments(theta)
    val = abs(c0) ** 2
    for _ in range(max_steps):
        grad = 2.0 * np.real(np.conj(c0) * c1)
        curv = 2.0 * np.real(np.conj(c0) * c2) + 2.0 * abs(c1) ** 2
        if curv >= 0 or not np.isfinite(grad) or not np.isfinite(curv):
            break
        step = grad / curv
        accepted = False
        for k in range(6):
            cand = theta - step * (0.5 ** k)
            c0n, c1n, c2n = moments(cand)
            if abs(c0n) ** 2 > val:
                moved = abs(cand - theta)
                theta, val = cand, abs(c0n) ** 2
                c0, c1, c2 = c0n, c1n, c2n
                accepted = True
                break
        if not accepted or moved < 1e-13:
            break
    return theta


def _peel_component(residual, weights, orders, rows, theta_start):
    """Locate and fit one component of the residual for the peeling stage.

    Concentrated Newton ascent pins the frequency, the weighted LS amplitude
    follows, and the concentration comes from the curvature of the
    variational objective f(theta) = Re{eta^H a(theta)} at the peak.
    Returns (theta, kappa, beta, expected_steering_column).
    """
    theta = _concentrated_climb(weights * residual, orders, theta_start)
    tone = np.exp(1j * orders * theta)
    denom = np.real(np.vdot(tone, weights * tone))
    beta = np.vdot(tone, weights * residual) / max(denom, 1e-300)
    eta = 2.0 * weights * residual * np.conj(beta)
    _, _, curv = _trig_poly(eta, orders, theta)
    kappa = concentration_from_ratio(np.exp(0.5 / curv)) if curv < 0 else 0.0
    col = circular_moment(rows, theta, kappa)
    denom = np.real(np.vdot(col, weights * col))
    beta = np.vdot(col, weights * residual) / max(denom, 1e-300)
    return float(theta), float(kappa), beta, col


def _cyclic_polish(state: ValseState, h_pseudo, weights, passes: int = 2) -> None:
    """Gauss-Seidel concentrated refinement of the active components.

    Re-fits each active component against the residual of all others using
    the phase-free concentrated climb, restoring quadratic convergence where
    the alternating variational updates crawl (closely spaced components).
    The weight covariance is left for the next support/weight solve.
    """
    orders = state.rows.astype(float)
    s_idx = state.support
    if s_idx.size == 0:
        return
    fit = state.A_hat[:, s_idx] @ state.beta[s_idx]
    for _ in range(max(passes, 1)):
        for i in s_idx:
            resid_i = h_pseudo - fit + state.A_hat[:, i] * state.beta[i]
            theta, kappa, beta, col = _peel_component(
                resid_i, weights, orders, state.rows, float(state.thetas[i]))
            fit = fit - state.A_hat[:, i] * state.beta[i] + col * beta
            state.thetas[i], state.kappas[i] = theta, kappa
            state.A_hat[:, i] = col
            state.beta[i] = beta


def _grid_for(rows, theta_window):
    """Coarse search grid: 4 points per resolvable lobe of the row aperture."""
    span = int(rows.max() - rows.min() + 1)
    if theta_window is None:
        lo, width, wrap = -np.pi, 2.0 * np.pi, True
    else:
        lo, hi = theta_window
        width, wrap = hi - lo, False
    count = max(64, int(np.ceil(4 * span * width / (2.0 * np.pi))))
    if wrap:
        return lo + width * np.arange(count) / count
    return np.linspace(lo, lo + width, count)


_GRID_CACHE = {}


def _grid_matrix(rows, theta_window):
    key = (rows.tobytes(), theta_window)
    hit = _GRID_CACHE.get(key)
    if hit is None:
        grid = _grid_for(rows, theta_window)
        # conj(a(theta_g)) per grid row, so E @ x computes a(theta)^H x
        hit = (grid, np.exp(-1j * np.outer(grid, rows.astype(float))))
        if len(_GRID_CACHE) > 8:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = hit
    return hit


def init_from_pseudo(h_pseudo, var_pseudo, l_max: int, rows=None,
                     theta_window=None) -> ValseState:
    """Initialize by sequential dominant-component extraction.

    Each component is located at the grid argmax of the noise-weighted
    matched score |a(theta)^H (R / sigma_tilde^2)|^2 of the current residual
    R, refined by the two-step Newton scheme on f(theta) = Re{eta^H a(theta)},
    and peeled off with its weighted least-squares amplitude.  Components are
    then activated greedily on the evidence and the model parameters are
    fitted to the activated set.
    """
    h_pseudo = np.asarray(h_pseudo, dtype=np.complex128)
    var_pseudo = np.asarray(var_pseudo, dtype=float)
    if h_pseudo.size < 2:
        raise InsufficientDataError("need at least two pseudo-measurement rows")
    rows = np.arange(h_pseudo.size, dtype=np.intp) if rows is None else np.asarray(rows, dtype=np.intp)
    orders = rows.astype(float)
    weights = 1.0 / np.maximum(var_pseudo, 1e-300)

    grid, conj_atoms = _grid_matrix(rows, theta_window)
    weight_sum = weights.sum()

    thetas = np.zeros(l_max)
    kappas = np.zeros(l_max)
    peel_beta = np.zeros(l_max, dtype=np.complex128)
    a_hat = np.zeros((rows.size, l_max), dtype=np.complex128)
    residual = h_pseudo.copy()
    for i in range(l_max):
        corr = conj_atoms @ (weights * residual)
        peak = int(np.argmax(np.abs(corr)))
        theta_i, kappa_i, beta_i, col = _peel_component(
            residual, weights, orders, rows, float(grid[peak]))
        thetas[i], kappas[i], peel_beta[i] = theta_i, kappa_i, beta_i
        residual = residual - col * beta_i
        a_hat[:, i] = col

    # neutral activity prior; weight-variance scale from the strongest peels
    strongest = np.sort(np.abs(peel_beta) ** 2)[::-1][: max(1, (l_max + 1) // 2)]
    nu0 = max(float(strongest.mean()), 1e-12 * float(np.mean(np.abs(h_pseudo) ** 2)) + 1e-300)

    state = ValseState(
        rows=rows, thetas=thetas, kappas=kappas,
        active=np.zeros(l_max, dtype=bool),
        beta=np.zeros(l_max, dtype=np.complex128),
        C=np.zeros((l_max, l_max), dtype=np.complex128),
        rho=0.5, nu=nu0, A_hat=a_hat,
        J=np.zeros((l_max, l_max), dtype=np.complex128),
        u=np.zeros(l_max, dtype=np.complex128),
        theta_window=theta_window,
    )
    refresh_linear_stats(state, h_pseudo, var_pseudo)
    update_support_and_weights(state)
    update_model_params(state)
    return state


def refresh_linear_stats(state: ValseState, h_pseudo, var_pseudo) -> None:
    """Recompute J = A^H W A (diagonal forced to sum of weights, the exact
    second moment of unit-modulus steering entries) and u = A^H W h_tilde."""
    h_pseudo = np.asarray(h_pseudo, dtype=np.complex128)
    var_pseudo = np.asarray(var_pseudo, dtype=float)
    weights = 1.0 / np.maximum(var_pseudo, 1e-300)
    J = state.A_hat.conj().T @ (weights[:, None] * state.A_hat)
    np.fill_diagonal(J, weights.sum())
    state.J = J
    state.u = state.A_hat.conj().T @ (weights * h_pseudo)
    finite = var_pseudo[np.isfinite(var_pseudo)]
    scale = float(np.median(finite)) if finite.size else 1.0
    state.var_floor = _POSTERIOR_VAR_FLOOR * scale


def update_frequency(state: ValseState, i: int, h_pseudo, var_pseudo) -> bool:
    """Refine the frequency posterior of active component ``i``.

    Builds eta_i from the residual and weight covariance, runs the damped
    two-step Newton refinement, and on acceptance updates (theta_i, kappa_i)
    and the expected steering column.  Returns False when the local fit is
    non-concave or not improved (previous posterior kept).
    """
    if not state.active[i]:
        raise ValueError(f"component {i} is not active")
    h_pseudo = np.asarray(h_pseudo, dtype=np.complex128)
    var_pseudo = np.asarray(var_pseudo, dtype=float)
    weights = 1.0 / np.maximum(var_pseudo, 1e-300)
    s_idx = state.support
    a_s = state.A_hat[:, s_idx]
    residual = h_pseudo - a_s @ state.beta[s_idx]
    own = state.A_hat[:, i] * state.beta[i]
    cross = a_s @ state.C[s_idx, i] - state.A_hat[:, i] * state.C[i, i]
    eta = 2.0 * weights * ((residual + own) * np.conj(state.beta[i]) - cross)

    refined = _refine_frequency(eta, state.rows.astype(float), float(state.thetas[i]))
    if refined is None:
        return False
    state.thetas[i], state.kappas[i] = refined
    state.A_hat[:, i] = circular_moment(state.rows, state.thetas[i], state.kappas[i])
    return True


def _solve_weight_block(J, u, nu, support, flags):
    """Direct (J_S + I/nu)^{-1} and weight mean, with conditioning fallback."""
    s_idx = np.flatnonzero(support)
    k = s_idx.size
    if k == 0:
        return s_idx, np.zeros((0, 0), dtype=np.complex128), np.zeros(0, dtype=np.complex128)
    m = J[np.ix_(s_idx, s_idx)] + np.eye(k) / nu
    m = 0.5 * (m + m.conj().T)
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        eps = 1e-12 * np.trace(m).real / k
        m = m + eps * np.eye(k)
        flags.append("weight-solve-regularized")
    cov = np.linalg.inv(m)
    cov = 0.5 * (cov + cov.conj().T)
    return s_idx, cov, cov @ u[s_idx]


def update_support_and_weights(state: ValseState) -> None:
    """Greedy single-flip ascent of the support evidence ln Z(s).

    Requires state.J/state.u to be current.  Each round evaluates the score
    change of every activation/deactivation via rank-one updates of
    (J_S + I/nu)^{-1}, applies the largest strictly positive move, and stops
    when none remains.  The weight posterior is then re-solved directly.
    """
    l_max = state.l_max
    nu, rho = state.nu, state.rho
    log_odds = np.log(rho / (1.0 - rho))
    # entry solve keeps greedy deltas consistent with the current J, u
    s_idx, cov, beta = _solve_weight_block(state.J, state.u, nu, state.active, state.flags)
    order = list(s_idx)
    deltas_applied = []

    for _ in range(8 * l_max):
        best_gain, best_k = _SUPPORT_TOL, -1
        active_mask = np.zeros(l_max, dtype=bool)
        active_mask[order] = True
        cache = {}
        for k in range(l_max):
            if active_mask[k]:
                pos = order.index(k)
                ckk = cov[pos, pos].real
                if ckk <= 0 or not np.isfinite(ckk):
                    continue
                gain = -np.log(ckk / nu) - (np.abs(beta[pos]) ** 2) / ckk - log_odds
            else:
                col = state.J[order, k] if order else np.zeros(0, dtype=np.complex128)
                wc = cov @ col
                schur = state.J[k, k].real + 1.0 / nu - np.real(np.vdot(col, wc))
                if schur <= 0 or not np.isfinite(schur):
                    continue
                resid_u = state.u[k] - (state.J[k, order] @ beta if order else 0.0)
                gain = -np.log(schur * nu) + (np.abs(resid_u) ** 2) / schur + log_odds
                cache[k] = (col, wc, schur, resid_u)
            if gain > best_gain:
                best_gain, best_k = gain, k
        if best_k < 0:
            break
        deltas_applied.append(best_gain)
        if active_mask[best_k]:
            pos = order.index(best_k)
            col = cov[:, pos].copy()
            ckk = col[pos].real
            beta = beta - col * (beta[pos] / ckk)
            cov = cov - np.outer(col, col.conj()) / ckk
            keep = [p for p in range(len(order)) if p != pos]
            cov = cov[np.ix_(keep, keep)]
            beta = beta[keep]
            order.pop(pos)
        else:
            col, wc, schur, resid_u = cache[best_k]
            vt = 1.0 / schur
            top = cov + vt * np.outer(wc, wc.conj())
            new_cov = np.empty((len(order) + 1, len(order) + 1), dtype=np.complex128)
            new_cov[:-1, :-1] = top
            new_cov[:-1, -1] = -vt * wc
            new_cov[-1, :-1] = -vt * wc.conj()
            new_cov[-1, -1] = vt
            cov = new_cov
            beta = np.concatenate([beta - vt * resid_u * wc, [vt * resid_u]])
            order.append(best_k)

    new_active = np.zeros(l_max, dtype=bool)
    new_active[order] = True
    state.active = new_active
    s_idx, cov, beta = _solve_weight_block(state.J, state.u, nu, new_active, state.flags)
    state.beta = np.zeros(l_max, dtype=np.complex128)
    state.C = np.zeros((l_max, l_max), dtype=np.complex128)
    if s_idx.size:
        state.beta[s_idx] = beta
        state.C[np.ix_(s_idx, s_idx)] = cov
    state.last_support_gains = deltas_applied


def update_model_params(state: ValseState) -> None:
    """Refit the activity probability and weight-variance hyperparameters."""
    k = state.support_size
    floor = 1.0 / (10.0 * state.l_max)
    state.rho = float(np.clip(k / state.l_max, floor, 1.0 - floor))
    if k:
        s_idx = state.support
        power = float(np.real(np.vdot(state.beta[s_idx], state.beta[s_idx])))
        state.nu = (power + float(np.trace(state.C[np.ix_(s_idx, s_idx)]).real)) / k


def posterior_h(state: ValseState, rows=None) -> GaussianMessage:
    """Moment-matched posterior of the line spectrum on ``rows``.

    Variance per row sums the weight-covariance term diag(A C A^H), the
    frequency-spread weight power term, and the frequency-spread covariance
    term; every term is entrywise nonnegative.
    """
    if rows is None:
        row_idx = state.rows
        a_full = state.A_hat
    else:
        row_idx = np.asarray(rows, dtype=np.intp)
        a_full = None
    s_idx = state.support
    n = row_idx.size
    if s_idx.size == 0:
        return GaussianMessage(np.zeros(n, dtype=np.complex128),
                               np.full(n, state.var_floor), row_idx)
    if a_full is None:
        a = np.column_stack([circular_moment(row_idx, state.thetas[i], state.kappas[i])
                             for i in s_idx])
    else:
        a = a_full[:, s_idx]
    beta = state.beta[s_idx]
    cov = state.C[np.ix_(s_idx, s_idx)]
    mean = a @ beta
    ac = a @ cov
    term_cov = np.einsum("ml,ml->m", ac, a.conj()).real
    abs2 = np.abs(a) ** 2
    beta_power = float(np.real(np.vdot(beta, beta)))
    term_beta = beta_power - abs2 @ (np.abs(beta) ** 2)
    term_trace = float(np.trace(cov).real) - abs2 @ np.diag(cov).real
    var = np.maximum(term_cov + np.maximum(term_beta, 0.0) + np.maximum(term_trace, 0.0), 0.0)
    return GaussianMessage(mean, np.maximum(var, state.var_floor), row_idx)


def extrinsic_to_b(posterior: GaussianMessage, incoming: GaussianMessage,
                   ceiling: float = None) -> GaussianMessage:
    """EP extrinsic: divide the posterior by the incoming message per row.

    Nonpositive precision differences (posterior no sharper than the input)
    yield an uninformative row: variance clamped to the ceiling
    1e8 * median(incoming variance), mean kept at the posterior mean.
    """
    if not np.array_equal(posterior.index_set, incoming.index_set):
        raise ValueError("posterior and incoming messages cover different rows")
    if ceiling is None:
        finite = incoming.var[np.isfinite(incoming.var)]
        base = float(np.median(finite)) if finite.size else float(np.median(posterior.var))
        ceiling = _UNINFORMATIVE_CEILING * max(base, 1e-300)
    in_prec = np.where(np.isfinite(incoming.var), 1.0 / incoming.var, 0.0)
    in_ratio = np.where(np.isfinite(incoming.var), incoming.mean * in_prec, 0.0)
    prec = 1.0 / posterior.var - in_prec
    informative = prec > 1.0 / ceiling
    var = np.where(informative, 1.0 / np.maximum(prec, 1e-300), ceiling)
    mean = np.where(informative,
                    var * (posterior.mean / posterior.var - in_ratio),
                    posterior.mean)
    return GaussianMessage(mean, var, posterior.index_set)


def support_log_score(J, u, nu: float, rho: float, support) -> float:
    """Evidence ln Z(s) up to its constant; reference for the greedy search."""
    support = np.asarray(support, dtype=bool)
    s_idx = np.flatnonzero(support)
    k = s_idx.size
    penalty = k * (np.log(rho / (1.0 - rho)) + np.log(1.0 / nu))
    if k == 0:
        return float(penalty)
    m = np.asarray(J)[np.ix_(s_idx, s_idx)] + np.eye(k) / nu
    m = 0.5 * (m + m.conj().T)
    sign, logdet = np.linalg.slogdet(m)
    us = np.asarray(u)[s_idx]
    quad = np.real(np.vdot(us, np.linalg.solve(m, us)))
    return float(-logdet.real + quad + penalty)


def valse_solve(h_pseudo, var_pseudo, l_max: int, rows=None, theta_window=None,
                max_iters: int = 100, theta_tol: float = 1e-10,
                noise_floor: float = None, var_profile=None):
    """Run the estimator to a support/frequency fixed point.

    Returns (state, iterations_used, learned_noise_var).  One iteration is a
    support/weight update, a model-parameter refit, a frequency sweep over the
    active set, and a J/u refresh, in that order.

    With ``noise_floor`` set, the per-row variances are re-learned from the
    fit residual each sweep (EM step floored at ``noise_floor``), annealing
    from the starting level down to the achievable fit.  This is how the
    pilot-only stage bootstraps its own noise estimate; ``var_profile``
    carries the relative per-row variance shape (default all-ones).
    """
    h_pseudo = np.asarray(h_pseudo, dtype=np.complex128)
    var_pseudo = np.asarray(var_pseudo, dtype=float)
    learn = noise_floor is not None
    profile = np.ones(h_pseudo.size) if var_profile is None else np.asarray(var_profile, dtype=float)
    state = init_from_pseudo(h_pseudo, var_pseudo, l_max, rows=rows, theta_window=theta_window)
    orders = state.rows.astype(float)
    grid, conj_atoms = _grid_matrix(state.rows, theta_window)
    iters = 0
    sigma2 = None
    for iters in range(1, max_iters + 1):
        prev_active = state.active.copy()
        prev_thetas = state.thetas.copy()
        update_support_and_weights(state)
        update_model_params(state)
        weights = 1.0 / np.maximum(var_pseudo, 1e-300)
        _cyclic_polish(state, h_pseudo, weights, passes=1)
        inactive = np.flatnonzero(~state.active)
        if inactive.size:
            # reseed one dormant slot on the dominant residual peak so the
            # greedy support step can escape merged-component fits
            s_idx = state.support
            resid = h_pseudo - state.A_hat[:, s_idx] @ state.beta[s_idx]
            corr = conj_atoms @ (weights * resid)
            k = int(inactive[0])
            theta_k, kappa_k, _, col = _peel_component(
                resid, weights, orders, state.rows, float(grid[int(np.argmax(np.abs(corr)))]))
            state.thetas[k], state.kappas[k] = theta_k, kappa_k
            state.A_hat[:, k] = col
        if learn:
            post = posterior_h(state)
            resid = h_pseudo - post.mean
            prev_sigma2 = sigma2
            em = (float(np.real(np.vdot(resid, resid))) + float(post.var.sum())) / h_pseudo.size
            # clamp the decrease to 2x per sweep: a slow anneal keeps the
            # support minimal at each working noise level instead of locking
            # in an overfit when the residual collapses early
            sigma2 = max(em, noise_floor)
            if prev_sigma2 is not None:
                sigma2 = max(sigma2, 0.5 * prev_sigma2) if sigma2 < prev_sigma2 else sigma2
            var_pseudo = sigma2 * profile
            noise_stable = prev_sigma2 is not None and abs(sigma2 - prev_sigma2) <= 1e-6 * sigma2
        else:
            noise_stable = True
        refresh_linear_stats(state, h_pseudo, var_pseudo)
        same_support = np.array_equal(prev_active, state.active)
        moved = np.max(np.abs(state.thetas - prev_thetas)[state.active], initial=0.0)
        aperture = float(state.rows.max() - state.rows.min() + 1)
        settled = moved < theta_tol or moved * aperture < 3e-4
        if same_support and settled and noise_stable:
            break
    return state, iters, sigma2
