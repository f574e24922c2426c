"""Rate-R LDPC coding: progressive-edge-growth construction, systematic
encoding via GF(2) row reduction, interleaving and log-domain sum-product
decoding, plus the soft bridges between symbol PMFs and coded-bit LLRs.

LLR convention: positive means bit 0 is more likely,
LLR = ln p(b=0) - ln p(b=1).
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .ofdm import SymbolAlphabet

__all__ = [
    "LDPCCode",
    "Interleaver",
    "BitBelief",
    "peg_construct",
    "encode",
    "spa_decode",
    "symbol_prior_to_bit_llr",
    "bit_posteriors_to_symbol_moments",
    "save_parity_check",
    "load_parity_check",
    "default_code",
    "random_interleaver",
]

LLR_CLIP = 40.0
DEFAULT_MAX_ITERS = 50
DEFAULT_THRESHOLD = 1e-3
_TANH_FLOOR = 1e-300
_ATANH_CEIL = 1.0 - 1e-15


def _gf2_rref(h):
    """Reduced row echelon form over GF(2); returns (rref, pivot_columns)."""
    m = h.copy().astype(bool)
    rows, cols = m.shape
    pivots = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        hot = np.flatnonzero(m[r:, c]) + r
        if hot.size == 0:
            continue
        if hot[0] != r:
            m[[r, hot[0]]] = m[[hot[0], r]]
        others = np.flatnonzero(m[:, c])
        others = others[others != r]
        m[others] ^= m[r]
        pivots.append(c)
        r += 1
    return m, np.asarray(pivots, dtype=np.intp), r


class LDPCCode:
    """Binary LDPC code given by check-node variable lists (one per check).

    The systematic encoder places information bits on the non-pivot columns of
    the row-reduced parity-check matrix and solves the pivots, so any produced
    word satisfies the original checks.
    """

    def __init__(self, check_vars, block_length: int):
        self.block_length = int(block_length)
        self.check_vars = [np.asarray(c, dtype=np.intp) for c in check_vars]
        self.num_checks = len(self.check_vars)

        self.edge_var = np.concatenate(self.check_vars)
        self.edge_chk = np.concatenate(
            [np.full(c.size, m, dtype=np.intp) for m, c in enumerate(self.check_vars)]
        )
        self.num_edges = self.edge_var.size

        h = np.zeros((self.num_checks, self.block_length), dtype=bool)
        h[self.edge_chk, self.edge_var] = True
        rref, pivots, rank = _gf2_rref(h)
        if rank != self.num_checks:
            raise ValueError(f"parity-check matrix is rank deficient ({rank}/{self.num_checks})")
        self.pivot_cols = pivots
        self.info_cols = np.setdiff1d(np.arange(self.block_length, dtype=np.intp), pivots)
        self._parity_map = rref[:, self.info_cols].astype(np.uint8)

    @property
    def num_info(self) -> int:
        return self.info_cols.size

    @property
    def rate(self) -> float:
        return self.num_info / self.block_length

    def encode(self, info_bits) -> np.ndarray:
        info_bits = np.asarray(info_bits, dtype=np.uint8).ravel()
        if info_bits.size != self.num_info:
            raise ValueError(f"expected {self.num_info} information bits, got {info_bits.size}")
        word = np.zeros(self.block_length, dtype=np.uint8)
        word[self.info_cols] = info_bits
        word[self.pivot_cols] = (self._parity_map @ info_bits) & 1
        return word

    def syndrome(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.uint8)
        return np.bincount(self.edge_chk, weights=bits[self.edge_var],
                           minlength=self.num_checks).astype(np.intp) & 1

    def extract_info(self, bits) -> np.ndarray:
        return np.asarray(bits, dtype=np.uint8)[self.info_cols]


@dataclass(frozen=True)
class Interleaver:
    """Bijection between code order and transmit order of the coded bits."""

    perm: np.ndarray

    def interleave(self, x) -> np.ndarray:
        return np.asarray(x)[self.perm]

    def deinterleave(self, x) -> np.ndarray:
        out = np.empty_like(np.asarray(x))
        out[self.perm] = np.asarray(x)
        return out


def random_interleaver(length: int, seed: int) -> Interleaver:
    return Interleaver(perm=np.random.default_rng(seed).permutation(length))


@dataclass
class BitBelief:
    """Decoder output: posterior LLRs (clipped), hard decisions and status."""

    posterior_llr: np.ndarray
    hard_bits: np.ndarray
    info_bits: np.ndarray
    iterations: int
    syndrome_ok: bool


def peg_construct(block_length: int, num_checks: int, var_degree: int = 3,
                  seed: int = 1):
    """Progressive edge growth for a regular Tanner graph.

    Each variable connects its edges to the check that is farthest in the
    current graph (unreached checks first), lowest fill as tie-break, seeded
    random choice among remaining ties.  Check degrees are capped at the
    regular value so the result is exactly (var_degree, dc)-regular when
    block_length * var_degree is a multiple of num_checks.
    """
    total_edges = block_length * var_degree
    if total_edges % num_checks:
        raise ValueError("degree constraints do not tile: n*dv must divide by m")
    check_cap = total_edges // num_checks
    rng = np.random.default_rng(seed)
    var_adj = [[] for _ in range(block_length)]
    chk_adj = [[] for _ in range(num_checks)]
    chk_degree = np.zeros(num_checks, dtype=np.intp)

    for v in range(block_length):
        for _ in range(var_degree):
            open_checks = chk_degree < check_cap
            if not var_adj[v]:
                candidates = np.flatnonzero(open_checks)
            else:
                # BFS over the bipartite graph from v; unreached checks win
                reached = np.full(num_checks, -1, dtype=np.intp)
                seen_var = np.zeros(block_length, dtype=bool)
                seen_var[v] = True
                frontier = [v]
                depth = 0
                while frontier:
                    next_checks = []
                    for vv in frontier:
                        for c in var_adj[vv]:
                            if reached[c] < 0:
                                reached[c] = depth
                                next_checks.append(c)
                    frontier = []
                    for c in next_checks:
                        for vv in chk_adj[c]:
                            if not seen_var[vv]:
                                seen_var[vv] = True
                                frontier.append(vv)
                    depth += 1
                unreached = np.flatnonzero((reached < 0) & open_checks)
                if unreached.size:
                    candidates = unreached
                else:
                    dist = np.where(open_checks, reached, -1)
                    candidates = np.flatnonzero(dist == dist.max())
            degrees = chk_degree[candidates]
            candidates = candidates[degrees == degrees.min()]
            pick = int(candidates[rng.integers(candidates.size)])
            var_adj[v].append(pick)
            chk_adj[pick].append(v)
            chk_degree[pick] += 1
    return [sorted(c) for c in chk_adj]


def encode(info_bits, code: LDPCCode, interleaver: Interleaver) -> np.ndarray:
    """Systematic encode followed by interleaving to transmit order."""
    return interleaver.interleave(code.encode(info_bits))


def spa_decode(llrs, code: LDPCCode, max_iters: int = DEFAULT_MAX_ITERS,
               threshold: float = DEFAULT_THRESHOLD, clip: float = LLR_CLIP) -> BitBelief:
    """Log-domain sum-product decoding on the parity-check graph.

    Stops on a zero syndrome, when the mean absolute posterior-LLR change
    falls below ``threshold``, or at the iteration cap; non-convergence still
    returns the soft posteriors.
    """
    llrs = np.clip(np.asarray(llrs, dtype=float), -clip, clip)
    if llrs.size != code.block_length:
        raise ValueError("LLR vector length does not match the code")
    ev, ec = code.edge_var, code.edge_chk
    m_vc = llrs[ev]
    m_cv = np.zeros(code.num_edges)
    posterior = llrs.copy()
    hard = (posterior < 0).astype(np.uint8)
    syndrome_ok = False
    iterations = 0

    for it in range(1, max_iters + 1):
        iterations = it
        t = np.tanh(0.5 * m_vc)
        mag = np.maximum(np.abs(t), _TANH_FLOOR)
        neg = t < 0
        log_sum = np.bincount(ec, weights=np.log(mag), minlength=code.num_checks)
        neg_sum = np.bincount(ec, weights=neg, minlength=code.num_checks).astype(np.intp)
        excl_mag = np.exp(np.minimum(log_sum[ec] - np.log(mag), 0.0))
        excl_sign = 1.0 - 2.0 * ((neg_sum[ec] - neg) & 1)
        m_cv = 2.0 * np.arctanh(np.clip(excl_sign * excl_mag, -_ATANH_CEIL, _ATANH_CEIL))
        m_cv = np.clip(m_cv, -clip, clip)

        prev = posterior
        posterior = np.clip(llrs + np.bincount(ev, weights=m_cv, minlength=code.block_length),
                            -clip, clip)
        hard = (posterior < 0).astype(np.uint8)
        if not code.syndrome(hard).any():
            syndrome_ok = True
            break
        if float(np.mean(np.abs(posterior - prev))) < threshold:
            break
        m_vc = np.clip(posterior[ev] - m_cv, -clip, clip)

    return BitBelief(
        posterior_llr=posterior,
        hard_bits=hard,
        info_bits=code.extract_info(hard),
        iterations=iterations,
        syndrome_ok=syndrome_ok,
    )


def symbol_prior_to_bit_llr(pmf, alphabet: SymbolAlphabet, clip: float = LLR_CLIP) -> np.ndarray:
    """Marginalize symbol PMFs into per-bit LLRs (transmit order, symbol-major)."""
    pmf = np.asarray(pmf, dtype=float)
    zero_mass = pmf @ (alphabet.labels == 0)
    one_mass = pmf @ (alphabet.labels == 1)
    llr = np.log(np.maximum(zero_mass, 1e-300)) - np.log(np.maximum(one_mass, 1e-300))
    return np.clip(llr, -clip, clip).ravel()


def bit_posteriors_to_symbol_moments(llrs, alphabet: SymbolAlphabet):
    """Posterior symbol mean/variance from per-bit LLRs, assuming the bits of
    a symbol are independent (product of marginals)."""
    q = alphabet.bits_per_symbol
    llrs = np.asarray(llrs, dtype=float).reshape(-1, q)
    log_p1 = -np.logaddexp(0.0, llrs)
    log_p0 = -np.logaddexp(0.0, -llrs)
    labels = alphabet.labels.astype(float)
    log_pmf = log_p0 @ (1.0 - labels).T + log_p1 @ labels.T
    log_pmf = log_pmf - log_pmf.max(axis=1, keepdims=True)
    pmf = np.exp(log_pmf)
    pmf /= pmf.sum(axis=1, keepdims=True)
    mean = pmf @ alphabet.points
    second = pmf @ (np.abs(alphabet.points) ** 2)
    var = np.maximum(second - np.abs(mean) ** 2, 0.0)
    return mean, var, pmf


def save_parity_check(code: LDPCCode, path) -> None:
    """Plain-text sparse fixture: header "Nc M", one line of 0-based variable
    indices per check."""
    lines = [f"{code.block_length} {code.num_checks}"]
    lines += [" ".join(str(v) for v in check) for check in code.check_vars]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_parity_check(source) -> LDPCCode:
    """Load a fixture written by :func:`save_parity_check` (path or text)."""
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, "r", encoding="ascii") as fh:
            text = fh.read()
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    n, m = (int(tok) for tok in lines[0].split())
    if len(lines) - 1 != m:
        raise ValueError(f"fixture declares {m} checks but has {len(lines) - 1}")
    checks = [np.array([int(tok) for tok in ln.split()], dtype=np.intp) for ln in lines[1:]]
    for c in checks:
        if c.size and (c.min() < 0 or c.max() >= n):
            raise ValueError("variable index out of range in fixture")
    return LDPCCode(checks, n)


def default_code(block_length: int) -> LDPCCode:
    """Shipped rate-1/2 (3,6)-regular code for the given block length."""
    name = f"ldpc_{block_length}_{block_length // 2}.txt"
    ref = resources.files("jccdvalse.fixtures").joinpath(name)
    with ref.open("r", encoding="ascii") as fh:
        return load_parity_check(fh)
