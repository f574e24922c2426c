"""CP-OFDM frame model: subcarrier layout, symbol alphabets, phase-ramp vectors.

Subcarriers are numbered 1..N in documentation and config files and stored
0-based internally.  All phase ramps use the 0-based index, i.e. entry k of
``steering_vector(theta, n)`` equals exp(j*k*theta), so the 0-based subcarrier
index doubles as the circular-moment order of that entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidLayoutError",
    "OFDMConfig",
    "LayoutSpec",
    "SubcarrierPlan",
    "build_subcarrier_plan",
    "SymbolAlphabet",
    "qpsk_alphabet",
    "qam16_alphabet",
    "alphabet_by_name",
    "map_bits_to_symbols",
    "pilot_sequence",
    "FrameSymbols",
    "assemble_frame",
    "steering_vector",
    "cfo_vector",
    "unitary_dft",
    "unitary_idft",
]


class InvalidLayoutError(ValueError):
    """Subcarrier layout is not a valid partition of the band."""


@dataclass(frozen=True)
class OFDMConfig:
    """CP-OFDM waveform parameters.

    The subcarrier spacing is 1/symbol_duration and must tile the bandwidth
    exactly: num_subcarriers / symbol_duration == bandwidth (1e-9 relative).
    """

    num_subcarriers: int
    bandwidth: float
    carrier_freq: float
    symbol_duration: float
    cp_duration: float

    def __post_init__(self):
        if self.num_subcarriers <= 0:
            raise ValueError("num_subcarriers must be positive")
        if self.symbol_duration <= 0:
            raise ValueError("symbol_duration must be positive")
        if self.cp_duration < 0:
            raise ValueError("cp_duration must be nonnegative")
        if abs(self.num_subcarriers / self.symbol_duration - self.bandwidth) > 1e-9 * abs(self.bandwidth):
            raise ValueError("num_subcarriers/symbol_duration must equal bandwidth")

    @classmethod
    def from_bandwidth(cls, num_subcarriers, bandwidth, carrier_freq, cp_duration):
        """Build with the symbol duration derived as N/B so timing is exact."""
        return cls(
            num_subcarriers=num_subcarriers,
            bandwidth=bandwidth,
            carrier_freq=carrier_freq,
            symbol_duration=num_subcarriers / bandwidth,
            cp_duration=cp_duration,
        )

    @property
    def subcarrier_spacing(self) -> float:
        return 1.0 / self.symbol_duration

    @property
    def lowest_subcarrier_freq(self) -> float:
        """Absolute frequency of the first stored subcarrier (offset -N/2)."""
        return self.carrier_freq - (self.num_subcarriers / 2) * self.subcarrier_spacing

    @property
    def max_delay_phase(self) -> float:
        """Phase-per-subcarrier bound for delays inside the CP: 2*pi*T_cp/T."""
        return 2.0 * np.pi * self.subcarrier_spacing * self.cp_duration


@dataclass(frozen=True)
class LayoutSpec:
    """Serializable description of the pilot/null/data split.

    kind "uniform": evenly strided pilots inside the band, nulls split between
    the two band edges.  kind "explicit": 1-based pilot and null index lists;
    the data set is the complement.
    """

    kind: str
    num_pilots: int = 0
    num_nulls: int = 0
    pilots: tuple = ()
    nulls: tuple = ()


@dataclass(frozen=True)
class SubcarrierPlan:
    """Partition of {1..N} into pilot/null/data sets, stored 0-based ascending."""

    num_subcarriers: int
    pilot: np.ndarray
    null: np.ndarray
    data: np.ndarray
    merged: np.ndarray = field(default=None)  # pilot-plus-data rows, ascending

    def __post_init__(self):
        if self.merged is None:
            object.__setattr__(self, "merged", np.union1d(self.pilot, self.data))

    @property
    def num_pilots(self) -> int:
        return self.pilot.size

    @property
    def num_nulls(self) -> int:
        return self.null.size

    @property
    def num_data(self) -> int:
        return self.data.size


def _as_sorted_indices(values, n, what):
    idx = np.asarray(sorted(values), dtype=np.intp)
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise InvalidLayoutError(f"{what} index out of range 1..{n}")
    if np.unique(idx).size != idx.size:
        raise InvalidLayoutError(f"duplicate {what} index")
    return idx


def build_subcarrier_plan(config, layout: LayoutSpec) -> SubcarrierPlan:
    """Partition the band according to ``layout``.

    ``config`` may be an OFDMConfig or a plain subcarrier count.  The uniform
    layout is deterministic given the counts: nulls split between the band
    edges (extra one at the low edge), pilots strided through the interior at
    p_k = lo + ceil(k*W/N_P), data filling the rest.
    """
    n = config.num_subcarriers if isinstance(config, OFDMConfig) else int(config)
    if layout.kind == "uniform":
        n_pilot, n_null = int(layout.num_pilots), int(layout.num_nulls)
        if n_pilot < 0 or n_null < 0 or n_pilot + n_null > n:
            raise InvalidLayoutError("pilot/null counts exceed the band")
        lo = (n_null + 1) // 2
        hi = n_null - lo
        null = np.concatenate([np.arange(lo), np.arange(n - hi, n)]).astype(np.intp)
        interior = np.arange(lo, n - hi, dtype=np.intp)
        width = interior.size
        if n_pilot > width:
            raise InvalidLayoutError("more pilots than interior subcarriers")
        if n_pilot:
            k = np.arange(1, n_pilot + 1)
            pilot = interior[np.ceil(k * width / n_pilot).astype(np.intp) - 1]
        else:
            pilot = np.empty(0, dtype=np.intp)
        data = np.setdiff1d(interior, pilot)
    elif layout.kind == "explicit":
        # explicit lists are 1-based in configs/documentation
        pilot = _as_sorted_indices([p - 1 for p in layout.pilots], n, "pilot")
        null = _as_sorted_indices([q - 1 for q in layout.nulls], n, "null")
        if np.intersect1d(pilot, null).size:
            raise InvalidLayoutError("pilot and null sets overlap")
        data = np.setdiff1d(np.arange(n, dtype=np.intp), np.union1d(pilot, null))
    else:
        raise InvalidLayoutError(f"unknown layout kind {layout.kind!r}")
    return SubcarrierPlan(num_subcarriers=n, pilot=pilot, null=null, data=data)


@dataclass(frozen=True)
class SymbolAlphabet:
    """Unit-average-power constellation with a Gray bit labeling.

    ``labels[k]`` is the bit tuple of ``points[k]``; ``code_to_index`` maps the
    packed bit code (MSB first) to the point index.
    """

    name: str
    points: np.ndarray
    labels: np.ndarray
    code_to_index: np.ndarray

    @property
    def bits_per_symbol(self) -> int:
        return self.labels.shape[1]

    @property
    def size(self) -> int:
        return self.points.size

    def map_bits(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=np.uint8).ravel()
        q = self.bits_per_symbol
        if bits.size % q:
            raise ValueError(f"bit count {bits.size} not divisible by {q}")
        weights = 1 << np.arange(q - 1, -1, -1)
        codes = bits.reshape(-1, q) @ weights
        return self.points[self.code_to_index[codes]]

    def demap_hard(self, symbols) -> np.ndarray:
        symbols = np.asarray(symbols, dtype=np.complex128).ravel()
        nearest = np.argmin(np.abs(symbols[:, None] - self.points[None, :]), axis=1)
        return self.labels[nearest].ravel()


def _make_alphabet(name, labels, point_of_label):
    labels = np.array(labels, dtype=np.uint8)
    points = np.array([point_of_label(lab) for lab in labels], dtype=np.complex128)
    q = labels.shape[1]
    weights = 1 << np.arange(q - 1, -1, -1)
    codes = labels @ weights
    code_to_index = np.empty(1 << q, dtype=np.intp)
    code_to_index[codes] = np.arange(labels.shape[0])
    return SymbolAlphabet(name=name, points=points, labels=labels, code_to_index=code_to_index)


def qpsk_alphabet() -> SymbolAlphabet:
    """QPSK with Gray labels 00,01,11,10 walking the circle from (1+j)/sqrt(2)."""
    labels = [(a, b) for a in (0, 1) for b in (0, 1)]
    return _make_alphabet(
        "qpsk", labels,
        lambda lab: ((1 - 2 * int(lab[1])) + 1j * (1 - 2 * int(lab[0]))) / np.sqrt(2.0),
    )


_GRAY2 = {(0, 0): -3.0, (0, 1): -1.0, (1, 1): 1.0, (1, 0): 3.0}


def qam16_alphabet() -> SymbolAlphabet:
    """16-QAM, per-axis Gray code on {+-1,+-3}/sqrt(10); bits (b0 b1 | b2 b3) -> (I | Q)."""
    labels = [(a, b, c, d) for a in (0, 1) for b in (0, 1) for c in (0, 1) for d in (0, 1)]
    return _make_alphabet(
        "16qam", labels,
        lambda lab: (_GRAY2[(lab[0], lab[1])] + 1j * _GRAY2[(lab[2], lab[3])]) / np.sqrt(10.0),
    )


def alphabet_by_name(name: str) -> SymbolAlphabet:
    try:
        return {"qpsk": qpsk_alphabet, "16qam": qam16_alphabet}[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown modulation {name!r}") from None


def map_bits_to_symbols(bits, alphabet: SymbolAlphabet) -> np.ndarray:
    return alphabet.map_bits(bits)


def pilot_sequence(num_pilots: int, seed: int) -> np.ndarray:
    """Deterministic unit-power QPSK pilot values from a seeded generator."""
    rng = np.random.default_rng(seed)
    points = qpsk_alphabet().points
    return points[rng.integers(0, points.size, size=num_pilots)]


@dataclass(frozen=True)
class FrameSymbols:
    """Length-N symbol vector: pilots at P, zeros at the nulls, data at D."""

    d: np.ndarray


def assemble_frame(plan: SubcarrierPlan, pilot_values, data_symbols) -> FrameSymbols:
    pilot_values = np.asarray(pilot_values, dtype=np.complex128)
    data_symbols = np.asarray(data_symbols, dtype=np.complex128)
    if pilot_values.size != plan.num_pilots or data_symbols.size != plan.num_data:
        raise ValueError("pilot/data vector lengths do not match the plan")
    d = np.zeros(plan.num_subcarriers, dtype=np.complex128)
    d[plan.pilot] = pilot_values
    d[plan.data] = data_symbols
    return FrameSymbols(d=d)


def steering_vector(theta: float, n: int) -> np.ndarray:
    """Unit-modulus phase ramp [1, e^{j theta}, ..., e^{j (n-1) theta}]."""
    return np.exp(1j * theta * np.arange(n))


def cfo_vector(omega: float, n: int) -> np.ndarray:
    """Per-sample rotation of a residual carrier frequency offset; same form
    as ``steering_vector`` but applied in the time domain."""
    return np.exp(1j * omega * np.arange(n))


def unitary_dft(x) -> np.ndarray:
    """Unitary DFT: entry (m,n) of the matrix is exp(-j2pi(n-1)(m-1)/N)/sqrt(N)."""
    x = np.asarray(x)
    return np.fft.fft(x, axis=-1) / np.sqrt(x.shape[-1])


def unitary_idft(x) -> np.ndarray:
    """Inverse (adjoint) of ``unitary_dft``."""
    x = np.asarray(x)
    return np.fft.ifft(x, axis=-1) * np.sqrt(x.shape[-1])
