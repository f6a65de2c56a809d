"""Dense state-vector register with in-place numba kernels.

Bit ordering: qubit 0 is the least-significant bit of the amplitude index.
For a 4x4 gate applied to ``targets = (a, b)``, the matrix row index is
``2*bit_a + bit_b``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "StateVector",
    "PauliFrame",
    "MeasurementRecord",
    "apply_unitary",
    "apply_diagonal_phases",
    "apply_pauli",
    "measure_z",
    "measure_block",
    "fidelity_to",
    "frame_update",
    "expectation_pauli",
    "save_state",
    "load_state",
]


# ----------------------------------------------------------------------------
# kernels


@numba.njit(cache=True, nogil=True, fastmath=True)
def _k_apply_1q(psi, q, u00, u01, u10, u11):
    bit = 1 << q
    for hi in range(0, psi.shape[0], 2 * bit):
        for i0 in range(hi, hi + bit):
            i1 = i0 + bit
            a = psi[i0]
            b = psi[i1]
            psi[i0] = u00 * a + u01 * b
            psi[i1] = u10 * a + u11 * b


@numba.njit(cache=True, nogil=True, fastmath=True)
def _k_apply_2q(psi, qa, qb, u):
    ba = 1 << qa
    bb = 1 << qb
    lo_bit = min(ba, bb)
    hi_bit = max(ba, bb)
    n = psi.shape[0]
    for top in range(0, n, 2 * hi_bit):
        for mid in range(top, top + hi_bit, 2 * lo_bit):
            for i0 in range(mid, mid + lo_bit):
                i1 = i0 | bb
                i2 = i0 | ba
                i3 = i0 | ba | bb
                a0 = psi[i0]
                a1 = psi[i1]
                a2 = psi[i2]
                a3 = psi[i3]
                psi[i0] = u[0, 0] * a0 + u[0, 1] * a1 + u[0, 2] * a2 + u[0, 3] * a3
                psi[i1] = u[1, 0] * a0 + u[1, 1] * a1 + u[1, 2] * a2 + u[1, 3] * a3
                psi[i2] = u[2, 0] * a0 + u[2, 1] * a1 + u[2, 2] * a2 + u[2, 3] * a3
                psi[i3] = u[3, 0] * a0 + u[3, 1] * a1 + u[3, 2] * a2 + u[3, 3] * a3


@numba.njit(cache=True, nogil=True, fastmath=True)
def _k_apply_split_phase(psi, low_bits, tab_lo, tab_hi):
    nlo = 1 << low_bits
    for h in range(tab_hi.shape[0]):
        f = tab_hi[h]
        off = h * nlo
        for j in range(nlo):
            psi[off + j] *= tab_lo[j] * f


@numba.njit(cache=True, nogil=True, fastmath=True)
def _k_prob_one(psi, q):
    bit = 1 << q
    p = 0.0
    for i in range(psi.shape[0]):
        if i & bit:
            v = psi[i]
            p += v.real * v.real + v.imag * v.imag
    return p


@numba.njit(cache=True, nogil=True, fastmath=True)
def _k_collapse(psi, q, outcome, scale):
    bit = 1 << q
    want = bit if outcome else 0
    for i in range(psi.shape[0]):
        if (i & bit) == want:
            psi[i] *= scale
        else:
            psi[i] = 0.0


def _phase_table(pairs: np.ndarray) -> np.ndarray:
    """Product table over ``k`` qubits from per-qubit ``(p0, p1)`` factors."""
    tab = np.ones(1, dtype=complex)
    for p0, p1 in pairs:
        tab = np.concatenate([tab * p0, tab * p1])
    return tab


# ----------------------------------------------------------------------------
# types


class StateVector:
    """``2**n`` complex amplitudes of an ``n``-qubit register."""

    __slots__ = ("n", "amplitudes")

    def __init__(self, n: int, amplitudes: np.ndarray | None = None):
        if n < 1 or n > 24:
            raise ValueError("qubit count must be in [1, 24]")
        self.n = n
        if amplitudes is None:
            amplitudes = np.zeros(1 << n, dtype=complex)
            amplitudes[0] = 1.0
        amplitudes = np.ascontiguousarray(amplitudes, dtype=complex)
        if amplitudes.shape != (1 << n,):
            raise ValueError("amplitude count must be 2**n")
        self.amplitudes = amplitudes

    @classmethod
    def basis(cls, n: int, index: int = 0) -> "StateVector":
        amp = np.zeros(1 << n, dtype=complex)
        amp[index] = 1.0
        return cls(n, amp)

    @classmethod
    def product(cls, *factors) -> "StateVector":
        """Tensor product; ``factors[0]`` holds the lowest qubits."""
        amp = np.ones(1, dtype=complex)
        n = 0
        for f in factors:
            f_amp = f.amplitudes if isinstance(f, StateVector) else np.asarray(f, dtype=complex)
            amp = np.kron(f_amp, amp)
            n += int(round(np.log2(len(f_amp))))
        return cls(n, amp)

    def copy(self) -> "StateVector":
        return StateVector(self.n, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class PauliFrame:
    """Deferred Pauli correction ``X^x Z^z`` stored as bit masks."""

    n: int
    x_mask: int = 0
    z_mask: int = 0

    def __post_init__(self):
        full = (1 << self.n) - 1
        if self.x_mask & ~full or self.z_mask & ~full:
            raise ValueError("frame masks exceed the register size")

    def compose(self, x_mask: int = 0, z_mask: int = 0) -> "PauliFrame":
        return PauliFrame(self.n, self.x_mask ^ x_mask, self.z_mask ^ z_mask)

    @property
    def is_identity(self) -> bool:
        return self.x_mask == 0 and self.z_mask == 0


@dataclass(frozen=True)
class MeasurementRecord:
    qubit: int
    outcome: int
    time: float = 0.0

    def __post_init__(self):
        if self.outcome not in (0, 1):
            raise ValueError("outcome must be 0 or 1")


# ----------------------------------------------------------------------------
# operations


def _check_targets(state: StateVector, targets) -> tuple:
    targets = tuple(int(t) for t in np.atleast_1d(targets))
    if len(set(targets)) != len(targets):
        raise ValueError("targets must be distinct")
    for t in targets:
        if not 0 <= t < state.n:
            raise IndexError(f"qubit {t} out of range for {state.n} qubits")
    return targets


def apply_unitary(state: StateVector, u, targets) -> StateVector:
    """Apply a one- or two-qubit matrix in place and return the state."""
    targets = _check_targets(state, targets)
    u = np.ascontiguousarray(u, dtype=complex)
    if u.shape != (1 << len(targets),) * 2 or len(targets) > 2:
        raise ValueError("matrix dimension does not match the target count")
    if len(targets) == 1:
        _k_apply_1q(state.amplitudes, targets[0], u[0, 0], u[0, 1], u[1, 0], u[1, 1])
    else:
        _k_apply_2q(state.amplitudes, targets[0], targets[1], u)
    return state


def apply_diagonal_phases(state: StateVector, phases: np.ndarray) -> StateVector:
    """Multiply by ``prod_q diag(phases[q, 0], phases[q, 1])`` in one pass.

    ``phases`` has shape ``(n, 2)``; use ``(1, 1)`` rows for untouched qubits.
    """
    phases = np.asarray(phases, dtype=complex)
    if phases.shape != (state.n, 2):
        raise ValueError("phases must have shape (n, 2)")
    low = state.n // 2
    _k_apply_split_phase(state.amplitudes, low, _phase_table(phases[:low]),
                         _phase_table(phases[low:]))
    return state


_PAR_CACHE: dict = {}


def _parity(n: int) -> np.ndarray:
    """popcount parity of every index below ``2**n``."""
    if n not in _PAR_CACHE:
        par = np.zeros(1, dtype=np.int8)
        for _ in range(n):
            par = np.concatenate([par, par ^ 1])
        _PAR_CACHE[n] = par
    return _PAR_CACHE[n]


def apply_pauli(state: StateVector, x_mask: int, z_mask: int) -> StateVector:
    """Apply ``X^x Z^z`` (Z first), exact up to the sign convention."""
    idx = np.arange(1 << state.n)
    amp = state.amplitudes
    if z_mask:
        amp = amp * (1 - 2 * _parity(state.n)[idx & z_mask])
    if x_mask:
        amp = amp[idx ^ x_mask]
    state.amplitudes = np.ascontiguousarray(amp)
    return state


def expectation_pauli(state: StateVector, x_mask: int, z_mask: int) -> float:
    """``<psi| P |psi>`` for the Hermitian Pauli with the given masks."""
    y_count = bin(x_mask & z_mask).count("1")
    other = apply_pauli(state.copy(), x_mask, z_mask)
    val = np.vdot(state.amplitudes, other.amplitudes) * (1j) ** y_count
    return float(val.real)


def measure_z(state: StateVector, qubit: int, seed) -> tuple[int, StateVector]:
    """Projective Z measurement by the Born rule; collapses in place."""
    (qubit,) = _check_targets(state, [qubit])
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p1 = _k_prob_one(state.amplitudes, qubit)
    p1 = min(max(p1, 0.0), 1.0)
    outcome = int(rng.random() < p1)
    p = p1 if outcome else 1.0 - p1
    if p <= 1e-300:
        raise FloatingPointError("zero-probability branch selected")
    _k_collapse(state.amplitudes, qubit, outcome, 1.0 / np.sqrt(p))
    return outcome, state


def measure_block(state: StateVector, low_bits: int, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Measure every qubit ``>= low_bits`` at once.

    Samples the joint outcome of the high qubits (identical in law to
    measuring them one by one) and returns it with the normalised
    conditional state of the low qubits, which is all that survives.
    """
    amp = state.amplitudes.reshape(-1, 1 << low_bits)
    probs = np.einsum("ij,ij->i", amp.real, amp.real) + np.einsum("ij,ij->i", amp.imag, amp.imag)
    probs /= probs.sum()
    m = int(np.searchsorted(np.cumsum(probs), rng.random() * 1.0, side="right"))
    m = min(m, len(probs) - 1)
    if probs[m] <= 1e-300:
        raise FloatingPointError("zero-probability branch selected")
    low = amp[m] / np.sqrt(probs[m])
    state.amplitudes[:] = 0.0
    state.amplitudes.reshape(-1, 1 << low_bits)[m] = low
    return m, low


def fidelity_to(state: StateVector, reference: StateVector) -> float:
    """``|<reference|state>|**2``."""
    if state.n != reference.n:
        raise ValueError("qubit count mismatch")
    return float(abs(np.vdot(reference.amplitudes, state.amplitudes)) ** 2)


# Conjugation rules U P U^dag for the frame-propagating gates, on the
# single-qubit Pauli written as (x, z) bits.  Phases are irrelevant for a
# correction frame.
_ONE_QUBIT_FRAME = {
    "I": {(1, 0): (1, 0), (0, 1): (0, 1)},
    "X": {(1, 0): (1, 0), (0, 1): (0, 1)},
    "Y": {(1, 0): (1, 0), (0, 1): (0, 1)},
    "Z": {(1, 0): (1, 0), (0, 1): (0, 1)},
    "H": {(1, 0): (0, 1), (0, 1): (1, 0)},
    "S": {(1, 0): (1, 1), (0, 1): (0, 1)},
    "Sdag": {(1, 0): (1, 1), (0, 1): (0, 1)},
    "K0": {(1, 0): (1, 0), (0, 1): (1, 1)},
    "K2": {(1, 0): (1, 0), (0, 1): (1, 1)},
    "K1": {(1, 0): (0, 1), (0, 1): (1, 0)},
    "K3": {(1, 0): (0, 1), (0, 1): (1, 0)},
}


def frame_update(frame: PauliFrame, correction=(0, 0), gate: str | None = None,
                 targets=()) -> PauliFrame:
    """Compose a correction into the frame and/or push it through a gate.

    Parameters
    ----------
    frame : PauliFrame
    correction : (x_mask, z_mask)
        Pauli string multiplied into the frame (before propagation).
    gate : str, optional
        Native gate the frame is moved through: a one-qubit Clifford from
        ``I X Y Z H S Sdag K0..K3`` or the two-qubit ``P``/``CZ``.
    targets : sequence of int
        Qubits the gate acts on.
    """
    x, z = correction
    full = (1 << frame.n) - 1
    if x & ~full or z & ~full:
        raise ValueError("correction outside the register")
    f = frame.compose(x, z)
    if gate is None:
        return f
    targets = tuple(targets)
    xm, zm = f.x_mask, f.z_mask
    if gate in ("P", "CZ"):
        if len(targets) != 2:
            raise ValueError("two-qubit gate needs two targets")
        a, b = targets
        xa, xb = (xm >> a) & 1, (xm >> b) & 1
        # X_a -> X_a Z_b (times S-type phases, dropped); symmetric for b
        zm ^= (xa << b) | (xb << a)
        if gate == "P":
            zm ^= (xa << a) | (xb << b)
        return PauliFrame(frame.n, xm, zm)
    if gate not in _ONE_QUBIT_FRAME:
        raise ValueError(f"gate {gate!r} not supported in frame propagation")
    if len(targets) != 1:
        raise ValueError("one-qubit gate needs one target")
    (q,) = targets
    bx, bz = (xm >> q) & 1, (zm >> q) & 1
    rule = _ONE_QUBIT_FRAME[gate]
    nx = nz = 0
    if bx:
        nx ^= rule[(1, 0)][0]
        nz ^= rule[(1, 0)][1]
    if bz:
        nx ^= rule[(0, 1)][0]
        nz ^= rule[(0, 1)][1]
    xm = (xm & ~(1 << q)) | (nx << q)
    zm = (zm & ~(1 << q)) | (nz << q)
    return PauliFrame(frame.n, xm, zm)


_MAGIC = b"SVEC"


def save_state(path, state: StateVector) -> None:
    """Binary dump: magic, uint32 qubit count, complex128 amplitudes."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", state.n))
        fh.write(state.amplitudes.astype("<c16").tobytes())


def load_state(path) -> StateVector:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if head[:4] != _MAGIC:
            raise ValueError("not a state dump")
        (n,) = struct.unpack("<I", head[4:])
        amp = np.frombuffer(fh.read(), dtype="<c16")
    return StateVector(n, amp.copy())
