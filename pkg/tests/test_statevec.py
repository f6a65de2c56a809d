import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinqec.gates import IDEAL_P, ideal_gate
from spinqec.statevec import (
    MeasurementRecord,
    PauliFrame,
    StateVector,
    apply_pauli,
    apply_unitary,
    expectation_pauli,
    fidelity_to,
    frame_update,
    load_state,
    measure_block,
    measure_z,
    save_state,
)

PAULI = {
    (0, 0): np.eye(2, dtype=complex),
    (1, 0): np.array([[0, 1], [1, 0]], dtype=complex),
    (0, 1): np.diag([1, -1]).astype(complex),
    (1, 1): np.array([[0, -1j], [1j, 0]], dtype=complex),
}
CLIFFORDS = ["X", "Y", "Z", "S", "Sdag", "K0", "K1", "K2", "K3"]


def dense(ops: dict, n: int) -> np.ndarray:
    """Full matrix of single-qubit ops; qubit 0 is the least significant bit."""
    m = np.eye(1, dtype=complex)
    for q in reversed(range(n)):
        m = np.kron(m, ops.get(q, np.eye(2)))
    return m


def random_state(n, rng):
    a = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return StateVector(n, a / np.linalg.norm(a))


def haar_unitary(d, rng):
    z = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def test_identity_leaves_state():
    rng = np.random.default_rng(0)
    s = random_state(4, rng)
    before = s.amplitudes.copy()
    apply_unitary(s, np.eye(2), (2,))
    apply_unitary(s, np.eye(4), (0, 3))
    np.testing.assert_allclose(s.amplitudes, before, atol=1e-15)


@pytest.mark.parametrize("k", range(5))
def test_x_flips_bit_k(k):
    s = StateVector(5)
    apply_unitary(s, PAULI[(1, 0)], (k,))
    assert abs(s.amplitudes[1 << k]) == 1.0


def test_bit_order_and_two_qubit_convention():
    # first target is the high bit of the 4x4 matrix
    rng = np.random.default_rng(1)
    u = haar_unitary(4, rng)
    s = random_state(3, rng)
    ref = s.amplitudes.copy()
    apply_unitary(s, u, (2, 0))
    full = np.zeros((8, 8), dtype=complex)
    for i in range(8):
        for j in range(8):
            if (i >> 1) & 1 != (j >> 1) & 1:
                continue
            a = ((i >> 2) & 1) * 2 + (i & 1)
            b = ((j >> 2) & 1) * 2 + (j & 1)
            full[i, j] = u[a, b]
    np.testing.assert_allclose(s.amplitudes, full @ ref, atol=1e-12)


def test_ideal_p_on_11():
    s = StateVector.basis(2, 3)
    apply_unitary(s, IDEAL_P, (0, 1))
    assert s.amplitudes[3] == pytest.approx(1.0)


def test_apply_unitary_errors():
    s = StateVector(3)
    with pytest.raises(IndexError):
        apply_unitary(s, np.eye(2), (3,))
    with pytest.raises(ValueError):
        apply_unitary(s, np.eye(4), (1,))
    with pytest.raises(ValueError):
        apply_unitary(s, np.eye(4), (1, 1))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_gates=st.integers(1, 40))
def test_norm_preserved(seed, n_gates):
    rng = np.random.default_rng(seed)
    s = random_state(5, rng)
    for _ in range(n_gates):
        if rng.random() < 0.5:
            apply_unitary(s, haar_unitary(2, rng), (int(rng.integers(5)),))
        else:
            a, b = rng.choice(5, 2, replace=False)
            apply_unitary(s, haar_unitary(4, rng), (int(a), int(b)))
    assert abs(s.norm() - 1) < 1e-9


@settings(max_examples=30)
@given(x=st.integers(0, 15), z=st.integers(0, 15))
def test_apply_pauli_matches_dense(x, z):
    rng = np.random.default_rng(x * 16 + z)
    s = random_state(4, rng)
    ref = s.amplitudes.copy()
    ops = {q: PAULI[(1, 0)] @ PAULI[(0, 1)] if (x >> q) & 1 and (z >> q) & 1
           else PAULI[((x >> q) & 1, (z >> q) & 1)] for q in range(4)}
    apply_pauli(s, x, z)
    np.testing.assert_allclose(s.amplitudes, dense(ops, 4) @ ref, atol=1e-12)


def test_expectation_pauli_y():
    # |+i> has <Y> = 1
    s = StateVector(1, np.array([1, 1j]) / math.sqrt(2))
    assert expectation_pauli(s, 1, 1) == pytest.approx(1.0)
    assert expectation_pauli(s, 1, 0) == pytest.approx(0.0, abs=1e-15)


# ----------------------------------------------------------------------------
# measurement


def test_measure_zero_state():
    for seed in range(20):
        out, _ = measure_z(StateVector(3), 1, seed)
        assert out == 0


def test_measure_plus_statistics():
    plus = np.array([1, 1]) / math.sqrt(2)
    outs = [measure_z(StateVector(1, plus.copy()), 0, seed)[0] for seed in range(10_000)]
    assert np.mean(outs) == pytest.approx(0.5, abs=0.02)
    again = [measure_z(StateVector(1, plus.copy()), 0, seed)[0] for seed in range(50)]
    assert again == outs[:50]


def test_measure_bell_collapse():
    bell = np.array([1, 0, 0, 1]) / math.sqrt(2)
    for seed in range(10):
        out, s = measure_z(StateVector(2, bell.copy()), 0, seed)
        ref = StateVector.basis(2, 3 if out else 0)
        assert fidelity_to(s, ref) == pytest.approx(1.0)


def test_born_rule_within_3_sigma():
    rng = np.random.default_rng(3)
    s0 = random_state(3, rng)
    p1 = float(np.sum(np.abs(s0.amplitudes.reshape(2, 4)[1]) ** 2))
    shots = 10_000
    ones = sum(measure_z(s0.copy(), 2, rng)[0] for _ in range(shots))
    sigma = math.sqrt(shots * p1 * (1 - p1))
    assert abs(ones - shots * p1) < 3 * sigma


def test_measure_block_law():
    rng = np.random.default_rng(4)
    base = random_state(4, rng)
    probs = np.abs(base.amplitudes.reshape(4, 4)) ** 2
    probs = probs.sum(axis=1)
    counts = np.zeros(4)
    for _ in range(8000):
        m, low = measure_block(base.copy(), 2, rng)
        counts[m] += 1
        assert np.linalg.norm(low) == pytest.approx(1.0)
    sigma = np.sqrt(8000 * probs * (1 - probs))
    assert np.all(np.abs(counts - 8000 * probs) < 3.5 * sigma)


def test_measurement_record_validation():
    with pytest.raises(ValueError):
        MeasurementRecord(0, 2)


# ----------------------------------------------------------------------------
# fidelity


def test_fidelity_examples():
    rng = np.random.default_rng(5)
    s = random_state(3, rng)
    assert fidelity_to(s, s) == pytest.approx(1.0)
    assert fidelity_to(StateVector.basis(1, 0), StateVector.basis(1, 1)) == 0.0
    plus = StateVector(1, np.array([1, 1]) / math.sqrt(2))
    for th in (0.3, 1.7, math.pi):
        r = plus.copy()
        apply_unitary(r, np.diag([np.exp(-0.5j * th), np.exp(0.5j * th)]), (0,))
        assert fidelity_to(plus, r) == pytest.approx(math.cos(th / 2) ** 2)


# ----------------------------------------------------------------------------
# Pauli frames


def _pauli_of(m):
    for k, p in PAULI.items():
        if abs(abs(np.trace(p.conj().T @ m)) / 2 - 1) < 1e-9:
            return k
    raise AssertionError("not a Pauli")


def test_frame_involution():
    f = PauliFrame(3)
    f = frame_update(f, (0b010, 0))
    f = frame_update(f, (0b010, 0))
    assert f.is_identity


@pytest.mark.parametrize("gate", CLIFFORDS)
def test_frame_rules_match_conjugation(gate):
    u = ideal_gate(gate)
    for b in ((1, 0), (0, 1), (1, 1)):
        expect = _pauli_of(u @ PAULI[b] @ u.conj().T)
        f = frame_update(PauliFrame(1, *b), gate=gate, targets=(0,))
        assert (f.x_mask, f.z_mask) == expect


def test_x_through_k1_is_z():
    f = frame_update(PauliFrame(1, 1, 0), gate="K1", targets=(0,))
    assert (f.x_mask, f.z_mask) == (0, 1)


def test_frame_rule_two_qubit_p():
    for bits in range(16):
        xa, za, xb, zb = (bits >> 3) & 1, (bits >> 2) & 1, (bits >> 1) & 1, bits & 1
        # targets (a, b) = (0, 1); dense order: qubit 1 is the high bit
        m = np.kron(PAULI[(xb, zb)], PAULI[(xa, za)])
        r = IDEAL_P @ m @ IDEAL_P.conj().T
        f = frame_update(PauliFrame(2, xa | (xb << 1), za | (zb << 1)), gate="P", targets=(0, 1))
        got = np.kron(PAULI[((f.x_mask >> 1) & 1, (f.z_mask >> 1) & 1)],
                      PAULI[(f.x_mask & 1, f.z_mask & 1)])
        assert abs(abs(np.trace(got.conj().T @ r)) / 4 - 1) < 1e-9


def test_frame_errors():
    with pytest.raises(ValueError):
        PauliFrame(2, 0b100, 0)
    with pytest.raises(ValueError):
        frame_update(PauliFrame(2), gate="T", targets=(0,))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n_gates=st.integers(1, 30))
def test_deferred_frame_equals_eager_correction(seed, n_gates):
    """Random Clifford circuits with Pauli corrections sprinkled in."""
    rng = np.random.default_rng(seed)
    n = 5
    psi = random_state(n, rng)
    eager = psi.copy()
    lazy = psi.copy()
    frame = PauliFrame(n)
    for _ in range(n_gates):
        if rng.random() < 0.3:
            x, z = int(rng.integers(1 << n)), int(rng.integers(1 << n))
            apply_pauli(eager, x, z)
            frame = frame_update(frame, (x, z))
        elif rng.random() < 0.5:
            a, b = (int(v) for v in rng.choice(n, 2, replace=False))
            apply_unitary(eager, IDEAL_P, (a, b))
            apply_unitary(lazy, IDEAL_P, (a, b))
            frame = frame_update(frame, gate="P", targets=(a, b))
        else:
            q = int(rng.integers(n))
            g = CLIFFORDS[int(rng.integers(len(CLIFFORDS)))]
            apply_unitary(eager, ideal_gate(g), (q,))
            apply_unitary(lazy, ideal_gate(g), (q,))
            frame = frame_update(frame, gate=g, targets=(q,))
    apply_pauli(lazy, frame.x_mask, frame.z_mask)
    assert fidelity_to(lazy, eager) == pytest.approx(1.0, abs=1e-9)


def test_state_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    s = random_state(6, rng)
    save_state(tmp_path / "s.bin", s)
    back = load_state(tmp_path / "s.bin")
    assert back.n == 6
    assert np.array_equal(back.amplitudes, s.amplitudes)
