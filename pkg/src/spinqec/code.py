"""Distance-3 rotated surface code: layout, syndrome circuit and schedule.

Data qubits ``0..8`` sit on a 3x3 grid (index ``3*row + col``); ancillas
``9..16`` sit at plaquette centres.  Bulk plaquettes at ``(r+1/2, c+1/2)``
are X type when ``r + c`` is even.  The XZZX variant conjugates the data
qubits with odd ``row + col`` by a Hadamard.

The syndrome circuit is first written with H and CZ gates (ancilla
Hadamards around four CZ layers, data Hadamards wherever a data qubit must
present its X to the ancilla), then converted to native gates with
``H = Z K3``, ``CZ = (Sdag x Sdag) P`` and ``S K_n Sdag = K_(n+1)``; the
residual ``S**k`` on each data qubit is emitted in a final shift step.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .gates import HardwareConfig
from .statevec import StateVector, apply_pauli, expectation_pauli

__all__ = [
    "CodeLayout",
    "Step",
    "ScheduledCircuit",
    "ShuttleConfig",
    "surface17_layout",
    "syndrome_circuit",
    "build_surface17_schedule",
    "insert_shuttling",
    "prepare_logical_state",
    "logical_data_state",
    "format_schedule",
]

N_DATA = 9
N_ANC = 8
N_QUBITS = N_DATA + N_ANC

# CZ order per ancilla type; offsets (drow, dcol) from the plaquette centre
_NW, _NE, _SW, _SE = (-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)
_ORDER = {"X": (_NW, _NE, _SW, _SE), "Z": (_NW, _SW, _NE, _SE)}

# (centre, type) in ancilla order 9..16
_PLAQUETTES = (
    ((0.5, 0.5), "X"),
    ((1.5, 1.5), "X"),
    ((-0.5, 1.5), "X"),
    ((2.5, 0.5), "X"),
    ((0.5, 1.5), "Z"),
    ((1.5, 0.5), "Z"),
    ((0.5, -0.5), "Z"),
    ((1.5, 2.5), "Z"),
)


@dataclass(frozen=True)
class Stabilizer:
    ancilla: int
    color: str                   # "X" or "Z": plaquette type of the standard code
    paulis: Mapping[int, str]    # data qubit -> "X" | "Z"
    order: tuple                 # data qubit per CZ layer, None when absent

    @property
    def support(self) -> tuple:
        return tuple(sorted(self.paulis))


def _masks(paulis: Mapping[int, str]) -> tuple[int, int]:
    x = z = 0
    for q, p in paulis.items():
        if p in ("X", "Y"):
            x |= 1 << q
        if p in ("Z", "Y"):
            z |= 1 << q
    return x, z


@dataclass(frozen=True)
class CodeLayout:
    """Qubits, stabilizers and logical operators of a surface-17 variant."""

    variant: str
    stabilizers: tuple
    logical_x: Mapping[int, str]
    logical_z: Mapping[int, str]
    hadamard_data: frozenset = frozenset()

    @property
    def data_qubits(self) -> tuple:
        return tuple(range(N_DATA))

    @property
    def ancilla_qubits(self) -> tuple:
        return tuple(range(N_DATA, N_QUBITS))

    @property
    def qubits(self) -> tuple:
        return tuple(range(N_QUBITS))

    @property
    def edges(self) -> tuple:
        """``(ancilla, data)`` pairs coupled by a two-qubit gate."""
        return tuple((s.ancilla, d) for s in self.stabilizers for d in s.support)

    def stabilizer_masks(self) -> list[tuple[int, int]]:
        return [_masks(s.paulis) for s in self.stabilizers]

    def logical_masks(self) -> dict[str, tuple[int, int]]:
        return {"X": _masks(self.logical_x), "Z": _masks(self.logical_z)}

    def color_pauli(self, data: int, color: str) -> str:
        """Single-qubit Pauli on ``data`` flipping only ``color`` stabilizers."""
        flip = data in self.hadamard_data
        base = "Z" if color == "X" else "X"
        return {"X": "Z", "Z": "X"}[base] if flip else base

    def key(self) -> str:
        return f"surface17-{self.variant}"


def _commute(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return (bin(a[0] & b[1]).count("1") + bin(a[1] & b[0]).count("1")) % 2 == 0


def surface17_layout(variant: str = "standard") -> CodeLayout:
    """Rotated distance-3 code; ``variant`` is ``"standard"`` or ``"xzzx"``."""
    if variant not in ("standard", "xzzx"):
        raise ValueError(f"unknown variant {variant!r}")
    had = frozenset(d for d in range(N_DATA) if (d // 3 + d % 3) % 2) if variant == "xzzx" \
        else frozenset()
    swap = {"X": "Z", "Z": "X"}
    stabs = []
    for i, ((pr, pc), kind) in enumerate(_PLAQUETTES):
        order = []
        paulis = {}
        for dr, dc in _ORDER[kind]:
            r, c = pr + dr, pc + dc
            if 0 <= r <= 2 and 0 <= c <= 2:
                d = int(3 * r + c)
                paulis[d] = swap[kind] if d in had else kind
                order.append(d)
            else:
                order.append(None)
        stabs.append(Stabilizer(N_DATA + i, kind, paulis, tuple(order)))
    lx = {d: ("Z" if d in had else "X") for d in (0, 3, 6)}
    lz = {d: ("X" if d in had else "Z") for d in (0, 1, 2)}
    layout = CodeLayout(variant, tuple(stabs), lx, lz, had)
    _validate_layout(layout)
    return layout


def _validate_layout(layout: CodeLayout) -> None:
    masks = layout.stabilizer_masks()
    lx, lz = layout.logical_masks()["X"], layout.logical_masks()["Z"]
    for a, b in itertools.combinations(masks, 2):
        if not _commute(a, b):
            raise AssertionError("stabilizers do not commute")
    for m in masks:
        if not (_commute(m, lx) and _commute(m, lz)):
            raise AssertionError("logical operator anticommutes with a stabilizer")
    if _commute(lx, lz):
        raise AssertionError("logical operators commute")


# ----------------------------------------------------------------------------
# ideal H/CZ circuit


def syndrome_circuit(layout: CodeLayout) -> list[list[tuple]]:
    """One round as 8 time slots of ``("H", q)`` / ``("CZ", anc, data)`` ops.

    Slots: ancilla H, CZ layer 1, H, CZ layer 2, CZ layer 3, H, CZ layer 4,
    ancilla H.  Data Hadamards are placed with the fewest toggles that give
    each data qubit the frame its stabilizer Pauli requires in every layer.
    """
    need = {d: [None] * 4 for d in layout.data_qubits}
    cz_layers = [[] for _ in range(4)]
    for s in layout.stabilizers:
        for layer, d in enumerate(s.order):
            if d is None:
                continue
            if need[d][layer] is not None:
                raise AssertionError("data qubit used twice in one layer")
            need[d][layer] = s.paulis[d] == "X"
            cz_layers[layer].append(("CZ", s.ancilla, d))
    h_slots = {0: [], 2: [], 5: [], 7: []}
    for d in layout.data_qubits:
        for k, h in zip((0, 2, 5, 7), _data_toggles(need[d])):
            if h:
                h_slots[k].append(("H", d))
    anc_h = [("H", a) for a in layout.ancilla_qubits]
    return [anc_h + h_slots[0], cz_layers[0], h_slots[2], cz_layers[1], cz_layers[2],
            h_slots[5], cz_layers[3], anc_h + h_slots[7]]


def _data_toggles(need):
    """Hadamard toggles before layer 1, between 1|2, between 3|4, after 4."""
    best = None
    for frames in itertools.product((False, True), repeat=4):
        if any(n is not None and n != f for n, f in zip(need, frames)):
            continue
        if frames[1] != frames[2]:
            continue                          # no slot between layers 2 and 3
        seq = (False,) + frames + (False,)
        toggles = (seq[0] != seq[1], seq[1] != seq[2], seq[3] != seq[4], seq[4] != seq[5])
        cost = (sum(toggles), sum(frames))
        if best is None or cost < best[0]:
            best = (cost, toggles)
    if best is None:
        raise AssertionError("no consistent data frame assignment")
    return best[1]


# ----------------------------------------------------------------------------
# native schedule


@dataclass(frozen=True)
class Step:
    """One manipulation step.

    ``gates`` maps qubit -> one-qubit gate name; ``pairs`` lists
    ``(ancilla, data)`` two-qubit gates; unlisted qubits idle.
    """

    kind: str
    duration: float
    gates: Mapping[int, str] = field(default_factory=dict)
    pairs: tuple = ()

    @property
    def busy(self) -> set:
        return set(self.gates) | {q for p in self.pairs for q in p}


_KIND_OF = {"K0": "drive-1q", "K1": "drive-1q", "K2": "drive-1q", "K3": "drive-1q",
            "X": "drive-1q", "Y": "drive-1q", "Z": "shift-1q", "S": "shift-1q",
            "Sdag": "shift-1q", "shuttle": "shuttle"}


@dataclass(frozen=True)
class ScheduledCircuit:
    steps: tuple
    variant: str = "standard"
    p_gate: str = "pi"

    def __post_init__(self):
        for s in self.steps:
            if not s.duration > 0:
                raise ValueError("step durations must be positive")
            kinds = {_KIND_OF[g] for g in s.gates.values()}
            if s.pairs:
                kinds.add("two-qubit")
            if kinds - {s.kind}:
                raise ValueError(f"step of kind {s.kind} holds {kinds}")
            seen = [q for p in s.pairs for q in p] + list(s.gates)
            if len(seen) != len(set(seen)):
                raise ValueError("qubit used twice in one step")

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.steps))

    @property
    def gate_count(self) -> int:
        return sum(len(s.gates) + len(s.pairs) for s in self.steps if s.kind != "shuttle")

    @property
    def manipulation_steps(self) -> int:
        return sum(1 for s in self.steps if s.kind not in ("measure", "shuttle"))


_FLUSH = {1: "S", 2: "Z", 3: "Sdag"}


def build_surface17_schedule(variant: str = "standard", p_gate: str = "pi",
                             hw: HardwareConfig | None = None) -> ScheduledCircuit:
    """Native-gate syndrome round: 9 manipulation steps plus measurement.

    ``p_gate`` selects the P implementation (``"sym"`` symmetry-corrected,
    ``"pi"`` refocused), which sets the two-qubit step duration.
    """
    if p_gate not in ("sym", "pi"):
        raise ValueError(f"unknown P gate flavor {p_gate!r}")
    hw = hw or HardwareConfig()
    layout = surface17_layout(variant)
    pending = dict.fromkeys(layout.qubits, 0)
    steps = []
    for slot in syndrome_circuit(layout):
        if not slot:
            continue
        if slot[0][0] == "H":
            gates = {}
            for _, q in slot:
                gates[q] = f"K{(3 - pending[q]) % 4}"
                pending[q] = (pending[q] + 2) % 4
            dur = max(hw.duration(g) for g in gates.values())
            steps.append(Step("drive-1q", dur, gates))
        else:
            pairs = []
            for _, a, d in slot:
                pairs.append((a, d))
                pending[a] = (pending[a] - 1) % 4
                pending[d] = (pending[d] - 1) % 4
            steps.append(Step("two-qubit", hw.duration("P_pi" if p_gate == "pi" else "P_sym"),
                              {}, tuple(pairs)))
    # diagonal residuals on ancillas commute with their Z readout and are dropped
    flush = {q: _FLUSH[k] for q, k in pending.items() if k and q < N_DATA}
    if flush:
        steps.append(Step("shift-1q", max(hw.duration(g) for g in flush.values()), flush))
    steps.append(Step("measure", hw.t_meas, {}))
    return ScheduledCircuit(tuple(steps), variant, p_gate)


@dataclass(frozen=True)
class ShuttleConfig:
    """Sparse-architecture shuttling: ``n_qd`` dots of ``tau`` us each;
    ``gamma`` rescales the shuttled qubit's T2* (its Larmor deviation is
    divided by ``gamma``)."""

    n_qd: int = 0
    tau: float = 0.01
    gamma: float = 1.0

    def __post_init__(self):
        if self.n_qd < 0:
            raise ValueError("n_qd must be >= 0")
        if not (self.tau > 0 and self.gamma > 0):
            raise ValueError("tau and gamma must be positive")

    @property
    def t_shut(self) -> float:
        return self.n_qd * self.tau


def insert_shuttling(circuit: ScheduledCircuit, config: ShuttleConfig) -> ScheduledCircuit:
    """Add the four ancilla shuttles of a sparse architecture.

    Ancillas move to the first manipulation cluster before the round and
    between consecutive two-qubit layers; readout sits next to the last
    cluster.
    """
    t = config.t_shut
    if t < 0:
        raise ValueError("negative shuttle time")
    steps = [s for s in circuit.steps if s.duration > 0]
    if t == 0:
        return replace(circuit, steps=tuple(steps))
    ancillas = sorted({p[0] for s in steps for p in s.pairs})
    shuttle = Step("shuttle", t, {a: "shuttle" for a in ancillas})
    out = [shuttle]
    seen = 0
    n_layers = sum(1 for s in steps if s.kind == "two-qubit")
    for s in steps:
        out.append(s)
        if s.kind == "two-qubit":
            seen += 1
            if seen < n_layers:
                out.append(shuttle)
    return replace(circuit, steps=tuple(out))


def format_schedule(circuit: ScheduledCircuit) -> str:
    """Human-readable table: step, kind, duration, per-qubit assignment."""
    lines = ["step  kind        dur_us  " + " ".join(f"q{q:<4d}" for q in range(N_QUBITS))]
    for i, s in enumerate(circuit.steps, 1):
        cells = []
        partner = {}
        for a, d in s.pairs:
            partner[a] = f"P{d}"
            partner[d] = f"P{a}"
        for q in range(N_QUBITS):
            cells.append(f"{partner.get(q, s.gates.get(q, 'M' if s.kind == 'measure' and q >= N_DATA else '.')):<5s}")
        lines.append(f"{i:<5d} {s.kind:<11s} {s.duration:6.3f}  " + " ".join(cells))
    lines.append(f"total {circuit.duration:.3f} us, {circuit.gate_count} gates")
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# logical states


def logical_data_state(layout: CodeLayout, which: str = "zero") -> np.ndarray:
    """Nine-qubit code state, +1 eigenstate of every stabilizer and of
    ``Z_L`` (``which="zero"``) or ``X_L`` (``which="plus"``)."""
    if which not in ("zero", "plus"):
        raise ValueError("which must be 'zero' or 'plus'")
    seed = np.zeros(1 << N_DATA, dtype=complex)
    if which == "zero":
        seed[0] = 1.0
    else:
        seed[:] = 1.0 / math.sqrt(len(seed))
    psi = StateVector(N_DATA, seed)
    ops = layout.stabilizer_masks() + [layout.logical_masks()["Z" if which == "zero" else "X"]]
    for x, z in ops:
        y = bin(x & z).count("1")
        other = apply_pauli(psi.copy(), x, z).amplitudes * (1j) ** y
        psi = StateVector(N_DATA, 0.5 * (psi.amplitudes + other))
        if psi.norm() < 1e-8:
            raise ValueError("projector annihilated the seed state")
        psi.amplitudes /= psi.norm()
    return psi.amplitudes


def prepare_logical_state(layout: CodeLayout, which: str = "zero") -> StateVector:
    """Seventeen-qubit register: logical data state with ancillas in |0>."""
    data = logical_data_state(layout, which)
    anc = np.zeros(1 << N_ANC, dtype=complex)
    anc[0] = 1.0
    return StateVector(N_QUBITS, np.kron(anc, data))


def stabilizer_expectations(state: StateVector, layout: CodeLayout) -> np.ndarray:
    return np.array([expectation_pauli(state, x, z) for x, z in layout.stabilizer_masks()])
