"""Sliding-window lookup-table decoder for the distance-3 code.

Rounds are decoded in windows of three (``[0,1,2], [2,3,4], ...``; round 0
is the perfect initial state) that overlap by one round.  Per window and
per stabilizer colour there are ``3 x 4`` detection events:

* ``e0 = s_a xor sigma(frame)``: first round against the syndrome the
  current Pauli frame predicts,
* ``e1 = s_(a+1) xor s_a`` and ``e2 = s_(a+2) xor s_(a+1)``.

Here ``s_r = m_r xor m_(r-1)`` undoes ancilla reuse (ancillas are not reset).

The table stores, for each of the 4096 event patterns of a colour, the data
correction of a minimum number of single-qubit X/Z faults reproducing it.
Faults sit at every qubit before every step of a round and are pushed
through the ideal native round, so hook errors and ancilla flips are
included.  The minimum is exact (breadth-first search over the full
event x correction space); ties go to the lexicographically smallest qubit
set.  X and Z type errors are handled by the two colours independently.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .code import N_ANC, N_DATA, CodeLayout, ScheduledCircuit, build_surface17_schedule
from .statevec import PauliFrame, frame_update

__all__ = [
    "SyndromeRound",
    "DecodeWindow",
    "LookupTable",
    "fault_mechanisms",
    "build_lookup_table",
    "decode_window",
    "WindowDecoder",
    "stream_decode",
    "syndrome_of",
    "dump_syndromes",
]

COLORS = ("X", "Z")
N_EVENT_BITS = 12
N_PATTERNS = 1 << N_EVENT_BITS


@dataclass(frozen=True)
class SyndromeRound:
    """Eight stabilizer bits (bit ``i`` = ancilla ``9 + i``) of one round."""

    index: int
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits < (1 << N_ANC):
            raise ValueError("a syndrome round has exactly 8 bits")


@dataclass(frozen=True)
class DecodeWindow:
    rounds: tuple
    reference: int = 0      # syndrome predicted by the Pauli frame

    def __post_init__(self):
        if len(self.rounds) != 3:
            raise ValueError("a window holds three rounds")
        idx = [r.index for r in self.rounds]
        if idx != list(range(idx[0], idx[0] + 3)):
            raise ValueError("window rounds must be consecutive")

    def events(self) -> tuple[int, int, int]:
        s = [r.bits for r in self.rounds]
        return s[0] ^ self.reference, s[1] ^ s[0], s[2] ^ s[1]


# ----------------------------------------------------------------------------
# fault mechanisms


def _color_ancillas(layout: CodeLayout, color: str) -> list[int]:
    return [s.ancilla for s in layout.stabilizers if s.color == color]


def _detect_pauli(layout: CodeLayout, color: str) -> dict[int, str]:
    """Pauli of the colour's stabilizers on each data qubit."""
    out = {}
    for s in layout.stabilizers:
        if s.color == color:
            out.update(s.paulis)
    return out


def data_effect(layout: CodeLayout, color: str, x_mask: int, z_mask: int) -> int:
    """Data qubits whose Pauli anticommutes with the colour's stabilizers."""
    det = _detect_pauli(layout, color)
    bits = 0
    for d, p in det.items():
        hit = (z_mask >> d) & 1 if p == "X" else (x_mask >> d) & 1
        bits |= hit << d
    return bits


def correction_masks(layout: CodeLayout, color: str, data_bits: int) -> tuple[int, int]:
    """``(x, z)`` masks of the correction acting on ``data_bits``."""
    det = _detect_pauli(layout, color)
    x = z = 0
    for d in range(N_DATA):
        if (data_bits >> d) & 1:
            if det[d] == "X":
                z |= 1 << d
            else:
                x |= 1 << d
    return x, z


def syndrome_of(layout: CodeLayout, x_mask: int, z_mask: int) -> int:
    """Stabilizer flips (bit ``i`` = ancilla ``9 + i``) of a data Pauli."""
    out = 0
    for i, (sx, sz) in enumerate(layout.stabilizer_masks()):
        anti = bin(sx & z_mask).count("1") + bin(sz & x_mask).count("1")
        out |= (anti & 1) << i
    return out


def _propagate(frame: PauliFrame, steps) -> PauliFrame:
    for s in steps:
        for q, g in s.gates.items():
            if g != "shuttle":
                frame = frame_update(frame, gate=g, targets=(q,))
        for a, d in s.pairs:
            frame = frame_update(frame, gate="P", targets=(a, d))
    return frame


def fault_mechanisms(layout: CodeLayout, circuit: ScheduledCircuit) -> list[tuple[int, int, int]]:
    """Single X/Z faults of one round as ``(flips, data_x, data_z)``.

    ``flips`` are outcome flips of the round's readout (bit ``i`` = ancilla
    ``9 + i``); ``data_x/z`` is the data Pauli left after the round.
    """
    manip = [s for s in circuit.steps if s.kind != "measure"]
    out = set()
    for k in range(len(manip)):
        rest = manip[k:]
        for q in range(N_DATA + N_ANC):
            for x, z in ((1 << q, 0), (0, 1 << q)):
                f = _propagate(PauliFrame(N_DATA + N_ANC, x, z), rest)
                flips = f.x_mask >> N_DATA
                dmask = (1 << N_DATA) - 1
                out.add((flips, f.x_mask & dmask, f.z_mask & dmask))
    return sorted(out)


def _window_codes(layout: CodeLayout, circuit: ScheduledCircuit, color: str) -> np.ndarray:
    anc = _color_ancillas(layout, color)
    pos = [a - N_DATA for a in anc]

    def local(bits8):
        return sum(((bits8 >> p) & 1) << i for i, p in enumerate(pos))

    sig = {}
    codes = set()
    for flips, dx, dz in fault_mechanisms(layout, circuit):
        s = sig.setdefault((dx, dz), syndrome_of(layout, dx, dz))
        f = local(flips)
        after = local(flips ^ s)
        data = data_effect(layout, color, dx, dz)
        for layer in range(3):
            ev = f << (4 * layer)
            if layer < 2:
                ev |= after << (4 * (layer + 1))
            code = (ev << N_DATA) | data
            if code:
                codes.add(code)
    return np.array(sorted(codes), dtype=np.int64)


# ----------------------------------------------------------------------------
# table


def _lex_rank() -> np.ndarray:
    masks = sorted(range(1 << N_DATA),
                   key=lambda m: tuple(i for i in range(N_DATA) if (m >> i) & 1))
    rank = np.empty(1 << N_DATA, dtype=np.int64)
    rank[masks] = np.arange(len(masks))
    return rank


@dataclass(frozen=True)
class LookupTable:
    """Minimum-weight correction per event pattern for one colour.

    ``correction[p]`` is a 9-bit data mask, ``weight[p]`` the fault count.
    """

    layout_key: str
    color: str
    correction: np.ndarray
    weight: np.ndarray
    n_mechanisms: int

    def lookup(self, e0: int, e1: int, e2: int) -> int:
        return int(self.correction[e0 | (e1 << 4) | (e2 << 8)])

    def save(self, path) -> None:
        meta = json.dumps({"layout": self.layout_key, "color": self.color,
                           "n_mechanisms": self.n_mechanisms})
        buf = io.BytesIO()
        np.savez_compressed(buf, meta=np.frombuffer(meta.encode(), dtype=np.uint8),
                            correction=self.correction, weight=self.weight)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path, expect_key: str | None = None) -> "LookupTable":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            t = cls(meta["layout"], meta["color"], z["correction"], z["weight"],
                    meta["n_mechanisms"])
        if expect_key is not None and t.layout_key != expect_key:
            raise ValueError(f"table built for {t.layout_key}, expected {expect_key}")
        return t


def table_key(layout: CodeLayout, circuit: ScheduledCircuit) -> str:
    desc = json.dumps([layout.key(), [(s.kind, sorted(s.gates.items()), list(s.pairs))
                                      for s in circuit.steps]])
    return f"{layout.key()}-{hashlib.sha256(desc.encode()).hexdigest()[:12]}"


def build_lookup_table(layout: CodeLayout, basis: str,
                       circuit: ScheduledCircuit | None = None) -> LookupTable:
    """Exact minimum-weight table for colour ``basis`` (``"X"`` or ``"Z"``).

    ``"X"`` ancillas detect the errors corrected with ``Z`` in the standard
    code (and the mixed Paulis of the XZZX variant).
    """
    if basis not in COLORS:
        raise ValueError(f"basis must be X or Z, got {basis!r}")
    circuit = circuit or build_surface17_schedule(layout.variant)
    codes = _window_codes(layout, circuit, basis)
    n_states = N_PATTERNS << N_DATA
    dist = np.full(n_states, -1, dtype=np.int8)
    dist[0] = 0
    frontier = np.array([0], dtype=np.int64)
    d = 0
    while frontier.size:
        d += 1
        found = []
        for c in codes:
            nb = frontier ^ c
            nb = nb[dist[nb] < 0]
            if nb.size:
                dist[nb] = d
                found.append(nb)
        frontier = np.unique(np.concatenate(found)) if found else frontier[:0]
    dist = dist.reshape(N_PATTERNS, 1 << N_DATA)
    reach = dist >= 0
    if not reach.any(axis=1).all():
        raise RuntimeError("some event patterns are unreachable")
    big = np.iinfo(np.int16).max
    dd = np.where(reach, dist.astype(np.int16), big)
    wmin = dd.min(axis=1)
    rank = _lex_rank()
    key = np.where(dd == wmin[:, None], rank[None, :], big * 1024)
    corr = key.argmin(axis=1).astype(np.int16)
    return LookupTable(table_key(layout, circuit), basis, corr, wmin.astype(np.int8), len(codes))


def build_tables(layout: CodeLayout, circuit: ScheduledCircuit | None = None,
                 cache_dir=None) -> dict[str, LookupTable]:
    """Both colour tables, read from / written to ``cache_dir`` if given."""
    circuit = circuit or build_surface17_schedule(layout.variant)
    key = table_key(layout, circuit)
    out = {}
    for c in COLORS:
        path = Path(cache_dir) / f"table-{key}-{c}.npz" if cache_dir else None
        if path is not None and path.exists():
            out[c] = LookupTable.load(path, expect_key=key)
            continue
        out[c] = build_lookup_table(layout, c, circuit)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            out[c].save(tmp)
            tmp.replace(path)
    return out


# ----------------------------------------------------------------------------
# decoding


def _split(layout: CodeLayout, bits8: int) -> dict[str, int]:
    out = {}
    for c in COLORS:
        pos = [a - N_DATA for a in _color_ancillas(layout, c)]
        out[c] = sum(((bits8 >> p) & 1) << i for i, p in enumerate(pos))
    return out


def decode_window(tables: dict[str, LookupTable], window: DecodeWindow,
                  layout: CodeLayout) -> tuple[int, int]:
    """Pauli correction ``(x_mask, z_mask)`` on the data for one window."""
    ev = [_split(layout, e) for e in window.events()]
    x = z = 0
    for c in COLORS:
        t = tables[c]
        if t.color != c:
            raise ValueError("table colour mismatch")
        data = t.lookup(ev[0][c], ev[1][c], ev[2][c])
        cx, cz = correction_masks(layout, c, data)
        x ^= cx
        z ^= cz
    return x, z


class WindowDecoder:
    """Vectorised lookups for the executor: events -> correction masks."""

    def __init__(self, layout: CodeLayout, tables: dict[str, LookupTable]):
        self.layout = layout
        self.tables = tables
        split = np.array([[_split(layout, b)[c] for c in COLORS] for b in range(1 << N_ANC)])
        self._split = split
        self._masks = {c: np.array([correction_masks(layout, c, m) for m in range(1 << N_DATA)])
                       for c in COLORS}
        self._sig = {}

    def syndrome(self, x: int, z: int) -> int:
        key = (x, z)
        if key not in self._sig:
            self._sig[key] = syndrome_of(self.layout, x, z)
        return self._sig[key]

    def correction(self, e0: int, e1: int, e2) -> tuple:
        """Correction masks; the event arguments broadcast as arrays."""
        e0, e1, e2 = np.broadcast_arrays(e0, e1, e2)
        x = np.zeros(e0.shape, dtype=np.int64)
        z = np.zeros(e0.shape, dtype=np.int64)
        for i, c in enumerate(COLORS):
            p = self._split[e0, i] | (self._split[e1, i] << 4) | (self._split[e2, i] << 8)
            m = self._masks[c][self.tables[c].correction[p]]
            x ^= m[..., 0]
            z ^= m[..., 1]
        return x, z


def stream_decode(rounds: Iterable[SyndromeRound], tables: dict[str, LookupTable],
                  layout: CodeLayout) -> Iterator[tuple[int, tuple[int, int]]]:
    """Decode rounds ``1, 2, ...`` in overlapping windows.

    Yields ``(k, (x, z))`` after round ``2k``: the correction of window
    ``[2k-2, 2k-1, 2k]``, to be composed into the Pauli frame.  Round 0 is
    the perfect reference with an all-zero syndrome.
    """
    prev = SyndromeRound(0, 0)
    buf = [prev]
    fx = fz = 0
    for r in rounds:
        if r.index != buf[-1].index + 1:
            raise ValueError(f"round {r.index} out of order after {buf[-1].index}")
        buf.append(r)
        if len(buf) == 3:
            w = DecodeWindow(tuple(buf), syndrome_of(layout, fx, fz))
            cx, cz = decode_window(tables, w, layout)
            fx ^= cx
            fz ^= cz
            yield buf[-1].index // 2, (cx, cz)
            buf = [buf[-1]]


def dump_syndromes(path, rounds: Iterable[SyndromeRound]) -> None:
    """CSV debug dump: round index then the 8 bits (ancilla 9 first)."""
    lines = ["round," + ",".join(f"a{9 + i}" for i in range(N_ANC))]
    for r in rounds:
        lines.append(f"{r.index}," + ",".join(str((r.bits >> i) & 1) for i in range(N_ANC)))
    Path(path).write_text("\n".join(lines) + "\n")
