"""The distance-3 schedule and the windowed lookup decoder.

Run with ``python3 demos/02_decoder.py`` (a few seconds when the tables
are cached, about a minute otherwise).
"""
from spinqec.code import build_surface17_schedule, format_schedule, surface17_layout
from spinqec.decode import DecodeWindow, SyndromeRound, build_tables, decode_window, syndrome_of

layout = surface17_layout("standard")
circuit = build_surface17_schedule("standard", "pi")
print(format_schedule(circuit))
print(f"{circuit.gate_count} gates, cycle {circuit.duration:.1f} us")

tables = build_tables(layout, circuit)

# a Z error on data qubit 4 appears in round 1 and persists
err_x, err_z = 0, 1 << 4
s = syndrome_of(layout, err_x, err_z)
window = DecodeWindow((SyndromeRound(0, 0), SyndromeRound(1, s), SyndromeRound(2, s)))
cx, cz = decode_window(tables, window, layout)
print(f"syndrome {s:08b}: correction X {cx:09b}, Z {cz:09b}")

# a lone readout flip in the middle round is not a data error
flip = DecodeWindow((SyndromeRound(0, 0), SyndromeRound(1, 1 << 3), SyndromeRound(2, 0)))
print("readout flip correction:", decode_window(tables, flip, layout))
