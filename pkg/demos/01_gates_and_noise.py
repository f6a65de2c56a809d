"""Pulse calibration, gate errors under detuning, and a Ramsey decay.

Run with ``python3 demos/01_gates_and_noise.py`` (about a minute).
"""
import math

import numpy as np

from spinqec.experiments import ramsey_one_qubit, t2_from_s0, s0_from_t2
from spinqec.gates import (
    HardwareConfig,
    build_gate,
    calibrate_b0,
    gate_fidelity,
    gaussian_pulse_params,
    ideal_gate,
)

hw = HardwareConfig()

# the drive amplitude that makes a pi pulse last exactly 1 us
b0 = calibrate_b0(math.pi, 1.0, 1e-6)
sigma, tp = gaussian_pulse_params(math.pi, b0, 1e-6)
print(f"B0 = {b0:.4f} MHz, sigma = {sigma:.4f} us, pulse = {tp:.6f} us")

# one-qubit gate infidelity grows quadratically with a static detuning
for dw in (0.0, 0.01, 0.03, 0.1):
    inf = {g: max(0.0, 1 - gate_fidelity(ideal_gate(g), build_gate(g, dw, hw)))
           for g in ("X", "K0")}
    print(f"dw = {dw:5.2f} MHz: 1 - F(X) = {inf['X']:.2e}, 1 - F(K0) = {inf['K0']:.2e}")

# Ramsey: simulated T2* against the closed-form prediction
t2 = 40.0
s0 = s0_from_t2(t2)
delays = np.linspace(3.0, 120.0, 40)
curve, fit = ramsey_one_qubit(s0, 1.6e6, 0.1, delays, 200, seed=1)
print(f"S0 = {s0:.3e} MHz^2: predicted T2* = {t2_from_s0(s0):.1f} us, "
      f"fitted {fit.characteristic_time:.1f} us "
      f"[{fit.ci_low:.1f}, {fit.ci_high:.1f}]")
