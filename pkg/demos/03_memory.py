"""Logical memory under pink Larmor noise.

The first run builds the noisy-gate library (tens of minutes on one core);
set ``SPINQEC_CACHE`` to a directory to keep it between runs.
Run with ``python3 demos/03_memory.py``.
"""
import os

from spinqec.experiments import MemoryConfig, fit_curve, logical_memory, s0_from_t2

cache = os.environ.get("SPINQEC_CACHE")
cfg = MemoryConfig(s0_omega=s0_from_t2(50.0), rounds=40, trials=20)
curve, fit, _ = logical_memory(cfg, seed=7, cache_dir=cache)

for t, f, se in zip(curve.times, curve.mean_fidelity, curve.stderr):
    print(f"t = {t / 1e3:6.3f} ms  F = {f:.4f} +- {se:.4f}")
if fit is not None:
    gauss = fit_curve(curve, "gaussian")
    print(f"T2L = {fit.characteristic_time / 1e3:.2f} ms "
          f"(exponential RMSE {fit.rmse:.2e}, Gaussian RMSE {gauss.rmse:.2e})")
