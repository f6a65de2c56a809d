"""Acceptance criteria, one PASS/FAIL line each (see the terminal summary).

Slow criteria run reduced trial counts; set SPINQEC_TEST_CACHE to reuse the
gate libraries across sessions.
"""
import math

import numpy as np
import pytest

from spinqec.experiments import (
    MemoryConfig,
    MemoryRunner,
    fit_curve,
    fit_dephasing_constants,
    fit_shuttle_model,
    logical_memory,
    loglog_slope,
    ramsey_one_qubit,
    ramsey_two_qubit,
    s0_from_t2,
    scaling_sweep,
    t2_from_s0,
    tj_from_s0,
)
from spinqec.gates import (
    IDEAL_P,
    ONE_QUBIT_GATES,
    HardwareConfig,
    TwoQubitParams,
    _relative_phases,
    build_gate,
    build_pi_pulse_p,
    build_sym_corrected_p,
    calibrate_b0,
    gate_fidelity,
    gaussian_pulse_params,
    ideal_gate,
    phase_distance,
    two_reference_gate,
)

HW = HardwareConfig()
TM = 1.6e6
TS = 0.1
T_QEC = 15.2


def _delays(pred, n=40, span=3.0):
    return np.unique(np.rint(np.linspace(span * pred / n, span * pred, n) / TS) * TS)


def _rmse_pair(curve):
    return fit_curve(curve, "exponential").rmse, fit_curve(curve, "gaussian").rmse


def test_c01_ideal_gate_oracles(report):
    d = {g: phase_distance(ideal_gate(g), build_gate(g, 0.0, HW)) for g in ONE_QUBIT_GATES}
    d["P_sym"] = phase_distance(IDEAL_P, build_sym_corrected_p(hw=HW))
    d["P_pi"] = phase_distance(IDEAL_P, build_pi_pulse_p(hw=HW))
    worst = max(d, key=d.get)
    bad = [g for g, v in d.items() if v >= 1e-6]
    report(1, not bad, f"max Frobenius distance {d[worst]:.2e} ({worst}); "
                       f"above 1e-6: {bad or 'none'}")


def test_c02_pulse_calibration(report):
    b0 = calibrate_b0(math.pi, 1.0, 1e-6)
    sigma, tp = gaussian_pulse_params(math.pi, b0, 1e-6)
    tp_21 = gaussian_pulse_params(math.pi, 2.1, 1e-6)[1]
    tz = HW.duration("Z")
    ok = abs(b0 - 2.1) / 2.1 < 0.03 and abs(tp - 1.0) < 1e-3 and abs(tz - 0.2) < 1e-12
    report(2, ok, f"B0 = {b0:.4f} MHz, sigma = {sigma:.5f} us, t_pulse = {tp:.6f} us "
                  f"(B0 = 2.1 exactly: {tp_21:.4f} us); Z gate {tz * 1e3:.3f} ns")


def test_c03_adiabaticity(report):
    fids = {}
    for de in (8.0, 10.0, 12.0, 16.0, 20.0):
        hw = HardwareConfig(delta_e_rz=de)
        pp = two_reference_gate(TwoQubitParams(hw.j_shape(), de), hw.dt, hw.order)
        ref = np.diag(np.exp(1j * np.angle(np.diagonal(pp))))
        fids[de] = gate_fidelity(ref, pp)
    pp = two_reference_gate(TwoQubitParams(HW.j_shape(), 10.0), HW.dt, HW.order)
    p1, p2 = _relative_phases(pp)
    dev = abs(np.angle(np.exp(1j * (p1 + p2 - math.pi))))
    ok = min(fids.values()) >= 0.999 and dev < 1e-6
    report(3, ok, f"min P' fidelity {min(fids.values()):.6f} over dE = 8..20 MHz; "
                  f"|phi1 + phi2 - pi| = {dev:.1e} rad at 10 MHz")


@pytest.mark.slow
def test_c04_ramsey_calibration(report):
    ratios = {}
    for i, s0 in enumerate((2.5e-7, 2.5e-6, 2.5e-5, 2.5e-4)):
        pred = t2_from_s0(s0, TM)
        _, fit = ramsey_one_qubit(s0, TM, TS, _delays(pred), 500, seed=400 + i)
        ratios[s0] = fit.characteristic_time / pred
    worst = max(ratios, key=lambda s: abs(ratios[s] - 1))
    ok = all(abs(r - 1) <= 0.10 for r in ratios.values())
    txt = ", ".join(f"{s:.1e}: {r:.3f}" for s, r in ratios.items())
    report(4, ok, f"simulated/formula T2* ratios ({txt}); worst {worst:.1e}")


@pytest.mark.slow
def test_c05_two_qubit_ramsey(report):
    s0 = 0.025
    tms = [1e3, 1e4, 1e5, 1e6, 1.6e6]
    tj = []
    for i, tm in enumerate(tms):
        _, fit = ramsey_two_qubit(s0, HW.j0, tm, TS, _delays(tj_from_s0(s0, tm)), 500,
                                  seed=500 + i, delta_e=HW.delta_e_rz)
        tj.append(fit.characteristic_time)
    a, c = fit_dephasing_constants(tms, tj, s0)
    # C at the stated prefactor, for comparison
    c_fixed = float(np.mean(np.log(tms) - (2 * math.pi * np.array(tj)) ** -2 / (s0 * 0.024**2)))
    ok = abs(a / 0.024 - 1) <= 0.25 and abs(c / 2.52 - 1) <= 0.25
    report(5, ok, f"(A, C) = ({a:.4f}, {c:.2f}) vs (0.024, 2.52); C at A = 0.024: "
                  f"{c_fixed:.2f}; T_J* = {', '.join(f'{t:.2f}' for t in tj)} us")


def test_c06_decoder_exactness(report, library, tables):
    bad, n = [], 0
    for init in ("zero", "plus"):
        r = MemoryRunner(MemoryConfig(rounds=4, trials=1, initial=init), library=library,
                         tables=tables["standard"])
        faults = [(1 << d, 0) for d in range(9)] + [(0, 1 << d) for d in range(9)]
        faults += [(1 << a, 1 << b) for a in range(9) for b in range(9)]
        for f in faults:
            n += 1
            fid = r.run_trial(1, 0, rounds=2, inject={1: f})[0]
            if abs(fid - 1) > 1e-9:
                bad.append((init, f, fid))
    report(6, not bad, f"{n - len(bad)}/{n} injected faults corrected to fidelity 1 "
                       f"(18 single + 81 paired, |0_L> and |+_L>)")


@pytest.mark.slow
def test_c07_decay_shape(report, cache_dir):
    t2 = 71.27
    cfg = MemoryConfig(s0_omega=s0_from_t2(t2), rounds=200, trials=100)
    curve, _, _ = logical_memory(cfg, 700, cache_dir=cache_dir)
    le, lg = _rmse_pair(curve)
    phys, _ = ramsey_one_qubit(s0_from_t2(t2), TM, TS, _delays(t2), 500, seed=701)
    pe, pg = _rmse_pair(phys)
    ok = le < lg and pg < pe
    report(7, ok, f"logical RMSE exp {le:.2e} < gauss {lg:.2e}: {le < lg}; "
                  f"physical RMSE gauss {pg:.2e} < exp {pe:.2e}: {pg < pe}; "
                  f"final logical fidelity {curve.mean_fidelity[-1]:.4f}")


def _rounds_for(t2l_pred, floor=12):
    # mean fidelity (1 + exp(-t/T)) / 2 reaches 0.8 at t = ln(5/3) T
    r = max(floor, int(math.ceil(math.log(5 / 3) * t2l_pred / T_QEC)))
    return r + (r % 2)


@pytest.mark.slow
def test_c08_quartic_scaling(report, cache_dir):
    # rounds from a pilot anchor (T2L ~ 12.8 ms at T2* = 71.27 us) and the quartic law
    grid = [25.0, 35.0, 50.0, 71.27, 100.0]
    rounds = [_rounds_for(12.8e3 * (t / 71.27) ** 4) for t in grid]
    rows = scaling_sweep("t2", grid, {"t2": None, "tj": None}, 50, 800, rounds, cache_dir)
    slope = loglog_slope(grid, [r["t2l"] for r in rows])
    # saturation ordering at T2* = 71.27 us: lower T_J* gives a lower T2L
    sat = scaling_sweep("tj", [14.26, 7.13], {"t2": 71.27}, 50, 801, [200, 116], cache_dir)
    t_no = rows[3]["t2l"]
    t_hi, t_lo = sat[0]["t2l"], sat[1]["t2l"]
    ordered = t_lo < t_hi < t_no
    ok = abs(slope - 4) <= 0.5 and ordered
    t2l = ", ".join(f"{r['t2l'] / 1e3:.3g}" for r in rows)
    report(8, ok, f"log-log slope {slope:.2f} over T2* = 25..100 us (T2L = {t2l} ms); "
                  f"T2L at T_J* = 7.13 / 14.26 / none: {t_lo / 1e3:.3g} / {t_hi / 1e3:.3g} / "
                  f"{t_no / 1e3:.3g} ms")


@pytest.mark.slow
def test_c09_shuttling(report, cache_dir):
    grid = [0.0, 0.1, 0.5, 1.0, 2.0]
    fixed = {"t2": 71.27, "tj": 7.13, "gamma": 1.0, "tau": 0.01}
    rows = scaling_sweep("shuttle", grid, fixed, 100, 900, [120, 120, 80, 50, 30], cache_dir)
    base, short = rows[0], rows[1]
    plateau = base["ci_low"] <= short["t2l"] <= base["ci_high"]
    a, b = fit_shuttle_model(grid, [r["t2l"] for r in rows], 71.27, base["t_qec"])
    ok = plateau and abs(b - 0.34) <= 0.1
    t2l = ", ".join(f"{r['t2l'] / 1e3:.3g}" for r in rows)
    report(9, ok, f"T2L(0.1 us) = {short['t2l'] / 1e3:.3g} ms vs CI [{base['ci_low'] / 1e3:.3g}, "
                  f"{base['ci_high'] / 1e3:.3g}] ms at 0: {plateau}; fit B = {b:.3f} "
                  f"(A = {a:.3g}); T2L = {t2l} ms")


@pytest.mark.slow
def test_c10_correlated_noise(report, cache_dir):
    t2 = 50.0
    res = {}
    for i, mode in enumerate(("uncorrelated", "correlated")):
        cfg = MemoryConfig(s0_omega=s0_from_t2(t2), rounds=110, trials=100, mode=mode)
        curve, fit, _ = logical_memory(cfg, 1000 + i, cache_dir=cache_dir)
        res[mode] = (fit.characteristic_time, *_rmse_pair(curve))
    ratio = res["correlated"][0] / res["uncorrelated"][0]
    shapes = all(e < g for _, e, g in res.values())
    ok = 0.5 <= ratio <= 2.0 and shapes
    report(10, ok, f"T2L correlated / uncorrelated = {res['correlated'][0] / 1e3:.3g} / "
                   f"{res['uncorrelated'][0] / 1e3:.3g} ms (ratio {ratio:.2f}); "
                   f"exponential RMSE below Gaussian for both: {shapes}")
