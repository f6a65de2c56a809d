"""Ramsey and logical-memory experiments, curve fits and parameter sweeps.

Times are in us, Larmor intensities in MHz^2 and exchange-gate potential
intensities in mV^2.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .code import (
    N_ANC,
    N_DATA,
    ScheduledCircuit,
    ShuttleConfig,
    build_surface17_schedule,
    insert_shuttling,
    logical_data_state,
    surface17_layout,
)
from .decode import COLORS, LookupTable, WindowDecoder, build_tables, correction_masks
from .gates import (
    HardwareConfig,
    LibraryGrids,
    NoisyGateLibrary,
    library_hash,
    precompute_library,
)
from .noise import (
    ExchangeFit,
    PsdSpec,
    build_noise_field,
    default_exchange_fit,
    rng_for,
)
from .statevec import StateVector, apply_pauli, apply_unitary, measure_block

__all__ = [
    "C_LARMOR",
    "A_EXCHANGE",
    "C_EXCHANGE",
    "FidelityCurve",
    "FitResult",
    "NoDecayError",
    "fit_curve",
    "t2_from_s0",
    "s0_from_t2",
    "tj_from_s0",
    "s0_from_tj",
    "ramsey_one_qubit",
    "ramsey_two_qubit",
    "MemoryConfig",
    "MemoryRunner",
    "logical_memory",
    "scaling_sweep",
    "loglog_slope",
    "fit_shuttle_model",
    "fit_dephasing_constants",
    "write_curve_csv",
    "write_summary_json",
]

log = logging.getLogger(__name__)

C_LARMOR = 4.36      # offset in ln(tm) of the one-qubit T2* formula
A_EXCHANGE = 0.024   # prefactor of the exchange T_J* formula
C_EXCHANGE = 2.52    # offset of the exchange T_J* formula
TM_DEFAULT = 1.6e6   # us
TS_DEFAULT = 0.1     # us


class NoDecayError(ValueError):
    """The curve never drops far enough below 1 to fit a time constant."""


# ----------------------------------------------------------------------------
# curves and fits


@dataclass(frozen=True)
class FidelityCurve:
    times: np.ndarray
    mean_fidelity: np.ndarray
    n_trials: int
    stderr: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        f = np.asarray(self.mean_fidelity, dtype=float)
        se = np.asarray(self.stderr, dtype=float)
        if t.ndim != 1 or f.shape != t.shape or se.shape != t.shape:
            raise ValueError("times, mean_fidelity and stderr must be matching 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(f < -1e-9) or np.any(f > 1 + 1e-9):
            raise ValueError("mean fidelity outside [0, 1]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "mean_fidelity", np.clip(f, 0.0, 1.0))
        object.__setattr__(self, "stderr", se)

    @classmethod
    def from_trials(cls, times, fidelities: np.ndarray) -> "FidelityCurve":
        """Average a ``(trials, len(times))`` array of fidelities."""
        f = np.asarray(fidelities, dtype=float)
        n = f.shape[0]
        se = f.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(f.shape[1])
        return cls(np.asarray(times, dtype=float), f.mean(axis=0), n, se)


@dataclass(frozen=True)
class FitResult:
    model: str
    characteristic_time: float
    rmse: float
    ci_low: float
    ci_high: float

    def __post_init__(self):
        if not self.characteristic_time > 0:
            raise ValueError("characteristic time must be positive")

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _model(model: str):
    if model == "gaussian":
        return lambda t, T: 0.5 * (1.0 + np.exp(-(t / T) ** 2))
    if model == "exponential":
        return lambda t, T: 0.5 * (1.0 + np.exp(-t / T))
    raise ValueError(f"unknown model {model!r}")


def _initial_time(t, f, model):
    target = 0.5 * (1.0 + math.exp(-1.0))
    below = np.nonzero(f <= target)[0]
    if below.size and below[0] > 0:
        i = below[0]
        return float(np.interp(target, [f[i], f[i - 1]], [t[i], t[i - 1]]))
    if below.size:
        return float(t[below[0]])
    # extrapolate from the most decayed point
    i = int(np.argmin(f))
    x = -math.log(max(2.0 * f[i] - 1.0, 1e-12))
    return float(t[i] / (math.sqrt(x) if model == "gaussian" else x))


def _fit_one(t, f, model, t0):
    fn = _model(model)

    def rmse(logT):
        return float(np.sqrt(np.mean((fn(t, math.exp(logT)) - f) ** 2)))

    lo, hi = math.log(t0) - math.log(1e3), math.log(t0) + math.log(1e3)
    res = minimize_scalar(rmse, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10, "maxiter": 500})
    if not res.success:
        raise RuntimeError(f"{model} fit did not converge: {res.message}")
    return math.exp(res.x), res.fun


def fit_curve(curve: FidelityCurve, model: str) -> FitResult:
    """Least-squares fit of the single time constant of ``model``.

    ``gaussian``: ``(1 + exp(-(t/T)^2)) / 2``; ``exponential``:
    ``(1 + exp(-t/T)) / 2``.  The 95% interval comes from refitting the
    curves ``mean -/+ 1.96 stderr``.
    """
    _model(model)
    t, f = curve.times, curve.mean_fidelity
    if len(t) < 3:
        raise ValueError("need at least 3 points to fit")
    if f.min() >= 0.999:
        raise NoDecayError("no measurable decay (all fidelities >= 0.999)")
    t0 = _initial_time(t, f, model)
    T, err = _fit_one(t, f, model, t0)
    bounds = []
    for sign in (-1.0, 1.0):
        fb = np.clip(f + sign * 1.96 * curve.stderr, 0.0, 1.0)
        if fb.min() >= 0.999:
            bounds.append(math.inf)
            continue
        bounds.append(_fit_one(t, fb, model, _initial_time(t, fb, model))[0])
    lo, hi = min(bounds), max(bounds)
    return FitResult(model, T, err, min(lo, T), max(hi, T))


# ----------------------------------------------------------------------------
# T <-> S0 conversions


def t2_from_s0(s0: float, tm: float = TM_DEFAULT, c: float = C_LARMOR) -> float:
    """``T2* = 1 / (2 pi sqrt(S0 (ln tm - C)))`` (``tm`` in us)."""
    return 1.0 / (2 * math.pi * math.sqrt(s0 * (math.log(tm) - c)))


def s0_from_t2(t2: float, tm: float = TM_DEFAULT, c: float = C_LARMOR) -> float:
    return 1.0 / ((2 * math.pi * t2) ** 2 * (math.log(tm) - c))


def tj_from_s0(s0_ve: float, tm: float = TM_DEFAULT, a: float = A_EXCHANGE,
               c: float = C_EXCHANGE) -> float:
    return 1.0 / (a * 2 * math.pi * math.sqrt(s0_ve * (math.log(tm) - c)))


def s0_from_tj(tj: float, tm: float = TM_DEFAULT, a: float = A_EXCHANGE,
               c: float = C_EXCHANGE) -> float:
    return 1.0 / ((a * 2 * math.pi * tj) ** 2 * (math.log(tm) - c))


# ----------------------------------------------------------------------------
# Ramsey experiments


def _check_delays(delays) -> np.ndarray:
    d = np.asarray(delays, dtype=float)
    if d.ndim != 1 or len(d) < 3:
        raise ValueError("need at least 3 delay points")
    if np.any(d <= 0) or np.any(np.diff(d) <= 0):
        raise ValueError("delays must be positive and increasing")
    return d


def _fit_or_none(curve, model):
    if len(curve.times) < 3:
        log.info("fit skipped: only %d points", len(curve.times))
        return None
    try:
        return fit_curve(curve, model)
    except NoDecayError as exc:
        log.info("fit skipped: %s", exc)
        return None


def ramsey_one_qubit(s0: float, tm: float, ts: float, delays, trials: int, seed,
                     model: str = "gaussian"):
    """Free-induction decay of ``|+>`` under independent pink-noise traces.

    Returns ``(curve, fit)``; ``fit`` is ``None`` when there is no decay.
    """
    d = _check_delays(delays)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    spec = PsdSpec(s0)
    n_win = int(math.ceil(d[-1] / ts)) + 1
    fids = np.empty((trials, len(d)))
    for i in range(trials):
        tr = _trace(spec, tm, ts, n_win, seed, (3, i))
        phi = 2 * math.pi * tr.integral(d)
        # |<+| Rz(phi) |+>|^2
        fids[i] = np.cos(0.5 * phi) ** 2
    curve = FidelityCurve.from_trials(d, fids)
    return curve, _fit_or_none(curve, model)


def _trace(spec, tm, ts, n_win, seed, key):
    from .noise import _make_trace
    return _make_trace(spec, tm, ts, n_win, seed, key)


def _two_qubit_step(j, delta, ts):
    """Per-sample propagator entries of the ``{|01>, |10>}`` block."""
    h0 = -0.25 * j
    hx = 0.5 * j
    hz = 0.5 * delta
    r = np.hypot(hx, hz)
    c, s = np.cos(2 * np.pi * r * ts), np.sin(2 * np.pi * r * ts)
    g = np.exp(-2j * np.pi * h0 * ts)
    u00 = g * (c - 1j * s * hz / r)
    u11 = g * (c + 1j * s * hz / r)
    u01 = g * (-1j * s * hx / r)
    return u00, u01, u11


def ramsey_two_qubit(s0_ve: float, j0: float, tm: float, ts: float, delays, trials: int, seed,
                     delta_e: float = 10.0, fit: ExchangeFit | None = None,
                     s0_omega: float = 0.0, model: str = "gaussian"):
    """Exchange-noise Ramsey: ``|+>|0>`` under constant ``J = J0 exp(b dVE)``.

    The fidelity is taken against the noiseless evolution with ``J = J0``.
    ``delays`` are rounded to whole samples.
    """
    d = _check_delays(delays)
    fit = fit or default_exchange_fit()
    steps = np.rint(d / ts).astype(int)
    if np.any(steps < 1) or np.any(np.diff(steps) <= 0):
        raise ValueError("delays must be distinct multiples of ts")
    n = int(steps[-1])
    ve = np.empty((trials, n))
    w1 = np.zeros((trials, n))
    w2 = np.zeros((trials, n))
    for i in range(trials):
        ve[i] = _trace(PsdSpec(s0_ve), tm, ts, n, seed, (4, i)).samples
        if s0_omega > 0:
            w1[i] = _trace(PsdSpec(s0_omega), tm, ts, n, seed, (5, 2 * i)).samples
            w2[i] = _trace(PsdSpec(s0_omega), tm, ts, n, seed, (5, 2 * i + 1)).samples
    j = j0 * np.exp(fit.b * ve)
    delta = w1 - w2 - delta_e
    u00, u01, u11 = _two_qubit_step(j, delta, ts)
    # outer |00> phase: J/4 + (dw1 + dw2 + dE)/2 per unit time
    p00 = np.exp(-2j * np.pi * (0.25 * j + 0.5 * (w1 + w2 + delta_e)) * ts)
    r00, r01, r11 = _two_qubit_step(np.array(j0), np.array(-delta_e), ts)
    rp00 = np.exp(-2j * np.pi * (0.25 * j0 + 0.5 * delta_e) * ts)
    # state components: a = <00|, (b, c) = (<01|, <10|)
    a = np.full(trials, 1 / math.sqrt(2), dtype=complex)
    b = np.zeros(trials, dtype=complex)
    c = np.full(trials, 1 / math.sqrt(2), dtype=complex)
    ra, rb, rc = 1 / math.sqrt(2) + 0j, 0j, 1 / math.sqrt(2) + 0j
    fids = np.empty((trials, len(d)))
    k = 0
    for s in range(n):
        a = p00[:, s] * a
        b, c = u00[:, s] * b + u01[:, s] * c, u01[:, s] * b + u11[:, s] * c
        ra = rp00 * ra
        rb, rc = r00 * rb + r01 * rc, r01 * rb + r11 * rc
        if s + 1 == steps[k]:
            ov = np.conj(ra) * a + np.conj(rb) * b + np.conj(rc) * c
            fids[:, k] = np.abs(ov) ** 2
            k += 1
    curve = FidelityCurve.from_trials(steps * ts, np.clip(fids, 0, 1))
    return curve, _fit_or_none(curve, model)


# ----------------------------------------------------------------------------
# logical memory


@dataclass(frozen=True)
class MemoryConfig:
    """Memory experiment settings.

    ``rounds`` syndrome cycles are run; the fidelity is recorded after every
    second round (each completed decoding window).
    """

    variant: str = "standard"
    p_gate: str = "pi"
    s0_omega: float = 0.0
    s0_ve: float = 0.0
    tm: float = TM_DEFAULT
    ts: float = TS_DEFAULT
    mode: str = "uncorrelated"
    rounds: int = 20
    trials: int = 10
    initial: str = "plus"
    shuttle: ShuttleConfig = field(default_factory=ShuttleConfig)
    hw: HardwareConfig = field(default_factory=HardwareConfig)
    grids: LibraryGrids | None = None

    def __post_init__(self):
        if self.rounds < 3:
            raise ValueError("rounds must be >= 3")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.initial not in ("zero", "plus"):
            raise ValueError("initial must be 'zero' or 'plus'")
        if self.s0_omega < 0 or self.s0_ve < 0:
            raise ValueError("noise intensities must be >= 0")

    def resolved_grids(self) -> LibraryGrids:
        """Default grids, widened when 6 sigma of the noise leaves them."""
        if self.grids is not None:
            return self.grids
        var_w = 2 * self.s0_omega * math.log(self.tm / (2 * self.ts))
        var_v = 2 * self.s0_ve * math.log(self.tm / (2 * self.ts))
        g = LibraryGrids()
        if 6 * math.sqrt(var_w) > g.omega_bound or 6 * math.sqrt(var_v) > g.ve_bound:
            return LibraryGrids(omega_bound=0.8, omega_points=321, ve_bound=13.0, ve_points=131)
        return g

    def digest(self) -> str:
        blob = json.dumps(_jsonable(dataclasses.asdict(self)), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


_LIB_CACHE: dict = {}


def get_library(hw: HardwareConfig, grids: LibraryGrids, cache_dir=None,
                fit: ExchangeFit | None = None) -> NoisyGateLibrary:
    """Library from memory, then ``cache_dir``, else precomputed (and cached)."""
    fit = fit or default_exchange_fit()
    key = library_hash(hw, grids, fit)
    if key in _LIB_CACHE:
        return _LIB_CACHE[key]
    path = Path(cache_dir) / f"library-{key}.npz" if cache_dir else None
    if path is not None and path.exists():
        lib = NoisyGateLibrary.load(path, expect_hash=key)
    else:
        lib = precompute_library(hw, grids, fit)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            lib.save(tmp)
            tmp.replace(path)
    _LIB_CACHE[key] = lib
    return lib


def _phase_diag(theta):
    """Diagonal of ``Rz(theta)`` as ``(..., 2)``."""
    h = 0.5 * np.asarray(theta)
    return np.stack([np.exp(-1j * h), np.exp(1j * h)], axis=-1)


class _Checkpoint:
    """Exact fidelity after a closing perfect round, averaged over its outcomes."""

    def __init__(self, layout, decoder: WindowDecoder, initial: str):
        self.decoder = decoder
        zero = logical_data_state(layout, "zero")
        lx, lz = layout.logical_masks()["X"], layout.logical_masks()["Z"]
        one = apply_pauli(StateVector(N_DATA, zero.copy()), *lx).amplitudes
        # representative error for every syndrome (per colour, fewest qubits)
        reps = {}
        for c in COLORS:
            best = {}
            for m in sorted(range(1 << N_DATA), key=lambda v: bin(v).count("1")):
                x, z = correction_masks(layout, c, m)
                s = decoder.syndrome(x, z)
                best.setdefault(s, (x, z))
            reps[c] = best
        self.rep = np.zeros((1 << N_ANC, 2), dtype=np.int64)
        cols = np.zeros((1 << N_DATA, 1 << N_DATA), dtype=complex)
        for sx, (ax, az) in reps["X"].items():
            for sz, (bx, bz) in reps["Z"].items():
                s = sx | sz
                x, z = ax ^ bx, az ^ bz
                self.rep[s] = (x, z)
                cols[:, 2 * s] = apply_pauli(StateVector(N_DATA, zero.copy()), x, z).amplitudes
                cols[:, 2 * s + 1] = apply_pauli(StateVector(N_DATA, one.copy()), x, z).amplitudes
        if not np.allclose(cols.conj().T @ cols, np.eye(1 << N_DATA), atol=1e-9):
            raise AssertionError("syndrome basis is not orthonormal")
        self.basis_h = cols.conj().T
        self.lx, self.lz = lx, lz
        self.psi = np.array([1, 0], complex) if initial == "zero" \
            else np.array([1, 1], complex) / math.sqrt(2)
        self.all_s = np.arange(1 << N_ANC)

    @staticmethod
    def _anti(x, z, mask):
        px = np.bitwise_count(x & mask[1]) if hasattr(np, "bitwise_count") else _popcount(x & mask[1])
        pz = np.bitwise_count(z & mask[0]) if hasattr(np, "bitwise_count") else _popcount(z & mask[0])
        return (px + pz) & 1

    def fidelity(self, data: np.ndarray, e0: int) -> float:
        coef = (self.basis_h @ data).reshape(-1, 2)
        cx, cz = self.decoder.correction(e0, self.all_s ^ e0, 0)
        tx = cx ^ self.rep[:, 0]
        tz = cz ^ self.rep[:, 1]
        has_x = self._anti(tx, tz, self.lz).astype(bool)   # X_L part
        has_z = self._anti(tx, tz, self.lx).astype(bool)   # Z_L part
        c0, c1 = coef[:, 0].copy(), coef[:, 1].copy()
        c1 = np.where(has_z, -c1, c1)
        c0, c1 = np.where(has_x, c1, c0), np.where(has_x, c0, c1)
        ov = np.conj(self.psi[0]) * c0 + np.conj(self.psi[1]) * c1
        return float(np.sum(np.abs(ov) ** 2))


def _popcount(a):
    a = np.asarray(a, dtype=np.int64)
    out = np.zeros_like(a)
    while np.any(a):
        out += a & 1
        a = a >> 1
    return out


class MemoryRunner:
    """Executes noisy syndrome rounds with decoding for one configuration.

    Single-qubit gates and idles are accumulated per qubit and folded into
    the next two-qubit gate (or applied before readout / at checkpoints),
    so the 17-qubit register is touched only by the two-qubit gates, the
    ancilla pre-readout gates and the readout itself.
    """

    def __init__(self, config: MemoryConfig, library: NoisyGateLibrary | None = None,
                 tables: dict[str, LookupTable] | None = None, cache_dir=None):
        self.config = config
        self.layout = surface17_layout(config.variant)
        base = build_surface17_schedule(config.variant, config.p_gate, config.hw)
        self.circuit: ScheduledCircuit = insert_shuttling(base, config.shuttle)
        self.t_qec = self.circuit.duration
        self.lib = library or get_library(config.hw, config.resolved_grids(), cache_dir)
        self.tables = tables or build_tables(self.layout, base, cache_dir)
        self.decoder = WindowDecoder(self.layout, self.tables)
        self.check = _Checkpoint(self.layout, self.decoder, config.initial)
        self.edge_index = {e: i for i, e in enumerate(self.layout.edges)}
        self._plan = self._compile()
        self.psi0 = logical_data_state(self.layout, config.initial)

    # -- schedule compilation ---------------------------------------------
    def _compile(self):
        plan = []
        t = 0.0
        n_q = N_DATA + N_ANC
        for s in self.circuit.steps:
            busy = set()
            groups = {}
            partial = []
            if s.kind in ("drive-1q", "shift-1q"):
                for q, g in s.gates.items():
                    groups.setdefault(g, []).append(q)
                    gd = self.config.hw.duration(g)
                    busy.add(q)
                    if gd < s.duration - 1e-12:
                        partial.append((q, gd))
            pairs = np.array(s.pairs, dtype=np.int64).reshape(-1, 2)
            busy |= set(pairs.ravel().tolist())
            if s.kind == "measure":
                idle = list(range(N_DATA))
            elif s.kind == "shuttle":
                idle = list(range(n_q))
            else:
                idle = [q for q in range(n_q) if q not in busy]
            scale = np.ones(len(idle))
            if s.kind == "shuttle":
                scale[np.array(idle) >= N_DATA] = 1.0 / self.config.shuttle.gamma
            edges = np.array([self.edge_index[tuple(p)] for p in s.pairs], dtype=np.int64)
            plan.append(dict(kind=s.kind, t0=t, dur=s.duration,
                             groups={g: np.array(q) for g, q in groups.items()},
                             partial=partial, pairs=pairs, edges=edges,
                             idle=np.array(idle, dtype=np.int64), scale=scale))
            t += s.duration
        return plan

    # -- noise access ----------------------------------------------------
    def _noise(self, seed, trial: int, rounds: int):
        cfg = self.config
        window = rounds * self.t_qec + 2 * cfg.ts
        field_ = build_noise_field(self.layout, cfg.mode, PsdSpec(cfg.s0_omega),
                                   PsdSpec(cfg.s0_ve), cfg.tm, cfg.ts,
                                   np.random.SeedSequence(_entropy(seed), spawn_key=(trial,)),
                                   window=window)
        w = np.stack([field_.qubit_traces[q].samples for q in self.layout.qubits])
        v = np.stack([field_.pair_traces[e].samples for e in self.layout.edges])
        cum = np.concatenate([np.zeros((w.shape[0], 1)), np.cumsum(w, axis=1) * cfg.ts], axis=1)
        return w, v, cum

    def _idx(self, t):
        return int(math.floor(t / self.config.ts + 1e-9))

    def _integral(self, w, cum, qs, t0, t1):
        """Exact integrals of the piecewise-constant traces over ``[t0, t1]``."""
        ts = self.config.ts

        def at(t):
            k = self._idx(t)
            return cum[qs, k] + (t - k * ts) * w[qs, k]
        return at(t1) - at(t0)

    # -- one trial ---------------------------------------------------------
    def run_trial(self, seed, trial: int = 0, rounds: int | None = None,
                  inject: dict | None = None, record: list | None = None) -> np.ndarray:
        """Fidelities after rounds ``2, 4, ...`` for one noise realisation.

        ``inject`` maps a round number to a data Pauli ``(x, z)`` applied
        just before that round (fault-injection tests).  ``record``, when
        given, receives the frame-adjusted syndromes.
        """
        cfg = self.config
        rounds = rounds or cfg.rounds
        w, v, cum = self._noise(seed, trial, rounds)
        rng = rng_for(_entropy(seed), 2, trial)
        lib = self.lib
        n_q = N_DATA + N_ANC
        eye = np.eye(2, dtype=complex)
        pend = np.tile(eye, (n_q, 1, 1))
        data = self.psi0.copy()
        m_prev = 0
        s_hist = [0]
        fx = fz = 0
        out = []
        for r in range(1, rounds + 1):
            if inject and r in inject:
                data = self._apply_pend(data, pend)
                pend = np.tile(eye, (n_q, 1, 1))
                data = apply_pauli(StateVector(N_DATA, data), *inject[r]).amplitudes
            full = np.zeros(1 << n_q, dtype=complex)
            full[m_prev << N_DATA:(m_prev + 1) << N_DATA] = data
            state = StateVector(n_q, full)
            t_round = (r - 1) * self.t_qec
            for st in self._plan:
                t0 = t_round + st["t0"]
                k0 = self._idx(t0)
                t1 = t0 + st["dur"]
                for g, qs in st["groups"].items():
                    u = lib.one_qubit_gate(g, w[qs, k0])
                    pend[qs] = u @ pend[qs]
                for q, gd in st["partial"]:
                    th = 2 * np.pi * self._integral(w, cum, [q], t0 + gd, t1)
                    pend[q] *= _phase_diag(th)[0][:, None]
                if len(st["idle"]):
                    th = 2 * np.pi * st["scale"] * self._integral(w, cum, st["idle"], t0, t1)
                    pend[st["idle"]] *= _phase_diag(th)[:, :, None]
                if len(st["pairs"]):
                    a, d = st["pairs"][:, 0], st["pairs"][:, 1]
                    p = lib.p_gate(cfg.p_gate, w[a, k0], w[d, k0], v[st["edges"], k0])
                    kr = np.einsum("nab,ncd->nacbd", pend[a], pend[d]).reshape(-1, 4, 4)
                    u2 = p @ kr
                    for i in range(len(a)):
                        apply_unitary(state, u2[i], (int(a[i]), int(d[i])))
                    pend[a] = eye
                    pend[d] = eye
                if st["kind"] == "measure":
                    for q in range(N_DATA, n_q):
                        apply_unitary(state, pend[q], (q,))
                        pend[q] = eye
                    m, low = measure_block(state, N_DATA, rng)
                    data = low.copy()
                    s_hist.append(m ^ m_prev)
                    m_prev = m
            if record is not None:
                record.append(s_hist[-1])
            if r % 2 == 0:
                s0_, s1_, s2_ = s_hist[r - 2], s_hist[r - 1], s_hist[r]
                e0 = s0_ ^ self.decoder.syndrome(fx, fz)
                cx, cz = self.decoder.correction(e0, s1_ ^ s0_, s2_ ^ s1_)
                fx ^= int(cx)
                fz ^= int(cz)
                cur = self._apply_pend(data, pend)
                cur = apply_pauli(StateVector(N_DATA, cur), fx, fz).amplitudes
                e0c = s2_ ^ self.decoder.syndrome(fx, fz)
                out.append(self.check.fidelity(cur, e0c))
        return np.array(out)

    @staticmethod
    def _apply_pend(data, pend):
        st = StateVector(N_DATA, data.copy())
        for q in range(N_DATA):
            if not np.allclose(pend[q], np.eye(2), atol=0, rtol=0):
                apply_unitary(st, pend[q], (q,))
        return st.amplitudes

    def checkpoint_times(self, rounds: int | None = None) -> np.ndarray:
        rounds = rounds or self.config.rounds
        return self.t_qec * np.arange(2, rounds + 1, 2)

    def run(self, seed, workers: int = 1) -> np.ndarray:
        """``(trials, checkpoints)`` fidelity array, ordered by trial."""
        trials = range(self.config.trials)
        if workers <= 1:
            return np.array([self.run_trial(seed, i) for i in trials])
        import multiprocessing as mp
        global _WORKER_RUNNER
        _WORKER_RUNNER = self
        with mp.get_context("fork").Pool(workers) as pool:
            res = pool.starmap(_worker_trial, [(seed, i) for i in trials])
        return np.array(res)


_WORKER_RUNNER: MemoryRunner | None = None


def _worker_trial(seed, i):
    return _WORKER_RUNNER.run_trial(seed, i)


def _entropy(seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.entropy)
    return int(seed)


def logical_memory(config: MemoryConfig, seed, library: NoisyGateLibrary | None = None,
                   tables=None, cache_dir=None, workers: int = 1, model: str = "exponential"):
    """Run the memory experiment; returns ``(curve, fit, runner)``.

    ``fit`` is ``None`` when the curve shows no decay.
    """
    runner = MemoryRunner(config, library, tables, cache_dir)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fids = runner.run(seed, workers)
    curve = FidelityCurve.from_trials(runner.checkpoint_times(), np.clip(fids, 0, 1))
    if runner.lib.clip_count:
        log.warning("%d deviations clipped to the library grid", runner.lib.clip_count)
    return curve, _fit_or_none(curve, model), runner


# ----------------------------------------------------------------------------
# sweeps


def loglog_slope(x, y) -> float:
    """Ordinary least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 2:
        raise ValueError("need at least 2 points")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def fit_shuttle_model(t_shut, t2l, t2: float, t_qec: float) -> tuple[float, float]:
    """Fit ``T2L = A T2^4 / (B t_qec + 4 t_shut)^3``; returns ``(A, B)``.

    ``T2L^(-1/3)`` is linear in ``t_shut``, so this is an ordinary
    least-squares line through the transformed points.
    """
    x = np.asarray(t_shut, float)
    y = np.asarray(t2l, float) ** (-1.0 / 3.0)
    if len(x) < 2 or np.ptp(x) == 0:
        raise ValueError("need at least 2 distinct shuttle times")
    slope, icpt = np.polyfit(x, y, 1)
    if not slope > 0:
        raise ValueError("T2L does not decrease with the shuttle time")
    a = (4.0 / slope) ** 3 / t2**4
    return float(a), float(4.0 * icpt / (slope * t_qec))


def fit_dephasing_constants(tm, t_star, s0: float) -> tuple[float, float]:
    """Fit ``T* = 1 / (A 2 pi sqrt(S0 (ln tm - C)))`` over a ``tm`` sweep.

    ``(2 pi T*)^-2 / S0 = A^2 (ln tm - C)`` is linear in ``ln tm``; returns
    ``(A, C)`` from the least-squares line.
    """
    x = np.log(np.asarray(tm, float))
    y = (2 * math.pi * np.asarray(t_star, float)) ** -2 / s0
    if len(x) < 2 or np.ptp(x) == 0:
        raise ValueError("need at least 2 distinct tm values")
    slope, icpt = np.polyfit(x, y, 1)
    if not slope > 0:
        raise ValueError("T* does not decrease with tm")
    return float(math.sqrt(slope)), float(-icpt / slope)


_AXES = ("t2", "tj", "joint", "shuttle")


def scaling_sweep(axis: str, grid: Sequence[float], fixed: dict, trials: int, seed,
                  rounds=None, cache_dir=None, workers: int = 1) -> list[dict]:
    """Logical memory time over a 1-D parameter grid.

    ``axis``: ``t2`` (T2* in us), ``tj`` (T_J* in us), ``joint`` (T2* with
    ``T_J* = T2* / ratio``, ``ratio`` from ``fixed``) or ``shuttle``
    (shuttle time in us).  ``fixed`` holds the other settings: ``t2``,
    ``tj`` (``None`` = no exchange noise), ``ratio``, ``tm``, ``ts``,
    ``variant``, ``p_gate``, ``mode``, ``initial``, ``gamma``, ``tau``.
    ``rounds`` is an int or a per-point sequence.
    """
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {_AXES}")
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    tm = fixed.get("tm", TM_DEFAULT)
    rows = []
    for i, x in enumerate(grid):
        t2 = fixed.get("t2")
        tj = fixed.get("tj")
        shuttle = ShuttleConfig(0, fixed.get("tau", 0.01), fixed.get("gamma", 1.0))
        if axis == "t2":
            t2 = x
        elif axis == "tj":
            tj = x
        elif axis == "joint":
            t2, tj = x, x / fixed["ratio"]
        else:
            tau = fixed.get("tau", 0.01)
            shuttle = ShuttleConfig(int(round(x / tau)), tau, fixed.get("gamma", 1.0))
        n_r = rounds[i] if isinstance(rounds, (list, tuple, np.ndarray)) else (rounds or 20)
        cfg = MemoryConfig(
            variant=fixed.get("variant", "standard"), p_gate=fixed.get("p_gate", "pi"),
            s0_omega=s0_from_t2(t2, tm) if t2 else 0.0,
            s0_ve=s0_from_tj(tj, tm) if tj else 0.0,
            tm=tm, ts=fixed.get("ts", TS_DEFAULT), mode=fixed.get("mode", "uncorrelated"),
            rounds=int(n_r), trials=trials, initial=fixed.get("initial", "plus"),
            shuttle=shuttle)
        sub = np.random.SeedSequence(_entropy(seed), spawn_key=(7, i))
        curve, fit, runner = logical_memory(cfg, int(sub.generate_state(1)[0]),
                                            cache_dir=cache_dir, workers=workers)
        rows.append({
            "axis": axis, "x": x, "t2": t2, "tj": tj, "t_shut": shuttle.t_shut,
            "t_qec": runner.t_qec, "rounds": cfg.rounds, "trials": trials,
            "final_fidelity": float(curve.mean_fidelity[-1]),
            "t2l": fit.characteristic_time if fit else math.inf,
            "ci_low": fit.ci_low if fit else math.inf,
            "ci_high": fit.ci_high if fit else math.inf,
            "rmse": fit.rmse if fit else 0.0,
        })
        log.info("sweep %s=%g: T2L=%s", axis, x, rows[-1]["t2l"])
    return rows


# ----------------------------------------------------------------------------
# output


def write_curve_csv(path, curve: FidelityCurve) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time_us", "mean_fidelity", "stderr", "trials"])
        for t, f, s in zip(curve.times, curve.mean_fidelity, curve.stderr):
            wr.writerow([f"{t:.6g}", f"{f:.10f}", f"{s:.3e}", curve.n_trials])
    tmp.replace(path)


def write_summary_json(path, payload: dict) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True, default=str))
    tmp.replace(path)
