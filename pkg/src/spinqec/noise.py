"""Pink-noise synthesis, spatial noise fields and the exchange-coupling map.

Units used throughout the package: times in microseconds, frequencies in
MHz, exchange-gate potentials in mV.  A phase accumulated under a frequency
deviation ``df`` over a time ``t`` is therefore ``2*pi*df*t``.

The intensity ``s0`` is defined through the two-sided spectral density
``S(f) = s0 / |f|**alpha`` (Wiener-Khinchin convention), so the equivalent
one-sided density used to fill positive-frequency bins is ``2*s0/f**alpha``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "PsdSpec",
    "TimeTrace",
    "ExchangeFit",
    "NoiseField",
    "rng_for",
    "band_variance",
    "bin_variances",
    "generate_pink_trace",
    "generate_pink_window",
    "build_noise_field",
    "fit_exchange_curve",
    "load_exchange_curve",
    "default_exchange_fit",
    "ve_to_delta_j",
    "save_trace",
    "load_trace",
]

UNCORRELATED = "uncorrelated"
CORRELATED = "correlated"
_MODES = (UNCORRELATED, CORRELATED)

# Stream identifiers used in seed-sequence spawn keys.
_QUBIT_STREAM = 0
_PAIR_STREAM = 1


@dataclass(frozen=True)
class PsdSpec:
    """Power-law spectral density ``s0/|f|**alpha``.

    Parameters
    ----------
    s0 : float
        Noise intensity (MHz**2 for Larmor traces, mV**2 for exchange-gate
        traces).
    alpha : float
        Spectral exponent, 1 for pink noise.
    """

    s0: float
    alpha: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.s0) or self.s0 < 0:
            raise ValueError(f"s0 must be finite and >= 0, got {self.s0}")
        if not 0.0 <= self.alpha <= 2.0:
            raise ValueError(f"alpha must lie in [0, 2], got {self.alpha}")


@dataclass(frozen=True, eq=False)
class TimeTrace:
    """A sampled noise sequence, piecewise constant over each sampling step.

    Attributes
    ----------
    samples : ndarray
        Real samples, one per step of length ``ts``.
    ts : float
        Sampling step (us).
    tm : float
        Duration of the underlying noise realisation (us).  A windowed trace
        holds only the first ``len(samples)`` steps of that realisation.
    """

    samples: np.ndarray
    ts: float
    tm: float
    _cumulative: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        if len(samples) > int(round(self.tm / self.ts)):
            raise ValueError("trace longer than tm/ts samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        cum = np.concatenate(([0.0], np.cumsum(samples) * self.ts))
        cum.setflags(write=False)
        object.__setattr__(self, "_cumulative", cum)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        """Time span covered by the stored samples (us)."""
        return len(self.samples) * self.ts

    def _index(self, t):
        idx = np.floor(np.asarray(t, dtype=float) / self.ts + 1e-9).astype(np.int64)
        if np.any(idx < 0) or np.any(idx > len(self.samples)):
            raise ValueError("time outside the trace")
        return np.minimum(idx, len(self.samples) - 1)

    def value_at(self, t):
        """Sample value in effect at time ``t`` (scalar or array)."""
        return self.samples[self._index(t)]

    def integral(self, t):
        """Exact integral of the piecewise-constant trace over ``[0, t]``."""
        t = np.asarray(t, dtype=float)
        idx = self._index(t)
        return self._cumulative[idx] + (t - idx * self.ts) * self.samples[idx]

    def integrate(self, t0, t1):
        """Exact integral over ``[t0, t1]``."""
        return self.integral(t1) - self.integral(t0)


@dataclass(frozen=True)
class ExchangeFit:
    """Exponential exchange curve ``J = a*exp(b*VE)``.

    Attributes
    ----------
    a : float
        Amplitude (MHz).
    b : float
        Sensitivity (1/mV).
    residual : float
        Euclidean norm of the ``ln J`` residuals of the fit.
    """

    a: float
    b: float
    residual: float = 0.0

    def __post_init__(self):
        if not self.a > 0 or not self.b > 0:
            raise ValueError(f"exchange fit needs a > 0 and b > 0, got {self.a}, {self.b}")

    def j_of_ve(self, ve):
        return self.a * np.exp(self.b * np.asarray(ve, dtype=float))

    def ve_of_j(self, j):
        return np.log(np.asarray(j, dtype=float) / self.a) / self.b


@dataclass(frozen=True)
class NoiseField:
    """Per-qubit Larmor traces and per-edge exchange-gate traces."""

    qubit_traces: Mapping[int, TimeTrace]
    pair_traces: Mapping[tuple, TimeTrace]
    mode: str

    @property
    def n_distinct_traces(self) -> int:
        ids = {id(t) for t in self.qubit_traces.values()}
        ids |= {id(t) for t in self.pair_traces.values()}
        return len(ids)


def rng_for(seed, *key: int) -> np.random.Generator:
    """Independent generator for the stream ``key`` under a master seed.

    The stream depends only on ``(seed, key)``, never on call order.
    ``seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    """
    if isinstance(seed, np.random.Generator):
        if key:
            raise TypeError("cannot derive keyed streams from a Generator")
        return seed
    if isinstance(seed, np.random.SeedSequence):
        ss = np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + key)
    else:
        ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def band_variance(spec: PsdSpec, f_lo, f_hi):
    """Variance carried by the band ``[f_lo, f_hi)`` (positive frequencies).

    Integrates the one-sided density ``2*s0/f**alpha``.
    """
    f_lo = np.asarray(f_lo, dtype=float)
    f_hi = np.asarray(f_hi, dtype=float)
    if np.isclose(spec.alpha, 1.0):
        out = np.log(f_hi / f_lo)
    else:
        p = 1.0 - spec.alpha
        out = (f_hi**p - f_lo**p) / p
    return 2.0 * spec.s0 * out


def bin_variances(spec: PsdSpec, n: int, ts: float) -> np.ndarray:
    """Variance of each rfft bin of an ``n``-sample trace.

    Bin ``k >= 1`` represents the band ``[k, k+1)/(n*ts)`` (the last one is
    cut at the Nyquist frequency), so the lowest resolvable frequency is
    ``1/tm`` and the total variance is the exact band integral of the
    density.  The DC bin carries nothing.
    """
    tm = n * ts
    k = np.arange(n // 2 + 1, dtype=float)
    var = np.zeros_like(k)
    f_nyq = 0.5 / ts
    lo = k[1:] / tm
    hi = np.minimum((k[1:] + 1) / tm, f_nyq)
    var[1:] = np.where(hi > lo, band_variance(spec, lo, hi), 0.0)
    return var


def _check_durations(tm: float, ts: float) -> int:
    if not (tm > 0 and ts > 0):
        raise ValueError("durations must be positive")
    if tm <= ts:
        raise ValueError("tm must exceed ts")
    n = int(round(tm / ts))
    if not math.isclose(n * ts, tm, rel_tol=1e-9):
        raise ValueError("tm must be an integer multiple of ts")
    return n


def _unit_spec(spec: PsdSpec) -> PsdSpec:
    return PsdSpec(1.0, spec.alpha)


def generate_pink_trace(spec: PsdSpec, tm: float, ts: float, seed) -> TimeTrace:
    """Full-length pink-noise trace by Fourier filtering.

    Independent complex Gaussian coefficients are drawn for every positive
    frequency bin, shaped by the square root of the band variance (which
    scales as ``1/sqrt(f)`` for pink noise), and inverse-transformed.  The
    trace is synthesised at unit intensity and scaled by ``sqrt(s0)``.

    Parameters
    ----------
    spec : PsdSpec
    tm : float
        Total duration (us); must be a multiple of ``ts``.
    ts : float
        Sampling step (us).
    seed : int or SeedSequence or Generator

    Returns
    -------
    TimeTrace
    """
    n = _check_durations(tm, ts)
    rng = rng_for(seed)
    var = bin_variances(_unit_spec(spec), n, ts)
    g = rng.standard_normal((2, len(var)))
    coef = 0.5 * n * np.sqrt(var) * (g[0] + 1j * g[1])
    if n % 2 == 0:
        # the Nyquist bin is real
        coef[-1] = n * np.sqrt(var[-1]) * g[0, -1]
    x = np.fft.irfft(coef, n)
    return TimeTrace(math.sqrt(spec.s0) * x, ts, n * ts)


def generate_pink_window(spec: PsdSpec, tm: float, ts: float, n_samples: int,
                         seed, oversample: int = 16) -> TimeTrace:
    """First ``n_samples`` steps of a ``tm``-long pink-noise realisation.

    Avoids the full-length transform when only a short window is needed.
    Frequencies below ``K/tm`` (with ``K = n/(2L)``) are summed explicitly
    using the same bins as :func:`generate_pink_trace`; the rest of the band
    is synthesised on a periodic grid of ``L >= oversample*n_samples``
    points whose bins carry the integrated variance of their band.  The
    covariance over the window matches the full-length generator to
    ``O((n_samples/L)**2)``.
    """
    n = _check_durations(tm, ts)
    if not 0 < n_samples <= n:
        raise ValueError("n_samples must be in (0, tm/ts]")
    L = 1 << int(math.ceil(math.log2(max(2, oversample * n_samples))))
    if 2 * L >= n:
        full = generate_pink_trace(spec, tm, ts, seed)
        return TimeTrace(full.samples[:n_samples], ts, full.tm)
    rng = rng_for(seed)
    unit = _unit_spec(spec)
    t_idx = np.arange(n_samples)

    # low band: explicit bins k = 1 .. K-1 of the full-length grid
    K = max(1, int(round(n / (2 * L))))
    x = np.zeros(n_samples)
    if K > 1:
        k = np.arange(1, K, dtype=float)
        var = band_variance(unit, k / tm, (k + 1) / tm)
        g = rng.standard_normal((2, K - 1))
        amp = np.sqrt(var)
        # sum_k amp_k (g1 cos + g2 sin), chunked to bound memory
        for lo in range(0, K - 1, 256):
            sl = slice(lo, lo + 256)
            ph = 2.0 * np.pi * np.outer(k[sl], t_idx) / n
            x += (amp[sl] * g[0, sl]) @ np.cos(ph) + (amp[sl] * g[1, sl]) @ np.sin(ph)
    else:
        rng.standard_normal((2, 0))

    # high band on the short periodic grid
    df = 1.0 / (L * ts)
    j = np.arange(L // 2 + 1, dtype=float)
    lo_edge = np.maximum((j - 0.5) * df, K / tm)
    hi_edge = np.minimum((j + 0.5) * df, 0.5 / ts)
    var = np.zeros_like(j)
    ok = (j >= 1) & (hi_edge > lo_edge)
    var[ok] = band_variance(unit, lo_edge[ok], hi_edge[ok])
    g = rng.standard_normal((2, len(j)))
    coef = 0.5 * L * np.sqrt(var) * (g[0] + 1j * g[1])
    coef[-1] = L * np.sqrt(var[-1]) * g[0, -1]
    x += np.fft.irfft(coef, L)[:n_samples]
    return TimeTrace(math.sqrt(spec.s0) * x, ts, n * ts)


def _make_trace(spec, tm, ts, n_window, seed, key):
    entropy, spawn_key = _entropy_and_key(seed, key)
    rng_seed = np.random.SeedSequence(entropy, spawn_key=spawn_key)
    if spec.s0 == 0:
        n = _check_durations(tm, ts)
        return TimeTrace(np.zeros(n if n_window is None else n_window), ts, n * ts)
    if n_window is None:
        return generate_pink_trace(spec, tm, ts, rng_seed)
    return generate_pink_window(spec, tm, ts, n_window, rng_seed)


def _entropy_and_key(seed, key):
    if isinstance(seed, np.random.SeedSequence):
        return seed.entropy, tuple(seed.spawn_key) + tuple(key)
    return int(seed), tuple(key)


def build_noise_field(layout, mode: str, omega_spec: PsdSpec, ve_spec: PsdSpec,
                      tm: float, ts: float, seed, window: float | None = None) -> NoiseField:
    """Draw Larmor traces for every qubit and exchange traces for every edge.

    Parameters
    ----------
    layout : object
        Anything exposing ``qubits`` (iterable of ints) and ``edges``
        (iterable of ``(ancilla, data)`` pairs).
    mode : {"uncorrelated", "correlated"}
        Uncorrelated draws each trace from its own stream; correlated shares
        one Larmor trace across all qubits and one exchange trace across all
        edges.
    window : float, optional
        Only materialise the first ``window`` us of each trace.
    """
    if mode not in _MODES:
        raise ValueError(f"unknown correlation mode {mode!r}")
    qubits = list(layout.qubits)
    edges = [tuple(e) for e in layout.edges]
    if not qubits:
        raise ValueError("empty layout")
    n_window = None
    if window is not None:
        n_window = min(int(math.ceil(window / ts - 1e-9)) + 1, _check_durations(tm, ts))
    if mode == CORRELATED:
        wq = _make_trace(omega_spec, tm, ts, n_window, seed, (_QUBIT_STREAM, 0))
        we = _make_trace(ve_spec, tm, ts, n_window, seed, (_PAIR_STREAM, 0))
        return NoiseField({q: wq for q in qubits}, {e: we for e in edges}, mode)
    qt = {q: _make_trace(omega_spec, tm, ts, n_window, seed, (_QUBIT_STREAM, q)) for q in qubits}
    pt = {e: _make_trace(ve_spec, tm, ts, n_window, seed, (_PAIR_STREAM, i))
          for i, e in enumerate(edges)}
    return NoiseField(qt, pt, mode)


def fit_exchange_curve(points: Iterable[Sequence[float]]) -> ExchangeFit:
    """Least-squares fit of ``ln J = ln a + b*VE``."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("need at least two (VE, J) points")
    ve, j = pts[:, 0], pts[:, 1]
    if np.any(j <= 0):
        raise ValueError("J values must be positive")
    if np.ptp(ve) == 0:
        raise ValueError("VE values are all equal")
    A = np.column_stack([np.ones_like(ve), ve])
    coef, *_ = np.linalg.lstsq(A, np.log(j), rcond=None)
    resid = float(np.linalg.norm(A @ coef - np.log(j)))
    return ExchangeFit(float(np.exp(coef[0])), float(coef[1]), resid)


def load_exchange_curve(path=None) -> np.ndarray:
    """Read a two-column ``VE_mV J_MHz`` file (``#`` starts a comment)."""
    if path is None:
        path = resources.files("spinqec") / "data" / "exchange_curve.txt"
    with open(path) as fh:
        data = np.loadtxt(fh, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError("exchange curve file must have two columns")
    return data


def default_exchange_fit() -> ExchangeFit:
    """Fit of the bundled exchange curve."""
    return fit_exchange_curve(load_exchange_curve())


def ve_to_delta_j(j_now, delta_ve, fit: ExchangeFit):
    """Exchange deviation ``J*(exp(b*dVE) - 1)`` caused by a potential shift."""
    j_now = np.asarray(j_now, dtype=float)
    if np.any(j_now < 0):
        raise ValueError("j_now must be >= 0")
    out = j_now * np.expm1(fit.b * np.asarray(delta_ve, dtype=float))
    return out if out.ndim else float(out)


def save_trace(path, trace: TimeTrace, spec: PsdSpec, seed) -> None:
    """Write a trace as CSV with a commented header."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# s0={spec.s0!r} alpha={spec.alpha!r} ts={trace.ts!r} "
                 f"tm={trace.tm!r} seed={seed!r}\n")
        w = csv.writer(fh)
        w.writerow(["t_us", "value"])
        for i, v in enumerate(trace.samples):
            w.writerow([repr(i * trace.ts), repr(float(v))])


def load_trace(path) -> tuple[TimeTrace, dict]:
    """Inverse of :func:`save_trace`; returns the trace and header fields."""
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
        meta = dict(item.split("=", 1) for item in header)
        rows = list(csv.reader(fh))[1:]
    vals = np.array([float(r[1]) for r in rows])
    tr = TimeTrace(vals, float(meta["ts"]), float(meta["tm"]))
    return tr, meta
