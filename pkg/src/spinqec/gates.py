"""Native spin-qubit gates built by integrating the control Hamiltonians.

One-qubit gates follow ``H = (dw + w_add(t))/2 Z + B(t)/2 (cos(phi) X + sin(phi) Y)``
in the frame of the qubit's reference frequency.  The two-qubit gate
follows the Heisenberg Hamiltonian in the frame of qubit 1,
``H = J'(t)/4 (XX + YY + ZZ) + dw1/2 ZI + (dw2 + dE)/2 IZ`` with
``J' = J(t) exp(b dVE)``.  Units are MHz and us; every propagator is
``exp(-2j*pi*H*t)``.

Two-qubit matrices are ordered ``|q1 q2>`` with ``q1`` the most significant
bit, i.e. ``kron(A, B)`` acts with ``A`` on ``q1``.  When such a matrix is
applied to a register, ``targets[0]`` plays the role of ``q1``.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .noise import ExchangeFit, default_exchange_fit

__all__ = [
    "PulseShape",
    "OneQubitParams",
    "TwoQubitParams",
    "HardwareConfig",
    "LibraryGrids",
    "NoisyGateLibrary",
    "gaussian_pulse_params",
    "calibrate_b0",
    "cosine_shift_params",
    "evolve_one_qubit",
    "evolve_two_qubit",
    "two_reference_gate",
    "asymmetry_phase",
    "build_gate",
    "idle",
    "build_sym_corrected_p",
    "build_pi_pulse_p",
    "gate_fidelity",
    "ideal_gate",
    "precompute_library",
    "rz",
    "rotation",
    "ONE_QUBIT_GATES",
]

I2 = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDEAL_P = np.diag([1, 1j, 1j, 1]).astype(complex)

_SQ3 = math.sqrt(3.0)
_GAUSS = (0.5 - _SQ3 / 6.0, 0.5 + _SQ3 / 6.0)

# name -> (kind, angle, drive phase in units of pi/2)
_RECIPES = {
    "X": ("drive", math.pi, 0),
    "Y": ("drive", math.pi, 1),
    "K0": ("drive", math.pi / 2, 0),
    "K1": ("drive", math.pi / 2, 1),
    "K2": ("drive", math.pi / 2, 2),
    "K3": ("drive", math.pi / 2, 3),
    "Z": ("shift", math.pi, 0),
    "S": ("shift", math.pi / 2, 0),
    "Sdag": ("shift", -math.pi / 2, 0),
}
ONE_QUBIT_GATES = tuple(_RECIPES)


# ----------------------------------------------------------------------------
# pulses


@dataclass(frozen=True)
class PulseShape:
    """Control envelope on ``[0, tpulse]``.

    ``kind`` is ``"square"``, ``"gaussian"`` (centred, width ``sigma``) or
    ``"cosine"`` (``amplitude/2 * (1 - cos(2 pi t / tpulse))``).
    """

    kind: str
    amplitude: float
    tpulse: float
    sigma: float | None = None
    floor_b: float | None = None

    def __post_init__(self):
        if self.kind not in ("square", "gaussian", "cosine"):
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if not self.tpulse > 0:
            raise ValueError("tpulse must be positive")
        if self.kind == "gaussian":
            if not (self.sigma and self.sigma > 0):
                raise ValueError("gaussian pulse needs sigma > 0")
            if self.floor_b is not None and not 0 < self.floor_b < abs(self.amplitude):
                raise ValueError("gaussian pulse needs 0 < floor_b < amplitude")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "square":
            return np.full_like(t, self.amplitude)
        if self.kind == "cosine":
            return 0.5 * self.amplitude * (1.0 - np.cos(2.0 * np.pi * t / self.tpulse))
        u = t - 0.5 * self.tpulse
        return self.amplitude * np.exp(-u * u / (2.0 * self.sigma**2))

    def area(self) -> float:
        """Exact integral of the envelope over the pulse."""
        if self.kind == "square":
            return self.amplitude * self.tpulse
        if self.kind == "cosine":
            return 0.5 * self.amplitude * self.tpulse
        s = self.sigma
        return self.amplitude * s * math.sqrt(2 * math.pi) * math.erf(
            self.tpulse / (2 * math.sqrt(2) * s))

    def scaled(self, factor: float) -> "PulseShape":
        return replace(self, amplitude=self.amplitude * factor)


def gaussian_pulse_params(theta_target: float, b0: float, floor_b: float):
    """Width and duration of a truncated Gaussian drive.

    The pulse is cut where it falls to ``floor_b``, and its width is set so
    that the rotation angle ``2*pi*int B`` equals ``theta_target``.

    Returns
    -------
    sigma, tpulse : float
        In us when ``b0`` is in MHz.
    """
    if not 0 < floor_b < b0:
        raise ValueError("need 0 < floor_b < b0")
    if not theta_target > 0:
        raise ValueError("theta_target must be positive")
    root = math.sqrt(math.log(b0 / floor_b))
    sigma = theta_target / ((2 * math.pi) ** 1.5 * b0 * math.erf(root))
    return sigma, 2.0 * sigma * math.sqrt(2.0) * root


def calibrate_b0(theta_target: float, tpulse: float, floor_b: float) -> float:
    """Drive amplitude giving a Gaussian pulse of duration ``tpulse``."""
    def gap(b0):
        return gaussian_pulse_params(theta_target, b0, floor_b)[1] - tpulse
    return brentq(gap, floor_b * 1.0001 + 1e-9, 1e3, xtol=1e-14, rtol=1e-14)


def cosine_shift_params(zeta_target: float, omega0: float) -> float:
    """Duration of a cosine frequency-shift pulse rotating by ``zeta_target``."""
    if omega0 == 0:
        raise ValueError("omega0 must be non-zero")
    tp = zeta_target / (math.pi * omega0)
    if tp < 0:
        raise ValueError("zeta_target and omega0 must share a sign")
    return tp


# ----------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class HardwareConfig:
    """Pulse-level hardware parameters (MHz, us).

    ``b0 = None`` means: calibrate the drive amplitude so that a Gaussian
    pi-rotation lasts ``tp_pi``.
    """

    b0: float | None = None
    tp_pi: float = 1.0
    floor_b: float = 1e-6
    omega0: float = 5.0
    delta_e_rz: float = 10.0
    j0: float = 2.0
    tp_2q: float = 0.5
    j_pulse: str = "cosine"
    t_meas: float = 1.0
    dt: float = 1e-3
    order: int = 4

    def __post_init__(self):
        for name in ("tp_pi", "floor_b", "omega0", "tp_2q", "t_meas", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"hardware.{name} must be positive")
        if self.b0 is not None and not self.b0 > self.floor_b:
            raise ValueError("hardware.b0 must exceed floor_b")
        if self.order not in (2, 4):
            raise ValueError("hardware.order must be 2 or 4")

    @property
    def drive_amplitude(self) -> float:
        if self.b0 is not None:
            return self.b0
        return _calibrated_b0(math.pi, self.tp_pi, self.floor_b)

    def pulse(self, name: str) -> tuple[PulseShape, float]:
        """Envelope and drive phase of a one-qubit native gate."""
        kind, angle, quarter = _recipe(name)
        if kind == "drive":
            b0 = self.drive_amplitude
            sigma, tp = gaussian_pulse_params(angle, b0, self.floor_b)
            return PulseShape("gaussian", b0, tp, sigma, self.floor_b), quarter * math.pi / 2
        w0 = math.copysign(self.omega0, angle)
        return PulseShape("cosine", w0, cosine_shift_params(angle, w0)), 0.0

    def duration(self, name: str) -> float:
        if name in ("P", "P_sym"):
            return self.tp_2q
        if name == "P_pi":
            return 2 * self.tp_2q + 2 * self.duration("X")
        return self.pulse(name)[0].tpulse

    def j_shape(self, amplitude: float | None = None) -> PulseShape:
        amp = self.j0 if amplitude is None else amplitude
        if self.j_pulse == "gaussian":
            # same area as the cosine pulse, cut at 1% of the peak
            sigma = self.tp_2q / (2 * math.sqrt(2 * math.log(100.0)))
            g = PulseShape("gaussian", 1.0, self.tp_2q, sigma)
            return replace(g, amplitude=0.5 * amp * self.tp_2q / g.area())
        if self.j_pulse == "square":
            return PulseShape("square", 0.5 * amp, self.tp_2q)
        return PulseShape("cosine", amp, self.tp_2q)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


_B0_CACHE: dict = {}


def _calibrated_b0(theta, tp, floor_b):
    key = (theta, tp, floor_b)
    if key not in _B0_CACHE:
        _B0_CACHE[key] = calibrate_b0(theta, tp, floor_b)
    return _B0_CACHE[key]


def _recipe(name: str):
    if name not in _RECIPES:
        raise ValueError(f"unknown gate {name!r}; native set is {ONE_QUBIT_GATES}")
    return _RECIPES[name]


@dataclass(frozen=True)
class OneQubitParams:
    """Inputs of a one-qubit integration.  ``delta_omega_l`` may be an array
    to integrate a whole batch of detunings at once."""

    delta_omega_l: float | np.ndarray = 0.0
    phi: float = 0.0
    drive: PulseShape | None = None
    shift: PulseShape | None = None
    duration: float | None = None

    def __post_init__(self):
        if self.drive is not None and self.shift is not None:
            raise ValueError("a gate uses either a drive or a frequency shift, not both")

    @property
    def tpulse(self) -> float:
        for p in (self.drive, self.shift):
            if p is not None:
                return p.tpulse
        if self.duration is None:
            raise ValueError("idle evolution needs a duration")
        return self.duration


@dataclass(frozen=True)
class TwoQubitParams:
    """Inputs of a two-qubit integration; deviations may be broadcastable arrays."""

    j_pulse: PulseShape
    delta_e_rz: float
    delta_omega_1: float | np.ndarray = 0.0
    delta_omega_2: float | np.ndarray = 0.0
    delta_ve: float | np.ndarray = 0.0
    exchange_fit: ExchangeFit = field(default_factory=default_exchange_fit)


# ----------------------------------------------------------------------------
# elementary matrices


def rz(theta):
    """``exp(-i theta Z / 2)``; broadcasts over ``theta``."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-0.5j * theta)
    out[..., 1, 1] = np.exp(0.5j * theta)
    return out


def rotation(theta: float, phi: float) -> np.ndarray:
    """``exp(-i theta/2 (cos(phi) X + sin(phi) Y))``."""
    n = math.cos(phi) * PAULI_X + math.sin(phi) * PAULI_Y
    return math.cos(theta / 2) * I2 - 1j * math.sin(theta / 2) * n


def ideal_gate(name: str) -> np.ndarray:
    """Closed-form native gate, with the phase produced by its pulse."""
    if name in ("P", "P_sym", "P_pi"):
        return IDEAL_P.copy()
    kind, angle, quarter = _recipe(name)
    if kind == "drive":
        return rotation(angle, quarter * math.pi / 2)
    return rz(angle)


def gate_fidelity(u, v) -> float:
    """Phase-insensitive gate fidelity ``|Tr(U^dag V)|^2 / d^2``."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.shape[-1] != u.shape[-2]:
        raise ValueError("dimension mismatch")
    d = u.shape[-1]
    tr = np.einsum("...ij,...ij->...", u.conj(), v)
    out = np.abs(tr) ** 2 / d**2
    return out if out.ndim else float(out)


def phase_distance(u, v) -> float:
    """``min_phi ||U - e^{i phi} V||_F``."""
    u = np.asarray(u)
    v = np.asarray(v)
    tr = np.trace(u.conj().T @ v)
    # align the global phase explicitly (avoids cancellation in 2d - 2|tr|)
    phase = tr / abs(tr) if abs(tr) > 0 else 1.0
    return float(np.linalg.norm(u * phase - v))


# ----------------------------------------------------------------------------
# integrators


def _su2_propagator(coeffs: Callable, tp: float, dt: float, order: int = 4):
    """Time-ordered propagator of ``H(t) = h0 I + hx X + hy Y + hz Z``.

    ``coeffs(t)`` returns ``(h0, hx, hy, hz)``, each broadcastable to the
    batch shape.  Fourth order uses the two-point Gauss-Legendre Magnus
    expansion, second order the midpoint exponential; each step is
    exponentiated exactly, so the result is unitary to rounding.
    Returns the four entries ``(u00, u01, u10, u11)`` and a global phase.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(round(tp / dt))
    if n < 1 or not math.isclose(n * dt, tp, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError(f"dt={dt} does not divide the pulse duration {tp}")
    u00 = u11 = u01 = u10 = None
    phase = 0.0
    for i in range(n):
        t0 = i * dt
        if order == 4:
            a = coeffs(t0 + _GAUSS[0] * dt)
            b = coeffs(t0 + _GAUSS[1] * dt)
            phase = phase + np.pi * dt * (a[0] + b[0])
            c = (2.0 * _SQ3 / 3.0) * np.pi**2 * dt * dt
            vx = np.pi * dt * (a[1] + b[1]) + c * (b[2] * a[3] - b[3] * a[2])
            vy = np.pi * dt * (a[2] + b[2]) + c * (b[3] * a[1] - b[1] * a[3])
            vz = np.pi * dt * (a[3] + b[3]) + c * (b[1] * a[2] - b[2] * a[1])
        else:
            m = coeffs(t0 + 0.5 * dt)
            phase = phase + 2 * np.pi * dt * m[0]
            vx, vy, vz = (2 * np.pi * dt * m[k] for k in (1, 2, 3))
        vx, vy, vz = np.broadcast_arrays(vx, vy, vz)
        norm = np.sqrt(vx * vx + vy * vy + vz * vz)
        cs = np.cos(norm)
        sn = np.sinc(norm / np.pi)  # sin(norm)/norm
        s00 = cs - 1j * sn * vz
        s11 = cs + 1j * sn * vz
        s01 = -1j * sn * (vx - 1j * vy)
        s10 = -1j * sn * (vx + 1j * vy)
        if u00 is None:
            u00, u01, u10, u11 = s00, s01, s10, s11
        else:
            u00, u01, u10, u11 = (s00 * u00 + s01 * u10, s00 * u01 + s01 * u11,
                                  s10 * u00 + s11 * u10, s10 * u01 + s11 * u11)
    return (u00, u01, u10, u11), phase


def _stack2(entries, phase):
    u00, u01, u10, u11 = np.broadcast_arrays(*entries)
    out = np.empty(u00.shape + (2, 2), dtype=complex)
    out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = u00, u01, u10, u11
    return out * np.exp(-1j * np.asarray(phase))[..., None, None]


def evolve_one_qubit(params: OneQubitParams, dt: float = 1e-3, order: int = 4) -> np.ndarray:
    """Integrate a one-qubit gate; batched over ``params.delta_omega_l``."""
    dw = np.asarray(params.delta_omega_l, dtype=float)
    tp = params.tpulse
    if params.drive is None:
        # diagonal Hamiltonian: exact phase integral
        area = 0.0 if params.shift is None else params.shift.area()
        return rz(2 * np.pi * (area + dw * tp))
    drive = params.drive
    cphi, sphi = math.cos(params.phi), math.sin(params.phi)
    zero = np.zeros_like(dw)

    def coeffs(t):
        b = 0.5 * drive(t)
        return 0.0, b * cphi, b * sphi, 0.5 * dw + zero

    entries, phase = _su2_propagator(coeffs, tp, dt, order)
    return _stack2(entries, phase)


def _middle_block(shape: PulseShape, delta: np.ndarray, jscale: np.ndarray,
                  dt: float, order: int) -> np.ndarray:
    """Propagator of the ``{|01>, |10>}`` block.

    ``delta = dw1 - dw2 - dE`` and ``jscale = exp(b dVE)``.
    """
    def coeffs(t):
        j = shape(t) * jscale
        return -0.25 * j, 0.5 * j, 0.0, 0.5 * delta

    entries, phase = _su2_propagator(coeffs, shape.tpulse, dt, order)
    return _stack2(entries, phase)


def _assemble_two_qubit(mid, phase00, phase11):
    mid = np.asarray(mid)
    out = np.zeros(mid.shape[:-2] + (4, 4), dtype=complex)
    out[..., 0, 0] = np.exp(-2j * np.pi * phase00)
    out[..., 3, 3] = np.exp(-2j * np.pi * phase11)
    out[..., 1:3, 1:3] = mid
    return out


def _outer_phases(shape: PulseShape, jscale, dw1, dw2, delta_e):
    jint = 0.25 * shape.area() * jscale
    zsum = 0.5 * (dw1 + dw2 + delta_e) * shape.tpulse
    return jint + zsum, jint - zsum


def evolve_two_qubit(params: TwoQubitParams, dt: float = 1e-3, order: int = 4) -> np.ndarray:
    """Integrate the exchange gate ``P_r1`` in the frame of qubit 1.

    The Hamiltonian is block diagonal: ``|00>`` and ``|11>`` only pick up
    phases, which are integrated exactly; the ``{|01>, |10>}`` block is
    integrated numerically.  Deviations broadcast.
    """
    dw1 = np.asarray(params.delta_omega_1, dtype=float)
    dw2 = np.asarray(params.delta_omega_2, dtype=float)
    jscale = np.exp(params.exchange_fit.b * np.asarray(params.delta_ve, dtype=float))
    dw1, dw2, jscale = np.broadcast_arrays(dw1, dw2, jscale)
    delta = dw1 - dw2 - params.delta_e_rz
    mid = _middle_block(params.j_pulse, delta, jscale, dt, order)
    p00, p11 = _outer_phases(params.j_pulse, jscale, dw1, dw2, params.delta_e_rz)
    return _assemble_two_qubit(mid, p00, p11)


def _frame_correction(delta_e: float, tp: float) -> np.ndarray:
    """Diagonal of ``I (x) Rz(theta)``, ``theta = -2 pi tp dE``."""
    z = np.diag(rz(-2 * np.pi * tp * delta_e))
    return np.array([z[0], z[1], z[0], z[1]])


def two_reference_gate(params: TwoQubitParams, dt: float = 1e-3, order: int = 4) -> np.ndarray:
    """``P' = (I (x) Rz(theta)) P_r1``, removing qubit 2's reference precession."""
    p = evolve_two_qubit(params, dt, order)
    return _frame_correction(params.delta_e_rz, params.j_pulse.tpulse)[:, None] * p


def _relative_phases(pprime):
    d = np.diagonal(pprime, axis1=-2, axis2=-1)
    ref = np.angle(d[..., 0])
    return np.angle(d[..., 1]) - ref, np.angle(d[..., 2]) - ref


_EPS_CACHE: dict = {}


def asymmetry_phase(hw: HardwareConfig, fit: ExchangeFit | None = None) -> float:
    """``eps = phi1 - phi2`` of the noiseless ``P'`` for this hardware."""
    fit = fit or default_exchange_fit()
    key = (hw.digest(), fit.b)
    if key not in _EPS_CACHE:
        pp = two_reference_gate(TwoQubitParams(hw.j_shape(), hw.delta_e_rz, exchange_fit=fit),
                                hw.dt, hw.order)
        phi1, phi2 = _relative_phases(pp)
        _EPS_CACHE[key] = float(np.angle(np.exp(1j * (phi1 - phi2))))
    return _EPS_CACHE[key]


def _sym_diag(eps: float) -> np.ndarray:
    """Diagonal of ``Rz(eps/2) (x) Rz(-eps/2)``."""
    return np.array([1.0, np.exp(-0.5j * eps), np.exp(0.5j * eps), 1.0])


# ----------------------------------------------------------------------------
# gate builders


def build_gate(name: str, delta_omega: float = 0.0, hw: HardwareConfig | None = None) -> np.ndarray:
    """Noisy one-qubit native gate at a constant detuning ``delta_omega``."""
    hw = hw or HardwareConfig()
    shape, phi = hw.pulse(name)
    if shape.kind == "gaussian":
        params = OneQubitParams(delta_omega, phi, drive=shape)
    else:
        params = OneQubitParams(delta_omega, 0.0, shift=shape)
    return evolve_one_qubit(params, hw.dt, hw.order)


def idle(duration: float, delta_omega) -> np.ndarray:
    """Free precession ``Rz(2 pi dw t)`` over an idle period."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    return rz(2 * np.pi * np.asarray(delta_omega, dtype=float) * duration)


def build_sym_corrected_p(dw1=0.0, dw2=0.0, dve=0.0, hw: HardwareConfig | None = None,
                          fit: ExchangeFit | None = None) -> np.ndarray:
    """Symmetry-corrected P gate, ``(Rz(eps/2) (x) Rz(-eps/2)) P'``."""
    hw = hw or HardwareConfig()
    fit = fit or default_exchange_fit()
    pp = two_reference_gate(TwoQubitParams(hw.j_shape(), hw.delta_e_rz, dw1, dw2, dve, fit),
                            hw.dt, hw.order)
    return _sym_diag(asymmetry_phase(hw, fit))[:, None] * pp


def build_pi_pulse_p(dw1=0.0, dw2=0.0, dve=0.0, hw: HardwareConfig | None = None,
                     fit: ExchangeFit | None = None) -> np.ndarray:
    """Refocused P gate, ``(X (x) X) sqrt(P') (X (x) X) sqrt(P')``."""
    hw = hw or HardwareConfig()
    fit = fit or default_exchange_fit()
    half = two_reference_gate(
        TwoQubitParams(hw.j_shape(0.5 * hw.j0), hw.delta_e_rz, dw1, dw2, dve, fit),
        hw.dt, hw.order)
    xx = np.kron(build_gate("X", dw1, hw), build_gate("X", dw2, hw))
    return xx @ half @ xx @ half


# ----------------------------------------------------------------------------
# library


@dataclass(frozen=True)
class LibraryGrids:
    """Deviation grids of the noisy-gate library (MHz, mV)."""

    one_qubit_bound: float = 1.0
    one_qubit_points: int = 100_001
    omega_bound: float = 0.08
    omega_points: int = 161
    ve_bound: float = 6.0
    ve_points: int = 111

    def __post_init__(self):
        for n in (self.one_qubit_points, self.omega_points, self.ve_points):
            if n < 3 or n % 2 == 0:
                raise ValueError("grid point counts must be odd and >= 3 (symmetric about 0)")
        if min(self.one_qubit_bound, self.omega_bound, self.ve_bound) <= 0:
            raise ValueError("grid bounds must be positive")

    @property
    def two_qubit_nodes(self) -> int:
        return self.omega_points**2 * self.ve_points


class _Axis:
    def __init__(self, bound: float, n: int):
        self.values = np.linspace(-bound, bound, n)
        self.values[n // 2] = 0.0
        self.bound = bound
        self.n = n
        self.step = 2 * bound / (n - 1)

    def index(self, x):
        """Nearest-node indices and the number of clipped values."""
        k = np.rint((np.asarray(x, dtype=float) + self.bound) / self.step).astype(np.int64)
        clipped = int(np.count_nonzero((k < 0) | (k >= self.n)))
        return np.clip(k, 0, self.n - 1), clipped


LIBRARY_VERSION = 1


class NoisyGateLibrary:
    """Precomputed noisy gates indexed by their deviations.

    One-qubit gates are stored on a dense detuning axis.  The two-qubit
    gates are stored in factored form: the ``{|01>,|10>}`` block depends only
    on ``dw1 - dw2`` and ``dVE``, so it is tabulated on that 2D grid, while
    the ``|00>``/``|11>`` phases are closed-form.  Full P gates on the
    ``(dw1, dw2, dVE)`` node grid are assembled at lookup.  Off-grid
    deviations snap to the nearest node; out-of-range values are clipped
    and counted in :attr:`clip_count`.
    """

    def __init__(self, hw, grids, fit, one_qubit, mid_full, mid_half, x_on_omega, eps):
        self.hw = hw
        self.grids = grids
        self.fit = fit
        self.one_axis = _Axis(grids.one_qubit_bound, grids.one_qubit_points)
        self.omega_axis = _Axis(grids.omega_bound, grids.omega_points)
        self.ve_axis = _Axis(grids.ve_bound, grids.ve_points)
        self.one_qubit = one_qubit
        self.mid_full = mid_full
        self.mid_half = mid_half
        self.x_on_omega = x_on_omega
        self.eps = float(eps)
        self.clip_count = 0
        self._corr = _frame_correction(hw.delta_e_rz, hw.tp_2q)
        self._sym = _sym_diag(self.eps)
        self._jscale = np.exp(fit.b * self.ve_axis.values)

    # -- metadata --------------------------------------------------------
    @property
    def two_qubit_nodes(self) -> int:
        return self.grids.two_qubit_nodes

    def config_hash(self) -> str:
        return library_hash(self.hw, self.grids, self.fit)

    def _clipped(self, n):
        if n:
            self.clip_count += n
            warnings.warn(f"{n} deviation(s) outside the library grid were clipped",
                          RuntimeWarning, stacklevel=3)

    # -- lookups ---------------------------------------------------------
    def one_qubit_gate(self, name: str, delta_omega):
        """Noisy one-qubit gate(s) at the nearest detuning node."""
        k, c = self.one_axis.index(delta_omega)
        self._clipped(c)
        return self.one_qubit[name][k]

    def _pprime(self, mids, i1, i2, iv, jfactor):
        d = i1 - i2 + (self.grids.omega_points - 1)
        mid = mids[d, iv]
        w = self.omega_axis.values
        shape = self.hw.j_shape(self.hw.j0 * jfactor)
        p00, p11 = _outer_phases(shape, self._jscale[iv], w[i1], w[i2], self.hw.delta_e_rz)
        return self._corr[:, None] * _assemble_two_qubit(mid, p00, p11)

    def _indices(self, dw1, dw2, dve):
        i1, c1 = self.omega_axis.index(dw1)
        i2, c2 = self.omega_axis.index(dw2)
        iv, c3 = self.ve_axis.index(dve)
        self._clipped(c1 + c2 + c3)
        return np.broadcast_arrays(i1, i2, iv)

    def p_prime(self, dw1, dw2, dve):
        i1, i2, iv = self._indices(dw1, dw2, dve)
        return self._pprime(self.mid_full, i1, i2, iv, 1.0)

    def p_gate(self, flavor: str, dw1, dw2, dve):
        """Noisy P gate(s); ``flavor`` is ``"sym"`` or ``"pi"``."""
        i1, i2, iv = self._indices(dw1, dw2, dve)
        if flavor == "sym":
            return self._sym[:, None] * self._pprime(self.mid_full, i1, i2, iv, 1.0)
        if flavor != "pi":
            raise ValueError(f"unknown P flavor {flavor!r}")
        half = self._pprime(self.mid_half, i1, i2, iv, 0.5)
        x1 = self.x_on_omega[i1]
        x2 = self.x_on_omega[i2]
        xx = np.einsum("...ab,...cd->...acbd", x1, x2).reshape(x1.shape[:-2] + (4, 4))
        return xx @ half @ xx @ half

    # -- persistence -----------------------------------------------------
    def save(self, path) -> None:
        header = {
            "version": LIBRARY_VERSION,
            "gates": list(self.one_qubit),
            "hardware": asdict(self.hw),
            "grids": asdict(self.grids),
            "exchange_fit": asdict(self.fit),
            "dt": self.hw.dt,
            "config_hash": self.config_hash(),
            "eps": self.eps,
        }
        arrays = {f"one_{k}": v for k, v in self.one_qubit.items()}
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(header)), mid_full=self.mid_full,
                     mid_half=self.mid_half, x_on_omega=self.x_on_omega, **arrays)

    @classmethod
    def load(cls, path, expect_hash: str | None = None) -> "NoisyGateLibrary":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("version") != LIBRARY_VERSION:
                raise ValueError("library file version mismatch")
            if expect_hash is not None and header["config_hash"] != expect_hash:
                raise ValueError("library config hash mismatch")
            one = {g: z[f"one_{g}"] for g in header["gates"]}
            hw = HardwareConfig(**header["hardware"])
            grids = LibraryGrids(**header["grids"])
            fit = ExchangeFit(**header["exchange_fit"])
            return cls(hw, grids, fit, one, z["mid_full"], z["mid_half"], z["x_on_omega"],
                       header["eps"])


def library_hash(hw: HardwareConfig, grids: LibraryGrids, fit: ExchangeFit) -> str:
    blob = json.dumps([asdict(hw), asdict(grids), [fit.a, fit.b], LIBRARY_VERSION], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def precompute_library(hw: HardwareConfig | None = None, grids: LibraryGrids | None = None,
                       fit: ExchangeFit | None = None) -> NoisyGateLibrary:
    """Integrate every native gate over the deviation grids."""
    hw = hw or HardwareConfig()
    grids = grids or LibraryGrids()
    fit = fit or default_exchange_fit()
    one_axis = _Axis(grids.one_qubit_bound, grids.one_qubit_points).values
    one: dict[str, np.ndarray] = {}
    # K_n and Y are Z-conjugates of K0 and X; detuning commutes with that
    # conjugation, so only two drives need integrating.
    base = {"X": build_gate("X", one_axis, hw), "K0": build_gate("K0", one_axis, hw)}
    for name in ONE_QUBIT_GATES:
        kind, _, quarter = _RECIPES[name]
        if kind == "shift":
            one[name] = build_gate(name, one_axis, hw)
            continue
        src = base["X" if name in ("X", "Y") else "K0"]
        if quarter == 0:
            one[name] = src
        else:
            r = rz(quarter * np.pi / 2)
            one[name] = r @ src @ r.conj().T
    omega = _Axis(grids.omega_bound, grids.omega_points)
    ve = _Axis(grids.ve_bound, grids.ve_points)
    diff = omega.step * np.arange(-(grids.omega_points - 1), grids.omega_points)
    delta = (diff - hw.delta_e_rz)[:, None]
    jscale = np.exp(fit.b * ve.values)[None, :]
    mid_full = _middle_block(hw.j_shape(), delta, jscale, hw.dt, hw.order)
    mid_half = _middle_block(hw.j_shape(0.5 * hw.j0), delta, jscale, hw.dt, hw.order)
    x_on_omega = build_gate("X", omega.values, hw)
    return NoisyGateLibrary(hw, grids, fit, one, mid_full, mid_half, x_on_omega,
                            asymmetry_phase(hw, fit))
