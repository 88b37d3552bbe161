"""Second-order intensity correlations of the waveguide output.

Two independent routes are provided: the quantum regression theorem applied
to the full master equation, and the leading-order weak-drive amplitude
expansion, which gives the closed form
``g2(tau) = |c + c_plus exp(-i lam_plus tau) + c_minus exp(-i lam_minus tau)|^2``
with ``Im lam = -Gamma/2`` for the two single-excitation decay eigenmodes.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .dynamics import steady_state
from .errors import NumericalError
from .model import (
    DriveConfig,
    SystemParams,
    build_liouvillian,
    emission_operator,
    single_excitation_hamiltonian,
    vec,
)

log = logging.getLogger(__name__)

DEFAULT_TAU = np.round(np.arange(-1000, 1001) * 0.005, 12)


@dataclass(frozen=True)
class CorrelationTrace:
    """Sampled g2 on a tau grid (ns), with the unnormalized pieces kept."""

    tau: np.ndarray
    g2: np.ndarray
    G2: np.ndarray
    intensity: float
    meta: dict = field(default_factory=dict)

    def at_zero(self) -> float:
        return float(self.g2[np.argmin(np.abs(self.tau))])


def coincidence_zero(rho: np.ndarray, sys: SystemParams) -> float:
    """Zero-delay coincidence rate ``<E^dag E^dag E E>`` from operator moments."""
    e = emission_operator(sys)
    ed = e.conj().T
    return float(np.real(np.trace(ed @ ed @ e @ e @ rho)))


def _abs_tau_propagation(gen, v0, tau):
    """Propagate v0 to every distinct |tau|; returns values indexed like tau."""
    atau = np.abs(np.asarray(tau, float))
    uniq, inverse = np.unique(atau, return_inverse=True)
    out = np.empty((uniq.size, v0.size), dtype=complex)
    cache = {}
    v, t = v0, 0.0
    for k, tk in enumerate(uniq):
        dt = tk - t
        if dt != 0.0:
            key = round(dt, 15)
            prop = cache.get(key)
            if prop is None:
                prop = cache[key] = expm(gen * dt)
            v = prop @ v
        out[k] = v
        t = tk
    return out[inverse]


def g2_regression(sys: SystemParams, drive: DriveConfig, tau=DEFAULT_TAU) -> CorrelationTrace:
    """g2 from the quantum regression theorem for CW driving.

    ``G2(tau) = Tr[E^dag E exp(L|tau|)(E rho_ss E^dag)]`` and
    ``g2 = G2 / <E^dag E>_ss^2``.  Negative delays follow from stationarity.
    """
    if drive.pulse is not None:
        raise ValueError("g2_regression needs a CW drive")
    tau = np.asarray(tau, float)
    rho = steady_state(sys, drive)
    gen = build_liouvillian(sys, drive)
    e = emission_operator(sys)
    n_op = e.conj().T @ e
    intensity = float(np.real(np.trace(n_op @ rho)))
    if not intensity > 0:
        raise NumericalError("steady-state waveguide intensity is zero; g2 undefined")
    jumped = vec(e @ rho @ e.conj().T)
    states = _abs_tau_propagation(gen, jumped, tau)
    big_g2 = np.real(states @ vec(n_op.T))
    big_g2[np.abs(tau) == 0] = coincidence_zero(rho, sys)
    g2 = np.clip(big_g2, 0.0, None) / intensity**2
    return CorrelationTrace(tau, g2, big_g2, intensity, {"method": "regression"})


@dataclass(frozen=True)
class WeakDriveCoefficients:
    """Amplitude expansion ``c + sum_k c_k exp(-i lam_k tau)``; index 0 is the faster mode."""

    c: complex
    modes: np.ndarray  # complex amplitudes c_k
    eigenvalues: np.ndarray  # lam_k; decay rate of mode k is -2 Im lam_k

    @property
    def c_plus(self) -> complex:
        return complex(self.modes[0])

    @property
    def c_minus(self) -> complex:
        return complex(self.modes[1])

    @property
    def rates(self) -> np.ndarray:
        return -2.0 * self.eigenvalues.imag

    def amplitude(self, tau) -> np.ndarray:
        t = np.abs(np.asarray(tau, float))[..., None]
        return self.c + np.sum(self.modes * np.exp(-1j * self.eigenvalues * t), axis=-1)


def weak_drive_coefficients(sys: SystemParams, drive: DriveConfig) -> WeakDriveCoefficients:
    """Leading-order amplitudes for weak CW driving.

    Ground-state amplitude is set to one; the single-excitation amplitudes
    solve ``H1 a = -v`` and the doubly excited amplitude ``E_ee b = -w.a``.
    A detection projects onto ``E|psi>``; the re-normalized single-excitation
    part then relaxes back to ``a`` through the eigenmodes of ``H1``.
    """
    om1, om2 = drive.rabi
    h1 = single_excitation_hamiltonian(sys)
    e1, e2 = sys.emitters
    if np.linalg.cond(h1) > 1e12:
        raise NumericalError(
            "weak-drive expansion is singular: a single-excitation mode has zero decay "
            "rate and zero detuning (perfectly dark state)"
        )
    v = 0.5 * np.array([om1, om2])
    a = -np.linalg.solve(h1, v)
    e_ee = e1.detuning + e2.detuning - 0.5j * (e1.total_decay + e2.total_decay)
    b = -(0.5 * (om2 * a[0] + om1 * a[1])) / e_ee

    g1, g2 = e1.waveguide_rate, e2.waveguide_rate
    ph = np.exp(1j * sys.coupling_phase)
    emit = np.array([np.sqrt(g1), np.sqrt(g2) * ph])  # (eg, ge) -> gg
    from_ee = np.array([np.sqrt(g2) * ph, np.sqrt(g1)])  # ee -> (eg, ge)
    field_amp = emit @ a
    if abs(field_amp) == 0:
        raise NumericalError("no coherent field at leading order; g2 undefined")
    x0 = b * from_ee / field_amp

    lam, r = np.linalg.eig(h1)
    order = np.argsort(lam.imag)  # most negative imaginary part (fastest) first
    lam, r = lam[order], r[:, order]
    proj = np.linalg.solve(r, x0 - a)
    modes = (emit @ r) * proj / field_amp
    return WeakDriveCoefficients(1.0 + 0j, modes, lam)


def g2_analytic(sys: SystemParams, omega, tau=DEFAULT_TAU) -> CorrelationTrace:
    """Closed-form weak-drive g2.

    ``omega`` is either a Rabi frequency for emitter 1 alone, or a full
    :class:`DriveConfig`.  Drives above ``Gamma_mean / 20`` trigger a warning
    since the expansion is then outside its domain.
    """
    drive = omega if isinstance(omega, DriveConfig) else DriveConfig.cw(float(omega))
    if drive.pulse is not None:
        raise ValueError("g2_analytic needs a CW drive")
    limit = sys.mean_decay / 20.0
    if max(drive.amplitudes) > limit:
        warnings.warn(
            f"drive {max(drive.amplitudes):.3g} exceeds weak-drive threshold {limit:.3g}",
            stacklevel=2,
        )
    if any(em.dephasing > 0 for em in sys.emitters):
        warnings.warn("pure dephasing is ignored by the weak-drive expansion", stacklevel=2)
    coef = weak_drive_coefficients(sys, drive)
    tau = np.asarray(tau, float)
    g2 = np.abs(coef.amplitude(tau)) ** 2
    return CorrelationTrace(tau, g2, g2.copy(), float("nan"), {"method": "analytic", "coefficients": coef})


SWEEP_AXES = ("detuning_split", "beta2", "theta")


def apply_sweep(sys: SystemParams, drive: DriveConfig, axis: str, value: float, laser: str = "emitter1"):
    """Return (sys, drive) with one sweep parameter set.

    ``theta`` is the relative drive phase ``theta_1 - theta_2``; emitter 2's
    amplitude magnitude is kept, so an undriven emitter 2 stays undriven.
    """
    if axis == "detuning_split":
        return sys.with_split(value, laser), drive
    if axis == "beta2":
        return sys.with_emitter(1, beta=value), drive
    if axis == "theta":
        r1, r2 = drive.rabi
        ph1 = np.angle(r1) if r1 != 0 else 0.0
        new2 = abs(r2) * np.exp(1j * (ph1 - value))
        return sys, DriveConfig((r1, new2), drive.pulse)
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


@dataclass
class SweepResult:
    axis: str
    values: np.ndarray
    tau: np.ndarray
    traces: list
    failures: list

    @property
    def matrix(self) -> np.ndarray:
        """g2 with rows tau and one column per swept value (NaN for failed points)."""
        m = np.full((self.tau.size, self.values.size), np.nan)
        for j, tr in enumerate(self.traces):
            if tr is not None:
                m[:, j] = tr.g2
        return m

    def g2_zero(self) -> np.ndarray:
        return np.array([tr.at_zero() if tr is not None else np.nan for tr in self.traces])


def g2_sweep(
    sys_template: SystemParams,
    drive: DriveConfig,
    axis: str,
    values,
    tau=DEFAULT_TAU,
    laser: str = "emitter1",
    evaluate=None,
) -> SweepResult:
    """One CorrelationTrace per swept value; failing points are recorded, not raised.

    ``evaluate(sys, drive, tau)`` defaults to :func:`g2_regression` and may
    be replaced, e.g. by an instrument-averaged pipeline.
    """
    evaluate = evaluate or g2_regression
    values = np.asarray(values, float)
    if not np.all(np.isfinite(values)):
        raise ValueError("sweep values must be finite")
    tau = np.asarray(tau, float)
    traces, failures = [], []
    for val in values:
        try:
            s, d = apply_sweep(sys_template, drive, axis, float(val), laser)
            traces.append(evaluate(s, d, tau))
        except (NumericalError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("sweep point %s=%g failed: %s", axis, val, exc)
            traces.append(None)
            failures.append((float(val), str(exc)))
    return SweepResult(axis, values, tau, traces, failures)


__all__ = [
    "CorrelationTrace",
    "SweepResult",
    "WeakDriveCoefficients",
    "coincidence_zero",
    "g2_analytic",
    "g2_regression",
    "g2_sweep",
    "weak_drive_coefficients",
]
