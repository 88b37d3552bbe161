"""Time evolution, steady states, emission intensity and Bloch trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import IntegrationError, SteadyStateError
from .model import (
    BASIS_LABELS,
    EG,
    EXCITED_PROJECTOR,
    GE,
    NO_DRIVE,
    DriveConfig,
    SystemParams,
    build_dissipators,
    build_liouvillian,
    emission_operator,
    hamiltonian_superop,
    build_hamiltonian,
    to_collective_basis,
    trace_row,
    unvec,
    vec,
)

ODE_RTOL = 1e-10
ODE_ATOL = 1e-12


def _expm_steps(gen: np.ndarray, v: np.ndarray, times: np.ndarray, t_start: float):
    """Step ``v`` from ``t_start`` through ``times`` with cached propagators."""
    cache = {}
    out = []
    t = t_start
    for tk in times:
        dt = tk - t
        if dt != 0.0:
            key = round(dt, 15)
            prop = cache.get(key)
            if prop is None:
                prop = cache[key] = expm(gen * dt)
            v = prop @ v
        out.append(v)
        t = tk
    return out, v


def _drive_superop(sys: SystemParams, drive: DriveConfig) -> np.ndarray:
    """Superoperator of the drive term at unit envelope value."""
    unit = DriveConfig(tuple(r * drive.pulse.area for r in drive.rabi))
    h = build_hamiltonian(sys, unit) - build_hamiltonian(sys, NO_DRIVE)
    return hamiltonian_superop(h)


def _ode_segment(rhs, v, t_a, t_b, t_eval, max_step):
    sol = solve_ivp(
        rhs,
        (t_a, t_b),
        v,
        method="RK45",
        t_eval=np.append(t_eval, t_b) if len(t_eval) == 0 or t_eval[-1] != t_b else t_eval,
        rtol=ODE_RTOL,
        atol=ODE_ATOL,
        max_step=max_step,
    )
    if sol.status != 0:
        raise IntegrationError(
            f"integration failed at t = {sol.t[-1]:.6g} ns: {sol.message}"
        )
    ys = list(sol.y.T)
    return ys[: len(t_eval)], ys[-1]


def propagate(
    sys: SystemParams,
    drive: DriveConfig,
    rho0: np.ndarray,
    t_grid,
    method: str = "auto",
) -> np.ndarray:
    """Evolve ``rho0`` (the state at ``t_grid[0]``) and return rho at every grid time.

    ``method`` is ``"expm"`` (matrix exponential, time-independent drives
    only), ``"ode"`` (adaptive Runge-Kutta on the whole grid) or ``"auto"``.
    In auto mode pulsed drives are integrated only while the pulse is on;
    before and after it the undriven propagator is exact and is used instead.
    """
    ts = np.asarray(t_grid, dtype=float)
    if ts.ndim != 1 or ts.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D sequence")
    if np.any(np.diff(ts) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if method not in ("auto", "expm", "ode"):
        raise ValueError(f"unknown method {method!r}")
    pulsed = drive.pulse is not None
    if pulsed and method == "expm":
        raise ValueError("the matrix-exponential path needs a time-independent drive")

    v = vec(np.asarray(rho0, dtype=complex))
    if not pulsed:
        gen = build_liouvillian(sys, drive)
        if method != "ode":
            states, _ = _expm_steps(gen, v, ts, ts[0])
        else:
            span = ts[-1] - ts[0]
            states = [v] if ts.size == 1 else [v] + _ode_segment(
                lambda t, y: gen @ y, v, ts[0], ts[-1], ts[1:], span or np.inf
            )[0]
        return _hermitize(unvec(np.array(states)))

    gen0 = build_liouvillian(sys, NO_DRIVE)
    gen1 = _drive_superop(sys, drive)
    env = drive.pulse.envelope

    def rhs(t, y):
        return gen0 @ y + env(t) * (gen1 @ y)

    if method == "ode":
        w0, w1 = -np.inf, np.inf
    else:
        w0, w1 = drive.pulse.window()
    max_step = drive.pulse.fwhm / 4.0

    states = [v]
    t_cur = ts[0]
    rest = ts[1:]

    before = rest[rest <= w0]
    if before.size:
        s, v = _expm_steps(gen0, v, before, t_cur)
        states += s
        t_cur = before[-1]
        rest = rest[before.size:]

    if rest.size and t_cur < w1:
        if t_cur < w0:
            _, v = _expm_steps(gen0, v, [w0], t_cur)
            t_cur = w0
        t_b = min(w1, rest[-1])
        inside = rest[rest <= t_b]
        s, v = _ode_segment(rhs, v, t_cur, t_b, inside, max_step)
        states += s
        t_cur = t_b
        rest = rest[inside.size:]

    if rest.size:
        s, v = _expm_steps(gen0, v, rest, t_cur)
        states += s
    return _hermitize(unvec(np.array(states)))


def _hermitize(rhos: np.ndarray) -> np.ndarray:
    return 0.5 * (rhos + np.conj(np.swapaxes(rhos, -1, -2)))


def _describe_null_space(null: np.ndarray) -> str:
    parts = []
    for k in range(null.shape[1]):
        rho = unvec(null[:, k])
        diag = np.abs(np.diag(rho))
        coll = np.abs(np.diag(to_collective_basis(rho)))
        support = [BASIS_LABELS[i] for i in np.flatnonzero(diag > 1e-6 * diag.max())]
        csupport = [("gg", "+", "-", "ee")[i] for i in np.flatnonzero(coll > 1e-6 * coll.max())]
        parts.append(f"span(bare: {','.join(support)}; collective: {','.join(csupport)})")
    return "; ".join(parts)


def steady_state(sys: SystemParams, drive: DriveConfig = NO_DRIVE, tol: float = 1e-10) -> np.ndarray:
    """Unique stationary state of the CW master equation.

    Raises :class:`SteadyStateError` when the Liouvillian has more than one
    zero mode, e.g. a perfectly dark state that the drive does not reach.
    """
    if drive.pulse is not None:
        raise ValueError("steady_state needs a CW drive")
    gen = build_liouvillian(sys, drive)
    sv = np.linalg.svd(gen, compute_uv=False)
    scale = max(sv[0], 1e-300)
    if sv[-2] < tol * scale:
        _, _, vh = np.linalg.svd(gen)
        null = vh[np.abs(sv) < tol * scale].conj().T
        raise SteadyStateError(
            "steady state is not unique; degenerate stationary subspace: "
            + _describe_null_space(null)
        )
    a = gen.copy()
    b = np.zeros(16, dtype=complex)
    a[0, :] = trace_row()
    b[0] = 1.0
    rho = unvec(np.linalg.solve(a, b))
    rho = 0.5 * (rho + rho.conj().T)
    resid = np.max(np.abs(gen @ vec(rho)))
    if resid > 1e-11 * max(1.0, scale):
        raise SteadyStateError(f"steady-state residual {resid:.3g} exceeds tolerance")
    return rho


def waveguide_intensity(rho: np.ndarray, sys: SystemParams) -> float:
    """Photon flux ``<E^dag E>`` in the detected waveguide port (collection efficiency 1)."""
    e = emission_operator(sys)
    val = np.real(np.trace(e.conj().T @ e @ rho))
    return max(float(val), 0.0)


def emitter_intensities(rho: np.ndarray, sys: SystemParams) -> tuple[float, float]:
    """Separately collected emission ``gamma_i^wg * p_e,i`` of each emitter."""
    return tuple(
        em.waveguide_rate * float(np.real(np.trace(p @ rho)))
        for em, p in zip(sys.emitters, EXCITED_PROJECTOR)
    )


def channel_rates(rho: np.ndarray, sys: SystemParams) -> list[tuple[str, float]]:
    """Photon emission rate ``rate * <L^dag L>`` of every decay channel."""
    out = []
    for d in build_dissipators(sys):
        if d.kind.startswith("dephasing"):
            continue
        op = d.operator
        out.append((d.kind, d.rate * float(np.real(np.trace(op.conj().T @ op @ rho)))))
    return out


@dataclass(frozen=True)
class IntensityTrace:
    t: np.ndarray
    intensity: np.ndarray
    populations: np.ndarray  # shape (n, 2), emitter 1 then emitter 2
    p_plus: np.ndarray
    p_minus: np.ndarray

    def emitter_intensity(self, sys: SystemParams) -> np.ndarray:
        rates = np.array([em.waveguide_rate for em in sys.emitters])
        return self.populations * rates


def trace_from_states(sys: SystemParams, t: np.ndarray, rhos: np.ndarray) -> IntensityTrace:
    e = emission_operator(sys)
    n_op = e.conj().T @ e
    intensity = np.clip(np.einsum("ij,nji->n", n_op, rhos).real, 0.0, None)
    pops = np.stack([np.einsum("ij,nji->n", p, rhos).real for p in EXCITED_PROJECTOR], axis=1)
    coll = np.array([np.diag(to_collective_basis(r)).real for r in rhos])
    clip = lambda x: np.clip(x, 0.0, 1.0)
    return IntensityTrace(np.asarray(t, float), intensity, clip(pops), clip(coll[:, 1]), clip(coll[:, 2]))


def lifetime_experiment(
    sys: SystemParams,
    drive: DriveConfig,
    t_grid,
    rho0: np.ndarray | None = None,
) -> IntensityTrace:
    """Time-resolved waveguide emission after pulsed excitation from |gg>."""
    if drive.pulse is None:
        raise ValueError("lifetime_experiment needs a pulsed drive")
    if rho0 is None:
        rho0 = np.zeros((4, 4), dtype=complex)
        rho0[0, 0] = 1.0
    ts = np.asarray(t_grid, float)
    return trace_from_states(sys, ts, propagate(sys, drive, rho0, ts))


@dataclass(frozen=True)
class BlochTrajectory:
    """Bloch vectors of the renormalized {|eg>, |ge>} block.

    ``|eg>`` is the +z pole and ``|+>``/``|->`` sit at +x/-x.  Samples whose
    single-excitation weight is below the floor have ``valid`` False and NaN
    vectors.
    """

    t: np.ndarray
    vectors: np.ndarray
    weight: np.ndarray
    valid: np.ndarray


def bloch_vectors(rhos: np.ndarray, weight_floor: float = 1e-6):
    block = rhos[:, [EG, GE]][:, :, [EG, GE]]
    w = np.real(block[:, 0, 0] + block[:, 1, 1])
    valid = w >= weight_floor
    vecs = np.full((len(rhos), 3), np.nan)
    b = block[valid] / w[valid, None, None]
    vecs[valid, 0] = 2.0 * b[:, 0, 1].real
    vecs[valid, 1] = -2.0 * b[:, 0, 1].imag
    vecs[valid, 2] = (b[:, 0, 0] - b[:, 1, 1]).real
    return vecs, w, valid


def bloch_trajectory(
    sys: SystemParams,
    drive: DriveConfig,
    rho0: np.ndarray,
    t_grid,
    weight_floor: float = 1e-6,
) -> BlochTrajectory:
    if not weight_floor > 0:
        raise ValueError("weight_floor must be positive")
    ts = np.asarray(t_grid, float)
    rhos = propagate(sys, drive, rho0, ts)
    vecs, w, valid = bloch_vectors(rhos, weight_floor)
    return BlochTrajectory(ts, vecs, w, valid)


def pulse_end(drive: DriveConfig, width: float = 3.0) -> float:
    """A time after which the pulse envelope is negligible (default 3 FWHM past center)."""
    return drive.pulse.center + width * drive.pulse.fwhm


def oscillation_period(t: np.ndarray, y: np.ndarray) -> float:
    """Dominant oscillation period of a damped trace.

    The trace is divided by its running envelope (a fitted exponential) and
    the period is taken from the mean spacing of successive maxima, refined
    by parabolic interpolation.
    """
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    pos = y > 0
    slope, icpt = np.polyfit(t[pos], np.log(y[pos]), 1)
    z = y / np.exp(slope * t + icpt)
    z = z - z.mean()
    peaks = []
    for i in range(1, len(z) - 1):
        if z[i] > z[i - 1] and z[i] >= z[i + 1] and z[i] > 0:
            a, b, c = z[i - 1], z[i], z[i + 1]
            den = a - 2 * b + c
            off = 0.5 * (a - c) / den if den != 0 else 0.0
            peaks.append(t[i] + off * (t[1] - t[0]))
    if len(peaks) < 2:
        raise ValueError("fewer than two oscillation maxima in the trace")
    return float(np.mean(np.diff(peaks)))


__all__ = [
    "BlochTrajectory",
    "IntensityTrace",
    "bloch_trajectory",
    "channel_rates",
    "emitter_intensities",
    "lifetime_experiment",
    "propagate",
    "steady_state",
    "waveguide_intensity",
]
