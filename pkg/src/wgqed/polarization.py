"""Jones-calculus control of the per-emitter drive amplitudes and phases.

The laser passes a quarter-wave plate and then a half-wave plate; each
emitter m sees the complex Rabi amplitude ``a_m = d_m^dag . eps`` for its
dipole Jones vector ``d_m``.  Angles are in degrees, phases in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContourError
from .model import DriveConfig, Pulse

H = np.array([1.0, 0.0], dtype=complex)
V = np.array([0.0, 1.0], dtype=complex)
D = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
SIGMA_PLUS = np.array([1.0, 1j]) / math.sqrt(2.0)
SIGMA_MINUS = np.array([1.0, -1j]) / math.sqrt(2.0)

MAP_COLUMNS = ("qwp_deg", "hwp_deg", "A1sq", "A2sq", "rel_A1", "phase_rad")
CONTOUR_COLUMNS = ("qwp_deg", "hwp_deg", "phase_rad", "A1sq", "A2sq")
PHASE_FLOOR = 1e-9


def jones(h, v, normalize: bool = True) -> np.ndarray:
    vec = np.array([h, v], dtype=complex)
    norm = np.linalg.norm(vec)
    if not norm > 0:
        raise ValueError("Jones vector must be nonzero")
    return vec / norm if normalize else vec


def wrap_phase(phi):
    """Wrap to (-pi, pi]."""
    out = np.pi - np.mod(np.pi - np.asarray(phi, float), 2.0 * np.pi)
    return out if out.ndim else float(out)


def retarder(angle_deg, retardance: float) -> np.ndarray:
    """Jones matrix of a linear retarder with its fast axis at ``angle_deg``.

    Works on arrays of angles, returning a stack of shape ``angle.shape + (2, 2)``.
    """
    t = np.deg2rad(np.asarray(angle_deg, float))
    c, s = np.cos(t), np.sin(t)
    e = np.exp(1j * retardance)
    m = np.empty(t.shape + (2, 2), dtype=complex)
    m[..., 0, 0] = c * c + e * s * s
    m[..., 0, 1] = (1.0 - e) * c * s
    m[..., 1, 0] = (1.0 - e) * c * s
    m[..., 1, 1] = s * s + e * c * c
    return m


def quarter_wave(angle_deg) -> np.ndarray:
    return retarder(angle_deg, np.pi / 2.0)


def half_wave(angle_deg) -> np.ndarray:
    return retarder(angle_deg, np.pi)


def waveplate_output(qwp_deg, hwp_deg, input_pol=H, offsets=(0.0, 0.0)) -> np.ndarray:
    """Polarization after the QWP then the HWP.

    ``offsets`` are the mounting offsets (QWP, HWP) added to the nominal
    angles.  Broadcasts over array-valued angles; the last axis holds (H, V).
    """
    q = np.asarray(qwp_deg, float) + offsets[0]
    h = np.asarray(hwp_deg, float) + offsets[1]
    q, h = np.broadcast_arrays(q, h)
    m = half_wave(h) @ quarter_wave(q)
    return m @ np.asarray(input_pol, complex)


@dataclass(frozen=True)
class DipoleConfig:
    """Dipole Jones vectors of the two emitters (defaults: ideal sigma+ and sigma-)."""

    d1: tuple = (SIGMA_PLUS[0], SIGMA_PLUS[1])
    d2: tuple = (SIGMA_MINUS[0], SIGMA_MINUS[1])

    def __post_init__(self):
        for name in ("d1", "d2"):
            v = np.asarray(getattr(self, name), complex)
            if v.shape != (2,) or not np.isfinite(v).all():
                raise ValueError(f"{name} must be two finite complex numbers")
            n = np.linalg.norm(v)
            if not n > 0:
                raise ValueError(f"{name} must be nonzero")
            object.__setattr__(self, name, tuple(complex(x) for x in v / n))

    @property
    def matrix(self) -> np.ndarray:
        """Rows are d_m^dag, so ``matrix @ eps`` gives (a1, a2)."""
        return np.conj(np.array([self.d1, self.d2]))

    @property
    def overlap(self) -> float:
        return float(abs(np.vdot(self.d1, self.d2)))


def dipole_amplitudes(eps, dipoles: DipoleConfig = DipoleConfig()) -> np.ndarray:
    """Complex amplitudes ``a_m = d_m^dag . eps``; broadcasts over leading axes."""
    return np.asarray(eps, complex) @ dipoles.matrix.T


def drive_from_polarization(eps, dipoles: DipoleConfig = DipoleConfig(), scale: float = 1.0):
    """Per-emitter ``(|Omega_m|, theta_m)`` with theta in [0, 2pi)."""
    a = dipole_amplitudes(eps, dipoles)
    return tuple((scale * float(abs(x)), float(np.mod(np.angle(x), 2.0 * np.pi))) for x in a)


def drive_config(eps, dipoles: DipoleConfig = DipoleConfig(), scale: float = 1.0, pulse: Pulse | None = None):
    """DriveConfig realizing a polarization.

    For CW drives ``scale`` is the Rabi frequency of a fully overlapping
    dipole; for pulsed drives the per-emitter weights are ``|a_m|`` and the
    pulse carries the area.
    """
    a = dipole_amplitudes(eps, dipoles)
    if pulse is None:
        return DriveConfig((complex(scale * a[0]), complex(scale * a[1])))
    return DriveConfig((complex(a[0]), complex(a[1])), pulse)


@dataclass(frozen=True)
class WaveplateMap:
    """Rows follow the QWP grid, columns the HWP grid.

    ``phase`` is NaN at cells where one amplitude vanishes.
    """

    qwp_deg: np.ndarray
    hwp_deg: np.ndarray
    A1sq: np.ndarray
    A2sq: np.ndarray
    phase: np.ndarray
    input_pol: np.ndarray = field(default_factory=lambda: H.copy())
    dipoles: DipoleConfig = DipoleConfig()
    offsets: tuple = (0.0, 0.0)

    @property
    def rel_A1(self) -> np.ndarray:
        total = self.A1sq + self.A2sq
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, self.A1sq / np.where(total > 0, total, 1.0), 0.5)

    def rows(self):
        """Flat rows in MAP_COLUMNS order, QWP-major."""
        rel = self.rel_A1
        for i, q in enumerate(self.qwp_deg):
            for j, h in enumerate(self.hwp_deg):
                yield (q, h, self.A1sq[i, j], self.A2sq[i, j], rel[i, j], self.phase[i, j])

    def amplitudes_at(self, qwp_deg, hwp_deg) -> np.ndarray:
        eps = waveplate_output(qwp_deg, hwp_deg, self.input_pol, self.offsets)
        return dipole_amplitudes(eps, self.dipoles)


def build_waveplate_map(
    qwp_grid,
    hwp_grid,
    input_pol=H,
    dipoles: DipoleConfig = DipoleConfig(),
    offsets=(0.0, 0.0),
) -> WaveplateMap:
    q = np.asarray(qwp_grid, float)
    h = np.asarray(hwp_grid, float)
    if q.ndim != 1 or h.ndim != 1 or q.size == 0 or h.size == 0:
        raise ValueError("waveplate grids must be non-empty 1-D arrays")
    if not (np.isfinite(q).all() and np.isfinite(h).all()):
        raise ValueError("waveplate grids must be finite")
    inp = jones(*input_pol)
    a = dipole_amplitudes(waveplate_output(q[:, None], h[None, :], inp, offsets), dipoles)
    a1, a2 = a[..., 0], a[..., 1]
    phase = wrap_phase(np.angle(a1) - np.angle(a2))
    # the relative phase is undefined where either emitter is not driven
    phase = np.where(np.minimum(np.abs(a1), np.abs(a2)) < PHASE_FLOOR, np.nan, phase)
    return WaveplateMap(q, h, np.abs(a1) ** 2, np.abs(a2) ** 2, phase, inp, dipoles, tuple(offsets))


def _imbalance(m: WaveplateMap, q, h) -> float:
    a = m.amplitudes_at(q, h)
    return float(abs(a[0]) ** 2 - abs(a[1]) ** 2)


def _phase(m: WaveplateMap, q, h) -> float:
    a = m.amplitudes_at(q, h)
    return float(np.angle(a[0]) - np.angle(a[1]))


def _refine_to_contour(m: WaveplateMap, q, h, tol=1e-12, max_iter=30, step=1e-6):
    """Newton steps along the gradient of A1^2 - A2^2 until it vanishes."""
    for _ in range(max_iter):
        f = _imbalance(m, q, h)
        if abs(f) < tol:
            break
        gq = (_imbalance(m, q + step, h) - _imbalance(m, q - step, h)) / (2 * step)
        gh = (_imbalance(m, q, h + step) - _imbalance(m, q, h - step)) / (2 * step)
        g2 = gq * gq + gh * gh
        if g2 == 0:
            break
        q, h = q - f * gq / g2, h - f * gh / g2
    return q, h


@dataclass(frozen=True)
class Contour:
    """Equal-amplitude level set, ordered along its length.

    ``phase`` is unwrapped, so it is continuous along the contour.
    """

    qwp_deg: np.ndarray
    hwp_deg: np.ndarray
    phase: np.ndarray
    A1sq: np.ndarray
    A2sq: np.ndarray
    source: WaveplateMap | None = None

    @property
    def phase_range(self) -> tuple[float, float]:
        return float(self.phase.min()), float(self.phase.max())

    def rows(self):
        return zip(self.qwp_deg, self.hwp_deg, self.phase, self.A1sq, self.A2sq)

    def _segments(self):
        """Index ranges over which the unwrapped phase is monotone."""
        d = np.sign(np.diff(self.phase))
        bounds = [0]
        for k in range(1, d.size):
            if d[k] != 0 and d[k - 1] != 0 and d[k] != d[k - 1]:
                bounds.append(k)
        bounds.append(self.phase.size - 1)
        return list(zip(bounds[:-1], bounds[1:]))

    def lookup(self, phase: float, refine: bool = True) -> tuple[float, float]:
        """Waveplate angles (QWP, HWP) producing relative phase ``phase``.

        The target is matched modulo 2 pi on the first monotone segment
        containing it, then interpolated linearly and, if ``refine`` is set
        and the source map is known, polished by Newton iteration.
        """
        lo, hi = self.phase_range
        # candidate branches of the target inside the covered range
        k0 = math.ceil((lo - phase) / (2 * math.pi))
        k1 = math.floor((hi - phase) / (2 * math.pi))
        for k in range(k0, k1 + 1):
            target = phase + 2 * math.pi * k
            for a, b in self._segments():
                p = self.phase[a : b + 1]
                if p.min() <= target <= p.max():
                    order = np.argsort(p, kind="stable")
                    s = np.interp(target, p[order], np.arange(a, b + 1, dtype=float)[order])
                    i = min(int(s), self.phase.size - 2)
                    frac = s - i
                    q = (1 - frac) * self.qwp_deg[i] + frac * self.qwp_deg[i + 1]
                    h = (1 - frac) * self.hwp_deg[i] + frac * self.hwp_deg[i + 1]
                    if refine and self.source is not None:
                        q, h = _refine_phase(self.source, q, h, phase)
                    return float(q), float(h)
        raise ContourError(f"phase {phase:.6g} rad is not reached along the contour (range {lo:.6g}..{hi:.6g})")


def _refine_phase(m: WaveplateMap, q, h, target, tol=1e-12, max_iter=30, step=1e-6):
    """Solve imbalance = 0 and phase = target jointly by 2-D Newton."""

    def resid(qq, hh):
        return np.array([_imbalance(m, qq, hh), wrap_phase(_phase(m, qq, hh) - target)])

    x = np.array([q, h], float)
    for _ in range(max_iter):
        r = resid(*x)
        if np.max(np.abs(r)) < tol:
            break
        jac = np.empty((2, 2))
        for j in range(2):
            dx = np.zeros(2)
            dx[j] = step
            jac[:, j] = (resid(*(x + dx)) - resid(*(x - dx))) / (2 * step)
        try:
            delta = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError:
            break
        # keep steps local so the iteration stays on the chosen branch
        n = np.max(np.abs(delta))
        if n > 2.0:
            delta *= 2.0 / n
        x = x + delta
    return x[0], x[1]


def equal_amplitude_contour(m: WaveplateMap, tol: float = 1e-3) -> Contour:
    """Longest level set A1^2 = A2^2 in the scanned window.

    Grid crossings from a marching-squares pass are refined onto the exact
    level set with the forward Jones model.
    """
    import contourpy

    f = m.A1sq - m.A2sq
    # exact zeros on grid lines would make the crossing ambiguous
    f = np.where(np.abs(f) < 1e-12, 1e-12, f)
    if m.qwp_deg.size < 2 or m.hwp_deg.size < 2 or not (f.min() < 0 < f.max()):
        raise ContourError("equal-amplitude level set is empty in the scanned waveplate window")
    gen = contourpy.contour_generator(m.hwp_deg, m.qwp_deg, f, line_type="Separate")
    lines = [ln for ln in gen.lines(0.0) if len(ln) >= 2]
    if not lines:
        raise ContourError("equal-amplitude level set is empty in the scanned waveplate window")
    line = max(lines, key=len)
    pts = [_refine_to_contour(m, q, h) for h, q in line]
    q = np.array([p[0] for p in pts])
    h = np.array([p[1] for p in pts])
    keep = np.r_[True, (np.abs(np.diff(q)) + np.abs(np.diff(h))) > 1e-9]
    q, h = q[keep], h[keep]
    a = m.amplitudes_at(q, h)
    a1sq, a2sq = np.abs(a[:, 0]) ** 2, np.abs(a[:, 1]) ** 2
    bad = np.abs(a1sq - a2sq) >= tol
    if bad.any():
        raise ContourError(f"{int(bad.sum())} contour points failed to refine below {tol:g}")
    phase = np.unwrap(np.angle(a[:, 0]) - np.angle(a[:, 1]))
    return Contour(q, h, phase, a1sq, a2sq, m)


__all__ = [
    "Contour",
    "D",
    "DipoleConfig",
    "H",
    "V",
    "WaveplateMap",
    "build_waveplate_map",
    "dipole_amplitudes",
    "drive_config",
    "drive_from_polarization",
    "equal_amplitude_contour",
    "half_wave",
    "jones",
    "quarter_wave",
    "retarder",
    "waveplate_output",
    "wrap_phase",
]
