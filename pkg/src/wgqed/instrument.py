"""Detector jitter and quasi-static spectral diffusion."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .correlations import CorrelationTrace, DEFAULT_TAU, coincidence_zero, g2_regression
from .dynamics import steady_state
from .errors import NumericalError
from .model import DriveConfig, SystemParams, emission_operator, ghz

log = logging.getLogger(__name__)

FWHM_TO_SIGMA = 1.0 / math.sqrt(8.0 * math.log(2.0))


def coincidence_sigma(fwhm: float, detectors: int = 2) -> float:
    """Std. dev. of the coincidence jitter for ``detectors`` identical detectors."""
    return fwhm * math.sqrt(detectors) * FWHM_TO_SIGMA


@dataclass(frozen=True)
class InstrumentModel:
    """Jitter per detector (FWHM, ns) and Gaussian detuning spread per emitter (rad/ns).

    ``sd_correlation`` couples the two emitters' offsets; 0 means independent.
    The default quadrature order suits spreads well below the linewidth; a
    spread comparable to the linewidth needs order ~80 for 0.1% accuracy.
    """

    jitter_fwhm: float = 0.35
    sd_widths: tuple[float, float] = (ghz(0.1), ghz(0.1))
    quadrature_order: int = 9
    sd_correlation: float = 0.0
    jitter_center: float = 0.0

    def __post_init__(self):
        if self.jitter_fwhm < 0:
            raise ValueError("jitter_fwhm must be >= 0")
        if any(w < 0 for w in self.sd_widths) or len(self.sd_widths) != 2:
            raise ValueError("sd_widths must be two non-negative widths")
        object.__setattr__(self, "sd_widths", tuple(float(w) for w in self.sd_widths))
        if int(self.quadrature_order) != self.quadrature_order or self.quadrature_order < 1:
            raise ValueError("quadrature_order must be a positive integer")
        if not -1.0 <= self.sd_correlation <= 1.0:
            raise ValueError("sd_correlation must lie in [-1, 1]")

    @property
    def sigma(self) -> float:
        return coincidence_sigma(self.jitter_fwhm)

    def ideal(self) -> "InstrumentModel":
        return InstrumentModel(0.0, (0.0, 0.0), self.quadrature_order)


def gaussian_kernel(step: float, sigma: float, center: float = 0.0, cutoff: float = 6.0) -> np.ndarray:
    half = int(math.ceil((cutoff * sigma + abs(center)) / step))
    x = np.arange(-half, half + 1) * step - center
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k[np.abs(x) > cutoff * sigma] = 0.0
    return k / k.sum()


def jitter_convolve(x, y, sigma: float, center: float = 0.0) -> np.ndarray:
    """Convolve a uniformly sampled curve with a normalized Gaussian.

    The kernel is truncated at six standard deviations and its weights are
    renormalized to one; the curve is extended with its edge values.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if sigma == 0:
        return y.copy()
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    steps = np.diff(x)
    step = steps[0]
    if not np.allclose(steps, step, rtol=1e-6, atol=1e-12):
        raise ValueError("jitter convolution needs a uniform grid")
    if step > sigma / 4.0 * (1 + 1e-9):
        raise ValueError(
            f"grid step {step:.4g} ns too coarse for sigma {sigma:.4g} ns; "
            f"need step <= {sigma / 4.0:.4g} ns"
        )
    k = gaussian_kernel(step, sigma, center)
    half = len(k) // 2
    padded = np.pad(y, half, mode="edge")
    # out[i] = sum_j k[j] * y[i - (j - half)], the response being centered at `center`
    return np.convolve(padded, k, mode="valid")


def quadrature_nodes(order: int):
    """Gauss-Hermite nodes and weights for a standard normal variable."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    return x, w / w.sum()


def detuning_offsets(model: InstrumentModel):
    """Tensor-product quadrature over the two emitters' detuning offsets.

    Yields ``(offset1, offset2, weight)``; weights sum to one.
    """
    s1, s2 = model.sd_widths
    n1 = model.quadrature_order if s1 > 0 else 1
    n2 = model.quadrature_order if s2 > 0 else 1
    x1, w1 = quadrature_nodes(n1)
    x2, w2 = quadrature_nodes(n2)
    r = model.sd_correlation
    out = []
    for a, wa in zip(x1, w1):
        for b, wb in zip(x2, w2):
            # with a single node on an axis the offsets are exactly zero there
            d1 = s1 * a
            d2 = s2 * (r * a + math.sqrt(1.0 - r * r) * b) if s1 > 0 else s2 * b
            out.append((d1, d2, wa * wb))
    return out


def spectral_diffusion_average(observable, model: InstrumentModel):
    """Weighted average of ``observable(offset1, offset2)`` over the quadrature.

    The observable may return a scalar, an array, or a tuple of those; each
    element is averaged.  Only unnormalized quantities should be averaged.
    """
    total = None
    for d1, d2, w in detuning_offsets(model):
        val = observable(d1, d2)
        parts = val if isinstance(val, tuple) else (val,)
        parts = tuple(np.asarray(p, float) for p in parts)
        if not all(np.all(np.isfinite(p)) for p in parts):
            raise NumericalError(f"non-finite observable at quadrature node ({d1:.6g}, {d2:.6g})")
        if total is None:
            total = [w * p for p in parts]
        else:
            for i, p in enumerate(parts):
                total[i] = total[i] + w * p
    total = [t if t.ndim else float(t) for t in total]
    return tuple(total) if isinstance(val, tuple) else total[0]


def _shifted(sys: SystemParams, d1: float, d2: float) -> SystemParams:
    e1, e2 = sys.emitters
    return sys.with_detunings(e1.detuning + d1, e2.detuning + d2)


def g2_measured(
    sys: SystemParams,
    drive: DriveConfig,
    model: InstrumentModel,
    tau=DEFAULT_TAU,
) -> CorrelationTrace:
    """Regression g2 averaged over spectral diffusion, then convolved with jitter.

    ``<G2>`` and ``<I>`` are averaged separately and normalized afterwards,
    as for a long integration.
    """
    tau = np.asarray(tau, float)

    def observable(d1, d2):
        tr = g2_regression(_shifted(sys, d1, d2), drive, tau)
        return tr.G2, tr.intensity

    big_g2, intensity = spectral_diffusion_average(observable, model)
    g2 = big_g2 / intensity**2
    if model.sigma > 0:
        g2 = jitter_convolve(tau, g2, model.sigma, model.jitter_center)
    return CorrelationTrace(
        tau,
        g2,
        g2 * intensity**2,
        intensity,
        {"method": "regression+instrument", "sigma_ns": model.sigma, "sd_widths": model.sd_widths},
    )


def g2_zero_cw(sys: SystemParams, drive: DriveConfig) -> float:
    rho = steady_state(sys, drive)
    e = emission_operator(sys)
    intensity = float(np.real(np.trace(e.conj().T @ e @ rho)))
    return coincidence_zero(rho, sys) / intensity**2


@dataclass
class MapResult:
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray  # shape (len(y), len(x))
    failures: list


def g2_map_diffusion(sys: SystemParams, drive: DriveConfig, delta1_grid, delta2_grid) -> MapResult:
    """g2(0) for every pair of laser detunings (rows: emitter 2, columns: emitter 1)."""
    d1s = np.asarray(delta1_grid, float)
    d2s = np.asarray(delta2_grid, float)
    if not (np.all(np.isfinite(d1s)) and np.all(np.isfinite(d2s))):
        raise ValueError("detuning grids must be finite")
    out = np.full((d2s.size, d1s.size), np.nan)
    failures = []
    for i, d2 in enumerate(d2s):
        for j, d1 in enumerate(d1s):
            try:
                out[i, j] = g2_zero_cw(sys.with_detunings(d1, d2), drive)
            except (NumericalError, np.linalg.LinAlgError) as exc:
                log.warning("map cell (%g, %g) failed: %s", d1, d2, exc)
                failures.append(((float(d1), float(d2)), str(exc)))
    return MapResult(d1s, d2s, out, failures)


__all__ = [
    "InstrumentModel",
    "MapResult",
    "coincidence_sigma",
    "detuning_offsets",
    "g2_map_diffusion",
    "g2_measured",
    "jitter_convolve",
    "quadrature_nodes",
    "spectral_diffusion_average",
]
