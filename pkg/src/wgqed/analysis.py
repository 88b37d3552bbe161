"""Closed-form correlation and Rabi models, and weighted least-squares fitting.

Model parameters use ordinary frequencies (GHz) and times in ns, the way
rates are quoted for measured data; ``2*pi`` factors live inside the models.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import least_squares

from .errors import FitError
from .instrument import jitter_convolve

TWO_PI = 2.0 * math.pi


def model_broadened_dip(tau, A, gamma_minus, gamma_d, omega):
    """Temporally broadened single-emitter antibunching dip.

    ``g2 = 1 - A exp(-eta|tau|) [cos(mu tau) + (eta/mu) sin(mu|tau|)]`` with
    ``mu = 2 pi sqrt(omega^2 + ((gamma_minus - 2 gamma_d)/4)^2)`` and
    ``eta = 2 pi (3 gamma_minus + 2 gamma_d)/4``.  At ``mu = 0`` the
    critically damped limit ``1 - A exp(-eta|tau|)(1 + eta|tau|)`` is used.
    """
    t = np.abs(np.asarray(tau, float))
    mu = TWO_PI * math.sqrt(omega**2 + ((gamma_minus - 2.0 * gamma_d) / 4.0) ** 2)
    eta = TWO_PI * (3.0 * gamma_minus + 2.0 * gamma_d) / 4.0
    env = np.exp(-eta * t)
    if mu == 0.0:
        return 1.0 - A * env * (1.0 + eta * t)
    return 1.0 - A * env * (np.cos(mu * t) + (eta / mu) * np.sin(mu * t))


def model_two_sided_exp(tau, baseline, height, gamma_adip):
    return baseline + height * np.exp(-TWO_PI * gamma_adip * np.abs(np.asarray(tau, float)))


def model_rabi(power, eta_exc, amplitude, offset):
    """Emission after a resonant pulse of power P: ``offset + amplitude sin^2(eta sqrt(P))``."""
    p = np.asarray(power, float)
    if np.any(p < 0):
        raise ValueError("power must be non-negative")
    return offset + amplitude * np.sin(eta_exc * np.sqrt(p)) ** 2


def pi_pulse_power(eta_exc: float) -> float:
    return (math.pi / (2.0 * eta_exc)) ** 2


@dataclass(frozen=True)
class FitModel:
    name: str
    func: Callable
    param_names: tuple
    units: tuple
    lower: tuple
    upper: tuple
    fixed: tuple
    sigma: float = 0.0  # instrument Gaussian std. dev., ns
    center: float = 0.0

    def __post_init__(self):
        n = len(self.param_names)
        if not (len(self.units) == len(self.lower) == len(self.upper) == len(self.fixed) == n):
            raise ValueError("parameter metadata lengths differ")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("every lower bound must be below its upper bound")

    def with_fixed(self, **flags) -> "FitModel":
        fixed = tuple(flags.get(n, f) for n, f in zip(self.param_names, self.fixed))
        return replace(self, fixed=fixed)

    def evaluate(self, x, params) -> np.ndarray:
        x = np.asarray(x, float)
        if self.sigma <= 0:
            return self.func(x, *params)
        return _convolved(self.func, x, params, self.sigma, self.center)


def _convolved(func, x, params, sigma, center, oversample=4):
    """Model on an oversampled grid, jitter-convolved, interpolated back at x."""
    xs = np.unique(x)
    base = np.min(np.diff(xs)) if xs.size > 1 else sigma
    step = min(base / oversample, sigma / 4.0)
    pad = 6.0 * sigma + abs(center)
    lo, hi = xs[0] - pad, xs[-1] + pad
    n = int(math.ceil((hi - lo) / step)) + 1
    grid = lo + step * np.arange(n)
    conv = jitter_convolve(grid, func(grid, *params), sigma, center)
    return np.interp(x, grid, conv)


def broadened_dip(omega: float = 0.25, sigma: float = 0.0, fit_omega: bool = False) -> FitModel:
    return FitModel(
        "broadened_dip",
        model_broadened_dip,
        ("A", "gamma_minus", "gamma_d", "omega"),
        ("", "GHz", "GHz", "GHz"),
        (0.0, 1e-4, 0.0, 0.0),
        (2.0, 10.0, 10.0, 10.0),
        (False, False, True, not fit_omega),
        sigma,
    ), (1.0, 0.3, 0.0, omega)


def two_sided_exp(sigma: float = 0.0) -> FitModel:
    return FitModel(
        "two_sided_exp",
        model_two_sided_exp,
        ("baseline", "height", "gamma_adip"),
        ("", "", "GHz"),
        (-10.0, -100.0, 1e-4),
        (100.0, 100.0, 50.0),
        (False, False, False),
        sigma,
    ), (1.0, 1.0, 0.5)


def rabi() -> FitModel:
    return FitModel(
        "rabi",
        model_rabi,
        ("eta_exc", "amplitude", "offset"),
        ("1/sqrt(power)", "", ""),
        (1e-9, -np.inf, -np.inf),
        (np.inf, np.inf, np.inf),
        (False, False, False),
    ), (1.0, 1.0, 0.0)


MODELS = {"broadened_dip": broadened_dip, "two_sided_exp": two_sided_exp, "rabi": rabi}


@dataclass
class FitResult:
    model: str
    names: tuple
    params: np.ndarray
    errors: np.ndarray
    fixed: tuple
    residual_norm: float
    chi2_red: float
    converged: bool
    iterations: int
    message: str = ""
    derived: dict = field(default_factory=dict)
    fit_model: FitModel | None = None

    def __getitem__(self, name):
        return float(self.params[self.names.index(name)])

    def curve(self, x) -> np.ndarray:
        """Best-fit model evaluated at ``x`` (convolved if the model is)."""
        return self.fit_model.evaluate(x, self.params)

    @property
    def at_bounds(self) -> tuple:
        """Free parameters that ended on (or within 1e-6 of) a bound."""
        m = self.fit_model
        if m is None:
            return ()
        out = []
        for i, n in enumerate(self.names):
            if self.fixed[i]:
                continue
            lo, hi, v = m.lower[i], m.upper[i], self.params[i]
            scale = max(abs(v), 1.0)
            if abs(v - lo) <= 1e-6 * scale or abs(hi - v) <= 1e-6 * scale:
                out.append(n)
        return tuple(out)

    def error(self, name):
        return float(self.errors[self.names.index(name)])


def _residuals(model, x, y, w, full, free_idx):
    def fun(p_free):
        p = full.copy()
        p[free_idx] = p_free
        return (model.evaluate(x, p) - y) * w

    return fun


def _fd_jacobian(fun, p, lower, upper):
    """Central-difference Jacobian with step scaled to each parameter."""
    f0 = fun(p)
    jac = np.empty((f0.size, p.size))
    for k in range(p.size):
        h = 1e-6 * max(abs(p[k]), 1e-3)
        hi = min(p[k] + h, upper[k])
        lo = max(p[k] - h, lower[k])
        ph, pl = p.copy(), p.copy()
        ph[k], pl[k] = hi, lo
        jac[:, k] = (fun(ph) - fun(pl)) / (hi - lo)
    return jac


def fit(model: FitModel, x, y, yerr=None, p0=None, max_iter: int = 200) -> FitResult:
    """Weighted nonlinear least squares with bounds.

    Uses a trust-region reflective solver with central-difference Jacobians.
    Uncertainties are the covariance diagonal scaled by the reduced
    chi-square.  Raises :class:`FitError` if the Jacobian is rank deficient
    at the optimum, naming the parameters involved.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    n_par = len(model.param_names)
    if p0 is None:
        raise ValueError("an initial guess is required")
    p0 = np.asarray(p0, float)
    if p0.size != n_par:
        raise ValueError(f"expected {n_par} initial values, got {p0.size}")
    if x.size < n_par + 2:
        raise ValueError(f"need at least {n_par + 2} samples, got {x.size}")
    if yerr is None:
        w = np.ones_like(y)
    else:
        yerr = np.asarray(yerr, float)
        if np.any(yerr <= 0):
            raise ValueError("y errors must be positive")
        w = 1.0 / yerr

    free_idx = np.array([i for i in range(n_par) if not model.fixed[i]])
    lower = np.array(model.lower, float)[free_idx]
    upper = np.array(model.upper, float)[free_idx]
    start = np.clip(p0[free_idx], lower, upper)
    fun = _residuals(model, x, y, w, p0.copy(), free_idx)

    res = least_squares(
        fun,
        start,
        jac="3-point",
        bounds=(lower, upper),
        method="trf",
        ftol=1e-10,
        xtol=1e-12,
        gtol=1e-8,
        x_scale="jac",
        max_nfev=max_iter,
    )
    params = p0.copy()
    params[free_idx] = res.x

    jac = _fd_jacobian(fun, res.x, lower, upper)
    sv = np.linalg.svd(jac, compute_uv=False)
    if sv.size and sv[-1] <= 1e-12 * max(sv[0], 1e-300):
        _, _, vh = np.linalg.svd(jac)
        null = vh[-1]
        names = [model.param_names[free_idx[k]] for k in np.flatnonzero(np.abs(null) > 0.1)]
        raise FitError(f"singular Jacobian; degenerate parameters: {', '.join(names)}")

    resid = res.fun
    dof = max(x.size - free_idx.size, 1)
    chi2_red = float(resid @ resid) / dof
    cov = np.linalg.pinv(jac.T @ jac) * (chi2_red if chi2_red > 0 else 0.0)
    errors = np.zeros(n_par)
    errors[free_idx] = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    result = FitResult(
        model.name,
        tuple(model.param_names),
        params,
        errors,
        tuple(model.fixed),
        float(np.linalg.norm(resid)),
        chi2_red,
        bool(res.status > 0),
        int(res.nfev),
        res.message,
        fit_model=model,
    )
    if model.name == "rabi":
        eta = result["eta_exc"]
        result.derived["P_pi"] = pi_pulse_power(eta)
        result.derived["P_pi_err"] = 2.0 * pi_pulse_power(eta) * result.error("eta_exc") / eta
    return result


def fit_named(name: str, x, y, yerr=None, p0=None, **model_kw) -> FitResult:
    model, guess = MODELS[name](**model_kw)
    return fit(model, x, y, yerr, guess if p0 is None else p0)


DIP_WINDOW_NS = 0.4


def fit_dip_antidip(tau, g2, err=None, sigma=0.0, omega=0.25, window=DIP_WINDOW_NS, fit_omega=False):
    """Independent fits: dip model for |tau| >= window, antidip model for |tau| <= window."""
    tau = np.asarray(tau, float)
    g2 = np.asarray(g2, float)
    err = None if err is None else np.asarray(err, float)
    outer = np.abs(tau) >= window - 1e-12
    inner = np.abs(tau) <= window + 1e-12

    dip_model, dip_guess = broadened_dip(omega, sigma, fit_omega)
    min_val = g2[outer].min()
    dip_guess = (max(1.0 - min_val, 0.1), 0.3, 0.0, omega)
    dip = fit(dip_model, tau[outer], g2[outer], None if err is None else err[outer], dip_guess)

    adip_model, _ = two_sided_exp(sigma)
    edge = g2[inner][np.argmax(np.abs(tau[inner]))]
    peak = g2[np.argmin(np.abs(tau))]
    adip_guess = (edge, peak - edge, 0.5)
    adip = fit(adip_model, tau[inner], g2[inner], None if err is None else err[inner], adip_guess)
    return dip, adip


def fit_decay_rate(t, y) -> float:
    """Decay rate from a log-linear least-squares fit of a positive trace."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if np.any(y <= 0):
        raise ValueError("log-linear fit needs strictly positive samples")
    slope, _ = np.polyfit(t, np.log(y), 1)
    return float(-slope)


def load_xy_csv(path, value_column: str | None = None):
    """Read ``x, value[, error]`` columns from a CSV with a header row.

    The abscissa column is ``tau_ns`` or ``power_mw``; the ordinate is
    ``value_column`` if given, else ``value`` or ``g2``.  Returns
    ``(x_name, x, y, err_or_None)``; parse errors name the offending line.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        xname = next((h for h in ("tau_ns", "power_mw") if h in header), None)
        candidates = (value_column,) if value_column else ("value", "g2")
        yname = next((h for h in candidates if h in header), None)
        if xname is None or yname is None:
            raise ValueError(f"{path}:1: header needs tau_ns or power_mw, and one of {', '.join(candidates)}")
        ix, iy = header.index(xname), header.index(yname)
        ie = header.index("error") if "error" in header else None
        xs, ys, es = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                xs.append(float(row[ix]))
                ys.append(float(row[iy]))
                if ie is not None:
                    es.append(float(row[ie]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: cannot parse row {row!r} ({exc})") from None
    err = np.array(es) if ie is not None else None
    return xname, np.array(xs), np.array(ys), err


def format_report(result: FitResult, title: str | None = None) -> str:
    lines = [f"# fit: {title or result.model}"]
    lines.append(f"converged: {str(result.converged).lower()}")
    lines.append(f"iterations: {result.iterations}")
    lines.append(f"residual_norm: {result.residual_norm:.6e}")
    lines.append(f"chi2_reduced: {result.chi2_red:.6e}")
    if result.at_bounds:
        lines.append(f"at_bounds: {', '.join(result.at_bounds)}")
    lines.append("parameter,value,stderr,fixed")
    for n, v, e, f in zip(result.names, result.params, result.errors, result.fixed):
        lines.append(f"{n},{v:.10g},{e:.3g},{str(f).lower()}")
    for k, v in result.derived.items():
        lines.append(f"{k},{v:.10g},,derived")
    return "\n".join(lines) + "\n"
