"""Command-line front end: ``wgqed <subcommand> --config PATH``.

Each subcommand writes CSV files (authoritative), matplotlib figures, and a
``manifest.json`` with the resolved configuration and output digests.
Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DIP_WINDOW_NS,
    MODELS,
    fit,
    fit_dip_antidip,
    format_report,
    load_xy_csv,
)
from .config import ExperimentConfig, RunManifest, load_config
from .correlations import apply_sweep, g2_regression
from .dynamics import bloch_vectors, propagate, pulse_end, steady_state, trace_from_states, waveguide_intensity
from .errors import ConfigError, NumericalError
from .instrument import g2_measured, g2_zero_cw
from .model import EXCITED_PROJECTOR, ghz
from .polarization import CONTOUR_COLUMNS, MAP_COLUMNS, build_waveplate_map, equal_amplitude_contour, jones

log = logging.getLogger("wgqed")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _num(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


class Context:
    """Per-run output bookkeeping shared by the subcommands."""

    def __init__(self, cfg: ExperimentConfig, out: Path, fmt: str, threads: int, command: str):
        self.cfg = cfg
        self.out = out
        self.fmt = fmt
        self.threads = max(1, threads)
        self.manifest = RunManifest(command, cfg, __version__)
        self.prefix = cfg["output"]["prefix"]

    @property
    def want_csv(self) -> bool:
        return self.fmt in ("csv", "both")

    @property
    def want_plots(self) -> bool:
        return self.fmt in ("svg", "both")

    def path(self, name: str) -> Path:
        return self.out / f"{self.prefix}{name}"

    def write_csv(self, name: str, header, rows) -> None:
        if not self.want_csv:
            return
        p = self.path(name)
        with p.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([c if isinstance(c, str) else _num(c) for c in row])
        self.manifest.add(p)

    def write_matrix(self, name: str, corner: str, x, y, z) -> None:
        """Matrix CSV: first column ``y``, one column per ``x`` value."""
        header = [corner] + [_num(v) for v in x]
        self.write_csv(name, header, ([yv, *row] for yv, row in zip(y, z)))

    def write_text(self, name: str, text: str) -> None:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        self.manifest.add(p)

    def plot(self, func, name: str, *args, **kw) -> None:
        if not self.want_plots:
            return
        from . import plotting

        p = getattr(plotting, func)(self.path(name), *args, **kw)
        self.manifest.add(p)

    def pmap(self, func, items):
        """Ordered parallel map; results keep the order of ``items``."""
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [func(it) for it in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(func, items))


def _sweep_axes(cfg: ExperimentConfig, allowed, need: int, command: str):
    a1, v1 = cfg.sweep_values(1)
    a2, v2 = cfg.sweep_values(2)
    axes = [(a, v) for a, v in ((a1, v1), (a2, v2)) if a != "none"]
    bad = [a for a, _ in axes if a not in allowed]
    if bad or (need and len(axes) != need):
        raise ConfigError(
            f"{cfg.source}: [sweep] {command} expects {need or 'at most one'} axis/axes from "
            f"{', '.join(allowed)}; got {', '.join(a for a, _ in axes) or 'none'}"
        )
    return axes


def _sweep_value(axis: str, value: float) -> float:
    """Config sweep values are GHz for detunings; convert to angular units."""
    return ghz(value) if axis in ("detuning_split", "delta1", "delta2", "laser_detuning") else value


def _require_mode(cfg: ExperimentConfig, mode: str, command: str):
    if cfg["drive"]["mode"] != mode:
        raise ConfigError(f"{cfg.source}: [drive] {command} needs mode = {mode}")


# g2 ---------------------------------------------------------------------


def cmd_g2(ctx: Context) -> None:
    cfg = ctx.cfg
    _require_mode(cfg, "cw", "g2")
    sys_, drive = cfg.system(), cfg.drive()
    tau = cfg.tau_grid()
    model = cfg.instrument()
    laser = cfg["sweep"]["laser"]

    def evaluate(s, d):
        return g2_measured(s, d, model, tau) if model is not None else g2_regression(s, d, tau)

    axes = _sweep_axes(cfg, ("detuning_split", "beta2", "theta", "delta1", "delta2"), 0, "g2")
    names = [a for a, _ in axes]
    if len(axes) == 2:
        if sorted(names) != ["delta1", "delta2"]:
            raise ConfigError(f"{cfg.source}: [sweep] two-axis g2 maps need axes delta1 and delta2")
        d1 = dict(axes)["delta1"]
        d2 = dict(axes)["delta2"]

        def row(v2):
            out = []
            for v1 in d1:
                try:
                    out.append(g2_zero_cw(sys_.with_detunings(ghz(v1), ghz(v2)), drive))
                except (NumericalError, np.linalg.LinAlgError) as exc:
                    log.warning("cell delta1=%g delta2=%g GHz failed: %s", v1, v2, exc)
                    out.append(float("nan"))
            return out

        z = np.array(ctx.pmap(row, d2))
        ctx.write_matrix("g2_zero_map.csv", "delta2_ghz\\delta1_ghz", d1, d2, z)
        ctx.plot("heatmap", "g2_zero_map.svg", d1, d2, z, "Δ1/2π (GHz)", "Δ2/2π (GHz)", "g2(0)")
        print(f"g2(0) map {z.shape[0]}x{z.shape[1]}: min {np.nanmin(z):.4g}, max {np.nanmax(z):.4g}")
        return

    if not axes:
        tr = evaluate(sys_, drive)
        ctx.write_csv("g2.csv", ["tau_ns", "g2"], zip(tau, tr.g2))
        ctx.plot("line_plot", "g2.svg", tau, {"g2": tr.g2}, "τ (ns)", "g2(τ)")
        print(f"g2(0) = {tr.at_zero():.6g}")
        return

    axis, values = axes[0]
    if axis in ("delta1", "delta2"):
        raise ConfigError(f"{cfg.source}: [sweep] axis {axis} needs a second axis for a g2(0) map")

    def point(v):
        try:
            s, d = apply_sweep(sys_, drive, axis, _sweep_value(axis, v), laser)
            return evaluate(s, d).g2
        except (NumericalError, np.linalg.LinAlgError) as exc:
            log.warning("sweep point %s=%g failed: %s", axis, v, exc)
            return np.full(tau.size, np.nan)

    mat = np.column_stack(ctx.pmap(point, values))
    unit = {"detuning_split": "_ghz", "theta": "_rad"}.get(axis, "")
    cols = [f"{axis}{unit}={_num(v)}" for v in values]
    ctx.write_csv("g2_sweep.csv", ["tau_ns", *cols], ([t, *r] for t, r in zip(tau, mat)))
    zero = mat[np.argmin(np.abs(tau))]
    ctx.write_csv("g2_zero.csv", [f"{axis}{unit}", "g2_0"], zip(values, zero))
    ctx.plot("heatmap", "g2_sweep.svg", values, tau, mat, f"{axis}{unit}", "τ (ns)", "g2(τ)")
    for v, g in zip(values, zero):
        print(f"{axis}={v:g}: g2(0) = {g:.6g}")


# lifetime ---------------------------------------------------------------


def cmd_lifetime(ctx: Context) -> None:
    cfg = ctx.cfg
    _require_mode(cfg, "pulsed", "lifetime")
    sys_, drive = cfg.system(), cfg.drive()
    t = cfg.time_grid()
    axes = _sweep_axes(cfg, ("detuning_split",), 0, "lifetime")
    laser = cfg["sweep"]["laser"]
    rho0 = np.zeros((4, 4), complex)
    rho0[0, 0] = 1.0

    def run(s):
        rhos = propagate(s, drive, rho0, t)
        return trace_from_states(s, t, rhos), rhos

    if not axes:
        tr, rhos = run(sys_)
        ctx.write_csv(
            "lifetime.csv",
            ["t_ns", "intensity", "p_e1", "p_e2", "p_plus", "p_minus"],
            zip(t, tr.intensity, tr.populations[:, 0], tr.populations[:, 1], tr.p_plus, tr.p_minus),
        )
        ctx.plot("line_plot", "lifetime.svg", t, {"intensity": tr.intensity}, "t (ns)", "I(t) (1/ns)")
        if cfg["output"]["bloch"]:
            _write_bloch(ctx, "bloch.csv", t, rhos)
        k = int(np.argmax(tr.intensity))
        print(f"peak intensity {tr.intensity[k]:.6g} at t = {t[k]:.4g} ns")
        return

    _, values = axes[0]
    results = ctx.pmap(lambda v: run(sys_.with_split(ghz(v), laser)), values)
    mat = np.column_stack([r[0].intensity for r in results])
    cols = [f"detuning_split_ghz={_num(v)}" for v in values]
    ctx.write_csv("lifetime_map.csv", ["t_ns", *cols], ([ti, *r] for ti, r in zip(t, mat)))
    ctx.plot("heatmap", "lifetime_map.svg", values, t, mat, "Δ12/2π (GHz)", "t (ns)", "I(t)")
    if cfg["output"]["bloch"]:
        for i, (_, rhos) in enumerate(results):
            _write_bloch(ctx, f"bloch_{i:03d}.csv", t, rhos)
    print(f"lifetime map: {len(values)} detunings x {t.size} times")


def _write_bloch(ctx: Context, name: str, t, rhos) -> None:
    vecs, w, valid = bloch_vectors(rhos)
    rows = ((ti, *v, wi) for ti, v, wi, ok in zip(t, vecs, w, valid) if ok)
    ctx.write_csv(name, ["t_ns", "x", "y", "z", "w"], rows)


# steady-state map -------------------------------------------------------


def cmd_steadystate_map(ctx: Context) -> None:
    cfg = ctx.cfg
    _require_mode(cfg, "cw", "steadystate-map")
    sys_, drive = cfg.system(), cfg.drive()
    axes = dict(_sweep_axes(cfg, ("detuning_split", "laser_detuning"), 2, "steadystate-map"))
    if len(axes) != 2:
        raise ConfigError(f"{cfg.source}: [sweep] steadystate-map needs axes detuning_split and laser_detuning")
    splits, lasers = axes["detuning_split"], axes["laser_detuning"]

    def row(nu):
        # nu is the laser frequency relative to emitter 1, so delta1 = -nu
        d1 = -ghz(nu)
        vals = []
        for sp in splits:
            try:
                rho = steady_state(sys_.with_detunings(d1, d1 - ghz(sp)), drive)
                vals.append(waveguide_intensity(rho, sys_))
            except (NumericalError, np.linalg.LinAlgError) as exc:
                log.warning("cell laser=%g split=%g GHz failed: %s", nu, sp, exc)
                vals.append(float("nan"))
        return vals

    z = np.array(ctx.pmap(row, lasers))
    ctx.write_matrix("steadystate_map.csv", "laser_detuning_ghz\\detuning_split_ghz", splits, lasers, z)
    ctx.plot("heatmap", "steadystate_map.svg", splits, lasers, z, "Δ12/2π (GHz)", "laser detuning/2π (GHz)", "I")
    print(f"steady-state map {z.shape[0]}x{z.shape[1]}: max intensity {np.nanmax(z):.6g}")


# waveplate map ----------------------------------------------------------


def cmd_waveplate_map(ctx: Context) -> None:
    from .config import POLARIZATIONS

    cfg = ctx.cfg
    axes = dict(_sweep_axes(cfg, ("qwp_deg", "hwp_deg"), 2, "waveplate-map"))
    if len(axes) != 2:
        raise ConfigError(f"{cfg.source}: [sweep] waveplate-map needs axes qwp_deg and hwp_deg")
    p = cfg["polarization"]
    m = build_waveplate_map(
        axes["qwp_deg"],
        axes["hwp_deg"],
        jones(*POLARIZATIONS[p["input"]]),
        cfg.dipoles(),
        (p["qwp_offset_deg"], p["hwp_offset_deg"]),
    )
    q, h = m.qwp_deg, m.hwp_deg
    corner = "qwp_deg\\hwp_deg"
    for name, z in (("A1sq", m.A1sq), ("A2sq", m.A2sq), ("rel_A1", m.rel_A1), ("phase", m.phase)):
        ctx.write_matrix(f"waveplate_{name}.csv", corner, h, q, z)
        label = "phase (rad)" if name == "phase" else name
        ctx.plot("heatmap", f"waveplate_{name}.svg", h, q, z, "HWP angle (deg)", "QWP angle (deg)", label)
    ctx.write_csv("waveplate_map.csv", list(MAP_COLUMNS), m.rows())
    contour = equal_amplitude_contour(m)
    ctx.write_csv("contour.csv", list(CONTOUR_COLUMNS), contour.rows())
    ctx.plot("contour_overlay", "waveplate_contour.svg", q, h, m.phase, contour.qwp_deg, contour.hwp_deg)
    lo, hi = contour.phase_range
    print(f"equal-amplitude contour: {contour.phase.size} points, phase range {lo:.4f} .. {hi:.4f} rad")


# rabi -------------------------------------------------------------------


def cmd_rabi(ctx: Context) -> None:
    cfg = ctx.cfg
    _require_mode(cfg, "pulsed", "rabi")
    axes = _sweep_axes(cfg, ("power_mw",), 1, "rabi")
    powers = axes[0][1]
    if np.any(powers < 0):
        raise ConfigError(f"{cfg.source}: [sweep] powers must be >= 0")
    sys_ = cfg.system()
    k = cfg["drive"]["area_per_sqrt_mw"]
    rates = np.array([em.waveguide_rate for em in sys_.emitters])

    def point(pw):
        area = k * math.sqrt(pw)
        if area == 0:
            return np.zeros(2)
        drive = cfg.drive(area=area)
        rho0 = np.zeros((4, 4), complex)
        rho0[0, 0] = 1.0
        rho = propagate(sys_, drive, rho0, np.array([0.0, pulse_end(drive)]))[-1]
        pops = np.array([np.trace(pr @ rho).real for pr in EXCITED_PROJECTOR])
        return rates * pops

    intens = np.array(ctx.pmap(point, powers))
    ctx.write_csv("rabi.csv", ["power_mw", "I1", "I2"], ((pw, *i) for pw, i in zip(powers, intens)))
    curves = {"I1": intens[:, 0], "I2": intens[:, 1]}
    ctx.plot("line_plot", "rabi.svg", np.sqrt(powers), curves, "√P (√mW)", "I (1/ns)", markers=True)
    if not cfg["output"]["fit"]:
        return
    report, p_pi = [], []
    swing = np.ptp(intens, axis=0)
    for i in range(2):
        y = intens[:, i]
        # residual waveguide transfer keeps an undriven emitter slightly above zero
        if swing[i] <= 1e-2 * swing.max():
            report.append(f"# fit: rabi emitter {i + 1}\nnot driven (flat at {y.mean():.6g})\n")
            p_pi.append(float("nan"))
            continue
        res = _fit_rabi(powers, y)
        report.append(format_report(res, f"rabi emitter {i + 1}"))
        p_pi.append(res.derived["P_pi"])
    if all(np.isfinite(p_pi)):
        report.append(f"P_pi ratio (emitter 1 / emitter 2): {p_pi[0] / p_pi[1]:.6g}\n")
    ctx.write_text("rabi_fit.txt", "\n".join(report))
    for i, v in enumerate(p_pi):
        print(f"emitter {i + 1}: P_pi = {v:.6g} mW")


def _fit_rabi(powers, y, err=None):
    model, _ = MODELS["rabi"]()
    # guess eta from the first maximum, i.e. the pi-pulse power
    j = int(np.argmax(y))
    p_max = powers[j] if powers[j] > 0 else powers[-1]
    guess = (math.pi / (2.0 * math.sqrt(p_max)), float(np.ptp(y)), float(y.min()))
    return fit(model, powers, y, err, guess)


# fit --------------------------------------------------------------------


def cmd_fit(ctx: Context, args) -> None:
    cfg = ctx.cfg
    try:
        xname, x, y, err = load_xy_csv(args.data, args.column)
    except OSError as exc:
        raise ConfigError(f"cannot read data file: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.sigma_ns is not None:
        sigma = args.sigma_ns
    else:
        inst = cfg.instrument()
        sigma = inst.sigma if inst is not None else 0.0
    omega = args.omega_ghz if args.omega_ghz is not None else cfg["drive"]["omega1_ghz"] or 0.25
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    err = None if err is None else err[order]
    xf = np.linspace(x.min(), x.max(), 4 * x.size)
    fits, reports, params = {}, [], []

    def record(res, label, window=None):
        reports.append(format_report(res, label))
        yf = res.curve(xf)
        if window is not None:
            yf = np.where(window(np.abs(xf)), yf, np.nan)
        fits[label] = (xf, yf)
        for n, v, e, fx in zip(res.names, res.params, res.errors, res.fixed):
            params.append((label, n, v, e, "true" if fx else "false"))
        for n, v in res.derived.items():
            params.append((label, n, v, float("nan"), "derived"))

    if args.model == "dip_antidip":
        if xname != "tau_ns":
            raise ConfigError("dip_antidip fits need a tau_ns column")
        dip, adip = fit_dip_antidip(x, y, err, sigma, omega, args.window_ns, args.fit_omega)
        record(dip, "broadened_dip", lambda a: a >= args.window_ns - 1e-12)
        record(adip, "two_sided_exp", lambda a: a <= args.window_ns + 1e-12)
        summary = (
            f"Gamma_dip/2pi = {dip['gamma_minus']:.6g} +- {dip.error('gamma_minus'):.2g} GHz; "
            f"Gamma_adip/2pi = {adip['gamma_adip']:.6g} +- {adip.error('gamma_adip'):.2g} GHz"
        )
    elif args.model == "rabi":
        res = _fit_rabi(x, y, err)
        record(res, "rabi")
        summary = f"P_pi = {res.derived['P_pi']:.6g} +- {res.derived['P_pi_err']:.2g} mW"
    else:
        kw = {"sigma": sigma}
        if args.model == "broadened_dip":
            kw.update(omega=omega, fit_omega=args.fit_omega)
        model, guess = MODELS[args.model](**kw)
        res = fit(model, x, y, err, guess)
        record(res, args.model)
        summary = ", ".join(f"{n} = {v:.6g}" for n, v in zip(res.names, res.params))
    ctx.write_text("fit_report.txt", "\n".join(reports) + f"\n{summary}\n")
    ctx.write_csv("fit_params.csv", ["model", "parameter", "value", "stderr", "fixed"], params)
    ctx.write_csv(
        "fit_curve.csv", [xname, *fits.keys()], ([xv, *(c[1][i] for c in fits.values())] for i, xv in enumerate(xf))
    )
    ctx.plot("fit_overlay", "fit_overlay.svg", x, y, fits, xname, "value")
    print(summary)


# entry point ------------------------------------------------------------

COMMANDS = {
    "g2": (cmd_g2, "g2(tau) through regression, spectral diffusion and jitter; sweeps and g2(0) maps"),
    "lifetime": (cmd_lifetime, "time-resolved emission after pulsed excitation; detuning maps, Bloch CSV"),
    "steadystate-map": (cmd_steadystate_map, "steady-state intensity versus emitter split and laser detuning"),
    "waveplate-map": (cmd_waveplate_map, "waveplate maps and the equal-amplitude contour"),
    "rabi": (cmd_rabi, "pulse-area Rabi curves per emitter with P_pi fits"),
    "fit": (cmd_fit, "fit dip, antidip or Rabi models to CSV data"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wgqed", description="Waveguide-coupled emitter pair simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="INI config file or bundled config name")
        p.add_argument("--out", help="output directory (overrides [output] directory)")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads for sweeps")
        p.add_argument("--seed", type=int, default=None, help="reserved; all computations are deterministic")
        p.add_argument("--format", choices=("csv", "svg", "both"), help="outputs to write")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "fit":
            p.add_argument("--data", required=True, help="CSV with tau_ns or power_mw and a value column")
            p.add_argument(
                "--model", required=True, choices=("broadened_dip", "two_sided_exp", "rabi", "dip_antidip")
            )
            p.add_argument("--column", help="value column name (default: value, then g2)")
            p.add_argument("--sigma-ns", type=float, help="instrument sigma (default: from config jitter)")
            p.add_argument("--omega-ghz", type=float, help="drive Rabi frequency for the dip model")
            p.add_argument("--window-ns", type=float, default=DIP_WINDOW_NS)
            p.add_argument("--fit-omega", action="store_true", help="free the dip model's Rabi frequency")
        else:
            p.set_defaults(_needs_config=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    start = time.perf_counter()
    try:
        if args.config:
            cfg = load_config(args.config)
        elif getattr(args, "_needs_config", False):
            raise ConfigError(f"{args.command} needs --config")
        else:
            cfg = ExperimentConfig()
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(args.out or cfg["output"]["directory"])
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
        ctx = Context(cfg, out, args.format or cfg["output"]["format"], args.threads, args.command)
        func = COMMANDS[args.command][0]
        func(ctx, args) if args.command == "fit" else func(ctx)
        ctx.manifest.duration_s = time.perf_counter() - start
        ctx.manifest.write(ctx.path("manifest.json"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # parameter validation outside the config loader, e.g. a sweep leaving the valid range
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
