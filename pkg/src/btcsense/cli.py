"""Reproducible experiment runner.

Subcommands: spectrum | global-rate | monitoring | advantage | scaling |
rescale-check.  Parameters come from an optional config file (YAML or JSON,
nested keys under the subcommand name) overridden by command-line flags; all
rates are in units of kappa.  Outputs are plain data files (CSV default,
JSON via --format json) plus a manifest.json with config echo and checksums.

Exit codes: 0 success, 1 partial failure (some grid points failed),
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bounds import (
    advantage_cap,
    advantage_error,
    collective_advantage,
    inefficiency_bound,
    rescaling_check,
)
from .errors import ConfigurationError, NumericalError
from .io import write_csv, write_manifest
from .liouvillian import build_liouvillian, spectral_decomposition, steady_state
from .monitoring import UnravellingConfig, run_ensemble, signal_fisher_rate
from .qfi import analytic_fglobal, build_correlation_model, global_rate_spectral
from .scaling import critical_scaling_study, fit_power_law_offset, local_exponents
from .spin import SpinSector, build_spin_operators

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(path: str | None, section: str) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {path}")
    text = p.read_text()
    data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigurationError("config file must hold a mapping")
    section_data = data.get(section, data)
    if not isinstance(section_data, dict):
        raise ConfigurationError(f"config section {section!r} must be a mapping")
    return section_data


def _merge(defaults: dict, file_cfg: dict, args: argparse.Namespace) -> dict:
    cfg = dict(defaults)
    for key, val in file_cfg.items():
        cfg[key.replace("-", "_")] = val
    for key, val in vars(args).items():
        if key in cfg and val is not None:
            cfg[key] = val
    return cfg


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in str(text).replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(tok) for tok in str(text).replace(",", " ").split()]


def _emit(out_dir: Path, name: str, columns, rows, meta, fmt: str) -> Path:
    if fmt == "json":
        path = out_dir / f"{name}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "config": {k: meta[k] for k in meta},
            "columns": list(columns),
            "results": [list(r) for r in rows],
        }
        path.write_text(json.dumps(payload, indent=1, sort_keys=True, default=float) + "\n")
        return path
    return write_csv(out_dir / f"{name}.csv", columns, rows, metadata=meta)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_spectrum(args) -> int:
    cfg = _merge(
        {"n_spins": 4, "omega": 1.0, "kappa": 1.0, "amplitudes": False,
         "out": "runs/spectrum", "format": "csv"},
        _load_config(args.config, "spectrum"), args,
    )
    t0 = time.time()
    sector = SpinSector(int(cfg["n_spins"]))
    lv = build_liouvillian(sector, float(cfg["omega"]), float(cfg["kappa"]))
    spec = spectral_decomposition(lv)
    out_dir = Path(cfg["out"])
    meta = {k: cfg[k] for k in ("n_spins", "omega", "kappa")}
    meta["units"] = "kappa=1"
    rows = [
        (k, spec.eigenvalues[k].real / lv.kappa, spec.eigenvalues[k].imag / lv.kappa)
        for k in range(spec.n_modes)
    ]
    outputs = [_emit(out_dir, "eigenvalues", ("k", "re_lambda", "im_lambda"),
                     rows, meta, cfg["format"])]
    if cfg["amplitudes"]:
        ops = build_spin_operators(sector)
        rho_ss = steady_state(lv, check_unique=False)
        model = build_correlation_model(spec, rho_ss, ops.jx)
        amp_rows = [
            (k, model.gamma[k], model.frequency[k],
             model.amplitude[k], model.sine_amplitude[k])
            for k in range(model.n_modes)
        ]
        outputs.append(_emit(out_dir, "amplitudes",
                             ("k", "gamma", "omega_k", "a_cos", "a_sin"),
                             amp_rows, meta, cfg["format"]))
    write_manifest(out_dir, cfg, outputs, time.time() - t0)
    return EXIT_OK


def cmd_global_rate(args) -> int:
    cfg = _merge(
        {"n_grid": "2 4 8", "omega": 4.0, "kappa": 1.0, "extreme_limit": False,
         "out": "runs/global_rate", "format": "csv"},
        _load_config(args.config, "global_rate"), args,
    )
    t0 = time.time()
    grid = _int_list(cfg["n_grid"])
    kappa = float(cfg["kappa"])
    omega = float(cfg["omega"])
    rows, failures = [], []
    for n in grid:
        try:
            sector = SpinSector(n)
            if cfg["extreme_limit"]:
                from .liouvillian import extreme_limit_generator

                lv = extreme_limit_generator(sector, omega, kappa)
            else:
                lv = build_liouvillian(sector, omega, kappa)
            spec = spectral_decomposition(lv)
            ops = build_spin_operators(sector)
            rho_ss = steady_state(lv, check_unique=False)
            model = build_correlation_model(spec, rho_ss, ops.jx)
            rate = global_rate_spectral(model)
            ana = analytic_fglobal(n, kappa)
            rows.append((n, rate.value, ana, rate.value / ana - 1.0,
                         rate.metadata["truncation_residual"]))
        except (NumericalError, ConfigurationError) as exc:
            failures.append((n, str(exc)))
    out_dir = Path(cfg["out"])
    meta = {"omega": omega, "kappa": kappa,
            "extreme_limit": cfg["extreme_limit"], "units": "kappa=1"}
    outputs = [_emit(out_dir, "global_rate",
                     ("N", "f_global_spectral", "f_global_analytic",
                      "relative_gap", "truncation_residual"),
                     rows, meta, cfg["format"])]
    if len(rows) >= 3:
        series = local_exponents([r[0] for r in rows], [r[1] for r in rows])
        outputs.append(_emit(out_dir, "local_exponents", ("N", "exponent"),
                             list(zip(series.exponent_sizes, series.exponents)),
                             meta, cfg["format"]))
    if failures:
        outputs.append(_emit(out_dir, "failures", ("N", "error"),
                             failures, meta, cfg["format"]))
    write_manifest(out_dir, cfg, outputs, time.time() - t0)
    return EXIT_PARTIAL if failures else EXIT_OK


def _monitoring_config(cfg) -> UnravellingConfig:
    return UnravellingConfig(
        n_spins=int(cfg["n_spins"]),
        omega=float(cfg["omega"]),
        kappa=float(cfg["kappa"]),
        scheme=str(cfg["scheme"]),
        eta=float(cfg["eta"]),
        dt=None if cfg.get("dt") in (None, "auto") else float(cfg["dt"]),
        T=float(cfg["T"]),
        seed=int(cfg["seed"]),
        n_traj=int(cfg["n_traj"]),
        initial_state=str(cfg.get("initial_state", "steady")),
    )


def cmd_monitoring(args) -> int:
    cfg = _merge(
        {"n_spins": 2, "omega": 4.0, "kappa": 1.0, "scheme": "homodyne",
         "eta": 1.0, "dt": None, "T": 20.0, "seed": 1, "n_traj": 500,
         "initial_state": "steady", "out": "runs/monitoring", "format": "csv"},
        _load_config(args.config, "monitoring"), args,
    )
    if int(cfg["n_traj"]) < 1:
        raise ConfigurationError("n_traj must be at least 1")
    t0 = time.time()
    ucfg = _monitoring_config(cfg)
    res = run_ensemble(ucfg)
    fit = signal_fisher_rate(res)
    eta = ucfg.eta
    bound = inefficiency_bound(ucfg.n_spins, eta, ucfg.kappa)
    out_dir = Path(cfg["out"])
    meta = {k: cfg[k] for k in ("n_spins", "omega", "kappa", "scheme", "eta",
                                "T", "seed", "n_traj", "initial_state")}
    meta["dt"] = ucfg.dt
    meta["units"] = "kappa=1"
    curve_rows = [
        (t, f, sm, p)
        for t, f, sm, p in zip(res.times, res.fisher_curve,
                               res.score_mean, res.purity.mean(axis=0))
    ]
    outputs = [
        _emit(out_dir, "fisher_curve",
              ("kappa_t", "f_signal", "score_mean", "purity_mean"),
              curve_rows, meta, cfg["format"]),
        _emit(out_dir, "rate",
              ("rate", "std_error", "window_lo", "window_hi", "eta_bound"),
              [(fit.value, fit.std_error, fit.window[0], fit.window[1], bound)],
              meta, cfg["format"]),
    ]
    write_manifest(out_dir, cfg, outputs, time.time() - t0)
    return EXIT_OK


def cmd_advantage(args) -> int:
    cfg = _merge(
        {"n_list": "2 4", "eta_list": "0.25 0.5 0.9", "omega": 4.0,
         "kappa": 1.0, "dt": None, "t_per_spin": 12.0, "seed": 1,
         "n_traj": 500, "out": "runs/advantage", "format": "csv"},
        _load_config(args.config, "advantage"), args,
    )
    t0 = time.time()
    n_list = _int_list(cfg["n_list"])
    eta_list = _float_list(cfg["eta_list"])
    kappa = float(cfg["kappa"])
    rows = []
    for eta in eta_list:
        # baseline single-sensor run is scheduled automatically
        base = _rate_for(cfg, 1, eta)
        for n in n_list:
            fit = _rate_for(cfg, n, eta)
            xi = collective_advantage(fit.value, base.value, n)
            err = advantage_error(fit.value, fit.std_error,
                                  base.value, base.std_error, n)
            cap = advantage_cap(base.value, eta, kappa)
            rows.append((eta, n, xi, err, cap))
    out_dir = Path(cfg["out"])
    meta = {k: cfg[k] for k in ("omega", "kappa", "t_per_spin", "seed", "n_traj")}
    outputs = [_emit(out_dir, "advantage", ("eta", "N", "xi", "xi_err", "cap"),
                     rows, meta, cfg["format"])]
    write_manifest(out_dir, cfg, outputs, time.time() - t0)
    return EXIT_OK


def _rate_for(cfg, n: int, eta: float):
    ucfg = UnravellingConfig(
        n_spins=n,
        omega=float(cfg["omega"]),
        kappa=float(cfg["kappa"]),
        scheme="homodyne",
        eta=eta,
        dt=None if cfg.get("dt") in (None, "auto") else float(cfg["dt"]),
        T=float(cfg["t_per_spin"]) * max(n, 2),
        seed=int(cfg["seed"]) + n,
        n_traj=int(cfg["n_traj"]),
        initial_state="steady",
    )
    return signal_fisher_rate(run_ensemble(ucfg))


def cmd_scaling(args) -> int:
    cfg = _merge(
        {"n_grid": "8 12 16 24 32", "kappa": 1.0, "n_modes": 3,
         "out": "runs/scaling", "format": "csv"},
        _load_config(args.config, "scaling"), args,
    )
    t0 = time.time()
    grid = _int_list(cfg["n_grid"])
    study = critical_scaling_study(grid, kappa=float(cfg["kappa"]),
                                   n_modes=int(cfg["n_modes"]))
    out_dir = Path(cfg["out"])
    meta = {"n_grid": " ".join(str(n) for n in grid), "kappa": cfg["kappa"],
            "omega": "critical (= kappa)"}
    rows_z = []
    for k, (g_series, z_vals) in enumerate(
        zip(study.mode_gammas, study.z_exponents())
    ):
        for n, z in zip(g_series.exponent_sizes, z_vals):
            rows_z.append((k, int(n), z))
    rows_zeta = list(zip(study.rate.exponent_sizes.astype(int), study.zeta))
    rows_c0 = list(zip(study.c0.exponent_sizes.astype(int), study.delta_from_c0()))
    outputs = [
        _emit(out_dir, "z_exponents", ("mode", "N", "z"), rows_z, meta, cfg["format"]),
        _emit(out_dir, "zeta", ("N", "zeta"), rows_zeta, meta, cfg["format"]),
        _emit(out_dir, "delta_c0", ("N", "delta"), rows_c0, meta, cfg["format"]),
    ]
    fit_rows = []
    for k, (g_series, z_vals) in enumerate(
        zip(study.mode_gammas, study.z_exponents())
    ):
        if z_vals.size >= 5:
            (a, b, x), _, resid = fit_power_law_offset(
                g_series.exponent_sizes, z_vals
            )
            fit_rows.append((k, a, b, x, resid))
    if fit_rows:
        outputs.append(_emit(out_dir, "z_fits", ("mode", "a", "b", "x", "rms_residual"),
                             fit_rows, meta, cfg["format"]))
    write_manifest(out_dir, cfg, outputs, time.time() - t0)
    return EXIT_OK


def cmd_rescale_check(args) -> int:
    cfg = _merge(
        {"n_list": "2 4 8", "omega_list": "1.0 4.0", "kappa": 1.0,
         "out": "runs/rescale_check", "format": "csv"},
        _load_config(args.config, "rescale_check"), args,
    )
    t0 = time.time()
    rows = []
    for n in _int_list(cfg["n_list"]):
        for omega in _float_list(cfg["omega_list"]):
            ratio = rescaling_check(n, omega, float(cfg["kappa"]))
            rows.append((n, omega, ratio, ratio / n - 1.0))
    out_dir = Path(cfg["out"])
    meta = {"kappa": cfg["kappa"]}
    outputs = [_emit(out_dir, "rescale_check",
                     ("N", "omega", "ratio", "relative_error"),
                     rows, meta, cfg["format"])]
    write_manifest(out_dir, cfg, outputs, time.time() - t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="YAML or JSON config file")
    sub.add_argument("--out", help="output directory")
    sub.add_argument("--format", choices=("csv", "json"), help="output format")
    sub.add_argument("--kappa", type=float, help="decay scale (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="btcsense",
        description="Precision limits for monitored boundary time crystals",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    sp = subs.add_parser("spectrum", help="generator eigenvalues (and mode amplitudes)")
    _add_common(sp)
    sp.add_argument("--n-spins", dest="n_spins", type=int)
    sp.add_argument("--omega", type=float)
    sp.add_argument("--amplitudes", action="store_const", const=True, default=None)
    sp.set_defaults(func=cmd_spectrum)

    gr = subs.add_parser("global-rate", help="spectral f_global over an N grid")
    _add_common(gr)
    gr.add_argument("--n-grid", dest="n_grid")
    gr.add_argument("--omega", type=float)
    gr.add_argument("--extreme-limit", dest="extreme_limit",
                    action="store_const", const=True, default=None)
    gr.set_defaults(func=cmd_global_rate)

    mo = subs.add_parser("monitoring", help="simulated signal Fisher information")
    _add_common(mo)
    for name, typ in (("n_spins", int), ("omega", float), ("eta", float),
                      ("dt", float), ("T", float), ("seed", int),
                      ("n_traj", int)):
        mo.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ)
    mo.add_argument("--scheme", choices=("photodetection", "homodyne"))
    mo.add_argument("--initial-state", dest="initial_state",
                    choices=("steady", "dark", "mixed"))
    mo.set_defaults(func=cmd_monitoring)

    ad = subs.add_parser("advantage", help="collective advantage xi_N vs eta")
    _add_common(ad)
    ad.add_argument("--n-list", dest="n_list")
    ad.add_argument("--eta-list", dest="eta_list")
    ad.add_argument("--omega", type=float)
    ad.add_argument("--t-per-spin", dest="t_per_spin", type=float)
    ad.add_argument("--seed", type=int)
    ad.add_argument("--n-traj", dest="n_traj", type=int)
    ad.set_defaults(func=cmd_advantage)

    sc = subs.add_parser("scaling", help="critical finite-size scaling exponents")
    _add_common(sc)
    sc.add_argument("--n-grid", dest="n_grid")
    sc.add_argument("--n-modes", dest="n_modes", type=int)
    sc.set_defaults(func=cmd_scaling)

    rc = subs.add_parser("rescale-check", help="thermodynamic rescaling consistency")
    _add_common(rc)
    rc.add_argument("--n-list", dest="n_list")
    rc.add_argument("--omega-list", dest="omega_list")
    rc.set_defaults(func=cmd_rescale_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
