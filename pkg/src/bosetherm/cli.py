"""Command-line front end for the pipeline and the standalone fitters.

Exit codes: 0 on success, 2 for configuration problems, 3 for numerical
failures (step-rule violations, aliasing, fits that cannot converge).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bosetherm",
        description="exact dynamics and thermometry for small trapped "
                    "Bose gases")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute every configured stage")
    run_p.add_argument("config", help="JSON configuration file")

    for name, text in (("build-spectrum", "diagonalize the model sector"),
                       ("evolve", "propagate and record observables"),
                       ("thermometry", "fit temperatures from spectra"),
                       ("chaos", "adjacent-gap-ratio report")):
        stage_p = sub.add_parser(name, help=text)
        stage_p.add_argument("config", help="JSON configuration file")

    greens_p = sub.add_parser("greens", help="two-time correlation spectra")
    greens_p.add_argument("config", help="JSON configuration file")
    greens_p.add_argument("--pair", metavar="I,J",
                          help="restrict to one single-particle mode pair")
    greens_p.add_argument("--time", type=float, metavar="T",
                          help="restrict to one center-of-mass time")

    fit_p = sub.add_parser("fit", help="fit one CSV file")
    fit_p.add_argument("csv", help="input table")
    fit_p.add_argument("--model", required=True,
                       choices=("biexp", "bose", "fdt"))
    fit_p.add_argument("--column", default=None,
                       help="value column for biexp (default: second column)")
    fit_p.add_argument("--tail-fraction", type=float, default=0.2,
                       help="trailing fraction that defines the plateau")
    fit_p.add_argument("--window", nargs=2, type=float, metavar=("LO", "HI"),
                       help="energy window for the fdt model")
    fit_p.add_argument("--out", default=None, help="also write the JSON here")
    return parser


def _load_raw_config(path: str) -> dict:
    from .errors import ConfigError
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"configuration file {p} does not exist")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{p} must hold a JSON object")
    return raw


def _parse_pair(text: str) -> list[int]:
    from .errors import ConfigError
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError(f"--pair wants 'i,j', got '{text}'")
    try:
        return [int(parts[0]), int(parts[1])]
    except ValueError as exc:
        raise ConfigError(f"--pair wants two integers, got '{text}'") from exc


def _fit_command(args) -> dict:
    from .correlators import CorrelatorSpectrum
    from .errors import ConfigError
    from .runner import _fit_to_dict, _jsonify, read_csv
    from .thermofit import (fit_biexponential, fit_bose_einstein,
                            fit_fdt_beta, plateau_stats)

    path = Path(args.csv)
    if not path.exists():
        raise ConfigError(f"input table {path} does not exist")
    cols = read_csv(path)
    names = list(cols)
    if len(names) < 2:
        raise ConfigError(f"{path} needs at least two columns")

    if args.model == "biexp":
        if not 0.0 < args.tail_fraction <= 1.0:
            raise ConfigError("--tail-fraction must sit in (0, 1]")
        yname = args.column or names[1]
        if yname not in cols:
            raise ConfigError(f"{path} has no column '{yname}'")
        times, values = cols[names[0]], cols[yname]
        plateau, sigma = plateau_stats(values, args.tail_fraction)
        fit = fit_biexponential(times, values, plateau, noise_floor=sigma)
        return _jsonify({
            "model": "biexp", "column": yname,
            "plateau": plateau, "plateau_std": sigma,
            "amplitude_fast": fit.amplitude_fast,
            "amplitude_slow": fit.amplitude_slow,
            "tau_fast": fit.tau_fast, "tau_slow": fit.tau_slow,
            "residual": fit.residual, "detail": fit.detail,
        })

    if args.model == "bose":
        sigmas = cols[names[2]] if len(names) > 2 else None
        fit = fit_bose_einstein(cols[names[0]], cols[names[1]], sigmas)
        payload = _fit_to_dict(fit)
        payload["model"] = "bose"
        return _jsonify(payload)

    if args.window is None:
        raise ConfigError("the fdt model needs --window LO HI")
    if len(names) < 3:
        raise ConfigError(f"{path} needs columns E, forward, reversed")
    energies = cols[names[0]]
    forward = CorrelatorSpectrum("density_forward", None, 0.0, energies,
                                 cols[names[1]], "rect")
    reverse = CorrelatorSpectrum("density_reversed", None, 0.0, energies,
                                 cols[names[2]], "rect")
    fit = fit_fdt_beta(forward, reverse, tuple(args.window))
    payload = _fit_to_dict(fit)
    payload["model"] = "fdt"
    return _jsonify(payload)


def _dispatch(args) -> int:
    from . import runner
    if args.command == "fit":
        text = json.dumps(_fit_command(args), indent=2, sort_keys=True)
        if args.out:
            Path(args.out).write_text(text + "\n")
        print(text)
        return 0
    if args.command == "run":
        runner.run(args.config)
        return 0
    if args.command == "greens" and (args.pair or args.time is not None):
        raw = _load_raw_config(args.config)
        meas = raw.setdefault("measurement", {})
        if args.pair:
            meas["green_pairs"] = [_parse_pair(args.pair)]
            meas["density_pairs"] = []
        if args.time is not None:
            meas["com_times"] = [args.time]
        runner.run(raw, stages=["greens"])
        return 0
    runner.run(args.config, stages=[args.command])
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    from .errors import ConfigError, NumericsError
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
