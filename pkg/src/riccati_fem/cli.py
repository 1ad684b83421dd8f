"""Command-line driver for the convergence studies.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure.  CSV is
always written (atomically; no partial file survives a failed run); the
SVG plot is opt-in via --plot.
"""

import argparse
import json
import sys

from . import study
from .fem import InvalidCount, DuplicateNodes, PointOutsideDomain
from .linalg import NoConvergence, NotSPD, Singular, UnstableA
from .models import InvalidParameter, UnknownProfile
from .riccati import HorizonExceeded, MaxIterExceeded, NotStabilizing, StepRejected

SOLVER_ERRORS = (
    NotSPD, Singular, NoConvergence, UnstableA,
    NotStabilizing, MaxIterExceeded, HorizonExceeded, StepRejected,
)

CONFIG_ERRORS = (
    ValueError, InvalidParameter, UnknownProfile, InvalidCount,
    DuplicateNodes, PointOutsideDomain,
)

# desk-scale defaults; --paper switches the starred entries to the values
# used for the published figures
_DEFAULTS = {
    "scalar": dict(eps_grid="1e-4,1,16", out="scalar.csv"),
    "thermal1d": dict(orders="1,2,3,4", elements="4,8,16,32", tau=0.1,
                      dt=1e-3, out="thermal1d.csv"),
    "thermal2d": dict(orders="1,2", elements="4,8,16", out="thermal2d.csv"),
    "wave": dict(orders="1,2,3", elements="4,8,16,32", out="wave.csv"),
    "violation": dict(case="delta1d", orders="1,2,3,4", elements="4,8,16,32",
                      tau=0.1, dt=1e-3, out="violation.csv"),
}

_PAPER_OVERRIDES = {
    "thermal1d": dict(dt=1e-4),
    "wave": dict(orders="1,2,3,4"),
    "violation": dict(dt=1e-4),
}

_FLAG_KEYS = ("orders", "elements", "tau", "dt", "eps_grid", "case",
              "out", "plot", "paper")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="riccati-fem",
        description="Finite-element LQR functional-gain convergence studies.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ("scalar", "thermal1d", "thermal2d", "wave", "violation"):
        p = sub.add_parser(name, help="run the %s study" % name)
        p.add_argument("--orders", help="comma-separated element orders k")
        p.add_argument("--elements", help="comma-separated mesh sizes n")
        p.add_argument("--tau", type=float, help="control horizon")
        p.add_argument("--dt", type=float, help="DRE time step")
        p.add_argument("--eps-grid", dest="eps_grid",
                       help="scalar study grid as min,max,count")
        if name == "violation":
            p.add_argument("--case", choices=("delta1d", "gaussian2d"),
                           help="which violation experiment")
        p.add_argument("--out", help="CSV output path")
        p.add_argument("--plot", help="optional SVG output path")
        p.add_argument("--paper", action="store_true", default=None,
                       help="use the published-figure parameters")
        p.add_argument("--config", help="JSON config file (flags override)")
    return parser


def _parse_int_list(text, what):
    try:
        values = tuple(int(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise ValueError("invalid %s list %r" % (what, text)) from None
    if not values:
        raise ValueError("empty %s list" % what)
    return values


def _parse_eps_grid(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    toks = [tok for tok in str(text).split(",") if tok.strip()]
    if len(toks) != 3:
        raise ValueError("--eps-grid expects min,max,count")
    import numpy as np
    lo, hi, count = float(toks[0]), float(toks[1]), int(toks[2])
    if not (0.0 < lo < hi) or count < 2:
        raise ValueError("eps grid needs 0 < min < max and count >= 2")
    return tuple(np.logspace(np.log10(lo), np.log10(hi), count))


def merge_settings(subcommand, file_settings=None, flag_settings=None):
    """Defaults, then --paper preset, then config file, then flags."""
    merged = dict(_DEFAULTS[subcommand])
    file_settings = dict(file_settings or {})
    flag_settings = {k: v for k, v in (flag_settings or {}).items()
                     if v is not None}
    paper = bool(flag_settings.get("paper") or file_settings.get("paper"))
    if paper:
        merged.update(_PAPER_OVERRIDES.get(subcommand, {}))
    merged.update(file_settings)
    merged.update(flag_settings)
    merged["paper"] = paper
    return merged


def build_config(subcommand, settings):
    """Translate merged CLI settings into a StudyConfig."""
    case = subcommand
    if subcommand == "violation":
        case = "violation-%s" % settings.get("case", "delta1d")
        if case == "violation-gaussian2d":
            settings.setdefault("_2d", True)
            if "orders" not in settings or settings["orders"] == _DEFAULTS["violation"]["orders"]:
                settings["orders"] = "2"
            if settings.get("elements") == _DEFAULTS["violation"]["elements"]:
                settings["elements"] = "4,8,16"
    kwargs = dict(case=case)
    if case != "scalar":
        kwargs["orders"] = _parse_int_list(settings["orders"], "orders")
        kwargs["mesh_sizes"] = _parse_int_list(settings["elements"], "elements")
    else:
        kwargs["eps_grid"] = _parse_eps_grid(settings["eps_grid"])
    for key in ("alpha", "beta", "gamma", "wave_speed", "r_weight",
                "beta_weight", "scalar_a", "scalar_f", "scalar_g",
                "reference_p", "reference_factor"):
        if key in settings:
            kwargs[key] = type(study.StudyConfig.__dataclass_fields__[key].default)(settings[key])
    if case in ("thermal2d", "violation-gaussian2d"):
        kwargs.setdefault("alpha", 1e-2)
    for key in ("tau", "dt"):
        if key in settings and settings[key] is not None:
            kwargs[key] = float(settings[key])
    kwargs["out_csv"] = str(settings.get("out", "%s.csv" % case))
    kwargs["out_svg"] = str(settings.get("plot") or "")
    return study.StudyConfig(**kwargs)


def _print_rate_table(result):
    print("case                 k   rate")
    for k in sorted(result.rates):
        label = "-" if result.case == "scalar" else str(k)
        print("%-20s %-3s %8.4f" % (result.case, label, result.rates[k]))


def parse_and_run(argv=None):
    """Run one study from command-line arguments; returns the exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    file_settings = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as handle:
                file_settings = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            print("error: cannot read config %s: %s" % (args.config, exc),
                  file=sys.stderr)
            return 2
        if not isinstance(file_settings, dict):
            print("error: config file must hold a JSON object", file=sys.stderr)
            return 2
    flag_settings = {key: getattr(args, key, None) for key in _FLAG_KEYS}
    try:
        settings = merge_settings(args.subcommand, file_settings, flag_settings)
        config = build_config(args.subcommand, settings)
    except CONFIG_ERRORS as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    try:
        result = study.run_study(config)
    except SOLVER_ERRORS as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return 3
    if result.failures:
        for failure in result.failures:
            print("solver failure: %s" % failure, file=sys.stderr)
        return 3
    try:
        study.write_csv(result, config.out_csv)
        if config.out_svg:
            study.write_svg(result, config.out_svg)
    except study.IoError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    _print_rate_table(result)
    return 0


def main():
    sys.exit(parse_and_run(sys.argv[1:]))


if __name__ == "__main__":
    main()
