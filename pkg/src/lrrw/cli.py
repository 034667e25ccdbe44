"""Command-line front end: ``lrrw {constants,oracle,simulate,verify}``.

Settings come from an optional INI-style config file (``--config``) with
sections ``[model]``, ``[simulation]``, ``[verify]``, ``[output]`` and
``[oracle]``; command-line flags override file values.

Exit codes: 0 success / all verdicts pass, 1 a verdict failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
from typing import Optional

import numpy as np

from . import analytics as an
from .engine import Sampler, SimConfig, fclt_checkpoints, run_ensemble, write_spool
from .manifest import ExperimentManifest
from .model import ModelParams, ParameterError, Regime, derive_constants, superdiffusive_constants
from .oracle import DEFAULT_CAP, compare_closed_forms, evolve_exact, write_distribution_csv

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

THEOREMS = {
    "lln": "law of large numbers for S_n/n",
    "clt": "Gaussian limit of the normalized position",
    "fclt": "covariance of the rescaled position process",
    "qsl": "quadratic strong law / almost-sure moments",
    "asclt": "almost-sure central limit theorem",
    "lil": "law of the iterated logarithm envelope",
    "lmoments": "first two moments of the superdiffusive limit L",
    "fluct": "Gaussian fluctuations around L",
}
_BY_REGIME = {
    Regime.DIFFUSIVE: ("lln", "clt", "fclt", "qsl", "asclt", "lil"),
    Regime.CRITICAL: ("lln", "clt", "fclt", "qsl", "asclt", "lil"),
    Regime.SUPERDIFFUSIVE: ("lln", "lmoments", "fluct", "lil"),
}

# (section, key, default, type, help)
_SETTINGS = [
    ("model", "p", None, float, "probability of a +1 step"),
    ("model", "q", None, float, "probability of a -1 step"),
    ("model", "r", None, float, "probability of a 0 step"),
    ("model", "theta", None, float, "memory probability"),
    ("simulation", "n", 10_000, int, "horizon (number of steps)"),
    ("simulation", "paths", 1000, int, "number of paths"),
    ("simulation", "seed", 0, int, "master seed"),
    ("simulation", "sampler", "kernel", str, "step sampler: kernel or latent"),
    ("simulation", "checkpoints", "", str, "comma-separated extra observation times"),
    ("simulation", "workers", 1, int, "worker processes"),
    ("simulation", "block_size", 1024, int, "paths per work block"),
    ("simulation", "format", "bin", str, "spool format: bin or csv"),
    ("verify", "theorem", "", str, "comma-separated theorem ids"),
    ("verify", "fclt_grid", "0.25,0.5,1.0", str, "time grid for the covariance check"),
    ("verify", "asclt_grid", "", str, "ASCLT grid (default: -1, 0, 1 limit standard deviations)"),
    ("verify", "lil_start", 100, int, "first index of the LIL running maximum"),
    ("verify", "qsl_orders", "1,2", str, "moment orders"),
    ("verify", "fluct_n", 0, int, "fluctuation checkpoint (0: largest n within the bias budget)"),
    ("output", "out", "", str, "output directory"),
    ("oracle", "cap", DEFAULT_CAP, int, "oracle horizon cap"),
]


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


def load_settings(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    values = {key: default for _, key, default, _, _ in _SETTINGS}
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise UsageError(f"cannot read config file {args.config}")
        for section, key, _, typ, _ in _SETTINGS:
            if cp.has_option(section, key):
                raw = cp.get(section, key)
                try:
                    values[key] = typ(raw)
                except ValueError as exc:
                    raise UsageError(f"[{section}] {key}: cannot parse {raw!r}") from exc
    for _, key, _, _, _ in _SETTINGS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return values


def _params(values: dict) -> ModelParams:
    missing = [k for k in ("p", "q", "r", "theta") if values.get(k) is None]
    if missing:
        raise UsageError(f"missing model parameter(s): {', '.join('--' + m for m in missing)}")
    return ModelParams(values["p"], values["q"], values["r"], values["theta"])


def _out_dir(values: dict) -> Optional[str]:
    out = values.get("out") or None
    if out:
        os.makedirs(out, exist_ok=True)
    return out


# -- commands ------------------------------------------------------------------


def cmd_constants(values: dict, as_json: bool = False) -> int:
    params = _params(values)
    c = derive_constants(params)
    out = c.as_dict()
    if c.regime is Regime.SUPERDIFFUSIVE:
        out["L"] = superdiffusive_constants(params).as_dict()
    if as_json:
        print(json.dumps(an._jsonable(out), indent=2))
        return EXIT_OK
    for k, v in out.items():
        if k == "L":
            print("[L moments]")
            for k2, v2 in v.items():
                print(f"  {k2} = {float(v2):.12g}")
        elif isinstance(v, float):
            print(f"{k} = {v:.12g}")
        else:
            print(f"{k} = {v}")
    return EXIT_OK


def cmd_oracle(values: dict) -> int:
    params = _params(values)
    n, cap = int(values["n"]), int(values["cap"])
    if n > cap:
        raise UsageError(f"n={n} exceeds the oracle cap {cap}; raise it with --cap")
    dist = evolve_exact(params, n, cap)
    out = _out_dir(values)
    if out:
        path = os.path.join(out, f"oracle_n{n}.csv")
        write_distribution_csv(dist, path)
        print(f"wrote {path}")
    else:
        print("s,z,mass")
        for (s, z), m in sorted(dist.mass.items()):
            print(f"{s},{z},{m!r}")
    print(f"{'quantity':<16} {'max |diff|':>12} {'max rel':>12}")
    for row in compare_closed_forms(params, n, cap):
        print(f"{row.quantity:<16} {row.max_abs_diff:12.3e} {row.max_rel_diff:12.3e}")
    return EXIT_OK


def _sim_config(values: dict, params: ModelParams, **extra) -> SimConfig:
    try:
        return SimConfig(
            params=params,
            horizon=int(values["n"]),
            num_paths=int(values["paths"]),
            master_seed=int(values["seed"]),
            sampler=Sampler(values["sampler"]),
            block_size=int(values["block_size"]),
            **extra,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_simulate(values: dict, from_manifest: Optional[str] = None) -> int:
    if from_manifest:
        config = ExperimentManifest.read(from_manifest).sim_config()
    else:
        config = _sim_config(values, _params(values), checkpoints=_ints(values["checkpoints"]))
    manifest = ExperimentManifest.for_config(config)
    ens = run_ensemble(config, workers=int(values["workers"]))
    manifest.finish()
    out = _out_dir(values)
    fmt = values["format"]
    if fmt not in ("bin", "csv"):
        raise UsageError(f"unknown spool format {fmt!r}")
    if out:
        spool = os.path.join(out, f"checkpoints.{fmt}")
        write_spool(ens, spool, fmt)
        manifest.record_output(spool)
        manifest.write(os.path.join(out, "manifest.json"))
        print(f"wrote {spool} and manifest.json")
    ratio = ens.ratio()
    print(f"paths={len(ens)} n={config.horizon} mean S_n/n={float(np.mean(ratio)):.6g} mu={ens.constants.mu:.6g}")
    for note in ens.notes:
        print(f"note: {note}")
    return EXIT_OK


def _select(values: dict, regime: Regime, run_all: bool) -> list:
    if run_all:
        return list(_BY_REGIME[regime])
    ids = [t for t in values["theorem"].replace(" ", "").split(",") if t]
    if not ids:
        raise UsageError("choose --theorem ID[,ID...] or --all; valid ids: " + ", ".join(THEOREMS))
    for t in ids:
        if t not in THEOREMS:
            raise UsageError(f"unknown theorem id {t!r}; valid ids: {', '.join(THEOREMS)}")
        if t not in _BY_REGIME[regime]:
            raise UsageError(f"{t!r} does not apply to the {regime.value} regime; applicable: {', '.join(_BY_REGIME[regime])}")
    return ids


def _fluct_n(values: dict, c, n_big: int) -> int:
    if values["fluct_n"]:
        return int(values["fluct_n"])
    # largest n with (n/N)^(alpha - 1/2) <= 0.1
    return max(1, int(math.floor(n_big * 0.1 ** (1.0 / (c.alpha - 0.5)))))


def cmd_verify(values: dict, run_all: bool = False) -> int:
    params = _params(values)
    c = derive_constants(params)
    ids = _select(values, c.regime, run_all)
    n = int(values["n"])
    cps = set(_ints(values["checkpoints"]))
    extra: dict = {}
    fclt_grid = _floats(values["fclt_grid"])
    horizons = sorted({m for m in (n // 100, n // 10, n) if m >= 16})
    if "fclt" in ids:
        cps |= set(fclt_checkpoints(n, fclt_grid, c.regime))
    if "qsl" in ids or "asclt" in ids:
        cps |= set(horizons)
    if "qsl" in ids:
        extra["qsl_orders"] = _ints(values["qsl_orders"])
    if "asclt" in ids:
        grid = _floats(values["asclt_grid"])
        if not grid:
            sd = math.sqrt(an.limit_variance(c))
            grid = (-sd, 0.0, sd)
        extra["asclt_grid"] = grid
    fluct_n = None
    lil_cps: list = []
    if "fluct" in ids or ("lil" in ids and c.regime is Regime.SUPERDIFFUSIVE):
        fluct_n = _fluct_n(values, c, n)
        cps.add(fluct_n)
    if "lil" in ids:
        start = int(values["lil_start"])
        if start < an.LIL_MIN_START:
            raise UsageError(f"lil_start must be >= {an.LIL_MIN_START}")
        if c.regime is Regime.SUPERDIFFUSIVE:
            if fluct_n < start:
                raise UsageError(f"horizon {n} too short: the LIL range [{start}, {fluct_n}] is empty under the bias budget")
            lil_cps = sorted({int(x) for x in np.geomspace(start, fluct_n, 40)})
            cps |= set(lil_cps)
        else:
            extra["lil_start"] = start
    config = _sim_config(values, params, checkpoints=tuple(sorted(cps)), **extra)
    manifest = ExperimentManifest.for_config(config)
    ens = run_ensemble(config, workers=int(values["workers"]))

    verdicts = []
    try:
        for t in ids:
            if t == "lln":
                verdicts.append(an.verify_lln(ens, c, min_horizon=min(n, an.LLN_MIN_HORIZON)))
            elif t == "clt":
                verdicts.append(an.gof_verdict("clt", c, an.verify_clt(ens, c)))
            elif t == "fclt":
                verdicts.append(an.verify_fclt_covariance(ens, c, fclt_grid))
            elif t == "qsl":
                verdicts.append(an.verify_qsl_moments(ens, c, extra["qsl_orders"], horizons=horizons))
            elif t == "asclt":
                verdicts.append(an.verify_asclt(ens, c, horizons=horizons))
            elif t == "lil":
                verdicts.append(an.verify_lil(ens, c, n0=int(values["lil_start"])))
            elif t == "lmoments":
                verdicts.append(an.estimate_L(ens, c).verdict)
            elif t == "fluct":
                verdicts.append(an.gof_verdict("fluct", c, an.verify_superdiffusive_fluctuations(ens, c, n=fluct_n)))
    except an.VerificationInputError as exc:
        raise UsageError(str(exc)) from exc
    manifest.finish()

    out = _out_dir(values)
    if out:
        spool = os.path.join(out, "checkpoints.bin")
        write_spool(ens, spool)
        manifest.record_output(spool)
        for v in verdicts:
            if v.table:
                path = os.path.join(out, f"{v.theorem}.csv")
                an.write_table_csv(v, path)
                manifest.record_output(path)
        manifest.write(os.path.join(out, "manifest.json"))
        an.write_report(verdicts, os.path.join(out, "verdicts.json"), manifest.as_dict())
    for v in verdicts:
        print(f"{v.theorem:<9} {v.regime:<15} {v.status.upper():<17} {v.tolerance}")
        for note in v.notes:
            print(f"          note: {note}")
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_FAIL


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    common.add_argument("--config", help="INI config file; flags override its values")
    for section, key, default, typ, text in _SETTINGS:
        flag = "--" + key.replace("_", "-")
        shown = "required" if default is None else repr(default)
        common.add_argument(flag, dest=key, type=typ, default=None, help=f"{text} [{section}] (default: {shown})")

    parser = argparse.ArgumentParser(prog="lrrw", description="Long-range reinforced random walk toolkit.", allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("constants", parents=[common], help="print derived constants")
    p.add_argument("--json", action="store_true", help="print JSON")
    sub.add_parser("oracle", parents=[common], help="exact distribution and closed-form comparison")
    p = sub.add_parser("simulate", parents=[common], help="simulate an ensemble and spool checkpoints")
    p.add_argument("--from-manifest", help="re-run the configuration recorded in a manifest")
    p = sub.add_parser("verify", parents=[common], help="run limit-theorem checks")
    p.add_argument("--all", action="store_true", help="every check that applies to the regime")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        values = load_settings(args)
        if args.command == "constants":
            return cmd_constants(values, args.json)
        if args.command == "oracle":
            return cmd_oracle(values)
        if args.command == "simulate":
            return cmd_simulate(values, args.from_manifest)
        return cmd_verify(values, args.all)
    except (UsageError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
