"""Command-line front end.

    steinfit estimate   --config cfg.json --data x.csv [--out report.json]
    steinfit gof        --config cfg.json --data x.csv
    steinfit diagnose   --config cfg.json --data x.csv
    steinfit experiment {qq,variance-curve,gof-null,model-select} [--config cfg.json] --out DIR

Exit codes: 0 success, 1 configuration error, 2 data error, 3 the estimator did
not converge (the report is still written).
"""

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .asymptotics import asymptotic_covariance, assumption_diagnostics, gof_test, hessian_blocks, model_select_score
from .errors import (
    CapabilityMissing,
    ConfigError,
    DataError,
    DfError,
    DomainError,
    EmptyData,
    NotPositiveDefinite,
    ParamError,
    RankDeficient,
    SteinfitError,
    UnknownDistribution,
)
from .features import Tabulated, make_feature
from .harness import (
    ESTIMATORS,
    ExperimentConfig,
    default_config,
    run_estimator,
    run_study,
    sample_distribution,
    stream,
    write_text,
)
from .models import GenericExpFamily, make_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3
SEED_ENV = "STEINFIT_SEED"
STUDY_COMMANDS = {"qq": "qq_scatter", "variance-curve": "variance_curve",
                  "gof-null": "gof_null", "model-select": "model_select"}

_NUMBER_LIST = {"type": "array", "items": {"type": "number"}}
_EXPERIMENT_KEYS = {
    "model": {"type": "string"},
    "model_fixed": {"type": "object"},
    "theta_star": {"oneOf": [{"type": "number"}, _NUMBER_LIST]},
    "feature": {"type": "string"},
    "estimators": {"type": "array", "items": {"enum": list(ESTIMATORS)}, "minItems": 1},
    "n_grid": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
    "reps": {"type": "integer", "minimum": 1},
    "base_seed": {"type": "integer", "minimum": 0},
    "estimator_opts": {"type": "object"},
    "distribution": {"type": "string"},
    "distribution_params": {"type": "object"},
    "candidates": {"type": "array", "items": {
        "type": "object", "required": ["model", "feature"], "additionalProperties": False,
        "properties": {"model": {"type": "string"}, "feature": {"type": "string"}, "fixed": {"type": "object"}}}},
    "reference_samples": {"type": "integer", "minimum": 10},
    "record_timing": {"type": "boolean"},
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object", "additionalProperties": False, "required": ["name"],
            "properties": {
                "name": {"type": "string"},
                "fixed": {"type": "object"},
                "theta_init": {"oneOf": [{"const": "default"}, {"type": "number"}, _NUMBER_LIST]},
            },
        },
        "feature": {
            "type": "object", "additionalProperties": False,
            "properties": {"name": {"type": "string"}, "path": {"type": "string"}},
        },
        "estimator": {
            "type": "object", "additionalProperties": False,
            "properties": {"name": {"enum": list(ESTIMATORS)}, "opts": {"type": "object"}},
        },
        "data": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "generator": {
                    "type": "object", "additionalProperties": False, "required": ["distribution", "n"],
                    "properties": {"distribution": {"type": "string"}, "params": {"type": "object"},
                                   "n": {"type": "integer", "minimum": 1}},
                },
            },
        },
        "experiment": {"type": "object", "additionalProperties": False, "properties": _EXPERIMENT_KEYS},
        "output": {"type": "object", "additionalProperties": False, "properties": {"dir": {"type": "string"}}},
        "seed": {"type": "integer", "minimum": 0},
    },
}


# -- serialization ---------------------------------------------------------------


def _plain(obj):
    """Convert numpy containers and scalars to plain Python objects."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps(obj, indent=2):
    """JSON text with every float written to 17 significant digits.

    Non-finite floats become null (JSON has no NaN).
    """
    return _dump(_plain(obj), indent, 0) + "\n"


def _dump(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_dump(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_dump(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _dump(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "null"
        text = format(obj, ".17g")
        if "e" not in text and "." not in text and "n" not in text:
            text += ".0"
        return text
    return json.dumps(obj)


def config_hash(cfg):
    canonical = json.dumps(_plain(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# -- inputs ---------------------------------------------------------------------------


def load_config(path):
    if path is None:
        cfg = {}
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc


def read_csv_matrix(path):
    """Numeric CSV to an (n, d) array.  One optional header row; '#' comments skipped."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read data file {path}: {exc}") from exc
    rows = []
    width = None
    with fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not c.strip() for c in rec) or rec[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                if not rows and width is None:
                    width = len(rec)  # header
                    continue
                raise DataError(f"{path}: row {lineno} is not numeric: {rec!r}") from None
            if width is None:
                width = len(vals)
            if len(vals) != width:
                raise DataError(f"{path}: row {lineno} has {len(vals)} fields, expected {width}")
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: row {lineno} has a non-finite value")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def resolve_seed(args, cfg):
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return int(cfg.get("seed", 0))


def build_model(cfg, X=None):
    mcfg = cfg.get("model")
    if not mcfg:
        raise ConfigError("config needs a model section")
    fixed = dict(mcfg.get("fixed", {}))
    name = mcfg["name"]
    try:
        if name == "generic_exp_family":
            if "psi_path" in fixed:
                psi = Tabulated.load(fixed.pop("psi_path"))
            else:
                psi = make_feature(fixed.pop("psi", "poly_pair"))
            input_dim = fixed.pop("input_dim", None)
            if input_dim is None:
                input_dim = X.shape[1] if X is not None else 1
            if fixed:
                raise ConfigError(f"unknown generic_exp_family settings {sorted(fixed)}")
            return GenericExpFamily(psi, input_dim)
        return make_model(name, **fixed)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"cannot build model {name!r}: {exc}") from exc
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot build model {name!r}: {exc}") from exc


def build_feature(cfg, model):
    fcfg = cfg.get("feature") or {}
    if "path" in fcfg:
        try:
            return Tabulated.load(fcfg["path"])
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load tabulated feature {fcfg['path']}: {exc}") from exc
    try:
        return make_feature(fcfg.get("name", "identity"), model)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc


def load_data(args, cfg, seed):
    if args.data is not None:
        return read_csv_matrix(args.data)
    dcfg = cfg.get("data") or {}
    if "path" in dcfg:
        return read_csv_matrix(dcfg["path"])
    if "generator" in dcfg:
        g = dcfg["generator"]
        try:
            return sample_distribution(g["distribution"], g.get("params", {}), g["n"], stream(seed, 0, 0))
        except UnknownDistribution as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError("no data: pass --data or give data.path / data.generator in the config")


# -- subcommands ---------------------------------------------------------------------


def _estimator_setup(args, cfg):
    ecfg = dict(cfg.get("estimator") or {})
    name = args.estimator or ecfg.get("name", "dle")
    opts = dict(ecfg.get("opts", {}))
    if args.ridge is not None:
        opts["ridge"] = args.ridge
    if args.starts is not None:
        opts["starts"] = args.starts
    theta_init = (cfg.get("model") or {}).get("theta_init")
    if theta_init is not None:
        opts["theta_init"] = theta_init
    return name, opts


def _effective_config(cfg, name, opts, seed):
    eff = json.loads(json.dumps(cfg))
    eff["estimator"] = {"name": name, "opts": opts}
    eff["seed"] = seed
    return eff


def estimation_report(args, cfg, want_gof=False):
    """Run the configured estimator and assemble the report dict."""
    seed = resolve_seed(args, cfg)
    X = load_data(args, cfg, seed)
    model = build_model(cfg, X)
    X = model.check_data(X)
    feature = build_feature(cfg, model)
    name, opts = _estimator_setup(args, cfg)
    n = X.shape[0]
    b = feature.out_dim(model.input_dim)
    p = model.param_dim
    if want_gof and b <= p:
        raise DfError(f"goodness of fit needs b > dim(theta); got b={b}, p={p}")
    est_seed = np.random.SeedSequence(seed, spawn_key=(0, 0, 1))
    try:
        theta, ll, converged, extras = run_estimator(name, model, feature, X, opts,
                                                     np.random.default_rng(est_seed),
                                                     int(est_seed.generate_state(1)[0]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SteinfitError):
            raise
        raise ConfigError(f"bad estimator options {opts}: {exc}") from exc
    eff = _effective_config(cfg, name, opts, seed)
    report = {
        "estimator": name,
        "model": repr(model),
        "feature": feature.name,
        "n": n,
        "theta_hat": theta,
        "delta_hat": extras.get("delta_hat"),
        "loglik_ratio": ll if name == "dle" else None,
        "converged": bool(converged),
        "covariance": None,
        "marginal_ci": None,
        "ic_score": None,
        "gof": None,
        "diagnostics": {},
        "provenance": {"seed": seed, "config_hash": config_hash(eff), "version": __version__},
    }
    if name == "dle":
        delta = extras["delta_hat"]
        diag = {"degenerate": False}
        try:
            blocks = hessian_blocks(model, feature, X, delta, theta)
            diag.update(assumption_diagnostics(blocks, model, X))
            cov = asymptotic_covariance(blocks, n)
            report["covariance"] = cov.V
            report["marginal_ci"] = cov.marginal_ci
        except (RankDeficient, NotPositiveDefinite) as exc:
            diag["covariance_error"] = f"{type(exc).__name__}: {exc}"
            diag["degenerate"] = True
        report["ic_score"] = model_select_score(max(ll, 0.0), n, b, p)
        if b > p:
            g = gof_test(ll, n, b, p)
            report["gof"] = {"statistic": g.statistic, "df": g.df, "p_value": g.p_value}
        report["diagnostics"] = diag
    return report


def _write_report(report, out):
    text = dumps(report)
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if path.is_dir() or out.endswith(os.sep):
        path.mkdir(parents=True, exist_ok=True)
        path = path / "report.json"
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    write_text(path, text)


def cmd_estimate(args, cfg):
    report = estimation_report(args, cfg, want_gof=args.gof)
    _write_report(report, args.out or (cfg.get("output") or {}).get("dir"))
    return EXIT_OK if report["converged"] else EXIT_NOT_CONVERGED


def cmd_gof(args, cfg):
    args.estimator = "dle"
    report = estimation_report(args, cfg, want_gof=True)
    out = {"gof": report["gof"], "loglik_ratio": report["loglik_ratio"], "n": report["n"],
           "converged": report["converged"], "provenance": report["provenance"]}
    _write_report(out, args.out)
    return EXIT_OK if report["converged"] else EXIT_NOT_CONVERGED


def cmd_diagnose(args, cfg):
    args.estimator = "dle"
    report = estimation_report(args, cfg)
    out = {"theta_hat": report["theta_hat"], "diagnostics": report["diagnostics"],
           "converged": report["converged"], "provenance": report["provenance"]}
    _write_report(out, args.out)
    return EXIT_OK if report["converged"] else EXIT_NOT_CONVERGED


def experiment_config(study, cfg, args):
    overrides = dict(cfg.get("experiment") or {})
    if "model" in cfg and "model" not in overrides:
        overrides["model"] = cfg["model"]["name"]
        overrides.setdefault("model_fixed", cfg["model"].get("fixed", {}))
    if "feature" in cfg and "name" in cfg["feature"] and "feature" not in overrides:
        overrides["feature"] = cfg["feature"]["name"]
    seed = None
    if args.seed is not None or os.environ.get(SEED_ENV) or "seed" in cfg:
        seed = resolve_seed(args, cfg)
    if seed is not None:
        overrides["base_seed"] = seed
    try:
        return default_config(study, **overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_experiment(args, cfg):
    study = STUDY_COMMANDS[args.study]
    config = experiment_config(study, cfg, args)
    out = Path(args.out or (cfg.get("output") or {}).get("dir") or f"steinfit-{args.study}")
    out.mkdir(parents=True, exist_ok=True)
    result = run_study(config, workers=args.workers)
    cdict = config.to_dict()
    summary = dict(result.summary)
    summary["config"] = cdict
    summary["provenance"] = {"seed": config.base_seed, "config_hash": config_hash(cdict), "version": __version__}
    for name, text in result.files.items():
        write_text(out / name, text)
    write_text(out / "summary.json", dumps(summary))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------


def _common(p, data=True):
    p.add_argument("--config", help="JSON configuration file")
    if data:
        p.add_argument("--data", help="CSV data file (overrides data.path in the config)")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--seed", type=int, help=f"base seed (overrides ${SEED_ENV})")


def _estimator_flags(p):
    p.add_argument("--estimator", choices=ESTIMATORS, help="estimator (default from config, else dle)")
    p.add_argument("--ridge", type=float, help="ridge penalty for the inner ratio fit")
    p.add_argument("--starts", type=int, help="number of DLE starting points")


def build_parser():
    parser = argparse.ArgumentParser(prog="steinfit", description="Discriminative likelihood estimation for unnormalized models")
    parser.add_argument("--version", action="version", version=f"steinfit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit a model to data and write a report")
    _common(p)
    _estimator_flags(p)
    p.add_argument("--gof", action="store_true", help="require the chi-square goodness-of-fit test")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("gof", help="chi-square goodness-of-fit test of the fitted model")
    _common(p)
    _estimator_flags(p)
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("diagnose", help="eigenvalue report on the Hessian blocks at the estimate")
    _common(p)
    _estimator_flags(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("experiment", help="run a Monte Carlo study")
    p.add_argument("study", choices=sorted(STUDY_COMMANDS))
    _common(p, data=False)
    p.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (ConfigError, DfError, CapabilityMissing, ParamError, UnknownDistribution) as exc:
        print(f"steinfit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError, EmptyData) as exc:
        print(f"steinfit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SteinfitError as exc:
        print(f"steinfit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
