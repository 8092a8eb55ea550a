"""INI configuration: named profiles, file loading, overrides, and
construction of problems / solver settings from a parsed config.

A config is a plain dict of sections {problem, oracle, algorithm,
solver, harness}, each a dict of coerced values.  Overrides use
``section.key=value`` syntax.
"""

import configparser
from dataclasses import fields
from importlib import resources

import numpy as np

from .engine import ConfigError, SolverConfig
from .library import (ControlProblemSpec, SyntheticQpSpec,
                      build_neumann_control, build_poisson_control,
                      build_synthetic_qp)

__all__ = ["load_config", "apply_overrides", "build_problem",
           "build_solver_config", "oracle_settings", "harness_settings",
           "available_profiles", "SECTIONS"]

SECTIONS = ("problem", "oracle", "algorithm", "solver", "harness")

_BOOL = {"true": True, "false": False, "yes": True, "no": False}


def _coerce(text):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return _BOOL.get(text.lower(), text)


def available_profiles():
    pkg = resources.files("sisqo.profiles")
    return sorted(p.name[:-4] for p in pkg.iterdir() if p.name.endswith(".ini"))


def load_config(source):
    """Parse an INI file path, or a bundled profile name."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    names = available_profiles()
    if source in names:
        text = resources.files("sisqo.profiles") \
            .joinpath(f"{source}.ini").read_text()
        parser.read_string(text, source=source)
    else:
        read = parser.read(source)
        if not read:
            raise ConfigError(f"config {source!r} is neither a readable file"
                              f" nor a profile ({', '.join(names)})")
    config = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]; expected"
                              f" one of {SECTIONS}")
        config[section] = {k: _coerce(v) for k, v in parser[section].items()}
    return config


def apply_overrides(config, pairs):
    """Apply ``section.key=value`` strings on top of a config dict."""
    for pair in pairs:
        head, sep, value = pair.partition("=")
        if not sep or "." not in head:
            raise ConfigError(f"override {pair!r} is not section.key=value")
        section, key = head.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown override section {section!r}")
        config.setdefault(section, {})[key.strip()] = _coerce(value)
    return config


def build_problem(config):
    """Instantiate the configured problem.

    The control problems take their reference-state spread from the
    oracle's eps_n, so the one knob drives both the data and the noise.
    """
    section = dict(config.get("problem", {}))
    kind = section.pop("kind", None)
    if kind == "synthetic_qp":
        known = {"n", "m", "problem_seed", "cond_target", "curvature_floor"}
        _reject_unknown(section, known, "problem")
        return build_synthetic_qp(SyntheticQpSpec(
            n=section.get("n", 40), m=section.get("m", 15),
            seed=section.get("problem_seed", 0),
            cond_target=section.get("cond_target", 10.0),
            curvature_floor=section.get("curvature_floor", 1.0)))
    if kind in ("poisson_control", "neumann_control"):
        known = {"mesh_size", "n_terms", "regularization", "eps_s"}
        _reject_unknown(section, known, "problem")
        spec = ControlProblemSpec(
            mesh_size=section.get("mesh_size", 16),
            n_terms=section.get("n_terms", 3),
            regularization=section.get("regularization", 1e-5),
            eps_n=config.get("oracle", {}).get("eps_n", 1e-2),
            eps_s=section.get("eps_s", float(np.sqrt(15.0))))
        build = build_poisson_control if kind == "poisson_control" \
            else build_neumann_control
        return build(spec)
    raise ConfigError(f"unknown problem kind {kind!r}")


def _reject_unknown(section, known, name):
    extra = set(section) - known
    if extra:
        raise ConfigError(f"unknown [{name}] keys: {sorted(extra)}")


def build_solver_config(config, **extra):
    """SolverConfig from the [algorithm] and [solver] sections plus the
    outer-loop knobs of [harness]; ``extra`` wins over everything."""
    kwargs = {}
    kwargs.update(config.get("algorithm", {}))
    kwargs.update(config.get("solver", {}))
    harness = config.get("harness", {})
    for key in ("feasibility_tol", "stationarity_tol",
                "max_outer_iterations", "seed"):
        if key in harness:
            kwargs[key] = harness[key]
    kwargs.update(extra)
    valid = {f.name for f in fields(SolverConfig)}
    unknown = set(kwargs) - valid
    if unknown:
        raise ConfigError(f"unknown solver settings: {sorted(unknown)}")
    return SolverConfig(**kwargs)


def oracle_settings(config):
    section = config.get("oracle", {})
    kind = section.get("kind", "gaussian")
    if kind not in ("gaussian", "finite_sum", "exact"):
        raise ConfigError(f"unknown oracle kind {kind!r}")
    return kind, float(section.get("eps_n", 0.0))


def _as_list(value, cast):
    if isinstance(value, (int, float)):
        return [cast(value)]
    return [cast(_coerce(tok)) for tok in str(value).replace(",", " ").split()]


def harness_settings(config):
    """Sweep and output settings with defaults filled in."""
    section = dict(config.get("harness", {}))
    return {
        "seed": int(section.get("seed", 0)),
        "seeds": _as_list(section.get("seeds", section.get("seed", 0)), int),
        "eps_n_list": _as_list(
            section.get("eps_n_list",
                        config.get("oracle", {}).get("eps_n", 0.0)), float),
        "kappa_exact": float(section.get("kappa_exact", 1e-7)),
        "output": section.get("output", "results.csv"),
    }
