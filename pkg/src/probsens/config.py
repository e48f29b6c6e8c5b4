"""Run configuration: TOML file -> validated :class:`RunConfig`.

Every key is checked before any sampling happens; unknown keys and
out-of-range values raise :class:`~probsens.errors.ConfigError` with the
offending key path in the message. Example::

    [model]
    name = "cantilever"
    excitation = "tip"
    normalize_outputs = true

    [[marginals]]
    name = "E"
    kind = "gaussian"
    mean = 69e9
    cov = 0.1

    [[utilities]]
    kind = "moment"
    output = "peak_rms_accel"

    [analysis]
    kind = "utility_eigen"
    n = 20000
    seed = 1
    repetitions = 10
    normalization = "proportional"
"""
from __future__ import annotations

import copy
import hashlib
import inspect
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import model as models
from .dist import DeltaApprox, Gamma, Gaussian, InputModel, Marginal
from .errors import ConfigError
from .estimator import FailureProb, Moment, Utility
from .fisher import KdeConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

log = logging.getLogger(__name__)

ANALYSIS_KINDS = ("utility_eigen", "fisher", "generalized_failure_vs_fisher")

_SECTIONS = {"model", "marginals", "utilities", "analysis", "kde", "output"}
_ANALYSIS_KEYS = {"kind", "n", "seed", "repetitions", "normalization", "control_variate", "convergence"}
_KDE_KEYS = {"bandwidth", "floor", "outputs", "leave_one_out"}
_MARGINAL_KEYS = {
    "gaussian": {"mean", "std", "cov"},
    "gamma": {"shape", "scale", "mean", "cov"},
    "delta": {"value", "cov"},
}


@dataclass
class RunConfig:
    raw: dict
    input_model: InputModel
    model: models.ModelSpec
    utilities: tuple[Utility, ...]
    kind: str
    n: int
    seed: int
    repetitions: int
    normalization: str
    control_variate: bool
    convergence: tuple[int, ...]
    kde: KdeConfig
    normalize_outputs: bool
    output_dir: str | None

    @property
    def canonical(self) -> dict:
        """Config echo without the output location (results are relocatable)."""
        out = copy.deepcopy(self.raw)
        out.pop("output", None)
        return out

    @property
    def hash(self) -> str:
        return config_hash(self.canonical)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def config_hash(canonical: dict) -> str:
    return hashlib.sha256(canonical_json(canonical).encode("utf-8")).hexdigest()


def _table(d, path) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a table")
    return d


def _unknown(d: dict, allowed, path):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{path}: unknown key(s) {extra}")


def _number(d, key, path, default=None, positive=False):
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}.{key}: required")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise ConfigError(f"{path}.{key}: expected a finite number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{path}.{key}: must be > 0, got {v}")
    return float(v)


def _int(d, key, path, default=None, minimum=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}.{key}: required")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}.{key}: must be >= {minimum}, got {v}")
    return v


def _bool(d, key, path, default):
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{path}.{key}: expected true/false, got {v!r}")
    return v


def _marginal(name: str, spec: dict, path: str) -> Marginal:
    kind = spec.get("kind")
    if kind not in _MARGINAL_KEYS:
        raise ConfigError(f"{path}.kind: expected one of {sorted(_MARGINAL_KEYS)}, got {kind!r}")
    _unknown(spec, _MARGINAL_KEYS[kind] | {"kind", "name", "names", "nominal"}, path)
    try:
        if kind == "gaussian":
            mean = _number(spec, "mean", path)
            if "std" in spec and "cov" in spec:
                raise ConfigError(f"{path}: give either std or cov, not both")
            if "cov" in spec:
                m = Gaussian.from_mean_cov(name, mean, _number(spec, "cov", path, positive=True))
                log.info("%s: Gaussian mean=%g cov=%g -> std=%g", name, mean, spec["cov"], m.std)
                return m
            return Gaussian(name, mean, _number(spec, "std", path))
        if kind == "gamma":
            if "mean" in spec or "cov" in spec:
                if "shape" in spec or "scale" in spec:
                    raise ConfigError(f"{path}: give either mean/cov or shape/scale")
                mean = _number(spec, "mean", path, positive=True)
                cov = _number(spec, "cov", path, positive=True)
                m = Gamma.from_mean_cov(name, mean, cov)
                log.info("%s: Gamma mean=%g cov=%g -> shape=%g scale=%g", name, mean, cov, m.shape, m.scale)
                return m
            return Gamma(name, _number(spec, "shape", path), _number(spec, "scale", path))
        return DeltaApprox(name, _number(spec, "value", path), _number(spec, "cov", path, 1e-4, positive=True))
    except ConfigError as exc:
        if str(exc).startswith(path):
            raise
        raise ConfigError(f"{path}: {exc}") from None


def _marginals(items, path):
    if not isinstance(items, list) or not items:
        raise ConfigError(f"{path}: expected a non-empty array of tables")
    marginals, nominals = [], {}
    for i, spec in enumerate(items):
        p = f"{path}[{i}]"
        spec = _table(spec, p)
        if ("name" in spec) == ("names" in spec):
            raise ConfigError(f"{p}: give exactly one of name / names")
        names = [spec["name"]] if "name" in spec else spec["names"]
        if not isinstance(names, list) or not all(isinstance(n, str) and n for n in names):
            raise ConfigError(f"{p}: marginal names must be non-empty strings")
        for nm in names:
            m = _marginal(nm, spec, p)
            marginals.append(m)
            nom = _table(spec.get("nominal", {}), f"{p}.nominal")
            _unknown(nom, m.param_names, f"{p}.nominal")
            for k in nom:
                nominals[f"{nm}.{k}"] = _number(nom, k, f"{p}.nominal")
    return InputModel(marginals, nominals)


def _model(spec: dict, path: str) -> tuple[models.ModelSpec, bool]:
    spec = dict(_table(spec, path))
    name = spec.pop("name", None)
    normalize = _bool(spec, "normalize_outputs", path, False)
    spec.pop("normalize_outputs", None)
    if name == "external":
        _unknown(spec, {"command", "input_dim", "outputs", "timeout"}, path)
        cmd = spec.get("command")
        if not (isinstance(cmd, str) and cmd) and not (isinstance(cmd, list) and cmd):
            raise ConfigError(f"{path}.command: required (string or array)")
        outs = spec.get("outputs")
        if not isinstance(outs, list) or not outs:
            raise ConfigError(f"{path}.outputs: required array of output names")
        return models.external(cmd, _int(spec, "input_dim", path, minimum=1), outs,
                               spec.get("timeout")), normalize
    if name not in models.BUILTIN_MODELS:
        raise ConfigError(f"{path}.name: unknown model {name!r}; "
                          f"choose from {sorted(models.BUILTIN_MODELS) + ['external']}")
    builder = models.BUILTIN_MODELS[name]
    accepted = set(inspect.signature(builder).parameters)
    _unknown(spec, accepted, path)
    try:
        return builder(**spec), normalize
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _output_key(v, spec: models.ModelSpec, path):
    if isinstance(v, bool) or not isinstance(v, (int, str)):
        raise ConfigError(f"{path}: expected output name or index, got {v!r}")
    try:
        spec.output_index(v)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return v


def _utilities(items, spec: models.ModelSpec, path) -> tuple[Utility, ...]:
    if items is None:
        return ()
    if not isinstance(items, list):
        raise ConfigError(f"{path}: expected an array of tables")
    out = []
    for i, u in enumerate(items):
        p = f"{path}[{i}]"
        u = _table(u, p)
        kind = u.get("kind")
        label = u.get("label", "")
        if not isinstance(label, str):
            raise ConfigError(f"{p}.label: expected a string")
        if kind == "moment":
            _unknown(u, {"kind", "label", "output", "order"}, p)
            out.append(Moment(_output_key(u.get("output", 0), spec, f"{p}.output"),
                              _int(u, "order", p, 1, minimum=1), None, label))
        elif kind == "failure":
            _unknown(u, {"kind", "label", "output", "threshold", "threshold_dist"}, p)
            out_key = _output_key(u.get("output", 0), spec, f"{p}.output")
            if ("threshold" in u) == ("threshold_dist" in u):
                raise ConfigError(f"{p}: give exactly one of threshold / threshold_dist")
            if "threshold" in u:
                out.append(FailureProb(out_key, _number(u, "threshold", p), None, label))
            else:
                td = dict(_table(u["threshold_dist"], f"{p}.threshold_dist"))
                td.setdefault("name", "threshold")
                out.append(FailureProb(out_key, None, _marginal(td["name"], td, f"{p}.threshold_dist"), label))
        else:
            raise ConfigError(f"{p}.kind: expected 'moment' or 'failure', got {kind!r}")
    labels = [u.label for u in out]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"{path}: utility labels must be unique, got {labels}")
    return tuple(out)


def _kde(d, spec: models.ModelSpec, path) -> KdeConfig:
    d = _table(d, path)
    _unknown(d, _KDE_KEYS, path)
    bw = d.get("bandwidth", "silverman")
    if isinstance(bw, list):
        if not all(isinstance(h, (int, float)) and not isinstance(h, bool) for h in bw):
            raise ConfigError(f"{path}.bandwidth: expected numbers")
        bw = tuple(float(h) for h in bw)
    elif bw != "silverman":
        raise ConfigError(f"{path}.bandwidth: expected 'silverman' or an array of widths")
    outs = d.get("outputs")
    if outs is not None:
        if not isinstance(outs, list) or not outs:
            raise ConfigError(f"{path}.outputs: expected a non-empty array")
        outs = tuple(_output_key(o, spec, f"{path}.outputs") for o in outs)
        ndim = len(outs)
    else:
        ndim = spec.output_dim
    if ndim > 3:
        raise ConfigError(f"{path}.outputs: joint density limited to 3 output dimensions, got {ndim}")
    if isinstance(bw, tuple) and len(bw) != ndim:
        raise ConfigError(f"{path}.bandwidth: {len(bw)} widths for {ndim} output dimensions")
    try:
        return KdeConfig(bw, _number(d, "floor", path, 1e-12, positive=True), outs,
                         _bool(d, "leave_one_out", path, False))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_config(raw: dict) -> RunConfig:
    """Validate a config mapping and build all runtime objects."""
    raw = copy.deepcopy(_table(raw, "config"))
    _unknown(raw, _SECTIONS, "config")
    for sec in ("model", "marginals", "analysis"):
        if sec not in raw:
            raise ConfigError(f"config: missing section [{sec}]")
    spec, normalize = _model(raw["model"], "model")
    inputs = _marginals(raw["marginals"], "marginals")
    if inputs.dim != spec.input_dim:
        raise ConfigError(f"marginals: {inputs.dim} declared but model {spec.name!r} "
                          f"takes {spec.input_dim} inputs")
    a = _table(raw["analysis"], "analysis")
    _unknown(a, _ANALYSIS_KEYS, "analysis")
    kind = a.get("kind")
    if kind not in ANALYSIS_KINDS:
        raise ConfigError(f"analysis.kind: expected one of {list(ANALYSIS_KINDS)}, got {kind!r}")
    utilities = _utilities(raw.get("utilities"), spec, "utilities")
    if kind != "fisher" and not utilities:
        raise ConfigError(f"utilities: analysis kind {kind!r} needs at least one utility")
    if kind == "generalized_failure_vs_fisher" and not all(isinstance(u, FailureProb) for u in utilities):
        raise ConfigError("utilities: generalized_failure_vs_fisher expects failure utilities only")
    normalization = a.get("normalization", "raw")
    if normalization not in ("raw", "proportional"):
        raise ConfigError(f"analysis.normalization: expected 'raw' or 'proportional', got {normalization!r}")
    if normalization == "proportional":
        zero = [e.label for e in inputs.param_vector.entries if e.nominal == 0]
        if zero:
            raise ConfigError(f"analysis.normalization: proportional normalisation needs nonzero "
                              f"nominal values; zero for {zero}")
    conv = a.get("convergence", [])
    if not isinstance(conv, list) or not all(isinstance(c, int) and not isinstance(c, bool) and c >= 2
                                             for c in conv):
        raise ConfigError("analysis.convergence: expected an array of sample sizes >= 2")
    kde = _kde(raw.get("kde", {}), spec, "kde")
    out = _table(raw.get("output", {}), "output")
    _unknown(out, {"dir"}, "output")
    if "dir" in out and not isinstance(out["dir"], str):
        raise ConfigError("output.dir: expected a string")
    return RunConfig(
        raw=raw,
        input_model=inputs,
        model=spec,
        utilities=utilities,
        kind=kind,
        n=_int(a, "n", "analysis", minimum=2),
        seed=_int(a, "seed", "analysis", 0, minimum=0),
        repetitions=_int(a, "repetitions", "analysis", 1, minimum=1),
        normalization=normalization,
        control_variate=_bool(a, "control_variate", "analysis", True),
        convergence=tuple(conv),
        kde=kde,
        normalize_outputs=normalize,
        output_dir=out.get("dir"),
    )


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Read a TOML config; ``overrides`` maps analysis keys (n, seed, repetitions)."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "dir":
            raw.setdefault("output", {})["dir"] = value
        else:
            raw.setdefault("analysis", {})[key] = value
    try:
        return parse_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
