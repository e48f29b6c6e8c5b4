"""Parametric input distributions with closed-form scores.

Every marginal exposes an ordered tuple of distribution parameters. An
:class:`InputModel` stacks independent marginals; its :class:`ParamVector`
concatenates their parameters in declaration order and is the set of
variables that all sensitivities are taken with respect to.

New marginal kinds subclass :class:`Marginal` and implement ``_draw``,
``_logpdf`` and ``_score``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import special

from .errors import ConfigError, EvaluationError

__all__ = [
    "Marginal",
    "Gaussian",
    "Gamma",
    "DeltaApprox",
    "ParamEntry",
    "ParamVector",
    "InputModel",
    "stream",
    "sample",
    "score",
]

NOISE_STREAM = 0x6E6F6973
THRESHOLD_STREAM = 0x74687265


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 generator for ``(seed, key)``.

    Streams are derived through ``SeedSequence`` spawn keys, so the same
    ``(seed, key)`` pair always yields the same draws regardless of which
    other streams were created before it.
    """
    if int(seed) < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Marginal:
    """A univariate distribution. Subclasses define the parameter layout."""

    name: str

    param_names: tuple[str, ...] = field(default=(), init=False, repr=False)

    @property
    def values(self) -> np.ndarray:
        return np.array([getattr(self, p) for p in self.param_names], dtype=float)

    def with_values(self, values: Sequence[float]) -> "Marginal":
        if len(values) != len(self.param_names):
            raise ConfigError(
                f"marginal {self.name!r} takes {len(self.param_names)} parameters, got {len(values)}"
            )
        return replace(self, **{p: float(v) for p, v in zip(self.param_names, values)})

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self._draw(rng, int(n))

    def logpdf(self, x) -> np.ndarray:
        x = self._check(x)
        return self._logpdf(x)

    def score(self, x) -> np.ndarray:
        """d log p(x) / d params, shape ``(len(x), len(param_names))``."""
        x = self._check(x)
        return self._score(x)

    def _check(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(x)):
            raise EvaluationError(f"non-finite input to marginal {self.name!r}")
        return x

    def _draw(self, rng, n):  # pragma: no cover - abstract
        raise NotImplementedError

    def _logpdf(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def _score(self, x):  # pragma: no cover - abstract
        raise NotImplementedError


@dataclass(frozen=True)
class Gaussian(Marginal):
    mean: float = 0.0
    std: float = 1.0

    param_names: tuple[str, ...] = field(default=("mean", "std"), init=False, repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std)) or self.std <= 0:
            raise ConfigError(
                f"marginal {self.name!r}: Gaussian needs finite mean and std > 0 "
                f"(got mean={self.mean}, std={self.std})"
            )

    @classmethod
    def from_mean_cov(cls, name: str, mean: float, cov: float) -> "Gaussian":
        if cov <= 0:
            raise ConfigError(f"marginal {name!r}: CoV must be > 0, got {cov}")
        return cls(name, mean, abs(mean) * cov)

    def _draw(self, rng, n):
        return rng.normal(self.mean, self.std, n)

    def _logpdf(self, x):
        z = (x - self.mean) / self.std
        return -0.5 * z * z - math.log(self.std) - 0.5 * math.log(2 * math.pi)

    def _score(self, x):
        d = x - self.mean
        s2 = self.std * self.std
        return np.column_stack([d / s2, (d * d - s2) / (s2 * self.std)])


@dataclass(frozen=True)
class Gamma(Marginal):
    """Gamma distribution in (shape, scale) form: mean = shape * scale."""

    shape: float = 1.0
    scale: float = 1.0

    param_names: tuple[str, ...] = field(default=("shape", "scale"), init=False, repr=False)

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0 and math.isfinite(self.shape) and math.isfinite(self.scale)):
            raise ConfigError(
                f"marginal {self.name!r}: Gamma needs shape > 0 and scale > 0 "
                f"(got shape={self.shape}, scale={self.scale})"
            )

    @classmethod
    def from_mean_cov(cls, name: str, mean: float, cov: float) -> "Gamma":
        if mean <= 0 or cov <= 0:
            raise ConfigError(f"marginal {name!r}: Gamma needs mean > 0 and CoV > 0")
        return cls(name, 1.0 / cov**2, mean * cov**2)

    def mean_cov_jacobian(self) -> np.ndarray:
        """d(shape, scale)/d(mean, CoV) at the current parameters."""
        cov = 1.0 / math.sqrt(self.shape)
        mean = self.shape * self.scale
        return np.array([[0.0, -2.0 / cov**3], [cov**2, 2.0 * mean * cov]])

    def _draw(self, rng, n):
        return rng.gamma(self.shape, self.scale, n)

    def _check(self, x):
        x = super()._check(x)
        if np.any(x <= 0):
            raise EvaluationError(f"marginal {self.name!r}: Gamma score undefined for x <= 0")
        return x

    def _logpdf(self, x):
        k, th = self.shape, self.scale
        return (k - 1) * np.log(x) - x / th - special.gammaln(k) - k * math.log(th)

    def _score(self, x):
        k, th = self.shape, self.scale
        d_shape = np.log(x) - special.digamma(k) - math.log(th)
        d_scale = (x / th - k) / th
        return np.column_stack([d_shape, d_scale])


@dataclass(frozen=True)
class DeltaApprox(Gaussian):
    """Near-deterministic input: a Gaussian with std = cov * |value|.

    Exposes the same (mean, std) parameters as :class:`Gaussian`; ``cov`` only
    fixes the nominal spread.
    """

    cov: float = 1e-4

    def __init__(self, name: str, value: float, cov: float = 1e-4):
        if not cov > 0:
            raise ConfigError(f"marginal {name!r}: DeltaApprox CoV must be > 0, got {cov}")
        if value == 0:
            raise ConfigError(f"marginal {name!r}: DeltaApprox needs a nonzero nominal value")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "mean", float(value))
        object.__setattr__(self, "std", abs(float(value)) * cov)
        object.__setattr__(self, "cov", float(cov))
        object.__setattr__(self, "param_names", ("mean", "std"))
        Gaussian.__post_init__(self)

    def with_values(self, values):
        g = Gaussian(self.name, float(values[0]), float(values[1]))
        out = object.__new__(DeltaApprox)
        for k, v in (("name", g.name), ("mean", g.mean), ("std", g.std), ("cov", self.cov),
                     ("param_names", ("mean", "std"))):
            object.__setattr__(out, k, v)
        return out


@dataclass(frozen=True)
class ParamEntry:
    marginal: str
    param: str
    value: float
    nominal: float

    @property
    def label(self) -> str:
        return f"{self.marginal}.{self.param}"


@dataclass(frozen=True)
class ParamVector:
    entries: tuple[ParamEntry, ...]

    def __len__(self):
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    @property
    def nominals(self) -> np.ndarray:
        return np.array([e.nominal for e in self.entries])

    def index(self, label: str) -> int:
        return self.labels.index(label)


class InputModel:
    """Product of independent marginals.

    Parameters
    ----------
    marginals : sequence of Marginal
        Declaration order fixes both the input column order and the
        parameter order.
    nominals : dict, optional
        Override of nominal values ``{"x1.mean": 2.0}`` used for proportional
        normalisation. Defaults to the parameter values themselves.
    """

    def __init__(self, marginals: Sequence[Marginal], nominals: dict[str, float] | None = None):
        marginals = tuple(marginals)
        if not marginals:
            raise ConfigError("an input model needs at least one marginal")
        names = [m.name for m in marginals]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate marginal names: {names}")
        self.marginals = marginals
        entries = []
        nominals = dict(nominals or {})
        for m in marginals:
            for p, v in zip(m.param_names, m.values):
                label = f"{m.name}.{p}"
                entries.append(ParamEntry(m.name, p, float(v), float(nominals.pop(label, v))))
        if nominals:
            raise ConfigError(f"nominal values given for unknown parameters: {sorted(nominals)}")
        self.param_vector = ParamVector(tuple(entries))
        self._slices = []
        start = 0
        for m in marginals:
            self._slices.append(slice(start, start + len(m.param_names)))
            start += len(m.param_names)

    def __repr__(self):
        return f"InputModel({list(self.marginals)!r})"

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def n_params(self) -> int:
        return len(self.param_vector)

    def with_params(self, b: Sequence[float]) -> "InputModel":
        """Same marginals with parameter vector ``b``; nominals are kept."""
        b = np.asarray(b, dtype=float)
        if b.shape != (self.n_params,):
            raise ConfigError(f"expected {self.n_params} parameters, got shape {b.shape}")
        new = [m.with_values(b[s]) for m, s in zip(self.marginals, self._slices)]
        noms = {e.label: e.nominal for e in self.param_vector.entries}
        return InputModel(new, noms)

    def sample(self, n: int, seed: int) -> np.ndarray:
        if int(n) < 1:
            raise ConfigError(f"sample size must be >= 1, got {n}")
        cols = [m.sample(stream(seed, j), int(n)) for j, m in enumerate(self.marginals)]
        return np.column_stack(cols)

    def _as_rows(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise ConfigError(f"input has {x.shape[1]} columns, model has {self.dim} marginals")
        return x, single

    def logpdf(self, x) -> np.ndarray | float:
        x, single = self._as_rows(x)
        out = sum(m.logpdf(x[:, j]) for j, m in enumerate(self.marginals))
        return float(out[0]) if single else out

    def score(self, x) -> np.ndarray:
        """Score rows d log p(x|b)/db, stacked in parameter-vector order."""
        x, single = self._as_rows(x)
        out = np.empty((x.shape[0], self.n_params))
        for j, (m, s) in enumerate(zip(self.marginals, self._slices)):
            out[:, s] = m.score(x[:, j])
        return out[0] if single else out


def sample(model: InputModel, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` input vectors; column ``j`` uses its own stream keyed by ``j``."""
    return model.sample(n, seed)


def score(model: InputModel, x) -> np.ndarray:
    return model.score(x)
