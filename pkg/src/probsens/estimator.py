"""Single-run likelihood-ratio / score-function estimates.

One :class:`SampleBatch` holds the inputs, outputs and input scores of a Monte
Carlo run. Any number of utilities and their parameter gradients are then
estimated from that batch without touching the model again::

    U      ~ mean_i u(y_i)
    dU/db  ~ mean_i u(y_i) * score_i
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dist import THRESHOLD_STREAM, NOISE_STREAM, InputModel, Marginal, stream
from .errors import ConfigError, EstimationError, EvaluationError, SensitivityError
from .model import ModelSpec

__all__ = [
    "SampleBatch",
    "Utility",
    "Moment",
    "FailureProb",
    "Custom",
    "UtilityEstimate",
    "run_batch",
    "utility_values",
    "estimate_utility",
    "estimate_gradient",
    "control_variate_center",
    "estimate_all",
]


@dataclass(frozen=True)
class SampleBatch:
    inputs: np.ndarray
    outputs: np.ndarray
    scores: np.ndarray
    seed: int
    param_labels: tuple[str, ...] = ()
    output_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.outputs.shape[0] != n or self.scores.shape[0] != n:
            raise ConfigError("inputs, outputs and scores must have the same number of rows")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_params(self) -> int:
        return self.scores.shape[1]

    def head(self, n: int) -> "SampleBatch":
        return SampleBatch(self.inputs[:n], self.outputs[:n], self.scores[:n], self.seed,
                           self.param_labels, self.output_names)

    def with_outputs(self, outputs, output_names=None) -> "SampleBatch":
        outputs = np.asarray(outputs, dtype=float).reshape(self.n, -1)
        return SampleBatch(self.inputs, outputs, self.scores, self.seed, self.param_labels,
                           tuple(output_names) if output_names is not None else self.output_names)


def run_batch(input_model: InputModel, spec: ModelSpec, n: int, seed: int) -> SampleBatch:
    """Sample ``n`` inputs, evaluate the model once per row, attach input scores."""
    n = int(n)
    if n < 1:
        raise ConfigError(f"sample size must be >= 1, got {n}")
    if input_model.dim != spec.input_dim:
        raise ConfigError(
            f"input model has {input_model.dim} marginals but model {spec.name!r} "
            f"takes {spec.input_dim} inputs"
        )
    x = input_model.sample(n, seed)
    noise = stream(seed, NOISE_STREAM).standard_normal((n, spec.n_noise)) if spec.n_noise else None
    y = spec.evaluate(x, noise)
    bad = ~np.all(np.isfinite(y), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise EvaluationError(f"model {spec.name!r} returned non-finite output at sample {i}: {y[i]}")
    try:
        s = input_model.score(x)
    except SensitivityError as exc:
        rows = [i for i in range(n) if not np.all(np.isfinite(x[i]))]
        where = f" at sample {rows[0]}" if rows else ""
        raise EvaluationError(f"score evaluation failed{where}: {exc}") from exc
    return SampleBatch(x, y, s, int(seed), tuple(input_model.param_vector.labels), spec.output_names)


# --- utilities ---------------------------------------------------------------------


class Utility:
    label: str = ""

    def values(self, batch: SampleBatch) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def _column(self, batch, key):
        if isinstance(key, str):
            if key not in batch.output_names:
                raise ConfigError(f"utility {self.label!r}: no output named {key!r}")
            key = batch.output_names.index(key)
        if not 0 <= key < batch.outputs.shape[1]:
            raise ConfigError(f"utility {self.label!r}: output index {key} out of range")
        return batch.outputs[:, key]


@dataclass(frozen=True)
class Moment(Utility):
    """q-th raw moment of output ``output``, optionally after a map ``post``."""

    output: int | str = 0
    order: int = 1
    post: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)
    label: str = ""

    def __post_init__(self):
        if int(self.order) < 1:
            raise ConfigError(f"moment order must be >= 1, got {self.order}")
        if not self.label:
            object.__setattr__(self, "label", f"m{self.order}[{self.output}]")

    def values(self, batch):
        g = self._column(batch, self.output)
        if self.post is not None:
            g = np.asarray(self.post(g), dtype=float)
        return g ** int(self.order)


@dataclass(frozen=True)
class FailureProb(Utility):
    """P[y_k > z]. With ``threshold_dist`` set, z is drawn once per batch."""

    output: int | str = 0
    threshold: float | None = None
    threshold_dist: Marginal | None = None
    label: str = ""

    def __post_init__(self):
        if (self.threshold is None) == (self.threshold_dist is None):
            raise ConfigError("FailureProb needs exactly one of threshold / threshold_dist")
        if not self.label:
            object.__setattr__(self, "label", f"Pf[{self.output}]")

    def realize(self, seed: int) -> float:
        if self.threshold_dist is None:
            return float(self.threshold)
        return float(self.threshold_dist.sample(stream(seed, THRESHOLD_STREAM), 1)[0])

    def values(self, batch):
        z = self.realize(batch.seed)
        return (self._column(batch, self.output) > z).astype(float)


@dataclass(frozen=True)
class Custom(Utility):
    """Arbitrary utility ``fn(outputs) -> (n,)`` applied to the output matrix."""

    fn: Callable[[np.ndarray], np.ndarray] = field(default=None, compare=False)
    label: str = "custom"

    def values(self, batch):
        return np.asarray(self.fn(batch.outputs), dtype=float).ravel()


@dataclass(frozen=True)
class UtilityEstimate:
    label: str
    value: float
    gradient: np.ndarray
    value_se: float
    gradient_se: np.ndarray
    n: int
    centered: bool = True


def utility_values(batch: SampleBatch, u: Utility) -> np.ndarray:
    v = np.asarray(u.values(batch), dtype=float)
    if v.shape != (batch.n,):
        raise EstimationError(f"utility {u.label!r} returned shape {v.shape}, expected ({batch.n},)")
    if np.all(np.isnan(v)):
        raise EstimationError(f"utility {u.label!r} is NaN for every sample")
    if not np.all(np.isfinite(v)):
        raise EstimationError(f"utility {u.label!r} has non-finite values")
    return v


def _mean_se(a, axis=0):
    n = a.shape[axis]
    mean = a.mean(axis=axis)
    se = a.std(axis=axis, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def estimate_gradient(batch: SampleBatch, u: Utility) -> tuple[np.ndarray, np.ndarray]:
    """Plain LR/SF gradient mean_i u_i * score_i and its standard error."""
    v = utility_values(batch, u)
    return _mean_se(v[:, None] * batch.scores)


def control_variate_center(batch: SampleBatch, u: Utility) -> UtilityEstimate:
    """Gradient from mean_i (u_i - mean(u)) * score_i.

    The score has zero expectation, so subtracting the batch mean of ``u`` keeps
    the estimator's expectation and removes the part of its variance that is
    carried by the utility's level.
    """
    v = utility_values(batch, u)
    value, value_se = _mean_se(v)
    grad, grad_se = _mean_se((v - value)[:, None] * batch.scores)
    return UtilityEstimate(u.label, float(value), grad, float(value_se), grad_se, batch.n, True)


def estimate_utility(batch: SampleBatch, u: Utility, center: bool = True) -> UtilityEstimate:
    """Utility value and gradient, both from the same batch."""
    if center:
        return control_variate_center(batch, u)
    v = utility_values(batch, u)
    value, value_se = _mean_se(v)
    grad, grad_se = _mean_se(v[:, None] * batch.scores)
    return UtilityEstimate(u.label, float(value), grad, float(value_se), grad_se, batch.n, False)


def estimate_all(batch: SampleBatch, utilities, center: bool = True) -> list[UtilityEstimate]:
    return [estimate_utility(batch, u, center) for u in utilities]
