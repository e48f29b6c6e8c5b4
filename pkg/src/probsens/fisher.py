"""Fisher information of the output density w.r.t. input distribution parameters.

The output density and its parameter gradient are both expectations over the
input distribution of a Dirac delta at the sample output. Replacing the delta
by a Gaussian product kernel gives, for an evaluation point ``y``::

    p(y)     ~ (1/n) sum_j K_h(y - y_j)
    dp/db(y) ~ (1/n) sum_j K_h(y - y_j) * score_j

and the Fisher matrix is the sample average of the outer products of
``dp/db / p`` over the batch outputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, EstimationError
from .estimator import SampleBatch, UtilityEstimate

__all__ = [
    "KdeConfig",
    "FisherMatrix",
    "silverman_bandwidth",
    "density_gradient",
    "output_score",
    "output_score_at",
    "fisher_matrix",
    "density_utilities",
    "kl_quadratic",
]

MAX_OUTPUT_DIMS = 3
# exp(-80) ~ 1.8e-35: weights below this are treated as that value. Keeps exp()
# off its slow subnormal path without changing any sum at double precision.
_MIN_LOG_KERNEL = -80.0
_CHUNK_ELEMENTS = 2_500_000


@dataclass(frozen=True)
class KdeConfig:
    """Kernel density settings.

    bandwidth : ``"silverman"`` or a sequence with one positive width per
        selected output dimension.
    floor : density floor relative to the largest density at the sample points.
    outputs : output columns (indices or names) forming the joint density;
        ``None`` means all outputs.
    leave_one_out : drop each sample's own kernel term at sample points.
    """

    bandwidth: str | tuple[float, ...] = "silverman"
    floor: float = 1e-12
    outputs: tuple[int | str, ...] | None = None
    leave_one_out: bool = False

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "silverman":
                raise ConfigError(f"unknown bandwidth rule {self.bandwidth!r}")
        else:
            bw = tuple(float(h) for h in self.bandwidth)
            if not bw or any(not (h > 0 and math.isfinite(h)) for h in bw):
                raise ConfigError(f"fixed bandwidths must be positive, got {self.bandwidth}")
            object.__setattr__(self, "bandwidth", bw)
        if not self.floor > 0:
            raise ConfigError(f"density floor must be > 0, got {self.floor}")
        if self.outputs is not None:
            object.__setattr__(self, "outputs", tuple(self.outputs))


def _select_outputs(batch: SampleBatch, cfg: KdeConfig) -> np.ndarray:
    if cfg.outputs is None:
        cols = list(range(batch.outputs.shape[1]))
    else:
        cols = []
        for key in cfg.outputs:
            if isinstance(key, str):
                if key not in batch.output_names:
                    raise ConfigError(f"KDE output {key!r} is not a model output")
                key = batch.output_names.index(key)
            if not 0 <= key < batch.outputs.shape[1]:
                raise ConfigError(f"KDE output index {key} out of range")
            cols.append(int(key))
    if not 1 <= len(cols) <= MAX_OUTPUT_DIMS:
        raise ConfigError(f"joint output density supports 1..{MAX_OUTPUT_DIMS} dimensions, got {len(cols)}")
    return batch.outputs[:, cols]


def silverman_bandwidth(y: np.ndarray) -> np.ndarray:
    """Silverman's rule of thumb, one width per column of ``y``.

    1-D: ``0.9 * min(sd, IQR/1.34) * n**(-1/5)``; d-D normal reference:
    ``min(sd, IQR/1.34) * (4 / ((d + 2) n))**(1 / (d + 4))``.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float).T).T
    n, d = y.shape
    if n < 2:
        raise EstimationError("bandwidth selection needs at least two samples")
    sd = y.std(axis=0, ddof=1)
    if np.any(sd <= 1e-300) or np.any(sd <= 1e-14 * np.abs(y).max(axis=0)):
        raise EstimationError(
            "output has (numerically) zero variance; a density cannot be estimated. "
            "For near-deterministic inputs use DeltaApprox marginals with a small CoV."
        )
    q75, q25 = np.percentile(y, [75, 25], axis=0)
    iqr = (q75 - q25) / 1.34
    spread = np.where(iqr > 0, np.minimum(sd, iqr), sd)
    if d == 1:
        return 0.9 * spread * n ** (-0.2)
    return spread * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def _kernel_sums(points: np.ndarray, data: np.ndarray, weights: np.ndarray, h: np.ndarray):
    """sum_j K(points_i - data_j) and sum_j K(.) * weights_j (unnormalised kernel)."""
    zp = points / h
    zd = data / h
    m, n = zp.shape[0], zd.shape[0]
    ksum = np.empty(m)
    kw = np.empty((m, weights.shape[1]))
    rows = max(1, min(m, _CHUNK_ELEMENTS // max(n, 1)))
    buf = np.empty((rows, n))
    tmp = np.empty((rows, n)) if zp.shape[1] > 1 else None
    for start in range(0, m, rows):
        stop = min(start + rows, m)
        k = buf[: stop - start]
        np.subtract(zp[start:stop, 0:1], zd[None, :, 0], out=k)
        np.square(k, out=k)
        for c in range(1, zp.shape[1]):
            t = tmp[: stop - start]
            np.subtract(zp[start:stop, c:c + 1], zd[None, :, c], out=t)
            np.square(t, out=t)
            k += t
        k *= -0.5
        np.maximum(k, _MIN_LOG_KERNEL, out=k)
        np.exp(k, out=k)
        ksum[start:stop] = k.sum(axis=1)
        kw[start:stop] = k @ weights
    return ksum, kw


def _bandwidth(y, cfg):
    if cfg.bandwidth == "silverman":
        return silverman_bandwidth(y)
    h = np.asarray(cfg.bandwidth, dtype=float)
    if h.size != y.shape[1]:
        raise ConfigError(f"{h.size} bandwidths given for {y.shape[1]} output dimensions")
    return h


def density_gradient(batch: SampleBatch, cfg: KdeConfig, points=None):
    """Kernel estimates of ``p(y)`` and ``dp/db(y)``.

    Evaluated at the batch outputs when ``points`` is None (honouring
    ``leave_one_out``), else at the given ``(m, d)`` points.

    Returns ``(p, dp, h)`` with shapes ``(m,)``, ``(m, P)`` and ``(d,)``.
    """
    if batch.n < 2:
        raise EstimationError("density estimation needs at least two samples")
    y = _select_outputs(batch, cfg)
    h = _bandwidth(y, cfg)
    at_samples = points is None
    pts = y if at_samples else np.atleast_2d(np.asarray(points, dtype=float).T).T
    if pts.shape[1] != y.shape[1]:
        raise ConfigError(f"evaluation points have {pts.shape[1]} columns, density has {y.shape[1]}")
    ksum, kw = _kernel_sums(pts, y, batch.scores, h)
    count = batch.n
    if at_samples and cfg.leave_one_out:
        ksum = ksum - 1.0
        kw = kw - batch.scores
        count -= 1
    norm = count * np.prod(h) * (2.0 * math.pi) ** (y.shape[1] / 2.0)
    return ksum / norm, kw / norm, h


def output_score_at(batch: SampleBatch, cfg: KdeConfig, points) -> np.ndarray:
    """d log p(y)/db at arbitrary points (floored density in the denominator)."""
    p, dp, _ = density_gradient(batch, cfg, points)
    floor = cfg.floor * p.max() if p.max() > 0 else cfg.floor
    return dp / np.maximum(p, floor)[:, None]


def output_score(batch: SampleBatch, cfg: KdeConfig) -> np.ndarray:
    """d log p(y_i)/db for every sample output, shape ``(n, P)``."""
    p, dp, _ = density_gradient(batch, cfg)
    floor = cfg.floor * p.max()
    return dp / np.maximum(p, floor)[:, None]


@dataclass(frozen=True)
class FisherMatrix:
    matrix: np.ndarray
    n_used: int
    n_excluded: int
    bandwidth: np.ndarray
    config: KdeConfig
    param_labels: tuple[str, ...] = ()
    eig_tol: float = field(default=1e-10, repr=False)

    @cached_property
    def eigen(self) -> tuple[np.ndarray, np.ndarray]:
        """Descending eigenvalues (small negatives clamped to 0) and eigenvectors."""
        lam, q = np.linalg.eigh(self.matrix)
        lam, q = lam[::-1], q[:, ::-1]
        top = max(lam[0], 0.0)
        if lam[-1] < -self.eig_tol * top:
            raise EstimationError(f"Fisher matrix is not PSD: smallest eigenvalue {lam[-1]:.3e}")
        return np.maximum(lam, 0.0), q

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.eigen[0]


def _included(p, cfg):
    return p >= cfg.floor * p.max()


def fisher_matrix(batch: SampleBatch, cfg: KdeConfig | None = None) -> FisherMatrix:
    """F = mean over samples of s_i s_i^T with s_i = d log p(y_i)/db.

    Samples whose density falls below the floor are left out of the average
    and counted in ``n_excluded``.
    """
    cfg = cfg or KdeConfig()
    p, dp, h = density_gradient(batch, cfg)
    keep = _included(p, cfg)
    s = dp[keep] / p[keep, None]
    F = s.T @ s / s.shape[0]
    F = 0.5 * (F + F.T)
    return FisherMatrix(F, int(keep.sum()), int((~keep).sum()), h, cfg, batch.param_labels)


def density_utilities(batch: SampleBatch, cfg: KdeConfig | None = None) -> list[UtilityEstimate]:
    """Each sample's kernel density viewed as a utility with its gradient.

    Feeding these through the sensitivity-matrix machinery (one realisation
    per sample) reproduces :func:`fisher_matrix`.
    """
    cfg = cfg or KdeConfig()
    p, dp, _ = density_gradient(batch, cfg)
    keep = np.flatnonzero(_included(p, cfg))
    zero = np.zeros(batch.n_params)
    return [UtilityEstimate(f"p(y_{i})", float(p[i]), dp[i], 0.0, zero, batch.n) for i in keep]


def kl_quadratic(F, delta_b: Sequence[float]) -> float:
    """Second-order KL divergence 0.5 * db^T F db."""
    M = F.matrix if isinstance(F, FisherMatrix) else np.asarray(F, dtype=float)
    db = np.asarray(delta_b, dtype=float)
    if db.shape != (M.shape[0],):
        raise ConfigError(f"perturbation has shape {db.shape}, Fisher matrix is {M.shape}")
    return float(0.5 * db @ M @ db)
