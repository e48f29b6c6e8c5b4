"""Closed-form natural-frequency sensitivities and the delta-limit check.

For a simple mode with mass-normalised shape ``phi``::

    d omega / d b_j = phi^T (dK/db_j - omega^2 dM/db_j) phi / (2 omega)

which serves as a deterministic reference for the Fisher sensitivity of
near-deterministic (DeltaApprox) inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dist import DeltaApprox, InputModel
from .eig import fix_signs, reparameterize, solve_standard
from .errors import ConfigError, DegeneracyError
from .estimator import run_batch
from .fisher import FisherMatrix, KdeConfig, fisher_matrix
from .model import EigenSystemSpec, eigensystem_model, eval_eigensystem

__all__ = ["FreqSensitivity", "DeltaLimitResult", "freq_sensitivity", "delta_limit_check"]

_GAP_TOL = 1e-6


@dataclass(frozen=True)
class FreqSensitivity:
    mode: int
    omega: float
    domega: np.ndarray
    normalized: np.ndarray
    param_names: tuple[str, ...]


def _matrix_derivatives(spec: EigenSystemSpec, b: np.ndarray, j: int):
    if spec.d_stiffness is not None and spec.d_mass is not None:
        return np.asarray(spec.d_stiffness(b, j), float), np.asarray(spec.d_mass(b, j), float)
    h = 1e-6 * max(abs(b[j]), 1.0)
    bp, bm = b.copy(), b.copy()
    bp[j] += h
    bm[j] -= h
    Kp, Mp = spec.matrices(bp)
    Km, Mm = spec.matrices(bm)
    dK = (Kp - Km) / (2 * h)
    dM = (Mp - Mm) / (2 * h)
    if spec.d_stiffness is not None:
        dK = np.asarray(spec.d_stiffness(b, j), float)
    if spec.d_mass is not None:
        dM = np.asarray(spec.d_mass(b, j), float)
    return dK, dM


def freq_sensitivity(spec: EigenSystemSpec, b, mode: int = 0) -> FreqSensitivity:
    """Derivatives of natural frequency ``mode`` (0-based) w.r.t. each parameter.

    ``normalized[j] = (d omega / d b_j) * b_j / omega``.
    """
    b = np.asarray(b, dtype=float)
    sol = eval_eigensystem(spec, b)
    nmodes = sol.omega.size
    if not 0 <= mode < nmodes:
        raise ConfigError(f"mode {mode} out of range for a {nmodes}-DOF system")
    lam = sol.omega**2
    for other in (mode - 1, mode + 1):
        if 0 <= other < nmodes and abs(lam[other] - lam[mode]) <= _GAP_TOL * abs(lam[mode]):
            raise DegeneracyError(f"mode {mode} is repeated (omega^2 = {lam[mode]:.6g}); "
                                  "sensitivities of repeated eigenvalues are not defined here")
    _, M = spec.matrices(b)
    phi = sol.phi[:, mode]
    phi = phi / np.sqrt(phi @ M @ phi)
    w = sol.omega[mode]
    d = np.empty(b.size)
    for j in range(b.size):
        dK, dM = _matrix_derivatives(spec, b, j)
        d[j] = phi @ (dK - w**2 * dM) @ phi / (2.0 * w)
    return FreqSensitivity(mode, float(w), d, d * b / w, tuple(spec.param_names))


@dataclass(frozen=True)
class DeltaLimitResult:
    cosine: float
    sign_match: bool
    fim_direction: np.ndarray
    analytic_direction: np.ndarray
    eigenvalues: np.ndarray
    std_block: np.ndarray
    fisher: FisherMatrix


def delta_limit_check(spec: EigenSystemSpec, b, mode: int = 0, cov: float = 1e-4,
                      n: int = 20000, seed: int = 0, kde: KdeConfig | None = None) -> DeltaLimitResult:
    """Compare the dominant Fisher direction of near-deterministic inputs with
    the normalised analytic frequency sensitivities.

    Inputs are DeltaApprox marginals centred on ``b``. The output is the single
    frequency ``mode``; the Fisher matrix is taken in proportional form and
    the mean-parameter block of its leading eigenvector is compared with the
    analytic vector (both unit length, same sign convention).
    """
    if not cov <= 1e-3:
        raise ConfigError(f"delta-limit check needs CoV <= 1e-3, got {cov}")
    b = np.asarray(b, dtype=float)
    names = spec.param_names
    inputs = InputModel([DeltaApprox(nm, v, cov) for nm, v in zip(names, b)])
    batch = run_batch(inputs, eigensystem_model(spec, (mode,)), n, seed)
    F = fisher_matrix(batch, kde or KdeConfig())
    Fn = reparameterize(F.matrix, np.diag(inputs.param_vector.nominals))
    report = solve_standard(Fn, inputs.param_vector.labels)
    q1 = report.eigenvectors[:, 0]
    mean_idx = [i for i, e in enumerate(inputs.param_vector.entries) if e.param == "mean"]
    std_idx = [i for i, e in enumerate(inputs.param_vector.entries) if e.param == "std"]
    ref = freq_sensitivity(spec, b, mode).normalized
    ref = fix_signs((ref / np.linalg.norm(ref))[:, None])[:, 0]
    fim = q1[mean_idx]
    fim = fim / np.linalg.norm(fim)
    # An eigenvector's sign is arbitrary; orient it against the reference
    # (tied magnitudes would make an independent convention unreliable).
    if fim @ ref < 0:
        fim = -fim
    cosine = float(fim @ ref)
    big = np.abs(ref) > 1e-6 * np.abs(ref).max()
    sign_match = bool(np.all(np.sign(fim[big]) == np.sign(ref[big])))
    return DeltaLimitResult(cosine, sign_match, fim, ref, report.eigenvalues, q1[std_idx], F)
