"""Sensitivity matrix, its second moment, and the principal sensitivity directions.

``r[j, k] = (dU_k/db_j) / U_k``; the directions that perturb the utilities most
for a fixed parameter budget are the leading eigenvectors of ``E[r r^T]``, or,
with a weighted budget ``db^T W db``, of the pencil ``(E[r r^T], W)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .errors import ConditioningError, ConfigError, DegenerateUtilityError
from .estimator import UtilityEstimate

__all__ = [
    "SensitivityMatrix",
    "EigenReport",
    "build_r",
    "second_moment",
    "solve_standard",
    "solve_generalized",
    "summary_index",
    "reparameterize",
    "fix_signs",
]

_SYM_TOL = 1e-10
_RIDGE_START, _RIDGE_STOP = 1e-10, 1e-6


@dataclass(frozen=True)
class SensitivityMatrix:
    r: np.ndarray  # (P, K)
    labels: tuple[str, ...]
    normalization: str = "raw"
    nominals: np.ndarray | None = None
    param_labels: tuple[str, ...] = ()

    @property
    def second_moment(self) -> np.ndarray:
        M = self.r @ self.r.T
        return 0.5 * (M + M.T)


@dataclass
class EigenReport:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns
    constraint: str = "identity"
    param_labels: tuple[str, ...] = ()
    summary: np.ndarray | None = None
    matrix: np.ndarray | None = field(default=None, repr=False)
    weight: np.ndarray | None = field(default=None, repr=False)
    provenance: dict = field(default_factory=dict)


def build_r(estimates: Sequence[UtilityEstimate], normalization: str = "raw",
            nominals: Sequence[float] | None = None, weights: Sequence[float] | None = None,
            param_labels: Sequence[str] = ()) -> SensitivityMatrix:
    """Stack normalised gradients ``grad_k / U_k`` column-wise.

    ``normalization="proportional"`` rescales row ``j`` by the nominal value
    of parameter ``j``; ``weights`` multiplies column ``k``.
    """
    if not estimates:
        raise ConfigError("at least one utility estimate is required")
    P = len(estimates[0].gradient)
    cols = []
    for k, est in enumerate(estimates):
        if len(est.gradient) != P:
            raise ConfigError(f"utility {est.label!r} has gradient length {len(est.gradient)}, expected {P}")
        if not abs(est.value) > 1e-300:
            raise DegenerateUtilityError(
                f"utility {k} ({est.label!r}) is zero; its normalised sensitivity is undefined"
            )
        cols.append(np.asarray(est.gradient, dtype=float) / est.value)
    r = np.column_stack(cols)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        if w.shape != (r.shape[1],):
            raise ConfigError(f"{w.size} weights for {r.shape[1]} utilities")
        r = r * w[None, :]
    nom = None
    if normalization == "proportional":
        if nominals is None:
            raise ConfigError("proportional normalisation needs nominal parameter values")
        nom = np.asarray(nominals, dtype=float)
        if nom.shape != (P,):
            raise ConfigError(f"{nom.size} nominal values for {P} parameters")
        if np.any(nom == 0):
            bad = [param_labels[j] if param_labels else j for j in np.flatnonzero(nom == 0)]
            raise ConfigError(f"proportional normalisation needs nonzero nominals (zero for {bad})")
        r = r * nom[:, None]
    elif normalization != "raw":
        raise ConfigError(f"unknown normalisation {normalization!r}")
    return SensitivityMatrix(r, tuple(e.label for e in estimates), normalization, nom, tuple(param_labels))


def second_moment(rs: Sequence[SensitivityMatrix] | SensitivityMatrix) -> np.ndarray:
    """Average of ``r r^T`` over realisations."""
    if isinstance(rs, SensitivityMatrix):
        rs = [rs]
    if not rs:
        raise ConfigError("no sensitivity realisations given")
    P = rs[0].r.shape[0]
    acc = np.zeros((P, P))
    for s in rs:
        if s.r.shape[0] != P:
            raise ConfigError("sensitivity realisations have inconsistent parameter counts")
        acc += s.r @ s.r.T
    acc /= len(rs)
    return 0.5 * (acc + acc.T)


def fix_signs(Q: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive.

    Entries within ``rtol`` of the column maximum count as ties and the lowest
    index among them decides.
    """
    Q = np.array(Q, dtype=float, copy=True)
    for i in range(Q.shape[1]):
        a = np.abs(Q[:, i])
        top = a.max()
        if top == 0:
            continue
        j = int(np.flatnonzero(a >= top * (1 - rtol))[0])
        if Q[j, i] < 0:
            Q[:, i] = -Q[:, i]
    return Q


def _check_symmetric(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {M.shape}")
    scale = np.abs(M).max()
    if np.abs(M - M.T).max() > _SYM_TOL * max(scale, 1.0):
        raise ConfigError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def _summary(lam, Q):
    return (Q**2) @ lam


def solve_standard(M, param_labels: Sequence[str] = ()) -> EigenReport:
    """Eigen-decomposition of a symmetric moment matrix, descending order."""
    M = _check_symmetric(M, "moment matrix")
    lam, Q = np.linalg.eigh(M)
    lam, Q = lam[::-1].copy(), fix_signs(Q[:, ::-1])
    return EigenReport(lam, Q, "identity", tuple(param_labels), _summary(lam, Q), M)


def solve_generalized(A, W, constraint: str = "custom", param_labels: Sequence[str] = ()) -> EigenReport:
    """Solve ``A q = lambda W q`` by Cholesky whitening.

    If ``W`` is not numerically positive definite, a ridge
    ``delta * trace(W)/P * I`` is added with delta = 1e-10, 1e-9, ..., 1e-6.
    Eigenvectors are ``W``-orthonormal (with the ridge actually used).
    """
    A = _check_symmetric(A, "moment matrix")
    W = _check_symmetric(W, "constraint matrix")
    if A.shape != W.shape:
        raise ConfigError(f"shape mismatch: {A.shape} vs {W.shape}")
    P = W.shape[0]
    scale = np.trace(W) / P
    ridges = [0.0] + list(_RIDGE_START * 10.0 ** np.arange(5))
    for delta in ridges:
        Wr = W + delta * scale * np.eye(P) if delta else W
        try:
            L = linalg.cholesky(Wr, lower=True)
        except linalg.LinAlgError:
            continue
        if np.min(np.diag(L)) <= 0:
            continue
        break
    else:
        raise ConditioningError(
            f"constraint matrix is not positive definite even with ridge {_RIDGE_STOP:g}; "
            f"smallest eigenvalue {np.linalg.eigvalsh(W)[0]:.3e}"
        )
    C = linalg.solve_triangular(L, A, lower=True)
    C = linalg.solve_triangular(L, C.T, lower=True)
    C = 0.5 * (C + C.T)
    lam, V = np.linalg.eigh(C)
    lam, V = lam[::-1].copy(), V[:, ::-1]
    Q = linalg.solve_triangular(L.T, V, lower=False)
    Q = fix_signs(Q)
    return EigenReport(lam, Q, constraint, tuple(param_labels), None, A, Wr,
                       {"ridge": float(delta * scale)})


def summary_index(report: EigenReport) -> np.ndarray:
    """Per-parameter importance ``s_j^2 = sum_i lambda_i q_ji^2``.

    For an orthonormal decomposition this is the diagonal of the moment matrix.
    """
    return _summary(report.eigenvalues, report.eigenvectors)


def reparameterize(M, J) -> np.ndarray:
    """Moment matrix in new parameters theta given ``J[j, i] = d b_j / d theta_i``."""
    M = np.asarray(M, dtype=float)
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != M.shape[0] or M.shape[0] != M.shape[1]:
        raise ConfigError(f"cannot reparameterise {M.shape} matrix with Jacobian {J.shape}")
    if not np.all(np.isfinite(J)):
        raise ConfigError("Jacobian has non-finite entries")
    out = J.T @ M @ J
    return 0.5 * (out + out.T)
