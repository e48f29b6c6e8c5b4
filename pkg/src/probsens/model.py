"""Deterministic models y = h(x) and the built-in test problems.

A :class:`ModelSpec` wraps a vectorised map from an ``(n, d)`` input matrix to
an ``(n, m)`` output matrix. Models with an internal error term declare
``n_noise`` standard-normal variates per sample; the caller draws them from a
dedicated stream and passes them in, so evaluation itself stays pure.
"""
from __future__ import annotations

import math
import shlex
import subprocess
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, linalg

from .errors import ConfigError, DecompositionError, EvaluationError

__all__ = [
    "ModelSpec",
    "EigenSystemSpec",
    "ModalSolution",
    "eval_decreasing_coeff",
    "eval_roos_arnold",
    "eval_cantilever",
    "eval_eigensystem",
    "decreasing_coeff",
    "roos_arnold",
    "identity",
    "linear",
    "cantilever",
    "load_capacity",
    "spring_mass_chain",
    "eigensystem_model",
    "external",
    "BUILTIN_MODELS",
]


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_dim: int
    output_names: tuple[str, ...]
    fn: Callable[[np.ndarray, np.ndarray | None], np.ndarray] = field(repr=False)
    n_noise: int = 0

    @property
    def output_dim(self) -> int:
        return len(self.output_names)

    def output_index(self, key: int | str) -> int:
        if isinstance(key, str):
            try:
                return self.output_names.index(key)
            except ValueError:
                raise ConfigError(f"model {self.name!r} has no output {key!r}") from None
        if not 0 <= key < self.output_dim:
            raise ConfigError(f"model {self.name!r} has no output index {key}")
        return int(key)

    def evaluate(self, x, noise=None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.input_dim:
            raise ConfigError(
                f"model {self.name!r} expects {self.input_dim} inputs, got {x.shape[1]}"
            )
        if self.n_noise:
            if noise is None:
                noise = np.zeros((x.shape[0], self.n_noise))
            noise = np.asarray(noise, dtype=float).reshape(x.shape[0], self.n_noise)
        y = np.asarray(self.fn(x, noise), dtype=float).reshape(x.shape[0], -1)
        if y.shape[1] != self.output_dim:
            raise EvaluationError(
                f"model {self.name!r} returned {y.shape[1]} outputs, expected {self.output_dim}"
            )
        return y


# --- screening benchmarks ---------------------------------------------------

DECREASING_COEFFS = 0.2 / 2.0 ** np.arange(8)
DECREASING_NOISE_STD = 0.05


def eval_decreasing_coeff(x, noise: float = 0.0) -> float:
    """Linear screening function with coefficients 0.2 / 2**(i-1) plus error ``noise``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (8,):
        raise ConfigError(f"decreasing-coefficient function takes 8 inputs, got shape {x.shape}")
    return float(DECREASING_COEFFS @ x + noise)


def eval_roos_arnold(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 1:
        raise ConfigError("Roos & Arnold function takes a non-empty vector")
    return float(np.prod(np.abs(4.0 * x - 2.0)))


def decreasing_coeff() -> ModelSpec:
    def fn(x, noise):
        return x @ DECREASING_COEFFS + DECREASING_NOISE_STD * noise[:, 0]

    return ModelSpec("decreasing_coeff", 8, ("y",), fn, n_noise=1)


def roos_arnold(d: int = 5) -> ModelSpec:
    if d < 1:
        raise ConfigError(f"Roos & Arnold dimension must be >= 1, got {d}")
    return ModelSpec("roos_arnold", d, ("y",), lambda x, _: np.prod(np.abs(4.0 * x - 2.0), axis=1))


def identity(d: int = 1) -> ModelSpec:
    names = ("y",) if d == 1 else tuple(f"y{i + 1}" for i in range(d))
    return ModelSpec("identity", d, names, lambda x, _: x.copy())


def linear(coeffs: Sequence[float], noise_std: float = 0.0) -> ModelSpec:
    """y = coeffs . x (+ noise_std * e)."""
    a = np.asarray(coeffs, dtype=float)
    if noise_std:
        return ModelSpec("linear", a.size, ("y",), lambda x, e: x @ a + noise_std * e[:, 0], n_noise=1)
    return ModelSpec("linear", a.size, ("y",), lambda x, _: x @ a)


def load_capacity() -> ModelSpec:
    """Two loads against one capacity.

    Inputs ``(load1, load2, capacity)``; outputs the structural ``response``
    ``load1 + load2`` and the ``margin`` ``response - capacity``. The response
    density does not depend on the capacity parameters, which makes the
    Fisher-constrained failure sensitivity differ sharply from the plain one.
    """

    def fn(x, _):
        resp = x[:, 0] + x[:, 1]
        return np.column_stack([resp, resp - x[:, 2]])

    return ModelSpec("load_capacity", 3, ("response", "margin"), fn)


# --- cantilever beam -----------------------------------------------------------

# First clamped-free root of cos(bL) cosh(bL) = -1.
BETA1_L = 1.8751040687119611


def _first_mode(xi):
    b = BETA1_L
    sig = (math.cosh(b) + math.cos(b)) / (math.sinh(b) + math.sin(b))
    phi = np.cosh(b * xi) - np.cos(b * xi) - sig * (np.sinh(b * xi) - np.sin(b * xi))
    # curvature per unit (b/L)^2
    curv = np.cosh(b * xi) + np.cos(b * xi) - sig * (np.sinh(b * xi) + np.sin(b * xi))
    return phi, curv


@dataclass(frozen=True)
class _CantileverConstants:
    stations: np.ndarray
    phi: np.ndarray
    curv: np.ndarray
    phi_sq_int: float
    phi_int: float
    disp_int: float
    accel_int: float


def _cantilever_constants(damping, n_stations, n_freq, span):
    xi = np.linspace(0.0, 1.0, n_stations)
    phi, curv = _first_mode(xi)
    fine = np.linspace(0.0, 1.0, 20001)
    phi_f, _ = _first_mode(fine)
    s = np.linspace(span[0], span[1], n_freq)
    # modal receptance on the normalised grid s = omega / omega_1
    h2 = 1.0 / ((1.0 - s**2) ** 2 + (2.0 * damping * s) ** 2)
    return _CantileverConstants(
        stations=xi,
        phi=phi,
        curv=curv,
        phi_sq_int=float(integrate.trapezoid(phi_f**2, fine)),
        phi_int=float(integrate.trapezoid(phi_f, fine)),
        disp_int=float(integrate.trapezoid(h2, s)),
        accel_int=float(integrate.trapezoid(s**4 * h2, s)),
    )


def _cantilever_batch(x, c: _CantileverConstants, force: float, excitation: str):
    E, rho, L, w, t = (x[:, k] for k in range(5))
    if np.any(x <= 0):
        bad = int(np.flatnonzero(np.any(x <= 0, axis=1))[0])
        raise EvaluationError(f"cantilever inputs must be strictly positive (sample {bad})")
    area = w * t
    inertia = w * t**3 / 12.0
    omega1 = BETA1_L**2 * np.sqrt(E * inertia / (rho * area * L**4))
    modal_mass = rho * area * L * c.phi_sq_int
    if excitation == "tip":
        modal_force = force * c.phi[-1] * np.ones_like(L)
    else:
        modal_force = force * L * c.phi_int
    # |q(omega)|^2 = (Q/m)^2 |1/(w1^2 (1 - s^2 + 2i zeta s))|^2, d omega = w1 ds
    q_scale = modal_force / (modal_mass * omega1**2)
    q_rms = q_scale * np.sqrt(omega1 * c.disp_int)
    acc_rms = q_scale * omega1**2 * np.sqrt(omega1 * c.accel_int)
    peak_acc = acc_rms * np.max(np.abs(c.phi))
    strain_per_q = 0.5 * t * (BETA1_L / L) ** 2
    peak_strain = q_rms * strain_per_q * np.max(np.abs(c.curv))
    return np.column_stack([peak_acc, peak_strain])


def eval_cantilever(x, force: float = 1.0, damping: float = 0.1, n_stations: int = 41,
                    n_freq: int = 1024, excitation: str = "tip") -> tuple[float, float]:
    """Peak r.m.s. acceleration and surface strain of a cantilever under white noise.

    Inputs are (E, rho, L, w, t). Only the first Euler-Bernoulli bending mode
    is kept. A white-noise force with flat unit spectrum (scaled by ``force``)
    acts at the free end (``excitation="tip"``) or is spread uniformly over
    the span (``excitation="distributed"``); r.m.s. values are integrated over
    ``omega in [0.2, 5] * omega_1`` and maximised over ``n_stations`` points
    along the span.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (5,):
        raise ConfigError(f"cantilever takes (E, rho, L, w, t), got shape {x.shape}")
    c = _cantilever_constants(damping, n_stations, n_freq, (0.2, 5.0))
    acc, strain = _cantilever_batch(x[None, :], c, force, _check_excitation(excitation))[0]
    return float(acc), float(strain)


def _check_excitation(excitation):
    if excitation not in ("tip", "distributed"):
        raise ConfigError(f"cantilever excitation must be 'tip' or 'distributed', got {excitation!r}")
    return excitation


def cantilever(force: float = 1.0, damping: float = 0.1, n_stations: int = 41,
               n_freq: int = 1024, excitation: str = "tip") -> ModelSpec:
    if n_stations < 20 or n_freq < 512:
        raise ConfigError("cantilever needs >= 20 stations and >= 512 frequency points")
    if not damping > 0:
        raise ConfigError(f"cantilever damping must be > 0, got {damping}")
    _check_excitation(excitation)
    c = _cantilever_constants(damping, n_stations, n_freq, (0.2, 5.0))
    return ModelSpec("cantilever", 5, ("peak_rms_accel", "peak_rms_strain"),
                     lambda x, _: _cantilever_batch(x, c, force, excitation))


# --- discrete eigensystems ---------------------------------------------------------


@dataclass(frozen=True)
class EigenSystemSpec:
    """Parameterised stiffness/mass pair ``K(b)``, ``M(b)``.

    ``d_stiffness(b, j)`` / ``d_mass(b, j)`` may supply exact matrix
    derivatives; otherwise finite differences are used downstream.
    """

    stiffness: Callable[[np.ndarray], np.ndarray]
    mass: Callable[[np.ndarray], np.ndarray]
    param_names: tuple[str, ...]
    d_stiffness: Callable[[np.ndarray, int], np.ndarray] | None = None
    d_mass: Callable[[np.ndarray, int], np.ndarray] | None = None

    def matrices(self, b) -> tuple[np.ndarray, np.ndarray]:
        b = np.asarray(b, dtype=float)
        if b.shape != (len(self.param_names),):
            raise ConfigError(f"expected {len(self.param_names)} parameters, got shape {b.shape}")
        return np.asarray(self.stiffness(b), dtype=float), np.asarray(self.mass(b), dtype=float)


@dataclass(frozen=True)
class ModalSolution:
    omega: np.ndarray
    phi: np.ndarray  # columns mass-normalised, phi.T M phi = I


def _solve_modes(K, M) -> ModalSolution:
    if not (np.allclose(K, K.T, rtol=1e-12, atol=0) and np.allclose(M, M.T, rtol=1e-12, atol=0)):
        raise DecompositionError("stiffness and mass matrices must be symmetric")
    try:
        lam, phi = linalg.eigh(K, M)
    except linalg.LinAlgError as exc:
        raise DecompositionError(f"mass matrix is not positive definite: {exc}") from exc
    if np.any(lam < 0):
        raise DecompositionError(f"negative eigenvalue {lam.min():.3e}: stiffness is indefinite")
    return ModalSolution(np.sqrt(lam), phi)


def eval_eigensystem(spec: EigenSystemSpec, b) -> ModalSolution:
    """Natural frequencies (rad/s, ascending) of ``K phi = omega^2 M phi``."""
    K, M = spec.matrices(b)
    return _solve_modes(K, M)


def spring_mass_chain(n: int = 2) -> EigenSystemSpec:
    """Fixed-free chain: parameters ``k1..kn`` (springs) then ``m1..mn`` (masses).

    With all parameters equal to one and ``n = 2`` this gives
    ``K = [[2, -1], [-1, 1]]``, ``M = I``.
    """

    def stiffness(b):
        k = b[:n]
        K = np.zeros((n, n))
        for i in range(n):
            K[i, i] += k[i]
            if i > 0:
                K[i - 1, i - 1] += k[i]
                K[i - 1, i] -= k[i]
                K[i, i - 1] -= k[i]
        return K

    def d_stiffness(b, j):
        e = np.zeros(2 * n)
        e[j] = 1.0
        return stiffness(e) if j < n else np.zeros((n, n))

    def d_mass(b, j):
        D = np.zeros((n, n))
        if j >= n:
            D[j - n, j - n] = 1.0
        return D

    names = tuple(f"k{i + 1}" for i in range(n)) + tuple(f"m{i + 1}" for i in range(n))
    return EigenSystemSpec(stiffness, lambda b: np.diag(b[n:]), names, d_stiffness, d_mass)


def eigensystem_model(spec: EigenSystemSpec, modes: Sequence[int] = (0,)) -> ModelSpec:
    """Model mapping a parameter vector to the selected natural frequencies."""
    modes = tuple(int(m) for m in modes)

    def fn(x, _):
        n = x.shape[0]
        Ks = np.empty((n,) + spec.matrices(x[0])[0].shape)
        Ms = np.empty_like(Ks)
        for i in range(n):
            Ks[i], Ms[i] = spec.matrices(x[i])
        try:
            L = np.linalg.cholesky(Ms)
        except np.linalg.LinAlgError as exc:
            raise DecompositionError(f"mass matrix not positive definite: {exc}") from exc
        A = np.linalg.solve(L, Ks)
        A = np.linalg.solve(L, np.swapaxes(A, 1, 2))
        A = 0.5 * (A + np.swapaxes(A, 1, 2))
        lam = np.linalg.eigvalsh(A)
        if np.any(lam[:, modes] < 0):
            raise EvaluationError("negative squared frequency encountered")
        return np.sqrt(lam[:, modes])

    return ModelSpec("eigensystem", len(spec.param_names), tuple(f"omega{m + 1}" for m in modes), fn)


# --- external executables -------------------------------------------------------


def external(command: str | Sequence[str], input_dim: int, output_names: Sequence[str],
             timeout: float | None = None) -> ModelSpec:
    """Adapter for an external executable speaking the line protocol.

    The whole batch is written to the process's stdin, one input vector per
    line as whitespace-separated decimals; the process must write one output
    vector per line, in the same order, to stdout.
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    output_names = tuple(output_names)

    def fn(x, _):
        payload = "\n".join(" ".join(f"{v:.17g}" for v in row) for row in x) + "\n"
        try:
            proc = subprocess.run(argv, input=payload, capture_output=True, text=True,
                                  timeout=timeout, check=False)
        except OSError as exc:
            raise EvaluationError(f"cannot run external model {argv[0]!r}: {exc}") from exc
        if proc.returncode != 0:
            raise EvaluationError(
                f"external model exited with {proc.returncode}: {proc.stderr.strip()[:200]}"
            )
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != x.shape[0]:
            raise EvaluationError(f"external model returned {len(lines)} records for {x.shape[0]} inputs")
        try:
            return np.array([[float(t) for t in ln.split()] for ln in lines])
        except ValueError as exc:
            raise EvaluationError(f"unparseable external model output: {exc}") from exc

    return ModelSpec("external", int(input_dim), output_names, fn)


BUILTIN_MODELS = {
    "decreasing_coeff": decreasing_coeff,
    "roos_arnold": roos_arnold,
    "identity": identity,
    "linear": linear,
    "cantilever": cantilever,
    "load_capacity": load_capacity,
}
