"""Acceptance checks for the library's headline behaviour.

Each test records one ``PASS``/``FAIL`` line, printed in the terminal summary
of every pytest run that collects this module, and asserts the same condition.
"""
import math
import sys
import time

import numpy as np
import pytest
from scipy import linalg, stats

from probsens.analytic import delta_limit_check, freq_sensitivity
from probsens.config import parse_config
from probsens.dist import Gaussian, InputModel
from probsens.eig import solve_generalized, solve_standard, summary_index
from probsens.estimator import FailureProb, estimate_utility, run_batch
from probsens.fisher import fisher_matrix, kl_quadratic
from probsens.model import EigenSystemSpec, identity, spring_mass_chain
from probsens.pipeline import run

pytestmark = pytest.mark.slow


VERDICTS: list[str] = []


def verdict(num, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def gaussians(names, mean=0.0, std=1.0):
    return [{"names": list(names), "kind": "gaussian", "mean": mean, "std": std}]


def per_variable(summary, n_vars):
    """Sum the summary index over each variable's (mean, std) parameters."""
    return np.asarray(summary).reshape(n_vars, 2).sum(axis=1)


# ---------------------------------------------------------------- benchmarks

_cache = {}


def decreasing_coeff_run():
    if "dc" not in _cache:
        raw = {"model": {"name": "decreasing_coeff"},
               "marginals": gaussians([f"x{i}" for i in range(1, 9)]),
               "analysis": {"kind": "fisher", "n": 20000, "seed": 2024, "repetitions": 10}}
        t0 = time.perf_counter()
        rep = run(parse_config(raw))
        _cache["dc"] = (rep, time.perf_counter() - t0)
    return _cache["dc"]


def test_c01_decreasing_coefficient_eigenvector_ratios():
    rep, elapsed = decreasing_coeff_run()
    Q = rep.eigenvectors("fisher")
    means, stds = Q[0::2, :2], Q[1::2, :2]
    q1_std = stds[:3, 0] / stds[0, 0]
    k = int(np.argmax(np.linalg.norm(means, axis=0)))  # mean-dominated direction among the top two
    q_mean = means[:3, k] / means[0, k]
    ok = (np.all(np.abs(q1_std - [1, 0.236, 0.065]) <= 0.05)
          and np.all(np.abs(q_mean - [1, 0.496, 0.260]) <= 0.06) and elapsed < 60)
    verdict(1, ok, f"std ratios {np.round(q1_std, 3)}, mean ratios {np.round(q_mean, 3)} "
                   f"(q{k + 1}), {elapsed:.1f}s")


def test_c02_decreasing_coefficient_ranking():
    rep, _ = decreasing_coeff_run()
    s = per_variable(rep.summary("fisher"), 8)
    ok = s[:3].min() > s[3:].max()
    verdict(2, ok, f"per-variable s^2 {np.round(s, 4)}")


def test_c03_roos_arnold():
    raw = {"model": {"name": "roos_arnold", "d": 5},
           "marginals": gaussians([f"x{i}" for i in range(1, 6)]),
           "analysis": {"kind": "fisher", "n": 20000, "seed": 7, "repetitions": 10}}
    rep = run(parse_config(raw))
    lam = rep.eigenvalues("fisher")
    s = per_variable(rep.summary("fisher"), 5)
    spread = (s.max() - s.min()) / s.mean()
    ok = lam[0] / lam[1] > 5 and spread < 0.2
    verdict(3, ok, f"lambda1/lambda2 = {lam[0] / lam[1]:.2f}, summary spread = {spread:.3f}")


# ---------------------------------------------------------------- oracles

def identity_batch(n, seed):
    return run_batch(InputModel([Gaussian("x", 0.0, 1.0)]), identity(1), n, seed)


def test_c04_fisher_gaussian_oracle():
    F = fisher_matrix(identity_batch(20000, 11)).matrix
    target = np.diag([1.0, 2.0])
    ok = np.all(np.abs(np.diag(F) - np.diag(target)) <= 0.1 * np.diag(target)) and abs(F[0, 1]) <= 0.1
    verdict(4, ok, f"F = {np.round(F, 4).tolist()} vs diag(1, 2)")


def gauss_kl(m1, s1, m2, s2):
    """KL[N(m1, s1^2) || N(m2, s2^2)]."""
    return math.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5


def test_c05_kl_consistency():
    # Narrow fixed bandwidth and ten pooled repetitions, so that the Fisher
    # estimate (not kernel smoothing bias) is what gets compared.
    raw = {"model": {"name": "identity"}, "marginals": gaussians(["x"]),
           "kde": {"bandwidth": [0.06]},
           "analysis": {"kind": "fisher", "n": 20000, "seed": 12, "repetitions": 10}}
    F = np.asarray(run(parse_config(raw)).analysis("fisher")["pooled"]["matrix"])
    quad = kl_quadratic(F, [0.1, 0.05])
    exact = gauss_kl(0.1, 1.05, 0.0, 1.0)      # perturbed relative to nominal
    other = gauss_kl(0.0, 1.0, 0.1, 1.05)      # nominal relative to perturbed
    rel = abs(quad - exact) / exact
    ok = rel < 0.05
    verdict(5, ok, f"0.5 db'F db = {quad:.5f}, KL[p(b+db)||p(b)] = {exact:.5f} (rel {rel:.3f}); "
                   f"KL[p(b)||p(b+db)] = {other:.5f} (rel {abs(quad - other) / other:.3f})")


def test_c06_failure_probability_gradient():
    est = estimate_utility(identity_batch(200000, 13), FailureProb(0, 1.0))
    g, se = est.gradient[0], est.gradient_se[0]
    ok = abs(g - stats.norm.pdf(1.0)) < 3 * se
    verdict(6, ok, f"dPf/dmu = {g:.4f} +/- {se:.4f} vs phi(1) = {stats.norm.pdf(1.0):.4f}")


def test_c07_summary_index_identity():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        p = int(rng.integers(1, 10))
        A = rng.normal(size=(p, int(rng.integers(1, p + 1))))
        M = A @ A.T
        worst = max(worst, np.abs(summary_index(solve_standard(M)) - np.diag(M)).max())
    verdict(7, worst <= 1e-10, f"max |s^2 - diag(M)| = {worst:.2e} over 100 matrices")


def _random_linear_system(rng, p):
    Ks = [(lambda a: a @ a.T + 0.1 * np.eye(p))(rng.normal(size=(p, p))) for _ in range(p)]
    Ms = [np.diag(rng.uniform(0.2, 1.0, p)) for _ in range(p)]
    spec = EigenSystemSpec(lambda b: sum(x * K for x, K in zip(b, Ks)),
                           lambda b: np.eye(p) + sum(x * Mi for x, Mi in zip(b, Ms)),
                           tuple(f"b{j}" for j in range(p)))
    return spec, rng.uniform(0.5, 2.0, p)


def test_c08_frequency_sensitivity_oracle():
    rng = np.random.default_rng(8)
    worst = 0.0
    scale_err = 0.0
    for _ in range(20):
        p = int(rng.integers(2, 5))
        spec, b = _random_linear_system(rng, p)
        omega = lambda bb, m: math.sqrt(linalg.eigh(*spec.matrices(bb), eigvals_only=True)[m])
        for mode in range(p):
            fs = freq_sensitivity(spec, b, mode)
            for j in range(p):
                h = 1e-5 * b[j]
                bp, bm = b.copy(), b.copy()
                bp[j] += h
                bm[j] -= h
                fd = (omega(bp, mode) - omega(bm, mode)) / (2 * h)
                worst = max(worst, abs(fs.domega[j] - fd) / max(abs(fd), 1e-12 * fs.omega))
        K0, M0 = spec.matrices(b)
        scaled = EigenSystemSpec(lambda s: s[0] * K0, lambda s: M0, ("scale",))
        for mode in range(p):
            scale_err = max(scale_err, abs(freq_sensitivity(scaled, np.array([1.0]), mode).normalized[0] - 0.5))
    ok = worst < 1e-5 and scale_err < 1e-8
    verdict(8, ok, f"max rel error vs finite differences {worst:.2e}; stiffness-scale deviation {scale_err:.1e}")


def test_c09_delta_limit():
    chain = spring_mass_chain(2)
    results = [delta_limit_check(chain, np.ones(4), mode, cov=1e-4, n=20000, seed=9) for mode in (0, 1)]
    ok = all(r.cosine > 0.99 and r.sign_match for r in results)
    verdict(9, ok, "cosines " + ", ".join(f"mode {m + 1}: {r.cosine:.6f} (signs {'ok' if r.sign_match else 'differ'})"
                                          for m, r in enumerate(results)))


def test_c10_generalized_eigenproblem():
    rng = np.random.default_rng(10)
    A = (lambda a: a @ a.T)(rng.normal(size=(6, 6)))
    s, g = solve_standard(A), solve_generalized(A, np.eye(6))
    err_id = max(np.abs(s.eigenvalues - g.eigenvalues).max(), np.abs(s.eigenvectors - g.eigenvectors).max())
    a = rng.normal(size=5)
    W = (lambda m: m @ m.T + 5 * np.eye(5))(rng.normal(size=(5, 5)))
    lam1 = a @ np.linalg.solve(W, a)
    err_r1 = abs(solve_generalized(np.outer(a, a), W).eigenvalues[0] - lam1) / lam1

    raw = {"model": {"name": "load_capacity"},
           "marginals": [{"names": ["load1", "load2"], "kind": "gaussian", "mean": 1.0, "std": 0.2},
                         {"name": "capacity", "kind": "gaussian", "mean": 3.0, "std": 0.3}],
           "utilities": [{"kind": "failure", "output": "margin", "threshold": 0.0, "label": "pf_margin"},
                         {"kind": "failure", "output": "response", "threshold": 2.5, "label": "pf_response"}],
           "kde": {"outputs": ["response"]},
           "analysis": {"kind": "generalized_failure_vs_fisher", "n": 20000, "seed": 3, "repetitions": 1,
                        "normalization": "proportional"}}
    rep = run(parse_config(raw))
    q_std = rep.eigenvectors("standard")[:, 0]
    q_con = rep.eigenvectors("constrained")[:, 0]
    cos = abs(q_std @ q_con) / (np.linalg.norm(q_std) * np.linalg.norm(q_con))
    ok = err_id <= 1e-10 and err_r1 <= 1e-10 and cos < 0.99
    verdict(10, ok, f"W=I deviation {err_id:.1e}; rank-1 rel error {err_r1:.1e}; "
                    f"constrained vs standard q1 cosine {cos:.3f}")


def test_c11_cantilever():
    props = {"E": 69e9, "rho": 2700.0, "L": 0.45, "w": 0.02, "t": 0.002}
    marg = [{"name": k, "kind": "gaussian", "mean": v, "cov": 0.1} for k, v in props.items()]
    base = {"model": {"name": "cantilever", "normalize_outputs": True}, "marginals": marg}
    both = [{"kind": "moment", "output": "peak_rms_accel", "label": "acc"},
            {"kind": "moment", "output": "peak_rms_strain", "label": "strain"}]
    common = {"n": 20000, "seed": 11, "repetitions": 10, "normalization": "proportional"}
    omega = run(parse_config(base | {"utilities": both, "analysis": {"kind": "utility_eigen", **common}}))
    fim = run(parse_config(base | {"analysis": {"kind": "fisher", **common}}))
    single = run(parse_config(base | {"utilities": both[:1],
                                      "analysis": {"kind": "utility_eigen", **common, "repetitions": 1}}))
    names = list(props)
    s_om = per_variable(omega.summary("utility"), 5)
    s_f = per_variable(fim.summary("fisher"), 5)
    top_om = {names[i] for i in np.argsort(s_om)[-2:]}
    top_f = {names[i] for i in np.argsort(s_f)[-2:]}
    lam = single.eigenvalues("utility")
    ratio = lam[1] / lam[0]
    ok = top_om == top_f and ratio < 1e-8
    verdict(11, ok, f"top-2 utility {sorted(top_om)}, top-2 Fisher {sorted(top_f)}; "
                    f"single-utility lambda2/lambda1 = {ratio:.1e}")


def test_c12_determinism_across_parallelism():
    configs = [
        {"model": {"name": "decreasing_coeff"}, "marginals": gaussians([f"x{i}" for i in range(1, 9)]),
         "analysis": {"kind": "fisher", "n": 4000, "seed": 5, "repetitions": 4, "convergence": [1000]}},
        {"model": {"name": "identity", "d": 2}, "marginals": gaussians(["a", "b"], 1.0, 0.3),
         "utilities": [{"kind": "failure", "output": 0, "threshold_dist": {"kind": "gaussian", "mean": 1.3,
                                                                             "std": 0.05}},
                       {"kind": "moment", "output": 1, "order": 2, "label": "m2"}],
         "analysis": {"kind": "utility_eigen", "n": 4000, "seed": 6, "repetitions": 3}},
    ]
    same = []
    for raw in configs:
        cfg = parse_config(raw)
        texts = {run(cfg, workers=w).to_json().encode("utf-8") for w in (1, 2, 3)}
        same.append(len(texts) == 1)
    verdict(12, all(same), f"byte-identical reports for workers 1/2/3: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
