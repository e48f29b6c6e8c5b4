"""End-to-end runs: sample -> estimate -> assemble -> eigensolve, repeated R times.

Each repetition is a pure function of ``(config, repetition index)``, so the
repetitions can be farmed out to worker processes without changing a single
bit of the result.
"""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, parse_config
from .eig import EigenReport, build_r, reparameterize, second_moment, solve_generalized, solve_standard
from .estimator import SampleBatch, estimate_all, run_batch
from .fisher import fisher_matrix

log = logging.getLogger(__name__)

__all__ = ["RunReport", "repetition_seed", "run", "run_repetition", "analyse_batch"]

REPORT_FORMAT = "probsens-report/1"
_REP_KEY = 0x72657073


def repetition_seed(master: int, rep: int) -> int:
    """Seed of repetition ``rep``, derived by hashing ``(master, rep)``."""
    ss = np.random.SeedSequence(int(master), spawn_key=(_REP_KEY, int(rep)))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def _jacobian(cfg: RunConfig) -> np.ndarray:
    pv = cfg.input_model.param_vector
    return np.diag(pv.nominals) if cfg.normalization == "proportional" else np.eye(len(pv))


def _prepare(cfg: RunConfig, batch: SampleBatch) -> SampleBatch:
    if not cfg.normalize_outputs:
        return batch
    scale = np.abs(batch.outputs).max(axis=0)
    scale[scale == 0] = 1.0
    return batch.with_outputs(batch.outputs / scale)


def analyse_batch(cfg: RunConfig, batch: SampleBatch) -> dict:
    """All moment matrices and eigen reports the configured analysis needs."""
    labels = tuple(cfg.input_model.param_vector.labels)
    nominals = cfg.input_model.param_vector.nominals
    batch = _prepare(cfg, batch)
    out = {"estimates": [], "analyses": {}, "diagnostics": {}}
    if cfg.kind in ("utility_eigen", "generalized_failure_vs_fisher"):
        est = estimate_all(batch, cfg.utilities, cfg.control_variate)
        out["estimates"] = est
        r = build_r(est, cfg.normalization, nominals, param_labels=labels)
        A = second_moment(r)
        name = "standard" if cfg.kind == "generalized_failure_vs_fisher" else "utility"
        out["analyses"][name] = solve_standard(A, labels)
    if cfg.kind in ("fisher", "generalized_failure_vs_fisher"):
        F = fisher_matrix(batch, cfg.kde)
        Fn = reparameterize(F.matrix, _jacobian(cfg))
        out["diagnostics"] = {"kde_excluded": F.n_excluded, "bandwidth": [float(h) for h in F.bandwidth]}
        if cfg.kind == "fisher":
            out["analyses"]["fisher"] = solve_standard(Fn, labels)
        else:
            out["analyses"]["constrained"] = solve_generalized(A, Fn, "fisher", labels)
    return out


def run_repetition(cfg: RunConfig, rep: int, n: int | None = None) -> dict:
    seed = repetition_seed(cfg.seed, rep)
    batch = run_batch(cfg.input_model, cfg.model, n or cfg.n, seed)
    res = analyse_batch(cfg, batch)
    res["seed"] = seed
    return res


def _worker(raw: dict, rep: int) -> dict:
    return run_repetition(parse_config(raw), rep)


def _stats(stack: np.ndarray) -> dict:
    mean = stack.mean(axis=0)
    std = stack.std(axis=0, ddof=1) if stack.shape[0] > 1 else np.zeros_like(mean)
    return {"mean": mean.tolist(), "std": std.tolist()}


def _report_dict(rep: EigenReport) -> dict:
    return {
        "eigenvalues": rep.eigenvalues.tolist(),
        "eigenvectors": rep.eigenvectors.tolist(),
        "summary": None if rep.summary is None else rep.summary.tolist(),
        "matrix": rep.matrix.tolist(),
    }


def _aggregate(name: str, reports: list[EigenReport], labels) -> dict:
    constraint = reports[0].constraint
    mats = np.stack([r.matrix for r in reports])
    pooled_matrix = mats.mean(axis=0)
    if constraint == "identity":
        pooled = solve_standard(pooled_matrix, labels)
    else:
        W = np.stack([r.weight for r in reports]).mean(axis=0)
        pooled = solve_generalized(pooled_matrix, W, constraint, labels)
    entry = {
        "constraint": constraint,
        "eigenvalues": _stats(np.stack([r.eigenvalues for r in reports])),
        "eigenvectors": _stats(np.stack([r.eigenvectors for r in reports])),
        "summary": None,
        "pooled": _report_dict(pooled),
    }
    if constraint == "identity":
        entry["summary"] = _stats(np.stack([r.summary for r in reports]))
    else:
        entry["ridge"] = [r.provenance.get("ridge", 0.0) for r in reports]
    return entry


@dataclass(frozen=True)
class RunReport:
    data: dict

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    @property
    def parameters(self) -> list[str]:
        return self.data["parameters"]

    def analysis(self, name: str) -> dict:
        return self.data["analyses"][name]

    def eigenvectors(self, name: str) -> np.ndarray:
        return np.asarray(self.analysis(name)["eigenvectors"]["mean"])

    def eigenvalues(self, name: str) -> np.ndarray:
        return np.asarray(self.analysis(name)["eigenvalues"]["mean"])

    def summary(self, name: str) -> np.ndarray:
        return np.asarray(self.analysis(name)["summary"]["mean"])


def run(cfg: RunConfig, workers: int = 1) -> RunReport:
    """Execute all repetitions and collect a report.

    Repetition ``i`` uses seed ``repetition_seed(cfg.seed, i)``; per-entry
    means and sample standard deviations are taken across repetitions.
    ``workers`` only changes how repetitions are scheduled.
    """
    R = cfg.repetitions
    if workers > 1 and R > 1:
        with ProcessPoolExecutor(max_workers=min(workers, R)) as pool:
            results = list(pool.map(_worker, [cfg.raw] * R, range(R)))
    else:
        results = [run_repetition(cfg, i) for i in range(R)]
    labels = cfg.input_model.param_vector.labels
    names = list(results[0]["analyses"])
    analyses = {nm: _aggregate(nm, [res["analyses"][nm] for res in results], labels) for nm in names}

    utilities = []
    for k, u in enumerate(cfg.utilities):
        ests = [res["estimates"][k] for res in results]
        utilities.append({
            "label": u.label,
            "value": _stats(np.array([e.value for e in ests])),
            "value_se": float(np.mean([e.value_se for e in ests])),
            "gradient": _stats(np.stack([e.gradient for e in ests])),
            "gradient_se": np.mean([e.gradient_se for e in ests], axis=0).tolist(),
        })

    convergence = []
    for n_c in cfg.convergence:
        res = run_repetition(cfg, 0, n_c)
        for nm in names:
            convergence.append({"analysis": nm, "n": n_c, "eigenvalues": res["analyses"][nm].eigenvalues.tolist(),
                                "std": None})
    for nm in names:
        ev = analyses[nm]["eigenvalues"]
        convergence.append({"analysis": nm, "n": cfg.n, "eigenvalues": ev["mean"], "std": ev["std"]})

    data = {
        "format": REPORT_FORMAT,
        "config": cfg.canonical,
        "config_hash": cfg.hash,
        "kind": cfg.kind,
        "model": cfg.model.name,
        "n": cfg.n,
        "seed": cfg.seed,
        "repetitions": R,
        "repetition_seeds": [res["seed"] for res in results],
        "normalization": cfg.normalization,
        "parameters": list(labels),
        "analyses": analyses,
        "utilities": utilities,
        "convergence": convergence,
        "diagnostics": {
            "kde_excluded": [res["diagnostics"].get("kde_excluded") for res in results],
            "bandwidth": [res["diagnostics"].get("bandwidth") for res in results],
        },
    }
    log.info("run finished: kind=%s n=%d R=%d", cfg.kind, cfg.n, R)
    return RunReport(data)
