"""Write a :class:`~probsens.pipeline.RunReport` to disk.

Files: ``report.json`` (everything), ``eigvecs.csv`` (parameters x
eigenvectors), ``spectrum.csv`` (eigenvalue vs index, per sample size) and
``summary.csv`` (summary index per parameter). CSVs are UTF-8 with a header
row and 17 significant digits, so every value round-trips exactly.
"""
from __future__ import annotations

import csv
from pathlib import Path

from .errors import SensitivityError

__all__ = ["emit", "fmt", "FILES"]

FILES = ("report.json", "eigvecs.csv", "spectrum.csv", "summary.csv")


class EmitError(SensitivityError, OSError):
    pass


def fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit(report, directory) -> list[Path]:
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
        paths = [d / f for f in FILES]
        paths[0].write_text(report.to_json(), encoding="utf-8")

        params = report.parameters
        analyses = report.data["analyses"]
        header = ["parameter"]
        cols = []
        for name in sorted(analyses):
            Q = analyses[name]["eigenvectors"]["mean"]
            k = len(Q[0]) if Q else 0
            header += [f"{name}_q{i + 1}" for i in range(k)]
            cols.append((Q, k))
        rows = []
        for j, p in enumerate(params):
            row = [p]
            for Q, k in cols:
                row += [fmt(Q[j][i]) for i in range(k)]
            rows.append(row)
        _write_csv(paths[1], header, rows)

        rows = []
        for entry in report.data["convergence"]:
            std = entry["std"] or [None] * len(entry["eigenvalues"])
            for i, (lam, s) in enumerate(zip(entry["eigenvalues"], std)):
                rows.append([entry["analysis"], entry["n"], i + 1, fmt(lam), fmt(s)])
        _write_csv(paths[2], ["analysis", "n", "index", "eigenvalue", "std"], rows)

        rows = []
        for name in sorted(analyses):
            summ = analyses[name]["summary"]
            if summ is None:
                continue
            for p, m, s in zip(params, summ["mean"], summ["std"]):
                rows.append([name, p, fmt(m), fmt(s)])
        _write_csv(paths[3], ["analysis", "parameter", "s2", "std"], rows)
    except OSError as exc:
        raise EmitError(f"cannot write report to {exc.filename or d}: {exc.strerror or exc}") from exc
    return paths
