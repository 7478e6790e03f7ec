"""Write a SpectralReport as report.json, two CSV tables and a gnuplot script."""

from dataclasses import asdict
import csv
import json
import os

import numpy as np

SCHEMA_VERSION = 1

DELTA_COLUMNS = ["eps", "delta_a_norm", "delta_a_adj", "delta_b1", "delta_b2", "delta_c1",
                 "delta_c2", "delta_d", "delta_max", "resolvent_defect", "seven_delta_bound",
                 "hausdorff"]
SPECTRA_COLUMNS = ["eps", "index", "lambda_perturbed", "lambda_limit", "transfer_error"]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def report_dict(report):
    return _plain({
        "schema": SCHEMA_VERSION,
        "name": report.config.get("name"),
        "passed": report.passed,
        "config": report.config,
        "environment": report.environment,
        "fit": report.fit,
        "checks": [asdict(c) for c in report.checks],
        "results": report.results,
    })


def delta_rows(report):
    rows = []
    for r in report.results:
        d = r.get("delta", {})
        defect = r.get("defect", {})
        rows.append([r["eps"]] + [d.get(k) for k in
                                  ("a_norm", "a_adj", "b1", "b2", "c1", "c2", "d", "max")]
                    + [defect.get("resolvent"), defect.get("seven_delta_bound"),
                       r.get("hausdorff")])
    return rows


def spectra_rows(report):
    rows = []
    for r in report.results:
        if "spectra" not in r:
            continue
        errors = {t["index"]: t["transfer_error"] for t in r.get("transfer", [])}
        lim, per = r["spectra"]["limit"], r["spectra"]["perturbed"]
        for j in range(min(len(lim), len(per))):
            rows.append([r["eps"], j + 1, per[j], lim[j], errors.get(j)])
    return rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set logscale xy
set xlabel 'eps'
set terminal pngcairo size 900,600
set output 'deltas.png'
plot 'deltas.csv' using 1:9 with linespoints title 'delta max', \\
     '' using 1:10 with linespoints title 'resolvent defect', \\
     '' using 1:11 with lines dashtype 2 title '7 delta'
set output 'spectra.png'
unset logscale y
set ylabel 'eigenvalue'
plot 'spectra.csv' using 1:3 with points title 'perturbed', \\
     '' using 1:4 with points pointtype 6 title 'limit'
"""


def write_report(report, out_dir):
    """Write the four report files; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name)
             for name in ("report.json", "spectra.csv", "deltas.csv", "plots.gp")}
    with open(paths["report.json"], "w") as fh:
        json.dump(report_dict(report), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    _write_csv(paths["deltas.csv"], DELTA_COLUMNS, delta_rows(report))
    _write_csv(paths["spectra.csv"], SPECTRA_COLUMNS, spectra_rows(report))
    with open(paths["plots.gp"], "w") as fh:
        fh.write(GNUPLOT)
    return paths
