"""Report assembly and canonical serialization.

Reports are self-describing: the fully resolved configuration and seed are
embedded, no timestamps or environment state, and serialization is
canonical (sorted keys, NaN mapped to null), so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import json
import math

import numpy as np

SCHEMA_VERSION = 1


def canonical_json(payload: dict) -> str:
    return json.dumps(_plain(payload), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(canonical_json(payload))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def group_cells(dataset, exposure_vector) -> dict:
    """Mean outcome and sizes by (exposure, treatment) cell.

    Cluster counts are included when clusters exist, mirroring how grouped
    experiments are usually tabulated.
    """
    cells = {}
    for w_val in (1, 0):
        for x_val in (1, 0):
            mask = (exposure_vector == w_val) & (dataset.treatment == x_val)
            cell = {
                "n_units": int(mask.sum()),
                "mean_outcome": float(dataset.outcome[mask].mean()) if mask.any() else None,
            }
            if dataset.cluster_of is not None:
                cell["n_clusters"] = int(len(np.unique(dataset.cluster_of[mask]))) if mask.any() else 0
            cells[f"w{w_val}_x{x_val}"] = cell
    return cells


def estimate_report(
    dataset,
    config: dict,
    exposure_vector,
    point: dict,
    bounds: list,
    propensity_summary: dict,
    moment_summary: dict,
) -> dict:
    from . import __version__

    return {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate",
        "package_version": __version__,
        "seed": config["seed"],
        "config": config,
        "data": dataset.summary(),
        "group_cells": group_cells(dataset, exposure_vector),
        "point_estimate": point,
        "bounds": bounds,
        "propensity": propensity_summary,
        "moments": moment_summary,
    }


def simulation_report(sim_report, threads: int) -> dict:
    from . import __version__

    return {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "package_version": __version__,
        "kind": sim_report.kind,
        "config": sim_report.config,
        "threads": threads,
        "rows": sim_report.rows,
    }


def write_rows_csv(rows: list, path) -> None:
    """Flat CSV for summary tables; column set is the union over rows."""
    cols: list = []
    for row in rows:
        for key in row:
            if key not in cols:
                cols.append(key)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fields = []
            for key in cols:
                v = row.get(key)
                if v is None:
                    fields.append("")
                elif isinstance(v, float):
                    fields.append(repr(v))
                else:
                    fields.append(str(v))
            fh.write(",".join(fields) + "\n")


def write_propensity_csv(dataset, table, path) -> None:
    """Audit dump; one row per unit with provenance and Monte Carlo errors."""
    with open(path, "w") as fh:
        fh.write("unit_id,p_w1_given_x0,p_w1_given_x1,method,std_error\n")
        for k, uid in enumerate(dataset.unit_ids):
            method = table.method[k]
            if method == "monte_carlo":
                se = repr(float(np.nanmax(table.std_error[k])))
            else:
                se = ""
            fh.write(
                f"{uid},{repr(float(table.p[k, 0]))},{repr(float(table.p[k, 1]))},"
                f"{method},{se}\n"
            )


def write_moment_csv(q: np.ndarray, path) -> None:
    np.savetxt(path, q, delimiter=",", fmt="%.17g")
