"""CSV / YAML ingestion and validation for the command-line tool."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml

from .design import Design
from .exposure import ExposureSpec
from .graph import AdjacencyGraph, build_graph
from .interval import SolverConfig
from .propensity import MomentBudget


class InputError(ValueError):
    """Malformed input files or configuration; maps to exit code 2."""


@dataclass
class Dataset:
    """Validated experiment data with a dense unit index."""

    unit_ids: list
    treatment: np.ndarray
    outcome: np.ndarray
    graph: AdjacencyGraph
    stratum_ids: list | None = None
    stratum_of: np.ndarray | None = None
    cluster_ids: list | None = None
    cluster_of: np.ndarray | None = None
    index_of: dict = field(default_factory=dict)

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    def summary(self) -> dict:
        out = {
            "n_units": self.n_units,
            "n_edges": sum(len(nb) for nb in self.graph.out_neighbors),
            "treated_units": int(self.treatment.sum()),
            "outcome_mean": float(self.outcome.mean()),
            "max_degree": self.graph.max_degree,
        }
        if self.stratum_ids is not None:
            out["n_strata"] = len(self.stratum_ids)
        if self.cluster_ids is not None:
            out["n_clusters"] = len(self.cluster_ids)
        return out


DEFAULT_CONFIG = {
    "design": {"kind": "complete"},
    "exposure": {"mode": "count", "threshold": 1, "empty_value": 0},
    "statistic": {"variant": "ipw"},
    "positivity_floor": 0.01,
    "alphas": [0.025],
    "seed": 20240801,
    "mc": {
        "propensity_enum_cap": 100_000,
        "pair_union_cap": 22,
        "pair_enum_cap": 500_000,
        "replications": 20_000,
    },
    "solver": {
        "psd_tol": 1e-8,
        "constraint_tol": 1e-9,
        "objective_tol": 1e-6,
        "max_iterations": 100,
        "barrier_t0": 1.0,
        "barrier_mu": 2.0,
        "newton_tol": 1e-11,
        "refine_iterations": 30,
        "power_iterations": 300,
    },
}


def load_config(path) -> dict:
    """Parse the YAML config and fill in every default.

    The fully resolved mapping is echoed into emitted reports so a run is
    reproducible from its own output.
    """
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise InputError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise InputError("config root must be a mapping")
    return _merge_defaults(DEFAULT_CONFIG, raw)


def _merge_defaults(defaults: dict, overrides: dict) -> dict:
    out = {}
    for key, value in defaults.items():
        if key in overrides and isinstance(value, dict) and isinstance(overrides[key], dict):
            out[key] = _merge_defaults(value, overrides[key])
        elif key in overrides:
            out[key] = overrides[key]
        else:
            out[key] = value
    for key, value in overrides.items():
        if key not in out:
            out[key] = value
    return out


def solver_config(config: dict) -> SolverConfig:
    s = config["solver"]
    return SolverConfig(
        psd_tol=float(s["psd_tol"]),
        constraint_tol=float(s["constraint_tol"]),
        objective_tol=float(s["objective_tol"]),
        max_iterations=int(s["max_iterations"]),
        barrier_t0=float(s["barrier_t0"]),
        barrier_mu=float(s["barrier_mu"]),
        newton_tol=float(s.get("newton_tol", 1e-11)),
        refine_iterations=int(s["refine_iterations"]),
        power_iterations=int(s.get("power_iterations", 300)),
    )


def moment_budget(config: dict) -> MomentBudget:
    m = config["mc"]
    return MomentBudget(
        propensity_enum_cap=int(m["propensity_enum_cap"]),
        pair_union_cap=int(m["pair_union_cap"]),
        pair_enum_cap=int(m["pair_enum_cap"]),
        mc_replications=int(m["replications"]),
        seed=int(config["seed"]),
    )


def ingest(units_path, edges_path, config_path):
    """Load and validate the experiment; build design and exposure rule.

    Returns (dataset, design, exposure_spec, resolved_config).  Treated
    counts are read off the realized assignment, which under the declared
    design kind is exactly the known randomization law.
    """
    config = load_config(config_path)
    units = _read_units(units_path)
    dataset = _build_dataset(units, edges_path, config)
    design = _build_design(dataset, config)
    spec = _build_exposure(dataset, units, config)
    return dataset, design, spec, config


def _read_units(units_path) -> pd.DataFrame:
    try:
        units = pd.read_csv(units_path, dtype={"unit_id": str})
    except OSError as exc:
        raise InputError(f"cannot read units file {units_path}: {exc}") from exc
    except pd.errors.ParserError as exc:
        raise InputError(f"units file {units_path} is not valid CSV: {exc}") from exc
    required = {"unit_id", "treatment", "outcome"}
    missing = required - set(units.columns)
    if missing:
        raise InputError(f"units file lacks columns: {sorted(missing)}")
    return units


def _build_dataset(units: pd.DataFrame, edges_path, config: dict) -> Dataset:
    ids = units["unit_id"].tolist()
    seen = {}
    for row, uid in enumerate(ids, start=2):  # data rows start under the header
        if uid in seen:
            raise InputError(f"row {row}: duplicate unit_id {uid!r} (first at row {seen[uid]})")
        seen[uid] = row
    index_of = {uid: k for k, uid in enumerate(ids)}

    def binary_column(name):
        vals = np.empty(len(ids), dtype=np.int8)
        for k, raw in enumerate(units[name].tolist()):
            if raw not in (0, 1, "0", "1"):
                raise InputError(f"row {k + 2}: {name} must be 0 or 1, got {raw!r}")
            vals[k] = int(raw)
        return vals

    treatment = binary_column("treatment")
    outcome = binary_column("outcome")

    stratum_ids = stratum_of = None
    if "stratum" in units.columns and units["stratum"].notna().any():
        labels = units["stratum"].astype(str).tolist()
        stratum_ids = sorted(set(labels))
        lookup = {s: k for k, s in enumerate(stratum_ids)}
        stratum_of = np.array([lookup[s] for s in labels], dtype=np.int64)

    cluster_ids = cluster_of = None
    if "cluster" in units.columns and units["cluster"].notna().any():
        labels = units["cluster"].astype(str).tolist()
        cluster_ids = sorted(set(labels))
        lookup = {c: k for k, c in enumerate(cluster_ids)}
        cluster_of = np.array([lookup[c] for c in labels], dtype=np.int64)

    try:
        edges = pd.read_csv(edges_path, dtype=str)
    except OSError as exc:
        raise InputError(f"cannot read edges file {edges_path}: {exc}") from exc
    except pd.errors.EmptyDataError:
        edges = pd.DataFrame(columns=["src", "dst"])
    if not {"src", "dst"} <= set(edges.columns):
        raise InputError("edges file must have src and dst columns")
    pairs = []
    for row, (src, dst) in enumerate(zip(edges["src"], edges["dst"]), start=2):
        if src not in index_of:
            raise InputError(f"edges row {row}: unknown unit id {src!r}")
        if dst not in index_of:
            raise InputError(f"edges row {row}: unknown unit id {dst!r}")
        if src == dst:
            raise InputError(f"edges row {row}: self-edge at {src!r}")
        pairs.append((index_of[src], index_of[dst]))
    graph = build_graph(pairs, len(ids))

    dataset = Dataset(
        unit_ids=ids,
        treatment=treatment,
        outcome=outcome,
        graph=graph,
        stratum_ids=stratum_ids,
        stratum_of=stratum_of,
        cluster_ids=cluster_ids,
        cluster_of=cluster_of,
        index_of=index_of,
    )
    if config["design"]["kind"] == "cluster":
        _validate_cluster_data(dataset)
    return dataset


def _validate_cluster_data(dataset: Dataset) -> None:
    if dataset.cluster_of is None:
        raise InputError("cluster design declared but units have no cluster column")
    for cidx, cid in enumerate(dataset.cluster_ids):
        members = np.flatnonzero(dataset.cluster_of == cidx)
        vals = np.unique(dataset.treatment[members])
        if len(vals) != 1:
            raise InputError(
                f"cluster {cid!r} mixes treated and control units; "
                "treatment must be constant within a cluster"
            )
    # cluster-level exposure requires the proxy network to skip own-cluster ties
    for i in range(dataset.n_units):
        for j in dataset.graph.out_neighbors[i]:
            if dataset.cluster_of[i] == dataset.cluster_of[j]:
                raise InputError(
                    f"edge {dataset.unit_ids[i]!r} -> {dataset.unit_ids[j]!r} stays "
                    "inside one cluster; own-cluster edges are not allowed under "
                    "a cluster design"
                )


def _build_design(dataset: Dataset, config: dict) -> Design:
    kind = config["design"]["kind"]
    if kind == "complete":
        return Design.complete(dataset.n_units, int(dataset.treatment.sum()))
    if kind == "stratified":
        if dataset.stratum_of is None:
            raise InputError("stratified design declared but units have no stratum column")
        counts = [
            int(dataset.treatment[dataset.stratum_of == s].sum())
            for s in range(len(dataset.stratum_ids))
        ]
        return Design.stratified(dataset.stratum_of, counts)
    if kind == "cluster":
        n_clusters = len(dataset.cluster_ids)
        cluster_treated = np.zeros(n_clusters, dtype=np.int64)
        stratum_of_cluster = np.zeros(n_clusters, dtype=np.int64)
        for cidx in range(n_clusters):
            members = np.flatnonzero(dataset.cluster_of == cidx)
            cluster_treated[cidx] = dataset.treatment[members[0]]
            if dataset.stratum_of is not None:
                strata = np.unique(dataset.stratum_of[members])
                if len(strata) != 1:
                    raise InputError(
                        f"cluster {dataset.cluster_ids[cidx]!r} spans multiple strata"
                    )
                stratum_of_cluster[cidx] = strata[0]
        n_strata = int(stratum_of_cluster.max()) + 1
        treated_per_stratum = [
            int(cluster_treated[stratum_of_cluster == s].sum()) for s in range(n_strata)
        ]
        return Design.cluster(dataset.cluster_of, stratum_of_cluster, treated_per_stratum)
    raise InputError(f"unknown design kind {kind!r}")


def _build_exposure(dataset: Dataset, units: pd.DataFrame, config: dict) -> ExposureSpec:
    exp = config["exposure"]
    mode = exp.get("mode", "count")
    empty_value = int(exp.get("empty_value", 0))
    column = exp.get("threshold_column")
    if column is not None:
        if column not in units.columns:
            raise InputError(f"exposure threshold column {column!r} missing from units file")
        thresholds = units[column].to_numpy(dtype=np.float64)
    else:
        thresholds = np.full(dataset.n_units, float(exp.get("threshold", 1)))
    try:
        if mode == "count":
            return ExposureSpec.count(thresholds, empty_value=empty_value)
        if mode == "fraction":
            return ExposureSpec.fraction(thresholds, empty_value=empty_value)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    raise InputError(f"unknown exposure mode {mode!r}")


def dump_units(dataset: Dataset, path) -> None:
    """Write the dataset's units back out; inverse of ingestion."""
    frame = pd.DataFrame(
        {
            "unit_id": dataset.unit_ids,
            "treatment": dataset.treatment,
            "outcome": dataset.outcome,
        }
    )
    if dataset.stratum_of is not None:
        frame["stratum"] = [dataset.stratum_ids[s] for s in dataset.stratum_of]
    if dataset.cluster_of is not None:
        frame["cluster"] = [dataset.cluster_ids[c] for c in dataset.cluster_of]
    frame.to_csv(path, index=False)


def dump_edges(dataset: Dataset, path) -> None:
    rows = [
        {"src": dataset.unit_ids[i], "dst": dataset.unit_ids[j]}
        for i in range(dataset.n_units)
        for j in dataset.graph.out_neighbors[i]
    ]
    pd.DataFrame(rows, columns=["src", "dst"]).to_csv(path, index=False)
