"""Monte Carlo experiments validating coverage, normality, and estimator scaling.

Replications are independent tasks with counter-derived seeds, so results
are bit-identical no matter how many workers run them.  The expensive
coverage experiment runs the full data-only pipeline per replication; the
normality and consistency experiments avoid the solver entirely and are
vectorized over batches of assignments.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .design import Design, sample_assignment
from .exposure import ExposureSpec, compute_exposure, compute_exposure_batch
from .graph import AdjacencyGraph
from .interval import SolverConfig, combined_interval, gershgorin_majorizer, refine_majorizer
from .oracle import ThresholdResponse, isolated_outcomes
from .propensity import ExposureMomentEngine, build_moment_matrix, build_propensities
from .statistic import build_weights, weight_value_table
from .synthetic import (
    cluster_ring_graph,
    dense_spillover_model,
    null_model,
    permute_edges,
    random_bounded_degree_graph,
    ring_graph,
)


@dataclass(frozen=True)
class SimConfig:
    """Configuration for one simulation experiment."""

    n_grid: tuple = (400,)
    replications: int = 500
    alphas: tuple = (0.025,)
    seed: int = 20240801
    graph: str = "ring"  # ring | random | cluster
    degree: int = 4
    units_per_cluster: int = 4
    treated_share: float = 0.5
    exposure_threshold: float | None = None  # treated-neighbor count; default degree/2
    model: str = "dense"  # dense | null
    spillover_strength: float = 0.6
    direct_share: float = 0.3
    misspecify_share: float = 0.0
    variant: str = "ipw"
    positivity_floor: float = 0.01
    solver: SolverConfig = SolverConfig(objective_tol=0.25, refine_iterations=8)
    variance_budget_factor: int = 10
    enumeration_cap: int = 20_000
    threads: int = 1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_grid"] = list(self.n_grid)
        out["alphas"] = list(self.alphas)
        return out


@dataclass
class CoverageReport:
    rows: list  # one dict per (n, alpha)
    config: dict
    kind: str = "coverage"


@dataclass
class Environment:
    """Everything fixed across replications for one sample size."""

    n: int
    design: Design
    true_graph: AdjacencyGraph
    analysis_graph: AdjacencyGraph
    spec: ExposureSpec
    model: ThresholdResponse
    level: str = "unit"


def build_environment(cfg: SimConfig, n: int) -> Environment:
    root = np.random.SeedSequence((cfg.seed, n))
    graph_seed, model_seed, miss_seed = root.spawn(3)
    level = "unit"
    if cfg.graph == "ring":
        graph = ring_graph(n, cfg.degree)
        cluster_of = None
    elif cfg.graph == "random":
        graph = random_bounded_degree_graph(n, cfg.degree, graph_seed)
        cluster_of = None
    elif cfg.graph == "cluster":
        n_clusters = max(4, n // cfg.units_per_cluster)
        graph, cluster_of = cluster_ring_graph(
            n_clusters, cfg.units_per_cluster, cfg.degree
        )
        n = graph.n_units
        level = "cluster"
    else:
        raise ValueError(f"unknown graph generator {cfg.graph!r}")

    if cluster_of is None:
        design = Design.complete(n, max(1, round(cfg.treated_share * n)))
    else:
        n_clusters = int(cluster_of.max()) + 1
        design = Design.cluster(
            cluster_of,
            np.zeros(n_clusters, dtype=np.int64),
            np.array([max(1, round(cfg.treated_share * n_clusters))]),
        )

    thr = cfg.exposure_threshold
    if thr is None:
        thr = max(1, cfg.degree // 2) if cluster_of is None else 1
    spec = ExposureSpec.count(np.full(n, float(thr)))

    if cfg.model == "dense":
        model = dense_spillover_model(
            graph, spec, model_seed,
            direct_share=cfg.direct_share,
            spillover_strength=cfg.spillover_strength,
        )
    elif cfg.model == "null":
        model = null_model(graph, spec, model_seed)
    else:
        raise ValueError(f"unknown model family {cfg.model!r}")

    analysis_graph = graph
    if cfg.misspecify_share > 0:
        analysis_graph = permute_edges(graph, cfg.misspecify_share, miss_seed)
    return Environment(
        n=n,
        design=design,
        true_graph=graph,
        analysis_graph=analysis_graph,
        spec=spec,
        model=model,
        level=level,
    )


# -- coverage ------------------------------------------------------------------


def _coverage_block(cfg: SimConfig, n: int, rep_indices) -> list:
    """Run a block of coverage replications; safe to execute in any process."""
    env = build_environment(cfg, n)
    engine = ExposureMomentEngine(env.design, env.analysis_graph, env.spec)
    table = build_propensities(
        env.design, env.analysis_graph, env.spec,
        positivity_floor=cfg.positivity_floor, engine=engine,
    )
    records = []
    for rep in rep_indices:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, n, 11, rep)))
        x = sample_assignment(env.design, rng)
        y = env.model.outcomes(x).astype(np.float64)
        w = compute_exposure(env.analysis_graph, env.spec, x)
        weights = build_weights(cfg.variant, w, table, x)
        mm = build_moment_matrix(
            env.design, env.analysis_graph, env.spec, table, weights, x, engine=engine
        )
        majorizer = refine_majorizer(mm.q, gershgorin_majorizer(mm.q, cfg.solver), cfg.solver)
        theta_star = isolated_outcomes(env.model, x, env.level, env.design)
        psi = int(np.abs(env.model.outcomes(x) - theta_star).sum())
        sup = float(np.abs(weights.u).max())
        point = float(abs(weights.u @ (y - 0.5)) / sup) if sup > 0 else 0.0
        rec = {"rep": int(rep), "psi": psi, "point_estimate": point, "bounds": {}}
        for alpha in cfg.alphas:
            res = combined_interval(
                weights, mm.q, y, alpha, cfg=cfg.solver, majorizer=majorizer
            )
            rec["bounds"][alpha] = {
                "lower": res.lower_bound_units,
                "active": res.active_program,
            }
        records.append(rec)
    return records


def run_coverage(cfg: SimConfig) -> CoverageReport:
    """Coverage of the combined lower bound against the true affected count."""
    rows = []
    for n in cfg.n_grid:
        records = _run_blocks(cfg, n, _coverage_block)
        records.sort(key=lambda r: r["rep"])
        tol = cfg.solver.objective_tol
        for alpha in cfg.alphas:
            lowers = np.array([r["bounds"][alpha]["lower"] for r in records])
            psis = np.array([r["psi"] for r in records], dtype=np.float64)
            covered = lowers <= psis + tol
            backup = np.array(
                [r["bounds"][alpha]["active"] == "backup" for r in records]
            )
            points = np.array([r["point_estimate"] for r in records])
            n_reps = len(records)
            rate = float(covered.mean())
            rows.append(
                {
                    "n": int(n),
                    "alpha": float(alpha),
                    "one_sided_level": 1.0 - 2.0 * float(alpha),
                    "replications": n_reps,
                    "coverage": rate,
                    "coverage_se": float(np.sqrt(rate * (1 - rate) / n_reps)),
                    "mean_lower_bound": float(lowers.mean()),
                    "mean_point_estimate": float(points.mean()),
                    "mean_affected": float(psis.mean()),
                    "backup_active_share": float(backup.mean()),
                }
            )
    return CoverageReport(rows=rows, config=cfg.to_dict(), kind="coverage")


def _run_blocks(cfg: SimConfig, n: int, block_fn) -> list:
    indices = list(range(cfg.replications))
    if cfg.threads <= 1 or cfg.replications < 2 * cfg.threads:
        return block_fn(cfg, n, indices)
    chunks = np.array_split(np.array(indices), cfg.threads)
    records = []
    with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
        futures = [
            pool.submit(block_fn, cfg, n, chunk.tolist())
            for chunk in chunks
            if len(chunk)
        ]
        for fut in futures:
            records.extend(fut.result())
    return records


# -- vectorized draws ----------------------------------------------------------


def sample_assignment_batch(design: Design, reps: int, rng) -> np.ndarray:
    """(reps, n) matrix of independent draws from the design."""
    if design.n_strata == 1 and design.n_groups == design.n_units:
        n = design.n_units
        t = int(design.n_treated_per_stratum[0])
        x = np.zeros((reps, n), dtype=np.int8)
        scores = rng.random((reps, n))
        idx = np.argpartition(scores, t - 1, axis=1)[:, :t]
        np.put_along_axis(x, idx, 1, axis=1)
        return x
    return np.stack([sample_assignment(design, rng) for _ in range(reps)])


def counterfactual_pair(model, design: Design | None, level: str) -> tuple:
    """(theta0, theta1): isolated-treatment outcomes for own treatment 0 / 1."""
    n = model.n_units
    zeros = np.zeros(n, dtype=np.int8)
    theta0 = model.outcomes(zeros).astype(np.int8)
    theta1 = np.empty(n, dtype=np.int8)
    if level == "unit":
        chunk = max(1, 2**22 // max(n, 1))
        for start in range(0, n, chunk):
            stop = min(n, start + chunk)
            block = np.zeros((stop - start, n), dtype=np.int8)
            block[np.arange(stop - start), np.arange(start, stop)] = 1
            outs = model.outcomes_batch(block)
            theta1[start:stop] = outs[np.arange(stop - start), np.arange(start, stop)]
    else:
        for gidx in range(design.n_groups):
            members = design.units_by_group[gidx]
            iso = np.zeros(n, dtype=np.int8)
            iso[members] = 1
            theta1[members] = model.outcomes(iso)[members]
    return theta0, theta1


@dataclass
class StatisticDraws:
    """Vectorized per-replication statistic ingredients."""

    tau: np.ndarray
    point_estimate: np.ndarray
    oracle_bound: np.ndarray
    affected: np.ndarray


def _batched_draws(cfg: SimConfig, env: Environment, reps: int, seed_tag: int) -> StatisticDraws:
    engine = ExposureMomentEngine(env.design, env.analysis_graph, env.spec)
    table = build_propensities(
        env.design, env.analysis_graph, env.spec,
        positivity_floor=cfg.positivity_floor, engine=engine,
    )
    values = weight_value_table(cfg.variant, table)
    theta0, theta1 = counterfactual_pair(env.model, env.design, env.level)
    n = env.n
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, n, seed_tag)))
    taus = np.empty(reps)
    points = np.empty(reps)
    oracle = np.empty(reps)
    affected = np.empty(reps)
    chunk = max(1, 2**23 // max(n, 1))
    done = 0
    unit_idx = np.arange(n)
    while done < reps:
        b = min(chunk, reps - done)
        x = sample_assignment_batch(env.design, b, rng)
        w = compute_exposure_batch(env.analysis_graph, env.spec, x)
        u = values[unit_idx[None, :], x.astype(np.int64), w.astype(np.int64)]
        theta = theta0[None, :] + (theta1 - theta0)[None, :] * x
        y = env.model.outcomes_batch(x)
        taus[done : done + b] = (u * theta).sum(axis=1)
        sup = np.abs(u).max(axis=1)
        sup[sup == 0] = np.inf
        points[done : done + b] = np.abs((u * (y - 0.5)).sum(axis=1)) / sup
        oracle[done : done + b] = np.abs((u * (y - theta)).sum(axis=1)) / sup
        affected[done : done + b] = np.abs(y - theta).sum(axis=1)
        done += b
    return StatisticDraws(tau=taus, point_estimate=points, oracle_bound=oracle, affected=affected)


# -- normality -----------------------------------------------------------------


def run_normality(cfg: SimConfig) -> CoverageReport:
    """KS distance between the standardized contrast and a standard normal.

    The contrast uses the model-known counterfactual.  The variance is the
    exact enumeration value when the support is small enough, otherwise a
    Monte Carlo estimate with ``variance_budget_factor`` times the
    replication budget; which one was used is recorded.
    """
    rows = []
    for n in cfg.n_grid:
        env = build_environment(cfg, n)
        draws = _batched_draws(cfg, env, cfg.replications, seed_tag=23)
        var_tau, var_method = _contrast_variance(cfg, env)
        floor = float(env.n) ** 0.6
        degenerate = not np.isfinite(var_tau) or var_tau < floor
        if degenerate:
            ks = float("nan")
        else:
            standardized = draws.tau / np.sqrt(var_tau)
            ks = float(stats.kstest(standardized, "norm").statistic)
        rows.append(
            {
                "n": int(env.n),
                "replications": cfg.replications,
                "ks_distance": ks,
                "variance": float(var_tau),
                "variance_method": var_method,
                "variance_floor": floor,
                "degenerate": bool(degenerate),
            }
        )
    return CoverageReport(rows=rows, config=cfg.to_dict(), kind="normality")


def _contrast_variance(cfg: SimConfig, env: Environment) -> tuple[float, str]:
    from .design import support_size

    if support_size(env.design) <= cfg.enumeration_cap:
        from .design import enumerate_assignments

        engine = ExposureMomentEngine(env.design, env.analysis_graph, env.spec)
        table = build_propensities(
            env.design, env.analysis_graph, env.spec,
            positivity_floor=cfg.positivity_floor, engine=engine,
        )
        values = weight_value_table(cfg.variant, table)
        theta0, theta1 = counterfactual_pair(env.model, env.design, env.level)
        unit_idx = np.arange(env.n)
        taus = []
        for x in enumerate_assignments(env.design, cfg.enumeration_cap):
            w = compute_exposure(env.analysis_graph, env.spec, x)
            u = values[unit_idx, x.astype(np.int64), w.astype(np.int64)]
            theta = theta0 + (theta1 - theta0) * x
            taus.append(float(u @ theta))
        return float(np.var(np.array(taus))), "exact_enumeration"
    draws = _batched_draws(
        cfg, env, cfg.replications * cfg.variance_budget_factor, seed_tag=29
    )
    return float(draws.tau.var()), "monte_carlo"


# -- point-estimate scaling ----------------------------------------------------


def run_consistency(cfg: SimConfig) -> CoverageReport:
    """Distribution of |point estimate - oracle bound| / N across the grid."""
    rows = []
    for n in cfg.n_grid:
        env = build_environment(cfg, n)
        draws = _batched_draws(cfg, env, cfg.replications, seed_tag=31)
        err = np.abs(draws.point_estimate - draws.oracle_bound) / env.n
        rows.append(
            {
                "n": int(env.n),
                "replications": cfg.replications,
                "median_scaled_error": float(np.median(err)),
                "q25_scaled_error": float(np.quantile(err, 0.25)),
                "q75_scaled_error": float(np.quantile(err, 0.75)),
                "mean_point_estimate": float(draws.point_estimate.mean()),
                "mean_oracle_bound": float(draws.oracle_bound.mean()),
            }
        )
    report = CoverageReport(rows=rows, config=cfg.to_dict(), kind="consistency")
    if len(rows) >= 2:
        first, last = rows[0], rows[-1]
        if last["median_scaled_error"] > 0:
            report.rows.append(
                {
                    "n": None,
                    "scaling_ratio": first["median_scaled_error"]
                    / last["median_scaled_error"],
                    "n_low": first["n"],
                    "n_high": last["n"],
                }
            )
    return report
