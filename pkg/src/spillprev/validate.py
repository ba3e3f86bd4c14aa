"""Built-in oracle cross-check battery for the validate subcommand.

Runs the exact counting engine, the Monte Carlo engines, and the solvers
against brute-force enumeration on small random instances.  Any mismatch is
reported with the instance seed that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .design import enumerate_assignments
from .exposure import compute_exposure
from .interval import SolverConfig, gershgorin_majorizer, refine_majorizer, solve_backup, solve_relaxation
from .oracle import (
    exact_contrast_variance,
    exact_exposure_law,
    exact_pair_law,
    integer_optimum,
    isolated_outcomes,
)
from .propensity import (
    ExposureMomentEngine,
    build_moment_matrix,
    build_propensities,
    mc_propensity,
)
from .statistic import build_weights, weight_value_table
from .synthetic import random_small_instance


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    instance_seed: int


def run_battery(
    n_instances: int = 6,
    n_units: int = 10,
    seed: int = 0,
    mc_replications: int = 4000,
    perturb_propensity: float = 0.0,
) -> list:
    """Oracle equivalence battery; returns one CheckResult per check.

    ``perturb_propensity`` is a test hook that injects a bias into the
    exact propensities before the exact-vs-Monte-Carlo comparison; a
    nonzero value must make that check fail.
    """
    results = []
    rng = np.random.default_rng(seed)
    cfg = SolverConfig()
    for k in range(n_instances):
        inst_seed = int(seed * 1000 + k)
        design, graph, spec, model = random_small_instance(
            seed=inst_seed, n=n_units, n_treated=n_units // 2, d_max=3
        )
        engine = ExposureMomentEngine(design, graph, spec)
        table = build_propensities(design, graph, spec, engine=engine)
        support = list(enumerate_assignments(design, 100_000))
        x = support[int(rng.integers(len(support)))]
        w = compute_exposure(graph, spec, x)
        weights = build_weights("ipw", w, table, x)
        mm = build_moment_matrix(design, graph, spec, table, weights, x, engine=engine)

        results.append(_check_propensities(design, graph, spec, engine, table, inst_seed))
        results.append(_check_pair_moments(design, graph, spec, weights, mm, x, inst_seed))
        results.append(_check_mean_zero(design, graph, spec, table, support, inst_seed))
        results.append(
            _check_exact_vs_mc(
                design, graph, spec, engine, table,
                mc_replications, inst_seed, perturb_propensity,
            )
        )
        results.append(
            _check_variance_identity(design, graph, spec, engine, table, model, support, inst_seed)
        )
        results.append(_check_relaxation(weights, mm, model, x, cfg, inst_seed))
        results.append(_check_backup(weights, model, x, rng, inst_seed))
        results.append(_check_majorizer(mm, cfg, inst_seed))
    return results


def _check_propensities(design, graph, spec, engine, table, inst_seed):
    worst = 0.0
    for i in range(design.n_units):
        if table.excluded[i]:
            continue
        for x_val in (0, 1):
            exact = float(engine.propensity(i)[x_val])
            enum = exact_exposure_law(design, graph, spec, i, x_val)
            worst = max(worst, abs(exact - enum))
    return CheckResult(
        "exact propensities vs full enumeration",
        worst <= 1e-10,
        f"max abs error {worst:.2e}",
        inst_seed,
    )


def _check_pair_moments(design, graph, spec, weights, mm, x, inst_seed):
    worst = 0.0
    n = design.n_units
    for i in range(n):
        for j in range(i, n):
            if weights.mask[i] or weights.mask[j]:
                continue
            enum = exact_pair_law(
                design, graph, spec, weights.values, i, j, int(x[i]), int(x[j])
            )
            worst = max(worst, abs(mm.q[i, j] - enum))
    return CheckResult(
        "exact pair moments vs full enumeration",
        worst <= 1e-10,
        f"max abs error {worst:.2e}",
        inst_seed,
    )


def _check_mean_zero(design, graph, spec, table, support, inst_seed):
    worst = 0.0
    for variant in ("ipw", "balanced"):
        values = weight_value_table(variant, table)
        for i in range(design.n_units):
            if table.excluded[i]:
                continue
            for x_val in (0, 1):
                total, count = 0.0, 0
                for a in support:
                    if int(a[i]) != x_val:
                        continue
                    w = compute_exposure(graph, spec, a)
                    total += values[i, x_val, int(w[i])]
                    count += 1
                worst = max(worst, abs(total / count))
    return CheckResult(
        "zero conditional mean of weights (both variants)",
        worst <= 1e-10,
        f"max |E[u|X]| {worst:.2e}",
        inst_seed,
    )


def _check_exact_vs_mc(design, graph, spec, engine, table, reps, inst_seed, perturb):
    worst_sigma = 0.0
    for i in range(design.n_units):
        if table.excluded[i]:
            continue
        for x_val in (0, 1):
            exact = float(engine.propensity(i)[x_val]) + perturb
            mc, se = mc_propensity(
                design, graph, spec, i, x_val, reps,
                np.random.SeedSequence((inst_seed, 3, i, x_val)),
            )
            se = max(se, 1.0 / reps)
            worst_sigma = max(worst_sigma, abs(exact - mc) / se)
    return CheckResult(
        "exact vs Monte Carlo propensities",
        worst_sigma <= 3.0 + 1e-9,
        f"worst deviation {worst_sigma:.2f} standard errors"
        + (f" (injected bias {perturb})" if perturb else ""),
        inst_seed,
    )


def _check_variance_identity(design, graph, spec, engine, table, model, support, inst_seed):
    def wb(x, w):
        return build_weights("ipw", w, table, x).u

    var_exact = exact_contrast_variance(design, graph, spec, wb, model)
    vs = []
    for a in support:
        w = compute_exposure(graph, spec, a)
        wt = build_weights("ipw", w, table, a)
        mm = build_moment_matrix(design, graph, spec, table, wt, a, engine=engine)
        theta = isolated_outcomes(model, a)
        vs.append(float(theta @ mm.q @ theta))
    err = abs(float(np.mean(vs)) - var_exact)
    return CheckResult(
        "variance-estimator identity (mean of estimates equals true variance)",
        err <= 1e-8,
        f"abs error {err:.2e}",
        inst_seed,
    )


def _check_relaxation(weights, mm, model, x, cfg, inst_seed):
    y = (weights.u > 0).astype(np.float64)  # adversarial: makes the constraint bind
    z = 1.5
    maj = refine_majorizer(mm.q, gershgorin_majorizer(mm.q, cfg), cfg)
    rel = solve_relaxation(weights.u, mm.q, maj, y, z, cfg)
    opt = integer_optimum(weights.u, mm.q, y, z)
    gap = rel.value - opt
    return CheckResult(
        "relaxation value below binary optimum",
        gap <= 1e-6,
        f"relaxation {rel.value:.6f} vs binary {opt:.6f}",
        inst_seed,
    )


def _check_backup(weights, model, x, rng, inst_seed):
    y = model.outcomes(x).astype(np.float64)
    n = len(y)
    greedy = solve_backup(weights.u, y)
    res = optimize.linprog(
        1 - 2 * y,
        A_ub=np.vstack([weights.u, -weights.u]),
        b_ub=[n ** (1 / 3)] * 2,
        bounds=[(0, 1)] * n,
        method="highs",
    )
    lp = float(y.sum() + res.fun)
    err = abs(greedy - lp)
    return CheckResult(
        "backup greedy vs general-purpose LP",
        err <= 1e-9,
        f"abs difference {err:.2e}",
        inst_seed,
    )


def _check_majorizer(mm, cfg, inst_seed):
    g = gershgorin_majorizer(mm.q, cfg)
    r = refine_majorizer(mm.q, g, cfg)
    lam = float(np.linalg.eigvalsh(mm.q - np.diag(r.d))[-1])
    ok = lam <= cfg.psd_tol and r.trace <= g.trace + 1e-12 and (r.d >= 0).all()
    return CheckResult(
        "diagonal majorizer certificate and trace reduction",
        ok,
        f"lambda_max {lam:.2e}, trace {g.trace:.4f} -> {r.trace:.4f}",
        inst_seed,
    )


def summarize(results: list) -> tuple[str, bool]:
    lines = []
    all_passed = True
    for res in results:
        tag = "PASS" if res.passed else "FAIL"
        all_passed &= res.passed
        lines.append(f"[{tag}] seed={res.instance_seed} {res.name}: {res.detail}")
    n_fail = sum(1 for r in results if not r.passed)
    lines.append(
        f"{len(results) - n_fail}/{len(results)} checks passed"
        + ("" if all_passed else f" ({n_fail} FAILED)")
    )
    return "\n".join(lines), all_passed
