"""One-sided lower confidence bound for the number of indirectly affected units.

The bound inverts the exposure-contrast test over binary counterfactuals.
The binary program is lower-bounded by a convex relaxation: a certified
diagonal majorizer D (Q - D negative semidefinite) turns the variance into a
concave function of a relaxed theta in [0,1]^N, and a log-barrier interior
point method solves the resulting program with a duality-gap deduction so
the reported value never exceeds the true optimum.  A Chebyshev-style
backup program with constraint |u @ theta| <= N^(1/3) guards against
degenerate variance; the final bound is the minimum of the two.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import optimize, stats


@dataclass(frozen=True)
class SolverConfig:
    psd_tol: float = 1e-8
    constraint_tol: float = 1e-9
    objective_tol: float = 1e-6
    max_iterations: int = 100
    barrier_t0: float = 1.0
    barrier_mu: float = 2.0
    newton_tol: float = 1e-11
    refine_iterations: int = 30
    power_iterations: int = 300

    def __post_init__(self):
        for name in ("psd_tol", "constraint_tol", "objective_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class DiagonalMajorizer:
    """Nonnegative diagonal D with Q - D certified negative semidefinite."""

    d: np.ndarray
    lambda_max: float  # power-iteration estimate of the top eigenvalue of Q - D
    residual: float  # ||(Q - D) v - lambda v|| at the returned eigvector
    psd_tol: float

    @property
    def trace(self) -> float:
        return float(self.d.sum())


@dataclass
class IntervalResult:
    lower_bound_units: float
    lower_bound_fraction: float
    alpha: float
    z_quantile: float
    active_program: str  # "relaxation" | "backup"
    relaxation_value: float
    backup_value: float
    theta_argmin: np.ndarray = field(repr=False, default=None)
    diagnostics: dict = field(default_factory=dict)

    def report_fields(self) -> dict:
        """The fixed JSON field layout for emitted reports."""
        return {
            "lower_bound_units": self.lower_bound_units,
            "lower_bound_fraction": self.lower_bound_fraction,
            "alpha": self.alpha,
            "one_sided_level": 1.0 - 2.0 * self.alpha,
            "z_quantile": self.z_quantile,
            "active_program": self.active_program,
            "relaxation_value": self.relaxation_value,
            "backup_value": self.backup_value,
            "solver": self.diagnostics,
        }


def power_iteration_lambda_max(
    m: np.ndarray, iterations: int = 300, seed: int = 0
) -> tuple[float, float]:
    """Largest eigenvalue of a symmetric matrix via shifted power iteration.

    Shifting by the Gershgorin radius makes the matrix PSD so the dominant
    eigenvalue of the shifted matrix is the one we want.  Returns the
    Rayleigh-quotient estimate and the residual norm at the final iterate.
    """
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    if n == 0:
        return 0.0, 0.0
    shift = float(np.abs(m).sum(axis=1).max()) + 1.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iterations):
        y = m @ v + shift * v
        norm = np.linalg.norm(y)
        if norm == 0:
            return -shift + 0.0, 0.0
        v = y / norm
        lam = float(v @ (m @ v))
    residual = float(np.linalg.norm(m @ v - lam * v))
    return lam, residual


def gershgorin_majorizer(q: np.ndarray, cfg: SolverConfig | None = None) -> DiagonalMajorizer:
    """Feasible diagonal from row sums: D_ii = sum_j |Q_ij|.

    Diagonal dominance of D - Q makes Q - D negative semidefinite by
    construction; the power-iteration certificate is still run and recorded.
    """
    cfg = cfg or SolverConfig()
    q = np.asarray(q, dtype=np.float64)
    _require_symmetric(q, cfg)
    d = np.abs(q).sum(axis=1)
    lam, res = power_iteration_lambda_max(q - np.diag(d), cfg.power_iterations)
    if lam > cfg.psd_tol:
        raise RuntimeError(
            f"Gershgorin majorizer failed its certificate (lambda_max={lam:.3e}); "
            "the moment matrix is numerically corrupted"
        )
    return DiagonalMajorizer(d=d, lambda_max=lam, residual=res, psd_tol=cfg.psd_tol)


def refine_majorizer(
    q: np.ndarray, d0: DiagonalMajorizer, cfg: SolverConfig | None = None
) -> DiagonalMajorizer:
    """Shrink the majorizer's trace while keeping Q - D certified.

    Alternates a uniform downward step (the trace subgradient direction)
    with projection back to feasibility along the top eigenvector of Q - D.
    Only certified iterates are accepted; with no improvement the input is
    returned unchanged.
    """
    cfg = cfg or SolverConfig()
    q = np.asarray(q, dtype=np.float64)
    n = q.shape[0]
    if n == 0 or d0.d.sum() <= cfg.psd_tol:
        return d0
    margin = cfg.psd_tol * 0.1
    best = d0.d.copy()
    best_trace = float(best.sum())
    step = 0.25 * best_trace / max(n, 1)
    floor = 1e-14 * max(best_trace / max(n, 1), 1.0)
    for _ in range(cfg.refine_iterations):
        trial = np.maximum(best - step, 0.0)
        vals, vecs = np.linalg.eigh(q - np.diag(trial))
        lam_top = float(vals[-1])
        if lam_top > -margin:
            # Project back up: dominate the positive part of Q - D by a
            # diagonal increase (Gershgorin on the offending eigenspace),
            # which restores Q - D <= 0 in one certified step.
            pos = vals > -margin
            shifted = np.maximum(vals[pos] + margin, 0.0)
            m_pos = (vecs[:, pos] * shifted) @ vecs[:, pos].T
            trial = trial + np.abs(m_pos).sum(axis=1) + margin
        if trial.sum() < best_trace - 1e-12:
            best = trial
            best_trace = float(best.sum())
        else:
            step *= 0.5
            if step < floor:
                break
    lam, res = power_iteration_lambda_max(q - np.diag(best), cfg.power_iterations)
    if lam > cfg.psd_tol:
        return d0
    return DiagonalMajorizer(d=best, lambda_max=lam, residual=res, psd_tol=cfg.psd_tol)


def _require_symmetric(q: np.ndarray, cfg: SolverConfig) -> None:
    if q.shape[0] != q.shape[1] or np.abs(q - q.T).max(initial=0.0) > 1e-8:
        raise ValueError("moment matrix must be symmetric")


@dataclass
class RelaxationSolution:
    value: float
    theta: np.ndarray
    status: str
    iterations: int = 0
    constraint_residual: float = 0.0
    duality_gap_bound: float = 0.0
    primal_value: float = 0.0


def solve_relaxation(
    u: np.ndarray,
    q: np.ndarray,
    majorizer: DiagonalMajorizer,
    y: np.ndarray,
    z: float,
    cfg: SolverConfig | None = None,
) -> RelaxationSolution:
    """Certified lower bound of the relaxed inversion program.

    minimize sum_i |Y_i - theta_i| over theta in [0,1]^N subject to
    g(theta) = (u@theta)^2 / z^2 + theta'(D-Q)theta - d@theta <= 0,
    which reproduces the confidence-set constraint exactly on binary theta
    (the square kills the sqrt's minus-infinity branch consistently).
    The returned value is primal minus a duality-gap bound, clamped to
    [0, N], so inexact optimization can only loosen the bound.
    """
    cfg = cfg or SolverConfig()
    u = np.asarray(u, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = majorizer.d
    n = len(y)
    if z <= 0:
        raise ValueError("z must be positive")

    # Membership of Y itself: g(Y) <= 0 iff (u@Y)^2 <= z^2 * Y'QY.
    g_y = float((u @ y) ** 2 / z**2 - y @ q @ y)
    if g_y <= cfg.constraint_tol:
        return RelaxationSolution(
            value=0.0, theta=y.copy(), status="observed_feasible"
        )

    c = 1.0 - 2.0 * y  # objective = y.sum() + c @ theta, linear for binary y

    # Units with zero weight and no variance contribution never enter the
    # constraint; pinning them at theta_i = y_i is exact and keeps the
    # barrier strictly interior.
    active = (d > cfg.psd_tol) | (u != 0)
    if not active.any():
        return _equality_lp_fallback(u, y, c, n)

    ua = u[active]
    da = d[active]
    ca = c[active]
    qa = q[np.ix_(active, active)]
    a_mat = np.outer(ua, ua) / z**2 + (np.diag(da) - qa)
    a_mat = 0.5 * (a_mat + a_mat.T)
    n_act = int(active.sum())

    def g_fn(th):
        return float(th @ a_mat @ th - da @ th)

    def g_grad(th):
        return 2.0 * (a_mat @ th) - da

    theta = _strictly_feasible_point(a_mat, da, g_fn)
    if theta is None:
        return _equality_lp_fallback(u, y, c, n)

    m_constraints = 2 * n_act + 1
    t = max(cfg.barrier_t0, 1.0)
    mu = max(cfg.barrier_mu, 1.5)
    newton_total = 0
    status = "converged"
    best_bound = -np.inf
    for _stage in range(80):
        theta, iters, ok, stage_bound = _newton_center(
            theta, t, ca, a_mat, da, g_fn, g_grad, cfg
        )
        newton_total += iters
        prev_bound = best_bound
        best_bound = max(best_bound, stage_bound)
        gap = float(ca @ theta) - best_bound
        if gap <= cfg.objective_tol or m_constraints / t < cfg.objective_tol:
            break
        if not ok and best_bound <= prev_bound + cfg.objective_tol:
            status = "stalled"
            break
        if newton_total > cfg.max_iterations * 10:
            status = "max_iterations"
            break
        # cheap centers tolerate faster continuation; expensive ones do not
        if iters <= 6:
            mu = min(mu * 1.5, 16.0)
        elif iters > 15:
            mu = max(mu / 2.0, 1.5)
        t *= mu
    else:
        status = "max_stages"

    theta_full = y.astype(np.float64).copy()
    theta_full[active] = theta
    primal = float(y.sum() + c @ theta_full)
    value = float(np.clip(y.sum() + best_bound, 0.0, n))
    residual = max(g_fn(theta), 0.0)
    return RelaxationSolution(
        value=value,
        theta=theta_full,
        status=status,
        iterations=newton_total,
        constraint_residual=residual,
        duality_gap_bound=primal - value,
        primal_value=primal,
    )


def _dual_bound_at(theta, t, c, g, grad_g) -> float:
    """Certified lower bound on min c@theta over the feasible set.

    Valid at any strictly feasible interior point, however badly centered:
    with multiplier lam = 1/(t * (-g)), the partial Lagrangian
    h(v) = c@v + lam*g(v) is convex, so its box minimum is at least
    h(theta) + min over the box of grad_h(theta)'(v - theta), which has a
    closed form.  h(theta) = c@theta - 1/t.
    """
    if g >= 0:  # pragma: no cover - iterates stay strictly feasible
        return -np.inf
    lam = 1.0 / (t * (-g))
    s = c + lam * grad_g
    slack = np.where(s > 0, s * theta, -s * (1.0 - theta)).sum()
    return float(c @ theta - 1.0 / t - slack)


def _strictly_feasible_point(a_mat, d, g_fn, box_eps: float = 1e-9):
    """A point with g < 0 strictly inside the box, or None if none found.

    Walk along the diagonal direction, where the linear term of g dominates
    for small scales.
    """
    if d.sum() <= 0:
        return None
    h = d / d.sum()
    quad = float(h @ a_mat @ h)
    lin = float(d @ h)
    if lin <= 0:
        return None
    scale = lin / quad * 0.5 if quad > 0 else 1.0
    for _ in range(80):
        theta = np.clip(scale * h, box_eps, 1.0 - box_eps)
        if g_fn(theta) < 0:
            return theta
        scale *= 0.5
        if scale < 1e-300:
            break
    return None


def _newton_center(theta, t, c, a_mat, d, g_fn, g_grad, cfg: SolverConfig):
    """Newton minimization of t*c@theta + barrier(theta).

    Returns (theta, iterations, converged, best dual bound seen).  The dual
    bound is tracked at every iterate, so even a stage that stalls at its
    numerical floor contributes its best certificate.  Steps are capped at a
    0.995 fraction of the exact distance to the nearest constraint (g is
    quadratic along the step, the box is linear), then Armijo-backtracked.
    """
    best_bound = -np.inf
    for it in range(cfg.max_iterations):
        g = g_fn(theta)
        grad_g = g_grad(theta)
        best_bound = max(best_bound, _dual_bound_at(theta, t, c, g, grad_g))
        inv_lo = 1.0 / theta
        inv_hi = 1.0 / (1.0 - theta)
        grad = t * c + grad_g / (-g) - inv_lo + inv_hi
        hess = np.outer(grad_g / (-g), grad_g / (-g))
        hess += (2.0 / (-g)) * a_mat
        hess[np.diag_indices_from(hess)] += inv_lo**2 + inv_hi**2
        try:
            chol = scipy.linalg.cho_factor(hess, lower=True, check_finite=False)
            step = scipy.linalg.cho_solve(chol, -grad, check_finite=False)
        except scipy.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, -grad, rcond=None)[0]
        decrement_sq = float(step @ hess @ step)
        if decrement_sq / 2.0 <= cfg.newton_tol:
            return theta, it + 1, True, best_bound
        s_max = _feasible_step_length(theta, step, g, grad_g, a_mat)
        s = min(1.0, 0.995 * s_max)
        obj0 = t * float(c @ theta) + _barrier_value(theta, g)
        accepted = False
        for _ in range(40):
            cand = theta + s * step
            g_cand = g_fn(cand)
            if (cand > 0).all() and (cand < 1).all() and g_cand < 0:
                obj_cand = t * float(c @ cand) + _barrier_value(cand, g_cand)
                if obj_cand <= obj0 - 1e-4 * s * decrement_sq:
                    if obj0 - obj_cand <= 1e-12 * (1.0 + abs(obj0)):
                        return cand, it + 1, True, best_bound  # progress floor
                    theta = cand
                    accepted = True
                    break
            s *= 0.5
        if not accepted:
            # line search hit its floor; the iterate is as centered as
            # floating point allows at this t
            return theta, it + 1, True, best_bound
    return theta, cfg.max_iterations, False, best_bound


def _feasible_step_length(theta, step, g0, grad_g, a_mat) -> float:
    """Largest s with theta + s*step inside the box and g < 0.

    Along the step, g(theta + s*step) = g0 + s * grad_g@step + s^2 *
    step'A step with nonnegative curvature, so the boundary crossing has a
    closed form.
    """
    with np.errstate(divide="ignore"):
        pos = step > 0
        neg = step < 0
        s_box = np.inf
        if pos.any():
            s_box = min(s_box, float(((1.0 - theta[pos]) / step[pos]).min()))
        if neg.any():
            s_box = min(s_box, float((theta[neg] / -step[neg]).min()))
    quad = float(step @ a_mat @ step)
    lin = float(grad_g @ step)
    if quad > 0:
        disc = lin * lin - 4.0 * quad * g0
        s_g = (-lin + np.sqrt(max(disc, 0.0))) / (2.0 * quad)
    elif lin > 0:
        s_g = -g0 / lin
    else:
        s_g = np.inf
    if s_g <= 0:
        s_g = np.inf
    return float(min(s_box, s_g))


def _barrier_value(theta, g):
    return float(-np.log(-g) - np.log(theta).sum() - np.log1p(-theta).sum())


def _equality_lp_fallback(u, y, c, n) -> RelaxationSolution:
    """Degenerate case sum(D) ~ 0: the feasible set collapses to u@theta = 0."""
    res = optimize.linprog(
        c,
        A_eq=u[None, :],
        b_eq=np.zeros(1),
        bounds=[(0.0, 1.0)] * n,
        method="highs",
    )
    if not res.success:  # pragma: no cover - bounded feasible LP always solves
        raise RuntimeError(f"degenerate-relaxation LP failed: {res.message}")
    value = float(np.clip(y.sum() + res.fun, 0.0, n))
    return RelaxationSolution(
        value=value, theta=res.x, status="degenerate_lp", primal_value=value
    )


def solve_backup(u: np.ndarray, y: np.ndarray, n: int | None = None) -> float:
    """Exact optimum of: min sum|Y - theta| s.t. |u @ theta| <= N^(1/3).

    Greedy exchange starting from theta = Y.  Each candidate move costs its
    magnitude and reduces |u @ theta| proportionally to |u_i|, so sorting by
    |u_i| descending and moving fractionally at the boundary is exact for
    this single-constraint box LP.
    """
    u = np.asarray(u, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if n is None:
        n = len(y)
    budget = float(n) ** (1.0 / 3.0)
    s = float(u @ y)
    if abs(s) <= budget:
        return 0.0
    sign = 1.0 if s > 0 else -1.0
    # Moves that pull u @ theta toward zero at unit cost per unit of theta.
    reducers = np.where(
        ((y == 1) & (sign * u > 0)) | ((y == 0) & (sign * u < 0))
    )[0]
    capacity = np.abs(u[reducers])
    order = np.argsort(-capacity)
    needed = abs(s) - budget
    cost = 0.0
    for idx in order:
        cap = capacity[idx]
        if cap <= 0:
            break
        move = min(1.0, needed / cap)
        cost += move
        needed -= move * cap
        if needed <= 1e-15:
            break
    return float(cost)


def combined_interval(
    weights,
    q: np.ndarray,
    y: np.ndarray,
    alpha: float,
    cfg: SolverConfig | None = None,
    majorizer: DiagonalMajorizer | None = None,
) -> IntervalResult:
    """One-sided lower bound at confidence 1 - 2*alpha.

    The normal quantile is taken at 1 - alpha (a 95% one-sided bound uses
    z at 0.975).  Runs majorizer extraction, the convex relaxation, and the
    backup program, and returns the minimum of the two program values.
    """
    cfg = cfg or SolverConfig()
    if not 0 < alpha < 0.5:
        raise ValueError("alpha must lie in (0, 0.5)")
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    z = float(stats.norm.ppf(1.0 - alpha))
    if majorizer is None:
        majorizer = refine_majorizer(q, gershgorin_majorizer(q, cfg), cfg)
    relax = solve_relaxation(weights.u, q, majorizer, y, z, cfg)
    backup_value = solve_backup(weights.u, y, n)
    if relax.value <= backup_value:
        bound, active = relax.value, "relaxation"
    else:
        bound, active = backup_value, "backup"
    diagnostics = {
        "status": relax.status,
        "iterations": relax.iterations,
        "constraint_residual": relax.constraint_residual,
        "duality_gap_bound": relax.duality_gap_bound,
        "relaxation_primal": relax.primal_value,
        "majorizer_trace": majorizer.trace,
        "majorizer_lambda_max": majorizer.lambda_max,
        "majorizer_residual": majorizer.residual,
    }
    return IntervalResult(
        lower_bound_units=float(bound),
        lower_bound_fraction=float(bound / n) if n else 0.0,
        alpha=float(alpha),
        z_quantile=z,
        active_program=active,
        relaxation_value=float(relax.value),
        backup_value=float(backup_value),
        theta_argmin=relax.theta,
        diagnostics=diagnostics,
    )
