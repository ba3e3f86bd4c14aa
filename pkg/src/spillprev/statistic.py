"""Weight vectors, the exposure contrast statistic, and the point estimate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .propensity import PropensityTable

VARIANT_ALIASES = {"ipw": "ipw", "balanced": "balanced", "alt": "balanced"}


@dataclass
class WeightVector:
    """Per-unit weights u for the exposure contrast u @ theta.

    variant "ipw": u_i = W_i / P(W_i=1|X_i) - (1-W_i) / P(W_i=0|X_i).
    variant "balanced": u_i = W_i * pi_i1 - (1-W_i) * pi_i0 with the odds
    capped at 1, so |u_i| <= 1 and no single unit dominates the contrast.

    ``values[i, x, w]`` tabulates u_i for each combination of own treatment
    and exposure; ``u`` is the realized vector.  Excluded units carry zeros
    everywhere, which preserves the zero conditional mean of every
    contributing coordinate.
    """

    u: np.ndarray
    variant: str
    mask: np.ndarray  # True for excluded units
    propensities: PropensityTable
    values: np.ndarray = field(repr=False, default=None)  # (n, 2, 2)

    @property
    def n_units(self) -> int:
        return len(self.u)

    def sup_norm(self) -> float:
        return float(np.abs(self.u).max()) if len(self.u) else 0.0


def weight_value_table(variant: str, propensities: PropensityTable) -> np.ndarray:
    """u_i(x, w) for every unit, treatment value, and exposure value."""
    canonical = VARIANT_ALIASES.get(variant)
    if canonical is None:
        raise ValueError(f"unknown statistic variant {variant!r}")
    variant = canonical
    p = propensities.p  # (n, 2) = P(W=1 | X=x)
    n = len(p)
    values = np.zeros((n, 2, 2))
    active = ~propensities.excluded
    if not active.any():
        return values
    pa = p[active]
    if np.any((pa <= 0) | (pa >= 1)):
        bad = np.flatnonzero(active)[
            np.where((pa <= 0).any(axis=1) | (pa >= 1).any(axis=1))[0]
        ]
        raise ValueError(
            f"degenerate propensity for non-excluded unit(s) {bad.tolist()}; "
            "raise the positivity floor or exclude them"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        if variant == "ipw":
            v1 = 1.0 / p
            v0 = -1.0 / (1.0 - p)
        else:
            v1 = np.minimum((1.0 - p) / p, 1.0)
            v0 = -np.minimum(p / (1.0 - p), 1.0)
    values[active, :, 1] = v1[active]
    values[active, :, 0] = v0[active]
    return values


def build_weights(
    variant: str,
    w: np.ndarray,
    propensities: PropensityTable,
    x: np.ndarray,
    mask: np.ndarray | None = None,
) -> WeightVector:
    """Realized weight vector given exposures, propensities, and treatments.

    ``mask`` defaults to the propensity table's exclusion set; passing a
    superset is allowed (extra exclusions), removing exclusions is not.
    """
    w = np.asarray(w, dtype=np.int64)
    x = np.asarray(x, dtype=np.int64)
    if mask is None:
        mask = propensities.excluded.copy()
    else:
        mask = np.asarray(mask, dtype=bool) | propensities.excluded
    base = propensities.excluded.copy()
    propensities_for_values = propensities
    if not np.array_equal(mask, base):
        # widen the exclusion set without mutating the caller's table
        import copy

        propensities_for_values = copy.copy(propensities)
        propensities_for_values.excluded = mask
    values = weight_value_table(variant, propensities_for_values)
    u = values[np.arange(len(w)), x, w]
    return WeightVector(
        u=u,
        variant=VARIANT_ALIASES[variant],
        mask=mask,
        propensities=propensities,
        values=values,
    )


def contrast(weights: WeightVector, theta: np.ndarray) -> float:
    """The test statistic u @ theta for a hypothesized counterfactual."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != weights.u.shape:
        raise ValueError("theta and weights have mismatched lengths")
    return float(weights.u @ theta)


def variance_estimate(q: np.ndarray, theta: np.ndarray) -> float:
    """theta' Q theta: the design-based estimate of Var(u @ theta)."""
    theta = np.asarray(theta, dtype=np.float64)
    q = np.asarray(q)
    if q.shape != (len(theta), len(theta)):
        raise ValueError("moment matrix and theta have mismatched shapes")
    return float(theta @ q @ theta)


def sqrt_plus(v: float) -> float:
    """Square root extended to the whole line: -inf below zero.

    The extension keeps the map concave, which is what the confidence-set
    constraint needs.
    """
    return float(np.sqrt(v)) if v >= 0 else float("-inf")


def affected_count(y: np.ndarray, theta: np.ndarray) -> int:
    """Hamming distance between outcomes and a binary counterfactual.

    This is the estimand: the number of units whose outcome differs from
    what isolated treatment would have produced.
    """
    y = np.asarray(y, dtype=np.int64)
    theta = np.asarray(theta, dtype=np.int64)
    if y.shape != theta.shape:
        raise ValueError("outcome and counterfactual lengths differ")
    if not (np.isin(y, (0, 1)).all() and np.isin(theta, (0, 1)).all()):
        raise ValueError("both vectors must be binary")
    return int(np.abs(y - theta).sum())


def holder_bound(weights: WeightVector, y: np.ndarray, theta_star: np.ndarray) -> float:
    """|u @ (Y - theta*)| / max|u|: a lower bound for the affected count.

    Requires the true counterfactual, so it is an oracle quantity used in
    simulations, not an estimator.
    """
    y = np.asarray(y, dtype=np.float64)
    theta_star = np.asarray(theta_star, dtype=np.float64)
    sup = weights.sup_norm()
    if sup == 0:
        raise ValueError("all weights are zero: no informative units")
    return float(abs(weights.u @ (y - theta_star)) / sup)


def point_estimate(weights: WeightVector, y: np.ndarray) -> dict:
    """Conservative data-only point estimate |u @ (Y - 1/2)| / max|u|.

    The 1/2 centering is the minimax choice and is deliberately not
    configurable.  Returns the estimate in units and as a fraction of the
    sample.
    """
    y = np.asarray(y, dtype=np.float64)
    sup = weights.sup_norm()
    if sup == 0:
        raise ValueError("all weights are zero: no informative units")
    units = float(abs(weights.u @ (y - 0.5)) / sup)
    return {"units": units, "fraction": units / len(y)}
