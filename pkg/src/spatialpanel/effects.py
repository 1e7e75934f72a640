"""Direct, indirect and total effect decomposition of a fitted model.

For a fitted spatial-lag family the marginal effect of regressor r is
the n-by-n matrix S_r = (I - rho W)^-1 (beta_r I + gamma_rc W_lag),
where W_lag is W for plain Durbin lags and the cluster-masked W for
cluster-specific lags. The average diagonal is the direct effect, the
average off-diagonal mass the indirect (spillover) effect, and their
sum the total effect; the identity total = direct + indirect holds
exactly because the total is constructed as that sum.

Dispersion comes from parametric simulation: coefficient vectors are
drawn from the multivariate normal implied by the fit covariance,
draws with an inadmissible rho are rejected, and each draw re-evaluates
the summary measures. Per-draw generators are seeded by a (seed, draw
counter) pair, so results do not depend on evaluation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataFormatError,
    NonPsdCovarianceError,
    RhoOutOfBoundsError,
    UnknownClusterError,
    UnknownVariableError,
)
from .estimator import FitResult
from .weights import mask_by_cluster

_MAX_REJECTIONS_PER_DRAW = 10_000


@dataclass(frozen=True)
class ImpactMatrix:
    """Dense matrix of marginal effects of one regressor."""

    variable: str
    cluster: str | None
    region_ids: tuple[str, ...]
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        n = len(self.region_ids)
        if v.shape != (n, n):
            raise DataFormatError(
                f"impact matrix shape {v.shape} does not match {n} regions"
            )
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return len(self.region_ids)


@dataclass(frozen=True)
class EffectsRow:
    """Point estimates and simulated dispersion for one (cluster, variable)."""

    cluster: str | None
    variable: str
    direct: float
    indirect: float
    total: float
    direct_mean: float
    indirect_mean: float
    total_mean: float
    direct_sd: float
    indirect_sd: float
    total_sd: float
    direct_t: float | None
    indirect_t: float | None
    total_t: float | None

    def __post_init__(self) -> None:
        if self.total != self.direct + self.indirect:
            raise DataFormatError(
                "total effect must equal direct + indirect exactly"
            )


@dataclass(frozen=True)
class EffectsTable:
    """All effect rows of one fit plus the simulation metadata."""

    rows: tuple[EffectsRow, ...]
    draws: int
    seed: int
    rejected_draws: int = 0

    def row(self, cluster: str | None, variable: str) -> EffectsRow:
        for r in self.rows:
            if r.cluster == cluster and r.variable == variable:
                return r
        raise UnknownVariableError(
            f"no effects row for cluster={cluster!r}, variable={variable!r}"
        )

    def render(self) -> str:
        def cell(value: float, t: float | None) -> str:
            ttxt = f"({t:.4f})" if t is not None else "(n/a)"
            return f"{value:>10.4f} {ttxt}"

        cw = max([len(r.cluster or "(none)") for r in self.rows] + [7])
        vw = max([len(r.variable) for r in self.rows] + [8])
        lines = [
            f"simulated effects dispersion: {self.draws} draws, "
            f"seed {self.seed}",
            f"{'cluster':<{cw}}  {'variable':<{vw}}  "
            f"{'direct':>22}  {'indirect':>22}  {'total':>22}",
        ]
        for r in self.rows:
            lines.append(
                f"{(r.cluster or '(none)'):<{cw}}  {r.variable:<{vw}}  "
                f"{cell(r.direct, r.direct_t):>22}  "
                f"{cell(r.indirect, r.indirect_t):>22}  "
                f"{cell(r.total, r.total_t):>22}"
            )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "draws": self.draws,
            "seed": self.seed,
            "rejected_draws": self.rejected_draws,
            "rows": [
                {
                    "cluster": r.cluster,
                    "variable": r.variable,
                    "direct": r.direct,
                    "indirect": r.indirect,
                    "total": r.total,
                    "direct_mean": r.direct_mean,
                    "indirect_mean": r.indirect_mean,
                    "total_mean": r.total_mean,
                    "direct_sd": r.direct_sd,
                    "indirect_sd": r.indirect_sd,
                    "total_sd": r.total_sd,
                    "direct_t": r.direct_t,
                    "indirect_t": r.indirect_t,
                    "total_t": r.total_t,
                }
                for r in self.rows
            ],
        }

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _check_rho(fit: FitResult, rho: float) -> None:
    lo, hi = fit.rho_interval
    if not lo < rho < hi:
        raise RhoOutOfBoundsError(
            f"rho={rho!r} outside the admissible interval ({lo!r}, {hi!r})"
        )


def _lag_term(
    fit: FitResult, variable: str, cluster: str | None
) -> tuple[float, np.ndarray | None]:
    """gamma coefficient and lag matrix entering S for this row."""
    if cluster is not None:
        if fit.family != "sdm-c":
            raise UnknownClusterError(
                f"model family {fit.family!r} has no clusters"
            )
        sectors = fit.spec.sector_ids()
        if cluster not in sectors:
            raise UnknownClusterError(
                f"unknown sector {cluster!r}, expected one of {sectors}"
            )
        gamma = fit.gamma.get((cluster, variable))
        if gamma is None:
            return 0.0, None
        c = fit.spec.clusters[sectors.index(cluster)]
        masked = mask_by_cluster(fit.spec.weights, c, fit.spec.mask_convention)
        return gamma, masked.entries
    if fit.family == "sdm":
        gamma = fit.gamma.get((None, variable))
        if gamma is None:
            return 0.0, None
        return gamma, fit.spec.weights.entries
    if fit.family == "sdm-c" and variable in fit.spec.lagged_variables:
        raise UnknownClusterError(
            f"variable {variable!r} carries cluster-specific lags; name a "
            "cluster or use aggregate_impact_matrix"
        )
    return 0.0, None


def impact_matrix(
    fit: FitResult, variable: str, cluster: str | None = None
) -> ImpactMatrix:
    """Dense S_r for one regressor (per cluster for the masked family).

    For the spatial-error family the mean equation has no feedback, so
    S_r is just beta_r times the identity.
    """
    if variable not in fit.variable_names:
        raise UnknownVariableError(
            f"variable {variable!r} not among regressors {fit.variable_names}"
        )
    n = fit.n
    beta_r = fit.beta[variable]
    if fit.family == "sem":
        if cluster is not None:
            raise UnknownClusterError(
                f"model family {fit.family!r} has no clusters"
            )
        values = beta_r * np.eye(n)
    else:
        gamma, lag = _lag_term(fit, variable, cluster)
        _check_rho(fit, fit.rho)
        b = beta_r * np.eye(n)
        if lag is not None:
            b = b + gamma * lag
        a = np.eye(n) - fit.rho * fit.spec.weights.entries
        values = np.linalg.solve(a, b)
    return ImpactMatrix(
        variable=variable,
        cluster=cluster,
        region_ids=fit.spec.weights.region_ids,
        values=values,
    )


def aggregate_impact_matrix(fit: FitResult, variable: str) -> ImpactMatrix:
    """S_r summed over all cluster lag terms of one regressor."""
    if fit.family != "sdm-c":
        raise DataFormatError(
            "aggregate impacts only apply to the cluster-masked family"
        )
    if variable not in fit.variable_names:
        raise UnknownVariableError(
            f"variable {variable!r} not among regressors {fit.variable_names}"
        )
    _check_rho(fit, fit.rho)
    n = fit.n
    b = fit.beta[variable] * np.eye(n)
    for c in fit.spec.clusters:
        gamma = fit.gamma.get((c.sector_id, variable))
        if gamma is not None:
            masked = mask_by_cluster(
                fit.spec.weights, c, fit.spec.mask_convention
            )
            b = b + gamma * masked.entries
    a = np.eye(n) - fit.rho * fit.spec.weights.entries
    return ImpactMatrix(
        variable=variable,
        cluster=None,
        region_ids=fit.spec.weights.region_ids,
        values=np.linalg.solve(a, b),
    )


def summary_measures(s: ImpactMatrix) -> dict[str, float]:
    """Average direct, indirect and total effects of one impact matrix.

    direct is the mean diagonal element, indirect the mean off-diagonal
    row mass, and total their sum (so the identity is exact).
    """
    n = s.n
    direct = float(np.trace(s.values)) / n
    # off-diagonal mass summed directly, so a diagonal impact matrix
    # reports an exact zero instead of subtraction roundoff
    off = s.values.copy()
    np.fill_diagonal(off, 0.0)
    indirect = float(off.sum()) / n
    return {
        "direct": direct,
        "indirect": indirect,
        "total": direct + indirect,
    }


def feedback_loop_share(s: ImpactMatrix, beta_r: float) -> float:
    """How much of the direct effect is spatial feedback: tr(S)/n - beta_r."""
    return float(np.trace(s.values)) / s.n - beta_r


def _effect_rows(fit: FitResult) -> list[tuple[str | None, str]]:
    rows: list[tuple[str | None, str]] = []
    if fit.family == "sdm-c":
        lagged = set(fit.spec.lagged_variables)
        for v in fit.variable_names:
            if v not in lagged:
                rows.append((None, v))
        for c in fit.spec.clusters:
            for v in fit.spec.lagged_variables:
                rows.append((c.sector_id, v))
    else:
        rows = [(None, v) for v in fit.variable_names]
    return rows


def _sd(values: np.ndarray) -> float:
    # identical draws have zero dispersion by definition; np.std would
    # report summation roundoff (~1 ulp) instead of an exact zero
    if values.size <= 1 or np.all(values == values[0]):
        return 0.0
    return float(values.std(ddof=1))


def effects_dispersion(
    fit: FitResult, draws: int = 1000, seed: int = 0
) -> EffectsTable:
    """Simulate the dispersion of every effect row of a fit.

    Coefficients are drawn from N(estimates, covariance); draws whose
    rho falls outside the admissible interval are rejected and redrawn.
    Given the seed the output is reproducible bit for bit regardless of
    how draws would be scheduled, because draw i uses its own generator
    derived from (seed, i).
    """
    if draws < 100:
        raise DataFormatError(f"need at least 100 draws, got {draws}")
    cov = fit.covariance
    ev, vec = np.linalg.eigh(0.5 * (cov + cov.T))
    if float(ev.min()) < -1e-8 * max(float(ev.max()), 1.0):
        raise NonPsdCovarianceError(
            f"fit covariance is not positive semidefinite "
            f"(min eigenvalue {float(ev.min()):.3e})"
        )
    factor = vec * np.sqrt(np.clip(ev, 0.0, None))
    rows = _effect_rows(fit)
    n = fit.n
    w = fit.spec.weights.entries
    lo, hi = fit.rho_interval
    ones = np.ones(n)

    # per-row lag machinery for the trace identities
    masks: dict[str, np.ndarray] = {}
    if fit.family == "sdm-c":
        for c in fit.spec.clusters:
            masks[c.sector_id] = mask_by_cluster(
                fit.spec.weights, c, fit.spec.mask_convention
            ).entries
    gamma_index: dict[tuple[str | None, str], int] = {}
    for (cluster, variable) in rows:
        if cluster is not None:
            label = f"lag[{cluster}]:{variable}"
        elif fit.family == "sdm" and variable in fit.spec.lagged_variables:
            label = f"lag:{variable}"
        else:
            label = None
        if label is not None:
            gamma_index[(cluster, variable)] = fit.index_of(label)

    est = fit.estimates
    rho_idx = fit.param_names.index("rho")
    var_idx = {v: fit.index_of(v) for v in fit.variable_names}

    direct_draws = np.empty((draws, len(rows)))
    total_draws = np.empty((draws, len(rows)))
    rejected = 0
    dim = est.size
    for i in range(draws):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(i,))
        )
        for _ in range(_MAX_REJECTIONS_PER_DRAW):
            v = est + factor @ rng.standard_normal(dim)
            if lo < v[rho_idx] < hi:
                break
            rejected += 1
        else:
            raise RhoOutOfBoundsError(
                f"no admissible rho draw after {_MAX_REJECTIONS_PER_DRAW} "
                f"attempts at draw {i}"
            )
        if fit.family == "sem":
            tr_ainv = float(n)
            sum_ainv = float(n)
            u = ones
        else:
            ainv = np.linalg.inv(np.eye(n) - v[rho_idx] * w)
            tr_ainv = float(np.trace(ainv))
            u = ones @ ainv
            sum_ainv = float(u.sum())
        for k, (cluster, variable) in enumerate(rows):
            beta_d = v[var_idx[variable]]
            tr_s = beta_d * tr_ainv
            sum_s = beta_d * sum_ainv
            g_idx = gamma_index.get((cluster, variable))
            if g_idx is not None:
                gamma_d = v[g_idx]
                m = masks[cluster] if cluster is not None else w
                tr_s += gamma_d * float((ainv * m.T).sum())
                sum_s += gamma_d * float(u @ (m @ ones))
            direct_draws[i, k] = tr_s / n
            total_draws[i, k] = sum_s / n

    indirect_draws = total_draws - direct_draws

    out = []
    for k, (cluster, variable) in enumerate(rows):
        point = summary_measures(impact_matrix(fit, variable, cluster))
        d_m = float(direct_draws[:, k].mean())
        i_m = float(indirect_draws[:, k].mean())
        d_sd = _sd(direct_draws[:, k])
        i_sd = _sd(indirect_draws[:, k])
        t_sd = _sd(total_draws[:, k])
        out.append(
            EffectsRow(
                cluster=cluster,
                variable=variable,
                direct=point["direct"],
                indirect=point["indirect"],
                total=point["direct"] + point["indirect"],
                direct_mean=d_m,
                indirect_mean=i_m,
                total_mean=d_m + i_m,
                direct_sd=d_sd,
                indirect_sd=i_sd,
                total_sd=t_sd,
                direct_t=d_m / d_sd if d_sd > 0.0 else None,
                indirect_t=i_m / i_sd if i_sd > 0.0 else None,
                total_t=(d_m + i_m) / t_sd if t_sd > 0.0 else None,
            )
        )
    return EffectsTable(
        rows=tuple(out), draws=draws, seed=seed, rejected_draws=rejected
    )
