"""Balanced region-by-period panels and the classical panel estimators.

The panel is stored dense: y has shape (n, t) and the regressor block
has shape (n, t, k), both ordered by the region and period label
tuples. Stacked (flat) views use region-major order, so region i
occupies rows i*t .. i*t + t - 1.

Estimators: pooled OLS, the within (fixed effects) estimator, and
Swamy-Arora feasible GLS random effects. The Hausman comparison over
these lives in :mod:`spatialpanel.inference`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.linalg import qr, solve_triangular

from .errors import (
    AllVariablesTimeInvariantError,
    DataFormatError,
    DimensionMismatchError,
    RankDeficientError,
    UnknownVariableError,
)

LOGGER = logging.getLogger(__name__)

PANEL_INDEX_COLUMNS = ("region_id", "period")

# relative pivot threshold below which a QR column counts as collinear
_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class RegionPanel:
    """Balanced panel of one dependent and k regressor variables."""

    region_ids: tuple[str, ...]
    period_labels: tuple[str, ...]
    y: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)
    variable_names: tuple[str, ...]
    dep_name: str = "y"
    log_transformed: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ids = tuple(str(r) for r in self.region_ids)
        periods = tuple(str(p) for p in self.period_labels)
        object.__setattr__(self, "region_ids", ids)
        object.__setattr__(self, "period_labels", periods)
        if len(set(ids)) != len(ids):
            raise DataFormatError("region ids are not unique")
        if len(set(periods)) != len(periods):
            raise DataFormatError("period labels are not unique")
        names = tuple(str(v) for v in self.variable_names)
        object.__setattr__(self, "variable_names", names)
        if len(set(names)) != len(names):
            raise DataFormatError("variable names are not unique")
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        n, t = len(ids), len(periods)
        if y.shape != (n, t):
            raise DimensionMismatchError(
                f"y has shape {y.shape}, expected {(n, t)}"
            )
        if x.shape != (n, t, len(names)):
            raise DimensionMismatchError(
                f"x has shape {x.shape}, expected {(n, t, len(names))}"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise DataFormatError("panel contains non-finite values")
        y = y.copy()
        x = x.copy()
        y.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return len(self.region_ids)

    @property
    def t(self) -> int:
        return len(self.period_labels)

    @property
    def k(self) -> int:
        return len(self.variable_names)

    @property
    def nobs(self) -> int:
        return self.n * self.t

    def column(self, name: str) -> np.ndarray:
        """The (n, t) values of one regressor variable."""
        try:
            k = self.variable_names.index(name)
        except ValueError:
            raise UnknownVariableError(
                f"variable {name!r} not in panel columns {self.variable_names}"
            ) from None
        return self.x[:, :, k]

    def y_flat(self) -> np.ndarray:
        return self.y.reshape(-1)

    def x_flat(self) -> np.ndarray:
        return self.x.reshape(self.nobs, self.k)


@dataclass(frozen=True)
class OlsResult:
    """Least-squares output shared by the pooled, within and RE paths."""

    method: str
    variable_names: tuple[str, ...]
    coefficients: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    sigma2: float
    residuals: np.ndarray = field(repr=False)
    nobs: int = 0
    df_resid: int = 0
    fixed_effects: dict[str, float] | None = None
    dropped: tuple[str, ...] = ()
    theta: float | None = None
    sigma2_alpha: float | None = None
    sigma2_eps: float | None = None
    variance_clamped: bool = False

    def _index(self, name: str) -> int:
        try:
            return self.variable_names.index(name)
        except ValueError:
            raise UnknownVariableError(
                f"no coefficient named {name!r} in {self.variable_names}"
            ) from None

    def coef(self, name: str) -> float:
        return float(self.coefficients[self._index(name)])

    def se(self, name: str) -> float:
        return float(self.std_errors[self._index(name)])


def _demean_by_region(a: np.ndarray) -> np.ndarray:
    """Subtract per-region time means; region-constant blocks become 0."""
    m = a.mean(axis=1, keepdims=True)
    out = a - m
    constant = a.max(axis=1, keepdims=True) == a.min(axis=1, keepdims=True)
    return np.where(np.broadcast_to(constant, out.shape), 0.0, out)


def within_transform(p: RegionPanel) -> RegionPanel:
    """Demean every variable (and y) by its region mean over periods.

    Time-invariant columns become exactly zero. The transformation is
    idempotent up to floating-point noise.
    """
    return replace(p, y=_demean_by_region(p.y), x=_demean_by_region(p.x))


def _qr_rank(x: np.ndarray, names: Sequence[str]):
    """Pivoted QR with a rank check naming the collinear columns."""
    q, r, piv = qr(x, mode="economic", pivoting=True)
    diag = np.abs(np.diagonal(r))
    tol = _RANK_RTOL * (diag[0] if diag.size and diag[0] > 0.0 else 1.0)
    rank = int((diag > tol).sum())
    if rank < x.shape[1]:
        bad = tuple(names[k] for k in piv[rank:])
        raise RankDeficientError(
            f"regressor matrix is rank deficient, collinear columns: {bad}",
            columns=bad,
        )
    return q, r, piv


def _ols(
    y: np.ndarray,
    x: np.ndarray,
    names: Sequence[str],
    df_resid: int,
    method: str,
) -> OlsResult:
    y = np.asarray(y, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise DimensionMismatchError(
            f"X has shape {x.shape} against {y.size} observations"
        )
    if df_resid <= 0:
        raise DataFormatError(
            f"non-positive residual degrees of freedom ({df_resid})"
        )
    q, r, piv = _qr_rank(x, names)
    k = x.shape[1]
    beta = np.zeros(k)
    beta[piv] = solve_triangular(r, q.T @ y)
    resid = y - x @ beta
    rss = float(resid @ resid)
    sigma2 = rss / df_resid
    rinv = solve_triangular(r, np.eye(k))
    gram_inv_piv = rinv @ rinv.T
    gram_inv = np.empty((k, k))
    gram_inv[np.ix_(piv, piv)] = gram_inv_piv
    cov = sigma2 * gram_inv
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diagonal(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0.0, beta / se, np.inf * np.sign(beta))
    return OlsResult(
        method=method,
        variable_names=tuple(names),
        coefficients=beta,
        covariance=cov,
        std_errors=se,
        t_stats=t,
        sigma2=sigma2,
        residuals=resid,
        nobs=y.size,
        df_resid=df_resid,
    )


def pooled_ols(
    y: np.ndarray, x: np.ndarray, names: Sequence[str] | None = None
) -> OlsResult:
    """OLS of a flat response on a flat regressor matrix.

    sigma2 uses nobs - k degrees of freedom; the single-regressor
    standard error therefore reduces to sqrt(sigma2 / sum (x - xbar)^2)
    when an intercept column is included.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if names is None:
        names = tuple(f"x{k}" for k in range(x.shape[1]))
    return _ols(y, x, names, df_resid=x.shape[0] - x.shape[1], method="pooled")


def fe_estimate(p: RegionPanel) -> OlsResult:
    """Within (fixed effects) estimator.

    Time-invariant regressors are dropped with a logged warning since
    the transformation zeroes them; estimation fails only when nothing
    remains. Degrees of freedom are n*t - n - k and the recovered fixed
    effects are alpha_i = ybar_i - xbar_i' beta.
    """
    wp = within_transform(p)
    keep = [
        k
        for k in range(p.k)
        if not np.all(wp.x[:, :, k] == 0.0)
    ]
    dropped = tuple(p.variable_names[k] for k in range(p.k) if k not in keep)
    if not keep:
        raise AllVariablesTimeInvariantError(
            "every regressor is time-invariant within regions; the within "
            f"estimator has nothing to fit (dropped: {dropped})"
        )
    if dropped:
        LOGGER.warning(
            "within transformation removed time-invariant regressors: %s",
            ", ".join(dropped),
        )
    names = tuple(p.variable_names[k] for k in keep)
    xw = wp.x[:, :, keep].reshape(p.nobs, len(keep))
    df = p.nobs - p.n - len(keep)
    res = _ols(wp.y_flat(), xw, names, df_resid=df, method="within")
    xbar = p.x[:, :, keep].mean(axis=1)
    alpha = p.y.mean(axis=1) - xbar @ res.coefficients
    return replace(
        res,
        fixed_effects={r: float(a) for r, a in zip(p.region_ids, alpha)},
        dropped=dropped,
    )


def re_estimate(p: RegionPanel) -> OlsResult:
    """Swamy-Arora random effects via feasible GLS.

    The idiosyncratic variance comes from the within residuals and the
    effect variance from the between regression on region means. A
    negative effect-variance estimate is clamped to zero with a logged
    diagnostic and flagged on the result.
    """
    fe = fe_estimate(p)
    sigma2_eps = fe.sigma2
    ybar = p.y.mean(axis=1)
    xbar = p.x.mean(axis=1)
    xb = np.column_stack([np.ones(p.n), xbar])
    df_between = p.n - p.k - 1
    if df_between <= 0:
        raise DataFormatError(
            f"between regression needs more regions than regressors "
            f"(n={p.n}, k={p.k})"
        )
    names_b = ("const",) + p.variable_names
    between = _ols(ybar, xb, names_b, df_resid=df_between, method="between")
    sigma2_alpha = between.sigma2 - sigma2_eps / p.t
    clamped = False
    if sigma2_alpha < 0.0:
        LOGGER.warning(
            "negative effect-variance estimate %.3e clamped to zero; the "
            "random-effects fit degenerates toward pooled OLS",
            sigma2_alpha,
        )
        sigma2_alpha = 0.0
        clamped = True
    theta = 1.0 - math.sqrt(sigma2_eps / (p.t * sigma2_alpha + sigma2_eps))
    ystar = (p.y - theta * ybar[:, None]).reshape(-1)
    xstar = (p.x - theta * xbar[:, None, :]).reshape(p.nobs, p.k)
    xstar = np.column_stack([np.full(p.nobs, 1.0 - theta), xstar])
    df = p.nobs - p.k - 1
    res = _ols(ystar, xstar, names_b, df_resid=df, method="re")
    # GLS covariance: the quasi-demeaned errors have variance sigma2_eps
    # under the component model, so the plug-in variance is the within
    # one, not the transformed-regression residual variance (which a
    # violated orthogonality assumption inflates).
    scale = sigma2_eps / res.sigma2 if res.sigma2 > 0.0 else 0.0
    cov = res.covariance * scale
    se = np.sqrt(np.diag(cov))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstats = np.where(
            se > 0.0,
            res.coefficients / np.where(se > 0.0, se, 1.0),
            np.inf * np.sign(res.coefficients),
        )
    return replace(
        res,
        covariance=cov,
        std_errors=se,
        t_stats=tstats,
        sigma2=sigma2_eps,
        theta=theta,
        sigma2_alpha=sigma2_alpha,
        sigma2_eps=sigma2_eps,
        variance_clamped=clamped,
    )


def _sorted_periods(values) -> list:
    vals = list(dict.fromkeys(values))
    try:
        return sorted(vals, key=float)
    except (TypeError, ValueError):
        return sorted(vals, key=str)


def load_panel_csv(
    path: str,
    dep: str | None = None,
    log_vars: Sequence[str] = (),
) -> RegionPanel:
    """Read a region_id,period,<var...> CSV into a balanced panel.

    Parameters
    ----------
    path : str
        UTF-8 CSV with comma separator and '.' decimal mark.
    dep : str, optional
        Which variable column is the dependent; defaults to the first
        one after region_id and period.
    log_vars : sequence of str
        Variables (possibly including the dependent) to log-transform
        at ingestion. Non-positive cells are rejected by name.
    """
    try:
        df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except Exception as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    for colname in PANEL_INDEX_COLUMNS:
        if colname not in df.columns:
            raise DataFormatError(
                f"{path}: missing required column {colname!r}"
            )
    var_cols = [c for c in df.columns if c not in PANEL_INDEX_COLUMNS]
    if not var_cols:
        raise DataFormatError(f"{path}: no variable columns found")
    if dep is None:
        dep = var_cols[0]
    if dep not in var_cols:
        raise UnknownVariableError(
            f"{path}: dependent variable {dep!r} not among columns {var_cols}"
        )
    for v in log_vars:
        if v not in var_cols:
            raise UnknownVariableError(
                f"{path}: --log variable {v!r} not among columns {var_cols}"
            )

    df = df.copy()
    df["region_id"] = df["region_id"].astype(str)
    df["period"] = df["period"].astype(str)
    regions = list(dict.fromkeys(df["region_id"]))
    periods = [str(p) for p in _sorted_periods(df["period"])]
    if df.duplicated(subset=list(PANEL_INDEX_COLUMNS)).any():
        bad = df[df.duplicated(subset=list(PANEL_INDEX_COLUMNS))].iloc[0]
        raise DataFormatError(
            f"{path}: duplicate row for region {bad['region_id']!r}, "
            f"period {bad['period']!r}"
        )
    if len(df) != len(regions) * len(periods):
        raise DataFormatError(
            f"{path}: unbalanced panel, {len(regions)} regions x "
            f"{len(periods)} periods needs {len(regions) * len(periods)} "
            f"rows, found {len(df)}"
        )

    cube = {}
    for v in var_cols:
        wide = df.pivot(index="region_id", columns="period", values=v)
        wide = wide.reindex(index=regions, columns=periods)
        if wide.isna().any().any():
            i, j = np.argwhere(wide.isna().to_numpy())[0]
            raise DataFormatError(
                f"{path}: missing value of {v!r} for region {regions[i]!r}, "
                f"period {periods[j]!r}"
            )
        vals = wide.to_numpy(dtype=float)
        if v in log_vars:
            if np.any(vals <= 0.0):
                i, j = np.argwhere(vals <= 0.0)[0]
                raise DataFormatError(
                    f"{path}: cannot log-transform {v!r}, non-positive value "
                    f"{vals[i, j]!r} at region {regions[i]!r}, period "
                    f"{periods[j]!r}"
                )
            vals = np.log(vals)
        cube[v] = vals

    x_names = tuple(v for v in var_cols if v != dep)
    x = (
        np.stack([cube[v] for v in x_names], axis=2)
        if x_names
        else np.empty((len(regions), len(periods), 0))
    )
    return RegionPanel(
        region_ids=tuple(regions),
        period_labels=tuple(periods),
        y=cube[dep],
        x=x,
        variable_names=x_names,
        dep_name=dep,
        log_transformed=tuple(v for v in var_cols if v in log_vars),
    )


def save_panel_csv(p: RegionPanel, path: str) -> None:
    """Write the panel in the long region_id,period,<var...> layout."""
    rows = {
        "region_id": np.repeat(p.region_ids, p.t),
        "period": np.tile(p.period_labels, p.n),
        p.dep_name: p.y_flat(),
    }
    for k, v in enumerate(p.variable_names):
        rows[v] = p.x[:, :, k].reshape(-1)
    pd.DataFrame(rows).to_csv(path, index=False)
