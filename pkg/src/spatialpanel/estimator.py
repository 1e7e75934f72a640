"""Fixed-effects QML estimation of the spatial model families.

Families: "sar" (spatial lag), "sem" (spatial error), "sac" (lag plus
error), "sdm" (lag plus spatially lagged regressors) and "sdm-c" (lag
plus cluster-masked lagged regressors). All fits run on the within-
transformed panel, so region intercepts are absorbed rather than
estimated.

The spatial coefficient is concentrated out: for a trial rho the
remaining coefficients come from OLS of the filtered response on the
design, the error variance from those residuals, and the profile
log-likelihood adds T times log|det(I - rho W)| evaluated from the
precomputed eigenvalues of W. The profile is maximized by Brent search
bracketed from a coarse grid, with ties resolved toward the smaller
|rho|. Standard errors come from the inverse negative numerical
Hessian of the full log-likelihood.

Sign convention: the structural operator is (I - rho W), so positive
rho means positive spatial feedback. The convention is recorded on
every FitResult.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import (
    DataFormatError,
    DimensionMismatchError,
    RankDeficientError,
    RhoOnBoundaryError,
    RhoOutOfBoundsError,
    UnknownVariableError,
)
from .panel import RegionPanel, _demean_by_region, _qr_rank
from .weights import ClusterIndicator, WeightMatrix, mask_by_cluster

LOGGER = logging.getLogger(__name__)

FAMILIES = ("sar", "sem", "sac", "sdm", "sdm-c")
LAG_FAMILIES = ("sar", "sdm", "sdm-c")

SIGN_CONVENTION = "structural operator I - rho*W"

_LAG_LABEL = re.compile(r"^lag(?:\[(?P<sector>.+)\])?:(?P<var>.+)$")

# fraction of the admissible span treated as "on the boundary"
_BOUNDARY_FRAC = 1e-3
_GRID_POINTS = 50
_BRENT_XATOL = 1e-8


@dataclass(frozen=True)
class ModelSpec:
    """What to fit: family, weight matrix, lag structure, dummies."""

    family: str
    weights: WeightMatrix
    clusters: tuple[ClusterIndicator, ...] = ()
    lagged_variables: tuple[str, ...] = ()
    extra_dummies: tuple[str, ...] = ()
    mask_convention: str = "column"
    error_weights: WeightMatrix | None = None

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise DataFormatError(
                f"unknown model family {self.family!r}, expected one of "
                f"{FAMILIES}"
            )
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(
            self, "lagged_variables", tuple(self.lagged_variables)
        )
        object.__setattr__(self, "extra_dummies", tuple(self.extra_dummies))
        if self.family == "sdm-c" and not self.clusters:
            raise DataFormatError("family 'sdm-c' needs at least one cluster")
        if self.family != "sdm-c" and self.clusters:
            raise DataFormatError(
                f"clusters are only meaningful for 'sdm-c', not "
                f"{self.family!r}"
            )
        if self.family not in ("sdm", "sdm-c") and self.lagged_variables:
            raise DataFormatError(
                f"lagged regressors are only meaningful for 'sdm'/'sdm-c', "
                f"not {self.family!r}"
            )
        if len(set(self.lagged_variables)) != len(self.lagged_variables):
            raise DataFormatError("lagged variable names are not unique")
        sectors = [c.sector_id for c in self.clusters]
        if len(set(sectors)) != len(sectors):
            raise DataFormatError("cluster sector ids are not unique")
        for c in self.clusters:
            if c.region_ids != self.weights.region_ids:
                raise DimensionMismatchError(
                    f"cluster {c.sector_id!r} regions do not match the "
                    "weight matrix"
                )
        if self.error_weights is not None and self.family != "sac":
            raise DataFormatError(
                "a second (error) weight matrix only applies to 'sac'"
            )
        if (
            self.error_weights is not None
            and self.error_weights.region_ids != self.weights.region_ids
        ):
            raise DimensionMismatchError(
                "error weight matrix regions do not match the lag matrix"
            )

    def sector_ids(self) -> tuple[str, ...]:
        return tuple(c.sector_id for c in self.clusters)


@dataclass(frozen=True)
class DesignMatrix:
    """Regressor block of one fit: values (n, t, p) plus column labels."""

    values: np.ndarray = field(repr=False)
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[2] != len(self.labels):
            raise DimensionMismatchError(
                f"design values shape {v.shape} does not match "
                f"{len(self.labels)} labels"
            )
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def p(self) -> int:
        return len(self.labels)

    def flat(self) -> np.ndarray:
        n, t, p = self.values.shape
        return self.values.reshape(n * t, p)


def _dummy_column(p: RegionPanel, dummy: str) -> np.ndarray:
    key, sep, value = dummy.partition("=")
    if not sep or key != "period":
        raise DataFormatError(
            f"dummy spec {dummy!r} not understood, expected 'period=<label>'"
        )
    if value not in p.period_labels:
        raise DataFormatError(
            f"dummy {dummy!r} references period {value!r} which is not in "
            f"the panel periods {p.period_labels}"
        )
    col = np.zeros((p.n, p.t))
    col[:, p.period_labels.index(value)] = 1.0
    return col


def build_design(p: RegionPanel, spec: ModelSpec) -> DesignMatrix:
    """Assemble the design: direct regressors, spatial-lag blocks, dummies.

    For "sdm" each lagged variable contributes one column W x_r; for
    "sdm-c" one column (W masked by cluster c) x_r per (cluster, lagged
    variable); spatial lags are applied period by period. Dummy columns
    are appended last and are never spatially lagged.
    """
    if p.region_ids != spec.weights.region_ids:
        raise DimensionMismatchError(
            "panel regions do not match the weight matrix regions"
        )
    for r in spec.lagged_variables:
        if r not in p.variable_names:
            raise UnknownVariableError(
                f"lagged variable {r!r} not in panel columns "
                f"{p.variable_names}"
            )
    blocks = [p.x]
    labels = list(p.variable_names)
    if spec.family == "sdm":
        for r in spec.lagged_variables:
            blocks.append((spec.weights.entries @ p.column(r))[:, :, None])
            labels.append(f"lag:{r}")
    elif spec.family == "sdm-c":
        for c in spec.clusters:
            masked = mask_by_cluster(spec.weights, c, spec.mask_convention)
            for r in spec.lagged_variables:
                blocks.append((masked.entries @ p.column(r))[:, :, None])
                labels.append(f"lag[{c.sector_id}]:{r}")
    for dummy in spec.extra_dummies:
        blocks.append(_dummy_column(p, dummy)[:, :, None])
        labels.append(f"dummy:{dummy}")
    return DesignMatrix(
        values=np.concatenate(blocks, axis=2), labels=tuple(labels)
    )


def log_det_factor(rho: float, w: WeightMatrix) -> float:
    """log|det(I - rho W)| from the cached eigenvalues of W."""
    lo, hi = w.interval()
    if not lo < rho < hi:
        raise RhoOutOfBoundsError(
            f"rho={rho!r} outside the admissible interval ({lo!r}, {hi!r})"
        )
    ev = w.eigenvalues
    return float(np.log(np.abs(1.0 - rho * ev)).sum().real)


def _regress(y: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least squares of y on z; returns (coefficients, residuals)."""
    if z.shape[1] == 0:
        return np.empty(0), y.copy()
    coefs, _, rank, _ = np.linalg.lstsq(z, y, rcond=None)
    if rank < z.shape[1]:
        raise RankDeficientError(
            f"design matrix has rank {rank} < {z.shape[1]} columns"
        )
    return coefs, y - z @ coefs


def concentrated_loglik(
    rho: float,
    yt: np.ndarray,
    wyt: np.ndarray,
    z: np.ndarray,
    w: WeightMatrix,
) -> float:
    """Profile log-likelihood of the spatial-lag family at a trial rho.

    Regresses (yt - rho * wyt) on z, forms sigma2 from the residual sum
    of squares over n*t, and adds the log-determinant once per period:

        const - (n*t / 2) log sigma2(rho) + t log|det(I - rho W)|

    yt, wyt and z are the within-transformed response, its spatial lag
    and the design, stacked flat. At rho = 0 the value equals the OLS
    log-likelihood of yt on z.
    """
    yt = np.asarray(yt, dtype=float).reshape(-1)
    wyt = np.asarray(wyt, dtype=float).reshape(-1)
    if yt.shape != wyt.shape or yt.size != z.shape[0]:
        raise DimensionMismatchError(
            "yt, wyt and z must share their observation dimension"
        )
    if yt.size % w.n:
        raise DimensionMismatchError(
            f"{yt.size} observations do not divide into {w.n} regions"
        )
    t_periods = yt.size // w.n
    nt = yt.size
    ld = log_det_factor(rho, w)  # also enforces the admissible interval
    _, resid = _regress(yt - rho * wyt, z)
    sigma2 = max(float(resid @ resid) / nt, 1e-300)
    const = -0.5 * nt * (math.log(2.0 * math.pi) + 1.0)
    return const - 0.5 * nt * math.log(sigma2) + t_periods * ld


def _maximize_profile(
    profile: Callable[[float], float], interval: tuple[float, float]
) -> float:
    """Grid-bracketed Brent maximization with small-|rho| tie-breaking."""
    lo = max(interval[0], -1e6)
    hi = min(interval[1], 1e6)
    span = hi - lo
    a, b = lo + 1e-6 * span, hi - 1e-6 * span
    grid = np.linspace(a, b, _GRID_POINTS)
    vals = np.array([profile(r) for r in grid])
    best = float(vals.max())
    near = np.nonzero(vals >= best - 1e-10 * (1.0 + abs(best)))[0]
    i = int(near[np.argmin(np.abs(grid[near]))])
    bracket = (grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)])
    res = minimize_scalar(
        lambda r: -profile(r),
        bounds=bracket,
        method="bounded",
        options={"xatol": _BRENT_XATOL},
    )
    candidates = [float(res.x), float(grid[i])]
    if a < 0.0 < b:
        candidates.append(0.0)
    values = [profile(r) for r in candidates]
    top = max(values)
    tied = [
        r
        for r, v in zip(candidates, values)
        if v >= top - 1e-10 * (1.0 + abs(top))
    ]
    rho = min(tied, key=abs)
    if min(rho - a, b - rho) < _BOUNDARY_FRAC * span:
        raise RhoOnBoundaryError(
            f"likelihood maximum at rho={rho:.6f} sits on the boundary of "
            f"the admissible interval ({lo:.6f}, {hi:.6f})"
        )
    return float(rho)


def _numerical_hessian(
    f: Callable[[np.ndarray], float], x: np.ndarray, steps: np.ndarray
) -> np.ndarray:
    """Central-difference Hessian of a scalar function."""
    k = x.size
    hess = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = steps[i]
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / steps[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = steps[j]
            quad = (
                f(x + ei + ej)
                - f(x + ei - ej)
                - f(x - ei + ej)
                + f(x - ei - ej)
            )
            hess[i, j] = hess[j, i] = quad / (4.0 * steps[i] * steps[j])
    return hess


def _covariance_from_hessian(hess: np.ndarray) -> tuple[np.ndarray, bool]:
    """Invert the negative Hessian, repairing to PSD when needed."""
    info = -0.5 * (hess + hess.T)
    repaired = False
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
        repaired = True
    cov = 0.5 * (cov + cov.T)
    ev, vec = np.linalg.eigh(cov)
    floor = -1e-12 * max(float(ev.max()), 1.0)
    if float(ev.min()) < floor:
        LOGGER.warning(
            "covariance repaired to PSD, clipped eigenvalues %s",
            ev[ev < 0.0],
        )
        cov = (vec * np.clip(ev, 0.0, None)) @ vec.T
        cov = 0.5 * (cov + cov.T)
        repaired = True
    return cov, repaired


@dataclass(frozen=True)
class FitResult:
    """Point estimates, dispersion and diagnostics of one model fit."""

    family: str
    param_names: tuple[str, ...]
    estimates: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    sigma2: float
    sigma2_se: float
    loglik: float
    r2: float
    adj_r2: float
    fixed_effects: dict[str, float]
    rho_interval: tuple[float, float]
    spec: ModelSpec
    n: int
    t: int
    dep_name: str
    variable_names: tuple[str, ...]
    design_labels: tuple[str, ...]
    log_transformed: tuple[str, ...] = ()
    sign_convention: str = SIGN_CONVENTION
    covariance_repaired: bool = False
    theta_fixed: float | None = None

    def index_of(self, name: str) -> int:
        try:
            return self.param_names.index(name)
        except ValueError:
            raise UnknownVariableError(
                f"no parameter named {name!r} in {self.param_names}"
            ) from None

    def coef(self, name: str) -> float:
        return float(self.estimates[self.index_of(name)])

    def se(self, name: str) -> float:
        return float(self.std_errors[self.index_of(name)])

    def tstat(self, name: str) -> float:
        return float(self.t_stats[self.index_of(name)])

    @property
    def rho(self) -> float:
        return self.coef("rho")

    @property
    def theta(self) -> float | None:
        if "theta" in self.param_names:
            return self.coef("theta")
        return self.theta_fixed

    @property
    def beta(self) -> dict[str, float]:
        return {v: self.coef(v) for v in self.variable_names}

    @property
    def gamma(self) -> dict[tuple[str | None, str], float]:
        out: dict[tuple[str | None, str], float] = {}
        for name in self.design_labels:
            m = _LAG_LABEL.match(name)
            if m:
                out[(m.group("sector"), m.group("var"))] = self.coef(name)
        return out

    @property
    def dummy_coefficients(self) -> dict[str, float]:
        return {
            name: self.coef(name)
            for name in self.design_labels
            if name.startswith("dummy:")
        }

    def summary(self) -> str:
        """Text table: one row per coefficient with its t-statistic."""
        lines = [
            f"model: {self.family} (fixed-effects QML)",
            f"dependent: {self.dep_name}"
            + (" (log)" if self.dep_name in self.log_transformed else ""),
            f"observations: {self.n} regions x {self.t} periods",
            f"R-squared: {self.r2:.4f}    adj. R-squared: {self.adj_r2:.4f}",
            f"log-likelihood: {self.loglik:.4f}    sigma2: {self.sigma2:.6g}",
            "",
        ]
        direct = list(self.variable_names)
        dummies = [x for x in self.design_labels if x.startswith("dummy:")]
        spatial = ["rho"] + (["theta"] if "theta" in self.param_names else [])
        lags = [x for x in self.design_labels if _LAG_LABEL.match(x)]
        width = max(
            (len(x) for x in self.param_names), default=8
        )
        for name in direct + dummies + spatial + lags:
            lines.append(
                f"{name:<{width}}  {self.coef(name):>10.4f}  "
                f"({self.tstat(name):.4f})"
            )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "t": self.t,
            "dep_name": self.dep_name,
            "param_names": list(self.param_names),
            "estimates": self.estimates.tolist(),
            "std_errors": self.std_errors.tolist(),
            "t_stats": self.t_stats.tolist(),
            "covariance": self.covariance.tolist(),
            "sigma2": self.sigma2,
            "sigma2_se": self.sigma2_se,
            "loglik": self.loglik,
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "fixed_effects": self.fixed_effects,
            "rho_interval": list(self.rho_interval),
            "variable_names": list(self.variable_names),
            "design_labels": list(self.design_labels),
            "log_transformed": list(self.log_transformed),
            "sign_convention": self.sign_convention,
            "covariance_repaired": self.covariance_repaired,
            "theta_fixed": self.theta_fixed,
            "spec": _spec_to_dict(self.spec),
        }

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            family=d["family"],
            param_names=tuple(d["param_names"]),
            estimates=np.asarray(d["estimates"], dtype=float),
            covariance=np.asarray(d["covariance"], dtype=float),
            std_errors=np.asarray(d["std_errors"], dtype=float),
            t_stats=np.asarray(d["t_stats"], dtype=float),
            sigma2=float(d["sigma2"]),
            sigma2_se=float(d["sigma2_se"]),
            loglik=float(d["loglik"]),
            r2=float(d["r2"]),
            adj_r2=float(d["adj_r2"]),
            fixed_effects={k: float(v) for k, v in d["fixed_effects"].items()},
            rho_interval=tuple(d["rho_interval"]),
            spec=_spec_from_dict(d["spec"]),
            n=int(d["n"]),
            t=int(d["t"]),
            dep_name=d["dep_name"],
            variable_names=tuple(d["variable_names"]),
            design_labels=tuple(d["design_labels"]),
            log_transformed=tuple(d["log_transformed"]),
            sign_convention=d["sign_convention"],
            covariance_repaired=bool(d["covariance_repaired"]),
            theta_fixed=d["theta_fixed"],
        )

    @classmethod
    def from_json(cls, path: str) -> "FitResult":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _weights_to_dict(w: WeightMatrix) -> dict:
    return {
        "region_ids": list(w.region_ids),
        "entries": w.entries.tolist(),
        "metric": w.metric,
        "exponent": w.exponent,
        "normalization": w.normalization,
    }


def _weights_from_dict(d: dict) -> WeightMatrix:
    return WeightMatrix(
        region_ids=tuple(d["region_ids"]),
        entries=np.asarray(d["entries"], dtype=float),
        metric=d["metric"],
        exponent=d["exponent"],
        normalization=d["normalization"],
    )


def _spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "family": spec.family,
        "weights": _weights_to_dict(spec.weights),
        "clusters": [
            {"sector_id": c.sector_id, "membership": c.membership.tolist()}
            for c in spec.clusters
        ],
        "lagged_variables": list(spec.lagged_variables),
        "extra_dummies": list(spec.extra_dummies),
        "mask_convention": spec.mask_convention,
        "error_weights": (
            None
            if spec.error_weights is None
            else _weights_to_dict(spec.error_weights)
        ),
    }


def _spec_from_dict(d: dict) -> ModelSpec:
    w = _weights_from_dict(d["weights"])
    clusters = tuple(
        ClusterIndicator(
            sector_id=c["sector_id"],
            region_ids=w.region_ids,
            membership=np.asarray(c["membership"], dtype=float),
        )
        for c in d["clusters"]
    )
    return ModelSpec(
        family=d["family"],
        weights=w,
        clusters=clusters,
        lagged_variables=tuple(d["lagged_variables"]),
        extra_dummies=tuple(d["extra_dummies"]),
        mask_convention=d["mask_convention"],
        error_weights=(
            None
            if d["error_weights"] is None
            else _weights_from_dict(d["error_weights"])
        ),
    )


def _finalize_fit(
    p: RegionPanel,
    spec: ModelSpec,
    design: DesignMatrix,
    param_names: Sequence[str],
    estimates: np.ndarray,
    sigma2_ml: float,
    loglik: float,
    loglik_fn: Callable[[np.ndarray], float],
    resid: np.ndarray,
    yt: np.ndarray,
    alpha: np.ndarray,
    theta_fixed: float | None = None,
) -> FitResult:
    """Shared tail of every family fit: Hessian, dispersion, R2."""
    nt = p.nobs
    pcols = design.p
    df = nt - p.n - pcols
    if df <= 0:
        raise DataFormatError(
            f"not enough observations: n*t={nt}, n={p.n}, design "
            f"columns={pcols}"
        )
    full = np.concatenate([estimates, [sigma2_ml]])
    steps = 1e-5 * np.maximum(np.abs(full), 1.0)
    steps[-1] = 1e-5 * max(sigma2_ml, 1e-30)
    hess = _numerical_hessian(loglik_fn, full, steps)
    cov_all, repaired = _covariance_from_hessian(hess)
    cov = cov_all[:-1, :-1]
    se = np.sqrt(np.clip(np.diagonal(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstats = np.where(se > 0.0, estimates / se, np.inf * np.sign(estimates))
    rss = float(resid @ resid)
    tss = float(yt @ yt)
    r2 = 1.0 - rss / tss if tss > 0.0 else math.nan
    denom = nt - p.n - pcols - 1
    adj = 1.0 - (1.0 - r2) * (nt - 1) / denom if denom > 0 else math.nan
    scale = nt / df
    sigma2_se = scale * math.sqrt(max(cov_all[-1, -1], 0.0))
    return FitResult(
        family=spec.family,
        param_names=tuple(param_names),
        estimates=estimates,
        covariance=cov,
        std_errors=se,
        t_stats=tstats,
        sigma2=scale * sigma2_ml,
        sigma2_se=sigma2_se,
        loglik=loglik,
        r2=r2,
        adj_r2=adj,
        fixed_effects={
            r: float(a) for r, a in zip(p.region_ids, alpha)
        },
        rho_interval=spec.weights.interval(),
        spec=spec,
        n=p.n,
        t=p.t,
        dep_name=p.dep_name,
        variable_names=p.variable_names,
        design_labels=design.labels,
        log_transformed=p.log_transformed,
        covariance_repaired=repaired,
        theta_fixed=theta_fixed,
    )


def _within_pieces(p: RegionPanel, design: DesignMatrix):
    """Within-transform the response and design, returning flat arrays."""
    yt = _demean_by_region(p.y).reshape(-1)
    zt = _demean_by_region(design.values).reshape(p.nobs, design.p)
    if design.p:
        _qr_rank(zt, design.labels)
    return yt, zt


def _fit_lag_family(p: RegionPanel, spec: ModelSpec) -> FitResult:
    design = build_design(p, spec)
    yt, zt = _within_pieces(p, design)
    w = spec.weights
    wy = w.entries @ p.y
    wyt = _demean_by_region(wy).reshape(-1)
    nt = p.nobs

    def profile(rho: float) -> float:
        return concentrated_loglik(rho, yt, wyt, zt, w)

    rho = _maximize_profile(profile, w.interval())
    delta, resid = _regress(yt - rho * wyt, zt)
    sigma2_ml = max(float(resid @ resid) / nt, 1e-300)
    loglik = profile(rho)

    def loglik_fn(v: np.ndarray) -> float:
        r, d, s2 = v[0], v[1:-1], v[-1]
        e = yt - r * wyt - (zt @ d if d.size else 0.0)
        return (
            -0.5 * nt * math.log(2.0 * math.pi * s2)
            - float(e @ e) / (2.0 * s2)
            + p.t * log_det_factor(r, w)
        )

    zd = (design.flat() @ delta).reshape(p.n, p.t) if design.p else 0.0
    alpha = (p.y - rho * wy - zd).mean(axis=1)
    return _finalize_fit(
        p=p,
        spec=spec,
        design=design,
        param_names=("rho",) + design.labels,
        estimates=np.concatenate([[rho], delta]),
        sigma2_ml=sigma2_ml,
        loglik=loglik,
        loglik_fn=loglik_fn,
        resid=resid,
        yt=yt,
        alpha=alpha,
    )


def fit_sem(p: RegionPanel, spec: ModelSpec) -> FitResult:
    """QML fit of the spatial-error family (u = rho W u + eps)."""
    if spec.family != "sem":
        raise DataFormatError(f"fit_sem got family {spec.family!r}")
    design = build_design(p, spec)
    yt, zt = _within_pieces(p, design)
    w = spec.weights
    n, t, nt = p.n, p.t, p.nobs
    y2 = yt.reshape(n, t)
    z3 = zt.reshape(n, t, design.p)
    wy = (w.entries @ y2).reshape(-1)
    wz = (
        np.einsum("ij,jtp->itp", w.entries, z3).reshape(nt, design.p)
        if design.p
        else zt
    )

    def profile(rho: float) -> float:
        ld = log_det_factor(rho, w)
        _, resid = _regress(yt - rho * wy, zt - rho * wz)
        s2 = max(float(resid @ resid) / nt, 1e-300)
        const = -0.5 * nt * (math.log(2.0 * math.pi) + 1.0)
        return const - 0.5 * nt * math.log(s2) + t * ld

    rho = _maximize_profile(profile, w.interval())
    beta, resid = _regress(yt - rho * wy, zt - rho * wz)
    sigma2_ml = max(float(resid @ resid) / nt, 1e-300)
    loglik = profile(rho)

    def loglik_fn(v: np.ndarray) -> float:
        r, b, s2 = v[0], v[1:-1], v[-1]
        u = (yt - (zt @ b if b.size else 0.0)).reshape(n, t)
        e = (u - r * (w.entries @ u)).reshape(-1)
        return (
            -0.5 * nt * math.log(2.0 * math.pi * s2)
            - float(e @ e) / (2.0 * s2)
            + t * log_det_factor(r, w)
        )

    zd = (design.flat() @ beta).reshape(n, t) if design.p else 0.0
    alpha = (p.y - zd).mean(axis=1)
    return _finalize_fit(
        p=p,
        spec=spec,
        design=design,
        param_names=("rho",) + design.labels,
        estimates=np.concatenate([[rho], beta]),
        sigma2_ml=sigma2_ml,
        loglik=loglik,
        loglik_fn=loglik_fn,
        resid=resid,
        yt=yt,
        alpha=alpha,
    )


def fit_sac(
    p: RegionPanel, spec: ModelSpec, theta: float | None = None
) -> FitResult:
    """QML fit of the combined lag-plus-error family.

    y = rho W1 y + Z beta + u with u = theta W2 u + eps. W2 defaults to
    W1. Passing theta pins the error coefficient instead of estimating
    it (theta = 0 reduces the model to the plain spatial lag).
    """
    if spec.family != "sac":
        raise DataFormatError(f"fit_sac got family {spec.family!r}")
    design = build_design(p, spec)
    yt, zt = _within_pieces(p, design)
    w1 = spec.weights
    w2 = spec.error_weights if spec.error_weights is not None else w1
    n, t, nt = p.n, p.t, p.nobs
    y2 = yt.reshape(n, t)
    z3 = zt.reshape(n, t, design.p)
    a1 = (w1.entries @ y2).reshape(-1)  # W1 y
    b2 = (w2.entries @ y2).reshape(-1)  # W2 y
    c12 = (w2.entries @ (w1.entries @ y2)).reshape(-1)  # W2 W1 y
    w2z = (
        np.einsum("ij,jtp->itp", w2.entries, z3).reshape(nt, design.p)
        if design.p
        else zt
    )
    const = -0.5 * nt * (math.log(2.0 * math.pi) + 1.0)

    def profile2(rho: float, th: float) -> float:
        ld = log_det_factor(rho, w1) + log_det_factor(th, w2)
        ys = yt - rho * a1 - th * b2 + rho * th * c12
        zs = zt - th * w2z
        _, resid = _regress(ys, zs)
        s2 = max(float(resid @ resid) / nt, 1e-300)
        return const - 0.5 * nt * math.log(s2) + t * ld

    lo1, hi1 = w1.interval()
    lo2, hi2 = w2.interval()
    if theta is None:
        span1, span2 = hi1 - lo1, hi2 - lo2
        a, b = lo1 + 1e-6 * span1, hi1 - 1e-6 * span1
        c, d = lo2 + 1e-6 * span2, hi2 - 1e-6 * span2
        g1 = np.linspace(a, b, 15)
        g2 = np.linspace(c, d, 15)
        vals = np.array([[profile2(r, th) for th in g2] for r in g1])
        i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
        res = minimize(
            lambda v: -profile2(v[0], v[1]),
            x0=np.array([g1[i], g2[j]]),
            method="L-BFGS-B",
            bounds=[(a, b), (c, d)],
            options={"ftol": 1e-14, "gtol": 1e-10},
        )
        rho, th = float(res.x[0]), float(res.x[1])
        for value, low, high, name in (
            (rho, a, b, "rho"),
            (th, c, d, "theta"),
        ):
            if min(value - low, high - value) < _BOUNDARY_FRAC * (high - low):
                raise RhoOnBoundaryError(
                    f"likelihood maximum for {name} at {value:.6f} sits on "
                    "the boundary of its admissible interval"
                )
        param_names = ("rho", "theta") + design.labels
        theta_fixed = None
    else:
        th = float(theta)
        if not lo2 < th < hi2:
            raise RhoOutOfBoundsError(
                f"pinned theta={th} outside the admissible interval "
                f"({lo2}, {hi2})"
            )
        rho = _maximize_profile(
            lambda r: profile2(r, th), (lo1, hi1)
        )
        param_names = ("rho",) + design.labels
        theta_fixed = th

    ys = yt - rho * a1 - th * b2 + rho * th * c12
    beta, resid = _regress(ys, zt - th * w2z)
    sigma2_ml = max(float(resid @ resid) / nt, 1e-300)
    loglik = profile2(rho, th)

    if theta is None:

        def loglik_fn(v: np.ndarray) -> float:
            r, t2, b, s2 = v[0], v[1], v[2:-1], v[-1]
            e1 = (yt - r * a1 - (zt @ b if b.size else 0.0)).reshape(n, t)
            e = (e1 - t2 * (w2.entries @ e1)).reshape(-1)
            return (
                -0.5 * nt * math.log(2.0 * math.pi * s2)
                - float(e @ e) / (2.0 * s2)
                + t * (log_det_factor(r, w1) + log_det_factor(t2, w2))
            )

        estimates = np.concatenate([[rho, th], beta])
    else:

        def loglik_fn(v: np.ndarray) -> float:
            r, b, s2 = v[0], v[1:-1], v[-1]
            e1 = (yt - r * a1 - (zt @ b if b.size else 0.0)).reshape(n, t)
            e = (e1 - th * (w2.entries @ e1)).reshape(-1)
            return (
                -0.5 * nt * math.log(2.0 * math.pi * s2)
                - float(e @ e) / (2.0 * s2)
                + t * (log_det_factor(r, w1) + log_det_factor(th, w2))
            )

        estimates = np.concatenate([[rho], beta])

    wy_raw = w1.entries @ p.y
    zd = (design.flat() @ beta).reshape(n, t) if design.p else 0.0
    alpha = (p.y - rho * wy_raw - zd).mean(axis=1)
    return _finalize_fit(
        p=p,
        spec=spec,
        design=design,
        param_names=param_names,
        estimates=estimates,
        sigma2_ml=sigma2_ml,
        loglik=loglik,
        loglik_fn=loglik_fn,
        resid=resid,
        yt=yt,
        alpha=alpha,
        theta_fixed=theta_fixed,
    )


def fit(p: RegionPanel, spec: ModelSpec) -> FitResult:
    """Fit the family named in the spec on the within-transformed panel."""
    if spec.family in LAG_FAMILIES:
        return _fit_lag_family(p, spec)
    if spec.family == "sem":
        return fit_sem(p, spec)
    if spec.family == "sac":
        return fit_sac(p, spec)
    raise DataFormatError(f"unknown family {spec.family!r}")
