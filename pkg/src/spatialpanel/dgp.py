"""Synthetic panel generation and Monte Carlo parameter recovery.

Regressors are i.i.d. standard normal. Region effects can be drawn
correlated with the region-mean regressor level (the lever that makes
a random-effects fit inconsistent). The dependent variable is built
from the reduced form of the requested family with a dense solve per
period, and every random ingredient comes from its own substream of
the master seed, so generation is reproducible and replication r of a
recovery run does not depend on how many replications run beside it.

The stored ``noise`` field holds the innovations implied by the stored
panel, recomputed through the structural equation after the reduced-
form solve. They differ from the raw normal draws only by solver
round-off, and plugging the panel back into the structural equation
reproduces them bit for bit.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DataFormatError, InadmissibleRhoError, SpatialPanelError
from .estimator import FAMILIES, FitResult, ModelSpec, fit
from .panel import RegionPanel
from .weights import (
    ClusterIndicator,
    Coordinate,
    WeightMatrix,
    build_contiguity,
    build_inverse_distance,
    mask_by_cluster,
    row_normalize,
)

LOGGER = logging.getLogger(__name__)

# substream indices off the master seed
_STREAM_WEIGHTS = 0
_STREAM_CLUSTERS = 1
_STREAM_X = 2
_STREAM_ALPHA = 3
_STREAM_NOISE = 4
# spawn prefix for per-replication seeds in run_recovery
_STREAM_REPLICATION = 100


@dataclass(frozen=True)
class WeightRecipe:
    """How a simulation builds its weight matrix."""

    kind: str = "ring"  # "ring" or "random-planar"
    exponent: float = 1.0
    normalize: str = "none"  # "none" or "row"

    def __post_init__(self) -> None:
        if self.kind not in ("ring", "random-planar"):
            raise DataFormatError(f"unknown weight recipe kind {self.kind!r}")
        if self.normalize not in ("none", "row"):
            raise DataFormatError(
                f"unknown normalize option {self.normalize!r}"
            )


@dataclass(frozen=True)
class ClusterRecipe:
    """One simulated sector: membership rule plus its lag coefficients."""

    sector_id: str
    gamma: tuple[float, ...]
    membership_prob: float = 0.3
    membership: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if self.membership is None and not 0.0 < self.membership_prob <= 1.0:
            raise DataFormatError(
                f"membership probability must be in (0, 1], got "
                f"{self.membership_prob}"
            )
        if self.membership is not None:
            m = tuple(int(v) for v in self.membership)
            if any(v not in (0, 1) for v in m):
                raise DataFormatError("explicit membership must be 0/1")
            object.__setattr__(self, "membership", m)


@dataclass(frozen=True)
class DgpConfig:
    """True parameters and construction recipes for one simulation."""

    family: str
    n: int
    t: int
    beta: tuple[float, ...]
    rho: float = 0.0
    theta: float = 0.0
    gamma: tuple[float, ...] | None = None
    clusters: tuple[ClusterRecipe, ...] = ()
    sigma: float = 1.0
    fe_spread: float = 1.0
    fe_x_corr: float = 0.0
    weight_recipe: WeightRecipe = WeightRecipe()
    seed: int = 0
    start_period: int = 2002

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise DataFormatError(f"unknown family {self.family!r}")
        if self.n < 2 or self.t < 2:
            raise DataFormatError(
                f"need n >= 2 and t >= 2, got n={self.n}, t={self.t}"
            )
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if not self.beta:
            raise DataFormatError("need at least one regressor coefficient")
        # sigma = 0 is allowed: it gives the exact-recovery case
        if self.sigma < 0.0:
            raise DataFormatError(f"sigma must be >= 0, got {self.sigma}")
        if self.fe_spread < 0.0:
            raise DataFormatError(
                f"fixed-effect spread must be >= 0, got {self.fe_spread}"
            )
        if not -1.0 <= self.fe_x_corr <= 1.0:
            raise DataFormatError(
                f"fe_x_corr must be in [-1, 1], got {self.fe_x_corr}"
            )
        if self.gamma is not None:
            g = tuple(float(v) for v in self.gamma)
            if self.family != "sdm":
                raise DataFormatError(
                    "plain lag coefficients only apply to family 'sdm'"
                )
            if len(g) != len(self.beta):
                raise DataFormatError(
                    f"gamma has {len(g)} entries for {len(self.beta)} "
                    "regressors"
                )
            object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "clusters", tuple(self.clusters))
        if self.family == "sdm-c":
            if not self.clusters:
                raise DataFormatError("family 'sdm-c' needs cluster recipes")
        elif self.clusters:
            raise DataFormatError(
                f"cluster recipes only apply to 'sdm-c', not {self.family!r}"
            )
        for c in self.clusters:
            if len(c.gamma) != len(self.beta):
                raise DataFormatError(
                    f"cluster {c.sector_id!r} gamma has {len(c.gamma)} "
                    f"entries for {len(self.beta)} regressors"
                )
            if c.membership is not None and len(c.membership) != self.n:
                raise DataFormatError(
                    f"cluster {c.sector_id!r} membership length "
                    f"{len(c.membership)} does not match n={self.n}"
                )
        if self.family != "sac" and self.theta != 0.0:
            raise DataFormatError(
                "an error-lag coefficient only applies to family 'sac'"
            )

    @property
    def k(self) -> int:
        return len(self.beta)

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(f"x{i + 1}" for i in range(self.k))


@dataclass(frozen=True)
class SyntheticData:
    """One generated panel with everything needed to refit or export it."""

    panel: RegionPanel
    weights: WeightMatrix
    base_weights: WeightMatrix
    coords: tuple[Coordinate, ...] | None
    clusters: tuple[ClusterIndicator, ...]
    alpha: np.ndarray = field(repr=False)
    noise: np.ndarray = field(repr=False)
    config: DgpConfig

    def model_spec(self, mask_convention: str = "column") -> ModelSpec:
        """The matching estimation spec for the generated data."""
        lagged = (
            self.panel.variable_names
            if self.config.family in ("sdm", "sdm-c")
            else ()
        )
        return ModelSpec(
            family=self.config.family,
            weights=self.weights,
            clusters=self.clusters,
            lagged_variables=lagged,
            mask_convention=mask_convention,
        )


def _rng(seed: int, stream: int, *rest: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(stream, *rest))
    )


def _build_weights(
    cfg: DgpConfig,
) -> tuple[WeightMatrix, WeightMatrix, tuple[Coordinate, ...] | None]:
    recipe = cfg.weight_recipe
    coords: tuple[Coordinate, ...] | None = None
    if recipe.kind == "ring":
        pairs = [(i, (i + 1) % cfg.n) for i in range(cfg.n)]
        base = build_contiguity(cfg.n, pairs)
    else:
        rng = _rng(cfg.seed, _STREAM_WEIGHTS)
        xy = rng.random((cfg.n, 2))
        coords = tuple(
            Coordinate(region_id=f"r{i}", x=float(xy[i, 0]), y=float(xy[i, 1]))
            for i in range(cfg.n)
        )
        base = build_inverse_distance(
            coords, exponent=recipe.exponent, metric="euclidean"
        )
    w = row_normalize(base) if recipe.normalize == "row" else base
    return w, base, coords


def _build_clusters(
    cfg: DgpConfig, region_ids: tuple[str, ...]
) -> tuple[ClusterIndicator, ...]:
    out = []
    for idx, recipe in enumerate(cfg.clusters):
        if recipe.membership is not None:
            member = np.asarray(recipe.membership, dtype=float)
        else:
            rng = _rng(cfg.seed, _STREAM_CLUSTERS, idx)
            for _ in range(100):
                member = (rng.random(cfg.n) < recipe.membership_prob).astype(
                    float
                )
                if member.sum() >= 1.0:
                    break
            else:
                raise DataFormatError(
                    f"could not draw a non-empty cluster {recipe.sector_id!r}"
                )
        out.append(
            ClusterIndicator(
                sector_id=recipe.sector_id,
                region_ids=region_ids,
                membership=member,
            )
        )
    return tuple(out)


def _check_admissible(cfg: DgpConfig, w: WeightMatrix) -> None:
    lo, hi = w.interval()
    if not lo < cfg.rho < hi:
        raise InadmissibleRhoError(
            f"true rho={cfg.rho} outside the admissible interval "
            f"({lo:.6f}, {hi:.6f}) of the generated weight matrix"
        )
    if cfg.family == "sac" and not lo < cfg.theta < hi:
        raise InadmissibleRhoError(
            f"true theta={cfg.theta} outside the admissible interval "
            f"({lo:.6f}, {hi:.6f}) of the generated weight matrix"
        )


def _lag_part(
    cfg: DgpConfig,
    w: WeightMatrix,
    clusters: Sequence[ClusterIndicator],
    x: np.ndarray,
) -> np.ndarray:
    """Sum of spatially lagged regressor terms, (n, t)."""
    part = np.zeros((cfg.n, cfg.t))
    if cfg.family == "sdm" and cfg.gamma is not None:
        part = part + w.entries @ (x @ np.asarray(cfg.gamma))
    elif cfg.family == "sdm-c":
        for recipe, c in zip(cfg.clusters, clusters):
            masked = mask_by_cluster(w, c, "column")
            part = part + masked.entries @ (x @ np.asarray(recipe.gamma))
    return part


def structural_residuals(
    cfg: DgpConfig,
    w: WeightMatrix,
    clusters: Sequence[ClusterIndicator],
    x: np.ndarray,
    y: np.ndarray,
    alpha: np.ndarray,
) -> np.ndarray:
    """Innovations implied by a panel under the structural equation."""
    beta = np.asarray(cfg.beta)
    mean_part = alpha[:, None] + x @ beta + _lag_part(cfg, w, clusters, x)
    if cfg.family in ("sar", "sdm", "sdm-c"):
        return y - cfg.rho * (w.entries @ y) - mean_part
    if cfg.family == "sem":
        u = y - mean_part
        return u - cfg.rho * (w.entries @ u)
    if cfg.family == "sac":
        e1 = y - cfg.rho * (w.entries @ y) - mean_part
        return e1 - cfg.theta * (w.entries @ e1)
    raise DataFormatError(f"unknown family {cfg.family!r}")


def generate(cfg: DgpConfig) -> SyntheticData:
    """Draw one synthetic panel under the configured family."""
    w, base, coords = _build_weights(cfg)
    _check_admissible(cfg, w)
    clusters = _build_clusters(cfg, w.region_ids)
    x = _rng(cfg.seed, _STREAM_X).standard_normal((cfg.n, cfg.t, cfg.k))

    kappa = cfg.fe_x_corr
    eta = _rng(cfg.seed, _STREAM_ALPHA).standard_normal(cfg.n)
    z = x.mean(axis=(1, 2)) * math.sqrt(cfg.t * cfg.k)
    alpha = cfg.fe_spread * (
        kappa * z + math.sqrt(1.0 - kappa * kappa) * eta
    )

    eps = cfg.sigma * _rng(cfg.seed, _STREAM_NOISE).standard_normal(
        (cfg.n, cfg.t)
    )
    beta = np.asarray(cfg.beta)
    mean_part = alpha[:, None] + x @ beta + _lag_part(cfg, w, clusters, x)
    eye = np.eye(cfg.n)
    if cfg.family in ("sar", "sdm", "sdm-c"):
        y = np.linalg.solve(eye - cfg.rho * w.entries, mean_part + eps)
    elif cfg.family == "sem":
        u = np.linalg.solve(eye - cfg.rho * w.entries, eps)
        y = mean_part + u
    else:  # sac
        u = np.linalg.solve(eye - cfg.theta * w.entries, eps)
        y = np.linalg.solve(eye - cfg.rho * w.entries, mean_part + u)

    panel = RegionPanel(
        region_ids=w.region_ids,
        period_labels=tuple(
            str(cfg.start_period + s) for s in range(cfg.t)
        ),
        y=y,
        x=x,
        variable_names=cfg.variable_names,
        dep_name="y",
    )
    noise = structural_residuals(cfg, w, clusters, x, y, alpha)
    return SyntheticData(
        panel=panel,
        weights=w,
        base_weights=base,
        coords=coords,
        clusters=clusters,
        alpha=alpha,
        noise=noise,
        config=cfg,
    )


def true_parameter_map(cfg: DgpConfig) -> dict[str, float]:
    """Truth keyed by the parameter names the matching fit will report."""
    names = cfg.variable_names
    truth: dict[str, float] = {"rho": cfg.rho}
    if cfg.family == "sac":
        truth["theta"] = cfg.theta
    for name, b in zip(names, cfg.beta):
        truth[name] = b
    if cfg.family == "sdm" and cfg.gamma is not None:
        for name, g in zip(names, cfg.gamma):
            truth[f"lag:{name}"] = g
    if cfg.family == "sdm-c":
        for recipe in cfg.clusters:
            for name, g in zip(names, recipe.gamma):
                truth[f"lag[{recipe.sector_id}]:{name}"] = g
    truth["sigma"] = cfg.sigma
    return truth


def replication_seed(master_seed: int, index: int) -> int:
    """Per-replication seed derived from the master seed by counter."""
    ss = np.random.SeedSequence(
        entropy=master_seed, spawn_key=(_STREAM_REPLICATION, index)
    )
    return int(ss.generate_state(1, np.uint64)[0])


def _extract_estimates(res: FitResult) -> dict[str, tuple[float, float]]:
    out = {
        name: (float(res.estimates[i]), float(res.std_errors[i]))
        for i, name in enumerate(res.param_names)
    }
    sigma = math.sqrt(res.sigma2)
    sigma_se = res.sigma2_se / (2.0 * sigma) if sigma > 0.0 else 0.0
    out["sigma"] = (sigma, sigma_se)
    return out


def _replicate(args: tuple[DgpConfig, int]) -> tuple[str, object]:
    cfg, index = args
    rep_cfg = replace(cfg, seed=replication_seed(cfg.seed, index))
    try:
        data = generate(rep_cfg)
        res = fit(data.panel, data.model_spec())
        return ("ok", _extract_estimates(res))
    except SpatialPanelError as exc:
        return ("fail", f"{type(exc).__name__}: {exc}")


@dataclass(frozen=True)
class ParamSummary:
    """Recovery quality of one parameter across replications."""

    truth: float
    mean: float
    bias: float
    rmse: float
    coverage: float
    n_used: int


@dataclass(frozen=True)
class RecoveryReport:
    """Aggregate bias, RMSE and interval coverage of a recovery run."""

    config: DgpConfig
    replications: int
    failures: tuple[tuple[int, str], ...]
    params: dict[str, ParamSummary]

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    def summary(self) -> str:
        lines = [
            f"recovery over {self.replications} replications "
            f"({self.n_failed} failed), family {self.config.family}",
            f"{'parameter':<20} {'truth':>9} {'mean':>9} {'bias':>9} "
            f"{'rmse':>9} {'coverage':>9}",
        ]
        for name, s in self.params.items():
            lines.append(
                f"{name:<20} {s.truth:>9.4f} {s.mean:>9.4f} {s.bias:>9.4f} "
                f"{s.rmse:>9.4f} {s.coverage:>9.3f}"
            )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "family": self.config.family,
            "replications": self.replications,
            "failures": [list(f) for f in self.failures],
            "params": {
                name: {
                    "truth": s.truth,
                    "mean": s.mean,
                    "bias": s.bias,
                    "rmse": s.rmse,
                    "coverage": s.coverage,
                    "n_used": s.n_used,
                }
                for name, s in self.params.items()
            },
        }


def run_recovery(
    cfg: DgpConfig, replications: int, n_jobs: int = 1
) -> RecoveryReport:
    """Generate-and-refit the configured model and aggregate recovery.

    Replication r seeds its generator from (master seed, r), so the
    report is identical whether replications run serially or across
    n_jobs worker processes.
    """
    if replications < 1:
        raise DataFormatError(f"need >= 1 replications, got {replications}")
    tasks = [(cfg, r) for r in range(replications)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(_replicate, tasks))
    else:
        outcomes = [_replicate(t) for t in tasks]

    truth = true_parameter_map(cfg)
    estimates: dict[str, list[tuple[float, float]]] = {
        name: [] for name in truth
    }
    failures = []
    for index, (status, payload) in enumerate(outcomes):
        if status == "fail":
            failures.append((index, str(payload)))
            continue
        for name in truth:
            if name in payload:
                estimates[name].append(payload[name])
    params: dict[str, ParamSummary] = {}
    for name, pairs in estimates.items():
        if not pairs:
            continue
        est = np.array([p[0] for p in pairs])
        se = np.array([p[1] for p in pairs])
        err = est - truth[name]
        covered = np.abs(err) <= 1.959963984540054 * se
        params[name] = ParamSummary(
            truth=truth[name],
            mean=float(est.mean()),
            bias=float(err.mean()),
            rmse=float(np.sqrt(np.mean(err**2))),
            coverage=float(covered.mean()),
            n_used=int(est.size),
        )
    return RecoveryReport(
        config=cfg,
        replications=replications,
        failures=tuple(failures),
        params=params,
    )


def config_to_dict(cfg: DgpConfig) -> dict:
    return {
        "family": cfg.family,
        "n": cfg.n,
        "t": cfg.t,
        "beta": list(cfg.beta),
        "rho": cfg.rho,
        "theta": cfg.theta,
        "gamma": None if cfg.gamma is None else list(cfg.gamma),
        "clusters": [
            {
                "sector_id": c.sector_id,
                "gamma": list(c.gamma),
                "membership_prob": c.membership_prob,
                "membership": (
                    None if c.membership is None else list(c.membership)
                ),
            }
            for c in cfg.clusters
        ],
        "sigma": cfg.sigma,
        "fe_spread": cfg.fe_spread,
        "fe_x_corr": cfg.fe_x_corr,
        "weight_recipe": {
            "kind": cfg.weight_recipe.kind,
            "exponent": cfg.weight_recipe.exponent,
            "normalize": cfg.weight_recipe.normalize,
        },
        "seed": cfg.seed,
        "start_period": cfg.start_period,
    }


def config_from_dict(d: dict) -> DgpConfig:
    try:
        recipe = d.get("weight_recipe") or {}
        clusters = tuple(
            ClusterRecipe(
                sector_id=c["sector_id"],
                gamma=tuple(c["gamma"]),
                membership_prob=c.get("membership_prob", 0.3),
                membership=(
                    None
                    if c.get("membership") is None
                    else tuple(c["membership"])
                ),
            )
            for c in d.get("clusters", [])
        )
        return DgpConfig(
            family=d["family"],
            n=int(d["n"]),
            t=int(d["t"]),
            beta=tuple(d["beta"]),
            rho=float(d.get("rho", 0.0)),
            theta=float(d.get("theta", 0.0)),
            gamma=None if d.get("gamma") is None else tuple(d["gamma"]),
            clusters=clusters,
            sigma=float(d.get("sigma", 1.0)),
            fe_spread=float(d.get("fe_spread", 1.0)),
            fe_x_corr=float(d.get("fe_x_corr", 0.0)),
            weight_recipe=WeightRecipe(
                kind=recipe.get("kind", "ring"),
                exponent=float(recipe.get("exponent", 1.0)),
                normalize=recipe.get("normalize", "none"),
            ),
            seed=int(d.get("seed", 0)),
            start_period=int(d.get("start_period", 2002)),
        )
    except KeyError as exc:
        raise DataFormatError(f"simulation config missing key {exc}") from exc


def load_config(path: str) -> DgpConfig:
    """Read a declarative simulation config from JSON."""
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(d)


def export_bundle(data: SyntheticData, outdir: str) -> dict:
    """Write the CSV bundle (panel, weights inputs, clusters) plus truth.json.

    The bundle is self-contained for re-estimation: the weight matrix is
    transported as coordinates (planar recipe) or as a pairwise distance
    table (ring recipe, unit distances on edges), and truth.json records
    the generating config together with the flags needed to replay the
    matching fit.
    """
    import os

    import pandas as pd

    from .panel import save_panel_csv

    os.makedirs(outdir, exist_ok=True)
    cfg = data.config
    files: dict[str, str] = {"panel": "panel.csv"}
    save_panel_csv(data.panel, os.path.join(outdir, "panel.csv"))

    recipe = cfg.weight_recipe
    if data.coords is not None:
        files["coords"] = "coords.csv"
        pd.DataFrame(
            {
                "region_id": [c.region_id for c in data.coords],
                "x": [c.x for c in data.coords],
                "y": [c.y for c in data.coords],
            }
        ).to_csv(os.path.join(outdir, "coords.csv"), index=False)
    else:
        files["distances"] = "distances.csv"
        base = data.base_weights.entries
        i, j = np.nonzero(np.triu(base, k=1))
        ids = data.base_weights.region_ids
        pd.DataFrame(
            {
                "region_i": [ids[a] for a in i],
                "region_j": [ids[b] for b in j],
                "distance": base[i, j] ** (-1.0 / recipe.exponent),
            }
        ).to_csv(os.path.join(outdir, "distances.csv"), index=False)

    if data.clusters:
        files["clusters"] = "clusters.csv"
        rows = []
        for c in data.clusters:
            for r, m in zip(c.region_ids, c.membership):
                rows.append(
                    {
                        "region_id": r,
                        "sector_id": c.sector_id,
                        "member": int(m),
                    }
                )
        pd.DataFrame(rows).to_csv(
            os.path.join(outdir, "clusters.csv"), index=False
        )

    meta = {
        "config": config_to_dict(cfg),
        "true_parameters": true_parameter_map(cfg),
        "files": files,
        "replay": {
            "model": cfg.family,
            "dep": "y",
            "lag_vars": (
                list(cfg.variable_names)
                if cfg.family in ("sdm", "sdm-c")
                else []
            ),
            "exponent": recipe.exponent,
            "normalize": recipe.normalize,
            "metric": "euclidean",
        },
    }
    with open(
        os.path.join(outdir, "truth.json"), "w", encoding="utf-8"
    ) as fh:
        json.dump(meta, fh, indent=1)
    return meta
