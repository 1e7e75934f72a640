"""Command-line interface.

Subcommands: estimate, effects, hausman, weights, simulate. Every
failure exits nonzero after printing a single diagnostic line of the
form ``error: <ErrorName>: <message>`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .dgp import (
    ClusterRecipe,
    DgpConfig,
    WeightRecipe,
    export_bundle,
    generate,
    load_config,
)
from .effects import effects_dispersion
from .errors import DataFormatError, SpatialPanelError
from .estimator import FAMILIES, FitResult, ModelSpec, fit
from .inference import hausman_test
from .panel import fe_estimate, load_panel_csv, re_estimate
from .weights import (
    build_from_distances,
    build_inverse_distance,
    load_clusters,
    load_coordinates,
    load_distances,
    row_normalize,
    save_weights_csv,
)

LOGGER = logging.getLogger(__name__)


def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in _csv_list(text)]
    except ValueError as exc:
        raise DataFormatError(f"cannot parse number list {text!r}") from exc


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _add_weight_flags(sub) -> None:
    sub.add_argument("--coords", help="region_id,x,y coordinates CSV")
    sub.add_argument(
        "--distances", help="region_i,region_j,distance pairwise CSV"
    )
    sub.add_argument(
        "--exponent",
        type=float,
        default=1.0,
        help="distance-decay exponent (default 1)",
    )
    sub.add_argument(
        "--metric",
        choices=["euclidean", "haversine"],
        default="euclidean",
        help="distance metric for coordinates",
    )
    sub.add_argument(
        "--normalize",
        choices=["none", "row"],
        default="none",
        help="row-normalize the weight matrix",
    )


def _build_weights(args):
    if bool(args.coords) == bool(args.distances):
        raise DataFormatError(
            "exactly one of --coords or --distances is required"
        )
    if args.coords:
        w = build_inverse_distance(
            load_coordinates(args.coords),
            exponent=args.exponent,
            metric=args.metric,
        )
    else:
        ids, d = load_distances(args.distances)
        w = build_from_distances(ids, d, exponent=args.exponent)
    if args.normalize == "row":
        w = row_normalize(w)
    return w


def _load_panel(args):
    if not args.panel:
        raise DataFormatError("--panel is required")
    return load_panel_csv(
        args.panel,
        dep=args.dep,
        log_vars=_csv_list(args.log) if args.log else (),
    )


def cmd_estimate(args) -> int:
    panel = _load_panel(args)
    w = _build_weights(args)
    clusters = ()
    if args.model == "sdm-c":
        if not args.clusters:
            raise DataFormatError("--clusters is required for model sdm-c")
        clusters = load_clusters(args.clusters, w.region_ids)
    if args.model in ("sdm", "sdm-c"):
        lagged = (
            tuple(_csv_list(args.lag_vars))
            if args.lag_vars
            else panel.variable_names
        )
    else:
        lagged = ()
    spec = ModelSpec(
        family=args.model,
        weights=w,
        clusters=clusters,
        lagged_variables=lagged,
        extra_dummies=tuple(args.dummy or ()),
        mask_convention=args.mask_convention,
    )
    res = fit(panel, spec)
    outdir = _outdir(args)
    res.to_json(os.path.join(outdir, "fit.json"))
    table = res.summary()
    with open(
        os.path.join(outdir, "fit.txt"), "w", encoding="utf-8"
    ) as fh:
        fh.write(table + "\n")
    if args.hausman:
        hr = hausman_test(fe_estimate(panel), re_estimate(panel))
        LOGGER.info("%s", hr.summary_line(args.alpha))
    print(
        table
        if args.format == "table"
        else json.dumps(res.to_dict(), indent=1)
    )
    return 0


def cmd_effects(args) -> int:
    res = FitResult.from_json(args.fit)
    table = effects_dispersion(res, draws=args.draws, seed=args.seed)
    outdir = _outdir(args)
    table.to_json(os.path.join(outdir, "effects.json"))
    text = table.render()
    with open(
        os.path.join(outdir, "effects.txt"), "w", encoding="utf-8"
    ) as fh:
        fh.write(text + "\n")
    print(
        text
        if args.format == "table"
        else json.dumps(table.to_dict(), indent=1)
    )
    return 0


def cmd_hausman(args) -> int:
    panel = _load_panel(args)
    result = hausman_test(fe_estimate(panel), re_estimate(panel))
    outdir = _outdir(args)
    result.to_json(os.path.join(outdir, "hausman.json"))
    if args.format == "json":
        print(json.dumps(result.to_dict(), indent=1))
    print(result.summary_line(args.alpha))
    return 0


def cmd_weights(args) -> int:
    w = _build_weights(args)
    outdir = _outdir(args)
    path = os.path.join(outdir, "weights.csv")
    save_weights_csv(w, path)
    print(path)
    return 0


def _clusters_from_flags(values, n_regressors: int) -> tuple:
    recipes = []
    for spec in values or ():
        head, sep, gtxt = spec.partition(":")
        if not sep:
            raise DataFormatError(
                f"cluster spec {spec!r} not understood, expected "
                "'sector=prob:g1,g2,...'"
            )
        sector, sep2, ptxt = head.partition("=")
        if not sep2:
            raise DataFormatError(
                f"cluster spec {spec!r} missing '=' before the probability"
            )
        gamma = _float_list(gtxt)
        if len(gamma) != n_regressors:
            raise DataFormatError(
                f"cluster {sector!r} lists {len(gamma)} lag coefficients "
                f"for {n_regressors} regressors"
            )
        recipes.append(
            ClusterRecipe(
                sector_id=sector.strip(),
                gamma=tuple(gamma),
                membership_prob=float(ptxt),
            )
        )
    return tuple(recipes)


def cmd_simulate(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        if args.seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, seed=args.seed)
    else:
        if not (args.model and args.n and args.t and args.beta):
            raise DataFormatError(
                "simulate needs --config or all of --model/--n/--t/--beta"
            )
        beta = tuple(_float_list(args.beta))
        cfg = DgpConfig(
            family=args.model,
            n=args.n,
            t=args.t,
            beta=beta,
            rho=args.rho,
            theta=args.theta,
            gamma=(
                tuple(_float_list(args.gamma)) if args.gamma else None
            ),
            clusters=_clusters_from_flags(args.cluster, len(beta)),
            sigma=args.sigma,
            fe_spread=args.fe_spread,
            fe_x_corr=args.fe_corr,
            weight_recipe=WeightRecipe(
                kind=args.weights_kind,
                exponent=args.exponent,
                normalize=args.normalize,
            ),
            seed=args.seed if args.seed is not None else 0,
            start_period=args.start_period,
        )
    data = generate(cfg)
    meta = export_bundle(data, _outdir(args))
    print(json.dumps(meta["files"], indent=1))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatialpanel",
        description=(
            "spatial panel estimation with cluster-masked Durbin spillovers"
        ),
    )
    subs = parser.add_subparsers(dest="command", required=True)

    est = subs.add_parser(
        "estimate", help="fit a spatial panel model from CSV inputs"
    )
    est.add_argument("--panel", required=True, help="panel CSV")
    est.add_argument("--dep", help="dependent variable (default: first)")
    est.add_argument(
        "--log", help="comma list of variables to log-transform at ingestion"
    )
    est.add_argument(
        "--model", choices=list(FAMILIES), required=True, help="model family"
    )
    est.add_argument(
        "--lag-vars",
        help="comma list of regressors to lag spatially (default: all)",
    )
    est.add_argument("--clusters", help="region_id,sector_id,member CSV")
    est.add_argument(
        "--dummy",
        action="append",
        help="add an exogenous dummy column, e.g. period=2009",
    )
    est.add_argument(
        "--mask-convention",
        choices=["column", "row", "both"],
        default="column",
        help="cluster mask broadcast convention",
    )
    est.add_argument(
        "--hausman",
        action="store_true",
        help="also log a fixed-vs-random effects Hausman check",
    )
    est.add_argument("--alpha", type=float, default=0.05)
    _add_weight_flags(est)
    _add_output_flags(est)
    est.set_defaults(func=cmd_estimate)

    eff = subs.add_parser(
        "effects", help="effect decomposition of a saved fit"
    )
    eff.add_argument("--fit", required=True, help="fit.json from estimate")
    eff.add_argument("--draws", type=int, default=1000)
    eff.add_argument("--seed", type=int, default=0)
    _add_output_flags(eff)
    eff.set_defaults(func=cmd_effects)

    hau = subs.add_parser(
        "hausman", help="fixed- versus random-effects comparison"
    )
    hau.add_argument("--panel", required=True, help="panel CSV")
    hau.add_argument("--dep", help="dependent variable (default: first)")
    hau.add_argument("--log", help="comma list of variables to log-transform")
    hau.add_argument("--alpha", type=float, default=0.05)
    _add_output_flags(hau)
    hau.set_defaults(func=cmd_hausman)

    wgt = subs.add_parser(
        "weights", help="build and export a weight matrix CSV"
    )
    _add_weight_flags(wgt)
    _add_output_flags(wgt)
    wgt.set_defaults(func=cmd_weights)

    sim = subs.add_parser(
        "simulate", help="generate a synthetic panel CSV bundle"
    )
    sim.add_argument("--config", help="JSON simulation config")
    sim.add_argument("--model", choices=list(FAMILIES))
    sim.add_argument("--n", type=int, help="number of regions")
    sim.add_argument("--t", type=int, help="number of periods")
    sim.add_argument("--beta", help="comma list of regressor coefficients")
    sim.add_argument("--rho", type=float, default=0.0)
    sim.add_argument("--theta", type=float, default=0.0)
    sim.add_argument(
        "--gamma", help="comma list of plain lag coefficients (sdm)"
    )
    sim.add_argument(
        "--cluster",
        action="append",
        help="sdm-c sector spec 'sector=prob:g1,g2,...' (repeatable)",
    )
    sim.add_argument("--sigma", type=float, default=1.0)
    sim.add_argument("--fe-spread", type=float, default=1.0)
    sim.add_argument("--fe-corr", type=float, default=0.0)
    sim.add_argument(
        "--weights-kind",
        choices=["ring", "random-planar"],
        default="random-planar",
    )
    sim.add_argument("--exponent", type=float, default=1.0)
    sim.add_argument(
        "--normalize", choices=["none", "row"], default="none"
    )
    sim.add_argument("--start-period", type=int, default=2002)
    sim.add_argument("--seed", type=int, default=None)
    _add_output_flags(sim)
    sim.set_defaults(func=cmd_simulate)

    return parser


def _add_output_flags(sub) -> None:
    sub.add_argument(
        "--out", default=".", help="output directory (created if missing)"
    )
    sub.add_argument(
        "--format",
        choices=["json", "table"],
        default="table",
        help="what to echo on stdout",
    )


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s: %(message)s"
    )
    try:
        return args.func(args)
    except SpatialPanelError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
