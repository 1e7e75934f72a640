"""Hausman comparison of fixed against random effects."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from .errors import DataFormatError, NoCommonCoefficientsError
from .panel import OlsResult

# eigenvalues below this relative threshold count as a null direction
_EIG_RTOL = 1e-12


def chi2_upper_tail(x: float, df: int) -> float:
    """P(chi2_df > x) via the regularized upper incomplete gamma.

    Exact closed form exp(-x/2) at df = 2; accurate far into the tail
    (absolute error well under 1e-10 for df <= 100).
    """
    if df < 1:
        raise DataFormatError(f"degrees of freedom must be >= 1, got {df}")
    if not math.isfinite(x):
        raise DataFormatError(f"test statistic must be finite, got {x}")
    if x <= 0.0:
        return 1.0
    return float(gammaincc(df / 2.0, x / 2.0))


@dataclass(frozen=True)
class HausmanResult:
    """Statistic, degrees of freedom and p-value of one comparison."""

    statistic: float
    df: int
    p_value: float
    coefficient_names: tuple[str, ...]
    difference: np.ndarray
    variance_rank: int
    singular: bool

    def verdict(self, alpha: float = 0.05) -> str:
        if not 0.0 < alpha < 1.0:
            raise DataFormatError(f"alpha must be in (0, 1), got {alpha}")
        if self.p_value < alpha:
            return (
                "reject the random-effects specification "
                "(fixed effects preferred)"
            )
        return "no evidence against the random-effects specification"

    def summary_line(self, alpha: float = 0.05) -> str:
        line = (
            f"Hausman statistic {self.statistic:.4f} with {self.df} degrees "
            f"of freedom, p-value {self.p_value:.4g}: "
            f"{self.verdict(alpha)} at alpha={alpha:g}"
        )
        if self.singular:
            line += (
                f" [difference covariance singular, rank "
                f"{self.variance_rank}/{self.df}, pseudo-inverse used]"
            )
        return line

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "coefficient_names": list(self.coefficient_names),
            "difference": self.difference.tolist(),
            "variance_rank": self.variance_rank,
            "singular": self.singular,
        }

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def hausman_test(fe: OlsResult, re: OlsResult) -> HausmanResult:
    """Hausman test of the fixed- against the random-effects estimates.

    The comparison runs on the common coefficient subset (time-varying
    regressors; the RE intercept is excluded): with d the coefficient
    difference, h = d' [var(fe) - var(re)]^-1 d, referred to chi2 with
    one degree of freedom per compared coefficient.

    The difference covariance is symmetrized first. When it is singular
    or indefinite, directions with non-positive eigenvalues drop out of
    a Moore-Penrose style inverse, the result carries the retained rank
    and a singularity flag, and h stays nonnegative.
    """
    common = [
        v
        for v in fe.variable_names
        if v != "const" and v in re.variable_names
    ]
    if not common:
        raise NoCommonCoefficientsError(
            "the two estimates share no comparable coefficients"
        )
    i_fe = [fe.variable_names.index(v) for v in common]
    i_re = [re.variable_names.index(v) for v in common]
    d = fe.coefficients[i_fe] - re.coefficients[i_re]
    v_fe = fe.covariance[np.ix_(i_fe, i_fe)]
    v_re = re.covariance[np.ix_(i_re, i_re)]
    vd = v_fe - v_re
    vd = 0.5 * (vd + vd.T)
    ev, vec = np.linalg.eigh(vd)
    tol = _EIG_RTOL * max(float(np.abs(ev).max()), 1e-300)
    keep = ev > tol
    rank = int(keep.sum())
    singular = rank < len(common)
    proj = vec.T @ d
    h = float(np.sum(proj[keep] ** 2 / ev[keep])) if rank else 0.0
    h = max(h, 0.0)
    df = len(common)
    return HausmanResult(
        statistic=h,
        df=df,
        p_value=chi2_upper_tail(h, df),
        coefficient_names=tuple(common),
        difference=d,
        variance_rank=rank,
        singular=singular,
    )
