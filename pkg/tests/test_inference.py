import math

import numpy as np
import numpy.testing as npt
import pytest

import spatialpanel as sp
from spatialpanel.panel import OlsResult

from conftest import make_data

# upper tail probabilities evaluated independently at 40 decimal digits
# (regularized incomplete gamma Q(df/2, x/2))
CHI2_TAIL_CASES = [
    (3.841458820694124, 1, 0.05000000000000006),
    (3.5, 2, 0.17377394345044513),
    (11.07, 5, 0.05000961862240549),
    (0.35, 3, 0.950366117368476),
    (18.3, 10, 0.05010906141146246),
]


@pytest.mark.parametrize("x,df,expected", CHI2_TAIL_CASES)
def test_chi2_upper_tail_reference(x, df, expected):
    npt.assert_allclose(sp.chi2_upper_tail(x, df), expected, rtol=1e-12)


def test_chi2_df2_closed_form():
    # with two degrees of freedom the tail is exactly exp(-x/2)
    for x in np.linspace(0.05, 30.0, 121):
        assert abs(sp.chi2_upper_tail(float(x), 2) - math.exp(-x / 2.0)) < (
            1e-12
        )


def test_chi2_extreme_statistic():
    # frozen reference: 6.832626822785722e-88
    p = sp.chi2_upper_tail(487.41, 24)
    assert p < 1e-80
    npt.assert_allclose(p, 6.832626822785722e-88, rtol=1e-6)


def test_chi2_nonpositive_statistic_is_one():
    assert sp.chi2_upper_tail(0.0, 4) == 1.0
    assert sp.chi2_upper_tail(-3.0, 4) == 1.0


def test_chi2_invalid_arguments():
    with pytest.raises(sp.DataFormatError):
        sp.chi2_upper_tail(1.0, 0)
    with pytest.raises(sp.DataFormatError):
        sp.chi2_upper_tail(float("nan"), 2)


def _ols_stub(names, coefs, cov, method="within"):
    coefs = np.asarray(coefs, dtype=float)
    cov = np.asarray(cov, dtype=float)
    se = np.sqrt(np.diag(cov))
    return OlsResult(
        method=method,
        variable_names=tuple(names),
        coefficients=coefs,
        covariance=cov,
        std_errors=se,
        t_stats=np.zeros_like(coefs),
        sigma2=1.0,
        residuals=np.zeros(1),
        nobs=100,
        df_resid=90,
    )


class TestHausman:
    def test_zero_when_estimates_coincide(self):
        fe = _ols_stub(("x1", "x2"), [0.5, 1.2],
                       [[0.04, 0.0], [0.0, 0.05]])
        re = _ols_stub(("const", "x1", "x2"), [0.1, 0.5, 1.2],
                       np.diag([0.1, 0.01, 0.02]), method="re")
        hr = sp.hausman_test(fe, re)
        assert hr.statistic == 0.0
        assert hr.p_value == 1.0
        assert hr.df == 2

    def test_constant_excluded_from_comparison(self):
        fe = _ols_stub(("x1",), [0.5], [[0.04]])
        re = _ols_stub(("const", "x1"), [9.9, 0.7],
                       np.diag([0.1, 0.01]), method="re")
        hr = sp.hausman_test(fe, re)
        assert hr.coefficient_names == ("x1",)
        # h = d^2 / (var_fe - var_re) = 0.04 / 0.03
        npt.assert_allclose(hr.statistic, 0.04 / 0.03, rtol=1e-12)
        assert hr.df == 1

    def test_statistic_never_negative(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            k = int(rng.integers(1, 5))
            d = rng.normal(size=k)
            a = rng.normal(size=(k, k))
            vf = a @ a.T + 0.01 * np.eye(k)
            b = rng.normal(size=(k, k))
            vr = b @ b.T + 0.01 * np.eye(k)
            names = tuple(f"x{i}" for i in range(k))
            hr = sp.hausman_test(
                _ols_stub(names, d, vf),
                _ols_stub(names, np.zeros(k), vr, method="re"),
            )
            assert hr.statistic >= 0.0
            assert 0.0 <= hr.p_value <= 1.0

    def test_singular_difference_flagged(self):
        # rank-1 variance difference between two coefficients
        v = np.array([[0.02, 0.02], [0.02, 0.02]])
        fe = _ols_stub(("x1", "x2"), [0.5, 0.6], v + np.diag([0.01, 0.01]))
        re = _ols_stub(("x1", "x2"), [0.4, 0.5], np.diag([0.01, 0.01]),
                       method="re")
        hr = sp.hausman_test(fe, re)
        assert hr.singular
        assert hr.variance_rank == 1
        assert hr.statistic >= 0.0

    def test_no_common_coefficients(self):
        fe = _ols_stub(("x1",), [0.5], [[0.04]])
        re = _ols_stub(("const", "z9"), [0.1, 0.2], np.diag([0.1, 0.1]),
                       method="re")
        with pytest.raises(sp.NoCommonCoefficientsError):
            sp.hausman_test(fe, re)

    def test_scaling_a_regressor_leaves_h_invariant(self):
        data = make_data("sar", n=50, t=6, seed=23, sigma=0.8, rho=0.0,
                         fe_x_corr=0.5)
        p = data.panel
        h1 = sp.hausman_test(sp.fe_estimate(p), sp.re_estimate(p)).statistic
        from dataclasses import replace

        x = p.x.copy()
        x[:, :, 1] *= 100.0
        p2 = replace(p, x=x)
        h2 = sp.hausman_test(sp.fe_estimate(p2), sp.re_estimate(p2)).statistic
        npt.assert_allclose(h2, h1, rtol=1e-8)

    def test_p_value_uses_the_tail(self):
        data = make_data("sar", n=60, t=5, seed=31, sigma=1.0, rho=0.0,
                         fe_x_corr=0.8)
        hr = sp.hausman_test(
            sp.fe_estimate(data.panel), sp.re_estimate(data.panel)
        )
        npt.assert_allclose(
            hr.p_value, sp.chi2_upper_tail(hr.statistic, hr.df), rtol=0
        )

    def test_verdict_strings(self):
        fe = _ols_stub(("x1",), [0.9], [[0.04]])
        re = _ols_stub(("x1",), [0.2], [[0.01]], method="re")
        hr = sp.hausman_test(fe, re)
        assert hr.p_value < 0.05
        assert "fixed effects preferred" in hr.verdict(0.05)
        line = hr.summary_line(0.05)
        assert "Hausman statistic" in line
        assert "degrees of freedom" in line

    def test_accepting_verdict(self):
        fe = _ols_stub(("x1",), [0.5], [[0.04]])
        re = _ols_stub(("x1",), [0.501], [[0.01]], method="re")
        hr = sp.hausman_test(fe, re)
        assert hr.p_value > 0.05
        assert "no evidence against" in hr.verdict(0.05)

    def test_json_payload(self):
        fe = _ols_stub(("x1",), [0.9], [[0.04]])
        re = _ols_stub(("x1",), [0.2], [[0.01]], method="re")
        d = sp.hausman_test(fe, re).to_dict()
        assert set(d) >= {
            "statistic", "df", "p_value", "coefficient_names", "difference",
        }
