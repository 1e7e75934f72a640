from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest

import spatialpanel as sp

from conftest import make_data

NEUMANN_TERMS = 60
NEUMANN_TOL = 1e-9
FD_TOL = 1e-5


def neumann_series(rho, w, beta_r, gamma_r, lag, terms=NEUMANN_TERMS):
    """(I - rho W)^{-1} (beta_r I + gamma_r lag) accumulated term by term."""
    n = w.shape[0]
    core = beta_r * np.eye(n)
    if lag is not None:
        core = core + gamma_r * lag
    out = np.zeros((n, n))
    power = np.eye(n)
    for _ in range(terms):
        out += power @ core
        power = rho * (power @ w)
    return out


def fd_impacts(res, variable, cluster, h=1e-5):
    """Reduced-form central differences of the fitted map x -> y."""
    w = res.spec.weights.entries
    n = w.shape[0]
    a = np.eye(n) - res.rho * w
    masks = {
        c.sector_id: sp.mask_by_cluster(
            res.spec.weights, c, res.spec.mask_convention
        ).entries
        for c in res.spec.clusters
    }

    def yhat(x_cols):
        rhs = np.zeros(n)
        for v in res.variable_names:
            rhs += res.coef(v) * x_cols[v]
            for (sector, var), g in res.gamma.items():
                if var != v:
                    continue
                lag = w if sector is None else masks[sector]
                rhs += g * (lag @ x_cols[v])
        return np.linalg.solve(a, rhs)

    out = np.zeros((n, n))
    zero = {v: np.zeros(n) for v in res.variable_names}
    for j in range(n):
        up = {k: v.copy() for k, v in zero.items()}
        dn = {k: v.copy() for k, v in zero.items()}
        up[variable][j] += h
        dn[variable][j] -= h
        out[:, j] = (yhat(up) - yhat(dn)) / (2.0 * h)
    return out


def random_instance(i):
    rng = np.random.default_rng(1000 + i)
    n = int(rng.integers(3, 7))
    fam = ("sar", "sdm", "sdm-c")[i % 3]
    extra = {}
    if fam == "sdm":
        extra["gamma"] = (-0.4, 0.15)
    if fam == "sdm-c":
        extra["clusters"] = (
            sp.ClusterRecipe("c0", (-0.3, 0.2), 0.5),
        )
    data = make_data(fam, n=n, t=12, seed=1000 + i, sigma=0.01, **extra)
    return sp.fit(data.panel, data.model_spec())


def rows_of(res):
    if res.family == "sdm-c":
        return [("c0", v) for v in res.variable_names]
    return [(None, v) for v in res.variable_names]


@pytest.mark.parametrize("i", range(20))
def test_dense_solve_matches_neumann_series(i):
    res = random_instance(i)
    w = res.spec.weights.entries
    for cluster, variable in rows_of(res):
        s = sp.impact_matrix(res, variable, cluster=cluster)
        gamma_r, lag = 0.0, None
        if res.family == "sdm":
            gamma_r, lag = res.coef(f"lag:{variable}"), w
        elif res.family == "sdm-c":
            gamma_r = res.coef(f"lag[c0]:{variable}")
            lag = sp.mask_by_cluster(
                res.spec.weights, res.spec.clusters[0], "column"
            ).entries
        expected = neumann_series(res.rho, w, res.coef(variable), gamma_r,
                                  lag)
        npt.assert_allclose(s.values, expected, rtol=0, atol=NEUMANN_TOL)


@pytest.mark.parametrize("i", range(20))
def test_dense_solve_matches_finite_differences(i):
    res = random_instance(i)
    for cluster, variable in rows_of(res):
        s = sp.impact_matrix(res, variable, cluster=cluster)
        npt.assert_allclose(
            s.values, fd_impacts(res, variable, cluster),
            rtol=0, atol=FD_TOL,
        )


class TestSummaryMeasures:
    def test_decomposition_identity(self):
        res = random_instance(1)
        for cluster, variable in rows_of(res):
            s = sp.impact_matrix(res, variable, cluster=cluster)
            m = sp.summary_measures(s)
            n = s.values.shape[0]
            npt.assert_allclose(m["direct"], np.trace(s.values) / n)
            npt.assert_allclose(
                m["indirect"],
                (s.values.sum() - np.trace(s.values)) / n,
            )
            assert m["total"] == m["direct"] + m["indirect"]

    def test_sem_impacts_are_diagonal(self):
        data = make_data("sem", n=12, t=6, seed=6, sigma=0.1, rho=0.2)
        res = sp.fit(data.panel, data.model_spec())
        s = sp.impact_matrix(res, "x1")
        npt.assert_array_equal(
            s.values, res.coef("x1") * np.eye(res.n)
        )
        m = sp.summary_measures(s)
        assert m["indirect"] == 0.0
        npt.assert_allclose(m["direct"], res.coef("x1"))

    def test_feedback_share_zero_without_spatial_lag(self):
        data = make_data("sem", n=12, t=6, seed=6, sigma=0.1, rho=0.2)
        res = sp.fit(data.panel, data.model_spec())
        s = sp.impact_matrix(res, "x1")
        assert sp.feedback_loop_share(s, res.coef("x1")) == 0.0

    def test_feedback_share_positive_with_feedback(self):
        res = random_instance(0)  # sar with rho ~ 0.3
        s = sp.impact_matrix(res, "x1")
        share = sp.feedback_loop_share(s, res.coef("x1"))
        # diagonal of the multiplier exceeds the impact coefficient
        assert share > 0.0
        npt.assert_allclose(
            share, np.trace(s.values) / s.n - res.coef("x1"), rtol=1e-12
        )


class TestAggregateImpacts:
    def test_sum_of_cluster_terms(self):
        data = make_data(
            "sdm-c", n=15, t=6, seed=29, sigma=0.05,
            clusters=(
                sp.ClusterRecipe("svc", (-0.5, 0.2), 0.4),
                sp.ClusterRecipe("mfg", (0.3, -0.1), 0.4),
            ),
        )
        res = sp.fit(data.panel, data.model_spec())
        w = res.spec.weights
        agg = sp.aggregate_impact_matrix(res, "x1")
        core = res.coef("x1") * np.eye(w.n)
        for c in res.spec.clusters:
            m = sp.mask_by_cluster(w, c, "column").entries
            core += res.coef(f"lag[{c.sector_id}]:x1") * m
        expected = np.linalg.solve(
            np.eye(w.n) - res.rho * w.entries, core
        )
        npt.assert_allclose(agg.values, expected, rtol=0, atol=1e-12)

    def test_only_for_cluster_models(self):
        res = random_instance(0)
        with pytest.raises(sp.DataFormatError):
            sp.aggregate_impact_matrix(res, "x1")


class TestRoundedReportIdentity:
    # a decomposition published at 4-decimal rounding: the identity
    # must hold on the unrounded sum to the same rounding
    def test_rounded_row(self):
        direct, indirect, shown_total = 0.8065, -1.0331, -0.2267
        total = direct + indirect
        # the gap sits exactly on the rounding grain, so shave float fuzz
        assert round(abs(total - shown_total), 10) <= 1e-4

    def test_identity_enforced_on_construction(self):
        with pytest.raises(sp.DataFormatError):
            sp.EffectsRow(
                cluster=None, variable="x", direct=1.0, indirect=2.0,
                total=3.5, direct_mean=1.0, indirect_mean=2.0,
                total_mean=3.0, direct_sd=0.1, indirect_sd=0.1,
                total_sd=0.1, direct_t=1.0, indirect_t=1.0, total_t=1.0,
            )


class TestDispersion:
    def make_fit(self):
        data = make_data(
            "sdm-c", n=15, t=6, seed=7, sigma=0.05,
            clusters=(sp.ClusterRecipe("svc", (-0.5, 0.2), 0.4),),
        )
        return sp.fit(data.panel, data.model_spec())

    def test_identity_on_every_row(self):
        table = sp.effects_dispersion(self.make_fit(), draws=200, seed=3)
        for row in table.rows:
            assert row.total == row.direct + row.indirect
            assert row.total_mean == row.direct_mean + row.indirect_mean

    def test_bit_reproducible(self):
        res = self.make_fit()
        t1 = sp.effects_dispersion(res, draws=300, seed=9)
        t2 = sp.effects_dispersion(res, draws=300, seed=9)
        assert t1.to_dict() == t2.to_dict()

    def test_seed_changes_the_draws(self):
        res = self.make_fit()
        t1 = sp.effects_dispersion(res, draws=300, seed=9)
        t2 = sp.effects_dispersion(res, draws=300, seed=10)
        assert t1.to_dict() != t2.to_dict()

    def test_means_near_point_estimates(self):
        table = sp.effects_dispersion(self.make_fit(), draws=500, seed=3)
        for row in table.rows:
            assert abs(row.direct_mean - row.direct) < 5.0 * max(
                row.direct_sd, 1e-12
            )

    def test_sd_stabilizes_with_more_draws(self):
        res = self.make_fit()
        a = sp.effects_dispersion(res, draws=1000, seed=9)
        b = sp.effects_dispersion(res, draws=2000, seed=9)
        for ra in a.rows:
            rb = b.row(ra.cluster, ra.variable)
            assert abs(ra.total_sd - rb.total_sd) / rb.total_sd < 0.10

    def test_minimum_draws(self):
        with pytest.raises(sp.DataFormatError):
            sp.effects_dispersion(self.make_fit(), draws=99)

    def test_degenerate_covariance_gives_no_t(self):
        res = self.make_fit()
        frozen = replace(res, covariance=np.zeros_like(res.covariance))
        table = sp.effects_dispersion(frozen, draws=120, seed=1)
        for row in table.rows:
            assert row.direct_sd == 0.0
            assert row.direct_t is None
            assert row.total_t is None

    def test_inadmissible_draws_rejected_and_counted(self):
        res = self.make_fit()
        cov = res.covariance.copy()
        i = res.index_of("rho")
        cov[i, i] = 1.0  # huge rho variance pushes draws past the bound
        table = sp.effects_dispersion(replace(res, covariance=cov),
                                      draws=200, seed=4)
        assert table.rejected_draws > 0
        for row in table.rows:
            assert np.isfinite(row.total_mean)

    def test_non_psd_covariance_rejected(self):
        res = self.make_fit()
        cov = res.covariance.copy()
        cov[0, 1] = cov[1, 0] = 10.0  # breaks positive semidefiniteness
        with pytest.raises(sp.NonPsdCovarianceError):
            sp.effects_dispersion(replace(res, covariance=cov),
                                  draws=120, seed=1)

    def test_render_layout(self):
        table = sp.effects_dispersion(self.make_fit(), draws=150, seed=2)
        text = table.render()
        assert "cluster" in text.splitlines()[1]
        assert "svc" in text
        # four-decimal effect columns with a t in parentheses
        assert any(
            "(" in ln and ")" in ln for ln in text.splitlines()[2:]
        )

    def test_json_round_trip_fields(self):
        table = sp.effects_dispersion(self.make_fit(), draws=150, seed=2)
        d = table.to_dict()
        assert d["draws"] == 150
        assert d["seed"] == 2
        assert len(d["rows"]) == len(table.rows)


class TestErrorPaths:
    def test_cluster_argument_on_plain_model(self):
        res = random_instance(0)  # sar
        with pytest.raises(sp.UnknownClusterError):
            sp.impact_matrix(res, "x1", cluster="svc")

    def test_unknown_sector(self):
        data = make_data(
            "sdm-c", n=10, t=5, seed=7, sigma=0.05,
            clusters=(sp.ClusterRecipe("svc", (-0.5, 0.2), 0.4),),
        )
        res = sp.fit(data.panel, data.model_spec())
        with pytest.raises(sp.UnknownClusterError):
            sp.impact_matrix(res, "x1", cluster="zzz")

    def test_lagged_variable_needs_cluster(self):
        data = make_data(
            "sdm-c", n=10, t=5, seed=7, sigma=0.05,
            clusters=(sp.ClusterRecipe("svc", (-0.5, 0.2), 0.4),),
        )
        res = sp.fit(data.panel, data.model_spec())
        with pytest.raises(sp.UnknownClusterError):
            sp.impact_matrix(res, "x1")

    def test_unknown_variable(self):
        res = random_instance(0)
        with pytest.raises(sp.UnknownVariableError):
            sp.impact_matrix(res, "zz")
