import json
from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest

import spatialpanel as sp
from spatialpanel.estimator import (
    _maximize_profile,
    _numerical_hessian,
    concentrated_loglik,
    log_det_factor,
)
from spatialpanel.panel import within_transform

from conftest import make_data

# log|det(I - 0.5 W)| for the 2x2 swap matrix: log(0.5) + log(1.5)
LOGDET_SWAP_HALF = -0.2876820724517809


def swap_weights():
    return sp.WeightMatrix(
        region_ids=("a", "b"),
        entries=np.array([[0.0, 1.0], [1.0, 0.0]]),
        metric="none",
        exponent=1.0,
        normalization="none",
    )


class TestLogDet:
    def test_swap_matrix_reference(self):
        npt.assert_allclose(
            log_det_factor(0.5, swap_weights()), LOGDET_SWAP_HALF,
            rtol=0, atol=1e-12,
        )

    def test_matches_dense_slogdet(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(3, 12))
            a = rng.uniform(size=(n, n))
            np.fill_diagonal(a, 0.0)
            a = a / a.sum(axis=1, keepdims=True)
            w = sp.WeightMatrix(
                region_ids=tuple(f"r{i}" for i in range(n)),
                entries=a,
                metric="none",
                exponent=1.0,
                normalization="row",
            )
            rho = float(rng.uniform(-0.9, 0.9))
            _, ld = np.linalg.slogdet(np.eye(n) - rho * a)
            npt.assert_allclose(
                log_det_factor(rho, w), ld, rtol=0, atol=1e-8
            )

    def test_out_of_interval_rejected(self):
        w = sp.row_normalize(swap_weights())
        with pytest.raises(sp.RhoOutOfBoundsError):
            log_det_factor(1.0, w)


class TestConcentratedLoglik:
    def test_at_zero_equals_ols_loglik(self):
        data = make_data("sar", n=15, t=5, seed=3, sigma=0.3)
        p, w = data.panel, data.weights
        wp = within_transform(p)
        yt = wp.y_flat()
        z = wp.x_flat()
        wyt = (w.entries @ wp.y).reshape(-1)
        got = concentrated_loglik(0.0, yt, wyt, z, w)
        coefs, *_ = np.linalg.lstsq(z, yt, rcond=None)
        resid = yt - z @ coefs
        sigma2 = resid @ resid / yt.size
        nt = yt.size
        expected = (
            -nt / 2.0 * (np.log(2.0 * np.pi) + 1.0)
            - nt / 2.0 * np.log(sigma2)
        )
        npt.assert_allclose(got, expected, rtol=1e-12)

    def test_fitted_rho_beats_a_fine_grid(self):
        data = make_data("sar", n=20, t=6, seed=9, sigma=0.2)
        res = sp.fit(data.panel, data.model_spec())
        p, w = data.panel, data.weights
        wp = within_transform(p)
        yt, z = wp.y_flat(), wp.x_flat()
        wyt = (w.entries @ wp.y).reshape(-1)
        at_hat = concentrated_loglik(res.rho, yt, wyt, z, w)
        lo, hi = res.rho_interval
        pad = 1e-4 * (hi - lo)
        for rho in np.linspace(lo + pad, hi - pad, 201):
            assert concentrated_loglik(float(rho), yt, wyt, z, w) <= (
                at_hat + 1e-9
            )


class TestDesign:
    def test_sdm_c_column_count(self):
        # 4 direct + 8 clusters x 4 lagged + 1 dummy = 37 columns
        rng = np.random.default_rng(11)
        n, t, k = 12, 4, 4
        p = sp.RegionPanel(
            region_ids=tuple(f"r{i}" for i in range(n)),
            period_labels=tuple(str(2000 + s) for s in range(t)),
            y=rng.normal(size=(n, t)),
            x=rng.normal(size=(n, t, k)),
            variable_names=("inc", "pop", "edu", "inv"),
        )
        w = sp.row_normalize(
            sp.build_contiguity(n, [(i, (i + 1) % n) for i in range(n)])
        )
        clusters = tuple(
            sp.ClusterIndicator(
                f"s{v}", w.region_ids,
                (rng.uniform(size=n) < 0.5).astype(float),
            )
            for v in range(8)
        )
        spec = sp.ModelSpec(
            family="sdm-c",
            weights=w,
            clusters=clusters,
            lagged_variables=p.variable_names,
            extra_dummies=("period=2003",),
        )
        design = sp.build_design(p, spec)
        assert design.values.shape == (n, t, 37)
        assert design.labels[:4] == ("inc", "pop", "edu", "inv")
        assert design.labels[4] == "lag[s0]:inc"
        assert design.labels[-1] == "dummy:period=2003"

    def test_sar_design_is_direct_only(self):
        data = make_data("sar", n=10, t=4, seed=2)
        design = sp.build_design(data.panel, data.model_spec())
        assert design.labels == ("x1", "x2")

    def test_all_ones_cluster_matches_sdm(self):
        data = make_data("sdm", n=10, t=4, seed=2, gamma=(-0.4, 0.1))
        p, w = data.panel, data.weights
        ones = sp.ClusterIndicator("all", w.region_ids, np.ones(w.n))
        d_sdm = sp.build_design(
            p, sp.ModelSpec("sdm", w, lagged_variables=p.variable_names)
        )
        d_sdmc = sp.build_design(
            p,
            sp.ModelSpec(
                "sdm-c", w, clusters=(ones,),
                lagged_variables=p.variable_names,
            ),
        )
        npt.assert_array_equal(d_sdmc.values, d_sdm.values)

    def test_unknown_dummy_period_rejected(self):
        data = make_data("sar", n=10, t=4, seed=2)
        spec = replace(data.model_spec(), extra_dummies=("period=1890",))
        with pytest.raises(sp.DataFormatError):
            sp.build_design(data.panel, spec)

    def test_unknown_lagged_variable_rejected(self):
        data = make_data("sar", n=10, t=4, seed=2)
        spec = sp.ModelSpec("sdm", data.weights, lagged_variables=("nope",))
        with pytest.raises(sp.UnknownVariableError):
            sp.build_design(data.panel, spec)


class TestModelSpecValidation:
    def test_clusters_only_for_sdm_c(self):
        data = make_data("sar", n=8, t=4, seed=2)
        ones = sp.ClusterIndicator(
            "all", data.weights.region_ids, np.ones(8)
        )
        with pytest.raises(sp.DataFormatError):
            sp.ModelSpec("sar", data.weights, clusters=(ones,))

    def test_sdm_c_requires_clusters(self):
        data = make_data("sar", n=8, t=4, seed=2)
        with pytest.raises(sp.DataFormatError):
            sp.ModelSpec(
                "sdm-c", data.weights, lagged_variables=("x1",)
            )

    def test_duplicate_sector_rejected(self):
        data = make_data("sar", n=8, t=4, seed=2)
        ones = sp.ClusterIndicator(
            "svc", data.weights.region_ids, np.ones(8)
        )
        with pytest.raises(sp.DataFormatError):
            sp.ModelSpec(
                "sdm-c", data.weights, clusters=(ones, ones),
                lagged_variables=("x1",),
            )

    def test_error_weights_only_for_sac(self):
        data = make_data("sar", n=8, t=4, seed=2)
        with pytest.raises(sp.DataFormatError):
            sp.ModelSpec(
                "sar", data.weights, error_weights=data.weights
            )

    def test_unknown_family_rejected(self):
        data = make_data("sar", n=8, t=4, seed=2)
        with pytest.raises(sp.DataFormatError):
            sp.ModelSpec("durbin", data.weights)


class CheckNoiselessRecovery:
    """Zero-noise data: the optimizer must hit the truth."""

    family = "sar"
    extra: dict = {}

    def test_recovery(self):
        data = make_data(self.family, n=25, t=6, seed=9, sigma=0.0,
                         **self.extra)
        res = sp.fit(data.panel, data.model_spec())
        truth = sp.true_parameter_map(data.config)
        for name in res.param_names:
            npt.assert_allclose(
                res.coef(name), truth[name], rtol=0, atol=1e-6,
                err_msg=name,
            )


class TestNoiselessSar(CheckNoiselessRecovery):
    family = "sar"


class TestNoiselessSdm(CheckNoiselessRecovery):
    family = "sdm"
    extra = {"gamma": (-0.4, 0.1)}


class TestNoiselessSdmC(CheckNoiselessRecovery):
    family = "sdm-c"
    extra = {
        "clusters": (sp.ClusterRecipe("c0", (-0.5, 0.2), 0.5),),
    }


class TestNesting:
    def test_sdm_without_lags_equals_sar(self):
        data = make_data("sdm", n=30, t=8, seed=17, sigma=0.1,
                         gamma=(-0.4, 0.1), rho=0.25)
        p, w = data.panel, data.weights
        sar = sp.fit(p, sp.ModelSpec("sar", w))
        sdm0 = sp.fit(p, sp.ModelSpec("sdm", w, lagged_variables=()))
        npt.assert_allclose(
            sdm0.estimates, sar.estimates, rtol=0, atol=1e-6
        )

    def test_sdm_c_all_ones_equals_sdm(self):
        data = make_data("sdm", n=30, t=8, seed=17, sigma=0.1,
                         gamma=(-0.4, 0.1), rho=0.25)
        p, w = data.panel, data.weights
        ones = sp.ClusterIndicator("all", w.region_ids, np.ones(w.n))
        sdm = sp.fit(
            p, sp.ModelSpec("sdm", w, lagged_variables=p.variable_names)
        )
        sdmc = sp.fit(
            p,
            sp.ModelSpec(
                "sdm-c", w, clusters=(ones,),
                lagged_variables=p.variable_names,
            ),
        )
        npt.assert_allclose(
            sdmc.estimates, sdm.estimates, rtol=0, atol=1e-6
        )
        assert sdmc.loglik == pytest.approx(sdm.loglik, abs=1e-9)

    def test_sac_with_pinned_theta_equals_sar(self):
        data = make_data("sdm", n=30, t=8, seed=17, sigma=0.1,
                         gamma=(-0.4, 0.1), rho=0.25)
        p, w = data.panel, data.weights
        sar = sp.fit(p, sp.ModelSpec("sar", w))
        sac0 = sp.fit_sac(p, sp.ModelSpec("sac", w), theta=0.0)
        npt.assert_allclose(
            sac0.estimates, sar.estimates, rtol=0, atol=1e-6
        )
        assert sac0.theta == 0.0
        assert sac0.theta_fixed == 0.0


class TestSemAndSac:
    def test_sem_recovers_within_three_se(self):
        data = make_data("sem", n=40, t=10, seed=11, sigma=0.05, rho=0.25)
        res = sp.fit(data.panel, data.model_spec())
        assert abs(res.rho - 0.25) < 3.0 * res.se("rho")
        for name, truth in (("x1", 0.6), ("x2", 1.0)):
            assert abs(res.coef(name) - truth) < 0.02

    def test_sac_recovers_within_three_se(self):
        data = make_data("sac", n=40, t=10, seed=11, sigma=0.05, rho=0.25,
                         theta=0.2)
        res = sp.fit(data.panel, data.model_spec())
        assert abs(res.rho - 0.25) < 3.0 * res.se("rho")
        assert abs(res.theta - 0.2) < 3.0 * res.se("theta")
        assert res.param_names[:2] == ("rho", "theta")

    def test_sac_second_weight_matrix(self):
        data = make_data("sac", n=25, t=8, seed=13, sigma=0.1, rho=0.2,
                         theta=0.15)
        p, w = data.panel, data.weights
        other = sp.row_normalize(
            sp.build_contiguity(
                w.n, [(i, (i + 1) % w.n) for i in range(w.n)],
                region_ids=w.region_ids,
            )
        )
        res = sp.fit(p, sp.ModelSpec("sac", w, error_weights=other))
        assert np.isfinite(res.loglik)
        assert res.spec.error_weights is not None


class TestScaleEquivariance:
    def test_doubling_y_doubles_beta_keeps_rho(self):
        data = make_data("sar", n=25, t=6, seed=19, sigma=0.2)
        res1 = sp.fit(data.panel, data.model_spec())
        p2 = replace(data.panel, y=2.0 * data.panel.y)
        res2 = sp.fit(p2, data.model_spec())
        npt.assert_allclose(res2.rho, res1.rho, rtol=0, atol=1e-8)
        npt.assert_allclose(
            res2.coef("x1"), 2.0 * res1.coef("x1"), rtol=1e-6
        )


def test_boundary_maximum_raises():
    cfg = sp.DgpConfig(
        family="sar", n=20, t=6, beta=(0.6, 1.0), rho=0.999, sigma=0.0,
        weight_recipe=sp.WeightRecipe(kind="random-planar", normalize="row"),
        seed=3,
    )
    data = sp.generate(cfg)
    with pytest.raises(sp.RhoOnBoundaryError):
        sp.fit(data.panel, data.model_spec())


def test_maximize_profile_prefers_small_rho_on_ties():
    # a symmetric bimodal profile: the tie-break picks the smaller |rho|
    got = _maximize_profile(lambda r: -((r * r - 0.25) ** 2), (-1.0, 1.0))
    assert abs(got) == pytest.approx(0.5, abs=1e-6)


def test_numerical_hessian_on_a_quadratic():
    a = np.array([[2.0, 0.3], [0.3, 1.0]])

    def f(v):
        return -0.5 * float(v @ a @ v)

    h = _numerical_hessian(f, np.zeros(2), steps=np.full(2, 1e-5))
    npt.assert_allclose(h, -a, rtol=0, atol=1e-6)


class TestFitResult:
    def fit_sdmc(self):
        data = make_data(
            "sdm-c", n=15, t=5, seed=7, sigma=0.05,
            clusters=(sp.ClusterRecipe("svc", (-0.5, 0.2), 0.4),),
        )
        return sp.fit(data.panel, data.model_spec())

    def test_summary_layout(self):
        res = self.fit_sdmc()
        lines = res.summary().splitlines()
        assert lines[0] == "model: sdm-c (fixed-effects QML)"
        assert any(line.startswith("R-squared:") for line in lines)
        # direct regressors first, then rho, then the cluster lags
        body = lines[lines.index("") + 1 :]
        assert body[0].startswith("x1")
        assert any(ln.startswith("rho") for ln in body)
        assert body[-1].startswith("lag[svc]:x2")

    def test_summary_value_formatting(self):
        res = self.fit_sdmc()
        res = replace(
            res,
            estimates=np.where(
                np.array(res.param_names) == "x1", 0.58, res.estimates
            ),
            t_stats=np.where(
                np.array(res.param_names) == "x1", 37.34097, res.t_stats
            ),
        )
        line = next(
            ln for ln in res.summary().splitlines() if ln.startswith("x1")
        )
        assert "0.5800" in line
        assert "(37.3410)" in line

    def test_accessors(self):
        res = self.fit_sdmc()
        assert set(res.beta) == {"x1", "x2"}
        assert set(res.gamma) == {("svc", "x1"), ("svc", "x2")}
        assert res.theta is None
        assert res.sign_convention == "structural operator I - rho*W"
        lo, hi = res.rho_interval
        assert lo < res.rho < hi

    def test_json_round_trip(self, tmp_path):
        res = self.fit_sdmc()
        path = tmp_path / "fit.json"
        res.to_json(str(path))
        back = sp.FitResult.from_json(str(path))
        assert back.param_names == res.param_names
        npt.assert_array_equal(back.estimates, res.estimates)
        npt.assert_array_equal(back.covariance, res.covariance)
        npt.assert_array_equal(
            back.spec.weights.entries, res.spec.weights.entries
        )
        assert back.spec.clusters[0].sector_id == "svc"
        assert back.fixed_effects == res.fixed_effects
        # the decomposition built from the copy matches the original
        t1 = sp.effects_dispersion(res, draws=150, seed=5)
        t2 = sp.effects_dispersion(back, draws=150, seed=5)
        assert t1.to_dict() == t2.to_dict()

    def test_json_is_plain_data(self, tmp_path):
        res = self.fit_sdmc()
        path = tmp_path / "fit.json"
        res.to_json(str(path))
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        assert payload["family"] == "sdm-c"
        assert isinstance(payload["estimates"], list)

    def test_r2_within_unit_interval(self):
        res = self.fit_sdmc()
        assert 0.0 <= res.r2 <= 1.0
        assert res.adj_r2 <= res.r2

    def test_sigma2_positive_with_se(self):
        res = self.fit_sdmc()
        assert res.sigma2 > 0.0
        assert res.sigma2_se > 0.0
