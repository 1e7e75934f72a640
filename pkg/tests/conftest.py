import numpy as np
import pytest

import spatialpanel as sp


@pytest.fixture
def line_coords():
    # three regions on a line at x = 0, 1, 3: pair distances 1, 3, 2
    return [
        sp.Coordinate("a", 0.0, 0.0),
        sp.Coordinate("b", 1.0, 0.0),
        sp.Coordinate("c", 3.0, 0.0),
    ]


@pytest.fixture
def line_weights(line_coords):
    return sp.build_inverse_distance(line_coords)


@pytest.fixture
def small_panel():
    """4 regions x 3 periods x 2 regressors, fixed numbers."""
    rng = np.random.default_rng(1234)
    y = rng.normal(size=(4, 3))
    x = rng.normal(size=(4, 3, 2))
    return sp.RegionPanel(
        region_ids=("r0", "r1", "r2", "r3"),
        period_labels=("2002", "2003", "2004"),
        y=y,
        x=x,
        variable_names=("x1", "x2"),
    )


def make_data(family="sar", n=20, t=6, seed=7, sigma=0.05, rho=0.3, **extra):
    """One synthetic dataset with a row-normalized planar weight matrix."""
    cfg = sp.DgpConfig(
        family=family,
        n=n,
        t=t,
        beta=(0.6, 1.0),
        rho=rho,
        sigma=sigma,
        weight_recipe=sp.WeightRecipe(kind="random-planar", normalize="row"),
        seed=seed,
        **extra,
    )
    return sp.generate(cfg)
