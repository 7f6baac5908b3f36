import numpy as np
import pytest

from utils.fields import AnalyticDatum, ScalarField, build_problem
from utils.radial_oracle import radial_grid


@pytest.fixture(autouse=True)
def isolated_workspace(tmp_path, monkeypatch):
    """Run every test in its own directory with the run ledger switched off."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setattr("commands.common.USE_RUN_LEDGER", False)
    return tmp_path


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def critical_problem():
    """N = 3, lambda = -1, f = 1/|x| on the unit ball."""
    return build_problem(3, -1.0, AnalyticDatum("inverse_radius", 1.0, 1.0))


@pytest.fixture
def radial_field():
    """Builder sampling a closed-form radial function on the default radial grid."""
    def build(dimension, profile, slope, radius=1.0):
        grid = radial_grid(radius, dimension)
        r = grid.samples
        return ScalarField(r, profile(r), grid.weights, dimension, radial=True, support=grid, gradient=slope(r))
    return build
