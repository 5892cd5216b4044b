import numpy as np
import pytest

from config import settings
from services.basis_service import legendre_basis, mixture_basis
from services.benchmark_service import synthetic_metrics, synthetic_mixture
from services.kinship_service import load_or_solve
from services.quadrature_service import optimize_quadrature
from services.surrogate_service import fit_pce, sample_plan


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    """Keep kinship and quadrature caches out of the working tree."""
    monkeypatch.setattr(settings, 'CACHE_DIR', str(tmp_path / 'cache'))


@pytest.fixture(scope='session')
def synthetic_model():
    return synthetic_mixture()


@pytest.fixture(scope='session')
def design_box():
    return np.array([[-1.0, 1.0], [-1.0, 1.0]])


@pytest.fixture(scope='session')
def basis_x(design_box):
    return legendre_basis(2, 2, design_box)


@pytest.fixture(scope='session')
def basis_xi(synthetic_model):
    # order 4 covers surrogates at p = 2 and quadrature at q = 2
    return mixture_basis(synthetic_model, 4)


@pytest.fixture(scope='session')
def synthetic_rule(basis_xi, synthetic_model):
    return optimize_quadrature(basis_xi, synthetic_model, 2, seed=1)


@pytest.fixture(scope='session')
def kinship_5():
    return load_or_solve(5, use_cache=False)


@pytest.fixture(scope='session')
def synthetic_plan(basis_x, design_box, synthetic_rule):
    return sample_plan(basis_x, design_box, synthetic_rule, 2)


@pytest.fixture(scope='session')
def synthetic_surrogates(synthetic_plan, basis_x, basis_xi):
    """Exact p = 2 surrogates of the synthetic objective f and constraints y1, y2."""
    x, xi, weights = synthetic_plan
    values = synthetic_metrics(x, xi)
    return {name: fit_pce((x, xi, values[name]), basis_x, basis_xi, 2, weights) for name in values}
