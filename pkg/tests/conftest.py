import numpy as np
import pytest

from pmuplace.gramian import PerturbationScheme, per_generator_gramians
from pmuplace.model import bundled_case, initialize_equilibrium


@pytest.fixture(scope="session")
def demo2():
    return bundled_case("demo2")


@pytest.fixture(scope="session")
def demo10():
    return bundled_case("demo10")


@pytest.fixture(scope="session")
def demo2_eq(demo2):
    return initialize_equilibrium(demo2)


@pytest.fixture(scope="session")
def demo10_eq(demo10):
    return initialize_equilibrium(demo10)


@pytest.fixture(scope="session")
def demo2_scheme(demo2):
    return PerturbationScheme.default(demo2.n_dynamic)


@pytest.fixture(scope="session")
def demo10_scheme(demo10):
    return PerturbationScheme.default(demo10.n_dynamic)


@pytest.fixture(scope="session")
def demo2_parts(demo2, demo2_eq, demo2_scheme):
    x0, u0 = demo2_eq
    return per_generator_gramians(demo2, demo2_scheme, x0, u0)


@pytest.fixture(scope="session")
def demo10_parts(demo10, demo10_eq, demo10_scheme):
    x0, u0 = demo10_eq
    return per_generator_gramians(demo10, demo10_scheme, x0, u0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
