import pytest

from ksdlab.profile import ProfileParams, build_series, solve_profile


@pytest.fixture(scope="session")
def mu0_params():
    return ProfileParams.make(0.0, 4)


@pytest.fixture(scope="session")
def mu0_series(mu0_params):
    return build_series(mu0_params, 1e-12)


@pytest.fixture(scope="session")
def mu0_profile(mu0_params, mu0_series):
    return solve_profile(mu0_params, mu0_series, 1.0e4, 1e-10)
