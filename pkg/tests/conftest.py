import pytest

from hammersim.profiles import load_profile


@pytest.fixture(scope="session")
def vendor1():
    return load_profile("vendor1")


@pytest.fixture(scope="session")
def vendor2():
    return load_profile("vendor2")


@pytest.fixture(scope="session")
def vendor3():
    return load_profile("vendor3")
