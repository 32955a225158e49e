"""Shared fixtures.

The reach and quadrotor experiments are expensive, so they run once per
session and every test that needs a converged trajectory reuses the same
result dictionaries.
"""
import numpy as np
import pytest


@pytest.fixture(scope="session")
def reach_gmsr_result():
    from stlgmsr.problems import run_reach_experiment

    return run_reach_experiment("gmsr")


@pytest.fixture(scope="session")
def reach_dssr_result():
    from stlgmsr.problems import run_reach_experiment

    return run_reach_experiment("dssr")


@pytest.fixture(scope="session")
def quadrotor_result():
    from stlgmsr.problems import run_quadrotor_experiment

    return run_quadrotor_experiment()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
