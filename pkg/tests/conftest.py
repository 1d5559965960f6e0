import numpy as np
import pytest

from bv_control import JumpControl
from bv_examples import example1, exact_state_of_control
from fem_core import ProblemSpec, assemble_system, build_uniform_mesh


@pytest.fixture
def mesh4():
    return build_uniform_mesh(4)


@pytest.fixture
def mesh32():
    return build_uniform_mesh(32)


@pytest.fixture
def poisson_zero():
    """-u'' = q with u_d = 0"""
    return ProblemSpec(desired_state=lambda x: np.zeros_like(x), alpha=1e-5)


@pytest.fixture(scope="session")
def ex1():
    return example1()


@pytest.fixture
def target_control():
    return JumpControl.from_jumps(1.0, [(0.3, 2.0), (0.7, -1.5)])


@pytest.fixture
def tracking_spec(target_control):
    """u_d is the exact state of a two-jump control"""
    return ProblemSpec(desired_state=exact_state_of_control(target_control), alpha=1e-8)


@pytest.fixture
def tracking_system(mesh32, tracking_spec):
    return assemble_system(mesh32, tracking_spec)
