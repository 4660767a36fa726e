import numpy as np
import pytest

from flowop import GaussianMixture, NoiseSchedule, default_bimodal, make_time_grid


@pytest.fixture
def sched():
    return NoiseSchedule()


@pytest.fixture
def bimodal():
    return default_bimodal()


@pytest.fixture
def standard_normal_2d():
    return GaussianMixture(weights=[1.0], means=[[0.0, 0.0]], variances=[1.0])


@pytest.fixture
def single_gaussian():
    # centered component with s^2 = 0.25; the flow ODE is linear and solvable
    return GaussianMixture(weights=[1.0], means=[[0.0, 0.0]], variances=[0.25])


@pytest.fixture
def grid4(sched):
    return make_time_grid(4, "quadratic", sched.t_max, sched.t_min)
