"""Shared problem fixtures for the test-suite."""
import numpy as np

from subdiff.coefficients import CoefficientField
from subdiff.problem import DD, DN, Discretization, Excitation, ProblemSpec


def q_example1():
    return CoefficientField.from_function(lambda x: 10 * x * (1 - x) ** 2, 2001)


def rho_example1():
    return CoefficientField.piecewise([0.5], [1.0, 1.5])


def q_example2():
    return CoefficientField.from_function(lambda x: 1 / (1 + np.exp(-10 * x)), 2001)


def example1(alpha=0.75):
    return ProblemSpec(alpha, 1.0, rho_example1(), q_example1(), DD, Excitation.indicator(0.5), 1.0)


def example2(alpha=0.5):
    return ProblemSpec(alpha, 1.0, CoefficientField.constant(1.0), q_example2(), DN,
                       Excitation.indicator(0.8), 1.0)


REFERENCE_DISC = Discretization(100, 1000)
