"""Shared helpers for the test suite: hand-built classical problems."""

import numpy as np

from hopmp.classical import ClassicalProblem
from hopmp.problem import ControlSet


def pendulum_classical_cp(T, v=0.0):
    return ClassicalProblem(
        f=lambda t, x, u: np.array([x[1], -x[0] + u[0]]),
        dfdx=lambda t, x, u: np.array([[0.0, 1.0], [-1.0, 0.0]]),
        dfdu=lambda t, x, u: np.array([[0.0], [1.0]]),
        cost=lambda x: -x[0],
        cost_grad=lambda x: np.array([-1.0, 0.0]),
        x0=np.array([0.0, v]),
        controls=ControlSet([-1.0], [1.0]),
        horizon=T,
    )


def third_order_chain_cp(T):
    return ClassicalProblem(
        f=lambda t, x, u: np.array([x[1], x[2], u[0]]),
        dfdx=lambda t, x, u: np.array([[0.0, 1.0, 0.0],
                                       [0.0, 0.0, 1.0],
                                       [0.0, 0.0, 0.0]]),
        cost=lambda x: -x[0],
        cost_grad=lambda x: np.array([-1.0, 0.0, 0.0]),
        x0=np.zeros(3),
        controls=ControlSet([-1.0], [1.0]),
        horizon=T,
    )
