"""Shared generators and oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from acpo.cmdp import CmdpSpec
from acpo.estimation import EstimatorConfig, ValueTables, collect, make_estimates
from acpo.policy import PolicyParams, tabular_policy


def random_spec(
    rng: np.random.Generator,
    num_states: int = 4,
    num_actions: int = 3,
    num_costs: int = 1,
    gamma: float = 0.9,
    horizon: int = 20,
) -> CmdpSpec:
    """A dense random CMDP with Dirichlet transition rows."""
    transition = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    reward = rng.uniform(-1.0, 1.0, size=(num_states, num_actions))
    costs = tuple(rng.uniform(0.0, 1.0, size=(num_states, num_actions)) for _ in range(num_costs))
    initial = rng.dirichlet(np.ones(num_states))
    return CmdpSpec(
        num_states=num_states,
        num_actions=num_actions,
        transition=transition,
        reward=reward,
        costs=costs,
        initial_dist=initial,
        discount=gamma,
        horizon=horizon,
    )


def random_policy(rng: np.random.Generator, spec: CmdpSpec, scale: float = 1.0) -> PolicyParams:
    return tabular_policy(spec.num_states, spec.num_actions, rng.normal(0.0, scale, (spec.num_states, spec.num_actions)))


def batch_with_estimates(spec, params, num_transitions=64, seed=0, config: EstimatorConfig | None = None):
    config = config or EstimatorConfig(gamma=spec.discount)
    batch = collect(spec, params, num_transitions, seed)
    tables = ValueTables.zeros(spec.num_states, spec.num_costs)
    estimate = make_estimates(batch, tables, config)
    return batch, estimate


def numerical_gradient(f, weights: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a weight tensor."""
    grad = np.zeros_like(weights)
    flat = weights.ravel()
    gflat = grad.ravel()
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        up = f(weights)
        flat[j] = orig - h
        down = f(weights)
        flat[j] = orig
        gflat[j] = (up - down) / (2 * h)
    return grad


def value_iteration(spec: CmdpSpec, tol: float = 1e-12, max_iter: int = 200000) -> tuple[np.ndarray, float]:
    """Optimal values of the unconstrained MDP; independent oracle for LP tests."""
    v = np.zeros(spec.num_states)
    for _ in range(max_iter):
        q = spec.reward + spec.discount * np.einsum("sap,p->sa", spec.transition, v)
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    return v, float(spec.initial_dist @ v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
