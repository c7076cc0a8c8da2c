"""Adaptive-moment gradient ascent over stage objectives with KL stopping.

Each `ascend` call runs `epochs` passes over the batch in shuffled
minibatches, taking Adam steps on the stage objective. Before every step
the full-batch KL between the current and the sampling policy is checked;
once it reaches the trust-region stop the whole update ends, so an accepted
update can overshoot the stop by at most one step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import EstimateSet, TrajectoryBatch
from .objectives import StageObjective, SurrogateValue, objective_value_and_grad
from .policy import PolicyParams, kl_table, log_probs_table, probs_table

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, weights: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(weights), v=np.zeros_like(weights))

    def step(self, weights: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        """One ascent step (gradient points uphill)."""
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1 - ADAM_BETA2) * grad * grad
        mhat = self.m / (1 - ADAM_BETA1**self.t)
        vhat = self.v / (1 - ADAM_BETA2**self.t)
        return weights + lr * mhat / (np.sqrt(vhat) + ADAM_EPS)


@dataclass
class AscendInfo:
    """Diagnostics for one ascend call."""

    steps: int
    stopped_early: bool
    aborted: bool
    final_kl: float
    kl_flagged: bool
    objective_start: float
    objective_end: float
    grad_norm: float
    final_value: SurrogateValue | None


def _batch_kl(params: PolicyParams, sampling_logp: np.ndarray, states: np.ndarray) -> float:
    lp = log_probs_table(params)
    per_state = kl_table(np.exp(lp), lp, sampling_logp)
    return float(per_state[states].mean())


def ascend(
    params: PolicyParams,
    batch: TrajectoryBatch,
    estimate: EstimateSet,
    obj: StageObjective,
    epochs: int,
    minibatch: int,
    lr: float,
    kl_stop: float,
    rng: np.random.Generator | None = None,
) -> tuple[PolicyParams, AscendInfo]:
    """Maximize the stage objective; returns updated params and diagnostics.

    A non-finite gradient aborts the update and returns the input params
    flagged. Minibatch order is drawn from `rng` so runs are reproducible.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    rng = rng or np.random.default_rng(0)
    sampling_logp = log_probs_table(params)
    start_value, _, _ = objective_value_and_grad(params, batch, estimate, obj)
    weights = params.weights.copy()
    current = params
    adam = AdamState.like(weights)
    n = batch.batch_size
    steps = 0
    stopped = False
    aborted = False
    grad_norm = 0.0

    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, minibatch):
            kl_now = _batch_kl(current, sampling_logp, batch.states)
            if kl_now >= kl_stop:
                stopped = True
                break
            idx = order[lo : lo + minibatch]
            value, grad, _ = objective_value_and_grad(current, batch, estimate, obj, idx=idx)
            if not (np.all(np.isfinite(grad)) and np.isfinite(value.objective)):
                aborted = True
                break
            grad_norm = float(np.max(np.abs(grad)))
            weights = adam.step(weights, grad, lr)
            current = current.with_weights(weights)
            steps += 1
        if stopped or aborted:
            break

    if aborted:
        current = params
    final_kl = _batch_kl(current, sampling_logp, batch.states)
    final_value, _, _ = objective_value_and_grad(current, batch, estimate, obj)
    return current, AscendInfo(
        steps=steps,
        stopped_early=stopped,
        aborted=aborted,
        final_kl=final_kl,
        kl_flagged=final_kl > 2.0 * kl_stop if kl_stop > 0 else final_kl > 0,
        objective_start=start_value.objective,
        objective_end=final_value.objective,
        grad_norm=grad_norm,
        final_value=final_value,
    )
