"""Softmax policies over finite state spaces with exact analytic gradients.

Two parameterizations are supported: tabular (one logit row per state) and
linear (a weight matrix applied to a fixed per-state feature map). Both
reduce to the same internal representation, a dense per-state logit table,
so distributions, KL divergences and gradients share one code path. The
chain rule back to the trainable tensor is the identity for tabular
policies and a feature-matrix product for linear ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

TABULAR = "tabular-softmax"
LINEAR = "linear-softmax"


class PolicyNumericsError(ArithmeticError):
    """Raised when logits or probabilities become non-finite."""


@dataclass(frozen=True)
class PolicyParams:
    """Trainable policy parameters bound to a finite CMDP.

    For tabular policies `weights` has shape (S, A); for linear policies it
    has shape (F, A) and `features` holds the dense (S, F) feature matrix.
    """

    parameterization: str
    weights: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.parameterization not in (TABULAR, LINEAR):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if not np.all(np.isfinite(self.weights)):
            raise PolicyNumericsError("policy weights contain non-finite values")
        if self.parameterization == LINEAR:
            if self.features is None:
                raise ValueError("linear-softmax policies need a feature matrix")
            object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
            if self.features.ndim != 2 or self.features.shape[1] != self.weights.shape[0]:
                raise ValueError(
                    f"feature matrix {self.features.shape} incompatible with weights {self.weights.shape}"
                )

    @property
    def num_states(self) -> int:
        return self.weights.shape[0] if self.parameterization == TABULAR else self.features.shape[0]

    @property
    def num_actions(self) -> int:
        return self.weights.shape[1]

    def with_weights(self, weights: np.ndarray) -> "PolicyParams":
        return replace(self, weights=weights)


@dataclass(frozen=True)
class PolicyDist:
    """Action distribution at a single state."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be a distribution summing to 1 within 1e-12")


def tabular_policy(num_states: int, num_actions: int, logits: np.ndarray | None = None) -> PolicyParams:
    w = np.zeros((num_states, num_actions)) if logits is None else np.asarray(logits, dtype=float)
    return PolicyParams(parameterization=TABULAR, weights=w)


def linear_policy(
    features: np.ndarray | Callable[[int], np.ndarray],
    num_states: int,
    num_actions: int,
    weights: np.ndarray | None = None,
) -> PolicyParams:
    """Build a linear-softmax policy; a callable feature map is materialized densely."""
    if callable(features):
        feats = np.stack([np.asarray(features(s), dtype=float) for s in range(num_states)])
    else:
        feats = np.asarray(features, dtype=float)
    w = np.zeros((feats.shape[1], num_actions)) if weights is None else np.asarray(weights, dtype=float)
    return PolicyParams(parameterization=LINEAR, weights=w, features=feats)


def logits_table(params: PolicyParams) -> np.ndarray:
    """Dense (S, A) logit table."""
    if params.parameterization == TABULAR:
        return params.weights
    return params.features @ params.weights


def probs_table(params: PolicyParams) -> np.ndarray:
    """Dense (S, A) action-probability table, stabilized by per-state max shift."""
    z = logits_table(params)
    if not np.all(np.isfinite(z)):
        raise PolicyNumericsError("non-finite logits")
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_probs_table(params: PolicyParams) -> np.ndarray:
    z = logits_table(params)
    if not np.all(np.isfinite(z)):
        raise PolicyNumericsError("non-finite logits")
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def action_dist(params: PolicyParams, state: int) -> PolicyDist:
    """Action distribution at `state`: softmax of that state's logits."""
    if not 0 <= state < params.num_states:
        raise ValueError(f"state {state} out of range")
    return PolicyDist(probs=probs_table(params)[state])


def kl_divergence(p: PolicyParams, q: PolicyParams, state_weights: np.ndarray) -> float:
    """Weighted average over states of KL(p(.|s) || q(.|s)).

    Zero exactly when the two tables coincide on the support of the weights.
    """
    w = np.asarray(state_weights, dtype=float)
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError("state_weights must sum to 1")
    lp = log_probs_table(p)
    lq = log_probs_table(q)
    if np.array_equal(lp, lq):
        return 0.0
    pp = np.exp(lp)
    per_state = (pp * (lp - lq)).sum(axis=1)
    return float(w @ per_state)


def kl_table(p_probs: np.ndarray, p_logp: np.ndarray, q_logp: np.ndarray) -> np.ndarray:
    """Per-state KL(p || q) from precomputed prob/log-prob tables."""
    return (p_probs * (p_logp - q_logp)).sum(axis=1)


def entropy(params: PolicyParams, state_weights: np.ndarray | None = None) -> float:
    """Mean action entropy, uniformly over states unless weights are given."""
    lp = log_probs_table(params)
    per_state = -(np.exp(lp) * lp).sum(axis=1)
    if state_weights is None:
        return float(per_state.mean())
    return float(np.asarray(state_weights, dtype=float) @ per_state)


def chain_to_params(params: PolicyParams, grad_logits: np.ndarray) -> np.ndarray:
    """Map a gradient w.r.t. the (S, A) logit table back to the trainable tensor."""
    if params.parameterization == TABULAR:
        return grad_logits
    return params.features.T @ grad_logits


def logp_grad_coeffs(probs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-transition d log pi(a_i|s_i) / d logits(s_i, .) as rows (B, A).

    probs are the per-transition action distributions (B, A); the gradient
    row for transition i is onehot(a_i) - probs[i].
    """
    g = -probs.copy()
    g[np.arange(len(actions)), actions] += 1.0
    return g


def accumulate_logit_grad(
    num_states: int,
    num_actions: int,
    states: np.ndarray,
    coeff_rows: np.ndarray,
) -> np.ndarray:
    """Scatter per-transition logit-gradient rows into an (S, A) table."""
    grad = np.zeros((num_states, num_actions))
    np.add.at(grad, states, coeff_rows)
    return grad


def surrogate_gradient(params: PolicyParams, batch, objective) -> np.ndarray:
    """Exact gradient of a stage objective w.r.t. the trainable tensor.

    Thin front door over the stage-objective machinery; see
    `objectives.objective_value_and_grad` for the full contract. The batch
    must carry an `estimates` attribute (set by `estimation.make_estimates`)
    or be passed as a (batch, estimate) pair.
    """
    from . import objectives

    if isinstance(batch, tuple):
        batch, estimate = batch
    else:
        estimate = batch.estimates
    _, grad, _ = objectives.objective_value_and_grad(params, batch, estimate, objective)
    return grad


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------


def to_json(params: PolicyParams) -> str:
    doc = {
        "parameterization": params.parameterization,
        "shape": list(params.weights.shape),
        "values": params.weights.ravel().tolist(),
    }
    return json.dumps(doc)


def from_json(text: str, features: np.ndarray | None = None) -> PolicyParams:
    doc = json.loads(text)
    weights = np.asarray(doc["values"], dtype=float).reshape(doc["shape"])
    kind = doc["parameterization"]
    if kind == LINEAR and features is None:
        raise ValueError("loading a linear-softmax checkpoint requires the feature matrix")
    return PolicyParams(parameterization=kind, weights=weights, features=features if kind == LINEAR else None)
