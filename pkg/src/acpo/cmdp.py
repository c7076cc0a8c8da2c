"""Finite constrained MDPs: specs, simulation, benchmark gridworlds, cost shaping.

A CMDP here is fully tabular: a dense transition tensor P[s, a, s'], a reward
table r[s, a], one or more cost tables c_i[s, a], an initial state
distribution, a discount factor and a sampling horizon. Specs are immutable
after construction and safe to share across many mutable `EnvState` instances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

PROB_TOL = 1e-12

GRIDWORLD_KINDS = ("hazard-goal", "trap", "two-cost")


class CmdpError(ValueError):
    """Raised when a spec or an operation on it is invalid."""


@dataclass(frozen=True)
class CmdpSpec:
    """A finite CMDP with dense tensors.

    transition has shape (S, A, S), reward (S, A), each cost table (S, A).
    Every transition row must be a probability distribution and the initial
    distribution must sum to one, both within 1e-12.
    """

    num_states: int
    num_actions: int
    transition: np.ndarray
    reward: np.ndarray
    costs: tuple[np.ndarray, ...]
    initial_dist: np.ndarray
    discount: float
    horizon: int
    name: str = ""

    def __post_init__(self):
        s, a = self.num_states, self.num_actions
        if s < 1 or a < 1:
            raise CmdpError("num_states and num_actions must be positive")
        if self.horizon < 1:
            raise CmdpError("horizon must be positive")
        if not (0.0 < self.discount < 1.0):
            raise CmdpError(f"discount must lie in (0, 1), got {self.discount}")
        object.__setattr__(self, "transition", np.asarray(self.transition, dtype=float))
        object.__setattr__(self, "reward", np.asarray(self.reward, dtype=float))
        object.__setattr__(self, "costs", tuple(np.asarray(c, dtype=float) for c in self.costs))
        object.__setattr__(self, "initial_dist", np.asarray(self.initial_dist, dtype=float))
        if self.transition.shape != (s, a, s):
            raise CmdpError(f"transition shape {self.transition.shape} != {(s, a, s)}")
        if self.reward.shape != (s, a):
            raise CmdpError(f"reward shape {self.reward.shape} != {(s, a)}")
        if len(self.costs) < 1:
            raise CmdpError("at least one cost table required")
        for i, c in enumerate(self.costs):
            if c.shape != (s, a):
                raise CmdpError(f"cost table {i} shape {c.shape} != {(s, a)}")
        if self.initial_dist.shape != (s,):
            raise CmdpError(f"initial_dist shape {self.initial_dist.shape} != {(s,)}")
        if np.any(self.transition < -PROB_TOL) or np.any(self.transition > 1 + PROB_TOL):
            raise CmdpError("transition entries must lie in [0, 1]")
        row_sums = self.transition.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > PROB_TOL:
            raise CmdpError("transition rows must each sum to 1 within 1e-12")
        if np.any(self.initial_dist < -PROB_TOL):
            raise CmdpError("initial_dist entries must be non-negative")
        if abs(self.initial_dist.sum() - 1.0) > PROB_TOL:
            raise CmdpError("initial_dist must sum to 1 within 1e-12")
        for arr in (self.transition, self.reward, self.initial_dist, *self.costs):
            arr.setflags(write=False)

    @property
    def num_costs(self) -> int:
        return len(self.costs)

    def to_json(self) -> str:
        """Serialize to a JSON document with dense row-major tensors."""
        doc = {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "transition": self.transition.ravel().tolist(),
            "reward": self.reward.ravel().tolist(),
            "costs": [c.ravel().tolist() for c in self.costs],
            "initial_dist": self.initial_dist.tolist(),
            "discount": self.discount,
            "horizon": self.horizon,
        }
        if self.name:
            doc["name"] = self.name
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "CmdpSpec":
        doc = json.loads(text)
        s, a = int(doc["num_states"]), int(doc["num_actions"])
        return cls(
            num_states=s,
            num_actions=a,
            transition=np.asarray(doc["transition"], dtype=float).reshape(s, a, s),
            reward=np.asarray(doc["reward"], dtype=float).reshape(s, a),
            costs=tuple(np.asarray(c, dtype=float).reshape(s, a) for c in doc["costs"]),
            initial_dist=np.asarray(doc["initial_dist"], dtype=float),
            discount=float(doc["discount"]),
            horizon=int(doc["horizon"]),
            name=doc.get("name", ""),
        )


@dataclass(frozen=True)
class CostShapingSpec:
    """Two-sided smooth barrier on a raw per-step cost.

    `lower_bound`/`upper_bound` delimit the allowed band, `smoothing` controls
    how sharply the shaped cost rises outside it. Either bound may be +-inf to
    disable that side.
    """

    lower_bound: float
    upper_bound: float
    smoothing: float

    def __post_init__(self):
        if not self.lower_bound < self.upper_bound:
            raise CmdpError("lower_bound must be < upper_bound")
        if not self.smoothing > 0:
            raise CmdpError("smoothing must be positive")


def shape_cost(c: float, shaping: CostShapingSpec) -> float:
    """Smoothly map a raw cost to [0, 2]: ~0 inside the band, ~1 past a bound.

    Sum of an upper-boundary term (1 + erf((c - b_r) / sigma)) / 2 and its
    mirrored lower-boundary counterpart; disabling one bound (setting it to
    +-inf) recovers the plain one-sided form.
    """
    sigma = shaping.smoothing
    upper = 0.0 if math.isinf(shaping.upper_bound) else 0.5 * (1.0 + math.erf((c - shaping.upper_bound) / sigma))
    lower = 0.0 if math.isinf(shaping.lower_bound) else 0.5 * (1.0 + math.erf((shaping.lower_bound - c) / sigma))
    return upper + lower


@dataclass
class EnvState:
    """Mutable per-episode simulation state; single-owner."""

    state_index: int
    steps_elapsed: int
    rng: np.random.Generator

    @classmethod
    def reset(cls, spec: CmdpSpec, rng: np.random.Generator) -> "EnvState":
        s0 = int(rng.choice(spec.num_states, p=spec.initial_dist))
        return cls(state_index=s0, steps_elapsed=0, rng=rng)


def step(spec: CmdpSpec, env: EnvState, action: int) -> tuple[EnvState, float, np.ndarray, bool]:
    """Advance one transition; returns (env, reward, per-constraint costs, done).

    The reward and costs are those of the (state, action) pair being left;
    done flags the episode hitting the sampling horizon. Stepping a finished
    episode is a state error.
    """
    if not 0 <= action < spec.num_actions:
        raise ValueError(f"action {action} out of range [0, {spec.num_actions})")
    if env.steps_elapsed >= spec.horizon:
        raise RuntimeError("episode is done; reset before stepping")
    s = env.state_index
    r = float(spec.reward[s, action])
    costs = np.array([c[s, action] for c in spec.costs])
    env.state_index = int(env.rng.choice(spec.num_states, p=spec.transition[s, action]))
    env.steps_elapsed += 1
    done = env.steps_elapsed >= spec.horizon
    return env, r, costs, done


# ---------------------------------------------------------------------------
# Benchmark gridworld families
# ---------------------------------------------------------------------------
#
# All three families share the same mechanics: a size x size board, four
# moves (up, right, down, left), optional slip to a random other direction,
# walls that bounce the agent back, and absorbing goal cells. Arrival
# rewards are paid in expectation on the transition into a goal
# (r(s, a) = R_goal * P(s, a, goal)), so an absorbed episode accrues nothing
# further and discounted returns stay close to undiscounted episode sums.

MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left


def _build_grid(
    size: int,
    start: tuple[int, int],
    goals: dict[tuple[int, int], float],
    cost_cells: list[dict[tuple[int, int], float]],
    walls: set[tuple[int, int]],
    slip: float,
    discount: float,
    horizon: int,
    name: str,
) -> CmdpSpec:
    n = size * size
    idx = lambda rc: rc[0] * size + rc[1]
    transition = np.zeros((n, 4, n))
    reward = np.zeros((n, 4))
    costs = [np.zeros((n, 4)) for _ in cost_cells]

    for r in range(size):
        for c in range(size):
            s = idx((r, c))
            if (r, c) in goals:
                transition[s, :, s] = 1.0  # absorbing, nothing accrues
                continue
            for k, field_map in enumerate(cost_cells):
                if (r, c) in field_map:
                    costs[k][s, :] = field_map[(r, c)]
            for a, (dr, dc) in enumerate(MOVES):
                outcomes = []
                for b, (er, ec) in enumerate(MOVES):
                    p = 1.0 - slip if b == a else slip / 3.0
                    if p == 0.0:
                        continue
                    nr, nc = r + er, c + ec
                    if not (0 <= nr < size and 0 <= nc < size) or (nr, nc) in walls:
                        nr, nc = r, c  # bounce back
                    outcomes.append((p, (nr, nc)))
                for p, cell in outcomes:
                    transition[s, a, idx(cell)] += p
                    if cell in goals:
                        reward[s, a] += p * goals[cell]

    initial = np.zeros(n)
    initial[idx(start)] = 1.0
    return CmdpSpec(
        num_states=n,
        num_actions=4,
        transition=transition,
        reward=reward,
        costs=tuple(costs),
        initial_dist=initial,
        discount=discount,
        horizon=horizon,
        name=name,
    )


def build_gridworld(kind: str, size: int, seed: int = 0, **overrides) -> CmdpSpec:
    """Construct one of the three benchmark families.

    hazard-goal: start and goal in opposite corners; the full anti-diagonal
      is a hazard band, so every route to the goal pays at least one band
      step per trip and wandering policies pay far more.
    trap: a walled corridor with a junction; a one-step arm reaches a
      small-reward goal at zero cost while the long arm crosses hazard cells
      to a large-reward goal. Under a tight fixed budget a learner settles
      on the short arm.
    two-cost: a plus-shaped maze; a safe arm reaches a small goal while the
      east and west arms cross separate hazard cells (two cost signals) to
      reach large goals.

    `size` sets the board edge (>= 3). `seed` is accepted for interface
    stability; the families are deterministic. Keyword overrides
    (discount, horizon, slip) adjust the family defaults.
    """
    if size < 3:
        raise ValueError("size must be >= 3")
    if kind == "hazard-goal":
        return _hazard_goal(size, **overrides)
    if kind == "trap":
        return _trap(size, **overrides)
    if kind == "two-cost":
        return _two_cost(size, **overrides)
    raise ValueError(f"unknown gridworld kind {kind!r}; expected one of {GRIDWORLD_KINDS}")


def _hazard_goal(size: int, discount: float = 0.99, horizon: int = 200, slip: float = 0.0) -> CmdpSpec:
    last = size - 1
    band = {(i, last - i): 1.0 for i in range(size)}
    return _build_grid(
        size,
        start=(0, 0),
        goals={(last, last): 1.0},
        cost_cells=[band],
        walls=set(),
        slip=slip,
        discount=discount,
        horizon=horizon,
        name=f"hazard-goal-{size}",
    )


def _trap(size: int, discount: float = 0.99, horizon: int = 24, slip: float = 0.0) -> CmdpSpec:
    # Row 1 is the corridor: the start sits one cell from the left end where
    # a small goal waits, and the right end holds a large goal behind two
    # hazard cells. Two pocket cells flank the start so a random walker
    # wastes time off the corridor; everything else is walled.
    last = size - 1
    corridor_row = 1
    start = (corridor_row, 1)
    near_goal = (corridor_row, 0)
    far_goal = (corridor_row, last)
    walls = {(r, c) for r in range(size) for c in range(size) if r != corridor_row}
    walls.discard((0, 1))
    walls.discard((2, 1))
    hazard = {(corridor_row, c): 1.0 for c in (last - 2, last - 1)}
    return _build_grid(
        size,
        start=start,
        goals={near_goal: 0.4, far_goal: 2.0},
        cost_cells=[hazard],
        walls=walls,
        slip=slip,
        discount=discount,
        horizon=horizon,
        name=f"trap-{size}",
    )


def _two_cost(size: int, discount: float = 0.99, horizon: int = 24, slip: float = 0.0) -> CmdpSpec:
    # Plus-shaped maze centred on the board. North arm: safe, small goal.
    # East and west arms: large goals behind a hazard cell each, emitting
    # separate cost signals. The south arm is walled off with the rest.
    mid = size // 2
    center = (mid, mid)
    open_cells = {center}
    open_cells |= {(r, mid) for r in range(mid)}          # north arm
    open_cells |= {(mid, c) for c in range(mid + 1, size)}  # east arm
    open_cells |= {(mid, c) for c in range(mid)}          # west arm
    walls = {(r, c) for r in range(size) for c in range(size)} - open_cells
    east_goal = (mid, size - 1)
    west_goal = (mid, 0)
    north_goal = (0, mid)
    east_hazard = {(mid, size - 2): 2.0}
    west_hazard = {(mid, 1): 2.0}
    return _build_grid(
        size,
        start=center,
        goals={north_goal: 0.3, east_goal: 1.5, west_goal: 1.5},
        cost_cells=[east_hazard, west_hazard],
        walls=walls,
        slip=slip,
        discount=discount,
        horizon=horizon,
        name=f"two-cost-{size}",
    )
