"""Run configuration: strict JSON loading, defaults, canonical round trips.

Unknown keys are rejected (silent hyperparameter typos are the dominant
failure mode when reproducing training results), invariant violations are
reported field by field, and every field left unset is filled from the
defaults table with its provenance recorded.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .baselines import BASELINE_ALGORITHMS
from .cmdp import GRIDWORLD_KINDS, CmdpSpec, build_gridworld
from .estimation import EstimatorConfig
from .scheduler import OptimizerConfig, StageConfig

ALGORITHMS = ("acpo",) + BASELINE_ALGORITHMS


class ConfigError(ValueError):
    """Invalid configuration; message lists each offending field."""


@dataclass
class EnvConfig:
    kind: str = "hazard-goal"
    size: int = 5
    seed: int = 0
    discount: float = 0.99
    horizon: int | None = None
    slip: float = 0.0

    def build(self) -> CmdpSpec:
        overrides = {"discount": self.discount, "slip": self.slip}
        if self.horizon is not None:
            overrides["horizon"] = self.horizon
        return build_gridworld(self.kind, self.size, self.seed, **overrides)


@dataclass
class BaselineConfig:
    lagrange_init: float = 1e-3
    lagrange_lr: float = 0.035
    lagrange_upper: float = 1000.0
    crpo_tol: float = 0.0
    curriculum_decay_iters: int | None = None
    curriculum_shape: str = "linear"


@dataclass
class RunConfig:
    algorithm: str
    environment: EnvConfig
    stage: StageConfig
    estimator: EstimatorConfig
    optimizer: OptimizerConfig
    baseline: BaselineConfig
    seed: int = 0
    num_iterations: int = 300
    batch_size: int = 4000
    checkpoint_every: int = 50
    workers: int = 1
    reset_policy_on_projection: bool = False
    output_dir: str = ""


# Default desired/initial budgets per benchmark family, in undiscounted
# episode-cost units; see the family builders for the geometry behind them.
FAMILY_BUDGETS = {
    "hazard-goal": {"d_des": [1.0], "d0": [3.0]},
    "trap": {"d_des": [0.5], "d0": [4.0]},
    "two-cost": {"d_des": [0.5, 0.5], "d0": [4.0, 4.0]},
}

TOP_DEFAULTS = {
    "seed": 0,
    "num_iterations": 300,
    "batch_size": 4000,
    "checkpoint_every": 50,
    "workers": 1,
    "reset_policy_on_projection": False,
    "output_dir": "",
}

SECTION_DEFAULTS = {
    "environment": {"kind": "hazard-goal", "size": 5, "seed": 0, "discount": 0.99, "horizon": None, "slip": 0.0},
    "stage": {
        "n1": 10,
        "n2": 5,
        "n_e": 10,
        "k_p": 0.5,
        "finish_tol": 0.05,
        "converge_window": 10,
        "converge_rel_tol": 0.02,
        "trust_region": 0.02,
        "barrier_t": 25.0,
        "barrier_cap": 25.0,
        "d0": None,  # family default
        "d_des": None,  # family default
    },
    "estimator": {
        "gamma": None,  # inherits the environment discount
        "gae_lambda_reward": 0.95,
        "gae_lambda_cost": 0.95,
        "value_fit_epochs": 80,
        "value_learning_rate": 0.05,
        "normalize_reward_advantages": True,
    },
    "optimizer": {"learning_rate": 3e-4, "epochs": 40, "minibatch_size": 256, "clip_ratio": 0.2},
    "baseline": {
        "lagrange_init": 1e-3,
        "lagrange_lr": 0.035,
        "lagrange_upper": 1000.0,
        "crpo_tol": 0.0,
        "curriculum_decay_iters": None,
        "curriculum_shape": "linear",
    },
}


def _check_unknown(doc: dict, allowed, where: str, errors: list):
    for key in doc:
        if key not in allowed:
            errors.append(f"unknown key {where}{key!r}")


def resolve_config(doc: dict) -> tuple[dict, dict]:
    """Fill defaults into a raw config dict; returns (resolved, provenance).

    Provenance maps each defaulted dotted key to the value applied. Raises
    ConfigError listing every unknown key and invariant violation.
    """
    errors: list[str] = []
    provenance: dict[str, object] = {}
    resolved: dict = {}

    allowed_top = {"algorithm", "environment", "stage", "estimator", "optimizer", "baseline", *TOP_DEFAULTS}
    _check_unknown(doc, allowed_top, "", errors)

    algorithm = doc.get("algorithm")
    if algorithm is None:
        errors.append("missing required key 'algorithm'")
    elif algorithm not in ALGORITHMS:
        errors.append(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    resolved["algorithm"] = algorithm

    for key, default in TOP_DEFAULTS.items():
        if key in doc:
            resolved[key] = doc[key]
        else:
            resolved[key] = default
            provenance[key] = default

    for section, defaults in SECTION_DEFAULTS.items():
        sub = doc.get(section, {})
        if not isinstance(sub, dict):
            errors.append(f"section {section!r} must be an object")
            sub = {}
        _check_unknown(sub, set(defaults), f"{section}.", errors)
        out = {}
        for key, default in defaults.items():
            if key in sub:
                out[key] = sub[key]
            else:
                out[key] = default
                provenance[f"{section}.{key}"] = default
        resolved[section] = out

    env = resolved["environment"]
    if env["kind"] not in GRIDWORLD_KINDS:
        errors.append(f"environment.kind must be one of {GRIDWORLD_KINDS}, got {env['kind']!r}")

    # budgets default per family; gamma inherits the environment discount
    kind = env.get("kind")
    family = FAMILY_BUDGETS.get(kind, FAMILY_BUDGETS["hazard-goal"])
    for key in ("d0", "d_des"):
        if resolved["stage"][key] is None:
            resolved["stage"][key] = list(family[key])
            provenance[f"stage.{key}"] = list(family[key])
    if resolved["estimator"]["gamma"] is None:
        resolved["estimator"]["gamma"] = env["discount"]
        provenance["estimator.gamma"] = env["discount"]

    _validate(resolved, errors)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return resolved, provenance


def _validate(resolved: dict, errors: list):
    opt = resolved["optimizer"]
    if not 0 < opt["clip_ratio"] < 1:
        errors.append(f"optimizer.clip_ratio must lie in (0, 1), got {opt['clip_ratio']}")
    if opt["epochs"] < 1 or opt["minibatch_size"] < 1:
        errors.append("optimizer.epochs and minibatch_size must be >= 1")
    est = resolved["estimator"]
    for key in ("gae_lambda_reward", "gae_lambda_cost"):
        if not 0.0 <= est[key] <= 1.0:
            errors.append(f"estimator.{key} must lie in [0, 1], got {est[key]}")
    if est["gamma"] is not None and not 0.0 < est["gamma"] < 1.0:
        errors.append(f"estimator.gamma must lie in (0, 1), got {est['gamma']}")
    env = resolved["environment"]
    if not 0.0 < env["discount"] < 1.0:
        errors.append(f"environment.discount must lie in (0, 1), got {env['discount']}")
    if env["size"] < 3:
        errors.append("environment.size must be >= 3")
    stage = resolved["stage"]
    if stage["d0"] is not None and stage["d_des"] is not None:
        d0 = np.asarray(stage["d0"], dtype=float)
        d_des = np.asarray(stage["d_des"], dtype=float)
        if d0.shape != d_des.shape:
            errors.append("stage.d0 and stage.d_des must have matching lengths")
        elif np.any(d0 < d_des):
            errors.append("stage.d0 must dominate stage.d_des componentwise")
        if np.any(d_des < 0):
            errors.append("stage.d_des must be non-negative")
    for key in ("n1", "n2", "n_e"):
        if stage[key] < 1:
            errors.append(f"stage.{key} must be >= 1")
    if stage["k_p"] <= 0:
        errors.append("stage.k_p must be positive")
    if stage["barrier_t"] <= 0:
        errors.append("stage.barrier_t must be positive")
    if resolved["num_iterations"] < 1 or resolved["batch_size"] < 1:
        errors.append("num_iterations and batch_size must be >= 1")
    if resolved["workers"] < 1:
        errors.append("workers must be >= 1")
    base = resolved["baseline"]
    if base["curriculum_shape"] not in ("linear", "exponential"):
        errors.append("baseline.curriculum_shape must be linear or exponential")


def config_from_dict(resolved: dict) -> RunConfig:
    env = EnvConfig(**resolved["environment"])
    stage = StageConfig(**resolved["stage"])
    est = EstimatorConfig(**resolved["estimator"])
    opt = OptimizerConfig(**resolved["optimizer"])
    base = BaselineConfig(**resolved["baseline"])
    top = {k: resolved[k] for k in TOP_DEFAULTS}
    return RunConfig(
        algorithm=resolved["algorithm"],
        environment=env,
        stage=stage,
        estimator=est,
        optimizer=opt,
        baseline=base,
        **top,
    )


def load_config(path: str | Path) -> tuple[RunConfig, dict]:
    """Load and resolve a config file; returns (config, provenance)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    resolved, provenance = resolve_config(doc)
    return config_from_dict(resolved), provenance


def config_to_dict(cfg: RunConfig) -> dict:
    doc = {
        "algorithm": cfg.algorithm,
        "environment": asdict(cfg.environment),
        "stage": {**asdict(cfg.stage), "d0": np.asarray(cfg.stage.d0).tolist(), "d_des": np.asarray(cfg.stage.d_des).tolist()},
        "estimator": asdict(cfg.estimator),
        "optimizer": asdict(cfg.optimizer),
        "baseline": asdict(cfg.baseline),
    }
    for key in TOP_DEFAULTS:
        doc[key] = getattr(cfg, key)
    return doc


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(canonical_json(config_to_dict(cfg)))
