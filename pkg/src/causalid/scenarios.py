"""Scenario configs: built-in plants, JSON loading and validation.

A config is a JSON object::

    {
      "schema_version": 1,
      "name": "appendix_c",
      "plant": {"builtin": "appendix_c", "overrides": {"noise_std": 1e-4}},
      "master_seed": 0,
      "design": {...}, "steering": {...}, "test": {...}, "excitation": {...},
      "kernel": {"lengthscale": 1.0},
      "model_kind": "linear",
      "generalization": {"x0": [0, 0, 5], "target": 3, "runs": 10},
      "output_dir": "out/appendix_c"
    }

``plant`` may instead be explicit: ``{"type": "lti", "A": ..., "B": ...,
"noise_std": ...}`` or ``{"type": "nonlinear", "transition": "bilinear2",
"state_bounds": ..., "input_bounds": ..., "noise_std": ...}``. Sections
left out fall back to the built-in's defaults, then to library defaults.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .causal import ExcitationConfig, PipelineConfig, TestConfig
from .control import SteeringConfig
from .dynamics import TRANSITIONS, LtiModel, NonlinearModel, SystemModel
from .expdesign import DesignConfig
from .kernels import KernelConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Config is unreadable, malformed or inconsistent."""


BUILTINS: dict[str, dict] = {
    "appendix_c": {
        "plant": {
            "type": "lti",
            "A": [[0.9, -0.75, 1.2], [0.0, 0.9, -1.1], [0.0, 0.0, 0.7]],
            "B": [[0.03, 0.0, 0.0], [0.0, 0.06, 0.0], [0.07, 0.0, 0.05]],
            "noise_std": 1e-4,
        },
        "design": {"state_box": [[-1, 1]] * 3, "input_box": [[-1, 1]] * 3},
        "generalization": {"x0": [10.0, 10.0, 0.0], "target": 3, "runs": 10, "input_scale": 0.5},
    },
    "kinematic_robot": {
        # joint positions as states, velocity commands as inputs
        "plant": {
            "type": "lti",
            "A": np.eye(4).tolist(),
            "B": np.diag([0.013, 0.007, 0.01, 0.01]).tolist(),
            "noise_std": 1e-4,
        },
        "design": {"state_box": [[-1, 1]] * 4, "input_box": [[-1, 1]] * 4},
        "test": {"subtract_initial": True},
        # a faster closed loop keeps the steady-state offset from model error inside the tolerance
        "steering": {"Q": (1000.0 * np.eye(4)).tolist()},
        "generalization": {"x0": [3.0, -3.0, 3.0, -3.0], "target": 1, "runs": 10, "input_scale": 0.5},
    },
    "bilinear2": {
        "plant": {
            "type": "nonlinear",
            "transition": "bilinear2",
            "state_bounds": [[-2, 2], [-2, 2]],
            "input_bounds": [[-1, 1]],
            "noise_std": 1e-3,
        },
        "design": {"state_box": [[-1, 1], [-1, 1]], "input_box": [[-1, 1]]},
        "excitation": {"steps": 50, "episodes": 40},
        "model_kind": "feature",
    },
    "integrator1": {
        "plant": {"type": "lti", "A": [[1.0]], "B": [[0.05]], "noise_std": 1e-4},
        "design": {"state_box": [[-1, 1]], "input_box": [[-1, 1]]},
        "excitation": {"steps": 500},
    },
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario: the plant, the pipeline config and run metadata."""

    name: str
    plant: SystemModel
    pipeline: PipelineConfig
    master_seed: int
    output_dir: str | None
    generalization: dict | None
    raw: dict

    def with_seed(self, seed: int) -> "ScenarioConfig":
        raw = dict(self.raw, master_seed=int(seed))
        return from_dict(raw)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_finite(obj, path: str = "config") -> None:
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return
    if isinstance(obj, (int, float)):
        if not math.isfinite(obj):
            raise ConfigError(f"{path}: non-finite number")
        return
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{path}.{k}")
        return
    if isinstance(obj, list):
        for k, v in enumerate(obj):
            _check_finite(v, f"{path}[{k}]")
        return
    raise ConfigError(f"{path}: unsupported value {obj!r}")


def _section(cls, d: dict | None, name: str, **extra):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d, **extra)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{name}: {e}") from e


def build_plant(spec: dict) -> SystemModel:
    kind = spec.get("type")
    try:
        if kind == "lti":
            return LtiModel(np.array(spec["A"], float), np.array(spec["B"], float), spec.get("noise_std", 0.0))
        if kind == "nonlinear":
            name = spec["transition"]
            if name not in TRANSITIONS:
                raise ConfigError(f"plant: unknown transition {name!r}")
            return NonlinearModel(name, spec["state_bounds"], spec["input_bounds"], spec.get("noise_std", 0.0))
    except KeyError as e:
        raise ConfigError(f"plant: missing field {e}") from e
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"plant: {e}") from e
    raise ConfigError(f"plant: type must be 'lti' or 'nonlinear', got {kind!r}")


def resolve(raw: dict) -> dict:
    """Expand a ``builtin`` reference into a full config dict."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    plant = raw.get("plant")
    if not isinstance(plant, dict):
        raise ConfigError("plant section missing")
    if "builtin" in plant:
        name = plant["builtin"]
        if name not in BUILTINS:
            raise ConfigError(f"plant: unknown built-in {name!r}; known: {sorted(BUILTINS)}")
        base = copy.deepcopy(BUILTINS[name])
        base["plant"] = _merge(base["plant"], plant.get("overrides", {}))
        rest = {k: v for k, v in raw.items() if k != "plant"}
        full = _merge(base, rest)
        full.setdefault("name", name)
        return full
    return copy.deepcopy(raw)


_TOP_KEYS = {
    "schema_version", "name", "plant", "master_seed", "design", "steering", "test",
    "excitation", "kernel", "model_kind", "ridge", "x_init", "generalization", "output_dir",
}


def from_dict(raw: dict) -> ScenarioConfig:
    full = resolve(raw)
    unknown = set(full) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    _check_finite(full)
    seed = full.get("master_seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("master_seed must be a non-negative integer")
    plant = build_plant(full["plant"])
    n, m = plant.state_dim, plant.input_dim

    kernel = _section(KernelConfig, full.get("kernel"), "kernel")
    test = _section(TestConfig, full.get("test"), "test")
    design_d = dict(full.get("design") or {})
    design_d.setdefault("state_box", [[-1, 1]] * n)
    design_d.setdefault("input_box", [[-1, 1]] * m)
    design_d.setdefault("subtract_initial", test.subtract_initial)
    design = _section(DesignConfig, design_d, "design", kernel=kernel)
    if design.state_box.shape != (n, 2) or design.input_box.shape != (m, 2):
        raise ConfigError(f"design: boxes must be ({n}, 2) and ({m}, 2)")
    steer_d = dict(full.get("steering") or {})
    for key in ("Q", "R"):
        if steer_d.get(key) is not None:
            steer_d[key] = np.array(steer_d[key], float)
    steering = _section(SteeringConfig, steer_d, "steering")
    excitation = _section(ExcitationConfig, full.get("excitation"), "excitation")
    model_kind = full.get("model_kind", "linear")
    if model_kind not in ("linear", "feature"):
        raise ConfigError(f"model_kind must be 'linear' or 'feature', got {model_kind!r}")
    x_init = full.get("x_init")
    if x_init is not None and len(x_init) != n:
        raise ConfigError(f"x_init must have {n} entries")
    try:
        pipeline = PipelineConfig(
            design, steering, test, excitation, model_kind, float(full.get("ridge", 0.0)),
            None if x_init is None else tuple(x_init),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    gen = full.get("generalization")
    if gen is not None:
        if len(gen.get("x0", [])) != n or not 1 <= int(gen.get("target", 0)) <= n:
            raise ConfigError("generalization: x0 must have n entries and target in 1..n")
    return ScenarioConfig(
        name=str(full.get("name", "scenario")),
        plant=plant,
        pipeline=pipeline,
        master_seed=seed,
        output_dir=full.get("output_dir"),
        generalization=gen,
        raw=raw,
    )


def load(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return from_dict(raw)


def builtin(name: str, master_seed: int = 0, **sections) -> ScenarioConfig:
    """Config for a built-in scenario, with optional section overrides."""
    return from_dict({"schema_version": SCHEMA_VERSION, "plant": {"builtin": name}, "master_seed": master_seed, **sections})


def random_triangular_lti(seed, n: int, noise_std: float = 1e-4, min_entry: float = 0.05) -> LtiModel:
    """Stable upper-triangular ``A`` with a square ``B``; nonzero entries have magnitude >= ``min_entry``.

    ``B`` has a nonzero diagonal, so the pair is always controllable.
    """
    rng = np.random.default_rng(seed)
    A = np.diag(rng.uniform(0.5, 0.95, n))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < 0.5:
                A[i, j] = rng.choice([-1, 1]) * rng.uniform(min_entry, 0.5)
    B = np.diag(rng.uniform(min_entry, 0.1, n))
    mask = (rng.random((n, n)) < 0.25) & ~np.eye(n, dtype=bool)
    B[mask] = rng.choice([-1, 1], mask.sum()) * rng.uniform(min_entry, 0.1, mask.sum())
    return LtiModel(A, B, noise_std)


def lti_config(plant: LtiModel, master_seed: int = 0, **sections) -> ScenarioConfig:
    """Scenario config for an explicit LTI plant with a unit design box.

    The heavier state weight keeps steering accurate when ``B`` is close to
    singular and steady-state inputs are large.
    """
    n, m = plant.state_dim, plant.input_dim
    raw = {
        "schema_version": SCHEMA_VERSION,
        "name": sections.pop("name", f"lti{n}"),
        "plant": {"type": "lti", "A": plant.A.tolist(), "B": plant.B.tolist(), "noise_std": plant.noise_std.tolist()},
        "master_seed": master_seed,
        "design": {"state_box": [[-1, 1]] * n, "input_box": [[-1, 1]] * m},
        "steering": {"Q": (1000.0 * np.eye(n)).tolist()},
    }
    return from_dict(_merge(raw, sections))
