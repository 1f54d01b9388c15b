"""Paired causality experiments and their model-based design.

A state experiment varies only ``x_j(0)`` between arms I and II and shares the
input trajectory; an input experiment shares ``x(0)`` and differs only on
input channel ``j`` (at every step). Designs are chosen by derivative-free
random multistart on the model-predicted squared MMD of the target component,
which steers experiments away from regions where an influence is locally
invisible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import chirp_signal, rng_for, rollout
from .kernels import KernelConfig, embed_states, mmd2_unbiased
from .sysid import EstimatedModel, Source

log = logging.getLogger(__name__)

INPUT_CLASSES = ("constant", "chirp", "piecewise-constant")


class DesignError(RuntimeError):
    pass


class DesignWarning(UserWarning):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ExperimentSpec:
    """Arms I/II of one experiment; ``kind`` is ``"state"`` or ``"input"``."""

    kind: str
    j: int
    x0_I: np.ndarray
    x0_II: np.ndarray
    inputs_I: np.ndarray
    inputs_II: np.ndarray
    repetitions: int = 10

    def __post_init__(self):
        for name in ("x0_I", "x0_II", "inputs_I", "inputs_II"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        self.validate()

    @property
    def T(self) -> int:
        return self.inputs_I.shape[0]

    @property
    def source(self) -> Source:
        return ("x" if self.kind == "state" else "u", self.j)

    @property
    def tied(self) -> dict:
        """Which entries the arms share."""
        n, m = self.x0_I.shape[0], self.inputs_I.shape[1]
        if self.kind == "state":
            return {"x0": [k for k in range(n) if k != self.j], "inputs": list(range(m))}
        return {"x0": list(range(n)), "inputs": [k for k in range(m) if k != self.j]}

    def validate(self) -> None:
        if self.kind not in ("state", "input"):
            raise ValueError(f"kind must be 'state' or 'input', got {self.kind!r}")
        if self.repetitions < 2:
            raise ValueError("need at least 2 repetitions")
        xI, xII, uI, uII = self.x0_I, self.x0_II, self.inputs_I, self.inputs_II
        if xI.ndim != 1 or xI.shape != xII.shape or uI.ndim != 2 or uI.shape != uII.shape or uI.shape[0] < 1:
            raise ValueError("arm shapes do not match")
        n, m = xI.shape[0], uI.shape[1]
        if not 0 <= self.j < (n if self.kind == "state" else m):
            raise ValueError(f"varied index {self.j} out of range")
        others = np.arange(n if self.kind == "state" else m) != self.j
        if self.kind == "state":
            if not (np.array_equal(xI[others], xII[others]) and np.array_equal(uI, uII)):
                raise ValueError("state experiment must share all inputs and x0 entries except j")
            if xI[self.j] == xII[self.j]:
                raise ValueError("state experiment must vary x0[j]")
        else:
            if not (np.array_equal(xI, xII) and np.array_equal(uI[:, others], uII[:, others])):
                raise ValueError("input experiment must share x0 and all channels except j")
            if np.any(uI[:, self.j] == uII[:, self.j]):
                raise ValueError("input experiment arms must differ on channel j at every step")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "j": self.j,
            "T": self.T,
            "repetitions": self.repetitions,
            "x0_I": self.x0_I.tolist(),
            "x0_II": self.x0_II.tolist(),
            "inputs_I": self.inputs_I.tolist(),
            "inputs_II": self.inputs_II.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        spec = cls(d["kind"], int(d["j"]), d["x0_I"], d["x0_II"], d["inputs_I"], d["inputs_II"], int(d["repetitions"]))
        if spec.T != d.get("T", spec.T):
            raise ValueError("T does not match input length")
        return spec

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        return cls.from_dict(json.loads(text))

    @property
    def spec_id(self) -> str:
        return hashlib.sha1(self.to_json().encode()).hexdigest()[:12]


@dataclass(frozen=True)
class DesignConfig:
    """Search box, thresholds and experiment shape.

    ``delta1=None`` means ``floor_factor`` times the model's noise floor for
    the target component (the spread of predicted MMD^2 between two
    identical arms under sampled model noise).
    """

    state_box: np.ndarray
    input_box: np.ndarray
    delta1: float | None = None
    delta2: float = 0.0
    candidate_budget: int = 32
    round_size: int = 8
    T: int = 100
    repetitions: int = 10
    input_class: str = "constant"
    chirp_f0: float = 0.01
    chirp_f1: float = 0.2
    floor_factor: float = 10.0
    floor_runs: int = 50
    kernel: KernelConfig = field(default_factory=KernelConfig)
    subtract_initial: bool = False

    def __post_init__(self):
        object.__setattr__(self, "state_box", _frozen(self.state_box))
        object.__setattr__(self, "input_box", _frozen(self.input_box))
        if self.state_box.ndim != 2 or self.state_box.shape[1] != 2 or np.any(self.state_box[:, 0] >= self.state_box[:, 1]):
            raise ValueError("state_box must be (n, 2) with lo < hi")
        if self.input_box.ndim != 2 or self.input_box.shape[1] != 2 or np.any(self.input_box[:, 0] >= self.input_box[:, 1]):
            raise ValueError("input_box must be (m, 2) with lo < hi")
        if (self.delta1 is not None and self.delta1 < 0) or self.delta2 < 0:
            raise ValueError("delta1 and delta2 must be >= 0")
        if self.candidate_budget < 1 or self.round_size < 1:
            raise ValueError("candidate_budget and round_size must be >= 1")
        if self.input_class not in INPUT_CLASSES:
            raise ValueError(f"input_class must be one of {INPUT_CLASSES}")

    @property
    def state_center(self) -> np.ndarray:
        return self.state_box.mean(axis=1)

    @property
    def input_center(self) -> np.ndarray:
        return self.input_box.mean(axis=1)

    @property
    def input_halfwidth(self) -> np.ndarray:
        return 0.5 * (self.input_box[:, 1] - self.input_box[:, 0])


def _uses_subtraction(spec: ExperimentSpec, target: int, subtract_initial: bool) -> bool:
    return subtract_initial or (spec.kind == "state" and spec.j == target)


def arm_states(model: EstimatedModel, spec: ExperimentSpec, noise=None) -> tuple[np.ndarray, np.ndarray]:
    """Model rollouts of both arms, shape ``(..., repetitions, T+1, n)``.

    Without noise every repetition is the same deterministic rollout.
    """
    if noise is None:
        sI = rollout(model.step, spec.x0_I, spec.inputs_I)
        sII = rollout(model.step, spec.x0_II, spec.inputs_II)
        return np.broadcast_to(sI, (spec.repetitions,) + sI.shape), np.broadcast_to(sII, (spec.repetitions,) + sII.shape)
    nI, nII = noise
    lead = nI.shape[:-2]
    sI = rollout(model.step, np.broadcast_to(spec.x0_I, lead + (model.state_dim,)), spec.inputs_I, nI)
    sII = rollout(model.step, np.broadcast_to(spec.x0_II, lead + (model.state_dim,)), spec.inputs_II, nII)
    return sI, sII


def predicted_mmd(
    model: EstimatedModel,
    spec: ExperimentSpec,
    target: int,
    mc_runs: int = 0,
    kernel: KernelConfig = KernelConfig(),
    subtract_initial: bool = False,
    rng_seed=0,
) -> float:
    """Model-predicted MMD^2 of ``x_target`` between the two arms.

    ``mc_runs=0`` evaluates the estimator on noiseless rollouts; otherwise it
    is averaged over ``mc_runs`` batches of sampled rollouts. A state
    experiment's own component is always compared after subtracting its
    initial value.
    """
    sub = _uses_subtraction(spec, target, subtract_initial)
    if mc_runs == 0:
        sI, sII = arm_states(model, spec)
        return float(mmd2_unbiased(embed_states(sI, target, sub), embed_states(sII, target, sub), kernel))
    return float(np.mean(sampled_mmd(model, spec, target, mc_runs, kernel, sub, rng_seed)))


def sampled_mmd(model, spec, target, runs, kernel, subtract, rng_seed) -> np.ndarray:
    rng = rng_for(rng_seed)
    shape = (runs, spec.repetitions, spec.T, model.state_dim)
    nI = rng.standard_normal(shape) * model.noise_std_hat
    nII = rng.standard_normal(shape) * model.noise_std_hat
    sI, sII = arm_states(model, spec, (nI, nII))
    return mmd2_unbiased(embed_states(sI, target, subtract), embed_states(sII, target, subtract), kernel)


def noise_floor(model, spec: ExperimentSpec, target: int, cfg: DesignConfig, rng_seed=0) -> float:
    """Standard deviation of sampled MMD^2 between two copies of arm I."""
    sub = _uses_subtraction(spec, target, cfg.subtract_initial)
    rng = rng_for(rng_seed)
    shape = (cfg.floor_runs, spec.repetitions, spec.T, model.state_dim)
    nI = rng.standard_normal(shape) * model.noise_std_hat
    nII = rng.standard_normal(shape) * model.noise_std_hat
    x0 = np.broadcast_to(spec.x0_I, shape[:2] + (model.state_dim,))
    sI = rollout(model.step, x0, spec.inputs_I, nI)
    sII = rollout(model.step, x0, spec.inputs_I, nII)
    vals = mmd2_unbiased(embed_states(sI, target, sub), embed_states(sII, target, sub), cfg.kernel)
    return float(np.std(vals, ddof=1))


def _profile(rng, cfg: DesignConfig, T: int, width: float) -> np.ndarray:
    """A random input profile in ``[-width, width]``."""
    kind = cfg.input_class
    if kind == "constant":
        return np.full(T, rng.uniform(-width, width))
    if kind == "chirp":
        return rng.uniform(0.25, 1.0) * width * chirp_signal(T, 1.0, cfg.chirp_f0, cfg.chirp_f1, 1)[:, 0]
    seg = max(T // 10, 1)
    levels = rng.uniform(-width, width, size=-(-T // seg))
    return np.repeat(levels, seg)[:T]


def _positive_profile(rng, cfg: DesignConfig, T: int, width: float) -> np.ndarray:
    """A random profile in ``[width/4, width]`` (strictly positive)."""
    kind = cfg.input_class
    if kind == "constant":
        return np.full(T, rng.uniform(0.25, 1.0) * width)
    if kind == "chirp":
        c = chirp_signal(T, 1.0, cfg.chirp_f0, cfg.chirp_f1, 1)[:, 0]
        return width * (0.625 + 0.375 * c)
    seg = max(T // 10, 1)
    levels = rng.uniform(0.25, 1.0, size=-(-T // seg)) * width
    return np.repeat(levels, seg)[:T]


def _state_candidates(j: int, cfg: DesignConfig, rng):
    lo, hi = cfg.state_box[:, 0], cfg.state_box[:, 1]
    T = cfg.T
    center, half = cfg.input_center, cfg.input_halfwidth
    m = center.shape[0]
    x0 = cfg.state_center.copy()
    xI, xII = x0.copy(), x0.copy()
    xI[j], xII[j] = hi[j], lo[j]
    shared = center + half * chirp_signal(T, 1.0, cfg.chirp_f0, cfg.chirp_f1, m)
    yield xI, xII, shared
    while True:
        x0 = rng.uniform(lo, hi)
        a, b = rng.uniform(lo[j], hi[j], size=2)
        if a == b:
            continue
        xI, xII = x0.copy(), x0.copy()
        xI[j], xII[j] = a, b
        shared = np.stack([center[k] + _profile(rng, cfg, T, half[k]) for k in range(m)], axis=1)
        yield xI, xII, shared


def _input_candidates(j: int, cfg: DesignConfig, rng):
    T = cfg.T
    center, half = cfg.input_center, cfg.input_halfwidth
    m = center.shape[0]
    x0 = cfg.state_center.copy()
    base = np.tile(center, (T, 1))
    uI, uII = base.copy(), base.copy()
    uI[:, j] += half[j]
    uII[:, j] -= half[j]
    yield x0, uI, uII
    lo, hi = cfg.state_box[:, 0], cfg.state_box[:, 1]
    while True:
        x0 = rng.uniform(lo, hi)
        base = np.stack([center[k] + _profile(rng, cfg, T, half[k]) for k in range(m)], axis=1)
        p = _positive_profile(rng, cfg, T, half[j])
        uI, uII = base.copy(), base.copy()
        uI[:, j] = center[j] + p
        uII[:, j] = center[j] - p
        yield x0, uI, uII


def _make_spec(kind: str, j: int, cand, repetitions: int) -> ExperimentSpec:
    if kind == "state":
        xI, xII, u = cand
        return ExperimentSpec("state", j, xI, xII, u, u.copy(), repetitions)
    x0, uI, uII = cand
    return ExperimentSpec("input", j, x0, x0.copy(), uI, uII, repetitions)


def _design(model: EstimatedModel, kind: str, j: int, cfg: DesignConfig, rng_seed, target: int | None) -> ExperimentSpec:
    rng = rng_for(rng_seed)
    gen = _state_candidates(j, cfg, rng) if kind == "state" else _input_candidates(j, cfg, rng)
    targets = list(range(model.state_dim)) if target is None else [target]

    def score(spec):
        return max(predicted_mmd(model, spec, i, 0, cfg.kernel, cfg.subtract_initial) for i in targets)

    specs, scores = [], []
    delta1 = cfg.delta1
    for idx in range(cfg.candidate_budget):
        spec = _make_spec(kind, j, next(gen), cfg.repetitions)
        if delta1 is None:
            delta1 = cfg.floor_factor * max(noise_floor(model, spec, i, cfg, rng_seed) for i in targets)
        specs.append(spec)
        scores.append(score(spec))
        if (idx + 1) % cfg.round_size == 0 or idx + 1 == cfg.candidate_budget:
            best = int(np.argmax(scores))  # lowest index wins ties
            if scores[best] > delta1:
                return specs[best]
    best = int(np.argmax(scores))
    if not scores[best] > 0:
        raise DesignError(f"design for {'x' if kind == 'state' else 'u'}{j + 1}: all predicted MMDs are zero")
    warnings.warn(
        f"design for {'x' if kind == 'state' else 'u'}{j + 1}: best predicted MMD^2 {scores[best]:.3g} "
        f"is below delta1 {delta1:.3g}; using the best of {cfg.candidate_budget} candidates",
        DesignWarning,
        stacklevel=3,
    )
    return specs[best]


def design_state_experiment(model: EstimatedModel, j: int, cfg: DesignConfig, rng_seed=0, target: int | None = None) -> ExperimentSpec:
    """Design a pair varying only ``x_j(0)``.

    The first candidate puts ``x_j(0)`` at opposite box bounds with the other
    entries at the box center and a shared chirp input; later candidates are
    uniform in the box. Candidates are scored in rounds of ``round_size`` by
    predicted MMD^2 of ``target`` (or the maximum over all targets) and the
    best of the first round exceeding ``delta1`` is returned.
    """
    return _design(model, "state", j, cfg, rng_seed, target)


def design_input_experiment(model: EstimatedModel, j: int, cfg: DesignConfig, rng_seed=0, target: int | None = None) -> ExperimentSpec:
    """Design a pair whose arms apply ``c + p(t)`` and ``c - p(t)`` on channel ``j``."""
    return _design(model, "input", j, cfg, rng_seed, target)


def design_experiment(model, source: Source, cfg: DesignConfig, rng_seed=0, target=None) -> ExperimentSpec:
    kind, j = source
    fn = design_state_experiment if kind == "x" else design_input_experiment
    return fn(model, j, cfg, rng_seed, target)
