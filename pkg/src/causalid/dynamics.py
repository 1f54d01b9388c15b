"""Discrete-time stochastic control systems and their simulation.

Two plant classes are provided: :class:`LtiModel` (``x' = A x + B u + v``)
and :class:`NonlinearModel` (``x' = f(x, u) + v``), both with diagonal
Gaussian process noise. Nonlinear transitions are registered by name.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _noise_vector(noise_std, n: int) -> np.ndarray:
    sig = np.broadcast_to(np.asarray(noise_std, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(sig)) or np.any(sig < 0):
        raise ValueError("noise_std must be finite and non-negative")
    sig.setflags(write=False)
    return sig


@dataclass(frozen=True, eq=False)
class LtiModel:
    """``x(t+1) = A x(t) + B u(t) + v(t)``, ``v ~ N(0, diag(noise_std**2))``."""

    A: np.ndarray
    B: np.ndarray
    noise_std: np.ndarray = field(default=0.0)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise DimensionError(f"B must have {A.shape[0]} rows, got {B.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "noise_std", _noise_vector(self.noise_std, A.shape[0]))

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Noiseless transition; broadcasts over leading batch axes."""
        return x @ self.A.T + u @ self.B.T

    def with_noise(self, noise_std) -> "LtiModel":
        return LtiModel(self.A, self.B, noise_std)


Transition = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _bilinear2(x, u):
    # x1' = x1 * x2, x2' = u
    return np.stack([x[..., 0] * x[..., 1], u[..., 0]], axis=-1)


#: Registered nonlinear transitions: name -> (transition, state_dim, input_dim).
TRANSITIONS: dict[str, tuple[Transition, int, int]] = {
    "bilinear2": (_bilinear2, 2, 1),
}


def register_transition(name: str, fn: Transition, state_dim: int, input_dim: int) -> None:
    """Add a user transition ``fn(x, u) -> x_next`` (must broadcast over batch axes)."""
    if name in TRANSITIONS:
        raise ValueError(f"transition {name!r} already registered")
    TRANSITIONS[name] = (fn, state_dim, input_dim)


def _as_box(bounds, dim: int, name: str) -> np.ndarray:
    box = np.array(bounds, dtype=float)
    if box.shape != (dim, 2):
        raise DimensionError(f"{name} must have shape ({dim}, 2), got {box.shape}")
    if not np.all(np.isfinite(box)) or np.any(box[:, 0] > box[:, 1]):
        raise ValueError(f"{name} must be a nonempty finite box")
    box.setflags(write=False)
    return box


@dataclass(frozen=True, eq=False)
class NonlinearModel:
    """Named nonlinear transition with additive diagonal Gaussian noise."""

    name: str
    state_bounds: np.ndarray
    input_bounds: np.ndarray
    noise_std: np.ndarray = field(default=0.0)

    def __post_init__(self):
        if self.name not in TRANSITIONS:
            raise KeyError(f"unknown transition {self.name!r}; known: {sorted(TRANSITIONS)}")
        _, n, m = TRANSITIONS[self.name]
        object.__setattr__(self, "state_bounds", _as_box(self.state_bounds, n, "state_bounds"))
        object.__setattr__(self, "input_bounds", _as_box(self.input_bounds, m, "input_bounds"))
        object.__setattr__(self, "noise_std", _noise_vector(self.noise_std, n))

    @property
    def state_dim(self) -> int:
        return TRANSITIONS[self.name][1]

    @property
    def input_dim(self) -> int:
        return TRANSITIONS[self.name][2]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return TRANSITIONS[self.name][0](x, u)

    def in_state_bounds(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.state_bounds[:, 0]) and np.all(x <= self.state_bounds[:, 1]))

    def in_input_bounds(self, u: np.ndarray) -> bool:
        return bool(np.all(u >= self.input_bounds[:, 0]) and np.all(u <= self.input_bounds[:, 1]))

    def with_noise(self, noise_std) -> "NonlinearModel":
        return NonlinearModel(self.name, self.state_bounds, self.input_bounds, noise_std)


SystemModel = LtiModel | NonlinearModel


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``(T+1, n)`` and inputs ``(T, m)``; ``truncated`` marks an early stop."""

    states: np.ndarray
    inputs: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        inputs = np.array(self.inputs, dtype=float)
        if inputs.ndim == 2 and inputs.shape[0] == 0 and states.ndim == 2:
            inputs = inputs.reshape(0, inputs.shape[1])
        if states.ndim != 2 or inputs.ndim != 2:
            raise DimensionError("states and inputs must be 2-D")
        if states.shape[0] != inputs.shape[0] + 1:
            raise DimensionError(
                f"need len(states) == len(inputs) + 1, got {states.shape[0]} and {inputs.shape[0]}"
            )
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(inputs))):
            raise ValueError("trajectory has non-finite entries")
        states.setflags(write=False)
        inputs.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)

    @property
    def horizon(self) -> int:
        return self.inputs.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.truncated == other.truncated
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.inputs, other.inputs)
        )


@dataclass(frozen=True)
class TrajectoryBatch:
    runs: tuple[Trajectory, ...]
    spec_id: str = ""

    def __post_init__(self):
        runs = tuple(self.runs)
        if not runs:
            raise ValueError("batch must contain at least one run")
        shape = (runs[0].states.shape, runs[0].inputs.shape)
        for r in runs[1:]:
            if (r.states.shape, r.inputs.shape) != shape:
                raise DimensionError("all runs in a batch must share T, n and m")
        object.__setattr__(self, "runs", runs)

    def __len__(self) -> int:
        return len(self.runs)

    def states(self) -> np.ndarray:
        """Stacked states, shape ``(runs, T+1, n)``."""
        return np.stack([r.states for r in self.runs])

    def initial_states(self) -> np.ndarray:
        return np.stack([r.states[0] for r in self.runs])


def rng_for(seed) -> np.random.Generator:
    """Generator from an int seed or a tuple ``(seed, *spawn_key)``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, tuple):
        return np.random.default_rng(np.random.SeedSequence(int(seed[0]), spawn_key=tuple(int(k) for k in seed[1:])))
    return np.random.default_rng(seed)


def _check_io(model: SystemModel, x0, inputs) -> tuple[np.ndarray, np.ndarray]:
    x0 = np.asarray(x0, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1 and model.input_dim == 1:
        inputs = inputs[:, None]
    if x0.shape != (model.state_dim,):
        raise DimensionError(f"x0 must have shape ({model.state_dim},), got {x0.shape}")
    if inputs.ndim != 2 or inputs.shape[1] != model.input_dim:
        raise DimensionError(f"inputs must have shape (T, {model.input_dim}), got {inputs.shape}")
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(inputs))):
        raise ValueError("x0 and inputs must be finite")
    return x0, inputs


def simulate(model: SystemModel, x0, inputs, rng_seed=0) -> Trajectory:
    """Roll the plant forward under ``inputs`` with seeded process noise.

    For a :class:`NonlinearModel` the run stops (``truncated=True``) at the
    first state leaving the state box; the out-of-bounds state is dropped.
    """
    x0, inputs = _check_io(model, x0, inputs)
    T = inputs.shape[0]
    noise = rng_for(rng_seed).standard_normal((T, model.state_dim)) * model.noise_std
    nonlinear = isinstance(model, NonlinearModel)
    if nonlinear:
        if not model.in_state_bounds(x0):
            raise ValueError("x0 outside state bounds")
        if not model.in_input_bounds(inputs):
            raise ValueError("inputs outside input bounds")
    states = np.empty((T + 1, model.state_dim))
    states[0] = x0
    for t in range(T):
        nxt = model.step(states[t], inputs[t]) + noise[t]
        if nonlinear and not (np.all(np.isfinite(nxt)) and model.in_state_bounds(nxt)):
            return Trajectory(states[: t + 1], inputs[:t], truncated=True)
        states[t + 1] = nxt
    return Trajectory(states, inputs)


def mean_trajectory(model: LtiModel, x0, inputs) -> Trajectory:
    """Noiseless rollout ``x(t) = A^t x0 + sum_k A^k B u(t-1-k)``."""
    return simulate(model.with_noise(0.0), x0, inputs)


def rollout(step: Callable, x0s: np.ndarray, inputs: np.ndarray, noise: np.ndarray | None = None) -> np.ndarray:
    """Vectorised rollout over a batch of initial states.

    ``x0s`` is ``(..., n)``; ``inputs`` is ``(T, m)`` or broadcastable to
    ``(..., T, m)``; ``noise`` (optional) is ``(..., T, n)``. Returns states
    of shape ``(..., T+1, n)``.
    """
    x0s = np.asarray(x0s, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    T = inputs.shape[-2]
    out = np.empty(x0s.shape[:-1] + (T + 1, x0s.shape[-1]))
    out[..., 0, :] = x0s
    x = x0s
    for t in range(T):
        x = step(x, inputs[..., t, :])
        if noise is not None:
            x = x + noise[..., t, :]
        out[..., t + 1, :] = x
    return out


def chirp_signal(T: int, amplitude: float, f0: float, f1: float, channels: int) -> np.ndarray:
    """Linear-frequency sweep from ``f0`` to ``f1`` cycles/step.

    Channel ``j`` is phase-shifted by ``2*pi*j/channels`` and its frequencies
    are scaled by ``1 - j/(2*channels)``; phase shifts alone span only two
    dimensions, so three or more channels would be linearly dependent.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0 < f0 < 0.5 and 0 < f1 < 0.5):
        raise ValueError("f0 and f1 must lie in (0, 0.5) cycles/step")
    t = np.arange(T, dtype=float)[:, None]
    j = np.arange(channels, dtype=float)[None, :]
    scale = 1 - j / (2 * channels)
    phase = 2 * np.pi * scale * (f0 * t + 0.5 * (f1 - f0) * t**2 / T)
    return amplitude * np.sin(phase + 2 * np.pi * j / channels)


def trajectory_to_csv(traj: Trajectory, path: str | Path | None = None) -> str:
    """Write ``t,x1..xn,u1..um`` rows; inputs are blank on the last row."""
    n, m = traj.state_dim, traj.input_dim
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)])
    for t in range(traj.horizon + 1):
        u = [repr(float(v)) for v in traj.inputs[t]] if t < traj.horizon else [""] * m
        w.writerow([t] + [repr(float(v)) for v in traj.states[t]] + u)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def trajectory_from_csv(source: str | Path) -> Trajectory:
    """Inverse of :func:`trajectory_to_csv`; accepts a path or CSV text."""
    text = Path(source).read_text() if isinstance(source, Path) or "\n" not in str(source) else str(source)
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    n = sum(h.startswith("x") for h in header)
    m = sum(h.startswith("u") for h in header)
    states = np.array([[float(v) for v in r[1 : 1 + n]] for r in body])
    inputs = np.array([[float(v) for v in r[1 + n : 1 + n + m]] for r in body[:-1]]).reshape(len(body) - 1, m)
    return Trajectory(states, inputs)


def stack_runs(runs: Sequence[Trajectory], spec_id: str = "") -> TrajectoryBatch:
    return TrajectoryBatch(tuple(runs), spec_id)
