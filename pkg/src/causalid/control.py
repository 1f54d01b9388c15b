"""Controllability checks and LQR set-point steering ``u = M x_des + F x``."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import LtiModel, NonlinearModel, SystemModel, Trajectory, rng_for
from .sysid import EstimatedModel

log = logging.getLogger(__name__)


class ControlError(RuntimeError):
    pass


@dataclass(frozen=True)
class SteeringConfig:
    """LQR weights (``None`` means identity) and arrival/iteration limits."""

    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    arrival_tol: float = 0.01
    max_steps: int = 2000
    riccati_tol: float = 1e-10
    riccati_max_iter: int = 10000
    retries: int = 3

    def __post_init__(self):
        if not self.arrival_tol > 0:
            raise ValueError("arrival_tol must be positive")
        if self.max_steps < 1 or self.retries < 1:
            raise ValueError("max_steps and retries must be >= 1")

    @property
    def epsilon(self) -> float:
        """Squared-norm tolerance of the controllability definition."""
        return self.arrival_tol**2


def system_matrices(model) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(model, LtiModel):
        return model.A, model.B
    if isinstance(model, EstimatedModel):
        return model.linear_part()
    if isinstance(model, tuple) and len(model) == 2:
        return np.asarray(model[0], float), np.asarray(model[1], float)
    raise TypeError(f"no linear (A, B) available for {type(model).__name__}")


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def controllability_rank(model) -> tuple[int, bool]:
    A, B = system_matrices(model)
    s = np.linalg.svd(controllability_matrix(A, B), compute_uv=False)
    n = A.shape[0]
    if s.size == 0 or s[0] == 0:
        return 0, False
    rank = int(np.sum(s > n * s[0] * 1e-12))
    return rank, rank == n


def riccati_iterate(A, B, Q, R, tol: float, max_iter: int, history: list | None = None) -> np.ndarray:
    """Fixed-point iteration of the discrete algebraic Riccati equation from ``P = Q``."""
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = 0.5 * (P_next + P_next.T)
        res = float(np.max(np.abs(P_next - P)))
        if history is not None:
            history.append(res)
        P = P_next
        if res <= tol * max(1.0, float(np.max(np.abs(P)))):
            return P
    raise ControlError(f"Riccati iteration did not converge in {max_iter} iterations")


def _weights(cfg: SteeringConfig, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    Q = np.eye(n) if cfg.Q is None else np.asarray(cfg.Q, float)
    R = np.eye(m) if cfg.R is None else np.asarray(cfg.R, float)
    return Q, R


def lqr_gain(model, cfg: SteeringConfig = SteeringConfig()) -> np.ndarray:
    """State-feedback gain ``F`` (``u = F x``) of the infinite-horizon discrete LQR."""
    A, B = system_matrices(model)
    rank, ok = controllability_rank((A, B))
    if not ok:
        raise ControlError(f"(A, B) not controllable: rank {rank} < {A.shape[0]}")
    Q, R = _weights(cfg, *B.shape)
    P = riccati_iterate(A, B, Q, R, cfg.riccati_tol, cfg.riccati_max_iter)
    F = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    rho = max(abs(np.linalg.eigvals(A + B @ F)))
    if rho >= 1:
        raise ControlError(f"closed loop unstable (spectral radius {rho:.6f})")
    return F


def feedforward_gain(model, F: np.ndarray) -> np.ndarray:
    """``M = ((I - A_cl)^-1 B)^-1``; pseudo-inverse when ``B`` is not square."""
    A, B = system_matrices(model)
    n = A.shape[0]
    try:
        G = np.linalg.solve(np.eye(n) - (A + B @ F), B)
    except np.linalg.LinAlgError as e:
        raise ControlError("I - A_cl is singular") from e
    if G.shape[0] == G.shape[1]:
        if np.linalg.cond(G) > 1e12:
            raise ControlError("(I - A_cl)^-1 B is singular")
        return np.linalg.inv(G)
    return np.linalg.pinv(G)


@dataclass(frozen=True)
class SteeringLaw:
    F: np.ndarray
    M: np.ndarray

    def __call__(self, x: np.ndarray, x_des: np.ndarray) -> np.ndarray:
        return self.M @ x_des + self.F @ x


def steering_law(model, cfg: SteeringConfig = SteeringConfig()) -> SteeringLaw:
    F = lqr_gain(model, cfg)
    return SteeringLaw(F, feedforward_gain(model, F))


def predicted_arrival_steps(model, law: SteeringLaw, x_start, x_des, tol: float, cap: int) -> int:
    """Noiseless steps until the estimated closed loop enters the tolerance ball."""
    A, B = system_matrices(model)
    x = np.asarray(x_start, float)
    x_des = np.asarray(x_des, float)
    ff = B @ law.M @ x_des
    Acl = A + B @ law.F
    for k in range(cap + 1):
        if np.linalg.norm(x - x_des) < tol:
            return k
        x = Acl @ x + ff
    return cap


def steer_to(
    plant: SystemModel,
    model,
    x_des,
    cfg: SteeringConfig = SteeringConfig(),
    rng_seed=0,
    x_start=None,
    min_steps: int = 0,
    law: SteeringLaw | None = None,
) -> tuple[Trajectory, bool]:
    """Drive the true plant toward ``x_des`` with gains from the estimated model.

    Stops at the first ``t >= min_steps`` with ``||x(t) - x_des|| < arrival_tol``
    or after ``cfg.max_steps`` steps. The returned trajectory's horizon is the
    number of steering steps used.
    """
    x_des = np.asarray(x_des, float)
    n = plant.state_dim
    x = np.zeros(n) if x_start is None else np.asarray(x_start, float).copy()
    if law is None:
        law = steering_law(model, cfg)
    rng = rng_for(rng_seed)
    states = [x.copy()]
    inputs = []
    nonlinear = isinstance(plant, NonlinearModel)
    for t in range(cfg.max_steps + 1):
        if t >= min_steps and np.linalg.norm(x - x_des) < cfg.arrival_tol:
            return Trajectory(np.array(states), np.array(inputs).reshape(t, plant.input_dim)), True
        if t == cfg.max_steps:
            break
        u = law(x, x_des)
        if nonlinear:
            u = np.clip(u, plant.input_bounds[:, 0], plant.input_bounds[:, 1])
        x = plant.step(x, u) + rng.standard_normal(n) * plant.noise_std
        if not np.all(np.isfinite(x)) or (nonlinear and not plant.in_state_bounds(x)):
            log.warning("steering left the admissible state set at step %d", t + 1)
            return Trajectory(np.array(states), np.array(inputs).reshape(t, plant.input_dim), truncated=True), False
        states.append(x.copy())
        inputs.append(u)
    return Trajectory(np.array(states), np.array(inputs).reshape(-1, plant.input_dim)), False
