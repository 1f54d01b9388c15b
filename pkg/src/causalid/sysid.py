"""Least-squares black-box identification of ``x(t+1) = W phi(x(t), u(t))``.

Regressors are ``[x_1..x_n, u_1..u_m]`` for ``kind="linear"``, plus every
degree-2 monomial of ``z = [x, u]`` for ``kind="feature"``. A model can be
restricted by excluding a source (a state ``("x", j)`` or an input
``("u", j)``) from the regression of one target state ``i``: every regressor
that involves the source gets a zero weight in row ``i``.

A state excluded from its own row (``(i, ("x", i))``) is the self-influence
case, where non-causality means the increment ``x_i(t+1) - x_i(t)`` does not
depend on ``x_i``. Such rows are fitted on the increment and store a weight of
exactly 1 on the linear ``x_i`` regressor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .dynamics import DimensionError, Trajectory, rng_for, rollout

Source = tuple[str, int]
Exclusion = tuple[int, Source]


class RankDeficiencyError(ValueError):
    def __init__(self, row: int, columns: list[str]):
        self.row = row
        self.columns = columns
        super().__init__(f"regressor matrix for x{row + 1} is rank deficient; dependent columns: {columns}")


def source_label(source: Source) -> str:
    return f"{source[0]}{source[1] + 1}"


def parse_source(label: str) -> Source:
    kind, idx = label[0], int(label[1:]) - 1
    if kind not in "xu" or idx < 0:
        raise ValueError(f"bad source label {label!r}")
    return kind, idx


def regressor_terms(n: int, m: int, kind: str, intercept: bool = False) -> list[tuple[int, ...]]:
    """Regressor index tuples into ``z = [x, u]``; ``()`` is the intercept."""
    lin = [(k,) for k in range(n + m)]
    if kind == "linear":
        terms = lin
    elif kind == "feature":
        terms = lin + list(combinations_with_replacement(range(n + m), 2))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return ([()] if intercept else []) + terms


def term_name(term: tuple[int, ...], n: int) -> str:
    if not term:
        return "1"
    return "*".join(f"x{k + 1}" if k < n else f"u{k - n + 1}" for k in term)


def features(x: np.ndarray, u: np.ndarray, terms: Sequence[tuple[int, ...]]) -> np.ndarray:
    lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    z = np.concatenate([np.broadcast_to(x, lead + x.shape[-1:]), np.broadcast_to(u, lead + u.shape[-1:])], axis=-1)
    cols = []
    for term in terms:
        col = np.ones(z.shape[:-1])
        for k in term:
            col = col * z[..., k]
        cols.append(col)
    return np.stack(cols, axis=-1)


def _source_index(source: Source, n: int) -> int:
    kind, j = source
    return j if kind == "x" else n + j


@dataclass(frozen=True, eq=False)
class EstimatedModel:
    """Fitted model: row ``i`` of ``coef`` maps regressors to ``x_i(t+1)``."""

    kind: str
    state_dim: int
    input_dim: int
    coef: np.ndarray
    noise_std_hat: np.ndarray
    excluded: frozenset = field(default_factory=frozenset)
    intercept: bool = False
    ridge: float = 0.0

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float)
        p = len(regressor_terms(self.state_dim, self.input_dim, self.kind, self.intercept))
        if coef.shape != (self.state_dim, p):
            raise DimensionError(f"coef must have shape ({self.state_dim}, {p}), got {coef.shape}")
        sig = np.array(self.noise_std_hat, dtype=float)
        if sig.shape != (self.state_dim,) or np.any(sig < 0):
            raise ValueError("noise_std_hat must be a non-negative n-vector")
        coef.setflags(write=False)
        sig.setflags(write=False)
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "noise_std_hat", sig)
        object.__setattr__(self, "excluded", frozenset(self.excluded))

    @property
    def terms(self) -> list[tuple[int, ...]]:
        return regressor_terms(self.state_dim, self.input_dim, self.kind, self.intercept)

    @property
    def term_names(self) -> list[str]:
        return [term_name(t, self.state_dim) for t in self.terms]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return features(x, u, self.terms) @ self.coef.T

    def linear_part(self) -> tuple[np.ndarray, np.ndarray]:
        """``(A_hat, B_hat)`` from the degree-1 weights."""
        n, m = self.state_dim, self.input_dim
        idx = {t: k for k, t in enumerate(self.terms)}
        W = np.stack([self.coef[:, idx[(k,)]] for k in range(n + m)], axis=1)
        return W[:, :n].copy(), W[:, n:].copy()

    def jacobian(self, x, u) -> tuple[np.ndarray, np.ndarray]:
        """Partial derivatives of the noiseless transition at ``(x, u)``."""
        n, m = self.state_dim, self.input_dim
        z = np.concatenate([np.asarray(x, float), np.asarray(u, float)])
        J = np.zeros((n, n + m))
        for c, term in enumerate(self.terms):
            for pos, k in enumerate(term):
                rest = term[:pos] + term[pos + 1 :]
                J[:, k] += self.coef[:, c] * np.prod(z[list(rest)]) if rest else self.coef[:, c]
        return J[:, :n], J[:, n:]

    def weight(self, target: int, term: tuple[int, ...]) -> float:
        return float(self.coef[target, self.terms.index(term)])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "intercept": self.intercept,
            "ridge": self.ridge,
            "regressors": self.term_names,
            "coefficients": {f"x{i + 1}": [float(v) for v in self.coef[i]] for i in range(self.state_dim)},
            "noise_std_hat": [float(v) for v in self.noise_std_hat],
            "exclusions": [[i + 1, source_label(s)] for i, s in sorted(self.excluded)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatedModel":
        n = d["state_dim"]
        return cls(
            kind=d["kind"],
            state_dim=n,
            input_dim=d["input_dim"],
            coef=np.array([d["coefficients"][f"x{i + 1}"] for i in range(n)]),
            noise_std_hat=np.array(d["noise_std_hat"]),
            excluded=frozenset((int(i) - 1, parse_source(s)) for i, s in d["exclusions"]),
            intercept=d.get("intercept", False),
            ridge=d.get("ridge", 0.0),
        )

    @classmethod
    def from_json(cls, text: str) -> "EstimatedModel":
        return cls.from_dict(json.loads(text))


def _stack_data(data: Iterable[Trajectory]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xs, us, ys = [], [], []
    for traj in data:
        if traj.horizon == 0:
            continue
        xs.append(traj.states[:-1])
        us.append(traj.inputs)
        ys.append(traj.states[1:])
    if not xs:
        raise ValueError("no transitions in data")
    return np.concatenate(xs), np.concatenate(us), np.concatenate(ys)


def _deficient_columns(Phi: np.ndarray, names: list[str], rtol: float = 1e-10) -> list[str]:
    if Phi.shape[1] == 0:
        return []
    _, R, piv = scipy.linalg.qr(Phi, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    ref = diag[0] if diag.size and diag[0] > 0 else 1.0
    rank = int(np.sum(diag > rtol * ref)) if diag[0] > 0 else 0
    return sorted(names[k] for k in piv[rank:])


def fit(
    data: Sequence[Trajectory],
    kind: str = "linear",
    excluded: Iterable[Exclusion] = (),
    *,
    intercept: bool = False,
    ridge: float = 0.0,
) -> EstimatedModel:
    """Per-state ordinary (or ridge) least squares with regressor exclusions.

    ``noise_std_hat[i]`` is the residual standard deviation of row ``i`` with
    denominator ``N - p_i``. Raises :class:`RankDeficiencyError` when a row's
    regressor matrix is rank deficient and ``ridge`` is zero.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    X, U, Y = _stack_data(data)
    n, m = X.shape[1], U.shape[1]
    excluded = frozenset((int(i), (str(s[0]), int(s[1]))) for i, s in excluded)
    for i, (kind_s, j) in excluded:
        if not 0 <= i < n or kind_s not in ("x", "u") or not 0 <= j < (n if kind_s == "x" else m):
            raise ValueError(f"bad exclusion {(i, (kind_s, j))}")
    terms = regressor_terms(n, m, kind, intercept)
    names = [term_name(t, n) for t in terms]
    Phi = features(X, U, terms)
    N = Phi.shape[0]
    coef = np.zeros((n, len(terms)))
    sig = np.zeros(n)
    for i in range(n):
        dropped = {_source_index(s, n) for (row, s) in excluded if row == i}
        keep = [c for c, t in enumerate(terms) if not dropped.intersection(t)]
        target = Y[:, i].copy()
        self_excluded = i in dropped
        if self_excluded:
            target -= X[:, i]
        if N < len(keep):
            raise ValueError(f"need at least {len(keep)} transitions, got {N}")
        P = Phi[:, keep]
        if ridge == 0.0:
            bad = _deficient_columns(P, [names[c] for c in keep])
            if bad:
                raise RankDeficiencyError(i, bad)
            w, *_ = np.linalg.lstsq(P, target, rcond=None)
        else:
            w = np.linalg.solve(P.T @ P + ridge * np.eye(len(keep)), P.T @ target)
        resid = target - P @ w
        dof = max(N - len(keep), 1)
        sig[i] = np.sqrt(resid @ resid / dof)
        coef[i, keep] = w
        if self_excluded:
            coef[i, terms.index((i,))] = 1.0
    return EstimatedModel(kind, n, m, coef, sig, excluded, intercept, ridge)


def predict(model: EstimatedModel, x0, inputs, mode="noiseless") -> Trajectory:
    """Roll the fitted model forward.

    ``mode`` is ``"noiseless"`` or an RNG seed (int or seed tuple); in the
    latter case ``N(0, diag(noise_std_hat**2))`` noise is added each step.
    """
    x0 = np.asarray(x0, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if x0.shape != (model.state_dim,) or inputs.ndim != 2 or inputs.shape[1] != model.input_dim:
        raise DimensionError("x0/inputs do not match model dimensions")
    noise = None
    if not (isinstance(mode, str) and mode == "noiseless"):
        noise = rng_for(mode).standard_normal((inputs.shape[0], model.state_dim)) * model.noise_std_hat
    states = rollout(model.step, x0, inputs, noise)
    return Trajectory(states, inputs)


def residual_sse(model: EstimatedModel, data: Sequence[Trajectory]) -> np.ndarray:
    """Per-state sum of squared one-step prediction errors."""
    X, U, Y = _stack_data(data)
    r = Y - model.step(X, U)
    return np.sum(r**2, axis=0)
