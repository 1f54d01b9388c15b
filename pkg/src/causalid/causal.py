"""Causal structure identification by paired experiments and MMD tests.

The pipeline: excite the plant and fit a black-box model; then for every
source (states first, then inputs) design an experiment, steer the plant to
each arm's initial condition, run the arms, and for every pending target
compare the empirical MMD^2 with a Monte-Carlo threshold computed from a model
fitted without the source's data. An accepted non-causality is folded into the
model by refitting the target's row without the source.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .control import ControlError, SteeringConfig, predicted_arrival_steps, steer_to, steering_law
from .dynamics import NonlinearModel, SystemModel, Trajectory, TrajectoryBatch, chirp_signal, rng_for, rollout, simulate
from .expdesign import DesignConfig, DesignError, ExperimentSpec, design_experiment, predicted_mmd
from .kernels import KernelConfig, embed, embed_states, mmd2_unbiased
from .sysid import EstimatedModel, Source, fit, predict, source_label

log = logging.getLogger(__name__)

NON_CAUSAL = "non-causal"
CAUSAL = "causal"


class ExperimentAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TestResult:
    """Evidence for one (source -> target) test; ``threshold = mc_mean + nu * mc_std``."""

    __test__ = False  # not a pytest class

    source: str
    target: int
    mmd2_empirical: float
    threshold: float
    mc_mean: float
    mc_std: float
    nu: float
    decision: str
    repetitions: int
    T: int
    subtract_initial: bool
    seeds: tuple = ()
    spec_id: str = ""

    def __post_init__(self):
        expected = NON_CAUSAL if self.mmd2_empirical < self.threshold else CAUSAL
        if self.decision != expected:
            raise ValueError("decision inconsistent with mmd2_empirical < threshold")

    @property
    def chebyshev_bound(self) -> float | None:
        """Lower bound on the acceptance probability under the null, for ``nu > 1``."""
        return 1 - 1 / self.nu**2 if self.nu > 1 else None

    @property
    def pair(self) -> str:
        return f"{self.source}->x{self.target + 1}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target"] = f"x{self.target + 1}"
        d["seeds"] = [list(s) if isinstance(s, tuple) else s for s in self.seeds]
        d["chebyshev_bound"] = self.chebyshev_bound
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TestResult":
        d = dict(d)
        d.pop("chebyshev_bound", None)
        d["target"] = int(d["target"][1:]) - 1
        d["seeds"] = tuple(tuple(s) if isinstance(s, list) else s for s in d.get("seeds", ()))
        return cls(**d)


@dataclass
class CausalGraph:
    """Influence matrices indexed ``[target, source]`` plus the test evidence.

    ``state_influence`` is ``n x n`` and ``input_influence`` is ``n x m``, laid
    out like the ``A`` and ``B`` matrices. Pairs that were never tested
    (``untested``/``failures``) are reported as causal.
    """

    state_influence: np.ndarray
    input_influence: np.ndarray
    evidence: list[TestResult] = field(default_factory=list)
    untested: list[str] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)

    @property
    def state_dim(self) -> int:
        return self.state_influence.shape[0]

    @property
    def input_dim(self) -> int:
        return self.input_influence.shape[1]

    def non_causal_pairs(self) -> set[str]:
        out = set()
        for i in range(self.state_dim):
            out |= {f"x{j + 1}->x{i + 1}" for j in range(self.state_dim) if not self.state_influence[i, j]}
            out |= {f"u{j + 1}->x{i + 1}" for j in range(self.input_dim) if not self.input_influence[i, j]}
        return out

    def causal_pairs(self) -> set[str]:
        return all_pairs(self.state_dim, self.input_dim) - self.non_causal_pairs()

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "state_dim": self.state_dim,
            "input_dim": self.input_dim,
            "state_influence": self.state_influence.astype(bool).tolist(),
            "input_influence": self.input_influence.astype(bool).tolist(),
            "non_causal": sorted(self.non_causal_pairs()),
            "evidence": [r.to_dict() for r in self.evidence],
            "untested": list(self.untested),
            "failures": list(self.failures),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "CausalGraph":
        return cls(
            np.array(d["state_influence"], dtype=bool).reshape(d["state_dim"], d["state_dim"]),
            np.array(d["input_influence"], dtype=bool).reshape(d["state_dim"], d["input_dim"]),
            [TestResult.from_dict(r) for r in d.get("evidence", [])],
            list(d.get("untested", [])),
            list(d.get("failures", [])),
        )

    @classmethod
    def from_json(cls, text: str) -> "CausalGraph":
        return cls.from_dict(json.loads(text))

    def table(self) -> str:
        """Plain-text tables: source -> target, experimental MMD, test statistic."""
        lines = []
        for kind, title in (("x", "State -> State"), ("u", "Input -> State")):
            lines.append(f"{title:<16} {'Experimental MMD':>18} {'Test statistic':>16}  Decision")
            rows = [r for r in self.evidence if r.source.startswith(kind)]
            for r in rows:
                lines.append(f"{r.pair:<16} {r.mmd2_empirical:>18.3e} {r.threshold:>16.3e}  {r.decision}")
            lines.append("")
        if self.untested:
            lines.append("untested (reported causal): " + ", ".join(self.untested))
        for f in self.failures:
            lines.append(f"failed: {f['source']} ({f['module']}): {f['message']}")
        return "\n".join(lines).rstrip() + "\n"


def all_pairs(n: int, m: int) -> set[str]:
    return {f"x{j + 1}->x{i + 1}" for i in range(n) for j in range(n)} | {
        f"u{j + 1}->x{i + 1}" for i in range(n) for j in range(m)
    }


def ground_truth_lti(A, B, T: int, subtract_self: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Causal structure of an LTI plant from matrix powers.

    ``x_j -> x_i`` iff ``(A^t)_ij != 0`` for some ``1 <= t <= T``; for
    ``i == j`` with ``subtract_self`` the test is on ``A^t - I`` (the motion
    relative to the start). ``u_j -> x_i`` iff ``(A^k B)_ij != 0`` for some
    ``0 <= k < T``.
    """
    A = np.asarray(A, float)
    B = np.asarray(B, float)
    n = A.shape[0]
    state = np.zeros((n, n), dtype=bool)
    inp = np.zeros(B.shape, dtype=bool)
    P = np.eye(n)
    for t in range(1, T + 1):
        inp |= (P @ B) != 0
        P = P @ A
        D = P - np.eye(n) if subtract_self else P
        off = ~np.eye(n, dtype=bool)
        state |= (P != 0) & off
        state |= (D != 0) & ~off
    return state, inp


@dataclass(frozen=True)
class TestConfig:
    __test__ = False

    nu: float = 1.0
    mc_runs: int = 100
    subtract_initial: bool = False


@dataclass(frozen=True)
class ExcitationConfig:
    steps: int = 3000
    amplitude: float | None = None
    f0: float = 0.01
    f1: float = 0.2
    episodes: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    design: DesignConfig
    steering: SteeringConfig = field(default_factory=SteeringConfig)
    test: TestConfig = field(default_factory=TestConfig)
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    model_kind: str = "linear"
    ridge: float = 0.0
    x_init: tuple | None = None

    @property
    def kernel(self) -> KernelConfig:
        return self.design.kernel


def _seed(base, *keys) -> tuple:
    base = base if isinstance(base, tuple) else (int(base),)
    return base + tuple(int(k) for k in keys)


def run_experiment(
    plant: SystemModel,
    model: EstimatedModel,
    spec: ExperimentSpec,
    steer_cfg: SteeringConfig = SteeringConfig(),
    rng_seed=0,
    start_state=None,
) -> tuple[TrajectoryBatch, TrajectoryBatch]:
    """Run ``spec.repetitions`` repetitions of both arms on the plant.

    Before every run the plant is steered from wherever it is to the arm's
    initial condition. All steering phases of the experiment last the same
    number of steps (the longest predicted arrival time), so that the
    untested components reach matching distributions. The recorded initial
    state of each run is the state actually reached.
    """
    try:
        law = steering_law(model, steer_cfg)
    except ControlError as e:
        raise ExperimentAborted(f"steering gains unavailable: {e}") from e
    state = np.zeros(plant.state_dim) if start_state is None else np.asarray(start_state, float)
    arms = ((spec.x0_I, spec.inputs_I), (spec.x0_II, spec.inputs_II))
    starts = [state] + [rollout(model.step, x0, u)[-1] for x0, u in arms]
    settle = max(
        predicted_arrival_steps(model, law, s, x0, steer_cfg.arrival_tol, steer_cfg.max_steps)
        for s in starts
        for x0, _ in arms
    )
    settle = min(settle + 5, steer_cfg.max_steps)
    runs: tuple[list, list] = ([], [])
    for r in range(spec.repetitions):
        for a, (x0, inputs) in enumerate(arms):
            for attempt in range(steer_cfg.retries):
                traj, arrived = steer_to(plant, model, x0, steer_cfg, _seed(rng_seed, r, a, attempt), state, settle, law)
                state = traj.states[-1]
                if arrived:
                    break
            else:
                raise ExperimentAborted(
                    f"steering to {np.round(x0, 4).tolist()} failed after {steer_cfg.retries} attempts"
                )
            run = simulate_from(plant, state, inputs, _seed(rng_seed, r, a, 1000))
            if run.truncated:
                raise ExperimentAborted("experiment run left the admissible state set")
            runs[a].append(run)
            state = run.states[-1]
    return TrajectoryBatch(tuple(runs[0]), spec.spec_id), TrajectoryBatch(tuple(runs[1]), spec.spec_id)


def simulate_from(plant: SystemModel, x0, inputs, seed) -> Trajectory:
    if isinstance(plant, NonlinearModel) and not plant.in_state_bounds(x0):
        return Trajectory(np.asarray(x0, float)[None, :], np.zeros((0, plant.input_dim)), truncated=True)
    return simulate(plant, x0, inputs, seed)


def _arm_arrays(batch: TrajectoryBatch) -> tuple[np.ndarray, np.ndarray]:
    return batch.initial_states(), np.stack([r.inputs for r in batch.runs])


def test_threshold(
    model_ind: EstimatedModel,
    batchI: TrajectoryBatch,
    batchII: TrajectoryBatch,
    target: int,
    nu: float = 1.0,
    mc_runs: int = 100,
    subtract_initial: bool = False,
    kernel: KernelConfig = KernelConfig(),
    rng_seed=0,
) -> tuple[float, float, float]:
    """Monte-Carlo test statistic ``(mc_mean, mc_std, mc_mean + nu * mc_std)``.

    Both arms are re-simulated with the restricted model from the initial
    states the plant actually reached. ``mc_mean`` is the MMD^2 of the
    noiseless rollouts; ``mc_std`` is the spread of MMD^2 over ``mc_runs``
    sampled-noise rollouts.
    """
    if mc_runs < 2:
        raise ValueError("mc_runs must be >= 2")
    x0I, uI = _arm_arrays(batchI)
    x0II, uII = _arm_arrays(batchII)
    sI = rollout(model_ind.step, x0I, uI)
    sII = rollout(model_ind.step, x0II, uII)
    mc_mean = float(mmd2_unbiased(embed_states(sI, target, subtract_initial), embed_states(sII, target, subtract_initial), kernel))
    rng = rng_for(rng_seed)
    n = model_ind.state_dim
    shapeI = (mc_runs,) + uI.shape[:2] + (n,)
    shapeII = (mc_runs,) + uII.shape[:2] + (n,)
    nI = rng.standard_normal(shapeI) * model_ind.noise_std_hat
    nII = rng.standard_normal(shapeII) * model_ind.noise_std_hat
    sI = rollout(model_ind.step, np.broadcast_to(x0I, shapeI[:2] + (n,)), uI, nI)
    sII = rollout(model_ind.step, np.broadcast_to(x0II, shapeII[:2] + (n,)), uII, nII)
    vals = mmd2_unbiased(embed_states(sI, target, subtract_initial), embed_states(sII, target, subtract_initial), kernel)
    mc_std = float(np.std(vals, ddof=1))
    return mc_mean, mc_std, mc_mean + nu * mc_std


def decide(
    batchI: TrajectoryBatch,
    batchII: TrajectoryBatch,
    target: int,
    threshold: float,
    subtract_initial: bool = False,
    *,
    source: Source | str = ("x", -1),
    kernel: KernelConfig = KernelConfig(),
    mc_mean: float = math.nan,
    mc_std: float = math.nan,
    nu: float = 1.0,
    seeds: tuple = (),
) -> TestResult:
    """Accept non-causality iff the empirical MMD^2 is strictly below ``threshold``."""
    label = source if isinstance(source, str) else source_label(source)
    sub = subtract_initial or label == f"x{target + 1}"
    X = embed(batchI, target, sub)
    Y = embed(batchII, target, sub)
    value = float(mmd2_unbiased(X, Y, kernel))
    return TestResult(
        source=label,
        target=target,
        mmd2_empirical=value,
        threshold=float(threshold),
        mc_mean=float(mc_mean),
        mc_std=float(mc_std),
        nu=float(nu),
        decision=NON_CAUSAL if value < threshold else CAUSAL,
        repetitions=len(batchI),
        T=batchI.runs[0].horizon,
        subtract_initial=sub,
        seeds=tuple(seeds),
        spec_id=batchI.spec_id,
    )


def excite(plant: SystemModel, cfg: PipelineConfig, master_seed) -> list[Trajectory]:
    """Chirp excitation data used for the black-box fits."""
    ex = cfg.excitation
    d = cfg.design
    amp = ex.amplitude if ex.amplitude is not None else 1.0
    center, half = d.input_center, d.input_halfwidth
    u = center + amp * half * chirp_signal(ex.steps, 1.0, ex.f0, ex.f1, plant.input_dim)
    if isinstance(plant, NonlinearModel):
        u = np.clip(u, plant.input_bounds[:, 0], plant.input_bounds[:, 1])
    x0 = np.zeros(plant.state_dim) if cfg.x_init is None else np.asarray(cfg.x_init, float)
    data = []
    rng = rng_for(_seed(master_seed, 0))
    for e in range(ex.episodes):
        start = x0 if e == 0 else rng.uniform(d.state_box[:, 0], d.state_box[:, 1])
        shift = (e * 7919) % ex.steps
        data.append(simulate(plant, start, np.roll(u, shift, axis=0), _seed(master_seed, 0, e)))
    return data


@dataclass
class Identification:
    """Outcome of :func:`identify_structure`; unpacks as ``(graph, model)``."""

    graph: CausalGraph
    model: EstimatedModel
    model_init: EstimatedModel
    data: list[Trajectory]
    experiments: list[tuple[ExperimentSpec, TrajectoryBatch, TrajectoryBatch]]

    def __iter__(self):
        return iter((self.graph, self.model))

    @property
    def ok(self) -> bool:
        return not self.graph.failures


def null_model(data, cfg: PipelineConfig, model: EstimatedModel, source: Source) -> EstimatedModel:
    """Model fitted without any use of the source's data.

    The source is excluded from every row, so no path from it to any target
    survives; simulated arms then differ only through their other initial
    states and noise. The noise level is kept from ``model``: residuals of the
    restricted fit also absorb the source's real effect when there is one,
    and that is misfit rather than process noise.
    """
    excl = set(model.excluded) | {(k, source) for k in range(model.state_dim)}
    restricted = fit(data, cfg.model_kind, excl, ridge=cfg.ridge)
    return dataclasses.replace(restricted, noise_std_hat=model.noise_std_hat)


def identify_structure(plant: SystemModel, cfg: PipelineConfig, master_seed: int = 0) -> Identification:
    """Excite, fit, then test every source against every target."""
    n, m = plant.state_dim, plant.input_dim
    data = excite(plant, cfg, master_seed)
    model_init = fit(data, cfg.model_kind, ridge=cfg.ridge)
    model = model_init
    state = data[-1].states[-1]
    evidence: list[TestResult] = []
    untested: list[str] = []
    failures: list[dict] = []
    experiments = []
    non_causal: set[tuple[int, Source]] = set()
    sources = [("x", j) for j in range(n)] + [("u", j) for j in range(m)]
    for s_idx, source in enumerate(sources):
        pending = list(range(n))
        e_idx = 0
        while pending:
            ell = pending[0]
            module = "expdesign"
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    spec = design_experiment(model, source, cfg.design, _seed(master_seed, 1, s_idx, e_idx), target=ell)
                preds = {
                    i: predicted_mmd(model, spec, i, 0, cfg.kernel, cfg.test.subtract_initial) for i in pending
                }
                module = "control"
                bI, bII = run_experiment(plant, model, spec, cfg.steering, _seed(master_seed, 2, s_idx, e_idx), state)
            except (DesignError, ExperimentAborted, ControlError) as e:
                failures.append({
                    "source": source_label(source),
                    "module": module,
                    "targets": [f"x{i + 1}" for i in pending],
                    "message": str(e),
                })
                log.error("%s: %s failed: %s", source_label(source), module, e)
                untested.extend(f"{source_label(source)}->x{i + 1}" for i in pending)
                break
            state = bII.runs[-1].states[-1]
            experiments.append((spec, bI, bII))
            for i in list(pending):
                if not preds[i] > cfg.design.delta2:
                    continue
                sub = cfg.test.subtract_initial or source == ("x", i)
                seed = _seed(master_seed, 3, s_idx, e_idx, i)
                mc_mean, mc_std, thr = test_threshold(
                    null_model(data, cfg, model, source), bI, bII, i, cfg.test.nu, cfg.test.mc_runs, sub, cfg.kernel, seed
                )
                res = decide(
                    bI, bII, i, thr, sub, source=source, kernel=cfg.kernel,
                    mc_mean=mc_mean, mc_std=mc_std, nu=cfg.test.nu,
                    seeds=(_seed(master_seed, 2, s_idx, e_idx), seed),
                )
                evidence.append(res)
                log.info("%s: MMD2 %.3e vs threshold %.3e -> %s", res.pair, res.mmd2_empirical, thr, res.decision)
                if res.decision == NON_CAUSAL:
                    non_causal.add((i, source))
                    model = fit(data, cfg.model_kind, model.excluded | {(i, source)}, ridge=cfg.ridge)
                pending.remove(i)
            if ell in pending:
                pending.remove(ell)
                untested.append(f"{source_label(source)}->x{ell + 1}")
            e_idx += 1
    state_inf = np.ones((n, n), dtype=bool)
    input_inf = np.ones((n, m), dtype=bool)
    for i, (kind, j) in non_causal:
        (state_inf if kind == "x" else input_inf)[i, j] = False
    graph = CausalGraph(state_inf, input_inf, evidence, untested, failures)
    return Identification(graph, model, model_init, data, experiments)


def generalization_report(
    model_init: EstimatedModel, model_caus: EstimatedModel, held_out: TrajectoryBatch, target: int
) -> dict[str, float]:
    """Noiseless-prediction RMSE of ``x_target`` for both models on held-out runs."""
    out = {}
    for name, mdl in (("init", model_init), ("caus", model_caus)):
        err = []
        for run in held_out.runs:
            pred = predict(mdl, run.states[0], run.inputs)
            err.append(pred.states[:, target] - run.states[:, target])
        out[name] = float(np.sqrt(np.mean(np.concatenate(err) ** 2)))
    return out
