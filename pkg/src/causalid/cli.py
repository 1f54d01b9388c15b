"""Command line: ``causalid run <config>`` and ``causalid verify <graph> <config>``.

Exit codes: 0 success (or exact match for ``verify``), 1 graph mismatch,
2 invalid input, 3 runtime failure during identification.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .causal import CausalGraph, Identification, generalization_report, ground_truth_lti, identify_structure
from .dynamics import LtiModel, TrajectoryBatch, chirp_signal, simulate, trajectory_to_csv
from .scenarios import ConfigError, ScenarioConfig, load

log = logging.getLogger("causalid")

EXIT_OK, EXIT_MISMATCH, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2, 3


def _thread_limit():
    value = os.environ.get("CAUSALID_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        k = int(value)
        if k < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"CAUSALID_THREADS must be a positive integer, got {value!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=k)


def held_out_batch(sc: ScenarioConfig, noisy: bool = False) -> TrajectoryBatch | None:
    """Runs from the scenario's held-out initial condition, outside the design box.

    With ``noisy=False`` the plant's noise is switched off, so the RMSE
    measures model error alone.
    """
    gen = sc.generalization
    if gen is None:
        return None
    plant = sc.plant if noisy else sc.plant.with_noise(0.0)
    cfg = sc.pipeline
    d = cfg.design
    T = int(gen.get("T", d.T))
    scale = float(gen.get("input_scale", 0.5))
    m = sc.plant.input_dim
    runs = []
    for r in range(int(gen.get("runs", 10))):
        u = d.input_center + scale * d.input_halfwidth * np.roll(chirp_signal(T, 1.0, 0.01, 0.2, m), 17 * r, axis=0)
        runs.append(simulate(plant, np.array(gen["x0"], float), u, (sc.master_seed, 9, r)))
    return TrajectoryBatch(tuple(runs), "held-out")


def write_outputs(out: Path, sc: ScenarioConfig, res: Identification) -> list[str]:
    files = []

    def put(name: str, text: str):
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        files.append(name)

    put("graph.json", res.graph.to_json())
    put("tables.txt", res.graph.table())
    put("model_init.json", res.model_init.to_json() + "\n")
    put("model_caus.json", res.model.to_json() + "\n")
    for e, traj in enumerate(res.data):
        put(f"trajectories/excitation_{e:02d}.csv", trajectory_to_csv(traj))
    for k, (spec, bI, bII) in enumerate(res.experiments):
        tag = f"exp{k:02d}_{spec.kind}_{spec.source[0]}{spec.source[1] + 1}"
        put(f"trajectories/{tag}.json", spec.to_json() + "\n")
        for arm, batch in (("I", bI), ("II", bII)):
            for r, run in enumerate(batch.runs):
                put(f"trajectories/{tag}_{arm}_{r:02d}.csv", trajectory_to_csv(run))
    lines = [f"scenario: {sc.name}", f"master_seed: {sc.master_seed}"]
    if sc.generalization is None:
        lines.append("no held-out initial condition configured")
    else:
        target = int(sc.generalization["target"]) - 1
        lines += [f"held_out_x0: {list(sc.generalization['x0'])}", f"target: x{target + 1}"]
        for noisy, tag in ((False, "noiseless"), (True, "noisy")):
            held = held_out_batch(sc, noisy)
            rep = generalization_report(res.model_init, res.model, held, target)
            ratio = rep["caus"] / rep["init"] if rep["init"] > 0 else float("nan")
            lines += [
                f"[{tag} held-out runs: {len(held)}]",
                f"rmse_init: {rep['init']:.6e}",
                f"rmse_caus: {rep['caus']:.6e}",
                f"ratio: {ratio:.6f}",
            ]
            for r, run in enumerate(held.runs):
                put(f"trajectories/held_out_{tag}_{r:02d}.csv", trajectory_to_csv(run))
    put("generalization.txt", "\n".join(lines) + "\n")
    files.append("index.json")
    (out / "index.json").write_text(json.dumps({"scenario": sc.name, "files": files}, indent=2) + "\n")
    return files


def cmd_run(args) -> int:
    try:
        sc = load(args.config)
        if args.seed is not None:
            sc = sc.with_seed(args.seed)
        out = Path(args.out or sc.output_dir or f"out/{sc.name}")
        limit = _thread_limit()
    except ConfigError as e:
        print(f"error: invalid config: {e}", file=sys.stderr)
        return EXIT_INVALID
    with limit:
        res = identify_structure(sc.plant, sc.pipeline, sc.master_seed)
        out.mkdir(parents=True, exist_ok=True)
        write_outputs(out, sc, res)
    g = res.graph
    if not args.quiet:
        print(g.table(), end="")
        print(f"non-causal: {', '.join(sorted(g.non_causal_pairs())) or '(none)'}")
        print(f"outputs written to {out}")
    if g.failures:
        for f in g.failures:
            print(f"error: {f['module']} failed for source {f['source']} (targets {', '.join(f['targets'])}): {f['message']}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def diff_graph(graph: CausalGraph, plant: LtiModel, T: int) -> list[str]:
    """Pairs where ``graph`` disagrees with the matrix-power ground truth."""
    state, inp = ground_truth_lti(plant.A, plant.B, T)
    if graph.state_influence.shape != state.shape or graph.input_influence.shape != inp.shape:
        raise ConfigError("graph dimensions do not match the plant")
    out = []
    for kind, got, want in (("x", graph.state_influence, state), ("u", graph.input_influence, inp)):
        for i, j in zip(*np.nonzero(got != want)):
            truth = "causal" if want[i, j] else "non-causal"
            out.append(f"{kind}{j + 1}->x{i + 1}: graph says {'causal' if got[i, j] else 'non-causal'}, truth is {truth}")
    return out


def cmd_verify(args) -> int:
    try:
        sc = load(args.config)
        if not isinstance(sc.plant, LtiModel):
            raise ConfigError("verify is unsupported for nonlinear plants (the oracle needs A and B)")
        graph = CausalGraph.from_json(Path(args.graph).read_text())
        mismatches = diff_graph(graph, sc.plant, sc.pipeline.design.T)
    except (ConfigError, OSError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    if mismatches:
        for line in mismatches:
            print(f"mismatch {line}")
        return EXIT_MISMATCH
    if not args.quiet:
        print("graph matches the ground truth")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causalid", description="Causal structure identification by designed experiments.")
    p.add_argument("--quiet", action="store_true", help="only print errors")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="identify the causal graph of a scenario")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="override master_seed")
    run.add_argument("--out", help="output directory")
    run.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    ver = sub.add_parser("verify", help="compare a graph.json with the LTI ground truth")
    ver.add_argument("graph")
    ver.add_argument("config")
    ver.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        print("error: --seed must be >= 0", file=sys.stderr)
        return EXIT_INVALID
    return cmd_run(args) if args.command == "run" else cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
