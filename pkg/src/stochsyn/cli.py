"""Batch front end: synthesize, simulate, bench.

Wires the pipeline end to end from a declarative config: translate the
formula, build the (possibly reduced or piecewise-affine) abstraction,
certify the coupling, run robust value iteration, refine, and export
machine-readable artifacts (controller bundle, satisfaction field CSV,
report JSON, trajectory CSVs).
"""

from __future__ import annotations

import argparse
import copy
import json
import pathlib
import resource
import sys
import time

import numpy as np

from . import __version__
from .abstraction import Grid, build_abstraction, grid_input_space, label_sets
from .config import ConfigError, build_model, load_config, validate
from .errors import (BudgetViolation, Infeasible, NoCommonD, NonConvergence,
                     NotStabilizable, VersionMismatch)
from .geometry import Polytope
from .models import NonlinearModel, normalize_disturbance, steady_state_shift
from .mor import (apply_lift, compute_projection, diagonalize_reduced_noise,
                  model_reduction, reduce_x)
from .pwa import pwa_approximation
from .runtime import Controller, refine_controller, simulate
from .similarity import combine_relations, quantify_sim, quantify_sim_mor
from .speclang import parse_scltl, translate_spec
from .synthesis import initial_state_values, value_at, value_iteration

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NONCONVERGENCE = 4
EXIT_VERSION = 5

PRESETS = {
    "carpark": "carpark.toml",
    "package-delivery": "package_delivery.toml",
    "vdpol": "vdpol.toml",
    "bas": "bas.toml",
}


def preset_path(name):
    if name not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return pathlib.Path(__file__).parent / "presets" / PRESETS[name]


class Pipeline:
    """One synthesis run with per-step wall-clock accounting."""

    def __init__(self, config, thold=None, tol=None, upper=False,
                 initial_only=False):
        self.config = validate(config)
        self.timings = {}
        self.upper = upper
        self.initial_only = initial_only
        syn = config.get("synthesis", {})
        self.thold = thold if thold is not None else syn.get("thold", 1e-12)
        self.tol = tol if tol is not None else config["abstraction"].get(
            "tol", 1e-6)

    def _timed(self, key, fn):
        start = time.perf_counter()
        out = fn()
        self.timings[key] = self.timings.get(key, 0.0) + \
            time.perf_counter() - start
        return out

    def run(self):
        cfg = self.config
        spec = cfg["spec"]
        formula = self._timed("translate", lambda: parse_scltl(
            spec["formula"], spec["aps"]))
        dfa = self._timed("translate", lambda: translate_spec(formula))
        self.dfa = dfa

        model = build_model(cfg)
        self.original = model
        steady = None
        pair = None
        work = model
        mor_cfg = cfg.get("mor")

        def _finish_pair(candidate):
            diagonalize_reduced_noise(candidate)
            red = candidate.reduced
            red.U = work.U
            red.labeling = work.labeling
            # reduced state box: image of the full box under the lift
            lows, highs = work.X.bounds
            corners = np.array(np.meshgrid(*zip(lows, highs))) \
                .reshape(work.n, -1).T
            pinvP = np.linalg.pinv(candidate.P)
            projected = corners @ pinvP.T
            red.X = Polytope.box(projected.min(axis=0),
                                 projected.max(axis=0))
            return candidate

        def prepare():
            nonlocal work, steady, pair
            if not work.is_normalized():
                work, _ = normalize_disturbance(work)
            if mor_cfg and "steady_state" in mor_cfg:
                work, steady = steady_state_shift(
                    work, np.asarray(mor_cfg["steady_state"], float))
            if isinstance(work, NonlinearModel):
                work = pwa_approximation(work, cfg["pwa"]["Np"])
            if mor_cfg:
                base = compute_projection(model_reduction(
                    work, int(mor_cfg["dimr"]), float(mor_cfg["f"])))
                # Pick the lift by the deviation it lets us certify.
                sim_cfg = cfg.get("similarity", {})
                rough_inputs = grid_input_space(
                    cfg["abstraction"]["lu"], work.U,
                    interface=int(sim_cfg.get("interface", 0)),
                    fractions=(tuple(sim_cfg["fractions"])
                               if "fractions" in sim_cfg else None))
                best = None
                failures = []
                for label, P, Q in base.lift_candidates:
                    candidate = _finish_pair(apply_lift(
                        copy.deepcopy(base), P, Q))
                    try:
                        rel = quantify_sim_mor(
                            work, candidate, float(mor_cfg["epsilon_r"]),
                            u_box=rough_inputs.actuation)
                    except (Infeasible, NotStabilizable) as err:
                        failures.append(f"{label}: {err}")
                        continue
                    if best is None or rel.delta < best[1]:
                        best = (candidate, rel.delta, label)
                if best is None:
                    raise Infeasible(
                        "no lift candidate certifies the reduced-order "
                        "deviation: " + "; ".join(failures))
                pair = best[0]
        self._timed("abstraction", prepare)

        sim_cfg = cfg.get("similarity", {})
        interface = int(sim_cfg.get("interface", 0))
        fractions = sim_cfg.get("fractions")
        lu = cfg["abstraction"]["lu"]
        synth_model = pair.reduced if pair is not None else work
        inputs = self._timed("abstraction", lambda: grid_input_space(
            lu, synth_model.U, interface=interface,
            fractions=tuple(fractions) if fractions else None))

        if mor_cfg and mor_cfg.get("reduce_x", 0):
            def shrink():
                red = pair.reduced
                region, _ = red.labeling.regions[0]
                strip = Polytope(np.vstack([red.C, -red.C]),
                                 np.concatenate([region.bounds[1],
                                                 -region.bounds[0]]))
                red.X = reduce_x(red, inputs.actuation,
                                 strip.intersect(red.X),
                                 int(mor_cfg["reduce_x"])).X
            self._timed("abstraction", shrink)

        grid = Grid.from_polytope(synth_model.X, cfg["abstraction"]["l"])
        self.grid = grid
        abs_model = self._timed("abstraction", lambda: build_abstraction(
            synth_model, grid, inputs, self.tol))
        self.abs_model = abs_model

        def certify():
            eps = float(sim_cfg["epsilon"])
            rel2 = quantify_sim(synth_model, abs_model, eps,
                                interface=interface)
            if pair is not None:
                rel1 = quantify_sim_mor(work, pair,
                                        float(mor_cfg["epsilon_r"]),
                                        u_box=inputs.actuation)
                return combine_relations(rel1, rel2)
            return rel2
        rel = self._timed("similarity", certify)
        self.relation = rel

        self._timed("similarity", lambda: label_sets(
            abs_model, synth_model.labeling, rel.epsilon_out))

        vf, pol = self._timed("synthesis", lambda: value_iteration(
            abs_model, dfa, rel=rel, thold=self.thold))
        self.vf = vf
        self.upper_vf = None
        if self.upper:
            self.upper_vf, _ = self._timed("synthesis", lambda: value_iteration(
                abs_model, dfa, rel=rel, thold=self.thold, upper=True))

        field, q_init = initial_state_values(vf, abs_model, dfa,
                                             synth_model.labeling)
        self.field = field
        self.q_init = q_init
        # With reduction active the controller measures full-model states.
        runtime_model = work if pair is not None else synth_model
        controller = self._timed("refinement", lambda: refine_controller(
            vf, pol, abs_model, rel, runtime_model, dfa, pair=pair,
            steady=steady, value_field=field))
        self.controller = controller
        self.synth_model = synth_model
        self.work = work
        self.pair = pair
        self.steady = steady
        return self

    # -- outputs -------------------------------------------------------------

    def satisfaction_csv(self):
        lines = []
        n = self.grid.dims
        header = ",".join(f"x{i+1}" for i in range(n)) + ",q,value"
        lines.append(header)
        centers = self.grid.centers()
        for i in range(self.grid.n_cells):
            coords = ",".join(f"{c:.10g}" for c in centers[i])
            lines.append(f"{coords},{int(self.q_init[i])},{self.field[i]:.10g}")
        return "\n".join(lines) + "\n"

    def report(self, seed=None):
        rel = self.relation
        cfg = self.config
        delta = rel.delta
        report = {
            "version": __version__,
            "seed": seed,
            "formula": cfg["spec"]["formula"],
            "dfa_states": self.dfa.n_states,
            "grid": [int(c) for c in self.grid.counts],
            "n_abstract_states": int(self.grid.n_cells),
            "n_inputs": int(self.abs_model.n_inputs),
            "n_modes": int(len(np.unique(self.abs_model.mode_ids))),
            "epsilon": rel.epsilon,
            "epsilon_out": rel.epsilon_out,
            "delta_max": float(np.max(delta)),
            "delta_min": float(np.min(delta)),
            "lambda": rel.lam,
            "interface": rel.interface,
            "iterations": self.vf.iterations,
            "converged": self.vf.converged,
            "peak_satisfaction": float(self.field.max()),
            "initial_only": self.initial_only,
            "timings_s": {k: round(v, 4) for k, v in self.timings.items()},
            "peak_rss_mb": resource.getrusage(
                resource.RUSAGE_SELF).ru_maxrss / 1024.0,
        }
        if self.pair is not None:
            rel1 = rel.parts[0]
            report["mor"] = {
                "dimr": self.pair.dimr,
                "hankel": [float(h) for h in self.pair.hankel],
                "epsilon_r": rel1.epsilon_out,
                "delta_r": float(np.max(rel1.delta)),
            }
        if self.upper_vf is not None:
            upper_field, _ = initial_state_values(
                self.upper_vf, self.abs_model, self.dfa,
                self.synth_model.labeling)
            report["peak_satisfaction_upper"] = float(upper_field.max())
        x0s = _x0_list(cfg)
        if x0s:
            vals = []
            for x0 in x0s:
                vals.append(self.value_at_initial(np.asarray(x0, float)))
            report["initial_values"] = vals
            report["initial_states"] = [list(map(float, x)) for x in x0s]
        return report

    def value_at_initial(self, x0):
        """Robust value at a concrete (physical) initial state."""
        x = x0 - self.steady.x_ss if self.steady is not None else x0
        if self.pair is not None:
            from .mor import lift_initial_state
            D_r = self.relation.parts[0].D if self.relation.parts else None
            x = lift_initial_state(self.pair, x, D_r)
        v, _, _ = value_at(self.vf, self.abs_model, self.dfa,
                           self.synth_model.labeling, x)
        return float(v)


def _x0_list(cfg):
    sim = cfg.get("simulation", {})
    if "x0" not in sim:
        return []
    x0 = sim["x0"]
    if x0 and isinstance(x0[0], (list, tuple)):
        return [list(map(float, x)) for x in x0]
    return [list(map(float, x0))]


def _write_outputs(pipeline, out_dir, seed):
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.controller.save(out / "controller.npz")
    (out / "satisfaction.csv").write_text(pipeline.satisfaction_csv())
    report = pipeline.report(seed=seed)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    return report


def cmd_synthesize(args):
    config = load_config(args.config)
    pipeline = Pipeline(config, thold=args.thold, tol=args.tol,
                        upper=args.upper_bound,
                        initial_only=args.initial_only).run()
    report = _write_outputs(pipeline, args.out, args.seed)
    print(f"peak robust satisfaction: {report['peak_satisfaction']:.4f}")
    for key, val in report["timings_s"].items():
        print(f"  {key:<12} {val:8.3f} s")
    if "initial_values" in report:
        for x0, v in zip(report["initial_states"], report["initial_values"]):
            print(f"  V({', '.join(f'{c:g}' for c in x0)}) = {v:.4f}")
    return 0


def _simulate_runs(pipeline_or_model, controller, x0s, N, runs, seed, out):
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for i, x0 in enumerate(x0s):
        result = simulate(pipeline_or_model, controller, np.asarray(x0, float),
                          N=N, runs=runs, seed=seed + i)
        if runs > 0:
            (out / f"trajectories_{i}.csv").write_text(result.to_csv())
        lo, hi = result.wilson_interval() if runs > 0 else (0.0, 1.0)
        summary.append({
            "x0": list(map(float, x0)),
            "runs": runs,
            "empirical": result.satisfaction if runs else None,
            "wilson_low": lo, "wilson_high": hi,
            "breaches": result.breaches,
            "input_violations": result.input_violations,
        })
    return summary


def cmd_simulate(args):
    config = load_config(args.config)
    controller = Controller.load(args.controller)
    model = build_model(config)
    # Rollouts run on the deviation-coordinate model matching the artifact.
    work = model
    if not work.is_normalized():
        work, _ = normalize_disturbance(work)
    if controller.steady is not None:
        work, _ = steady_state_shift(work, controller.steady.y_ss)
    controller.labeling = work.labeling
    x0s = ([list(map(float, x.split(",")))
            for x in args.x0] if args.x0 else _x0_list(config))
    if not x0s:
        raise ConfigError("no initial state: pass --x0 or set [simulation] x0")
    sim_cfg = config.get("simulation", {})
    N = args.N if args.N is not None else int(sim_cfg.get("N", 50))
    runs = args.runs if args.runs is not None else int(sim_cfg.get("runs", 100))
    summary = _simulate_runs(work, controller, x0s, N, runs, args.seed,
                             args.out)
    robust = []
    for item in summary:
        x0 = np.asarray(item["x0"], float)
        if controller.value_field is not None:
            x = x0 - controller.steady.x_ss if controller.steady is not None \
                else x0
            if controller.mor is not None:
                x = controller._reduced_state(x)
            idx = controller.grid.index(x)
            item["robust_bound"] = (float(controller.value_field[idx])
                                    if idx >= 0 else 0.0)
        robust.append(item)
    out = pathlib.Path(args.out)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    for item in summary:
        emp = "n/a" if item["empirical"] is None else f"{item['empirical']:.4f}"
        bound = item.get("robust_bound")
        extra = f" (robust bound {bound:.4f})" if bound is not None else ""
        print(f"x0={item['x0']}: empirical {emp}{extra}")
    return 0


def cmd_bench(args):
    path = preset_path(args.preset)
    config = load_config(path)
    t0 = time.perf_counter()
    pipeline = Pipeline(config, thold=args.thold, tol=args.tol,
                        upper=args.upper_bound).run()
    report = _write_outputs(pipeline, args.out, args.seed)
    sim_cfg = config.get("simulation", {})
    x0s = _x0_list(config)
    sim_time = 0.0
    if x0s and args.runs != 0:
        runs = args.runs if args.runs is not None else int(
            sim_cfg.get("runs", 100))
        t1 = time.perf_counter()
        work = pipeline.work
        sim_model = work.source if hasattr(work, "source") and work.source \
            else work
        summary = _simulate_runs(sim_model, pipeline.controller, x0s,
                                 int(sim_cfg.get("N", 50)), runs, args.seed,
                                 args.out)
        sim_time = time.perf_counter() - t1
        report["simulation"] = summary
    report["total_s"] = round(time.perf_counter() - t0, 3)
    out = pathlib.Path(args.out)
    (out / "report.json").write_text(json.dumps(report, indent=2))

    order = [("translate", "(1) specification translation"),
             ("abstraction", "(2) finite-state abstraction"),
             ("similarity", "(3) similarity quantification"),
             ("synthesis", "(4) controller synthesis"),
             ("refinement", "(5) control refinement"),
             ("deployment", "(6) deployment")]
    pipeline.timings["deployment"] = sim_time
    total = sum(pipeline.timings.values())
    print(f"benchmark: {args.preset}")
    for key, label in order:
        t = pipeline.timings.get(key, 0.0)
        pct = 100.0 * t / total if total else 0.0
        print(f"  {label:<32} {t:9.3f} s ({pct:5.1f}%)")
    print(f"  {'total':<32} {total:9.3f} s")
    print(f"  peak memory: {report['peak_rss_mb']:.1f} MB")
    print(f"  peak robust satisfaction: {report['peak_satisfaction']:.4f}")
    if "simulation" in report:
        for item in report["simulation"]:
            print(f"  empirical at {item['x0']}: {item['empirical']}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stochsyn",
        description="Correct-by-construction controller synthesis for "
                    "stochastic systems")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None,
                        help="cap worker threads in the linear algebra backend")
    common.add_argument("--tol", type=float, default=None,
                        help="kernel truncation tolerance override")
    common.add_argument("--thold", type=float, default=None,
                        help="value-iteration convergence threshold override")
    common.add_argument("--upper-bound", action="store_true",
                        help="also compute the upper-bound value function")
    common.add_argument("--initial-only", action="store_true",
                        help="report values for the initial DFA state only")

    p_syn = sub.add_parser("synthesize", parents=[common],
                           help="run the full synthesis pipeline")
    p_syn.add_argument("--config", required=True)
    p_syn.set_defaults(func=cmd_synthesize)

    p_sim = sub.add_parser("simulate", parents=[common],
                           help="roll out a saved controller")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--controller", required=True)
    p_sim.add_argument("--x0", action="append",
                       help="initial state, comma separated (repeatable)")
    p_sim.add_argument("--N", type=int, default=None)
    p_sim.add_argument("--runs", type=int, default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_bench = sub.add_parser("bench", parents=[common],
                             help="run a named benchmark preset")
    p_bench.add_argument("preset", choices=sorted(PRESETS))
    p_bench.add_argument("--runs", type=int, default=None)
    p_bench.set_defaults(func=cmd_bench)
    return parser


def _cap_threads(n):
    if n is None:
        return
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n)
    except ImportError:
        pass


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _cap_threads(getattr(args, "threads", None))
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (Infeasible, NoCommonD, BudgetViolation) as err:
        print(f"infeasible relation: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NonConvergence as err:
        print(f"non-convergence: {err}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except VersionMismatch as err:
        print(f"artifact version mismatch: {err}", file=sys.stderr)
        return EXIT_VERSION


if __name__ == "__main__":
    sys.exit(main())
