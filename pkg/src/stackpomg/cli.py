"""Command-line entry point.

Every artifact-producing command writes into ``--out DIR`` together with a
``manifest.json`` that lists inputs with hashes, package versions, the seed
and hashes of the files written.  Runs are deterministic given the inputs
and seed, so reruns produce byte-identical directories.

Exit codes: 0 success, 1 usage, 2 validation, 3 convergence, 4 runtime.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .evaluator import evaluate_pair, fitness, fitness_csv, initial_weighting, pair_system, solve_g
from .finite_memory import approximate
from .follower import (BestResponseProblem, NotConverged, dumps_gamma, gamma_from_dict,
                       initial_value, value_at, value_iteration)
from .history import enumerate_windows, initial_follower_belief
from .model import (LEADER, ModelParseError, ModelValidationError, dumps_model, load_model,
                    validate_factorization)
from .moga import (CUBOID, DETERMINISTIC, MEAN_EUCLIDEAN, STOCHASTIC, Encoding, FitnessCache,
                   MogaParams, pareto_set, run_moga)
from .policy import PolicyError, dumps_policy, load_policy
from .scenario import (build_model, decision_support_table,
                       default_params, dumps_params, enumerate_deterministic, load_params)
from .voi import Garbling, baseline, compare_information, random_garbling, voi_csv

log = logging.getLogger("stackpomg")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_RUNTIME = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for
    validation failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- output directory and manifest -----------------------------------------------

def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version(), "kernel_backend": kernels.BACKEND,
           "stackpomg": __version__}
    for pkg in ("numpy", "scipy", "highspy"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


class Output:
    """Collects artifacts for one command and writes the manifest last."""

    def __init__(self, out: str | None, command: str, args: argparse.Namespace):
        self.dir = Path(out) if out else None
        self.command = command
        self.args = args
        self.files: dict[str, str] = {}
        self.inputs: dict[str, str] = {}
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def input(self, path) -> None:
        if path is not None:
            self.inputs[str(path)] = _sha256(Path(path).read_bytes())

    def write(self, name: str, text: str) -> None:
        data = text.encode()
        self.files[name] = _sha256(data)
        if self.dir is not None:
            target = self.dir / name
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)

    def finish(self, seed=None) -> None:
        if self.dir is None:
            return
        params = {k: v for k, v in sorted(vars(self.args).items())
                  if k not in ("func", "out") and not callable(v)}
        doc = {"command": self.command, "parameters": params, "seed": seed,
               "inputs": self.inputs, "outputs": dict(sorted(self.files.items())),
               "versions": _versions()}
        (self.dir / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True,
                                                           default=str) + "\n")


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


# -- shared loaders --------------------------------------------------------------

def _model(args, out: Output):
    out.input(args.model)
    return load_model(args.model)


def _leader_policy(args, model, out: Output):
    if args.leader_policy is not None and args.leader_index is not None:
        raise UsageError("give either --leader-policy or --leader-index, not both")
    if args.leader_policy is not None:
        out.input(args.leader_policy)
        pol = load_policy(args.leader_policy, model)
        if pol.agent != LEADER:
            raise PolicyError("--leader-policy must be a leader policy file")
        return pol
    if args.leader_index is not None:
        pols = enumerate_deterministic(model)
        if not 0 <= args.leader_index < len(pols):
            raise UsageError(f"--leader-index must be in [0, {len(pols) - 1}]")
        return pols[args.leader_index]
    raise UsageError("a leader policy is required (--leader-policy or --leader-index)")


def _positive(name):
    def parse(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{name} must be positive")
        return v
    return parse


def _count(name, minimum=0):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer") from None
        if v < minimum:
            raise argparse.ArgumentTypeError(f"{name} must be at least {minimum}")
        return v
    return parse


def _probability(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("probability must be a number") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("probability must lie in [0, 1]")
    return v


# -- commands --------------------------------------------------------------------

def cmd_validate(args) -> int:
    out = Output(args.out, "validate", args)
    model = _model(args, out)
    fo = validate_factorization(model)
    report = {
        "valid": True,
        "shape": dict(zip(("s_l", "s_f", "a_l", "a_f", "z_l", "z_f"), model.shape)),
        "beta": model.beta,
        "tau": model.tau,
        "criteria": model.n_criteria,
        "factorized": fo is not None,
        "leader_windows": len(enumerate_windows(model, LEADER)),
        "follower_windows": len(enumerate_windows(model, "follower")),
    }
    text = _dumps(report)
    out.write("validation.json", text)
    out.finish()
    print(text, end="")
    return EXIT_OK


def _solve(args, model, pol):
    pb = BestResponseProblem(model, pol)
    gamma, report = value_iteration(model, pol, epsilon=args.epsilon, max_iter=args.max_iter,
                                    threads=args.threads, problem=pb)
    return pb, gamma, report


def cmd_solve_follower(args) -> int:
    out = Output(args.out, "solve-follower", args)
    model = _model(args, out)
    pol = _leader_policy(args, model, out)
    pb, gamma, report = _solve(args, model, pol)
    space = pol.space
    out.write("gamma.json", dumps_gamma(gamma, model, space))
    out.write("solve_report.csv", report.to_csv())
    probes = {}
    for s, name in enumerate(model.follower_states):
        probes[name] = {"uniform": value_at(gamma, s, np.full(len(space), 1.0 / len(space)))}
    summary = {"initial_value": initial_value(model, gamma, space), "iterations": report.iterations,
               "residual": report.final_residual, "threshold": report.threshold,
               "gamma_counts": gamma.counts(), "probe_values": probes}
    out.write("summary.json", _dumps(summary))
    out.finish()
    print(f"follower value {summary['initial_value']:.6f} after {report.iterations} "
          f"iterations (residual {report.final_residual:.3e})")
    return EXIT_OK


def cmd_approx_finite(args) -> int:
    out = Output(args.out, "approx-finite", args)
    model = _model(args, out)
    pol = _leader_policy(args, model, out)
    if args.gamma is not None:
        out.input(args.gamma)
        gamma = gamma_from_dict(json.loads(Path(args.gamma).read_text()), model)
        approx = approximate(model, pol, gamma)
    else:
        pb, gamma, _ = _solve(args, model, pol)
        approx = approximate(model, pol, gamma, problem=pb)
    out.write("follower_policy.json", dumps_policy(approx.policy, model))
    unreachable = [approx.policy.space.names[i] for i in approx.unreachable]
    out.write("unreachable_windows.json", _dumps(unreachable))
    out.finish()
    print(f"follower policy over {len(approx.policy.space)} windows "
          f"({len(unreachable)} unreachable)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out = Output(args.out, "evaluate", args)
    model = _model(args, out)
    pol = _leader_policy(args, model, out)
    if args.follower_policy is not None:
        out.input(args.follower_policy)
        fpol = load_policy(args.follower_policy, model)
        if fpol.agent != "follower":
            raise PolicyError("--follower-policy must be a follower policy file")
        lv, fv, res = evaluate_pair(model, pol, fpol)
        rows = [("leader", lv, fv, max(res))]
    else:
        fit, fpol = fitness(model, pol, epsilon=args.epsilon, max_iter=args.max_iter,
                            threads=args.threads)
        out.write("fitness.csv", fitness_csv([("leader", fit)]))
        out.write("follower_policy.json", dumps_policy(fpol, model))
        rows = [("leader", fit.values, fit.follower_value, max(fit.residuals))]
    system = pair_system(model, pol, fpol)
    mu = initial_weighting(model, pol.space, fpol.space)
    for c in list(range(model.n_criteria)) + ["follower"]:
        g = solve_g(model, pol, fpol, c, system=system)
        name = model.criteria[c] if c != "follower" else "follower"
        out.write(f"g_{name}.csv", _g_csv(g.values, pol.space, fpol.space))
    out.write("initial_weighting.csv", _g_csv(mu, pol.space, fpol.space))
    _, lv, fv, res = rows[0]
    out.write("values.json", _dumps({"criteria": dict(zip(model.criteria, map(float, lv))),
                                     "follower_value": float(fv), "max_residual": float(res)}))
    out.finish()
    for name, v in zip(model.criteria, lv):
        print(f"{name}: {v:.6f}")
    print(f"follower: {fv:.6f}")
    return EXIT_OK


def _g_csv(values, ls, fs) -> str:
    lines = ["leader_window,follower_window,value"]
    for i, j in np.ndindex(values.shape):
        lines.append(f"\"{ls.names[i]}\",\"{fs.names[j]}\",{float(values[i, j])!r}")
    return "\n".join(lines) + "\n"


def _exhaustive(model, epsilon, threads):
    enc = Encoding(model, DETERMINISTIC)
    cache = FitnessCache(model, enc, epsilon)
    pols = enumerate_deterministic(model)
    fits = cache.evaluate_all([enc.genes_of(p) for p in pols], threads)
    return pols, fits, cache


def _table_outputs(out: Output, model, front) -> None:
    table = decision_support_table(front)
    out.write("decision_table.txt", table.render())
    out.write("decision_table.csv", table.to_csv())
    for label, pol in zip(table.labels, table.policies):
        out.write(f"front/{label}.json", dumps_policy(pol, model))
    print(table.render(), end="")


def cmd_enumerate(args) -> int:
    out = Output(args.out, "enumerate", args)
    model = _model(args, out)
    pols, fits, _ = _exhaustive(model, args.epsilon, args.threads)
    out.write("fitness.csv", fitness_csv([(f"policy_{i}", f) for i, f in enumerate(fits)]))
    pareto = pareto_set([f.values for f in fits])
    out.write("pareto.json", _dumps([int(i) for i in pareto]))
    if model.n_criteria == 2:
        _table_outputs(out, model, [(pols[i], fits[i]) for i in pareto])
    out.finish()
    print(f"{len(pols)} policies, {len(pareto)} non-dominated")
    return EXIT_OK


def cmd_moga(args) -> int:
    out = Output(args.out, "moga", args)
    model = _model(args, out)
    if args.exhaustive:
        pols, fits, _ = _exhaustive(model, args.epsilon, args.threads)
        front = [(pols[i], fits[i]) for i in pareto_set([f.values for f in fits])]
    else:
        params = MogaParams(M=args.population, generations=args.generations, p_c=args.p_c,
                            p_m=args.p_m, seed=args.seed, mode=args.mode,
                            crowding=args.crowding, epsilon=args.epsilon, threads=args.threads)
        bad = params.violations()
        if bad:
            raise UsageError("; ".join(bad))
        checkpoint = Path(args.out) / "checkpoint.json" if args.out else None
        if args.resume and checkpoint is None:
            raise UsageError("--resume needs --out (the checkpoint lives there)")
        result = run_moga(model, params, checkpoint=checkpoint, resume=args.resume)
        out.write("generations.csv", result.log_csv)
        pols = result.policies()
        front = list(zip(pols, [f for _, f in result.front]))
        out.write("front_fitness.csv",
                  fitness_csv([(c.digest(), f) for c, f in result.front]))
    if model.n_criteria == 2:
        _table_outputs(out, model, front)
    else:
        for k, (pol, _) in enumerate(front):
            out.write(f"front/pi_{k + 1}.json", dumps_policy(pol, model))
    out.finish(seed=args.seed)
    return EXIT_OK


def _garblings(args, model, rng):
    nz = model.shape[5]
    if args.garbling == "identity":
        return [("identity", Garbling.identity(model))]
    if args.garbling == "uninformative":
        return [("uninformative", Garbling.uniform(model, np.full((nz, nz), 1.0 / nz)))]
    if args.garbling == "file":
        if args.garbling_file is None:
            raise UsageError("--garbling file needs --garbling-file")
        doc = json.loads(Path(args.garbling_file).read_text())
        out = []
        for k, R in enumerate(doc):
            R = np.asarray(R, dtype=float)
            out.append((f"file_{k}", Garbling.uniform(model, R) if R.ndim == 2 else Garbling(R)))
        return out
    seeds = rng.integers(2**63, size=args.count)
    return [(f"random_{k}", random_garbling(model, int(s), args.concentration))
            for k, s in enumerate(seeds)]


def cmd_voi(args) -> int:
    out = Output(args.out, "voi", args)
    model = _model(args, out)
    if validate_factorization(model) is None:
        raise ModelValidationError(["observation kernel does not factor into independent "
                                    "leader and follower channels"])
    pol = _leader_policy(args, model, out)
    if args.garbling_file is not None:
        out.input(args.garbling_file)
    rng = np.random.default_rng(args.seed)
    jobs = _garblings(args, model, rng)
    ref = baseline(model, pol, args.epsilon, args.max_iter)
    results = []
    for gid, R in jobs:
        results.append((gid, compare_information(model, R, pol, args.epsilon, args.max_iter,
                                                 reference=ref)))
        log.info("garbling %s done", gid)
    out.write("voi.csv", voi_csv(results))
    out.finish(seed=args.seed)
    bad = [gid for gid, r in results if not r.ordering_ok]
    print(f"{len(results)} garblings, ordering violated for {len(bad)}")
    return EXIT_OK


def cmd_scenario_build(args) -> int:
    out = Output(args.out, "scenario-build", args)
    if args.params is not None:
        out.input(args.params)
        params = load_params(args.params)
    else:
        params = default_params()
    model = build_model(params)
    out.write("params.json", dumps_params(params))
    out.write("model.json", dumps_model(model))
    out.finish()
    n = len(enumerate_windows(model, LEADER))
    print(f"scenario model with {n} leader windows and "
          f"{len(model.leader_actions) ** n} deterministic leader policies")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stackpomg", description="Leader policy search for two-agent POMGs.",
                allow_abbrev=False)
    p.add_argument("--threads", type=_count("--threads", 1), default=1,
                   help="maximum worker threads for library calls")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    def command(name, func, help_text, model=True, out=True):
        sp = sub.add_parser(name, help=help_text, allow_abbrev=False)
        sp.set_defaults(func=func)
        if model:
            sp.add_argument("--model", required=True, help="model file (JSON)")
        if out:
            sp.add_argument("--out", help="output directory for artifacts and manifest")
        return sp

    def leader(sp):
        sp.add_argument("--leader-policy", help="leader policy file")
        sp.add_argument("--leader-index", type=_count("--leader-index"),
                        help="index into the enumerated deterministic leader policies")

    def solver(sp, epsilon=1e-4):
        sp.add_argument("--epsilon", type=_positive("--epsilon"), default=epsilon)
        sp.add_argument("--max-iter", type=_count("--max-iter", 1), default=1000)

    command("validate", cmd_validate, "check a model file")

    sp = command("solve-follower", cmd_solve_follower, "follower best response by value iteration")
    leader(sp)
    solver(sp)

    sp = command("approx-finite", cmd_approx_finite, "finite-memory follower policy")
    leader(sp)
    solver(sp)
    sp.add_argument("--gamma", help="gamma-set file from solve-follower (otherwise solved here)")

    sp = command("evaluate", cmd_evaluate, "value determination for a policy pair")
    leader(sp)
    solver(sp)
    sp.add_argument("--follower-policy",
                    help="follower policy file (default: approximate best response)")

    sp = command("moga", cmd_moga, "multi-objective genetic search over leader policies")
    sp.add_argument("--seed", type=_count("--seed"), required=True)
    sp.add_argument("--population", type=_count("--population", 2), default=16)
    sp.add_argument("--generations", type=_count("--generations"), default=5)
    sp.add_argument("--p-c", type=_probability, default=0.9)
    sp.add_argument("--p-m", type=_probability, default=None)
    sp.add_argument("--mode", choices=[DETERMINISTIC, STOCHASTIC], default=DETERMINISTIC)
    sp.add_argument("--crowding", choices=[CUBOID, MEAN_EUCLIDEAN], default=CUBOID)
    sp.add_argument("--epsilon", type=_positive("--epsilon"), default=1e-4)
    sp.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    sp.add_argument("--exhaustive", action="store_true",
                    help="evaluate every deterministic policy instead of searching")

    sp = command("enumerate", cmd_enumerate, "fitness of every deterministic leader policy")
    sp.add_argument("--epsilon", type=_positive("--epsilon"), default=1e-4)

    sp = command("voi", cmd_voi, "value of information under garbled follower observations")
    leader(sp)
    solver(sp, epsilon=1e-2)
    sp.add_argument("--seed", type=_count("--seed"), required=True)
    sp.add_argument("--garbling", choices=["random", "identity", "uninformative", "file"],
                    default="random")
    sp.add_argument("--count", type=_count("--count", 1), default=10,
                    help="number of random garblings")
    sp.add_argument("--concentration", type=_positive("--concentration"), default=1.0)
    sp.add_argument("--garbling-file",
                    help="JSON list of matrices [z][z'] or arrays [a_l][a_f][z][z']")

    sp = command("scenario-build", cmd_scenario_build, "build the desk scenario model", model=False)
    sp.add_argument("--params", help="scenario parameter file (default: shipped desk values)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"stackpomg: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelParseError, ModelValidationError, PolicyError) as exc:
        print(f"stackpomg: validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NotConverged as exc:
        print(f"stackpomg: not converged: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except FileNotFoundError as exc:
        print(f"stackpomg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - everything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"stackpomg: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
