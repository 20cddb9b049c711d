"""``ccucp`` command line: sampling, exact solves, p sweeps, QUBO compilation,
annealing and penalty tuning.

Exit codes: 0 success, 2 bad input, 3 infeasible, 4 solver limit exceeded.
Every run writes a manifest next to its output.  The manifest hash covers the
command, configuration, seeds, tool version and input file hashes, but not
wall time, so outputs from identical invocations are byte-identical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .instance import (GaussianDemand, builtin_deterministic_instance,
                       builtin_stochastic_instance, correlation_regime, load_instance, validate)
from .model import check_feasible
from .reference import (EXACT_LIMIT, ExactLimitError, InfeasibleError, solve_deterministic,
                        solve_stochastic_exact, solve_stochastic_greedy)
from .sampler import load_scenarios, sample, save_scenarios

log = logging.getLogger("ccucp")

EXIT_INPUT, EXIT_INFEASIBLE, EXIT_LIMIT = 2, 3, 4


class InputError(ValueError):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    version: str = __version__
    input_hashes: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0

    def digest(self) -> str:
        doc = asdict(self)
        doc.pop("wall_time")
        doc.pop("outputs")
        blob = json.dumps(doc, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def write(self, path) -> None:
        doc = asdict(self)
        doc["hash"] = self.digest()
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _env_seed() -> int:
    raw = os.environ.get("CCUCP_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"CCUCP_SEED must be an integer, got {raw!r}") from None


def _float_list(text: str, what: str) -> list[float]:
    items = [s for s in text.replace(" ", "").split(",") if s]
    try:
        return [float(s) for s in items]
    except ValueError:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str, what: str) -> list[int]:
    items = [s for s in text.replace(" ", "").split(",") if s]
    try:
        return [int(s) for s in items]
    except ValueError:
        raise InputError(f"{what}: expected comma-separated integers, got {text!r}") from None


def _p_level(value) -> float:
    if value is None:
        raise InputError("--p-level is required with scenarios")
    if not 0 < value <= 1:
        raise InputError(f"--p-level must lie in (0, 1], got {value}")
    return value


def _with_regime(instance, regime):
    if regime is None:
        return instance
    corr = correlation_regime(regime)
    if not instance.is_stochastic:
        raise InputError("--regime needs a stochastic instance")
    if instance.T != corr.shape[0]:
        raise InputError(f"named regimes are {corr.shape[0]}-period; instance has T={instance.T}")
    d = instance.demand
    return instance.with_demand(GaussianDemand(d.mu, d.sigma, corr, regime=regime))


def _resolve_instance(args, default: str, inputs: dict):
    if getattr(args, "instance", None):
        inputs["instance"] = file_hash(args.instance)
        instance = load_instance(args.instance)
        source = str(args.instance)
    else:
        name = getattr(args, "builtin", None) or default
        if name == "deterministic":
            instance = builtin_deterministic_instance()
        elif name == "stochastic":
            instance = builtin_stochastic_instance()
        else:
            raise InputError(f"unknown built-in instance {name!r}; use deterministic or stochastic")
        source = f"builtin:{name}"
    problems = validate(instance)
    if problems:
        raise InputError("invalid instance: " + "; ".join(problems))
    return instance, source


def _resolve_scenarios(args, instance, inputs: dict):
    if getattr(args, "scenarios", None):
        inputs["scenarios"] = file_hash(args.scenarios)
        sc = load_scenarios(args.scenarios)
        if sc.T != instance.T:
            raise InputError(f"scenario file has {sc.T} periods, instance has {instance.T}")
        return sc
    n = getattr(args, "n", None)
    if n is not None and instance.is_stochastic:
        if n < 1:
            raise InputError("--n must be at least 1")
        return sample(instance, n, args.seed)
    return None


def _weights(args, inputs: dict):
    from .qubo import TABLE3_WEIGHTS, PenaltyWeights
    from .tuner import load_weights

    if getattr(args, "weights_file", None):
        inputs["weights"] = file_hash(args.weights_file)
        return load_weights(args.weights_file), str(args.weights_file)
    if getattr(args, "table3_weights", False):
        return TABLE3_WEIGHTS, "table3"
    return PenaltyWeights(), "uniform"


def _stamp_text(path: Path, digest: str, body: str) -> None:
    path.write_text(f"# manifest {digest}\n" + body)


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _gnuplot(path: Path, script: str, enabled: bool) -> list:
    if not enabled:
        return []
    gp = path.with_suffix(".gp")
    gp.write_text(script)
    return [str(gp)]


# commands

def cmd_sample(args) -> int:
    inputs: dict = {}
    instance, source = _resolve_instance(args, "stochastic", inputs)
    if not instance.is_stochastic:
        raise InputError("sampling needs an instance with Gaussian demand")
    instance = _with_regime(instance, args.regime)
    if args.n < 1:
        raise InputError("--n must be at least 1")
    man = RunManifest("sample", {"instance": source, "n": args.n, "regime": instance.demand.regime},
                      {"seed": args.seed}, input_hashes=inputs)
    t0 = time.perf_counter()
    sc = sample(instance, args.n, args.seed)
    out = Path(args.out)
    save_scenarios(sc, out, extra={"manifest": man.digest()})
    man.outputs = [str(out), str(out.with_suffix(".json"))]
    man.wall_time = time.perf_counter() - t0
    man.write(_manifest_path(out))
    print(f"wrote {sc.n} scenarios x {sc.T} periods to {out}")
    return 0


def _solve_one(instance, scenarios, p_level, method, exact_limit):
    if scenarios is None:
        if instance.is_stochastic:
            raise InputError("stochastic instance needs --scenarios (or --n to sample)")
        return solve_deterministic(instance)
    if method == "exact":
        return solve_stochastic_exact(instance, scenarios, p_level, exact_limit=exact_limit)
    return solve_stochastic_greedy(instance, scenarios, p_level)


def cmd_solve(args) -> int:
    inputs: dict = {}
    instance, source = _resolve_instance(args, "deterministic", inputs)
    scenarios = _resolve_scenarios(args, instance, inputs)
    p_level = _p_level(args.p_level) if scenarios is not None else None
    method = "greedy" if args.greedy else "exact"
    man = RunManifest("solve", {"instance": source, "method": method, "p_level": p_level,
                                "n": None if scenarios is None else scenarios.n,
                                "exact_limit": args.exact_limit},
                      {"seed": args.seed}, input_hashes=inputs)
    t0 = time.perf_counter()
    sol = _solve_one(instance, scenarios, p_level, method, args.exact_limit)
    report = check_feasible(instance, sol, scenarios, p_level)
    print(f"objective {sol.objective:.6f}  feasible {report.joint}")
    if args.out:
        out = Path(args.out)
        doc = sol.to_dict()
        doc["feasibility"] = report.to_dict()
        doc["manifest"] = man.digest()
        out.write_text(json.dumps(doc, indent=2) + "\n")
        man.outputs = [str(out)]
        man.wall_time = time.perf_counter() - t0
        man.write(_manifest_path(out))
    return 0


def cmd_sweep_p(args) -> int:
    grid = _float_list(args.p_grid, "--p-grid")
    if not grid:
        raise InputError("--p-grid is empty")
    for p in grid:
        _p_level(p)
    seeds = _int_list(args.seeds, "--seeds") if args.seeds else [args.seed]
    regimes = [r for r in args.regimes.split(",") if r]
    if not regimes or not seeds:
        raise InputError("need at least one regime and one seed")
    inputs: dict = {}
    base, source = _resolve_instance(args, "stochastic", inputs)
    instances = {r: _with_regime(base, r) for r in regimes}
    method = "exact" if args.exact else "greedy"
    man = RunManifest("sweep-p", {"instance": source, "p_grid": grid, "n": args.n,
                                  "regimes": regimes, "method": method},
                      {"seeds": seeds}, input_hashes=inputs)
    t0 = time.perf_counter()
    lines = ["regime,p,seed,cost"]
    for r in regimes:
        for s in seeds:
            sc = sample(instances[r], args.n, s)
            for p in grid:
                try:
                    cost = _solve_one(instances[r], sc, p, method, args.exact_limit).objective
                except InfeasibleError:
                    cost = math.inf
                lines.append(f"{r},{p!r},{s},{cost!r}")
                log.info("regime=%s seed=%d p=%g cost=%.4f", r, s, p, cost)
    out = Path(args.out)
    _stamp_text(out, man.digest(), "\n".join(lines) + "\n")
    man.outputs = [str(out)] + _gnuplot(out, _SWEEP_GP.format(csv=out.name), args.gnuplot)
    man.wall_time = time.perf_counter() - t0
    man.write(_manifest_path(out))
    print(f"wrote {len(lines) - 1} rows to {out}")
    return 0


_REFERENCE_SHAPES = {(291, None): "deterministic", (809, (10, 0.9)): "stochastic_N10_p0.9"}


def _reference_key(instance, scenarios, p_level, num_vars):
    builtin = builtin_deterministic_instance()
    if instance.generators != builtin.generators or instance.initial != builtin.initial:
        return None
    shape = None if scenarios is None else (scenarios.n, p_level)
    return _REFERENCE_SHAPES.get((num_vars, shape))


def cmd_compile(args) -> int:
    from .qubo import REFERENCE_COUPLINGS, compile_qubo, export_qubo, graph_stats

    inputs: dict = {}
    instance, source = _resolve_instance(args, "deterministic", inputs)
    scenarios = _resolve_scenarios(args, instance, inputs)
    if instance.is_stochastic and scenarios is None:
        raise InputError("stochastic instance needs --scenarios or --n")
    p_level = _p_level(args.p_level) if scenarios is not None else None
    weights, wsource = _weights(args, inputs)
    man = RunManifest("compile", {"instance": source, "weights": wsource,
                                  "weight_values": weights.as_dict(), "p_level": p_level,
                                  "n": None if scenarios is None else scenarios.n},
                      {"seed": args.seed}, input_hashes=inputs)
    t0 = time.perf_counter()
    model = compile_qubo(instance, weights, scenarios, p_level)
    out = Path(args.out)
    export_qubo(model, out)
    body = out.read_text()
    _stamp_text(out, man.digest(), body)
    man.outputs = [str(out)]
    stats = graph_stats(model)
    key = _reference_key(instance, scenarios, p_level, model.num_vars)
    if key is not None:
        ref = REFERENCE_COUPLINGS[key]
        stats["reference_couplings"] = ref
        stats["coupling_deviation_pct"] = 100.0 * (model.num_couplings - ref) / ref
    stats["counting_convention"] = ("every squared penalty expanded in full; terms from all "
                                    "groups merged per variable pair; zero sums dropped")
    stats["manifest"] = man.digest()
    print(f"num_vars {stats['num_vars']}  couplings {stats['num_couplings']}")
    if args.stats:
        Path(args.stats).write_text(json.dumps(stats, indent=2) + "\n")
        man.outputs.append(str(args.stats))
    man.wall_time = time.perf_counter() - t0
    man.write(_manifest_path(out))
    return 0


def cmd_anneal(args) -> int:
    from .annealer import AnnealConfig, anneal, best_feasible, default_schedule
    from .encoding import build_layout
    from .qubo import import_qubo

    inputs = {"qubo": file_hash(args.qubo)}
    model = import_qubo(args.qubo)
    if (args.beta_start is None) != (args.beta_end is None):
        raise InputError("give both --beta-start and --beta-end, or neither")
    if args.beta_start is None:
        cfg = default_schedule(model, args.reads, args.seed, args.sweeps)
    else:
        cfg = AnnealConfig(args.reads, args.sweeps, args.beta_start, args.beta_end, args.seed)
    decode = args.instance is not None or args.builtin is not None
    config = asdict(cfg)
    if decode:
        instance, source = _resolve_instance(args, "deterministic", inputs)
        scenarios = _resolve_scenarios(args, instance, inputs)
        p_level = _p_level(args.p_level) if scenarios is not None else None
        layout = build_layout(instance, scenarios, p_level)
        if layout.num_vars != model.num_vars:
            raise InputError(f"QUBO has {model.num_vars} variables but the instance layout "
                             f"has {layout.num_vars}")
        config.update(instance=source, p_level=p_level)
    man = RunManifest("anneal", config, {"seed": args.seed}, input_hashes=inputs)
    digest = man.digest()
    t0 = time.perf_counter()
    ss = anneal(model, cfg)
    out = Path(args.out)
    with out.open("w") as fh:
        fh.write(f"# manifest {digest}\n")
        for rec in ss.records():
            fh.write(json.dumps(rec) + "\n")
    man.outputs = [str(out)]
    print(f"{len(ss)} reads  min energy {ss.energies.min():.6f}")
    if decode:
        summary = best_feasible(ss, instance, scenarios, p_level, layout)
        hist = Path(args.histogram) if args.histogram else out.with_suffix(".hist.csv")
        body = "cost,feasible\n" + "".join(
            f"{c!r},{int(f)}\n" for c, f in zip(summary.costs, summary.feasible))
        _stamp_text(hist, digest, body)
        man.outputs.append(str(hist))
        man.outputs += _gnuplot(hist, _HIST_GP.format(csv=hist.name), args.gnuplot)
        best = "none" if summary.best_cost is None else f"{summary.best_cost:.6f}"
        print(f"best feasible cost {best}  feasible fraction {summary.feasible_fraction:.4f}")
    man.wall_time = time.perf_counter() - t0
    man.write(_manifest_path(out))
    return 0


_TUNE_KEYS = {"amplitude", "kappa", "r0", "max_iters", "reads_per_iter", "sweeps", "seed",
              "beta_range", "instance", "builtin", "scenarios", "n", "p_level", "initial_weights"}


def cmd_tune(args) -> int:
    from .qubo import PenaltyWeights
    from .tuner import TunerConfig, save_weights, tune

    inputs: dict = {}
    conf: dict = {}
    if args.config:
        inputs["config"] = file_hash(args.config)
        conf = json.loads(Path(args.config).read_text())
        unknown = set(conf) - _TUNE_KEYS
        if unknown:
            raise InputError(f"unknown tuner config keys: {', '.join(sorted(unknown))}")
    for key in ("max_iters", "reads_per_iter", "sweeps"):
        if getattr(args, key) is not None:
            conf[key] = getattr(args, key)
    conf.setdefault("seed", args.seed)
    ns = argparse.Namespace(instance=conf.get("instance"), builtin=conf.get("builtin"),
                            scenarios=conf.get("scenarios"), n=conf.get("n"), seed=conf["seed"])
    instance, source = _resolve_instance(ns, "deterministic", inputs)
    scenarios = _resolve_scenarios(ns, instance, inputs)
    if instance.is_stochastic and scenarios is None:
        raise InputError("stochastic tuning needs 'scenarios' or 'n' in the config")
    p_level = _p_level(conf.get("p_level")) if scenarios is not None else None
    tcfg = TunerConfig(**{k: (tuple(v) if k == "beta_range" and v is not None else v)
                          for k, v in conf.items()
                          if k in {"amplitude", "kappa", "r0", "max_iters", "reads_per_iter",
                                   "sweeps", "seed", "beta_range"}})
    w0 = PenaltyWeights.from_dict(conf["initial_weights"]) if "initial_weights" in conf \
        else PenaltyWeights()
    man = RunManifest("tune", {"instance": source, "tuner": asdict(tcfg),
                               "initial_weights": w0.as_dict(), "p_level": p_level},
                      {"seed": tcfg.seed}, input_hashes=inputs)
    digest = man.digest()
    t0 = time.perf_counter()
    weights, trace = tune(instance, w0, tcfg, scenarios, p_level)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    tpath, wpath = outdir / "trace.csv", outdir / "weights.json"
    trace.save_csv(tpath)
    _stamp_text(tpath, digest, tpath.read_text())
    save_weights(weights, wpath)
    doc = json.loads(wpath.read_text())
    wpath.write_text(json.dumps({**doc, "manifest": digest}, indent=2) + "\n")
    man.outputs = [str(tpath), str(wpath)]
    man.outputs += _gnuplot(tpath, _TRACE_GP.format(csv=tpath.name, n=len(weights.as_dict())),
                            args.gnuplot)
    man.wall_time = time.perf_counter() - t0
    man.write(outdir / "manifest.json")
    last = trace.records[-1]
    print(f"{len(trace)} iterations ({trace.stop_reason}); final R_J {last.joint:.4f}")
    return 0


_SWEEP_GP = """set datafile separator ','
set xlabel 'reliability level p'
set ylabel 'cost ($)'
set key left top
plot for [r in "none moderate strong"] '< grep "^'.r.'," {csv}' using 2:4 with points title r
"""

_HIST_GP = """set datafile separator ','
set xlabel 'decoded cost ($)'
set ylabel 'reads'
binwidth = 5
bin(x) = binwidth * floor(x / binwidth)
set style fill solid 0.5
plot '{csv}' every ::1 using (bin($1)):($2 == 1 ? 1 : 0) smooth freq with boxes title 'feasible', \\
     '{csv}' every ::1 using (bin($1)):($2 == 0 ? 1 : 0) smooth freq with boxes title 'infeasible'
"""

_TRACE_GP = """set datafile separator ','
set key autotitle columnhead
set multiplot layout 2,1
set logscale y
set ylabel 'penalty factor'
plot for [c=2:{n}+1] '{csv}' using 1:c with lines
unset logscale y
set ylabel 'feasibility ratio'
plot for [c={n}+2:2*{n}+2] '{csv}' using 1:c with lines
unset multiplot
"""


def _add_instance_args(p, scenarios: bool = True) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--instance", type=Path, help="instance JSON file")
    src.add_argument("--builtin", help="built-in instance: deterministic or stochastic")
    if scenarios:
        p.add_argument("--scenarios", type=Path, help="scenario CSV")
        p.add_argument("--n", type=int, help="sample this many scenarios instead of --scenarios")
        p.add_argument("--p-level", type=float, help="reliability level p in (0, 1]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccucp", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"ccucp {__version__}")
    parser.add_argument("--threads", type=int, help="cap on worker threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def seed_arg(p):
        p.add_argument("--seed", type=int, default=None, help="default: $CCUCP_SEED or 0")

    p = sub.add_parser("sample", help="draw demand scenarios")
    _add_instance_args(p, scenarios=False)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--regime", help="none, moderate or strong")
    p.add_argument("--out", type=Path, required=True)
    seed_arg(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("solve", help="reference solve (exact or greedy)")
    _add_instance_args(p)
    how = p.add_mutually_exclusive_group()
    how.add_argument("--exact", action="store_true")
    how.add_argument("--greedy", action="store_true")
    p.add_argument("--exact-limit", type=int, default=EXACT_LIMIT)
    p.add_argument("--out", type=Path)
    seed_arg(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep-p", help="cost versus reliability level")
    _add_instance_args(p, scenarios=False)
    p.add_argument("--p-grid", required=True, help="comma-separated p values")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seeds", help="comma-separated sampling seeds")
    p.add_argument("--regimes", default="none,moderate,strong")
    how = p.add_mutually_exclusive_group()
    how.add_argument("--exact", action="store_true")
    how.add_argument("--greedy", action="store_true")
    p.add_argument("--exact-limit", type=int, default=EXACT_LIMIT)
    p.add_argument("--out", type=Path, required=True)
    seed_arg(p)
    p.add_argument("--gnuplot", action="store_true", help="emit a companion .gp script")
    p.set_defaults(func=cmd_sweep_p)

    p = sub.add_parser("compile", help="build the QUBO")
    _add_instance_args(p)
    w = p.add_mutually_exclusive_group()
    w.add_argument("--weights-file", type=Path)
    w.add_argument("--default-weights", action="store_true", help="all penalty factors 1")
    w.add_argument("--table3-weights", action="store_true", help="published tuned factors")
    p.add_argument("--stats", type=Path, help="write graph statistics JSON here")
    p.add_argument("--out", type=Path, required=True)
    seed_arg(p)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("anneal", help="simulated annealing on a QUBO file")
    p.add_argument("--qubo", type=Path, required=True)
    p.add_argument("--reads", type=int, default=100)
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--beta-start", type=float)
    p.add_argument("--beta-end", type=float)
    _add_instance_args(p)
    p.add_argument("--histogram", type=Path, help="cost histogram CSV (needs an instance)")
    p.add_argument("--out", type=Path, required=True)
    seed_arg(p)
    p.add_argument("--gnuplot", action="store_true", help="emit a companion .gp script")
    p.set_defaults(func=cmd_anneal)

    p = sub.add_parser("tune", help="adaptive penalty-factor tuning")
    p.add_argument("--config", type=Path, help="tuner config JSON")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--reads-per-iter", type=int)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    seed_arg(p)
    p.add_argument("--gnuplot", action="store_true", help="emit a companion .gp script")
    p.set_defaults(func=cmd_tune)
    return parser


def _set_threads(n) -> None:
    if n is None:
        return
    if n < 1:
        raise InputError("--threads must be at least 1")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "seed", None) is None:
            args.seed = _env_seed()
        _set_threads(args.threads)
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ExactLimitError as exc:
        hint = "; rerun with --greedy" if args.command in ("solve", "sweep-p") else ""
        print(f"limit exceeded: {exc}{hint}", file=sys.stderr)
        return EXIT_LIMIT
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
