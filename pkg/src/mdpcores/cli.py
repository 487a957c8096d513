"""Command-line frontend: ``mdpcores <command> ...``.

Models are JSON files or built-in generator specs such as
``airplane:size=10000,return=0`` (see ``mdpcores gen --help``).  Standard
output carries data and summaries only; diagnostics go to standard error,
controlled by ``CORE_LOG={error,info,debug}``.

Exit codes: 0 success, 1 usage error, 2 verification failed or
inconclusive, 3 resource cap reached.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import statistics
import sys
import time
from contextlib import contextmanager
from typing import Optional

from . import __version__
from .analysis import (
    extrapolate_mean_payoff,
    extrapolate_reach,
    stability,
    write_curve_csv,
    write_stability_csv,
)
from .boundedcore import learn_finite_core
from .generators import (
    AirplaneConfig,
    KnapsackInstance,
    build_airplane,
    build_fig2,
    build_fig3,
    build_knapsack_mdp,
    build_random,
)
from .learncore import CoreResult, Heuristic, LearnConfig, check_core, learn_core
from .model import Mdp, ModelError, load_model, save_model, serialize_model
from .numerics import FrontierPolicy, bounded_reach_curve, max_reach_interval

log = logging.getLogger("mdpcores")

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_CAP = 0, 1, 2, 3
HEURISTICS = [h.value for h in Heuristic]
# Larger built-in models are identified by their spec instead of a content hash.
_HASH_LIMIT = 1_000_000


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- models

def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace("/", ",").split(",") if x)


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "tt", "yes"):
        return True
    if text.lower() in ("0", "false", "ff", "no"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def build_family(family: str, params: dict) -> Mdp:
    """Build a generator family from string parameters."""
    try:
        if family == "airplane":
            return build_airplane(AirplaneConfig(
                int(params.get("size", 10)),
                _bool(params.get("return", "0")),
                float(params.get("tau", 1e-10)),
            ))
        if family == "fig2":
            return build_fig2()
        if family == "fig3":
            return build_fig3(float(params.get("epsilon", 0.3)))
        if family == "knapsack":
            inst = KnapsackInstance(
                _ints(params["values"]), _ints(params["weights"]), int(params["v"]), int(params["w"])
            )
            return build_knapsack_mdp(inst, float(params.get("epsilon", 0.3)))[0]
        if family == "random":
            rr = params.get("rewards")
            rewards = None
            if rr:
                lo, hi = (float(x) for x in rr.replace("/", ",").split(","))
                rewards = (lo, hi)
            return build_random(
                int(params.get("states", 25)),
                int(params.get("actions", 2)),
                int(params.get("branching", 3)),
                float(params.get("sinks", 0.1)),
                int(params.get("seed", 0)),
                rewards,
                float(params.get("rare", 0.0)),
            )
    except KeyError as exc:
        raise UsageError(f"{family}: missing parameter {exc.args[0]}") from None
    except ValueError as exc:
        raise UsageError(f"{family}: {exc}") from None
    raise UsageError(f"unknown model family {family!r}")


def parse_spec(spec: str) -> tuple[str, dict]:
    family, _, rest = spec.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"bad spec parameter {item!r} (expected key=value)")
        params[key.strip()] = value.strip()
    return family.strip(), params


def load_any(ref: str) -> tuple[Mdp, str]:
    """Load a model from a file or a built-in spec; returns (model, hash)."""
    if os.path.exists(ref):
        mdp = load_model(ref)
        return mdp, mdp.fingerprint()
    family, params = parse_spec(ref)
    if family not in ("airplane", "fig2", "fig3", "knapsack", "random"):
        raise UsageError(f"no such model file or family: {ref!r}")
    mdp = build_family(family, params)
    if mdp.num_states <= _HASH_LIMIT:
        return mdp, mdp.fingerprint()
    canon = family + ":" + ",".join(f"{k}={params[k]}" for k in sorted(params))
    return mdp, hashlib.sha256(("builtin:" + canon).encode()).hexdigest()


# ------------------------------------------------------------ formatting

@contextmanager
def _output(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _summary(result: CoreResult, explored: int, elapsed: float) -> str:
    x = result.verified_exit_upper
    return (
        f"states={result.size} explored={explored} "
        f"exit_upper={'nan' if x is None else repr(x)} time={elapsed:.3f}"
    )


def _result_code(result: CoreResult) -> int:
    if result.verified:
        return EXIT_OK
    if result.status in ("timeout", "episode-cap"):
        return EXIT_CAP
    return EXIT_VERIFY


def _config(args) -> LearnConfig:
    return LearnConfig(
        time_limit=args.time_limit,
        max_episodes=args.max_episodes,
        ec_growth=args.ec_growth,
        ec_revisit_limit=args.ec_revisit_limit,
        loop_limit=args.loop_limit or None,
        stall_episodes=args.stall_episodes,
        exact_every=args.exact_every,
    )


def _load_core(path: str) -> CoreResult:
    try:
        with open(path, encoding="utf-8") as fh:
            return CoreResult.from_json(fh.read())
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read core file {path}: {exc}") from None


def _targets(text: Optional[str]) -> tuple[int, ...]:
    if not text:
        raise UsageError("--targets is required")
    return _ints(text)


# -------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    params = dict(parse_spec("x:" + (args.params or ""))[1])
    for key in ("size", "tau", "epsilon", "values", "weights", "v", "w", "states", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = str(value)
    if args.return_trip:
        params["return"] = "1"
    mdp = build_family(args.family, params)
    if args.out:
        save_model(mdp, args.out)
    else:
        sys.stdout.write(serialize_model(mdp) + "\n")
    if args.family == "knapsack":
        inst = KnapsackInstance(_ints(params["values"]), _ints(params["weights"]),
                                int(params["v"]), int(params["w"]))
        k = build_knapsack_mdp(inst, float(params.get("epsilon", 0.3)))[1]
        print(f"k={k}", file=sys.stdout if args.out else sys.stderr)
    return EXIT_OK


def _emit_core(result: CoreResult, model_hash: str, out: Optional[str]) -> None:
    result.model_hash = model_hash
    text = result.to_json()
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_learn(args) -> int:
    mdp, mh = load_any(args.model)
    t0 = time.perf_counter()
    result = learn_core(mdp, args.epsilon, args.heuristic, args.seed, _config(args))
    elapsed = time.perf_counter() - t0
    _emit_core(result, mh, args.out)
    print(_summary(result, result.stats.explored, elapsed))
    return _result_code(result)


def cmd_learn_bounded(args) -> int:
    if args.steps is None:
        raise UsageError("--steps is required")
    mdp, mh = load_any(args.model)
    t0 = time.perf_counter()
    result = learn_finite_core(mdp, args.epsilon, args.steps, args.heuristic, args.store,
                               args.K, args.seed, _config(args))
    elapsed = time.perf_counter() - t0
    _emit_core(result, mh, args.out)
    print(_summary(result, result.stats.explored, elapsed))
    return _result_code(result)


def cmd_verify(args) -> int:
    mdp, mh = load_any(args.model)
    core = _load_core(args.core)
    if core.model_hash and core.model_hash != mh:
        print("error: core file was learned on a different model", file=sys.stderr)
        return EXIT_VERIFY
    horizon = args.steps if args.steps is not None else core.horizon
    epsilon = args.epsilon if args.epsilon_set else core.epsilon
    chk = check_core(mdp, core.states, epsilon, horizon, args.delta)
    print(f"lower={chk.lower!r} upper={chk.upper!r} epsilon={epsilon!r} verdict={chk.verdict}")
    return EXIT_OK if chk.verdict == "verified" else EXIT_VERIFY


def cmd_reach(args) -> int:
    mdp, _ = load_any(args.model)
    targets = _targets(args.targets)
    if args.steps is None:
        iv = max_reach_interval(mdp, targets, args.delta)
        lo, hi = iv.at(mdp.initial)
        print(f"lower={lo!r} upper={hi!r}")
        return EXIT_OK
    lo, hi = bounded_reach_curve(mdp, targets, args.steps, FrontierPolicy())
    if args.csv:
        with _output(args.csv) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "lower", "upper"])
            for k, (a, b) in enumerate(zip(lo.tolist(), hi.tolist()), start=1):
                w.writerow([k, repr(a), repr(b)])
    print(f"lower={float(lo[-1])!r} upper={float(hi[-1])!r}")
    return EXIT_OK


def cmd_stability(args) -> int:
    mdp, _ = load_any(args.model)
    core = _load_core(args.core)
    n_max = args.n_max or args.steps or core.horizon
    if not n_max:
        raise UsageError("--n-max is required for unbounded cores")
    prof = stability(mdp, core, n_max)
    with _output(args.csv) as fh:
        write_stability_csv(prof, fh)
    return EXIT_OK


def cmd_extrapolate(args) -> int:
    mdp, _ = load_any(args.model)
    core = _load_core(args.core)
    n_max = args.n_max or args.steps or core.horizon
    if not n_max:
        raise UsageError("--n-max is required for unbounded cores")
    if args.r_min is not None or args.r_max is not None:
        if args.r_min is None or args.r_max is None:
            raise UsageError("--r-min and --r-max go together")
        curve = extrapolate_mean_payoff(mdp, core, args.r_min, args.r_max, n_max)
    else:
        curve = extrapolate_reach(mdp, core, _targets(args.targets), n_max, args.unbounded)
    with _output(args.csv) as fh:
        write_curve_csv(curve, fh)
    if curve.unbounded is not None:
        lo, hi = curve.unbounded
        print(f"unbounded lower={lo!r} upper={hi!r}", file=sys.stderr)
    return EXIT_OK


BENCH_HEADER = ["model", "heuristic", "horizon", "seed", "core_size", "fraction",
                "wall_time", "verified"]


def run_bench(mdp, model_name, heuristics, horizons, repetitions, seed, args):
    """Yield one bench row per run; failures never abort the batch."""
    for horizon in horizons:
        for h in heuristics:
            for rep in range(repetitions):
                run_seed = seed + rep
                t0 = time.perf_counter()
                try:
                    if horizon is None:
                        res = learn_core(mdp, args.epsilon, h, run_seed, _config(args))
                    else:
                        res = learn_finite_core(mdp, args.epsilon, horizon, h, args.store,
                                                args.K, run_seed, _config(args))
                    size, ok = res.size, res.verified
                except Exception as exc:  # recorded as a failed run
                    log.error("run %s/%s/%s failed: %s", h, horizon, run_seed, exc)
                    size, ok = 0, False
                wall = time.perf_counter() - t0
                yield {
                    "model": model_name,
                    "heuristic": Heuristic.parse(h).value,
                    "horizon": "unbounded" if horizon is None else horizon,
                    "seed": run_seed,
                    "core_size": size,
                    "fraction": size / mdp.num_states,
                    "wall_time": wall,
                    "verified": ok,
                }


def cmd_bench(args) -> int:
    mdp, _ = load_any(args.model)
    heuristics = [Heuristic.parse(h) for h in args.heuristics.split(",") if h]
    if not heuristics:
        raise UsageError("at least one heuristic is required")
    horizons = []
    for h in (args.horizons or "unbounded").split(","):
        horizons.append(None if h in ("unbounded", "inf", "") else int(h))
    rows = list(run_bench(mdp, args.model, heuristics, horizons, args.repetitions,
                          args.seed, args))
    with _output(args.csv) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for r in rows:
            w.writerow([r["model"], r["heuristic"], r["horizon"], r["seed"], r["core_size"],
                        repr(r["fraction"]), f"{r['wall_time']:.6f}",
                        "true" if r["verified"] else "false"])
    # footer: per (heuristic, horizon) aggregate over verified runs
    out = sys.stdout if args.csv else sys.stderr
    print("heuristic,horizon,runs,failures,mean_core_size,mean_fraction,mean_time", file=out)
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["heuristic"], r["horizon"]), []).append(r)
    for (h, hor), rs in groups.items():
        ok = [r for r in rs if r["verified"]]
        fails = len(rs) - len(ok)
        if ok:
            stats = (f"{statistics.fmean(r['core_size'] for r in ok):.2f},"
                     f"{statistics.fmean(r['fraction'] for r in ok):.6g},"
                     f"{statistics.fmean(r['wall_time'] for r in ok):.3f}")
        else:
            stats = "nan,nan,nan"
        print(f"{h},{hor},{len(rs)},{fails},{stats}", file=out)
    return EXIT_OK if all(r["verified"] for r in rows) else EXIT_VERIFY


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mdpcores", description="Learn and analyse epsilon-cores of MDPs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, learn=False):
        sp.add_argument("--model", required=True,
                        help="model JSON file or built-in spec, e.g. airplane:size=100,return=1")
        sp.add_argument("--out", help="output path (default: standard output)")
        sp.add_argument("--epsilon", type=float, default=1e-6)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--csv", help="CSV output path (default: standard output)")
        if learn:
            sp.add_argument("--heuristic", choices=HEURISTICS, default="weighted")
            sp.add_argument("--store", choices=["dense", "sparse"], default="sparse")
            sp.add_argument("--K", type=int, default=5)
            sp.add_argument("--time-limit", type=float)
            sp.add_argument("--max-episodes", type=int)
            d = LearnConfig()
            sp.add_argument("--ec-growth", type=float, default=d.ec_growth,
                            help="rerun EC collapsing once the explored set grew by this fraction")
            sp.add_argument("--ec-revisit-limit", type=int, default=d.ec_revisit_limit,
                            help="force EC collapsing when a path revisits a state this often")
            sp.add_argument("--loop-limit", type=int, default=d.loop_limit,
                            help="end an episode once a state recurs this often (0: off)")
            sp.add_argument("--stall-episodes", type=int, default=d.stall_episodes,
                            help="episodes without progress before breadth-first expansion")
            sp.add_argument("--exact-every", type=int, default=d.exact_every,
                            help="episodes between exact solves on the explored set (0: off)")

    g = sub.add_parser("gen", help="write a generated model as canonical JSON")
    g.add_argument("family", choices=["airplane", "knapsack", "fig2", "fig3", "random"])
    g.add_argument("--out")
    g.add_argument("--size", type=int)
    g.add_argument("--tau", type=float)
    g.add_argument("--return", dest="return_trip", action="store_true")
    g.add_argument("--epsilon", type=float)
    g.add_argument("--values")
    g.add_argument("--weights")
    g.add_argument("--v", type=int)
    g.add_argument("--w", type=int)
    g.add_argument("--states", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--params", help="extra key=value,... generator parameters")
    g.set_defaults(func=cmd_gen)

    for name, func in (("learn", cmd_learn), ("learn-bounded", cmd_learn_bounded)):
        sp = sub.add_parser(name, help="learn an (n-step) epsilon-core")
        common(sp, learn=True)
        sp.set_defaults(func=func)

    v = sub.add_parser("verify", help="check a core file against the oracle")
    v.add_argument("core")
    common(v)
    v.add_argument("--delta", type=float)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("reach", help="maximal (step-bounded) reachability on the full model")
    common(r)
    r.add_argument("--targets")
    r.add_argument("--delta", type=float, default=1e-10)
    r.set_defaults(func=cmd_reach)

    s = sub.add_parser("stability", help="exit probability within N steps, N = 1..n-max")
    s.add_argument("core")
    common(s)
    s.add_argument("--n-max", type=int)
    s.set_defaults(func=cmd_stability)

    e = sub.add_parser("extrapolate", help="reach / mean-payoff bounds from a core")
    e.add_argument("core")
    common(e)
    e.add_argument("--targets")
    e.add_argument("--n-max", type=int)
    e.add_argument("--r-min", type=float)
    e.add_argument("--r-max", type=float)
    e.add_argument("--unbounded", action="store_true")
    e.set_defaults(func=cmd_extrapolate)

    b = sub.add_parser("bench", help="batch of learning runs as CSV")
    common(b, learn=True)
    b.add_argument("--heuristics", default=",".join(HEURISTICS))
    b.add_argument("--horizons", default="unbounded",
                   help="comma list of step bounds and/or 'unbounded'")
    b.add_argument("--repetitions", type=int, default=1)
    b.set_defaults(func=cmd_bench)
    return p


def _setup_logging() -> None:
    level = os.environ.get("CORE_LOG", "error").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.ERROR),
        format="%(levelname)s %(name)s: %(message)s",
    )


def main(argv=None) -> int:
    _setup_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        if args.command == "verify":
            args.epsilon_set = any(a == "--epsilon" or a.startswith("--epsilon=") for a in argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
