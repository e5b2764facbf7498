"""``spidersqn`` command line: gen-data, run, bench, audit.

Exit codes: 0 success, 1 audit failure, 2 usage/config/input error,
3 divergence (for ``bench``: only when every run diverged).
"""

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .audit import INJECTIONS, run_audit
from .data import generate_synthetic, load_libsvm, max_abs_scale, write_libsvm
from .errors import DivergenceError, SpiderSQNError
from .momentum import KINDS, LAMBDA_RULES
from .objectives import PROBLEMS, make_objective, synthetic_stream
from .solvers import ALGORITHMS, MOMENTUM_OF, SolverConfig, online_batch_sizes, solve

TRACE_HEADER = ["algorithm", "seed", "k", "paper_sfo", "grad_evals", "f", "grad_norm", "wall_ms"]
SUMMARY_HEADER = ["algorithm", "seed", "status", "final_f", "final_grad_norm", "paper_sfo", "grad_evals", "wall_ms"]

DEFAULTS = {
    "problem": "svm",
    "algo": "spider_sqn",
    "r": 1e-3,
    "step": "practical",
    "eta": 1e-3,
    "batch": 256,
    "m": 5,
    "delta": 1.0,
    "epochs": 20,
    "seed": 0,
    "seeds": "0",
    "data_seed": 0,
    "lambda_rule": "max",
    "checkpoint_every": 10,
    "mode": "finite_sum",
    "init": "zero",
    "output_rule": "last",
    "label_map": "sign",
    "workers": 1,
}


class UsageError(Exception):
    pass


def epoch_length(text):
    """``--q`` accepts a positive integer or ``sqrt`` for ceil(sqrt(n))."""
    if text == "sqrt":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'sqrt', got {text!r}") from None


def fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % value


# ---------------------------------------------------------------- arguments


def _add_problem_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", metavar="PATH", help="LIBSVM file")
    src.add_argument("--synthetic", metavar="N,D,DENSITY", help="generate data in memory")
    p.add_argument("--data-seed", type=int, help="seed for --synthetic (default 0)")
    p.add_argument("--label-map", help="sign | identity | ovr:<class> (default sign)")
    p.add_argument("--normalize", action="store_true", default=None, help="per-feature max-abs scaling")
    p.add_argument("--problem", choices=sorted(PROBLEMS))
    p.add_argument("--r", type=float, help="regularization coefficient (default 1e-3)")
    p.add_argument("--mode", choices=("finite_sum", "online"))
    p.add_argument("--sigma1", type=float, help="gradient noise level for online mode")
    p.add_argument("--epsilon", type=float, help="target accuracy; derives online batch sizes")


def _add_solver_args(p):
    p.add_argument("--eta", type=float, help="step size (default 1e-3)")
    p.add_argument("--beta", type=float, help="momentum step size (default: eta)")
    p.add_argument("--step", choices=("practical", "theoretical"))
    p.add_argument("--L", dest="L", type=float, help="smoothness constant")
    p.add_argument("--sigma-min", type=float)
    p.add_argument("--sigma-max", type=float)
    p.add_argument("--kappa", type=float, help="curvature bound for the spectral bounds")
    p.add_argument("--q", type=epoch_length, help="epoch length or 'sqrt' (default round(2n/batch))")
    p.add_argument("--batch", type=int, help="minibatch size (default 256)")
    p.add_argument("--refresh-batch", type=int, help="online refresh batch")
    p.add_argument("--m", type=int, help="L-BFGS memory (default 5)")
    p.add_argument("--delta", type=float, help="gamma floor (default 1)")
    p.add_argument("--K", dest="K", type=int, help="iterations (default 20 epochs)")
    p.add_argument("--epochs", type=int, help="iterations in units of q when --K is absent")
    p.add_argument("--lambda-rule", choices=LAMBDA_RULES)
    p.add_argument("--momentum", choices=KINDS, help="override the algorithm's momentum schedule")
    p.add_argument("--output-rule", choices=("last", "uniform"))
    p.add_argument("--init", choices=("zero", "normal"))
    p.add_argument("--checkpoint-every", type=int, help="iterations between checkpoints (default 10)")
    p.add_argument("--out", metavar="DIR")


def build_parser():
    parser = argparse.ArgumentParser(prog="spidersqn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic LIBSVM dataset")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--density", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", metavar="PATH", required=True)

    r = sub.add_parser("run", help="one solver run; trace CSV to --out DIR or stdout")
    _add_problem_args(r)
    _add_solver_args(r)
    r.add_argument("--algo", choices=ALGORITHMS)
    r.add_argument("--seed", type=int)

    b = sub.add_parser("bench", help="algorithms x seeds; traces, summary.csv and a figure")
    _add_problem_args(b)
    _add_solver_args(b)
    b.add_argument("--plan", metavar="FILE", help="key=value lines; keys are flag names")
    b.add_argument("--algo", help="comma-separated algorithm names")
    b.add_argument("--seeds", help="comma-separated seeds (default 0)")
    b.add_argument("--workers", type=int, help="parallel processes (default 1)")
    b.add_argument("--no-plot", action="store_true", default=None)

    a = sub.add_parser("audit", help="invariant checks; exit 1 on any failure")
    a.add_argument("--inject", choices=INJECTIONS, help="deliberately break one safeguard")
    a.add_argument("--seed", type=int, default=0)
    return parser


def read_plan(path):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    plan = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (t.strip() for t in line.split("=", 1))
            plan[key.lstrip("-").replace("-", "_")] = value
    return plan


BOOLEAN_KEYS = ("normalize", "no_plot")
SOURCE_KEYS = ("data", "synthetic")


def plan_namespace(plan):
    """Parse plan entries through the ``bench`` parser so they get flag validation."""
    tokens = ["bench"]
    for key, value in plan.items():
        if key == "plan":
            raise UsageError("plan files cannot include other plans")
        flag = "--" + key.replace("_", "-")
        if key in BOOLEAN_KEYS:
            low = value.lower()
            if low not in ("1", "0", "true", "false", "yes", "no"):
                raise UsageError(f"plan key {key}: expected a boolean, got {value!r}")
            if low in ("1", "true", "yes"):
                tokens.append(flag)
        else:
            tokens.append(f"{flag}={value}")
    try:
        return build_parser().parse_args(tokens)
    except SystemExit:
        raise UsageError("invalid plan file (see message above)") from None


def merge_settings(args, plan=None):
    """Flags override plan values, which override :data:`DEFAULTS`."""
    settings = dict(vars(args))
    if plan:
        planned = vars(plan_namespace(plan))
        if any(settings.get(k) for k in SOURCE_KEYS):
            for k in SOURCE_KEYS:
                planned.pop(k, None)
        for key, value in planned.items():
            if settings.get(key) is None:
                settings[key] = value
    for key, value in DEFAULTS.items():
        if settings.get(key) is None:
            settings[key] = value
    return settings


# ---------------------------------------------------------------- sources


@dataclass
class SourceSpec:
    """Everything needed to rebuild the problem inside a worker process."""

    problem: str
    r: float
    mode: str
    data: str = None
    synthetic: tuple = None
    data_seed: int = 0
    label_map: str = "sign"
    normalize: bool = False
    sigma1: float = None

    def dataset(self):
        if self.data:
            ds = load_libsvm(self.data, label_map=self.label_map)
        else:
            n, d, density = self.synthetic
            ds = generate_synthetic(n, d, density, seed=self.data_seed)
        return max_abs_scale(ds) if self.normalize else ds

    def build(self, run_seed=0):
        if self.mode == "online":
            _, d, density = self.synthetic
            return synthetic_stream(
                self.problem, d, density, self.r, seed=self.data_seed, sigma1=self.sigma1, draw_seed=run_seed
            )
        return make_objective(self.problem, self.dataset(), self.r)


def _parse_synthetic(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError("--synthetic expects N,D,DENSITY")
    try:
        return int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError:
        raise UsageError(f"--synthetic: cannot parse {text!r}") from None


def source_spec(s):
    if not s.get("data") and not s.get("synthetic"):
        raise UsageError("one of --data or --synthetic is required")
    synthetic = _parse_synthetic(s["synthetic"]) if s.get("synthetic") else None
    if s["mode"] == "online" and synthetic is None:
        raise UsageError("online mode draws synthetic examples; pass --synthetic N,D,DENSITY")
    return SourceSpec(
        problem=s["problem"],
        r=s["r"],
        mode=s["mode"],
        data=s.get("data"),
        synthetic=synthetic,
        data_seed=s["data_seed"],
        label_map=s["label_map"],
        normalize=bool(s.get("normalize")),
        sigma1=s.get("sigma1"),
    )


def make_config(s, algorithm, seed, n):
    """Solver config from merged settings; ``n`` sizes the default epoch length."""
    batch, refresh = s["batch"], s.get("refresh_batch") or 0
    q = s.get("q")
    if q == "sqrt":
        q = math.isqrt(n - 1) + 1 if n > 1 else 1
    if s["mode"] == "online":
        if s.get("epsilon") is not None:
            sigma1 = s.get("sigma1")
            if sigma1 is None or s.get("L") is None:
                raise UsageError("--epsilon needs --sigma1 and --L")
            momentum = algorithm in MOMENTUM_OF or s.get("momentum") not in (None, "none")
            smin, smax = SolverConfig(
                algorithm=algorithm, step="theoretical", L=s["L"], sigma_min=s.get("sigma_min"),
                sigma_max=s.get("sigma_max"), kappa=s.get("kappa"), m=s["m"], delta=s["delta"],
            ).spectral_bounds()
            q, batch, refresh = online_batch_sizes(s["epsilon"], sigma1, s["L"], smin, smax, momentum)
        elif q is None:
            q = max(1, round(refresh**0.5)) if refresh else 1
    elif q is None:
        q = max(1, round(2 * n / batch))
    K = s.get("K") or s["epochs"] * q
    return SolverConfig(
        algorithm=algorithm,
        mode=s["mode"],
        q=q,
        batch=batch,
        refresh_batch=refresh,
        step=s["step"],
        eta=s["eta"],
        beta=s.get("beta"),
        L=s.get("L"),
        sigma_min=s.get("sigma_min"),
        sigma_max=s.get("sigma_max"),
        kappa=s.get("kappa"),
        m=s["m"],
        delta=s["delta"],
        K=K,
        seed=seed,
        lambda_rule=s["lambda_rule"],
        momentum=s.get("momentum"),
        output_rule=s["output_rule"],
        checkpoint_every=s["checkpoint_every"],
        init=s["init"],
    )


# ---------------------------------------------------------------- output


def trace_rows(trace):
    for c in trace.checkpoints:
        yield [trace.algorithm, trace.seed, c.k, c.paper_sfo, c.grad_evals, c.f, c.grad_norm, c.wall_ms]


def write_trace(trace, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for row in trace_rows(trace):
        w.writerow([row[0]] + [fmt(v) for v in row[1:]])


def trace_path(out, algorithm, seed):
    return os.path.join(out, f"trace_{algorithm}_seed{seed}.csv")


def summary_rows(results):
    """Per-run rows in plan order, then one median row per algorithm.

    ``results`` is a list of ``(algorithm, seed, trace_or_None, message)``.
    Medians use converged runs only.
    """
    rows = []
    finals = {}
    for algorithm, seed, trace, message in results:
        if trace is None:
            rows.append([algorithm, str(seed), "diverged", "nan", "nan", "", "", ""])
            continue
        c = trace.counter
        wall = trace.checkpoints[-1].wall_ms if trace.checkpoints else 0.0
        vals = (trace.final_f, trace.final_grad_norm, c.paper_sfo, c.component_grad_evals)
        finals.setdefault(algorithm, []).append(vals)
        rows.append([algorithm, str(seed), "ok", fmt(vals[0]), fmt(vals[1]), fmt(vals[2]), fmt(vals[3]), fmt(wall)])
    for algorithm in dict.fromkeys(a for a, *_ in results):
        vals = finals.get(algorithm)
        if not vals:
            rows.append([algorithm, "median", "diverged", "nan", "nan", "", "", ""])
            continue
        med = np.median(np.array(vals, dtype=float), axis=0)
        rows.append([algorithm, "median", "ok", fmt(med[0]), fmt(med[1]), fmt(med[2]), fmt(med[3]), ""])
    return rows


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, out=None):
    out = out or sys.stdout
    ds = generate_synthetic(args.n, args.d, args.density, seed=args.seed)
    write_libsvm(ds, args.out)
    print(f"n={ds.n} d={ds.d} density={ds.density():.6f} -> {args.out}", file=out)
    return 0


def _single_run(spec, cfg):
    return solve(cfg, spec.build(cfg.seed))


def cmd_run(args, out=None):
    out = out or sys.stdout
    s = merge_settings(args)
    spec = source_spec(s)
    source = spec.build(s["seed"])
    n = source.population.n if spec.mode == "online" else source.n
    cfg = make_config(s, s["algo"], s["seed"], n)
    trace = solve(cfg, source)
    if s.get("out"):
        os.makedirs(s["out"], exist_ok=True)
        path = trace_path(s["out"], cfg.algorithm, cfg.seed)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            write_trace(trace, fh)
        print(f"{cfg.algorithm} seed={cfg.seed} f={trace.final_f:.6g} -> {path}", file=sys.stderr)
    else:
        write_trace(trace, out)
    return 0


_WORKER = {}


def _init_worker(spec):
    _WORKER["spec"] = spec
    _WORKER["source"] = None if spec.mode == "online" else spec.build()


def _bench_job(cfg):
    spec = _WORKER["spec"]
    source = _WORKER["source"] or spec.build(cfg.seed)
    try:
        return cfg.algorithm, cfg.seed, solve(cfg, source), ""
    except DivergenceError as exc:
        return cfg.algorithm, cfg.seed, None, str(exc)


def _split(text, cast=str):
    try:
        return [cast(t.strip()) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def cmd_bench(args, out=None):
    out = out or sys.stdout
    plan = read_plan(args.plan) if args.plan else None
    s = merge_settings(args, plan)
    spec = source_spec(s)
    algorithms = _split(s["algo"])
    for a in algorithms:
        if a not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {a!r}; choose from {', '.join(ALGORITHMS)}")
    seeds = _split(s["seeds"], int)
    outdir = s.get("out") or "bench_out"
    os.makedirs(outdir, exist_ok=True)

    _init_worker(spec)
    probe = _WORKER["source"] or spec.build(0)
    n = probe.population.n if spec.mode == "online" else probe.n
    configs = [make_config(s, a, seed, n) for a in algorithms for seed in seeds]

    if s["workers"] > 1:
        with ProcessPoolExecutor(s["workers"], initializer=_init_worker, initargs=(spec,)) as pool:
            results = list(pool.map(_bench_job, configs))
    else:
        results = [_bench_job(cfg) for cfg in configs]

    for algorithm, seed, trace, message in results:
        if trace is None:
            print(f"{algorithm} seed={seed}: {message}", file=sys.stderr)
            continue
        with open(trace_path(outdir, algorithm, seed), "w", newline="", encoding="utf-8") as fh:
            write_trace(trace, fh)
    rows = summary_rows(results)
    with open(os.path.join(outdir, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER[:5])
    w.writerows([r[:5] for r in rows if r[1] == "median"])
    out.write(buf.getvalue())

    if not s.get("no_plot"):
        from .plotting import save_convergence_plot

        by_algo = {}
        for algorithm, _, trace, _ in results:
            if trace is not None:
                by_algo.setdefault(algorithm, []).append(trace)
        save_convergence_plot(by_algo, os.path.join(outdir, "convergence.png"), title=f"{spec.problem}")
    return 3 if all(t is None for _, _, t, _ in results) else 0


def cmd_audit(args, out=None):
    out = out or sys.stdout
    results = run_audit(args.inject, seed=args.seed)
    for r in results:
        print(r.line(), file=out)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"violated: {', '.join(failed)}", file=out)
        return 1
    print("all invariants hold", file=out)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "bench":
            return cmd_bench(args)
        return cmd_audit(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (SpiderSQNError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
