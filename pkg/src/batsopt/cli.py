"""Command-line frontend for design, sparsification, and simulation runs.

Subcommands
    optimize      rate-optimal design LP for a rank distribution
    sparsify      one of trim | slack | l1 | exact
    compare       nominal plus requested methods, table and JSON report
    convergence   re-solve across grid steps, report rate deltas
    simulate      end-to-end encode/channel/decode trials over GF(256)

Reports are JSON with stable key order; ``--dist-out`` writes the bare
degree-distribution file (round-trips into ``simulate`` and ``sparsify``)
and ``--csv`` writes (degree, mass) rows for stem plots.  Exit codes:
0 success, 1 validation, 2 solver failure, 3 I/O.  ``BATSOPT_CONFIG``
may name a JSON file of default flag values.  Wall times exclude file
I/O; ``--redact-timing`` zeroes them so fixed-seed runs are byte-stable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from typing import Optional, Sequence

from . import lp, sparse
from .degopt import (
    DegreeDistribution,
    DegreeOptResult,
    ProblemConfig,
    convergence_study,
    optimize_degree,
)
from .errors import SolverFailure, ValidationError
from .exact import ExactResult, bisection_max_rate
from .sim import DEFAULT_PACKET_LEN, simulate_rate
from .sparse import L1Options, SparseResult
from .specfun import FieldParams, RankDistribution

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_IO = 3

CONFIG_ENV_VAR = "BATSOPT_CONFIG"
# flag defaults that BATSOPT_CONFIG may override (explicit flags win)
_CONFIG_KEYS = {"q", "eta", "step", "grid_count", "max_degree", "seed", "packet_len"}

METHODS = ("trim", "slack", "l1", "exact")

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; bad usage is a validation failure here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ input loading


def _parse_binomial(text: str) -> RankDistribution:
    """Parse 'M=8,p=0.8' into the corresponding binomial rank distribution."""
    fields = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise ValidationError(f"expected key=value in --binomial, got {part!r}")
        fields[key.strip()] = value.strip()
    if set(fields) != {"M", "p"}:
        raise ValidationError(f"--binomial needs exactly M and p, got {sorted(fields)}")
    try:
        M = int(fields["M"])
        p = float(fields["p"])
    except ValueError as exc:
        raise ValidationError(f"malformed --binomial value: {exc}")
    return RankDistribution.binomial(M, p)


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})")
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    return data


def _load_rank(path: str) -> RankDistribution:
    data = _load_json(path)
    try:
        M = int(data["M"])
        h = [float(v) for v in data["h"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed rank distribution ({exc})")
    return RankDistribution(M, h)


def _load_degree(path: str) -> DegreeDistribution:
    return DegreeDistribution.from_json_dict(_load_json(path))


def _env_defaults() -> dict:
    path = os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    defaults = _load_json(path)
    unknown = set(defaults) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(
            f"{path}: unknown config keys {sorted(unknown)} (allowed: {sorted(_CONFIG_KEYS)})"
        )
    return defaults


def _pick(explicit, env: dict, key: str, fallback):
    """Explicit flag beats the config file beats the built-in default."""
    if explicit is not None:
        return explicit
    if key in env:
        return env[key]
    return fallback


def _rank_from_args(args) -> RankDistribution:
    if args.rank_file and args.binomial:
        raise ValidationError("give a rank file or --binomial, not both")
    if args.binomial:
        return _parse_binomial(args.binomial)
    if args.rank_file:
        return _load_rank(args.rank_file)
    raise ValidationError("a rank distribution is required: rank file or --binomial")


def _config_from_args(args, env: dict) -> ProblemConfig:
    step = args.step
    count = args.grid_count
    if step is None and count is None:
        step = _pick(None, env, "step", None)
        if step is None:
            count = env.get("grid_count")
    return ProblemConfig(
        rank_dist=_rank_from_args(args),
        field=FieldParams(int(_pick(args.q, env, "q", 256))),
        recovery_fraction=float(_pick(args.eta, env, "eta", 0.98)),
        grid_step=float(step) if step is not None else None,
        grid_count=int(count) if count is not None else None,
        max_degree=(
            int(_pick(args.max_degree, env, "max_degree", 0)) or None
        ),
    )


# ------------------------------------------------------------ output side


def _config_echo(config: ProblemConfig) -> dict:
    grid = config.grid()
    return {
        "M": config.rank_dist.M,
        "q": config.field.q,
        "eta": config.recovery_fraction,
        "grid": {"step": grid.step, "size": grid.size},
        "max_degree": config.degree_cap(),
    }


def _redact_times(node):
    """Zero every wall_time field in place; timing is not seed-controlled."""
    if isinstance(node, dict):
        for key, value in node.items():
            if key == "wall_time":
                node[key] = 0.0
            else:
                _redact_times(value)
    elif isinstance(node, list):
        for item in node:
            _redact_times(item)


def _emit_report(report: dict, args) -> None:
    if args.redact_timing:
        _redact_times(report)
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _write_dist_files(dist: DegreeDistribution, args) -> None:
    if getattr(args, "dist_out", None):
        with open(args.dist_out, "w", encoding="utf-8") as fh:
            fh.write(dist.dumps())
    if getattr(args, "csv", None):
        rows = "".join(f"{d},{dist.masses[d]!r}\n" for d in dist.support)
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("degree,mass\n" + rows)


def _sparse_row(res: SparseResult) -> dict:
    return {
        "method": res.method,
        "rate": res.theta_achieved,
        "rate_drop": res.rate_drop,
        "support_size": res.support_size,
        "wall_time": res.wall_time,
        "iterations": res.iterations,
        "stop_reason": res.stop_reason,
        "distribution": res.distribution.to_json_dict(),
    }


def _exact_row(res: ExactResult, baseline_rate: float) -> dict:
    # same report schema as the sparse heuristics
    return {
        "method": "exact",
        "rate": res.theta_star,
        "rate_drop": (baseline_rate - res.theta_star) / baseline_rate,
        "support_size": res.support_size,
        "wall_time": res.wall_time,
        "iterations": res.bisection_steps,
        "stop_reason": "bracket_closed",
        "distribution": res.distribution.to_json_dict(),
    }


# ------------------------------------------------------------ subcommands


def _run_method(method: str, config: ProblemConfig, nominal: DegreeOptResult,
                args) -> dict:
    if method == "trim":
        return _sparse_row(sparse.sparsify_trim(config, args.eps, nominal=nominal))
    if method == "slack":
        return _sparse_row(
            sparse.sparsify_complementary(
                config, args.screen_eps, nominal=nominal, trim_epsilon=args.eps
            )
        )
    if method == "l1":
        opts = L1Options(delta=args.delta, k_max=args.kmax,
                         eps1=args.eps1, eps2=args.eps2)
        return _sparse_row(sparse.reweighted_l1(config, opts, nominal=nominal))
    if method == "exact":
        if args.s is None:
            raise ValidationError("--method exact requires --s (support budget)")
        res = bisection_max_rate(config, args.s, theta_tol=args.theta_tol,
                                 nominal=nominal)
        return _exact_row(res, nominal.rate)
    raise ValidationError(f"unknown method {method!r}")


def cmd_optimize(args) -> int:
    config = _config_from_args(args, _env_defaults())
    t0 = time.perf_counter()
    res = optimize_degree(config)
    wall = time.perf_counter() - t0
    report = {
        "command": "optimize",
        "config": _config_echo(config),
        "rate": res.rate,
        "support_size": res.support_size,
        "iterations": res.iterations,
        "kernel_backend": res.backend,
        "wall_time": wall,
        "distribution": res.distribution.to_json_dict(),
    }
    _emit_report(report, args)
    _write_dist_files(res.distribution, args)
    return EXIT_OK


def cmd_sparsify(args) -> int:
    config = _config_from_args(args, _env_defaults())
    nominal = optimize_degree(config)
    row = _run_method(args.method, config, nominal, args)
    report = {
        "command": "sparsify",
        "config": _config_echo(config),
        "baseline_rate": nominal.rate,
        **row,
    }
    _emit_report(report, args)
    _write_dist_files(DegreeDistribution.from_json_dict(row["distribution"]), args)
    return EXIT_OK


def _format_table(rows: Sequence[dict]) -> str:
    header = ("method", "rate", "rate_drop", "support", "time_s")
    cells = [header]
    for row in rows:
        drop = row.get("rate_drop")
        cells.append((
            row["method"],
            f"{row['rate']:.9f}",
            "" if drop is None else f"{drop:.3e}",
            str(row["support_size"]),
            f"{row['wall_time']:.2f}",
        ))
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = []
    for r in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    env = _env_defaults()
    config = _config_from_args(args, env)
    methods = [m for m in args.methods.split(",") if m]
    if not methods:
        raise ValidationError("--methods must name at least one method")
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r} (choose from {', '.join(METHODS)})")
    t0 = time.perf_counter()
    nominal = optimize_degree(config)
    nominal_wall = time.perf_counter() - t0
    # baseline row carries no rate_drop: it is the reference
    rows = [{
        "method": "nominal",
        "rate": nominal.rate,
        "support_size": nominal.support_size,
        "wall_time": nominal_wall,
    }]
    for m in methods:
        logger.debug("compare: running %s", m)
        row = _run_method(m, config, nominal, args)
        row.pop("distribution")
        rows.append(row)
    report = {
        "command": "compare",
        "metadata": {
            **_config_echo(config),
            "lp_algorithm": "revised simplex",
            "kernel_backend": lp.backend(),
            "seed": int(_pick(args.seed, env, "seed", 0)),
        },
        "rows": rows,
    }
    sys.stdout.write(_format_table(rows))
    if args.out:
        _emit_report(report, args)
    return EXIT_OK


def cmd_convergence(args) -> int:
    config = _config_from_args(args, _env_defaults())
    try:
        steps = [float(s) for s in args.steps.split(",") if s]
    except ValueError as exc:
        raise ValidationError(f"malformed --steps: {exc}")
    if not steps:
        raise ValidationError("--steps must name at least one grid step")
    if any(b >= a for a, b in zip(steps, steps[1:])):
        raise ValidationError("--steps must be strictly decreasing (coarse to fine)")
    t0 = time.perf_counter()
    study = convergence_study(config, steps)
    wall = time.perf_counter() - t0
    rows = []
    prev_rate = None
    prev_delta = None
    for item in study:
        delta = None if prev_rate is None else abs(item.rate - prev_rate)
        ratio = None if (delta is None or not prev_delta) else delta / prev_delta
        rows.append({
            "step": item.step,
            "rate": item.rate,
            "support_size": item.support_size,
            "iterations": item.iterations,
            "rate_delta": delta,
            "delta_ratio": ratio,
        })
        prev_rate = item.rate
        prev_delta = delta if delta is not None else prev_delta
    report = {
        "command": "convergence",
        "config": _config_echo(config),
        "wall_time": wall,
        "rows": rows,
    }
    def fmt(value, spec):
        return "" if value is None else format(value, spec)

    lines = ["step        rate            support  delta      ratio"]
    for r in rows:
        lines.append(
            f"{r['step']:<10.6g}  {r['rate']:.10f}  {r['support_size']:<7d}"
            f"  {fmt(r['rate_delta'], '.3e'):<9}  {fmt(r['delta_ratio'], '.3f')}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    if args.out:
        _emit_report(report, args)
    return EXIT_OK


def cmd_simulate(args) -> int:
    env = _env_defaults()
    psi = _load_degree(args.degree_file)
    if args.rank_file and args.binomial:
        raise ValidationError("give a rank file or --binomial, not both")
    if args.binomial:
        h = _parse_binomial(args.binomial)
    elif args.rank_file:
        h = _load_rank(args.rank_file)
    else:
        raise ValidationError("a rank distribution is required: rank file or --binomial")
    q = int(_pick(args.q, env, "q", 256))
    if q != 256:
        raise ValidationError("the simulator runs over GF(256) only")
    report_obj = simulate_rate(
        psi, h,
        K=args.K,
        n_batches=args.batches,
        trials=args.trials,
        rng_seed=int(_pick(args.seed, env, "seed", 0)),
        recovery_fraction=float(_pick(args.eta, env, "eta", 0.98)),
        packet_len=int(_pick(args.packet_len, env, "packet_len", DEFAULT_PACKET_LEN)),
    )
    report = {
        "command": "simulate",
        "degree_support": psi.support_size,
        **report_obj.to_dict(),
    }
    _emit_report(report, args)
    return EXIT_OK


# ------------------------------------------------------------ wiring


def _add_instance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("rank_file", nargs="?", default=None,
                   help="JSON rank distribution {'M': int, 'h': [reals]}")
    p.add_argument("--binomial", metavar="M=8,p=0.8", default=None,
                   help="binomial rank distribution instead of a rank file")
    p.add_argument("--q", type=int, default=None, help="field size (default 256)")
    p.add_argument("--eta", type=float, default=None,
                   help="recovery fraction in (0,1) (default 0.98)")
    grid = p.add_mutually_exclusive_group()
    grid.add_argument("--step", type=float, default=None,
                      help="grid step (default 0.001)")
    grid.add_argument("--grid-count", type=int, default=None,
                      help="grid size, overrides --step")
    p.add_argument("--max-degree", type=int, default=None,
                   help="override the largest design degree")


def _add_output_flags(p: argparse.ArgumentParser, dist_files: bool = False) -> None:
    p.add_argument("--out", default=None, help="write the JSON report here (default stdout)")
    p.add_argument("--redact-timing", action="store_true",
                   help="zero wall_time fields for byte-stable output")
    if dist_files:
        p.add_argument("--dist-out", default=None,
                       help="write the degree-distribution JSON file here")
        p.add_argument("--csv", default=None, help="write (degree, mass) CSV here")


def _add_method_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, default=sparse.DEFAULT_TRIM_EPSILON,
                   help="trim threshold on final masses")
    p.add_argument("--screen-eps", type=float, default=sparse.DEFAULT_DUAL_SCREEN_EPSILON,
                   help="slack method: reduced-cost screen threshold")
    p.add_argument("--delta", type=float, default=10.0, help="l1 surrogate sharpness")
    p.add_argument("--kmax", type=int, default=10, help="l1 iteration cap")
    p.add_argument("--eps1", type=float, default=1e-3, help="l1 weight-change stop")
    p.add_argument("--eps2", type=float, default=sparse.DEFAULT_TRIM_EPSILON,
                   help="l1 final trim threshold")
    p.add_argument("--s", type=int, default=None, help="exact method: support budget")
    p.add_argument("--theta-tol", type=float, default=1e-6,
                   help="exact method: bisection tolerance on the rate")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="batsopt",
                     description="Degree-distribution design for batched sparse codes")
    parser.add_argument("--verbose", action="store_true",
                        help="log solver progress to stderr")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("optimize", help="solve the rate-optimal design LP")
    _add_instance_flags(p)
    _add_output_flags(p, dist_files=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sparsify", help="sparsify the optimal distribution")
    _add_instance_flags(p)
    p.add_argument("--method", required=True, choices=METHODS)
    _add_method_flags(p)
    _add_output_flags(p, dist_files=True)
    p.set_defaults(func=cmd_sparsify)

    p = sub.add_parser("compare", help="run several methods and tabulate them")
    _add_instance_flags(p)
    p.add_argument("--methods", default=",".join(METHODS),
                   help="comma list out of trim,slack,l1,exact")
    p.add_argument("--seed", type=int, default=None,
                   help="echoed in the report metadata")
    _add_method_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("convergence", help="rate versus grid refinement")
    _add_instance_flags(p)
    p.add_argument("--steps", required=True,
                   help="comma list of grid steps, strictly decreasing")
    _add_output_flags(p)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("simulate", help="empirical decode-rate trials")
    p.add_argument("degree_file", help="JSON degree distribution {'D':, 'masses':}")
    p.add_argument("rank_file", nargs="?", default=None,
                   help="JSON rank distribution {'M': int, 'h': [reals]}")
    p.add_argument("--binomial", metavar="M=8,p=0.8", default=None)
    p.add_argument("--q", type=int, default=None, help="field size; must be 256")
    p.add_argument("--eta", type=float, default=None, help="recovery fraction")
    p.add_argument("--K", type=int, required=True, help="number of input packets")
    p.add_argument("--batches", type=int, required=True, help="batches per trial")
    p.add_argument("--trials", type=int, required=True, help="independent trials")
    p.add_argument("--seed", type=int, default=None, help="master RNG seed")
    p.add_argument("--packet-len", type=int, default=None,
                   help=f"payload bytes per packet (default {DEFAULT_PACKET_LEN})")
    _add_output_flags(p)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.DEBUG, stream=sys.stderr,
                            format="%(name)s %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"batsopt: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverFailure as exc:
        print(f"batsopt: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"batsopt: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
