"""Command-line driver.

Subcommands: ``facts`` (emit the extracted fact base), ``analyze`` (rule
engine path), ``oracle`` (worklist machine path), ``diff`` (run both and
compare), ``gen-term`` (emit a generated program), ``bench`` (analyze a
generated program and report sizes/timing).

Exit codes: 0 success; 1 parse or validation error; 2 fact-ceiling
exceeded (likely divergence); 3 diff mismatch.  Output directories contain
only relation files and are byte-deterministic; the run report goes to
stdout as JSON (its duration field varies run to run).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

from schemeflow.analysis import AnalysisConfig, AnalysisResult, analyze
from schemeflow.errors import FactCeilingExceeded, ParseError, ValidationError
from schemeflow.frontend import LabeledProgram, extract_facts, read_program
from schemeflow.machine import run_fixpoint
from schemeflow.serialize import OUTPUT_RELATIONS, RunReport, render_row, write_result_dir
from schemeflow.termgen import GenSpec, gen_mcfa_worst, gen_vanhorn

DEFAULT_FACT_CEILING = 5_000_000

# The relations diff compares by default; flow edges are derived
# bookkeeping and opt-in via --diff-flows.
DIFF_RELATIONS = ("state_e", "state_a", "stored_val", "stored_kont")
FLOW_RELATIONS = ("flow_aa", "flow_ae", "flow_ea", "flow_ee")


def _fact_ceiling() -> int:
    raw = os.environ.get("SCHEMEFLOW_FACT_CEILING", "")
    try:
        return int(raw) if raw else DEFAULT_FACT_CEILING
    except ValueError:
        raise ValidationError(f"SCHEMEFLOW_FACT_CEILING must be an integer, got {raw!r}") from None


def _widen_depth(text: str) -> int | None:
    if text.lower() in ("unlimited", "none"):
        return None
    try:
        depth = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or 'unlimited', got {text!r}")
    if depth < 1:
        raise argparse.ArgumentTypeError("widen depth must be >= 1 or 'unlimited'")
    return depth


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--m", type=int, default=0, help="context depth (default 0)")
    group = p.add_mutually_exclusive_group()
    group.add_argument(
        "--widen-depth",
        type=_widen_depth,
        default=2,
        metavar="D",
        help="primitive-result widening depth, or 'unlimited' (default 2)",
    )
    group.add_argument(
        "--strict-appendix",
        action="store_true",
        help="reference behavior exactly: unlimited widening, appendix-exact truthiness",
    )
    p.add_argument(
        "--truthiness",
        choices=("both-branches", "appendix-exact"),
        default="both-branches",
        help="how opaque guard values (PrimVal/NumTop) branch (default both-branches)",
    )


def _config(args: argparse.Namespace) -> AnalysisConfig:
    if args.strict_appendix:
        return AnalysisConfig(m=args.m, strict_appendix=True, fact_ceiling=_fact_ceiling())
    return AnalysisConfig(
        m=args.m,
        widen_depth=args.widen_depth,
        primval_truthiness=args.truthiness,
        fact_ceiling=_fact_ceiling(),
    )


def _load(args: argparse.Namespace) -> LabeledProgram:
    path = Path(args.program)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    return read_program(path.read_text(), allow_quote=args.allow_quote)


def _report(
    mode: str, program: str, cfg: AnalysisConfig, result: AnalysisResult, duration_ms: float
) -> RunReport:
    return RunReport(
        mode=mode,
        program=program,
        m=cfg.m,
        widen_depth=cfg.widen_depth,
        truthiness=cfg.primval_truthiness,
        engine=result.engine,
        counts={name: len(result.relations[name]) for name in OUTPUT_RELATIONS},
        rounds=result.rounds,
        peak_facts=result.peak_facts,
        duration_ms=round(duration_ms, 3),
    )


def _run_and_emit(args: argparse.Namespace, mode: str) -> int:
    program = _load(args)
    cfg = _config(args)
    start = time.perf_counter()
    if mode == "analyze":
        result = analyze(program, cfg)
    else:
        trace = None
        if getattr(args, "trace", False):
            trace = lambda line: print(line, file=sys.stderr)
        result = run_fixpoint(program, cfg, trace=trace)
    duration_ms = (time.perf_counter() - start) * 1000.0
    write_result_dir(result.relations, args.out, format=args.format)
    sys.stdout.write(_report(mode, args.program, cfg, result, duration_ms).to_json())
    return 0


def cmd_facts(args: argparse.Namespace) -> int:
    program = _load(args)
    extract_facts(program).to_dir(args.out)
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    return _run_and_emit(args, "analyze")


def cmd_oracle(args: argparse.Namespace) -> int:
    return _run_and_emit(args, "oracle")


def cmd_diff(args: argparse.Namespace) -> int:
    program = _load(args)
    cfg = _config(args)
    left = analyze(program, cfg)
    right = run_fixpoint(program, cfg)
    relations = DIFF_RELATIONS + (FLOW_RELATIONS if args.diff_flows else ())
    for name in relations:
        a, b = left.relations[name], right.relations[name]
        if a == b:
            continue
        for row in sorted(a ^ b, key=render_row):
            side = "engine-only" if row in a else "oracle-only"
            print(f"{name}\t{side}\t" + "\t".join(render_row(row)))
            return 3
    print(f"identical across {', '.join(relations)}")
    return 0


def cmd_gen_term(args: argparse.Namespace) -> int:
    if args.family == "vanhorn":
        print(gen_vanhorn())
        return 0
    if args.n is None:
        raise ValidationError("--n is required for --family mcfa")
    print(gen_mcfa_worst(GenSpec(n_bindings=args.n, n_plus=args.k, padding=args.padding)))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    if args.family == "vanhorn":
        text = gen_vanhorn()
    else:
        if args.n is None:
            raise ValidationError("--n is required for --family mcfa")
        text = gen_mcfa_worst(GenSpec(n_bindings=args.n, n_plus=args.k, padding=args.padding))
    program = read_program(text)
    cfg = _config(args)
    start = time.perf_counter()
    result = analyze(program, cfg)
    duration_ms = (time.perf_counter() - start) * 1000.0
    name = f"<{args.family} n={args.n} k={args.k} p={args.padding}>"
    sys.stdout.write(_report("bench", name, cfg, result, duration_ms).to_json())
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="schemeflow", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_program_cmd(name: str, func, help_text: str, *, config: bool, out: bool):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("program", help="input .scm file")
        p.add_argument("--allow-quote", action="store_true", help="accept quoted data as inert")
        if config:
            _add_config_args(p)
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(func=func)
        return p

    add_program_cmd("facts", cmd_facts, "extract and emit the fact base", config=False, out=True)
    for name, func in (("analyze", cmd_analyze), ("oracle", cmd_oracle)):
        p = add_program_cmd(name, func, f"run the {name} path", config=True, out=True)
        p.add_argument("--format", choices=("tsv", "json"), default="tsv")
        if name == "oracle":
            p.add_argument(
                "--trace", action="store_true", help="log one line per applied rule to stderr"
            )
    p = add_program_cmd("diff", cmd_diff, "run both paths and compare", config=True, out=False)
    p.add_argument("--diff-flows", action="store_true", help="also compare flow relations")

    for name, func in (("gen-term", cmd_gen_term), ("bench", cmd_bench)):
        p = sub.add_parser(name, help=f"{name} over a generated family")
        p.add_argument("--family", choices=("mcfa", "vanhorn"), default="mcfa")
        p.add_argument("--n", type=int, default=None, help="calls to f")
        p.add_argument("--k", type=int, default=1, help="nested additions")
        p.add_argument("--padding", type=int, default=0, help="padding layers")
        if name == "bench":
            _add_config_args(p)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as ex:
        print(f"parse error: {ex}", file=sys.stderr)
        return 1
    except ValidationError as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1
    except FactCeilingExceeded as ex:
        print(f"fact ceiling exceeded: {ex}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
