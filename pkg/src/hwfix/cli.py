"""Command line entry point: ``hwfix <command> ...``.

Exit status is 0 for a completed run, 2 for configuration or input errors
and 3 when a sweep cell had to be aborted.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .corpus import Variation, default_manifest, get_bug, load_corpus
from .detector import ALL_RULES, DEFAULT_HEURISTICS, NameHeuristics, scan
from .errors import (CassetteMiss, ConfigError, CorpusError, EndpointError, GatewayError, HwfixError,
                     ParseError, RetriesExhausted)
from .evaluator import Evaluator, SimulatorAdapter
from .gateway import Gateway, GatewayMode, RateLimiter
from .prompt import ContextPolicy, build_prompt
from .sweep import (CIRFIX_VARIATIONS, CellAborted, SweepConfig, best_settings, cirfix_mode,
                    default_cirfix_manifest, end_to_end, format_best, format_cirfix,
                    format_suggestions, load_run, run_sweep)

log = logging.getLogger("hwfix")

EXIT_OK, EXIT_CONFIG, EXIT_ABORTED = 0, 2, 3
# model name under which the shipped cassette was recorded
SHIPPED_MODEL = "scripted-a"


def shipped_cassette() -> Path:
    return default_manifest().parent.parent / "cassette.jsonl"


def _gateway(args, mode=None) -> Gateway:
    mode = GatewayMode(mode or args.mode or "replay")
    return Gateway(mode, args.cassette or (shipped_cassette() if mode is not GatewayMode.LIVE else None),
                   limiter=RateLimiter(args.rpm), max_in_flight=args.max_in_flight)


def _evaluator(args) -> Evaluator:
    sim = SimulatorAdapter.from_file(args.sim) if getattr(args, "sim", None) else None
    return Evaluator(sim, workers=getattr(args, "workers", None))


def _heuristics(args) -> NameHeuristics:
    return NameHeuristics.from_file(args.heuristics) if args.heuristics else DEFAULT_HEURISTICS


# -- commands -----------------------------------------------------------------

def cmd_corpus(args) -> int:
    for b in load_corpus(args.manifest):
        print(f"{b.id:>3}  {b.cwe.value:<8} {b.source_tag.value:<9} {b.design_name:<24} "
              f"{b.buggy_file.name}:{b.bug_span.start}-{b.bug_span.end}  oracle={b.security_oracle.kind}")
    return EXIT_OK


def cmd_detect(args) -> int:
    failed = []
    findings = scan(args.files, _heuristics(args), rules=args.rules.split(","),
                    on_error=lambda path, exc: failed.append((path, exc)))
    if args.json:
        print(json.dumps([f.to_json() for f in findings], indent=2))
    else:
        for f in findings:
            print(f"{f.file}:{f.span.start}-{f.span.end}: {f.cwe.value} [{f.rule_id}] {f.note}")
        print(f"{len(findings)} finding(s) in {len(args.files)} file(s)", file=sys.stderr)
    for path, exc in failed:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_CONFIG if failed else EXIT_OK


def cmd_prompt(args) -> int:
    bug = get_bug(load_corpus(args.manifest), args.bug_id)
    policy = ContextPolicy(args.min_lines, args.max_lines)
    prompt = build_prompt(bug, bug.source_text(), Variation.parse(args.variation), policy)
    sys.stdout.write(prompt.text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = SweepConfig.from_file(args.config)
    if args.mode:
        config = dataclasses.replace(config, mode=GatewayMode(args.mode))
    corpus = load_corpus(args.manifest)
    gateway = _gateway(args, config.mode)

    def progress(cell, successes):
        model, bug_id, v, t = cell
        log.info("%s bug %s %s t=%g: %d/%d", model, bug_id, v, t, successes, config.n)

    try:
        matrix = run_sweep(config, corpus, gateway, _evaluator(args), args.out, progress=progress)
    finally:
        gateway.close()
    run_dir = Path(args.out) / config.run_id()
    print(matrix.heatmap())
    print(f"run directory: {run_dir}")
    return EXIT_OK


def cmd_best(args) -> int:
    sys.stdout.write(format_best(best_settings(load_run(args.run))))
    return EXIT_OK


def cmd_cirfix(args) -> int:
    manifest = args.manifest or default_cirfix_manifest()
    benchmarks = load_corpus(manifest, variations=CIRFIX_VARIATIONS)
    gateway = _gateway(args)
    try:
        rows = cirfix_mode(benchmarks, gateway, _evaluator(args), args.out, model=args.model,
                           temperature=args.temperature)
    finally:
        gateway.close()
    if args.json:
        print(json.dumps([r.to_json() for r in rows], indent=2))
    else:
        sys.stdout.write(format_cirfix(rows))
    return EXIT_OK


def cmd_e2e(args) -> int:
    gateway = _gateway(args)
    try:
        suggestions = end_to_end(args.paths, gateway, _evaluator(args), args.out,
                                 corpus=load_corpus(args.manifest), heuristics=_heuristics(args),
                                 model=args.model, temperatures=args.temperature, n=args.n)
    finally:
        gateway.close()
    if args.json:
        print(json.dumps([s.to_json() for s in suggestions], indent=2))
    else:
        sys.stdout.write(format_suggestions(suggestions) or "no findings\n")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hwfix", description="Repair security bugs in Verilog with code LLMs.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def gateway_opts(p):
        p.add_argument("--mode", choices=[m.value for m in GatewayMode], default=None,
                       help="live/record need MODEL_ENDPOINT and MODEL_API_KEY (default: replay)")
        p.add_argument("--cassette", type=Path, help="cassette file (default: the shipped one)")
        p.add_argument("--rpm", type=int, default=60, help="request budget per minute")
        p.add_argument("--max-in-flight", type=int, default=4)

    def eval_opts(p):
        p.add_argument("--sim", type=Path, help="simulator config JSON (command templates or a preset)")
        p.add_argument("--workers", type=int, default=None, help="parallel simulations")

    p = sub.add_parser("corpus", help="list the bug corpus")
    p.add_argument("--manifest", type=Path)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("detect", help="scan Verilog files for the three CWE patterns")
    p.add_argument("files", nargs="+", type=Path)
    p.add_argument("--rules", default=",".join(ALL_RULES), help="comma list of 1234,1271,1245")
    p.add_argument("--heuristics", type=Path, help="JSON with reset/lock/debug/state name patterns")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("prompt", help="print the prompt for a corpus bug")
    p.add_argument("bug_id", type=int)
    p.add_argument("--variation", default="a", help="a..e")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--min-lines", type=int, default=25)
    p.add_argument("--max-lines", type=int, default=50)
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("sweep", help="run a bug x variation x temperature sweep")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--manifest", type=Path)
    gateway_opts(p)
    eval_opts(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("best", help="best-observed settings of a finished run")
    p.add_argument("--run", required=True, type=Path)
    p.set_defaults(func=cmd_best)

    p = sub.add_parser("cirfix", help="one-shot comparison on functional benchmarks")
    p.add_argument("--manifest", type=Path, help="benchmark manifest (default: the shipped set)")
    p.add_argument("--model", default=SHIPPED_MODEL)
    p.add_argument("--temperature", type=float, default=0.1)
    p.add_argument("--out", type=Path, default=Path("runs/cirfix"))
    p.add_argument("--json", action="store_true")
    gateway_opts(p)
    eval_opts(p)
    p.set_defaults(func=cmd_cirfix)

    p = sub.add_parser("e2e", help="detect, repair and evaluate unknown designs")
    p.add_argument("paths", nargs="+", type=Path)
    p.add_argument("--model", default=SHIPPED_MODEL)
    p.add_argument("--temperature", type=float, nargs="+", default=[0.1])
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--out", type=Path, default=Path("runs/e2e"))
    p.add_argument("--manifest", type=Path, help="corpus supplying the instruction templates")
    p.add_argument("--heuristics", type=Path)
    p.add_argument("--json", action="store_true")
    gateway_opts(p)
    eval_opts(p)
    p.set_defaults(func=cmd_e2e)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CellAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    except (CassetteMiss, RetriesExhausted, EndpointError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED
    except (ConfigError, CorpusError, GatewayError, ParseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HwfixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
