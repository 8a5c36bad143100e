"""Command line entry point: ``geneus generate | lint | consistency | serve``.

Exit codes: 0 success, 1 validation or user error, 2 provider error, 64 usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from ulid import ULID

from . import __version__
from .config import AppConfig, load_config, with_provider
from .consistency import compare_rat_vs_io, requirement_stability, run_repeated
from .errors import ArmFailed, ConfigError, GeneUSError, PipelineError, provider_cause
from .ingest import SourceDocument
from .provider import ProviderKind, build_provider
from .quality import rust_report
from .schema import result_from_value, serialize, validate_result
from .service import pipeline_config
from .store import RunStore
from .storygen import run_pipeline

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_PROVIDER = 2
EXIT_USAGE = 64

log = logging.getLogger("geneus")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _runs(value: str) -> int:
    try:
        n = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if n < 2:
        raise argparse.ArgumentTypeError("--runs must be at least 2")
    return n


def _provider_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("model backend")
    g.add_argument("--config", type=Path, help="TOML config file")
    g.add_argument("--provider", choices=[k.value for k in ProviderKind], help="backend kind")
    g.add_argument("--fixture", type=Path, help="fixture file for replay/record backends")
    g.add_argument("--base-url", help="chat-completions base URL")
    g.add_argument("--model", help="model id")
    g.add_argument("--temperature", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--output-dir", type=Path, help="where runs are stored")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="geneus", description="Generate user stories and test cases from requirements documents.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    backend = _provider_flags()

    gen = sub.add_parser("generate", parents=[backend], help="run the pipeline on one document")
    gen.add_argument("--input", type=Path, required=True)
    gen.add_argument("--output", type=Path, help="also write the result JSON here")

    lint = sub.add_parser("lint", help="quality lint for a result JSON file")
    lint.add_argument("--input", type=Path, required=True)
    lint.add_argument("--min-score", type=float, help="exit 1 if any category scores below this")
    lint.add_argument("--threshold", type=float, help="duplicate similarity threshold")
    lint.add_argument("--format", choices=["text", "json", "csv"], default="text")
    lint.add_argument("--config", type=Path)

    cons = sub.add_parser("consistency", parents=[backend], help="repeat the pipeline and measure stability")
    cons.add_argument("--input", type=Path, required=True)
    cons.add_argument("--runs", type=_runs)
    cons.add_argument("--compare-io", action="store_true", help="also compare RaT and IO requirement extraction")
    cons.add_argument("--report", type=Path, help="stability report JSON path")
    cons.add_argument("--matrix-csv", type=Path, help="pairwise similarity matrix CSV path")

    srv = sub.add_parser("serve", parents=[backend], help="run the REST service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    return parser


def _app_config(args: argparse.Namespace) -> AppConfig:
    config = load_config(args.config)
    kind = args.provider
    if kind is None and args.fixture is not None:
        kind = ProviderKind.REPLAY.value
    config = with_provider(
        config, kind=kind, fixture_path=args.fixture, base_url=args.base_url, model_id=args.model, seed=args.seed
    )
    changes: dict[str, Any] = {}
    if args.temperature is not None:
        changes["temperature"] = args.temperature
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.output_dir is not None:
        changes["output_dir"] = args.output_dir
    if changes:
        config = replace(config, **changes)
    return config.validate()


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _error_code(exc: BaseException) -> int:
    return EXIT_PROVIDER if provider_cause(exc) is not None else EXIT_INVALID


def _read_document(path: Path) -> SourceDocument:
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return SourceDocument.from_path(path)


def cmd_generate(args: argparse.Namespace) -> int:
    try:
        config = _app_config(args)
        doc = _read_document(args.input)
        provider = build_provider(config.provider)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc), EXIT_INVALID)
    try:
        result = run_pipeline(doc, provider, pipeline_config(config))
    except PipelineError as exc:
        return _fail(str(exc), _error_code(exc))
    text = serialize(result)
    violations = validate_result(json.loads(text))
    if violations:
        for v in violations:
            print(f"  {v}", file=sys.stderr)
        return _fail("generated result does not validate", EXIT_INVALID)
    record = RunStore(config.output_dir).save(result, {"input": str(args.input)})
    out_path = Path(record.result_path)
    if args.output is not None:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(text + "\n", encoding="utf-8")
        out_path = args.output
    print(
        f"run {record.run_id}: {len(result.requirements)} requirements, "
        f"{len(result.stories)} stories, {len(result.test_cases)} test cases -> {out_path}"
    )
    return EXIT_OK


def _format_report_text(report: Any) -> str:
    lines = ["category scores (1-5):"]
    lines += [f"  {cat}: {score:.2f}" for cat, score in report.category_scores.items()]
    failures = report.failures()
    if failures:
        lines.append("failed checks:")
        lines += [f"  story {idx} {c.rule_id}: {c.detail}" for idx, c in failures]
    if report.duplicates:
        lines.append("duplicate pairs:")
        lines += [f"  stories {i} and {j}: similarity {s:.3f}" for i, j, s in report.duplicates]
    lines += [f"warning: {w}" for w in report.warnings]
    return "\n".join(lines)


def cmd_lint(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
        raw = args.input.read_text(encoding="utf-8")
    except (ConfigError, OSError) as exc:
        return _fail(str(exc), EXIT_INVALID)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError as exc:
        return _fail(f"{args.input} is not valid JSON: {exc}", EXIT_INVALID)
    violations = validate_result(value)
    if violations:
        for v in violations:
            print(f"  {v}", file=sys.stderr)
        return _fail(f"{args.input} does not match the result schema", EXIT_INVALID)
    result = result_from_value(value)
    threshold = args.threshold if args.threshold is not None else config.duplicate_threshold
    try:
        report = rust_report(result, threshold, config.actors)
    except ValueError as exc:
        return _fail(str(exc), EXIT_USAGE)
    if args.format == "json":
        print(report.to_json())
    elif args.format == "csv":
        sys.stdout.write(report.to_csv())
    else:
        print(_format_report_text(report))
    if args.min_score is not None:
        low = {c: s for c, s in report.category_scores.items() if s < args.min_score}
        if low:
            shown = ", ".join(f"{c}={s:.2f}" for c, s in low.items())
            return _fail(f"categories below {args.min_score}: {shown}", EXIT_INVALID)
    return EXIT_OK


def cmd_consistency(args: argparse.Namespace) -> int:
    try:
        config = _app_config(args)
        doc = _read_document(args.input)
        provider = build_provider(config.provider)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc), EXIT_INVALID)
    n = args.runs if args.runs is not None else config.default_runs
    store = RunStore(config.output_dir)
    run_ids: list[str] = []
    pcfg = pipeline_config(config)
    try:
        runs = run_repeated(doc, provider, n, pcfg, on_result=lambda i, r: run_ids.append(store.save(r).run_id))
    except PipelineError as exc:
        return _fail(f"every run failed; first error: {exc}", _error_code(exc))
    for i, exc in runs.failures:
        print(f"run {i} failed: {exc}", file=sys.stderr)
    score = requirement_stability([r.requirements for r in runs.results])
    print(f"runs: {len(runs.results)}/{n} succeeded")
    print(f"stability (exact): {score.mean_pairwise_similarity:.6f}")
    print(f"stability (relaxed): {score.relaxed_mean:.6f}")
    report: dict[str, Any] = {
        "input": str(args.input),
        "runs": run_ids,
        "failures": [{"run": i, "error": str(exc)} for i, exc in runs.failures],
        "stability": score.to_dict(),
    }
    code = EXIT_OK
    if args.compare_io:
        try:
            comparison = compare_rat_vs_io(doc, provider, pcfg)
        except ArmFailed as exc:
            print(f"comparison failed ({exc.arm} arm): {exc.cause}", file=sys.stderr)
            code = _error_code(exc)
        else:
            report["comparison"] = comparison.to_dict()
            print("only in RaT extraction:")
            for text in comparison.rat_only:
                print(f"  + {text}")
            print("only in IO extraction:")
            for text in comparison.io_only:
                print(f"  - {text}")
    out_dir = config.output_dir / f"consistency-{ULID()}"
    report_path = args.report or out_dir / "stability.json"
    matrix_path = args.matrix_csv or out_dir / "stability_matrix.csv"
    for path in (report_path, matrix_path):
        path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report, indent=4, ensure_ascii=False) + "\n", encoding="utf-8")
    matrix_path.write_text(score.matrix_csv(), encoding="utf-8")
    print(f"report: {report_path}")
    return code


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    try:
        config = _app_config(args)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_INVALID)
    serve(config, args.host, args.port)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "lint": cmd_lint, "consistency": cmd_consistency, "serve": cmd_serve}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except GeneUSError as exc:
        return _fail(str(exc), _error_code(exc))


if __name__ == "__main__":
    sys.exit(main())
