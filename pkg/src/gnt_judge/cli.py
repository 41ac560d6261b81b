"""Command-line interface: run, report, diff, check-data.

Exit codes: 0 success, 1 configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .corpus import label_counts, load_corpus, load_hypotheses, split_counts
from .errors import ConfigError, DataFormatError
from .labels import SetTag, Label
from .report import (
    MANIFEST_FILENAME,
    RECORDS_FILENAME,
    list_disagreements,
    parse_run_config,
    render_tables,
    run,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnt-judge",
        description="Judge gender-neutral translations with LLM backends and report accuracy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="judge a corpus or hypothesis file end to end")
    run_p.add_argument("--config", required=True, help="flat key=value run configuration file")
    run_p.add_argument(
        "--no-cache",
        action="store_true",
        help="bypass cache reads (outcomes are still appended to the cache)",
    )

    report_p = sub.add_parser("report", help="render accuracy/PRF tables from a records file")
    report_p.add_argument("--records", required=True)
    report_p.add_argument("--format", choices=("md", "csv"), default="md")
    report_p.add_argument("--out", default=None, help="output file (default: stdout)")

    diff_p = sub.add_parser("diff", help="list items whose prediction misses the gold label")
    diff_p.add_argument("--records", required=True)
    diff_p.add_argument("--limit", type=int, default=20)

    check_p = sub.add_parser("check-data", help="validate a corpus or hypothesis file")
    check_p.add_argument("--corpus", default=None)
    check_p.add_argument("--hypotheses", default=None)
    check_p.add_argument("--language", default=None, help="expected language pair, e.g. en-it")
    return parser


def _declared_language(path: Path) -> str | None:
    from .corpus import LANGUAGE_PRAGMA

    with open(path, encoding="utf-8") as handle:
        first = handle.readline()
    if first.lower().startswith(LANGUAGE_PRAGMA):
        return first[len(LANGUAGE_PRAGMA):].strip()
    return None


def _cmd_run(args: argparse.Namespace) -> int:
    config = parse_run_config(args.config)
    manifest = run(config, use_cache_reads=not args.no_cache)
    out = config.output_dir
    total = sum(manifest.status_counts.values())
    print(f"judged {total} items; statuses: {manifest.status_counts}")
    print(f"records: {out / RECORDS_FILENAME}")
    print(f"manifest: {out / MANIFEST_FILENAME}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    fmt = "markdown" if args.format == "md" else "csv"
    text = render_tables(args.records, fmt)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_diff(args: argparse.Namespace) -> int:
    rows = list_disagreements(args.records, args.limit)
    if not rows:
        print("no disagreements")
        return 0
    print("entry_id\tgold\tpredicted\tconsistency")
    for entry_id, gold, predicted, consistency in rows:
        print(f"{entry_id}\t{gold}\t{predicted}\t{consistency}")
    return 0


def _cmd_check_data(args: argparse.Namespace) -> int:
    if (args.corpus is None) == (args.hypotheses is None):
        raise ConfigError("pass exactly one of --corpus or --hypotheses")
    if args.corpus is not None:
        path = Path(args.corpus)
        if not path.exists():
            raise DataFormatError(f"no such file: {path}")
        language = args.language or _declared_language(path)
        if language is None:
            raise ConfigError("pass --language (the file declares no language)")
        corpus = load_corpus(path, language)
        counts = split_counts(corpus)
        print(f"OK: {len(corpus)} entries ({language})")
        print(f"Set-G: {counts[SetTag.SET_G]}  Set-N: {counts[SetTag.SET_N]}")
    else:
        path = Path(args.hypotheses)
        if not path.exists():
            raise DataFormatError(f"no such file: {path}")
        entries = load_hypotheses(path, args.language or "en-it")
        counts = label_counts(entries)
        print(f"OK: {len(entries)} hypotheses")
        print(f"GENDERED: {counts[Label.GENDERED]}  NEUTRAL: {counts[Label.NEUTRAL]}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "report": _cmd_report,
        "diff": _cmd_diff,
        "check-data": _cmd_check_data,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
