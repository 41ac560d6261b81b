"""End-to-end runs, records persistence, and report rendering.

A run judges every (backend, strategy, entry, reference) combination and
persists the results as JSON-lines sorted by (model, strategy, entry id,
reference), so concurrent judging never changes the output bytes. A
manifest captures the configuration, the exemplar selection, and
per-item outcome statuses.

Run configuration is a flat ``key = value`` file; ``#`` starts a comment.
Relative paths are resolved against the config file's directory and the
prefix ``builtin:`` points into the packaged assets. Backends are
declared as ``backends = name, ...`` plus ``backend.<name>.<field>``
entries.
"""

from __future__ import annotations

import io
import json
from concurrent.futures import ThreadPoolExecutor
from csv import writer as csv_writer
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import __version__
from .client import (
    BackendConfig,
    BackendKind,
    JudgeItem,
    JudgeOutcome,
    ResponseCache,
    Transport,
    judge,
)
from .corpus import (
    CorpusEntry,
    HypothesisEntry,
    gold_label,
    load_corpus,
    load_hypotheses,
    select_exemplars,
    test_split,
)
from .errors import ConfigError, DataFormatError
from .labels import (
    Consistency,
    Label,
    RefChoice,
    Scenario,
    SetTag,
    Strategy,
    target_language,
)
from .metrics import (
    Comparison,
    EvalRecord,
    MetricsTable,
    accuracy_table,
    consistency_rate,
    is_correct,
    precision_recall,
    record_from_json,
    record_to_json,
)
from .prompts import ASSETS_DIR, render_exemplar, system_instruction
from .verdict import check_consistency

RECORDS_FILENAME = "records.jsonl"
MANIFEST_FILENAME = "manifest.json"
ROUNDING_FOOTER = "Percentages are rounded half-even to two decimals."

_CONFIG_KEYS = {
    "corpus",
    "hypotheses",
    "exemplar_corpus",
    "language",
    "strategies",
    "backends",
    "exemplar_seed",
    "parallelism",
    "cache",
    "output_dir",
}
_BACKEND_KEYS = {"kind", "model_id", "endpoint", "credential_env", "temperature", "max_retries", "timeout"}


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs; built by :func:`parse_run_config`."""

    language: str
    strategies: tuple[Strategy, ...]
    backends: tuple[BackendConfig, ...]
    exemplar_corpus: Path
    output_dir: Path
    corpus: Optional[Path] = None
    hypotheses: Optional[Path] = None
    exemplar_seed: Optional[int] = None
    parallelism: int = 1
    cache_path: Optional[Path] = None
    assets_root: Path = ASSETS_DIR

    def validate(self) -> None:
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        if not self.backends:
            raise ConfigError("at least one backend is required")
        if (self.corpus is None) == (self.hypotheses is None):
            raise ConfigError("exactly one of corpus/hypotheses must be set")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        for backend in self.backends:
            backend.validate()
        # Surface missing template assets before any judging starts.
        for strategy in self.strategies:
            system_instruction(strategy, target_language(self.language), self.assets_root)


def _resolve_path(value: str, base: Path, assets_root: Path) -> Path:
    if value.startswith("builtin:"):
        return assets_root / value[len("builtin:"):]
    path = Path(value)
    return path if path.is_absolute() else base / path


def parse_run_config(path: str | Path, assets_root: Path = ASSETS_DIR) -> RunConfig:
    """Parse and validate a flat key-value run configuration file."""
    path = Path(path)
    base = path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None

    values: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value

    backend_names = [n.strip() for n in values.get("backends", "").split(",") if n.strip()]
    for key in values:
        if key in _CONFIG_KEYS:
            continue
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "backend" and parts[1] in backend_names and parts[2] in _BACKEND_KEYS:
            continue
        raise ConfigError(f"{path}: unknown config key {key!r}")

    if "language" not in values:
        raise ConfigError(f"{path}: missing required key 'language'")
    if "output_dir" not in values:
        raise ConfigError(f"{path}: missing required key 'output_dir'")
    if not backend_names:
        raise ConfigError(f"{path}: at least one backend is required")

    strategy_tokens = [t.strip() for t in values.get("strategies", "").split(",") if t.strip()]
    if not strategy_tokens:
        raise ConfigError(f"{path}: at least one strategy is required")
    if strategy_tokens == ["all"]:
        strategies = tuple(Strategy)
    else:
        try:
            strategies = tuple(Strategy(t.upper()) for t in strategy_tokens)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    backends = []
    for name in backend_names:
        fields = {k.split(".")[2]: v for k, v in values.items() if k.startswith(f"backend.{name}.")}
        kind_raw = fields.get("kind", "")
        try:
            kind = BackendKind(kind_raw.upper())
        except ValueError:
            raise ConfigError(f"{path}: backend {name!r} has unknown kind {kind_raw!r}") from None
        try:
            backend = BackendConfig(
                kind=kind,
                model_id=fields.get("model_id", name),
                endpoint=fields.get("endpoint"),
                credential_env=fields.get("credential_env"),
                temperature=float(fields.get("temperature", "0")),
                max_retries=int(fields.get("max_retries", "3")),
                timeout=float(fields.get("timeout", "60")),
            )
        except ValueError as exc:
            raise ConfigError(f"{path}: backend {name!r}: {exc}") from None
        backends.append(backend)

    corpus = _resolve_path(values["corpus"], base, assets_root) if "corpus" in values else None
    hypotheses = _resolve_path(values["hypotheses"], base, assets_root) if "hypotheses" in values else None
    if "exemplar_corpus" in values:
        exemplar_corpus = _resolve_path(values["exemplar_corpus"], base, assets_root)
    elif corpus is not None:
        exemplar_corpus = corpus
    else:
        raise ConfigError(f"{path}: hypothesis runs need an explicit exemplar_corpus")

    seed: Optional[int] = None
    if values.get("exemplar_seed", "") != "":
        try:
            seed = int(values["exemplar_seed"])
        except ValueError:
            raise ConfigError(f"{path}: exemplar_seed must be an integer") from None
    try:
        parallelism = int(values.get("parallelism", "1"))
    except ValueError:
        raise ConfigError(f"{path}: parallelism must be an integer") from None

    output_dir = _resolve_path(values["output_dir"], base, assets_root)
    cache_path = (
        _resolve_path(values["cache"], base, assets_root) if "cache" in values else output_dir / "cache.jsonl"
    )

    config = RunConfig(
        language=values["language"],
        strategies=strategies,
        backends=tuple(backends),
        exemplar_corpus=exemplar_corpus,
        output_dir=output_dir,
        corpus=corpus,
        hypotheses=hypotheses,
        exemplar_seed=seed,
        parallelism=parallelism,
        cache_path=cache_path,
        assets_root=assets_root,
    )
    config.validate()
    return config


@dataclass
class RunManifest:
    """Snapshot of one run: enough to reproduce it with the offline backend."""

    version: str
    language: str
    config: dict
    exemplar_ids: list[str]
    exemplar_composition: list[dict]
    judged_ids: list[str]
    statuses: list[dict]
    status_counts: dict[str, int]
    started_at: str
    finished_at: str = ""

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "language": self.language,
            "config": self.config,
            "exemplar_ids": self.exemplar_ids,
            "exemplar_composition": self.exemplar_composition,
            "judged_ids": self.judged_ids,
            "statuses": self.statuses,
            "status_counts": self.status_counts,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


def _config_snapshot(config: RunConfig) -> dict:
    return {
        "language": config.language,
        "strategies": [s.value for s in config.strategies],
        "backends": [
            {
                "kind": b.kind.value,
                "model_id": b.model_id,
                "endpoint": b.endpoint,
                "credential_env": b.credential_env,
                "temperature": b.temperature,
                "max_retries": b.max_retries,
                "timeout": b.timeout,
            }
            for b in config.backends
        ],
        "corpus": str(config.corpus) if config.corpus else None,
        "hypotheses": str(config.hypotheses) if config.hypotheses else None,
        "exemplar_corpus": str(config.exemplar_corpus),
        "exemplar_seed": config.exemplar_seed,
        "parallelism": config.parallelism,
        "cache": str(config.cache_path) if config.cache_path else None,
        "output_dir": str(config.output_dir),
    }


@dataclass(frozen=True)
class _WorkItem:
    item: JudgeItem
    set_tag: SetTag
    gold: Label


def _corpus_work(entries: Sequence[CorpusEntry], scenario: Scenario, needs_source: bool) -> list[_WorkItem]:
    work = []
    for entry in entries:
        for ref in (RefChoice.REF_G, RefChoice.REF_N):
            work.append(
                _WorkItem(
                    item=JudgeItem(
                        id=entry.id,
                        target=entry.reference(ref),
                        ref=ref,
                        source=entry.source if needs_source else None,
                    ),
                    set_tag=entry.set_tag,
                    gold=gold_label(entry, ref, scenario),
                )
            )
    return work


def _hypothesis_work(entries: Sequence[HypothesisEntry], needs_source: bool) -> list[_WorkItem]:
    return [
        _WorkItem(
            item=JudgeItem(
                id=entry.id,
                target=entry.hypothesis,
                ref=None,
                source=entry.source if needs_source else None,
            ),
            set_tag=SetTag.SET_N,
            gold=entry.gold_label,
        )
        for entry in entries
    ]


def run(
    config: RunConfig,
    *,
    use_cache_reads: bool = True,
    transport: Optional[Transport] = None,
    sleep: Optional[Callable[[float], None]] = None,
) -> RunManifest:
    """Judge the configured data end to end and persist records plus manifest.

    Per-item failures never abort the run; they surface as INVALID
    predictions in the records and as statuses in the manifest.
    """
    config.validate()
    started_at = datetime.now(timezone.utc).isoformat()
    language = config.language
    lang_tag = target_language(language)

    exemplar_entries = load_corpus(config.exemplar_corpus, language)
    exemplars = select_exemplars(exemplar_entries, seed=config.exemplar_seed)
    exemplar_ids = [entry.id for entry, _ in exemplars]

    if config.corpus is not None:
        corpus = load_corpus(config.corpus, language)
        if config.corpus == config.exemplar_corpus:
            judged_entries = test_split(corpus, exemplar_ids)
        else:
            excluded = set(exemplar_ids)
            judged_entries = [e for e in corpus if e.id not in excluded]
        judged_ids = [e.id for e in judged_entries]
        hypotheses = None
    else:
        hypotheses = load_hypotheses(config.hypotheses, language)  # type: ignore[arg-type]
        excluded = set(exemplar_ids)
        hypotheses = [h for h in hypotheses if h.id not in excluded]
        judged_ids = [h.id for h in hypotheses]
        judged_entries = []

    cache = ResponseCache(config.cache_path) if config.cache_path else None
    records: list[EvalRecord] = []
    statuses: list[dict] = []

    judge_kwargs: dict = {"use_cache_reads": use_cache_reads, "transport": transport}
    if sleep is not None:
        judge_kwargs["sleep"] = sleep

    for backend in config.backends:
        for strategy in config.strategies:
            rendered = [
                render_exemplar(strategy, item, assets_root=config.assets_root) for item in exemplars
            ]
            if config.corpus is not None:
                work = _corpus_work(judged_entries, strategy.scenario, strategy.takes_source)
            else:
                work = _hypothesis_work(hypotheses or [], strategy.takes_source)

            def _judge_one(unit: _WorkItem) -> tuple[_WorkItem, JudgeOutcome]:
                outcome = judge(
                    backend,
                    strategy,
                    lang_tag,
                    unit.item,
                    rendered,
                    cache,
                    assets_root=config.assets_root,
                    **judge_kwargs,
                )
                return unit, outcome

            if config.parallelism > 1:
                with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
                    results = list(pool.map(_judge_one, work))
            else:
                results = [_judge_one(unit) for unit in work]

            for unit, outcome in results:
                verdict = outcome.verdict
                spans_verbatim = None
                if verdict is not None and verdict.phrases is not None:
                    spans_verbatim = all(p.text in unit.item.target for p in verdict.phrases)
                records.append(
                    EvalRecord(
                        entry_id=unit.item.id,
                        language=language,
                        set_tag=unit.set_tag,
                        ref=unit.item.ref,
                        scenario=strategy.scenario,
                        strategy=strategy,
                        model_id=backend.model_id,
                        gold=unit.gold,
                        predicted=verdict.stated_label if verdict else None,
                        consistency=_verdict_consistency(verdict),
                        spans_verbatim=spans_verbatim,
                    )
                )
                statuses.append(
                    {
                        "entry_id": unit.item.id,
                        "ref": unit.item.ref.value if unit.item.ref else None,
                        "strategy": strategy.value,
                        "model_id": backend.model_id,
                        "status": outcome.status.value,
                        "attempts": outcome.attempts,
                    }
                )

    statuses.sort(key=lambda r: (r["model_id"], r["strategy"], r["entry_id"], r["ref"] or ""))
    records.sort(key=lambda r: (r.model_id, r.strategy.value, r.entry_id, r.ref.value if r.ref else ""))

    config.output_dir.mkdir(parents=True, exist_ok=True)
    write_records(records, config.output_dir / RECORDS_FILENAME)

    status_counts: dict[str, int] = {}
    for row in statuses:
        status_counts[row["status"]] = status_counts.get(row["status"], 0) + 1
    manifest = RunManifest(
        version=__version__,
        language=language,
        config=_config_snapshot(config),
        exemplar_ids=exemplar_ids,
        exemplar_composition=[
            {
                "id": entry.id,
                "set": entry.set_tag.name,
                "gender": entry.gender_tag.value if entry.gender_tag else None,
                "ref": ref.value,
            }
            for entry, ref in exemplars
        ],
        judged_ids=judged_ids,
        statuses=statuses,
        status_counts=status_counts,
        started_at=started_at,
        finished_at=datetime.now(timezone.utc).isoformat(),
    )
    manifest_path = config.output_dir / MANIFEST_FILENAME
    manifest_path.write_text(
        json.dumps(manifest.to_json(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def _verdict_consistency(verdict) -> Consistency:
    if verdict is None:
        return Consistency.NOT_APPLICABLE
    return check_consistency(verdict)


# --- records persistence -----------------------------------------------------


def write_records(records: Sequence[EvalRecord], path: str | Path) -> None:
    lines = [json.dumps(record_to_json(r), ensure_ascii=False) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_records(path: str | Path) -> list[EvalRecord]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataFormatError(f"records file not found: {path}") from None
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{lineno}: not valid JSON: {exc}") from None
        records.append(record_from_json(obj))
    return records


# --- rendering ----------------------------------------------------------------


def format_percent(value: Fraction) -> str:
    """Exact half-even rounding of a fraction in [0, 1] to a percent string."""
    scaled = value * 10000  # hundredths of a percent
    quotient, remainder = divmod(scaled.numerator, scaled.denominator)
    doubled = 2 * remainder
    if doubled > scaled.denominator or (doubled == scaled.denominator and quotient % 2 == 1):
        quotient += 1
    return f"{quotient // 100}.{quotient % 100:02d}"


def _cell(table: MetricsTable, row: str, col: str) -> str:
    correct, total = table.counts(row, col)
    if total == 0:
        return "-"
    return f"{format_percent(Fraction(correct, total))} ({correct}/{total})"


_ROW_TITLES = (("SET_G", "Set-G"), ("SET_N", "Set-N"), ("OVERALL", "Overall"))


def _markdown_accuracy(table: MetricsTable, title: str) -> list[str]:
    lines = [f"### {title}", ""]
    lines.append("| Split | REF-G | REF-N | OVERALL |")
    lines.append("| --- | --- | --- | --- |")
    for row_key, row_title in _ROW_TITLES:
        cells = [_cell(table, row_key, col) for col in ("REF_G", "REF_N", "OVERALL")]
        lines.append(f"| {row_title} | {cells[0]} | {cells[1]} | {cells[2]} |")
    lines.append("")
    return lines


def _markdown_prf(prf, title: str) -> list[str]:
    lines = [f"### {title}", ""]
    lines.append("| Precision | Recall | F1 | TP | FP | FN | TN |")
    lines.append("| --- | --- | --- | --- | --- | --- | --- |")
    lines.append(
        f"| {format_percent(prf.precision)} | {format_percent(prf.recall)} | "
        f"{format_percent(prf.f1)} | {prf.tp} | {prf.fp} | {prf.fn} | {prf.tn} |"
    )
    if prf.degenerate:
        lines.append("")
        lines.append(f"Degenerate (empty denominator): {', '.join(prf.degenerate)}.")
    lines.append("")
    return lines


def render_tables(records_path: str | Path, fmt: str = "markdown") -> str:
    """Render one report per (model, strategy, language) partition of a record file."""
    if fmt not in ("markdown", "csv"):
        raise ConfigError(f"unknown report format {fmt!r} (markdown or csv)")
    records = read_records(records_path)
    if fmt == "markdown":
        return _render_markdown(records, Path(records_path))
    return _render_csv(records)


def _partitions(records: Sequence[EvalRecord]) -> list[tuple[tuple[str, str, str], list[EvalRecord]]]:
    groups: dict[tuple[str, str, str], list[EvalRecord]] = {}
    for record in records:
        groups.setdefault((record.model_id, record.strategy.value, record.language), []).append(record)
    return sorted(groups.items())


def _render_markdown(records: Sequence[EvalRecord], source: Path) -> str:
    lines = ["# Judge evaluation report", ""]
    if not records:
        lines.append(f"WARNING: no records in {source}; nothing to report.")
        lines.append("")
        return "\n".join(lines)
    for (model_id, strategy_name, language), group in _partitions(records):
        strategy = Strategy(strategy_name)
        lines.append(f"## {model_id} / {strategy_name} / {language}")
        lines.append("")
        ref_records = [r for r in group if r.ref is not None]
        hyp_records = [r for r in group if r.ref is None]
        if ref_records:
            table = accuracy_table(ref_records, Comparison.TARGET_ONLY_BINARY)
            lines.extend(_markdown_accuracy(table, "Accuracy, target-only comparison (binary labels)"))
            if strategy.takes_source:
                ternary = accuracy_table(ref_records, Comparison.SOURCE_TARGET_TERNARY)
                lines.extend(
                    _markdown_accuracy(ternary, "Accuracy, source-target comparison (ternary labels)")
                )
        if hyp_records:
            prf = precision_recall(hyp_records)
            lines.extend(
                _markdown_prf(prf, f"Precision/recall, positive class {prf.positive_class.wire}")
            )
        if not ref_records and not hyp_records:
            lines.append(f"WARNING: no usable records for {model_id}/{strategy_name}; table omitted.")
            lines.append("")
        if strategy.wants_phrases and group:
            applicable = sum(1 for r in group if r.consistency is not Consistency.NOT_APPLICABLE)
            consistent = sum(1 for r in group if r.consistency is Consistency.CONSISTENT)
            if applicable:
                rate = Fraction(consistent, applicable)
                lines.append(
                    f"Phrase/label consistency rate: {format_percent(rate)} "
                    f"({consistent}/{applicable} applicable)."
                )
            else:
                lines.append("Phrase/label consistency rate: not applicable (no validated verdicts).")
            lines.append("")
            normalized = sum(1 for r in group if r.spans_verbatim is False)
            if normalized:
                lines.append(
                    f"Span diagnostic: {normalized} verdicts contain phrase spans "
                    "that are not verbatim substrings of the judged sentence."
                )
                lines.append("")
    lines.append(ROUNDING_FOOTER)
    lines.append("")
    return "\n".join(lines)


def _render_csv(records: Sequence[EvalRecord]) -> str:
    buffer = io.StringIO()
    table_writer = csv_writer(buffer, lineterminator="\n")
    table_writer.writerow(
        ["type", "model", "strategy", "language", "section", "split", "ref", "correct", "total", "value"]
    )
    if not records:
        return buffer.getvalue()
    for (model_id, strategy_name, language), group in _partitions(records):
        strategy = Strategy(strategy_name)
        ref_records = [r for r in group if r.ref is not None]
        hyp_records = [r for r in group if r.ref is None]
        comparisons = [("target_only_binary", Comparison.TARGET_ONLY_BINARY)]
        if strategy.takes_source:
            comparisons.append(("source_target_ternary", Comparison.SOURCE_TARGET_TERNARY))
        if ref_records:
            for section, comparison in comparisons:
                table = accuracy_table(ref_records, comparison)
                for row_key, _ in _ROW_TITLES:
                    for col in ("REF_G", "REF_N", "OVERALL"):
                        correct, total = table.counts(row_key, col)
                        value = format_percent(Fraction(correct, total)) if total else ""
                        table_writer.writerow(
                            ["accuracy", model_id, strategy_name, language, section, row_key, col, correct, total, value]
                        )
        if hyp_records:
            prf = precision_recall(hyp_records)
            for name, fraction in (
                ("precision", prf.precision),
                ("recall", prf.recall),
                ("f1", prf.f1),
            ):
                table_writer.writerow(
                    ["prf", model_id, strategy_name, language, name, "", "", "", "", format_percent(fraction)]
                )
            table_writer.writerow(
                ["prf_counts", model_id, strategy_name, language,
                 f"tp={prf.tp};fp={prf.fp};fn={prf.fn};tn={prf.tn}", "", "", "", "",
                 ";".join(prf.degenerate)]
            )
        if strategy.wants_phrases and group:
            rate = consistency_rate(group)
            table_writer.writerow(
                ["consistency", model_id, strategy_name, language, "", "", "", "", "", format_percent(rate)]
            )
            normalized = sum(1 for r in group if r.spans_verbatim is False)
            checked = sum(1 for r in group if r.spans_verbatim is not None)
            if normalized:
                table_writer.writerow(
                    ["span_diagnostic", model_id, strategy_name, language, "", "", "", normalized, checked, ""]
                )
    return buffer.getvalue()


def list_disagreements(records_path: str | Path, limit: int) -> list[tuple[str, str, str, str]]:
    """Items whose prediction misses gold, ordered by entry id, truncated to limit.

    Predictions from source-aware strategies are collapsed before matching
    binary gold labels; failed items appear with predicted INVALID.
    """
    records = read_records(records_path)
    rows = []
    binary = {Label.GENDERED, Label.NEUTRAL}
    for record in records:
        comparison = (
            Comparison.TARGET_ONLY_BINARY if record.gold in binary else Comparison.SOURCE_TARGET_TERNARY
        )
        if is_correct(record, comparison):
            continue
        rows.append(
            (
                record.entry_id,
                record.gold.wire,
                record.predicted.wire if record.predicted else "INVALID",
                record.consistency.value,
            )
        )
    rows.sort(key=lambda row: row[0])
    return rows[: max(limit, 0)]
