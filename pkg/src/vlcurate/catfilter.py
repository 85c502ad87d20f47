"""Streaming filters over caption records.

Each record carries a caption, an optional dependency parse, OCR spots found
in the paired image, and an optional alignment score.  Filters are pure
record-level predicates; the pipeline applies them in a declared order,
attributes every drop to the first failing stage, and keeps per-stage
counters that merge associatively.

Records travel as line-delimited JSON so multi-billion-row corpora can be
processed without ever materialising more than one record.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

from . import semgraph
from .semgraph import DependencyParse, ParseError

# decision reasons
PASS = "PASS"
FAIL_COMPLEXITY = "FAIL_COMPLEXITY"
FAIL_ACTION = "FAIL_ACTION"
FAIL_TEXTSPOT = "FAIL_TEXTSPOT"
FAIL_SCORE = "FAIL_SCORE"
FAIL_NO_PARSE = "FAIL_NO_PARSE"

DEFAULT_MIN_COMPLEXITY = 1
DEFAULT_SPOT_CONFIDENCE = 0.8
DEFAULT_SPOT_MATCH_CHARS = 5
DEFAULT_MIN_SCORE = 0.35


@dataclass(frozen=True)
class OcrSpot:
    text: str
    confidence: float


@dataclass
class CaptionRecord:
    record_id: str
    caption: str
    parse: DependencyParse | None = None
    spots: tuple[OcrSpot, ...] = ()
    alignment_score: float | None = None
    raw: str | None = None  # original JSONL line, echoed verbatim when kept


@dataclass(frozen=True)
class FilterDecision:
    keep: bool
    reason: str

    def __post_init__(self):
        if self.keep != (self.reason == PASS):
            raise ValueError("keep flag must match reason")


_PASS = FilterDecision(True, PASS)


def _effective_parse(record: CaptionRecord) -> DependencyParse | None:
    # an empty caption needs no parser: its parse is the empty token list
    if record.parse is None and not record.caption.strip():
        return DependencyParse(())
    return record.parse


def complexity_filter(record: CaptionRecord,
                      min_level: int = DEFAULT_MIN_COMPLEXITY) -> FilterDecision:
    """Keep records whose caption complexity reaches ``min_level``."""
    parse = _effective_parse(record)
    if parse is None:
        return FilterDecision(False, FAIL_NO_PARSE)
    level = semgraph.complexity(semgraph.build_graph(parse))
    if level >= min_level:
        return _PASS
    return FilterDecision(False, FAIL_COMPLEXITY)


def action_filter(record: CaptionRecord) -> FilterDecision:
    """Keep records whose caption mentions at least one action."""
    parse = _effective_parse(record)
    if parse is None:
        return FilterDecision(False, FAIL_NO_PARSE)
    if semgraph.action_count(semgraph.build_graph(parse)) >= 1:
        return _PASS
    return FilterDecision(False, FAIL_ACTION)


_NON_ALNUM = re.compile(r"[^a-z0-9]+")


def normalize_text(text: str) -> str:
    """Lowercase and strip everything that is not a letter or digit."""
    return _NON_ALNUM.sub("", text.lower())


def spot_matches_caption(spot_text: str, caption: str,
                         min_match_chars: int) -> bool:
    """True if >= min_match_chars normalized spot characters occur
    contiguously in the normalized caption (sliding-window exact match)."""
    s = normalize_text(spot_text)
    c = normalize_text(caption)
    if min_match_chars < 1:
        raise ValueError("min_match_chars must be >= 1")
    if len(s) < min_match_chars or len(c) < min_match_chars:
        return False
    for start in range(len(s) - min_match_chars + 1):
        if s[start:start + min_match_chars] in c:
            return True
    return False


def textspot_filter(record: CaptionRecord,
                    conf_threshold: float = DEFAULT_SPOT_CONFIDENCE,
                    min_match_chars: int = DEFAULT_SPOT_MATCH_CHARS) -> FilterDecision:
    """Drop records where a confident OCR spot re-reads part of the caption."""
    for spot in record.spots:
        if spot.confidence >= conf_threshold and spot_matches_caption(
                spot.text, record.caption, min_match_chars):
            return FilterDecision(False, FAIL_TEXTSPOT)
    return _PASS


def score_filter(record: CaptionRecord,
                 min_score: float = DEFAULT_MIN_SCORE) -> FilterDecision:
    """Drop records whose alignment score falls below ``min_score``.

    Records without a score pass: the filter is disabled for them.
    Equality keeps ("below threshold" drops strictly smaller scores).
    """
    if record.alignment_score is None:
        return _PASS
    if record.alignment_score >= min_score:
        return _PASS
    return FilterDecision(False, FAIL_SCORE)


# ---------------------------------------------------------------------------
# Pipeline

FilterFn = Callable[[CaptionRecord], FilterDecision]

FILTER_NAMES = ("score", "complexity", "action", "textspot")
_SHORT_NAMES = {"s": "score", "c": "complexity", "a": "action", "t": "textspot"}


def make_stage(name: str,
               min_complexity: int = DEFAULT_MIN_COMPLEXITY,
               spot_confidence: float = DEFAULT_SPOT_CONFIDENCE,
               spot_match_chars: int = DEFAULT_SPOT_MATCH_CHARS,
               min_score: float = DEFAULT_MIN_SCORE) -> tuple[str, FilterFn]:
    """Resolve a filter name ("score", "c", "textspot", ...) to a stage."""
    name = _SHORT_NAMES.get(name, name)
    if name == "score":
        return name, lambda r: score_filter(r, min_score)
    if name == "complexity":
        return name, lambda r: complexity_filter(r, min_complexity)
    if name == "action":
        return name, action_filter
    if name == "textspot":
        return name, lambda r: textspot_filter(r, spot_confidence, spot_match_chars)
    raise ValueError(f"unknown filter {name!r}")


@dataclass
class StageStats:
    name: str
    examined: int = 0
    kept: int = 0
    dropped: int = 0


@dataclass
class FilterStats:
    stages: list[StageStats] = field(default_factory=list)
    malformed: int = 0
    examined: int = 0  # records entering the pipeline, malformed included
    kept: int = 0
    dropped: int = 0

    def merge(self, other: "FilterStats") -> "FilterStats":
        """Associative merge for shard-parallel runs (stages must align)."""
        if [s.name for s in self.stages] != [s.name for s in other.stages]:
            raise ValueError("cannot merge stats with different stages")
        out = FilterStats(
            stages=[StageStats(a.name, a.examined + b.examined, a.kept + b.kept,
                               a.dropped + b.dropped)
                    for a, b in zip(self.stages, other.stages)],
            malformed=self.malformed + other.malformed,
            examined=self.examined + other.examined,
            kept=self.kept + other.kept,
            dropped=self.dropped + other.dropped,
        )
        return out

    def as_tsv(self) -> str:
        def pct(kept: int, examined: int) -> str:
            return f"{100.0 * kept / examined:.2f}" if examined else "0.00"

        rows = ["stage\texamined\tkept\tdropped\tretained_pct"]
        for s in self.stages:
            rows.append(f"{s.name}\t{s.examined}\t{s.kept}\t{s.dropped}\t"
                        f"{pct(s.kept, s.examined)}")
        rows.append(f"malformed\t{self.malformed}\t0\t{self.malformed}\t"
                    f"{pct(0, self.malformed)}")
        rows.append(f"pipeline\t{self.examined}\t{self.kept}\t{self.dropped}\t"
                    f"{pct(self.kept, self.examined)}")
        return "\n".join(rows) + "\n"


def decide(record: CaptionRecord,
           stages: Sequence[tuple[str, FilterFn]]) -> tuple[FilterDecision, int | None]:
    """First failing stage wins; returns (decision, failing stage index)."""
    for idx, (_, fn) in enumerate(stages):
        decision = fn(record)
        if not decision.keep:
            return decision, idx
    return _PASS, None


def run_pipeline(records: Iterable[CaptionRecord | "BadRecord"],
                 stages: Sequence[tuple[str, FilterFn]],
                 stats: FilterStats | None = None) -> Iterator[CaptionRecord]:
    """Yield records that pass every stage, in input order.

    Pass a ``FilterStats`` to read the counters after the stream is
    consumed; they are updated in place record by record.  Unreadable
    records and records whose parse violates the tree invariants are
    tallied as malformed and skipped; the stream never aborts.
    """
    if stats is None:
        stats = FilterStats()
    stats.stages.extend(StageStats(name) for name, _ in stages)
    for record in records:
        stats.examined += 1
        if isinstance(record, BadRecord):
            stats.malformed += 1
            continue
        try:
            decision, fail_idx = decide(record, stages)
        except ParseError:
            stats.malformed += 1
            continue
        reached = len(stages) if fail_idx is None else fail_idx + 1
        for i in range(reached):
            stats.stages[i].examined += 1
            if fail_idx == i:
                stats.stages[i].dropped += 1
            else:
                stats.stages[i].kept += 1
        if decision.keep:
            stats.kept += 1
            yield record
        else:
            stats.dropped += 1


# ---------------------------------------------------------------------------
# Line-delimited record I/O


@dataclass(frozen=True)
class BadRecord:
    """Placeholder for a line that could not be decoded."""

    line_number: int
    error: str


def record_from_json(line: str) -> CaptionRecord:
    obj = json.loads(line)
    if not isinstance(obj, dict):
        raise ValueError("record line must be a JSON object")
    record_id = obj.get("id")
    if not isinstance(record_id, str) or not record_id:
        raise ValueError("record id must be a non-empty string")
    caption = obj.get("caption", "")
    if not isinstance(caption, str):
        raise ValueError("caption must be a string")
    dep = None
    if obj.get("conllu") is not None:
        dep = semgraph.parse_conllu_block(obj["conllu"])
    spots = []
    for spot in obj.get("spots", []):
        conf = float(spot["confidence"])
        if not 0.0 <= conf <= 1.0:
            raise ValueError(f"spot confidence {conf} outside [0, 1]")
        spots.append(OcrSpot(text=str(spot["text"]), confidence=conf))
    score = obj.get("alignment_score")
    if score is not None:
        score = float(score)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"alignment score {score} outside [0, 1]")
    return CaptionRecord(record_id=record_id, caption=caption, parse=dep,
                         spots=tuple(spots), alignment_score=score, raw=line)


def record_to_json(record: CaptionRecord) -> str:
    """Canonical serialization; echoes the original line when present."""
    if record.raw is not None:
        return record.raw
    obj: dict = {"id": record.record_id, "caption": record.caption}
    if record.parse is not None:
        lines = []
        for i, t in enumerate(record.parse.tokens):
            head = 0 if t.head is None else t.head + 1
            lines.append(f"{i + 1}\t{t.form}\t{t.lemma}\t{t.upos}\t_\t_\t"
                         f"{head}\t{t.deprel}\t_\t_")
        obj["conllu"] = "\n".join(lines)
    if record.spots:
        obj["spots"] = [{"text": s.text, "confidence": s.confidence}
                        for s in record.spots]
    if record.alignment_score is not None:
        obj["alignment_score"] = record.alignment_score
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def read_records(lines: Iterable[str]) -> Iterator[CaptionRecord | BadRecord]:
    """Decode JSONL lines; '#' comment lines and blank lines are skipped."""
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            yield record_from_json(stripped)
        except (ValueError, KeyError, TypeError, ParseError) as exc:
            yield BadRecord(line_number=lineno, error=str(exc))
