"""Parse consolidated EU regulation text into an addressable corpus.

Detects three kinds of units: numbered recitals in the preamble
(``(1) ...``), article headings (``Article 5``) and annex headings
(``ANNEX III``). Units are stored in a line-delimited record format
(``.units`` files) and looked up by canonical reference strings such as
``article:5`` or ``annex:III``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path


class CorpusError(Exception):
    """Base class for corpus parsing and lookup failures."""


class EmptyDocument(CorpusError):
    """No unit headings were found in the input text."""


class DuplicateUnit(CorpusError):
    """The same unit reference was detected twice (malformed input)."""


class UnknownRef(CorpusError):
    """A reference does not resolve to any unit in the corpus."""


class BadRef(CorpusError):
    """A reference string does not parse or violates the number grammar."""


class IoFailure(CorpusError):
    """Reading or writing a corpus file failed."""


class UnitKind(str, Enum):
    ARTICLE = "article"
    RECITAL = "recital"
    ANNEX = "annex"


# Strict Roman numeral grammar, uppercase only (annex numbering).
_ROMAN_RE = re.compile(r"^M{0,3}(CM|CD|D?C{0,3})(XC|XL|L?X{0,3})(IX|IV|V?I{0,3})$")

_ARTICLE_HEADING_RE = re.compile(r"^Article\s+(\d+)\s*$")
_ANNEX_HEADING_RE = re.compile(r"^ANNEX\s+([IVXLCDM]+)\s*$")
_RECITAL_RE = re.compile(r"^\((\d+)\)\s*(.*)$")
# Chapter/section lines are structural noise, not units and not body text.
_STRUCTURAL_RE = re.compile(r"^(CHAPTER\s+[IVXLCDM]+|SECTION\s+\d+)\b")
_NUMBERED_PARA_RE = re.compile(r"^(\d+)\.\s+")


def _valid_roman(s: str) -> bool:
    return bool(s) and _ROMAN_RE.match(s) is not None


_ROMAN_VALUES = {"I": 1, "V": 5, "X": 10, "L": 50, "C": 100, "D": 500, "M": 1000}


def roman_to_int(s: str) -> int:
    """Value of a strict uppercase Roman numeral (annex ordering)."""
    if not _valid_roman(s):
        raise BadRef(f"not a Roman numeral: {s!r}")
    total = 0
    for ch, nxt in zip(s, list(s[1:]) + [None]):
        value = _ROMAN_VALUES[ch]
        total += -value if nxt and value < _ROMAN_VALUES[nxt] else value
    return total


@dataclass(frozen=True, order=True)
class UnitRef:
    """Typed reference to one unit: articles/recitals by decimal, annexes by Roman numeral."""

    kind: UnitKind
    number: str

    def __post_init__(self) -> None:
        if self.kind in (UnitKind.ARTICLE, UnitKind.RECITAL):
            if not self.number.isdigit() or int(self.number) <= 0:
                raise BadRef(f"{self.kind.value} number must be a positive integer: {self.number!r}")
        else:
            if not _valid_roman(self.number):
                raise BadRef(f"annex number must be a Roman numeral: {self.number!r}")

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.number}"

    @classmethod
    def parse(cls, text: str) -> "UnitRef":
        kind_str, sep, number = text.partition(":")
        if not sep or not number:
            raise BadRef(f"expected '<kind>:<number>', got {text!r}")
        try:
            kind = UnitKind(kind_str.lower())
        except ValueError:
            raise BadRef(f"unknown unit kind {kind_str!r}") from None
        return cls(kind, number)


@dataclass(frozen=True)
class Paragraph:
    label: str  # "1", "2", ... or "" for unnumbered text
    text: str


@dataclass(frozen=True)
class DocUnit:
    ref: UnitRef
    title: str | None
    body: str
    paragraphs: tuple[Paragraph, ...]


@dataclass(frozen=True)
class CorpusMeta:
    source: str
    version: str
    ingested_at: str


@dataclass(frozen=True)
class Corpus:
    """Immutable ordered collection of units with reference lookup."""

    meta: CorpusMeta
    units: tuple[DocUnit, ...]
    _index: dict[UnitRef, int] = field(repr=False, compare=False, default_factory=dict)

    @classmethod
    def from_units(cls, meta: CorpusMeta, units: list[DocUnit] | tuple[DocUnit, ...]) -> "Corpus":
        index: dict[UnitRef, int] = {}
        for pos, unit in enumerate(units):
            if unit.ref in index:
                raise DuplicateUnit(f"unit {unit.ref} appears more than once")
            index[unit.ref] = pos
        return cls(meta=meta, units=tuple(units), _index=index)

    def __contains__(self, ref: UnitRef) -> bool:
        return ref in self._index

    def __len__(self) -> int:
        return len(self.units)

    def get(self, ref: UnitRef) -> DocUnit:
        try:
            return self.units[self._index[ref]]
        except KeyError:
            raise UnknownRef(f"no unit {ref} in corpus") from None

    def counts_by_kind(self) -> dict[str, int]:
        counts = {kind.value: 0 for kind in UnitKind}
        for unit in self.units:
            counts[unit.ref.kind.value] += 1
        return counts

    def refs(self, kind: UnitKind | None = None) -> list[UnitRef]:
        return [u.ref for u in self.units if kind is None or u.ref.kind == kind]


def get_unit(corpus: Corpus, ref: UnitRef) -> DocUnit:
    return corpus.get(ref)


def _normalize_line(line: str) -> str:
    # Collapse runs of spaces/tabs; paragraph structure is carried by lines.
    return re.sub(r"[ \t]+", " ", line).strip()


def _segment_paragraphs(lines: list[str]) -> tuple[Paragraph, ...]:
    """Numbered top-level lines ('1. ...') start labeled paragraphs; other
    lines attach to the preceding paragraph (or to a leading unlabeled one)."""
    paragraphs: list[tuple[str, list[str]]] = []
    for line in lines:
        m = _NUMBERED_PARA_RE.match(line)
        if m:
            paragraphs.append((m.group(1), [line]))
        elif paragraphs:
            paragraphs[-1][1].append(line)
        else:
            paragraphs.append(("", [line]))
    return tuple(Paragraph(label, "\n".join(parts)) for label, parts in paragraphs)


def _finish_unit(ref: UnitRef, title: str | None, body_lines: list[str]) -> DocUnit:
    lines = [ln for ln in (_normalize_line(l) for l in body_lines) if ln]
    paragraphs = _segment_paragraphs(lines)
    body = "\n".join(p.text for p in paragraphs)
    return DocUnit(ref=ref, title=title, body=body, paragraphs=paragraphs)


def parse_document(raw: str, source: str = "", version: str = "",
                   ingested_at: str | None = None) -> Corpus:
    """Parse one consolidated regulation text into a Corpus.

    Recitals are recognised only before the first Article/ANNEX heading, so
    parenthesised numbering inside article bodies (e.g. definition lists) is
    not misread. Raises EmptyDocument when no headings are found and
    DuplicateUnit when a reference repeats. ingested_at defaults to the
    current UTC time; pass a fixed value for byte-reproducible output.
    """
    units: list[DocUnit] = []
    recitals: list[tuple[str, list[str]]] = []  # (number, text lines)

    current_ref: UnitRef | None = None
    current_title: str | None = None
    want_title = False
    body_lines: list[str] = []
    in_preamble = True

    def close_current() -> None:
        nonlocal current_ref, current_title, body_lines
        if current_ref is not None:
            units.append(_finish_unit(current_ref, current_title, body_lines))
        current_ref, current_title, body_lines = None, None, []

    for raw_line in raw.splitlines():
        line = _normalize_line(raw_line)
        article_m = _ARTICLE_HEADING_RE.match(line)
        annex_m = _ANNEX_HEADING_RE.match(line)

        if article_m or annex_m:
            close_current()
            in_preamble = False
            if article_m:
                current_ref = UnitRef(UnitKind.ARTICLE, article_m.group(1))
            else:
                current_ref = UnitRef(UnitKind.ANNEX, annex_m.group(1))
            want_title = True
            continue

        if _STRUCTURAL_RE.match(line):
            continue

        if in_preamble:
            recital_m = _RECITAL_RE.match(line)
            if recital_m:
                recitals.append((recital_m.group(1), [recital_m.group(2)] if recital_m.group(2) else []))
            elif line and recitals:
                recitals[-1][1].append(line)
            continue

        if want_title:
            if not line:
                continue
            current_title = line
            want_title = False
            continue

        body_lines.append(raw_line)

    close_current()

    recital_units = []
    for number, text_lines in recitals:
        text = " ".join(text_lines).strip()
        ref = UnitRef(UnitKind.RECITAL, number)
        recital_units.append(DocUnit(ref=ref, title=None, body=text, paragraphs=(Paragraph("", text),)))

    all_units = recital_units + units
    if not all_units:
        raise EmptyDocument("no article, recital or annex headings found")

    meta = CorpusMeta(
        source=source,
        version=version,
        ingested_at=ingested_at or datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    return Corpus.from_units(meta, all_units)


def _unit_to_record(unit: DocUnit) -> dict:
    return {
        "ref": str(unit.ref),
        "kind": unit.ref.kind.value,
        "number": unit.ref.number,
        "title": unit.title,
        "body": unit.body,
        "paragraphs": [{"label": p.label, "text": p.text} for p in unit.paragraphs],
    }


def _unit_from_record(record: dict) -> DocUnit:
    ref = UnitRef.parse(record["ref"])
    if ref.kind.value != record["kind"] or ref.number != record["number"]:
        raise IoFailure(f"inconsistent unit record for {record['ref']}")
    return DocUnit(
        ref=ref,
        title=record["title"],
        body=record["body"],
        paragraphs=tuple(Paragraph(p["label"], p["text"]) for p in record["paragraphs"]),
    )


def store_corpus(corpus: Corpus, destination: str | Path) -> int:
    """Write the corpus as UTF-8 line-delimited records; returns units written.

    The first line is a meta record ({"meta": ...}); each following line is
    one unit record.
    """
    lines = [json.dumps({"meta": {
        "source": corpus.meta.source,
        "version": corpus.meta.version,
        "ingested_at": corpus.meta.ingested_at,
    }}, ensure_ascii=False)]
    lines.extend(json.dumps(_unit_to_record(u), ensure_ascii=False) for u in corpus.units)
    try:
        Path(destination).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write corpus to {destination}: {exc}") from exc
    return len(corpus.units)


def load_corpus(source: str | Path) -> Corpus:
    try:
        text = Path(source).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read corpus from {source}: {exc}") from exc

    meta = CorpusMeta(source="", version="", ingested_at="")
    units: list[DocUnit] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise IoFailure(f"{source}:{lineno}: bad record: {exc}") from exc
        if "meta" in record and "ref" not in record:
            m = record["meta"]
            meta = CorpusMeta(
                source=m.get("source", ""),
                version=m.get("version", ""),
                ingested_at=m.get("ingested_at", ""),
            )
        else:
            units.append(_unit_from_record(record))
    if not units:
        raise EmptyDocument(f"no unit records in {source}")
    return Corpus.from_units(meta, units)
