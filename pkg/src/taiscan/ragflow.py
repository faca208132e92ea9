"""Retrieval-augmented assessment pipeline.

Flow: compose a canonical query from the five input fields, rewrite it via
the generation backend for search relevance, embed and retrieve context from
the ANN index, assemble the standardized answer prompt, parse the structured
output block, validate every cited reference against the corpus, and sort the
cited articles into their obligation groups.

Every step is deterministic given fixed backends, so replay fixtures make the
whole pipeline reproducible bit for bit.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from . import data_path
from .annindex import AnnIndex, IndexItem, build as build_index, default_search_budget
from .backends import EmptyCompletion, GenerationRequest, normalize
from .corpus import Corpus, DocUnit, UnitKind, UnitRef, roman_to_int


class RagflowError(Exception):
    pass


class MalformedOutput(RagflowError):
    """The generation output has no parseable structured block."""


class UnknownRiskLevel(MalformedOutput):
    """The structured block names a risk level outside the closed enum."""


class Role(str, Enum):
    PROVIDER = "provider"
    DEPLOYER = "deployer"

    @property
    def display(self) -> str:
        return self.value.capitalize()


class AssessmentRiskLevel(str, Enum):
    LOW_RISK = "Low-Risk"
    MEDIUM_RISK = "Medium-Risk"
    HIGH_RISK = "High-Risk"
    PROHIBITED = "Prohibited"


class ReferenceGroup(str, Enum):
    HORIZONTAL = "horizontal_obligation"
    CLASSIFICATION = "classification_resource"
    SCENARIO_SPECIFIC = "scenario_specific_obligation"


HORIZONTAL_ARTICLES = frozenset({"9", "12", "13", "14"})
CLASSIFICATION_ARTICLES = frozenset({"5", "6"})


@dataclass(frozen=True)
class AssessmentInput:
    role: Role
    domain: str
    system_type: str
    input_data: str
    intended_use: str

    def __post_init__(self) -> None:
        for name in ("domain", "system_type", "input_data", "intended_use"):
            if not getattr(self, name).strip():
                raise ValueError(f"{name} must be non-empty")


@dataclass(frozen=True)
class PromptTemplate:
    rewrite_template: str
    answer_template: str
    version: str


@dataclass(frozen=True)
class ParsedAssessment:
    risk_level: AssessmentRiskLevel
    articles: frozenset[UnitRef]
    recitals: frozenset[UnitRef]
    annexes: frozenset[UnitRef]
    warnings: tuple[str, ...]


@dataclass(frozen=True)
class AssessmentResult:
    risk_level: AssessmentRiskLevel
    articles: frozenset[UnitRef]
    recitals: frozenset[UnitRef]
    annexes: frozenset[UnitRef]
    article_groups: dict[UnitRef, ReferenceGroup]
    retrieved_context: tuple[tuple[UnitRef, float], ...]
    rewritten_query: str
    raw_generation: str
    prompt_version: str
    warnings: tuple[str, ...]


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------

_VERSION_LINE_RE = re.compile(r"^#\s*version:\s*(\S+)\s*$")
_PLACEHOLDER_RE = re.compile(r"\{\{(\w+)\}\}")


def _load_template_file(path: Path) -> tuple[str, str]:
    text = path.read_text(encoding="utf-8")
    first, _, body = text.partition("\n")
    m = _VERSION_LINE_RE.match(first)
    if not m:
        raise ValueError(f"{path}: first line must be a '# version: <id>' comment")
    return body, m.group(1)


def load_templates(rewrite_path: str | Path | None = None,
                   answer_path: str | Path | None = None) -> PromptTemplate:
    rewrite_body, rewrite_version = _load_template_file(
        Path(rewrite_path or data_path("templates", "rewrite.tmpl")))
    answer_body, answer_version = _load_template_file(
        Path(answer_path or data_path("templates", "answer.tmpl")))
    return PromptTemplate(
        rewrite_template=rewrite_body,
        answer_template=answer_body,
        version=f"{rewrite_version}+{answer_version}",
    )


def render_template(body: str, values: dict[str, str]) -> str:
    def sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in values:
            raise ValueError(f"unresolved template placeholder {{{{{name}}}}}")
        return values[name]

    return _PLACEHOLDER_RE.sub(sub, body)


# ---------------------------------------------------------------------------
# Pipeline steps
# ---------------------------------------------------------------------------

_FIELD_LABELS = (
    ("Role", lambda i: i.role.display),
    ("Domain of application", lambda i: i.domain.strip()),
    ("Type of AI system", lambda i: i.system_type.strip()),
    ("Type of input data", lambda i: i.input_data.strip()),
    ("Intended use", lambda i: i.intended_use.strip()),
)


def compose_query(input_: AssessmentInput) -> str:
    """Canonical five-field serialization; fixed labels and order."""
    return "\n".join(f"{label}: {get(input_)}" for label, get in _FIELD_LABELS)


def rewrite_query(query: str, backend, template: PromptTemplate) -> tuple[str, bool]:
    """Expand the query for retrieval. Returns (text, fallback_used); an empty
    completion degrades to the original query instead of failing the pipeline."""
    if not query.strip():
        raise ValueError("query must be non-empty")
    prompt = render_template(template.rewrite_template, {"query": query})
    try:
        return backend.generate(GenerationRequest(prompt=prompt)), False
    except EmptyCompletion:
        return query, True


def unit_embedding_text(unit: DocUnit) -> str:
    """Canonical text embedded for a unit (title plus body when titled)."""
    return f"{unit.title}\n{unit.body}" if unit.title else unit.body


def index_corpus(corpus: Corpus, backend, kinds: tuple[str, ...] | None = None,
                 tree_count: int = 16, max_leaf_size: int = 16, seed: int = 0) -> AnnIndex:
    """Embed corpus units and build the ANN index; item ids follow corpus order."""
    wanted = set(kinds) if kinds else None
    items = []
    for pos, unit in enumerate(corpus.units):
        if wanted is not None and unit.ref.kind.value not in wanted:
            continue
        vec = normalize(backend.embed(unit_embedding_text(unit)))
        items.append(IndexItem(item_id=pos, ref=unit.ref, vector=vec))
    return build_index(items, tree_count=tree_count, max_leaf_size=max_leaf_size, seed=seed)


def retrieve(query_text: str, k: int, index: AnnIndex, corpus: Corpus, backend,
             kinds: tuple[str, ...] | None = ("article",),
             search_budget: int | None = None) -> list[tuple[DocUnit, float]]:
    """Embed the query and return the top-k corpus units by similarity,
    optionally restricted to unit kinds (articles by default)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = normalize(backend.embed(query_text))
    wanted = set(kinds) if kinds else None
    n = len(index)

    fetch = min(n, k if wanted is None else max(4 * k, k + 16))
    while True:
        budget = max(search_budget or default_search_budget(fetch), fetch)
        ranked = index.query(q, fetch, search_budget=budget)
        hits: list[tuple[DocUnit, float]] = []
        for item_id, dist in ranked:
            ref = index.ref_for(item_id)
            if wanted is not None and ref.kind.value not in wanted:
                continue
            # UnknownRef here means the index was built against another corpus.
            unit = corpus.get(ref)
            hits.append((unit, 1.0 - dist * dist / 2.0))
        if len(hits) >= k or fetch >= n:
            return hits[:k]
        fetch = min(n, fetch * 2)


def unit_heading(unit: DocUnit) -> str:
    kind = unit.ref.kind
    name = {UnitKind.ARTICLE: "Article", UnitKind.RECITAL: "Recital", UnitKind.ANNEX: "Annex"}[kind]
    head = f"{name} {unit.ref.number}"
    return f"{head} - {unit.title}" if unit.title else head


def format_context(hits: list[tuple[DocUnit, float]]) -> str:
    blocks = []
    for i, (unit, _score) in enumerate(hits, start=1):
        blocks.append(f"[{i}] {unit_heading(unit)}\n{unit.body}")
    return "\n\n".join(blocks)


# ---------------------------------------------------------------------------
# Structured output
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"```(?:assessment)?[ \t]*\n(.*?)```", re.DOTALL)
_BLOCK_FIELD_RE = re.compile(r"^(RISK_LEVEL|ARTICLES|RECITALS|ANNEXES)\s*:\s*(.*)$")
_EMPTY_LIST_VALUES = {"", "-", "none", "n/a"}


def render_assessment_block(risk_level: AssessmentRiskLevel,
                            articles: list[int] | set[int] = (),
                            recitals: list[int] | set[int] = (),
                            annexes: list[str] | set[str] = (),
                            rationale: str = "") -> str:
    """Canonical form of the structured output (what the model is told to emit)."""
    lines = [
        "```assessment",
        f"RISK_LEVEL: {risk_level.value}",
        f"ARTICLES: {', '.join(str(n) for n in sorted(set(articles)))}",
        f"RECITALS: {', '.join(str(n) for n in sorted(set(recitals)))}",
        f"ANNEXES: {', '.join(sorted(set(annexes), key=roman_to_int))}",
        "```",
    ]
    text = "\n".join(lines)
    return f"{text}\n\n{rationale}" if rationale else text


def _extract_block(raw: str) -> str:
    m = _FENCE_RE.search(raw)
    if m and "RISK_LEVEL" in m.group(1):
        return m.group(1)
    # Fall back to a bare field block (models sometimes drop the fence).
    lines = raw.splitlines()
    for start, line in enumerate(lines):
        if line.strip().startswith("RISK_LEVEL"):
            block = []
            for candidate in lines[start:]:
                if _BLOCK_FIELD_RE.match(candidate.strip()):
                    block.append(candidate.strip())
                elif block:
                    break
            return "\n".join(block)
    raise MalformedOutput("no structured assessment block found in output")


def _split_list_value(value: str) -> list[str]:
    return [t.strip() for t in value.split(",") if t.strip().lower() not in _EMPTY_LIST_VALUES]


def parse_assessment_block(raw: str) -> tuple[AssessmentRiskLevel, list[str], list[str], list[str], list[str]]:
    """Extract (risk, article numbers, recital numbers, annex numerals, warnings)
    from the structured block without corpus validation."""
    block = _extract_block(raw)
    fields: dict[str, str] = {}
    for line in block.splitlines():
        m = _BLOCK_FIELD_RE.match(line.strip())
        if m:
            fields.setdefault(m.group(1), m.group(2).strip())
    if "RISK_LEVEL" not in fields:
        raise MalformedOutput("structured block lacks a RISK_LEVEL field")
    try:
        risk = AssessmentRiskLevel(fields["RISK_LEVEL"])
    except ValueError:
        raise UnknownRiskLevel(f"unknown risk level {fields['RISK_LEVEL']!r}") from None

    warnings: list[str] = []

    def numbers(field: str, validator) -> list[str]:
        out = []
        for token in _split_list_value(fields.get(field, "")):
            if validator(token):
                out.append(token)
            else:
                warnings.append(f"{field}: dropped unparseable token {token!r}")
        return out

    articles = numbers("ARTICLES", lambda t: t.isdigit() and int(t) > 0)
    recitals = numbers("RECITALS", lambda t: t.isdigit() and int(t) > 0)

    def valid_roman(t: str) -> bool:
        try:
            roman_to_int(t)
            return True
        except Exception:
            return False

    annexes = numbers("ANNEXES", valid_roman)
    return risk, articles, recitals, annexes, warnings


def parse_assessment(raw: str, corpus: Corpus) -> ParsedAssessment:
    """Parse the structured block and resolve every reference against the
    corpus; unresolvable references are dropped with a warning, not errors."""
    risk, articles, recitals, annexes, warnings = parse_assessment_block(raw)

    def resolve(kind: UnitKind, numbers: list[str]) -> frozenset[UnitRef]:
        kept = set()
        for number in numbers:
            ref = UnitRef(kind, number)
            if ref in corpus:
                kept.add(ref)
            else:
                warnings.append(f"dropped citation of unknown unit {ref}")
        return frozenset(kept)

    return ParsedAssessment(
        risk_level=risk,
        articles=resolve(UnitKind.ARTICLE, articles),
        recitals=resolve(UnitKind.RECITAL, recitals),
        annexes=resolve(UnitKind.ANNEX, annexes),
        warnings=tuple(warnings),
    )


def classify_reference_groups(articles: frozenset[UnitRef] | set[UnitRef]) -> dict[UnitRef, ReferenceGroup]:
    """Static grouping: 9/12/13/14 horizontal, 5/6 classification, rest scenario-specific."""
    groups: dict[UnitRef, ReferenceGroup] = {}
    for ref in articles:
        if ref.number in HORIZONTAL_ARTICLES:
            groups[ref] = ReferenceGroup.HORIZONTAL
        elif ref.number in CLASSIFICATION_ARTICLES:
            groups[ref] = ReferenceGroup.CLASSIFICATION
        else:
            groups[ref] = ReferenceGroup.SCENARIO_SPECIFIC
    return groups


# ---------------------------------------------------------------------------
# End-to-end assessment
# ---------------------------------------------------------------------------


def assess(input_: AssessmentInput, index: AnnIndex, corpus: Corpus,
           embedding_backend, generation_backend, template: PromptTemplate,
           k: int = 10, kinds: tuple[str, ...] | None = ("article",),
           query_override: str | None = None,
           search_budget: int | None = None) -> AssessmentResult:
    """Run the full pipeline; returns a fully validated result with provenance.

    query_override replaces the rewrite step with a hand-specified retrieval
    query (used by evaluation scenario configs)."""
    query = compose_query(input_)
    warnings: list[str] = []
    if query_override is not None:
        rewritten = query_override
        warnings.append("query override in effect; rewrite step skipped")
    else:
        rewritten, fallback = rewrite_query(query, generation_backend, template)
        if fallback:
            warnings.append("rewrite returned an empty completion; original query used")

    hits = retrieve(rewritten, k, index, corpus, embedding_backend, kinds=kinds,
                    search_budget=search_budget)
    prompt = render_template(template.answer_template,
                             {"query": query, "context": format_context(hits)})
    raw = generation_backend.generate(GenerationRequest(prompt=prompt))
    parsed = parse_assessment(raw, corpus)
    warnings.extend(parsed.warnings)

    return AssessmentResult(
        risk_level=parsed.risk_level,
        articles=parsed.articles,
        recitals=parsed.recitals,
        annexes=parsed.annexes,
        article_groups=classify_reference_groups(parsed.articles),
        retrieved_context=tuple((unit.ref, score) for unit, score in hits),
        rewritten_query=rewritten,
        raw_generation=raw,
        prompt_version=template.version,
        warnings=tuple(warnings),
    )


def scripted_assessment_backend(corpus: Corpus, seed: int = 0):
    """Deterministic generation stand-in: emits a stable well-formed block
    derived from the prompt digest, citing only units that exist in the
    corpus. Useful for end-to-end determinism tests without fixtures."""
    import hashlib

    article_numbers = sorted(int(r.number) for r in corpus.refs(UnitKind.ARTICLE))

    def respond(prompt: str) -> str:
        digest = hashlib.sha256(f"{seed}:{prompt}".encode("utf-8")).digest()
        risk = list(AssessmentRiskLevel)[digest[0] % 4]
        picked = sorted({article_numbers[b % len(article_numbers)] for b in digest[1:9]})
        return render_assessment_block(risk, picked, rationale="Deterministic scripted assessment.")

    from .backends import CallableGenerationBackend
    return CallableGenerationBackend(respond, model_id=f"scripted-assessment-s{seed}")
