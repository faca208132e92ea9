"""Deterministic pre-screening rule engine.

Maps checklist answers over the authored option catalog to a classification
(AI system under the Act or not), a risk level (prohibited / high-risk /
not high-risk), a GPAI flag, and the proceed/block gate. Evaluation is a
pure function: no state, no model calls, every non-default outcome recorded
with the options that triggered it.

Decision rules (see the catalog file for the legal grounding):
  * classification is "AI system" only when every ai_criteria option is checked;
  * any prohibited option forces risk=prohibited and blocks proceeding;
  * any harmonisation option triggers high-risk and is NOT downgraded by
    exemptions (exemptions attach to the listed high-risk applications only);
  * a high-risk application with a checked exemption is downgraded to
    not-high-risk;
  * GPAI never blocks; it only flags further assessment.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import yaml

from . import data_path
from .corpus import UnitRef


class PrescreenError(Exception):
    """Base class for pre-screening validation failures."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


class MalformedPayload(PrescreenError):
    pass


class UnknownOptionId(PrescreenError):
    pass


class Classification(str, Enum):
    AI_SYSTEM = "ai_system_under_ai_act"
    NOT_AI_SYSTEM = "not_ai_system_under_ai_act"


class RiskLevel(str, Enum):
    PROHIBITED = "prohibited"
    HIGH_RISK = "high_risk"
    NOT_HIGH_RISK = "not_high_risk"


class GpaiFlag(str, Enum):
    FURTHER_ASSESSMENT = "further_assessment_needed"
    NOT_APPLICABLE = "not_applicable"


GROUPS = ("ai_criteria", "prohibited", "harmonisation", "highrisk_app", "exemption")


@dataclass(frozen=True)
class CatalogOption:
    id: str
    text: str
    citations: tuple[UnitRef, ...]


@dataclass(frozen=True)
class OptionCatalog:
    version: str
    questions: dict[str, str]          # group -> question text
    options: dict[str, tuple[CatalogOption, ...]]  # group -> options
    gpai_question: str
    gpai_text: str
    gpai_citations: tuple[UnitRef, ...]

    def ids(self, group: str) -> frozenset[str]:
        return frozenset(opt.id for opt in self.options[group])

    def all_ids(self) -> frozenset[str]:
        return frozenset(opt.id for opts in self.options.values() for opt in opts)


def load_catalog(path: str | Path | None = None) -> OptionCatalog:
    """Load the option catalog (bundled file by default)."""
    raw = yaml.safe_load(Path(path or data_path("prescreen_options.yaml")).read_text(encoding="utf-8"))
    questions: dict[str, str] = {}
    options: dict[str, tuple[CatalogOption, ...]] = {}
    for group in GROUPS:
        spec = raw["groups"][group]
        questions[group] = spec["question"]
        opts = []
        for entry in spec["options"]:
            if not entry["id"].startswith(group + "."):
                raise ValueError(f"option id {entry['id']!r} must be prefixed with its group {group!r}")
            opts.append(CatalogOption(
                id=entry["id"],
                text=entry["text"],
                citations=tuple(UnitRef.parse(c) for c in entry.get("citations", [])),
            ))
        options[group] = tuple(opts)
    gpai = raw["gpai"]
    return OptionCatalog(
        version=str(raw["version"]),
        questions=questions,
        options=options,
        gpai_question=gpai["question"],
        gpai_text=gpai["text"],
        gpai_citations=tuple(UnitRef.parse(c) for c in gpai.get("citations", [])),
    )


@dataclass(frozen=True)
class PrescreenAnswers:
    ai_criteria_checked: frozenset[str]
    prohibited_checked: frozenset[str]
    harmonisation_checked: frozenset[str]
    highrisk_app_checked: frozenset[str]
    exemption_checked: frozenset[str]
    gpai_checked: bool

    def checked(self, group: str) -> frozenset[str]:
        return getattr(self, f"{group}_checked")


@dataclass(frozen=True)
class RuleFire:
    rule: str
    options: tuple[str, ...]


@dataclass(frozen=True)
class PrescreenOutcome:
    classification: Classification
    risk: RiskLevel
    gpai: GpaiFlag
    may_proceed: bool
    triggered_rules: tuple[RuleFire, ...]


def validate_answers(payload: object, catalog: OptionCatalog) -> PrescreenAnswers:
    """Check a raw answer payload against the catalog.

    Payload shape: one key per question group holding a list of option ids,
    plus a boolean "gpai" key. Missing keys mean nothing checked. Raises
    MalformedPayload for structural problems and UnknownOptionId for ids
    outside the catalog; both carry per-field error lists.
    """
    if not isinstance(payload, dict):
        raise MalformedPayload(["payload must be an object of group -> option id list"])

    structural: list[str] = []
    unknown: list[str] = []
    checked: dict[str, frozenset[str]] = {}

    for key in payload:
        if key not in GROUPS and key != "gpai":
            structural.append(f"{key}: unknown question group")

    for group in GROUPS:
        value = payload.get(group, [])
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            structural.append(f"{group}: expected a list of option id strings")
            checked[group] = frozenset()
            continue
        ids = catalog.ids(group)
        bad = sorted(set(value) - ids)
        if bad:
            unknown.extend(f"{group}: unknown option id {b!r}" for b in bad)
        checked[group] = frozenset(value) & ids

    gpai_value = payload.get("gpai", False)
    if not isinstance(gpai_value, bool):
        structural.append("gpai: expected a boolean")
        gpai_value = False

    if structural:
        raise MalformedPayload(structural)
    if unknown:
        raise UnknownOptionId(unknown)

    return PrescreenAnswers(
        ai_criteria_checked=checked["ai_criteria"],
        prohibited_checked=checked["prohibited"],
        harmonisation_checked=checked["harmonisation"],
        highrisk_app_checked=checked["highrisk_app"],
        exemption_checked=checked["exemption"],
        gpai_checked=gpai_value,
    )


def evaluate(answers: PrescreenAnswers, catalog: OptionCatalog) -> PrescreenOutcome:
    """Pure rule evaluation; same answers always yield the same outcome."""
    fires: list[RuleFire] = []

    all_criteria = catalog.ids("ai_criteria")
    criteria_complete = answers.ai_criteria_checked == all_criteria
    if criteria_complete:
        classification = Classification.AI_SYSTEM
        fires.append(RuleFire("classification.all_criteria_met", tuple(sorted(all_criteria))))
    else:
        classification = Classification.NOT_AI_SYSTEM
        missing = tuple(sorted(all_criteria - answers.ai_criteria_checked))
        fires.append(RuleFire("classification.criteria_incomplete", missing))

    if answers.prohibited_checked:
        risk = RiskLevel.PROHIBITED
        fires.append(RuleFire("risk.prohibited_activity", tuple(sorted(answers.prohibited_checked))))
    elif answers.harmonisation_checked:
        risk = RiskLevel.HIGH_RISK
        fires.append(RuleFire("risk.harmonisation_legislation", tuple(sorted(answers.harmonisation_checked))))
    elif answers.highrisk_app_checked and not answers.exemption_checked:
        risk = RiskLevel.HIGH_RISK
        fires.append(RuleFire("risk.highrisk_application", tuple(sorted(answers.highrisk_app_checked))))
    elif answers.highrisk_app_checked:
        risk = RiskLevel.NOT_HIGH_RISK
        fires.append(RuleFire("risk.exemption_downgrade", tuple(sorted(answers.exemption_checked))))
    else:
        risk = RiskLevel.NOT_HIGH_RISK

    if answers.gpai_checked:
        gpai = GpaiFlag.FURTHER_ASSESSMENT
        fires.append(RuleFire("gpai.flagged", ("gpai",)))
    else:
        gpai = GpaiFlag.NOT_APPLICABLE

    may_proceed = classification is Classification.AI_SYSTEM and risk is RiskLevel.NOT_HIGH_RISK
    return PrescreenOutcome(
        classification=classification,
        risk=risk,
        gpai=gpai,
        may_proceed=may_proceed,
        triggered_rules=tuple(fires),
    )


def outcome_text(outcome: PrescreenOutcome) -> dict[str, str]:
    """Display strings mirroring the questionnaire's output wording."""
    classification = {
        Classification.AI_SYSTEM: "AI System under the AI Act",
        Classification.NOT_AI_SYSTEM: "Not an AI system under the AI Act",
    }[outcome.classification]
    risk = {
        RiskLevel.PROHIBITED: "Prohibited AI system -- can not be deployed",
        RiskLevel.HIGH_RISK: "High-Risk -- strict requirements apply",
        RiskLevel.NOT_HIGH_RISK: "Not High-Risk",
    }[outcome.risk]
    gpai = {
        GpaiFlag.FURTHER_ASSESSMENT: "Yes -- further assessment needed",
        GpaiFlag.NOT_APPLICABLE: "No -- not applicable",
    }[outcome.gpai]
    return {"classification": classification, "risk": risk, "gpai": gpai}
