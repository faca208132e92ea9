import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taiscan.prescreen import (
    GROUPS,
    Classification,
    GpaiFlag,
    MalformedPayload,
    PrescreenAnswers,
    RiskLevel,
    UnknownOptionId,
    evaluate,
    load_catalog,
    outcome_text,
    validate_answers,
)

CATALOG = load_catalog()
ALL_CRITERIA = sorted(CATALOG.ids("ai_criteria"))
FIRST = {group: sorted(CATALOG.ids(group))[0] for group in GROUPS}


def answers(criteria=(), prohibited=(), harmonisation=(), highrisk=(), exemption=(), gpai=False):
    return PrescreenAnswers(
        ai_criteria_checked=frozenset(criteria),
        prohibited_checked=frozenset(prohibited),
        harmonisation_checked=frozenset(harmonisation),
        highrisk_app_checked=frozenset(highrisk),
        exemption_checked=frozenset(exemption),
        gpai_checked=gpai,
    )


class TestCatalog:
    def test_groups_present(self):
        assert set(CATALOG.options) == set(GROUPS)
        for group in GROUPS:
            assert CATALOG.options[group], f"{group} has no options"

    def test_option_ids_prefixed_by_group(self):
        for group in GROUPS:
            for option in CATALOG.options[group]:
                assert option.id.startswith(group + ".")

    def test_citations_resolve_in_corpus(self, corpus):
        for group in GROUPS:
            for option in CATALOG.options[group]:
                for citation in option.citations:
                    assert citation in corpus, f"{option.id} cites missing {citation}"
        for citation in CATALOG.gpai_citations:
            assert citation in corpus


class TestValidateAnswers:
    def test_catalog_member_accepted(self):
        result = validate_answers({"prohibited": ["prohibited.social_scoring"]}, CATALOG)
        assert result.prohibited_checked == {"prohibited.social_scoring"}

    def test_unknown_option_rejected(self):
        with pytest.raises(UnknownOptionId) as exc:
            validate_answers({"prohibited": ["prohibited.nonexistent"]}, CATALOG)
        assert any("prohibited.nonexistent" in e for e in exc.value.errors)

    def test_empty_payload_accepted(self):
        result = validate_answers({}, CATALOG)
        for group in GROUPS:
            assert result.checked(group) == frozenset()
        assert result.gpai_checked is False

    def test_unknown_group_rejected(self):
        with pytest.raises(MalformedPayload):
            validate_answers({"surprise": []}, CATALOG)

    def test_non_list_value_rejected(self):
        with pytest.raises(MalformedPayload):
            validate_answers({"prohibited": "prohibited.social_scoring"}, CATALOG)

    def test_non_bool_gpai_rejected(self):
        with pytest.raises(MalformedPayload):
            validate_answers({"gpai": "yes"}, CATALOG)

    def test_non_dict_payload_rejected(self):
        with pytest.raises(MalformedPayload):
            validate_answers(["prohibited.social_scoring"], CATALOG)

    def test_errors_are_field_level(self):
        with pytest.raises(UnknownOptionId) as exc:
            validate_answers({"prohibited": ["prohibited.x"], "exemption": ["exemption.y"]}, CATALOG)
        assert len(exc.value.errors) == 2


class TestEvaluate:
    def test_all_criteria_nothing_else(self):
        outcome = evaluate(answers(criteria=ALL_CRITERIA), CATALOG)
        assert outcome.classification is Classification.AI_SYSTEM
        assert outcome.risk is RiskLevel.NOT_HIGH_RISK
        assert outcome.gpai is GpaiFlag.NOT_APPLICABLE
        assert outcome.may_proceed is True

    def test_any_prohibited_blocks_regardless(self):
        outcome = evaluate(answers(
            criteria=ALL_CRITERIA,
            prohibited=[FIRST["prohibited"]],
            highrisk=[FIRST["highrisk_app"]],
            exemption=[FIRST["exemption"]],
            gpai=True,
        ), CATALOG)
        assert outcome.risk is RiskLevel.PROHIBITED
        assert outcome.may_proceed is False

    def test_exemption_downgrades_highrisk_application(self):
        outcome = evaluate(answers(criteria=ALL_CRITERIA,
                                   highrisk=[FIRST["highrisk_app"]],
                                   exemption=[FIRST["exemption"]]), CATALOG)
        assert outcome.risk is RiskLevel.NOT_HIGH_RISK
        assert outcome.may_proceed is True

    def test_exemption_does_not_downgrade_harmonisation(self):
        outcome = evaluate(answers(criteria=ALL_CRITERIA,
                                   harmonisation=[FIRST["harmonisation"]],
                                   exemption=[FIRST["exemption"]]), CATALOG)
        assert outcome.risk is RiskLevel.HIGH_RISK
        assert outcome.may_proceed is False

    def test_incomplete_criteria_not_an_ai_system(self):
        outcome = evaluate(answers(criteria=ALL_CRITERIA[:-1]), CATALOG)
        assert outcome.classification is Classification.NOT_AI_SYSTEM
        assert outcome.may_proceed is False

    def test_gpai_flag_does_not_gate(self):
        outcome = evaluate(answers(criteria=ALL_CRITERIA, gpai=True), CATALOG)
        assert outcome.gpai is GpaiFlag.FURTHER_ASSESSMENT
        assert outcome.may_proceed is True

    def test_pure_function(self):
        a = answers(criteria=ALL_CRITERIA, highrisk=[FIRST["highrisk_app"]])
        assert evaluate(a, CATALOG) == evaluate(a, CATALOG)

    def test_prohibited_invariant(self):
        outcome = evaluate(answers(prohibited=[FIRST["prohibited"]]), CATALOG)
        assert outcome.risk is RiskLevel.PROHIBITED

    def test_display_wording(self):
        outcome = evaluate(answers(prohibited=[FIRST["prohibited"]]), CATALOG)
        assert outcome_text(outcome)["risk"] == "Prohibited AI system -- can not be deployed"


class TestExplainability:
    def test_every_non_default_field_is_justified(self):
        outcome = evaluate(answers(criteria=ALL_CRITERIA,
                                   harmonisation=[FIRST["harmonisation"]],
                                   gpai=True), CATALOG)
        rules = {fire.rule for fire in outcome.triggered_rules}
        assert "classification.all_criteria_met" in rules
        assert "risk.harmonisation_legislation" in rules
        assert "gpai.flagged" in rules

    def test_triggering_options_recorded(self):
        outcome = evaluate(answers(prohibited=["prohibited.social_scoring",
                                               "prohibited.untargeted_facial_scraping"]), CATALOG)
        fire = next(f for f in outcome.triggered_rules if f.rule == "risk.prohibited_activity")
        assert fire.options == ("prohibited.social_scoring", "prohibited.untargeted_facial_scraping")


def _risk_rule(prohibited, harmonisation, highrisk, exemption) -> RiskLevel:
    # The documented decision rule, restated independently of the engine.
    if prohibited:
        return RiskLevel.PROHIBITED
    if harmonisation:
        return RiskLevel.HIGH_RISK
    if highrisk and not exemption:
        return RiskLevel.HIGH_RISK
    return RiskLevel.NOT_HIGH_RISK


class TestGateSoundnessAbstraction:
    def test_exhaustive_boolean_abstraction(self):
        for complete, pro, har, app, exe, gpai in itertools.product([False, True], repeat=6):
            a = answers(
                criteria=ALL_CRITERIA if complete else ALL_CRITERIA[:-1],
                prohibited=[FIRST["prohibited"]] if pro else [],
                harmonisation=[FIRST["harmonisation"]] if har else [],
                highrisk=[FIRST["highrisk_app"]] if app else [],
                exemption=[FIRST["exemption"]] if exe else [],
                gpai=gpai,
            )
            outcome = evaluate(a, CATALOG)
            assert outcome.risk is _risk_rule(pro, har, app, exe)
            assert outcome.may_proceed == (
                outcome.classification is Classification.AI_SYSTEM
                and outcome.risk is RiskLevel.NOT_HIGH_RISK)
            if pro:
                assert outcome.risk is RiskLevel.PROHIBITED and not outcome.may_proceed


subset = st.sets(st.sampled_from(sorted(CATALOG.all_ids())), max_size=8)


class TestRandomizedInvariants:
    @given(ids=subset, gpai=st.booleans())
    @settings(max_examples=200, derandomize=True, deadline=None)
    def test_invariants_hold_for_random_payloads(self, ids, gpai):
        by_group = {group: [i for i in ids if i.startswith(group + ".")] for group in GROUPS}
        a = answers(criteria=by_group["ai_criteria"], prohibited=by_group["prohibited"],
                    harmonisation=by_group["harmonisation"], highrisk=by_group["highrisk_app"],
                    exemption=by_group["exemption"], gpai=gpai)
        outcome = evaluate(a, CATALOG)
        if a.prohibited_checked:
            assert outcome.risk is RiskLevel.PROHIBITED and not outcome.may_proceed
        assert outcome.may_proceed == (
            outcome.classification is Classification.AI_SYSTEM
            and outcome.risk is RiskLevel.NOT_HIGH_RISK)
        assert (outcome.risk is RiskLevel.PROHIBITED) == bool(a.prohibited_checked)

    @given(ids=subset, gpai=st.booleans())
    @settings(max_examples=100, derandomize=True, deadline=None)
    def test_monotone_danger(self, ids, gpai):
        by_group = {group: [i for i in ids if i.startswith(group + ".")] for group in GROUPS}
        base = answers(criteria=by_group["ai_criteria"], prohibited=by_group["prohibited"],
                       harmonisation=by_group["harmonisation"], highrisk=by_group["highrisk_app"],
                       exemption=by_group["exemption"], gpai=gpai)
        widened = answers(criteria=by_group["ai_criteria"],
                          prohibited=set(by_group["prohibited"]) | {FIRST["prohibited"]},
                          harmonisation=by_group["harmonisation"],
                          highrisk=by_group["highrisk_app"],
                          exemption=by_group["exemption"], gpai=gpai)
        before = evaluate(base, CATALOG)
        after = evaluate(widened, CATALOG)
        assert after.risk is RiskLevel.PROHIBITED
        if not before.may_proceed:
            assert not after.may_proceed
