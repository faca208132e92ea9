"""Operator command line: ingest, build-index, prescreen, assess, eval, serve.

Exit codes are stable for scripting: 0 ok, 2 input/parse error, 3 backend
failure, 4 blocked by the pre-screening gate, 5 malformed generation output.
All business logic lives in the library modules; this layer only wires
arguments and formats output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import data_path
from . import annindex, backends, corpus as corpus_mod, evalharness, prescreen, ragflow, service

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BACKEND = 3
EXIT_GATED = 4
EXIT_MALFORMED = 5

log = logging.getLogger("taiscan")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taiscan",
                                     description="AI Act compliance self-assessment tool")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a consolidated document into a .units corpus file")
    p.add_argument("--raw", default=None, help="input text file (default: bundled document)")
    p.add_argument("--out", required=True, help="output .units path")
    p.add_argument("--source", default=None, help="source name stored in corpus meta")
    p.add_argument("--doc-version", default="", help="document version stored in corpus meta")

    p = sub.add_parser("build-index", help="embed a corpus and build the ANN index")
    p.add_argument("--units", default=None, help=".units corpus file (default: bundled document)")
    p.add_argument("--out", required=True, help="output index path")
    p.add_argument("--trees", type=int, default=annindex.DEFAULT_TREE_COUNT)
    p.add_argument("--leaf-size", type=int, default=annindex.DEFAULT_MAX_LEAF_SIZE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kinds", default=None,
                   help="comma-separated unit kinds to index (default: all)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--deterministic", action="store_true",
                       help="use the seeded test embedding instead of a live backend")
    group.add_argument("--endpoint", default=None, help="Ollama-compatible embedding endpoint")
    p.add_argument("--model", default="jina-embeddings-v3", help="embedding model id for --endpoint")
    p.add_argument("--dimension", type=int, default=64, help="dimension for --deterministic")

    p = sub.add_parser("prescreen", help="evaluate checklist answers from a file")
    p.add_argument("--answers", required=True, help="YAML/JSON answer payload")
    p.add_argument("--catalog", default=None, help="option catalog path (default: bundled)")

    p = sub.add_parser("assess", help="run one assessment")
    p.add_argument("--input", default=None, help="YAML/JSON file with the five input fields")
    p.add_argument("--role", choices=["provider", "deployer"])
    p.add_argument("--domain")
    p.add_argument("--system-type")
    p.add_argument("--input-data")
    p.add_argument("--intended-use")
    p.add_argument("--units", default=None, help=".units corpus file (default: bundled document)")
    p.add_argument("--index", default=None, help="prebuilt index path (default: build in process)")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--search-budget", type=int, default=0,
                   help="candidates inspected per query (0: max(4k, 64))")
    p.add_argument("--seed", type=int, default=0)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--replay", nargs="?", const="bundled", default=None,
                      help="replay fixtures dir (no value: bundled fixtures)")
    mode.add_argument("--deterministic", action="store_true",
                      help="scripted deterministic backends (no fixtures, no network)")
    mode.add_argument("--live", default=None, metavar="URL",
                      help="Ollama-compatible endpoint for live inference")
    p.add_argument("--gen-model", default="mistral-small3.2")
    p.add_argument("--embed-model", default="jina-embeddings-v3")

    p = sub.add_parser("eval", help="run scenario configs and write reports")
    p.add_argument("--scenarios", default=None, help="scenario directory (default: bundled)")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--replay-dir", default=None, help="replay fixtures dir (default: bundled)")
    p.add_argument("--live", default=None, metavar="URL", help="endpoint for live-mode scenarios")
    p.add_argument("--gen-model", default="mistral-small3.2")
    p.add_argument("--embed-model", default="jina-embeddings-v3")

    p = sub.add_parser("serve", help="run the REST service")
    p.add_argument("--config", default=None, help="service config YAML")

    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _load_corpus(units_path: str | None) -> corpus_mod.Corpus:
    if units_path:
        return corpus_mod.load_corpus(units_path)
    return corpus_mod.parse_document(
        data_path("ai_act_extract.txt").read_text(encoding="utf-8"),
        source="ai_act_extract.txt", version="2024/1689-abridged")


def _load_structured(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith(".json"):
        return json.loads(text)
    return yaml.safe_load(text)


_KIND_PLURALS = {"article": "articles", "recital": "recitals", "annex": "annexes"}


def _heading_counts_line(counts: dict[str, int]) -> str:
    return ", ".join(f"{_KIND_PLURALS[kind]}: {counts[kind]}"
                     for kind in ("article", "recital", "annex"))


def _render_prescreen(outcome: prescreen.PrescreenOutcome, catalog: prescreen.OptionCatalog) -> str:
    display = prescreen.outcome_text(outcome)
    lines = [
        f"Classification: {display['classification']}",
        f"Risk level:     {display['risk']}",
        f"GPAI:           {display['gpai']}",
        f"Proceed:        {'yes' if outcome.may_proceed else 'no'}",
    ]
    if outcome.triggered_rules:
        lines.append("Triggered rules:")
        for fire in outcome.triggered_rules:
            lines.append(f"  {fire.rule}: {', '.join(fire.options)}")
    return "\n".join(lines)


_GROUP_TITLES = (
    (ragflow.ReferenceGroup.HORIZONTAL, "Horizontal obligations"),
    (ragflow.ReferenceGroup.CLASSIFICATION, "Classification resources"),
    (ragflow.ReferenceGroup.SCENARIO_SPECIFIC, "Scenario-specific obligations"),
)


def _render_assessment(result: ragflow.AssessmentResult, corpus: corpus_mod.Corpus) -> str:
    lines = [f"Risk level: {result.risk_level.value}", ""]
    for group, title in _GROUP_TITLES:
        refs = sorted((r for r, g in result.article_groups.items() if g is group),
                      key=lambda r: int(r.number))
        if refs:
            lines.append(f"{title}:")
            for ref in refs:
                lines.append(f"  {ragflow.unit_heading(corpus.get(ref))}")
            lines.append("")
    if result.recitals:
        lines.append("Recitals: " + ", ".join(
            str(n) for n in sorted(int(r.number) for r in result.recitals)))
    if result.annexes:
        lines.append("Annexes: " + ", ".join(
            sorted((r.number for r in result.annexes), key=corpus_mod.roman_to_int)))
    lines.append("")
    lines.append(f"Prompt version: {result.prompt_version}")
    lines.append(f"Rewritten query: {result.rewritten_query}")
    for warning in result.warnings:
        lines.append(f"Warning: {warning}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    raw_path = args.raw or str(data_path("ai_act_extract.txt"))
    try:
        raw = Path(raw_path).read_text(encoding="utf-8")
        # Timestamp from the input file's mtime keeps reruns byte-identical.
        from datetime import datetime, timezone
        ingested = datetime.fromtimestamp(Path(raw_path).stat().st_mtime,
                                          tz=timezone.utc).isoformat(timespec="seconds")
        parsed = corpus_mod.parse_document(
            raw, source=args.source or Path(raw_path).name, version=args.doc_version,
            ingested_at=ingested)
        count = corpus_mod.store_corpus(parsed, args.out)
    except (OSError, corpus_mod.CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"wrote {count} units to {args.out} ({_heading_counts_line(parsed.counts_by_kind())})")
    return EXIT_OK


def cmd_build_index(args) -> int:
    try:
        parsed = _load_corpus(args.units)
    except corpus_mod.CorpusError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    kinds = tuple(args.kinds.split(",")) if args.kinds else None
    if args.endpoint:
        backend = backends.HttpEmbeddingBackend(
            backends.BackendConfig(endpoint=args.endpoint, model_id=args.model))
    else:
        backend = backends.DeterministicEmbeddingBackend(args.dimension, args.seed)
    try:
        index = ragflow.index_corpus(parsed, backend, kinds=kinds, tree_count=args.trees,
                                     max_leaf_size=args.leaf_size, seed=args.seed)
        annindex.save(index, args.out)
    except backends.BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    print(f"indexed {len(index)} units (trees={args.trees}, leaf_size={args.leaf_size}, "
          f"seed={args.seed}, dimension={index.dimension}) -> {args.out}")
    return EXIT_OK


def cmd_prescreen(args) -> int:
    catalog = prescreen.load_catalog(args.catalog)
    try:
        payload = _load_structured(args.answers)
        answers = prescreen.validate_answers(payload, catalog)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except prescreen.PrescreenError as exc:
        print("invalid answers:", file=sys.stderr)
        for item in exc.errors:
            print(f"  {item}", file=sys.stderr)
        return EXIT_INPUT
    outcome = prescreen.evaluate(answers, catalog)
    print(_render_prescreen(outcome, catalog))
    if not outcome.may_proceed:
        blockers = [f for f in outcome.triggered_rules
                    if f.rule.startswith("risk.") or f.rule == "classification.criteria_incomplete"]
        reasons = "; ".join(f"{f.rule} ({', '.join(f.options)})" for f in blockers)
        print(f"\nblocked: assessment gate closed by {reasons}", file=sys.stderr)
        return EXIT_GATED
    return EXIT_OK


def _assessment_input_from_args(args) -> ragflow.AssessmentInput:
    if args.input:
        fields = _load_structured(args.input)
    else:
        fields = {"role": args.role, "domain": args.domain, "system_type": args.system_type,
                  "input_data": args.input_data, "intended_use": args.intended_use}
    missing = [k for k, v in fields.items() if not v]
    if missing:
        raise ValueError(f"missing assessment fields: {', '.join(sorted(missing))}")
    return ragflow.AssessmentInput(
        role=ragflow.Role(str(fields["role"]).lower()),
        domain=fields["domain"], system_type=fields["system_type"],
        input_data=fields["input_data"], intended_use=fields["intended_use"])


def cmd_assess(args) -> int:
    try:
        input_ = _assessment_input_from_args(args)
        parsed = _load_corpus(args.units)
    except (OSError, ValueError, KeyError, corpus_mod.CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    if args.live:
        embedding = backends.HttpEmbeddingBackend(
            backends.BackendConfig(endpoint=args.live, model_id=args.embed_model))
        generation = backends.HttpGenerationBackend(
            backends.BackendConfig(endpoint=args.live, model_id=args.gen_model))
    elif args.deterministic:
        embedding = backends.DeterministicEmbeddingBackend(
            evalharness.REPLAY_EMBEDDING_DIMENSION, args.seed)
        generation = ragflow.scripted_assessment_backend(parsed, args.seed)
    else:
        replay_dir = (evalharness.bundled_replay_dir() if args.replay in (None, "bundled")
                      else Path(args.replay))
        embedding = backends.DeterministicEmbeddingBackend(
            evalharness.REPLAY_EMBEDDING_DIMENSION, args.seed)
        generation = backends.ReplayGenerationBackend(replay_dir)

    template = ragflow.load_templates()
    try:
        if args.index:
            index = annindex.load(args.index)
        else:
            index = ragflow.index_corpus(parsed, embedding, seed=evalharness.REPLAY_INDEX_SEED)
        result = ragflow.assess(input_, index, parsed, embedding, generation, template,
                                k=args.k, search_budget=args.search_budget or None)
    except backends.BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except ragflow.MalformedOutput as exc:
        print(f"malformed generation output: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except annindex.AnnIndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(_render_assessment(result, parsed))
    return EXIT_OK


def cmd_eval(args) -> int:
    scenario_dir = args.scenarios or evalharness.bundled_scenario_dir()
    try:
        configs = evalharness.load_scenario_dir(scenario_dir)
        parsed = _load_corpus(None)
    except (OSError, ValueError, KeyError, corpus_mod.CorpusError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if not configs:
        print(f"error: no scenario files in {scenario_dir}", file=sys.stderr)
        return EXIT_INPUT

    embedding = backends.DeterministicEmbeddingBackend(evalharness.REPLAY_EMBEDDING_DIMENSION, 0)
    index = ragflow.index_corpus(parsed, embedding, seed=evalharness.REPLAY_INDEX_SEED)
    template = ragflow.load_templates()
    live_embedding = live_generation = None
    if args.live:
        live_embedding = backends.HttpEmbeddingBackend(
            backends.BackendConfig(endpoint=args.live, model_id=args.embed_model))
        live_generation = backends.HttpGenerationBackend(
            backends.BackendConfig(endpoint=args.live, model_id=args.gen_model))

    report = evalharness.run_scenarios(
        configs, parsed, index, template,
        replay_dir=args.replay_dir or evalharness.bundled_replay_dir(),
        live_embedding=live_embedding, live_generation=live_generation,
        output_dir=args.out)
    human, machine = evalharness.write_report_files(report, args.out)
    print(evalharness.emit_report(report, "human"))
    print(f"reports: {human} {machine}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    try:
        config = service.load_config(args.config)
        components = service.build_components(config)
    except (OSError, service.ConfigError, corpus_mod.CorpusError, annindex.AnnIndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    app = service.create_app(components)
    uvicorn.run(app, host=config.bind_host, port=config.bind_port, log_level="info")
    return EXIT_OK


_COMMANDS = {
    "ingest": cmd_ingest,
    "build-index": cmd_build_index,
    "prescreen": cmd_prescreen,
    "assess": cmd_assess,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
