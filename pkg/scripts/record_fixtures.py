#!/usr/bin/env python3
"""(Re)record the replay fixtures bundled with the package.

Two modes:

* default (scripted): writes the completions stored in
  ``data/scenarios/recorded_responses.yaml`` into digest-keyed fixture files,
  reproducing the exact prompts the pipeline computes. Run this after any
  change to the corpus text, the prompt templates or the scenario inputs.
* ``--live <url>``: records fresh completions from an Ollama-compatible
  endpoint instead of the stored ones. Retrieval stays on the pinned
  deterministic embedding path so the recording replays bit-identically.

Also writes the synthetic "recorded" embedding vectors (one per article unit
plus the prohibited scenario query) used by the retrieval replay tests.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

import numpy as np
import yaml

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from taiscan import data_path
from taiscan.backends import (
    BackendConfig,
    DeterministicEmbeddingBackend,
    GenerationRequest,
    HttpGenerationBackend,
    normalize,
    write_embedding_fixture,
    write_generation_fixture,
)
from taiscan.corpus import UnitKind, UnitRef, parse_document
from taiscan.evalharness import (
    REPLAY_EMBEDDING_DIMENSION,
    REPLAY_INDEX_SEED,
    REPLAY_RETRIEVAL_K,
    load_scenario_dir,
)
from taiscan.ragflow import (
    compose_query,
    format_context,
    index_corpus,
    load_templates,
    render_template,
    retrieve,
    unit_embedding_text,
)

RECORDED_EMBEDDING_DIMENSION = 32


def _seeded_unit_vector(tag: str, dimension: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    return normalize(rng.normal(size=dimension))


def record_embedding_fixtures(corpus, responses, out_dir: Path) -> int:
    """Synthetic recorded embeddings: every article unit gets a stable random
    direction; the prohibited scenario query lands next to article 5."""
    count = 0
    vectors = {}
    for unit in corpus.units:
        if unit.ref.kind is not UnitKind.ARTICLE:
            continue
        vec = _seeded_unit_vector(f"unit:{unit.ref}", RECORDED_EMBEDDING_DIMENSION)
        vectors[str(unit.ref)] = vec
        write_embedding_fixture(out_dir, unit_embedding_text(unit), vec)
        count += 1
    query_text = responses["prohibited_provider"]["rewritten_query"]
    noise = _seeded_unit_vector("query:prohibited_provider", RECORDED_EMBEDDING_DIMENSION)
    query_vec = normalize(vectors["article:5"] + 0.25 * noise)
    write_embedding_fixture(out_dir, query_text, query_vec)
    return count + 1


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--live", metavar="URL", help="record from an Ollama-compatible endpoint")
    parser.add_argument("--model", default="mistral-small3.2", help="generation model id for --live")
    parser.add_argument("--out", default=None, help="fixture output directory (default: bundled)")
    args = parser.parse_args()

    out_dir = Path(args.out) if args.out else data_path("fixtures", "replay")
    out_dir.mkdir(parents=True, exist_ok=True)

    corpus = parse_document(data_path("ai_act_extract.txt").read_text(encoding="utf-8"),
                            source="ai_act_extract.txt", version="2024/1689-abridged")
    template = load_templates()
    responses = yaml.safe_load(data_path("scenarios", "recorded_responses.yaml").read_text(encoding="utf-8"))
    scenarios = load_scenario_dir(data_path("scenarios"))

    live_backend = None
    if args.live:
        live_backend = HttpGenerationBackend(BackendConfig(endpoint=args.live, model_id=args.model))

    written = 0
    for scenario in scenarios:
        embedding = DeterministicEmbeddingBackend(REPLAY_EMBEDDING_DIMENSION, scenario.seed)
        index = index_corpus(corpus, embedding, seed=REPLAY_INDEX_SEED)
        query = compose_query(scenario.input)
        rewrite_prompt = render_template(template.rewrite_template, {"query": query})

        if live_backend is not None:
            rewritten = live_backend.generate(GenerationRequest(prompt=rewrite_prompt))
        else:
            rewritten = responses[scenario.name]["rewritten_query"]
        write_generation_fixture(out_dir, rewrite_prompt, rewritten)
        written += 1

        hits = retrieve(rewritten, REPLAY_RETRIEVAL_K, index, corpus, embedding)
        answer_prompt = render_template(template.answer_template,
                                        {"query": query, "context": format_context(hits)})
        if live_backend is not None:
            answer = live_backend.generate(GenerationRequest(prompt=answer_prompt))
        else:
            answer = responses[scenario.name]["answer"]
        write_generation_fixture(out_dir, answer_prompt, answer)
        written += 1

    vec_count = record_embedding_fixtures(corpus, responses, out_dir)
    print(f"wrote {written} completion fixtures and {vec_count} embedding fixtures to {out_dir}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
