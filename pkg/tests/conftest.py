import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from taiscan import data_path
from taiscan.backends import DeterministicEmbeddingBackend
from taiscan.corpus import parse_document
from taiscan.evalharness import (
    REPLAY_EMBEDDING_DIMENSION,
    REPLAY_INDEX_SEED,
    bundled_replay_dir,
    bundled_scenario_dir,
)
from taiscan.prescreen import load_catalog
from taiscan.ragflow import index_corpus, load_templates


@pytest.fixture(scope="session")
def ai_act_text() -> str:
    return data_path("ai_act_extract.txt").read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def corpus(ai_act_text):
    return parse_document(ai_act_text, source="ai_act_extract.txt", version="2024/1689-abridged")


@pytest.fixture(scope="session")
def catalog():
    return load_catalog()


@pytest.fixture(scope="session")
def template():
    return load_templates()


@pytest.fixture(scope="session")
def det_embedding():
    return DeterministicEmbeddingBackend(REPLAY_EMBEDDING_DIMENSION, 0)


@pytest.fixture(scope="session")
def corpus_index(corpus, det_embedding):
    """Index over all unit kinds with the pinned replay parameters."""
    return index_corpus(corpus, det_embedding, seed=REPLAY_INDEX_SEED)


@pytest.fixture(scope="session")
def replay_dir():
    return bundled_replay_dir()


@pytest.fixture(scope="session")
def scenario_dir():
    return bundled_scenario_dir()
