from __future__ import annotations

import pytest

from streamrag.core import SessionConfig, Strategy
from streamrag.labeling import SimilarityContext, similarity_f
from streamrag.orchestrator import Backends, LatencyModel
from streamrag.reflector import ReflectContext
from streamrag.retrieval import KgStore, index_documents
from streamrag.synth import FixtureWorld
from streamrag.triggers import (
    FinalQueryGenerator,
    ScriptedQueryGenerator,
    StreamingScriptedGenerator,
)


@pytest.fixture(scope="session")
def world() -> FixtureWorld:
    return FixtureWorld()


@pytest.fixture(scope="session")
def index(world):
    return index_documents(world.corpus)


@pytest.fixture(scope="session")
def kg_store(world):
    return KgStore.from_records(world.kg_records)


@pytest.fixture(scope="session")
def backends(index, kg_store):
    return Backends(index=index, kg_store=kg_store)


@pytest.fixture(scope="session")
def reflect_ctx(index, kg_store):
    return ReflectContext(index=index, kg_store=kg_store, compare_k=5, retrieve_k=50)


@pytest.fixture(scope="session")
def similarity_ctx(index):
    return SimilarityContext(index=index, compare_k=5, retrieve_k=50, ordered=False)


@pytest.fixture(scope="session")
def headline_latency() -> LatencyModel:
    """Constant stage delays matching the headline open-book breakdown."""
    return LatencyModel(
        query_gen=590, web_fetch=2780, chunk_rerank=0, kg_lookup=2780,
        response_gen=2520, response_tail=0, seed=0,
    )


def session_config(strategy: Strategy, **kwargs) -> SessionConfig:
    defaults = dict(block_ms=500, ref_length_tokens=120, rng_seed=0)
    defaults.update(kwargs)
    return SessionConfig(strategy=strategy, **defaults)


def generator_for(strategy: Strategy, trace, config: SessionConfig, index):
    """Build the default scripted generator for a strategy, as the CLI does."""
    if strategy is Strategy.CLOSED_BOOK:
        return None
    if strategy is Strategy.OPEN_BOOK:
        return FinalQueryGenerator(trace)
    if strategy is Strategy.FIXED_INTERVAL:
        return ScriptedQueryGenerator(trace, config.block_ms)
    ctx = SimilarityContext(index=index, compare_k=config.reflect_top_k,
                            retrieve_k=config.top_docs, ordered=False)
    return StreamingScriptedGenerator(
        trace, config.block_ms, lambda cur, prev: similarity_f(cur, prev, ctx)
    )
