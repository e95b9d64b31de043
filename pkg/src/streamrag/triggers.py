"""Streaming query-generation policies.

Two trigger policies turn per-block transcript prefixes into tool-query
decisions: the fixed-interval policy fires a fresh query pair on every
block, while the model-triggered policy may emit NO_QUERY to keep the
current tool call running and only fires when the query actually changes.

``QueryGenerator`` is the extension point for a live model adapter. The
default implementations replay queries scripted on the trace, keyed by
prefix text so identical prefixes always produce identical queries. A
generator may declare its own per-call latency; when it does not, the
orchestrator samples the query-generation stage of its latency model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol

from .core import (
    NO_QUERY,
    BlockIndex,
    ScriptedQueries,
    Tool,
    ToolQuery,
    UtteranceTrace,
    blocks_of,
)
from .errors import InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratedQueries:
    """One generator call's output: a query (or NO_QUERY) per tool."""

    web: ToolQuery
    kg: ToolQuery
    latency_ms: int | None = None

    def for_tool(self, tool: Tool) -> ToolQuery:
        return self.web if tool is Tool.WEB else self.kg


class QueryGenerator(Protocol):
    """Deterministic mapping (prefix, previous queries) -> queries.

    Implementations must be pure: the same prefix and previous queries always
    yield the same result. Returning NO_QUERY is only meaningful under the
    model-triggered policy; the fixed-interval policy treats it as a failure.
    """

    def generate(self, prefix: str, prev_web: ToolQuery, prev_kg: ToolQuery) -> GeneratedQueries:
        ...


class TriggerAction(str, Enum):
    FIRE = "fire"
    NO_QUERY = "no_query"
    FAILED = "failed"


@dataclass(frozen=True)
class ToolDecision:
    action: TriggerAction
    query: ToolQuery = NO_QUERY


@dataclass(frozen=True)
class TriggerDecision:
    block: BlockIndex
    fired_at_ms: int
    web: ToolDecision
    kg: ToolDecision
    declared_latency_ms: int | None = None

    def for_tool(self, tool: Tool) -> ToolDecision:
        return self.web if tool is Tool.WEB else self.kg


def _prefix_map(trace: UtteranceTrace, block_ms: int) -> dict[str, ScriptedQueries]:
    """Scripted queries keyed by prefix text, validated against the blocking.

    Every block must be scripted, and blocks that share a prefix (no new word
    completed) must be scripted identically.
    """
    blocks = blocks_of(trace, block_ms)
    missing = [b for b, _ in blocks if b not in trace.scripted_queries]
    if missing:
        raise InputError(
            f"{trace.utterance_id}: no scripted queries for blocks {missing} at block_ms={block_ms}"
        )
    by_prefix: dict[str, ScriptedQueries] = {}
    for b, prefix in blocks:
        entry = trace.scripted_queries[b]
        if entry.web.is_no_query or entry.kg.is_no_query:
            raise InputError(
                f"{trace.utterance_id}: scripted entry for block {b} must carry both tool queries"
            )
        known = by_prefix.get(prefix)
        if known is not None and known != entry:
            raise InputError(
                f"{trace.utterance_id}: conflicting scripted queries for identical prefix {prefix!r}"
            )
        by_prefix[prefix] = entry
    return by_prefix


class ScriptedQueryGenerator:
    """Replays the trace's scripted queries verbatim for each prefix."""

    def __init__(self, trace: UtteranceTrace, block_ms: int) -> None:
        self._utterance_id = trace.utterance_id
        self._by_prefix = _prefix_map(trace, block_ms)

    def generate(self, prefix: str, prev_web: ToolQuery, prev_kg: ToolQuery) -> GeneratedQueries:
        entry = self._by_prefix.get(prefix)
        if entry is None:
            raise InputError(f"{self._utterance_id}: no scripted queries for prefix {prefix!r}")
        return GeneratedQueries(web=entry.web, kg=entry.kg)


class FinalQueryGenerator:
    """Always answers with the queries scripted for the last block.

    Interval-agnostic: used for whole-utterance (non-streaming) runs where
    only the final query matters, regardless of the interval the trace was
    scripted at.
    """

    def __init__(self, trace: UtteranceTrace) -> None:
        if not trace.scripted_queries:
            raise InputError(f"{trace.utterance_id}: trace has no scripted queries")
        final_block = max(trace.scripted_queries)
        self._entry = trace.scripted_queries[final_block]

    def generate(self, prefix: str, prev_web: ToolQuery, prev_kg: ToolQuery) -> GeneratedQueries:
        return GeneratedQueries(web=self._entry.web, kg=self._entry.kg)


class StreamingScriptedGenerator:
    """Scripted generator that suppresses redundant queries.

    Emits NO_QUERY for a tool when the scripted query for the current prefix
    is equivalent to the most recent fired query, judged by the supplied
    similarity predicate; this mirrors how the labeling pipeline decides
    NO_QUERY, so simulated behavior and training labels agree.
    """

    def __init__(
        self,
        trace: UtteranceTrace,
        block_ms: int,
        similar: Callable[[ToolQuery, ToolQuery], bool],
    ) -> None:
        self._inner = ScriptedQueryGenerator(trace, block_ms)
        self._similar = similar

    def generate(self, prefix: str, prev_web: ToolQuery, prev_kg: ToolQuery) -> GeneratedQueries:
        raw = self._inner.generate(prefix, prev_web, prev_kg)
        web = NO_QUERY if self._similar(raw.web, prev_web) else raw.web
        kg = NO_QUERY if self._similar(raw.kg, prev_kg) else raw.kg
        return GeneratedQueries(web=web, kg=kg)


def fixed_interval_step(
    gen: QueryGenerator, prefix: str, block: BlockIndex, fired_at_ms: int
) -> TriggerDecision:
    """Fire a fresh query pair for this block, ignoring any previous query.

    A generator error (or an illegal NO_QUERY under this policy) is recorded
    as a failed decision for the affected tool; the session carries on.
    """
    try:
        raw = gen.generate(prefix, NO_QUERY, NO_QUERY)
    except Exception:
        log.warning("query generator failed at block %d; recording failed threads", block)
        return TriggerDecision(
            block=block,
            fired_at_ms=fired_at_ms,
            web=ToolDecision(TriggerAction.FAILED),
            kg=ToolDecision(TriggerAction.FAILED),
        )

    def decide(query: ToolQuery) -> ToolDecision:
        if query.is_no_query:
            return ToolDecision(TriggerAction.FAILED)
        return ToolDecision(TriggerAction.FIRE, query)

    return TriggerDecision(
        block=block,
        fired_at_ms=fired_at_ms,
        web=decide(raw.web),
        kg=decide(raw.kg),
        declared_latency_ms=raw.latency_ms,
    )


def model_trigger_step(
    gen: QueryGenerator,
    prefix: str,
    prev_web: ToolQuery,
    prev_kg: ToolQuery,
    block: BlockIndex,
    fired_at_ms: int,
) -> TriggerDecision:
    """Ask the generator whether each tool needs a new query given its last one.

    Generator errors degrade to NO_QUERY so the running tool call survives.
    """
    try:
        raw = gen.generate(prefix, prev_web, prev_kg)
    except Exception:
        log.warning("query generator failed at block %d; keeping running calls", block)
        return TriggerDecision(
            block=block,
            fired_at_ms=fired_at_ms,
            web=ToolDecision(TriggerAction.NO_QUERY),
            kg=ToolDecision(TriggerAction.NO_QUERY),
        )

    def decide(query: ToolQuery) -> ToolDecision:
        if query.is_no_query:
            return ToolDecision(TriggerAction.NO_QUERY)
        return ToolDecision(TriggerAction.FIRE, query)

    return TriggerDecision(
        block=block,
        fired_at_ms=fired_at_ms,
        web=decide(raw.web),
        kg=decide(raw.kg),
        declared_latency_ms=raw.latency_ms,
    )
