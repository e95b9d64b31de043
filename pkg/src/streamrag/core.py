"""Core domain types: utterance traces, tool queries, config, simulated clock.

Time is integer milliseconds on a virtual clock throughout. An utterance is
consumed block by block: block ``b`` (1-based) covers the audio window
``(0, b * block_ms]`` and its prefix transcript contains exactly the words
whose end timestamp falls inside that window. A word still in flight at a
block boundary is excluded until the block in which it completes.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Iterator

from .errors import EmptyTraceError, InputError

BlockIndex = int

NO_QUERY_LITERAL = "NO_QUERY"


class Strategy(str, Enum):
    CLOSED_BOOK = "closed_book"
    OPEN_BOOK = "open_book"
    FIXED_INTERVAL = "fixed_interval"
    MODEL_TRIGGERED = "model_triggered"


class KgDomain(str, Enum):
    FINANCE = "finance"
    SPORTS = "sports"
    MUSIC = "music"
    MOVIE = "movie"
    ENCYCLOPEDIA = "encyclopedia"
    OTHER = "other"


@dataclass(frozen=True)
class KgQuery:
    """Structured knowledge-graph query: a domain plus flat string attributes."""

    domain: KgDomain
    attributes: tuple[tuple[str, str], ...]

    @classmethod
    def make(cls, domain: KgDomain | str, attributes: dict[str, str] | None = None) -> "KgQuery":
        dom = KgDomain(domain)
        attrs = tuple(sorted((str(k), str(v)) for k, v in (attributes or {}).items()))
        return cls(domain=dom, attributes=attrs)

    def canonical_key(self) -> tuple:
        """Order-insensitive, case-insensitive identity used for lookup and equality."""
        return (self.domain.value, tuple((k, v.lower()) for k, v in self.attributes))

    def as_flat_dict(self) -> dict[str, str]:
        out = {"domain": self.domain.value}
        out.update(dict(self.attributes))
        return out

    @classmethod
    def from_flat_dict(cls, raw: dict[str, Any]) -> "KgQuery":
        if "domain" not in raw or not str(raw["domain"]):
            raise InputError(f"kg query missing non-empty 'domain': {raw!r}")
        attrs = {k: v for k, v in raw.items() if k != "domain"}
        try:
            return cls.make(str(raw["domain"]), attrs)
        except ValueError as exc:
            raise InputError(str(exc)) from exc


class Tool(str, Enum):
    WEB = "web"
    KG = "kg"


@dataclass(frozen=True)
class ToolQuery:
    """Tagged union: a web query string, a structured KG query, or NO_QUERY.

    Exactly one of ``web_text`` / ``kg_query`` is set for the web/kg variants;
    both are None for the NO_QUERY sentinel.
    """

    web_text: str | None = None
    kg_query: KgQuery | None = None

    def __post_init__(self) -> None:
        if self.web_text is not None and self.kg_query is not None:
            raise ValueError("a ToolQuery holds at most one payload")
        if self.web_text is not None and not self.web_text:
            raise ValueError("web query text must be non-empty")

    @classmethod
    def web(cls, text: str) -> "ToolQuery":
        return cls(web_text=text)

    @classmethod
    def kg(cls, query: KgQuery) -> "ToolQuery":
        return cls(kg_query=query)

    @property
    def is_no_query(self) -> bool:
        return self.web_text is None and self.kg_query is None

    @property
    def tool(self) -> Tool | None:
        if self.web_text is not None:
            return Tool.WEB
        if self.kg_query is not None:
            return Tool.KG
        return None

    def to_wire(self) -> Any:
        """Serialize for JSON files: plain string (web), flat map (kg), or "NO_QUERY"."""
        if self.web_text is not None:
            return self.web_text
        if self.kg_query is not None:
            return self.kg_query.as_flat_dict()
        return NO_QUERY_LITERAL

    @classmethod
    def from_wire(cls, raw: Any, tool: Tool) -> "ToolQuery":
        if raw == NO_QUERY_LITERAL or raw is None:
            return NO_QUERY
        if tool is Tool.WEB:
            if not isinstance(raw, str):
                raise InputError(f"web query must be a string, got {type(raw).__name__}")
            return cls.web(raw)
        if not isinstance(raw, dict):
            raise InputError(f"kg query must be a flat map, got {type(raw).__name__}")
        return cls.kg(KgQuery.from_flat_dict(raw))


NO_QUERY = ToolQuery()


@dataclass(frozen=True)
class Word:
    text: str
    start_ms: int
    end_ms: int


@dataclass(frozen=True)
class ScriptedQueries:
    """The tool queries scripted for one transcript prefix."""

    web: ToolQuery
    kg: ToolQuery

    def for_tool(self, tool: Tool) -> ToolQuery:
        return self.web if tool is Tool.WEB else self.kg


@dataclass
class UtteranceTrace:
    """Word-timestamped transcript plus per-prefix scripted tool queries.

    The scripted queries stand in for live query-generation model output:
    entry ``b`` is the query the generator would produce after hearing the
    prefix of block ``b``.
    """

    utterance_id: str
    words: list[Word]
    scripted_queries: dict[BlockIndex, ScriptedQueries] = field(default_factory=dict)
    final_answer_ref: str | None = None

    def __post_init__(self) -> None:
        prev_start = -1
        prev_end = 0
        for w in self.words:
            if w.end_ms < w.start_ms:
                raise InputError(f"{self.utterance_id}: word {w.text!r} ends before it starts")
            if w.start_ms < prev_start:
                raise InputError(f"{self.utterance_id}: word starts not nondecreasing at {w.text!r}")
            if w.start_ms < prev_end:
                raise InputError(f"{self.utterance_id}: overlapping word intervals at {w.text!r}")
            prev_start, prev_end = w.start_ms, w.end_ms

    @property
    def end_ms(self) -> int:
        if not self.words:
            raise EmptyTraceError(f"{self.utterance_id}: trace has no words")
        return self.words[-1].end_ms

    def transcript(self) -> str:
        return " ".join(w.text for w in self.words)


def blocks_of(trace: UtteranceTrace, block_ms: int) -> list[tuple[BlockIndex, str]]:
    """Split a trace into block prefixes: block b holds words with end_ms <= b*block_ms.

    Returns one ``(block_index, prefix_transcript)`` pair per block, for
    blocks 1..B with ``B = ceil(last_end_ms / block_ms)``. The prefix of a
    block may be empty when no word has completed yet.
    """
    if block_ms <= 0:
        raise ValueError("block_ms must be positive")
    if not trace.words:
        raise EmptyTraceError(f"{trace.utterance_id}: trace has no words")
    last_end = trace.end_ms
    total_blocks = -(-last_end // block_ms)
    out: list[tuple[BlockIndex, str]] = []
    texts: list[str] = []
    word_iter = iter(trace.words)
    pending = next(word_iter, None)
    for b in range(1, total_blocks + 1):
        boundary = b * block_ms
        while pending is not None and pending.end_ms <= boundary:
            texts.append(pending.text)
            pending = next(word_iter, None)
        out.append((b, " ".join(texts)))
    return out


@dataclass(order=True)
class _Scheduled:
    fire_at_ms: int
    seq: int
    event: Any = field(compare=False)


class SimClock:
    """Deterministic discrete-event clock.

    Events fire in nondecreasing time; ties break by insertion order. The
    current time never decreases.
    """

    def __init__(self, start_ms: int = 0) -> None:
        if start_ms < 0:
            raise ValueError("start_ms must be non-negative")
        self._now_ms = start_ms
        self._queue: list[_Scheduled] = []
        self._next_seq = 0

    @property
    def now_ms(self) -> int:
        return self._now_ms

    def schedule(self, fire_at_ms: int, event: Any) -> None:
        if fire_at_ms < self._now_ms:
            raise ValueError("cannot schedule in the past")
        heapq.heappush(self._queue, _Scheduled(fire_at_ms, self._next_seq, event))
        self._next_seq += 1

    def peek_next_ms(self) -> int | None:
        return self._queue[0].fire_at_ms if self._queue else None

    def pop_due(self, until_ms: int) -> Any | None:
        """Pop the next event with fire_at_ms <= until_ms, advancing to it.

        Returns None (without advancing past pending events) when nothing is
        due; callers then advance to until_ms themselves or keep scheduling.
        """
        if self._queue and self._queue[0].fire_at_ms <= until_ms:
            item = heapq.heappop(self._queue)
            self._now_ms = max(self._now_ms, item.fire_at_ms)
            return item.event
        return None

    def advance(self, until_ms: int) -> list[Any]:
        """Fire every event due at or before until_ms; end with now_ms == until_ms."""
        if until_ms < self._now_ms:
            raise ValueError("clock cannot move backwards")
        fired: list[Any] = []
        while True:
            event = self.pop_due(until_ms)
            if event is None:
                break
            fired.append(event)
        self._now_ms = until_ms
        return fired

    def drain(self) -> list[Any]:
        """Fire everything still pending, advancing to the final event time."""
        fired: list[Any] = []
        while self._queue:
            fired.extend(self.advance(self._queue[0].fire_at_ms))
        return fired


def advance_clock(clock: SimClock, until_ms: int) -> list[Any]:
    """Advance the clock to until_ms, returning the events that fired."""
    return clock.advance(until_ms)


@dataclass
class SessionConfig:
    """Knobs for one simulated session; defaults mirror the runtime setup.

    ``block_ms`` defaults by strategy: 1000 for fixed-interval triggering,
    500 for model-triggered. ``web_kg_ratio`` is web:kg within the reference
    budget. ``reflect_ordered`` picks ordered vs set comparison of top doc
    lists when judging result equivalence.
    """

    strategy: Strategy = Strategy.OPEN_BOOK
    block_ms: int = 0  # 0 = resolve from strategy
    ref_length_tokens: int = 300
    web_kg_ratio: tuple[int, int] = (2, 1)
    top_docs: int = 50
    reflect_top_k: int = 5
    chunk_tokens: int = 128
    reflect_ordered: bool = True
    negative_sample_prob: float = 0.1
    endpoint_delay_ms: int = 0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        self.strategy = Strategy(self.strategy)
        if self.block_ms == 0:
            self.block_ms = default_block_ms(self.strategy)
        if self.block_ms <= 0:
            raise InputError("block_ms must be positive")
        if self.ref_length_tokens < 0:
            raise InputError("ref_length_tokens must be >= 0")
        if not (0.0 <= self.negative_sample_prob <= 1.0):
            raise InputError("negative_sample_prob must be in [0, 1]")
        if self.web_kg_ratio[0] < 0 or self.web_kg_ratio[1] < 0:
            raise InputError("web_kg_ratio parts must be non-negative")
        if self.top_docs < 1 or self.reflect_top_k < 1 or self.chunk_tokens < 1:
            raise InputError("top_docs, reflect_top_k and chunk_tokens must be >= 1")
        if self.endpoint_delay_ms < 0:
            raise InputError("endpoint_delay_ms must be >= 0")


def default_block_ms(strategy: Strategy) -> int:
    return 500 if strategy is Strategy.MODEL_TRIGGERED else 1000


# --- trace JSONL I/O ------------------------------------------------------

def trace_to_dict(trace: UtteranceTrace) -> dict[str, Any]:
    return {
        "utterance_id": trace.utterance_id,
        "words": [{"text": w.text, "start_ms": w.start_ms, "end_ms": w.end_ms} for w in trace.words],
        "scripted_queries": {
            str(b): {"web": sq.web.to_wire(), "kg": sq.kg.to_wire()}
            for b, sq in sorted(trace.scripted_queries.items())
        },
        "final_answer_ref": trace.final_answer_ref,
    }


def trace_from_dict(raw: dict[str, Any]) -> UtteranceTrace:
    try:
        words = [Word(str(w["text"]), int(w["start_ms"]), int(w["end_ms"])) for w in raw["words"]]
        scripted: dict[int, ScriptedQueries] = {}
        for key, entry in raw.get("scripted_queries", {}).items():
            scripted[int(key)] = ScriptedQueries(
                web=ToolQuery.from_wire(entry["web"], Tool.WEB),
                kg=ToolQuery.from_wire(entry["kg"], Tool.KG),
            )
        return UtteranceTrace(
            utterance_id=str(raw["utterance_id"]),
            words=words,
            scripted_queries=scripted,
            final_answer_ref=raw.get("final_answer_ref"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed trace record: {exc}") from exc


def read_traces(path: str) -> list[UtteranceTrace]:
    """Read a JSONL trace file; parse errors carry 1-based line numbers."""
    traces = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                traces.append(trace_from_dict(raw))
            except InputError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return traces


def write_traces(traces: Iterable[UtteranceTrace], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps(trace_to_dict(trace)) + "\n")


def iter_jsonl(path: str) -> Iterator[tuple[int, Any]]:
    """Yield (lineno, parsed object) pairs from a JSONL file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
