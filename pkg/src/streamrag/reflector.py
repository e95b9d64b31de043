"""Sufficiency checking for intermediate tool calls, and cancellation.

Once the utterance is complete, the session knows the final query per tool.
An intermediate call is sufficient when it would have produced the same
results as the final call: for web queries, the leading ``compare_k`` ranked
document ids match; for KG queries, the store returns the same answer. The
earliest sufficient block wins and every still-pending call after it is
cancelled. A failed call is never sufficient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

from .core import BlockIndex, Tool, ToolQuery
from .errors import WrongToolError
from .retrieval import DocIndex, KgStore, kg_lookup, top_docs_match

if TYPE_CHECKING:
    from .retrieval import WebResult

REASON_IDENTICAL_QUERY = "identical_query"
REASON_TOP5_MATCH = "top5_match"
REASON_KG_RESULT_MATCH = "kg_result_match"
REASON_INSUFFICIENT = "insufficient"


class EntryStatus(str, Enum):
    PENDING = "pending"
    DONE = "done"
    CANCELLED = "cancelled"
    FAILED = "failed"


@dataclass
class CacheEntry:
    block: BlockIndex
    query: ToolQuery
    result: "WebResult | str | None" = None
    status: EntryStatus = EntryStatus.PENDING


@dataclass
class QueryCache:
    """Per-tool, block-ordered record of every tool call in a session."""

    web: list[CacheEntry] = field(default_factory=list)
    kg: list[CacheEntry] = field(default_factory=list)

    def entries(self, tool: Tool) -> list[CacheEntry]:
        return self.web if tool is Tool.WEB else self.kg

    def add(self, tool: Tool, entry: CacheEntry) -> None:
        entries = self.entries(tool)
        if entries and entries[-1].block >= entry.block:
            raise ValueError(f"cache blocks must strictly increase per tool ({tool.value})")
        entries.append(entry)

    def latest(self, tool: Tool) -> CacheEntry | None:
        entries = self.entries(tool)
        return entries[-1] if entries else None


@dataclass(frozen=True)
class ReflectContext:
    """Backends and comparison knobs for sufficiency checks."""

    index: DocIndex
    kg_store: KgStore
    compare_k: int = 5
    retrieve_k: int = 50
    ordered: bool = True


def reflect_with_reason(
    intermediate: ToolQuery, final: ToolQuery, ctx: ReflectContext
) -> tuple[bool, str]:
    """Like reflect(), but also names why the check passed or failed."""
    if intermediate.is_no_query:
        return False, REASON_INSUFFICIENT
    if intermediate.tool != final.tool:
        raise WrongToolError(
            f"cannot compare a {intermediate.tool} query against a {final.tool} query"
        )
    if intermediate.tool is Tool.WEB:
        if intermediate.web_text == final.web_text:
            return True, REASON_IDENTICAL_QUERY
        if top_docs_match(
            ctx.index, intermediate, final, ctx.compare_k, ctx.retrieve_k, ctx.ordered
        ):
            return True, REASON_TOP5_MATCH
        return False, REASON_INSUFFICIENT
    # KG: compare lookup results, not query text
    if intermediate.kg_query.canonical_key() == final.kg_query.canonical_key():
        return True, REASON_IDENTICAL_QUERY
    if kg_lookup(ctx.kg_store, intermediate) == kg_lookup(ctx.kg_store, final):
        return True, REASON_KG_RESULT_MATCH
    return False, REASON_INSUFFICIENT


def reflect(intermediate: ToolQuery, final: ToolQuery, ctx: ReflectContext) -> bool:
    """Would the intermediate query's results stand in for the final ones?"""
    ok, _ = reflect_with_reason(intermediate, final, ctx)
    return ok


def select_earliest_sufficient(
    cache: QueryCache, final: ToolQuery, ctx: ReflectContext
) -> BlockIndex | None:
    """Earliest block (before the final one) whose query passes reflect().

    Scans one tool's entries in block order; failed and cancelled calls never
    qualify. Returns None when nothing before the final entry passes; the
    caller then uses the final call's own results.
    """
    tool = final.tool
    if tool is None:
        raise WrongToolError("final query must be a web or kg query")
    entries = cache.entries(tool)
    if not entries:
        return None
    final_block = entries[-1].block
    for entry in entries:
        if entry.block >= final_block:
            break
        if entry.status in (EntryStatus.FAILED, EntryStatus.CANCELLED):
            continue
        if reflect(entry.query, final, ctx):
            return entry.block
    return None


def select_earliest_joint(
    cache: QueryCache, final_web: ToolQuery, final_kg: ToolQuery, ctx: ReflectContext
) -> tuple[BlockIndex | None, list[dict]]:
    """Earliest block at which BOTH tools' intermediate calls are sufficient.

    The session uses one cut point for cancellation and reference assembly,
    so a block qualifies only when its web and kg calls both pass. Returns
    the block (None if none qualifies) plus one reason record per scanned
    block for the event log.
    """
    web_by_block = {e.block: e for e in cache.web}
    kg_by_block = {e.block: e for e in cache.kg}
    blocks = sorted(set(web_by_block) | set(kg_by_block))
    if not blocks:
        return None, []
    final_block = blocks[-1]
    scan_log: list[dict] = []
    selected: BlockIndex | None = None
    for block in blocks:
        if block >= final_block:
            break

        def check(entry: CacheEntry | None, final: ToolQuery) -> tuple[bool, str]:
            if entry is None or entry.status in (EntryStatus.FAILED, EntryStatus.CANCELLED):
                return False, REASON_INSUFFICIENT
            return reflect_with_reason(entry.query, final, ctx)

        web_ok, web_reason = check(web_by_block.get(block), final_web)
        kg_ok, kg_reason = check(kg_by_block.get(block), final_kg)
        sufficient = web_ok and kg_ok
        scan_log.append(
            {"block": block, "web": web_reason, "kg": kg_reason, "sufficient": sufficient}
        )
        if sufficient:
            selected = block
            break
    return selected, scan_log


def cancel_after(cache: QueryCache, selected_block: BlockIndex) -> list[tuple[Tool, BlockIndex]]:
    """Cancel every still-pending call after the selected block.

    Completed calls keep their results (they are simply unused). Returns the
    (tool, block) pairs that transitioned to cancelled.
    """
    cancelled: list[tuple[Tool, BlockIndex]] = []
    for tool in (Tool.WEB, Tool.KG):
        for entry in cache.entries(tool):
            if entry.block > selected_block and entry.status is EntryStatus.PENDING:
                entry.status = EntryStatus.CANCELLED
                entry.result = None
                cancelled.append((tool, entry.block))
    return cancelled
