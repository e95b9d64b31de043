"""Training-label construction for the model-triggered policy.

Given per-block reference queries (precomputed offline; this module never
calls a model), each block is labeled either with the reference query (fire)
or with NO_QUERY when the reference query is equivalent to the most recent
fired one. Equivalence is exact canonical match for KG queries and same
top-document retrieval for web queries.

To teach recovery from early misfires, a fraction of steps get their
previous query swapped for a wrong one drawn from other utterances, with the
label forced back to the reference query.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

from .core import (
    NO_QUERY,
    BlockIndex,
    ScriptedQueries,
    Tool,
    ToolQuery,
    UtteranceTrace,
    blocks_of,
)
from .errors import InputError, WrongToolError
from .orchestrator import substream_rng
from .retrieval import DocIndex, top_docs_match

TRAINING_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SimilarityContext:
    """Backend and knobs for query-equivalence checks.

    Web equivalence compares top-document *sets* by default (ordered=False);
    the session reflector defaults to ordered lists instead.
    """

    index: DocIndex
    compare_k: int = 5
    retrieve_k: int = 50
    ordered: bool = False


def similarity_f(current: ToolQuery, prev: ToolQuery, ctx: SimilarityContext) -> bool:
    """True when firing `current` would be redundant given `prev` already ran."""
    if current.is_no_query:
        raise ValueError("current query must be a real web or kg query")
    if prev.is_no_query:
        return False
    if current.tool != prev.tool:
        raise WrongToolError(f"cannot compare a {current.tool} query against a {prev.tool} query")
    if current.tool is Tool.KG:
        return current.kg_query.canonical_key() == prev.kg_query.canonical_key()
    return top_docs_match(ctx.index, current, prev, ctx.compare_k, ctx.retrieve_k, ctx.ordered)


@dataclass(frozen=True)
class LabeledStep:
    """One (block, tool) training example.

    ``prev_query`` is the true threading state (most recent fired label);
    for negative samples the exported training input uses ``negative_prev``
    instead while the label falls back to the reference query.
    """

    utterance_id: str
    block: BlockIndex
    tool: Tool
    prefix: str
    prev_query: ToolQuery
    pseudo_gt: ToolQuery
    label: ToolQuery
    is_negative_sample: bool = False
    negative_prev: ToolQuery | None = None

    @property
    def training_prev(self) -> ToolQuery:
        return self.negative_prev if self.is_negative_sample else self.prev_query


def assign_streaming_labels(
    trace: UtteranceTrace,
    block_ms: int,
    ctx: SimilarityContext,
    pseudo_gt: dict[BlockIndex, ScriptedQueries] | None = None,
) -> list[LabeledStep]:
    """Label every (block, tool) of a trace: fire the reference query or NO_QUERY.

    The previous query threads through fired labels exactly as the streaming
    policy would see it, so replaying the labels reproduces the trigger
    decisions. ``pseudo_gt`` defaults to the trace's scripted queries.
    """
    references = pseudo_gt if pseudo_gt is not None else trace.scripted_queries
    blocks = blocks_of(trace, block_ms)
    missing = [b for b, _ in blocks if b not in references]
    if missing:
        raise InputError(f"{trace.utterance_id}: missing reference queries for blocks {missing}")

    steps: list[LabeledStep] = []
    prev: dict[Tool, ToolQuery] = {Tool.WEB: NO_QUERY, Tool.KG: NO_QUERY}
    for block, prefix in blocks:
        entry = references[block]
        for tool in (Tool.WEB, Tool.KG):
            gt = entry.for_tool(tool)
            if gt.is_no_query:
                raise InputError(
                    f"{trace.utterance_id}: reference query for block {block}/{tool.value} "
                    "must be a real query"
                )
            label = NO_QUERY if similarity_f(gt, prev[tool], ctx) else gt
            steps.append(
                LabeledStep(
                    utterance_id=trace.utterance_id,
                    block=block,
                    tool=tool,
                    prefix=prefix,
                    prev_query=prev[tool],
                    pseudo_gt=gt,
                    label=label,
                )
            )
            if not label.is_no_query:
                prev[tool] = label
    return steps


def build_negative_pool(
    all_steps: list[LabeledStep],
) -> dict[Tool, list[tuple[str, ToolQuery]]]:
    """Candidate wrong-previous queries per tool: every step's reference query,
    tagged by utterance so a step never draws from its own utterance."""
    pool: dict[Tool, list[tuple[str, ToolQuery]]] = {Tool.WEB: [], Tool.KG: []}
    for step in all_steps:
        pool[step.tool].append((step.utterance_id, step.pseudo_gt))
    return pool


def inject_negative_samples(
    steps: list[LabeledStep],
    p: float,
    seed: int,
    pool: dict[Tool, list[tuple[str, ToolQuery]]],
) -> list[LabeledStep]:
    """Independently turn each step into a negative sample with probability p.

    A selected step gets a wrong previous query (from another utterance,
    never equal to the true previous) and its label forced to the reference
    query. Draws come from an RNG substream per utterance, so batch order
    does not matter.
    """
    if not (0.0 <= p <= 1.0):
        raise ValueError("p must be in [0, 1]")
    if p > 0 and not any(pool.get(tool) for tool in (Tool.WEB, Tool.KG)):
        raise InputError("negative sampling needs a non-empty pool")

    out: list[LabeledStep] = []
    rngs: dict[str, object] = {}
    for step in steps:
        rng = rngs.get(step.utterance_id)
        if rng is None:
            rng = substream_rng(seed, "negatives", step.utterance_id)
            rngs[step.utterance_id] = rng
        if p == 0.0 or rng.random() >= p:
            out.append(step)
            continue
        candidates = [
            query
            for uid, query in pool.get(step.tool, [])
            if uid != step.utterance_id and query != step.prev_query
        ]
        if not candidates:
            raise InputError(
                f"{step.utterance_id}: no usable negative candidates for tool {step.tool.value}"
            )
        negative = candidates[rng.randrange(len(candidates))]
        out.append(
            replace(
                step,
                label=step.pseudo_gt,
                is_negative_sample=True,
                negative_prev=negative,
            )
        )
    return out


def step_to_dict(step: LabeledStep) -> dict:
    out = {
        "utterance_id": step.utterance_id,
        "block": step.block,
        "tool": step.tool.value,
        "prefix_text": step.prefix,
        "prev_query": step.training_prev.to_wire(),
        "label": step.label.to_wire(),
        "pseudo_gt": step.pseudo_gt.to_wire(),
        "is_negative_sample": step.is_negative_sample,
    }
    if step.is_negative_sample:
        out["original_prev"] = step.prev_query.to_wire()
    return out


def step_from_dict(raw: dict) -> LabeledStep:
    try:
        tool = Tool(raw["tool"])
        is_negative = bool(raw["is_negative_sample"])
        exported_prev = ToolQuery.from_wire(raw["prev_query"], tool)
        if is_negative:
            prev = ToolQuery.from_wire(raw["original_prev"], tool)
            negative_prev = exported_prev
        else:
            prev = exported_prev
            negative_prev = None
        return LabeledStep(
            utterance_id=str(raw["utterance_id"]),
            block=int(raw["block"]),
            tool=tool,
            prefix=str(raw["prefix_text"]),
            prev_query=prev,
            pseudo_gt=ToolQuery.from_wire(raw["pseudo_gt"], tool),
            label=ToolQuery.from_wire(raw["label"], tool),
            is_negative_sample=is_negative,
            negative_prev=negative_prev,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed training record: {exc}") from exc


def export_training_set(steps: list[LabeledStep], path: str) -> None:
    """Write steps as JSONL; an empty step list yields a valid empty file."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for step in steps:
                fh.write(json.dumps(step_to_dict(step)) + "\n")
    except OSError as exc:
        raise InputError(f"cannot write training set to {path}: {exc}") from exc


def read_training_set(path: str) -> list[LabeledStep]:
    steps = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    steps.append(step_from_dict(json.loads(line)))
                except (json.JSONDecodeError, InputError) as exc:
                    raise InputError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise InputError(f"cannot read training set from {path}: {exc}") from exc
    return steps
