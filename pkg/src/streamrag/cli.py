"""Command-line entry point: simulate sessions, build labels, emit reports.

Config precedence is flags > config file > built-in defaults; point
STREAMRAG_CONFIG at a JSON file (or pass --config) to change defaults. All
outputs are deterministic for a given seed and inputs, and every command
writes a manifest recording config, input digests, and outputs so a run can
be reproduced byte for byte. Exit codes: 0 success, 2 input error,
3 internal error.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Any, Callable

import click

from . import __version__
from .core import (
    SessionConfig,
    Strategy,
    UtteranceTrace,
    iter_jsonl,
    read_traces,
)
from .errors import AlignmentError, InputError
from .labeling import (
    SimilarityContext,
    assign_streaming_labels,
    build_negative_pool,
    export_training_set,
    inject_negative_samples,
    similarity_f,
)
from .metrics import (
    SavingsBasis,
    aggregate_latency,
    per_pair_savings_rows,
    read_judgments,
    savings_report,
    score_responses,
)
from .orchestrator import (
    Backends,
    LatencyModel,
    outcome_from_dict,
    run_batch,
)
from .retrieval import KgStore, index_documents
from .triggers import (
    FinalQueryGenerator,
    ScriptedQueryGenerator,
    StreamingScriptedGenerator,
)

DEFAULTS: dict[str, Any] = {
    "strategy": "open_book",
    "block_ms": None,  # per-strategy default
    "ref_length_tokens": 300,
    "web_kg_ratio": "2:1",
    "top_docs": 50,
    "reflect_top_k": 5,
    "chunk_tokens": 128,
    "reflect_ordered": True,
    "negative_prob": 0.1,
    "endpoint_delay_ms": 0,
    "seed": 0,
    "query_gen_ms": 590,
    "web_fetch_ms": 2500,
    "chunk_rerank_ms": 280,
    "kg_lookup_ms": 200,
    "response_gen_ms": 2520,
    "response_tail_ms": 0,
}


def _load_config_file(explicit_path: str | None) -> dict[str, Any]:
    path = explicit_path or os.environ.get("STREAMRAG_CONFIG")
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON config: {exc}") from exc
    if not isinstance(raw, dict):
        raise InputError(f"{path}: config must be a JSON object")
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise InputError(f"{path}: unknown config keys {unknown}; valid: {sorted(DEFAULTS)}")
    return raw


def _resolve(flags: dict[str, Any], config_path: str | None) -> dict[str, Any]:
    resolved = dict(DEFAULTS)
    resolved.update(_load_config_file(config_path))
    resolved.update({k: v for k, v in flags.items() if v is not None})
    return resolved


def _parse_ratio(raw: str) -> tuple[int, int]:
    try:
        web, kg = raw.split(":")
        return int(web), int(kg)
    except ValueError as exc:
        raise InputError(f"ratio must look like '2:1', got {raw!r}") from exc


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_jsonl(path: Path, records: list[dict]) -> None:
    _atomic_write(path, "".join(json.dumps(r) + "\n" for r in records))


def _write_json(path: Path, payload: Any) -> None:
    _atomic_write(path, json.dumps(payload, indent=2) + "\n")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    import io

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    _atomic_write(path, buf.getvalue())


def _write_manifest(out_dir: Path, command: str, config: dict, inputs: dict[str, str],
                    outputs: list[str], seed: int) -> None:
    manifest = {
        "tool": "streamrag",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": {k: config[k] for k in sorted(config)},
        "inputs": {name: _sha256(path) for name, path in sorted(inputs.items())},
        "outputs": sorted(outputs),
    }
    _write_json(out_dir / "manifest.json", manifest)


def _read_corpus(path: str) -> list[dict]:
    records = []
    for lineno, raw in iter_jsonl(path):
        if not isinstance(raw, dict) or "doc_id" not in raw or "text" not in raw:
            raise InputError(f"{path}:{lineno}: corpus record needs doc_id and text")
        records.append(raw)
    if not records:
        raise InputError(f"{path}: corpus is empty")
    return records


def _read_kg(path: str) -> KgStore:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise InputError(f"{path}: KG fixture must be a JSON array")
    return KgStore.from_records(raw)


def _read_outcomes(path: str):
    outcomes = []
    for lineno, raw in iter_jsonl(path):
        try:
            outcomes.append(outcome_from_dict(raw))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}:{lineno}: malformed outcome: {exc}") from exc
    if not outcomes:
        raise InputError(f"{path}: no outcomes")
    return outcomes


@click.group()
@click.version_option(version=__version__, prog_name="streamrag")
def cli() -> None:
    """Streaming tool-query session simulator, labeler, and report builder."""


@cli.command()
@click.option("--traces", "traces_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kg", "kg_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--strategy", type=click.Choice([s.value for s in Strategy]), default=None,
              help="Defaults to open_book.")
@click.option("--block-ms", type=int, default=None)
@click.option("--ref-tokens", "ref_length_tokens", type=int, default=None)
@click.option("--ratio", "web_kg_ratio", default=None, help="web:kg reference ratio, e.g. 2:1")
@click.option("--top-docs", type=int, default=None)
@click.option("--reflect-top-k", type=int, default=None)
@click.option("--chunk-tokens", type=int, default=None)
@click.option("--endpoint-delay-ms", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--query-gen-ms", type=int, default=None)
@click.option("--web-fetch-ms", type=int, default=None)
@click.option("--chunk-rerank-ms", type=int, default=None)
@click.option("--kg-lookup-ms", type=int, default=None)
@click.option("--response-gen-ms", type=int, default=None)
@click.option("--response-tail-ms", type=int, default=None)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--format", "out_format", type=click.Choice(["json", "csv", "both"]), default="both",
              show_default=True, help="Latency table format.")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def simulate(traces_path, corpus_path, kg_path, strategy, block_ms, ref_length_tokens,
             web_kg_ratio, top_docs, reflect_top_k, chunk_tokens, endpoint_delay_ms, seed,
             query_gen_ms, web_fetch_ms, chunk_rerank_ms, kg_lookup_ms, response_gen_ms,
             response_tail_ms, jobs, out_dir, out_format, config_path) -> None:
    """Run sessions for every trace and write outcomes, event logs, and a latency table."""
    flags = {
        "strategy": strategy, "block_ms": block_ms, "ref_length_tokens": ref_length_tokens,
        "web_kg_ratio": web_kg_ratio, "top_docs": top_docs, "reflect_top_k": reflect_top_k,
        "chunk_tokens": chunk_tokens, "endpoint_delay_ms": endpoint_delay_ms, "seed": seed,
        "query_gen_ms": query_gen_ms, "web_fetch_ms": web_fetch_ms,
        "chunk_rerank_ms": chunk_rerank_ms, "kg_lookup_ms": kg_lookup_ms,
        "response_gen_ms": response_gen_ms, "response_tail_ms": response_tail_ms,
    }
    cfg = _resolve(flags, config_path)
    strategy_enum = Strategy(cfg["strategy"])
    session_config = SessionConfig(
        strategy=strategy_enum,
        block_ms=cfg["block_ms"] or 0,
        ref_length_tokens=cfg["ref_length_tokens"],
        web_kg_ratio=_parse_ratio(cfg["web_kg_ratio"]),
        top_docs=cfg["top_docs"],
        reflect_top_k=cfg["reflect_top_k"],
        chunk_tokens=cfg["chunk_tokens"],
        reflect_ordered=cfg["reflect_ordered"],
        endpoint_delay_ms=cfg["endpoint_delay_ms"],
        rng_seed=cfg["seed"],
    )
    latency = LatencyModel(
        query_gen=cfg["query_gen_ms"],
        web_fetch=cfg["web_fetch_ms"],
        chunk_rerank=cfg["chunk_rerank_ms"],
        kg_lookup=cfg["kg_lookup_ms"],
        response_gen=cfg["response_gen_ms"],
        response_tail=cfg["response_tail_ms"],
        seed=cfg["seed"],
    )

    backends = Backends(index=index_documents(_read_corpus(corpus_path)), kg_store=_read_kg(kg_path))
    traces = read_traces(traces_path)
    if not traces:
        raise InputError(f"{traces_path}: no traces")

    factory = _generator_factory(strategy_enum, session_config, backends)
    outcomes, errors = run_batch(traces, session_config, factory, backends, latency, jobs=jobs)
    for uid, message in errors:
        click.echo(f"warning: trace {uid} failed: {message}", err=True)
    if not outcomes:
        raise InputError("every trace failed; nothing to report")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = ["outcomes.jsonl", "events.jsonl"]
    _write_jsonl(out / "outcomes.jsonl", [o.to_dict() for o in outcomes])
    event_rows = []
    for outcome in outcomes:
        for event in outcome.event_log:
            row = {"utterance_id": outcome.utterance_id}
            row.update(event.to_dict())
            event_rows.append(row)
    _write_jsonl(out / "events.jsonl", event_rows)

    table = aggregate_latency(outcomes)
    if out_format in ("json", "both"):
        _write_json(out / "latency_table.json", table.rows())
        outputs.append("latency_table.json")
    if out_format in ("csv", "both"):
        _write_csv(out / "latency_table.csv", table.rows(),
                   ["strategy", "stat", "query_gen", "tool_results", "response_gen", "total"])
        outputs.append("latency_table.csv")

    _write_manifest(out, "simulate", cfg,
                    {"traces": traces_path, "corpus": corpus_path, "kg": kg_path},
                    outputs, seed=cfg["seed"])
    click.echo(f"simulated {len(outcomes)} sessions ({strategy_enum.value}) -> {out}")


def _generator_factory(strategy: Strategy, config: SessionConfig, backends: Backends
                       ) -> Callable[[UtteranceTrace], Any]:
    if strategy is Strategy.CLOSED_BOOK:
        return lambda trace: None
    if strategy is Strategy.OPEN_BOOK:
        return lambda trace: FinalQueryGenerator(trace)
    if strategy is Strategy.FIXED_INTERVAL:
        return lambda trace: ScriptedQueryGenerator(trace, config.block_ms)
    ctx = SimilarityContext(index=backends.index, compare_k=config.reflect_top_k,
                            retrieve_k=config.top_docs, ordered=False)
    similar = lambda current, prev: similarity_f(current, prev, ctx)
    return lambda trace: StreamingScriptedGenerator(trace, config.block_ms, similar)


@cli.command()
@click.option("--traces", "traces_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pseudo-gt", "pseudo_gt_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="External reference queries; defaults to the traces' scripted ones.")
@click.option("--block-ms", type=int, default=None, help="Defaults to 500.")
@click.option("--negative-prob", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--top-docs", type=int, default=None)
@click.option("--reflect-top-k", type=int, default=None)
@click.option("--web-match", type=click.Choice(["set", "ordered"]), default="set",
              show_default=True, help="Top-document comparison mode for web equivalence.")
@click.option("--show-labels", is_flag=True, help="Echo the per-block label table per utterance.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
def label(traces_path, corpus_path, pseudo_gt_path, block_ms, negative_prob, seed,
          top_docs, reflect_top_k, web_match, show_labels, out_dir, config_path) -> None:
    """Build a streaming-trigger training set (fire vs NO_QUERY) with negatives."""
    flags = {"block_ms": block_ms, "negative_prob": negative_prob, "seed": seed,
             "top_docs": top_docs, "reflect_top_k": reflect_top_k}
    cfg = _resolve(flags, config_path)
    resolved_block_ms = cfg["block_ms"] or 500

    traces = read_traces(traces_path)
    if not traces:
        raise InputError(f"{traces_path}: no traces")
    index = index_documents(_read_corpus(corpus_path))
    ctx = SimilarityContext(index=index, compare_k=cfg["reflect_top_k"],
                            retrieve_k=cfg["top_docs"], ordered=(web_match == "ordered"))

    pseudo_gt = _read_pseudo_gt(pseudo_gt_path, traces) if pseudo_gt_path else {}

    all_steps = []
    for trace in traces:
        overrides = pseudo_gt.get(trace.utterance_id)
        steps = assign_streaming_labels(trace, resolved_block_ms, ctx, overrides)
        all_steps.extend(steps)
        if show_labels:
            click.echo(f"{trace.utterance_id}:")
            for step in steps:
                label_text = json.dumps(step.label.to_wire())
                click.echo(f"  block {step.block:2d} {step.tool.value:3s} {label_text}")
    pool = build_negative_pool(all_steps)
    labeled = inject_negative_samples(all_steps, cfg["negative_prob"], cfg["seed"], pool)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_training_set(labeled, str(out / "training.jsonl"))

    fires = sum(1 for s in labeled if not s.label.is_no_query)
    summary = {
        "steps": len(labeled),
        "fires": fires,
        "no_query": len(labeled) - fires,
        "negatives": sum(1 for s in labeled if s.is_negative_sample),
        "utterances": len(traces),
        "block_ms": resolved_block_ms,
    }
    _write_json(out / "summary.json", summary)
    inputs = {"traces": traces_path, "corpus": corpus_path}
    if pseudo_gt_path:
        inputs["pseudo_gt"] = pseudo_gt_path
    _write_manifest(out, "label", cfg, inputs, ["training.jsonl", "summary.json"], seed=cfg["seed"])
    click.echo(
        f"labeled {summary['steps']} steps: {summary['fires']} fire, "
        f"{summary['no_query']} NO_QUERY, {summary['negatives']} negatives -> {out}"
    )


def _read_pseudo_gt(path: str, traces) -> dict[str, dict]:
    from .core import ScriptedQueries, Tool, ToolQuery

    known = {t.utterance_id for t in traces}
    per_utterance: dict[str, dict] = {}
    unknown = set()
    for lineno, raw in iter_jsonl(path):
        try:
            uid = str(raw["utterance_id"])
            block = int(raw["block"])
            entry = ScriptedQueries(
                web=ToolQuery.from_wire(raw["web"], Tool.WEB),
                kg=ToolQuery.from_wire(raw["kg"], Tool.KG),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}:{lineno}: malformed reference-query record: {exc}") from exc
        if uid not in known:
            unknown.add(uid)
            continue
        per_utterance.setdefault(uid, {})[block] = entry
    if unknown:
        raise AlignmentError(f"{path}: reference queries for unknown utterances: {sorted(unknown)}")
    return per_utterance


@cli.command()
@click.option("--baseline", "baseline_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Baseline outcomes JSONL.")
@click.option("--strategy", "strategy_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Strategy outcomes JSONL.")
@click.option("--judgments", "judgments_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--format", "out_format", type=click.Choice(["json", "csv", "both"]),
              default="both", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=None)
def report(baseline_path, strategy_path, judgments_path, out_dir, out_format,
           config_path, seed) -> None:
    """Compare paired outcome sets: latency savings, plus scores when judged."""
    cfg = _resolve({"seed": seed}, config_path)
    baseline = _read_outcomes(baseline_path)
    strategy = _read_outcomes(strategy_path)

    reports = [savings_report(baseline, strategy, basis) for basis in
               (SavingsBasis.MEAN, SavingsBasis.P50)]
    pair_rows = per_pair_savings_rows(baseline, strategy)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    savings_rows = [r.to_dict() for r in reports]
    if out_format in ("json", "both"):
        _write_json(out / "savings.json", savings_rows)
        outputs.append("savings.json")
    if out_format in ("csv", "both"):
        _write_csv(out / "savings.csv", savings_rows,
                   ["basis", "tool_use_latency_base_s", "mean_savings_pct",
                    "pct_queries_benefiting", "max_parallel_threads", "n_pairs"])
        outputs.append("savings.csv")
    _write_csv(out / "savings_per_utterance.csv", pair_rows,
               ["utterance_id", "baseline_tool_results_s", "strategy_tool_results_s",
                "saving_s", "baseline_first_token_s", "strategy_first_token_s"])
    outputs.append("savings_per_utterance.csv")

    inputs = {"baseline": baseline_path, "strategy": strategy_path}
    if judgments_path:
        scores = score_responses(read_judgments(judgments_path))
        _write_json(out / "scores.json", scores)
        outputs.append("scores.json")
        inputs["judgments"] = judgments_path
    else:
        click.echo("no judgments file given; scores skipped", err=True)

    _write_manifest(out, "report", cfg, inputs, outputs, seed=cfg["seed"])
    click.echo(f"report written -> {out}")


def main(argv: list[str] | None = None) -> None:
    """Console entry point with explicit exit codes (0 ok, 2 input, 3 internal)."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.Abort:
        sys.exit(130)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(2)
    except InputError as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(2)
    except Exception as exc:  # noqa: BLE001 - last-resort internal error mapping
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(3)
    sys.exit(0)


if __name__ == "__main__":
    main()
