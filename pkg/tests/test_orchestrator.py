from __future__ import annotations


import pytest

from streamrag.core import (
    ScriptedQueries,
    SessionConfig,
    Strategy,
    UtteranceTrace,
    Word,
    blocks_of,
)
from streamrag.errors import IncompleteSessionError
from streamrag.orchestrator import (
    Backends,
    LatencyModel,
    SessionOutcome,
    first_token_latency,
    outcome_from_dict,
    run_batch,
    run_session,
    substream_rng,
)
from streamrag.synth import FixtureWorld, brand_founder_trace, early_fire_trace, random_batch
from streamrag.triggers import FinalQueryGenerator, ScriptedQueryGenerator

from checkers import (
    check_conservation,
    check_single_thread_per_tool,
    check_time_ordered,
    max_pending_per_tool,
)
from conftest import generator_for, session_config


class FailingGenerator:
    def generate(self, prefix, prev_web, prev_kg):
        raise RuntimeError("model unavailable")


def _uniform_trace(world: FixtureWorld, blocks: int = 3, last_end: int = 1400) -> UtteranceTrace:
    """Every block scripts the identical query pair."""
    entity = world.entities[5]
    scripted = {b: world.scripted(entity) for b in range(1, blocks + 1)}
    words = []
    for b in range(1, blocks + 1):
        end = min(b * 500 - 100, last_end) if b < blocks else last_end
        words.append(Word(f"w{b}", (b - 1) * 500 + 10, end))
    return UtteranceTrace("uniform", words, scripted)


class TestLatencyModel:
    def test_constant_and_empirical_sampling(self):
        model = LatencyModel(query_gen=[100, 200, 300], seed=1)
        rng = substream_rng(1, "x")
        draws = {model.sample("query_gen", rng) for _ in range(30)}
        assert draws <= {100, 200, 300} and len(draws) > 1
        assert model.sample("response_gen", rng) == 2520

    def test_negative_delay_rejected(self):
        with pytest.raises(ValueError):
            LatencyModel(query_gen=-1)
        with pytest.raises(ValueError):
            LatencyModel(web_fetch=[])


class TestClosedAndOpenBook:
    def test_closed_book_has_no_tool_latency(self, backends, headline_latency):
        trace = brand_founder_trace()
        outcome = run_session(
            trace, session_config(Strategy.CLOSED_BOOK), None, backends, headline_latency
        )
        assert first_token_latency(outcome) == {
            "query_gen_ms": 0, "tool_results_ms": 0, "response_gen_ms": 2520, "total_ms": 2520,
        }
        assert outcome.threads_spawned == 0
        assert outcome.references.total_tokens == 0

    def test_open_book_headline_breakdown(self, backends, headline_latency):
        trace = brand_founder_trace()
        outcome = run_session(
            trace, session_config(Strategy.OPEN_BOOK), FinalQueryGenerator(trace),
            backends, headline_latency,
        )
        assert first_token_latency(outcome) == {
            "query_gen_ms": 590, "tool_results_ms": 2780, "response_gen_ms": 2520, "total_ms": 5890,
        }
        assert outcome.threads_spawned == 2
        assert not outcome.degraded

    def test_open_book_fires_single_pair_at_utterance_end(self, backends, headline_latency):
        trace = brand_founder_trace()
        outcome = run_session(
            trace, session_config(Strategy.OPEN_BOOK), FinalQueryGenerator(trace),
            backends, headline_latency,
        )
        fires = [e for e in outcome.event_log if e.type == "query_fired"]
        assert len(fires) == 2
        assert all(e.t_ms == trace.end_ms for e in fires)


class TestModelTriggered:
    def test_early_fire_overlap_credit(self, world, index, backends, headline_latency):
        trace = early_fire_trace(world)
        config = session_config(Strategy.MODEL_TRIGGERED)
        gen = generator_for(Strategy.MODEL_TRIGGERED, trace, config, index)
        outcome = run_session(trace, config, gen, backends, headline_latency)
        # last fire at 1500 ms, utterance ends at 2080 ms: 580 ms of overlap
        assert first_token_latency(outcome) == {
            "query_gen_ms": 590, "tool_results_ms": 2200, "response_gen_ms": 2520, "total_ms": 5310,
        }
        assert outcome.max_parallel_threads == 1

    def test_event_log_invariants(self, world, index, backends, headline_latency):
        trace = early_fire_trace(world)
        config = session_config(Strategy.MODEL_TRIGGERED)
        gen = generator_for(Strategy.MODEL_TRIGGERED, trace, config, index)
        outcome = run_session(trace, config, gen, backends, headline_latency)
        check_time_ordered(outcome.event_log)
        check_single_thread_per_tool(outcome.event_log)
        check_conservation(outcome)

    def test_monotone_savings_with_strictness(self, world, index, backends, headline_latency):
        for trace in random_batch(world, 12, seed=5, block_ms=500, allow_final_refire=False):
            mt_config = session_config(Strategy.MODEL_TRIGGERED)
            mt = run_session(
                trace, mt_config, generator_for(Strategy.MODEL_TRIGGERED, trace, mt_config, index),
                backends, headline_latency,
            )
            ob = run_session(
                trace, session_config(Strategy.OPEN_BOOK), FinalQueryGenerator(trace),
                backends, headline_latency,
            )
            fires = [e for e in mt.event_log if e.type == "query_fired"]
            assert mt.latency.first_token_ms <= ob.latency.first_token_ms
            if any(e.t_ms < trace.end_ms for e in fires):
                assert mt.latency.first_token_ms < ob.latency.first_token_ms

    def test_equality_when_last_fire_at_utterance_end(self, world, index, backends, headline_latency):
        entity_a, entity_b = world.entities[3], world.entities[4]
        scripted = {1: world.scripted(entity_a), 2: world.scripted(entity_a),
                    3: world.scripted(entity_b)}
        trace = UtteranceTrace(
            "refire", [Word("a", 0, 400), Word("b", 600, 900), Word("c", 1100, 1300)], scripted
        )
        mt_config = session_config(Strategy.MODEL_TRIGGERED)
        mt = run_session(
            trace, mt_config, generator_for(Strategy.MODEL_TRIGGERED, trace, mt_config, index),
            backends, headline_latency,
        )
        ob = run_session(
            trace, session_config(Strategy.OPEN_BOOK), FinalQueryGenerator(trace),
            backends, headline_latency,
        )
        last_fire = max(e.t_ms for e in mt.event_log if e.type == "query_fired")
        assert last_fire == trace.end_ms
        assert mt.latency.first_token_ms == ob.latency.first_token_ms


class TestFixedInterval:
    def test_uniform_queries_select_block_1(self, world, backends, headline_latency):
        trace = _uniform_trace(world)
        config = session_config(Strategy.FIXED_INTERVAL)
        outcome = run_session(
            trace, config, ScriptedQueryGenerator(trace, 500), backends, headline_latency
        )
        assert outcome.selected_block == 1
        # hand-simulated timeline: thread 1 fires at 500, finishes at
        # 500 + 590 + 2780 = 3870; utterance ends at 1400; response 2520
        assert outcome.latency.first_token_ms == (3870 - 1400) + 2520
        assert outcome.latency.tool_results_ms == 2780 - (1400 - 500)
        assert outcome.threads_spawned == 6
        assert outcome.threads_cancelled == 4

    def test_selected_thread_already_done_waits_zero(self, world, backends):
        trace = _uniform_trace(world)
        fast = LatencyModel(query_gen=590, web_fetch=200, chunk_rerank=0, kg_lookup=100,
                            response_gen=2520)
        outcome = run_session(
            trace, session_config(Strategy.FIXED_INTERVAL), ScriptedQueryGenerator(trace, 500),
            backends, fast,
        )
        assert outcome.selected_block == 1
        assert outcome.latency.tool_results_ms == 0
        assert outcome.latency.first_token_ms == 2520

    def test_walkthrough_trace_full_accounting(self, world, index, backends, headline_latency):
        trace = brand_founder_trace()
        config = session_config(Strategy.FIXED_INTERVAL)
        outcome = run_session(
            trace, config, ScriptedQueryGenerator(trace, 500), backends, headline_latency
        )
        assert outcome.selected_block == 3
        assert outcome.threads_spawned == 10  # one pair per block
        cancelled = [e for e in outcome.event_log if e.type == "thread_cancelled"]
        assert len(cancelled) == 4  # blocks 4 and 5, both tools
        assert {e.block for e in cancelled} == {4, 5}
        check_time_ordered(outcome.event_log)
        check_conservation(outcome)
        assert max_pending_per_tool(outcome.event_log) <= 5

    def test_reflector_equivalence_with_open_book_bundle(self, world, index, backends, headline_latency):
        trace = brand_founder_trace()
        fi = run_session(
            trace, session_config(Strategy.FIXED_INTERVAL), ScriptedQueryGenerator(trace, 500),
            backends, headline_latency,
        )
        ob = run_session(
            trace, session_config(Strategy.OPEN_BOOK), FinalQueryGenerator(trace),
            backends, headline_latency,
        )
        assert fi.references.to_canonical_text() == ob.references.to_canonical_text()

    def test_no_sufficient_intermediate_uses_final(self, world, index, backends, headline_latency):
        entities = world.entities
        scripted = {b: world.scripted(entities[b]) for b in range(1, 4)}  # all different
        trace = UtteranceTrace(
            "all-different", [Word("a", 0, 400), Word("b", 600, 900), Word("c", 1100, 1300)],
            scripted,
        )
        outcome = run_session(
            trace, session_config(Strategy.FIXED_INTERVAL), ScriptedQueryGenerator(trace, 500),
            backends, headline_latency,
        )
        assert outcome.selected_block is None
        assert outcome.threads_cancelled == 0
        # final pair fired at utterance end: same wait as open book
        assert outcome.latency.tool_results_ms == 2780


class TestFailureHandling:
    def test_all_threads_failed_degrades_to_closed_book(self, backends, headline_latency):
        trace = brand_founder_trace()
        outcome = run_session(
            trace, session_config(Strategy.FIXED_INTERVAL), FailingGenerator(),
            backends, headline_latency,
        )
        assert outcome.degraded
        assert outcome.references.total_tokens == 0
        assert outcome.latency.first_token_ms == 2520
        failed = [e for e in outcome.event_log
                  if e.type == "thread_done" and (e.detail or {}).get("status") == "failed"]
        assert len(failed) == 10

    def test_model_triggered_failure_keeps_quiet(self, backends, headline_latency):
        trace = brand_founder_trace()
        outcome = run_session(
            trace, session_config(Strategy.MODEL_TRIGGERED), FailingGenerator(),
            backends, headline_latency,
        )
        assert outcome.degraded
        assert outcome.threads_spawned == 0
        assert all(e.type != "query_fired" for e in outcome.event_log)


class TestRunBatch:
    def test_batch_of_one_equals_run_session(self, world, index, backends, headline_latency):
        trace = brand_founder_trace()
        config = session_config(Strategy.FIXED_INTERVAL)
        single = run_session(
            trace, config, ScriptedQueryGenerator(trace, 500), backends, headline_latency
        )
        batch, errors = run_batch(
            [trace], config, lambda t: ScriptedQueryGenerator(t, 500), backends, headline_latency
        )
        assert errors == []
        assert batch[0].to_dict(include_events=True) == single.to_dict(include_events=True)

    def test_permuted_input_gives_permuted_identical_outcomes(self, world, index, backends, headline_latency):
        traces = random_batch(world, 6, seed=21, block_ms=500)
        config = session_config(Strategy.MODEL_TRIGGERED)
        factory = lambda t: generator_for(Strategy.MODEL_TRIGGERED, t, config, index)
        forward, _ = run_batch(traces, config, factory, backends, headline_latency)
        backward, _ = run_batch(traces[::-1], config, factory, backends, headline_latency)
        by_id = {o.utterance_id: o.to_dict(include_events=True) for o in backward}
        for outcome in forward:
            assert outcome.to_dict(include_events=True) == by_id[outcome.utterance_id]

    def test_thread_count_accounting_over_batch(self, world, index, backends, headline_latency):
        traces = random_batch(world, 100, seed=33, block_ms=1000)
        config = session_config(Strategy.FIXED_INTERVAL, block_ms=1000)
        factory = lambda t: ScriptedQueryGenerator(t, 1000)
        outcomes, errors = run_batch(traces, config, factory, backends, headline_latency)
        assert errors == []
        # oracle: blocks counted directly from the traces' word timings
        expected_pairs = sum(len(blocks_of(t, 1000)) for t in traces)
        assert sum(o.threads_spawned for o in outcomes) == 2 * expected_pairs

    def test_per_trace_errors_collected(self, world, index, backends, headline_latency):
        good = brand_founder_trace()
        bad = UtteranceTrace("no-words", [Word("x", 0, 100)], {})  # no scripted queries
        config = session_config(Strategy.FIXED_INTERVAL)
        outcomes, errors = run_batch(
            [good, bad], config, lambda t: ScriptedQueryGenerator(t, 500), backends,
            headline_latency,
        )
        assert len(outcomes) == 1 and outcomes[0].utterance_id == "brand-founder"
        assert len(errors) == 1 and errors[0][0] == "no-words"

    def test_jobs_parallelism_matches_sequential(self, world, index, backends, headline_latency):
        traces = random_batch(world, 8, seed=4, block_ms=500)
        config = session_config(Strategy.FIXED_INTERVAL)
        factory = lambda t: ScriptedQueryGenerator(t, 500)
        seq, _ = run_batch(traces, config, factory, backends, headline_latency, jobs=1)
        par, _ = run_batch(traces, config, factory, backends, headline_latency, jobs=4)
        assert [o.to_dict(include_events=True) for o in seq] == [
            o.to_dict(include_events=True) for o in par
        ]

    def test_empty_batch_rejected(self, backends, headline_latency):
        with pytest.raises(ValueError):
            run_batch([], session_config(Strategy.OPEN_BOOK), lambda t: None, backends,
                      headline_latency)


class TestOutcomeSerialization:
    def test_round_trip(self, world, index, backends, headline_latency):
        trace = brand_founder_trace()
        outcome = run_session(
            trace, session_config(Strategy.FIXED_INTERVAL), ScriptedQueryGenerator(trace, 500),
            backends, headline_latency,
        )
        again = outcome_from_dict(outcome.to_dict())
        assert again.utterance_id == outcome.utterance_id
        assert again.latency == outcome.latency
        assert again.references == outcome.references
        assert again.selected_block == outcome.selected_block

    def test_first_token_latency_requires_completion(self):
        incomplete = SessionOutcome(utterance_id="x", strategy=Strategy.OPEN_BOOK)
        with pytest.raises(IncompleteSessionError):
            first_token_latency(incomplete)


class TestDeterminism:
    def test_identical_runs_identical_logs(self, world, index, backends):
        trace = early_fire_trace(world)
        config = session_config(Strategy.MODEL_TRIGGERED, rng_seed=9)
        latency = LatencyModel(
            query_gen=[400, 590, 700], web_fetch=[2000, 2780], chunk_rerank=[0, 50],
            kg_lookup=[100, 2780], response_gen=[2000, 2520], seed=3,
        )
        gen = generator_for(Strategy.MODEL_TRIGGERED, trace, config, index)
        a = run_session(trace, config, gen, backends, latency)
        b = run_session(trace, config, gen, backends, latency)
        assert a.to_dict(include_events=True) == b.to_dict(include_events=True)

    def test_substreams_differ_across_utterances(self):
        assert substream_rng(0, 0, "a").random() != substream_rng(0, 0, "b").random()
