#!/usr/bin/env python3
"""Benchmark the compiled scoring kernel against the pure-Python fallback.

The document-scoring loop is the hot path of every simulated session (each
tool call, equivalence check, and chunk rerank walks the whole corpus), so
this is the loop the compiled extension exists for.

Usage: python3 benchmarks/bench_scoring.py [--docs 2000] [--queries 200]
"""

from __future__ import annotations

import argparse
import random
import statistics
import time

from streamrag.retrieval import DocIndex, _kernel

try:
    from streamrag.retrieval import _kernel_cy
except ImportError:
    _kernel_cy = None

WORDS = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    "india", "juliet", "kilo", "lima", "mike", "november", "oscar", "papa",
    "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray", "yankee", "zulu",
]


def build_corpus(n_docs: int, rng: random.Random) -> list[tuple[str, str]]:
    docs = []
    for i in range(n_docs):
        words = [rng.choice(WORDS) for _ in range(rng.randint(40, 160))]
        docs.append((f"d{i:05d}", " ".join(words) + f" marker{i:05d}"))
    return docs


def bench(kernel, index: DocIndex, queries: list[str], repeats: int = 3) -> float:
    timings = []
    for _ in range(repeats):
        started = time.perf_counter()
        for query in queries:
            qvec, qnorm = index._query_vector(query)
            kernel.score_many(
                index._offsets, index._tids, index._weights, index._norms, qvec, qnorm
            )
        timings.append(time.perf_counter() - started)
    return statistics.median(timings)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=2000)
    parser.add_argument("--queries", type=int, default=200)
    args = parser.parse_args()

    rng = random.Random(1)
    index = DocIndex(build_corpus(args.docs, rng))
    queries = [
        " ".join(rng.choice(WORDS) for _ in range(rng.randint(3, 8)))
        for _ in range(args.queries)
    ]

    pure = bench(_kernel, index, queries)
    print(f"docs={args.docs} queries={args.queries}")
    print(f"pure-python kernel: {pure * 1000:8.1f} ms")
    if _kernel_cy is None:
        print("compiled kernel:    not built (pip install -e . rebuilds it)")
        return
    compiled = bench(_kernel_cy, index, queries)
    print(f"compiled kernel:    {compiled * 1000:8.1f} ms  ({pure / compiled:.1f}x faster)")

    # sanity: identical results on one query
    qvec, qnorm = index._query_vector(queries[0])
    a = _kernel.score_many(index._offsets, index._tids, index._weights, index._norms, qvec, qnorm)
    b = _kernel_cy.score_many(index._offsets, index._tids, index._weights, index._norms, qvec, qnorm)
    assert list(a) == list(b), "kernels diverged"
    print("kernels agree bit-for-bit on sample query")


if __name__ == "__main__":
    main()
