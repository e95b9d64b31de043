"""The compiled and pure-Python scoring kernels must agree bit for bit."""

from __future__ import annotations

import random

import pytest

from streamrag.retrieval import KERNEL_BACKEND, _kernel

try:
    from streamrag.retrieval import _kernel_cy
except ImportError:
    _kernel_cy = None


def test_backend_reported():
    assert KERNEL_BACKEND in ("cython", "pure-python")


def _random_problem(rng: random.Random, n_docs: int, vocab: int):
    from array import array

    offsets = array("l", [0])
    tids = array("i")
    weights = array("d")
    norms = array("d")
    for _ in range(n_docs):
        terms = sorted(rng.sample(range(vocab), rng.randint(0, min(12, vocab))))
        sq = 0.0
        for tid in terms:
            w = rng.uniform(0.1, 5.0)
            tids.append(tid)
            weights.append(w)
            sq += w * w
        offsets.append(len(tids))
        norms.append(sq**0.5 if sq else 0.0)
    qvec = array("d", (rng.uniform(0.0, 3.0) if rng.random() < 0.4 else 0.0 for _ in range(vocab)))
    qnorm = sum(v * v for v in qvec) ** 0.5 or 1.0
    return offsets, tids, weights, norms, qvec, qnorm


@pytest.mark.skipif(_kernel_cy is None, reason="compiled kernel not built")
def test_kernels_bit_identical_random():
    rng = random.Random(99)
    for trial in range(25):
        problem = _random_problem(rng, n_docs=rng.randint(1, 60), vocab=rng.randint(5, 80))
        pure = _kernel.score_many(*problem)
        compiled = _kernel_cy.score_many(*problem)
        assert list(pure) == list(compiled), f"trial {trial} diverged"


@pytest.mark.skipif(_kernel_cy is None, reason="compiled kernel not built")
def test_kernels_bit_identical_on_fixture_corpus(world, index):
    queries = [
        "Who founded Rare Beauty",
        "Darius Miles jump shots scored on November 8, 2000",
        "synthetic profile history notes",
        "qz042 marker",
    ]
    for query in queries:
        qvec, qnorm = index._query_vector(query)
        pure = _kernel.score_many(index._offsets, index._tids, index._weights, index._norms, qvec, qnorm)
        compiled = _kernel_cy.score_many(index._offsets, index._tids, index._weights, index._norms, qvec, qnorm)
        assert list(pure) == list(compiled)


def test_pure_fallback_env_selects_pure(tmp_path):
    import subprocess
    import sys

    code = (
        "from streamrag.retrieval import KERNEL_BACKEND; print(KERNEL_BACKEND)"
    )
    out = subprocess.run(
        [sys.executable, "-c", code],
        env={"PATH": "/usr/bin:/bin", "STREAMRAG_PURE_PYTHON": "1"},
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "pure-python"
