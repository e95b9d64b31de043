"""Pure-Python scoring kernel: sparse-document vs dense-query cosine.

This is the fallback twin of the compiled kernel in ``_kernel_cy.pyx``.
Both walk each document's stored terms in the same order and accumulate the
dot product in a double, so their results are bit-identical; keep any change
mirrored in the .pyx file.
"""

from array import array

BACKEND = "pure-python"


def score_many(offsets, term_ids, weights, norms, query_vec, query_norm):
    """Cosine scores of every CSR document row against one dense query vector.

    offsets: int array, len n_docs+1; term_ids/weights: flat CSR arrays;
    norms: per-doc L2 norms; query_vec: dense weight per vocabulary id;
    query_norm: L2 norm of the full query (may include out-of-vocabulary
    mass). Rows with an empty intersection score exactly 0.0.
    """
    n_docs = len(offsets) - 1
    scores = array("d", bytes(8 * n_docs))
    for d in range(n_docs):
        dot = 0.0
        for j in range(offsets[d], offsets[d + 1]):
            dot += query_vec[term_ids[j]] * weights[j]
        if dot != 0.0:
            scores[d] = dot / (norms[d] * query_norm)
    return scores
