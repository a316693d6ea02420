"""Deterministic synthetic corpora for tests and demos.

Sentences come from a hidden-topic Markov process: a topic chain with a
concentrated transition matrix, each topic emitting words from its own
Zipfian slice of the vocabulary blended with a global Zipfian background.
The output has the statistical shape n-gram smoothing cares about — heavy
Zipf unigram marginals, sparse higher-order counts, and genuinely low-rank
co-occurrence structure — while being reproducible from a single seed.
"""

from __future__ import annotations

from typing import List

import numpy as np

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]


def _word_string(index: int) -> str:
    """Pronounceable deterministic token for a word id."""
    base = len(_SYLLABLES)
    parts = []
    n = index
    while True:
        parts.append(_SYLLABLES[n % base])
        n //= base
        if n == 0:
            break
    return "".join(reversed(parts))


def synthesize_corpus(
    n_sentences: int,
    vocab_size: int = 2000,
    n_topics: int = 24,
    seed: int = 0,
    min_len: int = 3,
    max_len: int = 28,
    zipf_exponent: float = 1.05,
) -> List[List[str]]:
    """Generate tokenized sentences from a seeded hidden-topic Markov chain."""
    if n_sentences < 1 or vocab_size < 10 or n_topics < 2:
        raise ValueError("degenerate generator parameters")
    rng = np.random.default_rng(seed)

    # Concentrated topic transitions: mostly stay or hop to a few neighbors.
    trans = rng.dirichlet(np.full(n_topics, 0.12), size=n_topics)
    trans += 2.0 * np.eye(n_topics)
    trans /= trans.sum(axis=1, keepdims=True)
    trans_cdf = np.cumsum(trans, axis=1)

    # Per-topic emissions: a global Zipf background plus a Zipf slice
    # anchored at the topic's own region of the vocabulary.
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    global_zipf = 1.0 / ranks**zipf_exponent
    global_zipf /= global_zipf.sum()
    emis = np.empty((n_topics, vocab_size))
    perm = rng.permutation(vocab_size)
    for t in range(n_topics):
        local = np.roll(global_zipf, (t * vocab_size) // n_topics)[perm]
        emis[t] = 0.35 * global_zipf + 0.65 * local
    emis /= emis.sum(axis=1, keepdims=True)
    emis_cdf = np.cumsum(emis, axis=1)

    lengths = rng.integers(min_len, max_len + 1, size=n_sentences)
    current = rng.integers(0, n_topics, size=n_sentences)

    # Advance all sentences one position per step, vectorized over the
    # sentences still alive at that step.
    offsets = np.zeros(n_sentences, dtype=np.int64)
    offsets[1:] = np.cumsum(lengths)[:-1]
    flat_topics = np.empty(int(lengths.sum()), dtype=np.int64)
    for step in range(int(lengths.max())):
        alive = np.nonzero(lengths > step)[0]
        flat_topics[offsets[alive] + step] = current[alive]
        u = rng.random(len(alive))
        current[alive] = (trans_cdf[current[alive]] < u[:, None]).sum(axis=1)

    # Sample words for all positions at once, grouped by topic.
    flat_words = np.empty(len(flat_topics), dtype=np.int64)
    u = rng.random(len(flat_topics))
    for t in range(n_topics):
        mask = flat_topics == t
        if mask.any():
            flat_words[mask] = np.searchsorted(emis_cdf[t], u[mask], side="right")
    np.clip(flat_words, 0, vocab_size - 1, out=flat_words)

    words = [_word_string(i) for i in range(vocab_size)]
    sentences: List[List[str]] = []
    pos = 0
    for L in lengths:
        sentences.append([words[w] for w in flat_words[pos : pos + L]])
        pos += L
    return sentences
