"""Held-out evaluation: sentence log-probabilities, perplexity, comparisons.

Log probabilities are natural-log; perplexity is exp of the negative mean
log-probability per predicted token.  eos is predicted, bos never is; test
tokens outside the vocabulary are scored as unk and counted in the report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

from .errors import EvalError, VocabMismatchError


@dataclass
class EvalReport:
    tokens: int
    oov: int
    total_logprob: float
    perplexity: float


def log_prob_sentence(model, sentence_ids: Sequence[int]) -> float:
    """Natural-log probability of one id sentence under the model.

    The sentence is padded with order-1 bos ids and one eos id; every real
    token plus eos is predicted from its full-length context.  A zero
    probability is a hard error: every smoother here is total over the
    vocabulary, so a zero means a broken model, not a surprising sentence.
    """
    vocab = model.vocab
    order = model.order
    if vocab.bos_id in sentence_ids:
        raise EvalError("bos cannot appear as a predicted token")
    padded = [vocab.bos_id] * (order - 1) + list(sentence_ids) + [vocab.eos_id]
    logprob = 0.0
    for i in range(order - 1, len(padded)):
        w = padded[i]
        context = tuple(padded[i - d] for d in range(1, order))
        p = model.prob(w, context)
        if p <= 0.0:
            raise EvalError(f"zero probability for id {w} in context {context}")
        logprob += math.log(p)
    return logprob


def perplexity(model, sentences: Sequence[Sequence[str]]) -> EvalReport:
    """Evaluate token sentences; OOV tokens are mapped to unk and counted."""
    if not sentences:
        raise EvalError("empty test set")
    vocab = model.vocab
    total_tokens = 0
    oov = 0
    sentence_logprobs: List[float] = []
    for sent in sentences:
        oov += sum(1 for tok in sent if tok not in vocab)
        ids = vocab.encode(sent)
        sentence_logprobs.append(log_prob_sentence(model, ids))
        total_tokens += len(sent) + 1  # eos predicted too
    total_logprob = math.fsum(sentence_logprobs)
    ppl = math.exp(-total_logprob / total_tokens)
    return EvalReport(total_tokens, oov, total_logprob, ppl)


def order_sweep(
    models_by_order: Dict[int, Tuple[object, object]],
    sentences: Sequence[Sequence[str]],
) -> List[dict]:
    """Relative perplexity improvement of a candidate over a baseline per order.

    ``models_by_order`` maps order -> (baseline model, candidate model); both
    must share a vocabulary.  Improvement is (baseline - candidate)/baseline
    in percent, positive when the candidate is better.
    """
    rows = []
    for order in sorted(models_by_order):
        baseline, candidate = models_by_order[order]
        if baseline.vocab.id_to_word != candidate.vocab.id_to_word:
            raise VocabMismatchError(f"order {order}: models use different vocabularies")
        base_report = perplexity(baseline, sentences)
        cand_report = perplexity(candidate, sentences)
        rows.append(
            {
                "order": order,
                "baseline_perplexity": base_report.perplexity,
                "candidate_perplexity": cand_report.perplexity,
                "improvement_pct": 100.0
                * (base_report.perplexity - cand_report.perplexity)
                / base_report.perplexity,
            }
        )
    return rows
