"""Pure-Python inner loops; the reference the compiled kernels must match."""
import math


def ibm1_estep(pair_ids, offsets, src_lens, tgt_lens, probs, counts):
    """Accumulate IBM-1 expected counts into ``counts`` and return the log-likelihood.

    Sentence pair ``k`` owns the block ``pair_ids[offsets[k]:]`` laid out
    row-major as ``tgt_lens[k]`` rows of ``src_lens[k]`` co-occurrence ids.
    """
    pair_ids = pair_ids.tolist() if hasattr(pair_ids, "tolist") else pair_ids
    p = probs.tolist() if hasattr(probs, "tolist") else list(probs)
    acc = counts.tolist() if hasattr(counts, "tolist") else counts
    ll = 0.0
    for k in range(len(offsets)):
        ls = int(src_lens[k])
        lt = int(tgt_lens[k])
        off = int(offsets[k])
        for j in range(lt):
            base = off + j * ls
            row = pair_ids[base:base + ls]
            denom = 0.0
            for pid in row:
                denom = denom + p[pid]
            if denom > 0.0:
                ll = ll + (math.log(denom) - math.log(float(ls)))
                for pid in row:
                    acc[pid] += p[pid] / denom
    if acc is not counts:
        counts[:] = acc
    return ll


def best_span(start_scores, end_scores, max_len):
    """Best ``(start, end, score)`` with ``start <= end <= start + max_len``.

    Ties keep the earliest start, then the shortest span.
    """
    n = len(start_scores)
    bs = be = -1
    best = 0.0
    for s in range(n):
        for e in range(s, min(n, s + max_len + 1)):
            score = float(start_scores[s]) + float(end_scores[e])
            if bs < 0 or score > best:
                best, bs, be = score, s, e
    return bs, be, best
