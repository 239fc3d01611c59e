import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xlqa import kernels

needs_compiled = pytest.mark.skipif(kernels.compiled is None, reason="Cython extension not built")


def _blocks(rng, n_sent=5, n_pairs=30):
    src_lens = rng.integers(1, 6, n_sent)
    tgt_lens = rng.integers(1, 6, n_sent)
    offsets = np.concatenate([[0], np.cumsum(src_lens * tgt_lens)[:-1]]).astype(np.int64)
    flat = rng.integers(0, n_pairs, int((src_lens * tgt_lens).sum())).astype(np.int64)
    probs = rng.random(n_pairs)
    return flat, offsets, src_lens.astype(np.int64), tgt_lens.astype(np.int64), probs


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@needs_compiled
@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_estep_bit_identical(seed):
    flat, offsets, sl, tl, probs = _blocks(np.random.default_rng(seed))
    c1, c2 = np.zeros_like(probs), np.zeros_like(probs)
    ll1 = kernels.python.ibm1_estep(flat, offsets, sl, tl, probs, c1)
    ll2 = kernels.compiled.ibm1_estep(flat, offsets, sl, tl, probs, c2)
    assert ll1 == ll2
    assert np.array_equal(c1, c2)


def test_estep_counts_sum_to_target_words():
    flat, offsets, sl, tl, probs = _blocks(np.random.default_rng(0))
    counts = np.zeros_like(probs)
    kernels.ibm1_estep(flat, offsets, sl, tl, probs, counts)
    assert counts.sum() == pytest.approx(tl.sum())


def _brute_span(start, end, max_len):
    cands = [(start[s] + end[e], -s, -(e - s), s, e) for s in range(len(start))
             for e in range(s, min(len(start), s + max_len + 1))]
    best = max(c[0] for c in cands)
    s, e = min((c[3], c[4]) for c in cands if c[0] == best)
    return s, e, best


scores = st.lists(st.integers(-3, 3).map(float), min_size=1, max_size=12)


@settings(max_examples=200)
@given(scores, st.data(), st.integers(0, 12))
def test_best_span_matches_bruteforce(start, data, max_len):
    end = data.draw(st.lists(st.integers(-3, 3).map(float), min_size=len(start), max_size=len(start)))
    start, end = np.array(start), np.array(end)
    want = _brute_span(start, end, max_len)
    for impl in filter(None, (kernels.python, kernels.compiled)):
        assert impl.best_span(start, end, max_len) == want


def test_env_var_forces_python_fallback():
    import os
    import subprocess
    import sys

    code = ("from xlqa import kernels; from xlqa.aligner import train_ibm1; from xlqa.synth import lexicon_bitext;"
            "c, _ = lexicon_bitext(20, 6, seed=1); t, tr = train_ibm1(c, 4);"
            "print(kernels.BACKEND, repr(tr[-1]), t.probs.tobytes().hex())")
    env = dict(os.environ, XLQA_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, ll, probs = out.stdout.split()
    assert backend == "python"
    from xlqa.aligner import train_ibm1
    from xlqa.synth import lexicon_bitext

    c, _ = lexicon_bitext(20, 6, seed=1)
    t, tr = train_ibm1(c, 4)
    assert repr(tr[-1]) == ll and t.probs.tobytes().hex() == probs
