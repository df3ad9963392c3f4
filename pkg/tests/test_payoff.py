import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raml_lab.counting import exact_count_oracle
from raml_lab.payoff import (
    Categorical,
    PayoffSpec,
    SampleBatch,
    apply_random_edits,
    draw_batch,
    edit_distance_weights,
    edit_script_distribution,
    enumerate_payoff,
    enumerate_sequences,
    hamming_distance_weights,
    importance_reweight,
    log_partition,
    make_rng,
    sample_edit,
    sample_edit_distance,
    sample_hamming,
    total_variation,
)
from raml_lab.rewards import NIL, RewardFn, Vocab, edit_distance, hamming_distance

HAM = RewardFn("neg_hamming")
EDIT = RewardFn("neg_edit")

PUBLISHED = {
    0.6: [0.6051, 0.3057, 0.0754, 0.0121, 0.0014, 0.0001],
    0.7: [0.1886, 0.3205, 0.2660, 0.1440, 0.0573, 0.0179, 0.0046, 0.0010, 0.0002],
    0.8: [0.0175, 0.0737, 0.1519, 0.2042, 0.2017, 0.1566, 0.0997, 0.0537, 0.0251, 0.0103,
          0.0038, 0.0013, 0.0004, 0.0001],
    0.9: [0.0003, 0.0029, 0.0123, 0.0335, 0.0671, 0.1057, 0.1365, 0.1492, 0.1413, 0.1182,
          0.0887, 0.0605, 0.0379, 0.0221, 0.0121, 0.0062, 0.0030, 0.0014, 0.0006, 0.0003, 0.0001],
}


def spec(target, tau, reward=HAM, v=2):
    return PayoffSpec(tuple(target), tau, reward, Vocab(v))


def test_enumerate_sequences_examples():
    assert enumerate_sequences(Vocab(2), 1, fixed_length=True) == [(0,), (1,)]
    assert len(enumerate_sequences(Vocab(2), 2, fixed_length=True)) == 4
    space = enumerate_sequences(Vocab(3), 2)
    assert len(space) == 1 + 3 + 9
    assert space[0] == () and space[1:4] == [(0,), (1,), (2,)]


def test_enumeration_guard():
    with pytest.raises(ValueError, match="space too large to enumerate"):
        enumerate_sequences(Vocab(10), 6)


def test_log_partition_examples():
    space1 = enumerate_sequences(Vocab(2), 1, fixed_length=True)
    assert log_partition(spec((0,), 1.0), space1) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert log_partition(spec((0,), 1.0), space1) == pytest.approx(0.313262, abs=1e-6)
    assert log_partition(spec((0,), 1e6), space1) == pytest.approx(math.log(2), abs=1e-6)
    space2 = enumerate_sequences(Vocab(2), 2, fixed_length=True)
    assert log_partition(spec((0, 0), 1.0), space2) == pytest.approx(0.626524, abs=1e-6)


def test_log_partition_rejects_delta_mode():
    with pytest.raises(ValueError, match="delta mode"):
        log_partition(spec((0,), 0.0), [(0,), (1,)])


def test_enumerate_payoff_examples():
    space1 = enumerate_sequences(Vocab(2), 1, fixed_length=True)
    q = enumerate_payoff(spec((0,), 1.0), space1)
    np.testing.assert_allclose(q.probs, [1 / (1 + math.exp(-1)), math.exp(-1) / (1 + math.exp(-1))], atol=1e-15)
    np.testing.assert_allclose(q.probs, [0.731059, 0.268941], atol=1e-6)
    space2 = enumerate_sequences(Vocab(2), 2, fixed_length=True)
    q2 = enumerate_payoff(spec((0, 0), 1.0), space2)
    brute = {y: math.exp(-hamming_distance(y, (0, 0))) for y in space2}
    z = sum(brute.values())
    assert z == pytest.approx(1.871094, abs=1e-6)
    assert q2.prob((0, 0)) == pytest.approx(1 / z, abs=1e-15)
    assert q2.prob((0, 0)) == pytest.approx(0.534447, abs=1e-6)


def test_delta_mode_is_one_hot():
    space = enumerate_sequences(Vocab(3), 2, fixed_length=True)
    q = enumerate_payoff(spec((2, 1), 0.0, v=3), space)
    assert q.prob((2, 1)) == 1.0 and q.probs.sum() == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 4), st.integers(1, 3), st.floats(0.05, 20), st.data())
def test_payoff_normalized_and_peaked(v, n, tau, data):
    vocab = Vocab(v)
    space = enumerate_sequences(vocab, n, fixed_length=True)
    target = data.draw(st.sampled_from(space))
    for reward in (HAM, EDIT):
        q = enumerate_payoff(PayoffSpec(target, tau, reward, vocab), space)
        assert abs(math.fsum(q.probs) - 1) < 1e-12
        top = q.prob(target)
        assert all(p < top for y, p in zip(q.support, q.probs) if y != target)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 4), st.integers(2, 3), st.floats(0.1, 5), st.data())
def test_hamming_payoff_factorizes_over_positions(v, n, tau, data):
    vocab = Vocab(v)
    space = enumerate_sequences(vocab, n, fixed_length=True)
    target = data.draw(st.sampled_from(space))
    q = enumerate_payoff(PayoffSpec(target, tau, HAM, vocab), space)
    single = enumerate_sequences(vocab, 1, fixed_length=True)
    marginals = [enumerate_payoff(PayoffSpec((t,), tau, HAM, vocab), single).probs for t in target]
    for y, p in zip(q.support, q.probs):
        assert p == pytest.approx(np.prod([m[t] for m, t in zip(marginals, y)]), rel=1e-12)


@pytest.mark.parametrize("tau, published", sorted(PUBLISHED.items()))
def test_published_fractions(tau, published):
    w = edit_distance_weights(20, 61, tau, "figure1")
    padded = published + [0.0] * (41 - len(published))
    assert np.max(np.abs(w.probs - np.array(padded))) <= 0.01
    assert int(np.argmax(w.probs)) == int(np.argmax(published))


def test_published_modal_values():
    w = edit_distance_weights(20, 61, 0.6, "figure1")
    assert w.mode() == 0 and w.probs[0] == pytest.approx(0.6051, abs=0.01)
    assert w.probs[1] == pytest.approx(0.3057, abs=0.01)
    assert w.probs[2] == pytest.approx(0.0754, abs=0.01)
    w9 = edit_distance_weights(20, 61, 0.9, "figure1")
    assert w9.mode() == 7 and w9.probs[7] == pytest.approx(0.1492, abs=0.01)


def test_as_written_weights_small_instance():
    m, v, tau = 2, 2, 1.0
    raw = [exact_count_oracle(e, m, v) * math.exp(-e / tau) for e in range(2 * m + 1)]
    assert raw[:2] == [1.0, 5 * 2 * math.exp(-1)]
    w = edit_distance_weights(m, v, tau, "as_written")
    np.testing.assert_allclose(w.probs, np.array(raw) / sum(raw), rtol=1e-12)


def test_as_written_weights_miss_published_mode():
    w = edit_distance_weights(20, 61, 0.6, "as_written")
    assert w.mode() > 5


def test_sample_edit_distance_degenerate(rng):
    w = Categorical((0, 1, 2), np.array([1.0, 0.0, 0.0]))
    assert all(sample_edit_distance(w, rng) == 0 for _ in range(100))
    assert np.all(sample_edit_distance(w, rng, size=1000) == 0)


def test_sample_edit_distance_frequencies():
    w = edit_distance_weights(20, 61, 0.8, "figure1")
    draws = sample_edit_distance(w, make_rng(3), size=10**6)
    assert total_variation(w, Counter(draws.tolist()), 10**6) < 0.01


def test_sampling_is_deterministic():
    w = edit_distance_weights(5, 4, 1.0)
    a = [sample_edit((0, 1, 2, 3, 0), 1.0, Vocab(4), make_rng(9, 2), weights=w) for _ in range(1)]
    b = [sample_edit((0, 1, 2, 3, 0), 1.0, Vocab(4), make_rng(9, 2), weights=w) for _ in range(1)]
    assert a == b
    draw = lambda g: sample_edit((0, 1, 2), 1.0, Vocab(3), g)
    assert draw_batch(draw, 200, 11, 4) == draw_batch(draw, 200, 11, 4)
    assert draw_batch(draw, 200, 11, 4).items != draw_batch(draw, 200, 11, 5).items


def test_apply_random_edits_zero_edits(rng):
    assert apply_random_edits((1, 0, 1), 0, Vocab(2), rng) == (1, 0, 1)


def test_apply_random_edits_range_error(rng):
    with pytest.raises(ValueError):
        apply_random_edits((0, 1), 5, Vocab(2), rng)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=6), st.data(), st.integers(0, 2**32 - 1))
def test_apply_random_edits_stays_within_e(ystar, data, seed):
    e = data.draw(st.integers(0, 2 * len(ystar)))
    y = apply_random_edits(tuple(ystar), e, Vocab(4), make_rng(seed))
    assert edit_distance(y, tuple(ystar)) <= e
    assert all(0 <= t < 4 for t in y)


def _script_oracle(ystar, e, v):
    """Uniform law over scripts, materialized independently of the library."""
    m = len(ystar)
    tally = Counter()
    for s in range(min(e, m) + 1):
        for pos in itertools.combinations(range(m), s):
            choices = [[t for t in range(v) if t != ystar[i]] + [NIL] for i in pos]
            for repl in itertools.product(*choices):
                sub = dict(zip(pos, repl))
                survivors = [i for i in range(m) if i not in sub]
                for gaps in itertools.combinations_with_replacement(range(m - s + 1), e - s):
                    for toks in itertools.product(range(v), repeat=e - s):
                        out = []
                        for g in range(m - s + 1):
                            out += [t for gg, t in zip(gaps, toks) if gg == g]
                            lo = survivors[g - 1] if g > 0 else -1
                            hi = survivors[g] if g < len(survivors) else m
                            out += [sub[i] for i in range(lo + 1, hi) if sub[i] != NIL]
                            if g < len(survivors):
                                out.append(ystar[survivors[g]])
                        tally[tuple(out)] += 1
    total = sum(tally.values())
    return {y: c / total for y, c in tally.items()}, total


@pytest.mark.parametrize("ystar, e, v", [((0, 1), 1, 2), ((0, 1), 2, 2), ((1, 1, 0), 2, 2), ((0, 2), 3, 3)])
def test_script_distribution_matches_oracle(ystar, e, v):
    oracle, total = _script_oracle(ystar, e, v)
    assert total == exact_count_oracle(e, len(ystar), v)
    lib = edit_script_distribution(ystar, e, Vocab(v))
    assert set(lib.support) == set(oracle)
    for y, p in zip(lib.support, lib.probs):
        assert p == pytest.approx(oracle[y], abs=1e-15)


def test_apply_random_edits_is_script_uniform():
    oracle, _ = _script_oracle((0, 1), 1, 2)
    rng = make_rng(5)
    n = 10**5
    counts = Counter(apply_random_edits((0, 1), 1, Vocab(2), rng) for _ in range(n))
    tv = 0.5 * sum(abs(oracle.get(y, 0) - counts.get(y, 0) / n) for y in set(oracle) | set(counts))
    assert tv < 0.01


def test_sample_hamming_low_temperature(rng):
    vocab = Vocab(5)
    assert all(sample_hamming((0, 1, 2), 1e-3, vocab, rng)[0] == (0, 1, 2) for _ in range(1000))
    assert sample_hamming((0, 1, 2), 0.0, vocab, rng)[0] == (0, 1, 2)


def test_sample_hamming_distance_law():
    tau, n = 1.0, 10**6
    raw = np.array([1, 3 * math.exp(-1), 3 * math.exp(-2), math.exp(-3)])
    expected = Categorical(range(4), raw / raw.sum())
    np.testing.assert_allclose(hamming_distance_weights(3, 2, tau).probs, expected.probs, rtol=1e-12)
    rng, vocab, ystar = make_rng(8), Vocab(2), (0, 1, 1)
    w = hamming_distance_weights(3, 2, tau)
    counts = Counter()
    for _ in range(n):
        y, _ = sample_hamming(ystar, tau, vocab, rng, weights=w)
        assert len(y) == 3
        counts[hamming_distance(y, ystar)] += 1
    assert total_variation(expected, counts, n) < 0.01


def test_sample_hamming_log_weight_is_exact(rng):
    vocab, ystar, tau = Vocab(3), (0, 1), 0.8
    space = enumerate_sequences(vocab, 2, fixed_length=True)
    q = enumerate_payoff(PayoffSpec(ystar, tau, HAM, vocab), space)
    for _ in range(50):
        y, lw = sample_hamming(ystar, tau, vocab, rng)
        assert lw == pytest.approx(math.log(q.prob(y)), abs=1e-12)


def _batch(log_weights):
    return SampleBatch([((i,), lw) for i, lw in enumerate(log_weights)], 0, 0)


def test_importance_reweight_closed_forms():
    w = importance_reweight(_batch([0.1, -2.0, 0.5]), lambda y: [0.1, -2.0, 0.5][y[0]])
    np.testing.assert_allclose(w.probs, np.full(3, 1 / 3), atol=1e-15)
    w = importance_reweight(_batch([0.0, 0.0]), lambda y: math.log(3) if y == (0,) else 0.0)
    np.testing.assert_allclose(w.probs, [0.75, 0.25], atol=1e-15)


def test_importance_reweight_degenerate():
    with pytest.raises(ValueError, match="degenerate importance weights"):
        importance_reweight(_batch([0.0, 0.0]), lambda y: -math.inf)
    with pytest.raises(ValueError):
        importance_reweight(_batch([]), lambda y: 0.0)


def test_importance_estimate_converges():
    vocab, ystar, tau, tau_prop = Vocab(3), (2, 0, 1), 0.6, 2.0
    space = enumerate_sequences(vocab, 3, fixed_length=True)
    q = enumerate_payoff(PayoffSpec(ystar, tau, HAM, vocab), space)
    exact = sum(p * HAM(y, ystar) for y, p in zip(q.support, q.probs))
    hw = hamming_distance_weights(3, 3, tau_prop)
    batch = draw_batch(lambda g: sample_hamming(ystar, tau_prop, vocab, g, weights=hw), 10**5, 21)
    w = importance_reweight(batch, lambda y: HAM(y, ystar) / tau).probs
    f = np.array([HAM(y, ystar) for y in batch.sequences])
    est = w @ f
    se = math.sqrt(np.sum(w**2 * (f - est) ** 2))
    assert abs(est - exact) < 3 * se


def test_categorical_validation():
    with pytest.raises(ValueError):
        Categorical((0, 1), np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        Categorical((0, 0), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        Categorical((0, 1), np.array([1.5, -0.5]))


def test_payoff_spec_validation():
    with pytest.raises(ValueError):
        PayoffSpec((), 1.0, HAM, Vocab(2))
    with pytest.raises(ValueError):
        PayoffSpec((0,), -1.0, HAM, Vocab(2))
    with pytest.raises(ValueError):
        PayoffSpec((0,), 1.0, HAM, Vocab(2), mode="other")
