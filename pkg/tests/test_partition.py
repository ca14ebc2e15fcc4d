import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msvi.core import DomainError, RandomStream, distance_matrix
from msvi.partition import (EpaParams, SetPartition, bell_number, enumerate_partitions, epa_log_pmf,
                            epa_log_pmf_batch, epa_sample, epa_sample_batch, labels_to_masks,
                            partition_label_array)


def naive_epa_pmf(alpha, delta, rho, dist, blocks):
    """Direct transcription of the sequential allocation rule, one item at a time."""
    D = len(dist)
    label = {i: k for k, b in enumerate(blocks) for i in b}
    p = 1.0
    current = []
    for t in range(D):
        if t == 0:
            current.append([0])
            continue
        sims = [math.exp(-dist[t][s] / rho) for s in range(t)]
        total = sum(sims)
        own = [k for k, blk in enumerate(current) if label[blk[0]] == label[t]]
        if own:
            blk = current[own[0]]
            p *= (t - delta * len(current)) / (alpha + t) * sum(sims[s] for s in blk) / total
            blk.append(t)
        else:
            p *= (alpha + delta * len(current)) / (alpha + t)
            current.append([t])
    return p


def random_epa(gen):
    d = gen.uniform(0, 0.95)
    return EpaParams(gen.uniform(-d + 0.05, 6.0), d, gen.uniform(0.2, 5.0))


def test_bell_numbers():
    assert [bell_number(d) for d in range(1, 11)] == [1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975]
    assert bell_number(10) > 10**5
    assert bell_number(64) > 10**60
    with pytest.raises(DomainError):
        bell_number(0)
    with pytest.raises(DomainError):
        bell_number(65)


def test_enumeration_small_cases():
    assert [str(p) for p in enumerate_partitions(2)] == ["1,2", "1|2"]
    three = {str(p) for p in enumerate_partitions(3)}
    assert three == {"1,2,3", "1,2|3", "1,3|2", "1|2,3", "1|2|3"}


@pytest.mark.parametrize("D", range(1, 9))
def test_enumeration_counts_and_uniqueness(D):
    parts = list(enumerate_partitions(D))
    assert len(parts) == bell_number(D)
    assert len({p.blocks for p in parts}) == len(parts)
    assert len(partition_label_array(min(D, 10))) == bell_number(D)


def test_enumeration_guard():
    with pytest.raises(DomainError, match="Bell number"):
        next(enumerate_partitions(13))


def test_partition_text_form_and_canonical_order():
    p = SetPartition(((1,), (2, 0)))
    assert p.blocks == ((0, 2), (1,))
    assert str(p) == "1,3|2"
    assert SetPartition.parse("1,3|2") == p
    assert SetPartition.from_labels([4, 9, 4]) == p
    with pytest.raises(ValueError):
        SetPartition(((0,), (0, 1)))


def test_masks():
    p = SetPartition.parse("1,3|2")
    assert p.masks() == [0b101, 0b010]
    assert list(labels_to_masks(p.labels())[0][:2]) == [0b101, 0b010]


def test_epa_param_validation():
    with pytest.raises(DomainError):
        EpaParams(1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        EpaParams(-0.5, 0.4, 1.0)
    with pytest.raises(DomainError):
        EpaParams(1.0, 0.1, 0.0)


def test_epa_examples():
    assert epa_log_pmf(EpaParams(2.0, 0.3, 1.0), np.zeros((1, 1)), SetPartition(((0,),))) == 0.0
    flat = np.zeros((2, 2))
    for p in enumerate_partitions(2):
        assert math.isclose(math.exp(epa_log_pmf(EpaParams(1.0, 0.0, 1.0), flat, p)), 0.5)


def test_crp_reduction():
    # delta = 0 with constant similarity is the Chinese restaurant process
    alpha, D = 1.7, 6
    flat = np.zeros((D, D))
    for p in enumerate_partitions(D):
        sizes = [len(b) for b in p.blocks]
        crp = alpha ** len(sizes) * math.prod(math.factorial(s - 1) for s in sizes)
        crp /= math.prod(alpha + t for t in range(D))
        assert math.isclose(math.exp(epa_log_pmf(EpaParams(alpha, 0.0, 1.0), flat, p)), crp, rel_tol=1e-12)


@pytest.mark.parametrize("D", range(1, 7))
def test_normalization_and_naive_oracle(D):
    gen = np.random.default_rng(D)
    for _ in range(20):
        params = random_epa(gen)
        dist = distance_matrix(gen.uniform(0.5, 4.0, D))
        labels = partition_label_array(D)
        logp = epa_log_pmf_batch(params, dist, labels)
        assert abs(np.exp(logp).sum() - 1.0) < 1e-10
        assert np.all(logp <= 0) and np.all(np.isfinite(logp))
        for lab in labels[:: max(1, len(labels) // 7)]:
            p = SetPartition.from_labels(lab)
            ref = naive_epa_pmf(params.alpha, params.delta, params.rho, dist.tolist(), p.blocks)
            assert math.isclose(math.exp(epa_log_pmf(params, dist, p)), ref, rel_tol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.floats(0.1, 10.0), st.integers(0, 10**6))
def test_scale_invariance(D, c, seed):
    gen = np.random.default_rng(seed)
    params = random_epa(gen)
    dist = distance_matrix(gen.uniform(0.5, 4.0, D))
    scaled = EpaParams(params.alpha, params.delta, params.rho * c)
    labels = partition_label_array(D)
    np.testing.assert_allclose(epa_log_pmf_batch(scaled, dist * c, labels),
                               epa_log_pmf_batch(params, dist, labels), rtol=1e-12, atol=1e-12)


def test_score_matches_finite_differences():
    gen = np.random.default_rng(3)
    D = 5
    params = EpaParams(1.3, 0.4, 0.8)
    dist = distance_matrix(gen.uniform(0.5, 4.0, D))
    labels = partition_label_array(D)
    _, score = epa_log_pmf_batch(params, dist, labels, grad=True)
    h = 1e-6
    for k in range(3):
        up, dn = params.as_array(), params.as_array()
        up[k] += h
        dn[k] -= h
        fd = (epa_log_pmf_batch(EpaParams(*up), dist, labels)
              - epa_log_pmf_batch(EpaParams(*dn), dist, labels)) / (2 * h)
        np.testing.assert_allclose(score[:, k], fd, rtol=1e-6, atol=1e-7)


def test_sample_logpmf_consistency():
    stream = RandomStream(5)
    params = EpaParams(0.7, 0.25, 1.5)
    dist = distance_matrix([1.0, 2.0, 0.4, 5.0, 1.1])
    for i in range(50):
        part, logp = epa_sample(params, dist, stream.child(i))
        assert logp == epa_log_pmf(params, dist, part)
    assert epa_sample(params, np.zeros((1, 1)), stream)[0] == SetPartition(((0,),))


def test_large_alpha_gives_singletons():
    labels, _ = epa_sample_batch(EpaParams(1e6, 0.0, 1.0), distance_matrix([1.0, 2.0, 3.0, 4.0]), 2000,
                                 RandomStream(1))
    assert labels.max(axis=1).mean() + 1 > 3.99


def test_sampler_frequencies_small():
    params = EpaParams(1.0, 0.3, 0.7)
    dist = distance_matrix([1.0, 1.5, 4.0, 0.3])
    N = 40_000
    labels, _ = epa_sample_batch(params, dist, N, RandomStream(9))
    counts = Counter(map(tuple, labels))
    for lab in partition_label_array(4):
        p = math.exp(epa_log_pmf_batch(params, dist, lab[None])[0])
        se = math.sqrt(p * (1 - p) / N)
        assert abs(counts.get(tuple(lab), 0) / N - p) < 4 * se + 1e-12
