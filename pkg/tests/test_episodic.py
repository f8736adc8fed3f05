"""Task-sampling strategy tests: splits, determinism, composition."""

import numpy as np
import pytest
from scipy import stats

from mvrml.domains import DomainSpec, generate_synthetic_suite
from mvrml.episodic import SamplingStrategy, sample_task, sample_task_sequence
from mvrml.errors import StrategyError
from mvrml.rng import RngStream

MEANS = ((-1.0, 0.0), (1.0, 0.0))
COVS = ((1.0, 1.0), (1.0, 1.0))


def sources(n_domains=3, sizes=None):
    sizes = sizes or [30] * n_domains
    specs = [
        DomainSpec(f"d{i}", MEANS, COVS, samples_per_class=sizes[i] // 2, seed=i)
        for i in range(n_domains)
    ]
    return generate_synthetic_suite(specs).datasets


class TestSampleTask:
    def test_s1_single_domain(self):
        task = sample_task(sources(), SamplingStrategy.S1_SAME_DOMAIN, 8, RngStream(1))
        tr_ids = set(task.meta_train.domain_ids)
        te_ids = set(task.meta_test.domain_ids)
        assert len(tr_ids) == 1 and tr_ids == te_ids

    def test_s3_meta_split_disjoint(self):
        task = sample_task(sources(), SamplingStrategy.S3_META_SPLIT, 16, RngStream(2))
        te_ids = set(task.meta_test.domain_ids)
        assert len(te_ids) == 1
        assert te_ids.isdisjoint(set(task.meta_train.domain_ids))

    def test_s3_needs_two_sources(self):
        with pytest.raises(StrategyError):
            sample_task(sources(1), SamplingStrategy.S3_META_SPLIT, 4, RngStream(0))

    def test_fixed_rng_is_deterministic(self):
        for strategy in SamplingStrategy:
            t1 = sample_task(sources(), strategy, 8, RngStream(5, 17))
            t2 = sample_task(sources(), strategy, 8, RngStream(5, 17))
            assert np.array_equal(t1.meta_train.features, t2.meta_train.features)
            assert np.array_equal(t1.meta_test.features, t2.meta_test.features)
            assert np.array_equal(t1.meta_train.labels, t2.meta_train.labels)

    def test_batch_shapes(self):
        task = sample_task(sources(), SamplingStrategy.S2_ALL_DOMAINS, 12, RngStream(3))
        assert task.meta_train.features.shape == (12, 2)
        assert task.meta_test.features.shape == (12, 2)


class TestSampleSequence:
    def test_counts(self):
        seq = sample_task_sequence(sources(), SamplingStrategy.S3_META_SPLIT, 8, 3, RngStream(4))
        assert len(seq) == 3

    def test_s_equal_one_reduces_to_sample_task(self):
        stream = RngStream(9, 2)
        seq = sample_task_sequence(sources(), SamplingStrategy.S3_META_SPLIT, 8, 1, stream)
        single = sample_task(sources(), SamplingStrategy.S3_META_SPLIT, 8, stream)
        assert np.array_equal(seq[0].meta_train.features, single.meta_train.features)
        assert np.array_equal(seq[0].meta_test.features, single.meta_test.features)

    def test_s3_resplits_per_task(self):
        # over many tasks of one sequence, more than one meta-test domain shows up
        seq = sample_task_sequence(sources(), SamplingStrategy.S3_META_SPLIT, 4, 30, RngStream(7))
        te_domains = {task.meta_test.domain_ids[0] for task in seq}
        assert len(te_domains) > 1

    def test_s3_meta_test_domain_uniform(self):
        src = sources()
        counts = {d.domain_id: 0 for d in src}
        for i in range(1000):
            task = sample_task(src, SamplingStrategy.S3_META_SPLIT, 2, RngStream(100, i))
            counts[task.meta_test.domain_ids[0]] += 1
        for c in counts.values():
            assert abs(c - 333) <= 50

    def test_s2_composition_proportional_to_sizes(self):
        src = sources(3, sizes=[30, 60, 90])
        observed = {d.domain_id: 0 for d in src}
        draws = 0
        for i in range(1000):
            task = sample_task(src, SamplingStrategy.S2_ALL_DOMAINS, 6, RngStream(200, i))
            for d in task.meta_train.domain_ids:
                observed[d] += 1
                draws += 1
        expected = np.array([30, 60, 90]) / 180 * draws
        chi2 = stats.chisquare(
            [observed["d0"], observed["d1"], observed["d2"]], expected
        )
        assert chi2.pvalue > 0.01

    def test_distinct_streams_give_distinct_tasks(self):
        t1 = sample_task(sources(), SamplingStrategy.S2_ALL_DOMAINS, 8, RngStream(1).child(0))
        t2 = sample_task(sources(), SamplingStrategy.S2_ALL_DOMAINS, 8, RngStream(1).child(1))
        assert not np.array_equal(t1.meta_train.features, t2.meta_train.features)
