"""Synthetic generator, CSV round-trips, splits and divergence tests.

The Monte-Carlo KL oracle here is independent of the closed form it checks:
it samples from the first Gaussian and averages exact log-density ratios.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvrml.domains import (
    DomainSpec,
    DomainSuite,
    class_conditional_kl,
    generate_synthetic_suite,
    leave_one_domain_out,
    load_csv_suite,
    write_csv_suite,
)
from mvrml.errors import CsvFormatError, MissingSpecError, ShapeError

MEANS = ((-1.0, 0.0), (1.0, 0.5))
COVS = ((0.5, 0.8), (1.0, 0.3))


def spec(domain_id="d0", rotation=0.0, shift=(), scale=1.0, n=50, seed=1):
    return DomainSpec(domain_id, MEANS, COVS, rotation_deg=rotation, shift=shift,
                      scale=scale, samples_per_class=n, seed=seed)


def mc_kl_oracle(spec_a, spec_b, n_samples, seed=0):
    """Monte-Carlo class-conditional KL via exact diagonal-Gaussian densities."""
    gen = np.random.default_rng(seed)
    mu_a, mu_b = spec_a.transformed_means(), spec_b.transformed_means()
    cov_a = np.asarray(spec_a.class_cov_diag)
    cov_b = np.asarray(spec_b.class_cov_diag)

    def logpdf(x, mu, cov):
        return -0.5 * (np.sum((x - mu) ** 2 / cov + np.log(2 * np.pi * cov), axis=1))

    vals = []
    for k in range(spec_a.num_classes):
        x = mu_a[k] + np.sqrt(cov_a[k]) * gen.standard_normal((n_samples, len(mu_a[k])))
        vals.append(np.mean(logpdf(x, mu_a[k], cov_a[k]) - logpdf(x, mu_b[k], cov_b[k])))
    return float(np.mean(vals))


class TestGenerator:
    def test_sample_counts(self):
        suite = generate_synthetic_suite([spec(n=25), spec("d1", rotation=10, seed=2, n=25)])
        for ds in suite.datasets:
            assert ds.n == 2 * 25

    def test_determinism_bitwise(self):
        a = generate_synthetic_suite([spec(seed=7)])
        b = generate_synthetic_suite([spec(seed=7)])
        assert np.array_equal(a.datasets[0].features, b.datasets[0].features)
        assert np.array_equal(a.datasets[0].labels, b.datasets[0].labels)

    def test_empirical_means_converge(self):
        big = spec(n=10000, seed=3)
        suite = generate_synthetic_suite([big])
        ds = suite.datasets[0]
        for k in range(2):
            sample_mean = ds.features[ds.labels == k].mean(axis=0)
            tol = 4.0 * np.sqrt(np.asarray(COVS[k])) / np.sqrt(10000)
            assert np.all(np.abs(sample_mean - np.asarray(MEANS[k])) < tol)

    def test_rotation_moves_means(self):
        rotated = spec(rotation=90.0)
        mu = rotated.transformed_means()
        # 90 degrees: (x, y) -> (-y, x)
        np.testing.assert_allclose(mu[0], [0.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(mu[1], [-0.5, 1.0], atol=1e-12)

    def test_inconsistent_specs_rejected(self):
        other = DomainSpec("x", ((0.0, 0.0),) * 3, ((1.0, 1.0),) * 3)
        with pytest.raises(ShapeError):
            generate_synthetic_suite([spec(), other])


class TestCsv:
    def test_two_row_file(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("domain,label,f0,f1\na,0,0.5,1.5\nb,2,-1,2.25\n")
        suite = load_csv_suite(path)
        assert [d.domain_id for d in suite.datasets] == ["a", "b"]
        assert suite.datasets[0].n == suite.datasets[1].n == 1
        assert suite.num_classes == 3

    def test_header_only_is_an_error(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("domain,label,f0,f1\n")
        with pytest.raises(CsvFormatError):
            load_csv_suite(path)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("domain,label,f0\na,0,1.0\na,zero,2.0\n")
        with pytest.raises(CsvFormatError, match="line 3"):
            load_csv_suite(path)

    def test_round_trip_exact(self, tmp_path):
        suite = generate_synthetic_suite(
            [spec(seed=5), spec("d1", rotation=33.3, seed=6), spec("d2", shift=(0.1, -0.2), seed=7)]
        )
        path = tmp_path / "suite.csv"
        write_csv_suite(suite, path)
        reloaded = load_csv_suite(path)
        assert reloaded.n_domains == suite.n_domains
        for a, b in zip(suite.datasets, reloaded.datasets):
            assert a.domain_id == b.domain_id
            np.testing.assert_allclose(a.features, b.features, rtol=0, atol=1e-12)
            # 17 significant digits actually round-trip float64 exactly
            assert np.array_equal(a.features, b.features)
            assert np.array_equal(a.labels, b.labels)

    def test_fewer_than_three_domains_warns(self, tmp_path):
        path = tmp_path / "two.csv"
        path.write_text("domain,label,f0,f1\na,0,1,2\nb,1,3,4\n")
        with pytest.warns(UserWarning):
            load_csv_suite(path)


class TestLeaveOneOut:
    def _suite(self, n_domains=4):
        return generate_synthetic_suite(
            [spec(f"d{i}", rotation=10.0 * i, seed=i) for i in range(n_domains)]
        )

    def test_index_two_of_four(self):
        suite = self._suite()
        sources, target = leave_one_domain_out(suite, 2)
        assert target.domain_id == "d2"
        assert [s.domain_id for s in sources] == ["d0", "d1", "d3"]

    def test_three_domains(self):
        sources, target = leave_one_domain_out(self._suite(3), 0)
        assert len(sources) == 2
        assert target.domain_id == "d0"

    @pytest.mark.parametrize("idx", range(4))
    def test_partition(self, idx):
        suite = self._suite()
        sources, target = leave_one_domain_out(suite, idx)
        total = sum(s.n for s in sources) + target.n
        assert total == sum(d.n for d in suite.datasets)
        ids = {s.domain_id for s in sources} | {target.domain_id}
        assert ids == {d.domain_id for d in suite.datasets}

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            leave_one_domain_out(self._suite(), 4)


class TestDivergence:
    def test_identical_specs_zero(self):
        assert class_conditional_kl(spec(), spec()) == 0.0

    def test_unit_gaussian_mean_shift(self):
        # per class N(mu, I) vs N(mu + e1, I): KL = 1/2 in closed form
        a = DomainSpec("a", ((0.0, 0.0), (5.0, 0.0)), ((1.0, 1.0), (1.0, 1.0)))
        b = DomainSpec("b", ((1.0, 0.0), (6.0, 0.0)), ((1.0, 1.0), (1.0, 1.0)))
        assert class_conditional_kl(a, b) == pytest.approx(0.5, abs=1e-12)

    def test_variance_ratio_case(self):
        # N(0,1) vs N(0,4) per coordinate pair arranged to isolate one axis
        a = DomainSpec("a", ((0.0, 0.0), (9.0, 0.0)), ((1.0, 1.0), (1.0, 1.0)))
        b = DomainSpec("b", ((0.0, 0.0), (9.0, 0.0)), ((4.0, 1.0), (4.0, 1.0)))
        expected = np.log(2.0) + 1.0 / 8.0 - 0.5
        assert class_conditional_kl(a, b) == pytest.approx(expected, abs=1e-12)
        mc = mc_kl_oracle(a, b, 100_000, seed=11)
        assert abs(mc - expected) / expected < 0.02

    def test_monte_carlo_agreement_random_pairs(self):
        gen = np.random.default_rng(0)
        for trial in range(5):
            a = spec("a", rotation=float(gen.uniform(0, 40)), seed=trial)
            b = spec("b", rotation=float(gen.uniform(40, 90)),
                     shift=tuple(gen.uniform(-0.5, 0.5, 2)), seed=trial + 50)
            exact = class_conditional_kl(a, b)
            mc = mc_kl_oracle(a, b, 100_000, seed=trial)
            assert abs(mc - exact) / max(exact, 1e-9) < 0.02

    def test_rotation_360_is_same_distribution(self):
        assert class_conditional_kl(spec(rotation=360.0), spec(rotation=0.0)) < 1e-12

    def test_max_reduction_bounds_mean(self):
        a, b = spec(), spec(rotation=25.0)
        mean_kl = class_conditional_kl(a, b, "mean_over_classes")
        max_kl = class_conditional_kl(a, b, "max_over_classes")
        assert max_kl >= mean_kl >= 0.0

    def test_missing_spec_errors(self):
        with pytest.raises(MissingSpecError):
            class_conditional_kl(None, spec())


@settings(max_examples=25, deadline=None)
@given(
    rot=st.floats(0, 360, allow_nan=False),
    shift0=st.floats(-2, 2, allow_nan=False),
    scale=st.floats(0.2, 3.0, allow_nan=False),
)
def test_kl_non_negative_and_zero_on_self(rot, shift0, scale):
    a = spec(rotation=rot, shift=(shift0, 0.0), scale=scale)
    assert class_conditional_kl(a, a) == 0.0
    assert class_conditional_kl(a, spec()) >= 0.0
