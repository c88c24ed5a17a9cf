"""eCDF machinery against brute-force counting and dedup oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fcdf import ecdf
from fcdf.errors import ContractError, PolicyError, ValidationError


def counting_oracle(samples, grid):
    """O(nG) direct count of samples <= x for each grid point."""
    n = len(samples)
    return np.array([sum(1 for s in samples if s <= x) / n for x in grid])


def label_ds(values, client_id=0):
    return ecdf.Dataset(ecdf.LABEL, np.array(values, dtype=np.int64), client_id)


class TestLocalDomain:
    def test_labels_deduplicated(self):
        s = ecdf.local_domain(label_ds([2, 2, 5]))
        assert list(s.labels) == [2, 5]

    def test_feature_ranges(self):
        d = ecdf.Dataset(ecdf.FEATURE, np.array([[0.1, 3.0], [-1.0, 3.5]]))
        s = ecdf.local_domain(d)
        assert s.ranges[0].tolist() == [-1.0, 0.1]
        assert s.ranges[1].tolist() == [3.0, 3.5]

    def test_matches_sort_dedup_oracle(self, rng):
        for _ in range(50):
            vals = rng.integers(-20, 20, size=rng.integers(1, 60))
            s = ecdf.local_domain(label_ds(vals))
            assert list(s.labels) == sorted(set(int(v) for v in vals))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError):
            ecdf.local_domain(label_ds([]))

    def test_nan_rejected_at_ingestion(self):
        with pytest.raises(ValidationError):
            ecdf.Dataset(ecdf.FEATURE, np.array([[0.0, float("nan")]]))


class TestMergeDomains:
    def test_label_union(self):
        a = ecdf.DomainSummary(ecdf.LABEL, labels=np.array([1, 3]))
        b = ecdf.DomainSummary(ecdf.LABEL, labels=np.array([2, 3]))
        policy = ecdf.merge_domains([a, b])
        assert list(policy.grids[0]) == [1, 2, 3]

    def test_feature_linspace(self):
        a = ecdf.DomainSummary(ecdf.FEATURE, ranges=np.array([[0.0, 1.0]]))
        b = ecdf.DomainSummary(ecdf.FEATURE, ranges=np.array([[0.5, 2.0]]))
        policy = ecdf.merge_domains([a, b], grid_size=4)
        # oracle: lo + i*(hi-lo)/(G-1)
        want = [0.0 + i * 2.0 / 3 for i in range(4)]
        assert policy.grids[0] == pytest.approx(want)

    def test_single_client_identity(self):
        a = ecdf.DomainSummary(ecdf.LABEL, labels=np.array([4, 7, 9]))
        policy = ecdf.merge_domains([a])
        assert list(policy.grids[0]) == [4, 7, 9]

    def test_degenerate_dimension_single_point(self):
        a = ecdf.DomainSummary(ecdf.FEATURE, ranges=np.array([[2.5, 2.5]]))
        policy = ecdf.merge_domains([a], grid_size=10)
        assert list(policy.grids[0]) == [2.5]

    def test_kind_mismatch_rejected(self):
        a = ecdf.DomainSummary(ecdf.LABEL, labels=np.array([1]))
        b = ecdf.DomainSummary(ecdf.FEATURE, ranges=np.array([[0.0, 1.0]]))
        with pytest.raises(PolicyError):
            ecdf.merge_domains([a, b])

    def test_dimension_mismatch_rejected(self):
        a = ecdf.DomainSummary(ecdf.FEATURE, ranges=np.array([[0.0, 1.0]]))
        b = ecdf.DomainSummary(ecdf.FEATURE, ranges=np.array([[0.0, 1.0], [0.0, 1.0]]))
        with pytest.raises(PolicyError):
            ecdf.merge_domains([a, b])

    def test_merge_idempotent(self, rng):
        summaries = [
            ecdf.DomainSummary(ecdf.FEATURE, ranges=np.sort(rng.random((3, 2)), axis=1))
            for _ in range(4)
        ]
        policy = ecdf.merge_domains(summaries, grid_size=17)
        again = ecdf.merge_domains([ecdf.policy_summary(policy)], grid_size=17)
        assert policy == again


class TestEcdfEval:
    def test_single_sample_at_grid_point(self):
        policy = ecdf.DistributionPolicy(ecdf.LABEL, (np.array([5]),))
        e = ecdf.ecdf_eval(label_ds([5]), policy)
        assert list(e.values[0]) == [1.0]

    def test_textbook_example(self):
        policy = ecdf.DistributionPolicy(ecdf.LABEL, (np.array([1, 2, 3, 4]),))
        e = ecdf.ecdf_eval(label_ds([1, 2, 2, 4]), policy)
        assert list(e.values[0]) == [0.25, 0.75, 0.75, 1.0]
        assert e.sample_count == 4

    def test_matches_counting_oracle_random(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 200))
            g = int(rng.integers(1, 50))
            samples = rng.normal(size=n)
            grid = np.unique(rng.normal(size=g))
            policy = ecdf.DistributionPolicy(ecdf.FEATURE, (grid,))
            d = ecdf.Dataset(ecdf.FEATURE, samples.reshape(-1, 1))
            e = ecdf.ecdf_eval(d, policy)
            assert np.array_equal(e.values[0], counting_oracle(samples, grid))

    def test_mass_below_grid(self, rng):
        # first value is zero only when the smallest grid point undercuts all samples
        for _ in range(50):
            samples = rng.integers(5, 15, size=20)
            grid = np.unique(rng.integers(0, 20, size=6))
            policy = ecdf.DistributionPolicy(ecdf.LABEL, (grid,))
            e = ecdf.ecdf_eval(label_ds(samples), policy)
            oracle = counting_oracle(samples, grid)
            assert np.array_equal(e.values[0], oracle)
            assert (e.values[0][0] == 0.0) == (grid[0] < samples.min())

    def test_values_are_multiples_of_1_over_n(self, rng):
        samples = rng.integers(0, 10, size=37)
        policy = ecdf.DistributionPolicy(ecdf.LABEL, (np.arange(10),))
        e = ecdf.ecdf_eval(label_ds(samples), policy)
        scaled = e.values[0] * 37
        assert np.array_equal(scaled, np.rint(scaled))

    def test_kind_mismatch_rejected(self):
        policy = ecdf.DistributionPolicy(ecdf.FEATURE, (np.array([0.0, 1.0]),))
        with pytest.raises(ContractError):
            ecdf.ecdf_eval(label_ds([1]), policy)

    def test_empty_dataset_rejected(self):
        policy = ecdf.DistributionPolicy(ecdf.LABEL, (np.array([1]),))
        with pytest.raises(ValidationError):
            ecdf.ecdf_eval(label_ds([]), policy)


class TestPdfFromCdf:
    def test_first_differences(self):
        policy = ecdf.DistributionPolicy(ecdf.LABEL, (np.array([1, 2, 3, 4]),))
        e = ecdf.Ecdf(policy, (np.array([0.25, 0.75, 0.75, 1.0]),), sample_count=4)
        (pdf,) = ecdf.pdf_from_cdf(e)
        assert pdf == pytest.approx([0.25, 0.5, 0.0, 0.25])

    def test_constant_cdf(self):
        policy = ecdf.DistributionPolicy(ecdf.LABEL, (np.array([1, 2]),))
        e = ecdf.Ecdf(policy, (np.array([0.4, 0.4]),))
        (pdf,) = ecdf.pdf_from_cdf(e)
        assert pdf == pytest.approx([0.4, 0.0])

    def test_cumsum_roundtrip(self, rng):
        for _ in range(20):
            g = int(rng.integers(1, 30))
            vals = np.sort(rng.random(g))
            vals = vals / max(vals[-1], 1.0)
            policy = ecdf.DistributionPolicy(ecdf.FEATURE, (np.sort(rng.choice(1000, g, replace=False)).astype(float),))
            e = ecdf.Ecdf(policy, (vals,))
            (pdf,) = ecdf.pdf_from_cdf(e)
            assert np.cumsum(pdf) == pytest.approx(vals, abs=1e-12)


class TestAverageCdfs:
    def _policy(self, g=2):
        return ecdf.DistributionPolicy(ecdf.LABEL, (np.arange(g),))

    def test_average_of_one(self):
        e = ecdf.Ecdf(self._policy(), (np.array([0.5, 1.0]),))
        out = ecdf.average_cdfs([e])
        assert np.array_equal(out.values[0], e.values[0])

    def test_average_of_two(self):
        p = self._policy()
        a = ecdf.Ecdf(p, (np.array([0.0, 1.0]),))
        b = ecdf.Ecdf(p, (np.array([1.0, 1.0]),))
        out = ecdf.average_cdfs([a, b])
        assert list(out.values[0]) == [0.5, 1.0]

    def test_matches_mean_oracle(self, rng):
        p = ecdf.DistributionPolicy(ecdf.FEATURE, (np.linspace(0, 1, 20),))
        cdfs = []
        for _ in range(4):
            v = np.sort(rng.random(20))
            v /= v[-1]
            cdfs.append(ecdf.Ecdf(p, (v,)))
        out = ecdf.average_cdfs(cdfs)
        want = np.mean([c.values[0] for c in cdfs], axis=0)
        assert np.abs(out.values[0] - want).max() < 1e-12

    def test_policy_mismatch_rejected(self):
        a = ecdf.Ecdf(self._policy(2), (np.array([0.5, 1.0]),))
        b = ecdf.Ecdf(self._policy(3), (np.array([0.5, 0.7, 1.0]),))
        with pytest.raises(ContractError):
            ecdf.average_cdfs([a, b])


class TestEcdfValidation:
    def test_non_monotone_rejected(self):
        p = ecdf.DistributionPolicy(ecdf.LABEL, (np.array([1, 2]),))
        with pytest.raises(ValidationError):
            ecdf.Ecdf(p, (np.array([0.5, 0.4]),))

    def test_out_of_range_rejected(self):
        p = ecdf.DistributionPolicy(ecdf.LABEL, (np.array([1, 2]),))
        with pytest.raises(ValidationError):
            ecdf.Ecdf(p, (np.array([0.5, 1.5]),))

    def test_policy_grid_must_increase(self):
        with pytest.raises(ValidationError):
            ecdf.DistributionPolicy(ecdf.LABEL, (np.array([1, 1]),))


class TestFlatten:
    def test_roundtrip(self, rng):
        p = ecdf.DistributionPolicy(
            ecdf.FEATURE, (np.linspace(0, 1, 5), np.linspace(-1, 1, 7))
        )
        vals = []
        for g in p.grids:
            v = np.sort(rng.random(len(g)))
            vals.append(v / v[-1])
        e = ecdf.Ecdf(p, tuple(vals))
        back = ecdf.ecdf_from_flat(p, ecdf.flatten_cdf(e))
        for a, b in zip(e.values, back.values):
            assert np.array_equal(a, b)


class TestCsv:
    def test_label_roundtrip(self, tmp_path, rng):
        d = label_ds(rng.integers(-5, 99, size=40), client_id=3)
        path = tmp_path / "labels.csv"
        ecdf.write_label_csv(path, d)
        back = ecdf.read_label_csv(path, client_id=3)
        assert np.array_equal(d.samples, back.samples)

    def test_feature_roundtrip_exact(self, tmp_path, rng):
        samples = rng.normal(size=(30, 4))
        d = ecdf.Dataset(ecdf.FEATURE, samples, class_ids=rng.integers(0, 5, size=30))
        path = tmp_path / "features.csv"
        ecdf.write_feature_csv(path, d)
        back = ecdf.read_feature_csv(path)
        assert np.array_equal(d.samples, back.samples)  # repr round-trips exactly
        assert np.array_equal(d.class_ids, back.class_ids)
        with open(path) as fh:
            assert fh.readline().strip() == "f0,f1,f2,f3,class"

    def test_malformed_label_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1\nxyz\n")
        with pytest.raises(ValidationError):
            ecdf.read_label_csv(path)

    def test_malformed_feature_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,class\n0.0,0.0,1\n")
        with pytest.raises(ValidationError):
            ecdf.read_feature_csv(path)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(-50, 50), min_size=1, max_size=80),
    st.lists(st.integers(-60, 60), min_size=1, max_size=40, unique=True),
)
def test_ecdf_eval_matches_oracle_property(samples, grid_points):
    grid = np.array(sorted(grid_points), dtype=np.int64)
    policy = ecdf.DistributionPolicy(ecdf.LABEL, (grid,))
    e = ecdf.ecdf_eval(label_ds(samples), policy)
    assert np.array_equal(e.values[0], counting_oracle(samples, grid))
    # invariants: monotone in [0, 1], multiples of 1/n
    assert (np.diff(e.values[0]) >= 0).all()
    scaled = e.values[0] * len(samples)
    assert np.array_equal(scaled, np.rint(scaled))
