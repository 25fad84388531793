import numpy as np
import pytest
from scipy.special import ndtri
from scipy.stats import norm

from saabo.sampling import (
    BaseSampleSpec,
    SampleSizeSchedule,
    draw_base_samples,
    inverse_normal_cdf,
    normal_cdf,
    normal_pdf,
    qmc_sample_sizes,
    reparameterize,
)


class TestInverseNormalCdf:
    def test_known_quantiles(self):
        # [DERIVED] classical table values
        assert inverse_normal_cdf(0.5) == pytest.approx(0.0, abs=1e-15)
        assert inverse_normal_cdf(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
        assert inverse_normal_cdf(0.025) == pytest.approx(-1.959963984540054, abs=1e-12)

    def test_matches_reference_implementation(self):
        u = np.concatenate([
            np.linspace(1e-15, 1 - 1e-15, 10001),
            10.0 ** np.linspace(-15, -1, 200),
            1.0 - 10.0 ** np.linspace(-15, -1, 200),
        ])
        z = inverse_normal_cdf(u)
        ref = ndtri(u)
        scale = np.maximum(np.abs(ref), 1.0)
        assert np.max(np.abs(z - ref) / scale) < 1e-9

    def test_roundtrip(self):
        u = np.linspace(1e-12, 1 - 1e-12, 4001)
        assert np.max(np.abs(normal_cdf(inverse_normal_cdf(u)) - u)) < 1e-12

    def test_monotone_and_antisymmetric(self):
        u = np.linspace(1e-9, 1 - 1e-9, 2001)
        z = inverse_normal_cdf(u)
        assert np.all(np.diff(z) > 0)
        assert np.allclose(z, -inverse_normal_cdf(1.0 - u)[...], atol=1e-9)

    def test_domain_errors(self):
        for bad in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                inverse_normal_cdf(bad)

    def test_scalar_in_scalar_out(self):
        out = inverse_normal_cdf(0.3)
        assert isinstance(out, float)


def test_normal_pdf_cdf_reference():
    z = np.linspace(-8, 8, 101)
    assert np.allclose(normal_cdf(z), norm.cdf(z), atol=1e-15)
    assert np.allclose(normal_pdf(z), norm.pdf(z), atol=1e-15)


class TestDrawBaseSamples:
    def test_shapes_and_immutability(self):
        s = draw_base_samples("iid", 0, 32, 3, m=2)
        assert s.E.shape == (32, 6)
        assert s.n_samples == 32
        with pytest.raises(ValueError):
            s.E[0, 0] = 1.0

    def test_deterministic(self):
        for mode in ("iid", "rqmc"):
            a = draw_base_samples(mode, 7, 64, 2)
            b = draw_base_samples(mode, 7, 64, 2)
            assert np.array_equal(a.E, b.E)
            c = draw_base_samples(mode, 8, 64, 2)
            assert not np.array_equal(a.E, c.E)

    def test_moments(self):
        E = draw_base_samples("iid", 1, 50_000, 2).E
        assert np.all(np.abs(E.mean(axis=0)) < 0.02)
        assert np.all(np.abs(E.std(axis=0) - 1.0) < 0.02)
        E = draw_base_samples("rqmc", 1, 4096, 2).E
        assert np.all(np.abs(E.mean(axis=0)) < 0.01)
        assert np.all(np.abs(E.std(axis=0) - 1.0) < 0.01)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            draw_base_samples("iid", 0, 0, 1)
        with pytest.raises(ValueError):
            draw_base_samples("mc", 0, 8, 1)
        with pytest.raises(ValueError):
            draw_base_samples("rqmc", 0, 8, 1112)

    def test_rqmc_variance_dominates_iid(self):
        # variance of the sample mean of exp(eps) over independent batches:
        # randomized QMC should beat iid at N = 256
        def mean_of(mode, seed):
            return np.exp(draw_base_samples(mode, seed, 256, 1).E).mean()

        iid = np.var([mean_of("iid", s) for s in range(50)])
        rqmc = np.var([mean_of("rqmc", s) for s in range(50)])
        assert rqmc < iid / 10


def test_base_sample_spec_caches_per_shape():
    spec = BaseSampleSpec("rqmc", 3, 32)
    a = spec.materialize(2)
    b = spec.materialize(2)
    assert a is b
    c = spec.materialize(3)
    assert c.E.shape == (32, 3)


class TestReparameterize:
    def test_transport_matches_direct_formula(self):
        rng = np.random.Generator(np.random.Philox(key=np.uint64(0)))
        mean = rng.standard_normal(3)
        A = rng.standard_normal((3, 3))
        root = np.linalg.cholesky(A @ A.T + np.eye(3))
        E = rng.standard_normal((100, 3))
        xi = reparameterize(mean, root, E)
        assert xi.shape == (100, 3)
        for i in range(5):
            assert np.allclose(xi[i], mean + root @ E[i])

    def test_sample_covariance_converges(self):
        mean = np.array([1.0, -2.0])
        cov = np.array([[2.0, 0.6], [0.6, 1.0]])
        root = np.linalg.cholesky(cov)
        E = draw_base_samples("rqmc", 5, 8192, 2).E
        xi = reparameterize(mean, root, E)
        assert np.allclose(xi.mean(axis=0), mean, atol=0.01)
        assert np.allclose(np.cov(xi.T), cov, atol=0.05)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            reparameterize(np.zeros(2), np.eye(2), np.zeros((10, 3)))


class TestSampleSizes:
    def test_power_of_two_ladder(self):
        sched = SampleSizeSchedule(base=2, M=1, k_max=4)
        assert qmc_sample_sizes(sched) == [1, 2, 4, 8, 16]

    def test_mixed_ladder(self):
        sched = SampleSizeSchedule(base=2, M=3, k_max=3)
        assert qmc_sample_sizes(sched) == [1, 2, 3, 4, 6, 8, 12, 16, 24]

    def test_base_three(self):
        sched = SampleSizeSchedule(base=3, M=2, k_max=2)
        assert qmc_sample_sizes(sched) == [1, 2, 3, 6, 9, 18]

    def test_invalid_schedule(self):
        with pytest.raises(ValueError):
            SampleSizeSchedule(base=1)
        with pytest.raises(ValueError):
            SampleSizeSchedule(M=0)
        with pytest.raises(ValueError):
            SampleSizeSchedule(k_max=-1)
