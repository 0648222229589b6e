"""Test cases for the bivariate normal kernel."""

import math

import numpy as np
import pytest
from scipy.special import ndtr

from cml import PairTerm, pair_logprob
from exceptions import GaussianDomainError
from gaussian import PROB_FLOOR, Phi, Phi2, Rect2, phi, rect_prob, rect_prob_array


class TestPhi2:
    """Test cases for the bivariate normal CDF."""

    def test_orthant_identity(self):
        """Phi2(0, 0, rho) = 1/4 + asin(rho) / (2 pi) on a 99-point grid."""
        rho = np.linspace(-0.99, 0.99, 99)
        expected = 0.25 + np.arcsin(rho) / (2.0 * math.pi)
        np.testing.assert_allclose(Phi2(0.0, 0.0, rho), expected, rtol=0, atol=1e-10)

    def test_independence(self):
        """Zero correlation factorizes."""
        h = np.array([-2.0, -0.3, 0.0, 1.1, 2.5])
        k = np.array([0.4, -1.7, 2.2, 0.0, -0.5])
        np.testing.assert_allclose(Phi2(h, k, 0.0), ndtr(h) * ndtr(k), rtol=0, atol=1e-14)

    def test_symmetry(self):
        """Swapping the limits leaves the probability unchanged."""
        assert Phi2(0.7, -1.2, 0.95) == pytest.approx(Phi2(-1.2, 0.7, 0.95), abs=1e-14)
        assert Phi2(0.7, -1.2, -0.5) == pytest.approx(Phi2(-1.2, 0.7, -0.5), abs=1e-14)

    def test_reflection(self):
        """P(Z1 <= h, Z2 <= k; rho) + P(Z1 <= h, Z2 > k; rho) = Phi(h) for both correlation regimes."""
        for rho in (-0.97, -0.4, 0.3, 0.96):
            total = Phi2(0.8, 0.2, rho) + Phi2(0.8, -0.2, -rho)
            assert total == pytest.approx(ndtr(0.8), abs=1e-12)

    def test_continuity_across_regimes(self):
        """The two integration schemes agree at the switching correlation."""
        below = Phi2(0.5, -0.3, 0.92499999)
        above = Phi2(0.5, -0.3, 0.92500001)
        assert below == pytest.approx(above, abs=1e-8)

    def test_infinite_limits(self):
        """Infinite limits reduce to univariate probabilities."""
        assert Phi2(np.inf, 0.3, 0.5) == pytest.approx(ndtr(0.3), abs=1e-15)
        assert Phi2(-0.4, np.inf, -0.5) == pytest.approx(ndtr(-0.4), abs=1e-15)
        assert Phi2(-np.inf, 0.3, 0.5) == 0.0
        assert Phi2(np.inf, np.inf, 0.2) == 1.0

    def test_shape_and_scalar(self):
        """Arrays keep their shape; scalars come back as floats."""
        out = Phi2(np.zeros((2, 3)), np.zeros((2, 3)), 0.0)
        assert out.shape == (2, 3)
        assert isinstance(Phi2(0.1, 0.2, 0.3), float)

    def test_domain_errors(self):
        """|rho| >= 1 and NaN limits are rejected."""
        with pytest.raises(GaussianDomainError):
            Phi2(0.0, 0.0, 1.0)
        with pytest.raises(GaussianDomainError):
            Phi2(np.nan, 0.0, 0.2)

    def test_univariate_helpers(self):
        """phi and Phi are the standard normal density and CDF."""
        assert phi(0.0) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi))
        assert Phi(0.0) == 0.5


class TestRectangles:
    """Test cases for rectangle probabilities."""

    def test_partition_sums_to_one(self):
        """Rectangles partitioning the plane sum to one."""
        cuts1 = [-np.inf, -1.0, 0.5, 1.7, np.inf]
        cuts2 = [-np.inf, -0.6, 0.2, np.inf]
        for rho in (-0.8, 0.0, 0.6, 0.97):
            total = sum(
                rect_prob_array(cuts1[a], cuts1[a + 1], cuts2[b], cuts2[b + 1], rho)
                for a in range(len(cuts1) - 1)
                for b in range(len(cuts2) - 1)
            )
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_floor(self):
        """Far-tail rectangles are floored before a logarithm sees them."""
        assert rect_prob(Rect2(40.0, np.inf, 40.0, np.inf, 0.1)) == PROB_FLOOR

    def test_rect_bounds(self):
        """Empty rectangles and |rho| >= 1 are domain errors."""
        with pytest.raises(GaussianDomainError):
            Rect2(1.0, 1.0, 0.0, 1.0, 0.2)
        with pytest.raises(GaussianDomainError):
            Rect2(0.0, 1.0, 0.0, 1.0, -1.0)

    def test_monte_carlo(self):
        """Rectangle probabilities agree with simulation within 4 standard errors."""
        rng = np.random.default_rng(2024)
        draws = 400_000
        for _ in range(5):
            rho = rng.uniform(-0.95, 0.95)
            lower1, lower2 = rng.normal(size=2) - 0.5
            upper1, upper2 = lower1 + rng.uniform(0.3, 2.0), lower2 + rng.uniform(0.3, 2.0)
            z1 = rng.standard_normal(draws)
            z2 = rho * z1 + math.sqrt(1.0 - rho * rho) * rng.standard_normal(draws)
            inside = (z1 > lower1) & (z1 <= upper1) & (z2 > lower2) & (z2 <= upper2)
            p_hat = inside.mean()
            p = rect_prob(Rect2(lower1, upper1, lower2, upper2, rho))
            se = math.sqrt(p * (1.0 - p) / draws)
            assert abs(p_hat - p) <= 4.0 * se

    def test_unit_square_independent(self):
        """The unit square at zero correlation is the univariate product."""
        p = rect_prob(Rect2(0.0, 1.0, 0.0, 1.0, 0.0))
        assert p == pytest.approx((ndtr(1.0) - 0.5) ** 2, abs=1e-12)
        assert p == pytest.approx(0.11651, abs=1e-5)


class TestMonotonicity:
    """Phi2 is nondecreasing in each argument."""

    def setup_method(self):
        """Setup a grid of limits and correlations."""
        self.limits = np.linspace(-4.0, 4.0, 81)
        self.rhos = np.linspace(-0.99, 0.99, 67)

    def test_in_limits(self):
        """Raising h or k never lowers the probability."""
        for rho in (-0.95, -0.3, 0.0, 0.5, 0.93, 0.99):
            for fixed in (-2.0, 0.0, 1.5):
                along_h = Phi2(self.limits, fixed, rho)
                along_k = Phi2(fixed, self.limits, rho)
                assert np.all(np.diff(along_h) >= -1e-10)
                assert np.all(np.diff(along_k) >= -1e-10)

    def test_in_correlation(self):
        """Raising rho never lowers the probability."""
        for h, k in ((0.0, 0.0), (-1.2, 0.7), (2.0, -2.5), (1.0, 1.0)):
            values = Phi2(h, k, self.rhos)
            assert np.all(np.diff(values) >= -1e-10)


@pytest.mark.slow
class TestPairLogprobMonteCarlo:
    """pair_logprob against brute-force simulation of the 2-D Gaussian."""

    def test_random_moments(self):
        """20 random 2x2 moment cases agree with 10^7 draws within 3 standard errors."""
        rng = np.random.default_rng(7)
        draws, chunk = 10_000_000, 1_000_000
        for case in range(20):
            factor = rng.normal(size=(2, 2))
            cov = factor @ factor.T + np.diag(rng.uniform(0.2, 1.5, size=2))
            mean = np.clip(rng.normal(size=2), -1.5, 1.5)
            sd = np.sqrt(np.diag(cov))
            lower = mean + sd * rng.uniform(-1.5, 0.5, size=2)
            upper = lower + sd * rng.uniform(0.5, 2.5, size=2)
            # choice-like half lines alternate with bounded indicator bins
            if case % 3 == 0:
                lower[0], upper[0] = 0.0, np.inf
            elif case % 3 == 1:
                lower[1], upper[1] = -np.inf, 0.0
            term = PairTerm("choice_indicator", 0, 1, mean, cov, lower, upper)
            p = math.exp(pair_logprob(term))

            chol = np.linalg.cholesky(cov)
            hits = 0
            for _ in range(draws // chunk):
                x = mean + rng.standard_normal((chunk, 2)) @ chol.T
                hits += int(np.sum(np.all((x > lower) & (x <= upper), axis=1)))
            se = math.sqrt(p * (1.0 - p) / draws)
            assert abs(hits / draws - p) <= 3.0 * se
