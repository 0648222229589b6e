"""Test cases for willingness to pay and discount rates."""

import math

import pytest

from config import settings
from exceptions import (
    DiscountRateDomainError,
    InvalidInputError,
    SingularityError,
    ZeroPriceMarginalError,
)
from modelspec import preset_spec, published_params
from wtp import (
    EvaluationPoint,
    WtpGrid,
    annuity_present_value,
    discount_rate,
    format_rate,
    load_grid,
    load_profile,
    marginal_utility,
    marginal_utility_terms,
    profile_latent_means,
    usd,
    write_curve,
    wtp,
    wtp_curve,
    wtp_thousand_inr,
)


def thousand_inr(spec, params, attribute, point=None, latent_means=None, unit_change=None):
    point = point or EvaluationPoint()
    return wtp_thousand_inr(wtp(spec, params, point, attribute, unit_change, latent_means))


class TestLinearModel:
    """Model 1: WTP does not depend on the evaluation point."""

    def setup_method(self):
        """Load Model 1 at its published values."""
        self.spec = preset_spec(1)
        self.params = published_params(1, self.spec)

    def test_fast_charge(self):
        """Ten minutes less fast charging is worth 20 thousand INR."""
        assert thousand_inr(self.spec, self.params, "fastcharge") == pytest.approx(20.0, rel=1e-9)

    def test_range(self):
        """100 km more range is worth less at a longer base range."""
        at_200 = thousand_inr(self.spec, self.params, "range")
        at_500 = thousand_inr(self.spec, self.params, "range", EvaluationPoint().with_attribute("range", 500.0))
        assert at_200 == pytest.approx(300.0, rel=1e-9)
        assert at_500 == pytest.approx(120.0, rel=1e-9)

    def test_fuel(self):
        """Saving 100 INR a week is worth 9 thousand INR."""
        assert thousand_inr(self.spec, self.params, "fuel") == pytest.approx(9.0, rel=1e-9)

    def test_price_independent(self):
        """Without curvature the EV price leaves WTP unchanged."""
        dear = EvaluationPoint().with_attribute("price", 18.0)
        assert thousand_inr(self.spec, self.params, "fastcharge", dear) == pytest.approx(20.0, rel=1e-9)

    def test_zero_price_marginal(self):
        """A vanishing price coefficient leaves WTP undefined."""
        with pytest.raises(ZeroPriceMarginalError):
            wtp(self.spec, self.params.replace(beta_price=0.0), EvaluationPoint(), "fastcharge")


class TestCurvedModel:
    """Model 2: marginals depend on the deviation from the ICEV reference."""

    def setup_method(self):
        """Load Model 2 at its published values."""
        self.spec = preset_spec(2)
        self.params = published_params(2, self.spec)

    def test_price_marginal(self):
        """beta alpha |d|^(alpha - 1) at a 3 lacs premium."""
        assert marginal_utility(self.spec, self.params, EvaluationPoint(), "price") == pytest.approx(
            -0.142673, rel=1e-4
        )

    def test_fast_charge_grows_with_price(self):
        """A dearer EV makes the price marginal flatter and the WTP larger."""
        values = [
            thousand_inr(self.spec, self.params, "fastcharge", EvaluationPoint().with_attribute("price", p))
            for p in (11.0, 13.0, 15.0)
        ]
        assert values == pytest.approx([9.12, 21.03, 31.0], rel=2e-3)

    def test_range(self):
        """Range WTP at 200 km."""
        assert thousand_inr(self.spec, self.params, "range") == pytest.approx(112.7, rel=2e-3)

    def test_fuel(self):
        """A larger fuel saving lowers the WTP per 100 INR."""
        near = thousand_inr(self.spec, self.params, "fuel")
        far = thousand_inr(self.spec, self.params, "fuel", EvaluationPoint(ev_weekly_fuel=0.5))
        assert near == pytest.approx(11.2, rel=3e-3)
        assert far == pytest.approx(8.3, rel=3e-3)

    def test_singularity(self):
        """Equal fuel costs put the curved marginal at its singular point."""
        with pytest.raises(SingularityError):
            wtp(self.spec, self.params, EvaluationPoint(ev_weekly_fuel=5.0), "fuel")

    def test_unit_change(self):
        """WTP scales with the requested change."""
        single = thousand_inr(self.spec, self.params, "fastcharge", unit_change=-1.0)
        assert thousand_inr(self.spec, self.params, "fastcharge") == pytest.approx(10.0 * single)


class TestProfiles:
    """Model 3: WTP at demographic-profile latent means."""

    def setup_method(self):
        """Load Model 3 and the two shipped profiles."""
        self.spec = preset_spec(3)
        self.params = published_params(3, self.spec)
        self.profile1 = load_profile(settings.PRESET_DIR / "profile_demographics1.json")
        self.profile2 = load_profile(settings.PRESET_DIR / "profile_demographics2.json")

    def test_latent_means(self):
        """Profile means are the structural coefficients summed over the profile."""
        means = profile_latent_means(self.spec, self.params, self.profile1.demographics)
        assert list(means) == pytest.approx([0.713, -0.491, 0.603], abs=5e-3)

    def test_price_marginal_includes_interactions(self):
        """Latent-price interactions enter the price marginal."""
        means = profile_latent_means(self.spec, self.params, self.profile1.demographics)
        terms = marginal_utility_terms(self.spec, self.params, EvaluationPoint(), "price", means)
        assert set(terms) == {"beta_price", "phi_climate_doubter_price", "phi_ev_tech_believer_price",
                              "phi_early_adopter_price"}
        assert math.fsum(terms.values()) == pytest.approx(-0.164963, rel=1e-2)

    def test_first_profile(self):
        """Fast-charge, range and fuel WTP for the first profile."""
        means = profile_latent_means(self.spec, self.params, self.profile1.demographics)
        at_500 = EvaluationPoint().with_attribute("range", 500.0)
        assert thousand_inr(self.spec, self.params, "fastcharge", latent_means=means) == pytest.approx(12.1, rel=0.02)
        assert thousand_inr(self.spec, self.params, "range", latent_means=means) == pytest.approx(75.8, rel=0.02)
        assert thousand_inr(self.spec, self.params, "range", at_500, means) == pytest.approx(64.2, rel=0.02)
        assert thousand_inr(self.spec, self.params, "fuel", latent_means=means) == pytest.approx(22.75, rel=0.02)

    def test_second_profile(self):
        """The second profile values fast charging and range more."""
        means = profile_latent_means(self.spec, self.params, self.profile2.demographics)
        assert thousand_inr(self.spec, self.params, "fastcharge", latent_means=means) == pytest.approx(15.1, rel=0.02)
        assert thousand_inr(self.spec, self.params, "range", latent_means=means) == pytest.approx(256.0, rel=0.02)
        assert thousand_inr(self.spec, self.params, "fuel", latent_means=means) == pytest.approx(30.67, rel=0.02)

    def test_icev_side_terms_do_not_enter(self):
        """ICEV-only interactions carry no EV marginal."""
        terms = marginal_utility_terms(self.spec, self.params, EvaluationPoint(), "fastcharge", [1.0, 1.0, 1.0])
        assert "phi_early_adopter_icev_fast" not in terms
        assert terms == pytest.approx({"beta_fast_ev": -0.002})


class TestCurves:
    """Test cases for WTP grids."""

    def setup_method(self):
        """Load Model 2 and the fast-charge grid."""
        self.spec = preset_spec(2)
        self.params = published_params(2, self.spec)
        self.grid = load_grid(settings.PRESET_DIR / "grid_fastcharge.json")

    def test_curve_rows(self, tmp_path):
        """One row per EV price and attribute value."""
        curve = wtp_curve(self.spec, self.params, "fastcharge", self.grid)
        assert len(curve) == 9
        assert list(curve.columns) == ["model", "profile", "ev_price", "attr_value", "wtp_thousand_inr"]
        row = curve[(curve.ev_price == 13.0) & (curve.attr_value == 60.0)].iloc[0]
        assert row.wtp_thousand_inr == pytest.approx(21.03, rel=2e-3)
        assert set(curve.profile) == {"none"}

        path = tmp_path / "curve.csv"
        write_curve(curve, path)
        assert path.read_text().splitlines()[0] == "model,profile,ev_price,attr_value,wtp_thousand_inr"

    def test_profile_name_in_curve(self):
        """Profile curves carry the profile name."""
        profile = load_profile(settings.PRESET_DIR / "profile_demographics1.json")
        spec3 = preset_spec(3)
        curve = wtp_curve(spec3, published_params(3, spec3), "range",
                          load_grid(settings.PRESET_DIR / "grid_range.json"), profile)
        assert len(curve) == 15
        assert set(curve.profile) == {"demographics1"}

    def test_price_is_not_a_curve_attribute(self):
        """Price WTP is not defined."""
        with pytest.raises(InvalidInputError):
            wtp_curve(self.spec, self.params, "price", WtpGrid(ev_price=[13.0], attribute_values=[13.0]))

    def test_grid_below_icev_price(self):
        """EV prices must stay above the ICEV reference."""
        with pytest.raises(InvalidInputError):
            wtp_curve(self.spec, self.params, "fastcharge", WtpGrid(ev_price=[9.0], attribute_values=[60.0]))


class TestEvaluationPoint:
    """Test cases for evaluation point validation."""

    def test_ev_price_must_exceed_icev(self):
        """The EV is dearer than the ICEV."""
        with pytest.raises(InvalidInputError):
            EvaluationPoint(ev_price=10.0)

    def test_unknown_attribute(self):
        """Only price, fastcharge, range and fuel exist."""
        with pytest.raises(InvalidInputError):
            EvaluationPoint().with_attribute("colour", 1.0)

    def test_currency(self):
        """Thousand INR convert at 75.2 INR per USD."""
        assert usd(75.2) == pytest.approx(1000.0)
        assert wtp_thousand_inr(0.2) == pytest.approx(20.0)


class TestDiscountRate:
    """Test cases for the annuity discount-rate converter."""

    @pytest.mark.parametrize("price, expected", [(9300.0, 0.743), (26600.0, 0.200), (30200.0, 0.167)])
    def test_published_rates(self, price, expected):
        """Rates implied by paying for 100 INR weekly savings over 15 years."""
        assert discount_rate(price, 100.0, 15) == pytest.approx(expected, abs=0.005)

    def test_undiscounted_boundary(self):
        """Paying exactly the undiscounted savings means a zero rate."""
        assert discount_rate(78000.0, 100.0, 15) == 0.0

    def test_negative_rate(self):
        """Paying more than the undiscounted savings implies a negative rate."""
        rate = discount_rate(80000.0, 100.0, 15)
        assert rate < 0.0
        weekly = (1.0 + rate) ** (1.0 / 52) - 1.0
        assert annuity_present_value(100.0, weekly, 780) == pytest.approx(80000.0, rel=1e-6)

    def test_rate_reproduces_price(self):
        """The weekly rate behind an annual rate discounts the savings back to the price."""
        rate = discount_rate(9300.0, 100.0, 15)
        weekly = (1.0 + rate) ** (1.0 / 52) - 1.0
        assert annuity_present_value(100.0, weekly, 780) == pytest.approx(9300.0, rel=1e-8)

    def test_zero_rate_annuity(self):
        """The zero-rate annuity is the plain sum."""
        assert annuity_present_value(100.0, 0.0, 780) == 78000.0

    def test_invalid_inputs(self):
        """Price and saving must be positive and the horizon at least a year."""
        with pytest.raises(InvalidInputError):
            discount_rate(0.0, 100.0, 15)
        with pytest.raises(InvalidInputError):
            discount_rate(9300.0, -1.0, 15)
        with pytest.raises(InvalidInputError):
            discount_rate(9300.0, 100.0, 0)

    def test_no_root(self):
        """A price beyond any admissible negative rate has no solution."""
        with pytest.raises(DiscountRateDomainError):
            discount_rate(1e22, 100.0, 15)

    def test_format(self):
        """Rates print as percentages with one decimal."""
        assert format_rate(0.2) == "20.0%"
