import math

import numpy as np
import pandas as pd
import pytest

from exposureiv.errors import InsufficientBaseline, MissingBaseline, OutOfRange
from exposureiv.met import (
    Baseline,
    MonthlyWeather,
    baseline_frame,
    build_baseline,
    relative_humidity,
    standardize,
    standardize_frame,
    wind_components,
    wind_speed_dir,
)


def magnus_oracle(t, dew):
    return 100.0 * math.exp(17.625 * dew / (243.04 + dew)) / math.exp(17.625 * t / (243.04 + t))


def make_weather(county, year, month, t=15.0, dew=8.0, **kw):
    return MonthlyWeather(
        county_id=county,
        year=year,
        month=month,
        t2m_c=t,
        dewpoint_c=dew,
        precip_mm=kw.get("precip", 50.0),
        u10=kw.get("u10", 1.0),
        v10=kw.get("v10", 0.5),
        u100=kw.get("u100", 2.0),
        v100=kw.get("v100", 1.0),
    )


class TestMonthlyWeather:
    def test_month_bounds(self):
        with pytest.raises(ValueError):
            make_weather("C1", 2001, 13)

    def test_dewpoint_cannot_exceed_temperature_by_much(self):
        with pytest.raises(ValueError):
            make_weather("C1", 2001, 6, t=10.0, dew=11.0)
        # within reanalysis tolerance
        make_weather("C1", 2001, 6, t=10.0, dew=10.4)


class TestWindSpeedDir:
    def test_west_wind_convention(self):
        # positive u comes from the west
        assert wind_speed_dir(1.0, 0.0) == (1.0, 270.0)

    def test_south_wind_convention(self):
        # positive v comes from the south
        assert wind_speed_dir(0.0, 1.0) == (1.0, 180.0)

    def test_three_four_five(self):
        speed, direction = wind_speed_dir(3.0, 4.0)
        assert speed == pytest.approx(5.0, abs=1e-12)
        oracle = (270.0 - math.degrees(math.atan2(4.0, 3.0))) % 360.0
        assert direction == pytest.approx(oracle, abs=1e-12)
        assert direction == pytest.approx(216.8699, abs=1e-4)

    def test_calm_wind_flagged(self):
        speed, direction = wind_speed_dir(0.0, 0.0)
        assert speed == 0.0
        assert math.isnan(direction)

    def test_round_trip(self):
        rng = np.random.default_rng(21)
        for _ in range(500):
            u, v = rng.uniform(-15, 15, 2)
            if u == 0 and v == 0:
                continue
            speed, direction = wind_speed_dir(u, v)
            u2, v2 = wind_components(speed, direction)
            assert u2 == pytest.approx(u, abs=1e-9)
            assert v2 == pytest.approx(v, abs=1e-9)


class TestRelativeHumidity:
    def test_saturation(self):
        assert relative_humidity(20.0, 20.0) == pytest.approx(100.0, abs=1e-12)

    def test_against_magnus_oracle(self):
        assert relative_humidity(20.0, 10.0) == pytest.approx(magnus_oracle(20, 10), abs=1e-9)
        assert relative_humidity(20.0, 10.0) == pytest.approx(52.5, abs=0.5)
        assert relative_humidity(0.0, -10.0) == pytest.approx(magnus_oracle(0, -10), abs=1e-9)
        assert relative_humidity(0.0, -10.0) == pytest.approx(46.8, abs=0.5)

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            relative_humidity(-243.04, -250.0)

    def test_monotone_in_dewpoint_and_temperature(self):
        rh = [relative_humidity(15.0, d) for d in np.linspace(-20, 15, 40)]
        assert all(a < b for a, b in zip(rh, rh[1:]))
        rh_t = [relative_humidity(t, 5.0) for t in np.linspace(5, 40, 40)]
        assert all(a > b for a, b in zip(rh_t, rh_t[1:]))

    def test_small_excess_clamped(self):
        assert relative_humidity(10.0, 10.3) == 100.0


class TestStandardize:
    CELL = Baseline(county_id="C1", month=3, mean_t=5.0, sd_t=2.0, mean_rh=60.0, sd_rh=8.0)

    def test_mean_maps_to_zero(self):
        assert standardize(5.0, self.CELL, "temperature") == 0.0

    def test_one_sd_maps_to_one(self):
        assert standardize(7.0, self.CELL, "temperature") == 1.0
        assert standardize(68.0, self.CELL, "humidity") == 1.0

    def test_fixture_arithmetic(self):
        assert standardize(8.0, self.CELL, "temperature") == pytest.approx(1.5, abs=1e-15)

    def test_unknown_field(self):
        with pytest.raises(ValueError):
            standardize(1.0, self.CELL, "precip")

    def test_positive_sd_required(self):
        with pytest.raises(ValueError):
            Baseline("C1", 1, 0.0, 0.0, 50.0, 5.0)


class TestBuildBaseline:
    def test_two_point_series(self):
        history = [
            make_weather("C1", 1950, 1, t=4.0, dew=0.0),
            make_weather("C1", 1951, 1, t=6.0, dew=2.0),
        ]
        table = build_baseline(history, min_years=2)
        cell = table[("C1", 1)]
        assert cell.mean_t == pytest.approx(5.0)
        assert cell.sd_t == pytest.approx(math.sqrt(2.0))

    def test_constant_series_degenerate(self):
        history = [make_weather("C1", 1950 + k, 1, t=4.0, dew=0.0) for k in range(35)]
        with pytest.raises(InsufficientBaseline):
            build_baseline(history, min_years=30)

    def test_insufficient_history(self):
        history = [make_weather("C1", 1950 + k, 1, t=4.0 + k, dew=0.0) for k in range(10)]
        with pytest.raises(InsufficientBaseline):
            build_baseline(history, min_years=30)

    def test_order_invariant(self):
        rng = np.random.default_rng(22)
        history = [
            make_weather("C1", 1950 + k, m, t=float(rng.normal(10, 3)), dew=0.0)
            for k in range(31)
            for m in (1, 2)
        ]
        a = baseline_frame(history, min_years=30)
        b = baseline_frame(list(reversed(history)), min_years=30)
        pd.testing.assert_frame_equal(a, b)


class TestStandardizeFrame:
    def _history_frame(self, rng, n_years=40):
        rows = []
        for county in ("C1", "C2"):
            for k in range(n_years):
                for m in range(1, 13):
                    t = 10 + 8 * math.cos(2 * math.pi * (m - 7) / 12) + rng.normal(0, 2)
                    rows.append(
                        {
                            "county_id": county,
                            "year": 1950 + k,
                            "month": m,
                            "t2m_c": t,
                            "dewpoint_c": t - abs(rng.normal(3, 1)) - 0.2,
                            "precip_mm": 40.0,
                            "u10": 1.0,
                            "v10": 0.0,
                            "u100": 2.0,
                            "v100": 0.0,
                        }
                    )
        return pd.DataFrame(rows)

    def test_self_standardization_gives_unit_moments(self):
        rng = np.random.default_rng(23)
        history = self._history_frame(rng)
        baseline = baseline_frame(history, min_years=30)
        z = standardize_frame(history, baseline)
        cells = z.groupby(["county_id", "month"])
        for col in ("z_temp", "z_rh"):
            means = cells[col].mean()
            sds = cells[col].std(ddof=1)
            assert np.max(np.abs(means.to_numpy())) < 1e-9
            assert np.max(np.abs(sds.to_numpy() - 1.0)) < 1e-9

    def test_missing_baseline_cell(self):
        rng = np.random.default_rng(24)
        history = self._history_frame(rng)
        baseline = baseline_frame(history, min_years=30)
        other = history.iloc[:12].copy()
        other["county_id"] = "C9"
        with pytest.raises(MissingBaseline):
            standardize_frame(other, baseline)
