import numpy as np
import pytest

from omniair.data import (
    SeriesFrame,
    StationMeta,
    chrono_split,
    compute_norm_stats,
    load_series,
    load_stations,
    make_windows,
    window_count,
    write_series,
    write_stations,
)

STATION_HEADER = (
    "station_id,lat,lon,elevation,climate_avg_wind,climate_avg_wind_dir,"
    "terrain_tpi,terrain_roughness,distance_to_coast_km,grade\n"
)


def write(path, text):
    path.write_text(text)
    return path


class TestLoadStations:
    def test_header_only(self, tmp_path):
        p = write(tmp_path / "s.csv", STATION_HEADER)
        assert load_stations(p) == []

    def test_one_valid_row(self, tmp_path):
        p = write(tmp_path / "s.csv", STATION_HEADER + "a1,10.5,-3.25,100,5,180,1,2,30,4\n")
        (s,) = load_stations(p)
        assert s.id == "a1" and s.lat == 10.5 and s.lon == -3.25
        np.testing.assert_array_equal(s.geo_feats, [100, 5, 180, 1, 2, 30])
        assert s.grade == 4

    def test_out_of_range_lat_names_row(self, tmp_path):
        p = write(tmp_path / "s.csv", STATION_HEADER + "a1,91,0,0,0,0,0,0,0,0\n")
        with pytest.raises(ValueError, match="row 2"):
            load_stations(p)

    def test_duplicate_id(self, tmp_path):
        rows = "a1,0,0,0,0,0,0,0,0,0\na1,1,1,0,0,0,0,0,0,0\n"
        p = write(tmp_path / "s.csv", STATION_HEADER + rows)
        with pytest.raises(ValueError, match="row 3.*duplicate"):
            load_stations(p)

    def test_missing_column(self, tmp_path):
        p = write(tmp_path / "s.csv", "station_id,lat,lon\n")
        with pytest.raises(ValueError, match="missing station columns"):
            load_stations(p)

    def test_unknown_grade_allowed(self, tmp_path):
        p = write(tmp_path / "s.csv", STATION_HEADER + "a1,0,0,0,0,0,0,0,0,-1\n")
        (s,) = load_stations(p)
        assert s.grade == -1

    def test_roundtrip(self, tmp_path):
        stations = [
            StationMeta("x", 1.25, -2.5, np.array([1.0, 2, 3, 4, 5, 6]), 3),
            StationMeta("y", -10.0, 170.0, np.linspace(0, 1, 6), 0),
        ]
        p = tmp_path / "s.csv"
        write_stations(stations, p)
        loaded = load_stations(p)
        for a, b in zip(stations, loaded):
            assert a.id == b.id and a.lat == b.lat and a.lon == b.lon
            np.testing.assert_array_equal(a.geo_feats, b.geo_feats)
            assert a.grade == b.grade


class TestLoadSeries:
    def _stations(self):
        return [StationMeta("a", 0, 0, np.zeros(6), 0), StationMeta("b", 1, 1, np.zeros(6), 1)]

    def test_single_station_single_channel(self, tmp_path):
        text = "timestamp,station_id,pm25,pm10,o3,no2,so2,co\n"
        for i, v in enumerate((1.0, 2.0, 3.0)):
            text += f"2020-01-0{i + 1},a,{v},,,,,\n"
        p = write(tmp_path / "x.csv", text)
        frame = load_series(p, self._stations()[:1])
        assert frame.values.shape == (3, 1, 6)
        assert frame.valid[:, 0, 0].all()
        assert not frame.valid[:, 0, 1:].any()
        np.testing.assert_array_equal(frame.values[:, 0, 0], [1, 2, 3])

    def test_missing_middle_day_fully_invalid(self, tmp_path):
        text = (
            "timestamp,station_id,pm25,pm10,o3,no2,so2,co\n"
            "2020-01-01,a,1,1,1,1,1,1\n"
            "2020-01-03,a,3,3,3,3,3,3\n"
        )
        frame = load_series(write(tmp_path / "x.csv", text), self._stations()[:1])
        assert frame.n_steps == 3
        assert not frame.valid[1].any()

    def test_unknown_station(self, tmp_path):
        text = "timestamp,station_id,pm25,pm10,o3,no2,so2,co\n2020-01-01,zz,1,,,,,\n"
        with pytest.raises(ValueError, match="unknown station"):
            load_series(write(tmp_path / "x.csv", text), self._stations())

    def test_duplicate_observation(self, tmp_path):
        text = (
            "timestamp,station_id,pm25,pm10,o3,no2,so2,co\n"
            "2020-01-01,a,1,,,,,\n2020-01-01,a,2,,,,,\n"
        )
        with pytest.raises(ValueError, match="duplicate"):
            load_series(write(tmp_path / "x.csv", text), self._stations())

    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        t, n = 7, 2
        values = rng.normal(10.0, 3.0, size=(t, n, 6))
        valid = rng.random((t, n, 6)) > 0.4
        values = np.where(valid, values, 0.0)
        ts = (np.datetime64("2021-03-01") + np.arange(t)).astype("datetime64[D]")
        frame = SeriesFrame(ts, values, valid, ("a", "b"))
        p = tmp_path / "x.csv"
        write_series(frame, p)
        loaded = load_series(p, self._stations())
        assert np.array_equal(loaded.valid, frame.valid)
        assert np.array_equal(loaded.values, frame.values)
        assert np.array_equal(loaded.timestamps, frame.timestamps)


def toy_frame(t, n=2, base=7.0):
    values = np.full((t, n, 6), base)
    valid = np.ones_like(values, dtype=bool)
    ts = (np.datetime64("2020-01-01") + np.arange(t)).astype("datetime64[D]")
    return SeriesFrame(ts, values, valid, tuple(f"s{i}" for i in range(n)))


class TestFrameInvariants:
    def test_uneven_timestamps_rejected(self):
        ts = np.array(["2020-01-01", "2020-01-02", "2020-01-05"], dtype="datetime64[D]")
        with pytest.raises(ValueError, match="evenly spaced"):
            SeriesFrame(ts, np.zeros((3, 1, 6)), np.ones((3, 1, 6), bool), ("a",))

    def test_nonfinite_valid_value_rejected(self):
        frame_args = dict(
            timestamps=(np.datetime64("2020-01-01") + np.arange(2)).astype("datetime64[D]"),
            station_ids=("a",),
        )
        values = np.zeros((2, 1, 6))
        values[0, 0, 0] = np.inf
        valid = np.ones((2, 1, 6), dtype=bool)
        with pytest.raises(ValueError, match="finite"):
            SeriesFrame(values=values, valid=valid, **frame_args)
        # the same non-finite cell is fine when masked out
        valid[0, 0, 0] = False
        values2 = np.where(valid, values, 0.0)
        SeriesFrame(values=values2, valid=valid, **frame_args)


class TestChronoSplit:
    def test_exact_division(self):
        tr, va, te = chrono_split(toy_frame(100))
        assert (tr.n_steps, va.n_steps, te.n_steps) == (60, 20, 20)

    def test_remainder_to_test(self):
        tr, va, te = chrono_split(toy_frame(101))
        assert (tr.n_steps, va.n_steps, te.n_steps) == (60, 20, 21)

    def test_too_short(self):
        with pytest.raises(ValueError):
            chrono_split(toy_frame(10), min_len=44)

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            chrono_split(toy_frame(100), ratios=(0.5, 0.2, 0.2))

    def test_contiguous_partition(self):
        frame = toy_frame(50)
        frame.values[:, 0, 0] = np.arange(50)
        tr, va, te = chrono_split(frame)
        joined = np.concatenate([tr.values[:, 0, 0], va.values[:, 0, 0], te.values[:, 0, 0]])
        np.testing.assert_array_equal(joined, np.arange(50))


class TestWindows:
    def _stats(self, frame, stations=None):
        stations = stations or [StationMeta(f"s{i}", 0, i, np.zeros(6), 0) for i in range(frame.values.shape[1])]
        return compute_norm_stats(frame, stations)

    def test_window_count(self):
        assert window_count(60, 30, 14) == 17
        frame = toy_frame(60)
        stats = self._stats(frame)
        batches = list(make_windows(frame, 30, 14, stats, batch_size=5))
        assert sum(len(b.starts) for b in batches) == 17

    def test_constant_channel_normalizes_to_zero(self):
        frame = toy_frame(20, base=7.0)
        stats = self._stats(frame)
        batch = next(make_windows(frame, 5, 2, stats, batch_size=4))
        np.testing.assert_allclose(batch.inputs, 0.0, atol=1e-9)

    def test_fully_missing_station(self):
        frame = toy_frame(20)
        frame.valid[:, 1, :] = False
        frame.values[:, 1, :] = 0.0
        stats = self._stats(frame)
        batch = next(make_windows(frame, 5, 2, stats, batch_size=4))
        np.testing.assert_array_equal(batch.inputs[:, :, 1, :], 0.0)
        assert not batch.target_valid[:, :, 1, :].any()

    def test_imputation_keeps_masks(self):
        frame = toy_frame(15)
        frame.valid[3, 0, 2] = False
        stats = self._stats(frame)
        batch = next(make_windows(frame, 10, 2, stats, batch_size=1))
        assert batch.inputs[0, 3, 0, 2] == 0.0
        assert not batch.input_valid[0, 3, 0, 2]

    def test_targets_stay_raw(self):
        frame = toy_frame(20, base=42.0)
        stats = self._stats(frame)
        batch = next(make_windows(frame, 5, 3, stats, batch_size=2))
        np.testing.assert_array_equal(batch.targets, 42.0)

    def test_too_short(self):
        frame = toy_frame(10)
        stats = self._stats(frame)
        with pytest.raises(ValueError):
            next(make_windows(frame, 8, 4, stats, batch_size=1))

    def test_shuffle_is_permutation(self):
        frame = toy_frame(30)
        stats = self._stats(frame)
        rng = np.random.default_rng(0)
        batches = list(make_windows(frame, 5, 2, stats, 7, shuffle=True, rng=rng))
        starts = np.concatenate([b.starts for b in batches])
        assert sorted(starts) == list(range(window_count(30, 5, 2)))


class TestNormStats:
    def test_train_only_canary(self):
        # poisoning the other splits must not move training statistics
        frame = toy_frame(100)
        rng = np.random.default_rng(1)
        frame.values[:] = rng.normal(20.0, 5.0, size=frame.values.shape)
        stations = [StationMeta(f"s{i}", 0, i, np.zeros(6), 0) for i in range(2)]
        train, val, test = chrono_split(frame)
        stats_before = compute_norm_stats(train, stations)
        val.values[:] = 1e9
        test.values[:] = -1e9
        stats_after = compute_norm_stats(train, stations)
        np.testing.assert_array_equal(stats_before.channel_mean, stats_after.channel_mean)
        np.testing.assert_array_equal(stats_before.channel_std, stats_after.channel_std)

    def test_std_clamped(self):
        frame = toy_frame(10, base=3.0)
        stations = [StationMeta(f"s{i}", 0, i, np.zeros(6), 0) for i in range(2)]
        stats = compute_norm_stats(frame, stations)
        assert np.all(stats.channel_std >= 1e-6)

    def test_per_station_shapes(self):
        frame = toy_frame(10)
        stations = [StationMeta(f"s{i}", 0, i, np.zeros(6), 0) for i in range(2)]
        stats = compute_norm_stats(frame, stations, per_station=True)
        assert stats.channel_mean.shape == (2, 6)
        roundtrip = stats.denormalize(stats.normalize(frame.values))
        np.testing.assert_allclose(roundtrip, frame.values, atol=1e-9)

    def test_window_targets_never_cross_split(self):
        frame = toy_frame(100)
        frame.values[:, :, 0] = np.arange(100)[:, None]
        stations = [StationMeta(f"s{i}", 0, i, np.zeros(6), 0) for i in range(2)]
        train, val, test = chrono_split(frame)
        stats = compute_norm_stats(train, stations)
        for batch in make_windows(train, 10, 5, stats, 8):
            assert batch.targets[:, :, 0, 0].max() <= 59
