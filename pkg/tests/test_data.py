import math
import statistics

import numpy as np
import pytest

from alphaforge.data import (FeatureSpec, SignalSpec, compute_features,
                             generate_synthetic_panel, load_csv_panel,
                             load_panel, make_labels, normalize_features,
                             save_panel, split_sizes, warmup_days)


# --- features -------------------------------------------------------------------

def test_ma5_of_arithmetic_sequence():
    closes = np.arange(1.0, 61.0)
    feats = compute_features(closes, closes, closes, closes, closes)
    assert feats[4, 0] == pytest.approx(3.0)  # MA5 at day 5 of 1..5
    assert np.isnan(feats[3, 0])              # warm-up day


def test_constant_closes_have_zero_volatility():
    closes = np.full(60, 7.0)
    feats = compute_features(closes, closes, closes, closes, closes)
    assert np.all(feats[29:, 4:8] == 0.0)


def test_feature_row_layout():
    spec = FeatureSpec()
    assert spec.row_names == ("ma_5", "ma_10", "ma_20", "ma_30",
                              "vol_5", "vol_10", "vol_20", "vol_30",
                              "open", "high", "low", "close", "volume")
    rng = np.random.default_rng(4)
    opens, highs, lows = rng.normal(size=(3, 60)) + 50
    closes = rng.normal(size=60) + 50
    volumes = rng.uniform(1e5, 1e6, 60)
    feats = compute_features(closes, opens, highs, lows, volumes)
    assert np.array_equal(feats[:, 8], opens)
    assert np.array_equal(feats[:, 9], highs)
    assert np.array_equal(feats[:, 10], lows)
    assert np.array_equal(feats[:, 11], closes)
    assert np.array_equal(feats[:, 12], volumes)


def test_features_match_rolling_oracle(rng):
    closes = rng.uniform(10, 100, 60)
    feats = compute_features(closes, closes, closes, closes, closes)
    for t in range(29, 60):
        for j, window in enumerate((5, 10, 20, 30)):
            lo = t - window + 1
            assert feats[t, j] == pytest.approx(
                statistics.mean(closes[lo:t + 1].tolist()), abs=1e-12)
            assert feats[t, 4 + j] == pytest.approx(
                statistics.stdev(closes[lo:t + 1].tolist()), abs=1e-12)


def test_features_are_causal(rng):
    """Raw features at day t never look past t (normalization aside)."""
    closes = rng.uniform(10, 100, 80)
    full = compute_features(closes, closes, closes, closes, closes)
    prefix = compute_features(closes[:60], closes[:60], closes[:60],
                              closes[:60], closes[:60])
    assert np.array_equal(full[29:60], prefix[29:60])


def test_features_require_enough_days():
    short = np.ones(20)
    with pytest.raises(ValueError):
        compute_features(short, short, short, short, short)


# --- labels ---------------------------------------------------------------------

def test_label_formula():
    assert make_labels(np.array([100.0, 110.0])) == pytest.approx([0.10])


def test_flat_closes_give_zero_labels():
    assert np.all(make_labels(np.full(10, 5.0)) == 0.0)


def test_labels_match_shift_oracle(rng):
    closes = rng.uniform(10, 100, 50)
    labels = make_labels(closes)
    assert labels.shape == (49,)
    for t in range(49):
        assert labels[t] == pytest.approx(
            (closes[t + 1] - closes[t]) / closes[t], abs=1e-12)


def test_zero_close_rejected():
    with pytest.raises(ValueError):
        make_labels(np.array([1.0, 0.0, 2.0]))


# --- normalization --------------------------------------------------------------

def test_normalization_by_max():
    days = np.array([[[2.0], [4.0], [8.0]]])  # (1 stock, 3 days, 1 feature)
    out = normalize_features(days)
    assert out[0, :, 0] == pytest.approx([0.25, 0.5, 1.0])


def test_zero_series_left_untouched():
    days = np.zeros((1, 5, 2))
    assert np.array_equal(normalize_features(days), days)


def test_unit_max_after_normalization(rng):
    days = rng.normal(size=(3, 40, 13)) * 100
    out = normalize_features(days)
    assert np.abs(out).max(axis=1) == pytest.approx(np.ones((3, 13)))


def test_train_only_mode_ignores_later_days(rng):
    days = rng.uniform(1.0, 2.0, size=(2, 30, 4))
    days[:, 25:] *= 100  # spike after the cutoff
    out = normalize_features(days, max_day=25)
    assert np.abs(out[:, :25]).max(axis=1) == pytest.approx(np.ones((2, 4)))
    assert np.abs(out[:, 25:]).max() > 1.0


# --- splits ---------------------------------------------------------------------

def test_split_ratio_at_reference_size():
    assert split_sizes(1220) == (988, 116, 116)


def test_split_ratio_rounds():
    n_train, n_valid, n_test = split_sizes(257)
    assert (n_train, n_valid, n_test) == (257 - 24 - 24, 24, 24)
    assert n_train + n_valid + n_test == 257


def test_split_too_small():
    with pytest.raises(ValueError):
        split_sizes(2)


# --- synthetic generator ---------------------------------------------------------

def test_synthetic_panel_deterministic():
    a = generate_synthetic_panel(k=6, t=70, seed=9)
    b = generate_synthetic_panel(k=6, t=70, seed=9)
    assert a.feature_days.tobytes() == b.feature_days.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    c = generate_synthetic_panel(k=6, t=70, seed=10)
    assert a.labels.tobytes() != c.labels.tobytes()


def test_synthetic_panel_shapes_and_splits():
    panel = generate_synthetic_panel(k=20, t=300, seed=1)
    warm = warmup_days()
    assert warm == 42
    assert panel.n_samples == 300 - warm - 1
    assert panel.features.shape == (20, panel.n_samples, 13, 13)
    assert np.isfinite(panel.features).all()
    assert (panel.n_train, panel.n_valid, panel.n_test) == split_sizes(panel.n_samples)
    assert max(panel.train_range) < min(panel.valid_range) <= max(panel.valid_range) < min(panel.test_range)


def test_synthetic_panel_group_round_robin():
    panel = generate_synthetic_panel(k=10, t=60, seed=2)
    assert panel.sector_ids.tolist() == [i % 4 for i in range(10)]
    assert panel.industry_ids.tolist() == [i % 8 for i in range(10)]


def test_synthetic_bounds_checked():
    with pytest.raises(ValueError):
        generate_synthetic_panel(k=3, t=100)
    with pytest.raises(ValueError):
        generate_synthetic_panel(k=5, t=50)


def test_planted_signal_measurable():
    panel = generate_synthetic_panel(k=12, t=120, seed=3,
                                     signal=SignalSpec(noise=0.0))
    planted = 0.02 * panel.features[:, :, 3, 12]
    assert np.allclose(panel.labels, planted)


def test_feature_window_is_chronological():
    panel = generate_synthetic_panel(k=4, t=80, seed=6)
    warm = warmup_days()
    # column 12 of sample t is day warm+t, column 0 is 12 days earlier
    assert np.array_equal(panel.features[:, 0, :, 12], panel.feature_days[:, warm])
    assert np.array_equal(panel.features[:, 0, :, 0], panel.feature_days[:, warm - 12])
    assert np.array_equal(panel.features[:, 5, :, 12], panel.feature_days[:, warm + 5])


# --- csv loading -----------------------------------------------------------------

def _write_csv(path, dates, base, scale=1.0, skip=()):
    lines = ["date,open,high,low,close,volume"]
    for i, date in enumerate(dates):
        if i in skip:
            continue
        close = base + math.sin(i / 3.0) * 2.0 + i * 0.01
        close *= scale
        lines.append(f"{date},{close * 0.99},{close * 1.02},{close * 0.97},{close},{1000 + i}")
    path.write_text("\n".join(lines) + "\n")


def _dates(n):
    import datetime
    day = datetime.date(2020, 1, 1)
    out = []
    while len(out) < n:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += datetime.timedelta(days=1)
    return out


def test_csv_panel_end_to_end(tmp_path):
    dates = _dates(60)
    csv_dir = tmp_path / "csv"
    csv_dir.mkdir()
    for name, base in (("AAA", 50.0), ("BBB", 30.0), ("CCC", 70.0)):
        _write_csv(csv_dir / f"{name}.csv", dates, base)
    groups = tmp_path / "groups.csv"
    groups.write_text("ticker,sector,industry\nAAA,tech,software\n"
                      "BBB,tech,hardware\nCCC,energy,oil\n")
    panel = load_csv_panel(sorted(csv_dir.glob("*.csv")), groups)
    assert panel.tickers == ["AAA", "BBB", "CCC"]
    assert panel.n_samples == 60 - 42 - 1

    # features equal the hand-built per-ticker pipeline
    import csv as csv_mod
    with open(csv_dir / "AAA.csv") as fh:
        rows = list(csv_mod.DictReader(fh))
    closes = np.array([float(r["close"]) for r in rows])
    expected = compute_features(closes, [float(r["open"]) for r in rows],
                                [float(r["high"]) for r in rows],
                                [float(r["low"]) for r in rows],
                                [float(r["volume"]) for r in rows])
    scale = np.nanmax(np.abs(expected), axis=0)
    assert np.allclose(panel.feature_days[0, 29:], expected[29:] / scale, atol=1e-12)

    # labels equal next-day returns
    assert panel.labels[0, 0] == pytest.approx((closes[43] - closes[42]) / closes[42])


def test_csv_filters_low_price_ticker(tmp_path):
    dates = _dates(60)
    csv_dir = tmp_path / "csv"
    csv_dir.mkdir()
    _write_csv(csv_dir / "GOOD.csv", dates, 50.0)
    _write_csv(csv_dir / "GD2.csv", dates, 40.0)
    _write_csv(csv_dir / "PENNY.csv", dates, 50.0, scale=0.01)
    groups = tmp_path / "groups.csv"
    groups.write_text("ticker,sector,industry\nGOOD,a,b\nGD2,a,c\nPENNY,a,b\n")
    panel = load_csv_panel(sorted(csv_dir.glob("*.csv")), groups)
    assert panel.tickers == ["GD2", "GOOD"]


def test_csv_filters_sparse_ticker(tmp_path):
    dates = _dates(60)
    csv_dir = tmp_path / "csv"
    csv_dir.mkdir()
    _write_csv(csv_dir / "FULL.csv", dates, 50.0)
    _write_csv(csv_dir / "FULL2.csv", dates, 60.0)
    _write_csv(csv_dir / "SPARSE.csv", dates, 40.0, skip=set(range(10, 14)))
    groups = tmp_path / "groups.csv"
    groups.write_text("ticker,sector,industry\nFULL,a,b\nFULL2,a,c\nSPARSE,a,b\n")
    panel = load_csv_panel(sorted(csv_dir.glob("*.csv")), groups)
    assert panel.tickers == ["FULL", "FULL2"]


def test_csv_missing_group_metadata(tmp_path):
    dates = _dates(60)
    _write_csv(tmp_path / "AAA.csv", dates, 50.0)
    groups = tmp_path / "groups.csv"
    groups.write_text("ticker,sector,industry\nZZZ,a,b\n")
    with pytest.raises(ValueError, match="missing group metadata"):
        load_csv_panel([tmp_path / "AAA.csv"], groups)


def test_csv_malformed_row(tmp_path):
    path = tmp_path / "BAD.csv"
    path.write_text("date,open,high,low,close,volume\n2020-01-01,1,2\n")
    groups = tmp_path / "groups.csv"
    groups.write_text("ticker,sector,industry\nBAD,a,b\n")
    with pytest.raises(ValueError, match="expected 6 fields"):
        load_csv_panel([path], groups)


def test_csv_too_few_days(tmp_path):
    dates = _dates(45)
    _write_csv(tmp_path / "AAA.csv", dates, 50.0)
    groups = tmp_path / "groups.csv"
    groups.write_text("ticker,sector,industry\nAAA,a,b\n")
    with pytest.raises(ValueError, match="warm-up"):
        load_csv_panel([tmp_path / "AAA.csv"], groups)


# --- panel persistence ------------------------------------------------------------

def test_panel_save_load_round_trip(tmp_path):
    panel = generate_synthetic_panel(k=5, t=70, seed=8,
                                     signal=SignalSpec(noise=0.01))
    path = tmp_path / "market.afp"
    save_panel(panel, path)
    loaded = load_panel(path)
    assert loaded.tickers == panel.tickers
    assert loaded.dates == panel.dates
    assert np.array_equal(loaded.feature_days, panel.feature_days, equal_nan=True)
    assert np.array_equal(loaded.labels, panel.labels)
    assert np.array_equal(loaded.features, panel.features)
    assert (loaded.n_train, loaded.n_valid, loaded.n_test) == (
        panel.n_train, panel.n_valid, panel.n_test)


def test_panel_save_is_deterministic(tmp_path):
    a, b = tmp_path / "a.afp", tmp_path / "b.afp"
    save_panel(generate_synthetic_panel(k=5, t=70, seed=8), a)
    save_panel(generate_synthetic_panel(k=5, t=70, seed=8), b)
    assert a.read_bytes() == b.read_bytes()


def test_panel_bad_magic(tmp_path):
    path = tmp_path / "bogus.afp"
    path.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(ValueError, match="bad header"):
        load_panel(path)
