"""Market panels: OHLCV ingestion, the 13-row feature stack, labels, splits,
and a synthetic generator for tests and demos.

A sample at date t is a 13x13 matrix: rows are close-price moving averages
over 5/10/20/30 days, close-price volatilities over the same windows, then
open, high, low, close, volume; columns are the 13 trailing days ending at
t (column 12 = today). The label at t is the next day's return.
"""
from __future__ import annotations

import csv
import datetime
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

NORMALIZE_ALL = "all"      # per-stock max over every time step (has lookahead)
NORMALIZE_TRAIN = "train"  # per-stock max over training days only

_PANEL_MAGIC = b"AFP1"


@dataclass(frozen=True)
class FeatureSpec:
    ma_windows: tuple[int, ...] = (5, 10, 20, 30)
    vol_windows: tuple[int, ...] = (5, 10, 20, 30)

    @property
    def row_names(self) -> tuple[str, ...]:
        return (tuple(f"ma_{w}" for w in self.ma_windows)
                + tuple(f"vol_{w}" for w in self.vol_windows)
                + ("open", "high", "low", "close", "volume"))

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    @property
    def max_window(self) -> int:
        return max(self.ma_windows + self.vol_windows)


@dataclass(frozen=True)
class SignalSpec:
    """Planted linear dependence of the label on one feature-matrix cell."""
    feature_row: int = 3
    feature_col: int = 12
    strength: float = 0.02
    noise: float = 0.0


def warmup_days(feature_cols: int = 13, spec: FeatureSpec = FeatureSpec()) -> int:
    # longest rolling window plus the sample window, dropped from the front
    return spec.max_window + feature_cols - 1


@dataclass
class MarketPanel:
    tickers: list[str]
    dates: list[str]                 # one per sample day
    feature_days: np.ndarray         # (K, n_days, n_features) normalized daily values
    labels: np.ndarray               # (K, n_samples) next-day returns
    sector_ids: np.ndarray
    industry_ids: np.ndarray
    n_train: int
    n_valid: int
    n_test: int
    window: int = 13

    def __post_init__(self):
        warm = self.feature_days.shape[1] - self.labels.shape[1] - 1
        # (K, n_samples, f, w): window ending on each sample day, zero-copy view
        view = np.lib.stride_tricks.sliding_window_view(
            self.feature_days, self.window, axis=1)
        start = warm - self.window + 1
        self.features = view[:, start:start + self.n_samples]

    @property
    def n_tasks(self) -> int:
        return len(self.tickers)

    @property
    def n_samples(self) -> int:
        return self.labels.shape[1]

    @property
    def train_range(self) -> range:
        return range(self.n_train)

    @property
    def valid_range(self) -> range:
        return range(self.n_train, self.n_train + self.n_valid)

    @property
    def test_range(self) -> range:
        return range(self.n_train + self.n_valid, self.n_samples)

    def split_range(self, name: str) -> range:
        return {"train": self.train_range, "valid": self.valid_range,
                "test": self.test_range}[name]


def _rolling(values: np.ndarray, window: int, reducer) -> np.ndarray:
    out = np.full(values.shape[-1], np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(values, window)
    out[window - 1:] = reducer(windows)
    return out


def compute_features(closes, opens, highs, lows, volumes,
                     spec: FeatureSpec = FeatureSpec()) -> np.ndarray:
    """Daily feature rows for one stock, shape (n_days, 13).

    Rows needing warm-up are NaN until their window fills; MA is the window
    mean of closes, VOL the sample standard deviation of closes.
    """
    closes = np.asarray(closes, dtype=float)
    n = closes.size
    if n < spec.max_window + spec.n_rows:
        raise ValueError(f"need at least {spec.max_window + spec.n_rows} days, got {n}")
    out = np.empty((n, spec.n_rows))
    col = 0
    for w in spec.ma_windows:
        out[:, col] = _rolling(closes, w, lambda v: v.mean(axis=-1))
        col += 1
    for w in spec.vol_windows:
        out[:, col] = _rolling(closes, w, lambda v: v.std(axis=-1, ddof=1))
        col += 1
    for series in (opens, highs, lows, closes, volumes):
        out[:, col] = np.asarray(series, dtype=float)
        col += 1
    return out


def make_labels(closes) -> np.ndarray:
    """Label at day t is the next day's return; the last day has none."""
    closes = np.asarray(closes, dtype=float)
    if closes.size < 2:
        raise ValueError("need at least 2 closes")
    if (closes == 0).any():
        raise ValueError("zero close price; filter such tickers upstream")
    return (closes[1:] - closes[:-1]) / closes[:-1]


def normalize_features(feature_days: np.ndarray, max_day: int | None = None) -> np.ndarray:
    """Scale each (stock, feature) series by its maximum absolute value.

    ``max_day`` limits the window the maximum is taken over (train-only
    mode); the default uses every day. All-zero series stay zero.
    """
    feature_days = np.asarray(feature_days, dtype=float)
    region = feature_days if max_day is None else feature_days[:, :max_day]
    with np.errstate(invalid="ignore"):
        scale = np.nanmax(np.abs(region), axis=1)  # (K, f)
    scale = np.where((scale == 0) | ~np.isfinite(scale), 1.0, scale)
    return feature_days / scale[:, None, :]


def split_sizes(n_samples: int) -> tuple[int, int, int]:
    """Chronological train/valid/test counts in 988:116:116 proportion."""
    n_valid = max(1, round(n_samples * 116 / 1220))
    n_test = max(1, round(n_samples * 116 / 1220))
    n_train = n_samples - n_valid - n_test
    if n_train < 1:
        raise ValueError(f"{n_samples} samples is too few to split")
    return n_train, n_valid, n_test


def _assemble_panel(tickers, dates, opens, highs, lows, closes, volumes,
                    sector_ids, industry_ids, spec: FeatureSpec = FeatureSpec(),
                    window: int = 13, normalization: str = NORMALIZE_ALL) -> MarketPanel:
    n_days = closes.shape[1]
    warm = warmup_days(window, spec)
    n_samples = n_days - warm - 1
    if n_samples < 3:
        raise ValueError(
            f"{n_days} days leaves {n_samples} samples after the {warm}-day "
            "warm-up; need at least 3")
    n_train, n_valid, n_test = split_sizes(n_samples)

    feature_days = np.stack([
        compute_features(closes[k], opens[k], highs[k], lows[k], volumes[k], spec)
        for k in range(len(tickers))])
    max_day = warm + n_train if normalization == NORMALIZE_TRAIN else None
    feature_days = normalize_features(feature_days, max_day)

    day_labels = np.stack([make_labels(closes[k]) for k in range(len(tickers))])
    labels = day_labels[:, warm:warm + n_samples]

    panel = MarketPanel(
        tickers=list(tickers), dates=[dates[warm + t] for t in range(n_samples)],
        feature_days=feature_days, labels=labels,
        sector_ids=np.asarray(sector_ids, dtype=int),
        industry_ids=np.asarray(industry_ids, dtype=int),
        n_train=n_train, n_valid=n_valid, n_test=n_test, window=window)
    sample_feats = panel.features
    if not np.isfinite(sample_feats).all():
        raise ValueError("non-finite feature values inside the sample range")
    return panel


def _business_dates(n: int, start=datetime.date(2013, 1, 2)) -> list[str]:
    dates = []
    d = start
    while len(dates) < n:
        if d.weekday() < 5:
            dates.append(d.isoformat())
        d += datetime.timedelta(days=1)
    return dates


def generate_synthetic_panel(k: int = 20, t: int = 300, signal: SignalSpec | None = None,
                             seed: int = 0, n_sectors: int = 4, n_industries: int = 8,
                             normalization: str = NORMALIZE_ALL) -> MarketPanel:
    """Geometric-random-walk market with optional planted label signal.

    With a SignalSpec, labels become strength * feature[row, col] (that cell
    of each sample's normalized matrix) plus Gaussian noise, so an alpha
    reading exactly that cell recovers the signal; with noise 0 its IC is 1.
    Groups are assigned round-robin; everything is deterministic per seed.
    """
    if k < 4:
        raise ValueError("need at least 4 stocks")
    if t < 60:
        raise ValueError("need at least 60 days")
    rng = np.random.default_rng(seed)
    base = rng.uniform(20.0, 80.0, k)
    steps = rng.normal(0.0002, 0.015, (k, t - 1))
    closes = np.empty((k, t))
    closes[:, 0] = base
    closes[:, 1:] = base[:, None] * np.exp(np.cumsum(steps, axis=1))

    gap = rng.normal(0.0, 0.004, (k, t))
    spread = np.abs(rng.normal(0.0, 0.006, (k, t)))
    opens = closes * (1.0 + gap)
    highs = np.maximum(opens, closes) * (1.0 + spread)
    lows = np.minimum(opens, closes) * (1.0 - spread)
    volumes = rng.lognormal(12.0, 0.4, (k, t))

    tickers = [f"SYN{i:03d}" for i in range(k)]
    sector_ids = np.arange(k) % n_sectors
    industry_ids = np.arange(k) % n_industries
    panel = _assemble_panel(tickers, _business_dates(t), opens, highs, lows,
                            closes, volumes, sector_ids, industry_ids,
                            normalization=normalization)

    if signal is not None:
        planted = signal.strength * panel.features[:, :, signal.feature_row,
                                                   signal.feature_col]
        noise = signal.noise * rng.normal(size=planted.shape)
        panel.labels = np.ascontiguousarray(planted + noise)
    return panel


def _read_ohlcv_csv(path: Path):
    dates, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["date", "open", "high", "low", "close", "volume"]:
            raise ValueError(f"{path}: expected header date,open,high,low,close,volume")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            try:
                values = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            dates.append(row[0])
            rows.append(values)
    if dates != sorted(dates):
        raise ValueError(f"{path}: dates must be ascending")
    return dates, np.asarray(rows)


def _read_group_metadata(path: Path) -> dict[str, tuple[str, str]]:
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["ticker", "sector", "industry"]:
            raise ValueError(f"{path}: expected header ticker,sector,industry")
        for row in reader:
            if len(row) != 3:
                raise ValueError(f"{path}: expected 3 fields, got {len(row)}")
            groups[row[0]] = (row[1], row[2])
    return groups


def load_csv_panel(paths, group_metadata_path, *, min_coverage: float = 0.98,
                   price_floor: float = 1.0, spec: FeatureSpec = FeatureSpec(),
                   window: int = 13, normalization: str = NORMALIZE_ALL) -> MarketPanel:
    """Build a panel from per-ticker OHLCV CSVs plus a group-metadata CSV.

    Tickers must cover at least ``min_coverage`` of the union trading
    calendar and never close below ``price_floor``; missing days for
    retained tickers carry the previous close forward with zero volume.
    """
    per_ticker = {}
    for path in sorted(Path(p) for p in paths):
        ticker = path.stem
        per_ticker[ticker] = _read_ohlcv_csv(path)
    if not per_ticker:
        raise ValueError("no input CSV files")

    calendar = sorted({d for dates, _ in per_ticker.values() for d in dates})
    retained = []
    for ticker, (dates, values) in sorted(per_ticker.items()):
        if len(dates) / len(calendar) < min_coverage:
            continue
        if values[:, 3].min() < price_floor:
            continue
        retained.append(ticker)
    if not retained:
        raise ValueError("no tickers survive coverage/price filtering")

    groups = _read_group_metadata(Path(group_metadata_path))
    for ticker in retained:
        if ticker not in groups:
            raise ValueError(f"missing group metadata for retained ticker {ticker}")

    k, n = len(retained), len(calendar)
    arrays = {name: np.empty((k, n)) for name in ("open", "high", "low", "close", "volume")}
    for ki, ticker in enumerate(retained):
        dates, values = per_ticker[ticker]
        index = {d: i for i, d in enumerate(dates)}
        prev = values[0]
        for di, day in enumerate(calendar):
            if day in index:
                prev = values[index[day]]
                row = prev
            else:
                row = np.array([prev[3], prev[3], prev[3], prev[3], 0.0])
            arrays["open"][ki, di], arrays["high"][ki, di] = row[0], row[1]
            arrays["low"][ki, di], arrays["close"][ki, di] = row[2], row[3]
            arrays["volume"][ki, di] = row[4]

    sector_names = sorted({groups[t][0] for t in retained})
    industry_names = sorted({groups[t][1] for t in retained})
    sector_ids = np.array([sector_names.index(groups[t][0]) for t in retained])
    industry_ids = np.array([industry_names.index(groups[t][1]) for t in retained])

    return _assemble_panel(retained, calendar, arrays["open"], arrays["high"],
                           arrays["low"], arrays["close"], arrays["volume"],
                           sector_ids, industry_ids, spec=spec, window=window,
                           normalization=normalization)


def save_panel(panel: MarketPanel, path) -> None:
    header = {
        "tickers": panel.tickers,
        "dates": panel.dates,
        "sector_ids": panel.sector_ids.tolist(),
        "industry_ids": panel.industry_ids.tolist(),
        "n_train": panel.n_train, "n_valid": panel.n_valid, "n_test": panel.n_test,
        "window": panel.window,
        "feature_days_shape": list(panel.feature_days.shape),
        "labels_shape": list(panel.labels.shape),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_PANEL_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(panel.feature_days, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(panel.labels, dtype="<f8").tobytes())


def load_panel(path) -> MarketPanel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _PANEL_MAGIC:
            raise ValueError(f"not a panel file (bad header {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ValueError(f"unsupported panel version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(blob_len))
        fshape = tuple(header["feature_days_shape"])
        lshape = tuple(header["labels_shape"])
        feature_days = np.frombuffer(
            fh.read(8 * int(np.prod(fshape))), dtype="<f8").reshape(fshape).copy()
        labels = np.frombuffer(
            fh.read(8 * int(np.prod(lshape))), dtype="<f8").reshape(lshape).copy()
    return MarketPanel(
        tickers=header["tickers"], dates=header["dates"],
        feature_days=feature_days, labels=labels,
        sector_ids=np.asarray(header["sector_ids"], dtype=int),
        industry_ids=np.asarray(header["industry_ids"], dtype=int),
        n_train=header["n_train"], n_valid=header["n_valid"],
        n_test=header["n_test"], window=header["window"])
