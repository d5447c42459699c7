"""Fitness scoring: information coefficient, long-short backtest, correlations.

The fitness of an alpha is its validation IC: the mean over validation days
of the cross-sectional sample Pearson correlation between that day's
predictions and realized returns. Days where either vector is constant or
non-finite contribute zero, keeping the day count fixed and penalising
constant predictors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .executor import INFER, TRAIN, ExecutionState, compile_program, execute_timestep, run_setup
from .program import AlphaProgram, SearchSpaceConfig

SENTINEL_IC = float("-inf")

CUTOFF_SIGNED = "signed"
CUTOFF_ABSOLUTE = "absolute"


class UndefinedSharpeError(ValueError):
    """Raised when the return series has zero variance."""


class CorrelationUndefinedError(ValueError):
    """Raised when either series has zero variance."""


@dataclass(frozen=True)
class BacktestConfig:
    top_n: int = 50
    risk_free: float = 0.0
    trading_days: int = 252
    cutoff: float = 0.15
    cutoff_mode: str = CUTOFF_SIGNED

    def __post_init__(self):
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if self.cutoff_mode not in (CUTOFF_SIGNED, CUTOFF_ABSOLUTE):
            raise ValueError(f"cutoff_mode must be '{CUTOFF_SIGNED}' or '{CUTOFF_ABSOLUTE}'")

    def check_universe(self, n_tasks: int):
        if 2 * self.top_n > n_tasks:
            raise ValueError(
                f"need at least {2 * self.top_n} tasks for top_n={self.top_n}, got {n_tasks}")


@dataclass(frozen=True)
class FitnessRecord:
    ic: float
    val_returns: np.ndarray
    test_ic: float | None = None
    test_returns: np.ndarray | None = None
    sentinel: bool = False
    nan_days: int = 0
    pruned_op_count: int = 0
    fingerprint: str = ""
    cache_hit: bool = False


def sentinel_record(nan_days: int = 0, pruned_op_count: int = 0,
                    fingerprint: str = "") -> FitnessRecord:
    """Worst-possible record: loses every tournament, carries no returns."""
    return FitnessRecord(ic=SENTINEL_IC, val_returns=np.empty(0), sentinel=True,
                         nan_days=nan_days, pruned_op_count=pruned_op_count,
                         fingerprint=fingerprint)


def daily_pearson(predictions: np.ndarray, labels: np.ndarray):
    """Per-day sample Pearson correlations plus the degenerate-day mask.

    A day is degenerate when either vector contains a non-finite value or
    has zero variance; such days get correlation 0.
    """
    predictions = np.asarray(predictions, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if predictions.shape != labels.shape:
        raise ValueError(f"shape mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.ndim != 2:
        raise ValueError("expected (days, tasks) arrays")
    n_days = predictions.shape[0]
    values = np.zeros(n_days)
    degenerate = np.zeros(n_days, dtype=bool)
    for t in range(n_days):
        p, y = predictions[t], labels[t]
        if not (np.isfinite(p).all() and np.isfinite(y).all()):
            degenerate[t] = True
            continue
        if np.all(p == p[0]) or np.all(y == y[0]):
            degenerate[t] = True
            continue
        pc, yc = p - p.mean(), y - y.mean()
        # rescale before the dot products so huge-but-finite predictions
        # cannot overflow; Pearson is scale invariant
        pc = pc / np.abs(pc).max()
        yc = yc / np.abs(yc).max()
        sp = math.sqrt(float(pc @ pc))
        sy = math.sqrt(float(yc @ yc))
        values[t] = float(pc @ yc) / (sp * sy)
    return values, degenerate


def compute_ic(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Mean per-day cross-sectional Pearson correlation (degenerate days count 0)."""
    values, _ = daily_pearson(predictions, labels)
    return float(values.mean())


def portfolio_returns(predictions: np.ndarray, realized: np.ndarray,
                      cfg: BacktestConfig) -> np.ndarray:
    """Daily dollar-neutral long-short returns.

    Each day longs the top_n tasks by predicted return and shorts the bottom
    top_n, equal weight within each leg and equal dollars per leg, so the
    day's return is half the spread between the legs' mean realized returns.
    Ties break by ascending task index.
    """
    predictions = np.asarray(predictions, dtype=float)
    realized = np.asarray(realized, dtype=float)
    if predictions.shape != realized.shape or predictions.ndim != 2:
        raise ValueError("predictions and realized returns must share (days, tasks) shape")
    n_days, n_tasks = predictions.shape
    cfg.check_universe(n_tasks)
    idx = np.arange(n_tasks)
    out = np.empty(n_days)
    for t in range(n_days):
        p = predictions[t]
        long_leg = np.lexsort((idx, -p))[: cfg.top_n]
        short_leg = np.lexsort((idx, p))[: cfg.top_n]
        out[t] = 0.5 * (realized[t, long_leg].mean() - realized[t, short_leg].mean())
    return out


def nav_series(returns: np.ndarray) -> np.ndarray:
    """Compounding net asset value, NAV_0 = 1."""
    return np.cumprod(1.0 + np.asarray(returns, dtype=float))


def sharpe_ratio(returns: np.ndarray, cfg: BacktestConfig = BacktestConfig()) -> float:
    """Annualized Sharpe ratio with sample (N-1) standard deviation."""
    returns = np.asarray(returns, dtype=float)
    if returns.size < 2:
        raise ValueError("need at least 2 returns")
    if np.all(returns == returns[0]):
        raise UndefinedSharpeError("zero return volatility")
    sd = float(returns.std(ddof=1))
    mean = float(returns.mean())
    return (mean * cfg.trading_days - cfg.risk_free) / (sd * math.sqrt(cfg.trading_days))


def return_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Sample Pearson correlation between two return series."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("need two equal-length series of at least 2 points")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise CorrelationUndefinedError("zero variance in a return series")
    ac, bc = a - a.mean(), b - b.mean()
    sa = math.sqrt(float(ac @ ac))
    sb = math.sqrt(float(bc @ bc))
    return float(ac @ bc) / (sa * sb)


def _infer_block(compiled, state, panel, day_range) -> np.ndarray:
    preds = np.empty((len(day_range), panel.n_tasks))
    for row, t in enumerate(day_range):
        preds[row] = execute_timestep(compiled, state, panel.features[:, t], stage=INFER)
    return preds


def train_and_score(program: AlphaProgram, panel, bt_cfg: BacktestConfig,
                    ss_cfg: SearchSpaceConfig | None = None, exec_seed: int = 0,
                    include_test: bool = False) -> FitnessRecord:
    """One-epoch training pass, then validation scoring.

    Expects an already pruned, valid program. Runs setup once, one
    chronological training pass, then inference over validation (and the
    test split when requested, continuing the same state). Any validation
    day with a non-finite prediction makes the record sentinel.
    """
    ss_cfg = ss_cfg or SearchSpaceConfig()
    state = ExecutionState(panel.n_tasks, ss_cfg, seed=exec_seed,
                           sector_ids=panel.sector_ids, industry_ids=panel.industry_ids)
    compiled = compile_program(program)
    run_setup(compiled, state)
    for t in panel.train_range:
        execute_timestep(compiled, state, panel.features[:, t],
                         labels=panel.labels[:, t], stage=TRAIN)

    val_preds = _infer_block(compiled, state, panel, panel.valid_range)
    bad_days = int((~np.isfinite(val_preds).all(axis=1)).sum())
    if bad_days:
        return sentinel_record(nan_days=bad_days)
    val_labels = panel.labels[:, panel.valid_range].T
    ic = compute_ic(val_preds, val_labels)
    returns = portfolio_returns(val_preds, val_labels, bt_cfg)
    record = FitnessRecord(ic=ic, val_returns=returns)

    if include_test:
        test_preds = _infer_block(compiled, state, panel, panel.test_range)
        if np.isfinite(test_preds).all():
            test_labels = panel.labels[:, panel.test_range].T
            record = FitnessRecord(
                ic=ic, val_returns=returns,
                test_ic=compute_ic(test_preds, test_labels),
                test_returns=portfolio_returns(test_preds, test_labels, bt_cfg))
    return record


def prediction_stream(program: AlphaProgram, panel,
                      ss_cfg: SearchSpaceConfig | None = None,
                      exec_seed: int = 0) -> np.ndarray:
    """Full (days, tasks) prediction matrix over train (training stage),
    validation, and test (inference stage), for equivalence checks."""
    ss_cfg = ss_cfg or SearchSpaceConfig()
    state = ExecutionState(panel.n_tasks, ss_cfg, seed=exec_seed,
                           sector_ids=panel.sector_ids, industry_ids=panel.industry_ids)
    compiled = compile_program(program)
    run_setup(compiled, state)
    preds = np.empty((panel.n_samples, panel.n_tasks))
    for t in panel.train_range:
        preds[t] = execute_timestep(compiled, state, panel.features[:, t],
                                    labels=panel.labels[:, t], stage=TRAIN)
    for t in list(panel.valid_range) + list(panel.test_range):
        preds[t] = execute_timestep(compiled, state, panel.features[:, t], stage=INFER)
    return preds
