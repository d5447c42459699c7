"""Command-line entry point.

Subcommands: ``synth`` (emit a synthetic panel), ``data prepare`` (CSVs to a
panel cache), ``mine`` (rounds of evolution, archive manifest + trajectory
CSVs), ``evaluate`` (score one alpha file), ``backtest`` (NAV/returns CSV),
``prune`` (pruned listing, removed ops, fingerprint).

Every flag has a ``key = value`` config-file equivalent (flags win), the
effective configuration is echoed into each output directory, and
ALPHAFORGE_SEED serves as a seed fallback. Exit codes: 0 success, 1 bad
input or data, 2 usage error, 3 no viable alpha.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .data import (NORMALIZE_ALL, NORMALIZE_TRAIN, SignalSpec,
                   generate_synthetic_panel, load_csv_panel, load_panel,
                   save_panel)
from .evaluation import (BacktestConfig, CorrelationUndefinedError,
                         UndefinedSharpeError, nav_series, return_correlation,
                         sharpe_ratio, train_and_score)
from .evolution import (AlphaArchive, EvolutionConfig, NoViableAlphaError,
                        run_rounds)
from .program import SearchSpaceConfig, validate_program
from .pruning import (FitnessCache, fingerprint, is_redundant_alpha,
                      load_cache, prune_redundant_ops, save_cache)
from .text_format import (AlphaSyntaxError, parse_alpha_text,
                          serialize_alpha_text, serialize_instruction)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_NO_VIABLE_ALPHA = 3


@dataclass
class RunConfig:
    """Flat bag of every tunable; defaults match the mining setup defaults."""
    population_size: int = 100
    tournament_size: int = 10
    mutation_prob: float = 0.9
    budget: int = 20000
    seed: int = 0
    rounds: int = 1
    workers: int = 1
    top_n: int = 50
    risk_free: float = 0.0
    trading_days: int = 252
    cutoff: float = 0.15
    cutoff_mode: str = "signed"
    n_scalars: int = 10
    n_vectors: int = 16
    n_matrices: int = 4
    min_ops: int = 1
    max_ops_setup: int = 21
    max_ops_predict: int = 21
    max_ops_update: int = 45
    feature_rows: int = 13
    feature_cols: int = 13
    normalization: str = NORMALIZE_ALL
    min_coverage: float = 0.98
    price_floor: float = 1.0

    def search_space(self) -> SearchSpaceConfig:
        return SearchSpaceConfig(
            n_scalars=self.n_scalars, n_vectors=self.n_vectors,
            n_matrices=self.n_matrices, min_ops=self.min_ops,
            max_ops_setup=self.max_ops_setup, max_ops_predict=self.max_ops_predict,
            max_ops_update=self.max_ops_update, feature_rows=self.feature_rows,
            feature_cols=self.feature_cols)

    def backtest(self) -> BacktestConfig:
        return BacktestConfig(top_n=self.top_n, risk_free=self.risk_free,
                              trading_days=self.trading_days, cutoff=self.cutoff,
                              cutoff_mode=self.cutoff_mode)

    def evolution(self) -> EvolutionConfig:
        return EvolutionConfig(population_size=self.population_size,
                               tournament_size=self.tournament_size,
                               mutation_prob=self.mutation_prob,
                               budget=self.budget, seed=self.seed)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def load_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def build_run_config(args) -> RunConfig:
    config = RunConfig()
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    for key, raw in file_values.items():
        if key not in _FIELD_TYPES:
            raise ValueError(f"unknown config key {key!r}")
        kind = _FIELD_TYPES[key]
        caster = {"int": int, "float": float, "str": str}[kind if isinstance(kind, str) else kind.__name__]
        setattr(config, key, caster(raw))
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            setattr(config, key, flag)
    if getattr(args, "seed", None) is None and "seed" not in file_values:
        env_seed = os.environ.get("ALPHAFORGE_SEED")
        if env_seed is not None:
            config.seed = int(env_seed)
    return config


def echo_config(config: RunConfig, out_dir: Path) -> None:
    lines = [f"{f.name} = {getattr(config, f.name)}" for f in fields(RunConfig)]
    (out_dir / "config.txt").write_text("\n".join(lines) + "\n")


def _add_config_flags(parser: argparse.ArgumentParser, keys) -> None:
    parser.add_argument("--config", help="key = value configuration file")
    for key in keys:
        kind = _FIELD_TYPES[key]
        name = kind if isinstance(kind, str) else kind.__name__
        caster = {"int": int, "float": float, "str": str}[name]
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, type=caster,
                            default=None)


_SEARCH_KEYS = ("n_scalars", "n_vectors", "n_matrices", "min_ops", "max_ops_setup",
                "max_ops_predict", "max_ops_update", "feature_rows", "feature_cols")
_BT_KEYS = ("top_n", "risk_free", "trading_days", "cutoff", "cutoff_mode")
_EV_KEYS = ("population_size", "tournament_size", "mutation_prob", "budget",
            "seed", "rounds", "workers")


def _read_alpha(path: str, ss_cfg: SearchSpaceConfig):
    text = Path(path).read_text()
    program = parse_alpha_text(text, ss_cfg)
    report = validate_program(program, ss_cfg)
    if not report.ok:
        raise ValueError(f"{path} is not a valid alpha:\n{report}")
    return program


def _cmd_synth(args) -> int:
    config = build_run_config(args)
    signal = None
    if args.signal_strength is not None:
        signal = SignalSpec(feature_row=args.signal_row, feature_col=args.signal_col,
                            strength=args.signal_strength, noise=args.signal_noise)
    panel = generate_synthetic_panel(k=args.stocks, t=args.days, signal=signal,
                                     seed=config.seed,
                                     normalization=config.normalization)
    save_panel(panel, args.out)
    print(f"wrote {args.out}: {panel.n_tasks} stocks, {panel.n_samples} samples "
          f"({panel.n_train}/{panel.n_valid}/{panel.n_test})")
    return EXIT_OK


def _cmd_data_prepare(args) -> int:
    config = build_run_config(args)
    paths = sorted(Path(args.csv_dir).glob("*.csv"))
    panel = load_csv_panel(paths, args.groups, min_coverage=config.min_coverage,
                           price_floor=config.price_floor,
                           normalization=config.normalization)
    save_panel(panel, args.out)
    print(f"wrote {args.out}: {panel.n_tasks} stocks, {panel.n_samples} samples "
          f"({panel.n_train}/{panel.n_valid}/{panel.n_test})")
    return EXIT_OK


def _write_trajectory(out_dir: Path, round_id: int, seed_index: int, rows) -> None:
    path = out_dir / f"trajectory_round_{round_id}_seed_{seed_index}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "candidates_evaluated", "cache_hits",
                         "best_ic", "best_sharpe"])
        for row in rows:
            writer.writerow([row.iteration, row.candidates_evaluated, row.cache_hits,
                             f"{row.best_ic:.17g}", f"{row.best_sharpe:.17g}"])


def _write_manifest(out_dir: Path, archive: AlphaArchive) -> None:
    rows = []
    for i, entry in enumerate(archive.entries):
        name = f"alpha_round_{entry.round_id}"
        (out_dir / f"{name}.alpha").write_text(serialize_alpha_text(entry.program))
        with open(out_dir / f"{name}.returns.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["day", "portfolio_return"])
            for day, value in enumerate(entry.returns):
                writer.writerow([day, f"{value:.17g}"])
        max_corr = "NA"
        if i > 0:
            corrs = []
            for earlier in archive.entries[:i]:
                try:
                    corrs.append(return_correlation(entry.returns, earlier.returns))
                except CorrelationUndefinedError:
                    continue
            if corrs:
                max_corr = f"{max(corrs):.17g}"
        rows.append([name, f"{entry.ic:.17g}", f"{entry.sharpe:.17g}", max_corr])
    with open(out_dir / "archive.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "ic", "sharpe", "max_corr_with_archive"])
        writer.writerows(rows)


def _cmd_mine(args) -> int:
    config = build_run_config(args)
    panel = load_panel(args.data)
    ss_cfg = config.search_space()
    bt_cfg = config.backtest()
    bt_cfg.check_universe(panel.n_tasks)
    seeds = [_read_alpha(p, ss_cfg) for p in args.alpha] if args.alpha else [None]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(config, out_dir)

    cache = load_cache(args.cache) if args.cache and Path(args.cache).exists() else FitnessCache()
    archive = run_rounds(
        seeds, panel, config.evolution(), bt_cfg, ss_cfg, rounds=config.rounds,
        cache=cache, workers=config.workers,
        archive_seeds_final_round=args.archive_seeds_final_round,
        trajectory_hook=lambda r, s, rows: _write_trajectory(out_dir, r, s, rows))
    _write_manifest(out_dir, archive)
    if args.cache:
        save_cache(cache, args.cache)
    for entry in archive.entries:
        print(f"round {entry.round_id}: ic={entry.ic:.6f} sharpe={entry.sharpe:.6f}")
    print(f"archive of {len(archive)} alphas written to {out_dir}")
    return EXIT_OK


def _score_alpha(args, include_test: bool):
    config = build_run_config(args)
    panel = load_panel(args.data)
    ss_cfg = config.search_space()
    bt_cfg = config.backtest()
    bt_cfg.check_universe(panel.n_tasks)
    program = _read_alpha(args.alpha, ss_cfg)
    pruned, _ = prune_redundant_ops(program)
    if is_redundant_alpha(program):
        return config, panel, None
    record = train_and_score(pruned, panel, bt_cfg, ss_cfg, include_test=include_test)
    return config, panel, record


def _split_metrics(record, split: str):
    if split == "valid":
        return record.ic, record.val_returns
    return record.test_ic, record.test_returns


def _cmd_evaluate(args) -> int:
    config, _, record = _score_alpha(args, include_test=args.split == "test")
    if record is None or record.sentinel:
        print("sentinel = true")
        print("ic = nan")
        print("sharpe = nan")
        return EXIT_OK
    ic, returns = _split_metrics(record, args.split)
    if ic is None:
        print("sentinel = true  # non-finite predictions on the test split")
        return EXIT_OK
    try:
        sharpe = f"{sharpe_ratio(returns, config.backtest()):.6f}"
    except UndefinedSharpeError:
        sharpe = "nan"
    print(f"split = {args.split}")
    print(f"ic = {ic:.6f}")
    print(f"sharpe = {sharpe}")
    return EXIT_OK


def _cmd_backtest(args) -> int:
    config, panel, record = _score_alpha(args, include_test=args.split == "test")
    if record is None or record.sentinel:
        print("sentinel alpha: no backtest written", file=sys.stderr)
        return EXIT_ERROR
    ic, returns = _split_metrics(record, args.split)
    if ic is None:
        print("non-finite predictions on the test split", file=sys.stderr)
        return EXIT_ERROR
    nav = nav_series(returns)
    dates = [panel.dates[t] for t in panel.split_range(args.split)]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "portfolio_return", "nav"])
        for date, ret, value in zip(dates, returns, nav):
            writer.writerow([date, f"{ret:.17g}", f"{value:.17g}"])
    try:
        sharpe = sharpe_ratio(returns, config.backtest())
    except UndefinedSharpeError:
        sharpe = float("nan")
    summary = {"ic": ic, "sharpe": sharpe, "n_days": len(returns),
               "nan_days": record.nan_days}
    summary_path = Path(args.out).with_suffix(".summary.json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {args.out} and {summary_path}")
    return EXIT_OK


def _cmd_prune(args) -> int:
    config = build_run_config(args)
    ss_cfg = config.search_space()
    program = _read_alpha(args.alpha, ss_cfg)
    pruned, removed = prune_redundant_ops(program)
    sys.stdout.write(serialize_alpha_text(pruned))
    removed_text = " ".join(f"{comp}[{idx}]" for comp, idx in removed) or "none"
    print(f"removed = {removed_text}")
    print(f"redundant_alpha = {str(is_redundant_alpha(program)).lower()}")
    print(f"fingerprint = {fingerprint(pruned).hex()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="alphaforge",
                                     description="evolutionary alpha mining")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic market panel")
    p.add_argument("--out", required=True)
    p.add_argument("--stocks", type=int, default=20)
    p.add_argument("--days", type=int, default=300)
    p.add_argument("--signal-strength", type=float, default=None)
    p.add_argument("--signal-noise", type=float, default=0.0)
    p.add_argument("--signal-row", type=int, default=3)
    p.add_argument("--signal-col", type=int, default=12)
    _add_config_flags(p, ("seed", "normalization"))
    p.set_defaults(func=_cmd_synth)

    data = sub.add_parser("data", help="data pipeline commands")
    data_sub = data.add_subparsers(dest="data_command", required=True)
    p = data_sub.add_parser("prepare", help="build a panel cache from OHLCV CSVs")
    p.add_argument("--csv-dir", required=True)
    p.add_argument("--groups", required=True, help="ticker,sector,industry CSV")
    p.add_argument("--out", required=True)
    _add_config_flags(p, ("min_coverage", "price_floor", "normalization"))
    p.set_defaults(func=_cmd_data_prepare)

    p = sub.add_parser("mine", help="run mining rounds and write the archive")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", action="append", default=[],
                   help="seed alpha file (repeatable)")
    p.add_argument("--cache", help="fitness cache file to reuse/update")
    p.add_argument("--archive-seeds-final-round", action="store_true")
    _add_config_flags(p, _EV_KEYS + _BT_KEYS + _SEARCH_KEYS)
    p.set_defaults(func=_cmd_mine)

    for name, func in (("evaluate", _cmd_evaluate), ("backtest", _cmd_backtest)):
        p = sub.add_parser(name, help=f"{name} one alpha file on a split")
        p.add_argument("--alpha", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--split", choices=("valid", "test"), default="valid")
        if name == "backtest":
            p.add_argument("--out", required=True)
        _add_config_flags(p, _BT_KEYS + _SEARCH_KEYS)
        p.set_defaults(func=func)

    p = sub.add_parser("prune", help="print the pruned form of an alpha")
    p.add_argument("--alpha", required=True)
    _add_config_flags(p, _SEARCH_KEYS)
    p.set_defaults(func=_cmd_prune)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NoViableAlphaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_VIABLE_ALPHA
    except (AlphaSyntaxError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
