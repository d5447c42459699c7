"""Evolutionary mining of register-program trading alphas."""

from .data import (FeatureSpec, MarketPanel, SignalSpec, generate_synthetic_panel,
                   load_csv_panel, load_panel, save_panel)
from .evaluation import (BacktestConfig, FitnessRecord, compute_ic, nav_series,
                         portfolio_returns, return_correlation, sharpe_ratio,
                         train_and_score)
from .evolution import (AlphaArchive, EvolutionConfig, NoViableAlphaError,
                        Population, evolve_round, mutate, run_rounds,
                        tournament_select)
from .executor import (ExecutionState, compile_program, cross_sectional_rank,
                       execute_timestep, group_demean, run_setup)
from .program import (AlphaProgram, Instruction, Register, SearchSpaceConfig,
                      random_program, validate_program)
from .pruning import (FitnessCache, fingerprint, is_redundant_alpha,
                      lookup_or_evaluate, prune_redundant_ops)
from .text_format import AlphaSyntaxError, parse_alpha_text, serialize_alpha_text

__version__ = "0.1.0"
