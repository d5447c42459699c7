"""Aging-tournament evolution with correlation-cutoff filtering.

The population is a fixed-size ring: every insertion evicts the oldest
member regardless of fitness. Parents come from uniform tournaments, and a
child is one of three edits of its parent: per-instruction randomization,
a random insertion, or a random removal. Candidates whose validation
portfolio returns correlate with an archived alpha above the cutoff keep
their cached true record but compete with sentinel fitness.
"""
from __future__ import annotations

from collections import deque
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace

import numpy as np

from .evaluation import (CUTOFF_ABSOLUTE, SENTINEL_IC, BacktestConfig,
                         CorrelationUndefinedError, FitnessRecord,
                         UndefinedSharpeError, return_correlation, sharpe_ratio,
                         train_and_score)
from .ops import CATALOG, COMPONENTS, PREDICT, SETUP, UPDATE
from .program import (AlphaProgram, Instruction, Register, SearchSpaceConfig,
                      random_input_register, random_instruction, random_program,
                      validate_program, _random_immediate)
from .pruning import FitnessCache


class NoViableAlphaError(RuntimeError):
    """Raised when a round ends with nothing but sentinel-fitness candidates."""


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 100
    tournament_size: int = 10
    mutation_prob: float = 0.9
    budget: int = 20000
    seed: int = 0

    def __post_init__(self):
        if self.tournament_size > self.population_size:
            raise ValueError("tournament_size must not exceed population_size")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")


# ---------------------------------------------------------------------------
# mutation

def _mutate_operand(ins: Instruction, component: str, cfg: SearchSpaceConfig,
                    rng: np.random.Generator) -> Instruction:
    spec = CATALOG[ins.opcode]
    n_slots = len(ins.inputs) + 1 + len(ins.immediates)
    slot = int(rng.integers(n_slots))
    if slot < len(ins.inputs):
        new_reg = random_input_register(spec.in_banks[slot], component, cfg, rng)
        inputs = ins.inputs[:slot] + (new_reg,) + ins.inputs[slot + 1:]
        return Instruction(ins.opcode, ins.out, inputs, ins.immediates)
    if slot == len(ins.inputs):
        out = Register(spec.out_bank, int(rng.integers(cfg.bank_size(spec.out_bank))))
        return Instruction(ins.opcode, out, ins.inputs, ins.immediates)
    imm_slot = slot - len(ins.inputs) - 1
    value = _random_immediate(spec.imms[imm_slot], cfg, rng)
    imms = ins.immediates[:imm_slot] + (value,) + ins.immediates[imm_slot + 1:]
    return Instruction(ins.opcode, ins.out, ins.inputs, imms)


def _mutate_opcode(ins: Instruction, component: str, cfg: SearchSpaceConfig,
                   rng: np.random.Generator) -> Instruction:
    fresh = random_instruction(component, cfg, rng)
    spec = CATALOG[fresh.opcode]
    out = ins.out if ins.out.bank is spec.out_bank else fresh.out
    return Instruction(fresh.opcode, out, fresh.inputs, fresh.immediates)


def _randomize(parent: AlphaProgram, cfg: SearchSpaceConfig, prob: float,
               rng: np.random.Generator) -> AlphaProgram:
    parts = {}
    for comp in COMPONENTS:
        instrs = []
        for ins in parent.component(comp):
            if rng.random() < prob:
                if rng.integers(2) == 0:
                    ins = _mutate_operand(ins, comp, cfg, rng)
                else:
                    ins = _mutate_opcode(ins, comp, cfg, rng)
            instrs.append(ins)
        parts[comp] = tuple(instrs)
    return AlphaProgram(parts[SETUP], parts[PREDICT], parts[UPDATE])


def _insert(parent: AlphaProgram, cfg: SearchSpaceConfig,
            rng: np.random.Generator) -> AlphaProgram | None:
    comp = COMPONENTS[int(rng.integers(3))]
    instrs = list(parent.component(comp))
    if len(instrs) >= cfg.max_ops(comp):
        return None
    pos = int(rng.integers(len(instrs) + 1))
    instrs.insert(pos, random_instruction(comp, cfg, rng))
    return parent.with_component(comp, instrs)


def _remove(parent: AlphaProgram, cfg: SearchSpaceConfig,
            rng: np.random.Generator) -> AlphaProgram | None:
    comp = COMPONENTS[int(rng.integers(3))]
    instrs = list(parent.component(comp))
    if len(instrs) <= cfg.min_ops:
        return None
    del instrs[int(rng.integers(len(instrs)))]
    return parent.with_component(comp, instrs)


def mutate(parent: AlphaProgram, ev_cfg: EvolutionConfig, ss_cfg: SearchSpaceConfig,
           rng: np.random.Generator, max_retries: int = 100) -> AlphaProgram:
    """Produce a valid child: randomize operands/opcodes, insert, or remove.

    Candidates that violate size bounds or validity are resampled; after
    ``max_retries`` failures the parent itself is returned.
    """
    for _ in range(max_retries):
        kind = int(rng.integers(3))
        if kind == 0:
            child = _randomize(parent, ss_cfg, ev_cfg.mutation_prob, rng)
        elif kind == 1:
            child = _insert(parent, ss_cfg, rng)
        else:
            child = _remove(parent, ss_cfg, rng)
        if child is None:
            continue
        if validate_program(child, ss_cfg).ok:
            return child
    return parent


# ---------------------------------------------------------------------------
# population

@dataclass
class PopulationEntry:
    program: AlphaProgram
    record: FitnessRecord
    birth: int


class Population:
    """Fixed-capacity ring; insertion evicts the smallest birth ordinal."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: deque[PopulationEntry] = deque()
        self._births = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    @property
    def full(self) -> bool:
        return len(self._entries) >= self.capacity

    def insert(self, program: AlphaProgram, record: FitnessRecord) -> PopulationEntry | None:
        entry = PopulationEntry(program, record, self._births)
        self._births += 1
        evicted = None
        if self.full:
            evicted = self._entries.popleft()
        self._entries.append(entry)
        return evicted

    def best(self) -> PopulationEntry | None:
        viable = [e for e in self._entries if not e.record.sentinel]
        if not viable:
            return None
        return max(viable, key=lambda e: (e.record.ic, -e.birth))

    def entries(self) -> list[PopulationEntry]:
        return list(self._entries)


def tournament_select(population: Population, cfg: EvolutionConfig,
                      rng: np.random.Generator) -> AlphaProgram:
    """Best-IC member of a uniform sample without replacement (ties -> oldest)."""
    entries = population.entries()
    picks = rng.choice(len(entries), size=cfg.tournament_size, replace=False)
    chosen = max((entries[i] for i in picks), key=lambda e: (e.record.ic, -e.birth))
    return chosen.program


# ---------------------------------------------------------------------------
# archive and rounds

@dataclass
class ArchiveEntry:
    program: AlphaProgram
    returns: np.ndarray
    round_id: int
    ic: float
    sharpe: float


@dataclass
class AlphaArchive:
    """Accepted weakly correlated alphas with their validation return series."""

    entries: list[ArchiveEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def violates(self, returns: np.ndarray, cfg: BacktestConfig) -> bool:
        """Does this return series correlate above the cutoff with any member?

        Signed mode compares the correlation itself (negative correlation
        always passes); absolute mode compares |correlation|. Undefined
        correlations (a constant series) never count as violations.
        """
        for entry in self.entries:
            try:
                corr = return_correlation(returns, entry.returns)
            except CorrelationUndefinedError:
                continue
            value = abs(corr) if cfg.cutoff_mode == CUTOFF_ABSOLUTE else corr
            if value > cfg.cutoff:
                return True
        return False

    def add(self, program: AlphaProgram, returns: np.ndarray, round_id: int,
            ic: float, sharpe: float) -> ArchiveEntry:
        entry = ArchiveEntry(program, np.asarray(returns, dtype=float),
                             round_id, ic, sharpe)
        self.entries.append(entry)
        return entry


@dataclass
class TrajectoryRow:
    iteration: int
    candidates_evaluated: int
    cache_hits: int
    best_ic: float
    best_sharpe: float


@dataclass
class RoundResult:
    best: AlphaProgram
    record: FitnessRecord
    trajectory: list[TrajectoryRow]


def _safe_sharpe(returns, bt_cfg) -> float:
    try:
        return sharpe_ratio(returns, bt_cfg)
    except (UndefinedSharpeError, ValueError):
        return float("nan")


def evolve_round(seed_alpha: AlphaProgram | None, panel, archive: AlphaArchive,
                 ev_cfg: EvolutionConfig, bt_cfg: BacktestConfig,
                 ss_cfg: SearchSpaceConfig, cache: FitnessCache | None = None,
                 rng: np.random.Generator | None = None, workers: int = 1,
                 evaluator=None, iteration_hook=None) -> RoundResult:
    """One evolutionary round under a candidate-count budget.

    The population starts from ``population_size`` mutations of the seed
    alpha (random programs when seedless); every candidate goes through the
    fitness cache, then archive-correlated candidates are demoted to
    sentinel fitness. Returns the best non-sentinel member of the final
    population plus a best-so-far trajectory.
    """
    if ev_cfg.budget < ev_cfg.population_size:
        raise ValueError("budget must cover the initial population")
    cache = cache if cache is not None else FitnessCache()
    rng = rng if rng is not None else np.random.default_rng(ev_cfg.seed)
    if evaluator is None:
        def evaluator(pruned):
            return train_and_score(pruned, panel, bt_cfg, ss_cfg)

    hits_base = cache.hits
    lookups_base = cache.lookups

    def score(program: AlphaProgram) -> FitnessRecord:
        record = cache.lookup_or_evaluate(program, evaluator)
        if not record.sentinel and archive.violates(record.val_returns, bt_cfg):
            record = replace(record, ic=SENTINEL_IC, sentinel=True)
        return record

    population = Population(ev_cfg.population_size)
    trajectory: list[TrajectoryRow] = []
    best_ic = SENTINEL_IC
    best_sharpe = float("nan")

    def note_progress(iteration: int, record: FitnessRecord):
        nonlocal best_ic, best_sharpe
        if not record.sentinel and record.ic > best_ic:
            best_ic = record.ic
            best_sharpe = _safe_sharpe(record.val_returns, bt_cfg)
        trajectory.append(TrajectoryRow(
            iteration, cache.lookups - lookups_base, cache.hits - hits_base,
            best_ic, best_sharpe))

    def spawn() -> AlphaProgram:
        if seed_alpha is None:
            return random_program(ss_cfg, rng)
        return mutate(seed_alpha, ev_cfg, ss_cfg, rng)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        initial = [spawn() for _ in range(ev_cfg.population_size)]
        if pool is None:
            records = [score(p) for p in initial]
        else:
            records = list(pool.map(score, initial))
        for program, record in zip(initial, records):
            population.insert(program, record)
        note_progress(0, max(records, key=lambda r: r.ic))

        consumed = ev_cfg.population_size
        iteration = 0
        if pool is None:
            while consumed < ev_cfg.budget:
                child = mutate(tournament_select(population, ev_cfg, rng), ev_cfg, ss_cfg, rng)
                record = score(child)
                evicted = population.insert(child, record)
                consumed += 1
                iteration += 1
                note_progress(iteration, record)
                if iteration_hook is not None:
                    iteration_hook(iteration, population, evicted)
        else:
            # keep `workers` evaluations in flight; children join the
            # population in completion order (determinism needs workers=1)
            pending = {}
            while consumed < ev_cfg.budget or pending:
                while len(pending) < workers and consumed < ev_cfg.budget:
                    child = mutate(tournament_select(population, ev_cfg, rng),
                                   ev_cfg, ss_cfg, rng)
                    pending[pool.submit(score, child)] = child
                    consumed += 1
                done, _ = wait(pending, return_when=FIRST_COMPLETED)
                for future in done:
                    child = pending.pop(future)
                    record = future.result()
                    evicted = population.insert(child, record)
                    iteration += 1
                    note_progress(iteration, record)
                    if iteration_hook is not None:
                        iteration_hook(iteration, population, evicted)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    best = population.best()
    if best is None:
        raise NoViableAlphaError(
            "budget exhausted with only sentinel-fitness candidates")
    return RoundResult(best.program, best.record, trajectory)


def run_rounds(seeds, panel, ev_cfg: EvolutionConfig, bt_cfg: BacktestConfig,
               ss_cfg: SearchSpaceConfig, rounds: int,
               cache: FitnessCache | None = None, workers: int = 1,
               archive_seeds_final_round: bool = False,
               trajectory_hook=None) -> AlphaArchive:
    """Round loop: per round, evolve per seed and archive the best-Sharpe winner.

    ``seeds`` is a list of optional seed programs (None means random
    initialization). With ``archive_seeds_final_round`` the last round seeds
    from the archive instead. Raises NoViableAlphaError, tagged with the
    round index, when every seed of a round comes up empty.
    """
    if rounds < 1:
        raise ValueError("need at least one round")
    cache = cache if cache is not None else FitnessCache()
    archive = AlphaArchive()
    seeds = list(seeds) if seeds else [None]

    for round_id in range(rounds):
        round_seeds = seeds
        if archive_seeds_final_round and round_id == rounds - 1 and archive.entries:
            round_seeds = [entry.program for entry in archive.entries]
        results: list[RoundResult] = []
        for seed_index, seed_alpha in enumerate(round_seeds):
            rng = np.random.default_rng([ev_cfg.seed, round_id, seed_index])
            try:
                result = evolve_round(seed_alpha, panel, archive, ev_cfg, bt_cfg,
                                      ss_cfg, cache, rng=rng, workers=workers)
            except NoViableAlphaError:
                continue
            if trajectory_hook is not None:
                trajectory_hook(round_id, seed_index, result.trajectory)
            results.append(result)
        if not results:
            raise NoViableAlphaError(f"round {round_id}: no viable alpha from any seed")
        winner = max(results, key=lambda r: _sharpe_key(r, bt_cfg))
        sharpe = _safe_sharpe(winner.record.val_returns, bt_cfg)
        archive.add(winner.best, winner.record.val_returns, round_id,
                    winner.record.ic, sharpe)
    return archive


def _sharpe_key(result: RoundResult, bt_cfg: BacktestConfig) -> float:
    value = _safe_sharpe(result.record.val_returns, bt_cfg)
    return float("-inf") if np.isnan(value) else value
