"""Lockstep virtual machine for alpha programs.

The register file holds one slot per task (stock) per register, and each
instruction updates every task before the next instruction runs. That
instruction-major order is what gives the cross-sectional relation ops a
well-defined population: when ``rank`` executes, its input register already
holds the current value for all tasks.

Numeric errors follow IEEE semantics (log of a negative is NaN, division by
zero is +/-inf); non-finite values propagate and are penalised downstream.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .ops import CATALOG, SECTOR, Bank
from .program import AlphaProgram, Instruction, SearchSpaceConfig

TRAIN, INFER = "train", "infer"

_UNARY_UFUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan,
    "arcsin": np.arcsin, "arccos": np.arccos, "arctan": np.arctan,
    "exp": np.exp, "log": np.log, "abs": np.abs,
}
_BINARY_UFUNCS = {
    "add": np.add, "sub": np.subtract, "mul": np.multiply,
    "div": np.true_divide, "min": np.minimum, "max": np.maximum,
}


def _reciprocal(x: np.ndarray) -> np.ndarray:
    # sign-preserving 1/x, defined as 0 at x == 0
    out = np.zeros_like(x, dtype=float)
    np.divide(1.0, x, out=out, where=x != 0)
    return out


def _normalized_ranks(x: np.ndarray) -> np.ndarray:
    """Zero-based average-tie ranks scaled to [0, 1]; singleton -> 0.5."""
    n = x.size
    if n == 1:
        return np.array([0.5])
    y = np.where(np.isnan(x), -np.inf, x)  # NaN ranks as smallest
    order = np.argsort(y, kind="stable")
    sorted_y = y[order]
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i + 1
        while j < n and sorted_y[j] == sorted_y[i]:
            j += 1
        ranks[order[i:j]] = (i + j - 1) / 2.0
        i = j
    return ranks / (n - 1)


def cross_sectional_rank(values, groups=None) -> np.ndarray:
    """Rank each task's value within all tasks, or within its group."""
    values = np.asarray(values, dtype=float)
    if groups is None:
        return _normalized_ranks(values)
    groups = np.asarray(groups)
    out = np.empty_like(values)
    for g in np.unique(groups):
        mask = groups == g
        out[mask] = _normalized_ranks(values[mask])
    return out


def group_demean(values, groups) -> np.ndarray:
    """Subtract each task's group mean from its value.

    The mean is summed in sorted order so the result is bit-identical under
    any permutation of the tasks.
    """
    values = np.asarray(values, dtype=float)
    groups = np.asarray(groups)
    out = np.empty_like(values)
    for g in np.unique(groups):
        mask = groups == g
        members = values[mask]
        out[mask] = members - np.sort(members).sum() / members.size
    return out


def ts_rank_step(history: list, current, window: int):
    """One time-series-rank step over per-task arrays.

    Returns the fraction of buffered past values strictly below the current
    value (0.5 when the buffer is empty) and appends the current value,
    keeping at most window - 1 entries.
    """
    current = np.asarray(current, dtype=float)
    if history:
        out = (np.asarray(history) < current).sum(axis=0) / len(history)
    else:
        out = np.full(current.shape, 0.5)
    history.append(current.copy())
    if len(history) > window - 1:
        del history[: len(history) - (window - 1)]
    return out


class ExecutionState:
    """Per-evaluation register banks and time-series buffers for K tasks.

    Banks persist across time steps and across the train-to-inference
    boundary; registers written only during update behave as trained
    parameters.
    """

    def __init__(self, n_tasks: int, cfg: SearchSpaceConfig, seed: int = 0,
                 sector_ids=None, industry_ids=None):
        self.n_tasks = n_tasks
        self.cfg = cfg
        self.seed = int(seed)
        w, f = cfg.feature_cols, cfg.feature_rows
        self.S = np.zeros((n_tasks, cfg.n_scalars))
        self.V = np.zeros((n_tasks, cfg.n_vectors, w))
        self.M = np.zeros((n_tasks, cfg.n_matrices, f, w))
        self.banks = {Bank.SCALAR: self.S, Bank.VECTOR: self.V, Bank.MATRIX: self.M}
        self.ts_buffers: dict[tuple[str, int], list] = {}
        self.step = -1
        self.sector_ids = (np.zeros(n_tasks, dtype=int) if sector_ids is None
                           else np.asarray(sector_ids, dtype=int))
        self.industry_ids = (np.zeros(n_tasks, dtype=int) if industry_ids is None
                             else np.asarray(industry_ids, dtype=int))
        self.instructions_executed = 0
        self.nan_rank_inputs = 0


def _site_rng(state: ExecutionState, component: str, lo: float, hi: float):
    # Randomness is a pure function of (seed, step, component, bounds), so
    # removing an unrelated instruction can never shift another site's draws.
    key = hashlib.blake2b(
        struct.pack("<qq", state.seed, state.step) + component.encode()
        + struct.pack("<dd", lo, hi),
        digest_size=8).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(key, "little")))


def _build_kernel(ins: Instruction, component: str, index: int):
    spec = CATALOG[ins.opcode]
    kind = spec.kind
    ob, oi = ins.out.bank, ins.out.index

    if kind in _UNARY_UFUNCS:
        fn = _UNARY_UFUNCS[kind]
        ib, ii = ins.inputs[0].bank, ins.inputs[0].index

        def kernel(st):
            st.banks[ob][:, oi] = fn(st.banks[ib][:, ii])
    elif kind == "inv":
        ib, ii = ins.inputs[0].bank, ins.inputs[0].index

        def kernel(st):
            st.banks[ob][:, oi] = _reciprocal(st.banks[ib][:, ii])
    elif kind == "heaviside":
        ib, ii = ins.inputs[0].bank, ins.inputs[0].index
        c = float(ins.immediates[0])

        def kernel(st):
            st.banks[ob][:, oi] = np.heaviside(st.banks[ib][:, ii], c)
    elif kind in _BINARY_UFUNCS:
        fn = _BINARY_UFUNCS[kind]
        ab, ai = ins.inputs[0].bank, ins.inputs[0].index
        bb, bi = ins.inputs[1].bank, ins.inputs[1].index

        def kernel(st):
            st.banks[ob][:, oi] = fn(st.banks[ab][:, ai], st.banks[bb][:, bi])
    elif kind == "norm_fro":
        ii = ins.inputs[0].index

        def kernel(st):
            st.S[:, oi] = np.sqrt((st.M[:, ii] ** 2).sum(axis=(1, 2)))
    elif kind == "norm_vec":
        ii = ins.inputs[0].index

        def kernel(st):
            st.S[:, oi] = np.sqrt((st.V[:, ii] ** 2).sum(axis=1))
    elif kind == "norm_axis":
        ii = ins.inputs[0].index
        axis = int(ins.immediates[0])

        def kernel(st):
            st.V[:, oi] = np.sqrt((st.M[:, ii] ** 2).sum(axis=1 + axis))
    elif kind == "mean_mat":
        ii = ins.inputs[0].index

        def kernel(st):
            st.S[:, oi] = st.M[:, ii].mean(axis=(1, 2))
    elif kind == "std_mat":
        ii = ins.inputs[0].index

        def kernel(st):
            st.S[:, oi] = st.M[:, ii].std(axis=(1, 2))
    elif kind == "std_vec":
        ii = ins.inputs[0].index

        def kernel(st):
            st.S[:, oi] = st.V[:, ii].std(axis=1)
    elif kind == "matmul":
        ai, bi = ins.inputs[0].index, ins.inputs[1].index

        def kernel(st):
            st.M[:, oi] = np.matmul(st.M[:, ai], st.M[:, bi])
    elif kind == "transpose":
        ii = ins.inputs[0].index

        def kernel(st):
            st.M[:, oi] = st.M[:, ii].transpose(0, 2, 1).copy()
    elif kind == "broadcast_scalar":
        ii = ins.inputs[0].index

        def kernel(st):
            st.V[:, oi] = st.S[:, ii][:, None]
    elif kind == "broadcast_vector":
        ii = ins.inputs[0].index
        axis = int(ins.immediates[0])
        if axis == 0:
            # replicate the vector along rows: every row equals the input
            def kernel(st):
                st.M[:, oi] = st.V[:, ii][:, None, :]
        else:
            def kernel(st):
                st.M[:, oi] = st.V[:, ii][:, :, None]
    elif kind == "vector_uniform":
        lo, hi = float(ins.immediates[0]), float(ins.immediates[1])
        low, high = (lo, hi) if lo <= hi else (hi, lo)

        def kernel(st):
            draw = _site_rng(st, component, lo, hi).uniform(low, high, st.cfg.feature_cols)
            st.V[:, oi] = draw  # one draw shared by all tasks
    elif kind == "const":
        c = float(ins.immediates[0])

        def kernel(st):
            st.S[:, oi] = c
    elif kind == "get_scalar":
        ii = ins.inputs[0].index
        r, c = int(ins.immediates[0]), int(ins.immediates[1])

        def kernel(st):
            st.S[:, oi] = st.M[:, ii, r, c]
    elif kind == "get_row":
        ii = ins.inputs[0].index
        r = int(ins.immediates[0])

        def kernel(st):
            st.V[:, oi] = st.M[:, ii, r, :]
    elif kind == "get_col":
        ii = ins.inputs[0].index
        c = int(ins.immediates[0])

        def kernel(st):
            st.V[:, oi] = st.M[:, ii, :, c]
    elif kind == "rank":
        ii = ins.inputs[0].index

        def kernel(st):
            x = st.S[:, ii]
            st.nan_rank_inputs += int(np.isnan(x).sum())
            st.S[:, oi] = cross_sectional_rank(x)
    elif kind == "relation_rank":
        ii = ins.inputs[0].index
        gran = int(ins.immediates[0])

        def kernel(st):
            x = st.S[:, ii]
            st.nan_rank_inputs += int(np.isnan(x).sum())
            groups = st.sector_ids if gran == SECTOR else st.industry_ids
            st.S[:, oi] = cross_sectional_rank(x, groups)
    elif kind == "relation_demean":
        ii = ins.inputs[0].index
        gran = int(ins.immediates[0])

        def kernel(st):
            groups = st.sector_ids if gran == SECTOR else st.industry_ids
            st.S[:, oi] = group_demean(st.S[:, ii], groups)
    elif kind == "ts_rank":
        ii = ins.inputs[0].index
        window = int(ins.immediates[0])
        key = (component, index)

        def kernel(st):
            buf = st.ts_buffers.setdefault(key, [])
            st.S[:, oi] = ts_rank_step(buf, st.S[:, ii], window)
    else:  # pragma: no cover - catalog and kernels must stay in sync
        raise NotImplementedError(f"no kernel for opcode {ins.opcode}")

    return kernel


@dataclass(frozen=True)
class CompiledAlpha:
    program: AlphaProgram
    setup: tuple
    predict: tuple
    update: tuple


def compile_program(program: AlphaProgram | CompiledAlpha) -> CompiledAlpha:
    if isinstance(program, CompiledAlpha):
        return program
    return CompiledAlpha(
        program,
        tuple(_build_kernel(ins, "setup", i) for i, ins in enumerate(program.setup)),
        tuple(_build_kernel(ins, "predict", i) for i, ins in enumerate(program.predict)),
        tuple(_build_kernel(ins, "update", i) for i, ins in enumerate(program.update)),
    )


def run_setup(program: AlphaProgram | CompiledAlpha, state: ExecutionState) -> ExecutionState:
    """Execute the setup component once on freshly zeroed banks."""
    compiled = compile_program(program)
    state.step = -1
    with np.errstate(all="ignore"):
        for kernel in compiled.setup:
            kernel(state)
    state.instructions_executed += len(compiled.setup)
    return state


def execute_timestep(program: AlphaProgram | CompiledAlpha, state: ExecutionState,
                     features: np.ndarray, labels=None, stage: str = INFER) -> np.ndarray:
    """Run one time step lockstep across all tasks and return the predictions.

    The environment writes the feature matrix into m0 (and the label into s0
    when training) before predict runs; update runs only when training. The
    returned array is each task's s1 after the last predict instruction.
    """
    if stage not in (TRAIN, INFER):
        raise ValueError(f"stage must be {TRAIN!r} or {INFER!r}")
    if (labels is None) == (stage == TRAIN):
        raise ValueError("labels must be supplied exactly when stage is 'train'")
    compiled = compile_program(program)
    state.step += 1
    state.M[:, 0] = features
    if stage == TRAIN:
        state.S[:, 0] = labels
    with np.errstate(all="ignore"):
        for kernel in compiled.predict:
            kernel(state)
        predictions = state.S[:, 1].copy()
        if stage == TRAIN:
            for kernel in compiled.update:
                kernel(state)
    state.instructions_executed += len(compiled.predict)
    if stage == TRAIN:
        state.instructions_executed += len(compiled.update)
    return predictions
