"""Opcode catalog for the alpha register machine.

Every opcode has a fixed signature: the register banks of its inputs, the
bank of its output, and the kinds of its immediate constants. Several
opcodes share one text name (``min`` works on scalars, vectors, and
matrices); the text parser resolves the overload from operand banks,
immediate count, and output bank.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass


class Bank(enum.Enum):
    SCALAR = "s"
    VECTOR = "v"
    MATRIX = "m"


class Imm(enum.Enum):
    FLOAT = "float"        # literal constant; canonical text form has 6 decimals
    ROW = "row"            # row index into a matrix, in [0, feature_rows)
    COL = "col"            # column index, in [0, feature_cols)
    AXIS = "axis"          # 0 or 1
    GRAN = "granularity"   # 0 = sector, 1 = industry
    WINDOW = "window"      # trailing-window length, >= 1


SECTOR, INDUSTRY = 0, 1
GRANULARITY_NAMES = {SECTOR: "sector", INDUSTRY: "industry"}
GRANULARITY_IDS = {name: gid for gid, name in GRANULARITY_NAMES.items()}

# window vocabulary used when drawing/mutating ts-rank instructions
TS_RANK_WINDOWS = (5, 10, 20, 30)

SETUP, PREDICT, UPDATE = "setup", "predict", "update"
COMPONENTS = (SETUP, PREDICT, UPDATE)


@dataclass(frozen=True)
class OpSpec:
    opcode: str
    name: str                    # text-format name, shared by overloads
    kind: str                    # kernel family tag used by the executor
    in_banks: tuple[Bank, ...]
    out_bank: Bank
    imms: tuple[Imm, ...]
    components: frozenset[str]   # components whose allow-list contains this op


UNARY_NAMES = ("sin", "cos", "tan", "arcsin", "arccos", "arctan",
               "exp", "log", "abs", "inv")
BINARY_NAMES = ("add", "sub", "mul", "div", "min", "max")
INFIX_SYMBOLS = {"add": "+", "sub": "-", "mul": "*", "div": "/"}
INFIX_NAMES = {sym: name for name, sym in INFIX_SYMBOLS.items()}


def _build_catalog() -> dict[str, OpSpec]:
    S, V, M = Bank.SCALAR, Bank.VECTOR, Bank.MATRIX
    everywhere = frozenset(COMPONENTS)
    init_only = frozenset({SETUP, UPDATE})        # randomness / constants
    predict_update = frozenset({PREDICT, UPDATE})
    predict_only = frozenset({PREDICT})

    ops: list[OpSpec] = []
    for bank in (S, V, M):
        p = bank.value
        for name in UNARY_NAMES:
            ops.append(OpSpec(f"{p}_{name}", name, name, (bank,), bank, (), everywhere))
        # two-argument step function: 1 for x > 0, 0 for x < 0, c at x == 0
        ops.append(OpSpec(f"{p}_heaviside", "heaviside", "heaviside",
                          (bank,), bank, (Imm.FLOAT,), everywhere))
        for name in BINARY_NAMES:
            ops.append(OpSpec(f"{p}_{name}", name, name, (bank, bank), bank, (), everywhere))

    ops += [
        OpSpec("norm_fro", "norm", "norm_fro", (M,), S, (), everywhere),
        OpSpec("norm_vec", "norm", "norm_vec", (V,), S, (), everywhere),
        OpSpec("norm_axis", "norm", "norm_axis", (M,), V, (Imm.AXIS,), everywhere),
        OpSpec("mean_mat", "mean", "mean_mat", (M,), S, (), everywhere),
        OpSpec("std_mat", "std", "std_mat", (M,), S, (), everywhere),
        OpSpec("std_vec", "std", "std_vec", (V,), S, (), everywhere),
        OpSpec("matmul", "matmul", "matmul", (M, M), M, (), everywhere),
        OpSpec("transpose", "transpose", "transpose", (M,), M, (), everywhere),
        OpSpec("broadcast_scalar", "broadcast", "broadcast_scalar", (S,), V, (), everywhere),
        OpSpec("broadcast_vector", "broadcast", "broadcast_vector",
               (V,), M, (Imm.AXIS,), everywhere),
        OpSpec("vector_uniform", "vector_uniform", "vector_uniform",
               (), V, (Imm.FLOAT, Imm.FLOAT), init_only),
        OpSpec("const", "const", "const", (), S, (Imm.FLOAT,), init_only),
        OpSpec("get_scalar", "get_scalar", "get_scalar",
               (M,), S, (Imm.ROW, Imm.COL), predict_update),
        OpSpec("get_row", "get_row", "get_row", (M,), V, (Imm.ROW,), predict_update),
        OpSpec("get_col", "get_col", "get_col", (M,), V, (Imm.COL,), predict_update),
        OpSpec("rank", "rank", "rank", (S,), S, (), predict_only),
        OpSpec("relation_rank", "relation_rank", "relation_rank",
               (S,), S, (Imm.GRAN,), predict_only),
        OpSpec("relation_demean", "relation_demean", "relation_demean",
               (S,), S, (Imm.GRAN,), predict_only),
        OpSpec("ts_rank", "tsrank", "ts_rank", (S,), S, (Imm.WINDOW,), predict_only),
    ]
    return {op.opcode: op for op in ops}


CATALOG: dict[str, OpSpec] = _build_catalog()

# stable numeric ids for hashing, independent of catalog build order
OPCODE_IDS = {opcode: i for i, opcode in enumerate(sorted(CATALOG))}

COMPONENT_OPS: dict[str, tuple[str, ...]] = {
    comp: tuple(sorted(op for op, spec in CATALOG.items() if comp in spec.components))
    for comp in COMPONENTS
}

NAME_TABLE: dict[str, tuple[OpSpec, ...]] = {}
for _spec in CATALOG.values():
    NAME_TABLE[_spec.name] = NAME_TABLE.get(_spec.name, ()) + (_spec,)


def quantize_float(x: float) -> float:
    """Clamp a float immediate onto the 6-decimal grid of the text format."""
    return round(float(x), 6) + 0.0
