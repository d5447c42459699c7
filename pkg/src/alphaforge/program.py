"""Alpha programs: typed registers, instructions, validation, random generation.

A program is three straight-line instruction lists (setup, predict, update)
over a fixed register file of scalars, vectors, and matrices. Scalar s0
holds the label during training, scalar s1 the prediction, and matrix m0
the per-task feature matrix, rewritten by the environment each time step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import (CATALOG, COMPONENT_OPS, COMPONENTS, PREDICT, SETUP,
                  TS_RANK_WINDOWS, UPDATE, Bank, Imm, quantize_float)


@dataclass(frozen=True)
class Register:
    bank: Bank
    index: int

    @classmethod
    def s(cls, index: int) -> "Register":
        return cls(Bank.SCALAR, index)

    @classmethod
    def v(cls, index: int) -> "Register":
        return cls(Bank.VECTOR, index)

    @classmethod
    def m(cls, index: int) -> "Register":
        return cls(Bank.MATRIX, index)

    def __str__(self) -> str:
        return f"{self.bank.value}{self.index}"


LABEL = Register.s(0)
PREDICTION = Register.s(1)
FEATURES = Register.m(0)


@dataclass(frozen=True)
class Instruction:
    opcode: str
    out: Register
    inputs: tuple[Register, ...] = ()
    immediates: tuple = ()


@dataclass(frozen=True)
class AlphaProgram:
    setup: tuple[Instruction, ...]
    predict: tuple[Instruction, ...]
    update: tuple[Instruction, ...]

    def component(self, name: str) -> tuple[Instruction, ...]:
        if name not in COMPONENTS:
            raise KeyError(name)
        return getattr(self, name)

    def with_component(self, name: str, instructions) -> "AlphaProgram":
        parts = {c: self.component(c) for c in COMPONENTS}
        parts[name] = tuple(instructions)
        return AlphaProgram(parts[SETUP], parts[PREDICT], parts[UPDATE])

    @property
    def n_ops(self) -> int:
        return len(self.setup) + len(self.predict) + len(self.update)


@dataclass(frozen=True)
class SearchSpaceConfig:
    n_scalars: int = 10
    n_vectors: int = 16
    n_matrices: int = 4
    min_ops: int = 1
    max_ops_setup: int = 21
    max_ops_predict: int = 21
    max_ops_update: int = 45
    feature_rows: int = 13
    feature_cols: int = 13

    def __post_init__(self):
        if self.feature_rows != self.feature_cols:
            raise ValueError("feature matrix must be square: one vector length "
                             "serves both row and column extraction")
        if self.n_scalars < 2:
            raise ValueError("need at least s0 (label) and s1 (prediction)")
        if self.n_matrices < 1:
            raise ValueError("need at least m0 (feature matrix)")
        if self.min_ops < 1:
            raise ValueError("min_ops must be >= 1")

    def bank_size(self, bank: Bank) -> int:
        return {Bank.SCALAR: self.n_scalars,
                Bank.VECTOR: self.n_vectors,
                Bank.MATRIX: self.n_matrices}[bank]

    def max_ops(self, component: str) -> int:
        return {SETUP: self.max_ops_setup,
                PREDICT: self.max_ops_predict,
                UPDATE: self.max_ops_update}[component]


@dataclass(frozen=True)
class Violation:
    component: str
    index: int | None
    message: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        lines = []
        for v in self.violations:
            where = v.component if v.index is None else f"{v.component}[{v.index}]"
            lines.append(f"{where}: {v.message}")
        return "\n".join(lines)


def _check_immediate(kind: Imm, value, cfg: SearchSpaceConfig) -> str | None:
    if kind is Imm.FLOAT:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            return "float immediate expected"
        if not np.isfinite(value):
            return "float immediate must be finite"
        return None
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        return f"{kind.value} immediate must be an integer"
    value = int(value)
    if kind is Imm.ROW and not 0 <= value < cfg.feature_rows:
        return f"row index {value} outside [0, {cfg.feature_rows})"
    if kind is Imm.COL and not 0 <= value < cfg.feature_cols:
        return f"column index {value} outside [0, {cfg.feature_cols})"
    if kind is Imm.AXIS and value not in (0, 1):
        return f"axis must be 0 or 1, got {value}"
    if kind is Imm.GRAN and value not in (0, 1):
        return f"granularity must be 0 (sector) or 1 (industry), got {value}"
    if kind is Imm.WINDOW and value < 1:
        return f"window must be >= 1, got {value}"
    return None


def validate_program(program: AlphaProgram, cfg: SearchSpaceConfig) -> ValidationReport:
    """Check every well-formedness rule; violations are data, not failures."""
    violations: list[Violation] = []

    for comp in COMPONENTS:
        instrs = program.component(comp)
        if len(instrs) < cfg.min_ops:
            violations.append(Violation(comp, None,
                                        f"op count {len(instrs)} below minimum {cfg.min_ops}"))
        if len(instrs) > cfg.max_ops(comp):
            violations.append(Violation(comp, None,
                                        f"op count {len(instrs)} exceeds maximum {cfg.max_ops(comp)}"))
        allowed = COMPONENT_OPS[comp]
        for i, ins in enumerate(instrs):
            spec = CATALOG.get(ins.opcode)
            if spec is None:
                violations.append(Violation(comp, i, f"unknown opcode {ins.opcode!r}"))
                continue
            if ins.opcode not in allowed:
                violations.append(Violation(comp, i,
                                            f"opcode {ins.opcode} not allowed in {comp}"))
            if len(ins.inputs) != len(spec.in_banks):
                violations.append(Violation(comp, i,
                                            f"{ins.opcode} expects {len(spec.in_banks)} inputs, "
                                            f"got {len(ins.inputs)}"))
            else:
                for reg, bank in zip(ins.inputs, spec.in_banks):
                    if reg.bank is not bank:
                        violations.append(Violation(comp, i,
                                                    f"input {reg} has bank {reg.bank.value}, "
                                                    f"expected {bank.value}"))
            if ins.out.bank is not spec.out_bank:
                violations.append(Violation(comp, i,
                                            f"output {ins.out} has bank {ins.out.bank.value}, "
                                            f"expected {spec.out_bank.value}"))
            for reg in ins.inputs + (ins.out,):
                if not 0 <= reg.index < cfg.bank_size(reg.bank):
                    violations.append(Violation(comp, i, f"register {reg} out of range"))
            if len(ins.immediates) != len(spec.imms):
                violations.append(Violation(comp, i,
                                            f"{ins.opcode} expects {len(spec.imms)} immediates, "
                                            f"got {len(ins.immediates)}"))
            else:
                for kind, value in zip(spec.imms, ins.immediates):
                    msg = _check_immediate(kind, value, cfg)
                    if msg:
                        violations.append(Violation(comp, i, msg))
            if comp in (SETUP, PREDICT) and LABEL in ins.inputs:
                violations.append(Violation(comp, i, "label read in " + comp))

    if not any(ins.out == PREDICTION for ins in program.predict):
        violations.append(Violation(PREDICT, None, "no instruction writes the prediction s1"))

    return ValidationReport(tuple(violations))


def _random_immediate(kind: Imm, cfg: SearchSpaceConfig, rng: np.random.Generator):
    if kind is Imm.FLOAT:
        return quantize_float(rng.uniform(-1.0, 1.0))
    if kind is Imm.ROW:
        return int(rng.integers(cfg.feature_rows))
    if kind is Imm.COL:
        return int(rng.integers(cfg.feature_cols))
    if kind is Imm.AXIS:
        return int(rng.integers(2))
    if kind is Imm.GRAN:
        return int(rng.integers(2))
    if kind is Imm.WINDOW:
        return int(TS_RANK_WINDOWS[rng.integers(len(TS_RANK_WINDOWS))])
    raise AssertionError(kind)


def random_input_register(bank: Bank, component: str, cfg: SearchSpaceConfig,
                          rng: np.random.Generator) -> Register:
    # s0 (the label) may only be read inside update
    if bank is Bank.SCALAR and component in (SETUP, PREDICT):
        return Register(bank, 1 + int(rng.integers(cfg.n_scalars - 1)))
    return Register(bank, int(rng.integers(cfg.bank_size(bank))))


def random_instruction(component: str, cfg: SearchSpaceConfig,
                       rng: np.random.Generator, opcode: str | None = None) -> Instruction:
    ops = COMPONENT_OPS[component]
    if opcode is None:
        opcode = ops[int(rng.integers(len(ops)))]
    spec = CATALOG[opcode]
    inputs = tuple(random_input_register(b, component, cfg, rng) for b in spec.in_banks)
    out = Register(spec.out_bank, int(rng.integers(cfg.bank_size(spec.out_bank))))
    imms = tuple(_random_immediate(k, cfg, rng) for k in spec.imms)
    return Instruction(opcode, out, inputs, imms)


_SCALAR_OUT_PREDICT_OPS = tuple(sorted(
    op for op in COMPONENT_OPS[PREDICT] if CATALOG[op].out_bank is Bank.SCALAR))


def random_program(cfg: SearchSpaceConfig, rng: np.random.Generator) -> AlphaProgram:
    """Draw a uniformly random valid program.

    Instruction counts, opcodes, registers, and immediates are all uniform
    over their legal ranges; the only forced choice is rewriting one predict
    instruction so that the prediction register s1 is written at least once.
    """
    parts = {}
    for comp in COMPONENTS:
        n = int(rng.integers(cfg.min_ops, cfg.max_ops(comp) + 1))
        parts[comp] = [random_instruction(comp, cfg, rng) for _ in range(n)]

    predict = parts[PREDICT]
    if not any(ins.out == PREDICTION for ins in predict):
        pos = int(rng.integers(len(predict)))
        opcode = _SCALAR_OUT_PREDICT_OPS[int(rng.integers(len(_SCALAR_OUT_PREDICT_OPS)))]
        ins = random_instruction(PREDICT, cfg, rng, opcode=opcode)
        predict[pos] = Instruction(ins.opcode, PREDICTION, ins.inputs, ins.immediates)

    return AlphaProgram(tuple(parts[SETUP]), tuple(parts[PREDICT]), tuple(parts[UPDATE]))
