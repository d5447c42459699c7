"""Read and write the line-oriented alpha text format.

Canonical form: the three ``def`` headers in setup/predict/update order,
two-space indented instruction lines, ``+ - * /`` printed infix with single
spaces, every other opcode in call syntax with comma-joined arguments and
no spaces, float immediates with 6 decimal places.
"""
from __future__ import annotations

import re

from .ops import (CATALOG, COMPONENTS, GRANULARITY_IDS, GRANULARITY_NAMES,
                  INFIX_NAMES, INFIX_SYMBOLS, NAME_TABLE, Bank, Imm, OpSpec,
                  quantize_float)
from .program import AlphaProgram, Instruction, Register, SearchSpaceConfig

_HEADERS = {"def Setup():": "setup", "def Predict():": "predict", "def Update():": "update"}
_HEADER_ORDER = tuple(_HEADERS)

_REG_RE = re.compile(r"^([svm])(\d+)$")
_ASSIGN_RE = re.compile(r"^\s*([svm]\d+)\s*=\s*(.+?)\s*$")
_INFIX_RE = re.compile(r"^([svm]\d+)\s*([+\-*/])\s*([svm]\d+)$")
_CALL_RE = re.compile(r"^([A-Za-z_][A-Za-z_0-9]*)\s*\(\s*(.*?)\s*\)$")
_INT_RE = re.compile(r"^-?\d+$")
_FLOAT_RE = re.compile(r"^-?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")

# the catalog name for the time-series rank op; accept the underscored spelling too
_NAME_ALIASES = {"ts_rank": "tsrank"}


class AlphaSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


def _parse_register(token: str, cfg: SearchSpaceConfig, line: int, col: int) -> Register:
    m = _REG_RE.match(token)
    if not m:
        raise AlphaSyntaxError(f"expected a register, got {token!r}", line, col)
    reg = Register(Bank(m.group(1)), int(m.group(2)))
    if reg.index >= cfg.bank_size(reg.bank):
        raise AlphaSyntaxError(f"register {token} out of range", line, col)
    return reg


def _classify_arg(token: str):
    """Return ('reg'|'axis'|'gran'|'int'|'float', parsed value) or None."""
    if _REG_RE.match(token):
        return "reg", token
    if token.startswith("axis="):
        rest = token[5:]
        if _INT_RE.match(rest):
            return "axis", int(rest)
        return None
    if token in GRANULARITY_IDS:
        return "gran", GRANULARITY_IDS[token]
    if _INT_RE.match(token):
        return "int", int(token)
    if _FLOAT_RE.match(token):
        return "float", float(token)
    return None


def _imm_accepts(kind: Imm, tag: str) -> bool:
    if kind is Imm.FLOAT:
        return tag in ("float", "int")
    if kind is Imm.AXIS:
        return tag in ("axis", "int")
    if kind is Imm.GRAN:
        return tag in ("gran", "int")
    return tag == "int"  # ROW, COL, WINDOW


def _coerce_imm(kind: Imm, tag: str, value):
    if kind is Imm.FLOAT:
        return quantize_float(value)
    return int(value)


def _resolve_call(name: str, out: Register, regs: list[Register],
                  imm_args: list[tuple[str, object]], line: int) -> Instruction:
    name = _NAME_ALIASES.get(name, name)
    candidates = NAME_TABLE.get(name)
    if not candidates:
        raise AlphaSyntaxError(f"unknown opcode {name!r}", line)

    reg_banks = tuple(r.bank for r in regs)
    for spec in candidates:
        imms = _match_imms(spec, name, imm_args)
        if imms is None:
            continue
        if spec.in_banks != reg_banks or spec.out_bank is not out.bank:
            continue
        return Instruction(spec.opcode, out, tuple(regs), imms)
    raise AlphaSyntaxError(
        f"no signature of {name!r} matches operands "
        f"({', '.join(b.value for b in reg_banks)}) -> {out.bank.value} "
        f"with {len(imm_args)} immediate(s)", line)


def _match_imms(spec: OpSpec, name: str, imm_args) -> tuple | None:
    args = list(imm_args)
    # heaviside's tie-value constant may be omitted and defaults to 0
    if name == "heaviside" and len(args) == len(spec.imms) - 1:
        args.append(("float", 0.0))
    if len(args) != len(spec.imms):
        return None
    out = []
    for kind, (tag, value) in zip(spec.imms, args):
        if not _imm_accepts(kind, tag):
            return None
        out.append(_coerce_imm(kind, tag, value))
    return tuple(out)


def _parse_instruction(line_text: str, lineno: int, cfg: SearchSpaceConfig) -> Instruction:
    m = _ASSIGN_RE.match(line_text)
    if not m:
        raise AlphaSyntaxError("expected '<register> = <expression>'", lineno)
    out = _parse_register(m.group(1), cfg, lineno, line_text.index(m.group(1)) + 1)
    expr = m.group(2)

    infix = _INFIX_RE.match(expr)
    if infix:
        a = _parse_register(infix.group(1), cfg, lineno, 1)
        b = _parse_register(infix.group(3), cfg, lineno, 1)
        if a.bank is not b.bank:
            raise AlphaSyntaxError(
                f"infix operands must share a bank, got {a} and {b}", lineno)
        if out.bank is not a.bank:
            raise AlphaSyntaxError(
                f"infix output {out} must share the operand bank", lineno)
        opcode = f"{a.bank.value}_{INFIX_NAMES[infix.group(2)]}"
        return Instruction(opcode, out, (a, b))

    call = _CALL_RE.match(expr)
    if not call:
        raise AlphaSyntaxError(f"cannot parse expression {expr!r}", lineno)
    name, body = call.group(1), call.group(2)
    tokens = [t.strip() for t in body.split(",")] if body.strip() else []

    regs: list[Register] = []
    imm_args: list[tuple[str, object]] = []
    for tok in tokens:
        classified = _classify_arg(tok)
        if classified is None:
            raise AlphaSyntaxError(f"cannot parse argument {tok!r}", lineno)
        tag, value = classified
        if tag == "reg":
            if imm_args:
                raise AlphaSyntaxError("register arguments must precede immediates", lineno)
            regs.append(_parse_register(tok, cfg, lineno, 1))
        else:
            imm_args.append((tag, value))
    return _resolve_call(name, out, regs, imm_args, lineno)


def parse_alpha_text(text: str, cfg: SearchSpaceConfig | None = None) -> AlphaProgram:
    """Parse alpha text into a program; raises AlphaSyntaxError on bad input.

    Components may be empty (pruned listings round-trip); run
    validate_program separately to enforce well-formedness.
    """
    cfg = cfg or SearchSpaceConfig()
    parts: dict[str, list[Instruction]] = {}
    current: str | None = None
    next_header = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip() or line.strip().startswith("#"):
            continue
        stripped = line.strip()
        if stripped in _HEADERS:
            if next_header >= len(_HEADER_ORDER) or stripped != _HEADER_ORDER[next_header]:
                raise AlphaSyntaxError(
                    f"unexpected header {stripped!r}; headers must appear once, "
                    "in Setup/Predict/Update order", lineno)
            current = _HEADERS[stripped]
            parts[current] = []
            next_header += 1
            continue
        if current is None:
            raise AlphaSyntaxError("instruction before 'def Setup():' header", lineno)
        parts[current].append(_parse_instruction(line, lineno, cfg))

    if next_header != len(_HEADER_ORDER):
        missing = _HEADER_ORDER[next_header]
        raise AlphaSyntaxError(f"missing header {missing!r}", len(text.splitlines()) + 1)

    return AlphaProgram(tuple(parts["setup"]), tuple(parts["predict"]), tuple(parts["update"]))


def _format_imm(kind: Imm, value) -> str:
    if kind is Imm.FLOAT:
        return f"{value:.6f}"
    if kind is Imm.AXIS:
        return f"axis={int(value)}"
    if kind is Imm.GRAN:
        return GRANULARITY_NAMES[int(value)]
    return str(int(value))


def serialize_instruction(ins: Instruction) -> str:
    spec = CATALOG[ins.opcode]
    if spec.kind in INFIX_SYMBOLS:
        a, b = ins.inputs
        return f"{ins.out} = {a} {INFIX_SYMBOLS[spec.kind]} {b}"
    args = [str(r) for r in ins.inputs]
    args += [_format_imm(k, v) for k, v in zip(spec.imms, ins.immediates)]
    return f"{ins.out} = {spec.name}({','.join(args)})"


def serialize_alpha_text(program: AlphaProgram) -> str:
    lines: list[str] = []
    for header, comp in _HEADERS.items():
        lines.append(header)
        for ins in program.component(comp):
            lines.append("  " + serialize_instruction(ins))
    return "\n".join(lines) + "\n"
