import numpy as np
import pytest

from alphaforge.ops import COMPONENT_OPS, COMPONENTS, PREDICT, SETUP, UPDATE
from alphaforge.program import (AlphaProgram, Instruction, Register,
                                SearchSpaceConfig, random_program,
                                validate_program)


def _prog(setup, predict, update):
    return AlphaProgram(tuple(setup), tuple(predict), tuple(update))


def _add(out, a, b):
    return Instruction("s_add", Register.s(out), (Register.s(a), Register.s(b)))


MINIMAL = _prog([_add(4, 2, 3)], [_add(1, 2, 3)], [_add(5, 2, 3)])


def test_minimal_program_is_valid(ss_cfg):
    assert validate_program(MINIMAL, ss_cfg).ok


def test_label_read_in_predict_is_flagged(ss_cfg):
    bad = MINIMAL.with_component(
        PREDICT,
        [Instruction("s_mul", Register.s(4), (Register.s(0), Register.s(2))),
         _add(1, 2, 3)])
    report = validate_program(bad, ss_cfg)
    assert not report.ok
    assert any("label read in predict" in v.message for v in report.violations)


def test_label_read_in_update_is_allowed(ss_cfg):
    prog = MINIMAL.with_component(
        UPDATE, [Instruction("s_mul", Register.s(4), (Register.s(0), Register.s(2)))])
    assert validate_program(prog, ss_cfg).ok


def test_op_count_limits(ss_cfg):
    over = MINIMAL.with_component(PREDICT, [_add(1, 2, 3)] * 22)
    report = validate_program(over, ss_cfg)
    assert any("exceeds maximum 21" in v.message for v in report.violations)

    empty = MINIMAL.with_component(SETUP, [])
    report = validate_program(empty, ss_cfg)
    assert any("below minimum" in v.message for v in report.violations)


def test_missing_prediction_write_is_flagged(ss_cfg):
    prog = MINIMAL.with_component(PREDICT, [_add(2, 3, 4)])
    report = validate_program(prog, ss_cfg)
    assert any("writes the prediction" in v.message for v in report.violations)


def test_register_out_of_range(ss_cfg):
    prog = MINIMAL.with_component(
        PREDICT, [_add(1, 2, 3),
                  Instruction("s_sin", Register.s(3), (Register.s(10),))])
    report = validate_program(prog, ss_cfg)
    assert any("out of range" in v.message for v in report.violations)


def test_bank_mismatch_is_flagged(ss_cfg):
    prog = MINIMAL.with_component(
        PREDICT, [_add(1, 2, 3),
                  Instruction("v_sin", Register.s(3), (Register.s(4),))])
    report = validate_program(prog, ss_cfg)
    assert any("bank" in v.message for v in report.violations)


def test_allow_list_enforced(ss_cfg):
    # relational ops only run inside predict
    prog = MINIMAL.with_component(
        UPDATE, [Instruction("rank", Register.s(4), (Register.s(3),))])
    report = validate_program(prog, ss_cfg)
    assert any("not allowed in update" in v.message for v in report.violations)
    assert "rank" not in COMPONENT_OPS[UPDATE]
    assert "const" not in COMPONENT_OPS[PREDICT]
    assert "vector_uniform" in COMPONENT_OPS[SETUP]


def test_validation_is_pure(ss_cfg):
    first = validate_program(MINIMAL, ss_cfg)
    second = validate_program(MINIMAL, ss_cfg)
    assert first == second


def test_config_requires_square_features():
    with pytest.raises(ValueError):
        SearchSpaceConfig(feature_rows=13, feature_cols=12)


def test_random_program_deterministic(ss_cfg):
    a = random_program(ss_cfg, np.random.default_rng(42))
    b = random_program(ss_cfg, np.random.default_rng(42))
    assert a == b


def test_random_programs_always_valid(ss_cfg):
    rng = np.random.default_rng(7)
    for _ in range(2000):
        program = random_program(ss_cfg, rng)
        assert validate_program(program, ss_cfg).ok


def test_random_program_lengths_within_bounds(ss_cfg):
    rng = np.random.default_rng(9)
    seen_min = {c: 99 for c in COMPONENTS}
    seen_max = {c: 0 for c in COMPONENTS}
    for _ in range(500):
        program = random_program(ss_cfg, rng)
        for comp in COMPONENTS:
            n = len(program.component(comp))
            assert ss_cfg.min_ops <= n <= ss_cfg.max_ops(comp)
            seen_min[comp] = min(seen_min[comp], n)
            seen_max[comp] = max(seen_max[comp], n)
    # uniform draws over [1, max] should touch both ends across 500 programs
    assert seen_min[PREDICT] <= 2
    assert seen_max[PREDICT] >= 20
    assert seen_max[UPDATE] >= 40
