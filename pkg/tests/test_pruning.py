import numpy as np
import pytest

from alphaforge.evaluation import FitnessRecord, prediction_stream, sentinel_record
from alphaforge.program import random_program, validate_program
from alphaforge.pruning import (FitnessCache, fingerprint, is_redundant_alpha,
                                load_cache, lookup_or_evaluate,
                                prune_redundant_ops, save_cache)
from alphaforge.text_format import parse_alpha_text, serialize_alpha_text


def _parse(text, cfg):
    return parse_alpha_text(text, cfg)


def _wrap(predict, setup="  s9 = const(0.5)", update="  s8 = s0 + s0"):
    return (f"def Setup():\n{setup}\ndef Predict():\n"
            + "".join(f"  {line}\n" for line in predict)
            + f"def Update():\n{update}\n")


# --- dead code ---------------------------------------------------------------

def test_dead_instruction_removed(ss_cfg):
    program = _parse(_wrap([
        "s2 = get_scalar(m0,0,0)",
        "s1 = s2 * s2",
        "s3 = s4 + s5",          # dead: s3 never read
    ]), ss_cfg)
    pruned, removed = prune_redundant_ops(program)
    assert ("predict", 2) in removed
    assert len(pruned.predict) == 2


def test_overwritten_prediction_write_removed(ss_cfg):
    # an early s1 write shadowed by a later one is dead with its ancestors
    program = _parse(_wrap([
        "s4 = get_scalar(m0,1,1)",   # feeds only the shadowed write
        "s1 = s4 * s4",              # shadowed by the final write
        "s5 = get_scalar(m0,2,2)",
        "s1 = s5 + s5",
    ]), ss_cfg)
    pruned, removed = prune_redundant_ops(program)
    assert ("predict", 0) in removed
    assert ("predict", 1) in removed
    assert [ins.opcode for ins in pruned.predict] == ["get_scalar", "s_add"]


def test_update_live_across_timestep_edge(ss_cfg):
    # update writes m1, predict reads m1: live through the inter-step cycle
    program = _parse(_wrap(
        ["s1 = norm(m1)"],
        update="  m1 = m2 + m0",
    ), ss_cfg)
    pruned, removed = prune_redundant_ops(program)
    assert len(pruned.update) == 1
    assert ("update", 0) not in removed


def test_setup_pruned_like_any_other(ss_cfg):
    program = _parse(_wrap(
        ["s1 = get_scalar(m0,0,0)", "s2 = s9 + s9"],
        setup="  s9 = const(0.5)\n  s7 = const(0.25)",
    ), ss_cfg)
    pruned, removed = prune_redundant_ops(program)
    # s7 never feeds the prediction; s9 feeds only the dead s2
    assert len(pruned.setup) == 0
    assert ("setup", 0) in removed and ("setup", 1) in removed


def test_pruned_components_may_be_empty(ss_cfg):
    program = _parse(_wrap(["s1 = get_scalar(m0,0,0)"]), ss_cfg)
    pruned, _ = prune_redundant_ops(program)
    assert pruned.setup == () and pruned.update == ()
    assert len(pruned.predict) == 1
    # pruned forms are exempt from the min-op rule and may serialize
    text = serialize_alpha_text(pruned)
    assert parse_alpha_text(text, ss_cfg) == pruned


def test_self_feeding_update_matrix_stays_live(ss_cfg):
    program = _parse(_wrap(
        ["s1 = std(m1)"],
        update="  m1 = matmul(m1,m0)",
    ), ss_cfg)
    pruned, removed = prune_redundant_ops(program)
    assert ("update", 0) not in removed
    assert len(pruned.update) == 1 and len(pruned.predict) == 1


def test_pruning_equivalence_on_random_programs(ss_cfg, medium_panel):
    rng = np.random.default_rng(99)
    for _ in range(100):
        program = random_program(ss_cfg, rng)
        pruned, _ = prune_redundant_ops(program)
        a = prediction_stream(program, medium_panel, ss_cfg, exec_seed=4)
        b = prediction_stream(pruned, medium_panel, ss_cfg, exec_seed=4)
        assert a.tobytes() == b.tobytes()


def test_pruning_is_idempotent(ss_cfg):
    rng = np.random.default_rng(50)
    for _ in range(50):
        program = random_program(ss_cfg, rng)
        pruned, _ = prune_redundant_ops(program)
        again, removed = prune_redundant_ops(pruned)
        assert removed == ()
        assert again == pruned


# --- redundant alphas ----------------------------------------------------------

def test_alpha_without_feature_read_is_redundant(ss_cfg):
    program = _parse(_wrap(["s1 = s3 + s2"]), ss_cfg)
    assert is_redundant_alpha(program)


def test_feature_extraction_is_not_redundant(ss_cfg):
    program = _parse(_wrap(["s1 = get_scalar(m0,0,0)"]), ss_cfg)
    assert not is_redundant_alpha(program)


def test_disconnected_feature_read_is_redundant(ss_cfg):
    program = _parse(_wrap(["s2 = norm(m0)", "s1 = s4 * s4"]), ss_cfg)
    assert is_redundant_alpha(program)


def test_feature_reach_through_update_parameter(ss_cfg):
    program = _parse(_wrap(["s1 = std(m1)"], update="  m1 = m1 + m0"), ss_cfg)
    assert not is_redundant_alpha(program)


def test_program_write_shadows_feature_matrix(ss_cfg):
    # m0 is overwritten before the only read, so features never reach s1
    program = _parse(_wrap(["m0 = m1 + m1", "s1 = norm(m0)"]), ss_cfg)
    assert is_redundant_alpha(program)


def test_setup_read_of_m0_is_not_a_feature_read(ss_cfg):
    # at setup time m0 holds zeros, not market data
    program = _parse(_wrap(
        ["s1 = s9 + s9"],
        setup="  s9 = norm(m0)",
    ), ss_cfg)
    assert is_redundant_alpha(program)


def test_redundant_flag_matches_reachability_oracle(ss_cfg, small_panel):
    """Flagged alphas must ignore arbitrary feature perturbations."""
    rng = np.random.default_rng(123)
    flagged = 0
    checked = 0
    while flagged < 25:
        program = random_program(ss_cfg, rng)
        if not is_redundant_alpha(program):
            continue
        flagged += 1
        base = prediction_stream(program, small_panel, ss_cfg, exec_seed=2)
        for _ in range(3):
            shaken = _perturb_features(small_panel, rng)
            other = prediction_stream(program, shaken, ss_cfg, exec_seed=2)
            assert base.tobytes() == other.tobytes()
            checked += 1
    assert checked == 75


def _perturb_features(panel, rng):
    import copy
    clone = copy.copy(panel)
    clone.feature_days = panel.feature_days + rng.normal(
        0.0, 1.0, panel.feature_days.shape)
    clone.__post_init__()
    return clone


# --- fingerprints ---------------------------------------------------------------

def test_dead_code_does_not_change_fingerprint(ss_cfg):
    base = _parse(_wrap(["s2 = get_scalar(m0,0,0)", "s1 = s2 * s2"]), ss_cfg)
    with_dead = _parse(_wrap([
        "s2 = get_scalar(m0,0,0)",
        "s1 = s2 * s2",
        "s3 = s4 + s5",
    ]), ss_cfg)
    fp1 = fingerprint(prune_redundant_ops(base)[0])
    fp2 = fingerprint(prune_redundant_ops(with_dead)[0])
    assert fp1 == fp2


def test_immediates_change_fingerprint(ss_cfg):
    a = _parse(_wrap(["s1 = get_scalar(m0,0,0)"]), ss_cfg)
    b = _parse(_wrap(["s1 = get_scalar(m0,0,1)"]), ss_cfg)
    assert fingerprint(a) != fingerprint(b)


def test_fingerprint_golden_value(ss_cfg):
    """Frozen digest guards against process- or version-dependent hashing."""
    program = _parse(_wrap(["s2 = get_scalar(m0,3,12)", "s1 = tsrank(s2,10)"]), ss_cfg)
    pruned, _ = prune_redundant_ops(program)
    assert fingerprint(pruned).hex() == "5cc7eb8fd7138ed2b7da8808af078731"


def test_fingerprint_has_128_bits(ss_cfg):
    program = _parse(_wrap(["s1 = get_scalar(m0,0,0)"]), ss_cfg)
    assert len(fingerprint(program)) == 16


# --- fitness cache ---------------------------------------------------------------

def _fake_evaluator(calls):
    def evaluator(pruned):
        calls.append(pruned)
        return FitnessRecord(ic=float(len(calls)), val_returns=np.arange(3.0))
    return evaluator


def test_cache_hit_on_dead_op_variant(ss_cfg):
    base = _parse(_wrap(["s2 = get_scalar(m0,0,0)", "s1 = s2 * s2"]), ss_cfg)
    variant = _parse(_wrap([
        "s2 = get_scalar(m0,0,0)", "s1 = s2 * s2", "s3 = s4 + s5"]), ss_cfg)
    cache = FitnessCache()
    calls = []
    first = cache.lookup_or_evaluate(base, _fake_evaluator(calls))
    second = cache.lookup_or_evaluate(variant, _fake_evaluator(calls))
    assert len(calls) == 1
    assert not first.cache_hit and second.cache_hit
    assert second.ic == first.ic
    assert cache.lookups == 2 and cache.hits == 1 and cache.evaluations == 1


def test_redundant_alpha_gets_sentinel_without_evaluation(ss_cfg):
    program = _parse(_wrap(["s1 = s3 + s2"]), ss_cfg)
    cache = FitnessCache()
    calls = []
    record = cache.lookup_or_evaluate(program, _fake_evaluator(calls))
    assert record.sentinel and record.ic == float("-inf")
    assert calls == []
    assert cache.pruned_redundant_alphas == 1
    assert len(cache) == 0


def test_counter_conservation_over_random_submissions(ss_cfg, small_panel):
    rng = np.random.default_rng(17)
    cache = FitnessCache()
    calls = []
    programs = [random_program(ss_cfg, rng) for _ in range(60)]
    for program in programs + programs:
        lookup_or_evaluate(program, cache, _fake_evaluator(calls))
        assert (cache.hits + cache.evaluations + cache.pruned_redundant_alphas
                == cache.lookups)
    assert cache.lookups == 120
    assert cache.evaluations == len(calls)


def test_evaluator_error_propagates_and_counts(ss_cfg):
    program = _parse(_wrap(["s1 = get_scalar(m0,0,0)"]), ss_cfg)
    cache = FitnessCache()

    def broken(pruned):
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        cache.lookup_or_evaluate(program, broken)
    assert cache.lookups == cache.evaluations == 1
    assert len(cache) == 0


def test_cache_round_trips_through_file(ss_cfg, tmp_path):
    program = _parse(_wrap(["s1 = get_scalar(m0,0,0)"]), ss_cfg)
    cache = FitnessCache()
    cache.lookup_or_evaluate(
        program, lambda p: FitnessRecord(ic=0.25, val_returns=np.array([0.1, -0.2])))
    path = tmp_path / "fitness.afc"
    assert save_cache(cache, path) == 1

    loaded = load_cache(path)
    calls = []
    record = loaded.lookup_or_evaluate(program, _fake_evaluator(calls))
    assert calls == []
    assert record.cache_hit
    assert record.ic == 0.25
    assert np.array_equal(record.val_returns, [0.1, -0.2])


def test_cache_file_rejects_bad_magic(tmp_path):
    path = tmp_path / "bogus.afc"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="bad header"):
        load_cache(path)
