"""Dead-code analysis, redundancy detection, fingerprints, and fitness caching.

An instruction is live when its output can reach the prediction (the last
write to s1 in predict) through the register dataflow, including the
inter-timestep cycle: update-written registers feed the next step's predict
and predict-written registers feed the same step's update. Liveness is a
fixpoint over that back edge, conservatively assuming every step trains.

A whole alpha is redundant when no live predict/update instruction reads
the environment-written feature matrix m0, in which case its predictions
cannot depend on market data at all.
"""
from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .ops import CATALOG, COMPONENTS, OPCODE_IDS, PREDICT, SETUP, UPDATE, Bank, Imm
from .program import FEATURES, LABEL, PREDICTION, AlphaProgram, Instruction

# register -> bit position; bank offsets leave room for any plausible config
_BANK_OFFSET = {Bank.SCALAR: 0, Bank.VECTOR: 64, Bank.MATRIX: 128}


def _bit(reg) -> int:
    return 1 << (_BANK_OFFSET[reg.bank] + reg.index)


_LABEL_BIT = _bit(LABEL)
_PREDICTION_BIT = _bit(PREDICTION)
_FEATURES_BIT = _bit(FEATURES)
_ENV_BITS = _LABEL_BIT | _FEATURES_BIT  # rewritten by the environment each step


def _masks(instrs) -> list[tuple[int, int]]:
    out = []
    for ins in instrs:
        in_bits = 0
        for reg in ins.inputs:
            in_bits |= _bit(reg)
        out.append((_bit(ins.out), in_bits))
    return out


def _backward(masks, live: int):
    """One backward liveness pass; returns (per-instruction marks, live-at-entry)."""
    marks = [False] * len(masks)
    for i in range(len(masks) - 1, -1, -1):
        out_bit, in_bits = masks[i]
        if live & out_bit:
            marks[i] = True
            live = (live & ~out_bit) | in_bits
    return marks, live


def _analyze(program: AlphaProgram):
    """Compute live-instruction marks per component plus feature reachability."""
    setup_masks = _masks(program.setup)
    predict_masks = _masks(program.predict)
    update_masks = _masks(program.update)

    live_entry = 0  # registers live at the start of a step, before env writes
    while True:
        _, upd_entry = _backward(update_masks, live_entry & ~_ENV_BITS)
        live_exit_predict = upd_entry | (live_entry & ~_ENV_BITS) | _PREDICTION_BIT
        _, pred_entry = _backward(predict_masks, live_exit_predict)
        merged = live_entry | pred_entry
        if merged == live_entry:
            break
        live_entry = merged

    upd_marks, upd_entry = _backward(update_masks, live_entry & ~_ENV_BITS)
    live_exit_predict = upd_entry | (live_entry & ~_ENV_BITS) | _PREDICTION_BIT
    pred_marks, _ = _backward(predict_masks, live_exit_predict)
    setup_marks, _ = _backward(setup_masks, live_entry & ~_ENV_BITS)
    marks = {SETUP: setup_marks, PREDICT: pred_marks, UPDATE: upd_marks}

    # Does any live instruction read the environment-written m0? Walk predict
    # then update in execution order; a program write to m0 shadows the
    # feature matrix until the next step rewrites it.
    feature_reach = False
    env_fresh = True
    for comp in (PREDICT, UPDATE):
        for i, ins in enumerate(program.component(comp)):
            if env_fresh and marks[comp][i] and FEATURES in ins.inputs:
                feature_reach = True
                break
            if ins.out == FEATURES:
                env_fresh = False
        if feature_reach:
            break

    return marks, feature_reach


def prune_redundant_ops(program: AlphaProgram):
    """Strip instructions that cannot influence any prediction.

    Returns the pruned program and the removed (component, index) pairs. A
    pruned component may fall below the min-op bound, including to empty;
    the pruned program produces bit-identical predictions to the original.
    """
    marks, _ = _analyze(program)
    kept = {}
    removed: list[tuple[str, int]] = []
    for comp in COMPONENTS:
        instrs = program.component(comp)
        kept[comp] = tuple(ins for i, ins in enumerate(instrs) if marks[comp][i])
        removed += [(comp, i) for i in range(len(instrs)) if not marks[comp][i]]
    return AlphaProgram(kept[SETUP], kept[PREDICT], kept[UPDATE]), tuple(removed)


def is_redundant_alpha(program: AlphaProgram) -> bool:
    """True when no dataflow path connects the feature matrix to the prediction."""
    _, feature_reach = _analyze(program)
    return not feature_reach


def fingerprint(program: AlphaProgram) -> bytes:
    """128-bit digest of the canonical instruction encoding.

    Callers fingerprint the pruned form, so programs differing only in dead
    code collide intentionally; immediates hash by stored bit pattern.
    """
    h = hashlib.blake2b(digest_size=16)
    for comp in COMPONENTS:
        h.update(b"|" + comp.encode())
        for ins in program.component(comp):
            h.update(struct.pack("<H", OPCODE_IDS[ins.opcode]))
            h.update(_reg_bytes(ins.out))
            for reg in ins.inputs:
                h.update(_reg_bytes(reg))
            for kind, value in zip(CATALOG[ins.opcode].imms, ins.immediates):
                if kind is Imm.FLOAT:
                    h.update(struct.pack("<d", float(value)))
                else:
                    h.update(struct.pack("<q", int(value)))
    return h.digest()


def _reg_bytes(reg) -> bytes:
    return struct.pack("<BH", _BANK_OFFSET[reg.bank] // 64, reg.index)


@dataclass
class CacheCounters:
    lookups: int = 0
    hits: int = 0
    evaluations: int = 0
    pruned_redundant_alphas: int = 0


class FitnessCache:
    """Fingerprint-keyed store of fitness records.

    Safe for concurrent lookup_or_evaluate calls; duplicate concurrent
    evaluations of one fingerprint are allowed and the last write wins.
    Counters satisfy hits + evaluations + pruned_redundant_alphas == lookups.
    """

    def __init__(self):
        self._records: dict[bytes, object] = {}
        self._lock = threading.Lock()
        self.counters = CacheCounters()

    def __len__(self) -> int:
        return len(self._records)

    @property
    def lookups(self):
        return self.counters.lookups

    @property
    def hits(self):
        return self.counters.hits

    @property
    def evaluations(self):
        return self.counters.evaluations

    @property
    def pruned_redundant_alphas(self):
        return self.counters.pruned_redundant_alphas

    def lookup_or_evaluate(self, program: AlphaProgram, evaluator):
        """Prune, reject redundant alphas, then return a cached or fresh record.

        ``evaluator`` receives the pruned program and must return a
        FitnessRecord; evaluator failures propagate (and still count as
        evaluations) while the cache stays consistent.
        """
        from .evaluation import sentinel_record  # local import, avoids a cycle

        with self._lock:
            self.counters.lookups += 1
        pruned, removed = prune_redundant_ops(program)
        if is_redundant_alpha(program):
            with self._lock:
                self.counters.pruned_redundant_alphas += 1
            return sentinel_record(pruned_op_count=len(removed))
        fp = fingerprint(pruned)
        with self._lock:
            record = self._records.get(fp)
            if record is not None:
                self.counters.hits += 1
                return replace(record, cache_hit=True)
            self.counters.evaluations += 1
        record = evaluator(pruned)
        record = replace(record, fingerprint=fp.hex(), pruned_op_count=len(removed))
        with self._lock:
            self._records[fp] = record
        return record

    def records(self):
        with self._lock:
            return dict(self._records)


def lookup_or_evaluate(program: AlphaProgram, cache: FitnessCache, evaluator):
    return cache.lookup_or_evaluate(program, evaluator)


_CACHE_MAGIC = b"AFC1"


def save_cache(cache: FitnessCache, path) -> int:
    """Persist (fingerprint, ic, validation returns) records; returns the count."""
    records = cache.records()
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<I", len(records)))
        for fp, rec in sorted(records.items()):
            returns = np.asarray(rec.val_returns, dtype="<f8")
            fh.write(fp)
            fh.write(struct.pack("<d", rec.ic))
            fh.write(struct.pack("<I", returns.size))
            fh.write(returns.tobytes())
    return len(records)


def load_cache(path) -> FitnessCache:
    from .evaluation import SENTINEL_IC, FitnessRecord

    cache = FitnessCache()
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CACHE_MAGIC:
            raise ValueError(f"not a fitness cache file (bad header {magic!r})")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            fp = fh.read(16)
            (ic,) = struct.unpack("<d", fh.read(8))
            (n,) = struct.unpack("<I", fh.read(4))
            returns = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
            cache._records[fp] = FitnessRecord(
                ic=ic, val_returns=returns, sentinel=(ic == SENTINEL_IC),
                fingerprint=fp.hex())
    return cache
