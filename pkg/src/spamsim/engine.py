"""Shot-by-shot execution of flagged SPAM sequences.

Two execution paths produce statistically identical results: a scalar
interpreter (:func:`run_shot`) that walks one ion through the step list, and a
vectorized chunk runner used by :func:`run_experiment` for batches.  Batches
are split into fixed-size chunks of :data:`CHUNK_SHOTS` shots; every chunk
draws from its own generator seeded by ``SeedSequence(master_seed,
spawn_key=(batch, chunk))``, so aggregate results are identical for any worker
count and chunks can be replayed in isolation.

Timing conventions: metastable population may decay across the duration of
every cooling, pumping, transfer and detection step.  Decay during a detection
window leaves partial fluorescence in that window's counts (see
:func:`spamsim.detection.detect`); decay anywhere else simply strands the ion
in ``WrongGround`` before the next step.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence as SequenceType

import numpy as np

from .channels import (
    ErrorModel,
    apply_decay,
    apply_transfer,
    decay_probability,
    pulse_success_probability,
)
from .detection import CountHistogram, detect
from .sequence import (
    Cool,
    Deshelve,
    Detect,
    DetectLabel,
    Prepare,
    Pump,
    Rotate,
    Sequence,
    Transfer,
    build_sequence,
)
from .states import LOST, WRONG_GROUND, Manifold, StateLabel, encoding_catalog

CHUNK_SHOTS = 16384


class Mode(enum.Enum):
    POST_SELECT = "post-select"
    REPEAT_UNTIL_SUCCESS = "rus"


class FlagReason(enum.Enum):
    NONE = "None"
    R0_DARK = "R0Dark"
    R1_BRIGHT = "R1Bright"
    R2_BRIGHT = "R2Bright"
    R3_R4_DARK = "R3R4Dark"
    R4_DARK = "R4Dark"  # only raised in strict mode
    R5_DARK = "R5Dark"


_REASON_CODES = tuple(FlagReason)


def evaluate_flags(
    outcomes: SequenceType[bool], strict: bool = False
) -> tuple[bool, FlagReason, int | None]:
    """Apply the flag rules to six detection outcomes (True = bright).

    Flag order: R0 dark, R1 bright, R2 bright, R3 and R4 both dark, R5 dark.
    In strict mode the pattern R3 bright with R4 dark is additionally flagged
    (the readout transfers form a closed loop, so a genuine zero fluoresces at
    both R3 and R4).  Unflagged shots infer Zero iff R3 was bright.
    Returns ``(flagged, reason, inferred)``.
    """
    if len(outcomes) != 6:
        raise ValueError(f"need exactly six outcomes R0..R5, got {len(outcomes)}")
    r0, r1, r2, r3, r4, r5 = (bool(o) for o in outcomes)
    if not r0:
        return True, FlagReason.R0_DARK, None
    if r1:
        return True, FlagReason.R1_BRIGHT, None
    if r2:
        return True, FlagReason.R2_BRIGHT, None
    if not r3 and not r4:
        return True, FlagReason.R3_R4_DARK, None
    if strict and r3 and not r4:
        return True, FlagReason.R4_DARK, None
    if not r5:
        return True, FlagReason.R5_DARK, None
    return False, FlagReason.NONE, 0 if r3 else 1


def evaluate_flags_array(
    bright: np.ndarray, strict: bool = False
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`evaluate_flags` over a (6, n) outcome matrix.

    Returns ``(flagged, reason_code, inferred)`` where ``reason_code`` indexes
    :class:`FlagReason` in declaration order and ``inferred`` is 0/1.
    """
    if bright.shape[0] != 6:
        raise ValueError("outcome matrix must have six rows R0..R5")
    conditions = [
        ~bright[0],
        bright[1],
        bright[2],
        ~bright[3] & ~bright[4],
        bright[3] & ~bright[4] if strict else np.zeros(bright.shape[1], dtype=bool),
        ~bright[5],
    ]
    choices = [1, 2, 3, 4, 5, 6]
    reason = np.select(conditions, choices, default=0).astype(np.uint8)
    inferred = np.where(bright[3], 0, 1).astype(np.int8)
    return reason != 0, reason, inferred


# =========================================================================
# Scalar reference path
# =========================================================================

@dataclass(frozen=True)
class ShotRecord:
    prepared: int | None
    outcomes: tuple[bool, bool, bool, bool, bool, bool]
    flagged: bool
    flag_reason: FlagReason
    inferred: int | None
    attempts: int = 1
    trace: tuple[tuple[int, StateLabel], ...] | None = None


class _ScalarIon:
    """Mutable single-ion state for the scalar interpreter."""

    def __init__(self, state: StateLabel):
        self.state = state
        self.split = False  # equal superposition over the encoding basis
        self.p_zero = 0.0  # collapse probability recorded at rotation time

    def collapse(self, rng: np.random.Generator, zero: StateLabel, one: StateLabel) -> None:
        if not self.split:
            return
        self.state = zero if rng.random() < self.p_zero else one
        self.split = False


def _distinguishes(step, encoding, model) -> bool:
    """Whether a step treats the two basis states differently.

    A split ion must be projected before such a step.  Steps that act on both
    branches identically (shared-manifold decay, detections of two dark
    states) keep the superposition intact.
    """
    zero, one = encoding.zero, encoding.one
    same_manifold = zero.manifold is one.manifold
    decay_splits = not same_manifold and not model.decay.disabled
    if isinstance(step, Transfer):
        return step.from_state in (zero, one) or decay_splits
    if isinstance(step, Detect):
        return not same_manifold
    if isinstance(step, Pump):
        return zero.in_manifold(Manifold.A) or one.in_manifold(Manifold.A)
    if isinstance(step, Deshelve):
        return not same_manifold
    if isinstance(step, Cool):
        return decay_splits
    return False


def run_shot(
    sequence: Sequence,
    model: ErrorModel,
    rng: np.random.Generator,
    *,
    strict: bool = False,
    keep_trace: bool = False,
) -> ShotRecord:
    """Execute one shot and evaluate its flags.

    The ion starts as ``Lost`` with the model's per-shot loss probability and
    as ``WrongGround`` otherwise; optical pumping is what establishes a known
    state.  A ``Rotate`` step marks the qubit subspace as an equal
    superposition which is Born-projected at the first subsequent step that
    distinguishes the two basis states.
    """
    encoding = sequence.encoding
    ion = _ScalarIon(LOST if rng.random() < model.loss_probability_per_shot else WRONG_GROUND)
    outcomes: list[bool] = []
    trace: list[tuple[int, StateLabel]] = []

    for index, step in enumerate(sequence.steps):
        if ion.split and _distinguishes(step, encoding, model):
            ion.collapse(rng, encoding.zero, encoding.one)
        if isinstance(step, Cool):
            duration = model.cooling_duration if step.duration is None else step.duration
            ion.state, _ = apply_decay(ion.state, duration, model.decay, rng)
        elif isinstance(step, Pump):
            ion.state, _ = apply_decay(ion.state, model.pump.duration, model.decay, rng)
            if ion.state.fluoresces():
                failed = rng.random() < model.pump.error_rate
                ion.state = WRONG_GROUND if failed else model.pump.target
        elif isinstance(step, Transfer):
            pulse = model.pulse_for(step.from_state, step.to_state)
            duration = pulse.t_pi if step.duration is None else step.duration
            ion.state, _ = apply_decay(ion.state, duration, model.decay, rng)
            ion.state = apply_transfer(ion.state, pulse, duration, rng)
        elif isinstance(step, Detect):
            # Split metastable pairs decay as one; a decay destroys the split.
            was_b = ion.state.in_manifold(Manifold.B)
            bright, ion.state = detect(ion.state, model.detection, model.decay, rng)
            if was_b and ion.state is WRONG_GROUND:
                ion.split = False
            outcomes.append(bright)
        elif isinstance(step, Deshelve):
            if ion.state.in_manifold(Manifold.B):
                ion.state = WRONG_GROUND
                ion.split = False
        elif isinstance(step, Rotate):
            if ion.state in (encoding.zero, encoding.one):
                half = 0.5 * step.angle
                from_zero = ion.state == encoding.zero
                ion.p_zero = math.cos(half) ** 2 if from_zero else math.sin(half) ** 2
                ion.split = True
        else:
            raise TypeError(f"unknown step type {type(step).__name__}")
        if keep_trace:
            trace.append((index, ion.state))

    ion.collapse(rng, encoding.zero, encoding.one)
    flagged, reason, inferred = evaluate_flags(outcomes, strict)
    prepared = {Prepare.ZERO: 0, Prepare.ONE: 1}.get(sequence.prepare)
    if sequence.prepare is Prepare.SUPERPOSITION:
        prepared = (
            0 if ion.state == encoding.zero else 1 if ion.state == encoding.one else None
        )
    return ShotRecord(
        prepared=prepared,
        outcomes=tuple(outcomes),  # type: ignore[arg-type]
        flagged=flagged,
        flag_reason=reason,
        inferred=inferred,
        attempts=1,
        trace=tuple(trace) if keep_trace else None,
    )


# =========================================================================
# Vectorized chunk runner
# =========================================================================

_WG = 0
_LOST = 1


@dataclass
class _Compiled:
    """A sequence bound to a model: integer state table plus an op list."""

    labels: list[StateLabel]
    fluor: np.ndarray
    is_b: np.ndarray
    zero_id: int
    one_id: int
    ops: list[tuple]
    retry_at: int  # op index a repeat-until-success retry rewinds to
    prep_end: int  # op index of the R1 detection
    lifetime: float


def _compile(sequence: Sequence, model: ErrorModel) -> _Compiled:
    labels = [WRONG_GROUND, LOST]

    def intern(state: StateLabel) -> int:
        if state not in labels:
            labels.append(state)
        return labels.index(state)

    encoding = sequence.encoding
    zero_id, one_id = intern(encoding.zero), intern(encoding.one)
    intern(model.pump.target)
    for step in sequence.steps:
        if isinstance(step, Transfer):
            intern(step.from_state)
            intern(step.to_state)

    def p_dec(duration: float) -> float:
        return 0.0 if model.decay.disabled else decay_probability(duration, model.decay)

    ops: list[tuple] = []
    retry_at = prep_end = 0
    for index, step in enumerate(sequence.steps):
        needs_collapse = _distinguishes(step, encoding, model)
        if index == sequence.retry_start:
            retry_at = len(ops)
        if isinstance(step, Cool):
            duration = model.cooling_duration if step.duration is None else step.duration
            ops.append(("decay", p_dec(duration), needs_collapse))
        elif isinstance(step, Pump):
            ops.append(
                ("pump", model.pump.error_rate, intern(model.pump.target),
                 p_dec(model.pump.duration), needs_collapse)
            )
        elif isinstance(step, Transfer):
            pulse = model.pulse_for(step.from_state, step.to_state)
            duration = pulse.t_pi if step.duration is None else step.duration
            ops.append(
                ("transfer", intern(step.from_state), intern(step.to_state),
                 pulse_success_probability(duration, pulse), p_dec(duration),
                 needs_collapse)
            )
        elif isinstance(step, Detect):
            det = model.detection
            ops.append(
                ("detect", int(step.label), p_dec(det.total_duration), needs_collapse)
            )
            if step.label is DetectLabel.R1:
                prep_end = len(ops) - 1
        elif isinstance(step, Deshelve):
            ops.append(("deshelve", needs_collapse))
        elif isinstance(step, Rotate):
            half = 0.5 * step.angle
            ops.append(("rotate", math.cos(half) ** 2, math.sin(half) ** 2))
        else:
            raise TypeError(f"unknown step type {type(step).__name__}")

    fluor = np.array([label.fluoresces() for label in labels])
    is_b = np.array([label.in_manifold(Manifold.B) for label in labels])
    return _Compiled(
        labels=labels,
        fluor=fluor,
        is_b=is_b,
        zero_id=zero_id,
        one_id=one_id,
        ops=ops,
        retry_at=retry_at,
        prep_end=prep_end,
        lifetime=model.decay.lifetime,
    )


class _ChunkState:
    """All per-shot arrays of one chunk."""

    def __init__(self, size: int, rng: np.random.Generator,
                 loss_probability: float):
        self.rng = rng
        self.state = np.full(size, _WG, dtype=np.int16)
        if loss_probability > 0:
            self.state[rng.random(size) < loss_probability] = _LOST
        self.split = np.zeros(size, dtype=bool)
        self.p_zero = np.zeros(size)
        self.prepared = np.full(size, -1, dtype=np.int8)
        self.bright = np.zeros((6, size), dtype=bool)
        self.counts = np.zeros((6, size), dtype=np.int64)
        self.size = size


def _collapse(chunk: _ChunkState, compiled: _Compiled, mask: np.ndarray) -> None:
    m = mask & chunk.split
    if not m.any():
        return
    to_zero = chunk.rng.random(chunk.size) < chunk.p_zero
    chunk.state[m] = np.where(to_zero[m], compiled.zero_id, compiled.one_id)
    chunk.prepared[m] = np.where(to_zero[m], 0, 1)
    chunk.split[m] = False


def _vector_decay(chunk: _ChunkState, compiled: _Compiled, p: float,
                  active: np.ndarray) -> None:
    if p <= 0.0:
        return
    m = active & compiled.is_b[chunk.state]
    decayed = m & (chunk.rng.random(chunk.size) < p)
    chunk.state[decayed] = _WG
    chunk.split[decayed] = False


def _apply_op(chunk: _ChunkState, compiled: _Compiled, op: tuple,
              model: ErrorModel, active: np.ndarray) -> None:
    rng = chunk.rng
    kind = op[0]
    if kind == "decay":
        _, p, needs_collapse = op
        if needs_collapse:
            _collapse(chunk, compiled, active)
        _vector_decay(chunk, compiled, p, active)
    elif kind == "pump":
        _, error_rate, target_id, p, needs_collapse = op
        if needs_collapse:
            _collapse(chunk, compiled, active)
        _vector_decay(chunk, compiled, p, active)
        m = active & compiled.fluor[chunk.state]
        failed = m & (rng.random(chunk.size) < error_rate)
        chunk.state[m] = target_id
        chunk.state[failed] = _WG
    elif kind == "transfer":
        _, from_id, to_id, p_success, p, needs_collapse = op
        if needs_collapse:
            _collapse(chunk, compiled, active)
        _vector_decay(chunk, compiled, p, active)
        moved = active & (chunk.state == from_id) & (rng.random(chunk.size) < p_success)
        chunk.state[moved] = to_id
    elif kind == "detect":
        _, label, p, needs_collapse = op
        if needs_collapse:
            _collapse(chunk, compiled, active)
        det = model.detection
        fraction = compiled.fluor[chunk.state].astype(float)
        if p > 0.0:
            in_b = active & compiled.is_b[chunk.state]
            decayed = in_b & (rng.random(chunk.size) < p)
            instant = -compiled.lifetime * np.log1p(-rng.random(chunk.size) * p)
            instant = np.minimum(instant, det.total_duration)
            fraction[decayed] = (det.total_duration - instant[decayed]) / det.total_duration
            chunk.state[decayed] = _WG
            chunk.split[decayed] = False
        lam = fraction * det.mean_bright + (1.0 - fraction) * det.mean_dark
        values = rng.poisson(lam).astype(float)
        if det.read_noise_sigma > 0:
            values += rng.normal(0.0, det.read_noise_sigma, chunk.size)
        values = np.rint(values).astype(np.int64)
        chunk.counts[label, active] = values[active]
        chunk.bright[label, active] = values[active] > det.threshold
    elif kind == "deshelve":
        _, needs_collapse = op
        if needs_collapse:
            _collapse(chunk, compiled, active)
        m = active & compiled.is_b[chunk.state]
        chunk.state[m] = _WG
        chunk.split[m] = False
    elif kind == "rotate":
        _, pz_from_zero, pz_from_one = op
        m = active & ((chunk.state == compiled.zero_id) | (chunk.state == compiled.one_id))
        chunk.p_zero[m] = np.where(
            chunk.state[m] == compiled.zero_id, pz_from_zero, pz_from_one
        )
        chunk.split[m] = True
    else:
        raise ValueError(f"unknown opcode {kind!r}")


@dataclass
class _ChunkResult:
    size: int
    kept: np.ndarray
    wrong: np.ndarray
    reasons: np.ndarray
    accepted_zero: int
    accepted_one: int
    prepared_counts: np.ndarray  # shots collapsed/prepared as [zero, one]
    attempts_total: int
    attempts_max: int
    label_counters: list[dict[int, int]] | None
    accepted_r3: dict[int, int] | None
    records: tuple[np.ndarray, ...] | None


def _stage_masks(bright: np.ndarray, strict: bool) -> list[np.ndarray]:
    keep = np.ones(bright.shape[1], dtype=bool)
    stages = [keep]
    keep = keep & bright[0]
    stages.append(keep)
    keep = keep & ~bright[1]
    stages.append(keep)
    keep = keep & ~bright[2]
    stages.append(keep)
    keep = keep & (bright[4] if strict else (bright[3] | bright[4]))
    stages.append(keep)
    keep = keep & bright[5]
    stages.append(keep)
    return stages


def _count_values(values: np.ndarray) -> dict[int, int]:
    uniques, counts = np.unique(values, return_counts=True)
    return {int(v): int(c) for v, c in zip(uniques, counts)}


def _run_chunk(
    compiled: _Compiled,
    model: ErrorModel,
    size: int,
    seed_seq: np.random.SeedSequence,
    prepared_code: int,
    mode: Mode,
    max_attempts: int,
    strict: bool,
    collect_histograms: bool,
    keep_records: bool,
) -> _ChunkResult:
    rng = np.random.default_rng(seed_seq)
    chunk = _ChunkState(size, rng, model.loss_probability_per_shot)
    if prepared_code >= 0:
        chunk.prepared[:] = prepared_code
    everyone = np.ones(size, dtype=bool)
    attempts = np.ones(size, dtype=np.int32)

    ops = compiled.ops
    if mode is Mode.REPEAT_UNTIL_SUCCESS and max_attempts > 1:
        for op in ops[: compiled.retry_at]:
            _apply_op(chunk, compiled, op, model, everyone)
        prep_ops = ops[compiled.retry_at : compiled.prep_end + 1]
        for op in prep_ops:
            _apply_op(chunk, compiled, op, model, everyone)
        for _ in range(max_attempts - 1):
            retry = chunk.bright[int(DetectLabel.R1)]
            if not retry.any():
                break
            attempts[retry] += 1
            for op in prep_ops:
                _apply_op(chunk, compiled, op, model, retry)
        for op in ops[compiled.prep_end + 1 :]:
            _apply_op(chunk, compiled, op, model, everyone)
    else:
        for op in ops:
            _apply_op(chunk, compiled, op, model, everyone)
    _collapse(chunk, compiled, everyone)

    flagged, reason, inferred = evaluate_flags_array(chunk.bright, strict)
    stages = _stage_masks(chunk.bright, strict)
    valid = chunk.prepared >= 0
    wrong_mask = valid & (inferred != chunk.prepared)
    kept = np.array([int(s.sum()) for s in stages], dtype=np.int64)
    wrong = np.array([int((s & wrong_mask).sum()) for s in stages], dtype=np.int64)
    accepted = stages[5]

    label_counters = None
    accepted_r3 = None
    if collect_histograms:
        label_counters = [_count_values(chunk.counts[i]) for i in range(6)]
        accepted_r3 = _count_values(chunk.counts[3, accepted])

    records = None
    if keep_records:
        records = (
            chunk.prepared.copy(),
            chunk.bright.copy(),
            flagged,
            reason,
            inferred,
            attempts.copy(),
        )

    return _ChunkResult(
        size=size,
        kept=kept,
        wrong=wrong,
        reasons=np.bincount(reason, minlength=len(_REASON_CODES)),
        accepted_zero=int((accepted & (inferred == 0)).sum()),
        accepted_one=int((accepted & (inferred == 1)).sum()),
        prepared_counts=np.array(
            [int((chunk.prepared == 0).sum()), int((chunk.prepared == 1).sum())]
        ),
        attempts_total=int(attempts.sum()),
        attempts_max=int(attempts.max()),
        label_counters=label_counters,
        accepted_r3=accepted_r3,
        records=records,
    )


# =========================================================================
# Batch experiments
# =========================================================================

@dataclass(frozen=True)
class ExperimentConfig:
    """One batch experiment: what to prepare, how often, and how to retry.

    ``shots`` counts shots per prepared state.  With ``interleave`` (the
    default) both basis states are prepared in alternating batches; otherwise
    only ``prepare`` runs.  ``transfer_durations`` overrides the duration of
    specific pulses, keyed by oriented (from, to) state pairs; the bias scans
    use this to detune single transfers away from their calibrated length.
    """

    model: ErrorModel
    encoding: str = "M"
    shots: int = 1_000_000
    mode: Mode = Mode.POST_SELECT
    max_attempts: int = 1
    seed: int = 0
    interleave: bool = True
    prepare: Prepare = Prepare.ZERO
    strict_flags: bool = False
    transfer_durations: tuple[tuple[tuple[StateLabel, StateLabel], float], ...] = ()

    def __post_init__(self) -> None:
        encoding_catalog(self.encoding)
        if self.shots < 1:
            raise ValueError(f"shots must be >= 1, got {self.shots}")
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.mode is Mode.POST_SELECT and self.max_attempts != 1:
            raise ValueError("max_attempts only applies to repeat-until-success mode")


@dataclass
class BatchTally:
    """Aggregated outcomes for all shots of one prepared state."""

    prepared: str
    shots: int
    kept: tuple[int, ...]
    wrong: tuple[int, ...]
    reasons: dict[str, int]
    accepted_zero: int
    accepted_one: int
    prepared_zero: int
    prepared_one: int
    attempts_total: int
    attempts_max: int

    @property
    def accepted(self) -> int:
        return self.kept[5]

    @property
    def errors(self) -> int:
        return self.wrong[5]

    @property
    def rejected_fraction(self) -> float:
        return 1.0 - self.kept[5] / self.shots


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    states: dict[str, BatchTally]
    histograms: dict[str, CountHistogram] = field(default_factory=dict)
    accepted_r3: dict[str, CountHistogram] = field(default_factory=dict)
    records: dict[str, dict[str, np.ndarray]] | None = None


def _merge_counter(into: dict[int, int], other: dict[int, int]) -> None:
    for value, count in other.items():
        into[value] = into.get(value, 0) + count


def _counter_histogram(counter: dict[int, int], label: str) -> CountHistogram | None:
    if not counter:
        return None
    bins = sorted(counter)
    return CountHistogram(tuple(bins), tuple(counter[b] for b in bins), label)


def run_experiment(
    config: ExperimentConfig,
    *,
    workers: int = 1,
    collect_histograms: bool = True,
    keep_records: bool = False,
) -> ExperimentResult:
    """Run the configured batches and aggregate per-state tallies.

    Results are bitwise independent of ``workers``: work is split into fixed
    chunks whose generators derive from the master seed and the chunk index
    alone, and chunk results merge in index order.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    model = config.model
    if config.interleave:
        batches = [(Prepare.ZERO, 0), (Prepare.ONE, 1)]
    else:
        codes = {Prepare.ZERO: 0, Prepare.ONE: 1, Prepare.SUPERPOSITION: -1}
        batches = [(config.prepare, codes[config.prepare])]

    tasks = []
    for batch_index, (prepare, code) in enumerate(batches):
        sequence = build_sequence(config.encoding, prepare)
        if config.transfer_durations:
            sequence = sequence.with_transfer_durations(dict(config.transfer_durations))
        compiled = _compile(sequence, model)
        remaining = config.shots
        chunk_index = 0
        while remaining > 0:
            size = min(CHUNK_SHOTS, remaining)
            seed_seq = np.random.SeedSequence(
                entropy=config.seed, spawn_key=(batch_index, chunk_index)
            )
            tasks.append((batch_index, chunk_index, compiled, size, seed_seq, code))
            remaining -= size
            chunk_index += 1

    def execute(task) -> tuple[int, int, _ChunkResult]:
        batch_index, chunk_index, compiled, size, seed_seq, code = task
        result = _run_chunk(
            compiled, model, size, seed_seq, code, config.mode,
            config.max_attempts, config.strict_flags, collect_histograms,
            keep_records,
        )
        return batch_index, chunk_index, result

    if workers == 1:
        outputs = [execute(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(execute, tasks))
    outputs.sort(key=lambda item: (item[0], item[1]))

    states: dict[str, BatchTally] = {}
    label_counters: list[dict[int, int]] = [dict() for _ in range(6)]
    accepted_counters: dict[str, dict[int, int]] = {}
    records: dict[str, dict[str, np.ndarray]] = {}
    for batch_index, (prepare, code) in enumerate(batches):
        chunk_results = [r for b, _, r in outputs if b == batch_index]
        kept = np.sum([r.kept for r in chunk_results], axis=0)
        wrong = np.sum([r.wrong for r in chunk_results], axis=0)
        reasons = np.sum([r.reasons for r in chunk_results], axis=0)
        name = prepare.value
        states[name] = BatchTally(
            prepared=name,
            shots=int(sum(r.size for r in chunk_results)),
            kept=tuple(int(k) for k in kept),
            wrong=tuple(int(w) for w in wrong),
            reasons={
                reason.value: int(count)
                for reason, count in zip(_REASON_CODES, reasons)
            },
            accepted_zero=sum(r.accepted_zero for r in chunk_results),
            accepted_one=sum(r.accepted_one for r in chunk_results),
            prepared_zero=sum(int(r.prepared_counts[0]) for r in chunk_results),
            prepared_one=sum(int(r.prepared_counts[1]) for r in chunk_results),
            attempts_total=sum(r.attempts_total for r in chunk_results),
            attempts_max=max(r.attempts_max for r in chunk_results),
        )
        if collect_histograms:
            merged: dict[int, int] = {}
            for result in chunk_results:
                for index in range(6):
                    _merge_counter(label_counters[index], result.label_counters[index])
                _merge_counter(merged, result.accepted_r3)
            accepted_counters[name] = merged
        if keep_records:
            records[name] = _stack_records(chunk_results)

    histograms = {}
    accepted_r3 = {}
    if collect_histograms:
        for index in range(6):
            hist = _counter_histogram(label_counters[index], f"R{index}")
            if hist is not None:
                histograms[f"R{index}"] = hist
        for name, counter in accepted_counters.items():
            hist = _counter_histogram(counter, f"R3|prepared={name},accepted")
            if hist is not None:
                accepted_r3[name] = hist

    return ExperimentResult(
        config=config,
        states=states,
        histograms=histograms,
        accepted_r3=accepted_r3,
        records=records if keep_records else None,
    )


def _stack_records(chunk_results: Iterable[_ChunkResult]) -> dict[str, np.ndarray]:
    prepared, bright, flagged, reason, inferred, attempts = zip(
        *(r.records for r in chunk_results)
    )
    return {
        "prepared": np.concatenate(prepared),
        "bright": np.concatenate(bright, axis=1),
        "flagged": np.concatenate(flagged),
        "reason": np.concatenate(reason),
        "inferred": np.concatenate(inferred),
        "attempts": np.concatenate(attempts),
    }


def reason_from_code(code: int) -> FlagReason:
    """Map a reason code from :func:`evaluate_flags_array` back to the enum."""
    return _REASON_CODES[code]
