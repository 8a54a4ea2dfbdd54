"""Closed-form predictors and estimators for flagged SPAM experiments.

Everything here is deterministic given its inputs: Wilson score intervals,
rejection-fraction predictions obtained by propagating failure events through
the flag rules, the per-detection error budget, post-selection bias formulas
and their inversions, metastable lifetime fitting, and the summary statistics
derived from a batch run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.optimize import curve_fit

from .channels import (
    ErrorModel,
    decay_probability,
    default_model,
    pulse_success_probability,
)
from .engine import (
    ExperimentConfig,
    ExperimentResult,
    FlagReason,
    evaluate_flags,
    run_experiment,
)
from .sequence import (
    Cool,
    Deshelve,
    Detect,
    Prepare,
    Pump,
    Rotate,
    Sequence,
    Transfer,
)
from .states import A_2_0, B_1_M1, B_2_M1, B_2_P1, LOST, WRONG_GROUND, Manifold, StateLabel


# =========================================================================
# Binomial intervals
# =========================================================================

@dataclass(frozen=True)
class RateEstimate:
    """A binomial proportion with its Wilson score interval."""

    successes: int
    trials: int
    point: float
    interval: tuple[float, float]
    z: float

    @property
    def half_width(self) -> float:
        return 0.5 * (self.interval[1] - self.interval[0])


def wilson_interval(successes: int, trials: int, z: float = 1.0) -> RateEstimate:
    """Wilson score interval for ``successes`` out of ``trials`` at quantile ``z``.

    Center (p + z^2/2n) / (1 + z^2/n), half-width
    (z / (1 + z^2/n)) * sqrt(p(1-p)/n + z^2/4n^2), clamped to [0, 1].
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not 0 <= successes <= trials:
        raise ValueError(f"successes must lie in [0, {trials}], got {successes}")
    if z <= 0:
        raise ValueError(f"z must be positive, got {z}")
    p_hat = successes / trials
    scale = 1.0 + z * z / trials
    center = (p_hat + z * z / (2 * trials)) / scale
    half = (z / scale) * math.sqrt(p_hat * (1.0 - p_hat) / trials + z * z / (4 * trials * trials))
    lo = max(0.0, center - half)
    hi = min(1.0, center + half)
    return RateEstimate(successes, trials, p_hat, (lo, hi), z)


# =========================================================================
# Rejection-fraction prediction
# =========================================================================

@dataclass(frozen=True)
class RejectionContribution:
    """One failure event and whether its lone occurrence raises a flag."""

    step_index: int
    description: str
    probability: float
    raises_flag: bool
    flag_reason: FlagReason


def _transfer_duration(step: Transfer, model: ErrorModel) -> float:
    pulse = model.pulse_for(step.from_state, step.to_state)
    return pulse.t_pi if step.duration is None else step.duration


def _outcomes_with_failures(
    sequence: Sequence,
    model: ErrorModel,
    failed_steps: frozenset[int],
    decayed_steps: frozenset[int],
    lost: bool,
) -> list[bool]:
    """Walk the sequence deterministically with the given events forced.

    A failed pump leaves WrongGround; a failed transfer leaves the ion where
    it was; a decay event strands the ion in WrongGround at the start of that
    step (so a decay during a detection window reads bright).  Everything else
    follows the ideal path.
    """
    state = LOST if lost else WRONG_GROUND
    outcomes: list[bool] = []
    for index, step in enumerate(sequence.steps):
        if index in decayed_steps and state.in_manifold(Manifold.B):
            state = WRONG_GROUND
        if isinstance(step, Cool):
            pass
        elif isinstance(step, Pump):
            if state.fluoresces():
                state = WRONG_GROUND if index in failed_steps else model.pump.target
        elif isinstance(step, Transfer):
            if state == step.from_state and index not in failed_steps:
                state = step.to_state
        elif isinstance(step, Detect):
            outcomes.append(state.fluoresces())
        elif isinstance(step, Deshelve):
            if state.in_manifold(Manifold.B):
                state = WRONG_GROUND
        elif isinstance(step, Rotate):
            raise ValueError("rejection prediction is defined for basis-state preparations only")
    return outcomes


def rejection_contributions(
    sequence: Sequence,
    model: ErrorModel,
    *,
    strict: bool = False,
    include_decay: bool = False,
) -> list[RejectionContribution]:
    """Classify every lone failure event by propagating it through the flags.

    Pump and addressed-transfer failures are always listed; with
    ``include_decay`` a decay event is added for each step whose duration the
    ideal path spends in the metastable manifold.  Events whose lone failure
    leaves the shot unflagged appear with ``raises_flag=False`` (a transfer
    failure can self-correct when the same pulse is addressed again later).
    """
    events: list[tuple[int, str, float, frozenset[int], frozenset[int], bool]] = []
    if model.loss_probability_per_shot > 0:
        events.append(
            (-1, "ion loss", model.loss_probability_per_shot,
             frozenset(), frozenset(), True)
        )
    state = WRONG_GROUND
    for index, step in enumerate(sequence.steps):
        if isinstance(step, Rotate):
            raise ValueError("rejection prediction is defined for basis-state preparations only")
        in_b = state.in_manifold(Manifold.B)
        if include_decay and in_b and not model.decay.disabled:
            duration = None
            if isinstance(step, Cool):
                duration = model.cooling_duration if step.duration is None else step.duration
            elif isinstance(step, Transfer):
                duration = _transfer_duration(step, model)
            elif isinstance(step, Detect):
                duration = model.detection.total_duration
            elif isinstance(step, Pump):
                duration = model.pump.duration
            if duration:
                events.append(
                    (index, f"decay during step {index} ({type(step).__name__})",
                     decay_probability(duration, model.decay),
                     frozenset(), frozenset({index}), False)
                )
        if isinstance(step, Pump) and state.fluoresces():
            events.append(
                (index, "optical pumping failure", model.pump.error_rate,
                 frozenset({index}), frozenset(), False)
            )
            state = model.pump.target
        elif isinstance(step, Transfer) and state == step.from_state:
            pulse = model.pulse_for(step.from_state, step.to_state)
            duration = _transfer_duration(step, model)
            failure = 1.0 - pulse_success_probability(duration, pulse)
            events.append(
                (index, f"transfer {step.from_state} -> {step.to_state} failure",
                 failure, frozenset({index}), frozenset(), False)
            )
            state = step.to_state
        elif isinstance(step, Deshelve) and in_b:
            state = WRONG_GROUND

    contributions = []
    for index, description, probability, failed, decayed, lost in events:
        outcomes = _outcomes_with_failures(sequence, model, failed, decayed, lost)
        flagged, reason, _ = evaluate_flags(outcomes, strict)
        contributions.append(
            RejectionContribution(index, description, probability, flagged, reason)
        )
    return contributions


def predict_rejection(
    sequence: Sequence,
    model: ErrorModel,
    *,
    strict: bool = False,
    include_decay: bool = False,
) -> float:
    """First-order rejected fraction: the sum of all flagging lone-failure rates."""
    return sum(
        c.probability
        for c in rejection_contributions(
            sequence, model, strict=strict, include_decay=include_decay
        )
        if c.raises_flag
    )


def predict_rejection_exact(
    sequence: Sequence,
    model: ErrorModel,
    *,
    strict: bool = False,
    max_events: int = 20,
) -> float:
    """Exact rejected fraction under the channel model (no decay, no read noise).

    Enumerates every success/failure combination of the pump and transfer
    events by branching wherever the walked state addresses a fallible
    channel, and sums the probability of the flagged leaves.
    """
    event_count = sum(
        isinstance(step, (Pump, Transfer)) for step in sequence.steps
    ) + (1 if model.loss_probability_per_shot > 0 else 0)
    if event_count > max_events:
        raise ValueError(
            f"{event_count} stochastic events exceed the enumeration limit {max_events}"
        )

    steps = sequence.steps
    total = 0.0

    def walk(index: int, state: StateLabel, probability: float, outcomes: tuple[bool, ...]) -> None:
        nonlocal total
        if probability == 0.0:
            return
        if index == len(steps):
            flagged, _, _ = evaluate_flags(outcomes, strict)
            if flagged:
                total += probability
            return
        step = steps[index]
        if isinstance(step, Cool):
            walk(index + 1, state, probability, outcomes)
        elif isinstance(step, Pump):
            if state.fluoresces():
                rate = model.pump.error_rate
                walk(index + 1, model.pump.target, probability * (1.0 - rate), outcomes)
                if rate > 0:
                    walk(index + 1, WRONG_GROUND, probability * rate, outcomes)
            else:
                walk(index + 1, state, probability, outcomes)
        elif isinstance(step, Transfer):
            if state == step.from_state:
                pulse = model.pulse_for(step.from_state, step.to_state)
                success = pulse_success_probability(_transfer_duration(step, model), pulse)
                walk(index + 1, step.to_state, probability * success, outcomes)
                if success < 1.0:
                    walk(index + 1, state, probability * (1.0 - success), outcomes)
            else:
                walk(index + 1, state, probability, outcomes)
        elif isinstance(step, Detect):
            walk(index + 1, state, probability, outcomes + (state.fluoresces(),))
        elif isinstance(step, Deshelve):
            after = WRONG_GROUND if state.in_manifold(Manifold.B) else state
            walk(index + 1, after, probability, outcomes)
        elif isinstance(step, Rotate):
            raise ValueError("rejection prediction is defined for basis-state preparations only")
        else:
            raise TypeError(f"unknown step type {type(step).__name__}")

    loss = model.loss_probability_per_shot
    if loss > 0:
        walk(0, LOST, loss, ())
    walk(0, WRONG_GROUND, 1.0 - loss, ())
    return total


# =========================================================================
# Detection error budget
# =========================================================================

@dataclass(frozen=True)
class DetectionErrorBudget:
    bright_state_error: float
    dark_state_error: float
    average: float


def detection_error_budget(
    bright_error: float, dark_optical_error: float, decay_error: float
) -> DetectionErrorBudget:
    """Combine optical misclassification with in-window decay for one detection.

    The bright state is limited by its optical error alone; the dark state
    adds the decay probability times the chance the resulting fluorescence is
    actually read as bright.
    """
    for name, value in (
        ("bright_error", bright_error),
        ("dark_optical_error", dark_optical_error),
        ("decay_error", decay_error),
    ):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must be a probability, got {value}")
    dark_total = dark_optical_error + decay_error * (1.0 - bright_error)
    return DetectionErrorBudget(bright_error, dark_total, 0.5 * (bright_error + dark_total))


# =========================================================================
# Post-selection bias
# =========================================================================

def bias_closed_form(gamma: float, p_zero: float) -> float:
    """Observable bias <Z_meas> - <Z> for acceptance ratio gamma = P(a|0)/P(a|1)."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if not 0.0 <= p_zero <= 1.0:
        raise ValueError(f"p_zero must be a probability, got {p_zero}")
    p_one = 1.0 - p_zero
    return (gamma * p_zero - p_one) / (gamma * p_zero + p_one) - (p_zero - p_one)


@dataclass(frozen=True)
class BiasModel:
    """Acceptance-skewed measurement of Z = |0><0| - |1><1|."""

    gamma: float
    p_zero: float

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.p_zero <= 1.0:
            raise ValueError(f"p_zero must be a probability, got {self.p_zero}")

    @property
    def bias(self) -> float:
        return bias_closed_form(self.gamma, self.p_zero)


def correct_bias(
    p_bright_accepted: float,
    p_bright_accepted_given_zero: float,
    p_bright_accepted_given_one: float,
) -> tuple[float, float, float]:
    """Invert the acceptance skew from joint bright-and-accepted probabilities.

    Given P(b,a) for the state under test and the calibrations P(b,a|0) and
    P(b,a|1) from preparing each basis state, returns (P(0), P(1), <Z>) with
    P(0) = (P(b,a) - P(b,a|1)) / (P(b,a|0) - P(b,a|1)) and P(1) = 1 - P(0).
    """
    denominator = p_bright_accepted_given_zero - p_bright_accepted_given_one
    if denominator == 0:
        raise ValueError("the two conditional probabilities must differ")
    p_zero = (p_bright_accepted - p_bright_accepted_given_one) / denominator
    z = (
        2.0 * p_bright_accepted
        - p_bright_accepted_given_one
        - p_bright_accepted_given_zero
    ) / denominator
    return p_zero, 1.0 - p_zero, z


def correct_bias_simplified(
    p_bright_accepted: float,
    p_dark_accepted: float,
    p_accept_given_zero: float,
    p_accept_given_one: float,
) -> tuple[float, float, float]:
    """Acceptance-only inversion, valid when in-window decay is negligible.

    P(0) = P(b,a)/P(a|0) and P(1) = P(d,a)/P(a|1); the joint probabilities
    factor as P(b|a)P(a) and P(d|a)P(a).
    """
    if p_accept_given_zero <= 0 or p_accept_given_one <= 0:
        raise ValueError("per-state acceptance probabilities must be positive")
    p_zero = p_bright_accepted / p_accept_given_zero
    p_one = p_dark_accepted / p_accept_given_one
    return p_zero, p_one, p_zero - p_one


@dataclass(frozen=True)
class BiasFamily:
    """One bias-scan curve: which pulses are detuned and which state suffers.

    Detuning the listed pulses to duration t makes the affected basis state's
    acceptance sin^2(pi t / 2 t_pi) per pulse, so a one-pulse family follows a
    sin^2 law and a two-pulse family sin^4.
    """

    name: str
    encoding: str
    scanned: tuple[tuple[StateLabel, StateLabel], ...]
    dipped_state: int

    def acceptance(self, ratio: float) -> float:
        single = math.sin(0.5 * math.pi * ratio) ** 2
        return single ** len(self.scanned)

    def gamma(self, ratio: float) -> float:
        acceptance = self.acceptance(ratio)
        if acceptance == 0:
            raise ValueError(f"acceptance vanishes at t/t_pi = {ratio}")
        return acceptance if self.dipped_state == 0 else 1.0 / acceptance

    def predicted_bias(self, ratio: float, p_zero: float = 0.5) -> float:
        return bias_closed_form(self.gamma(ratio), p_zero)


BIAS_FAMILIES: tuple[BiasFamily, ...] = (
    BiasFamily("optical-zero", "O", ((B_2_M1, A_2_0),), 0),
    BiasFamily("optical-one", "O", ((A_2_0, B_1_M1), (B_1_M1, A_2_0)), 1),
    BiasFamily("metastable-zero", "M", ((B_2_M1, A_2_0),), 0),
    BiasFamily("ground-zero", "G", ((A_2_0, B_2_P1), (B_2_P1, A_2_0)), 0),
)


def bias_family(name: str) -> BiasFamily:
    for family in BIAS_FAMILIES:
        if family.name == name:
            return family
    known = ", ".join(f.name for f in BIAS_FAMILIES)
    raise ValueError(f"unknown bias family {name!r}; known: {known}")


@dataclass(frozen=True)
class BiasPoint:
    ratio: float
    duration: float
    gamma: float
    predicted: float
    measured: float
    std_error: float
    accepted: int
    shots: int


def bias_scan(
    family: BiasFamily,
    ratios: Iterable[float],
    shots: int,
    *,
    model: ErrorModel | None = None,
    seed: int = 0,
    workers: int = 1,
) -> list[BiasPoint]:
    """Measure the post-selection bias by simulation at each detuning ratio.

    Shots prepare an equal superposition, so the true <Z> is zero and the
    measured (N_bright - N_dark) / N_accepted is itself the bias.  The scan
    detunes only the family's pulses and zeroes every other error channel, so
    the closed form is the exact expectation of each point.
    """
    base = (model if model is not None else default_model()).with_perfect_channels()
    t_pi = base.pulse_for(*family.scanned[0]).t_pi
    points = []
    for index, ratio in enumerate(ratios):
        if ratio <= 0:
            raise ValueError(f"duration ratios must be positive, got {ratio}")
        duration = ratio * t_pi
        point_seed = int(np.random.SeedSequence(entropy=[seed, index]).generate_state(1)[0])
        config = ExperimentConfig(
            model=base,
            encoding=family.encoding,
            shots=shots,
            seed=point_seed,
            interleave=False,
            prepare=Prepare.SUPERPOSITION,
            transfer_durations=tuple((pair, duration) for pair in family.scanned),
        )
        result = run_experiment(config, workers=workers, collect_histograms=False)
        tally = result.states[Prepare.SUPERPOSITION.value]
        accepted = tally.accepted
        if accepted == 0:
            raise ValueError(f"no shots accepted at t/t_pi = {ratio}")
        bright = tally.accepted_zero
        measured = (2.0 * bright - accepted) / accepted
        fraction = bright / accepted
        std_error = 2.0 * math.sqrt(fraction * (1.0 - fraction) / accepted)
        points.append(
            BiasPoint(
                ratio=ratio,
                duration=duration,
                gamma=family.gamma(ratio),
                predicted=family.predicted_bias(ratio),
                measured=measured,
                std_error=std_error,
                accepted=accepted,
                shots=shots,
            )
        )
    return points


# =========================================================================
# Lifetime fitting
# =========================================================================

@dataclass(frozen=True)
class LifetimeFit:
    lifetime: float
    std_error: float
    interval: tuple[float, float]
    delays: tuple[float, ...]
    fractions: tuple[float, ...]


def sample_decay_events(
    delays: Iterable[float],
    shots_per_delay: int,
    lifetime: float,
    rng: np.random.Generator,
) -> list[tuple[float, int, int]]:
    """Draw binned decayed-or-not counts at each delay for a known lifetime."""
    if shots_per_delay < 1:
        raise ValueError(f"shots_per_delay must be >= 1, got {shots_per_delay}")
    if lifetime <= 0:
        raise ValueError(f"lifetime must be positive, got {lifetime}")
    rows = []
    for delay in delays:
        probability = -math.expm1(-delay / lifetime)
        decayed = int(rng.binomial(shots_per_delay, probability))
        rows.append((float(delay), decayed, shots_per_delay))
    return rows


def fit_lifetime(samples: Iterable[tuple]) -> LifetimeFit:
    """Fit 1 - exp(-t/tau) to decay observations.

    Accepts per-shot rows ``(delay, decayed_bool)`` or binned rows
    ``(delay, decayed_count, trials)``.  The fit is weighted least squares
    with binomial standard errors where defined; the interval is the two-sigma
    range from the fit covariance.
    """
    bins: dict[float, list[float]] = {}
    for row in samples:
        if len(row) == 2:
            delay, decayed = row
            count, trials = (1.0 if decayed else 0.0), 1.0
        elif len(row) == 3:
            delay, count, trials = row
        else:
            raise ValueError(f"rows must have 2 or 3 fields, got {len(row)}")
        if delay <= 0:
            raise ValueError(f"delays must be positive, got {delay}")
        entry = bins.setdefault(float(delay), [0.0, 0.0])
        entry[0] += float(count)
        entry[1] += float(trials)

    if len(bins) < 2:
        raise ValueError("need observations at two or more distinct delays")
    delays = np.array(sorted(bins))
    counts = np.array([bins[t][0] for t in delays])
    trials = np.array([bins[t][1] for t in delays])
    if (trials <= 0).any():
        raise ValueError("every delay needs at least one trial")
    fractions = counts / trials
    if counts.sum() == 0 or (counts == trials).all():
        raise ValueError("lifetime is unidentifiable when no shot or every shot decayed")

    sigma = np.sqrt(fractions * (1.0 - fractions) / trials)
    use_sigma = sigma if (sigma > 0).all() else None

    # Seed from the first bin with an interior fraction; exact for clean data.
    interior = (fractions > 0) & (fractions < 1)
    guesses = -delays[interior] / np.log1p(-fractions[interior])
    initial = float(np.median(guesses)) if guesses.size else float(delays.mean())

    def decayed_fraction(t, tau):
        return -np.expm1(-t / tau)

    popt, pcov = curve_fit(
        decayed_fraction,
        delays,
        fractions,
        p0=[initial],
        sigma=use_sigma,
        absolute_sigma=use_sigma is not None,
        maxfev=10_000,
    )
    lifetime = float(popt[0])
    variance = float(pcov[0][0])
    std_error = math.sqrt(variance) if math.isfinite(variance) and variance >= 0 else math.inf
    return LifetimeFit(
        lifetime=lifetime,
        std_error=std_error,
        interval=(lifetime - 2.0 * std_error, lifetime + 2.0 * std_error),
        delays=tuple(float(t) for t in delays),
        fractions=tuple(float(f) for f in fractions),
    )


# =========================================================================
# Run summaries
# =========================================================================

STAGE_NAMES = ("raw", "R0", "R1", "R2", "R3R4", "R5")


def _stage_estimates(tally, z: float):
    rates: list[float | None] = []
    intervals: list[list[float] | None] = []
    for kept, wrong in zip(tally.kept, tally.wrong):
        if kept == 0:
            rates.append(None)
            intervals.append(None)
            continue
        estimate = wilson_interval(wrong, kept, z)
        rates.append(estimate.point)
        intervals.append([estimate.interval[0], estimate.interval[1]])
    return rates, intervals


def spam_summary(result: ExperimentResult, z: float = 1.0) -> dict:
    """Condense a run into cumulative per-flag retention and error statistics.

    Six stages apply the flag criteria cumulatively: raw (no criterion), then
    R0, R1, R2, the joint R3/R4 readout check, and R5.  Per prepared state the
    summary reports retention, the misinference rate among surviving shots
    with its Wilson interval at quantile ``z``, and flag-reason tallies; when
    both basis states ran, the two are averaged with half-widths combined in
    quadrature.
    """
    if not result.states:
        raise ValueError("no batches to summarize")
    config = result.config
    states_block: dict[str, dict] = {}
    for name, tally in result.states.items():
        if tally.shots == 0:
            raise ValueError(f"batch {name!r} has no shots")
        rates, intervals = _stage_estimates(tally, z)
        states_block[name] = {
            "shots": tally.shots,
            "kept": list(tally.kept),
            "retention": [k / tally.shots for k in tally.kept],
            "rejected_fraction": tally.rejected_fraction,
            "wrong": list(tally.wrong),
            "error_rate": rates,
            "error_interval": intervals,
            "flag_reasons": dict(tally.reasons),
            "accepted": tally.accepted,
            "accepted_zero": tally.accepted_zero,
            "accepted_one": tally.accepted_one,
            "attempts_mean": tally.attempts_total / tally.shots,
            "attempts_max": tally.attempts_max,
        }

    average_block = None
    if "zero" in states_block and "one" in states_block:
        rate_rows = []
        interval_rows = []
        for stage in range(len(STAGE_NAMES)):
            pair = [states_block[s]["error_rate"][stage] for s in ("zero", "one")]
            halves = [states_block[s]["error_interval"][stage] for s in ("zero", "one")]
            if any(r is None for r in pair):
                rate_rows.append(None)
                interval_rows.append(None)
                continue
            rate = 0.5 * (pair[0] + pair[1])
            half = 0.5 * math.hypot(
                0.5 * (halves[0][1] - halves[0][0]),
                0.5 * (halves[1][1] - halves[1][0]),
            )
            rate_rows.append(rate)
            interval_rows.append([max(0.0, rate - half), min(1.0, rate + half)])
        average_block = {"error_rate": rate_rows, "error_interval": interval_rows}

    return {
        "encoding": config.encoding,
        "mode": config.mode.value,
        "strict_flags": config.strict_flags,
        "seed": config.seed,
        "shots_per_state": config.shots,
        "z": z,
        "stages": list(STAGE_NAMES),
        "states": states_block,
        "average": average_block,
    }
