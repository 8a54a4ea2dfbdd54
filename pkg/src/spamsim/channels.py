"""Stochastic error channels: transfer pulses, optical pumping, metastable decay.

All channels act on a single :class:`~spamsim.states.StateLabel` per shot.
Conventions shared by every channel:

* a failed transfer pulse leaves the population in its source state,
* a failed pump attempt leaves the population as ``WrongGround`` (still in the
  fluorescing manifold, but not addressed by any configured pulse),
* decay out of manifold B lands in ``WrongGround``,
* pulses are one-directional, state-selective maps: population that is not in
  the pulse's source state is never moved, and sentinels are never addressed.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Mapping

import numpy as np

from .detection import DetectionModel
from .states import (
    Manifold,
    StateLabel,
    WRONG_GROUND,
    format_state,
    parse_state,
    transition_allowed,
)


class ConfigError(ValueError):
    """Raised when a configuration document violates the schema."""


class PulseOrder(enum.Enum):
    """Duration scaling of the transfer probability: sin^2 or sin^4."""

    SINGLE = "single"
    DOUBLE = "double"


def _check_probability(value: float, name: str) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be a probability, got {value}")


@dataclass(frozen=True)
class TransferPulse:
    """A coherent transfer between one A-manifold and one B-manifold level."""

    from_state: StateLabel
    to_state: StateLabel
    error_rate: float
    t_pi: float
    order: PulseOrder = PulseOrder.SINGLE

    def __post_init__(self) -> None:
        if not transition_allowed(self.from_state, self.to_state):
            raise ValueError(
                f"pulse must bridge the manifolds: {self.from_state} -> {self.to_state}"
            )
        _check_probability(self.error_rate, "error_rate")
        if self.t_pi <= 0:
            raise ValueError(f"t_pi must be positive, got {self.t_pi}")

    def reversed(self) -> "TransferPulse":
        return replace(self, from_state=self.to_state, to_state=self.from_state)


@dataclass(frozen=True)
class PumpChannel:
    """Optical pumping of all fluorescing population into one target state."""

    target: StateLabel
    error_rate: float
    duration: float

    def __post_init__(self) -> None:
        if not self.target.in_manifold(Manifold.A):
            raise ValueError("pump target must be a hyperfine level of manifold A")
        _check_probability(self.error_rate, "error_rate")
        if self.duration < 0:
            raise ValueError("pump duration must be non-negative")


@dataclass(frozen=True)
class DecayChannel:
    """Exponential decay of manifold B with 1/e lifetime in seconds."""

    lifetime: float

    def __post_init__(self) -> None:
        if not self.lifetime > 0:
            raise ValueError(f"lifetime must be positive, got {self.lifetime}")

    @property
    def disabled(self) -> bool:
        return math.isinf(self.lifetime)


def decay_probability(duration: float, decay: DecayChannel) -> float:
    """Probability that a B-state decays within ``duration`` seconds."""
    if duration < 0:
        raise ValueError(f"duration must be non-negative, got {duration}")
    return -math.expm1(-duration / decay.lifetime)


def pulse_success_probability(duration: float, pulse: TransferPulse) -> float:
    """Effective transfer probability when driving for ``duration`` seconds.

    The duration factor is sin^2(pi*t / (2*t_pi)) for a single-order pulse and
    its square for a double-order pulse, so a calibrated pi-time transfers with
    probability ``1 - error_rate``.
    """
    if duration < 0:
        raise ValueError(f"duration must be non-negative, got {duration}")
    factor = math.sin(math.pi * duration / (2.0 * pulse.t_pi)) ** 2
    if pulse.order is PulseOrder.DOUBLE:
        factor *= factor
    return (1.0 - pulse.error_rate) * factor


def apply_transfer(
    state: StateLabel,
    pulse: TransferPulse,
    duration: float,
    rng: np.random.Generator,
) -> StateLabel:
    """Apply one transfer pulse to a definite state.

    Population that is not in ``pulse.from_state`` (including sentinels) is
    left untouched.
    """
    if state != pulse.from_state:
        return state
    if rng.random() < pulse_success_probability(duration, pulse):
        return pulse.to_state
    return state


def apply_decay(
    state: StateLabel,
    duration: float,
    decay: DecayChannel,
    rng: np.random.Generator,
) -> tuple[StateLabel, float | None]:
    """Let a B-state decay over ``duration`` seconds.

    Returns the post-window state and, when decay happened, the decay instant
    measured from the start of the window (an exponential arrival conditioned
    on falling inside the window).  States outside manifold B pass through.
    """
    if not state.in_manifold(Manifold.B):
        return state, None
    p_window = decay_probability(duration, decay)
    if p_window == 0.0 or rng.random() >= p_window:
        return state, None
    instant = -decay.lifetime * math.log1p(-rng.random() * p_window)
    return WRONG_GROUND, min(instant, duration)


@dataclass(frozen=True)
class ErrorModel:
    """Every stochastic parameter of one simulated apparatus."""

    pump: PumpChannel
    pulses: tuple[TransferPulse, ...]
    decay: DecayChannel
    detection: DetectionModel
    cooling_duration: float = 1e-3
    deshelve_duration: float = 5e-6
    loss_probability_per_shot: float = 0.0

    # internal canonical lookup keyed by the unordered level pair
    _by_pair: Mapping[tuple[StateLabel, StateLabel], TransferPulse] = field(
        init=False, repr=False, compare=False, default=None  # type: ignore[assignment]
    )

    def __post_init__(self) -> None:
        _check_probability(self.loss_probability_per_shot, "loss_probability_per_shot")
        if self.cooling_duration < 0 or self.deshelve_duration < 0:
            raise ValueError("durations must be non-negative")
        lookup: dict[tuple[StateLabel, StateLabel], TransferPulse] = {}
        for pulse in self.pulses:
            key = _pair_key(pulse.from_state, pulse.to_state)
            if key in lookup:
                raise ValueError(f"duplicate pulse for transition {key[0]} <-> {key[1]}")
            lookup[key] = pulse
        object.__setattr__(self, "_by_pair", lookup)

    def has_pulse(self, from_state: StateLabel, to_state: StateLabel) -> bool:
        if not transition_allowed(from_state, to_state):
            return False
        return _pair_key(from_state, to_state) in self._by_pair

    def pulse_for(self, from_state: StateLabel, to_state: StateLabel) -> TransferPulse:
        """The configured pulse for a transition, oriented from -> to."""
        if not transition_allowed(from_state, to_state):
            raise ValueError(f"no transition {from_state} -> {to_state}")
        try:
            base = self._by_pair[_pair_key(from_state, to_state)]
        except KeyError:
            raise ValueError(
                f"model has no pulse for transition {from_state} <-> {to_state}"
            ) from None
        if base.from_state == from_state:
            return base
        return base.reversed()

    def with_perfect_channels(self) -> "ErrorModel":
        """Copy with zero pump/pulse error rates, no decay and no ion loss.

        Detection counts keep their statistics; only the channel randomness is
        switched off.
        """
        return replace(
            self,
            pump=replace(self.pump, error_rate=0.0),
            pulses=tuple(replace(p, error_rate=0.0) for p in self.pulses),
            decay=DecayChannel(lifetime=math.inf),
            loss_probability_per_shot=0.0,
        )


def _pair_key(a: StateLabel, b: StateLabel) -> tuple[StateLabel, StateLabel]:
    return (a, b) if a.in_manifold(Manifold.A) else (b, a)


# =========================================================================
# Configuration documents
# =========================================================================

def _config_schema() -> dict:
    text = resources.files("spamsim.schemas").joinpath("config.schema.json").read_text()
    return json.loads(text)


def model_to_config(model: ErrorModel) -> dict:
    """Serialize an :class:`ErrorModel` to its JSON document form."""
    return {
        "pump": {
            "target": format_state(model.pump.target),
            "error_rate": model.pump.error_rate,
            "duration": model.pump.duration,
        },
        "pulses": [
            {
                "from": format_state(p.from_state),
                "to": format_state(p.to_state),
                "error_rate": p.error_rate,
                "t_pi": p.t_pi,
                "order": p.order.value,
            }
            for p in model.pulses
        ],
        "decay": {"lifetime": model.decay.lifetime},
        "detection": {
            "mean_bright": model.detection.mean_bright,
            "mean_dark": model.detection.mean_dark,
            "read_noise_sigma": model.detection.read_noise_sigma,
            "exposure": model.detection.exposure,
            "total_duration": model.detection.total_duration,
            "threshold": model.detection.threshold,
        },
        "durations": {
            "cooling": model.cooling_duration,
            "deshelve": model.deshelve_duration,
        },
        "loss_probability_per_shot": model.loss_probability_per_shot,
    }


def model_from_config(document: dict) -> ErrorModel:
    """Build an :class:`ErrorModel` from a validated JSON document."""
    import jsonschema

    try:
        jsonschema.validate(document, _config_schema())
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc.message}") from exc

    try:
        pump = PumpChannel(
            target=parse_state(document["pump"]["target"]),
            error_rate=document["pump"]["error_rate"],
            duration=document["pump"]["duration"],
        )
        pulses = tuple(
            TransferPulse(
                from_state=parse_state(entry["from"]),
                to_state=parse_state(entry["to"]),
                error_rate=entry["error_rate"],
                t_pi=entry["t_pi"],
                order=PulseOrder(entry.get("order", "single")),
            )
            for entry in document["pulses"]
        )
        det = document["detection"]
        detection = DetectionModel(
            mean_bright=det["mean_bright"],
            mean_dark=det["mean_dark"],
            read_noise_sigma=det["read_noise_sigma"],
            exposure=det["exposure"],
            total_duration=det["total_duration"],
            threshold=det["threshold"],
        )
        decay_entry = document["decay"]["lifetime"]
        decay = DecayChannel(lifetime=math.inf if decay_entry is None else decay_entry)
        durations = document.get("durations", {})
        return ErrorModel(
            pump=pump,
            pulses=pulses,
            decay=decay,
            detection=detection,
            cooling_duration=durations.get("cooling", 1e-3),
            deshelve_duration=durations.get("deshelve", 5e-6),
            loss_probability_per_shot=document.get("loss_probability_per_shot", 0.0),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_error_model(path: str) -> ErrorModel:
    """Read and validate a model configuration file."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            document = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    return model_from_config(document)


def save_error_model(model: ErrorModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(model_to_config(model), handle, indent=2, sort_keys=True)
        handle.write("\n")


def default_model() -> ErrorModel:
    """The bundled default apparatus configuration."""
    text = resources.files("spamsim.data").joinpath("default_config.json").read_text()
    return model_from_config(json.loads(text))
