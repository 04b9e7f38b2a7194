"""Proportional feedback control of the protocol loan-to-value ratio.

The controller watches the observed premium (discount of the stablecoin
market price to the anchor close), smooths it with an EMA, and moves the
LTV against the deviation from target: a widening discount tightens
collateral requirements, a negative premium (coin above par) relaxes
them. Every update is rate-limited and the ratio is hard-clamped to
``[ltv_floor, ltv_ceiling]``, so the loop degrades gracefully no matter
how wild the observation is. With observation response slope ``s`` the
loop is overdamped whenever ``gain_k * smoothing_alpha * s < 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ParameterError


@dataclass(frozen=True)
class ControllerConfig:
    """Gain, target band, bounds, and rate limits for one controlled asset.

    ``max_step_up`` / ``max_step_down`` default to the symmetric
    ``max_step_per_update``; setting ``max_step_up`` lower than
    ``max_step_down`` makes the controller cautious about re-expanding
    leverage while reacting quickly to stress.
    """

    gain_k: float
    tlp_target: float
    tlp_band: tuple[float, float]
    ltv_floor: float
    ltv_ceiling: float
    max_step_per_update: float
    smoothing_alpha: float
    max_step_up: float | None = None
    max_step_down: float | None = None

    def __post_init__(self) -> None:
        if not self.gain_k > 0.0:
            raise ParameterError(f"gain_k must be > 0, got {self.gain_k}")
        lo, hi = self.tlp_band
        if not lo <= self.tlp_target <= hi:
            raise ParameterError(
                f"tlp_target {self.tlp_target} must lie inside tlp_band {self.tlp_band}")
        if not 0.0 < self.ltv_floor <= self.ltv_ceiling <= 1.0:
            raise ParameterError(
                f"need 0 < ltv_floor <= ltv_ceiling <= 1, got "
                f"({self.ltv_floor}, {self.ltv_ceiling})")
        if not self.max_step_per_update > 0.0:
            raise ParameterError(
                f"max_step_per_update must be > 0, got {self.max_step_per_update}")
        if not 0.0 < self.smoothing_alpha <= 1.0:
            raise ParameterError(
                f"smoothing_alpha must be in (0, 1], got {self.smoothing_alpha}")
        for name in ("max_step_up", "max_step_down"):
            value = getattr(self, name)
            if value is not None and not value > 0.0:
                raise ParameterError(f"{name} must be > 0 when set, got {value}")

    @property
    def step_up(self) -> float:
        return self.max_step_up if self.max_step_up is not None else self.max_step_per_update

    @property
    def step_down(self) -> float:
        return self.max_step_down if self.max_step_down is not None else self.max_step_per_update


@dataclass(frozen=True)
class ControllerState:
    current_ltv: float
    smoothed_tlp: float
    update_count: int


def initial_state(config: ControllerConfig, initial_ltv: float) -> ControllerState:
    """Fresh state with the LTV clamped into the configured bounds."""
    ltv = min(config.ltv_ceiling, max(config.ltv_floor, initial_ltv))
    return ControllerState(current_ltv=ltv, smoothed_tlp=0.0, update_count=0)


def observe_tlp(close_price: float, observed_price: float) -> float:
    """Observed premium ``(S_c - P_obs) / S_c``; negative above par."""
    if not close_price > 0.0:
        raise ParameterError(f"close_price must be > 0, got {close_price}")
    if observed_price < 0.0:
        raise ParameterError(f"observed_price must be >= 0, got {observed_price}")
    return (close_price - observed_price) / close_price


def in_band(config: ControllerConfig, tlp_obs: float) -> bool:
    """True when the observation sits inside the target band, edges inclusive."""
    lo, hi = config.tlp_band
    return lo <= tlp_obs <= hi


def step(state: ControllerState, config: ControllerConfig, tlp_obs: float) -> ControllerState:
    """Apply one observation and return the new state.

    The first update seeds the EMA with the raw observation; afterwards
    ``smoothed = alpha * obs + (1 - alpha) * smoothed``. The raw move
    ``-gain_k * (smoothed - target)`` is clamped to the per-update rate
    limits and the result to the hard LTV bounds.
    """
    if state.update_count == 0:
        smoothed = tlp_obs
    else:
        alpha = config.smoothing_alpha
        smoothed = alpha * tlp_obs + (1.0 - alpha) * state.smoothed_tlp

    delta = -config.gain_k * (smoothed - config.tlp_target)
    delta = min(config.step_up, max(-config.step_down, delta))
    new_ltv = min(config.ltv_ceiling, max(config.ltv_floor, state.current_ltv + delta))

    return replace(state, current_ltv=new_ltv, smoothed_tlp=smoothed,
                   update_count=state.update_count + 1)
