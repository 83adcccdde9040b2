"""Cold-chain product profiles and the excursion rules engine.

Temperatures are integer tenths of a degree Celsius throughout so that dwell
and budget arithmetic stays exact.  Dwell time is integrated
piecewise-constant: a reading holds until the next reading and the final
reading of a trace holds for zero duration (it is carried over so that a
follow-up trace closes the interval).
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError, InputError, StateError

SECONDS_PER_DAY = 86400


class Phase(enum.IntEnum):
    FROZEN_PRE_USE = 1
    THAWED_UNPUNCTURED = 2
    PUNCTURED = 3


_PHASE_NAMES = {
    Phase.FROZEN_PRE_USE: "FrozenPreUse",
    Phase.THAWED_UNPUNCTURED: "ThawedUnpunctured",
    Phase.PUNCTURED: "Punctured",
}
_NAME_PHASES = {name: phase for phase, name in _PHASE_NAMES.items()}


def phase_name(phase: Phase) -> str:
    return _PHASE_NAMES[phase]


def phase_from_name(name: str) -> Phase:
    try:
        return _NAME_PHASES[name]
    except KeyError:
        raise ConfigError(f"unknown phase {name!r}") from None


class PhaseEvent(enum.IntEnum):
    THAW = 1
    PUNCTURE = 2


class VialStatus(enum.IntEnum):
    USABLE = 1
    SPOILED = 2
    ADMINISTERED = 3
    EXPIRED = 4


class Severity(enum.IntEnum):
    WARNING = 1
    CRITICAL = 2


# Spoilage reason codes.
REASON_BUDGET = "budget-exhausted"
REASON_HARD_FLOOR = "hard-floor"
REASON_HARD_CEILING = "hard-ceiling"
REASON_FREEZE = "freeze-forbidden"
REASON_GRACE = "out-of-range-grace-exhausted"
REASON_SHELF_LIFE = "shelf-life-expired"


@dataclass(frozen=True)
class TelemetryReading:
    """One sensor sample for a storage unit or transport vehicle."""

    subject: str
    timestamp: int
    temperature_decic: int
    light_exposed: bool = False
    humidity_pct: int | None = None


@dataclass(frozen=True)
class ConditionRule:
    """Inclusive temperature window with an optional cumulative dwell budget."""

    temp_low_decic: int
    temp_high_decic: int
    budget_seconds: int | None = None

    def __post_init__(self) -> None:
        if self.temp_low_decic > self.temp_high_decic:
            raise ConfigError("window low bound above high bound")
        if self.budget_seconds is not None and self.budget_seconds <= 0:
            raise ConfigError("budget must be positive when present")

    def contains(self, temp_decic: int) -> bool:
        return self.temp_low_decic <= temp_decic <= self.temp_high_decic


@dataclass(frozen=True)
class PhaseRules:
    """Allowed windows plus hard limits for one lifecycle phase."""

    rules: tuple[ConditionRule, ...]
    hard_floor_decic: int | None = None
    hard_ceiling_decic: int | None = None

    def __post_init__(self) -> None:
        if not self.rules:
            raise ConfigError("phase must have at least one condition rule")
        spans = sorted((r.temp_low_decic, r.temp_high_decic) for r in self.rules)
        for (_, hi_a), (lo_b, _) in zip(spans, spans[1:]):
            if lo_b <= hi_a:
                raise ConfigError("condition windows overlap within a phase")


@dataclass(frozen=True)
class VaccineProduct:
    """Per-product cold-chain rule set."""

    product_id: str
    display_name: str
    phases: Mapping[Phase, PhaseRules]
    freeze_forbidden_below_decic: int | None
    light_protected: bool
    doses_per_vial: int
    dose_interval_days: int
    shelf_life_days: int

    def __post_init__(self) -> None:
        if self.doses_per_vial <= 0:
            raise ConfigError("doses_per_vial must be positive")
        if self.dose_interval_days <= 0:
            raise ConfigError("dose_interval_days must be positive")
        if self.shelf_life_days <= 0:
            raise ConfigError("shelf_life_days must be positive")
        if not self.phases:
            raise ConfigError("product must define at least one phase")
        object.__setattr__(self, "phases", dict(self.phases))

    @property
    def initial_phase(self) -> Phase:
        return (
            Phase.FROZEN_PRE_USE
            if Phase.FROZEN_PRE_USE in self.phases
            else Phase.THAWED_UNPUNCTURED
        )


@dataclass(frozen=True)
class EvaluationConfig:
    """Knobs the product table does not pin down."""

    grace_seconds: int = 1800
    light_budget_frozen_seconds: int = 0
    light_budget_other_seconds: int = 3600
    humidity_alert_pct: int | None = None


DEFAULT_EVALUATION = EvaluationConfig()


@dataclass(frozen=True)
class HeldReading:
    timestamp: int
    temperature_decic: int
    light_exposed: bool


@dataclass(frozen=True)
class VialAlert:
    at: int
    severity: Severity
    message: str


@dataclass
class VialState:
    """Lifecycle position of one vial plus its remaining excursion budgets.

    budgets_remaining is parallel to the current phase's rule list; None marks
    a window with unlimited dwell.
    """

    vid: str
    index: int
    phase: Phase
    status: VialStatus = VialStatus.USABLE
    spoil_reason: str | None = None
    budgets_remaining: tuple[int | None, ...] = ()
    grace_remaining: int = DEFAULT_EVALUATION.grace_seconds
    light_exposure_seconds: int = 0
    light_alerted: bool = False
    out_of_range_alerted: bool = False
    doses_drawn: int = 0
    phase_entered_at: int = 0
    last_evaluated_at: int = 0
    held: HeldReading | None = None

    @property
    def usable(self) -> bool:
        return self.status == VialStatus.USABLE


@dataclass(frozen=True)
class ExcursionResult:
    state: VialState
    alerts: tuple[VialAlert, ...]
    spoiled: bool
    spoil_reason: str | None


def _initial_budgets(product: VaccineProduct, phase: Phase) -> tuple[int | None, ...]:
    return tuple(rule.budget_seconds for rule in product.phases[phase].rules)


def new_vial_state(
    product: VaccineProduct,
    vid: str,
    index: int,
    at: int,
    config: EvaluationConfig = DEFAULT_EVALUATION,
) -> VialState:
    phase = product.initial_phase
    return VialState(
        vid=vid,
        index=index,
        phase=phase,
        budgets_remaining=_initial_budgets(product, phase),
        grace_remaining=config.grace_seconds,
        phase_entered_at=at,
        last_evaluated_at=at,
    )


def _light_budget(phase: Phase, config: EvaluationConfig) -> int:
    if phase == Phase.FROZEN_PRE_USE:
        return config.light_budget_frozen_seconds
    return config.light_budget_other_seconds


def evaluate_excursion(
    product: VaccineProduct,
    state: VialState,
    readings: Sequence[TelemetryReading],
    config: EvaluationConfig = DEFAULT_EVALUATION,
) -> ExcursionResult:
    """Integrate a time-ordered trace into the vial's budgets.

    Returns the updated vial plus alerts in nondecreasing timestamp order.
    The input state is not modified.
    """
    if state.status != VialStatus.USABLE:
        raise StateError(f"cannot evaluate a {state.status.name} vial")
    last_ts = state.last_evaluated_at
    for reading in readings:
        if reading.timestamp < last_ts:
            raise InputError("readings must be sorted and after the last evaluated time")
        last_ts = reading.timestamp

    work = dataclasses.replace(state)
    if not readings:
        return ExcursionResult(state=work, alerts=(), spoiled=False, spoil_reason=None)

    budgets = list(work.budgets_remaining)
    phase_rules = product.phases[work.phase]
    alerts: list[VialAlert] = []
    humidity_alerted = False

    def spoil(at: int, reason: str, message: str) -> None:
        work.status = VialStatus.SPOILED
        work.spoil_reason = reason
        work.last_evaluated_at = at
        work.held = None
        alerts.append(VialAlert(at=at, severity=Severity.CRITICAL, message=message))

    # Segment list: the held reading from a previous call is closed by the
    # first new reading; the final new reading is carried with zero dwell.
    segments: list[tuple[HeldReading, int]] = []
    cursor = work.held
    for reading in readings:
        if cursor is not None:
            segments.append((cursor, reading.timestamp))
        cursor = HeldReading(
            timestamp=reading.timestamp,
            temperature_decic=reading.temperature_decic,
            light_exposed=reading.light_exposed,
        )
        if (
            not humidity_alerted
            and config.humidity_alert_pct is not None
            and reading.humidity_pct is not None
            and reading.humidity_pct > config.humidity_alert_pct
        ):
            alerts.append(
                VialAlert(
                    at=reading.timestamp,
                    severity=Severity.WARNING,
                    message=f"humidity {reading.humidity_pct}% above threshold",
                )
            )
            humidity_alerted = True

    for held, end_ts in segments:
        temp = held.temperature_decic
        at = held.timestamp
        duration = end_ts - at

        threshold = product.freeze_forbidden_below_decic
        if threshold is not None and temp < threshold:
            spoil(at, REASON_FREEZE, f"reading {temp / 10:.1f}C below freeze threshold")
            break
        if phase_rules.hard_floor_decic is not None and temp < phase_rules.hard_floor_decic:
            spoil(at, REASON_HARD_FLOOR, f"reading {temp / 10:.1f}C below hard floor")
            break
        if phase_rules.hard_ceiling_decic is not None and temp > phase_rules.hard_ceiling_decic:
            spoil(at, REASON_HARD_CEILING, f"reading {temp / 10:.1f}C above hard ceiling")
            break

        if product.light_protected and held.light_exposed and duration > 0:
            budget = _light_budget(work.phase, config)
            exposure = work.light_exposure_seconds
            if not work.light_alerted and exposure + duration > budget:
                alerts.append(
                    VialAlert(
                        at=at + max(0, budget - exposure),
                        severity=Severity.WARNING,
                        message="light exposure budget exceeded",
                    )
                )
                work.light_alerted = True
            work.light_exposure_seconds = exposure + duration

        matched = None
        for rule_index, rule in enumerate(phase_rules.rules):
            if rule.contains(temp):
                matched = rule_index
                break

        if matched is None:
            if not work.out_of_range_alerted:
                alerts.append(
                    VialAlert(
                        at=at,
                        severity=Severity.WARNING,
                        message=f"temperature {temp / 10:.1f}C outside all allowed windows",
                    )
                )
                work.out_of_range_alerted = True
            if duration >= work.grace_remaining:
                spoil(
                    at + work.grace_remaining,
                    REASON_GRACE,
                    "out-of-range grace budget exhausted",
                )
                work.grace_remaining = 0
                break
            work.grace_remaining -= duration
        else:
            remaining = budgets[matched]
            if remaining is not None:
                if duration >= remaining:
                    budgets[matched] = 0
                    work.budgets_remaining = tuple(budgets)
                    rule = phase_rules.rules[matched]
                    spoil(
                        at + remaining,
                        REASON_BUDGET,
                        "dwell budget exhausted for window "
                        f"[{rule.temp_low_decic / 10:.1f}, {rule.temp_high_decic / 10:.1f}]C",
                    )
                    break
                budgets[matched] = remaining - duration

        work.last_evaluated_at = end_ts

    if work.status == VialStatus.USABLE:
        final = readings[-1]
        work.held = HeldReading(
            timestamp=final.timestamp,
            temperature_decic=final.temperature_decic,
            light_exposed=final.light_exposed,
        )
        work.last_evaluated_at = final.timestamp
        work.budgets_remaining = tuple(budgets)

    return ExcursionResult(
        state=work,
        alerts=tuple(alerts),
        spoiled=work.status == VialStatus.SPOILED,
        spoil_reason=work.spoil_reason,
    )


_LEGAL_TRANSITIONS = {
    PhaseEvent.THAW: (Phase.FROZEN_PRE_USE, Phase.THAWED_UNPUNCTURED),
    PhaseEvent.PUNCTURE: (Phase.THAWED_UNPUNCTURED, Phase.PUNCTURED),
}


def transition_phase(
    product: VaccineProduct,
    state: VialState,
    event: PhaseEvent,
    at: int,
    config: EvaluationConfig = DEFAULT_EVALUATION,
) -> VialState:
    """Advance the vial one phase forward, resetting the new phase's budgets."""
    if state.status != VialStatus.USABLE:
        raise StateError(f"cannot transition a {state.status.name} vial")
    source, target = _LEGAL_TRANSITIONS[event]
    if event == PhaseEvent.THAW and Phase.FROZEN_PRE_USE not in product.phases:
        raise StateError(f"{product.product_id} has no frozen phase to thaw from")
    if state.phase != source:
        raise StateError(
            f"cannot {event.name.lower()} a vial in phase {phase_name(state.phase)}"
        )
    if target not in product.phases:
        raise StateError(f"{product.product_id} does not define phase {phase_name(target)}")
    if at < state.last_evaluated_at:
        raise StateError("phase transition before the last evaluated time")
    return dataclasses.replace(
        state,
        phase=target,
        budgets_remaining=_initial_budgets(product, target),
        grace_remaining=config.grace_seconds,
        out_of_range_alerted=False,
        light_alerted=False,
        phase_entered_at=at,
        last_evaluated_at=at,
        held=None,
    )


def expiry_check(
    product: VaccineProduct,
    state: VialState,
    now: int,
    manufactured_at: int,
) -> VialState:
    """Mark the vial Expired once past shelf life; never upgrades status."""
    if state.status != VialStatus.USABLE:
        return state
    if now - manufactured_at > product.shelf_life_days * SECONDS_PER_DAY:
        return dataclasses.replace(
            state, status=VialStatus.EXPIRED, spoil_reason=REASON_SHELF_LIFE, held=None
        )
    return state


HOUR = 3600

# Punctured-phase lifetime used when the product table states none; the only
# stated punctured duration (Covishield, 6 h) is borrowed as a conservative
# default and can be overridden through profile files.
DEFAULT_PUNCTURED_BUDGET = 6 * HOUR

# Artifact defaults for fields the product table leaves open; scenario
# profiles are expected to override them.
DEFAULT_DOSES_PER_VIAL = 10
DEFAULT_DOSE_INTERVAL_DAYS = 28
DEFAULT_SHELF_LIFE_DAYS = 180


def builtin_profiles() -> list[VaccineProduct]:
    """The four built-in product profiles."""
    pfizer = VaccineProduct(
        product_id="pfizer-biontech",
        display_name="Pfizer-BioNTech",
        phases={
            Phase.FROZEN_PRE_USE: PhaseRules(
                rules=(ConditionRule(-800, -600),),
            ),
            Phase.THAWED_UNPUNCTURED: PhaseRules(
                rules=(
                    ConditionRule(20, 80, budget_seconds=120 * HOUR),
                    ConditionRule(81, 250, budget_seconds=2 * HOUR),
                ),
                hard_floor_decic=20,
                hard_ceiling_decic=250,
            ),
            Phase.PUNCTURED: PhaseRules(
                rules=(ConditionRule(20, 250, budget_seconds=DEFAULT_PUNCTURED_BUDGET),),
                hard_floor_decic=20,
                hard_ceiling_decic=250,
            ),
        },
        freeze_forbidden_below_decic=None,
        light_protected=True,
        doses_per_vial=DEFAULT_DOSES_PER_VIAL,
        dose_interval_days=DEFAULT_DOSE_INTERVAL_DAYS,
        shelf_life_days=DEFAULT_SHELF_LIFE_DAYS,
    )
    moderna = VaccineProduct(
        product_id="moderna",
        display_name="Moderna",
        phases={
            Phase.FROZEN_PRE_USE: PhaseRules(
                rules=(ConditionRule(-250, -150),),
                hard_floor_decic=-400,
            ),
            Phase.THAWED_UNPUNCTURED: PhaseRules(
                rules=(
                    ConditionRule(20, 80, budget_seconds=30 * SECONDS_PER_DAY),
                    ConditionRule(81, 250, budget_seconds=12 * HOUR),
                ),
                hard_floor_decic=20,
                hard_ceiling_decic=250,
            ),
            Phase.PUNCTURED: PhaseRules(
                rules=(ConditionRule(20, 249, budget_seconds=DEFAULT_PUNCTURED_BUDGET),),
                hard_floor_decic=20,
                hard_ceiling_decic=249,
            ),
        },
        freeze_forbidden_below_decic=None,
        light_protected=True,
        doses_per_vial=DEFAULT_DOSES_PER_VIAL,
        dose_interval_days=DEFAULT_DOSE_INTERVAL_DAYS,
        shelf_life_days=180,
    )
    covaxin = VaccineProduct(
        product_id="covaxin",
        display_name="Covaxin",
        phases={
            Phase.THAWED_UNPUNCTURED: PhaseRules(rules=(ConditionRule(20, 80),)),
            Phase.PUNCTURED: PhaseRules(rules=(ConditionRule(20, 80),)),
        },
        freeze_forbidden_below_decic=0,
        light_protected=False,
        doses_per_vial=DEFAULT_DOSES_PER_VIAL,
        dose_interval_days=DEFAULT_DOSE_INTERVAL_DAYS,
        shelf_life_days=DEFAULT_SHELF_LIFE_DAYS,
    )
    covishield = VaccineProduct(
        product_id="covishield",
        display_name="Covishield",
        phases={
            Phase.THAWED_UNPUNCTURED: PhaseRules(rules=(ConditionRule(20, 80),)),
            Phase.PUNCTURED: PhaseRules(
                rules=(ConditionRule(20, 250, budget_seconds=6 * HOUR),),
            ),
        },
        freeze_forbidden_below_decic=0,
        light_protected=False,
        doses_per_vial=DEFAULT_DOSES_PER_VIAL,
        dose_interval_days=DEFAULT_DOSE_INTERVAL_DAYS,
        shelf_life_days=DEFAULT_SHELF_LIFE_DAYS,
    )
    return [pfizer, moderna, covaxin, covishield]


def _fmt_opt(value: int | None) -> str:
    return "-" if value is None else str(value)


def _parse_opt(token: str, label: str) -> int | None:
    if token == "-":
        return None
    try:
        return int(token)
    except ValueError:
        raise ConfigError(f"invalid {label}: {token!r}") from None


def dump_profiles(products: Iterable[VaccineProduct]) -> str:
    """Serialize product profiles to the key/value block format."""
    lines: list[str] = []
    for product in products:
        lines.append(f"product {product.product_id}")
        lines.append(f"display_name {product.display_name}")
        lines.append(f"light_protected {'true' if product.light_protected else 'false'}")
        lines.append(
            f"freeze_forbidden_below_decic {_fmt_opt(product.freeze_forbidden_below_decic)}"
        )
        lines.append(f"doses_per_vial {product.doses_per_vial}")
        lines.append(f"dose_interval_days {product.dose_interval_days}")
        lines.append(f"shelf_life_days {product.shelf_life_days}")
        for phase in Phase:
            if phase not in product.phases:
                continue
            rules = product.phases[phase]
            lines.append(f"phase {phase_name(phase)}")
            lines.append(f"  floor {_fmt_opt(rules.hard_floor_decic)}")
            lines.append(f"  ceiling {_fmt_opt(rules.hard_ceiling_decic)}")
            for rule in rules.rules:
                lines.append(
                    f"  window {rule.temp_low_decic} {rule.temp_high_decic} "
                    f"{_fmt_opt(rule.budget_seconds)}"
                )
        lines.append("end")
    return "\n".join(lines) + "\n"


def load_profiles(text: str) -> list[VaccineProduct]:
    """Parse the profile block format; inverse of dump_profiles."""
    products: list[VaccineProduct] = []
    current: dict | None = None
    phase: Phase | None = None
    phase_floor: int | None = None
    phase_ceiling: int | None = None
    phase_windows: list[ConditionRule] = []

    def close_phase() -> None:
        nonlocal phase, phase_floor, phase_ceiling, phase_windows
        if phase is None:
            return
        assert current is not None
        current["phases"][phase] = PhaseRules(
            rules=tuple(phase_windows),
            hard_floor_decic=phase_floor,
            hard_ceiling_decic=phase_ceiling,
        )
        phase = None
        phase_floor = None
        phase_ceiling = None
        phase_windows = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        rest = rest.strip()
        if key == "product":
            if current is not None:
                raise ConfigError(f"line {lineno}: missing 'end' before new product")
            if not rest:
                raise ConfigError(f"line {lineno}: product needs an id")
            current = {"product_id": rest, "phases": {}}
        elif current is None:
            raise ConfigError(f"line {lineno}: {key!r} outside a product block")
        elif key == "display_name":
            current["display_name"] = rest
        elif key == "light_protected":
            if rest not in ("true", "false"):
                raise ConfigError(f"line {lineno}: light_protected must be true/false")
            current["light_protected"] = rest == "true"
        elif key == "freeze_forbidden_below_decic":
            current["freeze_forbidden_below_decic"] = _parse_opt(rest, key)
        elif key in ("doses_per_vial", "dose_interval_days", "shelf_life_days"):
            try:
                current[key] = int(rest)
            except ValueError:
                raise ConfigError(f"line {lineno}: {key} must be an integer") from None
        elif key == "phase":
            close_phase()
            phase = phase_from_name(rest)
        elif key == "floor":
            phase_floor = _parse_opt(rest, key)
        elif key == "ceiling":
            phase_ceiling = _parse_opt(rest, key)
        elif key == "window":
            if phase is None:
                raise ConfigError(f"line {lineno}: window outside a phase block")
            parts = rest.split()
            if len(parts) != 3:
                raise ConfigError(f"line {lineno}: window needs 'low high budget'")
            phase_windows.append(
                ConditionRule(
                    temp_low_decic=int(parts[0]),
                    temp_high_decic=int(parts[1]),
                    budget_seconds=_parse_opt(parts[2], "budget"),
                )
            )
        elif key == "end":
            close_phase()
            missing = {
                "display_name",
                "light_protected",
                "freeze_forbidden_below_decic",
                "doses_per_vial",
                "dose_interval_days",
                "shelf_life_days",
            } - set(current)
            if missing:
                raise ConfigError(
                    f"line {lineno}: product {current['product_id']} missing "
                    + ", ".join(sorted(missing))
                )
            products.append(VaccineProduct(**current))
            current = None
        else:
            raise ConfigError(f"line {lineno}: unknown profile key {key!r}")
    if current is not None:
        raise ConfigError("unterminated product block (missing 'end')")
    return products
