"""Reproducible sensor trace generation and telemetry batch packaging.

Stands in for real storage-unit and vehicle sensors: traces are a pure
function of (profile, duration), noise is integer uniform so any
implementation can reproduce a trace bit for bit.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path

from .coldchain import TelemetryReading
from .errors import AuthError, ConfigError, InputError
from .identity import ActorIdentity, Role, TxKind
from .transactions import SubjectClass, TelemetryBatchPayload, Transaction, sign_transaction

DEFAULT_INTERVAL_SECONDS = 600


@dataclass(frozen=True)
class TraceProfile:
    """Shape of a generated trace for one subject."""

    subject: str
    subject_class: SubjectClass
    base_temp_decic: int
    noise_amplitude_decic: int = 0
    interval_seconds: int = DEFAULT_INTERVAL_SECONDS
    start_timestamp: int = 0
    seed: int = 0
    # (offset_seconds, duration_seconds, override_temp_decic)
    excursion_segments: tuple[tuple[int, int, int], ...] = ()
    # (offset_seconds, duration_seconds)
    light_events: tuple[tuple[int, int], ...] = ()
    humidity_base_pct: int | None = None
    humidity_amplitude_pct: int = 0

    def __post_init__(self) -> None:
        if self.interval_seconds < 1:
            raise ConfigError("interval must be at least 1 second")
        if self.noise_amplitude_decic < 0:
            raise ConfigError("noise amplitude must be nonnegative")
        segments = sorted(self.excursion_segments)
        for (start_a, dur_a, _), (start_b, _, _) in zip(segments, segments[1:]):
            if start_b < start_a + dur_a:
                raise ConfigError("excursion segments overlap")


def generate_trace(profile: TraceProfile, duration_seconds: int) -> list[TelemetryReading]:
    """Readings at fixed intervals over [start, start + duration).

    The noise stream is drawn for every reading whether or not an excursion
    segment overrides it, so editing segments never shifts the noise of the
    rest of the trace.
    """
    if duration_seconds < profile.interval_seconds:
        raise InputError("duration must cover at least one interval")
    rng = random.Random(profile.seed)
    readings: list[TelemetryReading] = []
    for offset in range(0, duration_seconds, profile.interval_seconds):
        noise = (
            rng.randint(-profile.noise_amplitude_decic, profile.noise_amplitude_decic)
            if profile.noise_amplitude_decic
            else 0
        )
        humidity = None
        if profile.humidity_base_pct is not None:
            jitter = (
                rng.randint(-profile.humidity_amplitude_pct, profile.humidity_amplitude_pct)
                if profile.humidity_amplitude_pct
                else 0
            )
            humidity = max(0, min(100, profile.humidity_base_pct + jitter))
        temp = profile.base_temp_decic + noise
        for seg_start, seg_duration, override in profile.excursion_segments:
            if seg_start <= offset < seg_start + seg_duration:
                temp = override
                break
        light = any(
            start <= offset < start + duration
            for start, duration in profile.light_events
        )
        readings.append(
            TelemetryReading(
                subject=profile.subject,
                timestamp=profile.start_timestamp + offset,
                temperature_decic=temp,
                light_exposed=light,
                humidity_pct=humidity,
            )
        )
    return readings


def make_batch(
    readings: list[TelemetryReading],
    author: ActorIdentity,
    subject_class: SubjectClass,
) -> Transaction:
    """Package readings for one subject into a signed TelemetryBatch."""
    if not readings:
        raise InputError("cannot batch an empty reading list")
    subjects = {reading.subject for reading in readings}
    if len(subjects) != 1:
        raise InputError(f"batch mixes subjects: {sorted(subjects)}")
    for earlier, later in zip(readings, readings[1:]):
        if later.timestamp <= earlier.timestamp:
            raise InputError("reading timestamps must be strictly increasing")
    if subject_class == SubjectClass.TRANSPORT and author.role != Role.DISTRIBUTOR:
        raise AuthError(
            f"transport telemetry must come from a distributor, not {author.role.value}"
        )
    if subject_class == SubjectClass.STORAGE and author.role != Role.MEDICAL_CENTER:
        raise AuthError(
            f"storage telemetry must come from a medical center, not {author.role.value}"
        )
    payload = TelemetryBatchPayload(
        subject=readings[0].subject,
        subject_class=subject_class,
        readings=tuple(readings),
    )
    return sign_transaction(
        author, TxKind.TELEMETRY_BATCH, payload, readings[-1].timestamp
    )


_CLASS_NAMES = {SubjectClass.TRANSPORT: "transport", SubjectClass.STORAGE: "storage"}
_NAME_CLASSES = {name: cls for cls, name in _CLASS_NAMES.items()}


def dump_trace(readings: list[TelemetryReading], subject_class: SubjectClass,
               interval_seconds: int, seed: int) -> str:
    """Trace file: a header line, then one reading per line."""
    if not readings:
        raise InputError("cannot dump an empty trace")
    lines = [
        f"subject={readings[0].subject} class={_CLASS_NAMES[subject_class]} "
        f"interval={interval_seconds} seed={seed}"
    ]
    for reading in readings:
        cells = [
            str(reading.timestamp),
            str(reading.temperature_decic),
            "1" if reading.light_exposed else "0",
        ]
        if reading.humidity_pct is not None:
            cells.append(str(reading.humidity_pct))
        lines.append(" ".join(cells))
    return "\n".join(lines) + "\n"


def load_trace(path: str | Path) -> tuple[list[TelemetryReading], SubjectClass]:
    text = Path(path).read_text(encoding="utf-8")
    lines = [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not lines:
        raise ConfigError(f"{path}: empty trace file")
    header = dict(
        token.split("=", 1) for token in lines[0].split() if "=" in token
    )
    subject = header.get("subject")
    class_name = header.get("class")
    if not subject or class_name not in _NAME_CLASSES:
        raise ConfigError(f"{path}: header must carry subject= and class=transport|storage")
    subject_class = _NAME_CLASSES[class_name]
    readings: list[TelemetryReading] = []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split()
        if len(cells) not in (3, 4):
            raise ConfigError(f"{path}:{lineno}: expected 'timestamp temp light [humidity]'")
        try:
            timestamp = int(cells[0])
            temp = int(cells[1])
            light = cells[2] == "1"
            humidity = int(cells[3]) if len(cells) == 4 else None
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: non-integer field") from None
        readings.append(
            TelemetryReading(
                subject=subject,
                timestamp=timestamp,
                temperature_decic=temp,
                light_exposed=light,
                humidity_pct=humidity,
            )
        )
    return readings, subject_class


def load_trace_profile(path: str | Path) -> TraceProfile:
    """Profile file: key=value lines plus `segment` / `light` lines."""
    text = Path(path).read_text(encoding="utf-8")
    values: dict[str, str] = {}
    segments: list[tuple[int, int, int]] = []
    lights: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("segment "):
            parts = line.split()
            if len(parts) != 4:
                raise ConfigError(f"{path}:{lineno}: segment needs 'offset duration temp'")
            segments.append((int(parts[1]), int(parts[2]), int(parts[3])))
        elif line.startswith("light "):
            parts = line.split()
            if len(parts) != 3:
                raise ConfigError(f"{path}:{lineno}: light needs 'offset duration'")
            lights.append((int(parts[1]), int(parts[2])))
        elif "=" in line:
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        else:
            raise ConfigError(f"{path}:{lineno}: unrecognized profile line")
    try:
        subject = values["subject"]
        class_name = values["class"]
    except KeyError as exc:
        raise ConfigError(f"{path}: profile missing {exc}") from None
    if class_name not in _NAME_CLASSES:
        raise ConfigError(f"{path}: class must be transport or storage")

    def intval(key: str, default: int) -> int:
        return int(values[key]) if key in values else default

    humidity_base = int(values["humidity_base"]) if "humidity_base" in values else None
    return TraceProfile(
        subject=subject,
        subject_class=_NAME_CLASSES[class_name],
        base_temp_decic=intval("base", 0),
        noise_amplitude_decic=intval("amplitude", 0),
        interval_seconds=intval("interval", DEFAULT_INTERVAL_SECONDS),
        start_timestamp=intval("start", 0),
        seed=intval("seed", 0),
        excursion_segments=tuple(segments),
        light_events=tuple(lights),
        humidity_base_pct=humidity_base,
        humidity_amplitude_pct=intval("humidity_amplitude", 0),
    )
