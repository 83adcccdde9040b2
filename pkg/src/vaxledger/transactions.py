"""Transaction records: kind-specific payloads, canonical bytes, signatures.

A transaction's signature covers the signing bytes (version, kind, payload,
author, timestamp); its id is the digest of the full record (signing bytes
plus signature).  Both byte layouts are fixed here and nowhere else.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import encoding
from .coldchain import TelemetryReading
from .encoding import Reader, Writer
from .errors import EncodingError
from .identity import ActorIdentity, TxKind, verify


class StorageEvent(enum.IntEnum):
    NONE = 0
    THAW = 1
    PUNCTURE = 2


class SubjectClass(enum.IntEnum):
    TRANSPORT = 1
    STORAGE = 2


class AlertSeverity(enum.IntEnum):
    WARNING = 1
    CRITICAL = 2


@dataclass(frozen=True)
class ProductRulesPayload:
    profile_text: str


@dataclass(frozen=True)
class RegisterLotPayload:
    vid: str
    product_id: str
    vial_count: int
    manufactured_at: int


@dataclass(frozen=True)
class DispatchTimePayload:
    vid: str
    dispatched_at: int


@dataclass(frozen=True)
class StartTransportPayload:
    vid: str
    tid: str
    dispatched_at: int


@dataclass(frozen=True)
class ReceiveLotPayload:
    vid: str
    tid_scanned: str
    center_id: str
    received_at: int


@dataclass(frozen=True)
class StoreLotPayload:
    vid: str
    storage_unit: str | None
    at: int
    event: StorageEvent = StorageEvent.NONE
    vial_index: int | None = None


@dataclass(frozen=True)
class TelemetryBatchPayload:
    subject: str
    subject_class: SubjectClass
    readings: tuple[TelemetryReading, ...]


@dataclass(frozen=True)
class RegisterBeneficiaryPayload:
    bid: str
    center_id: str
    requested_at: int
    priority_class: int


@dataclass(frozen=True)
class ScheduleDosesPayload:
    center_id: str
    as_of_day: int
    daily_capacity: int


@dataclass(frozen=True)
class AdministerDosePayload:
    bid: str
    vid: str
    vial_index: int
    at: int


@dataclass(frozen=True)
class IssueCertificatePayload:
    bid: str
    at: int


@dataclass(frozen=True)
class SideEffectPayload:
    bid: str
    vid: str
    description: str
    at: int


@dataclass(frozen=True)
class AdverseEventPayload:
    bid: str
    vid: str
    grade: int
    description: str
    at: int


@dataclass(frozen=True)
class AlertPayload:
    subject: str
    severity: AlertSeverity
    message: str
    at: int


Payload = (
    ProductRulesPayload
    | RegisterLotPayload
    | DispatchTimePayload
    | StartTransportPayload
    | ReceiveLotPayload
    | StoreLotPayload
    | TelemetryBatchPayload
    | RegisterBeneficiaryPayload
    | ScheduleDosesPayload
    | AdministerDosePayload
    | IssueCertificatePayload
    | SideEffectPayload
    | AdverseEventPayload
    | AlertPayload
)

_PAYLOAD_TYPES: dict[TxKind, type] = {
    TxKind.DEFINE_PRODUCT_RULES: ProductRulesPayload,
    TxKind.REGISTER_LOT: RegisterLotPayload,
    TxKind.RECORD_DISPATCH_TIME: DispatchTimePayload,
    TxKind.START_TRANSPORT: StartTransportPayload,
    TxKind.RECEIVE_LOT: ReceiveLotPayload,
    TxKind.STORE_LOT: StoreLotPayload,
    TxKind.TELEMETRY_BATCH: TelemetryBatchPayload,
    TxKind.REGISTER_BENEFICIARY: RegisterBeneficiaryPayload,
    TxKind.REGISTER_SELF: RegisterBeneficiaryPayload,
    TxKind.SCHEDULE_DOSES: ScheduleDosesPayload,
    TxKind.ADMINISTER_DOSE: AdministerDosePayload,
    TxKind.ISSUE_CERTIFICATE: IssueCertificatePayload,
    TxKind.REPORT_SIDE_EFFECT: SideEffectPayload,
    TxKind.REPORT_ADVERSE_EVENT: AdverseEventPayload,
    TxKind.ALERT: AlertPayload,
}


def payload_type(kind: TxKind) -> type:
    return _PAYLOAD_TYPES[kind]


def _write_payload(w: Writer, kind: TxKind, payload: Payload) -> None:
    expected = _PAYLOAD_TYPES[kind]
    if not isinstance(payload, expected):
        raise EncodingError(
            f"kind {kind.name} requires {expected.__name__}, got {type(payload).__name__}"
        )
    if isinstance(payload, ProductRulesPayload):
        w.string(payload.profile_text)
    elif isinstance(payload, RegisterLotPayload):
        w.string(payload.vid)
        w.string(payload.product_id)
        w.u32(payload.vial_count)
        w.u64(payload.manufactured_at)
    elif isinstance(payload, DispatchTimePayload):
        w.string(payload.vid)
        w.u64(payload.dispatched_at)
    elif isinstance(payload, StartTransportPayload):
        w.string(payload.vid)
        w.string(payload.tid)
        w.u64(payload.dispatched_at)
    elif isinstance(payload, ReceiveLotPayload):
        w.string(payload.vid)
        w.string(payload.tid_scanned)
        w.string(payload.center_id)
        w.u64(payload.received_at)
    elif isinstance(payload, StoreLotPayload):
        w.string(payload.vid)
        w.optional_string(payload.storage_unit)
        w.u64(payload.at)
        w.u8(int(payload.event))
        w.optional_u32(payload.vial_index)
    elif isinstance(payload, TelemetryBatchPayload):
        w.string(payload.subject)
        w.u8(int(payload.subject_class))
        w.u32(len(payload.readings))
        for reading in payload.readings:
            w.u64(reading.timestamp)
            w.i64(reading.temperature_decic)
            w.boolean(reading.light_exposed)
            w.optional_u8(reading.humidity_pct)
    elif isinstance(payload, RegisterBeneficiaryPayload):
        w.string(payload.bid)
        w.string(payload.center_id)
        w.u64(payload.requested_at)
        w.u32(payload.priority_class)
    elif isinstance(payload, ScheduleDosesPayload):
        w.string(payload.center_id)
        w.u64(payload.as_of_day)
        w.u32(payload.daily_capacity)
    elif isinstance(payload, AdministerDosePayload):
        w.string(payload.bid)
        w.string(payload.vid)
        w.u32(payload.vial_index)
        w.u64(payload.at)
    elif isinstance(payload, IssueCertificatePayload):
        w.string(payload.bid)
        w.u64(payload.at)
    elif isinstance(payload, SideEffectPayload):
        w.string(payload.bid)
        w.string(payload.vid)
        w.string(payload.description)
        w.u64(payload.at)
    elif isinstance(payload, AdverseEventPayload):
        w.string(payload.bid)
        w.string(payload.vid)
        w.u8(payload.grade)
        w.string(payload.description)
        w.u64(payload.at)
    elif isinstance(payload, AlertPayload):
        w.string(payload.subject)
        w.u8(int(payload.severity))
        w.string(payload.message)
        w.u64(payload.at)
    else:  # pragma: no cover - the union above is closed
        raise EncodingError(f"no codec for payload {type(payload).__name__}")


def _read_payload(r: Reader, kind: TxKind, subject_hint: str | None = None) -> Payload:
    if kind == TxKind.DEFINE_PRODUCT_RULES:
        return ProductRulesPayload(profile_text=r.string())
    if kind == TxKind.REGISTER_LOT:
        return RegisterLotPayload(
            vid=r.string(),
            product_id=r.string(),
            vial_count=r.u32(),
            manufactured_at=r.u64(),
        )
    if kind == TxKind.RECORD_DISPATCH_TIME:
        return DispatchTimePayload(vid=r.string(), dispatched_at=r.u64())
    if kind == TxKind.START_TRANSPORT:
        return StartTransportPayload(vid=r.string(), tid=r.string(), dispatched_at=r.u64())
    if kind == TxKind.RECEIVE_LOT:
        return ReceiveLotPayload(
            vid=r.string(),
            tid_scanned=r.string(),
            center_id=r.string(),
            received_at=r.u64(),
        )
    if kind == TxKind.STORE_LOT:
        return StoreLotPayload(
            vid=r.string(),
            storage_unit=r.optional_string(),
            at=r.u64(),
            event=StorageEvent(r.u8()),
            vial_index=r.optional_u32(),
        )
    if kind == TxKind.TELEMETRY_BATCH:
        subject = r.string()
        subject_class = SubjectClass(r.u8())
        count = r.u32()
        readings = tuple(
            TelemetryReading(
                subject=subject,
                timestamp=r.u64(),
                temperature_decic=r.i64(),
                light_exposed=r.boolean(),
                humidity_pct=r.optional_u8(),
            )
            for _ in range(count)
        )
        return TelemetryBatchPayload(
            subject=subject, subject_class=subject_class, readings=readings
        )
    if kind in (TxKind.REGISTER_BENEFICIARY, TxKind.REGISTER_SELF):
        return RegisterBeneficiaryPayload(
            bid=r.string(),
            center_id=r.string(),
            requested_at=r.u64(),
            priority_class=r.u32(),
        )
    if kind == TxKind.SCHEDULE_DOSES:
        return ScheduleDosesPayload(
            center_id=r.string(), as_of_day=r.u64(), daily_capacity=r.u32()
        )
    if kind == TxKind.ADMINISTER_DOSE:
        return AdministerDosePayload(
            bid=r.string(), vid=r.string(), vial_index=r.u32(), at=r.u64()
        )
    if kind == TxKind.ISSUE_CERTIFICATE:
        return IssueCertificatePayload(bid=r.string(), at=r.u64())
    if kind == TxKind.REPORT_SIDE_EFFECT:
        return SideEffectPayload(
            bid=r.string(), vid=r.string(), description=r.string(), at=r.u64()
        )
    if kind == TxKind.REPORT_ADVERSE_EVENT:
        return AdverseEventPayload(
            bid=r.string(),
            vid=r.string(),
            grade=r.u8(),
            description=r.string(),
            at=r.u64(),
        )
    if kind == TxKind.ALERT:
        return AlertPayload(
            subject=r.string(),
            severity=AlertSeverity(r.u8()),
            message=r.string(),
            at=r.u64(),
        )
    raise EncodingError(f"no codec for kind {kind}")


def payload_subjects(kind: TxKind, payload: Payload) -> frozenset[str]:
    """Every business identifier the payload references, for query filters."""
    subjects: set[str] = set()
    for attr in ("vid", "tid", "tid_scanned", "bid", "center_id", "subject", "storage_unit"):
        value = getattr(payload, attr, None)
        if isinstance(value, str) and value:
            subjects.add(value)
    return frozenset(subjects)


@dataclass(frozen=True)
class Transaction:
    """Signed ledger record.  tx_id is a cache of digest(record bytes)."""

    kind: TxKind
    payload: Payload
    author: str
    timestamp: int
    signature: bytes
    tx_id: bytes = field(compare=False)

    def subjects(self) -> frozenset[str]:
        return payload_subjects(self.kind, self.payload)


def signing_bytes(kind: TxKind, payload: Payload, author: str, timestamp: int) -> bytes:
    if timestamp < 0:
        raise EncodingError(f"timestamp must be nonnegative, got {timestamp}")
    w = Writer()
    w.u8(encoding.SCHEMA_VERSION)
    w.u8(int(kind))
    _write_payload(w, kind, payload)
    w.string(author)
    w.u64(timestamp)
    return w.getvalue()


def transaction_bytes(tx: Transaction) -> bytes:
    """Canonical full-record serialization (signing bytes plus signature)."""
    w = Writer()
    w.raw(signing_bytes(tx.kind, tx.payload, tx.author, tx.timestamp))
    w.bytes_(tx.signature)
    return w.getvalue()


def transaction_from_bytes(data: bytes, hash_alg: int = encoding.DEFAULT_HASH_ALG) -> Transaction:
    r = Reader(data)
    version = r.u8()
    if version != encoding.SCHEMA_VERSION:
        raise EncodingError(f"unsupported schema version {version}")
    try:
        kind = TxKind(r.u8())
    except ValueError as exc:
        raise EncodingError("unknown transaction kind tag") from exc
    payload = _read_payload(r, kind)
    author = r.string()
    timestamp = r.u64()
    signature = r.bytes_()
    r.expect_end()
    return Transaction(
        kind=kind,
        payload=payload,
        author=author,
        timestamp=timestamp,
        signature=signature,
        tx_id=encoding.digest(data, hash_alg),
    )


def sign_transaction(
    identity: ActorIdentity,
    kind: TxKind,
    payload: Payload,
    timestamp: int,
    hash_alg: int = encoding.DEFAULT_HASH_ALG,
) -> Transaction:
    """Build a signed transaction authored by `identity`."""
    message = signing_bytes(kind, payload, identity.actor_id, timestamp)
    signature = identity.sign(message)
    w = Writer()
    w.raw(message)
    w.bytes_(signature)
    return Transaction(
        kind=kind,
        payload=payload,
        author=identity.actor_id,
        timestamp=timestamp,
        signature=signature,
        tx_id=encoding.digest(w.getvalue(), hash_alg),
    )


def verify_transaction_signature(tx: Transaction, public_key: bytes) -> bool:
    try:
        message = signing_bytes(tx.kind, tx.payload, tx.author, tx.timestamp)
    except EncodingError:
        return False
    return verify(public_key, message, tx.signature)
