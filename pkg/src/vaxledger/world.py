"""Deterministic contract engine: business state and transaction handlers.

Every handler validates first and mutates only after all checks pass, so a
rejected transaction leaves the world untouched.  Replaying the same
transaction sequence over the same starting products always produces a
world with identical canonical bytes.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from . import certificates as certs
from . import coldchain
from . import encoding
from .coldchain import (
    EvaluationConfig,
    DEFAULT_EVALUATION,
    Phase,
    PhaseEvent,
    Severity,
    TelemetryReading,
    VaccineProduct,
    VialState,
    VialStatus,
)
from .encoding import Writer
from .errors import (
    AuthError,
    ConfigError,
    ConflictError,
    EligibilityError,
    EncodingError,
    InputError,
    InventoryError,
    LinkageError,
    RoutingError,
    SafetyError,
    SchedulingError,
    SpoiledLotError,
    StateError,
    VaxledgerError,
)
from .identity import ActorDirectory, ActorIdentity, CONTRACT_ACTOR_ID, PermissionMatrix, Role, TxKind, DEFAULT_MATRIX, kind_label
from .transactions import (
    AlertPayload,
    AlertSeverity,
    DispatchTimePayload,
    ProductRulesPayload,
    RegisterBeneficiaryPayload,
    RegisterLotPayload,
    StorageEvent,
    StoreLotPayload,
    SubjectClass,
    TelemetryBatchPayload,
    Transaction,
    payload_type,
)

SECONDS_PER_DAY = 86400


class LocationKind(enum.IntEnum):
    AT_MANUFACTURER = 1
    IN_TRANSIT = 2
    AT_CENTER = 3


@dataclass(frozen=True)
class Location:
    kind: LocationKind
    ref: str  # manufacturer id, TID, or center id


class AppointmentStatus(enum.IntEnum):
    PLANNED = 1
    COMPLETED = 2
    MISSED = 3


@dataclass
class LotRecord:
    vid: str
    product_id: str
    manufacturer: str
    vial_count: int
    manufactured_at: int
    vials: list[VialState]
    location: Location
    storage_unit: str | None = None
    dispatch_recorded_at: int | None = None
    received_at: int | None = None
    mismatch_flagged: bool = False

    def usable_doses(self, product: VaccineProduct) -> int:
        return sum(
            product.doses_per_vial - vial.doses_drawn
            for vial in self.vials
            if vial.status == VialStatus.USABLE
        )


@dataclass
class TransportRecord:
    tid: str
    vid: str
    carrier: str
    dispatched_at: int
    closed_at: int | None = None


@dataclass(frozen=True)
class DoseRecord:
    vid: str
    product_id: str
    dose_number: int
    at: int
    doctor: str


@dataclass
class BeneficiaryRecord:
    bid: str
    center_id: str
    requested_at: int
    priority_class: int
    registered_by: str
    doses: list[DoseRecord] = field(default_factory=list)
    has_open_request: bool = True


@dataclass
class CenterRecord:
    center_id: str


@dataclass
class Appointment:
    bid: str
    vid: str
    center_id: str
    dose_number: int
    scheduled_day: int
    status: AppointmentStatus = AppointmentStatus.PLANNED


@dataclass(frozen=True)
class Alert:
    at: int
    severity: Severity
    subject: str
    message: str


@dataclass(frozen=True)
class SideEffectReport:
    bid: str
    vid: str
    reported_at: int
    description: str


@dataclass(frozen=True)
class AdverseEventReport:
    bid: str
    vid: str
    reported_at: int
    grade: int
    description: str


@dataclass(frozen=True)
class DispatchOrder:
    center_id: str
    need_day: int
    doses_needed: int
    manufacturer: str
    latest_dispatch_time: int


@dataclass(frozen=True)
class Event:
    """One entry of the engine's event log."""

    kind: str
    at: int
    subject: str
    detail: str = ""
    reason: str | None = None
    tx_id: bytes | None = None

    def to_line(self) -> str:
        parts = [f"event={self.kind}", f"at={self.at}", f"subject={self.subject}"]
        if self.reason:
            parts.append(f"reason={self.reason}")
        if self.tx_id is not None:
            parts.append(f"tx={self.tx_id.hex()}")
        if self.detail:
            parts.append(f"detail={self.detail}")
        return " ".join(parts)


REJECTED = "Rejected"

_REASON_BY_ERROR: tuple[tuple[type, str], ...] = (
    (AuthError, "auth"),
    (SafetyError, "safety"),
    (SchedulingError, "scheduling"),
    (InventoryError, "inventory"),
    (SpoiledLotError, "spoiled-lot"),
    (LinkageError, "linkage"),
    (RoutingError, "routing"),
    (EligibilityError, "eligibility"),
    (ConflictError, "conflict"),
    (StateError, "state"),
    (InputError, "input"),
    (ConfigError, "config"),
    (EncodingError, "schema"),
)


def rejection_reason(error: VaxledgerError) -> str:
    for error_type, reason in _REASON_BY_ERROR:
        if isinstance(error, error_type):
            return reason
    return "error"


@dataclass
class WorldState:
    """Global business state derived from the ledger."""

    products: dict[str, VaccineProduct] = field(default_factory=dict)
    lots: dict[str, LotRecord] = field(default_factory=dict)
    transports: dict[str, TransportRecord] = field(default_factory=dict)
    beneficiaries: dict[str, BeneficiaryRecord] = field(default_factory=dict)
    centers: dict[str, CenterRecord] = field(default_factory=dict)
    appointments: list[Appointment] = field(default_factory=list)
    side_effects: list[SideEffectReport] = field(default_factory=list)
    adverse_events: list[AdverseEventReport] = field(default_factory=list)
    alerts: list[Alert] = field(default_factory=list)
    certificates: list[certs.Certificate] = field(default_factory=list)

    def lots_at_center(self, center_id: str) -> list[LotRecord]:
        return sorted(
            (
                lot
                for lot in self.lots.values()
                if lot.location.kind == LocationKind.AT_CENTER
                and lot.location.ref == center_id
            ),
            key=lambda lot: (lot.received_at or 0, lot.vid),
        )

    def dose_history(self, bid: str) -> list[DoseRecord]:
        record = self.beneficiaries.get(bid)
        return list(record.doses) if record else []


def new_world(products: Iterable[VaccineProduct] = ()) -> WorldState:
    world = WorldState()
    for product in products:
        world.products[product.product_id] = product
    return world


def _write_vial(w: Writer, vial: VialState) -> None:
    w.string(vial.vid)
    w.u32(vial.index)
    w.u8(int(vial.phase))
    w.u8(int(vial.status))
    w.optional_string(vial.spoil_reason)
    w.u32(len(vial.budgets_remaining))
    for budget in vial.budgets_remaining:
        w.optional_u64(budget)
    w.u64(vial.grace_remaining)
    w.u64(vial.light_exposure_seconds)
    w.boolean(vial.light_alerted)
    w.boolean(vial.out_of_range_alerted)
    w.u32(vial.doses_drawn)
    w.u64(vial.phase_entered_at)
    w.u64(vial.last_evaluated_at)
    if vial.held is None:
        w.boolean(False)
    else:
        w.boolean(True)
        w.u64(vial.held.timestamp)
        w.i64(vial.held.temperature_decic)
        w.boolean(vial.held.light_exposed)


def world_bytes(world: WorldState) -> bytes:
    """Canonical serialization of the full business state."""
    w = Writer()
    w.u8(encoding.SCHEMA_VERSION)

    w.u32(len(world.products))
    for product_id in sorted(world.products):
        w.string(coldchain.dump_profiles([world.products[product_id]]))

    w.u32(len(world.lots))
    for vid in sorted(world.lots):
        lot = world.lots[vid]
        w.string(lot.vid)
        w.string(lot.product_id)
        w.string(lot.manufacturer)
        w.u32(lot.vial_count)
        w.u64(lot.manufactured_at)
        w.u8(int(lot.location.kind))
        w.string(lot.location.ref)
        w.optional_string(lot.storage_unit)
        w.optional_u64(lot.dispatch_recorded_at)
        w.optional_u64(lot.received_at)
        w.boolean(lot.mismatch_flagged)
        w.u32(len(lot.vials))
        for vial in lot.vials:
            _write_vial(w, vial)

    w.u32(len(world.transports))
    for tid in sorted(world.transports):
        transport = world.transports[tid]
        w.string(transport.tid)
        w.string(transport.vid)
        w.string(transport.carrier)
        w.u64(transport.dispatched_at)
        w.optional_u64(transport.closed_at)

    w.u32(len(world.beneficiaries))
    for bid in sorted(world.beneficiaries):
        record = world.beneficiaries[bid]
        w.string(record.bid)
        w.string(record.center_id)
        w.u64(record.requested_at)
        w.u32(record.priority_class)
        w.string(record.registered_by)
        w.boolean(record.has_open_request)
        w.u32(len(record.doses))
        for dose in record.doses:
            w.string(dose.vid)
            w.string(dose.product_id)
            w.u8(dose.dose_number)
            w.u64(dose.at)
            w.string(dose.doctor)

    w.u32(len(world.centers))
    for center_id in sorted(world.centers):
        w.string(center_id)

    w.u32(len(world.appointments))
    for appointment in world.appointments:
        w.string(appointment.bid)
        w.string(appointment.vid)
        w.string(appointment.center_id)
        w.u8(appointment.dose_number)
        w.u64(appointment.scheduled_day)
        w.u8(int(appointment.status))

    w.u32(len(world.side_effects))
    for report in world.side_effects:
        w.string(report.bid)
        w.string(report.vid)
        w.u64(report.reported_at)
        w.string(report.description)

    w.u32(len(world.adverse_events))
    for report in world.adverse_events:
        w.string(report.bid)
        w.string(report.vid)
        w.u64(report.reported_at)
        w.u8(report.grade)
        w.string(report.description)

    w.u32(len(world.alerts))
    for alert in world.alerts:
        w.u64(alert.at)
        w.u8(int(alert.severity))
        w.string(alert.subject)
        w.string(alert.message)

    w.u32(len(world.certificates))
    for cert in world.certificates:
        w.bytes_(certs.certificate_bytes(cert))

    return w.getvalue()


def world_digest(world: WorldState, hash_alg: int = encoding.DEFAULT_HASH_ALG) -> bytes:
    return encoding.digest(world_bytes(world), hash_alg)


class ContractEngine:
    """Applies transactions to a WorldState under the permission matrix."""

    def __init__(
        self,
        directory: ActorDirectory,
        matrix: PermissionMatrix = DEFAULT_MATRIX,
        evaluation: EvaluationConfig = DEFAULT_EVALUATION,
        contract_actor_id: str = CONTRACT_ACTOR_ID,
    ) -> None:
        self.directory = directory
        self.matrix = matrix
        self.evaluation = evaluation
        self.contract_actor_id = contract_actor_id

    # -- authorization -------------------------------------------------

    def _authorize(self, tx: Transaction) -> ActorIdentity:
        author = self.directory.get(tx.author)
        if author is None:
            raise AuthError(f"unknown author {tx.author!r}")
        if tx.kind == TxKind.ALERT:
            if tx.author != self.contract_actor_id:
                raise AuthError("only the contract identity may author alerts")
            return author
        if not self.matrix.allows(author.role, tx.kind):
            raise AuthError(
                f"role {author.role.value} may not submit {kind_label(tx.kind)}"
            )
        return author

    # -- dispatch --------------------------------------------------------

    def apply_transaction(self, world: WorldState, tx: Transaction) -> list[Event]:
        """Apply one transaction; on rejection the world is left unchanged."""
        try:
            author = self._authorize(tx)
            expected = payload_type(tx.kind)
            if not isinstance(tx.payload, expected):
                raise EncodingError(
                    f"{kind_label(tx.kind)} payload must be {expected.__name__}"
                )
            events = self._dispatch(world, tx, author)
        except VaxledgerError as error:
            return [
                Event(
                    kind=REJECTED,
                    at=tx.timestamp,
                    subject=kind_label(tx.kind),
                    detail=f"author={tx.author}: {error}",
                    reason=rejection_reason(error),
                    tx_id=tx.tx_id,
                )
            ]
        return events

    def _dispatch(self, world: WorldState, tx: Transaction, author: ActorIdentity) -> list[Event]:
        payload = tx.payload
        if tx.kind == TxKind.DEFINE_PRODUCT_RULES:
            return self.define_product_rules(world, payload, tx)
        if tx.kind == TxKind.REGISTER_LOT:
            return self.register_lot(world, payload, tx)
        if tx.kind == TxKind.RECORD_DISPATCH_TIME:
            return self.record_dispatch_time(world, payload, tx)
        if tx.kind == TxKind.START_TRANSPORT:
            return self.link_transport(
                world, payload.vid, payload.tid, payload.dispatched_at, tx.author, tx
            )
        if tx.kind == TxKind.RECEIVE_LOT:
            return self.receive_lot(
                world,
                payload.vid,
                payload.tid_scanned,
                payload.center_id,
                payload.received_at,
                tx,
            )
        if tx.kind == TxKind.STORE_LOT:
            return self.store_lot(world, payload, tx)
        if tx.kind == TxKind.TELEMETRY_BATCH:
            _, events = self.ingest_telemetry(world, payload, author, tx)
            return events
        if tx.kind in (TxKind.REGISTER_BENEFICIARY, TxKind.REGISTER_SELF):
            return self.register_beneficiary(world, payload, author, tx)
        if tx.kind == TxKind.SCHEDULE_DOSES:
            _, events = self.schedule_doses(
                world,
                payload.center_id,
                payload.as_of_day,
                payload.daily_capacity,
                tx=tx,
            )
            return events
        if tx.kind == TxKind.ADMINISTER_DOSE:
            return self.administer_dose(
                world, payload.bid, payload.vid, payload.vial_index, tx.author, payload.at, tx
            )
        if tx.kind == TxKind.ISSUE_CERTIFICATE:
            return self.issue_certificate(world, payload.bid, author, tx)
        if tx.kind == TxKind.REPORT_SIDE_EFFECT:
            return self.report_side_effect(
                world, payload.bid, payload.vid, payload.description, payload.at, tx
            )
        if tx.kind == TxKind.REPORT_ADVERSE_EVENT:
            return self.report_adverse_event(
                world,
                payload.bid,
                payload.vid,
                payload.grade,
                payload.description,
                payload.at,
                tx,
            )
        if tx.kind == TxKind.ALERT:
            return [
                Event(
                    kind="AlertRecorded",
                    at=payload.at,
                    subject=payload.subject,
                    detail=payload.message,
                    tx_id=tx.tx_id,
                )
            ]
        raise EncodingError(f"unhandled transaction kind {tx.kind}")

    # -- handlers --------------------------------------------------------

    def define_product_rules(
        self, world: WorldState, payload: ProductRulesPayload, tx: Transaction
    ) -> list[Event]:
        products = coldchain.load_profiles(payload.profile_text)
        if not products:
            raise InputError("profile text defines no products")
        for product in products:
            world.products[product.product_id] = product
        return [
            Event(
                kind="ProductDefined",
                at=tx.timestamp,
                subject=product.product_id,
                tx_id=tx.tx_id,
            )
            for product in products
        ]

    def register_lot(
        self, world: WorldState, payload: RegisterLotPayload, tx: Transaction
    ) -> list[Event]:
        if payload.vid in world.lots:
            raise ConflictError(f"lot {payload.vid!r} already registered")
        product = world.products.get(payload.product_id)
        if product is None:
            raise StateError(f"unknown product {payload.product_id!r}")
        if payload.vial_count <= 0:
            raise InputError("vial_count must be positive")
        vials = [
            coldchain.new_vial_state(
                product, payload.vid, index, payload.manufactured_at, self.evaluation
            )
            for index in range(payload.vial_count)
        ]
        world.lots[payload.vid] = LotRecord(
            vid=payload.vid,
            product_id=payload.product_id,
            manufacturer=tx.author,
            vial_count=payload.vial_count,
            manufactured_at=payload.manufactured_at,
            vials=vials,
            location=Location(LocationKind.AT_MANUFACTURER, tx.author),
        )
        return [
            Event(
                kind="LotRegistered",
                at=tx.timestamp,
                subject=payload.vid,
                detail=f"product={payload.product_id} vials={payload.vial_count}",
                tx_id=tx.tx_id,
            )
        ]

    def record_dispatch_time(
        self, world: WorldState, payload: DispatchTimePayload, tx: Transaction
    ) -> list[Event]:
        lot = world.lots.get(payload.vid)
        if lot is None:
            raise StateError(f"unknown lot {payload.vid!r}")
        if lot.manufacturer != tx.author:
            raise AuthError("only the registering manufacturer may record dispatch time")
        lot.dispatch_recorded_at = payload.dispatched_at
        return [
            Event(
                kind="DispatchRecorded",
                at=payload.dispatched_at,
                subject=payload.vid,
                tx_id=tx.tx_id,
            )
        ]

    def link_transport(
        self,
        world: WorldState,
        vid: str,
        tid: str,
        dispatched_at: int,
        carrier: str,
        tx: Transaction | None = None,
    ) -> list[Event]:
        lot = world.lots.get(vid)
        if lot is None:
            raise StateError(f"unknown lot {vid!r}")
        if lot.location.kind != LocationKind.AT_MANUFACTURER:
            raise StateError(f"lot {vid} is not at the manufacturer")
        if not any(vial.status == VialStatus.USABLE for vial in lot.vials):
            raise SpoiledLotError(f"lot {vid} has no usable vials to transport")
        open_transport = world.transports.get(tid)
        if open_transport is not None and open_transport.closed_at is None:
            raise StateError(f"vehicle {tid} is already carrying lot {open_transport.vid}")
        lot.location = Location(LocationKind.IN_TRANSIT, tid)
        world.transports[tid] = TransportRecord(
            tid=tid, vid=vid, carrier=carrier, dispatched_at=dispatched_at
        )
        return [
            Event(
                kind="TransportLinked",
                at=dispatched_at,
                subject=vid,
                detail=f"tid={tid}",
                tx_id=tx.tx_id if tx else None,
            )
        ]

    def receive_lot(
        self,
        world: WorldState,
        vid: str,
        tid_scanned: str,
        center_id: str,
        received_at: int,
        tx: Transaction | None = None,
    ) -> list[Event]:
        lot = world.lots.get(vid)
        if lot is None:
            raise StateError(f"unknown lot {vid!r}")
        if lot.location.kind != LocationKind.IN_TRANSIT:
            raise StateError(f"lot {vid} is not in transit")
        if tx is not None and center_id != tx.author:
            raise StateError("a center may only receive into itself")
        actual_tid = lot.location.ref
        if tid_scanned != actual_tid:
            lot.mismatch_flagged = True
            return [
                Event(
                    kind="MismatchedTransport",
                    at=received_at,
                    subject=vid,
                    detail=f"scanned={tid_scanned} linked={actual_tid}",
                    tx_id=tx.tx_id if tx else None,
                )
            ]
        lot.location = Location(LocationKind.AT_CENTER, center_id)
        lot.received_at = received_at
        transport = world.transports.get(actual_tid)
        if transport is not None and transport.vid == vid:
            transport.closed_at = received_at
        if center_id not in world.centers:
            world.centers[center_id] = CenterRecord(center_id=center_id)
        return [
            Event(
                kind="LotReceived",
                at=received_at,
                subject=vid,
                detail=f"center={center_id} tid={actual_tid}",
                tx_id=tx.tx_id if tx else None,
            )
        ]

    def store_lot(
        self, world: WorldState, payload: StoreLotPayload, tx: Transaction
    ) -> list[Event]:
        lot = world.lots.get(payload.vid)
        if lot is None:
            raise StateError(f"unknown lot {payload.vid!r}")
        if lot.location.kind != LocationKind.AT_CENTER:
            raise StateError(f"lot {payload.vid} is not at a center")
        if lot.location.ref != tx.author:
            raise StateError("a center may only manage lots it holds")
        product = world.products[lot.product_id]

        if payload.event == StorageEvent.NONE:
            if payload.storage_unit is None:
                raise InputError("storage_unit required when no phase event is given")
            lot.storage_unit = payload.storage_unit
            return [
                Event(
                    kind="LotStored",
                    at=payload.at,
                    subject=payload.vid,
                    detail=f"unit={payload.storage_unit}",
                    tx_id=tx.tx_id,
                )
            ]

        if payload.event == StorageEvent.THAW:
            usable = [v for v in lot.vials if v.status == VialStatus.USABLE]
            if not usable:
                raise StateError(f"lot {payload.vid} has no usable vials to thaw")
            thawed = [
                coldchain.transition_phase(product, vial, PhaseEvent.THAW, payload.at, self.evaluation)
                for vial in usable
            ]
            for vial in thawed:
                lot.vials[vial.index] = vial
            if payload.storage_unit is not None:
                lot.storage_unit = payload.storage_unit
            return [
                Event(
                    kind="VialsThawed",
                    at=payload.at,
                    subject=payload.vid,
                    detail=f"count={len(thawed)}",
                    tx_id=tx.tx_id,
                )
            ]

        if payload.event == StorageEvent.PUNCTURE:
            if payload.vial_index is None:
                raise InputError("vial_index required for a puncture event")
            if not 0 <= payload.vial_index < len(lot.vials):
                raise InputError(f"vial index {payload.vial_index} out of range")
            vial = lot.vials[payload.vial_index]
            punctured = coldchain.transition_phase(
                product, vial, PhaseEvent.PUNCTURE, payload.at, self.evaluation
            )
            lot.vials[payload.vial_index] = punctured
            if payload.storage_unit is not None:
                lot.storage_unit = payload.storage_unit
            return [
                Event(
                    kind="VialPunctured",
                    at=payload.at,
                    subject=payload.vid,
                    detail=f"vial={payload.vial_index}",
                    tx_id=tx.tx_id,
                )
            ]
        raise InputError(f"unknown storage event {payload.event}")

    # -- telemetry -------------------------------------------------------

    def ingest_telemetry(
        self,
        world: WorldState,
        payload: TelemetryBatchPayload,
        author: ActorIdentity,
        tx: Transaction | None = None,
    ) -> tuple[list[Alert], list[Event]]:
        if not payload.readings:
            raise InputError("telemetry batch is empty")
        if author.role == Role.DISTRIBUTOR and payload.subject_class != SubjectClass.TRANSPORT:
            raise AuthError("distributors may only report transport telemetry")
        if author.role == Role.MEDICAL_CENTER and payload.subject_class != SubjectClass.STORAGE:
            raise AuthError("medical centers may only report storage telemetry")

        if payload.subject_class == SubjectClass.TRANSPORT:
            targets = [
                lot
                for lot in world.lots.values()
                if lot.location.kind == LocationKind.IN_TRANSIT
                and lot.location.ref == payload.subject
            ]
        else:
            targets = [
                lot
                for lot in world.lots.values()
                if lot.location.kind == LocationKind.AT_CENTER
                and lot.location.ref == author.actor_id
                and lot.storage_unit == payload.subject
            ]
        targets.sort(key=lambda lot: lot.vid)
        if not targets:
            raise RoutingError(f"no lot is attached to subject {payload.subject!r}")

        # Evaluate every vial first; commit only if no evaluation raises.
        staged: list[tuple[LotRecord, int, VialState]] = []
        raised: set[tuple[int, Severity, str]] = set()
        for lot in targets:
            product = world.products[lot.product_id]
            for vial in lot.vials:
                if vial.status != VialStatus.USABLE:
                    continue
                result = coldchain.evaluate_excursion(
                    product, vial, payload.readings, self.evaluation
                )
                staged.append((lot, vial.index, result.state))
                for alert in result.alerts:
                    raised.add((alert.at, alert.severity, alert.message))

        for lot, index, state in staged:
            lot.vials[index] = state

        alerts = [
            Alert(at=at, severity=severity, subject=payload.subject, message=message)
            for at, severity, message in sorted(
                raised, key=lambda item: (item[0], int(item[1]), item[2])
            )
        ]
        world.alerts.extend(alerts)

        events = [
            Event(
                kind="TelemetryApplied",
                at=payload.readings[-1].timestamp,
                subject=payload.subject,
                detail=f"readings={len(payload.readings)} lots={len(targets)}",
                tx_id=tx.tx_id if tx else None,
            )
        ]
        events.extend(
            Event(
                kind="AlertRaised",
                at=alert.at,
                subject=alert.subject,
                detail=alert.message,
                reason=alert.severity.name.lower(),
                tx_id=tx.tx_id if tx else None,
            )
            for alert in alerts
        )
        return alerts, events

    # -- beneficiaries and scheduling -------------------------------------

    def register_beneficiary(
        self,
        world: WorldState,
        payload: RegisterBeneficiaryPayload,
        author: ActorIdentity,
        tx: Transaction,
    ) -> list[Event]:
        if not payload.bid:
            raise InputError("bid must be nonempty")
        if tx.kind == TxKind.REGISTER_SELF and payload.bid != tx.author:
            raise AuthError("beneficiaries may only register themselves")
        if payload.bid in world.beneficiaries:
            raise ConflictError(f"beneficiary {payload.bid!r} already registered")
        center = self.directory.get(payload.center_id)
        if center is None or center.role != Role.MEDICAL_CENTER:
            raise StateError(f"unknown medical center {payload.center_id!r}")
        world.beneficiaries[payload.bid] = BeneficiaryRecord(
            bid=payload.bid,
            center_id=payload.center_id,
            requested_at=payload.requested_at,
            priority_class=payload.priority_class,
            registered_by=tx.author,
        )
        if payload.center_id not in world.centers:
            world.centers[payload.center_id] = CenterRecord(center_id=payload.center_id)
        return [
            Event(
                kind="BeneficiaryRegistered",
                at=payload.requested_at,
                subject=payload.bid,
                detail=f"center={payload.center_id} priority={payload.priority_class}",
                tx_id=tx.tx_id,
            )
        ]

    def _demand_items(
        self, world: WorldState, center_id: str, as_of_day: int
    ) -> list[tuple[tuple[int, int, int, str], str, int, int]]:
        """Unserved demand as (sort_key, bid, dose_number, earliest_day)."""
        items = []
        planned_or_done: set[tuple[str, int]] = {
            (a.bid, a.dose_number)
            for a in world.appointments
            if a.status != AppointmentStatus.MISSED
        }
        for bid in sorted(world.beneficiaries):
            record = world.beneficiaries[bid]
            if record.center_id != center_id:
                continue
            if len(record.doses) == 0:
                if record.has_open_request and (bid, 1) not in planned_or_done:
                    key = (1, record.priority_class, record.requested_at, bid)
                    items.append((key, bid, 1, as_of_day))
            elif len(record.doses) == 1 and (bid, 2) not in planned_or_done:
                dose1 = record.doses[0]
                product = world.products.get(dose1.product_id)
                interval = product.dose_interval_days if product else 28
                earliest = max(as_of_day, dose1.at // SECONDS_PER_DAY + interval)
                key = (0, record.priority_class, record.requested_at, bid)
                items.append((key, bid, 2, earliest))
        items.sort(key=lambda item: item[0])
        return items

    def schedule_doses(
        self,
        world: WorldState,
        center_id: str,
        as_of_day: int,
        daily_capacity: int,
        tx: Transaction | None = None,
    ) -> tuple[list[Appointment], list[Event]]:
        """Assign earliest feasible days to open demand at the center.

        Demand order on any day: second doses first, then by
        (priority_class, requested_at, bid).  Assignments respect the
        daily capacity, per-lot usable-dose inventory net of existing
        planned appointments, and the dose-2 interval.
        """
        center = self.directory.get(center_id)
        if center is None or center.role != Role.MEDICAL_CENTER:
            raise StateError(f"unknown medical center {center_id!r}")
        if tx is not None and center_id != tx.author:
            raise StateError("a center may only schedule its own operation")
        if daily_capacity <= 0:
            raise InputError("daily_capacity must be positive")

        items = self._demand_items(world, center_id, as_of_day)

        lot_remaining: dict[str, int] = {}
        for lot in world.lots_at_center(center_id):
            product = world.products[lot.product_id]
            lot_remaining[lot.vid] = lot.usable_doses(product)
        for appointment in world.appointments:
            if (
                appointment.center_id == center_id
                and appointment.status == AppointmentStatus.PLANNED
                and appointment.vid in lot_remaining
            ):
                lot_remaining[appointment.vid] -= 1
        ordered_lots = [lot.vid for lot in world.lots_at_center(center_id)]

        used: dict[int, int] = {}
        for appointment in world.appointments:
            if (
                appointment.center_id == center_id
                and appointment.status == AppointmentStatus.PLANNED
            ):
                used[appointment.scheduled_day] = used.get(appointment.scheduled_day, 0) + 1

        def take_dose() -> str | None:
            for vid in ordered_lots:
                if lot_remaining.get(vid, 0) > 0:
                    lot_remaining[vid] -= 1
                    return vid
            return None

        new_appointments: list[Appointment] = []
        pending = list(items)
        day = as_of_day
        # Every eligible item lands within len(items) days of its earliest day
        # once existing planned slots are skipped over.
        existing_planned = sum(used.values())
        horizon = (
            max((item[3] for item in items), default=as_of_day)
            + len(items)
            + existing_planned
            + 1
        )
        while pending and day <= horizon:
            if sum(lot_remaining.values()) <= 0:
                break
            capacity = daily_capacity - used.get(day, 0)
            still_pending = []
            for item in pending:
                key, bid, dose_number, earliest = item
                if capacity <= 0 or earliest > day:
                    still_pending.append(item)
                    continue
                vid = take_dose()
                if vid is None:
                    still_pending.append(item)
                    continue
                appointment = Appointment(
                    bid=bid,
                    vid=vid,
                    center_id=center_id,
                    dose_number=dose_number,
                    scheduled_day=day,
                )
                new_appointments.append(appointment)
                capacity -= 1
            used[day] = daily_capacity - capacity
            pending = still_pending
            day += 1

        for appointment in new_appointments:
            world.appointments.append(appointment)
            if appointment.dose_number == 1:
                world.beneficiaries[appointment.bid].has_open_request = False

        at = tx.timestamp if tx else as_of_day * SECONDS_PER_DAY
        events = [
            Event(
                kind="DoseScheduled",
                at=at,
                subject=appointment.bid,
                detail=(
                    f"dose={appointment.dose_number} day={appointment.scheduled_day} "
                    f"vid={appointment.vid}"
                ),
                tx_id=tx.tx_id if tx else None,
            )
            for appointment in new_appointments
        ]
        events.extend(
            Event(
                kind="ScheduleShortfall",
                at=at,
                subject=bid,
                detail=f"dose={dose_number} unassigned",
                tx_id=tx.tx_id if tx else None,
            )
            for _, bid, dose_number, _ in pending
        )
        return new_appointments, events

    def plan_dispatch(
        self,
        world: WorldState,
        center_id: str,
        as_of_day: int,
        horizon_days: int,
        transport_seconds: Mapping[str, int],
        safety_margin_seconds: int,
    ) -> list[DispatchOrder]:
        """Dispatch orders for days whose demand outruns projected inventory."""
        if not transport_seconds:
            raise ConfigError("transport map is empty")
        for manufacturer in transport_seconds:
            identity = self.directory.get(manufacturer)
            if identity is None or identity.role != Role.MANUFACTURER:
                raise ConfigError(f"unknown manufacturer {manufacturer!r} in transport map")
        source = min(transport_seconds, key=lambda m: (transport_seconds[m], m))

        balance = 0
        for lot in world.lots_at_center(center_id):
            product = world.products[lot.product_id]
            balance += lot.usable_doses(product)

        demand: dict[int, int] = {}
        for appointment in world.appointments:
            if (
                appointment.center_id == center_id
                and appointment.status == AppointmentStatus.PLANNED
            ):
                demand[appointment.scheduled_day] = (
                    demand.get(appointment.scheduled_day, 0) + 1
                )

        orders: list[DispatchOrder] = []
        for day in range(as_of_day, as_of_day + horizon_days):
            balance -= demand.get(day, 0)
            if balance < 0:
                need_time = day * SECONDS_PER_DAY
                orders.append(
                    DispatchOrder(
                        center_id=center_id,
                        need_day=day,
                        doses_needed=-balance,
                        manufacturer=source,
                        latest_dispatch_time=need_time
                        - transport_seconds[source]
                        - safety_margin_seconds,
                    )
                )
                balance = 0
        orders.sort(key=lambda order: (order.latest_dispatch_time, order.need_day))
        return orders

    # -- doses, certificates, reports --------------------------------------

    def administer_dose(
        self,
        world: WorldState,
        bid: str,
        vid: str,
        vial_index: int,
        doctor: str,
        at: int,
        tx: Transaction | None = None,
    ) -> list[Event]:
        record = world.beneficiaries.get(bid)
        if record is None:
            raise StateError(f"beneficiary {bid!r} is not registered")
        lot = world.lots.get(vid)
        if lot is None:
            raise StateError(f"unknown lot {vid!r}")
        if not 0 <= vial_index < len(lot.vials):
            raise StateError(f"vial index {vial_index} out of range")
        if lot.location.kind != LocationKind.AT_CENTER:
            raise StateError(f"lot {vid} is not at a center")
        product = world.products[lot.product_id]
        vial = lot.vials[vial_index]

        # The central safety check: never draw from a vial that is not a
        # usable, punctured vial within shelf life.
        checked = coldchain.expiry_check(product, vial, at, lot.manufactured_at)
        if checked.status != VialStatus.USABLE:
            raise SafetyError(
                f"vial {vid}[{vial_index}] is {checked.status.name}"
                + (f" ({checked.spoil_reason})" if checked.spoil_reason else "")
            )
        if vial.phase != Phase.PUNCTURED:
            raise SafetyError(
                f"vial {vid}[{vial_index}] is not punctured for administration"
            )

        dose_number = len(record.doses) + 1
        day = at // SECONDS_PER_DAY
        appointment = next(
            (
                a
                for a in world.appointments
                if a.bid == bid
                and a.dose_number == dose_number
                and a.center_id == lot.location.ref
                and a.scheduled_day == day
                and a.status == AppointmentStatus.PLANNED
            ),
            None,
        )
        if appointment is None:
            raise SchedulingError(
                f"no planned appointment for ({bid}, dose {dose_number}) "
                f"at {lot.location.ref} on day {day}"
            )
        if vial.doses_drawn >= product.doses_per_vial:
            raise InventoryError(f"vial {vid}[{vial_index}] has no doses left")

        drawn = vial.doses_drawn + 1
        status = (
            VialStatus.ADMINISTERED if drawn == product.doses_per_vial else vial.status
        )
        lot.vials[vial_index] = dataclasses.replace(
            vial, doses_drawn=drawn, status=status
        )
        record.doses.append(
            DoseRecord(
                vid=vid,
                product_id=lot.product_id,
                dose_number=dose_number,
                at=at,
                doctor=doctor,
            )
        )
        record.has_open_request = False
        appointment.status = AppointmentStatus.COMPLETED
        return [
            Event(
                kind="DoseAdministered",
                at=at,
                subject=bid,
                detail=f"vid={vid} vial={vial_index} dose={dose_number}",
                tx_id=tx.tx_id if tx else None,
            )
        ]

    def issue_certificate(
        self, world: WorldState, bid: str, issuer: ActorIdentity, tx: Transaction | None = None
    ) -> list[Event]:
        certificate = certs.issue_certificate(world, bid, issuer)
        world.certificates.append(certificate)
        return [
            Event(
                kind="CertificateIssued",
                at=tx.timestamp if tx else certificate.vaccination_day * SECONDS_PER_DAY,
                subject=bid,
                detail=f"kind={certificate.kind.value} dose={certificate.dose_number}",
                tx_id=tx.tx_id if tx else None,
            )
        ]

    def _require_dose(self, world: WorldState, bid: str, vid: str) -> None:
        record = world.beneficiaries.get(bid)
        if record is None or not any(dose.vid == vid for dose in record.doses):
            raise LinkageError(f"no administered dose links {bid!r} to lot {vid!r}")

    def report_side_effect(
        self,
        world: WorldState,
        bid: str,
        vid: str,
        description: str,
        at: int,
        tx: Transaction | None = None,
    ) -> list[Event]:
        if tx is not None and tx.author != bid:
            raise AuthError("side effects are self-reported")
        self._require_dose(world, bid, vid)
        world.side_effects.append(
            SideEffectReport(bid=bid, vid=vid, reported_at=at, description=description)
        )
        return [
            Event(
                kind="SideEffectReported",
                at=at,
                subject=bid,
                detail=f"vid={vid}",
                tx_id=tx.tx_id if tx else None,
            )
        ]

    def report_adverse_event(
        self,
        world: WorldState,
        bid: str,
        vid: str,
        grade: int,
        description: str,
        at: int,
        tx: Transaction | None = None,
    ) -> list[Event]:
        if tx is not None and tx.author != bid:
            raise AuthError("adverse events are self-reported")
        if not 1 <= grade <= 5:
            raise InputError(f"adverse event grade must be 1..5, got {grade}")
        self._require_dose(world, bid, vid)
        world.adverse_events.append(
            AdverseEventReport(
                bid=bid, vid=vid, reported_at=at, grade=grade, description=description
            )
        )
        events = [
            Event(
                kind="AdverseEventReported",
                at=at,
                subject=bid,
                detail=f"vid={vid} grade={grade}",
                tx_id=tx.tx_id if tx else None,
            )
        ]
        if grade >= 4:
            alert = Alert(
                at=at,
                severity=Severity.CRITICAL,
                subject=vid,
                message=f"grade {grade} adverse event reported for lot {vid}",
            )
            world.alerts.append(alert)
            events.append(
                Event(
                    kind="AlertRaised",
                    at=at,
                    subject=vid,
                    detail=alert.message,
                    reason="critical",
                    tx_id=tx.tx_id if tx else None,
                )
            )
        return events

    # -- alert mirroring ---------------------------------------------------

    def alert_transaction(self, alert: Alert) -> "Transaction":
        """Mirror a raised alert into the shared history as a signed record."""
        from .transactions import sign_transaction

        contract = self.directory.get(self.contract_actor_id)
        if contract is None:
            contract = self.directory.ensure_contract_identity()
        payload = AlertPayload(
            subject=alert.subject,
            severity=AlertSeverity(int(alert.severity)),
            message=alert.message,
            at=alert.at,
        )
        return sign_transaction(contract, TxKind.ALERT, payload, alert.at)


def replay(
    engine: ContractEngine,
    transactions: Iterable[Transaction],
    products: Iterable[VaccineProduct] = (),
) -> tuple[WorldState, list[Event]]:
    """Fold a transaction sequence into a fresh world."""
    world = new_world(products)
    events: list[Event] = []
    for tx in transactions:
        events.extend(engine.apply_transaction(world, tx))
    return world, events
