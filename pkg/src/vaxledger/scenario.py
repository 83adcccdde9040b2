"""Scenario files: parse actor-scripted events, drive the full stack, report.

A scenario is line-delimited `key=value` text, one event per line.  Every
event is signed as its actor, injected into the replicated simulation at its
tick, and the converged ledger is replayed into the final business state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from . import certificates as certs
from .coldchain import Severity, VaccineProduct, VialStatus, builtin_profiles
from .consensus import (
    NetConfig,
    Node,
    PartitionWindow,
    ScenarioTx,
    SimReport,
    ValidatorSet,
    build_cluster,
    run_simulation,
)
from .errors import ConfigError, ScenarioParseError
from .identity import ActorDirectory, ActorIdentity, Role, TxKind, load_actors_file
from .ledger import LedgerState, VerificationReport, verify_chain
from .telemetry import load_trace, make_batch
from .transactions import (
    AdministerDosePayload,
    AdverseEventPayload,
    DispatchTimePayload,
    IssueCertificatePayload,
    ProductRulesPayload,
    ReceiveLotPayload,
    RegisterBeneficiaryPayload,
    RegisterLotPayload,
    ScheduleDosesPayload,
    SideEffectPayload,
    StartTransportPayload,
    StorageEvent,
    StoreLotPayload,
    Transaction,
    sign_transaction,
)
from .world import (
    AppointmentStatus,
    ContractEngine,
    Event,
    REJECTED,
    WorldState,
    replay,
)

SECONDS_PER_DAY = 86400

# Required parameter names per action; optional ones in comments.
_ACTIONS: dict[str, tuple[str, ...]] = {
    "define-product": ("file",),
    "register-lot": ("vid", "product", "vials", "at"),
    "start-transport": ("vid", "tid", "at"),
    "receive-lot": ("vid", "tid", "center", "at"),
    "thaw": ("vid", "at"),  # optional: unit
    "puncture": ("vid", "vial", "at"),  # optional: unit
    "telemetry": ("file",),
    "register-beneficiary": ("bid", "center", "at"),  # optional: priority
    "schedule": ("center", "day", "capacity"),
    "administer": ("bid", "vid", "vial", "at"),
    "report-side-effect": ("bid", "vid", "at", "text"),
    "report-adverse-event": ("bid", "vid", "grade", "at", "text"),
    "issue-cert": ("bid", "at"),
}


@dataclass(frozen=True)
class ScenarioEvent:
    tick: int
    actor_id: str
    action: str
    params: dict[str, str]
    line: int


def parse_scenario(
    path: str | Path, known_actors: set[str] | None = None
) -> list[ScenarioEvent]:
    """Strict parse; rejects unknown actions and out-of-order ticks."""
    events: list[ScenarioEvent] = []
    previous_tick = -1
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        params: dict[str, str] = {}
        for column, token in enumerate(line.split()):
            if "=" not in token:
                raise ScenarioParseError(
                    f"column {column + 1}: token {token!r} is not key=value", lineno
                )
            key, value = token.split("=", 1)
            if key in params:
                raise ScenarioParseError(f"duplicate key {key!r}", lineno)
            params[key] = value
        for required in ("tick", "actor", "action"):
            if required not in params:
                raise ScenarioParseError(f"missing field {required!r}", lineno)
        action = params.pop("action")
        if action not in _ACTIONS:
            raise ScenarioParseError(f"unknown action {action!r}", lineno)
        try:
            tick = int(params.pop("tick"))
        except ValueError:
            raise ScenarioParseError("tick must be an integer", lineno) from None
        if tick < previous_tick:
            raise ScenarioParseError(
                f"tick {tick} is before the previous event's tick {previous_tick}", lineno
            )
        previous_tick = tick
        actor_id = params.pop("actor")
        if known_actors is not None and actor_id not in known_actors:
            raise ScenarioParseError(f"unknown actor {actor_id!r}", lineno)
        missing = [name for name in _ACTIONS[action] if name not in params]
        if missing:
            raise ScenarioParseError(
                f"action {action!r} missing field {missing[0]!r}", lineno
            )
        events.append(
            ScenarioEvent(tick=tick, actor_id=actor_id, action=action, params=params, line=lineno)
        )
    return events


def _intp(event: ScenarioEvent, key: str) -> int:
    try:
        return int(event.params[key])
    except ValueError:
        raise ScenarioParseError(
            f"field {key!r} must be an integer", event.line
        ) from None


def compile_event(
    event: ScenarioEvent,
    directory: ActorDirectory,
    scenario_dir: Path,
    default_timestamp: int,
) -> Transaction:
    """Sign one scenario event as its actor."""
    actor = directory.get(event.actor_id)
    if actor is None:
        raise ScenarioParseError(f"unknown actor {event.actor_id!r}", event.line)
    params = event.params
    at = int(params["at"]) if "at" in params else default_timestamp

    if event.action == "define-product":
        text = (scenario_dir / params["file"]).read_text(encoding="utf-8")
        return sign_transaction(
            actor, TxKind.DEFINE_PRODUCT_RULES, ProductRulesPayload(text), at
        )
    if event.action == "register-lot":
        payload = RegisterLotPayload(
            vid=params["vid"],
            product_id=params["product"],
            vial_count=_intp(event, "vials"),
            manufactured_at=at,
        )
        return sign_transaction(actor, TxKind.REGISTER_LOT, payload, at)
    if event.action == "start-transport":
        payload = StartTransportPayload(
            vid=params["vid"], tid=params["tid"], dispatched_at=at
        )
        return sign_transaction(actor, TxKind.START_TRANSPORT, payload, at)
    if event.action == "receive-lot":
        payload = ReceiveLotPayload(
            vid=params["vid"],
            tid_scanned=params["tid"],
            center_id=params["center"],
            received_at=at,
        )
        return sign_transaction(actor, TxKind.RECEIVE_LOT, payload, at)
    if event.action == "thaw":
        payload = StoreLotPayload(
            vid=params["vid"],
            storage_unit=params.get("unit"),
            at=at,
            event=StorageEvent.THAW,
        )
        return sign_transaction(actor, TxKind.STORE_LOT, payload, at)
    if event.action == "puncture":
        payload = StoreLotPayload(
            vid=params["vid"],
            storage_unit=params.get("unit"),
            at=at,
            event=StorageEvent.PUNCTURE,
            vial_index=_intp(event, "vial"),
        )
        return sign_transaction(actor, TxKind.STORE_LOT, payload, at)
    if event.action == "telemetry":
        readings, subject_class = load_trace(scenario_dir / params["file"])
        return make_batch(readings, actor, subject_class)
    if event.action == "register-beneficiary":
        payload = RegisterBeneficiaryPayload(
            bid=params["bid"],
            center_id=params["center"],
            requested_at=at,
            priority_class=int(params.get("priority", "1")),
        )
        kind = (
            TxKind.REGISTER_SELF
            if actor.role == Role.BENEFICIARY
            else TxKind.REGISTER_BENEFICIARY
        )
        return sign_transaction(actor, kind, payload, at)
    if event.action == "schedule":
        day = _intp(event, "day")
        payload = ScheduleDosesPayload(
            center_id=params["center"],
            as_of_day=day,
            daily_capacity=_intp(event, "capacity"),
        )
        return sign_transaction(actor, TxKind.SCHEDULE_DOSES, payload, day * SECONDS_PER_DAY)
    if event.action == "administer":
        payload = AdministerDosePayload(
            bid=params["bid"], vid=params["vid"], vial_index=_intp(event, "vial"), at=at
        )
        return sign_transaction(actor, TxKind.ADMINISTER_DOSE, payload, at)
    if event.action == "report-side-effect":
        payload = SideEffectPayload(
            bid=params["bid"], vid=params["vid"], description=params["text"], at=at
        )
        return sign_transaction(actor, TxKind.REPORT_SIDE_EFFECT, payload, at)
    if event.action == "report-adverse-event":
        payload = AdverseEventPayload(
            bid=params["bid"],
            vid=params["vid"],
            grade=_intp(event, "grade"),
            description=params["text"],
            at=at,
        )
        return sign_transaction(actor, TxKind.REPORT_ADVERSE_EVENT, payload, at)
    if event.action == "issue-cert":
        payload = IssueCertificatePayload(bid=params["bid"], at=at)
        return sign_transaction(actor, TxKind.ISSUE_CERTIFICATE, payload, at)
    raise ScenarioParseError(f"unhandled action {event.action!r}", event.line)


def _origin_node(actor_id: str, node_count: int) -> str:
    value = int.from_bytes(hashlib.sha256(actor_id.encode("utf-8")).digest()[:4], "big")
    return f"n{value % node_count}"


def derive_validators(
    directory: ActorDirectory, count: int, seed: int
) -> ValidatorSet:
    """Use Validator actors from the directory, topping up from the seed."""
    existing = [a for a in directory.actors() if a.role == Role.VALIDATOR and a.actor_id != "CONTRACT"]
    validators = list(existing[:count])
    index = 0
    while len(validators) < count:
        actor_id = f"VAL-{index}"
        if actor_id not in directory:
            material = f"vaxledger-validator:{seed}:{index}".encode("utf-8")
            validators.append(
                directory.create_actor(
                    Role.VALIDATOR, actor_id, hashlib.sha256(material).digest()
                )
            )
        index += 1
    return ValidatorSet(validators=tuple(validators))


@dataclass(frozen=True)
class RunReport:
    seed: int
    node_count: int
    converged: bool
    chain_valid: bool
    chain_height: int
    head_hashes: tuple[tuple[str, str], ...]
    lots: int
    vials_by_status: dict[str, int]
    doses_administered: int
    beneficiaries: int
    appointments_by_status: dict[str, int]
    alerts_by_severity: dict[str, int]
    certificates_by_kind: dict[str, int]
    rejections: tuple[tuple[str, str, str], ...]  # (kind, reason, detail)

    @property
    def exit_code(self) -> int:
        return 0 if self.converged and self.chain_valid else 1

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "node_count": self.node_count,
            "converged": self.converged,
            "chain_valid": self.chain_valid,
            "chain_height": self.chain_height,
            "head_hashes": {node: digest for node, digest in self.head_hashes},
            "lots": self.lots,
            "vials_by_status": dict(sorted(self.vials_by_status.items())),
            "doses_administered": self.doses_administered,
            "beneficiaries": self.beneficiaries,
            "appointments_by_status": dict(sorted(self.appointments_by_status.items())),
            "alerts_by_severity": dict(sorted(self.alerts_by_severity.items())),
            "certificates_by_kind": dict(sorted(self.certificates_by_kind.items())),
            "rejections": [
                {"kind": kind, "reason": reason, "detail": detail}
                for kind, reason, detail in self.rejections
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    def to_text(self) -> str:
        lines = [
            f"run: seed={self.seed} nodes={self.node_count} "
            f"converged={'yes' if self.converged else 'no'} "
            f"chain={'valid' if self.chain_valid else 'INVALID'} height={self.chain_height}",
            f"lots={self.lots} beneficiaries={self.beneficiaries} "
            f"doses_administered={self.doses_administered}",
            "vials: "
            + " ".join(f"{k}={v}" for k, v in sorted(self.vials_by_status.items())),
            "appointments: "
            + " ".join(f"{k}={v}" for k, v in sorted(self.appointments_by_status.items())),
            "alerts: "
            + " ".join(f"{k}={v}" for k, v in sorted(self.alerts_by_severity.items())),
            "certificates: "
            + " ".join(f"{k}={v}" for k, v in sorted(self.certificates_by_kind.items())),
        ]
        for node_id, digest in self.head_hashes:
            lines.append(f"head {node_id}: {digest}")
        if self.rejections:
            lines.append(f"rejections ({len(self.rejections)}):")
            for kind, reason, detail in self.rejections:
                lines.append(f"  {kind}: reason={reason} {detail}")
        else:
            lines.append("rejections (0):")
        return "\n".join(lines) + "\n"


def business_report(
    world: WorldState,
    events: list[Event],
    sim: SimReport,
    chain: VerificationReport,
    node_count: int,
) -> RunReport:
    """Aggregate a replayed world plus simulation outcome into a RunReport."""
    vials_by_status = {status.name.lower(): 0 for status in VialStatus}
    for lot in world.lots.values():
        for vial in lot.vials:
            vials_by_status[vial.status.name.lower()] += 1
    appointments = {status.name.lower(): 0 for status in AppointmentStatus}
    for appointment in world.appointments:
        appointments[appointment.status.name.lower()] += 1
    alerts = {severity.name.lower(): 0 for severity in Severity}
    for alert in world.alerts:
        alerts[alert.severity.name.lower()] += 1
    certificates = {kind.value.lower(): 0 for kind in certs.CertKind}
    for certificate in world.certificates:
        certificates[certificate.kind.value.lower()] += 1
    rejections = tuple(
        (event.subject, event.reason or "error", event.detail)
        for event in events
        if event.kind == REJECTED
    )
    return RunReport(
        seed=sim.seed,
        node_count=node_count,
        converged=sim.converged,
        chain_valid=chain.valid,
        chain_height=max(node.height for node in sim.nodes),
        head_hashes=tuple((node.node_id, node.head_hash) for node in sim.nodes),
        lots=len(world.lots),
        vials_by_status=vials_by_status,
        doses_administered=sum(
            len(record.doses) for record in world.beneficiaries.values()
        ),
        beneficiaries=len(world.beneficiaries),
        appointments_by_status=appointments,
        alerts_by_severity=alerts,
        certificates_by_kind=certificates,
        rejections=rejections,
    )


@dataclass
class ScenarioResult:
    report: RunReport
    sim: SimReport
    ledger: LedgerState
    world: WorldState
    events: list[Event]
    directory: ActorDirectory
    products: list[VaccineProduct]


def run_scenario(
    scenario_path: str | Path,
    actors_path: str | Path,
    profiles: list[VaccineProduct] | None = None,
    net: NetConfig | None = None,
    node_count: int = 1,
    max_ticks: int = 2000,
) -> ScenarioResult:
    """Parse, sign, replicate, replay, report."""
    scenario_path = Path(scenario_path)
    directory = load_actors_file(actors_path)
    directory.ensure_contract_identity()
    products = list(profiles) if profiles is not None else builtin_profiles()
    net = net or NetConfig()

    events = parse_scenario(
        scenario_path, known_actors={a.actor_id for a in directory.actors()}
    )
    validators = derive_validators(directory, node_count, net.seed)

    scenario_txs = []
    for event in events:
        default_ts = net.base_epoch + event.tick * net.tick_seconds
        tx = compile_event(event, directory, scenario_path.parent, default_ts)
        scenario_txs.append(
            ScenarioTx(tick=event.tick, origin=_origin_node(event.actor_id, node_count), tx=tx)
        )

    nodes = build_cluster(
        node_count=node_count,
        validators=validators,
        engine_factory=lambda: ContractEngine(directory),
        net=net,
        products=products,
    )
    sim = run_simulation(nodes, net, scenario_txs, max_ticks)

    reference: Node = nodes[0]
    chain_report = verify_chain(reference.ledger, directory)
    engine = ContractEngine(directory)
    world, replay_events = replay(engine, reference.ledger.transactions(), products)
    report = business_report(world, replay_events, sim, chain_report, node_count)
    return ScenarioResult(
        report=report,
        sim=sim,
        ledger=reference.ledger,
        world=world,
        events=replay_events,
        directory=directory,
        products=products,
    )


def load_net_config(path: str | Path) -> NetConfig:
    """Net config file: key=value lines plus optional partition lines.

    partition lines: `partition <start_tick> <end_tick> n0,n1|n2,n3`
    """
    values: dict[str, str] = {}
    partitions: list[PartitionWindow] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("partition "):
            parts = line.split()
            if len(parts) != 4:
                raise ConfigError(
                    f"{path}:{lineno}: partition needs 'start end groupA|groupB'"
                )
            groups = tuple(
                frozenset(group.split(",")) for group in parts[3].split("|")
            )
            partitions.append(
                PartitionWindow(
                    start_tick=int(parts[1]), end_tick=int(parts[2]), groups=groups
                )
            )
        elif "=" in line:
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        else:
            raise ConfigError(f"{path}:{lineno}: unrecognized net config line")

    def intval(key: str, default: int) -> int:
        return int(values[key]) if key in values else default

    return NetConfig(
        delay_min_ticks=intval("delay_min", 1),
        delay_max_ticks=intval("delay_max", 1),
        drop_probability=float(values.get("drop_probability", "0")),
        seed=intval("seed", 0),
        partitions=tuple(partitions),
        base_epoch=intval("base_epoch", 1_600_000_000),
        tick_seconds=intval("tick_seconds", 60),
    )
