"""Actor identities, Ed25519 signatures, and the role permission matrix."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import ConfigError, DuplicateActorError, KeyFormatError

SEED_SIZE = 32
PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64

# Well-known identity used to author contract-emitted Alert transactions.
# Every replica derives the same keypair; this is simulation plumbing, not a
# trust boundary.
CONTRACT_ACTOR_ID = "CONTRACT"
CONTRACT_SEED = b"vaxledger/contract-authority/v1\x00"


class Role(enum.Enum):
    MANUFACTURER = "Manufacturer"
    DISTRIBUTOR = "Distributor"
    MEDICAL_CENTER = "MedicalCenter"
    DOCTOR = "Doctor"
    BENEFICIARY = "Beneficiary"
    VALIDATOR = "Validator"


class TxKind(enum.IntEnum):
    """Wire tags for every transaction kind the contract engine accepts."""

    DEFINE_PRODUCT_RULES = 1
    REGISTER_LOT = 2
    RECORD_DISPATCH_TIME = 3
    START_TRANSPORT = 4
    RECEIVE_LOT = 5
    STORE_LOT = 6
    TELEMETRY_BATCH = 7
    REGISTER_BENEFICIARY = 8
    REGISTER_SELF = 9
    SCHEDULE_DOSES = 10
    ADMINISTER_DOSE = 11
    ISSUE_CERTIFICATE = 12
    REPORT_SIDE_EFFECT = 13
    REPORT_ADVERSE_EVENT = 14
    ALERT = 15


_KIND_LABELS = {
    TxKind.DEFINE_PRODUCT_RULES: "DefineProductRules",
    TxKind.REGISTER_LOT: "RegisterLot",
    TxKind.RECORD_DISPATCH_TIME: "RecordDispatchTime",
    TxKind.START_TRANSPORT: "StartTransport",
    TxKind.RECEIVE_LOT: "ReceiveLot",
    TxKind.STORE_LOT: "StoreLot",
    TxKind.TELEMETRY_BATCH: "TelemetryBatch",
    TxKind.REGISTER_BENEFICIARY: "RegisterBeneficiary",
    TxKind.REGISTER_SELF: "RegisterSelf",
    TxKind.SCHEDULE_DOSES: "ScheduleDoses",
    TxKind.ADMINISTER_DOSE: "AdministerDose",
    TxKind.ISSUE_CERTIFICATE: "IssueCertificateRequest",
    TxKind.REPORT_SIDE_EFFECT: "ReportSideEffect",
    TxKind.REPORT_ADVERSE_EVENT: "ReportAdverseEvent",
    TxKind.ALERT: "Alert",
}
_LABEL_KINDS = {label: kind for kind, label in _KIND_LABELS.items()}


def kind_label(kind: TxKind) -> str:
    return _KIND_LABELS[kind]


def kind_from_label(label: str) -> TxKind:
    try:
        return _LABEL_KINDS[label]
    except KeyError:
        raise ConfigError(f"unknown transaction kind {label!r}") from None


@dataclass(frozen=True)
class ActorIdentity:
    """A role-bearing signer.  The seed stays with the actor's process."""

    actor_id: str
    role: Role
    public_key: bytes
    seed: bytes

    def sign(self, message: bytes) -> bytes:
        return sign(self.seed, message)


def _keypair_from_seed(seed: bytes) -> tuple[Ed25519PrivateKey, bytes]:
    if len(seed) != SEED_SIZE:
        raise KeyFormatError(f"seed must be {SEED_SIZE} bytes, got {len(seed)}")
    private = Ed25519PrivateKey.from_private_bytes(seed)
    public = private.public_key().public_bytes_raw()
    return private, public


def sign(seed: bytes, message: bytes) -> bytes:
    """Deterministic Ed25519 signature over `message`."""
    private, _ = _keypair_from_seed(seed)
    return private.sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff `signature` is a valid signature of `message` under the key."""
    if len(public_key) != PUBLIC_KEY_SIZE:
        raise KeyFormatError(
            f"public key must be {PUBLIC_KEY_SIZE} bytes, got {len(public_key)}"
        )
    if len(signature) != SIGNATURE_SIZE:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except InvalidSignature:
        return False
    return True


class ActorDirectory:
    """Registry of identities; actor ids are unique ledger-wide.

    The directory is read-mostly: registration happens up front from the
    actors config, lookups happen on every signature check.
    """

    def __init__(self) -> None:
        self._actors: dict[str, ActorIdentity] = {}

    def create_actor(self, role: Role, actor_id: str, seed: bytes) -> ActorIdentity:
        if not actor_id:
            raise ConfigError("actor_id must be nonempty")
        if actor_id in self._actors:
            raise DuplicateActorError(f"actor {actor_id!r} already registered")
        _, public = _keypair_from_seed(seed)
        identity = ActorIdentity(actor_id=actor_id, role=role, public_key=public, seed=seed)
        self._actors[actor_id] = identity
        return identity

    def get(self, actor_id: str) -> ActorIdentity | None:
        return self._actors.get(actor_id)

    def public_key(self, actor_id: str) -> bytes | None:
        identity = self._actors.get(actor_id)
        return identity.public_key if identity else None

    def actors(self) -> list[ActorIdentity]:
        return list(self._actors.values())

    def __contains__(self, actor_id: str) -> bool:
        return actor_id in self._actors

    def ensure_contract_identity(self) -> ActorIdentity:
        """Register the shared contract signer if not already present."""
        existing = self.get(CONTRACT_ACTOR_ID)
        if existing is not None:
            return existing
        return self.create_actor(Role.VALIDATOR, CONTRACT_ACTOR_ID, CONTRACT_SEED)


def load_actors_file(path: str | Path, directory: ActorDirectory | None = None) -> ActorDirectory:
    """Parse an actors config: one `actor_id role hexseed` record per line."""
    directory = directory or ActorDirectory()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigError(f"{path}:{lineno}: expected 'actor_id role hexseed'")
        actor_id, role_name, hexseed = parts
        try:
            role = Role(role_name)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: unknown role {role_name!r}") from None
        try:
            seed = bytes.fromhex(hexseed)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: seed is not valid hex") from None
        directory.create_actor(role, actor_id, seed)
    return directory


def dump_actors_file(directory: ActorDirectory) -> str:
    lines = [
        f"{identity.actor_id} {identity.role.value} {identity.seed.hex()}"
        for identity in directory.actors()
    ]
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass(frozen=True)
class PermissionMatrix:
    """Total map from (role, kind) to allowed; everything not granted is denied."""

    granted: frozenset[tuple[Role, TxKind]]

    def allows(self, role: Role, kind: TxKind) -> bool:
        return (role, kind) in self.granted

    def rows(self) -> list[tuple[Role, TxKind, bool]]:
        out = []
        for role in Role:
            for kind in TxKind:
                out.append((role, kind, self.allows(role, kind)))
        return out


# Transcribed actor capabilities.  Telemetry is a single wire kind; the
# distributor may only submit it for transport subjects and the medical
# center only for storage units (enforced where the batch is built and
# again when it is applied).  ScheduleDoses is the ledger-driven trigger
# for the appointment planner.  Alert is authored only by the contract
# identity and is deliberately absent from every role row.
_GRANTS: dict[Role, tuple[TxKind, ...]] = {
    Role.MANUFACTURER: (
        TxKind.DEFINE_PRODUCT_RULES,
        TxKind.REGISTER_LOT,
        TxKind.RECORD_DISPATCH_TIME,
    ),
    Role.DISTRIBUTOR: (
        TxKind.START_TRANSPORT,
        TxKind.TELEMETRY_BATCH,
    ),
    Role.MEDICAL_CENTER: (
        TxKind.RECEIVE_LOT,
        TxKind.STORE_LOT,
        TxKind.TELEMETRY_BATCH,
        TxKind.SCHEDULE_DOSES,
    ),
    Role.DOCTOR: (
        TxKind.REGISTER_BENEFICIARY,
        TxKind.ADMINISTER_DOSE,
        TxKind.ISSUE_CERTIFICATE,
    ),
    Role.BENEFICIARY: (
        TxKind.REGISTER_SELF,
        TxKind.REPORT_SIDE_EFFECT,
        TxKind.REPORT_ADVERSE_EVENT,
    ),
    Role.VALIDATOR: (),
}

DEFAULT_MATRIX = PermissionMatrix(
    granted=frozenset(
        (role, kind) for role, kinds in _GRANTS.items() for kind in kinds
    )
)


def authorize(matrix: PermissionMatrix, author: ActorIdentity, kind: TxKind) -> bool:
    """Pure lookup: true iff the author's role row permits the kind."""
    return matrix.allows(author.role, kind)


def matrix_table(matrix: PermissionMatrix = DEFAULT_MATRIX) -> str:
    """Human-readable audit dump of the compiled permission matrix."""
    labels = [kind_label(kind) for kind in TxKind]
    width = max(len(label) for label in labels)
    lines = ["permission matrix (x = allowed)"]
    header = " " * (width + 2) + " ".join(f"{role.value[:4]:>4}" for role in Role)
    lines.append(header)
    for kind in TxKind:
        cells = " ".join(
            f"{'x' if matrix.allows(role, kind) else '.':>4}" for role in Role
        )
        lines.append(f"{kind_label(kind):<{width}}  {cells}")
    return "\n".join(lines) + "\n"
