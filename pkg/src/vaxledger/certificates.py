"""Signed vaccination certificates with a QR-ready text payload.

The payload deliberately carries only beneficiary id, product id, dose number
and vaccination date plus the issuer id and signature; verification is fully
offline given a trust map of issuer public keys.

Text form: the fixed prefix "VXC1:" followed by URL-safe base64 of the
canonical binary payload.  Byte layout (all integers big-endian):

    u8   schema version (0x01)
    str  beneficiary id       (u32 length + UTF-8)
    str  product id
    u8   dose number (1 or 2)
    u32  vaccination date, days since epoch
    str  issuer actor id
    bytes issuer signature    (u32 length + raw; covers everything above)
"""

from __future__ import annotations

import base64
import binascii
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from . import encoding
from .encoding import Reader, Writer
from .errors import AuthError, ConfigError, ConflictError, EligibilityError, EncodingError
from .identity import ActorIdentity, Role, verify

PAYLOAD_PREFIX = "VXC1:"


class CertKind(enum.Enum):
    PARTIAL = "Partial"
    FINAL = "Final"


class VerificationResult(enum.Enum):
    VALID_PARTIAL = "ValidPartial"
    VALID_FINAL = "ValidFinal"
    BAD_FORMAT = "BadFormat"
    UNKNOWN_ISSUER = "UnknownIssuer"
    BAD_SIGNATURE = "BadSignature"


@dataclass(frozen=True)
class Certificate:
    bid: str
    product_id: str
    dose_number: int
    vaccination_day: int
    issuer: str
    signature: bytes

    @property
    def kind(self) -> CertKind:
        return CertKind.FINAL if self.dose_number == 2 else CertKind.PARTIAL


def certificate_signing_bytes(
    bid: str, product_id: str, dose_number: int, vaccination_day: int, issuer: str
) -> bytes:
    w = Writer()
    w.u8(encoding.SCHEMA_VERSION)
    w.string(bid)
    w.string(product_id)
    w.u8(dose_number)
    w.u32(vaccination_day)
    w.string(issuer)
    return w.getvalue()


def certificate_bytes(cert: Certificate) -> bytes:
    w = Writer()
    w.raw(
        certificate_signing_bytes(
            cert.bid, cert.product_id, cert.dose_number, cert.vaccination_day, cert.issuer
        )
    )
    w.bytes_(cert.signature)
    return w.getvalue()


def certificate_from_bytes(data: bytes) -> Certificate:
    r = Reader(data)
    version = r.u8()
    if version != encoding.SCHEMA_VERSION:
        raise EncodingError(f"unsupported certificate version {version}")
    bid = r.string()
    product_id = r.string()
    dose_number = r.u8()
    vaccination_day = r.u32()
    issuer = r.string()
    signature = r.bytes_()
    r.expect_end()
    if dose_number not in (1, 2):
        raise EncodingError(f"dose number must be 1 or 2, got {dose_number}")
    return Certificate(
        bid=bid,
        product_id=product_id,
        dose_number=dose_number,
        vaccination_day=vaccination_day,
        issuer=issuer,
        signature=signature,
    )


def issue_certificate(world, bid: str, issuer: ActorIdentity) -> Certificate:
    """Issue for the highest completed dose; the caller records the result.

    `world` only needs `beneficiaries` (bid -> record with a `doses` list of
    records carrying product_id and at) and a `certificates` list.
    """
    if issuer.role not in (Role.DOCTOR, Role.MEDICAL_CENTER):
        raise AuthError(f"role {issuer.role.value} cannot issue certificates")
    record = world.beneficiaries.get(bid)
    if record is None or not record.doses:
        raise EligibilityError(f"beneficiary {bid!r} has no completed dose")
    dose = record.doses[-1]
    dose_number = len(record.doses)
    if dose_number > 2:
        dose_number = 2
    for existing in world.certificates:
        if existing.bid == bid and existing.dose_number == dose_number:
            raise ConflictError(
                f"certificate for ({bid}, dose {dose_number}) already issued"
            )
    day = dose.at // 86400
    message = certificate_signing_bytes(bid, dose.product_id, dose_number, day, issuer.actor_id)
    return Certificate(
        bid=bid,
        product_id=dose.product_id,
        dose_number=dose_number,
        vaccination_day=day,
        issuer=issuer.actor_id,
        signature=issuer.sign(message),
    )


def encode_payload(cert: Certificate) -> str:
    raw = certificate_bytes(cert)
    return PAYLOAD_PREFIX + base64.urlsafe_b64encode(raw).decode("ascii")


def decode_payload(text: str) -> Certificate:
    if not text.startswith(PAYLOAD_PREFIX):
        raise EncodingError("missing certificate prefix")
    body = text[len(PAYLOAD_PREFIX):]
    try:
        raw = base64.urlsafe_b64decode(body.encode("ascii"))
    except (ValueError, binascii.Error, UnicodeEncodeError) as exc:
        raise EncodingError("payload is not valid base64") from exc
    # Reject non-canonical encodings: base64 aliases must not verify.
    if base64.urlsafe_b64encode(raw).decode("ascii") != body:
        raise EncodingError("payload base64 is not canonical")
    return certificate_from_bytes(raw)


def verify_certificate(
    text: str, trusted_issuers: Mapping[str, bytes]
) -> VerificationResult:
    """Offline verification against a trust map of issuer public keys."""
    try:
        cert = decode_payload(text)
    except EncodingError:
        return VerificationResult.BAD_FORMAT
    key = trusted_issuers.get(cert.issuer)
    if key is None:
        return VerificationResult.UNKNOWN_ISSUER
    message = certificate_signing_bytes(
        cert.bid, cert.product_id, cert.dose_number, cert.vaccination_day, cert.issuer
    )
    try:
        ok = verify(key, message, cert.signature)
    except Exception:
        return VerificationResult.BAD_SIGNATURE
    if not ok:
        return VerificationResult.BAD_SIGNATURE
    return (
        VerificationResult.VALID_FINAL
        if cert.dose_number == 2
        else VerificationResult.VALID_PARTIAL
    )


def load_trust_map(path: str | Path) -> dict[str, bytes]:
    """Trust map file: one `actor_id hex_public_key` per line."""
    trusted: dict[str, bytes] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"{path}:{lineno}: expected 'actor_id hexkey'")
        try:
            trusted[parts[0]] = bytes.fromhex(parts[1])
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: key is not valid hex") from None
    return trusted


def dump_trust_map(trusted: Mapping[str, bytes]) -> str:
    lines = [f"{actor_id} {key.hex()}" for actor_id, key in sorted(trusted.items())]
    return "\n".join(lines) + ("\n" if lines else "")
