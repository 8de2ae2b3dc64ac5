"""Domain types shared by every synchronizer: validators, rounds, blocks.

Blocks are immutable values. A block references earlier blocks by digest
only; structural validation therefore distinguishes checks that are pure
functions of the block itself from checks that need a digest resolver.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

# Round value meaning "no block seen / not reachable" in watermark and
# ancestors arrays. Genesis arithmetic needs no special cases this way.
NO_ROUND = -1

ValidatorId = int
Round = int
BlockDigest = bytes

DIGEST_SIZE = 32


class ValidationCode(str, Enum):
    WRONG_PARENT_COUNT = "WrongParentCount"
    WRONG_PARENT_ROUND = "WrongParentRound"
    MISSING_SELF_PARENT = "MissingSelfParent"
    OVERLAPPING_LINKS = "OverlappingLinks"
    BAD_ANCESTORS_ARRAY = "BadAncestorsArray"
    BAD_SIGNATURE = "BadSignature"


@dataclass(frozen=True)
class ValidationError:
    code: ValidationCode
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code.value}: {self.detail}" if self.detail else self.code.value


@dataclass(frozen=True)
class ProtocolConfig:
    """Static protocol parameters, equal stake per validator."""

    n: int
    f: int
    r_l: int = 10_000                      # reputation penalty per blame
    bulk_retry_timeout_us: int = 200_000   # bulk pull retry period
    live_recheck_us: int = 200_000         # live pull re-issue period
    leader_timeout_us: int = 1_000_000
    rand_pull_fanout: int = 2              # uncertified baseline target-set size
    watermark_exact_lag: bool = False      # require == r-1 instead of >= r-1

    def __post_init__(self) -> None:
        if self.n < 3 * self.f + 1:
            raise ValueError(f"n={self.n} must be >= 3f+1 with f={self.f}")
        if self.f < 0:
            raise ValueError("f must be non-negative")
        for name in ("r_l", "bulk_retry_timeout_us", "live_recheck_us", "leader_timeout_us"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    @property
    def weak_quorum(self) -> int:
        return self.f + 1


@dataclass(frozen=True)
class Block:
    """A DAG vertex.

    ``parents`` are the strong links (the quorum references of the previous
    round); ``weaklinks`` reference older accepted blocks not chosen as
    parents. ``watermark[k]`` is the highest round the creator had received
    from validator k at creation time, ``ancestors[k]`` the highest round of
    validator k reachable from this block through strong links.
    """

    round: Round
    author: ValidatorId
    parents: tuple[BlockDigest, ...]
    weaklinks: tuple[BlockDigest, ...]
    watermark: tuple[Round, ...]
    ancestors: tuple[Round, ...]
    payload: bytes = b""
    signature: int = NO_ROUND  # simulated authenticator: must equal author
    digest: BlockDigest = field(init=False, compare=False, repr=False, default=b"")

    def __post_init__(self) -> None:
        object.__setattr__(self, "digest", hashlib.sha256(encode_block(self)).digest())

    def __hash__(self) -> int:
        return hash(self.digest)

    @property
    def references(self) -> tuple[BlockDigest, ...]:
        return self.parents + self.weaklinks


def encode_block(b: Block) -> bytes:
    """Canonical byte encoding used for digesting.

    Length-prefixed fields in declaration order, little-endian integers.
    The signature tag is excluded so the digest commits to content only.
    """
    out = bytearray()
    out += struct.pack("<Q", b.round)
    out += struct.pack("<I", b.author)
    for links in (b.parents, b.weaklinks):
        out += struct.pack("<I", len(links))
        for d in links:
            out += d
    for arr in (b.watermark, b.ancestors):
        out += struct.pack("<I", len(arr))
        for v in arr:
            out += struct.pack("<q", v)
    out += struct.pack("<I", len(b.payload))
    out += b.payload
    return bytes(out)


def digest(b: Block) -> BlockDigest:
    """Content digest of a block; equal blocks map to equal digests."""
    return b.digest


def make_block(
    round: Round,
    author: ValidatorId,
    parents: tuple[BlockDigest, ...] = (),
    weaklinks: tuple[BlockDigest, ...] = (),
    watermark: tuple[Round, ...] = (),
    ancestors: tuple[Round, ...] = (),
    n: Optional[int] = None,
    payload: bytes = b"",
) -> Block:
    """Convenience constructor that signs the block and fills sentinel arrays."""
    if n is not None and not watermark:
        watermark = (NO_ROUND,) * n
    if n is not None and not ancestors:
        ancestors = (NO_ROUND,) * n
    return Block(
        round=round,
        author=author,
        parents=tuple(parents),
        weaklinks=tuple(weaklinks),
        watermark=tuple(watermark),
        ancestors=tuple(ancestors),
        payload=payload,
        signature=author,
    )


def validate_block(
    b: Block,
    cfg: ProtocolConfig,
    lookup: Optional[Callable[[BlockDigest], Optional[Block]]] = None,
) -> Optional[ValidationError]:
    """Check block well-formedness. Returns None when the block is valid.

    Pure function of its inputs. Checks that need referenced blocks run only
    when ``lookup`` resolves them; a receiver that does not yet hold a parent
    cannot (and need not) verify that parent's round here.
    """
    err = _validate_structure(b, cfg)
    if err is not None or lookup is None:
        return err
    return _validate_against_parents(b, lookup)


def _validate_structure(b: Block, cfg: ProtocolConfig) -> Optional[ValidationError]:
    if b.signature != b.author:
        return ValidationError(ValidationCode.BAD_SIGNATURE, "authenticator tag mismatch")
    if not (0 <= b.author < cfg.n):
        return ValidationError(ValidationCode.BAD_SIGNATURE, "author out of range")
    if len(b.watermark) != cfg.n or len(b.ancestors) != cfg.n:
        return ValidationError(
            ValidationCode.BAD_ANCESTORS_ARRAY, "watermark/ancestors must have n entries"
        )
    if any(v < NO_ROUND for v in b.watermark) or any(v < NO_ROUND for v in b.ancestors):
        return ValidationError(ValidationCode.BAD_ANCESTORS_ARRAY, "round below sentinel")
    if len(set(b.parents)) != len(b.parents):
        return ValidationError(ValidationCode.WRONG_PARENT_COUNT, "duplicate parents")
    if set(b.parents) & set(b.weaklinks):
        return ValidationError(ValidationCode.OVERLAPPING_LINKS, "parents and weaklinks overlap")

    if b.round == 0:
        if b.parents:
            return ValidationError(ValidationCode.WRONG_PARENT_COUNT, "genesis has no parents")
        if b.weaklinks:
            return ValidationError(ValidationCode.OVERLAPPING_LINKS, "genesis has no weaklinks")
        if any(v != NO_ROUND for v in b.ancestors):
            return ValidationError(ValidationCode.BAD_ANCESTORS_ARRAY, "genesis ancestors not sentinel")
        return None

    if len(b.parents) < cfg.quorum:
        return ValidationError(
            ValidationCode.WRONG_PARENT_COUNT,
            f"{len(b.parents)} parents < quorum {cfg.quorum}",
        )
    if b.ancestors[b.author] != b.round - 1:
        return ValidationError(
            ValidationCode.BAD_ANCESTORS_ARRAY,
            "own ancestors slot must equal round-1 (self-chain)",
        )
    if any(v > b.round - 1 for v in b.ancestors):
        return ValidationError(ValidationCode.BAD_ANCESTORS_ARRAY, "ancestors beyond round-1")
    return None


def _validate_against_parents(
    b: Block, lookup: Callable[[BlockDigest], Optional[Block]]
) -> Optional[ValidationError]:
    if b.round == 0:
        return None
    resolved = {d: lookup(d) for d in b.parents}
    saw_self = False
    all_resolved = all(p is not None for p in resolved.values())
    for d, p in resolved.items():
        if p is None:
            continue
        if p.round != b.round - 1:
            return ValidationError(
                ValidationCode.WRONG_PARENT_ROUND,
                f"parent of round {p.round}, expected {b.round - 1}",
            )
        if p.author == b.author:
            saw_self = True
        for k in range(len(b.ancestors)):
            lower = p.round if p.author == k else NO_ROUND
            if b.ancestors[k] < max(lower, p.ancestors[k]):
                return ValidationError(
                    ValidationCode.BAD_ANCESTORS_ARRAY,
                    f"ancestors[{k}] below parent contribution",
                )
    if all_resolved and not saw_self:
        return ValidationError(ValidationCode.MISSING_SELF_PARENT, "no own round-1 parent")
    for d in b.weaklinks:
        w = lookup(d)
        if w is not None and w.round > b.round - 1:
            return ValidationError(
                ValidationCode.WRONG_PARENT_ROUND,
                f"weaklink of round {w.round} not below {b.round}",
            )
    return None
