"""Per-validator local DAG state.

Tracks received and accepted blocks, the live/bulk pending sets, reverse
references for implicit proof-of-availability, and the per-author
last-accepted watermark used to identify missing ancestors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .core import NO_ROUND, Block, BlockDigest, ProtocolConfig, Round, ValidatorId


class Scope(Enum):
    LIVE = "live"
    BULK = "bulk"


class EventKind(str, Enum):
    BLOCK_ACCEPT = "block_accept"
    BLOCK_STORE = "block_store"


@dataclass(frozen=True)
class AcceptEvent:
    kind: EventKind
    digest: BlockDigest
    author: ValidatorId
    round: Round


class NotReceived(Exception):
    pass


class NotAcceptable(Exception):
    pass


@dataclass
class DagState:
    cfg: ProtocolConfig
    received: dict[BlockDigest, Block] = field(default_factory=dict)
    accepted: set[BlockDigest] = field(default_factory=set)
    # rounds with at least one accepted block, per author (may have holes)
    accepted_rounds: dict[ValidatorId, set[Round]] = field(default_factory=dict)
    # first-accepted block per (author, round); later equivocating twins are
    # recorded but not served
    accepted_slot: dict[tuple[ValidatorId, Round], BlockDigest] = field(default_factory=dict)
    last_accepted: list[Round] = field(default_factory=list)
    live: set[BlockDigest] = field(default_factory=set)
    bulk: set[BlockDigest] = field(default_factory=set)
    reverse_refs: dict[BlockDigest, set[BlockDigest]] = field(default_factory=dict)
    # round inferred for digests we do not hold, from strong links of holders
    round_hint: dict[BlockDigest, Round] = field(default_factory=dict)
    # first received block per (author, round) and the rounds seen per author
    received_slot: dict[tuple[ValidatorId, Round], BlockDigest] = field(default_factory=dict)
    received_rounds: dict[ValidatorId, set[Round]] = field(default_factory=dict)
    # highest round of a valid block received per author
    max_received_round: list[Round] = field(default_factory=list)
    equivocations: list[tuple[ValidatorId, Round, BlockDigest]] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = self.cfg.n
        if not self.last_accepted:
            self.last_accepted = [NO_ROUND] * n
        if not self.max_received_round:
            self.max_received_round = [NO_ROUND] * n
        for k in range(n):
            self.accepted_rounds.setdefault(k, set())
            self.received_rounds.setdefault(k, set())

    # -- queries -----------------------------------------------------------

    def holds(self, d: BlockDigest) -> bool:
        return d in self.received

    def block(self, d: BlockDigest) -> Block:
        return self.received[d]

    def round_of(self, d: BlockDigest) -> Optional[Round]:
        if d in self.received:
            return self.received[d].round
        return self.round_hint.get(d)

    def accepted_block_at(self, author: ValidatorId, round: Round) -> Optional[Block]:
        d = self.accepted_slot.get((author, round))
        return self.received[d] if d is not None else None

    def latest_received_upto(self, author: ValidatorId, max_round: Round) -> Optional[Block]:
        """Highest-round received block of author with round <= max_round.

        Prefers the accepted block over an equivocating twin at the same round.
        """
        rounds = [r for r in self.received_rounds[author] if r <= max_round]
        if not rounds:
            return None
        top = max(rounds)
        d = self.accepted_slot.get((author, top), self.received_slot[(author, top)])
        return self.received[d]

    def pending(self) -> set[BlockDigest]:
        return {d for d in self.live | self.bulk if d not in self.accepted}


def insert_received(state: DagState, b: Block) -> bool:
    """Index a validated block; returns False when it was already present."""
    d = b.digest
    if d in state.received:
        return False
    state.received[d] = b
    for p in b.parents:
        state.reverse_refs.setdefault(p, set()).add(d)
        if b.round >= 1:
            state.round_hint.setdefault(p, b.round - 1)
    for w in b.weaklinks:
        state.reverse_refs.setdefault(w, set()).add(d)
    slot = (b.author, b.round)
    if slot in state.received_slot:
        state.equivocations.append((b.author, b.round, d))
    else:
        state.received_slot[slot] = d
    state.received_rounds[b.author].add(b.round)
    if b.round > state.max_received_round[b.author]:
        state.max_received_round[b.author] = b.round
    return True


def implicit_poa(state: DagState, d: BlockDigest, cfg: ProtocolConfig) -> bool:
    """True when f+1 distinct authors reference d from later rounds.

    The round of an unheld digest is inferred from the strong links that
    name it; with no inference the (backward-pointing) reference counts.
    """
    refs = state.reverse_refs.get(d)
    if not refs:
        return False
    target_round = state.round_of(d)
    authors: set[ValidatorId] = set()
    for rd in refs:
        rb = state.received.get(rd)
        if rb is None:
            continue
        if target_round is not None and rb.round <= target_round:
            continue
        authors.add(rb.author)
    return len(authors) >= cfg.weak_quorum


def is_acceptable(state: DagState, b: Block, cfg: ProtocolConfig) -> bool:
    """Every strong parent is accepted or implicitly proven available."""
    return all(p in state.accepted or implicit_poa(state, p, cfg) for p in b.parents)


def accept(state: DagState, b: Block) -> list[AcceptEvent]:
    """Accept b, then cascade over pending blocks that became acceptable.

    Emits block_accept then block_store per newly accepted block; cascade
    order is (round, author) so event traces replay deterministically.
    """
    if b.digest not in state.received:
        raise NotReceived(f"block {b.digest.hex()[:16]} not received")
    if b.digest in state.accepted:
        return []
    if not is_acceptable(state, b, state.cfg):
        raise NotAcceptable(f"block {b.digest.hex()[:16]} has unavailable parents")
    events = _mark_accepted(state, b)
    events.extend(_cascade(state))
    _refresh_pending_sets(state)
    return events


def _mark_accepted(state: DagState, b: Block) -> list[AcceptEvent]:
    state.accepted.add(b.digest)
    state.accepted_rounds[b.author].add(b.round)
    state.accepted_slot.setdefault((b.author, b.round), b.digest)
    la = state.last_accepted
    while la[b.author] + 1 in state.accepted_rounds[b.author]:
        la[b.author] += 1
    return [
        AcceptEvent(EventKind.BLOCK_ACCEPT, b.digest, b.author, b.round),
        AcceptEvent(EventKind.BLOCK_STORE, b.digest, b.author, b.round),
    ]


def _cascade(state: DagState) -> list[AcceptEvent]:
    events: list[AcceptEvent] = []
    while True:
        ready = [
            state.received[d]
            for d in state.pending()
            if is_acceptable(state, state.received[d], state.cfg)
        ]
        if not ready:
            return events
        ready.sort(key=lambda blk: (blk.round, blk.author))
        for blk in ready:
            if blk.digest not in state.accepted:
                events.extend(_mark_accepted(state, blk))


def resolve(state: DagState) -> list[AcceptEvent]:
    """Run the acceptance cascade without a specific trigger block."""
    events = _cascade(state)
    _refresh_pending_sets(state)
    return events


def has_uncovered_ancestors(state: DagState, b: Block) -> bool:
    for k in range(state.cfg.n):
        top = b.ancestors[k]
        if top <= state.last_accepted[k]:
            continue
        for rho in range(state.last_accepted[k] + 1, top + 1):
            if rho not in state.accepted_rounds[k]:
                return True
    return False


def _refresh_pending_sets(state: DagState) -> None:
    # Accepted blocks leave the live set; they stay in bulk only while their
    # ancestor cover still has holes to backfill.
    for d in list(state.live):
        if d in state.accepted:
            state.live.discard(d)
            if has_uncovered_ancestors(state, state.received[d]):
                state.bulk.add(d)
    for d in list(state.bulk):
        if d in state.accepted and not has_uncovered_ancestors(state, state.received[d]):
            state.bulk.discard(d)


def _attributed_digests(state: DagState) -> dict[tuple[ValidatorId, Round], BlockDigest]:
    """Map (author, round) slots to unheld parent digests where unambiguous."""
    out: dict[tuple[ValidatorId, Round], BlockDigest] = {}
    for d in state.live | state.bulk:
        b = state.received.get(d)
        if b is None or b.round < 1:
            continue
        unheld = [p for p in b.parents if p not in state.received]
        if len(unheld) != 1:
            continue
        held_authors = {
            state.received[p].author
            for p in b.parents
            if p in state.received and state.received[p].round == b.round - 1
        }
        cands = [
            k
            for k in range(state.cfg.n)
            if b.ancestors[k] == b.round - 1 and k not in held_authors
        ]
        if len(cands) == 1:
            out[(cands[0], b.round - 1)] = unheld[0]
    return out


def missing_ancestors(
    state: DagState, scope: Scope, cfg: ProtocolConfig
) -> set[tuple[ValidatorId, Round]]:
    """(author, round) pairs to pull for the given synchronizer module.

    Live output drops entries already implicitly proven available (those are
    bulk work); bulk output drops everything the live module already covers.
    """
    live_entries = _scope_entries(state, state.live, cfg)
    if scope is Scope.LIVE:
        covered = {
            slot
            for slot, d in _attributed_digests(state).items()
            if implicit_poa(state, d, cfg)
        }
        return live_entries - covered
    bulk_entries = _scope_entries(state, state.bulk, cfg)
    return bulk_entries - live_entries


def _scope_entries(
    state: DagState, members: Iterable[BlockDigest], cfg: ProtocolConfig
) -> set[tuple[ValidatorId, Round]]:
    needed = [NO_ROUND] * cfg.n
    for d in members:
        b = state.received.get(d)
        if b is None:
            continue
        for k in range(cfg.n):
            if b.ancestors[k] > needed[k]:
                needed[k] = b.ancestors[k]
    out: set[tuple[ValidatorId, Round]] = set()
    for k in range(cfg.n):
        for rho in range(state.last_accepted[k] + 1, needed[k] + 1):
            if rho not in state.accepted_rounds[k]:
                out.add((k, rho))
    return out
