"""Hybrid pull: classify pending blocks into live/bulk, identify missing
ancestors, and schedule deterministic (live) or random (bulk) retrieval.

Live entries block round progress and are requested from every peer at once;
bulk entries are fetched off the push path from one random peer per attempt.
Weak links to unknown digests are also backfilled through the bulk path so a
block's full causal history eventually lands everywhere it is referenced.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Union

from .core import Block, BlockDigest, ProtocolConfig, Round, ValidatorId
from .dag_store import (
    AcceptEvent,
    DagState,
    Scope,
    accept,
    has_uncovered_ancestors,
    is_acceptable,
    missing_ancestors,
    resolve,
)
from .push import BlameLedger, ReputationTable, record_pull_report

# A wanted item: an (author, round) slot, or a bare digest when the slot is
# not derivable (weak links carry no author/round metadata).
Wanted = Union[tuple[ValidatorId, Round], BlockDigest]


class PullMode(str, Enum):
    LIVE = "live"
    BULK = "bulk"
    RAND = "rand"  # uncertified baseline random pull
    CERT = "cert"  # certified baseline deterministic pull


class Classified(str, Enum):
    ACCEPTED = "accepted"
    LIVE = "live"
    BULK = "bulk"


@dataclass(frozen=True)
class PullRequest:
    requester: ValidatorId
    wanted: tuple[Wanted, ...]
    mode: PullMode


@dataclass(frozen=True)
class PullResponse:
    responder: ValidatorId
    blocks: tuple[Block, ...]
    mode: PullMode


class PullHost(Protocol):
    """Side effects the pull engine needs from its validator shell."""

    me: ValidatorId
    now: int

    def send(self, to: ValidatorId, payload: object) -> None: ...
    def set_timer(self, tag: str, delay_us: int) -> None: ...
    def trace_pull(self, mode: str, flush_id: int, n_msgs: int, entries: list[str]) -> None: ...
    def on_rep_change(self, subject: ValidatorId, delta: int, reason: str) -> None: ...


def classify_incoming(
    state: DagState, b: Block, current_round: Round, cfg: ProtocolConfig
) -> tuple[Classified, list[AcceptEvent]]:
    """Route a received block: accept it, or queue it as live or bulk work.

    A block whose missing parents all carry implicit availability proofs is
    accepted immediately; background completion of its history is bulk work.
    """
    if is_acceptable(state, b, cfg):
        events = accept(state, b)
        if has_uncovered_ancestors(state, b):
            state.bulk.add(b.digest)
        return Classified.ACCEPTED, events
    if b.round < current_round:
        state.bulk.add(b.digest)
        return Classified.BULK, []
    state.live.add(b.digest)
    # A grown live set can prove other live blocks available.
    events = resolve(state)
    if b.digest in state.accepted:
        return Classified.ACCEPTED, events
    return Classified.LIVE, events


def promote_on_round_advance(state: DagState, new_round: Round) -> list[BlockDigest]:
    """Live blocks older than the new round move to the bulk module."""
    moved = [
        d for d in state.live if d in state.received and state.received[d].round < new_round
    ]
    for d in moved:
        state.live.discard(d)
        state.bulk.add(d)
    return sorted(moved)


def promote_on_live_growth(state: DagState) -> tuple[list[BlockDigest], list[AcceptEvent]]:
    """Accept live blocks whose missing parents all gained implicit proofs."""
    before = set(state.live)
    events = resolve(state)
    moved = sorted(d for d in before if d in state.accepted)
    return moved, events


@dataclass
class _BulkEntry:
    attempts: int = 0
    tried: set[ValidatorId] = field(default_factory=set)
    due: int = 0


@dataclass
class _LiveEntry:
    first_sent: int
    last_sent: int


class PullEngine:
    """Per-validator scheduler for live and bulk pull traffic."""

    def __init__(
        self,
        cfg: ProtocolConfig,
        dag: DagState,
        rep: ReputationTable,
        ledger: BlameLedger,
        host: PullHost,
        rng: random.Random,
    ) -> None:
        self.cfg = cfg
        self.dag = dag
        self.rep = rep
        self.ledger = ledger
        self.host = host
        self.rng = rng
        self._live: dict[tuple[ValidatorId, Round], _LiveEntry] = {}
        self._bulk: dict[Wanted, _BulkEntry] = {}
        self.weak_missing: set[BlockDigest] = set()
        # digest pulls we issued; blame attaches when the block reveals its author
        self._digest_blame_pending: set[BlockDigest] = set()
        self._flush_seq = 0
        self._live_timer_armed = False
        self._bulk_timer_armed = False
        self.live_requests_sent = 0
        self.bulk_requests_sent = 0

    # -- bookkeeping ---------------------------------------------------------

    def note_block(self, b: Block) -> None:
        """Track unknown weak-linked digests for off-path backfill."""
        self.weak_missing.discard(b.digest)
        for w in b.weaklinks:
            if w not in self.dag.received:
                self.weak_missing.add(w)

    def _slot_resolved(self, entry: tuple[ValidatorId, Round]) -> bool:
        author, rnd = entry
        return rnd <= self.dag.last_accepted[author] or rnd in self.dag.accepted_rounds[author]

    def _peers(self) -> list[ValidatorId]:
        return [v for v in range(self.cfg.n) if v != self.host.me]

    def _blame_own_pull(self, author: ValidatorId, key: Wanted) -> None:
        ev = record_pull_report(
            self.ledger, author, key, self.host.me, self.rep, self.cfg, self.host.me,
            on_change=lambda subj, delta: self.host.on_rep_change(subj, delta, "self_pull"),
        )
        del ev

    # -- scheduling ----------------------------------------------------------

    def schedule_live_pulls(self, now: int) -> list[PullRequest]:
        """One live-mode request per peer carrying all due missing entries."""
        current = missing_ancestors(self.dag, Scope.LIVE, self.cfg)
        for entry in [e for e in self._live if e not in current]:
            del self._live[entry]
        due = sorted(
            e
            for e in current
            if e not in self._live or now - self._live[e].last_sent >= self.cfg.live_recheck_us
        )
        sent: list[PullRequest] = []
        if due:
            self._flush_seq += 1
            req = PullRequest(self.host.me, tuple(due), PullMode.LIVE)
            peers = self._peers()
            for peer in peers:
                self.host.send(peer, req)
                sent.append(req)
            self.live_requests_sent += len(peers)
            self.host.trace_pull(
                "live", self._flush_seq, len(peers), [f"{a}:{r}" for a, r in due]
            )
            for entry in due:
                if entry not in self._live:
                    self._live[entry] = _LiveEntry(first_sent=now, last_sent=now)
                    self._blame_own_pull(entry[0], entry)
                else:
                    self._live[entry].last_sent = now
        if current and not self._live_timer_armed:
            self._live_timer_armed = True
            self.host.set_timer("live_recheck", self.cfg.live_recheck_us)
        return sent

    def schedule_bulk_pulls(self, now: int) -> list[PullRequest]:
        """One request to one random peer per missing bulk entry per attempt."""
        slots = missing_ancestors(self.dag, Scope.BULK, self.cfg)
        wanted: list[Wanted] = sorted(slots)
        wanted += sorted(d for d in self.weak_missing if d not in self.dag.received)
        for key in [k for k in self._bulk if not self._wanted_still_open(k)]:
            del self._bulk[key]
        sent: list[PullRequest] = []
        for key in wanted:
            entry = self._bulk.setdefault(key, _BulkEntry(due=now))
            if entry.due > now:
                continue
            req = self._bulk_attempt(key, entry, now)
            sent.append(req)
        if self._bulk and not self._bulk_timer_armed:
            self._bulk_timer_armed = True
            self.host.set_timer("bulk_retry", self.cfg.bulk_retry_timeout_us)
        return sent

    def _wanted_still_open(self, key: Wanted) -> bool:
        if isinstance(key, tuple):
            return not self._slot_resolved(key)
        return key in self.weak_missing and key not in self.dag.received

    def _bulk_attempt(self, key: Wanted, entry: _BulkEntry, now: int) -> PullRequest:
        peers = self._peers()
        untried = [p for p in peers if p not in entry.tried]
        if not untried:
            entry.tried.clear()
            untried = peers
        target = self.rng.choice(untried)
        entry.tried.add(target)
        entry.attempts += 1
        entry.due = now + self.cfg.bulk_retry_timeout_us
        req = PullRequest(self.host.me, (key,), PullMode.BULK)
        self.host.send(target, req)
        self.bulk_requests_sent += 1
        self._flush_seq += 1
        label = f"{key[0]}:{key[1]}" if isinstance(key, tuple) else key.hex()[:16]
        self.host.trace_pull("bulk", self._flush_seq, 1, [label])
        if entry.attempts == 1:
            if isinstance(key, tuple):
                self._blame_own_pull(key[0], key)
            else:
                self._digest_blame_pending.add(key)
        return req

    def on_timer(self, tag: str, now: int) -> None:
        if tag == "live_recheck":
            self._live_timer_armed = False
            self.schedule_live_pulls(now)
        elif tag == "bulk_retry":
            self._bulk_timer_armed = False
            self.schedule_bulk_pulls(now)

    # -- serving and resolving ----------------------------------------------

    def handle_pull_request(self, req: PullRequest) -> PullResponse:
        """Serve accepted blocks and register the request as a report."""
        found: list[Block] = []
        for key in req.wanted:
            if isinstance(key, tuple):
                author, rnd = key
                blk = self.dag.accepted_block_at(author, rnd)
                subject: Optional[ValidatorId] = author
            else:
                blk = self.dag.received.get(key) if key in self.dag.accepted else None
                subject = self.dag.received[key].author if key in self.dag.received else None
            if blk is not None:
                found.append(blk)
            if subject is not None:
                ev = record_pull_report(
                    self.ledger, subject, key, req.requester, self.rep, self.cfg,
                    self.host.me,
                    on_change=lambda subj, delta: self.host.on_rep_change(
                        subj, delta, "quorum_reports"
                    ),
                )
                del ev
        found.sort(key=lambda b: (b.round, b.author))
        return PullResponse(self.host.me, tuple(found), req.mode)

    def on_block_arrival(self, b: Block) -> None:
        """Resolve any digest-pull blame now that the author is known."""
        if b.digest in self._digest_blame_pending:
            self._digest_blame_pending.discard(b.digest)
            self._blame_own_pull(b.author, b.digest)
