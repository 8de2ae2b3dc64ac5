"""Admission-controlled optimistic push: threshold clock, reputation-ranked
parent selection, block assembly, watermark credits and blame penalties."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

from .core import NO_ROUND, Block, BlockDigest, ProtocolConfig, Round, ValidatorId, make_block
from .dag_store import DagState, is_acceptable

# Blame/report keys: a concrete digest, or an (author, round) slot when the
# digest is not yet known at pull time.
ReportKey = Union[BlockDigest, tuple[ValidatorId, Round]]


class InsufficientParents(Exception):
    pass


@dataclass
class ReputationTable:
    scores: list[int]

    @classmethod
    def uniform(cls, n: int, initial: int = 0) -> "ReputationTable":
        return cls(scores=[initial] * n)

    def rank_key(self, author: ValidatorId) -> tuple[int, int]:
        # Higher score first, ties broken by ascending validator index.
        return (-self.scores[author], author)


@dataclass
class BlameEvent:
    subject: ValidatorId
    key: ReportKey
    reason: str  # "self_pull" | "quorum_reports"


@dataclass
class BlameLedger:
    reports: dict[tuple[ValidatorId, ReportKey], set[ValidatorId]] = field(default_factory=dict)
    penalized: set[tuple[ValidatorId, ReportKey]] = field(default_factory=set)


def try_advance_round(state: DagState, current_round: Round, cfg: ProtocolConfig) -> Optional[Round]:
    """Next round iff 2f+1 distinct authors have accepted blocks at current_round."""
    authors = {
        author
        for (author, rnd) in state.accepted_slot
        if rnd == current_round
    }
    if len(authors) >= cfg.quorum:
        return current_round + 1
    return None


def ac_parent_selection(
    r: Round,
    candidates: Iterable[Block],
    rep: ReputationTable,
    cfg: ProtocolConfig,
    dag: DagState,
    me: ValidatorId,
) -> list[Block]:
    """Top 2f+1 acceptable round r-1 blocks by creator reputation.

    The proposer's own previous block is always included: the last-accepted
    compaction of the pull path relies on an unbroken self-chain.
    """
    eligible = [
        b for b in candidates if b.round == r - 1 and is_acceptable(dag, b, cfg)
    ]
    own = [b for b in eligible if b.author == me]
    if not own:
        raise InsufficientParents(f"own round {r - 1} block not among acceptable candidates")
    rest = sorted(
        (b for b in eligible if b.author != me),
        key=lambda b: rep.rank_key(b.author),
    )
    chosen = own[:1] + rest[: cfg.quorum - 1]
    if len(chosen) < cfg.quorum:
        raise InsufficientParents(f"{len(chosen)} acceptable candidates < quorum {cfg.quorum}")
    chosen.sort(key=lambda b: b.author)
    return chosen


def compute_ancestors(parents: Iterable[Block], cfg: ProtocolConfig) -> tuple[Round, ...]:
    """Elementwise max of parent rounds (per author) and parent ancestors."""
    out = [NO_ROUND] * cfg.n
    for p in parents:
        if p.round > out[p.author]:
            out[p.author] = p.round
        for k in range(cfg.n):
            if p.ancestors[k] > out[k]:
                out[k] = p.ancestors[k]
    return tuple(out)


def candidate_blocks(state: DagState, r: Round) -> list[Block]:
    """Latest received block per author with round <= r-1."""
    out = []
    for k in range(state.cfg.n):
        b = state.latest_received_upto(k, r - 1)
        if b is not None:
            out.append(b)
    return out


def build_block(
    state: DagState,
    r: Round,
    rep: ReputationTable,
    cfg: ProtocolConfig,
    me: ValidatorId,
    payload: bytes = b"",
) -> Block:
    """Assemble the round-r block: AC parents, pruned weaklinks, watermark."""
    if r == 0:
        return make_block(0, me, n=cfg.n, payload=payload)
    cands = candidate_blocks(state, r)
    parents = ac_parent_selection(r, cands, rep, cfg, state, me)
    parent_digests = tuple(b.digest for b in parents)
    ancestors = compute_ancestors(parents, cfg)
    weak = []
    for b in sorted(cands, key=lambda blk: blk.author):
        if b.digest in parent_digests:
            continue
        if not is_acceptable(state, b, cfg):
            continue
        if ancestors[b.author] >= b.round:
            # Already covered by a chosen parent's causal history.
            continue
        weak.append(b.digest)
    watermark = tuple(state.max_received_round[k] for k in range(cfg.n))
    return make_block(
        round=r,
        author=me,
        parents=parent_digests,
        weaklinks=tuple(weak),
        watermark=watermark,
        ancestors=ancestors,
        payload=payload,
    )


def update_score_with_watermarks(
    r: Round,
    quorum_blocks: Iterable[Block],
    rep: ReputationTable,
    cfg: ProtocolConfig,
    applied: set[tuple[ValidatorId, Round]],
    on_change: Optional[Callable[[ValidatorId, int], None]] = None,
) -> None:
    """Credit validators attested by 2f+1 round-r watermarks.

    A credit for (j, r) is applied at most once. The pseudocode variant
    requires watermark[j] == r-1 exactly; the default tolerates faster
    validators with >=.
    """
    blocks = [b for b in quorum_blocks if b.round == r]
    for j in range(cfg.n):
        if (j, r) in applied:
            continue
        if cfg.watermark_exact_lag:
            count = sum(1 for b in blocks if b.watermark[j] == r - 1)
        else:
            count = sum(1 for b in blocks if b.watermark[j] >= r - 1)
        if count >= cfg.quorum:
            applied.add((j, r))
            rep.scores[j] += 1
            if on_change is not None:
                on_change(j, 1)


def record_pull_report(
    ledger: BlameLedger,
    author: ValidatorId,
    key: ReportKey,
    reporter: ValidatorId,
    rep: ReputationTable,
    cfg: ProtocolConfig,
    me: ValidatorId,
    on_change: Optional[Callable[[ValidatorId, int], None]] = None,
) -> Optional[BlameEvent]:
    """Apply the two reputation-decrease rules for a pulled block of author.

    Rule (i): the local validator's own pull penalizes immediately.
    Rule (ii): f+1 distinct reporters for the same (author, key) penalize once.
    The same (author, key) is never penalized twice locally.
    """
    slot = (author, key)
    if reporter == me:
        if slot in ledger.penalized:
            return None
        ledger.penalized.add(slot)
        rep.scores[author] -= cfg.r_l
        if on_change is not None:
            on_change(author, -cfg.r_l)
        return BlameEvent(author, key, "self_pull")
    seen = ledger.reports.setdefault(slot, set())
    seen.add(reporter)
    if len(seen) >= cfg.weak_quorum and slot not in ledger.penalized:
        ledger.penalized.add(slot)
        rep.scores[author] -= cfg.r_l
        if on_change is not None:
            on_change(author, -cfg.r_l)
        return BlameEvent(author, key, "quorum_reports")
    return None
