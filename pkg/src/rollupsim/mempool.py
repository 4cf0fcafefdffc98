"""Queued/pending transaction pool with replacement-by-fee and retirement.

Single-writer: one owner serializes all mutations. Ordering of candidates is
fully deterministic (effective tip desc, then arrival time, then hash) so the
whole pipeline replays bit-identically.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

from .core import Address, SignedTransaction, TxHash, tx_hash
from .vm import WorldState


class PoolStatus(Enum):
    QUEUED = "queued"
    PENDING = "pending"


class RejectReason(Enum):
    NONCE_TOO_LOW = "nonce_too_low"
    INSUFFICIENT_BALANCE = "insufficient_balance"
    UNDERPRICED_REPLACEMENT = "underpriced_replacement"
    POOL_FULL = "pool_full"


@dataclass(frozen=True)
class PoolConfig:
    max_queued: int = 4096
    max_pending: int = 1024
    min_replacement_bump_percent: int = 10
    tx_lifetime: int = 10800

    def __post_init__(self) -> None:
        if min(self.max_queued, self.max_pending, self.min_replacement_bump_percent, self.tx_lifetime) <= 0:
            raise ValueError("pool config values must be positive")


@dataclass
class PoolEntry:
    tx: SignedTransaction
    received_at: int
    status: PoolStatus


@dataclass(frozen=True)
class SubmitResult:
    outcome: str  # accepted | replaced | rejected
    replaced: Optional[TxHash] = None
    reason: Optional[RejectReason] = None


ACCEPTED = SubmitResult("accepted")


def _cost(tx: SignedTransaction) -> int:
    return tx.value + tx.gas_limit * tx.max_fee


class Mempool:
    def __init__(self, config: PoolConfig = PoolConfig()):
        self.config = config
        self.entries: Dict[TxHash, PoolEntry] = {}
        self.by_sender: Dict[Address, Dict[int, TxHash]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, h: TxHash) -> bool:
        return h in self.entries

    def get(self, h: TxHash) -> Optional[PoolEntry]:
        return self.entries.get(h)

    def submit(self, tx: SignedTransaction, now: int, state: WorldState) -> SubmitResult:
        """Validate and admit a transaction, possibly replacing a same-nonce one.

        A replacement needs max_fee >= old max_fee * (1 + bump%); anything
        below is rejected as underpriced. When the queued side overflows, the
        lowest-fee queued transaction (possibly the incoming one) is dropped.
        """
        account = state.account(tx.sender)
        if tx.nonce < account.nonce:
            return SubmitResult("rejected", reason=RejectReason.NONCE_TOO_LOW)
        if account.balance < _cost(tx):
            return SubmitResult("rejected", reason=RejectReason.INSUFFICIENT_BALANCE)

        replaced_hash: Optional[TxHash] = None
        sender_slots = self.by_sender.setdefault(tx.sender, {})
        if tx.nonce in sender_slots:
            old_hash = sender_slots[tx.nonce]
            old_fee = self.entries[old_hash].tx.max_fee
            bump = self.config.min_replacement_bump_percent
            if tx.max_fee * 100 < old_fee * (100 + bump):
                return SubmitResult("rejected", reason=RejectReason.UNDERPRICED_REPLACEMENT)
            self._drop(old_hash)
            replaced_hash = old_hash

        h = tx_hash(tx)
        self.entries[h] = PoolEntry(tx=tx, received_at=now, status=PoolStatus.QUEUED)
        self.by_sender.setdefault(tx.sender, {})[tx.nonce] = h
        self._refresh_statuses(state)

        if self._count(PoolStatus.QUEUED) > self.config.max_queued:
            evicted = self._evict_lowest_queued()
            if evicted == h:
                self._refresh_statuses(state)
                return SubmitResult("rejected", reason=RejectReason.POOL_FULL)
        if replaced_hash is not None:
            return SubmitResult("replaced", replaced=replaced_hash)
        return ACCEPTED

    def pending_candidates(self, base_fee: int, state: WorldState) -> List[SignedTransaction]:
        """Pending txs that bid at least the base fee, most generous tip first.

        Per sender, only the nonce-contiguous prefix starting at the account
        nonce is eligible (a fee-filtered middle nonce cuts off the rest).
        Ties break by arrival time, then hash.
        """
        eligible: List[PoolEntry] = []
        for sender, slots in self.by_sender.items():
            nonce = state.nonce_of(sender)
            while nonce in slots:
                entry = self.entries[slots[nonce]]
                if entry.status is not PoolStatus.PENDING or entry.tx.max_fee < base_fee:
                    break
                eligible.append(entry)
                nonce += 1

        def sort_key(entry: PoolEntry):
            tip = min(entry.tx.priority_fee, entry.tx.max_fee - base_fee)
            return (-tip, entry.received_at, tx_hash(entry.tx))

        return [entry.tx for entry in sorted(eligible, key=sort_key)]

    def retire(self, now: int, state: WorldState) -> List[TxHash]:
        """Drop stale entries: dead nonce, expired lifetime, or unaffordable."""
        removed: List[TxHash] = []
        for h in sorted(self.entries):
            entry = self.entries[h]
            account = state.account(entry.tx.sender)
            if (
                entry.tx.nonce < account.nonce
                or entry.received_at + self.config.tx_lifetime < now
                or account.balance < _cost(entry.tx)
            ):
                removed.append(h)
        for h in removed:
            self._drop(h)
        self._refresh_statuses(state)
        return removed

    # -- internals --

    def _drop(self, h: TxHash) -> None:
        entry = self.entries.pop(h, None)
        if entry is None:
            return
        slots = self.by_sender.get(entry.tx.sender)
        if slots and slots.get(entry.tx.nonce) == h:
            del slots[entry.tx.nonce]
            if not slots:
                del self.by_sender[entry.tx.sender]

    def _count(self, status: PoolStatus) -> int:
        return sum(1 for e in self.entries.values() if e.status is status)

    def _refresh_statuses(self, state: WorldState) -> None:
        # Pending = nonce-contiguous from the account nonce, capped by max_pending.
        pending_total = 0
        for sender in sorted(self.by_sender):
            slots = self.by_sender[sender]
            nonce = state.nonce_of(sender)
            contiguous = set()
            while nonce in slots:
                contiguous.add(nonce)
                nonce += 1
            for tx_nonce in sorted(slots):
                entry = self.entries[slots[tx_nonce]]
                if tx_nonce in contiguous and pending_total < self.config.max_pending:
                    entry.status = PoolStatus.PENDING
                    pending_total += 1
                else:
                    entry.status = PoolStatus.QUEUED

    def _evict_lowest_queued(self) -> Optional[TxHash]:
        queued = [(e.tx.max_fee, -e.received_at, h) for h, e in self.entries.items() if e.status is PoolStatus.QUEUED]
        if not queued:
            return None
        _, _, victim = min(queued)
        self._drop(victim)
        return victim
