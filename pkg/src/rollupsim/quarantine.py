"""Holding area for malicious-flagged transactions.

An entry stays out of every block until it retires (dead nonce, mempool
drop) or is released (re-simulation fails, administrative approval, staked
collateral exceeding the damage bound, or the configured time limit).
Per-block maintenance touches only nonces and timestamps — it never
simulates, which is what keeps a quarantine flood from slowing the chain.
Deposit entries never leave through any release path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, Union

from .core import (
    Address,
    AnyTransaction,
    DepositTransaction,
    DuplicateKey,
    SignedTransaction,
    TxHash,
    duplicate_key,
    tx_id,
)
from .detection import Verdict
from .vm import BlockContext, PreconditionFailed, TxStatus, WorldState, execute_transaction


class QuarantineError(Exception):
    pass


class AlreadyQuarantined(QuarantineError):
    pass


class EntryNotFound(QuarantineError):
    pass


class NotAuthorized(QuarantineError):
    pass


class DepositPermanence(QuarantineError):
    """Deposit entries are never released."""


@dataclass(frozen=True)
class QuarantineConfig:
    time_criterion_period: int = 86400
    operators: FrozenSet[Address] = frozenset()

    def __post_init__(self) -> None:
        if self.time_criterion_period <= 0:
            raise ValueError("time criterion period must be positive")


@dataclass
class QuarantineEntry:
    tx: AnyTransaction
    verdict: Verdict
    quarantined_at: int
    quarantined_block: int
    is_deposit: bool
    victim_admins: Dict[Address, Address] = field(default_factory=dict)
    approvals: Set[Address] = field(default_factory=set)

    @property
    def key(self) -> TxHash:
        return tx_id(self.tx)


@dataclass(frozen=True)
class AuditEvent:
    entry: TxHash
    at: int
    kind: str
    actor: str = "-"
    detail: str = "-"


# Release / hold outcomes for the trigger operations.
@dataclass(frozen=True)
class Released:
    criterion: str


@dataclass(frozen=True)
class StillHeld:
    reason: str = "exploit_still_viable"


@dataclass(frozen=True)
class PendingApprovals:
    missing: Tuple[Address, ...]


@dataclass(frozen=True)
class InsufficientCollateral:
    # Stake must strictly exceed this bound for the economic criterion.
    threshold: int


class ReleasedRegistry:
    """Duplicate keys of everything ever released; grows monotonically."""

    def __init__(self) -> None:
        self.keys: Set[DuplicateKey] = set()

    def note(self, tx: SignedTransaction) -> None:
        self.keys.add(duplicate_key(tx))

    def is_released_duplicate(self, tx: SignedTransaction) -> bool:
        return duplicate_key(tx) in self.keys


class CollateralLedger:
    """Stakes per account, with per-release locks held until the tx settles."""

    def __init__(self) -> None:
        self.stakes: Dict[Address, int] = {}
        self.locked: Dict[TxHash, Tuple[Address, int]] = {}

    def stake(self, account: Address, amount: int) -> None:
        if amount < 0:
            raise ValueError("stake amount must be non-negative")
        self.stakes[account] = self.stakes.get(account, 0) + amount

    def available(self, account: Address) -> int:
        return self.stakes.get(account, 0)

    def lock(self, key: TxHash, account: Address, amount: int) -> None:
        if self.available(account) < amount:
            raise ValueError("lock exceeds available stake")
        self.stakes[account] -= amount
        self.locked[key] = (account, amount)

    def refund(self, key: TxHash) -> Optional[int]:
        entry = self.locked.pop(key, None)
        if entry is None:
            return None
        account, amount = entry
        self.stakes[account] = self.stakes.get(account, 0) + amount
        return amount


@dataclass
class MaintenanceReport:
    retired: List[TxHash] = field(default_factory=list)
    time_released: List[TxHash] = field(default_factory=list)


class QuarantineStore:
    def __init__(self, config: QuarantineConfig, registry: Optional[ReleasedRegistry] = None):
        self.config = config
        self.active: Dict[TxHash, QuarantineEntry] = {}
        self.registry = registry if registry is not None else ReleasedRegistry()
        self.audit: List[AuditEvent] = []
        self.admission_order: List[TxHash] = []

    # -- admission --

    def admit(
        self,
        tx: AnyTransaction,
        verdict: Verdict,
        now: int,
        block_no: int,
        victim_admins: Optional[Dict[Address, Address]] = None,
    ) -> QuarantineEntry:
        if not verdict.malicious:
            raise QuarantineError("only malicious-flagged transactions enter quarantine")
        key = tx_id(tx)
        if key in self.active:
            raise AlreadyQuarantined(key.hex0x())
        entry = QuarantineEntry(
            tx=tx,
            verdict=verdict,
            quarantined_at=now,
            quarantined_block=block_no,
            is_deposit=isinstance(tx, DepositTransaction),
            victim_admins=dict(victim_admins or {}),
        )
        self.active[key] = entry
        self.admission_order.append(key)
        self.audit.append(AuditEvent(key, now, "admitted", detail=f"block={block_no}"))
        return entry

    def is_active(self, key: TxHash) -> bool:
        return key in self.active

    def entry(self, key: TxHash) -> QuarantineEntry:
        if key not in self.active:
            raise EntryNotFound(key.hex0x())
        return self.active[key]

    # -- per-block maintenance: nonces and clocks only, never a simulation --

    def per_block_maintenance(self, chain_state: WorldState, now: int) -> MaintenanceReport:
        """Retire dead-nonce entries and time-release overheld ones.

        Called exactly once per appended block. Deposits ignore the time
        criterion: they stay until their nonce-free existence ends the run.
        """
        report = MaintenanceReport()
        for key in list(self.admission_order):
            entry = self.active.get(key)
            if entry is None:
                continue
            if not entry.is_deposit and entry.tx.nonce < chain_state.nonce_of(entry.tx.sender):
                del self.active[key]
                report.retired.append(key)
                self.audit.append(AuditEvent(key, now, "retired", detail="criterion=nonce"))
                continue
            if not entry.is_deposit and now >= entry.quarantined_at + self.config.time_criterion_period:
                self._release(entry, now, "time", "-")
                report.time_released.append(key)
        return report

    def on_mempool_retired(self, keys: Sequence[TxHash], now: int) -> List[TxHash]:
        """Drop entries whose transaction left the mempool: as if never admitted."""
        dropped = []
        for key in keys:
            if key in self.active and not self.active[key].is_deposit:
                del self.active[key]
                dropped.append(key)
                self.audit.append(AuditEvent(key, now, "retired", detail="criterion=mempool"))
        return dropped

    # -- release triggers (pull-based; never run from maintenance) --

    def request_failure_release(
        self, key: TxHash, tip_state: WorldState, ctx: BlockContext, now: int, meter=None
    ) -> Union[Released, StillHeld]:
        """Re-simulate at the tip; release iff the tx now fails harmlessly."""
        entry = self._releasable(key)
        if meter is not None:
            meter.release += 1
        try:
            sim = execute_transaction(tip_state, entry.tx, ctx)
            failed = sim.status is TxStatus.REVERT
        except PreconditionFailed as exc:
            failed = exc.reason == PreconditionFailed.INSUFFICIENT_BALANCE
        if not failed:
            self.audit.append(AuditEvent(key, now, "held", detail="criterion=failure"))
            return StillHeld()
        self._release(entry, now, "failure", "-")
        return Released("failure")

    def approve_release(self, key: TxHash, approver: Address, now: int) -> Union[Released, PendingApprovals]:
        """One operator approval suffices; victim admins must be unanimous."""
        entry = self._releasable(key)
        if approver in self.config.operators:
            entry.approvals.add(approver)
            self.audit.append(AuditEvent(key, now, "approval", actor=approver.hex0x(), detail="role=operator"))
            self._release(entry, now, "administrative", approver.hex0x())
            return Released("administrative")
        victim_admins = {entry.victim_admins[v] for v in entry.verdict.victims if v in entry.victim_admins}
        if approver not in victim_admins:
            raise NotAuthorized(approver.hex0x())
        entry.approvals.add(approver)
        self.audit.append(AuditEvent(key, now, "approval", actor=approver.hex0x(), detail="role=victim_admin"))
        missing = sorted(
            victim
            for victim in entry.verdict.victims
            if entry.victim_admins.get(victim) not in entry.approvals
        )
        if missing:
            return PendingApprovals(tuple(missing))
        self._release(entry, now, "administrative", approver.hex0x())
        return Released("administrative")

    def try_economic_release(
        self, ledger: CollateralLedger, key: TxHash, now: int
    ) -> Union[Released, InsufficientCollateral]:
        """Release iff the sender's free stake strictly exceeds the damage bound."""
        entry = self._releasable(key)
        damage = entry.verdict.damage_estimate
        sender = entry.tx.sender
        if ledger.available(sender) <= damage:
            self.audit.append(AuditEvent(key, now, "held", detail=f"criterion=economic threshold={damage}"))
            return InsufficientCollateral(threshold=damage)
        ledger.lock(key, sender, damage)
        self._release(entry, now, "economic", sender.hex0x())
        return Released("economic")

    def on_replacement(self, old_key: TxHash, new_tx: SignedTransaction, now: int) -> Dict[str, bool]:
        """A replacement leaves the old entry held; the new tx is detected
        normally unless it duplicates something already released."""
        if old_key in self.active:
            self.audit.append(
                AuditEvent(old_key, now, "replaced", detail=f"new={tx_id(new_tx).hex0x()}")
            )
        return {"quarantine_new": not self.registry.is_released_duplicate(new_tx)}

    # -- internals --

    def _releasable(self, key: TxHash) -> QuarantineEntry:
        entry = self.entry(key)
        if entry.is_deposit:
            raise DepositPermanence(key.hex0x())
        return entry

    def _release(self, entry: QuarantineEntry, now: int, criterion: str, actor: str) -> None:
        del self.active[entry.key]
        if isinstance(entry.tx, SignedTransaction):
            self.registry.note(entry.tx)
        self.audit.append(AuditEvent(entry.key, now, "released", actor=actor, detail=f"criterion={criterion}"))
