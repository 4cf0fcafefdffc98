"""Miniature deterministic account machine with read/write-set tracking.

Accounts hold balances, nonces and optionally a guarded-command program whose
statements run top to bottom on every call. There is no branching, no
cross-contract call and no code deployment; a failed REQUIRE (or an
overdrawn PAY, or running out of gas) reverts the whole transaction. Every
state location touched during execution is recorded as an access key so
callers can do dependency analysis between transactions.

Cost model: 21 gas intrinsic plus 1 gas per executed statement. The base-fee
share of the fee is burned; the priority share goes to the block's fee
recipient. Deposits mint their value and pay no fee.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, Mapping, Optional, Tuple, Union

from .core import (
    BASE_TX_GAS,
    Address,
    AnyTransaction,
    Block,
    DepositTransaction,
    SignedTransaction,
    StateRoot,
    TxHash,
    tx_id,
)

WORD = 2**256
WORD_MAX = WORD - 1


# ---------------------------------------------------------------------------
# Expressions and statements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: int

    def __post_init__(self) -> None:
        if not 0 <= self.value <= WORD_MAX:
            raise ValueError(f"constant out of word range: {self.value}")


@dataclass(frozen=True)
class SLoad:
    key: "Expr"


@dataclass(frozen=True)
class BalanceOf:
    addr: "Expr"


@dataclass(frozen=True)
class Caller:
    pass


@dataclass(frozen=True)
class CallValue:
    pass


@dataclass(frozen=True)
class CallData:
    """First 32 bytes of the call payload, read as a big-endian integer."""


@dataclass(frozen=True)
class SelfAddr:
    pass


BIN_OPS = ("add", "sub", "mul", "eq", "lt", "and", "or")


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Expr"
    right: "Expr"

    def __post_init__(self) -> None:
        if self.op not in BIN_OPS:
            raise ValueError(f"unknown operator {self.op!r}")


@dataclass(frozen=True)
class Not:
    inner: "Expr"


Expr = Union[Const, SLoad, BalanceOf, Caller, CallValue, CallData, SelfAddr, Bin, Not]


@dataclass(frozen=True)
class Require:
    cond: Expr


@dataclass(frozen=True)
class SetSlot:
    key: Expr
    value: Expr


@dataclass(frozen=True)
class Pay:
    to: Expr
    amount: Expr


@dataclass(frozen=True)
class PauseGuard:
    """Sugar for REQUIRE(SLOAD(key) == 0)."""

    key: Expr


Statement = Union[Require, SetSlot, Pay, PauseGuard]


def expr_text(expr: Expr) -> str:
    """Canonical textual form of an expression (integers in lowercase hex)."""
    if isinstance(expr, Const):
        return f"(const {hex(expr.value)})"
    if isinstance(expr, SLoad):
        return f"(sload {expr_text(expr.key)})"
    if isinstance(expr, BalanceOf):
        return f"(balance {expr_text(expr.addr)})"
    if isinstance(expr, Caller):
        return "caller"
    if isinstance(expr, CallValue):
        return "callvalue"
    if isinstance(expr, CallData):
        return "calldata"
    if isinstance(expr, SelfAddr):
        return "self"
    if isinstance(expr, Bin):
        return f"({expr.op} {expr_text(expr.left)} {expr_text(expr.right)})"
    if isinstance(expr, Not):
        return f"(not {expr_text(expr.inner)})"
    raise TypeError(f"not an expression: {expr!r}")


def statement_text(stmt: Statement) -> str:
    if isinstance(stmt, Require):
        return f"(require {expr_text(stmt.cond)})"
    if isinstance(stmt, SetSlot):
        return f"(set {expr_text(stmt.key)} {expr_text(stmt.value)})"
    if isinstance(stmt, Pay):
        return f"(pay {expr_text(stmt.to)} {expr_text(stmt.amount)})"
    if isinstance(stmt, PauseGuard):
        return f"(pause-guard {expr_text(stmt.key)})"
    raise TypeError(f"not a statement: {stmt!r}")


def code_text(code: "ContractCode") -> str:
    return " ".join(statement_text(s) for s in code.statements)


# ---------------------------------------------------------------------------
# Accounts and world state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContractCode:
    admin: Address
    statements: Tuple[Statement, ...]


@dataclass(frozen=True)
class Account:
    balance: int = 0
    nonce: int = 0
    code: Optional[ContractCode] = None
    storage: Mapping[bytes, bytes] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return self.balance == 0 and self.nonce == 0 and self.code is None and not self.storage


EMPTY_ACCOUNT = Account()


@dataclass(frozen=True)
class WorldState:
    """All accounts, stored canonically: empty accounts and zero slots are absent."""

    accounts: Mapping[Address, Account] = field(default_factory=dict)

    def account(self, addr: Address) -> Account:
        return self.accounts.get(addr, EMPTY_ACCOUNT)

    def balance_of(self, addr: Address) -> int:
        return self.account(addr).balance

    def nonce_of(self, addr: Address) -> int:
        return self.account(addr).nonce


def make_state(accounts: Mapping[Address, Account]) -> WorldState:
    """Build a canonical WorldState, dropping empty accounts and zero slots."""
    pruned: Dict[Address, Account] = {}
    for addr, acct in accounts.items():
        storage = {k: v for k, v in acct.storage.items() if v != bytes(32)}
        acct = Account(balance=acct.balance, nonce=acct.nonce, code=acct.code, storage=storage)
        if not acct.is_empty():
            pruned[addr] = acct
    return WorldState(pruned)


def slot_bytes(value: int) -> bytes:
    return (value % WORD).to_bytes(32, "big")


def slot_int(value: bytes) -> int:
    return int.from_bytes(value, "big")


# ---------------------------------------------------------------------------
# Access keys and simulation results
# ---------------------------------------------------------------------------

class AccessKind(IntEnum):
    STORAGE = 0
    BALANCE = 1
    NONCE = 2
    CODE = 3


@dataclass(frozen=True, order=True)
class AccessKey:
    kind: AccessKind
    addr: Address
    slot: bytes = b""

    @staticmethod
    def storage(addr: Address, slot: bytes) -> "AccessKey":
        return AccessKey(AccessKind.STORAGE, addr, slot)

    @staticmethod
    def balance(addr: Address) -> "AccessKey":
        return AccessKey(AccessKind.BALANCE, addr)

    @staticmethod
    def nonce(addr: Address) -> "AccessKey":
        return AccessKey(AccessKind.NONCE, addr)

    @staticmethod
    def code(addr: Address) -> "AccessKey":
        return AccessKey(AccessKind.CODE, addr)


class TxStatus(Enum):
    SUCCESS = "success"
    REVERT = "revert"


@dataclass(frozen=True)
class SimulationResult:
    tx_id: TxHash
    status: TxStatus
    gas_used: int
    reads: frozenset
    writes: frozenset
    balance_deltas: Mapping[Address, int]
    post_state: WorldState


@dataclass(frozen=True)
class BlockContext:
    base_fee: int
    timestamp: int
    fee_recipient: Address


class PreconditionFailed(Exception):
    """The transaction is not executable at this state (not a revert)."""

    NONCE_TOO_LOW = "nonce_too_low"
    NONCE_TOO_HIGH = "nonce_too_high"
    INSUFFICIENT_BALANCE = "insufficient_balance"
    FEE_BELOW_BASE = "fee_below_base"

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}{': ' + detail if detail else ''}")
        self.reason = reason


class InvalidBlock(Exception):
    def __init__(self, index: int, reason: str):
        super().__init__(f"transaction {index}: {reason}")
        self.index = index
        self.reason = reason


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

class _Revert(Exception):
    pass


class _OutOfGas(Exception):
    pass


class _Execution:
    """Scratch copy of the touched accounts plus the recorded access sets."""

    def __init__(self, base: WorldState):
        self.base = base
        self.balances: Dict[Address, int] = {}
        self.nonces: Dict[Address, int] = {}
        self.storage: Dict[Address, Dict[bytes, bytes]] = {}
        self.reads: set = set()
        self.writes: set = set()
        self.gas_used: int = BASE_TX_GAS

    # -- scratch state accessors (no access recording) --
    def _balance(self, addr: Address) -> int:
        if addr not in self.balances:
            self.balances[addr] = self.base.balance_of(addr)
        return self.balances[addr]

    def _nonce(self, addr: Address) -> int:
        if addr not in self.nonces:
            self.nonces[addr] = self.base.nonce_of(addr)
        return self.nonces[addr]

    def _slots(self, addr: Address) -> Dict[bytes, bytes]:
        if addr not in self.storage:
            self.storage[addr] = dict(self.base.account(addr).storage)
        return self.storage[addr]

    # -- recorded accesses --
    def read_balance(self, addr: Address) -> int:
        self.reads.add(AccessKey.balance(addr))
        return self._balance(addr)

    def write_balance(self, addr: Address, value: int) -> None:
        self.writes.add(AccessKey.balance(addr))
        self.balances[addr] = value

    def read_nonce(self, addr: Address) -> int:
        self.reads.add(AccessKey.nonce(addr))
        return self._nonce(addr)

    def write_nonce(self, addr: Address, value: int) -> None:
        self.writes.add(AccessKey.nonce(addr))
        self.nonces[addr] = value

    def read_slot(self, addr: Address, key: bytes) -> bytes:
        self.reads.add(AccessKey.storage(addr, key))
        return self._slots(addr).get(key, bytes(32))

    def write_slot(self, addr: Address, key: bytes, value: bytes) -> None:
        self.writes.add(AccessKey.storage(addr, key))
        slots = self._slots(addr)
        if value == bytes(32):
            slots.pop(key, None)
        else:
            slots[key] = value

    def read_code(self, addr: Address) -> Optional[ContractCode]:
        self.reads.add(AccessKey.code(addr))
        return self.base.account(addr).code

    def transfer(self, src: Address, dst: Address, amount: int) -> None:
        self.write_balance(src, self.read_balance(src) - amount)
        self.write_balance(dst, self.read_balance(dst) + amount)

    def post_state(self) -> WorldState:
        accounts: Dict[Address, Account] = dict(self.base.accounts)
        touched = set(self.balances) | set(self.nonces) | set(self.storage)
        for addr in touched:
            prev = self.base.account(addr)
            accounts[addr] = Account(
                balance=self.balances.get(addr, prev.balance),
                nonce=self.nonces.get(addr, prev.nonce),
                code=prev.code,
                storage=self.storage.get(addr, prev.storage),
            )
        return make_state(accounts)


class _CallEnv:
    """Binds expression evaluation to a running call frame."""

    def __init__(self, exe: _Execution, self_addr: Address, caller: Address, callvalue: int, calldata: bytes):
        self.exe = exe
        self.self_addr = self_addr
        self.caller = caller
        self.callvalue = callvalue
        self.calldata = calldata

    def sload(self, key: bytes) -> int:
        return slot_int(self.exe.read_slot(self.self_addr, key))

    def balance(self, addr: Address) -> int:
        return self.exe.read_balance(addr)


def eval_expr(expr: Expr, env) -> int:
    """Evaluate an expression to a 256-bit word; total and deterministic.

    ADD and MUL wrap modulo 2**256, SUB saturates at 0, comparisons and logic
    yield 0 or 1 (any non-zero word is true).
    """
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, SLoad):
        return env.sload(slot_bytes(eval_expr(expr.key, env)))
    if isinstance(expr, BalanceOf):
        return env.balance(Address.from_int(eval_expr(expr.addr, env)))
    if isinstance(expr, Caller):
        return int.from_bytes(env.caller, "big")
    if isinstance(expr, CallValue):
        return env.callvalue
    if isinstance(expr, CallData):
        return int.from_bytes(env.calldata[:32], "big")
    if isinstance(expr, SelfAddr):
        return int.from_bytes(env.self_addr, "big")
    if isinstance(expr, Bin):
        a = eval_expr(expr.left, env)
        b = eval_expr(expr.right, env)
        if expr.op == "add":
            return (a + b) % WORD
        if expr.op == "sub":
            return a - b if a >= b else 0
        if expr.op == "mul":
            return (a * b) % WORD
        if expr.op == "eq":
            return 1 if a == b else 0
        if expr.op == "lt":
            return 1 if a < b else 0
        if expr.op == "and":
            return 1 if a != 0 and b != 0 else 0
        if expr.op == "or":
            return 1 if a != 0 or b != 0 else 0
    if isinstance(expr, Not):
        return 1 if eval_expr(expr.inner, env) == 0 else 0
    raise TypeError(f"not an expression: {expr!r}")


def _run_statements(env: _CallEnv, code: ContractCode, gas_limit: int) -> None:
    """Execute a contract body, charging gas as it goes; raises _Revert/_OutOfGas."""
    exe = env.exe
    for stmt in code.statements:
        exe.gas_used += 1
        if exe.gas_used > gas_limit:
            raise _OutOfGas()
        if isinstance(stmt, Require):
            if eval_expr(stmt.cond, env) == 0:
                raise _Revert()
        elif isinstance(stmt, PauseGuard):
            if env.sload(slot_bytes(eval_expr(stmt.key, env))) != 0:
                raise _Revert()
        elif isinstance(stmt, SetSlot):
            key = slot_bytes(eval_expr(stmt.key, env))
            value = slot_bytes(eval_expr(stmt.value, env))
            env.exe.write_slot(env.self_addr, key, value)
        elif isinstance(stmt, Pay):
            to = Address.from_int(eval_expr(stmt.to, env))
            amount = eval_expr(stmt.amount, env)
            balance = env.exe.read_balance(env.self_addr)
            env.exe.read_balance(to)
            if amount > balance:
                raise _Revert()
            env.exe.transfer(env.self_addr, to, amount)
        else:
            raise TypeError(f"not a statement: {stmt!r}")


def _fresh_address(sender: Address, nonce: int) -> Address:
    digest = hashlib.sha256(bytes(sender) + nonce.to_bytes(8, "big")).digest()
    return Address(digest[:20])


def _balance_deltas(pre: WorldState, exe: _Execution) -> Dict[Address, int]:
    deltas: Dict[Address, int] = {}
    for addr, balance in exe.balances.items():
        delta = balance - pre.balance_of(addr)
        if delta != 0:
            deltas[addr] = delta
    return deltas


def execute_transaction(state: WorldState, tx: AnyTransaction, ctx: BlockContext) -> SimulationResult:
    """Run one transaction against a state snapshot; never mutates the input.

    Regular transactions must match the sender nonce, afford
    value + gas_limit * max_fee, and bid at least the base fee; otherwise
    PreconditionFailed is raised (the tx is unexecutable, which is different
    from a revert). On revert every effect is rolled back except the nonce
    bump and the gas charge. Deposits skip all precondition checks, mint
    their value, and pay no fee; a reverted deposit keeps the mint with the
    deposit's sender.
    """
    if isinstance(tx, DepositTransaction):
        return _execute_deposit(state, tx, ctx)
    return _execute_signed(state, tx, ctx)


def _execute_signed(state: WorldState, tx: SignedTransaction, ctx: BlockContext) -> SimulationResult:
    sender_acct = state.account(tx.sender)
    if tx.nonce < sender_acct.nonce:
        raise PreconditionFailed(PreconditionFailed.NONCE_TOO_LOW, f"account nonce {sender_acct.nonce}")
    if tx.nonce > sender_acct.nonce:
        raise PreconditionFailed(PreconditionFailed.NONCE_TOO_HIGH, f"account nonce {sender_acct.nonce}")
    if sender_acct.balance < tx.value + tx.gas_limit * tx.max_fee:
        raise PreconditionFailed(
            PreconditionFailed.INSUFFICIENT_BALANCE,
            f"balance {sender_acct.balance} < {tx.value + tx.gas_limit * tx.max_fee}",
        )
    if tx.max_fee < ctx.base_fee:
        raise PreconditionFailed(PreconditionFailed.FEE_BELOW_BASE, f"base fee {ctx.base_fee}")

    effective_price = ctx.base_fee + min(tx.priority_fee, tx.max_fee - ctx.base_fee)
    recipient = tx.recipient if tx.recipient is not None else _fresh_address(tx.sender, tx.nonce)

    exe = _Execution(state)
    exe.write_nonce(tx.sender, exe.read_nonce(tx.sender) + 1)
    status = TxStatus.SUCCESS
    try:
        exe.transfer(tx.sender, recipient, tx.value)
        code = exe.read_code(recipient)
        if code is not None:
            env = _CallEnv(exe, recipient, tx.sender, tx.value, tx.data)
            _run_statements(env, code, tx.gas_limit)
    except _Revert:
        status = TxStatus.REVERT
    except _OutOfGas:
        status = TxStatus.REVERT
        exe.gas_used = tx.gas_limit

    gas_used = exe.gas_used
    if status is TxStatus.REVERT:
        # Keep the read trace, discard the effects: only the nonce bump and
        # the gas charge survive a revert, so only they count as writes.
        reads = exe.reads
        exe = _Execution(state)
        exe.reads = reads
        exe.write_nonce(tx.sender, exe.read_nonce(tx.sender) + 1)

    fee = gas_used * effective_price
    tip = gas_used * (effective_price - ctx.base_fee)
    exe.write_balance(tx.sender, exe.read_balance(tx.sender) - fee)
    if tip:
        exe.write_balance(ctx.fee_recipient, exe.read_balance(ctx.fee_recipient) + tip)

    return SimulationResult(
        tx_id=tx_id(tx),
        status=status,
        gas_used=gas_used,
        reads=frozenset(exe.reads),
        writes=frozenset(exe.writes),
        balance_deltas=_balance_deltas(state, exe),
        post_state=exe.post_state(),
    )


def _execute_deposit(state: WorldState, dep: DepositTransaction, ctx: BlockContext) -> SimulationResult:
    exe = _Execution(state)
    status = TxStatus.SUCCESS
    # The deposit's value is minted: it enters at the sender before the call.
    exe.write_balance(dep.sender, exe.read_balance(dep.sender) + dep.value)
    try:
        exe.transfer(dep.sender, dep.recipient, dep.value)
        code = exe.read_code(dep.recipient)
        if code is not None:
            env = _CallEnv(exe, dep.recipient, dep.sender, dep.value, dep.data)
            _run_statements(env, code, dep.gas_limit)
    except _Revert:
        status = TxStatus.REVERT
    except _OutOfGas:
        status = TxStatus.REVERT
        exe.gas_used = dep.gas_limit

    gas_used = exe.gas_used
    if status is TxStatus.REVERT:
        reads = exe.reads
        exe = _Execution(state)
        exe.reads = reads
        exe.write_balance(dep.sender, exe.read_balance(dep.sender) + dep.value)

    return SimulationResult(
        tx_id=tx_id(dep),
        status=status,
        gas_used=gas_used,
        reads=frozenset(exe.reads),
        writes=frozenset(exe.writes),
        balance_deltas=_balance_deltas(state, exe),
        post_state=exe.post_state(),
    )


# ---------------------------------------------------------------------------
# State commitment and block application
# ---------------------------------------------------------------------------

def code_hash(code: Optional[ContractCode]) -> bytes:
    if code is None:
        return bytes(32)
    return hashlib.sha256(bytes(code.admin) + code_text(code).encode("utf-8")).digest()


def state_root(state: WorldState) -> StateRoot:
    """Flat commitment: SHA-256 over per-account digests sorted by address.

    Account digest = SHA-256(address | balance 16 BE | nonce 8 BE | code hash
    | sorted storage pairs). Insertion order never matters; the empty state
    hashes the empty string.
    """
    h = hashlib.sha256()
    for addr in sorted(state.accounts):
        acct = state.accounts[addr]
        ah = hashlib.sha256()
        ah.update(bytes(addr))
        ah.update(acct.balance.to_bytes(16, "big"))
        ah.update(acct.nonce.to_bytes(8, "big"))
        ah.update(code_hash(acct.code))
        for key in sorted(acct.storage):
            ah.update(key)
            ah.update(acct.storage[key])
        h.update(ah.digest())
    return StateRoot(h.digest())


def apply_block(state: WorldState, block: Block, fee_recipient: Address) -> WorldState:
    """Fold every transaction of a block (deposits first) into a new state."""
    ctx = BlockContext(base_fee=block.base_fee, timestamp=block.timestamp, fee_recipient=fee_recipient)
    current = state
    index = 0
    for tx in list(block.deposits) + list(block.transactions):
        try:
            result = execute_transaction(current, tx, ctx)
        except PreconditionFailed as exc:
            raise InvalidBlock(index, exc.reason) from exc
        current = result.post_state
        index += 1
    return current
