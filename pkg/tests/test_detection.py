import random

import pytest

from helpers import (
    ADMIN,
    ATTACKER,
    COUNTER,
    LEDGERBOOK,
    VAULT,
    addr,
    ctx,
    exploit_tx,
    generator_candidates,
    generator_world,
    sequential_oracle,
    solvency_invariant,
    tx,
    unpause_tx,
    vault_state,
)
from rollupsim.core import tx_hash
from rollupsim.detection import (
    CandidateSet,
    InvariantDetector,
    InvariantSet,
    UnauthorizedInvariant,
    detect,
    dependency_edges,
    hybrid_detect,
)
from rollupsim.vm import Account, execute_transaction, make_state


def invariant_set(state, invariants):
    s = InvariantSet()
    for inv in invariants:
        s.register(inv, state)
    return s


@pytest.fixture
def detector():
    return InvariantDetector()


def vault_invariants(state):
    return invariant_set(state, [solvency_invariant()])


class TestDetect:
    def test_reverted_simulation_is_benign(self, detector):
        state = vault_state(paused=True)
        sim = execute_transaction(state, exploit_tx(), ctx())
        verdict = detect(detector, sim, state, vault_invariants(state))
        assert not verdict.malicious and verdict.victims == ()

    def test_violation_reports_victim_and_damage(self, detector):
        state = vault_state(paused=False)
        sim = execute_transaction(state, exploit_tx(), ctx())
        verdict = detect(detector, sim, state, vault_invariants(state))
        assert verdict.malicious
        assert verdict.victims == (VAULT,)
        assert verdict.violated == ("vault-solvent",)
        assert verdict.damage_estimate == 100  # pre 100 -> post 0

    def test_untouched_contracts_not_evaluated(self, detector):
        state = vault_state(paused=False)
        sim = execute_transaction(state, tx(ATTACKER, 0, addr(0x44), value=3), ctx())
        verdict = detect(detector, sim, state, vault_invariants(state))
        assert not verdict.malicious

    def test_registration_requires_admin(self):
        state = vault_state()
        bogus = solvency_invariant(admin=ATTACKER)
        with pytest.raises(UnauthorizedInvariant):
            invariant_set(state, [bogus])


class TestDependencyEdges:
    def test_pause_fixture_exact_edge(self):
        state = vault_state(paused=True)
        sims = [
            execute_transaction(state, unpause_tx(), ctx()),
            execute_transaction(state, exploit_tx(), ctx()),
        ]
        assert dependency_edges(sims) == {(0, 1)}

    def test_disjoint_transfers_no_edges(self):
        state = make_state({addr(i): Account(balance=1000) for i in (1, 2, 3)})
        sims = [execute_transaction(state, tx(addr(i), 0, addr(10 + i), value=1), ctx()) for i in (1, 2, 3)]
        assert dependency_edges(sims) == set()


class TestHybridFixture:
    def test_exploit_alone_is_benign(self, detector):
        state = vault_state(paused=True)
        outcome = hybrid_detect(
            CandidateSet((exploit_tx(),), state), vault_invariants(state), detector, ctx()
        )
        assert outcome.benign == [exploit_tx()]
        assert outcome.malicious == [] and outcome.deferred == []

    def test_unpause_then_exploit_flags_the_exploit(self, detector):
        state = vault_state(paused=True)
        a, b = unpause_tx(), exploit_tx()
        outcome = hybrid_detect(CandidateSet((a, b), state), vault_invariants(state), detector, ctx())
        assert outcome.benign == [a]
        assert len(outcome.malicious) == 1
        flagged, verdict, sim = outcome.malicious[0]
        assert flagged == b
        assert verdict.victims == (VAULT,)
        assert verdict.damage_estimate == 100
        assert outcome.stats.sequential_verdicts == 1  # b re-simulated in context

    def test_disjoint_transfers_zero_budget_all_parallel(self, detector):
        state = make_state({addr(i): Account(balance=1000) for i in (1, 2, 3)})
        txs = tuple(tx(addr(i), 0, addr(10 + i), value=1) for i in (1, 2, 3))
        outcome = hybrid_detect(CandidateSet(txs, state, budget=0), InvariantSet(), detector, ctx())
        assert outcome.benign == list(txs)
        assert outcome.deferred == []
        assert outcome.stats.contextual_sims == 0

    def test_budget_exhaustion_defers_dependents(self, detector):
        state = vault_state(paused=True)
        a, b = unpause_tx(), exploit_tx()
        outcome = hybrid_detect(
            CandidateSet((a, b), state, budget=0), vault_invariants(state), detector, ctx()
        )
        assert outcome.benign == [a]
        assert outcome.deferred == [b]
        assert outcome.malicious == []

    def test_precondition_failure_defers(self, detector):
        state = make_state({addr(1): Account(balance=1000)})
        gapped = tx(addr(1), 5, addr(2))
        outcome = hybrid_detect(CandidateSet((gapped,), state), InvariantSet(), detector, ctx())
        assert outcome.deferred == [gapped]

    def test_same_sender_nonce_chain_includes_both(self, detector):
        state = make_state({addr(1): Account(balance=1000)})
        first, second = tx(addr(1), 0, addr(2), value=1), tx(addr(1), 1, addr(3), value=1)
        outcome = hybrid_detect(CandidateSet((first, second), state), InvariantSet(), detector, ctx())
        assert outcome.benign == [first, second]
        assert outcome.deferred == []

    def test_funding_predecessor_enables_poor_sender(self, detector):
        state = make_state({addr(1): Account(balance=1000), addr(2): Account(balance=0)})
        fund = tx(addr(1), 0, addr(2), value=500)
        spend = tx(addr(2), 0, addr(3), value=100)
        outcome = hybrid_detect(CandidateSet((fund, spend), state), InvariantSet(), detector, ctx())
        assert outcome.benign == [fund, spend]

    def test_malicious_predecessor_excluded_from_context(self, detector):
        # Two drains against an unpaused vault: both judged on the tip state,
        # both flagged; the second one must not see a drained vault (which
        # would make it a harmless revert).
        state = vault_state(paused=False)
        b1 = exploit_tx(nonce=0)
        b2 = tx(addr(0x99), 0, VAULT)
        state = make_state({**state.accounts, addr(0x99): Account(balance=1000)})
        outcome = hybrid_detect(CandidateSet((b1, b2), state), vault_invariants(state), detector, ctx())
        flagged = [t for t, _, _ in outcome.malicious]
        assert flagged == [b1, b2]
        assert outcome.stats.contextual_sims == 0  # no benign influence anywhere

    def test_blind_writers_judged_through_invariant_reads(self, detector):
        # Neither write reads the other's slot; only the ledger invariant
        # couples them. The second write must be judged in context.
        state, invariants = generator_world(random.Random(0))
        invs = invariant_set(state, invariants)
        w1 = tx(addr(1), 0, LEDGERBOOK, data=b"\x01", value=8)
        w2 = tx(addr(2), 0, LEDGERBOOK, data=b"\x02", value=8)
        state = make_state(
            {**state.accounts, addr(1): Account(balance=5000), addr(2): Account(balance=5000), LEDGERBOOK: state.account(LEDGERBOOK)}
        )
        outcome = hybrid_detect(CandidateSet((w1, w2), state), invs, detector, ctx())
        benign_o, malicious_o, deferred_o, _ = sequential_oracle(
            [w1, w2], state, invs, detector, ctx()
        )
        assert outcome.benign == benign_o
        assert [t for t, _, _ in outcome.malicious] == [t for t, _ in malicious_o]
        assert outcome.deferred == deferred_o
        # 8 + 8 >= 15: second writer flagged only when first's effect is seen.
        assert [t for t, _, _ in outcome.malicious] == [w2]

    def test_preapproved_skips_detector_but_not_execution(self, detector):
        state = vault_state(paused=False)
        drain = exploit_tx()
        outcome = hybrid_detect(
            CandidateSet((drain,), state),
            vault_invariants(state),
            detector,
            ctx(),
            preapproved=frozenset({tx_hash(drain)}),
        )
        assert outcome.benign == [drain]
        gapped = tx(ATTACKER, 7, VAULT)
        outcome = hybrid_detect(
            CandidateSet((gapped,), state),
            vault_invariants(state),
            detector,
            ctx(),
            preapproved=frozenset({tx_hash(gapped)}),
        )
        assert outcome.deferred == [gapped]


def outcome_signature(outcome):
    return (
        [tx_hash(t) for t in outcome.benign],
        [(tx_hash(t), v) for t, v, _ in outcome.malicious],
        [tx_hash(t) for t in outcome.deferred],
    )


class TestOracleEquivalence:
    def test_matches_sequential_oracle_on_generated_sets(self, detector):
        rng = random.Random(20240)
        mismatches = 0
        for _ in range(300):
            state, invariants = generator_world(rng)
            invs = invariant_set(state, invariants)
            txs = generator_candidates(rng, state)
            outcome = hybrid_detect(CandidateSet(tuple(txs), state, budget=None), invs, detector, ctx())
            benign_o, malicious_o, deferred_o, _ = sequential_oracle(txs, state, invs, detector, ctx())
            same = (
                outcome.benign == benign_o
                and [(t, v) for t, v, _ in outcome.malicious] == malicious_o
                and outcome.deferred == deferred_o
            )
            mismatches += 0 if same else 1
        assert mismatches == 0

    def test_worker_count_never_changes_the_outcome(self, detector):
        rng = random.Random(555)
        for _ in range(40):
            state, invariants = generator_world(rng)
            invs = invariant_set(state, invariants)
            txs = tuple(generator_candidates(rng, state))
            results = [
                outcome_signature(
                    hybrid_detect(CandidateSet(txs, state, budget=4), invs, detector, ctx(), workers=w)
                )
                for w in (1, 2, 8)
            ]
            assert results[0] == results[1] == results[2]

    def test_finite_budget_equals_oracle_on_the_undeferred(self, detector):
        # Whatever a budget-limited round classifies must match the oracle run
        # on the same candidates with the round's deferrals removed.
        rng = random.Random(808)
        for _ in range(150):
            state, invariants = generator_world(rng)
            invs = invariant_set(state, invariants)
            txs = generator_candidates(rng, state)
            budget = rng.randrange(0, 4)
            outcome = hybrid_detect(CandidateSet(tuple(txs), state, budget=budget), invs, detector, ctx())
            deferred = set(map(id, outcome.deferred))
            kept = [t for t in txs if id(t) not in deferred]
            benign_o, malicious_o, deferred_o, _ = sequential_oracle(kept, state, invs, detector, ctx())
            assert deferred_o == []
            assert outcome.benign == benign_o
            assert [(t, v) for t, v, _ in outcome.malicious] == malicious_o

    def test_benign_order_preserved(self, detector):
        rng = random.Random(99)
        for _ in range(50):
            state, invariants = generator_world(rng)
            invs = invariant_set(state, invariants)
            txs = generator_candidates(rng, state)
            outcome = hybrid_detect(CandidateSet(tuple(txs), state, budget=None), invs, detector, ctx())
            positions = [txs.index(t) for t in outcome.benign]
            assert positions == sorted(positions)
