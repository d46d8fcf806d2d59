import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbnfirewall import consensus
from dbnfirewall.consensus import Decision, TrustLedger
from dbnfirewall.errors import EmptyVerdictsError, UnknownNodeError


def test_weighted_verdict_examples():
    assert consensus.weighted_verdict(TrustLedger({"A": 1, "B": 1}), {"A": 0.2, "B": 0.8}) == pytest.approx(0.5)
    assert consensus.weighted_verdict(TrustLedger({"A": 0.8, "B": 0.2}), {"A": 1.0, "B": 0.0}) == pytest.approx(0.8)
    assert consensus.weighted_verdict(TrustLedger({"A": 0.3}), [("A", 0.37)]) == 0.37


def test_weighted_verdict_errors():
    with pytest.raises(EmptyVerdictsError):
        consensus.weighted_verdict(TrustLedger({"A": 1}), [])
    with pytest.raises(UnknownNodeError):
        consensus.weighted_verdict(TrustLedger({"A": 1}), {"Z": 0.5})


trusts = st.floats(0.01, 1.0)
probs = st.floats(0.0, 1.0)


@settings(max_examples=200)
@given(st.lists(st.tuples(trusts, probs), min_size=1, max_size=12))
def test_weighted_verdict_bounded(pairs):
    ledger = TrustLedger({f"n{i}": t for i, (t, _) in enumerate(pairs)})
    verdicts = [(f"n{i}", p) for i, (_, p) in enumerate(pairs)]
    m = consensus.weighted_verdict(ledger, verdicts)
    assert min(p for _, p in pairs) <= m <= max(p for _, p in pairs)


@settings(max_examples=100)
@given(trusts, st.lists(probs, min_size=1, max_size=12))
def test_equal_trust_is_arithmetic_mean(t, ps):
    ledger = TrustLedger({f"n{i}": t for i in range(len(ps))})
    m = consensus.weighted_verdict(ledger, [(f"n{i}", p) for i, p in enumerate(ps)])
    assert abs(m - float(np.mean(ps))) < 1e-12


def test_update_trust_examples():
    led = TrustLedger({"A": 1.0, "B": 1.0, "C": 0.5})
    new = consensus.update_trust(led, {"A": 0.0, "B": 1.0}, 0.0)
    assert new["A"] == 1.0
    assert new["B"] == pytest.approx(0.9)
    partial = consensus.update_trust(led, {"B": 1.0}, 0.4)
    assert partial["B"] == pytest.approx(0.9 + 0.1 * 0.4)
    assert new["C"] == 0.5
    low = consensus.update_trust(TrustLedger({"A": 0.01}), {"A": 1.0}, 0.0)
    assert low["A"] == 0.01
    with pytest.raises(UnknownNodeError):
        consensus.update_trust(led, {"Q": 0.1}, 0.1)


def test_ledger_validation():
    with pytest.raises(ValueError):
        TrustLedger({"A": 1.5})
    with pytest.raises(ValueError):
        TrustLedger({"A": 0.001})
    assert TrustLedger.fresh(["b", "a"]).trust == {"a": 1.0, "b": 1.0}


def test_fixed_point_converges_to_one():
    led = TrustLedger({"A": 0.2})
    for _ in range(300):
        led = consensus.update_trust(led, {"A": 0.6}, 0.6)
    assert led["A"] == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=50)
@given(st.floats(0.05, 1.0), st.floats(0.01, 1.0))
def test_adversarial_decay_bound(d, t0):
    led = TrustLedger({"A": t0})
    for _ in range(400):
        led = consensus.update_trust(led, {"A": d}, 0.0)
    assert led["A"] <= max(0.01, 1 - d) + 1e-9


@settings(max_examples=50)
@given(st.lists(st.tuples(trusts, probs), min_size=2, max_size=8), st.randoms())
def test_update_order_independent(pairs, rnd):
    ledger = TrustLedger({f"n{i}": t for i, (t, _) in enumerate(pairs)})
    verdicts = [(f"n{i}", p) for i, (_, p) in enumerate(pairs)]
    shuffled = list(verdicts)
    rnd.shuffle(shuffled)
    assert consensus.update_trust(ledger, verdicts, 0.5) == consensus.update_trust(ledger, shuffled, 0.5)


def test_decide():
    assert consensus.decide(0.85) is Decision.BLOCK
    assert consensus.decide(0.49, 0.5) is Decision.ALLOW
    assert consensus.decide(0.5, 0.5) is Decision.BLOCK
