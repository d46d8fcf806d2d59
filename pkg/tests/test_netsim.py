from dataclasses import replace

import numpy as np
import pytest

from dbnfirewall import chain, consensus, dbn, netsim
from dbnfirewall.consensus import Decision
from dbnfirewall.dbn import DbnArch
from dbnfirewall.errors import EmptyVerdictsError
from dbnfirewall.netsim import FaultModel, FileEvent, NetworkConfig, Node

ARCH = DbnArch((256, 32, 32), pretrain_epochs=5, finetune_epochs=10, rng_seed=4)


@pytest.fixture(scope="module")
def corpus():
    from dbnfirewall import dataset
    return dataset.synthetic_corpus(150, seed=3, side=16)


def const_network(probs, difficulty=4, **kw):
    """Network whose nodes report fixed probabilities (engine bypassed)."""
    model = dbn.assemble(DbnArch((256, 4)), [dbn.RbmParams.zeros(256, 4)])
    nodes = [Node(netsim.node_name(i), bytes([i + 1]) * 32, model, FaultModel("constant", p), i)
             for i, p in enumerate(probs)]
    return netsim.assemble_network(NetworkConfig(len(probs), difficulty, **kw), nodes)


def test_fault_parsing():
    assert FaultModel.parse("inverter").kind == "inverter"
    assert FaultModel.parse("constant(0.25)") == FaultModel("constant", 0.25)
    assert str(FaultModel.parse("constant( 1 )")) == "constant(1)"
    with pytest.raises(ValueError):
        FaultModel.parse("constant(2)")
    with pytest.raises(ValueError):
        FaultModel.parse("evil")


def test_round_arithmetic():
    net = const_network([0.9, 0.8, 0.85])
    r = netsim.broadcast_file(net, b"payload")
    assert r.mean == pytest.approx(0.85)
    assert r.decision is Decision.BLOCK
    assert len([t for t in r.block.txs if isinstance(t, chain.VerdictTx)]) == 3
    assert net.chain.verify()


def test_all_zero_round_keeps_trust():
    net = const_network([0.0, 0.0, 0.0])
    r = netsim.broadcast_file(net, b"x")
    assert r.mean == 0.0 and r.decision is Decision.ALLOW
    assert r.trust_after == r.trust_before == {n: 1.0 for n in r.trust_after}


def test_abstention_excluded():
    net = const_network([0.2, 0.4, 0.9])
    net.nodes[2] = replace(net.nodes[2], fault=FaultModel("offline"))
    r = netsim.broadcast_file(net, b"x")
    assert r.abstained == ["node-02"]
    assert r.mean == pytest.approx(0.3)
    assert r.trust_after["node-02"] == 1.0
    assert "node-02" not in r.probabilities


def test_everyone_abstains():
    net = const_network([0.5])
    net.nodes[0] = replace(net.nodes[0], fault=FaultModel("offline"))
    with pytest.raises(EmptyVerdictsError):
        netsim.broadcast_file(net, b"x")


def test_single_node_consensus_is_own_probability(corpus):
    X, y = corpus
    net = netsim.provision(NetworkConfig(1, 4, seed=1), ARCH, X, y)
    from dbnfirewall import dataset, imgcodec
    data = dataset.synthetic_file(1, 99)
    r = netsim.broadcast_file(net, data)
    own = dbn.predict_malicious(net.nodes[0].model, imgcodec.file_bytes_to_vector(data, 16))
    assert r.mean == own


def test_nodes_get_unique_engines(corpus):
    X, y = corpus
    net = netsim.provision(NetworkConfig(2, 4, seed=1), ARCH, X, y)
    a, b = (n.model.digest() for n in net.nodes)
    assert a != b
    assert net.nodes[0].secret_key != net.nodes[1].secret_key
    again = netsim.provision(NetworkConfig(2, 4, seed=1), ARCH, X, y)
    assert [n.model.digest() for n in again.nodes] == [a, b]
    assert again.keys == net.keys
    assert again.chain.blocks == net.chain.blocks


def test_byzantine_trust_drops(corpus):
    X, y = corpus
    cfg = NetworkConfig(4, 4, seed=2, faults=((3, FaultModel("inverter")),))
    net = netsim.provision(cfg, ARCH, X, y)
    from dbnfirewall import dataset
    r = netsim.broadcast_file(net, dataset.synthetic_file(1, 5))
    assert r.trust_after["node-03"] < r.trust_before["node-03"]
    honest = [r.probabilities[f"node-0{i}"] for i in range(3)]
    assert max(honest) - min(honest) < 0.2


def test_random_fault_deterministic():
    net1 = const_network([0.5, 0.5])
    net1.nodes[1] = replace(net1.nodes[1], fault=FaultModel("random"))
    net2 = const_network([0.5, 0.5])
    net2.nodes[1] = replace(net2.nodes[1], fault=FaultModel("random"))
    a = [netsim.broadcast_file(net1, b"f").probabilities["node-01"] for _ in range(3)]
    b = [netsim.broadcast_file(net2, b"f").probabilities["node-01"] for _ in range(3)]
    assert a == b and len(set(a)) == 3


def test_empty_scenario():
    net = const_network([0.1, 0.2])
    tr = netsim.run_scenario(net, [])
    assert tr.rounds == [] and tr.chain_length == 1
    assert tr.lines() == [f"chain\t1\t{netsim.chain_digest(net.chain.blocks)}"]


def test_scenario_deterministic_and_auditable():
    def run():
        net = const_network([0.9, 0.7, 0.1], difficulty=6)
        events = [FileEvent("synthetic", label=i % 2, seed=i) for i in range(6)]
        return net, netsim.run_scenario(net, events)

    net, tr = run()
    _, tr2 = run()
    assert tr.text() == tr2.text()
    assert net.chain.verify()
    ids = [n.node_id for n in net.nodes]
    for r in tr.rounds:
        assert netsim.audit_round(net.chain.blocks, r.round, ids) == r.mean
        verdicts = [t for t in net.chain.blocks[r.round + 1].txs if isinstance(t, chain.VerdictTx)]
        assert len(verdicts) == 3


def test_transcript_format():
    net = const_network([0.25, 0.75])
    tr = netsim.run_scenario(net, [FileEvent("synthetic", label=0, seed=1)])
    lines = tr.lines()
    assert lines[0].startswith("round\t0\tfile\t") and len(lines[0].split("\t")[3]) == 64
    assert lines[1:3] == ["verdict\tnode-00\t0.2500", "verdict\tnode-01\t0.7500"]
    assert lines[3] == "mean\t0.5000\tBLOCK"
    assert lines[4] == "trust\tnode-00=0.9750\tnode-01=0.9750"


def test_parse_scenario():
    events = netsim.parse_scenario("# comment\nfile a/b.bin\n\nsynthetic malicious 7\n")
    assert events == [FileEvent("file", path="a/b.bin"), FileEvent("synthetic", label=1, seed=7)]
    for bad in ("synthetic spam 1", "synthetic benign x", "upload foo", "file"):
        with pytest.raises(ValueError):
            netsim.parse_scenario(bad)


def test_save_and_load_network(tmp_path, corpus):
    X, y = corpus
    cfg = NetworkConfig(2, 4, seed=3, faults=((1, FaultModel("constant", 0.5)),))
    net = netsim.provision(cfg, ARCH, X, y)
    netsim.save_network(net, tmp_path)
    loaded = netsim.load_network(NetworkConfig(1, 4, seed=3), tmp_path)
    assert [n.node_id for n in loaded.nodes] == ["node-00", "node-01"]
    assert loaded.keys == net.keys
    assert loaded.nodes[1].fault == FaultModel("constant", 0.5)
    assert loaded.nodes[0].model == net.nodes[0].model
    assert chain.verify_chain_bytes((tmp_path / "chain.bin").read_bytes(), net.keys, 4).ok
