"""In-process peer-to-peer firewall network.

Each node owns a uniquely seeded detection engine and an HMAC key. A broadcast
file is scored by every node, the verdicts are mined into one block together
with the post-round trust snapshot, and the trust-weighted mean decides
ALLOW/BLOCK.
"""
from __future__ import annotations

import hashlib
import logging
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import chain as chain_mod
from . import consensus, dataset, dbn, imgcodec
from .chain import Chain, TrustSnapshotTx, VerdictTx
from .consensus import Decision, TrustLedger
from .dbn import DbnArch, DbnModel
from .errors import EmptyVerdictsError, FirewallError, IoFailureError

log = logging.getLogger(__name__)

FAULT_RE = re.compile(r"^(honest|inverter|random|offline|constant\(\s*([0-9.eE+-]+)\s*\))$")


@dataclass(frozen=True)
class FaultModel:
    """How a node distorts its engine output: honest, inverter, constant(c), random, or offline (abstains)."""

    kind: str = "honest"
    value: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "FaultModel":
        m = FAULT_RE.match(text.strip())
        if not m:
            raise ValueError(f"unknown fault model {text!r}")
        if m.group(2) is not None:
            c = float(m.group(2))
            if not 0.0 <= c <= 1.0:
                raise ValueError("constant fault value must lie in [0, 1]")
            return cls("constant", c)
        return cls(m.group(1))

    def __str__(self):
        return f"constant({self.value:g})" if self.kind == "constant" else self.kind


@dataclass(frozen=True)
class NetworkConfig:
    n_nodes: int = 10
    difficulty: int = chain_mod.DEFAULT_DIFFICULTY
    threshold: float = 0.5
    alpha: float = consensus.DEFAULT_ALPHA
    t_min: float = consensus.DEFAULT_FLOOR
    seed: int = 0
    faults: tuple[tuple[int, FaultModel], ...] = ()

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if self.difficulty < 0:
            raise ValueError("difficulty must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        for idx, _ in self.faults:
            if not 0 <= idx < self.n_nodes:
                raise ValueError(f"fault assigned to node index {idx}, network has {self.n_nodes}")

    def fault_for(self, index: int) -> FaultModel:
        return dict(self.faults).get(index, FaultModel())


def node_name(index: int) -> str:
    return f"node-{index:02d}"


@dataclass(frozen=True)
class Node:
    node_id: str
    secret_key: bytes
    model: DbnModel
    fault: FaultModel = field(default_factory=FaultModel)
    index: int = 0

    def score(self, data: bytes, round_no: int, seed: int) -> float:
        """The probability this node reports; raises FirewallError when its engine fails."""
        if self.fault.kind == "offline":
            raise FirewallError(f"{self.node_id} is offline")
        if self.fault.kind == "constant":
            return self.fault.value
        if self.fault.kind == "random":
            return float(np.random.default_rng([seed, self.index, round_no]).random())
        side = imgcodec.side_for_inputs(self.model.n_inputs)
        p = dbn.predict_malicious(self.model, imgcodec.file_bytes_to_vector(data, side))
        return 1.0 - p if self.fault.kind == "inverter" else p


@dataclass
class RoundResult:
    round: int
    file_id: bytes
    probabilities: dict[str, float]
    abstained: list[str]
    mean: float
    decision: Decision
    trust_before: dict[str, float]
    trust_after: dict[str, float]
    block: chain_mod.Block

    def lines(self) -> list[str]:
        out = [f"round\t{self.round}\tfile\t{self.file_id.hex()}"]
        out += [f"verdict\t{n}\t{p:.4f}" for n, p in self.probabilities.items()]
        out += [f"abstain\t{n}" for n in self.abstained]
        out.append(f"mean\t{self.mean:.4f}\t{self.decision.value}")
        out.append("trust\t" + "\t".join(f"{n}={t:.4f}" for n, t in self.trust_after.items()))
        return out


@dataclass
class Network:
    cfg: NetworkConfig
    nodes: list[Node]
    chain: Chain
    ledger: TrustLedger
    round: int = 0

    @property
    def keys(self) -> dict[str, bytes]:
        return {n.node_id: n.secret_key for n in self.nodes}


def _derive_key(seed: int, index: int) -> bytes:
    return np.random.default_rng([seed, index, 0x4B4559]).bytes(32)


def provision(cfg: NetworkConfig, arch: DbnArch, X, y) -> Network:
    """Train one engine per node (seed = base seed + node index) and start a genesis chain."""
    nodes = []
    for i in range(cfg.n_nodes):
        node_arch = replace(arch, rng_seed=arch.rng_seed + i)
        model = dbn.train(node_arch, X, y)
        log.info("provisioned %s (model %s)", node_name(i), model.digest()[:12])
        nodes.append(Node(node_name(i), _derive_key(cfg.seed, i), model, cfg.fault_for(i), i))
    return assemble_network(cfg, nodes)


def assemble_network(cfg: NetworkConfig, nodes: Sequence[Node]) -> Network:
    nodes = list(nodes)
    ids = [n.node_id for n in nodes]
    if len(set(ids)) != len(ids):
        raise ValueError("node ids must be unique")
    shapes = {n.model.n_inputs for n in nodes}
    if len(shapes) > 1:
        raise ValueError("all node models must share one input shape")
    keys = {n.node_id: n.secret_key for n in nodes}
    ledger = TrustLedger.fresh(ids, cfg.alpha, cfg.t_min)
    return Network(cfg, nodes, Chain(cfg.difficulty, keys), ledger)


def file_id_of(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def broadcast_file(net: Network, data: bytes) -> RoundResult:
    """One consensus round for ``data``; mutates ``net`` (chain, trust, round counter)."""
    round_no = net.round
    file_id = file_id_of(data)
    probs: dict[str, float] = {}
    abstained: list[str] = []
    for node in net.nodes:
        try:
            probs[node.node_id] = node.score(data, round_no, net.cfg.seed)
        except FirewallError as exc:
            log.info("%s abstains in round %d: %s", node.node_id, round_no, exc)
            abstained.append(node.node_id)
    if not probs:
        raise EmptyVerdictsError(f"every node abstained in round {round_no}")

    txs = [VerdictTx.signed(file_id, nid, p, round_no, net.keys[nid]) for nid, p in probs.items()]
    before = net.ledger
    mean = consensus.weighted_verdict(before, probs)
    decision = consensus.decide(mean, net.cfg.threshold)
    after = consensus.update_trust(before, probs, mean)
    snapshot = TrustSnapshotTx(round_no, tuple(after.trust.items()))
    block = net.chain.append(txs + [snapshot], timestamp=round_no + 1)

    net.ledger = after
    net.round += 1
    return RoundResult(round_no, file_id, probs, abstained, mean, decision,
                       dict(before.trust), dict(after.trust), block)


def audit_round(blocks: Sequence[chain_mod.Block], round_no: int, node_ids: Sequence[str],
                alpha: float = consensus.DEFAULT_ALPHA, t_min: float = consensus.DEFAULT_FLOOR) -> float:
    """Recompute a round's consensus mean from the chain alone.

    Pre-round trust is the previous round's snapshot, or the initial trust
    for round 0.
    """
    snaps = {s.round: s for s in chain_mod.trust_snapshots(blocks)}
    if round_no == 0:
        ledger = TrustLedger.fresh(node_ids, alpha, t_min)
    else:
        ledger = TrustLedger(snaps[round_no - 1].as_dict(), alpha, t_min)
    verdicts = [(tx.node_id, tx.probability)
                for blk in blocks for tx in blk.txs
                if isinstance(tx, VerdictTx) and tx.round == round_no]
    return consensus.weighted_verdict(ledger, verdicts)


# Scenario scripts: one event per line, `file <path>` or `synthetic <class> <seed>`.

@dataclass(frozen=True)
class FileEvent:
    kind: str  # "file" or "synthetic"
    path: str = ""
    label: int = 0
    seed: int = 0

    def load(self, base_dir: str | os.PathLike = ".") -> bytes:
        if self.kind == "synthetic":
            return dataset.synthetic_file(self.label, self.seed)
        p = Path(self.path)
        if not p.is_absolute():
            p = Path(base_dir) / p
        try:
            return p.read_bytes()
        except OSError as exc:
            raise IoFailureError(f"{p}: {exc}") from exc


def parse_scenario(text: str) -> list[FileEvent]:
    events = []
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, _, rest = line.partition(" ")
        rest = rest.strip()
        if word == "file" and rest:
            events.append(FileEvent("file", path=rest))
        elif word == "synthetic":
            parts = rest.split()
            if len(parts) != 2 or parts[0] not in dataset.LABELS:
                raise ValueError(f"scenario line {n}: expected `synthetic <benign|malicious> <seed>`")
            try:
                seed = int(parts[1])
            except ValueError:
                raise ValueError(f"scenario line {n}: seed must be an integer") from None
            events.append(FileEvent("synthetic", label=dataset.LABELS[parts[0]], seed=seed))
        else:
            raise ValueError(f"scenario line {n}: unrecognised event {line!r}")
    return events


@dataclass
class Transcript:
    rounds: list[RoundResult]
    chain_length: int
    chain_digest: str

    def lines(self) -> list[str]:
        out = []
        for r in self.rounds:
            out += r.lines()
        out.append(f"chain\t{self.chain_length}\t{self.chain_digest}")
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def chain_digest(blocks: Sequence[chain_mod.Block]) -> str:
    return hashlib.sha256(chain_mod.encode_chain(blocks)).hexdigest()


def run_scenario(net: Network, events: Sequence[FileEvent], base_dir: str | os.PathLike = ".") -> Transcript:
    rounds = [broadcast_file(net, ev.load(base_dir)) for ev in events]
    return Transcript(rounds, len(net.chain), chain_digest(net.chain.blocks))


# Provisioned network on disk: one model file per node, keys.tsv, chain.bin.

def save_network(net: Network, out_dir: str | os.PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for node in net.nodes:
        dbn.save_model(node.model, out / f"{node.node_id}.dbn")
        rows.append(f"{node.node_id}\t{node.secret_key.hex()}\t{node.fault}\n")
    (out / "keys.tsv").write_text("".join(rows))
    (out / "chain.bin").write_bytes(chain_mod.encode_chain(net.chain.blocks))


def load_keys(path: str | os.PathLike) -> dict[str, bytes]:
    keys = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailureError(f"{path}: {exc}") from exc
    for line in text.splitlines():
        if line.strip():
            node_id, key_hex = line.split("\t")[:2]
            keys[node_id] = bytes.fromhex(key_hex)
    return keys


def load_network(cfg: NetworkConfig, net_dir: str | os.PathLike) -> Network:
    """Load models and keys written by :func:`save_network`; the chain restarts at genesis.

    Fault models in ``cfg`` override the ones stored with the keys.
    """
    d = Path(net_dir)
    try:
        lines = [l for l in (d / "keys.tsv").read_text().splitlines() if l.strip()]
    except OSError as exc:
        raise IoFailureError(f"{d / 'keys.tsv'}: {exc}") from exc
    nodes = []
    overrides = dict(cfg.faults)
    for i, line in enumerate(lines):
        node_id, key_hex, fault = (line.split("\t") + ["honest"])[:3]
        fm = overrides.get(i, FaultModel.parse(fault))
        nodes.append(Node(node_id, bytes.fromhex(key_hex), dbn.load_model(d / f"{node_id}.dbn"), fm, i))
    return assemble_network(replace(cfg, n_nodes=len(nodes), faults=()), nodes)
