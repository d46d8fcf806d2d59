"""Proof-of-work hash chain carrying HMAC-authenticated verdict transactions.

Serialisation is canonical and fixed-width little-endian so block hashes are
bit-exact: probabilities are stored as their IEEE-754 binary64 bits.
"""
from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import AuthFailureError, ChainFormatError, DuplicateVerdictError

HASH_LEN = 32
ZERO_HASH = bytes(HASH_LEN)
DEFAULT_DIFFICULTY = 12
CHAIN_MAGIC = b"PWC1"

TX_VERDICT = 1
TX_TRUST = 2


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def verdict_message(file_id: bytes, node_id: str, probability: float, round_no: int) -> bytes:
    return file_id + _pack_str(node_id) + struct.pack("<dQ", probability, round_no)


def auth_tag(key: bytes, file_id: bytes, node_id: str, probability: float, round_no: int) -> bytes:
    return hmac.new(key, verdict_message(file_id, node_id, probability, round_no), hashlib.sha256).digest()


@dataclass(frozen=True)
class VerdictTx:
    file_id: bytes
    node_id: str
    probability: float
    round: int
    auth_tag: bytes

    def __post_init__(self):
        if len(self.file_id) != HASH_LEN or len(self.auth_tag) != HASH_LEN:
            raise ValueError("file_id and auth_tag must be 32 bytes")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability {self.probability} outside [0, 1]")
        if self.round < 0:
            raise ValueError("round must be >= 0")

    @classmethod
    def signed(cls, file_id: bytes, node_id: str, probability: float, round_no: int, key: bytes) -> "VerdictTx":
        probability = float(probability)
        return cls(file_id, node_id, probability, round_no, auth_tag(key, file_id, node_id, probability, round_no))

    def verify(self, key: bytes) -> bool:
        expected = auth_tag(key, self.file_id, self.node_id, self.probability, self.round)
        return hmac.compare_digest(expected, self.auth_tag)

    def encode(self) -> bytes:
        return bytes([TX_VERDICT]) + verdict_message(self.file_id, self.node_id, self.probability, self.round) + self.auth_tag


@dataclass(frozen=True)
class TrustSnapshotTx:
    """Post-round trust weights, recorded so trust evolution is tamper-evident."""

    round: int
    trust: tuple[tuple[str, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "trust", tuple(sorted((str(n), float(t)) for n, t in self.trust)))

    def as_dict(self) -> dict[str, float]:
        return dict(self.trust)

    def encode(self) -> bytes:
        parts = [bytes([TX_TRUST]), struct.pack("<QI", self.round, len(self.trust))]
        for node_id, value in self.trust:
            parts.append(_pack_str(node_id) + struct.pack("<d", value))
        return b"".join(parts)


Tx = VerdictTx | TrustSnapshotTx


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    timestamp: int
    txs: tuple
    nonce: int
    hash: bytes = field(default=ZERO_HASH)

    def header_prefix(self) -> bytes:
        return header_prefix(self.index, self.prev_hash, self.timestamp, self.txs)

    def compute_hash(self) -> bytes:
        return hashlib.sha256(self.header_prefix() + struct.pack("<Q", self.nonce)).digest()

    def encode(self) -> bytes:
        return self.header_prefix() + struct.pack("<Q", self.nonce) + self.hash


def header_prefix(index: int, prev_hash: bytes, timestamp: int, txs: Sequence) -> bytes:
    parts = [struct.pack("<Q", index), prev_hash, struct.pack("<qI", timestamp, len(txs))]
    parts += [tx.encode() for tx in txs]
    return b"".join(parts)


def leading_zero_bits(digest: bytes) -> int:
    value = int.from_bytes(digest, "big")
    return len(digest) * 8 - value.bit_length()


def meets_difficulty(digest: bytes, difficulty: int) -> bool:
    return leading_zero_bits(digest) >= difficulty


def _search_nonce(prefix: bytes, difficulty: int) -> tuple[int, bytes]:
    base = hashlib.sha256(prefix)
    nonce = 0
    while True:
        h = base.copy()
        h.update(struct.pack("<Q", nonce))
        digest = h.digest()
        if meets_difficulty(digest, difficulty):
            return nonce, digest
        nonce += 1


def _mine(index: int, prev_hash: bytes, timestamp: int, txs: Sequence, difficulty: int) -> Block:
    txs = tuple(txs)
    nonce, digest = _search_nonce(header_prefix(index, prev_hash, timestamp, txs), difficulty)
    return Block(index, prev_hash, timestamp, txs, nonce, digest)


def genesis(difficulty: int = DEFAULT_DIFFICULTY) -> Block:
    return _mine(0, ZERO_HASH, 0, (), difficulty)


def _check_auth(txs: Sequence, keys: Mapping[str, bytes]) -> str | None:
    for tx in txs:
        if isinstance(tx, VerdictTx):
            key = keys.get(tx.node_id)
            if key is None or not tx.verify(key):
                return tx.node_id
    return None


def mine_block(
    prev: Block,
    txs: Sequence,
    difficulty: int,
    keys: Mapping[str, bytes] | None = None,
    timestamp: int | None = None,
) -> Block:
    """Mine the successor of ``prev``; nonces are tried in ascending order from 0.

    When ``keys`` is given every verdict's tag must verify under its node key.
    ``timestamp`` defaults to the logical clock ``prev.timestamp + 1``.
    """
    if difficulty < 0:
        raise ValueError("difficulty must be >= 0")
    if keys is not None:
        bad = _check_auth(txs, keys)
        if bad is not None:
            raise AuthFailureError(f"verdict from {bad!r} does not authenticate")
    if timestamp is None:
        timestamp = prev.timestamp + 1
    return _mine(prev.index + 1, prev.hash, timestamp, txs, difficulty)


@dataclass(frozen=True)
class ChainCheck:
    ok: bool
    first_bad_index: int | None = None
    reason: str = ""

    def __bool__(self):
        return self.ok


def verify_chain(
    blocks: Sequence[Block],
    keys: Mapping[str, bytes] | None,
    difficulty: int = DEFAULT_DIFFICULTY,
) -> ChainCheck:
    """Recompute every hash, the difficulty rule, the links and (with ``keys``) every tag."""
    prev_hash = ZERO_HASH
    for i, blk in enumerate(blocks):
        if blk.index != i:
            return ChainCheck(False, i, "index out of sequence")
        if blk.prev_hash != prev_hash:
            return ChainCheck(False, i, "prev_hash does not link")
        if blk.compute_hash() != blk.hash:
            return ChainCheck(False, i, "hash does not match contents")
        if not meets_difficulty(blk.hash, difficulty):
            return ChainCheck(False, i, "hash misses difficulty target")
        if keys is not None:
            bad = _check_auth(blk.txs, keys)
            if bad is not None:
                return ChainCheck(False, i, f"verdict from {bad!r} does not authenticate")
        prev_hash = blk.hash
    return ChainCheck(True)


def query_verdicts(blocks: Sequence[Block], file_id: bytes) -> list[VerdictTx]:
    return [tx for blk in blocks for tx in blk.txs if isinstance(tx, VerdictTx) and tx.file_id == file_id]


def trust_snapshots(blocks: Sequence[Block]) -> list[TrustSnapshotTx]:
    return [tx for blk in blocks for tx in blk.txs if isinstance(tx, TrustSnapshotTx)]


class Chain:
    """Append-only chain with a single-writer contract.

    Rejects a second verdict for the same (file, node, round) at append time.
    """

    def __init__(self, difficulty: int = DEFAULT_DIFFICULTY, keys: Mapping[str, bytes] | None = None, blocks=None):
        self.difficulty = difficulty
        self.keys = dict(keys or {})
        self.blocks: list[Block] = list(blocks) if blocks else [genesis(difficulty)]
        self._seen = {
            (tx.file_id, tx.node_id, tx.round)
            for blk in self.blocks
            for tx in blk.txs
            if isinstance(tx, VerdictTx)
        }

    def __len__(self):
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    def append(self, txs: Sequence, timestamp: int | None = None) -> Block:
        fresh = set()
        for tx in txs:
            if isinstance(tx, VerdictTx):
                ident = (tx.file_id, tx.node_id, tx.round)
                if ident in self._seen or ident in fresh:
                    raise DuplicateVerdictError(
                        f"{tx.node_id} already reported on {tx.file_id.hex()[:12]} in round {tx.round}"
                    )
                fresh.add(ident)
        blk = mine_block(self.tip, txs, self.difficulty, self.keys, timestamp)
        self.blocks.append(blk)
        self._seen |= fresh
        return blk

    def verify(self) -> ChainCheck:
        return verify_chain(self.blocks, self.keys, self.difficulty)

    def query(self, file_id: bytes) -> list[VerdictTx]:
        return query_verdicts(self.blocks, file_id)


# Binary log: magic, then per block a u32 record length followed by the
# canonical serialisation (header, txs, nonce) and the stored 32-byte hash.

def encode_chain(blocks: Sequence[Block]) -> bytes:
    parts = [CHAIN_MAGIC]
    for blk in blocks:
        rec = blk.encode()
        parts.append(struct.pack("<I", len(rec)) + rec)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes, index: int):
        self.buf = buf
        self.pos = 0
        self.index = index

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ChainFormatError(self.index, "record truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ChainFormatError(self.index, "node id is not UTF-8") from exc


def _decode_tx(r: _Reader):
    (kind,) = r.unpack("<B")
    if kind == TX_VERDICT:
        file_id = r.take(HASH_LEN)
        node_id = r.string()
        probability, round_no = r.unpack("<dQ")
        tag = r.take(HASH_LEN)
        try:
            return VerdictTx(file_id, node_id, probability, round_no, tag)
        except ValueError as exc:
            raise ChainFormatError(r.index, str(exc)) from exc
    if kind == TX_TRUST:
        round_no, count = r.unpack("<QI")
        entries = []
        for _ in range(count):
            node_id = r.string()
            (value,) = r.unpack("<d")
            entries.append((node_id, value))
        return TrustSnapshotTx(round_no, tuple(entries))
    raise ChainFormatError(r.index, f"unknown transaction kind {kind}")


def decode_chain(blob: bytes) -> list[Block]:
    """Parse a chain log; raises ChainFormatError naming the block that failed to decode."""
    if blob[:4] != CHAIN_MAGIC:
        raise ChainFormatError(0, "bad chain magic")
    pos = 4
    blocks = []
    while pos < len(blob):
        index = len(blocks)
        if pos + 4 > len(blob):
            raise ChainFormatError(index, "record length truncated")
        (length,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        r = _Reader(blob[pos : pos + length], index)
        if len(r.buf) != length:
            raise ChainFormatError(index, "record truncated")
        pos += length
        blk_index, = r.unpack("<Q")
        prev_hash = r.take(HASH_LEN)
        timestamp, n_tx = r.unpack("<qI")
        txs = tuple(_decode_tx(r) for _ in range(n_tx))
        (nonce,) = r.unpack("<Q")
        digest = r.take(HASH_LEN)
        if r.pos != len(r.buf):
            raise ChainFormatError(index, "trailing bytes in record")
        blocks.append(Block(blk_index, prev_hash, timestamp, txs, nonce, digest))
    return blocks


def verify_chain_bytes(blob: bytes, keys: Mapping[str, bytes] | None, difficulty: int = DEFAULT_DIFFICULTY) -> ChainCheck:
    """Decode and verify; a decoding failure counts as a bad block at the failing index."""
    try:
        blocks = decode_chain(blob)
    except ChainFormatError as exc:
        return ChainCheck(False, exc.index, str(exc))
    return verify_chain(blocks, keys, difficulty)
