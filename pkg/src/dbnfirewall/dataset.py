"""Corpus manifests, train/validation splits, detection metrics and a synthetic corpus."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgcodec
from .dbn import BENIGN, MALICIOUS, DbnModel, predict_malicious_batch
from .errors import BadLabelError, DuplicatePathError, FirewallError, IoFailureError, NoPositivesError

log = logging.getLogger(__name__)

LABELS = {"benign": BENIGN, "malicious": MALICIOUS}
LABEL_NAMES = {v: k for k, v in LABELS.items()}


@dataclass(frozen=True)
class Manifest:
    entries: tuple[tuple[str, int], ...] = ()
    base_dir: str = "."

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((str(p), int(l)) for p, l in self.entries))
        seen = set()
        for path, label in self.entries:
            if path in seen:
                raise DuplicatePathError(path)
            if label not in LABEL_NAMES:
                raise BadLabelError(0, str(label))
            seen.add(path)

    def __len__(self):
        return len(self.entries)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.entries], dtype=np.int64)


def load_manifest(path: str | os.PathLike) -> Manifest:
    """Parse ``<path>\\t<label>`` lines; relative paths resolve against the manifest's folder."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailureError(f"{path}: {exc}") from exc
    entries = []
    seen = set()
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        file_path, sep, label = line.rstrip("\r\n").rpartition("\t")
        label = label.strip()
        if not sep or label not in LABELS:
            raise BadLabelError(n, label)
        if file_path in seen:
            raise DuplicatePathError(f"line {n}: {file_path}")
        seen.add(file_path)
        entries.append((file_path, LABELS[label]))
    return Manifest(tuple(entries), str(Path(path).parent))


def write_manifest(m: Manifest, path: str | os.PathLike) -> None:
    lines = [f"{p}\t{LABEL_NAMES[l]}\n" for p, l in m.entries]
    Path(path).write_text("".join(lines))


def split(m: Manifest, train_fraction: float, seed: int) -> tuple[Manifest, Manifest]:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(m))
    n_train = int(round(train_fraction * len(m)))
    pick = lambda idx: Manifest(tuple(m.entries[i] for i in idx), m.base_dir)
    return pick(order[:n_train]), pick(order[n_train:])


def load_vectors(m: Manifest, side: int) -> tuple[np.ndarray, np.ndarray, list[tuple[str, str]]]:
    """Run the byteplot pipeline on every entry; unreadable files are skipped and returned."""
    xs, ys, failures = [], [], []
    for path, label in m.entries:
        try:
            xs.append(imgcodec.read_file_vector(m.resolve(path), side))
            ys.append(label)
        except FirewallError as exc:
            log.warning("skipping %s: %s", path, exc)
            failures.append((path, str(exc)))
    X = np.array(xs, dtype=np.float64).reshape(len(xs), side * side)
    return X, np.array(ys, dtype=np.int64), failures


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def tpr(self) -> float:
        if self.tp + self.fn == 0:
            raise NoPositivesError("no malicious samples; TPR is undefined")
        return self.tp / (self.tp + self.fn)

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def confusion(probs, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Malicious is the positive class; predicted malicious iff probability >= threshold."""
    pred = np.asarray(probs) >= threshold
    truth = np.asarray(labels) == MALICIOUS
    return ConfusionCounts(
        tp=int(np.sum(pred & truth)),
        fp=int(np.sum(pred & ~truth)),
        tn=int(np.sum(~pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


@dataclass
class EvalReport:
    counts: ConfusionCounts
    accuracy: float
    tpr: float
    failures: list = field(default_factory=list)

    def lines(self) -> list[str]:
        c = self.counts
        return [
            f"total\t{c.total}",
            f"tp\t{c.tp}",
            f"fp\t{c.fp}",
            f"tn\t{c.tn}",
            f"fn\t{c.fn}",
            f"accuracy\t{self.accuracy:.4f}",
            f"tpr\t{self.tpr:.4f}",
        ]


def evaluate(model: DbnModel, m: Manifest, threshold: float = 0.5) -> EvalReport:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    side = imgcodec.side_for_inputs(model.n_inputs)
    X, y, failures = load_vectors(m, side)
    probs = predict_malicious_batch(model, X) if len(X) else np.zeros(0)
    counts = confusion(probs, y, threshold)
    return EvalReport(counts, counts.accuracy, counts.tpr, failures)


# Synthetic corpus: benign files render as horizontal bands, malicious as vertical.

SYNTH_SIDE = 32  # 1024-byte files fall in the 32-pixel-wide byteplot bucket


def synthetic_image(label: int, rng: np.random.Generator, side: int = SYNTH_SIDE) -> np.ndarray:
    thickness = int(rng.choice((4, 6, 8)))
    phase = int(rng.integers(0, 2 * thickness))
    hi = rng.uniform(160, 240)
    lo = rng.uniform(20, 90)
    stripe = np.where(((np.arange(side) + phase) // thickness) % 2 == 0, hi, lo)
    if label == BENIGN:
        base = np.repeat(stripe[:, None], side, axis=1)
    elif label == MALICIOUS:
        base = np.repeat(stripe[None, :], side, axis=0)
    else:
        raise BadLabelError(0, str(label))
    img = base + rng.normal(0.0, 25.0, size=(side, side))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synthetic_file(label: int, seed: int, side: int = SYNTH_SIDE) -> bytes:
    """Bytes of one synthetic sample; its byteplot is exactly the banded image."""
    return synthetic_image(label, np.random.default_rng(seed), side).tobytes()


def synthetic_corpus(per_class: int, seed: int, side: int = 16):
    """In-memory corpus (X, y) produced through the full byteplot pipeline."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for label in (BENIGN, MALICIOUS):
        for _ in range(per_class):
            data = synthetic_file(label, int(rng.integers(0, 2**63)))
            xs.append(imgcodec.file_bytes_to_vector(data, side))
            ys.append(label)
    order = rng.permutation(len(xs))
    return np.array(xs)[order], np.array(ys, dtype=np.int64)[order]


def write_synthetic_corpus(out_dir: str | os.PathLike, per_class: int, seed: int) -> Manifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for label in (BENIGN, MALICIOUS):
        for i in range(per_class):
            name = f"{LABEL_NAMES[label]}_{i:05d}.bin"
            (out / name).write_bytes(synthetic_file(label, int(rng.integers(0, 2**63))))
            entries.append((name, label))
    m = Manifest(tuple(entries), str(out))
    write_manifest(m, out / "manifest.tsv")
    return m
