"""Deep belief network: greedily pretrained RBM stack with a softmax head."""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import rbm as rbm_mod
from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    DimensionMismatchError,
    EmptyDataError,
    IoFailureError,
    UnknownLabelError,
    VersionUnsupportedError,
)
from .rbm import CdConfig, RbmParams

BENIGN = 0
MALICIOUS = 1

MAGIC = b"DBN1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class DbnArch:
    """Network shape and training schedule.

    ``pretrain_scale`` multiplies the epoch/layer learning-rate schedule
    during CD pretraining only; at 1.0 the early-epoch rate is close to 1,
    which drives batch-of-10 CD into saturated, dead hidden units.
    ``sample_visible`` switches CD to binary visible reconstructions.
    """

    layer_sizes: tuple[int, ...] = (4096, 3000, 3000)
    n_classes: int = 2
    pretrain_epochs: int = 10
    finetune_epochs: int = 10
    batch_size: int = 10
    rng_seed: int = 0
    pretrain_scale: float = 0.1
    sample_visible: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("architecture needs an input layer and at least one hidden layer")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("layer sizes must be >= 1")
        if self.n_classes != 2:
            raise ValueError("the detector is a two-class model")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if not self.pretrain_scale > 0:
            raise ValueError("pretrain_scale must be > 0")

    @property
    def n_hidden_layers(self) -> int:
        return len(self.layer_sizes) - 1


@dataclass(frozen=True, eq=False)
class DbnModel:
    rbms: tuple[RbmParams, ...]
    softmax_w: np.ndarray  # [class][last hidden]
    softmax_b: np.ndarray
    arch: DbnArch
    training_fingerprint: str = field(default="")

    def __post_init__(self):
        rbms = tuple(self.rbms)
        object.__setattr__(self, "rbms", rbms)
        sizes = self.arch.layer_sizes
        if len(rbms) != len(sizes) - 1:
            raise DimensionMismatchError("RBM count does not match the architecture")
        for t, r in enumerate(rbms):
            if (r.n_visible, r.n_hidden) != (sizes[t], sizes[t + 1]):
                raise DimensionMismatchError(f"RBM {t} is {r.n_visible}x{r.n_hidden}")
        sw = np.asarray(self.softmax_w, dtype=np.float64)
        sb = np.asarray(self.softmax_b, dtype=np.float64).reshape(-1)
        if sw.shape != (self.arch.n_classes, sizes[-1]) or sb.shape != (self.arch.n_classes,):
            raise DimensionMismatchError("softmax head does not match the last hidden layer")
        object.__setattr__(self, "softmax_w", sw)
        object.__setattr__(self, "softmax_b", sb)

    @property
    def n_inputs(self) -> int:
        return self.arch.layer_sizes[0]

    def __eq__(self, other):
        if not isinstance(other, DbnModel):
            return NotImplemented
        return (
            self.arch.layer_sizes == other.arch.layer_sizes
            and self.arch.rng_seed == other.arch.rng_seed
            and all(a == b for a, b in zip(self.rbms, other.rbms))
            and np.array_equal(self.softmax_w, other.softmax_w)
            and np.array_equal(self.softmax_b, other.softmax_b)
        )

    def digest(self) -> str:
        """SHA-256 over the serialized parameters."""
        return hashlib.sha256(dumps_model(self)).hexdigest()


def data_digest(X, y=None) -> str:
    h = hashlib.sha256(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    if y is not None:
        h.update(np.ascontiguousarray(y, dtype=np.int64).tobytes())
    return h.hexdigest()


def _as_matrix(data, n_inputs: int) -> np.ndarray:
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[0] == 0:
        raise EmptyDataError("no training vectors")
    if X.shape[1] != n_inputs:
        raise DimensionMismatchError(f"input vectors have {X.shape[1]} values, expected {n_inputs}")
    return X


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def pretrain(arch: DbnArch, data, rng: np.random.Generator | None = None) -> list[RbmParams]:
    """Greedy layer-wise CD pretraining, bottom up.

    Every RBM is initialised first from the seeded generator; each layer then
    trains on the mean-field hidden probabilities of the layer below.
    """
    X = _as_matrix(data, arch.layer_sizes[0])
    if rng is None:
        rng = np.random.default_rng(arch.rng_seed)
    sizes = arch.layer_sizes
    rbms = [RbmParams.initial(sizes[t], sizes[t + 1], rng) for t in range(len(sizes) - 1)]
    x = X
    for t in range(len(rbms)):
        params = rbms[t]
        for epoch in range(arch.pretrain_epochs):
            cfg = CdConfig(epoch, t + 1, arch.batch_size, arch.rng_seed)
            rate = arch.pretrain_scale * rbm_mod.pretrain_rate(epoch, t + 1)
            for idx in _batches(len(x), arch.batch_size, rng):
                params = rbm_mod.cd_k_update(
                    params, x[idx], cfg, rng=rng, rate=rate, sample_visible=arch.sample_visible
                )
        rbms[t] = params
        x = rbm_mod.p_h_given_v(params, x)
    return rbms


def assemble(arch: DbnArch, rbms, fingerprint: str = "") -> DbnModel:
    """Stack pretrained RBMs under a zero-initialised softmax head."""
    n_last = arch.layer_sizes[-1]
    return DbnModel(
        tuple(rbms),
        np.zeros((arch.n_classes, n_last)),
        np.zeros(arch.n_classes),
        arch,
        fingerprint,
    )


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(model: DbnModel, x):
    """Mean-field upward pass.

    Returns (activations, probabilities): the list of hidden activations per
    layer and the class probabilities. Accepts one vector or a batch.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.shape[-1] != model.n_inputs:
        raise DimensionMismatchError(f"input has {a.shape[-1]} values, expected {model.n_inputs}")
    acts = []
    for r in model.rbms:
        a = rbm_mod.p_h_given_v(r, a)
        acts.append(a)
    probs = softmax(a @ model.softmax_w.T + model.softmax_b)
    return acts, probs


def predict_malicious(model: DbnModel, x) -> float:
    _, probs = forward(model, x)
    return float(probs[..., MALICIOUS])


def predict_malicious_batch(model: DbnModel, X) -> np.ndarray:
    _, probs = forward(model, np.atleast_2d(X))
    return probs[:, MALICIOUS]


def _check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionMismatchError(f"got {y.size} labels for {n} vectors")
    bad = ~np.isin(y, (BENIGN, MALICIOUS))
    if np.any(bad):
        raise UnknownLabelError(f"label {y[bad][0]!r} is neither 0 (benign) nor 1 (malicious)")
    return y.astype(np.int64)


def loss(model: DbnModel, X, y) -> float:
    """Mean cross-entropy of the softmax output."""
    X = _as_matrix(X, model.n_inputs)
    y = _check_labels(y, len(X))
    _, probs = forward(model, X)
    return float(-np.mean(np.log(probs[np.arange(len(y)), y])))


@dataclass
class Gradients:
    w: list  # per RBM, [hidden][visible]
    c: list
    softmax_w: np.ndarray
    softmax_b: np.ndarray


def gradients(model: DbnModel, X, y) -> Gradients:
    """Backpropagated gradient of :func:`loss` for every trainable tensor.

    Visible biases are not on the upward path, so they receive no gradient.
    """
    X = _as_matrix(X, model.n_inputs)
    y = _check_labels(y, len(X))
    acts, probs = forward(model, X)
    n = len(X)
    dz = probs.copy()
    dz[np.arange(n), y] -= 1.0
    dz /= n
    inputs = [X] + acts[:-1]
    gsw = dz.T @ acts[-1]
    gsb = dz.sum(axis=0)
    da = dz @ model.softmax_w
    gw = [None] * len(model.rbms)
    gc = [None] * len(model.rbms)
    for t in range(len(model.rbms) - 1, -1, -1):
        a = acts[t]
        # a = sigm(u), u = -c - x W^T
        du = da * a * (1.0 - a)
        gc[t] = -du.sum(axis=0)
        gw[t] = -du.T @ inputs[t]
        if t > 0:
            da = -du @ model.rbms[t].w
    return Gradients(gw, gc, gsw, gsb)


def finetune(model: DbnModel, X, y, rng: np.random.Generator | None = None) -> DbnModel:
    """Mini-batch SGD on cross-entropy through every layer.

    The step for the parameter block at depth l (first RBM = 1, softmax head =
    number of hidden layers + 1) at epoch ep is 1 / (1 + exp(ep/10 - 5l)).
    """
    arch = model.arch
    X = _as_matrix(X, model.n_inputs)
    y = _check_labels(y, len(X))
    if rng is None:
        rng = np.random.default_rng(arch.rng_seed + 1)
    L = arch.n_hidden_layers
    for ep in range(arch.finetune_epochs):
        rates = [rbm_mod.pretrain_rate(ep, l) for l in range(1, L + 2)]
        for idx in _batches(len(X), arch.batch_size, rng):
            g = gradients(model, X[idx], y[idx])
            rbms = tuple(
                RbmParams(r.w - rates[t] * g.w[t], r.b, r.c - rates[t] * g.c[t])
                for t, r in enumerate(model.rbms)
            )
            model = replace(
                model,
                rbms=rbms,
                softmax_w=model.softmax_w - rates[L] * g.softmax_w,
                softmax_b=model.softmax_b - rates[L] * g.softmax_b,
            )
    return model


def train(arch: DbnArch, X, y) -> DbnModel:
    """Pretrain on the vectors, then fine-tune with their labels."""
    X = _as_matrix(X, arch.layer_sizes[0])
    y = _check_labels(y, len(X))
    rng = np.random.default_rng(arch.rng_seed)
    fingerprint = f"seed={arch.rng_seed};data={data_digest(X, y)}"
    model = assemble(arch, pretrain(arch, X, rng), fingerprint)
    return finetune(model, X, y, rng)


# Model file: little-endian header, f64 payload, trailing SHA-256 of everything before it.

def dumps_model(model: DbnModel) -> bytes:
    sizes = model.arch.layer_sizes
    parts = [
        MAGIC,
        struct.pack("<IQI", FORMAT_VERSION, model.arch.rng_seed & 0xFFFFFFFFFFFFFFFF, len(sizes)),
        struct.pack(f"<{len(sizes)}I", *sizes),
        struct.pack("<I", model.arch.n_classes),
    ]
    for r in model.rbms:
        parts += [r.w.astype("<f8").tobytes(), r.b.astype("<f8").tobytes(), r.c.astype("<f8").tobytes()]
    parts += [model.softmax_w.astype("<f8").tobytes(), model.softmax_b.astype("<f8").tobytes()]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def loads_model(blob: bytes) -> DbnModel:
    if blob[:4] != MAGIC:
        raise BadMagicError("not a DBN model file")
    if len(blob) < 4 + 16 + 32:
        raise ChecksumMismatchError("model file truncated")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatchError("model checksum does not match its contents")
    version, seed, n_layers = struct.unpack_from("<IQI", body, 4)
    if version != FORMAT_VERSION:
        raise VersionUnsupportedError(f"model format version {version}")
    pos = 4 + 16
    sizes = struct.unpack_from(f"<{n_layers}I", body, pos)
    pos += 4 * n_layers
    (n_classes,) = struct.unpack_from("<I", body, pos)
    pos += 4

    def take(count: int) -> np.ndarray:
        nonlocal pos
        out = np.frombuffer(body, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return out

    arch = DbnArch(layer_sizes=sizes, n_classes=n_classes, rng_seed=seed)
    rbms = []
    for t in range(n_layers - 1):
        nv, nh = sizes[t], sizes[t + 1]
        w = take(nv * nh).reshape(nh, nv)
        rbms.append(RbmParams(w, take(nv), take(nh)))
    sw = take(n_classes * sizes[-1]).reshape(n_classes, sizes[-1])
    sb = take(n_classes)
    if pos != len(body):
        raise ChecksumMismatchError("trailing bytes in model file")
    return DbnModel(tuple(rbms), sw, sb, arch)


def save_model(model: DbnModel, path: str | os.PathLike) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(dumps_model(model))
    except OSError as exc:
        raise IoFailureError(f"{path}: {exc}") from exc


def load_model(path: str | os.PathLike) -> DbnModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailureError(f"{path}: {exc}") from exc
    return loads_model(blob)
