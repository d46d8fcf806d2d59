"""Bernoulli-Bernoulli restricted Boltzmann machine.

Energy convention: E(v, h) = v.b + h.c + h.W.v with p(v, h) proportional to
exp(-E). Consequently both conditionals negate their pre-activation:

    p(h_j = 1 | v) = sigm(-c_j - sum_i w_ji v_i)
    p(v_i = 1 | h) = sigm(-b_i - sum_j w_ji h_j)

and raising the data likelihood means moving the parameters *against* the
positive-minus-negative correlation difference.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, EmptyBatchError, TooLargeError

MAX_ENUMERATION_UNITS = 20
INIT_STD = 0.01


def sigm(x):
    # Split by sign so neither branch can overflow exp().
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True, eq=False)
class RbmParams:
    """Weights ``w`` are indexed [hidden j][visible i]."""

    w: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if w.ndim != 2 or w.shape != (c.size, b.size):
            raise DimensionMismatchError(
                f"w has shape {w.shape}, expected ({c.size}, {b.size})"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("RBM parameters must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_visible(self) -> int:
        return self.b.size

    @property
    def n_hidden(self) -> int:
        return self.c.size

    @classmethod
    def zeros(cls, n_visible: int, n_hidden: int) -> "RbmParams":
        return cls(np.zeros((n_hidden, n_visible)), np.zeros(n_visible), np.zeros(n_hidden))

    @classmethod
    def initial(cls, n_visible: int, n_hidden: int, rng: np.random.Generator) -> "RbmParams":
        w = rng.normal(0.0, INIT_STD, size=(n_hidden, n_visible))
        return cls(w, np.zeros(n_visible), np.zeros(n_hidden))

    def transposed(self) -> "RbmParams":
        """Swap the roles of the two layers."""
        return RbmParams(self.w.T.copy(), self.c.copy(), self.b.copy())

    def __eq__(self, other):
        if not isinstance(other, RbmParams):
            return NotImplemented
        return (
            self.w.shape == other.w.shape
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
        )


@dataclass(frozen=True)
class CdConfig:
    epoch: int
    layer_index: int = 1
    batch_size: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.epoch < 0:
            raise ValueError("epoch must be >= 0")
        if self.layer_index < 1:
            raise ValueError("layer_index is 1-based")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _check_len(vec: np.ndarray, n: int, what: str):
    if vec.shape[-1] != n:
        raise DimensionMismatchError(f"{what} has length {vec.shape[-1]}, expected {n}")


def energy(params: RbmParams, v, h) -> float:
    v = np.asarray(v, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    _check_len(v, params.n_visible, "v")
    _check_len(h, params.n_hidden, "h")
    return float(v @ params.b + h @ params.c + h @ params.w @ v)


def p_h_given_v(params: RbmParams, v) -> np.ndarray:
    """Hidden activation probabilities; ``v`` may be a vector or a (batch, n_visible) matrix."""
    v = np.asarray(v, dtype=np.float64)
    _check_len(v, params.n_visible, "v")
    return sigm(-params.c - v @ params.w.T)


def p_v_given_h(params: RbmParams, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    _check_len(h, params.n_hidden, "h")
    return sigm(-params.b - h @ params.w)


def sample_bernoulli(probs, rng: np.random.Generator) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    return (rng.random(probs.shape) < probs).astype(np.float64)


def cd_iterations(epoch: int) -> int:
    """Gibbs steps used by CD at a given (0-based) epoch: one step, plus one per ten epochs."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return epoch // 10 + 1


def pretrain_rate(epoch: int, layer_index: int) -> float:
    """Learning rate 1 / (1 + exp(epoch/10 - 5*layer)); decays with epoch, grows with depth."""
    if epoch < 0 or layer_index < 1:
        raise ValueError("epoch must be >= 0 and layer_index >= 1")
    z = epoch / 10.0 - 5.0 * layer_index
    if z > 700.0:  # exp would overflow; the rate is 0 to double precision anyway
        return 0.0
    return 1.0 / (1.0 + math.exp(z))


@dataclass(frozen=True)
class CdStatistics:
    pos_vh: np.ndarray  # [hidden][visible], batch mean
    pos_v: np.ndarray
    pos_h: np.ndarray
    neg_vh: np.ndarray
    neg_v: np.ndarray
    neg_h: np.ndarray


def cd_statistics(
    params: RbmParams,
    batch,
    k: int,
    rng: np.random.Generator,
    sample_visible: bool = False,
) -> CdStatistics:
    """Positive and k-step reconstruction statistics averaged over ``batch``.

    Hidden states are sampled during the chain and the final hidden
    statistics use probabilities. Visible reconstructions are probabilities
    by default; ``sample_visible=True`` draws binary visible states instead,
    which makes the chain an exact Gibbs sampler (unbiased as k grows, but
    too noisy to train with rates near 1).
    """
    v0 = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if v0.shape[0] == 0 or v0.size == 0:
        raise EmptyBatchError("CD needs at least one training vector")
    _check_len(v0, params.n_visible, "batch vector")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = v0.shape[0]

    h0 = p_h_given_v(params, v0)
    h = sample_bernoulli(h0, rng)
    for step in range(k):
        v = p_v_given_h(params, h)
        if sample_visible:
            v = sample_bernoulli(v, rng)
        hk = p_h_given_v(params, v)
        if step < k - 1:
            h = sample_bernoulli(hk, rng)

    return CdStatistics(
        pos_vh=h0.T @ v0 / n,
        pos_v=v0.mean(axis=0),
        pos_h=h0.mean(axis=0),
        neg_vh=hk.T @ v / n,
        neg_v=v.mean(axis=0),
        neg_h=hk.mean(axis=0),
    )


def cd_k_update(
    params: RbmParams,
    batch,
    cfg: CdConfig,
    rng: np.random.Generator | None = None,
    rate: float | None = None,
    sample_visible: bool = False,
) -> RbmParams:
    """One contrastive-divergence step on a mini-batch.

    k and the learning rate come from the epoch/layer schedules unless ``rate``
    overrides the latter. ``rng`` defaults to a generator seeded from
    ``cfg.rng_seed``. The step descends the energy of the data, i.e. it
    subtracts rate * (data - reconstruction) under this module's sign
    convention.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    eps = pretrain_rate(cfg.epoch, cfg.layer_index) if rate is None else rate
    st = cd_statistics(params, batch, cd_iterations(cfg.epoch), rng, sample_visible)
    return RbmParams(
        params.w - eps * (st.pos_vh - st.neg_vh),
        params.b - eps * (st.pos_v - st.neg_v),
        params.c - eps * (st.pos_h - st.neg_h),
    )


def _all_states(n: int) -> np.ndarray:
    if n == 0:
        return np.zeros((1, 0))
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def exact_joint(params: RbmParams):
    """Enumerate every joint state.

    Returns (V, H, P): V is (2^nv, nv), H is (2^nh, nh) and P[a, b] is the
    exact Boltzmann probability of (V[a], H[b]).
    """
    if params.n_visible + params.n_hidden > MAX_ENUMERATION_UNITS:
        raise TooLargeError(
            f"{params.n_visible}+{params.n_hidden} units exceeds the enumeration bound "
            f"of {MAX_ENUMERATION_UNITS}"
        )
    V = _all_states(params.n_visible)
    H = _all_states(params.n_hidden)
    E = (V @ params.b)[:, None] + (H @ params.c)[None, :] + V @ params.w.T @ H.T
    logits = -E
    logits -= logits.max()
    P = np.exp(logits)
    P /= P.sum()
    return V, H, P


def exact_model_expectations(params: RbmParams):
    """Exact (<v_i h_j>, <v_i>, <h_j>) under the model; the correlation matrix is [hidden][visible]."""
    V, H, P = exact_joint(params)
    vh = H.T @ P.T @ V
    return vh, P.sum(axis=1) @ V, P.sum(axis=0) @ H


def exact_visible_probability(params: RbmParams, v) -> float:
    """Marginal p(v), summing the hidden layer out exactly."""
    v = np.asarray(v, dtype=np.float64)
    V, _, P = exact_joint(params)
    idx = np.flatnonzero(np.all(V == v, axis=1))
    if idx.size != 1:
        raise ValueError("v must be a binary vector of length n_visible")
    return float(P[idx[0]].sum())


def gibbs_chain(
    params: RbmParams,
    n_sweeps: int,
    rng: np.random.Generator,
    n_chains: int = 1,
    burn_in: int = 0,
):
    """Alternating h|v, v|h sampling from a uniformly random start.

    Returns visible and hidden states after each post-burn-in sweep with
    shapes (n_sweeps, n_chains, n_visible) and (n_sweeps, n_chains, n_hidden).
    """
    v = sample_bernoulli(np.full((n_chains, params.n_visible), 0.5), rng)
    vs = np.empty((n_sweeps, n_chains, params.n_visible))
    hs = np.empty((n_sweeps, n_chains, params.n_hidden))
    for t in range(burn_in + n_sweeps):
        h = sample_bernoulli(p_h_given_v(params, v), rng)
        v = sample_bernoulli(p_v_given_h(params, h), rng)
        if t >= burn_in:
            vs[t - burn_in] = v
            hs[t - burn_in] = h
    return vs, hs


def state_index(bits: np.ndarray) -> np.ndarray:
    """Binary rows -> integers, most significant bit first (matches ``_all_states`` order)."""
    bits = np.asarray(bits)
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return (bits.astype(np.int64) * weights).sum(axis=-1)


def log_likelihood(params: RbmParams, data) -> float:
    """Mean exact log p(v) over binary ``data`` (small models only)."""
    V, _, P = exact_joint(params)
    pv = P.sum(axis=1)
    idx = state_index(np.atleast_2d(data))
    return float(np.mean([math.log(pv[i]) for i in idx]))
