import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbnfirewall import rbm
from dbnfirewall.errors import DimensionMismatchError, EmptyBatchError, TooLargeError
from dbnfirewall.rbm import CdConfig, RbmParams


def random_params(rng, nv, nh, scale=1.0):
    return RbmParams(
        rng.uniform(-scale, scale, (nh, nv)),
        rng.uniform(-scale, scale, nv),
        rng.uniform(-scale, scale, nh),
    )


def brute_force_expectations(p: RbmParams):
    """Pure-Python Boltzmann sums; independent of the vectorised path."""
    nv, nh = p.n_visible, p.n_hidden
    Z = 0.0
    vh = [[0.0] * nv for _ in range(nh)]
    ev = [0.0] * nv
    eh = [0.0] * nh
    for bits in itertools.product((0, 1), repeat=nv + nh):
        v, h = bits[:nv], bits[nv:]
        E = sum(v[i] * p.b[i] for i in range(nv)) + sum(h[j] * p.c[j] for j in range(nh))
        E += sum(v[i] * h[j] * p.w[j, i] for i in range(nv) for j in range(nh))
        q = math.exp(-E)
        Z += q
        for j in range(nh):
            eh[j] += q * h[j]
            for i in range(nv):
                vh[j][i] += q * v[i] * h[j]
        for i in range(nv):
            ev[i] += q * v[i]
    return np.array(vh) / Z, np.array(ev) / Z, np.array(eh) / Z


def test_energy_examples():
    p = RbmParams.zeros(3, 2)
    assert rbm.energy(p, [1, 0, 1], [1, 1]) == 0.0
    p = RbmParams([[0.1]], [0.5], [-0.25])
    assert rbm.energy(p, [1], [1]) == pytest.approx(0.35)
    rng = np.random.default_rng(0)
    q = random_params(rng, 4, 3)
    assert rbm.energy(q, np.zeros(4), np.zeros(3)) == 0.0


def test_energy_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        rbm.energy(RbmParams.zeros(3, 2), [1, 0], [1, 1])


def test_params_reject_bad_shapes():
    with pytest.raises(DimensionMismatchError):
        RbmParams(np.zeros((2, 3)), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        RbmParams([[np.nan]], [0.0], [0.0])


def test_conditionals_examples():
    p = RbmParams.zeros(4, 3)
    assert np.allclose(rbm.p_h_given_v(p, np.ones(4)), 0.5)
    assert np.allclose(rbm.p_v_given_h(p, np.ones(3)), 0.5)
    p = RbmParams(np.zeros((2, 3)), [-5.0, 0, 0], [-5.0, 5.0])
    assert rbm.p_h_given_v(p, np.ones(3)) == pytest.approx([0.993307, 0.006693], abs=1e-6)
    assert rbm.p_v_given_h(p, np.ones(2))[0] == pytest.approx(0.993307, abs=1e-6)


def test_conditionals_symmetry():
    p = random_params(np.random.default_rng(1), 5, 3)
    x = np.random.default_rng(2).random(3)
    assert np.allclose(rbm.p_v_given_h(p, x), rbm.p_h_given_v(p.transposed(), x))


def test_conditionals_dimension_mismatch():
    p = RbmParams.zeros(4, 3)
    with pytest.raises(DimensionMismatchError):
        rbm.p_h_given_v(p, np.ones(3))
    with pytest.raises(DimensionMismatchError):
        rbm.p_v_given_h(p, np.ones(4))


def test_sample_bernoulli_extremes(rng):
    assert not rbm.sample_bernoulli(np.zeros(100), rng).any()
    assert rbm.sample_bernoulli(np.ones(100), rng).all()


def test_sample_bernoulli_mean_and_reproducibility():
    draws = rbm.sample_bernoulli(np.full(10_000, 0.5), np.random.default_rng(7))
    assert abs(draws.mean() - 0.5) < 0.02
    again = rbm.sample_bernoulli(np.full(10_000, 0.5), np.random.default_rng(7))
    assert np.array_equal(draws, again)


@pytest.mark.parametrize("epoch,k", [(0, 1), (9, 1), (10, 2), (25, 3), (100, 11)])
def test_cd_iterations(epoch, k):
    assert rbm.cd_iterations(epoch) == k


def test_pretrain_rate_examples():
    assert rbm.pretrain_rate(0, 1) == pytest.approx(0.993307, abs=1e-6)
    assert rbm.pretrain_rate(50, 1) == 0.5
    assert rbm.pretrain_rate(100, 2) == 0.5


def test_schedule_monotonicity():
    ks = [rbm.cd_iterations(e) for e in range(200)]
    assert all(a <= b for a, b in zip(ks, ks[1:]))
    for l in (1, 2, 3):
        rates = [rbm.pretrain_rate(e, l) for e in range(0, 300, 7)]
        assert all(a > b for a, b in zip(rates, rates[1:]))
    for e in (0, 30, 80):
        assert rbm.pretrain_rate(e, 1) < rbm.pretrain_rate(e, 2) < rbm.pretrain_rate(e, 3)


def test_schedule_rejects_bad_arguments():
    with pytest.raises(ValueError):
        rbm.cd_iterations(-1)
    with pytest.raises(ValueError):
        rbm.pretrain_rate(0, 0)
    with pytest.raises(ValueError):
        CdConfig(epoch=0, batch_size=0)


def test_exact_expectations_uniform():
    vh, v, h = rbm.exact_model_expectations(RbmParams.zeros(3, 2))
    assert np.allclose(vh, 0.25) and np.allclose(v, 0.5) and np.allclose(h, 0.5)


def test_exact_expectations_hand_set_2x1():
    p = RbmParams([[1.2, -0.4]], [0.3, -0.7], [0.5])
    vh, v, h = rbm.exact_model_expectations(p)
    # frozen from brute_force_expectations
    assert vh[0] == pytest.approx([0.06594964568033074, 0.2712306211306682], abs=1e-12)
    assert v == pytest.approx([0.3376615230165234, 0.6978581888770192], abs=1e-12)
    assert h == pytest.approx([0.36151545191853696], abs=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_exact_expectations_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, int(rng.integers(1, 5)), int(rng.integers(1, 4)), 2.0)
    got = rbm.exact_model_expectations(p)
    ref = brute_force_expectations(p)
    for a, b in zip(got, ref):
        assert np.allclose(a, b, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_joint_normalised_and_ratio(nv, nh, seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng, nv, nh, 1.5)
    V, H, P = rbm.exact_joint(p)
    assert np.all(P >= 0) and abs(P.sum() - 1.0) < 1e-12
    a, b, c, d = rng.integers(0, len(V)), rng.integers(0, len(H)), rng.integers(0, len(V)), rng.integers(0, len(H))
    ratio = P[a, b] / P[c, d]
    expected = math.exp(rbm.energy(p, V[c], H[d]) - rbm.energy(p, V[a], H[b]))
    assert ratio == pytest.approx(expected, rel=1e-9)


def test_enumeration_bound():
    with pytest.raises(TooLargeError):
        rbm.exact_model_expectations(RbmParams.zeros(15, 6))


def test_cd_update_raises_probability_of_data():
    p = RbmParams.zeros(4, 2)
    ones = np.ones(4)
    before = rbm.exact_visible_probability(p, ones)
    q = rbm.cd_k_update(p, np.ones((10, 4)), CdConfig(epoch=0, rng_seed=1))
    assert rbm.exact_visible_probability(q, ones) > before


def test_cd_update_zero_rate_is_noop():
    p = random_params(np.random.default_rng(3), 4, 2)
    q = rbm.cd_k_update(p, np.ones((5, 4)), CdConfig(epoch=0), rate=0.0)
    assert q == p


def test_cd_update_uses_schedule():
    # at epoch 30 k = 4 and the rate is sigm(5 - 3); replicate by hand
    p = random_params(np.random.default_rng(4), 4, 3, 0.5)
    batch = np.random.default_rng(5).random((6, 4))
    q = rbm.cd_k_update(p, batch, CdConfig(epoch=30, rng_seed=9))
    st_ = rbm.cd_statistics(p, batch, 4, np.random.default_rng(9))
    eps = 1 / (1 + math.exp(3 - 5))
    assert np.allclose(q.w, p.w - eps * (st_.pos_vh - st_.neg_vh))
    assert np.allclose(q.b, p.b - eps * (st_.pos_v - st_.neg_v))
    assert np.allclose(q.c, p.c - eps * (st_.pos_h - st_.neg_h))


def test_cd_update_bit_reproducible():
    p = random_params(np.random.default_rng(6), 6, 3)
    batch = np.random.default_rng(7).random((10, 6))
    a = rbm.cd_k_update(p, batch, CdConfig(epoch=12, rng_seed=42))
    b = rbm.cd_k_update(p, batch, CdConfig(epoch=12, rng_seed=42))
    assert a == b


def test_cd_update_errors():
    p = RbmParams.zeros(4, 2)
    with pytest.raises(EmptyBatchError):
        rbm.cd_k_update(p, np.zeros((0, 4)), CdConfig(epoch=0))
    with pytest.raises(DimensionMismatchError):
        rbm.cd_k_update(p, np.ones((3, 5)), CdConfig(epoch=0))


def test_cd_training_improves_likelihood():
    rng = np.random.default_rng(0)
    data = (rng.random((20, 6)) < [0.9, 0.9, 0.1, 0.1, 0.8, 0.2]).astype(float)
    p = RbmParams.initial(6, 3, rng)
    start = rbm.log_likelihood(p, data)
    for sample_visible in (False, True):
        q = p
        for _ in range(100):
            q = rbm.cd_k_update(q, data, CdConfig(0), rng=rng, rate=0.1, sample_visible=sample_visible)
        assert rbm.log_likelihood(q, data) > start + 0.5


def test_gibbs_chain_small_tv():
    p = random_params(np.random.default_rng(8), 2, 2)
    V, H, P = rbm.exact_joint(p)
    vs, hs = rbm.gibbs_chain(p, 5000, np.random.default_rng(9), n_chains=4, burn_in=50)
    idx = rbm.state_index(vs) * len(H) + rbm.state_index(hs)
    emp = np.bincount(idx.ravel(), minlength=P.size) / idx.size
    assert 0.5 * np.abs(emp - P.ravel()).sum() < 0.03
