import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import params_strategy, random_params
from lifgibbs import _accel, kernel
from lifgibbs.blocks import SpikeBlock, decode_word, Word
from lifgibbs.params import NetworkParams


def hist(rows):
    return SpikeBlock.history(np.array(rows))


mpmath.mp.dps = 60


def mp_tail(x):
    return mpmath.erfc(mpmath.mpf(x) / mpmath.sqrt(2)) / 2


def mp_log_tail(x):
    if x > 0:
        return float(mpmath.log(mp_tail(x)))
    return float(mpmath.log1p(-mp_tail(-x)))


def brute_moments(bits, p):
    """Term-by-term evaluation of the drift and variance sums."""
    bits = np.asarray(bits)
    depth, n = bits.shape
    g = p.leak
    drift, var = [], []
    for i in range(n):
        fired = [k for k in range(depth) if bits[k, i]]
        tau = (fired[-1] if fired else 0) - depth  # in -R..-1
        c = 0.0
        for j in range(n):
            x = 0.0
            for l in range(tau, 0):
                x += g ** (-1 - l) * bits[l + depth, j]
            c += p.weights[i, j] * x
        c += p.inputs[i] * sum(g**k for k in range(-tau))
        drift.append(c)
        var.append(p.noise_amp**2 * sum(g ** (2 * k) for k in range(-tau)))
    return np.array(drift), np.array(var)


# --- Gaussian tail -----------------------------------------------------------------


def test_tail_values():
    assert kernel.gauss_tail(0.0) == 0.5
    assert kernel.gauss_tail(1.0) == pytest.approx(0.5 * math.erfc(1 / math.sqrt(2)), rel=1e-15)
    assert kernel.gauss_tail(1.0) == pytest.approx(0.15865525393145707, rel=1e-14)
    assert kernel.gauss_tail(-1.0) + kernel.gauss_tail(1.0) == pytest.approx(1.0, abs=1e-16)


def test_tail_rejects_non_finite():
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(ValueError):
            kernel.gauss_tail(bad)
        with pytest.raises(ValueError):
            kernel.log_gauss_tail(bad)


@pytest.mark.parametrize("x", [-40, -8.5, -3, -0.1, 0.0, 0.7, 5, 8.5, 12, 25, 37, 40])
def test_log_tail_against_arbitrary_precision(x):
    assert kernel.log_gauss_tail(x) == pytest.approx(mp_log_tail(x), rel=1e-13)
    assert kernel.log_gauss_head(x) == pytest.approx(mp_log_tail(-x), rel=1e-12)


@given(st.floats(-30, 30), st.floats(-30, 30))
def test_tail_strictly_decreasing(a, b):
    if a < b - 1e-9:
        assert kernel.log_gauss_tail(a) > kernel.log_gauss_tail(b)


# --- integrated spikes and moments ---------------------------------------------------


def test_integrated_spikes_examples():
    rng = np.random.default_rng(1)
    p0 = NetworkParams(np.zeros((2, 2)), [0, 0], 0.0)
    for _ in range(20):
        h = hist(rng.integers(0, 2, (4, 2)))
        for i, j in itertools.product(range(2), repeat=2):
            assert kernel.integrated_spikes(h, i, j, p0) == h.pattern(-1)[j]
    half = NetworkParams(np.zeros((1, 1)), [0], 0.5)
    for r in range(1, 8):
        ones = hist(np.ones((r, 1), dtype=int))
        # neuron fired at -1 so tau = -1 and only the last term survives
        assert kernel.integrated_spikes(ones, 0, 0, half) == 1.0
    two = NetworkParams(np.zeros((2, 2)), [0, 0], 0.5)
    for r in range(1, 8):
        bits = np.zeros((r, 2), dtype=int)
        bits[:, 1] = 1  # neuron 0 silent: tau_0 = -R
        assert kernel.integrated_spikes(hist(bits), 0, 1, two) == pytest.approx(2 * (1 - 0.5**r), rel=1e-15)
        assert kernel.integrated_spikes(hist(np.zeros((r, 2), dtype=int)), 0, 1, two) == 0.0
    with pytest.raises(IndexError):
        kernel.integrated_spikes(hist([[0, 0]]), 2, 0, two)


def test_moments_gamma_zero():
    rng = np.random.default_rng(2)
    p = NetworkParams(rng.normal(size=(3, 3)), rng.normal(size=3), 0.0, 1.0, 1.7)
    for _ in range(20):
        bits = rng.integers(0, 2, (5, 3))
        m = kernel.conditional_moments(hist(bits), p)
        np.testing.assert_allclose(m.drift, p.weights @ bits[-1] + p.inputs, rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(m.variance, 1.7**2, rtol=1e-15)


def test_moments_fired_last_step():
    p = NetworkParams(np.zeros((1, 1)), [0.7], 0.6, 1.0, 1.3)
    m = kernel.conditional_moments(hist([[0], [1], [0], [1]]), p)
    assert m.drift[0] == pytest.approx(0.7, rel=1e-15)
    assert m.variance[0] == pytest.approx(1.3**2, rel=1e-15)
    assert m.last_fire[0] == -1


def test_moments_canonical_example(canonical):
    bits = [[1, 1], [0, 0]]
    m = kernel.conditional_moments(hist(bits), canonical)
    drift, var = brute_moments(bits, canonical)
    np.testing.assert_allclose(m.drift, drift, rtol=1e-14)
    np.testing.assert_allclose(m.variance, var, rtol=1e-14)
    np.testing.assert_allclose(m.drift, [0.82, 0.42], rtol=1e-14)
    np.testing.assert_allclose(m.variance, [1.04, 1.04], rtol=1e-14)
    np.testing.assert_array_equal(m.last_fire, [-2, -2])


def test_moments_against_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = random_params(rng)
        bits = rng.integers(0, 2, (int(rng.integers(1, 7)), p.n_neurons))
        m = kernel.conditional_moments(hist(bits), p)
        drift, var = brute_moments(bits, p)
        np.testing.assert_allclose(m.drift, drift, rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(m.variance, var, rtol=1e-12)


def test_moment_bounds_random_histories():
    rng = np.random.default_rng(4)
    for _ in range(50):
        p = random_params(rng)
        lo, hi = kernel.drift_bounds(p)
        s2 = p.noise_amp**2
        tab = kernel.moments_table(p, int(rng.integers(1, 9 // p.n_neurons + 1)))
        for _ in range(200):
            w = int(rng.integers(0, tab.drift.shape[0]))
            assert np.all(lo - 1e-12 <= tab.drift[w]) and np.all(tab.drift[w] <= hi + 1e-12)
            assert np.all(s2 * (1 - 1e-12) <= tab.variance[w])
            assert np.all(tab.variance[w] <= s2 / (1 - p.leak**2) * (1 + 1e-12))


def test_moments_table_both_backends(canonical, backend):
    fn = _accel.KERNELS["moments_table"][backend]
    depth = 4
    drift, var, tau = fn(np.ascontiguousarray(canonical.weights), np.ascontiguousarray(canonical.inputs),
                         canonical.leak, canonical.noise_amp, depth)
    for w in range(1 << (2 * depth)):
        m = kernel.conditional_moments(decode_word(Word(w, 2, depth)), canonical)
        np.testing.assert_allclose(drift[w], m.drift, rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(var[w], m.variance, rtol=1e-14)
        np.testing.assert_array_equal(tau[w], m.last_fire)


# --- transition probability and potential ---------------------------------------------


def test_single_neuron_spike_probability():
    p = NetworkParams([[0.0]], [0.0], 0.0, 1.0, 1.0)
    assert kernel.transition_prob([1], hist([[0]]), p) == pytest.approx(0.15865525393145707, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(params_strategy(), st.data())
def test_normalization_property(p, data):
    depth = data.draw(st.integers(1, 4))
    bits = np.array(data.draw(st.lists(st.integers(0, 1), min_size=depth * p.n_neurons,
                                       max_size=depth * p.n_neurons))).reshape(depth, p.n_neurons)
    h = hist(bits)
    probs = [kernel.transition_prob(a, h, p) for a in itertools.product([0, 1], repeat=p.n_neurons)]
    assert abs(sum(probs) - 1) <= 1e-12
    # non-null: the log-probability is finite even where the probability underflows
    for a in itertools.product([0, 1], repeat=p.n_neurons):
        assert np.isfinite(kernel.potential(a, h, p))


@settings(max_examples=60, deadline=None)
@given(params_strategy(), st.data())
def test_potential_matches_probability(p, data):
    bits = np.array(data.draw(st.lists(st.integers(0, 1), min_size=3 * p.n_neurons,
                                       max_size=3 * p.n_neurons))).reshape(3, p.n_neurons)
    nxt = data.draw(st.lists(st.integers(0, 1), min_size=p.n_neurons, max_size=p.n_neurons))
    h = hist(bits)
    psi = kernel.potential(nxt, h, p)
    prob = kernel.transition_prob(nxt, h, p)
    assert np.isfinite(psi) and psi < 0
    if prob > 1e-300:
        assert math.exp(psi) == pytest.approx(prob, rel=1e-12)


def test_potential_examples():
    # theta = C makes every factor 1/2
    p = NetworkParams(np.zeros((3, 3)), [1.0, 1.0, 1.0], 0.0, 1.0, 1.0)
    assert kernel.potential([1, 0, 1], hist([[0, 1, 1]]), p) == pytest.approx(-3 * math.log(2), rel=1e-15)
    q = NetworkParams([[0.3]], [0.2], 0.4)
    y = (1 - kernel.conditional_moments(hist([[1], [0]]), q).drift[0]) / math.sqrt(1 + 0.16)
    assert kernel.potential([1], hist([[1], [0]]), q) == pytest.approx(float(mpmath.log(mp_tail(y))), rel=1e-13)


def test_potential_extreme_quiet():
    # y = 35: the spike probability is ~1e-268, the quiet factor is 1 - tiny
    p = NetworkParams([[0.0]], [1.0 - 35.0], 0.0, 1.0, 1.0)
    psi = kernel.potential([0], hist([[0]]), p)
    want = -float(mp_tail(35))
    assert np.isfinite(psi) and psi < 0
    assert psi == pytest.approx(want, rel=1e-10)
    assert kernel.potential([1], hist([[0]]), p) == pytest.approx(float(mpmath.log(mp_tail(35))), rel=1e-13)


def test_permutation_invariance():
    rng = np.random.default_rng(5)
    for _ in range(30):
        p = random_params(rng, n=3)
        order = rng.permutation(3)
        q = p.permuted(order)
        bits = rng.integers(0, 2, (4, 3))
        nxt = rng.integers(0, 2, 3)
        a = kernel.transition_prob(nxt, hist(bits), p)
        b = kernel.transition_prob(nxt[order], hist(bits[:, order]), q)
        assert a == pytest.approx(b, rel=1e-13)


def test_time_labels_do_not_matter():
    rng = np.random.default_rng(6)
    p = random_params(rng, n=2)
    bits = rng.integers(0, 2, (5, 2))
    base = SpikeBlock.from_bits(bits, start=-5)
    for start in (-100, 0, 17, 10**6):
        moved = base.shifted(start)
        for nxt in itertools.product([0, 1], repeat=2):
            assert kernel.transition_prob(nxt, moved, p) == kernel.transition_prob(nxt, base, p)
            assert kernel.potential(nxt, moved, p) == kernel.potential(nxt, base, p)


def test_log_transition_table_rows(canonical):
    lt = kernel.log_transition_table(canonical, 3)
    np.testing.assert_allclose(np.exp(lt).sum(axis=1), 1.0, atol=1e-14)
    for w in (0, 5, 63):
        h = decode_word(Word(w, 2, 3))
        for a in range(4):
            bits = [(a >> i) & 1 for i in range(2)]
            assert lt[w, a] == pytest.approx(kernel.potential(bits, h, canonical), rel=1e-14)


# --- regularity constants and no-fire bounds ------------------------------------------


def test_variation_constants_examples():
    zero = NetworkParams(np.zeros((2, 2)), [0.0, 0.0], 0.3)
    vc = kernel.variation_constants(zero)
    assert vc.k_const == 0.0 and vc.k_prime == 0.0
    one = NetworkParams([[0.25, -0.25], [0.0, 0.0]], [0.5, 0.0], 0.0, 1.0, 1.0)
    assert kernel.variation_constants(one).k_const == pytest.approx(math.sqrt(2 / math.pi), rel=1e-15)
    two = NetworkParams(2 * one.weights, 2 * one.inputs, 0.0)
    assert kernel.variation_constants(two).k_const == pytest.approx(2 * math.sqrt(2 / math.pi), rel=1e-15)


def test_variation_constants_formula(canonical):
    vc = kernel.variation_constants(canonical)
    g = canonical.leak
    k = math.sqrt(2 / math.pi) * math.sqrt((1 + g) / (1 - g)) * (0.5 + 0.3 + 0.6 + 0.4)
    assert vc.k_const == pytest.approx(k, rel=1e-14)
    assert vc.a_bound <= vc.b_bound
    # hazard norm e^{-b^2/2} / int_b^inf e^{-u^2/2} du
    b = mpmath.mpf(vc.b_bound)
    norm = mpmath.exp(-b * b / 2) / mpmath.quad(lambda u: mpmath.exp(-u * u / 2), [b, mpmath.inf])
    assert vc.hazard_norm == pytest.approx(float(norm), rel=1e-12)
    assert vc.k_prime == pytest.approx(math.sqrt(2 * math.pi) * float(norm) * k, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(params_strategy(max_neurons=2), st.integers(1, 8), st.data())
def test_continuity_bound_property(p, k, data):
    vc = kernel.variation_constants(p)
    depth = k + data.draw(st.integers(1, 4))
    n = p.n_neurons
    draw_bits = lambda: np.array(data.draw(st.lists(st.integers(0, 1), min_size=depth * n,
                                                    max_size=depth * n))).reshape(depth, n)
    a, b = draw_bits(), draw_bits()
    b[-k:] = a[-k:]
    nxt = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    pa, pb = kernel.potential(nxt, hist(a), p), kernel.potential(nxt, hist(b), p)
    assert abs(math.exp(pa) - math.exp(pb)) <= vc.k_const * p.leak**k + 1e-12
    assert abs(pa - pb) <= vc.k_prime * p.leak**k + 1e-12


def test_no_fire_bounds_shape(single):
    nf = kernel.no_fire_step_bounds(single)
    assert 0 < nf.pi_minus <= nf.pi_plus < 1
    assert kernel.no_fire_bounds(single, 1) == (nf.pi_minus, nf.pi_plus)
    seq = [kernel.no_fire_bounds(single, m) for m in range(1, 8)]
    lo_ratio = [seq[m + 1][0] / seq[m][0] for m in range(6)]
    hi_ratio = [seq[m + 1][1] / seq[m][1] for m in range(6)]
    np.testing.assert_allclose(lo_ratio, nf.pi_minus, rtol=1e-12)
    np.testing.assert_allclose(hi_ratio, nf.pi_plus, rtol=1e-12)
    for lo, hi in seq:
        assert 0 < lo < hi < 1
    with pytest.raises(ValueError):
        kernel.no_fire_bounds(single, 0)


def test_every_silence_probability_inside_step_bounds():
    rng = np.random.default_rng(8)
    for _ in range(30):
        p = random_params(rng)
        nf = kernel.no_fire_step_bounds(p)
        lt = kernel.log_transition_table(p, max(1, 6 // p.n_neurons))
        tab = kernel.moments_table(p, max(1, 6 // p.n_neurons))
        quiet = kernel.gauss_tail(-(p.threshold - tab.drift) / tab.std)
        assert np.all(quiet >= nf.pi_minus * (1 - 1e-12))
        assert np.all(quiet <= nf.pi_plus * (1 + 1e-12))
        assert lt.shape[1] == 1 << p.n_neurons
