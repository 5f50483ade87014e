"""Exact conditional law of the next spiking pattern given a finite history.

Given the spikes over times -R..-1, each membrane potential V_i(0) is Gaussian
with mean (the conditioned drift)::

    C_i = sum_j W_ij x_ij + I_i (1 - gamma**(-tau_i)) / (1 - gamma)
    x_ij = sum_{l=tau_i}^{-1} gamma**(-1-l) omega_j(l)

and variance ``sigma_B**2 (1 - gamma**(-2 tau_i)) / (1 - gamma**2)``, where
tau_i is the last firing time of neuron i in the history (the history start
-R when it did not fire).  Neurons are conditionally independent, so the
probability of the next pattern is a product of Bernoulli factors with spike
probability ``pi((theta - C_i) / sigma_i)``, pi being the standard Gaussian
upper tail.  Everything here depends on the pattern content of the history
only, never on its absolute time labels.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._accel import dispatch, njit
from .blocks import MAX_WORD_BITS, SpikeBlock, last_firing_time, pattern_code

# --- Gaussian tail --------------------------------------------------------


def gauss_tail(x):
    """Standard Gaussian upper tail ``P(Z >= x)``.

    Accurate to full relative precision in both tails; it underflows to 0 only
    beyond x ~ 37.5, use :func:`log_gauss_tail` there.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("gauss_tail needs finite input")
    out = special.ndtr(-x)
    return out if out.ndim else float(out)


def log_gauss_tail(x):
    """``log P(Z >= x)`` without underflow (asymptotic branch for large x)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("log_gauss_tail needs finite input")
    out = special.log_ndtr(-x)
    return out if out.ndim else float(out)


def log_gauss_head(x):
    """``log P(Z < x) = log(1 - pi(x))``, stable for large positive x."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("log_gauss_head needs finite input")
    out = special.log_ndtr(x)
    return out if out.ndim else float(out)


def _log_hazard(x):
    """log of phi(x) / pi(x), the hazard of the standard normal."""
    return -0.5 * x * x - 0.5 * math.log(2 * math.pi) - log_gauss_tail(x)


# --- conditional moments of one history -----------------------------------


@dataclass(frozen=True)
class ConditionalMoments:
    """Mean, variance and last firing time of each V_i(0) given a history.

    ``last_fire`` holds tau_i relative to the present (values in -R..-1).
    """

    drift: np.ndarray
    variance: np.ndarray
    last_fire: np.ndarray

    @property
    def std(self):
        return np.sqrt(self.variance)


def _history_bits(history):
    if not isinstance(history, SpikeBlock):
        raise TypeError("history must be a SpikeBlock")
    return history.bits.astype(np.float64)


def integrated_spikes(history, i, j, params):
    """x_ij: spikes of neuron j since neuron i last fired, discounted by gamma.

    The history is read as ending at time -1, whatever its time labels.
    """
    n = history.n_neurons
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"neuron index out of range 0..{n - 1}")
    bits = _history_bits(history)
    depth = len(history)
    tau = last_firing_time(history, i) - history.start  # 0-based position
    ages = depth - 1 - np.arange(tau, depth)  # -1-l for l = tau-R .. -1
    return float(np.sum(params.leak ** ages * bits[tau:, j]))


def conditional_moments(history, params):
    """Conditional mean and variance of V(0) given ``history`` (times -R..-1)."""
    if history.n_neurons != params.n_neurons:
        raise ValueError("history and params disagree on the number of neurons")
    gamma, n, depth = params.leak, params.n_neurons, len(history)
    bits = _history_bits(history)
    tau = np.array([last_firing_time(history, i) - history.start for i in range(n)])
    since = depth - tau  # -tau_i in present-relative time, in 1..R
    drift = np.empty(n)
    for i in range(n):
        ages = depth - 1 - np.arange(tau[i], depth)
        x_i = (gamma ** ages) @ bits[tau[i] :, :]
        drift[i] = params.weights[i] @ x_i + params.inputs[i] * _geom(gamma, since[i])
    variance = params.noise_amp**2 * (1 - gamma ** (2 * since)) / (1 - gamma**2)
    return ConditionalMoments(drift, variance, (tau - depth).astype(np.int64))


def _geom(gamma, k):
    """(1 - gamma**k) / (1 - gamma) = 1 + gamma + ... + gamma**(k-1)."""
    return (1 - gamma**k) / (1 - gamma)


def _spike_logprobs(moments, params):
    y = (params.threshold - moments.drift) / moments.std
    return log_gauss_tail(y), log_gauss_head(y)


def potential(next_pattern, history, params):
    """log g_0: log-probability of ``next_pattern`` given ``history``."""
    nxt = np.asarray(next_pattern)
    pattern_code(nxt)  # validates 0/1 content
    if nxt.size != params.n_neurons:
        raise ValueError("pattern length does not match the network")
    log_fire, log_quiet = _spike_logprobs(conditional_moments(history, params), params)
    return float(np.sum(np.where(nxt == 1, log_fire, log_quiet)))


def transition_prob(next_pattern, history, params):
    """Probability of ``next_pattern`` at time 0 given ``history`` over -R..-1."""
    nxt = np.asarray(next_pattern)
    pattern_code(nxt)
    if nxt.size != params.n_neurons:
        raise ValueError("pattern length does not match the network")
    p = firing_probabilities(history, params)
    return float(np.prod(np.where(nxt == 1, p, 1 - p)))


def firing_probabilities(history, params):
    """Per-neuron spike probability pi((theta - C_i) / sigma_i)."""
    m = conditional_moments(history, params)
    return gauss_tail(np.atleast_1d((params.threshold - m.drift) / m.std))


# --- tables over every history of a given depth (hot path) -----------------


def _moments_table_numpy(weights, inputs, gamma, sigma_b, depth):
    n = inputs.size
    words = np.arange(1 << (n * depth), dtype=np.int64)
    shifts = (np.arange(depth)[:, None] * n + np.arange(n)[None, :]).astype(np.int64)
    bits = (words[:, None, None] >> shifts[None]) & 1  # (S, R, N): pattern k at -R+k
    fired = bits.astype(bool)
    # latest position with a spike; position 0 (the history start) if none
    last = depth - 1 - np.argmax(fired[:, ::-1, :], axis=1)
    last[~fired.any(axis=1)] = 0
    pos = np.arange(depth)
    disc = gamma ** (depth - 1 - pos).astype(np.float64)  # gamma**(-1-l)
    mask = pos[None, None, :] >= last[:, :, None]  # (S, N_i, R)
    x = np.einsum("sik,k,skj->sij", mask.astype(np.float64), disc, bits.astype(np.float64))
    since = (depth - last).astype(np.float64)
    drift = np.einsum("ij,sij->si", weights, x) + inputs[None, :] * (1 - gamma**since) / (
        1 - gamma
    )
    variance = sigma_b**2 * (1 - gamma ** (2 * since)) / (1 - gamma**2)
    return drift, variance, (last - depth).astype(np.int64)


@njit
def _moments_table_loop(weights, inputs, gamma, sigma_b, depth):
    n = inputs.size
    n_words = 1 << (n * depth)
    drift = np.empty((n_words, n))
    variance = np.empty((n_words, n))
    tau = np.empty((n_words, n), dtype=np.int64)
    disc = np.empty(depth)
    for k in range(depth):
        disc[k] = gamma ** (depth - 1 - k)
    x = np.empty(n)
    for w in range(n_words):
        for i in range(n):
            last = 0
            for k in range(depth - 1, -1, -1):
                if (w >> (k * n + i)) & 1:
                    last = k
                    break
            for j in range(n):
                acc = 0.0
                for k in range(last, depth):
                    if (w >> (k * n + j)) & 1:
                        acc += disc[k]
                x[j] = acc
            c = inputs[i] * (1.0 - gamma ** (depth - last)) / (1.0 - gamma)
            for j in range(n):
                c += weights[i, j] * x[j]
            drift[w, i] = c
            variance[w, i] = sigma_b * sigma_b * (1.0 - gamma ** (2 * (depth - last))) / (
                1.0 - gamma * gamma
            )
            tau[w, i] = last - depth
    return drift, variance, tau


_moments_table = dispatch("moments_table", _moments_table_loop, _moments_table_numpy)


@dataclass(frozen=True)
class MomentsTable:
    """Conditional moments for every history word of a given depth.

    Row ``w`` corresponds to the history decoded from word ``w``.
    """

    drift: np.ndarray  # (2**(N*R), N)
    variance: np.ndarray
    last_fire: np.ndarray
    depth: int

    @property
    def std(self):
        return np.sqrt(self.variance)


def moments_table(params, depth):
    """Conditional moments of all 2**(N*depth) histories, indexed by word."""
    n = params.n_neurons
    if depth < 1:
        raise ValueError("history depth must be >= 1")
    if n * depth > MAX_WORD_BITS:
        raise ValueError("history too deep for word coding")
    drift, variance, tau = _moments_table(
        np.ascontiguousarray(params.weights),
        np.ascontiguousarray(params.inputs),
        params.leak,
        params.noise_amp,
        depth,
    )
    return MomentsTable(drift, variance, tau, depth)


def pattern_matrix(n_neurons):
    """(2**N, N) 0/1 matrix; row ``a`` is the pattern with code ``a``."""
    a = np.arange(1 << n_neurons, dtype=np.int64)
    return ((a[:, None] >> np.arange(n_neurons)) & 1).astype(np.float64)


def log_transition_table(params, depth, table=None):
    """log P(pattern a | history w) for every word ``w`` and pattern code ``a``.

    Returns an array of shape (2**(N*depth), 2**N).
    """
    if table is None:
        table = moments_table(params, depth)
    y = (params.threshold - table.drift) / table.std
    log_fire = special.log_ndtr(-y)
    log_quiet = special.log_ndtr(y)
    pats = pattern_matrix(params.n_neurons)
    return log_fire @ pats.T + log_quiet @ (1.0 - pats).T


# --- regularity constants and envelopes ------------------------------------


def drift_bounds(params):
    """Envelope (C_minus, C_plus) of the conditioned drift over all histories.

    Spike sums lie in [0, 1/(1-gamma)] and the input factor in
    [1, 1/(1-gamma)], so the bounds hold for every history depth.
    """
    gamma = params.leak
    w = params.weights
    inp = params.inputs
    scale = 1.0 / (1.0 - gamma)
    neg = np.where(w < 0, w, 0.0).sum(axis=1) * scale
    pos = np.where(w > 0, w, 0.0).sum(axis=1) * scale
    in_lo = np.minimum(inp, inp * scale)
    in_hi = np.maximum(inp, inp * scale)
    return neg + in_lo, pos + in_hi


def y_envelope(params):
    """Range [y_lo, y_hi] of (theta - C_i) / sigma_i over all neurons and histories."""
    c_lo, c_hi = drift_bounds(params)
    s_lo = params.noise_amp
    s_hi = params.noise_amp / math.sqrt(1.0 - params.leak**2)
    corners = np.stack(
        [(params.threshold - c) / s for c in (c_lo, c_hi) for s in (s_lo, s_hi)]
    )
    return float(corners.min()), float(corners.max())


@dataclass(frozen=True)
class VariationConstants:
    """Constants K, K' of the exponential variation bounds and the y-range [a, b]."""

    k_const: float
    k_prime: float
    a_bound: float
    b_bound: float
    hazard_norm: float


def variation_constants(params):
    """K and K' such that the variations of g_0 and log g_0 decay like K gamma^k."""
    gamma, sigma_b, theta = params.leak, params.noise_amp, params.threshold
    mass = float(np.abs(params.weights).sum() + np.abs(params.inputs).sum())
    k_const = math.sqrt(2 / math.pi) / sigma_b * math.sqrt((1 + gamma) / (1 - gamma)) * mass
    c_lo, c_hi = drift_bounds(params)
    a = math.sqrt(1 - gamma**2) * float(np.min((theta - c_hi) / sigma_b))
    b = float(np.max((theta - c_lo) / sigma_b))
    # sup of phi/pi over [a, b]; the Gaussian hazard is increasing
    hazard = math.exp(_log_hazard(b))
    k_prime = math.sqrt(2 * math.pi) * hazard * k_const
    return VariationConstants(k_const, k_prime, a, b, hazard)


@dataclass(frozen=True)
class NoFireBounds:
    """Per-step bounds 0 < pi_minus <= pi_plus < 1 on not firing."""

    pi_minus: float
    pi_plus: float

    def over(self, m):
        return self.pi_minus**m, self.pi_plus**m


def no_fire_step_bounds(params):
    """Bounds on the probability that a neuron stays silent for one more step.

    The spike probability of any neuron given any past is pi(y) with y in the
    envelope [y_lo, y_hi], hence the silence probability lies in
    [1 - pi(y_lo), 1 - pi(y_hi)].
    """
    y_lo, y_hi = y_envelope(params)
    return NoFireBounds(float(special.ndtr(y_lo)), float(special.ndtr(y_hi)))


def no_fire_bounds(params, horizon):
    """(Pi_minus**m, Pi_plus**m) bracketing P(neuron silent for m consecutive steps)."""
    if int(horizon) != horizon or horizon < 1:
        raise ValueError("horizon must be a positive integer")
    return no_fire_step_bounds(params).over(int(horizon))
