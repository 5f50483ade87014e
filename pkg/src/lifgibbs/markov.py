"""Finite-range Markov (Gibbs) approximation of the spike-train statistics.

States are words coding depth-R histories.  From word ``w`` the chain moves
to one of its 2**N successors ``succ(w, a) = (w >> N) | (a << N*(R-1))``,
``a`` being the code of the new pattern; the matching range-(R+1) block is
``W = w | (a << N*R)``.  Rows are stored sparse as a (2**(N*R), 2**N) array
of log-weights psi(W), so memory grows like 2**(N*(R+1)) rather than
4**(N*R).

The leading eigenvalue ``s`` and its left/right eigenvectors are found by
power iteration; the stationary measure is ``mu(w) = l_w r_w`` with
``<l, r> = 1``, the pressure is ``log s`` and the entropy follows from the
variational principle ``h = P - mu(psi)``.
"""

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import special

from . import kernel
from ._accel import dispatch, njit
from .blocks import SpikeBlock, encode_codes
from .params import NetworkParams, validate_params

DEFAULT_MAX_BITS = int(os.environ.get("LIFGIBBS_MAX_BITS", 20))
TOL = 1e-12
MAX_ITER = 100_000
GROWTH_WINDOW = 10


class StateSpaceTooLarge(ValueError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"power iteration did not converge: residual {residual:.3e} "
            f"after {iterations} sweeps"
        )


def successor_table(n_neurons, depth):
    """(2**(N*R), 2**N) array of successor words."""
    w = np.arange(1 << (n_neurons * depth), dtype=np.int64)
    a = np.arange(1 << n_neurons, dtype=np.int64)
    return (w[:, None] >> n_neurons) | (a[None, :] << (n_neurons * (depth - 1)))


@dataclass(frozen=True, eq=False)
class GibbsChain:
    """Range-R chain with sparse rows of log-weights.

    ``log_weights[w, a]`` is psi of the block formed by history ``w``
    followed by pattern ``a``.  For a chain built from network parameters
    the rows are normalized (exp sums to 1) and ``params`` is kept.
    """

    n_neurons: int
    depth: int
    log_weights: np.ndarray
    normalized: bool
    params: Optional[NetworkParams] = None
    successors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        shape = (1 << (self.n_neurons * self.depth), 1 << self.n_neurons)
        lw = np.asarray(self.log_weights, dtype=np.float64)
        if lw.shape != shape:
            raise ValueError(f"log_weights must have shape {shape}, got {lw.shape}")
        if not np.all(np.isfinite(lw)):
            raise ValueError("every legal transition needs a finite log-weight")
        lw.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "successors", successor_table(self.n_neurons, self.depth))

    @property
    def n_states(self):
        return self.log_weights.shape[0]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def psi_blocks(self):
        """psi indexed by the word of the (R+1)-block ``w | a << N*R``."""
        return self.log_weights.T.ravel()

    def entries(self):
        """Iterate ``(word, successor, log_weight)`` over legal transitions."""
        for w in range(self.n_states):
            for a in range(self.log_weights.shape[1]):
                yield w, int(self.successors[w, a]), float(self.log_weights[w, a])


def _check_size(n_neurons, depth, max_bits):
    if depth < 1:
        raise ValueError("range R must be >= 1")
    max_bits = DEFAULT_MAX_BITS if max_bits is None else max_bits
    bits = n_neurons * depth
    if bits > max_bits:
        need = 8 * (1 << (n_neurons * (depth + 1)))
        raise StateSpaceTooLarge(
            f"N*R = {bits} exceeds the cap of {max_bits} bits "
            f"(the transition table alone needs {need} bytes); "
            "raise LIFGIBBS_MAX_BITS to allow it"
        )


def build_chain(params, depth, max_bits=None):
    """Normalized range-R chain of the network, entries exp(psi) = P(a | w)."""
    validate_params(params)
    _check_size(params.n_neurons, depth, max_bits)
    logw = kernel.log_transition_table(params, depth)
    return GibbsChain(params.n_neurons, depth, logw, True, params)


# --- power iteration ----------------------------------------------------------


def _right_sweep_numpy(mat, succ, r):
    return (mat * r[succ]).sum(axis=1)


def _left_sweep_numpy(mat, succ, l):
    return np.bincount(succ.ravel(), weights=(l[:, None] * mat).ravel(), minlength=l.size)


def _power_numpy(mat, succ, v0, left, tol, max_iter, window):
    sweep = _left_sweep_numpy if left else _right_sweep_numpy
    v = v0 / v0.sum()
    growth = np.zeros(window)
    settled = 0
    for it in range(1, max_iter + 1):
        nv = sweep(mat, succ, v)
        g = nv.sum()
        nv /= g
        growth[it % window] = g
        res = np.max(np.abs(nv - v))
        v = nv
        settled = settled + 1 if res < tol else 0
        if settled >= window:
            return v, growth, it, res
    return v, growth, -max_iter, res


@njit
def _power_loop(mat, succ, v0, left, tol, max_iter, window):
    n_states, n_pat = mat.shape
    v = v0 / v0.sum()
    nv = np.empty(n_states)
    growth = np.zeros(window)
    res = np.inf
    settled = 0
    for it in range(1, max_iter + 1):
        if left:
            nv[:] = 0.0
            for w in range(n_states):
                lw = v[w]
                for a in range(n_pat):
                    nv[succ[w, a]] += lw * mat[w, a]
        else:
            for w in range(n_states):
                acc = 0.0
                for a in range(n_pat):
                    acc += mat[w, a] * v[succ[w, a]]
                nv[w] = acc
        g = 0.0
        for w in range(n_states):
            g += nv[w]
        res = 0.0
        for w in range(n_states):
            x = nv[w] / g
            d = abs(x - v[w])
            if d > res:
                res = d
            v[w] = x
        growth[it % window] = g
        if res < tol:
            settled += 1
        else:
            settled = 0
        if settled >= window:
            return v, growth, it, res
    return v, growth, -max_iter, res


_power = dispatch("power_iteration", _power_loop, _power_numpy)


def power_iteration(chain, left, tol=TOL, max_iter=MAX_ITER, start=None):
    """Dominant eigenvector of the transfer matrix (sum-normalized) and eigenvalue.

    Sweeps continue until successive iterates have agreed within ``tol`` for
    ``GROWTH_WINDOW`` sweeps in a row; the eigenvalue is the mean growth factor
    over those sweeps.  Log-weights are shifted by their maximum before
    exponentiation, so the returned value is ``(vector, log_eigenvalue,
    sweeps, residual)``.
    """
    shift = float(chain.log_weights.max())
    mat = np.exp(chain.log_weights - shift)
    v0 = np.ones(chain.n_states) if start is None else np.array(start, dtype=np.float64)
    v, growth, it, res = _power(mat, chain.successors, v0, bool(left), tol, max_iter, GROWTH_WINDOW)
    if it < 0:
        raise ConvergenceError(-it, res)
    return v, math.log(float(np.mean(growth))) + shift, it, res


# --- stationary analysis ------------------------------------------------------


@dataclass(frozen=True)
class StationaryAnalysis:
    """Perron data and derived statistics of a chain.

    ``measure`` is the invariant probability of the depth-R words;
    ``block_measure`` that of the (R+1)-blocks, indexed like
    :meth:`GibbsChain.psi_blocks`.
    """

    left_vec: np.ndarray
    right_vec: np.ndarray
    measure: np.ndarray
    eigenvalue: float
    pressure: float
    entropy: float
    rates: np.ndarray
    block_measure: np.ndarray
    sweeps: int
    residual: float

    def to_dict(self, include_measure=False):
        out = {
            "eigenvalue": self.eigenvalue,
            "pressure": self.pressure,
            "entropy": self.entropy,
            "rates": self.rates.tolist(),
            "sweeps": self.sweeps,
            "residual": self.residual,
        }
        if include_measure:
            out["measure"] = self.measure.tolist()
        return out


def stationary(chain, tol=TOL, max_iter=MAX_ITER):
    """Invariant measure, pressure, entropy and firing rates of ``chain``."""
    left, pressure, it_l, res_l = power_iteration(chain, True, tol, max_iter)
    if chain.normalized:
        right = np.ones(chain.n_states)
        it_r, res_r = 0, 0.0
    else:
        right, _, it_r, res_r = power_iteration(chain, False, tol, max_iter)
        right = right * (chain.n_states / right.sum())
    left = left / np.dot(left, right)
    measure = left * right
    measure = measure / measure.sum()
    # mu(w -> succ) = l_w L_{w,a} r_succ / s
    blocks = left[:, None] * np.exp(chain.log_weights - pressure) * right[chain.successors]
    blocks = blocks / blocks.sum()
    block_measure = blocks.T.ravel()
    entropy = pressure - float(np.sum(blocks * chain.log_weights))
    pats = kernel.pattern_matrix(chain.n_neurons)
    rates = blocks.sum(axis=0) @ pats
    return StationaryAnalysis(
        left, right, measure, math.exp(min(pressure, 700.0)), pressure, entropy, rates, block_measure,
        max(it_l, it_r), max(res_l, res_r),
    )


def transition_matrix(analysis, chain):
    """Row-stochastic (2**(N*R), 2**N) matrix Q of the Gibbs Markov chain.

    For a normalized chain this is just exp(psi).
    """
    r = analysis.right_vec
    q = np.exp(chain.log_weights - analysis.pressure) * r[chain.successors] / r[:, None]
    return q / q.sum(axis=1, keepdims=True)


def block_distribution(analysis, chain, length):
    """Probabilities of every block of ``length`` patterns, indexed by word.

    Blocks longer than R are obtained by Chapman-Kolmogorov extension of the
    word measure, shorter ones by marginalizing it (keeping the latest
    patterns).
    """
    n, depth = chain.n_neurons, chain.depth
    if length < 1:
        raise ValueError("block length must be >= 1")
    if n * length > 26:
        raise StateSpaceTooLarge(f"2**{n * length} blocks is too many to enumerate")
    p = analysis.measure
    if length <= depth:
        return np.bincount(
            np.arange(p.size) >> (n * (depth - length)), weights=p, minlength=1 << (n * length)
        )
    q = transition_matrix(analysis, chain)
    mask = (1 << (n * depth)) - 1
    cur = depth
    while cur < length:
        idx = np.arange(p.size, dtype=np.int64)
        last = (idx >> (n * (cur - depth))) & mask
        ext = p[:, None] * q[last]  # (blocks, patterns)
        p = ext.T.ravel()  # new block = idx | a << n*cur
        cur += 1
    return p


def block_probability(analysis, chain, block):
    """mu([block]) by Chapman-Kolmogorov: mu(w_0) prod Q(w_k -> w_{k+1})."""
    n, depth = chain.n_neurons, chain.depth
    if block.n_neurons != n:
        raise ValueError("block and chain disagree on the number of neurons")
    if len(block) < depth:
        raise ValueError(f"block shorter than the chain range {depth}")
    codes = block.codes
    w = encode_codes(codes[:depth], n)
    prob = float(analysis.measure[w])
    if len(block) == depth:
        return prob
    q = transition_matrix(analysis, chain)
    for a in codes[depth:]:
        prob *= q[w, a]
        w = (w >> n) | (int(a) << (n * (depth - 1)))
    return prob


def measure_average(analysis, chain, values):
    """Average under the (R+1)-block measure of values indexed by block word."""
    return float(np.dot(analysis.block_measure, values))


def _same_params(a, b):
    if a.params is not None and b.params is not None:
        p, q = a.params, b.params
        if not (p == q):
            raise ValueError("chains were built from different network parameters")
    if a.n_neurons != b.n_neurons:
        raise ValueError("chains have different numbers of neurons")


def kl_divergence(coarse_analysis, coarse_chain, fine_chain, fine_pressure=None):
    """Divergence rate d(mu_coarse, mu_fine) = P(psi_fine) - mu_coarse(psi_fine) - h(mu_coarse).

    The coarse measure is extended to (R_fine + 1)-blocks before averaging the
    fine potential.  ``fine_pressure`` defaults to 0 for a normalized fine
    chain and is computed otherwise.
    """
    _same_params(coarse_chain, fine_chain)
    if coarse_chain.depth > fine_chain.depth:
        raise ValueError("the coarse range must not exceed the fine range")
    if fine_pressure is None:
        fine_pressure = 0.0 if fine_chain.normalized else stationary(fine_chain).pressure
    mu = block_distribution(coarse_analysis, coarse_chain, fine_chain.depth + 1)
    avg = float(np.dot(mu, fine_chain.psi_blocks()))
    return fine_pressure - avg - coarse_analysis.entropy


# --- Gibbs property ------------------------------------------------------------


def gibbs_ratios(analysis, chain, length, max_bits=22):
    """Ratios mu([c]) / exp(-m P + sum_k psi) for every cylinder and preceding history.

    Each cylinder ``c`` of ``m = length`` patterns is paired with each of the
    2**(N*R) histories ``h`` that may precede it; the potential sum runs over
    the m positions of ``c`` using ``h`` as the missing past.  Returns an
    array of shape (2**(N*R), 2**(N*m)).
    """
    n, depth = chain.n_neurons, chain.depth
    total = n * (depth + length)
    if total > max_bits:
        raise StateSpaceTooLarge(
            f"enumerating {length}-cylinders with their histories needs 2**{total} sequences"
        )
    seq = np.arange(1 << total, dtype=np.int64)
    full = (1 << (n * (depth + 1))) - 1
    psi = chain.psi_blocks()
    q = transition_matrix(analysis, chain).T.ravel()  # indexed by block word
    log_w = np.zeros(seq.size)
    log_joint = np.log(analysis.measure[seq & ((1 << (n * depth)) - 1)])
    for k in range(length):
        blk = (seq >> (n * k)) & full
        log_w += psi[blk]
        log_joint += np.log(q[blk])
    cyl = seq >> (n * depth)
    mu_cyl = np.bincount(cyl, weights=np.exp(log_joint), minlength=1 << (n * length))
    ratio = mu_cyl[cyl] / np.exp(log_w - length * analysis.pressure)
    return ratio.reshape(1 << (n * length), 1 << (n * depth)).T


def gibbs_ratio_bounds(analysis, chain, max_len, max_bits=22):
    """(c1, c2): extreme Gibbs ratios over all cylinders of length 1..max_len."""
    if max_len < chain.depth:
        raise ValueError("max_len must be at least the chain range")
    lo, hi = math.inf, -math.inf
    for m in range(1, max_len + 1):
        r = gibbs_ratios(analysis, chain, m, max_bits)
        lo, hi = min(lo, float(r.min())), max(hi, float(r.max()))
    return lo, hi


# --- membrane potential density -----------------------------------------------


def _moments_for(chain):
    if chain.params is None:
        raise ValueError("membrane statistics need a chain built from network parameters")
    return kernel.moments_table(chain.params, chain.depth)


def membrane_density(analysis, chain, neuron, grid):
    """Stationary density of V_i: Gaussian mixture weighted by the word measure."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or not np.all(np.isfinite(grid)):
        raise ValueError("grid must be a finite 1-d array")
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted")
    tab = _moments_for(chain)
    c = tab.drift[:, neuron]
    s = tab.std[:, neuron]
    mu = analysis.measure
    out = np.zeros_like(grid)
    keep = mu > 0
    for ci, si, wi in zip(c[keep], s[keep], mu[keep]):
        z = (grid - ci) / si
        out += wi * np.exp(-0.5 * z * z) / (si * math.sqrt(2 * math.pi))
    return out


def membrane_cdf(analysis, chain, neuron, values):
    """Mixture CDF of V_i at ``values``."""
    values = np.asarray(values, dtype=np.float64)
    tab = _moments_for(chain)
    z = (values[None, ...] - tab.drift[:, neuron, None]) / tab.std[:, neuron, None]
    return analysis.measure @ special.ndtr(z)


def density_grid(analysis, chain, neuron, points=2001, width=8.0):
    """Grid spanning the drift envelope +- ``width`` of the largest conditional std."""
    tab = _moments_for(chain)
    c = tab.drift[:, neuron]
    s = tab.std[:, neuron].max()
    return np.linspace(c.min() - width * s, c.max() + width * s, points)


def membrane_moments(analysis, chain, neuron):
    """Mean mu(C_i) and variance mu(sigma_i^2) + Var_mu(C_i) of V_i."""
    tab = _moments_for(chain)
    mu = analysis.measure
    mean = float(mu @ tab.drift[:, neuron])
    var = float(mu @ tab.variance[:, neuron] + mu @ (tab.drift[:, neuron] - mean) ** 2)
    return mean, var


# --- sampling from the chain -------------------------------------------------------


def _sample_numpy(cum, w0, uniforms, n_neurons, depth, out):
    w = w0
    shift = n_neurons * (depth - 1)
    for t in range(uniforms.size):
        a = int(np.searchsorted(cum[w], uniforms[t], side="right"))
        if a >= cum.shape[1]:
            a = cum.shape[1] - 1
        out[t] = a
        w = (w >> n_neurons) | (a << shift)
    return out


@njit
def _sample_loop(cum, w0, uniforms, n_neurons, depth, out):
    w = w0
    shift = n_neurons * (depth - 1)
    n_pat = cum.shape[1]
    for t in range(uniforms.size):
        u = uniforms[t]
        a = 0
        while a < n_pat - 1 and cum[w, a] <= u:
            a += 1
        out[t] = a
        w = (w >> n_neurons) | (a << shift)
    return out


_sample = dispatch("sample_chain", _sample_loop, _sample_numpy)


def sample(analysis, chain, length, seed):
    """Stationary raster of ``length`` patterns drawn from the chain itself."""
    rng = np.random.default_rng(seed)
    n, depth = chain.n_neurons, chain.depth
    w0 = int(rng.choice(chain.n_states, p=analysis.measure))
    cum = np.cumsum(transition_matrix(analysis, chain), axis=1)
    codes = np.empty(length, dtype=np.int64)
    _sample(np.ascontiguousarray(cum), w0, rng.random(length), n, depth, codes)
    return SpikeBlock(codes, n, 0)


# --- import / export ------------------------------------------------------------------


def format_chain(chain):
    """Text dump: header line then ``word successor log_weight`` per transition."""
    lines = [
        f"# lifgibbs-chain N={chain.n_neurons} R={chain.depth} "
        f"normalized={int(chain.normalized)}"
    ]
    w = np.repeat(np.arange(chain.n_states), chain.log_weights.shape[1])
    s = chain.successors.ravel()
    lw = chain.log_weights.ravel()
    lines.extend(f"{a} {b} {c!r}" for a, b, c in zip(w.tolist(), s.tolist(), lw.tolist()))
    return "\n".join(lines) + "\n"


def write_chain(chain, path):
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(
            path,
            n_neurons=chain.n_neurons,
            depth=chain.depth,
            normalized=chain.normalized,
            log_weights=chain.log_weights,
        )
    else:
        path.write_text(format_chain(chain))


def read_chain(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            return GibbsChain(
                int(z["n_neurons"]), int(z["depth"]), z["log_weights"], bool(z["normalized"])
            )
    lines = path.read_text().splitlines()
    head = dict(tok.split("=") for tok in lines[0].lstrip("#").split()[1:])
    n, depth = int(head["N"]), int(head["R"])
    lw = np.empty((1 << (n * depth), 1 << n))
    filled = np.zeros(lw.shape, dtype=bool)
    shift = n * (depth - 1)
    for ln in lines[1:]:
        if not ln.strip():
            continue
        w, succ, val = ln.split()
        w, succ = int(w), int(succ)
        a = succ >> shift
        if (succ & ((1 << shift) - 1)) != (w >> n):
            raise ValueError(f"illegal transition {w} -> {succ}")
        lw[w, a] = float(val)
        filled[w, a] = True
    if not filled.all():
        raise ValueError("chain file is missing transitions")
    return GibbsChain(n, depth, lw, bool(int(head["normalized"])))


def analysis_report(analysis, include_measure=False):
    return json.dumps(analysis.to_dict(include_measure), indent=2)

