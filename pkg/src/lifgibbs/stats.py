"""Empirical estimators on finite rasters.

Block frequencies come from sliding windows of n consecutive patterns, coded
as words exactly like the chain states (earliest pattern in the lowest bits),
so empirical and model measures index the same way.
"""

from dataclasses import dataclass

import numpy as np

from . import markov
from .blocks import sliding_words


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Counts of the distinct n-blocks seen in a raster.

    ``words`` is sorted; ``counts[k]`` is the number of windows equal to
    ``words[k]``.
    """

    block_len: int
    n_neurons: int
    words: np.ndarray
    counts: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())

    @property
    def frequencies(self):
        return self.counts / self.total

    def as_dict(self):
        return dict(zip(self.words.tolist(), self.counts.tolist()))

    def probability(self, word):
        k = np.searchsorted(self.words, word)
        if k < self.words.size and self.words[k] == word:
            return float(self.counts[k]) / self.total
        return 0.0

    def dense(self):
        """Frequencies of all 2**(N*n) blocks, unseen ones at 0."""
        nbits = self.n_neurons * self.block_len
        if nbits > 26:
            raise markov.StateSpaceTooLarge(f"2**{nbits} blocks is too many for a dense vector")
        out = np.zeros(1 << nbits)
        out[self.words] = self.frequencies
        return out

    def block_entropy(self):
        """Plug-in entropy H_n = -sum f log f."""
        f = self.frequencies
        return float(-np.sum(f * np.log(f)))


def empirical_blocks(raster, n):
    """Sliding-window counts of the n-blocks of ``raster``."""
    if n < 1:
        raise ValueError("block length must be >= 1")
    if len(raster) < n:
        raise ValueError(f"raster of length {len(raster)} is shorter than {n}")
    words = sliding_words(raster.codes, n, raster.n_neurons)
    uniq, counts = np.unique(words, return_counts=True)
    return EmpiricalMeasure(n, raster.n_neurons, uniq, counts)


def empirical_rates(raster):
    return raster.bits.mean(axis=0)


def empirical_pairwise(raster, lag=0):
    """N x N matrix of time averages of omega_i(t) omega_j(t + lag)."""
    lag = int(lag)
    if len(raster) < abs(lag) + 1:
        raise ValueError(f"raster of length {len(raster)} is too short for lag {lag}")
    x = raster.bits.astype(np.float64)
    t = x.shape[0] - abs(lag)
    if lag >= 0:
        a, b = x[:t], x[lag:]
    else:
        a, b = x[-lag:], x[:t]
    return a.T @ b / t


def entropy_rate(measure_n, measure_next):
    """Conditional block-entropy estimate H_{n+1} - H_n of the entropy rate.

    Both measures must come from the same raster.  Edge effects of order
    1/T can push the plug-in difference marginally outside [0, N log 2]; the
    result is clipped to that interval.
    """
    if measure_next.block_len != measure_n.block_len + 1:
        raise ValueError("need block lengths n and n+1")
    if measure_next.n_neurons != measure_n.n_neurons:
        raise ValueError("measures disagree on the number of neurons")
    if measure_n.total != measure_next.total + 1:
        raise ValueError("measures do not come from the same raster")
    h = measure_next.block_entropy() - measure_n.block_entropy()
    return float(np.clip(h, 0.0, measure_n.n_neurons * np.log(2.0)))


def raster_entropy_rate(raster, n):
    return entropy_rate(empirical_blocks(raster, n), empirical_blocks(raster, n + 1))


def kl_terms(raster, analysis, chain, n=None):
    """``(d, <psi>_raster, h_emp)``; see :func:`empirical_kl`."""
    if raster.n_neurons != chain.n_neurons:
        raise ValueError("raster and chain disagree on the number of neurons")
    depth = chain.depth
    if len(raster) < depth + 1:
        raise ValueError(f"raster shorter than {depth + 1} patterns")
    n = depth if n is None else n
    w = sliding_words(raster.codes, depth + 1, chain.n_neurons)
    psi = chain.psi_blocks()[w]
    # every finite log-weight is a non-null transition, so no observed window is impossible
    assert np.all(np.isfinite(psi))
    avg = float(psi.mean())
    h = raster_entropy_rate(raster, n)
    return analysis.pressure - avg - h, avg, h


def empirical_kl(raster, analysis, chain, n=None):
    """Plug-in divergence rate of the raster's statistics from a model chain.

    ``d = P(psi) - <psi>_raster - h_emp`` where ``<psi>_raster`` is the time
    average of the chain's potential over the (R+1)-windows of the raster and
    ``h_emp`` the block-entropy estimate at block length ``n`` (default R).
    The estimator is biased by the finite-sample entropy estimate.
    """
    return kl_terms(raster, analysis, chain, n)[0]


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def report(raster, lags=(0, 1), n=None, analysis=None, chain=None):
    """JSON-ready summary: rates, pairwise matrices per lag, entropies, KL."""
    n = 3 if n is None else n
    out = {
        "n_neurons": raster.n_neurons,
        "length": len(raster),
        "rates": empirical_rates(raster).tolist(),
        "pairwise": {str(lag): empirical_pairwise(raster, lag).tolist() for lag in lags},
        "block_length": n,
        "entropy_rate": raster_entropy_rate(raster, n),
    }
    if analysis is not None:
        d, avg, h = kl_terms(raster, analysis, chain, n)
        out["kl"] = {"divergence": d, "mean_potential": avg, "entropy_rate": h}
    return out
