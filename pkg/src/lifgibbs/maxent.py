"""Maximum-entropy spike-train models built from monomial potentials.

A monomial is a product of spike indicators ``omega_i(t)`` at distinct
(neuron, offset) pairs, offsets in ``-R .. 0`` (history ``-R .. -1``, present
``0``).  A potential ``psi = sum_l lambda_l phi_l`` of range R defines an
unnormalized range-R chain whose transfer matrix has entries
``exp(psi(W))`` on legal transitions; its pressure is the log of the leading
eigenvalue and the derivatives of the pressure are the Gibbs averages of the
monomials.  Fitting maximizes entropy under ``mu(phi_l) = C_l`` by minimizing
the convex dual ``P(lambda) - sum_l lambda_l C_l``.

On the (R+1)-block word ``W`` the pair ``(i, t)`` is bit ``i + (t + R) * N``.
"""

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import markov


class FitError(RuntimeError):
    """Fitting stopped without meeting the tolerance; ``result`` is the best iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True, order=True)
class Monomial:
    """Product of spike indicators at distinct ``(neuron, offset)`` pairs."""

    pairs: tuple = ()

    def __post_init__(self):
        pairs = tuple(sorted((int(i), int(t)) for i, t in self.pairs))
        if len(set(pairs)) != len(pairs):
            raise ValueError(f"repeated (neuron, offset) pair in {pairs}")
        for i, t in pairs:
            if i < 0:
                raise ValueError(f"neuron index {i} is negative")
            if t > 0:
                raise ValueError(f"offset {t} lies in the future")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def of(cls, *pairs):
        return cls(tuple(pairs))

    @property
    def order(self):
        return len(self.pairs)

    @property
    def depth(self):
        """Number of history steps the monomial reaches back."""
        return -min((t for _, t in self.pairs), default=0)

    def canonical(self):
        """Time-translate whose latest offset is 0."""
        if not self.pairs:
            return self
        top = max(t for _, t in self.pairs)
        return Monomial(tuple((i, t - top) for i, t in self.pairs))

    def mask(self, n_neurons, depth):
        """Bit mask of the monomial on (depth+1)-block words."""
        m = 0
        for i, t in self.pairs:
            if i >= n_neurons:
                raise ValueError(f"neuron {i} out of range for {n_neurons} neurons")
            if t < -depth:
                raise ValueError(f"offset {t} outside the range -{depth}..0")
            m |= 1 << (i + (t + depth) * n_neurons)
        return m

    def __str__(self):
        return " ".join(f"({i + 1},{t})" for i, t in self.pairs) or "1"


CONSTANT = Monomial()


def eval_monomial(monomial, block):
    """Value in {0, 1} of the monomial on ``block``; offset 0 is its last pattern."""
    bits = block.bits
    last = len(block) - 1
    for i, t in monomial.pairs:
        if not -last <= t <= 0:
            raise IndexError(f"offset {t} outside a block of length {len(block)}")
        if i >= block.n_neurons:
            raise IndexError(f"neuron {i} out of range")
        if not bits[last + t, i]:
            return 0
    return 1


def design_matrix(monomials, n_neurons, depth):
    """(2**(N*(R+1)), L) 0/1 matrix of every monomial on every (R+1)-block."""
    nbits = n_neurons * (depth + 1)
    if nbits > 26:
        raise markov.StateSpaceTooLarge(f"2**{nbits} blocks is too many to enumerate")
    words = np.arange(1 << nbits, dtype=np.int64)
    masks = np.array([m.mask(n_neurons, depth) for m in monomials], dtype=np.int64)
    return ((words[:, None] & masks[None, :]) == masks[None, :]).astype(np.float64)


@dataclass(frozen=True, eq=False)
class UpletPotential:
    """Range-R potential ``sum_l lambda_l phi_l`` over distinct monomials."""

    depth: int
    monomials: tuple
    coefficients: np.ndarray
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("range R must be >= 1")
        monos = tuple(m if isinstance(m, Monomial) else Monomial(tuple(m)) for m in self.monomials)
        lam = np.array(self.coefficients, dtype=np.float64, ndmin=1)
        if lam.shape != (len(monos),):
            raise ValueError("one coefficient per monomial")
        if len(set(monos)) != len(monos):
            raise ValueError("monomials must be distinct")
        for m in monos:
            if m.depth > self.depth:
                raise ValueError(f"monomial {m} reaches beyond range {self.depth}")
        if not np.all(np.isfinite(lam)):
            raise ValueError("coefficients must be finite")
        lam.setflags(write=False)
        object.__setattr__(self, "monomials", monos)
        object.__setattr__(self, "coefficients", lam)
        object.__setattr__(self, "_index", {m: k for k, m in enumerate(monos)})

    @classmethod
    def from_terms(cls, depth, terms):
        terms = list(terms)
        return cls(depth, tuple(m for m, _ in terms), [c for _, c in terms])

    @property
    def terms(self):
        return list(zip(self.monomials, self.coefficients.tolist()))

    def coefficient(self, monomial):
        k = self._index.get(monomial)
        return 0.0 if k is None else float(self.coefficients[k])

    def with_coefficients(self, coefficients):
        return UpletPotential(self.depth, self.monomials, coefficients)

    def values(self, n_neurons):
        """psi on every (R+1)-block, indexed by block word."""
        if not self.monomials:
            return np.zeros(1 << (n_neurons * (self.depth + 1)))
        return design_matrix(self.monomials, n_neurons, self.depth) @ self.coefficients

    def evaluate(self, block):
        """psi of one block of R+1 patterns."""
        if len(block) != self.depth + 1:
            raise ValueError(f"need a block of {self.depth + 1} patterns")
        return float(
            sum(c * eval_monomial(m, block) for m, c in zip(self.monomials, self.coefficients))
        )


def bernoulli_monomials(n_neurons):
    return [Monomial.of((i, 0)) for i in range(n_neurons)]


def pairwise_monomials(n_neurons):
    """Rates plus instantaneous pairs ``omega_i(0) omega_j(0)``, i < j."""
    pairs = [
        Monomial.of((i, 0), (j, 0)) for i in range(n_neurons) for j in range(i + 1, n_neurons)
    ]
    return bernoulli_monomials(n_neurons) + pairs


# --- spike-block <-> spike-uplet ----------------------------------------------------


def _moebius(values):
    """Coefficients c_S with f(W) = sum_{S subset of W} c_S (fast subset transform)."""
    c = np.array(values, dtype=np.float64)
    size = c.size
    bit = 1
    while bit < size:
        view = c.reshape(-1, 2, bit)
        view[:, 1, :] -= view[:, 0, :]
        bit <<= 1
    return c


def _monomial_of_mask(mask, n_neurons, depth):
    pairs = []
    for b in range(n_neurons * (depth + 1)):
        if mask >> b & 1:
            pairs.append((b % n_neurons, b // n_neurons - depth))
    return Monomial(tuple(pairs))


def block_to_uplet(chain):
    """Monomial expansion of the chain's potential psi(W) over (R+1)-blocks.

    Coefficients that vanish exactly are dropped; the expansion reproduces psi
    on every block.
    """
    n, depth = chain.n_neurons, chain.depth
    coef = _moebius(chain.psi_blocks())
    keep = np.flatnonzero(coef != 0.0)
    monos = tuple(_monomial_of_mask(int(k), n, depth) for k in keep)
    return UpletPotential(depth, monos, coef[keep])


def chain_from_potential(pot, n_neurons):
    """Unnormalized chain with entries exp(psi(w | a << N*R))."""
    vals = pot.values(n_neurons)
    logw = vals.reshape(1 << n_neurons, 1 << (n_neurons * pot.depth)).T
    return markov.GibbsChain(n_neurons, pot.depth, logw, False)


def pressure(pot, n_neurons):
    return markov.stationary(chain_from_potential(pot, n_neurons)).pressure


def expectations(pot, monomials, n_neurons, analysis=None):
    """Gibbs averages mu_psi(phi_l), the gradient of the pressure in lambda."""
    if analysis is None:
        analysis = markov.stationary(chain_from_potential(pot, n_neurons))
    monomials = list(monomials)
    if not monomials:
        return np.zeros(0)
    return analysis.block_measure @ design_matrix(monomials, n_neurons, pot.depth)


# --- fitting ------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    potential: UpletPotential
    pressure: float
    entropy: float
    targets: np.ndarray
    achieved: np.ndarray
    residual: float
    iterations: int
    objective: np.ndarray
    converged: bool = True

    def to_dict(self):
        return {
            "range": self.potential.depth,
            "monomials": [str(m) for m in self.potential.monomials],
            "lambda": self.potential.coefficients.tolist(),
            "targets": self.targets.tolist(),
            "achieved": self.achieved.tolist(),
            "residual": self.residual,
            "pressure": self.pressure,
            "entropy": self.entropy,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _prepare(monomials, targets, depth):
    monos = [m if isinstance(m, Monomial) else Monomial(tuple(m)) for m in monomials]
    targets = np.array(targets, dtype=np.float64, ndmin=1)
    if targets.shape != (len(monos),):
        raise ValueError(f"{len(monos)} monomials but {targets.size} targets")
    if not np.all(np.isfinite(targets)):
        raise ValueError("targets must be finite")
    bad = np.flatnonzero((targets <= 0) | (targets >= 1))
    if bad.size:
        raise ValueError(
            f"boundary target {float(targets[bad[0]])!r} for monomial {monos[bad[0]]}: "
            "targets of pure monomials must lie strictly inside (0, 1)"
        )
    canon = [m.canonical() for m in monos]
    if CONSTANT in canon:
        raise ValueError("the constant monomial is fixed by normalization and cannot be fitted")
    seen = {}
    for m, c in zip(monos, canon):
        if c in seen:
            raise ValueError(f"monomials {seen[c]} and {m} are time-translates of each other")
        seen[c] = m
    for c in canon:
        if c.depth > depth:
            raise ValueError(f"monomial {c} needs range {c.depth} > {depth}")
    return canon, targets


def fit(targets, monomials, n_neurons, depth=1, tol=1e-8, max_iter=20_000, max_norm=50.0, start=None):
    """Maximum-entropy potential matching ``mu(phi_l) = targets[l]``.

    Gradient descent on the dual ``P(lambda) - lambda . C`` with
    Barzilai-Borwein trial steps and Armijo backtracking; gradients are exact
    Gibbs averages.

    Parameters
    ----------
    targets : array_like
        Constraint values C_l in (0, 1).
    monomials : sequence of Monomial
        Pure monomials (no constant term); each is anchored so that its
        latest offset is 0.
    n_neurons, depth : int
        Network size N and range R of the fitted potential.
    tol : float
        Stop when ``max |mu(phi_l) - C_l| <= tol``.
    max_norm : float
        Multipliers beyond this sup-norm signal a target on the boundary of
        the realizable set.

    Raises
    ------
    ValueError
        Boundary targets, redundant or malformed monomials.
    FitError
        Divergence or iteration budget exhausted; ``err.result`` holds the
        best iterate.
    """
    monos, c = _prepare(monomials, targets, depth)
    design = design_matrix(monos, n_neurons, depth)
    lam = np.zeros(len(monos)) if start is None else np.array(start, dtype=np.float64)

    def evaluate(lam):
        pot = UpletPotential(depth, tuple(monos), lam)
        an = markov.stationary(chain_from_potential(pot, n_neurons))
        mu = an.block_measure @ design
        return pot, an, an.pressure - float(lam @ c), mu - c

    pot, an, obj, grad = evaluate(lam)
    history = [obj]
    step = 1.0
    prev = None
    it = 0

    def result(converged):
        mu = grad + c
        return FitResult(
            pot, an.pressure, an.entropy, c.copy(), mu, float(np.max(np.abs(grad))),
            it, np.array(history), converged,
        )

    while float(np.max(np.abs(grad))) > tol:
        if it >= max_iter:
            raise FitError(f"no convergence after {it} iterations", result(False))
        it += 1
        if prev is not None:
            s, y = lam - prev[0], grad - prev[1]
            sy = float(s @ y)
            if sy > 0:
                step = float(s @ s) / sy
        g2 = float(grad @ grad)
        while True:
            trial = lam - step * grad
            t_pot, t_an, t_obj, t_grad = evaluate(trial)
            # the pressure is only known to ~1e-13, so tiny decreases are noise
            if t_obj <= obj - 1e-4 * step * g2 + 1e-13:
                break
            step *= 0.5
            if step < 1e-12:
                raise FitError("line search failed", result(False))
        prev = (lam, grad)
        lam, pot, an, obj, grad = trial, t_pot, t_an, t_obj, t_grad
        history.append(obj)
        if float(np.max(np.abs(lam))) > max_norm:
            raise FitError(
                "multipliers diverge: target on boundary of realizable set", result(False)
            )
    return result(True)


# --- model comparison ---------------------------------------------------------------


def model_divergence(reference_analysis, reference_chain, fitted):
    """Divergence rate of a fitted potential from a reference chain's measure.

    ``d = P(psi) - mu_ref(psi) - h(mu_ref)``, where ``mu_ref(psi)`` is taken
    on (R_fit + 1)-blocks, marginalized from or extended (Chapman-Kolmogorov)
    beyond the reference range.
    """
    n = reference_chain.n_neurons
    vals = fitted.values(n)
    mu = markov.block_distribution(reference_analysis, reference_chain, fitted.depth + 1)
    p_fit = pressure(fitted, n)
    return p_fit - float(mu @ vals) - reference_analysis.entropy


# --- potential files ----------------------------------------------------------------

_PAIR = re.compile(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)")


def parse_monomial(text):
    """Monomial from ``(i,t) (i,t) ...`` with 1-based neurons; ``1`` or empty is constant."""
    text = text.strip()
    if text in ("", "1"):
        return CONSTANT
    pairs = _PAIR.findall(text)
    if not pairs or _PAIR.sub("", text).strip():
        raise ValueError(f"cannot parse monomial {text!r}")
    out = []
    for i, t in pairs:
        if int(i) < 1:
            raise ValueError(f"neuron indices in files start at 1, got {i}")
        out.append((int(i) - 1, int(t)))
    return Monomial(tuple(out))


def format_potential(pot):
    """Text form: ``range R`` then ``lambda <coef> pairs (i,t) ...`` per term."""
    lines = [f"range {pot.depth}"]
    for m, c in pot.terms:
        pairs = " ".join(f"({i + 1},{t})" for i, t in m.pairs)
        lines.append(f"lambda {c!r} pairs {pairs}".rstrip())
    return "\n".join(lines) + "\n"


def parse_potential(text, depth=None):
    monos, coefs = [], []
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if ln.startswith("range"):
            depth = int(ln.split()[1])
            continue
        m = re.fullmatch(r"lambda\s+(\S+)\s+pairs\s*(.*)", ln)
        if m is None:
            raise ValueError(f"bad potential line {ln!r}")
        coefs.append(float(m.group(1)))
        monos.append(parse_monomial(m.group(2)))
    if depth is None:
        depth = max([1] + [mo.depth for mo in monos])
    return UpletPotential(depth, tuple(monos), coefs)


def read_potential(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"potential not found: {path}")
    return parse_potential(path.read_text())


def write_potential(pot, path):
    Path(path).write_text(format_potential(pot))
