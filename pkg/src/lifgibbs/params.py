"""Network parameters, their validation and the params file format.

Params files are INI documents::

    [network]
    gamma = 0.2
    theta = 1.0
    sigma_b = 1.0

    [weights]
    values = 0.0 0.5
             -0.3 0.0

    [inputs]
    values = 0.6 0.4

``weights.values`` is the row-major N x N matrix (``W[i, j]`` is the weight
from neuron ``j`` onto neuron ``i``); numbers may be separated by whitespace
or commas.  N is taken from the length of ``inputs.values``.
"""

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ParamsError(ValueError):
    """Raised when a parameter set violates the model assumptions.

    ``problems`` lists ``(field, message)`` for every violated invariant.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{name}: {msg}" for name, msg in self.problems))


@dataclass(frozen=True)
class NetworkParams:
    """Parameters of the discrete-time noisy leaky integrate-and-fire network.

    Parameters
    ----------
    weights : (N, N) array_like
        Synaptic weights; ``weights[i, j]`` is added to neuron ``i`` when
        neuron ``j`` spikes.
    inputs : (N,) array_like
        Constant external input of each neuron.
    leak : float
        Leak rate gamma, in [0, 1).
    threshold : float
        Firing threshold theta > 0.
    noise_amp : float
        Noise amplitude sigma_B > 0.
    """

    weights: np.ndarray
    inputs: np.ndarray
    leak: float
    threshold: float = 1.0
    noise_amp: float = 1.0
    _hash: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, ndmin=2)
        i = np.array(self.inputs, dtype=np.float64, ndmin=1)
        if i.ndim != 1:
            raise ParamsError([("inputs", "must be a vector")])
        if w.shape != (i.size, i.size):
            raise ParamsError(
                [("weights", f"shape {w.shape} does not match {i.size} neurons")]
            )
        w.setflags(write=False)
        i.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "inputs", i)
        object.__setattr__(self, "leak", float(self.leak))
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "noise_amp", float(self.noise_amp))
        object.__setattr__(
            self,
            "_hash",
            hash((w.tobytes(), i.tobytes(), self.leak, self.threshold, self.noise_amp)),
        )

    def __eq__(self, other):
        if not isinstance(other, NetworkParams):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.inputs, other.inputs)
            and (self.leak, self.threshold, self.noise_amp)
            == (other.leak, other.threshold, other.noise_amp)
        )

    def __hash__(self):
        return self._hash

    @property
    def n_neurons(self):
        return self.inputs.size

    # symbol-style aliases
    @property
    def gamma(self):
        return self.leak

    @property
    def theta(self):
        return self.threshold

    @property
    def sigma_b(self):
        return self.noise_amp

    def permuted(self, order):
        """Relabel neurons: new neuron ``k`` is old neuron ``order[k]``."""
        order = np.asarray(order)
        return NetworkParams(
            self.weights[np.ix_(order, order)],
            self.inputs[order],
            self.leak,
            self.threshold,
            self.noise_amp,
        )

    def to_dict(self):
        return {
            "n_neurons": self.n_neurons,
            "gamma": self.leak,
            "theta": self.threshold,
            "sigma_b": self.noise_amp,
            "weights": self.weights.tolist(),
            "inputs": self.inputs.tolist(),
        }


def validate_params(candidate):
    """Return ``candidate`` unchanged if it satisfies every model assumption.

    Raises
    ------
    ParamsError
        Listing each violated invariant with the offending field.
    """
    problems = []
    gamma = candidate.leak
    if not math.isfinite(gamma) or gamma < 0:
        problems.append(("leak", "leak must be >= 0"))
    elif gamma >= 1:
        problems.append(("leak", "leak must be < 1"))
    if not (math.isfinite(candidate.threshold) and candidate.threshold > 0):
        problems.append(("threshold", "threshold must be positive"))
    if not (math.isfinite(candidate.noise_amp) and candidate.noise_amp > 0):
        problems.append(("noise_amp", "noise amplitude must be positive"))
    bad = np.argwhere(~np.isfinite(candidate.weights))
    for i, j in bad:
        problems.append((f"weights[{i},{j}]", "weight must be finite"))
    for (i,) in np.argwhere(~np.isfinite(candidate.inputs)):
        problems.append((f"inputs[{i}]", "input must be finite"))
    if problems:
        raise ParamsError(problems)
    return candidate


_NUMBER_SPLIT = re.compile(r"[\s,;]+")


def _numbers(text):
    return [float(tok) for tok in _NUMBER_SPLIT.split(text.strip()) if tok]


def load_params(path):
    """Read and validate a params file (see module docstring)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"params not found: {path}")
    cfg = configparser.ConfigParser()
    cfg.read(path)
    try:
        net = cfg["network"]
        inputs = _numbers(cfg["inputs"]["values"])
        weights = _numbers(cfg["weights"]["values"])
        gamma = net.getfloat("gamma")
        theta = net.getfloat("theta")
        sigma_b = net.getfloat("sigma_b")
    except (KeyError, configparser.Error) as exc:
        raise ParamsError([("file", f"missing section or key {exc}")]) from None
    n = len(inputs)
    if "n_neurons" in net and net.getint("n_neurons") != n:
        raise ParamsError([("n_neurons", f"declared {net['n_neurons']} but {n} inputs")])
    if len(weights) != n * n:
        raise ParamsError([("weights", f"expected {n * n} values, got {len(weights)}")])
    params = NetworkParams(np.reshape(weights, (n, n)), inputs, gamma, theta, sigma_b)
    return validate_params(params)


def dump_params(params):
    """Serialize ``params`` to the params file text format."""
    rows = "\n".join(
        "         " + " ".join(repr(float(x)) for x in row) for row in params.weights
    )
    return (
        "[network]\n"
        f"n_neurons = {params.n_neurons}\n"
        f"gamma = {params.leak!r}\n"
        f"theta = {params.threshold!r}\n"
        f"sigma_b = {params.noise_amp!r}\n\n"
        "[weights]\n"
        f"values =\n{rows}\n\n"
        "[inputs]\n"
        f"values = {' '.join(repr(float(x)) for x in params.inputs)}\n"
    )


def save_params(params, path):
    Path(path).write_text(dump_params(params))
