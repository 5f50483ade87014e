"""Seeded simulation of the noisy leaky integrate-and-fire network.

One step maps the potentials V(t) to::

    omega(t) = Z(V(t))                                  (emitted pattern)
    V(t+1)   = gamma V(t) (1 - omega(t)) + W omega(t) + I + sigma_B B(t)

with ``Z(x) = 1[x >= theta]`` and B(t) i.i.d. standard normal.

Reproducibility: noise comes from ``numpy.random.default_rng(seed)`` (PCG64),
drawn with ``standard_normal`` in row-major (time, neuron) order, in blocks of
``CHUNK`` steps.  The stream does not depend on the chunking, on whether
traces are kept, or on the kernel backend, so a seed pins the raster.
"""

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ._accel import dispatch, njit
from .blocks import SpikeBlock
from .params import validate_params

CHUNK = 1 << 16
MAX_TRACE_BYTES = int(os.environ.get("LIFGIBBS_MAX_TRACE_BYTES", 2 << 30))


@dataclass(frozen=True)
class SimState:
    potentials: np.ndarray
    time: int
    rng: Optional[np.random.Generator] = None


@dataclass(frozen=True)
class SimOutput:
    """Recorded raster and, optionally, the (T, N) potentials behind it."""

    raster: SpikeBlock
    traces: Optional[np.ndarray] = None


def default_burn_in(gamma):
    # the guard keeps 1 / (1 - 0.9) = 10.000000000000002 from rounding up
    return 10 * math.ceil(1.0 / (1.0 - gamma) - 1e-9)


def initial_state(params, seed=None, potentials=None):
    v = np.zeros(params.n_neurons) if potentials is None else np.array(potentials, dtype=float)
    return SimState(v, 0, np.random.default_rng(seed))


def step(state, params, noise=None):
    """Advance one time step; return the new state and the emitted pattern.

    ``noise`` overrides the standard-normal draw (a length-N vector); the
    generator is left untouched in that case.
    """
    v = np.asarray(state.potentials, dtype=np.float64)
    if noise is None:
        noise = state.rng.standard_normal(params.n_neurons)
    z = (v >= params.threshold).astype(np.float64)
    new_v = (
        params.leak * v * (1.0 - z)
        + params.weights @ z
        + params.inputs
        + params.noise_amp * np.asarray(noise, dtype=np.float64)
    )
    return SimState(new_v, state.time + 1, state.rng), z.astype(np.uint8)


# --- batched stepping kernel ---------------------------------------------------


def _advance_numpy(v, noise, weights, inputs, gamma, theta, sigma_b, codes, traces, keep):
    pow2 = np.int64(1) << np.arange(v.size, dtype=np.int64)
    for t in range(noise.shape[0]):
        z = v >= theta
        if codes.size:
            codes[t] = pow2[z].sum()
        if keep:
            traces[t] = v
        zf = z.astype(np.float64)
        # same summation order as the compiled loop, for bit-identical rasters
        acc = inputs + sigma_b * noise[t]
        for j in range(v.size):
            acc = acc + weights[:, j] * zf[j]
        v = gamma * v * (1.0 - zf) + acc
    return v


@njit
def _advance_loop(v, noise, weights, inputs, gamma, theta, sigma_b, codes, traces, keep):
    n = v.size
    v = v.copy()
    z = np.empty(n)
    nv = np.empty(n)
    record = codes.size > 0
    for t in range(noise.shape[0]):
        code = 0
        for i in range(n):
            if v[i] >= theta:
                z[i] = 1.0
                code |= 1 << i
            else:
                z[i] = 0.0
        if record:
            codes[t] = code
        if keep:
            for i in range(n):
                traces[t, i] = v[i]
        for i in range(n):
            acc = inputs[i] + sigma_b * noise[t, i]
            for j in range(n):
                acc += weights[i, j] * z[j]
            nv[i] = gamma * v[i] * (1.0 - z[i]) + acc
        for i in range(n):
            v[i] = nv[i]
    return v


_advance = dispatch("advance", _advance_loop, _advance_numpy)


def run(params, length, seed, burn_in=None, keep_traces=False, initial=None):
    """Simulate ``burn_in + length`` steps from V(0) = 0 and record the last ``length``.

    Parameters
    ----------
    params : NetworkParams
    length : int
        Number of recorded patterns T >= 1.
    seed : int
        Seed of the PCG64 generator.
    burn_in : int, optional
        Discarded steps; defaults to ``10 * ceil(1 / (1 - gamma))``.
    keep_traces : bool
        Also return the potentials V(t) whose thresholding gives the raster.
    initial : array_like, optional
        Starting potentials instead of zeros.

    Returns
    -------
    SimOutput
        Raster with times ``0 .. length-1`` counted from the end of burn-in.
    """
    validate_params(params)
    if int(length) != length or length < 1:
        raise ValueError("length must be a positive integer")
    if burn_in is None:
        burn_in = default_burn_in(params.leak)
    if int(burn_in) != burn_in or burn_in < 0:
        raise ValueError("burn_in must be a non-negative integer")
    length, burn_in = int(length), int(burn_in)
    n = params.n_neurons
    if keep_traces and length * n * 8 > MAX_TRACE_BYTES:
        raise MemoryError(
            f"traces need {length * n * 8} bytes, above the {MAX_TRACE_BYTES} byte limit "
            "(set LIFGIBBS_MAX_TRACE_BYTES to raise it)"
        )

    rng = np.random.default_rng(seed)
    w = np.ascontiguousarray(params.weights)
    inp = np.ascontiguousarray(params.inputs)
    args = (w, inp, params.leak, params.threshold, params.noise_amp)
    v = np.zeros(n) if initial is None else np.array(initial, dtype=np.float64)
    no_codes = np.empty(0, dtype=np.int64)
    no_traces = np.empty((0, n))

    done = 0
    while done < burn_in:
        m = min(CHUNK, burn_in - done)
        v = _advance(v, rng.standard_normal((m, n)), *args, no_codes, no_traces, False)
        done += m

    codes = np.empty(length, dtype=np.int64)
    traces = np.empty((length, n)) if keep_traces else None
    done = 0
    while done < length:
        m = min(CHUNK, length - done)
        tr = traces[done : done + m] if keep_traces else no_traces
        v = _advance(v, rng.standard_normal((m, n)), *args, codes[done : done + m], tr, keep_traces)
        done += m
    return SimOutput(SpikeBlock(codes, n, 0), traces)


def write_traces(traces, path, start=0):
    """CSV with header ``time,V_1,...,V_N``."""
    traces = np.asarray(traces)
    n = traces.shape[1]
    times = np.arange(start, start + traces.shape[0])
    header = "time," + ",".join(f"V_{i + 1}" for i in range(n))
    np.savetxt(
        Path(path),
        np.column_stack([times, traces]),
        delimiter=",",
        header=header,
        comments="",
        fmt=["%d"] + ["%.17g"] * n,
    )

