"""Spike blocks, rasters and the integer word coding of blocks.

A spiking pattern of N neurons is packed into one integer, bit ``i`` holding
neuron ``i`` (neurons are 0-based in the Python API, 1-based in files).  A
block of R consecutive patterns is coded as the word::

    w = sum_i sum_{k=0}^{R-1} 2**(i + k*N) * omega_i(s + k)

so the earliest pattern sits in the lowest N bits.  With the block indexed
over times -R..-1 this is the exponent ``i + (n + R)*N``.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._accel import dispatch, njit

MAX_WORD_BITS = 62


def pattern_code(bits):
    """Pack a 0/1 vector into its integer code."""
    bits = np.asarray(bits)
    if bits.ndim != 1:
        raise ValueError("a spiking pattern is a 1-d vector")
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("pattern entries must be 0 or 1")
    return int(np.sum(bits.astype(np.int64) << np.arange(bits.size, dtype=np.int64)))


def pattern_bits(code, n_neurons):
    return ((int(code) >> np.arange(n_neurons)) & 1).astype(np.uint8)


def unpack_codes(codes, n_neurons):
    """(T,) pattern codes -> (T, N) uint8 bit matrix."""
    codes = np.asarray(codes, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n_neurons, dtype=np.int64)) & 1).astype(np.uint8)


def pack_bits(bits):
    """(T, N) 0/1 matrix -> (T,) int64 pattern codes."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ValueError("expected a (T, N) array")
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("raster entries must be 0 or 1")
    weights = np.int64(1) << np.arange(bits.shape[1], dtype=np.int64)
    return bits.astype(np.int64) @ weights


@dataclass(frozen=True, eq=False)
class SpikeBlock:
    """Consecutive spiking patterns over times ``start .. start + len - 1``.

    Patterns are stored packed, one integer code per time step.  Instances
    are immutable; the code array is read-only.
    """

    codes: np.ndarray
    n_neurons: int
    start: int = 0

    def __post_init__(self):
        if not 1 <= self.n_neurons <= MAX_WORD_BITS:
            raise ValueError(f"n_neurons must be in 1..{MAX_WORD_BITS}")
        codes = np.array(self.codes, dtype=np.int64, ndmin=1)
        if codes.ndim != 1 or codes.size == 0:
            raise ValueError("a spike block holds at least one pattern")
        if np.any(codes < 0) or np.any(codes >> self.n_neurons):
            raise ValueError("pattern code out of range for n_neurons")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "n_neurons", int(self.n_neurons))
        object.__setattr__(self, "start", int(self.start))

    @classmethod
    def from_bits(cls, bits, start=0):
        """Build from a (T, N) 0/1 array; row ``k`` is the pattern at ``start + k``."""
        bits = np.atleast_2d(np.asarray(bits))
        return cls(pack_bits(bits), bits.shape[1], start)

    @classmethod
    def history(cls, bits):
        """Block from a (R, N) array indexed over times -R..-1."""
        bits = np.atleast_2d(np.asarray(bits))
        return cls.from_bits(bits, start=-bits.shape[0])

    def __len__(self):
        return self.codes.size

    def __eq__(self, other):
        if not isinstance(other, SpikeBlock):
            return NotImplemented
        return (
            self.n_neurons == other.n_neurons
            and self.start == other.start
            and np.array_equal(self.codes, other.codes)
        )

    def __hash__(self):
        return hash((self.codes.tobytes(), self.n_neurons, self.start))

    @property
    def stop(self):
        """Time of the last pattern (inclusive)."""
        return self.start + len(self) - 1

    @property
    def bits(self):
        return unpack_codes(self.codes, self.n_neurons)

    def pattern(self, t):
        """0/1 vector at absolute time ``t``."""
        k = t - self.start
        if not 0 <= k < len(self):
            raise IndexError(f"time {t} outside {self.start}..{self.stop}")
        return pattern_bits(self.codes[k], self.n_neurons)

    def window(self, t0, length):
        """Sub-block over absolute times ``t0 .. t0 + length - 1``."""
        k = t0 - self.start
        if length < 1 or k < 0 or k + length > len(self):
            raise IndexError(f"window {t0}+{length} outside {self.start}..{self.stop}")
        return SpikeBlock(self.codes[k : k + length], self.n_neurons, t0)

    def shifted(self, start):
        """Same patterns relabelled to begin at ``start``."""
        return SpikeBlock(self.codes, self.n_neurons, start)

    def append(self, pattern):
        code = pattern_code(pattern)
        if code >> self.n_neurons:
            raise ValueError("pattern has the wrong number of neurons")
        return SpikeBlock(np.append(self.codes, code), self.n_neurons, self.start)

    def concat(self, other):
        if other.n_neurons != self.n_neurons:
            raise ValueError("cannot join blocks of different network size")
        return SpikeBlock(np.concatenate([self.codes, other.codes]), self.n_neurons, self.start)


Raster = SpikeBlock
"""A raster plot is a (finite) spike block with its start time."""


@dataclass(frozen=True)
class Word:
    """Integer code of a block of ``depth`` patterns of ``n_neurons`` neurons."""

    value: int
    n_neurons: int
    depth: int

    def __post_init__(self):
        nbits = self.n_neurons * self.depth
        if self.n_neurons < 1 or self.depth < 1:
            raise ValueError("n_neurons and depth must be positive")
        if nbits > MAX_WORD_BITS:
            raise ValueError(f"N*R = {nbits} exceeds {MAX_WORD_BITS} bits")
        if not 0 <= self.value < (1 << nbits):
            raise ValueError(f"word {self.value} out of range [0, 2**{nbits})")


def encode_codes(codes, n_neurons):
    """Word value of a sequence of pattern codes (earliest first)."""
    w = 0
    for k, c in enumerate(codes):
        w |= int(c) << (k * n_neurons)
    return w


def decode_value(value, n_neurons, depth):
    """Pattern codes (earliest first) of a word value."""
    mask = (1 << n_neurons) - 1
    return np.array([(value >> (k * n_neurons)) & mask for k in range(depth)], dtype=np.int64)


def encode_block(block, n_neurons=None, depth=None):
    """Word coding of ``block``.

    ``n_neurons`` and ``depth`` are optional checks against the block's own
    shape; a mismatch raises ``ValueError``.
    """
    if n_neurons is not None and n_neurons != block.n_neurons:
        raise ValueError(f"block has {block.n_neurons} neurons, expected {n_neurons}")
    if depth is not None and depth != len(block):
        raise ValueError(f"block has length {len(block)}, expected {depth}")
    return Word(encode_codes(block.codes, block.n_neurons), block.n_neurons, len(block))


def decode_word(word):
    """Block over times -R..-1 whose coding is ``word``."""
    return SpikeBlock(decode_value(word.value, word.n_neurons, word.depth), word.n_neurons, -word.depth)


def follows(w_prev, w_next):
    """True when the transition ``w_prev -> w_next`` is legal.

    ``w_prev`` codes times -R..-1 and ``w_next`` times -R+1..0; they must agree
    on the R-1 shared patterns.
    """
    if (w_prev.n_neurons, w_prev.depth) != (w_next.n_neurons, w_next.depth):
        raise ValueError("words must have the same network size and depth")
    n, r = w_prev.n_neurons, w_prev.depth
    return (w_prev.value >> n) == (w_next.value & ((1 << (n * (r - 1))) - 1))


def successors(value, n_neurons, depth):
    """The 2**N word values that legally follow ``value``, indexed by new pattern."""
    a = np.arange(1 << n_neurons, dtype=np.int64)
    return (np.int64(value) >> n_neurons) | (a << (n_neurons * (depth - 1)))


def last_firing_time(block, neuron):
    """Latest spike time of ``neuron`` in ``block``; the block start if it never fired.

    The start time is also returned when the only spike is at the start.
    """
    if not 0 <= neuron < block.n_neurons:
        raise IndexError(f"neuron {neuron} out of range 0..{block.n_neurons - 1}")
    fired = np.flatnonzero((block.codes >> neuron) & 1)
    if fired.size == 0:
        return block.start
    return block.start + int(fired[-1])


# --- sliding-window word coding (hot path for empirical statistics) ---------


def _sliding_words_numpy(codes, length, n_neurons):
    win = np.lib.stride_tricks.sliding_window_view(codes, length)
    shifts = np.arange(length, dtype=np.int64) * n_neurons
    return np.bitwise_or.reduce(win << shifts, axis=1)


@njit
def _sliding_words_loop(codes, length, n_neurons):
    m = codes.size - length + 1
    out = np.empty(m, dtype=np.int64)
    top = n_neurons * (length - 1)
    w = 0
    for k in range(length):
        w |= codes[k] << (k * n_neurons)
    out[0] = w
    for t in range(1, m):
        w = (w >> n_neurons) | (codes[t + length - 1] << top)
        out[t] = w
    return out


_sliding_words = dispatch("sliding_words", _sliding_words_loop, _sliding_words_numpy)


def sliding_words(codes, length, n_neurons):
    """Word value of every window of ``length`` consecutive patterns."""
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    if length < 1 or codes.size < length:
        raise ValueError(f"need at least {length} patterns, got {codes.size}")
    if length * n_neurons > MAX_WORD_BITS:
        raise ValueError(f"window of {length} patterns exceeds {MAX_WORD_BITS} bits")
    return _sliding_words(codes, length, n_neurons)


# --- raster text format ---------------------------------------------------


def format_raster(raster):
    """Text form: ``N=<n> T=<len> t0=<start>`` then one 0/1 line per step.

    Neuron 1 is the leftmost character.
    """
    n = raster.n_neurons
    body = np.full((len(raster), n + 1), ord("\n"), dtype=np.uint8)
    body[:, :n] = raster.bits + ord("0")
    return f"N={n} T={len(raster)} t0={raster.start}\n" + body.tobytes().decode("ascii")


def write_raster(raster, path):
    Path(path).write_text(format_raster(raster))


def parse_raster(text):
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty raster file")
    try:
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        n, t_len, t0 = int(header["N"]), int(header["T"]), int(header["t0"])
    except (ValueError, KeyError):
        raise ValueError(f"bad raster header {lines[0]!r}") from None
    rows = [ln.strip() for ln in lines[1:] if ln.strip()]
    if len(rows) != t_len:
        raise ValueError(f"header says T={t_len} but found {len(rows)} patterns")
    if any(len(r) != n for r in rows):
        raise ValueError(f"every pattern line must be {n} characters of 0/1")
    bits = np.frombuffer("".join(rows).encode(), dtype=np.uint8).reshape(t_len, n) - ord("0")
    if np.any(bits > 1):
        raise ValueError("pattern lines may contain only 0 and 1")
    return SpikeBlock.from_bits(bits, start=t0)


def read_raster(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"raster not found: {path}")
    return parse_raster(path.read_text())
