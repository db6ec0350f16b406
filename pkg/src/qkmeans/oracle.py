"""Simulated same-cluster oracles with query accounting.

Noisy answers are persistent without memoization: whether the answer to a
pair is flipped is a pure function of (seed, min index, max index), computed
with the SplitMix64 finalizer.
"""

from __future__ import annotations

import enum

import numpy as np

from .geometry import OUTLIER

HASH_MIXER = "splitmix64"

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


class Answer(enum.IntEnum):
    SAME = 0
    DIFFERENT = 1


class Mode(str, enum.Enum):
    NOISELESS = "noiseless"
    NOISY = "noisy"


def _mix(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix_np(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def pair_uniform(seed: int, a: int, b: int) -> float:
    """Uniform [0, 1) value keyed on the unordered pair {a, b}."""
    lo, hi = (a, b) if a < b else (b, a)
    h = _mix(_mix(_mix(seed & _MASK) ^ lo) ^ hi)
    return (h >> 11) * (1.0 / (1 << 53))


def pair_uniform_many(seed: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    s = np.uint64(_mix(seed & _MASK))
    h = _mix_np(_mix_np(s ^ lo) ^ hi)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


class OracleSession:
    """Answers same-cluster queries against hidden labels and counts them.

    ``labels`` uses OUTLIER for points outside every cluster; any pair that
    involves an outlier has ground answer DIFFERENT. In NOISY mode each
    answer is flipped with probability ``p_e``, the same way every time the
    pair is asked.
    """

    def __init__(self, labels, mode=Mode.NOISELESS, p_e: float = 0.0, seed: int = 0):
        self._labels = np.asarray(labels, dtype=np.int64)
        self.mode = Mode(mode)
        if self.mode is Mode.NOISY:
            if not 0 <= p_e < 0.5:
                raise ValueError("noisy oracle requires 0 <= p_e < 1/2")
        elif p_e != 0:
            raise ValueError("p_e is only meaningful for a noisy oracle")
        self.p_e = float(p_e)
        self.seed = int(seed)
        self.n = len(self._labels)
        self.query_count = 0
        self._seen_scalar: list[int] = []
        self._seen_chunks: list[np.ndarray] = []

    @classmethod
    def noiseless(cls, labels, seed: int = 0) -> "OracleSession":
        return cls(labels, Mode.NOISELESS, 0.0, seed)

    @classmethod
    def noisy(cls, labels, p_e: float, seed: int = 0) -> "OracleSession":
        return cls(labels, Mode.NOISY, p_e, seed)

    @property
    def is_noisy(self) -> bool:
        return self.mode is Mode.NOISY

    def _check(self, a: int, b: int):
        if a == b:
            raise ValueError(f"self-query on point {a} is undefined")
        if not (0 <= a < self.n and 0 <= b < self.n):
            raise IndexError(f"query ({a}, {b}) out of range for n={self.n}")

    def ground(self, a: int, b: int) -> Answer:
        la, lb = self._labels[a], self._labels[b]
        if la != OUTLIER and la == lb:
            return Answer.SAME
        return Answer.DIFFERENT

    def query(self, a: int, b: int) -> Answer:
        a, b = int(a), int(b)
        self._check(a, b)
        self.query_count += 1
        lo, hi = (a, b) if a < b else (b, a)
        self._seen_scalar.append(lo * self.n + hi)
        ans = self.ground(a, b)
        if self.p_e > 0 and pair_uniform(self.seed, a, b) < self.p_e:
            ans = Answer(1 - ans)
        return ans

    def same(self, a: int, b: int) -> bool:
        return self.query(a, b) is Answer.SAME

    def query_many(self, a, b) -> np.ndarray:
        """Vectorized query; returns a boolean array, True where the answer is SAME."""
        a = np.asarray(a, dtype=np.int64).ravel()
        b = np.asarray(b, dtype=np.int64).ravel()
        if a.shape != b.shape:
            raise ValueError("index arrays must have equal length")
        if a.size == 0:
            return np.zeros(0, dtype=bool)
        if np.any(a == b):
            raise ValueError("self-queries are undefined")
        if min(a.min(), b.min()) < 0 or max(a.max(), b.max()) >= self.n:
            raise IndexError("query index out of range")
        self.query_count += a.size
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        self._seen_chunks.append(lo * self.n + hi)
        la, lb = self._labels[a], self._labels[b]
        same = (la != OUTLIER) & (la == lb)
        if self.p_e > 0:
            same ^= pair_uniform_many(self.seed, a, b) < self.p_e
        return same

    @property
    def distinct_pair_count(self) -> int:
        chunks = list(self._seen_chunks)
        if self._seen_scalar:
            chunks.append(np.array(self._seen_scalar, dtype=np.int64))
        if not chunks:
            return 0
        keys = np.unique(np.concatenate(chunks))
        # compact so repeated calls stay cheap
        self._seen_chunks = [keys]
        self._seen_scalar = []
        return int(keys.size)

    def reset_counter(self) -> None:
        self.query_count = 0
        self._seen_scalar = []
        self._seen_chunks = []
