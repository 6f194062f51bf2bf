"""Hierarchical, query-consistent randomness indexed by multi-indices.

Every multi-index ``theta`` owns two independent keyed streams: one
uniform ``r^theta`` and one d-dimensional Brownian path ``W^theta``. The
stream generator is counter based (BLAKE2b keyed by a 256-bit key derived
from the master seed and the index), so a draw depends only on
``(master_seed, theta, stream position)``.

Brownian paths are realized lazily. A query at a new time ``t`` is sampled
from the exact conditional law given the already realized neighbours:
a Brownian bridge if ``t`` falls between two cached times, a forward
Gaussian increment otherwise. Within one :class:`RealizationContext`
all answers therefore belong to one Brownian path.
"""

from __future__ import annotations

import hashlib
import math
import struct
from bisect import bisect_left
from typing import Iterable, Union

import numpy as np
from scipy.special import ndtri

from .cost import CostCounters

Index = tuple
IndexLike = Union[int, Iterable[int]]

_MASK64 = (1 << 64) - 1
_KEY_PERSON = b"mlpfbsde/key"
_UNIFORM_PERSON = b"mlpfbsde/unif"
_BROWNIAN_PERSON = b"mlpfbsde/bm"
_TRIAL_PERSON = b"mlpfbsde/trial"
_WORDS_PER_BLOCK = 8
_TWO_M53 = 2.0**-53


def parse_seed(seed: Union[int, str]) -> int:
    """Accept a 64-bit seed as int, decimal string or ``0x`` hex string."""
    if isinstance(seed, str):
        text = seed.strip().lower()
        try:
            value = int(text, 16) if text.startswith("0x") else int(text, 10)
        except ValueError:
            raise ValueError(f"invalid seed {seed!r}") from None
    elif isinstance(seed, (int, np.integer)) and not isinstance(seed, bool):
        value = int(seed)
    else:
        raise TypeError(f"seed must be int or str, got {type(seed).__name__}")
    if not 0 <= value <= _MASK64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {value}")
    return value


def as_index(index: IndexLike) -> Index:
    if isinstance(index, (int, np.integer)):
        return (int(index),)
    out = tuple(int(i) for i in index)
    if not out:
        raise ValueError("a multi-index needs at least one entry")
    return out


def derive_key(master_seed: int, index: IndexLike) -> bytes:
    """256-bit key for ``(master_seed, index)``.

    The encoding includes the index length, so ``(0,)`` and ``(0, 0)`` never
    share a key.
    """
    idx = as_index(index)
    h = hashlib.blake2b(digest_size=32, person=_KEY_PERSON)
    h.update(struct.pack("<QI", master_seed & _MASK64, len(idx)))
    h.update(struct.pack(f"<{len(idx)}q", *idx))
    return h.digest()


def keyed_uniforms(key: bytes, domain: bytes, position: int, count: int) -> np.ndarray:
    """``count`` uniforms in (0, 1) at stream position ``position``.

    Each position consumes a fixed number of 64-byte blocks, so later
    positions do not depend on how many values earlier ones produced.
    """
    if count <= _WORDS_PER_BLOCK:
        buf = hashlib.blake2b(struct.pack("<QQ", position, 0), key=key,
                              person=domain, digest_size=64).digest()
    else:
        buf = b"".join(
            hashlib.blake2b(struct.pack("<QQ", position, j), key=key,
                            person=domain, digest_size=64).digest()
            for j in range(-(-count // _WORDS_PER_BLOCK))
        )
    words = np.frombuffer(buf, dtype="<u8")[:count]
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def trial_seed(seed: int, trial: int) -> int:
    """Master seed of the ``trial``-th independent context of an experiment."""
    h = hashlib.blake2b(struct.pack("<QQ", seed & _MASK64, trial),
                        digest_size=8, person=_TRIAL_PERSON)
    return int.from_bytes(h.digest(), "little")


class BrownianPath:
    """Realized points of one Brownian path, always containing ``(0, 0)``."""

    __slots__ = ("times", "values", "draws")

    def __init__(self, d: int):
        origin = np.zeros(d)
        origin.flags.writeable = False
        self.times = [0.0]
        self.values = {0.0: origin}
        self.draws = 0

    def __len__(self):
        return len(self.times)

    def items(self):
        return [(t, self.values[t]) for t in self.times]


class RealizationContext:
    """One joint realization of all uniforms and Brownian paths.

    Caches are never evicted; build a fresh context per Monte Carlo trial.
    A context must not be shared between threads or processes.
    """

    def __init__(self, master_seed: Union[int, str], d: int, T: float,
                 f_budget: int | None = None):
        if d < 1:
            raise ValueError("dimension must be positive")
        if not T > 0:
            raise ValueError("horizon must be positive")
        self.master_seed = parse_seed(master_seed)
        self.d = int(d)
        self.T = float(T)
        self.f_budget = f_budget
        self.uniform_cache: dict[Index, float] = {}
        self.path_cache: dict[Index, BrownianPath] = {}
        self.u_memo: dict = {}
        self.counters = CostCounters()
        self._keys: dict[Index, bytes] = {}

    def key(self, index: Index) -> bytes:
        k = self._keys.get(index)
        if k is None:
            k = self._keys[index] = derive_key(self.master_seed, index)
        return k

    def touched(self, index: Index) -> bool:
        """Whether any randomness owned by ``index`` itself has been realized."""
        return index in self.uniform_cache or index in self.path_cache


def uniform_time(ctx: RealizationContext, index: IndexLike) -> float:
    idx = index if type(index) is tuple else as_index(index)
    r = ctx.uniform_cache.get(idx)
    if r is None:
        r = float(keyed_uniforms(ctx.key(idx), _UNIFORM_PERSON, 0, 1)[0])
        ctx.uniform_cache[idx] = r
        ctx.counters.scalar_rv_draws += 1
    return r


def brownian_at(ctx: RealizationContext, index: IndexLike, t: float) -> np.ndarray:
    """Value of ``W^index`` at time ``t`` (read-only array of length d)."""
    if not 0.0 <= t <= ctx.T:
        raise ValueError(f"time {t} outside [0, {ctx.T}]")
    idx = index if type(index) is tuple else as_index(index)
    path = ctx.path_cache.get(idx)
    if path is None:
        path = ctx.path_cache[idx] = BrownianPath(ctx.d)
    w = path.values.get(t)
    if w is not None:
        return w

    z = ndtri(keyed_uniforms(ctx.key(idx), _BROWNIAN_PERSON, path.draws, ctx.d))
    path.draws += 1
    ctx.counters.scalar_rv_draws += ctx.d

    times = path.times
    pos = bisect_left(times, t)
    t_lo = times[pos - 1]
    w_lo = path.values[t_lo]
    if pos == len(times):
        w = w_lo + math.sqrt(t - t_lo) * z
    else:
        t_hi = times[pos]
        w_hi = path.values[t_hi]
        span = t_hi - t_lo
        w = (w_lo + ((t - t_lo) / span) * (w_hi - w_lo)
             + math.sqrt((t - t_lo) * (t_hi - t) / span) * z)
    w.flags.writeable = False
    times.insert(pos, t)
    path.values[t] = w
    return w
