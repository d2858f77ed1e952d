"""Field and decodability primitives for batch-code degree optimization.

The model: a source sends batches of ``M`` coded packets over GF(q); the
destination receives each batch through a random linear channel whose rank
follows a distribution ``h`` on ``{0..M}``.  Belief propagation decodes a
batch of degree ``d`` once enough of its contributors are known, and the
probability of that event is governed by three quantities computed here:

* ``regularized_incomplete_beta`` -- I_x(a, b) for integer a, b, evaluated
  as a binomial tail in log space (stable for a + b in the thousands).
* ``full_rank_probability`` -- probability that a uniformly random r x m
  matrix over GF(q) has rank r.
* ``decodability_vector`` -- probability that a batch first becomes
  decodable exactly when its effective degree has dropped to k, for
  k = 1..M.
* ``decode_weight_matrix`` -- the M x D matrix whose (r, d) entry weights
  the contribution of a rank-r batch of degree d to the decoding-progress
  condition at input-recovery fraction x.

``constraint_rows`` assembles the rows ``decode_probs @ weights(x)`` for a
whole grid of x values; that assembly is the hot path and runs through the
numba/numpy kernel in this module.  Everything here is a pure function of
its arguments and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import njit
from .errors import ValidationError

__all__ = [
    "FieldParams",
    "RankDistribution",
    "regularized_incomplete_beta",
    "full_rank_probability",
    "decodability_vector",
    "decode_weight_matrix",
    "constraint_rows",
]


def _is_prime_power(q: int) -> bool:
    if q < 2:
        return False
    n = q
    for p in range(2, math.isqrt(q) + 1):
        if n % p == 0:
            while n % p == 0:
                n //= p
            return n == 1
    return True  # q itself is prime


@dataclass(frozen=True)
class FieldParams:
    """Finite-field size q; must be a prime power."""

    q: int

    def __post_init__(self) -> None:
        if not isinstance(self.q, (int, np.integer)) or not _is_prime_power(int(self.q)):
            raise ValidationError(f"field size must be a prime power >= 2, got {self.q!r}")


@dataclass(frozen=True)
class RankDistribution:
    """Distribution of the batch rank seen at the destination.

    ``h[k]`` is the probability of rank k, for k = 0..M.
    """

    M: int
    h: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ValidationError(f"batch size M must be >= 1, got {self.M}")
        h = np.asarray(self.h, dtype=np.float64)
        if h.shape != (self.M + 1,):
            raise ValidationError(
                f"rank distribution must have M + 1 = {self.M + 1} entries, got shape {h.shape}"
            )
        if np.any(h < -1e-12):
            raise ValidationError("rank probabilities must be nonnegative")
        if abs(float(h.sum()) - 1.0) > 1e-9:
            raise ValidationError(f"rank probabilities must sum to 1, got {float(h.sum()):.12g}")
        object.__setattr__(self, "h", np.maximum(h, 0.0))

    @classmethod
    def binomial(cls, M: int, p: float) -> "RankDistribution":
        """Rank distribution Binomial(M, p), the usual line-network proxy."""
        if not (0.0 <= p <= 1.0):
            raise ValidationError(f"binomial parameter must lie in [0, 1], got {p}")
        ks = np.arange(M + 1)
        logc = np.array([math.lgamma(M + 1) - math.lgamma(k + 1) - math.lgamma(M - k + 1) for k in ks])
        with np.errstate(divide="ignore"):
            lp = np.where(ks > 0, ks * np.log(p) if p > 0 else -np.inf, 0.0)
            lq = np.where(ks < M, (M - ks) * np.log1p(-p) if p < 1 else -np.inf, 0.0)
        h = np.exp(logc + lp + lq)
        h /= h.sum()
        return cls(M, h)

    def expected_rank(self) -> float:
        return float(np.arange(self.M + 1) @ self.h)


@njit(cache=True)
def _binom_tail(x: float, a: int, b: int) -> float:
    # I_x(a, b) = P[Binomial(a + b - 1, x) >= a]; sum whichever tail is shorter.
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    n = a + b - 1
    lx = math.log(x)
    l1x = math.log1p(-x)
    lgn = math.lgamma(n + 1.0)
    if b <= a:
        s = 0.0
        for j in range(a, n + 1):
            s += math.exp(lgn - math.lgamma(j + 1.0) - math.lgamma(n - j + 1.0) + j * lx + (n - j) * l1x)
        return s if s < 1.0 else 1.0
    s = 0.0
    for j in range(0, a):
        s += math.exp(lgn - math.lgamma(j + 1.0) - math.lgamma(n - j + 1.0) + j * lx + (n - j) * l1x)
    out = 1.0 - s
    if out < 0.0:
        return 0.0
    return out if out < 1.0 else 1.0


def regularized_incomplete_beta(x: float, a: int, b: int) -> float:
    """I_x(a, b) for positive integers a, b and x in [0, 1]."""
    if isinstance(x, complex) or not math.isfinite(float(x)) or not (0.0 <= float(x) <= 1.0):
        raise ValidationError(f"x must lie in [0, 1], got {x!r}")
    for name, v in (("a", a), ("b", b)):
        if not isinstance(v, (int, np.integer)) or v < 1:
            raise ValidationError(f"{name} must be a positive integer, got {v!r}")
    return float(_binom_tail(float(x), int(a), int(b)))


def full_rank_probability(r: int, m: int, q: int) -> float:
    """Probability that a uniformly random r x m matrix over GF(q) has rank r.

    Product form prod_{i=0}^{r-1} (1 - q^(i-m)).  The empty product (r <= 0)
    is 1; for r > m the i = m factor vanishes, so the value is 0.
    """
    FieldParams(q)
    if m < 0:
        raise ValidationError(f"m must be nonnegative, got {m}")
    if r <= 0:
        return 1.0
    p = 1.0
    for i in range(r):
        p *= 1.0 - float(q) ** (i - m)
        if p == 0.0:
            return 0.0
    return p


def decodability_vector(rank_dist: RankDistribution, q: int) -> np.ndarray:
    """P[a batch first becomes decodable at effective degree k], k = 1..M.

    Entry k-1 holds sum_{i=k}^{M} full_rank_probability(k, i, q) * h_i / q^(i-k).
    The k = 0 entry is never materialized.
    """
    FieldParams(q)
    M = rank_dist.M
    h = rank_dist.h
    out = np.zeros(M)
    for k in range(1, M + 1):
        acc = 0.0
        for i in range(k, M + 1):
            acc += full_rank_probability(k, i, q) * h[i] / float(q) ** (i - k)
        out[k - 1] = acc
    return out


def decode_weight_matrix(x: float, M: int, D: int) -> np.ndarray:
    """M x D matrix of decoding-progress weights at recovery fraction x.

    Entry (r, d) (1-based) is d when d <= r, and d * I_x(d - r, r) otherwise.
    """
    if not (0.0 < x < 1.0):
        raise ValidationError(f"x must lie in (0, 1), got {x!r}")
    if M < 1 or D < 1:
        raise ValidationError(f"M and D must be >= 1, got M={M}, D={D}")
    out = np.empty((M, D))
    for r in range(1, M + 1):
        for d in range(1, D + 1):
            if d <= r:
                out[r - 1, d - 1] = float(d)
            else:
                out[r - 1, d - 1] = d * _binom_tail(x, d - r, r)
    return out


@njit(cache=True)
def _constraint_rows_kernel(dec: np.ndarray, xs: np.ndarray, D: int) -> np.ndarray:
    M = dec.shape[0]
    n = xs.shape[0]
    out = np.zeros((n, D))
    # tail[k] = sum_{r > k} dec[r] (0-based over degrees), used for the d <= r block
    tail = np.zeros(M + 1)
    for r in range(M - 1, -1, -1):
        tail[r] = tail[r + 1] + dec[r]
    for i in range(n):
        x = xs[i]
        for d in range(1, D + 1):
            acc = tail[d - 1] if d <= M else 0.0
            rmax = M if M < d else d - 1
            for r in range(1, rmax + 1):
                if r < d:
                    acc += dec[r - 1] * _binom_tail(x, d - r, r)
            out[i, d - 1] = d * acc
    return out


def _constraint_rows_numpy(dec: np.ndarray, xs: np.ndarray, D: int) -> np.ndarray:
    M = dec.shape[0]
    n = xs.shape[0]
    out = np.zeros((n, D))
    dd = np.arange(1, D + 1, dtype=np.float64)
    # d <= r block: constant in x
    tail = np.concatenate([np.cumsum(dec[::-1])[::-1], [0.0]])
    top = min(M, D)
    out[:, :top] += tail[:top][None, :]
    # d > r block: I_x(d - r, r) summed over its r-term upper binomial tail
    lx = np.log(xs)[:, None]
    l1x = np.log1p(-xs)[:, None]
    lgam = np.array([math.lgamma(k + 1.0) for k in range(D + M + 1)])
    for r in range(1, M + 1):
        if D <= r:
            break
        d_arr = np.arange(r + 1, D + 1, dtype=np.int64)
        nb = d_arr - 1  # binomial row count
        acc = np.zeros((n, d_arr.shape[0]))
        for t in range(r):
            lchoose = lgam[nb] - lgam[t] - lgam[nb - t]
            acc += np.exp(lchoose + (nb - t) * lx + t * l1x)
        out[:, r:] += dec[r - 1] * np.minimum(acc, 1.0)
    out *= dd[None, :]
    return out


_ROW_CACHE: dict[tuple[bytes, bytes, int], np.ndarray] = {}
_ROW_CACHE_LIMIT = 8


def constraint_rows(decode_probs: np.ndarray, xs: np.ndarray, D: int, use_numba: bool | None = None) -> np.ndarray:
    """Rows ``decode_probs @ decode_weight_matrix(x)`` for every x in xs.

    Returns an (len(xs), D) array; results are cached per (decode_probs, xs, D)
    since the same grid is reused across every solver in a pipeline.
    """
    dec = np.ascontiguousarray(np.asarray(decode_probs, dtype=np.float64))
    xv = np.ascontiguousarray(np.asarray(xs, dtype=np.float64))
    if xv.ndim != 1 or dec.ndim != 1:
        raise ValidationError("decode_probs and xs must be one-dimensional")
    if np.any(xv <= 0.0) or np.any(xv >= 1.0):
        raise ValidationError("grid points must lie in (0, 1)")
    if D < 1:
        raise ValidationError(f"D must be >= 1, got {D}")
    key = (dec.tobytes(), xv.tobytes(), int(D))
    hit = _ROW_CACHE.get(key)
    if hit is not None:
        return hit
    from ._accel import USING_NUMBA

    pick_numba = USING_NUMBA if use_numba is None else use_numba
    if pick_numba:
        rows = _constraint_rows_kernel(dec, xv, int(D))
    else:
        rows = _constraint_rows_numpy(dec, xv, int(D))
    rows.setflags(write=False)
    if len(_ROW_CACHE) >= _ROW_CACHE_LIMIT:
        _ROW_CACHE.pop(next(iter(_ROW_CACHE)))
    _ROW_CACHE[key] = rows
    return rows
