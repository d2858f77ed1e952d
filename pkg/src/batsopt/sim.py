"""Monte-Carlo validation of degree distributions on a GF(2^8) code.

A source holds K packets.  Each batch samples a degree d from the
distribution under test, picks d contributor packets uniformly without
replacement, and emits ``batch_size`` random linear combinations of them.
The network between source and destination is summarized by the rank
distribution of what arrives: each batch passes through one random
transfer matrix whose rank is drawn from that distribution.  The decoder
peels: any batch whose effective coefficient matrix has rank at least its
effective degree is solved outright, solved packets are substituted into
every other batch that references them, and the process repeats until
nothing changes or enough packets are recovered.

Batch ids double as the per-batch seed index, so the encoder-side
randomness of batch b is reproducible from (run seed, trial, b) alone.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from . import gf256
from .degopt import DegreeDistribution
from .errors import SolverFailure, ValidationError
from .specfun import RankDistribution

DEFAULT_PACKET_LEN = 8
_DRAW_ATTEMPTS = 256  # rank-deficient redraws; each failure has odds < 1/128


@dataclass(frozen=True)
class Batch:
    """One coded batch as the source emits it."""

    id: int
    degree: int
    contributors: np.ndarray  # sorted input indices, shape (degree,)
    coeff: np.ndarray         # (batch_size, degree) field elements
    payload: np.ndarray       # (batch_size, packet_len) field elements


@dataclass(frozen=True)
class ReceivedBatch:
    """What the destination sees of one batch after the network."""

    id: int
    contributors: np.ndarray
    coeff: np.ndarray    # (received_rows, effective_degree)
    payload: np.ndarray  # (received_rows, packet_len)
    rank: int            # rank of ``coeff``


@dataclass
class DecoderState:
    """Outcome of a peeling run: recovered packets plus the leftovers."""

    decoded: Dict[int, np.ndarray]
    pending: List[ReceivedBatch] = field(default_factory=list)


def _degree_sampler(psi: DegreeDistribution):
    degrees = np.array(sorted(psi.masses), dtype=np.int64)
    if degrees.size == 0:
        raise ValidationError("degree distribution has no support")
    cum = np.cumsum([psi.masses[int(d)] for d in degrees])
    cum /= cum[-1]
    cum[-1] = 1.0

    def draw(rng: np.random.Generator) -> int:
        return int(degrees[np.searchsorted(cum, rng.random(), side="right")])

    return draw


def _sample_rank(h: RankDistribution, rng: np.random.Generator) -> int:
    cum = np.cumsum(h.h)
    cum[-1] = 1.0
    return int(np.searchsorted(cum, rng.random(), side="right"))


def encode_batch(inputs, psi: DegreeDistribution, batch_size: int,
                 rng: np.random.Generator, batch_id: int = 0) -> Batch:
    """Draw one batch: degree, contributors, coefficients, payload rows.

    The degree is clamped to the number of available packets.  When the
    degree is at least the batch size, the coefficient matrix is redrawn
    until it has full row rank, so a fresh batch never wastes rows.
    """
    inputs = np.asarray(inputs, dtype=np.uint8)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValidationError("inputs must be a nonempty (packets, bytes) array")
    if batch_size < 1:
        raise ValidationError("batch size must be at least 1")
    K = inputs.shape[0]
    degree = min(_degree_sampler(psi)(rng), K)
    contributors = np.sort(rng.choice(K, size=degree, replace=False)).astype(np.int64)
    coeff = None
    for _ in range(_DRAW_ATTEMPTS):
        cand = rng.integers(0, 256, size=(batch_size, degree), dtype=np.uint8)
        if degree < batch_size or gf256.matrix_rank(cand) == batch_size:
            coeff = cand
            break
    if coeff is None:
        raise SolverFailure("no full-rank coefficient draw in the attempt budget")
    payload = gf256.matmul(coeff, inputs[contributors])
    return Batch(int(batch_id), degree, contributors, coeff, payload)


def apply_channel(batch: Batch, h: RankDistribution,
                  rng: np.random.Generator) -> ReceivedBatch:
    """Push a batch through a random transfer matrix of sampled rank."""
    M = batch.payload.shape[0]
    if h.M != M:
        raise ValidationError(
            f"rank distribution is for batch size {h.M}, batch has {M} rows")
    target = _sample_rank(h, rng)
    if target == 0:
        coeff = np.zeros((0, batch.degree), dtype=np.uint8)
        payload = np.zeros((0, batch.payload.shape[1]), dtype=np.uint8)
    else:
        transfer = None
        for _ in range(_DRAW_ATTEMPTS):
            cand = rng.integers(0, 256, size=(target, M), dtype=np.uint8)
            if gf256.matrix_rank(cand) == target:
                transfer = cand
                break
        if transfer is None:
            raise SolverFailure("no full-rank transfer draw in the attempt budget")
        coeff = gf256.matmul(transfer, batch.coeff)
        payload = gf256.matmul(transfer, batch.payload)
    rank = gf256.matrix_rank(coeff)
    return ReceivedBatch(batch.id, batch.contributors.copy(), coeff, payload, rank)


class _Work:
    """Mutable decoder view of one received batch."""

    __slots__ = ("id", "cols", "mat", "pay", "rank", "done")

    def __init__(self, rec: ReceivedBatch):
        self.id = rec.id
        self.cols = np.asarray(rec.contributors, dtype=np.int64).copy()
        self.mat = rec.coeff.copy()
        self.pay = rec.payload.copy()
        self.rank = int(rec.rank)
        self.done = False

    def solvable(self) -> bool:
        return not self.done and self.cols.size >= 1 and self.rank >= self.cols.size


def _decode_target(K: int, eta: float) -> int:
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"recovery fraction must be in (0, 1], got {eta}")
    return min(K, math.ceil(eta * K - 1e-12))


def bp_decode(received: Sequence[ReceivedBatch], K: int, eta: float) -> DecoderState:
    """Peel batches until a fixpoint or until eta*K packets are recovered.

    A batch is ripe when its effective coefficient matrix has rank at
    least its effective degree; solving it recovers every remaining
    contributor at once.  Each recovered packet is substituted into the
    other batches that reference it, which can ripen them in turn.  The
    set of recovered packets does not depend on the processing order.
    """
    if K < 1:
        raise ValidationError("K must be at least 1")
    target = _decode_target(K, eta)
    decoded: Dict[int, np.ndarray] = {}
    works = [_Work(rec) for rec in received]
    by_input: Dict[int, list] = defaultdict(list)
    for w in works:
        for idx in w.cols:
            by_input[int(idx)].append(w)
    queue = deque(w for w in works if w.solvable())
    while queue and len(decoded) < target:
        w = queue.popleft()
        if not w.solvable():
            continue  # ripeness may have been consumed by a substitution
        values = gf256.solve(w.mat, w.pay)
        newly = []
        for pos, idx in enumerate(w.cols):
            idx = int(idx)
            if idx not in decoded:
                decoded[idx] = values[pos].copy()
                newly.append(idx)
        w.done = True
        for idx in newly:
            value = decoded[idx]
            for other in by_input[idx]:
                if other.done or other.cols.size == 0:
                    continue
                hit = np.nonzero(other.cols == idx)[0]
                if hit.size == 0:
                    continue
                pos = int(hit[0])
                other.pay = np.bitwise_xor(
                    other.pay,
                    gf256.multiply(other.mat[:, pos][:, None], value[None, :]),
                )
                other.mat = np.delete(other.mat, pos, axis=1)
                other.cols = np.delete(other.cols, pos)
                other.rank = gf256.matrix_rank(other.mat)
                if other.solvable():
                    queue.append(other)
    pending = [
        ReceivedBatch(w.id, w.cols, w.mat, w.pay, w.rank)
        for w in works
        if not w.done and w.cols.size > 0
    ]
    return DecoderState(decoded=decoded, pending=pending)


@dataclass(frozen=True)
class SimulationReport:
    """Aggregate outcome of repeated encode/channel/decode trials."""

    packet_count: int
    batch_size: int
    packet_len: int
    recovery_fraction: float
    n_batches: int
    trials: int
    rng_seed: int
    decode_target: int
    decoded_counts: tuple
    success_count: int

    @property
    def success_fraction(self) -> float:
        return self.success_count / self.trials

    @property
    def mean_decoded_fraction(self) -> float:
        return float(np.mean(self.decoded_counts)) / self.packet_count

    def to_dict(self) -> dict:
        return {
            "packet_count": self.packet_count,
            "batch_size": self.batch_size,
            "packet_len": self.packet_len,
            "recovery_fraction": self.recovery_fraction,
            "n_batches": self.n_batches,
            "trials": self.trials,
            "rng_seed": self.rng_seed,
            "decode_target": self.decode_target,
            "success_count": self.success_count,
            "success_fraction": self.success_fraction,
            "mean_decoded_fraction": self.mean_decoded_fraction,
            "decoded_counts": list(self.decoded_counts),
            "trial_seeds": [[self.rng_seed, t] for t in range(self.trials)],
        }


def simulate_rate(psi: DegreeDistribution, h: RankDistribution, K: int,
                  n_batches: int, trials: int, rng_seed: int,
                  recovery_fraction: float = 0.98,
                  packet_len: int = DEFAULT_PACKET_LEN) -> SimulationReport:
    """Run independent end-to-end trials and count decoding successes.

    Every random draw comes from a generator seeded with the tuple
    (rng_seed, trial, stream, batch): stream 0 is the source payload,
    stream 1 the per-batch encoder, stream 2 the per-batch channel.
    Reports are therefore bit-reproducible for a fixed seed, and each
    trial could be replayed (or run concurrently) in isolation.
    """
    if K < 1 or trials < 1 or packet_len < 1:
        raise ValidationError("K, trials, and packet_len must be positive")
    if n_batches < 0:
        raise ValidationError("n_batches must be nonnegative")
    target = _decode_target(K, recovery_fraction)
    M = h.M
    decoded_counts = []
    for trial in range(trials):
        pay_rng = np.random.default_rng(np.random.SeedSequence((rng_seed, trial, 0, 0)))
        inputs = pay_rng.integers(0, 256, size=(K, packet_len), dtype=np.uint8)
        received = []
        for bid in range(n_batches):
            enc_rng = np.random.default_rng(np.random.SeedSequence((rng_seed, trial, 1, bid)))
            batch = encode_batch(inputs, psi, M, enc_rng, batch_id=bid)
            ch_rng = np.random.default_rng(np.random.SeedSequence((rng_seed, trial, 2, bid)))
            received.append(apply_channel(batch, h, ch_rng))
        state = bp_decode(received, K, recovery_fraction)
        for idx, value in state.decoded.items():
            if not np.array_equal(value, inputs[idx]):
                raise SolverFailure("decoded payload disagrees with its source packet")
        decoded_counts.append(len(state.decoded))
    success_count = sum(1 for n in decoded_counts if n >= target)
    return SimulationReport(
        packet_count=K,
        batch_size=M,
        packet_len=packet_len,
        recovery_fraction=recovery_fraction,
        n_batches=n_batches,
        trials=trials,
        rng_seed=int(rng_seed),
        decode_target=target,
        decoded_counts=tuple(decoded_counts),
        success_count=success_count,
    )
