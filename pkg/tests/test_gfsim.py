"""Tests for the GF(2^8) arithmetic and the end-to-end decoding simulator.

Field operations are checked against a shift-and-add (peasant) multiplier
and a plain-Python Gaussian elimination built only on scalar ops that are
themselves exhaustively verified.  Simulator statistics are checked against
closed-form laws (union coverage, full-rank probability, sampling
histograms) inside 3-sigma windows; every randomized test runs on a fixed
seed, so the frozen counts are exact reruns, not flaky thresholds.
"""

import itertools

import numpy as np
import pytest

from batsopt import gf256, sim
from batsopt.degopt import DegreeDistribution
from batsopt.errors import SolverFailure, ValidationError
from batsopt.specfun import RankDistribution, full_rank_probability

# ---------------------------------------------------------------------------
# scalar reference implementation
# ---------------------------------------------------------------------------


def peasant_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Shift-and-add product in GF(2^8), vectorized, no tables."""
    a = a.astype(np.int64).copy()
    b = b.astype(np.int64).copy()
    acc = np.zeros_like(a)
    for _ in range(8):
        acc ^= np.where(b & 1, a, 0)
        b >>= 1
        carry = a & 0x80
        a = (a << 1) & 0xFF
        a ^= np.where(carry, gf256.POLY & 0xFF, 0)
    return acc.astype(np.uint8)


_INV_TABLE = None


def reference_inverse(a: int) -> int:
    # brute scan over the verified peasant product, cached once
    global _INV_TABLE
    if _INV_TABLE is None:
        prods = peasant_mul(*np.meshgrid(np.arange(256), np.arange(256), indexing="ij"))
        _INV_TABLE = {x: int(np.nonzero(prods[x] == 1)[0][0]) for x in range(1, 256)}
    return _INV_TABLE[a]


def reference_rank(mat: np.ndarray) -> int:
    """Row reduction with Python ints on top of the scalar reference."""
    rows = [[int(v) for v in row] for row in np.asarray(mat)]
    m = len(rows)
    n = len(rows[0]) if m else 0
    rank = 0
    for col in range(n):
        piv = next((r for r in range(rank, m) if rows[r][col]), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        inv = reference_inverse(rows[rank][col])
        rows[rank] = [int(peasant_mul(np.array(v), np.array(inv))) for v in rows[rank]]
        for r in range(m):
            if r != rank and rows[r][col]:
                f = rows[r][col]
                rows[r] = [
                    rows[r][j] ^ int(peasant_mul(np.array(f), np.array(rows[rank][j])))
                    for j in range(n)
                ]
        rank += 1
    return rank


# ---------------------------------------------------------------------------
# field arithmetic
# ---------------------------------------------------------------------------


class TestScalarOps:
    def test_exp_table_enumerates_nonzero_elements(self):
        # powers of the generator must cycle through every nonzero element
        assert sorted(gf256.EXP[:255].tolist()) == list(range(1, 256))
        assert gf256.EXP[0] == 1
        assert np.array_equal(gf256.EXP[255:510], gf256.EXP[:255])

    def test_log_inverts_exp(self):
        for i in range(255):
            assert gf256.LOG[gf256.EXP[i]] == i

    def test_add_is_xor_exhaustive(self):
        a, b = np.meshgrid(np.arange(256, dtype=np.uint8),
                           np.arange(256, dtype=np.uint8), indexing="ij")
        assert np.array_equal(gf256.add(a, b), a ^ b)

    def test_multiply_matches_peasant_exhaustive(self):
        a, b = np.meshgrid(np.arange(256, dtype=np.uint8),
                           np.arange(256, dtype=np.uint8), indexing="ij")
        assert np.array_equal(gf256.multiply(a, b), peasant_mul(a, b))

    def test_multiply_broadcasts_and_scalars(self):
        assert gf256.multiply(np.uint8(2), np.uint8(3)) == 6
        col = np.array([[1], [2], [7]], dtype=np.uint8)
        row = np.array([[5, 0, 255]], dtype=np.uint8)
        full = gf256.multiply(col, row)
        assert full.shape == (3, 3)
        assert np.array_equal(full, peasant_mul(*np.broadcast_arrays(col, row)))

    def test_inverse_exhaustive(self):
        vals = np.arange(1, 256, dtype=np.uint8)
        inv = gf256.inverse(vals)
        assert np.all(gf256.multiply(vals, inv) == 1)

    def test_inverse_of_zero_rejected(self):
        with pytest.raises(ValidationError):
            gf256.inverse(np.uint8(0))

    def test_distributivity_sample(self):
        rng = np.random.default_rng(5)
        a, b, c = rng.integers(0, 256, size=(3, 4096), dtype=np.uint8)
        lhs = gf256.multiply(a, b ^ c)
        rhs = gf256.multiply(a, b) ^ gf256.multiply(a, c)
        assert np.array_equal(lhs, rhs)


class TestMatrixOps:
    def test_matmul_matches_scalar_reference(self):
        rng = np.random.default_rng(17)
        for m, k, n in [(1, 1, 1), (3, 5, 2), (8, 8, 8), (6, 2, 9)]:
            A = rng.integers(0, 256, size=(m, k), dtype=np.uint8)
            B = rng.integers(0, 256, size=(k, n), dtype=np.uint8)
            ref = np.zeros((m, n), dtype=np.uint8)
            for i, j, t in itertools.product(range(m), range(n), range(k)):
                ref[i, j] ^= peasant_mul(np.array(A[i, t]), np.array(B[t, j]))
            assert np.array_equal(gf256.matmul(A, B), ref)

    def test_matmul_backends_agree(self):
        rng = np.random.default_rng(23)
        A = rng.integers(0, 256, size=(7, 11), dtype=np.uint8)
        B = rng.integers(0, 256, size=(11, 4), dtype=np.uint8)
        assert np.array_equal(gf256.matmul(A, B), gf256._matmul_rows(A, B))

    def test_matmul_shape_mismatch_raises(self):
        with pytest.raises(ValidationError):
            gf256.matmul(np.zeros((2, 3), dtype=np.uint8),
                         np.zeros((4, 2), dtype=np.uint8))

    def test_identity_is_neutral(self):
        rng = np.random.default_rng(29)
        A = rng.integers(0, 256, size=(5, 5), dtype=np.uint8)
        eye = np.eye(5, dtype=np.uint8)
        assert np.array_equal(gf256.matmul(eye, A), A)
        assert np.array_equal(gf256.matmul(A, eye), A)

    def test_rank_matches_reference(self):
        rng = np.random.default_rng(31)
        for m, n in [(1, 1), (3, 3), (5, 8), (8, 5), (8, 8)]:
            for _ in range(8):
                A = rng.integers(0, 256, size=(m, n), dtype=np.uint8)
                assert gf256.matrix_rank(A) == reference_rank(A)

    def test_rank_of_structured_matrices(self):
        assert gf256.matrix_rank(np.zeros((4, 6), dtype=np.uint8)) == 0
        assert gf256.matrix_rank(np.zeros((0, 6), dtype=np.uint8)) == 0
        assert gf256.matrix_rank(np.eye(7, dtype=np.uint8)) == 7
        row = np.array([3, 1, 4, 1, 5], dtype=np.uint8)
        stacked = np.vstack([gf256.multiply(np.uint8(c), row) for c in (1, 2, 9)])
        assert gf256.matrix_rank(stacked) == 1

    def test_row_reduce_leaves_pivot_identity(self):
        rng = np.random.default_rng(37)
        A = rng.integers(0, 256, size=(6, 9), dtype=np.uint8)
        R, piv, rank = gf256.row_reduce(A)
        assert rank == reference_rank(A)
        sub = R[:rank][:, piv]
        assert np.array_equal(sub, np.eye(rank, dtype=np.uint8))
        assert not np.any(R[rank:])

    def test_solve_round_trip_square_and_tall(self):
        rng = np.random.default_rng(41)
        for m, k in [(4, 4), (7, 3)]:
            while True:
                A = rng.integers(0, 256, size=(m, k), dtype=np.uint8)
                if reference_rank(A) == k:
                    break
            X = rng.integers(0, 256, size=(k, 6), dtype=np.uint8)
            B = gf256.matmul(A, X)
            assert np.array_equal(gf256.solve(A, B), X)

    def test_solve_rejects_deficient_and_inconsistent(self):
        A = np.array([[1, 2], [2, 4]], dtype=np.uint8)  # row2 = 2 * row1
        if reference_rank(A) < 2:
            with pytest.raises(ValidationError):
                gf256.solve(A, np.zeros((2, 1), dtype=np.uint8))
        tall = np.array([[1, 0], [0, 1], [1, 1]], dtype=np.uint8)
        good = gf256.matmul(tall, np.array([[9], [4]], dtype=np.uint8))
        bad = good.copy()
        bad[2, 0] ^= 1  # break the only redundant equation
        assert np.array_equal(gf256.solve(tall, good),
                              np.array([[9], [4]], dtype=np.uint8))
        with pytest.raises(ValidationError):
            gf256.solve(tall, bad)

    def test_random_square_full_rank_frequency(self):
        # fraction of invertible 8x8 matrices vs the closed-form probability
        rng = np.random.default_rng(77)
        n_full = sum(
            1 for _ in range(2000)
            if gf256.matrix_rank(rng.integers(0, 256, size=(8, 8), dtype=np.uint8)) == 8
        )
        assert n_full == 1995  # frozen rerun of the seeded draw
        p = full_rank_probability(8, 8, 256)
        sigma = np.sqrt(p * (1 - p) / 2000)
        assert abs(n_full / 2000 - p) <= 3 * sigma


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


class TestSamplers:
    def test_degree_sampler_chi_square(self):
        psi = DegreeDistribution(7, {1: 0.2, 3: 0.5, 7: 0.3})
        draw = sim._degree_sampler(psi)
        rng = np.random.default_rng(101)
        n = 100_000
        counts = {1: 0, 3: 0, 7: 0}
        for _ in range(n):
            counts[draw(rng)] += 1
        for d, p in psi.masses.items():
            sigma = np.sqrt(n * p * (1 - p))
            assert abs(counts[d] - n * p) <= 3 * sigma, (d, counts[d])

    def test_degree_sampler_rejects_empty(self):
        psi = DegreeDistribution(3, {1: 1.0})
        psi.masses.clear()
        with pytest.raises(ValidationError):
            sim._degree_sampler(psi)

    def test_rank_sampler_histogram(self):
        h = RankDistribution.binomial(4, 0.6)
        rng = np.random.default_rng(103)
        n = 100_000
        counts = np.zeros(5, dtype=np.int64)
        for _ in range(n):
            counts[sim._sample_rank(h, rng)] += 1
        for k in range(5):
            p = h.h[k]
            sigma = np.sqrt(n * p * (1 - p))
            assert abs(counts[k] - n * p) <= 3 * sigma, k


# ---------------------------------------------------------------------------
# encoder and channel
# ---------------------------------------------------------------------------


def _inputs(K: int, L: int = 8, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=(K, L), dtype=np.uint8)


class TestEncodeChannel:
    def test_encode_batch_contents(self):
        inputs = _inputs(40)
        psi = DegreeDistribution(12, {12: 1.0})
        batch = sim.encode_batch(inputs, psi, 4, np.random.default_rng(7), batch_id=9)
        assert batch.id == 9
        assert batch.degree == 12
        assert batch.coeff.shape == (4, 12)
        assert gf256.matrix_rank(batch.coeff) == 4
        assert np.array_equal(batch.contributors, np.sort(batch.contributors))
        assert len(set(batch.contributors.tolist())) == 12
        assert np.array_equal(
            batch.payload, gf256.matmul(batch.coeff, inputs[batch.contributors]))

    def test_encode_degree_clamped_to_packet_count(self):
        inputs = _inputs(5)
        psi = DegreeDistribution(12, {12: 1.0})
        batch = sim.encode_batch(inputs, psi, 2, np.random.default_rng(7))
        assert batch.degree == 5

    def test_encode_low_degree_keeps_thin_matrix(self):
        inputs = _inputs(40)
        psi = DegreeDistribution(2, {2: 1.0})
        batch = sim.encode_batch(inputs, psi, 4, np.random.default_rng(7))
        assert batch.coeff.shape == (4, 2)

    def test_encode_validation(self):
        psi = DegreeDistribution(2, {2: 1.0})
        with pytest.raises(ValidationError):
            sim.encode_batch(np.zeros((0, 8), dtype=np.uint8), psi, 2,
                             np.random.default_rng(0))
        with pytest.raises(ValidationError):
            sim.encode_batch(_inputs(4), psi, 0, np.random.default_rng(0))

    def test_channel_rank_zero_erases_everything(self):
        inputs = _inputs(30)
        psi = DegreeDistribution(6, {6: 1.0})
        batch = sim.encode_batch(inputs, psi, 3, np.random.default_rng(1))
        h0 = RankDistribution(3, np.array([1.0, 0, 0, 0]))
        rec = sim.apply_channel(batch, h0, np.random.default_rng(2))
        assert rec.rank == 0
        assert rec.coeff.shape == (0, 6)
        assert rec.payload.shape == (0, inputs.shape[1])

    def test_channel_full_rank_preserves_batch(self):
        inputs = _inputs(30)
        psi = DegreeDistribution(6, {6: 1.0})
        batch = sim.encode_batch(inputs, psi, 3, np.random.default_rng(1))
        hM = RankDistribution.binomial(3, 1.0)
        rec = sim.apply_channel(batch, hM, np.random.default_rng(2))
        assert rec.rank == 3
        # received rows still encode the same contributor packets
        assert np.array_equal(
            rec.payload, gf256.matmul(rec.coeff, inputs[rec.contributors]))

    def test_channel_rank_histogram_matches_distribution(self):
        inputs = _inputs(30)
        psi = DegreeDistribution(6, {6: 1.0})  # degree > M: coeff has full row rank
        h = RankDistribution.binomial(4, 0.6)
        rng = np.random.default_rng(11)
        n = 4000
        counts = np.zeros(5, dtype=np.int64)
        for bid in range(n):
            batch = sim.encode_batch(inputs, psi, 4, rng, batch_id=bid)
            counts[sim.apply_channel(batch, h, rng).rank] += 1
        for k in range(5):
            p = h.h[k]
            sigma = np.sqrt(n * p * (1 - p))
            assert abs(counts[k] - n * p) <= 3 * sigma, k

    def test_channel_batch_size_mismatch(self):
        inputs = _inputs(10)
        psi = DegreeDistribution(3, {3: 1.0})
        batch = sim.encode_batch(inputs, psi, 2, np.random.default_rng(3))
        with pytest.raises(ValidationError):
            sim.apply_channel(batch, RankDistribution.binomial(4, 0.5),
                              np.random.default_rng(4))


# ---------------------------------------------------------------------------
# peeling decoder
# ---------------------------------------------------------------------------


def _received(bid, contributors, coeff, payload):
    coeff = np.asarray(coeff, dtype=np.uint8)
    return sim.ReceivedBatch(
        bid, np.asarray(contributors, dtype=np.int64), coeff,
        np.asarray(payload, dtype=np.uint8), gf256.matrix_rank(coeff))


class TestDecoder:
    def test_single_degree_one_batch(self):
        x = np.array([10, 20, 30], dtype=np.uint8)
        c = np.uint8(7)
        rec = _received(0, [2], [[c]], gf256.multiply(c, x)[None, :])
        state = sim.bp_decode([rec], K=4, eta=1.0)
        assert set(state.decoded) == {2}
        assert np.array_equal(state.decoded[2], x)
        assert state.pending == []

    def test_full_rank_batch_recovers_all_contributors(self):
        inputs = _inputs(8, seed=13)
        rng = np.random.default_rng(14)
        coeff = rng.integers(0, 256, size=(3, 3), dtype=np.uint8)
        while gf256.matrix_rank(coeff) < 3:
            coeff = rng.integers(0, 256, size=(3, 3), dtype=np.uint8)
        contributors = [1, 4, 6]
        rec = _received(0, contributors, coeff, gf256.matmul(coeff, inputs[contributors]))
        state = sim.bp_decode([rec], K=8, eta=1.0)
        assert set(state.decoded) == set(contributors)
        for idx in contributors:
            assert np.array_equal(state.decoded[idx], inputs[idx])

    def test_substitution_ripens_chain(self):
        # batch A pins packet 0; after substitution batch B (rank 1, degree 2)
        # becomes solvable for packet 1
        inputs = _inputs(4, seed=15)
        a = _received(0, [0], [[1]], inputs[[0]])
        cb = np.array([[3, 5]], dtype=np.uint8)
        payload_b = gf256.matmul(cb, inputs[[0, 1]])
        b = _received(1, [0, 1], cb, payload_b)
        state = sim.bp_decode([a, b], K=4, eta=1.0)
        assert set(state.decoded) == {0, 1}
        assert np.array_equal(state.decoded[1], inputs[1])

    def test_unsolvable_batch_stays_pending(self):
        inputs = _inputs(4, seed=16)
        cb = np.array([[3, 5, 7]], dtype=np.uint8)  # rank 1 < degree 3
        rec = _received(5, [0, 1, 2], cb, gf256.matmul(cb, inputs[[0, 1, 2]]))
        state = sim.bp_decode([rec], K=4, eta=1.0)
        assert state.decoded == {}
        assert len(state.pending) == 1
        assert state.pending[0].id == 5
        assert state.pending[0].coeff.shape == (1, 3)

    def test_decoded_set_is_order_invariant(self):
        inputs = _inputs(12, seed=17)
        rng = np.random.default_rng(18)
        psi = DegreeDistribution(4, {1: 0.4, 2: 0.3, 4: 0.3})
        h = RankDistribution.binomial(2, 0.9)
        received = []
        for bid in range(14):
            batch = sim.encode_batch(inputs, psi, 2, rng, batch_id=bid)
            received.append(sim.apply_channel(batch, h, rng))
        keys = set(sim.bp_decode(received, K=12, eta=1.0).decoded)
        for seed in (1, 2, 3):
            perm = np.random.default_rng(seed).permutation(len(received))
            shuffled = [received[i] for i in perm]
            assert set(sim.bp_decode(shuffled, K=12, eta=1.0).decoded) == keys

    def test_early_stop_at_target(self):
        inputs = _inputs(10, seed=19)
        received = [
            _received(i, [i], [[1]], inputs[[i]]) for i in range(10)
        ]
        state = sim.bp_decode(received, K=10, eta=0.5)
        assert len(state.decoded) == 5  # degree-1 solves add one packet each

    def test_decode_target_rounding(self):
        assert sim._decode_target(200, 0.98) == 196
        assert sim._decode_target(256, 0.98) == 251
        assert sim._decode_target(5, 1.0) == 5
        assert sim._decode_target(3, 0.999) == 3

    def test_decoder_validation(self):
        with pytest.raises(ValidationError):
            sim.bp_decode([], K=0, eta=0.9)
        with pytest.raises(ValidationError):
            sim.bp_decode([], K=5, eta=0.0)
        with pytest.raises(ValidationError):
            sim.bp_decode([], K=5, eta=1.5)


# ---------------------------------------------------------------------------
# end-to-end simulation
# ---------------------------------------------------------------------------


class TestSimulateRate:
    def test_round_trip_with_bootstrap_mass(self):
        # low-degree mass plus a strong channel: every seeded trial decodes
        psi = DegreeDistribution(10, {3: 0.3, 4: 0.3, 6: 0.25, 10: 0.15})
        h = RankDistribution.binomial(4, 0.95)
        rep = sim.simulate_rate(psi, h, K=64, n_batches=44, trials=20,
                                rng_seed=11, recovery_fraction=0.9)
        assert rep.decode_target == 58
        assert rep.success_count == 20  # frozen rerun
        assert all(c >= 58 for c in rep.decoded_counts)
        assert rep.success_fraction == 1.0

    def test_union_coverage_law_at_full_recovery(self):
        # rank-M batches of degree M decode exactly the union of their
        # contributor sets; mean coverage follows K(1 - (1 - M/K)^n)
        psi = DegreeDistribution(8, {8: 1.0})
        h = RankDistribution.binomial(8, 1.0)
        rep = sim.simulate_rate(psi, h, K=200, n_batches=28, trials=50,
                                rng_seed=3, recovery_fraction=1.0)
        mean = float(np.mean(rep.decoded_counts))
        expected = 200.0 * (1.0 - (192.0 / 200.0) ** 28)
        sd_mean = float(np.std(rep.decoded_counts, ddof=1)) / np.sqrt(50)
        assert abs(mean - expected) <= 3 * sd_mean
        assert rep.success_count == 0  # full recovery is out of reach here

    def test_moderate_target_always_met(self):
        psi = DegreeDistribution(8, {8: 1.0})
        h = RankDistribution.binomial(8, 1.0)
        rep = sim.simulate_rate(psi, h, K=200, n_batches=28, trials=50,
                                rng_seed=3, recovery_fraction=0.6)
        assert rep.decode_target == 120
        assert rep.success_count == 50  # frozen rerun

    def test_zero_batches(self):
        psi = DegreeDistribution(4, {4: 1.0})
        h = RankDistribution.binomial(2, 0.8)
        rep = sim.simulate_rate(psi, h, K=16, n_batches=0, trials=3, rng_seed=1)
        assert rep.decoded_counts == (0, 0, 0)
        assert rep.success_count == 0

    def test_same_seed_reproduces_report(self):
        psi = DegreeDistribution(6, {2: 0.5, 6: 0.5})
        h = RankDistribution.binomial(3, 0.9)
        kwargs = dict(K=24, n_batches=20, trials=4, rng_seed=42,
                      recovery_fraction=0.8)
        assert (sim.simulate_rate(psi, h, **kwargs).to_dict()
                == sim.simulate_rate(psi, h, **kwargs).to_dict())

    def test_report_dict_layout(self):
        psi = DegreeDistribution(4, {1: 1.0})
        h = RankDistribution.binomial(1, 0.9)
        rep = sim.simulate_rate(psi, h, K=4, n_batches=6, trials=2, rng_seed=9,
                                recovery_fraction=0.5)
        d = rep.to_dict()
        assert list(d) == [
            "packet_count", "batch_size", "packet_len", "recovery_fraction",
            "n_batches", "trials", "rng_seed", "decode_target",
            "success_count", "success_fraction", "mean_decoded_fraction",
            "decoded_counts", "trial_seeds",
        ]
        assert d["trial_seeds"] == [[9, 0], [9, 1]]
        assert len(d["decoded_counts"]) == 2

    def test_simulation_validation(self):
        psi = DegreeDistribution(4, {4: 1.0})
        h = RankDistribution.binomial(2, 0.8)
        with pytest.raises(ValidationError):
            sim.simulate_rate(psi, h, K=0, n_batches=1, trials=1, rng_seed=0)
        with pytest.raises(ValidationError):
            sim.simulate_rate(psi, h, K=4, n_batches=-1, trials=1, rng_seed=0)
        with pytest.raises(ValidationError):
            sim.simulate_rate(psi, h, K=4, n_batches=1, trials=0, rng_seed=0)
        with pytest.raises(ValidationError):
            sim.simulate_rate(psi, h, K=4, n_batches=1, trials=1, rng_seed=0,
                              recovery_fraction=0.0)
        with pytest.raises(ValidationError):
            sim.simulate_rate(psi, h, K=4, n_batches=1, trials=1, rng_seed=0,
                              packet_len=0)
