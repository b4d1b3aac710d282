"""Gradient compression schemes behind a single round-trip interface.

Each scheme turns a worker's gradient matrix into a compact payload, the
payloads are combined across workers (all-reduce for linear schemes,
all-gather otherwise), and the combined payload is decompressed into the
dense update everyone applies. The low-rank scheme fuses compression and
aggregation: both of its factor exchanges happen inside the round trip.

Payload sizes are metered in transmitted bits under 32-bit accounting
(floats 32, signs 1, explicit indices 32, seed-derived indices free), while
all internal arithmetic stays in float64.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .comm import tree_reduce
from .linalg import ContractViolation, orthogonalize, orthogonalize_flops
from .seeding import derive_rng

FLOAT_BITS = 32
INDEX_BITS = 32


@dataclass
class CompressionContext:
    """Identifies one compression site: which parameter at which step.

    shared_seed drives every random choice that must coincide across
    workers (warm-start init, index draws, random projections).
    """

    shared_seed: int
    param_index: int = 0
    step: int = 0

    def rng(self, label):
        """Stream tied to (seed, label, parameter, step)."""
        return derive_rng(self.shared_seed, label, self.param_index, self.step)

    def param_rng(self, label):
        """Stream tied to (seed, label, parameter) only; survives steps."""
        return derive_rng(self.shared_seed, label, self.param_index)


# ---------------------------------------------------------------------------
# payloads

@dataclass
class Dense:
    values: np.ndarray  # n x m

    def bits(self):
        return FLOAT_BITS * self.values.size


@dataclass
class LowRank:
    """p @ q.T with orthonormal p columns."""

    p: np.ndarray  # n x r, orthonormal columns
    q: np.ndarray  # m x r

    def bits(self):
        return FLOAT_BITS * (self.p.size + self.q.size)


@dataclass
class RandomProjection:
    """proj = M @ u for a seed-derived random u; u itself costs no bits."""

    proj: np.ndarray  # n x r
    u: np.ndarray     # m x r

    def bits(self):
        return FLOAT_BITS * self.proj.size


@dataclass
class SignNorm:
    shape: tuple
    l1: float
    signs: np.ndarray  # int8, +1/-1, flat

    def bits(self):
        return self.signs.size + FLOAT_BITS


@dataclass
class SignsOnly:
    shape: tuple
    signs: np.ndarray  # int8, +1/-1, flat

    def bits(self):
        return self.signs.size


@dataclass
class SparseTopK:
    shape: tuple
    indices: np.ndarray  # flat, ascending
    values: np.ndarray

    def bits(self):
        return (INDEX_BITS + FLOAT_BITS) * self.values.size


@dataclass
class SparseShared:
    """Random-K slice; indices are re-derived from the shared seed."""

    shape: tuple
    indices: np.ndarray  # flat, ascending, not transmitted
    values: np.ndarray

    def bits(self):
        return FLOAT_BITS * self.values.size


@dataclass
class Block:
    """One contiguous (cyclic) slice of the flattened matrix."""

    shape: tuple
    start: int  # derived from the shared seed, not transmitted
    values: np.ndarray

    @property
    def indices(self):
        total = self.shape[0] * self.shape[1]
        return (self.start + np.arange(self.values.size)) % total

    def bits(self):
        return FLOAT_BITS * self.values.size


@dataclass
class AtomoFactors:
    """Importance-sampled singular triples, scaled to be unbiased."""

    u: np.ndarray  # n x r, columns already scaled by sigma_i / p_i
    v: np.ndarray  # m x r

    def bits(self):
        return FLOAT_BITS * (self.u.size + self.v.size)


def _scatter(shape, indices, values):
    out = np.zeros(shape[0] * shape[1])
    out[indices] = values
    return out.reshape(shape)


def decompress(payload):
    """Dense float64 matrix encoded by any payload type."""
    if isinstance(payload, Dense):
        return payload.values.copy()
    if isinstance(payload, LowRank):
        return payload.p @ payload.q.T
    if isinstance(payload, RandomProjection):
        return payload.proj @ payload.u.T
    if isinstance(payload, SignNorm):
        n_total = payload.signs.size
        return (payload.l1 / n_total) * payload.signs.astype(np.float64).reshape(payload.shape)
    if isinstance(payload, SignsOnly):
        return payload.signs.astype(np.float64).reshape(payload.shape)
    if isinstance(payload, (SparseTopK, SparseShared, Block)):
        return _scatter(payload.shape, payload.indices, payload.values)
    if isinstance(payload, AtomoFactors):
        return payload.u @ payload.v.T
    raise TypeError(f"unknown payload type: {type(payload).__name__}")


def decode_cost(payload):
    """Scalar ops to materialize a payload into a dense matrix."""
    if isinstance(payload, Dense):
        return payload.values.size
    if isinstance(payload, LowRank):
        n, r = payload.p.shape
        return 2 * n * payload.q.shape[0] * r
    if isinstance(payload, RandomProjection):
        n, r = payload.proj.shape
        return 2 * n * payload.u.shape[0] * r
    if isinstance(payload, (SignNorm, SignsOnly)):
        return payload.signs.size
    if isinstance(payload, (SparseTopK, SparseShared, Block)):
        return payload.values.size
    if isinstance(payload, AtomoFactors):
        n, r = payload.u.shape
        return 2 * n * payload.v.shape[0] * r
    raise TypeError(f"unknown payload type: {type(payload).__name__}")


@dataclass
class RoundTrip:
    """What one compressed exchange produced.

    aggregated: the dense update shared by all workers.
    locals: per-worker decompression of that worker's own payload, the
        quantity error feedback subtracts.
    payload: the combined payload when the route produces one (reduce
        family and the fused low-rank scheme), else None.
    """

    aggregated: np.ndarray
    locals: list
    payload: object = None


def _sign_pm1(a):
    # sign with sign(0) = +1
    return np.where(a >= 0, 1, -1).astype(np.int8)


def _clamped_budget(n, m, multiplier):
    return min((n + m) * multiplier, n * m)


class Compressor:
    """Base: rank/budget configuration plus the shared round-trip glue."""

    name = None
    linear = None            # payload combines by averaging values
    route = None             # "allreduce" or "gather"
    uses_error_feedback = True

    def __init__(self, rank=1):
        if rank < 1:
            raise ContractViolation(f"rank must be >= 1, got {rank}")
        self.rank = rank

    def compress(self, m, ctx):
        raise NotImplementedError

    def payload_bits(self, n, m):
        """Transmitted bits for one worker's payload of an n x m matrix."""
        raise NotImplementedError

    def compress_cost(self, n, m):
        """Scalar-op estimate for one compress call (documented model)."""
        raise NotImplementedError

    def round_trip(self, mats, ctx, comm):
        raise NotImplementedError

    def _charge_compress(self, comm, n, m, workers):
        comm.stats.compress_flops += workers * self.compress_cost(n, m)


class ReduceCompressor(Compressor):
    """Linear schemes: payload values are averaged by an all-reduce."""

    linear = True
    route = "allreduce"

    def _values(self, payload):
        raise NotImplementedError

    def _replace_values(self, payload, values):
        raise NotImplementedError

    def round_trip(self, mats, ctx, comm):
        n, m = mats[0].shape
        self._charge_compress(comm, n, m, len(mats))
        payloads = [self.compress(mat, ctx) for mat in mats]
        reduced_values = comm.all_reduce_mean(
            [self._values(p) for p in payloads],
            payload_bits=self.payload_bits(n, m))
        combined = self._replace_values(payloads[0], reduced_values)
        comm.stats.decode_ops += decode_cost(combined)
        aggregated = decompress(combined)
        locals_ = [decompress(p) for p in payloads]
        return RoundTrip(aggregated, locals_, combined)


class GatherCompressor(Compressor):
    """Non-linear schemes: every worker receives all payloads."""

    linear = False
    route = "gather"

    def _combine(self, denses):
        # default: average the decompressed payloads
        return tree_reduce(denses, lambda a, b: a + b) / len(denses)

    def round_trip(self, mats, ctx, comm):
        n, m = mats[0].shape
        self._charge_compress(comm, n, m, len(mats))
        payloads = [self.compress(mat, ctx) for mat in mats]
        gathered = comm.all_gather(payloads, self.payload_bits(n, m))
        comm.stats.decode_ops += sum(decode_cost(p) for p in gathered)
        denses = [decompress(p) for p in gathered]
        aggregated = self._combine(denses)
        locals_ = denses[:len(mats)]
        return RoundTrip(aggregated, locals_)


# ---------------------------------------------------------------------------
# identity

class IdentityCompressor(ReduceCompressor):
    """No compression; the baseline every other scheme is judged against."""

    name = "none"

    def compress(self, m, ctx):
        return Dense(m.copy())

    def payload_bits(self, n, m):
        return FLOAT_BITS * n * m

    def compress_cost(self, n, m):
        return 0

    def _values(self, payload):
        return payload.values

    def _replace_values(self, payload, values):
        return Dense(values)


# ---------------------------------------------------------------------------
# low rank with warm start

def low_rank_iteration(mats, q, comm):
    """One fused power-iteration round over per-worker matrices.

    Executes, in order: p_w = M_w @ q on every worker; p = all-reduce mean;
    p_hat = orthogonalize(p); q_w = M_w.T @ p_hat; q = all-reduce mean.
    Returns (payload, per-worker q_w list). Pure in q: callers own any
    warm-start state.
    """
    n, r = mats[0].shape[0], q.shape[1]
    ps = [mat @ q for mat in mats]
    p = comm.all_reduce_mean(ps, payload_bits=FLOAT_BITS * n * r)
    p_hat = orthogonalize(p)
    qs = [mat.T @ p_hat for mat in mats]
    q_new = comm.all_reduce_mean(qs, payload_bits=FLOAT_BITS * q.shape[0] * r)
    return LowRank(p_hat, q_new), qs


class PowerSGD(ReduceCompressor):
    """Rank-r compression by a single warm-started power-iteration step.

    The q factor of each parameter is kept between steps, so one step per
    optimizer iteration is enough to track the gradients' subspace. The
    warm-start memory is initialized from the shared seed, identically on
    every worker.
    """

    name = "powersgd"

    def __init__(self, rank=1):
        super().__init__(rank)
        self.q_memory = {}

    def effective_rank(self, n, m):
        return min(n, m, self.rank)

    def _q_for(self, ctx, n, m):
        rank = self.effective_rank(n, m)
        q = self.q_memory.get(ctx.param_index)
        if q is None or q.shape != (m, rank):
            q = ctx.param_rng("warm_start_init").standard_normal((m, rank))
        return q

    def round_trip(self, mats, ctx, comm):
        n, m = mats[0].shape
        self._charge_compress(comm, n, m, len(mats))
        payload, qs = low_rank_iteration(mats, self._q_for(ctx, n, m), comm)
        self.q_memory[ctx.param_index] = payload.q
        comm.stats.decode_ops += decode_cost(payload)
        aggregated = decompress(payload)
        # what this worker's matrix looks like through the shared basis;
        # error feedback subtracts exactly this
        locals_ = [payload.p @ q_w.T for q_w in qs]
        return RoundTrip(aggregated, locals_, payload)

    def compress(self, m, ctx):
        """Single-worker fused round; updates the warm-start memory."""
        from .comm import Communicator
        return self.round_trip([m], ctx, Communicator(1)).payload

    def payload_bits(self, n, m):
        return FLOAT_BITS * self.effective_rank(n, m) * (n + m)

    def compress_cost(self, n, m):
        r = self.effective_rank(n, m)
        return 4 * n * m * r + orthogonalize_flops(n, r)

    def _values(self, payload):  # pragma: no cover - fused route
        raise NotImplementedError("fused scheme, see round_trip")

    def _replace_values(self, payload, values):  # pragma: no cover
        raise NotImplementedError("fused scheme, see round_trip")


class BestApproximation(ReduceCompressor):
    """Near-optimal rank-r reference: four fresh subspace iterations per
    call (eight matrix multiplications), no state reuse."""

    name = "bestapprox"
    iterations = 4

    def round_trip(self, mats, ctx, comm):
        n, m = mats[0].shape
        self._charge_compress(comm, n, m, len(mats))
        rank = min(n, m, self.rank)
        q = ctx.rng("fresh_start").standard_normal((m, rank))
        payload = None
        qs = None
        for _ in range(self.iterations):
            payload, qs = low_rank_iteration(mats, q, comm)
            q = payload.q
        comm.stats.decode_ops += decode_cost(payload)
        aggregated = decompress(payload)
        locals_ = [payload.p @ q_w.T for q_w in qs]
        return RoundTrip(aggregated, locals_, payload)

    def compress(self, m, ctx):
        from .comm import Communicator
        return self.round_trip([m], ctx, Communicator(1)).payload

    def payload_bits(self, n, m):
        rank = min(n, m, self.rank)
        return self.iterations * FLOAT_BITS * rank * (n + m)

    def compress_cost(self, n, m):
        rank = min(n, m, self.rank)
        return self.iterations * (4 * n * m * rank + orthogonalize_flops(n, rank))

    def _values(self, payload):  # pragma: no cover - fused route
        raise NotImplementedError("fused scheme, see round_trip")

    def _replace_values(self, payload, values):  # pragma: no cover
        raise NotImplementedError("fused scheme, see round_trip")


# ---------------------------------------------------------------------------
# unbiased random projection

class UnbiasedRankK(ReduceCompressor):
    """Rank-r sketch M @ u with u iid normal of variance 1/r, so the
    decompressed (M u) u^T is an unbiased estimate of M. u comes from the
    shared seed and is never transmitted."""

    name = "unbiased"

    def compress(self, m, ctx):
        rows, cols = m.shape
        rank = min(rows, cols, self.rank)
        u = ctx.rng("projection").standard_normal((cols, rank)) / np.sqrt(rank)
        return RandomProjection(m @ u, u)

    def payload_bits(self, n, m):
        return FLOAT_BITS * min(n, m, self.rank) * n

    def compress_cost(self, n, m):
        rank = min(n, m, self.rank)
        return 2 * n * m * rank + m * rank

    def _values(self, payload):
        return payload.proj

    def _replace_values(self, payload, values):
        return RandomProjection(values, payload.u)


# ---------------------------------------------------------------------------
# sparse schemes

class RandomKCompressor(ReduceCompressor):
    """Keep (n+m)*rank entries at positions drawn without replacement from
    the shared seed; only the values travel."""

    name = "randomk"

    def _indices(self, n, m, ctx):
        budget = _clamped_budget(n, m, self.rank)
        idx = ctx.rng("random_indices").choice(n * m, size=budget, replace=False)
        return np.sort(idx)

    def compress(self, m, ctx):
        rows, cols = m.shape
        idx = self._indices(rows, cols, ctx)
        return SparseShared((rows, cols), idx, m.ravel()[idx])

    def payload_bits(self, n, m):
        return FLOAT_BITS * _clamped_budget(n, m, self.rank)

    def compress_cost(self, n, m):
        return 2 * _clamped_budget(n, m, self.rank)

    def _values(self, payload):
        return payload.values

    def _replace_values(self, payload, values):
        return SparseShared(payload.shape, payload.indices, values)


class RandomBlockCompressor(ReduceCompressor):
    """Keep one contiguous slice of the flattened matrix, starting at a
    shared-seed position; the slice wraps cyclically so every draw keeps
    exactly the budgeted number of values."""

    name = "randomblock"

    def compress(self, m, ctx):
        rows, cols = m.shape
        total = rows * cols
        budget = _clamped_budget(rows, cols, self.rank)
        start = int(ctx.rng("block_start").integers(0, total))
        idx = (start + np.arange(budget)) % total
        return Block((rows, cols), start, m.ravel()[idx])

    def payload_bits(self, n, m):
        return FLOAT_BITS * _clamped_budget(n, m, self.rank)

    def compress_cost(self, n, m):
        return _clamped_budget(n, m, self.rank)

    def _values(self, payload):
        return payload.values

    def _replace_values(self, payload, values):
        return Block(payload.shape, payload.start, values)


class TopKCompressor(GatherCompressor):
    """Keep the (n+m)*rank largest-magnitude entries with their indices.

    Ties prefer the lower flat index. Workers disagree on positions, so the
    payloads are gathered and averaged after scattering.
    """

    name = "topk"

    def compress(self, m, ctx):
        rows, cols = m.shape
        budget = _clamped_budget(rows, cols, self.rank)
        flat = m.ravel()
        order = np.argsort(-np.abs(flat), kind="stable")[:budget]
        idx = np.sort(order)
        return SparseTopK((rows, cols), idx, flat[idx])

    def payload_bits(self, n, m):
        return (INDEX_BITS + FLOAT_BITS) * _clamped_budget(n, m, self.rank)

    def compress_cost(self, n, m):
        return n * m + _clamped_budget(n, m, self.rank)


class SignNormCompressor(GatherCompressor):
    """One sign per entry plus the matrix l1 norm; decompression scales the
    signs by l1 / (n*m), and aggregation averages the workers' estimates."""

    name = "signnorm"

    def compress(self, m, ctx):
        rows, cols = m.shape
        return SignNorm((rows, cols), float(np.sum(np.abs(m))),
                        _sign_pm1(m.ravel()))

    def payload_bits(self, n, m):
        return n * m + FLOAT_BITS

    def compress_cost(self, n, m):
        return 2 * n * m


class SignumCompressor(GatherCompressor):
    """Majority vote over per-worker signs; runs without error feedback on
    locally momentum-accumulated gradients."""

    name = "signum"
    uses_error_feedback = False

    def compress(self, m, ctx):
        return SignsOnly(m.shape, _sign_pm1(m.ravel()))

    def payload_bits(self, n, m):
        return n * m

    def compress_cost(self, n, m):
        return n * m

    def _combine(self, denses):
        votes = tree_reduce(denses, lambda a, b: a + b)
        return np.where(votes >= 0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# spectral importance sampling

def water_filling_probabilities(sigma, r):
    """Inclusion probabilities p_i = min(1, lam * sigma_i) with sum = r.

    lam is found by bisection. Zero singular values get probability zero;
    if fewer than r are positive, every positive one gets probability 1.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if r < 1:
        raise ContractViolation(f"r must be >= 1, got {r}")
    positive = sigma > 0
    k = int(np.count_nonzero(positive))
    if k <= r:
        return positive.astype(np.float64)

    def mass(lam):
        return float(np.sum(np.minimum(1.0, lam * sigma[positive])))

    lo, hi = 0.0, 1.0 / float(np.max(sigma))
    while mass(hi) < r:
        hi *= 2.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if mass(mid) < r:
            lo = mid
        else:
            hi = mid
    return np.minimum(1.0, hi * sigma) * positive


class AtomoCompressor(GatherCompressor):
    """Unbiased spectral sparsification: decompose, keep each singular
    triple i with probability p_i (resampling the whole set until exactly
    r survive), and rescale kept triples by 1/p_i.

    Workers hold different matrices, so the factor payloads are gathered
    and the decompressed terms are summed, following the scheme's own
    aggregation rule. Runs without error feedback.
    """

    name = "atomo"
    uses_error_feedback = False

    def _decompose(self, m):
        return linalg.spectral_decomposition(m)

    def _probabilities(self, sigma):
        return water_filling_probabilities(sigma, min(self.rank, sigma.size))

    def _sample(self, u, sigma, v, p, ctx):
        r = min(self.rank, sigma.size)
        target = min(r, int(np.count_nonzero(p > 0)))
        rng = ctx.rng("atomo_sampling")
        while True:
            mask = rng.random(p.size) < p
            if int(mask.sum()) == target:
                break
        chosen = np.flatnonzero(mask)
        n, cols = u.shape[0], v.shape[0]
        u_out = np.zeros((n, r))
        v_out = np.zeros((cols, r))
        for j, i in enumerate(chosen):
            u_out[:, j] = u[:, i] * (sigma[i] / p[i])
            v_out[:, j] = v[:, i]
        return AtomoFactors(u_out, v_out)

    def compress(self, m, ctx):
        u, sigma, v = self._decompose(m)
        return self._sample(u, sigma, v, self._probabilities(sigma), ctx)

    def payload_bits(self, n, m):
        return FLOAT_BITS * min(self.rank, min(n, m)) * (n + m)

    def compress_cost(self, n, m):
        # documented floor: forming the Gram matrix plus one sweep of the
        # full-rank spectral iteration; the converged cost is higher
        p = min(n, m)
        return 2 * n * m * m + 2 * m * m * p + 2 * m * p * p

    def _combine(self, denses):
        return tree_reduce(denses, lambda a, b: a + b)


# ---------------------------------------------------------------------------
# registry

COMPRESSORS = {
    cls.name: cls
    for cls in (
        IdentityCompressor,
        PowerSGD,
        BestApproximation,
        UnbiasedRankK,
        RandomKCompressor,
        RandomBlockCompressor,
        TopKCompressor,
        SignNormCompressor,
        SignumCompressor,
        AtomoCompressor,
    )
}

for _cls in COMPRESSORS.values():
    # a scheme is averaged by all-reduce exactly when it is linear
    assert _cls.linear == (_cls.route == "allreduce"), _cls.name


def make_compressor(name, rank=1):
    if name not in COMPRESSORS:
        raise ContractViolation(
            f"unknown compressor {name!r}; choose from {sorted(COMPRESSORS)}")
    return COMPRESSORS[name](rank=rank)
