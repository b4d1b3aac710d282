"""Distributed SGD with compressed gradients and error feedback.

The main step implements, per matrix parameter and in this order: add the
local error memory to the local gradient, compress, store what compression
lost back into the error memory, aggregate across workers, decompress,
then fold the shared update into the momentum and apply it:

    delta_w = g_w + e_w
    e_w     = delta_w - decompress(compress(delta_w))
    delta'  = decompress(aggregate(...))
    m       = momentum * m + delta'
    x       = x - lr * (delta' + m)

Momentum is a pure function of aggregated quantities, so it is held once
and is identical on every worker by construction. Bias parameters never
meet a compressor: they are all-reduced raw and follow the same momentum
rule.

Schemes that decline error feedback (sign voting, spectral sampling) use
the plain-momentum step instead: each worker accumulates momentum locally,
compresses the accumulator, and the aggregate is applied directly.
"""

from dataclasses import dataclass, field

import numpy as np

from .compressors import CompressionContext


class NonFiniteGradient(RuntimeError):
    """Raised when a worker produces a NaN/inf gradient; names the site."""

    def __init__(self, param_name, worker):
        super().__init__(
            f"non-finite gradient for parameter {param_name!r} on worker {worker}")
        self.param_name = param_name
        self.worker = worker


@dataclass
class OptimizerState:
    """Replicated model state: parameters, momentum, and the two knobs."""

    params: list
    momentum_buffers: list
    lr: float
    momentum: float
    step_count: int = 0

    @classmethod
    def init(cls, params, lr, momentum):
        buffers = [np.zeros_like(p) for p in params]
        return cls(list(params), buffers, lr, momentum)


@dataclass
class WorkerState:
    """Per-worker memories: EF error per matrix parameter, and the local
    momentum accumulator used only by the plain-momentum mode."""

    index: int
    error: dict = field(default_factory=dict)
    local_momentum: list = None

    def error_for(self, param_index, shape):
        if param_index not in self.error:
            self.error[param_index] = np.zeros(shape)
        return self.error[param_index]


def _check_finite(grads_per_worker, specs):
    for worker, grads in enumerate(grads_per_worker):
        for spec, g in zip(specs, grads):
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(spec.name, worker)


def _debug_check_error(err, delta, trip, compressor, ctx):
    """Re-derive the error memory from first principles.

    Separable schemes are deterministic given the context, so compressing
    again must reproduce the local decompression bitwise. The fused
    low-rank scheme instead satisfies a projection identity: the error is
    orthogonal to the shared basis.
    """
    from .compressors import LowRank, PowerSGD, BestApproximation, decompress
    assert np.all(np.isfinite(err))
    if isinstance(compressor, (PowerSGD, BestApproximation)):
        scale = float(np.max(np.abs(delta))) + 1.0
        residual = trip.payload.p.T @ err
        assert float(np.max(np.abs(residual))) <= 1e-8 * scale
    else:
        redone = decompress(compressor.compress(delta, ctx))
        np.testing.assert_array_equal(err, delta - redone)


def step(opt, workers, grads_per_worker, specs, compressor, comm,
         shared_seed, error_feedback=True, debug=False):
    """One error-feedback step across all workers. Mutates opt and workers.

    With error_feedback=False the error memories stay at zero and the raw
    gradients are compressed; everything else (aggregation, momentum,
    update order) is unchanged. That is the ablation the necessity check
    runs.
    """
    _check_finite(grads_per_worker, specs)
    step_index = opt.step_count
    world = len(workers)
    for i, spec in enumerate(specs):
        if spec.is_bias:
            update = comm.all_reduce_mean(
                [grads_per_worker[w][i] for w in range(world)])
        else:
            shape = spec.matrix_shape
            deltas = []
            for w in range(world):
                g = grads_per_worker[w][i].reshape(shape)
                if error_feedback:
                    g = g + workers[w].error_for(i, shape)
                deltas.append(g)
            ctx = CompressionContext(shared_seed, i, step_index)
            trip = compressor.round_trip(deltas, ctx, comm)
            if error_feedback:
                for w in range(world):
                    err = deltas[w] - trip.locals[w]
                    workers[w].error[i] = err
                    if debug:
                        _debug_check_error(err, deltas[w], trip, compressor, ctx)
            update = trip.aggregated.reshape(spec.shape)
        buf = opt.momentum_buffers[i]
        buf *= opt.momentum
        buf += update
        opt.params[i] -= opt.lr * (update + buf)
    opt.step_count += 1


def step_plain_momentum(opt, workers, grads_per_worker, specs, compressor,
                        comm, shared_seed):
    """Compressed SGD without error feedback (sign voting, spectral
    sampling): momentum is accumulated per worker before compression and
    the aggregate is applied as-is."""
    _check_finite(grads_per_worker, specs)
    step_index = opt.step_count
    world = len(workers)
    for w in range(world):
        if workers[w].local_momentum is None:
            workers[w].local_momentum = [np.zeros(s.shape) for s in specs]
        for i in range(len(specs)):
            buf = workers[w].local_momentum[i]
            buf *= opt.momentum
            buf += grads_per_worker[w][i]
    for i, spec in enumerate(specs):
        accumulators = [workers[w].local_momentum[i] for w in range(world)]
        if spec.is_bias:
            update = comm.all_reduce_mean(accumulators)
        else:
            ctx = CompressionContext(shared_seed, i, step_index)
            views = [a.reshape(spec.matrix_shape) for a in accumulators]
            trip = compressor.round_trip(views, ctx, comm)
            update = trip.aggregated.reshape(spec.shape)
        opt.params[i] -= opt.lr * update
    opt.step_count += 1


def reference_momentum_step(opt, mean_grads):
    """Uncompressed heavy-ball baseline on an already-averaged gradient:
    m = momentum * m + g; x = x - lr * (g + m)."""
    for i, g in enumerate(mean_grads):
        buf = opt.momentum_buffers[i]
        buf *= opt.momentum
        buf += g
        opt.params[i] -= opt.lr * (g + buf)
    opt.step_count += 1
