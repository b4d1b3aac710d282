import numpy as np
import pytest

from gradcomp.catalogs import ParamSpec
from gradcomp.comm import Communicator
from gradcomp.compressors import make_compressor
from gradcomp.optimizer import (NonFiniteGradient, OptimizerState, WorkerState,
                                reference_momentum_step, step,
                                step_plain_momentum)
from gradcomp.seeding import derive_rng

SPECS = [ParamSpec("weight", (6, 5)), ParamSpec("bias", (6,))]


def fresh_opt(lr=0.05, momentum=0.9, seed=700):
    rng = derive_rng(seed, "init")
    params = [rng.standard_normal(s.shape) for s in SPECS]
    return OptimizerState.init(params, lr, momentum)


def grad_batch(world, step_idx, seed=701):
    rng = derive_rng(seed, "grads", step_idx)
    return [[rng.standard_normal(s.shape) for s in SPECS] for _ in range(world)]


def test_identity_compressor_reduces_to_reference_momentum():
    world = 4
    opt = fresh_opt()
    ref = fresh_opt()
    workers = [WorkerState(w) for w in range(world)]
    comm = Communicator(world)
    comp = make_compressor("none")
    for t in range(60):
        grads = grad_batch(world, t)
        step(opt, workers, grads, SPECS, comp, comm, shared_seed=1)
        means = [comm.all_reduce_mean([grads[w][i] for w in range(world)])
                 for i in range(len(SPECS))]
        reference_momentum_step(ref, means)
        for a, b in zip(opt.params, ref.params):
            assert np.array_equal(a, b)
    # nothing was lost, so the error memories stayed exactly zero
    for w in workers:
        assert float(np.max(np.abs(w.error[0]))) == 0.0


def test_zero_gradients_decay_momentum_geometrically():
    opt = fresh_opt(momentum=0.5)
    workers = [WorkerState(0)]
    comm = Communicator(1)
    comp = make_compressor("none")
    grads = grad_batch(1, 0)
    step(opt, workers, grads, SPECS, comp, comm, shared_seed=1)
    buf_after_one = [b.copy() for b in opt.momentum_buffers]
    params_after_one = [p.copy() for p in opt.params]
    zeros = [[np.zeros(s.shape) for s in SPECS]]
    for t in range(3):
        step(opt, workers, zeros, SPECS, comp, comm, shared_seed=1)
    for i in range(len(SPECS)):
        want_buf = buf_after_one[i] * 0.5 ** 3
        assert np.max(np.abs(opt.momentum_buffers[i] - want_buf)) <= 1e-15
        drift = opt.lr * buf_after_one[i] * (0.5 + 0.25 + 0.125) * 2
        assert np.max(np.abs(opt.params[i] - params_after_one[i])) <= \
            np.max(np.abs(drift)) + 1e-12


def test_error_feedback_identity_holds_in_debug_mode():
    # debug re-derives e_w from first principles every step and asserts
    for name in ("powersgd", "randomk", "topk", "signnorm"):
        opt = fresh_opt()
        workers = [WorkerState(w) for w in range(2)]
        comm = Communicator(2)
        comp = make_compressor(name, rank=1)
        for t in range(5):
            step(opt, workers, grad_batch(2, t, seed=702), SPECS, comp, comm,
                 shared_seed=9, debug=True)
        assert float(np.max(np.abs(workers[0].error[0]))) > 0.0, name


def test_error_memory_is_what_compression_lost():
    opt = fresh_opt()
    workers = [WorkerState(0)]
    comm = Communicator(1)
    comp = make_compressor("topk", rank=1)
    grads = grad_batch(1, 0, seed=703)
    step(opt, workers, grads, SPECS, comp, comm, shared_seed=4)
    err = workers[0].error[0]
    g = grads[0][0]
    #11 of 30 entries kept: the error holds exactly the dropped ones
    assert int(np.count_nonzero(err)) == 30 - 11
    kept = err == 0
    assert np.array_equal(np.where(kept, 0.0, g), err)


def test_biases_bypass_compression():
    world = 3
    opt = fresh_opt()
    workers = [WorkerState(w) for w in range(world)]
    comm = Communicator(world)
    comp = make_compressor("powersgd", rank=2)
    grads = grad_batch(world, 0, seed=704)
    mark = comm.stats.snapshot()
    step(opt, workers, grads, SPECS, comp, comm, shared_seed=2)
    delta = comm.stats.since(mark)
    matrix_bits = comp.payload_bits(6, 5)
    bias_bits = 32 * 6
    assert delta.bits_allreduced == matrix_bits + bias_bits
    # decode happens once, for the matrix payload only
    assert delta.decode_ops == 2 * 6 * 5 * 2
    # no error memory is ever created for the bias parameter
    assert 1 not in workers[0].error


def test_momentum_is_shared_state_not_per_worker():
    opt = fresh_opt()
    assert len(opt.momentum_buffers) == len(SPECS)
    workers = [WorkerState(w) for w in range(4)]
    step(opt, workers, grad_batch(4, 0), SPECS, make_compressor("none"),
         Communicator(4), shared_seed=1)
    assert opt.step_count == 1


def test_signum_single_worker_matches_scalar_oracle():
    spec = [ParamSpec("w", (1, 1))]
    opt = OptimizerState.init([np.array([[0.3]])], lr=0.01, momentum=0.9)
    workers = [WorkerState(0)]
    comm = Communicator(1)
    comp = make_compressor("signum")
    rng = derive_rng(705, "signum_grads")
    x, m = 0.3, 0.0
    for t in range(50):
        g = float(rng.standard_normal())
        step_plain_momentum(opt, workers, [[np.array([[g]])]], spec, comp,
                            comm, shared_seed=3)
        m = 0.9 * m + g
        x -= 0.01 * (1.0 if m >= 0 else -1.0)
        assert abs(float(opt.params[0][0, 0]) - x) <= 1e-15


def test_plain_momentum_with_identity_matches_reference():
    world = 2
    opt = fresh_opt(momentum=0.8)
    ref = fresh_opt(momentum=0.8)
    workers = [WorkerState(w) for w in range(world)]
    comm = Communicator(world)
    comp = make_compressor("none")
    buffers = [np.zeros(s.shape) for s in SPECS]
    for t in range(40):
        grads = grad_batch(world, t, seed=706)
        step_plain_momentum(opt, workers, grads, SPECS, comp, comm, shared_seed=5)
        # oracle: average the per-worker momentum accumulators explicitly
        for i in range(len(SPECS)):
            mean_g = comm.all_reduce_mean([grads[w][i] for w in range(world)])
            buffers[i] = 0.8 * buffers[i] + mean_g
            ref.params[i] -= ref.lr * buffers[i]
        for a, b in zip(opt.params, ref.params):
            assert np.max(np.abs(a - b)) <= 1e-12


def test_all_positive_gradients_saturate_signum():
    spec = [ParamSpec("w", (2, 3))]
    opt = OptimizerState.init([np.zeros((2, 3))], lr=0.1, momentum=0.9)
    workers = [WorkerState(w) for w in range(3)]
    comm = Communicator(3)
    comp = make_compressor("signum")
    ones = np.ones((2, 3))
    expected = np.zeros((2, 3))
    for t in range(4):
        grads = [[np.abs(derive_rng(707, "pos", t, w).standard_normal((2, 3)))]
                 for w in range(3)]
        step_plain_momentum(opt, workers, grads, spec, comp, comm, shared_seed=6)
        expected -= 0.1 * ones
        assert np.array_equal(opt.params[0], expected)


def test_non_finite_gradient_names_parameter_and_worker():
    opt = fresh_opt()
    workers = [WorkerState(w) for w in range(2)]
    grads = grad_batch(2, 0)
    grads[1][0][2, 2] = np.nan
    with pytest.raises(NonFiniteGradient) as excinfo:
        step(opt, workers, grads, SPECS, make_compressor("none"),
             Communicator(2), shared_seed=1)
    assert "weight" in str(excinfo.value)
    assert "worker 1" in str(excinfo.value)
    assert excinfo.value.param_name == "weight"
    assert excinfo.value.worker == 1


def test_error_feedback_off_keeps_memories_empty():
    opt = fresh_opt()
    workers = [WorkerState(0)]
    comp = make_compressor("powersgd", rank=1)
    for t in range(5):
        step(opt, workers, grad_batch(1, t), SPECS, comp, Communicator(1),
             shared_seed=8, error_feedback=False)
    assert workers[0].error == {}
