import numpy as np
import pytest

from gradcomp.comm import CommStats, Communicator, tree_reduce


def test_mean_of_four_scalars():
    comm = Communicator(4)
    arrays = [np.array([v]) for v in (1.0, 2.0, 3.0, 4.0)]
    out = comm.all_reduce_mean(arrays)
    assert out[0] == 2.5
    assert comm.stats.bits_allreduced == 32


def test_single_worker_is_a_free_copy():
    comm = Communicator(1)
    a = np.arange(6.0).reshape(2, 3)
    out = comm.all_reduce_mean([a])
    assert np.array_equal(out, a)
    out[0, 0] = 99.0
    assert a[0, 0] == 0.0
    assert comm.stats.bits_transmitted == 0


def test_reduction_order_is_a_fixed_binary_tree():
    # values chosen so the left-fold sum rounds differently than the tree
    rng = np.random.default_rng(42)
    values = [rng.standard_normal(32) * (10.0 ** rng.integers(-8, 8))
              for _ in range(8)]
    comm = Communicator(8)
    got = comm.all_reduce_mean([v.copy() for v in values])
    t01 = values[0] + values[1]
    t23 = values[2] + values[3]
    t45 = values[4] + values[5]
    t67 = values[6] + values[7]
    want = (((t01 + t23) + (t45 + t67))) / 8.0
    assert np.array_equal(got, want)


def test_tree_reduce_carries_odd_element():
    assert tree_reduce([1, 2, 3], lambda a, b: (a, b)) == ((1, 2), 3)
    assert tree_reduce([1, 2, 3, 4, 5], lambda a, b: (a, b)) == (((1, 2), (3, 4)), 5)
    assert tree_reduce([7], lambda a, b: (a, b)) == 7
    with pytest.raises(ValueError):
        tree_reduce([], lambda a, b: a)


def test_allreduce_charges_payload_once():
    comm = Communicator(16)
    arrays = [np.zeros(10) for _ in range(16)]
    comm.all_reduce_mean(arrays)
    assert comm.stats.bits_allreduced == 320  # 10 floats at 32 bits, once
    comm.all_reduce_mean(arrays, payload_bits=100)
    assert comm.stats.bits_allreduced == 420


def test_gather_charges_world_size_times_payload():
    for world in (1, 2, 4, 8):
        comm = Communicator(world)
        payloads = [object()] * world
        out = comm.all_gather(payloads, payload_bits=50)
        assert out == payloads
        assert comm.stats.bits_gathered == world * 50


def test_world_size_validation():
    with pytest.raises(ValueError):
        Communicator(0)
    comm = Communicator(3)
    with pytest.raises(ValueError):
        comm.all_reduce_mean([np.zeros(1)] * 2)


def test_stats_snapshot_and_since():
    comm = Communicator(4)
    comm.all_reduce_mean([np.zeros(8)] * 4)
    mark = comm.stats.snapshot()
    comm.all_reduce_mean([np.zeros(8)] * 4)
    comm.all_gather([None] * 4, payload_bits=10)
    delta = comm.stats.since(mark)
    assert delta.bits_allreduced == 256
    assert delta.bits_gathered == 40
    assert delta.bits_transmitted == 296
    # the snapshot itself is frozen
    assert mark.bits_allreduced == 256
    assert comm.stats.bits_transmitted == 552
