"""In-process stand-in for a W-worker collective communication layer.

Reductions use a fixed binary tree over worker indices, so results are a
deterministic function of W alone (no dependence on thread count or
scheduling), and every transmitted payload is metered.

Accounting conventions (used consistently by the whole package):
  * all_reduce_mean charges the logical payload once per step, matching
    how per-epoch traffic tables scale; with a single worker nothing is
    transmitted and nothing is charged.
  * all_gather charges W times the per-worker payload: every worker ends
    up holding all W payloads.
  * decode_ops meters payload-to-dense materialization at the aggregation
    site only (per-worker bookkeeping work is local and lands in
    compress_flops instead). This is what makes the decode cost of
    reduce-style compressors flat in W while gather-style ones grow
    linearly.
"""

from dataclasses import dataclass, field


@dataclass
class CommStats:
    """Cumulative communication and decode counters for one run."""

    bits_allreduced: int = 0
    bits_gathered: int = 0
    decode_ops: int = 0
    compress_flops: int = 0
    _step_marks: dict = field(default_factory=dict, repr=False)

    @property
    def bits_transmitted(self):
        return self.bits_allreduced + self.bits_gathered

    def snapshot(self):
        return CommStats(self.bits_allreduced, self.bits_gathered,
                         self.decode_ops, self.compress_flops)

    def since(self, earlier):
        """Counter deltas relative to an earlier snapshot."""
        return CommStats(
            self.bits_allreduced - earlier.bits_allreduced,
            self.bits_gathered - earlier.bits_gathered,
            self.decode_ops - earlier.decode_ops,
            self.compress_flops - earlier.compress_flops,
        )


def tree_reduce(values, combine):
    """Fold a list pairwise, level by level: ((v0+v1)+(v2+v3))+...

    The pairing depends only on len(values); an odd element is carried to
    the next level unchanged.
    """
    items = list(values)
    if not items:
        raise ValueError("tree_reduce needs at least one value")
    while len(items) > 1:
        nxt = []
        for i in range(0, len(items) - 1, 2):
            nxt.append(combine(items[i], items[i + 1]))
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


class Communicator:
    """Simulated collectives over `world_size` workers."""

    def __init__(self, world_size, stats=None):
        if world_size < 1:
            raise ValueError(f"world_size must be >= 1, got {world_size}")
        self.world_size = world_size
        self.stats = stats if stats is not None else CommStats()

    def _check(self, per_worker):
        if len(per_worker) != self.world_size:
            raise ValueError(
                f"expected {self.world_size} entries, got {len(per_worker)}")

    def all_reduce_mean(self, arrays, payload_bits=None):
        """Tree-ordered elementwise mean of one array per worker.

        Each worker logically transmits `payload_bits` (default: 32 bits
        per scalar); the reduced payload is charged once. world_size 1 is
        an identity with zero transmitted bits.
        """
        self._check(arrays)
        if self.world_size == 1:
            return arrays[0].copy()
        if payload_bits is None:
            payload_bits = 32 * arrays[0].size
        self.stats.bits_allreduced += payload_bits
        total = tree_reduce(arrays, lambda a, b: a + b)
        return total / self.world_size

    def all_gather(self, payloads, payload_bits):
        """Every worker receives the full list of per-worker payloads."""
        self._check(payloads)
        self.stats.bits_gathered += self.world_size * payload_bits
        return list(payloads)
