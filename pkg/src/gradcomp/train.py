"""Deterministic multi-worker training runs and their run records.

A run is a pure function of its configuration: same config, same platform,
same bytes out. Worker gradient evaluation may be spread over threads; the
results are consumed in worker order, so threading cannot change a single
bit of the trajectory.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .comm import Communicator
from .compressors import make_compressor
from .linalg import ContractViolation
from .optimizer import (NonFiniteGradient, OptimizerState, WorkerState, step,
                        step_plain_momentum)
from .problems import make_problem

CSV_SCHEMA = "gradcomp.train.v1"


@dataclass
class RunConfig:
    task: str = "least-squares"
    compressor: str = "powersgd"
    rank: int = 2
    workers: int = 4
    steps: int = 200
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    threads: int = 1

    def validate(self):
        if self.task not in ("least-squares", "mlp"):
            raise ContractViolation(
                f"task {self.task!r} is not trainable (least-squares | mlp)")
        for name, value in (("rank", self.rank), ("workers", self.workers),
                            ("steps", self.steps), ("threads", self.threads)):
            if value < 1:
                raise ContractViolation(f"{name} must be >= 1, got {value}")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractViolation(f"momentum must be in [0, 1), got {self.momentum}")
        if self.lr <= 0:
            raise ContractViolation(f"lr must be positive, got {self.lr}")


@dataclass
class TrainRecord:
    step: int
    loss: float
    bits_cumulative: int
    decode_ops_cumulative: int


@dataclass
class TrainResult:
    config: RunConfig
    records: list = field(default_factory=list)
    final_params: list = field(default_factory=list)
    diverged: bool = False
    divergence_reason: str = ""

    @property
    def final_loss(self):
        return self.records[-1].loss


def _worker_grads(problem, params, world, pool):
    jobs = [(params, w, world) for w in range(world)]
    if pool is None:
        return [problem.worker_gradients(*j) for j in jobs]
    return list(pool.map(lambda j: problem.worker_gradients(*j), jobs))


def run_training(config, problem=None, use_error_feedback=None):
    """Run one configuration to completion (or divergence).

    `use_error_feedback` overrides the compressor's own preference; the
    error-necessity check uses it to run the same scheme both ways.
    """
    config.validate()
    if problem is None:
        problem = make_problem(config.task, config.seed)
    compressor = make_compressor(config.compressor, config.rank)
    plain_mode = not compressor.uses_error_feedback
    if use_error_feedback is None:
        use_error_feedback = compressor.uses_error_feedback
    comm = Communicator(config.workers)
    params = problem.init_params()
    opt = OptimizerState.init(params, config.lr, config.momentum)
    workers = [WorkerState(w) for w in range(config.workers)]
    result = TrainResult(config)

    def record():
        result.records.append(TrainRecord(
            step=opt.step_count,
            loss=problem.loss(opt.params),
            bits_cumulative=comm.stats.bits_transmitted,
            decode_ops_cumulative=comm.stats.decode_ops,
        ))

    record()
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    # divergence is detected by the finiteness checks, not by warnings
    with np.errstate(over="ignore", invalid="ignore"):
        _run_loop(config, problem, compressor, comm, opt, workers, result,
                  record, pool, plain_mode, use_error_feedback)
    result.final_params = [p.copy() for p in opt.params]
    return result


def _run_loop(config, problem, compressor, comm, opt, workers, result,
              record, pool, plain_mode, use_error_feedback):
    try:
        for _ in range(config.steps):
            grads = _worker_grads(problem, opt.params, config.workers, pool)
            try:
                if plain_mode:
                    step_plain_momentum(opt, workers, grads, problem.specs,
                                        compressor, comm, config.seed)
                else:
                    step(opt, workers, grads, problem.specs, compressor,
                         comm, config.seed, error_feedback=use_error_feedback)
            except NonFiniteGradient as exc:
                result.diverged = True
                result.divergence_reason = str(exc)
                break
            record()
            if not np.isfinite(result.records[-1].loss):
                result.diverged = True
                result.divergence_reason = (
                    f"loss became non-finite at step {opt.step_count}")
                break
    finally:
        if pool is not None:
            pool.shutdown()


def format_float(x):
    """Shortest round-trip decimal; the byte-stable float encoding."""
    return repr(float(x))


def result_to_csv(result):
    lines = [f"# schema={CSV_SCHEMA}",
             "step,loss,bits_cumulative,decode_ops_cumulative"]
    for r in result.records:
        lines.append(
            f"{r.step},{format_float(r.loss)},{r.bits_cumulative},{r.decode_ops_cumulative}")
    return "\n".join(lines) + "\n"


def result_to_json(result):
    import json
    payload = {
        "schema": CSV_SCHEMA,
        "diverged": result.diverged,
        "divergence_reason": result.divergence_reason,
        "records": [
            {
                "step": r.step,
                "loss": r.loss,
                "bits_cumulative": r.bits_cumulative,
                "decode_ops_cumulative": r.decode_ops_cumulative,
            }
            for r in result.records
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
